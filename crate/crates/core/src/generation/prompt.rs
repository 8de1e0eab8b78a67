//! Multi-candidate prompt construction.

use serde::{Deserialize, Serialize};

use crate::archive::Program;

/// User-prompt template with `{name}` placeholders.
pub const VS_TEMPLATE: &str = include_str!("../../templates/vs_user_prompt.txt");

/// System message sent ahead of every prompt by chat backends.
pub const SYSTEM_PROMPT: &str =
    "You are an expert software developer tasked with iteratively improving a codebase.";

const PARENT_HEADER: &str = "# Current Program\n";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VsPrompt {
    pub task_description: String,
    pub parent_body: String,
    pub parent_score: Option<f64>,
    /// Inspiration bodies with their scores.
    pub inspirations: Vec<(String, Option<f64>)>,
    pub k_candidates: usize,
    pub feature_dimensions: Vec<String>,
}

fn fmt_score(score: Option<f64>) -> String {
    score.map_or_else(|| "unknown".to_string(), |s| s.to_string())
}

/// Substitutes `{name}` placeholders in a single left-to-right pass, so text
/// inserted for one placeholder is never rescanned.
pub fn render_template(template: &str, lookup: impl Fn(&str) -> Option<String>) -> String {
    let mut out = String::with_capacity(template.len());
    let mut rest = template;
    while let Some(open) = rest.find('{') {
        out.push_str(&rest[..open]);
        let after = &rest[open + 1..];
        let name_end = after
            .find(|c: char| !(c.is_ascii_alphanumeric() || c == '_'))
            .unwrap_or(after.len());
        match (
            after[name_end..].starts_with('}'),
            lookup(&after[..name_end]),
        ) {
            (true, Some(value)) if name_end > 0 => {
                out.push_str(&value);
                rest = &after[name_end + 1..];
            }
            _ => {
                out.push('{');
                rest = after;
            }
        }
    }
    out.push_str(rest);
    out
}

impl VsPrompt {
    fn inspiration_section(&self) -> String {
        if self.inspirations.is_empty() {
            return String::new();
        }
        let mut s = String::from("\n# Inspiration Programs\n");
        for (i, (body, score)) in self.inspirations.iter().enumerate() {
            s.push_str(&format!(
                "\n## Inspiration {} (score: {})\n```\n{}\n```\n",
                i + 1,
                fmt_score(*score),
                body
            ));
        }
        s
    }

    pub fn render(&self) -> String {
        let inspirations = self.inspiration_section();
        render_template(VS_TEMPLATE, |name| match name {
            "task_description" => Some(self.task_description.clone()),
            "parent" => Some(self.parent_body.clone()),
            "parent_score" => Some(fmt_score(self.parent_score)),
            "inspirations" => Some(inspirations.clone()),
            "k_candidates" => Some(self.k_candidates.to_string()),
            "feature_dimensions" => Some(self.feature_dimensions.join(", ")),
            _ => None,
        })
    }
}

/// Renders the multi-candidate prompt for one round. `k = 1` still asks for
/// the list envelope so every response takes the same parse path.
pub fn build_vs_prompt(
    parent: &Program,
    inspirations: &[Program],
    k: usize,
    task_description: &str,
    feature_dimensions: &[String],
) -> String {
    VsPrompt {
        task_description: task_description.to_string(),
        parent_body: parent.body.clone(),
        parent_score: parent.score,
        inspirations: inspirations
            .iter()
            .map(|p| (p.body.clone(), p.score))
            .collect(),
        k_candidates: k,
        feature_dimensions: feature_dimensions.to_vec(),
    }
    .render()
}

/// Recovers the parent body from a rendered prompt.
pub fn extract_parent(prompt: &str) -> Option<&str> {
    let after_header = &prompt[prompt.find(PARENT_HEADER)? + PARENT_HEADER.len()..];
    let open = after_header.find("```\n")? + 4;
    let body = &after_header[open..];
    let close = body.find("\n```")?;
    Some(&body[..close])
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::archive::{Origin, ProgramId};

    fn program(body: &str, score: f64) -> Program {
        Program::new(ProgramId::new(body), body, 0, Origin::Generated)
            .with_evaluation(score, vec![0.0])
    }

    fn features() -> Vec<String> {
        vec!["mean_radius".into(), "radius_std".into()]
    }

    #[test]
    fn prompt_carries_contract_text() {
        let parent = program("PARENT_BODY", 1.5);
        let insp = vec![program("INSP_ONE", 2.25), program("INSP_TWO", 0.5)];
        let p = build_vs_prompt(&parent, &insp, 3, "Pack circles.", &features());
        assert!(p.starts_with("Pack circles."));
        assert!(p.contains("Generate 3 candidate rewritten programs."));
        assert!(p.contains("must sum to 1.0 (+/- 1e-3)"));
        assert!(p.contains("Do NOT wrap with any code fence"));
        assert!(p.contains("Return ONLY the JSON object"));
        assert!(p.contains("these dimensions: mean_radius, radius_std"));
        assert!(p.contains("PARENT_BODY"));
        assert!(p.contains("## Inspiration 1 (score: 2.25)\n```\nINSP_ONE"));
        assert!(p.contains("INSP_TWO"));
        assert!(!p.contains("{k_candidates}"));
        assert_eq!(extract_parent(&p), Some("PARENT_BODY"));
    }

    #[test]
    fn single_candidate_keeps_envelope() {
        let p = build_vs_prompt(&program("x", 1.0), &[], 1, "", &features());
        assert!(p.contains("Generate 1 candidate rewritten programs."));
        assert!(p.contains("\"responses\" (list of dicts)"));
        assert!(p.contains("across the 1 responses"));
    }

    #[test]
    fn empty_inspirations_omit_section() {
        let p = build_vs_prompt(&program("x", 1.0), &[], 5, "", &features());
        assert!(!p.contains("Inspiration"));
    }

    #[test]
    fn placeholders_inside_bodies_are_not_expanded() {
        let parent = program("uses {k_candidates} and {parent} literally", 1.0);
        let p = build_vs_prompt(&parent, &[], 7, "", &features());
        assert!(p.contains("uses {k_candidates} and {parent} literally"));
        assert_eq!(
            extract_parent(&p),
            Some("uses {k_candidates} and {parent} literally")
        );
    }

    #[test]
    fn template_renderer_leaves_unknown_braces() {
        let out = render_template("{a} {b} {} {a", |n| (n == "a").then(|| "A".to_string()));
        assert_eq!(out, "A {b} {} {a");
    }
}
