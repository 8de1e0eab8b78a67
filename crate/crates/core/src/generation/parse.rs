//! Parsing of multi-candidate responses.
//!
//! A response is a JSON object whose `"responses"` list holds entries with a
//! `"code"` string and a numeric `"probability"`. Stated probabilities are
//! recorded but never influence which candidates are kept.

use serde::{Deserialize, Serialize};
use serde_json::Value;
use thiserror::Error;

/// Allowed deviation of the stated probability sum from 1.
pub const PROBABILITY_SUM_TOLERANCE: f64 = 1e-3;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VsCandidate {
    /// 1-based position in the kept list.
    pub rank: usize,
    pub body: String,
    pub stated_probability: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum ParseWarning {
    /// Kept probabilities sum to something other than 1 beyond tolerance.
    ProbabilitySum { sum: f64 },
    /// More well-formed entries were returned than requested.
    Truncated { returned: usize, kept: usize },
    /// Entries without a non-empty `code` string or a numeric `probability`.
    MalformedEntries { count: usize },
    /// A stated probability outside `[0, 1]` was clamped.
    ProbabilityClamped { rank: usize, stated: f64 },
    /// The code was wrapped in a fence, which was removed.
    FenceStripped { rank: usize },
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ParseFailure {
    #[error("response contains no JSON object: {0}")]
    NotJson(String),
    #[error("response object has no \"responses\" key")]
    MissingResponses,
    #[error("\"responses\" is not a list")]
    NotAList,
    #[error("no well-formed candidates among {entries} entries")]
    NoCandidates { entries: usize },
}

#[derive(Debug, Clone, PartialEq)]
pub struct ParsedResponse {
    pub candidates: Vec<VsCandidate>,
    pub warnings: Vec<ParseWarning>,
}

fn is_fence(line: &str) -> bool {
    line.trim_start().starts_with("```")
}

/// Removes a leading and a trailing code-fence line, if present.
pub fn strip_code_fences(code: &str) -> String {
    let trimmed = code.trim_matches(|c| c == '\n' || c == '\r');
    let mut lines: Vec<&str> = trimmed.lines().collect();
    if lines.first().is_some_and(|l| is_fence(l)) {
        lines.remove(0);
    }
    if lines.last().is_some_and(|l| l.trim() == "```") {
        lines.pop();
    }
    lines.join("\n")
}

fn locate_object(text: &str) -> Result<Value, ParseFailure> {
    let unfenced = strip_code_fences(text.trim());
    if let Ok(v @ Value::Object(_)) = serde_json::from_str::<Value>(unfenced.trim()) {
        return Ok(v);
    }
    let (start, end) = match (text.find('{'), text.rfind('}')) {
        (Some(s), Some(e)) if s < e => (s, e),
        _ => return Err(ParseFailure::NotJson(preview(text))),
    };
    match serde_json::from_str::<Value>(&text[start..=end]) {
        Ok(v @ Value::Object(_)) => Ok(v),
        Ok(_) => Err(ParseFailure::NotJson(preview(text))),
        Err(e) => Err(ParseFailure::NotJson(format!("{e}; {}", preview(text)))),
    }
}

fn preview(text: &str) -> String {
    text.chars().take(120).collect()
}

/// Extracts up to `k` candidates from a raw response.
///
/// Well-formed entries are kept in their returned order and truncated to the
/// first `k`. Fenced code is unwrapped. A probability sum off by more than
/// [`PROBABILITY_SUM_TOLERANCE`] only produces a warning.
pub fn parse_vs_response(text: &str, k: usize) -> Result<ParsedResponse, ParseFailure> {
    let object = locate_object(text)?;
    let entries = match object.get("responses") {
        None => return Err(ParseFailure::MissingResponses),
        Some(Value::Array(a)) => a,
        Some(_) => return Err(ParseFailure::NotAList),
    };

    let mut warnings = Vec::new();
    let mut well_formed = Vec::new();
    let mut malformed = 0;
    for entry in entries {
        let code = entry.get("code").and_then(Value::as_str);
        let prob = entry.get("probability").and_then(Value::as_f64);
        match (code, prob) {
            (Some(code), Some(prob)) => {
                let stripped = strip_code_fences(code);
                if stripped.trim().is_empty() {
                    malformed += 1;
                } else {
                    well_formed.push((stripped, stripped_changed(code), prob));
                }
            }
            _ => malformed += 1,
        }
    }
    if malformed > 0 {
        warnings.push(ParseWarning::MalformedEntries { count: malformed });
    }
    if well_formed.is_empty() {
        return Err(ParseFailure::NoCandidates {
            entries: entries.len(),
        });
    }
    if well_formed.len() > k {
        warnings.push(ParseWarning::Truncated {
            returned: well_formed.len(),
            kept: k,
        });
        well_formed.truncate(k);
    }

    let mut candidates = Vec::with_capacity(well_formed.len());
    for (i, (body, fenced, stated)) in well_formed.into_iter().enumerate() {
        let rank = i + 1;
        if fenced {
            warnings.push(ParseWarning::FenceStripped { rank });
        }
        let p = if stated.is_finite() {
            stated.clamp(0.0, 1.0)
        } else {
            0.0
        };
        if p != stated {
            warnings.push(ParseWarning::ProbabilityClamped { rank, stated });
        }
        candidates.push(VsCandidate {
            rank,
            body,
            stated_probability: p,
        });
    }
    let sum: f64 = candidates.iter().map(|c| c.stated_probability).sum();
    if (sum - 1.0).abs() > PROBABILITY_SUM_TOLERANCE {
        log::warn!("stated probabilities sum to {sum}, candidates kept regardless");
        warnings.push(ParseWarning::ProbabilitySum { sum });
    }
    Ok(ParsedResponse {
        candidates,
        warnings,
    })
}

fn stripped_changed(code: &str) -> bool {
    let trimmed = code.trim_matches(|c| c == '\n' || c == '\r');
    trimmed.lines().next().is_some_and(is_fence)
}

#[cfg(test)]
mod tests {
    use super::*;
    use serde_json::json;

    fn response(entries: &[(&str, f64)]) -> String {
        let list: Vec<Value> = entries
            .iter()
            .map(|(c, p)| json!({"code": c, "probability": p}))
            .collect();
        json!({ "responses": list }).to_string()
    }

    #[test]
    fn three_valid_entries() {
        let r = parse_vs_response(&response(&[("a", 0.5), ("b", 0.3), ("c", 0.2)]), 3).unwrap();
        assert_eq!(r.candidates.len(), 3);
        assert_eq!(
            r.candidates.iter().map(|c| c.rank).collect::<Vec<_>>(),
            vec![1, 2, 3]
        );
        assert!(r.warnings.is_empty(), "{:?}", r.warnings);
    }

    #[test]
    fn keep_first_k() {
        let entries: Vec<(String, f64)> = (0..7).map(|i| (format!("p{i}"), 1.0 / 7.0)).collect();
        let refs: Vec<(&str, f64)> = entries.iter().map(|(c, p)| (c.as_str(), *p)).collect();
        let r = parse_vs_response(&response(&refs), 5).unwrap();
        let bodies: Vec<&str> = r.candidates.iter().map(|c| c.body.as_str()).collect();
        assert_eq!(bodies, vec!["p0", "p1", "p2", "p3", "p4"]);
        assert!(r.warnings.contains(&ParseWarning::Truncated {
            returned: 7,
            kept: 5
        }));
    }

    #[test]
    fn probability_sum_warns_but_keeps() {
        let r = parse_vs_response(&response(&[("a", 0.4), ("b", 0.3), ("c", 0.2)]), 3).unwrap();
        assert_eq!(r.candidates.len(), 3);
        assert!(
            matches!(r.warnings[0], ParseWarning::ProbabilitySum { sum } if (sum - 0.9).abs() < 1e-12)
        );
        let within = parse_vs_response(&response(&[("a", 0.5), ("b", 0.5009)]), 3).unwrap();
        assert!(within.warnings.is_empty());
    }

    #[test]
    fn fences_are_stripped() {
        let r = parse_vs_response(&response(&[("```python\nx = 1\ny = 2\n```", 1.0)]), 1).unwrap();
        assert_eq!(r.candidates[0].body, "x = 1\ny = 2");
        assert!(r
            .warnings
            .contains(&ParseWarning::FenceStripped { rank: 1 }));
    }

    #[test]
    fn envelope_may_be_fenced_or_wrapped() {
        let inner = response(&[("a", 1.0)]);
        let fenced = format!("```json\n{inner}\n```");
        assert_eq!(parse_vs_response(&fenced, 1).unwrap().candidates.len(), 1);
        let chatty = format!("Sure! Here you go:\n{inner}\nHope it helps.");
        assert_eq!(parse_vs_response(&chatty, 1).unwrap().candidates.len(), 1);
    }

    #[test]
    fn failures() {
        assert!(matches!(
            parse_vs_response("nope", 3),
            Err(ParseFailure::NotJson(_))
        ));
        assert_eq!(
            parse_vs_response(r#"{"answers": []}"#, 3),
            Err(ParseFailure::MissingResponses)
        );
        assert_eq!(
            parse_vs_response(r#"{"responses": "x"}"#, 3),
            Err(ParseFailure::NotAList)
        );
        assert_eq!(
            parse_vs_response(
                r#"{"responses": [{"code": "", "probability": 1}, {"code": "a"}]}"#,
                3
            ),
            Err(ParseFailure::NoCandidates { entries: 2 })
        );
    }

    #[test]
    fn malformed_entries_are_skipped_and_ranks_stay_contiguous() {
        let text = r#"{"responses": [{"code": "a", "probability": 0.5}, {"code": 3, "probability": 0.1}, {"code": "b", "probability": "0.5"}, {"code": "c", "probability": 0.5}]}"#;
        let r = parse_vs_response(text, 5).unwrap();
        let got: Vec<(usize, &str)> = r
            .candidates
            .iter()
            .map(|c| (c.rank, c.body.as_str()))
            .collect();
        assert_eq!(got, vec![(1, "a"), (2, "c")]);
        assert!(r
            .warnings
            .contains(&ParseWarning::MalformedEntries { count: 2 }));
    }

    #[test]
    fn out_of_range_probability_is_clamped() {
        let r = parse_vs_response(&response(&[("a", 1.5)]), 1).unwrap();
        assert_eq!(r.candidates[0].stated_probability, 1.0);
        assert!(r.warnings.contains(&ParseWarning::ProbabilityClamped {
            rank: 1,
            stated: 1.5
        }));
    }
}
