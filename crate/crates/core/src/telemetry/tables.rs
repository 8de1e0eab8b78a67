//! Comma-separated tables for plotting. Column order is fixed; absent values
//! are empty fields; floats use Rust's shortest round-trip formatting.

use super::analysis::{GridRow, RankRow, ScatterRow, Summary, TopmRow};

fn opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

fn summary_fields(s: &Summary) -> [String; 3] {
    [opt(s.median), opt(s.iqr_lo), opt(s.iqr_hi)]
}

fn render(header: &[&str], rows: impl Iterator<Item = Vec<String>>) -> String {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(header).expect("in-memory write");
    for row in rows {
        w.write_record(&row).expect("in-memory write");
    }
    String::from_utf8(w.into_inner().expect("in-memory flush")).expect("utf-8 fields")
}

pub fn topm_table(rows: &[TopmRow]) -> String {
    let header = [
        "tier",
        "m",
        "coverage_median",
        "coverage_iqr_lo",
        "coverage_iqr_hi",
        "best_delta_median",
        "best_delta_iqr_lo",
        "best_delta_iqr_hi",
        "n_events",
        "coverage_runs",
        "best_delta_runs",
    ];
    render(
        &header,
        rows.iter().map(|r| {
            let mut v = vec![r.tier.clone(), r.m.to_string()];
            v.extend(summary_fields(&r.coverage));
            v.extend(summary_fields(&r.best_delta));
            v.extend([
                r.n_events.to_string(),
                r.coverage.n.to_string(),
                r.best_delta.n.to_string(),
            ]);
            v
        }),
    )
}

pub fn rank_table(rows: &[RankRow]) -> String {
    let header = [
        "bucket",
        "validity_median",
        "validity_iqr_lo",
        "validity_iqr_hi",
        "delta_valid_median",
        "delta_valid_iqr_lo",
        "delta_valid_iqr_hi",
        "cell_distance_median",
        "cell_distance_iqr_lo",
        "cell_distance_iqr_hi",
        "n_candidates",
        "n_valid",
        "n_missing_cell",
    ];
    render(
        &header,
        rows.iter().map(|r| {
            let mut v = vec![r.bucket.clone()];
            v.extend(summary_fields(&r.validity_rate));
            v.extend(summary_fields(&r.mean_delta_valid));
            v.extend(summary_fields(&r.mean_cell_distance));
            v.extend([
                r.n_candidates.to_string(),
                r.n_valid.to_string(),
                r.n_missing_cell.to_string(),
            ]);
            v
        }),
    )
}

pub fn scatter_table(rows: &[ScatterRow]) -> String {
    render(
        &[
            "run_id",
            "island_id",
            "iteration",
            "rank",
            "delta",
            "cell_distance",
        ],
        rows.iter().map(|r| {
            vec![
                r.run_id.clone(),
                r.island_id.to_string(),
                r.iteration.to_string(),
                r.rank.to_string(),
                r.delta.to_string(),
                r.cell_distance.to_string(),
            ]
        }),
    )
}

pub fn grid_table(rows: &[GridRow]) -> String {
    let header = [
        "decile",
        "k",
        "p_improve_median",
        "p_improve_iqr_lo",
        "p_improve_iqr_hi",
        "e_delta_best_median",
        "e_delta_best_iqr_lo",
        "e_delta_best_iqr_hi",
        "n_events",
        "p_improve_runs",
        "e_delta_best_runs",
    ];
    render(
        &header,
        rows.iter().map(|r| {
            let mut v = vec![r.decile.to_string(), r.k.to_string()];
            v.extend(summary_fields(&r.p_improve));
            v.extend(summary_fields(&r.e_delta_best));
            v.extend([
                r.n_events.to_string(),
                r.p_improve.n.to_string(),
                r.e_delta_best.n.to_string(),
            ]);
            v
        }),
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::telemetry::analysis::{rank_profile, topm_replay};
    use crate::telemetry::tests::{event, header};
    use crate::telemetry::RunLog;

    #[test]
    fn empty_tables_have_headers_only() {
        assert_eq!(topm_table(&[]).lines().count(), 1);
        assert!(topm_table(&[]).starts_with(
            "tier,m,coverage_median,coverage_iqr_lo,coverage_iqr_hi,best_delta_median"
        ));
        assert_eq!(grid_table(&[]).lines().count(), 1);
        assert_eq!(scatter_table(&[]).lines().count(), 1);
        assert_eq!(rank_table(&[]).lines().count(), 1);
    }

    #[test]
    fn rendering_is_deterministic() {
        let log = RunLog {
            header: header("r"),
            events: (0..12)
                .map(|i| event(i, &[Some(0.1 * i as f64 - 0.5); 7]))
                .collect(),
            k_updates: Vec::new(),
            seeding: Vec::new(),
        };
        let a = topm_table(&topm_replay(std::slice::from_ref(&log), 7).unwrap());
        let b = topm_table(&topm_replay(std::slice::from_ref(&log), 7).unwrap());
        assert_eq!(a, b);
        let p = rank_profile(std::slice::from_ref(&log), 7);
        assert_eq!(rank_table(&p.ranks).lines().count(), 8);
    }
}
