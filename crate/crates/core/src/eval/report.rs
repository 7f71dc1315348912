use std::fmt::Write as _;

use serde::Serialize;

use super::ModelScores;

/// Relative change of `value` over `base` in percent; `None` when `base` is 0.
pub(crate) fn lift(value: f64, base: f64) -> Option<f64> {
    (base != 0.0).then(|| (value - base) / base * 100.0)
}

fn pct(v: Option<f64>) -> String {
    match v {
        Some(v) => format!("{v:+.1}%"),
        None => "n/a".into(),
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct ModelRow {
    pub model: String,
    pub next_action: Option<f64>,
    pub scores: Option<ModelScores>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SweepRow {
    pub e: usize,
    pub relevance: f64,
    pub recall: f64,
    pub diversity: f64,
    pub relevance_lift: Option<f64>,
    pub diversity_lift: Option<f64>,
}

/// Collected results. Lifts are relative to the first row of each table.
#[derive(Debug, Clone, Default, Serialize)]
pub struct EvalReport {
    pub rows: Vec<ModelRow>,
    pub sweep: Vec<SweepRow>,
}

impl EvalReport {
    pub fn to_markdown(&self) -> String {
        let mut out = String::new();
        let na: Vec<&ModelRow> = self.rows.iter().filter(|r| r.next_action.is_some()).collect();
        if let Some(base) = na.first().and_then(|r| r.next_action) {
            out.push_str("## Next-action prediction\n\n| Model | Accuracy | Lift |\n|---|---:|---:|\n");
            for r in &na {
                let v = r.next_action.unwrap_or_default();
                let _ = writeln!(out, "| {} | {:.4} | {} |", r.model, v, pct(lift(v, base)));
            }
            out.push('\n');
        }
        let batch: Vec<(&str, ModelScores)> = self.rows.iter().filter_map(|r| Some((r.model.as_str(), r.scores?))).collect();
        if let Some(&(_, base)) = batch.first() {
            out.push_str(
                "## Retrieval and ranking\n\n\
                 | Model | Relevance | Recall | R-precision | MRR | Recall lift | R-precision lift |\n\
                 |---|---:|---:|---:|---:|---:|---:|\n",
            );
            for (name, s) in &batch {
                let _ = writeln!(
                    out,
                    "| {name} | {:.4} | {:.4} | {:.4} | {:.4} | {} | {} |",
                    s.relevance,
                    s.recall,
                    s.r_precision,
                    s.reciprocal_rank,
                    pct(lift(s.recall, base.recall)),
                    pct(lift(s.r_precision, base.r_precision)),
                );
            }
            out.push('\n');
        }
        if !self.sweep.is_empty() {
            out.push_str("## Diversity and relevance by e\n\n| e | Relevance | Diversity | Relevance lift | Diversity lift |\n|---:|---:|---:|---:|---:|\n");
            for s in &self.sweep {
                let _ = writeln!(
                    out,
                    "| {} | {:.4} | {:.4} | {} | {} |",
                    s.e,
                    s.relevance,
                    s.diversity,
                    pct(s.relevance_lift),
                    pct(s.diversity_lift)
                );
            }
        }
        out
    }

    /// One line per model: `model,next_action,relevance,recall,r_precision,mrr,diversity`.
    /// Missing values are empty fields.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("model,next_action,relevance,recall,r_precision,mrr,diversity\n");
        for r in &self.rows {
            let na = r.next_action.map(|v| v.to_string()).unwrap_or_default();
            let rest = match r.scores {
                Some(s) => format!(
                    "{},{},{},{},{}",
                    s.relevance, s.recall, s.r_precision, s.reciprocal_rank, s.diversity
                ),
                None => ",,,,".into(),
            };
            let _ = writeln!(out, "\"{}\",{na},{rest}", r.model.replace('"', "\"\""));
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn lift_examples() {
        assert_eq!(lift(1.5, 1.0), Some(50.0));
        assert_eq!(lift(0.5, 0.0), None);
        assert_eq!(pct(Some(-12.34)), "-12.3%");
    }

    #[test]
    fn report_renders() {
        let report = EvalReport {
            rows: vec![
                ModelRow {
                    model: "LastPin".into(),
                    next_action: Some(0.2),
                    scores: Some(ModelScores {
                        recall: 0.1,
                        r_precision: 0.2,
                        ..Default::default()
                    }),
                },
                ModelRow {
                    model: "Oracle".into(),
                    next_action: Some(0.4),
                    scores: None,
                },
            ],
            sweep: vec![],
        };
        let md = report.to_markdown();
        assert!(md.contains("| Oracle | 0.4000 | +100.0% |"));
        assert!(md.contains("| LastPin | 0.0000 | 0.1000 | 0.2000"));
        let csv = report.to_csv();
        assert_eq!(csv.lines().count(), 3);
        assert!(csv.lines().nth(2).unwrap().ends_with(",,,,"));
    }
}
