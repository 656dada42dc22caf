use serde::Serialize;

/// Per-fold cross-validation outcome.
#[derive(Debug, Clone, PartialEq)]
pub struct CvOutcome {
    pub per_fold: Vec<f64>,
    pub mean: f64,
    pub std: f64,
    pub seed: u64,
}

impl CvOutcome {
    pub fn from_folds(per_fold: Vec<f64>, seed: u64) -> Self {
        let n = per_fold.len() as f64;
        let mean = per_fold.iter().sum::<f64>() / n;
        let var = per_fold.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
        CvOutcome { per_fold, mean, std: var.sqrt(), seed }
    }
}

/// Renders a `C x C` matrix as CSV: a header row of channel names, then one
/// row of values per channel.
pub fn matrix_csv(names: &[String], matrix: &[f64]) -> String {
    let c = names.len();
    debug_assert_eq!(matrix.len(), c * c);
    let mut out = names.join(",");
    out.push('\n');
    for i in 0..c {
        let row: Vec<String> = (0..c).map(|j| matrix[i * c + j].to_string()).collect();
        out.push_str(&row.join(","));
        out.push('\n');
    }
    out
}

/// Renders per-fold metrics as CSV (`fold,<metric>` rows).
pub fn cv_csv(outcome: &CvOutcome, metric: &str) -> String {
    let mut out = format!("fold,{metric}\n");
    for (fold, value) in outcome.per_fold.iter().enumerate() {
        out.push_str(&format!("{fold},{value}\n"));
    }
    out
}

/// Machine-readable summary written next to each report.
#[derive(Debug, Clone, Serialize)]
pub struct JsonSummary<'a> {
    pub metric: &'a str,
    pub mean: f64,
    pub std: f64,
    pub seed: u64,
    pub config_hash: &'a str,
}

impl JsonSummary<'_> {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("summary serializes")
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn outcome_statistics() {
        let o = CvOutcome::from_folds(vec![1.0, 0.5, 0.75, 0.75], 3);
        assert!((o.mean - 0.75).abs() < 1e-15);
        assert!(o.std > 0.0);
    }

    #[test]
    fn matrix_csv_shape() {
        let names = vec!["a".to_string(), "b".to_string()];
        let csv = matrix_csv(&names, &[1.0, 0.5, 0.25, 1.0]);
        let lines: Vec<&str> = csv.lines().collect();
        assert_eq!(lines, vec!["a,b", "1,0.5", "0.25,1"]);
    }

    #[test]
    fn summary_is_stable_json() {
        let s = JsonSummary { metric: "accuracy", mean: 0.95, std: 0.01, seed: 4, config_hash: "abcd" };
        let j1 = s.to_json();
        let j2 = s.to_json();
        assert_eq!(j1, j2);
        assert!(j1.contains("\"metric\": \"accuracy\""));
    }
}
