use std::fmt::Write as _;
use std::path::Path;

use super::TrainError;

pub const METRICS_HEADER: &str = "epoch,step,w_align,w_rec,rec_loss,align_loss,total_loss,lr";

/// One per-epoch metrics row. Losses a writer cannot know (a worker never
/// sees the alignment loss value; the coordinator never sees reconstruction
/// losses) stay empty in the CSV.
#[derive(Debug, Clone, PartialEq)]
pub struct MetricsRow {
    pub epoch: u32,
    /// Global step count at the end of the epoch.
    pub step: u64,
    pub w_align: f64,
    pub w_rec: f64,
    pub rec_loss: Option<f64>,
    pub align_loss: Option<f64>,
    pub total_loss: Option<f64>,
    pub lr: f64,
}

impl MetricsRow {
    pub fn to_csv_line(&self) -> String {
        let opt = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
        let mut line = String::new();
        let _ = write!(
            line,
            "{},{},{},{},{},{},{},{}",
            self.epoch,
            self.step,
            self.w_align,
            self.w_rec,
            opt(self.rec_loss),
            opt(self.align_loss),
            opt(self.total_loss),
            self.lr
        );
        line
    }

    pub fn parse(line: &str) -> Result<Self, TrainError> {
        let fields: Vec<&str> = line.trim_end().split(',').collect();
        if fields.len() != 8 {
            return Err(TrainError::Config(format!(
                "metrics row has {} fields, expected 8: {line:?}",
                fields.len()
            )));
        }
        let num = |s: &str| -> Result<f64, TrainError> {
            s.parse().map_err(|_| TrainError::Config(format!("bad metrics number {s:?}")))
        };
        let opt = |s: &str| -> Result<Option<f64>, TrainError> {
            if s.is_empty() {
                Ok(None)
            } else {
                num(s).map(Some)
            }
        };
        Ok(MetricsRow {
            epoch: fields[0].parse().map_err(|_| TrainError::Config("bad epoch".into()))?,
            step: fields[1].parse().map_err(|_| TrainError::Config("bad step".into()))?,
            w_align: num(fields[2])?,
            w_rec: num(fields[3])?,
            rec_loss: opt(fields[4])?,
            align_loss: opt(fields[5])?,
            total_loss: opt(fields[6])?,
            lr: num(fields[7])?,
        })
    }
}

/// Writes a complete metrics CSV (header plus one line per row).
pub fn write_metrics(path: &Path, rows: &[MetricsRow]) -> Result<(), TrainError> {
    let mut text = String::from(METRICS_HEADER);
    text.push('\n');
    for row in rows {
        text.push_str(&row.to_csv_line());
        text.push('\n');
    }
    std::fs::write(path, text.as_bytes()).map_err(|e| TrainError::Config(format!("cannot write metrics {}: {e}", path.display())))
}

/// Reads a metrics CSV written by [`write_metrics`].
pub fn read_metrics(path: &Path) -> Result<Vec<MetricsRow>, TrainError> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| TrainError::Config(format!("cannot read metrics {}: {e}", path.display())))?;
    let mut lines = text.lines();
    match lines.next() {
        Some(header) if header == METRICS_HEADER => {}
        other => {
            return Err(TrainError::Config(format!("bad metrics header: {other:?}")));
        }
    }
    lines.map(MetricsRow::parse).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn row_round_trips_including_empty_cells() {
        let row = MetricsRow {
            epoch: 3,
            step: 120,
            w_align: 0.25,
            w_rec: 0.9682458365518543,
            rec_loss: Some(0.0123),
            align_loss: None,
            total_loss: None,
            lr: 9.5e-4,
        };
        let parsed = MetricsRow::parse(&row.to_csv_line()).unwrap();
        assert_eq!(parsed, row);
    }

    #[test]
    fn file_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("metrics.csv");
        let rows = vec![
            MetricsRow {
                epoch: 0,
                step: 5,
                w_align: 0.0,
                w_rec: 1.0,
                rec_loss: Some(1.5),
                align_loss: Some(0.2),
                total_loss: Some(1.5),
                lr: 1e-3,
            },
            MetricsRow {
                epoch: 1,
                step: 10,
                w_align: 0.1,
                w_rec: 0.99,
                rec_loss: Some(1.1),
                align_loss: Some(0.18),
                total_loss: Some(1.107),
                lr: 9e-4,
            },
        ];
        write_metrics(&path, &rows).unwrap();
        assert_eq!(read_metrics(&path).unwrap(), rows);
    }
}
