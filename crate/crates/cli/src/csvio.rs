//! CSV and report writers.
//!
//! Floats are rendered with `{}` (shortest round-tripping form), so files are
//! bitwise-identical across identical runs and parse back to the same values.

use std::fs;
use std::io;
use std::path::{Path, PathBuf};

use convirt_core::eval::RetrievalMetrics;
use convirt_core::tensor::Matrix;
use convirt_core::train::TrainHistory;

/// Writes the training record as `step,train_loss,val_loss,lr` rows.
pub fn write_history_csv(path: &Path, history: &TrainHistory) -> io::Result<()> {
    let mut s = String::from("step,train_loss,val_loss,lr\n");
    for r in &history.records {
        s.push_str(&format!("{},{},{},{}\n", r.step, r.train_loss, r.val_loss, r.lr));
    }
    fs::write(path, s)
}

/// Writes one row per example: id, representation coordinates, and the label
/// when known.
pub fn write_embeddings_csv(
    path: &Path,
    ids: &[String],
    embeddings: &Matrix,
    labels: Option<&[usize]>,
) -> io::Result<()> {
    assert_eq!(ids.len(), embeddings.rows());
    if let Some(l) = labels {
        assert_eq!(l.len(), ids.len());
    }
    let mut s = String::from("image_id");
    for d in 0..embeddings.cols() {
        s.push_str(&format!(",h{d}"));
    }
    if labels.is_some() {
        s.push_str(",label");
    }
    s.push('\n');
    for (i, id) in ids.iter().enumerate() {
        s.push_str(id);
        for v in embeddings.row_slice(i) {
            s.push_str(&format!(",{v}"));
        }
        if let Some(l) = labels {
            s.push_str(&format!(",{}", l[i]));
        }
        s.push('\n');
    }
    fs::write(path, s)
}

/// One named retrieval result (e.g. direction "image-image").
pub struct RetrievalRow {
    /// Which retrieval task the metrics describe.
    pub direction: String,
    /// The metrics themselves.
    pub metrics: RetrievalMetrics,
}

/// Writes `direction,k,precision,n_queries` rows.
pub fn write_retrieval_csv(path: &Path, rows: &[RetrievalRow]) -> io::Result<()> {
    let mut s = String::from("direction,k,precision,n_queries\n");
    for row in rows {
        for (k, p) in row.metrics.k_values.iter().zip(&row.metrics.precision) {
            s.push_str(&format!(
                "{},{},{},{}\n",
                row.direction, k, p, row.metrics.n_queries
            ));
        }
    }
    fs::write(path, s)
}

/// Renders retrieval results as a fixed-width table for the terminal.
pub fn render_retrieval_table(rows: &[RetrievalRow]) -> String {
    let mut s = String::new();
    let width = rows
        .iter()
        .map(|r| r.direction.len())
        .chain([9])
        .max()
        .unwrap();
    s.push_str(&format!("{:width$}  {:>8}  {:>10}  {:>8}\n", "direction", "prec@k", "k", "queries"));
    for row in rows {
        for (k, p) in row.metrics.k_values.iter().zip(&row.metrics.precision) {
            s.push_str(&format!(
                "{:width$}  {:>8.4}  {:>10}  {:>8}\n",
                row.direction, p, k, row.metrics.n_queries
            ));
        }
    }
    s
}

/// Writes `metric,value` rows.
pub fn write_metrics_csv(path: &Path, pairs: &[(&str, f64)]) -> io::Result<()> {
    let mut s = String::from("metric,value\n");
    for (name, value) in pairs {
        s.push_str(&format!("{name},{value}\n"));
    }
    fs::write(path, s)
}

/// Writes `run-manifest.txt`: every file the command produced, relative to
/// the output directory, one per line, sorted.
pub fn write_run_manifest(dir: &Path, files: &[PathBuf]) -> io::Result<PathBuf> {
    let mut names: Vec<String> = files
        .iter()
        .map(|p| p.to_string_lossy().replace('\\', "/"))
        .collect();
    names.sort();
    let mut s = String::new();
    for n in names {
        s.push_str(&n);
        s.push('\n');
    }
    let path = dir.join("run-manifest.txt");
    fs::write(&path, s)?;
    Ok(path)
}

#[cfg(test)]
mod tests {
    use super::*;
    use convirt_core::train::EvalRecord;

    #[test]
    fn history_rows_round_trip_through_parse() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("history.csv");
        let history = TrainHistory {
            records: vec![
                EvalRecord {
                    step: 50,
                    train_loss: 3.0542196874,
                    val_loss: 2.93281,
                    lr: 1e-3,
                },
                EvalRecord {
                    step: 100,
                    train_loss: 2.5,
                    val_loss: 2.25,
                    lr: 5e-4,
                },
            ],
            best_index: Some(1),
            aborted_at_step: None,
        };
        write_history_csv(&path, &history).unwrap();
        let text = fs::read_to_string(&path).unwrap();
        let mut lines = text.lines();
        assert_eq!(lines.next(), Some("step,train_loss,val_loss,lr"));
        let row: Vec<&str> = lines.next().unwrap().split(',').collect();
        assert_eq!(row[0], "50");
        assert_eq!(row[1].parse::<f64>().unwrap(), 3.0542196874);
        assert_eq!(row[3].parse::<f64>().unwrap(), 1e-3);
        assert_eq!(text.lines().count(), 3);
    }

    #[test]
    fn embeddings_csv_carries_ids_coords_and_labels() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("embeddings.csv");
        let emb = Matrix::from_vec(2, 3, vec![1.0, 0.5, -0.25, 0.0, 2.0, 3.0]);
        let ids = vec![String::from("img00000"), String::from("img00001")];
        write_embeddings_csv(&path, &ids, &emb, Some(&[4, 7])).unwrap();
        let text = fs::read_to_string(&path).unwrap();
        assert_eq!(text.lines().next(), Some("image_id,h0,h1,h2,label"));
        assert_eq!(text.lines().nth(1), Some("img00000,1,0.5,-0.25,4"));
        assert_eq!(text.lines().nth(2), Some("img00001,0,2,3,7"));
    }

    #[test]
    fn retrieval_csv_and_table_agree_on_content() {
        let rows = vec![RetrievalRow {
            direction: String::from("text-image"),
            metrics: RetrievalMetrics {
                k_values: vec![5, 10],
                precision: vec![0.52, 0.4875],
                n_queries: 40,
            },
        }];
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("retrieval.csv");
        write_retrieval_csv(&path, &rows).unwrap();
        let text = fs::read_to_string(&path).unwrap();
        assert!(text.contains("text-image,5,0.52,40"), "{text}");
        assert!(text.contains("text-image,10,0.4875,40"), "{text}");

        let table = render_retrieval_table(&rows);
        assert!(table.contains("text-image"), "{table}");
        assert!(table.contains("0.5200"), "{table}");
    }

    #[test]
    fn run_manifest_is_sorted_and_relative() {
        let dir = tempfile::tempdir().unwrap();
        let path = write_run_manifest(
            dir.path(),
            &[PathBuf::from("history.csv"), PathBuf::from("checkpoint.bin")],
        )
        .unwrap();
        let text = fs::read_to_string(path).unwrap();
        assert_eq!(text, "checkpoint.bin\nhistory.csv\n");
    }
}
