//! CSV tables exchanged between commands. Floats use 17 significant digits
//! so every value reads back exactly.

use std::fmt::Write;
use std::path::Path;

use lltk_core::io::fmt_f64_17;
use lltk_core::numkit::DenseMatrix;
use lltk_core::sampler::{PointProvenance, SampleSet};
use lltk_core::studies::PERSISTENCE_CSV_HEADER;
use lltk_core::{Error, Result};

pub const EMBEDDING_CSV_HEADER: &str =
    "index,x,y,train_loss,train_acc,test_loss,test_acc,run,seed,step_size,epoch";

/// One embedded sample. For grid and naive points `run` is the file group,
/// `seed` is 0 and `step_size` is the distance scale of the point (naive:
/// the step, grid: the largest coordinate magnitude).
#[derive(Clone, Debug, Default, PartialEq)]
pub struct EmbeddingRow {
    pub index: usize,
    pub x: f64,
    pub y: f64,
    pub train_loss: f64,
    pub train_acc: f64,
    pub test_loss: f64,
    pub test_acc: f64,
    pub run: usize,
    pub seed: u64,
    pub step_size: f64,
    pub epoch: u32,
}

/// Rows for `set` with coordinates from the first two columns of `coords`.
pub fn embedding_rows(set: &SampleSet, coords: &DenseMatrix) -> Result<Vec<EmbeddingRow>> {
    if coords.rows() != set.points.len() || coords.cols() < 2 {
        return Err(Error::Shape(format!(
            "{}x{} coordinates for {} points",
            coords.rows(),
            coords.cols(),
            set.points.len()
        )));
    }
    let mut run_of = vec![0; set.points.len()];
    for (r, run) in set.runs().iter().enumerate() {
        for &i in run {
            run_of[i] = r;
        }
    }
    Ok(set
        .points
        .iter()
        .enumerate()
        .map(|(i, p)| {
            let (run, seed, step_size, epoch) = match p.provenance {
                PointProvenance::JumpRetrain { seed, step_size, epoch } => (run_of[i], seed, step_size, epoch),
                PointProvenance::Grid { coords, .. } => {
                    (0, 0, coords.iter().fold(0.0f64, |m, c| m.max(c.abs())), 0)
                }
                PointProvenance::Naive { direction, c } => (direction, 0, c, 0),
            };
            EmbeddingRow {
                index: i,
                x: coords[(i, 0)],
                y: coords[(i, 1)],
                train_loss: p.train_loss,
                train_acc: p.train_acc,
                test_loss: p.test_loss,
                test_acc: p.test_acc,
                run,
                seed,
                step_size,
                epoch,
            }
        })
        .collect())
}

pub fn embedding_to_csv(rows: &[EmbeddingRow]) -> String {
    let mut out = format!("{EMBEDDING_CSV_HEADER}\n");
    for r in rows {
        let _ = writeln!(
            out,
            "{},{},{},{},{},{},{},{},{},{},{}",
            r.index,
            fmt_f64_17(r.x),
            fmt_f64_17(r.y),
            fmt_f64_17(r.train_loss),
            fmt_f64_17(r.train_acc),
            fmt_f64_17(r.test_loss),
            fmt_f64_17(r.test_acc),
            r.run,
            r.seed,
            fmt_f64_17(r.step_size),
            r.epoch
        );
    }
    out
}

fn format_error(path: &Path, line: usize, why: impl std::fmt::Display) -> Error {
    Error::Format {
        path: path.to_path_buf(),
        reason: format!("line {line}: {why}"),
    }
}

fn records<'a>(text: &'a str, header: &str, path: &Path) -> Result<Vec<(usize, Vec<&'a str>)>> {
    let mut lines = text.lines();
    if lines.next().map(str::trim) != Some(header) {
        return Err(format_error(path, 1, format!("expected header `{header}`")));
    }
    let width = header.split(',').count();
    let mut out = Vec::new();
    for (i, line) in lines.enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').map(str::trim).collect();
        if fields.len() != width {
            return Err(format_error(path, i + 2, format!("expected {width} fields")));
        }
        out.push((i + 2, fields));
    }
    Ok(out)
}

fn field<T: std::str::FromStr>(path: &Path, line: usize, name: &str, text: &str) -> Result<T> {
    text.parse()
        .map_err(|_| format_error(path, line, format!("bad {name} `{text}`")))
}

pub fn embedding_from_csv(text: &str, path: &Path) -> Result<Vec<EmbeddingRow>> {
    records(text, EMBEDDING_CSV_HEADER, path)?
        .into_iter()
        .map(|(l, f)| {
            Ok(EmbeddingRow {
                index: field(path, l, "index", f[0])?,
                x: field(path, l, "x", f[1])?,
                y: field(path, l, "y", f[2])?,
                train_loss: field(path, l, "train_loss", f[3])?,
                train_acc: field(path, l, "train_acc", f[4])?,
                test_loss: field(path, l, "test_loss", f[5])?,
                test_acc: field(path, l, "test_acc", f[6])?,
                run: field(path, l, "run", f[7])?,
                seed: field(path, l, "seed", f[8])?,
                step_size: field(path, l, "step_size", f[9])?,
                epoch: field(path, l, "epoch", f[10])?,
            })
        })
        .collect()
}

/// A row of the study's persistence table.
#[derive(Clone, Debug, PartialEq)]
pub struct PersistenceEntry {
    pub network: usize,
    pub weight_decay: f64,
    pub test_loss: f64,
    pub total_h0: f64,
    pub total_h1: f64,
}

pub fn persistence_from_csv(text: &str, path: &Path) -> Result<Vec<PersistenceEntry>> {
    records(text, PERSISTENCE_CSV_HEADER, path)?
        .into_iter()
        .map(|(l, f)| {
            Ok(PersistenceEntry {
                network: field(path, l, "network", f[0])?,
                weight_decay: field(path, l, "weight_decay", f[1])?,
                test_loss: field(path, l, "test_loss", f[2])?,
                total_h0: field(path, l, "total_persistence_h0", f[3])?,
                total_h1: field(path, l, "total_persistence_h1", f[4])?,
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    proptest! {
        #[test]
        fn embedding_csv_round_trips_exactly(
            vals in proptest::collection::vec((any::<f64>(), any::<f64>(), 0.0f64..10.0, -1e-300f64..1e300), 0..20),
            seed in any::<u64>(),
        ) {
            let rows: Vec<EmbeddingRow> = vals
                .iter()
                .enumerate()
                .filter(|(_, v)| v.0.is_finite() && v.1.is_finite())
                .map(|(i, v)| EmbeddingRow {
                    index: i,
                    x: v.0,
                    y: v.1,
                    train_loss: v.2,
                    train_acc: 0.5,
                    test_loss: v.3,
                    test_acc: 1.0 / 3.0,
                    run: i / 3,
                    seed,
                    step_size: 0.25 * i as f64,
                    epoch: i as u32,
                })
                .collect();
            let text = embedding_to_csv(&rows);
            let back = embedding_from_csv(&text, Path::new("t.csv")).unwrap();
            prop_assert_eq!(back, rows);
        }
    }

    #[test]
    fn malformed_rows_name_the_line() {
        let text = format!("{EMBEDDING_CSV_HEADER}\n0,1,2,3,4,5,6,7,8,9,10\n1,x,2,3,4,5,6,7,8,9,10\n");
        let e = embedding_from_csv(&text, Path::new("e.csv")).unwrap_err();
        assert!(e.to_string().contains("line 3"), "{e}");
    }
}
