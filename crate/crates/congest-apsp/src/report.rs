//! Stable output formats: the run summary JSON, distance matrices as
//! CSV, and bench rows. Field names and order are part of the CLI
//! contract, so both serializers and parsers live here.

use crate::engine::CommunicationMode;
use crate::graph::{DistanceMatrix, NodeId, INF};
use serde::{Deserialize, Serialize};

/// Summary of one run. Serialized field order is fixed; downstream
/// tooling indexes into it positionally.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunReport {
    pub n: usize,
    pub seed: u64,
    pub mode: String,
    pub c: f64,
    pub rounds_total: u64,
    pub rounds_per_phase: Vec<u64>,
    pub max_node_congestion: u64,
    pub verified: bool,
}

pub fn mode_token(mode: CommunicationMode) -> String {
    use crate::engine::{Direction, Discipline};
    let dir = match mode.direction {
        Direction::Bidirectional => "bidirectional",
        Direction::Unidirectional => "unidirectional",
    };
    let disc = match mode.discipline {
        Discipline::Broadcast => "broadcast",
        Discipline::Unicast => "unicast",
    };
    format!("{dir}-{disc}")
}

pub fn value_token(w: f64) -> String {
    if w == INF {
        "inf".to_string()
    } else {
        format!("{w}")
    }
}

/// One CSV line per source, entries comma-separated, `inf` where no path
/// exists. No header.
pub fn matrix_to_csv(d: &DistanceMatrix) -> String {
    let n = d.n();
    let mut out = String::new();
    for u in 0..n as NodeId {
        for v in 0..n as NodeId {
            if v > 0 {
                out.push(',');
            }
            out.push_str(&value_token(d.get(u, v)));
        }
        out.push('\n');
    }
    out
}

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum MatrixParseError {
    #[error("matrix is not square: {rows} rows but row {bad_row} has {cols} entries")]
    NotSquare { rows: usize, bad_row: usize, cols: usize },
    #[error("row {row}, column {col}: cannot parse {token:?} as a distance")]
    BadValue { row: usize, col: usize, token: String },
    #[error("matrix is empty")]
    Empty,
}

pub fn matrix_from_csv(text: &str) -> Result<DistanceMatrix, MatrixParseError> {
    let rows: Vec<&str> = text.lines().filter(|l| !l.trim().is_empty()).collect();
    let n = rows.len();
    if n == 0 {
        return Err(MatrixParseError::Empty);
    }
    let mut d = DistanceMatrix::filled(n, INF);
    for (u, line) in rows.iter().enumerate() {
        let cells: Vec<&str> = line.split(',').collect();
        if cells.len() != n {
            return Err(MatrixParseError::NotSquare { rows: n, bad_row: u, cols: cells.len() });
        }
        for (v, cell) in cells.iter().enumerate() {
            let tok = cell.trim();
            let w = if tok.eq_ignore_ascii_case("inf") {
                INF
            } else {
                tok.parse::<f64>().map_err(|_| MatrixParseError::BadValue {
                    row: u,
                    col: v,
                    token: tok.to_string(),
                })?
            };
            if w.is_nan() {
                return Err(MatrixParseError::BadValue {
                    row: u,
                    col: v,
                    token: tok.to_string(),
                });
            }
            d.set(u as NodeId, v as NodeId, w);
        }
    }
    Ok(d)
}

/// One bench trial. `normalized_rounds` divides by n ln^4 n, the target
/// growth envelope, so a flat column means the implementation tracks it.
#[derive(Debug, Clone, Serialize)]
pub struct BenchRow {
    pub n: usize,
    pub seed: u64,
    pub rounds: u64,
    pub max_node_congestion: u64,
    pub normalized_rounds: f64,
}

pub fn round_normalizer(n: usize) -> f64 {
    let ln = (n.max(2) as f64).ln();
    n as f64 * ln.powi(4)
}

pub const BENCH_HEADER: &str = "n,seed,rounds,max_node_congestion,normalized_rounds";

pub fn bench_rows_to_csv(rows: &[BenchRow]) -> String {
    let mut out = String::from(BENCH_HEADER);
    out.push('\n');
    for r in rows {
        out.push_str(&format!(
            "{},{},{},{},{}\n",
            r.n, r.seed, r.rounds, r.max_node_congestion, r.normalized_rounds
        ));
    }
    out
}
