//! CSV and JSON emission.
//!
//! Floats are written with 17 significant digits so that parsing a file back
//! reproduces every value bit for bit. Lines end in LF on every platform.

use std::fs;
use std::io::{self, Write};
use std::path::Path;

use overlap_core::MetricsRecord;
use serde::Serialize;

use crate::error::{CliError, Result};

pub const METRICS_HEADER: &str =
    "run_id,algorithm,seed,k,wall_time_s,objective,grad_norm_sq,consensus_dist,comm_bytes,idle_s";
pub const PLOT_HEADER: &str = "x,y,series";

/// `v` with 17 significant digits.
pub fn fmt_f64(v: f64) -> String {
    format!("{v:.16e}")
}

/// One metrics row with its run identity.
#[derive(Debug, Clone, PartialEq)]
pub struct MetricsRow {
    pub run_id: String,
    pub algorithm: String,
    pub seed: u64,
    pub record: MetricsRecord,
}

pub fn write_metrics_csv<W: Write>(
    mut w: W,
    run_id: &str,
    algorithm: &str,
    seed: u64,
    records: &[MetricsRecord],
) -> io::Result<()> {
    writeln!(w, "{METRICS_HEADER}")?;
    for r in records {
        writeln!(
            w,
            "{run_id},{algorithm},{seed},{},{},{},{},{},{},{}",
            r.k,
            fmt_f64(r.wall_time_s),
            fmt_f64(r.objective),
            fmt_f64(r.grad_norm_sq),
            fmt_f64(r.consensus_dist),
            r.comm_bytes,
            fmt_f64(r.idle_s),
        )?;
    }
    Ok(())
}

/// Parses a file written by [`write_metrics_csv`].
pub fn parse_metrics_csv(text: &str) -> std::result::Result<Vec<MetricsRow>, String> {
    let mut lines = text.split('\n');
    match lines.next() {
        Some(METRICS_HEADER) => {}
        other => return Err(format!("unexpected header {other:?}")),
    }
    let mut rows = Vec::new();
    for (n, line) in lines.enumerate().filter(|(_, l)| !l.is_empty()) {
        let f: Vec<&str> = line.split(',').collect();
        if f.len() != 10 {
            return Err(format!("line {}: expected 10 fields, found {}", n + 2, f.len()));
        }
        let float = |i: usize| f[i].parse::<f64>().map_err(|e| format!("line {}: {e}", n + 2));
        let int = |i: usize| f[i].parse::<u64>().map_err(|e| format!("line {}: {e}", n + 2));
        rows.push(MetricsRow {
            run_id: f[0].to_string(),
            algorithm: f[1].to_string(),
            seed: int(2)?,
            record: MetricsRecord {
                k: int(3)? as usize,
                wall_time_s: float(4)?,
                objective: float(5)?,
                grad_norm_sq: float(6)?,
                consensus_dist: float(7)?,
                comm_bytes: int(8)?,
                idle_s: float(9)?,
            },
        });
    }
    Ok(rows)
}

/// `(x, y, series)` triples for external plotting.
pub fn write_plot_csv<W: Write>(mut w: W, points: &[(f64, f64, String)]) -> io::Result<()> {
    writeln!(w, "{PLOT_HEADER}")?;
    for (x, y, s) in points {
        writeln!(w, "{},{},{s}", fmt_f64(*x), fmt_f64(*y))?;
    }
    Ok(())
}

/// Writes `bytes` to `path`, creating parent directories.
pub fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))?;
    }
    fs::write(path, bytes).map_err(|e| CliError::io(path, e))
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    write_file(path, text.as_bytes())
}

pub fn write_csv_with<F>(path: &Path, f: F) -> Result<()>
where
    F: FnOnce(&mut Vec<u8>) -> io::Result<()>,
{
    let mut buf = Vec::new();
    f(&mut buf).map_err(|e| CliError::io(path, e))?;
    write_file(path, &buf)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn rec(k: usize, v: f64) -> MetricsRecord {
        MetricsRecord {
            k,
            wall_time_s: v * 3.0,
            objective: v,
            grad_norm_sq: v * v,
            consensus_dist: 0.1 + v,
            comm_bytes: k as u64 * 8,
            idle_s: v / 7.0,
        }
    }

    #[test]
    fn empty_is_header_only() {
        let mut buf = Vec::new();
        write_metrics_csv(&mut buf, "r", "local_sgd", 1, &[]).unwrap();
        assert_eq!(String::from_utf8(buf).unwrap(), format!("{METRICS_HEADER}\n"));
    }

    #[test]
    fn lf_only_and_seventeen_digits() {
        let mut buf = Vec::new();
        write_metrics_csv(&mut buf, "r", "a", 0, &[rec(0, 0.1)]).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(!text.contains('\r'));
        assert!(text.contains("1.0000000000000001e-1"));
    }

    proptest! {
        #[test]
        fn round_trip_is_bitwise(values in prop::collection::vec(any::<f64>().prop_filter("finite", |v| v.is_finite()), 0..40), seed in any::<u64>()) {
            let records: Vec<MetricsRecord> = values.iter().enumerate().map(|(k, &v)| rec(k, v)).collect();
            let mut buf = Vec::new();
            write_metrics_csv(&mut buf, "run", "overlap_local", seed, &records).unwrap();
            let rows = parse_metrics_csv(std::str::from_utf8(&buf).unwrap()).unwrap();
            prop_assert_eq!(rows.len(), records.len());
            for (row, r) in rows.iter().zip(&records) {
                prop_assert_eq!(row.seed, seed);
                prop_assert_eq!(row.record.objective.to_bits(), r.objective.to_bits());
                prop_assert_eq!(row.record.grad_norm_sq.to_bits(), r.grad_norm_sq.to_bits());
                prop_assert_eq!(row.record.wall_time_s.to_bits(), r.wall_time_s.to_bits());
                prop_assert_eq!(row.record.consensus_dist.to_bits(), r.consensus_dist.to_bits());
                prop_assert_eq!(row.record.idle_s.to_bits(), r.idle_s.to_bits());
                prop_assert_eq!(row.record.k, r.k);
            }
        }
    }
}
