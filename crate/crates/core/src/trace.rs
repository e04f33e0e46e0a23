//! Plot-ready CSV emission for traces and sweep grids, with a JSON metadata
//! sidecar carrying the fully resolved configuration.

use std::io::Write;
use std::path::{Path, PathBuf};

use crate::error::Result;
use crate::scenario::{SimulationTrace, SweepGrid};

/// Write the trace as CSV: one row per step, floats in shortest round-trip
/// form so identical runs produce identical bytes.
pub fn write_trace_csv<W: Write>(trace: &SimulationTrace, mut out: W) -> Result<()> {
    let first = trace.final_record();
    let (n_h, n_r, n_u) = (first.q_h.len(), first.q_r.len(), first.u.len());

    let mut header = String::from("t");
    for i in 0..n_h {
        header.push_str(&format!(",qh_{i}"));
    }
    for i in 0..n_r {
        header.push_str(&format!(",qr_{i}"));
    }
    for block in ["ee", "ec"] {
        for comp in ["tx", "ty", "tz", "rx", "ry", "rz"] {
            header.push_str(&format!(",{block}_{comp}"));
        }
    }
    for i in 0..12 {
        header.push_str(&format!(",ehat_{i}"));
    }
    for i in 0..n_u {
        header.push_str(&format!(",u_{i}"));
    }
    writeln!(out, "{header}")?;

    let mut line = String::new();
    for record in &trace.records {
        line.clear();
        line.push_str(&format!("{}", record.t));
        for v in record.q_h.iter().chain(record.q_r.iter()) {
            line.push_str(&format!(",{v}"));
        }
        let e_e = record.e_e.as_vector();
        let e_c = record.e_c.as_vector();
        for v in e_e.iter().chain(e_c.iter()) {
            line.push_str(&format!(",{v}"));
        }
        for v in record.e_hat.iter().chain(record.u.iter()) {
            line.push_str(&format!(",{v}"));
        }
        writeln!(out, "{line}")?;
    }
    Ok(())
}

/// Write `<stem>.csv` and the `<stem>.meta.json` sidecar into `out_dir`.
pub fn write_trace_files(
    trace: &SimulationTrace,
    out_dir: &Path,
    stem: &str,
) -> Result<(PathBuf, PathBuf)> {
    std::fs::create_dir_all(out_dir)?;
    let csv_path = out_dir.join(format!("{stem}.csv"));
    let meta_path = out_dir.join(format!("{stem}.meta.json"));
    let mut csv = Vec::new();
    write_trace_csv(trace, &mut csv)?;
    std::fs::write(&csv_path, csv)?;
    let mut meta = serde_json::to_vec_pretty(&trace.metadata)?;
    meta.push(b'\n');
    std::fs::write(&meta_path, meta)?;
    Ok((csv_path, meta_path))
}

/// Sweep grid CSV: `ratio_e,ratio_c,stable` with stable as 1/0.
pub fn write_sweep_csv<W: Write>(grid: &SweepGrid, mut out: W) -> Result<()> {
    writeln!(out, "ratio_e,ratio_c,stable")?;
    for cell in &grid.cells {
        writeln!(
            out,
            "{},{},{}",
            cell.ratio_e,
            cell.ratio_c,
            if cell.stable { 1 } else { 0 }
        )?;
    }
    Ok(())
}

pub fn write_sweep_file(grid: &SweepGrid, out_dir: &Path, stem: &str) -> Result<PathBuf> {
    std::fs::create_dir_all(out_dir)?;
    let path = out_dir.join(format!("{stem}.csv"));
    let mut bytes = Vec::new();
    write_sweep_csv(grid, &mut bytes)?;
    std::fs::write(&path, bytes)?;
    Ok(path)
}
