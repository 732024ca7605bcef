use std::fmt::Write as _;
use std::path::Path;

use super::{OutputFormat, Report};
use crate::error::Result;

pub const CSV_HEADER: &str = "problem,procedure,n,lambda,rep,gap,scaled_gap,converged,iters";

/// One row per successful replication, header first, trailing newline.
pub fn render_csv(report: &Report) -> String {
    let mut out = String::from(CSV_HEADER);
    out.push('\n');
    for cell in &report.cells {
        for r in &cell.records {
            writeln!(
                out,
                "{},{},{},{},{},{},{},{},{}",
                report.problem,
                cell.procedure,
                cell.n,
                cell.lambda,
                r.rep,
                r.gap,
                r.gap * cell.n as f64,
                r.converged,
                r.iterations
            )
            .expect("writing to a String");
        }
    }
    out
}

pub fn render_json(report: &Report) -> String {
    let mut s = serde_json::to_string_pretty(report).expect("report serializes");
    s.push('\n');
    s
}

pub fn write_report(report: &Report, path: &Path, format: OutputFormat) -> Result<()> {
    let text = match format {
        OutputFormat::Csv => render_csv(report),
        OutputFormat::Json => render_json(report),
    };
    std::fs::write(path, text)?;
    Ok(())
}

/// Reads a JSON report back.
pub fn read_report(path: &Path) -> Result<Report> {
    Ok(serde_json::from_str(&std::fs::read_to_string(path)?)?)
}
