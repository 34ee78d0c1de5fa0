//! Trajectory CSV and summary JSON files.

use std::io::{Read, Write};
use std::path::Path;

use cbf_core::qp::QpStatus;
use cbf_core::sim::StepRecord;
use thiserror::Error;

/// Trajectory CSV header, one column per [`StepRecord`] field.
pub const CSV_HEADER: [&str; 20] = [
    "t",
    "z",
    "v",
    "u",
    "u_min",
    "u_max",
    "a1",
    "pi12",
    "nu1",
    "nu2",
    "p1",
    "p2",
    "delta",
    "delta_p",
    "psi0",
    "psi1",
    "psi2",
    "phi11",
    "qp_status",
    "kkt_residual",
];

#[derive(Debug, Error)]
pub enum OutputError {
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error("bad CSV: {0}")]
    Format(String),
}

/// 17 significant digits, enough to round-trip any `f64`.
fn num(x: f64) -> String {
    format!("{x:.16e}")
}

fn opt(x: Option<f64>) -> String {
    x.map(num).unwrap_or_default()
}

fn status_str(s: QpStatus) -> &'static str {
    match s {
        QpStatus::Optimal => "optimal",
        QpStatus::Infeasible => "infeasible",
    }
}

pub fn write_csv<W: Write>(records: &[StepRecord], w: W) -> Result<(), OutputError> {
    let mut wr = csv::Writer::from_writer(w);
    wr.write_record(CSV_HEADER)?;
    for r in records {
        wr.write_record([
            num(r.t),
            num(r.z),
            num(r.v),
            opt(r.u),
            num(r.u_min),
            num(r.u_max),
            opt(r.a1),
            opt(r.pi12),
            opt(r.nu1),
            opt(r.nu2),
            opt(r.p1),
            opt(r.p2),
            opt(r.delta),
            opt(r.delta_p),
            num(r.psi0),
            num(r.psi1),
            opt(r.psi2),
            opt(r.phi11),
            status_str(r.qp_status).to_string(),
            opt(r.kkt_residual),
        ])?;
    }
    wr.flush()?;
    Ok(())
}

pub fn read_csv<R: Read>(r: R) -> Result<Vec<StepRecord>, OutputError> {
    let mut rd = csv::Reader::from_reader(r);
    if rd.headers()?.iter().ne(CSV_HEADER) {
        return Err(OutputError::Format("unexpected header".into()));
    }
    let mut out = Vec::new();
    for (line, rec) in rd.records().enumerate() {
        let rec = rec?;
        let field = |i: usize| -> Result<Option<f64>, OutputError> {
            let s = rec.get(i).unwrap_or("");
            if s.is_empty() {
                return Ok(None);
            }
            s.parse().map(Some).map_err(|_| {
                OutputError::Format(format!("row {}: `{}` = {s:?}", line + 1, CSV_HEADER[i]))
            })
        };
        let req = |i: usize| -> Result<f64, OutputError> {
            field(i)?.ok_or_else(|| {
                OutputError::Format(format!("row {}: `{}` is empty", line + 1, CSV_HEADER[i]))
            })
        };
        let qp_status = match rec.get(18) {
            Some("optimal") => QpStatus::Optimal,
            Some("infeasible") => QpStatus::Infeasible,
            other => {
                return Err(OutputError::Format(format!(
                    "row {}: status {other:?}",
                    line + 1
                )))
            }
        };
        out.push(StepRecord {
            t: req(0)?,
            z: req(1)?,
            v: req(2)?,
            u: field(3)?,
            u_min: req(4)?,
            u_max: req(5)?,
            a1: field(6)?,
            pi12: field(7)?,
            nu1: field(8)?,
            nu2: field(9)?,
            p1: field(10)?,
            p2: field(11)?,
            delta: field(12)?,
            delta_p: field(13)?,
            psi0: req(14)?,
            psi1: req(15)?,
            psi2: field(16)?,
            phi11: field(17)?,
            qp_status,
            kkt_residual: field(19)?,
        });
    }
    Ok(out)
}

pub fn write_csv_file(records: &[StepRecord], path: &Path) -> Result<(), OutputError> {
    write_csv(
        records,
        std::io::BufWriter::new(std::fs::File::create(path)?),
    )
}

pub fn write_json_file<T: serde::Serialize>(value: &T, path: &Path) -> Result<(), OutputError> {
    let f = std::io::BufWriter::new(std::fs::File::create(path)?);
    serde_json::to_writer_pretty(f, value)?;
    Ok(())
}
