//! CSV export of single-input single-output closed-loop runs.
//!
//! Floats are written in the shortest form that parses back to the same
//! value, so a written trace reads back bit-exactly.

use std::io::{Read, Write};
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};
use crate::supervisor::{Branch, TrajectoryLog};

pub const HEADER: [&str; 11] = ["t", "y", "y_ref", "funnel", "e1_norm", "e2_norm", "u", "branch", "L_used", "obj", "iters"];

/// Environment variable naming the default output directory.
pub const OUT_DIR_ENV: &str = "FUNNELMPC_OUT_DIR";

#[derive(Debug, Clone, PartialEq)]
pub struct TraceRow {
    pub t: f64,
    pub y: f64,
    pub y_ref: f64,
    pub funnel: f64,
    pub e1_norm: f64,
    pub e2_norm: Option<f64>,
    pub u: f64,
    pub branch: Branch,
    pub l_used: usize,
    pub obj: Option<f64>,
    pub iters: Option<usize>,
}

/// Rows of a scalar run; fails for multi-output runs.
pub fn trace_rows(log: &TrajectoryLog) -> Result<Vec<TraceRow>> {
    log.records
        .iter()
        .map(|r| {
            if r.u.len() != 1 {
                return Err(Error::Trace(format!("CSV traces need m = 1, got m = {}", r.u.len())));
            }
            Ok(TraceRow {
                t: r.t,
                y: r.xi[0][0],
                y_ref: r.y_ref[0],
                funnel: r.radius,
                e1_norm: r.e[0].norm(),
                e2_norm: r.e.get(1).map(|e| e.norm()),
                u: r.u[0],
                branch: r.branch,
                l_used: r.l_used,
                obj: r.objective,
                iters: r.iterations,
            })
        })
        .collect()
}

fn opt<T: ToString>(v: Option<T>) -> String {
    v.map_or_else(String::new, |x| x.to_string())
}

pub fn write_trace<W: Write>(rows: &[TraceRow], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    let err = |e: csv::Error| Error::Trace(e.to_string());
    w.write_record(HEADER).map_err(err)?;
    for r in rows {
        w.write_record([
            r.t.to_string(),
            r.y.to_string(),
            r.y_ref.to_string(),
            r.funnel.to_string(),
            r.e1_norm.to_string(),
            opt(r.e2_norm),
            r.u.to_string(),
            r.branch.as_str().to_string(),
            r.l_used.to_string(),
            opt(r.obj),
            opt(r.iters),
        ])
        .map_err(err)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_trace<R: Read>(input: R) -> Result<Vec<TraceRow>> {
    let mut rd = csv::Reader::from_reader(input);
    let header = rd.headers().map_err(|e| Error::Trace(e.to_string()))?;
    if header.iter().ne(HEADER) {
        return Err(Error::Trace(format!("unexpected header {:?}", header.iter().collect::<Vec<_>>())));
    }
    let mut rows = Vec::new();
    for (i, rec) in rd.records().enumerate() {
        let rec = rec.map_err(|e| Error::Trace(e.to_string()))?;
        let line = i + 2;
        let field = |j: usize| -> Result<&str> {
            rec.get(j).ok_or_else(|| Error::Trace(format!("line {line}: missing field {}", HEADER[j])))
        };
        let float = |j: usize| -> Result<f64> {
            let s = field(j)?;
            s.parse().map_err(|_| Error::Trace(format!("line {line}: bad {} '{s}'", HEADER[j])))
        };
        let opt_float = |j: usize| -> Result<Option<f64>> {
            if field(j)?.is_empty() {
                Ok(None)
            } else {
                float(j).map(Some)
            }
        };
        let int = |j: usize| -> Result<usize> {
            let s = field(j)?;
            s.parse().map_err(|_| Error::Trace(format!("line {line}: bad {} '{s}'", HEADER[j])))
        };
        let branch = Branch::parse(field(7)?).ok_or_else(|| Error::Trace(format!("line {line}: bad branch")))?;
        rows.push(TraceRow {
            t: float(0)?,
            y: float(1)?,
            y_ref: float(2)?,
            funnel: float(3)?,
            e1_norm: float(4)?,
            e2_norm: opt_float(5)?,
            u: float(6)?,
            branch,
            l_used: int(8)?,
            obj: opt_float(9)?,
            iters: if field(10)?.is_empty() { None } else { Some(int(10)?) },
        });
    }
    Ok(rows)
}

pub fn write_trace_file(log: &TrajectoryLog, path: &Path) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir)?;
    }
    let file = std::fs::File::create(path)?;
    write_trace(&trace_rows(log)?, std::io::BufWriter::new(file))
}

pub fn read_trace_file(path: &Path) -> Result<Vec<TraceRow>> {
    read_trace(std::fs::File::open(path)?)
}

/// `name` inside the directory from the environment, or the current directory.
pub fn default_output_path(name: &str) -> PathBuf {
    match std::env::var_os(OUT_DIR_ENV) {
        Some(dir) if !dir.is_empty() => PathBuf::from(dir).join(name),
        _ => PathBuf::from(name),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn row(t: f64, obj: Option<f64>) -> TraceRow {
        TraceRow {
            t,
            y: 0.1 + t,
            y_ref: (t * 1.3).sin(),
            funnel: 0.15,
            e1_norm: 1.0 / 3.0,
            e2_norm: Some(std::f64::consts::PI * 1e-7),
            u: -19.999999999999996,
            branch: if obj.is_some() { Branch::Mpc } else { Branch::Random },
            l_used: 20,
            obj,
            iters: obj.map(|_| 17),
        }
    }

    #[test]
    fn round_trip_is_exact() {
        let rows = vec![row(0.0, None), row(2.0 / 451.0, Some(1.234_567_890_123_456_7e-5)), row(1e-300, Some(5e300))];
        let mut buf = Vec::new();
        write_trace(&rows, &mut buf).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert!(text.starts_with("t,y,y_ref,funnel,e1_norm,e2_norm,u,branch,L_used,obj,iters\n"));
        assert!(text.lines().nth(1).unwrap().ends_with(",random,20,,"));
        assert_eq!(read_trace(buf.as_slice()).unwrap(), rows);
    }

    #[test]
    fn bad_header_and_fields_rejected() {
        assert!(read_trace("a,b\n1,2\n".as_bytes()).is_err());
        let mut buf = Vec::new();
        write_trace(&[row(0.0, None)], &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap().replace("random", "other");
        assert!(read_trace(text.as_bytes()).is_err());
    }
}
