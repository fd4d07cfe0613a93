//! Trace files: a CSV of KPM records plus a JSON sidecar carrying the cell
//! configuration and UE profiles.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{CellConfig, KpmRecord, TelemetryError, TelemetryTrace, UeProfile};

pub const TRACE_HEADER: &str = "t,ue_id,prb_demanded,prb_allocated,snr_db,bler";
const SIDECAR_FORMAT: &str = "ricforge-kpm-trace";
const SIDECAR_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct TraceSidecar {
    format: String,
    version: u32,
    cell: CellConfig,
    ues: Vec<UeProfile>,
}

/// `trace.csv` -> `trace.json`
pub fn sidecar_path(csv: &Path) -> PathBuf {
    csv.with_extension("json")
}

fn io_err(path: &Path, source: std::io::Error) -> TelemetryError {
    TelemetryError::Io { path: path.display().to_string(), source }
}

pub fn write_trace(trace: &TelemetryTrace, path: &Path) -> Result<(), TelemetryError> {
    let mut csv = String::with_capacity(trace.records.len() * 40);
    csv.push_str(TRACE_HEADER);
    csv.push('\n');
    for r in &trace.records {
        let _ = writeln!(csv, "{},{},{},{},{},{}", r.t, r.ue_id, r.prb_demanded, r.prb_allocated, r.snr_db, r.bler);
    }
    fs::write(path, csv).map_err(|e| io_err(path, e))?;

    let sidecar = TraceSidecar {
        format: SIDECAR_FORMAT.into(),
        version: SIDECAR_VERSION,
        cell: trace.cell.clone(),
        ues: trace.ues.clone(),
    };
    let side = sidecar_path(path);
    let mut json = serde_json::to_string_pretty(&sidecar).expect("sidecar serializes");
    json.push('\n');
    fs::write(&side, json).map_err(|e| io_err(&side, e))
}

pub fn read_trace(path: &Path) -> Result<TelemetryTrace, TelemetryError> {
    let name = path.display().to_string();
    let side = sidecar_path(path);
    let side_text = fs::read_to_string(&side).map_err(|e| io_err(&side, e))?;
    let sidecar: TraceSidecar = serde_json::from_str(&side_text).map_err(|e| TelemetryError::Parse {
        path: side.display().to_string(),
        line: e.line(),
        msg: e.to_string(),
    })?;
    if sidecar.format != SIDECAR_FORMAT || sidecar.version != SIDECAR_VERSION {
        return Err(TelemetryError::Parse {
            path: side.display().to_string(),
            line: 1,
            msg: format!("unsupported sidecar {} v{}", sidecar.format, sidecar.version),
        });
    }
    sidecar.cell.validate()?;
    let mut ues = sidecar.ues;
    ues.sort_by_key(|u| u.ue_id);
    if ues.is_empty() {
        return Err(TelemetryError::Config("sidecar lists no UEs".into()));
    }

    let text = fs::read_to_string(path).map_err(|e| io_err(path, e))?;
    let mut lines = text.lines().enumerate();
    let parse_err = |line: usize, msg: String| TelemetryError::Parse { path: name.clone(), line: line + 1, msg };
    match lines.next() {
        None => return Err(TelemetryError::Empty(name)),
        Some((i, header)) if header.trim_end() != TRACE_HEADER => {
            return Err(parse_err(i, format!("expected header `{TRACE_HEADER}`")))
        }
        Some(_) => {}
    }

    let n = ues.len();
    let mut records = Vec::new();
    for (i, line) in lines {
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != 6 {
            return Err(parse_err(i, format!("expected 6 fields, found {}", fields.len())));
        }
        let field = |k: usize, label: &str| -> Result<&str, TelemetryError> {
            let f = fields[k].trim();
            if f.is_empty() {
                Err(parse_err(i, format!("empty field `{label}`")))
            } else {
                Ok(f)
            }
        };
        macro_rules! num {
            ($k:expr, $label:expr, $ty:ty) => {
                field($k, $label)?
                    .parse::<$ty>()
                    .map_err(|e| parse_err(i, format!("field `{}`: {}", $label, e)))?
            };
        }
        let rec = KpmRecord {
            t: num!(0, "t", u32),
            ue_id: num!(1, "ue_id", u16),
            prb_demanded: num!(2, "prb_demanded", u32),
            prb_allocated: num!(3, "prb_allocated", u32),
            snr_db: num!(4, "snr_db", f64),
            bler: num!(5, "bler", f64),
        };
        let k = records.len();
        let expected_t = (k / n) as u32;
        if rec.t != expected_t {
            return Err(parse_err(
                i,
                format!("interval index {} out of order (expected {expected_t})", rec.t),
            ));
        }
        let expected_ue = ues[k % n].ue_id;
        if rec.ue_id != expected_ue {
            return Err(parse_err(i, format!("ue_id {} out of order (expected {expected_ue})", rec.ue_id)));
        }
        if rec.prb_allocated > rec.prb_demanded {
            return Err(parse_err(i, "prb_allocated exceeds prb_demanded".into()));
        }
        if !(0.0..=1.0).contains(&rec.bler) || !rec.snr_db.is_finite() {
            return Err(parse_err(i, "snr_db/bler out of range".into()));
        }
        records.push(rec);
    }
    if records.is_empty() {
        return Err(TelemetryError::Empty(name));
    }
    if records.len() % n != 0 {
        return Err(TelemetryError::Parse { path: name, line: text.lines().count(), msg: "truncated final interval".into() });
    }
    let expected = sidecar.cell.interval_count() as usize;
    if records.len() / n != expected {
        return Err(TelemetryError::Parse {
            path: name,
            line: text.lines().count(),
            msg: format!("{} intervals present, cell config implies {expected}", records.len() / n),
        });
    }
    let trace = TelemetryTrace::from_records(sidecar.cell, ues, records);
    for (t, &u) in trace.util.iter().enumerate() {
        if u > 1.0 {
            return Err(TelemetryError::Parse {
                path: path.display().to_string(),
                line: t * n + 2,
                msg: format!("interval {t} allocates more PRBs than the cell has"),
            });
        }
    }
    Ok(trace)
}
