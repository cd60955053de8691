//! Simulation traces and their on-disk form.
//!
//! A trace directory holds `trace.csv`, `snapshots.csv`, `events.json` and
//! `meta.json`. Floats are written with 17 significant digits so that reading
//! a file back reproduces the values bit for bit.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scenario::{InputHold, Mode};
use crate::supervisor::{Event, Phase};

pub const TRACE_FILE: &str = "trace.csv";
pub const SNAPSHOT_FILE: &str = "snapshots.csv";
pub const EVENTS_FILE: &str = "events.json";
pub const META_FILE: &str = "meta.json";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RecordPhase {
    ZoomOut,
    ZoomIn,
    Nominal,
}

impl RecordPhase {
    pub fn as_str(self) -> &'static str {
        match self {
            RecordPhase::ZoomOut => "zoom_out",
            RecordPhase::ZoomIn => "zoom_in",
            RecordPhase::Nominal => "nominal",
        }
    }

    fn parse(s: &str) -> Result<Self> {
        match s {
            "zoom_out" => Ok(RecordPhase::ZoomOut),
            "zoom_in" => Ok(RecordPhase::ZoomIn),
            "nominal" => Ok(RecordPhase::Nominal),
            other => Err(Error::Trace(format!("unknown phase {other:?}"))),
        }
    }
}

impl From<Phase> for RecordPhase {
    fn from(p: Phase) -> Self {
        match p {
            Phase::ZoomOut => RecordPhase::ZoomOut,
            Phase::ZoomIn => RecordPhase::ZoomIn,
        }
    }
}

/// One sampled instant. `w_sup` and `d` are NaN where not computed; `mu` is
/// NaN in nominal mode.
#[derive(Debug, Clone, PartialEq)]
pub struct TraceRecord {
    pub t: f64,
    pub x: Vec<f64>,
    pub u_sup: f64,
    /// Control `U(t)` entering the boundary.
    pub u: f64,
    pub mu: f64,
    pub phase: RecordPhase,
    /// `|X| + ||u||_inf`.
    pub norm: f64,
    pub w_sup: f64,
    /// `d` in state mode, `dbar` in input mode.
    pub d: f64,
}

impl TraceRecord {
    pub fn x_norm(&self) -> f64 {
        crate::model::euclidean_norm(&self.x)
    }

    /// `|X| + ||w||_inf`, NaN if `w` was not computed.
    pub fn xw_norm(&self) -> f64 {
        self.x_norm() + self.w_sup
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Snapshot {
    pub t: f64,
    pub values: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceMeta {
    pub scenario: String,
    pub plant: String,
    pub mode: Mode,
    pub dim: usize,
    pub grid_n: usize,
    pub dt: f64,
    pub steps: usize,
    pub record_stride: usize,
    pub records: usize,
    pub initial_norm: f64,
    pub t1_star: Option<f64>,
    pub seed: u64,
    pub input_hold: InputHold,
    /// Set when the run stopped early on a non-finite value.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub failure: Option<String>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub warnings: Vec<String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimTrace {
    pub meta: TraceMeta,
    pub records: Vec<TraceRecord>,
    pub events: Vec<Event>,
    pub snapshots: Vec<Snapshot>,
}

impl SimTrace {
    pub fn final_record(&self) -> Option<&TraceRecord> {
        self.records.last()
    }

    pub fn t1_star(&self) -> Option<f64> {
        self.meta.t1_star
    }

    /// Zoom-in window boundaries, i.e. the zoom changes after the trigger.
    pub fn window_events(&self) -> impl Iterator<Item = &Event> {
        self.events
            .iter()
            .filter(|e| e.phase == Phase::ZoomIn && e.kind == crate::supervisor::EventKind::MuChange)
    }

    /// Record at time `t` (to within a tenth of a step).
    pub fn record_at(&self, t: f64) -> Option<&TraceRecord> {
        let tol = 0.1 * self.meta.dt;
        let idx = self.records.partition_point(|r| r.t < t - tol);
        self.records.get(idx).filter(|r| (r.t - t).abs() <= tol)
    }

    pub fn write_dir(&self, dir: &Path) -> Result<Vec<PathBuf>> {
        fs::create_dir_all(dir)?;
        let mut written = Vec::new();
        let path = dir.join(TRACE_FILE);
        write_atomic(&path, &self.trace_csv()?)?;
        written.push(path);
        let path = dir.join(SNAPSHOT_FILE);
        write_atomic(&path, &self.snapshot_csv()?)?;
        written.push(path);
        let path = dir.join(EVENTS_FILE);
        write_atomic(&path, serde_json::to_string_pretty(&self.events)?.as_bytes())?;
        written.push(path);
        let path = dir.join(META_FILE);
        write_atomic(&path, serde_json::to_string_pretty(&self.meta)?.as_bytes())?;
        written.push(path);
        Ok(written)
    }

    pub fn read_dir(dir: &Path) -> Result<Self> {
        let meta: TraceMeta = serde_json::from_slice(&read(dir, META_FILE)?)?;
        let events: Vec<Event> = serde_json::from_slice(&read(dir, EVENTS_FILE)?)?;
        let records = parse_trace_csv(&read(dir, TRACE_FILE)?, meta.dim)?;
        if records.len() != meta.records {
            return Err(Error::Trace(format!(
                "trace has {} records but metadata lists {}",
                records.len(),
                meta.records
            )));
        }
        let snapshots = match fs::read(dir.join(SNAPSHOT_FILE)) {
            Ok(bytes) => parse_snapshot_csv(&bytes)?,
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => Vec::new(),
            Err(e) => return Err(e.into()),
        };
        Ok(SimTrace {
            meta,
            records,
            events,
            snapshots,
        })
    }

    pub fn trace_csv(&self) -> Result<Vec<u8>> {
        let mut w = csv::WriterBuilder::new().terminator(csv::Terminator::Any(b'\n')).from_writer(Vec::new());
        let mut header = vec!["t".to_string()];
        header.extend((1..=self.meta.dim).map(|i| format!("X_{i}")));
        header.extend(["u_sup", "U", "mu", "phase", "norm", "w_sup", "d"].map(String::from));
        w.write_record(&header)?;
        for r in &self.records {
            let mut row = vec![fmt_f64(r.t)];
            row.extend(r.x.iter().map(|&v| fmt_f64(v)));
            row.push(fmt_f64(r.u_sup));
            row.push(fmt_f64(r.u));
            row.push(fmt_f64(r.mu));
            row.push(r.phase.as_str().to_string());
            row.push(fmt_f64(r.norm));
            row.push(fmt_f64(r.w_sup));
            row.push(fmt_f64(r.d));
            w.write_record(&row)?;
        }
        w.into_inner().map_err(|e| Error::Trace(e.to_string()))
    }

    pub fn snapshot_csv(&self) -> Result<Vec<u8>> {
        let mut w = csv::WriterBuilder::new().terminator(csv::Terminator::Any(b'\n')).from_writer(Vec::new());
        let mut header = vec!["t".to_string()];
        header.extend((0..=self.meta.grid_n).map(|k| format!("u_{k}")));
        w.write_record(&header)?;
        for s in &self.snapshots {
            let mut row = vec![fmt_f64(s.t)];
            row.extend(s.values.iter().map(|&v| fmt_f64(v)));
            w.write_record(&row)?;
        }
        w.into_inner().map_err(|e| Error::Trace(e.to_string()))
    }
}

fn read(dir: &Path, name: &str) -> Result<Vec<u8>> {
    fs::read(dir.join(name)).map_err(|e| Error::Trace(format!("{}: {e}", dir.join(name).display())))
}

/// Round-trip float formatting: 17 significant digits.
pub fn fmt_f64(v: f64) -> String {
    format!("{v:.16e}")
}

fn parse_f64(s: &str) -> Result<f64> {
    s.trim()
        .parse::<f64>()
        .map_err(|_| Error::Trace(format!("not a number: {s:?}")))
}

pub fn parse_trace_csv(bytes: &[u8], dim: usize) -> Result<Vec<TraceRecord>> {
    let mut rdr = csv::ReaderBuilder::new().from_reader(bytes);
    let expected = dim + 8;
    let headers = rdr.headers()?.clone();
    if headers.len() != expected || &headers[0] != "t" {
        return Err(Error::Trace(format!("unexpected trace header {headers:?}")));
    }
    let mut out = Vec::new();
    for row in rdr.records() {
        let row = row?;
        if row.len() != expected {
            return Err(Error::Trace(format!("trace row has {} fields, expected {expected}", row.len())));
        }
        let f = |i: usize| parse_f64(&row[i]);
        let x = (1..=dim).map(f).collect::<Result<Vec<_>>>()?;
        out.push(TraceRecord {
            t: f(0)?,
            x,
            u_sup: f(dim + 1)?,
            u: f(dim + 2)?,
            mu: f(dim + 3)?,
            phase: RecordPhase::parse(&row[dim + 4])?,
            norm: f(dim + 5)?,
            w_sup: f(dim + 6)?,
            d: f(dim + 7)?,
        });
    }
    Ok(out)
}

pub fn parse_snapshot_csv(bytes: &[u8]) -> Result<Vec<Snapshot>> {
    let mut rdr = csv::ReaderBuilder::new().from_reader(bytes);
    let mut out = Vec::new();
    for row in rdr.records() {
        let row = row?;
        let vals = row.iter().map(parse_f64).collect::<Result<Vec<_>>>()?;
        out.push(Snapshot {
            t: vals[0],
            values: vals[1..].to_vec(),
        });
    }
    Ok(out)
}

/// Writes through a temporary file in the same directory, then renames.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = path.parent().unwrap_or_else(|| Path::new("."));
    let name = path
        .file_name()
        .ok_or_else(|| Error::Trace(format!("not a file path: {}", path.display())))?;
    let tmp = dir.join(format!(".{}.tmp", name.to_string_lossy()));
    {
        let mut f = fs::File::create(&tmp)?;
        f.write_all(bytes)?;
        f.sync_all()?;
    }
    fs::rename(&tmp, path)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::supervisor::EventKind;

    fn sample() -> SimTrace {
        let records = (0..3)
            .map(|k| TraceRecord {
                t: k as f64 * 0.1,
                x: vec![1.0 / 3.0, -k as f64],
                u_sup: 0.5,
                u: if k == 0 { 0.0 } else { -0.1 * k as f64 },
                mu: if k == 0 { f64::NAN } else { 2.0 },
                phase: if k == 0 { RecordPhase::ZoomOut } else { RecordPhase::ZoomIn },
                norm: 1.0 + k as f64,
                w_sup: f64::NAN,
                d: 1e-300,
            })
            .collect();
        SimTrace {
            meta: TraceMeta {
                scenario: "t".into(),
                plant: "p".into(),
                mode: Mode::StateQ,
                dim: 2,
                grid_n: 2,
                dt: 0.1,
                steps: 2,
                record_stride: 1,
                records: 3,
                initial_norm: 1.0,
                t1_star: Some(0.1),
                seed: 0,
                input_hold: InputHold::Linear,
                failure: None,
                warnings: vec![],
            },
            records,
            events: vec![Event {
                t: 0.1,
                kind: EventKind::PhaseChange,
                mu_before: 2.0,
                mu_after: 2.0,
                phase: Phase::ZoomIn,
            }],
            snapshots: vec![Snapshot {
                t: 0.0,
                values: vec![0.1, 0.2, 0.3],
            }],
        }
    }

    fn same(a: &SimTrace, b: &SimTrace) -> bool {
        a.trace_csv().unwrap() == b.trace_csv().unwrap() && a.meta == b.meta && a.events == b.events
            && a.snapshots == b.snapshots
    }

    #[test]
    fn directory_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let trace = sample();
        trace.write_dir(dir.path()).unwrap();
        let back = SimTrace::read_dir(dir.path()).unwrap();
        assert!(same(&trace, &back));
        assert_eq!(back.records[0].x[0], 1.0 / 3.0);
        assert!(back.records[0].mu.is_nan());
    }

    #[test]
    fn header_layout() {
        let csv = String::from_utf8(sample().trace_csv().unwrap()).unwrap();
        assert!(csv.starts_with("t,X_1,X_2,u_sup,U,mu,phase,norm,w_sup,d\n"));
        assert!(!csv.contains('\r'));
    }

    #[test]
    fn truncated_trace_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        sample().write_dir(dir.path()).unwrap();
        let path = dir.path().join(TRACE_FILE);
        let text = fs::read_to_string(&path).unwrap();
        let cut = &text[..text.len() - 30];
        fs::write(&path, cut).unwrap();
        assert!(SimTrace::read_dir(dir.path()).is_err());

        let lines: Vec<&str> = text.lines().collect();
        fs::write(&path, lines[..lines.len() - 1].join("\n") + "\n").unwrap();
        assert!(matches!(SimTrace::read_dir(dir.path()), Err(Error::Trace(_))));
    }

    #[test]
    fn record_lookup() {
        let t = sample();
        assert_eq!(t.record_at(0.1).unwrap().u, -0.1);
        assert!(t.record_at(0.05).is_none());
    }
}
