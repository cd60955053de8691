//! Checks of the quantitative stability bounds along simulated traces.
//!
//! Every check is a one-sided bound `lhs <= rhs`. Violation ratios are
//! `lhs / (rhs (1 + tol))` with the right side floored at `1e-300`, so a ratio
//! of at most one is exactly a pass.

use std::fmt::Write as _;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::gains::GainLedger;
use crate::model::{pair_norm, ActuatorGrid, FeedbackSpec, PlantSpec};
use crate::predictor::backstepping_direct;
use crate::scenario::Mode;
use crate::supervisor::EventKind;
use crate::trace::{SimTrace, TraceRecord};

/// Relative slack on every trace bound.
pub const TRACE_TOL: f64 = 1e-9;
const FLOOR: f64 = 1e-300;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CheckStatus {
    Pass,
    Fail,
    Skipped,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MarginStats {
    pub samples: usize,
    pub min_ratio: f64,
    pub mean_ratio: f64,
    pub max_ratio: f64,
}

#[derive(Debug, Clone, Default)]
struct Tally {
    n: usize,
    min: f64,
    sum: f64,
    max: f64,
    worst_t: Option<f64>,
}

impl Tally {
    fn push(&mut self, ratio: f64, t: Option<f64>) {
        if self.n == 0 {
            self.min = ratio;
            self.max = ratio;
            self.worst_t = t;
        } else {
            self.min = self.min.min(ratio);
            if ratio > self.max || ratio.is_nan() {
                self.max = ratio;
                self.worst_t = t;
            }
        }
        self.sum += ratio;
        self.n += 1;
    }

    fn stats(&self) -> MarginStats {
        MarginStats {
            samples: self.n,
            min_ratio: if self.n == 0 { 0.0 } else { self.min },
            mean_ratio: if self.n == 0 { 0.0 } else { self.sum / self.n as f64 },
            max_ratio: if self.n == 0 { 0.0 } else { self.max },
        }
    }
}

fn ratio(lhs: f64, rhs: f64, tol: f64) -> f64 {
    lhs / (rhs.max(FLOOR) * (1.0 + tol))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckEntry {
    pub name: String,
    pub status: CheckStatus,
    pub holds: bool,
    pub max_violation_ratio: f64,
    pub time_of_worst: Option<f64>,
    pub margin_stats: MarginStats,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub note: Option<String>,
}

impl CheckEntry {
    fn from_tally(name: &str, tally: &Tally, note: Option<String>) -> Self {
        let stats = tally.stats();
        let holds = stats.max_ratio <= 1.0;
        CheckEntry {
            name: name.into(),
            status: if holds { CheckStatus::Pass } else { CheckStatus::Fail },
            holds,
            max_violation_ratio: stats.max_ratio,
            time_of_worst: tally.worst_t,
            margin_stats: stats,
            note,
        }
    }

    pub fn skipped(name: &str, note: impl Into<String>) -> Self {
        CheckEntry {
            name: name.into(),
            status: CheckStatus::Skipped,
            holds: true,
            max_violation_ratio: 0.0,
            time_of_worst: None,
            margin_stats: Tally::default().stats(),
            note: Some(note.into()),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnvelopeReport {
    pub entries: Vec<CheckEntry>,
    pub verdict: bool,
}

impl EnvelopeReport {
    pub fn new(entries: Vec<CheckEntry>) -> Self {
        let verdict = entries.iter().all(|e| e.status != CheckStatus::Fail);
        EnvelopeReport { entries, verdict }
    }

    pub fn entry(&self, name: &str) -> Option<&CheckEntry> {
        self.entries.iter().find(|e| e.name == name)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }

    pub fn table(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "{:<22} {:<8} {:>14} {:>14}  note", "check", "status", "max ratio", "t worst");
        for e in &self.entries {
            let status = match e.status {
                CheckStatus::Pass => "pass",
                CheckStatus::Fail => "FAIL",
                CheckStatus::Skipped => "skipped",
            };
            let t = e.time_of_worst.map_or("-".to_string(), |t| format!("{t:.6}"));
            let _ = writeln!(
                out,
                "{:<22} {:<8} {:>14.6e} {:>14}  {}",
                e.name,
                status,
                e.max_violation_ratio,
                t,
                e.note.as_deref().unwrap_or("")
            );
        }
        let _ = writeln!(out, "verdict: {}", if self.verdict { "pass" } else { "FAIL" });
        out
    }
}

fn trigger_time_bound(trace: &SimTrace, ledger: &GainLedger) -> Option<f64> {
    let n0 = trace.meta.initial_norm;
    match trace.meta.mode {
        Mode::InputQ => ledger.input_trigger_time_bound(n0),
        _ => ledger.state_trigger_time_bound(n0),
    }
}

/// Open-loop growth `|X| + ||u|| <= 2 e^{L t} N0` before the trigger, and the
/// trigger-time bound. The trigger time lives on the step grid, so the bound is
/// relaxed by one step.
pub fn check_open_loop(trace: &SimTrace, ledger: &GainLedger) -> CheckEntry {
    const NAME: &str = "open_loop";
    if trace.meta.mode == Mode::Nominal {
        return CheckEntry::skipped(NAME, "nominal trace has no zoom-out phase");
    }
    let n0 = trace.meta.initial_norm;
    let t1 = trace.t1_star();
    let mut tally = Tally::default();
    for r in trace.records.iter().filter(|r| t1.is_none_or(|t1| r.t < t1)) {
        let rhs = 2.0 * (ledger.lipschitz * r.t).exp() * n0;
        tally.push(ratio(r.norm, rhs, TRACE_TOL), Some(r.t));
    }
    let mut notes = Vec::new();
    match (t1, trigger_time_bound(trace, ledger)) {
        (Some(t1), Some(bound)) => {
            tally.push(t1 / (bound + trace.meta.dt), Some(t1));
            notes.push(format!("t1* = {t1:.6} <= {bound:.6}"));
        }
        (Some(t1), None) => notes.push(format!("t1* = {t1:.6}, log bound vacuous")),
        (None, _) if trace.meta.mode == Mode::OpenLoop => notes.push("open-loop run, no trigger".into()),
        (None, _) => notes.push("missing trigger: run never closed the loop".into()),
    }
    CheckEntry::from_tally(NAME, &tally, Some(notes.join("; ")))
}

/// Window-end majorant `|X| + ||w|| <= Omega^i C mu(t1*)` and the in-window bound
/// `max{M0 e^{-delta (t - t_i)} ||(X, w)(t_i)||, Omega C mu_i}`.
pub fn check_contraction(trace: &SimTrace, ledger: &GainLedger) -> CheckEntry {
    const NAME: &str = "contraction";
    let c = match trace.meta.mode {
        Mode::StateQ => ledger.state_contraction_constant(),
        Mode::InputQ => ledger.input_contraction_constant(),
        _ => return CheckEntry::skipped(NAME, "no zoom-in phase in this mode"),
    };
    let Some(t1) = trace.t1_star() else {
        return CheckEntry::skipped(NAME, "zoom-in never reached");
    };
    let Some(mu_star) = trace
        .events
        .iter()
        .find(|e| e.kind == EventKind::PhaseChange)
        .map(|e| e.mu_after)
    else {
        return CheckEntry::skipped(NAME, "no phase change event");
    };

    let mut starts = vec![t1];
    starts.extend(trace.window_events().map(|e| e.t));
    let omega = ledger.omega;
    let mut tally = Tally::default();
    let mut window_ends = 0;
    let mut missing_w = 0;
    for (i, &start) in starts.iter().enumerate() {
        let mu_i = mu_star * omega.powi(i as i32);
        let end = starts.get(i + 1).copied();
        let Some(at_start) = trace.record_at(start).filter(|r| r.w_sup.is_finite()) else {
            missing_w += 1;
            continue;
        };
        let n_start = at_start.xw_norm();
        let in_window = trace
            .records
            .iter()
            .filter(|r| r.t >= start && end.is_none_or(|e| r.t < e) && r.w_sup.is_finite());
        for r in in_window {
            let rhs = (ledger.m0 * (-ledger.delta * (r.t - start)).exp() * n_start).max(omega * c * mu_i);
            tally.push(ratio(r.xw_norm(), rhs, TRACE_TOL), Some(r.t));
        }
        if let Some(end) = end {
            match trace.record_at(end).filter(|r| r.w_sup.is_finite()) {
                Some(r) => {
                    let rhs = omega.powi(i as i32 + 1) * c * mu_star;
                    tally.push(ratio(r.xw_norm(), rhs, TRACE_TOL), Some(r.t));
                    window_ends += 1;
                }
                None => missing_w += 1,
            }
        }
    }
    let mut note = format!("{window_ends} window ends checked");
    if missing_w > 0 {
        let _ = write!(note, "; {missing_w} boundaries lacked w");
    }
    CheckEntry::from_tally(NAME, &tally, Some(note))
}

/// Number of complete zoom-in windows whose end norm was checked.
pub fn checked_windows(entry: &CheckEntry) -> usize {
    entry
        .note
        .as_deref()
        .and_then(|n| n.split_whitespace().next())
        .and_then(|n| n.parse().ok())
        .unwrap_or(0)
}

/// Pointwise envelope `gamma N0^{2 - ln(Omega)/(T L)} e^{(ln(Omega)/T) t}`
/// (with `gamma_bar` under input quantization), evaluated in logs.
pub fn check_theorem_envelope(trace: &SimTrace, ledger: &GainLedger) -> CheckEntry {
    const NAME: &str = "envelope";
    let gamma = match trace.meta.mode {
        Mode::StateQ => ledger.gamma,
        Mode::InputQ => ledger.gamma_bar,
        _ => return CheckEntry::skipped(NAME, "no envelope for this mode"),
    };
    let rate = ledger.envelope_rate();
    let n0 = trace.meta.initial_norm;
    let mut tally = Tally::default();
    if !(rate < 0.0) || !gamma.is_finite() {
        tally.push(f64::INFINITY, None);
        return CheckEntry::from_tally(NAME, &tally, Some(format!("no decay: rate {rate}, gamma {gamma}")));
    }
    let log_scale = gamma.ln() + ledger.envelope_power() * n0.ln();
    for r in &trace.records {
        let value = if r.norm == 0.0 {
            0.0
        } else {
            let log_rhs = (log_scale + rate * r.t).max(FLOOR.ln());
            (r.norm.ln() - log_rhs).exp() / (1.0 + TRACE_TOL)
        };
        tally.push(value, Some(r.t));
    }
    let regime = if n0 < 1.0 { "sub-unit" } else { "super-unit" };
    CheckEntry::from_tally(NAME, &tally, Some(format!("rate {rate:.6e}; {regime} initial norm {n0:.6e}")))
}

/// Audits `M4 ||(X, u)|| <= ||(X, w)|| <= M3 ||(X, u)||` on the given samples.
pub fn check_norm_equivalence(
    plant: &PlantSpec,
    fb: &FeedbackSpec,
    samples: &[(Vec<f64>, ActuatorGrid)],
    m4: f64,
    m3: f64,
) -> Result<CheckEntry> {
    let mut tally = Tally::default();
    for (x, u) in samples {
        let w = backstepping_direct(plant, fb, x, u)?;
        let xu = pair_norm(x, u.values());
        let xw = pair_norm(x, w.values());
        if xu == 0.0 && xw == 0.0 {
            tally.push(0.0, None);
            continue;
        }
        tally.push(ratio(xw, m3 * xu, TRACE_TOL).max(ratio(m4 * xu, xw, TRACE_TOL)), None);
    }
    Ok(CheckEntry::from_tally("norm_equivalence", &tally, None))
}

/// Random `(X, u)` pairs with log-uniform scale and piecewise-constant `u`.
pub fn random_samples(plant: &PlantSpec, cells: usize, count: usize, seed: u64) -> Vec<(Vec<f64>, ActuatorGrid)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..count)
        .map(|_| {
            let scale = 10f64.powf(rng.gen_range(-3.0..2.0));
            let x: Vec<f64> = (0..plant.n).map(|_| rng.gen_range(-scale..scale)).collect();
            let pieces = rng.gen_range(1..6);
            let levels: Vec<f64> = (0..pieces).map(|_| rng.gen_range(-scale..scale)).collect();
            let u = ActuatorGrid::from_fn(cells, plant.delay, |s| {
                levels[((s / plant.delay * pieces as f64) as usize).min(pieces - 1)]
            });
            (x, u)
        })
        .collect()
}

/// Every check that applies to the trace's mode.
pub fn verify_trace(trace: &SimTrace, ledger: &GainLedger) -> EnvelopeReport {
    EnvelopeReport::new(vec![
        check_open_loop(trace, ledger),
        check_contraction(trace, ledger),
        check_theorem_envelope(trace, ledger),
    ])
}

/// Final composite norm relative to the initial one.
pub fn decay_ratio(trace: &SimTrace) -> Option<f64> {
    let n0 = trace.meta.initial_norm;
    let last: &TraceRecord = trace.final_record()?;
    Some(if n0 == 0.0 { 0.0 } else { last.norm / n0 })
}
