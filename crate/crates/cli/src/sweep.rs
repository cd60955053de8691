//! Parameter sweeps: the cross product of a grid of overrides, run in parallel.

use std::fmt::Write as _;
use std::path::Path;

use anyhow::Context;
use rayon::prelude::*;
use serde::Deserialize;

use qpl_core::gains::Requirement;
use qpl_core::scenario::{resolve, Mode, ScenarioConfig};
use qpl_core::sim::run_partial;
use qpl_core::trace::{fmt_f64, write_atomic};
use qpl_core::verify::{decay_ratio, verify_trace};
use qpl_core::CheckStatus;

pub const SUMMARY_FILE: &str = "summary.csv";

/// Decay factor below which a run counts as converged.
const CONVERGED: f64 = 1e-3;

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepConfig {
    pub base: ScenarioConfig,
    #[serde(default)]
    pub grid: Grid,
}

/// Axes left out keep the base value; an axis given as `[]` empties the sweep.
#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Grid {
    #[serde(rename = "Delta")]
    pub delta: Option<Vec<f64>>,
    #[serde(rename = "M")]
    pub range: Option<Vec<f64>>,
    pub mu0: Option<Vec<f64>>,
    pub tau: Option<Vec<f64>>,
    pub lambda: Option<Vec<f64>>,
    pub grid_n: Option<Vec<usize>>,
    pub x0_scale: Option<Vec<f64>>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Point {
    pub delta: f64,
    pub range: f64,
    pub mu0: f64,
    pub tau: f64,
    /// `None` keeps the base choice (possibly the default).
    pub lambda: Option<f64>,
    pub grid_n: usize,
    pub x0_scale: f64,
}

impl SweepConfig {
    pub fn load(path: &Path) -> anyhow::Result<Self> {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        let is_toml = path.extension().is_some_and(|e| e == "toml");
        let cfg = if is_toml {
            toml::from_str(&text).with_context(|| format!("parsing {}", path.display()))?
        } else {
            serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))?
        };
        Ok(cfg)
    }

    pub fn points(&self) -> Vec<Point> {
        let b = &self.base;
        let g = &self.grid;
        let axis = |v: &Option<Vec<f64>>, d: f64| v.clone().unwrap_or_else(|| vec![d]);
        let deltas = axis(&g.delta, b.quantizer.error_bound);
        let ranges = axis(&g.range, b.quantizer.range);
        let mu0s = axis(&g.mu0, b.design.mu0);
        let taus = axis(&g.tau, b.design.tau);
        let lambdas: Vec<Option<f64>> = match &g.lambda {
            Some(v) => v.iter().copied().map(Some).collect(),
            None => vec![b.design.lambda],
        };
        let ns = g.grid_n.clone().unwrap_or_else(|| vec![b.grid_n]);
        let scales = axis(&g.x0_scale, 1.0);

        let mut out = Vec::new();
        for &delta in &deltas {
            for &range in &ranges {
                for &mu0 in &mu0s {
                    for &tau in &taus {
                        for &lambda in &lambdas {
                            for &grid_n in &ns {
                                for &x0_scale in &scales {
                                    out.push(Point { delta, range, mu0, tau, lambda, grid_n, x0_scale });
                                }
                            }
                        }
                    }
                }
            }
        }
        out
    }

    /// The base scenario with one grid point applied. The dead zone scales
    /// with `Delta` so the ratio `M_hat / Delta` stays fixed.
    pub fn scenario(&self, p: &Point) -> ScenarioConfig {
        let mut c = self.base.clone();
        let base_delta = self.base.quantizer.error_bound;
        if base_delta > 0.0 {
            c.quantizer.dead_zone = self.base.quantizer.dead_zone * p.delta / base_delta;
        }
        c.quantizer.error_bound = p.delta;
        c.quantizer.range = p.range;
        c.design.mu0 = p.mu0;
        c.design.tau = p.tau;
        if p.lambda != self.base.design.lambda {
            // Dependent choices are re-derived for the new lambda.
            c.design.lambda = p.lambda;
            c.design.eps = None;
            c.design.nu = None;
            c.design.delta = None;
        }
        c.grid_n = p.grid_n;
        for x in &mut c.x0 {
            *x *= p.x0_scale;
        }
        c
    }
}

#[derive(Debug, Clone, Default)]
pub struct Row {
    pub thm1_ok: Option<bool>,
    pub thm2_ok: Option<bool>,
    pub t1_star: Option<f64>,
    pub windows_to_convergence: Option<usize>,
    pub max_envelope_ratio: Option<f64>,
    pub final_norm: Option<f64>,
    pub verdict: Option<bool>,
    pub error: Option<String>,
}

pub fn run_point(cfg: &ScenarioConfig) -> Row {
    let mut row = Row::default();
    let resolved = match resolve(cfg) {
        Ok(r) => r,
        Err(e) => {
            row.error = Some(e.to_string());
            return row;
        }
    };
    let ledger = &resolved.ledger;
    row.thm1_ok = Some(ledger.satisfies(Requirement::StateQuantization));
    row.thm2_ok = Some(ledger.satisfies(Requirement::InputQuantization));
    let (trace, failure) = run_partial(&resolved);
    row.t1_star = trace.t1_star();
    row.final_norm = trace.final_record().map(|r| r.norm);
    if let Some(e) = failure {
        row.error = Some(e.to_string());
        row.verdict = Some(false);
        return row;
    }
    let report = verify_trace(&trace, ledger);
    row.max_envelope_ratio = report
        .entry("envelope")
        .filter(|e| e.status != CheckStatus::Skipped)
        .map(|e| e.max_violation_ratio);
    let converged = decay_ratio(&trace).is_some_and(|r| r < CONVERGED);
    row.verdict = Some(report.verdict && converged);
    row.windows_to_convergence = windows_to_convergence(&trace, cfg.mode, ledger.window);
    row
}

/// Zoom-in windows elapsed before the composite norm first drops below
/// `CONVERGED` times its initial value.
fn windows_to_convergence(trace: &qpl_core::SimTrace, mode: Mode, window: f64) -> Option<usize> {
    let target = CONVERGED * trace.meta.initial_norm;
    let hit = trace.records.iter().find(|r| r.norm < target)?;
    if !mode.uses_supervisor() {
        return Some(0);
    }
    let t1 = trace.t1_star()?;
    if hit.t <= t1 {
        return Some(0);
    }
    Some(((hit.t - t1) / window).ceil() as usize)
}

const HEADER: &str = "index,Delta,M,mu0,tau,lambda,grid_n,x0_scale,thm1_ok,thm2_ok,t1_star,windows_to_convergence,max_envelope_ratio,final_norm,verdict,error";

fn opt<T>(v: Option<T>, f: impl Fn(T) -> String) -> String {
    v.map(f).unwrap_or_default()
}

pub fn summary_csv(points: &[Point], rows: &[Row]) -> anyhow::Result<String> {
    let mut w = csv::WriterBuilder::new().has_headers(false).from_writer(Vec::new());
    w.write_record(HEADER.split(','))?;
    for (i, (p, r)) in points.iter().zip(rows).enumerate() {
        w.write_record([
            i.to_string(),
            fmt_f64(p.delta),
            fmt_f64(p.range),
            fmt_f64(p.mu0),
            fmt_f64(p.tau),
            opt(p.lambda, fmt_f64),
            p.grid_n.to_string(),
            fmt_f64(p.x0_scale),
            opt(r.thm1_ok, |b| b.to_string()),
            opt(r.thm2_ok, |b| b.to_string()),
            opt(r.t1_star, fmt_f64),
            opt(r.windows_to_convergence, |n| n.to_string()),
            opt(r.max_envelope_ratio, fmt_f64),
            opt(r.final_norm, fmt_f64),
            opt(r.verdict, |b| b.to_string()),
            r.error.clone().unwrap_or_default(),
        ])?;
    }
    let bytes = w.into_inner().map_err(|e| anyhow::anyhow!("{e}"))?;
    Ok(String::from_utf8(bytes)?)
}

fn thread_count() -> anyhow::Result<usize> {
    match std::env::var("QPL_THREADS") {
        Ok(s) => s.trim().parse().with_context(|| format!("QPL_THREADS={s:?} is not a count")),
        Err(_) => Ok(0),
    }
}

pub fn cmd_sweep(config: &Path, out: &Path) -> anyhow::Result<()> {
    let cfg = SweepConfig::load(config)?;
    let points = cfg.points();
    let pool = rayon::ThreadPoolBuilder::new().num_threads(thread_count()?).build()?;
    let rows: Vec<Row> = pool.install(|| points.par_iter().map(|p| run_point(&cfg.scenario(p))).collect());

    std::fs::create_dir_all(out).with_context(|| format!("creating {}", out.display()))?;
    let path = out.join(SUMMARY_FILE);
    write_atomic(&path, summary_csv(&points, &rows)?.as_bytes())?;

    let mut msg = String::new();
    let failed = rows.iter().filter(|r| r.error.is_some()).count();
    let _ = write!(msg, "{} runs written to {}", rows.len(), path.display());
    if failed > 0 {
        let _ = write!(msg, " ({failed} with errors)");
    }
    msg.push('\n');
    crate::emit(&msg);
    Ok(())
}
