//! Fixed-step simulation of the ODE coupled to the transport PDE.
//!
//! The step is locked to `dt = D / N`, so the transport equation is solved
//! exactly by shifting the actuator grid one cell toward `x = 0` per step. The
//! ODE is advanced by RK4 with `u(0, .)` read from the two leading grid samples.

use crate::error::{Error, Result};
use crate::model::{pair_norm, ActuatorGrid, CompositeState, PlantSpec};
use crate::ode::rk4_step_timed;
use crate::predictor::{backstepping_direct, predictor_exact, predictor_quantized};
use crate::quantizer::quantize_input;
use crate::scenario::{resolve, InputHold, Mode, Resolved, ScenarioConfig};
use crate::supervisor::{advance, Schedule, SupervisorState, TriggerRule};
use crate::trace::{RecordPhase, SimTrace, Snapshot, TraceMeta, TraceRecord};

/// Advances `(X, u)` by one grid step, filling the boundary node with `u_now`.
pub fn step(plant: &PlantSpec, u_now: f64, state: &CompositeState, hold: InputHold) -> Result<CompositeState> {
    let cells = state.u.cells();
    let dt = plant.delay / cells as f64;
    let v = state.u.values();
    let (u0, u1) = (v[0], v[1]);
    let x = rk4_step_timed(
        |s, x, out| {
            let input = match hold {
                InputHold::Linear => u0 + s * (u1 - u0),
                InputHold::Zoh => u0,
            };
            plant.eval(x, input, out)
        },
        &state.x,
        dt,
    );
    if x.iter().any(|v| !v.is_finite()) || !u_now.is_finite() {
        return Err(Error::NonFinite { context: "simulation step" });
    }
    let mut next = Vec::with_capacity(cells + 1);
    next.extend_from_slice(&v[1..]);
    next.push(u_now);
    Ok(CompositeState::new(x, ActuatorGrid::from_samples(next)?, state.t + dt))
}

struct Control {
    u: f64,
    /// `d` or `dbar`, when computed.
    mismatch: f64,
}

fn control(r: &Resolved, sup: Option<&SupervisorState>, x: &[f64], u: &ActuatorGrid, diagnose: bool) -> Result<Control> {
    let plant = &r.plant;
    let fb = &r.feedback;
    let nominal = |x: &[f64], u: &ActuatorGrid| -> Result<f64> { Ok(fb.eval(predictor_exact(plant, x, u)?.terminal())) };
    let active = sup.is_some_and(|s| s.control_active());
    let out = match r.config.mode {
        Mode::Nominal => Control {
            u: nominal(x, u)?,
            mismatch: f64::NAN,
        },
        Mode::OpenLoop => Control {
            u: 0.0,
            mismatch: f64::NAN,
        },
        Mode::StateQ if active => {
            let mu = sup.expect("active").zoom()?;
            let uq = fb.eval(predictor_quantized(plant, &r.qspec, mu, x, u)?.terminal());
            let mismatch = if diagnose { uq - nominal(x, u)? } else { f64::NAN };
            Control { u: uq, mismatch }
        }
        Mode::InputQ if active => {
            let mu = sup.expect("active").zoom()?;
            let u_nom = nominal(x, u)?;
            let uq = quantize_input(&r.qspec, mu, u_nom)?;
            Control {
                u: uq,
                mismatch: u_nom - uq,
            }
        }
        Mode::StateQ | Mode::InputQ => Control {
            u: 0.0,
            mismatch: f64::NAN,
        },
    };
    if !out.u.is_finite() {
        return Err(Error::NonFinite { context: "control law" });
    }
    Ok(out)
}

/// Resolves and runs a configuration.
pub fn run(config: &ScenarioConfig) -> Result<SimTrace> {
    run_resolved(&resolve(config)?)
}

pub fn run_resolved(r: &Resolved) -> Result<SimTrace> {
    match run_partial(r) {
        (trace, None) => Ok(trace),
        (_, Some(e)) => Err(e),
    }
}

/// Runs to the horizon. On a numerical failure the trace up to that point is
/// returned together with the error.
pub fn run_partial(r: &Resolved) -> (SimTrace, Option<Error>) {
    let c = &r.config;
    let steps = c.steps();
    let mut state = CompositeState::new(c.x0.clone(), r.u0.clone(), 0.0);
    let mut sup = c.mode.uses_supervisor().then(|| {
        let rule = match c.mode {
            Mode::InputQ => TriggerRule::input(&r.ledger),
            Mode::OpenLoop => TriggerRule::Never,
            _ => TriggerRule::state(r.qspec, &r.ledger),
        };
        SupervisorState::new(Schedule::from_ledger(&r.ledger), rule)
    });

    let mut trace = SimTrace {
        meta: TraceMeta {
            scenario: c.name.clone(),
            plant: r.plant.name.clone(),
            mode: c.mode,
            dim: r.plant.n,
            grid_n: c.grid_n,
            dt: c.step(),
            steps,
            record_stride: c.record_stride,
            records: 0,
            initial_norm: state.norm(),
            t1_star: None,
            seed: c.seed,
            input_hold: c.input_hold,
            failure: None,
            warnings: r.warnings.clone(),
        },
        records: Vec::with_capacity(steps / c.record_stride + 2),
        events: Vec::new(),
        snapshots: Vec::new(),
    };

    let dt = c.step();
    let mut failure = None;
    for k in 0..=steps {
        let t = k as f64 * dt;
        let mut boundary_event = false;
        if let Some(s) = sup {
            match advance(s, t, &state.x, &state.u) {
                Ok((next, events)) => {
                    boundary_event = !events.is_empty();
                    if next.t1_star.is_some() && trace.meta.t1_star.is_none() {
                        trace.meta.t1_star = next.t1_star;
                    }
                    trace.events.extend(events);
                    sup = Some(next);
                }
                Err(e) => {
                    failure = Some(e);
                    break;
                }
            }
        }
        let diag_due = c.diagnostics_stride > 0 && (k % c.diagnostics_stride == 0 || boundary_event || k == steps);
        let record_due = k % c.record_stride == 0 || boundary_event || k == steps;
        let ctl = match control(r, sup.as_ref(), &state.x, &state.u, diag_due && record_due) {
            Ok(ctl) => ctl,
            Err(e) => {
                failure = Some(e);
                break;
            }
        };
        // The boundary sample at t = 0 belongs to the initial condition.
        if k > 0 {
            state.u.set_boundary(ctl.u);
        }

        if record_due {
            let w_sup = if diag_due {
                match backstepping_direct(&r.plant, &r.feedback, &state.x, &state.u) {
                    Ok(w) => w.sup_norm(),
                    Err(e) => {
                        failure = Some(e);
                        break;
                    }
                }
            } else {
                f64::NAN
            };
            trace.records.push(TraceRecord {
                t,
                x: state.x.clone(),
                u_sup: state.u.sup_norm(),
                u: ctl.u,
                mu: sup.map_or(f64::NAN, |s| s.mu),
                phase: sup.map_or(RecordPhase::Nominal, |s| s.phase.into()),
                norm: pair_norm(&state.x, state.u.values()),
                w_sup,
                d: ctl.mismatch,
            });
        }
        if c.snapshot_stride > 0 && (k % c.snapshot_stride == 0 || k == steps) {
            trace.snapshots.push(Snapshot {
                t,
                values: state.u.values().to_vec(),
            });
        }
        if k == steps {
            break;
        }
        match step(&r.plant, ctl.u, &state, c.input_hold) {
            Ok(next) => state = next,
            Err(e) => {
                failure = Some(e);
                break;
            }
        }
    }
    trace.meta.records = trace.records.len();
    trace.meta.failure = failure.as_ref().map(|e| e.to_string());
    (trace, failure)
}
