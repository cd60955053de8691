//! Piecewise-constant zoom schedule.
//!
//! Zoom-out: on `[(j-1) tau, j tau)` the zoom is `2 e^{2 L (j+1) tau} mu0`,
//! with the control held at zero, until the trigger test first passes at
//! `t1*`. Zoom-in: on window `i`, `[t1* + (i-1) T, t1* + i T)`, the zoom is
//! `Omega^{i-1} mu(t1*)`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gains::GainLedger;
use crate::model::{pair_norm, ActuatorGrid};
use crate::quantizer::{quantized_norm, QuantizerSpec, ZoomValue};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Phase {
    ZoomOut,
    ZoomIn,
}

impl Phase {
    pub fn as_str(self) -> &'static str {
        match self {
            Phase::ZoomOut => "zoom_out",
            Phase::ZoomIn => "zoom_in",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Schedule {
    pub tau: f64,
    pub mu0: f64,
    pub lipschitz: f64,
    /// Window length `T`.
    pub window: f64,
    pub omega: f64,
}

impl Schedule {
    pub fn from_ledger(ledger: &GainLedger) -> Self {
        Schedule {
            tau: ledger.tau,
            mu0: ledger.mu0,
            lipschitz: ledger.lipschitz,
            window: ledger.window,
            omega: ledger.omega,
        }
    }

    /// Zoom-out interval index `j` and zoom value at time `t`.
    pub fn zoom_out(&self, t: f64) -> (u64, f64) {
        let j = (t / self.tau).floor() as u64 + 1;
        let mu = 2.0 * (2.0 * self.lipschitz * (j + 1) as f64 * self.tau).exp() * self.mu0;
        (j, mu)
    }

    /// Zoom-in window index `i` (from 1) for `t >= t1_star`.
    pub fn window_index(&self, t1_star: f64, t: f64) -> u64 {
        ((t - t1_star) / self.window).floor().max(0.0) as u64 + 1
    }
}

/// How the zoom-out phase decides it may close the loop.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum TriggerRule {
    /// Quantized norm against `(MBar M - Delta) mu`.
    State { qspec: QuantizerSpec, level: f64 },
    /// Exact norm against `(M MBar / M5) mu`.
    Input { level: f64 },
    /// Never fires; open-loop runs stay zoomed out for the whole horizon.
    Never,
}

impl TriggerRule {
    pub fn state(qspec: QuantizerSpec, ledger: &GainLedger) -> Self {
        TriggerRule::State {
            qspec,
            level: ledger.state_trigger_level(),
        }
    }

    pub fn input(ledger: &GainLedger) -> Self {
        TriggerRule::Input {
            level: ledger.input_trigger_level(),
        }
    }

    pub fn test(&self, mu: ZoomValue, x: &[f64], u: &ActuatorGrid) -> Result<bool> {
        match *self {
            TriggerRule::State { ref qspec, level } => {
                Ok(quantized_norm(qspec, mu, x, u)? <= level * mu.get())
            }
            TriggerRule::Input { level } => Ok(pair_norm(x, u.values()) <= level * mu.get()),
            TriggerRule::Never => Ok(false),
        }
    }
}

/// `|mu q1(X/mu)| + ||mu q2(u/mu)||_inf <= (MBar M - Delta) mu`.
pub fn trigger_state(
    qspec: &QuantizerSpec,
    mu: ZoomValue,
    x: &[f64],
    u: &ActuatorGrid,
    ledger: &GainLedger,
) -> Result<bool> {
    TriggerRule::state(*qspec, ledger).test(mu, x, u)
}

/// `|X| + ||u||_inf <= (M MBar / M5) mu`.
pub fn trigger_input(mu: ZoomValue, x: &[f64], u: &ActuatorGrid, ledger: &GainLedger) -> bool {
    pair_norm(x, u.values()) <= ledger.input_trigger_level() * mu.get()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EventKind {
    PhaseChange,
    MuChange,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Event {
    pub t: f64,
    pub kind: EventKind,
    pub mu_before: f64,
    pub mu_after: f64,
    pub phase: Phase,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SupervisorState {
    pub phase: Phase,
    pub mu: f64,
    /// Zoom-out interval index.
    pub j: u64,
    /// Zoom-in window index; 0 until the trigger fires.
    pub i: u64,
    pub t1_star: Option<f64>,
    pub schedule: Schedule,
    pub rule: TriggerRule,
}

impl SupervisorState {
    pub fn new(schedule: Schedule, rule: TriggerRule) -> Self {
        let (j, mu) = schedule.zoom_out(0.0);
        SupervisorState {
            phase: Phase::ZoomOut,
            mu,
            j,
            i: 0,
            t1_star: None,
            schedule,
            rule,
        }
    }

    /// Fails with `NonFinite` once the schedule overflows or underflows.
    pub fn zoom(&self) -> Result<ZoomValue> {
        ZoomValue::new(self.mu).map_err(|_| Error::NonFinite { context: "zoom value" })
    }

    /// `mu(t1*)`, once triggered.
    pub fn mu_star(&self) -> Option<f64> {
        self.t1_star
            .map(|_| self.mu / self.schedule.omega.powi(self.i as i32 - 1))
    }

    pub fn control_active(&self) -> bool {
        self.phase == Phase::ZoomIn
    }
}

/// Zoom value at time `t` implied by the state's trigger time.
pub fn mu_at(s: &SupervisorState, t: f64) -> f64 {
    match (s.t1_star, s.mu_star()) {
        (Some(t1), Some(mu_star)) if t >= t1 => {
            let i = s.schedule.window_index(t1, t);
            mu_star * s.schedule.omega.powi(i as i32 - 1)
        }
        _ => s.schedule.zoom_out(t).1,
    }
}

/// One supervisor update at time `t` (monotone across calls).
pub fn advance(s: SupervisorState, t: f64, x: &[f64], u: &ActuatorGrid) -> Result<(SupervisorState, Vec<Event>)> {
    let mut next = s;
    let mut events = Vec::new();
    match s.phase {
        Phase::ZoomOut => {
            let (j, mu) = s.schedule.zoom_out(t);
            if mu != s.mu {
                events.push(Event {
                    t,
                    kind: EventKind::MuChange,
                    mu_before: s.mu,
                    mu_after: mu,
                    phase: Phase::ZoomOut,
                });
            }
            next.j = j;
            next.mu = mu;
            if s.rule.test(next.zoom()?, x, u)? {
                next.phase = Phase::ZoomIn;
                next.t1_star = Some(t);
                next.i = 1;
                events.push(Event {
                    t,
                    kind: EventKind::PhaseChange,
                    mu_before: mu,
                    mu_after: mu,
                    phase: Phase::ZoomIn,
                });
            }
        }
        Phase::ZoomIn => {
            let t1 = s.t1_star.expect("zoom-in has a trigger time");
            let i = s.schedule.window_index(t1, t);
            if i != s.i {
                let mu_star = s.mu_star().expect("triggered");
                let mu = mu_star * s.schedule.omega.powi(i as i32 - 1);
                events.push(Event {
                    t,
                    kind: EventKind::MuChange,
                    mu_before: s.mu,
                    mu_after: mu,
                    phase: Phase::ZoomIn,
                });
                next.i = i;
                next.mu = mu;
            }
        }
    }
    Ok((next, events))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gains::{compute_gains_from, DesignParams, PlantConstants};
    use crate::model::GesCertificate;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn ledger() -> GainLedger {
        compute_gains_from(
            &PlantConstants {
                lipschitz: 1.0,
                delay: 1.0,
                kappa0: 1.0,
                ges: GesCertificate::new(1.0, 1.0, 1.0).unwrap(),
            },
            &DesignParams {
                lambda: 8.0,
                eps: 0.1,
                nu: 0.1,
                delta: 0.05,
                range: 10.0,
                error_bound: 5e-5,
                mu0: 1.0,
                tau: 1.0,
            },
        )
        .unwrap()
    }

    fn qspec() -> QuantizerSpec {
        QuantizerSpec::new(10.0, 5e-5, 1e-8).unwrap()
    }

    #[test]
    fn zoom_out_value() {
        let s = SupervisorState::new(Schedule::from_ledger(&ledger()), TriggerRule::input(&ledger()));
        let mu = mu_at(&s, 0.5);
        assert!((mu - 2.0 * 4f64.exp()).abs() < 1e-9);
        assert!((mu - 109.196).abs() < 1e-3);
        assert_eq!(s.schedule.zoom_out(0.5).0, 1);
        assert_eq!(s.schedule.zoom_out(1.0).0, 2);
    }

    #[test]
    fn zoom_in_windows() {
        let g = ledger();
        let mut s = SupervisorState::new(Schedule::from_ledger(&g), TriggerRule::state(qspec(), &g));
        let u = ActuatorGrid::zeros(10);
        let (next, events) = advance(s, 0.0, &[0.0], &u).unwrap();
        s = next;
        assert_eq!(s.t1_star, Some(0.0));
        assert_eq!(events.len(), 1);
        let mu_star = s.mu;
        let t_window = g.window;
        assert_eq!(mu_at(&s, 0.5 * t_window), mu_star);
        assert!((mu_at(&s, 2.5 * t_window) - g.omega.powi(2) * mu_star).abs() < 1e-12 * mu_star);

        let (next, events) = advance(s, 1.2 * t_window, &[0.0], &u).unwrap();
        assert_eq!(next.i, 2);
        assert_eq!(events.len(), 1);
        assert!((next.mu - g.omega * mu_star).abs() < 1e-12 * mu_star);
        assert_eq!(next.mu_star(), Some(mu_star));
    }

    #[test]
    fn trigger_thresholds() {
        let g = ledger();
        let mu = ZoomValue::new(1.0).unwrap();
        let level = g.m_bar * g.range - g.error_bound;
        assert!((level - 0.01120).abs() < 1e-4, "level {level}");
        assert!(trigger_state(&qspec(), mu, &[0.0], &ActuatorGrid::zeros(10), &g).unwrap());
        assert!(trigger_input(mu, &[0.0], &ActuatorGrid::zeros(10), &g));

        let per_unit = g.input_trigger_level();
        assert!((per_unit - 10.0 * g.m_bar / g.m5).abs() < 1e-15);
        assert!((per_unit - 4.139e-3).abs() < 0.01e-3, "{per_unit}");
        assert!(trigger_input(mu, &[per_unit], &ActuatorGrid::zeros(10), &g));
        assert!(!trigger_input(mu, &[per_unit * (1.0 + 1e-9)], &ActuatorGrid::zeros(10), &g));
    }

    #[test]
    fn out_of_range_states_never_trigger() {
        let g = ledger();
        let q = qspec();
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        for _ in 0..1000 {
            let mu = ZoomValue::new(10f64.powf(rng.gen_range(-2.0..3.0))).unwrap();
            let scale = mu.get() * q.range * rng.gen_range(1.01..50.0);
            let x = [rng.gen_range(-1.0..1.0) * scale];
            let u = ActuatorGrid::from_fn(20, 1.0, |s| scale * (1.0 - s));
            assert!(pair_norm(&x, u.values()) > mu.get() * q.range);
            assert!(!trigger_state(&q, mu, &x, &u, &g).unwrap());
        }
    }

    #[test]
    fn untriggered_run_stays_zoomed_out() {
        let g = ledger();
        let mut s = SupervisorState::new(Schedule::from_ledger(&g), TriggerRule::state(qspec(), &g));
        let u = ActuatorGrid::from_fn(10, 1.0, |_| 1e12);
        let mut last = s.mu;
        for k in 0..100 {
            let (next, events) = advance(s, k as f64 * 0.1, &[1e12], &u).unwrap();
            assert!(events.iter().all(|e| e.kind == EventKind::MuChange));
            assert!(next.mu >= last);
            last = next.mu;
            s = next;
        }
        assert_eq!(s.phase, Phase::ZoomOut);
        assert!(s.t1_star.is_none());
    }

    #[test]
    fn never_rule_ignores_zero_state() {
        let g = ledger();
        let s = SupervisorState::new(Schedule::from_ledger(&g), TriggerRule::Never);
        let (next, _) = advance(s, 0.5, &[0.0], &ActuatorGrid::zeros(10)).unwrap();
        assert_eq!(next.phase, Phase::ZoomOut);
        assert!(next.t1_star.is_none());
    }

    #[test]
    fn zoom_overflow_is_non_finite() {
        let g = ledger();
        let s = SupervisorState::new(Schedule::from_ledger(&g), TriggerRule::Never);
        let err = advance(s, 1e4, &[1.0], &ActuatorGrid::zeros(10)).unwrap_err();
        assert!(matches!(err, Error::NonFinite { .. }));
    }
}
