//! Derived constants, feasibility conditions and GES certificate estimation.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{euclidean_norm, FeedbackSpec, GesCertificate, PlantSpec};
use crate::ode::rk4_step;
use crate::predictor::gronwall_factor;

/// Plant-side inputs to the ledger.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PlantConstants {
    pub lipschitz: f64,
    pub delay: f64,
    pub kappa0: f64,
    pub ges: GesCertificate,
}

impl PlantConstants {
    pub fn of(plant: &PlantSpec, fb: &FeedbackSpec) -> Self {
        PlantConstants {
            lipschitz: plant.lipschitz,
            delay: plant.delay,
            kappa0: fb.kappa0,
            ges: fb.ges,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DesignParams {
    pub lambda: f64,
    pub eps: f64,
    pub nu: f64,
    /// Decay rate `delta`, not to be confused with the quantizer error bound.
    pub delta: f64,
    #[serde(rename = "M")]
    pub range: f64,
    #[serde(rename = "Delta")]
    pub error_bound: f64,
    pub mu0: f64,
    pub tau: f64,
}

/// Serializes non-finite values as `null` and reads `null` back as NaN.
mod nullable {
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(v: &f64, s: S) -> Result<S::Ok, S::Error> {
        if v.is_finite() {
            s.serialize_f64(*v)
        } else {
            s.serialize_none()
        }
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<f64, D::Error> {
        Ok(Option::<f64>::deserialize(d)?.unwrap_or(f64::NAN))
    }
}

/// Every constant of the switched design, with feasibility flags. Serializes
/// to a flat JSON object.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GainLedger {
    #[serde(rename = "L")]
    pub lipschitz: f64,
    #[serde(rename = "D")]
    pub delay: f64,
    pub kappa0: f64,
    #[serde(rename = "M_sigma")]
    pub m_sigma: f64,
    pub sigma: f64,
    pub b3: f64,

    pub lambda: f64,
    pub eps: f64,
    pub nu: f64,
    pub delta: f64,
    #[serde(rename = "M")]
    pub range: f64,
    #[serde(rename = "Delta")]
    pub error_bound: f64,
    pub mu0: f64,
    pub tau: f64,

    #[serde(rename = "M3", with = "nullable")]
    pub m3: f64,
    #[serde(rename = "M4", with = "nullable")]
    pub m4: f64,
    #[serde(rename = "M5", with = "nullable")]
    pub m5: f64,
    #[serde(rename = "MBar", with = "nullable")]
    pub m_bar: f64,
    #[serde(with = "nullable")]
    pub phi: f64,
    #[serde(with = "nullable")]
    pub phi1: f64,
    #[serde(rename = "M0", with = "nullable")]
    pub m0: f64,
    #[serde(rename = "Omega", with = "nullable")]
    pub omega: f64,
    /// Zoom-in window length `T`.
    #[serde(rename = "T", with = "nullable")]
    pub window: f64,
    #[serde(with = "nullable")]
    pub gamma: f64,
    #[serde(with = "nullable")]
    pub gamma_bar: f64,

    #[serde(with = "nullable")]
    pub thm1_threshold: f64,
    #[serde(with = "nullable")]
    pub thm2_threshold: f64,
    #[serde(with = "nullable")]
    pub small_gain_margin: f64,

    pub small_gain_ok: bool,
    pub phi_ok: bool,
    pub phi1_ok: bool,
    pub thm1_ok: bool,
    pub thm2_ok: bool,
    pub positive_log_arg_ok: bool,
}

/// `((1+eps)/(1+lambda)) e^{D(nu+1)} (b3 (eps+1) + 1)`; feasibility of `(eps, nu)` means `< 1`.
pub fn small_gain_h(eps: f64, nu: f64, lambda: f64, delay: f64, b3: f64) -> f64 {
    (1.0 + eps) / (1.0 + lambda) * (delay * (nu + 1.0)).exp() * (b3 * (eps + 1.0) + 1.0)
}

/// Smallest `lambda` meeting the small-gain condition with a 20% margin.
pub fn default_lambda(delay: f64, b3: f64) -> f64 {
    1.2 * (b3 + 1.0) * delay.exp() - 1.0
}

pub fn default_delta(sigma: f64, nu: f64) -> f64 {
    0.5 * sigma.min(nu)
}

pub fn compute_gains(plant: &PlantSpec, fb: &FeedbackSpec, design: &DesignParams) -> Result<GainLedger> {
    compute_gains_from(&PlantConstants::of(plant, fb), design)
}

pub fn compute_gains_from(c: &PlantConstants, d: &DesignParams) -> Result<GainLedger> {
    let positive = [
        ("lambda", d.lambda),
        ("eps", d.eps),
        ("nu", d.nu),
        ("M", d.range),
        ("Delta", d.error_bound),
        ("mu0", d.mu0),
        ("tau", d.tau),
    ];
    for (name, v) in positive {
        if !(v > 0.0 && v.is_finite()) {
            return Err(Error::spec(format!("design parameter {name} must be positive, got {v}")));
        }
    }
    c.ges.validate()?;
    let upper = c.ges.sigma.min(d.nu);
    if !(d.delta > 0.0 && d.delta < upper) {
        return Err(Error::InvalidDelta {
            delta: d.delta,
            upper,
        });
    }

    let (l, dl, k0) = (c.lipschitz, c.delay, c.kappa0);
    let ld = l * dl;
    let GesCertificate { m_sigma, sigma, b3 } = c.ges;
    let (lambda, eps, nu) = (d.lambda, d.eps, d.nu);

    let m3 = 1.0 + k0 * gronwall_factor(l, dl);
    let m4 = 1.0 / (1.0 + k0 * (k0 * ld).max(1.0) * (ld * (1.0 + k0)).exp());
    let m5 = k0 * gronwall_factor(l, dl);

    let e_dn = (dl * (nu + 1.0)).exp();
    let phi = (1.0 + eps) / (1.0 + lambda) * e_dn;
    let phi1 = (1.0 + eps) * phi * b3 / (1.0 - phi);
    let m0 = 1.0 / ((1.0 - phi) * (1.0 - phi1)) * e_dn.max(phi * m_sigma)
        + 1.0 / (1.0 - phi1) * m_sigma.max((1.0 + eps) / (1.0 - phi) * e_dn * b3);

    let m_bar = m4 / (m3 * (1.0 + m0));
    let omega = m5 * d.error_bound * (1.0 + lambda) * (1.0 + m0).powi(2) / (m4 * d.range);
    let window = -(omega / (1.0 + m0)).ln() / d.delta;

    let thm1_threshold = m4 / ((1.0 + m0) * (m5 * (1.0 + lambda) * (1.0 + m0)).max(2.0 * m5));
    let thm2_threshold = m4 / (m5 * (1.0 + lambda) * (1.0 + m0).powi(2));
    let small_gain_margin = (-dl).exp() - (b3 + 1.0) / (1.0 + lambda);
    let log_arg = d.range * m_bar - 2.0 * d.error_bound;
    let ratio = d.error_bound / d.range;

    let rate = omega.ln() / window;
    let power = 1.0 - rate / l;
    let spread = (2.0 * l * d.tau).exp();
    let gamma = if log_arg > 0.0 {
        let base = 1.0 / (d.mu0 * log_arg);
        2.0 / m4 * (m4 * d.range * d.mu0 / omega * spread).max(m3) * base.max(1.0) * base.powf(power)
    } else {
        f64::NAN
    };
    let base_bar = m5 / (d.mu0 * d.range * m_bar);
    let gamma_bar = 2.0 / m4
        * (m4 * d.range / (omega * m5) * spread * d.mu0).max(m3)
        * base_bar.max(1.0)
        * base_bar.powf(power);

    let phi_ok = phi < 1.0;
    let phi1_ok = phi_ok && phi1 < 1.0 && phi1 > 0.0;
    Ok(GainLedger {
        lipschitz: l,
        delay: dl,
        kappa0: k0,
        m_sigma,
        sigma,
        b3,
        lambda,
        eps,
        nu,
        delta: d.delta,
        range: d.range,
        error_bound: d.error_bound,
        mu0: d.mu0,
        tau: d.tau,
        m3,
        m4,
        m5,
        m_bar,
        phi,
        phi1,
        m0,
        omega,
        window,
        gamma,
        gamma_bar,
        thm1_threshold,
        thm2_threshold,
        small_gain_margin,
        small_gain_ok: small_gain_margin > 0.0,
        phi_ok,
        phi1_ok,
        thm1_ok: ratio < thm1_threshold,
        thm2_ok: ratio < thm2_threshold,
        positive_log_arg_ok: log_arg > 0.0,
    })
}

/// Which set of design conditions a caller needs.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Requirement {
    StateQuantization,
    InputQuantization,
    All,
}

/// One row of the condition table.
#[derive(Debug, Clone, PartialEq)]
pub struct ConditionRow {
    pub name: &'static str,
    pub ok: bool,
    /// Positive when the condition holds.
    pub margin: f64,
}

impl GainLedger {
    pub fn conditions(&self) -> Vec<ConditionRow> {
        let ratio = self.error_bound / self.range;
        vec![
            ConditionRow {
                name: "small_gain_ok",
                ok: self.small_gain_ok,
                margin: self.small_gain_margin,
            },
            ConditionRow {
                name: "phi_ok",
                ok: self.phi_ok,
                margin: 1.0 - self.phi,
            },
            ConditionRow {
                name: "phi1_ok",
                ok: self.phi1_ok,
                margin: 1.0 - self.phi1,
            },
            ConditionRow {
                name: "thm1_ok",
                ok: self.thm1_ok,
                margin: self.thm1_threshold - ratio,
            },
            ConditionRow {
                name: "thm2_ok",
                ok: self.thm2_ok,
                margin: self.thm2_threshold - ratio,
            },
            ConditionRow {
                name: "positive_log_arg_ok",
                ok: self.positive_log_arg_ok,
                margin: self.range * self.m_bar - 2.0 * self.error_bound,
            },
        ]
    }

    pub fn satisfies(&self, req: Requirement) -> bool {
        let base = self.small_gain_ok && self.phi_ok && self.phi1_ok;
        match req {
            Requirement::StateQuantization => base && self.thm1_ok && self.positive_log_arg_ok,
            Requirement::InputQuantization => base && self.thm2_ok,
            Requirement::All => {
                base && self.thm1_ok && self.thm2_ok && self.positive_log_arg_ok
            }
        }
    }

    /// `ln(Omega) / T`, the exponential rate of the stability envelopes.
    pub fn envelope_rate(&self) -> f64 {
        self.omega.ln() / self.window
    }

    /// Exponent `2 - (ln Omega / T) / L` applied to the initial norm in the envelopes.
    pub fn envelope_power(&self) -> f64 {
        2.0 - self.envelope_rate() / self.lipschitz
    }

    /// Right side of the trigger test under state quantization, per unit zoom.
    pub fn state_trigger_level(&self) -> f64 {
        self.m_bar * self.range - self.error_bound
    }

    /// Right side of the trigger test under input quantization, per unit zoom.
    pub fn input_trigger_level(&self) -> f64 {
        self.range * self.m_bar / self.m5
    }

    /// Majorant constant for the window-end norms under state quantization.
    pub fn state_contraction_constant(&self) -> f64 {
        self.m3 * self.m_bar * self.range
    }

    /// Majorant constant for the window-end norms under input quantization.
    pub fn input_contraction_constant(&self) -> f64 {
        self.m4 * self.range / ((1.0 + self.m0) * self.m5)
    }

    /// Upper bound on the trigger time under state quantization, if the log argument exceeds 1.
    pub fn state_trigger_time_bound(&self, initial_norm: f64) -> Option<f64> {
        let arg = initial_norm / (self.mu0 * (self.range * self.m_bar - 2.0 * self.error_bound));
        (arg > 1.0).then(|| arg.ln() / self.lipschitz)
    }

    /// Analogous bound under input quantization, from the trigger level `M MBar / M5`.
    pub fn input_trigger_time_bound(&self, initial_norm: f64) -> Option<f64> {
        let arg = initial_norm * self.m5 / (self.mu0 * self.range * self.m_bar);
        (arg > 1.0).then(|| arg.ln() / self.lipschitz)
    }
}

/// Log-spaced grid on `[1e-4, 1]`.
fn log_grid(points: usize) -> Vec<f64> {
    (0..points)
        .map(|i| 10f64.powf(-4.0 + 4.0 * i as f64 / (points - 1) as f64))
        .collect()
}

/// Margin of the small-gain constraints at `(eps, nu)`; positive iff all of
/// `h < 1`, `phi < 1`, `phi1 < 1` hold.
pub fn eps_nu_margin(eps: f64, nu: f64, lambda: f64, delay: f64, b3: f64) -> f64 {
    let h = small_gain_h(eps, nu, lambda, delay, b3);
    let phi = (1.0 + eps) / (1.0 + lambda) * (delay * (nu + 1.0)).exp();
    let phi1 = if phi < 1.0 {
        (1.0 + eps) * phi * b3 / (1.0 - phi)
    } else {
        f64::INFINITY
    };
    (1.0 - h).min(1.0 - phi).min(1.0 - phi1)
}

/// Grid search for `(eps, nu)` satisfying the strengthened small-gain condition.
///
/// Among feasible grid points the one maximizing `nu * margin` is returned:
/// `nu` caps the admissible decay rate `delta`, so the choice trades small-gain
/// slack against the zoom-in window length.
pub fn search_eps_nu(lambda: f64, delay: f64, b3: f64) -> Result<(f64, f64)> {
    let grid = log_grid(81);
    let mut best: Option<(f64, f64, f64)> = None;
    for &eps in &grid {
        for &nu in &grid {
            let margin = eps_nu_margin(eps, nu, lambda, delay, b3);
            if margin > 0.0 {
                let score = nu * margin;
                if best.is_none_or(|(s, _, _)| score > s) {
                    best = Some((score, eps, nu));
                }
            }
        }
    }
    best.map(|(_, eps, nu)| (eps, nu)).ok_or_else(|| {
        Error::Infeasible(format!(
            "lambda = {lambda}, D = {delay}, b3 = {b3}: small-gain value at the grid corner is {}",
            small_gain_h(1e-4, 1e-4, lambda, delay, b3)
        ))
    })
}

/// Estimates `(M_sigma, sigma, b3)` for `X' = f(X, kappa(X) + w)` by simulation.
///
/// The decay envelope is fitted to the running tail maximum of `|X(t)|/|X0|`
/// over all trials; `b3` is the worst peak-to-input ratio for constant `w`.
/// Both are made conservative by 5%.
pub fn estimate_ges(plant: &PlantSpec, fb: &FeedbackSpec, horizon: f64, trials: usize) -> Result<GesCertificate> {
    const INFLATE: f64 = 1.05;
    const STEPS: usize = 4000;
    if !(horizon > 0.0) || trials == 0 {
        return Err(Error::spec("estimate_ges needs a positive horizon and at least one trial"));
    }
    let n = plant.n;
    let dt = horizon / STEPS as f64;
    let mut rng = ChaCha8Rng::seed_from_u64(0x6e5);

    let mut worst = vec![0.0_f64; STEPS + 1];
    for _ in 0..trials {
        let dir: Vec<f64> = (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let scale = 10f64.powf(rng.gen_range(-1.0..1.0)) / euclidean_norm(&dir).max(1e-12);
        let mut x: Vec<f64> = dir.iter().map(|v| v * scale).collect();
        let x0 = euclidean_norm(&x);
        worst[0] = 1.0;
        for slot in worst.iter_mut().skip(1) {
            x = rk4_step(|x, out| plant.eval(x, fb.eval(x), out), &x, dt);
            let r = euclidean_norm(&x) / x0;
            if !r.is_finite() || r > 1e6 {
                return Err(Error::NotContracting(format!("trajectory from |X0| = {x0} diverged")));
            }
            *slot = slot.max(r);
        }
    }
    // tail maximum makes the envelope monotone
    for k in (0..STEPS).rev() {
        worst[k] = worst[k].max(worst[k + 1]);
    }
    if worst[STEPS] >= 1.0 {
        return Err(Error::NotContracting(format!(
            "trajectories did not decay within horizon {horizon} (worst ratio {})",
            worst[STEPS]
        )));
    }

    let pts: Vec<(f64, f64)> = worst
        .iter()
        .enumerate()
        .filter(|(_, r)| **r > 1e-10)
        .map(|(k, r)| (k as f64 * dt, r.ln()))
        .collect();
    let m = pts.len() as f64;
    let (st, sy) = pts.iter().fold((0.0, 0.0), |(a, b), (t, y)| (a + t, b + y));
    let (mt, my) = (st / m, sy / m);
    let (num, den) = pts
        .iter()
        .fold((0.0, 0.0), |(a, b), (t, y)| (a + (t - mt) * (y - my), b + (t - mt).powi(2)));
    let fitted = -num / den;
    if !(fitted > 0.0) {
        return Err(Error::NotContracting(format!("fitted decay rate {fitted} is not positive")));
    }
    let sigma = fitted / INFLATE;
    let overshoot = worst
        .iter()
        .enumerate()
        .map(|(k, r)| r * (sigma * k as f64 * dt).exp())
        .fold(0.0, f64::max);
    let m_sigma = (INFLATE * overshoot).max(1.0);

    let mut gain = 0.0_f64;
    for w in [-10.0, -1.0, -0.1, 0.1, 1.0, 10.0] {
        let mut x = vec![0.0; n];
        let mut peak = 0.0_f64;
        for _ in 0..STEPS {
            x = rk4_step(|x, out| plant.eval(x, fb.eval(x) + w, out), &x, dt);
            let r = euclidean_norm(&x) / f64::abs(w);
            if !r.is_finite() || r > 1e6 {
                return Err(Error::NotContracting(format!("forced response to w = {w} diverged")));
            }
            peak = peak.max(r);
        }
        gain = gain.max(peak);
    }
    GesCertificate::new(m_sigma, sigma, INFLATE * gain.max(1e-12))
}
