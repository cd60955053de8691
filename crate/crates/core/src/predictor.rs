//! Predictor states and backstepping transforms.
//!
//! All predictors solve a Volterra equation `p(x) = seed + int_0^x F(y, p(y)) dy`
//! on the actuator grid `x_k = k D / N` by forward marching with trapezoidal
//! quadrature. Each node uses an explicit Euler guess followed by one
//! fixed-point correction, and the corrected value feeds the final
//! trapezoidal update.

use crate::error::{Error, Result};
use crate::model::{euclidean_norm, ActuatorGrid, FeedbackSpec, PlantSpec};
use crate::quantizer::{quantize_input, quantize_state, QuantizerSpec, ZoomValue};

/// Predictor values at the actuator grid nodes, stored row-major (`N + 1` rows of `n`).
#[derive(Debug, Clone, PartialEq)]
pub struct PredictorGrid {
    n: usize,
    values: Vec<f64>,
}

impl PredictorGrid {
    pub fn dim(&self) -> usize {
        self.n
    }

    pub fn nodes(&self) -> usize {
        self.values.len() / self.n
    }

    pub fn node(&self, k: usize) -> &[f64] {
        &self.values[k * self.n..(k + 1) * self.n]
    }

    /// Value at `x = D`.
    pub fn terminal(&self) -> &[f64] {
        self.node(self.nodes() - 1)
    }

    pub fn iter(&self) -> impl Iterator<Item = &[f64]> {
        self.values.chunks_exact(self.n)
    }

    /// `max_k |p_k|`.
    pub fn sup_norm(&self) -> f64 {
        self.iter().map(euclidean_norm).fold(0.0, f64::max)
    }
}

/// `max{1, L D} e^{L D}`, the Gronwall factor bounding predictor growth and mismatch.
pub fn gronwall_factor(lipschitz: f64, delay: f64) -> f64 {
    let ld = lipschitz * delay;
    ld.max(1.0) * ld.exp()
}

fn check_grid(step: f64, rate: f64) -> Result<()> {
    let product = step * rate;
    if product >= 1.0 {
        return Err(Error::GridTooCoarse { step, rate, product });
    }
    Ok(())
}

/// Forward-marches `p(x) = seed + int_0^x integrand(k, p) dy` over `nodes` nodes spaced `h`.
fn march(
    seed: &[f64],
    nodes: usize,
    h: f64,
    integrand: impl Fn(usize, &[f64], &mut [f64]),
) -> Result<PredictorGrid> {
    let n = seed.len();
    let mut values = Vec::with_capacity(nodes * n);
    values.extend_from_slice(seed);

    let mut fk = vec![0.0; n];
    let mut guess = vec![0.0; n];
    let mut corrected = vec![0.0; n];
    let mut fnext = vec![0.0; n];
    for k in 0..nodes - 1 {
        let pk = &values[k * n..(k + 1) * n];
        integrand(k, pk, &mut fk);
        for i in 0..n {
            guess[i] = pk[i] + h * fk[i];
        }
        integrand(k + 1, &guess, &mut fnext);
        for i in 0..n {
            corrected[i] = pk[i] + 0.5 * h * (fk[i] + fnext[i]);
        }
        integrand(k + 1, &corrected, &mut fnext);
        let next: Vec<f64> = (0..n).map(|i| pk[i] + 0.5 * h * (fk[i] + fnext[i])).collect();
        if next.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite { context: "predictor march" });
        }
        values.extend_from_slice(&next);
    }
    Ok(PredictorGrid { n, values })
}

fn check_dims(plant: &PlantSpec, x: &[f64]) -> Result<()> {
    if x.len() != plant.n {
        return Err(Error::spec(format!(
            "state has dimension {} but plant {} expects {}",
            x.len(),
            plant.name,
            plant.n
        )));
    }
    Ok(())
}

/// Exact predictor `p(x) = X + int_0^x f(p, u) dy`.
pub fn predictor_exact(plant: &PlantSpec, x: &[f64], u: &ActuatorGrid) -> Result<PredictorGrid> {
    check_dims(plant, x)?;
    let h = plant.delay / u.cells() as f64;
    check_grid(h, plant.lipschitz)?;
    let samples = u.values();
    march(x, samples.len(), h, |k, p, out| plant.eval(p, samples[k], out))
}

/// Predictor built from quantized measurements:
/// `p_mu(x) = q1mu(X) + int_0^x f(p_mu, q2mu(u)) dy`.
pub fn predictor_quantized(
    plant: &PlantSpec,
    qspec: &QuantizerSpec,
    mu: ZoomValue,
    x: &[f64],
    u: &ActuatorGrid,
) -> Result<PredictorGrid> {
    check_dims(plant, x)?;
    let (xq, uq) = quantize_state(qspec, mu, x, u)?;
    predictor_exact(plant, &xq, &uq)
}

/// Inverse-transform predictor `pi(x) = X + int_0^x f(pi, kappa(pi) + w) dy`.
pub fn predictor_pi(
    plant: &PlantSpec,
    fb: &FeedbackSpec,
    x: &[f64],
    w: &ActuatorGrid,
) -> Result<PredictorGrid> {
    check_dims(plant, x)?;
    let h = plant.delay / w.cells() as f64;
    check_grid(h, plant.lipschitz * (1.0 + fb.kappa0))?;
    let samples = w.values();
    march(x, samples.len(), h, |k, p, out| {
        plant.eval(p, fb.eval(p) + samples[k], out)
    })
}

/// `w = u - kappa(p)`.
pub fn backstepping_direct(
    plant: &PlantSpec,
    fb: &FeedbackSpec,
    x: &[f64],
    u: &ActuatorGrid,
) -> Result<ActuatorGrid> {
    let p = predictor_exact(plant, x, u)?;
    Ok(direct_from_predictor(fb, &p, u))
}

pub(crate) fn direct_from_predictor(fb: &FeedbackSpec, p: &PredictorGrid, u: &ActuatorGrid) -> ActuatorGrid {
    let w: Vec<f64> = u
        .values()
        .iter()
        .zip(p.iter())
        .map(|(uk, pk)| uk - fb.eval(pk))
        .collect();
    ActuatorGrid::from_samples(w).expect("grid shape preserved")
}

/// `u = w + kappa(pi)`.
pub fn backstepping_inverse(
    plant: &PlantSpec,
    fb: &FeedbackSpec,
    x: &[f64],
    w: &ActuatorGrid,
) -> Result<ActuatorGrid> {
    let pi = predictor_pi(plant, fb, x, w)?;
    let u: Vec<f64> = w
        .values()
        .iter()
        .zip(pi.iter())
        .map(|(wk, pk)| wk + fb.eval(pk))
        .collect();
    ActuatorGrid::from_samples(u)
}

/// Nominal predictor feedback `kappa(p(D))`.
pub fn u_nominal(plant: &PlantSpec, fb: &FeedbackSpec, x: &[f64], u: &ActuatorGrid) -> Result<f64> {
    let p = predictor_exact(plant, x, u)?;
    Ok(fb.eval(p.terminal()))
}

/// `d = kappa(p_mu(D)) - kappa(p(D))`.
pub fn mismatch_d(
    plant: &PlantSpec,
    fb: &FeedbackSpec,
    qspec: &QuantizerSpec,
    mu: ZoomValue,
    x: &[f64],
    u: &ActuatorGrid,
) -> Result<f64> {
    let pq = predictor_quantized(plant, qspec, mu, x, u)?;
    let p = predictor_exact(plant, x, u)?;
    Ok(fb.eval(pq.terminal()) - fb.eval(p.terminal()))
}

/// `dbar = U_nom - mu qbar(U_nom / mu)`.
pub fn mismatch_dbar(
    plant: &PlantSpec,
    fb: &FeedbackSpec,
    qspec: &QuantizerSpec,
    mu: ZoomValue,
    x: &[f64],
    u: &ActuatorGrid,
) -> Result<f64> {
    let u_nom = u_nominal(plant, fb, x, u)?;
    Ok(u_nom - quantize_input(qspec, mu, u_nom)?)
}
