//! Dynamic zoom quantizers.
//!
//! The scalar base quantizer is a uniform mid-level staircase with a dead zone
//! around the origin, ramped risers (so the map is Lipschitz) and flat
//! saturation beyond the range `M`. Scaled by a zoom value `mu` it becomes
//! `mu * q(v / mu)`.
//!
//! For the joint state quantizer `(q1(X), q2(u))` each coordinate of `X` and
//! each actuator sample is quantized by the same scalar map with the error
//! budget `Delta / (sqrt(n) + 1)`. Euclidean error on `X` plus sup error on
//! `u` then stays within `Delta`, so the joint bounds hold with constant 1.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{pair_norm, ActuatorGrid};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum QuantizerKind {
    /// Ramped risers; locally Lipschitz.
    #[default]
    Lipschitz,
    /// Discontinuous pure staircase, for comparison runs.
    Staircase,
    /// Pass-through, for isolating quantization effects in diagnostics.
    Identity,
}

fn default_rho() -> f64 {
    0.25
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct QuantizerSpec {
    /// Range `M`.
    #[serde(rename = "M")]
    pub range: f64,
    /// Error bound `Delta`.
    #[serde(rename = "Delta")]
    pub error_bound: f64,
    /// Dead zone `M_hat`.
    #[serde(rename = "M_hat")]
    pub dead_zone: f64,
    /// Riser width as a fraction of the step `2 Delta`.
    #[serde(default = "default_rho")]
    pub rho: f64,
    #[serde(default)]
    pub kind: QuantizerKind,
}

impl QuantizerSpec {
    pub fn new(range: f64, error_bound: f64, dead_zone: f64) -> Result<Self> {
        let q = QuantizerSpec {
            range,
            error_bound,
            dead_zone,
            rho: default_rho(),
            kind: QuantizerKind::Lipschitz,
        };
        q.validate()?;
        Ok(q)
    }

    pub fn with_rho(mut self, rho: f64) -> Result<Self> {
        self.rho = rho;
        self.validate()?;
        Ok(self)
    }

    pub fn with_kind(mut self, kind: QuantizerKind) -> Self {
        self.kind = kind;
        self
    }

    pub fn validate(&self) -> Result<()> {
        let QuantizerSpec {
            range: m,
            error_bound: delta,
            dead_zone: m_hat,
            rho,
            ..
        } = *self;
        if !(m.is_finite() && delta.is_finite() && m_hat.is_finite() && rho.is_finite()) {
            return Err(Error::spec("quantizer parameters must be finite"));
        }
        if !(delta > 0.0 && m > delta) {
            return Err(Error::spec(format!("quantizer needs M > Delta > 0, got M = {m}, Delta = {delta}")));
        }
        if !(m_hat > 0.0 && m_hat < m) {
            return Err(Error::spec(format!("quantizer needs 0 < M_hat < M, got M_hat = {m_hat}")));
        }
        // Inside the dead zone the error is |v| itself.
        if m_hat > delta {
            return Err(Error::spec(format!(
                "dead zone M_hat = {m_hat} exceeds the error bound Delta = {delta}"
            )));
        }
        if !(rho > 0.0 && rho <= 0.5) {
            return Err(Error::spec(format!("rho must lie in (0, 0.5], got {rho}")));
        }
        Ok(())
    }

    /// Scalar spec applied to each coordinate of an `n`-dimensional state
    /// and to each actuator sample.
    pub fn coordinate_spec(&self, n: usize) -> Result<QuantizerSpec> {
        let budget = self.error_bound / ((n as f64).sqrt() + 1.0);
        if self.dead_zone > budget {
            return Err(Error::spec(format!(
                "dead zone M_hat = {} exceeds the per-coordinate error budget Delta/(sqrt(n)+1) = {budget} for n = {n}",
                self.dead_zone
            )));
        }
        let coord = QuantizerSpec {
            error_bound: budget,
            ..*self
        };
        coord.validate()?;
        Ok(coord)
    }

    /// Bound on the slope of the base quantizer.
    pub fn lipschitz_bound(&self) -> f64 {
        1.0 / self.rho + 1.0
    }

    fn half_ramp(&self) -> f64 {
        match self.kind {
            QuantizerKind::Lipschitz => self.rho * self.error_bound,
            _ => 0.0,
        }
    }
}

/// Zoom variable `mu > 0`.
#[derive(Debug, Clone, Copy, PartialEq, PartialOrd)]
pub struct ZoomValue(f64);

impl ZoomValue {
    pub fn new(mu: f64) -> Result<Self> {
        if mu > 0.0 && mu.is_finite() {
            Ok(ZoomValue(mu))
        } else {
            Err(Error::spec(format!("zoom value must be positive and finite, got {mu}")))
        }
    }

    pub fn get(self) -> f64 {
        self.0
    }
}

/// Scalar base quantizer.
pub fn base_quantize(q: &QuantizerSpec, v: f64) -> Result<f64> {
    if !v.is_finite() {
        return Err(Error::NonFinite {
            context: "quantizer input",
        });
    }
    Ok(quantize_unchecked(q, v))
}

fn quantize_unchecked(q: &QuantizerSpec, v: f64) -> f64 {
    if q.kind == QuantizerKind::Identity {
        return v;
    }
    let a = v.abs();
    if a <= q.dead_zone {
        return 0.0;
    }
    let a = a.min(q.range);
    let step = 2.0 * q.error_bound;
    let r = q.half_ramp();
    // First cell boundary sits at M_hat + r; its riser climbs from 0 to the first level.
    let b0 = q.dead_zone + r;
    let first_level = b0 + q.error_bound;
    let y = a - b0;
    let out = if y < r {
        first_level * (y + r) / (2.0 * r)
    } else {
        let k = (y / step).floor();
        let offset = y - k * step;
        let level = first_level + k * step;
        if offset > step - r {
            level + step * (offset - (step - r)) / (2.0 * r)
        } else if offset < r && k >= 1.0 {
            level - step * (r - offset) / (2.0 * r)
        } else {
            level
        }
    };
    out.copysign(v)
}

/// `mu * q(v / mu)` with the scalar spec as given.
pub fn quantize_scaled(q: &QuantizerSpec, mu: ZoomValue, v: f64) -> Result<f64> {
    let mu = mu.get();
    Ok(mu * base_quantize(q, v / mu)?)
}

/// Joint state quantizer `(mu q1(X/mu), mu q2(u/mu))`.
pub fn quantize_state(
    q: &QuantizerSpec,
    mu: ZoomValue,
    x: &[f64],
    u: &ActuatorGrid,
) -> Result<(Vec<f64>, ActuatorGrid)> {
    let coord = q.coordinate_spec(x.len())?;
    let xq = x
        .iter()
        .map(|&v| quantize_scaled(&coord, mu, v))
        .collect::<Result<Vec<_>>>()?;
    let uq = u
        .values()
        .iter()
        .map(|&v| quantize_scaled(&coord, mu, v))
        .collect::<Result<Vec<_>>>()?;
    Ok((xq, ActuatorGrid::from_samples(uq)?))
}

/// Input quantizer `mu * qbar(U / mu)`.
pub fn quantize_input(q: &QuantizerSpec, mu: ZoomValue, u_nom: f64) -> Result<f64> {
    quantize_scaled(q, mu, u_nom)
}

/// `|mu q1(X/mu)| + ||mu q2(u/mu)||_inf`.
pub fn quantized_norm(q: &QuantizerSpec, mu: ZoomValue, x: &[f64], u: &ActuatorGrid) -> Result<f64> {
    let (xq, uq) = quantize_state(q, mu, x, u)?;
    Ok(pair_norm(&xq, uq.values()))
}
