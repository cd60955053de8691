//! Plant, nominal feedback, actuator grid and the composite state norm.
//!
//! The plant is `X' = f(X, u(0,t))` driven through a transport actuator state
//! `u(x,t)` on `[0, D]`. Vector norms are Euclidean; the actuator state is
//! measured in the sup norm over its grid samples.

use std::fmt;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// `f(X, u, out)` writes the state derivative into `out`.
pub type VectorField = Arc<dyn Fn(&[f64], f64, &mut [f64]) + Send + Sync>;

/// Nominal feedback `kappa: R^n -> R`.
pub type Feedback = Arc<dyn Fn(&[f64]) -> f64 + Send + Sync>;

pub fn euclidean_norm(x: &[f64]) -> f64 {
    x.iter().map(|v| v * v).sum::<f64>().sqrt()
}

pub fn sup_norm(values: &[f64]) -> f64 {
    values.iter().fold(0.0_f64, |acc, v| acc.max(v.abs()))
}

#[derive(Clone)]
pub struct PlantSpec {
    pub name: String,
    pub n: usize,
    /// Input delay `D`.
    pub delay: f64,
    /// Global Lipschitz constant `L` of `f` in both arguments.
    pub lipschitz: f64,
    field: VectorField,
}

impl PlantSpec {
    pub fn new(
        name: impl Into<String>,
        n: usize,
        delay: f64,
        lipschitz: f64,
        field: VectorField,
    ) -> Result<Self> {
        if n == 0 {
            return Err(Error::spec("state dimension must be positive"));
        }
        if !(delay > 0.0 && delay.is_finite()) {
            return Err(Error::spec(format!("delay must be positive, got {delay}")));
        }
        if !(lipschitz > 0.0 && lipschitz.is_finite()) {
            return Err(Error::spec(format!(
                "Lipschitz constant must be positive, got {lipschitz}"
            )));
        }
        let plant = PlantSpec {
            name: name.into(),
            n,
            delay,
            lipschitz,
            field,
        };
        let mut out = vec![0.0; n];
        plant.eval(&vec![0.0; n], 0.0, &mut out);
        if euclidean_norm(&out) > 1e-12 {
            return Err(Error::spec("f(0, 0) must vanish"));
        }
        Ok(plant)
    }

    #[inline]
    pub fn eval(&self, x: &[f64], u: f64, out: &mut [f64]) {
        (self.field)(x, u, out)
    }

    pub fn eval_vec(&self, x: &[f64], u: f64) -> Vec<f64> {
        let mut out = vec![0.0; self.n];
        self.eval(x, u, &mut out);
        out
    }

    /// Same plant with a different input delay.
    pub fn with_delay(&self, delay: f64) -> Result<Self> {
        PlantSpec::new(self.name.clone(), self.n, delay, self.lipschitz, self.field.clone())
    }

    /// Largest excess of `|f(X1,u1) - f(X2,u2)|` over `L(|X1-X2| + |u1-u2|)` on
    /// random pairs drawn from `[-scale, scale]`. Non-positive means the audit passed.
    pub fn lipschitz_audit(&self, trials: usize, scale: f64, seed: u64) -> f64 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut worst = f64::NEG_INFINITY;
        let mut f1 = vec![0.0; self.n];
        let mut f2 = vec![0.0; self.n];
        for _ in 0..trials {
            let x1: Vec<f64> = (0..self.n).map(|_| rng.gen_range(-scale..scale)).collect();
            let x2: Vec<f64> = x1
                .iter()
                .map(|v| v + rng.gen_range(-1.0..1.0) * scale * 10f64.powi(-rng.gen_range(0..4)))
                .collect();
            let u1 = rng.gen_range(-scale..scale);
            let u2 = u1 + rng.gen_range(-1.0..1.0) * scale * 10f64.powi(-rng.gen_range(0..4));
            self.eval(&x1, u1, &mut f1);
            self.eval(&x2, u2, &mut f2);
            let diff: Vec<f64> = f1.iter().zip(&f2).map(|(a, b)| a - b).collect();
            let dx: Vec<f64> = x1.iter().zip(&x2).map(|(a, b)| a - b).collect();
            let lhs = euclidean_norm(&diff);
            let rhs = self.lipschitz * (euclidean_norm(&dx) + (u1 - u2).abs());
            worst = worst.max(lhs - rhs);
        }
        worst
    }
}

impl fmt::Debug for PlantSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("PlantSpec")
            .field("name", &self.name)
            .field("n", &self.n)
            .field("delay", &self.delay)
            .field("lipschitz", &self.lipschitz)
            .finish_non_exhaustive()
    }
}

/// Exponential ISS certificate of the delay-free nominal loop
/// `X' = f(X, kappa(X) + w)`: `|X(t)| <= M_sigma |X0| e^{-sigma t} + b3 sup |w|`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GesCertificate {
    #[serde(rename = "M_sigma")]
    pub m_sigma: f64,
    pub sigma: f64,
    pub b3: f64,
}

impl GesCertificate {
    pub fn new(m_sigma: f64, sigma: f64, b3: f64) -> Result<Self> {
        let cert = GesCertificate { m_sigma, sigma, b3 };
        cert.validate()?;
        Ok(cert)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.m_sigma >= 1.0 && self.sigma > 0.0 && self.b3 > 0.0)
            || !(self.m_sigma.is_finite() && self.sigma.is_finite() && self.b3.is_finite())
        {
            return Err(Error::spec(format!(
                "GES certificate needs M_sigma >= 1, sigma > 0, b3 > 0; got {self:?}"
            )));
        }
        Ok(())
    }
}

#[derive(Clone)]
pub struct FeedbackSpec {
    pub name: String,
    /// Lipschitz constant `kappa0` of the feedback.
    pub kappa0: f64,
    pub ges: GesCertificate,
    kappa: Feedback,
}

impl FeedbackSpec {
    pub fn new(
        name: impl Into<String>,
        n: usize,
        kappa0: f64,
        ges: GesCertificate,
        kappa: Feedback,
    ) -> Result<Self> {
        if !(kappa0 > 0.0 && kappa0.is_finite()) {
            return Err(Error::spec(format!("kappa0 must be positive, got {kappa0}")));
        }
        ges.validate()?;
        if kappa(&vec![0.0; n]).abs() > 1e-12 {
            return Err(Error::spec("kappa(0) must vanish"));
        }
        Ok(FeedbackSpec {
            name: name.into(),
            kappa0,
            ges,
            kappa,
        })
    }

    #[inline]
    pub fn eval(&self, x: &[f64]) -> f64 {
        (self.kappa)(x)
    }

    pub fn with_certificate(&self, ges: GesCertificate) -> Self {
        FeedbackSpec {
            ges,
            ..self.clone()
        }
    }

    /// Largest excess of `|kappa(p) - kappa(q)|` over `kappa0 |p - q|` on random pairs.
    pub fn lipschitz_audit(&self, n: usize, trials: usize, scale: f64, seed: u64) -> f64 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut worst = f64::NEG_INFINITY;
        for _ in 0..trials {
            let p: Vec<f64> = (0..n).map(|_| rng.gen_range(-scale..scale)).collect();
            let q: Vec<f64> = p
                .iter()
                .map(|v| v + rng.gen_range(-1.0..1.0) * scale * 10f64.powi(-rng.gen_range(0..4)))
                .collect();
            let dx: Vec<f64> = p.iter().zip(&q).map(|(a, b)| a - b).collect();
            let lhs = (self.eval(&p) - self.eval(&q)).abs();
            worst = worst.max(lhs - self.kappa0 * euclidean_norm(&dx));
        }
        worst
    }
}

impl fmt::Debug for FeedbackSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("FeedbackSpec")
            .field("name", &self.name)
            .field("kappa0", &self.kappa0)
            .field("ges", &self.ges)
            .finish_non_exhaustive()
    }
}

/// Samples of the actuator state at `x_k = k D / N`, `k = 0..=N`.
#[derive(Debug, Clone, PartialEq)]
pub struct ActuatorGrid {
    values: Vec<f64>,
}

impl ActuatorGrid {
    pub fn zeros(cells: usize) -> Self {
        ActuatorGrid {
            values: vec![0.0; cells + 1],
        }
    }

    pub fn from_samples(values: Vec<f64>) -> Result<Self> {
        if values.len() < 2 {
            return Err(Error::spec("actuator grid needs at least one cell"));
        }
        Ok(ActuatorGrid { values })
    }

    pub fn from_fn(cells: usize, delay: f64, f: impl Fn(f64) -> f64) -> Self {
        let h = delay / cells as f64;
        ActuatorGrid {
            values: (0..=cells).map(|k| f(k as f64 * h)).collect(),
        }
    }

    /// Number of cells `N`.
    pub fn cells(&self) -> usize {
        self.values.len() - 1
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    pub fn sup_norm(&self) -> f64 {
        sup_norm(&self.values)
    }

    /// Boundary sample `u(D)`.
    pub fn boundary(&self) -> f64 {
        self.values[self.values.len() - 1]
    }

    pub fn set_boundary(&mut self, value: f64) {
        let last = self.values.len() - 1;
        self.values[last] = value;
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CompositeState {
    pub x: Vec<f64>,
    pub u: ActuatorGrid,
    pub t: f64,
}

impl CompositeState {
    pub fn new(x: Vec<f64>, u: ActuatorGrid, t: f64) -> Self {
        CompositeState { x, u, t }
    }

    pub fn norm(&self) -> f64 {
        composite_norm(self)
    }
}

/// `|X| + ||u||_inf`.
pub fn composite_norm(s: &CompositeState) -> f64 {
    euclidean_norm(&s.x) + s.u.sup_norm()
}

pub fn pair_norm(x: &[f64], u: &[f64]) -> f64 {
    euclidean_norm(x) + sup_norm(u)
}

/// One entry of the builtin catalog.
#[derive(Debug, Clone)]
pub struct CatalogEntry {
    pub id: &'static str,
    pub plant: PlantSpec,
    pub feedback: FeedbackSpec,
}

/// Scalar linear plant `X' = aX + bu` with `kappa(X) = -kX`.
///
/// The nominal loop `X' = (a - bk)X + bw` has the exact certificate
/// `M_sigma = 1`, `sigma = bk - a`, `b3 = |b| / (bk - a)`.
pub fn scalar_linear(a: f64, b: f64, k: f64, delay: f64) -> Result<(PlantSpec, FeedbackSpec)> {
    let rate = b * k - a;
    if !(rate > 0.0) {
        return Err(Error::spec(format!(
            "scalar linear loop a - bk = {} is not exponentially stable",
            -rate
        )));
    }
    if k == 0.0 {
        return Err(Error::spec("feedback gain must be nonzero"));
    }
    let lipschitz = a.abs().max(b.abs());
    let plant = PlantSpec::new(
        "scalar_linear",
        1,
        delay,
        lipschitz,
        Arc::new(move |x: &[f64], u: f64, out: &mut [f64]| out[0] = a * x[0] + b * u),
    )?;
    let ges = GesCertificate::new(1.0, rate, b.abs() / rate)?;
    let feedback = FeedbackSpec::new(
        "linear_gain",
        1,
        k.abs(),
        ges,
        Arc::new(move |x: &[f64]| -k * x[0]),
    )?;
    Ok((plant, feedback))
}

/// `X' = -X + 0.5 sin X + u` with `kappa(X) = -0.5 sin X`, so the nominal loop is `X' = -X + w`.
pub fn scalar_sine(delay: f64) -> Result<(PlantSpec, FeedbackSpec)> {
    let plant = PlantSpec::new(
        "scalar_sine",
        1,
        delay,
        1.5,
        Arc::new(|x: &[f64], u: f64, out: &mut [f64]| out[0] = -x[0] + 0.5 * x[0].sin() + u),
    )?;
    let feedback = FeedbackSpec::new(
        "sine_cancel",
        1,
        0.5,
        GesCertificate::new(1.0, 1.0, 1.0)?,
        Arc::new(|x: &[f64]| -0.5 * x[0].sin()),
    )?;
    Ok((plant, feedback))
}

/// Open-loop unstable planar system `x1' = -x1`, `x2' = x1 + x2 + u` with
/// `kappa(X) = -(x1 + 2 x2)`; the nominal loop is `X' = -X + (0, w)`.
pub fn planar_linear(delay: f64) -> Result<(PlantSpec, FeedbackSpec)> {
    linear(
        "planar_linear",
        &[vec![-1.0, 0.0], vec![1.0, 1.0]],
        &[0.0, 1.0],
        &[1.0, 2.0],
        delay,
        Some(GesCertificate::new(1.0, 1.0, 1.0)?),
    )
}

/// General linear plant `X' = AX + bu` with `kappa(X) = -KX`.
///
/// `L = max(||A||_2, |b|)`, `kappa0 = |K|`. Without a certificate the caller
/// is expected to estimate one; a placeholder derived from the spectral
/// abscissa is stored so the value can be constructed.
pub fn linear(
    name: &str,
    a: &[Vec<f64>],
    b: &[f64],
    k: &[f64],
    delay: f64,
    certificate: Option<GesCertificate>,
) -> Result<(PlantSpec, FeedbackSpec)> {
    let n = b.len();
    if a.len() != n || a.iter().any(|row| row.len() != n) || k.len() != n {
        return Err(Error::spec("linear plant: A must be n x n with b, K of length n"));
    }
    let a_mat = DMatrix::from_fn(n, n, |i, j| a[i][j]);
    let b_vec = DVector::from_column_slice(b);
    let k_vec = DVector::from_column_slice(k);
    let a_norm = spectral_norm(&a_mat);
    let lipschitz = a_norm.max(b_vec.norm());
    let kappa0 = k_vec.norm();

    let closed = &a_mat - &b_vec * k_vec.transpose();
    let abscissa = closed
        .complex_eigenvalues()
        .iter()
        .map(|z| z.re)
        .fold(f64::NEG_INFINITY, f64::max);
    if !(abscissa < 0.0) {
        return Err(Error::spec(format!(
            "linear closed loop A - bK is not Hurwitz (spectral abscissa {abscissa})"
        )));
    }
    let ges = match certificate {
        Some(c) => c,
        None => GesCertificate::new(1.0, -abscissa, b_vec.norm() / -abscissa)?,
    };

    let a_rows: Vec<Vec<f64>> = a.to_vec();
    let b_owned = b.to_vec();
    let plant = PlantSpec::new(
        name,
        n,
        delay,
        lipschitz,
        Arc::new(move |x: &[f64], u: f64, out: &mut [f64]| {
            for (i, row) in a_rows.iter().enumerate() {
                out[i] = row.iter().zip(x).map(|(aij, xj)| aij * xj).sum::<f64>() + b_owned[i] * u;
            }
        }),
    )?;
    let k_owned = k.to_vec();
    let feedback = FeedbackSpec::new(
        format!("{name}_gain"),
        n,
        kappa0,
        ges,
        Arc::new(move |x: &[f64]| -k_owned.iter().zip(x).map(|(ki, xi)| ki * xi).sum::<f64>()),
    )?;
    Ok((plant, feedback))
}

fn spectral_norm(a: &DMatrix<f64>) -> f64 {
    let ata = a.transpose() * a;
    let eig = ata.symmetric_eigen();
    eig.eigenvalues.iter().fold(0.0_f64, |m, v| m.max(*v)).sqrt()
}

/// The builtin plant/feedback pairs, all with unit delay.
pub fn builtin_plants() -> Vec<CatalogEntry> {
    let (p_a, f_a) = scalar_linear(0.0, 1.0, 1.0, 1.0).expect("builtin scalar_linear");
    let (p_b, f_b) = scalar_sine(1.0).expect("builtin scalar_sine");
    let (p_c, f_c) = planar_linear(1.0).expect("builtin planar_linear");
    vec![
        CatalogEntry {
            id: "scalar_linear",
            plant: p_a,
            feedback: f_a,
        },
        CatalogEntry {
            id: "scalar_sine",
            plant: p_b,
            feedback: f_b,
        },
        CatalogEntry {
            id: "planar_linear",
            plant: p_c,
            feedback: f_c,
        },
    ]
}

pub fn builtin(id: &str) -> Option<CatalogEntry> {
    builtin_plants().into_iter().find(|e| e.id == id)
}
