//! Classical four-stage Runge-Kutta steps.

/// One RK4 step of the autonomous system `x' = rhs(x)`.
pub fn rk4_step(rhs: impl Fn(&[f64], &mut [f64]), x: &[f64], dt: f64) -> Vec<f64> {
    rk4_step_timed(|_, x, out| rhs(x, out), x, dt)
}

/// One RK4 step of `x' = rhs(s, x)` where `s in [0, 1]` is the fraction of the
/// step elapsed at the stage.
pub fn rk4_step_timed(rhs: impl Fn(f64, &[f64], &mut [f64]), x: &[f64], dt: f64) -> Vec<f64> {
    let n = x.len();
    let mut k1 = vec![0.0; n];
    let mut k2 = vec![0.0; n];
    let mut k3 = vec![0.0; n];
    let mut k4 = vec![0.0; n];
    let mut tmp = vec![0.0; n];

    rhs(0.0, x, &mut k1);
    for i in 0..n {
        tmp[i] = x[i] + 0.5 * dt * k1[i];
    }
    rhs(0.5, &tmp, &mut k2);
    for i in 0..n {
        tmp[i] = x[i] + 0.5 * dt * k2[i];
    }
    rhs(0.5, &tmp, &mut k3);
    for i in 0..n {
        tmp[i] = x[i] + dt * k3[i];
    }
    rhs(1.0, &tmp, &mut k4);

    (0..n)
        .map(|i| x[i] + dt / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]))
        .collect()
}
