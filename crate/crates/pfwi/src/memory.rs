//! Time-local update rules and brute-force oracles for the convolution
//! and auxiliary variables.
//!
//! The auxiliary field Theta_k = (-theta_k) e^{theta_k t} * q obeys
//! dTheta/dt = theta*(Theta - q); `theta_step` advances it exactly for q
//! linear within a step and is unconditionally stable for theta < 0. The
//! rest of this module is 0-D oracle machinery: direct convolution, the
//! phi-ODE integrator, the Caputo half-derivative, and the diffusive
//! (psi-field) representation of the shifted fractional derivative.

/// One exact exponential update of dTheta/dt = theta*(Theta - q), assuming
/// q varies linearly from `q_begin` to `q_end` over the step.
#[inline]
pub fn theta_step(theta: f64, q_begin: f64, q_end: f64, dt: f64, vartheta: f64) -> f64 {
    debug_assert!(dt > 0.0 && vartheta < 0.0);
    let x = vartheta * dt;
    let em1 = x.exp_m1();
    let e = em1 + 1.0;
    // int_0^dt (-theta) e^{theta (dt-tau)} * (tau/dt) dtau = 1 - em1/x
    let slope_coef = 1.0 - em1 / x;
    e * theta + (-em1) * q_begin + slope_coef * (q_end - q_begin)
}

/// Brute-force discrete convolution Theta(t_n) =
/// [(-vartheta) e^{vartheta t} * q](t_n) by trapezoidal quadrature; O(n^2).
pub fn convolution_oracle(q_series: &[f64], vartheta: f64, dt: f64) -> Vec<f64> {
    let n = q_series.len();
    let mut out = vec![0.0; n];
    for i in 1..n {
        let t_n = i as f64 * dt;
        let mut acc = 0.0;
        for (j, &q) in q_series.iter().enumerate().take(i + 1) {
            let tau = j as f64 * dt;
            let w = if j == 0 || j == i { 0.5 } else { 1.0 };
            acc += w * (-vartheta) * (vartheta * (t_n - tau)).exp() * q;
        }
        out[i] = acc * dt;
    }
    out
}

/// phi_k = q - Theta_k.
///
/// The identity is not free: it is verified against an independent
/// integration of dphi/dt = vartheta*phi + dq/dt in the test suite before
/// the energy module relies on it.
#[inline]
pub fn phi_from_theta(q: f64, theta: f64) -> f64 {
    q - theta
}

/// Integrate dphi/dt = vartheta*phi + dq/dt with RK4 from phi(0) = 0;
/// returns phi at every step boundary. `dq` is the analytic derivative.
pub fn phi_ode_oracle<F>(dq: F, vartheta: f64, dt: f64, n_steps: usize) -> Vec<f64>
where
    F: Fn(f64) -> f64,
{
    let mut out = Vec::with_capacity(n_steps + 1);
    let mut phi = 0.0;
    out.push(phi);
    for n in 0..n_steps {
        let t = n as f64 * dt;
        let f = |t: f64, p: f64| vartheta * p + dq(t);
        let k1 = f(t, phi);
        let k2 = f(t + 0.5 * dt, phi + 0.5 * dt * k1);
        let k3 = f(t + 0.5 * dt, phi + 0.5 * dt * k2);
        let k4 = f(t + dt, phi + dt * k3);
        phi += dt / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
        out.push(phi);
    }
    out
}

/// Gauss-Legendre nodes and weights on [-1, 1] by Newton iteration on the
/// Legendre recurrence.
pub fn gauss_legendre(n: usize) -> (Vec<f64>, Vec<f64>) {
    assert!(n >= 1);
    let mut nodes = vec![0.0; n];
    let mut weights = vec![0.0; n];
    let m = n.div_ceil(2);
    for i in 0..m {
        // Chebyshev-based initial guess
        let mut x = (std::f64::consts::PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
        let mut dp = 0.0;
        for _ in 0..100 {
            // evaluate P_n(x) and P_n'(x)
            let mut p0 = 1.0;
            let mut p1 = x;
            for k in 2..=n {
                let p2 = ((2 * k - 1) as f64 * x * p1 - (k - 1) as f64 * p0) / k as f64;
                p0 = p1;
                p1 = p2;
            }
            dp = n as f64 * (x * p1 - p0) / (x * x - 1.0);
            let dx = p1 / dp;
            x -= dx;
            if dx.abs() < 1e-15 {
                break;
            }
        }
        let w = 2.0 / ((1.0 - x * x) * dp * dp);
        nodes[i] = -x;
        nodes[n - 1 - i] = x;
        weights[i] = w;
        weights[n - 1 - i] = w;
    }
    if n % 2 == 1 {
        nodes[n / 2] = 0.0;
        // P_n'(0) via recurrence
        let mut p0 = 1.0;
        let mut p1 = 0.0;
        for k in 2..=n {
            let p2 = -((k - 1) as f64) * p0 / k as f64;
            p0 = p1;
            p1 = p2;
        }
        // derivative at 0: n * p_{n-1}(0)  (from (x^2-1)P' = n(xP - P_{n-1}))
        let dp = n as f64 * p0;
        weights[n / 2] = 2.0 / (dp * dp);
    }
    (nodes, weights)
}

/// Caputo half-derivative of f at time t by direct quadrature of
/// (1/sqrt(pi)) int_0^t f'(tau)/sqrt(t - tau) dtau, desingularized with
/// tau = t - u^2 (then the integrand is smooth and Gauss-Legendre applies).
pub fn caputo_half_derivative<F>(f_prime: F, t: f64, n_quad: usize) -> f64
where
    F: Fn(f64) -> f64,
{
    if t <= 0.0 {
        return 0.0;
    }
    let (x, w) = gauss_legendre(n_quad);
    let half = t.sqrt() / 2.0;
    let mut acc = 0.0;
    for (xi, wi) in x.iter().zip(&w) {
        let u = half * (xi + 1.0);
        acc += wi * f_prime(t - u * u);
    }
    acc * half * 2.0 / std::f64::consts::PI.sqrt()
}

/// Quadrature over the diffusive variable y in (0, inf): mapped
/// Gauss-Legendre with y = c(1+x)/(1-x), which matches the psi ~ y^-2
/// tail of the integrand.
#[derive(Debug, Clone)]
pub struct DiffusiveGrid {
    pub nodes: Vec<f64>,
    pub weights: Vec<f64>,
}

impl DiffusiveGrid {
    /// `scale` sets the node clustering; good values sit near the sqrt of
    /// the dominant signal frequency (rad/s).
    pub fn new(n_quad: usize, scale: f64) -> Self {
        assert!(scale > 0.0);
        let (x, w) = gauss_legendre(n_quad);
        let mut nodes = Vec::with_capacity(n_quad);
        let mut weights = Vec::with_capacity(n_quad);
        for (xi, wi) in x.iter().zip(&w) {
            let denom = 1.0 - xi;
            nodes.push(scale * (1.0 + xi) / denom);
            weights.push(wi * 2.0 * scale / (denom * denom));
        }
        DiffusiveGrid { nodes, weights }
    }
}

/// Diffusive state psi_j(y_m, t) evolving by exact exponential updates;
/// evaluates the shifted half-order derivative (d/dt + lambda)^(1/2) q as
/// (2/pi) sum_m w_m psi(y_m, t).
#[derive(Debug, Clone)]
pub struct DiffusiveState {
    grid: DiffusiveGrid,
    psi: Vec<f64>,
    lambda: f64,
}

impl DiffusiveState {
    pub fn new(grid: DiffusiveGrid, lambda: f64) -> Self {
        let n = grid.nodes.len();
        DiffusiveState {
            grid,
            psi: vec![0.0; n],
            lambda,
        }
    }

    /// Advance all psi nodes one step; `g_begin`/`g_end` are the forcing
    /// lambda*q + dq/dt at the step endpoints (assumed linear between).
    pub fn step(&mut self, g_begin: f64, g_end: f64, dt: f64) {
        for (psi, &y) in self.psi.iter_mut().zip(&self.grid.nodes) {
            let rate = -(y * y + self.lambda);
            let x = rate * dt;
            let em1 = x.exp_m1();
            let e = em1 + 1.0;
            // psi' = rate*psi + g:  psi+ = E psi + A g0 + B (g1 - g0)
            let a = em1 / rate;
            let b = (em1 - x) / (rate * rate * dt);
            *psi = e * *psi + a * g_begin + b * (g_end - g_begin);
        }
    }

    /// (2/pi) * sum_m w_m psi_m.
    pub fn output(&self) -> f64 {
        let dot: f64 = self
            .psi
            .iter()
            .zip(&self.grid.weights)
            .map(|(p, w)| p * w)
            .sum();
        dot * 2.0 / std::f64::consts::PI
    }
}

/// Evaluate (d/dt + lambda)^(1/2) q on a sampled series via the diffusive
/// representation; q(0) must be 0. The forcing derivative dq/dt is formed
/// by centered differences.
pub fn shifted_fracderiv_oracle(
    q_series: &[f64],
    lambda: f64,
    dt: f64,
    n_quad: usize,
    y_scale: f64,
) -> Vec<f64> {
    let n = q_series.len();
    let mut out = vec![0.0; n];
    if n < 2 {
        return out;
    }
    let dq = |i: usize| -> f64 {
        if i == 0 {
            (q_series[1] - q_series[0]) / dt
        } else if i == n - 1 {
            (q_series[n - 1] - q_series[n - 2]) / dt
        } else {
            (q_series[i + 1] - q_series[i - 1]) / (2.0 * dt)
        }
    };
    let grid = DiffusiveGrid::new(n_quad, y_scale);
    let mut state = DiffusiveState::new(grid, lambda);
    for i in 1..n {
        let g0 = lambda * q_series[i - 1] + dq(i - 1);
        let g1 = lambda * q_series[i] + dq(i);
        state.step(g0, g1, dt);
        out[i] = state.output();
    }
    out
}

/// Pole-residue drag (rho_f/phi) [(a + sum r_k) q - sum r_k Theta_k] on a
/// 0-D signal, with Theta advanced by `theta_step`; this is the memory
/// force the augmented Darcy law applies to q.
pub fn pole_residue_drag(
    q_series: &[f64],
    poles: &[f64],
    residues: &[f64],
    a: f64,
    rho_f_over_phi: f64,
    dt: f64,
) -> Vec<f64> {
    let n = q_series.len();
    let r_sum: f64 = residues.iter().sum();
    let mut theta = vec![0.0; poles.len()];
    let mut out = vec![0.0; n];
    out[0] = rho_f_over_phi * (a + r_sum) * q_series[0];
    for i in 1..n {
        let mut mem = 0.0;
        for ((th, &pole), &r) in theta.iter_mut().zip(poles).zip(residues) {
            *th = theta_step(*th, q_series[i - 1], q_series[i], dt, pole);
            mem += r * *th;
        }
        out[i] = rho_f_over_phi * ((a + r_sum) * q_series[i] - mem);
    }
    out
}
