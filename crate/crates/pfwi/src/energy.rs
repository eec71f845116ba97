//! Energy functionals and dissipation of the augmented system on the
//! discrete staggered state, plus decay/balance certification.
//!
//! Quadrature note: each quadratic form is summed at its field's own
//! staggered position with the material averaged there (a midpoint rule
//! on the shifted lattice). With that choice the semi-discrete identity
//! dE/dt = -D holds exactly for the spatial discretization, so the
//! measured balance residual is purely a time-integration error and
//! converges at the splitting order.

use crate::error::SolverError;
use crate::forward::{SystemOperators, Wavefield};
use crate::parallel::pairwise_sum;

fn quad_sum<F>(n: usize, f: F) -> f64
where
    F: Fn(usize) -> f64,
{
    let contrib: Vec<f64> = (0..n).map(f).collect();
    pairwise_sum(&contrib)
}

/// Kinetic energy E1 = 1/2 int rho v.v + 2 rho_f v.q + q diag(m_j) q.
pub fn energy_e1(w: &Wavefield, ops: &SystemOperators) -> f64 {
    let n = ops.grid.n_cells();
    let da = ops.grid.cell_area();
    let ex = quad_sum(n, |i| {
        let m = &ops.m2_x[i];
        let (v, q) = (w.v1[i], w.q1[i]);
        m[0] * v * v + 2.0 * m[1] * v * q + m[2] * q * q
    });
    let ez = quad_sum(n, |i| {
        let m = &ops.m2_z[i];
        let (v, q) = (w.v3[i], w.q3[i]);
        m[0] * v * v + 2.0 * m[1] * v * q + m[2] * q * q
    });
    0.5 * da * (ex + ez)
}

/// Strain energy E2 = 1/2 int (tau + p beta)^T C^-1 (tau + p beta) + p^2/M,
/// evaluated as 1/2 sigma^T E^-1 sigma in the (tau11, tau33, -p) block plus
/// the decoupled shear term.
pub fn energy_e2(w: &Wavefield, ops: &SystemOperators) -> f64 {
    let n = ops.grid.n_cells();
    let da = ops.grid.cell_area();
    let ec = quad_sum(n, |i| {
        let e = &ops.e3inv[i];
        let s = [w.t11[i], w.t33[i], w.np[i]];
        let y = crate::forward::operators::sym3_mul(e, s);
        s[0] * y[0] + s[1] * y[1] + s[2] * y[2]
    });
    let es = quad_sum(n, |i| w.t13[i] * w.t13[i] / ops.c55[i]);
    0.5 * da * (ec + es)
}

/// Memory energy E3' = 1/2 sum_j sum_k int (rho_f r_k / (phi (-theta_k)))
/// (phi_k - q_j)^2 with phi_k - q_j = -Theta_k.
pub fn energy_e3_augmented(w: &Wavefield, ops: &SystemOperators) -> f64 {
    let n = ops.grid.n_cells();
    let da = ops.grid.cell_area();
    let mut total = 0.0;
    for (k, th) in w.th1.iter().enumerate() {
        let r = ops.prs1.residues[k];
        let neg_pole = -ops.prs1.poles[k];
        total += quad_sum(n, |i| ops.rscale_x[i] * r / neg_pole * th[i] * th[i]);
    }
    for (k, th) in w.th3.iter().enumerate() {
        let r = ops.prs3.residues[k];
        let neg_pole = -ops.prs3.poles[k];
        total += quad_sum(n, |i| ops.rscale_z[i] * r / neg_pole * th[i] * th[i]);
    }
    0.5 * da * total
}

/// Dissipation rate D = int q diag(eta/kappa_j) q
/// + sum_{j,k} (rho_f/phi) r_k (q_j - Theta_k)^2 >= 0.
pub fn dissipation_rate(w: &Wavefield, ops: &SystemOperators) -> f64 {
    let n = ops.grid.n_cells();
    let da = ops.grid.cell_area();
    let mut total = quad_sum(n, |i| ops.etakappa_x[i] * w.q1[i] * w.q1[i])
        + quad_sum(n, |i| ops.etakappa_z[i] * w.q3[i] * w.q3[i]);
    for (k, th) in w.th1.iter().enumerate() {
        let r = ops.prs1.residues[k];
        total += quad_sum(n, |i| {
            let d = w.q1[i] - th[i];
            ops.rscale_x[i] * r * d * d
        });
    }
    for (k, th) in w.th3.iter().enumerate() {
        let r = ops.prs3.residues[k];
        total += quad_sum(n, |i| {
            let d = w.q3[i] - th[i];
            ops.rscale_z[i] * r * d * d
        });
    }
    da * total
}

/// Time series of the energy components and dissipation.
#[derive(Debug, Clone, Default)]
pub struct EnergyLedger {
    pub t: Vec<f64>,
    pub e1: Vec<f64>,
    pub e2: Vec<f64>,
    pub e3: Vec<f64>,
    pub e_total: Vec<f64>,
    pub dissipation: Vec<f64>,
}

impl EnergyLedger {
    pub fn record(&mut self, w: &Wavefield, ops: &SystemOperators) {
        let e1 = energy_e1(w, ops);
        let e2 = energy_e2(w, ops);
        let e3 = energy_e3_augmented(w, ops);
        debug_assert!(e1 >= 0.0 && e2 >= 0.0 && e3 >= 0.0);
        self.t.push(w.t);
        self.e1.push(e1);
        self.e2.push(e2);
        self.e3.push(e3);
        self.e_total.push(e1 + e2 + e3);
        self.dissipation.push(dissipation_rate(w, ops));
    }

    pub fn len(&self) -> usize {
        self.t.len()
    }

    pub fn is_empty(&self) -> bool {
        self.t.is_empty()
    }

    /// |dE/dt + D| per sample interval with trapezoidal D.
    pub fn balance_residuals(&self) -> Vec<f64> {
        (1..self.len())
            .map(|i| {
                let dt = self.t[i] - self.t[i - 1];
                let de = (self.e_total[i] - self.e_total[i - 1]) / dt;
                let d_avg = 0.5 * (self.dissipation[i] + self.dissipation[i - 1]);
                (de + d_avg).abs()
            })
            .collect()
    }
}

/// Decay certification summary.
#[derive(Debug, Clone)]
pub struct DecayReport {
    /// Worst E(t_{i+1})/E(t_i) - 1 over the checked window (<= tol passes).
    pub max_growth: f64,
    /// Max |dE/dt + D| over the checked window.
    pub max_balance_residual: f64,
}

/// Assert post-source monotone decay: E(t_{i+1}) <= E(t_i)(1 + tol) for
/// all samples with t_i >= t_start.
pub fn check_decay(
    ledger: &EnergyLedger,
    tol: f64,
    t_start: f64,
) -> Result<DecayReport, SolverError> {
    let mut max_growth = f64::NEG_INFINITY;
    let mut violation: Option<(usize, f64)> = None;
    for i in 1..ledger.len() {
        if ledger.t[i - 1] < t_start {
            continue;
        }
        let prev = ledger.e_total[i - 1];
        let cur = ledger.e_total[i];
        let growth = if prev > 0.0 { cur / prev - 1.0 } else { 0.0 };
        max_growth = max_growth.max(growth);
        if growth > tol && violation.is_none() {
            violation = Some((i, cur / prev));
        }
    }
    let residuals = ledger.balance_residuals();
    let report = DecayReport {
        max_growth: if max_growth.is_finite() {
            max_growth
        } else {
            0.0
        },
        max_balance_residual: residuals.iter().copied().fold(0.0, f64::max),
    };
    match violation {
        Some((index, ratio)) => Err(SolverError::DecayViolation { index, ratio }),
        None => Ok(report),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::forward::grid::{Boundary, Grid2D};
    use crate::forward::operators::{assemble_system, cfl_dt, max_speed};
    use crate::kernel_fit::PoleResidueSet;
    use crate::material::{Axis, MaterialField, PoroelasticParams};
    use approx::assert_relative_eq;
    use rand::{Rng, SeedableRng};

    fn ops(nx: usize, nz: usize) -> SystemOperators {
        let p = PoroelasticParams::reference_sandstone();
        let mf = MaterialField::homogeneous(nx, nz, p).unwrap();
        let grid = Grid2D::new(nx, nz, 2.0, 2.0, 0.0, 0.0);
        let prs1 = PoleResidueSet {
            axis: Axis::X,
            poles: vec![-3.0e3],
            residues: vec![1.0e4],
            alpha_inf: p.alpha_inf_1,
            a: p.drag_a(Axis::X),
        };
        let prs3 = PoleResidueSet {
            axis: Axis::Z,
            poles: vec![-5.0e3],
            residues: vec![2.0e4],
            alpha_inf: p.alpha_inf_3,
            a: p.drag_a(Axis::Z),
        };
        let dt = cfl_dt(max_speed(&mf), &grid, 0.8);
        assemble_system(&mf, &prs1, &prs3, &grid, Boundary::Periodic, dt).unwrap()
    }

    #[test]
    fn zero_state_zero_energy() {
        let o = ops(8, 8);
        let w = Wavefield::zeros(8, 8, 1, 1);
        assert_eq!(energy_e1(&w, &o), 0.0);
        assert_eq!(energy_e2(&w, &o), 0.0);
        assert_eq!(energy_e3_augmented(&w, &o), 0.0);
        assert_eq!(dissipation_rate(&w, &o), 0.0);
    }

    #[test]
    fn single_cell_quadratic_forms() {
        let o = ops(8, 8);
        let p = PoroelasticParams::reference_sandstone();
        let da = o.grid.cell_area();
        // v = q = 1 in one x-face position
        let mut w = Wavefield::zeros(8, 8, 1, 1);
        w.v1[12] = 1.0;
        w.q1[12] = 1.0;
        let d = crate::material::derive_coefficients(&p).unwrap();
        let want = 0.5 * (d.rho_bulk + 2.0 * p.rho_f + d.m_1) * da;
        assert_relative_eq!(energy_e1(&w, &o), want, max_relative = 1e-13);

        // single Theta
        let mut w = Wavefield::zeros(8, 8, 1, 1);
        w.th1[0][20] = 1.0;
        let want = 0.5 * (p.rho_f / p.phi) * 1.0e4 / 3.0e3 * da;
        assert_relative_eq!(energy_e3_augmented(&w, &o), want, max_relative = 1e-13);
    }

    #[test]
    fn e2_reduces_to_pressure_term_for_tau_eq_minus_p_beta() {
        let o = ops(8, 8);
        let p = PoroelasticParams::reference_sandstone();
        let d = crate::material::derive_coefficients(&p).unwrap();
        let press = 2.0e5;
        let mut w = Wavefield::zeros(8, 8, 1, 1);
        // tau = -p beta state in one cell
        w.t11[5] = -press * d.beta_1;
        w.t33[5] = -press * d.beta_3;
        w.np[5] = -press;
        let want = 0.5 * press * press / d.m_biot * o.grid.cell_area();
        assert_relative_eq!(energy_e2(&w, &o), want, max_relative = 1e-12);
    }

    #[test]
    fn energies_match_brute_force_quadratic_forms_on_random_state() {
        let o = ops(9, 11);
        let mut w = Wavefield::zeros(9, 11, 1, 1);
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(5);
        for c in 0..w.n_components() {
            for v in w.component_mut(c) {
                *v = rng.gen_range(-1.0..1.0);
            }
        }
        // brute-force with nalgebra per-position matrices
        let n = o.grid.n_cells();
        let da = o.grid.cell_area();
        let mut e1 = 0.0;
        for i in 0..n {
            let m = nalgebra::Matrix2::new(o.m2_x[i][0], o.m2_x[i][1], o.m2_x[i][1], o.m2_x[i][2]);
            let u = nalgebra::Vector2::new(w.v1[i], w.q1[i]);
            e1 += 0.5 * da * (u.transpose() * m * u)[0];
            let m = nalgebra::Matrix2::new(o.m2_z[i][0], o.m2_z[i][1], o.m2_z[i][1], o.m2_z[i][2]);
            let u = nalgebra::Vector2::new(w.v3[i], w.q3[i]);
            e1 += 0.5 * da * (u.transpose() * m * u)[0];
        }
        assert_relative_eq!(energy_e1(&w, &o), e1, max_relative = 1e-12);

        let mut e2 = 0.0;
        for i in 0..n {
            let e = &o.e3inv[i];
            let m = nalgebra::Matrix3::new(e[0], e[1], e[2], e[1], e[3], e[4], e[2], e[4], e[5]);
            let s = nalgebra::Vector3::new(w.t11[i], w.t33[i], w.np[i]);
            e2 += 0.5 * da * (s.transpose() * m * s)[0];
            e2 += 0.5 * da * w.t13[i] * w.t13[i] / o.c55[i];
        }
        assert_relative_eq!(energy_e2(&w, &o), e2, max_relative = 1e-12);
    }

    #[test]
    fn conservative_limit_has_zero_dissipation() {
        // eta -> irrelevant: empty pole sets and etakappa from eta=0 is not
        // representable (eta > 0 invariant); instead check the formula path:
        // q = Theta and etakappa weight times q=0 gives zero.
        let o = ops(8, 8);
        let mut w = Wavefield::zeros(8, 8, 1, 1);
        w.v1.fill(1.0);
        w.t11.fill(5.0);
        assert_eq!(dissipation_rate(&w, &o), 0.0);
    }

    #[test]
    fn decay_check_flags_growth() {
        let mut ledger = EnergyLedger::default();
        ledger.t = vec![0.0, 1.0, 2.0];
        ledger.e_total = vec![1.0, 0.9, 0.95];
        ledger.e1 = vec![0.0; 3];
        ledger.e2 = vec![0.0; 3];
        ledger.e3 = vec![0.0; 3];
        ledger.dissipation = vec![0.0; 3];
        assert!(matches!(
            check_decay(&ledger, 1e-8, 0.0),
            Err(SolverError::DecayViolation { index: 2, .. })
        ));
        // trivially passes on a zero ledger
        let mut z = EnergyLedger::default();
        z.t = vec![0.0, 1.0];
        z.e_total = vec![0.0, 0.0];
        z.e1 = vec![0.0; 2];
        z.e2 = vec![0.0; 2];
        z.e3 = vec![0.0; 2];
        z.dissipation = vec![0.0; 2];
        assert!(check_decay(&z, 1e-8, 0.0).is_ok());
    }
}
