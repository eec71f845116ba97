//! Backward-in-time adjoint solve via the exact transpose of the discrete
//! forward step, with residual sources injected through the transpose of
//! the receiver sampling weights.

use crate::error::SolverError;
use crate::forward::{
    step_forward, step_transpose, PreparedReceiver, SeismogramSet, SnapshotStore,
    SystemOperators, Wavefield, Workspace,
};
use rand::{Rng, SeedableRng};

/// Elementwise simulated-minus-observed residual; masked components stay
/// exactly zero. Geometry, sampling, and masks must match.
pub fn residual_sources(
    sim: &SeismogramSet,
    obs: &SeismogramSet,
) -> Result<SeismogramSet, SolverError> {
    if !sim.geometry_matches(obs) {
        return Err(SolverError::GeometryMismatch(format!(
            "sim ({} rec, {} samp, dt {:.3e}) vs obs ({} rec, {} samp, dt {:.3e})",
            sim.n_receivers(),
            sim.n_samples,
            sim.dt,
            obs.n_receivers(),
            obs.n_samples,
            obs.dt
        )));
    }
    let mut out = sim.clone();
    for (r, row) in out.data.iter_mut().enumerate() {
        for (v, o) in row.iter_mut().zip(&obs.data[r]) {
            *v -= o;
        }
    }
    Ok(out)
}

/// Trapezoid weight of time sample `i` in an `n_samples` series.
#[inline]
pub fn trapezoid_weight(i: usize, n_samples: usize) -> f64 {
    if i == 0 || i + 1 == n_samples {
        0.5
    } else {
        1.0
    }
}

/// Add the misfit-gradient source at time index `i`:
/// sum_r spread_r(residual_r[:, i]) * w_i * dt.
pub fn inject_residuals(
    lam: &mut Wavefield,
    residuals: &SeismogramSet,
    receivers: &[PreparedReceiver],
    i: usize,
) {
    let w = trapezoid_weight(i, residuals.n_samples) * residuals.dt;
    let n_comp = residuals.n_components;
    let n_samples = residuals.n_samples;
    let mut vals = vec![0.0; n_comp];
    for (r, rec) in receivers.iter().enumerate() {
        for (c, v) in vals.iter_mut().enumerate() {
            *v = w * residuals.data[r][c * n_samples + i];
        }
        rec.spread(lam, &vals);
    }
}

/// March the adjoint state backward from lambda(T) = 0 and return its
/// history at `snapshot_cadence` (index j holds lambda at step
/// j * cadence, matching the forward snapshot indexing).
pub fn run_adjoint(
    ops: &SystemOperators,
    residuals: &SeismogramSet,
    receivers: &[PreparedReceiver],
    snapshot_cadence: usize,
) -> Result<SnapshotStore, SolverError> {
    if receivers.len() != residuals.n_receivers() {
        return Err(SolverError::GeometryMismatch(
            "receiver count does not match residual traces".into(),
        ));
    }
    if (residuals.dt - ops.dt).abs() > 1e-15 * ops.dt.abs() {
        return Err(SolverError::MissingForwardRun(format!(
            "residuals sampled at dt {:.6e} but operators assembled for dt {:.6e}",
            residuals.dt, ops.dt
        )));
    }
    let n_steps = residuals.n_samples - 1;
    let cadence = snapshot_cadence.max(1);
    let g = &ops.grid;
    let mut lam = Wavefield::zeros(g.nx, g.nz, ops.n1(), ops.n3());
    let mut ws = Workspace::new(ops);
    let mut history: Vec<Wavefield> = Vec::new();

    // lambda^N = grad g_N
    inject_residuals(&mut lam, residuals, receivers, n_steps);
    lam.t = n_steps as f64 * ops.dt;
    if n_steps % cadence == 0 {
        history.push(lam.clone());
    }
    for n in (0..n_steps).rev() {
        step_transpose(ops, &mut lam, &mut ws);
        inject_residuals(&mut lam, residuals, receivers, n);
        lam.t = n as f64 * ops.dt;
        if n % cadence == 0 {
            history.push(lam.clone());
        }
        if n % 64 == 0 && lam.find_non_finite().is_some() {
            let (_, ix, iz) = lam.find_non_finite().unwrap();
            return Err(SolverError::Instability {
                t: lam.t,
                ix,
                iz,
                field: "adjoint",
            });
        }
    }
    history.reverse();
    Ok(SnapshotStore {
        cadence,
        dt: ops.dt,
        states: history,
    })
}

/// Discrete adjoint identity check: with random per-step state injections
/// u^n and adjoint loads v^n,
///   sum_n <W^n, v^n> = sum_n <u^n, lambda^n>,
/// where W is the forward recursion W^n = A W^{n-1} + u^n and lambda the
/// backward recursion lambda^n = A^T lambda^{n+1} + v^n. Returns
/// |difference| / (||{W}|| * ||{v}||); the transpose is exact, so the
/// discrepancy is pure rounding.
pub fn dot_product_test(ops: &SystemOperators, n_steps: usize, seed: u64) -> f64 {
    let g = &ops.grid;
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    let random_state = |rng: &mut rand_chacha::ChaCha8Rng| {
        let mut w = Wavefield::zeros(g.nx, g.nz, ops.n1(), ops.n3());
        for c in 0..w.n_components() {
            for v in w.component_mut(c) {
                *v = rng.gen_range(-1.0..1.0);
            }
        }
        w
    };
    let u: Vec<Wavefield> = (0..n_steps).map(|_| random_state(&mut rng)).collect();
    let v: Vec<Wavefield> = (0..n_steps).map(|_| random_state(&mut rng)).collect();

    let mut ws = Workspace::new(ops);
    let mut w = Wavefield::zeros(g.nx, g.nz, ops.n1(), ops.n3());
    let mut forward_pairing = 0.0;
    let mut w_norm2 = 0.0;
    for n in 0..n_steps {
        step_forward(ops, &mut w, &[], &mut ws);
        w.axpy(1.0, &u[n]);
        forward_pairing += w.dot(&v[n]);
        w_norm2 += w.dot(&w);
    }

    let mut lam = Wavefield::zeros(g.nx, g.nz, ops.n1(), ops.n3());
    let mut adjoint_pairing = 0.0;
    for n in (0..n_steps).rev() {
        lam.axpy(1.0, &v[n]);
        adjoint_pairing += lam.dot(&u[n]);
        if n > 0 {
            step_transpose(ops, &mut lam, &mut ws);
        }
    }

    let v_norm2: f64 = v.iter().map(|s| s.dot(s)).sum();
    (forward_pairing - adjoint_pairing).abs() / (w_norm2.sqrt() * v_norm2.sqrt()).max(1e-300)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::forward::{
        assemble_system, cfl_dt, max_speed, Boundary, Grid2D, ReceiverSpec,
    };
    use crate::kernel_fit::PoleResidueSet;
    use crate::material::{Axis, MaterialField, PoroelasticParams};

    fn ops(nx: usize, nz: usize, boundary: Boundary) -> SystemOperators {
        let p = PoroelasticParams::reference_sandstone();
        let mf = MaterialField::homogeneous(nx, nz, p).unwrap();
        let grid = Grid2D::new(nx, nz, 2.0, 2.0, 0.0, 0.0);
        let prs1 = PoleResidueSet {
            axis: Axis::X,
            poles: vec![-4.0e3, -9.0e4],
            residues: vec![8.0e3, 5.0e4],
            alpha_inf: p.alpha_inf_1,
            a: p.drag_a(Axis::X),
        };
        let prs3 = PoleResidueSet {
            axis: Axis::Z,
            poles: vec![-6.0e3],
            residues: vec![2.0e4],
            alpha_inf: p.alpha_inf_3,
            a: p.drag_a(Axis::Z),
        };
        let dt = cfl_dt(max_speed(&mf), &grid, 0.8);
        assemble_system(&mf, &prs1, &prs3, &grid, boundary, dt).unwrap()
    }

    #[test]
    fn residuals_zero_when_obs_equals_sim() {
        let rec = ReceiverSpec {
            x: 1.0,
            z: 1.0,
            mask: vec![true; 10],
        };
        let mut sim = SeismogramSet::zeros(vec![rec], 10, 5, 1e-3);
        sim.data[0][7] = 2.5;
        let res = residual_sources(&sim, &sim.clone()).unwrap();
        assert!(res.data[0].iter().all(|&v| v == 0.0));

        // single-sample discrepancy propagates alone
        let mut obs = sim.clone();
        obs.data[0][7] = 1.5;
        let res = residual_sources(&sim, &obs).unwrap();
        assert_eq!(res.data[0][7], 1.0);
        assert_eq!(res.data[0].iter().filter(|&&v| v != 0.0).count(), 1);
    }

    #[test]
    fn geometry_mismatch_detected() {
        let rec = ReceiverSpec {
            x: 1.0,
            z: 1.0,
            mask: vec![true; 10],
        };
        let sim = SeismogramSet::zeros(vec![rec.clone()], 10, 5, 1e-3);
        let obs = SeismogramSet::zeros(vec![rec], 10, 6, 1e-3);
        assert!(matches!(
            residual_sources(&sim, &obs),
            Err(SolverError::GeometryMismatch(_))
        ));
    }

    #[test]
    fn zero_residuals_give_zero_adjoint() {
        let o = ops(10, 10, Boundary::Periodic);
        let rec_spec = ReceiverSpec {
            x: 10.0,
            z: 10.0,
            mask: vec![true; 8 + o.n1() + o.n3()],
        };
        let receivers = vec![crate::forward::PreparedReceiver::prepare(
            rec_spec.clone(),
            &o.grid,
            &o.boundary,
        )
        .unwrap()];
        let res = SeismogramSet::zeros(vec![rec_spec], 8 + o.n1() + o.n3(), 21, o.dt);
        let hist = run_adjoint(&o, &res, &receivers, 1).unwrap();
        assert_eq!(hist.states.len(), 21);
        assert!(hist.states.iter().all(|s| s.max_abs() == 0.0));
    }

    #[test]
    fn adjoint_is_causal_backwards() {
        // residual only at the final sample: lambda must vanish at early
        // backward times... i.e. lambda at step index N is nonzero and the
        // backward march fills earlier steps; residual support only at the
        // last sample means lambda^n for n < N comes only from transposed
        // propagation (nonzero), while a residual only at sample 3 leaves
        // lambda^n for n > 3 exactly zero.
        let o = ops(12, 12, Boundary::Periodic);
        let n_comp = 8 + o.n1() + o.n3();
        let rec_spec = ReceiverSpec {
            x: 12.0,
            z: 12.0,
            mask: vec![true; n_comp],
        };
        let receivers = vec![crate::forward::PreparedReceiver::prepare(
            rec_spec.clone(),
            &o.grid,
            &o.boundary,
        )
        .unwrap()];
        let mut res = SeismogramSet::zeros(vec![rec_spec], n_comp, 21, o.dt);
        res.data[0][3] = 1.0; // component 0, sample 3
        let hist = run_adjoint(&o, &res, &receivers, 1).unwrap();
        for n in 4..=20 {
            assert_eq!(hist.states[n].max_abs(), 0.0, "lambda^{n} not zero");
        }
        assert!(hist.states[3].max_abs() > 0.0);
        assert!(hist.states[0].max_abs() > 0.0);
    }

    #[test]
    fn dot_product_identity_holds_to_rounding() {
        for boundary in [
            Boundary::Periodic,
            Boundary::Sponge {
                width: 3,
                strength: 500.0,
            },
        ] {
            let o = ops(16, 16, boundary);
            let d1 = dot_product_test(&o, 50, 7);
            let d2 = dot_product_test(&o, 50, 1234);
            assert!(d1 <= 1e-12, "discrepancy {d1:e}");
            assert!(d2 <= 1e-12, "discrepancy {d2:e}");
        }
    }

    #[test]
    fn single_step_single_cell_matches_matrix_transpose() {
        let o = ops(8, 8, Boundary::Periodic);
        let mut ws = Workspace::new(&o);
        // delta in one component/cell forward, pair against another delta
        let mut u = Wavefield::zeros(8, 8, o.n1(), o.n3());
        u.v1[3 + 8 * 4] = 1.0;
        let mut v = Wavefield::zeros(8, 8, o.n1(), o.n3());
        v.t13[5 + 8 * 2] = 1.0;
        let mut au = u.clone();
        step_forward(&o, &mut au, &[], &mut ws);
        let mut atv = v.clone();
        step_transpose(&o, &mut atv, &mut ws);
        let lhs = au.dot(&v);
        let rhs = u.dot(&atv);
        assert!((lhs - rhs).abs() <= 1e-15 + 1e-13 * lhs.abs());
    }
}
