//! The Strang-split time step and its exact discrete transpose.
//!
//! One step is Z . Eh . P . Eh . Z where Z zeroes the outer ring (sponge
//! mode only), Eh is the per-position exponential of the local generator
//! times the sponge decay, and P is classic RK4 applied to the transport
//! part T = N1inv . B1. Every factor is linear, so the transpose step is
//! the reversed composition of transposed factors; for the RK4 polynomial
//! that is just RK4 with T replaced by its transpose -B1 . N1inv.

use super::grid::Lattice;
use super::operators::{sym3_mul, SystemOperators};
use super::source::PreparedSource;
use super::wavefield::Wavefield;
use crate::parallel;

/// Scratch states reused across steps.
pub struct Workspace {
    k: Wavefield,
    stage_in: Wavefield,
    acc: Wavefield,
    tmp: Wavefield,
}

impl Workspace {
    pub fn new(ops: &SystemOperators) -> Self {
        let g = &ops.grid;
        let z = || Wavefield::zeros(g.nx, g.nz, ops.n1(), ops.n3());
        Workspace {
            k: z(),
            stage_in: z(),
            acc: z(),
            tmp: z(),
        }
    }
}

/// dst = sign * B1(src): the pure stencil part of the system. Theta
/// components of dst are zeroed (transport does not touch them).
pub fn apply_b1(ops: &SystemOperators, dst: &mut Wavefield, src: &Wavefield, sign: f64) {
    use super::stencil::{dx_minus, dx_plus, dz_minus, dz_plus};
    let g = &ops.grid;
    let (nx, nz) = (g.nx, g.nz);
    let per = ops.periodic();
    let (ix, iz) = (1.0 / g.dx, 1.0 / g.dz);

    dst.v1.fill(0.0);
    dx_plus(&mut dst.v1, &src.t11, nx, nz, ix, sign, per);
    dz_minus(&mut dst.v1, &src.t13, nx, nz, iz, sign, per);

    dst.v3.fill(0.0);
    dx_minus(&mut dst.v3, &src.t13, nx, nz, ix, sign, per);
    dz_plus(&mut dst.v3, &src.t33, nx, nz, iz, sign, per);

    dst.q1.fill(0.0);
    dx_plus(&mut dst.q1, &src.np, nx, nz, ix, sign, per);

    dst.q3.fill(0.0);
    dz_plus(&mut dst.q3, &src.np, nx, nz, iz, sign, per);

    dst.t11.fill(0.0);
    dx_minus(&mut dst.t11, &src.v1, nx, nz, ix, sign, per);

    dst.t33.fill(0.0);
    dz_minus(&mut dst.t33, &src.v3, nx, nz, iz, sign, per);

    dst.t13.fill(0.0);
    dz_plus(&mut dst.t13, &src.v1, nx, nz, iz, sign, per);
    dx_plus(&mut dst.t13, &src.v3, nx, nz, ix, sign, per);

    dst.np.fill(0.0);
    dx_minus(&mut dst.np, &src.q1, nx, nz, ix, sign, per);
    dz_minus(&mut dst.np, &src.q3, nx, nz, iz, sign, per);

    for f in dst.th1.iter_mut().chain(dst.th3.iter_mut()) {
        f.fill(0.0);
    }
}

/// In-place block-diagonal multiply by N1inv = diag(Mv^-1, E, I): velocity
/// pairs by the face inertia inverses, stress triple by E3, shear by c55.
/// Symmetric, so it is its own transpose.
pub fn apply_n1inv(ops: &SystemOperators, w: &mut Wavefield) {
    let nx = ops.grid.nx;
    // (v1, q1) on x faces
    {
        let bundles = parallel::row_bundles(vec![&mut w.v1, &mut w.q1], nx);
        let minv = &ops.minv_x;
        parallel::for_each_bundle(bundles, |iz, rows| {
            let base = iz * nx;
            let (r_v, r_q) = rows.split_at_mut(1);
            for i in 0..nx {
                let m = &minv[base + i];
                let a = r_v[0][i];
                let b = r_q[0][i];
                r_v[0][i] = m[0] * a + m[1] * b;
                r_q[0][i] = m[1] * a + m[2] * b;
            }
        });
    }
    // (v3, q3) on z faces
    {
        let bundles = parallel::row_bundles(vec![&mut w.v3, &mut w.q3], nx);
        let minv = &ops.minv_z;
        parallel::for_each_bundle(bundles, |iz, rows| {
            let base = iz * nx;
            let (r_v, r_q) = rows.split_at_mut(1);
            for i in 0..nx {
                let m = &minv[base + i];
                let a = r_v[0][i];
                let b = r_q[0][i];
                r_v[0][i] = m[0] * a + m[1] * b;
                r_q[0][i] = m[1] * a + m[2] * b;
            }
        });
    }
    // (t11, t33, np) at centers
    {
        let bundles = parallel::row_bundles(vec![&mut w.t11, &mut w.t33, &mut w.np], nx);
        let e3 = &ops.e3;
        parallel::for_each_bundle(bundles, |iz, rows| {
            let base = iz * nx;
            let (r11, rest) = rows.split_at_mut(1);
            let (r33, rnp) = rest.split_at_mut(1);
            for i in 0..nx {
                let y = sym3_mul(&e3[base + i], [r11[0][i], r33[0][i], rnp[0][i]]);
                r11[0][i] = y[0];
                r33[0][i] = y[1];
                rnp[0][i] = y[2];
            }
        });
    }
    // t13 at corners
    {
        let c55 = &ops.c55;
        parallel::for_each_row_band(&mut w.t13, nx, |iz, row| {
            let base = iz * nx;
            for (i, v) in row.iter_mut().enumerate() {
                *v *= c55[base + i];
            }
        });
    }
}

fn local_half_axis(
    face_fields: Vec<&mut [f64]>,
    eh: &[f64],
    sponge: &[f64],
    nx: usize,
    dim: usize,
    transpose: bool,
) {
    let bundles = parallel::row_bundles(face_fields, nx);
    parallel::for_each_bundle(bundles, |iz, rows| {
        let base = iz * nx;
        let mut u = vec![0.0; dim];
        for i in 0..nx {
            let pos = base + i;
            for (c, row) in rows.iter().enumerate() {
                u[c] = row[i];
            }
            let m = &eh[pos * dim * dim..(pos + 1) * dim * dim];
            let sp = sponge[pos];
            for (r, row) in rows.iter_mut().enumerate() {
                let mut acc = 0.0;
                if transpose {
                    for (c, uc) in u.iter().enumerate() {
                        acc += m[c * dim + r] * uc;
                    }
                } else {
                    for (c, uc) in u.iter().enumerate() {
                        acc += m[r * dim + c] * uc;
                    }
                }
                row[i] = sp * acc;
            }
        }
    });
}

/// Half-step of the local terms: per-face exponential of the coupled
/// (v, q, Theta) block, then diagonal sponge decay on every component.
/// `transpose` applies the transposed block matrices (the sponge is
/// diagonal, hence self-adjoint).
pub fn local_half(ops: &SystemOperators, w: &mut Wavefield, transpose: bool) {
    let nx = ops.grid.nx;
    // x-face block (v1, q1, Theta^1)
    {
        let mut fields: Vec<&mut [f64]> = vec![&mut w.v1, &mut w.q1];
        for f in w.th1.iter_mut() {
            fields.push(f);
        }
        local_half_axis(
            fields,
            &ops.eh_x,
            &ops.sponge_xface,
            nx,
            ops.dim_x(),
            transpose,
        );
    }
    // z-face block (v3, q3, Theta^3)
    {
        let mut fields: Vec<&mut [f64]> = vec![&mut w.v3, &mut w.q3];
        for f in w.th3.iter_mut() {
            fields.push(f);
        }
        local_half_axis(
            fields,
            &ops.eh_z,
            &ops.sponge_zface,
            nx,
            ops.dim_z(),
            transpose,
        );
    }
    // sponge decay on the stress components
    for (buf, lattice) in [
        (&mut w.t11, Lattice::Center),
        (&mut w.t33, Lattice::Center),
        (&mut w.np, Lattice::Center),
        (&mut w.t13, Lattice::Corner),
    ] {
        let sp = ops.sponge_of(lattice);
        parallel::for_each_row_band(buf, nx, |iz, row| {
            let base = iz * nx;
            for (i, v) in row.iter_mut().enumerate() {
                *v *= sp[base + i];
            }
        });
    }
}

/// Zero the outermost ring of every component (sponge mode); enforces the
/// adjoint boundary condition and is a self-adjoint projection.
pub fn zero_ring(ops: &SystemOperators, w: &mut Wavefield) {
    if ops.periodic() {
        return;
    }
    let (nx, nz) = (ops.grid.nx, ops.grid.nz);
    for c in 0..w.n_components() {
        let f = w.component_mut(c);
        f[..nx].fill(0.0);
        f[nx * (nz - 1)..].fill(0.0);
        for izr in 1..nz - 1 {
            f[nx * izr] = 0.0;
            f[nx * izr + nx - 1] = 0.0;
        }
    }
}

/// dst = T(src) (+ raw sources injected in flux space when forward), or
/// dst = T^T(src) in transpose mode.
fn apply_transport(
    ops: &SystemOperators,
    dst: &mut Wavefield,
    src: &Wavefield,
    tmp: &mut Wavefield,
    sources: &[PreparedSource],
    t_stage: f64,
    transpose: bool,
) {
    if transpose {
        // T^T = -B1 . N1inv
        tmp.clone_from(src);
        apply_n1inv(ops, tmp);
        apply_b1(ops, dst, tmp, -1.0);
    } else {
        apply_b1(ops, dst, src, 1.0);
        for s in sources {
            s.inject_flux(dst, t_stage);
        }
        apply_n1inv(ops, dst);
    }
}

/// Classic RK4 for dW/dt = T W + S(t), written so that the transpose mode
/// computes exactly P(dt T)^T = P(dt T^T) with no sources.
#[allow(clippy::too_many_arguments)]
fn rk4(
    ops: &SystemOperators,
    w: &mut Wavefield,
    t: f64,
    dt: f64,
    sources: &[PreparedSource],
    ws: &mut Workspace,
    transpose: bool,
) {
    let stage_times = [t, t + 0.5 * dt, t + 0.5 * dt, t + dt];
    let acc_coef = [dt / 6.0, dt / 3.0, dt / 3.0, dt / 6.0];
    let stage_coef = [0.5 * dt, 0.5 * dt, dt];

    ws.acc.clone_from(w);
    for stage in 0..4 {
        {
            let input: &Wavefield = if stage == 0 { w } else { &ws.stage_in };
            apply_transport(
                ops,
                &mut ws.k,
                input,
                &mut ws.tmp,
                sources,
                stage_times[stage],
                transpose,
            );
        }
        ws.acc.axpy(acc_coef[stage], &ws.k);
        if stage < 3 {
            ws.stage_in.clone_from(w);
            ws.stage_in.axpy(stage_coef[stage], &ws.k);
        }
    }
    w.clone_from(&ws.acc);
}

/// Advance the state one step of `ops.dt`, injecting `sources`.
pub fn step_forward(
    ops: &SystemOperators,
    w: &mut Wavefield,
    sources: &[PreparedSource],
    ws: &mut Workspace,
) {
    let t = w.t;
    let dt = ops.dt;
    zero_ring(ops, w);
    local_half(ops, w, false);
    rk4(ops, w, t, dt, sources, ws, false);
    local_half(ops, w, false);
    zero_ring(ops, w);
    w.t = t + dt;
}

/// Apply the exact transpose of the homogeneous forward step.
pub fn step_transpose(ops: &SystemOperators, lam: &mut Wavefield, ws: &mut Workspace) {
    zero_ring(ops, lam);
    local_half(ops, lam, true);
    rk4(ops, lam, 0.0, ops.dt, &[], ws, true);
    local_half(ops, lam, true);
    zero_ring(ops, lam);
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::forward::grid::{Boundary, Grid2D};
    use crate::forward::operators::{assemble_system, cfl_dt, max_speed};
    use crate::forward::source::{Ricker, SourceChannel, SourceSpec};
    use crate::kernel_fit::PoleResidueSet;
    use crate::material::{Axis, MaterialField, PoroelasticParams};
    use rand::{Rng, SeedableRng};

    fn test_sets() -> (PoleResidueSet, PoleResidueSet) {
        let p = PoroelasticParams::reference_sandstone();
        (
            PoleResidueSet {
                axis: Axis::X,
                poles: vec![-4.0e3, -9.0e4],
                residues: vec![8.0e3, 5.0e4],
                alpha_inf: p.alpha_inf_1,
                a: p.drag_a(Axis::X),
            },
            PoleResidueSet {
                axis: Axis::Z,
                poles: vec![-6.0e3],
                residues: vec![2.0e4],
                alpha_inf: p.alpha_inf_3,
                a: p.drag_a(Axis::Z),
            },
        )
    }

    fn setup(nx: usize, nz: usize, boundary: Boundary) -> super::super::operators::SystemOperators {
        let p = PoroelasticParams::reference_sandstone();
        let mf = MaterialField::homogeneous(nx, nz, p).unwrap();
        let grid = Grid2D::new(nx, nz, 2.0, 2.0, 0.0, 0.0);
        let (p1, p3) = test_sets();
        let dt = cfl_dt(max_speed(&mf), &grid, 0.8);
        assemble_system(&mf, &p1, &p3, &grid, boundary, dt).unwrap()
    }

    fn random_state(ops: &super::super::operators::SystemOperators, seed: u64) -> Wavefield {
        let mut w = Wavefield::zeros(ops.grid.nx, ops.grid.nz, ops.n1(), ops.n3());
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        for c in 0..w.n_components() {
            for v in w.component_mut(c) {
                *v = rng.gen_range(-1.0..1.0);
            }
        }
        w
    }

    #[test]
    fn zero_state_stays_zero() {
        let ops = setup(8, 8, Boundary::Periodic);
        let mut w = Wavefield::zeros(8, 8, ops.n1(), ops.n3());
        let mut ws = Workspace::new(&ops);
        for _ in 0..5 {
            step_forward(&ops, &mut w, &[], &mut ws);
        }
        assert_eq!(w.max_abs(), 0.0);
    }

    #[test]
    fn uniform_stress_is_steady_under_periodic_transport() {
        let ops = setup(8, 8, Boundary::Periodic);
        let mut w = Wavefield::zeros(8, 8, ops.n1(), ops.n3());
        w.t11.fill(3.0e5);
        w.t33.fill(-1.0e5);
        w.np.fill(4.0e4);
        let mut ws = Workspace::new(&ops);
        for _ in 0..10 {
            step_forward(&ops, &mut w, &[], &mut ws);
        }
        assert!(w.v1.iter().all(|&v| v.abs() < 1e-12));
        assert!(w.t11.iter().all(|&v| (v - 3.0e5).abs() < 1e-7));
    }

    #[test]
    fn b1_is_skew_adjoint() {
        for boundary in [
            Boundary::Periodic,
            Boundary::Sponge {
                width: 2,
                strength: 50.0,
            },
        ] {
            let ops = setup(9, 11, boundary);
            let u = random_state(&ops, 3);
            let v = random_state(&ops, 4);
            let mut bu = Wavefield::zeros(9, 11, ops.n1(), ops.n3());
            let mut bv = Wavefield::zeros(9, 11, ops.n1(), ops.n3());
            apply_b1(&ops, &mut bu, &u, 1.0);
            apply_b1(&ops, &mut bv, &v, 1.0);
            let lhs = bu.dot(&v);
            let rhs = -u.dot(&bv);
            assert!(
                (lhs - rhs).abs() <= 1e-12 * lhs.abs().max(1.0),
                "{lhs} vs {rhs}"
            );
        }
    }

    #[test]
    fn n1inv_is_self_adjoint() {
        let ops = setup(9, 9, Boundary::Periodic);
        let u = random_state(&ops, 7);
        let v = random_state(&ops, 8);
        let mut nu = u.clone();
        let mut nv = v.clone();
        apply_n1inv(&ops, &mut nu);
        apply_n1inv(&ops, &mut nv);
        let lhs = nu.dot(&v);
        let rhs = u.dot(&nv);
        assert!((lhs - rhs).abs() <= 1e-12 * lhs.abs().max(1.0));
    }

    #[test]
    fn full_step_transpose_is_exact() {
        for boundary in [
            Boundary::Periodic,
            Boundary::Sponge {
                width: 2,
                strength: 200.0,
            },
        ] {
            let ops = setup(10, 12, boundary);
            let mut ws = Workspace::new(&ops);
            let u0 = random_state(&ops, 21);
            let v0 = random_state(&ops, 22);
            let mut su = u0.clone();
            step_forward(&ops, &mut su, &[], &mut ws);
            let mut stv = v0.clone();
            step_transpose(&ops, &mut stv, &mut ws);
            let lhs = su.dot(&v0);
            let rhs = u0.dot(&stv);
            let scale = su.norm() * v0.norm();
            assert!(
                (lhs - rhs).abs() <= 1e-13 * scale,
                "boundary {boundary:?}: {lhs} vs {rhs} (scale {scale})"
            );
        }
    }

    #[test]
    fn source_injection_excites_field() {
        let ops = setup(16, 16, Boundary::Periodic);
        let mut ws = Workspace::new(&ops);
        let src = SourceSpec {
            x: 16.0,
            z: 16.0,
            wavelet: Ricker {
                f0: 50.0,
                t0: 0.01,
                amplitude: 1e3,
            },
            channel: SourceChannel::ForceZ,
        };
        let prepared =
            PreparedSource::prepare(src, &ops.grid, &ops.boundary).unwrap();
        let mut w = Wavefield::zeros(16, 16, ops.n1(), ops.n3());
        for _ in 0..20 {
            step_forward(&ops, &mut w, &[prepared.clone()], &mut ws);
        }
        assert!(w.max_abs() > 0.0);
        assert!(w.find_non_finite().is_none());
    }
}
