//! Misfit evaluation, the exact discrete misfit gradient, its
//! finite-difference verification, and the projected-descent loop.
//!
//! The gradient is the exact derivative of the discrete misfit through
//! the discrete time stepper: a backward replay of the RK4 stage graph
//! pairs the adjoint state with every appearance of the material
//! matrices, and per-cell parameter derivatives of those matrices come
//! from central differences of the assembly map (step 1e-6 relative).

use crate::adjoint::{residual_sources, run_adjoint, trapezoid_weight};
use crate::error::SolverError;
use crate::forward::{
    apply_b1, apply_n1inv, local_half, run_with_ops, zero_ring, Grid2D, PerturbedView, PreparedReceiver, PreparedSource, ReceiverSpec, SeismogramSet, SimConfig,
    SnapshotStore, SourceSpec, SystemOperators, Wavefield,
};
use crate::kernel_fit::PoleResidueSet;
use crate::material::{derive_coefficients, Axis, MaterialField, PoroelasticParams};

/// Invertible material parameters.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ParamName {
    Kappa1,
    Kappa3,
    Phi,
    C11,
    C13,
    C33,
    C55,
    KS,
    KF,
    RhoS,
    Eta,
    AlphaInf1,
    AlphaInf3,
}

impl ParamName {
    pub const ALL: [ParamName; 13] = [
        ParamName::Kappa1,
        ParamName::Kappa3,
        ParamName::Phi,
        ParamName::C11,
        ParamName::C13,
        ParamName::C33,
        ParamName::C55,
        ParamName::KS,
        ParamName::KF,
        ParamName::RhoS,
        ParamName::Eta,
        ParamName::AlphaInf1,
        ParamName::AlphaInf3,
    ];

    pub fn key(&self) -> &'static str {
        match self {
            ParamName::Kappa1 => "kappa_1",
            ParamName::Kappa3 => "kappa_3",
            ParamName::Phi => "phi",
            ParamName::C11 => "c11",
            ParamName::C13 => "c13",
            ParamName::C33 => "c33",
            ParamName::C55 => "c55",
            ParamName::KS => "k_s",
            ParamName::KF => "k_f",
            ParamName::RhoS => "rho_s",
            ParamName::Eta => "eta",
            ParamName::AlphaInf1 => "alpha_inf_1",
            ParamName::AlphaInf3 => "alpha_inf_3",
        }
    }

    pub fn parse(s: &str) -> Option<ParamName> {
        ParamName::ALL.iter().copied().find(|p| p.key() == s)
    }

    pub fn get(&self, p: &PoroelasticParams) -> f64 {
        match self {
            ParamName::Kappa1 => p.kappa_1,
            ParamName::Kappa3 => p.kappa_3,
            ParamName::Phi => p.phi,
            ParamName::C11 => p.stiffness.c11,
            ParamName::C13 => p.stiffness.c13,
            ParamName::C33 => p.stiffness.c33,
            ParamName::C55 => p.stiffness.c55,
            ParamName::KS => p.k_s,
            ParamName::KF => p.k_f,
            ParamName::RhoS => p.rho_s,
            ParamName::Eta => p.eta,
            ParamName::AlphaInf1 => p.alpha_inf_1,
            ParamName::AlphaInf3 => p.alpha_inf_3,
        }
    }

    pub fn set(&self, p: &mut PoroelasticParams, v: f64) {
        match self {
            ParamName::Kappa1 => p.kappa_1 = v,
            ParamName::Kappa3 => p.kappa_3 = v,
            ParamName::Phi => p.phi = v,
            ParamName::C11 => p.stiffness.c11 = v,
            ParamName::C13 => p.stiffness.c13 = v,
            ParamName::C33 => p.stiffness.c33 = v,
            ParamName::C55 => p.stiffness.c55 = v,
            ParamName::KS => p.k_s = v,
            ParamName::KF => p.k_f = v,
            ParamName::RhoS => p.rho_s = v,
            ParamName::Eta => p.eta = v,
            ParamName::AlphaInf1 => p.alpha_inf_1 = v,
            ParamName::AlphaInf3 => p.alpha_inf_3 = v,
        }
    }
}

/// Which parameters are inverted, with box bounds and scalings.
#[derive(Debug, Clone)]
pub struct ParameterSelection {
    pub params: Vec<ParamName>,
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
    pub scale: Vec<f64>,
    /// Per-cell inversion mask; `None` means every cell.
    pub region: Option<Vec<bool>>,
}

impl ParameterSelection {
    /// Bounds [v/bound_factor, v*bound_factor] around the background value
    /// and scale = |background value|.
    pub fn around_background(
        params: Vec<ParamName>,
        background: &PoroelasticParams,
        bound_factor: f64,
    ) -> Self {
        assert!(bound_factor > 1.0);
        let mut lower = Vec::new();
        let mut upper = Vec::new();
        let mut scale = Vec::new();
        for p in &params {
            let v = p.get(background);
            lower.push(v / bound_factor);
            upper.push(v * bound_factor);
            scale.push(v.abs());
        }
        ParameterSelection {
            params,
            lower,
            upper,
            scale,
            region: None,
        }
    }

    pub fn validate(&self) -> Result<(), SolverError> {
        for (k, p) in self.params.iter().enumerate() {
            if !(self.lower[k].is_finite()
                && self.upper[k].is_finite()
                && self.lower[k] < self.upper[k])
            {
                return Err(SolverError::NonPhysical {
                    ix: 0,
                    iz: 0,
                    msg: format!("bad bounds for {}", p.key()),
                });
            }
            if !(self.scale[k] > 0.0) {
                return Err(SolverError::NonPhysical {
                    ix: 0,
                    iz: 0,
                    msg: format!("non-positive scale for {}", p.key()),
                });
            }
        }
        Ok(())
    }

    pub fn in_region(&self, cell: usize) -> bool {
        self.region.as_ref().map_or(true, |m| m[cell])
    }
}

/// Per-cell, per-parameter misfit gradient.
#[derive(Debug, Clone)]
pub struct GradientField {
    pub nx: usize,
    pub nz: usize,
    pub params: Vec<ParamName>,
    /// data[p][ix + nx*iz] = d chi / d m_p(cell).
    pub data: Vec<Vec<f64>>,
}

impl GradientField {
    pub fn zeros(nx: usize, nz: usize, params: Vec<ParamName>) -> Self {
        let data = params.iter().map(|_| vec![0.0; nx * nz]).collect();
        GradientField {
            nx,
            nz,
            params,
            data,
        }
    }

    pub fn axpy(&mut self, k: f64, other: &GradientField) {
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            for (x, y) in a.iter_mut().zip(b) {
                *x += k * y;
            }
        }
    }

    pub fn max_abs(&self) -> f64 {
        self.data
            .iter()
            .flat_map(|v| v.iter())
            .fold(0.0f64, |m, v| m.max(v.abs()))
    }
}

/// Least-squares misfit chi = sum_r sum_i 1/2 w_i dt |sim - obs|^2 with
/// trapezoidal time weights.
pub fn misfit(sim: &SeismogramSet, obs: &SeismogramSet) -> Result<f64, SolverError> {
    if !sim.geometry_matches(obs) {
        return Err(SolverError::GeometryMismatch(
            "misfit operands differ in geometry".into(),
        ));
    }
    let n = sim.n_samples;
    let mut chi = 0.0;
    for (srow, orow) in sim.data.iter().zip(&obs.data) {
        for c in 0..sim.n_components {
            for i in 0..n {
                let d = srow[c * n + i] - orow[c * n + i];
                chi += 0.5 * trapezoid_weight(i, n) * sim.dt * d * d;
            }
        }
    }
    Ok(chi)
}

/// Reverse-mode contraction accumulators, one small matrix per position.
struct GradAccum {
    minv_x: Vec<[f64; 4]>,
    minv_z: Vec<[f64; 4]>,
    e3: Vec<[f64; 9]>,
    c55: Vec<f64>,
    eh_x: Vec<f64>,
    eh_z: Vec<f64>,
    dim_x: usize,
    dim_z: usize,
}

impl GradAccum {
    fn new(ops: &SystemOperators) -> Self {
        let n = ops.grid.n_cells();
        let dim_x = ops.dim_x();
        let dim_z = ops.dim_z();
        GradAccum {
            minv_x: vec![[0.0; 4]; n],
            minv_z: vec![[0.0; 4]; n],
            e3: vec![[0.0; 9]; n],
            c55: vec![0.0; n],
            eh_x: vec![0.0; n * dim_x * dim_x],
            eh_z: vec![0.0; n * dim_z * dim_z],
            dim_x,
            dim_z,
        }
    }

    /// Accumulate coef * p (x) f against every N1inv block.
    fn add_n1inv(&mut self, coef: f64, p: &Wavefield, f: &Wavefield) {
        let n = self.minv_x.len();
        for i in 0..n {
            let a = &mut self.minv_x[i];
            a[0] += coef * p.v1[i] * f.v1[i];
            a[1] += coef * p.v1[i] * f.q1[i];
            a[2] += coef * p.q1[i] * f.v1[i];
            a[3] += coef * p.q1[i] * f.q1[i];
            let a = &mut self.minv_z[i];
            a[0] += coef * p.v3[i] * f.v3[i];
            a[1] += coef * p.v3[i] * f.q3[i];
            a[2] += coef * p.q3[i] * f.v3[i];
            a[3] += coef * p.q3[i] * f.q3[i];
            let a = &mut self.e3[i];
            let pr = [p.t11[i], p.t33[i], p.np[i]];
            let fc = [f.t11[i], f.t33[i], f.np[i]];
            for r in 0..3 {
                for c in 0..3 {
                    a[3 * r + c] += coef * pr[r] * fc[c];
                }
            }
            self.c55[i] += coef * p.t13[i] * f.t13[i];
        }
    }

    /// Accumulate sponge * p (x) u against both local exponentials.
    fn add_eh(&mut self, ops: &SystemOperators, p: &Wavefield, u: &Wavefield) {
        let n = self.minv_x.len();
        let dx = self.dim_x;
        for i in 0..n {
            let sp = ops.sponge_xface[i];
            let block = &mut self.eh_x[i * dx * dx..(i + 1) * dx * dx];
            for r in 0..dx {
                let pr = sp * match r {
                    0 => p.v1[i],
                    1 => p.q1[i],
                    _ => p.th1[r - 2][i],
                };
                if pr == 0.0 {
                    continue;
                }
                for c in 0..dx {
                    let uc = match c {
                        0 => u.v1[i],
                        1 => u.q1[i],
                        _ => u.th1[c - 2][i],
                    };
                    block[r * dx + c] += pr * uc;
                }
            }
        }
        let dz = self.dim_z;
        for i in 0..n {
            let sp = ops.sponge_zface[i];
            let block = &mut self.eh_z[i * dz * dz..(i + 1) * dz * dz];
            for r in 0..dz {
                let pr = sp * match r {
                    0 => p.v3[i],
                    1 => p.q3[i],
                    _ => p.th3[r - 2][i],
                };
                if pr == 0.0 {
                    continue;
                }
                for c in 0..dz {
                    let uc = match c {
                        0 => u.v3[i],
                        1 => u.q3[i],
                        _ => u.th3[c - 2][i],
                    };
                    block[r * dz + c] += pr * uc;
                }
            }
        }
    }
}

struct GradWorkspace {
    w0: Wavefield,
    x0: Wavefield,
    y: Wavefield,
    k: Wavefield,
    f: [Wavefield; 4],
    a: [Wavefield; 3],
    lamz: Wavefield,
    lamy: Wavefield,
    lamx0: Wavefield,
    lamk: Wavefield,
    lama: Wavefield,
    nbuf: Wavefield,
}

impl GradWorkspace {
    fn new(ops: &SystemOperators) -> Self {
        let g = &ops.grid;
        let z = || Wavefield::zeros(g.nx, g.nz, ops.n1(), ops.n3());
        GradWorkspace {
            w0: z(),
            x0: z(),
            y: z(),
            k: z(),
            f: [z(), z(), z(), z()],
            a: [z(), z(), z()],
            lamz: z(),
            lamy: z(),
            lamx0: z(),
            lamk: z(),
            lama: z(),
            nbuf: z(),
        }
    }
}

/// dst = -coef * B1(N1inv(src)).
fn bt_n(
    ops: &SystemOperators,
    dst: &mut Wavefield,
    src: &Wavefield,
    coef: f64,
    nbuf: &mut Wavefield,
) {
    nbuf.clone_from(src);
    apply_n1inv(ops, nbuf);
    apply_b1(ops, dst, nbuf, -coef);
}

/// Exact discrete misfit gradient from aligned forward and adjoint
/// snapshot stores (both at cadence 1).
pub fn compute_gradient(
    ops: &SystemOperators,
    mf: &MaterialField,
    selection: &ParameterSelection,
    fwd: &SnapshotStore,
    adj: &SnapshotStore,
    sources: &[PreparedSource],
) -> Result<GradientField, SolverError> {
    selection.validate()?;
    if fwd.cadence != 1 || adj.cadence != 1 {
        return Err(SolverError::CadenceMismatch(format!(
            "gradient needs cadence-1 snapshots (got forward {} / adjoint {})",
            fwd.cadence, adj.cadence
        )));
    }
    if fwd.states.len() != adj.states.len() {
        return Err(SolverError::CadenceMismatch(format!(
            "forward has {} snapshots, adjoint {}",
            fwd.states.len(),
            adj.states.len()
        )));
    }
    let n_steps = fwd.states.len() - 1;
    let dt = ops.dt;
    let mut acc = GradAccum::new(ops);
    let mut ws = GradWorkspace::new(ops);

    for n in 0..n_steps {
        let t_n = n as f64 * dt;
        let stage_times = [t_n, t_n + 0.5 * dt, t_n + 0.5 * dt, t_n + dt];

        // forward stage replay from W^n
        ws.w0.clone_from(&fwd.states[n]);
        zero_ring(ops, &mut ws.w0);
        ws.x0.clone_from(&ws.w0);
        local_half(ops, &mut ws.x0, false);
        for s in 0..4 {
            {
                let input = match s {
                    0 => &ws.x0,
                    _ => &ws.a[s - 1],
                };
                apply_b1(ops, &mut ws.f[s], input, 1.0);
            }
            for src in sources {
                src.inject_flux(&mut ws.f[s], stage_times[s]);
            }
            if s < 3 {
                ws.k.clone_from(&ws.f[s]);
                apply_n1inv(ops, &mut ws.k);
                let coef = [0.5 * dt, 0.5 * dt, dt][s];
                ws.a[s].clone_from(&ws.x0);
                ws.a[s].axpy(coef, &ws.k);
            }
        }
        // y = x0 + dt/6 k1 + dt/3 k2 + dt/3 k3 + dt/6 k4
        ws.y.clone_from(&ws.x0);
        for (s, c) in [(0usize, dt / 6.0), (1, dt / 3.0), (2, dt / 3.0), (3, dt / 6.0)] {
            ws.k.clone_from(&ws.f[s]);
            apply_n1inv(ops, &mut ws.k);
            ws.y.axpy(c, &ws.k);
        }

        // reverse pass from lambda^{n+1}
        ws.lamz.clone_from(&adj.states[n + 1]);
        zero_ring(ops, &mut ws.lamz);
        acc.add_eh(ops, &ws.lamz, &ws.y); // outer Eh
        ws.lamy.clone_from(&ws.lamz);
        local_half(ops, &mut ws.lamy, true);
        ws.lamx0.clone_from(&ws.lamy);

        // stage 4
        acc.add_n1inv(dt / 6.0, &ws.lamy, &ws.f[3]);
        bt_n(ops, &mut ws.lama, &ws.lamy, dt / 6.0, &mut ws.nbuf); // lambda-bar a3
        ws.lamx0.axpy(1.0, &ws.lama);
        // stage 3
        ws.lamk.clone_from(&ws.lamy);
        ws.lamk.scale(dt / 3.0);
        ws.lamk.axpy(dt, &ws.lama);
        acc.add_n1inv(1.0, &ws.lamk, &ws.f[2]);
        bt_n(ops, &mut ws.lama, &ws.lamk, 1.0, &mut ws.nbuf); // lambda-bar a2
        ws.lamx0.axpy(1.0, &ws.lama);
        // stage 2
        ws.lamk.clone_from(&ws.lamy);
        ws.lamk.scale(dt / 3.0);
        ws.lamk.axpy(0.5 * dt, &ws.lama);
        acc.add_n1inv(1.0, &ws.lamk, &ws.f[1]);
        bt_n(ops, &mut ws.lama, &ws.lamk, 1.0, &mut ws.nbuf); // lambda-bar a1
        ws.lamx0.axpy(1.0, &ws.lama);
        // stage 1
        ws.lamk.clone_from(&ws.lamy);
        ws.lamk.scale(dt / 6.0);
        ws.lamk.axpy(0.5 * dt, &ws.lama);
        acc.add_n1inv(1.0, &ws.lamk, &ws.f[0]);
        bt_n(ops, &mut ws.lama, &ws.lamk, 1.0, &mut ws.nbuf);
        ws.lamx0.axpy(1.0, &ws.lama);

        acc.add_eh(ops, &ws.lamx0, &ws.w0); // inner Eh
    }

    chain_to_cells(ops, mf, selection, &acc)
}

/// Faces along one axis whose averaging references cell index `i`.
fn faces_for_cell(i: usize, n: usize, periodic: bool) -> Vec<usize> {
    let mut out = vec![i];
    if i > 0 {
        out.push(i - 1);
    } else if periodic {
        out.push(n - 1);
    }
    out
}

/// Contract accumulators against central differences of the assembly map.
fn chain_to_cells(
    ops: &SystemOperators,
    mf: &MaterialField,
    selection: &ParameterSelection,
    acc: &GradAccum,
) -> Result<GradientField, SolverError> {
    let g = &ops.grid;
    let periodic = ops.periodic();
    let half_dt = 0.5 * ops.dt;
    let mut grad = GradientField::zeros(g.nx, g.nz, selection.params.clone());
    let dx = acc.dim_x;
    let dz = acc.dim_z;

    for iz in 0..g.nz {
        for ix in 0..g.nx {
            let cell = ix + g.nx * iz;
            if !selection.in_region(cell) {
                continue;
            }
            for (pi, param) in selection.params.iter().enumerate() {
                let v0 = param.get(mf.params(ix, iz));
                let h = 1e-6 * v0.abs().max(1e-12 * selection.scale[pi]);
                let mut views = Vec::with_capacity(2);
                for sgn in [1.0, -1.0] {
                    let mut p = *mf.params(ix, iz);
                    param.set(&mut p, v0 + sgn * h);
                    let derived = derive_coefficients(&p).map_err(|e| {
                        SolverError::NonPhysical {
                            ix,
                            iz,
                            msg: format!("perturbed assembly failed: {e}"),
                        }
                    })?;
                    views.push(PerturbedView {
                        base: mf,
                        ix,
                        iz,
                        params: p,
                        derived,
                    });
                }
                let inv2h = 1.0 / (2.0 * h);
                let mut total = 0.0;

                // x faces touching this cell
                for fx in faces_for_cell(ix, g.nx, periodic) {
                    let pos = fx + g.nx * iz;
                    let bp = crate::forward::operators::face_block(
                        &views[0], Axis::X, fx, iz, periodic, &ops.prs1, half_dt,
                    )?;
                    let bm = crate::forward::operators::face_block(
                        &views[1], Axis::X, fx, iz, periodic, &ops.prs1, half_dt,
                    )?;
                    let am = &acc.minv_x[pos];
                    let dm = [
                        (bp.minv[0] - bm.minv[0]) * inv2h,
                        (bp.minv[1] - bm.minv[1]) * inv2h,
                        (bp.minv[2] - bm.minv[2]) * inv2h,
                    ];
                    total += am[0] * dm[0] + (am[1] + am[2]) * dm[1] + am[3] * dm[2];
                    let ae = &acc.eh_x[pos * dx * dx..(pos + 1) * dx * dx];
                    for (aev, (p, m)) in ae.iter().zip(bp.eh.iter().zip(&bm.eh)) {
                        total += aev * (p - m) * inv2h;
                    }
                }
                // z faces
                for fz in faces_for_cell(iz, g.nz, periodic) {
                    let pos = ix + g.nx * fz;
                    let bp = crate::forward::operators::face_block(
                        &views[0], Axis::Z, ix, fz, periodic, &ops.prs3, half_dt,
                    )?;
                    let bm = crate::forward::operators::face_block(
                        &views[1], Axis::Z, ix, fz, periodic, &ops.prs3, half_dt,
                    )?;
                    let am = &acc.minv_z[pos];
                    let dm = [
                        (bp.minv[0] - bm.minv[0]) * inv2h,
                        (bp.minv[1] - bm.minv[1]) * inv2h,
                        (bp.minv[2] - bm.minv[2]) * inv2h,
                    ];
                    total += am[0] * dm[0] + (am[1] + am[2]) * dm[1] + am[3] * dm[2];
                    let ae = &acc.eh_z[pos * dz * dz..(pos + 1) * dz * dz];
                    for (aev, (p, m)) in ae.iter().zip(bp.eh.iter().zip(&bm.eh)) {
                        total += aev * (p - m) * inv2h;
                    }
                }
                // center
                {
                    let (e3p, _) = crate::forward::operators::center_block(&views[0], ix, iz)?;
                    let (e3m, _) = crate::forward::operators::center_block(&views[1], ix, iz)?;
                    let ae = &acc.e3[cell];
                    let idx = [(0, 0), (0, 1), (0, 2), (1, 1), (1, 2), (2, 2)];
                    for (k, (r, c)) in idx.iter().enumerate() {
                        let d = (e3p[k] - e3m[k]) * inv2h;
                        total += ae[3 * r + c] * d;
                        if r != c {
                            total += ae[3 * c + r] * d;
                        }
                    }
                }
                // corners
                for fx in faces_for_cell(ix, g.nx, periodic) {
                    for fz in faces_for_cell(iz, g.nz, periodic) {
                        let pos = fx + g.nx * fz;
                        let cp =
                            crate::forward::operators::corner_c55(&views[0], fx, fz, periodic);
                        let cm =
                            crate::forward::operators::corner_c55(&views[1], fx, fz, periodic);
                        total += acc.c55[pos] * (cp - cm) * inv2h;
                    }
                }

                grad.data[pi][cell] = total;
            }
        }
    }
    Ok(grad)
}

/// One shot: a source firing into the shared receiver set.
#[derive(Debug, Clone)]
pub struct Shot {
    pub source: SourceSpec,
}

/// Everything fixed during an inversion. The time step is resolved once
/// from a reference model and then frozen, so misfits of perturbed models
/// stay comparable sample by sample.
pub struct InversionSetup<'a> {
    pub grid: &'a Grid2D,
    pub prs1: &'a PoleResidueSet,
    pub prs3: &'a PoleResidueSet,
    pub shots: &'a [Shot],
    pub receivers: &'a [ReceiverSpec],
    pub sim: &'a SimConfig,
    pub dt: f64,
    pub n_steps: usize,
}

impl<'a> InversionSetup<'a> {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        grid: &'a Grid2D,
        prs1: &'a PoleResidueSet,
        prs3: &'a PoleResidueSet,
        shots: &'a [Shot],
        receivers: &'a [ReceiverSpec],
        sim: &'a SimConfig,
        reference: &MaterialField,
    ) -> Self {
        let (dt, n_steps) = sim.resolve_dt(crate::forward::max_speed(reference), grid);
        InversionSetup {
            grid,
            prs1,
            prs3,
            shots,
            receivers,
            sim,
            dt,
            n_steps,
        }
    }
}

fn forward_traces(
    setup: &InversionSetup,
    mf: &MaterialField,
    shot: &Shot,
    snapshots: bool,
) -> Result<(SeismogramSet, SnapshotStore, SystemOperators), SolverError> {
    let (dt, n_steps) = (setup.dt, setup.n_steps);
    let ops = crate::forward::assemble_system(
        mf,
        setup.prs1,
        setup.prs3,
        setup.grid,
        setup.sim.boundary,
        dt,
    )?;
    let sources = vec![PreparedSource::prepare(
        shot.source,
        setup.grid,
        &setup.sim.boundary,
    )?];
    let receivers = setup
        .receivers
        .iter()
        .map(|r| PreparedReceiver::prepare(r.clone(), setup.grid, &setup.sim.boundary))
        .collect::<Result<Vec<_>, _>>()?;
    let mut w = Wavefield::zeros(setup.grid.nx, setup.grid.nz, ops.n1(), ops.n3());
    let out = run_with_ops(
        &ops,
        &mut w,
        &sources,
        &receivers,
        n_steps,
        if snapshots { 1 } else { 0 },
        0,
    )?;
    Ok((out.seis, out.snapshots, ops))
}

/// Misfit summed over shots (forward solves only).
pub fn total_misfit(
    setup: &InversionSetup,
    mf: &MaterialField,
    obs: &[SeismogramSet],
) -> Result<f64, SolverError> {
    let mut chi = 0.0;
    for (shot, d) in setup.shots.iter().zip(obs) {
        let (sim, _, _) = forward_traces(setup, mf, shot, false)?;
        chi += misfit(&sim, d)?;
    }
    Ok(chi)
}

/// Misfit and accumulated gradient over all shots (one forward + one
/// adjoint solve per shot).
pub fn misfit_and_gradient(
    setup: &InversionSetup,
    mf: &MaterialField,
    selection: &ParameterSelection,
    obs: &[SeismogramSet],
) -> Result<(f64, GradientField), SolverError> {
    let mut chi = 0.0;
    let mut grad = GradientField::zeros(setup.grid.nx, setup.grid.nz, selection.params.clone());
    for (shot, d) in setup.shots.iter().zip(obs) {
        let (sim, fwd_snaps, ops) = forward_traces(setup, mf, shot, true)?;
        chi += misfit(&sim, d)?;
        let residuals = residual_sources(&sim, d)?;
        let receivers = setup
            .receivers
            .iter()
            .map(|r| PreparedReceiver::prepare(r.clone(), setup.grid, &setup.sim.boundary))
            .collect::<Result<Vec<_>, _>>()?;
        let adj_snaps = run_adjoint(&ops, &residuals, &receivers, 1)?;
        let sources = vec![PreparedSource::prepare(
            shot.source,
            setup.grid,
            &setup.sim.boundary,
        )?];
        let g = compute_gradient(&ops, mf, selection, &fwd_snaps, &adj_snaps, &sources)?;
        grad.axpy(1.0, &g);
    }
    Ok((chi, grad))
}

/// Central-difference verification of the adjoint gradient at `n_probes`
/// random (cell, parameter) pairs drawn inside `probe box` cells from the
/// region; returns the max relative error.
#[allow(clippy::too_many_arguments)]
pub fn fd_gradient_check(
    setup: &InversionSetup,
    mf: &MaterialField,
    selection: &ParameterSelection,
    obs: &[SeismogramSet],
    n_probes: usize,
    seed: u64,
    probe_box: (std::ops::Range<usize>, std::ops::Range<usize>),
) -> Result<f64, SolverError> {
    use rand::{Rng, SeedableRng};
    let (_, grad) = misfit_and_gradient(setup, mf, selection, obs)?;
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    let mut worst = 0.0f64;
    for _ in 0..n_probes {
        let ix = rng.gen_range(probe_box.0.clone());
        let iz = rng.gen_range(probe_box.1.clone());
        let pi = rng.gen_range(0..selection.params.len());
        let param = selection.params[pi];
        let v0 = param.get(mf.params(ix, iz));
        let h = 1e-4 * selection.scale[pi];

        let mut chi = [0.0; 2];
        for (k, sgn) in [1.0, -1.0].into_iter().enumerate() {
            let mut pert = mf.clone();
            let mut p = *pert.params(ix, iz);
            param.set(&mut p, v0 + sgn * h);
            pert.update_cell(ix, iz, p)
                .map_err(|e| SolverError::NonPhysical {
                    ix,
                    iz,
                    msg: e.to_string(),
                })?;
            chi[k] = total_misfit(setup, &pert, obs)?;
        }
        let fd = (chi[0] - chi[1]) / (2.0 * h);
        let g = grad.data[pi][ix + grad.nx * iz];
        let rel = (fd - g).abs() / fd.abs().max(g.abs()).max(1e-300);
        worst = worst.max(rel);
    }
    Ok(worst)
}

/// One line of the iteration history.
#[derive(Debug, Clone)]
pub struct MisfitReport {
    pub iteration: usize,
    pub chi: f64,
    pub grad_norm: f64,
    pub step: f64,
    pub line_search_evals: usize,
}

#[derive(Debug, Clone, Copy)]
pub struct InvertOptions {
    pub max_iters: usize,
    /// Stop when chi falls below this fraction of the initial misfit.
    pub chi_rel_tol: f64,
    /// Stop when the scaled gradient norm falls below this.
    pub grad_tol: f64,
    pub armijo_c1: f64,
    pub backtrack: f64,
    pub max_line_search: usize,
}

impl Default for InvertOptions {
    fn default() -> Self {
        InvertOptions {
            max_iters: 20,
            chi_rel_tol: 1e-8,
            grad_tol: 0.0,
            armijo_c1: 1e-4,
            backtrack: 0.5,
            max_line_search: 25,
        }
    }
}

fn apply_update(
    mf: &MaterialField,
    selection: &ParameterSelection,
    grad: &GradientField,
    alpha: f64,
) -> Result<(MaterialField, f64), SolverError> {
    let mut out = mf.clone();
    let mut predicted_decrease = 0.0;
    for iz in 0..grad.nz {
        for ix in 0..grad.nx {
            let cell = ix + grad.nx * iz;
            if !selection.in_region(cell) {
                continue;
            }
            let mut p = *out.params(ix, iz);
            let mut changed = false;
            for (pi, param) in selection.params.iter().enumerate() {
                let g = grad.data[pi][cell];
                if g == 0.0 {
                    continue;
                }
                let s = selection.scale[pi];
                let v0 = param.get(&p);
                let v = (v0 - alpha * s * s * g).clamp(selection.lower[pi], selection.upper[pi]);
                if v != v0 {
                    param.set(&mut p, v);
                    predicted_decrease += g * (v0 - v);
                    changed = true;
                }
            }
            if changed {
                out.update_cell(ix, iz, p).map_err(|e| {
                    SolverError::NonPhysical {
                        ix,
                        iz,
                        msg: e.to_string(),
                    }
                })?;
            }
        }
    }
    Ok((out, predicted_decrease))
}

/// Projected gradient descent with Armijo backtracking. The misfit is
/// strictly decreasing over accepted iterations; returns the final model
/// and the per-iteration history.
pub fn invert(
    setup: &InversionSetup,
    mf0: &MaterialField,
    selection: &ParameterSelection,
    obs: &[SeismogramSet],
    opts: &InvertOptions,
) -> Result<(MaterialField, Vec<MisfitReport>), SolverError> {
    selection.validate()?;
    assert_eq!(setup.shots.len(), obs.len(), "one trace set per shot");
    let mut mf = mf0.clone();
    let mut history = Vec::new();
    let (mut chi, mut grad) = misfit_and_gradient(setup, &mf, selection, obs)?;
    let chi0 = chi;
    let mut alpha = f64::NAN; // set from the first gradient below

    for iteration in 0..opts.max_iters {
        let grad_norm = {
            let mut acc = 0.0;
            for (pi, gs) in grad.data.iter().enumerate() {
                let s = selection.scale[pi];
                for g in gs {
                    acc += (s * g) * (s * g);
                }
            }
            acc.sqrt()
        };
        if chi <= opts.chi_rel_tol * chi0 || grad_norm <= opts.grad_tol || grad_norm == 0.0 {
            history.push(MisfitReport {
                iteration,
                chi,
                grad_norm,
                step: 0.0,
                line_search_evals: 0,
            });
            break;
        }
        if alpha.is_nan() {
            // first trial step: aim at O(chi) decrease for quadratic misfits
            alpha = chi / (grad_norm * grad_norm);
        }

        let mut accepted = false;
        let mut evals = 0;
        let mut used_alpha = alpha;
        for _ in 0..opts.max_line_search {
            evals += 1;
            let (trial, predicted) = apply_update(&mf, selection, &grad, used_alpha)?;
            if predicted <= 0.0 {
                break; // fully projected out; no descent possible
            }
            match total_misfit(setup, &trial, obs) {
                Ok(chi_trial) if chi_trial <= chi - opts.armijo_c1 * predicted => {
                    mf = trial;
                    chi = chi_trial;
                    accepted = true;
                    break;
                }
                Ok(_) | Err(SolverError::NonPhysical { .. }) => {
                    used_alpha *= opts.backtrack;
                }
                Err(e) => return Err(e),
            }
        }
        history.push(MisfitReport {
            iteration,
            chi,
            grad_norm,
            step: if accepted { used_alpha } else { 0.0 },
            line_search_evals: evals,
        });
        if !accepted {
            break; // line-search failure: return best iterate
        }
        // adaptive initial step for the next iteration
        alpha = if evals == 1 {
            used_alpha * 2.0
        } else {
            used_alpha
        };
        if chi <= opts.chi_rel_tol * chi0 {
            break;
        }
        let g = misfit_and_gradient(setup, &mf, selection, obs)?;
        chi = g.0;
        grad = g.1;
    }
    Ok((mf, history))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::forward::{Boundary, DtSpec, Ricker, SourceChannel};
    use approx::assert_relative_eq;

    fn receiver(x: f64, z: f64, n_comp: usize) -> ReceiverSpec {
        let mut mask = vec![false; n_comp];
        mask[0] = true;
        mask[1] = true;
        ReceiverSpec { x, z, mask }
    }

    fn small_setup() -> (
        Grid2D,
        PoleResidueSet,
        PoleResidueSet,
        Vec<Shot>,
        Vec<ReceiverSpec>,
        SimConfig,
        MaterialField,
    ) {
        let p = PoroelasticParams::reference_sandstone();
        let grid = Grid2D::new(20, 20, 2.0, 2.0, 0.0, 0.0);
        let mf = MaterialField::homogeneous(20, 20, p).unwrap();
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
        let shots = vec![Shot {
            source: SourceSpec {
                x: 12.0,
                z: 12.0,
                wavelet: Ricker::with_default_delay(200.0, 1.0e3),
                channel: SourceChannel::ForceZ,
            },
        }];
        let receivers = vec![receiver(24.0, 22.0, 10)];
        let sim = SimConfig {
            t_final: 1.5e-2,
            dt: DtSpec::Cfl(0.8),
            boundary: Boundary::Periodic,
            snapshot_cadence: 0,
            energy_cadence: 0,
        };
        (grid, prs1, prs3, shots, receivers, sim, mf)
    }

    #[test]
    fn misfit_quadrature_weights() {
        let rec = ReceiverSpec {
            x: 0.0,
            z: 0.0,
            mask: vec![true; 10],
        };
        let dt = 0.25;
        let mut sim = SeismogramSet::zeros(vec![rec.clone()], 10, 5, dt);
        let obs = SeismogramSet::zeros(vec![rec], 10, 5, dt);
        // interior sample difference delta
        sim.data[0][2] = 3.0;
        assert_relative_eq!(
            misfit(&sim, &obs).unwrap(),
            0.5 * 9.0 * dt,
            max_relative = 1e-15
        );
        // end sample gets half weight
        sim.data[0].fill(0.0);
        sim.data[0][0] = 3.0;
        assert_relative_eq!(
            misfit(&sim, &obs).unwrap(),
            0.25 * 9.0 * dt,
            max_relative = 1e-15
        );
        // quadratic homogeneity
        sim.data[0][0] = 6.0;
        assert_relative_eq!(
            misfit(&sim, &obs).unwrap(),
            9.0 * dt,
            max_relative = 1e-15
        );
    }

    #[test]
    fn zero_residual_gives_zero_gradient() {
        let (grid, prs1, prs3, shots, receivers, sim, mf) = small_setup();
        let setup =
            InversionSetup::new(&grid, &prs1, &prs3, &shots, &receivers, &sim, &mf);
        let (obs, _, _) = forward_traces(&setup, &mf, &shots[0], false).unwrap();
        let selection = ParameterSelection::around_background(
            vec![ParamName::Kappa1],
            mf.params(0, 0),
            10.0,
        );
        let (chi, grad) = misfit_and_gradient(&setup, &mf, &selection, &[obs]).unwrap();
        assert_eq!(chi, 0.0);
        assert_eq!(grad.max_abs(), 0.0);
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let (grid, prs1, prs3, shots, receivers, sim, mf) = small_setup();
        let setup =
            InversionSetup::new(&grid, &prs1, &prs3, &shots, &receivers, &sim, &mf);
        // observed data from a perturbed model so residuals are nonzero
        let mut true_mf = mf.clone();
        let mut p = *true_mf.params(7, 7);
        p.kappa_1 *= 1.6;
        true_mf.update_cell(7, 7, p).unwrap();
        let (obs, _, _) = forward_traces(&setup, &true_mf, &shots[0], false).unwrap();

        let selection = ParameterSelection::around_background(
            vec![ParamName::Kappa1, ParamName::C11],
            mf.params(0, 0),
            10.0,
        );
        let (chi, grad) = misfit_and_gradient(&setup, &mf, &selection, &[obs.clone()]).unwrap();
        assert!(chi > 1e-30 && grad.max_abs() > 1e-15, "test not exercising the solver (chi {chi:e})");
        let worst = fd_gradient_check(
            &setup,
            &mf,
            &selection,
            &[obs],
            4,
            42,
            (4..16, 4..16),
        )
        .unwrap();
        assert!(worst <= 1e-4, "max relative error {worst:e}");
    }
}
