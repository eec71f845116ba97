//! Per-position operator assembly for the augmented Biot system.
//!
//! Cell parameters are averaged arithmetically onto the staggered
//! positions. Each x-face carries the 2x2 inertia block of (v1, q1), the
//! drag coefficients, and the exponential of the local generator acting
//! on (v1, q1, Theta^1); z-faces carry the axis-3 analogues; centers
//! carry the symmetric 3x3 stress-rate matrix over (tau11, tau33, -p) and
//! corners the shear modulus. The same builder functions feed both the
//! solver assembly and the parameter-derivative chain of the gradient.

use nalgebra::{DMatrix, Matrix4};

use super::grid::{Boundary, Grid2D, Lattice};
use crate::error::SolverError;
use crate::kernel_fit::PoleResidueSet;
use crate::material::{Axis, DerivedCoefficients, MaterialField, PoroelasticParams};

/// Read-only view of per-cell material data; implemented by the real
/// field and by single-cell perturbations of it (used for parameter
/// derivatives).
pub trait MaterialView {
    fn nx(&self) -> usize;
    fn nz(&self) -> usize;
    fn params(&self, ix: usize, iz: usize) -> &PoroelasticParams;
    fn derived(&self, ix: usize, iz: usize) -> &DerivedCoefficients;
}

impl MaterialView for MaterialField {
    fn nx(&self) -> usize {
        self.nx()
    }
    fn nz(&self) -> usize {
        self.nz()
    }
    fn params(&self, ix: usize, iz: usize) -> &PoroelasticParams {
        MaterialField::params(self, ix, iz)
    }
    fn derived(&self, ix: usize, iz: usize) -> &DerivedCoefficients {
        MaterialField::derived(self, ix, iz)
    }
}

/// A material field with one cell's parameters replaced.
pub struct PerturbedView<'a> {
    pub base: &'a MaterialField,
    pub ix: usize,
    pub iz: usize,
    pub params: PoroelasticParams,
    pub derived: DerivedCoefficients,
}

impl MaterialView for PerturbedView<'_> {
    fn nx(&self) -> usize {
        self.base.nx()
    }
    fn nz(&self) -> usize {
        self.base.nz()
    }
    fn params(&self, ix: usize, iz: usize) -> &PoroelasticParams {
        if ix == self.ix && iz == self.iz {
            &self.params
        } else {
            self.base.params(ix, iz)
        }
    }
    fn derived(&self, ix: usize, iz: usize) -> &DerivedCoefficients {
        if ix == self.ix && iz == self.iz {
            &self.derived
        } else {
            self.base.derived(ix, iz)
        }
    }
}

#[inline]
pub fn neighbor(i: usize, n: usize, periodic: bool) -> usize {
    if i + 1 < n {
        i + 1
    } else if periodic {
        0
    } else {
        i
    }
}

/// Symmetric 2x2 stored as (a11, a12, a22).
pub type Sym2 = [f64; 3];
/// Symmetric 3x3 stored as (a11, a12, a13, a22, a23, a33).
pub type Sym3 = [f64; 6];

pub fn sym2_inv(m: &Sym2) -> Option<Sym2> {
    let det = m[0] * m[2] - m[1] * m[1];
    if det <= 0.0 || !det.is_finite() {
        return None;
    }
    Some([m[2] / det, -m[1] / det, m[0] / det])
}

pub fn sym3_inv(m: &Sym3) -> Option<Sym3> {
    let [a, b, c, d, e, f] = *m;
    // | a b c |
    // | b d e |
    // | c e f |
    let ca = d * f - e * e;
    let cb = -(b * f - c * e);
    let cc = b * e - c * d;
    let det = a * ca + b * cb + c * cc;
    if det <= 0.0 || !det.is_finite() {
        return None;
    }
    let cd = a * f - c * c;
    let ce = -(a * e - b * c);
    let cf = a * d - b * b;
    Some([ca / det, cb / det, cc / det, cd / det, ce / det, cf / det])
}

#[inline]
pub fn sym3_mul(m: &Sym3, x: [f64; 3]) -> [f64; 3] {
    [
        m[0] * x[0] + m[1] * x[1] + m[2] * x[2],
        m[1] * x[0] + m[3] * x[1] + m[4] * x[2],
        m[2] * x[0] + m[4] * x[1] + m[5] * x[2],
    ]
}

/// Assembled face block for one axis: inertia, drag, and the local
/// exponential over (v, q, Theta_1..Theta_N).
pub struct FaceBlock {
    /// [[rho, rho_f],[rho_f, m_j]] averaged onto the face.
    pub m2: Sym2,
    pub minv: Sym2,
    /// Total drag n_j at the face.
    pub n_drag: f64,
    /// Averaged rho_f/phi (scales residues in R and in the energies).
    pub rscale: f64,
    /// Averaged eta/kappa_j (viscous part of the dissipation).
    pub etakappa: f64,
    /// exp(L dt/2), row-major (2+N)x(2+N).
    pub eh: Vec<f64>,
}

fn average_face_inputs(
    view: &dyn MaterialView,
    axis: Axis,
    cells: [(usize, usize); 2],
) -> (f64, f64, f64, f64, f64) {
    let mut rho = 0.0;
    let mut rho_f = 0.0;
    let mut m_j = 0.0;
    let mut etakappa = 0.0;
    let mut rscale = 0.0;
    for &(ix, iz) in &cells {
        let p = view.params(ix, iz);
        let d = view.derived(ix, iz);
        rho += d.rho_bulk;
        rho_f += p.rho_f;
        m_j += d.m_inertia(axis);
        etakappa += p.eta / p.kappa(axis);
        rscale += p.rho_f / p.phi;
    }
    (
        rho / 2.0,
        rho_f / 2.0,
        m_j / 2.0,
        etakappa / 2.0,
        rscale / 2.0,
    )
}

/// Local generator L over (v, q, Theta_1..N):
///   M2 (v,q)' = (0, -n q + rscale * sum r_k Theta_k),
///   Theta_k'  = theta_k (Theta_k - q).
fn local_generator(
    minv: &Sym2,
    n_drag: f64,
    rscale: f64,
    prs: &PoleResidueSet,
) -> DMatrix<f64> {
    let n = prs.len();
    let dim = 2 + n;
    let mut l = DMatrix::<f64>::zeros(dim, dim);
    l[(0, 1)] = -minv[1] * n_drag;
    l[(1, 1)] = -minv[2] * n_drag;
    for k in 0..n {
        let rk = rscale * prs.residues[k];
        l[(0, 2 + k)] = minv[1] * rk;
        l[(1, 2 + k)] = minv[2] * rk;
        l[(2 + k, 1)] = -prs.poles[k];
        l[(2 + k, 2 + k)] = prs.poles[k];
    }
    l
}

/// Build the face block at face index (fx, fz) for the given axis; the
/// face neighbors are (fx,fz) and its +1 cell along the axis (wrapped for
/// periodic boundaries, clamped otherwise).
pub fn face_block(
    view: &dyn MaterialView,
    axis: Axis,
    fx: usize,
    fz: usize,
    periodic: bool,
    prs: &PoleResidueSet,
    half_dt: f64,
) -> Result<FaceBlock, SolverError> {
    let cells = match axis {
        Axis::X => [(fx, fz), (neighbor(fx, view.nx(), periodic), fz)],
        Axis::Z => [(fx, fz), (fx, neighbor(fz, view.nz(), periodic))],
    };
    let (rho, rho_f, m_j, etakappa, rscale) = average_face_inputs(view, axis, cells);
    let m2: Sym2 = [rho, rho_f, m_j];
    let minv = sym2_inv(&m2).ok_or(SolverError::NonPhysical {
        ix: fx,
        iz: fz,
        msg: format!("face inertia block for axis {} not PD", axis.label()),
    })?;
    let n_drag = etakappa + rscale * prs.residue_sum();
    let l = local_generator(&minv, n_drag, rscale, prs);
    let eh = (l * half_dt).exp();
    Ok(FaceBlock {
        m2,
        minv,
        n_drag,
        rscale,
        etakappa,
        eh: eh.as_slice().to_vec(),
    })
}

/// Symmetric stress-rate matrix over (tau11, tau33, -p) at a cell center,
/// and its inverse (used by the E2 energy form).
pub fn center_block(view: &dyn MaterialView, ix: usize, iz: usize) -> Result<(Sym3, Sym3), SolverError> {
    let d = view.derived(ix, iz);
    let e3: Sym3 = [
        d.c_u[(0, 0)],
        d.c_u[(0, 1)],
        d.m_biot * d.beta_1,
        d.c_u[(1, 1)],
        d.m_biot * d.beta_3,
        d.m_biot,
    ];
    let e3inv = sym3_inv(&e3).ok_or(SolverError::NonPhysical {
        ix,
        iz,
        msg: "stress-rate matrix not PD".into(),
    })?;
    Ok((e3, e3inv))
}

/// Shear modulus averaged onto the corner (fx+1/2, fz+1/2).
pub fn corner_c55(view: &dyn MaterialView, fx: usize, fz: usize, periodic: bool) -> f64 {
    let ix1 = neighbor(fx, view.nx(), periodic);
    let iz1 = neighbor(fz, view.nz(), periodic);
    0.25 * (view.params(fx, fz).stiffness.c55
        + view.params(ix1, fz).stiffness.c55
        + view.params(fx, iz1).stiffness.c55
        + view.params(ix1, iz1).stiffness.c55)
}

/// Plane-wave speeds {fast P, shear, slow P} (sorted descending) of the
/// undamped symbol along the unit direction `dir`.
pub fn plane_wave_speeds(dc: &DerivedCoefficients, rho_f: f64, dir: [f64; 2]) -> [f64; 3] {
    let (n1, n3) = (dir[0], dir[1]);
    #[rustfmt::skip]
    let d_n = Matrix4::new(
        n1, 0.0, n3, 0.0,
        0.0, n3, n1, 0.0,
        0.0, 0.0, 0.0, n1,
        0.0, 0.0, 0.0, n3,
    );
    let k = d_n * dc.e_mat * d_n.transpose();
    #[rustfmt::skip]
    let m_v = Matrix4::new(
        dc.rho_bulk, 0.0, rho_f, 0.0,
        0.0, dc.rho_bulk, 0.0, rho_f,
        rho_f, 0.0, dc.m_1, 0.0,
        0.0, rho_f, 0.0, dc.m_3,
    );
    let chol = nalgebra::Cholesky::new(m_v).expect("inertia matrix PD");
    let linv = chol.l().try_inverse().expect("triangular inverse");
    let b = linv * k * linv.transpose();
    let sym = (b + b.transpose()) * 0.5;
    let mut eig: Vec<f64> = sym.symmetric_eigenvalues().iter().copied().collect();
    eig.sort_by(|a, b| b.partial_cmp(a).unwrap());
    [eig[0].max(0.0).sqrt(), eig[1].max(0.0).sqrt(), eig[2].max(0.0).sqrt()]
}

/// Max plane-wave speed over cells and a fan of directions.
pub fn max_speed(mf: &MaterialField) -> f64 {
    let mut c_max = 0.0f64;
    let dirs = [
        [1.0, 0.0],
        [0.866025403784, 0.5],
        [std::f64::consts::FRAC_1_SQRT_2, std::f64::consts::FRAC_1_SQRT_2],
        [0.5, 0.866025403784],
        [0.0, 1.0],
    ];
    for iz in 0..mf.nz() {
        for ix in 0..mf.nx() {
            let d = MaterialField::derived(mf, ix, iz);
            let rf = MaterialField::params(mf, ix, iz).rho_f;
            for dir in dirs {
                c_max = c_max.max(plane_wave_speeds(d, rf, dir)[0]);
            }
        }
    }
    c_max
}

/// Stable step for the RK4 + 4th-order staggered transport:
/// dt = safety * 2.8284 / (c_max * (7/3) * sqrt(1/dx^2 + 1/dz^2)).
pub fn cfl_dt(c_max: f64, grid: &Grid2D, safety: f64) -> f64 {
    assert!(safety > 0.0 && safety <= 1.0);
    let kmax = (7.0 / 3.0) * (1.0 / (grid.dx * grid.dx) + 1.0 / (grid.dz * grid.dz)).sqrt();
    safety * (2.0 * std::f64::consts::SQRT_2) / (c_max * kmax)
}

/// Everything the stepper needs, precomputed per position.
pub struct SystemOperators {
    pub grid: Grid2D,
    pub boundary: Boundary,
    pub dt: f64,
    pub c_max: f64,
    pub prs1: PoleResidueSet,
    pub prs3: PoleResidueSet,
    // x faces
    pub m2_x: Vec<Sym2>,
    pub minv_x: Vec<Sym2>,
    pub ndrag_x: Vec<f64>,
    pub rscale_x: Vec<f64>,
    pub etakappa_x: Vec<f64>,
    pub eh_x: Vec<f64>,
    // z faces
    pub m2_z: Vec<Sym2>,
    pub minv_z: Vec<Sym2>,
    pub ndrag_z: Vec<f64>,
    pub rscale_z: Vec<f64>,
    pub etakappa_z: Vec<f64>,
    pub eh_z: Vec<f64>,
    // centers and corners
    pub e3: Vec<Sym3>,
    pub e3inv: Vec<Sym3>,
    pub c55: Vec<f64>,
    // sponge decay factors exp(-s dt/2) per lattice; all 1.0 when periodic
    pub sponge_center: Vec<f64>,
    pub sponge_xface: Vec<f64>,
    pub sponge_zface: Vec<f64>,
    pub sponge_corner: Vec<f64>,
}

impl SystemOperators {
    pub fn n1(&self) -> usize {
        self.prs1.len()
    }

    pub fn n3(&self) -> usize {
        self.prs3.len()
    }

    /// Row-major dimension of the x-face local exponential.
    pub fn dim_x(&self) -> usize {
        2 + self.n1()
    }

    pub fn dim_z(&self) -> usize {
        2 + self.n3()
    }

    pub fn periodic(&self) -> bool {
        self.boundary.is_periodic()
    }

    pub fn sponge_of(&self, lattice: Lattice) -> &[f64] {
        match lattice {
            Lattice::Center => &self.sponge_center,
            Lattice::XFace => &self.sponge_xface,
            Lattice::ZFace => &self.sponge_zface,
            Lattice::Corner => &self.sponge_corner,
        }
    }
}

fn sponge_profile(
    grid: &Grid2D,
    boundary: &Boundary,
    lattice: Lattice,
    half_dt: f64,
) -> Vec<f64> {
    let n = grid.n_cells();
    match boundary {
        Boundary::Periodic => vec![1.0; n],
        Boundary::Sponge { width, strength } => {
            let w = *width as f64;
            let (ox, oz) = lattice.offset();
            let mut out = vec![1.0; n];
            for iz in 0..grid.nz {
                for ix in 0..grid.nx {
                    let px = ix as f64 + ox;
                    let pz = iz as f64 + oz;
                    // distance to the domain edge in cell units
                    let dist = (px + 0.5)
                        .min(grid.nx as f64 - 0.5 - px)
                        .min(pz + 0.5)
                        .min(grid.nz as f64 - 0.5 - pz);
                    let xi = ((w - dist) / w).clamp(0.0, 1.0);
                    if xi > 0.0 {
                        let s = strength * 0.5 * (1.0 - (std::f64::consts::PI * xi).cos());
                        out[ix + grid.nx * iz] = (-s * half_dt).exp();
                    }
                }
            }
            out
        }
    }
}

/// Assemble all per-position operators for time step `dt`.
pub fn assemble_system(
    mf: &MaterialField,
    prs1: &PoleResidueSet,
    prs3: &PoleResidueSet,
    grid: &Grid2D,
    boundary: Boundary,
    dt: f64,
) -> Result<SystemOperators, SolverError> {
    assert_eq!(mf.nx(), grid.nx);
    assert_eq!(mf.nz(), grid.nz);
    prs1.validate().map_err(|e| SolverError::NonPhysical {
        ix: 0,
        iz: 0,
        msg: format!("axis-1 pole set: {e}"),
    })?;
    prs3.validate().map_err(|e| SolverError::NonPhysical {
        ix: 0,
        iz: 0,
        msg: format!("axis-3 pole set: {e}"),
    })?;

    let n = grid.n_cells();
    let periodic = boundary.is_periodic();
    let half_dt = 0.5 * dt;
    let dim_x = 2 + prs1.len();
    let dim_z = 2 + prs3.len();

    let mut ops = SystemOperators {
        grid: *grid,
        boundary,
        dt,
        c_max: max_speed(mf),
        prs1: prs1.clone(),
        prs3: prs3.clone(),
        m2_x: Vec::with_capacity(n),
        minv_x: Vec::with_capacity(n),
        ndrag_x: Vec::with_capacity(n),
        rscale_x: Vec::with_capacity(n),
        etakappa_x: Vec::with_capacity(n),
        eh_x: Vec::with_capacity(n * dim_x * dim_x),
        m2_z: Vec::with_capacity(n),
        minv_z: Vec::with_capacity(n),
        ndrag_z: Vec::with_capacity(n),
        rscale_z: Vec::with_capacity(n),
        etakappa_z: Vec::with_capacity(n),
        eh_z: Vec::with_capacity(n * dim_z * dim_z),
        e3: Vec::with_capacity(n),
        e3inv: Vec::with_capacity(n),
        c55: Vec::with_capacity(n),
        sponge_center: sponge_profile(grid, &boundary, Lattice::Center, half_dt),
        sponge_xface: sponge_profile(grid, &boundary, Lattice::XFace, half_dt),
        sponge_zface: sponge_profile(grid, &boundary, Lattice::ZFace, half_dt),
        sponge_corner: sponge_profile(grid, &boundary, Lattice::Corner, half_dt),
    };

    for iz in 0..grid.nz {
        for ix in 0..grid.nx {
            let fx = face_block(mf, Axis::X, ix, iz, periodic, prs1, half_dt)?;
            ops.m2_x.push(fx.m2);
            ops.minv_x.push(fx.minv);
            ops.ndrag_x.push(fx.n_drag);
            ops.rscale_x.push(fx.rscale);
            ops.etakappa_x.push(fx.etakappa);
            ops.eh_x.extend_from_slice(&fx.eh);

            let fz = face_block(mf, Axis::Z, ix, iz, periodic, prs3, half_dt)?;
            ops.m2_z.push(fz.m2);
            ops.minv_z.push(fz.minv);
            ops.ndrag_z.push(fz.n_drag);
            ops.rscale_z.push(fz.rscale);
            ops.etakappa_z.push(fz.etakappa);
            ops.eh_z.extend_from_slice(&fz.eh);

            let (e3, e3inv) = center_block(mf, ix, iz)?;
            ops.e3.push(e3);
            ops.e3inv.push(e3inv);
            ops.c55.push(corner_c55(mf, ix, iz, periodic));
        }
    }
    Ok(ops)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::material::derive_coefficients;
    use approx::assert_relative_eq;

    fn mf(nx: usize, nz: usize) -> MaterialField {
        MaterialField::homogeneous(nx, nz, PoroelasticParams::reference_sandstone()).unwrap()
    }

    fn empty_sets() -> (PoleResidueSet, PoleResidueSet) {
        let p = PoroelasticParams::reference_sandstone();
        (
            PoleResidueSet::empty(Axis::X, p.alpha_inf_1, p.drag_a(Axis::X)),
            PoleResidueSet::empty(Axis::Z, p.alpha_inf_3, p.drag_a(Axis::Z)),
        )
    }

    #[test]
    fn homogeneous_field_gives_identical_blocks() {
        let field = mf(8, 8);
        let (p1, p3) = empty_sets();
        let grid = Grid2D::new(8, 8, 2.0, 2.0, 0.0, 0.0);
        let ops =
            assemble_system(&field, &p1, &p3, &grid, Boundary::Periodic, 1e-4).unwrap();
        assert!(ops.minv_x.iter().all(|b| *b == ops.minv_x[0]));
        assert!(ops.e3.iter().all(|b| *b == ops.e3[0]));
        assert!(ops.eh_z.chunks(4).all(|c| c == &ops.eh_z[..4]));
    }

    #[test]
    fn inertia_inverse_is_exact() {
        let field = mf(8, 8);
        let (p1, p3) = empty_sets();
        let grid = Grid2D::new(8, 8, 2.0, 2.0, 0.0, 0.0);
        let ops =
            assemble_system(&field, &p1, &p3, &grid, Boundary::Periodic, 1e-4).unwrap();
        let m = ops.m2_x[0];
        let i = ops.minv_x[0];
        let prod = [
            m[0] * i[0] + m[1] * i[1],
            m[0] * i[1] + m[1] * i[2],
            m[1] * i[1] + m[2] * i[2],
        ];
        assert_relative_eq!(prod[0], 1.0, max_relative = 1e-14);
        assert_relative_eq!(prod[2], 1.0, max_relative = 1e-14);
        assert!(prod[1].abs() < 1e-14 * m[0].abs());
    }

    #[test]
    fn local_exponential_matches_single_pole_closed_form() {
        // With rho_f coupling removed the q-Theta block is exactly the
        // scalar exponential system; check against theta_step.
        let p = PoroelasticParams::reference_sandstone();
        let dc = derive_coefficients(&p).unwrap();
        let prs = PoleResidueSet {
            axis: Axis::X,
            poles: vec![-500.0],
            residues: vec![2.0e4],
            alpha_inf: p.alpha_inf_1,
            a: p.drag_a(Axis::X),
        };
        let m2: Sym2 = [dc.rho_bulk, p.rho_f, dc.m_1];
        let minv = sym2_inv(&m2).unwrap();
        let l = local_generator(&minv, 0.0, 0.0, &prs);
        // no drag coupling: v,q frozen; Theta decays toward q
        let dt = 1e-3;
        let e = (l * dt).exp();
        let q0 = 0.7;
        let th0 = 0.2;
        let th1 = e[(2, 1)] * q0 + e[(2, 2)] * th0;
        let expect = crate::memory::theta_step(th0, q0, q0, dt, -500.0);
        assert_relative_eq!(th1, expect, max_relative = 1e-12);
    }

    #[test]
    fn speeds_isotropic_limit_direction_independent() {
        let p = PoroelasticParams::reference_sandstone();
        let dc = derive_coefficients(&p).unwrap();
        let c_a = plane_wave_speeds(&dc, p.rho_f, [1.0, 0.0]);
        let c_b = plane_wave_speeds(&dc, p.rho_f, [0.6, 0.8]);
        let c_c = plane_wave_speeds(&dc, p.rho_f, [0.0, 1.0]);
        for k in 0..3 {
            assert_relative_eq!(c_a[k], c_b[k], max_relative = 1e-10);
            assert_relative_eq!(c_a[k], c_c[k], max_relative = 1e-10);
            assert!(c_a[k] > 0.0);
        }
        assert!(c_a[0] >= c_a[1] && c_a[1] >= c_a[2]);
    }

    #[test]
    fn speeds_elastic_limit() {
        // fluid decoupled: rho_f -> 0, beta -> 0, and M -> 0 (soft fluid)
        // leave c_pf = sqrt(c11/rho), c_s = sqrt(c55/rho)
        let mut p = PoroelasticParams::reference_sandstone();
        p.rho_f = 1e-3;
        p.k_f = 1e-3;
        // beta ~ 0: moduli sum to 3 Ks
        p.k_s = (p.stiffness.c11 + p.stiffness.c12 + p.stiffness.c13) / 3.0;
        let dc = derive_coefficients(&p).unwrap();
        let c = plane_wave_speeds(&dc, p.rho_f, [1.0, 0.0]);
        let rho = dc.rho_bulk;
        assert_relative_eq!(c[0], (p.stiffness.c11 / rho).sqrt(), max_relative = 1e-3);
        assert_relative_eq!(c[1], (p.stiffness.c55 / rho).sqrt(), max_relative = 1e-3);
    }

    #[test]
    fn cfl_scales_with_speed_and_spacing() {
        let grid = Grid2D::new(16, 16, 2.0, 2.0, 0.0, 0.0);
        let dt0 = cfl_dt(3000.0, &grid, 0.8);
        assert_relative_eq!(cfl_dt(6000.0, &grid, 0.8), dt0 / 2.0, max_relative = 1e-14);
        let half = Grid2D::new(16, 16, 1.0, 1.0, 0.0, 0.0);
        assert_relative_eq!(cfl_dt(3000.0, &half, 0.8), dt0 / 2.0, max_relative = 1e-14);
    }
}
