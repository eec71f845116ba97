//! Material parameters for transversely isotropic poroelastic media,
//! the coefficients derived from them, and the JKD dynamic tortuosity.
//!
//! All quantities are SI. The symmetry axis is z; axis `X` carries the
//! in-plane (1) quantities and axis `Z` the axial (3) quantities.

use nalgebra::{Matrix2, Matrix3, Matrix4, Vector3};
use num_complex::Complex64;

use crate::error::MaterialError;

/// Grid axis a per-direction quantity refers to.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Axis {
    X,
    Z,
}

impl Axis {
    /// Conventional subscript: 1 for x, 3 for z.
    pub fn label(self) -> u32 {
        match self {
            Axis::X => 1,
            Axis::Z => 3,
        }
    }

    pub const BOTH: [Axis; 2] = [Axis::X, Axis::Z];
}

/// Drained stiffness moduli of the skeleton [Pa].
///
/// `c12` does not enter the plane-strain stiffness matrix but is required
/// by the Biot coefficient formulas.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ElasticStiffness {
    pub c11: f64,
    pub c12: f64,
    pub c13: f64,
    pub c33: f64,
    pub c55: f64,
}

impl ElasticStiffness {
    /// Plane-strain stiffness matrix over (eps11, eps33, 2*eps13).
    pub fn plane_strain_matrix(&self) -> Matrix3<f64> {
        Matrix3::new(
            self.c11, self.c13, 0.0, //
            self.c13, self.c33, 0.0, //
            0.0, 0.0, self.c55,
        )
    }

    pub fn validate(&self) -> Result<(), MaterialError> {
        let all = [self.c11, self.c12, self.c13, self.c33, self.c55];
        if all.iter().any(|v| !v.is_finite()) {
            return Err(MaterialError::NonPhysical(
                "stiffness moduli must be finite".into(),
            ));
        }
        if self.c11 <= 0.0 || self.c55 <= 0.0 || self.c11 * self.c33 - self.c13 * self.c13 <= 0.0 {
            return Err(MaterialError::NonPhysical(format!(
                "plane-strain stiffness not positive definite (c11={:.3e}, c33={:.3e}, c13={:.3e}, c55={:.3e})",
                self.c11, self.c33, self.c13, self.c55
            )));
        }
        Ok(())
    }
}

/// Raw poroelastic material inputs.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PoroelasticParams {
    /// Porosity, in (0, 1).
    pub phi: f64,
    /// Solid grain density [kg/m^3].
    pub rho_s: f64,
    /// Pore fluid density [kg/m^3].
    pub rho_f: f64,
    /// Fluid dynamic viscosity [Pa s].
    pub eta: f64,
    /// Solid bulk modulus [Pa].
    pub k_s: f64,
    /// Fluid bulk modulus [Pa].
    pub k_f: f64,
    /// Permeability along x [m^2].
    pub kappa_1: f64,
    /// Permeability along z [m^2].
    pub kappa_3: f64,
    /// Tortuosity high-frequency limit along x (>= 1).
    pub alpha_inf_1: f64,
    /// Tortuosity high-frequency limit along z (>= 1).
    pub alpha_inf_3: f64,
    /// Pride number along x (default 0.5).
    pub pride_1: f64,
    /// Pride number along z (default 0.5).
    pub pride_3: f64,
    pub stiffness: ElasticStiffness,
}

impl PoroelasticParams {
    pub fn kappa(&self, axis: Axis) -> f64 {
        match axis {
            Axis::X => self.kappa_1,
            Axis::Z => self.kappa_3,
        }
    }

    pub fn alpha_inf(&self, axis: Axis) -> f64 {
        match axis {
            Axis::X => self.alpha_inf_1,
            Axis::Z => self.alpha_inf_3,
        }
    }

    pub fn pride(&self, axis: Axis) -> f64 {
        match axis {
            Axis::X => self.pride_1,
            Axis::Z => self.pride_3,
        }
    }

    /// Low-frequency drag scale a_j = eta*phi/(rho_f*kappa_j) [1/s].
    pub fn drag_a(&self, axis: Axis) -> f64 {
        self.eta * self.phi / (self.rho_f * self.kappa(axis))
    }

    /// Relaxation frequency lambda_j = eta*phi^2*Lambda_j^2 /
    /// (4*alpha_inf_j^2*kappa_j^2*rho_f) [1/s].
    pub fn lambda(&self, axis: Axis) -> f64 {
        let lc = self.viscous_characteristic_length(axis);
        let ai = self.alpha_inf(axis);
        let k = self.kappa(axis);
        self.eta * self.phi * self.phi * lc * lc / (4.0 * ai * ai * k * k * self.rho_f)
    }

    /// Viscous characteristic length Lambda_j [m].
    pub fn viscous_characteristic_length(&self, axis: Axis) -> f64 {
        (4.0 * self.alpha_inf(axis) * self.kappa(axis) / (self.phi * self.pride(axis))).sqrt()
    }

    pub fn validate(&self) -> Result<(), MaterialError> {
        let positive = [
            ("rho_s", self.rho_s),
            ("rho_f", self.rho_f),
            ("eta", self.eta),
            ("k_s", self.k_s),
            ("k_f", self.k_f),
            ("kappa_1", self.kappa_1),
            ("kappa_3", self.kappa_3),
            ("pride_1", self.pride_1),
            ("pride_3", self.pride_3),
        ];
        for (name, v) in positive {
            if !(v.is_finite() && v > 0.0) {
                return Err(MaterialError::NonPhysical(format!(
                    "{name} must be finite and > 0, got {v:.3e}"
                )));
            }
        }
        if !(self.phi > 0.0 && self.phi < 1.0) {
            return Err(MaterialError::NonPhysical(format!(
                "phi must lie in (0,1), got {}",
                self.phi
            )));
        }
        for axis in Axis::BOTH {
            if !(self.alpha_inf(axis) >= 1.0 && self.alpha_inf(axis).is_finite()) {
                return Err(MaterialError::NonPhysical(format!(
                    "alpha_inf_{} must be >= 1, got {}",
                    axis.label(),
                    self.alpha_inf(axis)
                )));
            }
        }
        self.stiffness.validate()
    }

    /// Water-saturated sandstone-like reference material used throughout
    /// the test suite (eta 1e-3, phi 0.3, kappa 1e-11, alpha_inf 2).
    pub fn reference_sandstone() -> Self {
        PoroelasticParams {
            phi: 0.3,
            rho_s: 2500.0,
            rho_f: 1000.0,
            eta: 1.0e-3,
            k_s: 40.0e9,
            k_f: 2.25e9,
            kappa_1: 1.0e-11,
            kappa_3: 1.0e-11,
            alpha_inf_1: 2.0,
            alpha_inf_3: 2.0,
            pride_1: 0.5,
            pride_3: 0.5,
            stiffness: ElasticStiffness {
                c11: 10.0e9,
                c12: 4.0e9,
                c13: 4.0e9,
                c33: 10.0e9,
                c55: 3.0e9,
            },
        }
    }
}

/// Every coefficient derived from [`PoroelasticParams`].
///
/// The drag coefficients `n_1`, `n_3` start at their empty-pole-set value
/// eta/kappa_j and are completed once a kernel fit is available.
#[derive(Debug, Clone, PartialEq)]
pub struct DerivedCoefficients {
    pub beta_1: f64,
    pub beta_3: f64,
    /// Biot fluid-storage modulus [Pa].
    pub m_biot: f64,
    /// Undrained plane-strain stiffness [Pa].
    pub c_u: Matrix3<f64>,
    /// 4x4 stress-rate matrix over (eps11, eps33, 2*eps13, -zeta) [Pa].
    pub e_mat: Matrix4<f64>,
    /// Bulk density [kg/m^3].
    pub rho_bulk: f64,
    pub m_1: f64,
    pub m_3: f64,
    pub a_1: f64,
    pub a_3: f64,
    /// Viscous characteristic lengths [m].
    pub lambda_cap_1: f64,
    pub lambda_cap_3: f64,
    /// Relaxation frequencies [1/s].
    pub lambda_1: f64,
    pub lambda_3: f64,
    /// gamma_j = eta/(kappa_j*sqrt(lambda_j)).
    pub gamma_1: f64,
    pub gamma_3: f64,
    /// Total drag n_j = eta/kappa_j + (rho_f/phi) * sum_k r_k^j.
    pub n_1: f64,
    pub n_3: f64,
}

impl DerivedCoefficients {
    pub fn m_inertia(&self, axis: Axis) -> f64 {
        match axis {
            Axis::X => self.m_1,
            Axis::Z => self.m_3,
        }
    }

    pub fn drag_n(&self, axis: Axis) -> f64 {
        match axis {
            Axis::X => self.n_1,
            Axis::Z => self.n_3,
        }
    }

    /// 2x2 inertia block [[rho, rho_f],[rho_f, m_j]] of the velocity system.
    pub fn inertia_block(&self, rho_f: f64, axis: Axis) -> Matrix2<f64> {
        Matrix2::new(self.rho_bulk, rho_f, rho_f, self.m_inertia(axis))
    }

    /// Fill n_j from fitted residue sums; `residue_sum_j` is sum_k r_k^j.
    pub fn set_drag(&mut self, p: &PoroelasticParams, residue_sum_1: f64, residue_sum_3: f64) {
        self.n_1 = p.eta / p.kappa_1 + p.rho_f / p.phi * residue_sum_1;
        self.n_3 = p.eta / p.kappa_3 + p.rho_f / p.phi * residue_sum_3;
    }
}

/// Derive every coefficient from raw inputs, validating all invariants.
pub fn derive_coefficients(p: &PoroelasticParams) -> Result<DerivedCoefficients, MaterialError> {
    p.validate()?;
    let st = &p.stiffness;
    let ks3 = 3.0 * p.k_s;
    let beta_1 = 1.0 - (st.c11 + st.c12 + st.c13) / ks3;
    let beta_3 = 1.0 - (2.0 * st.c13 + st.c33) / ks3;

    let m_den = p.k_s * (1.0 + p.phi * (p.k_s / p.k_f - 1.0))
        - (2.0 * st.c11 + st.c33 + 2.0 * st.c12 + 4.0 * st.c13) / 9.0;
    if m_den <= 0.0 {
        return Err(MaterialError::NonPhysical(format!(
            "Biot modulus denominator non-positive ({m_den:.3e})"
        )));
    }
    let m_biot = p.k_s * p.k_s / m_den;

    let beta = Vector3::new(beta_1, beta_3, 0.0);
    let c = st.plane_strain_matrix();
    let c_u = c + m_biot * beta * beta.transpose();

    let mut e_mat = Matrix4::zeros();
    e_mat.fixed_view_mut::<3, 3>(0, 0).copy_from(&c_u);
    for i in 0..3 {
        e_mat[(i, 3)] = m_biot * beta[i];
        e_mat[(3, i)] = m_biot * beta[i];
    }
    e_mat[(3, 3)] = m_biot;
    if nalgebra::Cholesky::new(e_mat).is_none() {
        return Err(MaterialError::NonPhysical(
            "stress-rate matrix E not positive definite".into(),
        ));
    }

    let rho_bulk = (1.0 - p.phi) * p.rho_s + p.phi * p.rho_f;
    let m_1 = p.alpha_inf_1 * p.rho_f / p.phi;
    let m_3 = p.alpha_inf_3 * p.rho_f / p.phi;
    for (axis, m_j) in [(Axis::X, m_1), (Axis::Z, m_3)] {
        if rho_bulk * m_j - p.rho_f * p.rho_f <= 0.0 {
            return Err(MaterialError::NonPhysical(format!(
                "inertia block for axis {} not positive definite",
                axis.label()
            )));
        }
    }

    let lambda_1 = p.lambda(Axis::X);
    let lambda_3 = p.lambda(Axis::Z);
    Ok(DerivedCoefficients {
        beta_1,
        beta_3,
        m_biot,
        c_u,
        e_mat,
        rho_bulk,
        m_1,
        m_3,
        a_1: p.drag_a(Axis::X),
        a_3: p.drag_a(Axis::Z),
        lambda_cap_1: p.viscous_characteristic_length(Axis::X),
        lambda_cap_3: p.viscous_characteristic_length(Axis::Z),
        lambda_1,
        lambda_3,
        gamma_1: p.eta / (p.kappa_1 * lambda_1.sqrt()),
        gamma_3: p.eta / (p.kappa_3 * lambda_3.sqrt()),
        n_1: p.eta / p.kappa_1,
        n_3: p.eta / p.kappa_3,
    })
}

fn check_s(s: Complex64, lambda: f64) -> Result<(), MaterialError> {
    if s == Complex64::new(0.0, 0.0) {
        return Err(MaterialError::Domain("kernel undefined at s = 0".into()));
    }
    if s.im == 0.0 && s.re <= -lambda {
        return Err(MaterialError::Domain(format!(
            "s = {} lies on the branch cut (-inf, {:-.3e}]",
            s.re, -lambda
        )));
    }
    Ok(())
}

/// JKD dynamic tortuosity T_j(s) = alpha_inf + (a/s)*sqrt(1 + s/lambda_j),
/// principal branch.
pub fn jkd_tortuosity(
    p: &PoroelasticParams,
    s: Complex64,
    axis: Axis,
) -> Result<Complex64, MaterialError> {
    let lambda = p.lambda(axis);
    check_s(s, lambda)?;
    let a = p.drag_a(axis);
    let root = (Complex64::new(1.0, 0.0) + s / lambda).sqrt();
    Ok(Complex64::new(p.alpha_inf(axis), 0.0) + a / s * root)
}

/// Stieltjes part D_j(s) = T_j(s) - a_j/s, evaluated in the
/// cancellation-free form alpha_inf + (a/lambda)/(1 + sqrt(1 + s/lambda)).
pub fn d_function(
    p: &PoroelasticParams,
    s: Complex64,
    axis: Axis,
) -> Result<Complex64, MaterialError> {
    let lambda = p.lambda(axis);
    check_s(s, lambda)?;
    let a = p.drag_a(axis);
    let root = (Complex64::new(1.0, 0.0) + s / lambda).sqrt();
    Ok(Complex64::new(p.alpha_inf(axis), 0.0)
        + (a / lambda) / (Complex64::new(1.0, 0.0) + root))
}

/// Piecewise-constant heterogeneous material over an nx-by-nz cell grid,
/// with derived coefficients cached eagerly.
#[derive(Debug, Clone)]
pub struct MaterialField {
    nx: usize,
    nz: usize,
    cells: Vec<PoroelasticParams>,
    derived: Vec<DerivedCoefficients>,
}

impl MaterialField {
    /// Homogeneous field.
    pub fn homogeneous(nx: usize, nz: usize, p: PoroelasticParams) -> Result<Self, MaterialError> {
        let dc = derive_coefficients(&p)?;
        Ok(MaterialField {
            nx,
            nz,
            cells: vec![p; nx * nz],
            derived: vec![dc; nx * nz],
        })
    }

    /// Build from per-cell parameters in x-major order (ix + nx*iz).
    pub fn from_cells(
        nx: usize,
        nz: usize,
        cells: Vec<PoroelasticParams>,
    ) -> Result<Self, MaterialError> {
        assert_eq!(cells.len(), nx * nz, "cell count must equal nx*nz");
        let derived = cells
            .iter()
            .map(derive_coefficients)
            .collect::<Result<Vec<_>, _>>()?;
        Ok(MaterialField {
            nx,
            nz,
            cells,
            derived,
        })
    }

    pub fn nx(&self) -> usize {
        self.nx
    }

    pub fn nz(&self) -> usize {
        self.nz
    }

    #[inline]
    pub fn params(&self, ix: usize, iz: usize) -> &PoroelasticParams {
        &self.cells[ix + self.nx * iz]
    }

    #[inline]
    pub fn derived(&self, ix: usize, iz: usize) -> &DerivedCoefficients {
        &self.derived[ix + self.nx * iz]
    }

    /// Mutate one cell's parameters and refresh its cached coefficients.
    pub fn update_cell(
        &mut self,
        ix: usize,
        iz: usize,
        p: PoroelasticParams,
    ) -> Result<(), MaterialError> {
        let dc = derive_coefficients(&p)?;
        let idx = ix + self.nx * iz;
        self.cells[idx] = p;
        self.derived[idx] = dc;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn beta_cancels_when_moduli_sum_to_3ks() {
        let mut p = PoroelasticParams::reference_sandstone();
        // c11 + c12 + c13 = 3 Ks exactly
        p.k_s = (p.stiffness.c11 + p.stiffness.c12 + p.stiffness.c13) / 3.0;
        // keep the M denominator positive with a softer fluid
        p.k_f = 2.0e9;
        let dc = derive_coefficients(&p).unwrap();
        assert_eq!(dc.beta_1, 0.0);
    }

    #[test]
    fn bulk_density_direct_arithmetic() {
        let p = PoroelasticParams::reference_sandstone();
        let dc = derive_coefficients(&p).unwrap();
        assert_eq!(dc.rho_bulk, 2050.0);
    }

    #[test]
    fn biot_modulus_matches_exact_rational_oracle() {
        // Exact-arithmetic evaluation of the M formula with rational inputs.
        use num_bigint::BigInt;
        use num_rational::BigRational;
        let r = |num: i64, den: i64| BigRational::new(BigInt::from(num), BigInt::from(den));

        let p = PoroelasticParams::reference_sandstone();
        let ks = r(40_000_000_000, 1);
        let kf = r(2_250_000_000, 1);
        let phi = r(3, 10);
        let c11 = r(10_000_000_000, 1);
        let c12 = r(4_000_000_000, 1);
        let c13 = r(4_000_000_000, 1);
        let c33 = r(10_000_000_000, 1);

        let one = r(1, 1);
        let den = ks.clone() * (one + phi * (ks.clone() / kf - r(1, 1)))
            - (r(2, 1) * c11 + c33 + r(2, 1) * c12 + r(4, 1) * c13) / r(9, 1);
        let m = ks.clone() * ks / den;
        let m_f64 = {
            use num_traits::ToPrimitive;
            m.to_f64().unwrap()
        };

        let dc = derive_coefficients(&p).unwrap();
        assert_relative_eq!(dc.m_biot, m_f64, max_relative = 1e-14);
    }

    #[test]
    fn pride_half_gives_lambda_two_a_over_alpha() {
        let p = PoroelasticParams::reference_sandstone();
        for axis in Axis::BOTH {
            let lambda = p.lambda(axis);
            let expected = 2.0 * p.drag_a(axis) / p.alpha_inf(axis);
            assert_relative_eq!(lambda, expected, max_relative = 1e-14);
        }
    }

    #[test]
    fn e_mat_symmetric_positive_definite() {
        let p = PoroelasticParams::reference_sandstone();
        let dc = derive_coefficients(&p).unwrap();
        assert_eq!(dc.e_mat, dc.e_mat.transpose());
        let eig = dc.e_mat.symmetric_eigenvalues();
        assert!(eig.iter().all(|&l| l > 0.0), "eigenvalues {eig:?}");
    }

    #[test]
    fn inertia_blocks_positive_definite() {
        let p = PoroelasticParams::reference_sandstone();
        let dc = derive_coefficients(&p).unwrap();
        for axis in Axis::BOTH {
            assert!(dc.rho_bulk * dc.m_inertia(axis) - p.rho_f * p.rho_f > 0.0);
        }
    }

    #[test]
    fn tortuosity_high_frequency_limit() {
        let p = PoroelasticParams::reference_sandstone();
        for axis in Axis::BOTH {
            let t = jkd_tortuosity(&p, Complex64::new(1e12, 0.0), axis).unwrap();
            let ai = p.alpha_inf(axis);
            assert!((t - ai).norm() <= 1e-3 * ai, "T = {t}");
        }
    }

    #[test]
    fn tortuosity_low_frequency_limit() {
        let p = PoroelasticParams::reference_sandstone();
        let s = Complex64::new(1e-8, 0.0);
        for axis in Axis::BOTH {
            let t = jkd_tortuosity(&p, s, axis).unwrap();
            let a = p.drag_a(axis);
            assert!(((s * t).re - a).abs() <= 1e-6 * a);
        }
    }

    #[test]
    fn tortuosity_real_positive_decreasing_on_positive_reals() {
        let p = PoroelasticParams::reference_sandstone();
        let mut prev = f64::INFINITY;
        for k in 0..40 {
            let s = Complex64::new(10f64.powf(-2.0 + 0.25 * k as f64), 0.0);
            let t = jkd_tortuosity(&p, s, Axis::X).unwrap();
            assert!(t.im.abs() < 1e-12 * t.re);
            assert!(t.re > 0.0);
            assert!(t.re < prev, "not decreasing at s = {s}");
            prev = t.re;
        }
    }

    #[test]
    fn d_function_limits_and_herglotz_sign() {
        let p = PoroelasticParams::reference_sandstone();
        let ai = p.alpha_inf_1;
        let d_inf = d_function(&p, Complex64::new(1e12, 0.0), Axis::X).unwrap();
        assert!((d_inf.re - ai).abs() <= 1e-3 * ai);
        // Herglotz: Im D(-i*omega) >= 0 for omega > 0
        for k in 0..30 {
            let omega = 10f64.powf(-1.0 + 0.3 * k as f64);
            let d = d_function(&p, Complex64::new(0.0, -omega), Axis::X).unwrap();
            assert!(d.im >= 0.0, "Im D = {} at omega = {omega}", d.im);
        }
        // real on positive reals
        let d = d_function(&p, Complex64::new(123.0, 0.0), Axis::X).unwrap();
        assert_eq!(d.im, 0.0);
        assert!(d.re > 0.0);
    }

    #[test]
    fn d_decays_to_alpha_inf_along_reals() {
        let p = PoroelasticParams::reference_sandstone();
        let ai = p.alpha_inf_1;
        let mut prev = f64::INFINITY;
        for s in [1e6, 1e9, 1e12] {
            let d = d_function(&p, Complex64::new(s, 0.0), Axis::X).unwrap();
            let gap = (d.re - ai).abs();
            assert!(gap < prev);
            prev = gap;
        }
        assert!(prev <= 1e-3 * ai);
    }

    #[test]
    fn domain_error_at_zero() {
        let p = PoroelasticParams::reference_sandstone();
        assert!(jkd_tortuosity(&p, Complex64::new(0.0, 0.0), Axis::X).is_err());
        assert!(d_function(&p, Complex64::new(0.0, 0.0), Axis::Z).is_err());
    }

    #[test]
    fn rejects_non_physical_inputs() {
        let mut p = PoroelasticParams::reference_sandstone();
        p.phi = 1.2;
        assert!(matches!(
            derive_coefficients(&p),
            Err(MaterialError::NonPhysical(_))
        ));

        let mut p = PoroelasticParams::reference_sandstone();
        p.k_s = 1.0e9; // drives the M denominator negative
        assert!(derive_coefficients(&p).is_err());

        let mut p = PoroelasticParams::reference_sandstone();
        p.stiffness.c13 = 11.0e9; // c11*c33 - c13^2 < 0
        assert!(p.stiffness.validate().is_err());
    }

    #[test]
    fn heterogeneous_field_caches_per_cell() {
        let mut mf =
            MaterialField::homogeneous(4, 3, PoroelasticParams::reference_sandstone()).unwrap();
        let mut p2 = PoroelasticParams::reference_sandstone();
        p2.kappa_1 = 2e-11;
        mf.update_cell(2, 1, p2).unwrap();
        assert_eq!(mf.params(2, 1).kappa_1, 2e-11);
        assert_eq!(mf.params(0, 0).kappa_1, 1e-11);
        assert!(mf.derived(2, 1).a_1 < mf.derived(0, 0).a_1);
    }
}
