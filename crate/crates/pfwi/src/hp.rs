//! Fixed-precision big-float arithmetic for the kernel fit.
//!
//! Thin wrapper over `astro-float` with explicit working precision, plus
//! the complex scalar type and the small dense Hermitian linear algebra
//! (Cholesky, triangular solves, cyclic Jacobi eigensolver) used by the
//! two-sided residue interpolation. Everything here is deterministic and
//! allocation-heavy by design; matrices are tiny (M <= ~40).

use astro_float::{BigFloat, RoundingMode, Sign};

const RM: RoundingMode = RoundingMode::ToEven;

/// Working-precision context, in bits.
#[derive(Debug, Clone, Copy)]
pub struct Ctx {
    prec: usize,
}

impl Ctx {
    pub fn new(prec_bits: usize) -> Self {
        assert!(prec_bits >= 64, "working precision below 64 bits");
        Ctx { prec: prec_bits }
    }

    pub fn prec_bits(&self) -> usize {
        self.prec
    }
}

/// Arbitrary-precision real scalar.
#[derive(Debug, Clone)]
pub struct Real(BigFloat);

impl Real {
    pub fn from_f64(v: f64, cx: &Ctx) -> Self {
        Real(BigFloat::from_f64(v, cx.prec))
    }

    pub fn zero(cx: &Ctx) -> Self {
        Real(BigFloat::from_f64(0.0, cx.prec))
    }

    pub fn one(cx: &Ctx) -> Self {
        Real(BigFloat::from_f64(1.0, cx.prec))
    }

    pub fn add(&self, o: &Real, cx: &Ctx) -> Real {
        Real(self.0.add(&o.0, cx.prec, RM))
    }

    pub fn sub(&self, o: &Real, cx: &Ctx) -> Real {
        Real(self.0.sub(&o.0, cx.prec, RM))
    }

    pub fn mul(&self, o: &Real, cx: &Ctx) -> Real {
        Real(self.0.mul(&o.0, cx.prec, RM))
    }

    pub fn div(&self, o: &Real, cx: &Ctx) -> Real {
        Real(self.0.div(&o.0, cx.prec, RM))
    }

    /// Square root; NaN for negative input.
    pub fn sqrt(&self, cx: &Ctx) -> Real {
        Real(self.0.sqrt(cx.prec, RM))
    }

    pub fn neg(&self) -> Real {
        Real(self.0.neg())
    }

    pub fn abs(&self) -> Real {
        Real(self.0.abs())
    }

    pub fn is_zero(&self) -> bool {
        self.0.is_zero()
    }

    pub fn is_nan(&self) -> bool {
        self.0.is_nan()
    }

    /// Total order; panics on NaN (fitting never produces NaN on valid data).
    pub fn cmp(&self, o: &Real) -> std::cmp::Ordering {
        let c = self.0.cmp(&o.0).expect("NaN in high-precision comparison");
        c.cmp(&0)
    }

    pub fn is_positive(&self) -> bool {
        !self.is_zero() && self.0.sign() == Some(Sign::Pos)
    }

    pub fn is_negative(&self) -> bool {
        !self.is_zero() && self.0.sign() == Some(Sign::Neg)
    }

    /// Nearest f64 (top 128 mantissa bits, then one f64 rounding).
    pub fn to_f64(&self) -> f64 {
        if self.0.is_nan() {
            return f64::NAN;
        }
        if self.0.is_zero() {
            return 0.0;
        }
        if self.0.is_inf_pos() {
            return f64::INFINITY;
        }
        if self.0.is_inf_neg() {
            return f64::NEG_INFINITY;
        }
        let (words, _n, sign, exp, _inexact) =
            self.0.as_raw_parts().expect("finite nonzero raw parts");
        let nw = words.len();
        let hi = words[nw - 1] as f64;
        let lo = if nw >= 2 { words[nw - 2] as f64 } else { 0.0 };
        let frac = hi * 2f64.powi(-64) + lo * 2f64.powi(-128);
        let v = frac * 2f64.powi(exp);
        if sign == Sign::Neg {
            -v
        } else {
            v
        }
    }
}

/// Arbitrary-precision complex scalar.
#[derive(Debug, Clone)]
pub struct Cplx {
    pub re: Real,
    pub im: Real,
}

impl Cplx {
    pub fn new(re: Real, im: Real) -> Self {
        Cplx { re, im }
    }

    pub fn from_f64(re: f64, im: f64, cx: &Ctx) -> Self {
        Cplx::new(Real::from_f64(re, cx), Real::from_f64(im, cx))
    }

    pub fn zero(cx: &Ctx) -> Self {
        Cplx::new(Real::zero(cx), Real::zero(cx))
    }

    pub fn real(v: Real, cx: &Ctx) -> Self {
        Cplx::new(v, Real::zero(cx))
    }

    pub fn conj(&self) -> Cplx {
        Cplx::new(self.re.clone(), self.im.neg())
    }

    pub fn neg(&self) -> Cplx {
        Cplx::new(self.re.neg(), self.im.neg())
    }

    pub fn add(&self, o: &Cplx, cx: &Ctx) -> Cplx {
        Cplx::new(self.re.add(&o.re, cx), self.im.add(&o.im, cx))
    }

    pub fn sub(&self, o: &Cplx, cx: &Ctx) -> Cplx {
        Cplx::new(self.re.sub(&o.re, cx), self.im.sub(&o.im, cx))
    }

    pub fn mul(&self, o: &Cplx, cx: &Ctx) -> Cplx {
        let re = self.re.mul(&o.re, cx).sub(&self.im.mul(&o.im, cx), cx);
        let im = self.re.mul(&o.im, cx).add(&self.im.mul(&o.re, cx), cx);
        Cplx::new(re, im)
    }

    pub fn scale(&self, k: &Real, cx: &Ctx) -> Cplx {
        Cplx::new(self.re.mul(k, cx), self.im.mul(k, cx))
    }

    pub fn div(&self, o: &Cplx, cx: &Ctx) -> Cplx {
        let d = o.abs2(cx);
        let num = self.mul(&o.conj(), cx);
        Cplx::new(num.re.div(&d, cx), num.im.div(&d, cx))
    }

    /// |z|^2.
    pub fn abs2(&self, cx: &Ctx) -> Real {
        self.re
            .mul(&self.re, cx)
            .add(&self.im.mul(&self.im, cx), cx)
    }

    pub fn abs(&self, cx: &Ctx) -> Real {
        self.abs2(cx).sqrt(cx)
    }

    /// Principal square root.
    pub fn sqrt(&self, cx: &Ctx) -> Cplx {
        let r = self.abs(cx);
        let two = Real::from_f64(2.0, cx);
        if self.im.is_zero() {
            if self.re.is_negative() {
                return Cplx::new(Real::zero(cx), self.re.neg().sqrt(cx));
            }
            return Cplx::new(self.re.sqrt(cx), Real::zero(cx));
        }
        if !self.re.is_negative() {
            let u = r.add(&self.re, cx).div(&two, cx).sqrt(cx);
            let v = self.im.div(&u.mul(&two, cx), cx);
            Cplx::new(u, v)
        } else {
            let w = r.sub(&self.re, cx).div(&two, cx).sqrt(cx);
            let u = self.im.abs().div(&w.mul(&two, cx), cx);
            let v = if self.im.is_negative() { w.neg() } else { w };
            Cplx::new(u, v)
        }
    }

    pub fn to_c64(&self) -> num_complex::Complex64 {
        num_complex::Complex64::new(self.re.to_f64(), self.im.to_f64())
    }
}

/// Dense square complex matrix, row-major.
#[derive(Debug, Clone)]
pub struct CMat {
    n: usize,
    data: Vec<Cplx>,
}

impl CMat {
    pub fn zeros(n: usize, cx: &Ctx) -> Self {
        CMat {
            n,
            data: vec![Cplx::zero(cx); n * n],
        }
    }

    pub fn identity(n: usize, cx: &Ctx) -> Self {
        let mut m = CMat::zeros(n, cx);
        for i in 0..n {
            *m.at_mut(i, i) = Cplx::real(Real::one(cx), cx);
        }
        m
    }

    pub fn n(&self) -> usize {
        self.n
    }

    #[inline]
    pub fn at(&self, i: usize, j: usize) -> &Cplx {
        &self.data[i * self.n + j]
    }

    #[inline]
    pub fn at_mut(&mut self, i: usize, j: usize) -> &mut Cplx {
        &mut self.data[i * self.n + j]
    }

    /// Hermitian symmetrization A <- (A + A*)/2.
    pub fn symmetrize(&mut self, cx: &Ctx) {
        let two = Real::from_f64(2.0, cx);
        for i in 0..self.n {
            for j in (i + 1)..self.n {
                let a = self.at(i, j).clone();
                let b = self.at(j, i).conj();
                let avg = a.add(&b, cx);
                let avg = Cplx::new(avg.re.div(&two, cx), avg.im.div(&two, cx));
                *self.at_mut(i, j) = avg.clone();
                *self.at_mut(j, i) = avg.conj();
            }
            let d = self.at(i, i).re.clone();
            *self.at_mut(i, i) = Cplx::real(d, cx);
        }
    }

    /// Max |A[i][j] - conj(A[j][i])| as f64, for diagnostics.
    pub fn hermitian_defect(&self, cx: &Ctx) -> f64 {
        let mut worst: f64 = 0.0;
        for i in 0..self.n {
            for j in 0..self.n {
                let d = self.at(i, j).sub(&self.at(j, i).conj(), cx);
                worst = worst.max(d.abs(cx).to_f64());
            }
        }
        worst
    }
}

/// Cholesky factor L (lower) with A = L L*; `Err` carries the pivot index
/// whose reduced diagonal was not strictly positive.
pub fn cholesky(a: &CMat, cx: &Ctx) -> Result<CMat, usize> {
    let n = a.n();
    let mut l = CMat::zeros(n, cx);
    for j in 0..n {
        let mut d = a.at(j, j).re.clone();
        for k in 0..j {
            d = d.sub(&l.at(j, k).abs2(cx), cx);
        }
        if d.is_nan() || !d.is_positive() {
            return Err(j);
        }
        let djj = d.sqrt(cx);
        *l.at_mut(j, j) = Cplx::real(djj.clone(), cx);
        for i in (j + 1)..n {
            let mut s = a.at(i, j).clone();
            for k in 0..j {
                s = s.sub(&l.at(i, k).mul(&l.at(j, k).conj(), cx), cx);
            }
            *l.at_mut(i, j) = Cplx::new(s.re.div(&djj, cx), s.im.div(&djj, cx));
        }
    }
    Ok(l)
}

/// Solve L X = B in place (L lower triangular), column by column.
pub fn solve_lower(l: &CMat, b: &mut CMat, cx: &Ctx) {
    let n = l.n();
    for col in 0..n {
        for i in 0..n {
            let mut s = b.at(i, col).clone();
            for k in 0..i {
                s = s.sub(&l.at(i, k).mul(b.at(k, col), cx), cx);
            }
            let d = &l.at(i, i).re;
            *b.at_mut(i, col) = Cplx::new(s.re.div(d, cx), s.im.div(d, cx));
        }
    }
}

/// Solve L* X = B in place (conjugate transpose of lower L).
pub fn solve_lower_conj_transpose(l: &CMat, b: &mut CMat, cx: &Ctx) {
    let n = l.n();
    for col in 0..n {
        for i in (0..n).rev() {
            let mut s = b.at(i, col).clone();
            for k in (i + 1)..n {
                // (L*)[i][k] = conj(L[k][i])
                s = s.sub(&l.at(k, i).conj().mul(b.at(k, col), cx), cx);
            }
            let d = &l.at(i, i).re;
            *b.at_mut(i, col) = Cplx::new(s.re.div(d, cx), s.im.div(d, cx));
        }
    }
}

/// Eigendecomposition of a Hermitian matrix by cyclic complex Jacobi.
///
/// Returns (eigenvalues, V) with A = V diag(w) V*, V unitary. Eigenvalues
/// are sorted ascending.
pub fn jacobi_hermitian(a: &CMat, cx: &Ctx, max_sweeps: usize) -> (Vec<Real>, CMat) {
    let n = a.n();
    let mut m = a.clone();
    let mut v = CMat::identity(n, cx);
    if n == 1 {
        return (vec![m.at(0, 0).re.clone()], v);
    }

    // stop once off-diagonal mass is negligible at working precision
    let mut diag_scale = Real::zero(cx);
    for i in 0..n {
        diag_scale = diag_scale.add(&m.at(i, i).re.abs(), cx);
    }
    let eps = {
        // 2^-(prec-8) * scale
        let mut e = Real::one(cx);
        let half = Real::from_f64(0.5, cx);
        for _ in 0..(cx.prec_bits().saturating_sub(8)) {
            e = e.mul(&half, cx);
        }
        e.mul(&diag_scale.add(&Real::one(cx), cx), cx)
    };

    for _sweep in 0..max_sweeps {
        let mut off = Real::zero(cx);
        for p in 0..n {
            for q in (p + 1)..n {
                off = off.add(&m.at(p, q).abs(cx), cx);
            }
        }
        if off.cmp(&eps) != std::cmp::Ordering::Greater {
            break;
        }
        for p in 0..n {
            for q in (p + 1)..n {
                let apq = m.at(p, q).clone();
                let apq_abs = apq.abs(cx);
                if apq_abs.cmp(&eps) != std::cmp::Ordering::Greater {
                    continue;
                }
                let app = m.at(p, p).re.clone();
                let aqq = m.at(q, q).re.clone();
                // phase of a_pq, rotation angle from the real symmetric case
                let phase = Cplx::new(
                    apq.re.div(&apq_abs, cx),
                    apq.im.div(&apq_abs, cx),
                );
                let two = Real::from_f64(2.0, cx);
                let tau = aqq.sub(&app, cx).div(&two.mul(&apq_abs, cx), cx);
                let one = Real::one(cx);
                let root = one.add(&tau.mul(&tau, cx), cx).sqrt(cx);
                let t = if tau.is_negative() {
                    one.div(&tau.sub(&root, cx), cx)
                } else {
                    one.div(&tau.add(&root, cx), cx)
                };
                let c = one.div(&one.add(&t.mul(&t, cx), cx).sqrt(cx), cx);
                let sigma = t.mul(&c, cx);
                let s = phase.scale(&sigma, cx);

                // columns p,q of M: col_p <- c*col_p - conj(s)*col_q,
                //                   col_q <- s*col_p + c*col_q
                for i in 0..n {
                    let mip = m.at(i, p).clone();
                    let miq = m.at(i, q).clone();
                    *m.at_mut(i, p) = mip.scale(&c, cx).sub(&s.conj().mul(&miq, cx), cx);
                    *m.at_mut(i, q) = s.mul(&mip, cx).add(&miq.scale(&c, cx), cx);
                }
                // rows p,q: row_p <- c*row_p - s*row_q, row_q <- conj(s)*row_p + c*row_q
                for j in 0..n {
                    let mpj = m.at(p, j).clone();
                    let mqj = m.at(q, j).clone();
                    *m.at_mut(p, j) = mpj.scale(&c, cx).sub(&s.mul(&mqj, cx), cx);
                    *m.at_mut(q, j) = s.conj().mul(&mpj, cx).add(&mqj.scale(&c, cx), cx);
                }
                // exact zeros on the eliminated pair
                let zpq = Cplx::zero(cx);
                *m.at_mut(p, q) = zpq.clone();
                *m.at_mut(q, p) = zpq;
                let dpp = m.at(p, p).re.clone();
                let dqq = m.at(q, q).re.clone();
                *m.at_mut(p, p) = Cplx::real(dpp, cx);
                *m.at_mut(q, q) = Cplx::real(dqq, cx);

                // accumulate eigenvectors: V <- V R
                for i in 0..n {
                    let vip = v.at(i, p).clone();
                    let viq = v.at(i, q).clone();
                    *v.at_mut(i, p) = vip.scale(&c, cx).sub(&s.conj().mul(&viq, cx), cx);
                    *v.at_mut(i, q) = s.mul(&vip, cx).add(&viq.scale(&c, cx), cx);
                }
            }
        }
    }

    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| m.at(i, i).re.cmp(&m.at(j, j).re));
    let vals: Vec<Real> = order.iter().map(|&i| m.at(i, i).re.clone()).collect();
    let mut vs = CMat::zeros(n, cx);
    for (new_col, &old_col) in order.iter().enumerate() {
        for i in 0..n {
            *vs.at_mut(i, new_col) = v.at(i, old_col).clone();
        }
    }
    (vals, vs)
}
