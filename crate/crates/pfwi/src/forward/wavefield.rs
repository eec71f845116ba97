//! The augmented state W = (v, q, tau, -p, Theta^1, Theta^3) on the
//! staggered grid, stored as one flat buffer per component.

use super::grid::Lattice;

/// Component count of the non-memory part of the state.
pub const BASE_COMPONENTS: usize = 8;

/// Names of the base components in storage order.
pub const BASE_NAMES: [&str; BASE_COMPONENTS] =
    ["v1", "v3", "q1", "q3", "tau11", "tau33", "tau13", "neg_p"];

#[derive(Debug, Clone)]
pub struct Wavefield {
    pub nx: usize,
    pub nz: usize,
    pub v1: Vec<f64>,
    pub v3: Vec<f64>,
    pub q1: Vec<f64>,
    pub q3: Vec<f64>,
    pub t11: Vec<f64>,
    pub t33: Vec<f64>,
    pub t13: Vec<f64>,
    pub np: Vec<f64>,
    pub th1: Vec<Vec<f64>>,
    pub th3: Vec<Vec<f64>>,
    pub t: f64,
}

impl Wavefield {
    pub fn zeros(nx: usize, nz: usize, n1: usize, n3: usize) -> Self {
        let z = || vec![0.0; nx * nz];
        Wavefield {
            nx,
            nz,
            v1: z(),
            v3: z(),
            q1: z(),
            q3: z(),
            t11: z(),
            t33: z(),
            t13: z(),
            np: z(),
            th1: (0..n1).map(|_| z()).collect(),
            th3: (0..n3).map(|_| z()).collect(),
            t: 0.0,
        }
    }

    pub fn n1(&self) -> usize {
        self.th1.len()
    }

    pub fn n3(&self) -> usize {
        self.th3.len()
    }

    /// Total component count 8 + N1 + N3.
    pub fn n_components(&self) -> usize {
        BASE_COMPONENTS + self.n1() + self.n3()
    }

    pub fn component(&self, c: usize) -> &[f64] {
        match c {
            0 => &self.v1,
            1 => &self.v3,
            2 => &self.q1,
            3 => &self.q3,
            4 => &self.t11,
            5 => &self.t33,
            6 => &self.t13,
            7 => &self.np,
            _ => {
                let k = c - BASE_COMPONENTS;
                if k < self.th1.len() {
                    &self.th1[k]
                } else {
                    &self.th3[k - self.th1.len()]
                }
            }
        }
    }

    pub fn component_mut(&mut self, c: usize) -> &mut [f64] {
        match c {
            0 => &mut self.v1,
            1 => &mut self.v3,
            2 => &mut self.q1,
            3 => &mut self.q3,
            4 => &mut self.t11,
            5 => &mut self.t33,
            6 => &mut self.t13,
            7 => &mut self.np,
            _ => {
                let k = c - BASE_COMPONENTS;
                if k < self.th1.len() {
                    &mut self.th1[k]
                } else {
                    let k3 = k - self.th1.len();
                    &mut self.th3[k3]
                }
            }
        }
    }

    /// Lattice of component `c`.
    pub fn lattice_of(&self, c: usize) -> Lattice {
        match c {
            0 | 2 => Lattice::XFace,
            1 | 3 => Lattice::ZFace,
            4 | 5 | 7 => Lattice::Center,
            6 => Lattice::Corner,
            _ => {
                if c - BASE_COMPONENTS < self.th1.len() {
                    Lattice::XFace
                } else {
                    Lattice::ZFace
                }
            }
        }
    }

    /// Name of component `c` for file headers and diagnostics.
    pub fn component_name(&self, c: usize) -> String {
        if c < BASE_COMPONENTS {
            BASE_NAMES[c].to_string()
        } else {
            let k = c - BASE_COMPONENTS;
            if k < self.th1.len() {
                format!("theta1_{}", k + 1)
            } else {
                format!("theta3_{}", k - self.th1.len() + 1)
            }
        }
    }

    pub fn fill_zero(&mut self) {
        for c in 0..self.n_components() {
            self.component_mut(c).fill(0.0);
        }
    }

    /// self *= k.
    pub fn scale(&mut self, k: f64) {
        for c in 0..self.n_components() {
            for v in self.component_mut(c) {
                *v *= k;
            }
        }
    }

    /// self += k * other.
    pub fn axpy(&mut self, k: f64, other: &Wavefield) {
        for c in 0..self.n_components() {
            let src = other.component(c);
            for (d, s) in self.component_mut(c).iter_mut().zip(src) {
                *d += k * s;
            }
        }
    }

    /// Plain l2 inner product over all components.
    pub fn dot(&self, other: &Wavefield) -> f64 {
        let mut acc = 0.0;
        for c in 0..self.n_components() {
            let a = self.component(c);
            let b = other.component(c);
            acc += a.iter().zip(b).map(|(x, y)| x * y).sum::<f64>();
        }
        acc
    }

    pub fn norm(&self) -> f64 {
        self.dot(self).sqrt()
    }

    pub fn max_abs(&self) -> f64 {
        (0..self.n_components())
            .map(|c| self.component(c).iter().fold(0.0f64, |m, v| m.max(v.abs())))
            .fold(0.0, f64::max)
    }

    /// First non-finite entry as (component, ix, iz), if any.
    pub fn find_non_finite(&self) -> Option<(usize, usize, usize)> {
        for c in 0..self.n_components() {
            if let Some(pos) = self.component(c).iter().position(|v| !v.is_finite()) {
                return Some((c, pos % self.nx, pos / self.nx));
            }
        }
        None
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn component_indexing_covers_all_fields() {
        let mut w = Wavefield::zeros(8, 9, 2, 3);
        assert_eq!(w.n_components(), 13);
        for c in 0..13 {
            w.component_mut(c)[5] = c as f64 + 1.0;
        }
        assert_eq!(w.th3[2][5], 13.0);
        assert_eq!(w.component(8)[5], 9.0);
        assert_eq!(w.component_name(8), "theta1_1");
        assert_eq!(w.component_name(12), "theta3_3");
        assert_eq!(w.lattice_of(8), Lattice::XFace);
        assert_eq!(w.lattice_of(10), Lattice::ZFace);
    }

    #[test]
    fn axpy_and_dot_are_consistent() {
        let mut a = Wavefield::zeros(8, 8, 1, 1);
        let mut b = Wavefield::zeros(8, 8, 1, 1);
        for (i, v) in a.v1.iter_mut().enumerate() {
            *v = i as f64;
        }
        b.v1[3] = 2.0;
        let d0 = a.dot(&b);
        assert_eq!(d0, 6.0);
        a.axpy(0.5, &b);
        assert_eq!(a.v1[3], 4.0);
    }
}
