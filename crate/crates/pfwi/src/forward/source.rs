//! Sources and receivers with bilinear (tent) regularization on the
//! staggered lattices. The spread and sample operators share one stamp,
//! so they are exact transposes of each other.

use super::grid::{Boundary, Grid2D, Lattice};
use super::wavefield::Wavefield;
use crate::error::SolverError;

/// Ricker wavelet, truncated where it falls below 1e-12 of its peak.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Ricker {
    pub f0: f64,
    pub t0: f64,
    pub amplitude: f64,
}

impl Ricker {
    /// Delay that puts the 1e-12 truncation edge exactly at t = 0.
    pub fn with_default_delay(f0: f64, amplitude: f64) -> Self {
        Ricker {
            f0,
            t0: Self::half_support(f0),
            amplitude,
        }
    }

    /// Half-width of the truncated support.
    pub fn half_support(f0: f64) -> f64 {
        1.8 / f0
    }

    pub fn eval(&self, t: f64) -> f64 {
        let u = t - self.t0;
        if u.abs() > Self::half_support(self.f0) {
            return 0.0;
        }
        let x = (std::f64::consts::PI * self.f0 * u).powi(2);
        self.amplitude * (1.0 - 2.0 * x) * (-x).exp()
    }

    /// Time after which the wavelet is identically zero.
    pub fn end_time(&self) -> f64 {
        self.t0 + Self::half_support(self.f0)
    }
}

/// What the source forces. Stress-rate entries are the strain-rate vector
/// g = C^{-1} f_tau, fixed at load time, so sources do not couple to
/// inverted parameters.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum SourceChannel {
    ForceX,
    ForceZ,
    StressRate { g11: f64, g33: f64, g13: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SourceSpec {
    pub x: f64,
    pub z: f64,
    pub wavelet: Ricker,
    pub channel: SourceChannel,
}

/// Bilinear stamp: four node indices and weights on one lattice.
#[derive(Debug, Clone, Copy)]
pub struct Stamp {
    pub idx: [usize; 4],
    pub w: [f64; 4],
}

impl Stamp {
    pub fn spread(&self, field: &mut [f64], amp: f64) {
        for (i, w) in self.idx.iter().zip(&self.w) {
            field[*i] += w * amp;
        }
    }

    pub fn sample(&self, field: &[f64]) -> f64 {
        self.idx
            .iter()
            .zip(&self.w)
            .map(|(i, w)| w * field[*i])
            .sum()
    }
}

/// Build the bilinear stamp of physical position (x, z) on `lattice`.
pub fn bilinear_stamp(
    grid: &Grid2D,
    boundary: &Boundary,
    lattice: Lattice,
    x: f64,
    z: f64,
) -> Result<Stamp, SolverError> {
    grid.check_interior(boundary, x, z)?;
    let (fx, fz) = grid.fractional_index(lattice, x, z);
    let periodic = boundary.is_periodic();
    let (nx, nz) = (grid.nx, grid.nz);
    let i0f = fx.floor();
    let j0f = fz.floor();
    let ax = fx - i0f;
    let az = fz - j0f;
    let wrap = |i: isize, n: usize| -> Result<usize, SolverError> {
        if periodic {
            Ok(i.rem_euclid(n as isize) as usize)
        } else if i >= 0 && (i as usize) < n {
            Ok(i as usize)
        } else {
            Err(SolverError::OutOfDomain { x, z })
        }
    };
    let i0 = wrap(i0f as isize, nx)?;
    let i1 = wrap(i0f as isize + 1, nx)?;
    let j0 = wrap(j0f as isize, nz)?;
    let j1 = wrap(j0f as isize + 1, nz)?;
    Ok(Stamp {
        idx: [
            i0 + nx * j0,
            i1 + nx * j0,
            i0 + nx * j1,
            i1 + nx * j1,
        ],
        w: [
            (1.0 - ax) * (1.0 - az),
            ax * (1.0 - az),
            (1.0 - ax) * az,
            ax * az,
        ],
    })
}

/// Source with its stamps resolved against a concrete grid.
#[derive(Debug, Clone)]
pub struct PreparedSource {
    pub spec: SourceSpec,
    face: Stamp,
    center: Stamp,
    corner: Stamp,
}

impl PreparedSource {
    pub fn prepare(
        spec: SourceSpec,
        grid: &Grid2D,
        boundary: &Boundary,
    ) -> Result<Self, SolverError> {
        let face_lat = match spec.channel {
            SourceChannel::ForceX => Lattice::XFace,
            SourceChannel::ForceZ => Lattice::ZFace,
            SourceChannel::StressRate { .. } => Lattice::Center,
        };
        Ok(PreparedSource {
            spec,
            face: bilinear_stamp(grid, boundary, face_lat, spec.x, spec.z)?,
            center: bilinear_stamp(grid, boundary, Lattice::Center, spec.x, spec.z)?,
            corner: bilinear_stamp(grid, boundary, Lattice::Corner, spec.x, spec.z)?,
        })
    }

    /// Add the raw source (pre material multiply) into a flux state.
    pub fn inject_flux(&self, flux: &mut Wavefield, t: f64) {
        let amp = self.spec.wavelet.eval(t);
        if amp == 0.0 {
            return;
        }
        match self.spec.channel {
            SourceChannel::ForceX => self.face.spread(&mut flux.v1, amp),
            SourceChannel::ForceZ => self.face.spread(&mut flux.v3, amp),
            SourceChannel::StressRate { g11, g33, g13 } => {
                self.face.spread(&mut flux.t11, amp * g11);
                self.face.spread(&mut flux.t33, amp * g33);
                self.corner.spread(&mut flux.t13, amp * g13);
            }
        }
    }

    /// Latest time at which this source is active.
    pub fn end_time(&self) -> f64 {
        self.spec.wavelet.end_time()
    }

    #[allow(dead_code)]
    fn center_stamp(&self) -> &Stamp {
        &self.center
    }
}

/// Receiver definition: position plus a component mask over the full
/// state (true = measured).
#[derive(Debug, Clone, PartialEq)]
pub struct ReceiverSpec {
    pub x: f64,
    pub z: f64,
    pub mask: Vec<bool>,
}

/// Receiver with per-lattice stamps resolved.
#[derive(Debug, Clone)]
pub struct PreparedReceiver {
    pub spec: ReceiverSpec,
    center: Stamp,
    xface: Stamp,
    zface: Stamp,
    corner: Stamp,
}

impl PreparedReceiver {
    pub fn prepare(
        spec: ReceiverSpec,
        grid: &Grid2D,
        boundary: &Boundary,
    ) -> Result<Self, SolverError> {
        Ok(PreparedReceiver {
            center: bilinear_stamp(grid, boundary, Lattice::Center, spec.x, spec.z)?,
            xface: bilinear_stamp(grid, boundary, Lattice::XFace, spec.x, spec.z)?,
            zface: bilinear_stamp(grid, boundary, Lattice::ZFace, spec.x, spec.z)?,
            corner: bilinear_stamp(grid, boundary, Lattice::Corner, spec.x, spec.z)?,
            spec,
        })
    }

    fn stamp_for(&self, lattice: Lattice) -> &Stamp {
        match lattice {
            Lattice::Center => &self.center,
            Lattice::XFace => &self.xface,
            Lattice::ZFace => &self.zface,
            Lattice::Corner => &self.corner,
        }
    }

    /// Sample every component; masked-out entries are exact zeros.
    pub fn sample(&self, w: &Wavefield, out: &mut [f64]) {
        for (c, o) in out.iter_mut().enumerate() {
            *o = if self.spec.mask[c] {
                self.stamp_for(w.lattice_of(c)).sample(w.component(c))
            } else {
                0.0
            };
        }
    }

    /// Transpose of `sample`: spread per-component values into the state.
    pub fn spread(&self, w: &mut Wavefield, vals: &[f64]) {
        for (c, v) in vals.iter().enumerate() {
            if self.spec.mask[c] && *v != 0.0 {
                let stamp = *self.stamp_for(w.lattice_of(c));
                stamp.spread(w.component_mut(c), *v);
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn ricker_truncation_and_peak() {
        let w = Ricker::with_default_delay(25.0, 2.0);
        assert_eq!(w.eval(-1e-9), 0.0);
        assert_eq!(w.eval(w.end_time() + 1e-9), 0.0);
        assert_relative_eq!(w.eval(w.t0), 2.0);
        // truncation level
        let edge = w.eval(w.t0 + Ricker::half_support(25.0) - 1e-12);
        assert!(edge.abs() <= 1e-11 * 2.0);
    }

    #[test]
    fn stamp_on_node_is_identity() {
        let grid = Grid2D::new(10, 10, 2.0, 3.0, 0.0, 0.0);
        let b = Boundary::Periodic;
        // XFace node (3 + 1/2, 4)
        let (x, z) = grid.position(Lattice::XFace, 3, 4);
        let s = bilinear_stamp(&grid, &b, Lattice::XFace, x, z).unwrap();
        let total: f64 = s.w.iter().sum();
        assert_relative_eq!(total, 1.0, max_relative = 1e-14);
        assert_relative_eq!(s.w[0], 1.0, max_relative = 1e-12);
        assert_eq!(s.idx[0], 3 + 10 * 4);
    }

    #[test]
    fn spread_then_sample_reproduces_weight_norm() {
        let grid = Grid2D::new(10, 10, 1.0, 1.0, 0.0, 0.0);
        let b = Boundary::Periodic;
        let s = bilinear_stamp(&grid, &b, Lattice::Center, 3.3, 4.7).unwrap();
        let mut field = vec![0.0; 100];
        s.spread(&mut field, 2.0);
        let got = s.sample(&field);
        let norm2: f64 = s.w.iter().map(|w| w * w).sum();
        assert_relative_eq!(got, 2.0 * norm2, max_relative = 1e-14);
    }

    #[test]
    fn out_of_domain_rejected_for_sponge() {
        let grid = Grid2D::new(32, 32, 1.0, 1.0, 0.0, 0.0);
        let b = Boundary::Sponge {
            width: 8,
            strength: 100.0,
        };
        assert!(bilinear_stamp(&grid, &b, Lattice::Center, 2.0, 16.0).is_err());
        assert!(bilinear_stamp(&grid, &b, Lattice::Center, 16.0, 16.0).is_ok());
    }

    #[test]
    fn receiver_masks_yield_exact_zeros() {
        let grid = Grid2D::new(10, 10, 1.0, 1.0, 0.0, 0.0);
        let b = Boundary::Periodic;
        let mut w = Wavefield::zeros(10, 10, 1, 1);
        w.v1.fill(1.0);
        w.v3.fill(2.0);
        let mut mask = vec![false; w.n_components()];
        mask[0] = true; // v1 only
        let rec = PreparedReceiver::prepare(
            ReceiverSpec {
                x: 4.5,
                z: 5.5,
                mask,
            },
            &grid,
            &b,
        )
        .unwrap();
        let mut out = vec![0.0; w.n_components()];
        rec.sample(&w, &mut out);
        assert_relative_eq!(out[0], 1.0, max_relative = 1e-14);
        assert!(out[1..].iter().all(|&v| v == 0.0));
    }
}
