//! Staggered grid geometry.
//!
//! Cell (ix, iz) owns four sub-cell positions: the center carries the
//! normal stresses and pressure, the x-face (ix+1/2, iz) the x velocities
//! and Theta^1 fields, the z-face (ix, iz+1/2) the z velocities and
//! Theta^3 fields, and the corner (ix+1/2, iz+1/2) the shear stress.

use crate::error::SolverError;

/// Sub-cell position family of a field.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Lattice {
    Center,
    XFace,
    ZFace,
    Corner,
}

impl Lattice {
    /// Fractional (x, z) offset of this lattice within a cell.
    pub fn offset(self) -> (f64, f64) {
        match self {
            Lattice::Center => (0.0, 0.0),
            Lattice::XFace => (0.5, 0.0),
            Lattice::ZFace => (0.0, 0.5),
            Lattice::Corner => (0.5, 0.5),
        }
    }
}

/// Domain truncation.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Boundary {
    /// Wrap-around; used for conservation tests.
    Periodic,
    /// Zero-padded stencils plus a cosine-taper damping layer of `width`
    /// cells; `strength` is the peak damping rate [1/s].
    Sponge { width: usize, strength: f64 },
}

impl Boundary {
    pub fn is_periodic(&self) -> bool {
        matches!(self, Boundary::Periodic)
    }
}

/// Uniform 2D cell grid.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Grid2D {
    pub nx: usize,
    pub nz: usize,
    pub dx: f64,
    pub dz: f64,
    pub x0: f64,
    pub z0: f64,
}

impl Grid2D {
    pub fn new(nx: usize, nz: usize, dx: f64, dz: f64, x0: f64, z0: f64) -> Self {
        assert!(nx >= 8 && nz >= 8, "grid must be at least 8x8 cells");
        assert!(dx > 0.0 && dz > 0.0);
        Grid2D {
            nx,
            nz,
            dx,
            dz,
            x0,
            z0,
        }
    }

    pub fn n_cells(&self) -> usize {
        self.nx * self.nz
    }

    pub fn cell_area(&self) -> f64 {
        self.dx * self.dz
    }

    /// Physical position of lattice node (ix, iz).
    pub fn position(&self, lattice: Lattice, ix: usize, iz: usize) -> (f64, f64) {
        let (ox, oz) = lattice.offset();
        (
            self.x0 + (ix as f64 + ox) * self.dx,
            self.z0 + (iz as f64 + oz) * self.dz,
        )
    }

    /// Fractional lattice index of a physical position.
    pub fn fractional_index(&self, lattice: Lattice, x: f64, z: f64) -> (f64, f64) {
        let (ox, oz) = lattice.offset();
        ((x - self.x0) / self.dx - ox, (z - self.z0) / self.dz - oz)
    }

    /// Check that a source/receiver position sits inside the usable
    /// interior: for sponge boundaries that excludes the damping layer
    /// plus a stencil margin.
    pub fn check_interior(&self, boundary: &Boundary, x: f64, z: f64) -> Result<(), SolverError> {
        let margin = match boundary {
            Boundary::Periodic => 0.0,
            Boundary::Sponge { width, .. } => (*width + 2) as f64,
        };
        let fx = (x - self.x0) / self.dx;
        let fz = (z - self.z0) / self.dz;
        let ok = fx >= margin
            && fx <= self.nx as f64 - 1.0 - margin
            && fz >= margin
            && fz <= self.nz as f64 - 1.0 - margin;
        if ok {
            Ok(())
        } else {
            Err(SolverError::OutOfDomain { x, z })
        }
    }
}
