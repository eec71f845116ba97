//! Time-domain full waveform inversion for dissipative and dispersive
//! poroelastic media.
//!
//! The toolkit covers the full chain: certified pole-residue fitting of the
//! dynamic-tortuosity memory kernel, the augmented Biot forward solver on a
//! staggered 2D grid, energy diagnostics, the exact discrete adjoint, and
//! gradient-based material inversion.

pub mod adjoint;
pub mod cli_io;
pub mod energy;
pub mod error;
pub mod forward;
pub mod hp;
pub mod inversion;
pub mod kernel_fit;
pub mod material;
pub mod memory;
pub mod parallel;

pub use error::Error;
