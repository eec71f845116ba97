//! 2D time-domain solver for the augmented Biot first-order system:
//! staggered-grid operator assembly, Strang-split stepping with exact
//! local exponentials, sources, receivers, and boundaries.

pub mod grid;
pub mod operators;
pub mod run;
pub mod source;
pub mod stencil;
pub mod step;
pub mod wavefield;

pub use grid::{Boundary, Grid2D, Lattice};
pub use operators::{
    assemble_system, cfl_dt, max_speed, plane_wave_speeds, MaterialView, PerturbedView,
    SystemOperators,
};
pub use run::{run_forward, run_with_ops, DtSpec, ForwardOutput, SeismogramSet, SimConfig, SnapshotStore};
pub use source::{
    bilinear_stamp, PreparedReceiver, PreparedSource, ReceiverSpec, Ricker, SourceChannel,
    SourceSpec, Stamp,
};
pub use step::{
    apply_b1, apply_n1inv, local_half, step_forward, step_transpose, zero_ring, Workspace,
};
pub use wavefield::{Wavefield, BASE_COMPONENTS};
