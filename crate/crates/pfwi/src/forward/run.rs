//! Forward simulation driver: time loop, receiver recording, snapshot
//! capture, and energy bookkeeping.

use super::grid::{Boundary, Grid2D};
use super::operators::{assemble_system, cfl_dt, max_speed, SystemOperators};
use super::source::{PreparedReceiver, PreparedSource, ReceiverSpec, SourceSpec};
use super::step::{step_forward, Workspace};
use super::wavefield::Wavefield;
use crate::energy::EnergyLedger;
use crate::error::SolverError;
use crate::kernel_fit::PoleResidueSet;
use crate::material::MaterialField;

/// Time-step selection.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum DtSpec {
    Fixed(f64),
    /// CFL safety factor in (0, 1].
    Cfl(f64),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SimConfig {
    pub t_final: f64,
    pub dt: DtSpec,
    pub boundary: Boundary,
    /// Store the full state every this many steps (0 = never). The state
    /// at step 0 is always included when enabled.
    pub snapshot_cadence: usize,
    /// Record the energy ledger every this many steps (0 = never).
    pub energy_cadence: usize,
}

impl SimConfig {
    pub fn resolve_dt(&self, c_max: f64, grid: &Grid2D) -> (f64, usize) {
        let dt = match self.dt {
            DtSpec::Fixed(dt) => dt,
            DtSpec::Cfl(safety) => cfl_dt(c_max, grid, safety),
        };
        let n_steps = (self.t_final / dt).ceil() as usize;
        (dt, n_steps.max(1))
    }
}

/// Receiver traces: per receiver, component-major samples
/// (`data[r][c * n_samples + i]`), masked components stored as zeros.
#[derive(Debug, Clone, PartialEq)]
pub struct SeismogramSet {
    pub dt: f64,
    pub n_samples: usize,
    pub n_components: usize,
    pub receivers: Vec<ReceiverSpec>,
    pub data: Vec<Vec<f64>>,
}

impl SeismogramSet {
    pub fn zeros(receivers: Vec<ReceiverSpec>, n_components: usize, n_samples: usize, dt: f64) -> Self {
        let data = receivers
            .iter()
            .map(|_| vec![0.0; n_components * n_samples])
            .collect();
        SeismogramSet {
            dt,
            n_samples,
            n_components,
            receivers,
            data,
        }
    }

    pub fn n_receivers(&self) -> usize {
        self.receivers.len()
    }

    pub fn trace(&self, r: usize, c: usize) -> &[f64] {
        &self.data[r][c * self.n_samples..(c + 1) * self.n_samples]
    }

    /// Identical geometry, sampling, and masks.
    pub fn geometry_matches(&self, other: &SeismogramSet) -> bool {
        self.dt == other.dt
            && self.n_samples == other.n_samples
            && self.n_components == other.n_components
            && self.receivers == other.receivers
    }
}

/// Dense state history at a fixed cadence; index 0 is the initial state.
pub struct SnapshotStore {
    pub cadence: usize,
    pub dt: f64,
    pub states: Vec<Wavefield>,
}

pub struct ForwardOutput {
    pub seis: SeismogramSet,
    pub snapshots: SnapshotStore,
    pub ledger: EnergyLedger,
    pub dt: f64,
    pub n_steps: usize,
}

fn instability_of(w: &Wavefield) -> Option<SolverError> {
    w.find_non_finite().map(|(c, ix, iz)| SolverError::Instability {
        t: w.t,
        ix,
        iz,
        field: match c {
            0 => "v1",
            1 => "v3",
            2 => "q1",
            3 => "q3",
            4 => "tau11",
            5 => "tau33",
            6 => "tau13",
            7 => "neg_p",
            _ => "theta",
        },
    })
}

/// Run the forward problem from a zero initial state.
pub fn run_forward(
    mf: &MaterialField,
    prs1: &PoleResidueSet,
    prs3: &PoleResidueSet,
    grid: &Grid2D,
    sources: &[SourceSpec],
    receivers: &[ReceiverSpec],
    cfg: &SimConfig,
) -> Result<ForwardOutput, SolverError> {
    let (dt, n_steps) = cfg.resolve_dt(max_speed(mf), grid);
    let ops = assemble_system(mf, prs1, prs3, grid, cfg.boundary, dt)?;
    let prepared_sources = sources
        .iter()
        .map(|s| PreparedSource::prepare(*s, grid, &cfg.boundary))
        .collect::<Result<Vec<_>, _>>()?;
    let prepared_receivers = receivers
        .iter()
        .map(|r| PreparedReceiver::prepare(r.clone(), grid, &cfg.boundary))
        .collect::<Result<Vec<_>, _>>()?;
    let mut w = Wavefield::zeros(grid.nx, grid.nz, ops.n1(), ops.n3());
    run_with_ops(
        &ops,
        &mut w,
        &prepared_sources,
        &prepared_receivers,
        n_steps,
        cfg.snapshot_cadence,
        cfg.energy_cadence,
    )
}

/// Run `n_steps` steps with pre-assembled operators, mutating `w` in
/// place (callers may seed a nonzero initial state).
pub fn run_with_ops(
    ops: &SystemOperators,
    w: &mut Wavefield,
    sources: &[PreparedSource],
    receivers: &[PreparedReceiver],
    n_steps: usize,
    snapshot_cadence: usize,
    energy_cadence: usize,
) -> Result<ForwardOutput, SolverError> {
    let dt = ops.dt;
    let n_comp = w.n_components();
    let n_samples = n_steps + 1;
    let mut seis = SeismogramSet::zeros(
        receivers.iter().map(|r| r.spec.clone()).collect(),
        n_comp,
        n_samples,
        dt,
    );
    let mut snapshots = SnapshotStore {
        cadence: snapshot_cadence,
        dt,
        states: Vec::new(),
    };
    let mut ledger = EnergyLedger::default();
    let mut ws = Workspace::new(ops);
    let mut sample_buf = vec![0.0; n_comp];

    let record = |seis: &mut SeismogramSet, w: &Wavefield, i: usize, buf: &mut [f64]| {
        for (r, rec) in receivers.iter().enumerate() {
            rec.sample(w, buf);
            for (c, v) in buf.iter().enumerate() {
                seis.data[r][c * n_samples + i] = *v;
            }
        }
    };

    record(&mut seis, w, 0, &mut sample_buf);
    if snapshot_cadence > 0 {
        snapshots.states.push(w.clone());
    }
    if energy_cadence > 0 {
        ledger.record(w, ops);
    }

    for step in 1..=n_steps {
        step_forward(ops, w, sources, &mut ws);
        record(&mut seis, w, step, &mut sample_buf);
        if snapshot_cadence > 0 && step % snapshot_cadence == 0 {
            snapshots.states.push(w.clone());
        }
        if energy_cadence > 0 && step % energy_cadence == 0 {
            ledger.record(w, ops);
        }
        if step % 32 == 0 {
            if let Some(err) = instability_of(w) {
                return Err(err);
            }
        }
    }
    if let Some(err) = instability_of(w) {
        return Err(err);
    }

    Ok(ForwardOutput {
        seis,
        snapshots,
        ledger,
        dt,
        n_steps,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::forward::source::{Ricker, SourceChannel};
    use crate::material::{Axis, PoroelasticParams};

    fn base() -> (MaterialField, PoleResidueSet, PoleResidueSet, Grid2D) {
        let p = PoroelasticParams::reference_sandstone();
        let mf = MaterialField::homogeneous(24, 24, p).unwrap();
        let grid = Grid2D::new(24, 24, 2.0, 2.0, 0.0, 0.0);
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
        (mf, prs1, prs3, grid)
    }

    fn receiver(x: f64, z: f64, n_comp: usize) -> ReceiverSpec {
        let mut mask = vec![false; n_comp];
        mask[0] = true;
        mask[1] = true;
        ReceiverSpec { x, z, mask }
    }

    #[test]
    fn zero_source_gives_zero_traces() {
        let (mf, p1, p3, grid) = base();
        let cfg = SimConfig {
            t_final: 5e-3,
            dt: DtSpec::Cfl(0.8),
            boundary: Boundary::Periodic,
            snapshot_cadence: 0,
            energy_cadence: 0,
        };
        let out = run_forward(&mf, &p1, &p3, &grid, &[], &[receiver(24.0, 24.0, 10)], &cfg).unwrap();
        assert!(out.seis.data[0].iter().all(|&v| v == 0.0));
    }

    #[test]
    fn superposition_of_sources_is_linear() {
        let (mf, p1, p3, grid) = base();
        let cfg = SimConfig {
            t_final: 4e-3,
            dt: DtSpec::Cfl(0.8),
            boundary: Boundary::Periodic,
            snapshot_cadence: 0,
            energy_cadence: 0,
        };
        let rec = vec![receiver(30.0, 30.0, 10)];
        let s1 = SourceSpec {
            x: 14.0,
            z: 16.0,
            wavelet: Ricker::with_default_delay(400.0, 1.0e3),
            channel: SourceChannel::ForceZ,
        };
        let s2 = SourceSpec {
            x: 34.0,
            z: 20.0,
            wavelet: Ricker::with_default_delay(300.0, -2.0e3),
            channel: SourceChannel::ForceX,
        };
        let a = run_forward(&mf, &p1, &p3, &grid, &[s1], &rec, &cfg).unwrap();
        let b = run_forward(&mf, &p1, &p3, &grid, &[s2], &rec, &cfg).unwrap();
        let ab = run_forward(&mf, &p1, &p3, &grid, &[s1, s2], &rec, &cfg).unwrap();
        let scale = ab.seis.data[0]
            .iter()
            .fold(0.0f64, |m, v| m.max(v.abs()));
        for i in 0..ab.seis.data[0].len() {
            let want = a.seis.data[0][i] + b.seis.data[0][i];
            assert!(
                (ab.seis.data[0][i] - want).abs() <= 1e-12 * scale,
                "superposition violated at {i}"
            );
        }
    }
}
