//! Flat key-value configuration with `[section]` headers, `#` comments,
//! UTF-8 text. Unknown keys are rejected; every invariant violation is
//! reported, not just the first.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use crate::error::IoError;
use crate::forward::{
    Boundary, DtSpec, Grid2D, Ricker, SimConfig, SourceChannel, SourceSpec,
};
use crate::inversion::{InvertOptions, ParamName};
use crate::kernel_fit::{FitConfig, Spacing};
use crate::material::{ElasticStiffness, PoroelasticParams};

#[derive(Debug, Clone)]
struct Entry {
    value: String,
    line: usize,
    used: bool,
}

#[derive(Debug, Clone)]
pub struct RawConfig {
    sections: BTreeMap<String, BTreeMap<String, Entry>>,
}

pub fn parse_raw(text: &str, path: &str) -> Result<RawConfig, IoError> {
    let mut sections: BTreeMap<String, BTreeMap<String, Entry>> = BTreeMap::new();
    let mut current = String::from("");
    for (i, raw_line) in text.lines().enumerate() {
        let line_no = i + 1;
        let line = match raw_line.find('#') {
            Some(p) => &raw_line[..p],
            None => raw_line,
        }
        .trim();
        if line.is_empty() {
            continue;
        }
        if let Some(name) = line.strip_prefix('[') {
            let name = name.strip_suffix(']').ok_or_else(|| IoError::Parse {
                path: path.into(),
                line: line_no,
                msg: "unterminated section header".into(),
            })?;
            current = name.trim().to_string();
            sections.entry(current.clone()).or_default();
            continue;
        }
        let (key, value) = line.split_once('=').ok_or_else(|| IoError::Parse {
            path: path.into(),
            line: line_no,
            msg: format!("expected `key = value`, got {line:?}"),
        })?;
        let key = key.trim().to_string();
        if key.is_empty() {
            return Err(IoError::Parse {
                path: path.into(),
                line: line_no,
                msg: "empty key".into(),
            });
        }
        let prev = sections.entry(current.clone()).or_default().insert(
            key.clone(),
            Entry {
                value: value.trim().to_string(),
                line: line_no,
                used: false,
            },
        );
        if prev.is_some() {
            return Err(IoError::Parse {
                path: path.into(),
                line: line_no,
                msg: format!("duplicate key {key:?} in section [{current}]"),
            });
        }
    }
    Ok(RawConfig { sections })
}

struct Scope<'a> {
    raw: &'a mut RawConfig,
    section: String,
    errors: &'a mut Vec<String>,
}

impl Scope<'_> {
    fn take(&mut self, key: &str) -> Option<String> {
        self.raw
            .sections
            .get_mut(&self.section)
            .and_then(|s| s.get_mut(key))
            .map(|e| {
                e.used = true;
                e.value.clone()
            })
    }

    fn f64(&mut self, key: &str, default: Option<f64>) -> f64 {
        match self.take(key) {
            Some(v) => v.parse::<f64>().unwrap_or_else(|_| {
                self.errors
                    .push(format!("[{}] {key}: not a number: {v:?}", self.section));
                f64::NAN
            }),
            None => default.unwrap_or_else(|| {
                self.errors
                    .push(format!("[{}] missing required key {key}", self.section));
                f64::NAN
            }),
        }
    }

    fn usize(&mut self, key: &str, default: Option<usize>) -> usize {
        match self.take(key) {
            Some(v) => v.parse::<usize>().unwrap_or_else(|_| {
                self.errors
                    .push(format!("[{}] {key}: not a non-negative integer: {v:?}", self.section));
                0
            }),
            None => default.unwrap_or_else(|| {
                self.errors
                    .push(format!("[{}] missing required key {key}", self.section));
                0
            }),
        }
    }

    fn string(&mut self, key: &str, default: Option<&str>) -> String {
        match self.take(key) {
            Some(v) => v,
            None => default.map(str::to_string).unwrap_or_else(|| {
                self.errors
                    .push(format!("[{}] missing required key {key}", self.section));
                String::new()
            }),
        }
    }
}

/// Receiver request before the state dimension is known.
#[derive(Debug, Clone, PartialEq)]
pub struct ReceiverRequest {
    pub x: f64,
    pub z: f64,
    /// Component names: v1 v3 q1 q3 tau11 tau33 tau13 p theta1_k theta3_k.
    pub components: Vec<String>,
}

impl ReceiverRequest {
    /// Check component-name syntax without knowing the memory dimension.
    pub fn validate_names(&self) -> Result<(), String> {
        for name in &self.components {
            let known = matches!(
                name.as_str(),
                "v1" | "v3" | "q1" | "q3" | "tau11" | "tau33" | "tau13" | "p" | "neg_p"
            ) || name
                .strip_prefix("theta1_")
                .and_then(|s| s.parse::<usize>().ok())
                .is_some_and(|k| k >= 1)
                || name
                    .strip_prefix("theta3_")
                    .and_then(|s| s.parse::<usize>().ok())
                    .is_some_and(|k| k >= 1);
            if !known {
                return Err(format!("unknown component {name:?}"));
            }
        }
        Ok(())
    }

    /// Resolve the component mask for a state with n1 + n3 memory fields.
    pub fn mask(&self, n1: usize, n3: usize) -> Result<Vec<bool>, String> {
        let n_comp = 8 + n1 + n3;
        let mut mask = vec![false; n_comp];
        for name in &self.components {
            let idx = match name.as_str() {
                "v1" => 0,
                "v3" => 1,
                "q1" => 2,
                "q3" => 3,
                "tau11" => 4,
                "tau33" => 5,
                "tau13" => 6,
                "p" | "neg_p" => 7,
                other => {
                    if let Some(k) = other
                        .strip_prefix("theta1_")
                        .and_then(|s| s.parse::<usize>().ok())
                    {
                        if k >= 1 && k <= n1 {
                            7 + k
                        } else {
                            return Err(format!("component {other} out of range (N1={n1})"));
                        }
                    } else if let Some(k) = other
                        .strip_prefix("theta3_")
                        .and_then(|s| s.parse::<usize>().ok())
                    {
                        if k >= 1 && k <= n3 {
                            7 + n1 + k
                        } else {
                            return Err(format!("component {other} out of range (N3={n3})"));
                        }
                    } else {
                        return Err(format!("unknown component {other:?}"));
                    }
                }
            };
            mask[idx] = true;
        }
        Ok(mask)
    }
}

/// Fully parsed and validated run configuration.
#[derive(Debug, Clone)]
pub struct RunConfig {
    pub grid: Grid2D,
    pub material: PoroelasticParams,
    pub material_file: Option<PathBuf>,
    pub fit: FitConfig,
    pub sim: SimConfig,
    pub sources: Vec<SourceSpec>,
    pub receivers: Vec<ReceiverRequest>,
    pub inversion_params: Vec<ParamName>,
    pub bound_factor: f64,
    pub invert_opts: InvertOptions,
    pub n_probes: usize,
    pub out_dir: PathBuf,
    pub observed: Option<PathBuf>,
    pub seed: u64,
}

impl RunConfig {
    /// Render the effective configuration (defaults filled) for echoing.
    pub fn effective_text(&self) -> String {
        let mut s = String::new();
        let g = &self.grid;
        s += &format!(
            "[grid] nx={} nz={} dx={} dz={} x0={} z0={}\n",
            g.nx, g.nz, g.dx, g.dz, g.x0, g.z0
        );
        let m = &self.material;
        s += &format!(
            "[material] phi={} rho_s={} rho_f={} eta={} k_s={} k_f={} kappa_1={} kappa_3={} alpha_inf_1={} alpha_inf_3={} pride_1={} pride_3={}\n",
            m.phi, m.rho_s, m.rho_f, m.eta, m.k_s, m.k_f, m.kappa_1, m.kappa_3,
            m.alpha_inf_1, m.alpha_inf_3, m.pride_1, m.pride_3
        );
        let st = &m.stiffness;
        s += &format!(
            "[material] c11={} c12={} c13={} c33={} c55={}\n",
            st.c11, st.c12, st.c13, st.c33, st.c55
        );
        s += &format!(
            "[fit] m_nodes={} spacing={} omega_min={} omega_max={} precision_bits={} drop_tol={}\n",
            self.fit.m_nodes,
            match self.fit.spacing {
                Spacing::Log => "log",
                Spacing::Linear => "linear",
            },
            self.fit.omega_min,
            self.fit.omega_max,
            self.fit.precision_bits,
            self.fit.drop_tol
        );
        s += &format!(
            "[sim] t_final={} dt={:?} boundary={:?} snapshot_cadence={} energy_cadence={}\n",
            self.sim.t_final, self.sim.dt, self.sim.boundary, self.sim.snapshot_cadence,
            self.sim.energy_cadence
        );
        for (i, src) in self.sources.iter().enumerate() {
            s += &format!(
                "[source.{}] x={} z={} f0={} t0={} amplitude={} channel={:?}\n",
                i + 1,
                src.x,
                src.z,
                src.wavelet.f0,
                src.wavelet.t0,
                src.wavelet.amplitude,
                src.channel
            );
        }
        for (i, r) in self.receivers.iter().enumerate() {
            s += &format!(
                "[receiver.{}] x={} z={} components={}\n",
                i + 1,
                r.x,
                r.z,
                r.components.join(" ")
            );
        }
        s += &format!(
            "[inversion] params={} bound_factor={} max_iters={} n_probes={}\n",
            self.inversion_params
                .iter()
                .map(|p| p.key())
                .collect::<Vec<_>>()
                .join(" "),
            self.bound_factor,
            self.invert_opts.max_iters,
            self.n_probes
        );
        s += &format!(
            "[paths] out_dir={} observed={}\n[rng] seed={}\n",
            self.out_dir.display(),
            self.observed
                .as_ref()
                .map(|p| p.display().to_string())
                .unwrap_or_else(|| "-".into()),
            self.seed
        );
        s
    }
}

/// Load and validate a configuration file.
pub fn load_config(path: &Path) -> Result<RunConfig, IoError> {
    let text = std::fs::read_to_string(path).map_err(|e| IoError::Io {
        path: path.display().to_string(),
        source: e,
    })?;
    load_config_str(&text, &path.display().to_string())
}

pub fn load_config_str(text: &str, path: &str) -> Result<RunConfig, IoError> {
    let mut raw = parse_raw(text, path)?;
    let mut errors: Vec<String> = Vec::new();

    macro_rules! scope {
        ($name:expr) => {
            Scope {
                raw: &mut raw,
                section: $name.to_string(),
                errors: &mut errors,
            }
        };
    }

    // [grid]
    let (nx, nz, dx, dz, x0, z0) = {
        let mut s = scope!("grid");
        (
            s.usize("nx", None),
            s.usize("nz", None),
            s.f64("dx", None),
            s.f64("dz", None),
            s.f64("x0", Some(0.0)),
            s.f64("z0", Some(0.0)),
        )
    };
    if nx < 8 || nz < 8 {
        errors.push(format!("[grid] nx and nz must be >= 8 (got {nx} x {nz})"));
    }
    if !(dx > 0.0 && dz > 0.0) {
        errors.push("[grid] dx and dz must be positive".into());
    }

    // [material]
    let material = {
        let mut s = scope!("material");
        PoroelasticParams {
            phi: s.f64("phi", None),
            rho_s: s.f64("rho_s", None),
            rho_f: s.f64("rho_f", None),
            eta: s.f64("eta", None),
            k_s: s.f64("k_s", None),
            k_f: s.f64("k_f", None),
            kappa_1: s.f64("kappa_1", None),
            kappa_3: s.f64("kappa_3", None),
            alpha_inf_1: s.f64("alpha_inf_1", None),
            alpha_inf_3: s.f64("alpha_inf_3", None),
            pride_1: s.f64("pride_1", Some(0.5)),
            pride_3: s.f64("pride_3", Some(0.5)),
            stiffness: ElasticStiffness {
                c11: s.f64("c11", None),
                c12: s.f64("c12", None),
                c13: s.f64("c13", None),
                c33: s.f64("c33", None),
                c55: s.f64("c55", None),
            },
        }
    };
    if errors.is_empty() {
        if let Err(e) = crate::material::derive_coefficients(&material) {
            errors.push(format!("[material] {e}"));
        }
    }

    // [fit]
    let fit = {
        let mut s = scope!("fit");
        let spacing = match s.string("spacing", Some("log")).as_str() {
            "log" => Spacing::Log,
            "linear" => Spacing::Linear,
            other => {
                s.errors
                    .push(format!("[fit] spacing must be log|linear, got {other:?}"));
                Spacing::Log
            }
        };
        let d = FitConfig::default();
        FitConfig {
            m_nodes: s.usize("m_nodes", Some(d.m_nodes)),
            spacing,
            omega_min: s.f64("omega_min", Some(d.omega_min)),
            omega_max: s.f64("omega_max", Some(d.omega_max)),
            precision_bits: s.usize("precision_bits", Some(d.precision_bits)),
            drop_tol: s.f64("drop_tol", Some(d.drop_tol)),
        }
    };
    if fit.m_nodes == 0 {
        errors.push("[fit] m_nodes must be >= 1".into());
    }
    if !(fit.omega_min > 0.0 && fit.omega_max >= fit.omega_min) {
        errors.push("[fit] band must satisfy 0 < omega_min <= omega_max".into());
    }
    if fit.precision_bits < 64 {
        errors.push("[fit] precision_bits must be >= 64".into());
    }

    // [sim]
    let sim = {
        let mut s = scope!("sim");
        let t_final = s.f64("t_final", None);
        let dt = match (s.take("dt"), s.take("cfl")) {
            (Some(v), None) => match v.parse::<f64>() {
                Ok(x) if x > 0.0 => DtSpec::Fixed(x),
                _ => {
                    s.errors.push(format!("[sim] dt must be positive, got {v:?}"));
                    DtSpec::Cfl(0.8)
                }
            },
            (None, Some(v)) => match v.parse::<f64>() {
                Ok(x) if x > 0.0 && x <= 1.0 => DtSpec::Cfl(x),
                _ => {
                    s.errors
                        .push(format!("[sim] cfl must lie in (0, 1], got {v:?}"));
                    DtSpec::Cfl(0.8)
                }
            },
            (Some(_), Some(_)) => {
                s.errors.push("[sim] give either dt or cfl, not both".into());
                DtSpec::Cfl(0.8)
            }
            (None, None) => DtSpec::Cfl(0.8),
        };
        let boundary = match s.string("boundary", Some("sponge")).as_str() {
            "periodic" => Boundary::Periodic,
            "sponge" => Boundary::Sponge {
                width: s.usize("sponge_width", Some(20)),
                strength: s.f64("sponge_strength", Some(0.0)), // 0 = auto
            },
            other => {
                s.errors.push(format!(
                    "[sim] boundary must be sponge|periodic, got {other:?}"
                ));
                Boundary::Periodic
            }
        };
        SimConfig {
            t_final,
            dt,
            boundary,
            snapshot_cadence: s.usize("snapshot_cadence", Some(0)),
            energy_cadence: s.usize("energy_cadence", Some(0)),
        }
    };
    if !(sim.t_final > 0.0) {
        errors.push("[sim] t_final must be positive".into());
    }

    // [source.k]
    let source_sections: Vec<String> = raw
        .sections
        .keys()
        .filter(|k| k.starts_with("source."))
        .cloned()
        .collect();
    let mut sources = Vec::new();
    for name in source_sections {
        let mut s = scope!(&name);
        let x = s.f64("x", None);
        let z = s.f64("z", None);
        let f0 = s.f64("f0", None);
        let amplitude = s.f64("amplitude", Some(1.0));
        let delay = s.take("delay");
        let channel = match s.string("channel", Some("force_z")).as_str() {
            "force_x" => SourceChannel::ForceX,
            "force_z" => SourceChannel::ForceZ,
            "stress" => SourceChannel::StressRate {
                g11: s.f64("g11", Some(1.0)),
                g33: s.f64("g33", Some(1.0)),
                g13: s.f64("g13", Some(0.0)),
            },
            other => {
                s.errors.push(format!(
                    "[{name}] channel must be force_x|force_z|stress, got {other:?}"
                ));
                SourceChannel::ForceZ
            }
        };
        if !(f0 > 0.0) {
            errors.push(format!("[{name}] f0 must be positive"));
            continue;
        }
        let wavelet = match delay {
            None => Ricker::with_default_delay(f0, amplitude),
            Some(d) => match d.parse::<f64>() {
                Ok(t0) => Ricker {
                    f0,
                    t0,
                    amplitude,
                },
                Err(_) => {
                    errors.push(format!("[{name}] delay: not a number: {d:?}"));
                    continue;
                }
            },
        };
        sources.push(SourceSpec {
            x,
            z,
            wavelet,
            channel,
        });
    }

    // [receiver.k]
    let receiver_sections: Vec<String> = raw
        .sections
        .keys()
        .filter(|k| k.starts_with("receiver."))
        .cloned()
        .collect();
    let mut receivers = Vec::new();
    for name in receiver_sections {
        let mut s = scope!(&name);
        let x = s.f64("x", None);
        let z = s.f64("z", None);
        let comps = s.string("components", Some("v1 v3"));
        receivers.push(ReceiverRequest {
            x,
            z,
            components: comps.split_whitespace().map(str::to_string).collect(),
        });
    }
    // component names validated syntactically here; the exact theta
    // range is re-checked once the fit size is known
    for (i, r) in receivers.iter().enumerate() {
        if let Err(e) = r.validate_names() {
            errors.push(format!("[receiver.{}] {e}", i + 1));
        }
    }

    // [inversion]
    let (inversion_params, bound_factor, invert_opts, n_probes) = {
        let mut s = scope!("inversion");
        let names = s.string("params", Some("kappa_1"));
        let mut params = Vec::new();
        for n in names.split_whitespace() {
            match ParamName::parse(n) {
                Some(p) => params.push(p),
                None => s.errors.push(format!("[inversion] unknown parameter {n:?}")),
            }
        }
        let defaults = InvertOptions::default();
        let opts = InvertOptions {
            max_iters: s.usize("max_iters", Some(defaults.max_iters)),
            chi_rel_tol: s.f64("chi_rel_tol", Some(defaults.chi_rel_tol)),
            grad_tol: s.f64("grad_tol", Some(defaults.grad_tol)),
            armijo_c1: s.f64("armijo_c1", Some(defaults.armijo_c1)),
            backtrack: s.f64("backtrack", Some(defaults.backtrack)),
            max_line_search: s.usize("max_line_search", Some(defaults.max_line_search)),
        };
        (
            params,
            s.f64("bound_factor", Some(10.0)),
            opts,
            s.usize("n_probes", Some(5)),
        )
    };
    if !(bound_factor > 1.0) {
        errors.push("[inversion] bound_factor must exceed 1".into());
    }

    // [paths]
    let (out_dir, observed, material_file) = {
        let mut s = scope!("paths");
        (
            PathBuf::from(s.string("out_dir", Some("out"))),
            s.take("observed").map(PathBuf::from),
            s.take("material").map(PathBuf::from),
        )
    };

    // [rng]
    let seed = {
        let mut s = scope!("rng");
        s.usize("seed", Some(0)) as u64
    };

    // reject unknown keys and unknown sections
    let known_prefixes = [
        "grid",
        "material",
        "fit",
        "sim",
        "inversion",
        "paths",
        "rng",
    ];
    for (section, entries) in &raw.sections {
        let known = known_prefixes.contains(&section.as_str())
            || section.starts_with("source.")
            || section.starts_with("receiver.");
        if !known {
            errors.push(format!("unknown section [{section}]"));
            continue;
        }
        for (key, e) in entries {
            if !e.used {
                errors.push(format!(
                    "unknown key {key:?} in section [{section}] (line {})",
                    e.line
                ));
            }
        }
    }

    // positions inside the domain
    {
        let boundary = sim.boundary;
        if errors.is_empty() {
            let grid = Grid2D::new(nx, nz, dx, dz, x0, z0);
            for (i, s) in sources.iter().enumerate() {
                if grid.check_interior(&boundary, s.x, s.z).is_err() {
                    errors.push(format!(
                        "[source.{}] position ({}, {}) outside the usable interior",
                        i + 1,
                        s.x,
                        s.z
                    ));
                }
            }
            for (i, r) in receivers.iter().enumerate() {
                if grid.check_interior(&boundary, r.x, r.z).is_err() {
                    errors.push(format!(
                        "[receiver.{}] position ({}, {}) outside the usable interior",
                        i + 1,
                        r.x,
                        r.z
                    ));
                }
            }
        }
    }

    if !errors.is_empty() {
        return Err(IoError::Validation(errors));
    }
    Ok(RunConfig {
        grid: Grid2D::new(nx, nz, dx, dz, x0, z0),
        material,
        material_file,
        fit,
        sim,
        sources,
        receivers,
        inversion_params,
        bound_factor,
        invert_opts,
        n_probes,
        out_dir,
        observed,
        seed,
    })
}
