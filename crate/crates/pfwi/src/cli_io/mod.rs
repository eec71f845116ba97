//! Configuration, file formats, and text artifacts tying the pipeline
//! together.

pub mod config;
pub mod gridfile;
pub mod traces;

pub use config::{load_config, load_config_str, ReceiverRequest, RunConfig};
pub use gridfile::{
    material_from_grid_file, material_to_grid_file, read_grid_file, snapshot_to_grid_file,
    write_grid_file, GridFile, MATERIAL_FIELDS,
};
pub use traces::{read_traces, write_traces};

use std::path::Path;

use crate::energy::EnergyLedger;
use crate::error::IoError;
use crate::kernel_fit::PoleResidueSet;

/// C99-style hex-float rendering of an f64 (lossless).
pub fn hex_f64(v: f64) -> String {
    if v == 0.0 {
        return if v.is_sign_negative() {
            "-0x0p+0".into()
        } else {
            "0x0p+0".into()
        };
    }
    if !v.is_finite() {
        return format!("{v}");
    }
    let bits = v.to_bits();
    let sign = if bits >> 63 == 1 { "-" } else { "" };
    let exp_raw = ((bits >> 52) & 0x7ff) as i64;
    let frac = bits & ((1u64 << 52) - 1);
    if exp_raw == 0 {
        format!("{sign}0x0.{frac:013x}p-1022")
    } else {
        format!("{sign}0x1.{frac:013x}p{:+}", exp_raw - 1023)
    }
}

/// Parse the hex-float form emitted by [`hex_f64`].
pub fn parse_hex_f64(s: &str) -> Option<f64> {
    let (sign, rest) = match s.strip_prefix('-') {
        Some(r) => (-1.0, r),
        None => (1.0, s),
    };
    let rest = rest.strip_prefix("0x")?;
    let (mant, exp) = rest.split_once('p')?;
    let exp: i64 = exp.parse().ok()?;
    let (int_part, frac_part) = match mant.split_once('.') {
        Some((i, f)) => (i, f),
        None => (mant, ""),
    };
    let int_val = u64::from_str_radix(int_part, 16).ok()?;
    let mut value = int_val as f64;
    let mut scale = 1.0f64 / 16.0;
    for ch in frac_part.chars() {
        let d = ch.to_digit(16)? as f64;
        value += d * scale;
        scale /= 16.0;
    }
    Some(sign * value * 2f64.powi(exp as i32))
}

/// Write the kernel-fit text artifact: N, alpha_inf, a, then one
/// `(theta_k, r_k)` pair per line, each value in both decimal and
/// hex-float form.
pub fn write_kernel_artifact(
    path: &Path,
    sets: &[(&PoleResidueSet, f64)],
) -> Result<(), IoError> {
    let mut out = String::new();
    out += "# pfwi kernel fit v1\n";
    for (set, max_node_err) in sets {
        out += &format!(
            "axis {} N {} max_node_rel_err {:.3e}\n",
            set.axis.label(),
            set.len(),
            max_node_err
        );
        out += &format!(
            "alpha_inf {:.17e} {}\n",
            set.alpha_inf,
            hex_f64(set.alpha_inf)
        );
        out += &format!("a {:.17e} {}\n", set.a, hex_f64(set.a));
        for (th, r) in set.poles.iter().zip(&set.residues) {
            out += &format!(
                "pole {:.17e} {} residue {:.17e} {}\n",
                th,
                hex_f64(*th),
                r,
                hex_f64(*r)
            );
        }
    }
    std::fs::write(path, out).map_err(|e| IoError::Io {
        path: path.display().to_string(),
        source: e,
    })
}

/// Energy ledger as CSV with fixed columns
/// `t,E1,E2,E3,Etot,D,balance_residual`; the header comment carries the
/// format version, grid dims, dt, and seed.
pub fn write_energy_csv(
    path: &Path,
    ledger: &EnergyLedger,
    nx: usize,
    nz: usize,
    dt: f64,
    seed: u64,
) -> Result<(), IoError> {
    let mut out = String::new();
    out += &format!("# pfwi-energy v1 nx={nx} nz={nz} dt={dt:.17e} seed={seed}\n");
    out += "t,E1,E2,E3,Etot,D,balance_residual\n";
    let residuals = ledger.balance_residuals();
    for i in 0..ledger.len() {
        let res = if i == 0 { 0.0 } else { residuals[i - 1] };
        out += &format!(
            "{:.17e},{:.17e},{:.17e},{:.17e},{:.17e},{:.17e},{:.17e}\n",
            ledger.t[i],
            ledger.e1[i],
            ledger.e2[i],
            ledger.e3[i],
            ledger.e_total[i],
            ledger.dissipation[i],
            res
        );
    }
    std::fs::write(path, out).map_err(|e| IoError::Io {
        path: path.display().to_string(),
        source: e,
    })
}

/// Gradient maps as a grid file, one field per inverted parameter.
pub fn gradient_to_grid_file(
    grid: &crate::forward::Grid2D,
    grad: &crate::inversion::GradientField,
) -> GridFile {
    let fields = grad
        .params
        .iter()
        .zip(&grad.data)
        .map(|(p, d)| (format!("grad_{}", p.key()), d.clone()))
        .collect();
    GridFile {
        grid: *grid,
        fields,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn hex_float_round_trips_exactly() {
        for v in [
            0.0,
            -0.0,
            1.0,
            -1.5,
            std::f64::consts::PI,
            1e-300,
            -3.317e222,
            5e-324, // smallest subnormal
            f64::MAX,
        ] {
            let s = hex_f64(v);
            let back = parse_hex_f64(&s).unwrap();
            assert_eq!(back.to_bits(), v.to_bits(), "{v} -> {s} -> {back}");
        }
    }

    proptest! {
        #[test]
        fn hex_float_random_round_trips(bits in any::<u64>()) {
            let v = f64::from_bits(bits);
            prop_assume!(v.is_finite());
            let back = parse_hex_f64(&hex_f64(v)).unwrap();
            prop_assert_eq!(back.to_bits(), v.to_bits());
        }
    }

    #[test]
    fn energy_csv_zero_run_is_all_zero_rows() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("e.csv");
        let mut ledger = EnergyLedger::default();
        ledger.t = vec![0.0, 0.5];
        ledger.e1 = vec![0.0; 2];
        ledger.e2 = vec![0.0; 2];
        ledger.e3 = vec![0.0; 2];
        ledger.e_total = vec![0.0; 2];
        ledger.dissipation = vec![0.0; 2];
        write_energy_csv(&p, &ledger, 8, 8, 1e-3, 7).unwrap();
        let text = std::fs::read_to_string(&p).unwrap();
        let mut lines = text.lines();
        assert!(lines.next().unwrap().starts_with("# pfwi-energy v1"));
        assert_eq!(lines.next().unwrap(), "t,E1,E2,E3,Etot,D,balance_residual");
        for line in lines {
            let cols: Vec<&str> = line.split(',').collect();
            assert_eq!(cols.len(), 7);
            assert!(cols[1..].iter().all(|c| c.parse::<f64>().unwrap() == 0.0));
        }
    }
}
