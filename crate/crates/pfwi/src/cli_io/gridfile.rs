//! Raw grid-field binary format, bit-exact:
//!
//! ```text
//! magic "PFGD" | u32 version=1 | u32 nx | u32 nz
//! | f64 dx | f64 dz | f64 x0 | f64 z0 | u32 n_fields
//! | per field: u32 name_len, UTF-8 name bytes
//! | then field-major nx*nz f64 LE arrays (x fastest)
//! ```
//!
//! Used for wavefield snapshots, gradient maps, heterogeneous material
//! fields, and model checkpoints.

use std::io::{Read, Write};
use std::path::Path;

use crate::error::IoError;
use crate::forward::{Grid2D, Wavefield};
use crate::material::{MaterialField, PoroelasticParams};

pub const GRID_MAGIC: [u8; 4] = *b"PFGD";
pub const GRID_VERSION: u32 = 1;

/// Names of the per-cell material fields, in storage order.
pub const MATERIAL_FIELDS: [&str; 17] = [
    "phi",
    "rho_s",
    "rho_f",
    "eta",
    "k_s",
    "k_f",
    "kappa_1",
    "kappa_3",
    "alpha_inf_1",
    "alpha_inf_3",
    "pride_1",
    "pride_3",
    "c11",
    "c12",
    "c13",
    "c33",
    "c55",
];

#[derive(Debug, Clone, PartialEq)]
pub struct GridFile {
    pub grid: Grid2D,
    pub fields: Vec<(String, Vec<f64>)>,
}

fn io_err(path: &Path, e: std::io::Error) -> IoError {
    IoError::Io {
        path: path.display().to_string(),
        source: e,
    }
}

pub fn write_grid_file(path: &Path, gf: &GridFile) -> Result<(), IoError> {
    let g = &gf.grid;
    let n = g.n_cells();
    let mut buf: Vec<u8> = Vec::new();
    buf.extend_from_slice(&GRID_MAGIC);
    buf.extend_from_slice(&GRID_VERSION.to_le_bytes());
    buf.extend_from_slice(&(g.nx as u32).to_le_bytes());
    buf.extend_from_slice(&(g.nz as u32).to_le_bytes());
    for v in [g.dx, g.dz, g.x0, g.z0] {
        buf.extend_from_slice(&v.to_le_bytes());
    }
    buf.extend_from_slice(&(gf.fields.len() as u32).to_le_bytes());
    for (name, data) in &gf.fields {
        assert_eq!(data.len(), n, "field {name} has wrong size");
        buf.extend_from_slice(&(name.len() as u32).to_le_bytes());
        buf.extend_from_slice(name.as_bytes());
    }
    for (_, data) in &gf.fields {
        for v in data {
            buf.extend_from_slice(&v.to_le_bytes());
        }
    }
    let mut f = std::fs::File::create(path).map_err(|e| io_err(path, e))?;
    f.write_all(&buf).map_err(|e| io_err(path, e))
}

pub fn read_grid_file(path: &Path) -> Result<GridFile, IoError> {
    let mut bytes = Vec::new();
    std::fs::File::open(path)
        .and_then(|mut f| f.read_to_end(&mut bytes))
        .map_err(|e| io_err(path, e))?;
    let path_s = path.display().to_string();
    let need = |pos: usize, n: usize| -> Result<&[u8], IoError> {
        if pos + n > bytes.len() {
            Err(IoError::TruncatedFile {
                path: path_s.clone(),
                needed: pos + n - bytes.len(),
            })
        } else {
            Ok(&bytes[pos..pos + n])
        }
    };
    let mut pos = 0usize;
    let magic = need(pos, 4)?;
    if magic != GRID_MAGIC {
        return Err(IoError::MagicMismatch {
            path: path_s,
            expected: GRID_MAGIC,
        });
    }
    pos += 4;
    let rd_u32 = |pos: &mut usize| -> Result<u32, IoError> {
        let v = u32::from_le_bytes(need(*pos, 4)?.try_into().unwrap());
        *pos += 4;
        Ok(v)
    };
    let rd_f64 = |pos: &mut usize| -> Result<f64, IoError> {
        let v = f64::from_le_bytes(need(*pos, 8)?.try_into().unwrap());
        *pos += 8;
        Ok(v)
    };
    let version = rd_u32(&mut pos)?;
    if version != GRID_VERSION {
        return Err(IoError::VersionUnsupported {
            path: path.display().to_string(),
            found: version,
        });
    }
    let nx = rd_u32(&mut pos)? as usize;
    let nz = rd_u32(&mut pos)? as usize;
    let dx = rd_f64(&mut pos)?;
    let dz = rd_f64(&mut pos)?;
    let x0 = rd_f64(&mut pos)?;
    let z0 = rd_f64(&mut pos)?;
    let n_fields = rd_u32(&mut pos)? as usize;
    let mut names = Vec::with_capacity(n_fields);
    for _ in 0..n_fields {
        let len = rd_u32(&mut pos)? as usize;
        let raw = need(pos, len)?;
        pos += len;
        let name = String::from_utf8(raw.to_vec()).map_err(|_| IoError::Parse {
            path: path.display().to_string(),
            line: 0,
            msg: "field name is not UTF-8".into(),
        })?;
        names.push(name);
    }
    let n = nx * nz;
    let mut fields = Vec::with_capacity(n_fields);
    for name in names {
        let mut data = Vec::with_capacity(n);
        for _ in 0..n {
            data.push(rd_f64(&mut pos)?);
        }
        fields.push((name, data));
    }
    Ok(GridFile {
        grid: Grid2D::new(nx, nz, dx, dz, x0, z0),
        fields,
    })
}

/// Snapshot of every wavefield component.
pub fn snapshot_to_grid_file(grid: &Grid2D, w: &Wavefield) -> GridFile {
    let fields = (0..w.n_components())
        .map(|c| (w.component_name(c), w.component(c).to_vec()))
        .collect();
    GridFile {
        grid: *grid,
        fields,
    }
}

/// Serialize a heterogeneous material field.
pub fn material_to_grid_file(grid: &Grid2D, mf: &MaterialField) -> GridFile {
    let n = grid.n_cells();
    let mut fields: Vec<(String, Vec<f64>)> = MATERIAL_FIELDS
        .iter()
        .map(|name| (name.to_string(), vec![0.0; n]))
        .collect();
    for iz in 0..grid.nz {
        for ix in 0..grid.nx {
            let p = mf.params(ix, iz);
            let st = &p.stiffness;
            let vals = [
                p.phi,
                p.rho_s,
                p.rho_f,
                p.eta,
                p.k_s,
                p.k_f,
                p.kappa_1,
                p.kappa_3,
                p.alpha_inf_1,
                p.alpha_inf_3,
                p.pride_1,
                p.pride_3,
                st.c11,
                st.c12,
                st.c13,
                st.c33,
                st.c55,
            ];
            for (f, v) in fields.iter_mut().zip(vals) {
                f.1[ix + grid.nx * iz] = v;
            }
        }
    }
    GridFile {
        grid: *grid,
        fields,
    }
}

/// Reconstruct a material field; all 17 fields must be present.
pub fn material_from_grid_file(gf: &GridFile) -> Result<MaterialField, IoError> {
    let g = &gf.grid;
    let n = g.n_cells();
    let mut by_name = std::collections::BTreeMap::new();
    for (name, data) in &gf.fields {
        by_name.insert(name.as_str(), data);
    }
    let mut missing = Vec::new();
    for f in MATERIAL_FIELDS {
        if !by_name.contains_key(f) {
            missing.push(format!("material grid file missing field {f:?}"));
        }
    }
    if !missing.is_empty() {
        return Err(IoError::Validation(missing));
    }
    let get = |f: &str, i: usize| by_name[f][i];
    let mut cells = Vec::with_capacity(n);
    for i in 0..n {
        cells.push(PoroelasticParams {
            phi: get("phi", i),
            rho_s: get("rho_s", i),
            rho_f: get("rho_f", i),
            eta: get("eta", i),
            k_s: get("k_s", i),
            k_f: get("k_f", i),
            kappa_1: get("kappa_1", i),
            kappa_3: get("kappa_3", i),
            alpha_inf_1: get("alpha_inf_1", i),
            alpha_inf_3: get("alpha_inf_3", i),
            pride_1: get("pride_1", i),
            pride_3: get("pride_3", i),
            stiffness: crate::material::ElasticStiffness {
                c11: get("c11", i),
                c12: get("c12", i),
                c13: get("c13", i),
                c33: get("c33", i),
                c55: get("c55", i),
            },
        });
    }
    MaterialField::from_cells(g.nx, g.nz, cells)
        .map_err(|e| IoError::Validation(vec![e.to_string()]))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn grid_file_round_trip_byte_identical() {
        let dir = tempfile::tempdir().unwrap();
        let p1 = dir.path().join("a.pfgd");
        let p2 = dir.path().join("b.pfgd");
        let grid = Grid2D::new(8, 9, 1.5, 2.5, -4.0, 0.0);
        let gf = GridFile {
            grid,
            fields: vec![
                ("alpha".into(), (0..72).map(|i| i as f64).collect()),
                ("beta".into(), (0..72).map(|i| -(i as f64) * 0.5).collect()),
            ],
        };
        write_grid_file(&p1, &gf).unwrap();
        let back = read_grid_file(&p1).unwrap();
        assert_eq!(back, gf);
        write_grid_file(&p2, &back).unwrap();
        assert_eq!(std::fs::read(&p1).unwrap(), std::fs::read(&p2).unwrap());
    }

    #[test]
    fn snapshot_dims_match_grid() {
        let grid = Grid2D::new(8, 8, 1.0, 1.0, 0.0, 0.0);
        let w = Wavefield::zeros(8, 8, 2, 1);
        let gf = snapshot_to_grid_file(&grid, &w);
        assert_eq!(gf.fields.len(), 11);
        assert!(gf.fields.iter().all(|(_, d)| d.len() == 64));
        assert_eq!(gf.fields[8].0, "theta1_1");
    }

    #[test]
    fn material_round_trip_preserves_cells() {
        let grid = Grid2D::new(8, 8, 1.0, 1.0, 0.0, 0.0);
        let mut mf =
            MaterialField::homogeneous(8, 8, PoroelasticParams::reference_sandstone()).unwrap();
        let mut p = *mf.params(3, 4);
        p.kappa_1 = 7.5e-12;
        mf.update_cell(3, 4, p).unwrap();
        let gf = material_to_grid_file(&grid, &mf);
        let back = material_from_grid_file(&gf).unwrap();
        assert_eq!(back.params(3, 4).kappa_1, 7.5e-12);
        assert_eq!(back.params(0, 0), mf.params(0, 0));
    }

    #[test]
    fn missing_material_field_reported() {
        let grid = Grid2D::new(8, 8, 1.0, 1.0, 0.0, 0.0);
        let mf =
            MaterialField::homogeneous(8, 8, PoroelasticParams::reference_sandstone()).unwrap();
        let mut gf = material_to_grid_file(&grid, &mf);
        gf.fields.remove(3); // drop eta
        match material_from_grid_file(&gf) {
            Err(IoError::Validation(errs)) => assert!(errs[0].contains("eta")),
            other => panic!("expected validation error, got {other:?}"),
        }
    }
}
