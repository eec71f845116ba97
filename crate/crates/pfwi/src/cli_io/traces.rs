//! Receiver-trace binary format, bit-exact:
//!
//! ```text
//! magic "PFWI" | u32 version=1 | u32 n_receivers | u32 n_components
//! | u64 n_samples | f64 dt
//! then per receiver:
//!   f64 x | f64 z | n_components mask bytes (0/1)
//!   | n_components * n_samples f64 LE samples, component-major rows
//! ```
//!
//! All integers and floats little-endian. Round trips are byte-identical.

use std::io::{Read, Write};
use std::path::Path;

use crate::error::IoError;
use crate::forward::{ReceiverSpec, SeismogramSet};

pub const TRACE_MAGIC: [u8; 4] = *b"PFWI";
pub const TRACE_VERSION: u32 = 1;

fn io_err(path: &Path, e: std::io::Error) -> IoError {
    IoError::Io {
        path: path.display().to_string(),
        source: e,
    }
}

pub fn write_traces(path: &Path, seis: &SeismogramSet) -> Result<(), IoError> {
    let mut buf: Vec<u8> = Vec::new();
    buf.extend_from_slice(&TRACE_MAGIC);
    buf.extend_from_slice(&TRACE_VERSION.to_le_bytes());
    buf.extend_from_slice(&(seis.n_receivers() as u32).to_le_bytes());
    buf.extend_from_slice(&(seis.n_components as u32).to_le_bytes());
    buf.extend_from_slice(&(seis.n_samples as u64).to_le_bytes());
    buf.extend_from_slice(&seis.dt.to_le_bytes());
    for (rec, row) in seis.receivers.iter().zip(&seis.data) {
        buf.extend_from_slice(&rec.x.to_le_bytes());
        buf.extend_from_slice(&rec.z.to_le_bytes());
        for &m in &rec.mask {
            buf.push(m as u8);
        }
        for v in row {
            buf.extend_from_slice(&v.to_le_bytes());
        }
    }
    let mut f = std::fs::File::create(path).map_err(|e| io_err(path, e))?;
    f.write_all(&buf).map_err(|e| io_err(path, e))
}

struct Cursor<'a> {
    buf: &'a [u8],
    pos: usize,
    path: String,
}

impl Cursor<'_> {
    fn need(&mut self, n: usize) -> Result<&[u8], IoError> {
        if self.pos + n > self.buf.len() {
            return Err(IoError::TruncatedFile {
                path: self.path.clone(),
                needed: self.pos + n - self.buf.len(),
            });
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32, IoError> {
        Ok(u32::from_le_bytes(self.need(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64, IoError> {
        Ok(u64::from_le_bytes(self.need(8)?.try_into().unwrap()))
    }

    fn f64(&mut self) -> Result<f64, IoError> {
        Ok(f64::from_le_bytes(self.need(8)?.try_into().unwrap()))
    }
}

pub fn read_traces(path: &Path) -> Result<SeismogramSet, IoError> {
    let mut bytes = Vec::new();
    std::fs::File::open(path)
        .and_then(|mut f| f.read_to_end(&mut bytes))
        .map_err(|e| io_err(path, e))?;
    let mut c = Cursor {
        buf: &bytes,
        pos: 0,
        path: path.display().to_string(),
    };
    let magic = c.need(4)?;
    if magic != TRACE_MAGIC {
        return Err(IoError::MagicMismatch {
            path: c.path,
            expected: TRACE_MAGIC,
        });
    }
    let version = c.u32()?;
    if version != TRACE_VERSION {
        return Err(IoError::VersionUnsupported {
            path: c.path,
            found: version,
        });
    }
    let n_receivers = c.u32()? as usize;
    let n_components = c.u32()? as usize;
    let n_samples = c.u64()? as usize;
    let dt = c.f64()?;
    let mut receivers = Vec::with_capacity(n_receivers);
    let mut data = Vec::with_capacity(n_receivers);
    for _ in 0..n_receivers {
        let x = c.f64()?;
        let z = c.f64()?;
        let mask_bytes = c.need(n_components)?;
        let mask = mask_bytes.iter().map(|&b| b != 0).collect();
        let mut row = Vec::with_capacity(n_components * n_samples);
        for _ in 0..n_components * n_samples {
            row.push(c.f64()?);
        }
        receivers.push(ReceiverSpec { x, z, mask });
        data.push(row);
    }
    Ok(SeismogramSet {
        dt,
        n_samples,
        n_components,
        receivers,
        data,
    })
}
