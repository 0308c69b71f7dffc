//! Per-shape dataset files.
//!
//! Layout (little-endian):
//! ```text
//! magic   b"FIRD"
//! version u32
//! n_sdf   u32
//! n_ddf   u32
//! n_sdf SdfSample records: x f32*3, s_gt f32
//! n_ddf DdfSample records: p f32*3, r f32*3, d_gt f32, hit u8
//! ```

use crate::error::{FireError, Result};
use crate::geom::{vec3, Vec3};
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

pub const DATASET_MAGIC: &[u8; 4] = b"FIRD";
pub const DATASET_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SdfSample {
    pub x: Vec3,
    pub s_gt: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DdfSample {
    pub p: Vec3,
    pub r: Vec3,
    /// Meaningful only when `hit`; stored as 0 otherwise.
    pub d_gt: f64,
    pub hit: bool,
}

#[derive(Debug, Clone, Default)]
pub struct ShapeDataset {
    pub sdf: Vec<SdfSample>,
    pub ddf: Vec<DdfSample>,
}

impl ShapeDataset {
    pub fn hit_count(&self) -> usize {
        self.ddf.iter().filter(|s| s.hit).count()
    }
}

fn put_f32(out: &mut Vec<u8>, v: f64) {
    out.extend_from_slice(&(v as f32).to_le_bytes());
}

fn put_vec3(out: &mut Vec<u8>, v: Vec3) {
    put_f32(out, v.x);
    put_f32(out, v.y);
    put_f32(out, v.z);
}

pub fn write_dataset(path: &Path, data: &ShapeDataset) -> Result<()> {
    let mut buf = Vec::with_capacity(16 + data.sdf.len() * 16 + data.ddf.len() * 29);
    buf.extend_from_slice(DATASET_MAGIC);
    buf.extend_from_slice(&DATASET_VERSION.to_le_bytes());
    buf.extend_from_slice(&(data.sdf.len() as u32).to_le_bytes());
    buf.extend_from_slice(&(data.ddf.len() as u32).to_le_bytes());
    for s in &data.sdf {
        put_vec3(&mut buf, s.x);
        put_f32(&mut buf, s.s_gt);
    }
    for s in &data.ddf {
        put_vec3(&mut buf, s.p);
        put_vec3(&mut buf, s.r);
        put_f32(&mut buf, s.d_gt);
        buf.push(s.hit as u8);
    }
    let file = std::fs::File::create(path).map_err(|e| FireError::io(path, e))?;
    let mut w = BufWriter::new(file);
    w.write_all(&buf).map_err(|e| FireError::io(path, e))?;
    w.flush().map_err(|e| FireError::io(path, e))
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
    path: &'a Path,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.pos + n > self.bytes.len() {
            return Err(FireError::parse(self.path, "truncated dataset file"));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn f32(&mut self) -> Result<f64> {
        Ok(f32::from_le_bytes(self.take(4)?.try_into().unwrap()) as f64)
    }

    fn vec3(&mut self) -> Result<Vec3> {
        Ok(vec3(self.f32()?, self.f32()?, self.f32()?))
    }
}

pub fn read_dataset(path: &Path) -> Result<ShapeDataset> {
    let file = std::fs::File::open(path).map_err(|e| FireError::io(path, e))?;
    let mut bytes = Vec::new();
    BufReader::new(file)
        .read_to_end(&mut bytes)
        .map_err(|e| FireError::io(path, e))?;
    let mut c = Cursor {
        bytes: &bytes,
        pos: 0,
        path,
    };
    if c.take(4)? != DATASET_MAGIC {
        return Err(FireError::parse(path, "bad magic; not a FIRD dataset"));
    }
    let version = c.u32()?;
    if version != DATASET_VERSION {
        return Err(FireError::parse(
            path,
            format!("unsupported dataset version {version}"),
        ));
    }
    let n_sdf = c.u32()? as usize;
    let n_ddf = c.u32()? as usize;
    let mut data = ShapeDataset {
        sdf: Vec::with_capacity(n_sdf),
        ddf: Vec::with_capacity(n_ddf),
    };
    for _ in 0..n_sdf {
        let x = c.vec3()?;
        let s_gt = c.f32()?;
        data.sdf.push(SdfSample { x, s_gt });
    }
    for _ in 0..n_ddf {
        let p = c.vec3()?;
        let r = c.vec3()?;
        let d_gt = c.f32()?;
        let hit = c.take(1)?[0] != 0;
        data.ddf.push(DdfSample { p, r, d_gt, hit });
    }
    Ok(data)
}
