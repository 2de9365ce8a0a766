//! Adam with per-group step counters and row-editable per-Gaussian moments.

use std::io::{Read, Write};

use crate::error::{Error, Result};
use crate::gaussian::RowEdit;

pub const BETA1: f64 = 0.9;
pub const BETA2: f64 = 0.999;
pub const EPS: f64 = 1e-15;

const MAGIC: &[u8; 4] = b"FRGO";
const VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq)]
pub struct AdamGroup {
    pub name: String,
    pub m: Vec<f64>,
    pub v: Vec<f64>,
    pub step: u64,
}

impl AdamGroup {
    pub fn new(name: impl Into<String>, len: usize) -> Self {
        AdamGroup { name: name.into(), m: vec![0.0; len], v: vec![0.0; len], step: 0 }
    }

    pub fn len(&self) -> usize {
        self.m.len()
    }

    pub fn is_empty(&self) -> bool {
        self.m.is_empty()
    }

    /// One bias-corrected update of `params` in place.
    pub fn update(&mut self, params: &mut [f64], grad: &[f64], lr: f64) -> Result<()> {
        if params.len() != self.m.len() || grad.len() != self.m.len() {
            return Err(Error::Shape(format!(
                "adam group `{}`: {} moments, {} params, {} grads",
                self.name,
                self.m.len(),
                params.len(),
                grad.len()
            )));
        }
        self.step += 1;
        let c1 = 1.0 - BETA1.powi(self.step as i32);
        let c2 = 1.0 - BETA2.powi(self.step as i32);
        for i in 0..params.len() {
            let g = grad[i];
            self.m[i] = BETA1 * self.m[i] + (1.0 - BETA1) * g;
            self.v[i] = BETA2 * self.v[i] + (1.0 - BETA2) * g * g;
            let mh = self.m[i] / c1;
            let vh = self.v[i] / c2;
            params[i] -= lr * mh / (vh.sqrt() + EPS);
        }
        Ok(())
    }

    /// Keeps moments of surviving rows; appended rows start at zero.
    pub fn apply_edit(&mut self, edit: &RowEdit, width: usize) {
        edit.apply(&mut self.m, width, 0.0);
        edit.apply(&mut self.v, width, 0.0);
    }
}

/// All optimizer groups, in a fixed order.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct AdamState {
    pub groups: Vec<AdamGroup>,
}

impl AdamState {
    pub fn group_mut(&mut self, name: &str) -> Option<&mut AdamGroup> {
        self.groups.iter_mut().find(|g| g.name == name)
    }

    pub fn write<W: Write>(&self, w: &mut W) -> Result<()> {
        w.write_all(MAGIC)?;
        w.write_all(&VERSION.to_le_bytes())?;
        w.write_all(&(self.groups.len() as u32).to_le_bytes())?;
        for g in &self.groups {
            w.write_all(&(g.name.len() as u32).to_le_bytes())?;
            w.write_all(g.name.as_bytes())?;
            w.write_all(&g.step.to_le_bytes())?;
            w.write_all(&(g.m.len() as u64).to_le_bytes())?;
            for v in g.m.iter().chain(&g.v) {
                w.write_all(&v.to_le_bytes())?;
            }
        }
        Ok(())
    }

    pub fn read<R: Read>(r: &mut R) -> Result<Self> {
        let mut magic = [0u8; 4];
        r.read_exact(&mut magic)?;
        if &magic != MAGIC {
            return Err(Error::Format("not an optimizer state file".into()));
        }
        let version = read_u32(r)?;
        if version != VERSION {
            return Err(Error::Format(format!("optimizer state version {version} unsupported")));
        }
        let count = read_u32(r)? as usize;
        let mut groups = Vec::with_capacity(count.min(64));
        for _ in 0..count {
            let name_len = read_u32(r)? as usize;
            if name_len > 256 {
                return Err(Error::Format("optimizer group name too long".into()));
            }
            let mut name = vec![0u8; name_len];
            r.read_exact(&mut name)?;
            let name = String::from_utf8(name).map_err(|_| Error::Format("optimizer group name is not UTF-8".into()))?;
            let step = read_u64(r)?;
            let len = read_u64(r)? as usize;
            let mut vals = Vec::with_capacity(len.min(1 << 24) * 2);
            for _ in 0..2 * len {
                vals.push(f64::from_le_bytes(read_array(r)?));
            }
            let v = vals.split_off(len);
            groups.push(AdamGroup { name, m: vals, v, step });
        }
        Ok(AdamState { groups })
    }
}

fn read_array<R: Read, const N: usize>(r: &mut R) -> Result<[u8; N]> {
    let mut b = [0u8; N];
    r.read_exact(&mut b)?;
    Ok(b)
}

fn read_u32<R: Read>(r: &mut R) -> Result<u32> {
    Ok(u32::from_le_bytes(read_array(r)?))
}

fn read_u64<R: Read>(r: &mut R) -> Result<u64> {
    Ok(u64::from_le_bytes(read_array(r)?))
}
