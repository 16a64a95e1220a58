//! Named-tensor container used for checkpoints, targets and sample sets.
//!
//! Layout: magic `HALOBND1`, LE `u64` header length, the header as compact
//! JSON with sorted keys, LE `u32` block count, then per block an LE `u32`
//! name length, the UTF-8 name and one `HALT` tensor.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use serde_json::Value;

use crate::error::{HaloError, Result};
use crate::tensor::{read_halt, write_halt, Tensor};

pub const BUNDLE_MAGIC: &[u8; 8] = b"HALOBND1";

#[derive(Debug, Clone, PartialEq)]
pub struct Bundle {
    pub header: Value,
    pub tensors: Vec<(String, Tensor)>,
}

impl Bundle {
    pub fn new(header: Value) -> Self {
        Self { header, tensors: Vec::new() }
    }

    pub fn push(&mut self, name: impl Into<String>, t: Tensor) {
        self.tensors.push((name.into(), t));
    }

    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.tensors.iter().find(|(n, _)| n == name).map(|(_, t)| t)
    }

    pub fn require(&self, name: &str) -> Result<&Tensor> {
        self.get(name).ok_or_else(|| HaloError::Format(format!("bundle has no tensor {name}")))
    }

    pub fn to_writer<W: Write>(&self, w: &mut W) -> Result<()> {
        let header = serde_json::to_vec(&self.header)?;
        w.write_all(BUNDLE_MAGIC)?;
        w.write_all(&(header.len() as u64).to_le_bytes())?;
        w.write_all(&header)?;
        w.write_all(&(self.tensors.len() as u32).to_le_bytes())?;
        for (name, t) in &self.tensors {
            w.write_all(&(name.len() as u32).to_le_bytes())?;
            w.write_all(name.as_bytes())?;
            write_halt(w, t)?;
        }
        Ok(())
    }

    pub fn from_reader<R: Read>(r: &mut R) -> Result<Self> {
        let mut magic = [0u8; 8];
        r.read_exact(&mut magic)?;
        if &magic != BUNDLE_MAGIC {
            return Err(HaloError::Format("bad bundle magic".into()));
        }
        let mut len8 = [0u8; 8];
        r.read_exact(&mut len8)?;
        let mut header = vec![0u8; u64::from_le_bytes(len8) as usize];
        r.read_exact(&mut header)?;
        let header: Value = serde_json::from_slice(&header)?;
        let mut len4 = [0u8; 4];
        r.read_exact(&mut len4)?;
        let count = u32::from_le_bytes(len4);
        let mut tensors = Vec::with_capacity(count as usize);
        for _ in 0..count {
            r.read_exact(&mut len4)?;
            let mut name = vec![0u8; u32::from_le_bytes(len4) as usize];
            r.read_exact(&mut name)?;
            let name = String::from_utf8(name).map_err(|e| HaloError::Format(e.to_string()))?;
            tensors.push((name, read_halt(r)?));
        }
        Ok(Self { header, tensors })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut w = BufWriter::new(File::create(path)?);
        self.to_writer(&mut w)?;
        w.flush()?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_reader(&mut BufReader::new(File::open(path)?))
    }
}
