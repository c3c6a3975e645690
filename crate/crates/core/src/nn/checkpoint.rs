//! Versioned binary parameter container.
//!
//! All integers and floats are little-endian.
//!
//! | field            | encoding                                   |
//! |------------------|--------------------------------------------|
//! | magic            | 8 bytes `ABRGCKPT`                         |
//! | schema version   | `u32`                                      |
//! | header length    | `u32`, then that many bytes of UTF-8 text  |
//! | blob count       | `u32`                                      |
//! | per blob         | `u16` name length, name bytes, `u8` rank, rank x `u64` dims, `f64` data |
//! | checksum         | 32-byte SHA-256 of every preceding byte    |
//!
//! The header is `key=value` lines (variant, representation, seed, config hash, ...).

use sha2::{Digest, Sha256};

use super::Module;
use crate::error::{Error, Result};

pub const MAGIC: &[u8; 8] = b"ABRGCKPT";
pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct Blob {
    pub name: String,
    pub shape: Vec<usize>,
    pub data: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct Checkpoint {
    pub header: Vec<(String, String)>,
    pub blobs: Vec<Blob>,
}

impl Checkpoint {
    pub fn set_header(&mut self, key: &str, value: impl ToString) {
        let value = value.to_string();
        match self.header.iter_mut().find(|(k, _)| k == key) {
            Some(e) => e.1 = value,
            None => self.header.push((key.to_string(), value)),
        }
    }

    pub fn header_value(&self, key: &str) -> Result<&str> {
        self.header
            .iter()
            .find(|(k, _)| k == key)
            .map(|(_, v)| v.as_str())
            .ok_or_else(|| Error::Checkpoint(format!("header lacks `{key}`")))
    }

    pub fn push(&mut self, name: impl Into<String>, shape: Vec<usize>, data: Vec<f64>) {
        self.blobs.push(Blob {
            name: name.into(),
            shape,
            data,
        });
    }

    pub fn blob(&self, name: &str) -> Result<&Blob> {
        self.blobs
            .iter()
            .find(|b| b.name == name)
            .ok_or_else(|| Error::Checkpoint(format!("missing blob `{name}`")))
    }

    /// Stores every parameter of `module` under `prefix.`.
    pub fn push_module<M: Module + ?Sized>(&mut self, prefix: &str, module: &M) {
        for (spec, data) in module.param_specs().into_iter().zip(module.params()) {
            self.push(format!("{prefix}.{}", spec.name), spec.shape, data.to_vec());
        }
    }

    /// Loads parameters stored by [`Checkpoint::push_module`]; shapes must match exactly.
    pub fn load_module<M: Module + ?Sized>(&self, prefix: &str, module: &mut M) -> Result<()> {
        let specs = module.param_specs();
        let mut sources = Vec::with_capacity(specs.len());
        for spec in &specs {
            let blob = self.blob(&format!("{prefix}.{}", spec.name))?;
            if blob.shape != spec.shape {
                return Err(Error::Checkpoint(format!(
                    "blob `{}` has shape {:?}, expected {:?}",
                    blob.name, blob.shape, spec.shape
                )));
            }
            sources.push(&blob.data);
        }
        for (dst, src) in module.params_mut().into_iter().zip(sources) {
            dst.copy_from_slice(src);
        }
        Ok(())
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&SCHEMA_VERSION.to_le_bytes());
        let header: String = self.header.iter().map(|(k, v)| format!("{k}={v}\n")).collect();
        out.extend_from_slice(&(header.len() as u32).to_le_bytes());
        out.extend_from_slice(header.as_bytes());
        out.extend_from_slice(&(self.blobs.len() as u32).to_le_bytes());
        for blob in &self.blobs {
            out.extend_from_slice(&(blob.name.len() as u16).to_le_bytes());
            out.extend_from_slice(blob.name.as_bytes());
            out.push(blob.shape.len() as u8);
            for &d in &blob.shape {
                out.extend_from_slice(&(d as u64).to_le_bytes());
            }
            for v in &blob.data {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        let digest = Sha256::digest(&out);
        out.extend_from_slice(&digest);
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < MAGIC.len() + 4 + 32 || &bytes[..8] != MAGIC {
            return Err(Error::Checkpoint("not a checkpoint (bad magic)".into()));
        }
        let (body, checksum) = bytes.split_at(bytes.len() - 32);
        if Sha256::digest(body).as_slice() != checksum {
            return Err(Error::Checkpoint("checksum mismatch".into()));
        }
        let mut r = Reader { buf: body, pos: 8 };
        let version = r.u32()?;
        if version != SCHEMA_VERSION {
            return Err(Error::Checkpoint(format!("schema version {version} is not supported")));
        }
        let header_len = r.u32()? as usize;
        let header_text =
            std::str::from_utf8(r.take(header_len)?).map_err(|_| Error::Checkpoint("header is not UTF-8".into()))?;
        let header = header_text
            .lines()
            .map(|l| {
                l.split_once('=')
                    .map(|(k, v)| (k.to_string(), v.to_string()))
                    .ok_or_else(|| Error::Checkpoint(format!("bad header line `{l}`")))
            })
            .collect::<Result<Vec<_>>>()?;
        let n_blobs = r.u32()? as usize;
        let mut blobs = Vec::with_capacity(n_blobs);
        for _ in 0..n_blobs {
            let name_len = u16::from_le_bytes(r.take(2)?.try_into().unwrap()) as usize;
            let name = String::from_utf8(r.take(name_len)?.to_vec())
                .map_err(|_| Error::Checkpoint("blob name is not UTF-8".into()))?;
            let rank = r.take(1)?[0] as usize;
            let mut shape = Vec::with_capacity(rank);
            for _ in 0..rank {
                shape.push(u64::from_le_bytes(r.take(8)?.try_into().unwrap()) as usize);
            }
            let n: usize = shape.iter().product();
            let raw = r.take(
                n.checked_mul(8)
                    .ok_or_else(|| Error::Checkpoint("blob too large".into()))?,
            )?;
            let data = raw
                .chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
                .collect();
            blobs.push(Blob { name, shape, data });
        }
        if r.pos != body.len() {
            return Err(Error::Checkpoint("trailing bytes before checksum".into()));
        }
        Ok(Self { header, blobs })
    }
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.buf.len())
            .ok_or_else(|| Error::Checkpoint("truncated checkpoint".into()))?;
        let s = &self.buf[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }
}
