//! Binary model files.
//!
//! Layout (all integers little-endian):
//!
//! ```text
//! "BNOD" | version u32 | n_widths u32 | widths u32… | activation u8
//! | n_params u64 | params f64…
//! | posterior tag u8 (0 none, 1 diagonal Gaussian)
//!     tag 1: slice offset u64 | slice len u64 | mean f64… | variance f64… | mc samples u32
//! | none-class flag u8
//! ```

use std::fs;
use std::path::Path;

use super::mlp::{Activation, Mlp, ParamSlice};
use super::posterior::{DiagGaussian, Posterior};
use crate::error::{Error, Result};

pub const MAGIC: &[u8; 4] = b"BNOD";
pub const FORMAT_VERSION: u32 = 1;

/// A network, its posterior and whether its last output is a none class.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelFile {
    pub mlp: Mlp,
    pub posterior: Posterior,
    pub none_class: bool,
}

impl ModelFile {
    pub fn map(mlp: Mlp) -> Self {
        ModelFile {
            mlp,
            posterior: Posterior::MapPoint,
            none_class: false,
        }
    }

    /// Number of real (non-none) classes.
    pub fn n_classes(&self) -> usize {
        self.mlp.n_outputs() - usize::from(self.none_class)
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(64 + 8 * self.mlp.n_params());
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
        let widths = self.mlp.widths();
        out.extend_from_slice(&(widths.len() as u32).to_le_bytes());
        for &w in widths {
            out.extend_from_slice(&(w as u32).to_le_bytes());
        }
        out.push(self.mlp.activation().tag());
        out.extend_from_slice(&(self.mlp.n_params() as u64).to_le_bytes());
        for p in self.mlp.params() {
            out.extend_from_slice(&p.to_le_bytes());
        }
        match &self.posterior {
            Posterior::MapPoint => out.push(0),
            Posterior::DiagGaussian(q) => {
                out.push(1);
                out.extend_from_slice(&(q.slice().offset as u64).to_le_bytes());
                out.extend_from_slice(&(q.slice().len as u64).to_le_bytes());
                for v in q.mean().iter().chain(q.variance()) {
                    out.extend_from_slice(&v.to_le_bytes());
                }
                out.extend_from_slice(&(q.n_samples() as u32).to_le_bytes());
            }
        }
        out.push(u8::from(self.none_class));
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader { bytes, pos: 0 };
        if r.take(4)? != MAGIC {
            return Err(Error::format("not a model file (bad magic)"));
        }
        let version = r.u32()?;
        if version != FORMAT_VERSION {
            return Err(Error::format(format!(
                "unsupported model format version {version}"
            )));
        }
        let n_widths = r.u32()? as usize;
        if n_widths > 1024 {
            return Err(Error::format(format!("implausible layer count {n_widths}")));
        }
        let widths = (0..n_widths)
            .map(|_| r.u32().map(|w| w as usize))
            .collect::<Result<Vec<_>>>()?;
        let activation =
            Activation::from_tag(r.u8()?).ok_or_else(|| Error::format("unknown activation tag"))?;
        let n_params = r.u64()? as usize;
        let params = r.f64s(n_params)?;
        let mlp = Mlp::from_params(&widths, activation, params)
            .map_err(|e| Error::format(format!("inconsistent network block: {e}")))?;
        let posterior = match r.u8()? {
            0 => Posterior::MapPoint,
            1 => {
                let offset = r.u64()? as usize;
                let len = r.u64()? as usize;
                if offset
                    .checked_add(len)
                    .is_none_or(|end| end > mlp.n_params())
                {
                    return Err(Error::format(
                        "posterior slice exceeds the parameter vector",
                    ));
                }
                let mean = r.f64s(len)?;
                let variance = r.f64s(len)?;
                let n_samples = r.u32()? as usize;
                let q = DiagGaussian::new(ParamSlice { offset, len }, mean, variance, n_samples)
                    .map_err(|e| Error::format(format!("invalid posterior block: {e}")))?;
                Posterior::DiagGaussian(q)
            }
            t => return Err(Error::format(format!("unknown posterior tag {t}"))),
        };
        let none_class = match r.u8()? {
            0 => false,
            1 => true,
            t => return Err(Error::format(format!("bad none-class flag {t}"))),
        };
        if r.pos != bytes.len() {
            return Err(Error::format("trailing bytes after model"));
        }
        Ok(ModelFile {
            mlp,
            posterior,
            none_class,
        })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        fs::write(path, self.to_bytes())?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_bytes(&fs::read(path)?)
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len());
        let end = end.ok_or_else(|| Error::format("model file is truncated"))?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(
            self.take(4)?.try_into().expect("4 bytes"),
        ))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(
            self.take(8)?.try_into().expect("8 bytes"),
        ))
    }

    fn f64s(&mut self, n: usize) -> Result<Vec<f64>> {
        let raw = self.take(
            n.checked_mul(8)
                .ok_or_else(|| Error::format("length overflow"))?,
        )?;
        Ok(raw
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
            .collect())
    }
}
