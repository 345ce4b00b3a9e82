//! Data-source strings accepted by `--data`, `--in-data`, `--out-data` and `--from`:
//!
//! - `toy:SEED[:N]`: the 4-cluster toy set, `N` points per class (default 100)
//! - `csv:PATH`: header `x0..x{n-1},label`
//! - `idx:IMAGES[,LABELS]`: IDX files, optionally gzip-compressed
//! - `uniform:LOW:HIGH:DIM:N:SEED`
//! - `ring:RMIN:RMAX:N:SEED`: planar annulus

use std::path::{Path, PathBuf};

use crate::data::{gen_ring, gen_toy_gaussians, gen_uniform_ood, load_idx, read_csv, ToyGaussians};
use crate::dataset::{LabeledSet, Origin};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub enum DataSpec {
    Toy {
        seed: u64,
        n_per_class: usize,
    },
    Csv(PathBuf),
    Idx {
        images: PathBuf,
        labels: Option<PathBuf>,
    },
    Uniform {
        low: f64,
        high: f64,
        dim: usize,
        n: usize,
        seed: u64,
    },
    Ring {
        r_min: f64,
        r_max: f64,
        n: usize,
        seed: u64,
    },
}

fn field<T: std::str::FromStr>(spec: &str, s: &str) -> Result<T> {
    s.parse()
        .map_err(|_| Error::config(format!("bad field '{s}' in data spec '{spec}'")))
}

impl std::str::FromStr for DataSpec {
    type Err = Error;

    fn from_str(spec: &str) -> Result<Self> {
        let (kind, rest) = spec
            .split_once(':')
            .ok_or_else(|| Error::config(format!("data spec '{spec}' has no kind prefix")))?;
        let parts: Vec<&str> = rest.split(':').collect();
        match (kind, parts.as_slice()) {
            ("toy", [seed]) => Ok(DataSpec::Toy { seed: field(spec, seed)?, n_per_class: 100 }),
            ("toy", [seed, n]) => Ok(DataSpec::Toy { seed: field(spec, seed)?, n_per_class: field(spec, n)? }),
            ("csv", _) if !rest.is_empty() => Ok(DataSpec::Csv(PathBuf::from(rest))),
            ("idx", _) if !rest.is_empty() => {
                let (images, labels) = match rest.split_once(',') {
                    Some((i, l)) => (i, Some(PathBuf::from(l))),
                    None => (rest, None),
                };
                Ok(DataSpec::Idx { images: PathBuf::from(images), labels })
            }
            ("uniform", [lo, hi, dim, n, seed]) => Ok(DataSpec::Uniform {
                low: field(spec, lo)?,
                high: field(spec, hi)?,
                dim: field(spec, dim)?,
                n: field(spec, n)?,
                seed: field(spec, seed)?,
            }),
            ("ring", [r0, r1, n, seed]) => Ok(DataSpec::Ring {
                r_min: field(spec, r0)?,
                r_max: field(spec, r1)?,
                n: field(spec, n)?,
                seed: field(spec, seed)?,
            }),
            _ => Err(Error::config(format!(
                "cannot parse data spec '{spec}' (toy:SEED[:N] | csv:PATH | idx:IMAGES[,LABELS] | uniform:LOW:HIGH:DIM:N:SEED | ring:RMIN:RMAX:N:SEED)"
            ))),
        }
    }
}

fn require(path: &Path) -> Result<()> {
    if !path.exists() {
        return Err(Error::config(format!("{} does not exist", path.display())));
    }
    Ok(())
}

impl DataSpec {
    pub fn load(&self, origin: Origin) -> Result<LabeledSet> {
        let set = match self {
            DataSpec::Toy { seed, n_per_class } => gen_toy_gaussians(&ToyGaussians {
                n_per_class: *n_per_class,
                ..ToyGaussians::with_seed(*seed)
            })?,
            DataSpec::Csv(path) => {
                require(path)?;
                read_csv(path, origin)?
            }
            DataSpec::Idx { images, labels } => {
                require(images)?;
                if let Some(l) = labels {
                    require(l)?;
                }
                load_idx(images, labels.as_deref())?
            }
            DataSpec::Uniform {
                low,
                high,
                dim,
                n,
                seed,
            } => gen_uniform_ood(*low, *high, *dim, *n, *seed)?,
            DataSpec::Ring {
                r_min,
                r_max,
                n,
                seed,
            } => gen_ring(*r_min, *r_max, *n, *seed)?,
        };
        Ok(set.with_origin(origin))
    }

    pub fn is_image(&self) -> bool {
        matches!(self, DataSpec::Idx { .. })
    }
}
