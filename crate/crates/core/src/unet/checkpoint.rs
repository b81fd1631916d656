//! Self-describing binary checkpoint container.
//!
//! Layout (all integers little-endian):
//!
//! ```text
//! magic   8 bytes  "SEGCKPT\0"
//! version u32
//! count   u32
//! count x { name_len u32, name utf-8, ndims u32, dims u64 x ndims, data f64 x prod(dims) }
//! ```
//!
//! Metadata (configuration, epoch, validation error, optimizer step,
//! normalization statistics and class weights) is stored as arrays under
//! the `meta/` prefix; weights under `param/`, batch-norm running statistics
//! under `buffer/` and Adam moments under `adam_m/` and `adam_v/`.

use std::fs;
use std::path::Path;

use super::{AdamState, NamedArray, ParamSet, Result, UNet, UNetConfig, UnetError};
use crate::dataset::{ClassWeights, NormStats};

pub const MAGIC: &[u8; 8] = b"SEGCKPT\0";
pub const VERSION: u32 = 1;

/// A snapshot of training state taken at the end of an epoch.
#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub config: UNetConfig,
    pub params: ParamSet,
    pub buffers: ParamSet,
    pub adam: AdamState,
    pub epoch: usize,
    /// Weighted Dice error on the validation set, in `[0, 1]`.
    pub val_error: f64,
    pub norm_stats: NormStats,
    pub class_weights: ClassWeights,
}

impl Checkpoint {
    /// The network in inference form.
    pub fn network(&self) -> Result<UNet> {
        UNet::from_parts(self.config, self.params.clone(), self.buffers.clone())
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let c = &self.config;
        let seed_hi = (c.seed >> 32) as f64;
        let seed_lo = (c.seed & 0xFFFF_FFFF) as f64;
        let mut arrays: Vec<(String, Vec<usize>, &[f64])> = Vec::new();
        let config = [
            c.n_levels as f64,
            c.base_filters as f64,
            c.n_classes as f64,
            c.input_size.0 as f64,
            c.input_size.1 as f64,
            seed_hi,
            seed_lo,
        ];
        let scalars = [
            self.epoch as f64,
            self.val_error,
            self.adam.step as f64,
            self.norm_stats.scale_max,
            self.norm_stats.mean_after_scale,
        ];
        arrays.push(("meta/config".into(), vec![config.len()], &config));
        arrays.push(("meta/scalars".into(), vec![scalars.len()], &scalars));
        arrays.push((
            "meta/class_weights".into(),
            vec![self.class_weights.len()],
            &self.class_weights.w,
        ));
        for (prefix, set) in [
            ("param/", &self.params),
            ("buffer/", &self.buffers),
            ("adam_m/", &self.adam.m),
            ("adam_v/", &self.adam.v),
        ] {
            for a in &set.arrays {
                arrays.push((format!("{prefix}{}", a.name), a.dims.clone(), &a.data));
            }
        }

        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        out.extend_from_slice(&(arrays.len() as u32).to_le_bytes());
        for (name, dims, data) in arrays {
            out.extend_from_slice(&(name.len() as u32).to_le_bytes());
            out.extend_from_slice(name.as_bytes());
            out.extend_from_slice(&(dims.len() as u32).to_le_bytes());
            for d in dims {
                out.extend_from_slice(&(d as u64).to_le_bytes());
            }
            for v in data {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = ByteReader { buf: bytes, pos: 0 };
        if r.take(8)? != MAGIC {
            return Err(UnetError::Checkpoint("bad magic".into()));
        }
        let version = r.u32()?;
        if version != VERSION {
            return Err(UnetError::Checkpoint(format!("unsupported version {version}")));
        }
        let count = r.u32()? as usize;
        let mut arrays = Vec::with_capacity(count);
        for _ in 0..count {
            let len = r.u32()? as usize;
            let name = String::from_utf8(r.take(len)?.to_vec())
                .map_err(|_| UnetError::Checkpoint("array name is not utf-8".into()))?;
            let ndims = r.u32()? as usize;
            let dims = (0..ndims).map(|_| r.u64().map(|d| d as usize)).collect::<Result<Vec<_>>>()?;
            let n: usize = dims.iter().product();
            let data = (0..n).map(|_| r.f64()).collect::<Result<Vec<_>>>()?;
            arrays.push(NamedArray { name, dims, data });
        }
        if r.pos != bytes.len() {
            return Err(UnetError::Checkpoint("trailing bytes".into()));
        }

        let meta = |name: &str| -> Result<Vec<f64>> {
            arrays
                .iter()
                .find(|a| a.name == name)
                .map(|a| a.data.clone())
                .ok_or_else(|| UnetError::Checkpoint(format!("missing {name}")))
        };
        let cfg = meta("meta/config")?;
        let sc = meta("meta/scalars")?;
        if cfg.len() != 7 || sc.len() != 5 {
            return Err(UnetError::Checkpoint("malformed metadata".into()));
        }
        let config = UNetConfig {
            n_levels: cfg[0] as usize,
            base_filters: cfg[1] as usize,
            n_classes: cfg[2] as usize,
            input_size: (cfg[3] as usize, cfg[4] as usize),
            seed: ((cfg[5] as u64) << 32) | cfg[6] as u64,
        };
        let class_weights = ClassWeights {
            w: meta("meta/class_weights")?,
        };
        let group = |prefix: &str| ParamSet {
            arrays: arrays
                .iter()
                .filter_map(|a| {
                    a.name.strip_prefix(prefix).map(|n| NamedArray {
                        name: n.to_string(),
                        dims: a.dims.clone(),
                        data: a.data.clone(),
                    })
                })
                .collect(),
        };
        let ck = Checkpoint {
            config,
            params: group("param/"),
            buffers: group("buffer/"),
            adam: AdamState {
                m: group("adam_m/"),
                v: group("adam_v/"),
                step: sc[2] as u64,
            },
            epoch: sc[0] as usize,
            val_error: sc[1],
            norm_stats: NormStats {
                scale_max: sc[3],
                mean_after_scale: sc[4],
            },
            class_weights,
        };
        // Validates the weight layout against the configuration.
        ck.network()?;
        Ok(ck)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        fs::write(path, self.to_bytes())?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_bytes(&fs::read(path)?)
    }
}

struct ByteReader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> ByteReader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let s = self
            .buf
            .get(self.pos..self.pos.saturating_add(n))
            .ok_or_else(|| UnetError::Checkpoint(format!("truncated at byte {}", self.pos)))?;
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }

    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }
}
