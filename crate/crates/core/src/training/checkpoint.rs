use std::fs;
use std::path::{Path, PathBuf};

use pad_autodiff::Tensor;
use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::error::{io_err, PadError, Result};
use crate::nn::{AdamW, AdamWConfig};

const MAGIC: &[u8; 6] = b"PADCK1";
pub const CHECKPOINT_VERSION: u32 = 1;

/// Everything needed to restore a network and continue optimising it.
#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    /// `"planner"` or `"invdyn"`.
    pub kind: String,
    /// Network configuration the parameters belong to.
    pub config: Value,
    /// Training settings, or `null`.
    pub train: Value,
    pub step: u64,
    pub seed: u64,
    pub params: Vec<(String, Tensor)>,
    pub optimizer: Option<AdamW>,
}

#[derive(Serialize, Deserialize)]
struct ParamHeader {
    name: String,
    shape: Vec<usize>,
}

#[derive(Serialize, Deserialize)]
struct OptimizerHeader {
    config: AdamWConfig,
    step: u64,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Header {
    kind: String,
    config: Value,
    train: Value,
    step: u64,
    seed: u64,
    params: Vec<ParamHeader>,
    optimizer: Option<OptimizerHeader>,
}

/// `run/ckpt.padck` → `run/ckpt.json`.
pub fn sidecar_path(path: &Path) -> PathBuf {
    path.with_extension("json")
}

impl Checkpoint {
    /// Fails with both configurations when `config` differs from the stored one.
    pub fn check_config(&self, kind: &str, config: &Value) -> Result<()> {
        if self.kind != kind {
            return Err(PadError::ConfigMismatch {
                stored: format!("kind {}", self.kind),
                expected: format!("kind {kind}"),
            });
        }
        if &self.config != config {
            return Err(PadError::ConfigMismatch {
                stored: self.config.to_string(),
                expected: config.to_string(),
            });
        }
        Ok(())
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let header = Header {
            kind: self.kind.clone(),
            config: self.config.clone(),
            train: self.train.clone(),
            step: self.step,
            seed: self.seed,
            params: self
                .params
                .iter()
                .map(|(n, t)| ParamHeader {
                    name: n.clone(),
                    shape: t.shape().to_vec(),
                })
                .collect(),
            optimizer: self.optimizer.as_ref().map(|o| OptimizerHeader {
                config: o.config,
                step: o.step,
            }),
        };
        let json = serde_json::to_vec(&header)?;
        let mut payload = Vec::new();
        payload.extend_from_slice(&(json.len() as u32).to_le_bytes());
        payload.extend_from_slice(&json);
        let mut put = |t: &Tensor| t.data().iter().for_each(|v| payload.extend_from_slice(&v.to_le_bytes()));
        self.params.iter().for_each(|(_, t)| put(t));
        if let Some(o) = &self.optimizer {
            o.first.iter().chain(&o.second).for_each(&mut put);
        }
        let mut out = Vec::with_capacity(payload.len() + 18);
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
        out.extend_from_slice(&(payload.len() as u64).to_le_bytes());
        out.extend_from_slice(&payload);
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8], path: &Path) -> Result<Self> {
        let fail = |offset: usize, detail: String| PadError::Format {
            path: path.to_path_buf(),
            offset: offset as u64,
            detail,
        };
        if bytes.len() < 18 {
            return Err(fail(bytes.len(), "truncated header".into()));
        }
        if &bytes[..6] != MAGIC {
            return Err(fail(0, "bad magic".into()));
        }
        let version = u32::from_le_bytes(bytes[6..10].try_into().expect("4 bytes"));
        if version != CHECKPOINT_VERSION {
            return Err(fail(6, format!("unsupported version {version}")));
        }
        let len = u64::from_le_bytes(bytes[10..18].try_into().expect("8 bytes"));
        if len != (bytes.len() - 18) as u64 {
            return Err(fail(10, format!("payload length {len} but {} bytes follow", bytes.len() - 18)));
        }
        let payload = &bytes[18..];
        if payload.len() < 4 {
            return Err(fail(18, "truncated header length".into()));
        }
        let hlen = u32::from_le_bytes(payload[..4].try_into().expect("4 bytes")) as usize;
        if payload.len() - 4 < hlen {
            return Err(fail(18, format!("header length {hlen} exceeds payload")));
        }
        let header: Header =
            serde_json::from_slice(&payload[4..4 + hlen]).map_err(|e| fail(22, format!("header: {e}")))?;
        let mut pos = 4 + hlen;
        let mut take = |shape: &[usize]| -> Result<Tensor> {
            let n: usize = shape.iter().product();
            if (payload.len() - pos) / 8 < n {
                return Err(fail(18 + pos, format!("truncated tensor of {n} values")));
            }
            let data = payload[pos..pos + 8 * n]
                .chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
                .collect();
            pos += 8 * n;
            Ok(Tensor::new(shape.to_vec(), data)?)
        };
        let mut params = Vec::with_capacity(header.params.len());
        for p in &header.params {
            params.push((p.name.clone(), take(&p.shape)?));
        }
        let optimizer = match &header.optimizer {
            None => None,
            Some(o) => {
                let first = header.params.iter().map(|p| take(&p.shape)).collect::<Result<Vec<_>>>()?;
                let second = header.params.iter().map(|p| take(&p.shape)).collect::<Result<Vec<_>>>()?;
                Some(AdamW {
                    config: o.config,
                    step: o.step,
                    first,
                    second,
                })
            }
        };
        if pos != payload.len() {
            return Err(fail(18 + pos, format!("{} trailing bytes", payload.len() - pos)));
        }
        Ok(Self {
            kind: header.kind,
            config: header.config,
            train: header.train,
            step: header.step,
            seed: header.seed,
            params,
            optimizer,
        })
    }

    /// Writes the binary file and a readable JSON sidecar next to it.
    pub fn save(&self, path: &Path) -> Result<()> {
        let tmp = path.with_extension("partial");
        fs::write(&tmp, self.to_bytes()?).map_err(io_err(&tmp))?;
        fs::rename(&tmp, path).map_err(io_err(path))?;
        let side = serde_json::json!({
            "kind": self.kind,
            "config": self.config,
            "train": self.train,
            "step": self.step,
            "seed": self.seed,
        });
        let sp = sidecar_path(path);
        fs::write(&sp, serde_json::to_string_pretty(&side)?).map_err(io_err(sp))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = fs::read(path).map_err(io_err(path))?;
        Self::from_bytes(&bytes, path)
    }
}
