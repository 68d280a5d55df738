use std::fs;
use std::path::{Path, PathBuf};

use pad_autodiff::Tensor;
use serde::{Deserialize, Serialize};

use crate::error::{io_err, PadError, Result};

const MAGIC: &[u8; 6] = b"PADDS1";

/// One recorded episode: `L` states and, optionally, the `L − 1` actions
/// between them.
#[derive(Clone, Debug, PartialEq)]
pub struct Trajectory {
    states: Tensor,
    actions: Option<Tensor>,
}

impl Trajectory {
    /// `states` is `[L, state_dim]`; `actions`, when given, `[L − 1, action_dim]`.
    pub fn new(states: Tensor, actions: Option<Tensor>) -> Result<Self> {
        if states.shape().len() != 2 || states.shape()[0] == 0 {
            return Err(PadError::Data(format!("states must be [L >= 1, dim], got {:?}", states.shape())));
        }
        if !states.is_finite() {
            return Err(PadError::Data("trajectory holds non-finite states".into()));
        }
        if let Some(a) = &actions {
            if a.shape().len() != 2 || a.shape()[0] + 1 != states.shape()[0] || a.shape()[1] == 0 {
                return Err(PadError::Data(format!(
                    "actions {:?} not aligned with {} states",
                    a.shape(),
                    states.shape()[0]
                )));
            }
            if !a.is_finite() {
                return Err(PadError::Data("trajectory holds non-finite actions".into()));
            }
        }
        Ok(Self { states, actions })
    }

    pub fn len(&self) -> usize {
        self.states.shape()[0]
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn state_dim(&self) -> usize {
        self.states.shape()[1]
    }

    pub fn states(&self) -> &Tensor {
        &self.states
    }

    pub fn actions(&self) -> Option<&Tensor> {
        self.actions.as_ref()
    }

    pub fn state(&self, t: usize) -> &[f64] {
        let d = self.state_dim();
        &self.states.data()[t * d..(t + 1) * d]
    }

    pub fn action(&self, t: usize) -> Option<&[f64]> {
        self.actions.as_ref().map(|a| {
            let d = a.shape()[1];
            &a.data()[t * d..(t + 1) * d]
        })
    }
}

/// Provenance recorded next to a dataset file.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct DatasetMeta {
    pub generator: String,
    pub seed: u64,
    pub environment: String,
}

/// Trajectories sharing one state (and action) dimension.
#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    state_dim: usize,
    /// Zero when the dataset has no actions.
    action_dim: usize,
    trajectories: Vec<Trajectory>,
}

impl Dataset {
    pub fn new(state_dim: usize, action_dim: usize, trajectories: Vec<Trajectory>) -> Result<Self> {
        if state_dim == 0 {
            return Err(PadError::Data("state dim must be positive".into()));
        }
        for (i, t) in trajectories.iter().enumerate() {
            if t.state_dim() != state_dim {
                return Err(PadError::Data(format!(
                    "trajectory {i} has state dim {}, dataset {state_dim}",
                    t.state_dim()
                )));
            }
            let a = t.actions().map_or(0, |a| a.shape()[1]);
            if a != action_dim {
                return Err(PadError::Data(format!(
                    "trajectory {i} has action dim {a}, dataset {action_dim}"
                )));
            }
        }
        Ok(Self {
            state_dim,
            action_dim,
            trajectories,
        })
    }

    pub fn state_dim(&self) -> usize {
        self.state_dim
    }

    pub fn action_dim(&self) -> usize {
        self.action_dim
    }

    pub fn has_actions(&self) -> bool {
        self.action_dim > 0
    }

    pub fn trajectories(&self) -> &[Trajectory] {
        &self.trajectories
    }

    pub fn len(&self) -> usize {
        self.trajectories.len()
    }

    pub fn is_empty(&self) -> bool {
        self.trajectories.is_empty()
    }

    /// Number of state transitions across all trajectories.
    pub fn transitions(&self) -> usize {
        self.trajectories.iter().map(|t| t.len() - 1).sum()
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        for v in [self.state_dim, self.action_dim, self.trajectories.len()] {
            out.extend_from_slice(&(v as u32).to_le_bytes());
        }
        for t in &self.trajectories {
            out.extend_from_slice(&(t.len() as u32).to_le_bytes());
            for v in t.states.data() {
                out.extend_from_slice(&v.to_le_bytes());
            }
            if self.action_dim > 0 {
                if let Some(a) = &t.actions {
                    for v in a.data() {
                        out.extend_from_slice(&v.to_le_bytes());
                    }
                }
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8], path: &Path) -> Result<Self> {
        let mut r = Reader { bytes, pos: 0, path };
        let magic = r.take(MAGIC.len(), "magic")?.to_vec();
        if magic != MAGIC {
            return Err(r.error(0, format!("bad magic {:?}", String::from_utf8_lossy(&magic))));
        }
        let state_dim = r.u32("state dim")? as usize;
        let action_dim = r.u32("action dim")? as usize;
        let count = r.u32("trajectory count")? as usize;
        if state_dim == 0 {
            return Err(r.error(MAGIC.len() as u64, "state dim is zero".into()));
        }
        let mut trajectories = Vec::with_capacity(count.min(1 << 16));
        for i in 0..count {
            let at = r.pos as u64;
            let len = r.u32("trajectory length")? as usize;
            if len == 0 {
                return Err(r.error(at, format!("trajectory {i} is empty")));
            }
            let states = r.f64s(len * state_dim, "states")?;
            let states = Tensor::new(vec![len, state_dim], states)?;
            let actions = if action_dim > 0 {
                let a = r.f64s((len - 1) * action_dim, "actions")?;
                Some(Tensor::new(vec![len - 1, action_dim], a)?)
            } else {
                None
            };
            let t = Trajectory::new(states, actions).map_err(|e| r.error(at, e.to_string()))?;
            trajectories.push(t);
        }
        if r.pos != bytes.len() {
            return Err(r.error(r.pos as u64, format!("{} trailing bytes", bytes.len() - r.pos)));
        }
        Self::new(state_dim, action_dim, trajectories)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_bytes()).map_err(io_err(path))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = fs::read(path).map_err(io_err(path))?;
        Self::from_bytes(&bytes, path)
    }
}

/// `data.padds` → `data.meta.json`.
pub fn meta_path(path: &Path) -> PathBuf {
    path.with_extension("meta.json")
}

pub fn save_dataset(path: &Path, dataset: &Dataset, meta: &DatasetMeta) -> Result<()> {
    dataset.save(path)?;
    let side = meta_path(path);
    fs::write(&side, serde_json::to_string_pretty(meta)?).map_err(io_err(side))
}

pub fn load_meta(path: &Path) -> Result<DatasetMeta> {
    let side = meta_path(path);
    let text = fs::read_to_string(&side).map_err(io_err(&side))?;
    Ok(serde_json::from_str(&text)?)
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
    path: &'a Path,
}

impl Reader<'_> {
    fn error(&self, offset: u64, detail: String) -> PadError {
        PadError::Format {
            path: self.path.to_path_buf(),
            offset,
            detail,
        }
    }

    fn take(&mut self, n: usize, what: &str) -> Result<&[u8]> {
        if self.bytes.len() - self.pos < n {
            return Err(self.error(
                self.pos as u64,
                format!("truncated {what}: need {n} bytes, {} left", self.bytes.len() - self.pos),
            ));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        let b = self.take(4, what)?;
        Ok(u32::from_le_bytes(b.try_into().expect("4 bytes")))
    }

    fn f64s(&mut self, n: usize, what: &str) -> Result<Vec<f64>> {
        let len = n.checked_mul(8).ok_or_else(|| self.error(self.pos as u64, format!("{what} size overflows")))?;
        let b = self.take(len, what)?;
        Ok(b.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes"))).collect())
    }
}
