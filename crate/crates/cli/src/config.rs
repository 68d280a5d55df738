use std::path::{Path, PathBuf};

use anyhow::{bail, Context as _, Result};
use pad_core::env::{EnvKind, Regime};
use pad_core::models::PadConfig;
use pad_core::planning::{PlanSettings, ReplanController};
use pad_core::training::{InvDynConfig, TrainConfig};
use pad_core::PadError;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use toml::{Table, Value};

/// Environment variable overriding `paths.root`.
pub const RUN_DIR_ENV: &str = "PAD_RUN_DIR";

/// The on-disk run configuration. `model`, `train` and `invdyn` are partial
/// overrides on top of the presets; everything is checked when resolving.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_env")]
    pub env: String,
    #[serde(default = "default_regime")]
    pub regime: String,
    #[serde(default)]
    pub data: DataSection,
    #[serde(default)]
    pub model: Table,
    #[serde(default)]
    pub train: Table,
    #[serde(default)]
    pub invdyn: Table,
    #[serde(default)]
    pub plan: PlanSection,
    #[serde(default)]
    pub eval: EvalSection,
    #[serde(default)]
    pub paths: PathsSection,
}

fn default_env() -> String {
    "pointmass".into()
}

fn default_regime() -> String {
    "noisy".into()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DataSection {
    pub episodes: usize,
    /// Dataset file; defaults to a name derived from env, regime, size and seed.
    pub path: Option<PathBuf>,
}

impl Default for DataSection {
    fn default() -> Self {
        Self {
            episodes: 500,
            path: None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PlanSection {
    pub candidates: usize,
    pub top_k: usize,
    pub refine_steps: usize,
    pub replan_interval: usize,
}

impl Default for PlanSection {
    fn default() -> Self {
        Self {
            candidates: 128,
            top_k: 5,
            refine_steps: 2,
            replan_interval: 1,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvalSection {
    pub episodes_per_task: usize,
    pub seeds: Vec<u64>,
    pub tasks: Vec<usize>,
    pub max_steps: usize,
}

impl Default for EvalSection {
    fn default() -> Self {
        Self {
            episodes_per_task: 20,
            seeds: vec![0, 1, 2],
            tasks: (0..pad_core::env::TASK_FAMILIES).collect(),
            max_steps: pad_core::env::MAX_EPISODE_STEPS,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PathsSection {
    pub root: PathBuf,
}

impl Default for PathsSection {
    fn default() -> Self {
        Self { root: "runs".into() }
    }
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            env: default_env(),
            regime: default_regime(),
            data: DataSection::default(),
            model: Table::new(),
            train: Table::new(),
            invdyn: Table::new(),
            plan: PlanSection::default(),
            eval: EvalSection::default(),
            paths: PathsSection::default(),
        }
    }
}

/// Everything a subcommand needs, fully validated.
#[derive(Clone, Debug)]
pub struct Resolved {
    pub raw: RunConfig,
    pub env: EnvKind,
    pub regime: Regime,
    pub model: PadConfig,
    pub train: TrainConfig,
    pub invdyn: InvDynConfig,
    pub plan: PlanSettings,
    pub replan_interval: usize,
    pub root: PathBuf,
}

/// Reads `path` (if any) as a TOML table and applies `key.path=value`
/// overrides; values parse as TOML, falling back to bare strings.
pub fn load_table(path: Option<&Path>, overrides: &[(String, String)]) -> Result<Table> {
    let mut table = match path {
        Some(p) => {
            let text = std::fs::read_to_string(p).with_context(|| format!("reading config {}", p.display()))?;
            text.parse::<Table>().map_err(|e| PadError::Config(format!("{}: {e}", p.display())))?
        }
        None => Table::new(),
    };
    for (key, value) in overrides {
        set_path(&mut table, key, parse_value(value))?;
    }
    Ok(table)
}

fn parse_value(text: &str) -> Value {
    format!("v = {text}")
        .parse::<Table>()
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| Value::String(text.to_string()))
}

pub fn set_path(table: &mut Table, key: &str, value: Value) -> Result<()> {
    let parts: Vec<&str> = key.split('.').collect();
    if parts.iter().any(|p| p.is_empty()) {
        bail!(PadError::Config(format!("malformed key {key:?}")));
    }
    let mut cur = table;
    for part in &parts[..parts.len() - 1] {
        let entry = cur.entry(part.to_string()).or_insert_with(|| Value::Table(Table::new()));
        cur = match entry {
            Value::Table(t) => t,
            _ => bail!(PadError::Config(format!("{key:?}: {part:?} is not a section"))),
        };
    }
    cur.insert(parts[parts.len() - 1].to_string(), value);
    Ok(())
}

/// Deep-merges `over` onto the serialised `base` and reads the result back,
/// so unknown keys fail with the target type's own error.
fn overlay<T: Serialize + DeserializeOwned>(base: &T, over: &Table, section: &str) -> Result<T> {
    fn merge(into: &mut Table, from: &Table) {
        for (k, v) in from {
            match (into.get_mut(k), v) {
                (Some(Value::Table(a)), Value::Table(b)) => merge(a, b),
                _ => {
                    into.insert(k.clone(), v.clone());
                }
            }
        }
    }
    let mut table = Table::try_from(base).context("serialising defaults")?;
    merge(&mut table, over);
    Ok(table
        .try_into()
        .map_err(|e| PadError::Config(format!("[{section}]: {}", e.message())))?)
}

impl RunConfig {
    pub fn from_table(table: Table) -> Result<Self> {
        Ok(table
            .try_into()
            .map_err(|e: toml::de::Error| PadError::Config(e.message().to_string()))?)
    }

    pub fn to_toml(&self) -> Result<String> {
        Ok(toml::to_string(self)?)
    }

    pub fn resolve(&self) -> Result<Resolved> {
        let env: EnvKind = self.env.parse()?;
        let regime: Regime = self.regime.parse()?;
        let e = env.build();
        let (sd, ad) = (e.state_dim(), e.action_dim());

        let mut model_over = self.model.clone();
        let base = match model_over.remove("preset").as_ref().map(|v| v.as_str()) {
            None | Some(Some("desk")) => PadConfig::desk(sd, ad),
            Some(Some("tiny")) => PadConfig::tiny(sd, ad),
            Some(other) => bail!(PadError::Config(format!("[model] unknown preset {other:?} (desk, tiny)"))),
        };
        for fixed in ["state_dim", "action_dim"] {
            if model_over.contains_key(fixed) {
                bail!(PadError::Config(format!("[model] {fixed} follows from the environment")));
            }
        }
        let model = overlay(&base, &model_over, "model")?;
        model.validate()?;

        let base = TrainConfig {
            seed: self.seed,
            ..TrainConfig::default()
        };
        let mut train = overlay(&base, &self.train, "train")?;
        // the cosine schedule spans the run unless set explicitly
        let schedule_len_set = matches!(self.train.get("schedule"), Some(Value::Table(t)) if t.contains_key("total_steps"));
        if !schedule_len_set {
            train.schedule.total_steps = train.steps;
        }
        train.validate()?;

        let base = InvDynConfig {
            seed: self.seed,
            ..InvDynConfig::default()
        };
        let mut invdyn = overlay(&base, &self.invdyn, "invdyn")?;
        let schedule_len_set = matches!(self.invdyn.get("schedule"), Some(Value::Table(t)) if t.contains_key("total_steps"));
        if !schedule_len_set {
            invdyn.schedule.total_steps = invdyn.steps;
        }
        if invdyn.steps == 0 || invdyn.batch_size == 0 {
            bail!(PadError::Config("[invdyn] steps and batch_size must be >= 1".into()));
        }

        let plan = PlanSettings {
            candidates: self.plan.candidates,
            top_k: self.plan.top_k,
            refine_steps: self.plan.refine_steps,
            use_projector: train.use_projector,
        };
        plan.validate()?;
        ReplanController {
            interval: self.plan.replan_interval,
            max_steps: self.eval.max_steps,
        }
        .validate(model.horizon)?;
        if self.data.episodes == 0 || self.eval.episodes_per_task == 0 || self.eval.seeds.is_empty() || self.eval.tasks.is_empty() {
            bail!(PadError::Config("need at least one episode, evaluation seed and task".into()));
        }
        if let Some(t) = self.eval.tasks.iter().find(|&&t| t >= pad_core::env::TASK_FAMILIES) {
            bail!(PadError::Config(format!("[eval] task {t} out of range 0..{}", pad_core::env::TASK_FAMILIES)));
        }

        let root = std::env::var_os(RUN_DIR_ENV)
            .filter(|v| !v.is_empty())
            .map(PathBuf::from)
            .unwrap_or_else(|| self.paths.root.clone());
        Ok(Resolved {
            raw: self.clone(),
            env,
            regime,
            model,
            train,
            invdyn,
            plan,
            replan_interval: self.plan.replan_interval,
            root,
        })
    }
}

impl Resolved {
    /// Hash of everything that determines the trained planner, seeds
    /// excluded (the seed is part of the directory name instead). The
    /// decoder's settings are left out so it can be retrained in place.
    pub fn identity_hash(&self) -> String {
        let mut train = self.train.clone();
        train.seed = 0;
        let identity = serde_json::json!({
            "env": self.env.name(),
            "regime": self.regime.name(),
            "episodes": self.raw.data.episodes,
            "data_path": self.raw.data.path,
            "model": self.model,
            "train": train,
        });
        let digest = Sha256::digest(identity.to_string().as_bytes());
        digest.iter().take(6).map(|b| format!("{b:02x}")).collect()
    }

    pub fn seed(&self) -> u64 {
        self.raw.seed
    }

    pub fn run_dir(&self) -> PathBuf {
        self.root.join(format!(
            "{}-{}-{}-s{}",
            self.env.name(),
            self.regime.name(),
            self.identity_hash(),
            self.seed()
        ))
    }

    pub fn data_path(&self) -> PathBuf {
        self.raw.data.path.clone().unwrap_or_else(|| {
            self.root.join("data").join(format!(
                "{}-{}-e{}-s{}.padds",
                self.env.name(),
                self.regime.name(),
                self.raw.data.episodes,
                self.seed()
            ))
        })
    }

    pub fn train_dir(&self) -> PathBuf {
        self.run_dir().join("train")
    }

    pub fn planner_path(&self) -> PathBuf {
        self.train_dir().join(pad_core::training::LATEST_CHECKPOINT)
    }

    pub fn invdyn_path(&self) -> PathBuf {
        self.run_dir().join("invdyn.padck")
    }
}
