//! Flat dotted-key experiment configuration.
//!
//! Config files hold one `key = value` per line; `#` starts a comment and
//! blank lines are skipped. Lists are comma separated; proportions also
//! accept colons so ratio strings like `7:2:1` read naturally. Unknown
//! keys are rejected so typos fail loudly.
//!
//! Recognized keys:
//!
//! | key                  | meaning                                   | default |
//! |----------------------|-------------------------------------------|---------|
//! | method               | training method (see [`Method`])          | inclusivefl |
//! | seed                 | rng seed for a single run                 | 0 |
//! | seeds                | list of seeds for a multi-seed run        | empty (use `seed`) |
//! | rounds               | communication rounds T                    | 50 |
//! | clients.count        | number of clients K (IID mode)            | 30 |
//! | sample.fraction      | fraction of the pool sampled per round    | 0.3 |
//! | topology.depths      | encoder depths per tier, ascending        | 2,4,6 |
//! | topology.proportions | tier assignment weights                   | 1,1,1 |
//! | exclude.tiers        | tiers removed before training             | empty |
//! | local.steps          | local SGD steps per round                 | 4 |
//! | local.batch          | local batch size                          | 16 |
//! | local.lr             | local SGD learning rate                   | 0.1 |
//! | momentum.beta        | distillation blend weight                 | 0.2 IID, 0.5 silo |
//! | fedadam.beta1        | server Adam first-moment decay            | 0.9 |
//! | fedadam.beta2        | server Adam second-moment decay           | 0.999 |
//! | fedadam.eta          | server Adam step size                     | 0.03 |
//! | fedadam.tau          | server Adam denominator offset            | 1e-8 |
//! | model.dim            | hidden width                              | 16 |
//! | model.activation     | tanh, relu, or linear                     | tanh |
//! | data.mode            | synthetic-iid, silo, or file              | synthetic-iid |
//! | data.n               | samples (total in IID mode, per silo)     | 3000 |
//! | data.input_dim       | input dimension                           | 8 |
//! | data.classes         | class count                               | 4 |
//! | data.spread          | within-class standard deviation           | 1.0 |
//! | data.label_noise     | label corruption fraction                 | 0.0 |
//! | data.warp_depth      | random nonlinear warp rounds              | 3 |
//! | data.eval_fraction   | shared held-out fraction (IID/file mode)  | 0.2 |
//! | data.file            | dataset file path (file mode)             | unset |
//! | data.silo_classes    | per-silo class counts (silo mode)         | `data.classes` everywhere |
//! | data.silo_rotation   | silo-to-tier rotation offset              | 0 |
//! | eval.interval        | evaluate every this many rounds           | 1 |
//! | parallel             | run local updates on a thread pool        | false |
//! | output.dir           | where result files go                     | unset |

use std::collections::BTreeMap;
use std::path::PathBuf;

use crate::error::{Error, Result};
use crate::model::Activation;
use crate::topology::TierTopology;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Method {
    /// Tiered training with momentum distillation and layer sharing.
    InclusiveFl,
    /// Layer sharing only; no momentum machinery.
    InclusiveFlNoMd,
    /// Momentum machinery only; tiers share nothing but momentum.
    InclusiveFlStar,
    /// Every client trains the deepest model.
    AllLarge,
    /// Every client trains the shallowest model.
    AllSmall,
    /// Only strongest-tier clients participate.
    ExclusiveFl,
    /// Per-client training, no aggregation (silo mode only).
    Local,
    /// Full-depth width-cropped models with coverage-mean averaging.
    HeteroFl,
}

impl Method {
    pub const ALL: [Method; 8] = [
        Method::InclusiveFl,
        Method::InclusiveFlNoMd,
        Method::InclusiveFlStar,
        Method::AllLarge,
        Method::AllSmall,
        Method::ExclusiveFl,
        Method::Local,
        Method::HeteroFl,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Method::InclusiveFl => "inclusivefl",
            Method::InclusiveFlNoMd => "inclusivefl-no-md",
            Method::InclusiveFlStar => "inclusivefl-star",
            Method::AllLarge => "alllarge",
            Method::AllSmall => "allsmall",
            Method::ExclusiveFl => "exclusivefl",
            Method::Local => "local",
            Method::HeteroFl => "heterofl",
        }
    }

    pub fn from_name(s: &str) -> Result<Method> {
        Method::ALL
            .into_iter()
            .find(|m| m.name() == s)
            .ok_or_else(|| {
                let names: Vec<&str> = Method::ALL.iter().map(|m| m.name()).collect();
                Error::Config(format!("unknown method '{s}', expected one of {}", names.join(", ")))
            })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DataMode {
    SyntheticIid,
    Silo,
    File,
}

impl DataMode {
    pub fn name(self) -> &'static str {
        match self {
            DataMode::SyntheticIid => "synthetic-iid",
            DataMode::Silo => "silo",
            DataMode::File => "file",
        }
    }

    fn from_name(s: &str) -> Result<DataMode> {
        match s {
            "synthetic-iid" => Ok(DataMode::SyntheticIid),
            "silo" => Ok(DataMode::Silo),
            "file" => Ok(DataMode::File),
            _ => Err(Error::Config(format!(
                "unknown data mode '{s}', expected synthetic-iid, silo, or file"
            ))),
        }
    }
}

#[derive(Debug, Clone)]
pub struct DataConfig {
    pub mode: DataMode,
    pub n: usize,
    pub input_dim: usize,
    pub classes: usize,
    pub spread: f64,
    pub label_noise: f64,
    pub warp_depth: usize,
    pub eval_fraction: f64,
    pub file: Option<PathBuf>,
    pub silo_classes: Vec<usize>,
    pub silo_rotation: usize,
}

#[derive(Debug, Clone)]
pub struct ExperimentConfig {
    pub method: Method,
    pub seed: u64,
    pub seeds: Vec<u64>,
    pub rounds: usize,
    pub clients: usize,
    pub fraction: f64,
    pub depths: Vec<usize>,
    pub proportions: Vec<f64>,
    pub exclude: Vec<usize>,
    pub steps: usize,
    pub batch: usize,
    pub lr: f64,
    /// None means mode-dependent default (0.2 IID, 0.5 silo).
    pub beta: Option<f64>,
    pub beta1: f64,
    pub beta2: f64,
    pub eta: f64,
    pub tau: f64,
    pub dim: usize,
    pub activation: Activation,
    pub data: DataConfig,
    pub eval_interval: usize,
    pub parallel: bool,
    pub out_dir: Option<PathBuf>,
}

impl Default for ExperimentConfig {
    fn default() -> ExperimentConfig {
        ExperimentConfig {
            method: Method::InclusiveFl,
            seed: 0,
            seeds: Vec::new(),
            rounds: 50,
            clients: 30,
            fraction: 0.3,
            depths: vec![2, 4, 6],
            proportions: vec![1.0, 1.0, 1.0],
            exclude: Vec::new(),
            steps: 4,
            batch: 16,
            lr: 0.1,
            beta: None,
            beta1: 0.9,
            beta2: 0.999,
            eta: 0.03,
            tau: 1e-8,
            dim: 16,
            activation: Activation::Tanh,
            data: DataConfig {
                mode: DataMode::SyntheticIid,
                n: 3000,
                input_dim: 8,
                classes: 4,
                spread: 1.0,
                label_noise: 0.0,
                warp_depth: 3,
                eval_fraction: 0.2,
                file: None,
                silo_classes: Vec::new(),
                silo_rotation: 0,
            },
            eval_interval: 1,
            parallel: false,
            out_dir: None,
        }
    }
}

fn num<T: std::str::FromStr>(key: &str, v: &str) -> Result<T> {
    v.trim()
        .parse()
        .map_err(|_| Error::Config(format!("key '{key}': cannot parse '{v}'")))
}

fn list<T: std::str::FromStr>(key: &str, v: &str) -> Result<Vec<T>> {
    let v = v.trim();
    if v.is_empty() {
        return Ok(Vec::new());
    }
    v.split([',', ':']).map(|part| num(key, part)).collect()
}

fn boolean(key: &str, v: &str) -> Result<bool> {
    match v.trim() {
        "true" | "1" | "yes" => Ok(true),
        "false" | "0" | "no" => Ok(false),
        other => Err(Error::Config(format!("key '{key}': cannot parse '{other}' as a boolean"))),
    }
}

impl ExperimentConfig {
    /// Apply one dotted key. Used both by the file parser and by CLI
    /// overrides, so every setting has exactly one spelling.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let v = value.trim();
        match key {
            "method" => self.method = Method::from_name(v)?,
            "seed" => self.seed = num(key, v)?,
            "seeds" => self.seeds = list(key, v)?,
            "rounds" => self.rounds = num(key, v)?,
            "clients.count" => self.clients = num(key, v)?,
            "sample.fraction" => self.fraction = num(key, v)?,
            "topology.depths" => self.depths = list(key, v)?,
            "topology.proportions" => self.proportions = list(key, v)?,
            "exclude.tiers" => self.exclude = list(key, v)?,
            "local.steps" => self.steps = num(key, v)?,
            "local.batch" => self.batch = num(key, v)?,
            "local.lr" => self.lr = num(key, v)?,
            "momentum.beta" => self.beta = Some(num(key, v)?),
            "fedadam.beta1" => self.beta1 = num(key, v)?,
            "fedadam.beta2" => self.beta2 = num(key, v)?,
            "fedadam.eta" => self.eta = num(key, v)?,
            "fedadam.tau" => self.tau = num(key, v)?,
            "model.dim" => self.dim = num(key, v)?,
            "model.activation" => self.activation = Activation::from_name(v)?,
            "data.mode" => self.data.mode = DataMode::from_name(v)?,
            "data.n" => self.data.n = num(key, v)?,
            "data.input_dim" => self.data.input_dim = num(key, v)?,
            "data.classes" => self.data.classes = num(key, v)?,
            "data.spread" => self.data.spread = num(key, v)?,
            "data.label_noise" => self.data.label_noise = num(key, v)?,
            "data.warp_depth" => self.data.warp_depth = num(key, v)?,
            "data.eval_fraction" => self.data.eval_fraction = num(key, v)?,
            "data.file" => self.data.file = (!v.is_empty()).then(|| PathBuf::from(v)),
            "data.silo_classes" => self.data.silo_classes = list(key, v)?,
            "data.silo_rotation" => self.data.silo_rotation = num(key, v)?,
            "eval.interval" => self.eval_interval = num(key, v)?,
            "parallel" => self.parallel = boolean(key, v)?,
            "output.dir" => self.out_dir = (!v.is_empty()).then(|| PathBuf::from(v)),
            _ => return Err(Error::Config(format!("unknown config key '{key}'"))),
        }
        Ok(())
    }

    /// The distillation blend weight after mode-dependent defaulting.
    pub fn effective_beta(&self) -> f64 {
        self.beta.unwrap_or(match self.data.mode {
            DataMode::Silo => 0.5,
            _ => 0.2,
        })
    }

    /// Seeds this config runs: the `seeds` list, or the single `seed`.
    pub fn effective_seeds(&self) -> Vec<u64> {
        if self.seeds.is_empty() {
            vec![self.seed]
        } else {
            self.seeds.clone()
        }
    }

    pub fn topology(&self) -> Result<TierTopology> {
        TierTopology::new(&self.depths, &self.proportions)
    }

    pub fn validate(&self) -> Result<()> {
        let topo = self.topology()?;
        if !(self.fraction > 0.0 && self.fraction <= 1.0) {
            return Err(Error::Config(format!(
                "sample.fraction must lie in (0, 1], got {}",
                self.fraction
            )));
        }
        if let Some(beta) = self.beta {
            if !(0.0..=1.0).contains(&beta) {
                return Err(Error::Config(format!(
                    "momentum.beta must lie in [0, 1], got {beta}"
                )));
            }
        }
        for (name, v) in [("fedadam.beta1", self.beta1), ("fedadam.beta2", self.beta2)] {
            if !(0.0..1.0).contains(&v) {
                return Err(Error::Config(format!("{name} must lie in [0, 1), got {v}")));
            }
        }
        if !(self.eta > 0.0) {
            return Err(Error::Config(format!("fedadam.eta must be > 0, got {}", self.eta)));
        }
        if !(self.tau > 0.0) {
            return Err(Error::Config(format!("fedadam.tau must be > 0, got {}", self.tau)));
        }
        if !(self.lr >= 0.0) {
            return Err(Error::Config(format!("local.lr must be >= 0, got {}", self.lr)));
        }
        if self.steps == 0 || self.batch == 0 {
            return Err(Error::Config("local.steps and local.batch must be positive".into()));
        }
        if self.clients == 0 {
            return Err(Error::Config("clients.count must be positive".into()));
        }
        if self.eval_interval == 0 {
            return Err(Error::Config("eval.interval must be positive".into()));
        }
        if self.dim == 0 {
            return Err(Error::Config("model.dim must be positive".into()));
        }
        let k = topo.num_tiers();
        if let Some(&bad) = self.exclude.iter().find(|&&j| j >= k) {
            return Err(Error::Config(format!(
                "exclude.tiers names tier {bad} but only {k} tiers exist"
            )));
        }
        match self.data.mode {
            DataMode::SyntheticIid => {
                if !(self.data.eval_fraction > 0.0 && self.data.eval_fraction < 1.0) {
                    return Err(Error::Config(format!(
                        "data.eval_fraction must lie in (0, 1), got {}",
                        self.data.eval_fraction
                    )));
                }
            }
            DataMode::File => {
                if self.data.file.is_none() {
                    return Err(Error::Config("data.mode = file requires data.file".into()));
                }
                if !(self.data.eval_fraction > 0.0 && self.data.eval_fraction < 1.0) {
                    return Err(Error::Config(format!(
                        "data.eval_fraction must lie in (0, 1), got {}",
                        self.data.eval_fraction
                    )));
                }
            }
            DataMode::Silo => {
                if !self.data.silo_classes.is_empty() && self.data.silo_classes.len() != k {
                    return Err(Error::Config(format!(
                        "data.silo_classes lists {} counts for {k} tiers",
                        self.data.silo_classes.len()
                    )));
                }
            }
        }
        if self.method == Method::Local && self.data.mode != DataMode::Silo {
            return Err(Error::Config(
                "method local trains isolated silos and requires data.mode = silo".into(),
            ));
        }
        if self.method == Method::HeteroFl {
            let counts = self.silo_class_counts();
            if counts.windows(2).any(|w| w[0] != w[1]) {
                return Err(Error::Config(
                    "method heterofl shares one classifier head and needs uniform class counts"
                        .into(),
                ));
            }
        }
        Ok(())
    }

    /// Per-tier class counts (uniform unless silo mode overrides them).
    pub fn silo_class_counts(&self) -> Vec<usize> {
        let k = self.depths.len();
        if self.data.mode == DataMode::Silo && !self.data.silo_classes.is_empty() {
            self.data.silo_classes.clone()
        } else {
            vec![self.data.classes; k]
        }
    }

    /// Every setting as dotted key-value strings, for the summary echo.
    /// `output.dir` is deliberately absent so reports from different
    /// directories stay comparable.
    pub fn to_kv(&self) -> BTreeMap<String, String> {
        let join_u = |v: &[usize]| v.iter().map(|x| x.to_string()).collect::<Vec<_>>().join(",");
        let join_f = |v: &[f64]| v.iter().map(|x| x.to_string()).collect::<Vec<_>>().join(",");
        let join_s = |v: &[u64]| v.iter().map(|x| x.to_string()).collect::<Vec<_>>().join(",");
        let mut kv = BTreeMap::new();
        let mut put = |k: &str, v: String| {
            kv.insert(k.to_string(), v);
        };
        put("method", self.method.name().to_string());
        put("seed", self.seed.to_string());
        put("seeds", join_s(&self.seeds));
        put("rounds", self.rounds.to_string());
        put("clients.count", self.clients.to_string());
        put("sample.fraction", self.fraction.to_string());
        put("topology.depths", join_u(&self.depths));
        put("topology.proportions", join_f(&self.proportions));
        put("exclude.tiers", join_u(&self.exclude));
        put("local.steps", self.steps.to_string());
        put("local.batch", self.batch.to_string());
        put("local.lr", self.lr.to_string());
        put("momentum.beta", self.effective_beta().to_string());
        put("fedadam.beta1", self.beta1.to_string());
        put("fedadam.beta2", self.beta2.to_string());
        put("fedadam.eta", self.eta.to_string());
        put("fedadam.tau", self.tau.to_string());
        put("model.dim", self.dim.to_string());
        put("model.activation", self.activation.name().to_string());
        put("data.mode", self.data.mode.name().to_string());
        put("data.n", self.data.n.to_string());
        put("data.input_dim", self.data.input_dim.to_string());
        put("data.classes", self.data.classes.to_string());
        put("data.spread", self.data.spread.to_string());
        put("data.label_noise", self.data.label_noise.to_string());
        put("data.warp_depth", self.data.warp_depth.to_string());
        put("data.eval_fraction", self.data.eval_fraction.to_string());
        put(
            "data.file",
            self.data.file.as_ref().map(|p| p.display().to_string()).unwrap_or_default(),
        );
        put("data.silo_classes", join_u(&self.data.silo_classes));
        put("data.silo_rotation", self.data.silo_rotation.to_string());
        put("eval.interval", self.eval_interval.to_string());
        put("parallel", self.parallel.to_string());
        kv
    }
}

/// Apply config file lines onto an existing config without validating,
/// so callers can layer overrides on top before the final check.
pub fn apply_config_text(cfg: &mut ExperimentConfig, text: &str) -> Result<()> {
    for (idx, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let Some((key, value)) = line.split_once('=') else {
            return Err(Error::Config(format!(
                "line {}: expected 'key = value', got '{raw}'",
                idx + 1
            )));
        };
        cfg.set(key.trim(), value)
            .map_err(|e| Error::Config(format!("line {}: {e}", idx + 1)))?;
    }
    Ok(())
}

/// Parse a config file body. Later lines override earlier ones.
pub fn parse_config(text: &str) -> Result<ExperimentConfig> {
    let mut cfg = ExperimentConfig::default();
    apply_config_text(&mut cfg, text)?;
    cfg.validate()?;
    Ok(cfg)
}
