//! Experiment configuration.
//!
//! Every key is optional; the defaults below are what an empty file means.
//! Unknown keys are rejected so that typos surface as config errors.

use std::path::PathBuf;

use hesit::curriculum::CurriculumConfig;
use hesit::datagen::{ShiftMode, StreamSpec};
use hesit::influence::{CgConfig, HesitVariant, LissaConfig, Method};
use hesit::selection::Strategy;
use hesit::{Activation, LrSchedule, ModelSpec, TrainConfig};
use serde::{Deserialize, Serialize};

use crate::ConfigError;

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Config {
    /// Master seed; `--seed` overrides it.
    pub seed: u64,
    pub data: DataSection,
    pub model: ModelSection,
    pub train: TrainSection,
    pub influence: InfluenceSection,
    pub selection: SelectionSection,
    pub compare: CompareSection,
    pub timing: TimingSection,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataSection {
    /// Load the task stream from this CSV instead of generating it.
    pub path: Option<PathBuf>,
    pub tasks: usize,
    pub input_dim: usize,
    pub classes: usize,
    /// Examples per task, before the split.
    pub task_size: usize,
    pub separation: f64,
    /// `class_split`, `mean_shift` or `rotation`.
    pub shift: String,
    /// Fraction of training labels flipped in every task.
    pub noise: f64,
    /// Train / validation / test fractions.
    pub split: [f64; 3],
}

impl Default for DataSection {
    fn default() -> Self {
        DataSection {
            path: None,
            tasks: 5,
            input_dim: 2,
            classes: 10,
            task_size: 300,
            separation: 4.0,
            shift: "class_split".into(),
            noise: 0.0,
            split: [0.6, 0.2, 0.2],
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelSection {
    /// Hidden layer widths; empty means logistic regression.
    pub hidden: Vec<usize>,
    /// `relu`, `tanh` or `identity`.
    pub activation: String,
    pub l2: f64,
}

impl Default for ModelSection {
    fn default() -> Self {
        ModelSection {
            hidden: Vec::new(),
            activation: "tanh".into(),
            l2: 0.01,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainSection {
    pub batch_size: usize,
    pub epochs: usize,
    pub lr: f64,
    /// Linear warmup length in steps; 0 keeps the rate constant.
    pub warmup_steps: usize,
    pub early_stopping: bool,
}

impl Default for TrainSection {
    fn default() -> Self {
        TrainSection {
            batch_size: 16,
            epochs: 10,
            lr: 0.1,
            warmup_steps: 0,
            early_stopping: false,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct InfluenceSection {
    /// Scoring method for `trace`: hesit, tracin, lissa, cg, loo or eps_fd.
    pub method: String,
    /// Method for `oracle`: loo or eps_fd.
    pub oracle: String,
    /// Index of the task whose training set is scored.
    pub task: usize,
    /// `eq6` or `algo1_literal`.
    pub variant: String,
    /// Leading epochs traced by hesit; absent means the whole run.
    pub window_epochs: Option<usize>,
    pub damping: f64,
    pub lissa_depth: usize,
    pub lissa_repeat: usize,
    pub lissa_scale: f64,
    pub lissa_batch: usize,
    pub cg_max_iter: usize,
    pub cg_tol: f64,
    pub eps_step: f64,
}

impl Default for InfluenceSection {
    fn default() -> Self {
        InfluenceSection {
            method: "hesit".into(),
            oracle: "loo".into(),
            task: 0,
            variant: "eq6".into(),
            window_epochs: None,
            damping: 0.01,
            lissa_depth: 100,
            lissa_repeat: 10,
            lissa_scale: 25.0,
            lissa_batch: 16,
            cg_max_iter: 1000,
            cg_tol: 1e-8,
            eps_step: 1e-4,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SelectionSection {
    pub strategy: String,
    /// Exemplars kept per task.
    pub k: usize,
    /// Candidates traced per task.
    pub pool_size: usize,
    pub trace_epochs: usize,
    /// Shuffle the task order with this seed; absent keeps file order.
    pub order_seed: Option<u64>,
}

impl Default for SelectionSection {
    fn default() -> Self {
        SelectionSection {
            strategy: "hesit".into(),
            k: 50,
            pool_size: 1000,
            trace_epochs: 5,
            order_seed: None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CompareSection {
    pub strategies: Vec<String>,
    pub repeats: usize,
}

impl Default for CompareSection {
    fn default() -> Self {
        CompareSection {
            strategies: vec!["vanilla".into(), "random".into(), "hesit".into()],
            repeats: 3,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TimingSection {
    /// `(T, V)` pool sizes.
    pub pools: Vec<[usize; 2]>,
    pub methods: Vec<String>,
    pub input_dim: usize,
    pub classes: usize,
    pub hidden: Vec<usize>,
    pub epochs: usize,
    /// Hessian damping for lissa and cg; the MLP has negative curvature
    /// directions that smaller values leave exposed to CG.
    pub damping: f64,
}

impl Default for TimingSection {
    fn default() -> Self {
        TimingSection {
            pools: vec![[100, 10], [1000, 100]],
            methods: vec!["hesit".into(), "tracin".into(), "lissa".into(), "cg".into()],
            input_dim: 10,
            classes: 4,
            hidden: vec![32],
            epochs: 5,
            damping: 0.3,
        }
    }
}

fn bad(key: &str, msg: impl Into<String>) -> ConfigError {
    ConfigError {
        key: key.into(),
        msg: msg.into(),
    }
}

fn positive(key: &str, v: f64) -> Result<(), ConfigError> {
    if v > 0.0 && v.is_finite() {
        Ok(())
    } else {
        Err(bad(key, format!("must be positive, got {v}")))
    }
}

fn at_least_one(key: &str, v: usize) -> Result<(), ConfigError> {
    if v == 0 {
        Err(bad(key, "must be >= 1"))
    } else {
        Ok(())
    }
}

/// The key on the line a parse error points at, else the first
/// backquoted name in the message.
fn offending_key(text: &str, span: Option<std::ops::Range<usize>>, msg: &str) -> String {
    if let Some(span) = span {
        let start = text[..span.start.min(text.len())].rfind('\n').map_or(0, |i| i + 1);
        let line = text[start..].lines().next().unwrap_or("");
        if let Some((key, _)) = line.split_once('=') {
            return key.trim().to_string();
        }
    }
    msg.split('`').nth(1).unwrap_or("<file>").to_string()
}

impl Config {
    pub fn parse(text: &str) -> Result<Self, ConfigError> {
        let cfg: Config = toml::from_str(text).map_err(|e| {
            let msg = e.message().to_string();
            bad(&offending_key(text, e.span(), &msg), msg)
        })?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        self.stream_spec()?
            .validate()
            .map_err(|e| bad("data", e.to_string()))?;
        self.model_spec()?;
        self.train_config()?;
        self.method()?;
        self.oracle_method()?;
        self.variant()?;
        self.strategy()?;
        self.lissa()?;
        self.cg()?;
        positive("influence.eps_step", self.influence.eps_step)?;
        if self.influence.task >= self.data.tasks && self.data.path.is_none() {
            return Err(bad(
                "influence.task",
                format!("task {} out of range for {} tasks", self.influence.task, self.data.tasks),
            ));
        }
        if self.influence.window_epochs == Some(0) {
            return Err(bad("influence.window_epochs", "must be >= 1"));
        }
        at_least_one("selection.trace_epochs", self.selection.trace_epochs)?;
        if self.selection.pool_size < self.selection.k {
            return Err(bad("selection.pool_size", "must be at least selection.k"));
        }
        at_least_one("compare.repeats", self.compare.repeats)?;
        if self.compare.strategies.is_empty() {
            return Err(bad("compare.strategies", "must name at least one strategy"));
        }
        for s in &self.compare.strategies {
            s.parse::<Strategy>()
                .map_err(|e| bad("compare.strategies", e.to_string()))?;
        }
        for (i, p) in self.timing.pools.iter().enumerate() {
            if p[0] < 2 || p[1] == 0 {
                return Err(bad(&format!("timing.pools[{i}]"), "needs T >= 2 and V >= 1"));
            }
        }
        for m in &self.timing.methods {
            match m.parse::<Method>() {
                Ok(Method::Hesit | Method::Tracin | Method::Lissa | Method::Cg) => {}
                _ => return Err(bad("timing.methods", format!("cannot time method {m:?}"))),
            }
        }
        at_least_one("timing.input_dim", self.timing.input_dim)?;
        if self.timing.classes < 2 {
            return Err(bad("timing.classes", "must be >= 2"));
        }
        at_least_one("timing.epochs", self.timing.epochs)?;
        positive("timing.damping", self.timing.damping)?;
        Ok(())
    }

    /// FNV-1a over the canonical serialization of the resolved config, so
    /// spelling out a default does not change it.
    pub fn digest(&self) -> String {
        let canonical = toml::to_string(self).expect("config serializes");
        let mut h = hesit::digest::Fnv64::new();
        h.write(canonical.as_bytes());
        format!("{:016x}", h.finish())
    }

    pub fn stream_spec(&self) -> Result<StreamSpec, ConfigError> {
        let d = &self.data;
        let shift: ShiftMode = d.shift.parse().map_err(|e: hesit::Error| bad("data.shift", e.to_string()))?;
        let mut spec = StreamSpec::uniform(d.tasks, d.input_dim, d.classes, d.task_size, d.separation, shift, self.seed);
        spec.split = d.split;
        Ok(spec.with_noise(d.noise))
    }

    pub fn model_spec(&self) -> Result<ModelSpec, ConfigError> {
        let m = &self.model;
        let activation: Activation = m
            .activation
            .parse()
            .map_err(|e: hesit::Error| bad("model.activation", e.to_string()))?;
        if !(m.l2 >= 0.0 && m.l2.is_finite()) {
            return Err(bad("model.l2", "must be >= 0"));
        }
        if m.hidden.contains(&0) {
            return Err(bad("model.hidden", "layer widths must be >= 1"));
        }
        let spec = if m.hidden.is_empty() {
            ModelSpec::linear(self.data.input_dim, self.data.classes)
        } else {
            ModelSpec::mlp(self.data.input_dim, m.hidden.clone(), self.data.classes, activation)
        };
        Ok(spec.with_l2(m.l2))
    }

    pub fn train_config(&self) -> Result<TrainConfig, ConfigError> {
        let t = &self.train;
        at_least_one("train.batch_size", t.batch_size)?;
        at_least_one("train.epochs", t.epochs)?;
        positive("train.lr", t.lr)?;
        let mut cfg = TrainConfig::new(self.seed, t.batch_size, t.epochs, t.lr);
        if t.warmup_steps > 0 {
            cfg.lr = LrSchedule::warmup(t.lr, t.warmup_steps);
        }
        cfg.early_stopping = t.early_stopping;
        Ok(cfg)
    }

    pub fn method(&self) -> Result<Method, ConfigError> {
        self.influence
            .method
            .parse()
            .map_err(|e: hesit::Error| bad("influence.method", e.to_string()))
    }

    pub fn oracle_method(&self) -> Result<Method, ConfigError> {
        match self.influence.oracle.parse() {
            Ok(m @ (Method::Loo | Method::EpsFd)) => Ok(m),
            _ => Err(bad(
                "influence.oracle",
                format!("expected loo or eps_fd, got {:?}", self.influence.oracle),
            )),
        }
    }

    pub fn variant(&self) -> Result<HesitVariant, ConfigError> {
        self.influence
            .variant
            .parse()
            .map_err(|e: hesit::Error| bad("influence.variant", e.to_string()))
    }

    pub fn strategy(&self) -> Result<Strategy, ConfigError> {
        self.selection
            .strategy
            .parse()
            .map_err(|e: hesit::Error| bad("selection.strategy", e.to_string()))
    }

    pub fn lissa(&self) -> Result<LissaConfig, ConfigError> {
        let i = &self.influence;
        at_least_one("influence.lissa_depth", i.lissa_depth)?;
        at_least_one("influence.lissa_repeat", i.lissa_repeat)?;
        at_least_one("influence.lissa_batch", i.lissa_batch)?;
        positive("influence.lissa_scale", i.lissa_scale)?;
        if !(i.damping >= 0.0 && i.damping.is_finite()) {
            return Err(bad("influence.damping", "must be >= 0"));
        }
        Ok(LissaConfig {
            depth: i.lissa_depth,
            repeat: i.lissa_repeat,
            damping: i.damping,
            scale: i.lissa_scale,
            batch_size: i.lissa_batch,
            seed: self.seed,
        })
    }

    pub fn cg(&self) -> Result<CgConfig, ConfigError> {
        let i = &self.influence;
        at_least_one("influence.cg_max_iter", i.cg_max_iter)?;
        positive("influence.cg_tol", i.cg_tol)?;
        Ok(CgConfig {
            max_iter: i.cg_max_iter,
            tol: i.cg_tol,
            damping: i.damping,
        })
    }

    pub fn curriculum(&self, strategy: Strategy, seed: u64) -> Result<CurriculumConfig, ConfigError> {
        let mut train = self.train_config()?;
        train.seed = seed;
        let mut c = CurriculumConfig::new(strategy, self.selection.k, train, seed);
        c.pool_size = self.selection.pool_size;
        c.trace_epochs = self.selection.trace_epochs;
        c.order_seed = self.selection.order_seed;
        c.hesit_variant = self.variant()?;
        Ok(c)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_file_means_defaults() {
        let cfg = Config::parse("").unwrap();
        assert_eq!(cfg, Config::default());
        assert_eq!(cfg.selection.k, 50);
        assert_eq!(cfg.selection.pool_size, 1000);
        assert_eq!(cfg.selection.trace_epochs, 5);
        assert_eq!(cfg.train.epochs, 10);
    }

    #[test]
    fn digest_tracks_meaning_not_spelling() {
        let base = Config::parse("").unwrap().digest();
        let spelled = Config::parse("[selection]\nk = 50\n").unwrap().digest();
        assert_eq!(base, spelled);
        let changed = Config::parse("[selection]\nk = 20\n").unwrap().digest();
        assert_ne!(base, changed);
        let seed = Config::parse("seed = 1\n").unwrap().digest();
        assert_ne!(base, seed);
    }

    #[test]
    fn errors_name_the_key() {
        let e = Config::parse("[train]\nbatchsize = 4\n").unwrap_err();
        assert_eq!(e.key, "batchsize");
        let e = Config::parse("[train]\nlr = -1.0\n").unwrap_err();
        assert_eq!(e.key, "train.lr");
        let e = Config::parse("[selection]\nstrategy = \"best\"\n").unwrap_err();
        assert_eq!(e.key, "selection.strategy");
        let e = Config::parse("[data]\nshift = \"sideways\"\n").unwrap_err();
        assert_eq!(e.key, "data.shift");
        let e = Config::parse("[train]\nepochs = \"ten\"\n").unwrap_err();
        assert_eq!(e.key, "epochs");
    }
}
