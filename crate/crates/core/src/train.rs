//! Bit-reproducible seeded SGD with a read-only per-step hook.
//!
//! A run is fully determined by the objective, the [`TrainConfig`], the data
//! and the initial parameters. Two digests summarize a run: one over the
//! executed `(step, batch ids)` sequence and one over every parameter
//! iterate. Matching digests certify that a retraining replayed the exact
//! same trajectory.

use std::io::{Read, Write};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::digest::Fnv64;
use crate::error::{Error, Result};
use crate::model::{Example, Objective, ParamVector};

/// Epochs without validation improvement before training stops.
pub const EARLY_STOPPING_PATIENCE: usize = 3;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub enum Decay {
    #[default]
    Constant,
    /// Linear ramp over `warmup_steps`, then constant.
    LinearWarmupConstant,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LrSchedule {
    pub base: f64,
    pub warmup_steps: usize,
    pub decay: Decay,
}

impl LrSchedule {
    pub fn constant(base: f64) -> Self {
        LrSchedule {
            base,
            warmup_steps: 0,
            decay: Decay::Constant,
        }
    }

    pub fn warmup(base: f64, warmup_steps: usize) -> Self {
        LrSchedule {
            base,
            warmup_steps,
            decay: Decay::LinearWarmupConstant,
        }
    }

    /// Learning rate of the 1-based step `r`.
    pub fn at(&self, r: usize) -> f64 {
        match self.decay {
            Decay::LinearWarmupConstant if self.warmup_steps > 0 && r < self.warmup_steps => {
                self.base * r.max(1) as f64 / self.warmup_steps as f64
            }
            _ => self.base,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub seed: u64,
    pub batch_size: usize,
    pub epochs: usize,
    pub lr: LrSchedule,
    pub shuffle: bool,
    /// First epoch to run; a run resumed at epoch `e` continues the schedule
    /// and learning-rate steps of an uninterrupted run.
    pub start_epoch: usize,
    /// Stop once validation loss fails to improve for
    /// [`EARLY_STOPPING_PATIENCE`] consecutive epochs.
    pub early_stopping: bool,
}

impl TrainConfig {
    pub fn new(seed: u64, batch_size: usize, epochs: usize, lr: f64) -> Self {
        TrainConfig {
            seed,
            batch_size,
            epochs,
            lr: LrSchedule::constant(lr),
            shuffle: true,
            start_epoch: 0,
            early_stopping: false,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(Error::InvalidSpec("batch_size must be >= 1".into()));
        }
        if !(self.lr.base > 0.0 && self.lr.base.is_finite()) {
            return Err(Error::InvalidSpec("learning rate must be positive".into()));
        }
        Ok(())
    }

    pub fn steps_per_epoch(&self, n: usize) -> usize {
        n.div_ceil(self.batch_size)
    }

    /// Batches of one epoch: a Fisher-Yates shuffle of `0..n` seeded with
    /// `seed ^ epoch`, cut into chunks of `batch_size`.
    pub fn epoch_batches(&self, n: usize, epoch: usize) -> Vec<Vec<usize>> {
        let mut order: Vec<usize> = (0..n).collect();
        if self.shuffle {
            let mut rng = ChaCha8Rng::seed_from_u64(self.seed ^ epoch as u64);
            order.shuffle(&mut rng);
        }
        order
            .chunks(self.batch_size.max(1))
            .map(<[usize]>::to_vec)
            .collect()
    }
}

/// Every epoch's batches, as indices into the training set.
pub fn make_batch_schedule(config: &TrainConfig, n: usize) -> Vec<Vec<Vec<usize>>> {
    (0..config.epochs).map(|e| config.epoch_batches(n, e)).collect()
}

/// What a hook sees before each parameter update.
pub struct Step<'a> {
    /// 1-based optimization step.
    pub index: usize,
    pub epoch: usize,
    /// Parameters before this step's update.
    pub params: &'a ParamVector,
    /// Indices into `train_set`.
    pub batch: &'a [usize],
    pub lr: f64,
    pub train_set: &'a [Example],
}

/// Observer invoked once per optimization step, in order.
pub trait TrajectoryHook {
    fn on_step(&mut self, step: &Step<'_>) -> Result<()>;
}

impl<F> TrajectoryHook for F
where
    F: FnMut(&Step<'_>) -> Result<()>,
{
    fn on_step(&mut self, step: &Step<'_>) -> Result<()> {
        self(step)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainResult {
    pub final_params: ParamVector,
    pub steps_taken: usize,
    pub epochs_run: usize,
    /// Mean validation loss after each epoch (empty without a validation set).
    pub val_history: Vec<f64>,
    pub schedule_digest: u64,
    pub trajectory_digest: u64,
}

/// A fully specified training run that can be replayed bit for bit.
pub struct TrainEnv<'a, M: Objective + ?Sized> {
    pub model: &'a M,
    pub config: &'a TrainConfig,
    pub train_set: &'a [Example],
    pub val_set: &'a [Example],
    pub init: ParamVector,
    /// Per-example loss weights, indexed like `train_set`.
    pub example_weights: Option<Vec<f64>>,
}

impl<'a, M: Objective + ?Sized> TrainEnv<'a, M> {
    pub fn new(
        model: &'a M,
        config: &'a TrainConfig,
        train_set: &'a [Example],
        val_set: &'a [Example],
    ) -> Self {
        let init = model.initial_params(config.seed);
        TrainEnv {
            model,
            config,
            train_set,
            val_set,
            init,
            example_weights: None,
        }
    }

    pub fn with_init(mut self, init: ParamVector) -> Self {
        self.init = init;
        self
    }

    pub fn with_example_weights(mut self, weights: Vec<f64>) -> Self {
        self.example_weights = Some(weights);
        self
    }

    pub fn run(&self, mut hook: Option<&mut dyn TrajectoryHook>) -> Result<TrainResult> {
        self.config.validate()?;
        if self.train_set.is_empty() {
            return Err(Error::EmptyDataset);
        }
        self.model.check_params(&self.init)?;
        if let Some(w) = &self.example_weights {
            if w.len() != self.train_set.len() {
                return Err(Error::DimensionMismatch {
                    what: "example weights",
                    expected: self.train_set.len(),
                    found: w.len(),
                });
            }
        }

        let n = self.train_set.len();
        let mut params = self.init.clone();
        let mut schedule = Fnv64::new();
        let mut trajectory = Fnv64::new();
        trajectory.write_u64(params.digest());
        let first_step = self.config.start_epoch * self.config.steps_per_epoch(n);
        let mut step = first_step;
        let mut history = Vec::new();
        let mut best = f64::INFINITY;
        let mut stale = 0usize;
        let mut epochs_run = 0;

        for epoch in self.config.start_epoch..self.config.epochs {
            for batch in self.config.epoch_batches(n, epoch) {
                step += 1;
                let lr = self.config.lr.at(step);
                if let Some(h) = hook.as_deref_mut() {
                    h.on_step(&Step {
                        index: step,
                        epoch,
                        params: &params,
                        batch: &batch,
                        lr,
                        train_set: self.train_set,
                    })?;
                }
                let (grad, loss) = self.model.batch_objective_grad(
                    &params,
                    self.train_set,
                    &batch,
                    self.example_weights.as_deref(),
                )?;
                if !loss.is_finite() || !grad.is_finite() {
                    return Err(Error::NonFinite {
                        step,
                        context: format!("batch loss {loss}"),
                    });
                }
                params.axpy(-lr, &grad);

                schedule.write_u64(step as u64);
                schedule.write_u64(batch.len() as u64);
                for &i in &batch {
                    schedule.write_u64(self.train_set[i].id);
                }
                trajectory.write_u64(params.digest());
            }
            epochs_run += 1;

            if !self.val_set.is_empty() {
                let val = self.model.mean_loss(&params, self.val_set)?;
                history.push(val);
                if self.config.early_stopping {
                    if val < best {
                        best = val;
                        stale = 0;
                    } else {
                        stale += 1;
                        if stale >= EARLY_STOPPING_PATIENCE {
                            break;
                        }
                    }
                }
            }
        }

        Ok(TrainResult {
            final_params: params,
            steps_taken: step - first_step,
            epochs_run,
            val_history: history,
            schedule_digest: schedule.finish(),
            trajectory_digest: trajectory.finish(),
        })
    }

    /// Replays the run with `hook` attached and fails unless the trajectory
    /// matches `prior` bit for bit.
    pub fn retrain_identically(
        &self,
        prior: &TrainResult,
        hook: Option<&mut dyn TrajectoryHook>,
    ) -> Result<TrainResult> {
        let again = self.run(hook)?;
        if again.schedule_digest != prior.schedule_digest {
            return Err(Error::DigestMismatch(format!(
                "schedule digest {:016x} != {:016x}",
                again.schedule_digest, prior.schedule_digest
            )));
        }
        if again.trajectory_digest != prior.trajectory_digest {
            return Err(Error::DigestMismatch(format!(
                "trajectory digest {:016x} != {:016x}",
                again.trajectory_digest, prior.trajectory_digest
            )));
        }
        Ok(again)
    }
}

/// Plain seeded SGD starting from `init` (or the model's seeded default).
pub fn train<M: Objective + ?Sized>(
    model: &M,
    config: &TrainConfig,
    train_set: &[Example],
    val_set: &[Example],
    hook: Option<&mut dyn TrajectoryHook>,
    init: Option<ParamVector>,
) -> Result<TrainResult> {
    let mut env = TrainEnv::new(model, config, train_set, val_set);
    if let Some(p) = init {
        env = env.with_init(p);
    }
    env.run(hook)
}

/// Parameters paired with the learning rate in effect when they were saved.
#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub step: usize,
    pub params: ParamVector,
    pub lr: f64,
}

/// Records a checkpoint every `interval` steps (before the update).
pub struct CheckpointRecorder {
    pub interval: usize,
    pub checkpoints: Vec<Checkpoint>,
}

impl CheckpointRecorder {
    pub fn new(interval: usize) -> Self {
        CheckpointRecorder {
            interval: interval.max(1),
            checkpoints: Vec::new(),
        }
    }
}

impl TrajectoryHook for CheckpointRecorder {
    fn on_step(&mut self, step: &Step<'_>) -> Result<()> {
        if step.index.is_multiple_of(self.interval) {
            self.checkpoints.push(Checkpoint {
                step: step.index - 1,
                params: step.params.clone(),
                lr: step.lr,
            });
        }
        Ok(())
    }
}

/// Binary checkpoint: `P: u64`, `step: u64`, then `P` little-endian f64.
pub fn write_checkpoint<W: Write>(mut w: W, step: u64, params: &ParamVector) -> Result<()> {
    w.write_all(&(params.len() as u64).to_le_bytes())?;
    w.write_all(&step.to_le_bytes())?;
    for v in params.iter() {
        w.write_all(&v.to_le_bytes())?;
    }
    Ok(())
}

pub fn read_checkpoint<R: Read>(mut r: R) -> Result<(u64, ParamVector)> {
    let mut buf = [0u8; 8];
    r.read_exact(&mut buf)?;
    let len = u64::from_le_bytes(buf) as usize;
    r.read_exact(&mut buf)?;
    let step = u64::from_le_bytes(buf);
    let mut values = Vec::with_capacity(len);
    for _ in 0..len {
        r.read_exact(&mut buf)?;
        values.push(f64::from_le_bytes(buf));
    }
    Ok((step, ParamVector::from_vec(values)))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{ModelSpec, QuadraticModel};

    #[test]
    fn identity_schedule() {
        let mut cfg = TrainConfig::new(0, 2, 2, 0.1);
        cfg.shuffle = false;
        let s = make_batch_schedule(&cfg, 4);
        assert_eq!(s, vec![vec![vec![0, 1], vec![2, 3]]; 2]);
    }

    #[test]
    fn ceiling_split_and_determinism() {
        let cfg = TrainConfig::new(9, 2, 3, 0.1);
        let s = make_batch_schedule(&cfg, 5);
        for epoch in &s {
            let sizes: Vec<usize> = epoch.iter().map(Vec::len).collect();
            assert_eq!(sizes, vec![2, 2, 1]);
            let mut all: Vec<usize> = epoch.concat();
            all.sort();
            assert_eq!(all, vec![0, 1, 2, 3, 4]);
        }
        assert_eq!(s, make_batch_schedule(&cfg, 5));
    }

    #[test]
    fn warmup_ramps_linearly() {
        let s = LrSchedule::warmup(1.0, 4);
        let lrs: Vec<f64> = (1..=6).map(|r| s.at(r)).collect();
        assert_eq!(lrs, vec![0.25, 0.5, 0.75, 1.0, 1.0, 1.0]);
        assert!(lrs.iter().all(|&l| l > 0.0));
    }

    #[test]
    fn single_gradient_step_on_quadratic() {
        let q = QuadraticModel::scalar();
        let data = vec![QuadraticModel::example(0, vec![1.0])];
        let cfg = TrainConfig::new(0, 1, 1, 0.1);
        let out = train(&q, &cfg, &data, &[], None, None).unwrap();
        assert!((out.final_params[0] - 0.1).abs() < 1e-15);
        assert_eq!(out.steps_taken, 1);
    }

    #[test]
    fn full_batch_validation_loss_never_increases() {
        let q = QuadraticModel::scalar();
        let data: Vec<Example> = [0.5, 1.0, 2.5, -0.5]
            .iter()
            .enumerate()
            .map(|(i, &y)| QuadraticModel::example(i as u64, vec![y]))
            .collect();
        let val = vec![QuadraticModel::example(10, vec![0.8])];
        let cfg = TrainConfig::new(0, 4, 30, 0.01);
        let out = train(&q, &cfg, &data, &val, None, None).unwrap();
        for w in out.val_history.windows(2) {
            assert!(w[1] <= w[0]);
        }
    }

    #[test]
    fn non_finite_loss_names_the_step() {
        let q = QuadraticModel::scalar();
        let data = vec![QuadraticModel::example(0, vec![1e300])];
        let cfg = TrainConfig::new(0, 1, 3, 1e10);
        match train(&q, &cfg, &data, &[], None, None) {
            Err(Error::NonFinite { step, .. }) => assert!(step >= 1),
            other => panic!("expected non-finite error, got {other:?}"),
        }
    }

    #[test]
    fn hook_sees_every_step_and_changes_nothing() {
        let spec = ModelSpec::linear(2, 2);
        let data: Vec<Example> = (0..7)
            .map(|i| Example::new(i, vec![i as f64 * 0.1, 1.0 - i as f64 * 0.2], (i % 2) as usize))
            .collect();
        let cfg = TrainConfig::new(4, 3, 2, 0.2);
        let env = TrainEnv::new(&spec, &cfg, &data, &[]);
        let plain = env.run(None).unwrap();

        let mut seen = Vec::new();
        let mut hook = |s: &Step<'_>| {
            seen.push(s.index);
            Ok(())
        };
        let hooked = env.retrain_identically(&plain, Some(&mut hook)).unwrap();
        assert_eq!(seen, (1..=6).collect::<Vec<_>>());
        assert_eq!(hooked, plain);
    }

    #[test]
    fn retrain_detects_a_different_environment() {
        let spec = ModelSpec::linear(2, 2);
        let data: Vec<Example> = (0..6)
            .map(|i| Example::new(i, vec![i as f64, 1.0], (i % 2) as usize))
            .collect();
        let cfg = TrainConfig::new(1, 2, 2, 0.1);
        let first = TrainEnv::new(&spec, &cfg, &data, &[]).run(None).unwrap();
        let other_cfg = TrainConfig::new(2, 2, 2, 0.1);
        let err = TrainEnv::new(&spec, &other_cfg, &data, &[])
            .with_init(spec.init_params(1))
            .retrain_identically(&first, None);
        assert!(matches!(err, Err(Error::DigestMismatch(_))));
    }

    #[test]
    fn early_stopping_fires_on_a_plateau() {
        // training target far from validation target: val loss rises every epoch
        let q = QuadraticModel::scalar();
        let data = vec![QuadraticModel::example(0, vec![10.0])];
        let val = vec![QuadraticModel::example(1, vec![-10.0])];
        let mut cfg = TrainConfig::new(0, 1, 50, 0.1);
        cfg.early_stopping = true;
        let out = train(&q, &cfg, &data, &val, None, None).unwrap();
        // best at epoch 1, then PATIENCE stale epochs
        assert_eq!(out.epochs_run, EARLY_STOPPING_PATIENCE + 1);
    }

    #[test]
    fn resumed_run_continues_the_schedule() {
        let q = QuadraticModel::scalar();
        let data: Vec<Example> = (0..7).map(|i| QuadraticModel::example(i, vec![i as f64])).collect();
        let mut full = TrainConfig::new(3, 2, 4, 0.1);
        full.lr = LrSchedule::warmup(0.1, 5);
        let whole = train(&q, &full, &data, &[], None, None).unwrap();

        let mut head = full.clone();
        head.epochs = 2;
        let first = train(&q, &head, &data, &[], None, None).unwrap();
        let mut tail = full.clone();
        tail.start_epoch = 2;
        let mut seen = Vec::new();
        let mut hook = |s: &Step<'_>| {
            seen.push((s.index, s.epoch));
            Ok(())
        };
        let second = train(&q, &tail, &data, &[], Some(&mut hook), Some(first.final_params)).unwrap();
        assert_eq!(second.final_params, whole.final_params);
        assert_eq!(first.steps_taken + second.steps_taken, whole.steps_taken);
        assert_eq!(seen[0], (9, 2));
    }

    #[test]
    fn checkpoint_round_trip() {
        let p = ParamVector::from_vec(vec![1.5, -0.0, f64::MIN_POSITIVE, 3e200]);
        let mut buf = Vec::new();
        write_checkpoint(&mut buf, 42, &p).unwrap();
        assert_eq!(buf.len(), 16 + 4 * 8);
        let (step, q) = read_checkpoint(buf.as_slice()).unwrap();
        assert_eq!(step, 42);
        assert_eq!(p.digest(), q.digest());
    }
}
