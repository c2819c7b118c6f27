//! Sequential task training with a rehearsal buffer.
//!
//! Task `t` trains from the previous task's parameters on its own training
//! split merged with every exemplar stored so far. Exemplars chosen for task
//! `t` join the buffer only after task `t` has been trained.

use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::datagen::{Task, TaskStream};
use crate::digest::derive_seed;
use crate::error::{Error, Result};
use crate::influence::{hesit_trace, HesitConfig, HesitVariant};
use crate::model::{Example, ModelSpec, Objective, ParamVector};
use crate::selection::{
    select_gss, select_hesit, select_loss_based, select_random, select_reservoir,
    select_uniform_by_label, Strategy,
};
use crate::train::{TrainConfig, TrainEnv};

#[derive(Clone, Debug, PartialEq)]
pub struct CurriculumConfig {
    pub strategy: Strategy,
    /// Exemplars stored per task.
    pub k: usize,
    /// Size of the traced pool sampled from each task's training split.
    pub pool_size: usize,
    pub trace_epochs: usize,
    /// Per-task training; its seed is replaced by one derived from `seed`.
    pub train: TrainConfig,
    /// Shuffles the task order when set; otherwise the stream order is kept.
    pub order_seed: Option<u64>,
    pub seed: u64,
    pub hesit_variant: HesitVariant,
}

impl CurriculumConfig {
    pub fn new(strategy: Strategy, k: usize, train: TrainConfig, seed: u64) -> Self {
        CurriculumConfig {
            strategy,
            k,
            pool_size: 1000,
            trace_epochs: 5,
            train,
            order_seed: None,
            seed,
            hesit_variant: HesitVariant::Eq6,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.train.validate()?;
        if self.pool_size < self.k {
            return Err(Error::InvalidSpec(format!(
                "pool_size {} is smaller than k {}",
                self.pool_size, self.k
            )));
        }
        Ok(())
    }

    /// Exemplars actually stored per task (vanilla stores none).
    pub fn effective_k(&self) -> usize {
        if self.strategy == Strategy::Vanilla {
            0
        } else {
            self.k
        }
    }
}

/// Append-only exemplar store, one list per finished task.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ReplayBuffer {
    pub k: usize,
    pub per_task: Vec<(usize, Vec<Example>)>,
}

impl ReplayBuffer {
    pub fn new(k: usize) -> Self {
        ReplayBuffer {
            k,
            per_task: Vec::new(),
        }
    }

    pub fn push(&mut self, task_id: usize, exemplars: Vec<Example>) -> Result<()> {
        if exemplars.len() > self.k {
            return Err(Error::PoolTooSmall {
                k: self.k,
                pool: exemplars.len(),
            });
        }
        self.per_task.push((task_id, exemplars));
        Ok(())
    }

    pub fn examples(&self) -> impl Iterator<Item = &Example> {
        self.per_task.iter().flat_map(|(_, ex)| ex.iter())
    }

    pub fn len(&self) -> usize {
        self.per_task.iter().map(|(_, ex)| ex.len()).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn ids(&self) -> Vec<u64> {
        self.examples().map(|e| e.id).collect()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct CurriculumReport {
    /// Task ids in training order.
    pub order: Vec<usize>,
    /// `accuracy[t][s]`: test accuracy on the `s`-th trained task after
    /// finishing the `t`-th (`s <= t`).
    pub accuracy: Vec<Vec<f64>>,
    /// Mean validation loss of each task right after training it.
    pub val_loss: Vec<f64>,
    pub final_avg: f64,
    pub forgetting: Vec<f64>,
    pub task_secs: Vec<f64>,
    /// Wall time of the tracing call per task: both passes over the traced
    /// epochs.
    pub trace_secs: Vec<f64>,
    pub buffer: ReplayBuffer,
    /// Exemplar ids selected per task, in selection order.
    pub selections: Vec<(usize, Vec<u64>)>,
    pub final_params: ParamVector,
}

/// Test accuracy on each of the first `t` tasks of `stream`.
pub fn evaluate_all_seen(
    spec: &ModelSpec,
    params: &ParamVector,
    stream: &TaskStream,
    t: usize,
) -> Result<Vec<f64>> {
    if t > stream.tasks.len() {
        return Err(Error::InvalidSpec(format!(
            "asked for {t} tasks of a {}-task stream",
            stream.tasks.len()
        )));
    }
    stream.tasks[..t]
        .iter()
        .map(|task| Ok(spec.evaluate(params, &task.test)?.accuracy))
        .collect()
}

/// Final average accuracy and per-task forgetting of a lower-triangular
/// accuracy matrix.
pub fn forgetting_stats(a: &[Vec<f64>]) -> Result<(f64, Vec<f64>)> {
    let last = a.last().ok_or(Error::EmptyDataset)?;
    if last.len() != a.len() {
        return Err(Error::DimensionMismatch {
            what: "accuracy matrix row",
            expected: a.len(),
            found: last.len(),
        });
    }
    let final_avg = last.iter().sum::<f64>() / last.len() as f64;
    let forgetting = (0..last.len())
        .map(|s| {
            let peak = a[s..]
                .iter()
                .map(|row| row[s])
                .fold(f64::NEG_INFINITY, f64::max);
            (peak - last[s]).max(0.0)
        })
        .collect();
    Ok((final_avg, forgetting))
}

/// The stream's tasks in curriculum order.
pub fn task_order(stream: &TaskStream, order_seed: Option<u64>) -> Vec<usize> {
    let mut order: Vec<usize> = (0..stream.tasks.len()).collect();
    if let Some(seed) = order_seed {
        order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    }
    order
}

pub fn run_curriculum(
    spec: &ModelSpec,
    init: Option<ParamVector>,
    stream: &TaskStream,
    ccfg: &CurriculumConfig,
) -> Result<CurriculumReport> {
    ccfg.validate()?;
    spec.validate()?;
    if stream.tasks.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let order = task_order(stream, ccfg.order_seed);
    let ordered = TaskStream {
        input_dim: stream.input_dim,
        classes: stream.classes,
        tasks: order.iter().map(|&i| stream.tasks[i].clone()).collect(),
    };

    let k = ccfg.effective_k();
    let mut params = init.unwrap_or_else(|| spec.initial_params(ccfg.seed));
    let mut buffer = ReplayBuffer::new(k);
    let mut accuracy = Vec::new();
    let mut val_loss = Vec::new();
    let mut task_secs = Vec::new();
    let mut trace_secs = Vec::new();
    let mut selections = Vec::new();

    for (t, task) in ordered.tasks.iter().enumerate() {
        let started = Instant::now();
        let (next, chosen, traced) = run_task(spec, params, task, &buffer, ccfg, t, k)
            .map_err(|e| Error::Task {
                task: task.id,
                source: Box::new(e),
            })?;
        params = next;
        trace_secs.push(traced);

        let by_id: std::collections::HashMap<u64, &Example> =
            task.train.iter().map(|e| (e.id, e)).collect();
        let exemplars: Vec<Example> = chosen.iter().map(|id| by_id[id].clone()).collect();
        if k > 0 {
            selections.push((task.id, chosen));
            buffer.push(task.id, exemplars)?;
        }

        val_loss.push(if task.val.is_empty() {
            f64::NAN
        } else {
            spec.mean_loss(&params, &task.val)?
        });
        accuracy.push(evaluate_all_seen(spec, &params, &ordered, t + 1)?);
        task_secs.push(started.elapsed().as_secs_f64());
    }

    let (final_avg, forgetting) = forgetting_stats(&accuracy)?;
    Ok(CurriculumReport {
        order: ordered.tasks.iter().map(|t| t.id).collect(),
        accuracy,
        val_loss,
        final_avg,
        forgetting,
        task_secs,
        trace_secs,
        buffer,
        selections,
        final_params: params,
    })
}

/// Trains one task and picks its exemplars. Returns the new parameters, the
/// chosen ids and the tracing wall time.
fn run_task(
    spec: &ModelSpec,
    params: ParamVector,
    task: &Task,
    buffer: &ReplayBuffer,
    ccfg: &CurriculumConfig,
    t: usize,
    k: usize,
) -> Result<(ParamVector, Vec<u64>, f64)> {
    let task_seed = derive_seed(ccfg.seed, t as u64);
    let mut config = ccfg.train.clone();
    config.seed = task_seed;

    let mut train_set = task.train.clone();
    train_set.extend(buffer.examples().cloned());
    if train_set.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let env = TrainEnv::new(spec, &config, &train_set, &task.val).with_init(params);

    if k == 0 {
        return Ok((env.run(None)?.final_params, Vec::new(), 0.0));
    }

    let pool_seed = derive_seed(task_seed, 1);
    let select_seed = derive_seed(task_seed, 2);
    let pool_len = ccfg.pool_size.min(task.train.len());
    let pool_ids = select_random(&task.train, pool_len, pool_seed)?;
    let pool: Vec<Example> = {
        let by_id: std::collections::HashMap<u64, &Example> =
            task.train.iter().map(|e| (e.id, e)).collect();
        pool_ids.iter().map(|id| by_id[id].clone()).collect()
    };
    let k = k.min(pool.len());

    if let Strategy::Hesit(mode) = ccfg.strategy {
        // trace the leading epochs, select, then resume the same run
        let mut traced_cfg = config.clone();
        traced_cfg.epochs = ccfg.trace_epochs.min(config.epochs);
        let traced_env = TrainEnv {
            config: &traced_cfg,
            ..env
        };
        let hcfg = HesitConfig::new(pool_ids).with_variant(ccfg.hesit_variant);
        let started = Instant::now();
        let trace = hesit_trace(&traced_env, &hcfg)?;
        let secs = started.elapsed().as_secs_f64();
        let chosen = select_hesit(&pool, &trace.records, k, mode)?;

        let stopped_early = trace.trained.epochs_run < traced_cfg.epochs;
        if stopped_early || traced_cfg.epochs == config.epochs {
            return Ok((trace.trained.final_params, chosen, secs));
        }
        let mut rest_cfg = config.clone();
        rest_cfg.start_epoch = traced_cfg.epochs;
        let rest = TrainEnv::new(spec, &rest_cfg, &train_set, &task.val).with_init(trace.trained.final_params);
        return Ok((rest.run(None)?.final_params, chosen, secs));
    }

    let trained = env.run(None)?.final_params;
    let chosen = match ccfg.strategy {
        Strategy::Random => select_random(&pool, k, select_seed)?,
        Strategy::Uniform => select_uniform_by_label(&pool, k, select_seed)?,
        Strategy::Reservoir => select_reservoir(pool.iter(), k, select_seed),
        Strategy::Gss => select_gss(spec, &trained, &pool, k)?,
        Strategy::LossBased => select_loss_based(spec, &trained, &pool, k)?,
        Strategy::Vanilla | Strategy::Hesit(_) => unreachable!("handled above"),
    };
    Ok((trained, chosen, 0.0))
}
