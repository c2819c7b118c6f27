//! Hessian-free hyper-gradient tracing.
//!
//! The first pass trains to the final parameters and takes the validation
//! gradient `v` there. The second pass replays the identical run and, for
//! every traced example that lands in a batch during the trace window,
//! accumulates the scalar `v . grad l(z_i, theta_{r-1})`. Only one scalar per
//! traced example (and target) is kept, never a parameter-sized vector.

use std::collections::HashMap;

use crate::error::{Error, Result};
use crate::influence::{index_of_ids, records_from_scores, InfluenceRecord, Method};
use crate::model::{Objective, ParamVector};
use crate::train::{Step, TrainEnv, TrainResult, TrajectoryHook};
use crate::model::Example;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub enum HesitVariant {
    /// Learning rate multiplies the per-step increment; accumulators of
    /// examples outside the batch are left alone.
    #[default]
    Eq6,
    /// Every accumulator is multiplied by the step's learning rate and the
    /// increment is scaled by `N / B`.
    Algo1Literal,
}

impl std::str::FromStr for HesitVariant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "eq6" => Ok(HesitVariant::Eq6),
            "algo1_literal" => Ok(HesitVariant::Algo1Literal),
            other => Err(Error::InvalidSpec(format!("unknown hesit variant {other:?}"))),
        }
    }
}

/// How many leading optimization steps are traced. Always clamped to the
/// number of steps the run actually took.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum TraceWindow {
    Full,
    Steps(usize),
    Epochs(usize),
}

#[derive(Clone, Debug, PartialEq)]
pub struct HesitConfig {
    pub variant: HesitVariant,
    pub window: TraceWindow,
    /// Ids of the traced examples; all must be in the training set.
    pub traced: Vec<u64>,
}

impl HesitConfig {
    pub fn new(traced: Vec<u64>) -> Self {
        HesitConfig {
            variant: HesitVariant::Eq6,
            window: TraceWindow::Full,
            traced,
        }
    }

    pub fn with_window(mut self, window: TraceWindow) -> Self {
        self.window = window;
        self
    }

    pub fn with_variant(mut self, variant: HesitVariant) -> Self {
        self.variant = variant;
        self
    }
}

/// Scalar accumulators `v . hypergrad_i` for one validation target.
#[derive(Clone, Debug, PartialEq)]
pub struct TraceAccumulator {
    pub step: usize,
    pub values: Vec<f64>,
}

impl TraceAccumulator {
    pub fn new(len: usize) -> Self {
        TraceAccumulator {
            step: 0,
            values: vec![0.0; len],
        }
    }
}

#[derive(Clone, Debug)]
pub struct HesitTrace {
    pub records: Vec<InfluenceRecord>,
    /// Result of the first training pass.
    pub trained: TrainResult,
    pub traced_steps: usize,
}

struct TraceHook<'v> {
    variant: HesitVariant,
    window: usize,
    n: f64,
    batch_size: f64,
    slot: HashMap<usize, usize>,
    targets: &'v [ParamVector],
    acc: Vec<TraceAccumulator>,
}

impl<'v> TraceHook<'v> {
    fn step_with<M: Objective + ?Sized>(&mut self, model: &M, step: &Step<'_>) -> Result<()> {
        if step.index > self.window {
            return Ok(());
        }
        if self.variant == HesitVariant::Algo1Literal {
            for acc in &mut self.acc {
                for a in &mut acc.values {
                    *a *= step.lr;
                }
            }
        }
        for &i in step.batch {
            let Some(&s) = self.slot.get(&i) else {
                continue;
            };
            let g = model.grad_example(step.params, &step.train_set[i])?;
            for (acc, v) in self.acc.iter_mut().zip(self.targets) {
                let vg = v.dot(&g);
                acc.values[s] -= match self.variant {
                    HesitVariant::Eq6 => step.lr / step.batch.len() as f64 * vg,
                    HesitVariant::Algo1Literal => self.n / self.batch_size * vg,
                };
            }
        }
        for acc in &mut self.acc {
            acc.step = step.index;
            if acc.values.iter().any(|a| !a.is_finite()) {
                return Err(Error::NonFinite {
                    step: step.index,
                    context: "trace accumulator".into(),
                });
            }
        }
        Ok(())
    }
}

struct BoundHook<'h, 'v, M: ?Sized> {
    model: &'h M,
    inner: &'h mut TraceHook<'v>,
}

impl<M: Objective + ?Sized> TrajectoryHook for BoundHook<'_, '_, M> {
    fn on_step(&mut self, step: &Step<'_>) -> Result<()> {
        self.inner.step_with(self.model, step)
    }
}

/// Traces influence on several validation targets in one pair of passes.
/// Returns one record list per target, in `hcfg.traced` order.
pub fn hesit_trace_multi<M: Objective + ?Sized>(
    env: &TrainEnv<'_, M>,
    targets: &[&[Example]],
    hcfg: &HesitConfig,
) -> Result<(Vec<Vec<InfluenceRecord>>, TrainResult, usize)> {
    if hcfg.traced.is_empty() {
        return Err(Error::InvalidSpec("no traced examples".into()));
    }
    if env.config.start_epoch != 0 {
        return Err(Error::InvalidSpec("tracing needs a run that starts at epoch 0".into()));
    }
    let indices = index_of_ids(env.train_set, &hcfg.traced)?;

    let first = env.run(None)?;
    let vs = targets
        .iter()
        .map(|val| env.model.mean_grad(&first.final_params, val))
        .collect::<Result<Vec<_>>>()?;

    let n = env.train_set.len();
    let window = match hcfg.window {
        TraceWindow::Full => first.steps_taken,
        TraceWindow::Steps(r) => r.min(first.steps_taken),
        TraceWindow::Epochs(e) => (e * env.config.steps_per_epoch(n)).min(first.steps_taken),
    };

    let mut hook = TraceHook {
        variant: hcfg.variant,
        window,
        n: n as f64,
        batch_size: env.config.batch_size as f64,
        slot: indices.iter().enumerate().map(|(s, &i)| (i, s)).collect(),
        targets: &vs,
        acc: vec![TraceAccumulator::new(indices.len()); vs.len()],
    };
    {
        let mut bound = BoundHook {
            model: env.model,
            inner: &mut hook,
        };
        env.retrain_identically(&first, Some(&mut bound))?;
    }

    let inv_n = 1.0 / n as f64;
    let records = hook
        .acc
        .iter()
        .map(|acc| {
            let scores: Vec<(u64, f64)> = hcfg
                .traced
                .iter()
                .zip(&acc.values)
                .map(|(&id, &a)| (id, -inv_n * a))
                .collect();
            records_from_scores(Method::Hesit, &scores)
        })
        .collect();
    Ok((records, first, window))
}

/// Influence of every traced example on the mean loss over `env.val_set`.
pub fn hesit_trace<M: Objective + ?Sized>(
    env: &TrainEnv<'_, M>,
    hcfg: &HesitConfig,
) -> Result<HesitTrace> {
    if env.val_set.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let (mut records, trained, traced_steps) = hesit_trace_multi(env, &[env.val_set], hcfg)?;
    Ok(HesitTrace {
        records: records.pop().unwrap_or_default(),
        trained,
        traced_steps,
    })
}
