//! Ground-truth influence by retraining.

use std::collections::BTreeMap;

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::influence::index_of_ids;
use crate::model::{Example, Objective};
use crate::train::TrainEnv;

/// Central-difference score from the validation losses of the up- and
/// down-weighted runs: `-(L+ - L-) / (2 eps N)`.
pub fn eps_fd_score(loss_plus: f64, loss_minus: f64, eps_step: f64, n: usize) -> f64 {
    -(loss_plus - loss_minus) / (2.0 * eps_step * n as f64)
}

/// Finite-difference estimate of `-(1/N) dL_val/d eps_i`, where `eps_i`
/// scales example `id`'s loss term inside every batch it appears in.
pub fn eps_fd_oracle<M: Objective + ?Sized>(
    env: &TrainEnv<'_, M>,
    id: u64,
    eps_step: f64,
) -> Result<f64> {
    if !(eps_step > 0.0) {
        return Err(Error::InvalidSpec("eps_step must be positive".into()));
    }
    if env.val_set.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let idx = index_of_ids(env.train_set, &[id])?[0];
    let n = env.train_set.len();
    let base = env.example_weights.clone().unwrap_or_else(|| vec![1.0; n]);

    let run = |sign: f64| -> Result<(f64, u64)> {
        let mut w = base.clone();
        w[idx] *= 1.0 + sign * eps_step;
        let perturbed = TrainEnv {
            model: env.model,
            config: env.config,
            train_set: env.train_set,
            val_set: env.val_set,
            init: env.init.clone(),
            example_weights: Some(w),
        };
        let out = perturbed.run(None)?;
        Ok((
            env.model.mean_loss(&out.final_params, env.val_set)?,
            out.schedule_digest,
        ))
    };
    let (plus, d_plus) = run(1.0)?;
    let (minus, d_minus) = run(-1.0)?;
    if d_plus != d_minus {
        return Err(Error::ScheduleDivergence);
    }
    Ok(eps_fd_score(plus, minus, eps_step, n))
}

/// `L_val(trained without z) - L_val(trained with everything)` for each id.
/// Positive means the example helps. Retraining starts from the same initial
/// parameters on a schedule rebuilt for `N - 1` points.
pub fn loo_oracle<M: Objective + ?Sized>(
    env: &TrainEnv<'_, M>,
    ids: &[u64],
) -> Result<BTreeMap<u64, f64>> {
    if env.val_set.is_empty() {
        return Err(Error::EmptyDataset);
    }
    if env.train_set.len() < 2 && !ids.is_empty() {
        return Err(Error::InvalidSpec("removal would leave an empty training set".into()));
    }
    let indices = index_of_ids(env.train_set, ids)?;
    let full = env.run(None)?;
    let base_loss = env.model.mean_loss(&full.final_params, env.val_set)?;

    let scores = indices
        .par_iter()
        .map(|&skip| -> Result<f64> {
            let reduced: Vec<Example> = env
                .train_set
                .iter()
                .enumerate()
                .filter(|&(i, _)| i != skip)
                .map(|(_, e)| e.clone())
                .collect();
            let weights = env.example_weights.as_ref().map(|w| {
                w.iter()
                    .enumerate()
                    .filter(|&(i, _)| i != skip)
                    .map(|(_, &x)| x)
                    .collect::<Vec<_>>()
            });
            let sub = TrainEnv {
                model: env.model,
                config: env.config,
                train_set: &reduced,
                val_set: env.val_set,
                init: env.init.clone(),
                example_weights: weights,
            };
            let out = sub.run(None)?;
            Ok(env.model.mean_loss(&out.final_params, env.val_set)? - base_loss)
        })
        .collect::<Result<Vec<f64>>>()?;
    Ok(ids.iter().copied().zip(scores).collect())
}
