use std::collections::HashMap;

use crate::error::{Error, Result};
use crate::influence::{hesit_trace_multi, HesitConfig};
use crate::model::{Example, Objective};
use crate::train::TrainEnv;

/// Normalized influence of one training example (of `train_class`) on the
/// validation subset of `val_class`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ContributionEntry {
    pub train_class: usize,
    pub val_class: usize,
    pub normalized: f64,
}

/// `C x C` matrix whose `(a, b)` entry is the mean normalized influence of
/// class-`a` training examples on the class-`b` validation subset.
pub fn contribution_matrix(entries: &[ContributionEntry], classes: usize) -> Result<Vec<Vec<f64>>> {
    let mut sum = vec![vec![0.0; classes]; classes];
    let mut count = vec![vec![0usize; classes]; classes];
    for e in entries {
        if e.train_class >= classes || e.val_class >= classes {
            return Err(Error::DimensionMismatch {
                what: "contribution class",
                expected: classes,
                found: e.train_class.max(e.val_class),
            });
        }
        sum[e.train_class][e.val_class] += e.normalized;
        count[e.train_class][e.val_class] += 1;
    }
    for a in 0..classes {
        for b in 0..classes {
            if count[a][b] == 0 {
                return Err(Error::EmptyClass(if count[a].iter().all(|&c| c == 0) { a } else { b }));
            }
            sum[a][b] /= count[a][b] as f64;
        }
    }
    Ok(sum)
}

/// Traces every example in `hcfg.traced` against each class-restricted
/// validation subset of `env.val_set` and averages by training class.
pub fn class_contributions<M: Objective + ?Sized>(
    env: &TrainEnv<'_, M>,
    classes: usize,
    hcfg: &HesitConfig,
) -> Result<Vec<Vec<f64>>> {
    let subsets: Vec<Vec<Example>> = (0..classes)
        .map(|c| env.val_set.iter().filter(|e| e.label == c).cloned().collect())
        .collect();
    if let Some(c) = subsets.iter().position(Vec::is_empty) {
        return Err(Error::EmptyClass(c));
    }
    let targets: Vec<&[Example]> = subsets.iter().map(Vec::as_slice).collect();
    let (per_target, _, _) = hesit_trace_multi(env, &targets, hcfg)?;

    let label_of: HashMap<u64, usize> = env.train_set.iter().map(|e| (e.id, e.label)).collect();
    let mut entries = Vec::new();
    for (val_class, records) in per_target.iter().enumerate() {
        for r in records {
            entries.push(ContributionEntry {
                train_class: label_of[&r.id],
                val_class,
                normalized: r.normalized,
            });
        }
    }
    contribution_matrix(&entries, classes)
}
