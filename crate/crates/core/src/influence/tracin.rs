use crate::error::{Error, Result};
use crate::model::{Example, Objective};
use crate::train::Checkpoint;

/// Checkpoint-averaged, learning-rate-weighted gradient agreement between a
/// training example and a test example.
pub fn tracin_score<M: Objective + ?Sized>(
    model: &M,
    checkpoints: &[Checkpoint],
    z: &Example,
    zprime: &Example,
) -> Result<f64> {
    if checkpoints.is_empty() {
        return Err(Error::InvalidSpec("tracin needs at least one checkpoint".into()));
    }
    let mut total = 0.0;
    for c in checkpoints {
        let g = model.grad_example(&c.params, z)?;
        let gp = model.grad_example(&c.params, zprime)?;
        total += c.lr * g.dot(&gp);
    }
    Ok(total / checkpoints.len() as f64)
}

/// TracIn of every training example against the mean validation loss, i.e.
/// the average of its pairwise scores over `val_set`.
pub fn tracin_scores<M: Objective + ?Sized>(
    model: &M,
    checkpoints: &[Checkpoint],
    train_set: &[Example],
    val_set: &[Example],
) -> Result<Vec<(u64, f64)>> {
    if checkpoints.is_empty() {
        return Err(Error::InvalidSpec("tracin needs at least one checkpoint".into()));
    }
    let val_grads = checkpoints
        .iter()
        .map(|c| model.mean_grad(&c.params, val_set))
        .collect::<Result<Vec<_>>>()?;
    let c = checkpoints.len() as f64;
    train_set
        .iter()
        .map(|z| {
            let mut total = 0.0;
            for (ck, v) in checkpoints.iter().zip(&val_grads) {
                total += ck.lr * model.grad_example(&ck.params, z)?.dot(v);
            }
            Ok((z.id, total / c))
        })
        .collect()
}
