//! Inverse Hessian-vector products for classic influence functions.

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::digest::derive_seed;
use crate::error::{Error, Result};
use crate::model::{Example, Objective, ParamVector};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LissaConfig {
    pub depth: usize,
    pub repeat: usize,
    pub damping: f64,
    /// Must exceed the largest eigenvalue of `H + damping I`.
    pub scale: f64,
    /// Examples per sampled Hessian batch.
    pub batch_size: usize,
    pub seed: u64,
}

/// Growth of `||est|| / ||v||` treated as divergence.
const DIVERGENCE_RATIO: f64 = 1e6;

/// Stochastic Neumann-series estimate of `(H + damping I)^{-1} v`.
///
/// Each recursion starts at `v` and iterates
/// `est <- v + est - (H_b est + damping est) / scale` with `H_b` the Hessian
/// of a freshly sampled batch; the `repeat` recursions are averaged and
/// divided by `scale`.
pub fn lissa_inverse_hvp<M: Objective + ?Sized>(
    model: &M,
    params: &ParamVector,
    train_set: &[Example],
    v: &ParamVector,
    cfg: &LissaConfig,
) -> Result<ParamVector> {
    if cfg.depth == 0 || cfg.repeat == 0 {
        return Err(Error::InvalidSpec("lissa depth and repeat must be >= 1".into()));
    }
    if !(cfg.scale > 0.0) {
        return Err(Error::InvalidSpec("lissa scale must be positive".into()));
    }
    if train_set.is_empty() {
        return Err(Error::EmptyDataset);
    }
    model.check_params(params)?;
    let batch_size = cfg.batch_size.clamp(1, train_set.len());
    let limit = DIVERGENCE_RATIO * v.norm().max(f64::MIN_POSITIVE);

    let mut total = ParamVector::zeros(v.len());
    for rep in 0..cfg.repeat {
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(cfg.seed, rep as u64));
        let mut est = v.clone();
        for _ in 0..cfg.depth {
            let mut batch = sample(&mut rng, train_set.len(), batch_size).into_vec();
            batch.sort_unstable();
            let hv = model.hvp_indexed(params, train_set, &batch, &est)?;
            for i in 0..est.len() {
                est[i] = v[i] + est[i] - (hv[i] + cfg.damping * est[i]) / cfg.scale;
            }
            let norm = est.norm();
            if !norm.is_finite() || norm > limit {
                return Err(Error::Divergence {
                    scale: cfg.scale,
                    damping: cfg.damping,
                });
            }
        }
        total.axpy(1.0 / cfg.scale, &est);
    }
    total.scale(1.0 / cfg.repeat as f64);
    Ok(total)
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CgConfig {
    pub max_iter: usize,
    /// Relative residual target `||r|| <= tol ||v||`.
    pub tol: f64,
    pub damping: f64,
}

/// Conjugate-gradient solve of `(H + damping I) x = v` with the full-batch
/// Hessian. Returns the solution and the number of iterations used.
///
/// With `damping == 0` the caller is responsible for `H` being positive
/// definite; a non-positive curvature direction is reported as an error.
pub fn cg_inverse_hvp<M: Objective + ?Sized>(
    model: &M,
    params: &ParamVector,
    train_set: &[Example],
    v: &ParamVector,
    cfg: &CgConfig,
) -> Result<(ParamVector, usize)> {
    model.check_params(params)?;
    if train_set.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let all: Vec<usize> = (0..train_set.len()).collect();
    let apply = |p: &ParamVector| -> Result<ParamVector> {
        let mut out = model.hvp_indexed(params, train_set, &all, p)?;
        out.axpy(cfg.damping, p);
        Ok(out)
    };

    let target = cfg.tol * v.norm();
    let mut x = ParamVector::zeros(v.len());
    let mut r = v.clone();
    let mut p = r.clone();
    let mut rs = r.dot(&r);
    let mut iterations = 0;
    while rs.sqrt() > target && iterations < cfg.max_iter {
        iterations += 1;
        let ap = apply(&p)?;
        let curvature = p.dot(&ap);
        if !(curvature > 0.0) {
            return Err(Error::InvalidSpec(format!(
                "non-positive curvature {curvature:e} in CG; increase damping"
            )));
        }
        let alpha = rs / curvature;
        x.axpy(alpha, &p);
        r.axpy(-alpha, &ap);
        if !x.is_finite() {
            return Err(Error::NonFinite {
                step: iterations,
                context: "CG iterate".into(),
            });
        }
        let rs_new = r.dot(&r);
        let beta = rs_new / rs;
        rs = rs_new;
        for (pi, ri) in p.iter_mut().zip(r.iter()) {
            *pi = ri + beta * *pi;
        }
    }
    Ok((x, iterations))
}

/// `-(H^{-1} v) . grad l(z)`: the classic influence of up-weighting `z` on
/// the validation loss whose gradient is `v`. Negative means helpful.
pub fn if_influence<M: Objective + ?Sized>(
    model: &M,
    params: &ParamVector,
    inverse_hvp: &ParamVector,
    z: &Example,
) -> Result<f64> {
    if inverse_hvp.len() != params.len() {
        return Err(Error::DimensionMismatch {
            what: "inverse-HVP vector",
            expected: params.len(),
            found: inverse_hvp.len(),
        });
    }
    Ok(-inverse_hvp.dot(&model.grad_example(params, z)?))
}

/// Influence-function scores in leave-one-out orientation and scale:
/// `-if_influence / N`, positive for helpful examples.
pub fn if_scores<M: Objective + ?Sized>(
    model: &M,
    params: &ParamVector,
    inverse_hvp: &ParamVector,
    examples: &[Example],
    n: usize,
) -> Result<Vec<(u64, f64)>> {
    let inv_n = 1.0 / n.max(1) as f64;
    examples
        .iter()
        .map(|z| Ok((z.id, -if_influence(model, params, inverse_hvp, z)? * inv_n)))
        .collect()
}
