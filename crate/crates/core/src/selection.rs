//! Exemplar selection policies.
//!
//! Every policy returns exactly `k` distinct ids drawn from the candidate
//! pool, in selection order. Ties always break toward the lower id.

use std::collections::{BTreeMap, HashMap};
use std::fmt;
use std::io::Write;
use std::str::FromStr;

use rand::seq::index::sample;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::influence::InfluenceRecord;
use crate::model::{Example, Objective, ParamVector};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Default)]
pub enum HesitMode {
    /// Highest raw score first (most beneficial).
    #[default]
    SignedDesc,
    /// Highest `|raw|` first.
    MagnitudeDesc,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Strategy {
    /// No replay.
    Vanilla,
    Random,
    Uniform,
    Reservoir,
    Gss,
    /// Lowest loss under the trained model.
    LossBased,
    Hesit(HesitMode),
}

impl Strategy {
    pub fn name(self) -> &'static str {
        match self {
            Strategy::Vanilla => "vanilla",
            Strategy::Random => "random",
            Strategy::Uniform => "uniform",
            Strategy::Reservoir => "reservoir",
            Strategy::Gss => "gss",
            Strategy::LossBased => "loss",
            Strategy::Hesit(HesitMode::SignedDesc) => "hesit",
            Strategy::Hesit(HesitMode::MagnitudeDesc) => "hesit_magnitude",
        }
    }
}

impl fmt::Display for Strategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Strategy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Ok(match s {
            "vanilla" => Strategy::Vanilla,
            "random" => Strategy::Random,
            "uniform" => Strategy::Uniform,
            "reservoir" => Strategy::Reservoir,
            "gss" => Strategy::Gss,
            "loss" | "arper" => Strategy::LossBased,
            "hesit" => Strategy::Hesit(HesitMode::SignedDesc),
            "hesit_magnitude" => Strategy::Hesit(HesitMode::MagnitudeDesc),
            other => return Err(Error::InvalidSpec(format!("unknown strategy {other:?}"))),
        })
    }
}

fn check_k(k: usize, pool: usize) -> Result<()> {
    if k > pool {
        return Err(Error::PoolTooSmall { k, pool });
    }
    Ok(())
}

/// Uniform sample without replacement.
pub fn select_random(candidates: &[Example], k: usize, seed: u64) -> Result<Vec<u64>> {
    check_k(k, candidates.len())?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Ok(sample(&mut rng, candidates.len(), k)
        .into_iter()
        .map(|i| candidates[i].id)
        .collect())
}

/// Round-robin over labels in ascending order, taking one random unpicked
/// member of each label per visit.
pub fn select_uniform_by_label(candidates: &[Example], k: usize, seed: u64) -> Result<Vec<u64>> {
    check_k(k, candidates.len())?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut groups: BTreeMap<usize, Vec<u64>> = BTreeMap::new();
    for e in candidates {
        groups.entry(e.label).or_default().push(e.id);
    }
    let mut queues: Vec<Vec<u64>> = groups
        .into_values()
        .map(|mut ids| {
            ids.sort_unstable();
            ids.shuffle(&mut rng);
            ids.reverse();
            ids
        })
        .collect();
    let mut out = Vec::with_capacity(k);
    while out.len() < k {
        for q in &mut queues {
            if out.len() == k {
                break;
            }
            if let Some(id) = q.pop() {
                out.push(id);
            }
        }
    }
    Ok(out)
}

/// Classic reservoir sampling over a single pass: keep the first `k`, then
/// item `n > k` replaces a uniformly chosen slot with probability `k / n`.
pub fn select_reservoir<'a, I>(stream: I, k: usize, seed: u64) -> Vec<u64>
where
    I: IntoIterator<Item = &'a Example>,
{
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut buf = Vec::with_capacity(k);
    for (i, e) in stream.into_iter().enumerate() {
        if buf.len() < k {
            buf.push(e.id);
        } else if k > 0 {
            let j = rng.random_range(0..=i);
            if j < k {
                buf[j] = e.id;
            }
        }
    }
    buf
}

/// Greedy gradient-diversity selection over precomputed gradients: the
/// largest-norm gradient first, then repeatedly the candidate whose maximum
/// cosine similarity to the chosen set is smallest.
pub fn select_gss_from_gradients(ids: &[u64], grads: &[ParamVector], k: usize) -> Result<Vec<u64>> {
    if ids.len() != grads.len() {
        return Err(Error::DimensionMismatch {
            what: "gradient list",
            expected: ids.len(),
            found: grads.len(),
        });
    }
    check_k(k, ids.len())?;
    if k == 0 {
        return Ok(Vec::new());
    }
    let mut order: Vec<usize> = (0..ids.len()).collect();
    order.sort_by_key(|&i| ids[i]);
    let norms: Vec<f64> = grads.iter().map(ParamVector::norm).collect();
    let cosine = |a: usize, b: usize| {
        if norms[a] == 0.0 || norms[b] == 0.0 {
            0.0
        } else {
            grads[a].dot(&grads[b]) / (norms[a] * norms[b])
        }
    };

    let mut chosen = vec![false; ids.len()];
    // norms equal up to rounding count as tied
    let mut first = order[0];
    for &i in &order {
        if norms[i] > norms[first] * (1.0 + 1e-12) {
            first = i;
        }
    }
    chosen[first] = true;
    let mut out = vec![ids[first]];
    let mut max_sim: Vec<f64> = (0..ids.len()).map(|i| cosine(i, first)).collect();

    while out.len() < k {
        let mut best: Option<usize> = None;
        for &i in &order {
            if chosen[i] {
                continue;
            }
            if best.is_none_or(|b| max_sim[i] < max_sim[b]) {
                best = Some(i);
            }
        }
        let pick = best.expect("k <= pool");
        chosen[pick] = true;
        out.push(ids[pick]);
        for i in 0..ids.len() {
            if !chosen[i] {
                max_sim[i] = max_sim[i].max(cosine(i, pick));
            }
        }
    }
    Ok(out)
}

/// Gradient-diversity selection with gradients taken at `params`.
pub fn select_gss<M: Objective + ?Sized>(
    model: &M,
    params: &ParamVector,
    candidates: &[Example],
    k: usize,
) -> Result<Vec<u64>> {
    check_k(k, candidates.len())?;
    let grads = candidates
        .iter()
        .map(|e| model.grad_example(params, e))
        .collect::<Result<Vec<_>>>()?;
    let ids: Vec<u64> = candidates.iter().map(|e| e.id).collect();
    select_gss_from_gradients(&ids, &grads, k)
}

/// The `k` candidates with the lowest loss at `params`.
pub fn select_loss_based<M: Objective + ?Sized>(
    model: &M,
    params: &ParamVector,
    candidates: &[Example],
    k: usize,
) -> Result<Vec<u64>> {
    check_k(k, candidates.len())?;
    let mut scored = candidates
        .iter()
        .map(|e| Ok((e.id, model.loss(params, e)?)))
        .collect::<Result<Vec<(u64, f64)>>>()?;
    scored.sort_by(|a, b| a.1.total_cmp(&b.1).then(a.0.cmp(&b.0)));
    Ok(scored.into_iter().take(k).map(|(id, _)| id).collect())
}

/// Top-`k` ids by score under `mode`.
pub fn top_k_by_score(scores: &[(u64, f64)], k: usize, mode: HesitMode) -> Result<Vec<u64>> {
    check_k(k, scores.len())?;
    let key = |s: f64| match mode {
        HesitMode::SignedDesc => s,
        HesitMode::MagnitudeDesc => s.abs(),
    };
    let mut sorted = scores.to_vec();
    sorted.sort_by(|a, b| key(b.1).total_cmp(&key(a.1)).then(a.0.cmp(&b.0)));
    Ok(sorted.into_iter().take(k).map(|(id, _)| id).collect())
}

/// Top-`k` candidates by influence score.
pub fn select_hesit(
    candidates: &[Example],
    records: &[InfluenceRecord],
    k: usize,
    mode: HesitMode,
) -> Result<Vec<u64>> {
    let by_id: HashMap<u64, f64> = records.iter().map(|r| (r.id, r.raw)).collect();
    let scores = candidates
        .iter()
        .map(|e| by_id.get(&e.id).map(|&s| (e.id, s)).ok_or(Error::MissingRecord(e.id)))
        .collect::<Result<Vec<_>>>()?;
    top_k_by_score(&scores, k, mode)
}

/// One task's selected exemplars, written as `task_id,strategy,example_id,rank`.
#[derive(Clone, Debug, PartialEq)]
pub struct SelectionRow {
    pub task_id: usize,
    pub strategy: Strategy,
    pub ids: Vec<u64>,
}

pub fn write_selection_csv<W: Write>(w: W, rows: &[SelectionRow]) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    out.write_record(["task_id", "strategy", "example_id", "rank"])?;
    for row in rows {
        for (rank, id) in row.ids.iter().enumerate() {
            out.write_record([
                row.task_id.to_string(),
                row.strategy.to_string(),
                id.to_string(),
                (rank + 1).to_string(),
            ])?;
        }
    }
    out.flush()?;
    Ok(())
}
