//! Training-data influence estimators and their brute-force oracles.
//!
//! All scores share one orientation: a positive raw score marks an example
//! whose presence lowers the validation loss.

mod contribution;
mod hesit;
mod inverse;
mod oracle;
mod tracin;

pub use contribution::{class_contributions, contribution_matrix, ContributionEntry};
pub use hesit::{
    hesit_trace, hesit_trace_multi, HesitConfig, HesitTrace, HesitVariant, TraceAccumulator,
    TraceWindow,
};
pub use inverse::{
    cg_inverse_hvp, if_influence, if_scores, lissa_inverse_hvp, CgConfig, LissaConfig,
};
pub use oracle::{eps_fd_oracle, eps_fd_score, loo_oracle};
pub use tracin::{tracin_score, tracin_scores};

use std::fmt;
use std::io::{Read, Write};
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::model::{Example, Objective, ParamVector};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Method {
    Hesit,
    Tracin,
    Lissa,
    Cg,
    Loo,
    EpsFd,
}

impl Method {
    pub fn as_str(self) -> &'static str {
        match self {
            Method::Hesit => "hesit",
            Method::Tracin => "tracin",
            Method::Lissa => "lissa",
            Method::Cg => "cg",
            Method::Loo => "loo",
            Method::EpsFd => "eps_fd",
        }
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Ok(match s {
            "hesit" => Method::Hesit,
            "tracin" => Method::Tracin,
            "lissa" => Method::Lissa,
            "cg" => Method::Cg,
            "loo" => Method::Loo,
            "eps_fd" => Method::EpsFd,
            other => return Err(Error::InvalidSpec(format!("unknown method {other:?}"))),
        })
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct InfluenceRecord {
    pub id: u64,
    pub method: Method,
    pub raw: f64,
    /// `raw / max |raw|` over the scored set; zero when every raw score is.
    pub normalized: f64,
}

/// Builds records and normalizes them into `[-1, 1]`.
pub fn records_from_scores(method: Method, scores: &[(u64, f64)]) -> Vec<InfluenceRecord> {
    let max = scores.iter().map(|(_, s)| s.abs()).fold(0.0, f64::max);
    scores
        .iter()
        .map(|&(id, raw)| InfluenceRecord {
            id,
            method,
            raw,
            normalized: if max > 0.0 { raw / max } else { 0.0 },
        })
        .collect()
}

/// 1-based ranks by descending raw score, ties to the lower id.
pub fn ranks(records: &[InfluenceRecord]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..records.len()).collect();
    order.sort_by(|&a, &b| {
        records[b]
            .raw
            .total_cmp(&records[a].raw)
            .then(records[a].id.cmp(&records[b].id))
    });
    let mut rank = vec![0; records.len()];
    for (r, &i) in order.iter().enumerate() {
        rank[i] = r + 1;
    }
    rank
}

/// Writes `example_id,method,raw_score,normalized_score,rank`, sorted by rank.
pub fn write_influence_csv<W: Write>(w: W, records: &[InfluenceRecord]) -> Result<()> {
    let rank = ranks(records);
    let mut order: Vec<usize> = (0..records.len()).collect();
    order.sort_by_key(|&i| (records[i].method, rank[i]));
    let mut out = csv::Writer::from_writer(w);
    out.write_record(["example_id", "method", "raw_score", "normalized_score", "rank"])?;
    for i in order {
        let r = &records[i];
        out.write_record([
            r.id.to_string(),
            r.method.to_string(),
            format!("{:.16e}", r.raw),
            format!("{:.16e}", r.normalized),
            rank[i].to_string(),
        ])?;
    }
    out.flush()?;
    Ok(())
}

pub fn read_influence_csv<R: Read>(r: R) -> Result<Vec<InfluenceRecord>> {
    let mut rdr = csv::Reader::from_reader(r);
    let headers = rdr.headers()?.clone();
    let expected = ["example_id", "method", "raw_score", "normalized_score", "rank"];
    if headers.iter().ne(expected.iter().copied()) {
        return Err(Error::Parse {
            row: 0,
            msg: format!("expected header {}", expected.join(",")),
        });
    }
    let mut out = Vec::new();
    for (i, row) in rdr.records().enumerate() {
        let row = row?;
        let field = |k: usize| row.get(k).unwrap_or("");
        let parse_err = |what: &str| Error::Parse {
            row: i + 1,
            msg: format!("bad {what}"),
        };
        out.push(InfluenceRecord {
            id: field(0).parse().map_err(|_| parse_err("example_id"))?,
            method: field(1).parse()?,
            raw: field(2).parse().map_err(|_| parse_err("raw_score"))?,
            normalized: field(3).parse().map_err(|_| parse_err("normalized_score"))?,
        });
    }
    Ok(out)
}

/// Position of every id in `data`, failing on ids that are absent.
pub(crate) fn index_of_ids(data: &[Example], ids: &[u64]) -> Result<Vec<usize>> {
    let lookup: std::collections::HashMap<u64, usize> =
        data.iter().enumerate().map(|(i, e)| (e.id, i)).collect();
    ids.iter()
        .map(|id| lookup.get(id).copied().ok_or(Error::UnknownId(*id)))
        .collect()
}

/// Gradient of the mean validation loss at the given parameters.
pub fn validation_gradient<M: Objective + ?Sized>(
    model: &M,
    params: &ParamVector,
    val_set: &[Example],
) -> Result<ParamVector> {
    model.mean_grad(params, val_set)
}
