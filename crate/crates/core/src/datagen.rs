//! Deterministic Gaussian-mixture task streams and their CSV files.
//!
//! File layout: `id,f0,...,f{d-1},label,task_id,noise_flag,split` with
//! features written to 17 significant digits.

use std::collections::{BTreeMap, HashSet};
use std::fmt;
use std::io::{Read, Write};
use std::path::Path;
use std::str::FromStr;

use rand::seq::index::sample;
use rand::seq::{IndexedRandom, SliceRandom};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::digest::derive_seed;
use crate::error::{Error, Result};
use crate::model::Example;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Split {
    Trn,
    Val,
    Tst,
}

impl Split {
    pub fn as_str(self) -> &'static str {
        match self {
            Split::Trn => "trn",
            Split::Val => "val",
            Split::Tst => "tst",
        }
    }
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Split {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "trn" => Ok(Split::Trn),
            "val" => Ok(Split::Val),
            "tst" => Ok(Split::Tst),
            other => Err(Error::InvalidSpec(format!("unknown split {other:?}"))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub enum ShiftMode {
    /// Each task owns a disjoint block of classes.
    #[default]
    ClassSplit,
    /// Every task sees all classes, translated by a task-specific offset.
    MeanShift,
    /// Every task sees all classes, rotated in the first coordinate plane.
    Rotation,
}

impl FromStr for ShiftMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "class_split" => Ok(ShiftMode::ClassSplit),
            "mean_shift" => Ok(ShiftMode::MeanShift),
            "rotation" => Ok(ShiftMode::Rotation),
            other => Err(Error::InvalidSpec(format!("unknown shift mode {other:?}"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct StreamSpec {
    pub tasks: usize,
    pub input_dim: usize,
    pub classes: usize,
    pub task_sizes: Vec<usize>,
    /// Minimum distance between class means, in units of the (unit) noise
    /// standard deviation.
    pub separation: f64,
    pub shift: ShiftMode,
    /// Fraction of each task's training labels to corrupt.
    pub noise_fraction: Vec<f64>,
    /// Train / validation / test proportions.
    pub split: [f64; 3],
    pub seed: u64,
}

impl StreamSpec {
    /// Equal task sizes, no label noise, a 60/20/20 split.
    pub fn uniform(
        tasks: usize,
        input_dim: usize,
        classes: usize,
        size: usize,
        separation: f64,
        shift: ShiftMode,
        seed: u64,
    ) -> Self {
        StreamSpec {
            tasks,
            input_dim,
            classes,
            task_sizes: vec![size; tasks],
            separation,
            shift,
            noise_fraction: vec![0.0; tasks],
            split: [0.6, 0.2, 0.2],
            seed,
        }
    }

    pub fn with_noise(mut self, fraction: f64) -> Self {
        self.noise_fraction = vec![fraction; self.tasks];
        self
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidSpec(m.to_string()));
        if self.tasks == 0 || self.input_dim == 0 || self.classes == 0 {
            return bad("tasks, input_dim and classes must be positive");
        }
        if self.task_sizes.len() != self.tasks || self.noise_fraction.len() != self.tasks {
            return bad("task_sizes and noise_fraction need one entry per task");
        }
        if self.task_sizes.iter().any(|&n| n < self.classes) {
            return bad("every task size must be at least the class count");
        }
        if self.noise_fraction.iter().any(|&f| !(0.0..0.5).contains(&f)) {
            return bad("noise_fraction must lie in [0, 0.5)");
        }
        if self.split.iter().any(|&r| !(r >= 0.0)) || (self.split.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
            return bad("split ratios must be non-negative and sum to 1");
        }
        if !(self.separation >= 0.0 && self.separation.is_finite()) {
            return bad("separation must be finite and non-negative");
        }
        if self.shift == ShiftMode::ClassSplit && self.classes < self.tasks {
            return bad("class_split needs at least one class per task");
        }
        Ok(())
    }

    /// Classes used by task `t`.
    pub fn task_classes(&self, t: usize) -> Vec<usize> {
        match self.shift {
            ShiftMode::ClassSplit => {
                let lo = t * self.classes / self.tasks;
                let hi = (t + 1) * self.classes / self.tasks;
                (lo..hi).collect()
            }
            _ => (0..self.classes).collect(),
        }
    }

    /// Class means before any per-task transform.
    pub fn base_means(&self) -> Vec<Vec<f64>> {
        let (c, d, sep) = (self.classes, self.input_dim, self.separation);
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(self.seed, u64::MAX));
        if c == 1 {
            return vec![vec![0.0; d]];
        }
        if d == 1 {
            let mid = (c - 1) as f64 / 2.0;
            return (0..c).map(|k| vec![(k as f64 - mid) * sep]).collect();
        }
        if d == 2 {
            let radius = sep / (2.0 * (std::f64::consts::PI / c as f64).sin());
            let phase: f64 = rng.random_range(0.0..std::f64::consts::TAU);
            return (0..c)
                .map(|k| {
                    let a = phase + std::f64::consts::TAU * k as f64 / c as f64;
                    vec![radius * a.cos(), radius * a.sin()]
                })
                .collect();
        }
        if d >= c {
            // scaled simplex vertices on the first c axes
            let s = sep / std::f64::consts::SQRT_2;
            return (0..c)
                .map(|k| {
                    let mut m = vec![0.0; d];
                    m[k] = s;
                    m
                })
                .collect();
        }
        let dirs: Vec<Vec<f64>> = (0..c)
            .map(|_| {
                let v: Vec<f64> = (0..d).map(|_| rng.sample(StandardNormal)).collect();
                let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
                v.into_iter().map(|x| x / n).collect()
            })
            .collect();
        let mut min_dist = f64::INFINITY;
        for a in 0..c {
            for b in a + 1..c {
                let dist = dirs[a]
                    .iter()
                    .zip(&dirs[b])
                    .map(|(x, y)| (x - y) * (x - y))
                    .sum::<f64>()
                    .sqrt();
                min_dist = min_dist.min(dist);
            }
        }
        let s = sep / min_dist.max(1e-12);
        dirs.into_iter().map(|v| v.into_iter().map(|x| x * s).collect()).collect()
    }

    fn task_means(&self, t: usize, base: &[Vec<f64>]) -> Vec<Vec<f64>> {
        match self.shift {
            ShiftMode::ClassSplit => base.to_vec(),
            ShiftMode::MeanShift => {
                let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(self.seed, 1_000_000 + t as u64));
                let offset: Vec<f64> = (0..self.input_dim)
                    .map(|_| rng.sample::<f64, _>(StandardNormal) * self.separation)
                    .collect();
                base.iter()
                    .map(|m| m.iter().zip(&offset).map(|(a, b)| a + b).collect())
                    .collect()
            }
            ShiftMode::Rotation => {
                let angle = std::f64::consts::FRAC_PI_2 * t as f64 / self.tasks as f64;
                let (s, c) = angle.sin_cos();
                base.iter()
                    .map(|m| {
                        let mut r = m.clone();
                        if r.len() >= 2 {
                            r[0] = c * m[0] - s * m[1];
                            r[1] = s * m[0] + c * m[1];
                        }
                        r
                    })
                    .collect()
            }
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Task {
    pub id: usize,
    pub classes: Vec<usize>,
    pub train: Vec<Example>,
    pub val: Vec<Example>,
    pub test: Vec<Example>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct TaskStream {
    pub input_dim: usize,
    pub classes: usize,
    pub tasks: Vec<Task>,
}

impl TaskStream {
    /// All rows in file order.
    pub fn rows(&self) -> impl Iterator<Item = (&Example, Split)> {
        self.tasks.iter().flat_map(|t| {
            t.train
                .iter()
                .map(|e| (e, Split::Trn))
                .chain(t.val.iter().map(|e| (e, Split::Val)))
                .chain(t.test.iter().map(|e| (e, Split::Tst)))
        })
    }

    /// Groups rows by `task_id` and split.
    pub fn from_rows(rows: Vec<(Example, Split)>, input_dim: usize, classes: usize) -> Self {
        let mut tasks: BTreeMap<usize, Task> = BTreeMap::new();
        for (e, split) in rows {
            let task = tasks.entry(e.task_id).or_insert_with(|| Task {
                id: e.task_id,
                classes: Vec::new(),
                train: Vec::new(),
                val: Vec::new(),
                test: Vec::new(),
            });
            if !e.noise_flag && !task.classes.contains(&e.label) {
                task.classes.push(e.label);
            }
            match split {
                Split::Trn => task.train.push(e),
                Split::Val => task.val.push(e),
                Split::Tst => task.test.push(e),
            }
        }
        let mut tasks: Vec<Task> = tasks.into_values().collect();
        for t in &mut tasks {
            t.classes.sort_unstable();
        }
        TaskStream {
            input_dim,
            classes,
            tasks,
        }
    }
}

pub fn gen_task_stream(spec: &StreamSpec) -> Result<TaskStream> {
    spec.validate()?;
    let base = spec.base_means();
    let mut next_id = 0u64;
    let mut tasks = Vec::with_capacity(spec.tasks);
    for t in 0..spec.tasks {
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(spec.seed, t as u64));
        let classes = spec.task_classes(t);
        let means = spec.task_means(t, &base);
        let n = spec.task_sizes[t];

        let mut points: Vec<(Vec<f64>, usize)> = (0..n)
            .map(|i| {
                let label = classes[i % classes.len()];
                let x = means[label]
                    .iter()
                    .map(|m| m + rng.sample::<f64, _>(StandardNormal))
                    .collect();
                (x, label)
            })
            .collect();
        points.shuffle(&mut rng);

        let n_trn = ((n as f64 * spec.split[0]).round() as usize).min(n);
        let n_val = ((n as f64 * spec.split[1]).round() as usize).min(n - n_trn);
        let mut examples: Vec<Example> = points
            .into_iter()
            .map(|(features, label)| {
                let e = Example {
                    id: next_id,
                    features,
                    label,
                    task_id: t,
                    noise_flag: false,
                };
                next_id += 1;
                e
            })
            .collect();

        let n_noisy = (spec.noise_fraction[t] * n_trn as f64).floor() as usize;
        for i in sample(&mut rng, n_trn, n_noisy) {
            let e = &mut examples[i];
            let pool: Vec<usize> = if classes.len() >= 2 {
                classes.iter().copied().filter(|&c| c != e.label).collect()
            } else {
                (0..spec.classes).filter(|&c| c != e.label).collect()
            };
            if let Some(&flipped) = pool.choose(&mut rng) {
                e.label = flipped;
                e.noise_flag = true;
            }
        }

        let test = examples.split_off(n_trn + n_val);
        let val = examples.split_off(n_trn);
        tasks.push(Task {
            id: t,
            classes,
            train: examples,
            val,
            test,
        });
    }
    Ok(TaskStream {
        input_dim: spec.input_dim,
        classes: spec.classes,
        tasks,
    })
}

fn header(d: usize) -> Vec<String> {
    let mut h = vec!["id".to_string()];
    h.extend((0..d).map(|i| format!("f{i}")));
    h.extend(["label", "task_id", "noise_flag", "split"].map(String::from));
    h
}

pub fn write_examples<'a, W, I>(w: W, input_dim: usize, rows: I) -> Result<()>
where
    W: Write,
    I: IntoIterator<Item = (&'a Example, Split)>,
{
    let mut out = csv::Writer::from_writer(w);
    out.write_record(header(input_dim))?;
    for (e, split) in rows {
        if e.features.len() != input_dim {
            return Err(Error::DimensionMismatch {
                what: "example features",
                expected: input_dim,
                found: e.features.len(),
            });
        }
        let mut rec = vec![e.id.to_string()];
        rec.extend(e.features.iter().map(|v| format!("{v:.16e}")));
        rec.push(e.label.to_string());
        rec.push(e.task_id.to_string());
        rec.push(u8::from(e.noise_flag).to_string());
        rec.push(split.to_string());
        out.write_record(rec)?;
    }
    out.flush()?;
    Ok(())
}

/// Parses a dataset file, validating labels against `classes`.
pub fn read_examples<R: Read>(r: R, classes: usize) -> Result<(usize, Vec<(Example, Split)>)> {
    let mut rdr = csv::ReaderBuilder::new().flexible(true).from_reader(r);
    let head = rdr.headers()?.clone();
    let malformed = || Error::Parse {
        row: 0,
        msg: "malformed header; expected id,f0,...,f{d-1},label,task_id,noise_flag,split".into(),
    };
    if head.len() < 5 {
        return Err(malformed());
    }
    let d = head.len() - 5;
    if head.iter().ne(header(d).iter().map(String::as_str)) {
        return Err(malformed());
    }

    let mut rows = Vec::new();
    let mut seen = HashSet::new();
    for (i, rec) in rdr.records().enumerate() {
        let row = i + 1;
        let rec = rec?;
        let err = |msg: String| Error::Parse { row, msg };
        if rec.len() != head.len() {
            return Err(err(format!("expected {} fields, found {}", head.len(), rec.len())));
        }
        let id: u64 = rec[0].parse().map_err(|_| err(format!("bad id {:?}", &rec[0])))?;
        let features = (1..=d)
            .map(|k| rec[k].parse::<f64>().map_err(|_| err(format!("bad feature {:?}", &rec[k]))))
            .collect::<Result<Vec<f64>>>()?;
        let label: usize = rec[d + 1]
            .parse()
            .map_err(|_| err(format!("bad label {:?}", &rec[d + 1])))?;
        if label >= classes {
            return Err(err(format!("label {label} out of range for {classes} classes")));
        }
        let task_id: usize = rec[d + 2]
            .parse()
            .map_err(|_| err(format!("bad task_id {:?}", &rec[d + 2])))?;
        let noise_flag = match &rec[d + 3] {
            "0" | "false" => false,
            "1" | "true" => true,
            other => return Err(err(format!("bad noise_flag {other:?}"))),
        };
        let split: Split = rec[d + 4].parse().map_err(|_| err(format!("bad split {:?}", &rec[d + 4])))?;
        if !seen.insert(id) {
            return Err(err(format!("duplicate id {id}")));
        }
        rows.push((
            Example {
                id,
                features,
                label,
                task_id,
                noise_flag,
            },
            split,
        ));
    }
    if rows.is_empty() {
        return Err(Error::EmptyDataset);
    }
    Ok((d, rows))
}

pub fn save_stream(stream: &TaskStream, path: &Path) -> Result<()> {
    let f = std::fs::File::create(path)?;
    write_examples(std::io::BufWriter::new(f), stream.input_dim, stream.rows())
}

pub fn load_stream(path: &Path, classes: usize) -> Result<TaskStream> {
    let (d, rows) = read_examples(std::fs::File::open(path)?, classes)?;
    Ok(TaskStream::from_rows(rows, d, classes))
}

/// Writes one dataset with every row tagged `split`.
pub fn save_dataset(examples: &[Example], split: Split, path: &Path) -> Result<()> {
    let d = examples.first().map_or(0, |e| e.features.len());
    let f = std::fs::File::create(path)?;
    write_examples(std::io::BufWriter::new(f), d, examples.iter().map(|e| (e, split)))
}

/// Loads every row of a dataset file, ignoring the split column.
pub fn load_dataset(path: &Path, classes: usize) -> Result<Vec<Example>> {
    let (_, rows) = read_examples(std::fs::File::open(path)?, classes)?;
    Ok(rows.into_iter().map(|(e, _)| e).collect())
}
