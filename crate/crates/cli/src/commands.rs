use std::collections::HashMap;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::Instant;

use anyhow::{anyhow, Context as _};
use hesit::curriculum::{run_curriculum, CurriculumReport};
use hesit::datagen::{gen_task_stream, load_stream, write_examples, ShiftMode, StreamSpec, TaskStream};
use hesit::digest::{derive_seed, Fnv64};
use hesit::influence::{
    cg_inverse_hvp, eps_fd_oracle, hesit_trace, if_scores, lissa_inverse_hvp, loo_oracle,
    read_influence_csv, records_from_scores, tracin_scores, write_influence_csv, CgConfig,
    HesitConfig, InfluenceRecord, LissaConfig, Method, TraceWindow,
};
use hesit::model::Objective;
use hesit::selection::{write_selection_csv, SelectionRow, Strategy};
use hesit::stats::{pearson, sign_agreement, spearman};
use hesit::train::{CheckpointRecorder, TrajectoryHook};
use hesit::{Activation, Example, ModelSpec, TrainConfig, TrainEnv};
use rayon::prelude::*;

use crate::config::Config;
use crate::manifest::{Artifact, GradientTime, RunManifest, TimingRow};
use crate::{ConfigError, Failure};

pub struct Context {
    pub cfg: Config,
    pub out: PathBuf,
    pub to_stdout: bool,
    pub jobs: usize,
    pub manifest: RunManifest,
}

impl Context {
    pub fn new(command: &str, cfg: Config, out: PathBuf, to_stdout: bool, jobs: usize) -> Self {
        let manifest = RunManifest::new(command, cfg.digest(), cfg.seed);
        Context {
            cfg,
            out,
            to_stdout,
            jobs,
            manifest,
        }
    }

    /// Writes one output file and records it in the manifest. The primary
    /// artifact is also copied to stdout under `--stdout`.
    fn emit(&mut self, name: &str, bytes: &[u8], primary: bool) -> anyhow::Result<()> {
        let path = self.out.join(name);
        fs::write(&path, bytes).with_context(|| format!("writing {}", path.display()))?;
        let mut h = Fnv64::new();
        h.write(bytes);
        self.manifest.artifacts.push(Artifact {
            path: name.into(),
            digest: format!("{:016x}", h.finish()),
            config_digest: self.manifest.config_digest.clone(),
        });
        if primary && self.to_stdout {
            let mut out = std::io::stdout().lock();
            out.write_all(bytes)?;
            out.flush()?;
        }
        Ok(())
    }

    pub fn finish(&mut self, started: Instant) -> anyhow::Result<()> {
        self.manifest.add_phase("total", started.elapsed().as_secs_f64());
        let text = self.manifest.to_toml();
        let path = self.out.join("manifest.toml");
        fs::write(&path, text).with_context(|| format!("writing {}", path.display()))?;
        Ok(())
    }
}

fn runtime(e: impl Into<anyhow::Error>) -> Failure {
    Failure::Runtime(e.into())
}

fn config_err(key: &str, msg: impl Into<String>) -> Failure {
    Failure::Config(ConfigError {
        key: key.into(),
        msg: msg.into(),
    })
}

/// Generated or loaded task stream, checked against the model's shape.
fn load_data(cfg: &Config) -> Result<TaskStream, Failure> {
    match &cfg.data.path {
        Some(path) => {
            if !path.exists() {
                return Err(config_err("data.path", format!("{} does not exist", path.display())));
            }
            let stream = load_stream(path, cfg.data.classes).map_err(runtime)?;
            if stream.input_dim != cfg.data.input_dim {
                return Err(config_err(
                    "data.input_dim",
                    format!("file has {} features, config says {}", stream.input_dim, cfg.data.input_dim),
                ));
            }
            Ok(stream)
        }
        None => gen_task_stream(&cfg.stream_spec()?).map_err(runtime),
    }
}

fn chosen_task<'s>(cfg: &Config, stream: &'s TaskStream) -> Result<&'s hesit::datagen::Task, Failure> {
    stream.tasks.get(cfg.influence.task).ok_or_else(|| {
        config_err(
            "influence.task",
            format!("task {} out of range for {} tasks", cfg.influence.task, stream.tasks.len()),
        )
    })
}

/// Scores every training example of `train_set` with `method`.
fn score(
    cfg: &Config,
    method: Method,
    spec: &ModelSpec,
    tcfg: &TrainConfig,
    train_set: &[Example],
    val_set: &[Example],
) -> Result<Vec<InfluenceRecord>, Failure> {
    let env = TrainEnv::new(spec, tcfg, train_set, val_set);
    let ids: Vec<u64> = train_set.iter().map(|e| e.id).collect();
    let n = train_set.len();
    let scores: Vec<(u64, f64)> = match method {
        Method::Hesit => {
            let window = cfg.influence.window_epochs.map_or(TraceWindow::Full, TraceWindow::Epochs);
            let hcfg = HesitConfig::new(ids).with_variant(cfg.variant()?).with_window(window);
            return Ok(hesit_trace(&env, &hcfg).map_err(runtime)?.records);
        }
        Method::Tracin => {
            let mut rec = CheckpointRecorder::new(tcfg.steps_per_epoch(n));
            env.run(Some(&mut rec as &mut dyn TrajectoryHook)).map_err(runtime)?;
            tracin_scores(spec, &rec.checkpoints, train_set, val_set).map_err(runtime)?
        }
        Method::Lissa => inverse_scores(spec, &env, Inverse::Lissa(cfg.lissa()?))?,
        Method::Cg => inverse_scores(spec, &env, Inverse::Cg(cfg.cg()?))?,
        Method::Loo => loo_oracle(&env, &ids).map_err(runtime)?.into_iter().collect(),
        Method::EpsFd => ids
            .par_iter()
            .map(|&id| eps_fd_oracle(&env, id, cfg.influence.eps_step).map(|s| (id, s)))
            .collect::<hesit::Result<Vec<_>>>()
            .map_err(runtime)?,
    };
    Ok(records_from_scores(method, &scores))
}

enum Inverse {
    Lissa(LissaConfig),
    Cg(CgConfig),
}

/// Trains, solves for the inverse-HVP of the validation gradient and scores
/// every training example with it.
fn inverse_scores(
    spec: &ModelSpec,
    env: &TrainEnv<'_, ModelSpec>,
    inverse: Inverse,
) -> Result<Vec<(u64, f64)>, Failure> {
    let params = env.run(None).map_err(runtime)?.final_params;
    let v = spec.mean_grad(&params, env.val_set).map_err(runtime)?;
    let ihvp = match inverse {
        Inverse::Lissa(c) => lissa_inverse_hvp(spec, &params, env.train_set, &v, &c),
        Inverse::Cg(c) => cg_inverse_hvp(spec, &params, env.train_set, &v, &c).map(|(x, _)| x),
    }
    .map_err(runtime)?;
    if_scores(spec, &params, &ihvp, env.train_set, env.train_set.len()).map_err(runtime)
}

fn csv_bytes(f: impl FnOnce(&mut Vec<u8>) -> hesit::Result<()>) -> anyhow::Result<Vec<u8>> {
    let mut buf = Vec::new();
    f(&mut buf)?;
    Ok(buf)
}

pub fn gen_data(ctx: &mut Context) -> Result<(), Failure> {
    let t = Instant::now();
    let stream = load_data(&ctx.cfg)?;
    ctx.manifest.add_phase("generate", t.elapsed().as_secs_f64());
    let bytes = csv_bytes(|b| write_examples(b, stream.input_dim, stream.rows())).map_err(runtime)?;
    ctx.emit("data.csv", &bytes, true).map_err(runtime)
}

pub fn trace(ctx: &mut Context) -> Result<(), Failure> {
    let stream = load_data(&ctx.cfg)?;
    let task = chosen_task(&ctx.cfg, &stream)?;
    let (spec, tcfg, method) = (ctx.cfg.model_spec()?, ctx.cfg.train_config()?, ctx.cfg.method()?);
    let t = Instant::now();
    let records = score(&ctx.cfg, method, &spec, &tcfg, &task.train, &task.val)?;
    ctx.manifest.add_phase("trace", t.elapsed().as_secs_f64());
    let bytes = csv_bytes(|b| write_influence_csv(b, &records)).map_err(runtime)?;
    ctx.emit("influence.csv", &bytes, true).map_err(runtime)
}

pub fn oracle(ctx: &mut Context, against: Option<&Path>) -> Result<(), Failure> {
    let prior = match against {
        Some(p) => {
            let file = fs::File::open(p).map_err(|e| config_err("--against", format!("{}: {e}", p.display())))?;
            Some(read_influence_csv(file).map_err(runtime)?)
        }
        None => None,
    };
    let stream = load_data(&ctx.cfg)?;
    let task = chosen_task(&ctx.cfg, &stream)?;
    let (spec, tcfg, method) = (ctx.cfg.model_spec()?, ctx.cfg.train_config()?, ctx.cfg.oracle_method()?);
    let t = Instant::now();
    let records = score(&ctx.cfg, method, &spec, &tcfg, &task.train, &task.val)?;
    ctx.manifest.add_phase("oracle", t.elapsed().as_secs_f64());
    let bytes = csv_bytes(|b| write_influence_csv(b, &records)).map_err(runtime)?;
    ctx.emit("oracle.csv", &bytes, prior.is_none()).map_err(runtime)?;

    let Some(prior) = prior else { return Ok(()) };
    let truth: HashMap<u64, f64> = records.iter().map(|r| (r.id, r.raw)).collect();
    let mut methods: Vec<Method> = prior.iter().map(|r| r.method).collect();
    methods.sort();
    methods.dedup();
    let mut out = csv::Writer::from_writer(Vec::new());
    out.write_record(["method", "against", "n", "spearman", "pearson", "sign_agreement"])
        .map_err(runtime)?;
    for m in methods {
        let (xs, ys): (Vec<f64>, Vec<f64>) = prior
            .iter()
            .filter(|r| r.method == m)
            .filter_map(|r| truth.get(&r.id).map(|&o| (r.raw, o)))
            .unzip();
        if xs.is_empty() {
            return Err(runtime(anyhow!("no example ids shared between the oracle and {m} scores")));
        }
        out.write_record([
            m.to_string(),
            method.to_string(),
            xs.len().to_string(),
            format!("{:.6}", spearman(&xs, &ys)),
            format!("{:.6}", pearson(&xs, &ys)),
            format!("{:.6}", sign_agreement(&xs, &ys)),
        ])
        .map_err(runtime)?;
    }
    let bytes = out.into_inner().map_err(|e| runtime(anyhow!("{e}")))?;
    ctx.emit("correlation.csv", &bytes, true).map_err(runtime)
}

pub fn select(ctx: &mut Context) -> Result<(), Failure> {
    let stream = load_data(&ctx.cfg)?;
    let strategy = ctx.cfg.strategy()?;
    let report = run_arm(&ctx.cfg, &stream, strategy, 0)?;
    record_phases(ctx, &report);
    let rows: Vec<SelectionRow> = report
        .selections
        .iter()
        .map(|(task_id, ids)| SelectionRow {
            task_id: *task_id,
            strategy,
            ids: ids.clone(),
        })
        .collect();
    let bytes = csv_bytes(|b| write_selection_csv(b, &rows)).map_err(runtime)?;
    ctx.emit("selection.csv", &bytes, true).map_err(runtime)
}

pub fn run_cl(ctx: &mut Context) -> Result<(), Failure> {
    let stream = load_data(&ctx.cfg)?;
    let strategy = ctx.cfg.strategy()?;
    let report = run_arm(&ctx.cfg, &stream, strategy, 0)?;
    record_phases(ctx, &report);
    write_curves(ctx, &[(strategy, 0, report)])
}

pub fn compare(ctx: &mut Context) -> Result<(), Failure> {
    let stream = load_data(&ctx.cfg)?;
    let strategies = ctx
        .cfg
        .compare
        .strategies
        .iter()
        .map(|s| s.parse::<Strategy>().map_err(|e| config_err("compare.strategies", e.to_string())))
        .collect::<Result<Vec<_>, _>>()?;
    let arms: Vec<(Strategy, usize)> = strategies
        .iter()
        .flat_map(|&s| (0..ctx.cfg.compare.repeats).map(move |r| (s, r)))
        .collect();
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(ctx.jobs)
        .build()
        .map_err(runtime)?;
    let cfg = &ctx.cfg;
    let reports = pool.install(|| {
        arms.par_iter()
            .map(|&(s, r)| run_arm(cfg, &stream, s, r).map(|rep| (s, r, rep)))
            .collect::<Result<Vec<_>, Failure>>()
    })?;
    for (_, _, rep) in &reports {
        record_phases(ctx, rep);
    }
    write_curves(ctx, &reports)
}

/// One strategy and repeat of the curriculum. Repeats differ in their
/// training seed only; the data stream is shared.
fn run_arm(cfg: &Config, stream: &TaskStream, strategy: Strategy, repeat: usize) -> Result<CurriculumReport, Failure> {
    let mut spec = cfg.model_spec()?;
    spec.input_dim = stream.input_dim;
    let ccfg = cfg.curriculum(strategy, derive_seed(cfg.seed, repeat as u64))?;
    if ccfg.effective_k() > 0 {
        if let Some(t) = stream.tasks.iter().find(|t| t.train.len() < ccfg.k) {
            return Err(config_err(
                "selection.k",
                format!("k = {} exceeds the {} training examples of task {}", ccfg.k, t.train.len(), t.id),
            ));
        }
    }
    run_curriculum(&spec, None, stream, &ccfg).map_err(runtime)
}

fn record_phases(ctx: &mut Context, rep: &CurriculumReport) {
    let total: f64 = rep.task_secs.iter().sum();
    let traced: f64 = rep.trace_secs.iter().sum();
    ctx.manifest.add_phase("train", total - traced);
    ctx.manifest.add_phase("trace", traced);
}

fn write_curves(ctx: &mut Context, reports: &[(Strategy, usize, CurriculumReport)]) -> Result<(), Failure> {
    let mut curve = csv::Writer::from_writer(Vec::new());
    let mut summary = csv::Writer::from_writer(Vec::new());
    let w = |r: csv::Result<()>| r.map_err(runtime);
    w(curve.write_record(["strategy", "repeat", "after_task", "eval_task", "accuracy"]))?;
    w(summary.write_record([
        "strategy",
        "repeat",
        "final_avg_acc",
        "mean_forgetting",
        "total_sec",
        "trace_sec",
    ]))?;
    for (strategy, repeat, rep) in reports {
        for (i, row) in rep.accuracy.iter().enumerate() {
            for (j, acc) in row.iter().enumerate() {
                w(curve.write_record([
                    strategy.to_string(),
                    repeat.to_string(),
                    rep.order[i].to_string(),
                    rep.order[j].to_string(),
                    format!("{acc:.6}"),
                ]))?;
            }
        }
        // the last task cannot have been forgotten yet
        let earlier = &rep.forgetting[..rep.forgetting.len().saturating_sub(1)];
        let mean_forgetting = if earlier.is_empty() {
            0.0
        } else {
            earlier.iter().sum::<f64>() / earlier.len() as f64
        };
        w(summary.write_record([
            strategy.to_string(),
            repeat.to_string(),
            format!("{:.6}", rep.final_avg),
            format!("{mean_forgetting:.6}"),
            format!("{:.3}", rep.task_secs.iter().sum::<f64>()),
            format!("{:.3}", rep.trace_secs.iter().sum::<f64>()),
        ]))?;
    }
    let curve = curve.into_inner().map_err(|e| runtime(anyhow!("{e}")))?;
    let summary = summary.into_inner().map_err(|e| runtime(anyhow!("{e}")))?;
    ctx.emit("curve.csv", &curve, false).map_err(runtime)?;
    ctx.emit("summary.csv", &summary, true).map_err(runtime)
}

pub fn timing(ctx: &mut Context) -> Result<(), Failure> {
    let cfg = ctx.cfg.clone();
    let tc = &cfg.timing;
    let spec = if tc.hidden.is_empty() {
        ModelSpec::linear(tc.input_dim, tc.classes)
    } else {
        ModelSpec::mlp(tc.input_dim, tc.hidden.clone(), tc.classes, Activation::Tanh)
    }
    .with_l2(cfg.model.l2);
    let mut rows = Vec::new();
    for &[t_pool, v_pool] in &tc.pools {
        let mut sspec = StreamSpec::uniform(1, tc.input_dim, tc.classes, t_pool + v_pool, 3.0, ShiftMode::ClassSplit, cfg.seed);
        sspec.split = [1.0, 0.0, 0.0];
        let all = gen_task_stream(&sspec).map_err(runtime)?.tasks.remove(0).train;
        let (trn, val) = all.split_at(t_pool);
        let val = &val[..v_pool];
        let mut tcfg = cfg.train_config()?;
        tcfg.epochs = tc.epochs;
        tcfg.early_stopping = false;
        let env = TrainEnv::new(&spec, &tcfg, trn, val);

        let started = Instant::now();
        for z in trn {
            spec.grad_example(&env.init, z).map_err(runtime)?;
        }
        ctx.manifest.gradient_time.push(GradientTime {
            t: t_pool,
            v: v_pool,
            seconds: started.elapsed().as_secs_f64() / t_pool as f64,
        });

        for name in &tc.methods {
            let method: Method = name.parse().map_err(|e: hesit::Error| config_err("timing.methods", e.to_string()))?;
            let started = Instant::now();
            match method {
                Method::Hesit => {
                    let ids = trn.iter().map(|e| e.id).collect();
                    hesit_trace(&env, &HesitConfig::new(ids)).map_err(runtime)?;
                }
                Method::Tracin => {
                    let mut rec = CheckpointRecorder::new(tcfg.steps_per_epoch(t_pool));
                    env.run(Some(&mut rec as &mut dyn TrajectoryHook)).map_err(runtime)?;
                    tracin_scores(&spec, &rec.checkpoints, trn, val).map_err(runtime)?;
                }
                Method::Lissa => {
                    let lcfg = LissaConfig {
                        depth: (t_pool / 10).max(1),
                        repeat: 10,
                        damping: tc.damping,
                        scale: cfg.influence.lissa_scale,
                        batch_size: tcfg.batch_size,
                        seed: cfg.seed,
                    };
                    inverse_scores(&spec, &env, Inverse::Lissa(lcfg))?;
                }
                Method::Cg => {
                    let ccfg = CgConfig {
                        max_iter: t_pool,
                        tol: cfg.influence.cg_tol,
                        damping: tc.damping,
                    };
                    inverse_scores(&spec, &env, Inverse::Cg(ccfg))?;
                }
                Method::Loo | Method::EpsFd => {
                    return Err(config_err("timing.methods", format!("cannot time method {method}")))
                }
            }
            rows.push(TimingRow {
                method: method.to_string(),
                t: t_pool,
                v: v_pool,
                seconds: started.elapsed().as_secs_f64(),
            });
        }
    }
    let mut out = csv::Writer::from_writer(Vec::new());
    out.write_record(["method", "T", "V", "seconds"]).map_err(runtime)?;
    for r in &rows {
        out.write_record([r.method.clone(), r.t.to_string(), r.v.to_string(), format!("{:.6}", r.seconds)])
            .map_err(runtime)?;
    }
    let bytes = out.into_inner().map_err(|e| runtime(anyhow!("{e}")))?;
    ctx.manifest.timing = rows;
    ctx.emit("timing.csv", &bytes, true).map_err(runtime)
}
