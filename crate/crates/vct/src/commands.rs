//! The four run-directory commands: `train`, `sample`, `eval` and `plot`.

use std::fs::{self, OpenOptions};
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use vct_core::eval::{evaluate, EvalReport};
use vct_core::networks::GaussianPosterior;
use vct_core::sampling::{time_points_for_steps, Model};
use vct_core::training::{grad_variance_probe, TrainState};
use vct_core::{DetRng, Tensor};

use crate::checkpoint::Checkpoint;
use crate::config::RunConfig;
use crate::error::{CliError, Result};
use crate::metrics::{csv_writer, ema_trace, fmt_real, read_metrics, IntervalStats, MetricsWriter};
use crate::rundir::{
    sha256_hex, RunDir, COMPARE_FILE, CONFIG_FILE, EVAL_CSV_FILE, EVAL_REPORT_FILE, METRICS_FILE,
    RUN_FILE,
};
use crate::svg::{self, Figure, Grid, Range, Series, PALETTE};

/// RNG stream for the gradient-variance probe (training uses 0, init 1).
const PROBE_STREAM: u64 = 2;
const SAMPLE_STREAM: u64 = 20;
const OVERLAY_STREAM: u64 = 21;
const PLOT_STREAM: u64 = 22;
const CONTOUR_STREAM: u64 = 23;

#[derive(Debug, Clone, PartialEq)]
pub enum ConfigSource {
    Preset(String),
    File(PathBuf),
}

impl ConfigSource {
    /// Raw bytes and a description of where they came from.
    fn load(&self) -> Result<(Vec<u8>, String)> {
        match self {
            ConfigSource::Preset(name) => Ok((
                RunConfig::preset(name)?.to_toml_string().into_bytes(),
                format!("preset:{name}"),
            )),
            ConfigSource::File(p) => Ok((
                fs::read(p).map_err(|e| CliError::io(p, e))?,
                format!("file:{}", p.display()),
            )),
        }
    }
}

fn parse_config(bytes: &[u8]) -> Result<RunConfig> {
    let text = std::str::from_utf8(bytes)
        .map_err(|_| CliError::Config("config is not valid UTF-8".into()))?;
    RunConfig::from_toml_str(text)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunInfo {
    pub seed: u64,
    pub config_source: String,
}

impl RunInfo {
    fn load(dir: &RunDir) -> Result<RunInfo> {
        serde_json::from_str(&dir.read_string(RUN_FILE)?)
            .map_err(|e| CliError::Checkpoint(format!("unreadable {RUN_FILE}: {e}")))
    }
}

#[derive(Debug, Clone)]
pub struct TrainOptions {
    pub run_dir: PathBuf,
    /// Required for a fresh run; on resume it must match the snapshot.
    pub source: Option<ConfigSource>,
    pub seed: Option<u64>,
    pub resume: bool,
    /// Stop once this many iterations are done, without a final checkpoint.
    pub halt_after: Option<u64>,
    pub progress: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainSummary {
    pub iterations_done: u64,
    pub finished: bool,
    pub skipped_steps: u64,
}

pub fn train(opts: &TrainOptions) -> Result<TrainSummary> {
    let dir = RunDir::new(&opts.run_dir);
    if opts.resume {
        return resume(&dir, opts);
    }
    let source = opts
        .source
        .as_ref()
        .ok_or_else(|| CliError::Argument("a fresh run needs --config or --preset".into()))?;
    let (bytes, label) = source.load()?;
    let cfg = parse_config(&bytes)?;
    dir.create()?;
    let _lock = dir.lock()?;
    if dir.exists(CONFIG_FILE) {
        return Err(CliError::Argument(format!(
            "{} already holds a run; pass --resume to continue it",
            dir.root().display()
        )));
    }
    let seed = opts.seed.unwrap_or(cfg.training.seed);
    dir.write_atomic(CONFIG_FILE, &bytes)?;
    let info = RunInfo {
        seed,
        config_source: label,
    };
    let info_text = serde_json::to_string_pretty(&info).expect("run info serializes");
    dir.write_atomic(RUN_FILE, format!("{info_text}\n").as_bytes())?;
    let tc = cfg.train_config();
    let state = TrainState::init(&tc, seed)?;
    let writer = MetricsWriter::create(&dir.path(METRICS_FILE))?;
    let probe_rng = DetRng::with_stream(seed, PROBE_STREAM);
    let loop_state = LoopState {
        state,
        probe_rng,
        grad_var_ema: None,
        seed,
        config_sha256: sha256_hex(&bytes),
    };
    let summary = run_loop(&dir, &cfg, loop_state, writer, opts)?;
    dir.finish()?;
    Ok(summary)
}

fn resume(dir: &RunDir, opts: &TrainOptions) -> Result<TrainSummary> {
    if !dir.exists(CONFIG_FILE) {
        return Err(CliError::Resume(format!(
            "{} holds no run to resume",
            dir.root().display()
        )));
    }
    let _lock = dir.lock()?;
    let snapshot = dir.read(CONFIG_FILE)?;
    let snapshot_sha = sha256_hex(&snapshot);
    if let Some(src) = &opts.source {
        let (bytes, _) = src.load()?;
        if sha256_hex(&bytes) != snapshot_sha {
            return Err(CliError::Resume(
                "given config differs from the run's config snapshot".into(),
            ));
        }
    }
    let cfg = parse_config(&snapshot)?;
    let info = RunInfo::load(dir)?;
    let seed = info.seed;
    if opts.seed.is_some_and(|s| s != seed) {
        return Err(CliError::Resume(format!("run was started with seed {seed}")));
    }
    let tc = cfg.train_config();
    let loop_state = match Checkpoint::load(dir) {
        Ok(ck) => {
            if ck.config_sha256 != snapshot_sha {
                return Err(CliError::Resume(
                    "checkpoint was written for a different config".into(),
                ));
            }
            if ck.seed != seed {
                return Err(CliError::Resume(format!(
                    "checkpoint seed {} differs from run seed {seed}",
                    ck.seed
                )));
            }
            let state = ck.train_state();
            state
                .theta
                .check_layout(&tc.consistency_net()?.init(&mut DetRng::seed_from_u64(0)))
                .map_err(|e| CliError::Resume(format!("checkpoint does not fit the model: {e}")))?;
            LoopState {
                state,
                probe_rng: DetRng::restore(&ck.probe_rng),
                grad_var_ema: ck.grad_var_ema,
                seed,
                config_sha256: snapshot_sha,
            }
        }
        // Interrupted before the first checkpoint: start over.
        Err(CliError::Checkpoint(_)) if !dir.exists(crate::rundir::CHECKPOINT_FILE) => LoopState {
            state: TrainState::init(&tc, seed)?,
            probe_rng: DetRng::with_stream(seed, PROBE_STREAM),
            grad_var_ema: None,
            seed,
            config_sha256: snapshot_sha,
        },
        Err(e) => return Err(e),
    };
    let metrics_path = dir.path(METRICS_FILE);
    let writer = if metrics_path.is_file() {
        MetricsWriter::resume(&metrics_path, loop_state.state.k)?
    } else {
        MetricsWriter::create(&metrics_path)?
    };
    let summary = run_loop(dir, &cfg, loop_state, writer, opts)?;
    dir.finish()?;
    Ok(summary)
}

struct LoopState {
    state: TrainState,
    probe_rng: DetRng,
    grad_var_ema: Option<f64>,
    seed: u64,
    config_sha256: String,
}

fn run_loop(
    dir: &RunDir,
    cfg: &RunConfig,
    mut ls: LoopState,
    mut writer: MetricsWriter,
    opts: &TrainOptions,
) -> Result<TrainSummary> {
    let tc = cfg.train_config();
    let data = cfg.mixture();
    let log = &cfg.logging;
    let total = cfg.training.iterations;
    let mut stats = IntervalStats::default();
    let mut skipped_steps = 0;
    while ls.state.k < total {
        if opts.halt_after == Some(ls.state.k) {
            return Ok(TrainSummary {
                iterations_done: ls.state.k,
                finished: false,
                skipped_steps,
            });
        }
        match ls.state.step(&tc, &data) {
            Ok(b) => stats.add(&b),
            Err(_) => {
                stats.skip();
                skipped_steps += 1;
            }
        }
        let k = ls.state.k;
        if k.is_multiple_of(log.interval) || k == total {
            let grad_var = if log.probe_count >= 2 {
                grad_variance_probe(
                    &tc,
                    &ls.state,
                    &data,
                    log.probe_count,
                    log.probe_batch,
                    &mut ls.probe_rng,
                )
                .ok()
                .filter(|v| v.is_finite())
            } else {
                None
            };
            if let Some(v) = grad_var {
                let rate = log.variance_ema;
                ls.grad_var_ema = Some(ls.grad_var_ema.map_or(v, |e| rate * e + (1.0 - rate) * v));
            }
            let row = stats.row(k, grad_var, ls.grad_var_ema);
            writer.append(&row)?;
            stats = IntervalStats::default();
            if opts.progress {
                eprintln!(
                    "iteration {k}/{total} total={:.6e} kl={:.6e} n_k={}",
                    row.total, row.kl, row.n_k
                );
            }
        }
        if k.is_multiple_of(log.checkpoint_interval) || k == total {
            Checkpoint::capture(&ls.config_sha256, ls.seed, &ls.state, &ls.probe_rng, ls.grad_var_ema)
                .save(dir)?;
        }
    }
    Ok(TrainSummary {
        iterations_done: ls.state.k,
        finished: true,
        skipped_steps,
    })
}

/// Config snapshot and checkpoint of a trained run directory.
pub struct LoadedRun {
    pub config: RunConfig,
    pub checkpoint: Checkpoint,
}

impl LoadedRun {
    pub fn load(dir: &RunDir) -> Result<LoadedRun> {
        if !dir.exists(CONFIG_FILE) {
            return Err(CliError::Checkpoint(format!(
                "{} holds no run",
                dir.root().display()
            )));
        }
        let config = parse_config(&dir.read(CONFIG_FILE)?)?;
        let checkpoint = Checkpoint::load(dir)?;
        Ok(LoadedRun { config, checkpoint })
    }

    pub fn model(&self) -> Result<Model<'_>> {
        let tc = self.config.train_config();
        let ck = &self.checkpoint;
        let use_ema = self.config.sampling.use_ema;
        let theta = if use_ema { &ck.theta_ema } else { &ck.theta };
        let encoder = match &ck.encoder {
            Some(e) => Some((tc.encoder_net()?, if use_ema { &e.phi_ema } else { &e.phi })),
            None => None,
        };
        Ok(Model {
            kernel: tc.kernel,
            net: tc.consistency_net()?,
            theta,
            encoder,
        })
    }
}

fn write_table(dir: &RunDir, name: &str, header: &[String], rows: &[Vec<String>]) -> Result<()> {
    let mut w = csv::WriterBuilder::new()
        .terminator(csv::Terminator::Any(b'\n'))
        .from_writer(Vec::new());
    let fail = |e: csv::Error| CliError::Metrics(format!("cannot format {name}: {e}"));
    w.write_record(header).map_err(fail)?;
    for r in rows {
        w.write_record(r).map_err(fail)?;
    }
    let bytes = w.into_inner().map_err(|e| CliError::Metrics(e.to_string()))?;
    dir.write_atomic(name, &bytes)
}

fn points_of(t: &Tensor) -> Vec<(f64, f64)> {
    (0..t.rows()).map(|i| (t.row(i)[0], t.row(i)[1])).collect()
}

#[derive(Debug, Clone)]
pub struct SampleOptions {
    pub run_dir: PathBuf,
    pub steps: usize,
    pub count: usize,
    pub seed: Option<u64>,
    pub overlay_data: bool,
}

/// Writes `samples_{steps}.csv`, plus `samples_{steps}.svg` for 2-D data.
pub fn sample(opts: &SampleOptions) -> Result<PathBuf> {
    let dir = RunDir::new(&opts.run_dir);
    let run = LoadedRun::load(&dir)?;
    let _lock = dir.lock()?;
    if opts.count == 0 {
        return Err(CliError::Argument("--count must be positive".into()));
    }
    let taus = time_points_for_steps(opts.steps, &run.config.sampling.time_points)
        .map_err(|e| CliError::Argument(e.to_string()))?;
    let seed = opts.seed.unwrap_or(run.checkpoint.seed);
    let model = run.model()?;
    let out = model.sample(opts.count, &taus, &mut DetRng::with_stream(seed, SAMPLE_STREAM))?;
    let d = model.data_dim();
    let header: Vec<String> = (0..d).map(|j| format!("dim{j}")).collect();
    let rows: Vec<Vec<String>> = (0..out.samples.rows())
        .map(|i| out.samples.row(i).iter().map(|v| fmt_real(*v)).collect())
        .collect();
    let name = format!("samples_{}.csv", opts.steps);
    write_table(&dir, &name, &header, &rows)?;
    if d == 2 {
        let data = run.config.mixture();
        let overlay = opts
            .overlay_data
            .then(|| points_of(&data.sample(opts.count, &mut DetRng::with_stream(seed, OVERLAY_STREAM))));
        let pts = points_of(&out.samples);
        let range_pts = || pts.iter().chain(overlay.iter().flatten());
        let mut fig = Figure::new(
            &format!("{}-step samples", opts.steps),
            "x",
            "y",
            Range::of(range_pts().map(|p| p.0)),
            Range::of(range_pts().map(|p| p.1)),
        );
        let mut legend = vec![("samples", PALETTE[0])];
        if let Some(o) = &overlay {
            fig.points(o, "#999999", 1.5, 0.5);
            legend.push(("data", "#999999"));
        }
        fig.points(&pts, PALETTE[0], 1.5, 0.6);
        fig.legend(&legend);
        dir.write_atomic(&format!("samples_{}.svg", opts.steps), fig.render().as_bytes())?;
    }
    dir.finish()?;
    Ok(dir.path(&name))
}

#[derive(Debug, Clone)]
pub struct EvalOptions {
    pub run_dir: PathBuf,
    pub count: Option<usize>,
    pub seed: Option<u64>,
    pub compare: Option<PathBuf>,
}

/// Flat `(name, value)` view of a report; booleans are 0/1.
pub fn report_fields(r: &EvalReport) -> Vec<(String, f64)> {
    let c = &r.elbo_chain;
    let mut out = vec![
        ("energy_distance".to_string(), r.energy_distance),
        ("energy_distance_multistep".into(), r.energy_distance_multistep),
        ("mmd_rbf".into(), r.mmd_rbf),
        ("posterior_mean_norm".into(), r.posterior_mean_norm),
        ("posterior_cov_deviation".into(), r.posterior_cov_deviation),
        ("kl_mean".into(), r.kl_mean),
        ("chain_lhs".into(), c.lhs),
        ("chain_lhs_data".into(), c.lhs_data),
        ("chain_kl".into(), c.kl),
        ("chain_nll_bound".into(), c.nll_bound),
        ("chain_violations".into(), c.violations() as f64),
        ("chain_rhs_monotone".into(), if c.rhs_monotone { 1.0 } else { 0.0 }),
    ];
    for t in &c.terms {
        out.push((format!("chain_n{}_triangle", t.n), t.triangle));
        out.push((format!("chain_n{}_rhs", t.n), t.rhs));
    }
    out
}

#[derive(Debug, Clone)]
pub struct EvalOutcome {
    pub report: EvalReport,
    /// `(metric, this, other, this - other)` when comparing.
    pub deltas: Option<Vec<(String, f64, f64, f64)>>,
}

fn fmt_field(name: &str, v: f64) -> String {
    if name == "chain_violations" || name == "chain_rhs_monotone" {
        format!("{}", v as u64)
    } else {
        fmt_real(v)
    }
}

pub fn eval(opts: &EvalOptions) -> Result<EvalOutcome> {
    let dir = RunDir::new(&opts.run_dir);
    let run = LoadedRun::load(&dir)?;
    let _lock = dir.lock()?;
    let n = opts.count.unwrap_or(run.config.eval.n_samples);
    if n < 2 {
        return Err(CliError::Argument("--count must be at least 2".into()));
    }
    let seed = opts.seed.unwrap_or(run.checkpoint.seed);
    let settings = run.config.eval_settings(n);
    let data = run.config.mixture();
    let report = evaluate(&run.model()?, &data, &settings, seed)?;
    let fields = report_fields(&report);

    let mut text = format!(
        "checkpoint_iteration={}\neval_seed={seed}\nn_samples={n}\n",
        run.checkpoint.k
    );
    for (k, v) in &fields {
        text.push_str(&format!("{k}={}\n", fmt_field(k, *v)));
    }
    dir.write_atomic(EVAL_REPORT_FILE, text.as_bytes())?;

    let mut header = vec!["checkpoint_iteration".to_string(), "eval_seed".into(), "n_samples".into()];
    header.extend(fields.iter().map(|(k, _)| k.clone()));
    let mut row = vec![run.checkpoint.k.to_string(), seed.to_string(), n.to_string()];
    row.extend(fields.iter().map(|(k, v)| fmt_field(k, *v)));
    append_eval_row(&dir, &header, &row)?;

    let deltas = match &opts.compare {
        Some(other_dir) => {
            let other = LoadedRun::load(&RunDir::new(other_dir))?;
            let other_report = evaluate(&other.model()?, &data, &settings, seed)?;
            let other_fields = report_fields(&other_report);
            if other_fields.len() != fields.len() {
                return Err(CliError::Argument(
                    "compared runs report different chain sizes".into(),
                ));
            }
            let deltas: Vec<(String, f64, f64, f64)> = fields
                .iter()
                .zip(&other_fields)
                .map(|((k, a), (_, b))| (k.clone(), *a, *b, a - b))
                .collect();
            let rows: Vec<Vec<String>> = deltas
                .iter()
                .map(|(k, a, b, d)| vec![k.clone(), fmt_real(*a), fmt_real(*b), fmt_real(*d)])
                .collect();
            let header = ["metric", "this", "other", "delta"].map(String::from);
            write_table(&dir, COMPARE_FILE, &header, &rows)?;
            Some(deltas)
        }
        None => None,
    };
    dir.finish()?;
    Ok(EvalOutcome { report, deltas })
}

/// One row per evaluation; a header change starts the file over.
fn append_eval_row(dir: &RunDir, header: &[String], row: &[String]) -> Result<()> {
    let path = dir.path(EVAL_CSV_FILE);
    let same_header = path.is_file()
        && csv::Reader::from_path(&path)
            .and_then(|mut r| r.headers().cloned())
            .map(|h| h.iter().eq(header.iter().map(String::as_str)))
            .unwrap_or(false);
    if !same_header {
        return write_table(dir, EVAL_CSV_FILE, header, &[row.to_vec()]);
    }
    let file = OpenOptions::new()
        .append(true)
        .open(&path)
        .map_err(|e| CliError::io(&path, e))?;
    let mut w = csv_writer(file);
    w.write_record(row)
        .and_then(|_| w.flush().map_err(csv::Error::from))
        .map_err(|e| CliError::Metrics(format!("cannot append to {EVAL_CSV_FILE}: {e}")))
}

#[derive(Debug, Clone)]
pub struct PlotOptions {
    pub run_dir: PathBuf,
    pub count: usize,
    pub seed: Option<u64>,
}

pub const PLOT_FILES: [&str; 3] = ["variance.svg", "loss.svg", "scatter_coupling.svg"];

pub fn plot(opts: &PlotOptions) -> Result<Vec<PathBuf>> {
    let dir = RunDir::new(&opts.run_dir);
    let rows = read_metrics(&dir.path(METRICS_FILE))?;
    let _lock = dir.lock()?;
    let rate = match parse_config(&dir.read(CONFIG_FILE).unwrap_or_default()) {
        Ok(c) => c.logging.variance_ema,
        Err(_) => 0.9,
    };

    let probed: Vec<(f64, f64)> = rows
        .iter()
        .filter_map(|r| r.grad_var.map(|v| (r.iteration as f64, v)))
        .collect();
    let log10 = |pts: &[(f64, f64)]| -> Vec<(f64, f64)> {
        pts.iter()
            .map(|&(x, y)| (x, if y > 0.0 { y.log10() } else { f64::NAN }))
            .collect()
    };
    let smooth: Vec<(f64, f64)> = probed
        .iter()
        .map(|p| p.0)
        .zip(ema_trace(&probed.iter().map(|p| p.1).collect::<Vec<_>>(), rate))
        .collect();
    let variance = svg::line_chart(
        "Gradient variance",
        "iteration",
        "log10 variance",
        &[
            Series { label: "probe", points: log10(&probed), color: "#9ecae1", width: 1.0 },
            Series { label: &format!("EMA {rate}"), points: log10(&smooth), color: PALETTE[0], width: 2.0 },
        ],
    );
    dir.write_atomic(PLOT_FILES[0], variance.as_bytes())?;

    let it = |f: fn(&crate::metrics::MetricsRow) -> f64| -> Vec<(f64, f64)> {
        rows.iter().map(|r| (r.iteration as f64, f(r))).collect()
    };
    let loss = svg::line_chart(
        "Training loss",
        "iteration",
        "interval mean",
        &[
            Series { label: "total", points: it(|r| r.total), color: PALETTE[0], width: 1.5 },
            Series { label: "consistency", points: it(|r| r.consistency), color: PALETTE[1], width: 1.5 },
            Series { label: "weighted KL", points: it(|r| r.lambda_kl * r.kl), color: PALETTE[2], width: 1.5 },
        ],
    );
    dir.write_atomic(PLOT_FILES[1], loss.as_bytes())?;

    let scatter = match LoadedRun::load(&dir) {
        Ok(run) => coupling_scatter(&run, opts)?,
        Err(_) => Figure::new(
            "Noise to sample (no checkpoint yet)",
            "x",
            "y",
            Range::of([]),
            Range::of([]),
        )
        .render(),
    };
    dir.write_atomic(PLOT_FILES[2], scatter.as_bytes())?;
    dir.finish()?;
    Ok(PLOT_FILES.iter().map(|f| dir.path(f)).collect())
}

/// Density of the aggregate posterior of each mixture component on a grid.
fn component_posterior_grids(run: &LoadedRun, model: &Model, seed: u64, range: Range) -> Result<Vec<Grid>> {
    const N: usize = 61;
    const PER_COMPONENT: usize = 200;
    let data = run.config.mixture();
    let mut rng = DetRng::with_stream(seed, CONTOUR_STREAM);
    let mut grids = Vec::new();
    for mean in &data.means {
        let x0 = Tensor::from_fn(&[PER_COMPONENT, 2], |i| mean[i % 2] + data.std * rng.normal());
        let post = match &model.encoder {
            Some((enc, phi)) => enc.forward(phi, &x0)?,
            None => GaussianPosterior {
                mean: Tensor::zeros(&[PER_COMPONENT, 2]),
                scale: Tensor::full(&[PER_COMPONENT, 2], 1.0),
            },
        };
        let mut g = Grid { nx: N, ny: N, x: range, y: range, values: vec![0.0; N * N] };
        for j in 0..N {
            for i in 0..N {
                let (x, y) = g.coord(i, j);
                let mut acc = 0.0;
                for r in 0..PER_COMPONENT {
                    let (m, s) = (post.mean.row(r), post.scale.row(r));
                    let zx = (x - m[0]) / s[0];
                    let zy = (y - m[1]) / s[1];
                    acc += (-0.5 * (zx * zx + zy * zy)).exp() / (s[0] * s[1]);
                }
                g.values[j * N + i] = acc / (PER_COMPONENT as f64 * 2.0 * std::f64::consts::PI);
            }
        }
        grids.push(g);
    }
    Ok(grids)
}

fn coupling_scatter(run: &LoadedRun, opts: &PlotOptions) -> Result<String> {
    let model = run.model()?;
    if model.data_dim() != 2 {
        return Ok(Figure::new("Noise to sample (2-D data only)", "x", "y", Range::of([]), Range::of([])).render());
    }
    let seed = opts.seed.unwrap_or(run.checkpoint.seed);
    let out = model.sample(opts.count.max(1), &[], &mut DetRng::with_stream(seed, PLOT_STREAM))?;
    let noise = points_of(&out.initial_noise);
    let samples = points_of(&out.samples);
    let means = &run.config.dataset.means;
    let nearest = |p: &(f64, f64)| {
        (0..means.len())
            .min_by(|&a, &b| {
                let da = (p.0 - means[a][0]).powi(2) + (p.1 - means[a][1]).powi(2);
                let db = (p.0 - means[b][0]).powi(2) + (p.1 - means[b][1]).powi(2);
                da.total_cmp(&db)
            })
            .unwrap_or(0)
    };
    let span = noise
        .iter()
        .chain(&samples)
        .flat_map(|p| [p.0.abs(), p.1.abs()])
        .filter(|v| v.is_finite())
        .fold(3.0f64, f64::max)
        .min(6.0);
    let range = Range { lo: -span, hi: span };
    let mut fig = Figure::new(
        "Noise to one-step sample, with per-component posterior contours",
        "x",
        "y",
        range,
        range,
    );
    let grids = component_posterior_grids(run, &model, seed, range)?;
    for (c, g) in grids.iter().enumerate() {
        let peak = g.values.iter().copied().fold(0.0f64, f64::max);
        for frac in [0.1, 0.3, 0.5, 0.7, 0.9] {
            fig.segments(&g.contour(frac * peak), PALETTE[c % PALETTE.len()], 1.0, 0.8);
        }
    }
    let links: Vec<_> = noise.iter().copied().zip(samples.iter().copied()).collect();
    fig.segments(&links, "#888888", 0.4, 0.35);
    fig.points(&noise, "#555555", 1.2, 0.5);
    for c in 0..means.len() {
        let pts: Vec<(f64, f64)> = samples.iter().filter(|p| nearest(p) == c).copied().collect();
        fig.points(&pts, PALETTE[c % PALETTE.len()], 1.6, 0.8);
    }
    let labels: Vec<String> = (0..means.len()).map(|c| format!("component {c}")).collect();
    let mut legend: Vec<(&str, &str)> = vec![("noise", "#555555")];
    legend.extend(labels.iter().enumerate().map(|(c, l)| (l.as_str(), PALETTE[c % PALETTE.len()])));
    fig.legend(&legend);
    Ok(fig.render())
}

/// Print a preset as TOML.
pub fn preset_text(name: &str) -> Result<String> {
    Ok(RunConfig::preset(name)?.to_toml_string())
}

/// Serializes `cfg` to a TOML file.
pub fn write_config_file(path: &Path, cfg: &RunConfig) -> Result<()> {
    let mut f = fs::File::create(path).map_err(|e| CliError::io(path, e))?;
    f.write_all(cfg.to_toml_string().as_bytes())
        .map_err(|e| CliError::io(path, e))
}
