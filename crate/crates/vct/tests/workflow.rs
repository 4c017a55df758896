use std::fs;
use std::path::{Path, PathBuf};

use vct::commands::{
    self, ConfigSource, EvalOptions, PlotOptions, SampleOptions, TrainOptions, PLOT_FILES,
};
use vct::rundir::{RunDir, CHECKPOINT_FILE, CONFIG_FILE, LOCK_FILE, METRICS_FILE};
use vct::CliError;

const SMALL: &str = "# tiny run for tests
[training]
iterations = 230
batch_size = 32
seed = 3

[model]
hidden_dim = 16
time_embed_dim = 8

[encoder]
hidden_dim = 8

[logging]
interval = 20
checkpoint_interval = 60
probe_count = 3
probe_batch = 16

[eval]
n_samples = 128
chain_batch = 16
";

fn write_config(dir: &Path, text: &str) -> PathBuf {
    let p = dir.join("run.toml");
    fs::write(&p, text).unwrap();
    p
}

fn train_opts(run: &Path, cfg: &Path) -> TrainOptions {
    TrainOptions {
        run_dir: run.to_path_buf(),
        source: Some(ConfigSource::File(cfg.to_path_buf())),
        seed: None,
        resume: false,
        halt_after: None,
        progress: false,
    }
}

fn resume_opts(run: &Path) -> TrainOptions {
    TrainOptions {
        run_dir: run.to_path_buf(),
        source: None,
        seed: None,
        resume: true,
        halt_after: None,
        progress: false,
    }
}

fn trained(tmp: &Path, name: &str, text: &str) -> PathBuf {
    let cfg = write_config(tmp, text);
    let run = tmp.join(name);
    let s = commands::train(&train_opts(&run, &cfg)).unwrap();
    assert!(s.finished);
    run
}

#[test]
fn same_config_and_seed_give_identical_metrics() {
    let tmp = tempfile::tempdir().unwrap();
    let a = trained(tmp.path(), "a", SMALL);
    let b = trained(tmp.path(), "b", SMALL);
    let ma = fs::read(a.join(METRICS_FILE)).unwrap();
    assert_eq!(ma, fs::read(b.join(METRICS_FILE)).unwrap());
    assert_eq!(
        fs::read(a.join(CHECKPOINT_FILE)).unwrap(),
        fs::read(b.join(CHECKPOINT_FILE)).unwrap()
    );
    // 230 iterations at interval 20: 11 full rows plus the final partial one.
    let text = String::from_utf8(ma).unwrap();
    assert_eq!(text.lines().count(), 1 + 12);
    assert!(text.lines().last().unwrap().starts_with("230,"));
    assert!(!text.contains('\r'));

    let cfg = write_config(tmp.path(), SMALL);
    let mut opts = train_opts(&tmp.path().join("c"), &cfg);
    opts.seed = Some(4);
    commands::train(&opts).unwrap();
    assert_ne!(
        fs::read(a.join(METRICS_FILE)).unwrap(),
        fs::read(tmp.path().join("c").join(METRICS_FILE)).unwrap()
    );
}

#[test]
fn resume_after_halt_reproduces_the_uninterrupted_run() {
    let tmp = tempfile::tempdir().unwrap();
    let whole = trained(tmp.path(), "whole", SMALL);
    let expected_metrics = fs::read(whole.join(METRICS_FILE)).unwrap();
    let expected_ck = fs::read(whole.join(CHECKPOINT_FILE)).unwrap();
    let cfg = write_config(tmp.path(), SMALL);
    // Before the first checkpoint, exactly on one, between logging points and
    // between checkpoints.
    for halt in [7u64, 60, 95, 130, 229] {
        let run = tmp.path().join(format!("halt{halt}"));
        let mut first = train_opts(&run, &cfg);
        first.halt_after = Some(halt);
        let s = commands::train(&first).unwrap();
        assert_eq!((s.iterations_done, s.finished), (halt, false));
        let s = commands::train(&resume_opts(&run)).unwrap();
        assert_eq!((s.iterations_done, s.finished), (230, true));
        assert_eq!(fs::read(run.join(METRICS_FILE)).unwrap(), expected_metrics, "halt {halt}");
        assert_eq!(fs::read(run.join(CHECKPOINT_FILE)).unwrap(), expected_ck, "halt {halt}");
        RunDir::new(&run).verify_manifest().unwrap();
    }
}

#[test]
fn resume_refuses_a_different_config_or_seed() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), SMALL);
    let run = tmp.path().join("r");
    let mut first = train_opts(&run, &cfg);
    first.halt_after = Some(70);
    commands::train(&first).unwrap();

    let other = tmp.path().join("other.toml");
    fs::write(&other, SMALL.replace("seed = 3", "seed = 5")).unwrap();
    let mut opts = resume_opts(&run);
    opts.source = Some(ConfigSource::File(other));
    assert!(matches!(commands::train(&opts), Err(CliError::Resume(_))));

    let mut opts = resume_opts(&run);
    opts.seed = Some(99);
    assert!(matches!(commands::train(&opts), Err(CliError::Resume(_))));

    // The same file is accepted.
    let mut opts = resume_opts(&run);
    opts.source = Some(ConfigSource::File(cfg));
    assert!(commands::train(&opts).unwrap().finished);

    // An edited snapshot no longer matches the checkpoint.
    let snap = run.join(CONFIG_FILE);
    fs::write(&snap, format!("{}\n# edited\n", fs::read_to_string(&snap).unwrap())).unwrap();
    assert!(matches!(commands::train(&resume_opts(&run)), Err(CliError::Resume(_))));
}

#[test]
fn fresh_training_will_not_overwrite_a_run() {
    let tmp = tempfile::tempdir().unwrap();
    let run = trained(tmp.path(), "r", SMALL);
    let cfg = write_config(tmp.path(), SMALL);
    assert!(matches!(commands::train(&train_opts(&run, &cfg)), Err(CliError::Argument(_))));
    assert!(matches!(commands::train(&resume_opts(&tmp.path().join("none"))), Err(CliError::Resume(_))));
}

#[test]
fn config_snapshot_is_byte_identical_and_manifest_covers_every_file() {
    let tmp = tempfile::tempdir().unwrap();
    let run = trained(tmp.path(), "r", SMALL);
    assert_eq!(fs::read_to_string(run.join(CONFIG_FILE)).unwrap(), SMALL);
    let dir = RunDir::new(&run);
    commands::sample(&SampleOptions {
        run_dir: run.clone(),
        steps: 2,
        count: 16,
        seed: None,
        overlay_data: true,
    })
    .unwrap();
    let manifest = dir.verify_manifest().unwrap();
    let mut names: Vec<_> = manifest.files.keys().cloned().collect();
    names.sort();
    assert_eq!(
        names,
        ["checkpoint.json", "config.toml", "metrics.csv", "run.json", "samples_2.csv", "samples_2.svg"]
    );
    assert!(!run.join(LOCK_FILE).exists());

    fs::write(run.join("metrics.csv"), "tampered").unwrap();
    assert!(matches!(dir.verify_manifest(), Err(CliError::Manifest(_))));
    dir.write_manifest().unwrap();
    fs::write(run.join("stray.txt"), "x").unwrap();
    assert!(matches!(dir.verify_manifest(), Err(CliError::Manifest(_))));
}

#[test]
fn sample_csv_has_the_requested_shape_and_is_reproducible() {
    let tmp = tempfile::tempdir().unwrap();
    let run = trained(tmp.path(), "r", SMALL);
    let opts = SampleOptions {
        run_dir: run.clone(),
        steps: 1,
        count: 2048,
        seed: Some(1),
        overlay_data: false,
    };
    let path = commands::sample(&opts).unwrap();
    let first = fs::read(&path).unwrap();
    let mut rdr = csv::Reader::from_reader(first.as_slice());
    assert_eq!(rdr.headers().unwrap().iter().collect::<Vec<_>>(), ["dim0", "dim1"]);
    let rows: Vec<_> = rdr.records().map(|r| r.unwrap()).collect();
    assert_eq!(rows.len(), 2048);
    assert!(rows.iter().all(|r| r.len() == 2 && r.iter().all(|v| v.parse::<f64>().unwrap().is_finite())));
    commands::sample(&opts).unwrap();
    assert_eq!(fs::read(&path).unwrap(), first);

    let too_many = SampleOptions { steps: 3, ..opts };
    assert!(matches!(commands::sample(&too_many), Err(CliError::Argument(_))));
}

#[test]
fn self_comparison_has_zero_deltas_and_no_nan() {
    let tmp = tempfile::tempdir().unwrap();
    let run = trained(tmp.path(), "r", SMALL);
    let out = commands::eval(&EvalOptions {
        run_dir: run.clone(),
        count: None,
        seed: None,
        compare: Some(run.clone()),
    })
    .unwrap();
    let deltas = out.deltas.unwrap();
    assert_eq!(deltas.len(), commands::report_fields(&out.report).len());
    assert!(deltas.iter().all(|(_, a, _, d)| a.is_finite() && *d == 0.0));

    let report = fs::read_to_string(run.join("eval_report.txt")).unwrap();
    for key in [
        "energy_distance",
        "energy_distance_multistep",
        "mmd_rbf",
        "posterior_mean_norm",
        "posterior_cov_deviation",
        "kl_mean",
        "chain_nll_bound",
        "chain_violations",
    ] {
        assert!(report.lines().any(|l| l.starts_with(&format!("{key}="))), "{key}");
    }
    assert!(!report.to_lowercase().contains("nan"));
    let compare = fs::read_to_string(run.join("compare.csv")).unwrap();
    assert!(compare.starts_with("metric,this,other,delta\n"));

    // A second evaluation appends one row.
    commands::eval(&EvalOptions { run_dir: run.clone(), count: Some(64), seed: Some(2), compare: None }).unwrap();
    let rows = fs::read_to_string(run.join("eval.csv")).unwrap();
    assert_eq!(rows.lines().count(), 3);
}

#[test]
fn plots_are_well_formed_svg() {
    let tmp = tempfile::tempdir().unwrap();
    let run = trained(tmp.path(), "r", SMALL);
    let paths = commands::plot(&PlotOptions { run_dir: run.clone(), count: 64, seed: None }).unwrap();
    assert_eq!(paths.len(), 3);
    for p in &paths {
        let text = fs::read_to_string(p).unwrap();
        let doc = roxmltree::Document::parse(&text).unwrap();
        assert_eq!(doc.root_element().tag_name().name(), "svg");
    }
    let scatter = fs::read_to_string(run.join("scatter_coupling.svg")).unwrap();
    let doc = roxmltree::Document::parse(&scatter).unwrap();
    let lines = doc.descendants().filter(|n| n.has_tag_name("line")).count();
    // 64 coupling links, tick marks and contour segments.
    assert!(lines > 64 + 12 + 50, "{lines}");
    let variance = fs::read_to_string(run.join("variance.svg")).unwrap();
    assert!(variance.contains("<polyline"));
}

#[test]
fn plot_handles_header_only_metrics_and_rejects_missing_ones() {
    let tmp = tempfile::tempdir().unwrap();
    let run = tmp.path().join("empty");
    fs::create_dir(&run).unwrap();
    let opts = PlotOptions { run_dir: run.clone(), count: 8, seed: None };
    assert!(matches!(commands::plot(&opts), Err(CliError::Metrics(_))));
    fs::write(
        run.join(METRICS_FILE),
        "iteration,consistency,kl,lambda_kl,total,grad_norm,grad_var,grad_var_ema,n_k,skipped\n",
    )
    .unwrap();
    commands::plot(&opts).unwrap();
    for name in PLOT_FILES {
        let text = fs::read_to_string(run.join(name)).unwrap();
        roxmltree::Document::parse(&text).unwrap();
    }
}

#[test]
fn commands_need_a_checkpoint() {
    let tmp = tempfile::tempdir().unwrap();
    let run = tmp.path().join("nothing");
    let s = commands::sample(&SampleOptions { run_dir: run.clone(), steps: 1, count: 4, seed: None, overlay_data: false });
    assert!(matches!(s, Err(CliError::Checkpoint(_))));
    let e = commands::eval(&EvalOptions { run_dir: run, count: None, seed: None, compare: None });
    assert!(matches!(e, Err(CliError::Checkpoint(_))));
}

#[test]
fn live_lock_blocks_and_stale_lock_is_taken_over() {
    let tmp = tempfile::tempdir().unwrap();
    let run = trained(tmp.path(), "r", SMALL);
    let opts = SampleOptions { run_dir: run.clone(), steps: 1, count: 4, seed: None, overlay_data: false };
    fs::write(run.join(LOCK_FILE), format!("{}\n", std::process::id())).unwrap();
    assert!(matches!(commands::sample(&opts), Err(CliError::Lock(_))));
    fs::write(run.join(LOCK_FILE), "4294967295\n").unwrap();
    commands::sample(&opts).unwrap();
    assert!(!run.join(LOCK_FILE).exists());
}

#[test]
fn ecm_and_ot_runs_complete() {
    let tmp = tempfile::tempdir().unwrap();
    let ecm = SMALL.to_string() + "\n[schedule]\nmode = \"ecm\"\n";
    trained(tmp.path(), "ecm", &ecm);
    let ot = SMALL.to_string() + "\n[coupling]\nkind = \"minibatch_ot\"\n";
    let run = trained(tmp.path(), "ot", &ot);
    let text = fs::read_to_string(run.join(METRICS_FILE)).unwrap();
    let last = text.lines().last().unwrap();
    // No encoder: KL and its weight are zero.
    let cols: Vec<&str> = last.split(',').collect();
    assert_eq!(cols[2].parse::<f64>().unwrap(), 0.0);
    assert_eq!(cols[3].parse::<f64>().unwrap(), 0.0);
}
