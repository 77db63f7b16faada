//! Command-line front end. Exit codes: 0 success, 1 usage or configuration
//! error, 2 data or numeric error.

use std::ffi::OsString;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand};

use crate::config::{OutputFormat, RunConfig};
use crate::datasets::{
    load_features, make_classification_shift, make_gaussian_mean_shift, save_features,
    save_regression_csv, split, Dataset, FileFormat, World,
};
use crate::diagnostics::Variant;
use crate::error::{write_text, Error, Result};
use crate::evaluation::{
    constructed_gate_setup, evaluate_gate, run_sweep, select_rounds, sweep_summary_json,
    with_worker_pool, write_sweep_csv, GateCandidate, GateReport, GateSetup, SelectionPolicy,
};
use crate::models::{fit, ridge_scaling_check, CheckStatus, Predictor, PredictorKind};

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 1;
pub const EXIT_DATA: i32 = 2;

#[derive(Debug, Parser)]
#[command(
    name = "trace-kit",
    version,
    about = "Risk-change diagnostics for model replacement under covariate shift"
)]
pub struct Cli {
    /// JSON run configuration; flags override its values.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Seed for every random draw of the command.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// ot or mmd.
    #[arg(long, global = true)]
    pub variant: Option<Variant>,
    /// Output directory (default: current directory).
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    /// json or csv.
    #[arg(long, global = true)]
    pub format: Option<OutputFormat>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Write a source and a shifted target sample.
    Synth {
        /// blobs, moons or gaussian-mean.
        #[arg(long)]
        world: Option<World>,
        /// Points per sample.
        #[arg(long)]
        n: Option<usize>,
    },
    /// Fit a predictor on the training split of a dataset.
    Train {
        /// Labeled dataset (.csv or .json).
        #[arg(long)]
        data: Option<PathBuf>,
        /// logistic-linear, mlp or ridge-linear.
        #[arg(long)]
        kind: Option<PredictorKind>,
        /// Output file stem.
        #[arg(long, default_value = "model")]
        name: String,
    },
    /// Compute the itemized bound for one model replacement.
    Diagnose {
        /// Source (anchor) dataset.
        #[arg(long)]
        source: Option<PathBuf>,
        /// Shifted target dataset.
        #[arg(long)]
        target: Option<PathBuf>,
        /// Model trained on the source.
        #[arg(long)]
        q: Option<PathBuf>,
        /// Replacement model trained on the target.
        #[arg(long)]
        qt: Option<PathBuf>,
        /// Labeled anchor test sample; adds the true risk change.
        #[arg(long)]
        test: Option<PathBuf>,
    },
    /// Score candidate updates against a reference model.
    Gate {
        /// Reference model; without it a synthetic candidate set is built.
        #[arg(long)]
        reference: Option<PathBuf>,
        /// Candidate model; repeat for each candidate (at least two).
        #[arg(long = "candidate")]
        candidates: Vec<PathBuf>,
        /// Labeled anchor dataset.
        #[arg(long)]
        anchor: Option<PathBuf>,
        /// Shifted target dataset.
        #[arg(long)]
        target: Option<PathBuf>,
        /// Labeled sample for the true risk change (default: the anchor).
        #[arg(long)]
        test: Option<PathBuf>,
    },
    /// Run a seeded severity sweep and report rank correlations.
    Sweep {
        /// blobs or moons.
        #[arg(long)]
        world: Option<World>,
    },
    /// Fit scaling slopes of the closed-form ridge example.
    RidgeCheck,
    /// Greedily select pool batches close to the anchor cloud.
    Select {
        /// Candidate pool dataset.
        #[arg(long)]
        pool: Option<PathBuf>,
        /// Anchor dataset the batches should resemble.
        #[arg(long)]
        anchor: Option<PathBuf>,
        /// w1min or mmdmin.
        #[arg(long)]
        policy: Option<SelectionPolicy>,
        /// Points per batch.
        #[arg(long)]
        batch_size: Option<usize>,
        /// Number of batches.
        #[arg(long)]
        rounds: Option<usize>,
    },
}

/// The serialized spelling of a unit enum, as accepted on the command line.
fn wire_name<T: serde::Serialize>(v: &T) -> String {
    serde_json::to_value(v)
        .ok()
        .and_then(|v| v.as_str().map(str::to_owned))
        .unwrap_or_default()
}

/// Maps an error to its exit code.
pub fn exit_code(e: &Error) -> i32 {
    if e.is_usage() {
        EXIT_USAGE
    } else {
        EXIT_DATA
    }
}

/// Parses `args`, runs the command, prints its summary and returns the exit
/// code.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
        }
    };
    match with_worker_pool(|| run(&cli)).and_then(|r| r) {
        Ok(summary) => {
            print!("{summary}");
            EXIT_OK
        }
        Err(e) => {
            eprintln!("error: {e}");
            exit_code(&e)
        }
    }
}

fn resolve_config(cli: &Cli) -> Result<RunConfig> {
    let mut cfg = match &cli.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    if let Some(s) = cli.seed {
        cfg.set_seed(s);
    }
    if let Some(v) = cli.variant {
        cfg.set_variant(v);
    }
    if let Some(o) = &cli.out {
        cfg.paths.out_dir = Some(o.clone());
    }
    if let Some(f) = cli.format {
        cfg.format = f;
    }
    Ok(cfg)
}

/// Runs the parsed command and returns the text to print.
pub fn run(cli: &Cli) -> Result<String> {
    let mut cfg = resolve_config(cli)?;
    let out = cfg
        .paths
        .out_dir
        .clone()
        .unwrap_or_else(|| PathBuf::from("."));
    std::fs::create_dir_all(&out).map_err(|source| Error::File {
        path: out.clone(),
        source,
    })?;
    match &cli.command {
        Command::Synth { world, n } => {
            if let Some(w) = world {
                cfg.shift.world = *w;
            }
            if let Some(n) = n {
                cfg.shift.n = *n;
            }
            cmd_synth(&cfg, &out)
        }
        Command::Train { data, kind, name } => {
            if let Some(k) = kind {
                cfg.model.kind = *k;
            }
            let data = pick(data, &cfg.paths.source, "data")?;
            cmd_train(&cfg, &data, name, &out)
        }
        Command::Diagnose {
            source,
            target,
            q,
            qt,
            test,
        } => {
            let files = DiagnoseFiles {
                source: pick(source, &cfg.paths.source, "source")?,
                target: pick(target, &cfg.paths.target, "target")?,
                q: pick(q, &cfg.paths.q_model, "q")?,
                qt: pick(qt, &cfg.paths.qt_model, "qt")?,
                test: test.clone().or_else(|| cfg.paths.test.clone()),
            };
            cmd_diagnose(&cfg, &files, &out)
        }
        Command::Gate {
            reference,
            candidates,
            anchor,
            target,
            test,
        } => {
            if reference.is_some() {
                cfg.paths.reference_model = reference.clone();
            }
            if !candidates.is_empty() {
                cfg.paths.candidate_models = candidates.clone();
            }
            if anchor.is_some() {
                cfg.paths.source = anchor.clone();
            }
            if target.is_some() {
                cfg.paths.target = target.clone();
            }
            if test.is_some() {
                cfg.paths.test = test.clone();
            }
            cmd_gate(&cfg, &out)
        }
        Command::Sweep { world } => {
            if let Some(w) = world {
                cfg.sweep.world = *w;
                if *w == World::Moons && cli.config.is_none() {
                    cfg.sweep.severities = crate::evaluation::SweepSpec::moons().severities;
                }
            }
            cmd_sweep(&cfg, &out)
        }
        Command::RidgeCheck => cmd_ridge_check(&cfg, &out),
        Command::Select {
            pool,
            anchor,
            policy,
            batch_size,
            rounds,
        } => {
            if let Some(p) = policy {
                cfg.selection.policy = *p;
            }
            if let Some(b) = batch_size {
                cfg.selection.batch_size = *b;
            }
            if let Some(r) = rounds {
                cfg.selection.rounds = *r;
            }
            let pool = pick(pool, &cfg.paths.pool, "pool")?;
            let anchor = pick(anchor, &cfg.paths.source, "anchor")?;
            cmd_select(&cfg, &pool, &anchor, &out)
        }
    }
}

fn pick(flag: &Option<PathBuf>, config: &Option<PathBuf>, name: &'static str) -> Result<PathBuf> {
    flag.clone()
        .or_else(|| config.clone())
        .ok_or_else(|| Error::invalid(name, "no path given by flag or configuration"))
}

fn load_dataset(path: &Path, class_count: Option<usize>) -> Result<Dataset> {
    load_features(path, FileFormat::from_path(path), class_count)
}

fn extension(format: OutputFormat) -> &'static str {
    match format {
        OutputFormat::Json => "json",
        OutputFormat::Csv => "csv",
    }
}

fn write_json(path: &Path, text: &str) -> Result<()> {
    write_text(path, text)
}

fn cmd_synth(cfg: &RunConfig, out: &Path) -> Result<String> {
    let (src, tgt) = if cfg.shift.world == World::GaussianMean {
        let (s, t) = make_gaussian_mean_shift(&cfg.shift)?;
        let (src, tgt) = (out.join("source.csv"), out.join("target.csv"));
        save_regression_csv(&s, &src)?;
        save_regression_csv(&t, &tgt)?;
        (src, tgt)
    } else {
        let (s, t) = make_classification_shift(&cfg.shift)?;
        let ext = extension(cfg.format);
        let (src, tgt) = (
            out.join(format!("source.{ext}")),
            out.join(format!("target.{ext}")),
        );
        let format = FileFormat::from_path(&src);
        save_features(&s, &src, format)?;
        save_features(&t, &tgt, format)?;
        (src, tgt)
    };
    Ok(format!(
        "wrote {} and {} ({} rows each)\n",
        src.display(),
        tgt.display(),
        cfg.shift.n
    ))
}

fn cmd_train(cfg: &RunConfig, data: &Path, name: &str, out: &Path) -> Result<String> {
    let ds = load_dataset(data, None)?;
    let (train, _) = split(&ds, &cfg.split)?;
    let m = &cfg.model;
    let p = fit(
        m.kind,
        train.features(),
        &train.targets(),
        ds.class_count(),
        m.hidden,
        m.logit_clip,
        &cfg.train,
    )?;
    let path = out.join(format!("{name}.json"));
    p.save(&path)?;
    Ok(format!(
        "trained {} on {} rows; wrote {}\n",
        wire_name(&m.kind),
        train.len(),
        path.display()
    ))
}

struct DiagnoseFiles {
    source: PathBuf,
    target: PathBuf,
    q: PathBuf,
    qt: PathBuf,
    test: Option<PathBuf>,
}

fn cmd_diagnose(cfg: &RunConfig, files: &DiagnoseFiles, out: &Path) -> Result<String> {
    let source = load_dataset(&files.source, None)?;
    let target = load_dataset(&files.target, Some(source.class_count()))?;
    let q = Predictor::load(&files.q)?;
    let qt = Predictor::load(&files.qt)?;
    let test = files
        .test
        .as_deref()
        .map(|p| load_dataset(p, Some(source.class_count())))
        .transpose()?;
    let report = cfg.diagnose_datasets(&source, &target, &q, &qt, test.as_ref())?;
    let path = out.join("report.json");
    write_json(&path, &report.to_json_pretty()?)?;
    let mut s = String::new();
    let _ = writeln!(s, "variant              {}", wire_name(&report.variant));
    for (name, v) in [
        ("g_q_val", report.g_q_val),
        ("g_qt_val", report.g_qt_val),
        ("model_change", report.model_change),
        ("empirical_shift", report.empirical_shift_penalty),
        ("label_noise", report.label_noise_remainder),
        ("validation_error", report.validation_set_error),
        ("population_residual", report.population_residual),
        ("total_ot", report.total_ot),
    ] {
        let _ = writeln!(s, "{name:<20} {v:.6}");
    }
    if let Some(t) = report.total_mmd {
        let _ = writeln!(s, "{:<20} {t:.6}", "total_mmd");
    }
    if let Some(d) = report.delta_r_true {
        let _ = writeln!(s, "{:<20} {d:.6}", "|delta_r|");
    }
    let _ = writeln!(s, "wrote {}", path.display());
    Ok(s)
}

fn gate_setup(cfg: &RunConfig) -> Result<GateSetup> {
    let p = &cfg.paths;
    let Some(reference) = &p.reference_model else {
        return constructed_gate_setup(&cfg.gate);
    };
    if p.candidate_models.len() < 2 {
        return Err(Error::invalid(
            "candidate_models",
            "a gate needs at least two candidates",
        ));
    }
    let anchor = load_dataset(
        p.source
            .as_deref()
            .ok_or_else(|| Error::invalid("anchor", "anchor data required"))?,
        None,
    )?;
    let target = load_dataset(
        p.target
            .as_deref()
            .ok_or_else(|| Error::invalid("target", "target data required"))?,
        Some(anchor.class_count()),
    )?;
    let test = match &p.test {
        Some(t) => load_dataset(t, Some(anchor.class_count()))?,
        None => anchor.clone(),
    };
    let candidates = p
        .candidate_models
        .iter()
        .map(|path| {
            Ok(GateCandidate {
                id: path
                    .file_stem()
                    .map(|s| s.to_string_lossy().into_owned())
                    .unwrap_or_default(),
                model: Predictor::load(path)?,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(GateSetup {
        reference: Predictor::load(reference)?,
        candidates,
        anchor,
        target,
        test,
    })
}

fn gate_table(report: &GateReport) -> String {
    let mut s = String::from("tau,score,positives,auroc,auprc,note\n");
    let opt = |v: Option<f64>| {
        v.map(|x| format!("{x:.6}"))
            .unwrap_or_else(|| "undefined".into())
    };
    for m in &report.metrics {
        let _ = writeln!(
            s,
            "{},{},{},{},{},{}",
            m.tau,
            m.score,
            m.positives,
            opt(m.auroc),
            opt(m.auprc),
            m.note.clone().unwrap_or_default().replace(',', ";")
        );
    }
    s
}

fn cmd_gate(cfg: &RunConfig, out: &Path) -> Result<String> {
    let setup = gate_setup(cfg)?;
    let report = evaluate_gate(&setup, &cfg.gate)?;
    let path = out.join("gate.json");
    write_json(&path, &serde_json::to_string_pretty(&report)?)?;
    let table = gate_table(&report);
    if cfg.format == OutputFormat::Csv {
        write_text(&out.join("gate.csv"), &table)?;
    }
    let mut s = String::new();
    for (col, rho) in &report.rho {
        let _ = writeln!(
            s,
            "spearman {col:<10} {}",
            rho.map(|r| format!("{r:.4}"))
                .unwrap_or_else(|| "undefined".into())
        );
    }
    s.push_str(&table);
    let _ = writeln!(s, "wrote {}", path.display());
    Ok(s)
}

fn cmd_sweep(cfg: &RunConfig, out: &Path) -> Result<String> {
    let result = run_sweep(&cfg.sweep)?;
    let csv_path = out.join("sweep.csv");
    write_sweep_csv(&result, &csv_path)?;
    let summary = sweep_summary_json(&result)?;
    write_json(&out.join("sweep_summary.json"), &summary)?;
    if cfg.format == OutputFormat::Json {
        write_json(
            &out.join("sweep.json"),
            &serde_json::to_string_pretty(&result)?,
        )?;
    }
    let fmt = |r: Option<f64>| {
        r.map(|v| format!("{v:.4}"))
            .unwrap_or_else(|| "undefined".into())
    };
    let mut s = format!(
        "runs {}\nspearman ot  {}\nspearman mmd {}\n",
        result.records.len(),
        fmt(result.rho_ot),
        fmt(result.rho_mmd)
    );
    for f in &result.flags {
        let _ = writeln!(s, "flag: {f}");
    }
    let _ = writeln!(s, "wrote {}", csv_path.display());
    Ok(s)
}

fn cmd_ridge_check(cfg: &RunConfig, out: &Path) -> Result<String> {
    let report = ridge_scaling_check(&cfg.ridge)?;
    write_json(
        &out.join("ridge_check.json"),
        &serde_json::to_string_pretty(&report)?,
    )?;
    let mut s = String::new();
    for c in &report.checks {
        let status = match c.status {
            CheckStatus::Pass => "PASS",
            CheckStatus::Fail => "FAIL",
            CheckStatus::Skipped => "SKIPPED",
        };
        let slope = c
            .slope
            .map(|v| format!("{v:.4}"))
            .unwrap_or_else(|| "-".into());
        let _ = writeln!(
            s,
            "{status} {} slope {slope} (expected {} ± {})",
            c.quantity, c.expected, c.tolerance
        );
    }
    Ok(s)
}

fn cmd_select(cfg: &RunConfig, pool: &Path, anchor: &Path, out: &Path) -> Result<String> {
    let pool = load_dataset(pool, None)?;
    let anchor = load_dataset(anchor, None)?;
    let rounds = select_rounds(
        pool.features(),
        anchor.features(),
        &cfg.selection,
        &cfg.diagnose.transport,
        &cfg.diagnose.kernel,
    )?;
    let path = out.join("selection.json");
    write_json(&path, &serde_json::to_string_pretty(&rounds)?)?;
    let mut s = String::new();
    for (i, r) in rounds.iter().enumerate() {
        let last = r.step_distances.last().copied().unwrap_or(0.0);
        let _ = writeln!(
            s,
            "round {} picked {} points, distance {last:.6}",
            i + 1,
            r.indices.len()
        );
    }
    let _ = writeln!(s, "wrote {}", path.display());
    Ok(s)
}
