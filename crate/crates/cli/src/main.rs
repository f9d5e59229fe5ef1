use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use conservnet::eval::{cross_section, evaluate, Axis};
use conservnet::experiment::ExperimentConfig;
use conservnet::ingest::{load_double_pendulum, simulated_recording, split_trajectory};
use conservnet::nn::load_checkpoint;
use conservnet::sweep::{sweep, to_csv, SweepAxis};
use conservnet::symbolic::{extract, DEFAULT_DEGREE, DEFAULT_LAMBDA, DEFAULT_THRESHOLD};
use conservnet::systems::{GroupedDataset, System};

/// Bad invocation: exit status 1.
#[derive(Debug)]
struct Usage(String);

impl std::fmt::Display for Usage {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for Usage {}

fn usage(msg: impl Into<String>) -> anyhow::Error {
    Usage(msg.into()).into()
}

#[derive(Parser)]
#[command(name = "conservnet", version, about = "Learn conserved quantities from grouped trajectories")]
struct Cli {
    /// Root directory for outputs when --out is not given.
    #[arg(long, global = true, env = "CONSERVNET_OUT", default_value = "runs")]
    root: PathBuf,
    #[command(subcommand)]
    cmd: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate train and test datasets for a system.
    Generate {
        system: String,
        #[arg(long, default_value_t = 20)]
        n: usize,
        #[arg(long, default_value_t = 100)]
        m: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Split a double-pendulum recording into train and test datasets.
    IngestDp {
        /// CSV with columns theta1, theta2, omega1, omega2.
        #[arg(required_unless_present = "simulated")]
        path: Option<PathBuf>,
        /// Use the built-in simulated recording instead of a file.
        #[arg(long, conflicts_with = "path")]
        simulated: bool,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Train a model and write metrics, summary and checkpoint.
    Train {
        #[command(flatten)]
        exp: ExperimentArgs,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Evaluate a checkpoint on a dataset.
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Model output on a 2-D grid with the other inputs held fixed.
    Heatmap {
        #[arg(long)]
        checkpoint: PathBuf,
        /// Dataset supplying variable names and default ranges.
        #[arg(long)]
        data: PathBuf,
        /// Fixed inputs, e.g. theta1=0,theta2=0 (stored units).
        #[arg(long, value_delimiter = ',')]
        fix: Vec<String>,
        /// The two free inputs, e.g. omega1,omega2.
        #[arg(long, value_delimiter = ',')]
        free: Vec<String>,
        /// Ranges of the free inputs as lo:hi, one per free input.
        #[arg(long, value_delimiter = ',')]
        range: Vec<String>,
        #[arg(long, default_value_t = 50)]
        resolution: usize,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Train once per value of one config axis.
    Sweep {
        #[arg(long)]
        axis: String,
        /// Comma-separated values; defaults depend on the axis.
        #[arg(long, value_delimiter = ',')]
        values: Vec<String>,
        #[command(flatten)]
        exp: ExperimentArgs,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Fit a sparse polynomial to a trained model's outputs.
    Extract {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long, default_value_t = DEFAULT_DEGREE)]
        degree: usize,
        #[arg(long, default_value_t = DEFAULT_LAMBDA)]
        lambda: f64,
        #[arg(long, default_value_t = DEFAULT_THRESHOLD)]
        threshold: f64,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(Args)]
struct ExperimentArgs {
    /// Config file of `key = value` lines.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Override a config key; repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    sets: Vec<String>,
    #[arg(long)]
    system: Option<String>,
    #[arg(long)]
    train_data: Option<PathBuf>,
    #[arg(long)]
    test_data: Option<PathBuf>,
    #[arg(long)]
    n: Option<usize>,
    #[arg(long)]
    m: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long)]
    width: Option<usize>,
    /// noise_variance or simple.
    #[arg(long)]
    loss: Option<String>,
}

impl ExperimentArgs {
    fn resolve(&self) -> Result<ExperimentConfig> {
        let mut cfg = ExperimentConfig::default();
        if let Some(path) = &self.config {
            let text = fs::read_to_string(path).map_err(|e| usage(format!("cannot read {}: {e}", path.display())))?;
            cfg.apply_text(&text).map_err(|e| usage(format!("{}: {e}", path.display())))?;
        }
        let mut pairs: Vec<(String, String)> = Vec::new();
        let flag = |k: &str, v: Option<String>, pairs: &mut Vec<(String, String)>| {
            if let Some(v) = v {
                pairs.push((k.to_string(), v));
            }
        };
        flag("system", self.system.clone(), &mut pairs);
        flag("train_data", self.train_data.as_ref().map(|p| p.display().to_string()), &mut pairs);
        flag("test_data", self.test_data.as_ref().map(|p| p.display().to_string()), &mut pairs);
        flag("n", self.n.map(|v| v.to_string()), &mut pairs);
        flag("m", self.m.map(|v| v.to_string()), &mut pairs);
        flag("seed", self.seed.map(|v| v.to_string()), &mut pairs);
        flag("epochs", self.epochs.map(|v| v.to_string()), &mut pairs);
        flag("lr", self.lr.map(|v| format!("{v:?}")), &mut pairs);
        flag("width", self.width.map(|v| v.to_string()), &mut pairs);
        flag("loss", self.loss.clone(), &mut pairs);
        for s in &self.sets {
            let (k, v) = s.split_once('=').ok_or_else(|| usage(format!("--set expects KEY=VALUE, got `{s}`")))?;
            pairs.push((k.to_string(), v.to_string()));
        }
        for (k, v) in pairs {
            cfg.set(&k, &v).map_err(|e| usage(e.to_string()))?;
        }
        if let conservnet::experiment::DataSource::Files { train, test } = &cfg.data {
            require(train)?;
            if let Some(t) = test {
                require(t)?;
            }
        }
        cfg.validate().map_err(|e| usage(e.to_string()))?;
        Ok(cfg)
    }
}

fn require(path: &Path) -> Result<()> {
    if !path.exists() {
        return Err(usage(format!("missing file: {}", path.display())));
    }
    Ok(())
}

fn load_dataset(path: &Path) -> Result<GroupedDataset> {
    require(path)?;
    GroupedDataset::load(path).with_context(|| format!("loading {}", path.display()))
}

fn load_model(path: &Path) -> Result<conservnet::nn::MlpParams> {
    require(path)?;
    load_checkpoint(path).with_context(|| format!("loading {}", path.display()))
}

fn write_json<T: serde::Serialize>(path: &Path, value: &T) -> Result<()> {
    fs::write(path, serde_json::to_string_pretty(value)? + "\n").with_context(|| format!("writing {}", path.display()))
}

fn out_dir(root: &Path, out: Option<PathBuf>, default: impl FnOnce() -> PathBuf) -> Result<PathBuf> {
    let dir = out.unwrap_or_else(|| root.join(default()));
    fs::create_dir_all(&dir).with_context(|| format!("creating {}", dir.display()))?;
    Ok(dir)
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map_or_else(|| "undefined".to_string(), |x| format!("{x:.4}"))
}

fn parse_range(s: &str) -> Result<(f64, f64)> {
    let (lo, hi) = s.split_once(':').ok_or_else(|| usage(format!("range `{s}` is not lo:hi")))?;
    let p = |v: &str| v.trim().parse::<f64>().map_err(|_| usage(format!("bad number `{v}` in range `{s}`")));
    Ok((p(lo)?, p(hi)?))
}

fn run(cli: Cli) -> Result<()> {
    let root = cli.root;
    match cli.cmd {
        Command::Generate { system, n, m, seed, out } => {
            let sys: System = system.parse().map_err(|e: conservnet::Error| usage(e.to_string()))?;
            let dir = out_dir(&root, out, || PathBuf::from(format!("data/{}_{n}x{m}_seed{seed}", sys.name())))?;
            let cfg =
                ExperimentConfig::from_text(&format!("system = {}\nn = {n}\nm = {m}\ndata_seed = {seed}", sys.name()))?;
            let (train, test) = cfg.datasets()?;
            let (train_csv, _) = train.save(dir.join("train"))?;
            let (test_csv, _) = test.expect("generated configs include a test split").save(dir.join("test"))?;
            println!("{}", train_csv.display());
            println!("{}", test_csv.display());
        }
        Command::IngestDp { path, simulated, out } => {
            let (train, test) = if simulated {
                split_trajectory(&simulated_recording()?)?
            } else {
                let path = path.expect("clap requires a path without --simulated");
                require(&path)?;
                load_double_pendulum(&path).with_context(|| format!("reading {}", path.display()))?
            };
            let dir = out_dir(&root, out, || PathBuf::from("data/double_pendulum"))?;
            let (a, _) = train.save(dir.join("train"))?;
            let (b, _) = test.save(dir.join("test"))?;
            println!("{} ({} points)", a.display(), train.num_points());
            println!("{} ({} points)", b.display(), test.num_points());
        }
        Command::Train { exp, out } => {
            let cfg = exp.resolve()?;
            let dir = out_dir(&root, out, || PathBuf::from(cfg.hash()))?;
            let outcome = cfg.run_to_dir(&dir)?;
            let last = outcome.report.last();
            println!(
                "{}: epochs {} ({:?}) train loss {:.6} rho {} sigma {:.6}",
                dir.display(),
                outcome.report.epochs_run,
                outcome.report.stop_reason,
                last.train_loss,
                fmt_opt(outcome.train_eval.rho),
                outcome.train_eval.sigma_bar
            );
            if outcome.train_eval.degenerate {
                println!("warning: model output is constant over the training data");
            }
        }
        Command::Eval { checkpoint, data, out } => {
            let model = load_model(&checkpoint)?;
            let ds = load_dataset(&data)?;
            let report = evaluate(&model, &ds)?;
            match out {
                Some(path) => write_json(&path, &report)?,
                None => println!("{}", serde_json::to_string_pretty(&report)?),
            }
            eprintln!("rho {} sigma_bar {:.6}", fmt_opt(report.rho), report.sigma_bar);
        }
        Command::Heatmap { checkpoint, data, fix, free, range, resolution, out } => {
            let model = load_model(&checkpoint)?;
            let ds = load_dataset(&data)?;
            let index =
                |name: &str| ds.variable_index(name.trim()).ok_or_else(|| usage(format!("unknown variable `{name}`")));
            let mut fixed = Vec::new();
            for f in &fix {
                let (k, v) = f.split_once('=').ok_or_else(|| usage(format!("--fix expects NAME=VALUE, got `{f}`")))?;
                let v: f64 = v.trim().parse().map_err(|_| usage(format!("bad value in `{f}`")))?;
                fixed.push((index(k)?, v));
            }
            if free.len() != 2 {
                bail!(usage("--free needs exactly two variables"));
            }
            if !range.is_empty() && range.len() != 2 {
                bail!(usage("--range needs one lo:hi per free variable"));
            }
            let all = ds.all_states();
            let mut axes = Vec::new();
            for (i, name) in free.iter().enumerate() {
                let var = index(name)?;
                let (lo, hi) = match range.get(i) {
                    Some(r) => parse_range(r)?,
                    None => {
                        let c = all.column(var);
                        (c.fold(f64::INFINITY, |a, &b| a.min(b)), c.fold(f64::NEG_INFINITY, |a, &b| a.max(b)))
                    }
                };
                axes.push(Axis { var, lo, hi, n: resolution });
            }
            let map = cross_section(&model, &fixed, axes[0], axes[1]).map_err(|e| usage(e.to_string()))?;
            let dir = out_dir(&root, out, || PathBuf::from("heatmap"))?;
            fs::write(dir.join("heatmap.csv"), map.to_csv())?;
            let names: Vec<_> = fixed.iter().map(|(i, v)| (ds.meta.variables[*i].clone(), *v)).collect();
            let meta = serde_json::json!({
                "rows": { "variable": free[0], "lo": axes[0].lo, "hi": axes[0].hi, "n": axes[0].n },
                "cols": { "variable": free[1], "lo": axes[1].lo, "hi": axes[1].hi, "n": axes[1].n },
                "fixed": names,
                "checkpoint": checkpoint.display().to_string(),
            });
            write_json(&dir.join("heatmap.json"), &meta)?;
            println!("{}", dir.join("heatmap.csv").display());
        }
        Command::Sweep { axis, values, exp, out } => {
            let axis: SweepAxis = axis.parse().map_err(|e: conservnet::Error| usage(e.to_string()))?;
            let cfg = exp.resolve()?;
            let values = if values.is_empty() { axis.default_values() } else { values };
            let dir = out_dir(&root, out, || PathBuf::from(format!("sweep_{}_{}", axis.name(), cfg.hash())))?;
            fs::write(dir.join("base_config.txt"), cfg.to_text())?;
            let rows: Vec<_> = sweep(&cfg, axis, &values, Some(&dir)).into_iter().map(|(r, _)| r).collect();
            fs::write(dir.join("sweep.csv"), to_csv(&rows))?;
            for r in &rows {
                match &r.error {
                    Some(e) => println!("{} = {}: failed: {e}", axis.name(), r.value),
                    None => println!(
                        "{} = {}: rho {} rho_test {}",
                        axis.name(),
                        r.value,
                        fmt_opt(r.rho),
                        fmt_opt(r.rho_test)
                    ),
                }
            }
            if rows.iter().all(|r| r.error.is_some()) {
                bail!("every sweep cell failed");
            }
        }
        Command::Extract { checkpoint, data, degree, lambda, threshold, out } => {
            let model = load_model(&checkpoint)?;
            let ds = load_dataset(&data)?;
            let report = extract(&model, &ds, degree, lambda, threshold).map_err(|e| match e {
                conservnet::Error::Argument(_) | conservnet::Error::Dimension(_) => usage(e.to_string()),
                other => other.into(),
            })?;
            if let Some(path) = out {
                write_json(&path, &report)?;
            }
            println!("{}", report.formula);
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            if e.downcast_ref::<Usage>().is_some() {
                ExitCode::from(1)
            } else {
                ExitCode::from(2)
            }
        }
    }
}
