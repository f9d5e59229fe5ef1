//! Reproducible experiment recipes: a flat `key = value` config, the
//! datasets and network it describes, and the artifacts a run writes.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::eval::{evaluate, EvalReport};
use crate::loss::LossConfig;
use crate::nn::{layer_dims, save_checkpoint, AdamConfig, MlpParams, DEFAULT_HIDDEN_LAYERS, DEFAULT_WIDTH};
use crate::par::derive_seed;
use crate::systems::{add_observation_noise, GroupedDataset, System};
use crate::trainer::{train_with_observer, EarlyStop, MetricsLog, Monitor, TrainConfig, TrainReport};

const TEST_STREAM: u64 = 0x7E57;
const NOISE_STREAM: u64 = 0x0B5E;

/// Where the training data comes from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DataSource {
    /// Generated from a named system; the test split uses a derived seed.
    System(System),
    /// Dataset files written by `GroupedDataset::save`.
    Files { train: PathBuf, test: Option<PathBuf> },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub data: DataSource,
    pub n: usize,
    pub m: usize,
    /// Seed for generated data.
    pub data_seed: u64,
    /// Whether to generate an equally sized test split.
    pub with_test: bool,
    /// Standard deviation of Gaussian noise added to every stored entry.
    pub observation_noise: f64,
    pub width: usize,
    pub hidden_layers: usize,
    pub model_seed: u64,
    pub train: TrainConfig,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            data: DataSource::System(System::S2),
            n: 20,
            m: 100,
            data_seed: 0,
            with_test: true,
            observation_noise: 0.0,
            width: DEFAULT_WIDTH,
            hidden_layers: DEFAULT_HIDDEN_LAYERS,
            model_seed: 0,
            train: TrainConfig::default(),
        }
    }
}

fn enum_name<T: Serialize>(v: &T) -> String {
    serde_json::to_value(v).ok().and_then(|j| j.as_str().map(str::to_owned)).unwrap_or_default()
}

fn parse_enum<T: DeserializeOwned>(key: &str, v: &str) -> Result<T> {
    serde_json::from_value(serde_json::Value::String(v.trim().to_ascii_lowercase()))
        .map_err(|_| Error::Argument(format!("invalid value `{v}` for `{key}`")))
}

fn parse_num<T: std::str::FromStr>(key: &str, v: &str) -> Result<T> {
    v.trim().parse().map_err(|_| Error::Argument(format!("invalid value `{v}` for `{key}`")))
}

fn parse_bool(key: &str, v: &str) -> Result<bool> {
    match v.trim().to_ascii_lowercase().as_str() {
        "true" | "yes" | "1" => Ok(true),
        "false" | "no" | "0" => Ok(false),
        _ => Err(Error::Argument(format!("invalid value `{v}` for `{key}`"))),
    }
}

impl ExperimentConfig {
    /// Every key in canonical order with its current value.
    pub fn entries(&self) -> Vec<(&'static str, String)> {
        let t = &self.train;
        let l = &t.loss;
        let mut out = Vec::new();
        match &self.data {
            DataSource::System(s) => out.push(("system", s.name().to_string())),
            DataSource::Files { train, test } => {
                out.push(("train_data", train.display().to_string()));
                if let Some(p) = test {
                    out.push(("test_data", p.display().to_string()));
                }
            }
        }
        let es = t.early_stop;
        out.extend([
            ("n", self.n.to_string()),
            ("m", self.m.to_string()),
            ("data_seed", self.data_seed.to_string()),
            ("with_test", self.with_test.to_string()),
            ("observation_noise", format!("{:?}", self.observation_noise)),
            ("width", self.width.to_string()),
            ("hidden_layers", self.hidden_layers.to_string()),
            ("model_seed", self.model_seed.to_string()),
            ("train_seed", t.seed.to_string()),
            ("epochs", t.epochs.to_string()),
            ("eval_every", t.eval_every.to_string()),
            ("lr", format!("{:?}", t.adam.lr)),
            ("beta1", format!("{:?}", t.adam.beta1)),
            ("beta2", format!("{:?}", t.adam.beta2)),
            ("adam_eps", format!("{:?}", t.adam.eps)),
            ("loss", enum_name(&l.variant)),
            ("deviation", enum_name(&l.deviation)),
            ("q", format!("{:?}", l.q)),
            ("r", format!("{:?}", l.r)),
            ("spreader", enum_name(&l.spreader)),
            ("noise_scaling", enum_name(&l.scaling)),
            ("early_stop", es.is_some().to_string()),
            ("patience", es.map_or(EarlyStop::default().patience, |e| e.patience).to_string()),
            ("min_delta", format!("{:?}", es.map_or(EarlyStop::default().min_delta, |e| e.min_delta))),
            ("monitor", es.and_then(|e| e.monitor).map_or_else(|| "auto".to_string(), |m| enum_name(&m))),
        ]);
        out
    }

    /// Apply one `key = value` setting.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let key = key.trim();
        let t = &mut self.train;
        match key {
            "system" => self.data = DataSource::System(value.parse()?),
            "train_data" => {
                let test = match &self.data {
                    DataSource::Files { test, .. } => test.clone(),
                    DataSource::System(_) => None,
                };
                self.data = DataSource::Files { train: PathBuf::from(value.trim()), test };
            }
            "test_data" => match &mut self.data {
                DataSource::Files { test, .. } => *test = Some(PathBuf::from(value.trim())),
                DataSource::System(_) => {
                    return Err(Error::Argument("`test_data` needs `train_data` set first".into()))
                }
            },
            "n" => self.n = parse_num(key, value)?,
            "m" => self.m = parse_num(key, value)?,
            "data_condition" => {
                let (n, m) = value
                    .split_once(['x', ','])
                    .ok_or_else(|| Error::Argument(format!("data condition `{value}` is not NxM")))?;
                self.n = parse_num(key, n)?;
                self.m = parse_num(key, m)?;
            }
            "data_seed" => self.data_seed = parse_num(key, value)?,
            "with_test" => self.with_test = parse_bool(key, value)?,
            "observation_noise" | "noise_strength" => self.observation_noise = parse_num(key, value)?,
            "width" => self.width = parse_num(key, value)?,
            "hidden_layers" => self.hidden_layers = parse_num(key, value)?,
            "model_seed" => self.model_seed = parse_num(key, value)?,
            "train_seed" => t.seed = parse_num(key, value)?,
            "seed" => {
                let s: u64 = parse_num(key, value)?;
                self.data_seed = s;
                self.model_seed = s;
                t.seed = s;
            }
            "epochs" => t.epochs = parse_num(key, value)?,
            "eval_every" => t.eval_every = parse_num(key, value)?,
            "lr" => t.adam.lr = parse_num(key, value)?,
            "beta1" => t.adam.beta1 = parse_num(key, value)?,
            "beta2" => t.adam.beta2 = parse_num(key, value)?,
            "adam_eps" => t.adam.eps = parse_num(key, value)?,
            "loss" => t.loss.variant = parse_enum(key, value)?,
            "deviation" => t.loss.deviation = parse_enum(key, value)?,
            "q" => t.loss.q = parse_num(key, value)?,
            "r" => t.loss.r = parse_num(key, value)?,
            "spreader" | "spreader_norm" => t.loss.spreader = parse_enum(key, value)?,
            "noise_scaling" => t.loss.scaling = parse_enum(key, value)?,
            "early_stop" => {
                t.early_stop = if parse_bool(key, value)? { Some(t.early_stop.unwrap_or_default()) } else { None }
            }
            "patience" | "min_delta" | "monitor" => {
                let mut es = t.early_stop.unwrap_or_default();
                match key {
                    "patience" => es.patience = parse_num(key, value)?,
                    "min_delta" => es.min_delta = parse_num(key, value)?,
                    _ => {
                        es.monitor =
                            if value.trim() == "auto" { None } else { Some(parse_enum::<Monitor>(key, value)?) }
                    }
                }
                if t.early_stop.is_some() {
                    t.early_stop = Some(es);
                }
            }
            _ => return Err(Error::Argument(format!("unknown config key `{key}`"))),
        }
        Ok(())
    }

    pub fn to_text(&self) -> String {
        let mut s = String::new();
        for (k, v) in self.entries() {
            let _ = writeln!(s, "{k} = {v}");
        }
        s
    }

    /// Parse `key = value` lines over the defaults. `#` starts a comment.
    pub fn from_text(text: &str) -> Result<Self> {
        let mut cfg = Self::default();
        cfg.apply_text(text)?;
        Ok(cfg)
    }

    pub fn apply_text(&mut self, text: &str) -> Result<()> {
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::Parse { line: i + 1, msg: format!("expected `key = value`, got `{line}`") })?;
            self.set(k, v).map_err(|e| Error::Parse { line: i + 1, msg: e.to_string() })?;
        }
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_text(&fs::read_to_string(path)?)
    }

    /// First 16 hex digits of the SHA-256 of the canonical text.
    pub fn hash(&self) -> String {
        let digest = Sha256::digest(self.to_text().as_bytes());
        digest.iter().take(8).map(|b| format!("{b:02x}")).collect()
    }

    pub fn validate(&self) -> Result<()> {
        if self.n == 0 || self.m == 0 {
            return Err(Error::Argument(format!("need N, M >= 1, got ({}, {})", self.n, self.m)));
        }
        if self.width == 0 || self.hidden_layers == 0 {
            return Err(Error::Argument("width and hidden_layers must be positive".into()));
        }
        if !(self.observation_noise >= 0.0) {
            return Err(Error::Argument("observation_noise must be non-negative".into()));
        }
        self.train.validate()
    }

    pub fn loss(&self) -> &LossConfig {
        &self.train.loss
    }

    /// Train and (optional) test datasets, with observation noise applied.
    pub fn datasets(&self) -> Result<(GroupedDataset, Option<GroupedDataset>)> {
        let (train, test) = match &self.data {
            DataSource::System(sys) => {
                let train = sys.generate(self.n, self.m, self.data_seed)?;
                let test = if self.with_test {
                    Some(sys.generate(self.n, self.m, derive_seed(self.data_seed, TEST_STREAM))?)
                } else {
                    None
                };
                (train, test)
            }
            DataSource::Files { train, test } => {
                (GroupedDataset::load(train)?, test.as_ref().map(GroupedDataset::load).transpose()?)
            }
        };
        let s = self.observation_noise;
        let noise_seed = derive_seed(self.data_seed, NOISE_STREAM);
        let train = add_observation_noise(&train, s, noise_seed)?;
        let test = test.map(|t| add_observation_noise(&t, s, derive_seed(noise_seed, TEST_STREAM))).transpose()?;
        Ok((train, test))
    }

    pub fn init_model(&self, input_dim: usize) -> Result<MlpParams> {
        MlpParams::init(&layer_dims(input_dim, self.width, self.hidden_layers), self.model_seed)
    }

    /// Generate data, train, evaluate. Nothing is written to disk.
    pub fn run(&self) -> Result<RunOutcome> {
        self.run_inner(|_| Ok(()))
    }

    /// Like [`Self::run`], writing artifacts into `dir`:
    /// `config.txt`, `metrics.csv`, `summary.json`, `model.ckpt` and
    /// `run.log` (the only file holding wall-clock time).
    pub fn run_to_dir(&self, dir: impl AsRef<Path>) -> Result<RunOutcome> {
        let dir = dir.as_ref();
        fs::create_dir_all(dir)?;
        fs::write(dir.join("config.txt"), self.to_text())?;
        let mut log = MetricsLog::new(std::io::BufWriter::new(fs::File::create(dir.join("metrics.csv"))?))?;
        let start = Instant::now();
        let outcome = self.run_inner(|snap| log.append(snap))?;
        let ckpt = dir.join("model.ckpt");
        save_checkpoint(&outcome.model, &ckpt)?;
        let summary = outcome.summary(self, Some("model.ckpt"));
        fs::write(dir.join("summary.json"), serde_json::to_string_pretty(&summary)? + "\n")?;
        fs::write(
            dir.join("run.log"),
            format!("config {}\nwall_seconds {:.3}\n", self.hash(), start.elapsed().as_secs_f64()),
        )?;
        Ok(outcome)
    }

    fn run_inner<F>(&self, observe: F) -> Result<RunOutcome>
    where
        F: FnMut(&crate::trainer::Snapshot) -> Result<()>,
    {
        self.validate()?;
        let (train, test) = self.datasets()?;
        let model = self.init_model(train.dim())?;
        let (model, report) = train_with_observer(&train, test.as_ref(), model, &self.train, observe)?;
        let train_eval = evaluate(&model, &train)?;
        let test_eval = test.as_ref().map(|t| evaluate(&model, t)).transpose()?;
        Ok(RunOutcome { model, report, train_eval, test_eval })
    }
}

#[derive(Debug, Clone)]
pub struct RunOutcome {
    pub model: MlpParams,
    pub report: TrainReport,
    pub train_eval: EvalReport,
    pub test_eval: Option<EvalReport>,
}

/// Summary written next to a run's checkpoint.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub config_hash: String,
    pub config: Vec<(String, String)>,
    pub stop_reason: crate::trainer::StopReason,
    pub epochs_run: usize,
    pub final_snapshot: crate::trainer::Snapshot,
    pub train: EvalReport,
    pub test: Option<EvalReport>,
    pub checkpoint: Option<String>,
}

impl RunOutcome {
    pub fn summary(&self, cfg: &ExperimentConfig, checkpoint: Option<&str>) -> RunSummary {
        RunSummary {
            config_hash: cfg.hash(),
            config: cfg.entries().into_iter().map(|(k, v)| (k.to_string(), v)).collect(),
            stop_reason: self.report.stop_reason,
            epochs_run: self.report.epochs_run,
            final_snapshot: self.report.last().clone(),
            train: self.train_eval.clone(),
            test: self.test_eval.clone(),
            checkpoint: checkpoint.map(str::to_owned),
        }
    }
}

/// Adam settings shorthand for callers building configs in code.
pub fn adam(lr: f64) -> AdamConfig {
    AdamConfig { lr, ..Default::default() }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn text_round_trip_and_hash() {
        let mut cfg = ExperimentConfig::default();
        cfg.set("system", "kepler").unwrap();
        cfg.set("q", "2.5").unwrap();
        cfg.set("spreader", "linf").unwrap();
        cfg.set("monitor", "train_loss").unwrap();
        let back = ExperimentConfig::from_text(&cfg.to_text()).unwrap();
        assert_eq!(back, cfg);
        assert_eq!(back.hash(), cfg.hash());
        assert_eq!(cfg.hash().len(), 16);
        let mut other = cfg.clone();
        other.set("q", "2.0").unwrap();
        assert_ne!(other.hash(), cfg.hash());
    }

    #[test]
    fn defaults() {
        let cfg = ExperimentConfig::default();
        assert_eq!((cfg.n, cfg.m, cfg.width, cfg.hidden_layers), (20, 100, 320, 4));
        assert_eq!(cfg.train.epochs, 50_000);
        assert_eq!(cfg.train.adam.lr, 5e-5);
    }

    #[test]
    fn parsing_errors_carry_lines() {
        match ExperimentConfig::from_text("# c\nn = 4\nbogus = 1\n") {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 3),
            other => panic!("{other:?}"),
        }
        assert!(ExperimentConfig::from_text("n 4").is_err());
        assert!(ExperimentConfig::from_text("loss = fancy").is_err());
        let cfg = ExperimentConfig::from_text("data_condition = 40x50\nloss = simple # comment").unwrap();
        assert_eq!((cfg.n, cfg.m), (40, 50));
        assert_eq!(cfg.train.loss.variant, crate::loss::LossVariant::Simple);
    }

    #[test]
    fn file_source_round_trip() {
        let cfg = ExperimentConfig::from_text("train_data = a.csv\ntest_data = b.csv\n").unwrap();
        assert_eq!(cfg.data, DataSource::Files { train: "a.csv".into(), test: Some("b.csv".into()) });
        assert_eq!(ExperimentConfig::from_text(&cfg.to_text()).unwrap(), cfg);
        assert!(ExperimentConfig::from_text("test_data = b.csv").is_err());
    }

    #[test]
    fn small_run_writes_artifacts() {
        let dir = tempfile::tempdir().unwrap();
        let cfg =
            ExperimentConfig::from_text("n = 3\nm = 10\nwidth = 8\nepochs = 3\neval_every = 1\nlr = 1e-3").unwrap();
        let out = cfg.run_to_dir(dir.path()).unwrap();
        assert_eq!(out.report.snapshots.len(), 4);
        for f in ["config.txt", "metrics.csv", "summary.json", "model.ckpt", "run.log"] {
            assert!(dir.path().join(f).exists(), "{f}");
        }
        let metrics = fs::read_to_string(dir.path().join("metrics.csv")).unwrap();
        assert_eq!(metrics.lines().count(), 5);
        let again = tempfile::tempdir().unwrap();
        cfg.run_to_dir(again.path()).unwrap();
        for f in ["config.txt", "metrics.csv", "summary.json", "model.ckpt"] {
            assert_eq!(fs::read(dir.path().join(f)).unwrap(), fs::read(again.path().join(f)).unwrap(), "{f}");
        }
    }
}
