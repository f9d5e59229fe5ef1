//! Training loop: one Adam step per group per epoch, with fresh spreading
//! noise for every step.

use std::io::Write;

use ndarray::{concatenate, s, Array1, Axis};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::eval::{pearson, sigma_bar};
use crate::loss::{group_loss, group_loss_grad, sample_spreading_noise, LossConfig};
use crate::nn::{AdamConfig, MlpParams};
use crate::par;
use crate::systems::{Group, GroupedDataset};

pub const DEFAULT_EPOCHS: usize = 50_000;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Monitor {
    TrainLoss,
    TestLoss,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EarlyStop {
    /// Snapshots without sufficient improvement before stopping.
    pub patience: usize,
    pub min_delta: f64,
    /// `None` monitors the test loss when test data is given, else the train loss.
    pub monitor: Option<Monitor>,
}

impl Default for EarlyStop {
    fn default() -> Self {
        Self { patience: 50, min_delta: 1e-6, monitor: None }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub epochs: usize,
    pub adam: AdamConfig,
    pub loss: LossConfig,
    pub early_stop: Option<EarlyStop>,
    pub seed: u64,
    pub eval_every: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: DEFAULT_EPOCHS,
            adam: AdamConfig::default(),
            loss: LossConfig::default(),
            early_stop: Some(EarlyStop::default()),
            seed: 0,
            eval_every: 100,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 {
            return Err(Error::Argument("epochs must be at least 1".into()));
        }
        if self.eval_every == 0 {
            return Err(Error::Argument("eval_every must be at least 1".into()));
        }
        if !(self.adam.lr > 0.0) {
            return Err(Error::Argument(format!("learning rate must be positive, got {}", self.adam.lr)));
        }
        self.loss.validate()
    }
}

/// Metrics at the parameters reached after `epoch` epochs (epoch 0 is the
/// untrained model).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Snapshot {
    pub epoch: usize,
    pub train_loss: f64,
    pub test_loss: Option<f64>,
    pub rho_train: Option<f64>,
    pub rho_test: Option<f64>,
    pub sigma_train: f64,
    pub sigma_test: Option<f64>,
}

impl Snapshot {
    pub const CSV_HEADER: &'static str = "epoch,train_loss,test_loss,rho_train,rho_test,sigma_train,sigma_test";

    pub fn csv_row(&self) -> String {
        fn opt(v: Option<f64>) -> String {
            v.map(|x| format!("{x:?}")).unwrap_or_default()
        }
        format!(
            "{},{:?},{},{},{},{:?},{}",
            self.epoch,
            self.train_loss,
            opt(self.test_loss),
            opt(self.rho_train),
            opt(self.rho_test),
            self.sigma_train,
            opt(self.sigma_test)
        )
    }

    fn monitored(&self, monitor: Monitor) -> f64 {
        match monitor {
            Monitor::TrainLoss => self.train_loss,
            Monitor::TestLoss => self.test_loss.unwrap_or(self.train_loss),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StopReason {
    EpochLimit,
    EarlyStop,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    pub snapshots: Vec<Snapshot>,
    pub stop_reason: StopReason,
    pub epochs_run: usize,
    pub monitor: Option<Monitor>,
    pub early_stop: Option<EarlyStop>,
}

impl TrainReport {
    pub fn last(&self) -> &Snapshot {
        self.snapshots.last().expect("a report always holds the epoch-0 snapshot")
    }
}

/// True when the last `patience` entries of `history` never improved on the
/// best value before them by at least `min_delta`.
pub fn early_stop_check(history: &[f64], patience: usize, min_delta: f64) -> bool {
    let Some((&first, rest)) = history.split_first() else {
        return false;
    };
    let mut best = first;
    let mut stale = 0;
    for &v in rest {
        if best - v >= min_delta {
            best = v;
            stale = 0;
        } else {
            stale += 1;
        }
    }
    stale >= patience
}

/// Total loss over all groups at fixed parameters, with noise drawn from `seed`.
pub fn dataset_loss(model: &MlpParams, ds: &GroupedDataset, loss: &LossConfig, seed: u64) -> Result<f64> {
    let per_group = par::map_slice(&ds.groups, |g| {
        let mut rng = ChaCha8Rng::seed_from_u64(par::derive_seed(seed, g.id as u64));
        let (clean, noised) = clean_and_noised(model, g, loss, &mut rng)?;
        group_loss(clean.view(), noised.view(), loss)
    });
    per_group.into_iter().sum()
}

fn noised_batch(g: &Group, loss: &LossConfig, rng: &mut ChaCha8Rng) -> ndarray::Array2<f64> {
    let (m, d) = g.states.dim();
    let eps = sample_spreading_noise(m, d, loss.r, loss.spreader, loss.scaling, rng);
    concatenate(Axis(0), &[g.states.view(), (&g.states + &eps).view()]).unwrap()
}

fn clean_and_noised(
    model: &MlpParams,
    g: &Group,
    loss: &LossConfig,
    rng: &mut ChaCha8Rng,
) -> Result<(Array1<f64>, Array1<f64>)> {
    let m = g.states.nrows();
    let out = model.predict(noised_batch(g, loss, rng).view())?;
    Ok((out.slice(s![..m]).to_owned(), out.slice(s![m..]).to_owned()))
}

fn split_rho(model: &MlpParams, ds: &GroupedDataset) -> Result<(Option<f64>, f64)> {
    let outputs = crate::eval::group_outputs(model, ds)?;
    let sigma = sigma_bar(outputs.iter().map(|o| o.view()));
    let rho = ds.point_invariants().and_then(|truth| {
        let flat: Array1<f64> = outputs.iter().flat_map(|o| o.iter().copied()).collect();
        pearson(flat.view(), truth.view()).ok()
    });
    Ok((rho, sigma))
}

fn snapshot(
    model: &MlpParams,
    train: &GroupedDataset,
    test: Option<&GroupedDataset>,
    cfg: &TrainConfig,
    epoch: usize,
) -> Result<Snapshot> {
    let seed = par::derive_seed(cfg.seed ^ 0xE7A1_0000_0000_0000, epoch as u64);
    let train_loss = dataset_loss(model, train, &cfg.loss, seed)?;
    let (rho_train, sigma_train) = split_rho(model, train)?;
    let (test_loss, rho_test, sigma_test) = match test {
        Some(t) => {
            let l = dataset_loss(model, t, &cfg.loss, par::derive_seed(seed, u64::MAX))?;
            let (r, s) = split_rho(model, t)?;
            (Some(l), r, Some(s))
        }
        None => (None, None, None),
    };
    if !train_loss.is_finite() || test_loss.is_some_and(|l| !l.is_finite()) {
        return Err(Error::Divergence { epoch, reason: "non-finite loss".into() });
    }
    Ok(Snapshot { epoch, train_loss, test_loss, rho_train, rho_test, sigma_train, sigma_test })
}

/// One Adam step on a single group. Returns the group loss before the step.
fn group_step(model: &mut MlpParams, g: &Group, cfg: &TrainConfig, rng: &mut ChaCha8Rng, epoch: usize) -> Result<f64> {
    let m = g.states.nrows();
    let batch = noised_batch(g, &cfg.loss, rng);
    let (out, tape) = model.forward(batch.view())?;
    let (clean, noised) = (out.slice(s![..m]), out.slice(s![m..]));
    let loss = group_loss(clean, noised, &cfg.loss)?;
    if !loss.is_finite() {
        return Err(Error::Divergence { epoch, reason: format!("non-finite loss on group {}", g.id) });
    }
    let (gc, gn) = group_loss_grad(clean, noised, &cfg.loss)?;
    let output_grad = concatenate(Axis(0), &[gc.view(), gn.view()]).unwrap();
    let grads = model.backward(&tape, output_grad.view())?;
    model.adam_step(&grads, &cfg.adam).map_err(|e| match e {
        Error::NonFiniteGradient => Error::Divergence { epoch, reason: "non-finite gradient".into() },
        other => other,
    })?;
    Ok(loss)
}

fn check_data(model: &MlpParams, ds: &GroupedDataset, what: &str) -> Result<()> {
    if ds.dim() != model.input_dim() {
        return Err(Error::Argument(format!(
            "{what} data has dimension {}, model expects {}",
            ds.dim(),
            model.input_dim()
        )));
    }
    if ds.groups.is_empty() {
        return Err(Error::Argument(format!("{what} data has no groups")));
    }
    Ok(())
}

pub fn train(
    train_data: &GroupedDataset,
    test_data: Option<&GroupedDataset>,
    model: MlpParams,
    cfg: &TrainConfig,
) -> Result<(MlpParams, TrainReport)> {
    train_with_observer(train_data, test_data, model, cfg, |_| Ok(()))
}

/// Like [`train`], calling `observe` on every snapshot as soon as it is taken.
pub fn train_with_observer<F>(
    train_data: &GroupedDataset,
    test_data: Option<&GroupedDataset>,
    mut model: MlpParams,
    cfg: &TrainConfig,
    mut observe: F,
) -> Result<(MlpParams, TrainReport)>
where
    F: FnMut(&Snapshot) -> Result<()>,
{
    cfg.validate()?;
    check_data(&model, train_data, "training")?;
    if let Some(t) = test_data {
        check_data(&model, t, "test")?;
    }
    let monitor = cfg
        .early_stop
        .map(|es| es.monitor.unwrap_or(if test_data.is_some() { Monitor::TestLoss } else { Monitor::TrainLoss }));

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut order: Vec<usize> = (0..train_data.groups.len()).collect();
    let mut snapshots = Vec::new();
    let mut history = Vec::new();
    let mut record = |snap: Snapshot, history: &mut Vec<f64>, snapshots: &mut Vec<Snapshot>| -> Result<()> {
        observe(&snap)?;
        if let Some(mon) = monitor {
            history.push(snap.monitored(mon));
        }
        snapshots.push(snap);
        Ok(())
    };
    record(snapshot(&model, train_data, test_data, cfg, 0)?, &mut history, &mut snapshots)?;

    let mut stop_reason = StopReason::EpochLimit;
    let mut epochs_run = 0;
    for epoch in 1..=cfg.epochs {
        order.shuffle(&mut rng);
        for &gi in &order {
            group_step(&mut model, &train_data.groups[gi], cfg, &mut rng, epoch)?;
        }
        epochs_run = epoch;
        if epoch % cfg.eval_every == 0 || epoch == cfg.epochs {
            record(snapshot(&model, train_data, test_data, cfg, epoch)?, &mut history, &mut snapshots)?;
            if let Some(es) = cfg.early_stop {
                if early_stop_check(&history, es.patience, es.min_delta) {
                    stop_reason = StopReason::EarlyStop;
                    break;
                }
            }
        }
    }
    let report = TrainReport { snapshots, stop_reason, epochs_run, monitor, early_stop: cfg.early_stop };
    Ok((model, report))
}

/// Streams snapshots to a CSV writer, one row per snapshot.
pub struct MetricsLog<W: Write> {
    out: W,
}

impl<W: Write> MetricsLog<W> {
    pub fn new(mut out: W) -> Result<Self> {
        writeln!(out, "{}", Snapshot::CSV_HEADER)?;
        Ok(Self { out })
    }

    pub fn append(&mut self, snap: &Snapshot) -> Result<()> {
        writeln!(self.out, "{}", snap.csv_row())?;
        self.out.flush()?;
        Ok(())
    }
}
