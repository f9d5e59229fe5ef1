//! Evaluation metrics: Pearson correlation with the ground truth, mean
//! intra-group standard deviation, affine calibration and heatmap slices.

use ndarray::{Array1, Array2, ArrayView1};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::loss::{deviation, Deviation};
use crate::nn::MlpParams;
use crate::par;
use crate::systems::GroupedDataset;

/// Outputs whose overall standard deviation falls below this are treated as constant.
pub const CONSTANT_OUTPUT_STD: f64 = 1e-12;

fn mean(v: ArrayView1<f64>) -> f64 {
    v.sum() / v.len() as f64
}

/// Sample Pearson correlation. Errors when either input has no variation.
pub fn pearson(u: ArrayView1<f64>, v: ArrayView1<f64>) -> Result<f64> {
    if u.len() != v.len() {
        return Err(Error::Dimension(format!("lengths differ: {} vs {}", u.len(), v.len())));
    }
    if u.len() < 2 {
        return Err(Error::UndefinedCorrelation("need at least two points".into()));
    }
    let (mu, mv) = (mean(u), mean(v));
    let (mut suv, mut suu, mut svv) = (0.0, 0.0, 0.0);
    for (a, b) in u.iter().zip(v) {
        let (da, db) = (a - mu, b - mv);
        suv += da * db;
        suu += da * da;
        svv += db * db;
    }
    if suu == 0.0 || svv == 0.0 {
        return Err(Error::UndefinedCorrelation("an input is constant".into()));
    }
    Ok((suv / (suu.sqrt() * svv.sqrt())).clamp(-1.0, 1.0))
}

/// Mean over groups of the population standard deviation within each group.
pub fn sigma_bar<'a>(groups: impl IntoIterator<Item = ArrayView1<'a, f64>>) -> f64 {
    let (sum, n) = groups.into_iter().fold((0.0, 0usize), |(s, n), g| (s + deviation(g, Deviation::Std), n + 1));
    if n == 0 {
        0.0
    } else {
        sum / n as f64
    }
}

/// Least-squares affine maps between model outputs `F` and ground truth `C`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Calibration {
    /// `C ≈ a·F + b`
    pub a: f64,
    pub b: f64,
    /// Coefficient of determination of that fit.
    pub r2: f64,
    /// Slope of the reverse fit `F ≈ output_slope·C + output_intercept`;
    /// near zero when the output barely responds to the invariant.
    pub output_slope: f64,
    pub output_intercept: f64,
}

fn ols(x: ArrayView1<f64>, y: ArrayView1<f64>) -> Option<(f64, f64, f64)> {
    let (mx, my) = (mean(x), mean(y));
    let sxx: f64 = x.iter().map(|v| (v - mx) * (v - mx)).sum();
    if sxx == 0.0 {
        return None;
    }
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let ss_tot: f64 = y.iter().map(|v| (v - my) * (v - my)).sum();
    let ss_res: f64 = x
        .iter()
        .zip(y)
        .map(|(a, b)| {
            let r = b - (slope * a + intercept);
            r * r
        })
        .sum();
    let r2 = if ss_tot == 0.0 { 1.0 } else { 1.0 - ss_res / ss_tot };
    Some((slope, intercept, r2))
}

/// Fit the truth as an affine function of the model output.
pub fn calibrate(model_out: ArrayView1<f64>, truth: ArrayView1<f64>) -> Result<Calibration> {
    if model_out.len() != truth.len() {
        return Err(Error::Dimension(format!("lengths differ: {} vs {}", model_out.len(), truth.len())));
    }
    if model_out.len() < 2 {
        return Err(Error::DegenerateFit("need at least two points".into()));
    }
    let (a, b, r2) = ols(model_out, truth).ok_or_else(|| Error::DegenerateFit("model output is constant".into()))?;
    let (output_slope, output_intercept) = match ols(truth, model_out) {
        Some((s, i, _)) => (s, i),
        None => (0.0, mean(model_out)),
    };
    Ok(Calibration { a, b, r2, output_slope, output_intercept })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GroupStat {
    pub id: usize,
    pub mean: f64,
    pub std: f64,
    pub invariant: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    /// Correlation with the ground truth over every point, when defined.
    pub rho: Option<f64>,
    pub sigma_bar: f64,
    pub calibration: Option<Calibration>,
    /// Standard deviation of all outputs pooled together.
    pub output_std: f64,
    /// The model is (numerically) constant over the dataset.
    pub degenerate: bool,
    pub per_group: Vec<GroupStat>,
}

/// Model outputs for each group, in group order.
pub fn group_outputs(model: &MlpParams, ds: &GroupedDataset) -> Result<Vec<Array1<f64>>> {
    par::map_slice(&ds.groups, |g| model.predict(g.states.view())).into_iter().collect()
}

pub fn evaluate(model: &MlpParams, ds: &GroupedDataset) -> Result<EvalReport> {
    let outputs = group_outputs(model, ds)?;
    Ok(evaluate_outputs(ds, &outputs))
}

/// Metrics for precomputed per-group outputs.
pub fn evaluate_outputs(ds: &GroupedDataset, outputs: &[Array1<f64>]) -> EvalReport {
    let flat: Array1<f64> = outputs.iter().flat_map(|o| o.iter().copied()).collect();
    let output_std = deviation(flat.view(), Deviation::Std);
    let degenerate = !(output_std > CONSTANT_OUTPUT_STD);
    let (rho, calibration) = match ds.point_invariants() {
        Some(truth) if !degenerate => {
            (pearson(flat.view(), truth.view()).ok(), calibrate(flat.view(), truth.view()).ok())
        }
        _ => (None, None),
    };
    let per_group = ds
        .groups
        .iter()
        .zip(outputs)
        .map(|(g, o)| GroupStat {
            id: g.id,
            mean: mean(o.view()),
            std: deviation(o.view(), Deviation::Std),
            invariant: g.invariant,
        })
        .collect();
    EvalReport {
        rho,
        sigma_bar: sigma_bar(outputs.iter().map(|o| o.view())),
        calibration,
        output_std,
        degenerate,
        per_group,
    }
}

/// A free axis of a cross-section: variable index, range and resolution.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Axis {
    pub var: usize,
    pub lo: f64,
    pub hi: f64,
    pub n: usize,
}

impl Axis {
    pub fn values(&self) -> Vec<f64> {
        if self.n == 1 {
            return vec![self.lo];
        }
        let step = (self.hi - self.lo) / (self.n - 1) as f64;
        (0..self.n).map(|i| self.lo + step * i as f64).collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Heatmap {
    pub rows: Axis,
    pub cols: Axis,
    pub fixed: Vec<(usize, f64)>,
    /// `values[[i, j]]` is the output at `rows.values()[i]`, `cols.values()[j]`.
    #[serde(skip)]
    pub values: Array2<f64>,
}

impl Heatmap {
    /// Matrix as CSV, one grid row per line.
    pub fn to_csv(&self) -> String {
        let mut s = String::new();
        for row in self.values.rows() {
            let line: Vec<String> = row.iter().map(|v| format!("{v:?}")).collect();
            s.push_str(&line.join(","));
            s.push('\n');
        }
        s
    }
}

/// Evaluate the model on a 2-D grid over `rows × cols` with every other
/// input held at its `fixed` value.
pub fn cross_section(model: &MlpParams, fixed: &[(usize, f64)], rows: Axis, cols: Axis) -> Result<Heatmap> {
    let d = model.input_dim();
    let mut template = vec![None; d];
    for &(var, value) in fixed {
        if var >= d {
            return Err(Error::Argument(format!("fixed variable index {var} out of range")));
        }
        template[var] = Some(value);
    }
    for ax in [&rows, &cols] {
        if ax.var >= d || template[ax.var].is_some() {
            return Err(Error::Argument(format!("free variable {} is out of range or also fixed", ax.var)));
        }
        if ax.n == 0 {
            return Err(Error::Argument("grid resolution must be positive".into()));
        }
    }
    if rows.var == cols.var {
        return Err(Error::Argument("free variables must differ".into()));
    }
    if template.iter().enumerate().any(|(j, t)| t.is_none() && j != rows.var && j != cols.var) {
        return Err(Error::Argument("fixed and free variables must cover every input".into()));
    }
    let (rv, cv) = (rows.values(), cols.values());
    let mut grid = Array2::zeros((rv.len() * cv.len(), d));
    for (i, &r) in rv.iter().enumerate() {
        for (j, &c) in cv.iter().enumerate() {
            let mut point = grid.row_mut(i * cv.len() + j);
            for (k, t) in template.iter().enumerate() {
                if let Some(v) = t {
                    point[k] = *v;
                }
            }
            point[rows.var] = r;
            point[cols.var] = c;
        }
    }
    // one forward per grid row keeps each point's arithmetic identical to a single-row pass
    let out =
        par::map_range(rv.len(), |i| model.predict(grid.slice(ndarray::s![i * cv.len()..(i + 1) * cv.len(), ..])));
    let mut values = Array2::zeros((rv.len(), cv.len()));
    for (i, row) in out.into_iter().enumerate() {
        values.row_mut(i).assign(&row?);
    }
    Ok(Heatmap { rows, cols, fixed: fixed.to_vec(), values })
}
