//! Sparse polynomial read-out of a trained model: ridge regression of the
//! model output on monomials of the inputs.

use nalgebra::{DMatrix, DVector};
use ndarray::{Array1, Array2, ArrayView1, ArrayView2};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::MlpParams;
use crate::systems::GroupedDataset;

pub const DEFAULT_DEGREE: usize = 2;
pub const DEFAULT_LAMBDA: f64 = 1e-4;
pub const DEFAULT_THRESHOLD: f64 = 0.05;

/// Exponent vectors of every monomial of total degree `1..=degree`, grouped
/// by degree and in lexicographic order within a degree.
fn monomials(d: usize, degree: usize) -> Vec<Vec<usize>> {
    fn rec(d: usize, start: usize, left: usize, cur: &mut Vec<usize>, out: &mut Vec<Vec<usize>>) {
        if left == 0 {
            out.push(cur.clone());
            return;
        }
        for j in start..d {
            cur.push(j);
            rec(d, j, left - 1, cur, out);
            cur.pop();
        }
    }
    let mut out = Vec::new();
    for k in 1..=degree {
        rec(d, 0, k, &mut Vec::new(), &mut out);
    }
    out
}

fn monomial_name(factors: &[usize], names: &[String]) -> String {
    let mut parts = Vec::new();
    let mut i = 0;
    while i < factors.len() {
        let j = factors[i];
        let power = factors[i..].iter().take_while(|&&f| f == j).count();
        parts.push(if power == 1 { names[j].clone() } else { format!("{}^{power}", names[j]) });
        i += power;
    }
    parts.join("*")
}

/// Every monomial of total degree at most `degree`, without the constant,
/// evaluated on each row, together with its name built from `names`.
pub fn poly_features(states: ArrayView2<f64>, degree: usize, names: &[String]) -> Result<(Array2<f64>, Vec<String>)> {
    if degree == 0 {
        return Err(Error::Argument("polynomial degree must be at least 1".into()));
    }
    let d = states.ncols();
    if names.len() != d {
        return Err(Error::Dimension(format!("{} names for {d} variables", names.len())));
    }
    let monos = monomials(d, degree);
    let mut out = Array2::zeros((states.nrows(), monos.len()));
    for (row, mut dst) in states.rows().into_iter().zip(out.rows_mut()) {
        for (k, f) in monos.iter().enumerate() {
            dst[k] = f.iter().map(|&j| row[j]).product();
        }
    }
    Ok((out, monos.iter().map(|f| monomial_name(f, names)).collect()))
}

/// Default variable names `x1..xd`.
pub fn default_names(d: usize) -> Vec<String> {
    (1..=d).map(|j| format!("x{j}")).collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct RidgeFit {
    pub intercept: f64,
    pub coefficients: Array1<f64>,
}

/// Ridge regression with an unpenalised intercept. Features are centred and
/// scaled to unit variance before the penalty is applied; the returned
/// coefficients are in the original feature units.
pub fn ridge_fit(features: ArrayView2<f64>, targets: ArrayView1<f64>, lambda: f64) -> Result<RidgeFit> {
    let (m, k) = features.dim();
    if targets.len() != m {
        return Err(Error::Dimension(format!("{m} feature rows but {} targets", targets.len())));
    }
    if m == 0 {
        return Err(Error::Argument("no samples".into()));
    }
    if !(lambda >= 0.0) {
        return Err(Error::Argument(format!("ridge penalty must be non-negative, got {lambda}")));
    }
    let mean = features.mean_axis(ndarray::Axis(0)).unwrap();
    let scale = features.std_axis(ndarray::Axis(0), 0.0).mapv(|s| if s > 0.0 { s } else { 1.0 });
    let y_mean = targets.mean().unwrap();
    let z = DMatrix::from_fn(m, k, |i, j| (features[[i, j]] - mean[j]) / scale[j]);
    let y = DVector::from_fn(m, |i, _| targets[i] - y_mean);
    let mut gram = z.tr_mul(&z);
    for j in 0..k {
        gram[(j, j)] += lambda;
    }
    let rhs = z.tr_mul(&y);
    let beta = gram
        .cholesky()
        .ok_or_else(|| Error::RankDeficient(format!("normal equations are singular at lambda = {lambda}")))?
        .solve(&rhs);
    let coefficients = Array1::from_shape_fn(k, |j| beta[j] / scale[j]);
    let intercept = y_mean - coefficients.dot(&mean);
    Ok(RidgeFit { intercept, coefficients })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Term {
    pub name: String,
    pub coefficient: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SymbolicReport {
    pub degree: usize,
    pub lambda: f64,
    pub threshold: f64,
    pub features: Vec<String>,
    pub coefficients: Vec<f64>,
    pub intercept: f64,
    /// Terms with `|c| >= threshold * max|c|`, in feature order.
    pub terms: Vec<Term>,
    pub formula: String,
    pub r2: f64,
}

impl SymbolicReport {
    pub fn term(&self, name: &str) -> Option<f64> {
        self.terms.iter().find(|t| t.name == name).map(|t| t.coefficient)
    }
}

fn format_formula(terms: &[Term], intercept: f64) -> String {
    let mut s = String::from("F =");
    for (i, t) in terms.iter().enumerate() {
        let c = t.coefficient;
        if i == 0 {
            s.push_str(&format!(" {c:.4}*{}", t.name));
        } else {
            s.push_str(&format!(" {} {:.4}*{}", if c < 0.0 { '-' } else { '+' }, c.abs(), t.name));
        }
    }
    let sign = if intercept < 0.0 { '-' } else { '+' };
    if terms.is_empty() {
        s.push_str(&format!(" {intercept:.4}"));
    } else {
        s.push_str(&format!(" {sign} {:.4}", intercept.abs()));
    }
    s
}

/// Fit outputs already computed on `states`.
pub fn extract_from_outputs(
    states: ArrayView2<f64>,
    outputs: ArrayView1<f64>,
    names: &[String],
    degree: usize,
    lambda: f64,
    threshold: f64,
) -> Result<SymbolicReport> {
    if !(threshold >= 0.0) {
        return Err(Error::Argument(format!("threshold must be non-negative, got {threshold}")));
    }
    let (x, features) = poly_features(states, degree, names)?;
    let fit = ridge_fit(x.view(), outputs, lambda)?;
    let pred = x.dot(&fit.coefficients) + fit.intercept;
    let y_mean = outputs.mean().unwrap();
    let ss_tot: f64 = outputs.iter().map(|v| (v - y_mean).powi(2)).sum();
    let ss_res: f64 = outputs.iter().zip(&pred).map(|(a, b)| (a - b).powi(2)).sum();
    let r2 = if ss_tot > 0.0 { 1.0 - ss_res / ss_tot } else { 1.0 };
    let max = fit.coefficients.iter().fold(0.0f64, |a, c| a.max(c.abs()));
    // rounding in the centred targets of a constant model leaves ~1e-16 coefficients
    let constant = !(ss_tot.sqrt() > 1e-12 * (1.0 + y_mean.abs()) * (outputs.len() as f64).sqrt());
    let terms: Vec<Term> = features
        .iter()
        .zip(&fit.coefficients)
        .filter(|(_, c)| !constant && **c != 0.0 && c.abs() >= threshold * max)
        .map(|(n, c)| Term { name: n.clone(), coefficient: *c })
        .collect();
    Ok(SymbolicReport {
        degree,
        lambda,
        threshold,
        formula: format_formula(&terms, fit.intercept),
        features,
        coefficients: fit.coefficients.to_vec(),
        intercept: fit.intercept,
        terms,
        r2,
    })
}

/// Regress the model's outputs on the dataset's stored states. Variable
/// names are `x1..xd`.
pub fn extract(
    model: &MlpParams,
    ds: &GroupedDataset,
    degree: usize,
    lambda: f64,
    threshold: f64,
) -> Result<SymbolicReport> {
    let states = ds.all_states();
    let outputs = model.predict(states.view())?;
    extract_from_outputs(states.view(), outputs.view(), &default_names(ds.dim()), degree, lambda, threshold)
}
