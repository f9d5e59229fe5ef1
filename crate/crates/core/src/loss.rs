//! Noise-variance loss and the variance-only baseline.
//!
//! For one group with clean outputs `f` and outputs `g` on spread inputs
//! `x + ε`, the noise-variance loss is `dev(f) + |Q - dev(g)|`, where `dev`
//! is the population variance or standard deviation. The simple loss keeps
//! only `dev(f)`, which any constant function minimizes.

use ndarray::{Array1, Array2, ArrayView1};
use rand::Rng;
use rand_distr::{Distribution, Exp1, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Floor on the standard deviation in the std-measure gradient.
pub const STD_GRAD_FLOOR: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LossVariant {
    NoiseVariance,
    Simple,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Deviation {
    Std,
    Variance,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SpreaderNorm {
    L1,
    L2,
    Linf,
}

impl SpreaderNorm {
    pub fn norm(self, v: ArrayView1<f64>) -> f64 {
        match self {
            SpreaderNorm::L1 => v.iter().map(|x| x.abs()).sum(),
            SpreaderNorm::L2 => v.iter().map(|x| x * x).sum::<f64>().sqrt(),
            SpreaderNorm::Linf => v.iter().fold(0.0, |m, x| m.max(x.abs())),
        }
    }
}

/// How spreading noise is bounded by `R`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NoiseScaling {
    /// Cube samples rescaled so the largest row norm in the batch is exactly `R`.
    BatchMax,
    /// Each row drawn independently and uniformly from the radius-`R` ball.
    PerRow,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossConfig {
    pub variant: LossVariant,
    pub deviation: Deviation,
    /// Spreading constant: target deviation of outputs on spread inputs.
    pub q: f64,
    /// Noise radius.
    pub r: f64,
    pub spreader: SpreaderNorm,
    pub scaling: NoiseScaling,
}

impl Default for LossConfig {
    fn default() -> Self {
        Self {
            variant: LossVariant::NoiseVariance,
            deviation: Deviation::Std,
            q: 1.0,
            r: 1.0,
            spreader: SpreaderNorm::L2,
            scaling: NoiseScaling::BatchMax,
        }
    }
}

impl LossConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.q > 0.0 && self.q.is_finite()) {
            return Err(Error::Argument(format!("Q must be positive, got {}", self.q)));
        }
        if !(self.r > 0.0 && self.r.is_finite()) {
            return Err(Error::Argument(format!("R must be positive, got {}", self.r)));
        }
        Ok(())
    }
}

/// Spreading noise for a batch of `m` states of dimension `d`.
pub fn sample_spreading_noise<R: Rng + ?Sized>(
    m: usize,
    d: usize,
    radius: f64,
    norm: SpreaderNorm,
    scaling: NoiseScaling,
    rng: &mut R,
) -> Array2<f64> {
    match scaling {
        NoiseScaling::BatchMax => {
            let mut eps = Array2::from_shape_simple_fn((m, d), || rng.random_range(-1.0..=1.0));
            let max_norm = eps.rows().into_iter().map(|r| norm.norm(r)).fold(0.0, f64::max);
            if max_norm > 0.0 {
                eps *= radius / max_norm;
            }
            eps
        }
        NoiseScaling::PerRow => {
            let mut eps = Array2::zeros((m, d));
            for mut row in eps.rows_mut() {
                let sample = uniform_in_ball(d, norm, rng);
                row.assign(&(sample * radius));
            }
            eps
        }
    }
}

fn uniform_in_ball<R: Rng + ?Sized>(d: usize, norm: SpreaderNorm, rng: &mut R) -> Array1<f64> {
    match norm {
        SpreaderNorm::Linf => Array1::from_shape_simple_fn(d, || rng.random_range(-1.0..=1.0)),
        SpreaderNorm::L2 => {
            let dir: Array1<f64> = Array1::from_shape_simple_fn(d, || StandardNormal.sample(rng));
            let len = dir.dot(&dir).sqrt();
            let radius = rng.random::<f64>().powf(1.0 / d as f64);
            dir * (radius / len)
        }
        SpreaderNorm::L1 => {
            // Dirichlet(1, .., 1) over d + 1 slots drops uniformly into the simplex.
            let e: Vec<f64> = (0..=d).map(|_| Exp1.sample(rng)).collect();
            let total: f64 = e.iter().sum();
            Array1::from_shape_fn(d, |i| {
                let sign = if rng.random::<bool>() { 1.0 } else { -1.0 };
                sign * e[i] / total
            })
        }
    }
}

fn mean(values: ArrayView1<f64>) -> f64 {
    values.sum() / values.len() as f64
}

/// Population variance, or its square root for [`Deviation::Std`].
pub fn deviation(values: ArrayView1<f64>, measure: Deviation) -> f64 {
    if values.is_empty() {
        return 0.0;
    }
    let mu = mean(values);
    let var = values.iter().map(|v| (v - mu) * (v - mu)).sum::<f64>() / values.len() as f64;
    match measure {
        Deviation::Variance => var,
        Deviation::Std => var.sqrt(),
    }
}

/// Gradient of [`deviation`] with respect to each value.
pub fn deviation_grad(values: ArrayView1<f64>, measure: Deviation) -> Array1<f64> {
    let m = values.len() as f64;
    let mu = mean(values);
    match measure {
        Deviation::Variance => values.mapv(|v| 2.0 * (v - mu) / m),
        Deviation::Std => {
            let sd = deviation(values, Deviation::Std).max(STD_GRAD_FLOOR);
            values.mapv(|v| (v - mu) / (m * sd))
        }
    }
}

fn check_lengths(clean: &ArrayView1<f64>, noised: &ArrayView1<f64>, cfg: &LossConfig) -> Result<()> {
    if cfg.variant == LossVariant::NoiseVariance && clean.len() != noised.len() {
        return Err(Error::Dimension(format!(
            "clean outputs ({}) and noised outputs ({}) differ in length",
            clean.len(),
            noised.len()
        )));
    }
    if clean.is_empty() {
        return Err(Error::Argument("a group needs at least one output".into()));
    }
    Ok(())
}

pub fn group_loss(clean: ArrayView1<f64>, noised: ArrayView1<f64>, cfg: &LossConfig) -> Result<f64> {
    check_lengths(&clean, &noised, cfg)?;
    let spread = deviation(clean, cfg.deviation);
    Ok(match cfg.variant {
        LossVariant::Simple => spread,
        LossVariant::NoiseVariance => spread + (cfg.q - deviation(noised, cfg.deviation)).abs(),
    })
}

/// `(∂L/∂clean, ∂L/∂noised)` for one group.
///
/// The absolute value contributes `-sgn(Q - dev(noised))` times the
/// deviation gradient; at exactly `dev(noised) == Q` the zero subgradient is used.
pub fn group_loss_grad(
    clean: ArrayView1<f64>,
    noised: ArrayView1<f64>,
    cfg: &LossConfig,
) -> Result<(Array1<f64>, Array1<f64>)> {
    check_lengths(&clean, &noised, cfg)?;
    let d_clean = deviation_grad(clean, cfg.deviation);
    let d_noised = match cfg.variant {
        LossVariant::Simple => Array1::zeros(noised.len()),
        LossVariant::NoiseVariance => {
            let gap = cfg.q - deviation(noised, cfg.deviation);
            let sign = if gap > 0.0 {
                1.0
            } else if gap < 0.0 {
                -1.0
            } else {
                0.0
            };
            deviation_grad(noised, cfg.deviation) * -sign
        }
    };
    Ok((d_clean, d_noised))
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn cfg(variant: LossVariant, deviation: Deviation) -> LossConfig {
        LossConfig { variant, deviation, ..Default::default() }
    }

    #[test]
    fn deviation_examples() {
        assert_eq!(deviation(array![3.0, 3.0, 3.0].view(), Deviation::Variance), 0.0);
        assert_eq!(deviation(array![1.0, -1.0].view(), Deviation::Variance), 1.0);
        assert_eq!(deviation(array![1.0, -1.0].view(), Deviation::Std), 1.0);
        // ((1-2)² + 0 + (3-2)²) / 3
        let v = deviation(array![1.0, 2.0, 3.0].view(), Deviation::Variance);
        assert!((v - 2.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn group_loss_examples() {
        let nv = LossConfig::default();
        let c = array![0.7, 0.7, 0.7];
        assert_eq!(group_loss(c.view(), c.view(), &nv).unwrap(), 1.0);
        let v = cfg(LossVariant::NoiseVariance, Deviation::Variance);
        assert_eq!(group_loss(c.view(), c.view(), &v).unwrap(), 1.0);

        let got = group_loss(array![0.0, 0.0].view(), array![1.0, -1.0].view(), &nv).unwrap();
        assert_eq!(got, 0.0);

        let simple = cfg(LossVariant::Simple, Deviation::Variance);
        let got = group_loss(array![1.0, 2.0, 3.0].view(), array![9.0].view(), &simple).unwrap();
        assert!((got - 2.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn length_mismatch_is_an_error() {
        let nv = LossConfig::default();
        assert!(group_loss(array![1.0, 2.0].view(), array![1.0].view(), &nv).is_err());
        assert!(group_loss_grad(array![1.0, 2.0].view(), array![1.0].view(), &nv).is_err());
    }

    #[test]
    fn variance_gradient_example() {
        let v = cfg(LossVariant::Simple, Deviation::Variance);
        let (g, _) = group_loss_grad(array![1.0, 2.0, 3.0].view(), Array1::<f64>::zeros(3).view(), &v).unwrap();
        let want = [-2.0 / 3.0, 0.0, 2.0 / 3.0];
        for (a, b) in g.iter().zip(want) {
            assert!((a - b).abs() < 1e-15);
        }
        let (g, _) = group_loss_grad(Array1::from_elem(5, 4.0).view(), Array1::<f64>::zeros(5).view(), &v).unwrap();
        assert!(g.iter().all(|&x| x == 0.0));
    }

    #[test]
    fn noised_gradient_flips_sign_when_deviation_crosses_q() {
        let nv = cfg(LossVariant::NoiseVariance, Deviation::Std);
        let clean = array![0.0, 0.1, 0.2];
        let narrow = array![-0.5, 0.0, 0.5]; // std < 1
        let wide = array![-5.0, 0.0, 5.0]; // std > 1
        let (_, gn) = group_loss_grad(clean.view(), narrow.view(), &nv).unwrap();
        let (_, gw) = group_loss_grad(clean.view(), wide.view(), &nv).unwrap();
        // below Q the loss pushes the noised outputs apart, above Q it pulls them in
        assert!(gn[0] > 0.0 && gn[2] < 0.0);
        assert!(gw[0] < 0.0 && gw[2] > 0.0);
    }

    #[test]
    fn batch_max_noise_hits_radius_exactly() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for norm in [SpreaderNorm::L1, SpreaderNorm::L2, SpreaderNorm::Linf] {
            for &(m, d, r) in &[(100, 3, 1.0), (7, 5, 2.5), (1, 1, 0.3)] {
                let eps = sample_spreading_noise(m, d, r, norm, NoiseScaling::BatchMax, &mut rng);
                let norms: Vec<f64> = eps.rows().into_iter().map(|row| norm.norm(row)).collect();
                let max = norms.iter().cloned().fold(0.0, f64::max);
                assert!((max - r).abs() < 1e-12, "{norm:?}: max {max}");
                assert!(norms.iter().all(|&n| n <= r + 1e-12));
            }
        }
        let eps = sample_spreading_noise(1, 1, 0.3, SpreaderNorm::L2, NoiseScaling::BatchMax, &mut rng);
        assert!((eps[[0, 0]].abs() - 0.3).abs() < 1e-15);
    }

    #[test]
    fn per_row_noise_stays_in_ball() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for norm in [SpreaderNorm::L1, SpreaderNorm::L2, SpreaderNorm::Linf] {
            let eps = sample_spreading_noise(500, 4, 2.0, norm, NoiseScaling::PerRow, &mut rng);
            let norms: Vec<f64> = eps.rows().into_iter().map(|row| norm.norm(row)).collect();
            assert!(norms.iter().all(|&n| n <= 2.0 + 1e-12));
            // uniform in a 4-ball: P(norm < R/2) = 1/16
            let inner = norms.iter().filter(|&&n| n < 1.0).count() as f64 / 500.0;
            assert!(inner < 0.15, "{norm:?}: {inner}");
        }
    }

    #[test]
    fn config_validation() {
        assert!(LossConfig::default().validate().is_ok());
        assert!(LossConfig { q: 0.0, ..Default::default() }.validate().is_err());
        assert!(LossConfig { r: -1.0, ..Default::default() }.validate().is_err());
    }
}
