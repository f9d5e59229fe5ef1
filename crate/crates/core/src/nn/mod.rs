//! Dense feed-forward network with Mish hidden activations and a linear
//! scalar output, trained with hand-written reverse-mode gradients and Adam.
//!
//! Weights are stored `fan_in × fan_out`, so a batch `X` (rows are samples)
//! maps through a layer as `X·W + b`.

mod activation;
mod adam;
mod checkpoint;

pub use activation::{mish, mish_grad};
pub use adam::AdamConfig;
pub use checkpoint::{load_checkpoint, read_checkpoint, save_checkpoint, write_checkpoint};

use ndarray::{Array1, Array2, ArrayView1, ArrayView2, Axis, Zip};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

/// Default hidden width and depth of the invariant network.
pub const DEFAULT_WIDTH: usize = 320;
pub const DEFAULT_HIDDEN_LAYERS: usize = 4;

/// Layer sizes `[d, w, w, .., w, 1]` for `hidden` hidden layers of width `width`.
pub fn layer_dims(input_dim: usize, width: usize, hidden: usize) -> Vec<usize> {
    let mut dims = Vec::with_capacity(hidden + 2);
    dims.push(input_dim);
    dims.extend(std::iter::repeat_n(width, hidden));
    dims.push(1);
    dims
}

/// Network parameters together with the Adam moment buffers that belong to them.
#[derive(Debug, Clone, PartialEq)]
pub struct MlpParams {
    pub dims: Vec<usize>,
    pub seed: u64,
    pub weights: Vec<Array2<f64>>,
    pub biases: Vec<Array1<f64>>,
    pub adam_m: Gradients,
    pub adam_v: Gradients,
    pub step_count: u64,
}

/// A set of arrays shaped like the parameters: gradients or Adam moments.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    pub weights: Vec<Array2<f64>>,
    pub biases: Vec<Array1<f64>>,
}

impl Gradients {
    pub fn zeros(dims: &[usize]) -> Self {
        let weights = dims.windows(2).map(|w| Array2::zeros((w[0], w[1]))).collect();
        let biases = dims[1..].iter().map(|&n| Array1::zeros(n)).collect();
        Self { weights, biases }
    }

    pub fn is_finite(&self) -> bool {
        self.weights.iter().all(|w| w.iter().all(|v| v.is_finite()))
            && self.biases.iter().all(|b| b.iter().all(|v| v.is_finite()))
    }

    pub fn add_assign(&mut self, other: &Gradients) {
        for (a, b) in self.weights.iter_mut().zip(&other.weights) {
            *a += b;
        }
        for (a, b) in self.biases.iter_mut().zip(&other.biases) {
            *a += b;
        }
    }

    /// Every entry, weights first (layer by layer, row-major) then biases.
    pub fn flatten(&self) -> Vec<f64> {
        let mut out = Vec::new();
        for w in &self.weights {
            out.extend(w.iter().copied());
        }
        for b in &self.biases {
            out.extend(b.iter().copied());
        }
        out
    }

    pub fn max_abs(&self) -> f64 {
        self.flatten().into_iter().fold(0.0, |m, v| m.max(v.abs()))
    }
}

/// Activations recorded by [`MlpParams::forward`] for the backward pass.
///
/// `pre[l]` is layer `l`'s affine output and `post[l]` its activation; the
/// last layer is linear so its `post` equals its `pre`.
#[derive(Debug, Clone)]
pub struct ForwardTape {
    pub input: Array2<f64>,
    pub pre: Vec<Array2<f64>>,
    pub post: Vec<Array2<f64>>,
}

impl ForwardTape {
    pub fn depth(&self) -> usize {
        self.pre.len()
    }

    pub fn batch_size(&self) -> usize {
        self.input.nrows()
    }

    /// The network output stored on the tape.
    pub fn output(&self) -> Array1<f64> {
        self.post.last().map(|o| o.column(0).to_owned()).unwrap_or_else(|| Array1::zeros(0))
    }
}

impl MlpParams {
    /// Seeded initialization: uniform weights with bound `sqrt(6 / fan_in)`, zero biases.
    pub fn init(dims: &[usize], seed: u64) -> Result<Self> {
        validate_dims(dims)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let weights = dims
            .windows(2)
            .map(|w| {
                let bound = (6.0 / w[0] as f64).sqrt();
                Array2::from_shape_simple_fn((w[0], w[1]), || rng.random_range(-bound..bound))
            })
            .collect();
        let biases = dims[1..].iter().map(|&n| Array1::zeros(n)).collect();
        Ok(Self {
            dims: dims.to_vec(),
            seed,
            weights,
            biases,
            adam_m: Gradients::zeros(dims),
            adam_v: Gradients::zeros(dims),
            step_count: 0,
        })
    }

    /// All parameters zero: the network computes the constant function 0.
    pub fn zeros(dims: &[usize]) -> Result<Self> {
        validate_dims(dims)?;
        let g = Gradients::zeros(dims);
        Ok(Self {
            dims: dims.to_vec(),
            seed: 0,
            weights: g.weights.clone(),
            biases: g.biases.clone(),
            adam_m: g.clone(),
            adam_v: g,
            step_count: 0,
        })
    }

    pub fn input_dim(&self) -> usize {
        self.dims[0]
    }

    pub fn num_layers(&self) -> usize {
        self.weights.len()
    }

    pub fn num_params(&self) -> usize {
        self.weights.iter().map(|w| w.len()).sum::<usize>() + self.biases.iter().map(|b| b.len()).sum::<usize>()
    }

    /// Weights then biases, in the same order as [`Gradients::flatten`].
    pub fn flat_params(&self) -> Vec<f64> {
        Gradients { weights: self.weights.clone(), biases: self.biases.clone() }.flatten()
    }

    pub fn set_flat_params(&mut self, values: &[f64]) -> Result<()> {
        if values.len() != self.num_params() {
            return Err(Error::Dimension(format!("expected {} parameters, got {}", self.num_params(), values.len())));
        }
        let mut it = values.iter().copied();
        for w in &mut self.weights {
            w.iter_mut().for_each(|v| *v = it.next().unwrap());
        }
        for b in &mut self.biases {
            b.iter_mut().for_each(|v| *v = it.next().unwrap());
        }
        Ok(())
    }

    fn check_batch(&self, batch: &ArrayView2<f64>) -> Result<()> {
        if batch.ncols() != self.input_dim() {
            return Err(Error::Dimension(format!(
                "batch has {} columns, network expects {}",
                batch.ncols(),
                self.input_dim()
            )));
        }
        Ok(())
    }

    /// Outputs for every row of `batch`, recording the tape needed by [`Self::backward`].
    pub fn forward(&self, batch: ArrayView2<f64>) -> Result<(Array1<f64>, ForwardTape)> {
        self.check_batch(&batch)?;
        let last = self.num_layers() - 1;
        let mut pre = Vec::with_capacity(self.num_layers());
        let mut post: Vec<Array2<f64>> = Vec::with_capacity(self.num_layers());
        for (l, (w, b)) in self.weights.iter().zip(&self.biases).enumerate() {
            let input = if l == 0 { batch } else { post[l - 1].view() };
            let z = input.dot(w) + b;
            let a = if l == last { z.clone() } else { z.mapv(mish) };
            pre.push(z);
            post.push(a);
        }
        let tape = ForwardTape { input: batch.to_owned(), pre, post };
        Ok((tape.output(), tape))
    }

    /// Outputs only; does not keep intermediate activations.
    pub fn predict(&self, batch: ArrayView2<f64>) -> Result<Array1<f64>> {
        self.check_batch(&batch)?;
        let last = self.num_layers() - 1;
        let mut act = batch.dot(&self.weights[0]) + &self.biases[0];
        if last > 0 {
            act.mapv_inplace(mish);
        }
        for l in 1..=last {
            act = act.dot(&self.weights[l]) + &self.biases[l];
            if l != last {
                act.mapv_inplace(mish);
            }
        }
        Ok(act.column(0).to_owned())
    }

    /// Parameter gradients given `∂L/∂output` for every row of the taped batch,
    /// summed over the batch.
    pub fn backward(&self, tape: &ForwardTape, output_grad: ArrayView1<f64>) -> Result<Gradients> {
        if tape.depth() != self.num_layers()
            || tape.input.ncols() != self.input_dim()
            || tape.pre.iter().zip(&self.dims[1..]).any(|(z, &n)| z.ncols() != n)
        {
            return Err(Error::Dimension("tape was not produced by these parameters".into()));
        }
        if output_grad.len() != tape.batch_size() {
            return Err(Error::Dimension(format!(
                "output gradient has length {}, batch has {} rows",
                output_grad.len(),
                tape.batch_size()
            )));
        }

        let layers = self.num_layers();
        let mut grads = Gradients::zeros(&self.dims);
        let mut delta = output_grad.to_owned().insert_axis(Axis(1));
        for l in (0..layers).rev() {
            if l != layers - 1 {
                Zip::from(&mut delta).and(&tape.pre[l]).for_each(|d, &z| *d *= mish_grad(z));
            }
            let input = if l == 0 { tape.input.view() } else { tape.post[l - 1].view() };
            grads.weights[l] = input.t().dot(&delta);
            grads.biases[l] = delta.sum_axis(Axis(0));
            if l > 0 {
                delta = delta.dot(&self.weights[l].t());
            }
        }
        Ok(grads)
    }
}

fn validate_dims(dims: &[usize]) -> Result<()> {
    if dims.len() < 2 {
        return Err(Error::Argument(format!("layer dims need at least input and output sizes, got {dims:?}")));
    }
    if dims.contains(&0) {
        return Err(Error::Argument(format!("layer sizes must be positive: {dims:?}")));
    }
    if *dims.last().unwrap() != 1 {
        return Err(Error::Argument("the network must end in a single output".into()));
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn default_shapes() {
        let p = MlpParams::init(&layer_dims(4, 320, 4), 1).unwrap();
        let shapes: Vec<_> = p.weights.iter().map(|w| w.dim()).collect();
        assert_eq!(shapes, vec![(4, 320), (320, 320), (320, 320), (320, 320), (320, 1)]);
        assert_eq!(p.adam_m.weights.len(), 5);
        for (w, m) in p.weights.iter().zip(&p.adam_v.weights) {
            assert_eq!(w.dim(), m.dim());
        }
        assert!(p.biases.iter().all(|b| b.iter().all(|&v| v == 0.0)));
    }

    #[test]
    fn rejects_bad_dims() {
        assert!(matches!(MlpParams::init(&[], 0), Err(Error::Argument(_))));
        assert!(matches!(MlpParams::init(&[3], 0), Err(Error::Argument(_))));
        assert!(matches!(MlpParams::init(&[3, 0, 1], 0), Err(Error::Argument(_))));
    }

    #[test]
    fn same_seed_same_params() {
        let dims = layer_dims(3, 16, 2);
        assert_eq!(MlpParams::init(&dims, 9).unwrap(), MlpParams::init(&dims, 9).unwrap());
        assert_ne!(MlpParams::init(&dims, 9).unwrap(), MlpParams::init(&dims, 10).unwrap());
    }

    #[test]
    fn weight_mean_is_near_zero() {
        let p = MlpParams::init(&layer_dims(4, 320, 4), 3).unwrap();
        let w = &p.weights[2];
        let bound = (6.0f64 / 320.0).sqrt();
        // U(-b, b) has std b/sqrt(3); the mean of n draws has std b/sqrt(3n).
        let se = bound / (3.0 * w.len() as f64).sqrt();
        let mean = w.mean().unwrap();
        assert!(mean.abs() < 3.0 * se, "mean {mean} vs 3se {}", 3.0 * se);
        assert!(w.iter().all(|v| v.abs() <= bound));
    }

    #[test]
    fn zero_network_outputs_zero() {
        let p = MlpParams::zeros(&layer_dims(3, 8, 4)).unwrap();
        let x = array![[1.0, -2.0, 3.0], [100.0, 0.5, -7.0]];
        let (y, _) = p.forward(x.view()).unwrap();
        assert_eq!(y, array![0.0, 0.0]);
    }

    #[test]
    fn scalar_chain_by_hand() {
        // d = 1, one hidden unit: y = w2 * mish(w1 * x + b1) + b2
        let mut p = MlpParams::zeros(&[1, 1, 1]).unwrap();
        p.weights[0][[0, 0]] = 0.7;
        p.biases[0][0] = -0.2;
        p.weights[1][[0, 0]] = 1.5;
        p.biases[1][0] = 0.1;
        let x = 1.3;
        let z: f64 = 0.7 * x - 0.2;
        let want = 1.5 * z * (z.exp().ln_1p()).tanh() + 0.1;
        let (y, _) = p.forward(array![[x]].view()).unwrap();
        assert!((y[0] - want).abs() < 1e-14);
    }

    #[test]
    fn identical_rows_identical_outputs_and_tape_matches() {
        let p = MlpParams::init(&layer_dims(2, 8, 3), 4).unwrap();
        let x = Array2::from_shape_fn((5, 2), |(_, j)| 0.3 + j as f64);
        let (y, tape) = p.forward(x.view()).unwrap();
        assert!(y.iter().all(|&v| v == y[0]));
        assert_eq!(tape.depth(), 4);
        assert_eq!(tape.output(), y);
        assert_eq!(p.predict(x.view()).unwrap(), y);
        let (y2, _) = p.forward(x.view()).unwrap();
        assert_eq!(y, y2);
    }

    #[test]
    fn shape_mismatch_is_dimension_error() {
        let p = MlpParams::init(&layer_dims(3, 4, 1), 0).unwrap();
        let x = Array2::zeros((2, 2));
        assert!(matches!(p.forward(x.view()), Err(Error::Dimension(_))));
        let (_, tape) = p.forward(Array2::zeros((2, 3)).view()).unwrap();
        assert!(matches!(p.backward(&tape, Array1::zeros(3).view()), Err(Error::Dimension(_))));
        let other = MlpParams::init(&layer_dims(3, 5, 1), 0).unwrap();
        assert!(matches!(other.backward(&tape, Array1::zeros(2).view()), Err(Error::Dimension(_))));
    }

    #[test]
    fn zero_output_grad_gives_zero_gradients() {
        let p = MlpParams::init(&layer_dims(3, 6, 2), 2).unwrap();
        let x = Array2::from_shape_fn((4, 3), |(i, j)| (i * 3 + j) as f64 * 0.1);
        let (_, tape) = p.forward(x.view()).unwrap();
        let g = p.backward(&tape, Array1::zeros(4).view()).unwrap();
        assert_eq!(g.max_abs(), 0.0);
    }

    #[test]
    fn duplicated_row_doubles_gradient() {
        let p = MlpParams::init(&layer_dims(2, 5, 2), 8).unwrap();
        let one = array![[0.4, -1.1]];
        let two = array![[0.4, -1.1], [0.4, -1.1]];
        let (_, t1) = p.forward(one.view()).unwrap();
        let (_, t2) = p.forward(two.view()).unwrap();
        let g1 = p.backward(&t1, array![0.8].view()).unwrap().flatten();
        let g2 = p.backward(&t2, array![0.8, 0.8].view()).unwrap().flatten();
        for (a, b) in g1.iter().zip(&g2) {
            assert!((2.0 * a - b).abs() <= 1e-15 * (1.0 + b.abs()));
        }
    }

    #[test]
    fn flat_round_trip() {
        let mut p = MlpParams::init(&layer_dims(2, 3, 1), 5).unwrap();
        let flat = p.flat_params();
        assert_eq!(flat.len(), p.num_params());
        let shifted: Vec<f64> = flat.iter().map(|v| v + 1.0).collect();
        p.set_flat_params(&shifted).unwrap();
        assert_eq!(p.flat_params(), shifted);
        assert!(p.set_flat_params(&flat[1..]).is_err());
    }
}
