use ndarray::{concatenate, Array1, Array2, Axis};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, StandardNormal};

use super::{Group, GroupedDataset};
use crate::error::{Error, Result};
use crate::par;

/// Append one standard-normal column that plays no part in the invariant.
pub fn add_nuisance(ds: &GroupedDataset, seed: u64) -> GroupedDataset {
    let groups = par::map_slice(&ds.groups, |g| {
        let mut rng = ChaCha8Rng::seed_from_u64(par::derive_seed(seed, g.id as u64));
        let extra = Array2::from_shape_simple_fn((g.states.nrows(), 1), || StandardNormal.sample(&mut rng));
        Group {
            id: g.id,
            states: concatenate(Axis(1), &[g.states.view(), extra.view()]).unwrap(),
            invariant: g.invariant,
        }
    });
    let mut out = ds.clone();
    out.groups = groups;
    out.meta.name = format!("{}_plus", ds.name());
    out.meta.dim += 1;
    out.meta.variables.push(format!("nuisance{}", out.meta.dim));
    out.meta.rescale.push(1.0);
    out
}

/// Add i.i.d. `N(0, s)` to every stored entry; labels are kept as they were.
pub fn add_observation_noise(ds: &GroupedDataset, s: f64, seed: u64) -> Result<GroupedDataset> {
    if !(s >= 0.0) {
        return Err(Error::Argument(format!("noise strength must be non-negative, got {s}")));
    }
    let mut out = ds.clone();
    if s == 0.0 {
        return Ok(out);
    }
    let normal = Normal::new(0.0, s).unwrap();
    out.groups = par::map_slice(&ds.groups, |g| {
        let mut rng = ChaCha8Rng::seed_from_u64(par::derive_seed(seed, g.id as u64));
        let mut states = g.states.clone();
        states.mapv_inplace(|v| v + normal.sample(&mut rng));
        Group { id: g.id, states, invariant: g.invariant }
    });
    out.meta.notes.insert("observation_noise".into(), format!("{s:?}"));
    Ok(out)
}

pub const NULL_DIM: usize = 5;

/// Gaussian clouds with no invariant: per group a mean drawn from
/// `U(-1, 1)^5`, then `m` points from `N(mean, I)`.
pub fn generate_null(n: usize, m: usize, seed: u64) -> Result<GroupedDataset> {
    if n == 0 || m == 0 {
        return Err(Error::Argument(format!("need N, M >= 1, got ({n}, {m})")));
    }
    let groups = par::map_range(n, |i| {
        let mut rng = ChaCha8Rng::seed_from_u64(par::derive_seed(seed, i as u64));
        let mean = Array1::from_shape_simple_fn(NULL_DIM, || rng.random_range(-1.0..1.0));
        let noise: Array2<f64> = Array2::from_shape_simple_fn((m, NULL_DIM), || StandardNormal.sample(&mut rng));
        Group { id: i, states: noise + &mean, invariant: None }
    });
    let mut ds = GroupedDataset::new("null", (1..=NULL_DIM).map(|j| format!("x{j}")).collect(), None, groups)?;
    ds.meta.seed = Some(seed);
    Ok(ds)
}
