//! Synthetic invariants: draw the free variables, then solve the invariant
//! equation for the remaining one, rejecting draws where it leaves its range.

use std::f64::consts::PI;

use ndarray::{Array1, Array2, ArrayView1};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use super::{Group, GroupedDataset, Invariant};
use crate::error::{Error, Result};
use crate::par;

/// Which printing of the S1 formula to generate.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum S1Form {
    /// `x1 − 3·x2·x3 + ½·x4²`
    Appendix,
    /// `x1 − 2·x2·x3 + 3·x4²`
    MainText,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SyntheticSystem {
    S1(S1Form),
    S2,
    S3,
}

/// Attempts per feasibility window; a window accepting fewer than 1% of
/// draws aborts generation.
const REJECTION_WINDOW: usize = 20_000;
const MIN_WINDOW_ACCEPTS: usize = REJECTION_WINDOW / 100;

const S1_C_RANGE: (f64, f64) = (-4.5, 5.0);
const S1_X1_LIMIT: f64 = 5.0;
const S2_C_RANGE: (f64, f64) = (-5.0, 0.0);
const S2_X2_LIMIT: f64 = 3.0 * PI;
const S3_C_RANGE: (f64, f64) = (1.0, 3.85);
const S3_X1_LIMIT: f64 = 10.0;
const S3_SCAN_INTERVALS: usize = 200;

/// Largest accepted |V(row) − C| for a solved row.
const SOLVE_TOLERANCE: f64 = 1e-9;

impl SyntheticSystem {
    pub fn invariant(self) -> Invariant {
        match self {
            SyntheticSystem::S1(S1Form::Appendix) => Invariant::S1,
            SyntheticSystem::S1(S1Form::MainText) => Invariant::S1MainText,
            SyntheticSystem::S2 => Invariant::S2,
            SyntheticSystem::S3 => Invariant::S3,
        }
    }

    fn name(self) -> &'static str {
        match self {
            SyntheticSystem::S1(S1Form::Appendix) => "s1",
            SyntheticSystem::S1(S1Form::MainText) => "s1_main_text",
            SyntheticSystem::S2 => "s2",
            SyntheticSystem::S3 => "s3",
        }
    }

    fn c_range(self) -> (f64, f64) {
        match self {
            SyntheticSystem::S1(_) => S1_C_RANGE,
            SyntheticSystem::S2 => S2_C_RANGE,
            SyntheticSystem::S3 => S3_C_RANGE,
        }
    }

    /// One attempt at a row with invariant `c`; `None` means rejected.
    fn try_row<R: Rng>(self, c: f64, rng: &mut R) -> Option<Array1<f64>> {
        match self {
            SyntheticSystem::S1(form) => {
                let normal = Normal::new(0.0, 2.0).unwrap();
                let (x2, x3, x4): (f64, f64, f64) = (normal.sample(rng), normal.sample(rng), normal.sample(rng));
                let x1 = match form {
                    S1Form::Appendix => c + 3.0 * x2 * x3 - 0.5 * x4 * x4,
                    S1Form::MainText => c + 2.0 * x2 * x3 - 3.0 * x4 * x4,
                };
                (x1.abs() <= S1_X1_LIMIT).then(|| Array1::from(vec![x1, x2, x3, x4]))
            }
            SyntheticSystem::S2 => {
                let x1: f64 = rng.random_range(-3.0..3.0);
                let x3: f64 = rng.random_range(-3.0..3.0);
                let s = (c - 3.0 * x1 - x1.abs().sqrt() * x3.powi(3)) / 2.0;
                if !(-1.0..=1.0).contains(&s) {
                    return None;
                }
                // every solution of sin(x2) = s inside [-3π, 3π]
                let a = s.asin();
                let roots: Vec<f64> = (-3..=3)
                    .map(|k: i32| if k % 2 == 0 { a } else { -a } + k as f64 * PI)
                    .filter(|x| x.abs() <= S2_X2_LIMIT)
                    .collect();
                let x2 = roots[rng.random_range(0..roots.len())];
                Some(Array1::from(vec![x1, x2, x3]))
            }
            SyntheticSystem::S3 => {
                let x2: f64 = rng.random_range(-10.0..10.0);
                let x3: f64 = rng.random_range(0.5..5.0);
                let x4: f64 = rng.random_range(-10.0..10.0);
                let g = |x1: f64| {
                    if x1 + x3 == 0.0 {
                        f64::INFINITY
                    } else {
                        2.0 * x1 * x2 - ((x1 + x3).abs().ln() - x4) / x3 - c
                    }
                };
                let brackets = sign_change_brackets(g, -S3_X1_LIMIT, S3_X1_LIMIT, S3_SCAN_INTERVALS);
                if brackets.is_empty() {
                    return None;
                }
                let (lo, hi) = brackets[rng.random_range(0..brackets.len())];
                let x1 = bisect(g, lo, hi);
                Some(Array1::from(vec![x1, x2, x3, x4]))
            }
        }
    }
}

/// Sub-intervals of `[lo, hi]` on which `g` changes sign.
pub(crate) fn sign_change_brackets(g: impl Fn(f64) -> f64, lo: f64, hi: f64, n: usize) -> Vec<(f64, f64)> {
    let step = (hi - lo) / n as f64;
    let mut out = Vec::new();
    let mut a = lo;
    let mut ga = g(a);
    for i in 1..=n {
        let b = if i == n { hi } else { lo + step * i as f64 };
        let gb = g(b);
        if ga.is_finite() && gb.is_finite() && (ga == 0.0 || ga.signum() != gb.signum()) {
            out.push((a, b));
        }
        a = b;
        ga = gb;
    }
    out
}

/// Bisection to machine precision on a sign-changing bracket.
pub(crate) fn bisect(g: impl Fn(f64) -> f64, mut lo: f64, mut hi: f64) -> f64 {
    let mut g_lo = g(lo);
    if g_lo == 0.0 {
        return lo;
    }
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        let gm = g(mid);
        if gm == 0.0 {
            return mid;
        }
        if gm.signum() == g_lo.signum() {
            lo = mid;
            g_lo = gm;
        } else {
            hi = mid;
        }
    }
    if g(lo).abs() <= g(hi).abs() {
        lo
    } else {
        hi
    }
}

fn generate_group(system: SyntheticSystem, id: usize, m: usize, seed: u64) -> Result<Group> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (c_lo, c_hi) = system.c_range();
    let c: f64 = rng.random_range(c_lo..c_hi);
    let inv = system.invariant();
    let mut rows = Array2::zeros((m, inv.dim()));
    let (mut filled, mut attempts, mut window_accepts) = (0, 0, 0);
    while filled < m {
        attempts += 1;
        if let Some(row) = system.try_row(c, &mut rng) {
            let ok = inv.value(row.view()).map(|v| (v - c).abs() <= SOLVE_TOLERANCE).unwrap_or(false);
            if ok {
                rows.row_mut(filled).assign(&row);
                filled += 1;
                window_accepts += 1;
            }
        }
        if attempts % REJECTION_WINDOW == 0 {
            if window_accepts < MIN_WINDOW_ACCEPTS {
                return Err(Error::Infeasible(format!(
                    "{}: group {id} accepted {window_accepts} of the last {REJECTION_WINDOW} draws",
                    system.name()
                )));
            }
            window_accepts = 0;
        }
    }
    Ok(Group { id, states: rows, invariant: Some(c) })
}

/// `n` groups of `m` rows, each group sharing one invariant value drawn
/// uniformly from the system's range.
pub fn generate_synthetic(system: SyntheticSystem, n: usize, m: usize, seed: u64) -> Result<GroupedDataset> {
    if n == 0 || m == 0 {
        return Err(Error::Argument(format!("need N, M >= 1, got ({n}, {m})")));
    }
    let groups = par::map_range(n, |i| generate_group(system, i, m, par::derive_seed(seed, i as u64)))
        .into_iter()
        .collect::<Result<Vec<_>>>()?;
    let dim = system.invariant().dim();
    let mut ds = GroupedDataset::new(
        system.name(),
        (1..=dim).map(|j| format!("x{j}")).collect(),
        Some(system.invariant().name().to_owned()),
        groups,
    )?;
    ds.meta.seed = Some(seed);
    Ok(ds)
}

/// Max |V(row) − C| over a group, on unscaled rows.
pub fn max_residual(inv: Invariant, ds: &GroupedDataset, g: &Group) -> Result<f64> {
    let c = g.invariant.unwrap_or(f64::NAN);
    let mut worst = 0.0f64;
    for row in g.states.rows() {
        let raw = ds.unscale_row(row);
        worst = worst.max((inv.value(ArrayView1::from(&raw))? - c).abs());
    }
    Ok(worst)
}
