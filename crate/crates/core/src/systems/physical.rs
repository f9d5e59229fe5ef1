//! Simulated physical systems integrated with explicit Euler steps.

use std::f64::consts::PI;

use ndarray::{Array1, Array2, ArrayView1};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{DriftStats, Group, GroupedDataset, Invariant, KEPLER_GM, LV_ALPHA, LV_BETA, LV_DELTA, LV_GAMMA};
use crate::error::{Error, Result};
use crate::par;

pub const LV_DT: f64 = 0.01;
/// Euler steps between stored Lotka–Volterra states.
pub const LV_STRIDE: usize = 100;
const LV_SCALE: f64 = 0.1;

pub const KEPLER_DT: f64 = 1e-4;
const KEPLER_POSITION_SCALE: f64 = 0.1;
const KEPLER_MAX_DRAWS: usize = 1_000_000;

fn relative_drift(values: &[f64]) -> f64 {
    let v0 = values[0];
    let scale = v0.abs().max(f64::MIN_POSITIVE);
    values.iter().map(|v| (v - v0).abs() / scale).fold(0.0, f64::max)
}

fn lv_group(id: usize, m: usize, seed: u64) -> Result<(Group, f64)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut x: f64 = rng.random_range(1.0..10.0);
    let mut y: f64 = rng.random_range(1.0..10.0);
    let c0 = Invariant::LotkaVolterra.value(ArrayView1::from(&[x, y]))?;
    let mut states = Array2::zeros((m, 2));
    let mut along = Vec::with_capacity(m);
    for j in 0..m {
        if j > 0 {
            for _ in 0..LV_STRIDE {
                let dx = LV_ALPHA * x - LV_GAMMA * x * y;
                let dy = -LV_BETA * y + LV_DELTA * x * y;
                x += LV_DT * dx;
                y += LV_DT * dy;
            }
            if !(x.is_finite() && y.is_finite()) || x <= 0.0 || y <= 0.0 {
                return Err(Error::Simulation(format!(
                    "Lotka–Volterra group {id} left the positive quadrant at sample {j}"
                )));
            }
        }
        states[[j, 0]] = x;
        states[[j, 1]] = y;
        along.push(Invariant::LotkaVolterra.value(ArrayView1::from(&[x, y]))?);
    }
    Ok((Group { id, states, invariant: Some(c0) }, relative_drift(&along)))
}

/// `n` Lotka–Volterra trajectories from uniform initial populations in
/// `[1, 10]²`, sampled every [`LV_STRIDE`] Euler steps and stored scaled by 0.1.
pub fn simulate_lotka_volterra(n: usize, m: usize, seed: u64) -> Result<GroupedDataset> {
    if n == 0 || m == 0 {
        return Err(Error::Argument(format!("need N, M >= 1, got ({n}, {m})")));
    }
    let results = par::map_range(n, |i| lv_group(i, m, par::derive_seed(seed, i as u64)))
        .into_iter()
        .collect::<Result<Vec<_>>>()?;
    let (groups, drift): (Vec<_>, Vec<_>) = results.into_iter().unzip();
    let mut ds = GroupedDataset::new(
        "lotka_volterra",
        vec!["x".into(), "y".into()],
        Some(Invariant::LotkaVolterra.name().into()),
        groups,
    )?;
    ds.meta.seed = Some(seed);
    ds.meta.drift.push(DriftStats::from_per_group(Invariant::LotkaVolterra.name(), drift));
    ds.rescale_column(0, LV_SCALE);
    ds.rescale_column(1, LV_SCALE);
    Ok(ds)
}

#[derive(Debug, Clone, PartialEq)]
pub struct KeplerOptions {
    /// Pin `x·vy − y·vx` to this value by adjusting the tangential velocity.
    pub fixed_angular_momentum: Option<f64>,
    pub dt: f64,
    /// Reject initial conditions closer to the origin than this.
    pub min_radius: f64,
    /// Reject orbits with pericentre closer than this.
    pub min_pericenter: f64,
    pub max_eccentricity: f64,
    /// Reject orbits with a longer period (bounds integration cost).
    pub max_period: f64,
}

impl Default for KeplerOptions {
    fn default() -> Self {
        Self {
            fixed_angular_momentum: None,
            dt: KEPLER_DT,
            min_radius: 0.1,
            min_pericenter: 0.1,
            max_eccentricity: 0.99,
            max_period: 100.0,
        }
    }
}

/// Orbital elements of a bound orbit: `(energy, eccentricity, semi-major axis)`.
fn orbit_elements(s: [f64; 4]) -> (f64, f64, f64) {
    let [x, y, vx, vy] = s;
    let r = x.hypot(y);
    let energy = 0.5 * (vx * vx + vy * vy) - KEPLER_GM / r;
    let l = x * vy - y * vx;
    let ecc = (1.0 + 2.0 * energy * l * l / (KEPLER_GM * KEPLER_GM)).max(0.0).sqrt();
    let a = -KEPLER_GM / (2.0 * energy);
    (energy, ecc, a)
}

/// Period of the bound orbit through a Cartesian state, or `None` if unbound.
pub fn kepler_period(state: ArrayView1<f64>) -> Option<f64> {
    let (energy, _, a) = orbit_elements([state[0], state[1], state[2], state[3]]);
    (energy < 0.0).then(|| 2.0 * PI * (a.powi(3) / KEPLER_GM).sqrt())
}

fn draw_kepler_initial<R: Rng>(opts: &KeplerOptions, rng: &mut R) -> Option<[f64; 4]> {
    let x: f64 = rng.random_range(-5.0..5.0);
    let y: f64 = rng.random_range(-5.0..5.0);
    let mut vx: f64 = rng.random_range(-5.0..5.0);
    let mut vy: f64 = rng.random_range(-5.0..5.0);
    let r = x.hypot(y);
    if r < opts.min_radius {
        return None;
    }
    if let Some(l) = opts.fixed_angular_momentum {
        // keep the radial component, replace the tangential one
        let (ux, uy) = (x / r, y / r);
        let v_rad = vx * ux + vy * uy;
        let v_tan = l / r;
        vx = v_rad * ux - v_tan * uy;
        vy = v_rad * uy + v_tan * ux;
    }
    let s = [x, y, vx, vy];
    let (energy, ecc, a) = orbit_elements(s);
    if energy >= 0.0 || ecc >= opts.max_eccentricity || a * (1.0 - ecc) < opts.min_pericenter {
        return None;
    }
    let period = 2.0 * PI * (a.powi(3) / KEPLER_GM).sqrt();
    if period > opts.max_period {
        return None;
    }
    Some([x, y, vx, vy])
}

fn kepler_group(id: usize, m: usize, seed: u64, opts: &KeplerOptions) -> Result<(Group, [f64; 2])> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut s = None;
    for _ in 0..KEPLER_MAX_DRAWS {
        if let Some(found) = draw_kepler_initial(opts, &mut rng) {
            s = Some(found);
            break;
        }
    }
    let [mut x, mut y, mut vx, mut vy] =
        s.ok_or_else(|| Error::Simulation(format!("Kepler group {id}: no admissible initial condition found")))?;
    let period = kepler_period(ArrayView1::from(&[x, y, vx, vy])).unwrap();
    let stride = if m > 1 { (period / ((m - 1) as f64 * opts.dt)).ceil().max(1.0) as usize } else { 1 };

    let label =
        if opts.fixed_angular_momentum.is_some() { Invariant::KeplerEnergy } else { Invariant::KeplerAngularMomentum };
    let c0 = label.value(ArrayView1::from(&[x, y, vx, vy]))?;
    let mut states = Array2::zeros((m, 4));
    let mut l_along = Vec::with_capacity(m);
    let mut e_along = Vec::with_capacity(m);
    for j in 0..m {
        if j > 0 {
            for _ in 0..stride {
                let r2 = x * x + y * y;
                let r3 = r2 * r2.sqrt();
                let (ax, ay) = (-KEPLER_GM * x / r3, -KEPLER_GM * y / r3);
                x += opts.dt * vx;
                y += opts.dt * vy;
                vx += opts.dt * ax;
                vy += opts.dt * ay;
            }
            if ![x, y, vx, vy].iter().all(|v| v.is_finite()) {
                return Err(Error::Simulation(format!("Kepler group {id} blew up at sample {j}")));
            }
        }
        let st = [x, y, vx, vy];
        states.row_mut(j).assign(&ArrayView1::from(&st));
        l_along.push(Invariant::KeplerAngularMomentum.value(ArrayView1::from(&st))?);
        e_along.push(Invariant::KeplerEnergy.value(ArrayView1::from(&st))?);
    }
    Ok((Group { id, states, invariant: Some(c0) }, [relative_drift(&l_along), relative_drift(&e_along)]))
}

/// Bound Kepler orbits from uniform Cartesian initial conditions, integrated
/// with explicit Euler at `opts.dt` and subsampled so the `m` stored states
/// span one full period. Positions are stored scaled by 0.1.
///
/// Groups carry the angular momentum as their label, or the energy when the
/// angular momentum is pinned.
pub fn simulate_kepler(n: usize, m: usize, seed: u64, opts: &KeplerOptions) -> Result<GroupedDataset> {
    if n == 0 || m == 0 {
        return Err(Error::Argument(format!("need N, M >= 1, got ({n}, {m})")));
    }
    if !(opts.dt > 0.0) {
        return Err(Error::Argument("Kepler dt must be positive".into()));
    }
    let results = par::map_range(n, |i| kepler_group(i, m, par::derive_seed(seed, i as u64), opts))
        .into_iter()
        .collect::<Result<Vec<_>>>()?;
    let (groups, drift): (Vec<_>, Vec<_>) = results.into_iter().unzip();
    let (label, name) = match opts.fixed_angular_momentum {
        Some(_) => (Invariant::KeplerEnergy, "kepler_controlled"),
        None => (Invariant::KeplerAngularMomentum, "kepler"),
    };
    let mut ds = GroupedDataset::new(
        name,
        vec!["x".into(), "y".into(), "vx".into(), "vy".into()],
        Some(label.name().into()),
        groups,
    )?;
    ds.meta.seed = Some(seed);
    ds.meta.drift.push(DriftStats::from_per_group(
        Invariant::KeplerAngularMomentum.name(),
        drift.iter().map(|d| d[0]).collect(),
    ));
    ds.meta
        .drift
        .push(DriftStats::from_per_group(Invariant::KeplerEnergy.name(), drift.iter().map(|d| d[1]).collect()));
    ds.meta.notes.insert("dt".into(), format!("{:?}", opts.dt));
    if let Some(l) = opts.fixed_angular_momentum {
        ds.meta.notes.insert("fixed_angular_momentum".into(), format!("{l:?}"));
    }
    ds.rescale_column(0, KEPLER_POSITION_SCALE);
    ds.rescale_column(1, KEPLER_POSITION_SCALE);
    Ok(ds)
}

/// `(x, y, vx, vy)` → `(r, ṙ, θ, θ̇)`.
pub fn cartesian_to_polar(s: ArrayView1<f64>) -> Result<Array1<f64>> {
    let (x, y, vx, vy) = (s[0], s[1], s[2], s[3]);
    let r = x.hypot(y);
    if r == 0.0 {
        return Err(Error::Domain("polar coordinates are undefined at r = 0".into()));
    }
    Ok(Array1::from(vec![r, (x * vx + y * vy) / r, y.atan2(x), (x * vy - y * vx) / (r * r)]))
}

/// `(r, ṙ, θ, θ̇)` → `(x, y, vx, vy)`.
pub fn polar_to_cartesian(p: ArrayView1<f64>) -> Array1<f64> {
    let (r, rd, th, thd) = (p[0], p[1], p[2], p[3]);
    let (s, c) = th.sin_cos();
    Array1::from(vec![r * c, r * s, rd * c - r * thd * s, rd * s + r * thd * c])
}

/// Re-express a Cartesian Kepler dataset in polar coordinates. The raw
/// states are recovered first; the 0.1 rescaling is then re-applied to any
/// polar column whose magnitude exceeds 10.
pub fn to_polar(ds: &GroupedDataset) -> Result<GroupedDataset> {
    if ds.dim() != 4 {
        return Err(Error::Dimension(format!("polar transform needs 4 columns, got {}", ds.dim())));
    }
    let mut groups = Vec::with_capacity(ds.num_groups());
    for g in &ds.groups {
        let mut states = Array2::zeros(g.states.dim());
        for (j, row) in g.states.rows().into_iter().enumerate() {
            let raw = ds.unscale_row(row);
            states.row_mut(j).assign(&cartesian_to_polar(raw.view())?);
        }
        groups.push(Group { id: g.id, states, invariant: g.invariant });
    }
    let mut out = GroupedDataset::new(
        format!("{}_polar", ds.name()),
        vec!["r".into(), "r_dot".into(), "theta".into(), "theta_dot".into()],
        ds.meta.invariant_name.clone(),
        groups,
    )?;
    out.meta.seed = ds.meta.seed;
    out.meta.drift = ds.meta.drift.clone();
    out.meta.notes = ds.meta.notes.clone();
    out.apply_range_rule();
    Ok(out)
}
