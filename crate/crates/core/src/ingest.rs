//! Double-pendulum trajectories: loading a recorded `(θ1, θ2, ω1, ω2)`
//! series, a simulator that produces series of the same shape, and the
//! analytic cross-sections used for comparison with trained models.

use std::io::{BufRead, BufReader, Read, Write};
use std::path::Path;

use ndarray::{s, Array1, Array2, ArrayView1};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::eval::Axis;
use crate::systems::{Group, GroupedDataset};

/// Fraction of rows (rounded down) used for training.
pub const TRAIN_FRACTION: f64 = 0.8;
pub const OMEGA_SCALE: f64 = 0.1;
pub const DP_VARIABLES: [&str; 4] = ["theta1", "theta2", "omega1", "omega2"];

/// Parse a 4-column trajectory. A first line that does not parse as numbers
/// is taken as a header; blank lines are skipped.
pub fn read_trajectory<R: Read>(input: R) -> Result<Array2<f64>> {
    let mut rows: Vec<[f64; 4]> = Vec::new();
    for (i, line) in BufReader::new(input).lines().enumerate() {
        let line = line?;
        let lineno = i + 1;
        let trimmed = line.trim();
        if trimmed.is_empty() {
            continue;
        }
        let fields: Vec<&str> = trimmed.split(',').map(str::trim).collect();
        let parsed: std::result::Result<Vec<f64>, _> = fields.iter().map(|f| f.parse::<f64>()).collect();
        let values = match parsed {
            Ok(v) => v,
            Err(_) if rows.is_empty() && i == 0 => continue,
            Err(e) => return Err(Error::Parse { line: lineno, msg: e.to_string() }),
        };
        if values.len() != 4 {
            return Err(Error::Format(format!("line {lineno}: expected 4 columns, found {}", values.len())));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::Parse { line: lineno, msg: "non-finite value".into() });
        }
        rows.push([values[0], values[1], values[2], values[3]]);
    }
    let n = rows.len();
    Ok(Array2::from_shape_vec((n, 4), rows.into_iter().flatten().collect()).expect("row length is 4"))
}

pub fn write_trajectory<W: Write>(traj: &Array2<f64>, mut out: W) -> Result<()> {
    if traj.ncols() != 4 {
        return Err(Error::Dimension(format!("trajectory has {} columns, expected 4", traj.ncols())));
    }
    writeln!(out, "{}", DP_VARIABLES.join(","))?;
    for row in traj.rows() {
        let fields: Vec<String> = row.iter().map(|v| format!("{v:?}")).collect();
        writeln!(out, "{}", fields.join(","))?;
    }
    Ok(())
}

fn single_group(name: &str, states: Array2<f64>) -> Result<GroupedDataset> {
    let vars = DP_VARIABLES.iter().map(|s| s.to_string()).collect();
    let mut ds = GroupedDataset::new(name, vars, None, vec![Group { id: 0, states, invariant: None }])?;
    ds.rescale_column(2, OMEGA_SCALE);
    ds.rescale_column(3, OMEGA_SCALE);
    Ok(ds)
}

/// Split a trajectory in time: the first `floor(0.8 * rows)` rows train,
/// the rest test. Angular velocities are stored scaled by 0.1.
pub fn split_trajectory(traj: &Array2<f64>) -> Result<(GroupedDataset, GroupedDataset)> {
    if traj.ncols() != 4 {
        return Err(Error::Format(format!("trajectory has {} columns, expected 4", traj.ncols())));
    }
    let n = traj.nrows();
    let n_train = (n as f64 * TRAIN_FRACTION).floor() as usize;
    if n_train == 0 || n_train == n {
        return Err(Error::Argument(format!("{n} rows are too few to split")));
    }
    Ok((
        single_group("double_pendulum_train", traj.slice(s![..n_train, ..]).to_owned())?,
        single_group("double_pendulum_test", traj.slice(s![n_train.., ..]).to_owned())?,
    ))
}

pub fn load_double_pendulum(path: impl AsRef<Path>) -> Result<(GroupedDataset, GroupedDataset)> {
    let traj = read_trajectory(std::fs::File::open(path)?)?;
    split_trajectory(&traj)
}

/// Point-mass double pendulum.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Pendulum {
    pub m1: f64,
    pub m2: f64,
    pub l1: f64,
    pub l2: f64,
    pub g: f64,
}

impl Default for Pendulum {
    fn default() -> Self {
        Self { m1: 1.0, m2: 1.0, l1: 0.15, l2: 0.15, g: 9.81 }
    }
}

impl Pendulum {
    fn derivative(&self, s: [f64; 4]) -> [f64; 4] {
        let Pendulum { m1, m2, l1, l2, g } = *self;
        let [t1, t2, w1, w2] = s;
        let d = t1 - t2;
        let den = 2.0 * m1 + m2 - m2 * (2.0 * d).cos();
        let a1 = (-g * (2.0 * m1 + m2) * t1.sin()
            - m2 * g * (t1 - 2.0 * t2).sin()
            - 2.0 * d.sin() * m2 * (w2 * w2 * l2 + w1 * w1 * l1 * d.cos()))
            / (l1 * den);
        let a2 = 2.0 * d.sin() * (w1 * w1 * l1 * (m1 + m2) + g * (m1 + m2) * t1.cos() + w2 * w2 * l2 * m2 * d.cos())
            / (l2 * den);
        [w1, w2, a1, a2]
    }

    /// Total mechanical energy.
    pub fn energy(&self, s: ArrayView1<f64>) -> f64 {
        let Pendulum { m1, m2, l1, l2, g } = *self;
        let (t1, t2, w1, w2) = (s[0], s[1], s[2], s[3]);
        0.5 * (m1 + m2) * l1 * l1 * w1 * w1 + 0.5 * m2 * l2 * l2 * w2 * w2 + m2 * l1 * l2 * w1 * w2 * (t1 - t2).cos()
            - (m1 + m2) * g * l1 * t1.cos()
            - m2 * g * l2 * t2.cos()
    }

    fn rk4(&self, s: [f64; 4], h: f64) -> [f64; 4] {
        let add =
            |a: [f64; 4], b: [f64; 4], k: f64| [a[0] + k * b[0], a[1] + k * b[1], a[2] + k * b[2], a[3] + k * b[3]];
        let k1 = self.derivative(s);
        let k2 = self.derivative(add(s, k1, h / 2.0));
        let k3 = self.derivative(add(s, k2, h / 2.0));
        let k4 = self.derivative(add(s, k3, h));
        let mut out = s;
        for i in 0..4 {
            out[i] += h / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]);
        }
        out
    }

    /// `rows` states spaced `dt` apart starting at `initial`, integrated with
    /// `substeps` RK4 steps per sample.
    pub fn simulate(&self, initial: [f64; 4], rows: usize, dt: f64, substeps: usize) -> Result<Array2<f64>> {
        if substeps == 0 || !(dt > 0.0) {
            return Err(Error::Argument("need dt > 0 and at least one substep".into()));
        }
        let h = dt / substeps as f64;
        let mut out = Array2::zeros((rows, 4));
        let mut s = initial;
        for r in 0..rows {
            if r > 0 {
                for _ in 0..substeps {
                    s = self.rk4(s, h);
                }
            }
            if s.iter().any(|v| !v.is_finite()) {
                return Err(Error::Simulation(format!("double pendulum diverged at row {r}")));
            }
            out.row_mut(r).assign(&ArrayView1::from(&s));
        }
        Ok(out)
    }
}

pub const DP_ROWS: usize = 818;
pub const DP_SAMPLE_DT: f64 = 0.01;
pub const DP_INITIAL: [f64; 4] = [1.3, -0.6, 0.0, 4.0];

/// A 818-row, 0.01 s trajectory with the shape and scale of the recorded
/// pendulum series.
pub fn simulated_recording() -> Result<Array2<f64>> {
    Pendulum::default().simulate(DP_INITIAL, DP_ROWS, DP_SAMPLE_DT, 20)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PlaneKind {
    /// `(0, 0, ω1, ω2)`: `c4 + c1·ω1² + c2·ω2² + c3·ω1·ω2`
    OmegaPlane,
    /// `(θ1, θ2, 5, 10)`: `c1 + c2·cos θ1 + c3·cos θ2 + c4·cos(θ1 − θ2)`
    ThetaPlane,
}

/// Analytic slice over `rows × cols` (the two free variables of the plane,
/// in the order `(ω1, ω2)` or `(θ1, θ2)`).
pub fn ideal_dp_crosssection(kind: PlaneKind, rows: &Axis, cols: &Axis, c: [f64; 4]) -> Array2<f64> {
    let (rv, cv) = (Array1::from(rows.values()), Array1::from(cols.values()));
    Array2::from_shape_fn((rv.len(), cv.len()), |(i, j)| {
        let (u, v) = (rv[i], cv[j]);
        match kind {
            PlaneKind::OmegaPlane => c[3] + c[0] * u * u + c[1] * v * v + c[2] * u * v,
            PlaneKind::ThetaPlane => c[0] + c[1] * u.cos() + c[2] * v.cos() + c[3] * (u - v).cos(),
        }
    })
}
