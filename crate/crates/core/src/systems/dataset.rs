//! Grouped datasets and their on-disk form: a CSV of
//! `group_id,x1,..,xd,C` rows plus a JSON sidecar with the metadata.

use std::collections::BTreeMap;
use std::io::{BufRead, BufReader, Read, Write};
use std::path::{Path, PathBuf};

use ndarray::{Array1, Array2, ArrayView1};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// One trial: `M × d` states sharing a single invariant value.
#[derive(Debug, Clone, PartialEq)]
pub struct Group {
    pub id: usize,
    pub states: Array2<f64>,
    pub invariant: Option<f64>,
}

/// Per-group drift of an invariant along a simulated trajectory, relative
/// to its initial value.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DriftStats {
    pub invariant: String,
    pub max_relative: f64,
    pub mean_relative: f64,
    pub per_group: Vec<f64>,
}

impl DriftStats {
    pub fn from_per_group(invariant: &str, per_group: Vec<f64>) -> Self {
        let max_relative = per_group.iter().cloned().fold(0.0, f64::max);
        let mean_relative =
            if per_group.is_empty() { 0.0 } else { per_group.iter().sum::<f64>() / per_group.len() as f64 };
        Self { invariant: invariant.to_owned(), max_relative, mean_relative, per_group }
    }
}

/// Everything about a dataset except the states themselves.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetMeta {
    pub name: String,
    pub dim: usize,
    /// Human-readable variable names in column order.
    pub variables: Vec<String>,
    /// Name of the quantity stored in the `C` column, if any.
    pub invariant_name: Option<String>,
    pub seed: Option<u64>,
    /// Factor each stored column was multiplied by (`stored = raw * factor`).
    pub rescale: Vec<f64>,
    #[serde(default)]
    pub drift: Vec<DriftStats>,
    #[serde(default)]
    pub notes: BTreeMap<String, String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GroupedDataset {
    pub meta: DatasetMeta,
    pub groups: Vec<Group>,
}

impl GroupedDataset {
    pub fn new(
        name: impl Into<String>,
        variables: Vec<String>,
        invariant_name: Option<String>,
        groups: Vec<Group>,
    ) -> Result<Self> {
        let dim = variables.len();
        let ds = Self {
            meta: DatasetMeta {
                name: name.into(),
                dim,
                variables,
                invariant_name,
                seed: None,
                rescale: vec![1.0; dim],
                drift: Vec::new(),
                notes: BTreeMap::new(),
            },
            groups,
        };
        ds.validate()?;
        Ok(ds)
    }

    pub fn validate(&self) -> Result<()> {
        if self.meta.variables.len() != self.meta.dim || self.meta.rescale.len() != self.meta.dim {
            return Err(Error::Dimension("metadata does not match dataset dimension".into()));
        }
        for g in &self.groups {
            if g.states.ncols() != self.meta.dim {
                return Err(Error::Dimension(format!(
                    "group {} has {} columns, dataset dimension is {}",
                    g.id,
                    g.states.ncols(),
                    self.meta.dim
                )));
            }
        }
        Ok(())
    }

    pub fn name(&self) -> &str {
        &self.meta.name
    }

    pub fn dim(&self) -> usize {
        self.meta.dim
    }

    pub fn num_groups(&self) -> usize {
        self.groups.len()
    }

    pub fn num_points(&self) -> usize {
        self.groups.iter().map(|g| g.states.nrows()).sum()
    }

    pub fn has_invariant(&self) -> bool {
        !self.groups.is_empty() && self.groups.iter().all(|g| g.invariant.is_some())
    }

    /// Ground-truth value for every point, in group order.
    pub fn point_invariants(&self) -> Option<Array1<f64>> {
        let mut out = Vec::with_capacity(self.num_points());
        for g in &self.groups {
            let c = g.invariant?;
            out.extend(std::iter::repeat_n(c, g.states.nrows()));
        }
        Some(Array1::from(out))
    }

    /// All states stacked in group order.
    pub fn all_states(&self) -> Array2<f64> {
        let views: Vec<_> = self.groups.iter().map(|g| g.states.view()).collect();
        if views.is_empty() {
            return Array2::zeros((0, self.dim()));
        }
        ndarray::concatenate(ndarray::Axis(0), &views).expect("groups share a dimension")
    }

    /// Undo the recorded rescaling for one stored row.
    pub fn unscale_row(&self, row: ArrayView1<f64>) -> Array1<f64> {
        Array1::from_shape_fn(row.len(), |j| row[j] / self.meta.rescale[j])
    }

    /// Index of a variable by name (`x1`-style positional names always work).
    pub fn variable_index(&self, name: &str) -> Option<usize> {
        if let Some(i) = self.meta.variables.iter().position(|v| v == name) {
            return Some(i);
        }
        name.strip_prefix('x')
            .and_then(|n| n.parse::<usize>().ok())
            .filter(|&n| n >= 1 && n <= self.dim())
            .map(|n| n - 1)
    }

    /// Multiply column `col` by `factor` and record it.
    pub fn rescale_column(&mut self, col: usize, factor: f64) {
        for g in &mut self.groups {
            g.states.column_mut(col).mapv_inplace(|v| v * factor);
        }
        self.meta.rescale[col] *= factor;
    }

    /// Scale by 0.1 every column whose largest magnitude exceeds 10.
    pub fn apply_range_rule(&mut self) {
        for col in 0..self.dim() {
            let max =
                self.groups.iter().flat_map(|g| g.states.column(col).to_vec()).fold(0.0f64, |m, v| m.max(v.abs()));
            if max > 10.0 {
                self.rescale_column(col, 0.1);
            }
        }
    }

    pub fn write_csv<W: Write>(&self, mut out: W) -> Result<()> {
        let mut s = String::from("group_id");
        for j in 1..=self.dim() {
            s.push_str(&format!(",x{j}"));
        }
        s.push_str(",C\n");
        for g in &self.groups {
            let c = g.invariant.map(|c| format!("{c:?}")).unwrap_or_default();
            for row in g.states.rows() {
                s.push_str(&g.id.to_string());
                for v in row {
                    s.push(',');
                    s.push_str(&format!("{v:?}"));
                }
                s.push(',');
                s.push_str(&c);
                s.push('\n');
            }
        }
        out.write_all(s.as_bytes())?;
        Ok(())
    }

    /// Read rows written by [`Self::write_csv`]; `meta` supplies names and
    /// rescaling, or defaults are used when absent.
    pub fn read_csv<R: Read>(input: R, meta: Option<DatasetMeta>) -> Result<Self> {
        let mut lines = BufReader::new(input).lines();
        let header = lines.next().ok_or(Error::Parse { line: 1, msg: "empty dataset file".into() })??;
        let cols: Vec<&str> = header.split(',').map(str::trim).collect();
        if cols.len() < 3 || cols[0] != "group_id" || *cols.last().unwrap() != "C" {
            return Err(Error::Format(format!("unexpected dataset header `{header}`")));
        }
        let dim = cols.len() - 2;

        let mut order: Vec<usize> = Vec::new();
        let mut rows: BTreeMap<usize, (Vec<f64>, Option<f64>)> = BTreeMap::new();
        for (i, line) in lines.enumerate() {
            let line_no = i + 2;
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let fields: Vec<&str> = line.split(',').map(str::trim).collect();
            if fields.len() != dim + 2 {
                return Err(Error::Parse {
                    line: line_no,
                    msg: format!("expected {} fields, found {}", dim + 2, fields.len()),
                });
            }
            let parse_err = |f: &str| Error::Parse { line: line_no, msg: format!("bad number `{f}`") };
            let id: usize = fields[0].parse().map_err(|_| parse_err(fields[0]))?;
            let c = match fields[dim + 1] {
                "" => None,
                f => Some(f.parse::<f64>().map_err(|_| parse_err(f))?),
            };
            let entry = rows.entry(id).or_insert_with(|| {
                order.push(id);
                (Vec::new(), c)
            });
            if entry.1.map(f64::to_bits) != c.map(f64::to_bits) {
                return Err(Error::Parse {
                    line: line_no,
                    msg: format!("group {id} has inconsistent invariant values"),
                });
            }
            for f in &fields[1..=dim] {
                entry.0.push(f.parse::<f64>().map_err(|_| parse_err(f))?);
            }
        }

        let groups = order
            .into_iter()
            .map(|id| {
                let (data, c) = rows.remove(&id).unwrap();
                let m = data.len() / dim;
                Group { id, states: Array2::from_shape_vec((m, dim), data).unwrap(), invariant: c }
            })
            .collect();
        let meta = match meta {
            Some(m) => {
                if m.dim != dim {
                    return Err(Error::Format(format!(
                        "metadata dimension {} does not match CSV dimension {dim}",
                        m.dim
                    )));
                }
                m
            }
            None => DatasetMeta {
                name: "dataset".into(),
                dim,
                variables: (1..=dim).map(|j| format!("x{j}")).collect(),
                invariant_name: None,
                seed: None,
                rescale: vec![1.0; dim],
                drift: Vec::new(),
                notes: BTreeMap::new(),
            },
        };
        let ds = Self { meta, groups };
        ds.validate()?;
        Ok(ds)
    }

    /// Write `<stem>.csv` and `<stem>.json`.
    pub fn save(&self, stem: impl AsRef<Path>) -> Result<(PathBuf, PathBuf)> {
        let (csv, json) = sidecar_paths(stem.as_ref());
        self.write_csv(std::io::BufWriter::new(std::fs::File::create(&csv)?))?;
        std::fs::write(&json, serde_json::to_string_pretty(&self.meta)? + "\n")?;
        Ok((csv, json))
    }

    /// Load from a `.csv` path (or its stem); the JSON sidecar is used when present.
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let (csv, json) = sidecar_paths(path.as_ref());
        let meta = if json.exists() { Some(serde_json::from_str(&std::fs::read_to_string(&json)?)?) } else { None };
        Self::read_csv(std::fs::File::open(&csv)?, meta)
    }
}

fn sidecar_paths(path: &Path) -> (PathBuf, PathBuf) {
    let stem = if path.extension().is_some_and(|e| e == "csv" || e == "json") {
        path.with_extension("")
    } else {
        path.to_path_buf()
    };
    let with = |ext: &str| {
        let mut s = stem.clone().into_os_string();
        s.push(".");
        s.push(ext);
        PathBuf::from(s)
    };
    (with("csv"), with("json"))
}
