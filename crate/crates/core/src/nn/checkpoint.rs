//! Plain-text parameter checkpoints.
//!
//! ```text
//! conservnet-checkpoint 1
//! dims 4 320 320 320 320 1
//! seed 7
//! step_count 1200
//! weight 0 4 320
//! <4 lines of 320 values>
//! bias 0 320
//! <1 line>
//! ...
//! ```
//!
//! Blocks appear in the order weight, bias, adam_m_weight, adam_m_bias,
//! adam_v_weight, adam_v_bias for every layer. Values are written with the
//! shortest representation that parses back to the same `f64`.

use std::fmt::Write as _;
use std::io::{BufRead, BufReader, Read, Write};
use std::path::Path;

use ndarray::{Array1, Array2};

use super::MlpParams;
use crate::error::{Error, Result};

const MAGIC: &str = "conservnet-checkpoint";
const VERSION: u32 = 1;

pub fn write_checkpoint<W: Write>(params: &MlpParams, mut out: W) -> Result<()> {
    let mut s = String::new();
    writeln!(s, "{MAGIC} {VERSION}").unwrap();
    let dims: Vec<String> = params.dims.iter().map(|d| d.to_string()).collect();
    writeln!(s, "dims {}", dims.join(" ")).unwrap();
    writeln!(s, "seed {}", params.seed).unwrap();
    writeln!(s, "step_count {}", params.step_count).unwrap();
    let sets = [
        ("", &params.weights, &params.biases),
        ("adam_m_", &params.adam_m.weights, &params.adam_m.biases),
        ("adam_v_", &params.adam_v.weights, &params.adam_v.biases),
    ];
    for l in 0..params.num_layers() {
        for (prefix, ws, bs) in &sets {
            let w = &ws[l];
            writeln!(s, "{prefix}weight {l} {} {}", w.nrows(), w.ncols()).unwrap();
            for row in w.rows() {
                push_row(&mut s, row.iter());
            }
            writeln!(s, "{prefix}bias {l} {}", bs[l].len()).unwrap();
            push_row(&mut s, bs[l].iter());
        }
    }
    out.write_all(s.as_bytes())?;
    Ok(())
}

fn push_row<'a>(s: &mut String, values: impl Iterator<Item = &'a f64>) {
    let mut first = true;
    for v in values {
        if !first {
            s.push(' ');
        }
        write!(s, "{v:?}").unwrap();
        first = false;
    }
    s.push('\n');
}

struct Lines<R> {
    inner: std::io::Lines<BufReader<R>>,
    line_no: usize,
}

impl<R: Read> Lines<R> {
    fn next(&mut self) -> Result<String> {
        self.line_no += 1;
        match self.inner.next() {
            Some(line) => Ok(line?),
            None => Err(Error::Parse { line: self.line_no, msg: "unexpected end of checkpoint".into() }),
        }
    }

    fn err(&self, msg: impl Into<String>) -> Error {
        Error::Parse { line: self.line_no, msg: msg.into() }
    }

    fn keyed(&mut self, key: &str) -> Result<Vec<String>> {
        let line = self.next()?;
        let mut parts = line.split_whitespace();
        if parts.next() != Some(key) {
            return Err(self.err(format!("expected `{key}`")));
        }
        Ok(parts.map(str::to_owned).collect())
    }

    fn numbers<T: std::str::FromStr>(&mut self, fields: &[String]) -> Result<Vec<T>> {
        fields.iter().map(|f| f.parse::<T>().map_err(|_| self.err(format!("bad number `{f}`")))).collect()
    }

    fn row(&mut self, len: usize) -> Result<Vec<f64>> {
        let line = self.next()?;
        let fields: Vec<String> = line.split_whitespace().map(str::to_owned).collect();
        if fields.len() != len {
            return Err(self.err(format!("expected {len} values, found {}", fields.len())));
        }
        self.numbers(&fields)
    }

    fn matrix(&mut self, key: &str, layer: usize, shape: (usize, usize)) -> Result<Array2<f64>> {
        let header = self.keyed(key)?;
        let nums: Vec<usize> = self.numbers(&header)?;
        if nums != [layer, shape.0, shape.1] {
            return Err(self.err(format!("{key} header {nums:?} does not match dims")));
        }
        let mut data = Vec::with_capacity(shape.0 * shape.1);
        for _ in 0..shape.0 {
            data.extend(self.row(shape.1)?);
        }
        Ok(Array2::from_shape_vec(shape, data).expect("shape checked"))
    }

    fn vector(&mut self, key: &str, layer: usize, len: usize) -> Result<Array1<f64>> {
        let header = self.keyed(key)?;
        let nums: Vec<usize> = self.numbers(&header)?;
        if nums != [layer, len] {
            return Err(self.err(format!("{key} header {nums:?} does not match dims")));
        }
        Ok(Array1::from(self.row(len)?))
    }
}

pub fn read_checkpoint<R: Read>(input: R) -> Result<MlpParams> {
    let mut lines = Lines { inner: BufReader::new(input).lines(), line_no: 0 };
    let header = lines.next()?;
    let mut parts = header.split_whitespace();
    if parts.next() != Some(MAGIC) {
        return Err(Error::Format("not a conservnet checkpoint".into()));
    }
    match parts.next().and_then(|v| v.parse::<u32>().ok()) {
        Some(VERSION) => {}
        other => return Err(Error::Format(format!("unsupported checkpoint version {other:?}"))),
    }
    let dims_fields = lines.keyed("dims")?;
    let dims: Vec<usize> = lines.numbers(&dims_fields)?;
    let seed_fields = lines.keyed("seed")?;
    let seed: u64 = *lines.numbers(&seed_fields)?.first().ok_or_else(|| lines.err("missing seed"))?;
    let step_fields = lines.keyed("step_count")?;
    let step_count: u64 = *lines.numbers(&step_fields)?.first().ok_or_else(|| lines.err("missing step_count"))?;

    let mut params = MlpParams::zeros(&dims)?;
    params.seed = seed;
    params.step_count = step_count;
    for l in 0..params.num_layers() {
        let shape = (dims[l], dims[l + 1]);
        params.weights[l] = lines.matrix("weight", l, shape)?;
        params.biases[l] = lines.vector("bias", l, dims[l + 1])?;
        for (prefix, set) in [("adam_m_", &mut params.adam_m), ("adam_v_", &mut params.adam_v)] {
            set.weights[l] = lines.matrix(&format!("{prefix}weight"), l, shape)?;
            set.biases[l] = lines.vector(&format!("{prefix}bias"), l, dims[l + 1])?;
        }
    }
    Ok(params)
}

pub fn save_checkpoint(params: &MlpParams, path: impl AsRef<Path>) -> Result<()> {
    let file = std::fs::File::create(path)?;
    write_checkpoint(params, std::io::BufWriter::new(file))
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<MlpParams> {
    read_checkpoint(std::fs::File::open(path)?)
}
