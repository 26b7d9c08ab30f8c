//! Learnable box tables: one `2n`-wide parameter row per entity, realized
//! through a [`ParamKind`] on lookup.

use std::collections::BTreeMap;
use std::io::{BufRead, Write};

use serde::{Deserialize, Serialize};

use crate::boxes::{realize, BoxTensor, ParamKind};
use crate::diff::{kernels, Tape, Tensor, Var};
use crate::error::{Error, Result};
use crate::rng::{SeededRng, Stream};

/// Ranges for uniform initialization in (min corner, side length) space.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct InitSpec {
    pub min_lo: f64,
    pub min_hi: f64,
    pub side_lo: f64,
    pub side_hi: f64,
    /// Not part of the serialized config; the trainer fills it in from its
    /// own seed.
    #[serde(skip)]
    pub seed: u64,
}

impl Default for InitSpec {
    fn default() -> Self {
        Self {
            min_lo: 0.0,
            min_hi: 0.9,
            side_lo: 0.1,
            side_hi: 0.5,
            seed: 0,
        }
    }
}

impl InitSpec {
    pub fn with_seed(self, seed: u64) -> Self {
        Self { seed, ..self }
    }

    pub fn validate(&self) -> Result<()> {
        let finite = [self.min_lo, self.min_hi, self.side_lo, self.side_hi]
            .iter()
            .all(|v| v.is_finite());
        if !finite || self.min_lo > self.min_hi || !(0.0 < self.side_lo && self.side_lo <= self.side_hi) {
            return Err(Error::invalid(format!(
                "init ranges need min_lo <= min_hi and 0 < side_lo <= side_hi, got {self:?}"
            )));
        }
        Ok(())
    }
}

/// Parameter row for one box, or `None` when `kind` cannot represent it.
pub fn invert(kind: ParamKind, min: &[f64], side: &[f64]) -> Option<Vec<f64>> {
    let n = min.len();
    let mut row = vec![0.0; 2 * n];
    for i in 0..n {
        let (z, s) = (min[i], side[i]);
        let (a, b) = match kind {
            ParamKind::Raw => (z, z + s),
            ParamKind::MinDelta => (z, kernels::softplus_inv(s)),
            ParamKind::Sigmoid => {
                if !(z > 0.0 && z + s < 1.0) {
                    return None;
                }
                (kernels::logit(z), kernels::logit(s / (1.0 - z)))
            }
            ParamKind::Tanh => {
                let frac = 2.0 * s / (1.0 - z);
                if !(z > 0.0 && z < 1.0 && frac < 1.0) {
                    return None;
                }
                ((2.0 * z - 1.0).atanh(), frac.atanh())
            }
        };
        if !(a.is_finite() && b.is_finite()) {
            return None;
        }
        row[i] = a;
        row[n + i] = b;
    }
    Some(row)
}

const MAX_INIT_ATTEMPTS: usize = 100;

/// Parameters of `num_entities` boxes of dimension `dim`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmbeddingTable {
    kind: ParamKind,
    num_entities: usize,
    dim: usize,
    /// Row-major `(num_entities, 2 * dim)`.
    params: Vec<f64>,
}

impl EmbeddingTable {
    pub fn from_params(kind: ParamKind, dim: usize, params: Vec<f64>) -> Result<Self> {
        if dim == 0 || !params.len().is_multiple_of(2 * dim) {
            return Err(Error::invalid(format!(
                "{} parameters do not form rows of width {}",
                params.len(),
                2 * dim
            )));
        }
        Ok(Self {
            kind,
            num_entities: params.len() / (2 * dim),
            dim,
            params,
        })
    }

    /// Uniform boxes: per entity, `dim` min corners then `dim` sides, drawn in
    /// entity order and inverted through `kind`. A draw that `kind` cannot
    /// represent is redrawn up to 100 times.
    pub fn init_uniform(num_entities: usize, dim: usize, kind: ParamKind, spec: &InitSpec) -> Result<Self> {
        if num_entities == 0 || dim == 0 {
            return Err(Error::invalid("init_uniform needs at least one entity and dimension"));
        }
        spec.validate()?;
        let mut rng = SeededRng::stream(spec.seed, Stream::Init, 0);
        let mut params = Vec::with_capacity(num_entities * 2 * dim);
        for entity in 0..num_entities {
            let mut row = None;
            for _ in 0..MAX_INIT_ATTEMPTS {
                let min: Vec<f64> = (0..dim).map(|_| rng.uniform(spec.min_lo, spec.min_hi)).collect();
                let side: Vec<f64> = (0..dim).map(|_| rng.uniform(spec.side_lo, spec.side_hi)).collect();
                row = invert(kind, &min, &side);
                if row.is_some() {
                    break;
                }
            }
            let row = row.ok_or_else(|| {
                Error::invalid(format!(
                    "entity {entity}: no {kind} box found in {MAX_INIT_ATTEMPTS} draws from {spec:?}"
                ))
            })?;
            params.extend(row);
        }
        Ok(Self {
            kind,
            num_entities,
            dim,
            params,
        })
    }

    pub fn kind(&self) -> ParamKind {
        self.kind
    }

    pub fn num_entities(&self) -> usize {
        self.num_entities
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn row_width(&self) -> usize {
        2 * self.dim
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    pub fn row(&self, entity: usize) -> &[f64] {
        let w = self.row_width();
        &self.params[entity * w..(entity + 1) * w]
    }

    fn check_index(&self, index: usize) -> Result<()> {
        if index >= self.num_entities {
            return Err(Error::IndexOutOfRange {
                index,
                len: self.num_entities,
            });
        }
        Ok(())
    }

    /// Gathers the rows of `indices` into a fresh gradient-carrying leaf and
    /// realizes them. Gradients reach only the gathered rows, through
    /// [`Lookup::sparse_grad`].
    pub fn lookup(&self, tape: &mut Tape, indices: &[usize]) -> Result<Lookup> {
        let w = self.row_width();
        let mut rows = Vec::with_capacity(indices.len() * w);
        for &i in indices {
            self.check_index(i)?;
            rows.extend_from_slice(self.row(i));
        }
        let leaf = tape.param(Tensor::new(rows, vec![indices.len(), w])?);
        let boxes = realize(tape, self.kind, leaf)?;
        Ok(Lookup {
            boxes,
            leaf,
            indices: indices.to_vec(),
        })
    }

    /// Realized `(z, Z)` of every entity, each row-major `(num_entities, n)`.
    pub fn realized(&self) -> Result<(Vec<f64>, Vec<f64>)> {
        let mut tape = Tape::new();
        let all: Vec<usize> = (0..self.num_entities).collect();
        let l = self.lookup(&mut tape, &all)?;
        Ok((l.boxes.min_values(&tape).to_vec(), l.boxes.max_values(&tape).to_vec()))
    }

    /// Table of Raw boxes with the given realized coordinates.
    pub fn from_realized(dim: usize, min: &[f64], max: &[f64]) -> Result<Self> {
        if dim == 0 || min.len() != max.len() || !min.len().is_multiple_of(dim) {
            return Err(Error::invalid("realized coordinates do not form rows"));
        }
        let mut params = Vec::with_capacity(2 * min.len());
        for (lo, hi) in min.chunks(dim).zip(max.chunks(dim)) {
            params.extend_from_slice(lo);
            params.extend_from_slice(hi);
        }
        Self::from_params(ParamKind::Raw, dim, params)
    }

    /// One line per entity: `id`, then `n` min coordinates, then `n` max
    /// coordinates, all tab separated.
    pub fn write_boxes_tsv<W: Write>(&self, mut out: W) -> Result<()> {
        let (min, max) = self.realized()?;
        let n = self.dim;
        let io = |e| Error::io("<boxes tsv>", e);
        for e in 0..self.num_entities {
            let mut line = e.to_string();
            for v in min[e * n..(e + 1) * n].iter().chain(&max[e * n..(e + 1) * n]) {
                line.push('\t');
                line.push_str(&v.to_string());
            }
            line.push('\n');
            out.write_all(line.as_bytes()).map_err(io)?;
        }
        Ok(())
    }

    /// Reads the format written by [`EmbeddingTable::write_boxes_tsv`] into
    /// a Raw table. Ids must be dense and in order.
    pub fn read_boxes_tsv<R: BufRead>(input: R, source: &str) -> Result<Self> {
        let mut min = Vec::new();
        let mut max = Vec::new();
        let mut dim = None;
        for (lineno, line) in input.lines().enumerate() {
            let line = line.map_err(|e| Error::io(source, e))?;
            let parse_err = |msg: String| Error::Parse {
                path: source.to_string(),
                line: lineno + 1,
                msg,
            };
            if line.trim().is_empty() {
                continue;
            }
            let fields: Vec<&str> = line.split('\t').collect();
            if fields.len() < 3 || fields.len().is_multiple_of(2) {
                return Err(parse_err(format!(
                    "expected id and 2n coordinates, got {} fields",
                    fields.len()
                )));
            }
            let n = (fields.len() - 1) / 2;
            if *dim.get_or_insert(n) != n {
                return Err(parse_err("inconsistent dimension".into()));
            }
            let id: usize = fields[0]
                .parse()
                .map_err(|_| parse_err(format!("bad id `{}`", fields[0])))?;
            if id != min.len() / n {
                return Err(parse_err(format!("expected id {}, got {id}", min.len() / n)));
            }
            for (k, f) in fields[1..].iter().enumerate() {
                let v: f64 = f.parse().map_err(|_| parse_err(format!("bad number `{f}`")))?;
                if k < n {
                    min.push(v);
                } else {
                    max.push(v);
                }
            }
        }
        let dim = dim.ok_or_else(|| Error::invalid(format!("{source}: no boxes")))?;
        Self::from_realized(dim, &min, &max)
    }
}

/// Boxes gathered from a table, with the leaf their gradients land on.
#[derive(Debug, Clone)]
pub struct Lookup {
    pub boxes: BoxTensor,
    pub leaf: Var,
    pub indices: Vec<usize>,
}

impl Lookup {
    /// Per-entity gradient rows after `backward`, duplicates summed.
    pub fn sparse_grad(&self, tape: &Tape) -> Result<SparseGrad> {
        match tape.grad(self.leaf) {
            Some(g) => accumulate_sparse_grad(&self.indices, g.data(), g.shape().last().unwrap_or(0)),
            None => Ok(SparseGrad::default()),
        }
    }
}

/// Gradient rows keyed by entity id.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct SparseGrad(BTreeMap<usize, Vec<f64>>);

impl SparseGrad {
    pub fn get(&self, entity: usize) -> Option<&[f64]> {
        self.0.get(&entity).map(Vec::as_slice)
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    /// Entries in increasing entity order.
    pub fn iter(&self) -> impl Iterator<Item = (usize, &[f64])> {
        self.0.iter().map(|(&k, v)| (k, v.as_slice()))
    }

    pub fn add_row(&mut self, entity: usize, row: &[f64]) {
        match self.0.get_mut(&entity) {
            Some(acc) => acc.iter_mut().zip(row).for_each(|(a, b)| *a += b),
            None => {
                self.0.insert(entity, row.to_vec());
            }
        }
    }

    pub fn merge(&mut self, other: &SparseGrad) {
        for (k, row) in other.iter() {
            self.add_row(k, row);
        }
    }
}

/// Sums `row_grads` (row-major, `width` wide) into one row per distinct index.
pub fn accumulate_sparse_grad(indices: &[usize], row_grads: &[f64], width: usize) -> Result<SparseGrad> {
    if row_grads.len() != indices.len() * width {
        return Err(Error::invalid(format!(
            "{} gradient values for {} rows of width {width}",
            row_grads.len(),
            indices.len()
        )));
    }
    let mut out = SparseGrad::default();
    for (k, &i) in indices.iter().enumerate() {
        out.add_row(i, &row_grads[k * width..(k + 1) * width]);
    }
    Ok(out)
}
