//! Named parameter tensors and their gradients.

use std::collections::{BTreeMap, HashMap};

use rand::Rng;
use rand_distr::{Distribution, Normal};

use super::mat::Mat;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ParamId(pub usize);

/// Ordered, named parameter store. Registration order is the checkpoint order.
#[derive(Debug, Clone, Default)]
pub struct ParamSet {
    names: Vec<String>,
    values: Vec<Mat>,
    index: HashMap<String, usize>,
}

impl ParamSet {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, name: impl Into<String>, value: Mat) -> ParamId {
        let name = name.into();
        assert!(!self.index.contains_key(&name), "parameter `{name}` registered twice");
        let id = self.values.len();
        self.index.insert(name.clone(), id);
        self.names.push(name);
        self.values.push(value);
        ParamId(id)
    }

    pub fn normal<R: Rng>(
        &mut self,
        name: impl Into<String>,
        rows: usize,
        cols: usize,
        std: f64,
        rng: &mut R,
    ) -> ParamId {
        let dist = Normal::new(0.0, std).expect("std must be finite and positive");
        let data = (0..rows * cols).map(|_| dist.sample(rng)).collect();
        self.add(name, Mat::from_vec(rows, cols, data))
    }

    pub fn constant(&mut self, name: impl Into<String>, rows: usize, cols: usize, v: f64) -> ParamId {
        self.add(name, Mat::from_vec(rows, cols, vec![v; rows * cols]))
    }

    pub fn get(&self, id: ParamId) -> &Mat {
        &self.values[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Mat {
        &mut self.values[id.0]
    }

    pub fn id(&self, name: &str) -> Option<ParamId> {
        self.index.get(name).map(|&i| ParamId(i))
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.names[id.0]
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.values.len()).map(ParamId)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Mat)> {
        self.names.iter().map(String::as_str).zip(self.values.iter())
    }

    /// Total number of scalar parameters.
    pub fn scalar_count(&self) -> usize {
        self.values.iter().map(Mat::len).sum()
    }

    /// Scalar count of parameters whose name starts with `prefix`.
    pub fn scalar_count_with_prefix(&self, prefix: &str) -> usize {
        self.iter()
            .filter(|(n, _)| n.starts_with(prefix))
            .map(|(_, m)| m.len())
            .sum()
    }
}

/// Gradient for one parameter: dense, or sparse rows for embedding lookups.
#[derive(Debug, Clone)]
pub enum Grad {
    Dense(Vec<f64>),
    Rows(BTreeMap<usize, Vec<f64>>),
}

/// Gradients keyed by parameter id.
#[derive(Debug, Clone, Default)]
pub struct Grads {
    slots: Vec<Option<Grad>>,
    shapes: Vec<(usize, usize)>,
}

impl Grads {
    pub fn for_params(params: &ParamSet) -> Self {
        Self {
            slots: vec![None; params.len()],
            shapes: params.values.iter().map(Mat::shape).collect(),
        }
    }

    pub fn accumulate_dense(&mut self, id: ParamId, g: &[f64]) {
        let (r, c) = self.shapes[id.0];
        debug_assert_eq!(g.len(), r * c);
        match &mut self.slots[id.0] {
            slot @ None => *slot = Some(Grad::Dense(g.to_vec())),
            Some(Grad::Dense(d)) => add_into(d, g),
            Some(Grad::Rows(rows)) => {
                let mut d = g.to_vec();
                for (&row, v) in rows.iter() {
                    add_into(&mut d[row * c..(row + 1) * c], v);
                }
                self.slots[id.0] = Some(Grad::Dense(d));
            }
        }
    }

    pub fn accumulate_row(&mut self, id: ParamId, row: usize, g: &[f64]) {
        let (_, c) = self.shapes[id.0];
        match &mut self.slots[id.0] {
            slot @ None => {
                let mut m = BTreeMap::new();
                m.insert(row, g.to_vec());
                *slot = Some(Grad::Rows(m));
            }
            Some(Grad::Rows(rows)) => match rows.get_mut(&row) {
                Some(v) => add_into(v, g),
                None => {
                    rows.insert(row, g.to_vec());
                }
            },
            Some(Grad::Dense(d)) => add_into(&mut d[row * c..(row + 1) * c], g),
        }
    }

    /// Adds `other` into `self`.
    pub fn merge(&mut self, other: &Grads) {
        for (i, slot) in other.slots.iter().enumerate() {
            match slot {
                None => {}
                Some(Grad::Dense(d)) => self.accumulate_dense(ParamId(i), d),
                Some(Grad::Rows(rows)) => {
                    for (&r, v) in rows {
                        self.accumulate_row(ParamId(i), r, v);
                    }
                }
            }
        }
    }

    pub fn scale(&mut self, f: f64) {
        for slot in self.slots.iter_mut().flatten() {
            match slot {
                Grad::Dense(d) => d.iter_mut().for_each(|v| *v *= f),
                Grad::Rows(rows) => rows.values_mut().for_each(|v| v.iter_mut().for_each(|x| *x *= f)),
            }
        }
    }

    pub fn get(&self, id: ParamId) -> Option<&Grad> {
        self.slots[id.0].as_ref()
    }

    /// Dense copy of a gradient (zeros when the parameter got none).
    pub fn dense(&self, id: ParamId) -> Vec<f64> {
        let (r, c) = self.shapes[id.0];
        match &self.slots[id.0] {
            None => vec![0.0; r * c],
            Some(Grad::Dense(d)) => d.clone(),
            Some(Grad::Rows(rows)) => {
                let mut d = vec![0.0; r * c];
                for (&row, v) in rows {
                    add_into(&mut d[row * c..(row + 1) * c], v);
                }
                d
            }
        }
    }

    pub fn has_non_finite(&self) -> bool {
        self.slots.iter().flatten().any(|g| match g {
            Grad::Dense(d) => d.iter().any(|v| !v.is_finite()),
            Grad::Rows(rows) => rows.values().flatten().any(|v| !v.is_finite()),
        })
    }
}

fn add_into(dst: &mut [f64], src: &[f64]) {
    for (d, s) in dst.iter_mut().zip(src) {
        *d += s;
    }
}
