//! Reverse-mode differentiation over dense matrices.
//!
//! A [`Tape`] records every operation of one forward pass. Parameter leaves
//! borrow from a [`ParamSet`] instead of copying, and `backward` writes
//! parameter gradients into a [`Grads`].

use super::mat::{gemm, Mat};
use super::params::{Grads, ParamId, ParamSet};

const LN_EPS: f64 = 1e-5;
const GELU_C: f64 = 0.044_715;
// sqrt(2 / pi)
const GELU_S: f64 = 0.797_884_560_802_865_4;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Var(usize);

#[derive(Debug)]
enum Op {
    Leaf,
    Param(ParamId),
    MatMul {
        a: Var,
        b: Var,
        ta: bool,
        tb: bool,
    },
    Add(Var, Var),
    AddRow(Var, Var),
    Sub(Var, Var),
    Scale(Var, f64),
    Tanh(Var),
    Gelu(Var),
    LayerNorm {
        x: Var,
        gamma: Var,
        beta: Var,
        xhat: Vec<f64>,
        inv_std: Vec<f64>,
    },
    Softmax {
        x: Var,
    },
    SliceCols {
        x: Var,
        start: usize,
    },
    SliceRows {
        x: Var,
        start: usize,
    },
    ConcatCols(Vec<Var>),
    MeanRows(Var),
    Gather {
        table: Var,
        ids: Vec<usize>,
    },
    PairAdd(Var, Var),
    PairSub(Var, Var),
    PairMul(Var, Var),
    Reshape(Var),
    CrossEntropy {
        logits: Var,
        label: usize,
        weight: f64,
        probs: Vec<f64>,
    },
    WeightedSum {
        x: Var,
        weights: Mat,
    },
}

struct Node {
    value: Option<Mat>,
    op: Op,
}

/// One forward pass worth of recorded operations.
pub struct Tape<'p> {
    params: &'p ParamSet,
    nodes: Vec<Node>,
}

impl<'p> Tape<'p> {
    pub fn new(params: &'p ParamSet) -> Self {
        Self {
            params,
            nodes: Vec::with_capacity(256),
        }
    }

    pub fn params(&self) -> &'p ParamSet {
        self.params
    }

    fn push(&mut self, value: Mat, op: Op) -> Var {
        self.nodes.push(Node { value: Some(value), op });
        Var(self.nodes.len() - 1)
    }

    pub fn value(&self, v: Var) -> &Mat {
        match &self.nodes[v.0].value {
            Some(m) => m,
            None => match self.nodes[v.0].op {
                Op::Param(id) => self.params.get(id),
                _ => unreachable!("only parameter leaves borrow their value"),
            },
        }
    }

    pub fn shape(&self, v: Var) -> (usize, usize) {
        self.value(v).shape()
    }

    pub fn node_count(&self) -> usize {
        self.nodes.len()
    }

    pub fn leaf(&mut self, m: Mat) -> Var {
        self.push(m, Op::Leaf)
    }

    pub fn param(&mut self, id: ParamId) -> Var {
        self.nodes.push(Node {
            value: None,
            op: Op::Param(id),
        });
        Var(self.nodes.len() - 1)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Var {
        self.matmul_t(a, false, b, false)
    }

    /// `op(a) * op(b)`, where `op` transposes when the flag is set.
    pub fn matmul_t(&mut self, a: Var, ta: bool, b: Var, tb: bool) -> Var {
        let (am, bm) = (self.value(a), self.value(b));
        let m = if ta { am.cols } else { am.rows };
        let n = if tb { bm.rows } else { bm.cols };
        let mut out = Mat::zeros(m, n);
        gemm(
            1.0,
            &am.data,
            am.shape(),
            ta,
            &bm.data,
            bm.shape(),
            tb,
            0.0,
            &mut out.data,
        );
        self.push(out, Op::MatMul { a, b, ta, tb })
    }

    fn zip_with(&mut self, a: Var, b: Var, f: impl Fn(f64, f64) -> f64, op: Op) -> Var {
        let (am, bm) = (self.value(a), self.value(b));
        assert_eq!(am.shape(), bm.shape(), "elementwise shape mismatch");
        let data = am.data.iter().zip(&bm.data).map(|(x, y)| f(*x, *y)).collect();
        let out = Mat::from_vec(am.rows, am.cols, data);
        self.push(out, op)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        self.zip_with(a, b, |x, y| x + y, Op::Add(a, b))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Var {
        self.zip_with(a, b, |x, y| x - y, Op::Sub(a, b))
    }

    /// Adds a `1 x cols` row to every row of `a`.
    pub fn add_row(&mut self, a: Var, row: Var) -> Var {
        let (am, rm) = (self.value(a), self.value(row));
        assert_eq!(rm.rows, 1);
        assert_eq!(am.cols, rm.cols, "bias width mismatch");
        let mut out = am.clone();
        for r in 0..out.rows {
            for (o, b) in out.row_mut(r).iter_mut().zip(&rm.data) {
                *o += b;
            }
        }
        self.push(out, Op::AddRow(a, row))
    }

    pub fn scale(&mut self, a: Var, f: f64) -> Var {
        let mut out = self.value(a).clone();
        out.data.iter_mut().for_each(|v| *v *= f);
        self.push(out, Op::Scale(a, f))
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        let am = self.value(a);
        let out = Mat::from_vec(am.rows, am.cols, am.data.iter().map(|&v| tanh(v)).collect());
        self.push(out, Op::Tanh(a))
    }

    pub fn gelu(&mut self, a: Var) -> Var {
        let mut out = self.value(a).clone();
        out.data.iter_mut().for_each(|v| {
            let x = *v;
            *v = 0.5 * x * (1.0 + tanh(GELU_S * (x + GELU_C * x * x * x)));
        });
        self.push(out, Op::Gelu(a))
    }

    /// Row-wise layer normalisation with a learned gain and bias.
    pub fn layer_norm(&mut self, x: Var, gamma: Var, beta: Var) -> Var {
        let xm = self.value(x);
        let (g, b) = (self.value(gamma), self.value(beta));
        let (rows, cols) = xm.shape();
        let mut out = Mat::zeros(rows, cols);
        let mut xhat = vec![0.0; rows * cols];
        let mut inv_std = vec![0.0; rows];
        for r in 0..rows {
            let row = xm.row(r);
            let mean = row.iter().sum::<f64>() / cols as f64;
            let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / cols as f64;
            let inv = 1.0 / (var + LN_EPS).sqrt();
            inv_std[r] = inv;
            for c in 0..cols {
                let h = (row[c] - mean) * inv;
                xhat[r * cols + c] = h;
                out.data[r * cols + c] = h * g.data[c] + b.data[c];
            }
        }
        self.push(
            out,
            Op::LayerNorm {
                x,
                gamma,
                beta,
                xhat,
                inv_std,
            },
        )
    }

    /// Row-wise softmax. Columns with `keep[c] == false` get probability 0.
    pub fn softmax_rows(&mut self, x: Var, keep: Option<&[bool]>) -> Var {
        let xm = self.value(x);
        let (rows, cols) = xm.shape();
        if let Some(k) = keep {
            assert_eq!(k.len(), cols, "mask width mismatch");
        }
        let kept = |c: usize| keep.is_none_or(|k| k[c]);
        let mut out = Mat::zeros(rows, cols);
        for r in 0..rows {
            let row = xm.row(r);
            let max = (0..cols)
                .filter(|&c| kept(c))
                .map(|c| row[c])
                .fold(f64::NEG_INFINITY, f64::max);
            let o = out.row_mut(r);
            let mut sum = 0.0;
            for c in 0..cols {
                if kept(c) {
                    o[c] = (row[c] - max).exp();
                    sum += o[c];
                }
            }
            if sum > 0.0 {
                o.iter_mut().for_each(|v| *v /= sum);
            }
        }
        self.push(out, Op::Softmax { x })
    }

    pub fn slice_cols(&mut self, x: Var, start: usize, end: usize) -> Var {
        let xm = self.value(x);
        assert!(start <= end && end <= xm.cols);
        let mut out = Mat::zeros(xm.rows, end - start);
        for r in 0..xm.rows {
            out.row_mut(r).copy_from_slice(&xm.row(r)[start..end]);
        }
        self.push(out, Op::SliceCols { x, start })
    }

    pub fn slice_rows(&mut self, x: Var, start: usize, end: usize) -> Var {
        let xm = self.value(x);
        assert!(start <= end && end <= xm.rows);
        let out = Mat::from_vec(end - start, xm.cols, xm.data[start * xm.cols..end * xm.cols].to_vec());
        self.push(out, Op::SliceRows { x, start })
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Var {
        let rows = self.value(parts[0]).rows;
        let cols: usize = parts.iter().map(|&p| self.value(p).cols).sum();
        let mut out = Mat::zeros(rows, cols);
        let mut off = 0;
        for &p in parts {
            let pm = self.value(p);
            assert_eq!(pm.rows, rows, "concat_cols row mismatch");
            for r in 0..rows {
                out.row_mut(r)[off..off + pm.cols].copy_from_slice(pm.row(r));
            }
            off += pm.cols;
        }
        self.push(out, Op::ConcatCols(parts.to_vec()))
    }

    /// Mean over rows, giving a `1 x cols` row.
    pub fn mean_rows(&mut self, x: Var) -> Var {
        let xm = self.value(x);
        assert!(xm.rows > 0, "mean over zero rows");
        let mut out = Mat::zeros(1, xm.cols);
        for r in 0..xm.rows {
            for (o, v) in out.data.iter_mut().zip(xm.row(r)) {
                *o += v;
            }
        }
        let n = xm.rows as f64;
        out.data.iter_mut().for_each(|v| *v /= n);
        self.push(out, Op::MeanRows(x))
    }

    /// Selects rows of `table` by index.
    pub fn gather(&mut self, table: Var, ids: &[usize]) -> Var {
        let tm = self.value(table);
        let mut out = Mat::zeros(ids.len(), tm.cols);
        for (r, &id) in ids.iter().enumerate() {
            out.row_mut(r).copy_from_slice(tm.row(id));
        }
        self.push(
            out,
            Op::Gather {
                table,
                ids: ids.to_vec(),
            },
        )
    }

    fn pairwise(&mut self, a: Var, b: Var, f: impl Fn(f64, f64) -> f64, op: Op) -> Var {
        let (am, bm) = (self.value(a), self.value(b));
        assert_eq!(am.cols, bm.cols, "pairwise width mismatch");
        let (m, n, h) = (am.rows, bm.rows, am.cols);
        let mut out = Mat::zeros(m * n, h);
        for i in 0..m {
            let ai = am.row(i);
            for j in 0..n {
                let bj = bm.row(j);
                let o = out.row_mut(i * n + j);
                for k in 0..h {
                    o[k] = f(ai[k], bj[k]);
                }
            }
        }
        self.push(out, op)
    }

    /// Row `i * n + j` is `a[i] + b[j]`.
    pub fn pair_add(&mut self, a: Var, b: Var) -> Var {
        self.pairwise(a, b, |x, y| x + y, Op::PairAdd(a, b))
    }

    /// Row `i * n + j` is `a[i] - b[j]`.
    pub fn pair_sub(&mut self, a: Var, b: Var) -> Var {
        self.pairwise(a, b, |x, y| x - y, Op::PairSub(a, b))
    }

    /// Row `i * n + j` is `a[i] * b[j]` elementwise.
    pub fn pair_mul(&mut self, a: Var, b: Var) -> Var {
        self.pairwise(a, b, |x, y| x * y, Op::PairMul(a, b))
    }

    pub fn reshape(&mut self, x: Var, rows: usize, cols: usize) -> Var {
        let xm = self.value(x);
        assert_eq!(xm.len(), rows * cols, "reshape changes element count");
        let out = Mat::from_vec(rows, cols, xm.data.clone());
        self.push(out, Op::Reshape(x))
    }

    /// Weighted negative log-likelihood of `label` under `softmax(logits)`.
    pub fn cross_entropy(&mut self, logits: Var, label: usize, weight: f64) -> Var {
        let lm = self.value(logits);
        assert_eq!(lm.rows, 1);
        let probs = softmax(&lm.data);
        let loss = -weight * probs[label].max(f64::MIN_POSITIVE).ln();
        self.push(
            Mat::from_vec(1, 1, vec![loss]),
            Op::CrossEntropy {
                logits,
                label,
                weight,
                probs,
            },
        )
    }

    /// `sum(x * weights)` as a `1 x 1` scalar.
    pub fn weighted_sum(&mut self, x: Var, weights: Mat) -> Var {
        let xm = self.value(x);
        assert_eq!(xm.shape(), weights.shape());
        let s = xm.data.iter().zip(&weights.data).map(|(a, b)| a * b).sum();
        self.push(Mat::from_vec(1, 1, vec![s]), Op::WeightedSum { x, weights })
    }

    /// Back-propagates from the scalar `out` and accumulates into `grads`.
    pub fn backward(&self, out: Var, grads: &mut Grads) {
        assert_eq!(self.shape(out), (1, 1), "backward needs a scalar output");
        let mut g: Vec<Option<Mat>> = (0..=out.0).map(|_| None).collect();
        g[out.0] = Some(Mat::from_vec(1, 1, vec![1.0]));
        for idx in (0..=out.0).rev() {
            let Some(dy) = g[idx].take() else { continue };
            match &self.nodes[idx].op {
                Op::Leaf => {}
                Op::Param(id) => grads.accumulate_dense(*id, &dy.data),
                Op::MatMul { a, b, ta, tb } => {
                    let (am, bm) = (self.value(*a), self.value(*b));
                    let da = slot(&mut g, *a, am.shape());
                    if *ta {
                        gemm(
                            1.0,
                            &bm.data,
                            bm.shape(),
                            *tb,
                            &dy.data,
                            dy.shape(),
                            true,
                            1.0,
                            &mut da.data,
                        );
                    } else {
                        gemm(
                            1.0,
                            &dy.data,
                            dy.shape(),
                            false,
                            &bm.data,
                            bm.shape(),
                            !*tb,
                            1.0,
                            &mut da.data,
                        );
                    }
                    let db = slot(&mut g, *b, bm.shape());
                    if *tb {
                        gemm(
                            1.0,
                            &dy.data,
                            dy.shape(),
                            true,
                            &am.data,
                            am.shape(),
                            *ta,
                            1.0,
                            &mut db.data,
                        );
                    } else {
                        gemm(
                            1.0,
                            &am.data,
                            am.shape(),
                            !*ta,
                            &dy.data,
                            dy.shape(),
                            false,
                            1.0,
                            &mut db.data,
                        );
                    }
                }
                Op::Add(a, b) => {
                    axpy(slot(&mut g, *a, dy.shape()), 1.0, &dy);
                    axpy(slot(&mut g, *b, dy.shape()), 1.0, &dy);
                }
                Op::Sub(a, b) => {
                    axpy(slot(&mut g, *a, dy.shape()), 1.0, &dy);
                    axpy(slot(&mut g, *b, dy.shape()), -1.0, &dy);
                }
                Op::AddRow(a, row) => {
                    axpy(slot(&mut g, *a, dy.shape()), 1.0, &dy);
                    let dr = slot(&mut g, *row, (1, dy.cols));
                    for r in 0..dy.rows {
                        for (d, v) in dr.data.iter_mut().zip(dy.row(r)) {
                            *d += v;
                        }
                    }
                }
                Op::Scale(a, f) => axpy(slot(&mut g, *a, dy.shape()), *f, &dy),
                Op::Tanh(a) => {
                    let y = self.nodes[idx].value.as_ref().unwrap();
                    let da = slot(&mut g, *a, dy.shape());
                    for ((d, gy), yv) in da.data.iter_mut().zip(&dy.data).zip(&y.data) {
                        *d += gy * (1.0 - yv * yv);
                    }
                }
                Op::Gelu(a) => {
                    let x = self.value(*a).data.clone();
                    let da = slot(&mut g, *a, dy.shape());
                    for ((d, gy), xv) in da.data.iter_mut().zip(&dy.data).zip(&x) {
                        let u = GELU_S * (xv + GELU_C * xv * xv * xv);
                        let t = tanh(u);
                        let du = GELU_S * (1.0 + 3.0 * GELU_C * xv * xv);
                        *d += gy * (0.5 * (1.0 + t) + 0.5 * xv * (1.0 - t * t) * du);
                    }
                }
                Op::LayerNorm {
                    x,
                    gamma,
                    beta,
                    xhat,
                    inv_std,
                } => {
                    let (rows, cols) = dy.shape();
                    let gm = self.value(*gamma).data.clone();
                    let mut dgamma = vec![0.0; cols];
                    let mut dbeta = vec![0.0; cols];
                    let mut dx = Mat::zeros(rows, cols);
                    for r in 0..rows {
                        let dyr = dy.row(r);
                        let xh = &xhat[r * cols..(r + 1) * cols];
                        let mut mean_dxh = 0.0;
                        let mut mean_dxh_xh = 0.0;
                        for c in 0..cols {
                            dgamma[c] += dyr[c] * xh[c];
                            dbeta[c] += dyr[c];
                            let dxh = dyr[c] * gm[c];
                            mean_dxh += dxh;
                            mean_dxh_xh += dxh * xh[c];
                        }
                        mean_dxh /= cols as f64;
                        mean_dxh_xh /= cols as f64;
                        let o = dx.row_mut(r);
                        for c in 0..cols {
                            let dxh = dyr[c] * gm[c];
                            o[c] = inv_std[r] * (dxh - mean_dxh - xh[c] * mean_dxh_xh);
                        }
                    }
                    axpy(slot(&mut g, *x, (rows, cols)), 1.0, &dx);
                    axpy(slot(&mut g, *gamma, (1, cols)), 1.0, &Mat::from_vec(1, cols, dgamma));
                    axpy(slot(&mut g, *beta, (1, cols)), 1.0, &Mat::from_vec(1, cols, dbeta));
                }
                Op::Softmax { x } => {
                    let y = self.nodes[idx].value.as_ref().unwrap();
                    let dx = slot(&mut g, *x, dy.shape());
                    for r in 0..dy.rows {
                        let (yr, dyr) = (y.row(r), dy.row(r));
                        let dot: f64 = yr.iter().zip(dyr).map(|(a, b)| a * b).sum();
                        for (c, d) in dx.row_mut(r).iter_mut().enumerate() {
                            *d += yr[c] * (dyr[c] - dot);
                        }
                    }
                }
                Op::SliceCols { x, start } => {
                    let dx = slot(&mut g, *x, self.shape(*x));
                    for r in 0..dy.rows {
                        for (d, v) in dx.row_mut(r)[*start..*start + dy.cols].iter_mut().zip(dy.row(r)) {
                            *d += v;
                        }
                    }
                }
                Op::SliceRows { x, start } => {
                    let dx = slot(&mut g, *x, self.shape(*x));
                    let off = start * dy.cols;
                    for (d, v) in dx.data[off..off + dy.len()].iter_mut().zip(&dy.data) {
                        *d += v;
                    }
                }
                Op::ConcatCols(parts) => {
                    let mut off = 0;
                    for &p in parts {
                        let shape = self.shape(p);
                        let dp = slot(&mut g, p, shape);
                        for r in 0..dy.rows {
                            for (d, v) in dp.row_mut(r).iter_mut().zip(&dy.row(r)[off..off + shape.1]) {
                                *d += v;
                            }
                        }
                        off += shape.1;
                    }
                }
                Op::MeanRows(x) => {
                    let shape = self.shape(*x);
                    let n = shape.0 as f64;
                    let dx = slot(&mut g, *x, shape);
                    for r in 0..shape.0 {
                        for (d, v) in dx.row_mut(r).iter_mut().zip(&dy.data) {
                            *d += v / n;
                        }
                    }
                }
                Op::Gather { table, ids } => {
                    if let Op::Param(pid) = self.nodes[table.0].op {
                        for (r, &id) in ids.iter().enumerate() {
                            grads.accumulate_row(pid, id, dy.row(r));
                        }
                    } else {
                        let shape = self.shape(*table);
                        let dt = slot(&mut g, *table, shape);
                        for (r, &id) in ids.iter().enumerate() {
                            for (d, v) in dt.row_mut(id).iter_mut().zip(dy.row(r)) {
                                *d += v;
                            }
                        }
                    }
                }
                Op::PairAdd(a, b) | Op::PairSub(a, b) | Op::PairMul(a, b) => {
                    let (am, bm) = (self.value(*a), self.value(*b));
                    let (m, n, h) = (am.rows, bm.rows, am.cols);
                    let mut da = Mat::zeros(m, h);
                    let mut db = Mat::zeros(n, h);
                    let kind = &self.nodes[idx].op;
                    for i in 0..m {
                        for j in 0..n {
                            let d = dy.row(i * n + j);
                            match kind {
                                Op::PairMul(..) => {
                                    let (ai, bj) = (am.row(i), bm.row(j));
                                    for k in 0..h {
                                        da.data[i * h + k] += d[k] * bj[k];
                                        db.data[j * h + k] += d[k] * ai[k];
                                    }
                                }
                                Op::PairSub(..) => {
                                    for k in 0..h {
                                        da.data[i * h + k] += d[k];
                                        db.data[j * h + k] -= d[k];
                                    }
                                }
                                _ => {
                                    for k in 0..h {
                                        da.data[i * h + k] += d[k];
                                        db.data[j * h + k] += d[k];
                                    }
                                }
                            }
                        }
                    }
                    axpy(slot(&mut g, *a, (m, h)), 1.0, &da);
                    axpy(slot(&mut g, *b, (n, h)), 1.0, &db);
                }
                Op::Reshape(x) => {
                    let shape = self.shape(*x);
                    let dx = slot(&mut g, *x, shape);
                    for (d, v) in dx.data.iter_mut().zip(&dy.data) {
                        *d += v;
                    }
                }
                Op::CrossEntropy {
                    logits,
                    label,
                    weight,
                    probs,
                } => {
                    let scale = dy.data[0] * weight;
                    let dl = slot(&mut g, *logits, (1, probs.len()));
                    for (k, (d, p)) in dl.data.iter_mut().zip(probs).enumerate() {
                        let target = if k == *label { 1.0 } else { 0.0 };
                        *d += scale * (p - target);
                    }
                }
                Op::WeightedSum { x, weights } => {
                    axpy(slot(&mut g, *x, weights.shape()), dy.data[0], weights);
                }
            }
        }
    }
}

fn slot(g: &mut [Option<Mat>], v: Var, shape: (usize, usize)) -> &mut Mat {
    g[v.0].get_or_insert_with(|| Mat::zeros(shape.0, shape.1))
}

fn axpy(dst: &mut Mat, a: f64, x: &Mat) {
    for (d, v) in dst.data.iter_mut().zip(&x.data) {
        *d += a * v;
    }
}

/// `tanh` through a single `exp`, with a Taylor series near zero.
/// Absolute error stays below 1e-15.
pub fn tanh(x: f64) -> f64 {
    let a = x.abs();
    let t = if a < 1e-4 {
        a - a * a * a / 3.0
    } else if a < 22.0 {
        1.0 - 2.0 / ((2.0 * a).exp() + 1.0)
    } else {
        1.0
    };
    t.copysign(x)
}

/// Numerically stable softmax of a slice.
pub fn softmax(x: &[f64]) -> Vec<f64> {
    let max = x.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = x.iter().map(|v| (v - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / sum).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    /// Central finite differences of every parameter against backprop.
    fn check(params: &mut ParamSet, f: &dyn Fn(&mut Tape) -> Var) {
        let mut grads = Grads::for_params(params);
        {
            let mut t = Tape::new(params);
            let out = f(&mut t);
            t.backward(out, &mut grads);
        }
        let eps = 1e-6;
        let ids: Vec<ParamId> = params.ids().collect();
        for id in ids {
            let analytic = grads.dense(id);
            for i in 0..params.get(id).len() {
                let orig = params.get(id).data[i];
                params.get_mut(id).data[i] = orig + eps;
                let up = {
                    let mut t = Tape::new(params);
                    let o = f(&mut t);
                    t.value(o).data[0]
                };
                params.get_mut(id).data[i] = orig - eps;
                let down = {
                    let mut t = Tape::new(params);
                    let o = f(&mut t);
                    t.value(o).data[0]
                };
                params.get_mut(id).data[i] = orig;
                let numeric = (up - down) / (2.0 * eps);
                let a = analytic[i];
                let err = (a - numeric).abs() / (a.abs() + numeric.abs()).max(1e-7);
                assert!(err < 1e-5, "{} [{i}]: analytic {a} numeric {numeric}", params.name(id));
            }
        }
    }

    #[test]
    fn every_op_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let mut p = ParamSet::new();
        let a = p.normal("a", 3, 4, 0.7, &mut rng);
        let b = p.normal("b", 4, 5, 0.7, &mut rng);
        let c = p.normal("c", 2, 4, 0.7, &mut rng);
        let row = p.normal("row", 1, 4, 0.7, &mut rng);
        let gamma = p.normal("gamma", 1, 4, 0.7, &mut rng);
        let beta = p.normal("beta", 1, 4, 0.7, &mut rng);
        let table = p.normal("table", 6, 4, 0.7, &mut rng);
        let w = Mat::from_vec(3, 4, (0..12).map(|i| (i as f64 * 0.37).sin()).collect());
        let f = move |t: &mut Tape| {
            let (va, vb, vc) = (t.param(a), t.param(b), t.param(c));
            let (vr, vg, vbeta, vt) = (t.param(row), t.param(gamma), t.param(beta), t.param(table));
            let ab = t.matmul(va, vb);
            let abt = t.matmul_t(vb, true, va, true);
            let x = t.gelu(ab);
            let abt2 = t.matmul_t(abt, true, vb, true);
            let x2 = t.tanh(abt2);
            let ln = t.layer_norm(va, vg, vbeta);
            let ln = t.add_row(ln, vr);
            let emb = t.gather(vt, &[0, 3, 3]);
            let mix = t.sub(ln, emb);
            let mix = t.scale(mix, 0.5);
            let cols = t.slice_cols(x, 1, 4);
            let cols2 = t.slice_cols(x2, 0, 1);
            let cat = t.concat_cols(&[cols, cols2]);
            let both = t.add(mix, cat);
            let sm = t.softmax_rows(both, Some(&[true, false, true, true]));
            let pa = t.pair_add(vc, sm);
            let ps = t.pair_sub(sm, vc);
            let pm = t.pair_mul(vc, sm);
            let pm = t.tanh(pm);
            let s = t.add(pa, pm);
            let s = t.reshape(s, 3, 8);
            let ps = t.reshape(ps, 3, 8);
            let s = t.add(s, ps);
            let top = t.slice_rows(s, 1, 3);
            let mean = t.mean_rows(top);
            let logits = t.slice_cols(mean, 2, 4);
            let ce = t.cross_entropy(logits, 1, 1.7);
            let tail = t.slice_cols(s, 0, 4);
            let ws = t.weighted_sum(tail, w.clone());
            t.add(ce, ws)
        };
        check(&mut p, &f);
    }

    #[test]
    fn tanh_matches_libm() {
        for i in -40_000..=40_000 {
            let x = i as f64 * 7.3e-4;
            assert!((tanh(x) - x.tanh()).abs() < 1e-15, "{x}");
        }
        for x in [1e-12, -3e-9, 9.99e-5, 1e-4, 30.0, -700.0] {
            assert!((tanh(x) - x.tanh()).abs() < 1e-15, "{x}");
        }
        assert_eq!(tanh(0.0), 0.0);
    }

    #[test]
    fn masked_softmax_zeroes_masked_columns() {
        let p = ParamSet::new();
        let mut t = Tape::new(&p);
        let x = t.leaf(Mat::from_vec(1, 3, vec![1.0, 50.0, 2.0]));
        let y = t.softmax_rows(x, Some(&[true, false, true]));
        let v = t.value(y);
        assert_eq!(v.data[1], 0.0);
        assert!((v.data[0] + v.data[2] - 1.0).abs() < 1e-12);
    }
}
