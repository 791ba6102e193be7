//! Matrix-valued reverse-mode automatic differentiation.
//!
//! Operations are recorded in evaluation order on a [`Tape`]; `backward`
//! walks the tape in reverse and accumulates parameter gradients into a flat
//! vector that mirrors the flat parameter vector.

use std::ops::Range;

/// Row-major dense matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct Mat {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<f64>,
}

impl Mat {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<f64>) -> Self {
        assert_eq!(data.len(), rows * cols, "shape mismatch");
        Self { rows, cols, data }
    }

    pub fn row(&self, r: usize) -> &[f64] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn row_mut(&mut self, r: usize) -> &mut [f64] {
        &mut self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn at(&self, r: usize, c: usize) -> f64 {
        self.data[r * self.cols + c]
    }

    fn add_assign(&mut self, other: &Mat) {
        debug_assert_eq!((self.rows, self.cols), (other.rows, other.cols));
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += b;
        }
    }
}

/// `c = beta * c + a * b` where each operand is given as (data, row stride, col stride).
#[allow(clippy::too_many_arguments)]
pub(crate) fn gemm(
    m: usize,
    k: usize,
    n: usize,
    a: (&[f64], isize, isize),
    b: (&[f64], isize, isize),
    beta: f64,
    c: &mut [f64],
    rsc: isize,
) {
    if m == 0 || n == 0 {
        return;
    }
    assert!(c.len() >= (m - 1) * rsc as usize + n);
    // SAFETY: the strides describe in-bounds views of the given slices
    // (checked by the callers' shape assertions) and `c` does not alias them.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.0.as_ptr(),
            a.1,
            a.2,
            b.0.as_ptr(),
            b.1,
            b.2,
            beta,
            c.as_mut_ptr(),
            rsc,
            1,
        );
    }
}

/// Attention restriction beyond causality: keys inside a span are hidden
/// from every query positioned at or after the span's end.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct KeyMask {
    pub hidden_spans: Vec<Range<usize>>,
}

impl KeyMask {
    pub fn allows(&self, query: usize, key: usize) -> bool {
        key <= query
            && !self
                .hidden_spans
                .iter()
                .any(|s| s.contains(&key) && query >= s.end)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Var(usize);

#[derive(Debug)]
enum Op {
    Constant,
    Param {
        offset: usize,
    },
    Gather {
        table: Var,
        ids: Vec<usize>,
    },
    Add(Var, Var),
    AddRow(Var, Var),
    MatMul(Var, Var),
    MatMulT(Var, Var),
    Scale(Var, f64),
    CausalSoftmax {
        x: Var,
    },
    RmsNorm {
        x: Var,
        gain: Var,
        inv_rms: Vec<f64>,
    },
    Gelu(Var),
    SliceCols {
        x: Var,
        start: usize,
    },
    ConcatCols(Vec<Var>),
    SelectRows {
        x: Var,
        rows: Vec<usize>,
    },
    LogSoftmax(Var),
}

const RMS_EPS: f64 = 1e-6;
const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)

#[derive(Debug, Default)]
pub struct Tape {
    values: Vec<Mat>,
    ops: Vec<Op>,
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    fn push(&mut self, value: Mat, op: Op) -> Var {
        self.values.push(value);
        self.ops.push(op);
        Var(self.values.len() - 1)
    }

    pub fn value(&self, v: Var) -> &Mat {
        &self.values[v.0]
    }

    pub fn constant(&mut self, m: Mat) -> Var {
        self.push(m, Op::Constant)
    }

    /// A `rows x cols` block of the flat parameter vector starting at `offset`.
    pub fn param(&mut self, theta: &[f64], offset: usize, rows: usize, cols: usize) -> Var {
        let data = theta[offset..offset + rows * cols].to_vec();
        self.push(Mat::from_vec(rows, cols, data), Op::Param { offset })
    }

    pub fn gather(&mut self, table: Var, ids: &[usize]) -> Var {
        let t = &self.values[table.0];
        let mut out = Mat::zeros(ids.len(), t.cols);
        for (r, &id) in ids.iter().enumerate() {
            out.row_mut(r).copy_from_slice(t.row(id));
        }
        self.push(
            out,
            Op::Gather {
                table,
                ids: ids.to_vec(),
            },
        )
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        let mut out = self.values[a.0].clone();
        out.add_assign(&self.values[b.0]);
        self.push(out, Op::Add(a, b))
    }

    /// Adds a `1 x cols` row to every row of `a`.
    pub fn add_row(&mut self, a: Var, bias: Var) -> Var {
        let mut out = self.values[a.0].clone();
        let b = &self.values[bias.0];
        assert_eq!((b.rows, b.cols), (1, out.cols));
        for r in 0..out.rows {
            for (x, y) in out.row_mut(r).iter_mut().zip(&b.data) {
                *x += y;
            }
        }
        self.push(out, Op::AddRow(a, bias))
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Var {
        let (x, y) = (&self.values[a.0], &self.values[b.0]);
        assert_eq!(x.cols, y.rows, "matmul shape");
        let mut out = Mat::zeros(x.rows, y.cols);
        gemm(
            x.rows,
            x.cols,
            y.cols,
            (&x.data, x.cols as isize, 1),
            (&y.data, y.cols as isize, 1),
            0.0,
            &mut out.data,
            y.cols as isize,
        );
        self.push(out, Op::MatMul(a, b))
    }

    /// `a * b^T`.
    pub fn matmul_t(&mut self, a: Var, b: Var) -> Var {
        let (x, y) = (&self.values[a.0], &self.values[b.0]);
        assert_eq!(x.cols, y.cols, "matmul_t shape");
        let mut out = Mat::zeros(x.rows, y.rows);
        gemm(
            x.rows,
            x.cols,
            y.rows,
            (&x.data, x.cols as isize, 1),
            (&y.data, 1, y.cols as isize),
            0.0,
            &mut out.data,
            y.rows as isize,
        );
        self.push(out, Op::MatMulT(a, b))
    }

    pub fn scale(&mut self, a: Var, s: f64) -> Var {
        let mut out = self.values[a.0].clone();
        out.data.iter_mut().for_each(|x| *x *= s);
        self.push(out, Op::Scale(a, s))
    }

    /// Row-wise softmax over allowed keys; disallowed entries are exactly 0.
    pub fn causal_softmax(&mut self, x: Var, mask: &KeyMask) -> Var {
        let v = &self.values[x.0];
        let mut out = Mat::zeros(v.rows, v.cols);
        for i in 0..v.rows {
            let row = v.row(i);
            let max = (0..v.cols)
                .filter(|&j| mask.allows(i, j))
                .map(|j| row[j])
                .fold(f64::NEG_INFINITY, f64::max);
            let o = out.row_mut(i);
            let mut z = 0.0;
            for j in 0..v.cols {
                if mask.allows(i, j) {
                    o[j] = (row[j] - max).exp();
                    z += o[j];
                }
            }
            o.iter_mut().for_each(|p| *p /= z);
        }
        self.push(out, Op::CausalSoftmax { x })
    }

    /// `x / rms(x) * gain`, row-wise, with a `1 x cols` gain.
    pub fn rms_norm(&mut self, x: Var, gain: Var) -> Var {
        let (v, g) = (&self.values[x.0], &self.values[gain.0]);
        let mut out = Mat::zeros(v.rows, v.cols);
        let mut inv_rms = Vec::with_capacity(v.rows);
        for r in 0..v.rows {
            let row = v.row(r);
            let ms = row.iter().map(|a| a * a).sum::<f64>() / v.cols as f64;
            let inv = 1.0 / (ms + RMS_EPS).sqrt();
            inv_rms.push(inv);
            for ((o, a), w) in out.row_mut(r).iter_mut().zip(row).zip(&g.data) {
                *o = a * inv * w;
            }
        }
        self.push(out, Op::RmsNorm { x, gain, inv_rms })
    }

    /// Tanh-approximated GELU.
    pub fn gelu(&mut self, x: Var) -> Var {
        let mut out = self.values[x.0].clone();
        out.data.iter_mut().for_each(|a| *a = gelu(*a));
        self.push(out, Op::Gelu(x))
    }

    pub fn slice_cols(&mut self, x: Var, start: usize, len: usize) -> Var {
        let v = &self.values[x.0];
        let mut out = Mat::zeros(v.rows, len);
        for r in 0..v.rows {
            out.row_mut(r)
                .copy_from_slice(&v.row(r)[start..start + len]);
        }
        self.push(out, Op::SliceCols { x, start })
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Var {
        let rows = self.values[parts[0].0].rows;
        let cols: usize = parts.iter().map(|p| self.values[p.0].cols).sum();
        let mut out = Mat::zeros(rows, cols);
        for r in 0..rows {
            let mut c0 = 0;
            for p in parts {
                let v = &self.values[p.0];
                out.row_mut(r)[c0..c0 + v.cols].copy_from_slice(v.row(r));
                c0 += v.cols;
            }
        }
        self.push(out, Op::ConcatCols(parts.to_vec()))
    }

    pub fn select_rows(&mut self, x: Var, rows: &[usize]) -> Var {
        let v = &self.values[x.0];
        let mut out = Mat::zeros(rows.len(), v.cols);
        for (i, &r) in rows.iter().enumerate() {
            out.row_mut(i).copy_from_slice(v.row(r));
        }
        self.push(
            out,
            Op::SelectRows {
                x,
                rows: rows.to_vec(),
            },
        )
    }

    pub fn log_softmax(&mut self, x: Var) -> Var {
        let mut out = self.values[x.0].clone();
        for r in 0..out.rows {
            log_softmax_in_place(out.row_mut(r));
        }
        self.push(out, Op::LogSoftmax(x))
    }

    /// Back-propagates the given output gradients; parameter gradients are
    /// added into `grad` (same layout as the parameter vector).
    pub fn backward(&self, seeds: Vec<(Var, Mat)>, grad: &mut [f64]) {
        let mut grads: Vec<Option<Mat>> = (0..self.values.len()).map(|_| None).collect();
        for (v, g) in seeds {
            accumulate(&mut grads[v.0], g);
        }
        for idx in (0..self.ops.len()).rev() {
            let Some(g) = grads[idx].take() else { continue };
            match &self.ops[idx] {
                Op::Constant => {}
                Op::Param { offset } => {
                    for (a, b) in grad[*offset..*offset + g.data.len()]
                        .iter_mut()
                        .zip(&g.data)
                    {
                        *a += b;
                    }
                }
                Op::Gather { table, ids } => {
                    let t = &self.values[table.0];
                    let mut d = Mat::zeros(t.rows, t.cols);
                    for (r, &id) in ids.iter().enumerate() {
                        for (a, b) in d.row_mut(id).iter_mut().zip(g.row(r)) {
                            *a += b;
                        }
                    }
                    accumulate(&mut grads[table.0], d);
                }
                Op::Add(a, b) => {
                    accumulate(&mut grads[b.0], g.clone());
                    accumulate(&mut grads[a.0], g);
                }
                Op::AddRow(a, bias) => {
                    let mut d = Mat::zeros(1, g.cols);
                    for r in 0..g.rows {
                        for (x, y) in d.data.iter_mut().zip(g.row(r)) {
                            *x += y;
                        }
                    }
                    accumulate(&mut grads[bias.0], d);
                    accumulate(&mut grads[a.0], g);
                }
                Op::MatMul(a, b) => {
                    let (x, y) = (&self.values[a.0], &self.values[b.0]);
                    // dA = G * B^T, dB = A^T * G
                    let mut da = Mat::zeros(x.rows, x.cols);
                    gemm(
                        g.rows,
                        g.cols,
                        y.rows,
                        (&g.data, g.cols as isize, 1),
                        (&y.data, 1, y.cols as isize),
                        0.0,
                        &mut da.data,
                        x.cols as isize,
                    );
                    let mut db = Mat::zeros(y.rows, y.cols);
                    gemm(
                        x.cols,
                        x.rows,
                        g.cols,
                        (&x.data, 1, x.cols as isize),
                        (&g.data, g.cols as isize, 1),
                        0.0,
                        &mut db.data,
                        y.cols as isize,
                    );
                    accumulate(&mut grads[a.0], da);
                    accumulate(&mut grads[b.0], db);
                }
                Op::MatMulT(a, b) => {
                    let (x, y) = (&self.values[a.0], &self.values[b.0]);
                    // C = A B^T: dA = G B, dB = G^T A
                    let mut da = Mat::zeros(x.rows, x.cols);
                    gemm(
                        g.rows,
                        g.cols,
                        y.cols,
                        (&g.data, g.cols as isize, 1),
                        (&y.data, y.cols as isize, 1),
                        0.0,
                        &mut da.data,
                        x.cols as isize,
                    );
                    let mut db = Mat::zeros(y.rows, y.cols);
                    gemm(
                        g.cols,
                        g.rows,
                        x.cols,
                        (&g.data, 1, g.cols as isize),
                        (&x.data, x.cols as isize, 1),
                        0.0,
                        &mut db.data,
                        y.cols as isize,
                    );
                    accumulate(&mut grads[a.0], da);
                    accumulate(&mut grads[b.0], db);
                }
                Op::Scale(a, s) => {
                    let mut d = g;
                    d.data.iter_mut().for_each(|x| *x *= s);
                    accumulate(&mut grads[a.0], d);
                }
                Op::CausalSoftmax { x } => {
                    let p = &self.values[idx];
                    let mut d = Mat::zeros(p.rows, p.cols);
                    for r in 0..p.rows {
                        let (pr, gr) = (p.row(r), g.row(r));
                        let dot: f64 = pr.iter().zip(gr).map(|(a, b)| a * b).sum();
                        for ((o, a), b) in d.row_mut(r).iter_mut().zip(pr).zip(gr) {
                            *o = a * (b - dot);
                        }
                    }
                    accumulate(&mut grads[x.0], d);
                }
                Op::RmsNorm { x, gain, inv_rms } => {
                    let (v, w) = (&self.values[x.0], &self.values[gain.0]);
                    let n = v.cols as f64;
                    let mut dx = Mat::zeros(v.rows, v.cols);
                    let mut dg = Mat::zeros(1, v.cols);
                    for r in 0..v.rows {
                        let inv = inv_rms[r];
                        let (xr, gr) = (v.row(r), g.row(r));
                        let mut dot = 0.0;
                        for c in 0..v.cols {
                            let xhat = xr[c] * inv;
                            dg.data[c] += gr[c] * xhat;
                            dot += gr[c] * w.data[c] * xhat;
                        }
                        let dxr = dx.row_mut(r);
                        for c in 0..v.cols {
                            let xhat = xr[c] * inv;
                            dxr[c] = inv * (gr[c] * w.data[c] - xhat * dot / n);
                        }
                    }
                    accumulate(&mut grads[x.0], dx);
                    accumulate(&mut grads[gain.0], dg);
                }
                Op::Gelu(x) => {
                    let v = &self.values[x.0];
                    let mut d = g;
                    for (o, a) in d.data.iter_mut().zip(&v.data) {
                        *o *= gelu_grad(*a);
                    }
                    accumulate(&mut grads[x.0], d);
                }
                Op::SliceCols { x, start } => {
                    let v = &self.values[x.0];
                    let mut d = Mat::zeros(v.rows, v.cols);
                    for r in 0..v.rows {
                        d.row_mut(r)[*start..*start + g.cols].copy_from_slice(g.row(r));
                    }
                    accumulate(&mut grads[x.0], d);
                }
                Op::ConcatCols(parts) => {
                    let mut c0 = 0;
                    for p in parts {
                        let cols = self.values[p.0].cols;
                        let mut d = Mat::zeros(g.rows, cols);
                        for r in 0..g.rows {
                            d.row_mut(r).copy_from_slice(&g.row(r)[c0..c0 + cols]);
                        }
                        c0 += cols;
                        accumulate(&mut grads[p.0], d);
                    }
                }
                Op::SelectRows { x, rows } => {
                    let v = &self.values[x.0];
                    let mut d = Mat::zeros(v.rows, v.cols);
                    for (i, &r) in rows.iter().enumerate() {
                        for (a, b) in d.row_mut(r).iter_mut().zip(g.row(i)) {
                            *a += b;
                        }
                    }
                    accumulate(&mut grads[x.0], d);
                }
                Op::LogSoftmax(x) => {
                    let y = &self.values[idx];
                    let mut d = g;
                    for r in 0..y.rows {
                        let s: f64 = d.row(r).iter().sum();
                        for (o, ly) in d.row_mut(r).iter_mut().zip(y.row(r)) {
                            *o -= ly.exp() * s;
                        }
                    }
                    accumulate(&mut grads[x.0], d);
                }
            }
        }
    }
}

fn accumulate(slot: &mut Option<Mat>, g: Mat) {
    match slot {
        Some(m) => m.add_assign(&g),
        None => *slot = Some(g),
    }
}

pub(crate) fn gelu(x: f64) -> f64 {
    0.5 * x * (1.0 + (GELU_C * (x + 0.044715 * x * x * x)).tanh())
}

fn gelu_grad(x: f64) -> f64 {
    let u = GELU_C * (x + 0.044715 * x * x * x);
    let t = u.tanh();
    0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * GELU_C * (1.0 + 3.0 * 0.044715 * x * x)
}

pub(crate) fn log_softmax_in_place(row: &mut [f64]) {
    let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let z = row.iter().map(|a| (a - max).exp()).sum::<f64>().ln() + max;
    row.iter_mut().for_each(|a| *a -= z);
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};

    fn random(rng: &mut impl Rng, n: usize) -> Vec<f64> {
        (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()
    }

    /// Builds a scalar loss touching every op; returns (loss, gradient).
    fn run(theta: &[f64], with_grad: bool) -> (f64, Vec<f64>) {
        let mut t = Tape::new();
        let emb = t.param(theta, 0, 5, 4);
        let w = t.param(theta, 20, 4, 6);
        let bias = t.param(theta, 44, 1, 6);
        let gain = t.param(theta, 50, 1, 4);
        let x = t.gather(emb, &[1, 3, 3, 0]);
        let n = t.rms_norm(x, gain);
        let h = t.matmul(n, w);
        let h = t.add_row(h, bias);
        let q = t.slice_cols(h, 0, 3);
        let k = t.slice_cols(h, 3, 3);
        let s = t.matmul_t(q, k);
        let s = t.scale(s, 0.7);
        let mask = KeyMask {
            hidden_spans: vec![1..2],
        };
        let p = t.causal_softmax(s, &mask);
        let o = t.matmul(p, k);
        let o = t.gelu(o);
        let c = t.concat_cols(&[o, q]);
        let c2 = t.add(c, c);
        let sel = t.select_rows(c2, &[0, 2, 3]);
        let lp = t.log_softmax(sel);
        let v = t.value(lp).clone();
        let weights: Vec<f64> = (0..v.data.len())
            .map(|i| ((i * 7) % 5) as f64 - 2.0)
            .collect();
        let loss: f64 = v.data.iter().zip(&weights).map(|(a, b)| a * b).sum();
        let mut grad = vec![0.0; theta.len()];
        if with_grad {
            t.backward(
                vec![(lp, Mat::from_vec(v.rows, v.cols, weights))],
                &mut grad,
            );
        }
        (loss, grad)
    }

    #[test]
    fn gradient_matches_central_differences() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(1);
        for _ in 0..5 {
            let theta = random(&mut rng, 54);
            let (_, g) = run(&theta, true);
            for i in 0..theta.len() {
                let h = 1e-5;
                let mut a = theta.clone();
                a[i] += h;
                let mut b = theta.clone();
                b[i] -= h;
                let fd = (run(&a, false).0 - run(&b, false).0) / (2.0 * h);
                let err = (fd - g[i]).abs() / (fd.abs().max(g[i].abs()).max(1e-6));
                assert!(err < 1e-5, "param {i}: fd {fd} analytic {}", g[i]);
            }
        }
    }

    #[test]
    fn masked_softmax_hides_span_from_later_queries() {
        let mut t = Tape::new();
        let s = t.constant(Mat::zeros(4, 4));
        let mask = KeyMask {
            hidden_spans: vec![1..2],
        };
        let p = t.causal_softmax(s, &mask);
        let p = t.value(p);
        assert_eq!(p.row(0), &[1.0, 0.0, 0.0, 0.0]);
        assert_eq!(p.row(1), &[0.5, 0.5, 0.0, 0.0]);
        assert_eq!(p.row(2), &[0.5, 0.0, 0.5, 0.0]);
        for r in 0..4 {
            assert!((p.row(r).iter().sum::<f64>() - 1.0).abs() < 1e-12);
        }
    }
}
