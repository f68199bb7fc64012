//! Forward and backward implementations for every tape operation.
//!
//! Binary elementwise ops allow one side to be a single-element tensor,
//! which broadcasts against the other; no other broadcasting exists.
//! Matmul is strictly 2-D. Row-wise ops (softmax, layer norm, L2 norm)
//! treat the trailing dimension as the row.

use super::{RbfSpec, Tape, Tensor};

#[derive(Clone, Debug)]
pub enum Op {
    Leaf,
    Constant,
    Add(u32, u32),
    Sub(u32, u32),
    Mul(u32, u32),
    Div(u32, u32),
    Scale(u32, f64),
    AddConst(u32, f64),
    ClampMin(u32, f64),
    Matmul(u32, u32),
    Transpose(u32),
    Concat(Vec<u32>, usize),
    Slice(u32, usize, usize, usize),
    Reshape(u32),
    Sum(u32),
    Mean(u32),
    Silu(u32),
    Sigmoid(u32),
    Sqrt(u32),
    SoftmaxRows(u32),
    LogSoftmaxRows(u32),
    LayerNormRows(u32, f64),
    Cross3(u32, u32),
    L2NormRows(u32),
    Rbf(u32, RbfSpec),
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// `out += a @ b` for row-major `a: [m,k]`, `b: [k,n]`. Works on 4-row
/// blocks of the output so each `b` row is loaded once per block, and skips
/// exact zeros in `a`, which makes the constant one-hot/selection matrices
/// used for graph bookkeeping nearly free.
pub(crate) fn mm_acc(a: &[f64], b: &[f64], m: usize, k: usize, n: usize, out: &mut [f64]) {
    debug_assert_eq!(a.len(), m * k);
    debug_assert_eq!(b.len(), k * n);
    debug_assert_eq!(out.len(), m * n);
    for (blk, ochunk) in out.chunks_mut(4 * n).enumerate() {
        let i0 = blk * 4;
        let rows = ochunk.len() / n;
        for l in 0..k {
            let brow = &b[l * n..(l + 1) * n];
            for r in 0..rows {
                let ail = a[(i0 + r) * k + l];
                if ail == 0.0 {
                    continue;
                }
                let orow = &mut ochunk[r * n..(r + 1) * n];
                for (o, &bv) in orow.iter_mut().zip(brow) {
                    *o += ail * bv;
                }
            }
        }
    }
}

pub(crate) fn transpose(a: &[f64], rows: usize, cols: usize) -> Vec<f64> {
    let mut out = vec![0.0; a.len()];
    for i in 0..rows {
        for j in 0..cols {
            out[j * rows + i] = a[i * cols + j];
        }
    }
    out
}

/// Resolve elementwise broadcasting: returns the output shape, panicking via
/// `op` on mismatch. One side of length 1 stretches to the other.
fn ew_shape<'a>(tape: &'a Tape, op: &str, a: Tensor, b: Tensor) -> Vec<usize> {
    let sa = tape.shape(a);
    let sb = tape.shape(b);
    let na: usize = sa.iter().product();
    let nb: usize = sb.iter().product();
    if na == nb && sa == sb {
        sa.to_vec()
    } else if nb == 1 {
        sa.to_vec()
    } else if na == 1 {
        sb.to_vec()
    } else {
        panic!("numkit::{op}: shape mismatch {sa:?} vs {sb:?}");
    }
}

fn ew_forward(tape: &Tape, a: Tensor, b: Tensor, f: impl Fn(f64, f64) -> f64) -> Vec<f64> {
    let da = tape.value(a);
    let db = tape.value(b);
    match (da.len(), db.len()) {
        (x, y) if x == y => da.iter().zip(db).map(|(&x, &y)| f(x, y)).collect(),
        (_, 1) => da.iter().map(|&x| f(x, db[0])).collect(),
        (1, _) => db.iter().map(|&y| f(da[0], y)).collect(),
        _ => unreachable!(),
    }
}

fn rows_of(shape: &[usize]) -> (usize, usize) {
    match shape.len() {
        1 => (1, shape[0]),
        2 => (shape[0], shape[1]),
        r => panic!("numkit: row-wise op expects rank 1 or 2, got rank {r}"),
    }
}

impl Tape {
    fn tracked2(&self, a: Tensor, b: Tensor) -> bool {
        self.is_tracked(a) || self.is_tracked(b)
    }

    pub fn add(&mut self, a: Tensor, b: Tensor) -> Tensor {
        let shape = ew_shape(self, "add", a, b);
        let data = ew_forward(self, a, b, |x, y| x + y);
        let tr = self.tracked2(a, b);
        self.push(shape, data, Op::Add(a.id, b.id), tr)
    }

    pub fn sub(&mut self, a: Tensor, b: Tensor) -> Tensor {
        let shape = ew_shape(self, "sub", a, b);
        let data = ew_forward(self, a, b, |x, y| x - y);
        let tr = self.tracked2(a, b);
        self.push(shape, data, Op::Sub(a.id, b.id), tr)
    }

    pub fn mul(&mut self, a: Tensor, b: Tensor) -> Tensor {
        let shape = ew_shape(self, "mul", a, b);
        let data = ew_forward(self, a, b, |x, y| x * y);
        let tr = self.tracked2(a, b);
        self.push(shape, data, Op::Mul(a.id, b.id), tr)
    }

    pub fn div(&mut self, a: Tensor, b: Tensor) -> Tensor {
        let shape = ew_shape(self, "div", a, b);
        let data = ew_forward(self, a, b, |x, y| x / y);
        let tr = self.tracked2(a, b);
        self.push(shape, data, Op::Div(a.id, b.id), tr)
    }

    pub fn scale(&mut self, a: Tensor, c: f64) -> Tensor {
        let data = self.value(a).iter().map(|&x| x * c).collect();
        let shape = self.shape(a).to_vec();
        let tr = self.is_tracked(a);
        self.push(shape, data, Op::Scale(a.id, c), tr)
    }

    pub fn add_const(&mut self, a: Tensor, c: f64) -> Tensor {
        let data = self.value(a).iter().map(|&x| x + c).collect();
        let shape = self.shape(a).to_vec();
        let tr = self.is_tracked(a);
        self.push(shape, data, Op::AddConst(a.id, c), tr)
    }

    /// `max(x, c)` elementwise; the distance-denominator guard.
    pub fn clamp_min(&mut self, a: Tensor, c: f64) -> Tensor {
        let data = self.value(a).iter().map(|&x| x.max(c)).collect();
        let shape = self.shape(a).to_vec();
        let tr = self.is_tracked(a);
        self.push(shape, data, Op::ClampMin(a.id, c), tr)
    }

    pub fn matmul(&mut self, a: Tensor, b: Tensor) -> Tensor {
        let sa = self.shape(a).to_vec();
        let sb = self.shape(b).to_vec();
        assert!(
            sa.len() == 2 && sb.len() == 2 && sa[1] == sb[0],
            "numkit::matmul: incompatible shapes {sa:?} vs {sb:?}"
        );
        let (m, k, n) = (sa[0], sa[1], sb[1]);
        let mut out = vec![0.0; m * n];
        mm_acc(self.value(a), self.value(b), m, k, n, &mut out);
        let tr = self.tracked2(a, b);
        self.push(vec![m, n], out, Op::Matmul(a.id, b.id), tr)
    }

    pub fn transpose2(&mut self, a: Tensor) -> Tensor {
        let sa = self.shape(a).to_vec();
        assert_eq!(sa.len(), 2, "numkit::transpose: expects rank 2, got {sa:?}");
        let out = transpose(self.value(a), sa[0], sa[1]);
        let tr = self.is_tracked(a);
        self.push(vec![sa[1], sa[0]], out, Op::Transpose(a.id), tr)
    }

    pub fn concat(&mut self, parts: &[Tensor], axis: usize) -> Tensor {
        assert!(!parts.is_empty(), "numkit::concat: no inputs");
        let rank = self.shape(parts[0]).len();
        assert!(axis < rank, "numkit::concat: axis {axis} out of range for rank {rank}");
        let mut shape = self.shape(parts[0]).to_vec();
        for &p in &parts[1..] {
            let sp = self.shape(p);
            assert_eq!(sp.len(), rank, "numkit::concat: rank mismatch {:?} vs {sp:?}", shape);
            for d in 0..rank {
                if d != axis {
                    assert_eq!(
                        sp[d], shape[d],
                        "numkit::concat: shape mismatch off-axis {:?} vs {sp:?}",
                        shape
                    );
                }
            }
            shape[axis] += sp[axis];
        }
        let data = if axis == 0 || rank == 1 {
            let mut d = Vec::with_capacity(shape.iter().product());
            for &p in parts {
                d.extend_from_slice(self.value(p));
            }
            d
        } else {
            // axis == 1, rank 2: interleave rows
            let rows = shape[0];
            let out_cols = shape[1];
            let mut d = vec![0.0; rows * out_cols];
            let mut col0 = 0;
            for &p in parts {
                let pc = self.shape(p)[1];
                let pv = self.value(p);
                for r in 0..rows {
                    d[r * out_cols + col0..r * out_cols + col0 + pc]
                        .copy_from_slice(&pv[r * pc..(r + 1) * pc]);
                }
                col0 += pc;
            }
            d
        };
        let tr = parts.iter().any(|&p| self.is_tracked(p));
        let ids = parts.iter().map(|p| p.id).collect();
        self.push(shape, data, Op::Concat(ids, axis), tr)
    }

    pub fn slice(&mut self, a: Tensor, axis: usize, lo: usize, hi: usize) -> Tensor {
        let sa = self.shape(a).to_vec();
        assert!(axis < sa.len(), "numkit::slice: axis {axis} out of range for {sa:?}");
        assert!(lo < hi && hi <= sa[axis], "numkit::slice: bounds {lo}..{hi} invalid for {sa:?}");
        let mut shape = sa.clone();
        shape[axis] = hi - lo;
        let v = self.value(a);
        let data = if axis == 0 || sa.len() == 1 {
            let row: usize = sa[1..].iter().product::<usize>().max(1);
            v[lo * row..hi * row].to_vec()
        } else {
            let rows = sa[0];
            let cols = sa[1];
            let mut d = Vec::with_capacity(rows * (hi - lo));
            for r in 0..rows {
                d.extend_from_slice(&v[r * cols + lo..r * cols + hi]);
            }
            d
        };
        let tr = self.is_tracked(a);
        self.push(shape, data, Op::Slice(a.id, axis, lo, hi), tr)
    }

    pub fn reshape(&mut self, a: Tensor, new_shape: &[usize]) -> Tensor {
        let n: usize = new_shape.iter().product();
        assert_eq!(
            n,
            self.value(a).len(),
            "numkit::reshape: cannot reshape {:?} to {new_shape:?}",
            self.shape(a)
        );
        let data = self.value(a).to_vec();
        let tr = self.is_tracked(a);
        self.push(new_shape.to_vec(), data, Op::Reshape(a.id), tr)
    }

    pub fn sum(&mut self, a: Tensor) -> Tensor {
        let s: f64 = self.value(a).iter().sum();
        let tr = self.is_tracked(a);
        self.push(vec![1], vec![s], Op::Sum(a.id), tr)
    }

    pub fn mean(&mut self, a: Tensor) -> Tensor {
        let v = self.value(a);
        let s: f64 = v.iter().sum::<f64>() / v.len() as f64;
        let tr = self.is_tracked(a);
        self.push(vec![1], vec![s], Op::Mean(a.id), tr)
    }

    /// The crate's "relu-like" nonlinearity: `x * sigmoid(x)`. Smooth, which
    /// keeps finite-difference gradient checks meaningful everywhere.
    pub fn silu(&mut self, a: Tensor) -> Tensor {
        let data = self.value(a).iter().map(|&x| x * sigmoid(x)).collect();
        let shape = self.shape(a).to_vec();
        let tr = self.is_tracked(a);
        self.push(shape, data, Op::Silu(a.id), tr)
    }

    pub fn sigmoid(&mut self, a: Tensor) -> Tensor {
        let data = self.value(a).iter().map(|&x| sigmoid(x)).collect();
        let shape = self.shape(a).to_vec();
        let tr = self.is_tracked(a);
        self.push(shape, data, Op::Sigmoid(a.id), tr)
    }

    pub fn sqrt(&mut self, a: Tensor) -> Tensor {
        let data = self.value(a).iter().map(|&x| x.sqrt()).collect();
        let shape = self.shape(a).to_vec();
        let tr = self.is_tracked(a);
        self.push(shape, data, Op::Sqrt(a.id), tr)
    }

    pub fn softmax_rows(&mut self, a: Tensor) -> Tensor {
        let (rows, cols) = rows_of(self.shape(a));
        let v = self.value(a);
        let mut data = vec![0.0; v.len()];
        for r in 0..rows {
            let row = &v[r * cols..(r + 1) * cols];
            let mx = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let out = &mut data[r * cols..(r + 1) * cols];
            let mut z = 0.0;
            for (o, &x) in out.iter_mut().zip(row) {
                *o = (x - mx).exp();
                z += *o;
            }
            for o in out.iter_mut() {
                *o /= z;
            }
        }
        let shape = self.shape(a).to_vec();
        let tr = self.is_tracked(a);
        self.push(shape, data, Op::SoftmaxRows(a.id), tr)
    }

    pub fn log_softmax_rows(&mut self, a: Tensor) -> Tensor {
        let (rows, cols) = rows_of(self.shape(a));
        let v = self.value(a);
        let mut data = vec![0.0; v.len()];
        for r in 0..rows {
            let row = &v[r * cols..(r + 1) * cols];
            let mx = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let lse = row.iter().map(|&x| (x - mx).exp()).sum::<f64>().ln() + mx;
            for (o, &x) in data[r * cols..(r + 1) * cols].iter_mut().zip(row) {
                *o = x - lse;
            }
        }
        let shape = self.shape(a).to_vec();
        let tr = self.is_tracked(a);
        self.push(shape, data, Op::LogSoftmaxRows(a.id), tr)
    }

    /// Row-wise layer normalization without the affine part: each row comes
    /// out with mean 0 and (population) variance 1 up to `eps`.
    pub fn layer_norm_rows(&mut self, a: Tensor, eps: f64) -> Tensor {
        let (rows, cols) = rows_of(self.shape(a));
        let v = self.value(a);
        let mut data = vec![0.0; v.len()];
        for r in 0..rows {
            let row = &v[r * cols..(r + 1) * cols];
            let mu = row.iter().sum::<f64>() / cols as f64;
            let var = row.iter().map(|&x| (x - mu) * (x - mu)).sum::<f64>() / cols as f64;
            let inv = 1.0 / (var + eps).sqrt();
            for (o, &x) in data[r * cols..(r + 1) * cols].iter_mut().zip(row) {
                *o = (x - mu) * inv;
            }
        }
        let shape = self.shape(a).to_vec();
        let tr = self.is_tracked(a);
        self.push(shape, data, Op::LayerNormRows(a.id, eps), tr)
    }

    /// Cross product over the trailing dimension, which must be 3.
    pub fn cross3(&mut self, a: Tensor, b: Tensor) -> Tensor {
        let sa = self.shape(a).to_vec();
        let sb = self.shape(b).to_vec();
        assert!(
            sa == sb && sa.last() == Some(&3),
            "numkit::cross3: expects matching [.., 3] shapes, got {sa:?} vs {sb:?}"
        );
        let va = self.value(a);
        let vb = self.value(b);
        let mut data = vec![0.0; va.len()];
        for i in (0..va.len()).step_by(3) {
            let (a1, a2, a3) = (va[i], va[i + 1], va[i + 2]);
            let (b1, b2, b3) = (vb[i], vb[i + 1], vb[i + 2]);
            data[i] = a2 * b3 - a3 * b2;
            data[i + 1] = a3 * b1 - a1 * b3;
            data[i + 2] = a1 * b2 - a2 * b1;
        }
        let tr = self.tracked2(a, b);
        self.push(sa, data, Op::Cross3(a.id, b.id), tr)
    }

    /// L2 norm over the trailing dimension: `[m, k] -> [m]`, `[k] -> [1]`.
    pub fn l2norm_rows(&mut self, a: Tensor) -> Tensor {
        let (rows, cols) = rows_of(self.shape(a));
        let v = self.value(a);
        let mut data = vec![0.0; rows];
        for r in 0..rows {
            data[r] = v[r * cols..(r + 1) * cols].iter().map(|&x| x * x).sum::<f64>().sqrt();
        }
        let tr = self.is_tracked(a);
        self.push(vec![rows], data, Op::L2NormRows(a.id), tr)
    }

    /// Gaussian radial basis embedding of nonnegative distances. Input is
    /// treated as a flat list of `m` values; output is `[m, n_basis]`.
    pub fn rbf(&mut self, d: Tensor, spec: RbfSpec) -> Tensor {
        let v = self.value(d);
        let m = v.len();
        let mut data = vec![0.0; m * spec.n_basis];
        for (r, &x) in v.iter().enumerate() {
            spec.eval_into(x, &mut data[r * spec.n_basis..(r + 1) * spec.n_basis]);
        }
        let tr = self.is_tracked(d);
        self.push(vec![m, spec.n_basis], data, Op::Rbf(d.id, spec), tr)
    }
}

/// Distribute `g`, the gradient at `id`, to the node's parents.
pub(crate) fn backward_step(tape: &mut Tape, id: usize, g: &[f64]) {
    // Clone op metadata up front; parent data is read through raw indices.
    let op = tape.nodes[id].op.clone();
    match op {
        Op::Leaf | Op::Constant => {}
        Op::Add(a, b) => {
            bw_ew_signed(tape, a as usize, g, 1.0);
            bw_ew_signed(tape, b as usize, g, 1.0);
        }
        Op::Sub(a, b) => {
            bw_ew_signed(tape, a as usize, g, 1.0);
            bw_ew_signed(tape, b as usize, g, -1.0);
        }
        Op::Mul(a, b) => {
            let vb: Vec<f64> = tape.nodes[b as usize].data.clone();
            let va: Vec<f64> = tape.nodes[a as usize].data.clone();
            bw_ew_with(tape, a as usize, g, &vb);
            bw_ew_with(tape, b as usize, g, &va);
        }
        Op::Div(a, b) => {
            let va: Vec<f64> = tape.nodes[a as usize].data.clone();
            let vb: Vec<f64> = tape.nodes[b as usize].data.clone();
            // d(a/b)/da = 1/b
            let inv_b: Vec<f64> = vb.iter().map(|&y| 1.0 / y).collect();
            bw_ew_with(tape, a as usize, g, &inv_b);
            // d(a/b)/db = -a/b^2
            let n = g.len();
            let coef: Vec<f64> = (0..n)
                .map(|i| {
                    let x = if va.len() == 1 { va[0] } else { va[i] };
                    let y = if vb.len() == 1 { vb[0] } else { vb[i] };
                    -x / (y * y)
                })
                .collect();
            bw_ew_with(tape, b as usize, g, &coef);
        }
        Op::Scale(a, c) => {
            tape.accumulate(a as usize, |buf| {
                for (o, &gv) in buf.iter_mut().zip(g) {
                    *o += c * gv;
                }
            });
        }
        Op::AddConst(a, _) => {
            tape.accumulate(a as usize, |buf| {
                for (o, &gv) in buf.iter_mut().zip(g) {
                    *o += gv;
                }
            });
        }
        Op::ClampMin(a, c) => {
            let va: Vec<f64> = tape.nodes[a as usize].data.clone();
            tape.accumulate(a as usize, |buf| {
                for ((o, &gv), &x) in buf.iter_mut().zip(g).zip(&va) {
                    if x > c {
                        *o += gv;
                    }
                }
            });
        }
        Op::Matmul(a, b) => {
            let (m, k) = {
                let s = &tape.nodes[a as usize].shape;
                (s[0], s[1])
            };
            let n = tape.nodes[b as usize].shape[1];
            if tape.nodes[a as usize].tracked {
                let bt = transpose(&tape.nodes[b as usize].data, k, n);
                tape.accumulate(a as usize, |buf| mm_acc(g, &bt, m, n, k, buf));
            }
            if tape.nodes[b as usize].tracked {
                let at = transpose(&tape.nodes[a as usize].data, m, k);
                tape.accumulate(b as usize, |buf| mm_acc(&at, g, k, m, n, buf));
            }
        }
        Op::Transpose(a) => {
            let s = tape.nodes[id].shape.clone();
            let gt = transpose(g, s[0], s[1]);
            tape.accumulate(a as usize, |buf| {
                for (o, &gv) in buf.iter_mut().zip(&gt) {
                    *o += gv;
                }
            });
        }
        Op::Concat(parts, axis) => {
            let out_shape = tape.nodes[id].shape.clone();
            if axis == 0 || out_shape.len() == 1 {
                let mut off = 0;
                for pid in parts {
                    let len = tape.nodes[pid as usize].data.len();
                    let seg = &g[off..off + len];
                    tape.accumulate(pid as usize, |buf| {
                        for (o, &gv) in buf.iter_mut().zip(seg) {
                            *o += gv;
                        }
                    });
                    off += len;
                }
            } else {
                let rows = out_shape[0];
                let out_cols = out_shape[1];
                let mut col0 = 0;
                for pid in parts {
                    let pc = tape.nodes[pid as usize].shape[1];
                    let mut seg = vec![0.0; rows * pc];
                    for r in 0..rows {
                        seg[r * pc..(r + 1) * pc]
                            .copy_from_slice(&g[r * out_cols + col0..r * out_cols + col0 + pc]);
                    }
                    tape.accumulate(pid as usize, |buf| {
                        for (o, &gv) in buf.iter_mut().zip(&seg) {
                            *o += gv;
                        }
                    });
                    col0 += pc;
                }
            }
        }
        Op::Slice(a, axis, lo, hi) => {
            let sa = tape.nodes[a as usize].shape.clone();
            if axis == 0 || sa.len() == 1 {
                let row: usize = sa[1..].iter().product::<usize>().max(1);
                tape.accumulate(a as usize, |buf| {
                    for (o, &gv) in buf[lo * row..hi * row].iter_mut().zip(g) {
                        *o += gv;
                    }
                });
            } else {
                let rows = sa[0];
                let cols = sa[1];
                let w = hi - lo;
                tape.accumulate(a as usize, |buf| {
                    for r in 0..rows {
                        for c in 0..w {
                            buf[r * cols + lo + c] += g[r * w + c];
                        }
                    }
                });
            }
        }
        Op::Reshape(a) => {
            tape.accumulate(a as usize, |buf| {
                for (o, &gv) in buf.iter_mut().zip(g) {
                    *o += gv;
                }
            });
        }
        Op::Sum(a) => {
            let gv = g[0];
            tape.accumulate(a as usize, |buf| {
                for o in buf.iter_mut() {
                    *o += gv;
                }
            });
        }
        Op::Mean(a) => {
            let n = tape.nodes[a as usize].data.len() as f64;
            let gv = g[0] / n;
            tape.accumulate(a as usize, |buf| {
                for o in buf.iter_mut() {
                    *o += gv;
                }
            });
        }
        Op::Silu(a) => {
            let va: Vec<f64> = tape.nodes[a as usize].data.clone();
            tape.accumulate(a as usize, |buf| {
                for ((o, &gv), &x) in buf.iter_mut().zip(g).zip(&va) {
                    let s = sigmoid(x);
                    *o += gv * (s + x * s * (1.0 - s));
                }
            });
        }
        Op::Sigmoid(a) => {
            let y: Vec<f64> = tape.nodes[id].data.clone();
            tape.accumulate(a as usize, |buf| {
                for ((o, &gv), &yv) in buf.iter_mut().zip(g).zip(&y) {
                    *o += gv * yv * (1.0 - yv);
                }
            });
        }
        Op::Sqrt(a) => {
            let y: Vec<f64> = tape.nodes[id].data.clone();
            tape.accumulate(a as usize, |buf| {
                for ((o, &gv), &yv) in buf.iter_mut().zip(g).zip(&y) {
                    *o += gv * 0.5 / yv.max(1e-12);
                }
            });
        }
        Op::SoftmaxRows(a) => {
            let y: Vec<f64> = tape.nodes[id].data.clone();
            let (rows, cols) = rows_of(&tape.nodes[id].shape);
            tape.accumulate(a as usize, |buf| {
                for r in 0..rows {
                    let yr = &y[r * cols..(r + 1) * cols];
                    let gr = &g[r * cols..(r + 1) * cols];
                    let dot: f64 = yr.iter().zip(gr).map(|(&yv, &gv)| yv * gv).sum();
                    for (o, (&yv, &gv)) in
                        buf[r * cols..(r + 1) * cols].iter_mut().zip(yr.iter().zip(gr))
                    {
                        *o += yv * (gv - dot);
                    }
                }
            });
        }
        Op::LogSoftmaxRows(a) => {
            let y: Vec<f64> = tape.nodes[id].data.clone();
            let (rows, cols) = rows_of(&tape.nodes[id].shape);
            tape.accumulate(a as usize, |buf| {
                for r in 0..rows {
                    let yr = &y[r * cols..(r + 1) * cols];
                    let gr = &g[r * cols..(r + 1) * cols];
                    let gsum: f64 = gr.iter().sum();
                    for (o, (&yv, &gv)) in
                        buf[r * cols..(r + 1) * cols].iter_mut().zip(yr.iter().zip(gr))
                    {
                        *o += gv - yv.exp() * gsum;
                    }
                }
            });
        }
        Op::LayerNormRows(a, eps) => {
            let va: Vec<f64> = tape.nodes[a as usize].data.clone();
            let (rows, cols) = rows_of(&tape.nodes[id].shape);
            let y: Vec<f64> = tape.nodes[id].data.clone();
            tape.accumulate(a as usize, |buf| {
                let n = cols as f64;
                for r in 0..rows {
                    let xr = &va[r * cols..(r + 1) * cols];
                    let yr = &y[r * cols..(r + 1) * cols];
                    let gr = &g[r * cols..(r + 1) * cols];
                    let mu = xr.iter().sum::<f64>() / n;
                    let var = xr.iter().map(|&x| (x - mu) * (x - mu)).sum::<f64>() / n;
                    let inv = 1.0 / (var + eps).sqrt();
                    let gmean = gr.iter().sum::<f64>() / n;
                    let gydot = gr.iter().zip(yr).map(|(&gv, &yv)| gv * yv).sum::<f64>() / n;
                    for (o, (&gv, &yv)) in
                        buf[r * cols..(r + 1) * cols].iter_mut().zip(gr.iter().zip(yr))
                    {
                        *o += inv * (gv - gmean - yv * gydot);
                    }
                }
            });
        }
        Op::Cross3(a, b) => {
            let va: Vec<f64> = tape.nodes[a as usize].data.clone();
            let vb: Vec<f64> = tape.nodes[b as usize].data.clone();
            // grad_a = b x g, grad_b = g x a
            tape.accumulate(a as usize, |buf| {
                for i in (0..va.len()).step_by(3) {
                    let (b1, b2, b3) = (vb[i], vb[i + 1], vb[i + 2]);
                    let (g1, g2, g3) = (g[i], g[i + 1], g[i + 2]);
                    buf[i] += b2 * g3 - b3 * g2;
                    buf[i + 1] += b3 * g1 - b1 * g3;
                    buf[i + 2] += b1 * g2 - b2 * g1;
                }
            });
            tape.accumulate(b as usize, |buf| {
                for i in (0..va.len()).step_by(3) {
                    let (a1, a2, a3) = (va[i], va[i + 1], va[i + 2]);
                    let (g1, g2, g3) = (g[i], g[i + 1], g[i + 2]);
                    buf[i] += g2 * a3 - g3 * a2;
                    buf[i + 1] += g3 * a1 - g1 * a3;
                    buf[i + 2] += g1 * a2 - g2 * a1;
                }
            });
        }
        Op::L2NormRows(a) => {
            let va: Vec<f64> = tape.nodes[a as usize].data.clone();
            let y: Vec<f64> = tape.nodes[id].data.clone();
            let cols = va.len() / y.len();
            tape.accumulate(a as usize, |buf| {
                for (r, &norm) in y.iter().enumerate() {
                    let inv = g[r] / norm.max(1e-12);
                    for c in 0..cols {
                        buf[r * cols + c] += va[r * cols + c] * inv;
                    }
                }
            });
        }
        Op::Rbf(a, spec) => {
            let va: Vec<f64> = tape.nodes[a as usize].data.clone();
            let y: Vec<f64> = tape.nodes[id].data.clone();
            let nb = spec.n_basis;
            let inv_w2 = 1.0 / (spec.width * spec.width);
            tape.accumulate(a as usize, |buf| {
                for (r, &d) in va.iter().enumerate() {
                    let mut acc = 0.0;
                    for k in 0..nb {
                        let mu = spec.center(k);
                        acc += g[r * nb + k] * y[r * nb + k] * (-(d - mu) * inv_w2);
                    }
                    buf[r] += acc;
                }
            });
        }
    }
}

/// Accumulate `sign * g` into a parent, summing when the parent was a
/// broadcast single element.
fn bw_ew_signed(tape: &mut Tape, parent: usize, g: &[f64], sign: f64) {
    let plen = tape.nodes[parent].data.len();
    tape.accumulate(parent, |buf| {
        if plen == g.len() {
            for (o, &gv) in buf.iter_mut().zip(g) {
                *o += sign * gv;
            }
        } else {
            buf[0] += sign * g.iter().sum::<f64>();
        }
    });
}

/// Accumulate an elementwise gradient whose local derivative is the (possibly
/// broadcast) vector `w`: used for mul/div.
fn bw_ew_with(tape: &mut Tape, parent: usize, g: &[f64], w: &[f64]) {
    let plen = tape.nodes[parent].data.len();
    tape.accumulate(parent, |buf| {
        if plen == g.len() {
            for (i, (o, &gv)) in buf.iter_mut().zip(g).enumerate() {
                let wv = if w.len() == 1 { w[0] } else { w[i] };
                *o += wv * gv;
            }
        } else {
            let mut s = 0.0;
            for (i, &gv) in g.iter().enumerate() {
                let wv = if w.len() == 1 { w[0] } else { w[i] };
                s += wv * gv;
            }
            buf[0] += s;
        }
    });
}
