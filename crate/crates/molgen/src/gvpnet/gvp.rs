//! The cross-product geometric vector perceptron.
//!
//! Vector features are kept as three parallel `[rows, channels]` tensors so
//! channel mixing is plain 2-D matmul per component. Scalar outputs are
//! rotation-invariant; vector outputs are equivariant under proper rotations
//! and, through the cross-product channels, deliberately not under
//! reflections.

use crate::numkit::{Tape, Tensor};

/// Vector features: x/y/z components, each `[rows, channels]`.
#[derive(Clone, Copy)]
pub struct VecFeat {
    pub x: Tensor,
    pub y: Tensor,
    pub z: Tensor,
}

impl VecFeat {
    pub fn zeros(tape: &mut Tape, rows: usize, channels: usize) -> Self {
        VecFeat {
            x: tape.zeros(&[rows, channels]),
            y: tape.zeros(&[rows, channels]),
            z: tape.zeros(&[rows, channels]),
        }
    }

    /// Split an `[n, 3]` tensor into single-channel components.
    pub fn from_points(tape: &mut Tape, pts: Tensor) -> Self {
        VecFeat {
            x: tape.slice(pts, 1, 0, 1),
            y: tape.slice(pts, 1, 1, 2),
            z: tape.slice(pts, 1, 2, 3),
        }
    }

    /// Reassemble single-channel components into `[n, 3]`.
    pub fn to_points(&self, tape: &mut Tape) -> Tensor {
        tape.concat(&[self.x, self.y, self.z], 1)
    }

    pub fn map2(&self, tape: &mut Tape, other: &VecFeat, f: impl Fn(&mut Tape, Tensor, Tensor) -> Tensor) -> VecFeat {
        VecFeat {
            x: f(tape, self.x, other.x),
            y: f(tape, self.y, other.y),
            z: f(tape, self.z, other.z),
        }
    }

    pub fn matmul(&self, tape: &mut Tape, w: Tensor) -> VecFeat {
        VecFeat { x: tape.matmul(self.x, w), y: tape.matmul(self.y, w), z: tape.matmul(self.z, w) }
    }

    pub fn add(&self, tape: &mut Tape, other: &VecFeat) -> VecFeat {
        self.map2(tape, other, |t, a, b| t.add(a, b))
    }

    pub fn concat(&self, tape: &mut Tape, other: &VecFeat) -> VecFeat {
        VecFeat {
            x: tape.concat(&[self.x, other.x], 1),
            y: tape.concat(&[self.y, other.y], 1),
            z: tape.concat(&[self.z, other.z], 1),
        }
    }

    /// Row-wise cross product per channel: `self x other`.
    pub fn cross(&self, tape: &mut Tape, other: &VecFeat) -> VecFeat {
        let cx = {
            let a = tape.mul(self.y, other.z);
            let b = tape.mul(self.z, other.y);
            tape.sub(a, b)
        };
        let cy = {
            let a = tape.mul(self.z, other.x);
            let b = tape.mul(self.x, other.z);
            tape.sub(a, b)
        };
        let cz = {
            let a = tape.mul(self.x, other.y);
            let b = tape.mul(self.y, other.x);
            tape.sub(a, b)
        };
        VecFeat { x: cx, y: cy, z: cz }
    }

    /// Per-channel squared norms `[rows, channels]`.
    pub fn norm_sq(&self, tape: &mut Tape) -> Tensor {
        let xx = tape.mul(self.x, self.x);
        let yy = tape.mul(self.y, self.y);
        let zz = tape.mul(self.z, self.z);
        let s = tape.add(xx, yy);
        tape.add(s, zz)
    }

    /// Per-channel norms with an epsilon floor, safe at exactly-zero vectors.
    pub fn norms(&self, tape: &mut Tape) -> Tensor {
        let sq = self.norm_sq(tape);
        let reg = tape.add_const(sq, 1e-16);
        tape.sqrt(reg)
    }

    /// Scale every channel vector by a matching `[rows, channels]` gate.
    pub fn gate(&self, tape: &mut Tape, g: Tensor) -> VecFeat {
        VecFeat { x: tape.mul(self.x, g), y: tape.mul(self.y, g), z: tape.mul(self.z, g) }
    }
}

/// Broadcast a `[1, k]` row over `rows` rows via a ones matmul, so gradients
/// reduce back onto the row.
pub fn broadcast_row(tape: &mut Tape, row: Tensor, rows: usize) -> Tensor {
    let ones = tape.ones(&[rows, 1]);
    tape.matmul(ones, row)
}

/// `x @ w + b` with `b: [1, out]`.
pub fn linear(tape: &mut Tape, x: Tensor, w: Tensor, b: Tensor) -> Tensor {
    let rows = tape.shape(x)[0];
    let h = tape.matmul(x, w);
    let bb = broadcast_row(tape, b, rows);
    tape.add(h, bb)
}

/// Geometry of one GVP layer.
#[derive(Clone, Copy, Debug)]
pub struct GvpSpec {
    pub in_s: usize,
    pub in_v: usize,
    pub out_s: usize,
    pub out_v: usize,
    /// Vector channels after the down-projection.
    pub hidden_v: usize,
    /// Cross-product channels appended to the hidden stack (0 disables the
    /// chirality-sensitive branch).
    pub cross: usize,
    /// SiLU on the scalar output.
    pub scalar_act: bool,
    /// Sigmoid on the vector gate; identity otherwise.
    pub sigmoid_gate: bool,
}

impl GvpSpec {
    /// Width of the internal scalar path (the gate source when `out_s` is 0).
    pub fn s_mid(&self) -> usize {
        if self.out_s > 0 {
            self.out_s
        } else {
            16
        }
    }
}

/// Tape handles for one GVP's parameters.
#[derive(Clone, Copy)]
pub struct GvpParams {
    pub w_h: Tensor,
    pub w_ca: Tensor,
    pub w_cb: Tensor,
    pub w_m: Tensor,
    pub b_m: Tensor,
    pub w_mu: Tensor,
    pub w_g: Tensor,
    pub b_g: Tensor,
}

/// One GVP forward pass. Returns the scalar output (even when `out_s == 0`,
/// callers just ignore it) and the vector output when `out_v > 0`.
pub fn gvp_forward(
    tape: &mut Tape,
    p: &GvpParams,
    spec: &GvpSpec,
    s_in: Tensor,
    v_in: &VecFeat,
) -> (Tensor, Option<VecFeat>) {
    debug_assert_eq!(tape.shape(s_in)[1], spec.in_s, "gvp: scalar width mismatch");
    debug_assert_eq!(tape.shape(v_in.x)[1], spec.in_v, "gvp: vector width mismatch");
    let vh = v_in.matmul(tape, p.w_h);
    let stack = if spec.cross > 0 {
        let a = vh.matmul(tape, p.w_ca);
        let b = vh.matmul(tape, p.w_cb);
        let cr = a.cross(tape, &b);
        vh.concat(tape, &cr)
    } else {
        vh
    };
    let norms = stack.norms(tape);
    let s_cat = tape.concat(&[s_in, norms], 1);
    let s_mid = linear(tape, s_cat, p.w_m, p.b_m);
    let s_out = if spec.scalar_act { tape.silu(s_mid) } else { s_mid };
    if spec.out_v == 0 {
        return (s_out, None);
    }
    let v_mu = stack.matmul(tape, p.w_mu);
    let gate_pre = linear(tape, s_out, p.w_g, p.b_g);
    let gate = if spec.sigmoid_gate { tape.sigmoid(gate_pre) } else { gate_pre };
    (s_out, Some(v_mu.gate(tape, gate)))
}

/// Scalar layer norm with learned affine plus an equivariant RMS rescale of
/// the vector channels.
pub fn layer_norm_state(
    tape: &mut Tape,
    s: Tensor,
    v: &VecFeat,
    gamma: Tensor,
    beta: Tensor,
) -> (Tensor, VecFeat) {
    let rows = tape.shape(s)[0];
    let normed = tape.layer_norm_rows(s, 1e-5);
    let g = broadcast_row(tape, gamma, rows);
    let b = broadcast_row(tape, beta, rows);
    let scaled = tape.mul(normed, g);
    let s_out = tape.add(scaled, b);

    let d_v = tape.shape(v.x)[1];
    let sq = v.norm_sq(tape);
    let ones_col = tape.constant(vec![1.0 / d_v as f64; d_v], &[d_v, 1]);
    let mean_sq = tape.matmul(sq, ones_col);
    let reg = tape.add_const(mean_sq, 1e-8);
    let rms = tape.sqrt(reg);
    let ones_row = tape.ones(&[1, d_v]);
    let rms_full = tape.matmul(rms, ones_row);
    let v_out = VecFeat {
        x: tape.div(v.x, rms_full),
        y: tape.div(v.y, rms_full),
        z: tape.div(v.z, rms_full),
    };
    (s_out, v_out)
}
