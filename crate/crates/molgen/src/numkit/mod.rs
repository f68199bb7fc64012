//! Minimal dense-array math with reverse-mode differentiation.
//!
//! Everything real-valued in the model lives on a [`Tape`]: a linear record
//! of operations whose inputs always precede them, so a single reverse sweep
//! computes exact gradients. Tensors are 64-bit throughout; the models here
//! are small and the equivariance/gradient tolerances want double precision.
//!
//! A [`Tensor`] is a cheap copyable handle into one tape. Shape violations
//! are programming errors and panic with the op name and offending shapes.

mod ops;
pub mod rbf;

pub use ops::Op;
pub use rbf::RbfSpec;

/// Handle to a node on a [`Tape`].
#[derive(Clone, Copy, PartialEq, Eq, Debug)]
pub struct Tensor {
    pub(crate) id: u32,
}

pub(crate) struct Node {
    pub shape: Vec<usize>,
    pub data: Vec<f64>,
    pub op: Op,
    /// Whether gradients flow through this node. Constants and anything
    /// derived only from constants stay untracked and cost nothing in the
    /// backward sweep.
    pub tracked: bool,
}

/// Records operations in topological order; `backward` replays them in
/// reverse exactly once per node.
pub struct Tape {
    pub(crate) nodes: Vec<Node>,
    grad_enabled: bool,
    grads: Vec<Option<Vec<f64>>>,
}

impl Tape {
    pub fn new() -> Self {
        Tape { nodes: Vec::new(), grad_enabled: true, grads: Vec::new() }
    }

    /// A tape that records values only; `backward` is not available and
    /// leaves are treated as constants. Used for inference passes.
    pub fn inference() -> Self {
        Tape { nodes: Vec::new(), grad_enabled: false, grads: Vec::new() }
    }

    pub fn grad_enabled(&self) -> bool {
        self.grad_enabled
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub(crate) fn push(&mut self, shape: Vec<usize>, data: Vec<f64>, op: Op, tracked: bool) -> Tensor {
        debug_assert_eq!(shape.iter().product::<usize>(), data.len());
        let id = self.nodes.len() as u32;
        self.nodes.push(Node { shape, data, op, tracked: tracked && self.grad_enabled });
        Tensor { id }
    }

    /// A differentiable leaf (parameter or input).
    pub fn leaf(&mut self, data: Vec<f64>, shape: &[usize]) -> Tensor {
        assert_eq!(
            shape.iter().product::<usize>(),
            data.len(),
            "numkit::leaf: shape {:?} does not match data length {}",
            shape,
            data.len()
        );
        self.push(shape.to_vec(), data, Op::Leaf, true)
    }

    /// A non-differentiable value.
    pub fn constant(&mut self, data: Vec<f64>, shape: &[usize]) -> Tensor {
        assert_eq!(
            shape.iter().product::<usize>(),
            data.len(),
            "numkit::constant: shape {:?} does not match data length {}",
            shape,
            data.len()
        );
        self.push(shape.to_vec(), data, Op::Constant, false)
    }

    pub fn zeros(&mut self, shape: &[usize]) -> Tensor {
        let n = shape.iter().product();
        self.constant(vec![0.0; n], shape)
    }

    pub fn ones(&mut self, shape: &[usize]) -> Tensor {
        let n = shape.iter().product();
        self.constant(vec![1.0; n], shape)
    }

    pub fn scalar_const(&mut self, v: f64) -> Tensor {
        self.constant(vec![v], &[1])
    }

    pub fn shape(&self, t: Tensor) -> &[usize] {
        &self.nodes[t.id as usize].shape
    }

    pub fn value(&self, t: Tensor) -> &[f64] {
        &self.nodes[t.id as usize].data
    }

    pub fn value_scalar(&self, t: Tensor) -> f64 {
        let d = self.value(t);
        assert_eq!(d.len(), 1, "numkit::value_scalar: tensor has {} elements", d.len());
        d[0]
    }

    pub fn is_tracked(&self, t: Tensor) -> bool {
        self.nodes[t.id as usize].tracked
    }

    /// Gradient of the last `backward` loss w.r.t. `t`, if any flowed there.
    /// Absent means identically zero.
    pub fn grad(&self, t: Tensor) -> Option<&[f64]> {
        self.grads.get(t.id as usize).and_then(|g| g.as_deref())
    }

    /// Reverse sweep from a scalar loss. Populates gradient buffers for every
    /// tracked node the loss depends on, visiting each node exactly once in
    /// reverse topological order.
    pub fn backward(&mut self, loss: Tensor) {
        assert!(self.grad_enabled, "numkit::backward: tape built in inference mode");
        assert!(!self.nodes.is_empty(), "numkit::backward: empty tape");
        let lid = loss.id as usize;
        assert_eq!(
            self.nodes[lid].data.len(),
            1,
            "numkit::backward: loss must be scalar, got shape {:?}",
            self.nodes[lid].shape
        );

        self.grads = Vec::new();
        self.grads.resize_with(lid + 1, || None);
        self.grads[lid] = Some(vec![1.0]);

        for id in (0..=lid).rev() {
            if self.grads[id].is_none() || !self.nodes[id].tracked {
                continue;
            }
            let g = self.grads[id].take().unwrap();
            ops::backward_step(self, id, &g);
            self.grads[id] = Some(g);
        }
    }

    pub(crate) fn accumulate(&mut self, id: usize, contrib: impl FnOnce(&mut [f64])) {
        if !self.nodes[id].tracked {
            return;
        }
        let n = self.nodes[id].data.len();
        let buf = self.grads[id].get_or_insert_with(|| vec![0.0; n]);
        contrib(buf);
    }
}

impl Default for Tape {
    fn default() -> Self {
        Self::new()
    }
}

/// Central-difference gradient oracle. Evaluates `f` with each input entry
/// perturbed by `±h` and never touches the tape's backward pass, so it stays
/// an independent check on it.
pub mod check {
    /// `f` maps the full set of input buffers to a scalar.
    pub fn central_diff<F>(f: F, inputs: &[Vec<f64>], h: f64) -> Vec<Vec<f64>>
    where
        F: Fn(&[Vec<f64>]) -> f64,
    {
        let mut grads = Vec::with_capacity(inputs.len());
        let mut work: Vec<Vec<f64>> = inputs.to_vec();
        for i in 0..inputs.len() {
            let mut g = vec![0.0; inputs[i].len()];
            for j in 0..inputs[i].len() {
                let orig = work[i][j];
                work[i][j] = orig + h;
                let fp = f(&work);
                work[i][j] = orig - h;
                let fm = f(&work);
                work[i][j] = orig;
                g[j] = (fp - fm) / (2.0 * h);
            }
            grads.push(g);
        }
        grads
    }

    /// Largest relative error between an analytic and a reference gradient,
    /// with an absolute floor so near-zero entries compare sanely.
    pub fn max_rel_err(analytic: &[f64], reference: &[f64]) -> f64 {
        assert_eq!(analytic.len(), reference.len());
        analytic
            .iter()
            .zip(reference)
            .map(|(&a, &r)| (a - r).abs() / r.abs().max(a.abs()).max(1e-6))
            .fold(0.0, f64::max)
    }
}
