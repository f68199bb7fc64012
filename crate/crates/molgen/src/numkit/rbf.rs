//! Gaussian radial basis embedding of interatomic distances.

/// Evenly spaced Gaussian bumps on `[d_min, d_max]`.
///
/// Component `k` of the embedding of a distance `d` is
/// `exp(-(d - mu_k)^2 / (2 w^2))` with `mu_k` evenly spaced.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RbfSpec {
    pub n_basis: usize,
    pub d_min: f64,
    pub d_max: f64,
    pub width: f64,
}

impl RbfSpec {
    pub fn new(n_basis: usize, d_min: f64, d_max: f64, width: f64) -> Self {
        assert!(n_basis >= 2, "RbfSpec: n_basis must be >= 2, got {n_basis}");
        assert!(d_min < d_max, "RbfSpec: d_min {d_min} must be < d_max {d_max}");
        assert!(width > 0.0, "RbfSpec: width must be positive, got {width}");
        RbfSpec { n_basis, d_min, d_max, width }
    }

    pub fn center(&self, k: usize) -> f64 {
        self.d_min + (self.d_max - self.d_min) * k as f64 / (self.n_basis - 1) as f64
    }

    pub fn eval_into(&self, d: f64, out: &mut [f64]) {
        debug_assert_eq!(out.len(), self.n_basis);
        let inv = 1.0 / (2.0 * self.width * self.width);
        for (k, o) in out.iter_mut().enumerate() {
            let dd = d - self.center(k);
            *o = (-dd * dd * inv).exp();
        }
    }

    pub fn eval(&self, d: f64) -> Vec<f64> {
        let mut out = vec![0.0; self.n_basis];
        self.eval_into(d, &mut out);
        out
    }
}

impl Default for RbfSpec {
    /// 32 bumps on 0..8 angstroms: covers bonded and near-nonbonded
    /// distances; width is the basis spacing.
    fn default() -> Self {
        RbfSpec::new(32, 0.0, 8.0, 8.0 / 32.0)
    }
}
