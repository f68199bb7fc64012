//! Flat named-array parameter collection and initialization.
//!
//! `ParamStore` is the checkpoint unit: an ordered list of named f64 arrays.
//! Names prefixed `meta.` are bookkeeping (feature flags, size histograms)
//! and are skipped by the optimizer.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use std::collections::HashMap;

#[derive(Clone, Debug, Default)]
pub struct ParamStore {
    names: Vec<String>,
    shapes: Vec<Vec<usize>>,
    data: Vec<Vec<f64>>,
    index: HashMap<String, usize>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, name: &str, shape: Vec<usize>, data: Vec<f64>) {
        assert_eq!(shape.iter().product::<usize>(), data.len(), "param {name}: shape/data mismatch");
        assert!(!self.index.contains_key(name), "duplicate param {name}");
        self.index.insert(name.to_string(), self.names.len());
        self.names.push(name.to_string());
        self.shapes.push(shape);
        self.data.push(data);
    }

    pub fn len(&self) -> usize {
        self.names.len()
    }

    pub fn is_empty(&self) -> bool {
        self.names.is_empty()
    }

    pub fn contains(&self, name: &str) -> bool {
        self.index.contains_key(name)
    }

    pub fn idx(&self, name: &str) -> usize {
        *self.index.get(name).unwrap_or_else(|| panic!("unknown param {name}"))
    }

    pub fn name(&self, i: usize) -> &str {
        &self.names[i]
    }

    pub fn shape(&self, i: usize) -> &[usize] {
        &self.shapes[i]
    }

    pub fn values(&self, i: usize) -> &[f64] {
        &self.data[i]
    }

    pub fn values_mut(&mut self, i: usize) -> &mut [f64] {
        &mut self.data[i]
    }

    pub fn get(&self, name: &str) -> &[f64] {
        self.values(self.idx(name))
    }

    /// Total scalar count across trainable (non-`meta.`) arrays.
    pub fn n_trainable_scalars(&self) -> usize {
        (0..self.len())
            .filter(|&i| !self.names[i].starts_with("meta."))
            .map(|i| self.data[i].len())
            .sum()
    }

    pub fn is_trainable(&self, i: usize) -> bool {
        !self.names[i].starts_with("meta.")
    }

    pub fn set(&mut self, name: &str, data: Vec<f64>) {
        let i = self.idx(name);
        assert_eq!(self.data[i].len(), data.len());
        self.data[i] = data;
    }

    /// Insert or replace a `meta.` array.
    pub fn set_meta(&mut self, name: &str, shape: Vec<usize>, data: Vec<f64>) {
        assert!(name.starts_with("meta."), "set_meta expects a meta. name, got {name}");
        if let Some(&i) = self.index.get(name) {
            self.shapes[i] = shape;
            self.data[i] = data;
        } else {
            self.add(name, shape, data);
        }
    }

    pub fn get_meta(&self, name: &str) -> Option<&[f64]> {
        self.index.get(name).map(|&i| self.data[i].as_slice())
    }
}

/// Semi-orthogonal initialization with gain 1: Gaussian draw followed by
/// Gram-Schmidt over the shorter side.
pub fn orthogonal(rows: usize, cols: usize, rng: &mut ChaCha8Rng) -> Vec<f64> {
    let mut w: Vec<Vec<f64>> = (0..rows)
        .map(|_| (0..cols).map(|_| rng.sample::<f64, _>(StandardNormal)).collect())
        .collect();
    if rows <= cols {
        // orthonormalize rows
        for i in 0..rows {
            for j in 0..i {
                let dot: f64 = (0..cols).map(|k| w[i][k] * w[j][k]).sum();
                for k in 0..cols {
                    w[i][k] -= dot * w[j][k];
                }
            }
            let norm = (0..cols).map(|k| w[i][k] * w[i][k]).sum::<f64>().sqrt().max(1e-12);
            for k in 0..cols {
                w[i][k] /= norm;
            }
        }
    } else {
        // orthonormalize columns
        for i in 0..cols {
            for j in 0..i {
                let dot: f64 = (0..rows).map(|k| w[k][i] * w[k][j]).sum();
                for k in 0..rows {
                    w[k][i] -= dot * w[k][j];
                }
            }
            let norm = (0..rows).map(|k| w[k][i] * w[k][i]).sum::<f64>().sqrt().max(1e-12);
            for k in 0..rows {
                w[k][i] /= norm;
            }
        }
    }
    w.into_iter().flatten().collect()
}
