//! Named trainable tensors, their gradients, and the Adam optimizer.

use std::collections::{BTreeMap, HashMap};

use ndarray::{Array1, Array2};
use serde::{Deserialize, Serialize};

use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ParamId(pub usize);

/// Adam moment estimates for every parameter plus the step counter.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct AdamState {
    pub step: u64,
    pub first: Vec<Array2<f64>>,
    pub second: Vec<Array2<f64>>,
}

/// All trainable matrices of a model, addressed by name or [`ParamId`].
#[derive(Debug, Clone, PartialEq, Default)]
pub struct ParameterStore {
    names: Vec<String>,
    values: Vec<Array2<f64>>,
    index: HashMap<String, ParamId>,
    frozen: Vec<bool>,
    // rows kept at zero through every update ([PAD] embedding)
    zero_rows: Vec<Vec<usize>>,
    pub adam: AdamState,
}

impl ParameterStore {
    pub fn new() -> Self {
        Self::default()
    }

    /// Adds a parameter with zeroed optimizer moments.
    pub fn insert(&mut self, name: &str, value: Array2<f64>) -> ParamId {
        assert!(!self.index.contains_key(name), "duplicate parameter `{name}`");
        let id = ParamId(self.values.len());
        self.adam.first.push(Array2::zeros(value.raw_dim()));
        self.adam.second.push(Array2::zeros(value.raw_dim()));
        self.names.push(name.to_string());
        self.values.push(value);
        self.index.insert(name.to_string(), id);
        self.frozen.push(false);
        self.zero_rows.push(Vec::new());
        id
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn id(&self, name: &str) -> Option<ParamId> {
        self.index.get(name).copied()
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.names[id.0]
    }

    pub fn value(&self, id: ParamId) -> &Array2<f64> {
        &self.values[id.0]
    }

    pub fn value_mut(&mut self, id: ParamId) -> &mut Array2<f64> {
        &mut self.values[id.0]
    }

    pub fn get(&self, name: &str) -> Option<&Array2<f64>> {
        self.id(name).map(|id| self.value(id))
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.values.len()).map(ParamId)
    }

    pub fn set_frozen(&mut self, id: ParamId, frozen: bool) {
        self.frozen[id.0] = frozen;
    }

    pub fn is_frozen(&self, id: ParamId) -> bool {
        self.frozen[id.0]
    }

    /// Pins a row at zero: it is zeroed now and after every update.
    pub fn pin_zero_row(&mut self, id: ParamId, row: usize) {
        self.values[id.0].row_mut(row).fill(0.0);
        if !self.zero_rows[id.0].contains(&row) {
            self.zero_rows[id.0].push(row);
        }
    }

    pub fn parameter_count(&self) -> usize {
        self.values.iter().map(|v| v.len()).sum()
    }

    pub fn all_finite(&self) -> bool {
        self.values.iter().all(|v| v.iter().all(|x| x.is_finite()))
    }
}

/// Gradient of one parameter: dense, or a sparse set of rows for embedding
/// lookups.
#[derive(Debug, Clone, PartialEq)]
pub enum Grad {
    Dense(Array2<f64>),
    Rows(BTreeMap<usize, Array1<f64>>),
}

impl Grad {
    fn add_into(&self, target: &mut Array2<f64>, scale: f64) {
        match self {
            Grad::Dense(d) => target.scaled_add(scale, d),
            Grad::Rows(rows) => {
                for (&r, g) in rows {
                    target.row_mut(r).scaled_add(scale, g);
                }
            }
        }
    }

    fn merge(&mut self, other: Grad) {
        match (self, other) {
            (Grad::Dense(a), other) => other.add_into(a, 1.0),
            (Grad::Rows(a), Grad::Rows(b)) => {
                for (r, g) in b {
                    match a.get_mut(&r) {
                        Some(s) => *s += &g,
                        None => {
                            a.insert(r, g);
                        }
                    }
                }
            }
            (slot @ Grad::Rows(_), Grad::Dense(mut d)) => {
                slot.add_into(&mut d, 1.0);
                *slot = Grad::Dense(d);
            }
        }
    }
}

/// One optional gradient per parameter; `None` means zero.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    grads: Vec<Option<Grad>>,
}

impl Gradients {
    pub fn empty(n: usize) -> Self {
        Gradients { grads: vec![None; n] }
    }

    pub fn add(&mut self, id: ParamId, g: Grad) {
        match &mut self.grads[id.0] {
            Some(existing) => existing.merge(g),
            slot @ None => *slot = Some(g),
        }
    }

    pub fn get(&self, id: ParamId) -> Option<&Grad> {
        self.grads[id.0].as_ref()
    }

    /// Dense copy of a parameter's gradient, `None` when it is zero.
    pub fn dense(&self, id: ParamId) -> Option<Array2<f64>> {
        self.grads[id.0].as_ref().map(|g| match g {
            Grad::Dense(d) => d.clone(),
            Grad::Rows(_) => panic!("dense() on a sparse gradient; use dense_for"),
        })
    }

    /// Dense gradient shaped like `like`, zero-filled where absent.
    pub fn dense_for(&self, id: ParamId, like: &Array2<f64>) -> Array2<f64> {
        let mut out = Array2::zeros(like.raw_dim());
        if let Some(g) = &self.grads[id.0] {
            g.add_into(&mut out, 1.0);
        }
        out
    }

    /// Sums `other` into `self` parameter by parameter.
    pub fn accumulate(&mut self, other: Gradients) {
        for (i, g) in other.grads.into_iter().enumerate() {
            if let Some(g) = g {
                self.add(ParamId(i), g);
            }
        }
    }

    pub fn scale(&mut self, factor: f64) {
        for g in self.grads.iter_mut().flatten() {
            match g {
                Grad::Dense(d) => *d *= factor,
                Grad::Rows(rows) => rows.values_mut().for_each(|r| *r *= factor),
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AdamConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig { learning_rate: 1e-4, beta1: 0.9, beta2: 0.999, epsilon: 1e-8 }
    }
}

/// One Adam update with bias correction. Frozen parameters are skipped;
/// missing gradients count as zero.
pub fn adam_step(params: &mut ParameterStore, grads: &Gradients, config: &AdamConfig) -> Result<()> {
    if grads.grads.len() != params.len() {
        return Err(Error::ShapeMismatch(format!("{} gradients for {} parameters", grads.grads.len(), params.len())));
    }
    for id in params.ids() {
        if let Some(Grad::Dense(d)) = grads.get(id) {
            if d.dim() != params.value(id).dim() {
                return Err(Error::ShapeMismatch(format!(
                    "gradient {:?} for parameter `{}` {:?}",
                    d.dim(),
                    params.name(id),
                    params.value(id).dim()
                )));
            }
        }
    }
    params.adam.step += 1;
    let t = params.adam.step as i32;
    let (b1, b2) = (config.beta1, config.beta2);
    let c1 = 1.0 - b1.powi(t);
    let c2 = 1.0 - b2.powi(t);
    for id in params.ids() {
        if params.frozen[id.0] {
            continue;
        }
        let g = grads.dense_for(id, &params.values[id.0]);
        let m = &mut params.adam.first[id.0];
        let v = &mut params.adam.second[id.0];
        let w = &mut params.values[id.0];
        ndarray::Zip::from(w).and(m).and(v).and(&g).for_each(|w, m, v, &g| {
            *m = b1 * *m + (1.0 - b1) * g;
            *v = b2 * *v + (1.0 - b2) * g * g;
            let m_hat = *m / c1;
            let v_hat = *v / c2;
            *w -= config.learning_rate * m_hat / (v_hat.sqrt() + config.epsilon);
        });
        for &r in &params.zero_rows[id.0] {
            params.values[id.0].row_mut(r).fill(0.0);
        }
    }
    Ok(())
}
