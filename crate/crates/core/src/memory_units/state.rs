use super::contextual::ContextualUnitParams;
use crate::error::Result;
use crate::numerics::{attend, normalize};

/// Key/value pairs stored by a contextual unit, in insertion order.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct MemoryState {
    keys: Vec<Vec<f64>>,
    values: Vec<Vec<f64>>,
}

impl MemoryState {
    pub fn new() -> Self {
        MemoryState::default()
    }

    pub fn len(&self) -> usize {
        self.keys.len()
    }

    pub fn is_empty(&self) -> bool {
        self.keys.is_empty()
    }

    pub fn push(&mut self, key: Vec<f64>, value: Vec<f64>) {
        self.keys.push(key);
        self.values.push(value);
    }

    pub fn keys(&self) -> &[Vec<f64>] {
        &self.keys
    }

    pub fn values(&self) -> &[Vec<f64>] {
        &self.values
    }

    /// Drops every pair stored after the first `len`.
    pub fn truncate(&mut self, len: usize) {
        self.keys.truncate(len);
        self.values.truncate(len);
    }

    pub fn retrieve(&self, query: &[f64], beta: f64, value_dim: usize) -> Result<Vec<f64>> {
        attend(query, &self.keys, &self.values, beta, value_dim)
    }
}

fn apply(w: &crate::numerics::Tensor, x: &[f64]) -> Vec<f64> {
    (0..w.rows()).map(|r| crate::numerics::dot(w.row(r), x)).collect()
}

/// A contextual unit consuming one observation at a time.
///
/// After `x_T` arrives the pair `(k_{T-1}, v_{T-1})` becomes computable and
/// is stored, then `y_T` is retrieved with `k_T`. The memory therefore
/// holds `T - 1` pairs after `T` steps.
#[derive(Clone, Debug)]
pub struct StreamingContextualUnit<'a> {
    params: &'a ContextualUnitParams,
    memory: MemoryState,
    kbar: Vec<f64>,
    pending: Option<(Vec<f64>, Vec<f64>)>,
}

impl<'a> StreamingContextualUnit<'a> {
    pub fn new(params: &'a ContextualUnitParams) -> Result<Self> {
        params.validate()?;
        Ok(StreamingContextualUnit {
            params,
            memory: MemoryState::new(),
            kbar: vec![0.0; params.key_dim()],
            pending: None,
        })
    }

    pub fn memory(&self) -> &MemoryState {
        &self.memory
    }

    pub fn step(&mut self, x: &[f64]) -> Result<Vec<f64>> {
        crate::error::ensure!(x.len() == self.params.input_dim(), "input width mismatch");
        let p = self.params;
        let vt = apply(&p.w_psi, x);
        if let Some((k_prev, v_prev)) = self.pending.take() {
            let mixed: Vec<f64> = v_prev.iter().zip(&vt).map(|(a, b)| a + p.lambda_psi * b).collect();
            self.memory.push(k_prev, normalize(&mixed));
        }
        let kt = apply(&p.w_phi, x);
        for (kb, k) in self.kbar.iter_mut().zip(&kt) {
            *kb = k + p.lambda_phi * *kb;
        }
        let key = normalize(&self.kbar);
        let y = self.memory.retrieve(&key, p.beta, p.value_dim())?;
        self.pending = Some((key, vt));
        Ok(y)
    }
}
