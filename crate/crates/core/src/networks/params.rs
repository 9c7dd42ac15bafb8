use crate::error::{ensure, Error, Result};
use crate::numerics::{Tape, Tensor, Var};

/// One named trainable tensor.
#[derive(Clone, Debug, PartialEq)]
pub struct Parameter {
    pub path: String,
    pub value: Tensor,
    /// Whether decoupled weight decay applies (matrices yes; gains, biases
    /// and scalar coefficients no).
    pub decay: bool,
}

/// Ordered collection of a model's parameters.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Parameters {
    entries: Vec<Parameter>,
}

impl Parameters {
    pub fn new() -> Self {
        Parameters::default()
    }

    /// Appends a parameter and returns its index.
    pub fn push(&mut self, path: impl Into<String>, value: Tensor, decay: bool) -> usize {
        let path = path.into();
        assert!(self.index_of(&path).is_none(), "duplicate parameter {path}");
        self.entries.push(Parameter { path, value, decay });
        self.entries.len() - 1
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn iter(&self) -> std::slice::Iter<'_, Parameter> {
        self.entries.iter()
    }

    pub fn iter_mut(&mut self) -> std::slice::IterMut<'_, Parameter> {
        self.entries.iter_mut()
    }

    pub fn index_of(&self, path: &str) -> Option<usize> {
        self.entries.iter().position(|p| p.path == path)
    }

    pub fn get(&self, path: &str) -> Option<&Tensor> {
        self.index_of(path).map(|i| &self.entries[i].value)
    }

    pub fn get_mut(&mut self, path: &str) -> Option<&mut Tensor> {
        let i = self.index_of(path)?;
        Some(&mut self.entries[i].value)
    }

    pub fn at(&self, i: usize) -> &Parameter {
        &self.entries[i]
    }

    /// Number of trainable scalars.
    pub fn count(&self) -> usize {
        self.entries.iter().map(|p| p.value.len()).sum()
    }

    /// Registers every parameter on `tape`, in order.
    pub fn bind(&self, tape: &mut Tape) -> Vec<Var> {
        self.entries.iter().map(|p| tape.param(p.value.clone())).collect()
    }

    /// Registers every parameter as a constant (evaluation only).
    pub fn bind_frozen(&self, tape: &mut Tape) -> Vec<Var> {
        self.entries.iter().map(|p| tape.constant(p.value.clone())).collect()
    }

    pub fn flatten(&self) -> Vec<f64> {
        self.entries
            .iter()
            .flat_map(|p| p.value.data().iter().copied())
            .collect()
    }

    pub fn set_flat(&mut self, flat: &[f64]) -> Result<()> {
        ensure!(
            flat.len() == self.count(),
            "expected {} values, got {}",
            self.count(),
            flat.len()
        );
        let mut off = 0;
        for p in &mut self.entries {
            let n = p.value.len();
            p.value.data_mut().copy_from_slice(&flat[off..off + n]);
            off += n;
        }
        Ok(())
    }

    /// Checks that `other` has the same paths and shapes, in order.
    pub fn check_layout(&self, other: &Parameters) -> Result<()> {
        if self.len() != other.len() {
            return Err(Error::contract(format!(
                "parameter count mismatch: {} vs {}",
                self.len(),
                other.len()
            )));
        }
        for (a, b) in self.entries.iter().zip(&other.entries) {
            ensure!(
                a.path == b.path && a.value.shape() == b.value.shape(),
                "parameter layout mismatch at {} {:?} vs {} {:?}",
                a.path,
                a.value.shape(),
                b.path,
                b.value.shape()
            );
        }
        Ok(())
    }

    /// Replaces values with those of `other`, which must share the layout.
    pub fn load(&mut self, other: &Parameters) -> Result<()> {
        self.check_layout(other)?;
        for (a, b) in self.entries.iter_mut().zip(&other.entries) {
            a.value = b.value.clone();
        }
        Ok(())
    }
}

/// A model whose parameters an optimizer can update.
pub trait Trainable {
    fn parameters(&self) -> &Parameters;
    fn parameters_mut(&mut self) -> &mut Parameters;
    /// Restores parameter constraints after an optimizer step.
    fn project(&mut self) {}
}

impl Trainable for Parameters {
    fn parameters(&self) -> &Parameters {
        self
    }

    fn parameters_mut(&mut self) -> &mut Parameters {
        self
    }
}

/// Number of trainable scalars in `model`.
pub fn count_parameters<M: Trainable + ?Sized>(model: &M) -> usize {
    model.parameters().count()
}
