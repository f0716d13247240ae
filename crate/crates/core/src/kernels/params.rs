use crate::{Error, Result};

/// Read-only view of one named parameter tensor in row-major order.
#[derive(Debug, Clone, Copy)]
pub struct NamedTensor<'a> {
    pub name: &'static str,
    pub index: Option<usize>,
    pub shape: &'a [usize],
    pub data: &'a [f64],
}

impl NamedTensor<'_> {
    pub fn full_name(&self, prefix: &str) -> String {
        match self.index {
            Some(i) => format!("{prefix}{}.{i}", self.name),
            None => format!("{prefix}{}", self.name),
        }
    }
}

/// A flat collection of parameter tensors. `tensors` and `tensors_mut` must
/// enumerate the same tensors in the same order.
pub trait Parameters {
    fn tensors(&self) -> Vec<NamedTensor<'_>>;
    fn tensors_mut(&mut self) -> Vec<&mut [f64]>;

    fn num_params(&self) -> usize {
        self.tensors().iter().map(|t| t.data.len()).sum()
    }

    fn flatten(&self) -> Vec<f64> {
        self.tensors().iter().flat_map(|t| t.data.iter().copied()).collect()
    }

    fn assign(&mut self, flat: &[f64]) -> Result<()> {
        let total: usize = self.tensors_mut().iter().map(|t| t.len()).sum();
        if flat.len() != total {
            return Err(Error::DimensionMismatch { expected: total, got: flat.len() });
        }
        let mut off = 0;
        for t in self.tensors_mut() {
            t.copy_from_slice(&flat[off..off + t.len()]);
            off += t.len();
        }
        Ok(())
    }

    /// `self += alpha · other`, tensor by tensor.
    fn axpy(&mut self, alpha: f64, other: &Self)
    where
        Self: Sized,
    {
        for (dst, src) in self.tensors_mut().into_iter().zip(other.tensors()) {
            for (d, s) in dst.iter_mut().zip(src.data) {
                *d += alpha * s;
            }
        }
    }

    fn scale(&mut self, alpha: f64) {
        for t in self.tensors_mut() {
            t.iter_mut().for_each(|v| *v *= alpha);
        }
    }

    fn fill_zero(&mut self) {
        for t in self.tensors_mut() {
            t.fill(0.0);
        }
    }

    fn all_finite(&self) -> bool {
        self.tensors().iter().all(|t| t.data.iter().all(|v| v.is_finite()))
    }
}
