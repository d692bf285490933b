//! Named collections of trainable tensors.
//!
//! Gradients and optimizer accumulators reuse the parameter struct itself
//! (`zeros_like`), so all three always share names, order and shapes.

use crate::error::{Error, Result};
use crate::numerics::Matrix;
use crate::scalar::Scalar;

pub trait ParamSet<T: Scalar>: Clone {
    /// Push every tensor, in a fixed order, with `prefix` prepended to its name.
    fn collect<'a>(&'a self, prefix: &str, out: &mut Vec<(String, &'a Matrix<T>)>);

    fn collect_mut<'a>(&'a mut self, prefix: &str, out: &mut Vec<(String, &'a mut Matrix<T>)>);

    fn tensors(&self) -> Vec<(String, &Matrix<T>)> {
        let mut out = Vec::new();
        self.collect("", &mut out);
        out
    }

    fn tensors_mut(&mut self) -> Vec<(String, &mut Matrix<T>)> {
        let mut out = Vec::new();
        self.collect_mut("", &mut out);
        out
    }

    fn num_params(&self) -> usize {
        self.tensors().iter().map(|(_, m)| m.len()).sum()
    }

    fn zeros_like(&self) -> Self {
        let mut z = self.clone();
        z.fill(T::zero());
        z
    }

    fn fill(&mut self, v: T) {
        for (_, m) in self.tensors_mut() {
            m.fill(v);
        }
    }

    fn scale(&mut self, s: T) {
        for (_, m) in self.tensors_mut() {
            m.scale(s);
        }
    }

    fn add_assign(&mut self, other: &Self) {
        let src = other.tensors();
        for ((_, dst), (_, s)) in self.tensors_mut().into_iter().zip(src) {
            dst.add_assign(s);
        }
    }

    /// Euclidean norm over all entries, accumulated in tensor order.
    fn global_norm(&self) -> T {
        self.tensors()
            .iter()
            .map(|(_, m)| m.frobenius_sq())
            .fold(T::zero(), |a, b| a + b)
            .sqrt()
    }

    fn is_finite(&self) -> bool {
        self.tensors().iter().all(|(_, m)| m.is_finite())
    }

    fn flatten(&self) -> Vec<T> {
        let mut out = Vec::with_capacity(self.num_params());
        for (_, m) in self.tensors() {
            out.extend_from_slice(m.as_slice());
        }
        out
    }

    fn assign_flat(&mut self, flat: &[T]) -> Result<()> {
        let n = self.num_params();
        if flat.len() != n {
            return Err(Error::Dimension {
                context: "ParamSet::assign_flat",
                expected: n,
                actual: flat.len(),
            });
        }
        let mut offset = 0;
        for (_, m) in self.tensors_mut() {
            let len = m.len();
            m.as_mut_slice().copy_from_slice(&flat[offset..offset + len]);
            offset += len;
        }
        Ok(())
    }

    /// Name of every tensor paired with `flatten` offsets; used to report
    /// which parameter a flat index belongs to.
    fn layout(&self) -> Vec<(String, usize, usize)> {
        let mut offset = 0;
        self.tensors()
            .into_iter()
            .map(|(name, m)| {
                let start = offset;
                offset += m.len();
                (name, start, m.len())
            })
            .collect()
    }
}
