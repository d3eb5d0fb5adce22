use nalgebra::{DMatrix, DVector};

use crate::error::{check_len, Result};
use crate::kernel::{fused_products, CmvpOptions, Dataset, HyperParams, ProductKinds};

/// A symmetric linear map available only through products.
pub trait LinearOperator: Sync {
    fn dim(&self) -> usize;

    /// Applies the operator to every input; implementations may share work across inputs.
    fn apply_many(&self, inputs: &[&[f64]]) -> Result<Vec<Vec<f64>>>;

    fn apply(&self, v: &[f64]) -> Result<Vec<f64>> {
        Ok(self.apply_many(&[v])?.pop().expect("one input"))
    }

    /// Whether inner products should use a fixed reduction order.
    fn deterministic(&self) -> bool {
        true
    }
}

/// `K(θ)` over a dataset, applied matrix-free.
#[derive(Clone, Copy, Debug)]
pub struct CovarianceOperator<'a> {
    pub theta: HyperParams,
    pub data: &'a Dataset,
    pub options: CmvpOptions,
}

impl<'a> CovarianceOperator<'a> {
    pub fn new(theta: HyperParams, data: &'a Dataset, options: CmvpOptions) -> Self {
        Self { theta, data, options }
    }
}

impl LinearOperator for CovarianceOperator<'_> {
    fn dim(&self) -> usize {
        self.data.n()
    }

    fn apply_many(&self, inputs: &[&[f64]]) -> Result<Vec<Vec<f64>>> {
        Ok(fused_products(&self.theta, self.data, inputs, ProductKinds::COVARIANCE, &self.options)?
            .covariance)
    }

    fn deterministic(&self) -> bool {
        self.options.deterministic
    }
}

/// `A + shift·I`.
pub struct ShiftedOperator<'a, A: LinearOperator> {
    pub inner: &'a A,
    pub shift: f64,
}

impl<A: LinearOperator> LinearOperator for ShiftedOperator<'_, A> {
    fn dim(&self) -> usize {
        self.inner.dim()
    }

    fn apply_many(&self, inputs: &[&[f64]]) -> Result<Vec<Vec<f64>>> {
        let mut out = self.inner.apply_many(inputs)?;
        for (o, v) in out.iter_mut().zip(inputs) {
            for (a, b) in o.iter_mut().zip(v.iter()) {
                *a += self.shift * b;
            }
        }
        Ok(out)
    }

    fn deterministic(&self) -> bool {
        self.inner.deterministic()
    }
}

/// An explicitly stored matrix; used for small problems and in tests.
pub struct DenseOperator(pub DMatrix<f64>);

impl LinearOperator for DenseOperator {
    fn dim(&self) -> usize {
        self.0.nrows()
    }

    fn apply_many(&self, inputs: &[&[f64]]) -> Result<Vec<Vec<f64>>> {
        inputs
            .iter()
            .map(|v| {
                check_len("v", self.dim(), v.len())?;
                Ok((&self.0 * DVector::from_column_slice(v)).as_slice().to_vec())
            })
            .collect()
    }
}
