use std::collections::BTreeMap;

use crate::error::{CoreError, Result};
use crate::scalar::Scalar;

/// Dense row-major tensor over a [`Scalar`] type.
///
/// Invariants: the product of `shape` equals `data.len()`, and every value is
/// finite. Construction through [`TensorBase::new`] enforces both.
#[derive(Debug, Clone, PartialEq)]
pub struct TensorBase<S> {
    shape: Vec<usize>,
    data: Vec<S>,
}

impl<S: Scalar> TensorBase<S> {
    pub fn new(shape: Vec<usize>, data: Vec<S>) -> Result<Self> {
        let expected: usize = shape.iter().product();
        if expected != data.len() {
            return Err(CoreError::InvalidDimension {
                context: "tensor construction",
                detail: format!("shape {shape:?} implies {expected} values, got {}", data.len()),
            });
        }
        if !data.iter().all(|v| v.is_finite()) {
            return Err(CoreError::NonFinite { context: "tensor construction" });
        }
        Ok(Self { shape, data })
    }

    /// 1-D tensor from raw values.
    pub fn vector(data: Vec<S>) -> Result<Self> {
        let len = data.len();
        Self::new(vec![len], data)
    }

    pub fn zeros(shape: Vec<usize>) -> Self {
        let len = shape.iter().product();
        Self { shape, data: vec![S::zero(); len] }
    }

    /// Internal constructor for values produced by already-validated math.
    pub(crate) fn from_parts(shape: Vec<usize>, data: Vec<S>) -> Self {
        debug_assert_eq!(shape.iter().product::<usize>(), data.len());
        Self { shape, data }
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn data(&self) -> &[S] {
        &self.data
    }

    pub(crate) fn data_mut(&mut self) -> &mut [S] {
        &mut self.data
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn is_vector(&self) -> bool {
        self.shape.len() == 1
    }

    /// Borrow the values of a 1-D tensor.
    pub fn as_vector(&self) -> Result<&[S]> {
        if self.is_vector() {
            Ok(&self.data)
        } else {
            Err(CoreError::InvalidDimension {
                context: "vector access",
                detail: format!("expected rank-1 tensor, got shape {:?}", self.shape),
            })
        }
    }

    /// Rows of a 2-D tensor.
    pub fn rows(&self) -> Result<usize> {
        self.dim2().map(|(r, _)| r)
    }

    /// Columns of a 2-D tensor.
    pub fn cols(&self) -> Result<usize> {
        self.dim2().map(|(_, c)| c)
    }

    pub(crate) fn dim2(&self) -> Result<(usize, usize)> {
        if self.shape.len() == 2 {
            Ok((self.shape[0], self.shape[1]))
        } else {
            Err(CoreError::InvalidDimension {
                context: "matrix access",
                detail: format!("expected rank-2 tensor, got shape {:?}", self.shape),
            })
        }
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    fn require_same_shape(&self, other: &Self, context: &'static str) -> Result<()> {
        if self.shape == other.shape {
            Ok(())
        } else {
            Err(CoreError::ShapeMismatch {
                context,
                left: self.shape.clone(),
                right: other.shape.clone(),
            })
        }
    }

    pub fn add(&self, other: &Self) -> Result<Self> {
        self.require_same_shape(other, "tensor add")?;
        let data = self.data.iter().zip(&other.data).map(|(&a, &b)| a + b).collect();
        Ok(Self::from_parts(self.shape.clone(), data))
    }

    pub fn sub(&self, other: &Self) -> Result<Self> {
        self.require_same_shape(other, "tensor sub")?;
        let data = self.data.iter().zip(&other.data).map(|(&a, &b)| a - b).collect();
        Ok(Self::from_parts(self.shape.clone(), data))
    }

    pub fn scale(&self, factor: S) -> Self {
        let data = self.data.iter().map(|&a| a * factor).collect();
        Self::from_parts(self.shape.clone(), data)
    }

    pub fn map(&self, f: impl Fn(S) -> S) -> Self {
        let data = self.data.iter().map(|&a| f(a)).collect();
        Self::from_parts(self.shape.clone(), data)
    }

    /// Accumulate `other * factor` into self, in place.
    pub(crate) fn axpy(&mut self, factor: S, other: &Self) -> Result<()> {
        self.require_same_shape(other, "tensor axpy")?;
        for (a, &b) in self.data.iter_mut().zip(&other.data) {
            *a = *a + factor * b;
        }
        Ok(())
    }

    /// Largest absolute element-wise difference; shapes must agree.
    pub fn max_abs_diff(&self, other: &Self) -> Result<S> {
        self.require_same_shape(other, "tensor diff")?;
        let mut best = S::zero();
        for (&a, &b) in self.data.iter().zip(&other.data) {
            let d = (a - b).abs();
            if d > best {
                best = d;
            }
        }
        Ok(best)
    }
}

/// Named map of parameters with deterministic (name-sorted) iteration order.
///
/// Shapes are fixed at insertion; value updates must preserve them.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ParamStoreBase<S> {
    params: BTreeMap<String, TensorBase<S>>,
}

impl<S: Scalar> ParamStoreBase<S> {
    pub fn new() -> Self {
        Self { params: BTreeMap::new() }
    }

    pub fn insert(&mut self, name: impl Into<String>, tensor: TensorBase<S>) -> Result<()> {
        let name = name.into();
        if self.params.contains_key(&name) {
            return Err(CoreError::DuplicateParameter { name });
        }
        self.params.insert(name, tensor);
        Ok(())
    }

    pub fn get(&self, name: &str) -> Result<&TensorBase<S>> {
        self.params
            .get(name)
            .ok_or_else(|| CoreError::UnknownParameter { name: name.to_string() })
    }

    /// Mutable access to a parameter's values; the shape stays fixed.
    pub fn values_mut(&mut self, name: &str) -> Result<&mut [S]> {
        self.params
            .get_mut(name)
            .map(|t| t.data_mut())
            .ok_or_else(|| CoreError::UnknownParameter { name: name.to_string() })
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &TensorBase<S>)> {
        self.params.iter().map(|(k, v)| (k.as_str(), v))
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.params.keys().map(|k| k.as_str())
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn contains(&self, name: &str) -> bool {
        self.params.contains_key(name)
    }

    /// A store with the same names and shapes, all values zero.
    pub fn zeros_like(&self) -> Self {
        let params = self
            .params
            .iter()
            .map(|(k, v)| (k.clone(), TensorBase::zeros(v.shape().to_vec())))
            .collect();
        Self { params }
    }

    /// Total number of scalar values across all parameters.
    pub fn value_count(&self) -> usize {
        self.params.values().map(|t| t.len()).sum()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rejects_shape_data_disagreement() {
        let err = TensorBase::<f64>::new(vec![2, 3], vec![0.0; 5]).unwrap_err();
        assert!(matches!(err, CoreError::InvalidDimension { .. }));
    }

    #[test]
    fn rejects_non_finite_values() {
        let err = TensorBase::new(vec![2], vec![1.0, f64::NAN]).unwrap_err();
        assert_eq!(err, CoreError::NonFinite { context: "tensor construction" });
    }

    #[test]
    fn add_requires_matching_shapes() {
        let a = TensorBase::vector(vec![1.0, 2.0]).unwrap();
        let b = TensorBase::<f64>::zeros(vec![3]);
        assert!(matches!(a.add(&b), Err(CoreError::ShapeMismatch { .. })));
    }

    #[test]
    fn param_store_iterates_in_name_order() {
        let mut store = ParamStoreBase::new();
        store.insert("b", TensorBase::<f64>::zeros(vec![1])).unwrap();
        store.insert("a", TensorBase::<f64>::zeros(vec![2])).unwrap();
        store.insert("c", TensorBase::<f64>::zeros(vec![3])).unwrap();
        let names: Vec<_> = store.names().collect();
        assert_eq!(names, ["a", "b", "c"]);
    }

    #[test]
    fn param_store_rejects_duplicates() {
        let mut store = ParamStoreBase::new();
        store.insert("w", TensorBase::<f64>::zeros(vec![1])).unwrap();
        let err = store.insert("w", TensorBase::<f64>::zeros(vec![1])).unwrap_err();
        assert!(matches!(err, CoreError::DuplicateParameter { .. }));
    }

    #[test]
    fn generic_over_f32() {
        let t = TensorBase::<f32>::vector(vec![1.0, -2.0]).unwrap();
        assert_eq!(t.scale(2.0).data(), &[2.0f32, -4.0]);
    }
}
