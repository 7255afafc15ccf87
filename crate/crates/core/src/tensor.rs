//! Dense row-major `f64` tensors with a leading batch axis.
//!
//! Every tensor handled by the networks is batch-first: `shape[0]` counts
//! instances and the remaining extents describe one instance. The batch
//! extent may be zero (an empty batch); all other extents are positive.

use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f64>,
}

impl Tensor {
    /// Builds a tensor, checking the extents and that every value is finite.
    pub fn new(shape: Vec<usize>, data: Vec<f64>) -> Result<Self> {
        validate_shape(&shape)?;
        let expected: usize = shape.iter().product();
        if expected != data.len() {
            return Err(Error::Tensor(format!(
                "shape {shape:?} needs {expected} values, got {}",
                data.len()
            )));
        }
        if let Some(i) = data.iter().position(|v| !v.is_finite()) {
            return Err(Error::Tensor(format!("value at offset {i} is not finite")));
        }
        Ok(Tensor { shape, data })
    }

    /// Internal constructor for results of arithmetic whose shape is already known to be valid.
    pub(crate) fn from_parts(shape: Vec<usize>, data: Vec<f64>) -> Self {
        debug_assert_eq!(shape.iter().product::<usize>(), data.len());
        Tensor { shape, data }
    }

    pub fn zeros(shape: &[usize]) -> Self {
        let n = shape.iter().product();
        Tensor {
            shape: shape.to_vec(),
            data: vec![0.0; n],
        }
    }

    pub fn full(shape: &[usize], value: f64) -> Self {
        let n = shape.iter().product();
        Tensor {
            shape: shape.to_vec(),
            data: vec![value; n],
        }
    }

    /// A `[n, 1]` column.
    pub fn column(values: Vec<f64>) -> Result<Self> {
        let n = values.len();
        Tensor::new(vec![n, 1], values)
    }

    /// A `[rows.len(), width]` matrix from equally long rows.
    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let width = rows.first().map(|r| r.len()).unwrap_or(1);
        if rows.iter().any(|r| r.len() != width) {
            return Err(Error::Tensor("ragged rows".into()));
        }
        Tensor::new(vec![rows.len(), width], rows.concat())
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    /// Number of instances (the leading extent).
    pub fn batch(&self) -> usize {
        self.shape.first().copied().unwrap_or(0)
    }

    /// Extents of one instance.
    pub fn instance_shape(&self) -> &[usize] {
        &self.shape[1..]
    }

    /// Number of values per instance.
    pub fn instance_len(&self) -> usize {
        self.shape[1..].iter().product()
    }

    pub fn instance(&self, i: usize) -> &[f64] {
        let w = self.instance_len();
        &self.data[i * w..(i + 1) * w]
    }

    pub fn instance_mut(&mut self, i: usize) -> &mut [f64] {
        let w = self.instance_len();
        &mut self.data[i * w..(i + 1) * w]
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// Same data viewed under a different shape with the same total size.
    pub fn reshape(mut self, shape: Vec<usize>) -> Result<Self> {
        validate_shape(&shape)?;
        if shape.iter().product::<usize>() != self.data.len() {
            return Err(Error::Tensor(format!(
                "cannot reshape {:?} into {shape:?}",
                self.shape
            )));
        }
        self.shape = shape;
        Ok(self)
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Tensor {
        Tensor::from_parts(self.shape.clone(), self.data.iter().map(|&v| f(v)).collect())
    }

    pub fn scale(&self, k: f64) -> Tensor {
        self.map(|v| v * k)
    }

    /// Multiplies every value of instance `i` by `factors[i]`.
    pub fn scale_instances(&self, factors: &[f64]) -> Result<Tensor> {
        if factors.len() != self.batch() {
            return Err(Error::Tensor(format!(
                "{} instance factors for a batch of {}",
                factors.len(),
                self.batch()
            )));
        }
        let w = self.instance_len();
        let mut out = self.clone();
        for (chunk, &k) in out.data.chunks_mut(w.max(1)).zip(factors) {
            chunk.iter_mut().for_each(|v| *v *= k);
        }
        Ok(out)
    }

    pub fn add(&self, other: &Tensor) -> Result<Tensor> {
        self.zip_with(other, |a, b| a + b)
    }

    pub fn sub(&self, other: &Tensor) -> Result<Tensor> {
        self.zip_with(other, |a, b| a - b)
    }

    pub fn zip_with(&self, other: &Tensor, f: impl Fn(f64, f64) -> f64) -> Result<Tensor> {
        if self.shape != other.shape {
            return Err(Error::Tensor(format!(
                "shape {:?} vs {:?}",
                self.shape, other.shape
            )));
        }
        let data = self
            .data
            .iter()
            .zip(&other.data)
            .map(|(&a, &b)| f(a, b))
            .collect();
        Ok(Tensor::from_parts(self.shape.clone(), data))
    }

    pub fn sum(&self) -> f64 {
        self.data.iter().sum()
    }

    pub fn norm(&self) -> f64 {
        self.data.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    /// Stacks batches with identical instance shapes along the batch axis.
    pub fn concat_batch(parts: &[&Tensor]) -> Result<Tensor> {
        let first = parts
            .first()
            .ok_or_else(|| Error::Tensor("nothing to concatenate".into()))?;
        let inst = first.instance_shape().to_vec();
        let mut data = Vec::with_capacity(parts.iter().map(|p| p.len()).sum());
        let mut batch = 0;
        for p in parts {
            if p.instance_shape() != inst.as_slice() {
                return Err(Error::Tensor(format!(
                    "instance shape {:?} vs {:?}",
                    p.instance_shape(),
                    inst
                )));
            }
            batch += p.batch();
            data.extend_from_slice(&p.data);
        }
        let mut shape = vec![batch];
        shape.extend(inst);
        Ok(Tensor::from_parts(shape, data))
    }

    /// Instances `start..end` as a new tensor.
    pub fn slice_batch(&self, start: usize, end: usize) -> Result<Tensor> {
        if start > end || end > self.batch() {
            return Err(Error::Tensor(format!(
                "batch range {start}..{end} out of 0..{}",
                self.batch()
            )));
        }
        let w = self.instance_len();
        let mut shape = self.shape.clone();
        shape[0] = end - start;
        Ok(Tensor::from_parts(
            shape,
            self.data[start * w..end * w].to_vec(),
        ))
    }
}

fn validate_shape(shape: &[usize]) -> Result<()> {
    if shape.is_empty() {
        return Err(Error::Tensor("tensors need at least a batch axis".into()));
    }
    if shape[1..].iter().any(|&d| d == 0) {
        return Err(Error::Tensor(format!(
            "shape {shape:?}: non-batch extents must be positive"
        )));
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rejects_length_mismatch_and_non_finite() {
        assert!(Tensor::new(vec![2, 2], vec![1.0; 3]).is_err());
        assert!(Tensor::new(vec![1, 2], vec![1.0, f64::NAN]).is_err());
        assert!(Tensor::new(vec![1, 0], vec![]).is_err());
        assert!(Tensor::new(vec![0, 2], vec![]).is_ok());
    }

    #[test]
    fn concat_and_slice_are_inverse() {
        let a = Tensor::new(vec![2, 2], vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        let b = Tensor::new(vec![1, 2], vec![5.0, 6.0]).unwrap();
        let c = Tensor::concat_batch(&[&a, &b]).unwrap();
        assert_eq!(c.shape(), &[3, 2]);
        assert_eq!(c.slice_batch(0, 2).unwrap(), a);
        assert_eq!(c.slice_batch(2, 3).unwrap(), b);
    }

    #[test]
    fn scale_instances_scales_rows() {
        let a = Tensor::new(vec![2, 2], vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        let s = a.scale_instances(&[2.0, -1.0]).unwrap();
        assert_eq!(s.data(), &[2.0, 4.0, -3.0, -4.0]);
    }
}
