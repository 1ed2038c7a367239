//! Dense tensors and labeled datasets.

use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

/// Row-major `f64` tensor.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f64>,
}

impl Tensor {
    /// Builds a tensor, rejecting inconsistent shapes and non-finite entries.
    pub fn new(shape: Vec<usize>, data: Vec<f64>) -> Result<Self> {
        if shape.contains(&0) {
            return Err(Error::Shape(format!("zero-sized dimension in {shape:?}")));
        }
        let n: usize = shape.iter().product();
        if n != data.len() {
            return Err(Error::Shape(format!(
                "shape {shape:?} needs {n} elements, got {}",
                data.len()
            )));
        }
        if let Some(pos) = data.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite(format!("tensor element {pos}")));
        }
        Ok(Tensor { shape, data })
    }

    pub fn vector(data: Vec<f64>) -> Result<Self> {
        Tensor::new(vec![data.len()], data)
    }

    pub fn zeros(shape: Vec<usize>) -> Self {
        let n = shape.iter().product();
        Tensor {
            shape,
            data: vec![0.0; n],
        }
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn rank(&self) -> usize {
        self.shape.len()
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    /// Same data under a new shape with the same element count.
    pub fn reshape(self, shape: Vec<usize>) -> Result<Self> {
        Tensor::new(shape, self.data)
    }

    pub fn max_abs_diff(&self, other: &Tensor) -> f64 {
        self.data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }

    pub fn norm_sq(&self) -> f64 {
        self.data.iter().map(|v| v * v).sum()
    }
}

/// Inputs with uniform shape and integer class labels.
#[derive(Debug, Clone)]
pub struct LabeledDataset {
    name: String,
    inputs: Vec<Tensor>,
    labels: Vec<usize>,
    num_classes: usize,
    content_hash: u64,
}

impl LabeledDataset {
    pub fn new(
        name: impl Into<String>,
        inputs: Vec<Tensor>,
        labels: Vec<usize>,
        num_classes: usize,
    ) -> Result<Self> {
        if inputs.len() != labels.len() {
            return Err(Error::Shape(format!(
                "{} inputs but {} labels",
                inputs.len(),
                labels.len()
            )));
        }
        if inputs.is_empty() {
            return Err(Error::InvalidArgument("empty dataset".into()));
        }
        if num_classes < 2 {
            return Err(Error::InvalidArgument(format!(
                "need at least 2 classes, got {num_classes}"
            )));
        }
        let shape = inputs[0].shape().to_vec();
        if let Some(i) = inputs.iter().position(|t| t.shape() != shape.as_slice()) {
            return Err(Error::Shape(format!(
                "input {i} has shape {:?}, expected {shape:?}",
                inputs[i].shape()
            )));
        }
        if let Some(&l) = labels.iter().find(|&&l| l >= num_classes) {
            return Err(Error::InvalidArgument(format!(
                "label {l} outside [0, {num_classes})"
            )));
        }
        let content_hash = content_hash(&inputs, &labels);
        Ok(LabeledDataset {
            name: name.into(),
            inputs,
            labels,
            num_classes,
            content_hash,
        })
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn inputs(&self) -> &[Tensor] {
        &self.inputs
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    pub fn content_hash(&self) -> u64 {
        self.content_hash
    }

    pub fn len(&self) -> usize {
        self.inputs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.inputs.is_empty()
    }

    pub fn input_shape(&self) -> &[usize] {
        self.inputs[0].shape()
    }

    /// Length of a flattened input.
    pub fn input_len(&self) -> usize {
        self.inputs[0].len()
    }

    /// Copy of this dataset with one extra point appended.
    pub fn with_point(&self, x: Tensor, y: usize) -> Result<Self> {
        let mut inputs = self.inputs.clone();
        let mut labels = self.labels.clone();
        inputs.push(x);
        labels.push(y);
        LabeledDataset::new(self.name.clone(), inputs, labels, self.num_classes)
    }

    /// Copy of this dataset keeping only the given indices, in order.
    pub fn select(&self, indices: &[usize]) -> Result<Self> {
        let inputs = indices.iter().map(|&i| self.inputs[i].clone()).collect();
        let labels = indices.iter().map(|&i| self.labels[i]).collect();
        LabeledDataset::new(self.name.clone(), inputs, labels, self.num_classes)
    }

    /// Same labels with every input replaced by `f(input)`.
    pub fn map_inputs<F>(&self, name: impl Into<String>, mut f: F) -> Result<Self>
    where
        F: FnMut(&Tensor) -> Result<Tensor>,
    {
        let inputs = self.inputs.iter().map(&mut f).collect::<Result<Vec<_>>>()?;
        LabeledDataset::new(name, inputs, self.labels.clone(), self.num_classes)
    }
}

/// First 8 bytes of SHA-256 over the little-endian serialization of shapes,
/// data and labels.
fn content_hash(inputs: &[Tensor], labels: &[usize]) -> u64 {
    let mut h = Sha256::new();
    h.update((inputs.len() as u64).to_le_bytes());
    for t in inputs {
        h.update((t.rank() as u64).to_le_bytes());
        for &d in t.shape() {
            h.update((d as u64).to_le_bytes());
        }
        for v in t.data() {
            h.update(v.to_le_bytes());
        }
    }
    for &l in labels {
        h.update((l as u64).to_le_bytes());
    }
    let digest = h.finalize();
    let mut first = [0u8; 8];
    first.copy_from_slice(&digest[..8]);
    u64::from_le_bytes(first)
}
