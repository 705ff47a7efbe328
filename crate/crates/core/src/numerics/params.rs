use crate::error::{DmbaError, Result};

/// One named parameter tensor (e.g. `conv3.weight`).
#[derive(Debug, Clone, PartialEq)]
pub struct ParamBlock {
    pub name: String,
    pub shape: Vec<usize>,
    pub data: Vec<f64>,
}

impl ParamBlock {
    pub fn new(name: impl Into<String>, shape: Vec<usize>, data: Vec<f64>) -> Result<Self> {
        let name = name.into();
        let expected: usize = shape.iter().product();
        if expected != data.len() {
            return Err(DmbaError::InvalidArgument(format!(
                "block `{name}` has shape {shape:?} but {} values",
                data.len()
            )));
        }
        Ok(ParamBlock { name, shape, data })
    }

    pub fn zeros(name: impl Into<String>, shape: Vec<usize>) -> Self {
        let len = shape.iter().product();
        ParamBlock {
            name: name.into(),
            shape,
            data: vec![0.0; len],
        }
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }
}

/// Ordered collection of uniquely named parameter blocks.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct ParamVector {
    blocks: Vec<ParamBlock>,
}

impl ParamVector {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(&mut self, block: ParamBlock) -> Result<usize> {
        if self.blocks.iter().any(|b| b.name == block.name) {
            return Err(DmbaError::DuplicateParam(block.name));
        }
        self.blocks.push(block);
        Ok(self.blocks.len() - 1)
    }

    pub fn blocks(&self) -> &[ParamBlock] {
        &self.blocks
    }

    pub fn blocks_mut(&mut self) -> &mut [ParamBlock] {
        &mut self.blocks
    }

    pub fn block(&self, index: usize) -> &ParamBlock {
        &self.blocks[index]
    }

    pub fn block_mut(&mut self, index: usize) -> &mut ParamBlock {
        &mut self.blocks[index]
    }

    pub fn get(&self, name: &str) -> Option<&ParamBlock> {
        self.blocks.iter().find(|b| b.name == name)
    }

    pub fn num_blocks(&self) -> usize {
        self.blocks.len()
    }

    pub fn is_empty(&self) -> bool {
        self.blocks.is_empty()
    }

    /// Total number of scalar parameters.
    pub fn total_len(&self) -> usize {
        self.blocks.iter().map(ParamBlock::len).sum()
    }

    /// Same names and shapes, all values zero.
    pub fn zeros_like(&self) -> ParamVector {
        ParamVector {
            blocks: self
                .blocks
                .iter()
                .map(|b| ParamBlock::zeros(b.name.clone(), b.shape.clone()))
                .collect(),
        }
    }

    pub fn same_layout(&self, other: &ParamVector) -> bool {
        self.blocks.len() == other.blocks.len()
            && self
                .blocks
                .iter()
                .zip(&other.blocks)
                .all(|(a, b)| a.name == b.name && a.shape == b.shape)
    }

    fn ensure_layout(&self, other: &ParamVector) -> Result<()> {
        if self.same_layout(other) {
            Ok(())
        } else {
            Err(DmbaError::InvalidArgument(
                "parameter vectors have different layouts".into(),
            ))
        }
    }

    pub fn flatten(&self) -> Vec<f64> {
        self.blocks.iter().flat_map(|b| b.data.iter().copied()).collect()
    }

    pub fn set_flat(&mut self, values: &[f64]) -> Result<()> {
        if values.len() != self.total_len() {
            return Err(DmbaError::InvalidArgument(format!(
                "expected {} values, got {}",
                self.total_len(),
                values.len()
            )));
        }
        let mut offset = 0;
        for b in &mut self.blocks {
            let n = b.data.len();
            b.data.copy_from_slice(&values[offset..offset + n]);
            offset += n;
        }
        Ok(())
    }

    pub fn iter(&self) -> impl Iterator<Item = &f64> {
        self.blocks.iter().flat_map(|b| b.data.iter())
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = &mut f64> {
        self.blocks.iter_mut().flat_map(|b| b.data.iter_mut())
    }

    /// `self += alpha * other`
    pub fn add_scaled(&mut self, alpha: f64, other: &ParamVector) -> Result<()> {
        self.ensure_layout(other)?;
        for (a, b) in self.iter_mut().zip(other.iter()) {
            *a += alpha * b;
        }
        Ok(())
    }

    pub fn scale_in_place(&mut self, factor: f64) {
        for v in self.iter_mut() {
            *v *= factor;
        }
    }

    pub fn dot(&self, other: &ParamVector) -> Result<f64> {
        self.ensure_layout(other)?;
        Ok(self.iter().zip(other.iter()).map(|(a, b)| a * b).sum())
    }

    pub fn norm(&self) -> f64 {
        self.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    /// `||self - other|| / max(||other||, tiny)`
    pub fn relative_error(&self, reference: &ParamVector) -> Result<f64> {
        self.ensure_layout(reference)?;
        let diff: f64 = self
            .iter()
            .zip(reference.iter())
            .map(|(a, b)| (a - b) * (a - b))
            .sum::<f64>()
            .sqrt();
        Ok(diff / reference.norm().max(f64::MIN_POSITIVE))
    }

    pub fn is_finite(&self) -> bool {
        self.iter().all(|v| v.is_finite())
    }
}
