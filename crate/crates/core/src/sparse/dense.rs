use crate::error::{ensure_finite, Error, Result};

/// A batch of right-hand sides stored column-major: column `j` occupies
/// `values[j * dim..(j + 1) * dim]`.
#[derive(Debug, Clone, PartialEq)]
pub struct DenseBatch {
    dim: usize,
    count: usize,
    values: Vec<f64>,
}

impl DenseBatch {
    pub fn new(dim: usize, count: usize, values: Vec<f64>) -> Result<Self> {
        if values.len() != dim * count {
            return Err(Error::DimensionMismatch(format!(
                "batch buffer of length {} for {dim}x{count}",
                values.len()
            )));
        }
        ensure_finite(&values, "dense batch")?;
        Ok(Self { dim, count, values })
    }

    pub fn zeros(dim: usize, count: usize) -> Self {
        Self {
            dim,
            count,
            values: vec![0.0; dim * count],
        }
    }

    /// Stacks equally sized columns.
    pub fn from_columns<C: AsRef<[f64]>>(columns: &[C]) -> Result<Self> {
        let dim = columns.first().map_or(0, |c| c.as_ref().len());
        let mut values = Vec::with_capacity(dim * columns.len());
        for col in columns {
            let col = col.as_ref();
            if col.len() != dim {
                return Err(Error::DimensionMismatch(format!(
                    "batch column of length {} (expected {dim})",
                    col.len()
                )));
            }
            values.extend_from_slice(col);
        }
        Self::new(dim, columns.len(), values)
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn count(&self) -> usize {
        self.count
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn column(&self, j: usize) -> &[f64] {
        &self.values[j * self.dim..(j + 1) * self.dim]
    }

    pub fn column_mut(&mut self, j: usize) -> &mut [f64] {
        &mut self.values[j * self.dim..(j + 1) * self.dim]
    }

    pub fn columns(&self) -> impl Iterator<Item = &[f64]> {
        // chunks_exact panics on zero; an empty-dim batch has no data anyway
        self.values.chunks_exact(self.dim.max(1)).take(self.count)
    }

    pub(crate) fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }
}
