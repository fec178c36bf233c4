//! Column-wise standardisation of datasets.

use alloc::vec::Vec;

use crate::error::{bail, Result};
use crate::linalg::Matrix;
use crate::types::Dataset;

/// Divisor used after centring a column.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub enum ScaleMode {
    /// `(x - mean) / std`.
    #[default]
    StdDev,
    /// `(x - mean) / variance`.
    Variance,
}

/// Per-column affine map; the output series is stored as the final column.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct Normalization {
    pub mean: Vec<f64>,
    pub scale: Vec<f64>,
    pub mode: ScaleMode,
}

fn column_stats(values: impl Iterator<Item = f64> + Clone, mode: ScaleMode) -> (f64, f64) {
    let n = values.clone().count() as f64;
    let mean = values.clone().sum::<f64>() / n;
    let var = values.map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    let scale = if var > 0.0 {
        match mode {
            ScaleMode::StdDev => libm::sqrt(var),
            ScaleMode::Variance => var,
        }
    } else {
        1.0
    };
    (mean, scale)
}

impl Normalization {
    /// Statistics of every input column and the output.
    pub fn fit(data: &Dataset, mode: ScaleMode) -> Result<Self> {
        if data.is_empty() {
            bail!(Dimension, "cannot normalise an empty dataset");
        }
        let q = data.input_dim();
        let mut mean = Vec::with_capacity(q + 1);
        let mut scale = Vec::with_capacity(q + 1);
        for j in 0..q {
            let col = (0..data.len()).map(move |i| data.inputs[(i, j)]);
            let (m, s) = column_stats(col, mode);
            mean.push(m);
            scale.push(s);
        }
        let (m, s) = column_stats(data.outputs.iter().copied(), mode);
        mean.push(m);
        scale.push(s);
        Ok(Self { mean, scale, mode })
    }

    fn check(&self, data: &Dataset) -> Result<()> {
        if data.input_dim() + 1 != self.mean.len() {
            bail!(
                Dimension,
                "normalisation covers {} columns, dataset has {}",
                self.mean.len(),
                data.input_dim() + 1
            );
        }
        Ok(())
    }

    pub fn apply(&self, data: &Dataset) -> Result<Dataset> {
        self.check(data)?;
        let q = data.input_dim();
        let inputs = Matrix::from_fn(data.len(), q, |i, j| {
            (data.inputs[(i, j)] - self.mean[j]) / self.scale[j]
        });
        let outputs = data
            .outputs
            .iter()
            .map(|&y| self.output_forward(y))
            .collect();
        Ok(Dataset {
            inputs,
            outputs,
            names: data.names.clone(),
        })
    }

    pub fn invert(&self, data: &Dataset) -> Result<Dataset> {
        self.check(data)?;
        let q = data.input_dim();
        let inputs = Matrix::from_fn(data.len(), q, |i, j| {
            data.inputs[(i, j)] * self.scale[j] + self.mean[j]
        });
        let outputs = data
            .outputs
            .iter()
            .map(|&y| self.output_inverse(y))
            .collect();
        Ok(Dataset {
            inputs,
            outputs,
            names: data.names.clone(),
        })
    }

    fn output_scale(&self) -> f64 {
        *self
            .scale
            .last()
            .expect("normalisation always has an output column")
    }

    pub fn output_forward(&self, y: f64) -> f64 {
        (y - self.mean[self.mean.len() - 1]) / self.output_scale()
    }

    pub fn output_inverse(&self, y: f64) -> f64 {
        y * self.output_scale() + self.mean[self.mean.len() - 1]
    }

    /// Maps a variance on the normalised output scale back to original units.
    pub fn output_variance_inverse(&self, v: f64) -> f64 {
        v * self.output_scale() * self.output_scale()
    }
}

/// Normalises a dataset with its own statistics.
pub fn normalize(data: &Dataset, mode: ScaleMode) -> Result<(Dataset, Normalization)> {
    let norm = Normalization::fit(data, mode)?;
    Ok((norm.apply(data)?, norm))
}

/// Root mean squared error.
pub fn rmse(pred: &[f64], truth: &[f64]) -> Result<f64> {
    if pred.len() != truth.len() || pred.is_empty() {
        bail!(
            Dimension,
            "rmse needs equal non-empty lengths, got {} and {}",
            pred.len(),
            truth.len()
        );
    }
    let sse: f64 = pred.iter().zip(truth).map(|(p, t)| (p - t) * (p - t)).sum();
    Ok(libm::sqrt(sse / pred.len() as f64))
}
