//! Model containers.
//!
//! Positivity-constrained quantities are stored as unconstrained raw values
//! and read back through [`crate::transform::positive`]. This keeps the flat
//! optimiser vector a plain copy of the stored fields.

use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use crate::error::{bail, Result};
use crate::linalg::Matrix;
use crate::transform::{inverse_transform, positive};

/// Whether the spectral points are fixed (`Ss`) or carry a diagonal Gaussian
/// variational posterior (`Vss`).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub enum Variant {
    Ss,
    Vss,
}

/// Time series with exogenous inputs (`N×Q`) and a scalar output.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct Dataset {
    pub inputs: Matrix,
    pub outputs: Vec<f64>,
    pub names: Vec<String>,
}

impl Dataset {
    pub fn new(inputs: Matrix, outputs: Vec<f64>, names: Vec<String>) -> Result<Self> {
        if inputs.rows() == 0 || inputs.cols() == 0 {
            bail!(
                Dimension,
                "dataset needs at least one row and one input column"
            );
        }
        if inputs.rows() != outputs.len() {
            bail!(
                Dimension,
                "{} input rows but {} outputs",
                inputs.rows(),
                outputs.len()
            );
        }
        if !inputs.is_finite() || outputs.iter().any(|v| !v.is_finite()) {
            bail!(Domain, "dataset contains non-finite values");
        }
        Ok(Self {
            inputs,
            outputs,
            names,
        })
    }

    pub fn len(&self) -> usize {
        self.outputs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.outputs.is_empty()
    }

    pub fn input_dim(&self) -> usize {
        self.inputs.cols()
    }

    /// Rows `range` as a new dataset.
    pub fn slice(&self, range: core::ops::Range<usize>) -> Result<Self> {
        if range.end > self.len() || range.start >= range.end {
            bail!(
                Dimension,
                "row range {range:?} is outside 0..{}",
                self.len()
            );
        }
        let q = self.input_dim();
        let inputs = Matrix::from_row_slice(
            range.len(),
            q,
            &self.inputs.as_slice()[range.start * q..range.end * q],
        )?;
        Ok(Self {
            inputs,
            outputs: self.outputs[range].to_vec(),
            names: self.names.clone(),
        })
    }
}

/// Structural settings of a deep recurrent model.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct ModelConfig {
    /// Number of hidden recurrent layers `L`; the model has `L + 1` GP layers.
    pub layers: usize,
    /// Exogenous input lag window `H_x`.
    pub input_lags: usize,
    /// Latent state lag window `H_h`.
    pub state_lags: usize,
    /// Number of spectral features `M` per layer.
    pub features: usize,
    pub variant: Variant,
    /// Columns of the exogenous input series.
    pub exo_dim: usize,
    /// Output dimension `D`; the recurrent model uses `1`.
    pub output_dim: usize,
}

impl ModelConfig {
    pub fn new(
        layers: usize,
        lags: usize,
        features: usize,
        variant: Variant,
        exo_dim: usize,
    ) -> Self {
        Self {
            layers,
            input_lags: lags,
            state_lags: lags,
            features,
            variant,
            exo_dim,
            output_dim: 1,
        }
    }

    /// Same configuration with a separate latent lag window `H_h`.
    pub fn with_state_lags(mut self, state_lags: usize) -> Self {
        self.state_lags = state_lags;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.layers == 0 {
            bail!(Config, "at least one hidden layer is required");
        }
        if self.state_lags == 0 {
            bail!(Config, "state lag window must be positive");
        }
        if self.features == 0 {
            bail!(Config, "feature count must be positive");
        }
        if self.input_lags > 0 && self.state_lags > self.input_lags {
            bail!(
                Config,
                "state lags ({}) may not exceed input lags ({})",
                self.state_lags,
                self.input_lags
            );
        }
        if self.input_lags > 0 && self.exo_dim == 0 {
            bail!(
                Config,
                "input lags given but the exogenous dimension is zero"
            );
        }
        if self.output_dim != 1 {
            bail!(Config, "the recurrent model supports scalar outputs only");
        }
        Ok(())
    }

    /// Number of GP layers, hidden plus output.
    pub fn gp_layers(&self) -> usize {
        self.layers + 1
    }

    /// Width of the input window fed into GP layer `l` (0-based).
    pub fn layer_input_dim(&self, l: usize) -> usize {
        if l == 0 {
            self.state_lags + self.input_lags * self.exo_dim
        } else if l < self.layers {
            2 * self.state_lags
        } else {
            self.state_lags
        }
    }

    /// Length of each latent state vector for a series of `n` samples.
    pub fn state_len(&self, n: usize) -> usize {
        n + self.state_lags - self.input_lags
    }

    /// Number of rows with a full lag window, `N - H_x`.
    pub fn window_rows(&self, n: usize) -> usize {
        n - self.input_lags
    }
}

/// Period of one input dimension in the spectral mixture kernel.
#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub enum Period {
    /// The cosine factor drops out and the kernel reduces to the squared exponential.
    Infinite,
    Finite(f64),
}

impl Period {
    /// Additive frequency offset `2π / p`.
    #[inline]
    pub fn frequency_shift(self) -> f64 {
        match self {
            Period::Infinite => 0.0,
            Period::Finite(p) => 2.0 * core::f64::consts::PI / p,
        }
    }
}

/// Kernel hyperparameters of one GP layer.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct Hyperparams {
    pub(crate) sigma_power: f64,
    pub(crate) sigma_noise: f64,
    pub(crate) lengthscales: Vec<f64>,
    pub periods: Vec<Period>,
}

impl Hyperparams {
    /// Builds hyperparameters from constrained values with infinite periods.
    pub fn new(sigma_power: f64, sigma_noise: f64, lengthscales: &[f64]) -> Result<Self> {
        Ok(Self {
            sigma_power: inverse_transform(sigma_power)?,
            sigma_noise: inverse_transform(sigma_noise)?,
            lengthscales: lengthscales
                .iter()
                .map(|&l| inverse_transform(l))
                .collect::<Result<_>>()?,
            periods: vec![Period::Infinite; lengthscales.len()],
        })
    }

    pub fn with_periods(mut self, periods: Vec<Period>) -> Result<Self> {
        if periods.len() != self.lengthscales.len() {
            bail!(
                Dimension,
                "{} periods for {} lengthscales",
                periods.len(),
                self.lengthscales.len()
            );
        }
        if periods
            .iter()
            .any(|p| matches!(p, Period::Finite(v) if !(*v > 0.0) || !v.is_finite()))
        {
            bail!(Domain, "finite periods must be positive");
        }
        self.periods = periods;
        Ok(self)
    }

    pub fn dim(&self) -> usize {
        self.lengthscales.len()
    }

    pub fn sigma_power(&self) -> f64 {
        positive(self.sigma_power)
    }

    pub fn sigma_noise(&self) -> f64 {
        positive(self.sigma_noise)
    }

    pub fn lengthscale(&self, q: usize) -> f64 {
        positive(self.lengthscales[q])
    }

    pub fn lengthscales(&self) -> Vec<f64> {
        self.lengthscales.iter().map(|&r| positive(r)).collect()
    }

    pub fn set_sigma_power(&mut self, v: f64) -> Result<()> {
        self.sigma_power = inverse_transform(v)?;
        Ok(())
    }

    pub fn set_sigma_noise(&mut self, v: f64) -> Result<()> {
        self.sigma_noise = inverse_transform(v)?;
        Ok(())
    }

    pub fn set_lengthscale(&mut self, q: usize, v: f64) -> Result<()> {
        self.lengthscales[q] = inverse_transform(v)?;
        Ok(())
    }
}

/// Spectral points, their optional variances, pseudo-inputs and phases.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct SpectralBasis {
    /// `M×Q` spectral points (posterior means for the variational variant).
    pub freq: Matrix,
    /// Raw storage of the `M×Q` spectral point variances, variational variant only.
    pub(crate) freq_var: Option<Matrix>,
    /// `M×Q` pseudo-input points.
    pub pseudo: Matrix,
    /// `M` phases in `[0, 2π)`.
    pub phase: Vec<f64>,
}

impl SpectralBasis {
    pub fn new(freq: Matrix, pseudo: Matrix, phase: Vec<f64>) -> Result<Self> {
        if freq.shape() != pseudo.shape() || phase.len() != freq.rows() {
            bail!(
                Dimension,
                "spectral points {:?}, pseudo-inputs {:?} and {} phases disagree",
                freq.shape(),
                pseudo.shape(),
                phase.len()
            );
        }
        Ok(Self {
            freq,
            freq_var: None,
            pseudo,
            phase,
        })
    }

    /// Attaches strictly positive spectral point variances (`M×Q`).
    pub fn with_variances(mut self, var: &Matrix) -> Result<Self> {
        if var.shape() != self.freq.shape() {
            bail!(
                Dimension,
                "variance shape {:?} differs from {:?}",
                var.shape(),
                self.freq.shape()
            );
        }
        let raw = var
            .as_slice()
            .iter()
            .map(|&v| inverse_transform(v))
            .collect::<Result<Vec<_>>>()?;
        self.freq_var = Some(Matrix::from_vec(var.rows(), var.cols(), raw)?);
        Ok(self)
    }

    pub fn features(&self) -> usize {
        self.freq.rows()
    }

    pub fn dim(&self) -> usize {
        self.freq.cols()
    }

    pub fn has_variances(&self) -> bool {
        self.freq_var.is_some()
    }

    /// Constrained spectral point variances, if present.
    pub fn variances(&self) -> Option<Matrix> {
        self.freq_var
            .as_ref()
            .map(|raw| Matrix::from_fn(raw.rows(), raw.cols(), |i, j| positive(raw[(i, j)])))
    }
}

/// Diagonal Gaussian posterior over one hidden layer's latent series.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct LatentState {
    pub mean: Vec<f64>,
    pub(crate) var: Vec<f64>,
}

impl LatentState {
    pub fn new(mean: Vec<f64>, var: &[f64]) -> Result<Self> {
        if mean.len() != var.len() {
            bail!(
                Dimension,
                "{} means but {} variances",
                mean.len(),
                var.len()
            );
        }
        let var = var
            .iter()
            .map(|&v| inverse_transform(v))
            .collect::<Result<_>>()?;
        Ok(Self { mean, var })
    }

    pub fn len(&self) -> usize {
        self.mean.len()
    }

    pub fn is_empty(&self) -> bool {
        self.mean.is_empty()
    }

    pub fn var(&self, i: usize) -> f64 {
        positive(self.var[i])
    }

    pub fn variances(&self) -> Vec<f64> {
        self.var.iter().map(|&r| positive(r)).collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct LayerParams {
    pub hyper: Hyperparams,
    pub basis: SpectralBasis,
}

impl LayerParams {
    pub fn dim(&self) -> usize {
        self.hyper.dim()
    }
}

/// All parameters of a deep recurrent model: `L + 1` GP layers and `L`
/// latent state posteriors.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct DrgpModel {
    pub config: ModelConfig,
    pub layers: Vec<LayerParams>,
    pub states: Vec<LatentState>,
}

impl DrgpModel {
    /// Checks that every container matches the configuration for a series of
    /// `n` samples.
    pub fn validate(&self, n: usize) -> Result<()> {
        let c = &self.config;
        c.validate()?;
        if n <= c.input_lags {
            bail!(
                Config,
                "series of length {n} is too short for {} input lags",
                c.input_lags
            );
        }
        if self.layers.len() != c.gp_layers() || self.states.len() != c.layers {
            bail!(
                Config,
                "expected {} GP layers and {} latent states, found {} and {}",
                c.gp_layers(),
                c.layers,
                self.layers.len(),
                self.states.len()
            );
        }
        for (l, layer) in self.layers.iter().enumerate() {
            let q = c.layer_input_dim(l);
            if layer.dim() != q || layer.basis.dim() != q || layer.hyper.periods.len() != q {
                bail!(Dimension, "layer {l} expects input width {q}");
            }
            if layer.basis.features() != c.features {
                bail!(
                    Dimension,
                    "layer {l} has {} features, expected {}",
                    layer.basis.features(),
                    c.features
                );
            }
            if layer.basis.has_variances() != (c.variant == Variant::Vss) {
                bail!(Config, "layer {l}: spectral variances must be present exactly for the variational variant");
            }
        }
        let len = c.state_len(n);
        for (l, s) in self.states.iter().enumerate() {
            if s.len() != len {
                bail!(
                    Dimension,
                    "latent state {l} has length {}, expected {len}",
                    s.len()
                );
            }
        }
        Ok(())
    }
}
