//! Lag-window construction for the stacked recurrent layers.
//!
//! Time steps are 1-based in the formulas below. Latent series `h^(l)` cover
//! steps `1 + H_x - H_h ..= N`, so latent index `k` is step
//! `k + 1 + H_x - H_h`. Window row `n` (0-based) targets step
//! `i = H_x + 1 + n`:
//!
//! * first layer:  `[h¹_{i-1} … h¹_{i-H_h}, x_{i-1} … x_{i-H_x}]`
//! * middle layer: `[hˡ_{i-1} … hˡ_{i-H_h}, hˡ⁻¹_i … hˡ⁻¹_{i-H_h+1}]`
//! * output layer: `[hᴸ_i … hᴸ_{i-H_h+1}]`

use alloc::vec::Vec;

use crate::error::{bail, Result};
use crate::linalg::Matrix;
use crate::types::{Dataset, DrgpModel, ModelConfig};

/// Where one window column reads from, as a function of the row `n`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Source {
    /// Latent series `layer` at index `n + shift`.
    State { layer: usize, shift: usize },
    /// Exogenous input column `dim` at 0-based row `n + shift`.
    Input { dim: usize, shift: usize },
}

/// Column sources of every GP layer and the targets of every row.
#[derive(Debug, Clone, PartialEq)]
pub struct RecurrentPlan {
    pub config: ModelConfig,
    /// Series length `N`.
    pub len: usize,
    /// Window rows `N - H_x`.
    pub rows: usize,
    pub columns: Vec<Vec<Source>>,
}

impl RecurrentPlan {
    pub fn new(config: ModelConfig, len: usize) -> Result<Self> {
        config.validate()?;
        if len <= config.input_lags {
            bail!(
                Config,
                "series of length {len} needs more than {} samples",
                config.input_lags
            );
        }
        let hh = config.state_lags;
        let hx = config.input_lags;
        let own_lags = |layer: usize| {
            (1..=hh).map(move |k| Source::State {
                layer,
                shift: hh - k,
            })
        };
        let current = |layer: usize| {
            (0..hh).map(move |k| Source::State {
                layer,
                shift: hh - k,
            })
        };
        let mut columns = Vec::with_capacity(config.gp_layers());
        for l in 0..config.gp_layers() {
            let cols: Vec<Source> = if l == 0 {
                let exo = (1..=hx).flat_map(|k| {
                    (0..config.exo_dim).map(move |dim| Source::Input { dim, shift: hx - k })
                });
                own_lags(0).chain(exo).collect()
            } else if l < config.layers {
                own_lags(l).chain(current(l - 1)).collect()
            } else {
                current(l - 1).collect()
            };
            debug_assert_eq!(cols.len(), config.layer_input_dim(l));
            columns.push(cols);
        }
        Ok(Self {
            config,
            len,
            rows: len - hx,
            columns,
        })
    }

    /// Latent index targeted by window row `n`.
    pub fn target_index(&self, n: usize) -> usize {
        n + self.config.state_lags
    }

    /// Number of leading latent entries that only appear as lagged inputs.
    pub fn initial_states(&self) -> usize {
        self.config.state_lags
    }

    /// Window means and variances of GP layer `l`, each `(N - H_x)×Q_l`.
    pub fn layer_inputs(&self, l: usize, model: &DrgpModel, data: &Dataset) -> (Matrix, Matrix) {
        let cols = &self.columns[l];
        let variances: Vec<Vec<f64>> = model.states.iter().map(|s| s.variances()).collect();
        let mut mean = Matrix::zeros(self.rows, cols.len());
        let mut var = Matrix::zeros(self.rows, cols.len());
        for n in 0..self.rows {
            for (c, src) in cols.iter().enumerate() {
                match *src {
                    Source::State { layer, shift } => {
                        mean[(n, c)] = model.states[layer].mean[n + shift];
                        var[(n, c)] = variances[layer][n + shift];
                    }
                    Source::Input { dim, shift } => {
                        mean[(n, c)] = data.inputs[(n + shift, dim)];
                    }
                }
            }
        }
        (mean, var)
    }

    /// Regression targets of GP layer `l`: latent means for hidden layers,
    /// observed outputs for the top layer.
    pub fn layer_targets(&self, l: usize, model: &DrgpModel, data: &Dataset) -> Vec<f64> {
        let hx = self.config.input_lags;
        if l < self.config.layers {
            let s = &model.states[l].mean;
            (0..self.rows).map(|n| s[self.target_index(n)]).collect()
        } else {
            data.outputs[hx..].to_vec()
        }
    }
}
