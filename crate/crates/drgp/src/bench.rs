//! Benchmark presets for the system identification data sets.
//!
//! Each preset expects `<data_dir>/<name>.csv` with the exogenous inputs
//! first and the measured output in the last column. Splits are contiguous:
//! the first `train` rows train, the next `test` rows are simulated.

use std::path::Path;

use crate::experiment::{ExperimentSpec, Family};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Preset {
    pub name: &'static str,
    pub train: usize,
    pub test: usize,
    pub layers: usize,
    pub features: usize,
    pub lags: usize,
}

pub const PRESETS: [Preset; 3] = [
    Preset {
        name: "drive",
        train: 250,
        test: 250,
        layers: 2,
        features: 100,
        lags: 10,
    },
    Preset {
        name: "actuator",
        train: 512,
        test: 512,
        layers: 2,
        features: 100,
        lags: 10,
    },
    Preset {
        name: "damper",
        train: 2000,
        test: 1499,
        layers: 2,
        features: 125,
        lags: 10,
    },
];

pub fn preset(name: &str) -> Option<Preset> {
    PRESETS
        .iter()
        .copied()
        .find(|p| p.name.eq_ignore_ascii_case(name))
}

impl Preset {
    /// Spec for one model family with five restarts, writing under `out_root/<name>/<family>`.
    pub fn spec(&self, family: Family, data_dir: &Path, out_root: &Path) -> ExperimentSpec {
        let mut spec = ExperimentSpec::new(
            self.name,
            data_dir.join(format!("{}.csv", self.name)),
            self.train,
            self.test,
            family,
            self.layers,
            self.lags,
            self.features,
        );
        spec.training.restarts = 5;
        spec.out_dir = out_root.join(self.name).join(family.name());
        spec
    }
}
