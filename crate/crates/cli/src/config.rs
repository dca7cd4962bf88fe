//! Run parameters gathered from flags, then overridden by a JSON config file.

use lyapsgd::pep::PepOptions;
use serde::{Deserialize, Serialize};
use std::path::{Path, PathBuf};

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Params {
    pub gamma: Option<f64>,
    pub mu: Option<f64>,
    #[serde(rename = "L")]
    pub l: Option<f64>,
    #[serde(rename = "T")]
    pub horizon: Option<usize>,
    pub eps: Option<f64>,
    pub m: Option<usize>,
    pub seed: Option<u64>,
    pub trajectories: Option<usize>,
    pub out: Option<PathBuf>,
    pub solver_gap: Option<f64>,
    pub max_iter: Option<usize>,
    /// Step-size grid of a sweep, in units of 1/L.
    pub gammas: Option<Vec<f64>>,
    pub horizons: Option<Vec<usize>>,
    pub mus: Option<Vec<f64>>,
    pub deltas: Option<Vec<f64>>,
    /// Exponents k of the singularity probes 1 ± 2⁻ᵏ.
    pub probe_ks: Option<Vec<u32>>,
}

macro_rules! overlay {
    ($dst:ident, $src:ident; $($f:ident),*) => {
        $( if $src.$f.is_some() { $dst.$f = $src.$f; } )*
    };
}

impl Params {
    /// Fields set in `other` replace ours.
    pub fn overlay(mut self, other: Params) -> Params {
        overlay!(self, other; gamma, mu, l, horizon, eps, m, seed, trajectories, out, solver_gap,
            max_iter, gammas, horizons, mus, deltas, probe_ks);
        self
    }

    pub fn load(path: &Path) -> lyapsgd::Result<Params> {
        Ok(serde_json::from_str(&std::fs::read_to_string(path)?)?)
    }

    pub fn l(&self) -> f64 {
        self.l.unwrap_or(1.0)
    }

    pub fn mu(&self) -> f64 {
        self.mu.unwrap_or(0.0)
    }

    pub fn horizon(&self) -> usize {
        self.horizon.unwrap_or(10)
    }

    pub fn m(&self) -> usize {
        self.m.unwrap_or(2)
    }

    pub fn seed(&self) -> u64 {
        self.seed.unwrap_or(0)
    }

    pub fn trajectories(&self) -> usize {
        self.trajectories.unwrap_or(10_000)
    }

    pub fn pep_options(&self) -> PepOptions {
        let mut o = PepOptions::default();
        if let Some(g) = self.solver_gap {
            o.solver.gap = g;
        }
        if let Some(k) = self.max_iter {
            o.solver.max_iter = k;
        }
        o
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn config_overrides_flags() {
        let flags = Params {
            gamma: Some(0.5),
            horizon: Some(3),
            seed: Some(1),
            ..Default::default()
        };
        let file: Params =
            serde_json::from_str(r#"{"gamma": 1.5, "L": 2.0, "gammas": [0.1, 0.2]}"#).unwrap();
        let p = flags.overlay(file);
        assert_eq!(p.gamma, Some(1.5));
        assert_eq!(p.l(), 2.0);
        assert_eq!(p.horizon(), 3);
        assert_eq!(p.seed(), 1);
        assert_eq!(p.gammas, Some(vec![0.1, 0.2]));
    }

    #[test]
    fn unknown_config_keys_are_rejected() {
        assert!(serde_json::from_str::<Params>(r#"{"gama": 1.0}"#).is_err());
    }

    #[test]
    fn solver_flags_reach_the_options() {
        let p = Params {
            solver_gap: Some(1e-6),
            max_iter: Some(50),
            ..Default::default()
        };
        let o = p.pep_options();
        assert_eq!(o.solver.gap, 1e-6);
        assert_eq!(o.solver.max_iter, 50);
    }
}
