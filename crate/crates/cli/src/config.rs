//! Experiment configuration. The file format is TOML:
//!
//! ```toml
//! seed = 42
//! samples = 20
//! grid = 512
//!
//! [family]
//! name = "q"        # "q", "constant-a" or "geometric"
//! q = 0.5
//!
//! [trunc]
//! n_max = 16
//! k_max = 512
//! ```
//!
//! Every key is optional; command-line flags override the file.

use std::path::{Path, PathBuf};
use std::sync::Arc;

use anyhow::{bail, Context};
use glued_dirac::{GeometricFamily, QWeight, TruncationSpec, WeightFamily};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "name", rename_all = "kebab-case", deny_unknown_fields)]
pub enum FamilyConfig {
    Q {
        #[serde(default = "default_q")]
        q: f64,
    },
    /// `a ≡ b ≡ 1`, `c± ≡ 1`; fails admissibility.
    ConstantA,
    Geometric {
        #[serde(default = "two")]
        a_mode: f64,
        #[serde(default = "two")]
        a_site: f64,
        #[serde(default = "two")]
        b_mode: f64,
        #[serde(default = "two")]
        b_site: f64,
        #[serde(default = "one")]
        c_plus: f64,
        #[serde(default = "one")]
        c_minus: f64,
    },
}

fn default_q() -> f64 {
    0.5
}

fn two() -> f64 {
    2.0
}

fn one() -> f64 {
    1.0
}

impl Default for FamilyConfig {
    fn default() -> Self {
        FamilyConfig::Q { q: default_q() }
    }
}

impl FamilyConfig {
    pub fn from_name(name: &str, q: Option<f64>) -> anyhow::Result<Self> {
        Ok(match name {
            "q" => FamilyConfig::Q { q: q.unwrap_or_else(default_q) },
            "constant-a" => FamilyConfig::ConstantA,
            "geometric" => FamilyConfig::Geometric {
                a_mode: 2.0,
                a_site: 2.0,
                b_mode: 2.0,
                b_site: 2.0,
                c_plus: 1.0,
                c_minus: 1.0,
            },
            other => bail!("unknown family {other:?} (expected q, constant-a or geometric)"),
        })
    }

    pub fn build(&self) -> glued_dirac::Result<Arc<dyn WeightFamily>> {
        Ok(match *self {
            FamilyConfig::Q { q } => Arc::new(QWeight::new(q)?),
            FamilyConfig::ConstantA => Arc::new(GeometricFamily::constant()),
            FamilyConfig::Geometric {
                a_mode,
                a_site,
                b_mode,
                b_site,
                c_plus,
                c_minus,
            } => Arc::new(GeometricFamily {
                a_mode,
                a_site,
                b_mode,
                b_site,
                c_plus,
                c_minus,
            }),
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub seed: u64,
    pub samples: usize,
    /// Gauss–Legendre nodes on `[0, 1]` for the classical side.
    pub grid: usize,
    /// Largest mode of the classical HS table.
    pub classical_hs_max: usize,
    /// Truncation of the dense kernel oracle.
    pub oracle_n_max: usize,
    pub oracle_k_max: usize,
    pub family: FamilyConfig,
    pub trunc: TruncationSpec,
    /// Where reports go; not part of the embedded config.
    #[serde(skip_serializing)]
    pub out: Option<PathBuf>,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            seed: 42,
            samples: 20,
            grid: 512,
            classical_hs_max: 32,
            oracle_n_max: 8,
            oracle_k_max: 64,
            family: FamilyConfig::default(),
            trunc: TruncationSpec::default(),
            out: None,
        }
    }
}

impl ExperimentConfig {
    pub fn load(path: &Path) -> anyhow::Result<Self> {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading config {}", path.display()))?;
        Self::parse(&text).with_context(|| format!("parsing config {}", path.display()))
    }

    pub fn parse(text: &str) -> anyhow::Result<Self> {
        Ok(toml::from_str(text)?)
    }

    pub fn check(&self) -> anyhow::Result<()> {
        self.trunc.check()?;
        if self.samples == 0 {
            bail!("samples must be positive");
        }
        if self.grid < glued_dirac::quadrature::MIN_GRID {
            bail!("grid must have at least {} nodes", glued_dirac::quadrature::MIN_GRID);
        }
        if self.classical_hs_max == 0 || self.classical_hs_max > 64 {
            bail!("classical_hs_max must lie in 1..=64");
        }
        if self.oracle_n_max == 0 || self.oracle_k_max < 2 {
            bail!("oracle truncation must be at least N = 1, K = 2");
        }
        for (name, tol) in [
            ("tol_identity", self.trunc.tol_identity),
            ("tol_tail", self.trunc.tol_tail),
            ("tol_trace", self.trunc.tol_trace),
        ] {
            if !(tol > 0.0 && tol < 1.0) {
                bail!("{name} must lie in (0, 1), got {tol}");
            }
        }
        Ok(())
    }

    /// The document form embedded in every report.
    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_file_is_defaults() {
        assert_eq!(ExperimentConfig::parse("").unwrap(), ExperimentConfig::default());
    }

    #[test]
    fn nested_keys() {
        let c = ExperimentConfig::parse(
            "seed = 7\n[family]\nname = \"q\"\nq = 0.25\n[trunc]\nn_max = 4\nk_max = 64\n",
        )
        .unwrap();
        assert_eq!(c.seed, 7);
        assert_eq!(c.family, FamilyConfig::Q { q: 0.25 });
        assert_eq!(c.trunc.n_max, 4);
        assert_eq!(c.trunc.k_tail, 4096);
    }

    #[test]
    fn unknown_keys_are_rejected() {
        assert!(ExperimentConfig::parse("sed = 1").is_err());
        assert!(ExperimentConfig::parse("[family]\nname = \"sphere\"").is_err());
    }

    #[test]
    fn round_trip() {
        let c = ExperimentConfig {
            family: FamilyConfig::from_name("geometric", None).unwrap(),
            ..Default::default()
        };
        assert_eq!(ExperimentConfig::parse(&c.to_toml()).unwrap(), c);
    }

    #[test]
    fn output_dir_is_not_embedded() {
        let c = ExperimentConfig::parse("out = \"elsewhere\"").unwrap();
        assert_eq!(c.out.as_deref(), Some(Path::new("elsewhere")));
        assert_eq!(c.to_toml(), ExperimentConfig::default().to_toml());
    }

    #[test]
    fn bad_values_fail_check() {
        let mut c = ExperimentConfig::default();
        c.trunc.tol_trace = 1.5;
        assert!(c.check().is_err());
        let c = ExperimentConfig {
            grid: 32,
            ..Default::default()
        };
        assert!(c.check().is_err());
    }

    #[test]
    fn invalid_q_is_reported() {
        let err = FamilyConfig::Q { q: 1.0 }.build().unwrap_err();
        assert_eq!(err, glued_dirac::Error::InvalidQ(1.0));
    }
}
