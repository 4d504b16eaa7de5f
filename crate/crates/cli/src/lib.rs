//! Configuration, report documents and the command implementations behind
//! the `glued-dirac` binary.

pub mod commands;
pub mod config;
pub mod report;

use std::path::PathBuf;

use clap::{Parser, Subcommand};

use crate::config::{ExperimentConfig, FamilyConfig};
use crate::report::Bundle;

#[derive(Debug, Parser)]
#[command(name = "glued-dirac", version, about = "Glued Dirac operator experiments on the mirror quantum sphere")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
    #[command(flatten)]
    pub overrides: Overrides,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Subcommand)]
pub enum Command {
    /// Admissibility of the weight family.
    Validate,
    /// DQ = I and QD = I − C on seeded random right-hand sides.
    Verify,
    /// Hilbert–Schmidt norms against their bounds, quantum and classical.
    Hs,
    /// Kernel of D, quantum and classical.
    Kernel,
    /// Classical parametrix residuals under grid refinement.
    Classical,
    /// Everything above plus a summary.
    ReportAll,
}

impl Command {
    pub fn run(self, cfg: &ExperimentConfig) -> anyhow::Result<Bundle> {
        match self {
            Command::Validate => commands::cmd_validate(cfg),
            Command::Verify => commands::cmd_verify(cfg),
            Command::Hs => commands::cmd_hs(cfg),
            Command::Kernel => commands::cmd_kernel(cfg),
            Command::Classical => commands::cmd_classical(cfg),
            Command::ReportAll => commands::cmd_report_all(cfg),
        }
    }
}

#[derive(Debug, Clone, Default, clap::Args)]
pub struct Overrides {
    /// q, constant-a or geometric.
    #[arg(long, global = true)]
    pub family: Option<String>,
    #[arg(long, global = true)]
    pub q: Option<f64>,
    #[arg(long, global = true)]
    pub nmax: Option<usize>,
    #[arg(long, global = true)]
    pub kmax: Option<usize>,
    #[arg(long, global = true)]
    pub ktail: Option<usize>,
    #[arg(long, global = true)]
    pub margin: Option<usize>,
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    #[arg(long, global = true)]
    pub samples: Option<usize>,
    /// Gauss–Legendre nodes for the classical side.
    #[arg(long, global = true)]
    pub grid: Option<usize>,
    /// Output directory (default: reports).
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    /// TOML config file; flags override it.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
}

impl Overrides {
    pub fn resolve(&self) -> anyhow::Result<ExperimentConfig> {
        let mut cfg = match &self.config {
            Some(path) => ExperimentConfig::load(path)?,
            None => ExperimentConfig::default(),
        };
        match (&self.family, self.q) {
            (Some(name), q) => cfg.family = FamilyConfig::from_name(name, q)?,
            (None, Some(q)) => match &mut cfg.family {
                FamilyConfig::Q { q: current } => *current = q,
                _ => cfg.family = FamilyConfig::Q { q },
            },
            (None, None) => {}
        }
        let t = &mut cfg.trunc;
        if let Some(n) = self.nmax {
            t.n_max = n;
        }
        if let Some(k) = self.kmax {
            t.k_max = k;
            t.k_tail = t.k_tail.max(k);
            // Keep the default margin legal for small sites.
            if self.margin.is_none() {
                t.margin = t.margin.min(k.saturating_sub(1) / 4);
            }
        }
        if let Some(k) = self.ktail {
            t.k_tail = k;
        }
        if let Some(m) = self.margin {
            t.margin = m;
        }
        if let Some(s) = self.seed {
            cfg.seed = s;
        }
        if let Some(s) = self.samples {
            cfg.samples = s;
        }
        if let Some(g) = self.grid {
            cfg.grid = g;
        }
        if let Some(o) = &self.out {
            cfg.out = Some(o.clone());
        }
        cfg.check()?;
        Ok(cfg)
    }
}
