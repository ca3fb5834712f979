use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};

#[derive(Debug, Parser)]
#[command(name = "fimlab", version, about = "Fisher information of exponential-family networks and the variance of its estimators")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Format {
    Csv,
    Json,
}

impl Format {
    pub fn extension(self) -> &'static str {
        match self {
            Format::Csv => "csv",
            Format::Json => "json",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
pub enum EstimatorArg {
    #[value(name = "1")]
    #[serde(rename = "1")]
    One,
    #[value(name = "2")]
    #[serde(rename = "2")]
    Two,
    #[value(name = "combined")]
    #[serde(rename = "combined")]
    Combined,
}

/// Where results go.
#[derive(Debug, Clone, Args, Serialize, Deserialize)]
pub struct OutArgs {
    /// Output directory (created if missing).
    #[arg(long, default_value = ".")]
    pub out: PathBuf,
    #[arg(long, value_enum, default_value_t = Format::Csv)]
    pub format: Format,
    /// Worker threads; defaults to FIMLAB_THREADS, then all cores.
    #[arg(long)]
    #[serde(skip)]
    pub threads: Option<usize>,
}

/// Network, input and parameter subset.
#[derive(Debug, Clone, Args, Serialize, Deserialize)]
pub struct ModelArgs {
    /// Network JSON: layers, activation, family, seed, optional weights, x.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Master sampling seed; defaults to the network seed.
    #[arg(long)]
    pub seed: Option<u64>,
    /// `all`, layer names (`W0`, `layer1`) or index ranges (`0-3,7,10..12`).
    #[arg(long, default_value = "all")]
    pub subset: String,
    /// Replace the output family (dimension taken from the last layer).
    #[arg(long)]
    pub family: Option<String>,
    /// Pin every output mean parameter to this value by zeroing the last
    /// layer's weights and setting its bias to the matching natural parameter.
    #[arg(long)]
    pub p: Option<f64>,
}

#[derive(Debug, Clone, Args, Serialize, Deserialize)]
pub struct SampleArgs {
    #[arg(long, value_enum, default_value_t = EstimatorArg::One)]
    pub estimator: EstimatorArg,
    /// Weight of estimator 1 in the combined estimator.
    #[arg(long, default_value_t = 0.5)]
    pub alpha: f64,
    /// Samples per estimate (N).
    #[arg(long, default_value_t = 100)]
    pub samples: usize,
}

#[derive(Debug, Clone, Args, Serialize, Deserialize)]
pub struct TrialArgs {
    /// Independent trials (R).
    #[arg(long, default_value_t = 1000)]
    pub trials: usize,
    /// Chebyshev coverage levels.
    #[arg(long, value_delimiter = ',', default_values_t = vec![0.1, 0.5])]
    pub eps: Vec<f64>,
    /// Standard errors tolerated in Monte Carlo comparisons.
    #[arg(long, default_value_t = 5.0)]
    pub z_tol: f64,
}

#[derive(Debug, Clone, Args, Serialize, Deserialize)]
pub struct SweepArgs {
    /// Sample sizes of the sweep.
    #[arg(long, value_delimiter = ',', default_values_t = vec![10, 100, 1000, 10000])]
    pub ns: Vec<usize>,
}

#[derive(Debug, Clone, Subcommand, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", tag = "command")]
pub enum Command {
    /// Cumulant table of a univariate family on a mean-parameter grid.
    FamilyTable {
        #[arg(long)]
        family: String,
        /// Mean parameters; a five-point default grid per family otherwise.
        #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
        grid: Option<Vec<f64>>,
        #[command(flatten)]
        #[serde(flatten)]
        out: OutArgs,
    },
    /// Exact FIM on the subset.
    Exact {
        #[command(flatten)]
        #[serde(flatten)]
        model: ModelArgs,
        #[command(flatten)]
        #[serde(flatten)]
        out: OutArgs,
    },
    /// One sampled estimate.
    Estimate {
        #[command(flatten)]
        #[serde(flatten)]
        model: ModelArgs,
        #[command(flatten)]
        #[serde(flatten)]
        sample: SampleArgs,
        /// Trial counter of the batch.
        #[arg(long, default_value_t = 0)]
        trial: u64,
        #[command(flatten)]
        #[serde(flatten)]
        out: OutArgs,
    },
    /// Closed-form element variances and, within the cap, the covariance tensor.
    Variance {
        #[command(flatten)]
        #[serde(flatten)]
        model: ModelArgs,
        #[command(flatten)]
        #[serde(flatten)]
        sample: SampleArgs,
        #[command(flatten)]
        #[serde(flatten)]
        out: OutArgs,
    },
    /// Frobenius, element-wise, L-infinity and moment bounds.
    Bounds {
        #[command(flatten)]
        #[serde(flatten)]
        model: ModelArgs,
        #[command(flatten)]
        #[serde(flatten)]
        sample: SampleArgs,
        #[command(flatten)]
        #[serde(flatten)]
        out: OutArgs,
    },
    /// Eigenvalues of the exact FIM and one estimate, with the p.s.d. guarantees.
    Spectrum {
        #[command(flatten)]
        #[serde(flatten)]
        model: ModelArgs,
        #[command(flatten)]
        #[serde(flatten)]
        sample: SampleArgs,
        #[arg(long, default_value_t = 0)]
        trial: u64,
        #[command(flatten)]
        #[serde(flatten)]
        out: OutArgs,
    },
    /// Monte Carlo trial sweep.
    Trials {
        #[command(flatten)]
        #[serde(flatten)]
        model: ModelArgs,
        #[command(flatten)]
        #[serde(flatten)]
        sample: SampleArgs,
        #[command(flatten)]
        #[serde(flatten)]
        trials: TrialArgs,
        #[command(flatten)]
        #[serde(flatten)]
        out: OutArgs,
    },
    /// Mean estimation error against N and its log-log slope.
    Convergence {
        #[command(flatten)]
        #[serde(flatten)]
        model: ModelArgs,
        #[command(flatten)]
        #[serde(flatten)]
        sample: SampleArgs,
        #[command(flatten)]
        #[serde(flatten)]
        trials: TrialArgs,
        #[command(flatten)]
        #[serde(flatten)]
        sweep: SweepArgs,
        #[command(flatten)]
        #[serde(flatten)]
        out: OutArgs,
    },
    /// Mean distance between the two estimators against N.
    Distance {
        #[command(flatten)]
        #[serde(flatten)]
        model: ModelArgs,
        #[command(flatten)]
        #[serde(flatten)]
        sample: SampleArgs,
        #[command(flatten)]
        #[serde(flatten)]
        trials: TrialArgs,
        #[command(flatten)]
        #[serde(flatten)]
        sweep: SweepArgs,
        #[command(flatten)]
        #[serde(flatten)]
        out: OutArgs,
    },
    /// Empirical variance over bound, per entry and bound.
    Ratios {
        #[command(flatten)]
        #[serde(flatten)]
        model: ModelArgs,
        #[command(flatten)]
        #[serde(flatten)]
        sample: SampleArgs,
        #[command(flatten)]
        #[serde(flatten)]
        trials: TrialArgs,
        /// Fit the network toward this sufficient statistic first.
        #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
        fit_target: Option<Vec<f64>>,
        #[command(flatten)]
        #[serde(flatten)]
        out: OutArgs,
    },
    /// Re-run the command recorded in a manifest.
    Replay {
        #[arg(long)]
        manifest: PathBuf,
        /// Output directory; the recorded one otherwise.
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        threads: Option<usize>,
    },
}

impl Command {
    pub fn name(&self) -> &'static str {
        match self {
            Command::FamilyTable { .. } => "family-table",
            Command::Exact { .. } => "exact",
            Command::Estimate { .. } => "estimate",
            Command::Variance { .. } => "variance",
            Command::Bounds { .. } => "bounds",
            Command::Spectrum { .. } => "spectrum",
            Command::Trials { .. } => "trials",
            Command::Convergence { .. } => "convergence",
            Command::Distance { .. } => "distance",
            Command::Ratios { .. } => "ratios",
            Command::Replay { .. } => "replay",
        }
    }

    pub fn out_args_mut(&mut self) -> Option<&mut OutArgs> {
        match self {
            Command::FamilyTable { out, .. }
            | Command::Exact { out, .. }
            | Command::Estimate { out, .. }
            | Command::Variance { out, .. }
            | Command::Bounds { out, .. }
            | Command::Spectrum { out, .. }
            | Command::Trials { out, .. }
            | Command::Convergence { out, .. }
            | Command::Distance { out, .. }
            | Command::Ratios { out, .. } => Some(out),
            Command::Replay { .. } => None,
        }
    }

    pub fn model_args(&self) -> Option<&ModelArgs> {
        match self {
            Command::Exact { model, .. }
            | Command::Estimate { model, .. }
            | Command::Variance { model, .. }
            | Command::Bounds { model, .. }
            | Command::Spectrum { model, .. }
            | Command::Trials { model, .. }
            | Command::Convergence { model, .. }
            | Command::Distance { model, .. }
            | Command::Ratios { model, .. } => Some(model),
            Command::FamilyTable { .. } | Command::Replay { .. } => None,
        }
    }
}
