//! Model and training flags shared by several subcommands.

use std::fs;
use std::path::PathBuf;

use clap::Args;
use gcdn::network::ModelConfig;

use crate::{io_error, CliResult};

/// Defaults come from the desk configuration, then `--config`, then flags.
#[derive(Args, Clone, Debug, Default)]
pub struct ModelFlags {
    /// File of `key=value` lines overriding the defaults.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
    #[arg(long)]
    pub sigma: Option<f64>,
    #[arg(long)]
    pub patch: Option<usize>,
    #[arg(long)]
    pub batch: Option<usize>,
    #[arg(long)]
    pub iters: Option<usize>,
    #[arg(long)]
    pub lr_start: Option<f64>,
    #[arg(long)]
    pub lr_end: Option<f64>,
    /// Neighbours per pixel.
    #[arg(long)]
    pub knn: Option<usize>,
    /// Inference search window (odd).
    #[arg(long)]
    pub window: Option<usize>,
    #[arg(long)]
    pub features: Option<usize>,
    /// Width of each preprocessing branch.
    #[arg(long)]
    pub branch_features: Option<usize>,
    #[arg(long)]
    pub lpf_blocks: Option<usize>,
    #[arg(long)]
    pub rank: Option<usize>,
    #[arg(long)]
    pub circ_shifts: Option<usize>,
    /// Edge-attention length scale.
    #[arg(long)]
    pub delta: Option<f64>,
    /// `ecc` or `attention`.
    #[arg(long)]
    pub aggregation: Option<String>,
    #[arg(long)]
    pub seed: Option<u64>,
}

impl ModelFlags {
    /// The layered configuration, without validation.
    pub fn layered(&self) -> CliResult<ModelConfig> {
        let mut cfg = ModelConfig::desk();
        if let Some(p) = &self.config {
            let text = fs::read_to_string(p).map_err(|e| io_error(p, e))?;
            cfg.apply_kv(&text)?;
        }
        let flags: [(&str, Option<String>); 16] = [
            ("sigma", self.sigma.map(|v| v.to_string())),
            ("patch", self.patch.map(|v| v.to_string())),
            ("batch", self.batch.map(|v| v.to_string())),
            ("iters", self.iters.map(|v| v.to_string())),
            ("lr_start", self.lr_start.map(|v| v.to_string())),
            ("lr_end", self.lr_end.map(|v| v.to_string())),
            ("knn", self.knn.map(|v| v.to_string())),
            ("window", self.window.map(|v| v.to_string())),
            ("features", self.features.map(|v| v.to_string())),
            ("branch_features", self.branch_features.map(|v| v.to_string())),
            ("lpf_blocks", self.lpf_blocks.map(|v| v.to_string())),
            ("rank", self.rank.map(|v| v.to_string())),
            ("circ_shifts", self.circ_shifts.map(|v| v.to_string())),
            ("delta", self.delta.map(|v| v.to_string())),
            ("aggregation", self.aggregation.clone()),
            ("seed", self.seed.map(|v| v.to_string())),
        ];
        for (key, value) in flags {
            if let Some(v) = value {
                cfg.set(key, &v)?;
            }
        }
        Ok(cfg)
    }

    pub fn resolve(&self) -> CliResult<ModelConfig> {
        let cfg = self.layered()?;
        cfg.validate()?;
        Ok(cfg)
    }
}
