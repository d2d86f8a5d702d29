//! Architecture and training hyperparameters.

use std::fmt::Write as _;

use crate::error::{Error, Result};
use crate::graph_conv::Aggregation;

#[derive(Clone, Debug, PartialEq)]
pub struct ModelConfig {
    /// Main feature width `F`.
    pub features: usize,
    /// Width of each preprocessing branch (`F / 3`).
    pub branch_features: usize,
    pub lpf_blocks: usize,
    /// Neighbours per pixel `K`.
    pub knn: usize,
    /// Inference search window (odd).
    pub window: usize,
    /// Edge-attention temperature `δ`.
    pub delta: f64,
    /// Rank budget `r`.
    pub rank: usize,
    /// Circulant shifts `m`.
    pub shifts: usize,
    pub aggregation: Aggregation,
    pub lr_start: f64,
    pub lr_end: f64,
    pub iters: usize,
    pub batch: usize,
    pub patch: usize,
    /// Noise standard deviation on the 0–255 scale.
    pub sigma: f64,
    pub seed: u64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig::desk()
    }
}

impl ModelConfig {
    /// Small model trainable on a desktop CPU.
    pub fn desk() -> Self {
        ModelConfig {
            features: 48,
            branch_features: 16,
            lpf_blocks: 1,
            knn: 4,
            window: 21,
            delta: 10.0,
            rank: 4,
            shifts: 3,
            aggregation: Aggregation::Ecc,
            lr_start: 1e-3,
            lr_end: 1e-4,
            iters: 5000,
            batch: 4,
            patch: 16,
            sigma: 25.0,
            seed: 0,
        }
    }

    /// Full-width configuration (132 features, 44 per branch).
    pub fn full() -> Self {
        ModelConfig {
            features: 132,
            branch_features: 44,
            lpf_blocks: 3,
            knn: 16,
            window: 43,
            delta: 10.0,
            rank: 11,
            shifts: 3,
            aggregation: Aggregation::Ecc,
            lr_start: 1e-4,
            lr_end: 1e-5,
            iters: 800_000,
            batch: 8,
            patch: 42,
            sigma: 25.0,
            seed: 0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |msg: String| Err(Error::Config(msg));
        if self.features == 0 || self.branch_features == 0 {
            return fail("feature widths must be positive".into());
        }
        if 3 * self.branch_features != self.features {
            return fail(format!(
                "3 * branch_features ({}) must equal features ({})",
                3 * self.branch_features,
                self.features
            ));
        }
        if self.lpf_blocks == 0 {
            return fail("lpf_blocks must be at least 1".into());
        }
        if self.window < 3 || self.window % 2 == 0 {
            return fail(format!("window {} must be odd and at least 3", self.window));
        }
        if !(self.delta > 0.0) || !self.delta.is_finite() {
            return fail(format!("delta {} must be positive", self.delta));
        }
        if self.rank == 0 || self.rank > self.branch_features {
            return fail(format!(
                "rank {} must satisfy 1 <= rank <= branch_features ({})",
                self.rank, self.branch_features
            ));
        }
        if self.shifts == 0 || (self.rank * self.features) % self.shifts != 0 {
            return fail(format!(
                "circ_shifts {} must divide rank * features = {}",
                self.shifts,
                self.rank * self.features
            ));
        }
        if !(self.lr_start > 0.0 && self.lr_end > 0.0) {
            return fail("learning rates must be positive".into());
        }
        if self.batch == 0 {
            return fail("batch must be at least 1".into());
        }
        if self.patch < 3 {
            return fail(format!("patch {} must be at least 3", self.patch));
        }
        if !(self.sigma >= 0.0) || !self.sigma.is_finite() {
            return fail(format!("sigma {} must be >= 0", self.sigma));
        }
        Ok(())
    }

    /// Learning rate at iteration `t`: `lr_start · (lr_end / lr_start)^{t / iters}`.
    pub fn learning_rate(&self, t: usize) -> f64 {
        if self.iters == 0 {
            return self.lr_start;
        }
        let frac = t as f64 / self.iters as f64;
        self.lr_start * (self.lr_end / self.lr_start).powf(frac)
    }

    pub const KEYS: &'static [&'static str] = &[
        "features",
        "branch_features",
        "lpf_blocks",
        "knn",
        "window",
        "delta",
        "rank",
        "circ_shifts",
        "aggregation",
        "lr_start",
        "lr_end",
        "iters",
        "batch",
        "patch",
        "sigma",
        "seed",
    ];

    /// Set one field from its textual value. Keys accept `-` or `_`.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        fn parse<V: std::str::FromStr>(key: &str, value: &str) -> Result<V> {
            value
                .trim()
                .parse()
                .map_err(|_| Error::Config(format!("invalid value {value:?} for {key}")))
        }
        let key = key.trim().replace('-', "_");
        match key.as_str() {
            "features" => self.features = parse(&key, value)?,
            "branch_features" => self.branch_features = parse(&key, value)?,
            "lpf_blocks" => self.lpf_blocks = parse(&key, value)?,
            "knn" => self.knn = parse(&key, value)?,
            "window" => self.window = parse(&key, value)?,
            "delta" => self.delta = parse(&key, value)?,
            "rank" => self.rank = parse(&key, value)?,
            "circ_shifts" => self.shifts = parse(&key, value)?,
            "aggregation" => {
                self.aggregation = match value.trim() {
                    "ecc" => Aggregation::Ecc,
                    "attention" => Aggregation::AttentionOnly,
                    other => return Err(Error::Config(format!("unknown aggregation {other:?}"))),
                }
            }
            "lr_start" => self.lr_start = parse(&key, value)?,
            "lr_end" => self.lr_end = parse(&key, value)?,
            "iters" => self.iters = parse(&key, value)?,
            "batch" => self.batch = parse(&key, value)?,
            "patch" => self.patch = parse(&key, value)?,
            "sigma" => self.sigma = parse(&key, value)?,
            "seed" => self.seed = parse(&key, value)?,
            _ => return Err(Error::Config(format!("unknown configuration key {key:?}"))),
        }
        Ok(())
    }

    /// Apply `key=value` lines; blank lines and `#` comments are ignored.
    pub fn apply_kv(&mut self, text: &str) -> Result<()> {
        for (n, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("line {}: expected key=value", n + 1)))?;
            self.set(k, v)?;
        }
        Ok(())
    }

    pub fn from_kv(text: &str) -> Result<Self> {
        let mut c = ModelConfig::desk();
        c.apply_kv(text)?;
        c.validate()?;
        Ok(c)
    }

    pub fn to_kv(&self) -> String {
        let mut s = String::new();
        let agg = match self.aggregation {
            Aggregation::Ecc => "ecc",
            Aggregation::AttentionOnly => "attention",
        };
        let _ = writeln!(s, "features={}", self.features);
        let _ = writeln!(s, "branch_features={}", self.branch_features);
        let _ = writeln!(s, "lpf_blocks={}", self.lpf_blocks);
        let _ = writeln!(s, "knn={}", self.knn);
        let _ = writeln!(s, "window={}", self.window);
        let _ = writeln!(s, "delta={}", self.delta);
        let _ = writeln!(s, "rank={}", self.rank);
        let _ = writeln!(s, "circ_shifts={}", self.shifts);
        let _ = writeln!(s, "aggregation={agg}");
        let _ = writeln!(s, "lr_start={}", self.lr_start);
        let _ = writeln!(s, "lr_end={}", self.lr_end);
        let _ = writeln!(s, "iters={}", self.iters);
        let _ = writeln!(s, "batch={}", self.batch);
        let _ = writeln!(s, "patch={}", self.patch);
        let _ = writeln!(s, "sigma={}", self.sigma);
        let _ = writeln!(s, "seed={}", self.seed);
        s
    }
}
