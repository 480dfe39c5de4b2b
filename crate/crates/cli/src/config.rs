//! Experiment configuration: a single JSON file, with a handful of CLI flag
//! overrides layered on top.

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use std::path::PathBuf;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ModelKind {
    Ising,
    Planesource,
    SyntheticMatrix,
    SyntheticTucker,
}

impl std::str::FromStr for ModelKind {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "ising" => Ok(ModelKind::Ising),
            "planesource" => Ok(ModelKind::Planesource),
            "synthetic-matrix" => Ok(ModelKind::SyntheticMatrix),
            "synthetic-tucker" => Ok(ModelKind::SyntheticTucker),
            other => Err(format!("unknown model {other:?}")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum ModeKind {
    #[default]
    Parallel,
    RankAdaptive,
}

impl std::str::FromStr for ModeKind {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "parallel" => Ok(ModeKind::Parallel),
            "rank-adaptive" => Ok(ModeKind::RankAdaptive),
            other => Err(format!("unknown mode {other:?}")),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct IsingConfig {
    pub sites: usize,
    pub omega: f64,
    pub delta: f64,
    pub coupling: f64,
    pub alpha: f64,
}

impl Default for IsingConfig {
    fn default() -> Self {
        IsingConfig {
            sites: 6,
            omega: 1.0,
            delta: 1.0,
            coupling: 1.0,
            alpha: 1.0,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct PlanesourceConfig {
    pub n_x: usize,
    pub n_moments: usize,
    pub n_xi: usize,
    pub n_eta: usize,
    pub sigma_s0: f64,
    pub sigma_s_xi: f64,
    pub sigma_s_eta: f64,
    pub delta: f64,
    pub x_half_width: f64,
    pub cfl: f64,
    /// `outflow` or `periodic`.
    pub boundary: String,
    /// Also compute the dense collocation reference.
    pub reference: bool,
}

impl Default for PlanesourceConfig {
    fn default() -> Self {
        PlanesourceConfig {
            n_x: 50,
            n_moments: 20,
            n_xi: 10,
            n_eta: 10,
            sigma_s0: 5.0,
            sigma_s_xi: 4.0,
            sigma_s_eta: 1.0,
            delta: 0.03 * 0.03,
            x_half_width: 2.5,
            cfl: 0.1,
            boundary: "outflow".into(),
            reference: true,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum SyntheticFieldKind {
    Zero,
    #[default]
    Linear,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct SyntheticConfig {
    /// Matrix problem dimensions.
    pub rows: usize,
    pub cols: usize,
    pub rank: usize,
    /// Tucker problem dimensions and ranks.
    pub dims: Vec<usize>,
    pub ranks: Vec<usize>,
    pub field: SyntheticFieldKind,
}

impl Default for SyntheticConfig {
    fn default() -> Self {
        SyntheticConfig {
            rows: 12,
            cols: 10,
            rank: 3,
            dims: vec![4, 4, 4],
            ranks: vec![2, 2, 2],
            field: SyntheticFieldKind::Linear,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub model: ModelKind,
    #[serde(default)]
    pub ising: IsingConfig,
    #[serde(default)]
    pub planesource: PlanesourceConfig,
    #[serde(default)]
    pub synthetic: SyntheticConfig,
    #[serde(default)]
    pub mode: ModeKind,
    /// Outer step sizes (convergence studies run every entry; single-run
    /// experiments use the first).
    pub h: Vec<f64>,
    pub t_end: f64,
    #[serde(default = "defaults::theta")]
    pub theta: f64,
    #[serde(default = "defaults::rejection_factor")]
    pub rejection_factor: f64,
    #[serde(default)]
    pub rejection: bool,
    #[serde(default = "defaults::max_rank")]
    pub max_rank: usize,
    #[serde(default = "defaults::min_rank")]
    pub min_rank: usize,
    #[serde(default = "defaults::substeps")]
    pub substeps: usize,
    /// Per-bond rank the initial network is padded to.
    #[serde(default = "defaults::initial_rank")]
    pub initial_rank: usize,
    /// Singular weight on padded directions (0 pads exactly).
    #[serde(default)]
    pub pad_sigma: f64,
    /// Padding weights swept by the robustness runner.
    #[serde(default = "defaults::pad_levels")]
    pub pad_levels: Vec<f64>,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "defaults::output_dir")]
    pub output_dir: PathBuf,
    /// Write a network snapshot of the final state (tree models).
    #[serde(default)]
    pub snapshot: bool,
    /// Restart: load the initial network from a snapshot file instead of
    /// constructing it from the model (tree models).
    #[serde(default)]
    pub initial_snapshot: Option<PathBuf>,
}

mod defaults {
    use std::path::PathBuf;
    pub fn theta() -> f64 {
        1e-8
    }
    pub fn rejection_factor() -> f64 {
        10.0
    }
    pub fn max_rank() -> usize {
        64
    }
    pub fn min_rank() -> usize {
        1
    }
    pub fn substeps() -> usize {
        4
    }
    pub fn initial_rank() -> usize {
        2
    }
    pub fn pad_levels() -> Vec<f64> {
        vec![1e-8, 1e-11, 1e-14]
    }
    pub fn output_dir() -> PathBuf {
        PathBuf::from("out")
    }
}

/// Flag overrides applied after the file is parsed.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub theta: Option<f64>,
    pub h: Option<Vec<f64>>,
    pub t_end: Option<f64>,
    pub model: Option<ModelKind>,
    pub mode: Option<ModeKind>,
    pub output_dir: Option<PathBuf>,
}

impl ExperimentConfig {
    pub fn from_file(path: &std::path::Path) -> Result<Self, String> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| format!("cannot read config {}: {e}", path.display()))?;
        let cfg: ExperimentConfig =
            serde_json::from_str(&text).map_err(|e| format!("invalid config: {e}"))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn apply_overrides(&mut self, o: &Overrides) {
        if let Some(theta) = o.theta {
            self.theta = theta;
        }
        if let Some(h) = &o.h {
            self.h = h.clone();
        }
        if let Some(t) = o.t_end {
            self.t_end = t;
        }
        if let Some(m) = o.model {
            self.model = m;
        }
        if let Some(m) = o.mode {
            self.mode = m;
        }
        if let Some(dir) = &o.output_dir {
            self.output_dir = dir.clone();
        }
    }

    pub fn validate(&self) -> Result<(), String> {
        if self.h.is_empty() {
            return Err("h list must not be empty".into());
        }
        if self.h.iter().any(|&h| h <= 0.0) {
            return Err("all step sizes must be positive".into());
        }
        if self.t_end <= 0.0 {
            return Err("t_end must be positive".into());
        }
        if self.theta < 0.0 {
            return Err("theta must be non-negative".into());
        }
        if self.min_rank < 1 || self.min_rank > self.max_rank {
            return Err("need 1 <= min_rank <= max_rank".into());
        }
        if self.substeps < 1 {
            return Err("substeps must be at least 1".into());
        }
        Ok(())
    }

    /// Hash of the effective configuration; stamped into every CSV so that
    /// outputs are traceable and reruns are comparable byte for byte.
    pub fn hash(&self) -> String {
        let canonical = serde_json::to_string(self).expect("config serializes");
        let digest = Sha256::digest(canonical.as_bytes());
        let hex: String = digest.iter().map(|b| format!("{b:02x}")).collect();
        hex[..16].to_string()
    }
}
