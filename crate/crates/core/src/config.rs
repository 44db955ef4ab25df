//! Pipeline configuration read from TOML.
//!
//! ```toml
//! seed = 7
//!
//! [paths]
//! left = "left.pfm"
//! right = "right.pfm"
//! output_dir = "out"
//!
//! [quantizer]
//! phi = 500.0
//!
//! [solver]
//! g1 = 1.0
//! g2 = 0.1
//! ```
//!
//! Every field has a default. Relative paths are taken relative to the
//! directory holding the configuration file.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::enhance::EnhanceOptions;
use crate::error::{Error, Result};
use crate::forward::{CorruptOptions, NoiseFamily, NoiseModel, QuantizerParams};
use crate::layering::LayerOptions;
use crate::solver::SolverOptions;
use crate::warp::WarpOptions;

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    pub seed: u64,
    pub paths: Paths,
    pub quantizer: QuantizerConfig,
    pub noise: NoiseConfig,
    pub solver: SolverConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Paths {
    /// Left and right depth images (PGM or PFM, each with a `.meta` sidecar).
    pub left: Option<PathBuf>,
    pub right: Option<PathBuf>,
    /// Optional 8-bit PGM masks; zero marks a missing pixel.
    pub left_mask: Option<PathBuf>,
    pub right_mask: Option<PathBuf>,
    /// Cluster observations for noise-law estimation.
    pub clusters: Option<PathBuf>,
    pub output_dir: PathBuf,
}

impl Default for Paths {
    fn default() -> Self {
        Paths {
            left: None,
            right: None,
            left_mask: None,
            right_mask: None,
            clusters: None,
            output_dir: PathBuf::from("out"),
        }
    }
}

/// Either `phi` or `bits` sets the log gain; `phi` wins when both are absent.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct QuantizerConfig {
    pub theta: f64,
    pub rho: f64,
    pub x_min: f64,
    pub x_max: f64,
    pub phi: Option<f64>,
    pub bits: Option<u32>,
}

impl Default for QuantizerConfig {
    fn default() -> Self {
        QuantizerConfig {
            theta: 500.0,
            rho: 200.0,
            x_min: 10.0,
            x_max: 5000.0,
            phi: None,
            bits: None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NoiseConfig {
    pub alpha: f64,
    pub mu: f64,
    pub kappa: f64,
    pub family: NoiseFamily,
    /// Fraction of available pixels dropped during corruption.
    pub dropout: f64,
}

impl Default for NoiseConfig {
    fn default() -> Self {
        let m = NoiseModel::<f64>::realsense_d435();
        NoiseConfig {
            alpha: m.alpha,
            mu: m.mu,
            kappa: m.kappa,
            family: m.family,
            dropout: 0.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SolverConfig {
    /// Warp neighbourhood half-width (pixels).
    pub h: usize,
    /// Warp kernel SD (pixels).
    pub sigma_s: f64,
    pub g1: f64,
    pub g2: f64,
    /// Squared-gradient stopping threshold.
    pub eps: f64,
    pub max_iter: usize,
    pub outer_passes: usize,
    /// Rows of history for metric learning.
    #[serde(rename = "K")]
    pub k: usize,
    pub k_max: usize,
    /// Spatial SD of the layer-wise pre-filter (pixels).
    pub prefilter_sigma: f64,
    pub depth_unit: f64,
    pub trust_sigmas: f64,
    pub edge_gap: f64,
    pub learn_metric: bool,
    pub other_view: bool,
}

impl Default for SolverConfig {
    fn default() -> Self {
        let e = EnhanceOptions::default();
        SolverConfig {
            h: e.warp.half_width,
            sigma_s: e.warp.sigma_s,
            g1: e.g1,
            g2: e.g2,
            eps: e.solver.eps,
            max_iter: e.solver.max_iter,
            outer_passes: e.outer_passes,
            k: e.k_rows,
            k_max: e.layers.k_max,
            prefilter_sigma: e.layers.spatial_sigma,
            depth_unit: e.depth_unit,
            trust_sigmas: e.trust_sigmas,
            edge_gap: e.edge_gap,
            learn_metric: e.learn_metric,
            other_view: e.other_view,
        }
    }
}

/// 1-based line of a byte offset.
fn line_of(text: &str, offset: usize) -> usize {
    text[..offset.min(text.len())].matches('\n').count() + 1
}

impl PipelineConfig {
    /// Reads, resolves and validates a configuration file.
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut cfg = Self::parse(&text, path)?;
        if let Some(dir) = path.parent() {
            cfg.resolve_paths(dir);
        }
        cfg.validate()?;
        Ok(cfg)
    }

    /// Parses TOML text; `origin` only labels errors.
    pub fn parse(text: &str, origin: impl AsRef<Path>) -> Result<Self> {
        toml::from_str(text).map_err(|e| {
            let line = e.span().map(|s| line_of(text, s.start));
            Error::parse(origin, line, e.message())
        })
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("configuration serializes")
    }

    /// Makes relative paths relative to `dir`.
    pub fn resolve_paths(&mut self, dir: &Path) {
        let p = &mut self.paths;
        for f in [&mut p.left, &mut p.right, &mut p.left_mask, &mut p.right_mask, &mut p.clusters]
            .into_iter()
            .flatten()
        {
            if f.is_relative() {
                *f = dir.join(&*f);
            }
        }
        if p.output_dir.is_relative() {
            p.output_dir = dir.join(&p.output_dir);
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.quantizer()?;
        self.noise_model()?;
        if !(0.0..1.0).contains(&self.noise.dropout) {
            return Err(Error::Parameter(format!("dropout must lie in [0, 1), got {}", self.noise.dropout)));
        }
        let s = &self.solver;
        if s.h < 2 || !(s.sigma_s > 0.0) || !(s.prefilter_sigma > 0.0) || s.k_max == 0 {
            return Err(Error::Parameter(
                "need h >= 2, sigma_s > 0, prefilter_sigma > 0 and k_max >= 1".into(),
            ));
        }
        self.enhance_options().validate()
    }

    pub fn quantizer(&self) -> Result<QuantizerParams<f64>> {
        let q = &self.quantizer;
        match (q.phi, q.bits) {
            (Some(_), Some(_)) => Err(Error::Parameter("give either phi or bits, not both".into())),
            (None, Some(b)) => QuantizerParams::from_bits(q.theta, q.rho, q.x_min, q.x_max, b),
            (phi, None) => QuantizerParams::from_phi(q.theta, q.rho, q.x_min, q.x_max, phi.unwrap_or(500.0)),
        }
    }

    pub fn noise_model(&self) -> Result<NoiseModel<f64>> {
        NoiseModel::new(self.noise.alpha, self.noise.mu, self.noise.kappa, self.noise.family)
    }

    pub fn corrupt_options(&self) -> CorruptOptions {
        CorruptOptions {
            dropout: self.noise.dropout,
        }
    }

    pub fn enhance_options(&self) -> EnhanceOptions {
        let s = &self.solver;
        let d = EnhanceOptions::default();
        EnhanceOptions {
            warp: WarpOptions {
                half_width: s.h,
                sigma_s: s.sigma_s,
                ..d.warp
            },
            g1: s.g1,
            g2: s.g2,
            depth_unit: s.depth_unit,
            solver: SolverOptions {
                eps: s.eps,
                max_iter: s.max_iter,
                ..d.solver
            },
            outer_passes: s.outer_passes,
            trust_sigmas: s.trust_sigmas,
            edge_gap: s.edge_gap,
            k_rows: s.k,
            layers: LayerOptions {
                k_max: s.k_max,
                spatial_sigma: s.prefilter_sigma,
                seed: self.seed,
                ..d.layers
            },
            learn_metric: s.learn_metric,
            other_view: s.other_view,
            ..d
        }
    }
}
