//! Corrupt, enhance and score a synthetic two-view scene.

use std::time::Instant;

use crate::baseline::{bilateral_filter, BilateralOptions};
use crate::cloud::{c2c, c2p, normalize_cloud, project_to_cloud, PointCloud};
use crate::enhance::{enhance_pair, EnhanceOptions};
use crate::error::Result;
use crate::forward::{corrupt, derive_seed, NoiseModel, QuantizerParams};
use crate::image::DepthImage;
use crate::layering::layer_and_prefilter;
use crate::scene::{Scene, View};

/// Stage id used when deriving per-view corruption seeds.
pub const CORRUPT_STAGE: u64 = 1;

/// C2C and C2P of one candidate against the ground truth.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Scores {
    pub c2c: f64,
    pub c2p: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrialOutcome {
    pub seed: u64,
    pub corrupted: Scores,
    pub enhanced: Scores,
    /// Layer-wise bilateral filter alone, per view.
    pub baseline: Scores,
    /// Per-view bilateral with a noise-adaptive range kernel.
    pub adaptive_bilateral: Scores,
    pub seconds: f64,
}

/// Both views as one cloud in the left camera frame.
pub fn pair_cloud(left: &DepthImage<f64>, right: &DepthImage<f64>) -> PointCloud<f64> {
    let mut r = project_to_cloud(right);
    r.translate([right.intrinsics.baseline, 0.0, 0.0]);
    project_to_cloud(left).merge(&r)
}

/// Scores a candidate pair against a reference pair after normalizing each cloud.
pub fn score_pair(
    reference: (&DepthImage<f64>, &DepthImage<f64>),
    candidate: (&DepthImage<f64>, &DepthImage<f64>),
) -> Result<Scores> {
    let (r, _, _) = normalize_cloud(&pair_cloud(reference.0, reference.1));
    let (c, _, _) = normalize_cloud(&pair_cloud(candidate.0, candidate.1));
    Ok(Scores {
        c2c: c2c(&r, &c)?,
        c2p: c2p(&r, &c)?,
    })
}

/// One seeded run on `scene`.
pub fn run_trial(
    scene: &Scene,
    q: &QuantizerParams<f64>,
    m: &NoiseModel<f64>,
    opts: &EnhanceOptions,
    bilateral: &BilateralOptions,
    seed: u64,
) -> Result<TrialOutcome> {
    let start = Instant::now();
    let gl: DepthImage<f64> = scene.render(View::Left)?;
    let gr: DepthImage<f64> = scene.render(View::Right)?;
    let yl = corrupt(&gl, q, m, derive_seed(seed, CORRUPT_STAGE, 0))?;
    let yr = corrupt(&gr, q, m, derive_seed(seed, CORRUPT_STAGE, 1))?;
    let pair = enhance_pair(&yl, &yr, q, m, opts)?;
    let bl = bilateral_filter(&yl, m, bilateral)?;
    let br = bilateral_filter(&yr, m, bilateral)?;
    let (_, fl) = layer_and_prefilter(&yl, &opts.layers)?;
    let (_, fr) = layer_and_prefilter(&yr, &opts.layers)?;
    Ok(TrialOutcome {
        seed,
        corrupted: score_pair((&gl, &gr), (&yl, &yr))?,
        enhanced: score_pair((&gl, &gr), (&pair.left.image, &pair.right.image))?,
        baseline: score_pair((&gl, &gr), (&fl, &fr))?,
        adaptive_bilateral: score_pair((&gl, &gr), (&bl, &br))?,
        seconds: start.elapsed().as_secs_f64(),
    })
}
