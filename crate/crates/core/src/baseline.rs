//! Per-view bilateral filtering with a range kernel scaled by the noise model.

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::forward::NoiseModel;
use crate::image::DepthImage;
use crate::scalar::Real;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BilateralOptions {
    /// Spatial kernel SD (pixels).
    pub spatial_sigma: f64,
    /// Range kernel SD as a multiple of the noise SD at the centre pixel.
    pub range_scale: f64,
}

impl Default for BilateralOptions {
    fn default() -> Self {
        BilateralOptions {
            spatial_sigma: 2.0,
            range_scale: 3.0,
        }
    }
}

/// Bilateral filter over available pixels with a noise-adaptive range kernel.
pub fn bilateral_filter<T: Real>(img: &DepthImage<T>, m: &NoiseModel<T>, opts: &BilateralOptions) -> Result<DepthImage<T>> {
    if !(opts.spatial_sigma > 0.0) || !(opts.range_scale > 0.0) {
        return Err(Error::Parameter("bilateral sigmas must be positive".into()));
    }
    let (h, w) = (img.height(), img.width());
    let radius = (3.0 * opts.spatial_sigma).ceil() as isize;
    let vals: Vec<f64> = img.values().iter().map(|v| v.as_f64()).collect();
    let mask = img.mask();
    let s2 = 2.0 * opts.spatial_sigma * opts.spatial_sigma;
    let rows: Vec<Vec<T>> = (0..h)
        .into_par_iter()
        .map(|r| {
            (0..w)
                .map(|c| {
                    let k = r * w + c;
                    if !mask[k] {
                        return img.values()[k];
                    }
                    let x = vals[k];
                    let sd = opts.range_scale * m.std_clamped(T::lit(x)).as_f64();
                    let r2 = 2.0 * sd * sd;
                    let (mut num, mut den) = (0.0, 0.0);
                    for dr in -radius..=radius {
                        let rr = r as isize + dr;
                        if rr < 0 || rr >= h as isize {
                            continue;
                        }
                        for dc in -radius..=radius {
                            let cc = c as isize + dc;
                            if cc < 0 || cc >= w as isize {
                                continue;
                            }
                            let kk = rr as usize * w + cc as usize;
                            if !mask[kk] {
                                continue;
                            }
                            let d = vals[kk] - x;
                            let wt = (-((dr * dr + dc * dc) as f64) / s2 - d * d / r2).exp();
                            num += wt * vals[kk];
                            den += wt;
                        }
                    }
                    T::lit(num / den)
                })
                .collect()
        })
        .collect();
    img.with_values(rows.concat())
}
