//! Mapping one rectified view's row into the other view and its linearization.
//!
//! A pixel at column `i` with depth `x` lands at `s = i - fD/x` in the right view
//! (`s = i + fD/x` going right to left). Right pixel `j` interpolates the left
//! depths landing in `[j - h, j + h)` with Gaussian weights normalized by a
//! constant `w_bar_j` fixed at the linearization point:
//!
//! ```text
//! g_j(x) = sum_i exp(-(s_i(x_i) - j)^2 / sigma_s^2) x_i / w_bar_j
//! ```

use crate::error::{Error, Result};
use crate::scalar::Real;
use crate::sparse::CsrMatrix;

/// Direction of the warp.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Direction {
    LeftToRight,
    RightToLeft,
}

impl Direction {
    fn sign<T: Real>(self) -> T {
        match self {
            Direction::LeftToRight => -T::one(),
            Direction::RightToLeft => T::one(),
        }
    }

    pub fn reverse(self) -> Self {
        match self {
            Direction::LeftToRight => Direction::RightToLeft,
            Direction::RightToLeft => Direction::LeftToRight,
        }
    }
}

/// Disparity `fD/x` and landing position `i - fD/x` in the right view.
pub fn disparity_and_position<T: Real>(i: T, x: T, focal: T, baseline: T) -> Result<(T, T)> {
    position(i, x, focal, baseline, Direction::LeftToRight)
}

/// Disparity and landing position for either direction.
pub fn position<T: Real>(i: T, x: T, focal: T, baseline: T, dir: Direction) -> Result<(T, T)> {
    if !(x > T::zero()) {
        return Err(Error::range("depth", x.as_f64(), "disparity needs x > 0"));
    }
    let d = focal * baseline / x;
    Ok((d, i + dir.sign::<T>() * d))
}

/// How the interpolation normalizer `w_bar_j` behaves away from `x_hat`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Normalizer {
    /// Held at its value at `x_hat`.
    #[default]
    Frozen,
    /// Recomputed from the current weights, so `g_j` stays a weighted average.
    Tracking,
}

/// Warp parameters.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct WarpOptions {
    /// Neighbourhood half-width `h` (pixels).
    pub half_width: usize,
    /// Kernel standard deviation `sigma_s` (pixels).
    pub sigma_s: f64,
    /// Contributors deeper than the nearest one by more than this (mm) are treated as occluded.
    pub occlusion_gap: f64,
    /// Target pixels whose reference depth differs from the prediction by more than
    /// this (mm) are dropped.
    pub consistency_gap: f64,
    pub normalizer: Normalizer,
}

impl Default for WarpOptions {
    fn default() -> Self {
        WarpOptions {
            half_width: 2,
            sigma_s: 1.0,
            occlusion_gap: 50.0,
            consistency_gap: 50.0,
            normalizer: Normalizer::Frozen,
        }
    }
}

/// Source row to warp: available pixels of one row in column order.
#[derive(Debug, Clone, Copy)]
pub struct SourceRow<'a, T> {
    pub columns: &'a [usize],
    /// Linearization point `x_hat` (mm), one per column.
    pub values: &'a [T],
    pub focal: T,
    pub baseline: T,
    pub direction: Direction,
}

/// Reference data of the target row used to reject inconsistent target pixels.
#[derive(Debug, Clone, Copy)]
pub struct TargetRow<'a, T> {
    pub values: &'a [T],
    pub mask: &'a [bool],
}

/// Linearized warp `g(x) ~ H x + e` around `x_hat`, over the retained target pixels.
#[derive(Debug, Clone, PartialEq)]
pub struct WarpModel<T> {
    /// Normalized interpolation weights at `x_hat` (rows: retained target pixels).
    pub weights: CsrMatrix<T>,
    pub jacobian: CsrMatrix<T>,
    pub offset: Vec<T>,
    pub linearization_point: Vec<T>,
    /// Target column of each retained row.
    pub target_columns: Vec<usize>,
    /// Frozen normalizers `w_bar_j`.
    pub normalizers: Vec<T>,
    pub half_width: usize,
    pub sigma_s: T,
    /// Target pixels where the occlusion rule removed contributors.
    pub occlusions: usize,
    /// Target pixels with contributors but rejected (missing or inconsistent).
    pub rejected: usize,
    pub normalizer: Normalizer,
    source_columns: Vec<usize>,
    fd: T,
    sign: T,
}

impl<T: Real> WarpModel<T> {
    /// A warp with no target pixels.
    pub fn empty(columns: &[usize], x_hat: &[T], opts: &WarpOptions) -> Self {
        let n = columns.len();
        WarpModel {
            weights: CsrMatrix::zeros(0, n),
            jacobian: CsrMatrix::zeros(0, n),
            offset: Vec::new(),
            linearization_point: x_hat.to_vec(),
            target_columns: Vec::new(),
            normalizers: Vec::new(),
            half_width: opts.half_width,
            sigma_s: T::lit(opts.sigma_s),
            occlusions: 0,
            rejected: 0,
            normalizer: opts.normalizer,
            source_columns: columns.to_vec(),
            fd: T::zero(),
            sign: T::zero(),
        }
    }

    /// `g(x)` with the sparsity pattern frozen at `x_hat`.
    pub fn evaluate(&self, x: &[T]) -> Vec<T> {
        let s2 = self.sigma_s * self.sigma_s;
        (0..self.weights.nrows())
            .map(|r| {
                let j = T::from_usize_lossy(self.target_columns[r]);
                let (num, den) = self.weights.row(r).fold((T::zero(), T::zero()), |(num, den), (i, _)| {
                    let s = T::from_usize_lossy(self.source_columns[i]) + self.sign * self.fd / x[i];
                    let w = (-(s - j) * (s - j) / s2).exp();
                    (num + w * x[i], den + w)
                });
                match self.normalizer {
                    Normalizer::Frozen => num / self.normalizers[r],
                    Normalizer::Tracking => num / den,
                }
            })
            .collect()
    }

    /// `H x + e`.
    pub fn linear(&self, x: &[T]) -> Vec<T> {
        self.jacobian
            .mul_vec(x)
            .into_iter()
            .zip(&self.offset)
            .map(|(a, &b)| a + b)
            .collect()
    }

    pub fn is_empty(&self) -> bool {
        self.target_columns.is_empty()
    }
}

/// Interpolation weights only (the matrix `W` at `x_hat`), without target gating.
pub fn build_weight_matrix<T: Real>(src: &SourceRow<T>, target_width: usize, opts: &WarpOptions) -> Result<CsrMatrix<T>> {
    let model = linearize_warp(src, target_width, None, opts)?;
    // scatter back to all target columns so empty rows stay visible
    let mut trips = Vec::new();
    for (r, &j) in model.target_columns.iter().enumerate() {
        for (i, v) in model.weights.row(r) {
            trips.push((j, i, v));
        }
    }
    Ok(CsrMatrix::from_triplets(target_width, src.columns.len(), trips))
}

/// Builds `W`, `H` and `e` at `x_hat = src.values`.
///
/// Target pixels with no contributor are dropped. With a reference target row,
/// pixels that are missing there or disagree with `g(x_hat)` by more than the
/// consistency gap are dropped as well.
pub fn linearize_warp<T: Real>(
    src: &SourceRow<T>,
    target_width: usize,
    target: Option<TargetRow<T>>,
    opts: &WarpOptions,
) -> Result<WarpModel<T>> {
    let n = src.columns.len();
    if src.values.len() != n {
        return Err(Error::Parameter("source columns and values differ in length".into()));
    }
    if opts.half_width < 1 || !(opts.sigma_s > 0.0) {
        return Err(Error::Parameter(format!(
            "warp needs h >= 1 and sigma_s > 0 (h = {}, sigma_s = {})",
            opts.half_width, opts.sigma_s
        )));
    }
    if let Some(t) = &target {
        if t.values.len() != target_width || t.mask.len() != target_width {
            return Err(Error::Parameter("target reference row has the wrong width".into()));
        }
    }
    let fd = src.focal * src.baseline;
    let sign: T = src.direction.sign();
    let h = T::from_usize_lossy(opts.half_width);
    let sigma_s = T::lit(opts.sigma_s);
    let s2 = sigma_s * sigma_s;

    // contributors per target column
    let mut contrib: Vec<Vec<(usize, T)>> = vec![Vec::new(); target_width];
    for (i, (&c, &x)) in src.columns.iter().zip(src.values).enumerate() {
        let (_, s) = position(T::from_usize_lossy(c), x, src.focal, src.baseline, src.direction)?;
        // j - h <= s < j + h  <=>  s - h < j <= s + h
        let lo = ((s - h).floor() + T::one()).max(T::zero());
        let hi = (s + h).floor();
        if hi < T::zero() || lo > T::from_usize_lossy(target_width - 1) {
            continue;
        }
        let lo = lo.to_usize().unwrap_or(0);
        let hi = hi.to_usize().unwrap_or(0).min(target_width - 1);
        for j in lo..=hi {
            contrib[j].push((i, s));
        }
    }

    let mut w_trips = Vec::new();
    let mut h_trips = Vec::new();
    let mut target_columns = Vec::new();
    let mut normalizers = Vec::new();
    let mut g_hat = Vec::new();
    let mut occlusions = 0;
    let mut rejected = 0;
    for (j, list) in contrib.iter_mut().enumerate() {
        if list.is_empty() {
            continue;
        }
        let nearest = list.iter().map(|&(i, _)| src.values[i]).fold(T::infinity(), T::min);
        let before = list.len();
        list.retain(|&(i, _)| src.values[i] - nearest <= T::lit(opts.occlusion_gap));
        if list.len() < before {
            occlusions += 1;
        }
        let jf = T::from_usize_lossy(j);
        let raw: Vec<T> = list.iter().map(|&(_, s)| (-(s - jf) * (s - jf) / s2).exp()).collect();
        let wbar: T = raw.iter().copied().sum();
        if !(wbar > T::zero()) {
            continue;
        }
        let g: T = list.iter().zip(&raw).map(|(&(i, _), &w)| w * src.values[i]).sum::<T>() / wbar;
        if let Some(t) = &target {
            if !t.mask[j] || (t.values[j] - g).abs() > T::lit(opts.consistency_gap) {
                rejected += 1;
                continue;
            }
        }
        let r = target_columns.len();
        for (&(i, s), &w) in list.iter().zip(&raw) {
            let x = src.values[i];
            let wn = w / wbar;
            // d/dx [w(s(x)) x] = w + x w (-2 (s - j) / sigma_s^2) ds/dx,  ds/dx = -sign fD / x^2;
            // a tracking normalizer replaces x by x - g in the kernel term
            let ds = -sign * fd / (x * x);
            let lever = match opts.normalizer {
                Normalizer::Frozen => x,
                Normalizer::Tracking => x - g,
            };
            let hval = wn * (T::one() - T::lit(2.0) * (s - jf) / s2 * ds * lever);
            w_trips.push((r, i, wn));
            h_trips.push((r, i, hval));
        }
        target_columns.push(j);
        normalizers.push(wbar);
        g_hat.push(g);
    }
    if occlusions > 0 {
        log::debug!("{occlusions} target pixels had contributors from several surfaces; nearest kept");
    }
    let m = target_columns.len();
    let weights = CsrMatrix::from_triplets(m, n, w_trips);
    let jacobian = CsrMatrix::from_triplets(m, n, h_trips);
    let hx = jacobian.mul_vec(src.values);
    let offset = g_hat.iter().zip(&hx).map(|(&g, &v)| g - v).collect();
    Ok(WarpModel {
        weights,
        jacobian,
        offset,
        linearization_point: src.values.to_vec(),
        target_columns,
        normalizers,
        half_width: opts.half_width,
        sigma_s,
        occlusions,
        rejected,
        normalizer: opts.normalizer,
        source_columns: src.columns.to_vec(),
        fd,
        sign,
    })
}
