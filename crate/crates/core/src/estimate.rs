//! Noise standard-deviation estimation from quantized observations of a known
//! depth, and least-squares fitting of the quadratic noise law.
//!
//! An observation `y` of ground truth `x*` only tells us that the noise fell in
//! `[n-, n+)`, the bin of `y` shifted by `-x*`. The likelihood of `sigma` is the
//! product over observations of `P(n- <= n < n+)`. Evaluation happens in `f64`
//! and in the log domain throughout.

use std::f64::consts::{PI, SQRT_2};

use rayon::prelude::*;
use libm::erfc;

use crate::error::{Error, Result};
use crate::forward::{NoiseFamily, NoiseModel, QuantizerParams};
use crate::scalar::Real;

const INV_SQRT_2PI: f64 = 0.398_942_280_401_432_7;

/// Which per-observation likelihood factor to use.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum LikelihoodForm {
    /// `Phi(n+/sigma) - Phi(n-/sigma)` evaluated exactly.
    #[default]
    Exact,
    /// Tail approximation of the Gaussian CDF, `T(n-) - T(n+)` with
    /// `T(n) = n sigma / (n^2 + sigma^2) exp(-n^2 / 2 sigma^2)`. Non-positive when
    /// the bin straddles zero.
    TailApprox,
}

/// Tail approximation of the Gaussian CDF with standard deviation `sigma`.
///
/// `1 - (1/sqrt(2 pi)) x sigma / (x^2 + sigma^2) exp(-x^2 / 2 sigma^2)` for `x >= 0`,
/// mirrored as `1 - F(-x)` for negative `x`. Poor near zero (it returns 1 at 0).
pub fn approx_gaussian_cdf(x: f64, sigma: f64) -> Result<f64> {
    if !(sigma > 0.0) {
        return Err(Error::range("sigma", sigma, "must be > 0"));
    }
    let a = x.abs();
    let v = 1.0 - INV_SQRT_2PI * tail_term(a, sigma);
    Ok(if x >= 0.0 { v } else { 1.0 - v })
}

#[inline]
fn tail_term(n: f64, sigma: f64) -> f64 {
    n * sigma / (n * n + sigma * sigma) * (-(n * n) / (2.0 * sigma * sigma)).exp()
}

/// `ln P(Z > t)` for standard normal `Z`, accurate far into the upper tail.
pub(crate) fn ln_upper_tail(t: f64) -> f64 {
    if t < 25.0 {
        (0.5 * erfc(t / SQRT_2)).ln()
    } else {
        let r = 1.0 / (t * t);
        -0.5 * t * t - (t * (2.0 * PI).sqrt()).ln()
            + (1.0 - r + 3.0 * r * r - 15.0 * r * r * r).ln()
    }
}

#[inline]
fn ln_density(t: f64) -> f64 {
    -0.5 * t * t - 0.5 * (2.0 * PI).ln()
}

/// `ln(Phi(b) - Phi(a))` for `a < b`.
pub(crate) fn ln_gauss_interval(a: f64, b: f64) -> f64 {
    if a >= 0.0 {
        let la = ln_upper_tail(a);
        la + (-(ln_upper_tail(b) - la).exp()).ln_1p()
    } else if b <= 0.0 {
        ln_gauss_interval(-b, -a)
    } else {
        (-(0.5 * erfc(b / SQRT_2)) - 0.5 * erfc(-a / SQRT_2)).ln_1p()
    }
}

/// Noise bounds of one quantization bin and how many observations fell into it.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BinBounds {
    pub lower: f64,
    pub upper: f64,
    pub count: usize,
}

impl BinBounds {
    pub fn new(lower: f64, upper: f64) -> Self {
        BinBounds {
            lower,
            upper,
            count: 1,
        }
    }

    /// True when `n- < 0 < n+`.
    pub fn straddles_zero(&self) -> bool {
        self.lower < 0.0 && self.upper > 0.0
    }

    fn ln_factor(&self, sigma: f64, form: LikelihoodForm) -> Option<f64> {
        match form {
            LikelihoodForm::Exact => {
                let v = ln_gauss_interval(self.lower / sigma, self.upper / sigma);
                (v.is_finite()).then_some(v)
            }
            LikelihoodForm::TailApprox => {
                let v = tail_term(self.lower, sigma) - tail_term(self.upper, sigma);
                (v > 0.0).then(|| v.ln())
            }
        }
    }

    /// Derivative of the log factor with respect to `sigma`.
    fn d_ln_factor(&self, sigma: f64, form: LikelihoodForm) -> Option<f64> {
        match form {
            LikelihoodForm::Exact => {
                let lg = ln_gauss_interval(self.lower / sigma, self.upper / sigma);
                if !lg.is_finite() {
                    return None;
                }
                let term = |n: f64| {
                    let t = n / sigma;
                    if t == 0.0 {
                        0.0
                    } else {
                        t * (ln_density(t) - lg).exp()
                    }
                };
                Some(-(term(self.upper) - term(self.lower)) / sigma)
            }
            LikelihoodForm::TailApprox => {
                let v = tail_term(self.lower, sigma) - tail_term(self.upper, sigma);
                if !(v > 0.0) {
                    return None;
                }
                // dT/dsigma = T * [1/sigma - 2 sigma / (n^2 + sigma^2) + n^2 / sigma^3]
                let dt = |n: f64| {
                    let s2 = sigma * sigma;
                    tail_term(n, sigma) * (1.0 / sigma - 2.0 * sigma / (n * n + s2) + n * n / (s2 * sigma))
                };
                Some((dt(self.lower) - dt(self.upper)) / v)
            }
        }
    }
}

/// Log-likelihood of `sigma` over a set of bins.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LogObjective {
    /// Sum of log factors, `-inf` when any factor is non-positive.
    pub value: f64,
    /// Number of observations whose factor was non-positive.
    pub invalid_factors: usize,
}

/// `ln g(sigma)` summed over bins, weighted by multiplicity.
pub fn log_objective(sigma: f64, bins: &[BinBounds], form: LikelihoodForm) -> Result<LogObjective> {
    if !(sigma > 0.0) {
        return Err(Error::range("sigma", sigma, "must be > 0"));
    }
    let mut value = 0.0;
    let mut invalid = 0;
    for b in bins {
        match b.ln_factor(sigma, form) {
            Some(v) => value += b.count as f64 * v,
            None => invalid += b.count,
        }
    }
    if invalid > 0 {
        value = f64::NEG_INFINITY;
    }
    Ok(LogObjective {
        value,
        invalid_factors: invalid,
    })
}

fn ln_g(sigma: f64, bins: &[BinBounds], form: LikelihoodForm) -> f64 {
    let mut value = 0.0;
    for b in bins {
        match b.ln_factor(sigma, form) {
            Some(v) => value += b.count as f64 * v,
            None => return f64::NEG_INFINITY,
        }
    }
    value
}

fn d_ln_g(sigma: f64, bins: &[BinBounds], form: LikelihoodForm) -> Option<f64> {
    let mut d = 0.0;
    for b in bins {
        d += b.count as f64 * b.d_ln_factor(sigma, form)?;
    }
    Some(d)
}

/// Maximizer of `Phi(n+/s) - Phi(n-/s)` when both bounds share a sign:
/// `sqrt((n+^2 - n-^2) / (2 ln(n+/n-)))`.
pub fn single_bin_maximizer(lower: f64, upper: f64) -> Option<f64> {
    let (a, b) = if lower > 0.0 {
        (lower, upper)
    } else if upper < 0.0 {
        (-upper, -lower)
    } else {
        return None;
    };
    Some(((b * b - a * a) / (2.0 * (b / a).ln())).sqrt())
}

/// Golden-section search for the maximum of a unimodal function on `[lo, hi]`.
/// Returns `(argmax, value, iterations)` once the bracket is narrower than `tol`.
pub fn golden_section_max<F: FnMut(f64) -> f64>(
    mut f: F,
    mut lo: f64,
    mut hi: f64,
    tol: f64,
) -> (f64, f64, usize) {
    let inv_phi = (5f64.sqrt() - 1.0) / 2.0;
    let mut c = hi - inv_phi * (hi - lo);
    let mut d = lo + inv_phi * (hi - lo);
    let mut fc = f(c);
    let mut fd = f(d);
    let mut iters = 0;
    while hi - lo > tol && iters < 500 {
        if fc >= fd {
            hi = d;
            d = c;
            fd = fc;
            c = hi - inv_phi * (hi - lo);
            fc = f(c);
        } else {
            lo = c;
            c = d;
            fc = fd;
            d = lo + inv_phi * (hi - lo);
            fd = f(d);
        }
        iters += 1;
    }
    if fc >= fd {
        (c, fc, iters)
    } else {
        (d, fd, iters)
    }
}

/// Which algorithm produced an estimate.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SolvePath {
    Newton,
    GoldenSection,
    /// Returned without iterating (flat objective or degenerate bracket).
    Direct,
}

/// Conditions worth reporting alongside an estimate.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct EstimateFlags {
    /// The objective is flat at its maximum; `sigma` is an interior point of the plateau.
    pub plateau: bool,
    /// The maximum sits on the edge of the search bracket.
    pub boundary: bool,
    /// All observations share one bin, or every per-bin estimate coincides.
    pub quantization_dominated: bool,
    /// The coarse pre-scan found more than one local maximum.
    pub multimodal: bool,
    /// Observations whose likelihood factor was non-positive at the result.
    pub invalid_factors: usize,
}

/// Result of a `sigma` estimation.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SigmaEstimate<T> {
    pub sigma: T,
    pub bracket_lo: T,
    pub bracket_hi: T,
    /// `ln g` at `sigma`.
    pub objective_value: f64,
    pub iterations: usize,
    pub path: SolvePath,
    pub flags: EstimateFlags,
}

/// Tuning for the estimators.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EstimatorOptions {
    pub form: LikelihoodForm,
    /// Newton stops when `|d ln g / d sigma|` drops below this.
    pub newton_tol: f64,
    pub newton_max_iter: usize,
    /// Golden-section bracket width at termination (mm).
    pub gs_tol: f64,
    /// Points in the coarse log-spaced scan of single-observation estimation.
    pub scan_points: usize,
    /// Points in the multimodality pre-scan of cluster estimation.
    pub prescan_points: usize,
    /// Log-objective drop below the maximum that still counts as flat.
    pub plateau_tol: f64,
}

impl Default for EstimatorOptions {
    fn default() -> Self {
        EstimatorOptions {
            form: LikelihoodForm::Exact,
            newton_tol: 1e-9,
            newton_max_iter: 50,
            gs_tol: 1e-4,
            scan_points: 200,
            prescan_points: 64,
            plateau_tol: 1e-6,
        }
    }
}

fn log_grid(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    let (la, lb) = (lo.ln(), hi.ln());
    (0..n)
        .map(|i| (la + (lb - la) * i as f64 / (n - 1) as f64).exp())
        .collect()
}

/// Estimates `sigma` from the noise bounds of a single bin.
pub fn estimate_sigma_bounds(lower: f64, upper: f64, opts: &EstimatorOptions) -> Result<SigmaEstimate<f64>> {
    if !(lower < upper) || !lower.is_finite() || !upper.is_finite() {
        return Err(Error::Parameter(format!("noise bounds must satisfy n- < n+, got ({lower}, {upper})")));
    }
    let bins = [BinBounds::new(lower, upper)];
    let width = upper - lower;
    let lo = 1e-4 * width;
    let hi = 1e2 * (lower.abs() + upper.abs() + width);
    maximize_on(&bins, lo, hi, opts)
}

/// Scan, then Newton with a golden-section fallback.
fn maximize_on(bins: &[BinBounds], lo: f64, hi: f64, opts: &EstimatorOptions) -> Result<SigmaEstimate<f64>> {
    let form = opts.form;
    let n = opts.scan_points.max(8);
    let grid = log_grid(lo, hi, n);
    let vals: Vec<f64> = grid.iter().map(|&s| ln_g(s, bins, form)).collect();
    // first index attaining the maximum, so flat stretches resolve to their left end
    let (best, best_val) = vals
        .iter()
        .copied()
        .enumerate()
        .fold((0, f64::NEG_INFINITY), |acc, (i, v)| if v > acc.1 { (i, v) } else { acc });
    let done = |sigma: f64, value: f64, iterations, path, flags| {
        Ok(SigmaEstimate {
            sigma,
            bracket_lo: lo,
            bracket_hi: hi,
            objective_value: value,
            iterations,
            path,
            flags,
        })
    };
    if !best_val.is_finite() {
        let invalid = log_objective(lo, bins, form)?.invalid_factors;
        let flags = EstimateFlags {
            boundary: true,
            invalid_factors: invalid,
            ..Default::default()
        };
        return done(lo, best_val, 0, SolvePath::Direct, flags);
    }
    if best == 0 || best == n - 1 {
        // flat or monotone: find the extent of the region within plateau_tol of the best
        let mut end = best;
        if best == 0 {
            while end + 1 < n && vals[end + 1] >= best_val - opts.plateau_tol {
                end += 1;
            }
        }
        if best == 0 && end > 0 {
            let sigma = (grid[0] * grid[end]).sqrt();
            let flags = EstimateFlags {
                plateau: true,
                ..Default::default()
            };
            return done(sigma, ln_g(sigma, bins, form), 0, SolvePath::Direct, flags);
        }
        let flags = EstimateFlags {
            boundary: true,
            ..Default::default()
        };
        return done(grid[best], best_val, 0, SolvePath::Direct, flags);
    }
    let (a, b) = (grid[best - 1], grid[best + 1]);
    // Newton on D(sigma) = d ln g / d sigma, second derivative by central difference
    let mut s = grid[best];
    let mut iters = 0;
    let mut converged = false;
    while iters < opts.newton_max_iter {
        iters += 1;
        let Some(d) = d_ln_g(s, bins, form) else { break };
        if d.abs() < opts.newton_tol {
            converged = true;
            break;
        }
        let h = 1e-5 * s;
        let (Some(dp), Some(dm)) = (d_ln_g(s + h, bins, form), d_ln_g(s - h, bins, form)) else {
            break;
        };
        let dd = (dp - dm) / (2.0 * h);
        if !(dd < 0.0) {
            break;
        }
        let next = s - d / dd;
        if !(next > a && next < b) {
            break;
        }
        s = next;
    }
    if converged {
        let v = ln_g(s, bins, form);
        let probe = 1e-3 * s;
        if ln_g(s - probe, bins, form) <= v && ln_g(s + probe, bins, form) <= v {
            return done(s, v, iters, SolvePath::Newton, EstimateFlags::default());
        }
    }
    log::debug!("Newton did not converge after {iters} steps; golden-section fallback");
    let (s, v, gs_iters) = golden_section_max(|s| ln_g(s, bins, form), a, b, opts.gs_tol.min(1e-9 * b));
    done(s, v, gs_iters, SolvePath::GoldenSection, EstimateFlags::default())
}

/// Estimates `sigma` from one observation `y` of ground truth `x_star`.
pub fn estimate_sigma_single<T: Real>(y: T, x_star: T, q: &QuantizerParams<T>) -> Result<SigmaEstimate<T>> {
    estimate_sigma_single_with(y, x_star, q, &EstimatorOptions::default())
}

pub fn estimate_sigma_single_with<T: Real>(
    y: T,
    x_star: T,
    q: &QuantizerParams<T>,
    opts: &EstimatorOptions,
) -> Result<SigmaEstimate<T>> {
    let (lo, hi) = q.noise_bounds(y, x_star)?;
    Ok(to_t(estimate_sigma_bounds(lo.as_f64(), hi.as_f64(), opts)?))
}

fn to_t<T: Real>(e: SigmaEstimate<f64>) -> SigmaEstimate<T> {
    SigmaEstimate {
        sigma: T::lit(e.sigma),
        bracket_lo: T::lit(e.bracket_lo),
        bracket_hi: T::lit(e.bracket_hi),
        objective_value: e.objective_value,
        iterations: e.iterations,
        path: e.path,
        flags: e.flags,
    }
}

/// Quantized observations of one known depth.
#[derive(Debug, Clone, PartialEq)]
pub struct ObservationCluster<T> {
    pub ground_truth: T,
    pub samples: Vec<T>,
}

impl<T: Real> ObservationCluster<T> {
    pub fn new(ground_truth: T, samples: Vec<T>) -> Result<Self> {
        if samples.is_empty() {
            return Err(Error::Underdetermined("cluster has no samples".into()));
        }
        Ok(ObservationCluster {
            ground_truth,
            samples,
        })
    }

    /// Noise bounds of each distinct bin, with multiplicities, sorted by bin.
    pub fn bins(&self, q: &QuantizerParams<T>) -> Result<Vec<BinBounds>> {
        let mut ks = self
            .samples
            .iter()
            .map(|&y| q.mapping(y))
            .collect::<Result<Vec<_>>>()?;
        ks.sort_unstable();
        let mut out: Vec<(u32, usize)> = Vec::new();
        for k in ks {
            match out.last_mut() {
                Some((last, c)) if *last == k => *c += 1,
                _ => out.push((k, 1)),
            }
        }
        let x = self.ground_truth;
        Ok(out
            .into_iter()
            .map(|(k, count)| {
                let (lo, hi) = q.bin_edges(k);
                BinBounds {
                    lower: (lo - x).as_f64(),
                    upper: (hi - x).as_f64(),
                    count,
                }
            })
            .collect())
    }
}

/// Maximum-likelihood `sigma` for a cluster, searched within the span of the
/// per-bin maximizers.
pub fn estimate_sigma_cluster<T: Real>(
    cluster: &ObservationCluster<T>,
    q: &QuantizerParams<T>,
) -> Result<SigmaEstimate<T>> {
    estimate_sigma_cluster_with(cluster, q, &EstimatorOptions::default())
}

pub fn estimate_sigma_cluster_with<T: Real>(
    cluster: &ObservationCluster<T>,
    q: &QuantizerParams<T>,
    opts: &EstimatorOptions,
) -> Result<SigmaEstimate<T>> {
    if cluster.samples.len() < 2 {
        return Err(Error::Underdetermined(format!(
            "cluster at {} needs at least 2 samples, has {}",
            cluster.ground_truth,
            cluster.samples.len()
        )));
    }
    let bins = cluster.bins(q)?;
    Ok(to_t(estimate_sigma_from_bins(&bins, opts)?))
}

/// Cluster estimation on precomputed bins.
pub fn estimate_sigma_from_bins(bins: &[BinBounds], opts: &EstimatorOptions) -> Result<SigmaEstimate<f64>> {
    let form = opts.form;
    let mut lo = f64::INFINITY;
    let mut hi = 0.0f64;
    for b in bins {
        let s = estimate_sigma_bounds(b.lower, b.upper, opts)?.sigma;
        lo = lo.min(s);
        hi = hi.max(s);
    }
    if hi - lo <= opts.gs_tol {
        let sigma = 0.5 * (lo + hi);
        let obj = log_objective(sigma, bins, form)?;
        return Ok(SigmaEstimate {
            sigma,
            bracket_lo: lo,
            bracket_hi: hi,
            objective_value: obj.value,
            iterations: 0,
            path: SolvePath::Direct,
            flags: EstimateFlags {
                quantization_dominated: true,
                invalid_factors: obj.invalid_factors,
                ..Default::default()
            },
        });
    }
    let mut flags = EstimateFlags::default();
    let (mut a, mut b) = (lo, hi);
    let n = opts.prescan_points.max(3);
    let grid: Vec<f64> = (0..n).map(|i| lo + (hi - lo) * i as f64 / (n - 1) as f64).collect();
    let vals: Vec<f64> = grid.iter().map(|&s| ln_g(s, bins, form)).collect();
    let peaks = (0..n)
        .filter(|&i| {
            let left = i == 0 || vals[i] > vals[i - 1];
            let right = i == n - 1 || vals[i] >= vals[i + 1];
            left && right && vals[i].is_finite()
        })
        .count();
    if peaks > 1 {
        let best = vals
            .iter()
            .enumerate()
            .max_by(|x, y| x.1.total_cmp(y.1))
            .map(|(i, _)| i)
            .expect("nonempty");
        a = grid[best.saturating_sub(1)];
        b = grid[(best + 1).min(n - 1)];
        flags.multimodal = true;
        log::warn!("likelihood has {peaks} local maxima on [{lo}, {hi}]; narrowing to [{a}, {b}]");
    }
    let (sigma, value, iterations) = golden_section_max(|s| ln_g(s, bins, form), a, b, opts.gs_tol);
    let sigma = sigma.clamp(lo, hi);
    flags.invalid_factors = log_objective(sigma, bins, form)?.invalid_factors;
    if sigma - lo <= opts.gs_tol {
        flags.boundary = true;
        flags.quantization_dominated = bins.iter().all(|b| b.straddles_zero());
    }
    Ok(SigmaEstimate {
        sigma,
        bracket_lo: lo,
        bracket_hi: hi,
        objective_value: value,
        iterations,
        path: SolvePath::GoldenSection,
        flags,
    })
}

/// Estimates every cluster in parallel. Results keep the input order.
pub fn estimate_clusters<T: Real>(
    clusters: &[ObservationCluster<T>],
    q: &QuantizerParams<T>,
    opts: &EstimatorOptions,
) -> Vec<Result<SigmaEstimate<T>>> {
    clusters
        .par_iter()
        .map(|c| estimate_sigma_cluster_with(c, q, opts))
        .collect()
}

/// Outcome of [`fit_noise_params`].
#[derive(Debug, Clone, PartialEq)]
pub struct NoiseFit<T> {
    pub model: NoiseModel<T>,
    /// Per-cluster residuals `sigma* - sigma(x*)`.
    pub residuals: Vec<f64>,
    /// Residual sum of squares after each accepted step, starting with the initial guess.
    pub history: Vec<f64>,
    pub iterations: usize,
    /// `alpha` was held at its positivity floor.
    pub alpha_at_bound: bool,
}

/// Fits `sigma(x) = alpha (x + mu)^2 + kappa` to `(x*, sigma*)` pairs by
/// projected Levenberg-Marquardt under `alpha > 0`, `kappa > 0`, `mu < 0`.
pub fn fit_noise_params<T: Real>(points: &[(T, T)], family: NoiseFamily) -> Result<NoiseFit<T>> {
    let pts: Vec<(f64, f64)> = points.iter().map(|&(x, s)| (x.as_f64(), s.as_f64())).collect();
    let mut xs: Vec<f64> = pts.iter().map(|p| p.0).collect();
    xs.sort_by(f64::total_cmp);
    xs.dedup();
    if xs.len() < 3 {
        return Err(Error::Underdetermined(format!(
            "noise-law fit needs 3 clusters with distinct depths, got {}",
            xs.len()
        )));
    }
    if pts.iter().any(|&(x, s)| !x.is_finite() || !s.is_finite()) {
        return Err(Error::Numeric("non-finite cluster estimate".into()));
    }

    let (x_lo, s_lo) = *pts.iter().min_by(|a, b| a.0.total_cmp(&b.0)).expect("nonempty");
    let (x_hi, s_hi) = *pts.iter().max_by(|a, b| a.0.total_cmp(&b.0)).expect("nonempty");
    let s_min = pts.iter().map(|p| p.1).fold(f64::INFINITY, f64::min);
    let floor_kappa = 1e-9 * s_min.abs().max(1e-3);
    let mut p = [0.0, -x_lo, s_min.max(floor_kappa)];
    let mu_ceiling = -1e-9 * x_hi.abs().max(1.0);
    p[1] = p[1].min(mu_ceiling);
    let span = x_hi + p[1];
    let alpha_floor = 1e-12 * (s_hi.abs() + 1.0) / (span * span).max(1e-12);
    p[0] = ((s_hi.max(s_lo) - p[2]) / (span * span)).max(alpha_floor);

    let project = |p: &mut [f64; 3]| {
        p[0] = p[0].max(alpha_floor);
        p[1] = p[1].min(mu_ceiling);
        p[2] = p[2].max(floor_kappa);
    };
    let residuals = |p: &[f64; 3]| -> Vec<f64> {
        pts.iter()
            .map(|&(x, s)| s - (p[0] * (x + p[1]).powi(2) + p[2]))
            .collect()
    };
    let sse = |r: &[f64]| r.iter().map(|v| v * v).sum::<f64>();

    project(&mut p);
    let mut r = residuals(&p);
    let mut cost = sse(&r);
    let mut history = vec![cost];
    let mut lambda = 1e-3;
    let mut iterations = 0;
    for _ in 0..1000 {
        iterations += 1;
        // model Jacobian with columns normalized to unit length
        let jac: Vec<[f64; 3]> = pts
            .iter()
            .map(|&(x, _)| [(x + p[1]).powi(2), 2.0 * p[0] * (x + p[1]), 1.0])
            .collect();
        let mut scale = [0.0f64; 3];
        for row in &jac {
            for k in 0..3 {
                scale[k] += row[k] * row[k];
            }
        }
        for s in &mut scale {
            *s = s.sqrt().max(1e-300);
        }
        let mut jtj = [[0.0f64; 3]; 3];
        let mut jtr = [0.0f64; 3];
        for (row, &ri) in jac.iter().zip(&r) {
            for a in 0..3 {
                let ja = row[a] / scale[a];
                jtr[a] += ja * ri;
                for b in 0..3 {
                    jtj[a][b] += ja * row[b] / scale[b];
                }
            }
        }
        let grad_norm = jtr.iter().map(|v| v * v).sum::<f64>().sqrt();
        if grad_norm <= 1e-15 * (1.0 + cost.sqrt()) {
            break;
        }
        let mut improved = false;
        let mut small_step = false;
        while lambda < 1e16 {
            let mut a = jtj;
            for k in 0..3 {
                a[k][k] += lambda * (1.0 + jtj[k][k]);
            }
            let Some(dz) = solve3(a, jtr) else {
                lambda *= 10.0;
                continue;
            };
            let mut trial = p;
            for k in 0..3 {
                trial[k] += dz[k] / scale[k];
            }
            project(&mut trial);
            let rt = residuals(&trial);
            let ct = sse(&rt);
            let rel_step = (0..3)
                .map(|k| ((trial[k] - p[k]) / p[k].abs().max(1e-300)).abs())
                .fold(0.0, f64::max);
            if ct < cost {
                small_step = rel_step < 1e-14;
                p = trial;
                r = rt;
                cost = ct;
                history.push(cost);
                lambda = (lambda * 0.3).max(1e-12);
                improved = true;
                break;
            }
            if rel_step < 1e-15 {
                break;
            }
            lambda *= 10.0;
        }
        if !improved || small_step {
            break;
        }
    }
    let alpha_at_bound = p[0] <= alpha_floor;
    if alpha_at_bound {
        log::warn!("noise-law fit hit the alpha > 0 constraint");
    }
    Ok(NoiseFit {
        model: NoiseModel::new(T::lit(p[0]), T::lit(p[1]), T::lit(p[2]), family)?,
        residuals: r,
        history,
        iterations,
        alpha_at_bound,
    })
}

/// Solves a 3x3 system by Gaussian elimination with partial pivoting.
fn solve3(mut a: [[f64; 3]; 3], mut b: [f64; 3]) -> Option<[f64; 3]> {
    for col in 0..3 {
        let piv = (col..3).max_by(|&i, &j| a[i][col].abs().total_cmp(&a[j][col].abs()))?;
        if a[piv][col].abs() < 1e-300 {
            return None;
        }
        a.swap(col, piv);
        b.swap(col, piv);
        for row in col + 1..3 {
            let f = a[row][col] / a[col][col];
            for k in col..3 {
                a[row][k] -= f * a[col][k];
            }
            b[row] -= f * b[col];
        }
    }
    let mut x = [0.0; 3];
    for row in (0..3).rev() {
        let s: f64 = (row + 1..3).map(|k| a[row][k] * x[k]).sum();
        x[row] = (b[row] - s) / a[row][row];
    }
    Some(x)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::forward::{row_rng, sample_noise};

    fn d435() -> QuantizerParams<f64> {
        QuantizerParams::realsense_d435()
    }

    /// Exact Gaussian CDF by composite Simpson integration of the density.
    fn simpson_cdf(x: f64, sigma: f64) -> f64 {
        let n = 20_000;
        let (a, b) = (0.0, x);
        let h = (b - a) / n as f64;
        let pdf = |t: f64| INV_SQRT_2PI / sigma * (-(t * t) / (2.0 * sigma * sigma)).exp();
        let mut s = pdf(a) + pdf(b);
        for i in 1..n {
            s += pdf(a + i as f64 * h) * if i % 2 == 1 { 4.0 } else { 2.0 };
        }
        0.5 + s * h / 3.0
    }

    #[test]
    fn approx_cdf_near_three_sigma() {
        for sigma in [0.5, 2.0, 11.4] {
            let x = 3.0 * sigma;
            let err = (approx_gaussian_cdf(x, sigma).unwrap() - simpson_cdf(x, sigma)).abs();
            assert!(err < 0.01, "{err}");
        }
        assert_eq!(approx_gaussian_cdf(0.0, 1.0).unwrap(), 1.0);
        let v = approx_gaussian_cdf(-2.0, 1.3).unwrap() + approx_gaussian_cdf(2.0, 1.3).unwrap();
        assert!((v - 1.0).abs() < 1e-15);
        assert!(approx_gaussian_cdf(1.0, 0.0).is_err());
    }

    #[test]
    fn log_interval_is_stable_in_tails() {
        // ln(Phi(41) - Phi(40)) = ln Q(40) to leading order
        let v = ln_gauss_interval(40.0, 41.0);
        assert!((v - ln_upper_tail(40.0)).abs() < 1e-12);
        assert!((ln_upper_tail(40.0) - (-804.608_442_013_753_8)).abs() < 1e-6);
        let mid = ln_gauss_interval(-1.0, 1.0);
        assert!((mid - 0.682_689_492_137_085_9f64.ln()).abs() < 1e-12);
        assert_eq!(ln_gauss_interval(-3.0, -1.0), ln_gauss_interval(1.0, 3.0));
        // continuity of the two tail branches
        assert!((ln_upper_tail(24.999_999) - ln_upper_tail(25.0)).abs() < 1e-4);
    }

    #[test]
    fn factor_scale_invariance() {
        let b = BinBounds::new(0.7, 1.9);
        let c = 3.7;
        let scaled = BinBounds::new(0.7 * c, 1.9 * c);
        for form in [LikelihoodForm::Exact, LikelihoodForm::TailApprox] {
            let x = b.ln_factor(1.1, form).unwrap();
            let y = scaled.ln_factor(1.1 * c, form).unwrap();
            assert!((x - y).abs() < 1e-12, "{form:?}");
        }
    }

    #[test]
    fn product_of_two_is_sum_of_logs() {
        let b1 = BinBounds::new(0.4, 1.2);
        let b2 = BinBounds::new(-2.0, -0.5);
        for form in [LikelihoodForm::Exact, LikelihoodForm::TailApprox] {
            let both = log_objective(0.9, &[b1, b2], form).unwrap().value;
            let one = log_objective(0.9, &[b1], form).unwrap().value;
            let two = log_objective(0.9, &[b2], form).unwrap().value;
            assert!((both - one - two).abs() < 1e-12);
        }
    }

    #[test]
    fn tail_form_flags_straddling_bins() {
        let obj = log_objective(1.0, &[BinBounds::new(-0.3, 0.8)], LikelihoodForm::TailApprox).unwrap();
        assert_eq!(obj.invalid_factors, 1);
        assert_eq!(obj.value, f64::NEG_INFINITY);
    }

    #[test]
    fn analytic_derivative_matches_finite_difference() {
        for b in [BinBounds::new(0.4, 1.2), BinBounds::new(-3.0, -1.0), BinBounds::new(-0.3, 0.9)] {
            for form in [LikelihoodForm::Exact, LikelihoodForm::TailApprox] {
                if form == LikelihoodForm::TailApprox && b.straddles_zero() {
                    continue;
                }
                let s = 0.8;
                let h = 1e-6;
                let fd = (b.ln_factor(s + h, form).unwrap() - b.ln_factor(s - h, form).unwrap()) / (2.0 * h);
                let an = b.d_ln_factor(s, form).unwrap();
                assert!((fd - an).abs() < 1e-6 * (1.0 + an.abs()), "{form:?} {fd} {an}");
            }
        }
    }

    fn grid_argmax(bins: &[BinBounds], lo: f64, hi: f64, n: usize, form: LikelihoodForm) -> (f64, f64) {
        (0..n)
            .map(|i| {
                let s = lo + (hi - lo) * i as f64 / (n - 1) as f64;
                (s, ln_g(s, bins, form))
            })
            .max_by(|a, b| a.1.total_cmp(&b.1))
            .unwrap()
    }

    #[test]
    fn single_bin_newton_agrees_with_closed_form_and_grid() {
        for (lo, hi) in [(0.3, 1.5), (-4.0, -0.2), (2.0, 2.5), (-0.349_471_558_291 + 1.0, 1.652_630_933_72 + 1.0)] {
            let e = estimate_sigma_bounds(lo, hi, &EstimatorOptions::default()).unwrap();
            assert_eq!(e.path, SolvePath::Newton);
            let exact = single_bin_maximizer(lo, hi).unwrap();
            assert!((e.sigma - exact).abs() < 1e-7 * exact, "{} vs {exact}", e.sigma);
            let (g, _) = grid_argmax(&[BinBounds::new(lo, hi)], 0.5 * exact, 2.0 * exact, 10_001, LikelihoodForm::Exact);
            assert!((e.sigma - g).abs() <= 1.5 * exact / 10_000.0);
        }
    }

    #[test]
    fn centered_bin_is_a_plateau() {
        let e = estimate_sigma_bounds(-1.5, 1.5, &EstimatorOptions::default()).unwrap();
        assert!(e.flags.plateau);
        assert_eq!(e.path, SolvePath::Direct);
        let (_, best) = grid_argmax(&[BinBounds::new(-1.5, 1.5)], e.bracket_lo, e.bracket_hi, 10_000, LikelihoodForm::Exact);
        assert!(best - e.objective_value < 1e-6);
        assert!(e.sigma > e.bracket_lo && e.sigma < 1.5);
    }

    #[test]
    fn tail_form_single_bin_uses_same_search() {
        let opts = EstimatorOptions {
            form: LikelihoodForm::TailApprox,
            ..Default::default()
        };
        let e = estimate_sigma_bounds(1.0, 3.0, &opts).unwrap();
        let (g, _) = grid_argmax(&[BinBounds::new(1.0, 3.0)], e.bracket_lo, 20.0, 200_001, LikelihoodForm::TailApprox);
        assert!((e.sigma - g).abs() < 2e-4, "{} vs {g}", e.sigma);
        let s = estimate_sigma_bounds(-1.0, 3.0, &opts).unwrap();
        assert!(s.flags.boundary && s.flags.invalid_factors == 1);
    }

    #[test]
    fn single_observation_from_quantizer() {
        let q = d435();
        let y = q.dequantize(1003.0).unwrap();
        let e = estimate_sigma_single(y, 1000.0, &q).unwrap();
        let (lo, hi) = q.noise_bounds(y, 1000.0).unwrap();
        let exact = single_bin_maximizer(lo, hi).unwrap();
        assert!((e.sigma - exact).abs() < 1e-7 * exact);
    }

    fn mc_cluster(x: f64, sigma: f64, m: usize, seed: u64) -> ObservationCluster<f64> {
        let q = d435();
        let mut rng = row_rng(seed, 0);
        let samples = (0..m)
            .map(|_| {
                let n = sample_noise(&mut rng, NoiseFamily::Gaussian, sigma);
                q.dequantize(q.clamp(x + n)).unwrap()
            })
            .collect();
        ObservationCluster::new(x, samples).unwrap()
    }

    #[test]
    fn cluster_estimate_recovers_planted_sigma() {
        let q = d435();
        let mut est: Vec<f64> = (0..20)
            .map(|s| estimate_sigma_cluster(&mc_cluster(1000.0, 5.0, 100, 40 + s), &q).unwrap().sigma)
            .collect();
        est.sort_by(f64::total_cmp);
        let med = 0.5 * (est[9] + est[10]);
        assert!((med - 5.0).abs() < 0.75, "{med}");
    }

    #[test]
    fn cluster_estimate_stays_in_bracket_and_matches_grid() {
        let q = d435();
        for seed in 0..5 {
            let c = mc_cluster(1300.0, 8.0, 100, seed);
            let e = estimate_sigma_cluster(&c, &q).unwrap();
            assert!(e.bracket_lo <= e.sigma && e.sigma <= e.bracket_hi);
            let bins = c.bins(&q).unwrap();
            let (g, _) = grid_argmax(&bins, e.bracket_lo, e.bracket_hi, 10_000, LikelihoodForm::Exact);
            let spacing = (e.bracket_hi - e.bracket_lo) / 9_999.0;
            assert!((e.sigma - g).abs() <= spacing, "{} vs {g}", e.sigma);
        }
    }

    #[test]
    fn one_wide_bin_is_quantization_dominated() {
        let q = d435();
        let y = q.dequantize(4000.0).unwrap();
        let c = ObservationCluster::new(y, vec![y; 50]).unwrap();
        let e = estimate_sigma_cluster(&c, &q).unwrap();
        assert!(e.flags.quantization_dominated);
        assert_eq!(e.path, SolvePath::Direct);
    }

    #[test]
    fn cluster_needs_two_samples() {
        let q = d435();
        let c = ObservationCluster::new(1000.0, vec![q.dequantize(1000.0).unwrap()]).unwrap();
        assert!(matches!(estimate_sigma_cluster(&c, &q), Err(Error::Underdetermined(_))));
    }

    #[test]
    fn golden_section_finds_parabola_peak() {
        let (x, _, _) = golden_section_max(|x| -(x - 1.234).powi(2), 0.0, 5.0, 1e-9);
        assert!((x - 1.234).abs() < 1e-8);
    }

    fn sensor_law_points() -> Vec<(f64, f64)> {
        let m = NoiseModel::<f64>::realsense_d435();
        (0..10)
            .map(|i| {
                let x = 615.0 + 100.0 * i as f64;
                (x, m.std_at(x).unwrap())
            })
            .collect()
    }

    #[test]
    fn exact_data_fit_is_tight() {
        let fit = fit_noise_params(&sensor_law_points(), NoiseFamily::Gaussian).unwrap();
        let m = fit.model;
        assert!((m.alpha / 1e-5 - 1.0).abs() < 1e-6, "{m:?}");
        assert!((m.mu / -528.0 - 1.0).abs() < 1e-6, "{m:?}");
        assert!((m.kappa / 1.4 - 1.0).abs() < 1e-6, "{m:?}");
        assert!(!fit.alpha_at_bound);
        assert!(fit.history.windows(2).all(|w| w[1] <= w[0]));
    }

    #[test]
    fn fit_needs_three_distinct_depths() {
        let pts = [(600.0, 1.5), (600.0, 1.6), (900.0, 2.0)];
        assert!(matches!(
            fit_noise_params(&pts, NoiseFamily::Gaussian),
            Err(Error::Underdetermined(_))
        ));
    }

    #[test]
    fn decreasing_data_pins_alpha() {
        let pts = [(600.0, 5.0), (800.0, 4.0), (1000.0, 3.0), (1200.0, 2.0)];
        let fit = fit_noise_params(&pts, NoiseFamily::Gaussian).unwrap();
        assert!(fit.alpha_at_bound);
        assert!(fit.model.validate().is_ok());
    }
}
