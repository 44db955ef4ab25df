//! Row-by-row enhancement of a rectified depth pair.
//!
//! Each row of one view is solved with the other view as extra evidence. The
//! prior smooths only between pixels of the same layer, each layer weighted by
//! `g1 sigma_bar^2 + g2` in normalized depth units. The metric is learned on the
//! first view from its previous `K` enhanced rows and reused for the second.

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::forward::{NoiseModel, QuantizerParams};
use crate::graph::{
    build_weighted_row_laplacian, depth_segments, image_features, learn_metric_from, FeatureVector, MetricMatrix, MetricOptions,
    TrainingRow,
};
use crate::image::DepthImage;
use crate::layering::{layer_and_prefilter, layer_variance_clamped, LayerMap, LayerOptions};
use crate::scalar::Real;
use crate::solver::{agd_solve, prior_weight, Bounds, LinearFactor, MapObjective, PriorWeights, SolverOptions};
use crate::warp::{linearize_warp, Direction, Normalizer, SourceRow, TargetRow, WarpModel, WarpOptions};

/// Enhancement settings.
#[derive(Debug, Clone, PartialEq)]
pub struct EnhanceOptions {
    pub warp: WarpOptions,
    pub g1: f64,
    pub g2: f64,
    /// Depth unit (mm) of the normalized variables the objective works in.
    pub depth_unit: f64,
    pub solver: SolverOptions,
    /// Re-linearizations of the likelihood per row.
    pub outer_passes: usize,
    /// Pixels stay within this many noise SDs of their observed bin.
    pub trust_sigmas: f64,
    /// Neighbouring pre-filtered depths further apart than this (mm) share no prior edge.
    pub edge_gap: f64,
    /// Rows of history used to learn the metric.
    pub k_rows: usize,
    /// Relearn the metric every this many rows once `k_rows` rows exist.
    pub metric_refresh: usize,
    pub metric: MetricOptions,
    pub layers: LayerOptions,
    pub learn_metric: bool,
    /// Use the other view as evidence; without it each row is solved alone.
    pub other_view: bool,
}

impl Default for EnhanceOptions {
    fn default() -> Self {
        EnhanceOptions {
            warp: WarpOptions {
                normalizer: Normalizer::Tracking,
                ..WarpOptions::default()
            },
            g1: 1.0,
            g2: 0.1,
            depth_unit: 4.0,
            solver: SolverOptions::default(),
            outer_passes: 3,
            trust_sigmas: 4.0,
            edge_gap: 50.0,
            k_rows: 30,
            metric_refresh: 8,
            metric: MetricOptions {
                max_iter: 30,
                rel_tol: 1e-6,
            },
            layers: LayerOptions::default(),
            learn_metric: true,
            other_view: true,
        }
    }
}

impl EnhanceOptions {
    pub fn validate(&self) -> Result<()> {
        let bad = |what: &str| Err(Error::Parameter(what.to_string()));
        if !(self.depth_unit > 0.0) || !self.depth_unit.is_finite() {
            return bad("depth unit must be positive");
        }
        if !(self.g1 >= 0.0 && self.g1.is_finite()) || !self.g2.is_finite() || (self.g1 == 0.0 && self.g2 <= 0.0) {
            return bad("need finite g1 >= 0 and g2, and g1 sigma^2 + g2 > 0");
        }
        if self.outer_passes == 0 || self.k_rows == 0 || self.metric_refresh == 0 {
            return bad("outer passes, K and metric refresh must be at least 1");
        }
        if !(self.edge_gap > 0.0) {
            return bad("edge gap must be positive");
        }
        if !(self.trust_sigmas > 0.0) || !(self.solver.eps > 0.0) || self.solver.max_iter == 0 {
            return bad("trust region, epsilon and iteration cap must be positive");
        }
        Ok(())
    }
}

/// One view prepared for enhancement.
#[derive(Debug, Clone)]
pub struct ViewData<T> {
    pub observed: DepthImage<T>,
    pub prefiltered: DepthImage<T>,
    /// Layers of the pre-filtered image with per-layer noise variance.
    pub layers: LayerMap<T>,
    pub features: Vec<Option<FeatureVector<T>>>,
}

/// Segments, pre-filters and featurizes an observed view.
pub fn prepare_view<T: Real>(
    observed: &DepthImage<T>,
    q: &QuantizerParams<T>,
    m: &NoiseModel<T>,
    opts: &LayerOptions,
) -> Result<ViewData<T>> {
    observed.check_range(q)?;
    let (layers, prefiltered) = layer_and_prefilter(observed, opts)?;
    let layers = layer_variance_clamped(&layers, m);
    let features = image_features(&prefiltered, q.x_max());
    Ok(ViewData {
        observed: observed.clone(),
        prefiltered,
        layers,
        features,
    })
}

/// Solver outcome of one outer pass.
#[derive(Debug, Clone, PartialEq)]
pub struct PassReport {
    pub iterations: usize,
    pub converged: bool,
    pub objective: f64,
    pub step_bound: f64,
    /// Largest log-term curvature relative to the prior bound at the start.
    pub hessian_ratio: f64,
}

/// Per-row diagnostics.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct RowReport {
    pub row: usize,
    pub nodes: usize,
    pub other_pixels: usize,
    pub passes: Vec<PassReport>,
    /// Fewer than two available pixels: pre-filtered values returned.
    pub short_row: bool,
    pub occlusions: usize,
    pub rejected_other: usize,
    /// Factors at or below the log floor at a linearization point.
    pub floored_factors: usize,
}

impl RowReport {
    pub fn iterations(&self) -> usize {
        self.passes.iter().map(|p| p.iterations).sum()
    }
}

struct Node<T> {
    col: usize,
    observed: T,
    sigma: T,
    label: usize,
    feature: FeatureVector<T>,
}

fn nodes_of<T: Real>(view: &ViewData<T>, row: usize, cols: impl Iterator<Item = usize>) -> Result<Vec<Node<T>>> {
    let w = view.observed.width();
    cols.map(|c| {
        let k = row * w + c;
        let label = view.layers.label(row, c).ok_or_else(|| Error::Numeric(format!("pixel ({row}, {c}) has no layer")))?;
        let var = view
            .layers
            .variance_at(row, c)
            .ok_or_else(|| Error::Numeric(format!("layer {label} has no noise variance")))?;
        let feature = view.features[k].ok_or_else(|| Error::Numeric(format!("pixel ({row}, {c}) has no feature")))?;
        Ok(Node {
            col: c,
            observed: view.observed.values()[k],
            sigma: var.sqrt(),
            label,
            feature,
        })
    })
    .collect()
}

fn layer_scales<T: Real>(layers: &LayerMap<T>, unit: T, g1: T, g2: T) -> Result<Vec<T>> {
    layers
        .stats()
        .iter()
        .map(|s| {
            let var = s.noise_variance.unwrap_or(T::zero()) / (unit * unit);
            let w = prior_weight(var, g1, g2);
            if w > T::zero() {
                Ok(w)
            } else {
                Err(Error::Parameter(format!("prior weight g1 sigma^2 + g2 = {w} is not positive")))
            }
        })
        .collect()
}

/// Enhances row `row` of `own`, using `other` as the second view seen through
/// the warp in direction `dir`. Returns a full-width row; missing pixels keep
/// their observed value.
pub fn enhance_row<T: Real>(
    row: usize,
    own: &ViewData<T>,
    other: &ViewData<T>,
    q: &QuantizerParams<T>,
    metric: &MetricMatrix<T>,
    dir: Direction,
    opts: &EnhanceOptions,
) -> Result<(Vec<T>, RowReport)> {
    let width = own.observed.width();
    let mut out = own.observed.row_values(row).to_vec();
    let mut report = RowReport {
        row,
        ..Default::default()
    };
    let mask = own.observed.row_mask(row);
    let nodes = nodes_of(own, row, (0..width).filter(|&c| mask[c]))?;
    report.nodes = nodes.len();
    let xhat: Vec<T> = nodes.iter().map(|n| own.prefiltered.values()[row * width + n.col]).collect();
    if nodes.len() < 2 {
        report.short_row = true;
        for (n, &v) in nodes.iter().zip(&xhat) {
            out[n.col] = v;
        }
        log::debug!("row {row}: fewer than two available pixels");
        return Ok((out, report));
    }
    let unit = T::lit(opts.depth_unit);
    let (g1, g2) = (T::lit(opts.g1), T::lit(opts.g2));
    let origin = xhat.iter().copied().sum::<T>() / T::from_usize_lossy(xhat.len());
    let cols: Vec<usize> = nodes.iter().map(|n| n.col).collect();

    let gap = T::lit(opts.edge_gap);
    let own_scales = layer_scales(&own.layers, unit, g1, g2)?;
    let feats: Vec<FeatureVector<T>> = nodes.iter().map(|n| n.feature).collect();
    let scale: Vec<T> = nodes.iter().map(|n| own_scales[n.label]).collect();
    let l_own =
        build_weighted_row_laplacian(&cols, &feats, &scale, &depth_segments(&xhat, gap), metric)?.laplacian;

    let intr = &own.observed.intrinsics;
    let warp = linearize_warp(
        &SourceRow {
            columns: &cols,
            values: &xhat,
            focal: intr.focal,
            baseline: intr.baseline,
            direction: dir,
        },
        other.observed.width(),
        Some(TargetRow {
            values: other.prefiltered.row_values(row),
            mask: other.observed.row_mask(row),
        }),
        &opts.warp,
    )?;
    let warp = if opts.other_view {
        warp
    } else {
        WarpModel::empty(&cols, &xhat, &opts.warp)
    };
    report.occlusions = warp.occlusions;
    report.rejected_other = warp.rejected;
    report.other_pixels = warp.target_columns.len();
    let others = nodes_of(other, row, warp.target_columns.iter().copied())?;
    let other_scales = layer_scales(&other.layers, unit, g1, g2)?;
    let other_hat: Vec<T> = warp
        .target_columns
        .iter()
        .map(|&c| other.prefiltered.values()[row * other.observed.width() + c])
        .collect();
    let l_other = build_weighted_row_laplacian(
        &warp.target_columns,
        &others.iter().map(|n| n.feature).collect::<Vec<_>>(),
        &others.iter().map(|n| other_scales[n.label]).collect::<Vec<_>>(),
        &depth_segments(&other_hat, gap),
        metric,
    )?
    .laplacian;
    // (g - origin) / unit = H u + e_c
    let h1 = warp.jacobian.mul_vec(&vec![T::one(); nodes.len()]);
    let e_c: Vec<T> = warp
        .offset
        .iter()
        .zip(&h1)
        .map(|(&e, &s)| (e + origin * s - origin) / unit)
        .collect();
    let prior = PriorWeights::new(&l_own, Some((&l_other, &warp.jacobian, &e_c)))?;

    let mut obj = MapObjective {
        own: Vec::new(),
        other: Vec::new(),
        warp: warp.jacobian.clone(),
        prior,
        floor: T::lit(1e-12),
    };
    let bins = |y: T| -> Result<(T, T)> { Ok(q.bin_edges(q.mapping(y)?)) };
    let own_bins: Vec<(T, T)> = nodes.iter().map(|n| bins(n.observed)).collect::<Result<_>>()?;
    let trust = T::lit(opts.trust_sigmas);
    // the likelihood is negligible more than a few sd outside the observed bin
    let (lower, upper): (Vec<T>, Vec<T>) = nodes
        .iter()
        .zip(&own_bins)
        .map(|(n, &(lo, hi))| (lo - trust * n.sigma, hi + trust * n.sigma))
        .unzip();
    let mut xt: Vec<T> = xhat.iter().zip(lower.iter().zip(&upper)).map(|(&x, (&lo, &hi))| x.max(lo).min(hi)).collect();
    let other_bins: Vec<(T, T)> = others.iter().map(|n| bins(n.observed)).collect::<Result<_>>()?;
    for _ in 0..opts.outer_passes {
        let own_f: Vec<LinearFactor<T>> = nodes
            .iter()
            .zip(&own_bins)
            .zip(&xt)
            .map(|((n, &(lo, hi)), &x)| LinearFactor::new(lo, hi, n.sigma, x, origin, unit))
            .collect();
        let g = warp.linear(&xt);
        let other_f: Vec<LinearFactor<T>> = others
            .iter()
            .zip(&other_bins)
            .zip(&g)
            .zip(&e_c)
            .map(|(((n, &(lo, hi)), &gx), &ec)| {
                let f = LinearFactor::new(lo, hi, n.sigma, gx, origin, unit);
                LinearFactor {
                    slope: f.slope,
                    center: f.center - ec,
                }
            })
            .collect();
        let o = &mut obj;
        o.own = own_f;
        o.other = other_f;
        let u0: Vec<T> = xt.iter().map(|&x| (x - origin) / unit).collect();
        let floor = o.floor;
        report.floored_factors += o
            .own
            .iter()
            .zip(&u0)
            .filter(|(f, &u)| f.value(u) <= floor)
            .count();
        let prior_bound = crate::solver::gct_step_bound(&o.prior);
        let beta = o.step_bound(&u0);
        let hessian_ratio = if prior_bound > T::zero() {
            (o.log_hessian_norm(&u0) / prior_bound).as_f64()
        } else {
            f64::INFINITY
        };
        let bounds = Bounds {
            lower: lower.iter().map(|&v| (v - origin) / unit).collect(),
            upper: upper.iter().map(|&v| (v - origin) / unit).collect(),
        };
        let solver = SolverOptions {
            min_step_bound: opts.solver.min_step_bound.or((prior_bound > T::zero()).then(|| prior_bound.as_f64())),
            ..opts.solver
        };
        let res = match agd_solve(&*o, &u0, beta, Some(&bounds), &solver) {
            Ok(r) => r,
            Err(Error::Numeric(msg)) if o.min_factor(&u0) <= T::zero() => {
                log::warn!("row {row}: {msg}; keeping the current estimate");
                break;
            }
            Err(e) => return Err(e),
        };
        report.passes.push(PassReport {
            iterations: res.iterations,
            converged: res.converged,
            objective: res.value.as_f64(),
            step_bound: beta.as_f64(),
            hessian_ratio,
        });
        xt = res.x.iter().map(|&u| origin + unit * u).collect();
    }
    for (n, &v) in nodes.iter().zip(&xt) {
        out[n.col] = q.clamp(v);
    }
    log::debug!(
        "row {row}: {} nodes, {} other-view pixels, {} AGD iterations, objective {:?}",
        report.nodes,
        report.other_pixels,
        report.iterations(),
        report.passes.last().map(|p| p.objective)
    );
    Ok((out, report))
}

/// Enhanced view with per-row diagnostics and the metric used on each row.
#[derive(Debug, Clone)]
pub struct ViewResult<T> {
    pub image: DepthImage<T>,
    pub rows: Vec<RowReport>,
    pub metrics: Vec<MetricMatrix<T>>,
    /// Rows on which the metric was (re)learned.
    pub metric_updates: Vec<usize>,
}

fn training_rows<T: Real>(view: &ViewData<T>, row: usize, values: &[T]) -> Vec<TrainingRow<T>> {
    let w = view.observed.width();
    let mut out = Vec::new();
    let mut cur: Option<(usize, TrainingRow<T>)> = None;
    for c in 0..w {
        let k = row * w + c;
        let (Some(l), Some(f)) = (view.layers.label(row, c), view.features[k]) else {
            continue;
        };
        if !view.observed.mask()[k] {
            continue;
        }
        match &mut cur {
            Some((cl, tr)) if *cl == l => {
                tr.values.push(values[c]);
                tr.features.push(f);
            }
            _ => {
                if let Some((_, tr)) = cur.take() {
                    out.push(tr);
                }
                cur = Some((
                    l,
                    TrainingRow {
                        values: vec![values[c]],
                        features: vec![f],
                    },
                ));
            }
        }
    }
    out.extend(cur.map(|c| c.1));
    out.retain(|r| r.values.len() >= 2);
    out
}

/// Enhances every row of `own` top to bottom, learning the metric from the
/// previous `K` enhanced rows; rows before that use the identity.
pub fn enhance_view<T: Real>(
    own: &ViewData<T>,
    other: &ViewData<T>,
    q: &QuantizerParams<T>,
    dir: Direction,
    opts: &EnhanceOptions,
) -> Result<ViewResult<T>> {
    opts.validate()?;
    let h = own.observed.height();
    let mut values = own.observed.values().to_vec();
    let w = own.observed.width();
    let mut metric = MetricMatrix::identity();
    let mut history: Vec<Vec<TrainingRow<T>>> = Vec::new();
    let mut rows = Vec::with_capacity(h);
    let mut metrics = Vec::with_capacity(h);
    let mut updates = Vec::new();
    for r in 0..h {
        if opts.learn_metric && r >= opts.k_rows && (r - opts.k_rows).is_multiple_of(opts.metric_refresh) {
            let train: Vec<TrainingRow<T>> = history[r - opts.k_rows..r].iter().flatten().cloned().collect();
            if !train.is_empty() {
                let fit = learn_metric_from(&train, &metric, &opts.metric)?;
                log::debug!("row {r}: metric relearned in {} iterations", fit.iterations);
                metric = fit.metric;
                updates.push(r);
            }
        }
        let (vals, rep) = enhance_row(r, own, other, q, &metric, dir, opts)?;
        history.push(training_rows(own, r, &vals));
        values[r * w..(r + 1) * w].copy_from_slice(&vals);
        log::info!(
            "row {r}: {} AGD iterations, objective {}",
            rep.iterations(),
            rep.passes.last().map_or(f64::NAN, |p| p.objective)
        );
        rows.push(rep);
        metrics.push(metric);
    }
    log_occlusions(&rows);
    Ok(ViewResult {
        image: own.observed.with_values(values)?,
        rows,
        metrics,
        metric_updates: updates,
    })
}

/// Enhances rows independently with a given metric per row.
pub fn enhance_view_with<T: Real>(
    own: &ViewData<T>,
    other: &ViewData<T>,
    q: &QuantizerParams<T>,
    dir: Direction,
    metrics: &[MetricMatrix<T>],
    opts: &EnhanceOptions,
) -> Result<ViewResult<T>> {
    opts.validate()?;
    let (h, w) = (own.observed.height(), own.observed.width());
    if metrics.len() != h {
        return Err(Error::Parameter(format!("{} metrics for {h} rows", metrics.len())));
    }
    let solved: Vec<(Vec<T>, RowReport)> = (0..h)
        .into_par_iter()
        .map(|r| enhance_row(r, own, other, q, &metrics[r], dir, opts))
        .collect::<Result<_>>()?;
    let mut values = Vec::with_capacity(h * w);
    let mut rows = Vec::with_capacity(h);
    for (v, rep) in solved {
        values.extend(v);
        rows.push(rep);
    }
    log_occlusions(&rows);
    Ok(ViewResult {
        image: own.observed.with_values(values)?,
        rows,
        metrics: metrics.to_vec(),
        metric_updates: Vec::new(),
    })
}

fn log_occlusions(rows: &[RowReport]) {
    let total: usize = rows.iter().map(|r| r.occlusions).sum();
    if total > 0 {
        let affected = rows.iter().filter(|r| r.occlusions > 0).count();
        log::info!("{total} warped pixels in {affected} rows had contributors from several surfaces; nearest kept");
    }
}

/// Both enhanced views.
#[derive(Debug, Clone)]
pub struct PairResult<T> {
    pub left: ViewResult<T>,
    pub right: ViewResult<T>,
    pub left_view: ViewData<T>,
    pub right_view: ViewData<T>,
}

/// Prepares both views, enhances the left view with the right as evidence,
/// then the right view with the left, reusing the left view's metrics.
pub fn enhance_pair<T: Real>(
    left: &DepthImage<T>,
    right: &DepthImage<T>,
    q: &QuantizerParams<T>,
    m: &NoiseModel<T>,
    opts: &EnhanceOptions,
) -> Result<PairResult<T>> {
    opts.validate()?;
    if left.height() != right.height() {
        return Err(Error::Parameter("views must have the same number of rows".into()));
    }
    let (lv, rv) = rayon::join(
        || prepare_view(left, q, m, &opts.layers),
        || prepare_view(right, q, m, &opts.layers),
    );
    let (lv, rv) = (lv?, rv?);
    let l = enhance_view(&lv, &rv, q, Direction::LeftToRight, opts)?;
    let r = enhance_view_with(&rv, &lv, q, Direction::RightToLeft, &l.metrics, opts)?;
    Ok(PairResult {
        left: l,
        right: r,
        left_view: lv,
        right_view: rv,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::forward::{corrupt, derive_seed, NoiseFamily};
    use crate::scene::{PlanePatch, Scene, View};

    fn plane_scene(height: usize, z0: f64, a: f64) -> Scene {
        Scene {
            height,
            width: 64,
            focal: 64.0,
            baseline: 50.0,
            background: 3000.0,
            patches: vec![PlanePatch {
                z0,
                a,
                b: 0.0,
                x_range: (-1e4, 1e4),
                y_range: (-1e4, 1e4),
            }],
        }
    }

    fn mae(a: &[f64], b: &[f64]) -> f64 {
        a.iter().zip(b).map(|(x, y)| (x - y).abs()).sum::<f64>() / a.len() as f64
    }

    fn prepared(s: &Scene, m: &NoiseModel<f64>, seed: u64) -> (Vec<f64>, ViewData<f64>, ViewData<f64>) {
        let q = QuantizerParams::realsense_d435();
        let gl: DepthImage<f64> = s.render(View::Left).unwrap();
        let gr: DepthImage<f64> = s.render(View::Right).unwrap();
        let yl = corrupt(&gl, &q, m, derive_seed(seed, 1, 0)).unwrap();
        let yr = corrupt(&gr, &q, m, derive_seed(seed, 1, 1)).unwrap();
        let opts = LayerOptions::default();
        (
            gl.values().to_vec(),
            prepare_view(&yl, &q, m, &opts).unwrap(),
            prepare_view(&yr, &q, m, &opts).unwrap(),
        )
    }

    #[test]
    fn fronto_parallel_plane_halves_the_error() {
        let q = QuantizerParams::realsense_d435();
        let m = NoiseModel::realsense_d435();
        let s = plane_scene(5, 1000.0, 0.0);
        let (mut before, mut after) = (0.0, 0.0);
        for seed in 0..20 {
            let (truth, lv, rv) = prepared(&s, &m, seed);
            let row = 2;
            let gt = &truth[row * 64..(row + 1) * 64];
            let (out, rep) =
                enhance_row(row, &lv, &rv, &q, &MetricMatrix::identity(), Direction::LeftToRight, &EnhanceOptions::default())
                    .unwrap();
            assert!(!rep.short_row && rep.other_pixels > 50);
            before += mae(lv.observed.row_values(row), gt);
            after += mae(&out, gt);
        }
        assert!(after <= 0.5 * before, "{after} vs {before}");
    }

    #[test]
    fn noiseless_ramp_stays_within_a_bin() {
        let q = QuantizerParams::realsense_d435();
        let m = NoiseModel::new(1e-12, -500.0, 1e-6, NoiseFamily::Gaussian).unwrap();
        let s = plane_scene(5, 1200.0, 0.3);
        let (_, lv, rv) = prepared(&s, &m, 3);
        let (out, _) =
            enhance_row(2, &lv, &rv, &q, &MetricMatrix::identity(), Direction::LeftToRight, &EnhanceOptions::default())
                .unwrap();
        for (&o, &y) in out.iter().zip(lv.observed.row_values(2)) {
            let (lo, hi) = q.bin_edges(q.mapping(y).unwrap());
            assert!((o - y).abs() <= hi - lo, "{o} {y}");
        }
    }

    #[test]
    fn short_rows_return_the_prefiltered_values() {
        let q = QuantizerParams::realsense_d435();
        let m = NoiseModel::realsense_d435();
        let s = plane_scene(5, 1000.0, 0.0);
        let (_, mut lv, rv) = prepared(&s, &m, 1);
        for c in 1..64 {
            lv.observed.set_missing(2, c);
        }
        let (out, rep) =
            enhance_row(2, &lv, &rv, &q, &MetricMatrix::identity(), Direction::LeftToRight, &EnhanceOptions::default())
                .unwrap();
        assert!(rep.short_row);
        assert_eq!(out[0], lv.prefiltered.get(2, 0).unwrap());
        assert_eq!(&out[1..], &lv.observed.row_values(2)[1..]);
    }

    #[test]
    fn options_are_checked() {
        assert!(EnhanceOptions::default().validate().is_ok());
        let bad = [
            EnhanceOptions {
                g1: 0.0,
                g2: 0.0,
                ..Default::default()
            },
            EnhanceOptions {
                depth_unit: 0.0,
                ..Default::default()
            },
            EnhanceOptions {
                outer_passes: 0,
                ..Default::default()
            },
        ];
        for o in bad {
            assert!(matches!(o.validate(), Err(Error::Parameter(_))));
        }
    }

    #[test]
    fn pair_is_deterministic_and_metrics_update_after_k_rows() {
        let q = QuantizerParams::realsense_d435();
        let m = NoiseModel::realsense_d435();
        let s = Scene {
            height: 40,
            ..plane_scene(40, 1100.0, 0.2)
        };
        let gl: DepthImage<f64> = s.render(View::Left).unwrap();
        let gr: DepthImage<f64> = s.render(View::Right).unwrap();
        let yl = corrupt(&gl, &q, &m, 5).unwrap();
        let yr = corrupt(&gr, &q, &m, 6).unwrap();
        let opts = EnhanceOptions::default();
        let a = enhance_pair(&yl, &yr, &q, &m, &opts).unwrap();
        let b = enhance_pair(&yl, &yr, &q, &m, &opts).unwrap();
        assert_eq!(a.left.image, b.left.image);
        assert_eq!(a.right.image, b.right.image);
        assert_eq!(a.left.metric_updates, vec![30, 38]);
        assert!(a.left.metrics[..30].iter().all(|mm| *mm == MetricMatrix::identity()));
    }
}
