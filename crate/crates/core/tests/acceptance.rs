//! Acceptance suite: one pass/fail line per criterion, non-zero exit on any failure.
//! Run with `cargo test --release -p graphdepth --test acceptance`.

use std::process::ExitCode;
use std::time::Instant;

use graphdepth::baseline::BilateralOptions;
use graphdepth::benchmark::run_trial;
use graphdepth::cloud::{c2c, c2c_brute, c2p, c2p_brute, PointCloud};
use graphdepth::enhance::{enhance_row, prepare_view, EnhanceOptions, ViewData};
use graphdepth::estimate::{
    estimate_sigma_cluster, fit_noise_params, golden_section_max, log_objective, LikelihoodForm, ObservationCluster,
};
use graphdepth::forward::{corrupt, derive_seed, NoiseFamily, NoiseModel, QuantizerParams};
use graphdepth::graph::{
    build_row_laplacian, glr, learn_metric, FeatureVector, MetricMatrix, MetricOptions, TrainingRow, FEATURE_DIM,
};
use graphdepth::image::{DepthImage, Intrinsics};
use graphdepth::layering::LayerOptions;
use graphdepth::linalg::power_iteration;
use graphdepth::scene::{PlanePatch, Scene, View};
use graphdepth::solver::{
    agd_solve, gct_step_bound, gd_solve, likelihood_exact, likelihood_linear, linearize_gaussian, pixel_coefficients,
    LinearFactor, MapObjective, PriorWeights, SmoothObjective, SolverOptions,
};
use graphdepth::sparse::CsrMatrix;
use graphdepth::warp::{build_weight_matrix, linearize_warp, Direction, Normalizer, SourceRow, WarpOptions};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

type Outcome = (bool, String);
type Criterion = (&'static str, fn() -> Outcome);

fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

fn d435() -> (QuantizerParams<f64>, NoiseModel<f64>) {
    (QuantizerParams::realsense_d435(), NoiseModel::realsense_d435())
}

fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

/// `samples` corrupted observations of a flat surface at depth `x`.
fn cluster_samples(x: f64, samples: usize, seed: u64) -> Vec<f64> {
    let (q, m) = d435();
    let intr = Intrinsics::new(64.0, 50.0).unwrap();
    let img = DepthImage::filled(1, samples, x, intr).unwrap();
    corrupt(&img, &q, &m, seed).unwrap().values().to_vec()
}

fn cluster_depths() -> Vec<f64> {
    (0..10).map(|k| 615.0 + (1525.0 - 615.0) * k as f64 / 9.0).collect()
}

fn forward_model() -> Outcome {
    let (q, _) = d435();
    let start = Instant::now();
    let mut r = rng(1);
    let mut bad = 0usize;
    for _ in 0..100_000 {
        let x = q.x_min() + (q.x_max() - q.x_min()) * r.random::<f64>();
        let k = q.mapping(x).unwrap();
        let y = q.dequantize(x).unwrap();
        let (lo, hi) = q.bin_edges(k);
        if q.mapping(y).unwrap() != k || q.dequantize(y).unwrap() != y || !(lo <= x && x < hi) {
            bad += 1;
        }
    }
    let n = q.bin_count();
    let mut tiles = q.bin_edges(1).0 <= q.x_min() && q.bin_edges(n).1 >= q.x_max();
    let mut widening = true;
    let mut prev_width = 0.0;
    for k in 1..=n {
        let (lo, hi) = q.bin_edges(k);
        if k < n {
            let next = q.bin_edges(k + 1).0;
            tiles &= (next - hi).abs() <= 1e-12 * hi;
        }
        widening &= hi - lo > prev_width;
        prev_width = hi - lo;
    }
    let secs = start.elapsed().as_secs_f64();
    (
        bad == 0 && tiles && widening && secs < 1.0,
        format!("{bad} inconsistent samples, {n} bins tile: {tiles}, widths increasing: {widening}, {secs:.3} s"),
    )
}

fn histogram() -> Outcome {
    let (q, _) = d435();
    let depths = cluster_depths();
    let mut pooled = vec![Vec::new(); depths.len()];
    let mut monotone_seeds = 0;
    for seed in 0..20 {
        let mut vars = Vec::new();
        for (k, &x) in depths.iter().enumerate() {
            let ys = cluster_samples(x, 100, derive_seed(seed, 2, k as u64));
            let mean = ys.iter().sum::<f64>() / ys.len() as f64;
            vars.push(ys.iter().map(|y| (y - mean).powi(2)).sum::<f64>() / (ys.len() - 1) as f64);
            pooled[k].extend(ys.iter().map(|y| y - x));
        }
        monotone_seeds += vars.windows(2).all(|w| w[1] >= w[0]) as usize;
    }
    let pooled_var: Vec<f64> = pooled
        .iter()
        .map(|d| {
            let mean = d.iter().sum::<f64>() / d.len() as f64;
            d.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (d.len() - 1) as f64
        })
        .collect();
    let non_decreasing = pooled_var.windows(2).all(|w| w[1] >= w[0]);
    let width = |x: f64| {
        let (lo, hi) = q.bin_edges(q.mapping(x).unwrap());
        hi - lo
    };
    let (w6, w15) = (width(600.0), width(1500.0));
    let steps_ok = (w6 - 1.0).abs() <= w6 && (w15 - 3.0).abs() <= w15;
    (
        non_decreasing && steps_ok,
        format!(
            "pooled variance {:.2}..{:.2} mm^2 non-decreasing: {non_decreasing} ({monotone_seeds}/20 seeds monotone alone), step {w6:.3} mm at 0.6 m, {w15:.3} mm at 1.5 m",
            pooled_var[0],
            pooled_var[pooled_var.len() - 1]
        ),
    )
}

fn sigma_estimation() -> Outcome {
    let (q, m) = d435();
    let mut ok = true;
    let mut parts = Vec::new();
    let mut worst_gap = 0.0f64;
    for (k, x) in [615.0, 1015.0, 1525.0].into_iter().enumerate() {
        let planted = m.std_at(x).unwrap();
        let mut est = Vec::new();
        for seed in 0..20 {
            let ys = cluster_samples(x, 100, derive_seed(seed, 3, k as u64));
            let c = ObservationCluster::new(x, ys).unwrap();
            let e = estimate_sigma_cluster(&c, &q).unwrap();
            est.push(e.sigma);

            let bins = c.bins(&q).unwrap();
            let f = |s: f64| log_objective(s, &bins, LikelihoodForm::Exact).unwrap().value;
            let (lo, hi) = (e.bracket_lo, e.bracket_hi);
            let spacing = (hi - lo) / 9999.0;
            let grid = (0..10_000)
                .map(|i| lo + spacing * i as f64)
                .max_by(|&a, &b| f(a).total_cmp(&f(b)))
                .unwrap();
            let (gs, _, _) = golden_section_max(f, lo, hi, 1e-6 * spacing);
            let gap = (gs - grid).abs().max((e.sigma - grid).abs()) / spacing;
            worst_gap = worst_gap.max(gap);
            ok &= gap <= 1.0;
        }
        let med = median(est);
        let rel = (med - planted).abs() / planted;
        ok &= rel <= 0.15;
        parts.push(format!("{x} mm: {med:.3} vs {planted:.3} ({:.1}%)", 100.0 * rel));
    }
    (ok, format!("{}; worst search-vs-grid gap {worst_gap:.2} grid steps", parts.join(", ")))
}

fn noise_law_fit() -> Outcome {
    let (q, m) = d435();
    let truth = [m.alpha, m.mu, m.kappa];
    let rel = |p: [f64; 3]| -> [f64; 3] { std::array::from_fn(|i| ((p[i] - truth[i]) / truth[i]).abs()) };

    let exact: Vec<(f64, f64)> = cluster_depths().iter().map(|&x| (x, m.std_at(x).unwrap())).collect();
    let fit = fit_noise_params(&exact, NoiseFamily::Gaussian).unwrap().model;
    let exact_err = rel([fit.alpha, fit.mu, fit.kappa]).into_iter().fold(0.0, f64::max);

    let mut fits: [Vec<f64>; 3] = Default::default();
    for seed in 0..20 {
        let points: Vec<(f64, f64)> = cluster_depths()
            .iter()
            .enumerate()
            .map(|(k, &x)| {
                let ys = cluster_samples(x, 100, derive_seed(seed, 4, k as u64));
                let c = ObservationCluster::new(x, ys).unwrap();
                (x, estimate_sigma_cluster(&c, &q).unwrap().sigma)
            })
            .collect();
        let f = fit_noise_params(&points, NoiseFamily::Gaussian).unwrap().model;
        for (v, p) in fits.iter_mut().zip([f.alpha, f.mu, f.kappa]) {
            v.push(p);
        }
    }
    let mc = fits.map(median);
    let mc_err = rel(mc);
    (
        exact_err < 1e-6 && mc_err.iter().all(|&e| e <= 0.2),
        format!(
            "median of 20 Monte-Carlo fits alpha {:.3e} mu {:.1} kappa {:.3} (errors {:.1}%, {:.1}%, {:.1}%), exact-data error {exact_err:.1e}",
            mc[0],
            mc[1],
            mc[2],
            100.0 * mc_err[0],
            100.0 * mc_err[1],
            100.0 * mc_err[2]
        ),
    )
}

/// Five-point Gauss-Legendre rule on `[a, b]`.
fn gauss_legendre(f: impl Fn(f64) -> f64, a: f64, b: f64) -> f64 {
    const NODES: [(f64, f64); 5] = [
        (0.0, 0.568_888_888_888_888_9),
        (-0.538_469_310_105_683, 0.478_628_670_499_366_5),
        (0.538_469_310_105_683, 0.478_628_670_499_366_5),
        (-0.906_179_845_938_664, 0.236_926_885_056_189_1),
        (0.906_179_845_938_664, 0.236_926_885_056_189_1),
    ];
    let (c, h) = (0.5 * (a + b), 0.5 * (b - a));
    NODES.iter().map(|&(t, w)| w * f(c + h * t)).sum::<f64>() * h
}

fn closed_forms() -> Outcome {
    let mut r = rng(5);
    let mut worst = 0.0f64;
    for _ in 0..1000 {
        let lower = 300.0 + 4000.0 * r.random::<f64>();
        let upper = lower + 0.1 + 10.0 * r.random::<f64>();
        let sigma = 0.5 + 50.0 * r.random::<f64>();
        let n0 = sigma * (6.0 * r.random::<f64>() - 3.0);
        let x = lower + 4.0 * sigma * (r.random::<f64>() - 0.5);
        let (a, b) = linearize_gaussian(n0, sigma);
        let quad = gauss_legendre(|n| a * n + b, lower - x, upper - x);
        let closed = pixel_coefficients(lower, upper, sigma, n0).eval(x);
        let scale = quad.abs().max(b.abs() * (upper - lower));
        worst = worst.max((closed - quad).abs() / scale);
    }
    (worst < 1e-12, format!("max relative error {worst:.2e} over 1000 instances"))
}

fn unit_normal(r: &mut ChaCha8Rng) -> [f64; 3] {
    let v = [r.random::<f64>() - 0.5, r.random::<f64>() - 0.5, -1.0];
    let n = (v[0] * v[0] + v[1] * v[1] + v[2] * v[2]).sqrt();
    [v[0] / n, v[1] / n, v[2] / n]
}

fn random_features(r: &mut ChaCha8Rng, values: &[f64]) -> Vec<FeatureVector<f64>> {
    values
        .iter()
        .enumerate()
        .map(|(c, &x)| FeatureVector::new(unit_normal(r), x / 5000.0, [0.5, c as f64 / values.len() as f64]).unwrap())
        .collect()
}

/// Random N-pixel row problem: factors, warp Jacobian and prior, plus an interior point.
fn row_fixture(seed: u64, n: usize) -> (MapObjective<f64>, Vec<f64>) {
    let (q, m) = d435();
    let mut r = rng(seed);
    let unit = 4.0;
    let base = 700.0 + 2500.0 * r.random::<f64>();
    let slope = 4.0 * (r.random::<f64>() - 0.5);
    let xs: Vec<f64> = (0..n).map(|c| base + slope * c as f64 + 10.0 * r.random::<f64>()).collect();
    let origin = xs.iter().sum::<f64>() / n as f64;
    let factor = |x: f64, r: &mut ChaCha8Rng| {
        let sigma = m.std_clamped(x);
        let (lo, hi) = q.bin_edges(q.mapping(x + sigma * (r.random::<f64>() - 0.5)).unwrap());
        LinearFactor::new(lo, hi, sigma, x, origin, unit)
    };
    let own: Vec<LinearFactor<f64>> = xs.iter().map(|&x| factor(x, &mut r)).collect();

    let cols: Vec<usize> = (0..n).collect();
    let src = SourceRow {
        columns: &cols,
        values: &xs,
        focal: 64.0,
        baseline: 50.0,
        direction: Direction::LeftToRight,
    };
    let opts = WarpOptions {
        normalizer: Normalizer::Tracking,
        ..WarpOptions::default()
    };
    let warp = linearize_warp(&src, n, None, &opts).unwrap();
    let g = warp.evaluate(&xs);
    let other: Vec<LinearFactor<f64>> = g.iter().map(|&x| factor(x, &mut r)).collect();

    let metric = MetricMatrix::identity();
    let ll = build_row_laplacian(&cols, &random_features(&mut r, &xs), &metric).unwrap().laplacian;
    let ocols: Vec<usize> = (0..g.len()).collect();
    let lr = build_row_laplacian(&ocols, &random_features(&mut r, &g), &metric).unwrap().laplacian;
    let weight = 0.1 + r.random::<f64>();
    let e: Vec<f64> = warp.offset.iter().map(|v| (v - origin) / unit).collect();
    let prior = PriorWeights::new(&ll.scale(weight), Some((&lr.scale(weight), &warp.jacobian, &e))).unwrap();
    let obj = MapObjective::new(own, other, warp.jacobian.clone(), prior).unwrap();

    // interior point: the linearization point plus a perturbation every factor tolerates
    let u0: Vec<f64> = xs.iter().map(|x| (x - origin) / unit).collect();
    let max_slope = obj.own.iter().chain(&obj.other).map(|f| f.slope.abs()).fold(1e-12, f64::max);
    let step = 0.2 / max_slope.max(1.0);
    let u: Vec<f64> = u0.iter().map(|v| v + step * (r.random::<f64>() - 0.5)).collect();
    (obj, u)
}

fn gradient_check() -> Outcome {
    let mut worst = 0.0f64;
    for seed in 0..100 {
        let (obj, u) = row_fixture(100 + seed, 32);
        let mut g = vec![0.0; u.len()];
        obj.gradient(&u, &mut g);
        let scale = g.iter().fold(0.0f64, |a, v| a.max(v.abs()));
        for i in 0..u.len() {
            let h = 1e-6 * u[i].abs().max(1.0);
            let (mut p, mut mn) = (u.clone(), u.clone());
            p[i] += h;
            mn[i] -= h;
            let fd = (obj.value(&p).unwrap() - obj.value(&mn).unwrap()) / (2.0 * h);
            worst = worst.max((fd - g[i]).abs() / scale);
        }
    }
    (worst < 1e-5, format!("max relative error {worst:.2e} over 100 fixtures of 32 pixels"))
}

fn dense_eigenvalues(l: &CsrMatrix<f64>) -> Vec<f64> {
    let n = l.nrows();
    let d = l.to_dense();
    let m = nalgebra::DMatrix::from_fn(n, n, |i, j| d[i][j]);
    m.symmetric_eigenvalues().iter().copied().collect()
}

fn gct_bound() -> Outcome {
    let mut bound_ok = 0;
    let mut monotone = 0;
    let mut tightest = f64::INFINITY;
    for seed in 0..100 {
        let (obj, u) = row_fixture(300 + seed, 32);
        let prior = &obj.prior;
        let lap = &prior.laplacian;
        let gersh = lap.gershgorin_max();
        let power = power_iteration(|x| lap.mul_vec(x), lap.nrows(), 500);
        let exact = dense_eigenvalues(lap).into_iter().fold(f64::NEG_INFINITY, f64::max);
        tightest = tightest.min(gersh / exact);
        bound_ok += (gersh >= power && gersh >= exact * (1.0 - 1e-12)) as usize;

        // quadratic part u^T L u + 2 h^T u under GD with step 1/beta
        let beta = gct_step_bound(prior);
        let quad = |x: &[f64]| {
            lap.quad_form(x) + 2.0 * x.iter().zip(&prior.linear).map(|(a, b)| a * b).sum::<f64>()
        };
        let mut x = u.clone();
        let mut prev = quad(&x);
        let mut ok = true;
        for _ in 0..200 {
            let lx = lap.mul_vec(&x);
            for ((v, &a), &h) in x.iter_mut().zip(&lx).zip(&prior.linear) {
                *v -= 2.0 * (a + h) / beta;
            }
            let cur = quad(&x);
            ok &= cur <= prev + 1e-12 * prev.abs().max(1.0);
            prev = cur;
        }
        monotone += ok as usize;
    }
    (
        bound_ok == 100 && monotone == 100,
        format!("bound holds on {bound_ok}/100 (tightest ratio {tightest:.3}), GD decreases monotonically on {monotone}/100"),
    )
}

/// `0.5 x^T A x - b^T x` with dense symmetric `A`.
struct Quadratic {
    a: Vec<Vec<f64>>,
    b: Vec<f64>,
}

impl SmoothObjective<f64> for Quadratic {
    fn dim(&self) -> usize {
        self.b.len()
    }

    fn value(&self, x: &[f64]) -> Option<f64> {
        let ax: f64 = self
            .a
            .iter()
            .zip(x)
            .map(|(row, &xi)| xi * row.iter().zip(x).map(|(a, b)| a * b).sum::<f64>())
            .sum();
        Some(0.5 * ax - self.b.iter().zip(x).map(|(a, b)| a * b).sum::<f64>())
    }

    fn gradient(&self, x: &[f64], out: &mut [f64]) {
        for ((o, row), &bi) in out.iter_mut().zip(&self.a).zip(&self.b) {
            *o = row.iter().zip(x).map(|(a, b)| a * b).sum::<f64>() - bi;
        }
    }
}

fn agd_vs_gd() -> Outcome {
    let n = 40;
    let mut r = rng(8);
    // random orthogonal basis with eigenvalues spread over [1, 1000]
    let g = nalgebra::DMatrix::from_fn(n, n, |_, _| r.random::<f64>() - 0.5);
    let qm = g.qr().q();
    let eig = nalgebra::DVector::from_fn(n, |i, _| 1000f64.powf(i as f64 / (n - 1) as f64));
    let a = &qm * nalgebra::DMatrix::from_diagonal(&eig) * qm.transpose();
    let b: Vec<f64> = (0..n).map(|_| 10.0 * (r.random::<f64>() - 0.5)).collect();
    let exact = a.clone().lu().solve(&nalgebra::DVector::from_column_slice(&b)).unwrap();
    let f = Quadratic {
        a: (0..n).map(|i| (0..n).map(|j| a[(i, j)]).collect()).collect(),
        b,
    };
    let opts = SolverOptions {
        eps: 1e-20,
        max_iter: 200_000,
        ..SolverOptions::default()
    };
    let x0 = vec![0.0; n];
    let acc = agd_solve(&f, &x0, 1000.0, None, &opts).unwrap();
    let plain = gd_solve(&f, &x0, 1000.0, None, &opts).unwrap();
    let norm = exact.norm();
    let dist = |x: &[f64]| (nalgebra::DVector::from_column_slice(x) - &exact).norm() / norm;
    let between = dist(&acc.x).max(dist(&plain.x));
    let ratio = acc.iterations as f64 / plain.iterations as f64;
    (
        acc.converged && plain.converged && between < 1e-6 && ratio <= 0.5,
        format!(
            "AGD {} vs GD {} iterations (ratio {ratio:.3}), relative distance to the minimizer {between:.1e}",
            acc.iterations, plain.iterations
        ),
    )
}

fn depth_for_likelihood(lo: f64, hi: f64, sigma: f64, target: f64) -> f64 {
    let mid = 0.5 * (lo + hi);
    let (mut a, mut b) = (mid - 12.0 * sigma, mid);
    for _ in 0..200 {
        let c = 0.5 * (a + b);
        if likelihood_exact(c, lo, hi, sigma) < target {
            a = c;
        } else {
            b = c;
        }
    }
    0.5 * (a + b)
}

fn linear_vs_exact(depth: f64, target: f64) -> (f64, f64) {
    let (q, m) = d435();
    let y = q.dequantize(depth).unwrap();
    let (lo, hi) = q.bin_edges(q.mapping(y).unwrap());
    let sigma = m.std_clamped(depth);
    let x = depth_for_likelihood(lo, hi, sigma, target);
    (likelihood_exact(x, lo, hi, sigma), likelihood_linear(x, lo, hi, sigma, y - x))
}

fn likelihood_approximation() -> Outcome {
    let (e1, l1) = linear_vs_exact(500.0, 0.0098);
    let (e2, l2) = linear_vs_exact(4500.0, 0.0209);
    let (r1, r2) = ((l1 - e1).abs() / e1, (l2 - e2).abs() / e2);
    (
        r1 <= 0.2 && r2 <= 0.01,
        format!("0.5 m: exact {e1:.4} linear {l1:.4} ({:.1}%), 4.5 m: exact {e2:.4} linear {l2:.4} ({:.2}%)", 100.0 * r1, 100.0 * r2),
    )
}

fn desk_view(seed: u64) -> ViewData<f64> {
    let (q, m) = d435();
    let truth: DepthImage<f64> = Scene::desk().render(View::Left).unwrap();
    let y = corrupt(&truth, &q, &m, derive_seed(seed, 1, 0)).unwrap();
    prepare_view(&y, &q, &m, &LayerOptions::default()).unwrap()
}

fn training_row(v: &ViewData<f64>, row: usize) -> TrainingRow<f64> {
    let w = v.prefiltered.width();
    let (values, features) = (0..w)
        .filter_map(|c| v.features[row * w + c].map(|f| (v.prefiltered.values()[row * w + c], f)))
        .unzip();
    TrainingRow { values, features }
}

fn graph_suite() -> Outcome {
    let view = desk_view(10);
    let h = view.prefiltered.height();
    let (mut metrics, mut glr_ok, mut lap_checked, mut lap_bad) = (0, 0, 0, 0);
    let mut min_eig = f64::INFINITY;
    let mut min_lap_eig = f64::INFINITY;
    for start in (0..h - 30).step_by(4) {
        let rows: Vec<TrainingRow<f64>> = (start..start + 30).map(|r| training_row(&view, r)).collect();
        let fit = learn_metric(&rows, &MetricOptions::default()).unwrap();
        let e = fit.metric.entries();
        let symmetric = (0..FEATURE_DIM).all(|i| (0..FEATURE_DIM).all(|j| e[i][j] == e[j][i]));
        let m = nalgebra::DMatrix::from_fn(FEATURE_DIM, FEATURE_DIM, |i, j| e[i][j]);
        let lo = m.symmetric_eigenvalues().iter().copied().fold(f64::INFINITY, f64::min);
        min_eig = min_eig.min(lo);
        metrics += (symmetric && lo > 0.0) as usize;
        glr_ok += fit.history.windows(2).all(|w| w[1] <= w[0]) as usize;

        // the learned objective is the GLR summed over the training rows
        for tr in &rows {
            let cols: Vec<usize> = (0..tr.values.len()).collect();
            let g = build_row_laplacian(&cols, &tr.features, &fit.metric).unwrap();
            let l = &g.laplacian;
            let row_sum = (0..l.nrows()).map(|i| l.row(i).map(|e| e.1).sum::<f64>().abs()).fold(0.0, f64::max);
            let eig = dense_eigenvalues(l).into_iter().fold(f64::INFINITY, f64::min);
            min_lap_eig = min_lap_eig.min(eig);
            lap_checked += 1;
            if !(l.is_symmetric(0.0) && row_sum < 1e-12 && eig >= -1e-10 && glr(&tr.values, l) >= -1e-9) {
                lap_bad += 1;
            }
        }
    }
    let windows = (0..h - 30).step_by(4).count();
    (
        metrics == windows && glr_ok == windows && lap_bad == 0,
        format!(
            "{metrics}/{windows} metrics symmetric PD (min eigenvalue {min_eig:.3e}), GLR non-increasing in {glr_ok}/{windows}, {}/{lap_checked} Laplacians valid (min eigenvalue {min_lap_eig:.1e})",
            lap_checked - lap_bad
        ),
    )
}

/// Largest relative deviation of `y` from the proportional fit `y = c x`,
/// with `c` the geometric mean of `y / x`.
fn linear_fit_deviation(x: &[f64], y: &[f64]) -> f64 {
    let c = (x.iter().zip(y).map(|(a, b)| (b / a).ln()).sum::<f64>() / x.len() as f64).exp();
    x.iter().zip(y).map(|(a, b)| (b / (c * a) - 1.0).abs()).fold(0.0, f64::max)
}

fn wide_plane(width: usize) -> Scene {
    Scene {
        height: 3,
        width,
        focal: 64.0,
        baseline: 50.0,
        background: 3000.0,
        patches: vec![PlanePatch {
            z0: 1000.0,
            a: 0.0,
            b: 0.0,
            x_range: (-1e6, 1e6),
            y_range: (-1e6, 1e6),
        }],
    }
}

fn warp_suite() -> Outcome {
    // Jacobian against finite differences and row sums of W on random rows
    let mut r = rng(11);
    let mut worst_h = 0.0f64;
    let mut worst_sum = 0.0f64;
    for t in 0..20 {
        let cols: Vec<usize> = (0..32).collect();
        let vals: Vec<f64> = (0..32).map(|c| 900.0 + 5.0 * c as f64 + 20.0 * r.random::<f64>()).collect();
        let src = SourceRow {
            columns: &cols,
            values: &vals,
            focal: 64.0,
            baseline: 50.0,
            direction: Direction::LeftToRight,
        };
        let opts = WarpOptions {
            normalizer: if t % 2 == 0 { Normalizer::Frozen } else { Normalizer::Tracking },
            ..WarpOptions::default()
        };
        let model = linearize_warp(&src, 32, None, &opts).unwrap();
        let dense = model.jacobian.to_dense();
        let scale = dense.iter().flatten().fold(0.0f64, |a, v| a.max(v.abs()));
        for i in 0..32 {
            let h = 1e-4 * vals[i];
            let (mut p, mut m) = (vals.clone(), vals.clone());
            p[i] += h;
            m[i] -= h;
            let (gp, gm) = (model.evaluate(&p), model.evaluate(&m));
            for row in 0..gp.len() {
                let fd = (gp[row] - gm[row]) / (2.0 * h);
                worst_h = worst_h.max((fd - dense[row][i]).abs() / scale);
            }
        }
        let w = build_weight_matrix(&src, 32, &opts).unwrap();
        for j in 0..w.nrows() {
            if w.row_nnz(j) > 0 {
                worst_sum = worst_sum.max((w.row(j).map(|e| e.1).sum::<f64>() - 1.0).abs());
            }
        }
    }

    // scaling of the row graph size and of enhance_row time
    let (q, m) = d435();
    let sizes = [64usize, 256, 1024];
    let opts = EnhanceOptions::default();
    let metric = MetricMatrix::identity();
    let mut nnz = Vec::new();
    let mut pairs = Vec::new();
    for &n in &sizes {
        let s = wide_plane(n);
        let views: Vec<ViewData<f64>> = [View::Left, View::Right]
            .into_iter()
            .enumerate()
            .map(|(k, v)| {
                let y = corrupt(&s.render(v).unwrap(), &q, &m, derive_seed(12, 1, k as u64)).unwrap();
                prepare_view(&y, &q, &m, &LayerOptions::default()).unwrap()
            })
            .collect();
        let tr = training_row(&views[0], 1);
        let cols: Vec<usize> = (0..tr.values.len()).collect();
        nnz.push(build_row_laplacian(&cols, &tr.features, &metric).unwrap().laplacian.nnz() as f64);
        pairs.push(views);
    }
    let run = |views: &[ViewData<f64>]| {
        let t = Instant::now();
        let (_, rep) = enhance_row(1, &views[0], &views[1], &q, &metric, Direction::LeftToRight, &opts).unwrap();
        (t.elapsed().as_secs_f64(), rep.iterations())
    };
    let iterations: Vec<usize> = pairs.iter().map(|v| run(v).1).collect();
    // interleaved rounds, fastest per size, so machine noise hits every size alike
    let mut secs = vec![f64::INFINITY; sizes.len()];
    for _ in 0..15 {
        for (t, v) in secs.iter_mut().zip(&pairs) {
            *t = t.min(run(v).0);
        }
    }
    let x: Vec<f64> = sizes.iter().map(|&n| n as f64).collect();
    let (dev_nnz, dev_time) = (linear_fit_deviation(&x, &nnz), linear_fit_deviation(&x, &secs));
    (
        worst_h <= 1e-4 && worst_sum <= 1e-12 && dev_nnz <= 0.25 && dev_time <= 0.25,
        format!(
            "H error {worst_h:.1e}, W row-sum error {worst_sum:.1e}, nnz {nnz:?} (deviation {:.1}%), enhance_row {:.2}/{:.2}/{:.2} ms in {iterations:?} iterations (deviation {:.1}%)",
            100.0 * dev_nnz,
            1e3 * secs[0],
            1e3 * secs[1],
            1e3 * secs[2],
            100.0 * dev_time
        ),
    )
}

fn end_to_end() -> Outcome {
    let (q, m) = d435();
    let start = Instant::now();
    let scene = Scene::desk();
    let opts = EnhanceOptions::default();
    let outcomes: Vec<_> = (0..10)
        .map(|seed| run_trial(&scene, &q, &m, &opts, &BilateralOptions::default(), seed).unwrap())
        .collect();
    let secs = start.elapsed().as_secs_f64();
    let med = |f: &dyn Fn(&graphdepth::benchmark::TrialOutcome) -> f64| median(outcomes.iter().map(f).collect());
    let c2c_ratio = med(&|o| o.enhanced.c2c / o.corrupted.c2c);
    let c2p_ratio = med(&|o| o.enhanced.c2p / o.corrupted.c2p);
    let (e_c2c, e_c2p) = (med(&|o| o.enhanced.c2c), med(&|o| o.enhanced.c2p));
    let (b_c2c, b_c2p) = (med(&|o| o.baseline.c2c), med(&|o| o.baseline.c2p));
    let (a_c2c, a_c2p) = (med(&|o| o.adaptive_bilateral.c2c), med(&|o| o.adaptive_bilateral.c2p));
    (
        c2c_ratio <= 0.5 && c2p_ratio <= 0.5 && e_c2c < b_c2c && e_c2p < b_c2p && secs < 60.0,
        format!(
            "median ratios C2C {c2c_ratio:.3} C2P {c2p_ratio:.3}; enhanced {e_c2c:.3e}/{e_c2p:.3e} vs bilateral baseline {b_c2c:.3e}/{b_c2p:.3e} (noise-adaptive bilateral {a_c2c:.3e}/{a_c2p:.3e}); {secs:.1} s"
        ),
    )
}

fn metrics_suite() -> Outcome {
    let mut r = rng(13);
    let mut worst = 0.0f64;
    for t in 0..5 {
        let cloud = |n: usize, r: &mut ChaCha8Rng| {
            PointCloud::new((0..n).map(|_| [r.random::<f64>(), r.random::<f64>(), 0.2 * r.random::<f64>()]).collect())
                .unwrap()
        };
        let a = cloud(1000 - 100 * t, &mut r);
        let b = cloud(900, &mut r);
        let rel = |x: f64, y: f64| (x - y).abs() / y.abs().max(f64::MIN_POSITIVE);
        worst = worst.max(rel(c2c(&a, &b).unwrap(), c2c_brute(&a, &b).unwrap()));
        worst = worst.max(rel(c2p(&a, &b).unwrap(), c2p_brute(&a, &b).unwrap()));
    }
    let same = PointCloud::new((0..500).map(|_| [r.random::<f64>(), r.random::<f64>(), r.random::<f64>()]).collect()).unwrap();
    let zero = c2c(&same, &same).unwrap() == 0.0 && c2p(&same, &same).unwrap() == 0.0;

    let grid: Vec<[f64; 3]> = (0..30).flat_map(|i| (0..30).map(move |j| [i as f64, j as f64, 0.0])).collect();
    let reference = PointCloud::new(grid.clone()).unwrap();
    let slid = PointCloud::new(grid.iter().map(|p| [p[0] + 0.3, p[1] + 0.2, 0.0]).collect()).unwrap();
    let (slide_c2c, slide_c2p) = (c2c(&slid, &reference).unwrap(), c2p(&slid, &reference).unwrap());
    (
        worst <= 1e-12 && zero && slide_c2p == 0.0 && slide_c2c > 0.0,
        format!("k-d tree vs brute force {worst:.1e}, identical clouds zero: {zero}, in-plane slide C2C {slide_c2c:.3} C2P {slide_c2p:.1e}"),
    )
}

fn main() -> ExitCode {
    let criteria: [Criterion; 13] = [
        ("forward model", forward_model),
        ("noise histogram", histogram),
        ("sigma estimation", sigma_estimation),
        ("noise-law fit", noise_law_fit),
        ("likelihood closed forms", closed_forms),
        ("objective gradient", gradient_check),
        ("Gershgorin step bound", gct_bound),
        ("AGD vs GD", agd_vs_gd),
        ("linearized likelihood", likelihood_approximation),
        ("graph suite", graph_suite),
        ("warp suite", warp_suite),
        ("desk end to end", end_to_end),
        ("point-cloud metrics", metrics_suite),
    ];
    let mut failed = 0;
    for (i, (name, run)) in criteria.iter().enumerate() {
        let (pass, detail) = run();
        failed += !pass as usize;
        println!("criterion {:>2} {name}: {} {detail}", i + 1, if pass { "PASS" } else { "FAIL" });
    }
    println!("{} of {} criteria passed", criteria.len() - failed, criteria.len());
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
