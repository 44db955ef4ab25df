//! Linearized likelihood, the per-row MAP objective and its accelerated solver.
//!
//! The noise density is replaced by its tangent line at some `n0`, so a
//! pixel's likelihood `int_{z- - x}^{z+ - x} p(n) dn` becomes affine in `x`:
//! `a_tilde x + b_tilde`. Dividing by the positive constant `w p(n0)` gives
//! `1 + s (x - c)` with `s = n0 / sigma^2` and `c = mid - n0`, which is what the
//! objective stores. Linearizing at `n0 = mid - x_tilde` makes every factor
//! equal 1 at `x_tilde`.

use crate::error::{Error, Result};
use crate::estimate::ln_gauss_interval;
use crate::linalg::power_iteration;
use crate::scalar::Real;
use crate::sparse::CsrMatrix;

/// Value and slope of the zero-mean Gaussian density at `n0`, as the tangent
/// `p(n) ~ a n + b`.
pub fn linearize_gaussian<T: Real>(n0: T, sigma: T) -> (T, T) {
    let p = gaussian_pdf(n0, sigma);
    let a = -n0 / (sigma * sigma) * p;
    (a, p - a * n0)
}

fn gaussian_pdf<T: Real>(n: T, sigma: T) -> T {
    let z = n / sigma;
    (-(z * z) / T::lit(2.0)).exp() / (sigma * T::lit((2.0 * std::f64::consts::PI).sqrt()))
}

/// Affine likelihood coefficients of one pixel: `a_tilde x + b_tilde`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PixelCoeffs<T> {
    pub a_tilde: T,
    pub b_tilde: T,
    /// Bin midpoint and the likelihood there; [`PixelCoeffs::eval`] expands
    /// around it because `a_tilde x` and `b_tilde` nearly cancel at large depths.
    pub pivot: T,
    pub at_pivot: T,
}

impl<T: Real> PixelCoeffs<T> {
    pub fn eval(&self, x: T) -> T {
        self.a_tilde * (x - self.pivot) + self.at_pivot
    }
}

/// Closed-form integral of the tangent density over the bin `[lower, upper]`
/// shifted by `-x`.
pub fn pixel_coefficients<T: Real>(lower: T, upper: T, sigma: T, n0: T) -> PixelCoeffs<T> {
    let (a, b) = linearize_gaussian(n0, sigma);
    let w = upper - lower;
    let mid = (lower + upper) / T::lit(2.0);
    PixelCoeffs {
        a_tilde: -a * w,
        b_tilde: a / T::lit(2.0) * (upper * upper - lower * lower) + b * w,
        pivot: mid,
        at_pivot: b * w,
    }
}

/// Coefficients of an other-view pixel whose depth is `H_j x + e_j`:
/// the row `a_bar_j = a_tilde H_j` and `b_bar_j = a_tilde e_j + b_tilde`.
pub fn other_view_coefficients<T: Real>(
    c: &PixelCoeffs<T>,
    h_row: impl Iterator<Item = (usize, T)>,
    e: T,
) -> (Vec<(usize, T)>, T) {
    (h_row.map(|(i, v)| (i, c.a_tilde * v)).collect(), c.a_tilde * (e - c.pivot) + c.at_pivot)
}

/// Exact Gaussian likelihood of a bin: `P(lower - x <= n < upper - x)`.
pub fn likelihood_exact<T: Real>(x: T, lower: T, upper: T, sigma: T) -> T {
    T::lit(ln_gauss_interval(((lower - x) / sigma).as_f64(), ((upper - x) / sigma).as_f64()).exp())
}

/// Linearized likelihood of a bin with the tangent taken at `n0`.
pub fn likelihood_linear<T: Real>(x: T, lower: T, upper: T, sigma: T, n0: T) -> T {
    pixel_coefficients(lower, upper, sigma, n0).eval(x)
}

/// Normalized affine factor `1 + slope (u - center)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LinearFactor<T> {
    pub slope: T,
    pub center: T,
}

impl<T: Real> LinearFactor<T> {
    /// Factor of a pixel observed in bin `[lower, upper]` with noise sd `sigma`,
    /// linearized at the depth `x_tilde` (all in mm). The tangent is taken at
    /// the centre of the integration region, `n0 = mid - x_tilde`, so the factor
    /// is 1 at `x_tilde`. It acts on `u = (x - origin) / unit`.
    pub fn new(lower: T, upper: T, sigma: T, x_tilde: T, origin: T, unit: T) -> Self {
        let mid = (lower + upper) / T::lit(2.0);
        let n0 = mid - x_tilde;
        LinearFactor {
            slope: n0 * unit / (sigma * sigma),
            center: (mid - n0 - origin) / unit,
        }
    }

    pub fn value(&self, u: T) -> T {
        T::one() + self.slope * (u - self.center)
    }
}

/// Smoothing weight `1 / sigma_p^2 = g1 sigma_bar^2 + g2`.
pub fn prior_weight<T: Real>(noise_variance: T, g1: T, g2: T) -> T {
    g1 * noise_variance + g2
}

/// Quadratic prior `u^T L u + 2 h^T u` with `L = L_l + H^T L_r H` and
/// `h = H^T L_r e`. Smoothing weights are already folded into the Laplacians.
#[derive(Debug, Clone, PartialEq)]
pub struct PriorWeights<T> {
    pub laplacian: CsrMatrix<T>,
    pub linear: Vec<T>,
}

impl<T: Real> PriorWeights<T> {
    pub fn new(
        left: &CsrMatrix<T>,
        right: Option<(&CsrMatrix<T>, &CsrMatrix<T>, &[T])>,
    ) -> Result<Self> {
        let n = left.nrows();
        match right {
            None => Ok(PriorWeights {
                laplacian: left.clone(),
                linear: vec![T::zero(); n],
            }),
            Some((lr, h, e)) => {
                if h.ncols() != n || h.nrows() != lr.nrows() || e.len() != h.nrows() {
                    return Err(Error::Parameter(format!(
                        "prior dimensions disagree: L_l {n}, H {}x{}, L_r {}, e {}",
                        h.nrows(),
                        h.ncols(),
                        lr.nrows(),
                        e.len()
                    )));
                }
                let ht = h.transpose();
                let hlh = ht.matmul(&lr.matmul(h));
                Ok(PriorWeights {
                    laplacian: left.add(&hlh),
                    linear: ht.mul_vec(&lr.mul_vec(e)),
                })
            }
        }
    }
}

/// Lipschitz bound of the prior gradient, `2 lambda_max(L)` by Gershgorin.
pub fn gct_step_bound<T: Real>(prior: &PriorWeights<T>) -> T {
    T::lit(2.0) * prior.laplacian.gershgorin_max().max(T::zero())
}

/// Differentiable objective with an open domain.
pub trait SmoothObjective<T: Real> {
    fn dim(&self) -> usize;
    /// `None` outside the domain.
    fn value(&self, x: &[T]) -> Option<T>;
    fn gradient(&self, x: &[T], out: &mut [T]);
}

/// Per-row MAP objective
/// `-sum ln(1 + s_i (u_i - c_i)) - sum ln(1 + s_j ((H u)_j - c_j)) + u^T L u + 2 h^T u`.
#[derive(Debug, Clone, PartialEq)]
pub struct MapObjective<T> {
    pub own: Vec<LinearFactor<T>>,
    pub other: Vec<LinearFactor<T>>,
    pub warp: CsrMatrix<T>,
    pub prior: PriorWeights<T>,
    /// Factors below this are clamped before the logarithm.
    pub floor: T,
}

impl<T: Real> MapObjective<T> {
    pub fn new(
        own: Vec<LinearFactor<T>>,
        other: Vec<LinearFactor<T>>,
        warp: CsrMatrix<T>,
        prior: PriorWeights<T>,
    ) -> Result<Self> {
        let n = own.len();
        if prior.laplacian.nrows() != n || prior.linear.len() != n || warp.ncols() != n || warp.nrows() != other.len() {
            return Err(Error::Parameter("objective dimensions disagree".into()));
        }
        Ok(MapObjective {
            own,
            other,
            warp,
            prior,
            floor: T::lit(1e-12),
        })
    }

    fn other_args(&self, u: &[T]) -> Vec<T> {
        self.warp.mul_vec(u)
    }

    /// Smallest factor value at `u`.
    pub fn min_factor(&self, u: &[T]) -> T {
        let own = self.own.iter().zip(u).map(|(f, &v)| f.value(v));
        let hu = self.other_args(u);
        let other = self.other.iter().zip(&hu).map(|(f, &v)| f.value(v));
        own.chain(other).fold(T::infinity(), T::min)
    }

    /// Spectral norm of the Hessian of the log terms at `u` (power iteration).
    pub fn log_hessian_norm(&self, u: &[T]) -> T {
        let d_own: Vec<T> = self
            .own
            .iter()
            .zip(u)
            .map(|(f, &v)| {
                let val = f.value(v).max(self.floor);
                f.slope * f.slope / (val * val)
            })
            .collect();
        let hu = self.other_args(u);
        let d_other: Vec<T> = self
            .other
            .iter()
            .zip(&hu)
            .map(|(f, &v)| {
                let val = f.value(v).max(self.floor);
                f.slope * f.slope / (val * val)
            })
            .collect();
        power_iteration(
            |x| {
                let mut y: Vec<T> = x.iter().zip(&d_own).map(|(&a, &b)| a * b).collect();
                let hx: Vec<T> = self.warp.mul_vec(x).iter().zip(&d_other).map(|(&a, &b)| a * b).collect();
                for (a, b) in y.iter_mut().zip(self.warp.tr_mul_vec(&hx)) {
                    *a += b;
                }
                y
            },
            u.len(),
            30,
        )
    }

    /// Step bound at `u`: the prior bound, inflated by `1 + r` when the log-term
    /// curvature `r` times the prior bound exceeds a tenth of it.
    pub fn step_bound(&self, u: &[T]) -> T {
        let prior = gct_step_bound(&self.prior);
        let log = self.log_hessian_norm(u);
        if prior <= T::zero() {
            return log.max(T::min_positive_value());
        }
        let ratio = log / prior;
        if ratio > T::lit(0.1) {
            prior * (T::one() + ratio)
        } else {
            prior
        }
    }
}

impl<T: Real> SmoothObjective<T> for MapObjective<T> {
    fn dim(&self) -> usize {
        self.own.len()
    }

    fn value(&self, u: &[T]) -> Option<T> {
        let mut acc = T::zero();
        for (f, &v) in self.own.iter().zip(u) {
            let val = f.value(v);
            if !(val > T::zero()) {
                return None;
            }
            acc -= val.max(self.floor).ln();
        }
        let hu = self.other_args(u);
        for (f, &v) in self.other.iter().zip(&hu) {
            let val = f.value(v);
            if !(val > T::zero()) {
                return None;
            }
            acc -= val.max(self.floor).ln();
        }
        let lu = self.prior.laplacian.mul_vec(u);
        for ((&a, &b), &h) in u.iter().zip(&lu).zip(&self.prior.linear) {
            acc += a * b + T::lit(2.0) * h * a;
        }
        acc.is_finite().then_some(acc)
    }

    fn gradient(&self, u: &[T], out: &mut [T]) {
        let lu = self.prior.laplacian.mul_vec(u);
        for (i, f) in self.own.iter().enumerate() {
            let val = f.value(u[i]).max(self.floor);
            out[i] = T::lit(2.0) * (lu[i] + self.prior.linear[i]) - f.slope / val;
        }
        let hu = self.other_args(u);
        let r: Vec<T> = self
            .other
            .iter()
            .zip(&hu)
            .map(|(f, &v)| f.slope / f.value(v).max(self.floor))
            .collect();
        for (o, v) in out.iter_mut().zip(self.warp.tr_mul_vec(&r)) {
            *o -= v;
        }
    }
}

/// Box constraints `lower <= x <= upper`.
#[derive(Debug, Clone, PartialEq)]
pub struct Bounds<T> {
    pub lower: Vec<T>,
    pub upper: Vec<T>,
}

impl<T: Real> Bounds<T> {
    fn project(&self, x: &mut [T]) {
        for ((v, &lo), &hi) in x.iter_mut().zip(&self.lower).zip(&self.upper) {
            *v = v.max(lo).min(hi);
        }
    }
}

/// Solver settings.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SolverOptions {
    /// Stop when the squared norm of the (projected) gradient falls below this.
    pub eps: f64,
    pub max_iter: usize,
    /// Restart the momentum whenever the objective increases.
    pub adaptive_restart: bool,
    /// When set, the local smoothness estimate starts at `beta` and is halved
    /// after every step accepted without backtracking, but never below this.
    pub min_step_bound: Option<f64>,
}

impl Default for SolverOptions {
    fn default() -> Self {
        SolverOptions {
            eps: 1e-8,
            max_iter: 2000,
            adaptive_restart: true,
            min_step_bound: None,
        }
    }
}

/// Outcome of [`agd_solve`] or [`gd_solve`].
#[derive(Debug, Clone, PartialEq)]
pub struct SolveReport<T> {
    /// Best iterate found.
    pub x: Vec<T>,
    pub value: T,
    pub grad_norm_sq: T,
    /// Gradient evaluations.
    pub iterations: usize,
    pub converged: bool,
    /// Step-size halvings forced by the domain or a missed decrease.
    pub backtracks: usize,
    pub restarts: usize,
}

struct Stepper<'a, T: Real, F: SmoothObjective<T>> {
    f: &'a F,
    beta: T,
    /// Current smoothness estimate and its floor when it may shrink.
    local: T,
    floor: Option<T>,
    bounds: Option<&'a Bounds<T>>,
    backtracks: usize,
}

impl<'a, T: Real, F: SmoothObjective<T>> Stepper<'a, T, F> {
    fn new(f: &'a F, beta: T, bounds: Option<&'a Bounds<T>>, opts: &SolverOptions) -> Self {
        Stepper {
            f,
            beta,
            local: beta,
            floor: opts.min_step_bound.map(|b| T::lit(b).min(beta)).filter(|b| *b > T::zero()),
            bounds,
            backtracks: 0,
        }
    }

    /// Projected gradient step from `x` with value `fx` and gradient `g`.
    /// Returns the new point, its value and the squared gradient mapping.
    fn step(&mut self, x: &[T], fx: T, g: &[T]) -> Option<(Vec<T>, T, T)> {
        let mut l = if self.floor.is_some() { self.local } else { self.beta };
        let mut mapping = None;
        for attempt in 0..200 {
            let mut y: Vec<T> = x.iter().zip(g).map(|(&a, &b)| a - b / l).collect();
            if let Some(b) = self.bounds {
                b.project(&mut y);
            }
            let gm: T = x.iter().zip(&y).map(|(&a, &b)| (a - b) * l).map(|v| v * v).sum();
            if mapping.is_none() {
                mapping = Some(gm);
            }
            if let Some(fy) = self.f.value(&y) {
                // sufficient decrease for an L-smooth function
                if fy <= fx - gm / (T::lit(2.0) * l) + T::lit(1e-12) * fx.abs() {
                    if let Some(floor) = self.floor {
                        self.local = if attempt == 0 { (l / T::lit(2.0)).max(floor) } else { l };
                    }
                    return Some((y, fy, mapping.expect("set above")));
                }
            }
            self.backtracks += 1;
            l *= T::lit(2.0);
        }
        None
    }
}

fn check_start<T: Real, F: SmoothObjective<T>>(f: &F, x0: &[T], beta: T, bounds: Option<&Bounds<T>>) -> Result<(Vec<T>, T)> {
    if x0.len() != f.dim() {
        return Err(Error::Parameter(format!("start has {} entries, objective {}", x0.len(), f.dim())));
    }
    if !(beta > T::zero()) || !beta.is_finite() {
        return Err(Error::Numeric(format!("step bound must be positive and finite, got {beta}")));
    }
    let mut x = x0.to_vec();
    if let Some(b) = bounds {
        b.project(&mut x);
    }
    let fx = f
        .value(&x)
        .ok_or_else(|| Error::Numeric("starting point lies outside the objective's domain".into()))?;
    Ok((x, fx))
}

/// Accelerated gradient descent with step `1 / beta`, backtracking when a step
/// leaves the domain or fails to decrease the objective. With
/// [`SolverOptions::min_step_bound`] the step may grow again after easy steps.
pub fn agd_solve<T: Real, F: SmoothObjective<T>>(
    f: &F,
    x0: &[T],
    beta: T,
    bounds: Option<&Bounds<T>>,
    opts: &SolverOptions,
) -> Result<SolveReport<T>> {
    let (mut x, mut fx) = check_start(f, x0, beta, bounds)?;
    let mut st = Stepper::new(f, beta, bounds, opts);
    let n = x.len();
    let mut g = vec![T::zero(); n];
    let mut c_prev = x.clone();
    let mut f_prev = fx;
    let mut eta = T::one();
    let mut best = (x.clone(), fx, T::infinity());
    let mut restarts = 0;
    let eps = T::lit(opts.eps);
    let mut iterations = 0;
    let mut converged = false;
    while iterations < opts.max_iter {
        f.gradient(&x, &mut g);
        iterations += 1;
        let Some((c, fc, gm)) = st.step(&x, fx, &g) else {
            break;
        };
        if fx <= best.1 {
            best = (x.clone(), fx, gm);
        }
        if gm < eps {
            best = (x.clone(), fx, gm);
            converged = true;
            break;
        }
        if opts.adaptive_restart && fc > f_prev {
            eta = T::one();
            restarts += 1;
        }
        let eta_next = (T::one() + (T::one() + T::lit(4.0) * eta * eta).sqrt()) / T::lit(2.0);
        let gamma = (eta - T::one()) / eta_next;
        let mut y: Vec<T> = c.iter().zip(&c_prev).map(|(&a, &b)| a + gamma * (a - b)).collect();
        if let Some(b) = bounds {
            b.project(&mut y);
        }
        match f.value(&y) {
            Some(fy) => {
                x = y;
                fx = fy;
                eta = eta_next;
            }
            None => {
                x = c.clone();
                fx = fc;
                eta = T::one();
                restarts += 1;
            }
        }
        c_prev = c;
        f_prev = fc;
        if fc <= best.1 {
            best = (c_prev.clone(), fc, T::infinity());
        }
    }
    finish(f, best, iterations, converged, st.backtracks, restarts, beta, bounds)
}

/// Plain projected gradient descent with the same step rule as [`agd_solve`].
pub fn gd_solve<T: Real, F: SmoothObjective<T>>(
    f: &F,
    x0: &[T],
    beta: T,
    bounds: Option<&Bounds<T>>,
    opts: &SolverOptions,
) -> Result<SolveReport<T>> {
    let (mut x, mut fx) = check_start(f, x0, beta, bounds)?;
    let mut st = Stepper::new(f, beta, bounds, opts);
    let mut g = vec![T::zero(); x.len()];
    let eps = T::lit(opts.eps);
    let mut iterations = 0;
    let mut converged = false;
    while iterations < opts.max_iter {
        f.gradient(&x, &mut g);
        iterations += 1;
        let Some((y, fy, gm)) = st.step(&x, fx, &g) else {
            break;
        };
        if gm < eps {
            converged = true;
            break;
        }
        x = y;
        fx = fy;
    }
    finish(f, (x, fx, T::infinity()), iterations, converged, st.backtracks, 0, beta, bounds)
}

#[allow(clippy::too_many_arguments)]
fn finish<T: Real, F: SmoothObjective<T>>(
    f: &F,
    best: (Vec<T>, T, T),
    iterations: usize,
    converged: bool,
    backtracks: usize,
    restarts: usize,
    beta: T,
    bounds: Option<&Bounds<T>>,
) -> Result<SolveReport<T>> {
    let (x, value, mut gm) = best;
    if !gm.is_finite() {
        let mut g = vec![T::zero(); x.len()];
        f.gradient(&x, &mut g);
        let mut y: Vec<T> = x.iter().zip(&g).map(|(&a, &b)| a - b / beta).collect();
        if let Some(b) = bounds {
            b.project(&mut y);
        }
        gm = x.iter().zip(&y).map(|(&a, &b)| (a - b) * beta).map(|v| v * v).sum();
    }
    if !converged {
        log::debug!("solver stopped after {iterations} iterations with squared gradient {gm}");
    }
    if x.iter().any(|v| !v.is_finite()) || !value.is_finite() {
        return Err(Error::Numeric("solver produced a non-finite iterate".into()));
    }
    Ok(SolveReport {
        x,
        value,
        grad_norm_sq: gm,
        iterations,
        converged,
        backtracks,
        restarts,
    })
}
