//! Per-pixel features, Mahalanobis metric learning and sparse row Laplacians.

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::image::DepthImage;
use crate::linalg::symmetric_eigen;
use crate::scalar::Real;
use crate::sparse::CsrMatrix;

/// Feature dimension: normal (3), depth (1), grid location (2).
pub const FEATURE_DIM: usize = 6;

/// Feature of one pixel: unit surface normal, normalized depth and normalized
/// grid location.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FeatureVector<T> {
    pub normal: [T; 3],
    pub depth: T,
    pub location: [T; 2],
}

impl<T: Real> FeatureVector<T> {
    pub fn new(normal: [T; 3], depth: T, location: [T; 2]) -> Result<Self> {
        let f = FeatureVector {
            normal,
            depth,
            location,
        };
        let norm = normal.iter().map(|&v| v * v).sum::<T>().sqrt();
        if (norm - T::one()).abs() > T::lit(1e-6) {
            return Err(Error::Parameter(format!("normal must be unit length, has norm {norm}")));
        }
        if f.as_array().iter().any(|v| !v.is_finite()) {
            return Err(Error::Numeric("non-finite feature".into()));
        }
        Ok(f)
    }

    pub fn as_array(&self) -> [T; FEATURE_DIM] {
        [
            self.normal[0],
            self.normal[1],
            self.normal[2],
            self.depth,
            self.location[0],
            self.location[1],
        ]
    }

    fn diff(&self, other: &Self) -> [T; FEATURE_DIM] {
        let (a, b) = (self.as_array(), other.as_array());
        std::array::from_fn(|k| a[k] - b[k])
    }
}

/// Symmetric positive definite 6x6 metric.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MetricMatrix<T>([[T; FEATURE_DIM]; FEATURE_DIM]);

impl<T: Real> MetricMatrix<T> {
    /// Validates symmetry and positive definiteness (smallest eigenvalue above
    /// `1e-8 * trace / 6`).
    pub fn new(m: [[T; FEATURE_DIM]; FEATURE_DIM]) -> Result<Self> {
        let scale = m.iter().flatten().fold(T::zero(), |a, &v| a.max(v.abs()));
        for i in 0..FEATURE_DIM {
            for j in 0..i {
                if (m[i][j] - m[j][i]).abs() > T::lit(1e-12) * scale.max(T::one()) {
                    return Err(Error::Numeric(format!("metric not symmetric at ({i}, {j})")));
                }
            }
        }
        if m.iter().flatten().any(|v| !v.is_finite()) {
            return Err(Error::Numeric("metric has non-finite entries".into()));
        }
        let min = min_eigenvalue(&m);
        let floor = pd_floor(&m);
        if !(min > floor) {
            return Err(Error::Numeric(format!(
                "metric not positive definite: smallest eigenvalue {min} <= {floor}"
            )));
        }
        Ok(MetricMatrix(m))
    }

    pub fn identity() -> Self {
        let mut m = [[T::zero(); FEATURE_DIM]; FEATURE_DIM];
        for (i, row) in m.iter_mut().enumerate() {
            row[i] = T::one();
        }
        MetricMatrix(m)
    }

    pub fn entries(&self) -> &[[T; FEATURE_DIM]; FEATURE_DIM] {
        &self.0
    }

    pub fn trace(&self) -> T {
        (0..FEATURE_DIM).map(|i| self.0[i][i]).sum()
    }

    pub fn min_eigenvalue(&self) -> T {
        min_eigenvalue(&self.0)
    }

    /// `d^T M d`.
    fn quad(&self, d: &[T; FEATURE_DIM]) -> T {
        quad(&self.0, d)
    }
}

fn quad<T: Real>(m: &[[T; FEATURE_DIM]; FEATURE_DIM], d: &[T; FEATURE_DIM]) -> T {
    let mut s = T::zero();
    for i in 0..FEATURE_DIM {
        let mut r = T::zero();
        for j in 0..FEATURE_DIM {
            r += m[i][j] * d[j];
        }
        s += d[i] * r;
    }
    s
}

fn min_eigenvalue<T: Real>(m: &[[T; FEATURE_DIM]; FEATURE_DIM]) -> T {
    let flat: Vec<T> = m.iter().flatten().copied().collect();
    symmetric_eigen(&flat, FEATURE_DIM).0[0]
}

fn pd_floor<T: Real>(m: &[[T; FEATURE_DIM]; FEATURE_DIM]) -> T {
    let tr: T = (0..FEATURE_DIM).map(|i| m[i][i]).sum();
    T::lit(1e-8) * tr / T::lit(FEATURE_DIM as f64)
}

/// Mahalanobis distance `(fi - fj)^T M (fi - fj)`.
pub fn feature_distance<T: Real>(fi: &FeatureVector<T>, fj: &FeatureVector<T>, m: &MetricMatrix<T>) -> T {
    m.quad(&fi.diff(fj)).max(T::zero())
}

/// A surface normal and whether it came from the degenerate-neighbourhood fallback.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NormalEstimate<T> {
    pub normal: [T; 3],
    pub degenerate: bool,
}

/// Unit normal of the least-squares plane through `points`, oriented toward a
/// camera at the origin looking down +z (so `n_z <= 0`). Falls back to
/// `(0, 0, -1)` when fewer than three points or they are collinear.
pub fn surface_normal<T: Real>(points: &[[T; 3]]) -> NormalEstimate<T> {
    let fallback = NormalEstimate {
        normal: [T::zero(), T::zero(), -T::one()],
        degenerate: true,
    };
    if points.len() < 3 {
        return fallback;
    }
    let n = T::from_usize_lossy(points.len());
    let mut c = [T::zero(); 3];
    for p in points {
        for k in 0..3 {
            c[k] += p[k];
        }
    }
    for v in &mut c {
        *v /= n;
    }
    let mut cov = [T::zero(); 9];
    for p in points {
        let d = [p[0] - c[0], p[1] - c[1], p[2] - c[2]];
        for i in 0..3 {
            for j in 0..3 {
                cov[i * 3 + j] += d[i] * d[j];
            }
        }
    }
    let (vals, vecs) = symmetric_eigen(&cov, 3);
    if !(vals[2] > T::zero()) || vals[1] <= T::lit(1e-12) * vals[2] {
        return fallback;
    }
    let mut normal = [vecs[0], vecs[3], vecs[6]];
    let norm = normal.iter().map(|&v| v * v).sum::<T>().sqrt();
    for v in &mut normal {
        *v /= norm;
    }
    let facing = if normal[2] != T::zero() {
        normal[2] > T::zero()
    } else {
        normal[0] * c[0] + normal[1] * c[1] > T::zero()
    };
    if facing {
        for v in &mut normal {
            *v = -*v;
        }
    }
    NormalEstimate {
        normal,
        degenerate: false,
    }
}

/// Back-projects pixel `(row, col)` at depth `z` through the image's pinhole model.
pub fn back_project<T: Real>(img: &DepthImage<T>, row: usize, col: usize, z: T) -> [T; 3] {
    let (cx, cy) = img.intrinsics.principal_point(img.width(), img.height());
    let f = img.intrinsics.focal;
    [
        (T::from_usize_lossy(col) - cx) * z / f,
        (T::from_usize_lossy(row) - cy) * z / f,
        z,
    ]
}

/// Normal at every available pixel from the pixel and its available 8-connected neighbours.
pub fn image_normals<T: Real>(img: &DepthImage<T>) -> Vec<Option<NormalEstimate<T>>> {
    let (h, w) = (img.height(), img.width());
    let rows: Vec<Vec<Option<NormalEstimate<T>>>> = (0..h)
        .into_par_iter()
        .map(|r| {
            (0..w)
                .map(|c| {
                    img.get(r, c)?;
                    let mut pts = Vec::with_capacity(9);
                    for dr in -1isize..=1 {
                        for dc in -1isize..=1 {
                            let (rr, cc) = (r as isize + dr, c as isize + dc);
                            if rr < 0 || cc < 0 || rr >= h as isize || cc >= w as isize {
                                continue;
                            }
                            if let Some(z) = img.get(rr as usize, cc as usize) {
                                pts.push(back_project(img, rr as usize, cc as usize, z));
                            }
                        }
                    }
                    Some(surface_normal(&pts))
                })
                .collect()
        })
        .collect();
    rows.concat()
}

/// Features of every available pixel: normal, `depth / x_max`, `row / width`, `col / width`.
pub fn image_features<T: Real>(img: &DepthImage<T>, x_max: T) -> Vec<Option<FeatureVector<T>>> {
    let w = T::from_usize_lossy(img.width());
    image_normals(img)
        .into_iter()
        .enumerate()
        .map(|(k, n)| {
            let n = n?;
            let (r, c) = (k / img.width(), k % img.width());
            Some(FeatureVector {
                normal: n.normal,
                depth: img.values()[k] / x_max,
                location: [T::from_usize_lossy(r) / w, T::from_usize_lossy(c) / w],
            })
        })
        .collect()
}

/// Sparse graph over the available pixels of one row segment.
#[derive(Debug, Clone, PartialEq)]
pub struct RowGraph<T> {
    /// Grid column of each node, ascending.
    pub columns: Vec<usize>,
    /// `(a, b, u_ab)` with `a < b` node indices.
    pub edges: Vec<(usize, usize, T)>,
    pub laplacian: CsrMatrix<T>,
    /// Fewer than two nodes, so no edges.
    pub empty: bool,
}

/// Node pairs `(a, a+1)` and `(a, a+2)`: each node joins its two nearest
/// available neighbours on either side.
pub fn row_edges(n: usize) -> impl Iterator<Item = (usize, usize)> {
    (0..n).flat_map(move |a| (a + 1..(a + 3).min(n)).map(move |b| (a, b)))
}

/// Builds `L = D - W` with `u_ab = exp(-d_ab)`.
pub fn build_row_laplacian<T: Real>(
    columns: &[usize],
    features: &[FeatureVector<T>],
    m: &MetricMatrix<T>,
) -> Result<RowGraph<T>> {
    if columns.len() != features.len() {
        return Err(Error::Parameter(format!(
            "{} columns but {} features",
            columns.len(),
            features.len()
        )));
    }
    let n = columns.len();
    let edges: Vec<(usize, usize, T)> = row_edges(n)
        .map(|(a, b)| (a, b, (-feature_distance(&features[a], &features[b], m)).exp()))
        .collect();
    Ok(RowGraph {
        columns: columns.to_vec(),
        laplacian: laplacian_from_edges(n, &edges),
        edges,
        empty: n < 2,
    })
}

/// Splits a row into runs where consecutive values differ by at most `gap`.
/// Returns a run id per node.
pub fn depth_segments<T: Real>(values: &[T], gap: T) -> Vec<usize> {
    let mut id = 0;
    values
        .iter()
        .enumerate()
        .map(|(k, &v)| {
            if k > 0 && (v - values[k - 1]).abs() > gap {
                id += 1;
            }
            id
        })
        .collect()
}

/// Row graph whose edges only join nodes of the same segment. The weight of
/// edge `(a, b)` is `sqrt(scale_a scale_b) exp(-d_ab)`.
pub fn build_weighted_row_laplacian<T: Real>(
    columns: &[usize],
    features: &[FeatureVector<T>],
    scale: &[T],
    segments: &[usize],
    m: &MetricMatrix<T>,
) -> Result<RowGraph<T>> {
    let n = columns.len();
    if features.len() != n || scale.len() != n || segments.len() != n {
        return Err(Error::Parameter(format!(
            "{n} columns, {} features, {} scales, {} segment ids",
            features.len(),
            scale.len(),
            segments.len()
        )));
    }
    if let Some(s) = scale.iter().find(|s| !(**s > T::zero())) {
        return Err(Error::Parameter(format!("edge scale {s} is not positive")));
    }
    let edges: Vec<(usize, usize, T)> = row_edges(n)
        .filter(|&(a, b)| segments[a] == segments[b])
        .map(|(a, b)| (a, b, (scale[a] * scale[b]).sqrt() * (-feature_distance(&features[a], &features[b], m)).exp()))
        .collect();
    Ok(RowGraph {
        columns: columns.to_vec(),
        laplacian: laplacian_from_edges(n, &edges),
        empty: edges.is_empty(),
        edges,
    })
}

pub fn laplacian_from_edges<T: Real>(n: usize, edges: &[(usize, usize, T)]) -> CsrMatrix<T> {
    let mut trips = Vec::with_capacity(4 * edges.len() + n);
    for i in 0..n {
        trips.push((i, i, T::zero()));
    }
    for &(a, b, u) in edges {
        trips.push((a, a, u));
        trips.push((b, b, u));
        trips.push((a, b, -u));
        trips.push((b, a, -u));
    }
    CsrMatrix::from_triplets(n, n, trips)
}

/// One training row: enhanced depths and features of its available pixels, in column order.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainingRow<T> {
    pub values: Vec<T>,
    pub features: Vec<FeatureVector<T>>,
}

/// Options for [`learn_metric`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MetricOptions {
    pub max_iter: usize,
    /// Stop when a full diagonal + off-diagonal cycle lowers the objective by less than this fraction.
    pub rel_tol: f64,
}

impl Default for MetricOptions {
    fn default() -> Self {
        MetricOptions {
            max_iter: 100,
            rel_tol: 1e-8,
        }
    }
}

/// Learned metric and solver trace.
#[derive(Debug, Clone, PartialEq)]
pub struct MetricFit<T> {
    pub metric: MetricMatrix<T>,
    /// Objective after each accepted step, starting at the initial metric.
    pub history: Vec<T>,
    pub iterations: usize,
    /// All signal differences vanish, so the objective does not depend on `M`.
    pub identity_fallback: bool,
}

struct Edges<T> {
    delta: Vec<[T; FEATURE_DIM]>,
    weight: Vec<T>,
}

impl<T: Real> Edges<T> {
    fn objective(&self, m: &[[T; FEATURE_DIM]; FEATURE_DIM]) -> T {
        self.delta
            .iter()
            .zip(&self.weight)
            .map(|(d, &w)| w * (-quad(m, d)).exp())
            .sum()
    }

    /// `d f / d M` (symmetric): `-sum w u d d^T`.
    fn gradient(&self, m: &[[T; FEATURE_DIM]; FEATURE_DIM]) -> [[T; FEATURE_DIM]; FEATURE_DIM] {
        let mut g = [[T::zero(); FEATURE_DIM]; FEATURE_DIM];
        for (d, &w) in self.delta.iter().zip(&self.weight) {
            let s = -w * (-quad(m, d)).exp();
            for i in 0..FEATURE_DIM {
                for j in i..FEATURE_DIM {
                    g[i][j] += s * d[i] * d[j];
                }
            }
        }
        // mirror so the gradient, and every iterate, stays exactly symmetric
        for i in 0..FEATURE_DIM {
            for j in 0..i {
                g[i][j] = g[j][i];
            }
        }
        g
    }
}

/// Strict diagonal dominance with margin keeps `M` positive definite.
fn dominance_ok<T: Real>(m: &[[T; FEATURE_DIM]; FEATURE_DIM], eps: T) -> bool {
    (0..FEATURE_DIM).all(|i| {
        let off: T = (0..FEATURE_DIM).filter(|&j| j != i).map(|j| m[i][j].abs()).sum();
        m[i][i] - off >= eps
    })
}

/// Shrinks off-diagonal entries until every row is diagonally dominant with margin `eps`.
fn project_dominance<T: Real>(m: &mut [[T; FEATURE_DIM]; FEATURE_DIM], eps: T) {
    let factor: [T; FEATURE_DIM] = std::array::from_fn(|i| {
        let off: T = (0..FEATURE_DIM).filter(|&j| j != i).map(|j| m[i][j].abs()).sum();
        let room = (m[i][i] - eps).max(T::zero());
        if off > room {
            room / off
        } else {
            T::one()
        }
    });
    for i in 0..FEATURE_DIM {
        for j in 0..FEATURE_DIM {
            if i != j {
                m[i][j] *= factor[i].min(factor[j]);
            }
        }
    }
}

/// Learns `M` minimizing `sum_k x_k^T L_k(M) x_k` subject to `trace(M) = 6` and
/// diagonal dominance, alternating a diagonal step and an off-diagonal step,
/// each with a backtracking line search that only accepts decreases.
pub fn learn_metric<T: Real>(rows: &[TrainingRow<T>], opts: &MetricOptions) -> Result<MetricFit<T>> {
    learn_metric_from(rows, &MetricMatrix::identity(), opts)
}

/// [`learn_metric`] started from `init`, which must have trace 6 and be
/// diagonally dominant.
pub fn learn_metric_from<T: Real>(
    rows: &[TrainingRow<T>],
    init: &MetricMatrix<T>,
    opts: &MetricOptions,
) -> Result<MetricFit<T>> {
    if rows.is_empty() {
        return Err(Error::Underdetermined("metric learning needs at least one row".into()));
    }
    let mut edges = Edges {
        delta: Vec::new(),
        weight: Vec::new(),
    };
    for row in rows {
        if row.values.len() != row.features.len() {
            return Err(Error::Parameter("training row values and features differ in length".into()));
        }
        for (a, b) in row_edges(row.values.len()) {
            let dx = row.values[a] - row.values[b];
            if dx != T::zero() {
                edges.delta.push(row.features[a].diff(&row.features[b]));
                edges.weight.push(dx * dx);
            }
        }
    }
    let mut m = *init.entries();
    let six = T::from_usize_lossy(FEATURE_DIM);
    if (init.trace() - six).abs() > T::lit(1e-6) * six {
        return Err(Error::Parameter(format!("initial metric has trace {} (expected 6)", init.trace())));
    }
    if !dominance_ok(&m, T::zero()) {
        return Err(Error::Parameter("initial metric is not diagonally dominant".into()));
    }
    let mut f = edges.objective(&m);
    let mut history = vec![f];
    let zero_grad = {
        let g = edges.gradient(&m);
        g.iter().flatten().all(|&v| v == T::zero())
    };
    if edges.weight.is_empty() || zero_grad {
        log::debug!("metric objective is flat; using the identity metric");
        return Ok(MetricFit {
            metric: MetricMatrix::identity(),
            history,
            iterations: 0,
            identity_fallback: true,
        });
    }
    let eps = pd_floor(&m);
    let mut t_diag = T::one();
    let mut t_off = T::one();
    let mut iterations = 0;
    for _ in 0..opts.max_iter {
        iterations += 1;
        let start = f;

        // diagonal block: trace-preserving descent direction
        let g = edges.gradient(&m);
        // entries resting on the floor that would move further down stay fixed
        let floor = T::lit(2.0) * eps;
        let mut free = [true; FEATURE_DIM];
        let mut p = [T::zero(); FEATURE_DIM];
        loop {
            let n_free = free.iter().filter(|&&b| b).count();
            if n_free == 0 {
                break;
            }
            let mean = (0..FEATURE_DIM).filter(|&i| free[i]).map(|i| g[i][i]).sum::<T>()
                / T::from_usize_lossy(n_free);
            p = std::array::from_fn(|i| if free[i] { g[i][i] - mean } else { T::zero() });
            let pinned: Vec<usize> = (0..FEATURE_DIM)
                .filter(|&i| free[i] && p[i] > T::zero() && m[i][i] <= floor * T::lit(1.0 + 1e-6))
                .collect();
            if pinned.is_empty() {
                break;
            }
            for i in pinned {
                free[i] = false;
            }
        }
        let pp: T = p.iter().map(|&v| v * v).sum();
        if pp > T::zero() {
            // largest step keeping every diagonal entry above the margin
            let t_max = (0..FEATURE_DIM)
                .filter(|&i| p[i] > T::zero())
                .map(|i| (m[i][i] - floor) / p[i])
                .fold(T::infinity(), T::min);
            let mut t = (t_diag * T::lit(4.0)).min(t_max);
            for _ in 0..60 {
                let mut trial = m;
                for i in 0..FEATURE_DIM {
                    trial[i][i] -= t * p[i];
                }
                project_dominance(&mut trial, eps);
                let ft = edges.objective(&trial);
                if ft < f {
                    m = trial;
                    f = ft;
                    history.push(f);
                    t_diag = t;
                    break;
                }
                t *= T::lit(0.5);
            }
        }

        // off-diagonal block: projected gradient
        let g = edges.gradient(&m);
        let mut gg = T::zero();
        for i in 0..FEATURE_DIM {
            for j in 0..FEATURE_DIM {
                if i != j {
                    gg += g[i][j] * g[i][j];
                }
            }
        }
        if gg > T::zero() {
            let gmax = g.iter().flatten().fold(T::zero(), |a, &v| a.max(v.abs()));
            let mut t = (t_off * T::lit(4.0)).min(T::one() / gmax);
            for _ in 0..60 {
                let mut trial = m;
                for i in 0..FEATURE_DIM {
                    for j in 0..FEATURE_DIM {
                        if i != j {
                            // the shared entry m_ij = m_ji receives g_ij + g_ji
                            trial[i][j] -= t * T::lit(2.0) * g[i][j];
                        }
                    }
                }
                project_dominance(&mut trial, eps);
                let ft = edges.objective(&trial);
                if ft < f {
                    m = trial;
                    f = ft;
                    history.push(f);
                    t_off = t;
                    break;
                }
                t *= T::lit(0.5);
            }
        }

        let min = min_eigenvalue(&m);
        if !(min > eps) {
            return Err(Error::Numeric(format!(
                "metric lost positive definiteness (smallest eigenvalue {min})"
            )));
        }
        if start - f <= T::lit(opts.rel_tol) * start.abs() {
            break;
        }
    }
    Ok(MetricFit {
        metric: MetricMatrix::new(m)?,
        history,
        iterations,
        identity_fallback: false,
    })
}

/// Graph Laplacian regularizer `x^T L x`.
pub fn glr<T: Real>(x: &[T], l: &CsrMatrix<T>) -> T {
    l.quad_form(x)
}
