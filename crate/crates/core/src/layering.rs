//! Depth layers: 1-D k-means over depth with Elbow selection of the layer count,
//! a per-layer bilateral pre-filter, and per-layer noise variance.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::forward::{derive_seed, NoiseModel};
use crate::image::DepthImage;
use crate::scalar::Real;

const STAGE_KMEANS: u64 = 0x6b6d;

/// Options for layer segmentation and pre-filtering.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LayerOptions {
    pub k_max: usize,
    /// Stop adding layers when the next one improves WCSS by less than this fraction.
    pub elbow_threshold: f64,
    /// Also stop once WCSS falls below this fraction of the single-layer WCSS.
    pub min_unexplained: f64,
    /// Spatial standard deviation of the bilateral kernel (pixels).
    pub spatial_sigma: f64,
    /// Farthest-point restarts per k.
    pub restarts: usize,
    pub seed: u64,
}

impl Default for LayerOptions {
    fn default() -> Self {
        LayerOptions {
            k_max: 8,
            elbow_threshold: 0.1,
            min_unexplained: 2e-3,
            spatial_sigma: 3.0,
            restarts: 3,
            seed: 0,
        }
    }
}

/// Per-layer summary.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LayerStats<T> {
    pub mean: T,
    pub count: usize,
    /// Standard deviation of depth inside the layer.
    pub depth_sd: T,
    /// Noise variance from the noise law at `mean`, once assigned.
    pub noise_variance: Option<T>,
}

/// Layer label per pixel (`None` where the pixel is missing) plus layer statistics.
/// Labels are ordered by increasing mean depth.
#[derive(Debug, Clone, PartialEq)]
pub struct LayerMap<T> {
    height: usize,
    width: usize,
    labels: Vec<Option<usize>>,
    stats: Vec<LayerStats<T>>,
    /// WCSS for k = 1, 2, ... as evaluated by the Elbow rule.
    pub wcss: Vec<f64>,
}

impl<T: Real> LayerMap<T> {
    /// Builds a map from explicit labels, computing statistics from `img`.
    pub fn from_labels(img: &DepthImage<T>, labels: Vec<Option<usize>>) -> Result<Self> {
        if labels.len() != img.height() * img.width() {
            return Err(Error::Parameter(format!(
                "label grid has {} entries for a {}x{} image",
                labels.len(),
                img.height(),
                img.width()
            )));
        }
        for (k, (l, &m)) in labels.iter().zip(img.mask()).enumerate() {
            if l.is_some() != m {
                return Err(Error::Parameter(format!(
                    "pixel {k}: labels must cover exactly the available pixels"
                )));
            }
        }
        let n_layers = labels.iter().flatten().max().map_or(0, |&m| m + 1);
        let mut sum = vec![0.0f64; n_layers];
        let mut sq = vec![0.0f64; n_layers];
        let mut count = vec![0usize; n_layers];
        for (l, &v) in labels.iter().zip(img.values()) {
            if let Some(l) = *l {
                let v = v.as_f64();
                sum[l] += v;
                sq[l] += v * v;
                count[l] += 1;
            }
        }
        let stats = (0..n_layers)
            .map(|l| {
                let n = count[l].max(1) as f64;
                let mean = sum[l] / n;
                let var = (sq[l] / n - mean * mean).max(0.0);
                LayerStats {
                    mean: T::lit(mean),
                    count: count[l],
                    depth_sd: T::lit(var.sqrt()),
                    noise_variance: None,
                }
            })
            .collect();
        Ok(LayerMap {
            height: img.height(),
            width: img.width(),
            labels,
            stats,
            wcss: Vec::new(),
        })
    }

    pub fn height(&self) -> usize {
        self.height
    }
    pub fn width(&self) -> usize {
        self.width
    }
    pub fn labels(&self) -> &[Option<usize>] {
        &self.labels
    }
    pub fn label(&self, row: usize, col: usize) -> Option<usize> {
        self.labels[row * self.width + col]
    }
    pub fn stats(&self) -> &[LayerStats<T>] {
        &self.stats
    }
    pub fn layer_count(&self) -> usize {
        self.stats.len()
    }

    /// Noise variance of the layer at a pixel, if assigned.
    pub fn variance_at(&self, row: usize, col: usize) -> Option<T> {
        self.label(row, col).and_then(|l| self.stats[l].noise_variance)
    }
}

/// Result of 1-D k-means.
#[derive(Debug, Clone, PartialEq)]
pub struct KMeans {
    /// Ascending centroids.
    pub centroids: Vec<f64>,
    pub wcss: f64,
}

impl KMeans {
    /// Index of the nearest centroid (lower index on ties).
    pub fn assign(&self, v: f64) -> usize {
        nearest(&self.centroids, v)
    }
}

fn nearest(centroids: &[f64], v: f64) -> usize {
    // centroids ascending: the boundary between j and j+1 is their midpoint
    let mut lo = 0;
    let mut hi = centroids.len() - 1;
    while lo < hi {
        let mid = (lo + hi) / 2;
        if v > 0.5 * (centroids[mid] + centroids[mid + 1]) {
            lo = mid + 1;
        } else {
            hi = mid;
        }
    }
    lo
}

/// Sorted samples with prefix sums for O(k log n) Lloyd iterations.
struct Sorted {
    v: Vec<f64>,
    s1: Vec<f64>,
    s2: Vec<f64>,
}

impl Sorted {
    fn new(mut v: Vec<f64>) -> Self {
        v.sort_by(f64::total_cmp);
        let mut s1 = Vec::with_capacity(v.len() + 1);
        let mut s2 = Vec::with_capacity(v.len() + 1);
        let (mut a, mut b) = (0.0, 0.0);
        s1.push(0.0);
        s2.push(0.0);
        // shift by the median to keep the prefix sums well conditioned
        let shift = v[v.len() / 2];
        for &x in &v {
            a += x - shift;
            b += (x - shift) * (x - shift);
            s1.push(a);
            s2.push(b);
        }
        Sorted { v, s1, s2 }
    }

    fn shift(&self) -> f64 {
        self.v[self.v.len() / 2]
    }

    /// Index ranges of each centroid's cell.
    fn cells(&self, c: &[f64]) -> Vec<(usize, usize)> {
        let mut out = Vec::with_capacity(c.len());
        let mut start = 0;
        for j in 0..c.len() {
            let end = if j + 1 == c.len() {
                self.v.len()
            } else {
                let b = 0.5 * (c[j] + c[j + 1]);
                self.v.partition_point(|&x| x <= b)
            };
            out.push((start, end.max(start)));
            start = end.max(start);
        }
        out
    }

    fn sse(&self, (a, b): (usize, usize)) -> f64 {
        if b <= a {
            return 0.0;
        }
        let n = (b - a) as f64;
        let s = self.s1[b] - self.s1[a];
        ((self.s2[b] - self.s2[a]) - s * s / n).max(0.0)
    }

    fn mean(&self, (a, b): (usize, usize)) -> Option<f64> {
        (b > a).then(|| (self.s1[b] - self.s1[a]) / (b - a) as f64 + self.shift())
    }

    fn lloyd(&self, mut c: Vec<f64>) -> KMeans {
        c.sort_by(f64::total_cmp);
        c.dedup();
        for _ in 0..100 {
            let cells = self.cells(&c);
            let next: Vec<f64> = cells
                .iter()
                .zip(&c)
                .map(|(&cell, &old)| self.mean(cell).unwrap_or(old))
                .collect();
            let moved = next.iter().zip(&c).any(|(a, b)| a != b);
            c = next;
            if !moved {
                break;
            }
        }
        // drop empty cells
        let cells = self.cells(&c);
        let keep: Vec<f64> = cells
            .iter()
            .zip(&c)
            .filter(|(cell, _)| cell.1 > cell.0)
            .map(|(_, &x)| x)
            .collect();
        let wcss = self.cells(&keep).into_iter().map(|cell| self.sse(cell)).sum();
        KMeans {
            centroids: keep,
            wcss,
        }
    }

    fn farthest_point_init<R: Rng>(&self, k: usize, rng: &mut R) -> Vec<f64> {
        let mut c = vec![self.v[rng.random_range(0..self.v.len())]];
        let mut dist: Vec<f64> = self.v.iter().map(|&x| (x - c[0]).abs()).collect();
        while c.len() < k {
            let (i, _) = dist
                .iter()
                .enumerate()
                .fold((0, -1.0), |acc, (i, &d)| if d > acc.1 { (i, d) } else { acc });
            let p = self.v[i];
            c.push(p);
            for (d, &x) in dist.iter_mut().zip(&self.v) {
                *d = d.min((x - p).abs());
            }
        }
        c
    }

    fn quantile_init(&self, k: usize) -> Vec<f64> {
        let n = self.v.len();
        (0..k)
            .map(|j| self.v[(((j as f64 + 0.5) / k as f64) * n as f64) as usize])
            .collect()
    }

    fn split_init(&self, prev: &KMeans) -> Vec<f64> {
        let cells = self.cells(&prev.centroids);
        let (worst, _) = cells
            .iter()
            .map(|&c| self.sse(c))
            .enumerate()
            .fold((0, -1.0), |acc, (i, s)| if s > acc.1 { (i, s) } else { acc });
        let cell = cells[worst];
        let sd = (self.sse(cell) / (cell.1 - cell.0).max(1) as f64).sqrt();
        let mut c = prev.centroids.clone();
        let m = c.remove(worst);
        c.push(m - sd);
        c.push(m + sd);
        c
    }

    fn distinct(&self) -> usize {
        1 + self.v.windows(2).filter(|w| w[1] > w[0]).count()
    }
}

/// 1-D k-means: best of seeded farthest-point restarts and a quantile start.
pub fn kmeans_1d(values: &[f64], k: usize, seed: u64, restarts: usize) -> Result<KMeans> {
    if values.is_empty() {
        return Err(Error::Underdetermined("k-means needs at least one value".into()));
    }
    if k == 0 {
        return Err(Error::Parameter("k must be >= 1".into()));
    }
    let s = Sorted::new(values.to_vec());
    Ok(kmeans_sorted(&s, k, seed, restarts, None))
}

fn kmeans_sorted(s: &Sorted, k: usize, seed: u64, restarts: usize, prev: Option<&KMeans>) -> KMeans {
    let k = k.min(s.distinct());
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, STAGE_KMEANS, k as u64));
    let mut starts = vec![s.quantile_init(k)];
    for _ in 0..restarts.max(1) {
        starts.push(s.farthest_point_init(k, &mut rng));
    }
    if let Some(p) = prev.filter(|p| p.centroids.len() + 1 == k) {
        starts.push(s.split_init(p));
    }
    starts
        .into_iter()
        .map(|c| s.lloyd(c))
        .fold(None, |best: Option<KMeans>, r| match best {
            Some(b) if b.wcss <= r.wcss => Some(b),
            _ => Some(r),
        })
        .expect("at least one start")
}

/// Chooses k by the Elbow rule and returns the clustering and the WCSS curve.
pub fn elbow_kmeans(values: &[f64], opts: &LayerOptions) -> Result<(KMeans, Vec<f64>)> {
    if opts.k_max < 1 {
        return Err(Error::Parameter(format!("k_max must be >= 1, got {}", opts.k_max)));
    }
    if values.is_empty() {
        return Err(Error::Underdetermined("no available pixels to segment".into()));
    }
    let s = Sorted::new(values.to_vec());
    let mut fits: Vec<KMeans> = Vec::new();
    for k in 1..=opts.k_max {
        let r = kmeans_sorted(&s, k, opts.seed, opts.restarts, fits.last());
        let saturated = r.centroids.len() < k;
        fits.push(r);
        if saturated {
            break;
        }
    }
    let wcss: Vec<f64> = fits.iter().map(|f| f.wcss).collect();
    let total = wcss[0];
    let mut choice = fits.len() - 1;
    for k in 0..fits.len() {
        if wcss[k] <= opts.min_unexplained * total {
            choice = k;
            break;
        }
        if k + 1 < fits.len() && (wcss[k] - wcss[k + 1]) < opts.elbow_threshold * wcss[k] {
            choice = k;
            break;
        }
    }
    Ok((fits.swap_remove(choice), wcss))
}

fn segment_once<T: Real>(img: &DepthImage<T>, opts: &LayerOptions) -> Result<LayerMap<T>> {
    let values: Vec<f64> = img.available().map(|(_, _, v)| v.as_f64()).collect();
    let (km, wcss) = elbow_kmeans(&values, opts)?;
    let labels = img
        .values()
        .iter()
        .zip(img.mask())
        .map(|(&v, &m)| m.then(|| km.assign(v.as_f64())))
        .collect();
    let mut map = LayerMap::from_labels(img, labels)?;
    map.wcss = wcss;
    Ok(map)
}

/// Bilateral filter applied layer by layer: a pixel is filtered with the depth
/// standard deviation of its own layer as range parameter. Every available
/// neighbour enters the kernel.
pub fn bilateral_prefilter<T: Real>(
    img: &DepthImage<T>,
    layers: &LayerMap<T>,
    spatial_sigma: f64,
) -> Result<DepthImage<T>> {
    if layers.height != img.height() || layers.width != img.width() {
        return Err(Error::Parameter("layer map and image sizes differ".into()));
    }
    if !(spatial_sigma > 0.0) {
        return Err(Error::Parameter(format!("spatial sigma must be > 0, got {spatial_sigma}")));
    }
    let (h, w) = (img.height(), img.width());
    let radius = (3.0 * spatial_sigma).ceil() as isize;
    let spatial: Vec<f64> = (-radius..=radius)
        .map(|d| (-(d * d) as f64 / (2.0 * spatial_sigma * spatial_sigma)).exp())
        .collect();
    let vals: Vec<f64> = img.values().iter().map(|v| v.as_f64()).collect();
    let range_inv: Vec<Option<f64>> = layers
        .stats
        .iter()
        .map(|s| {
            let sd = s.depth_sd.as_f64();
            (s.count >= 2 && sd > 0.0).then(|| 1.0 / (2.0 * sd * sd))
        })
        .collect();
    let rows: Vec<Vec<T>> = (0..h)
        .into_par_iter()
        .map(|r| {
            (0..w)
                .map(|c| {
                    let k = r * w + c;
                    let Some(l) = layers.labels[k] else { return T::zero() };
                    let Some(rinv) = range_inv[l] else { return img.values()[k] };
                    let x = vals[k];
                    let (mut num, mut den) = (0.0, 0.0);
                    for dr in -radius..=radius {
                        let rr = r as isize + dr;
                        if rr < 0 || rr >= h as isize {
                            continue;
                        }
                        let wr = spatial[(dr + radius) as usize];
                        for dc in -radius..=radius {
                            let cc = c as isize + dc;
                            if cc < 0 || cc >= w as isize {
                                continue;
                            }
                            let kk = rr as usize * w + cc as usize;
                            if layers.labels[kk].is_none() {
                                continue;
                            }
                            let d = vals[kk] - x;
                            let wt = wr * spatial[(dc + radius) as usize] * (-d * d * rinv).exp();
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

/// Segments the raw image, pre-filters it layer by layer, then segments the
/// pre-filtered image again. Returns the final layers and the pre-filtered image.
pub fn layer_and_prefilter<T: Real>(
    img: &DepthImage<T>,
    opts: &LayerOptions,
) -> Result<(LayerMap<T>, DepthImage<T>)> {
    let first = segment_once(img, opts)?;
    let filtered = bilateral_prefilter(img, &first, opts.spatial_sigma)?;
    let second = segment_once(&filtered, opts)?;
    Ok((second, filtered))
}

/// Two-pass segmentation; see [`layer_and_prefilter`].
pub fn segment_layers<T: Real>(img: &DepthImage<T>, opts: &LayerOptions) -> Result<LayerMap<T>> {
    Ok(layer_and_prefilter(img, opts)?.0)
}

/// Assigns each layer the noise variance `sigma(mean)^2`.
pub fn layer_variance<T: Real>(layers: &LayerMap<T>, m: &NoiseModel<T>) -> Result<LayerMap<T>> {
    let mut out = layers.clone();
    for s in &mut out.stats {
        let sd = m.std_at(s.mean)?;
        s.noise_variance = Some(sd * sd);
    }
    Ok(out)
}

/// As [`layer_variance`], but layers nearer than `-mu` get `sigma(-mu)^2 = kappa^2`.
pub fn layer_variance_clamped<T: Real>(layers: &LayerMap<T>, m: &NoiseModel<T>) -> LayerMap<T> {
    let mut out = layers.clone();
    for s in &mut out.stats {
        if s.mean < -m.mu {
            log::warn!("layer at {} mm is nearer than the noise-law vertex {}", s.mean, -m.mu);
        }
        let sd = m.std_clamped(s.mean);
        s.noise_variance = Some(sd * sd);
    }
    out
}
