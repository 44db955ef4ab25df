//! Sensor image-formation model: log-domain non-uniform quantization and
//! signal-dependent additive noise.
//!
//! The quantizer maps a depth `x` in `[x_min, x_max)` to a bin index
//!
//! ```text
//! R(x) = round(phi * ln(theta * x + rho) - R0 + 0.5),   R0 = phi * ln(theta * x_min + rho)
//! ```
//!
//! and reconstructs `Q(x) = (exp((R(x) + R0 - 0.5) / phi) - rho) / theta`. Bin `k`
//! covers `[z-(k), z+(k))` with `z-(k) = (exp((k + R0 - 1) / phi) - rho) / theta` and
//! `z+(k) = z-(k + 1)`. Rounding is half away from zero, so bins are closed below.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::image::DepthImage;
use crate::scalar::{just_below, Real};

/// How the log gain `phi` was specified.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PhiSource {
    /// Derived from a bit depth so that exactly `2^B` bins cover the range.
    Bits(u32),
    /// Given directly; the bin count is `ceil(phi * (ln(theta x_max + rho) - ln(theta x_min + rho)))`.
    Direct,
}

/// Parameters of the log quantizer.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct QuantizerParams<T> {
    theta: T,
    rho: T,
    x_min: T,
    x_max: T,
    phi: T,
    /// `theta * x_min + rho`, the argument of the log at the bottom of the range.
    base: T,
    bins: u32,
    source: PhiSource,
}

impl<T: Real> QuantizerParams<T> {
    /// Quantizer with `2^bits` bins over `[x_min, x_max)`.
    pub fn from_bits(theta: T, rho: T, x_min: T, x_max: T, bits: u32) -> Result<Self> {
        Self::check_shape(theta, rho, x_min, x_max)?;
        if bits == 0 || bits > 24 {
            return Err(Error::Parameter(format!("bits must be in 1..=24, got {bits}")));
        }
        let span = (theta * x_max + rho).ln() - (theta * x_min + rho).ln();
        let bins = 1u32 << bits;
        let phi = T::from_u32(bins).expect("bin count") / span;
        Ok(QuantizerParams {
            theta,
            rho,
            x_min,
            x_max,
            phi,
            base: theta * x_min + rho,
            bins,
            source: PhiSource::Bits(bits),
        })
    }

    /// Quantizer with an explicit log gain `phi`.
    pub fn from_phi(theta: T, rho: T, x_min: T, x_max: T, phi: T) -> Result<Self> {
        Self::check_shape(theta, rho, x_min, x_max)?;
        if !(phi > T::zero()) || !phi.is_finite() {
            return Err(Error::Parameter(format!("phi must be > 0, got {phi}")));
        }
        let span = (theta * x_max + rho).ln() - (theta * x_min + rho).ln();
        let count = (phi * span).ceil();
        let bins = count
            .to_u32()
            .filter(|&b| (1..(1 << 24)).contains(&b))
            .ok_or_else(|| Error::Parameter(format!("phi = {phi} gives {count} bins")))?;
        Ok(QuantizerParams {
            theta,
            rho,
            x_min,
            x_max,
            phi,
            base: theta * x_min + rho,
            bins,
            source: PhiSource::Direct,
        })
    }

    /// Parameters fitted to an Intel RealSense D435 (`phi = theta = 500`, `rho = 200`,
    /// `x_min = 10` mm). The upper end of the range, 5 m, is our choice.
    pub fn realsense_d435() -> Self {
        Self::from_phi(
            T::lit(500.0),
            T::lit(200.0),
            T::lit(10.0),
            T::lit(5000.0),
            T::lit(500.0),
        )
        .expect("valid built-in quantizer")
    }

    fn check_shape(theta: T, rho: T, x_min: T, x_max: T) -> Result<()> {
        if !(theta > T::zero()) {
            return Err(Error::Parameter(format!("theta must be > 0, got {theta}")));
        }
        if !(x_min < x_max) {
            return Err(Error::Parameter(format!(
                "x_min ({x_min}) must be below x_max ({x_max})"
            )));
        }
        if !(theta * x_min + rho >= T::one()) {
            return Err(Error::Parameter(format!(
                "theta * x_min + rho must be >= 1, got {}",
                theta * x_min + rho
            )));
        }
        Ok(())
    }

    pub fn theta(&self) -> T {
        self.theta
    }
    pub fn rho(&self) -> T {
        self.rho
    }
    pub fn x_min(&self) -> T {
        self.x_min
    }
    pub fn x_max(&self) -> T {
        self.x_max
    }
    pub fn phi(&self) -> T {
        self.phi
    }
    pub fn source(&self) -> PhiSource {
        self.source
    }
    /// Number of bins; `R(x)` takes values in `1..=bin_count()`.
    pub fn bin_count(&self) -> u32 {
        self.bins
    }
    /// `R0 = phi * ln(theta * x_min + rho)`.
    pub fn r0(&self) -> T {
        self.phi * self.base.ln()
    }

    fn check_range(&self, what: &'static str, x: T) -> Result<()> {
        if x.is_nan() || x < self.x_min {
            Err(Error::range(what, x.as_f64(), format!("below x_min = {}", self.x_min)))
        } else if x >= self.x_max {
            Err(Error::range(
                what,
                x.as_f64(),
                format!("at or above x_max = {}", self.x_max),
            ))
        } else {
            Ok(())
        }
    }

    /// Quantization mapping `R(x)`.
    pub fn mapping(&self, x: T) -> Result<u32> {
        self.check_range("x", x)?;
        Ok(self.mapping_unchecked(x))
    }

    #[inline]
    pub(crate) fn mapping_unchecked(&self, x: T) -> u32 {
        // phi ln(theta x + rho) - R0 = phi ln((theta x + rho) / base)
        let v = self.phi * ((self.theta * x + self.rho) / self.base).ln() + T::lit(0.5);
        let k = v.round().to_u32().unwrap_or(1);
        k.clamp(1, self.bins)
    }

    /// Depth at log-offset `t` bins above `x_min`.
    #[inline]
    fn depth_at(&self, t: T) -> T {
        (self.base * (t / self.phi).exp() - self.rho) / self.theta
    }

    /// Reconstruction level of bin `k`.
    pub fn level(&self, k: u32) -> T {
        self.depth_at(T::from_u32(k).expect("bin") - T::lit(0.5))
    }

    /// Edges `(z-, z+)` of bin `k`.
    pub fn bin_edges(&self, k: u32) -> (T, T) {
        let kf = T::from_u32(k).expect("bin");
        (self.depth_at(kf - T::one()), self.depth_at(kf))
    }

    /// Quantization function `Q(x)`.
    pub fn dequantize(&self, x: T) -> Result<T> {
        Ok(self.level(self.mapping(x)?))
    }

    /// Bounds `(n-, n+)` on the noise that turns depth `x` into observation `y`:
    /// `n- <= n < n+` with `n- = z-(R(y)) - x`, `n+ = z+(R(y)) - x`.
    pub fn noise_bounds(&self, y: T, x: T) -> Result<(T, T)> {
        let (lo, hi) = self.bin_edges(self.mapping(y)?);
        Ok((lo - x, hi - x))
    }

    /// Clamps to `[x_min, x_max)`.
    pub fn clamp(&self, x: T) -> T {
        if x < self.x_min {
            self.x_min
        } else if x >= self.x_max {
            just_below(self.x_max)
        } else {
            x
        }
    }
}

/// Noise distribution family.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum NoiseFamily {
    Gaussian,
    /// Laplacian scaled so its standard deviation equals `sigma(x)`.
    Laplacian,
}

/// Quadratic standard-deviation law `sigma(x) = alpha (x + mu)^2 + kappa` for `x >= -mu`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NoiseModel<T> {
    pub alpha: T,
    pub mu: T,
    pub kappa: T,
    pub family: NoiseFamily,
}

impl<T: Real> NoiseModel<T> {
    pub fn new(alpha: T, mu: T, kappa: T, family: NoiseFamily) -> Result<Self> {
        let m = NoiseModel {
            alpha,
            mu,
            kappa,
            family,
        };
        m.validate()?;
        Ok(m)
    }

    /// `alpha = 1e-5`, `mu = -528`, `kappa = 1.4` (RealSense D435 fit), Gaussian.
    pub fn realsense_d435() -> Self {
        NoiseModel {
            alpha: T::lit(1e-5),
            mu: T::lit(-528.0),
            kappa: T::lit(1.4),
            family: NoiseFamily::Gaussian,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.alpha > T::zero()) {
            return Err(Error::Parameter(format!("alpha must be > 0, got {}", self.alpha)));
        }
        if !(self.mu < T::zero()) {
            return Err(Error::Parameter(format!("mu must be < 0, got {}", self.mu)));
        }
        if !(self.kappa > T::zero()) {
            return Err(Error::Parameter(format!("kappa must be > 0, got {}", self.kappa)));
        }
        Ok(())
    }

    /// Noise standard deviation at depth `x`; `x` must be at least `-mu`.
    pub fn std_at(&self, x: T) -> Result<T> {
        if x.is_nan() || x < -self.mu {
            return Err(Error::range(
                "x",
                x.as_f64(),
                format!("noise law defined for x >= -mu = {}", -self.mu),
            ));
        }
        Ok(self.std_clamped(x))
    }

    /// Standard deviation with `x` clamped up to the vertex `-mu`, so depths
    /// nearer than `-mu` get `kappa`.
    #[inline]
    pub fn std_clamped(&self, x: T) -> T {
        let d = (x + self.mu).max(T::zero());
        self.alpha * d * d + self.kappa
    }
}

/// Options for [`corrupt_with`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CorruptOptions {
    /// Probability that an available pixel is dropped (made missing).
    pub dropout: f64,
}

impl Default for CorruptOptions {
    fn default() -> Self {
        CorruptOptions { dropout: 0.0 }
    }
}

/// SplitMix64 finalizer.
fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Derives an independent seed for `(stage, index)` from a base seed.
///
/// All randomness in the crate flows through this function, so a single
/// configuration seed determines every generator.
pub fn derive_seed(base: u64, stage: u64, index: u64) -> u64 {
    splitmix64(splitmix64(splitmix64(base) ^ stage) ^ index)
}

/// Generator for one image row. ChaCha8 keyed by the seed, with the row as stream id.
pub(crate) fn row_rng(seed: u64, row: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(row as u64);
    rng
}

/// Draws one noise sample with standard deviation `sigma`.
pub(crate) fn sample_noise<R: Rng>(rng: &mut R, family: NoiseFamily, sigma: f64) -> f64 {
    match family {
        NoiseFamily::Gaussian => {
            let z: f64 = rng.sample(StandardNormal);
            sigma * z
        }
        NoiseFamily::Laplacian => {
            // inverse CDF on u in (-1/2, 1/2); scale b = sigma / sqrt(2)
            let u: f64 = rng.random::<f64>() - 0.5;
            let b = sigma / std::f64::consts::SQRT_2;
            -b * u.signum() * (1.0 - 2.0 * u.abs()).max(f64::MIN_POSITIVE).ln()
        }
    }
}

/// Corrupts a clean depth image: `y = Q(clamp(x + n))` with `n ~ family(0, sigma(x)^2)`.
///
/// Rows are processed in parallel, each with its own ChaCha8 stream derived
/// from `(seed, row)`, so the output is bit-identical for a given seed.
pub fn corrupt<T: Real>(
    img: &DepthImage<T>,
    q: &QuantizerParams<T>,
    m: &NoiseModel<T>,
    seed: u64,
) -> Result<DepthImage<T>> {
    corrupt_with(img, q, m, seed, &CorruptOptions::default())
}

pub fn corrupt_with<T: Real>(
    img: &DepthImage<T>,
    q: &QuantizerParams<T>,
    m: &NoiseModel<T>,
    seed: u64,
    opts: &CorruptOptions,
) -> Result<DepthImage<T>> {
    img.check_range(q)?;
    m.validate()?;
    if !(0.0..=1.0).contains(&opts.dropout) {
        return Err(Error::Parameter(format!(
            "dropout must be in [0, 1], got {}",
            opts.dropout
        )));
    }
    let width = img.width();
    let rows: Vec<(Vec<T>, Vec<bool>)> = (0..img.height())
        .into_par_iter()
        .map(|r| {
            let mut rng = row_rng(seed, r);
            let mut vals = Vec::with_capacity(width);
            let mut mask = Vec::with_capacity(width);
            for (&x, &avail) in img.row_values(r).iter().zip(img.row_mask(r)) {
                // draw unconditionally so the stream layout does not depend on the mask
                let n = sample_noise(&mut rng, m.family, m.std_clamped(x).as_f64());
                let drop = rng.random::<f64>() < opts.dropout;
                if !avail || drop {
                    vals.push(T::zero());
                    mask.push(false);
                    continue;
                }
                let noisy = q.clamp(x + T::lit(n));
                vals.push(q.level(q.mapping_unchecked(noisy)));
                mask.push(true);
            }
            (vals, mask)
        })
        .collect();
    let (values, mask): (Vec<Vec<T>>, Vec<Vec<bool>>) = rows.into_iter().unzip();
    DepthImage::new(
        img.height(),
        width,
        values.concat(),
        mask.concat(),
        img.intrinsics,
    )
}

/// Dequantizes every available pixel (the zero-noise limit of [`corrupt`]).
pub fn dequantize_image<T: Real>(img: &DepthImage<T>, q: &QuantizerParams<T>) -> Result<DepthImage<T>> {
    img.check_range(q)?;
    let values = img
        .values()
        .iter()
        .zip(img.mask())
        .map(|(&x, &m)| if m { q.level(q.mapping_unchecked(x)) } else { T::zero() })
        .collect();
    img.with_values(values)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::image::Intrinsics;

    fn fig4() -> QuantizerParams<f64> {
        QuantizerParams::from_bits(2.0, 1.0, 50.0, 450.0, 2).unwrap()
    }

    #[test]
    fn two_bit_quantizer_uses_exactly_four_bins() {
        let q = fig4();
        let mut seen = std::collections::BTreeSet::new();
        for i in 0..40_000 {
            let x = 50.0 + 400.0 * i as f64 / 40_000.0;
            seen.insert(q.mapping(x).unwrap());
        }
        assert_eq!(seen.into_iter().collect::<Vec<_>>(), vec![1, 2, 3, 4]);
    }

    #[test]
    fn bottom_of_range_maps_to_first_bin() {
        let q = fig4();
        assert_eq!(q.mapping(50.0).unwrap(), 1);
        let d = QuantizerParams::<f64>::realsense_d435();
        assert_eq!(d.mapping(d.x_min()).unwrap(), 1);
        assert_eq!(d.bin_edges(1).0, d.x_min());
    }

    #[test]
    fn out_of_range_names_the_bound() {
        let q = fig4();
        let lo = q.mapping(49.9).unwrap_err().to_string();
        assert!(lo.contains("below x_min"), "{lo}");
        let hi = q.dequantize(450.0).unwrap_err().to_string();
        assert!(hi.contains("x_max"), "{hi}");
    }

    #[test]
    fn phi_from_bits_matches_definition() {
        let q = fig4();
        let expect = 4.0 / ((2.0f64 * 450.0 + 1.0).ln() - (2.0f64 * 50.0 + 1.0).ln());
        assert_eq!(q.phi(), expect);
        assert_eq!(q.source(), PhiSource::Bits(2));
    }

    #[test]
    fn shape_constraints_rejected() {
        assert!(QuantizerParams::from_bits(0.0, 1.0, 50.0, 450.0, 2).is_err());
        assert!(QuantizerParams::from_bits(2.0, 1.0, 450.0, 50.0, 2).is_err());
        assert!(QuantizerParams::from_bits(0.001, 0.5, 50.0, 450.0, 2).is_err());
        assert!(QuantizerParams::from_phi(2.0, 1.0, 50.0, 450.0, -1.0).is_err());
    }

    // Frozen with mpmath at 50 digits: R(x) = round(500 ln(500x+200) - 500 ln(5200) + 0.5)
    // and Q(x) for the D435 fit.
    #[test]
    fn d435_spot_values() {
        let q = QuantizerParams::<f64>::realsense_d435();
        let cases = [
            (615.0, 2041u32, 615.328_306_984_202),
            (1000.0, 2284, 1_000.651_079_162_131_3),
            (1525.0, 2495, 1_526.211_429_365_646_6),
            (4500.0, 3036, 4_503.981_218_152_639),
        ];
        for (x, k, level) in cases {
            assert_eq!(q.mapping(x).unwrap(), k, "R({x})");
            let got = q.dequantize(x).unwrap();
            assert!((got - level).abs() < 1e-9, "Q({x}) = {got}, want {level}");
        }
    }

    #[test]
    fn dequantize_is_idempotent_and_in_bin() {
        let q = QuantizerParams::<f64>::realsense_d435();
        for i in 0..5000 {
            let x = 10.0 + 4989.0 * (i as f64 + 0.37) / 5000.0;
            let k = q.mapping(x).unwrap();
            let y = q.dequantize(x).unwrap();
            let (lo, hi) = q.bin_edges(k);
            assert!(lo <= y && y < hi);
            assert_eq!(q.dequantize(y).unwrap(), y);
        }
    }

    #[test]
    fn bins_coarsen_with_depth() {
        let q = QuantizerParams::<f64>::realsense_d435();
        let width = |x: f64| {
            let (lo, hi) = q.bin_edges(q.mapping(x).unwrap());
            hi - lo
        };
        // about 1 mm near 0.6 m and 3 mm near 1.5 m
        assert!((width(600.0) - 1.0).abs() <= width(600.0), "{}", width(600.0));
        assert!((width(1500.0) - 3.0).abs() <= width(1500.0), "{}", width(1500.0));
        let mut prev = 0.0;
        for k in (1..q.bin_count()).step_by(97) {
            let (lo, hi) = q.bin_edges(k);
            assert!(hi - lo > prev);
            prev = hi - lo;
        }
    }

    #[test]
    fn noise_law_values() {
        let m = NoiseModel::<f64>::realsense_d435();
        assert_eq!(m.std_at(528.0).unwrap(), 1.4);
        assert!((m.std_at(1528.0).unwrap() - 11.4).abs() < 1e-12);
        assert!(m.std_at(500.0).is_err());
        assert_eq!(m.std_clamped(500.0), 1.4);
        assert!(NoiseModel::new(1e-5, 10.0, 1.4, NoiseFamily::Gaussian).is_err());
    }

    #[test]
    fn noise_bounds_bracket_and_tile() {
        let q = QuantizerParams::<f64>::realsense_d435();
        let y = q.dequantize(1000.0).unwrap();
        let (lo, hi) = q.noise_bounds(y, 1000.0).unwrap();
        assert!(lo < hi);
        // Frozen with mpmath: z-(2284) - 1000 and z+(2284) - 1000
        assert!((lo - (-0.349471558291)).abs() < 1e-9, "{lo}");
        assert!((hi - 1.65263093372).abs() < 1e-9, "{hi}");
        // edges found by bisection on R agree
        let k = q.mapping(y).unwrap();
        let edge = |target: u32| {
            let (mut a, mut b) = (900.0f64, 1100.0f64);
            for _ in 0..200 {
                let m = 0.5 * (a + b);
                if q.mapping(m).unwrap() < target {
                    a = m
                } else {
                    b = m
                }
            }
            b
        };
        assert!((edge(k) - 1000.0 - lo).abs() < 1e-9);
        assert!((edge(k + 1) - 1000.0 - hi).abs() < 1e-9);
        for k in [1u32, 17, 2000, q.bin_count() - 1] {
            assert_eq!(q.bin_edges(k).1, q.bin_edges(k + 1).0);
        }
    }

    fn plane(h: usize, w: usize, depth: f64) -> DepthImage<f64> {
        let k = Intrinsics::new(64.0, 50.0).unwrap();
        DepthImage::filled(h, w, depth, k).unwrap()
    }

    #[test]
    fn corrupt_is_deterministic_and_quantized() {
        let q = QuantizerParams::<f64>::realsense_d435();
        let m = NoiseModel::<f64>::realsense_d435();
        let img = plane(8, 16, 1200.0);
        let a = corrupt(&img, &q, &m, 7).unwrap();
        let b = corrupt(&img, &q, &m, 7).unwrap();
        assert_eq!(a, b);
        let c = corrupt(&img, &q, &m, 8).unwrap();
        assert_ne!(a, c);
        for (_, _, y) in a.available() {
            assert_eq!(q.dequantize(y).unwrap(), y);
        }
    }

    #[test]
    fn zero_noise_limit_is_dequantization() {
        let q = QuantizerParams::<f64>::realsense_d435();
        let m = NoiseModel::new(1e-300, -528.0, f64::EPSILON, NoiseFamily::Gaussian).unwrap();
        let mut img = plane(4, 32, 0.0);
        for r in 0..4 {
            for c in 0..32 {
                img.set(r, c, 700.0 + 13.37 * (r * 32 + c) as f64);
            }
        }
        let y = corrupt(&img, &q, &m, 99).unwrap();
        assert_eq!(y, dequantize_image(&img, &q).unwrap());
    }

    #[test]
    fn missing_pixels_stay_missing_and_dropout_applies() {
        let q = QuantizerParams::<f64>::realsense_d435();
        let m = NoiseModel::<f64>::realsense_d435();
        let mut img = plane(6, 6, 900.0);
        img.set_missing(2, 3);
        let y = corrupt(&img, &q, &m, 1).unwrap();
        assert!(!y.is_available(2, 3));
        assert_eq!(y.available_count(), 35);
        let d = corrupt_with(&img, &q, &m, 1, &CorruptOptions { dropout: 1.0 }).unwrap();
        assert_eq!(d.available_count(), 0);
    }

    #[test]
    fn laplacian_noise_has_requested_spread() {
        let mut rng = row_rng(3, 0);
        let n = 200_000;
        let xs: Vec<f64> = (0..n)
            .map(|_| sample_noise(&mut rng, NoiseFamily::Laplacian, 2.5))
            .collect();
        let mean = xs.iter().sum::<f64>() / n as f64;
        let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n as f64;
        assert!(mean.abs() < 0.03, "{mean}");
        assert!((var.sqrt() - 2.5).abs() < 0.03, "{}", var.sqrt());
    }

    #[test]
    fn derived_seeds_differ() {
        assert_ne!(derive_seed(1, 0, 0), derive_seed(1, 0, 1));
        assert_ne!(derive_seed(1, 0, 0), derive_seed(1, 1, 0));
        assert_eq!(derive_seed(5, 2, 3), derive_seed(5, 2, 3));
    }
}
