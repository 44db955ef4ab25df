//! Depth images with an availability mask and pinhole intrinsics.

use crate::error::{Error, Result};
use crate::forward::QuantizerParams;
use crate::scalar::Real;

/// Pinhole intrinsics of a rectified stereo rig.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Intrinsics<T> {
    /// Focal length in pixels.
    pub focal: T,
    /// Baseline between the two cameras in millimetres.
    pub baseline: T,
    /// Principal point `(cx, cy)` in pixels; image centre when `None`.
    pub principal: Option<(T, T)>,
}

impl<T: Real> Intrinsics<T> {
    pub fn new(focal: T, baseline: T) -> Result<Self> {
        let k = Intrinsics {
            focal,
            baseline,
            principal: None,
        };
        k.validate()?;
        Ok(k)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.focal > T::zero()) {
            return Err(Error::Parameter(format!("focal must be > 0, got {}", self.focal)));
        }
        if !(self.baseline > T::zero()) {
            return Err(Error::Parameter(format!(
                "baseline must be > 0, got {}",
                self.baseline
            )));
        }
        Ok(())
    }

    /// Principal point, defaulting to `(width / 2, height / 2)`.
    pub fn principal_point(&self, width: usize, height: usize) -> (T, T) {
        self.principal.unwrap_or_else(|| {
            (
                T::from_usize_lossy(width / 2),
                T::from_usize_lossy(height / 2),
            )
        })
    }
}

/// An `H x N` grid of depths (mm). Pixels whose mask is `false` are missing.
#[derive(Debug, Clone, PartialEq)]
pub struct DepthImage<T> {
    height: usize,
    width: usize,
    values: Vec<T>,
    mask: Vec<bool>,
    pub intrinsics: Intrinsics<T>,
}

impl<T: Real> DepthImage<T> {
    pub fn new(
        height: usize,
        width: usize,
        values: Vec<T>,
        mask: Vec<bool>,
        intrinsics: Intrinsics<T>,
    ) -> Result<Self> {
        if values.len() != height * width || mask.len() != height * width {
            return Err(Error::Parameter(format!(
                "image buffers must hold {}x{} = {} pixels (values {}, mask {})",
                height,
                width,
                height * width,
                values.len(),
                mask.len()
            )));
        }
        intrinsics.validate()?;
        if let Some(bad) = values
            .iter()
            .zip(&mask)
            .position(|(v, &m)| m && !v.is_finite())
        {
            return Err(Error::Numeric(format!("non-finite depth at pixel {bad}")));
        }
        Ok(DepthImage {
            height,
            width,
            values,
            mask,
            intrinsics,
        })
    }

    /// Builds an image treating non-positive values as missing.
    pub fn from_values(
        height: usize,
        width: usize,
        values: Vec<T>,
        intrinsics: Intrinsics<T>,
    ) -> Result<Self> {
        let mask = values.iter().map(|&v| v > T::zero()).collect();
        Self::new(height, width, values, mask, intrinsics)
    }

    pub fn filled(height: usize, width: usize, value: T, intrinsics: Intrinsics<T>) -> Result<Self> {
        Self::new(
            height,
            width,
            vec![value; height * width],
            vec![true; height * width],
            intrinsics,
        )
    }

    #[inline]
    pub fn height(&self) -> usize {
        self.height
    }

    #[inline]
    pub fn width(&self) -> usize {
        self.width
    }

    #[inline]
    pub fn values(&self) -> &[T] {
        &self.values
    }

    #[inline]
    pub fn mask(&self) -> &[bool] {
        &self.mask
    }

    #[inline]
    pub fn get(&self, row: usize, col: usize) -> Option<T> {
        let k = row * self.width + col;
        self.mask[k].then(|| self.values[k])
    }

    #[inline]
    pub fn is_available(&self, row: usize, col: usize) -> bool {
        self.mask[row * self.width + col]
    }

    pub fn row_values(&self, row: usize) -> &[T] {
        &self.values[row * self.width..(row + 1) * self.width]
    }

    pub fn row_mask(&self, row: usize) -> &[bool] {
        &self.mask[row * self.width..(row + 1) * self.width]
    }

    /// Overwrites the depth at an available pixel.
    pub fn set(&mut self, row: usize, col: usize, value: T) {
        let k = row * self.width + col;
        self.values[k] = value;
    }

    pub fn set_missing(&mut self, row: usize, col: usize) {
        let k = row * self.width + col;
        self.mask[k] = false;
        self.values[k] = T::zero();
    }

    pub fn available_count(&self) -> usize {
        self.mask.iter().filter(|&&m| m).count()
    }

    /// Iterator over `(row, col, depth)` of available pixels.
    pub fn available(&self) -> impl Iterator<Item = (usize, usize, T)> + '_ {
        self.values
            .iter()
            .zip(&self.mask)
            .enumerate()
            .filter(|(_, (_, &m))| m)
            .map(move |(k, (&v, _))| (k / self.width, k % self.width, v))
    }

    /// Same geometry and mask, new values.
    pub fn with_values(&self, values: Vec<T>) -> Result<Self> {
        Self::new(
            self.height,
            self.width,
            values,
            self.mask.clone(),
            self.intrinsics,
        )
    }

    /// Checks every available pixel lies in `[x_min, x_max)`.
    pub fn check_range(&self, q: &QuantizerParams<T>) -> Result<()> {
        for (r, c, v) in self.available() {
            if v < q.x_min() || v >= q.x_max() {
                return Err(Error::range(
                    "depth",
                    v.as_f64(),
                    format!(
                        "pixel ({r}, {c}) must lie in [{}, {})",
                        q.x_min(),
                        q.x_max()
                    ),
                ));
            }
        }
        Ok(())
    }
}
