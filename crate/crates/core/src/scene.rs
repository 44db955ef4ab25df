//! Synthetic rectified two-view scenes made of planar patches over a background.
//!
//! Both cameras share intrinsics; the right camera sits `baseline` mm along +X,
//! so a point at depth `Z` appears `fD/Z` pixels further left in the right view.

use crate::error::{Error, Result};
use crate::image::{DepthImage, Intrinsics};
use crate::scalar::Real;

/// Rectangular patch of the plane `Z = z0 + a X + b Y`, bounded in `X` and `Y` (mm).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PlanePatch {
    pub z0: f64,
    pub a: f64,
    pub b: f64,
    pub x_range: (f64, f64),
    pub y_range: (f64, f64),
}

impl PlanePatch {
    /// Depth along the ray through the camera at `cam_x` with direction
    /// `(dx, dy, 1)`, if the ray hits the patch in front of the camera.
    fn hit(&self, cam_x: f64, dx: f64, dy: f64) -> Option<f64> {
        // Z = z0 + a (cam_x + Z dx) + b Z dy
        let denom = 1.0 - self.a * dx - self.b * dy;
        if denom.abs() < 1e-12 {
            return None;
        }
        let z = (self.z0 + self.a * cam_x) / denom;
        let (x, y) = (cam_x + z * dx, z * dy);
        (z > 0.0 && x >= self.x_range.0 && x <= self.x_range.1 && y >= self.y_range.0 && y <= self.y_range.1).then_some(z)
    }
}

/// Which camera renders the scene.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum View {
    Left,
    Right,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Scene {
    pub height: usize,
    pub width: usize,
    pub focal: f64,
    pub baseline: f64,
    /// Depth of the fronto-parallel background plane (mm).
    pub background: f64,
    pub patches: Vec<PlanePatch>,
}

impl Scene {
    /// 64x64 desk scene: two slanted planes in front of a wall at 1.6 m.
    pub fn desk() -> Self {
        Scene {
            height: 64,
            width: 64,
            focal: 64.0,
            baseline: 50.0,
            background: 1600.0,
            patches: vec![
                PlanePatch {
                    z0: 900.0,
                    a: 0.4,
                    b: 0.0,
                    x_range: (-400.0, -50.0),
                    y_range: (-300.0, 300.0),
                },
                PlanePatch {
                    z0: 1100.0,
                    a: -0.2,
                    b: 0.3,
                    x_range: (50.0, 450.0),
                    y_range: (-250.0, 350.0),
                },
            ],
        }
    }

    pub fn intrinsics<T: Real>(&self) -> Result<Intrinsics<T>> {
        Intrinsics::new(T::lit(self.focal), T::lit(self.baseline))
    }

    fn validate(&self) -> Result<()> {
        if self.height == 0 || self.width == 0 {
            return Err(Error::Parameter("scene must have at least one pixel".into()));
        }
        if !(self.background > 0.0) {
            return Err(Error::Parameter("background depth must be positive".into()));
        }
        Ok(())
    }

    /// Ground-truth depth image seen from `view`; the nearest surface wins.
    pub fn render<T: Real>(&self, view: View) -> Result<DepthImage<T>> {
        self.validate()?;
        let intr = self.intrinsics::<T>()?;
        let (cx, cy) = intr.principal_point(self.width, self.height);
        let (cx, cy) = (cx.as_f64(), cy.as_f64());
        let cam_x = match view {
            View::Left => 0.0,
            View::Right => self.baseline,
        };
        let values = (0..self.height)
            .flat_map(|i| (0..self.width).map(move |j| (i, j)))
            .map(|(i, j)| {
                let dx = (j as f64 - cx) / self.focal;
                let dy = (i as f64 - cy) / self.focal;
                let z = self
                    .patches
                    .iter()
                    .filter_map(|p| p.hit(cam_x, dx, dy))
                    .fold(self.background, f64::min);
                T::lit(z)
            })
            .collect();
        DepthImage::from_values(self.height, self.width, values, intr)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::warp::disparity_and_position;

    #[test]
    fn desk_scene_has_three_depth_groups() {
        let s = Scene::desk();
        let left: DepthImage<f64> = s.render(View::Left).unwrap();
        let v = left.values();
        assert!(v.contains(&1600.0));
        assert!(v.iter().any(|&z| z < 900.0));
        assert!(v.iter().any(|&z| z > 930.0 && z < 1250.0));
        assert!(v.iter().all(|&z| z > 600.0 && z <= 1600.0));
    }

    #[test]
    fn views_agree_through_the_disparity() {
        let s = Scene::desk();
        let left: DepthImage<f64> = s.render(View::Left).unwrap();
        let right: DepthImage<f64> = s.render(View::Right).unwrap();
        // top rows see only the wall, which shifts by exactly two pixels
        let mut checked = 0;
        for i in 0..5 {
            for j in 0..64 {
                let z = left.get(i, j).unwrap();
                let (_, s) = disparity_and_position(j as f64, z, 64.0, 50.0).unwrap();
                let jr = s.round();
                if (s - jr).abs() < 1e-9 && jr >= 0.0 && z == 1600.0 {
                    assert_eq!(right.get(i, jr as usize), Some(1600.0));
                    checked += 1;
                }
            }
        }
        assert!(checked > 100);
    }
}
