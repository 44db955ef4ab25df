//! Point clouds from depth images and the C2C / C2P error metrics.
//!
//! C2C is the mean distance from each reference point to its nearest candidate
//! point. C2P is the mean squared distance from each reference point to the
//! tangent plane at its nearest candidate point, with candidate normals fitted
//! to the candidate point and its 5 nearest neighbours.

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::graph::surface_normal;
use crate::image::DepthImage;
use crate::kdtree::{brute_k_nearest, brute_nearest, KdTree};
use crate::scalar::Real;

/// Points used for each candidate normal (the point itself included).
pub const NORMAL_NEIGHBOURS: usize = 6;

#[derive(Debug, Clone, PartialEq)]
pub struct PointCloud<T> {
    pub points: Vec<[T; 3]>,
    pub normals: Option<Vec<[T; 3]>>,
}

impl<T: Real> PointCloud<T> {
    pub fn new(points: Vec<[T; 3]>) -> Result<Self> {
        if points.iter().flatten().any(|v| !v.is_finite()) {
            return Err(Error::Numeric("point cloud has non-finite coordinates".into()));
        }
        Ok(PointCloud { points, normals: None })
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn translate(&mut self, t: [T; 3]) {
        for p in &mut self.points {
            for a in 0..3 {
                p[a] += t[a];
            }
        }
    }

    pub fn centroid(&self) -> [T; 3] {
        let n = T::from_usize_lossy(self.points.len().max(1));
        let mut c = [T::zero(); 3];
        for p in &self.points {
            for a in 0..3 {
                c[a] += p[a];
            }
        }
        c.map(|v| v / n)
    }

    /// Concatenation; normals are kept only if both clouds have them.
    pub fn merge(&self, other: &Self) -> Self {
        let mut points = self.points.clone();
        points.extend_from_slice(&other.points);
        let normals = match (&self.normals, &other.normals) {
            (Some(a), Some(b)) => Some(a.iter().chain(b).copied().collect()),
            _ => None,
        };
        PointCloud { points, normals }
    }

    /// Attaches normals fitted over each point's [`NORMAL_NEIGHBOURS`] nearest points.
    pub fn with_estimated_normals(mut self) -> Self {
        self.normals = Some(estimate_normals(&self.points, &KdTree::new(&self.points)));
        self
    }
}

/// Pinhole back-projection of every available pixel:
/// `((j - c_x) Z / f, (i - c_y) Z / f, Z)`.
pub fn project_to_cloud<T: Real>(img: &DepthImage<T>) -> PointCloud<T> {
    let (cx, cy) = img.intrinsics.principal_point(img.width(), img.height());
    let f = img.intrinsics.focal;
    let points = img
        .available()
        .map(|(i, j, z)| {
            [
                (T::from_usize_lossy(j) - cx) * z / f,
                (T::from_usize_lossy(i) - cy) * z / f,
                z,
            ]
        })
        .collect();
    PointCloud { points, normals: None }
}

/// Centers the cloud at the origin and scales it into the unit ball.
/// Returns the cloud with the removed centroid and the divisor used.
pub fn normalize_cloud<T: Real>(pc: &PointCloud<T>) -> (PointCloud<T>, [T; 3], T) {
    let c = pc.centroid();
    let mut points: Vec<[T; 3]> = pc.points.iter().map(|p| [p[0] - c[0], p[1] - c[1], p[2] - c[2]]).collect();
    let r = points
        .iter()
        .map(|p| (p[0] * p[0] + p[1] * p[1] + p[2] * p[2]).sqrt())
        .fold(T::zero(), T::max);
    let scale = r.max(T::epsilon());
    for p in &mut points {
        *p = p.map(|v| v / scale);
    }
    (
        PointCloud {
            points,
            normals: pc.normals.clone(),
        },
        c,
        scale,
    )
}

fn estimate_normals<T: Real>(points: &[[T; 3]], tree: &KdTree<T>) -> Vec<[T; 3]> {
    points
        .par_iter()
        .map(|p| {
            let nb: Vec<[T; 3]> = tree
                .k_nearest(p, NORMAL_NEIGHBOURS)
                .iter()
                .map(|&(i, _)| points[i])
                .collect();
            surface_normal(&nb).normal
        })
        .collect()
}

fn check_nonempty<T>(reference: &PointCloud<T>, candidate: &PointCloud<T>) -> Result<()> {
    if reference.points.is_empty() || candidate.points.is_empty() {
        return Err(Error::Parameter("metrics need non-empty clouds".into()));
    }
    Ok(())
}

/// Mean nearest-neighbour distance from reference points to the candidate cloud.
pub fn c2c<T: Real>(reference: &PointCloud<T>, candidate: &PointCloud<T>) -> Result<T> {
    check_nonempty(reference, candidate)?;
    let tree = KdTree::new(&candidate.points);
    let sum: T = reference
        .points
        .par_iter()
        .map(|p| tree.nearest(p).expect("non-empty").1.sqrt())
        .collect::<Vec<T>>()
        .into_iter()
        .sum();
    Ok(sum / T::from_usize_lossy(reference.len()))
}

/// Mean squared point-to-plane distance from reference points to the
/// candidate's tangent planes.
pub fn c2p<T: Real>(reference: &PointCloud<T>, candidate: &PointCloud<T>) -> Result<T> {
    Ok(c2p_terms(reference, candidate)?.into_iter().sum::<T>() / T::from_usize_lossy(reference.len()))
}

/// Per-reference-point C2P terms.
pub fn c2p_terms<T: Real>(reference: &PointCloud<T>, candidate: &PointCloud<T>) -> Result<Vec<T>> {
    check_nonempty(reference, candidate)?;
    let tree = KdTree::new(&candidate.points);
    let normals = match &candidate.normals {
        Some(n) if n.len() == candidate.len() => n.clone(),
        _ => estimate_normals(&candidate.points, &tree),
    };
    Ok(reference
        .points
        .par_iter()
        .map(|p| {
            let (i, _) = tree.nearest(p).expect("non-empty");
            let q = candidate.points[i];
            let n = normals[i];
            let d = (p[0] - q[0]) * n[0] + (p[1] - q[1]) * n[1] + (p[2] - q[2]) * n[2];
            d * d
        })
        .collect())
}

/// Average of both directions of [`c2c`].
pub fn c2c_symmetric<T: Real>(a: &PointCloud<T>, b: &PointCloud<T>) -> Result<T> {
    Ok((c2c(a, b)? + c2c(b, a)?) / T::lit(2.0))
}

/// Average of both directions of [`c2p`].
pub fn c2p_symmetric<T: Real>(a: &PointCloud<T>, b: &PointCloud<T>) -> Result<T> {
    Ok((c2p(a, b)? + c2p(b, a)?) / T::lit(2.0))
}

/// [`c2c`] by exhaustive search.
pub fn c2c_brute<T: Real>(reference: &PointCloud<T>, candidate: &PointCloud<T>) -> Result<T> {
    check_nonempty(reference, candidate)?;
    let sum: T = reference
        .points
        .iter()
        .map(|p| brute_nearest(&candidate.points, p).expect("non-empty").1.sqrt())
        .sum();
    Ok(sum / T::from_usize_lossy(reference.len()))
}

/// [`c2p`] by exhaustive search, with normals fitted the same way.
pub fn c2p_brute<T: Real>(reference: &PointCloud<T>, candidate: &PointCloud<T>) -> Result<T> {
    check_nonempty(reference, candidate)?;
    let pts = &candidate.points;
    let sum: T = reference
        .points
        .iter()
        .map(|p| {
            let (i, _) = brute_nearest(pts, p).expect("non-empty");
            let nb: Vec<[T; 3]> = brute_k_nearest(pts, &pts[i], NORMAL_NEIGHBOURS)
                .iter()
                .map(|&(k, _)| pts[k])
                .collect();
            let n = surface_normal(&nb).normal;
            let q = pts[i];
            let d = (p[0] - q[0]) * n[0] + (p[1] - q[1]) * n[1] + (p[2] - q[2]) * n[2];
            d * d
        })
        .sum();
    Ok(sum / T::from_usize_lossy(reference.len()))
}
