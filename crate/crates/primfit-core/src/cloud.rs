//! Point clouds and normalization.

use alloc::string::String;
use alloc::vec::Vec;

use crate::error::CoreError;
use crate::mat3::Vec3;

/// A point cloud in normalized space, with optional per-point part labels.
#[derive(Debug, Clone, PartialEq)]
pub struct PointCloud {
    pub points: Vec<Vec3>,
    pub labels: Option<Vec<usize>>,
    pub name: String,
}

impl PointCloud {
    pub fn new(points: Vec<Vec3>, labels: Option<Vec<usize>>, name: String) -> Result<Self, CoreError> {
        if points.is_empty() {
            return Err(CoreError::empty("point cloud"));
        }
        if points.iter().any(|p| p.iter().any(|v| !v.is_finite())) {
            return Err(CoreError::non_finite("point cloud coordinates"));
        }
        if let Some(l) = &labels {
            if l.len() != points.len() {
                return Err(CoreError::shape("label count != point count"));
            }
        }
        Ok(PointCloud { points, labels, name })
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn centroid(&self) -> Vec3 {
        let n = self.points.len() as f64;
        let mut c = [0.0; 3];
        for p in &self.points {
            for k in 0..3 {
                c[k] += p[k];
            }
        }
        [c[0] / n, c[1] / n, c[2] / n]
    }

    /// Center at the origin and scale so the farthest point has norm 1.
    /// Labels are preserved. Fails when all points coincide.
    pub fn normalize(&self) -> Result<PointCloud, CoreError> {
        let c = self.centroid();
        let mut max_norm: f64 = 0.0;
        for p in &self.points {
            let d = crate::mat3::norm(&crate::mat3::sub(p, &c));
            max_norm = max_norm.max(d);
        }
        if max_norm < 1e-12 {
            return Err(CoreError::degenerate(
                "all points identical, normalization scale undefined",
            ));
        }
        let inv = 1.0 / max_norm;
        let points = self
            .points
            .iter()
            .map(|p| {
                [
                    (p[0] - c[0]) * inv,
                    (p[1] - c[1]) * inv,
                    (p[2] - c[2]) * inv,
                ]
            })
            .collect();
        Ok(PointCloud {
            points,
            labels: self.labels.clone(),
            name: self.name.clone(),
        })
    }

    /// Points flattened row-major into an N×3 buffer.
    pub fn flat_points(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.points.len() * 3);
        for p in &self.points {
            out.extend_from_slice(p);
        }
        out
    }

    /// Deterministic subsample of at most `n` points (evenly strided),
    /// keeping labels aligned.
    pub fn subsample(&self, n: usize) -> PointCloud {
        if n == 0 || n >= self.points.len() {
            return self.clone();
        }
        let stride = self.points.len() as f64 / n as f64;
        let idx: Vec<usize> = (0..n).map(|i| (i as f64 * stride) as usize).collect();
        PointCloud {
            points: idx.iter().map(|&i| self.points[i]).collect(),
            labels: self
                .labels
                .as_ref()
                .map(|l| idx.iter().map(|&i| l[i]).collect()),
            name: self.name.clone(),
        }
    }
}
