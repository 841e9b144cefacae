//! Closed-form weighted primitive fitting.
//!
//! Ellipsoids are fitted to soft clusters from the SVD of the
//! trace-normalized weighted covariance; cuboids are the bounding boxes of
//! fitted ellipsoids in the principal frame. A Khachiyan minimum-volume
//! enclosing ellipsoid is included as a non-differentiable baseline.


use alloc::vec;
use alloc::vec::Vec;

use crate::error::CoreError;
use crate::graph::{Graph, Var};
use crate::mat3::{self, Mat3, Vec3};
use crate::svd3;
#[cfg(test)]
use crate::tensor::Tensor;

/// Floor applied to singular values before the square root, keeping the
/// forward pass finite on degenerate clusters.
pub const SINGULAR_VALUE_FLOOR: f64 = 1e-8;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PrimitiveKind {
    Ellipsoid,
    Cuboid,
}

/// A fitted primitive: center, principal frame and semi-axis lengths
/// (half-extents for cuboids), sorted descending.
#[derive(Debug, Clone, PartialEq)]
pub struct PrimitiveParams {
    pub kind: PrimitiveKind,
    pub center: Vec3,
    /// Columns are the principal axes.
    pub rotation: Mat3,
    pub semi_axes: Vec3,
}

impl PrimitiveParams {
    pub fn ellipsoid(center: Vec3, rotation: Mat3, semi_axes: Vec3) -> Self {
        PrimitiveParams {
            kind: PrimitiveKind::Ellipsoid,
            center,
            rotation,
            semi_axes,
        }
    }

    pub fn sphere(center: Vec3, radius: f64) -> Self {
        Self::ellipsoid(center, mat3::IDENTITY, [radius, radius, radius])
    }

    pub fn max_semi_axis(&self) -> f64 {
        self.semi_axes[0].max(self.semi_axes[1]).max(self.semi_axes[2])
    }

    pub fn min_semi_axis(&self) -> f64 {
        self.semi_axes[0].min(self.semi_axes[1]).min(self.semi_axes[2])
    }

    /// Surface area. Ellipsoids use the Knud Thomsen approximation
    /// (exponent 1.6075, max error ~1.06%), cuboids are exact.
    pub fn surface_area(&self) -> f64 {
        let [a, b, c] = self.semi_axes;
        match self.kind {
            PrimitiveKind::Ellipsoid => {
                let p = 1.6075;
                let t = (libm::pow(a * b, p) + libm::pow(a * c, p) + libm::pow(b * c, p)) / 3.0;
                4.0 * core::f64::consts::PI * libm::pow(t, 1.0 / p)
            }
            PrimitiveKind::Cuboid => 8.0 * (a * b + a * c + b * c),
        }
    }
}

/// Bounding cuboid of a fitted ellipsoid: same frame, half-extents equal to
/// the semi-axes.
pub fn ellipsoid_to_cuboid(p: &PrimitiveParams) -> Result<PrimitiveParams, CoreError> {
    if p.kind != PrimitiveKind::Ellipsoid {
        return Err(CoreError::invalid("ellipsoid_to_cuboid: input not an ellipsoid"));
    }
    Ok(PrimitiveParams {
        kind: PrimitiveKind::Cuboid,
        ..p.clone()
    })
}

#[derive(Debug, Clone)]
pub struct FitConfig {
    /// Scale from singular-value square roots to semi-axis lengths.
    pub kappa: f64,
    /// Clusters with total weight below this fraction of N are dropped.
    pub min_effective_weight: f64,
    /// Condition-number threshold above which a cluster leaves the
    /// backward pass.
    pub condition_cutoff: f64,
}

impl Default for FitConfig {
    fn default() -> Self {
        FitConfig {
            kappa: libm::sqrt(3.0) / 2.0,
            min_effective_weight: 1e-3,
            condition_cutoff: 1e5,
        }
    }
}

/// Graph handles for the fitted parameters.
#[derive(Debug, Clone, Copy)]
pub struct PrimitiveVars {
    /// Center, length-3 vector.
    pub center: Var,
    /// Rotation, 3×3 (columns = principal axes).
    pub rotation: Var,
    /// Semi-axis lengths, length-3 vector.
    pub semi_axes: Var,
}

#[derive(Debug, Clone)]
pub struct FitResult {
    pub params: PrimitiveParams,
    pub vars: PrimitiveVars,
    /// False when the condition-number cutoff or the weight threshold
    /// removed this cluster from the backward pass.
    pub backward_enabled: bool,
    /// trace(W_m), the total membership mass of the cluster.
    pub effective_weight: f64,
}

/// Weighted ellipsoid fit of `x` (N×3 graph node) under nonnegative
/// weights `w` (length-N graph node).
///
/// Forward: μ = Σwᵢxᵢ/Σw, C = X̄ᵀdiag(w)X̄/Σw, (S, V) = svd3(C),
/// semi-axes κ·√S. Differentiable w.r.t. `x` and `w` unless the condition
/// number exceeds the cutoff, in which case the parameters are detached
/// and `backward_enabled` is false.
pub fn fit_ellipsoid(
    graph: &mut Graph,
    x: Var,
    w: Var,
    cfg: &FitConfig,
) -> Result<FitResult, CoreError> {
    let n = graph.value(x).rows();
    if graph.value(x).shape() != [n, 3] || graph.value(w).shape() != [n] {
        return Err(CoreError::shape("fit_ellipsoid: x must be N×3, w length N"));
    }
    if !graph.value(w).all_finite() || !graph.value(x).all_finite() {
        return Err(CoreError::non_finite("fit_ellipsoid input"));
    }
    let total_w: f64 = graph.value(w).data().iter().sum();
    if total_w <= 0.0 {
        return Err(CoreError::degenerate("fit_ellipsoid: total weight is zero"));
    }

    // normalized weights wᵢ/Σw
    let w_col = graph.reshape(w, vec![n, 1])?;
    let z = graph.sum(w)?;
    let z_row = graph.reshape(z, vec![1])?;
    let wn_col = graph.div_row(w_col, z_row)?;
    let wn = graph.reshape(wn_col, vec![n])?;

    // weighted mean and centered covariance
    let wn_rowvec = graph.reshape(wn, vec![1, n])?;
    let mu_row = graph.matmul(wn_rowvec, x)?;
    let mu = graph.reshape(mu_row, vec![3])?;
    let xbar = graph.sub_row(x, mu)?;
    let weighted = graph.scale_rows(xbar, wn)?;
    let xbar_t = graph.transpose(xbar)?;
    let cov = graph.matmul(xbar_t, weighted)?;

    let (s, v) = graph.svd3(cov)?;
    let s_vals = graph.value(s).data().to_vec();
    let condition = if s_vals[2] <= 0.0 {
        f64::INFINITY
    } else {
        s_vals[0] / s_vals[2]
    };

    let s_floored = graph.clamp(s, SINGULAR_VALUE_FLOOR, f64::INFINITY)?;
    let s_sqrt = graph.sqrt(s_floored)?;
    let semi = graph.mul_scalar(s_sqrt, cfg.kappa)?;

    let weight_ok = total_w >= cfg.min_effective_weight * n as f64;
    let backward_enabled = condition <= cfg.condition_cutoff && weight_ok;

    let vars = if backward_enabled {
        PrimitiveVars {
            center: mu,
            rotation: v,
            semi_axes: semi,
        }
    } else {
        PrimitiveVars {
            center: graph.detach(mu)?,
            rotation: graph.detach(v)?,
            semi_axes: graph.detach(semi)?,
        }
    };

    let mut center = [0.0; 3];
    center.copy_from_slice(graph.value(vars.center).data());
    let mut rotation = [0.0; 9];
    rotation.copy_from_slice(graph.value(vars.rotation).data());
    let mut semi_axes = [0.0; 3];
    semi_axes.copy_from_slice(graph.value(vars.semi_axes).data());

    Ok(FitResult {
        params: PrimitiveParams::ellipsoid(center, rotation, semi_axes),
        vars,
        backward_enabled,
        effective_weight: total_w,
    })
}

/// Fits one primitive per column of the membership matrix `w` (N×M graph
/// node). Clusters whose effective weight falls below
/// `min_effective_weight·N` are dropped from the output entirely; an error
/// is raised when every cluster is dropped.
pub fn fit_all(
    graph: &mut Graph,
    x: Var,
    w: Var,
    cfg: &FitConfig,
) -> Result<Vec<FitResult>, CoreError> {
    let n = graph.value(x).rows();
    let m = graph.value(w).cols();
    if graph.value(w).rows() != n {
        return Err(CoreError::shape("fit_all: W rows must match point count"));
    }
    let threshold = cfg.min_effective_weight * n as f64;
    let mut results = Vec::new();
    for col in 0..m {
        let wm = graph.select_col(w, col)?;
        let total: f64 = graph.value(wm).data().iter().sum();
        if total < threshold {
            continue;
        }
        results.push(fit_ellipsoid(graph, x, wm, cfg)?);
    }
    if results.is_empty() {
        return Err(CoreError::degenerate(
            "fit_all: every cluster dropped, shape unfittable",
        ));
    }
    Ok(results)
}

/// Minimum-volume enclosing ellipsoid via the Khachiyan algorithm.
/// Non-differentiable; baseline and test oracle only.
pub fn mve_fit(points: &[Vec3], tolerance: f64) -> Result<PrimitiveParams, CoreError> {
    let n = points.len();
    if n < 4 {
        return Err(CoreError::invalid("mve_fit: need at least 4 points"));
    }
    let max_iter = 10_000;

    // lifted points q = (x, y, z, 1)
    let mut u = vec![1.0 / n as f64; n];
    for iter in 0..max_iter {
        // X = Q·diag(u)·Qᵀ (4×4)
        let mut xm = [[0.0; 4]; 4];
        for (i, p) in points.iter().enumerate() {
            let q = [p[0], p[1], p[2], 1.0];
            for r in 0..4 {
                for c in 0..4 {
                    xm[r][c] += u[i] * q[r] * q[c];
                }
            }
        }
        let xinv = invert4(&xm).ok_or_else(|| {
            CoreError::degenerate("mve_fit: points do not span 3-D affinely")
        })?;

        // M_i = qᵢᵀ X⁻¹ qᵢ, pick the largest
        let mut best = 0;
        let mut best_m = f64::NEG_INFINITY;
        for (i, p) in points.iter().enumerate() {
            let q = [p[0], p[1], p[2], 1.0];
            let mut mi = 0.0;
            for r in 0..4 {
                for c in 0..4 {
                    mi += q[r] * xinv[r][c] * q[c];
                }
            }
            if mi > best_m {
                best_m = mi;
                best = i;
            }
        }

        let step = (best_m - 4.0) / (4.0 * (best_m - 1.0));
        let mut err = 0.0;
        for (i, ui) in u.iter_mut().enumerate() {
            let new = if i == best {
                *ui * (1.0 - step) + step
            } else {
                *ui * (1.0 - step)
            };
            err += (new - *ui) * (new - *ui);
            *ui = new;
        }
        if libm::sqrt(err) < tolerance || iter == max_iter - 1 {
            break;
        }
    }

    // center c = Pᵀu; A = inv(PᵀUP − ccᵀ)/3
    let mut center = [0.0; 3];
    for (i, p) in points.iter().enumerate() {
        for k in 0..3 {
            center[k] += u[i] * p[k];
        }
    }
    let mut second = [0.0; 9];
    for (i, p) in points.iter().enumerate() {
        for r in 0..3 {
            for c in 0..3 {
                second[r * 3 + c] += u[i] * p[r] * p[c];
            }
        }
    }
    for r in 0..3 {
        for c in 0..3 {
            second[r * 3 + c] -= center[r] * center[c];
        }
    }
    let mut shape_inv = mat3::inverse(&second)
        .ok_or_else(|| CoreError::degenerate("mve_fit: degenerate point spread"))?;
    for entry in &mut shape_inv {
        *entry /= 3.0;
    }

    // guarantee enclosure despite finite iterations
    let mut worst = 0.0_f64;
    for p in points {
        let d = mat3::sub(p, &center);
        let ad = mat3::matvec(&shape_inv, &d);
        worst = worst.max(mat3::dot(&d, &ad));
    }
    if worst > 1.0 {
        for entry in &mut shape_inv {
            *entry /= worst;
        }
    }

    // A = V·diag(1/a²)·Vᵀ ⇒ svd of A⁻¹ yields a² and the frame
    let a_inv = mat3::inverse(&shape_inv)
        .ok_or_else(|| CoreError::degenerate("mve_fit: singular shape matrix"))?;
    let res = svd3::svd3(&a_inv)?;
    let semi = [
        libm::sqrt(res.s[0]),
        libm::sqrt(res.s[1]),
        libm::sqrt(res.s[2]),
    ];
    Ok(PrimitiveParams::ellipsoid(center, res.v, semi))
}

fn invert4(m: &[[f64; 4]; 4]) -> Option<[[f64; 4]; 4]> {
    let mut a = *m;
    let mut inv = [[0.0; 4]; 4];
    for (i, row) in inv.iter_mut().enumerate() {
        row[i] = 1.0;
    }
    for col in 0..4 {
        let mut pivot = col;
        for r in col + 1..4 {
            if libm::fabs(a[r][col]) > libm::fabs(a[pivot][col]) {
                pivot = r;
            }
        }
        if libm::fabs(a[pivot][col]) < 1e-300 {
            return None;
        }
        a.swap(col, pivot);
        inv.swap(col, pivot);
        let d = a[col][col];
        for j in 0..4 {
            a[col][j] /= d;
            inv[col][j] /= d;
        }
        for r in 0..4 {
            if r == col {
                continue;
            }
            let f = a[r][col];
            if f == 0.0 {
                continue;
            }
            for j in 0..4 {
                a[r][j] -= f * a[col][j];
                inv[r][j] -= f * inv[col][j];
            }
        }
    }
    Some(inv)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng;

    fn cube_corners() -> Vec<Vec3> {
        let mut pts = Vec::new();
        for &x in &[-1.0, 1.0] {
            for &y in &[-1.0, 1.0] {
                for &z in &[-1.0, 1.0] {
                    pts.push([x, y, z]);
                }
            }
        }
        pts
    }

    fn fit_points(points: &[Vec3], weights: &[f64], cfg: &FitConfig) -> FitResult {
        let mut g = Graph::new();
        let flat: Vec<f64> = points.iter().flat_map(|p| p.iter().copied()).collect();
        let x = g.leaf(Tensor::matrix(points.len(), 3, flat).unwrap());
        let w = g.leaf(Tensor::vector(weights.to_vec()));
        fit_ellipsoid(&mut g, x, w, cfg).unwrap()
    }

    #[test]
    fn cube_corners_give_identity_covariance() {
        let pts = cube_corners();
        let cfg = FitConfig::default();
        let res = fit_points(&pts, &[1.0; 8], &cfg);
        assert!(res.backward_enabled);
        for k in 0..3 {
            assert!(res.params.center[k].abs() < 1e-12);
            assert!((res.params.semi_axes[k] - cfg.kappa).abs() < 1e-9);
        }
    }

    #[test]
    fn uniform_sphere_covariance_is_third_identity() {
        let mut r = rng::stream(11, "sphere-fit");
        let n = 2000;
        let mut pts = Vec::with_capacity(n);
        for _ in 0..n {
            // uniform on the unit sphere
            let z = rng::uniform_in(&mut r, -1.0, 1.0);
            let phi = rng::uniform_in(&mut r, 0.0, 2.0 * core::f64::consts::PI);
            let s = libm::sqrt(1.0 - z * z);
            pts.push([s * libm::cos(phi), s * libm::sin(phi), z]);
        }
        let cfg = FitConfig {
            kappa: libm::sqrt(3.0),
            ..FitConfig::default()
        };
        let res = fit_points(&pts, &vec![1.0; n], &cfg);
        for k in 0..3 {
            assert!(res.params.center[k].abs() < 0.02);
            // κ=√3 maps σ≈1/3 to semi-axis ≈ 1
            assert!((res.params.semi_axes[k] - 1.0).abs() < 0.05);
        }
    }

    #[test]
    fn collinear_points_disable_backward_but_fit() {
        let pts: Vec<Vec3> = (-5..=5).map(|t| [t as f64 / 5.0, 0.0, 0.0]).collect();
        let res = fit_points(&pts, &vec![1.0; 11], &FitConfig::default());
        assert!(!res.backward_enabled);
        assert!(res.params.semi_axes.iter().all(|&s| s > 0.0));
    }

    #[test]
    fn weight_scale_invariance() {
        let pts = cube_corners();
        let cfg = FitConfig::default();
        let a = fit_points(&pts, &[0.5; 8], &cfg);
        let b = fit_points(&pts, &[17.0; 8], &cfg);
        assert_eq!(a.params, b.params);
    }

    #[test]
    fn rigid_equivariance() {
        let mut r = rng::stream(5, "equivariance");
        let pts: Vec<Vec3> = (0..40)
            .map(|_| {
                [
                    rng::normal(&mut r),
                    0.5 * rng::normal(&mut r),
                    0.2 * rng::normal(&mut r),
                ]
            })
            .collect();
        let w: Vec<f64> = (0..40).map(|_| rng::uniform_in(&mut r, 0.1, 1.0)).collect();

        // rotation about z by 0.7, translation t
        let (c, s) = (libm::cos(0.7), libm::sin(0.7));
        let rot: Mat3 = [c, -s, 0.0, s, c, 0.0, 0.0, 0.0, 1.0];
        let t = [0.3, -1.2, 0.8];
        let moved: Vec<Vec3> = pts
            .iter()
            .map(|p| mat3::add(&mat3::matvec(&rot, p), &t))
            .collect();

        let cfg = FitConfig::default();
        let a = fit_points(&pts, &w, &cfg);
        let b = fit_points(&moved, &w, &cfg);
        let expect_center = mat3::add(&mat3::matvec(&rot, &a.params.center), &t);
        for k in 0..3 {
            assert!((b.params.center[k] - expect_center[k]).abs() < 1e-9);
            assert!((b.params.semi_axes[k] - a.params.semi_axes[k]).abs() < 1e-9);
        }
    }

    #[test]
    fn fit_all_drops_featherweight_cluster() {
        let pts = cube_corners();
        let mut g = Graph::new();
        let flat: Vec<f64> = pts.iter().flat_map(|p| p.iter().copied()).collect();
        let x = g.leaf(Tensor::matrix(8, 3, flat).unwrap());
        // column 0 normal, column 1 negligible
        let mut wdata = vec![0.0; 16];
        for i in 0..8 {
            wdata[i * 2] = 1.0;
            wdata[i * 2 + 1] = 1e-7;
        }
        let w = g.leaf(Tensor::matrix(8, 2, wdata).unwrap());
        let out = fit_all(&mut g, x, w, &FitConfig::default()).unwrap();
        assert_eq!(out.len(), 1);
    }

    #[test]
    fn cuboid_conversion_copies_frame() {
        let e = PrimitiveParams::ellipsoid([0.1, 0.2, 0.3], mat3::IDENTITY, [2.0, 1.0, 0.5]);
        let c = ellipsoid_to_cuboid(&e).unwrap();
        assert_eq!(c.kind, PrimitiveKind::Cuboid);
        assert_eq!(c.center, e.center);
        assert_eq!(c.rotation, e.rotation);
        assert_eq!(c.semi_axes, e.semi_axes);
        assert!(ellipsoid_to_cuboid(&c).is_err());
    }

    #[test]
    fn mve_of_cube_corners_is_sqrt3_sphere() {
        let res = mve_fit(&cube_corners(), 1e-4).unwrap();
        let r3 = libm::sqrt(3.0);
        for k in 0..3 {
            assert!(res.center[k].abs() < 1e-3);
            assert!((res.semi_axes[k] - r3).abs() < 0.05, "axis {k}: {}", res.semi_axes[k]);
        }
    }

    #[test]
    fn mve_encloses_all_inputs() {
        let mut r = rng::stream(3, "mve");
        let pts: Vec<Vec3> = (0..60)
            .map(|_| [rng::normal(&mut r), rng::normal(&mut r), rng::normal(&mut r)])
            .collect();
        let res = mve_fit(&pts, 1e-3).unwrap();
        let a_inv = {
            // rebuild shape matrix V·diag(1/a²)·Vᵀ
            let mut d = [0.0; 9];
            for k in 0..3 {
                d[k * 3 + k] = 1.0 / (res.semi_axes[k] * res.semi_axes[k]);
            }
            mat3::matmul(&mat3::matmul(&res.rotation, &d), &mat3::transpose(&res.rotation))
        };
        for p in &pts {
            let dvec = mat3::sub(p, &res.center);
            let q = mat3::dot(&dvec, &mat3::matvec(&a_inv, &dvec));
            assert!(q <= 1.0 + 1e-6, "point outside: {q}");
        }
    }
}
