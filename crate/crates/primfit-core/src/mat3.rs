//! Small fixed-size 3-vector / 3×3-matrix helpers.
//!
//! Row-major `[f64; 9]` layout, matching the tensor layout used on the tape.

pub type Vec3 = [f64; 3];
pub type Mat3 = [f64; 9];

pub const IDENTITY: Mat3 = [1.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 1.0];

pub fn matmul(a: &Mat3, b: &Mat3) -> Mat3 {
    let mut out = [0.0; 9];
    for i in 0..3 {
        for j in 0..3 {
            let mut s = 0.0;
            for k in 0..3 {
                s += a[i * 3 + k] * b[k * 3 + j];
            }
            out[i * 3 + j] = s;
        }
    }
    out
}

pub fn transpose(a: &Mat3) -> Mat3 {
    [a[0], a[3], a[6], a[1], a[4], a[7], a[2], a[5], a[8]]
}

pub fn matvec(a: &Mat3, v: &Vec3) -> Vec3 {
    [
        a[0] * v[0] + a[1] * v[1] + a[2] * v[2],
        a[3] * v[0] + a[4] * v[1] + a[5] * v[2],
        a[6] * v[0] + a[7] * v[1] + a[8] * v[2],
    ]
}

pub fn sub(a: &Vec3, b: &Vec3) -> Vec3 {
    [a[0] - b[0], a[1] - b[1], a[2] - b[2]]
}

pub fn add(a: &Vec3, b: &Vec3) -> Vec3 {
    [a[0] + b[0], a[1] + b[1], a[2] + b[2]]
}

pub fn dot(a: &Vec3, b: &Vec3) -> f64 {
    a[0] * b[0] + a[1] * b[1] + a[2] * b[2]
}

pub fn norm(a: &Vec3) -> f64 {
    libm::sqrt(dot(a, a))
}

pub fn scale(a: &Vec3, s: f64) -> Vec3 {
    [a[0] * s, a[1] * s, a[2] * s]
}

pub fn det(a: &Mat3) -> f64 {
    a[0] * (a[4] * a[8] - a[5] * a[7]) - a[1] * (a[3] * a[8] - a[5] * a[6])
        + a[2] * (a[3] * a[7] - a[4] * a[6])
}

/// Inverse via the adjugate. Returns `None` when the determinant magnitude
/// falls below `1e-300`.
pub fn inverse(a: &Mat3) -> Option<Mat3> {
    let d = det(a);
    if libm::fabs(d) < 1e-300 {
        return None;
    }
    let inv_d = 1.0 / d;
    Some([
        (a[4] * a[8] - a[5] * a[7]) * inv_d,
        (a[2] * a[7] - a[1] * a[8]) * inv_d,
        (a[1] * a[5] - a[2] * a[4]) * inv_d,
        (a[5] * a[6] - a[3] * a[8]) * inv_d,
        (a[0] * a[8] - a[2] * a[6]) * inv_d,
        (a[2] * a[3] - a[0] * a[5]) * inv_d,
        (a[3] * a[7] - a[4] * a[6]) * inv_d,
        (a[1] * a[6] - a[0] * a[7]) * inv_d,
        (a[0] * a[4] - a[1] * a[3]) * inv_d,
    ])
}

/// Frobenius norm of `AᵀA − I`, used by orthogonality checks.
pub fn orthogonality_defect(a: &Mat3) -> f64 {
    let ata = matmul(&transpose(a), a);
    let mut s = 0.0;
    for i in 0..3 {
        for j in 0..3 {
            let target = if i == j { 1.0 } else { 0.0 };
            let d = ata[i * 3 + j] - target;
            s += d * d;
        }
    }
    libm::sqrt(s)
}
