//! Small fixed-size linear algebra helpers for 3×3 matrices and 3-vectors.

use crate::numerics::jacobi_eigh;

pub type Mat3 = [[f64; 3]; 3];
pub type Vec3 = [f64; 3];

pub const IDENTITY: Mat3 = [[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]];

pub fn mat_mul(a: &Mat3, b: &Mat3) -> Mat3 {
    let mut out = [[0.0; 3]; 3];
    for i in 0..3 {
        for j in 0..3 {
            out[i][j] = a[i][0] * b[0][j] + a[i][1] * b[1][j] + a[i][2] * b[2][j];
        }
    }
    out
}

pub fn mat_vec(a: &Mat3, v: &Vec3) -> Vec3 {
    let mut out = [0.0; 3];
    for i in 0..3 {
        out[i] = a[i][0] * v[0] + a[i][1] * v[1] + a[i][2] * v[2];
    }
    out
}

pub fn transpose(a: &Mat3) -> Mat3 {
    let mut out = [[0.0; 3]; 3];
    for i in 0..3 {
        for j in 0..3 {
            out[i][j] = a[j][i];
        }
    }
    out
}

pub fn scale(a: &Mat3, s: f64) -> Mat3 {
    let mut out = *a;
    for row in out.iter_mut() {
        for v in row.iter_mut() {
            *v *= s;
        }
    }
    out
}

pub fn det(a: &Mat3) -> f64 {
    a[0][0] * (a[1][1] * a[2][2] - a[1][2] * a[2][1])
        - a[0][1] * (a[1][0] * a[2][2] - a[1][2] * a[2][0])
        + a[0][2] * (a[1][0] * a[2][1] - a[1][1] * a[2][0])
}

/// Inverse via the adjugate. Returns `None` when the determinant is
/// too small relative to the matrix scale.
pub fn inverse(a: &Mat3) -> Option<Mat3> {
    let d = det(a);
    let scale_a = frobenius(a);
    if d.abs() <= 1e-14 * scale_a.powi(3).max(f64::MIN_POSITIVE) {
        return None;
    }
    let inv_d = 1.0 / d;
    let mut out = [[0.0; 3]; 3];
    out[0][0] = (a[1][1] * a[2][2] - a[1][2] * a[2][1]) * inv_d;
    out[0][1] = (a[0][2] * a[2][1] - a[0][1] * a[2][2]) * inv_d;
    out[0][2] = (a[0][1] * a[1][2] - a[0][2] * a[1][1]) * inv_d;
    out[1][0] = (a[1][2] * a[2][0] - a[1][0] * a[2][2]) * inv_d;
    out[1][1] = (a[0][0] * a[2][2] - a[0][2] * a[2][0]) * inv_d;
    out[1][2] = (a[0][2] * a[1][0] - a[0][0] * a[1][2]) * inv_d;
    out[2][0] = (a[1][0] * a[2][1] - a[1][1] * a[2][0]) * inv_d;
    out[2][1] = (a[0][1] * a[2][0] - a[0][0] * a[2][1]) * inv_d;
    out[2][2] = (a[0][0] * a[1][1] - a[0][1] * a[1][0]) * inv_d;
    Some(out)
}

pub fn frobenius(a: &Mat3) -> f64 {
    let mut s = 0.0;
    for row in a {
        for v in row {
            s += v * v;
        }
    }
    s.sqrt()
}

pub fn cross(a: &Vec3, b: &Vec3) -> Vec3 {
    [
        a[1] * b[2] - a[2] * b[1],
        a[2] * b[0] - a[0] * b[2],
        a[0] * b[1] - a[1] * b[0],
    ]
}

pub fn dot3(a: &Vec3, b: &Vec3) -> f64 {
    a[0] * b[0] + a[1] * b[1] + a[2] * b[2]
}

pub fn norm3(a: &Vec3) -> f64 {
    dot3(a, a).sqrt()
}

/// Skew-symmetric cross-product matrix `[t]_×` with `[t]_× v = t × v`.
pub fn cross_matrix(t: &Vec3) -> Mat3 {
    [
        [0.0, -t[2], t[1]],
        [t[2], 0.0, -t[0]],
        [-t[1], t[0], 0.0],
    ]
}

pub fn vec_from_mat(a: &Mat3) -> [f64; 9] {
    let mut out = [0.0; 9];
    for i in 0..3 {
        for j in 0..3 {
            out[3 * i + j] = a[i][j];
        }
    }
    out
}

pub fn mat_from_vec(v: &[f64; 9]) -> Mat3 {
    let mut out = [[0.0; 3]; 3];
    for i in 0..3 {
        for j in 0..3 {
            out[i][j] = v[3 * i + j];
        }
    }
    out
}

/// Singular value decomposition of a 3×3 matrix, `a = u * diag(s) * v^T`
/// with `s` sorted in decreasing order and orthonormal `u`, `v`.
///
/// Computed from the eigendecomposition of `a^T a`: the eigenvectors give
/// `v` and `sqrt(eigenvalues)` the singular values; columns of `u` follow
/// from `a v_i / s_i`, completed by cross products where singular values
/// vanish or coincide.
pub fn svd3(a: &Mat3) -> (Mat3, [f64; 3], Mat3) {
    let at_a = mat_mul(&transpose(a), a);
    let sym = [
        [at_a[0][0], at_a[0][1], at_a[0][2]],
        [at_a[0][1], at_a[1][1], at_a[1][2]],
        [at_a[0][2], at_a[1][2], at_a[2][2]],
    ];
    // Jacobi on a 3x3 symmetric matrix always converges well within the sweep cap.
    let (vals, vecs) = jacobi_eigh(&sym, 100).expect("3x3 jacobi eigendecomposition");

    // Ascending eigenvalues -> descending singular values.
    let order = [2, 1, 0];
    let mut s = [0.0; 3];
    let mut v_cols: [Vec3; 3] = [[0.0; 3]; 3];
    for (k, &idx) in order.iter().enumerate() {
        s[k] = vals[idx].max(0.0).sqrt();
        for i in 0..3 {
            v_cols[k][i] = vecs[i][idx];
        }
    }

    let tol = 1e-13 * s[0].max(1.0);
    let mut u_cols: [Vec3; 3] = [[0.0; 3]; 3];
    let mut built = 0;
    for k in 0..3 {
        if s[k] > tol {
            let av = mat_vec(a, &v_cols[k]);
            let inv = 1.0 / s[k];
            u_cols[k] = [av[0] * inv, av[1] * inv, av[2] * inv];
            // One re-orthogonalization pass against earlier columns.
            for prev in 0..k {
                let d = dot3(&u_cols[k], &u_cols[prev]);
                for i in 0..3 {
                    u_cols[k][i] -= d * u_cols[prev][i];
                }
            }
            let n = norm3(&u_cols[k]);
            if n > 1e-300 {
                for val in u_cols[k].iter_mut() {
                    *val /= n;
                }
                built = k + 1;
                continue;
            }
        }
        // Rank-deficient direction: complete the basis deterministically.
        u_cols[k] = complete_column(&u_cols, built.min(k));
        built = k + 1;
    }

    // Refine each singular value through the bilinear form u^T A v: the
    // eigenvalue route computes sqrt(λ) with absolute error ~sqrt(eps)·s_max
    // for the small values, while the bilinear form is accurate to
    // eps·s_max. Flip u where the form comes out negative.
    for k in 0..3 {
        let av = mat_vec(a, &v_cols[k]);
        let refined = dot3(&u_cols[k], &av);
        if refined < 0.0 {
            for x in u_cols[k].iter_mut() {
                *x = -*x;
            }
            s[k] = -refined;
        } else {
            s[k] = refined;
        }
    }

    let mut u = [[0.0; 3]; 3];
    let mut v = [[0.0; 3]; 3];
    for k in 0..3 {
        for i in 0..3 {
            u[i][k] = u_cols[k][i];
            v[i][k] = v_cols[k][i];
        }
    }
    (u, s, v)
}

fn complete_column(cols: &[Vec3; 3], have: usize) -> Vec3 {
    match have {
        0 => [1.0, 0.0, 0.0],
        1 => {
            // Any unit vector orthogonal to cols[0].
            let c = &cols[0];
            let seed = if c[0].abs() < 0.9 {
                [1.0, 0.0, 0.0]
            } else {
                [0.0, 1.0, 0.0]
            };
            let mut w = cross(c, &seed);
            let n = norm3(&w);
            for v in w.iter_mut() {
                *v /= n;
            }
            w
        }
        _ => {
            let mut w = cross(&cols[0], &cols[1]);
            let n = norm3(&w);
            for v in w.iter_mut() {
                *v /= n;
            }
            w
        }
    }
}
