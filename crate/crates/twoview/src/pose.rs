//! Relative pose recovery from an estimated fundamental matrix.
//!
//! Given camera intrinsics, the estimate maps to an essential matrix,
//! decomposes into the four (R, ±t) candidates, and the physically valid
//! pose is selected by counting triangulated points with positive depth in
//! both cameras.

use crate::geometry::{FundamentalMatrix, PointPair};
use crate::mat3::{self, Mat3, Vec3};
use crate::numerics::jacobi_eigh;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum PoseRecoveryError {
    #[error("invalid input: {0}")]
    InvalidInput(String),
    #[error("degenerate essential matrix: {0}")]
    Degenerate(String),
    #[error("ambiguous pose: candidates {tied:?} tie with {votes} positive-depth points")]
    Ambiguous { tied: Vec<usize>, votes: usize },
}

/// Pinhole intrinsics; the calibration matrix is upper-triangular with
/// positive focal lengths and `K[2][2] = 1`.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct Intrinsics {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    #[serde(default)]
    pub skew: f64,
}

impl Intrinsics {
    pub fn new(fx: f64, fy: f64, cx: f64, cy: f64) -> Result<Self, PoseRecoveryError> {
        if !(fx > 0.0 && fy > 0.0) || !fx.is_finite() || !fy.is_finite() {
            return Err(PoseRecoveryError::InvalidInput(format!(
                "focal lengths must be positive and finite, got ({fx}, {fy})"
            )));
        }
        Ok(Self {
            fx,
            fy,
            cx,
            cy,
            skew: 0.0,
        })
    }

    pub fn matrix(&self) -> Mat3 {
        [
            [self.fx, self.skew, self.cx],
            [0.0, self.fy, self.cy],
            [0.0, 0.0, 1.0],
        ]
    }

    /// Project a camera-frame point to pixels. `None` behind the camera.
    pub fn project(&self, p: &Vec3) -> Option<[f64; 2]> {
        if p[2] <= 0.0 {
            return None;
        }
        let v = mat3::mat_vec(&self.matrix(), p);
        Some([v[0] / v[2], v[1] / v[2]])
    }
}

/// Rotation plus unit translation direction from source to target camera:
/// `X_target = R X_source + t`.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct RelativePose {
    pub r: Mat3,
    pub t: Vec3,
}

impl RelativePose {
    pub fn new(r: Mat3, t: Vec3) -> Result<Self, PoseRecoveryError> {
        let rtr = mat3::mat_mul(&mat3::transpose(&r), &r);
        for i in 0..3 {
            for j in 0..3 {
                let expect = if i == j { 1.0 } else { 0.0 };
                if (rtr[i][j] - expect).abs() > 1e-9 {
                    return Err(PoseRecoveryError::InvalidInput(
                        "rotation is not orthogonal".into(),
                    ));
                }
            }
        }
        if (mat3::det(&r) - 1.0).abs() > 1e-9 {
            return Err(PoseRecoveryError::InvalidInput(
                "rotation determinant is not +1".into(),
            ));
        }
        let norm = mat3::norm3(&t);
        if norm < 1e-12 {
            return Err(PoseRecoveryError::InvalidInput(
                "translation must be nonzero".into(),
            ));
        }
        Ok(Self {
            r,
            t: [t[0] / norm, t[1] / norm, t[2] / norm],
        })
    }
}

/// `E = K_target^T F K_source`, projected onto the essential manifold
/// (two equal singular values, third zero, by averaging the top two).
pub fn essential_from_fundamental(
    f: &FundamentalMatrix,
    k_source: &Intrinsics,
    k_target: &Intrinsics,
) -> Mat3 {
    let e_raw = mat3::mat_mul(
        &mat3::mat_mul(&mat3::transpose(&k_target.matrix()), f.entries()),
        &k_source.matrix(),
    );
    let (u, s, v) = mat3::svd3(&e_raw);
    let sigma = 0.5 * (s[0] + s[1]);
    let mut e = [[0.0; 3]; 3];
    for i in 0..3 {
        for j in 0..3 {
            e[i][j] = sigma * (u[i][0] * v[j][0] + u[i][1] * v[j][1]);
        }
    }
    e
}

/// The four candidate poses `{R_a, R_b} × {t, -t}` of an essential matrix.
pub fn decompose_essential(e: &Mat3) -> Result<[RelativePose; 4], PoseRecoveryError> {
    let (mut u, s, mut v) = mat3::svd3(e);
    if s[1] < 1e-9 * s[0].max(f64::MIN_POSITIVE) {
        return Err(PoseRecoveryError::Degenerate(format!(
            "second singular value {} vanishes relative to {}",
            s[1], s[0]
        )));
    }
    // Proper-rotation factors: flip a full factor if its determinant is
    // negative (E is only defined up to sign).
    if mat3::det(&u) < 0.0 {
        u = mat3::scale(&u, -1.0);
    }
    if mat3::det(&v) < 0.0 {
        v = mat3::scale(&v, -1.0);
    }
    let w = [[0.0, -1.0, 0.0], [1.0, 0.0, 0.0], [0.0, 0.0, 1.0]];
    let r_a = mat3::mat_mul(&mat3::mat_mul(&u, &w), &mat3::transpose(&v));
    let r_b = mat3::mat_mul(&mat3::mat_mul(&u, &mat3::transpose(&w)), &mat3::transpose(&v));
    let t: Vec3 = [u[0][2], u[1][2], u[2][2]];
    let neg_t = [-t[0], -t[1], -t[2]];
    Ok([
        RelativePose::new(r_a, t)?,
        RelativePose::new(r_a, neg_t)?,
        RelativePose::new(r_b, t)?,
        RelativePose::new(r_b, neg_t)?,
    ])
}

/// Linear (DLT) triangulation of one pair under a candidate pose. Returns
/// the Euclidean point in the source camera frame, or `None` when the
/// homogeneous solution lies at infinity.
fn triangulate(
    pair: &PointPair,
    pose: &RelativePose,
    k_source: &Intrinsics,
    k_target: &Intrinsics,
) -> Option<Vec3> {
    // P1 = K_s [I | 0], P2 = K_t [R | t], each 3x4.
    let ks = k_source.matrix();
    let kt = k_target.matrix();
    let mut p1 = [[0.0; 4]; 3];
    let mut p2 = [[0.0; 4]; 3];
    for i in 0..3 {
        for j in 0..3 {
            p1[i][j] = ks[i][j];
            let mut acc = 0.0;
            for k in 0..3 {
                acc += kt[i][k] * pose.r[k][j];
            }
            p2[i][j] = acc;
        }
        let mut acc = 0.0;
        for k in 0..3 {
            acc += kt[i][k] * pose.t[k];
        }
        p2[i][3] = acc;
    }

    let rows = [
        sub4(&scale4(&p1[2], pair.x[0]), &p1[0]),
        sub4(&scale4(&p1[2], pair.x[1]), &p1[1]),
        sub4(&scale4(&p2[2], pair.x_prime[0]), &p2[0]),
        sub4(&scale4(&p2[2], pair.x_prime[1]), &p2[1]),
    ];
    let mut ata = [[0.0; 4]; 4];
    for row in &rows {
        for i in 0..4 {
            for j in 0..4 {
                ata[i][j] += row[i] * row[j];
            }
        }
    }
    let (_, vecs) = jacobi_eigh(&ata, 100).ok()?;
    let xh = [vecs[0][0], vecs[1][0], vecs[2][0], vecs[3][0]];
    if xh[3].abs() < 1e-12 {
        return None;
    }
    Some([xh[0] / xh[3], xh[1] / xh[3], xh[2] / xh[3]])
}

fn scale4(v: &[f64; 4], s: f64) -> [f64; 4] {
    [v[0] * s, v[1] * s, v[2] * s, v[3] * s]
}

fn sub4(a: &[f64; 4], b: &[f64; 4]) -> [f64; 4] {
    [a[0] - b[0], a[1] - b[1], a[2] - b[2], a[3] - b[3]]
}

/// Depth test: the triangulated point must be in front of both cameras.
fn positive_depth(point: &Vec3, pose: &RelativePose) -> bool {
    if point[2] <= 0.0 {
        return false;
    }
    let in_target = mat3::mat_vec(&pose.r, point);
    in_target[2] + pose.t[2] > 0.0
}

/// Pick the candidate maximizing the count of points with positive depth in
/// both cameras. A tie across candidates is an error listing the tied
/// indices.
pub fn select_by_cheirality(
    candidates: &[RelativePose],
    pairs: &[PointPair],
    k_source: &Intrinsics,
    k_target: &Intrinsics,
) -> Result<RelativePose, PoseRecoveryError> {
    if candidates.is_empty() || pairs.is_empty() {
        return Err(PoseRecoveryError::InvalidInput(
            "need at least one candidate and one pair".into(),
        ));
    }
    let votes: Vec<usize> = candidates
        .iter()
        .map(|pose| {
            pairs
                .iter()
                .filter_map(|pair| triangulate(pair, pose, k_source, k_target))
                .filter(|point| positive_depth(point, pose))
                .count()
        })
        .collect();
    let best = *votes.iter().max().expect("nonempty votes");
    let tied: Vec<usize> = votes
        .iter()
        .enumerate()
        .filter(|(_, v)| **v == best)
        .map(|(i, _)| i)
        .collect();
    if tied.len() > 1 {
        return Err(PoseRecoveryError::Ambiguous { tied, votes: best });
    }
    Ok(candidates[tied[0]])
}

/// Full recovery chain: intrinsics transfer, essential projection,
/// decomposition, cheirality selection.
pub fn recover_pose(
    f: &FundamentalMatrix,
    pairs: &[PointPair],
    k_source: &Intrinsics,
    k_target: &Intrinsics,
) -> Result<RelativePose, PoseRecoveryError> {
    let e = essential_from_fundamental(f, k_source, k_target);
    let candidates = decompose_essential(&e)?;
    select_by_cheirality(&candidates, pairs, k_source, k_target)
}
