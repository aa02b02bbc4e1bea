//! Epipolar and pose error measures plus the AUC evaluation protocol.
//!
//! Two epipolar point-to-model distances ship: the Sampson distance (the
//! first-order geometric error) and the symmetric epipolar distance (sum of
//! squared distances to the epipolar line in each image). Pose accuracy is
//! reported as angular rotation/translation errors in degrees, aggregated
//! over trials as the area under the recall-vs-threshold curve.

use crate::geometry::PointPair;
use crate::mat3::{self, Mat3, Vec3};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum MetricsError {
    #[error("invalid input: {0}")]
    InvalidInput(String),
}

/// Numerator/denominator convention for the Sampson distance.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SampsonForm {
    /// Squared numerator over the first two components of `Fx` and `F^T x'`.
    /// Scale- and sign-invariant in F; the default.
    Standard,
    /// Signed numerator over full squared 3-vector norms. Neither sign- nor
    /// scale-invariant; kept as an alternative reporting convention.
    SignedFullNorm,
}

/// Threshold below which an epipolar denominator counts as degenerate
/// (point coincident with the epipole); the distance is then `+inf`.
const DENOM_FLOOR: f64 = 1e-30;

pub fn sampson_distance(f: &Mat3, pair: &PointPair, form: SampsonForm) -> f64 {
    let x = pair.x_h();
    let xp = pair.x_prime_h();
    let fx = mat3::mat_vec(f, &x);
    let ftxp = mat3::mat_vec(&mat3::transpose(f), &xp);
    let num = mat3::dot3(&xp, &fx);
    match form {
        SampsonForm::Standard => {
            let denom = fx[0] * fx[0] + fx[1] * fx[1] + ftxp[0] * ftxp[0] + ftxp[1] * ftxp[1];
            if denom < DENOM_FLOOR {
                return f64::INFINITY;
            }
            num * num / denom
        }
        SampsonForm::SignedFullNorm => {
            let denom = mat3::dot3(&fx, &fx) + mat3::dot3(&ftxp, &ftxp);
            if denom < DENOM_FLOOR {
                return f64::INFINITY;
            }
            num / denom
        }
    }
}

/// `(x'^T F x)² (1/((Fx)_1² + (Fx)_2²) + 1/((F^T x')_1² + (F^T x')_2²))`.
pub fn symmetric_epipolar_distance(f: &Mat3, pair: &PointPair) -> f64 {
    let fx = mat3::mat_vec(f, &pair.x_h());
    let ftxp = mat3::mat_vec(&mat3::transpose(f), &pair.x_prime_h());
    let num = mat3::dot3(&pair.x_prime_h(), &fx);
    let d1 = fx[0] * fx[0] + fx[1] * fx[1];
    let d2 = ftxp[0] * ftxp[0] + ftxp[1] * ftxp[1];
    if d1 < DENOM_FLOOR || d2 < DENOM_FLOOR {
        return f64::INFINITY;
    }
    num * num * (1.0 / d1 + 1.0 / d2)
}

/// Mean Sampson distance over a correspondence list.
pub fn epipolar_loss(
    f: &Mat3,
    pairs: &[PointPair],
    form: SampsonForm,
) -> Result<f64, MetricsError> {
    if pairs.is_empty() {
        return Err(MetricsError::InvalidInput(
            "epipolar loss needs at least one pair".into(),
        ));
    }
    let sum: f64 = pairs.iter().map(|p| sampson_distance(f, p, form)).sum();
    Ok(sum / pairs.len() as f64)
}

fn check_rotation(r: &Mat3) -> Result<(), MetricsError> {
    let rtr = mat3::mat_mul(&mat3::transpose(r), r);
    for i in 0..3 {
        for j in 0..3 {
            let expect = if i == j { 1.0 } else { 0.0 };
            if (rtr[i][j] - expect).abs() > 1e-9 {
                return Err(MetricsError::InvalidInput(format!(
                    "matrix is not orthogonal: (R^T R)[{i}][{j}] = {}",
                    rtr[i][j]
                )));
            }
        }
    }
    let d = mat3::det(r);
    if (d - 1.0).abs() > 1e-9 {
        return Err(MetricsError::InvalidInput(format!(
            "matrix is not a proper rotation: det = {d}"
        )));
    }
    Ok(())
}

fn rotation_angle_rad(r_hat: &Mat3, r: &Mat3) -> Result<f64, MetricsError> {
    check_rotation(r_hat)?;
    check_rotation(r)?;
    let rel = mat3::mat_mul(&mat3::transpose(r_hat), r);
    let trace = rel[0][0] + rel[1][1] + rel[2][2];
    let arg = ((trace - 1.0) / 2.0).clamp(-1.0, 1.0);
    Ok(arg.acos())
}

fn translation_angle_rad(t_hat: &Vec3, t: &Vec3) -> Result<f64, MetricsError> {
    let n1 = mat3::norm3(t_hat);
    let n2 = mat3::norm3(t);
    if n1 < 1e-12 || n2 < 1e-12 {
        return Err(MetricsError::InvalidInput(
            "translation vectors must be nonzero".into(),
        ));
    }
    let arg = (mat3::dot3(t_hat, t) / (n1 * n2)).clamp(-1.0, 1.0);
    Ok(arg.acos())
}

/// Angular distance between two rotations, `acos((tr(R̂^T R) - 1)/2)`, in
/// degrees with the argument clamped to `[-1, 1]`.
pub fn rotation_angle_error(r_hat: &Mat3, r: &Mat3) -> Result<f64, MetricsError> {
    Ok(rotation_angle_rad(r_hat, r)?.to_degrees())
}

/// Angle between translation directions in degrees.
pub fn translation_angle_error(t_hat: &Vec3, t: &Vec3) -> Result<f64, MetricsError> {
    Ok(translation_angle_rad(t_hat, t)?.to_degrees())
}

/// Rotation and translation angular errors of a pose estimate, in degrees.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct PoseError {
    pub rot_deg: f64,
    pub trans_deg: f64,
}

impl PoseError {
    pub fn new(rot_deg: f64, trans_deg: f64) -> Self {
        Self { rot_deg, trans_deg }
    }

    /// Scalar pose error used for AUC aggregation.
    pub fn max_deg(&self) -> f64 {
        self.rot_deg.max(self.trans_deg)
    }
}

/// Balance factors of the composite two-view loss.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct LossWeights {
    pub lambda_rot: f64,
    pub lambda_epi: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self {
            lambda_rot: 10.0,
            lambda_epi: 1e-3,
        }
    }
}

impl LossWeights {
    pub fn new(lambda_rot: f64, lambda_epi: f64) -> Result<Self, MetricsError> {
        if !(lambda_rot >= 0.0) || !(lambda_epi >= 0.0) {
            return Err(MetricsError::InvalidInput(
                "loss weights must be nonnegative".into(),
            ));
        }
        Ok(Self {
            lambda_rot,
            lambda_epi,
        })
    }
}

/// Composite reporting loss: translation angle plus `lambda_rot` times the
/// rotation angle (both in radians, matching their arccos definitions) plus
/// `lambda_epi` times the mean Sampson distance on ground-truth matches.
#[allow(clippy::too_many_arguments)]
pub fn twg_loss(
    f: &Mat3,
    r_hat: &Mat3,
    r: &Mat3,
    t_hat: &Vec3,
    t: &Vec3,
    gt_pairs: &[PointPair],
    weights: &LossWeights,
) -> Result<f64, MetricsError> {
    let rot = rotation_angle_rad(r_hat, r)?;
    let trans = translation_angle_rad(t_hat, t)?;
    let epi = epipolar_loss(f, gt_pairs, SampsonForm::Standard)?;
    Ok(trans + weights.lambda_rot * rot + weights.lambda_epi * epi)
}

/// Normalized area under the recall-vs-error curve at each threshold.
///
/// Recall as a function of the error threshold t is the step function
/// `#{e_i <= t}/N`; its exact integral over `[0, τ]` divided by τ is
/// `Σ_{e_i <= τ} (τ - e_i) / (N τ)`. Infinite errors represent failed
/// trials and never contribute.
pub fn pose_auc(errors: &[f64], thresholds: &[f64]) -> Result<Vec<f64>, MetricsError> {
    if errors.is_empty() {
        return Err(MetricsError::InvalidInput(
            "auc needs at least one error value".into(),
        ));
    }
    if errors.iter().any(|e| e.is_nan()) {
        return Err(MetricsError::InvalidInput("error values must not be NaN".into()));
    }
    if thresholds.is_empty() || thresholds.iter().any(|t| !(*t > 0.0)) {
        return Err(MetricsError::InvalidInput(
            "thresholds must be positive".into(),
        ));
    }
    if thresholds.windows(2).any(|w| w[0] >= w[1]) {
        return Err(MetricsError::InvalidInput(
            "thresholds must be strictly ascending".into(),
        ));
    }
    let n = errors.len() as f64;
    Ok(thresholds
        .iter()
        .map(|&tau| {
            let area: f64 = errors
                .iter()
                .filter(|e| **e <= tau)
                .map(|e| tau - e)
                .sum();
            area / (n * tau)
        })
        .collect())
}
