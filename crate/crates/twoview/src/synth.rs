//! Deterministic synthetic two-view scenes with calibrated noise and
//! outlier contamination.
//!
//! Scenes are fully determined by their [`SceneConfig`], including the
//! 64-bit seed: 3D points are sampled uniformly in the intersection of the
//! two view frustums by rejection, projected exactly into both cameras,
//! then inlier pairs receive isotropic Gaussian pixel noise while a fixed
//! fraction of target points is replaced by uniform in-image positions
//! (the mismatched-pair failure mode; the source point stays a true
//! projection). Draw order is fixed, so identical configs serialize to
//! identical bytes.

use crate::geometry::{
    fundamental_from_poses, CorrespondenceSet, FundamentalMatrix, GeometryError, PointPair,
};
use crate::io::{self, FormatError};
use crate::mat3::{self, Mat3, Vec3};
use crate::pose::{Intrinsics, PoseRecoveryError, RelativePose};
use crate::rng::Pcg32;
use std::io::{Read, Write};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum SynthError {
    #[error("invalid scene config: {0}")]
    InvalidConfig(String),
    #[error("view frustum intersection is empty (no accepted samples in {attempts} draws)")]
    EmptyFrustum { attempts: usize },
    #[error(transparent)]
    Geometry(#[from] GeometryError),
    #[error(transparent)]
    Pose(#[from] PoseRecoveryError),
    #[error(transparent)]
    Format(#[from] FormatError),
}

/// Generation parameters. The defaults describe a desk-scale indoor rig:
/// 640×480 image at focal 500 px, scene depth 2–6 m, baseline 0.3 of the
/// mean depth, 10° relative rotation.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(default)]
pub struct SceneConfig {
    pub n_points: usize,
    pub noise_px: f64,
    pub outlier_fraction: f64,
    pub depth_min: f64,
    pub depth_max: f64,
    pub baseline: f64,
    pub rotation_deg: f64,
    pub focal_px: f64,
    pub image_width: f64,
    pub image_height: f64,
    pub seed: u64,
}

impl Default for SceneConfig {
    fn default() -> Self {
        Self {
            n_points: 100,
            noise_px: 0.0,
            outlier_fraction: 0.0,
            depth_min: 2.0,
            depth_max: 6.0,
            baseline: 1.2,
            rotation_deg: 10.0,
            focal_px: 500.0,
            image_width: 640.0,
            image_height: 480.0,
            seed: 0,
        }
    }
}

impl SceneConfig {
    /// Outlier count under the floor convention.
    pub fn n_outliers(&self) -> usize {
        (self.outlier_fraction * self.n_points as f64).floor() as usize
    }

    pub fn validate(&self) -> Result<(), SynthError> {
        if self.n_points < 8 {
            return Err(SynthError::InvalidConfig(format!(
                "need at least 8 points, got {}",
                self.n_points
            )));
        }
        if !(0.0..1.0).contains(&self.outlier_fraction) {
            return Err(SynthError::InvalidConfig(format!(
                "outlier fraction must be in [0, 1), got {}",
                self.outlier_fraction
            )));
        }
        if self.n_points - self.n_outliers() < 8 {
            return Err(SynthError::InvalidConfig(format!(
                "outlier fraction {} on {} points leaves fewer than 8 inliers",
                self.outlier_fraction, self.n_points
            )));
        }
        if !(self.noise_px >= 0.0) {
            return Err(SynthError::InvalidConfig("noise sigma must be >= 0".into()));
        }
        if !(self.depth_min > 0.0 && self.depth_max > self.depth_min) {
            return Err(SynthError::InvalidConfig(format!(
                "depth range must satisfy 0 < near < far, got ({}, {})",
                self.depth_min, self.depth_max
            )));
        }
        if !(self.baseline > 0.0) {
            return Err(SynthError::InvalidConfig("baseline must be positive".into()));
        }
        if !(self.focal_px > 0.0 && self.image_width > 0.0 && self.image_height > 0.0) {
            return Err(SynthError::InvalidConfig(
                "focal length and image size must be positive".into(),
            ));
        }
        Ok(())
    }

    pub fn intrinsics(&self) -> Intrinsics {
        Intrinsics::new(
            self.focal_px,
            self.focal_px,
            self.image_width / 2.0,
            self.image_height / 2.0,
        )
        .expect("validated config")
    }

    /// Ground-truth relative pose: rotation about a fixed near-vertical
    /// axis, translation mostly along x, scaled to the baseline.
    pub fn relative_pose(&self) -> RelativePose {
        let axis = [0.05, 1.0, 0.05];
        let r = rot_axis_angle(&axis, self.rotation_deg);
        let dir = [1.0, 0.1, 0.05];
        let n = mat3::norm3(&dir);
        let t = [
            self.baseline * dir[0] / n,
            self.baseline * dir[1] / n,
            self.baseline * dir[2] / n,
        ];
        RelativePose::new(r, t).expect("constructed rotation and nonzero baseline")
    }
}

fn rot_axis_angle(axis: &Vec3, deg: f64) -> Mat3 {
    let n = mat3::norm3(axis);
    let (x, y, z) = (axis[0] / n, axis[1] / n, axis[2] / n);
    let (s, c) = deg.to_radians().sin_cos();
    let t = 1.0 - c;
    [
        [t * x * x + c, t * x * y - s * z, t * x * z + s * y],
        [t * x * y + s * z, t * y * y + c, t * y * z - s * x],
        [t * x * z - s * y, t * y * z + s * x, t * z * z + c],
    ]
}

/// Ground truth plus contaminated correspondences.
#[derive(Debug, Clone)]
pub struct Scene {
    pub config: SceneConfig,
    pub k_source: Intrinsics,
    pub k_target: Intrinsics,
    pub pose: RelativePose,
    pub f_gt: FundamentalMatrix,
    pub correspondences: CorrespondenceSet,
    pub inlier_mask: Vec<bool>,
}

impl Scene {
    /// Oracle confidence weights: 1 on inliers, 0 on outliers.
    pub fn oracle_weights(&self) -> Vec<f64> {
        self.inlier_mask
            .iter()
            .map(|&m| if m { 1.0 } else { 0.0 })
            .collect()
    }

    pub fn inlier_pairs(&self) -> Vec<PointPair> {
        self.correspondences
            .pairs()
            .iter()
            .zip(&self.inlier_mask)
            .filter(|(_, m)| **m)
            .map(|(p, _)| *p)
            .collect()
    }
}

pub fn generate_scene(config: &SceneConfig) -> Result<Scene, SynthError> {
    config.validate()?;
    let mut rng = Pcg32::new(config.seed);
    let k = config.intrinsics();
    let pose = config.relative_pose();
    let f_gt = fundamental_from_poses(&k.matrix(), &k.matrix(), &pose.r, &pose.t)?;

    let n = config.n_points;
    let (w, h) = (config.image_width, config.image_height);
    // Margin keeps exact projections strictly inside both images so small
    // noise rarely needs redraws.
    let margin = (3.0 * config.noise_px).min(w.min(h) * 0.1);

    // Exact projections in both views by rejection over the source frustum.
    let mut exact = Vec::with_capacity(n);
    let mut attempts = 0usize;
    let max_attempts = 10_000 * n;
    while exact.len() < n {
        attempts += 1;
        if attempts > max_attempts {
            return Err(SynthError::EmptyFrustum { attempts });
        }
        let u = rng.uniform(margin, w - margin);
        let v = rng.uniform(margin, h - margin);
        let z = rng.uniform(config.depth_min, config.depth_max);
        // Backproject through the source camera.
        let point = [
            (u - k.cx) / k.fx * z,
            (v - k.cy) / k.fy * z,
            z,
        ];
        let in_target = mat3::mat_vec(&pose.r, &point);
        let in_target = [
            in_target[0] + pose.t[0],
            in_target[1] + pose.t[1],
            in_target[2] + pose.t[2],
        ];
        let Some(xp) = k.project(&in_target) else {
            continue;
        };
        if xp[0] < margin || xp[0] > w - margin || xp[1] < margin || xp[1] > h - margin {
            continue;
        }
        exact.push(PointPair::new([u, v], xp));
    }

    // Outlier index selection by partial Fisher-Yates.
    let n_out = config.n_outliers();
    let mut indices: Vec<usize> = (0..n).collect();
    for i in 0..n_out {
        let j = i + rng.next_below((n - i) as u32) as usize;
        indices.swap(i, j);
    }
    let mut inlier_mask = vec![true; n];
    for &idx in &indices[..n_out] {
        inlier_mask[idx] = false;
    }

    // Contamination pass in index order: inliers get Gaussian noise on both
    // sides (redrawn, then clamped, to stay in bounds); outliers get a
    // uniform target point while keeping the exact source projection.
    let mut pairs = Vec::with_capacity(n);
    for (idx, base) in exact.iter().enumerate() {
        if inlier_mask[idx] {
            let mut noised = *base;
            if config.noise_px > 0.0 {
                for _ in 0..100 {
                    noised = PointPair::new(
                        [
                            base.x[0] + config.noise_px * rng.next_gaussian(),
                            base.x[1] + config.noise_px * rng.next_gaussian(),
                        ],
                        [
                            base.x_prime[0] + config.noise_px * rng.next_gaussian(),
                            base.x_prime[1] + config.noise_px * rng.next_gaussian(),
                        ],
                    );
                    if in_bounds(&noised, w, h) {
                        break;
                    }
                }
                if !in_bounds(&noised, w, h) {
                    noised = clamp_pair(&noised, w, h);
                }
            }
            pairs.push(noised);
        } else {
            let xp = [rng.uniform(0.0, w), rng.uniform(0.0, h)];
            pairs.push(PointPair::new(base.x, xp));
        }
    }

    Ok(Scene {
        config: config.clone(),
        k_source: k,
        k_target: k,
        pose,
        f_gt,
        correspondences: CorrespondenceSet::new(pairs)?,
        inlier_mask,
    })
}

fn in_bounds(pair: &PointPair, w: f64, h: f64) -> bool {
    pair.x[0] >= 0.0
        && pair.x[0] <= w
        && pair.x[1] >= 0.0
        && pair.x[1] <= h
        && pair.x_prime[0] >= 0.0
        && pair.x_prime[0] <= w
        && pair.x_prime[1] >= 0.0
        && pair.x_prime[1] <= h
}

fn clamp_pair(pair: &PointPair, w: f64, h: f64) -> PointPair {
    PointPair::new(
        [pair.x[0].clamp(0.0, w), pair.x[1].clamp(0.0, h)],
        [pair.x_prime[0].clamp(0.0, w), pair.x_prime[1].clamp(0.0, h)],
    )
}

/// JSON sidecar carrying everything but the correspondences.
#[derive(Debug, serde::Serialize, serde::Deserialize)]
pub struct SceneSidecar {
    pub config: SceneConfig,
    pub intrinsics_source: Intrinsics,
    pub intrinsics_target: Intrinsics,
    pub pose: RelativePose,
    pub f_gt: Mat3,
    pub inlier_mask: Vec<bool>,
}

impl Scene {
    pub fn sidecar(&self) -> SceneSidecar {
        SceneSidecar {
            config: self.config.clone(),
            intrinsics_source: self.k_source,
            intrinsics_target: self.k_target,
            pose: self.pose,
            f_gt: *self.f_gt.entries(),
            inlier_mask: self.inlier_mask.clone(),
        }
    }

    /// Write the correspondence CSV and the JSON sidecar.
    pub fn write_to<W1: Write, W2: Write>(
        &self,
        csv_writer: W1,
        mut json_writer: W2,
    ) -> Result<(), SynthError> {
        io::write_correspondences(&self.correspondences, csv_writer)?;
        serde_json::to_writer_pretty(&mut json_writer, &self.sidecar())
            .map_err(FormatError::from)?;
        json_writer.write_all(b"\n").map_err(FormatError::from)?;
        Ok(())
    }

    pub fn read_from<R1: Read, R2: Read>(csv_reader: R1, json_reader: R2) -> Result<Self, SynthError> {
        let correspondences = io::read_correspondences(csv_reader)?;
        let sidecar: SceneSidecar =
            serde_json::from_reader(json_reader).map_err(FormatError::from)?;
        Ok(Self {
            config: sidecar.config,
            k_source: sidecar.intrinsics_source,
            k_target: sidecar.intrinsics_target,
            pose: sidecar.pose,
            f_gt: FundamentalMatrix::from_matrix(sidecar.f_gt)?,
            correspondences,
            inlier_mask: sidecar.inlier_mask,
        })
    }
}
