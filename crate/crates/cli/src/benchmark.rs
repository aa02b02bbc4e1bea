//! Seeded synthetic benchmark: per-trial scene generation, estimation with
//! each configured method, pose-error evaluation, and AUC aggregation.
//!
//! Trial t uses scene seed `base_seed + t`; everything downstream is
//! deterministic, so reruns with an identical config produce byte-identical
//! result files.

use crate::CliError;
use serde::{Deserialize, Serialize};
use twoview::geometry::CorrespondenceSet;
use twoview::ihls::{solve_fundamental, IhlsConfig};
use twoview::metrics::{pose_auc, rotation_angle_error, translation_angle_error};
use twoview::pipeline::{ransac_eight_point, run_pipeline, RefinementConfig};
use twoview::pose::recover_pose;
use twoview::robust::RobustParams;
use twoview::synth::{generate_scene, Scene, SceneConfig};
use twoview::FundamentalMatrix;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Method {
    LeastSquares,
    Ihls,
    Ransac,
    Pipeline,
    /// Ground-truth inlier weights; only meaningful on generated scenes,
    /// where it upper-bounds every practical method.
    Oracle,
}

impl Method {
    pub fn name(&self) -> &'static str {
        match self {
            Method::LeastSquares => "least-squares",
            Method::Ihls => "ihls",
            Method::Ransac => "ransac",
            Method::Pipeline => "pipeline",
            Method::Oracle => "oracle",
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct RansacParams {
    pub iterations: usize,
    pub inlier_threshold_px: f64,
}

impl Default for RansacParams {
    fn default() -> Self {
        Self {
            iterations: 500,
            inlier_threshold_px: 3.0,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct ExperimentConfig {
    pub scene: SceneConfig,
    pub pipeline: RefinementConfig,
    pub trials: usize,
    pub methods: Vec<Method>,
    pub thresholds_deg: Vec<f64>,
    pub ransac: RansacParams,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            scene: SceneConfig {
                n_points: 200,
                noise_px: 1.0,
                outlier_fraction: 0.4,
                ..SceneConfig::default()
            },
            pipeline: RefinementConfig::default(),
            trials: 20,
            methods: vec![
                Method::LeastSquares,
                Method::Ihls,
                Method::Ransac,
                Method::Pipeline,
            ],
            thresholds_deg: vec![5.0, 10.0, 20.0],
            ransac: RansacParams::default(),
        }
    }
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<(), CliError> {
        if self.trials < 1 {
            return Err(CliError::InvalidConfig("trials must be >= 1".into()));
        }
        if self.methods.is_empty() {
            return Err(CliError::InvalidConfig("methods must be nonempty".into()));
        }
        self.scene
            .validate()
            .map_err(|e| CliError::InvalidConfig(e.to_string()))?;
        Ok(())
    }
}

/// One method's outcome on one trial. `None` errors mark failed trials
/// (they count as infinite pose error in the AUC).
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MethodTrial {
    pub method: Method,
    pub ok: bool,
    pub rot_deg: Option<f64>,
    pub trans_deg: Option<f64>,
    pub max_deg: Option<f64>,
    pub error: Option<String>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrialRecord {
    pub trial: usize,
    pub seed: u64,
    pub methods: Vec<MethodTrial>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MethodSummary {
    pub method: Method,
    /// (threshold in degrees, AUC fraction), ascending thresholds.
    pub auc: Vec<(f64, f64)>,
    pub median_rot_deg: f64,
    pub median_max_deg: f64,
    pub failures: usize,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BenchmarkReport {
    pub config: ExperimentConfig,
    pub trials: Vec<TrialRecord>,
    pub summary: Vec<MethodSummary>,
}

impl BenchmarkReport {
    pub fn summary_for(&self, method: Method) -> Option<&MethodSummary> {
        self.summary.iter().find(|s| s.method == method)
    }
}

fn estimate(
    method: Method,
    scene: &Scene,
    set: &CorrespondenceSet,
    config: &ExperimentConfig,
    seed: u64,
) -> Result<FundamentalMatrix, String> {
    match method {
        Method::LeastSquares => {
            let ls = IhlsConfig {
                params: RobustParams {
                    p: 2.0,
                    eps: config.pipeline.ihls.params.eps,
                },
                ..config.pipeline.ihls
            };
            solve_fundamental(set, &ls)
                .map(|(f, _)| f)
                .map_err(|e| e.to_string())
        }
        Method::Ihls => solve_fundamental(set, &config.pipeline.ihls)
            .map(|(f, _)| f)
            .map_err(|e| e.to_string()),
        Method::Ransac => ransac_eight_point(
            set,
            config.ransac.iterations,
            config.ransac.inlier_threshold_px,
            seed,
        )
        .map(|(f, _)| f)
        .map_err(|e| e.to_string()),
        Method::Pipeline => run_pipeline(set, &config.pipeline)
            .map(|r| *r.final_f())
            .map_err(|e| e.to_string()),
        Method::Oracle => {
            let weighted = set
                .clone()
                .with_weights(scene.oracle_weights())
                .map_err(|e| e.to_string())?;
            solve_fundamental(&weighted, &config.pipeline.ihls)
                .map(|(f, _)| f)
                .map_err(|e| e.to_string())
        }
    }
}

fn evaluate(scene: &Scene, f: &FundamentalMatrix) -> Result<(f64, f64), String> {
    let pose = recover_pose(
        f,
        scene.correspondences.pairs(),
        &scene.k_source,
        &scene.k_target,
    )
    .map_err(|e| e.to_string())?;
    let rot = rotation_angle_error(&pose.r, &scene.pose.r).map_err(|e| e.to_string())?;
    let trans = translation_angle_error(&pose.t, &scene.pose.t).map_err(|e| e.to_string())?;
    Ok((rot, trans))
}

fn median(mut values: Vec<f64>) -> f64 {
    values.sort_by(|a, b| a.partial_cmp(b).expect("no NaN"));
    values[values.len() / 2]
}

pub fn run_benchmark(config: &ExperimentConfig) -> Result<BenchmarkReport, CliError> {
    config.validate()?;
    let mut trials = Vec::with_capacity(config.trials);
    for trial in 0..config.trials {
        let seed = config.scene.seed.wrapping_add(trial as u64);
        let scene_config = SceneConfig {
            seed,
            ..config.scene.clone()
        };
        let scene = generate_scene(&scene_config).map_err(|e| CliError::InvalidConfig(e.to_string()))?;
        let set = scene.correspondences.clone();
        let methods = config
            .methods
            .iter()
            .map(|&method| {
                let outcome = estimate(method, &scene, &set, config, seed)
                    .and_then(|f| evaluate(&scene, &f));
                match outcome {
                    Ok((rot, trans)) => MethodTrial {
                        method,
                        ok: true,
                        rot_deg: Some(rot),
                        trans_deg: Some(trans),
                        max_deg: Some(rot.max(trans)),
                        error: None,
                    },
                    Err(message) => MethodTrial {
                        method,
                        ok: false,
                        rot_deg: None,
                        trans_deg: None,
                        max_deg: None,
                        error: Some(message),
                    },
                }
            })
            .collect();
        trials.push(TrialRecord {
            trial,
            seed,
            methods,
        });
    }

    let summary = config
        .methods
        .iter()
        .map(|&method| {
            let per_trial: Vec<&MethodTrial> = trials
                .iter()
                .map(|t| {
                    t.methods
                        .iter()
                        .find(|m| m.method == method)
                        .expect("method recorded for every trial")
                })
                .collect();
            let max_errors: Vec<f64> = per_trial
                .iter()
                .map(|m| m.max_deg.unwrap_or(f64::INFINITY))
                .collect();
            let rot_errors: Vec<f64> = per_trial
                .iter()
                .map(|m| m.rot_deg.unwrap_or(f64::INFINITY))
                .collect();
            let auc_values = pose_auc(&max_errors, &config.thresholds_deg)
                .expect("nonempty errors and valid thresholds");
            MethodSummary {
                method,
                auc: config
                    .thresholds_deg
                    .iter()
                    .copied()
                    .zip(auc_values)
                    .collect(),
                median_rot_deg: median(rot_errors),
                median_max_deg: median(max_errors),
                failures: per_trial.iter().filter(|m| !m.ok).count(),
            }
        })
        .collect();

    Ok(BenchmarkReport {
        config: config.clone(),
        trials,
        summary,
    })
}
