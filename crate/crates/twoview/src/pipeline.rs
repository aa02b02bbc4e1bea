//! The recurrent estimation pipeline: a weighted least-squares
//! initialization followed by refinement rounds that re-estimate per-match
//! confidence weights from the current epipolar residuals and re-solve.
//!
//! The weight update is a pluggable [`WeightUpdater`]; the shipped analytic
//! updaters fill the slot a trained predictor would occupy. A classic
//! RANSAC eight-point estimator is included as a baseline.

use crate::geometry::{CorrespondenceSet, FundamentalMatrix, GeometryError};
use crate::ihls::{solve_fundamental, IhlsConfig, IhlsError, IhlsResult};
use crate::metrics::symmetric_epipolar_distance;
use crate::rng::Pcg32;
use crate::robust::RobustParams;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("invalid input: {0}")]
    InvalidInput(String),
    #[error("ransac found no hypothesis with at least 8 inliers (best {best})")]
    RansacFailed { best: usize },
    #[error(transparent)]
    Geometry(#[from] GeometryError),
    #[error(transparent)]
    Ihls(#[from] IhlsError),
}

/// Maps epipolar residuals (and optionally the correspondences themselves)
/// to nonnegative confidence weights. Implementations must return at least
/// 8 strictly positive weights whenever 8 finite residuals exist.
pub trait WeightUpdater {
    fn update(&self, r_epi: &[f64], set: &CorrespondenceSet) -> Vec<f64>;
}

/// Analytic weight updaters. Residuals are symmetric epipolar distances,
/// which scale as squared pixels; scale parameters are given in pixels.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum BuiltinUpdater {
    /// All-ones weights: every round reduces to the unweighted solve.
    Uniform,
    /// `γ = 1 / (1 + r / c²)`. Without an explicit scale, c adapts to
    /// 1.5 times the median distance proxy `sqrt(r)` of the current round.
    Cauchy { scale_px: Option<f64> },
    /// Biweight `γ = (1 - (d/c)²)²` for `d = sqrt(r) < c`, else 0. The
    /// adaptive scale is 3 times the median distance proxy.
    Tukey { scale_px: Option<f64> },
    /// `γ = 1` when `r < tau`, else 0; `tau` is in squared-pixel units.
    HardThreshold { tau: f64 },
}

impl BuiltinUpdater {
    fn median_distance(r_epi: &[f64]) -> Option<f64> {
        let mut finite: Vec<f64> = r_epi
            .iter()
            .filter(|r| r.is_finite())
            .map(|r| r.max(0.0).sqrt())
            .collect();
        if finite.is_empty() {
            return None;
        }
        finite.sort_by(|a, b| a.partial_cmp(b).expect("finite"));
        Some(finite[finite.len() / 2])
    }
}

impl WeightUpdater for BuiltinUpdater {
    fn update(&self, r_epi: &[f64], _set: &CorrespondenceSet) -> Vec<f64> {
        let weights = match self {
            Self::Uniform => vec![1.0; r_epi.len()],
            Self::Cauchy { scale_px } => {
                let c = scale_px
                    .or_else(|| Self::median_distance(r_epi).map(|m| 1.5 * m))
                    .unwrap_or(1.0)
                    .max(1e-6);
                let c2 = c * c;
                r_epi
                    .iter()
                    .map(|r| if r.is_finite() { 1.0 / (1.0 + r / c2) } else { 0.0 })
                    .collect()
            }
            Self::Tukey { scale_px } => {
                let c = scale_px
                    .or_else(|| Self::median_distance(r_epi).map(|m| 3.0 * m))
                    .unwrap_or(1.0)
                    .max(1e-6);
                r_epi
                    .iter()
                    .map(|r| {
                        if !r.is_finite() {
                            return 0.0;
                        }
                        let d = r.max(0.0).sqrt();
                        if d < c {
                            let q = 1.0 - (d / c) * (d / c);
                            q * q
                        } else {
                            0.0
                        }
                    })
                    .collect()
            }
            Self::HardThreshold { tau } => r_epi
                .iter()
                .map(|r| if r.is_finite() && *r < *tau { 1.0 } else { 0.0 })
                .collect(),
        };
        ensure_min_support(weights, r_epi)
    }
}

/// Guarantee at least 8 strictly positive weights by promoting the
/// smallest-residual rows to weight 1 when an updater zeroes too many.
fn ensure_min_support(mut weights: Vec<f64>, r_epi: &[f64]) -> Vec<f64> {
    let positive = weights.iter().filter(|w| **w > 0.0).count();
    if positive >= 8 {
        return weights;
    }
    let mut order: Vec<usize> = (0..weights.len()).collect();
    order.sort_by(|&a, &b| {
        let ka = if r_epi[a].is_finite() { r_epi[a] } else { f64::INFINITY };
        let kb = if r_epi[b].is_finite() { r_epi[b] } else { f64::INFINITY };
        ka.partial_cmp(&kb).expect("no NaN keys").then(a.cmp(&b))
    });
    for &idx in order.iter().take(8) {
        if r_epi[idx].is_finite() && weights[idx] <= 0.0 {
            weights[idx] = 1.0;
        }
    }
    weights
}

/// Source of the round-zero weights.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum InitialWeights {
    Uniform,
    /// Use the correspondence set's own weight column; error when absent.
    Provided,
    /// Matching-confidence default: the weight column when present,
    /// uniform otherwise.
    SideInfoConfidence,
}

#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(default)]
pub struct RefinementConfig {
    /// Number of refinement rounds after the initial solve.
    pub m_iterations: usize,
    pub updater: BuiltinUpdater,
    pub initial_weights: InitialWeights,
    pub ihls: IhlsConfig,
}

impl Default for RefinementConfig {
    fn default() -> Self {
        Self {
            m_iterations: 2,
            updater: BuiltinUpdater::Cauchy { scale_px: None },
            initial_weights: InitialWeights::SideInfoConfidence,
            ihls: IhlsConfig::default(),
        }
    }
}

/// Per-round solver diagnostics kept by the pipeline.
#[derive(Debug, Clone, serde::Serialize, serde::Deserialize)]
pub struct RoundDiagnostics {
    pub iterations: usize,
    pub converged: bool,
    pub kkt_residual_inf: f64,
    pub objective_final: f64,
}

impl From<&IhlsResult> for RoundDiagnostics {
    fn from(r: &IhlsResult) -> Self {
        Self {
            iterations: r.iterations,
            converged: r.converged,
            kkt_residual_inf: r.kkt_residual_inf,
            objective_final: *r.objective_trace.last().expect("nonempty trace"),
        }
    }
}

#[derive(Debug, Clone)]
pub struct PipelineResult {
    /// Estimates from every round: `F_0 ..= F_M`.
    pub f_per_round: Vec<FundamentalMatrix>,
    pub final_weights: Vec<f64>,
    pub rounds: Vec<RoundDiagnostics>,
}

impl PipelineResult {
    pub fn final_f(&self) -> &FundamentalMatrix {
        self.f_per_round.last().expect("at least the initial round")
    }
}

fn least_squares_config(base: &IhlsConfig) -> IhlsConfig {
    IhlsConfig {
        params: RobustParams {
            p: 2.0,
            eps: base.params.eps,
        },
        ..*base
    }
}

/// Weighted least-squares initialization: the smallest eigenvector of
/// `(diag(γ0) A)^T (diag(γ0) A)` on conditioned coordinates, rank-2
/// projected. Exactly the p = 2 instance of the solver, which converges in
/// one iteration.
pub fn initial_solve(
    set: &CorrespondenceSet,
    gamma0: &[f64],
) -> Result<(FundamentalMatrix, IhlsResult), PipelineError> {
    initial_solve_with(set, gamma0, &IhlsConfig::default())
}

pub fn initial_solve_with(
    set: &CorrespondenceSet,
    gamma0: &[f64],
    base: &IhlsConfig,
) -> Result<(FundamentalMatrix, IhlsResult), PipelineError> {
    let weighted = set.reweighted(gamma0.to_vec())?;
    Ok(solve_fundamental(&weighted, &least_squares_config(base))?)
}

/// One refinement round: epipolar residuals of the previous estimate drive
/// the updater, and the reweighted robust solve produces the next estimate.
pub fn refine_round(
    set: &CorrespondenceSet,
    f_prev: &FundamentalMatrix,
    updater: &dyn WeightUpdater,
    ihls_config: &IhlsConfig,
) -> Result<(FundamentalMatrix, Vec<f64>, IhlsResult), PipelineError> {
    let r_epi: Vec<f64> = set
        .pairs()
        .iter()
        .map(|pair| symmetric_epipolar_distance(f_prev.entries(), pair))
        .collect();
    let gamma = updater.update(&r_epi, set);
    let weighted = set.reweighted(gamma.clone())?;
    let (f, result) = solve_fundamental(&weighted, ihls_config)?;
    Ok((f, gamma, result))
}

/// Initial solve plus `m_iterations` refinement rounds, recording every
/// intermediate estimate.
pub fn run_pipeline(
    set: &CorrespondenceSet,
    config: &RefinementConfig,
) -> Result<PipelineResult, PipelineError> {
    run_pipeline_with(set, config, &config.updater)
}

/// Pipeline with a caller-supplied updater in the refinement slot.
pub fn run_pipeline_with(
    set: &CorrespondenceSet,
    config: &RefinementConfig,
    updater: &dyn WeightUpdater,
) -> Result<PipelineResult, PipelineError> {
    let gamma0 = match config.initial_weights {
        InitialWeights::Uniform => vec![1.0; set.len()],
        InitialWeights::Provided => set
            .weights()
            .ok_or_else(|| {
                PipelineError::InvalidInput(
                    "initial-weights 'provided' requires a weight column".into(),
                )
            })?
            .to_vec(),
        InitialWeights::SideInfoConfidence => set
            .weights()
            .map(<[f64]>::to_vec)
            .unwrap_or_else(|| vec![1.0; set.len()]),
    };

    let (f0, r0) = initial_solve_with(set, &gamma0, &config.ihls)?;
    let mut f_per_round = vec![f0];
    let mut rounds = vec![RoundDiagnostics::from(&r0)];
    let mut weights = gamma0;
    for _ in 0..config.m_iterations {
        let prev = *f_per_round.last().expect("nonempty");
        let (f, gamma, result) = refine_round(set, &prev, updater, &config.ihls)?;
        f_per_round.push(f);
        rounds.push(RoundDiagnostics::from(&result));
        weights = gamma;
    }
    Ok(PipelineResult {
        f_per_round,
        final_weights: weights,
        rounds,
    })
}

/// Classic hypothesize-and-verify eight-point estimator with symmetric
/// epipolar inlier scoring and a final least-squares re-solve on the best
/// consensus set. Inliers satisfy `r_epi < threshold_px²`. The re-solve is
/// iterated with re-scoring until the consensus stabilizes (minimal-sample
/// hypotheses amplify noise badly, so a single re-solve underfits).
pub fn ransac_eight_point(
    set: &CorrespondenceSet,
    iterations: usize,
    inlier_threshold_px: f64,
    seed: u64,
) -> Result<(FundamentalMatrix, Vec<bool>), PipelineError> {
    let n = set.len();
    if n < 8 {
        return Err(PipelineError::Geometry(GeometryError::UnderDetermined(n)));
    }
    if !(inlier_threshold_px > 0.0) {
        return Err(PipelineError::InvalidInput(
            "inlier threshold must be positive".into(),
        ));
    }
    let threshold = inlier_threshold_px * inlier_threshold_px;
    let ls_config = least_squares_config(&IhlsConfig::default());
    let score_mask = |f: &FundamentalMatrix| -> Vec<bool> {
        set.pairs()
            .iter()
            .map(|pair| symmetric_epipolar_distance(f.entries(), pair) < threshold)
            .collect()
    };
    let solve_on = |mask: &[bool]| -> Result<FundamentalMatrix, PipelineError> {
        let consensus: Vec<_> = set
            .pairs()
            .iter()
            .zip(mask)
            .filter(|(_, m)| **m)
            .map(|(p, _)| *p)
            .collect();
        let consensus_set = CorrespondenceSet::new(consensus)?;
        Ok(solve_fundamental(&consensus_set, &ls_config)?.0)
    };

    let mut rng = Pcg32::new(seed);
    let mut indices: Vec<usize> = (0..n).collect();
    let mut best_count = 0usize;
    let mut best_mask: Option<Vec<bool>> = None;

    for _ in 0..iterations {
        for i in 0..8 {
            let j = i + rng.next_below((n - i) as u32) as usize;
            indices.swap(i, j);
        }
        let sample: Vec<_> = indices[..8]
            .iter()
            .map(|&i| set.pairs()[i])
            .collect();
        let minimal = match CorrespondenceSet::new(sample) {
            Ok(s) => s,
            Err(_) => continue,
        };
        // Degenerate minimal samples fail the solve; skip the hypothesis.
        let Ok((f, _)) = solve_fundamental(&minimal, &ls_config) else {
            continue;
        };
        let mask = score_mask(&f);
        let count = mask.iter().filter(|m| **m).count();
        if count > best_count {
            best_count = count;
            best_mask = Some(mask);
        }
    }

    let Some(mut mask) = best_mask.filter(|_| best_count >= 8) else {
        return Err(PipelineError::RansacFailed { best: best_count });
    };
    // Local optimization with an annealed threshold: minimal-sample models
    // are noisy, so growing the consensus from a widened band before
    // narrowing to the target threshold avoids undersized support.
    let mut f = solve_on(&mask)?;
    for factor in [8.0, 4.0, 2.0, 1.0] {
        let widened: Vec<bool> = set
            .pairs()
            .iter()
            .map(|pair| {
                symmetric_epipolar_distance(f.entries(), pair) < threshold * factor * factor
            })
            .collect();
        if widened.iter().filter(|m| **m).count() >= 8 {
            mask = widened;
            f = solve_on(&mask)?;
        }
    }
    for _ in 0..10 {
        let rescored = score_mask(&f);
        if rescored.iter().filter(|m| **m).count() < 8 {
            break;
        }
        if rescored == mask {
            break;
        }
        mask = rescored;
        f = solve_on(&mask)?;
    }
    Ok((f, mask))
}
