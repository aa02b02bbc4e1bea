//! Iterative homogeneous least-squares solver for the robust objective
//! `min ρ(A f; ε, p)  s.t.  ||f|| = 1`.
//!
//! Each iteration alternates a closed-form update of the auxiliary variable
//! β with a homogeneous least-squares step:
//!
//! ```text
//! β-step:  β_n = sqrt((A f)_n² + ε)
//! f-step:  f   = u_min(A^T diag(β)^{p-2} A)
//! ```
//!
//! Both steps minimize the joint surrogate φ(f, β) exactly in their block,
//! so the robust objective trace is non-increasing and every limit point is
//! a stationary point of the original problem.

use crate::geometry::{
    self, CorrespondenceSet, FundamentalMatrix, GeometryError, ObservationMatrix,
};
use crate::mat3;
use crate::numerics::{self, NumericsError, SymMatrix9};
use crate::robust::{optimal_beta, rho, RobustError, RobustParams};
use thiserror::Error;

/// Stationarity level below which the solver checks second-order curvature;
/// see `negative_curvature_escape`.
const CURVATURE_SCREEN_TRIGGER: f64 = 1e-2;

#[derive(Debug, Error)]
pub enum IhlsError {
    #[error("invalid input: {0}")]
    InvalidInput(String),
    #[error(transparent)]
    Geometry(#[from] GeometryError),
    #[error(transparent)]
    Numerics(#[from] NumericsError),
    #[error(transparent)]
    Robust(#[from] RobustError),
}

/// Starting point for the iteration.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum InitStrategy {
    /// Plain least squares: smallest eigenvector of `A^T A` (the p = 2
    /// solution, which the iteration reproduces in one step).
    LeastSquares,
    /// Caller supplies the initial unit vector.
    Provided,
}

#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct IhlsConfig {
    pub params: RobustParams,
    pub max_iters: usize,
    /// Convergence checks are skipped for the first `min_iters` iterations;
    /// used to force extra iterations past convergence in diagnostics.
    pub min_iters: usize,
    /// Tolerance on the sign-insensitive iterate change
    /// `min(||f_next - f||, ||f_next + f||)`.
    pub tol: f64,
    /// Tolerance on the scale-normalized stationarity residual.
    pub kkt_tol: f64,
    pub init: InitStrategy,
}

impl Default for IhlsConfig {
    fn default() -> Self {
        Self {
            params: RobustParams::default(),
            max_iters: 100,
            min_iters: 0,
            tol: 1e-10,
            kkt_tol: 1e-9,
            init: InitStrategy::LeastSquares,
        }
    }
}

impl IhlsConfig {
    pub fn validate(&self) -> Result<(), IhlsError> {
        RobustParams::new(self.params.p, self.params.eps)?;
        if self.max_iters < 1 {
            return Err(IhlsError::InvalidInput("max_iters must be >= 1".into()));
        }
        if !(self.tol > 0.0) || !(self.kkt_tol > 0.0) {
            return Err(IhlsError::InvalidInput(
                "tol and kkt_tol must be positive".into(),
            ));
        }
        Ok(())
    }
}

/// Solver output: the unit solution vector with convergence diagnostics.
#[derive(Debug, Clone, serde::Serialize, serde::Deserialize)]
pub struct IhlsResult {
    /// Unit 9-vector minimizer, canonical sign.
    pub f_star: [f64; 9],
    /// `β_n = sqrt((A f_star)_n² + ε)`, recomputed at the final iterate.
    pub beta_star: Vec<f64>,
    pub iterations: usize,
    pub converged: bool,
    /// Stationarity residual `||(I - f f^T) Γ̃ f||_inf` at the final iterate,
    /// where Γ̃ is built on the gauge-normalized problem (rows scaled to
    /// unit mean norm) with the weight vector β^{p-2} normalized to unit
    /// maximum. The double normalization makes the absolute tolerance
    /// scale-free: raw weights reach `ε^{(p-2)/2}` (3e4 at the defaults),
    /// which would put the raw residual's floating-point evaluation floor
    /// above any useful tolerance, and row rescaling would otherwise move
    /// the measure by the squared scale.
    pub kkt_residual_inf: f64,
    /// Robust objective `ρ(A f^k; ε, p)` per iterate, starting at `f^0`.
    pub objective_trace: Vec<f64>,
    /// Set when `A^T A` has fewer than 8 significant eigenvalues; the solve
    /// proceeds but the nullspace direction is ambiguous.
    pub rank_deficient: bool,
    /// Eigenvalue gap of the final f-step matrix (adjoint conditioning hint).
    pub final_gap: f64,
    /// The tolerance the stationarity residual was checked against.
    pub kkt_tol: f64,
}

/// `Γ(β) = A^T diag(β)^{p-2} A`, built symmetric by construction.
pub fn gamma_matrix(
    a: &ObservationMatrix,
    beta: &[f64],
    p: f64,
) -> Result<SymMatrix9, IhlsError> {
    if beta.len() != a.n_rows() {
        return Err(IhlsError::InvalidInput(format!(
            "beta length {} does not match row count {}",
            beta.len(),
            a.n_rows()
        )));
    }
    if let Some(b) = beta.iter().find(|b| !(**b > 0.0)) {
        return Err(IhlsError::InvalidInput(format!(
            "beta entries must be strictly positive, got {b}"
        )));
    }
    let weights: Vec<f64> = beta.iter().map(|b| b.powf(p - 2.0)).collect();
    Ok(weighted_gram(a, &weights))
}

fn weighted_gram(a: &ObservationMatrix, weights: &[f64]) -> SymMatrix9 {
    let mut m = [[0.0; 9]; 9];
    for (row, &w) in a.rows().iter().zip(weights) {
        for i in 0..9 {
            let wi = w * row[i];
            for j in i..9 {
                m[i][j] += wi * row[j];
            }
        }
    }
    for i in 0..9 {
        for j in 0..i {
            m[i][j] = m[j][i];
        }
    }
    SymMatrix9::new(m).expect("gram matrix is symmetric by construction")
}

/// β-step: `β_n = sqrt((A f)_n² + ε)`.
pub fn beta_step(a: &ObservationMatrix, f: &[f64; 9], eps: f64) -> Vec<f64> {
    optimal_beta(&a.mul(f), eps)
}

/// f-step: smallest eigenvector of Γ, sign-aligned to the previous iterate.
pub fn f_step(gamma: &SymMatrix9, previous_f: &[f64; 9]) -> Result<[f64; 9], IhlsError> {
    let pair = numerics::smallest_eigenpair(gamma)?;
    Ok(numerics::sign_align(pair.vector, previous_f))
}

/// Scale-free stationarity residual: `||(I - f f^T) Γ̃ f||_inf` with the
/// weight vector `β^{p-2}` divided by its maximum. Normalizing the weights
/// rescales the objective by a constant, so the zero set is unchanged while
/// the residual becomes comparable against an absolute tolerance.
pub fn stationarity_residual_inf(a: &ObservationMatrix, f: &[f64; 9], params: &RobustParams) -> f64 {
    let r = a.mul(f);
    let mut w_max = 0.0f64;
    let mut weights = Vec::with_capacity(r.len());
    for rn in &r {
        let w = (rn * rn + params.eps).powf(0.5 * (params.p - 2.0));
        w_max = w_max.max(w);
        weights.push(w);
    }
    if w_max <= 0.0 {
        return f64::INFINITY;
    }
    // Γ̃ f = A^T (w̃ ∘ r)
    let mut y = [0.0; 9];
    for ((row, rn), w) in a.rows().iter().zip(&r).zip(&weights) {
        let c = (w / w_max) * rn;
        for i in 0..9 {
            y[i] += c * row[i];
        }
    }
    let mut lambda = 0.0;
    for i in 0..9 {
        lambda += f[i] * y[i];
    }
    let mut worst = 0.0f64;
    for i in 0..9 {
        worst = worst.max((y[i] - lambda * f[i]).abs());
    }
    worst
}

/// Short-memory Anderson acceleration of the fixed-point iteration.
///
/// The iteration map contracts linearly through a few dominant modes
/// (including complex pairs, which show up as slowly rotating steps);
/// combining the last few iterates to minimize the linearized fixed-point
/// residual jumps ahead of that crawl. Depth 3 covers one real mode plus a
/// complex pair. Candidates failing the objective or stationarity
/// safeguard are discarded, so acceptance never breaks the descent
/// contract.
#[derive(Default)]
struct AndersonHistory {
    /// (image of the map F(f), residual F(f) - f), newest last.
    entries: Vec<([f64; 9], [f64; 9])>,
}

impl AndersonHistory {
    const DEPTH: usize = 3;

    fn push(&mut self, image: [f64; 9], residual: [f64; 9]) {
        if self.entries.len() == Self::DEPTH {
            self.entries.remove(0);
        }
        self.entries.push((image, residual));
    }

    fn candidate(&self) -> Option<[f64; 9]> {
        let m = self.entries.len();
        if m < 2 {
            return None;
        }
        let k = m - 1; // number of difference columns
        let (f_last, r_last) = &self.entries[m - 1];
        // Least squares: minimize || r_last - sum_j gamma_j (r_{j+1}-r_j) ||.
        let mut cols_r = Vec::with_capacity(k);
        let mut cols_f = Vec::with_capacity(k);
        for j in 0..k {
            let (fj, rj) = &self.entries[j];
            let (fj1, rj1) = &self.entries[j + 1];
            cols_r.push(std::array::from_fn::<f64, 9, _>(|i| rj1[i] - rj[i]));
            cols_f.push(std::array::from_fn::<f64, 9, _>(|i| fj1[i] - fj[i]));
        }
        // Normal equations, at most 2x2.
        let mut gram = [[0.0; 2]; 2];
        let mut rhs = [0.0; 2];
        for (jc, col) in cols_r.iter().enumerate() {
            for (jc2, col2) in cols_r.iter().enumerate() {
                let mut acc = 0.0;
                for i in 0..9 {
                    acc += col[i] * col2[i];
                }
                gram[jc][jc2] = acc;
            }
            let mut acc = 0.0;
            for i in 0..9 {
                acc += col[i] * r_last[i];
            }
            rhs[jc] = acc;
        }
        let gamma = if k == 1 {
            if gram[0][0] < 1e-30 {
                return None;
            }
            [rhs[0] / gram[0][0], 0.0]
        } else {
            let det = gram[0][0] * gram[1][1] - gram[0][1] * gram[1][0];
            if det.abs() < 1e-18 * (gram[0][0] * gram[1][1]).abs().max(1e-300) {
                return None;
            }
            [
                (rhs[0] * gram[1][1] - rhs[1] * gram[0][1]) / det,
                (gram[0][0] * rhs[1] - gram[1][0] * rhs[0]) / det,
            ]
        };
        let mut cand = *f_last;
        for (jc, col) in cols_f.iter().enumerate() {
            for i in 0..9 {
                cand[i] -= gamma[jc] * col[i];
            }
        }
        let norm = norm9(&cand);
        if !(norm.is_finite() && norm > 1e-6) {
            return None;
        }
        for v in cand.iter_mut() {
            *v /= norm;
        }
        Some(cand)
    }
}

/// Levenberg–Marquardt polish on the stationarity system `g(f) = 0`. The
/// plain alternating iteration contracts only linearly, which is too slow
/// for tight stationarity tolerances on heavily contaminated problems.
/// Pure Newton steps overshoot in the strongly nonlinear transit region and
/// stall in curved ill-conditioned valleys; the adaptive damping
/// interpolates between gradient descent on ||g||² and the quadratically
/// convergent Newton endgame. The caller's acceptance rule (stationarity
/// strictly down, objective not up) keeps the descent contract intact; a
/// failed polish just falls back to the plain step.
fn newton_polish(
    a: &ObservationMatrix,
    f: &[f64; 9],
    params: &RobustParams,
    obj: f64,
    kkt: f64,
    kkt_tol: f64,
    mu: &mut f64,
) -> Option<([f64; 9], f64, f64)> {
    let g = crate::implicit_diff::kkt_residual_rows(a.rows(), f, params);
    let j = crate::implicit_diff::jacobian_rows(a.rows(), f, params);
    let mut jtj = [[0.0; 9]; 9];
    let mut jtg = [0.0; 9];
    for r in 0..9 {
        for c in 0..9 {
            let mut acc = 0.0;
            for k in 0..9 {
                acc += j[k][r] * j[k][c];
            }
            jtj[r][c] = acc;
        }
        let mut acc = 0.0;
        for k in 0..9 {
            acc += j[k][r] * g[k];
        }
        jtg[r] = acc;
    }
    let mut diag_max = 0.0f64;
    for (r, row) in jtj.iter().enumerate() {
        diag_max = diag_max.max(row[r]);
    }
    if !(diag_max > 0.0) {
        return None;
    }
    if !(mu.is_finite() && *mu > 0.0) {
        *mu = 1e-3;
    }
    for _ in 0..6 {
        let mut damped = jtj;
        let shift = *mu * diag_max;
        for r in 0..9 {
            damped[r][r] += shift;
        }
        if let Ok((delta, _)) = numerics::solve_linear(&damped, &jtg) {
            let mut next = *f;
            for i in 0..9 {
                next[i] -= delta[i];
            }
            let norm = norm9(&next);
            if norm.is_finite() && norm > 1e-6 {
                for v in next.iter_mut() {
                    *v /= norm;
                }
                let cand = numerics::sign_align(next, f);
                let obj_cand = rho(&a.mul(&cand), params);
                let kkt_cand = stationarity_residual_inf(a, &cand, params);
                let endgame = kkt < 100.0 * kkt_tol;
                let ok = if endgame {
                    obj_cand <= obj && kkt_cand < kkt
                } else {
                    (obj_cand < obj - 1e-15 * obj.abs() && kkt_cand < 10.0 * kkt)
                        || (obj_cand <= obj && kkt_cand < kkt)
                };
                if ok {
                    *mu = (*mu / 3.0).max(1e-12);
                    return Some((cand, obj_cand, kkt_cand));
                }
            }
        }
        *mu *= 9.0;
        if *mu > 1e12 {
            break;
        }
    }
    None
}

/// Second-order screen at a stationary point. Tangent curvature of the
/// sphere-constrained objective is carried by `P J P` (the rank-one terms
/// of J vanish under the projector), so a negative eigenvalue flags an
/// unstable fixed point — a saddle the plain iteration would linger at and
/// eventually escape on its own. Returns a strictly descending iterate
/// along the negative-curvature direction, or `None` at a genuine minimum.
fn negative_curvature_escape(
    a: &ObservationMatrix,
    f: &[f64; 9],
    params: &RobustParams,
    obj: f64,
) -> Option<[f64; 9]> {
    let j = crate::implicit_diff::jacobian_rows(a.rows(), f, params);
    // (P J P)_{rc} = J_rc - f_r (f^T J)_c - (J f)_r f_c + f_r (f^T J f) f_c,
    // symmetrized against rounding.
    let mut jf = [0.0; 9];
    let mut ftj = [0.0; 9];
    for r in 0..9 {
        let mut acc = 0.0;
        let mut acc_t = 0.0;
        for c in 0..9 {
            acc += j[r][c] * f[c];
            acc_t += f[c] * j[c][r];
        }
        jf[r] = acc;
        ftj[r] = acc_t;
    }
    let mut ftjf = 0.0;
    for r in 0..9 {
        ftjf += f[r] * jf[r];
    }
    let mut pj = [[0.0; 9]; 9];
    for r in 0..9 {
        for c in 0..9 {
            pj[r][c] = j[r][c] - f[r] * ftj[c] - jf[r] * f[c] + f[r] * ftjf * f[c];
        }
    }
    let mut m2 = [[0.0; 9]; 9];
    let mut scale = 0.0f64;
    for r in 0..9 {
        for c in 0..=r {
            let v = 0.5 * (pj[r][c] + pj[c][r]);
            m2[r][c] = v;
            m2[c][r] = v;
            scale = scale.max(v.abs());
        }
    }
    if scale == 0.0 {
        return None;
    }
    let sym = SymMatrix9::new(m2).ok()?;
    let pair = numerics::smallest_eigenpair(&sym).ok()?;
    if pair.value >= -1e-9 * scale {
        return None;
    }
    // Line search along ±v, keeping the deepest strict descent.
    let mut best: Option<([f64; 9], f64)> = None;
    for step in [0.5, 0.25, 0.1, 0.05, 0.02, 0.01, 0.003, 0.001, 3e-4, 1e-4] {
        for sign in [1.0, -1.0] {
            let mut cand = *f;
            for i in 0..9 {
                cand[i] += sign * step * pair.vector[i];
            }
            let norm = norm9(&cand);
            if !(norm.is_finite() && norm > 1e-6) {
                continue;
            }
            for v in cand.iter_mut() {
                *v /= norm;
            }
            let obj_cand = rho(&a.mul(&cand), params);
            if obj_cand < obj * (1.0 - 1e-14) && best.as_ref().map_or(true, |(_, o)| obj_cand < *o)
            {
                best = Some((cand, obj_cand));
            }
        }
    }
    best.map(|(cand, _)| numerics::sign_align(cand, f))
}

fn norm9(v: &[f64; 9]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

fn normalize9(v: &mut [f64; 9]) {
    let n = norm9(v);
    for x in v.iter_mut() {
        *x /= n;
    }
}

/// Sign-insensitive distance `min(||a - b||, ||a + b||)`.
fn iterate_distance(a: &[f64; 9], b: &[f64; 9]) -> f64 {
    let mut diff = 0.0;
    let mut sum = 0.0;
    for i in 0..9 {
        diff += (a[i] - b[i]) * (a[i] - b[i]);
        sum += (a[i] + b[i]) * (a[i] + b[i]);
    }
    diff.sqrt().min(sum.sqrt())
}

/// Run the alternating iteration on an observation matrix (weighted rows if
/// the caller scaled them). Non-convergence within `max_iters` is reported
/// through the `converged` flag, not an error; a rank-deficient `A` sets
/// `rank_deficient` and the solve proceeds.
pub fn ihls_solve(
    a: &ObservationMatrix,
    config: &IhlsConfig,
    f0: Option<&[f64; 9]>,
) -> Result<IhlsResult, IhlsError> {
    config.validate()?;
    if a.n_rows() < 8 {
        return Err(IhlsError::Geometry(GeometryError::UnderDetermined(
            a.n_rows(),
        )));
    }

    // Work on the gauge-normalized problem (rows divided by their mean
    // norm, ε by its square). The iterates are identical by the scale
    // equivariance of the objective, and every internal threshold becomes
    // scale-free, so rescaling the input cannot change the trajectory.
    let mean_norm = a
        .rows()
        .iter()
        .map(|row| row.iter().map(|v| v * v).sum::<f64>().sqrt())
        .sum::<f64>()
        / a.n_rows() as f64;
    let scale = if mean_norm.is_finite() && mean_norm > 0.0 {
        mean_norm
    } else {
        1.0
    };
    let original = a;
    let scaled_rows: Vec<[f64; 9]> = a
        .rows()
        .iter()
        .map(|row| std::array::from_fn(|i| row[i] / scale))
        .collect();
    let a = &ObservationMatrix::from_rows(scaled_rows);
    let scaled_params = RobustParams {
        p: config.params.p,
        eps: config.params.eps / (scale * scale),
    };
    let params = &scaled_params;
    // ρ(Af; ε, p) = scale^p · ρ(Āf; ε̄, p): trace entries are rescaled back
    // to the caller's objective.
    let obj_rescale = scale.powf(params.p);

    // Initial point plus rank diagnostics from the unweighted gram matrix.
    let gram = weighted_gram(a, &vec![1.0; a.n_rows()]);
    let spectrum = numerics::eigenvalues(&gram)?;
    let lambda_max = spectrum[8].abs().max(f64::MIN_POSITIVE);
    let significant = spectrum.iter().filter(|l| l.abs() > 1e-12 * lambda_max).count();
    let rank_deficient = significant < 8;

    let mut f = match config.init {
        InitStrategy::Provided => {
            let f0 = f0.ok_or_else(|| {
                IhlsError::InvalidInput("init strategy 'provided' requires an initial vector".into())
            })?;
            if (norm9(f0) - 1.0).abs() > 1e-9 {
                return Err(IhlsError::InvalidInput(
                    "provided initial vector must have unit norm".into(),
                ));
            }
            *f0
        }
        InitStrategy::LeastSquares => numerics::smallest_eigenpair(&gram)?.vector,
    };

    let mut objective_trace = vec![obj_rescale * rho(&a.mul(&f), params)];
    let mut converged = false;
    let mut iterations = 0;
    let mut final_gap = f64::NAN;
    let mut history = AndersonHistory::default();
    let mut lm_mu = 1e-3;

    while iterations < config.max_iters {
        let beta = beta_step(a, &f, params.eps);
        let gamma = gamma_matrix(a, &beta, params.p)?;
        let pair = numerics::smallest_eigenpair(&gamma)?;
        let mut f_next = numerics::sign_align(pair.vector, &f);
        final_gap = pair.gap;
        iterations += 1;

        let step: [f64; 9] = std::array::from_fn(|i| f_next[i] - f[i]);
        let mut obj_next = rho(&a.mul(&f_next), params);
        let mut kkt_next = stationarity_residual_inf(a, &f_next, params);

        history.push(f_next, step);
        if kkt_next >= config.kkt_tol {
            if let Some(cand) = history.candidate() {
                // The full extrapolation can leave a curved basin floor;
                // fractional blends follow it.
                'fractions: for frac in [1.0, 0.5, 0.25] {
                    let mut blended: [f64; 9] =
                        std::array::from_fn(|i| f_next[i] + frac * (cand[i] - f_next[i]));
                    let norm = norm9(&blended);
                    if !(norm.is_finite() && norm > 1e-6) {
                        continue;
                    }
                    for v in blended.iter_mut() {
                        *v /= norm;
                    }
                    let blended = numerics::sign_align(blended, &f_next);
                    let obj_cand = rho(&a.mul(&blended), params);
                    let kkt_cand = stationarity_residual_inf(a, &blended, params);
                    // Far from stationarity a strict objective decrease is
                    // the meaningful test (kkt is non-monotone along curved
                    // basins); the endgame also requires kkt improvement.
                    let endgame = kkt_next < 100.0 * config.kkt_tol;
                    let ok = if endgame {
                        obj_cand <= obj_next && kkt_cand < kkt_next
                    } else {
                        obj_cand < obj_next - 1e-15 * obj_next.abs()
                    };
                    if ok {
                        f_next = blended;
                        obj_next = obj_cand;
                        kkt_next = kkt_cand;
                        break 'fractions;
                    }
                }
            }
        }

        if kkt_next >= config.kkt_tol {
            if let Some((cand, obj_cand, kkt_cand)) =
                newton_polish(a, &f_next, params, obj_next, kkt_next, config.kkt_tol, &mut lm_mu)
            {
                f_next = cand;
                obj_next = obj_cand;
                kkt_next = kkt_cand;
            }
        }

        // A near-stationary point can be an unstable fixed point of the
        // alternation; rather than crawling toward it and terminating (or
        // lingering for dozens of iterations), jump along the
        // negative-curvature direction. The screen is a no-op at a genuine
        // minimum, and the trigger is scale-free because the residual is.
        if kkt_next < CURVATURE_SCREEN_TRIGGER.max(config.kkt_tol) {
            if let Some(escaped) = negative_curvature_escape(a, &f_next, params, obj_next) {
                f_next = escaped;
                obj_next = rho(&a.mul(&f_next), params);
                kkt_next = stationarity_residual_inf(a, &f_next, params);
                // Basin change: the step history no longer describes the map.
                history = AndersonHistory::default();
            }
        }

        objective_trace.push(obj_rescale * obj_next);
        let delta = iterate_distance(&f_next, &f);
        f = f_next;
        if iterations >= config.min_iters && (delta < config.tol || kkt_next < config.kkt_tol) {
            converged = true;
            break;
        }
    }

    normalize9(&mut f);
    numerics::canonical_sign(&mut f);
    let kkt_residual_inf = stationarity_residual_inf(a, &f, params);
    // β* is recomputed on the caller's original problem so the contract
    // β*_n = sqrt((A f*)_n² + ε) holds bit-exactly.
    let beta_star = beta_step(original, &f, config.params.eps);
    Ok(IhlsResult {
        f_star: f,
        beta_star,
        iterations,
        converged,
        kkt_residual_inf,
        objective_trace,
        rank_deficient,
        final_gap,
        kkt_tol: config.kkt_tol,
    })
}

/// Full fundamental-matrix estimate from correspondences: condition the
/// coordinates, stack (optionally weighted) observation rows, run the
/// solver, undo the conditioning, and project to rank 2.
pub fn solve_fundamental(
    set: &CorrespondenceSet,
    config: &IhlsConfig,
) -> Result<(FundamentalMatrix, IhlsResult), IhlsError> {
    if set.len() < 8 {
        return Err(IhlsError::Geometry(GeometryError::UnderDetermined(set.len())));
    }
    let (normed, t_source, t_target) = geometry::normalize(set)?;
    let a = geometry::build_observation_matrix(&normed, normed.weights())?;
    let result = ihls_solve(&a, config, None)?;
    let f_hat = mat3::mat_from_vec(&result.f_star);
    let f = geometry::denormalize_f(&f_hat, &t_source, &t_target)?;
    Ok((geometry::project_rank2(&f), result))
}
