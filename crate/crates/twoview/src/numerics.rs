//! Deterministic dense linear algebra for the 9×9 systems at the heart of
//! the solver: symmetric eigendecomposition by cyclic Jacobi rotations and
//! LU-based adjoint solves.
//!
//! Everything here is plain `f64` arithmetic with a fixed operation order,
//! so repeated runs produce identical bits.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum NumericsError {
    /// Input violated a documented precondition (e.g. asymmetry).
    #[error("contract violation: {0}")]
    ContractViolation(String),
    /// The eigen iteration failed to reach its tolerance.
    #[error("jacobi eigendecomposition did not converge within {sweeps} sweeps")]
    EigenNonConvergence { sweeps: usize },
    /// Linear system too ill-conditioned to solve reliably.
    #[error("singular or near-singular system: 1-norm condition estimate {condition:.3e}")]
    SingularSystem { condition: f64 },
}

/// Condition-number ceiling for [`solve_transposed`].
pub const CONDITION_LIMIT: f64 = 1e12;

const JACOBI_MAX_SWEEPS: usize = 100;
const JACOBI_TOL_FACTOR: f64 = 1e-14;

/// A 9×9 real symmetric matrix.
///
/// Construction symmetrizes the input and rejects matrices whose asymmetry
/// exceeds `1e-12` relative to the largest entry.
#[derive(Debug, Clone, PartialEq)]
pub struct SymMatrix9 {
    data: [[f64; 9]; 9],
}

impl SymMatrix9 {
    pub fn new(data: [[f64; 9]; 9]) -> Result<Self, NumericsError> {
        let mut max_abs = 0.0f64;
        let mut max_asym = 0.0f64;
        for i in 0..9 {
            for j in 0..9 {
                if !data[i][j].is_finite() {
                    return Err(NumericsError::ContractViolation(
                        "non-finite matrix entry".into(),
                    ));
                }
                max_abs = max_abs.max(data[i][j].abs());
                if j > i {
                    max_asym = max_asym.max((data[i][j] - data[j][i]).abs());
                }
            }
        }
        if max_asym > 1e-12 * max_abs.max(f64::MIN_POSITIVE) {
            return Err(NumericsError::ContractViolation(format!(
                "matrix is not symmetric: max |a_ij - a_ji| = {max_asym:.3e}"
            )));
        }
        let mut sym = data;
        for i in 0..9 {
            for j in (i + 1)..9 {
                let avg = 0.5 * (data[i][j] + data[j][i]);
                sym[i][j] = avg;
                sym[j][i] = avg;
            }
        }
        Ok(Self { data: sym })
    }

    pub fn as_array(&self) -> &[[f64; 9]; 9] {
        &self.data
    }

    pub fn mul_vec(&self, v: &[f64; 9]) -> [f64; 9] {
        let mut out = [0.0; 9];
        for i in 0..9 {
            let mut acc = 0.0;
            for j in 0..9 {
                acc += self.data[i][j] * v[j];
            }
            out[i] = acc;
        }
        out
    }

    /// Max-norm of the matrix (largest absolute entry).
    pub fn max_norm(&self) -> f64 {
        let mut m = 0.0f64;
        for row in &self.data {
            for v in row {
                m = m.max(v.abs());
            }
        }
        m
    }
}

/// Eigenvalue/eigenvector pair with the spectral gap to the next eigenvalue.
#[derive(Debug, Clone)]
pub struct EigenPair {
    pub value: f64,
    /// Unit eigenvector, sign fixed so its largest-magnitude entry is positive.
    pub vector: [f64; 9],
    /// Gap to the second-smallest eigenvalue, `lambda_2 - lambda_1`.
    pub gap: f64,
}

/// Cyclic Jacobi eigendecomposition of a small symmetric matrix.
///
/// Returns eigenvalues in ascending order and the matching eigenvectors as
/// columns (`vecs[i][k]` is component `i` of eigenvector `k`). Converges when
/// the off-diagonal Frobenius norm drops below `1e-14` times the Frobenius
/// norm of the input.
pub(crate) fn jacobi_eigh<const N: usize>(
    m: &[[f64; N]; N],
    max_sweeps: usize,
) -> Result<([f64; N], [[f64; N]; N]), NumericsError> {
    let mut a = *m;
    let mut v = [[0.0; N]; N];
    for (i, row) in v.iter_mut().enumerate() {
        row[i] = 1.0;
    }

    let mut frob = 0.0;
    for row in &a {
        for x in row {
            frob += x * x;
        }
    }
    let frob = frob.sqrt();
    if frob == 0.0 {
        // Zero matrix: identity eigenvectors, zero eigenvalues.
        return Ok(sorted_eigh(a, v));
    }
    let tol = JACOBI_TOL_FACTOR * frob;

    for _ in 0..max_sweeps {
        let mut off = 0.0;
        for i in 0..N {
            for j in (i + 1)..N {
                off += 2.0 * a[i][j] * a[i][j];
            }
        }
        if off.sqrt() < tol {
            return Ok(sorted_eigh(a, v));
        }
        for p in 0..N - 1 {
            for q in (p + 1)..N {
                let apq = a[p][q];
                if apq == 0.0 {
                    continue;
                }
                let tau = (a[q][q] - a[p][p]) / (2.0 * apq);
                let t = if tau >= 0.0 {
                    1.0 / (tau + (1.0 + tau * tau).sqrt())
                } else {
                    -1.0 / (-tau + (1.0 + tau * tau).sqrt())
                };
                let c = 1.0 / (1.0 + t * t).sqrt();
                let s = t * c;

                let app = a[p][p];
                let aqq = a[q][q];
                a[p][p] = app - t * apq;
                a[q][q] = aqq + t * apq;
                a[p][q] = 0.0;
                a[q][p] = 0.0;
                for k in 0..N {
                    if k != p && k != q {
                        let akp = a[k][p];
                        let akq = a[k][q];
                        a[k][p] = c * akp - s * akq;
                        a[p][k] = a[k][p];
                        a[k][q] = s * akp + c * akq;
                        a[q][k] = a[k][q];
                    }
                }
                for row in v.iter_mut() {
                    let vp = row[p];
                    let vq = row[q];
                    row[p] = c * vp - s * vq;
                    row[q] = s * vp + c * vq;
                }
            }
        }
    }
    Err(NumericsError::EigenNonConvergence {
        sweeps: max_sweeps,
    })
}

fn sorted_eigh<const N: usize>(
    a: [[f64; N]; N],
    v: [[f64; N]; N],
) -> ([f64; N], [[f64; N]; N]) {
    let mut idx: [usize; N] = [0; N];
    for (i, slot) in idx.iter_mut().enumerate() {
        *slot = i;
    }
    idx.sort_by(|&i, &j| a[i][i].partial_cmp(&a[j][j]).expect("finite eigenvalues"));
    let mut vals = [0.0; N];
    let mut vecs = [[0.0; N]; N];
    for (k, &src) in idx.iter().enumerate() {
        vals[k] = a[src][src];
        for i in 0..N {
            vecs[i][k] = v[i][src];
        }
    }
    (vals, vecs)
}

/// Eigenpair of the smallest eigenvalue of a symmetric 9×9 matrix.
///
/// The returned vector has unit norm and canonical sign (largest-magnitude
/// entry positive); `gap` reports the distance to the second-smallest
/// eigenvalue. After the Jacobi sweep the vector is polished with up to two
/// inverse-iteration steps, which pushes the residual `||Mu - λu||` from the
/// sweep's `O(eps ||M||_2)` level down to the evaluation floor.
pub fn smallest_eigenpair(m: &SymMatrix9) -> Result<EigenPair, NumericsError> {
    let (vals, vecs) = jacobi_eigh(&m.data, JACOBI_MAX_SWEEPS)?;
    let mut vector = [0.0; 9];
    for i in 0..9 {
        vector[i] = vecs[i][0];
    }
    let mut value = vals[0];
    refine_eigenpair(&m.data, &mut value, &mut vector);
    canonical_sign(&mut vector);
    Ok(EigenPair {
        value,
        vector,
        gap: vals[1] - value,
    })
}

fn eigen_residual_inf(m: &[[f64; 9]; 9], value: f64, vector: &[f64; 9]) -> f64 {
    let mut worst = 0.0f64;
    for i in 0..9 {
        let mut acc = 0.0;
        for j in 0..9 {
            acc += m[i][j] * vector[j];
        }
        worst = worst.max((acc - value * vector[i]).abs());
    }
    worst
}

/// Inverse iteration with Rayleigh-quotient shift updates. Keeps the best
/// iterate seen, so a failed refinement never degrades the input.
fn refine_eigenpair(m: &[[f64; 9]; 9], value: &mut f64, vector: &mut [f64; 9]) {
    let mut scale = 0.0f64;
    for row in m {
        for v in row {
            scale = scale.max(v.abs());
        }
    }
    if scale == 0.0 {
        return;
    }
    let mut best_resid = eigen_residual_inf(m, *value, vector);
    for _ in 0..2 {
        if best_resid <= 8.0 * f64::EPSILON * scale {
            break;
        }
        // Shift slightly off the eigenvalue so the factorization has a pivot.
        let shift = *value - 1e2 * f64::EPSILON * scale;
        let mut shifted = *m;
        for i in 0..9 {
            shifted[i][i] -= shift;
        }
        let Some(z) = lu_solve_unchecked(&shifted, vector) else {
            break;
        };
        let norm: f64 = z.iter().map(|x| x * x).sum::<f64>().sqrt();
        if !(norm.is_finite() && norm > 0.0) {
            break;
        }
        let mut cand = [0.0; 9];
        for i in 0..9 {
            cand[i] = z[i] / norm;
        }
        let aligned = sign_align(cand, vector);
        let mut rq = 0.0;
        for i in 0..9 {
            let mut acc = 0.0;
            for j in 0..9 {
                acc += m[i][j] * aligned[j];
            }
            rq += aligned[i] * acc;
        }
        let resid = eigen_residual_inf(m, rq, &aligned);
        if resid < best_resid {
            best_resid = resid;
            *vector = aligned;
            *value = rq;
        } else {
            break;
        }
    }
}

/// LU solve without the condition-number gate; `None` only on an exactly
/// zero pivot. Inverse iteration relies on solving nearly singular systems.
fn lu_solve_unchecked(m: &[[f64; 9]; 9], b: &[f64; 9]) -> Option<[f64; 9]> {
    let mut lu = *m;
    let mut perm = [0usize; 9];
    for (i, p) in perm.iter_mut().enumerate() {
        *p = i;
    }
    for col in 0..9 {
        let mut pivot = col;
        for row in (col + 1)..9 {
            if lu[row][col].abs() > lu[pivot][col].abs() {
                pivot = row;
            }
        }
        if lu[pivot][col] == 0.0 {
            return None;
        }
        if pivot != col {
            lu.swap(pivot, col);
            perm.swap(pivot, col);
        }
        let inv_p = 1.0 / lu[col][col];
        for row in (col + 1)..9 {
            let factor = lu[row][col] * inv_p;
            lu[row][col] = factor;
            for k in (col + 1)..9 {
                lu[row][k] -= factor * lu[col][k];
            }
        }
    }
    Some(lu_solve(&lu, &perm, b))
}

/// Full eigendecomposition of a symmetric 9×9 matrix: eigenvalues in
/// ascending order with matching eigenvectors as columns.
pub fn eigh(m: &SymMatrix9) -> Result<([f64; 9], [[f64; 9]; 9]), NumericsError> {
    jacobi_eigh(&m.data, JACOBI_MAX_SWEEPS)
}

/// Full spectrum of a symmetric 9×9 matrix, ascending. Used for rank
/// diagnostics alongside the smallest-eigenpair solve.
pub fn eigenvalues(m: &SymMatrix9) -> Result<[f64; 9], NumericsError> {
    Ok(eigh(m)?.0)
}

/// Flip the sign of a vector in place so its largest-magnitude entry is
/// positive. Ties resolve to the lowest index.
pub fn canonical_sign(v: &mut [f64; 9]) {
    let mut best = 0;
    for i in 1..9 {
        if v[i].abs() > v[best].abs() {
            best = i;
        }
    }
    if v[best] < 0.0 {
        for x in v.iter_mut() {
            *x = -*x;
        }
    }
}

/// Return `u` or `-u`, whichever has nonnegative dot product with
/// `reference`. A dot product of exactly zero leaves `u` unchanged.
pub fn sign_align(u: [f64; 9], reference: &[f64; 9]) -> [f64; 9] {
    let mut dot = 0.0;
    for i in 0..9 {
        dot += u[i] * reference[i];
    }
    if dot < 0.0 {
        let mut out = u;
        for x in out.iter_mut() {
            *x = -*x;
        }
        out
    } else {
        u
    }
}

/// Solve `M^T v = b` by LU with partial pivoting, returning the solution and
/// the exact 1-norm condition number of `M^T`.
///
/// Fails with [`NumericsError::SingularSystem`] when a pivot vanishes or the
/// condition estimate exceeds [`CONDITION_LIMIT`].
pub fn solve_transposed(m: &[[f64; 9]; 9], b: &[f64; 9]) -> Result<([f64; 9], f64), NumericsError> {
    let mut mt = [[0.0; 9]; 9];
    for i in 0..9 {
        for j in 0..9 {
            mt[i][j] = m[j][i];
        }
    }
    solve_linear(&mt, b)
}

/// Solve `M v = b` by LU with partial pivoting, with the same condition
/// gate as [`solve_transposed`].
pub fn solve_linear(m: &[[f64; 9]; 9], b: &[f64; 9]) -> Result<([f64; 9], f64), NumericsError> {
    let mut lu = [[0.0; 9]; 9];
    for i in 0..9 {
        for j in 0..9 {
            if !m[i][j].is_finite() {
                return Err(NumericsError::ContractViolation(
                    "non-finite matrix entry".into(),
                ));
            }
            lu[i][j] = m[i][j];
        }
    }
    let norm1 = one_norm(&lu);
    let mut perm = [0usize; 9];
    for (i, p) in perm.iter_mut().enumerate() {
        *p = i;
    }

    for col in 0..9 {
        let mut pivot = col;
        for row in (col + 1)..9 {
            if lu[row][col].abs() > lu[pivot][col].abs() {
                pivot = row;
            }
        }
        if lu[pivot][col] == 0.0 {
            return Err(NumericsError::SingularSystem {
                condition: f64::INFINITY,
            });
        }
        if pivot != col {
            lu.swap(pivot, col);
            perm.swap(pivot, col);
        }
        let inv_p = 1.0 / lu[col][col];
        for row in (col + 1)..9 {
            let factor = lu[row][col] * inv_p;
            lu[row][col] = factor;
            for k in (col + 1)..9 {
                lu[row][k] -= factor * lu[col][k];
            }
        }
    }

    // Exact 1-norm of the inverse: solve for each basis vector. Nine 9×9
    // back-substitutions are cheap and keep the estimate deterministic.
    let mut inv_norm1 = 0.0f64;
    for j in 0..9 {
        let mut e = [0.0; 9];
        e[j] = 1.0;
        let col = lu_solve(&lu, &perm, &e);
        let sum: f64 = col.iter().map(|x| x.abs()).sum();
        inv_norm1 = inv_norm1.max(sum);
    }
    let condition = norm1 * inv_norm1;
    if !condition.is_finite() || condition > CONDITION_LIMIT {
        return Err(NumericsError::SingularSystem { condition });
    }

    Ok((lu_solve(&lu, &perm, b), condition))
}

fn one_norm(a: &[[f64; 9]; 9]) -> f64 {
    let mut best = 0.0f64;
    for j in 0..9 {
        let mut s = 0.0;
        for row in a {
            s += row[j].abs();
        }
        best = best.max(s);
    }
    best
}

fn lu_solve(lu: &[[f64; 9]; 9], perm: &[usize; 9], b: &[f64; 9]) -> [f64; 9] {
    let mut y = [0.0; 9];
    for i in 0..9 {
        let mut acc = b[perm[i]];
        for j in 0..i {
            acc -= lu[i][j] * y[j];
        }
        y[i] = acc;
    }
    let mut x = [0.0; 9];
    for i in (0..9).rev() {
        let mut acc = y[i];
        for j in (i + 1)..9 {
            acc -= lu[i][j] * x[j];
        }
        x[i] = acc / lu[i][i];
    }
    x
}
