//! Kalman rank condition, the induced orthogonal decomposition of the state
//! space, rescaled drift matrices and the flow-representation series.
//!
//! The decomposition stratifies R^N into subspaces E_0, ..., E_kappa where
//! E_0 is the controlled subspace (the range of the input projection) and
//! each further stratum is the new material reached by one more application
//! of the drift. Everything downstream (scalings, cylinders, steering costs)
//! is phrased in terms of this frame.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::linalg::{expm, numeric_rank, op_norm, singular_values};
use crate::scalar::{abs, cast, cast_usize, fmax, powi, Real};

/// Relative singular-value cutoff for all rank decisions (f64; widened to
/// the scalar's precision for narrower types).
pub const RANK_REL_TOL: f64 = 1e-10;
/// Tolerance for structural matrix identities (idempotence, block zeros).
pub const FRAME_TOL: f64 = 1e-10;

/// Rank cutoff for the working scalar: the f64 constant, or a small
/// multiple of the scalar's epsilon when that is coarser.
fn rank_tol<T: Real>() -> T {
    fmax(cast(RANK_REL_TOL), <T as num_traits::Float>::epsilon() * cast::<T>(50.0))
}

/// Structural-identity tolerance for the working scalar.
fn structural_tol<T: Real>() -> T {
    fmax(cast(FRAME_TOL), <T as num_traits::Float>::epsilon() * cast::<T>(500.0))
}

/// Ambiguity band around the rank cutoff: singular-value ratios inside
/// (cutoff/10, cutoff*10) are neither clearly in nor clearly out and the
/// decomposition refuses to guess.
fn ambiguity_band<T: Real>() -> (f64, f64) {
    let cutoff = num_traits::ToPrimitive::to_f64(&rank_tol::<T>()).unwrap();
    (cutoff / 10.0, cutoff * 10.0)
}

/// Orthogonal decomposition adapted to a controllable pair `(A, P0)`.
#[derive(Debug, Clone)]
pub struct KalmanFrame<T: Real> {
    /// State dimension N.
    pub dim: usize,
    /// Depth of the stratification: smallest K with V_K = R^N.
    pub kappa: usize,
    /// Dimensions n_j of the strata, j = 0..=kappa; they sum to N.
    pub subspace_dims: Vec<usize>,
    /// Orthogonal N x N matrix whose consecutive column blocks span
    /// E_0, ..., E_kappa.
    pub basis: DMatrix<T>,
    /// Orthogonal projections P_j onto the strata, in ambient coordinates.
    pub projections: Vec<DMatrix<T>>,
    /// Principal part A_0 = sum_j P_{j+1} A P_j; nilpotent of order kappa+1.
    pub principal_part: DMatrix<T>,
}

/// A drift matrix together with its input projection and frame.
#[derive(Debug, Clone)]
pub struct DriftBundle<T: Real> {
    pub a: DMatrix<T>,
    pub p0: DMatrix<T>,
    pub frame: KalmanFrame<T>,
}

impl<T: Real> DriftBundle<T> {
    /// Decompose `(a, p0)` and bundle the result.
    pub fn new(a: DMatrix<T>, p0: DMatrix<T>) -> Result<Self> {
        let frame = build_frame(&a, &p0)?;
        // The leading stratum projection must reproduce the input.
        if op_norm(&(&p0 - &frame.projections[0])) > structural_tol::<T>() {
            return Err(Error::InternalConsistency(
                "stratum-0 projection differs from the input projection".into(),
            ));
        }
        Ok(DriftBundle { a, p0, frame })
    }
}

impl<T: Real> KalmanFrame<T> {
    /// Anisotropic scaling S(r) = sum_i r^i P_i. `S(0)` is the input
    /// projection, which is singular whenever n_0 < N.
    pub fn scaling(&self, r: T) -> DMatrix<T> {
        let mut s = DMatrix::<T>::zeros(self.dim, self.dim);
        let mut coeff = T::one();
        for p in &self.projections {
            s += p * coeff;
            coeff = coeff * r;
        }
        s
    }

    /// Column block of `basis` spanning stratum j.
    pub fn stratum_basis(&self, j: usize) -> DMatrix<T> {
        let offset: usize = self.subspace_dims[..j].iter().sum();
        self.basis.columns(offset, self.subspace_dims[j]).into()
    }

    /// sum_j j * n_j, the homogeneous dimension shift of the scalings.
    pub fn weighted_dim(&self) -> usize {
        self.subspace_dims
            .iter()
            .enumerate()
            .map(|(j, n)| j * n)
            .sum()
    }

    /// Projection of a vector onto stratum j.
    pub fn project(&self, j: usize, v: &DVector<T>) -> DVector<T> {
        &self.projections[j] * v
    }

    /// Exact exponential of tau * A_0 using nilpotency: the series stops at
    /// order kappa.
    pub fn exp_principal(&self, tau: T) -> DMatrix<T> {
        let n = self.dim;
        let mut acc = DMatrix::<T>::identity(n, n);
        let mut term = DMatrix::<T>::identity(n, n);
        let mut factorial = T::one();
        for l in 1..=self.kappa {
            term = &term * &self.principal_part;
            factorial = factorial * cast_usize(l);
            acc += &term * (powi(tau, l as i32) / factorial);
        }
        acc
    }

    /// Check every structural invariant of the frame against `a`.
    pub fn validate(&self, a: &DMatrix<T>) -> Result<()> {
        let n = self.dim;
        let tol = structural_tol::<T>() * fmax(T::one(), op_norm(a));
        let fail = |msg: String| Err(Error::InternalConsistency(msg));

        if self.subspace_dims.iter().sum::<usize>() != n {
            return fail("stratum dimensions do not sum to N".into());
        }
        // Orthogonality of the basis.
        let qtq = self.basis.transpose() * &self.basis;
        if op_norm(&(&qtq - DMatrix::<T>::identity(n, n))) > tol {
            return fail("basis is not orthogonal".into());
        }
        // Projections: symmetric, idempotent, mutually orthogonal, complete.
        let mut sum = DMatrix::<T>::zeros(n, n);
        for (i, p) in self.projections.iter().enumerate() {
            if op_norm(&(p - p.transpose())) > tol {
                return fail(format!("P_{i} is not symmetric"));
            }
            if op_norm(&(p * p - p)) > tol {
                return fail(format!("P_{i} is not idempotent"));
            }
            for (j, q) in self.projections.iter().enumerate() {
                if i != j && op_norm(&(p * q)) > tol {
                    return fail(format!("P_{i} P_{j} != 0"));
                }
            }
            sum += p;
        }
        if op_norm(&(&sum - DMatrix::<T>::identity(n, n))) > tol {
            return fail("projections do not sum to the identity".into());
        }
        // Block structure: P_i A P_j = 0 for i > j + 1, and the upper
        // off-diagonal blocks have full rank n_j.
        for i in 0..=self.kappa {
            for j in 0..=self.kappa {
                if i > j + 1 {
                    let block = &self.projections[i] * a * &self.projections[j];
                    if op_norm(&block) > tol {
                        return fail(format!("block P_{i} A P_{j} is not zero"));
                    }
                }
            }
        }
        for j in 1..=self.kappa {
            let block = self.stratum_basis(j).transpose() * a * self.stratum_basis(j - 1);
            let (rank, _) = numeric_rank(&block, rank_tol::<T>());
            if rank != self.subspace_dims[j] {
                return fail(format!(
                    "upper off-diagonal block into stratum {j} has rank {rank}, expected {}",
                    self.subspace_dims[j]
                ));
            }
        }
        // Principal part definition and nilpotency.
        let mut a0 = DMatrix::<T>::zeros(n, n);
        for j in 0..self.kappa {
            a0 += &self.projections[j + 1] * a * &self.projections[j];
        }
        if op_norm(&(&a0 - &self.principal_part)) > tol {
            return fail("stored principal part disagrees with sum of blocks".into());
        }
        let mut pow = DMatrix::<T>::identity(n, n);
        for _ in 0..=self.kappa {
            pow = &pow * &self.principal_part;
        }
        if op_norm(&pow) > tol * fmax(T::one(), powi(op_norm(a), self.kappa as i32 + 1)) {
            return fail("principal part is not nilpotent of order kappa+1".into());
        }
        Ok(())
    }
}

fn check_square<T: Real>(m: &DMatrix<T>, name: &str) -> Result<usize> {
    if m.nrows() != m.ncols() {
        return Err(Error::InvalidInput(format!(
            "{name} must be square, got {}x{}",
            m.nrows(),
            m.ncols()
        )));
    }
    Ok(m.nrows())
}

fn check_projection<T: Real>(p0: &DMatrix<T>) -> Result<()> {
    let tol = structural_tol::<T>();
    if op_norm(&(p0 - p0.transpose())) > tol {
        return Err(Error::InvalidInput("P0 is not symmetric".into()));
    }
    if op_norm(&(p0 * p0 - p0)) > tol {
        return Err(Error::InvalidInput("P0 is not idempotent".into()));
    }
    Ok(())
}

/// Stacked controllability matrix [P0 | A P0 | ... | A^K P0].
fn kalman_stack<T: Real>(a: &DMatrix<T>, p0: &DMatrix<T>, k: usize) -> DMatrix<T> {
    let n = a.nrows();
    let mut stack = DMatrix::<T>::zeros(n, n * (k + 1));
    let mut pow = p0.clone();
    for block in 0..=k {
        stack.columns_mut(block * n, n).copy_from(&pow);
        if block < k {
            pow = a * &pow;
        }
    }
    stack
}

/// Decide the Kalman rank condition at order `K` by the numeric rank of the
/// stacked matrix, refusing decisions that fall in the ambiguity band.
pub fn check_kalman_rank<T: Real>(a: &DMatrix<T>, p0: &DMatrix<T>, k: usize) -> Result<bool> {
    let n = check_square(a, "A")?;
    if p0.nrows() != n || p0.ncols() != n {
        return Err(Error::InvalidInput("A and P0 must share dimensions".into()));
    }
    check_projection(p0)?;

    let stack = kalman_stack(a, p0, k);
    let sv = singular_values(&stack);
    let smax = sv[0];
    if smax == T::zero() {
        return Ok(false);
    }
    // The decision hinges on the N-th singular value.
    let ratio = sv[n - 1] / smax;
    let (lo, hi) = ambiguity_band::<T>();
    let ratio_f = num_traits::ToPrimitive::to_f64(&ratio).unwrap_or(0.0);
    if ratio_f > lo && ratio_f < hi {
        return Err(Error::AmbiguousRank { ratio: ratio_f, lo, hi });
    }
    Ok(ratio > rank_tol::<T>())
}

/// Orthonormal range basis of a matrix, with rank decided against the given
/// reference scale, re-orthogonalized against `prior` blocks and
/// sign-normalized for determinism.
///
/// The singular values of rank-deficient matrices are reliable while the
/// computed singular vectors can carry null-space contamination, so the
/// selected columns are cleaned with projection sweeps plus a QR pass.
fn range_basis<T: Real>(
    m: &DMatrix<T>,
    sigma_ref: T,
    prior: &[DMatrix<T>],
) -> Result<DMatrix<T>> {
    let svd = m.clone().svd(false, true);
    let v_t = svd.v_t.as_ref().expect("svd with V");
    let mut kept: Vec<(T, usize)> = Vec::new();
    let (lo, hi) = ambiguity_band::<T>();
    for (idx, &s) in svd.singular_values.iter().enumerate() {
        let ratio = if sigma_ref > T::zero() { s / sigma_ref } else { T::zero() };
        let ratio_f = num_traits::ToPrimitive::to_f64(&ratio).unwrap_or(0.0);
        if ratio_f > lo && ratio_f < hi {
            return Err(Error::AmbiguousRank { ratio: ratio_f, lo, hi });
        }
        if ratio > rank_tol::<T>() {
            kept.push((s, idx));
        }
    }
    kept.sort_by(|a, b| b.0.partial_cmp(&a.0).unwrap());
    // Map the kept right singular directions through m: the result lies in
    // the range of m by construction, which sidesteps null-space
    // contamination of computed singular vectors on rank-deficient input.
    let mut basis = DMatrix::<T>::zeros(m.nrows(), kept.len());
    for (j, (_, idx)) in kept.iter().enumerate() {
        let dir: DVector<T> = v_t.row(*idx).transpose();
        basis.set_column(j, &(m * dir));
    }
    if basis.ncols() == 0 {
        return Ok(basis);
    }
    for _ in 0..2 {
        for b in prior {
            let coeff = b.transpose() * &basis;
            basis -= b * coeff;
        }
    }
    let mut q = basis.qr().q();
    for j in 0..q.ncols() {
        // Deterministic sign: make the largest-magnitude entry positive.
        let mut arg = 0;
        let mut best = T::zero();
        for (i, &v) in q.column(j).iter().enumerate() {
            if abs(v) > best {
                best = abs(v);
                arg = i;
            }
        }
        if q[(arg, j)] < T::zero() {
            let flipped = -q.column(j);
            q.set_column(j, &flipped);
        }
    }
    Ok(q)
}

/// Build the adapted frame for `(a, p0)`.
///
/// The strata are produced by successive orthonormalization: E_0 spans the
/// range of `p0`, and each E_k is the orthogonal complement of V_{k-1}
/// inside V_k = V_{k-1} + A V_{k-1}.
pub fn build_frame<T: Real>(a: &DMatrix<T>, p0: &DMatrix<T>) -> Result<KalmanFrame<T>> {
    let n = check_square(a, "A")?;
    if p0.nrows() != n || p0.ncols() != n {
        return Err(Error::InvalidInput("A and P0 must share dimensions".into()));
    }
    check_projection(p0)?;

    // Reference scale for rank decisions: the full stacked Kalman matrix.
    let sigma_ref = singular_values(&kalman_stack(a, p0, n.saturating_sub(1)))[0];
    if sigma_ref == T::zero() {
        return Err(Error::NotControllable("P0 is the zero projection".into()));
    }

    let e0 = range_basis(p0, T::one(), &[])?;
    let n0 = e0.ncols();
    if n0 == 0 {
        return Err(Error::NotControllable("P0 has empty range".into()));
    }

    let mut blocks: Vec<DMatrix<T>> = vec![e0];
    let mut total = n0;
    while total < n {
        let prev = blocks.last().unwrap();
        let mut cand = a * prev;
        // Project out everything already spanned; run the sweep twice for
        // orthogonality at working precision.
        for _ in 0..2 {
            for b in &blocks {
                let coeff = b.transpose() * &cand;
                cand -= b * coeff;
            }
        }
        let fresh = range_basis(&cand, sigma_ref, &blocks)?;
        if fresh.ncols() == 0 {
            return Err(Error::NotControllable(format!(
                "controllability filtration stalls at dimension {total} < {n}"
            )));
        }
        total += fresh.ncols();
        blocks.push(fresh);
    }

    let kappa = blocks.len() - 1;
    let subspace_dims: Vec<usize> = blocks.iter().map(|b| b.ncols()).collect();
    let mut basis = DMatrix::<T>::zeros(n, n);
    let mut offset = 0;
    for b in &blocks {
        basis.columns_mut(offset, b.ncols()).copy_from(b);
        offset += b.ncols();
    }
    let projections: Vec<DMatrix<T>> = blocks.iter().map(|b| b * b.transpose()).collect();
    let mut principal_part = DMatrix::<T>::zeros(n, n);
    for j in 0..kappa {
        principal_part += &projections[j + 1] * a * &projections[j];
    }

    let frame = KalmanFrame {
        dim: n,
        kappa,
        subspace_dims,
        basis,
        projections,
        principal_part,
    };
    frame.validate(a)?;
    Ok(frame)
}

/// Anisotropically rescaled drift
/// A_h = sum_j sum_{i <= kappa ^ (j+1)} h^{j+1-i} P_i A P_j.
///
/// For h > 0 this equals h S(1/h) A S(h); at h = 0 it reduces to the
/// principal part.
pub fn rescaled_drift<T: Real>(frame: &KalmanFrame<T>, a: &DMatrix<T>, h: T) -> Result<DMatrix<T>> {
    if h < T::zero() {
        return Err(Error::InvalidInput("h must be non-negative".into()));
    }
    Ok(rescaled_drift_signed(frame, a, h))
}

/// Same block formula without the sign restriction; the flow representation
/// series is valid for signed arguments and the internal consistency checks
/// use it with h*r of either sign.
pub fn rescaled_drift_signed<T: Real>(frame: &KalmanFrame<T>, a: &DMatrix<T>, h: T) -> DMatrix<T> {
    let n = frame.dim;
    let mut out = DMatrix::<T>::zeros(n, n);
    for j in 0..=frame.kappa {
        for i in 0..=frame.kappa.min(j + 1) {
            let power = (j + 1 - i) as i32;
            let coeff = if power == 0 { T::one() } else { powi(h, power) };
            if coeff != T::zero() {
                out += &frame.projections[i] * a * &frame.projections[j] * coeff;
            }
        }
    }
    out
}

/// Evaluate the flow-representation remainder series R_A(tau; h).
///
/// The m-sum is truncated once the a-priori bound
/// h^m ||A||^(m+i-j) / (m+i-j)! drops below `tol` for every block, so the
/// truncation error is at most tol * e^{||A||(1+|h|)}.
pub fn flow_remainder<T: Real>(
    frame: &KalmanFrame<T>,
    a: &DMatrix<T>,
    tau: T,
    h: T,
    tol: T,
) -> Result<DMatrix<T>> {
    if abs(tau) > T::one() + cast(1e-12) {
        return Err(Error::InvalidInput("flow series requires |tau| <= 1".into()));
    }
    if tol <= T::zero() {
        return Err(Error::InvalidInput("tol must be positive".into()));
    }
    let n = frame.dim;
    let mut out = DMatrix::<T>::zeros(n, n);
    if h == T::zero() {
        return Ok(out);
    }
    let kappa = frame.kappa;
    let norm_a = num_traits::ToPrimitive::to_f64(&op_norm(a)).unwrap();
    let abs_h = num_traits::ToPrimitive::to_f64(&abs(h)).unwrap();
    let tol_f = num_traits::ToPrimitive::to_f64(&tol).unwrap();

    // Powers of A, extended on demand.
    let mut powers: Vec<DMatrix<T>> = vec![DMatrix::<T>::identity(n, n)];
    let ensure_power = |powers: &mut Vec<DMatrix<T>>, l: usize| {
        while powers.len() <= l {
            let next = a * powers.last().unwrap();
            powers.push(next);
        }
    };

    let mut h_pow = T::one();
    let mut below_count = 0;
    let max_m = 500;
    for m in 1..=max_m {
        h_pow = h_pow * h;
        // A-priori bound over the admissible powers l = m + i - j.
        let mut max_bound: f64 = 0.0;
        for i in 0..=kappa {
            for j in 0..=kappa {
                let l_signed = m as i64 + i as i64 - j as i64;
                if l_signed < 1 {
                    continue;
                }
                let l = l_signed as usize;
                let log_bound = (m as f64) * abs_h.max(1e-300).ln()
                    + (l as f64) * norm_a.max(1e-300).ln()
                    - ln_factorial(l);
                max_bound = max_bound.max(log_bound.exp());
            }
        }

        let mut term = DMatrix::<T>::zeros(n, n);
        for i in 0..=kappa {
            for j in 0..=kappa {
                let l_signed = m as i64 + i as i64 - j as i64;
                if l_signed < 1 {
                    continue;
                }
                let l = l_signed as usize;
                ensure_power(&mut powers, l);
                let coeff = powi(tau, l as i32) * cast::<T>((-ln_factorial(l)).exp());
                term += &frame.projections[i] * &powers[l] * &frame.projections[j] * coeff;
            }
        }
        out += term * h_pow;

        if max_bound < tol_f {
            below_count += 1;
            if below_count >= 2 && m >= kappa + 2 {
                break;
            }
        } else {
            below_count = 0;
        }
    }
    Ok(out)
}

fn ln_factorial(l: usize) -> f64 {
    (1..=l).map(|k| (k as f64).ln()).sum()
}

/// Flow matrix e^{r tau A_h}, computed two ways and cross-checked:
/// directly by the matrix exponential, and through the representation
/// S(r) (e^{tau A_0} + R_A(tau; h r)) S(r)^{-1}.
///
/// Disagreement beyond 1e-8 relative signals a series bug and is reported
/// as an internal-consistency error. The direct value is returned.
pub fn flow_matrix<T: Real>(
    frame: &KalmanFrame<T>,
    a: &DMatrix<T>,
    r: T,
    tau: T,
    h: T,
) -> Result<DMatrix<T>> {
    if r == T::zero() {
        return Err(Error::InvalidInput("r must be nonzero".into()));
    }
    let a_h = rescaled_drift_signed(frame, a, h);
    let direct = expm(&(&a_h * (r * tau)));

    let series = flow_via_series(frame, a, r, tau, h)?;
    let scale = fmax(T::one(), op_norm(&direct));
    let dev = op_norm(&(&direct - &series)) / scale;
    let tol = fmax(cast(1e-8), <T as num_traits::Float>::epsilon() * cast::<T>(100.0));
    if dev > tol {
        return Err(Error::InternalConsistency(format!(
            "flow identity violated: relative deviation {:.3e}",
            num_traits::ToPrimitive::to_f64(&dev).unwrap_or(f64::NAN)
        )));
    }
    Ok(direct)
}

/// The series route S(r) (e^{tau A_0} + R_A(tau; h r)) S(r)^{-1} alone.
pub fn flow_via_series<T: Real>(
    frame: &KalmanFrame<T>,
    a: &DMatrix<T>,
    r: T,
    tau: T,
    h: T,
) -> Result<DMatrix<T>> {
    if r == T::zero() {
        return Err(Error::InvalidInput("r must be nonzero".into()));
    }
    let remainder = flow_remainder(frame, a, tau, h * r, cast(1e-13))?;
    let inner = frame.exp_principal(tau) + remainder;
    Ok(frame.scaling(r) * inner * frame.scaling(T::one() / r))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    pub fn kolmogorov() -> (DMatrix<f64>, DMatrix<f64>) {
        let a = DMatrix::from_row_slice(2, 2, &[0.0, 0.0, 1.0, 0.0]);
        let p0 = DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, 0.0]);
        (a, p0)
    }

    #[test]
    fn rank_check_kolmogorov() {
        let (a, p0) = kolmogorov();
        assert!(check_kalman_rank(&a, &p0, 1).unwrap());
        assert!(!check_kalman_rank(&a, &p0, 0).unwrap());
    }

    #[test]
    fn rank_check_identity_projection() {
        let a = DMatrix::from_row_slice(2, 2, &[3.0, -1.0, 2.0, 0.5]);
        let p0 = DMatrix::<f64>::identity(2, 2);
        assert!(check_kalman_rank(&a, &p0, 0).unwrap());
    }

    #[test]
    fn rank_check_zero_drift_fails() {
        let a = DMatrix::<f64>::zeros(2, 2);
        let p0 = DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, 0.0]);
        assert!(!check_kalman_rank(&a, &p0, 5).unwrap());
    }

    #[test]
    fn rank_check_rejects_bad_projection() {
        let a = DMatrix::<f64>::zeros(2, 2);
        let p0 = DMatrix::from_row_slice(2, 2, &[1.0, 0.5, 0.5, 0.0]);
        assert!(matches!(
            check_kalman_rank(&a, &p0, 1),
            Err(Error::InvalidInput(_))
        ));
    }

    #[test]
    fn frame_kolmogorov() {
        let (a, p0) = kolmogorov();
        let frame = build_frame(&a, &p0).unwrap();
        assert_eq!(frame.kappa, 1);
        assert_eq!(frame.subspace_dims, vec![1, 1]);
        assert_relative_eq!(frame.projections[0], p0, epsilon = 1e-12);
        assert_relative_eq!(frame.principal_part, a, epsilon = 1e-12);
        frame.validate(&a).unwrap();
    }

    #[test]
    fn frame_full_projection_is_depth_zero() {
        let a = DMatrix::from_row_slice(3, 3, &[0.5, 1.0, 0.0, 2.0, -1.0, 3.0, 0.0, 1.0, 1.0]);
        let p0 = DMatrix::<f64>::identity(3, 3);
        let frame = build_frame(&a, &p0).unwrap();
        assert_eq!(frame.kappa, 0);
        assert_eq!(frame.subspace_dims, vec![3]);
        assert_relative_eq!(frame.principal_part, DMatrix::<f64>::zeros(3, 3));
    }

    #[test]
    fn frame_uncontrollable_errors() {
        let a = DMatrix::<f64>::zeros(2, 2);
        let p0 = DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, 0.0]);
        assert!(matches!(
            build_frame(&a, &p0),
            Err(Error::NotControllable(_))
        ));
    }

    #[test]
    fn rescaled_drift_is_scale_invariant_for_principal_form() {
        let (a, p0) = kolmogorov();
        let frame = build_frame(&a, &p0).unwrap();
        for h in [0.0, 0.3, 1.0, 2.5] {
            let ah = rescaled_drift(&frame, &a, h).unwrap();
            assert_relative_eq!(ah, a, epsilon = 1e-14);
        }
    }

    #[test]
    fn rescaled_drift_at_zero_is_principal_part() {
        let a = DMatrix::from_row_slice(2, 2, &[3.0, 0.0, 1.0, 0.0]);
        let p0 = DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, 0.0]);
        let frame = build_frame(&a, &p0).unwrap();
        let a0 = rescaled_drift(&frame, &a, 0.0).unwrap();
        assert_relative_eq!(a0, frame.principal_part, epsilon = 1e-14);
    }

    #[test]
    fn rescaled_drift_picks_single_block_factor() {
        let a = DMatrix::from_row_slice(2, 2, &[3.0, 0.0, 1.0, 0.0]);
        let p0 = DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, 0.0]);
        let frame = build_frame(&a, &p0).unwrap();
        let ah = rescaled_drift(&frame, &a, 0.1).unwrap();
        let expected = DMatrix::from_row_slice(2, 2, &[0.3, 0.0, 1.0, 0.0]);
        assert_relative_eq!(ah, expected, epsilon = 1e-13);
    }

    #[test]
    fn rescaled_drift_matches_conjugation_for_positive_h() {
        let a = DMatrix::from_row_slice(2, 2, &[0.7, 0.2, 1.0, -0.4]);
        let p0 = DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, 0.0]);
        let frame = build_frame(&a, &p0).unwrap();
        for h in [0.1, 0.5, 2.0] {
            let ah = rescaled_drift(&frame, &a, h).unwrap();
            let conj = frame.scaling(1.0 / h) * &a * frame.scaling(h) * h;
            assert_relative_eq!(ah, conj, epsilon = 1e-10);
        }
    }

    #[test]
    fn rescaled_drift_rejects_negative_h() {
        let (a, p0) = kolmogorov();
        let frame = build_frame(&a, &p0).unwrap();
        assert!(rescaled_drift(&frame, &a, -0.1).is_err());
    }

    #[test]
    fn remainder_vanishes_at_h_zero_and_for_kolmogorov() {
        let (a, p0) = kolmogorov();
        let frame = build_frame(&a, &p0).unwrap();
        let r0 = flow_remainder(&frame, &a, 0.7, 0.0, 1e-12).unwrap();
        assert_relative_eq!(r0, DMatrix::<f64>::zeros(2, 2));
        // A^2 = 0 and the diagonal blocks of A vanish, so the series is zero.
        let r1 = flow_remainder(&frame, &a, 1.0, 0.5, 1e-14).unwrap();
        assert!(op_norm(&r1) < 1e-14);
    }

    #[test]
    fn flow_matrix_trivial_cases() {
        let (a, p0) = kolmogorov();
        let frame = build_frame(&a, &p0).unwrap();
        let id = flow_matrix(&frame, &a, 0.5, 0.0, 0.3).unwrap();
        assert_relative_eq!(id, DMatrix::<f64>::identity(2, 2), epsilon = 1e-12);
        let ia = flow_matrix(&frame, &a, 1.0, 1.0, 0.0).unwrap();
        let expected = DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 1.0, 1.0]);
        assert_relative_eq!(ia, expected, epsilon = 1e-12);
    }

    #[test]
    fn frame_machinery_instantiates_at_f32() {
        let a = DMatrix::<f32>::from_row_slice(2, 2, &[0.0, 0.0, 1.0, 0.0]);
        let p0 = DMatrix::<f32>::from_row_slice(2, 2, &[1.0, 0.0, 0.0, 0.0]);
        let frame = build_frame(&a, &p0).unwrap();
        assert_eq!(frame.kappa, 1);
        let ah = rescaled_drift(&frame, &a, 0.5f32).unwrap();
        assert!((op_norm(&(ah - &a))) < 1e-6);
        let flow = flow_matrix(&frame, &a, 1.0f32, 1.0, 0.0).unwrap();
        assert!((flow[(1, 0)] - 1.0).abs() < 1e-6);
    }

    #[test]
    fn exp_principal_matches_expm() {
        let a = DMatrix::from_row_slice(3, 3, &[0.1, 0.0, 0.0, 1.0, 0.2, 0.0, 0.3, 2.0, -0.1]);
        let p0 = DMatrix::from_row_slice(3, 3, &[1.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0]);
        let frame = build_frame(&a, &p0).unwrap();
        let tau = 0.83;
        let exact = frame.exp_principal(tau);
        let reference = expm(&(&frame.principal_part * tau));
        assert_relative_eq!(exact, reference, epsilon = 1e-12);
    }
}
