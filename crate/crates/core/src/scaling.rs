//! Anisotropic scaling calculus: dilations, the flow-adapted Lie group of
//! space-time translations, cylinders, the gauge and the anisotropic
//! modulus of continuity.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kalman::{rescaled_drift_signed, KalmanFrame};
use crate::linalg::expm;
use crate::scalar::{abs, cast, cast_usize, fmax, powf, Real};

/// Exponent and scale bundle governing dilations, cylinders and moduli.
///
/// `q_conj` is computed once at construction and reused everywhere, so the
/// conjugate exponent can never drift between modules.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScaleParams<T> {
    pub q: T,
    pub q_conj: T,
    pub alpha: T,
    pub gamma: T,
    pub r: T,
    pub h: T,
}

impl<T: Real> ScaleParams<T> {
    /// Bundle `q > 1`, `alpha` in [0, 1], a dilation scale `r > 0` and a
    /// drift scale `h >= 0`. `gamma = 1/q + alpha/q'`.
    pub fn new(q: T, alpha: T, r: T, h: T) -> Result<Self> {
        if q <= T::one() {
            return Err(Error::InvalidInput("q must exceed 1".into()));
        }
        if alpha < T::zero() || alpha > T::one() {
            return Err(Error::InvalidInput("alpha must lie in [0, 1]".into()));
        }
        if r <= T::zero() {
            return Err(Error::InvalidInput("r must be positive".into()));
        }
        if h < T::zero() {
            return Err(Error::InvalidInput("h must be non-negative".into()));
        }
        let q_conj = q / (q - T::one());
        let gamma = T::one() / q + alpha / q_conj;
        Ok(ScaleParams {
            q,
            q_conj,
            alpha,
            gamma,
            r,
            h,
        })
    }

    /// Convenience constructor when only exponents matter.
    pub fn exponents(q: T, alpha: T) -> Result<Self> {
        Self::new(q, alpha, T::one(), T::zero())
    }
}

/// A point (t, x) of R x R^N.
#[derive(Debug, Clone, PartialEq)]
pub struct SpaceTimePoint<T: Real> {
    pub t: T,
    pub x: DVector<T>,
}

impl<T: Real> SpaceTimePoint<T> {
    pub fn new(t: T, x: DVector<T>) -> Self {
        SpaceTimePoint { t, x }
    }

    pub fn origin(n: usize) -> Self {
        SpaceTimePoint {
            t: T::zero(),
            x: DVector::zeros(n),
        }
    }

    pub fn is_finite(&self) -> bool {
        num_traits::Float::is_finite(self.t) && self.x.iter().all(|v| num_traits::Float::is_finite(*v))
    }
}

/// The scaling operator S(r) as a matrix. `S(0)` equals the input
/// projection and is singular whenever n_0 < N; its operator norm is
/// max(1, |r|^kappa).
pub fn scale_matrix<T: Real>(frame: &KalmanFrame<T>, r: T) -> DMatrix<T> {
    frame.scaling(r)
}

/// Anisotropic space-time dilation (t, x) -> (r t, r^gamma S(r) x).
pub fn dilate<T: Real>(
    frame: &KalmanFrame<T>,
    gamma: T,
    r: T,
    p: &SpaceTimePoint<T>,
) -> Result<SpaceTimePoint<T>> {
    if r <= T::zero() {
        return Err(Error::InvalidInput("dilation scale must be positive".into()));
    }
    let spatial = frame.scaling(r) * &p.x * powf(r, gamma);
    Ok(SpaceTimePoint::new(r * p.t, spatial))
}

/// Determinant of the space-time dilation: r^(N gamma + 1 + sum_j j n_j).
pub fn dilation_determinant<T: Real>(frame: &KalmanFrame<T>, gamma: T, r: T) -> T {
    let exponent =
        cast_usize::<T>(frame.dim) * gamma + T::one() + cast_usize::<T>(frame.weighted_dim());
    powf(r, exponent)
}

/// The Lie group of flow-adapted translations for a fixed drift scale h.
///
/// Group law: (tau, zeta) o (t, x) = (tau + t, x + e^{t A_h} zeta).
pub struct LieGroup<'a, T: Real> {
    pub frame: &'a KalmanFrame<T>,
    pub h: T,
    drift: DMatrix<T>,
}

impl<'a, T: Real> LieGroup<'a, T> {
    pub fn new(frame: &'a KalmanFrame<T>, a: &DMatrix<T>, h: T) -> Result<Self> {
        if h < T::zero() {
            return Err(Error::InvalidInput("h must be non-negative".into()));
        }
        Ok(LieGroup {
            frame,
            h,
            drift: rescaled_drift_signed(frame, a, h),
        })
    }

    /// The rescaled drift A_h backing this group.
    pub fn drift(&self) -> &DMatrix<T> {
        &self.drift
    }

    /// Flow matrix e^{t A_h} for arbitrary t.
    pub fn flow(&self, t: T) -> DMatrix<T> {
        expm(&(&self.drift * t))
    }

    pub fn op(&self, lhs: &SpaceTimePoint<T>, rhs: &SpaceTimePoint<T>) -> SpaceTimePoint<T> {
        let x = &rhs.x + self.flow(rhs.t) * &lhs.x;
        SpaceTimePoint::new(lhs.t + rhs.t, x)
    }

    pub fn inverse(&self, p: &SpaceTimePoint<T>) -> SpaceTimePoint<T> {
        let x = -(self.flow(-p.t) * &p.x);
        SpaceTimePoint::new(-p.t, x)
    }

    /// Left translation l_(tau, zeta)(t, x).
    pub fn translate(
        &self,
        by: &SpaceTimePoint<T>,
        p: &SpaceTimePoint<T>,
    ) -> SpaceTimePoint<T> {
        self.op(by, p)
    }
}

/// Group operation without keeping a `LieGroup` around.
pub fn group_op<T: Real>(
    frame: &KalmanFrame<T>,
    a: &DMatrix<T>,
    h: T,
    lhs: &SpaceTimePoint<T>,
    rhs: &SpaceTimePoint<T>,
) -> Result<SpaceTimePoint<T>> {
    Ok(LieGroup::new(frame, a, h)?.op(lhs, rhs))
}

/// Group inverse (t, x)^-1 = (-t, -e^{-t A_h} x).
pub fn group_inverse<T: Real>(
    frame: &KalmanFrame<T>,
    a: &DMatrix<T>,
    h: T,
    p: &SpaceTimePoint<T>,
) -> Result<SpaceTimePoint<T>> {
    Ok(LieGroup::new(frame, a, h)?.inverse(p))
}

/// Three-way containment classification.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Containment {
    Inside,
    Boundary,
    Outside,
}

/// Serializable cylinder parameters (the frame travels separately).
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct CylinderSpec<T> {
    pub h: T,
    pub gamma: T,
    pub r: T,
}

/// Space-time cylinder following the free flow of A_h: time depth `r`,
/// flowed spatial radius `r^gamma`.
pub struct Cylinder<T: Real> {
    pub frame: KalmanFrame<T>,
    pub h: T,
    pub gamma: T,
    pub r: T,
    drift: DMatrix<T>,
}

/// Classification tolerance for boundary detection.
pub const BOUNDARY_TOL: f64 = 1e-12;

impl<T: Real> Cylinder<T> {
    pub fn new(frame: &KalmanFrame<T>, a: &DMatrix<T>, h: T, gamma: T, r: T) -> Result<Self> {
        if r <= T::zero() {
            return Err(Error::InvalidInput("cylinder radius must be positive".into()));
        }
        if gamma <= T::zero() || gamma > T::one() {
            return Err(Error::InvalidInput("gamma must lie in (0, 1]".into()));
        }
        if h < T::zero() {
            return Err(Error::InvalidInput("h must be non-negative".into()));
        }
        Ok(Cylinder {
            frame: frame.clone(),
            h,
            gamma,
            r,
            drift: rescaled_drift_signed(frame, a, h),
        })
    }

    pub fn spec(&self) -> CylinderSpec<T> {
        CylinderSpec {
            h: self.h,
            gamma: self.gamma,
            r: self.r,
        }
    }

    /// The rescaled drift A_h backing the cylinder flow.
    pub fn drift(&self) -> &DMatrix<T> {
        &self.drift
    }

    /// e^{t A_h} S(r), whose row norms bound the per-axis extent of the
    /// flowed section at time t.
    pub fn flow_times_scale(&self, t: T) -> DMatrix<T> {
        expm(&(&self.drift * t)) * self.frame.scaling(self.r)
    }

    /// |S(r)^-1 e^{-t A_h} x|, the flowed anisotropic radius of the point.
    pub fn flowed_radius(&self, p: &SpaceTimePoint<T>) -> T {
        let z = expm(&(&self.drift * (-p.t))) * &p.x;
        (self.frame.scaling(T::one() / self.r) * z).norm()
    }

    /// Open-cylinder membership: -r <= t <= 0 and strict spatial inequality.
    pub fn contains(&self, p: &SpaceTimePoint<T>) -> bool {
        if p.t < -self.r || p.t > T::zero() {
            return false;
        }
        self.flowed_radius(p) < powf(self.r, self.gamma)
    }

    /// Closed-cylinder membership (both constraints weak).
    pub fn closure_contains(&self, p: &SpaceTimePoint<T>) -> bool {
        if p.t < -self.r || p.t > T::zero() {
            return false;
        }
        self.flowed_radius(p) <= powf(self.r, self.gamma)
    }

    /// Inside / boundary / outside with tolerance [`BOUNDARY_TOL`].
    pub fn classify(&self, p: &SpaceTimePoint<T>) -> Containment {
        let tol = cast::<T>(BOUNDARY_TOL) * fmax(T::one(), self.r);
        let time_margin = fmax(-self.r - p.t, p.t - T::zero());
        let spatial_margin = self.flowed_radius(p) - powf(self.r, self.gamma);
        if time_margin > tol || spatial_margin > tol {
            return Containment::Outside;
        }
        if abs(time_margin) <= tol || abs(spatial_margin) <= tol {
            return Containment::Boundary;
        }
        Containment::Inside
    }
}

/// Gauge of a past point: the smallest cylinder radius whose closure
/// contains it. Membership is monotone in the radius, so bisection is exact
/// up to the iteration budget.
pub fn gauge_radius<T: Real>(
    frame: &KalmanFrame<T>,
    a: &DMatrix<T>,
    h: T,
    gamma: T,
    p: &SpaceTimePoint<T>,
) -> Result<T> {
    if p.t > T::zero() {
        return Err(Error::InvalidInput("gauge requires t <= 0".into()));
    }
    if gamma <= T::zero() || gamma > T::one() {
        return Err(Error::InvalidInput("gamma must lie in (0, 1]".into()));
    }
    let drift = rescaled_drift_signed(frame, a, h);
    // The flowed position is independent of the candidate radius.
    let z = expm(&(&drift * (-p.t))) * &p.x;
    let znorm = z.norm();
    if p.t == T::zero() && znorm == T::zero() {
        return Ok(T::zero());
    }
    let member = |rho: T| -> bool {
        if rho <= T::zero() {
            return false;
        }
        if p.t < -rho {
            return false;
        }
        (frame.scaling(T::one() / rho) * &z).norm() <= powf(rho, gamma)
    };

    let lo0 = abs(p.t);
    if znorm == T::zero() {
        return Ok(lo0);
    }
    // Initial bracket from the gauge upper-bound shape, expanded until it
    // actually contains the point.
    let mut guess = lo0;
    for j in 0..=frame.kappa {
        let pj = frame.project(j, &p.x).norm();
        guess = guess + powf(pj, T::one() / (gamma + cast_usize(j)));
    }
    let mut hi = fmax(guess * cast(2.0), fmax(lo0, cast(1e-8)));
    let mut expansions = 0;
    while !member(hi) {
        hi = hi * cast(2.0);
        expansions += 1;
        if expansions > 300 {
            return Err(Error::InternalConsistency(
                "gauge bracket expansion failed".into(),
            ));
        }
    }
    let mut lo = lo0;
    if member(lo) && lo > T::zero() {
        return Ok(lo);
    }
    for _ in 0..60 {
        let mid = (lo + hi) * cast(0.5);
        if member(mid) {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    Ok((lo + hi) * cast(0.5))
}

/// Stratum components below `MODULUS_FLOOR * (1 + |x|)` are treated as
/// exact zeros: rounding-level residue in a zero stratum would otherwise be
/// amplified by the small modulus exponents.
pub const MODULUS_FLOOR: f64 = 1e-13;

/// Anisotropic modulus of continuity
/// |t|^alpha + sum_j |P_j x|^(alpha / (alpha/q' + 1/q + j)).
pub fn anisotropic_modulus<T: Real>(
    frame: &KalmanFrame<T>,
    params: &ScaleParams<T>,
    p: &SpaceTimePoint<T>,
) -> Result<T> {
    if params.alpha <= T::zero() {
        return Err(Error::InvalidInput("alpha must be positive".into()));
    }
    let base = params.alpha / params.q_conj + T::one() / params.q;
    let floor = cast::<T>(MODULUS_FLOOR) * (T::one() + p.x.norm());
    let mut acc = powf(abs(p.t), params.alpha);
    for j in 0..=frame.kappa {
        let pj = frame.project(j, &p.x).norm();
        if pj > floor {
            acc = acc + powf(pj, params.alpha / (base + cast_usize(j)));
        }
    }
    Ok(acc)
}

/// Per-stratum modulus exponents alpha / (alpha/q' + 1/q + j).
pub fn modulus_exponents<T: Real>(frame: &KalmanFrame<T>, params: &ScaleParams<T>) -> Vec<T> {
    let base = params.alpha / params.q_conj + T::one() / params.q;
    (0..=frame.kappa)
        .map(|j| params.alpha / (base + cast_usize(j)))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kalman::build_frame;
    use crate::sampling::{random_unit_vector, substream};
    use approx::assert_relative_eq;
    use rand::Rng;

    fn kolmogorov_frame() -> (KalmanFrame<f64>, DMatrix<f64>) {
        let a = DMatrix::from_row_slice(2, 2, &[0.0, 0.0, 1.0, 0.0]);
        let p0 = DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, 0.0]);
        let frame = build_frame(&a, &p0).unwrap();
        (frame, a)
    }

    #[test]
    fn scale_params_invariants() {
        let p = ScaleParams::new(2.0f64, 0.5, 1.0, 0.0).unwrap();
        assert_relative_eq!(p.q_conj, 2.0);
        assert!((1.0 / p.q + 1.0 / p.q_conj - 1.0).abs() < 1e-12);
        assert!(p.gamma >= 1.0 / p.q && p.gamma <= 1.0);
        assert!(ScaleParams::new(1.0f64, 0.5, 1.0, 0.0).is_err());
        assert!(ScaleParams::new(2.0f64, 1.5, 1.0, 0.0).is_err());
    }

    #[test]
    fn scaling_matrix_examples() {
        let (frame, _) = kolmogorov_frame();
        let s2 = scale_matrix(&frame, 2.0);
        assert_relative_eq!(
            s2,
            DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, 2.0]),
            epsilon = 1e-14
        );
        assert_relative_eq!(crate::linalg::op_norm(&s2), 2.0, epsilon = 1e-12);
        assert_relative_eq!(
            scale_matrix(&frame, 1.0),
            DMatrix::<f64>::identity(2, 2),
            epsilon = 1e-14
        );
        assert_relative_eq!(
            scale_matrix(&frame, 0.0),
            frame.projections[0],
            epsilon = 1e-14
        );
        // S(r) S(1/r) = I
        for r in [0.1, 2.0, 10.0] {
            let prod = scale_matrix(&frame, r) * scale_matrix(&frame, 1.0 / r);
            assert_relative_eq!(prod, DMatrix::<f64>::identity(2, 2), epsilon = 1e-12);
        }
    }

    #[test]
    fn scaling_norm_is_max_power() {
        let mut rng = substream(5, "snorm");
        for _ in 0..10 {
            let pair = crate::sampling::random_controllable_pair(&mut rng, 5, 3, 1.0);
            let frame = build_frame(&pair.a, &pair.p0).unwrap();
            for r in [0.3f64, 1.0, 2.5] {
                let expected = 1.0f64.max(r.powi(frame.kappa as i32));
                assert_relative_eq!(
                    crate::linalg::op_norm(&scale_matrix(&frame, r)),
                    expected,
                    max_relative = 1e-10
                );
            }
        }
    }

    #[test]
    fn dilation_hand_example() {
        let (frame, _) = kolmogorov_frame();
        let p = SpaceTimePoint::new(1.0, DVector::from_vec(vec![1.0, 1.0]));
        let d = dilate(&frame, 0.5, 4.0, &p).unwrap();
        assert_relative_eq!(d.t, 4.0);
        assert_relative_eq!(d.x[0], 2.0, epsilon = 1e-13);
        assert_relative_eq!(d.x[1], 8.0, epsilon = 1e-13);
        assert_relative_eq!(dilation_determinant(&frame, 0.5, 4.0), 64.0, epsilon = 1e-10);
    }

    #[test]
    fn dilation_composition_is_group_law() {
        let (frame, _) = kolmogorov_frame();
        let mut rng = substream(6, "dilate");
        for _ in 0..10 {
            let p = SpaceTimePoint::new(rng.gen::<f64>() - 0.5, random_unit_vector(&mut rng, 2));
            let d23 = dilate(&frame, 0.5, 2.0, &dilate(&frame, 0.5, 3.0, &p).unwrap()).unwrap();
            let d6 = dilate(&frame, 0.5, 6.0, &p).unwrap();
            assert_relative_eq!(d23.t, d6.t, epsilon = 1e-12);
            assert_relative_eq!(d23.x, d6.x, epsilon = 1e-12);
        }
    }

    #[test]
    fn group_hand_examples() {
        let (frame, a) = kolmogorov_frame();
        let g = LieGroup::new(&frame, &a, 0.0).unwrap();
        // zeta = 0 acts by time shift only
        let lhs = SpaceTimePoint::new(0.7, DVector::zeros(2));
        let rhs = SpaceTimePoint::new(-0.2, DVector::from_vec(vec![1.0, 2.0]));
        let out = g.op(&lhs, &rhs);
        assert_relative_eq!(out.t, 0.5);
        assert_relative_eq!(out.x, rhs.x, epsilon = 1e-14);
        // (1,(1,0)) o (1,(0,0)) = (2,(1,1))
        let out = g.op(
            &SpaceTimePoint::new(1.0, DVector::from_vec(vec![1.0, 0.0])),
            &SpaceTimePoint::new(1.0, DVector::zeros(2)),
        );
        assert_relative_eq!(out.t, 2.0);
        assert_relative_eq!(out.x, DVector::from_vec(vec![1.0, 1.0]), epsilon = 1e-13);
        // inverse of (1,(0,1)) is (-1, -(0,1))
        let inv = g.inverse(&SpaceTimePoint::new(1.0, DVector::from_vec(vec![0.0, 1.0])));
        assert_relative_eq!(inv.t, -1.0);
        assert_relative_eq!(inv.x, DVector::from_vec(vec![0.0, -1.0]), epsilon = 1e-13);
    }

    #[test]
    fn group_axioms_on_random_samples() {
        let mut rng = substream(7, "group-axioms");
        for _ in 0..25 {
            let pair = crate::sampling::random_controllable_pair(&mut rng, 4, 2, 1.2);
            let frame = build_frame(&pair.a, &pair.p0).unwrap();
            let h = rng.gen::<f64>();
            let g = LieGroup::new(&frame, &pair.a, h).unwrap();
            for _ in 0..40 {
                let p1 = SpaceTimePoint::new(
                    rng.gen::<f64>() - 0.5,
                    random_unit_vector(&mut rng, frame.dim),
                );
                let p2 = SpaceTimePoint::new(
                    rng.gen::<f64>() - 0.5,
                    random_unit_vector(&mut rng, frame.dim),
                );
                let p3 = SpaceTimePoint::new(
                    rng.gen::<f64>() - 0.5,
                    random_unit_vector(&mut rng, frame.dim),
                );
                // associativity
                let left = g.op(&g.op(&p1, &p2), &p3);
                let right = g.op(&p1, &g.op(&p2, &p3));
                assert_relative_eq!(left.t, right.t, epsilon = 1e-10);
                assert_relative_eq!(left.x, right.x, epsilon = 1e-10);
                // identity and inverse
                let id = SpaceTimePoint::origin(frame.dim);
                let e1 = g.op(&id, &p1);
                assert_relative_eq!(e1.x, p1.x, epsilon = 1e-12);
                let inv = g.inverse(&p1);
                let prod = g.op(&inv, &p1);
                assert!(prod.t.abs() < 1e-12);
                assert!(prod.x.norm() < 1e-10);
                // double inverse
                let back = g.inverse(&inv);
                assert_relative_eq!(back.x, p1.x, epsilon = 1e-10);
            }
        }
    }

    #[test]
    fn dilation_group_compatibility() {
        // D_r(tau, zeta) o_h D_r(t, x) = D_r[(tau, zeta) o_{hr} (t, x)]
        // and the inverse law, on random controllable frames.
        let mut rng = substream(8, "lg-dil");
        for _ in 0..20 {
            let pair = crate::sampling::random_controllable_pair(&mut rng, 4, 2, 1.0);
            let frame = build_frame(&pair.a, &pair.p0).unwrap();
            let h = 0.8 * rng.gen::<f64>();
            let r = 0.2 + rng.gen::<f64>();
            let gamma = 0.5;
            let g_h = LieGroup::new(&frame, &pair.a, h).unwrap();
            let g_hr = LieGroup::new(&frame, &pair.a, h * r).unwrap();
            for _ in 0..20 {
                let p1 = SpaceTimePoint::new(
                    0.5 * (rng.gen::<f64>() - 0.5),
                    random_unit_vector(&mut rng, frame.dim),
                );
                let p2 = SpaceTimePoint::new(
                    0.5 * (rng.gen::<f64>() - 0.5),
                    random_unit_vector(&mut rng, frame.dim),
                );
                let lhs = g_h.op(
                    &dilate(&frame, gamma, r, &p1).unwrap(),
                    &dilate(&frame, gamma, r, &p2).unwrap(),
                );
                let rhs = dilate(&frame, gamma, r, &g_hr.op(&p1, &p2)).unwrap();
                assert_relative_eq!(lhs.t, rhs.t, epsilon = 1e-10);
                assert_relative_eq!(lhs.x, rhs.x, epsilon = 1e-10);

                let inv_lhs = g_h.inverse(&dilate(&frame, gamma, r, &p1).unwrap());
                let inv_rhs = dilate(&frame, gamma, r, &g_hr.inverse(&p1)).unwrap();
                assert_relative_eq!(inv_lhs.t, inv_rhs.t, epsilon = 1e-10);
                assert_relative_eq!(inv_lhs.x, inv_rhs.x, epsilon = 1e-10);
            }
        }
    }

    #[test]
    fn cylinder_membership_examples() {
        let (frame, a) = kolmogorov_frame();
        let cyl = Cylinder::new(&frame, &a, 0.0, 0.5, 1.0).unwrap();
        assert!(cyl.contains(&SpaceTimePoint::origin(2)));
        assert!(!cyl.contains(&SpaceTimePoint::new(-2.0, DVector::zeros(2))));
        let p = SpaceTimePoint::new(-0.5, DVector::from_vec(vec![0.3, 0.4]));
        assert_relative_eq!(cyl.flowed_radius(&p), 0.3925f64.sqrt(), epsilon = 1e-12);
        assert!(cyl.contains(&p));
        assert_eq!(cyl.classify(&p), Containment::Inside);
        assert_eq!(
            cyl.classify(&SpaceTimePoint::new(0.0, DVector::zeros(2))),
            Containment::Boundary
        );
    }

    #[test]
    fn cylinder_dilation_law() {
        let mut rng = substream(9, "cyl-dil");
        for _ in 0..10 {
            let pair = crate::sampling::random_controllable_pair(&mut rng, 4, 2, 1.0);
            let frame = build_frame(&pair.a, &pair.p0).unwrap();
            let gamma = 0.6;
            let h = 0.5 * rng.gen::<f64>();
            let rho = 0.3 + rng.gen::<f64>();
            let r = 0.4 + rng.gen::<f64>();
            let small = Cylinder::new(&frame, &pair.a, h, gamma, r).unwrap();
            let big = Cylinder::new(&frame, &pair.a, h / rho, gamma, rho * r).unwrap();
            for _ in 0..60 {
                let p = SpaceTimePoint::new(
                    -rho * r * rng.gen::<f64>() * 1.2,
                    random_unit_vector(&mut rng, frame.dim) * (2.0 * rng.gen::<f64>()),
                );
                let pulled = dilate(&frame, gamma, 1.0 / rho, &p).unwrap();
                assert_eq!(big.contains(&p), small.contains(&pulled));
            }
        }
    }

    #[test]
    fn gauge_examples() {
        let (frame, a) = kolmogorov_frame();
        let origin = SpaceTimePoint::origin(2);
        assert_eq!(gauge_radius(&frame, &a, 0.0, 0.5, &origin).unwrap(), 0.0);
        // time constraint binds exactly
        let p = SpaceTimePoint::new(-0.37, DVector::zeros(2));
        assert_relative_eq!(
            gauge_radius(&frame, &a, 0.0, 0.5, &p).unwrap(),
            0.37,
            epsilon = 1e-12
        );
        // spatial constraint: |x| = rho^gamma for x in E_0
        let p = SpaceTimePoint::new(0.0, DVector::from_vec(vec![0.25, 0.0]));
        let rho = gauge_radius(&frame, &a, 0.0, 0.5, &p).unwrap();
        assert_relative_eq!(rho, 0.0625, epsilon = 1e-9);
        // returned radius is the membership boundary
        let cyl_in = Cylinder::new(&frame, &a, 0.0, 0.5, rho * (1.0 + 1e-6)).unwrap();
        let cyl_out = Cylinder::new(&frame, &a, 0.0, 0.5, rho * (1.0 - 1e-6)).unwrap();
        assert!(cyl_in.closure_contains(&p));
        assert!(!cyl_out.closure_contains(&p));
        // future points are rejected
        assert!(gauge_radius(&frame, &a, 0.0, 0.5, &SpaceTimePoint::new(0.1, DVector::zeros(2))).is_err());
    }

    #[test]
    fn gauge_upper_bound_holds_with_single_constant() {
        let mut rng = substream(10, "gauge-bound");
        for _ in 0..5 {
            let pair = crate::sampling::random_controllable_pair(&mut rng, 4, 2, 1.0);
            let frame = build_frame(&pair.a, &pair.p0).unwrap();
            let gamma = 0.55;
            let h = 0.3;
            let mut worst: f64 = 0.0;
            for _ in 0..2000 {
                let p = SpaceTimePoint::new(
                    -rng.gen::<f64>(),
                    random_unit_vector(&mut rng, frame.dim) * (2.0 * rng.gen::<f64>()),
                );
                let rho = gauge_radius(&frame, &pair.a, h, gamma, &p).unwrap();
                let mut bound = p.t.abs();
                for j in 0..=frame.kappa {
                    bound += frame
                        .project(j, &p.x)
                        .norm()
                        .powf(1.0 / (gamma + j as f64));
                }
                if bound > 0.0 {
                    worst = worst.max(rho.min(1.0) / bound);
                }
            }
            // One finite constant covers the whole sample.
            assert!(worst.is_finite() && worst > 0.0);
            assert!(worst < 50.0, "gauge bound constant blew up: {worst}");
        }
    }

    mod properties {
        use super::*;
        use proptest::prelude::*;

        fn kolmo() -> (KalmanFrame<f64>, DMatrix<f64>) {
            kolmogorov_frame()
        }

        proptest! {
            #![proptest_config(ProptestConfig::with_cases(64))]

            /// Double inverse is the identity for arbitrary points and h.
            #[test]
            fn double_inverse_is_identity(
                t in -2.0f64..2.0,
                x0 in -3.0f64..3.0,
                x1 in -3.0f64..3.0,
                h in 0.0f64..2.0,
            ) {
                let (frame, a) = kolmo();
                let g = LieGroup::new(&frame, &a, h).unwrap();
                let p = SpaceTimePoint::new(t, DVector::from_row_slice(&[x0, x1]));
                let back = g.inverse(&g.inverse(&p));
                prop_assert!((back.t - p.t).abs() < 1e-12);
                prop_assert!((back.x - &p.x).norm() < 1e-10);
            }

            /// The gauge brackets the membership boundary: the closed
            /// cylinder misses the point just below and contains it just
            /// above the returned radius.
            #[test]
            fn gauge_brackets_membership(
                t in -1.5f64..0.0,
                x0 in -2.0f64..2.0,
                x1 in -2.0f64..2.0,
                h in 0.0f64..1.0,
            ) {
                let (frame, a) = kolmo();
                let gamma = 0.5;
                let p = SpaceTimePoint::new(t, DVector::from_row_slice(&[x0, x1]));
                let rho = gauge_radius(&frame, &a, h, gamma, &p).unwrap();
                prop_assume!(rho > 1e-8);
                let inside = Cylinder::new(&frame, &a, h, gamma, rho * (1.0 + 1e-6)).unwrap();
                prop_assert!(inside.closure_contains(&p));
                // Just below, at least one constraint must fail unless the
                // time constraint binds exactly (then rho = |t| is sharp).
                let outside = Cylinder::new(&frame, &a, h, gamma, rho * (1.0 - 1e-6)).unwrap();
                prop_assert!(!outside.closure_contains(&p));
            }

            /// Three-way classification is consistent with the plain
            /// membership predicate away from the boundary band.
            #[test]
            fn classification_matches_membership(
                t in -1.0f64..0.0,
                x0 in -1.5f64..1.5,
                x1 in -1.5f64..1.5,
            ) {
                let (frame, a) = kolmo();
                let cyl = Cylinder::new(&frame, &a, 0.0, 0.5, 0.8).unwrap();
                let p = SpaceTimePoint::new(t, DVector::from_row_slice(&[x0, x1]));
                match cyl.classify(&p) {
                    Containment::Inside => prop_assert!(cyl.contains(&p)),
                    Containment::Outside => prop_assert!(!cyl.contains(&p)),
                    Containment::Boundary => {}
                }
            }
        }
    }

    #[test]
    fn modulus_hand_values() {
        let (frame, _) = kolmogorov_frame();
        let params = ScaleParams::exponents(2.0, 0.5).unwrap();
        let p = SpaceTimePoint::new(1.0, DVector::from_vec(vec![1.0, 1.0]));
        assert_relative_eq!(
            anisotropic_modulus(&frame, &params, &p).unwrap(),
            3.0,
            epsilon = 1e-13
        );
        let p = SpaceTimePoint::new(0.0, DVector::from_vec(vec![0.1, 0.0]));
        assert_relative_eq!(
            anisotropic_modulus(&frame, &params, &p).unwrap(),
            0.1f64.powf(2.0 / 3.0),
            epsilon = 1e-13
        );
        assert_eq!(
            anisotropic_modulus(&frame, &params, &SpaceTimePoint::origin(2)).unwrap(),
            0.0
        );
        let exps = modulus_exponents(&frame, &params);
        assert_relative_eq!(exps[0], 2.0 / 3.0, epsilon = 1e-14);
        assert_relative_eq!(exps[1], 2.0 / 7.0, epsilon = 1e-14);
    }
}
