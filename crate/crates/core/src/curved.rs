//! Curved trajectory families: interpolation flows driven by
//! fractional-power controls, their cost and Jacobian asymptotics, and the
//! cone sets used to average unbounded sources along them.
//!
//! A family fixes a horizon t and exponents alpha_0, ..., alpha_kappa. It
//! carries linear maps B_i so that the control
//! beta_tau(w) = sum_i tau^{alpha_i - 1} B_i w steers the state from 0 to w
//! over [0, t]. The construction assembles the endpoint operator of the
//! flow representation and inverts the perturbation (I + H R) which is a
//! contraction whenever h t is small enough.

use nalgebra::{DMatrix, DVector};

use crate::control::Trajectory;
use crate::error::{Error, Result};
use crate::kalman::{rescaled_drift_signed, KalmanFrame};
use crate::linalg::{expm, ols_line, op_norm, pinv, singular_values, QuadMesh};
use crate::scalar::{abs, cast, cast_usize, fmax, ln, powf, powi, Real};

/// Minimum pairwise gap between the fractional exponents.
pub const ALPHA_MIN_GAP: f64 = 1e-3;
/// Margin used when choosing default exponents inside their open range.
pub const ALPHA_MARGIN: f64 = 0.02;

/// Principal part of an arbitrary drift relative to a frame:
/// sum_{j < kappa} P_{j+1} a P_j.
fn principal_of<T: Real>(frame: &KalmanFrame<T>, a: &DMatrix<T>) -> DMatrix<T> {
    let n = frame.dim;
    let mut a0 = DMatrix::<T>::zeros(n, n);
    for j in 0..frame.kappa {
        a0 += &frame.projections[j + 1] * a * &frame.projections[j];
    }
    a0
}

/// 1 / ((alpha)(alpha+1)...(alpha+k)).
fn pochhammer_inv<T: Real>(alpha: T, k: usize) -> T {
    let mut prod = T::one();
    for d in 0..=k {
        prod = prod * (alpha + cast_usize(d));
    }
    T::one() / prod
}

/// Endpoint operator of the principal flow against the fractional weights:
/// block i equals int_0^1 (1-tau)^{alpha_i - 1} e^{tau A_0} U_0 dtau,
/// evaluated exactly through Beta-function identities.
fn assemble_g<T: Real>(
    frame: &KalmanFrame<T>,
    a0: &DMatrix<T>,
    u0: &DMatrix<T>,
    alphas: &[T],
) -> DMatrix<T> {
    let n = frame.dim;
    let n0 = u0.ncols();
    let kappa = frame.kappa;
    let mut a0_pows = vec![u0.clone()];
    for _ in 1..=kappa {
        let next = a0 * a0_pows.last().unwrap();
        a0_pows.push(next);
    }
    let mut g = DMatrix::<T>::zeros(n, (kappa + 1) * n0);
    for (i, &alpha) in alphas.iter().enumerate() {
        let mut block = DMatrix::<T>::zeros(n, n0);
        for (l, pw) in a0_pows.iter().enumerate() {
            block += pw * pochhammer_inv(alpha, l);
        }
        g.columns_mut(i * n0, n0).copy_from(&block);
    }
    g
}

/// Perturbation operator: block i equals
/// int_0^1 (1-tau)^{alpha_i - 1} R_A(tau; h) U_0 dtau, summed exactly per
/// power of h with the same Beta identities.
fn assemble_r<T: Real>(
    frame: &KalmanFrame<T>,
    a: &DMatrix<T>,
    u0: &DMatrix<T>,
    alphas: &[T],
    h: T,
) -> DMatrix<T> {
    let n = frame.dim;
    let n0 = u0.ncols();
    let kappa = frame.kappa;
    let mut r = DMatrix::<T>::zeros(n, (kappa + 1) * n0);
    if h == T::zero() {
        return r;
    }
    let norm_a: f64 = num_traits::ToPrimitive::to_f64(&op_norm(a)).unwrap();
    let abs_h: f64 = num_traits::ToPrimitive::to_f64(&abs(h)).unwrap();
    let alpha_min: f64 = alphas
        .iter()
        .map(|&x| num_traits::ToPrimitive::to_f64(&x).unwrap())
        .fold(f64::INFINITY, f64::min);

    // Powers of A applied to U0, grown on demand.
    let mut a_pows: Vec<DMatrix<T>> = vec![u0.clone()];
    let mut h_pow = T::one();
    let mut log_fact = 0.0f64;
    for m in 1..=200usize {
        h_pow = h_pow * h;
        log_fact += (m as f64).ln();
        // Tail bound: h^m ||A||^{m+l} / (alpha_min (m+l-1)!) style estimate.
        let bound = (m as f64) * abs_h.max(1e-300).ln()
            + ((m + kappa) as f64) * norm_a.max(1e-300).ln()
            - log_fact
            - alpha_min.max(1e-6).ln();
        while a_pows.len() <= m + kappa {
            let next = a * a_pows.last().unwrap();
            a_pows.push(next);
        }
        for (i, &alpha) in alphas.iter().enumerate() {
            let mut block = DMatrix::<T>::zeros(n, n0);
            for l in 0..=kappa {
                block += &frame.projections[l] * &a_pows[m + l] * pochhammer_inv(alpha, m + l);
            }
            let mut cols = r.columns_mut(i * n0, n0);
            cols += block * h_pow;
        }
        if bound.exp() < 1e-15 && m > kappa + 1 {
            break;
        }
    }
    r
}

/// A curved interpolation family on [0, t].
pub struct CurvedFamily<T: Real> {
    pub frame: KalmanFrame<T>,
    pub a: DMatrix<T>,
    pub h: T,
    /// Horizon of the flow.
    pub t: T,
    pub alphas: Vec<T>,
    /// Operator norm of H R_{ht}; the construction requires <= 1/2.
    pub perturbation_norm: T,
    u0: DMatrix<T>,
    g_op: DMatrix<T>,
    /// Coefficient map: stacked blocks B_i, ((kappa+1) n0) x N.
    b_map: DMatrix<T>,
}

/// Default exponents: evenly spaced in
/// (1/q + margin, min(1, (p - 1 - sum j n_j)/N) - margin).
pub fn default_alphas<T: Real>(frame: &KalmanFrame<T>, q: T, p: T) -> Result<Vec<T>> {
    let lo = T::one() / q + cast(ALPHA_MARGIN);
    let cap = (p - T::one() - cast_usize::<T>(frame.weighted_dim())) / cast_usize(frame.dim);
    let hi = crate::scalar::fmin(T::one(), cap) - cast(ALPHA_MARGIN);
    if hi <= lo {
        return Err(Error::InvalidInput(format!(
            "no admissible exponent range for q, p: ({:.4}, {:.4})",
            num_traits::ToPrimitive::to_f64(&lo).unwrap_or(f64::NAN),
            num_traits::ToPrimitive::to_f64(&hi).unwrap_or(f64::NAN)
        )));
    }
    let count = frame.kappa + 1;
    if count == 1 {
        return Ok(vec![(lo + hi) * cast(0.5)]);
    }
    let step = (hi - lo) / cast_usize(count - 1);
    Ok((0..count).map(|i| lo + step * cast_usize(i)).collect())
}

/// Build the curved family for `(frame, a)` at drift scale `h` and horizon
/// `t` with the given fractional exponents.
pub fn build_curved_family<T: Real>(
    frame: &KalmanFrame<T>,
    a: &DMatrix<T>,
    h: T,
    t: T,
    alphas: &[T],
) -> Result<CurvedFamily<T>> {
    if t <= T::zero() {
        return Err(Error::InvalidInput("horizon must be positive".into()));
    }
    if h < T::zero() {
        return Err(Error::InvalidInput("h must be non-negative".into()));
    }
    if alphas.len() != frame.kappa + 1 {
        return Err(Error::InvalidInput(format!(
            "need {} exponents, got {}",
            frame.kappa + 1,
            alphas.len()
        )));
    }
    for (i, &ai) in alphas.iter().enumerate() {
        if ai <= T::zero() || ai >= T::one() {
            return Err(Error::InvalidInput("exponents must lie in (0, 1)".into()));
        }
        for &aj in &alphas[i + 1..] {
            if abs(ai - aj) < cast(ALPHA_MIN_GAP) {
                return Err(Error::InvalidInput(
                    "exponents must be pairwise distinct (gap >= 1e-3)".into(),
                ));
            }
        }
    }

    let u0 = frame.stratum_basis(0);
    let a0 = principal_of(frame, a);
    let g_op = assemble_g(frame, &a0, &u0, alphas);
    let sv = singular_values(&g_op);
    let smin = *sv.last().unwrap();
    if smin <= cast(1e-8) {
        return Err(Error::Construction(format!(
            "endpoint operator is not numerically surjective: smallest singular value {:.3e}",
            num_traits::ToPrimitive::to_f64(&smin).unwrap_or(f64::NAN)
        )));
    }
    let h_op = pinv(&g_op, cast(1e-12));

    let r_ht = assemble_r(frame, a, &u0, alphas, h * t);
    let hr = &h_op * &r_ht;
    let perturbation_norm = op_norm(&hr);
    if perturbation_norm > cast(0.5) {
        return Err(Error::HTooLarge {
            norm: num_traits::ToPrimitive::to_f64(&perturbation_norm).unwrap_or(f64::NAN),
        });
    }

    let dim_b = hr.nrows();
    let inv = (DMatrix::<T>::identity(dim_b, dim_b) + hr)
        .lu()
        .try_inverse()
        .ok_or_else(|| Error::Construction("perturbed endpoint map is singular".into()))?;

    // B = D_alpha(t)^{-1} (I + H R_{ht})^{-1} H S(t)^{-1}
    let n0 = u0.ncols();
    let mut d_inv = DMatrix::<T>::zeros(dim_b, dim_b);
    for (i, &alpha) in alphas.iter().enumerate() {
        let scale = powf(t, -alpha);
        for k in 0..n0 {
            d_inv[(i * n0 + k, i * n0 + k)] = scale;
        }
    }
    let b_map = d_inv * inv * &h_op * frame.scaling(T::one() / t);

    Ok(CurvedFamily {
        frame: frame.clone(),
        a: a.clone(),
        h,
        t,
        alphas: alphas.to_vec(),
        perturbation_norm,
        u0,
        g_op,

        b_map,
    })
}

impl<T: Real> CurvedFamily<T> {
    fn n0(&self) -> usize {
        self.u0.ncols()
    }

    /// Control at tau in E_0 coordinates: sum_i tau^{alpha_i - 1} B_i w.
    pub fn control_at(&self, tau: T, w: &DVector<T>) -> DVector<T> {
        let n0 = self.n0();
        let bw = &self.b_map * w;
        let mut out = DVector::<T>::zeros(n0);
        for (i, &alpha) in self.alphas.iter().enumerate() {
            let weight = powf(tau, alpha - T::one());
            for k in 0..n0 {
                out[k] = out[k] + bw[i * n0 + k] * weight;
            }
        }
        out
    }

    /// Exact average of the control over a cell [a, b] (the fractional
    /// powers integrate in closed form).
    pub fn control_average(&self, a: T, b: T, w: &DVector<T>) -> DVector<T> {
        let n0 = self.n0();
        let bw = &self.b_map * w;
        let mut out = DVector::<T>::zeros(n0);
        for (i, &alpha) in self.alphas.iter().enumerate() {
            let weight = (powf(b, alpha) - powf(a, alpha)) / (alpha * (b - a));
            for k in 0..n0 {
                out[k] = out[k] + bw[i * n0 + k] * weight;
            }
        }
        out
    }

    /// Flow map Phi(s, .) as an N x N matrix:
    /// S(s) (G + R_{hs}) D_alpha(s) B.
    pub fn flow_map(&self, s: T) -> DMatrix<T> {
        let n0 = self.n0();
        let dim_b = self.b_map.nrows();
        let mut d_s = DMatrix::<T>::zeros(dim_b, dim_b);
        for (i, &alpha) in self.alphas.iter().enumerate() {
            let scale = powf(s, alpha);
            for k in 0..n0 {
                d_s[(i * n0 + k, i * n0 + k)] = scale;
            }
        }
        let ops = &self.g_op + assemble_r(&self.frame, &self.a, &self.u0, &self.alphas, self.h * s);
        self.frame.scaling(s) * ops * d_s * &self.b_map
    }

    /// |det grad_w Phi^{-1}(s)| = 1 / |det Phi(s)|.
    pub fn inverse_jacobian_det(&self, s: T) -> T {
        let det = self.flow_map(s).determinant();
        T::one() / abs(det)
    }

    /// Operator norm of S(t)^{-1} Phi^{-1}(s) S(s); the gradient estimate
    /// bounds this by C (t/s)^{alpha*}.
    pub fn gradient_ratio(&self, s: T) -> Result<T> {
        let phi = self.flow_map(s);
        let inv = phi
            .lu()
            .try_inverse()
            .ok_or_else(|| Error::Construction("flow map is singular".into()))?;
        Ok(op_norm(
            &(self.frame.scaling(T::one() / self.t) * inv * self.frame.scaling(s)),
        ))
    }

    /// Cost int_0^t |beta_tau(w)|^{q'} dtau by quadrature graded toward the
    /// singular endpoint (ratio 1/2, 40 levels).
    pub fn control_cost(&self, w: &DVector<T>, q_conj: T) -> T {
        let mesh = QuadMesh::graded(T::zero(), self.t, 64, 40, true, false);
        mesh.integrate(|tau| powf(self.control_at(tau, w).norm(), q_conj))
    }
}

/// Row of the Jacobian profile report.
#[derive(Debug, Clone, serde::Serialize)]
pub struct JacobianRow {
    pub s: f64,
    pub det_inverse_jacobian: f64,
    pub gradient_ratio: f64,
}

/// Jacobian profile along a decreasing s sweep with a log-log exponent fit.
#[derive(Debug, Clone, serde::Serialize)]
pub struct JacobianProfile {
    pub rows: Vec<JacobianRow>,
    /// Fitted exponent of |det grad Phi^{-1}(s)| against t/s.
    pub fitted_exponent: f64,
    pub exponent_stderr: f64,
    /// Theoretical bound N alpha* + sum_j j n_j.
    pub exponent_bound: f64,
    /// Whether the determinant is nondecreasing as s decreases.
    pub monotone: bool,
}

pub fn jacobian_profile<T: Real>(
    family: &CurvedFamily<T>,
    s_list: &[T],
) -> Result<JacobianProfile> {
    if s_list.is_empty() {
        return Err(Error::InvalidInput("empty s list".into()));
    }
    for &s in s_list {
        if s <= T::zero() || s > family.t * (T::one() + cast(1e-12)) {
            return Err(Error::InvalidInput("need 0 < s <= t".into()));
        }
    }
    let mut rows = Vec::with_capacity(s_list.len());
    let mut xs = Vec::new();
    let mut ys = Vec::new();
    for &s in s_list {
        let det = family.inverse_jacobian_det(s);
        let grad = family.gradient_ratio(s)?;
        rows.push(JacobianRow {
            s: num_traits::ToPrimitive::to_f64(&s).unwrap(),
            det_inverse_jacobian: num_traits::ToPrimitive::to_f64(&det).unwrap(),
            gradient_ratio: num_traits::ToPrimitive::to_f64(&grad).unwrap(),
        });
        xs.push(ln(family.t / s));
        ys.push(ln(det));
    }
    let (slope, _, stderr) = if xs.len() >= 2 {
        ols_line(&xs, &ys)
    } else {
        (T::zero(), T::zero(), T::zero())
    };
    let alpha_star = family
        .alphas
        .iter()
        .cloned()
        .fold(T::zero(), fmax);
    let bound = cast_usize::<T>(family.frame.dim) * alpha_star
        + cast_usize::<T>(family.frame.weighted_dim());
    let mut sorted: Vec<(f64, f64)> = rows
        .iter()
        .map(|r| (r.s, r.det_inverse_jacobian))
        .collect();
    sorted.sort_by(|a, b| b.0.partial_cmp(&a.0).unwrap());
    let monotone = sorted.windows(2).all(|w| w[1].1 >= w[0].1 * (1.0 - 1e-9));
    Ok(JacobianProfile {
        rows,
        fitted_exponent: num_traits::ToPrimitive::to_f64(&slope).unwrap(),
        exponent_stderr: num_traits::ToPrimitive::to_f64(&stderr).unwrap(),
        exponent_bound: num_traits::ToPrimitive::to_f64(&bound).unwrap(),
        monotone,
    })
}

/// Dyadic integrability proxy for |det grad Phi^{-1}(s)|^{1/(p-1)}:
/// partial sums over s = t/2^k until the geometric tail estimate drops
/// below `rel_tol`.
#[derive(Debug, Clone, serde::Serialize)]
pub struct IntegrabilityProxy {
    pub partial_sums: Vec<f64>,
    /// Level at which the relative tail fell below the tolerance.
    pub converged_at: Option<usize>,
    pub relative_tail: f64,
}

pub fn integrability_proxy<T: Real>(
    family: &CurvedFamily<T>,
    p: T,
    max_levels: usize,
    rel_tol: f64,
) -> Result<IntegrabilityProxy> {
    if p <= T::one() {
        return Err(Error::InvalidInput("p must exceed 1".into()));
    }
    let expo = T::one() / (p - T::one());
    let mut sum = T::zero();
    let mut partial = Vec::new();
    let mut prev_term: Option<T> = None;
    let mut converged_at = None;
    let mut rel_tail = f64::INFINITY;
    let half = cast::<T>(0.5);
    for k in 0..max_levels {
        let s_hi = family.t * powi(half, k as i32);
        let s_lo = s_hi * half;
        let det = family.inverse_jacobian_det(s_hi);
        let term = powf(det, expo) * (s_hi - s_lo);
        sum = sum + term;
        partial.push(num_traits::ToPrimitive::to_f64(&sum).unwrap());
        if let Some(pt) = prev_term {
            let ratio = term / pt;
            if ratio < T::one() {
                let tail = term * ratio / (T::one() - ratio);
                let rel = tail / (sum + tail);
                rel_tail = num_traits::ToPrimitive::to_f64(&rel).unwrap();
                if rel_tail < rel_tol && converged_at.is_none() {
                    converged_at = Some(k);
                    break;
                }
            }
        }
        prev_term = Some(term);
    }
    Ok(IntegrabilityProxy {
        partial_sums: partial,
        converged_at,
        relative_tail: rel_tail,
    })
}

/// Render a curved segment as a trajectory: exact cell-average controls on
/// a doubly-graded mesh, stepped by the discrete flow, with a distributed
/// endpoint correction so the sampled path interpolates start and target
/// at solver precision.
fn render_segment<T: Real>(
    family: &CurvedFamily<T>,
    w: &DVector<T>,
    t_offset: T,
    reverse: bool,
    base_cells: usize,
) -> Result<(Vec<T>, Vec<DVector<T>>, Vec<DVector<T>>)> {
    let frame = &family.frame;
    let a_h = rescaled_drift_signed(frame, &family.a, family.h);
    let mesh = QuadMesh::graded(T::zero(), family.t, base_cells, 40, true, true);
    let breaks = mesh.breaks.clone();
    let cells = breaks.len() - 1;
    let n = frame.dim;

    // Controls: exact cell averages in E_0 coordinates.
    let mut controls: Vec<DVector<T>> = (0..cells)
        .map(|k| family.control_average(breaks[k], breaks[k + 1], w))
        .collect();

    // Per-cell propagators.
    let props: Vec<DMatrix<T>> = (0..cells)
        .map(|k| expm(&(&a_h * (breaks[k + 1] - breaks[k]))))
        .collect();
    let thetas: Vec<DMatrix<T>> = (0..cells)
        .map(|k| {
            let dt = breaks[k + 1] - breaks[k];
            let m = QuadMesh::uniform(T::zero(), dt, 2);
            let mut acc = DMatrix::<T>::zeros(n, n);
            for (x, wt) in m.nodes.iter().zip(m.weights.iter()) {
                acc += expm(&(&a_h * *x)) * *wt;
            }
            acc * &family.u0
        })
        .collect();

    let run = |controls: &Vec<DVector<T>>| -> Vec<DVector<T>> {
        let mut states = Vec::with_capacity(cells + 1);
        states.push(DVector::<T>::zeros(n));
        for k in 0..cells {
            let next = &props[k] * &states[k] + &thetas[k] * &controls[k];
            states.push(next);
        }
        states
    };

    // Distributed endpoint correction toward w.
    let mut end_props: Vec<DMatrix<T>> = Vec::with_capacity(cells);
    {
        let mut acc = DMatrix::<T>::identity(n, n);
        let mut rev_acc: Vec<DMatrix<T>> = Vec::with_capacity(cells);
        for k in (0..cells).rev() {
            rev_acc.push(acc.clone());
            acc = &acc * &props[k];
        }
        for k in 0..cells {
            end_props.push(rev_acc[cells - 1 - k].clone() * &thetas[k]);
        }
    }
    let states = run(&controls);
    let defect = w - states.last().unwrap();
    let mut w_corr = DMatrix::<T>::zeros(n, n);
    for ep in &end_props {
        w_corr += ep * ep.transpose();
    }
    if let Some(pc) = crate::linalg::solve_spd(&w_corr, &defect) {
        for (k, ep) in end_props.iter().enumerate() {
            controls[k] += ep.transpose() * &pc;
        }
    }
    let states = run(&controls);

    // Map to global time. Forward: global = t_offset + local, control kept.
    // Reverse: the segment runs backwards in global time; reparametrize
    // sigma -> t_offset - sigma and flip control signs (time reversal of
    // the drift).
    if !reverse {
        let times: Vec<T> = breaks.iter().map(|&b| t_offset + b).collect();
        let ctrl: Vec<DVector<T>> = controls.iter().map(|c| &family.u0 * c).collect();
        Ok((times, states, ctrl))
    } else {
        let mut times: Vec<T> = breaks.iter().map(|&b| t_offset - b).collect();
        times.reverse();
        let mut states_rev = states;
        states_rev.reverse();
        let mut ctrl: Vec<DVector<T>> = controls.iter().map(|c| -(&family.u0 * c)).collect();
        ctrl.reverse();
        Ok((times, states_rev, ctrl))
    }
}

/// Concatenated bump path: rises from 0 at time -1 to `w` at the midpoint
/// (t-1)/2, then returns to 0 at the cylinder time t.
///
/// `fwd` must be built for the drift `a` and `bwd` for `-a` (time
/// reversal), both with horizon (1+t)/2 and equal h.
pub fn concatenated_path<T: Real>(
    fwd: &CurvedFamily<T>,
    bwd: &CurvedFamily<T>,
    w: &DVector<T>,
) -> Result<Trajectory<T>> {
    if abs(fwd.t - bwd.t) > cast(1e-12) || abs(fwd.h - bwd.h) > cast(1e-12) {
        return Err(Error::Construction(
            "forward and backward families must share horizon and h".into(),
        ));
    }
    if op_norm(&(&fwd.a + &bwd.a)) > cast::<T>(1e-10) * fmax(T::one(), op_norm(&fwd.a)) {
        return Err(Error::Construction(
            "backward family must be built for the reversed drift".into(),
        ));
    }
    let half_span = fwd.t;
    let t_cyl = half_span * cast(2.0) - T::one();
    let midpoint = (t_cyl - T::one()) * cast(0.5);

    let (t1, s1, c1) = render_segment(fwd, w, -T::one(), false, 48)?;
    let (t2, s2, c2) = render_segment(bwd, w, t_cyl, true, 48)?;

    let mid_gap = (s1.last().unwrap() - &s2[0]).norm();
    if mid_gap > cast(1e-8) {
        return Err(Error::Construction(format!(
            "midpoint mismatch {:.3e}",
            num_traits::ToPrimitive::to_f64(&mid_gap).unwrap_or(f64::NAN)
        )));
    }
    debug_assert!(abs(*t1.last().unwrap() - midpoint) < cast(1e-9));

    let mut times = t1;
    times.extend_from_slice(&t2[1..]);
    let mut states = s1;
    states.extend_from_slice(&s2[1..]);
    let mut controls = c1;
    controls.extend_from_slice(&c2);

    let mut cost = T::zero();
    let q_dummy = cast::<T>(2.0);
    for k in 0..controls.len() {
        let dt = times[k + 1] - times[k];
        cost = cost + powf(controls[k].norm(), q_dummy) * dt;
    }
    Ok(Trajectory {
        times,
        states,
        controls,
        cost: cost / q_dummy,
    })
}

/// Discrete L^{q'} cost of a trajectory's control.
pub fn path_control_cost<T: Real>(traj: &Trajectory<T>, q_conj: T) -> T {
    let mut acc = T::zero();
    for k in 0..traj.controls.len() {
        let dt = traj.times[k + 1] - traj.times[k];
        acc = acc + powf(traj.controls[k].norm(), q_conj) * dt;
    }
    acc
}

// ---------------------------------------------------------------------------
// Cone sets
// ---------------------------------------------------------------------------

/// Cone cross-section: the image of the unit ball under
/// eps^{a p / N} (1 + t)^b S(1 + t).
#[derive(Debug, Clone)]
pub struct ConeSet<T: Real> {
    pub epsilon: T,
    /// Cylinder time, in (-1, 0).
    pub t: T,
    pub a_exp: T,
    pub b_exp: T,
    /// Source-term gain exponent mu = p q' / (N + p q').
    pub mu: T,
    /// Time gain exponent nu = q'(b - 1/q).
    pub nu: T,
    /// Affine shape map (N x N).
    pub shape: DMatrix<T>,
    /// Lebesgue volume of the set.
    pub volume: T,
}

/// Volume of the unit ball in R^n.
fn unit_ball_volume(n: usize) -> f64 {
    // Gamma(n/2 + 1) by parity.
    let gamma = if n % 2 == 0 {
        let k = n / 2;
        (1..=k).map(|i| i as f64).product::<f64>()
    } else {
        let k = n / 2; // n = 2k + 1, Gamma(k + 3/2) = (2k+2)! sqrt(pi) / (4^{k+1} (k+1)!)
        let kk = k + 1;
        let fact = |m: usize| (1..=m).map(|i| i as f64).product::<f64>();
        fact(2 * kk) * std::f64::consts::PI.sqrt() / (4f64.powi(kk as i32) * fact(kk))
    };
    std::f64::consts::PI.powf(n as f64 / 2.0) / gamma
}

/// Build the cone-set exponents and shape for integrating L^p sources along
/// the curved bump paths.
///
/// Requires p strictly above N/q + 1 + sum_j j n_j.
pub fn cone_set<T: Real>(
    frame: &KalmanFrame<T>,
    p: T,
    q: T,
    epsilon: T,
    t: T,
) -> Result<ConeSet<T>> {
    if q <= T::one() {
        return Err(Error::InvalidInput("q must exceed 1".into()));
    }
    if epsilon <= T::zero() {
        return Err(Error::InvalidInput("epsilon must be positive".into()));
    }
    if t >= T::zero() || t <= -T::one() {
        return Err(Error::InvalidInput("cylinder time must lie in (-1, 0)".into()));
    }
    let n = cast_usize::<T>(frame.dim);
    let wd = cast_usize::<T>(frame.weighted_dim());
    let q_conj = q / (q - T::one());
    let threshold = n / q + T::one() + wd;
    if p <= threshold {
        return Err(Error::InvalidInput(format!(
            "p = {:.4} must strictly exceed N/q + 1 + sum j n_j = {:.4}",
            num_traits::ToPrimitive::to_f64(&p).unwrap_or(f64::NAN),
            num_traits::ToPrimitive::to_f64(&threshold).unwrap_or(f64::NAN)
        )));
    }
    let denom = n + p * q_conj;
    let a_exp = n / denom;
    let b_exp = T::one() / q + (p - threshold) / denom;
    let mu = p * q_conj / denom;
    let nu = q_conj * (b_exp - T::one() / q);

    // Balance identities of the exponent choice.
    let mu_alt = T::one() - a_exp;
    let nu_alt = T::one() - (T::one() + n * b_exp + wd) / p;
    if abs(mu - mu_alt) > cast(1e-12) || abs(nu - nu_alt) > cast(1e-12) {
        return Err(Error::InternalConsistency(
            "cone exponent balance identities violated".into(),
        ));
    }

    let one_plus_t = T::one() + t;
    let scale = powf(epsilon, a_exp * p / n) * powf(one_plus_t, b_exp);
    let shape = frame.scaling(one_plus_t) * scale;
    let volume = cast::<T>(unit_ball_volume(frame.dim))
        * powf(epsilon, a_exp * p)
        * powf(one_plus_t, n * b_exp + wd);
    Ok(ConeSet {
        epsilon,
        t,
        a_exp,
        b_exp,
        mu,
        nu,
        shape,
        volume,
    })
}
