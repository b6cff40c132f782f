//! Semi-Lagrangian value-function solver on space-time grids.
//!
//! The scheme is forward-in-time dynamic programming for the control
//! representation of the Hamilton-Jacobi equation
//!
//! ```text
//! u(t + dt, x) = min_{|b| <= B_max} { u(t, x_back(b)) + dt (|b|^{q'} / (q' c^{q'}) + f(t, x)) }
//! ```
//!
//! with `x_back` the exact backward characteristic of the constant drift
//! A_h under the control P_0 b. Grids live in the adapted coordinates of
//! the Kalman frame, so the strata are coordinate slices; controls act on
//! the first n_0 axes.

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kalman::{rescaled_drift_signed, KalmanFrame};
use crate::linalg::{expm, op_norm, QuadMesh};
use crate::scalar::{abs, cast, cast_usize, fmax, fmin, powf, Real};
use crate::scaling::ScaleParams;

/// Space-time grid layout in adapted coordinates.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GridSpec<T> {
    /// Per-axis bounds (lo, hi).
    pub bounds: Vec<(T, T)>,
    /// Per-axis cell counts (nodes = cells + 1).
    pub cells: Vec<usize>,
    pub t0: T,
    pub t1: T,
    pub time_steps: usize,
    /// Stratum index of each axis.
    pub strata: Vec<usize>,
}

impl<T: Real> GridSpec<T> {
    pub fn dim(&self) -> usize {
        self.bounds.len()
    }

    pub fn dt(&self) -> T {
        (self.t1 - self.t0) / cast_usize(self.time_steps)
    }

    pub fn step(&self, axis: usize) -> T {
        (self.bounds[axis].1 - self.bounds[axis].0) / cast_usize(self.cells[axis])
    }

    pub fn nodes(&self, axis: usize) -> usize {
        self.cells[axis] + 1
    }

    /// Number of nodes in one time slice.
    pub fn slice_len(&self) -> usize {
        self.cells.iter().map(|c| c + 1).product()
    }

    pub fn time_at(&self, it: usize) -> T {
        self.t0 + self.dt() * cast_usize(it)
    }

    /// Node coordinates from a flat in-slice index.
    pub fn node_coords(&self, mut flat: usize) -> DVector<T> {
        let n = self.dim();
        let mut idx = vec![0usize; n];
        for axis in (0..n).rev() {
            let nn = self.nodes(axis);
            idx[axis] = flat % nn;
            flat /= nn;
        }
        DVector::from_fn(n, |i, _| self.bounds[i].0 + self.step(i) * cast_usize(idx[i]))
    }

    /// Smallest spatial cell across axes.
    pub fn min_cell(&self) -> T {
        (0..self.dim())
            .map(|i| self.step(i))
            .fold(T::infinity(), fmin)
    }

    /// Radius of the spatial box (half-diagonal bound by max extent).
    pub fn domain_radius(&self) -> T {
        let mut acc = T::zero();
        for &(lo, hi) in &self.bounds {
            let r = fmax(abs(lo), abs(hi));
            acc = acc + r * r;
        }
        crate::scalar::sqrt(acc)
    }

    /// Axis-aligned hull of the flowed cylinder of radius `r`, padded by a
    /// `margin_cells` border, with the requested resolution.
    pub fn covering_cylinder(
        frame: &KalmanFrame<T>,
        a: &DMatrix<T>,
        h: T,
        r: T,
        cells: &[usize],
        time_steps: usize,
        margin_cells: usize,
    ) -> Result<Self> {
        let n = frame.dim;
        if cells.len() != n {
            return Err(Error::GridSpec(format!(
                "need {n} cell counts, got {}",
                cells.len()
            )));
        }
        let a_h = rescaled_drift_signed(frame, a, h);
        let a_hat = frame.basis.transpose() * &a_h * &frame.basis;
        // Hull: max over t in [-r, 0] of per-axis extent of e^{t A_h} S(r) B_1.
        let mut hull = vec![T::zero(); n];
        let samples = 64;
        for k in 0..=samples {
            let t = -r * cast_usize(k) / cast_usize(samples);
            let m = expm(&(&a_hat * t)) * frame.basis.transpose()
                * frame.scaling(r)
                * &frame.basis;
            for i in 0..n {
                let row_norm = m.row(i).norm();
                hull[i] = fmax(hull[i], row_norm);
            }
        }
        let strata = strata_of(frame);
        let bounds: Vec<(T, T)> = hull
            .iter()
            .enumerate()
            .map(|(i, &e)| {
                let frac = cast_usize::<T>(cells[i])
                    / cast_usize::<T>(cells[i].saturating_sub(2 * margin_cells).max(1));
                let b = e * frac;
                (-b, b)
            })
            .collect();
        Ok(GridSpec {
            bounds,
            cells: cells.to_vec(),
            t0: -r,
            t1: T::zero(),
            time_steps,
            strata,
        })
    }
}

/// Stratum index of each adapted axis.
pub fn strata_of<T: Real>(frame: &KalmanFrame<T>) -> Vec<usize> {
    let mut out = Vec::with_capacity(frame.dim);
    for (j, &nj) in frame.subspace_dims.iter().enumerate() {
        out.extend(std::iter::repeat(j).take(nj));
    }
    out
}

/// Dense space-time samples with multilinear interpolation.
#[derive(Debug, Clone)]
pub struct GridFunction<T: Real> {
    pub spec: GridSpec<T>,
    /// Values, time-major then row-major over the axes.
    pub values: Vec<T>,
}

impl<T: Real> GridFunction<T> {
    pub fn sample(spec: &GridSpec<T>, f: impl Fn(T, &DVector<T>) -> T) -> Self {
        let slice = spec.slice_len();
        let mut values = vec![T::zero(); slice * (spec.time_steps + 1)];
        for it in 0..=spec.time_steps {
            let t = spec.time_at(it);
            for node in 0..slice {
                let x = spec.node_coords(node);
                values[it * slice + node] = f(t, &x);
            }
        }
        GridFunction {
            spec: spec.clone(),
            values,
        }
    }

    pub fn slice(&self, it: usize) -> &[T] {
        let len = self.spec.slice_len();
        &self.values[it * len..(it + 1) * len]
    }

    /// Clamped multilinear interpolation within one time slice.
    pub fn eval_slice(&self, it: usize, x: &DVector<T>) -> T {
        eval_multilinear(&self.spec, self.slice(it), x)
    }

    /// Clamped space-time interpolation (linear in t).
    pub fn eval(&self, t: T, x: &DVector<T>) -> T {
        let dt = self.spec.dt();
        let pos = (t - self.spec.t0) / dt;
        let pf = num_traits::ToPrimitive::to_f64(&pos).unwrap_or(0.0);
        let max_it = self.spec.time_steps;
        if pf <= 0.0 {
            return self.eval_slice(0, x);
        }
        if pf >= max_it as f64 {
            return self.eval_slice(max_it, x);
        }
        let i0 = pf.floor() as usize;
        let frac = pos - cast_usize(i0);
        let lo = self.eval_slice(i0, x);
        let hi = self.eval_slice(i0 + 1, x);
        lo + frac * (hi - lo)
    }

    /// Pointwise maximum and minimum.
    pub fn range(&self) -> (T, T) {
        let mut lo = T::infinity();
        let mut hi = -T::infinity();
        for &v in &self.values {
            lo = fmin(lo, v);
            hi = fmax(hi, v);
        }
        (lo, hi)
    }
}

fn eval_multilinear<T: Real>(spec: &GridSpec<T>, slice: &[T], x: &DVector<T>) -> T {
    let n = spec.dim();
    debug_assert_eq!(x.len(), n);
    // Per-axis base index and fraction, clamped to the box.
    let mut base = [0usize; 8];
    let mut frac = [T::zero(); 8];
    assert!(n <= 8, "grid dimension limited to 8 axes");
    for axis in 0..n {
        let nn = spec.nodes(axis);
        let pos = (x[axis] - spec.bounds[axis].0) / spec.step(axis);
        let pf = num_traits::ToPrimitive::to_f64(&pos).unwrap_or(0.0);
        if pf <= 0.0 {
            base[axis] = 0;
            frac[axis] = T::zero();
        } else if pf >= (nn - 1) as f64 {
            base[axis] = nn - 2;
            frac[axis] = T::one();
        } else {
            let b = pf.floor() as usize;
            base[axis] = b.min(nn - 2);
            frac[axis] = pos - cast_usize(base[axis]);
        }
    }
    // Accumulate over the 2^n corners.
    let mut acc = T::zero();
    let corners = 1usize << n;
    for mask in 0..corners {
        let mut weight = T::one();
        let mut flat = 0usize;
        for axis in 0..n {
            let hi = (mask >> axis) & 1 == 1;
            let idx = base[axis] + usize::from(hi);
            weight = weight * if hi { frac[axis] } else { T::one() - frac[axis] };
            flat = flat * spec.nodes(axis) + idx;
        }
        if weight != T::zero() {
            acc = acc + slice[flat] * weight;
        }
    }
    acc
}

/// Zero-order source term of the equation.
#[derive(Debug, Clone)]
pub enum Source<T: Real> {
    Zero,
    Constant(T),
    /// Cell-averaged samples with the L^p bookkeeping the theory consumes.
    Sampled {
        field: GridFunction<T>,
        p: T,
        lp_norm: T,
    },
}

impl<T: Real> Source<T> {
    fn value(&self, t: T, x: &DVector<T>) -> T {
        match self {
            Source::Zero => T::zero(),
            Source::Constant(c) => *c,
            Source::Sampled { field, .. } => field.eval(t, x),
        }
    }
}

/// Problem data for one value solve.
pub struct HJProblem<T: Real> {
    pub frame: KalmanFrame<T>,
    pub a: DMatrix<T>,
    pub h: T,
    pub q: T,
    pub q_conj: T,
    /// Coercivity constant in front of the Hamiltonian (lambda for the
    /// subsolution equation, Lambda for the supersolution equation).
    pub coercivity: T,
    pub source: Source<T>,
    /// Bottom-slice data in adapted coordinates.
    pub data: Box<dyn Fn(&DVector<T>) -> T + Send + Sync>,
}

impl<T: Real> HJProblem<T> {
    pub fn new(
        frame: &KalmanFrame<T>,
        a: &DMatrix<T>,
        h: T,
        q: T,
        coercivity: T,
        source: Source<T>,
        data: impl Fn(&DVector<T>) -> T + Send + Sync + 'static,
    ) -> Result<Self> {
        if q <= T::one() {
            return Err(Error::InvalidInput("q must exceed 1".into()));
        }
        if coercivity <= T::zero() {
            return Err(Error::InvalidInput("coercivity must be positive".into()));
        }
        if let Source::Sampled { field, .. } = &source {
            if field.values.iter().any(|v| *v < T::zero()) {
                return Err(Error::InvalidInput("sampled source must be >= 0".into()));
            }
        }
        Ok(HJProblem {
            frame: frame.clone(),
            a: a.clone(),
            h,
            q,
            q_conj: q / (q - T::one()),
            coercivity,
            source,
            data: Box::new(data),
        })
    }
}

/// Control sampling parameters.
#[derive(Debug, Clone)]
pub struct ControlSampling<T> {
    pub b_max: Option<T>,
    pub radii: usize,
    pub directions: usize,
    pub refine: bool,
}

impl<T> Default for ControlSampling<T> {
    fn default() -> Self {
        ControlSampling {
            b_max: None,
            radii: 16,
            directions: 16,
            refine: true,
        }
    }
}

/// Diagnostics attached to a solve.
#[derive(Debug, Clone, Serialize)]
pub struct SolveReport {
    pub b_max: f64,
    pub dt: f64,
    pub dt_limit: f64,
    /// Fraction of accepted minimizers saturating the control box.
    pub saturation_fraction: f64,
    /// Set when more than 1% of minimizers saturate; the control box is
    /// too small for the problem.
    pub saturated: bool,
}

pub struct SolveOutput<T: Real> {
    pub field: GridFunction<T>,
    pub report: SolveReport,
}

/// Deterministic unit directions in R^{n0}.
fn control_directions<T: Real>(n0: usize, count: usize) -> Vec<DVector<T>> {
    match n0 {
        1 => vec![
            DVector::from_row_slice(&[T::one()]),
            DVector::from_row_slice(&[-T::one()]),
        ],
        2 => (0..count)
            .map(|k| {
                let angle = 2.0 * std::f64::consts::PI * (k as f64) / (count as f64);
                DVector::from_row_slice(&[cast::<T>(angle.cos()), cast::<T>(angle.sin())])
            })
            .collect(),
        _ => {
            // Fibonacci lattice on the sphere, extended by reflections for
            // n0 > 3 via normalized low-discrepancy points.
            let m = count * count / 2;
            let golden = (1.0 + 5f64.sqrt()) / 2.0;
            (0..m)
                .map(|k| {
                    let mut v = DVector::<T>::zeros(n0);
                    for axis in 0..n0 {
                        let x = (((k + 1) as f64) * golden.powi(axis as i32 + 1)).fract() - 0.5;
                        v[axis] = cast(x);
                    }
                    let nrm = v.norm();
                    if nrm > T::zero() {
                        v / nrm
                    } else {
                        let mut e = DVector::<T>::zeros(n0);
                        e[0] = T::one();
                        e
                    }
                })
                .collect()
        }
    }
}

fn golden_min<T: Real>(mut f: impl FnMut(T) -> T, mut lo: T, mut hi: T, iters: usize) -> (T, T) {
    let phi = cast::<T>(0.6180339887498949);
    let mut x1 = hi - (hi - lo) * phi;
    let mut x2 = lo + (hi - lo) * phi;
    let mut f1 = f(x1);
    let mut f2 = f(x2);
    for _ in 0..iters {
        if f1 <= f2 {
            hi = x2;
            x2 = x1;
            f2 = f1;
            x1 = hi - (hi - lo) * phi;
            f1 = f(x1);
        } else {
            lo = x1;
            x1 = x2;
            f1 = f2;
            x2 = lo + (hi - lo) * phi;
            f2 = f(x2);
        }
    }
    if f1 <= f2 {
        (x1, f1)
    } else {
        (x2, f2)
    }
}

/// Run the semi-Lagrangian dynamic programming scheme.
pub fn solve_value<T: Real>(
    problem: &HJProblem<T>,
    grid: &GridSpec<T>,
    sampling: &ControlSampling<T>,
) -> Result<SolveOutput<T>> {
    let frame = &problem.frame;
    let n = frame.dim;
    if grid.dim() != n {
        return Err(Error::GridSpec("grid dimension mismatch".into()));
    }
    if grid.time_steps == 0 || grid.cells.iter().any(|&c| c < 2) {
        return Err(Error::GridSpec("grid too small".into()));
    }
    let dt = grid.dt();

    // Adapted-coordinate drift and controlled directions.
    let a_h = rescaled_drift_signed(frame, &problem.a, problem.h);
    let a_hat = frame.basis.transpose() * &a_h * &frame.basis;
    let n0 = frame.subspace_dims[0];

    // Bottom data and default control box.
    let slice_len = grid.slice_len();
    let mut bottom = vec![T::zero(); slice_len];
    for node in 0..slice_len {
        bottom[node] = (problem.data)(&grid.node_coords(node));
    }
    let (dmin, dmax) = bottom
        .iter()
        .fold((T::infinity(), -T::infinity()), |(lo, hi), &v| {
            (fmin(lo, v), fmax(hi, v))
        });
    let osc_data = fmax(dmax - dmin, cast(1e-6));
    let radius = grid.domain_radius();
    let b_max = sampling.b_max.unwrap_or_else(|| {
        cast::<T>(10.0) * powf(osc_data, T::one() / problem.q_conj) * radius
            / (grid.t1 - grid.t0)
    });

    // Step restriction: the backward characteristic must stay within one
    // cell layer per step.
    let drift_speed = op_norm(&a_hat) * radius + b_max;
    let dt_limit = grid.min_cell() / drift_speed;
    if dt > dt_limit * (T::one() + cast(1e-9)) {
        return Err(Error::GridSpec(format!(
            "time step {:.3e} exceeds the characteristic limit {:.3e}; refine time or shrink B_max",
            num_traits::ToPrimitive::to_f64(&dt).unwrap_or(f64::NAN),
            num_traits::ToPrimitive::to_f64(&dt_limit).unwrap_or(f64::NAN),
        )));
    }

    // Exact one-step backward flow and control coupling.
    let e_back = expm(&(&a_hat * (-dt)));
    let theta = {
        let mesh = QuadMesh::uniform(T::zero(), dt, 2);
        let mut acc = DMatrix::<T>::zeros(n, n);
        for (x, w) in mesh.nodes.iter().zip(mesh.weights.iter()) {
            acc += expm(&(&a_hat * (-*x))) * *w;
        }
        // adapted U0 is the leading coordinate block
        let mut u0 = DMatrix::<T>::zeros(n, n0);
        for k in 0..n0 {
            u0[(k, k)] = T::one();
        }
        acc * u0
    };

    let dirs = control_directions::<T>(n0, sampling.directions);
    let anchor = powf(dt, T::one() / (problem.q_conj - T::one()));
    let r_lo = fmax(b_max * cast(1e-4), cast(1e-12));
    let mut radii: Vec<T> = Vec::with_capacity(sampling.radii + 1);
    {
        let ratio = powf(b_max / r_lo, T::one() / cast_usize(sampling.radii.max(2) - 1));
        let mut r = r_lo;
        for _ in 0..sampling.radii.max(2) {
            radii.push(r);
            r = r * ratio;
        }
        if anchor > r_lo && anchor < b_max {
            radii.push(anchor);
        }
    }

    let cost_coef = T::one() / (problem.q_conj * powf(problem.coercivity, problem.q_conj));
    let q_conj = problem.q_conj;

    let mut values = vec![T::zero(); slice_len * (grid.time_steps + 1)];
    values[..slice_len].copy_from_slice(&bottom);

    let mut saturated_count = 0usize;
    let mut total_count = 0usize;

    for it in 0..grid.time_steps {
        let t_cur = grid.time_at(it);
        let (done, rest) = values.split_at_mut((it + 1) * slice_len);
        let cur = &done[it * slice_len..];
        let next = &mut rest[..slice_len];

        let sat: usize = next
            .par_iter_mut()
            .enumerate()
            .map(|(node, out)| {
                let x = grid.node_coords(node);
                let x_free = &e_back * &x;
                let mut best = eval_multilinear(grid, cur, &x_free);
                let mut best_r = T::zero();
                let mut best_dir = 0usize;
                for (di, dir) in dirs.iter().enumerate() {
                    let shift = &theta * dir;
                    for &r in &radii {
                        let xb = &x_free - &shift * r;
                        let val =
                            eval_multilinear(grid, cur, &xb) + dt * cost_coef * powf(r, q_conj);
                        if val < best {
                            best = val;
                            best_r = r;
                            best_dir = di;
                        }
                    }
                }
                if sampling.refine && best_r > T::zero() {
                    let dir = &dirs[best_dir];
                    let shift = &theta * dir;
                    let eval_r = |r: T| {
                        let xb = &x_free - &shift * r;
                        eval_multilinear(grid, cur, &xb) + dt * cost_coef * powf(r, q_conj)
                    };
                    let lo = best_r * cast(0.4);
                    let hi = fmin(best_r * cast(2.5), b_max);
                    let (r_star, v_star) = golden_min(eval_r, lo, hi, 18);
                    if v_star < best {
                        best = v_star;
                        best_r = r_star;
                    }
                    // Angular refinement in the controlled plane.
                    if n0 == 2 {
                        let base_angle = {
                            let d = &dirs[best_dir];
                            num_traits::ToPrimitive::to_f64(&d[1])
                                .unwrap_or(0.0)
                                .atan2(num_traits::ToPrimitive::to_f64(&d[0]).unwrap_or(1.0))
                        };
                        let spread =
                            2.0 * std::f64::consts::PI / (sampling.directions.max(4) as f64);
                        let r_fix = best_r;
                        let eval_a = |ang: T| {
                            let af = num_traits::ToPrimitive::to_f64(&ang).unwrap_or(0.0);
                            let dir =
                                DVector::from_row_slice(&[cast::<T>(af.cos()), cast::<T>(af.sin())]);
                            let xb = &x_free - &(&theta * dir) * r_fix;
                            eval_multilinear(grid, cur, &xb)
                                + dt * cost_coef * powf(r_fix, q_conj)
                        };
                        let (a_star, v_star) = golden_min(
                            eval_a,
                            cast(base_angle - spread),
                            cast(base_angle + spread),
                            14,
                        );
                        if v_star < best {
                            best = v_star;
                            let af = num_traits::ToPrimitive::to_f64(&a_star).unwrap_or(0.0);
                            let dir =
                                DVector::from_row_slice(&[cast::<T>(af.cos()), cast::<T>(af.sin())]);
                            let _ = dir;
                        }
                    }
                }
                let src = problem.source.value(t_cur, &x);
                *out = best + dt * src;
                usize::from(best_r >= b_max * cast(0.99))
            })
            .sum();
        saturated_count += sat;
        total_count += slice_len;
    }

    let saturation = saturated_count as f64 / total_count.max(1) as f64;
    Ok(SolveOutput {
        field: GridFunction {
            spec: grid.clone(),
            values,
        },
        report: SolveReport {
            b_max: num_traits::ToPrimitive::to_f64(&b_max).unwrap(),
            dt: num_traits::ToPrimitive::to_f64(&dt).unwrap(),
            dt_limit: num_traits::ToPrimitive::to_f64(&dt_limit).unwrap(),
            saturation_fraction: saturation,
            saturated: saturation > 0.01,
        },
    })
}

// ---------------------------------------------------------------------------
// Barrier drivers
// ---------------------------------------------------------------------------

/// Two-level bottom data: `outer` outside the flowed double cylinder
/// section e^{-A_h}(2 Omega_delta^gamma), `inner` inside.
pub fn two_level_data<T: Real>(
    frame: &KalmanFrame<T>,
    a: &DMatrix<T>,
    h: T,
    delta: T,
    gamma: T,
    inner: T,
    outer: T,
) -> impl Fn(&DVector<T>) -> T + Send + Sync {
    let a_h = rescaled_drift_signed(frame, a, h);
    let a_hat = frame.basis.transpose() * &a_h * &frame.basis;
    let fwd = expm(&a_hat);
    let s_inv = frame.basis.transpose() * frame.scaling(T::one() / delta) * &frame.basis;
    let threshold = cast::<T>(2.0) * powf(delta, gamma);
    move |x: &DVector<T>| {
        let y = &s_inv * (&fwd * x);
        if y.norm() < threshold {
            inner
        } else {
            outer
        }
    }
}

/// A-posteriori checks of the upper barrier on the lateral boundary.
#[derive(Debug, Clone, Serialize)]
pub struct BarrierCheck {
    /// Minimum of the solved barrier over the lateral boundary samples.
    pub lateral_min: f64,
    /// Maximum over the lateral samples.
    pub lateral_max: f64,
    /// lateral_min - inf(data): the crossing-cost gap; positive when the
    /// lateral boundary is expensive to reach from the inner set.
    pub implied_gap: f64,
}

/// Upper barrier: solve with the subsolution-side coercivity (lambda) and
/// source eps * f >= 0, then sample the lateral boundary.
pub fn solve_upper_barrier<T: Real>(
    problem: &HJProblem<T>,
    grid: &GridSpec<T>,
    sampling: &ControlSampling<T>,
    inner_inf: T,
) -> Result<(SolveOutput<T>, BarrierCheck)> {
    let out = solve_value(problem, grid, sampling)?;
    let lateral = lateral_samples(&problem.frame, &problem.a, problem.h, 24, 64);
    let mut lat_min = f64::INFINITY;
    let mut lat_max = f64::NEG_INFINITY;
    for (t, x) in &lateral {
        let v = out.field.eval(*t, x);
        let vf = num_traits::ToPrimitive::to_f64(&v).unwrap();
        lat_min = lat_min.min(vf);
        lat_max = lat_max.max(vf);
    }
    let gap = lat_min - num_traits::ToPrimitive::to_f64(&inner_inf).unwrap();
    Ok((
        out,
        BarrierCheck {
            lateral_min: lat_min,
            lateral_max: lat_max,
            implied_gap: gap,
        },
    ))
}

/// Lower barrier: solve with the supersolution-side coercivity (Lambda) and
/// the -eps drift, data `ell` supported in the flowed unit ball; checks
/// that the barrier stays below zero on the lateral boundary.
pub fn solve_lower_barrier<T: Real>(
    problem: &HJProblem<T>,
    grid: &GridSpec<T>,
    sampling: &ControlSampling<T>,
) -> Result<(SolveOutput<T>, BarrierCheck)> {
    let out = solve_value(problem, grid, sampling)?;
    let lateral = lateral_samples(&problem.frame, &problem.a, problem.h, 24, 64);
    let mut lat_min = f64::INFINITY;
    let mut lat_max = f64::NEG_INFINITY;
    for (t, x) in &lateral {
        let v = out.field.eval(*t, x);
        let vf = num_traits::ToPrimitive::to_f64(&v).unwrap();
        lat_min = lat_min.min(vf);
        lat_max = lat_max.max(vf);
    }
    Ok((
        out,
        BarrierCheck {
            lateral_min: lat_min,
            lateral_max: lat_max,
            implied_gap: 0.0,
        },
    ))
}

/// Sample points on the lateral boundary of the flowed unit cylinder:
/// (t, e^{t A_h} s) with |s| = 1 and t in [-1, 0], in adapted coordinates.
pub fn lateral_samples<T: Real>(
    frame: &KalmanFrame<T>,
    a: &DMatrix<T>,
    h: T,
    time_count: usize,
    sphere_count: usize,
) -> Vec<(T, DVector<T>)> {
    let a_h = rescaled_drift_signed(frame, a, h);
    let a_hat = frame.basis.transpose() * &a_h * &frame.basis;
    let n = frame.dim;
    let sphere = sphere_points::<T>(n, sphere_count);
    let mut out = Vec::with_capacity(time_count * sphere.len());
    for k in 0..=time_count {
        let t = -T::one() + cast_usize::<T>(k) / cast_usize(time_count);
        let flow = expm(&(&a_hat * t));
        for s in &sphere {
            out.push((t, &flow * s));
        }
    }
    out
}

/// Deterministic points on the unit sphere of R^n (exactly normalized).
pub fn sphere_points<T: Real>(n: usize, count: usize) -> Vec<DVector<T>> {
    match n {
        1 => vec![
            DVector::from_row_slice(&[T::one()]),
            DVector::from_row_slice(&[-T::one()]),
        ],
        2 => (0..count)
            .map(|k| {
                let ang = 2.0 * std::f64::consts::PI * (k as f64) / (count as f64);
                DVector::from_row_slice(&[cast::<T>(ang.cos()), cast::<T>(ang.sin())])
            })
            .collect(),
        _ => {
            let golden = (1.0 + 5f64.sqrt()) / 2.0;
            (0..count)
                .map(|k| {
                    let mut v = DVector::<T>::zeros(n);
                    for axis in 0..n {
                        let x = (((k + 1) as f64) * golden.powi(axis as i32 + 1)).fract() - 0.5;
                        v[axis] = cast(x);
                    }
                    let nrm = v.norm();
                    if nrm > T::zero() {
                        v / nrm
                    } else {
                        let mut e = DVector::<T>::zeros(n);
                        e[0] = T::one();
                        e
                    }
                })
                .collect()
        }
    }
}

/// Boundary sample set of the parabolic boundary of the flowed unit
/// cylinder: the bottom slice at t = -1 plus the lateral flowed sphere.
pub struct ParabolicBoundary<T: Real> {
    /// Bottom-slice sample points (t = t0).
    pub bottom: Vec<DVector<T>>,
    /// Lateral samples (t, x) with |e^{-t A_h} x| = 1 to working precision.
    pub lateral: Vec<(T, DVector<T>)>,
}

impl<T: Real> ParabolicBoundary<T> {
    pub fn unit_cylinder(
        frame: &KalmanFrame<T>,
        a: &DMatrix<T>,
        h: T,
        time_count: usize,
        sphere_count: usize,
        bottom_count: usize,
    ) -> Self {
        let a_h = rescaled_drift_signed(frame, a, h);
        let a_hat = frame.basis.transpose() * &a_h * &frame.basis;
        let back = expm(&(-&a_hat));
        let mut bottom = Vec::new();
        // Fill the bottom slice e^{-A_h}(B_1) with scaled sphere shells.
        for shell in 0..=4 {
            let rho = cast_usize::<T>(shell) / cast(4.0);
            for s in sphere_points::<T>(frame.dim, bottom_count / 4) {
                bottom.push(&back * (s * rho));
            }
        }
        ParabolicBoundary {
            bottom,
            lateral: lateral_samples(frame, a, h, time_count, sphere_count),
        }
    }
}

/// Comparison-principle check between two grid functions.
#[derive(Debug, Clone, Serialize)]
pub struct ComparisonReport {
    /// max(u_sub - u_super) over the parabolic boundary samples.
    pub boundary_gap: f64,
    /// max(u_sub - u_super) over interior grid nodes.
    pub interior_violation: f64,
}

pub fn comparison_check<T: Real>(
    u_sub: &GridFunction<T>,
    u_super: &GridFunction<T>,
    boundary: &ParabolicBoundary<T>,
) -> Result<ComparisonReport> {
    if u_sub.spec.slice_len() != u_super.spec.slice_len()
        || u_sub.spec.time_steps != u_super.spec.time_steps
    {
        return Err(Error::InvalidInput("grids must match".into()));
    }
    let mut boundary_gap = f64::NEG_INFINITY;
    for x in &boundary.bottom {
        let d = u_sub.eval(u_sub.spec.t0, x) - u_super.eval(u_super.spec.t0, x);
        boundary_gap = boundary_gap.max(num_traits::ToPrimitive::to_f64(&d).unwrap());
    }
    for (t, x) in &boundary.lateral {
        let d = u_sub.eval(*t, x) - u_super.eval(*t, x);
        boundary_gap = boundary_gap.max(num_traits::ToPrimitive::to_f64(&d).unwrap());
    }
    let mut interior = f64::NEG_INFINITY;
    for (a, b) in u_sub.values.iter().zip(u_super.values.iter()) {
        let d = num_traits::ToPrimitive::to_f64(&(*a - *b)).unwrap();
        interior = interior.max(d);
    }
    Ok(ComparisonReport {
        boundary_gap,
        interior_violation: interior,
    })
}

// ---------------------------------------------------------------------------
// Rescaling
// ---------------------------------------------------------------------------

/// L^p-norm multiplier picked up by a source term under the space-time
/// dilation: r^{1 - (1/p)(N/q + 1 + sum_i i n_i) - alpha (1 + N/(p q'))}.
pub fn source_norm_multiplier<T: Real>(
    dim: usize,
    weighted_dim: usize,
    params: &ScaleParams<T>,
    p: T,
) -> T {
    let nf = cast_usize::<T>(dim);
    let weighted = cast_usize::<T>(weighted_dim);
    let exponent = T::one() - (nf / params.q + T::one() + weighted) / p
        - params.alpha * (T::one() + nf / (p * params.q_conj));
    powf(params.r, exponent)
}

/// Anisotropic rescaling of a grid function:
/// u_r(t, x) = r^{-alpha} u(r t, r^gamma S(r) x), sampled on the image grid
/// by interpolation. Pair with [`source_norm_multiplier`] when a source
/// term is rescaled alongside.
pub fn rescale_field<T: Real>(
    u: &GridFunction<T>,
    params: &ScaleParams<T>,
    target: Option<GridSpec<T>>,
) -> Result<GridFunction<T>> {
    let r = params.r;
    let spec = &u.spec;
    let n = spec.dim();
    let target = match target {
        Some(t) => {
            if t.dim() != n {
                return Err(Error::DomainMismatch("axis count mismatch".into()));
            }
            t
        }
        None => {
            // Full image grid D~_{1/r}(source box) at the same resolution.
            let mut bounds = Vec::with_capacity(n);
            for (axis, &(lo, hi)) in spec.bounds.iter().enumerate() {
                let scale = powf(r, params.gamma + cast_usize(spec.strata[axis]));
                bounds.push((lo / scale, hi / scale));
            }
            GridSpec {
                bounds,
                cells: spec.cells.clone(),
                t0: spec.t0 / r,
                t1: spec.t1 / r,
                time_steps: spec.time_steps,
                strata: spec.strata.clone(),
            }
        }
    };
    // Validate the target sits inside the image of the source domain.
    let tol = cast::<T>(1e-9);
    for (axis, &(lo, hi)) in target.bounds.iter().enumerate() {
        let scale = powf(r, params.gamma + cast_usize(spec.strata[axis]));
        if lo * scale < spec.bounds[axis].0 - tol || hi * scale > spec.bounds[axis].1 + tol {
            return Err(Error::DomainMismatch(format!(
                "target axis {axis} leaves the source domain under dilation"
            )));
        }
    }
    if target.t0 * r < spec.t0 - tol || target.t1 * r > spec.t1 + tol {
        return Err(Error::DomainMismatch(
            "target time interval leaves the source domain".into(),
        ));
    }

    let amp = powf(r, -params.alpha);
    let slice = target.slice_len();
    let mut values = vec![T::zero(); slice * (target.time_steps + 1)];
    for it in 0..=target.time_steps {
        let t = target.time_at(it);
        for node in 0..slice {
            let x = target.node_coords(node);
            let mut xs = x.clone();
            for axis in 0..n {
                let scale = powf(r, params.gamma + cast_usize(spec.strata[axis]));
                xs[axis] = x[axis] * scale;
            }
            values[it * slice + node] = amp * u.eval(t * r, &xs);
        }
    }
    Ok(GridFunction {
        spec: target,
        values,
    })
}
