//! Oscillation measurement over nested cylinders, the improvement-of-
//! oscillation experiment, the rescaling iteration and anisotropic Holder
//! exponent fits.

use nalgebra::{DMatrix, DVector};
use serde::Serialize;

use crate::error::{Error, Result};
use crate::kalman::KalmanFrame;
use crate::linalg::ols_line;
use crate::scalar::{abs, cast, cast_usize, fmax, fmin, ln, log10, powf, Real};
use crate::scaling::{Cylinder, ScaleParams, SpaceTimePoint};
use crate::solver::{
    rescale_field, solve_upper_barrier, two_level_data, BarrierCheck, ControlSampling,
    GridFunction, GridSpec, HJProblem, SolveReport, Source,
};

/// Minimum number of in-cylinder samples for a meaningful oscillation.
pub const MIN_OSC_SAMPLES: usize = 8;

/// Oscillation of a grid function over a cylinder.
///
/// Samples are taken on the half-step lattice of the grid (2x per axis,
/// including time); lattice points are classified by the exact membership
/// predicate, so oscillations are monotone under cylinder inclusion.
pub fn oscillation<T: Real>(u: &GridFunction<T>, cyl: &Cylinder<T>) -> Result<(T, usize)> {
    let spec = &u.spec;
    let n = spec.dim();
    if n != cyl.frame.dim {
        return Err(Error::InvalidInput("dimension mismatch".into()));
    }
    // Bounding box of the cylinder per axis, in adapted coordinates.
    let mut hull = vec![T::zero(); n];
    let samples_t = 32;
    for k in 0..=samples_t {
        let t = -cyl.r * cast_usize(k) / cast_usize(samples_t);
        let m = cyl.flow_times_scale(t);
        for i in 0..n {
            let row = (cyl.frame.basis.transpose() * &m).row(i).norm();
            hull[i] = fmax(hull[i], row * powf(cyl.r, cyl.gamma));
        }
    }

    let dt_half = spec.dt() * cast(0.5);
    let t_lo = fmax(spec.t0, -cyl.r);
    let t_hi = fmin(spec.t1, T::zero());
    if t_hi < t_lo {
        return Err(Error::TooCoarse {
            found: 0,
            need: MIN_OSC_SAMPLES,
        });
    }

    // Half-step index ranges per axis restricted to the hull box.
    let mut lo_idx = vec![0usize; n];
    let mut hi_idx = vec![0usize; n];
    for axis in 0..n {
        let step_half = spec.step(axis) * cast(0.5);
        let lo = fmax(spec.bounds[axis].0, -hull[axis] * cast(1.05)) - spec.bounds[axis].0;
        let hi = fmin(spec.bounds[axis].1, hull[axis] * cast(1.05)) - spec.bounds[axis].0;
        let max_k = 2 * spec.cells[axis];
        let lk = num_traits::ToPrimitive::to_f64(&(lo / step_half))
            .unwrap_or(0.0)
            .floor()
            .max(0.0) as usize;
        let hk = num_traits::ToPrimitive::to_f64(&(hi / step_half))
            .unwrap_or(0.0)
            .ceil()
            .min(max_k as f64) as usize;
        lo_idx[axis] = lk.min(max_k);
        hi_idx[axis] = hk.min(max_k);
    }
    let t_steps_half = 2 * spec.time_steps;
    let tk_lo = num_traits::ToPrimitive::to_f64(&((t_lo - spec.t0) / dt_half))
        .unwrap_or(0.0)
        .floor()
        .max(0.0) as usize;
    let tk_hi = num_traits::ToPrimitive::to_f64(&((t_hi - spec.t0) / dt_half))
        .unwrap_or(0.0)
        .ceil()
        .min(t_steps_half as f64) as usize;

    let mut min_v = T::infinity();
    let mut max_v = -T::infinity();
    let mut count = 0usize;

    let mut idx = lo_idx.clone();
    'outer: loop {
        // Spatial point of the current half-step multi-index.
        let x = DVector::from_fn(n, |i, _| {
            spec.bounds[i].0 + spec.step(i) * cast(0.5) * cast_usize(idx[i])
        });
        let x_orig = &cyl.frame.basis * &x;
        for tk in tk_lo..=tk_hi {
            let t = spec.t0 + dt_half * cast_usize(tk);
            let p = SpaceTimePoint::new(t, x_orig.clone());
            if cyl.contains(&p) {
                let v = u.eval(t, &x);
                min_v = fmin(min_v, v);
                max_v = fmax(max_v, v);
                count += 1;
            }
        }
        // advance multi-index
        for axis in (0..n).rev() {
            idx[axis] += 1;
            if idx[axis] <= hi_idx[axis] {
                continue 'outer;
            }
            idx[axis] = lo_idx[axis];
            if axis == 0 {
                break 'outer;
            }
        }
    }

    if count < MIN_OSC_SAMPLES {
        return Err(Error::TooCoarse {
            found: count,
            need: MIN_OSC_SAMPLES,
        });
    }
    Ok((max_v - min_v, count))
}

/// One level of an oscillation report.
#[derive(Debug, Clone, Serialize)]
pub struct OscillationLevel {
    pub level: usize,
    pub radius: f64,
    pub oscillation: f64,
    pub samples: usize,
    /// Whether osc <= delta^{-alpha} * radius^{alpha} held at this level.
    pub shape_ok: bool,
}

/// Oscillation-decay report over nested cylinders.
#[derive(Debug, Clone, Serialize)]
pub struct OscillationReport {
    pub h: f64,
    pub gamma: f64,
    pub delta: f64,
    pub levels: Vec<OscillationLevel>,
    /// Fitted decay exponent from log osc vs level; `None` when the
    /// function is flat to working precision (infinitely smooth).
    pub alpha_fit: Option<f64>,
    pub alpha_stderr: f64,
    /// Requested levels that the grid could not resolve.
    pub exhausted_at: Option<usize>,
}

/// Improvement-of-oscillation outcome.
#[derive(Debug, Clone, Serialize)]
pub struct ImprovementReport {
    pub osc_small: f64,
    pub theta_observed: f64,
    pub samples: usize,
    pub solve: SolveReport,
    pub barrier: BarrierCheck,
}

/// Scenario for the improvement-of-oscillation experiment: a two-level
/// bottom datum (0 inside the flowed double-delta section, 1 outside)
/// solved with the subsolution-side coercivity, then measured on the
/// delta-cylinder.
pub struct ImprovementScenario<'a, T: Real> {
    pub frame: &'a KalmanFrame<T>,
    pub a: &'a DMatrix<T>,
    pub h: T,
    pub q: T,
    pub lambda: T,
    pub epsilon: T,
    pub source: Source<T>,
    pub delta: T,
    pub gamma: T,
    pub cells: Vec<usize>,
    pub time_steps: usize,
    pub b_max: Option<T>,
}

pub fn improvement_experiment<T: Real>(
    scn: ImprovementScenario<'_, T>,
) -> Result<ImprovementReport> {
    if scn.delta <= T::zero() || scn.delta >= T::one() {
        return Err(Error::InvalidInput("delta must lie in (0, 1)".into()));
    }
    let grid = GridSpec::covering_cylinder(
        scn.frame,
        scn.a,
        scn.h,
        T::one(),
        &scn.cells,
        scn.time_steps,
        2,
    )?;
    let data = two_level_data(
        scn.frame,
        scn.a,
        scn.h,
        scn.delta,
        scn.gamma,
        T::zero(),
        T::one(),
    );
    let problem = HJProblem::new(
        scn.frame,
        scn.a,
        scn.h,
        scn.q,
        scn.lambda,
        scn.source,
        data,
    )?;
    let sampling = ControlSampling {
        b_max: scn.b_max,
        ..Default::default()
    };
    let (out, barrier) = solve_upper_barrier(&problem, &grid, &sampling, T::zero())?;
    let cyl = Cylinder::new(scn.frame, scn.a, scn.h, scn.gamma, scn.delta)?;
    let (osc, samples) = oscillation(&out.field, &cyl)?;
    let osc_f = num_traits::ToPrimitive::to_f64(&osc).unwrap();
    Ok(ImprovementReport {
        osc_small: osc_f,
        theta_observed: 1.0 - osc_f,
        samples,
        solve: out.report,
        barrier,
    })
}

/// Alternate rescaling and oscillation over nested cylinders
/// Q^{h, gamma}_{delta^k} and fit the decay exponent.
///
/// The field is renormalized by delta^{-alpha} at each level exactly as in
/// the iteration lemma; measured oscillations are reported in the original
/// (unrescaled) normalization.
pub fn oscillation_iteration<T: Real>(
    u: &GridFunction<T>,
    frame: &KalmanFrame<T>,
    a: &DMatrix<T>,
    h: T,
    params: &ScaleParams<T>,
    delta: T,
    levels: usize,
) -> Result<OscillationReport> {
    if delta <= T::zero() || delta >= T::one() {
        return Err(Error::InvalidInput("delta must lie in (0, 1)".into()));
    }
    let mut field = u.clone();
    let mut h_cur = h;
    let mut rows: Vec<OscillationLevel> = Vec::new();
    let mut exhausted_at = None;
    let alpha = params.alpha;
    let step_params = ScaleParams::new(params.q, alpha, delta, h)?;

    // A level is resolvable when every axis of the level cylinder spans at
    // least two original grid cells: the k-th cylinder has per-stratum
    // extent (delta^{k+1})^{gamma + j} in the original coordinates.
    let resolvable = |level: usize| -> bool {
        let radius = powf(delta, cast_usize(level + 1));
        for axis in 0..u.spec.dim() {
            let extent = powf(radius, params.gamma + cast_usize(u.spec.strata[axis]));
            if extent < u.spec.step(axis) {
                return false;
            }
        }
        let time_extent = radius;
        time_extent >= u.spec.dt()
    };

    for level in 0..levels {
        if !resolvable(level) {
            exhausted_at = Some(level);
            break;
        }
        let cyl = Cylinder::new(frame, a, h_cur, params.gamma, delta)?;
        match oscillation(&field, &cyl) {
            Ok((osc, samples)) => {
                // Undo the level normalization: true oscillation over
                // Q_{delta^{level+1}} equals delta^{alpha * level} * osc.
                let scale = powf(delta, alpha * cast_usize(level));
                let osc_abs = osc * scale;
                let radius = powf(delta, cast_usize(level + 1));
                let bound = powf(delta, -alpha) * powf(radius, alpha);
                rows.push(OscillationLevel {
                    level,
                    radius: num_traits::ToPrimitive::to_f64(&radius).unwrap(),
                    oscillation: num_traits::ToPrimitive::to_f64(&osc_abs).unwrap(),
                    samples,
                    shape_ok: osc_abs <= bound * cast(1.05),
                });
            }
            Err(Error::TooCoarse { .. }) => {
                exhausted_at = Some(level);
                break;
            }
            Err(e) => return Err(e),
        }
        if level + 1 < levels {
            field = rescale_field(&field, &step_params, None)?;
            h_cur = h_cur * delta;
        }
    }

    // Fit log osc against the level index.
    let mut xs = Vec::new();
    let mut ys = Vec::new();
    for row in &rows {
        if row.oscillation > 1e-14 {
            xs.push(cast_usize::<T>(row.level));
            ys.push(ln(cast::<T>(row.oscillation)));
        }
    }
    let (alpha_fit, stderr) = if xs.len() >= 2 {
        let (slope, _, se) = ols_line(&xs, &ys);
        let log_delta = ln(delta);
        (
            Some(num_traits::ToPrimitive::to_f64(&(slope / log_delta)).unwrap()),
            num_traits::ToPrimitive::to_f64(&abs(se / log_delta)).unwrap(),
        )
    } else {
        // Flat (or unresolved) data: infinitely smooth as far as the grid
        // can tell.
        (None, 0.0)
    };

    Ok(OscillationReport {
        h: num_traits::ToPrimitive::to_f64(&h).unwrap(),
        gamma: num_traits::ToPrimitive::to_f64(&params.gamma).unwrap(),
        delta: num_traits::ToPrimitive::to_f64(&delta).unwrap(),
        levels: rows,
        alpha_fit,
        alpha_stderr: stderr,
        exhausted_at,
    })
}

/// Per-stratum Holder exponent fit.
#[derive(Debug, Clone, Serialize)]
pub struct StratumFit {
    pub stratum: usize,
    pub beta: f64,
    pub stderr: f64,
    pub samples: usize,
    pub range_decades: f64,
    /// Set when the fitted exponent saturates at the Lipschitz scale.
    pub saturated: bool,
    /// Raw regression pairs (ln displacement, ln increment).
    pub pairs: Vec<(f64, f64)>,
}

/// Anisotropic Holder fit report.
#[derive(Debug, Clone, Serialize)]
pub struct HolderFit {
    pub strata: Vec<StratumFit>,
    /// alpha solved from the stratum-0 exponent via
    /// beta_0 = alpha / (alpha/q' + 1/q).
    pub alpha_from_beta0: Option<f64>,
    /// Predicted per-stratum exponents alpha / (alpha/q' + 1/q + j).
    pub predicted: Vec<f64>,
    /// Relative deviation of each fitted exponent from its prediction.
    pub deviations: Vec<f64>,
    /// False when any stratum had less than 1.5 decades of usable range.
    pub reliable: bool,
}

/// Fit per-stratum exponents by regressing log |u(t, x0 + s e) - u(t, x0)|
/// against log s over pure-stratum displacements at the base time slice.
///
/// Displacement magnitudes are restricted to [4 cells, extent/8]; base
/// point coordinates are in the adapted frame.
pub fn holder_fit<T: Real>(
    u: &GridFunction<T>,
    frame: &KalmanFrame<T>,
    params: &ScaleParams<T>,
    base_t: T,
    base_x: &DVector<T>,
) -> Result<HolderFit> {
    let spec = &u.spec;
    let n = spec.dim();
    if base_x.len() != n {
        return Err(Error::InvalidInput("base point dimension mismatch".into()));
    }
    // interior check
    for axis in 0..n {
        if base_x[axis] <= spec.bounds[axis].0 || base_x[axis] >= spec.bounds[axis].1 {
            return Err(Error::InvalidInput("base point must be interior".into()));
        }
    }
    let u0 = u.eval(base_t, base_x);

    let mut strata_fits = Vec::new();
    let mut reliable = true;
    for j in 0..=frame.kappa {
        // Axes belonging to stratum j.
        let axes: Vec<usize> = (0..n).filter(|&i| spec.strata[i] == j).collect();
        let mut xs: Vec<T> = Vec::new();
        let mut ys: Vec<T> = Vec::new();
        let mut smin = f64::INFINITY;
        let mut smax: f64 = 0.0;
        for &axis in &axes {
            let cell = spec.step(axis);
            let extent = spec.bounds[axis].1 - spec.bounds[axis].0;
            let lo = cell * cast(4.0);
            let hi = extent / cast(8.0);
            if hi <= lo {
                continue;
            }
            let points = 14;
            let ratio = powf(hi / lo, T::one() / cast_usize(points - 1));
            let mut s = lo;
            for _ in 0..points {
                for sign in [T::one(), -T::one()] {
                    let mut x = base_x.clone();
                    x[axis] = x[axis] + s * sign;
                    if x[axis] <= spec.bounds[axis].0 || x[axis] >= spec.bounds[axis].1 {
                        continue;
                    }
                    let du = abs(u.eval(base_t, &x) - u0);
                    if du > cast(1e-14) {
                        xs.push(ln(s));
                        ys.push(ln(du));
                        let sf = num_traits::ToPrimitive::to_f64(&s).unwrap();
                        smin = smin.min(sf);
                        smax = smax.max(sf);
                    }
                }
                s = s * ratio;
            }
        }
        let decades = if smax > 0.0 && smin.is_finite() {
            num_traits::ToPrimitive::to_f64(&log10(cast::<T>(smax / smin))).unwrap()
        } else {
            0.0
        };
        if decades < 1.5 {
            reliable = false;
        }
        let pairs: Vec<(f64, f64)> = xs
            .iter()
            .zip(ys.iter())
            .map(|(a, b)| {
                (
                    num_traits::ToPrimitive::to_f64(a).unwrap(),
                    num_traits::ToPrimitive::to_f64(b).unwrap(),
                )
            })
            .collect();
        if xs.len() < 4 {
            strata_fits.push(StratumFit {
                stratum: j,
                beta: f64::NAN,
                stderr: f64::NAN,
                samples: xs.len(),
                range_decades: decades,
                saturated: false,
                pairs,
            });
            reliable = false;
            continue;
        }
        let (slope, _, se) = ols_line(&xs, &ys);
        let beta = num_traits::ToPrimitive::to_f64(&slope).unwrap();
        strata_fits.push(StratumFit {
            stratum: j,
            beta,
            stderr: num_traits::ToPrimitive::to_f64(&se).unwrap(),
            samples: xs.len(),
            range_decades: decades,
            saturated: beta > 0.9,
            pairs,
        });
    }

    // alpha from the stratum-0 fit: beta0 = alpha / (alpha/q' + 1/q)
    // <=> alpha = beta0 / (q (1 - beta0 / q')).
    let qf = num_traits::ToPrimitive::to_f64(&params.q).unwrap();
    let qcf = num_traits::ToPrimitive::to_f64(&params.q_conj).unwrap();
    let beta0 = strata_fits.first().map(|s| s.beta).unwrap_or(f64::NAN);
    let alpha = if beta0.is_finite() && beta0 < qcf {
        Some(beta0 / (qf * (1.0 - beta0 / qcf)))
    } else {
        None
    };
    let (predicted, deviations) = if let Some(al) = alpha {
        let base = al / qcf + 1.0 / qf;
        let predicted: Vec<f64> = (0..=frame.kappa).map(|j| al / (base + j as f64)).collect();
        let deviations = strata_fits
            .iter()
            .zip(predicted.iter())
            .map(|(s, p)| (s.beta - p) / p)
            .collect();
        (predicted, deviations)
    } else {
        (vec![f64::NAN; frame.kappa + 1], vec![f64::NAN; frame.kappa + 1])
    };

    Ok(HolderFit {
        strata: strata_fits,
        alpha_from_beta0: alpha,
        predicted,
        deviations,
        reliable,
    })
}
