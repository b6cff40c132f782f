//! Minimum L^q'-energy steering for the rescaled control system
//! eta' = A_h eta + P_0 beta.
//!
//! Every solve is routed through the unit-interval reduction: steering xi
//! over a horizon T is equivalent to hitting zeta = T^-1 S(T)^-1 xi on
//! [0, 1] against the kernel (e^{tau A_0} + R_A(tau; hT)) restricted to the
//! controlled subspace. This keeps small horizons well conditioned.
//!
//! The q' = 2 case has a closed-form Gramian solution used as an oracle;
//! general exponents are solved by a damped Newton method on the dual map,
//! with an accelerated projected-descent fallback on the discretized
//! primal.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::kalman::{rescaled_drift_signed, KalmanFrame};
use crate::linalg::{condition_number, expm, one_norm, op_norm, solve_spd, QuadMesh};
use crate::scalar::{abs, cast, cast_usize, fmax, powf, powi, Real};

/// Exponents below this are refused: the dual degenerates as q' -> 1.
pub const MIN_Q_CONJ: f64 = 1.1;
/// Gramian condition limit before the solve is declared ill-conditioned.
pub const GRAMIAN_COND_LIMIT: f64 = 1e14;

/// Steering problem data: drive `start` at time `s` to `end` at time `t`
/// under the rescaled drift A_h, minimizing (1/q') int |beta|^{q'}.
#[derive(Debug, Clone)]
pub struct ControlProblemSpec<T: Real> {
    pub frame: KalmanFrame<T>,
    pub a: DMatrix<T>,
    pub h: T,
    pub q_conj: T,
    pub s: T,
    pub t: T,
    pub start: DVector<T>,
    pub end: DVector<T>,
}

impl<T: Real> ControlProblemSpec<T> {
    pub fn new(
        frame: &KalmanFrame<T>,
        a: &DMatrix<T>,
        h: T,
        q_conj: T,
        interval: (T, T),
        start: DVector<T>,
        end: DVector<T>,
    ) -> Result<Self> {
        if h < T::zero() {
            return Err(Error::InvalidInput("h must be non-negative".into()));
        }
        if q_conj < cast(MIN_Q_CONJ) {
            return Err(Error::InvalidInput(format!(
                "q' below {MIN_Q_CONJ} is refused; the dual problem degenerates"
            )));
        }
        if interval.0 >= interval.1 {
            return Err(Error::InvalidInput("need s < t".into()));
        }
        if start.len() != frame.dim || end.len() != frame.dim {
            return Err(Error::InvalidInput("endpoint dimension mismatch".into()));
        }
        Ok(ControlProblemSpec {
            frame: frame.clone(),
            a: a.clone(),
            h,
            q_conj,
            s: interval.0,
            t: interval.1,
            start,
            end,
        })
    }

    pub fn horizon(&self) -> T {
        self.t - self.s
    }
}

/// Sampled controlled path with piecewise-constant controls.
#[derive(Debug, Clone)]
pub struct Trajectory<T: Real> {
    /// Strictly increasing time grid, M+1 entries.
    pub times: Vec<T>,
    /// States at the grid times.
    pub states: Vec<DVector<T>>,
    /// Constant control on each of the M cells, valued in Im(P_0).
    pub controls: Vec<DVector<T>>,
    /// Discrete cost (1/q') sum |beta_k|^{q'} dt_k.
    pub cost: T,
}

impl<T: Real> Trajectory<T> {
    /// Largest residual of the discrete flow identity
    /// eta_{k+1} = e^{dt A_h} eta_k + int_0^dt e^{(dt-s) A_h} P_0 beta_k ds.
    pub fn flow_defect(&self, a_h: &DMatrix<T>) -> T {
        let mut worst = T::zero();
        for k in 0..self.controls.len() {
            let dt = self.times[k + 1] - self.times[k];
            let prop = expm(&(a_h * dt));
            let theta = flow_integral(a_h, dt);
            let pred = &prop * &self.states[k] + &theta * &self.controls[k];
            worst = fmax(worst, (&pred - &self.states[k + 1]).norm());
        }
        worst
    }

    /// L^{q'} norm of the piecewise-constant control.
    pub fn control_norm(&self, q_conj: T) -> T {
        let mut acc = T::zero();
        for k in 0..self.controls.len() {
            let dt = self.times[k + 1] - self.times[k];
            acc = acc + powf(self.controls[k].norm(), q_conj) * dt;
        }
        powf(acc, T::one() / q_conj)
    }
}

/// Cost of a steering problem with its dual certificate.
#[derive(Debug, Clone)]
pub struct CostValue<T: Real> {
    /// Optimal value of the steering functional.
    pub j: T,
    /// Multiplier of the unit-interval reduced problem.
    pub multiplier: DVector<T>,
    /// Norm of the endpoint-constraint violation of the reduced problem,
    /// relative to the reduced target.
    pub residual: T,
    /// Newton (or fallback) iterations consumed.
    pub iterations: usize,
    /// Primal value minus the dual lower bound at the returned multiplier.
    pub duality_gap: T,
}

/// int_0^dt e^{u A} du by Gauss-Legendre quadrature.
fn flow_integral<T: Real>(a: &DMatrix<T>, dt: T) -> DMatrix<T> {
    let n = a.nrows();
    let mesh = QuadMesh::uniform(T::zero(), dt, 4);
    let mut acc = DMatrix::<T>::zeros(n, n);
    for (x, w) in mesh.nodes.iter().zip(mesh.weights.iter()) {
        acc += expm(&(a * *x)) * *w;
    }
    acc
}

// ---------------------------------------------------------------------------
// Unit-interval kernel
// ---------------------------------------------------------------------------

/// Polynomial representation of the reduced kernel
/// G_h(tau) = (e^{tau A_0} + R_A(tau; h)) U_0 as sum_s tau^s K_s.
pub struct ReducedKernel<T: Real> {
    coeffs: Vec<DMatrix<T>>,
    pub n: usize,
    pub n0: usize,
}

impl<T: Real> ReducedKernel<T> {
    pub fn new(frame: &KalmanFrame<T>, a: &DMatrix<T>, h: T, tol: f64) -> Self {
        let u0 = frame.stratum_basis(0);
        let n = frame.dim;
        let n0 = u0.ncols();
        let kappa = frame.kappa;
        let norm_a: f64 = num_traits::ToPrimitive::to_f64(&op_norm(a)).unwrap();
        let abs_h: f64 = num_traits::ToPrimitive::to_f64(&abs(h)).unwrap();

        // Degree cap: keep powers while max_i h^{s-i} ||A||^s / s! >= tol.
        let mut s_max = kappa;
        if abs_h > 0.0 {
            let mut log_fact = 0.0;
            for s in 1..=200usize {
                log_fact += (s as f64).ln();
                let mut biggest = f64::NEG_INFINITY;
                for i in 0..=kappa.min(s.saturating_sub(1)) {
                    let lb = ((s - i) as f64) * abs_h.max(1e-300).ln()
                        + (s as f64) * norm_a.max(1e-300).ln()
                        - log_fact;
                    biggest = biggest.max(lb);
                }
                if biggest.exp() >= tol || s <= kappa + 1 {
                    s_max = s_max.max(s);
                }
            }
        }

        let mut coeffs: Vec<DMatrix<T>> = Vec::with_capacity(s_max + 1);
        let mut a_pow_u0: Vec<DMatrix<T>> = vec![u0.clone()];
        for _ in 1..=s_max {
            let next = a * a_pow_u0.last().unwrap();
            a_pow_u0.push(next);
        }
        let mut a0_pow_u0 = u0.clone();
        let mut factorial = T::one();
        for s in 0..=s_max {
            if s > 0 {
                factorial = factorial * cast_usize(s);
            }
            let mut k_s = DMatrix::<T>::zeros(n, n0);
            if s <= kappa {
                k_s += &a0_pow_u0 / factorial;
                a0_pow_u0 = &frame.principal_part * &a0_pow_u0;
            }
            if h != T::zero() && s >= 1 {
                for i in 0..=kappa.min(s - 1) {
                    let coeff = powi(h, (s - i) as i32) / factorial;
                    k_s += &frame.projections[i] * &a_pow_u0[s] * coeff;
                }
            }
            coeffs.push(k_s);
        }
        ReducedKernel { coeffs, n, n0 }
    }

    /// Kernel value at tau (Horner evaluation).
    pub fn eval(&self, tau: T) -> DMatrix<T> {
        let mut acc = self.coeffs.last().unwrap().clone();
        for s in (0..self.coeffs.len() - 1).rev() {
            acc = acc * tau + &self.coeffs[s];
        }
        acc
    }

    /// Unit-interval controllability Gramian int_0^1 G G^T.
    pub fn gramian(&self, mesh: &QuadMesh<T>) -> DMatrix<T> {
        let mut w = DMatrix::<T>::zeros(self.n, self.n);
        for (x, wt) in mesh.nodes.iter().zip(mesh.weights.iter()) {
            let g = self.eval(*x);
            w += &g * g.transpose() * *wt;
        }
        w
    }
}

// ---------------------------------------------------------------------------
// Dual Newton solver on the unit interval
// ---------------------------------------------------------------------------

/// Solver knobs: 256 base cells of 8-node Gauss-Legendre quadrature, 200
/// Newton iterations, graded refinement around kernel zeros when q < 2.
#[derive(Debug, Clone)]
pub struct DualSolveOptions {
    pub tol: f64,
    pub max_newton: usize,
    pub base_cells: usize,
    pub fallback_iters: usize,
}

impl Default for DualSolveOptions {
    fn default() -> Self {
        DualSolveOptions {
            tol: 1e-9,
            max_newton: 200,
            base_cells: 256,
            fallback_iters: 4000,
        }
    }
}

/// Solution of the reduced problem on [0, 1].
pub struct UnitSolution<T: Real> {
    pub cost: T,
    pub multiplier: DVector<T>,
    pub residual: T,
    pub iterations: usize,
    pub duality_gap: T,
    pub used_fallback: bool,
}

fn dual_control<T: Real>(g: &DMatrix<T>, p: &DVector<T>, q: T) -> DVector<T> {
    let k = g.transpose() * p;
    let m = k.norm();
    if m == T::zero() {
        return k;
    }
    k * powf(m, q - cast(2.0))
}

struct DualEval<T: Real> {
    residual: DVector<T>,
    /// int |k|^q over the mesh.
    kq_integral: T,
}

fn eval_dual<T: Real>(
    kernel: &ReducedKernel<T>,
    mesh: &QuadMesh<T>,
    p: &DVector<T>,
    q: T,
    zeta: &DVector<T>,
) -> DualEval<T> {
    let mut f = DVector::<T>::zeros(kernel.n);
    let mut kq = T::zero();
    for (x, w) in mesh.nodes.iter().zip(mesh.weights.iter()) {
        let g = kernel.eval(*x);
        let k = g.transpose() * p;
        let m = k.norm();
        if m > T::zero() {
            f += &g * &k * (powf(m, q - cast(2.0)) * *w);
            kq = kq + powf(m, q) * *w;
        }
    }
    DualEval {
        residual: f - zeta,
        kq_integral: kq,
    }
}

fn dual_jacobian<T: Real>(
    kernel: &ReducedKernel<T>,
    mesh: &QuadMesh<T>,
    p: &DVector<T>,
    q: T,
) -> DMatrix<T> {
    let n = kernel.n;
    let mut jac = DMatrix::<T>::zeros(n, n);
    let two = cast::<T>(2.0);
    for (x, w) in mesh.nodes.iter().zip(mesh.weights.iter()) {
        let g = kernel.eval(*x);
        let k = g.transpose() * p;
        let m = k.norm();
        if m > T::zero() {
            let gk = &g * &k;
            let scale = powf(m, q - two) * *w;
            jac += &g * g.transpose() * scale;
            jac += &gk * gk.transpose() * (scale * (q - two) / (m * m));
        }
    }
    jac
}

/// Mesh adapted to the current multiplier: refine around zeros of |G^T p|
/// when the dual weight |k|^{q-2} is singular (q < 2).
fn adapted_mesh<T: Real>(
    kernel: &ReducedKernel<T>,
    base: &QuadMesh<T>,
    p: &DVector<T>,
    q: T,
) -> QuadMesh<T> {
    if q >= cast(2.0) {
        return base.clone();
    }
    let vals: Vec<T> = base
        .nodes
        .iter()
        .map(|&x| (kernel.eval(x).transpose() * p).norm())
        .collect();
    let maxv = vals.iter().cloned().fold(T::zero(), fmax);
    if maxv == T::zero() {
        return base.clone();
    }
    let mut mesh = base.clone();
    let mut fans = 0;
    if kernel.n0 == 1 {
        // Scalar kernel: locate sign changes by bisection.
        let signed: Vec<T> = base
            .nodes
            .iter()
            .map(|&x| (kernel.eval(x).transpose() * p)[0])
            .collect();
        for i in 1..base.nodes.len() {
            if signed[i - 1] != T::zero()
                && signed[i] != T::zero()
                && (signed[i - 1] > T::zero()) != (signed[i] > T::zero())
            {
                let mut lo = base.nodes[i - 1];
                let mut hi = base.nodes[i];
                for _ in 0..60 {
                    let mid = (lo + hi) * cast(0.5);
                    let v = (kernel.eval(mid).transpose() * p)[0];
                    if v == T::zero() {
                        lo = mid;
                        break;
                    }
                    if (v > T::zero()) == (signed[i - 1] > T::zero()) {
                        lo = mid;
                    } else {
                        hi = mid;
                    }
                }
                mesh = mesh.refine_around((lo + hi) * cast(0.5), 28);
                fans += 1;
                if fans >= 8 {
                    break;
                }
            }
        }
    } else {
        // Vector kernel: |k| vanishes only where all components do; refine
        // around pronounced dips.
        let dip = maxv * cast(1e-3);
        for i in 1..base.nodes.len() - 1 {
            if vals[i] < dip && vals[i] <= vals[i - 1] && vals[i] <= vals[i + 1] {
                mesh = mesh.refine_around(base.nodes[i], 28);
                fans += 1;
                if fans >= 8 {
                    break;
                }
            }
        }
    }
    mesh
}

/// Solve the reduced problem: minimize (1/q') int_0^1 |b|^{q'} subject to
/// int_0^1 G b = zeta.
pub fn solve_unit<T: Real>(
    kernel: &ReducedKernel<T>,
    zeta: &DVector<T>,
    q_conj: T,
    opts: &DualSolveOptions,
) -> Result<UnitSolution<T>> {
    let n = kernel.n;
    let znorm = zeta.norm();
    if znorm == T::zero() {
        return Ok(UnitSolution {
            cost: T::zero(),
            multiplier: DVector::zeros(n),
            residual: T::zero(),
            iterations: 0,
            duality_gap: T::zero(),
            used_fallback: false,
        });
    }
    // Normalize the target; everything scales back by homogeneity:
    // F(c p) = c^{q-1} F(p), J(c zeta) = c^{q'} J(zeta).
    let target = zeta / znorm;
    let q = q_conj / (q_conj - T::one());
    let base = QuadMesh::uniform(T::zero(), T::one(), opts.base_cells);

    let gram = kernel.gramian(&base);
    let cond = condition_number(&gram)
        .map(|c| num_traits::ToPrimitive::to_f64(&c).unwrap_or(f64::INFINITY))
        .unwrap_or(f64::INFINITY);
    if cond > GRAMIAN_COND_LIMIT {
        return Err(Error::IllConditionedHorizon {
            cond,
            limit: GRAMIAN_COND_LIMIT,
        });
    }
    let p_l2 = solve_spd(&gram, &target).ok_or_else(|| {
        Error::InternalConsistency("unit Gramian failed to factor".into())
    })?;

    // Scale the L^2 multiplier along its own image direction.
    let mut p = p_l2;
    {
        let mesh = adapted_mesh(kernel, &base, &p, q);
        let ev = eval_dual(kernel, &mesh, &p, q, &DVector::zeros(n));
        let fp = ev.residual; // equals F(p) as the target term was zero
        let fp_norm2 = fp.dot(&fp);
        if fp_norm2 > T::zero() {
            let c_pow = fmax(fp.dot(&target) / fp_norm2, cast(1e-8));
            p *= powf(c_pow, T::one() / (q - T::one()));
        }
    }

    let tol = cast::<T>(opts.tol);
    let mut iterations = 0;
    let mut best_p = p.clone();
    let mut best_res = T::infinity();
    let mut converged = false;

    for _ in 0..opts.max_newton {
        iterations += 1;
        let mesh = adapted_mesh(kernel, &base, &p, q);
        let ev = eval_dual(kernel, &mesh, &p, q, &target);
        let rnorm = ev.residual.norm();
        if rnorm < best_res {
            best_res = rnorm;
            best_p = p.clone();
        }
        if rnorm <= tol {
            converged = true;
            break;
        }
        let mut jac = dual_jacobian(kernel, &mesh, &p, q);
        // Levenberg damping keeps the step defined where the dual map is
        // only semismooth (q < 2).
        let damp = fmax(one_norm(&jac), T::one()) * cast(1e-13) + rnorm * cast(1e-8);
        for i in 0..n {
            jac[(i, i)] = jac[(i, i)] + damp;
        }
        let step = match solve_spd(&jac, &(-&ev.residual)) {
            Some(s) => s,
            None => break,
        };
        let mut scale = T::one();
        let mut accepted = false;
        for _ in 0..40 {
            let trial = &p + &step * scale;
            let mesh_t = adapted_mesh(kernel, &base, &trial, q);
            let ev_t = eval_dual(kernel, &mesh_t, &trial, q, &target);
            if ev_t.residual.norm() < rnorm * (T::one() - cast::<T>(0.2) * scale) {
                p = trial;
                accepted = true;
                break;
            }
            scale = scale * cast(0.5);
        }
        if !accepted {
            break;
        }
    }

    if !converged {
        match primal_fallback(kernel, &base, &target, q_conj, opts) {
            Ok((p_fb, res_fb, its)) => {
                iterations += its;
                if res_fb < best_res {
                    best_p = p_fb;
                    best_res = res_fb;
                }
            }
            Err(_) => {}
        }
        if best_res > tol * cast(10.0) {
            return Err(Error::NoConvergence {
                residual: num_traits::ToPrimitive::to_f64(&best_res).unwrap_or(f64::NAN),
                iterations,
                best_multiplier: best_p
                    .iter()
                    .map(|v| num_traits::ToPrimitive::to_f64(v).unwrap_or(f64::NAN))
                    .collect(),
            });
        }
    }
    let p = best_p;

    // Final evaluation, then rescale to the unnormalized target.
    let mesh = adapted_mesh(kernel, &base, &p, q);
    let ev = eval_dual(kernel, &mesh, &p, q, &target);
    let cost_unit = ev.kq_integral / q_conj;
    let dual_value = p.dot(&target) - ev.kq_integral / q;
    let gap = cost_unit - dual_value;

    let scale_p = powf(znorm, q_conj - T::one());
    Ok(UnitSolution {
        cost: cost_unit * powf(znorm, q_conj),
        multiplier: p * scale_p,
        residual: ev.residual.norm(),
        iterations,
        duality_gap: abs(gap) * powf(znorm, q_conj),
        used_fallback: !converged,
    })
}

/// Accelerated projected descent on the discretized primal problem.
///
/// Controls are represented by their values at the quadrature nodes; the
/// affine endpoint constraint is enforced by a minimal-L^2 correction
/// through the discrete Gramian after every step.
pub fn primal_fallback<T: Real>(
    kernel: &ReducedKernel<T>,
    mesh: &QuadMesh<T>,
    target: &DVector<T>,
    q_conj: T,
    opts: &DualSolveOptions,
) -> Result<(DVector<T>, T, usize)> {
    let nn = mesh.nodes.len();
    let n = kernel.n;
    let gs: Vec<DMatrix<T>> = mesh.nodes.iter().map(|&x| kernel.eval(x)).collect();
    let mut gram = DMatrix::<T>::zeros(n, n);
    for (g, w) in gs.iter().zip(mesh.weights.iter()) {
        gram += g * g.transpose() * *w;
    }

    let project = |beta: &mut Vec<DVector<T>>| {
        let mut reach = DVector::<T>::zeros(n);
        for ((g, b), w) in gs.iter().zip(beta.iter()).zip(mesh.weights.iter()) {
            reach += g * b * *w;
        }
        let defect = target - reach;
        if let Some(corr) = solve_spd(&gram, &defect) {
            for (g, b) in gs.iter().zip(beta.iter_mut()) {
                *b += g.transpose() * &corr;
            }
        }
    };

    let cost = |beta: &Vec<DVector<T>>| -> T {
        let mut c = T::zero();
        for (b, w) in beta.iter().zip(mesh.weights.iter()) {
            c = c + powf(b.norm(), q_conj) * *w;
        }
        c / q_conj
    };

    // Feasible start: minimal-L^2 control.
    let mut beta: Vec<DVector<T>> = vec![DVector::zeros(kernel.n0); nn];
    project(&mut beta);
    let mut beta_prev = beta.clone();
    let mut cur_cost = cost(&beta);
    let mut step = cast::<T>(0.5);
    let mut its = 0;
    for iter in 0..opts.fallback_iters {
        its += 1;
        let momentum: T = cast::<T>(iter as f64 / (iter as f64 + 3.0));
        let mut trial: Vec<DVector<T>> = beta
            .iter()
            .zip(beta_prev.iter())
            .map(|(b, bp)| b + (b - bp) * momentum)
            .collect();
        for b in trial.iter_mut() {
            let m = b.norm();
            if m > T::zero() {
                let grad = b.clone() * powf(m, q_conj - cast(2.0));
                *b -= grad * step;
            }
        }
        project(&mut trial);
        let trial_cost = cost(&trial);
        if trial_cost <= cur_cost {
            beta_prev = std::mem::replace(&mut beta, trial);
            let improvement = cur_cost - trial_cost;
            cur_cost = trial_cost;
            if improvement < cast::<T>(opts.tol) * (T::one() + cur_cost) && iter > 20 {
                break;
            }
        } else {
            step = step * cast(0.5);
            beta_prev = beta.clone();
            if step < cast(1e-12) {
                break;
            }
        }
    }

    // Multiplier from the first-order conditions by least squares.
    let mut rhs = DVector::<T>::zeros(n);
    for ((g, b), w) in gs.iter().zip(beta.iter()).zip(mesh.weights.iter()) {
        let m = b.norm();
        if m > T::zero() {
            rhs += g * b * (powf(m, q_conj - cast(2.0)) * *w);
        }
    }
    let p = solve_spd(&gram, &rhs)
        .ok_or_else(|| Error::InternalConsistency("fallback Gramian failed".into()))?;
    let q = q_conj / (q_conj - T::one());
    let ev = eval_dual(kernel, mesh, &p, q, target);
    Ok((p, ev.residual.norm(), its))
}

// ---------------------------------------------------------------------------
// Public operations
// ---------------------------------------------------------------------------

/// Reduced data of a steering problem: horizon and unit-interval target.
fn reduce<T: Real>(spec: &ControlProblemSpec<T>) -> (T, DVector<T>) {
    let horizon = spec.horizon();
    let a_h = rescaled_drift_signed(&spec.frame, &spec.a, spec.h);
    let free = expm(&(&a_h * horizon)) * &spec.start;
    let xi = &spec.end - free;
    let zeta = spec.frame.scaling(T::one() / horizon) * xi / horizon;
    (horizon, zeta)
}

/// Closed-form minimum-energy cost for q' = 2:
/// J = 1/2 xi^T W^{-1} xi with W the controllability Gramian, evaluated
/// through the unit-interval reduction for conditioning.
pub fn gramian_cost_q2<T: Real>(spec: &ControlProblemSpec<T>) -> Result<CostValue<T>> {
    if abs(spec.q_conj - cast(2.0)) > cast(1e-12) {
        return Err(Error::InvalidInput("gramian oracle requires q' = 2".into()));
    }
    let (horizon, zeta) = reduce(spec);
    let kernel = ReducedKernel::new(&spec.frame, &spec.a, spec.h * horizon, 1e-14);
    let mesh = QuadMesh::uniform(T::zero(), T::one(), 256);
    let gram = kernel.gramian(&mesh);
    let cond = condition_number(&gram)
        .map(|c| num_traits::ToPrimitive::to_f64(&c).unwrap_or(f64::INFINITY))
        .unwrap_or(f64::INFINITY);
    if cond > GRAMIAN_COND_LIMIT {
        return Err(Error::IllConditionedHorizon {
            cond,
            limit: GRAMIAN_COND_LIMIT,
        });
    }
    let p = solve_spd(&gram, &zeta)
        .ok_or_else(|| Error::InternalConsistency("gramian failed to factor".into()))?;
    let j_unit = zeta.dot(&p) * cast(0.5);
    let residual = (&gram * &p - &zeta).norm() / fmax(zeta.norm(), T::one());
    Ok(CostValue {
        j: j_unit * horizon,
        multiplier: p,
        residual,
        iterations: 0,
        duality_gap: T::zero(),
    })
}

/// General minimum-energy steering: cost, dual certificate and a rendered
/// trajectory with `cells` piecewise-constant control cells.
pub fn min_energy_cost<T: Real>(
    spec: &ControlProblemSpec<T>,
    tol: T,
    cells: usize,
) -> Result<(CostValue<T>, Trajectory<T>)> {
    if tol <= T::zero() {
        return Err(Error::InvalidInput("tol must be positive".into()));
    }
    let (horizon, zeta) = reduce(spec);
    let kernel = ReducedKernel::new(&spec.frame, &spec.a, spec.h * horizon, 1e-14);
    let opts = DualSolveOptions {
        tol: num_traits::ToPrimitive::to_f64(&tol)
            .unwrap_or(1e-9)
            .min(1e-7),
        ..Default::default()
    };
    let unit = solve_unit(&kernel, &zeta, spec.q_conj, &opts)?;
    let q = spec.q_conj / (spec.q_conj - T::one());

    // Continuous optimal control mapped back to [s, t]:
    // beta(sigma) = beta_hat((t - sigma)/T) in E_0 coordinates.
    let u0 = spec.frame.stratum_basis(0);
    let control_at = |sigma: T| -> DVector<T> {
        let tau = (spec.t - sigma) / horizon;
        let g = kernel.eval(tau);
        dual_control(&g, &unit.multiplier, q)
    };

    let traj = render_trajectory(spec, &u0, control_at, cells.max(8))?;
    let cost = CostValue {
        j: unit.cost * horizon,
        multiplier: unit.multiplier,
        residual: unit.residual,
        iterations: unit.iterations,
        duality_gap: unit.duality_gap * horizon,
    };
    Ok((cost, traj))
}

/// Render a trajectory from a continuous E_0-coordinate control law:
/// piecewise-constant cell averages stepped by the exact discrete flow,
/// followed by a Gramian-distributed endpoint correction so the rendered
/// path hits the target at solver precision.
fn render_trajectory<T: Real>(
    spec: &ControlProblemSpec<T>,
    u0: &DMatrix<T>,
    control_at: impl Fn(T) -> DVector<T>,
    cells: usize,
) -> Result<Trajectory<T>> {
    let a_h = rescaled_drift_signed(&spec.frame, &spec.a, spec.h);
    let n0 = u0.ncols();
    let dt = spec.horizon() / cast_usize(cells);
    let times: Vec<T> = (0..=cells).map(|k| spec.s + dt * cast_usize(k)).collect();

    let prop = expm(&(&a_h * dt));
    let theta = flow_integral(&a_h, dt) * u0; // N x n0

    // Cell averages of the continuous control by Gauss quadrature.
    let mut controls_e0: Vec<DVector<T>> = Vec::with_capacity(cells);
    for k in 0..cells {
        let mesh = QuadMesh::from_breaks(vec![times[k], times[k + 1]]);
        let mut avg = DVector::<T>::zeros(n0);
        for (x, w) in mesh.nodes.iter().zip(mesh.weights.iter()) {
            avg += control_at(*x) * *w;
        }
        controls_e0.push(avg / dt);
    }

    // Endpoint effect of a unit constant control on each cell.
    let mut rev: Vec<DMatrix<T>> = Vec::with_capacity(cells);
    let mut acc = DMatrix::<T>::identity(spec.frame.dim, spec.frame.dim);
    for _ in 0..cells {
        rev.push(acc.clone());
        acc = &acc * &prop;
    }
    let end_props: Vec<DMatrix<T>> = (0..cells)
        .map(|k| rev[cells - 1 - k].clone() * &theta)
        .collect();

    let run = |controls: &Vec<DVector<T>>| -> Vec<DVector<T>> {
        let mut states = Vec::with_capacity(cells + 1);
        states.push(spec.start.clone());
        for k in 0..cells {
            let next = &prop * &states[k] + &theta * &controls[k];
            states.push(next);
        }
        states
    };

    let states = run(&controls_e0);
    let defect = &spec.end - states.last().unwrap();
    let mut w_corr = DMatrix::<T>::zeros(spec.frame.dim, spec.frame.dim);
    for ep in &end_props {
        w_corr += ep * ep.transpose();
    }
    if let Some(pc) = solve_spd(&w_corr, &defect) {
        for (k, ep) in end_props.iter().enumerate() {
            controls_e0[k] += ep.transpose() * &pc;
        }
    }
    let states = run(&controls_e0);

    let mut cost = T::zero();
    let controls: Vec<DVector<T>> = controls_e0
        .iter()
        .map(|c| {
            cost = cost + powf(c.norm(), spec.q_conj) * dt;
            u0 * c
        })
        .collect();
    Ok(Trajectory {
        times,
        states,
        controls,
        cost: cost / spec.q_conj,
    })
}

/// Value of the unit-interval reduced steering problem for target `xi`.
pub fn reduced_unit_cost<T: Real>(
    frame: &KalmanFrame<T>,
    a: &DMatrix<T>,
    h: T,
    xi: &DVector<T>,
    q_conj: T,
    tol: T,
) -> Result<CostValue<T>> {
    if h < T::zero() {
        return Err(Error::InvalidInput("h must be non-negative".into()));
    }
    if q_conj < cast(MIN_Q_CONJ) {
        return Err(Error::InvalidInput(format!(
            "q' below {MIN_Q_CONJ} is refused"
        )));
    }
    let kernel = ReducedKernel::new(frame, a, h, 1e-14);
    let opts = DualSolveOptions {
        tol: num_traits::ToPrimitive::to_f64(&tol)
            .unwrap_or(1e-9)
            .min(1e-7),
        ..Default::default()
    };
    let unit = solve_unit(&kernel, xi, q_conj, &opts)?;
    Ok(CostValue {
        j: unit.cost,
        multiplier: unit.multiplier,
        residual: unit.residual,
        iterations: unit.iterations,
        duality_gap: unit.duality_gap,
    })
}

/// Small-time cost J~(t; xi) through the reduction identity
/// J~_h(t; xi) = t * Jhat_{ht}(t^{-1} S(t)^{-1} xi).
pub fn small_time_cost<T: Real>(
    frame: &KalmanFrame<T>,
    a: &DMatrix<T>,
    h: T,
    t: T,
    xi: &DVector<T>,
    q_conj: T,
    tol: T,
) -> Result<CostValue<T>> {
    if t <= T::zero() {
        return Err(Error::InvalidInput("horizon must be positive".into()));
    }
    let zeta = frame.scaling(T::one() / t) * xi / t;
    let mut cv = reduced_unit_cost(frame, a, h * t, &zeta, q_conj, tol)?;
    cv.j = cv.j * t;
    cv.duality_gap = cv.duality_gap * t;
    Ok(cv)
}

/// One row of the scaled cost-bound report.
#[derive(Debug, Clone, serde::Serialize)]
pub struct CostScalingRow {
    pub h: f64,
    pub t: f64,
    pub sample: usize,
    pub cost: f64,
    pub reference: f64,
    pub ratio: f64,
}

/// Report of the two-sided small-time bounds: the ratio
/// J~_h(t; xi) / (t^{-q'/q} |S(t)^{-1} xi|^{q'}) over a parameter sweep.
#[derive(Debug, Clone, serde::Serialize)]
pub struct CostScalingReport {
    pub rows: Vec<CostScalingRow>,
    pub min_ratio: f64,
    pub max_ratio: f64,
    pub spread: f64,
    pub spread_ok: bool,
}

/// Sweep the two-sided bound over h, t and sample directions. Every h*t
/// must stay below the admissible threshold from [`estimate_h_star`].
pub fn cost_scaling_report<T: Real>(
    frame: &KalmanFrame<T>,
    a: &DMatrix<T>,
    q: T,
    h_list: &[T],
    t_list: &[T],
    xi_samples: &[DVector<T>],
    c_stability: f64,
) -> Result<CostScalingReport> {
    if q <= T::one() {
        return Err(Error::InvalidInput("q must exceed 1".into()));
    }
    let q_conj = q / (q - T::one());
    let needs_hstar = h_list.iter().any(|&h| h > T::zero());
    if needs_hstar {
        let h_star = estimate_h_star(frame, a, q_conj)?.empirical;
        for &h in h_list {
            for &t in t_list {
                let ht = num_traits::ToPrimitive::to_f64(&(h * t)).unwrap_or(0.0);
                if ht > h_star {
                    return Err(Error::InvalidInput(format!(
                        "h*t = {ht:.3e} exceeds the admissible threshold {h_star:.3e}"
                    )));
                }
            }
        }
    }
    let mut rows = Vec::new();
    let mut min_ratio = f64::INFINITY;
    let mut max_ratio: f64 = 0.0;
    for &h in h_list {
        for &t in t_list {
            for (si, xi) in xi_samples.iter().enumerate() {
                let cv = small_time_cost(frame, a, h, t, xi, q_conj, cast(1e-9))?;
                let sxi = (frame.scaling(T::one() / t) * xi).norm();
                let reference = powf(t, -q_conj / q) * powf(sxi, q_conj);
                let cost_f = num_traits::ToPrimitive::to_f64(&cv.j).unwrap();
                let ref_f = num_traits::ToPrimitive::to_f64(&reference).unwrap();
                let ratio = if ref_f > 0.0 { cost_f / ref_f } else { f64::NAN };
                if ratio.is_finite() && ref_f > 0.0 {
                    min_ratio = min_ratio.min(ratio);
                    max_ratio = max_ratio.max(ratio);
                }
                rows.push(CostScalingRow {
                    h: num_traits::ToPrimitive::to_f64(&h).unwrap(),
                    t: num_traits::ToPrimitive::to_f64(&t).unwrap(),
                    sample: si,
                    cost: cost_f,
                    reference: ref_f,
                    ratio,
                });
            }
        }
    }
    let spread = if min_ratio > 0.0 && min_ratio.is_finite() {
        max_ratio / min_ratio
    } else {
        f64::INFINITY
    };
    Ok(CostScalingReport {
        rows,
        min_ratio,
        max_ratio,
        spread,
        spread_ok: spread <= c_stability,
    })
}

/// Extent-bound report: smallest constants making the anisotropic extent
/// estimates hold along a trajectory.
#[derive(Debug, Clone, serde::Serialize)]
pub struct ExtentReport {
    pub c_from_start: f64,
    pub c_toward_end: f64,
    pub control_norm: f64,
}

/// Verify the trajectory-extent estimates:
/// T^{-1/q} |S(T)^{-1} (e^{(t-tau) A_h} eta(tau) - e^{T A_h} y)| <= C ||beta||
/// and the symmetric bound toward the end point, reporting the smallest C.
pub fn extent_report<T: Real>(
    spec: &ControlProblemSpec<T>,
    traj: &Trajectory<T>,
) -> Result<ExtentReport> {
    let horizon = spec.horizon();
    let a_h = rescaled_drift_signed(&spec.frame, &spec.a, spec.h);
    let s_inv = spec.frame.scaling(T::one() / horizon);
    let bnorm = traj.control_norm(spec.q_conj);
    if bnorm == T::zero() {
        return Ok(ExtentReport {
            c_from_start: 0.0,
            c_toward_end: 0.0,
            control_norm: 0.0,
        });
    }
    let q = spec.q_conj / (spec.q_conj - T::one());
    let free_from_start = expm(&(&a_h * horizon)) * &spec.start;
    let weight = powf(horizon, -T::one() / q);
    let mut c_fwd = T::zero();
    let mut c_bwd = T::zero();
    for (k, tau) in traj.times.iter().enumerate() {
        let to_end = expm(&(&a_h * (spec.t - *tau)));
        let flowed = &to_end * &traj.states[k];
        let lhs_fwd = (&s_inv * (&flowed - &free_from_start)).norm() * weight;
        let lhs_bwd = (&s_inv * (&spec.end - &flowed)).norm() * weight;
        c_fwd = fmax(c_fwd, lhs_fwd / bnorm);
        c_bwd = fmax(c_bwd, lhs_bwd / bnorm);
    }
    Ok(ExtentReport {
        c_from_start: num_traits::ToPrimitive::to_f64(&c_fwd).unwrap(),
        c_toward_end: num_traits::ToPrimitive::to_f64(&c_bwd).unwrap(),
        control_norm: num_traits::ToPrimitive::to_f64(&bnorm).unwrap(),
    })
}

/// Admissible perturbation threshold report.
#[derive(Debug, Clone, serde::Serialize)]
pub struct HStarReport {
    /// Largest dyadic h whose empirical norm-equivalence constant stays
    /// within twice the h = 0 value.
    pub empirical: f64,
    /// Log-formula value from the perturbation argument, with the L^2
    /// minimal-norm right inverse standing in for the operator norm.
    pub formula: f64,
}

/// Estimate the admissible drift scale h* two ways: a dyadic sweep of the
/// empirical norm-equivalence constant, and the perturbation-series formula.
pub fn estimate_h_star<T: Real>(
    frame: &KalmanFrame<T>,
    a: &DMatrix<T>,
    q_conj: T,
) -> Result<HStarReport> {
    let equiv_const = |h: T| -> Result<f64> {
        let mut worst: f64 = 1.0;
        for j in 0..frame.dim {
            let mut xi = DVector::<T>::zeros(frame.dim);
            xi[j] = T::one();
            let cv = reduced_unit_cost(frame, a, h, &xi, q_conj, cast(1e-7))?;
            let v = num_traits::ToPrimitive::to_f64(&cv.j).unwrap();
            if v > 0.0 {
                worst = worst.max(v).max(1.0 / v);
            }
        }
        Ok(worst)
    };
    let c0 = equiv_const(T::zero())?;
    let mut empirical = 0.0f64;
    let mut h = 1.0f64;
    for _ in 0..14 {
        if let Ok(c) = equiv_const(cast(h)) {
            if c <= 2.0 * c0 {
                empirical = h;
                break;
            }
        }
        h *= 0.5;
    }

    let kernel0 = ReducedKernel::new(frame, a, T::zero(), 1e-14);
    let mesh = QuadMesh::uniform(T::zero(), T::one(), 128);
    let gram0 = kernel0.gramian(&mesh);
    let sv = crate::linalg::singular_values(&gram0);
    let smin = num_traits::ToPrimitive::to_f64(sv.last().unwrap()).unwrap();
    let h_norm = if smin > 0.0 {
        smin.sqrt().recip()
    } else {
        f64::INFINITY
    };
    let norm_a = num_traits::ToPrimitive::to_f64(&op_norm(a)).unwrap();
    let formula = if norm_a > 0.0 && h_norm.is_finite() {
        (1.0 + 1.0 / (2.0 * h_norm * norm_a.exp())).ln() / norm_a
    } else {
        f64::INFINITY
    };
    Ok(HStarReport { empirical, formula })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kalman::build_frame;
    use approx::assert_relative_eq;

    fn kolmogorov() -> (KalmanFrame<f64>, DMatrix<f64>) {
        let a = DMatrix::from_row_slice(2, 2, &[0.0, 0.0, 1.0, 0.0]);
        let p0 = DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, 0.0]);
        let frame = build_frame(&a, &p0).unwrap();
        (frame, a)
    }

    fn kolmogorov_spec(q_conj: f64, t: f64, end: [f64; 2]) -> ControlProblemSpec<f64> {
        let (frame, a) = kolmogorov();
        ControlProblemSpec::new(
            &frame,
            &a,
            0.0,
            q_conj,
            (0.0, t),
            DVector::zeros(2),
            DVector::from_row_slice(&end),
        )
        .unwrap()
    }

    #[test]
    fn gramian_hand_value_kolmogorov() {
        let spec = kolmogorov_spec(2.0, 1.0, [0.0, 1.0]);
        let cv = gramian_cost_q2(&spec).unwrap();
        assert_relative_eq!(cv.j, 6.0, max_relative = 1e-9);
    }

    #[test]
    fn gramian_scaling_in_time() {
        for t in [1.0, 0.5, 0.25] {
            let spec = kolmogorov_spec(2.0, t, [0.0, 1.0]);
            let cv = gramian_cost_q2(&spec).unwrap();
            assert_relative_eq!(cv.j, 6.0 / t.powi(3), max_relative = 1e-8);
        }
    }

    #[test]
    fn gramian_free_flow_is_zero() {
        let (frame, a) = kolmogorov();
        let start = DVector::from_row_slice(&[0.3, -0.2]);
        let end = expm(&a) * &start;
        let spec = ControlProblemSpec::new(&frame, &a, 0.0, 2.0, (0.0, 1.0), start, end).unwrap();
        let cv = gramian_cost_q2(&spec).unwrap();
        assert!(cv.j.abs() < 1e-12);
    }

    #[test]
    fn newton_matches_gramian_at_q2() {
        let spec = kolmogorov_spec(2.0, 1.0, [0.0, 1.0]);
        let (cv, traj) = min_energy_cost(&spec, 1e-9, 256).unwrap();
        assert_relative_eq!(cv.j, 6.0, max_relative = 1e-7);
        assert!(traj.flow_defect(&spec.a) < 1e-8);
        assert!((traj.states.last().unwrap() - &spec.end).norm() < 1e-9);
    }

    #[test]
    fn first_order_conditions_hold_along_trajectory() {
        let spec = kolmogorov_spec(2.0, 1.0, [0.0, 1.0]);
        let (cv, traj) = min_energy_cost(&spec, 1e-9, 256).unwrap();
        let kernel = ReducedKernel::new(&spec.frame, &spec.a, 0.0, 1e-14);
        let mut worst = 0.0f64;
        for k in 0..traj.controls.len() {
            let mid = 0.5 * (traj.times[k] + traj.times[k + 1]);
            let tau = (spec.t - mid) / spec.horizon();
            let g = kernel.eval(tau);
            let kvec = g.transpose() * &cv.multiplier;
            // n0 = 1 here: compare the E_0 component.
            let b = traj.controls[k][0];
            let lhs = b.abs().powf(spec.q_conj - 2.0) * b;
            worst = worst.max((lhs - kvec[0]).abs());
        }
        assert!(worst < 1e-3, "first-order deviation {worst}");
    }

    #[test]
    fn trivial_target_needs_no_control() {
        let (frame, a) = kolmogorov();
        let start = DVector::from_row_slice(&[0.4, 0.1]);
        let end = expm(&(a.clone() * 0.7)) * &start;
        let spec = ControlProblemSpec::new(&frame, &a, 0.0, 3.0, (0.0, 0.7), start, end).unwrap();
        let (cv, traj) = min_energy_cost(&spec, 1e-9, 64).unwrap();
        assert!(cv.j.abs() < 1e-10);
        assert!(traj.control_norm(3.0) < 1e-5);
    }

    #[test]
    fn q_prime_below_floor_is_refused() {
        let (frame, a) = kolmogorov();
        let err = ControlProblemSpec::new(
            &frame,
            &a,
            0.0,
            1.05,
            (0.0, 1.0),
            DVector::zeros(2),
            DVector::from_row_slice(&[1.0, 0.0]),
        );
        assert!(matches!(err, Err(Error::InvalidInput(_))));
    }

    #[test]
    fn reduced_cost_matches_small_time_identity() {
        let (frame, a) = kolmogorov();
        let xi = DVector::from_row_slice(&[0.3, 0.7]);
        for q_conj in [1.5, 2.0, 3.0] {
            for t in [1.0, 0.5, 0.25] {
                let direct = {
                    let spec = ControlProblemSpec::new(
                        &frame,
                        &a,
                        0.0,
                        q_conj,
                        (0.0, t),
                        DVector::zeros(2),
                        xi.clone(),
                    )
                    .unwrap();
                    min_energy_cost(&spec, 1e-10, 64).unwrap().0.j
                };
                let reduced = small_time_cost(&frame, &a, 0.0, t, &xi, q_conj, 1e-10)
                    .unwrap()
                    .j;
                assert_relative_eq!(direct, reduced, max_relative = 1e-6);
            }
        }
    }

    #[test]
    fn jhat_kolmogorov_gramian_value() {
        let (frame, a) = kolmogorov();
        let xi = DVector::from_row_slice(&[0.0, 1.0]);
        let cv = reduced_unit_cost(&frame, &a, 0.0, &xi, 2.0, 1e-10).unwrap();
        assert_relative_eq!(cv.j, 6.0, max_relative = 1e-8);
        let zero = reduced_unit_cost(&frame, &a, 0.0, &DVector::zeros(2), 2.0, 1e-10).unwrap();
        assert_eq!(zero.j, 0.0);
    }

    #[test]
    fn duality_gap_is_small() {
        let (frame, a) = kolmogorov();
        for q_conj in [1.5, 2.0, 3.0] {
            let xi = DVector::from_row_slice(&[0.4, -0.8]);
            let cv = reduced_unit_cost(&frame, &a, 0.0, &xi, q_conj, 1e-10).unwrap();
            assert!(
                cv.duality_gap.abs() <= 1e-6 * (1.0 + cv.j),
                "gap {} at q'={q_conj}",
                cv.duality_gap
            );
            assert!(cv.residual < 1e-7);
        }
    }

    #[test]
    fn kolmogorov_q3_two_sided_bound() {
        let (frame, a) = kolmogorov();
        let xi = DVector::from_row_slice(&[1.0, 0.0]);
        let q = 3.0f64;
        let q_conj = 1.5f64;
        let mut ratios = Vec::new();
        for t in [1.0, 0.5, 0.25, 0.125] {
            let cv = small_time_cost(&frame, &a, 0.0, t, &xi, q_conj, 1e-9).unwrap();
            let reference =
                t.powf(-q_conj / q) * (frame.scaling(1.0 / t) * &xi).norm().powf(q_conj);
            ratios.push(cv.j / reference);
        }
        let maxr = ratios.iter().cloned().fold(0.0f64, f64::max);
        let minr = ratios.iter().cloned().fold(f64::INFINITY, f64::min);
        assert!(maxr / minr < 10.0, "ratios {ratios:?}");
    }

    #[test]
    fn scaling_report_constant_ratio_for_top_stratum() {
        let (frame, a) = kolmogorov();
        let xi = DVector::from_row_slice(&[0.0, 1.0]);
        let report = cost_scaling_report(
            &frame,
            &a,
            2.0,
            &[0.0],
            &[1.0, 0.5, 0.25, 0.125],
            &[xi],
            1e3,
        )
        .unwrap();
        for row in &report.rows {
            assert_relative_eq!(row.ratio, 6.0, max_relative = 1e-6);
        }
        assert!(report.spread_ok);
        let empty = cost_scaling_report(&frame, &a, 2.0, &[0.0], &[], &[], 1e3).unwrap();
        assert!(empty.rows.is_empty());
    }

    #[test]
    fn extent_constants_stable_under_refinement() {
        let spec = kolmogorov_spec(2.0, 1.0, [0.0, 1.0]);
        let mut cs = Vec::new();
        for cells in [64usize, 256, 1024] {
            let (_, traj) = min_energy_cost(&spec, 1e-9, cells).unwrap();
            let rep = extent_report(&spec, &traj).unwrap();
            cs.push(rep.c_from_start.max(rep.c_toward_end));
        }
        for w in cs.windows(2) {
            assert!(
                (w[1] - w[0]).abs() <= 0.2 * w[0].abs().max(1e-12),
                "constants under refinement: {cs:?}"
            );
        }
    }

    #[test]
    fn extent_of_scaled_family_is_uniform() {
        let mut cs = Vec::new();
        for t in [1.0, 0.5, 0.25] {
            let spec = kolmogorov_spec(2.0, t, [0.0, 1.0]);
            let (_, traj) = min_energy_cost(&spec, 1e-9, 256).unwrap();
            let rep = extent_report(&spec, &traj).unwrap();
            cs.push(rep.c_from_start.max(rep.c_toward_end));
        }
        let maxc = cs.iter().cloned().fold(0.0f64, f64::max);
        let minc = cs.iter().cloned().fold(f64::INFINITY, f64::min);
        assert!(maxc / minc < 2.0, "constants across horizons: {cs:?}");
    }

    #[test]
    fn zero_control_extent_is_zero() {
        let (frame, a) = kolmogorov();
        let start = DVector::from_row_slice(&[0.2, 0.0]);
        let end = expm(&a) * &start;
        let spec = ControlProblemSpec::new(&frame, &a, 0.0, 2.0, (0.0, 1.0), start, end).unwrap();
        let (_, traj) = min_energy_cost(&spec, 1e-9, 64).unwrap();
        let rep = extent_report(&spec, &traj).unwrap();
        assert!(rep.control_norm < 1e-6);
    }

    #[test]
    fn fallback_agrees_with_gramian() {
        let (frame, a) = kolmogorov();
        let kernel = ReducedKernel::new(&frame, &a, 0.0, 1e-14);
        let mesh = QuadMesh::uniform(0.0, 1.0, 256);
        let zeta = DVector::from_row_slice(&[0.0, 1.0]);
        let opts = DualSolveOptions::default();
        let (p, res, _) = primal_fallback(&kernel, &mesh, &zeta, 2.0, &opts).unwrap();
        assert!(res < 1e-6, "fallback residual {res}");
        let ev = eval_dual(&kernel, &mesh, &p, 2.0, &zeta);
        let cost = ev.kq_integral / 2.0;
        assert_relative_eq!(cost, 6.0, max_relative = 1e-3);
    }

    #[test]
    fn no_convergence_carries_best_iterate() {
        let (frame, a) = kolmogorov();
        let kernel = ReducedKernel::new(&frame, &a, 0.0, 1e-14);
        let opts = DualSolveOptions {
            tol: 1e-15,
            max_newton: 1,
            fallback_iters: 1,
            base_cells: 16,
            ..Default::default()
        };
        let zeta = DVector::from_row_slice(&[0.3, 0.9]);
        match solve_unit(&kernel, &zeta, 3.0, &opts) {
            Err(Error::NoConvergence {
                best_multiplier, ..
            }) => assert_eq!(best_multiplier.len(), 2),
            Ok(sol) => assert!(sol.residual <= 1e-14),
            Err(e) => panic!("unexpected error {e}"),
        }
    }

    #[test]
    fn h_star_estimates_are_positive() {
        let (frame, a) = kolmogorov();
        let rep = estimate_h_star(&frame, &a, 2.0).unwrap();
        assert!(rep.empirical > 0.0);
        assert!(rep.formula > 0.0);
    }

    #[test]
    fn deep_chain_horizon_is_refused_as_ill_conditioned() {
        // The unit-interval Gramian of a depth-7 integrator chain is
        // numerically singular; the solver must refuse rather than return
        // garbage.
        let mut a = DMatrix::<f64>::zeros(8, 8);
        for i in 0..7 {
            a[(i + 1, i)] = 1.0;
        }
        let mut p0 = DMatrix::<f64>::zeros(8, 8);
        p0[(0, 0)] = 1.0;
        let frame = build_frame(&a, &p0).unwrap();
        let xi = DVector::from_fn(8, |i, _| if i == 7 { 1.0 } else { 0.0 });
        let err = reduced_unit_cost(&frame, &a, 0.0, &xi, 2.0, 1e-8).unwrap_err();
        assert!(matches!(err, Error::IllConditionedHorizon { .. }), "{err}");
    }

    #[test]
    fn reduced_cost_norm_equivalence_below_h_star() {
        // (1/C) |xi|^{q'} <= Jhat_h(xi) <= C |xi|^{q'} with one constant
        // over a unit-sphere sample, for h up to the admissible threshold.
        let (frame, a) = kolmogorov();
        let q_conj = 2.0;
        let h_star = estimate_h_star(&frame, &a, q_conj).unwrap().empirical;
        let mut rng = crate::sampling::substream(77, "jhat-equiv");
        let mut c_at = |h: f64| -> f64 {
            let mut worst = 1.0f64;
            for _ in 0..20 {
                let xi = crate::sampling::random_unit_vector(&mut rng, 2);
                let j = reduced_unit_cost(&frame, &a, h, &xi, q_conj, 1e-8)
                    .unwrap()
                    .j;
                worst = worst.max(j).max(1.0 / j);
            }
            worst
        };
        let c0 = c_at(0.0);
        let ch = c_at(h_star * 0.5);
        assert!(c0.is_finite() && ch.is_finite());
        assert!(ch <= 2.0 * c0, "equivalence constant doubled: {ch} vs {c0}");
    }
}
