//! Dense linear-algebra utilities: matrix exponential, numeric rank,
//! pseudo-inverse, operator norms and Gauss-Legendre quadrature.
//!
//! Matrices are small (N <= 12 at desk scale) and dense; everything here is
//! `nalgebra`-backed and generic over the scalar.

use nalgebra::{DMatrix, DVector};

use crate::scalar::{abs, cast, cast_usize, fmax, powi, sqrt, Real};

/// Pade(13) + scaling-and-squaring matrix exponential.
///
/// The classic dense algorithm: scale `m` by 2^-s until its 1-norm is below
/// the degree-13 threshold, evaluate the diagonal Pade approximant, square s
/// times. Accuracy is near machine precision for the desk-scale matrices
/// used here.
pub fn expm<T: Real>(m: &DMatrix<T>) -> DMatrix<T> {
    assert_eq!(m.nrows(), m.ncols(), "expm needs a square matrix");
    let n = m.nrows();
    let theta13: T = cast(5.371920351148152);

    let norm = one_norm(m);
    let mut s: i32 = 0;
    if norm > theta13 {
        let ratio: f64 = num_traits::ToPrimitive::to_f64(&(norm / theta13)).unwrap_or(1.0);
        s = ratio.log2().ceil() as i32;
        if s < 0 {
            s = 0;
        }
    }
    let a = m * powi(cast::<T>(0.5), s);

    // Pade(13) coefficients.
    const B: [f64; 14] = [
        64764752532480000.0,
        32382376266240000.0,
        7771770303897600.0,
        1187353796428800.0,
        129060195264000.0,
        10559470521600.0,
        670442572800.0,
        33522128640.0,
        1323241920.0,
        40840800.0,
        960960.0,
        16380.0,
        182.0,
        1.0,
    ];
    let b: Vec<T> = B.iter().map(|&c| cast(c)).collect();

    let ident = DMatrix::<T>::identity(n, n);
    let a2 = &a * &a;
    let a4 = &a2 * &a2;
    let a6 = &a2 * &a4;

    let u_inner = &a6 * (&a6 * b[13] + &a4 * b[11] + &a2 * b[9])
        + &a6 * b[7]
        + &a4 * b[5]
        + &a2 * b[3]
        + &ident * b[1];
    let u = &a * u_inner;
    let v = &a6 * (&a6 * b[12] + &a4 * b[10] + &a2 * b[8])
        + &a6 * b[6]
        + &a4 * b[4]
        + &a2 * b[2]
        + &ident * b[0];

    let denom = &v - &u;
    let numer = &v + &u;
    let mut result = denom
        .lu()
        .solve(&numer)
        .expect("Pade denominator must be invertible");

    for _ in 0..s {
        result = &result * &result;
    }
    result
}

/// Entrywise 1-norm (maximum absolute column sum).
pub fn one_norm<T: Real>(m: &DMatrix<T>) -> T {
    let mut best = T::zero();
    for j in 0..m.ncols() {
        let mut s = T::zero();
        for i in 0..m.nrows() {
            s = s + abs(m[(i, j)]);
        }
        best = fmax(best, s);
    }
    best
}

/// Operator 2-norm via SVD.
pub fn op_norm<T: Real>(m: &DMatrix<T>) -> T {
    if m.is_empty() {
        return T::zero();
    }
    let sv = m.clone().singular_values();
    sv.iter().cloned().fold(T::zero(), fmax)
}

/// Frobenius norm.
pub fn fro_norm<T: Real>(m: &DMatrix<T>) -> T {
    let mut s = T::zero();
    for v in m.iter() {
        s = s + *v * *v;
    }
    sqrt(s)
}

/// Singular values in non-increasing order.
pub fn singular_values<T: Real>(m: &DMatrix<T>) -> Vec<T> {
    let mut sv: Vec<T> = m.clone().singular_values().iter().cloned().collect();
    sv.sort_by(|a, b| b.partial_cmp(a).unwrap());
    sv
}

/// Numeric rank with a relative singular-value threshold.
///
/// Returns `(rank, sigma)` where `sigma` are the sorted singular values and
/// the rank counts values above `rel_tol * sigma_max`.
pub fn numeric_rank<T: Real>(m: &DMatrix<T>, rel_tol: T) -> (usize, Vec<T>) {
    let sv = singular_values(m);
    if sv.is_empty() {
        return (0, sv);
    }
    let cutoff = sv[0] * rel_tol;
    let rank = sv.iter().filter(|&&s| s > cutoff).count();
    (rank, sv)
}

/// Moore-Penrose pseudo-inverse with singular values below
/// `rel_tol * sigma_max` treated as zero.
pub fn pinv<T: Real>(m: &DMatrix<T>, rel_tol: T) -> DMatrix<T> {
    let svd = m.clone().svd(true, true);
    let eps = svd.singular_values.iter().cloned().fold(T::zero(), fmax) * rel_tol;
    svd.pseudo_inverse(eps).expect("svd computed with U and V")
}

/// Solve the SPD system `m x = rhs` by Cholesky, retrying with a ridge when
/// the factorization fails because of near-singularity.
pub fn solve_spd<T: Real>(m: &DMatrix<T>, rhs: &DVector<T>) -> Option<DVector<T>> {
    if let Some(chol) = m.clone().cholesky() {
        return Some(chol.solve(rhs));
    }
    let n = m.nrows();
    let scale = one_norm(m);
    let mut ridge = fmax(scale, T::one()) * cast(1e-14);
    for _ in 0..8 {
        let reg = m + DMatrix::<T>::identity(n, n) * ridge;
        if let Some(chol) = reg.cholesky() {
            return Some(chol.solve(rhs));
        }
        ridge = ridge * cast(100.0);
    }
    None
}

/// 2-norm condition number from singular values; `None` for a singular matrix.
pub fn condition_number<T: Real>(m: &DMatrix<T>) -> Option<T> {
    let sv = singular_values(m);
    let smin = *sv.last()?;
    if smin == T::zero() {
        None
    } else {
        Some(sv[0] / smin)
    }
}

/// Nodes and weights of the 8-point Gauss-Legendre rule on [-1, 1].
const GL8_NODES: [f64; 8] = [
    -0.9602898564975363,
    -0.7966664774136267,
    -0.5255324099163290,
    -0.1834346424956498,
    0.1834346424956498,
    0.5255324099163290,
    0.7966664774136267,
    0.9602898564975363,
];
const GL8_WEIGHTS: [f64; 8] = [
    0.1012285362903763,
    0.2223810344533745,
    0.3137066458778873,
    0.3626837833783620,
    0.3626837833783620,
    0.3137066458778873,
    0.2223810344533745,
    0.1012285362903763,
];

/// Quadrature mesh: a list of cells, each carrying 8 Gauss-Legendre nodes.
#[derive(Debug, Clone)]
pub struct QuadMesh<T> {
    /// Cell boundaries, strictly increasing.
    pub breaks: Vec<T>,
    /// Flattened nodes (8 per cell).
    pub nodes: Vec<T>,
    /// Matching weights.
    pub weights: Vec<T>,
}

impl<T: Real> QuadMesh<T> {
    /// Uniform mesh of `cells` cells on `[a, b]`.
    pub fn uniform(a: T, b: T, cells: usize) -> Self {
        assert!(cells > 0 && b > a);
        let step = (b - a) / cast_usize(cells);
        let breaks: Vec<T> = (0..=cells).map(|k| a + step * cast_usize(k)).collect();
        Self::from_breaks(breaks)
    }

    /// Mesh on `[a, b]` refined geometrically (ratio 1/2) toward one or both
    /// endpoints, with `base` uniform cells in the interior.
    pub fn graded(a: T, b: T, base: usize, levels: usize, toward_a: bool, toward_b: bool) -> Self {
        assert!(b > a);
        let len = b - a;
        let half = cast::<T>(0.5);
        // Geometric offsets 2^-levels, ..., 2^-1 of a fraction of the span.
        let frac = cast::<T>(0.25);
        let mut breaks: Vec<T> = Vec::new();
        breaks.push(a);
        if toward_a {
            let mut d = frac * powi(half, levels as i32);
            while d < frac {
                breaks.push(a + len * d);
                d = d + d;
            }
        }
        let inner_a = if toward_a { a + len * frac } else { a };
        let inner_b = if toward_b { b - len * frac } else { b };
        let step = (inner_b - inner_a) / cast_usize(base.max(1));
        for k in 0..=base.max(1) {
            let x = inner_a + step * cast_usize(k);
            if x > *breaks.last().unwrap() {
                breaks.push(x);
            }
        }
        if toward_b {
            let mut offs: Vec<T> = Vec::new();
            let mut d = frac * powi(half, levels as i32);
            while d < frac {
                offs.push(d);
                d = d + d;
            }
            for &d in offs.iter().rev() {
                breaks.push(b - len * d);
            }
        }
        if *breaks.last().unwrap() < b {
            breaks.push(b);
        }
        Self::from_breaks(breaks)
    }

    /// Build the node/weight table from explicit cell boundaries.
    pub fn from_breaks(breaks: Vec<T>) -> Self {
        let mut nodes = Vec::with_capacity(8 * (breaks.len() - 1));
        let mut weights = Vec::with_capacity(8 * (breaks.len() - 1));
        let half = cast::<T>(0.5);
        for w in breaks.windows(2) {
            let (lo, hi) = (w[0], w[1]);
            let mid = (lo + hi) * half;
            let rad = (hi - lo) * half;
            for k in 0..8 {
                nodes.push(mid + rad * cast::<T>(GL8_NODES[k]));
                weights.push(rad * cast::<T>(GL8_WEIGHTS[k]));
            }
        }
        QuadMesh {
            breaks,
            nodes,
            weights,
        }
    }

    /// Insert a two-sided geometric refinement fan around `center`.
    pub fn refine_around(&self, center: T, levels: usize) -> Self {
        let a = self.breaks[0];
        let b = *self.breaks.last().unwrap();
        if center <= a || center >= b {
            return self.clone();
        }
        let scale = {
            // local cell width at the insertion point
            let mut w = b - a;
            for win in self.breaks.windows(2) {
                if center >= win[0] && center <= win[1] {
                    w = win[1] - win[0];
                    break;
                }
            }
            w
        };
        let half = cast::<T>(0.5);
        let mut extra: Vec<T> = Vec::new();
        let mut d = scale * powi(half, levels as i32);
        while d < scale {
            if center - d > a {
                extra.push(center - d);
            }
            if center + d < b {
                extra.push(center + d);
            }
            d = d + d;
        }
        extra.push(center);
        let mut breaks = self.breaks.clone();
        breaks.extend(extra);
        breaks.sort_by(|x, y| x.partial_cmp(y).unwrap());
        breaks.dedup_by(|x, y| abs(*x - *y) < cast(1e-300));
        Self::from_breaks(breaks)
    }

    /// Integrate a scalar function over the mesh.
    pub fn integrate<F: FnMut(T) -> T>(&self, mut f: F) -> T {
        let mut acc = T::zero();
        for (x, w) in self.nodes.iter().zip(self.weights.iter()) {
            acc = acc + f(*x) * *w;
        }
        acc
    }
}

/// Ordinary least squares fit of `y = slope * x + intercept`.
///
/// Returns `(slope, intercept, slope_stderr)`.
pub fn ols_line<T: Real>(xs: &[T], ys: &[T]) -> (T, T, T) {
    assert_eq!(xs.len(), ys.len());
    let n = cast_usize::<T>(xs.len());
    assert!(xs.len() >= 2, "need at least two points for a line fit");
    let mean = |v: &[T]| v.iter().fold(T::zero(), |a, &b| a + b) / n;
    let mx = mean(xs);
    let my = mean(ys);
    let mut sxx = T::zero();
    let mut sxy = T::zero();
    for (&x, &y) in xs.iter().zip(ys) {
        sxx = sxx + (x - mx) * (x - mx);
        sxy = sxy + (x - mx) * (y - my);
    }
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let mut sse = T::zero();
    for (&x, &y) in xs.iter().zip(ys) {
        let r = y - (slope * x + intercept);
        sse = sse + r * r;
    }
    let dof = if xs.len() > 2 {
        cast_usize::<T>(xs.len() - 2)
    } else {
        T::one()
    };
    let stderr = sqrt(sse / dof / sxx);
    (slope, intercept, stderr)
}
