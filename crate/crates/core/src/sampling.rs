//! Deterministic random generators for experiments and tests.
//!
//! All randomness in the crate flows through seeded ChaCha streams; each
//! consumer derives a substream from a fixed label so that runs are
//! reproducible byte-for-byte.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::scalar::{cast, Real};

/// Derive a deterministic substream from a base seed and a label.
pub fn substream(seed: u64, label: &str) -> ChaCha8Rng {
    let mut h: u64 = 0xcbf29ce484222325;
    for b in label.bytes() {
        h ^= b as u64;
        h = h.wrapping_mul(0x100000001b3);
    }
    ChaCha8Rng::seed_from_u64(seed ^ h)
}

/// Standard-normal-ish sample via sum of uniforms (Irwin-Hall, 12 terms).
fn gaussish(rng: &mut ChaCha8Rng) -> f64 {
    let s: f64 = (0..12).map(|_| rng.gen::<f64>()).sum();
    s - 6.0
}

/// Dense matrix with independent approximately-normal entries.
pub fn random_matrix(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> DMatrix<f64> {
    DMatrix::from_fn(rows, cols, |_, _| gaussish(rng))
}

/// Random orthogonal matrix from the QR factorization of a Gaussian matrix.
pub fn random_orthogonal(rng: &mut ChaCha8Rng, n: usize) -> DMatrix<f64> {
    let m = random_matrix(rng, n, n);
    let qr = m.qr();
    let mut q = qr.q();
    let r = qr.r();
    // Fix the sign convention so the distribution is Haar-like and the
    // output is deterministic.
    for j in 0..n {
        if r[(j, j)] < 0.0 {
            let col = -q.column(j);
            q.set_column(j, &col);
        }
    }
    q
}

/// Unit vector, uniformly distributed on the sphere.
pub fn random_unit_vector(rng: &mut ChaCha8Rng, n: usize) -> DVector<f64> {
    loop {
        let v = DVector::from_fn(n, |_, _| gaussish(rng));
        let norm = v.norm();
        if norm > 1e-6 {
            return v / norm;
        }
    }
}

/// A random controllable pair `(A, P0)` with prescribed stratification.
///
/// The matrix is assembled in block form with full-rank upper off-diagonal
/// blocks (singular values bounded away from zero), then conjugated by a
/// random orthogonal change of basis so the adapted frame is nontrivial.
/// The drift is rescaled to operator norm about `target_norm`.
pub struct ControllablePair {
    pub a: DMatrix<f64>,
    pub p0: DMatrix<f64>,
    /// Stratum dimensions used to assemble the pair.
    pub dims: Vec<usize>,
}

pub fn random_controllable_pair(
    rng: &mut ChaCha8Rng,
    max_dim: usize,
    max_kappa: usize,
    target_norm: f64,
) -> ControllablePair {
    assert!(max_dim >= 1);
    loop {
        let kappa = rng.gen_range(0..=max_kappa.min(max_dim - 1));
        // Nonincreasing stratum dimensions n_0 >= n_1 >= ... >= n_kappa >= 1.
        let mut dims = Vec::with_capacity(kappa + 1);
        let mut prev = rng.gen_range(1..=max_dim.saturating_sub(kappa).max(1));
        dims.push(prev);
        for _ in 1..=kappa {
            let nj = rng.gen_range(1..=prev);
            dims.push(nj);
            prev = nj;
        }
        let n: usize = dims.iter().sum();
        if n > max_dim {
            continue;
        }
        if kappa > 0 && dims[0] == n {
            continue;
        }

        let offsets: Vec<usize> = dims
            .iter()
            .scan(0usize, |acc, &d| {
                let o = *acc;
                *acc += d;
                Some(o)
            })
            .collect();

        let mut a = DMatrix::<f64>::zeros(n, n);
        for j in 0..=kappa {
            for i in 0..=kappa.min(j + 1) {
                let block = if i == j + 1 {
                    // Full-rank block with singular values in [0.5, 1.5].
                    let raw = random_matrix(rng, dims[i], dims[j]);
                    let svd = raw.svd(true, true);
                    let u = svd.u.unwrap();
                    let vt = svd.v_t.unwrap();
                    let k = dims[i].min(dims[j]);
                    let mut s = DMatrix::<f64>::zeros(k, k);
                    for idx in 0..k {
                        s[(idx, idx)] = 0.5 + rng.gen::<f64>();
                    }
                    u * s * vt
                } else {
                    random_matrix(rng, dims[i], dims[j]) * 0.4
                };
                for (bi, gi) in (offsets[i]..offsets[i] + dims[i]).enumerate() {
                    for (bj, gj) in (offsets[j]..offsets[j] + dims[j]).enumerate() {
                        a[(gi, gj)] = block[(bi, bj)];
                    }
                }
            }
        }

        let mut p0 = DMatrix::<f64>::zeros(n, n);
        for k in 0..dims[0] {
            p0[(k, k)] = 1.0;
        }

        let rot = random_orthogonal(rng, n);
        let a_rot = &rot * a * rot.transpose();
        let p0_rot = &rot * p0 * rot.transpose();
        // Symmetrize against rounding so the projection check passes exactly.
        let p0_rot = (&p0_rot + p0_rot.transpose()) * 0.5;

        let norm = crate::linalg::op_norm(&a_rot);
        let a_final = if norm > 0.0 {
            a_rot * (target_norm / norm)
        } else {
            a_rot
        };
        return ControllablePair {
            a: a_final,
            p0: p0_rot,
            dims,
        };
    }
}

/// Convert an f64 matrix into the working scalar type.
pub fn matrix_to_scalar<T: Real>(m: &DMatrix<f64>) -> DMatrix<T> {
    m.map(|v| cast::<T>(v))
}

/// Convert an f64 vector into the working scalar type.
pub fn vector_to_scalar<T: Real>(v: &DVector<f64>) -> DVector<T> {
    v.map(|x| cast::<T>(x))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kalman::{build_frame, check_kalman_rank};

    #[test]
    fn substreams_are_reproducible_and_distinct() {
        let mut a = substream(7, "alpha");
        let mut b = substream(7, "alpha");
        let mut c = substream(7, "beta");
        let xa: f64 = a.gen();
        let xb: f64 = b.gen();
        let xc: f64 = c.gen();
        assert_eq!(xa, xb);
        assert_ne!(xa, xc);
    }

    #[test]
    fn random_pairs_are_controllable_with_expected_depth() {
        let mut rng = substream(42, "pair-test");
        for _ in 0..50 {
            let pair = random_controllable_pair(&mut rng, 6, 3, 1.5);
            let frame = build_frame(&pair.a, &pair.p0).expect("controllable by construction");
            assert_eq!(frame.subspace_dims, pair.dims);
            assert!(check_kalman_rank(&pair.a, &pair.p0, frame.kappa).unwrap());
            if frame.kappa > 0 {
                assert!(!check_kalman_rank(&pair.a, &pair.p0, frame.kappa - 1).unwrap());
            }
        }
    }

    #[test]
    fn random_orthogonal_is_orthogonal() {
        let mut rng = substream(1, "orth");
        let q = random_orthogonal(&mut rng, 5);
        let qtq = q.transpose() * &q;
        assert!(crate::linalg::op_norm(&(qtq - DMatrix::<f64>::identity(5, 5))) < 1e-12);
    }
}
