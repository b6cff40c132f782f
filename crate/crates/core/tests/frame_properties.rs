//! Property runs over random controllable pairs: frame invariants, drift
//! rescaling bounds and the flow identity as exposed operations.

use hjlab::kalman::{
    build_frame, check_kalman_rank, flow_matrix, rescaled_drift, rescaled_drift_signed,
};
use hjlab::linalg::op_norm;
use hjlab::sampling::{random_controllable_pair, substream};
use nalgebra::DMatrix;
use rand::Rng;

/// All structural invariants hold (build_frame validates internally) and
/// the depth is the smallest K passing the rank check, for 1000 pairs.
#[test]
fn thousand_random_frames_are_valid_with_minimal_depth() {
    let mut rng = substream(31, "frame-props");
    for _ in 0..1000 {
        let pair = random_controllable_pair(&mut rng, 6, 3, 1.5);
        let frame = build_frame(&pair.a, &pair.p0).expect("controllable by construction");
        assert_eq!(frame.subspace_dims, pair.dims);
        assert!(check_kalman_rank(&pair.a, &pair.p0, frame.kappa).unwrap());
        if frame.kappa > 0 {
            assert!(!check_kalman_rank(&pair.a, &pair.p0, frame.kappa - 1).unwrap());
        }
    }
}

/// ||A_h - A_0|| <= C h on (0, 1] with the fitted constant nonincreasing
/// along the dyadic sweep, and the triangle-bound constant always valid.
#[test]
fn drift_rescaling_linear_bound() {
    let mut rng = substream(32, "drift-bound");
    for _ in 0..50 {
        let pair = random_controllable_pair(&mut rng, 5, 3, 1.3);
        let frame = build_frame(&pair.a, &pair.p0).unwrap();
        let a0 = frame.principal_part.clone();
        // Triangle bound sum_d || sum_{j-i=d} P_i A P_j ||.
        let mut c_triangle = 0.0f64;
        for d in 0..=frame.kappa {
            let mut m = DMatrix::<f64>::zeros(frame.dim, frame.dim);
            for j in d..=frame.kappa {
                m += &frame.projections[j - d] * &pair.a * &frame.projections[j];
            }
            c_triangle += op_norm(&m);
        }
        let mut prev = f64::INFINITY;
        let mut h = 1.0f64;
        for _ in 0..8 {
            let ah = rescaled_drift(&frame, &pair.a, h).unwrap();
            let ratio = op_norm(&(ah - &a0)) / h;
            assert!(
                ratio <= c_triangle * (1.0 + 1e-10),
                "linear bound violated: {ratio} > {c_triangle}"
            );
            assert!(ratio <= prev * (1.0 + 1e-6), "fit constant increased at h={h}");
            prev = ratio;
            h *= 0.5;
        }
    }
}

/// The principal part is invariant under its own rescaling:
/// h S(1/h) A_0 S(h) = A_0 for h in {0.1, 1, 10}.
#[test]
fn principal_part_is_scale_invariant() {
    let mut rng = substream(33, "a0-invariance");
    for _ in 0..25 {
        let pair = random_controllable_pair(&mut rng, 5, 3, 1.3);
        let frame = build_frame(&pair.a, &pair.p0).unwrap();
        let a0 = &frame.principal_part;
        for h in [0.1, 1.0, 10.0] {
            let conj = frame.scaling(1.0 / h) * a0 * frame.scaling(h) * h;
            assert!(
                op_norm(&(conj - a0)) <= 1e-12 * op_norm(a0).max(1.0),
                "A0 not scale invariant at h={h}"
            );
        }
        // Consistency with the signed block formula.
        let direct = rescaled_drift_signed(&frame, a0, 0.37);
        assert!(op_norm(&(direct - a0)) <= 1e-12 * op_norm(a0).max(1.0));
    }
}

/// flow_matrix cross-checks its two evaluation routes on random
/// controllable pairs with |h r| <= 1.
#[test]
fn flow_matrix_consistency_on_random_pairs() {
    let mut rng = substream(34, "flow-matrix");
    for _ in 0..100 {
        let pair = random_controllable_pair(&mut rng, 4, 3, 1.4);
        let frame = build_frame(&pair.a, &pair.p0).unwrap();
        let h: f64 = rng.gen();
        let mut r: f64 = 0.1 + 0.9 * rng.gen::<f64>();
        if h * r > 1.0 {
            r = 1.0 / h;
        }
        let tau: f64 = rng.gen();
        // Returns Ok only when both routes agree to 1e-8 relative.
        flow_matrix(&frame, &pair.a, r, tau, h).expect("flow identity");
    }
}
