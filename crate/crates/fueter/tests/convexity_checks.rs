//! Property tests for the Hermitian curvature forms: linearity in the
//! Hessian, the constant-multiple collapse for the squared norm, positivity
//! of convex reparameterization gaps for arbitrary polynomial weights, and
//! scale-invariance of the ball's boundary data.

use fueter::convexity::{
    chain_rule_gap, is_k_pseudoconvex, levi_matrix, levi_of_hessian, Chi,
};
use fueter::fields::{DomainSpec, FieldScalar, PolyScalar, Weight};
use fueter::C64;
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn sym_hessian() -> impl Strategy<Value = [[f64; 4]; 4]> {
    prop::collection::vec(-2.0f64..2.0, 10).prop_map(|v| {
        let mut h = [[0.0; 4]; 4];
        let mut it = v.into_iter();
        for i in 0..4 {
            for j in i..4 {
                let val = it.next().unwrap();
                h[i][j] = val;
                h[j][i] = val;
            }
        }
        h
    })
}

fn ball_interior_point() -> impl Strategy<Value = [f64; 4]> {
    prop::array::uniform4(-0.45f64..0.45)
}

fn xi_vec(k: usize) -> impl Strategy<Value = Vec<C64>> {
    prop::collection::vec((-1.0f64..1.0, -1.0f64..1.0), 2 * k)
        .prop_map(|v| v.into_iter().map(|(re, im)| C64::new(re, im)).collect())
}

/// Real polynomial of total degree <= 3 with small integer coefficients.
fn weight_poly() -> impl Strategy<Value = PolyScalar> {
    prop::collection::vec((0u8..=3, 0u8..=3, 0u8..=3, 0u8..=3, -3i32..=3), 1..6).prop_map(
        |terms| {
            let mut p = PolyScalar::zero();
            for (e1, e2, e3, e4, c) in terms {
                let mut e = [e1, e2, e3, e4];
                while e.iter().map(|&x| x as usize).sum::<usize>() > 3 {
                    let i = (0..4).max_by_key(|&i| e[i]).unwrap();
                    e[i] -= 1;
                }
                p = p.add(&PolyScalar::monomial(e, C64::new(c as f64, 0.0)));
            }
            p
        },
    )
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    /// The form is linear in the Hessian.
    #[test]
    fn form_is_linear_in_the_hessian(
        (k, h1, h2, xi) in (2usize..=5).prop_flat_map(|k| {
            (Just(k), sym_hessian(), sym_hessian(), xi_vec(k))
        }),
        s in -2.0f64..2.0,
    ) {
        let mut sum = [[0.0; 4]; 4];
        for i in 0..4 {
            for j in 0..4 {
                sum[i][j] = h1[i][j] + s * h2[i][j];
            }
        }
        let lhs = levi_of_hessian(k, &sum).value(&xi);
        let rhs = levi_of_hessian(k, &h1).value(&xi)
            + s * levi_of_hessian(k, &h2).value(&xi);
        let scale = lhs.abs().max(rhs.abs()).max(1.0);
        prop_assert!((lhs - rhs).abs() <= 1e-11 * scale);
    }

    /// The squared-norm weight collapses to a constant multiple of the
    /// metric: every weighted eigenvalue equals (4k+4) kappa everywhere.
    #[test]
    fn squared_norm_weight_is_isotropic(
        k in 2usize..=5,
        kappa in 0.01f64..2.0,
        x in ball_interior_point(),
    ) {
        let w = Weight::sqnorm(kappa);
        let want = (4 * k + 4) as f64 * kappa;
        for lam in levi_matrix(&w, &x, k).weighted_eigenvalues() {
            prop_assert!((lam - want).abs() <= 1e-9 * want.max(1.0));
        }
    }

    /// Composing any polynomial weight with a convex increasing function
    /// can only add curvature: the gap form is positive semidefinite.
    #[test]
    fn reparameterization_gap_is_psd(
        phi in weight_poly(),
        k in 2usize..=4,
        x in ball_interior_point(),
        chi_idx in 0usize..4,
    ) {
        let catalog = [
            Chi::Square,
            Chi::Exp,
            Chi::Softplus,
            Chi::Quadratic { lin: 1.0, quad: 0.5 },
        ];
        let w = Weight::poly(phi, 1.0).unwrap();
        let gap = chain_rule_gap(&w, catalog[chi_idx], &x, k).unwrap();
        prop_assert!(gap.weighted_min_eig() >= -1e-9);
    }

    /// Strict pseudoconvexity of the ball is scale invariant: at any radius
    /// the constrained minimum eigenvalue of the normalized boundary data
    /// is (2k+2)/R.
    #[test]
    fn ball_boundary_minimum_scales(k in 2usize..=4, radius in 0.5f64..3.0, seed in 0u64..1000) {
        let ball = DomainSpec::Ball { radius };
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let samples: Vec<[f64; 4]> = ball
            .boundary_samples(10, &mut rng)
            .into_iter()
            .map(|(x, _)| x)
            .collect();
        let want = (2 * k + 2) as f64 / radius;
        let rep = is_k_pseudoconvex(&ball, &samples, k, want - 1e-6).unwrap();
        prop_assert!(rep.pass, "min {} want {}", rep.min_constrained_eig, want);
        prop_assert_eq!(rep.degenerate_samples, 0);
        prop_assert!((rep.min_constrained_eig - want).abs() <= 1e-6 * want);
    }
}
