//! Property tests for the exact polynomial-field operator algebra. With
//! integer coefficients every f64 operation below is exact, so the algebraic
//! identities are required to hold bit-exactly (residual coefficients equal
//! to zero), not merely to rounding.

use fueter::fields::{FieldScalar, PolyScalar, Weight};
use fueter::operators::{
    apply_d0, apply_d1, DeltaOperator, FieldKind, SpinorField, VectorFieldTable,
};
use fueter::C64;
use proptest::prelude::*;

/// Random polynomial with small integer coefficients and total degree <= `deg`.
fn int_poly(deg: u8) -> impl Strategy<Value = PolyScalar> {
    prop::collection::vec(
        (
            0u8..=deg,
            0u8..=deg,
            0u8..=deg,
            0u8..=deg,
            -4i32..=4i32,
            -4i32..=4i32,
        ),
        1..6,
    )
    .prop_map(move |terms| {
        let mut p = PolyScalar::zero();
        for (e1, e2, e3, e4, re, im) in terms {
            let mut e = [e1, e2, e3, e4];
            // trim the exponent vector until the total degree fits
            while e.iter().map(|&x| x as usize).sum::<usize>() > deg as usize {
                let i = (0..4).max_by_key(|&i| e[i]).unwrap();
                e[i] -= 1;
            }
            p = p.add(&PolyScalar::monomial(e, C64::new(re as f64, im as f64)));
        }
        p
    })
}

/// Real-coefficient variant.
fn int_poly_real(deg: u8) -> impl Strategy<Value = PolyScalar> {
    int_poly(deg).prop_map(|p| {
        let mut q = PolyScalar::zero();
        for (e, c) in p.terms() {
            q = q.add(&PolyScalar::monomial(*e, C64::new(c.re, 0.0)));
        }
        q
    })
}

fn sym_field(k: usize, deg: u8) -> impl Strategy<Value = SpinorField<PolyScalar>> {
    prop::collection::vec(int_poly(deg), k + 1)
        .prop_map(move |comps| SpinorField::new(FieldKind::Sym(k), comps))
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    /// The second operator annihilates the image of the first, for every k,
    /// coefficient by coefficient.
    #[test]
    fn composed_operator_vanishes(u in (2usize..=6).prop_flat_map(|k| sym_field(k, 3))) {
        let v = VectorFieldTable::standard();
        let g = apply_d1(&apply_d0(&u, &v), &v);
        for p in g.comps() {
            prop_assert_eq!(p.norm_max(), 0.0);
        }
    }

    /// Both operators are complex-linear with exact integer scalars.
    #[test]
    fn operators_are_linear(
        u in sym_field(2, 3),
        w in sym_field(2, 3),
        sr in -3i32..=3,
        si in -3i32..=3,
    ) {
        let v = VectorFieldTable::standard();
        let s = C64::new(sr as f64, si as f64);
        let lhs = apply_d0(&u.scale(s).add(&w), &v);
        let rhs = apply_d0(&u, &v).scale(s).add(&apply_d0(&w, &v));
        prop_assert_eq!(lhs.sub(&rhs).norm_max(), 0.0);

        let f = apply_d0(&u, &v);
        let g = apply_d0(&w, &v);
        let lhs = apply_d1(&f.scale(s).add(&g), &v);
        let rhs = apply_d1(&f, &v).scale(s).add(&apply_d1(&g, &v));
        prop_assert_eq!(lhs.sub(&rhs).norm_max(), 0.0);
    }

    /// Conjugating a mixed-index derivative of a real polynomial equals
    /// minus the raised-index derivative.
    #[test]
    fn conjugation_swaps_the_tables(f in int_poly_real(4)) {
        let v = VectorFieldTable::standard();
        for a in 0..2 {
            for ap in 0..2 {
                let defect = v
                    .apply_mixed(a, ap, &f)
                    .conj()
                    .add(&v.apply_raised(a, ap, &f));
                prop_assert_eq!(defect.norm_max(), 0.0);
            }
        }
    }

    /// The commutator of a derivative with the weighted delta is exactly
    /// multiplication by the second derivative of the weight.
    #[test]
    fn weighted_commutator_is_a_multiplier(
        phi in int_poly_real(3),
        a_poly in int_poly(3),
    ) {
        let v = VectorFieldTable::standard();
        let w = Weight::poly(phi, 1.0).unwrap();
        let phi_poly = w.to_poly();
        let dop = DeltaOperator::from_weight(&v, &w);
        for b in 0..2 {
            for ap in 0..2 {
                for a in 0..2 {
                    for bp in 0..2 {
                        let t1 = v.apply_mixed(b, ap, &dop.delta(&v, a, bp, &a_poly));
                        let t2 = dop.delta(&v, a, bp, &v.apply_mixed(b, ap, &a_poly));
                        let corr = v
                            .apply_mixed(b, ap, &v.apply_raised(a, bp, &phi_poly))
                            .mul_field(&a_poly);
                        let resid = t1.sub(&t2).add(&corr);
                        prop_assert_eq!(resid.norm_max(), 0.0);
                    }
                }
            }
        }
    }

    /// The unweighted delta is just the raised-index derivative.
    #[test]
    fn unweighted_delta_is_the_raised_derivative(f in int_poly(4)) {
        let v = VectorFieldTable::standard();
        let dop = DeltaOperator::unweighted();
        for a in 0..2 {
            for ap in 0..2 {
                let lhs = dop.delta(&v, a, ap, &f);
                let rhs = v.apply_raised(a, ap, &f);
                prop_assert_eq!(lhs.sub(&rhs).norm_max(), 0.0);
            }
        }
    }
}
