//! Algebraic properties of canonical expressions and substitutions.

use std::collections::BTreeMap;

use itslb::arith::{apply, compose, int, maps_to_int, rat, Expr, Rat, Subst, Var};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};

const VARS: [&str; 3] = ["x", "y", "z"];

fn arb_expr() -> impl Strategy<Value = Expr> {
    let leaf = prop_oneof![
        (-4i64..=4, 1i64..=3).prop_map(|(n, d)| Expr::rat(n, d)),
        (0usize..3).prop_map(|i| Expr::var(VARS[i])),
    ];
    leaf.prop_recursive(3, 16, 2, |inner| {
        prop_oneof![
            (inner.clone(), inner.clone()).prop_map(|(a, b)| &a + &b),
            (inner.clone(), inner.clone()).prop_map(|(a, b)| &a - &b),
            (inner.clone(), inner).prop_map(|(a, b)| &a * &b),
        ]
    })
}

fn arb_subst() -> impl Strategy<Value = Subst> {
    proptest::collection::vec(arb_expr(), 3).prop_map(|es| {
        VARS.iter().map(|v| Var::new(*v)).zip(es).collect()
    })
}

fn arb_val() -> impl Strategy<Value = BTreeMap<Var, Rat>> {
    proptest::collection::vec(-6i64..=6, 3)
        .prop_map(|vs| VARS.iter().map(|v| Var::new(*v)).zip(vs.into_iter().map(int)).collect())
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn printing_round_trips(e in arb_expr()) {
        prop_assert_eq!(Expr::parse(&e.to_string()).unwrap(), e);
    }

    #[test]
    fn canonical_form_is_idempotent(e in arb_expr()) {
        let again = &(&e + &Expr::zero()) * &Expr::one();
        prop_assert_eq!(again, e);
    }

    #[test]
    fn substitution_is_a_homomorphism(a in arb_expr(), b in arb_expr(), s in arb_subst()) {
        prop_assert_eq!(apply(&(&a + &b), &s), &apply(&a, &s) + &apply(&b, &s));
        prop_assert_eq!(apply(&(&a * &b), &s), &apply(&a, &s) * &apply(&b, &s));
    }

    #[test]
    fn composition_law(e in arb_expr(), s1 in arb_subst(), s2 in arb_subst()) {
        prop_assert_eq!(apply(&e, &compose(&s1, &s2)), apply(&apply(&e, &s1), &s2));
    }

    #[test]
    fn evaluation_agrees_with_substitution(e in arb_expr(), v in arb_val()) {
        let s: Subst = v.iter().map(|(k, x)| (k.clone(), Expr::constant(x.clone()))).collect();
        prop_assert_eq!(apply(&e, &s).as_constant().unwrap(), e.eval(&v).unwrap());
    }
}

/// 500 random polynomials: whenever `maps_to_int` accepts, random integer
/// points evaluate to integers; whenever it rejects, some grid point is non-integral.
#[test]
fn maps_to_int_random_cross_validation() {
    let mut rng = rand::rngs::StdRng::seed_from_u64(7);
    let x = Expr::var("x");
    let y = Expr::var("y");
    for _ in 0..500 {
        let mut p = Expr::zero();
        for (i, j) in [(0u32, 0u32), (1, 0), (0, 1), (2, 0), (1, 1), (0, 2), (3, 0)] {
            let c = rat(rng.gen_range(-6..=6), rng.gen_range(1..=6));
            p = &p + &(&x.pow_u32(i) * &y.pow_u32(j)).scale(&c);
        }
        let accepted = maps_to_int(&p).unwrap();
        if accepted {
            for _ in 0..20 {
                let v: BTreeMap<Var, Rat> = [
                    (Var::new("x"), int(rng.gen_range(-50..=50))),
                    (Var::new("y"), int(rng.gen_range(-50..=50))),
                ]
                .into_iter()
                .collect();
                assert!(p.eval(&v).unwrap().is_integer(), "{p}");
            }
        } else {
            let mut found = false;
            for a in 0..=4 {
                for b in 0..=4 {
                    let v: BTreeMap<Var, Rat> = [(Var::new("x"), int(a)), (Var::new("y"), int(b))]
                        .into_iter()
                        .collect();
                    found |= !p.eval(&v).unwrap().is_integer();
                }
            }
            assert!(found, "{p}");
        }
    }
}

#[test]
fn maps_to_int_known_cases() {
    let tri = Expr::parse("1/2*x^2 + 1/2*x").unwrap();
    assert!(maps_to_int(&tri).unwrap());
    // the grid {0,…,3} evaluates to integers
    for k in 0..=3 {
        let v = [(Var::new("x"), int(k))].into_iter().collect();
        assert!(tri.eval(&v).unwrap().is_integer());
    }
    assert!(!maps_to_int(&Expr::parse("1/2*x").unwrap()).unwrap());
}
