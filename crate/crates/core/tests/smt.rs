//! Satisfiability and validity examples, plus model soundness properties.

use itslb::arith::{Constraint, Expr, Guard, Var};
use itslb::smt::{Formula, Smt, SmtOutcome, Validity};
use proptest::prelude::*;

fn e(s: &str) -> Expr {
    Expr::parse(s).unwrap()
}

#[test]
fn sqrt_encoding_is_unsat() {
    // −m_y² = 0 ∧ m_x − 2·m_y·k_y = 0 ∧ k_x − k_y² > 0 ∧ m_y > 0
    let f = Formula::and([
        Formula::eq0(e("-m_y^2")),
        Formula::eq0(e("m_x - 2*m_y*k_y")),
        Formula::gt(e("k_x - k_y^2")),
        Formula::gt(e("m_y")),
    ]);
    assert_eq!(Smt::builtin().check_sat(&f), SmtOutcome::Unsat);
}

#[test]
fn quadratic_cost_encoding_has_unit_model() {
    let a2 = e("1/2*m_x^2");
    let a1 = e("m_x*k_x + 1/2*m_x");
    let f = Formula::or([
        Formula::gt(a2.clone()),
        Formula::and([Formula::gt(a1), Formula::eq0(a2)]),
    ]);
    let out = Smt::builtin().check_sat(&f);
    let m = out.model().expect("sat");
    assert!(f.eval(m).unwrap());
    assert_eq!(m[&Var::new("m_x")], itslb::arith::int(1));
    assert_eq!(m[&Var::new("k_x")], itslb::arith::int(0));
}

#[test]
fn opposite_bounds_unsat() {
    let f = Formula::and([Formula::gt(e("x")), Formula::gt(e("-x"))]);
    assert!(Smt::builtin().check_sat(&f).is_unsat());
}

#[test]
fn validity_examples() {
    let smt = Smt::builtin();
    let f = Formula::implies(Formula::gt(e("x")), Formula::ge(e("0")));
    assert_eq!(smt.is_valid(&f), Validity::Valid);
    // ¬(x>0 ∧ y+z=1) ⟹ x ≤ 0 is not valid.
    let prem = Formula::not(Formula::and([Formula::gt(e("x")), Formula::eq0(e("y + z - 1"))]));
    let f = Formula::implies(prem, Formula::ge(e("-x")));
    match smt.is_valid(&f) {
        Validity::Invalid(m) => assert!(!f.eval(&m).unwrap()),
        v => panic!("expected invalid, got {v:?}"),
    }
    assert_eq!(smt.is_valid(&Formula::implies(Formula::True, Formula::True)), Validity::Valid);
}

#[test]
fn guard_implication_with_integer_tightening() {
    // 0 < tv < x + 1 implies x > 0 over the integers.
    let g = Guard::from_constraints([Constraint::gt(e("tv")), Constraint::gt(e("x + 1 - tv"))]);
    assert!(Smt::builtin().implies(&g, &Constraint::gt(e("x"))));
    assert!(!Smt::builtin().implies(&g, &Constraint::gt(e("x - 1"))));
}

#[test]
fn exponential_atoms_are_abstracted_soundly() {
    let smt = Smt::builtin();
    // 2^x > 0 ∧ -2^x >= 0 is unsat under positivity of exponentials.
    let f = Formula::and([Formula::ge(e("x")), Formula::ge(e("-(2^x)"))]);
    assert!(smt.check_sat(&f).is_unsat());
    let f = Formula::and([Formula::ge(e("x")), Formula::gt(e("2^x - 5"))]);
    if let SmtOutcome::Sat(m) = smt.check_sat(&f) {
        assert!(f.eval(&m).unwrap());
    }
}

fn small_linear() -> impl Strategy<Value = Expr> {
    (-3i64..=3, -3i64..=3, -5i64..=5).prop_map(|(a, b, c)| {
        &(&Expr::var("x").scale(&itslb::arith::int(a)) + &Expr::var("y").scale(&itslb::arith::int(b)))
            + &Expr::int(c)
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn sat_models_satisfy_formula(ps in proptest::collection::vec((small_linear(), any::<bool>()), 1..4)) {
        let f = Formula::and(ps.iter().map(|(p, strict)| if *strict { Formula::gt(p.clone()) } else { Formula::ge(p.clone()) }));
        match Smt::builtin().check_sat(&f) {
            SmtOutcome::Sat(m) => prop_assert!(f.eval(&m).unwrap()),
            SmtOutcome::Unsat => {
                // No point in a small box satisfies it either.
                for x in -12..=12 {
                    for y in -12..=12 {
                        let m = [(Var::new("x"), itslb::arith::int(x)), (Var::new("y"), itslb::arith::int(y))].into_iter().collect();
                        prop_assert!(!f.eval(&m).unwrap());
                    }
                }
            }
            SmtOutcome::Unknown(_) => {}
        }
    }
}
