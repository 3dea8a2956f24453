use proptest::prelude::*;
use shapes_core::algebra::{normalize, Expr, Monomial, Sort, Term, Var};

fn trsc(i: usize) -> Var {
    Var::new(["x", "y", "z"][i], Sort::Trsc)
}

fn mono() -> impl Strategy<Value = Monomial> {
    prop::collection::vec((0usize..3, -3i64..=3), 0..4)
        .prop_map(|ps| Monomial::from_pairs(ps.into_iter().map(|(i, d)| (trsc(i), d))))
}

fn atom() -> impl Strategy<Value = Term> {
    prop_oneof![
        (0usize..3).prop_map(|i| Term::var(Var::new(["a", "b", "c"][i], Sort::Text))),
        (0usize..2).prop_map(|i| Term::var(Var::new(["k", "j"][i], Sort::Skey))),
        mono().prop_map(Term::FieldVal),
        mono().prop_map(Term::GroupVal),
        Just(Term::tag("t")),
    ]
}

fn term() -> impl Strategy<Value = Term> {
    atom().prop_recursive(4, 24, 2, |inner| {
        prop_oneof![
            (inner.clone(), inner.clone()).prop_map(|(a, b)| Term::pair(a, b)),
            (inner.clone(), inner.clone()).prop_map(|(a, b)| Term::senc(a, b)),
            inner.prop_map(Term::hash),
        ]
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(256))]

    #[test]
    fn normal_forms_are_fixed(t in term()) {
        let once = normalize(&Expr::from_term(&t)).unwrap();
        prop_assert_eq!(&once, &t);
        prop_assert_eq!(normalize(&Expr::from_term(&once)).unwrap(), once);
    }

    #[test]
    fn division_undoes_multiplication(m in mono(), n in mono()) {
        prop_assert_eq!(m.mul(&n).div(&n), m.clone());
        prop_assert!(m.mul(&m.inv()).is_one());
        prop_assert_eq!(m.mul(&n), n.mul(&m));
    }

    #[test]
    fn exponentiation_composes(m in mono(), n in mono()) {
        let g = Expr::exp(Expr::exp(Expr::Gen, Expr::from_term(&Term::FieldVal(m.clone()))), Expr::from_term(&Term::FieldVal(n.clone())));
        prop_assert_eq!(normalize(&g).unwrap(), Term::GroupVal(m.mul(&n)));
    }

    #[test]
    fn occurrence_kinds_nest(t in term()) {
        for (pos, sub) in t.carried_positions() {
            prop_assert!(t.carried_path_to(sub).is_some(), "{} at {:?}", sub, pos);
            prop_assert!(t.carried_in(sub));
            prop_assert!(t.present_in(sub), "{} in {}", sub, t);
        }
        for sub in t.visible_parts() {
            prop_assert!(t.visible_in(sub));
            prop_assert!(t.carried_in(sub));
        }
    }
}
