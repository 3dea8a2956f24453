mod common;

use std::collections::BTreeSet;

use common::*;
use proptest::prelude::*;
use shapes_core::algebra::{Sort, Term, Var};
use shapes_core::protocol::{instance_of, Fact, InstanceError, Role};
use shapes_core::unify::{var_term, Subst};

fn role(name: &str) -> Role {
    protocol("dhcr-umx").role(name).unwrap().1.clone()
}

#[test]
fn instance_examples() {
    let reg = role("reg");
    let one = instance_of(&reg, 1, &Subst::new()).unwrap();
    assert_eq!(one.events, reg.trace[..1].to_vec());
    assert!(matches!(one.obligations[..], [Fact::Uniq(_)]), "{:?}", one.obligations);

    let resp = role("resp");
    let y = Var::new("y", Sort::Trsc);
    let three = instance_of(&resp, 3, &Subst::new()).unwrap();
    assert_eq!(three.events.len(), 3);
    assert!(three.obligations.iter().any(|f| f.vars().contains(&y)));

    assert_eq!(instance_of(&resp, 0, &Subst::new()).unwrap_err(), InstanceError::Height { height: 0, len: 4 });
    assert!(matches!(instance_of(&resp, 5, &Subst::new()), Err(InstanceError::Height { .. })));
    let bad = Subst::single(y, Term::var(Var::new("n", Sort::Text)));
    assert_eq!(instance_of(&resp, 1, &bad).unwrap_err(), InstanceError::Sort);
}

/// A renaming of the role's variables to `{name}_{k}`.
fn renaming(r: &Role, k: u32) -> Subst {
    let mut s = Subst::new();
    for v in &r.vars {
        s.insert(v.clone(), var_term(&Var::new(&format!("{}_{k}", v.name), v.sort)));
    }
    s
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn instances_extend_their_prefixes(which in 0usize..3, h in 1usize..4, k in 0u32..100) {
        let r = role(["init", "resp", "reg"][which]);
        let h = h.min(r.len() - 1);
        let sigma = renaming(&r, k);
        let short = instance_of(&r, h, &sigma).unwrap();
        let long = instance_of(&r, h + 1, &sigma).unwrap();
        prop_assert_eq!(&short.events[..], &long.events[..h]);
        prop_assert!(short.obligations.iter().all(|f| long.obligations.contains(f)));
    }

    #[test]
    fn separate_renamings_share_nothing(which in 0usize..3, j in 0u32..50, k in 50u32..100) {
        let r = role(["init", "resp", "reg"][which]);
        let vars = |k| -> BTreeSet<Var> {
            instance_of(&r, r.len(), &renaming(&r, k)).unwrap().events.iter().flat_map(|e| e.msg.vars()).collect()
        };
        let (a, b) = (vars(j), vars(k));
        prop_assert!(!a.is_empty());
        prop_assert!(a.is_disjoint(&b));
    }
}
