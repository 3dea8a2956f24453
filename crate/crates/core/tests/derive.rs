mod common;

use std::collections::BTreeSet;
use std::sync::Arc;

use common::*;
use proptest::prelude::*;
use shapes_core::algebra::{Dir, Event, Monomial, Sort, Term, Var};
use shapes_core::cli::document::load;
use shapes_core::derive::*;
use shapes_core::skeleton::Skeleton;

const TOY: &str = "(defprotocol toy diffie-hellman
  (defrole srv (vars (k skey) (na text) (x trsc))
    (trace (send (senc na k)) (send (exp (gen) x)))
    (uniq-gen x na))
  (defrole cli (vars (k skey) (na nb text))
    (trace (send (senc (cat na nb) k)) (recv nb))))
(defskeleton toy (vars (k skey) (na text) (x trsc))
  (defstrand srv 2 (k k) (na na) (x x))
  (deflistener na)
  (non-orig k)
  (precedes ((0 1) (1 0))))";

fn toy() -> Skeleton {
    load(TOY).unwrap().1.remove(0).skeleton
}

fn v(n: &str, s: Sort) -> Var {
    Var::new(n, s)
}

fn replays(sk: &Skeleton, r: &Recipe, t: &Term) -> bool {
    r.eval(&|n| sk.msg(n).clone()).as_ref() == Some(t)
}

#[test]
fn derivability_examples() {
    let sk = toy();
    let at = (1, 0);
    let gx = Term::GroupVal(Monomial::var(v("x", Sort::Trsc)));
    let r = derivable_by(&sk, at, &gx).unwrap();
    assert_eq!(*r, Recipe::Leaf((0, 1)));

    let (na, k) = (Term::var(v("na", Sort::Text)), Term::var(v("k", Sort::Skey)));
    assert_eq!(derivable_by(&sk, at, &na).unwrap_err(), vec![na.clone()]);
    assert_eq!(derivable_by(&sk, at, &Term::pair(k.clone(), gx.clone())).unwrap_err(), vec![k.clone()]);
    // Under an unknown key the encryption itself is the unit.
    let sealed = Term::senc(Term::var(v("t", Sort::Text)), k.clone());
    assert_eq!(derivable_by(&sk, at, &sealed).unwrap_err(), vec![sealed.clone()]);
    let open = Term::senc(na.clone(), gx.clone());
    assert_eq!(derivable_by(&sk, at, &open).unwrap_err(), vec![na]);

    // A fresh exponent can be chosen and applied to a heard group value.
    let z = v("z", Sort::Fld);
    for t in [Term::GroupVal(Monomial::var(z.clone())), Term::GroupVal(Monomial::var(z).mul(&Monomial::var(v("x", Sort::Trsc))))] {
        let r = derivable_by(&sk, at, &t).unwrap_or_else(|b| panic!("{t}: {b:?}"));
        assert!(replays(&sk, &r, &t), "{t}");
    }
}

#[test]
fn protection_examples() {
    let (na, nb) = (Term::var(v("na", Sort::Text)), Term::var(v("nb", Sort::Text)));
    let k = Term::var(v("k", Sort::Skey));
    let sealed = Term::senc(Term::pair(na.clone(), nb.clone()), k.clone());
    let esc: BTreeSet<Term> = [sealed.clone()].into();
    assert!(protected_by(&na, &esc, &sealed));
    assert!(protected_by(&na, &esc, &Term::pair(sealed.clone(), nb.clone())));
    assert!(!protected_by(&na, &esc, &Term::pair(sealed.clone(), na.clone())));
    assert!(!protected_by(&na, &BTreeSet::new(), &sealed));
    // Only carried positions count: a key is not a path.
    assert!(protected_by(&na, &BTreeSet::new(), &Term::senc(nb, na.clone())));
}

#[test]
fn responder_nonce_escape_set() {
    let sk = scenario("dhcr-umx", "resp-imp");
    let nb = sk.binding(0, "nb").unwrap();
    let cut = find_escape(&sk, (0, 3), &nb);
    assert_eq!(cut.escape.len(), 1, "{:?}", cut.escape);
    let e = cut.escape.iter().next().unwrap();
    let Term::SymEnc(p, _) = e else { panic!("{e}") };
    assert_eq!(**p, Term::pair(sk.binding(0, "na").unwrap(), nb));
    assert!(protected_by(&sk.binding(0, "nb").unwrap(), &cut.escape, sk.msg((0, 2))));
}

#[test]
fn realization_examples() {
    let empty = Skeleton::empty(protocol("dhcr-umx"));
    assert!(realized_check(&empty).is_realized());

    let sk = scenario("dhcr-umx", "init-imp");
    match realized_check(&sk) {
        Realized::NotRealized(f) => assert_eq!(f.target, (0, 2)),
        other => panic!("{other:?}"),
    }
    assert!(!toy().strands.is_empty() && !realized_check(&toy()).is_realized());
}

fn shape_bundles() -> Vec<(Skeleton, Bundle)> {
    let mut out = Vec::new();
    for (_, sk) in all_scenarios().into_iter().filter(|(t, _)| t.starts_with("dhcr-umx")) {
        for shape in run(sk).shape_skeletons() {
            let Realized::Realized { instance, webs, .. } = realized_check(shape) else { panic!() };
            let b = synthesize_bundle(&instance, &webs);
            out.push((instance, b));
        }
    }
    out
}

#[test]
fn bundle_checks() {
    let all = shape_bundles();
    assert!(!all.is_empty());
    for (sk, b) in &all {
        check_bundle(b, &sk.protocol).unwrap_or_else(|v| panic!("{}", v[0]));
    }
    let (sk, b) = &all[0];

    let mut twice = b.clone();
    let (src, dst) = twice.edges[0];
    let other = twice.edges.iter().map(|e| e.0).find(|s| *s != src).unwrap();
    twice.edges.push((other, dst));
    let v = check_bundle(&twice, &sk.protocol).unwrap_err();
    assert!(v.iter().any(|x| x.kind == BundleError::Incoming), "{v:?}");

    let mut add = b.clone();
    let one = Term::FieldVal(Monomial::var(v_fld("u")));
    add.strands.push(BundleStrand {
        kind: BundleStrandKind::Adversary(AdvKind::Add),
        events: vec![Event { dir: Dir::Recv, msg: one.clone() }, Event { dir: Dir::Recv, msg: one.clone() }, Event::send(one)],
    });
    let v = check_bundle(&add, &sk.protocol).unwrap_err();
    assert!(v.iter().any(|x| x.kind == BundleError::Additive), "{v:?}");
}

fn v_fld(n: &str) -> Var {
    v(n, Sort::Fld)
}

#[test]
fn webs_replay_and_knowledge_grows() {
    for (_, sk) in all_scenarios() {
        for shape in run(sk).shape_skeletons() {
            let Realized::Realized { instance, webs, .. } = realized_check(shape) else { panic!() };
            for (n, r) in &webs {
                assert!(replays(&instance, r, instance.msg(*n)), "{n:?}");
                let leaves_before = leaves(r).iter().all(|l| instance.before(*l, *n));
                assert!(leaves_before, "{n:?}");
                for m in instance.nodes().filter(|m| instance.before(*n, *m)) {
                    assert!(Knowledge::at(&instance, m).derivable(instance.msg(*n)), "{n:?} then {m:?}");
                }
            }
        }
    }
}

fn leaves(r: &Recipe) -> Vec<(usize, usize)> {
    let kids: Vec<&Arc<Recipe>> = match r {
        Recipe::Leaf(n) => return vec![*n],
        Recipe::Create(_) => vec![],
        Recipe::Fst(a) | Recipe::Snd(a) | Recipe::FieldInv(a) => vec![a],
        Recipe::Decrypt(a, b) | Recipe::Pair(a, b) | Recipe::Encrypt(a, b) | Recipe::Mul(a, b) | Recipe::Exp(a, b) => {
            vec![a, b]
        }
    };
    kids.into_iter().flat_map(|k| leaves(k)).collect()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    /// Knowing only `g^x`, the adversary reaches `g^(x^a z^b)` exactly when `a` is 0 or 1.
    #[test]
    fn one_heard_power(a in -2i64..=2, b in -2i64..=2) {
        let sk = toy();
        let m = Monomial::from_pairs([(v("x", Sort::Trsc), a), (v_fld("z"), b)]);
        let t = Term::GroupVal(m);
        let got = derivable_by(&sk, (1, 0), &t);
        prop_assert_eq!(got.is_ok(), a == 0 || a == 1, "{}", t);
        if let Ok(r) = got {
            prop_assert!(replays(&sk, &r, &t));
        }
    }
}
