//! Cohorts: the enrichments of a skeleton that explain a non-derivable
//! reception.

use std::collections::BTreeSet;
use std::fmt;

use serde::Serialize;

use crate::algebra::{Dir, Monomial, Sort, Term, Var};
use crate::derive::{protected_by, Failure, Knowledge};
use crate::skeleton::{Node, Skeleton, StrandKind};
use crate::unify::{self, solve_linear_diophantine, Subst};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum CohortCase {
    RegularEscape,
    BreakEscape,
    ForgeKey,
    Contraction,
    FieldMember,
    GroupMember,
    /// The leftover group value of a split listener is the generator.
    GroupIdentity,
}

impl fmt::Display for CohortCase {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            CohortCase::RegularEscape => "regular-escape",
            CohortCase::BreakEscape => "break-escape",
            CohortCase::ForgeKey => "forge-key",
            CohortCase::Contraction => "contraction",
            CohortCase::FieldMember => "field-member",
            CohortCase::GroupMember => "group-member",
            CohortCase::GroupIdentity => "group-identity",
        })
    }
}

#[derive(Debug, Clone)]
pub struct Member {
    pub case: CohortCase,
    pub skeleton: Skeleton,
}

/// Cohort for a failure found by the realized check. Dead candidates and
/// candidates isomorphic to `sk` are dropped.
pub fn cohort(sk: &Skeleton, f: &Failure) -> Vec<Member> {
    let n = f.target;
    let c = &f.critical;
    let k = Knowledge::at(sk, n);
    let mut raw: Vec<(CohortCase, Result<Vec<Skeleton>, String>)> = Vec::new();
    let split_first = split_component(sk, n, c);
    match c {
        Term::FieldVal(m) if c.trsc_var().is_none() => {
            raw.extend(field_members(sk, n, m, &k));
        }
        Term::GroupVal(m) if !split_first => {
            raw.extend(regular_trans(sk, n, c, &f.escape));
            raw.push((CohortCase::GroupMember, group_member(sk, n, m, &k)));
        }
        _ => {
            raw.extend(regular_trans(sk, n, c, &f.escape));
            for e in &f.escape {
                let key = e.decryption_key().expect("escape members are encryptions");
                raw.push((CohortCase::BreakEscape, listen(sk, n, key)));
            }
            if let Term::SymEnc(_, key) | Term::AsymEnc(_, key) = c {
                raw.push((CohortCase::ForgeKey, listen(sk, n, (**key).clone())));
            }
            raw.extend(contractions(sk, n, c, &f.escape));
            if split_first {
                if let Term::GroupVal(m) = c {
                    let mut fresh = sk.fresh.clone();
                    for sigma in unify::unify_system(
                        &[(Term::GroupVal(m.clone()), Term::gen())],
                        &BTreeSet::new(),
                        &mut fresh,
                        true,
                    ) {
                        let mut base = sk.clone();
                        base.fresh = fresh.clone();
                        raw.push((CohortCase::GroupIdentity, base.apply_subst(&sigma)));
                    }
                }
            }
        }
    }
    let mut out: Vec<Member> = Vec::new();
    for (case, res) in raw {
        let Ok(sks) = res else { continue };
        for s in sks {
            if s.iso(sk) || out.iter().any(|m| m.skeleton.iso(&s)) {
                continue;
            }
            out.push(Member { case, skeleton: s });
        }
    }
    out
}

/// `c` is the leftover component of a split listener heard at `n`.
fn split_component(sk: &Skeleton, n: Node, c: &Term) -> bool {
    let st = &sk.strands[n.0];
    matches!(st.kind, StrandKind::Listener { group_split: true })
        && n.1 == 0
        && matches!(&st.events[0].msg, Term::Pair(a, _) if **a == *c)
}

fn listen(sk: &Skeleton, n: Node, t: Term) -> Result<Vec<Skeleton>, String> {
    let mut s = sk.clone();
    s.add_listener(t, Some(n), false);
    s.normalize()
}

/// `c` leaves the protection of `escape` at `(s, i)` for the first time on
/// its strand.
fn escapes_at(sk: &Skeleton, s: usize, i: usize, c: &Term, escape: &BTreeSet<Term>) -> bool {
    let st = &sk.strands[s];
    let msg = &st.events[i].msg;
    st.events[i].dir == Dir::Send
        && msg.carried_in(c)
        && !protected_by(c, escape, msg)
        && st.events[..i].iter().all(|ev| protected_by(c, escape, &ev.msg))
}

/// Regular strands, new or existing, whose transmission lets `c` escape
/// before `n`.
fn regular_trans(
    sk: &Skeleton,
    n: Node,
    c: &Term,
    escape: &BTreeSet<Term>,
) -> Vec<(CohortCase, Result<Vec<Skeleton>, String>)> {
    let mut out = Vec::new();
    let proto = sk.protocol.clone();
    for (r, role) in proto.roles.iter().enumerate() {
        for (i, ev) in role.trace.iter().enumerate() {
            if ev.dir != Dir::Send {
                continue;
            }
            let mut base = sk.clone();
            let s = base.add_role_strand(r, i + 1, &Subst::new());
            let msg = base.msg((s, i)).clone();
            for (_, sub) in msg.carried_positions() {
                if !may_match(sub, c) {
                    continue;
                }
                let mut fresh = base.fresh.clone();
                for sigma in unify::unify_system(&[(sub.clone(), c.clone())], &BTreeSet::new(), &mut fresh, true) {
                    let mut cand = base.substitute(&sigma);
                    cand.fresh = fresh.clone();
                    for mut cand in protect_earlier(cand, s, i, &sigma.apply(c), escape, &sigma, REPAIR_DEPTH) {
                        cand.order.insert(((s, i), n));
                        out.push((CohortCase::RegularEscape, cand.normalize()));
                    }
                }
            }
        }
    }
    for (s, st) in sk.strands.iter().enumerate() {
        if st.is_listener() || s == n.0 {
            continue;
        }
        for i in 0..st.height {
            if st.events[i].dir != Dir::Send || sk.before(n, (s, i)) {
                continue;
            }
            let msg = st.events[i].msg.clone();
            for (_, sub) in msg.carried_positions() {
                if !may_match(sub, c) || sub == c {
                    continue;
                }
                let mut fresh = sk.fresh.clone();
                for sigma in unify::unify_system(&[(sub.clone(), c.clone())], &BTreeSet::new(), &mut fresh, true) {
                    let mut cand = sk.substitute(&sigma);
                    cand.fresh = fresh.clone();
                    for mut cand in protect_earlier(cand, s, i, &sigma.apply(c), escape, &sigma, REPAIR_DEPTH) {
                        cand.order.insert(((s, i), n));
                        out.push((CohortCase::RegularEscape, cand.normalize()));
                    }
                }
            }
        }
    }
    out
}

const REPAIR_DEPTH: usize = 3;

/// Instances of `cand` in which `c` first leaves `escape` at `(s, i)`.
/// An earlier occurrence outside the escape set is repaired by unifying one
/// of its enclosing encryptions with an escape member. `sigma` is the
/// substitution applied so far to the original skeleton.
fn protect_earlier(
    cand: Skeleton,
    s: usize,
    i: usize,
    c: &Term,
    escape: &BTreeSet<Term>,
    sigma: &Subst,
    depth: usize,
) -> Vec<Skeleton> {
    let esc: BTreeSet<Term> = escape.iter().map(|e| sigma.apply(e)).collect();
    if escapes_at(&cand, s, i, c, &esc) {
        return vec![cand];
    }
    let st = &cand.strands[s];
    let msg = &st.events[i].msg;
    if depth == 0 || st.events[i].dir != Dir::Send || !msg.carried_in(c) || protected_by(c, &esc, msg) {
        return Vec::new();
    }
    let Some(j) = st.events[..i].iter().position(|ev| !protected_by(c, &esc, &ev.msg)) else {
        return Vec::new();
    };
    let encs = exposing_encryptions(c, &esc, &st.events[j].msg);
    let mut out = Vec::new();
    for e in &encs {
        for x in &esc {
            if !may_match(e, x) {
                continue;
            }
            let mut fresh = cand.fresh.clone();
            for tau in unify::unify_system(&[(e.clone(), x.clone())], &BTreeSet::new(), &mut fresh, true) {
                let mut next = cand.substitute(&tau);
                next.fresh = fresh.clone();
                out.extend(protect_earlier(next, s, i, &tau.apply(c), escape, &sigma.then(&tau), depth - 1));
            }
        }
    }
    out
}

/// Encryptions enclosing the first occurrence of `c` in `m` that no member
/// of `escape` protects, outermost first.
fn exposing_encryptions(c: &Term, escape: &BTreeSet<Term>, m: &Term) -> Vec<Term> {
    if escape.contains(m) || m == c {
        return Vec::new();
    }
    match m {
        Term::Pair(a, b) => {
            if !protected_by(c, escape, a) {
                exposing_encryptions(c, escape, a)
            } else {
                exposing_encryptions(c, escape, b)
            }
        }
        Term::SymEnc(p, _) | Term::AsymEnc(p, _) => {
            let mut v = vec![m.clone()];
            v.extend(exposing_encryptions(c, escape, p));
            v
        }
        _ => Vec::new(),
    }
}

/// Cheap constructor compatibility before unification.
fn may_match(a: &Term, b: &Term) -> bool {
    match (a, b) {
        (Term::Var(v), t) | (t, Term::Var(v)) => t.sort().leq(v.sort) || v.sort.leq(t.sort()),
        (Term::FieldVal(_), Term::FieldVal(_)) | (Term::GroupVal(_), Term::GroupVal(_)) => true,
        (Term::Const(x), Term::Const(y)) => x == y,
        (Term::Pair(..), Term::Pair(..))
        | (Term::SymEnc(..), Term::SymEnc(..))
        | (Term::AsymEnc(..), Term::AsymEnc(..))
        | (Term::Pk(_), Term::Pk(_))
        | (Term::Ltk(..), Term::Ltk(..))
        | (Term::Inv(_), Term::Inv(_)) => true,
        _ => false,
    }
}

/// Identify an encryption on a path to `c` in the target with a member of
/// the escape set.
fn contractions(
    sk: &Skeleton,
    n: Node,
    c: &Term,
    escape: &BTreeSet<Term>,
) -> Vec<(CohortCase, Result<Vec<Skeleton>, String>)> {
    let msg = sk.msg(n);
    let mut encs: BTreeSet<Term> = BTreeSet::new();
    for (pos, sub) in msg.carried_positions() {
        if sub != c {
            continue;
        }
        for j in 0..=pos.len() {
            if let Some(t) = msg.at_path(&pos[..j]) {
                if t.is_encryption() {
                    encs.insert(t.clone());
                }
            }
        }
    }
    let mut out = Vec::new();
    for a in &encs {
        for e in escape {
            if a == e {
                continue;
            }
            let mut fresh = sk.fresh.clone();
            for sigma in unify::unify_system(&[(a.clone(), e.clone())], &BTreeSet::new(), &mut fresh, true) {
                let mut base = sk.clone();
                base.fresh = fresh.clone();
                out.push((CohortCase::Contraction, base.apply_subst(&sigma)));
            }
        }
    }
    out
}

/// A non-atomic field value: either its least restricted transcendental
/// is available, or that transcendental is absent from it.
fn field_members(
    sk: &Skeleton,
    n: Node,
    m: &Monomial,
    k: &Knowledge,
) -> Vec<(CohortCase, Result<Vec<Skeleton>, String>)> {
    let Some(x) = m
        .vars()
        .find(|v| k.restricted_vars().contains(*v) && !k.derivable(&Term::FieldVal(Monomial::var((*v).clone()))))
        .cloned()
    else {
        return Vec::new();
    };
    let mut out = vec![(CohortCase::FieldMember, listen(sk, n, Term::FieldVal(Monomial::var(x.clone()))))];
    // x cancels against another transcendental of opposite degree.
    for v in m.vars().filter(|v| v.sort == Sort::Trsc && **v != x && m.degree(v) == -m.degree(&x)) {
        let sigma = Subst::single(v.clone(), Term::var(x.clone()));
        let mut base = sk.clone();
        base.absent.insert((x.clone(), sigma.apply_mono(m)));
        out.push((CohortCase::FieldMember, base.apply_subst(&sigma)));
    }
    let fld: Vec<Var> = m.vars().filter(|v| v.sort == Sort::Fld).cloned().collect();
    if fld.is_empty() {
        return out;
    }
    let coeffs: Vec<i64> = fld.iter().map(|w| m.degree(w)).collect();
    let Ok(Some(sol)) = solve_linear_diophantine(&coeffs, -m.degree(&x)) else {
        return out;
    };
    let mut base = sk.clone();
    let mut sigma = Subst::new();
    for (w, kx) in fld.iter().zip(sol.particular.iter()) {
        if *kx != 0 {
            let w2 = base.fresh.var(w);
            let image = Monomial::var(w2).mul(&Monomial::from_pairs([(x.clone(), *kx)]));
            sigma.insert(w.clone(), Term::FieldVal(image));
        }
    }
    base.absent.insert((x.clone(), sigma.apply_mono(m)));
    out.push((CohortCase::FieldMember, base.apply_subst(&sigma)));
    out
}

/// A group value is an exposed exponent applied to a leftover value.
fn group_member(sk: &Skeleton, n: Node, m: &Monomial, k: &Knowledge) -> Result<Vec<Skeleton>, String> {
    let nu = m.filter(|v| {
        v.sort == Sort::Grp
            || (v.sort == Sort::Trsc
                && k.restricted_vars().contains(v)
                && !k.derivable(&Term::FieldVal(Monomial::var(v.clone()))))
    });
    if nu.is_one() || nu.vars().all(|v| v.sort == Sort::Grp) && nu.len() == 1 {
        return Err(format!("nothing left to split in {}", Term::GroupVal(m.clone())));
    }
    let mut s = sk.clone();
    let w = s.fresh.named("w", Sort::Fld);
    let wm = Monomial::var(w);
    let heard = Term::pair(Term::GroupVal(nu.div(&wm)), Term::FieldVal(wm));
    s.add_listener(heard, Some(n), true);
    s.normalize()
}
