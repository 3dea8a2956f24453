//! Adversary derivability, escape sets, the realized check, and the bundle
//! oracle.

use std::collections::{BTreeMap, BTreeSet, VecDeque};
use std::fmt;
use std::sync::Arc;

use serde::Serialize;

use crate::algebra::{Dir, Event, Monomial, Sort, Term, Var};
use crate::protocol::Protocol;
use crate::skeleton::{Node, Skeleton, StrandKind};
use crate::unify::{self, Subst};

/// How the adversary builds a value. Leaves name skeleton transmissions.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Recipe {
    Leaf(Node),
    Create(Term),
    Fst(Arc<Recipe>),
    Snd(Arc<Recipe>),
    /// Ciphertext, then decryption key.
    Decrypt(Arc<Recipe>, Arc<Recipe>),
    Pair(Arc<Recipe>, Arc<Recipe>),
    /// Plaintext, then key.
    Encrypt(Arc<Recipe>, Arc<Recipe>),
    Mul(Arc<Recipe>, Arc<Recipe>),
    FieldInv(Arc<Recipe>),
    /// Group base, then field exponent.
    Exp(Arc<Recipe>, Arc<Recipe>),
}

impl Recipe {
    /// Replays the operations over the leaf messages.
    pub fn eval(&self, leaf: &dyn Fn(Node) -> Term) -> Option<Term> {
        Some(match self {
            Recipe::Leaf(n) => leaf(*n),
            Recipe::Create(t) => t.clone(),
            Recipe::Fst(r) => match r.eval(leaf)? {
                Term::Pair(a, _) => (*a).clone(),
                _ => return None,
            },
            Recipe::Snd(r) => match r.eval(leaf)? {
                Term::Pair(_, b) => (*b).clone(),
                _ => return None,
            },
            Recipe::Decrypt(c, k) => {
                let c = c.eval(leaf)?;
                let k = k.eval(leaf)?;
                if c.decryption_key()? != k {
                    return None;
                }
                match c {
                    Term::SymEnc(m, _) | Term::AsymEnc(m, _) => (*m).clone(),
                    _ => return None,
                }
            }
            Recipe::Pair(a, b) => Term::pair(a.eval(leaf)?, b.eval(leaf)?),
            Recipe::Encrypt(m, k) => Term::enc(m.eval(leaf)?, k.eval(leaf)?),
            Recipe::Mul(a, b) => match (a.eval(leaf)?, b.eval(leaf)?) {
                (Term::FieldVal(x), Term::FieldVal(y)) => Term::FieldVal(x.mul(&y)),
                _ => return None,
            },
            Recipe::FieldInv(a) => match a.eval(leaf)? {
                Term::FieldVal(x) => Term::FieldVal(x.inv()),
                _ => return None,
            },
            Recipe::Exp(h, p) => match (h.eval(leaf)?, p.eval(leaf)?) {
                (Term::GroupVal(x), Term::FieldVal(y)) => Term::GroupVal(x.mul(&y)),
                _ => return None,
            },
        })
    }

    /// Number of adversary operations.
    pub fn size(&self) -> usize {
        match self {
            Recipe::Leaf(_) => 0,
            Recipe::Create(_) => 1,
            Recipe::Fst(r) | Recipe::Snd(r) | Recipe::FieldInv(r) => 1 + r.size(),
            Recipe::Decrypt(a, b) | Recipe::Pair(a, b) | Recipe::Encrypt(a, b) | Recipe::Mul(a, b) | Recipe::Exp(a, b) => {
                1 + a.size() + b.size()
            }
        }
    }
}

fn rc(r: Recipe) -> Arc<Recipe> {
    Arc::new(r)
}

/// Values available to the adversary just before a node.
#[derive(Debug, Clone)]
pub struct Knowledge {
    parts: BTreeMap<Term, Arc<Recipe>>,
    pending: Vec<Term>,
    restricted: BTreeSet<Term>,
    restricted_vars: BTreeSet<Var>,
    field: Vec<(Monomial, Arc<Recipe>)>,
    group: Vec<(Monomial, Arc<Recipe>)>,
}

impl Knowledge {
    /// Decomposition of `sources` under the given restrictions.
    pub fn new(sources: Vec<(Term, Recipe)>, restricted: BTreeSet<Term>) -> Knowledge {
        let restricted_vars = restricted.iter().filter_map(|t| t.trsc_var().cloned()).collect();
        let mut k = Knowledge {
            parts: BTreeMap::new(),
            pending: Vec::new(),
            restricted,
            restricted_vars,
            field: Vec::new(),
            group: Vec::new(),
        };
        for (t, r) in sources {
            k.insert(t, rc(r));
        }
        k.saturate();
        k
    }

    /// Transmissions strictly preceding `n`.
    pub fn at(sk: &Skeleton, n: Node) -> Knowledge {
        let sources = sk
            .nodes()
            .filter(|m| sk.event(*m).dir == Dir::Send && sk.before(*m, n))
            .map(|m| (sk.msg(m).clone(), Recipe::Leaf(m)))
            .collect();
        Knowledge::new(sources, sk.restricted())
    }

    fn insert(&mut self, t: Term, r: Arc<Recipe>) {
        if self.parts.contains_key(&t) {
            return;
        }
        self.parts.insert(t.clone(), r.clone());
        match &t {
            Term::Pair(a, b) => {
                self.insert((**a).clone(), rc(Recipe::Fst(r.clone())));
                self.insert((**b).clone(), rc(Recipe::Snd(r)));
            }
            Term::SymEnc(..) | Term::AsymEnc(..) => self.pending.push(t),
            Term::FieldVal(m) => self.field.push((m.clone(), r)),
            Term::GroupVal(m) => self.group.push((m.clone(), r)),
            _ => {}
        }
    }

    fn saturate(&mut self) {
        loop {
            let mut opened = None;
            for (i, e) in self.pending.iter().enumerate() {
                let key = e.decryption_key().unwrap();
                if let Some(kr) = self.derive(&key) {
                    opened = Some((i, kr));
                    break;
                }
            }
            let Some((i, kr)) = opened else { break };
            let e = self.pending.remove(i);
            let er = self.parts[&e].clone();
            let (Term::SymEnc(m, _) | Term::AsymEnc(m, _)) = &e else { unreachable!() };
            self.insert((**m).clone(), rc(Recipe::Decrypt(er, kr)));
        }
    }

    pub fn derivable(&self, t: &Term) -> bool {
        self.derive(t).is_some()
    }

    /// Witness recipe for `t`.
    pub fn derive(&self, t: &Term) -> Option<Arc<Recipe>> {
        if let Some(r) = self.parts.get(t) {
            return Some(r.clone());
        }
        match t {
            Term::Pair(a, b) => Some(rc(Recipe::Pair(self.derive(a)?, self.derive(b)?))),
            Term::SymEnc(m, k) | Term::AsymEnc(m, k) => Some(rc(Recipe::Encrypt(self.derive(m)?, self.derive(k)?))),
            Term::FieldVal(m) => self.derive_field(m),
            Term::GroupVal(m) => self.derive_group(m),
            Term::Var(v) if v.sort == Sort::Node => None,
            _ if self.restricted.contains(t) => None,
            Term::Var(_) | Term::Const(_) => Some(rc(Recipe::Create(t.clone()))),
            Term::Pk(a) | Term::Inv(a) if matches!(**a, Term::Var(_) | Term::Pk(_)) => {
                Some(rc(Recipe::Create(t.clone())))
            }
            Term::Ltk(a, b) if matches!((&**a, &**b), (Term::Var(_), Term::Var(_))) => {
                Some(rc(Recipe::Create(t.clone())))
            }
            Term::Pk(a) => Some(rc(Recipe::Create(Term::pk((**a).clone())))).filter(|_| self.derivable(a)),
            _ => None,
        }
    }

    fn unrestricted(&self, v: &Var) -> bool {
        !self.restricted_vars.contains(v)
    }

    /// Field values: restricted factors must lie in the integer span of
    /// known field values; the rest is created.
    pub fn derive_field(&self, m: &Monomial) -> Option<Arc<Recipe>> {
        if m.vars().any(|v| v.sort == Sort::Grp) {
            return None;
        }
        let coords: Vec<Var> = m.vars().filter(|v| !self.unrestricted(v)).cloned().collect();
        let mut combo: Vec<(Arc<Recipe>, i64)> = Vec::new();
        let mut rest = m.clone();
        if !coords.is_empty() {
            let mut axes: BTreeSet<Var> = coords.iter().cloned().collect();
            for (g, _) in &self.field {
                axes.extend(g.vars().filter(|v| !self.unrestricted(v)).cloned());
            }
            let axes: Vec<Var> = axes.into_iter().collect();
            let gens: Vec<Vec<i64>> = self.field.iter().map(|(g, _)| axes.iter().map(|v| g.degree(v)).collect()).collect();
            let target: Vec<i64> = axes.iter().map(|v| m.degree(v)).collect();
            let coeffs = lattice_solve(&gens, &target)?;
            for (i, k) in coeffs.into_iter().enumerate() {
                if k != 0 {
                    rest = rest.div(&self.field[i].0.pow(k));
                    combo.push((self.field[i].1.clone(), k));
                }
            }
        }
        for (v, e) in rest.factors() {
            debug_assert!(self.unrestricted(v));
            let leaf = match self.parts.get(&Term::FieldVal(Monomial::var(v.clone()))) {
                Some(r) => r.clone(),
                None => rc(Recipe::Create(Term::FieldVal(Monomial::var(v.clone())))),
            };
            combo.push((leaf, e));
        }
        Some(product(combo))
    }

    pub fn derive_group(&self, m: &Monomial) -> Option<Arc<Recipe>> {
        let mut bases: Vec<(Monomial, Arc<Recipe>)> = self.group.clone();
        bases.push((Monomial::one(), rc(Recipe::Create(Term::gen()))));
        for v in m.vars().filter(|v| v.sort == Sort::Grp) {
            if m.degree(v) == 1 {
                let h = Monomial::var(v.clone());
                bases.push((h.clone(), rc(Recipe::Create(Term::GroupVal(h)))));
            }
        }
        for (xi, r) in &bases {
            let rho = m.div(xi);
            if rho.is_one() {
                return Some(r.clone());
            }
            if rho.vars().any(|v| v.sort == Sort::Grp) {
                continue;
            }
            if let Some(fr) = self.derive_field(&rho) {
                return Some(rc(Recipe::Exp(r.clone(), fr)));
            }
        }
        None
    }

    /// Known group values, generator excluded.
    pub fn group_values(&self) -> impl Iterator<Item = &Monomial> {
        self.group.iter().map(|(m, _)| m)
    }

    pub fn restricted_vars(&self) -> &BTreeSet<Var> {
        &self.restricted_vars
    }

    /// Non-derivable units whose derivation would let `t` through.
    pub fn blocking(&self, t: &Term) -> Vec<Term> {
        let mut out = Vec::new();
        self.collect_blocking(t, &mut out);
        out.sort_by(|a, b| (a.depth(), a).cmp(&(b.depth(), b)));
        out.dedup();
        out
    }

    fn collect_blocking(&self, t: &Term, out: &mut Vec<Term>) {
        if self.derivable(t) {
            return;
        }
        match t {
            Term::Pair(a, b) => {
                self.collect_blocking(a, out);
                self.collect_blocking(b, out);
            }
            Term::SymEnc(m, k) | Term::AsymEnc(m, k) if self.derivable(k) => self.collect_blocking(m, out),
            _ => out.push(t.clone()),
        }
    }

    /// Deterministic critical value: the first non-derivable unit met in a
    /// left-to-right walk.
    pub fn critical(&self, t: &Term) -> Option<Term> {
        if self.derivable(t) {
            return None;
        }
        match t {
            Term::Pair(a, b) => self.critical(a).or_else(|| self.critical(b)),
            Term::SymEnc(m, k) | Term::AsymEnc(m, k) if self.derivable(k) => self.critical(m),
            _ => Some(t.clone()),
        }
    }
}

/// Multiplies `r_i^{k_i}`; the empty product is the created unit.
fn product(items: Vec<(Arc<Recipe>, i64)>) -> Arc<Recipe> {
    let mut acc: Option<Arc<Recipe>> = None;
    for (r, k) in items {
        let mut p = r.clone();
        for _ in 1..k.abs() {
            p = rc(Recipe::Mul(p, r.clone()));
        }
        if k < 0 {
            p = rc(Recipe::FieldInv(p));
        }
        acc = Some(match acc {
            None => p,
            Some(a) => rc(Recipe::Mul(a, p)),
        });
    }
    acc.unwrap_or_else(|| rc(Recipe::Create(Term::one())))
}

/// Integer coefficients `c` with `Σ c_i·gens_i = target`, if any.
pub fn lattice_solve(gens: &[Vec<i64>], target: &[i64]) -> Option<Vec<i64>> {
    let k = gens.len();
    let d = target.len();
    if k == 0 {
        return target.iter().all(|&t| t == 0).then(Vec::new);
    }
    // Column-style reduction on a d×k matrix with a k×k transform.
    let mut a: Vec<Vec<i128>> = (0..d).map(|r| (0..k).map(|c| gens[c][r] as i128).collect()).collect();
    let mut u: Vec<Vec<i128>> = (0..k).map(|i| (0..k).map(|j| (i == j) as i128).collect()).collect();
    let col_op = |a: &mut Vec<Vec<i128>>, u: &mut Vec<Vec<i128>>, dst: usize, src: usize, q: i128| {
        for row in a.iter_mut() {
            row[dst] -= q * row[src];
        }
        for row in u.iter_mut() {
            row[dst] -= q * row[src];
        }
    };
    let swap = |a: &mut Vec<Vec<i128>>, u: &mut Vec<Vec<i128>>, x: usize, y: usize| {
        for row in a.iter_mut() {
            row.swap(x, y);
        }
        for row in u.iter_mut() {
            row.swap(x, y);
        }
    };
    let mut pivots: Vec<Option<usize>> = vec![None; d];
    let mut p = 0;
    for r in 0..d {
        if p == k {
            break;
        }
        loop {
            let nz: Vec<usize> = (p..k).filter(|&c| a[r][c] != 0).collect();
            if nz.is_empty() {
                break;
            }
            let m = *nz.iter().min_by_key(|&&c| a[r][c].abs()).unwrap();
            swap(&mut a, &mut u, p, m);
            let mut done = true;
            for c in p + 1..k {
                if a[r][c] != 0 {
                    let q = a[r][c].div_euclid(a[r][p]);
                    col_op(&mut a, &mut u, c, p, q);
                    if a[r][c] != 0 {
                        done = false;
                    }
                }
            }
            if done {
                pivots[r] = Some(p);
                p += 1;
                break;
            }
        }
    }
    let mut y = vec![0i128; k];
    for r in 0..d {
        let mut res = target[r] as i128;
        for c in 0..k {
            res -= a[r][c] * y[c];
        }
        match pivots[r] {
            Some(c) => {
                if res % a[r][c] != 0 {
                    return None;
                }
                y[c] = res / a[r][c];
            }
            None => {
                if res != 0 {
                    return None;
                }
            }
        }
    }
    let x: Vec<i64> = (0..k).map(|i| (0..k).map(|j| u[i][j] * y[j]).sum::<i128>() as i64).collect();
    Some(x)
}

/// `derivable_by`: a recipe for `t` at `n`, or its blocking units.
pub fn derivable_by(sk: &Skeleton, n: Node, t: &Term) -> Result<Arc<Recipe>, Vec<Term>> {
    let k = Knowledge::at(sk, n);
    k.derive(t).ok_or_else(|| k.blocking(t))
}

/// Every carried path from `m` to `c` traverses a member of `escape`.
pub fn protected_by(c: &Term, escape: &BTreeSet<Term>, m: &Term) -> bool {
    if escape.contains(m) {
        return true;
    }
    if m == c {
        return false;
    }
    match m {
        Term::Pair(a, b) => protected_by(c, escape, a) && protected_by(c, escape, b),
        Term::SymEnc(p, _) | Term::AsymEnc(p, _) => protected_by(c, escape, p),
        _ => true,
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Cut {
    pub critical: Term,
    pub escape: BTreeSet<Term>,
    /// Nodes strictly before the target.
    pub members: BTreeSet<Node>,
}

/// Topmost undecryptable encryptions protecting `c` in transmissions
/// before `n`.
pub fn find_escape(sk: &Skeleton, n: Node, c: &Term) -> Cut {
    let k = Knowledge::at(sk, n);
    let members: BTreeSet<Node> = sk.nodes().filter(|m| sk.before(*m, n)).collect();
    let mut escape = BTreeSet::new();
    for m in &members {
        if sk.event(*m).dir == Dir::Send {
            collect_escape(&k, c, sk.msg(*m), &mut escape);
        }
    }
    Cut { critical: c.clone(), escape, members }
}

/// Escape set relative to explicit knowledge.
pub fn escape_in(k: &Knowledge, c: &Term, msgs: &[&Term]) -> BTreeSet<Term> {
    let mut escape = BTreeSet::new();
    for m in msgs {
        collect_escape(k, c, m, &mut escape);
    }
    escape
}

fn collect_escape(k: &Knowledge, c: &Term, m: &Term, out: &mut BTreeSet<Term>) {
    if m == c || !m.carried_in(c) {
        return;
    }
    match m {
        Term::Pair(a, b) => {
            collect_escape(k, c, a, out);
            collect_escape(k, c, b, out);
        }
        Term::SymEnc(p, _) | Term::AsymEnc(p, _) => {
            if k.derivable(&m.decryption_key().unwrap()) {
                collect_escape(k, c, p, out);
            } else {
                out.insert(m.clone());
            }
        }
        _ => {}
    }
}

/// A non-derivable reception with its analysis.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Failure {
    pub target: Node,
    pub critical: Term,
    pub escape: BTreeSet<Term>,
    pub blocking: Vec<Term>,
}

/// First reception, by strand then position, that cannot be derived.
pub fn first_failure(sk: &Skeleton) -> Option<Failure> {
    for n in sk.nodes() {
        if sk.event(n).dir != Dir::Recv {
            continue;
        }
        let k = Knowledge::at(sk, n);
        let t = sk.msg(n);
        if let Some(c) = k.critical(t) {
            let cut = find_escape(sk, n, &c);
            return Some(Failure { target: n, critical: c, escape: cut.escape, blocking: k.blocking(t) });
        }
    }
    None
}

/// Recipes for every reception, if all are derivable.
pub fn witness_webs(sk: &Skeleton) -> Option<BTreeMap<Node, Arc<Recipe>>> {
    let mut out = BTreeMap::new();
    for n in sk.nodes() {
        if sk.event(n).dir == Dir::Recv {
            out.insert(n, Knowledge::at(sk, n).derive(sk.msg(n))?);
        }
    }
    Some(out)
}

#[derive(Debug, Clone)]
pub enum Realized {
    Realized {
        sigma: Subst,
        /// `sigma` applied to the checked skeleton.
        instance: Skeleton,
        webs: BTreeMap<Node, Arc<Recipe>>,
    },
    NotRealized(Failure),
    /// The cancellation search hit its depth bound.
    Undecided(Failure),
}

impl Realized {
    pub fn is_realized(&self) -> bool {
        matches!(self, Realized::Realized { .. })
    }

    pub fn failure(&self) -> Option<&Failure> {
        match self {
            Realized::Realized { .. } => None,
            Realized::NotRealized(f) | Realized::Undecided(f) => Some(f),
        }
    }
}

/// Searches cancellation substitutions `w ↦ w'·∏x^d` on field variables
/// that make every reception derivable.
pub fn realized_check(sk: &Skeleton) -> Realized {
    let Some(failure) = first_failure(sk) else {
        let webs = witness_webs(sk).expect("every reception derivable");
        return Realized::Realized { sigma: Subst::new(), instance: sk.clone(), webs };
    };
    let bound = sk.vars().iter().filter(|v| v.sort == Sort::Fld).count();
    let mut hit = false;
    if let Some((sigma, instance)) = cancel_search(sk, &Subst::new(), Some(failure.clone()), bound, &mut hit) {
        let webs = witness_webs(&instance).expect("every reception derivable");
        return Realized::Realized { sigma, instance, webs };
    }
    if hit {
        Realized::Undecided(failure)
    } else {
        Realized::NotRealized(failure)
    }
}

fn cancel_search(
    sk: &Skeleton,
    acc: &Subst,
    failure: Option<Failure>,
    depth: usize,
    hit: &mut bool,
) -> Option<(Subst, Skeleton)> {
    let failure = match failure {
        Some(f) => f,
        None => match first_failure(sk) {
            None => return Some((acc.clone(), sk.clone())),
            Some(f) => f,
        },
    };
    let k = Knowledge::at(sk, failure.target);
    let mut fresh = sk.fresh.clone();
    let candidates = cancellations(&k, &failure.critical, &mut fresh);
    if candidates.is_empty() {
        return None;
    }
    if depth == 0 {
        *hit = true;
        return None;
    }
    for sigma in candidates {
        let Ok(next) = sk.apply_subst(&sigma) else { continue };
        for s2 in next {
            if let Some(found) = cancel_search(&s2, &acc.then(&sigma), None, depth - 1, hit) {
                return Some(found);
            }
        }
    }
    None
}

/// Single-variable substitutions that cancel the restricted part of a
/// field or group critical value against a known base.
fn cancellations(k: &Knowledge, c: &Term, fresh: &mut unify::Fresh) -> Vec<Subst> {
    let (mono, bases): (&Monomial, Vec<Monomial>) = match c {
        Term::FieldVal(m) => (m, vec![Monomial::one()]),
        Term::GroupVal(m) => {
            let mut b = vec![Monomial::one()];
            b.extend(k.group_values().cloned());
            (m, b)
        }
        _ => return Vec::new(),
    };
    let fld: Vec<Var> = mono.vars().filter(|v| v.sort == Sort::Fld).cloned().collect();
    let restricted = k.restricted_vars();
    let mut out: Vec<Subst> = Vec::new();
    for xi in &bases {
        let rho = mono.div(xi);
        if rho.vars().any(|v| v.sort == Sort::Grp) {
            continue;
        }
        for w in &fld {
            let e = rho.degree(w);
            if e == 0 {
                continue;
            }
            let mut shift = Monomial::one();
            let mut ok = true;
            for (x, dx) in rho.factors() {
                if !restricted.contains(x) {
                    continue;
                }
                if dx % e != 0 {
                    ok = false;
                    break;
                }
                shift.add_factor(x.clone(), -dx / e);
            }
            if !ok || shift.is_one() {
                continue;
            }
            let w2 = fresh.var(w);
            let image = Monomial::var(w2).mul(&shift);
            let s = Subst::single(w.clone(), Term::FieldVal(image));
            if !out.contains(&s) {
                out.push(s);
            }
        }
    }
    out
}

// Bundles.

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum AdvKind {
    Create,
    Pair,
    Sep,
    Enc,
    Dec,
    Mul,
    Inv,
    Exp,
    /// Additive operators: always rejected.
    Add,
    Neg,
    GroupMul,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum BundleStrandKind {
    Regular { role: String },
    Listener,
    Adversary(AdvKind),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BundleStrand {
    pub kind: BundleStrandKind,
    pub events: Vec<Event>,
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Bundle {
    pub strands: Vec<BundleStrand>,
    /// Transmission to reception.
    pub edges: Vec<(Node, Node)>,
    pub non: Vec<Term>,
    pub uniq: Vec<Term>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum BundleError {
    BadNode,
    Direction,
    MessageMismatch,
    Incoming,
    Cycle,
    NotRoleInstance,
    AdversaryShape,
    Additive,
    NonOrigination,
    UniqGen,
    AdvVisible,
    SimpleVisible,
    GroupVisible,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct BundleViolation {
    pub kind: BundleError,
    pub node: Option<Node>,
    pub edge: Option<(Node, Node)>,
    pub detail: String,
}

impl fmt::Display for BundleViolation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:?}", self.kind)?;
        if let Some(n) = self.node {
            write!(f, " at ({} {})", n.0, n.1)?;
        }
        if let Some((a, b)) = self.edge {
            write!(f, " on ({} {}) -> ({} {})", a.0, a.1, b.0, b.1)?;
        }
        write!(f, ": {}", self.detail)
    }
}

impl Bundle {
    pub fn nodes(&self) -> impl Iterator<Item = Node> + '_ {
        self.strands.iter().enumerate().flat_map(|(s, st)| (0..st.events.len()).map(move |i| (s, i)))
    }

    fn event(&self, n: Node) -> Option<&Event> {
        self.strands.get(n.0)?.events.get(n.1)
    }

    fn vars(&self) -> BTreeSet<Var> {
        let mut out = BTreeSet::new();
        for st in &self.strands {
            for ev in &st.events {
                ev.msg.collect_vars(&mut out);
            }
        }
        out
    }

    /// `ancestors[i][j]`: node j ≼ node i, over the given node numbering.
    fn ancestry(&self, nodes: &[Node]) -> Option<Vec<Vec<bool>>> {
        let idx: BTreeMap<Node, usize> = nodes.iter().enumerate().map(|(i, n)| (*n, i)).collect();
        let k = nodes.len();
        let mut preds: Vec<Vec<usize>> = vec![Vec::new(); k];
        for (i, n) in nodes.iter().enumerate() {
            if n.1 > 0 {
                preds[i].push(idx[&(n.0, n.1 - 1)]);
            }
        }
        for (a, b) in &self.edges {
            if let (Some(&i), Some(&j)) = (idx.get(a), idx.get(b)) {
                preds[j].push(i);
            }
        }
        let mut indeg: Vec<usize> = preds.iter().map(|p| p.len()).collect();
        let mut succs: Vec<Vec<usize>> = vec![Vec::new(); k];
        for (j, ps) in preds.iter().enumerate() {
            for &i in ps {
                succs[i].push(j);
            }
        }
        let mut queue: VecDeque<usize> = (0..k).filter(|&i| indeg[i] == 0).collect();
        let mut topo = Vec::new();
        while let Some(i) = queue.pop_front() {
            topo.push(i);
            for &j in &succs[i] {
                indeg[j] -= 1;
                if indeg[j] == 0 {
                    queue.push_back(j);
                }
            }
        }
        if topo.len() != k {
            return None;
        }
        let mut anc = vec![vec![false; k]; k];
        for &i in &topo {
            anc[i][i] = true;
            for &p in &preds[i] {
                let row = anc[p].clone();
                for (j, bit) in row.into_iter().enumerate() {
                    if bit {
                        anc[i][j] = true;
                    }
                }
            }
        }
        Some(anc)
    }
}

fn violation(kind: BundleError, node: Option<Node>, detail: String) -> BundleViolation {
    BundleViolation { kind, node, edge: None, detail }
}

/// Validates a bundle of `p`, then runs the visibility instrumentation.
pub fn check_bundle(b: &Bundle, p: &Protocol) -> Result<(), Vec<BundleViolation>> {
    let mut out = Vec::new();
    let nodes: Vec<Node> = b.nodes().collect();
    let mut incoming: BTreeMap<Node, usize> = BTreeMap::new();
    for &(x, y) in &b.edges {
        let edge_err = |kind, detail: &str| BundleViolation { kind, node: None, edge: Some((x, y)), detail: detail.into() };
        let (Some(ex), Some(ey)) = (b.event(x), b.event(y)) else {
            out.push(edge_err(BundleError::BadNode, "edge names a missing node"));
            continue;
        };
        if ex.dir != Dir::Send || ey.dir != Dir::Recv {
            out.push(edge_err(BundleError::Direction, "edges run from transmissions to receptions"));
        }
        if ex.msg != ey.msg {
            out.push(edge_err(BundleError::MessageMismatch, &format!("sent {} but received {}", ex.msg, ey.msg)));
        }
        *incoming.entry(y).or_default() += 1;
    }
    for &n in &nodes {
        if b.event(n).unwrap().dir == Dir::Recv {
            let c = incoming.get(&n).copied().unwrap_or(0);
            if c != 1 {
                out.push(violation(BundleError::Incoming, Some(n), format!("{c} incoming edges")));
            }
        }
    }
    let anc = b.ancestry(&nodes);
    if anc.is_none() {
        out.push(violation(BundleError::Cycle, None, "communication and strand order are cyclic".into()));
    }
    let constants = b.vars();
    for (s, st) in b.strands.iter().enumerate() {
        check_strand(s, st, p, &constants, &mut out);
    }
    let restricted: BTreeSet<&Term> = b.non.iter().chain(b.uniq.iter()).collect();
    for (s, st) in b.strands.iter().enumerate() {
        if let BundleStrandKind::Adversary(AdvKind::Create) = st.kind {
            if let Some(ev) = st.events.first() {
                if restricted.contains(&ev.msg) {
                    out.push(violation(BundleError::AdversaryShape, Some((s, 0)), format!("creates restricted {}", ev.msg)));
                }
            }
        }
    }
    for t in &b.non {
        for (s, st) in b.strands.iter().enumerate() {
            for i in 1..=st.events.len() {
                if crate::algebra::originates_at(t, &st.events, i) {
                    out.push(violation(BundleError::NonOrigination, Some((s, i - 1)), format!("{t} originates")));
                }
            }
        }
    }
    for t in &b.uniq {
        let mut at = Vec::new();
        for (s, st) in b.strands.iter().enumerate() {
            for i in 1..=st.events.len() {
                if crate::algebra::chosen_at(t, &st.events, i) {
                    at.push((s, i - 1));
                }
            }
        }
        if at.len() > 1 {
            out.push(violation(BundleError::UniqGen, Some(at[1]), format!("{t} chosen at {} nodes", at.len())));
        }
    }
    if let Some(anc) = &anc {
        visibility(b, &nodes, anc, &mut out);
    }
    if out.is_empty() {
        Ok(())
    } else {
        Err(out)
    }
}

fn check_strand(s: usize, st: &BundleStrand, p: &Protocol, constants: &BTreeSet<Var>, out: &mut Vec<BundleViolation>) {
    let evs = &st.events;
    let shape_err = |detail: String| violation(BundleError::AdversaryShape, Some((s, 0)), detail);
    let dirs: String = evs.iter().map(|e| e.dir.sign()).collect();
    let m = |i: usize| &evs[i].msg;
    match &st.kind {
        BundleStrandKind::Regular { role } => {
            let Some((_, r)) = p.role(role) else {
                out.push(violation(BundleError::NotRoleInstance, Some((s, 0)), format!("unknown role {role}")));
                return;
            };
            if evs.is_empty() || evs.len() > r.len() || evs.iter().zip(&r.trace).any(|(a, b)| a.dir != b.dir) {
                out.push(violation(BundleError::NotRoleInstance, Some((s, 0)), format!("not a prefix of {role}")));
                return;
            }
            let pairs: Vec<(Term, Term)> = r.trace.iter().zip(evs).map(|(a, b)| (a.msg.clone(), b.msg.clone())).collect();
            if unify::match_system(&pairs, constants).is_empty() {
                out.push(violation(BundleError::NotRoleInstance, Some((s, 0)), format!("no instance of {role} matches")));
            }
        }
        BundleStrandKind::Listener => {
            if dirs != "-+" || m(0) != m(1) {
                out.push(violation(BundleError::NotRoleInstance, Some((s, 0)), "malformed listener".into()));
            }
        }
        BundleStrandKind::Adversary(k) => {
            let ok = match k {
                AdvKind::Create => dirs == "+" && creatable_atom(m(0)),
                AdvKind::Pair => dirs == "--+" && *m(2) == Term::pair(m(0).clone(), m(1).clone()),
                AdvKind::Sep => dirs == "-++" && *m(0) == Term::pair(m(1).clone(), m(2).clone()),
                AdvKind::Enc => {
                    dirs == "--+" && *m(2) == Term::enc(m(0).clone(), m(1).clone()) && m(2).is_encryption()
                }
                AdvKind::Dec => {
                    dirs == "--+"
                        && m(0).decryption_key().as_ref() == Some(m(1))
                        && matches!(m(0), Term::SymEnc(p, _) | Term::AsymEnc(p, _) if **p == *m(2))
                }
                AdvKind::Mul => {
                    dirs == "--+"
                        && matches!((m(0), m(1), m(2)), (Term::FieldVal(a), Term::FieldVal(b), Term::FieldVal(c)) if a.mul(b) == *c)
                }
                AdvKind::Inv => {
                    dirs == "-+" && matches!((m(0), m(1)), (Term::FieldVal(a), Term::FieldVal(c)) if a.inv() == *c)
                }
                AdvKind::Exp => {
                    dirs == "--+"
                        && matches!((m(0), m(1), m(2)), (Term::GroupVal(a), Term::FieldVal(b), Term::GroupVal(c)) if a.mul(b) == *c)
                }
                AdvKind::Add | AdvKind::Neg | AdvKind::GroupMul => {
                    out.push(violation(BundleError::Additive, Some((s, 0)), format!("additive strand {k:?}")));
                    return;
                }
            };
            if !ok {
                out.push(shape_err(format!("malformed {k:?} strand")));
                return;
            }
            // A field value originating here is the whole message.
            for (i, ev) in evs.iter().enumerate() {
                if ev.dir != Dir::Send {
                    continue;
                }
                for (_, sub) in ev.msg.carried_positions() {
                    if matches!(sub, Term::FieldVal(_)) && sub != &ev.msg && !evs[..i].iter().any(|e| e.msg.carried_in(sub)) {
                        out.push(violation(BundleError::AdvVisible, Some((s, i)), format!("{sub} originates inside {}", ev.msg)));
                    }
                }
            }
        }
    }
}

fn creatable_atom(t: &Term) -> bool {
    match t {
        Term::Var(v) => v.sort != Sort::Node,
        Term::Const(_) => true,
        Term::FieldVal(m) => m.is_one() || m.single_var().is_some(),
        Term::GroupVal(m) => m.is_one() || matches!(m.single_var(), Some(v) if v.sort == Sort::Grp && m.degree(v) == 1),
        Term::Pk(a) => matches!(**a, Term::Var(_)),
        Term::Inv(a) => matches!(&**a, Term::Pk(x) if matches!(**x, Term::Var(_))),
        Term::Ltk(a, b) => matches!((&**a, &**b), (Term::Var(_), Term::Var(_))),
        _ => false,
    }
}

/// Visibility conditions with every variable read as a transcendental.
fn visibility(b: &Bundle, nodes: &[Node], anc: &[Vec<bool>], out: &mut Vec<BundleViolation>) {
    let visible_vars: Vec<BTreeSet<Var>> = nodes
        .iter()
        .map(|n| {
            b.event(*n)
                .unwrap()
                .msg
                .visible_parts()
                .into_iter()
                .filter_map(|t| match t {
                    Term::FieldVal(m) => m.single_var().filter(|v| m.degree(v) == 1).cloned(),
                    _ => None,
                })
                .collect()
        })
        .collect();
    let seen_by = |i: usize| -> BTreeSet<Var> {
        let mut s = BTreeSet::new();
        for (j, vs) in visible_vars.iter().enumerate() {
            if anc[i][j] {
                s.extend(vs.iter().cloned());
            }
        }
        s
    };
    let regular_group: Vec<(usize, Monomial)> = nodes
        .iter()
        .enumerate()
        .filter(|(_, n)| !matches!(b.strands[n.0].kind, BundleStrandKind::Adversary(_)))
        .filter(|(_, n)| b.event(**n).unwrap().dir == Dir::Send)
        .flat_map(|(i, n)| {
            b.event(*n)
                .unwrap()
                .msg
                .carried_positions()
                .into_iter()
                .filter_map(move |(_, t)| match t {
                    Term::GroupVal(m) => Some((i, m.clone())),
                    _ => None,
                })
                .collect::<Vec<_>>()
        })
        .collect();
    for (i, n) in nodes.iter().enumerate() {
        let msg = &b.event(*n).unwrap().msg;
        let known = seen_by(i);
        for part in msg.visible_parts() {
            if let Term::FieldVal(m) = part {
                for v in m.vars() {
                    if !known.contains(v) {
                        out.push(violation(BundleError::SimpleVisible, Some(*n), format!("{v} in {part} never visible before")));
                    }
                }
            }
        }
        for (_, t) in msg.carried_positions() {
            let Term::GroupVal(mu) = t else { continue };
            let plain = |m: &Monomial| m.vars().all(|v| v.sort == Sort::Grp || known.contains(v));
            let ok = plain(mu)
                || regular_group.iter().any(|(j, xi)| anc[i][*j] && {
                    let nu = mu.div(xi);
                    let ok = nu.vars().all(|v| v.sort != Sort::Grp && known.contains(v));
                    ok
                });
            if !ok {
                out.push(violation(BundleError::GroupVisible, Some(*n), format!("{t} has no visible decomposition")));
            }
        }
    }
}

/// Explicit bundle for a derivable skeleton: its strands, then one
/// adversary web per reception.
pub fn synthesize_bundle(sk: &Skeleton, webs: &BTreeMap<Node, Arc<Recipe>>) -> Bundle {
    let mut b = Bundle {
        strands: sk
            .strands
            .iter()
            .map(|st| BundleStrand {
                kind: match st.kind {
                    StrandKind::Role(r) => BundleStrandKind::Regular { role: sk.protocol.roles[r].name.clone() },
                    StrandKind::Listener { .. } => BundleStrandKind::Listener,
                },
                events: st.events.clone(),
            })
            .collect(),
        edges: Vec::new(),
        non: sk.non.iter().cloned().collect(),
        uniq: sk.uniq.iter().cloned().collect(),
    };
    for (n, r) in webs {
        let mut memo = BTreeMap::new();
        let src = emit(&mut b, sk, r, &mut memo);
        b.edges.push((src, *n));
    }
    b
}

fn emit(b: &mut Bundle, sk: &Skeleton, r: &Arc<Recipe>, memo: &mut BTreeMap<Arc<Recipe>, Node>) -> Node {
    if let Some(n) = memo.get(r) {
        return *n;
    }
    let leaf = |n: Node| sk.msg(n).clone();
    let value = r.eval(&leaf).expect("recipe replays");
    let strand = |b: &mut Bundle, kind: AdvKind, inputs: Vec<Node>, outputs: Vec<Term>| -> usize {
        let s = b.strands.len();
        let mut events: Vec<Event> = inputs.iter().map(|n| Event::recv(b.event(*n).unwrap().msg.clone())).collect();
        for (i, n) in inputs.iter().enumerate() {
            b.edges.push((*n, (s, i)));
        }
        events.extend(outputs.into_iter().map(Event::send));
        b.strands.push(BundleStrand { kind: BundleStrandKind::Adversary(kind), events });
        s
    };
    let node = match &**r {
        Recipe::Leaf(n) => *n,
        Recipe::Create(t) => (strand(b, AdvKind::Create, vec![], vec![t.clone()]), 0),
        Recipe::Fst(x) | Recipe::Snd(x) => {
            let src = emit(b, sk, x, memo);
            let Term::Pair(p, q) = b.event(src).unwrap().msg.clone() else { panic!("separating a non-pair") };
            let s = strand(b, AdvKind::Sep, vec![src], vec![(*p).clone(), (*q).clone()]);
            // Both halves come from one separation.
            memo.insert(rc(Recipe::Fst(x.clone())), (s, 1));
            memo.insert(rc(Recipe::Snd(x.clone())), (s, 2));
            (s, if matches!(**r, Recipe::Fst(_)) { 1 } else { 2 })
        }
        Recipe::Decrypt(c, k) => {
            let (c, k) = (emit(b, sk, c, memo), emit(b, sk, k, memo));
            (strand(b, AdvKind::Dec, vec![c, k], vec![value]), 2)
        }
        Recipe::Pair(x, y) => {
            let (x, y) = (emit(b, sk, x, memo), emit(b, sk, y, memo));
            (strand(b, AdvKind::Pair, vec![x, y], vec![value]), 2)
        }
        Recipe::Encrypt(x, y) => {
            let (x, y) = (emit(b, sk, x, memo), emit(b, sk, y, memo));
            (strand(b, AdvKind::Enc, vec![x, y], vec![value]), 2)
        }
        Recipe::Mul(x, y) => {
            let (x, y) = (emit(b, sk, x, memo), emit(b, sk, y, memo));
            (strand(b, AdvKind::Mul, vec![x, y], vec![value]), 2)
        }
        Recipe::FieldInv(x) => {
            let x = emit(b, sk, x, memo);
            (strand(b, AdvKind::Inv, vec![x], vec![value]), 1)
        }
        Recipe::Exp(x, y) => {
            let (x, y) = (emit(b, sk, x, memo), emit(b, sk, y, memo));
            (strand(b, AdvKind::Exp, vec![x, y], vec![value]), 2)
        }
    };
    memo.insert(r.clone(), node);
    node
}

/// A field variable renamed to a fresh one, for building cancellations by hand.
pub fn shift(w: &Var, w2: &Var, by: &Monomial) -> Subst {
    Subst::single(w.clone(), Term::FieldVal(Monomial::var(w2.clone()).mul(by)))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn v(n: &str, s: Sort) -> Var {
        Var::new(n, s)
    }

    fn fv(x: &Var) -> Term {
        Term::FieldVal(Monomial::var(x.clone()))
    }

    #[test]
    fn lattice_basic() {
        let gens = vec![vec![2, 0], vec![0, 3], vec![1, 1]];
        let x = lattice_solve(&gens, &[3, 4]).unwrap();
        let got: Vec<i64> = (0..2).map(|r| (0..3).map(|c| gens[c][r] * x[c]).sum()).collect();
        assert_eq!(got, vec![3, 4]);
        assert!(lattice_solve(&[vec![2, 0]], &[1, 0]).is_none());
        assert_eq!(lattice_solve(&[], &[0, 0]), Some(vec![]));
    }

    #[test]
    fn pair_of_known_values() {
        let na = Term::var(v("na", Sort::Text));
        let x = v("x", Sort::Trsc);
        let gx = Term::GroupVal(Monomial::var(x.clone()));
        let restricted: BTreeSet<Term> = [na.clone(), fv(&x)].into();
        let k = Knowledge::new(vec![(na.clone(), Recipe::Leaf((0, 0))), (gx.clone(), Recipe::Leaf((0, 1)))], restricted);
        let r = k.derive(&Term::pair(na.clone(), gx.clone())).unwrap();
        assert_eq!(*r, Recipe::Pair(rc(Recipe::Leaf((0, 0))), rc(Recipe::Leaf((0, 1)))));
    }

    #[test]
    fn encryption_under_secret_key_blocks() {
        let na = Term::var(v("na", Sort::Text));
        let nb = Term::var(v("nb", Sort::Text));
        let b = v("b", Sort::Trsc);
        let key = Term::hash(Term::GroupVal(Monomial::var(b.clone())));
        let t = Term::enc(Term::pair(na.clone(), nb.clone()), key.clone());
        let k = Knowledge::new(vec![], [fv(&b)].into());
        assert!(!k.derivable(&t));
        assert_eq!(k.critical(&t), Some(t.clone()));
        // The key itself is blocked by g^b.
        assert_eq!(k.critical(&key), Some(key.clone()));
    }

    #[test]
    fn fresh_exponent_created() {
        let z = v("z", Sort::Trsc);
        let k = Knowledge::new(vec![], BTreeSet::new());
        let r = k.derive(&Term::GroupVal(Monomial::var(z.clone()))).unwrap();
        assert_eq!(*r, Recipe::Exp(rc(Recipe::Create(Term::gen())), rc(Recipe::Create(fv(&z)))));
    }

    #[test]
    fn protection() {
        let na = Term::var(v("na", Sort::Text));
        let nb = Term::var(v("nb", Sort::Text));
        let k = Term::var(v("K", Sort::Skey));
        let e = Term::enc(Term::pair(na, nb.clone()), k);
        let escape: BTreeSet<Term> = [e.clone()].into();
        assert!(protected_by(&nb, &escape, &e));
        assert!(!protected_by(&nb, &escape, &nb));
    }

    #[test]
    fn field_span() {
        let x = v("x", Sort::Trsc);
        let y = v("y", Sort::Trsc);
        let w = v("w", Sort::Fld);
        let xy = Term::FieldVal(Monomial::from_pairs([(x.clone(), 1), (y.clone(), 1)]));
        let k = Knowledge::new(vec![(xy.clone(), Recipe::Leaf((0, 0)))], [fv(&x), fv(&y)].into());
        let target = Monomial::from_pairs([(x.clone(), -2), (y.clone(), -2), (w.clone(), 1)]);
        let r = k.derive(&Term::FieldVal(target.clone())).unwrap();
        let leaf = |_: Node| xy.clone();
        assert_eq!(r.eval(&leaf), Some(Term::FieldVal(target)));
        assert!(!k.derivable(&fv(&x)));
    }
}
