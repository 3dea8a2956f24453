//! Order-sorted multiplicative message algebra.
//!
//! Field values are monomials over field and transcendental variables;
//! group values are always `g^μ`. Hashes are symmetric encryptions of a
//! reserved public constant under the hashed message.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Sort {
    Mesg,
    Basic,
    Akey,
    Skey,
    Name,
    Text,
    Fld,
    Trsc,
    Grp,
    Node,
}

impl Sort {
    pub fn parse(s: &str) -> Option<Sort> {
        Some(match s {
            "mesg" => Sort::Mesg,
            "basic" => Sort::Basic,
            "akey" => Sort::Akey,
            "skey" => Sort::Skey,
            "name" => Sort::Name,
            "text" => Sort::Text,
            "fld" => Sort::Fld,
            "trsc" => Sort::Trsc,
            "grp" => Sort::Grp,
            "node" => Sort::Node,
            _ => return None,
        })
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Sort::Mesg => "mesg",
            Sort::Basic => "basic",
            Sort::Akey => "akey",
            Sort::Skey => "skey",
            Sort::Name => "name",
            Sort::Text => "text",
            Sort::Fld => "fld",
            Sort::Trsc => "trsc",
            Sort::Grp => "grp",
            Sort::Node => "node",
        }
    }

    /// Sorts the adversary may freshly create values of.
    pub fn is_create(self) -> bool {
        matches!(self, Sort::Skey | Sort::Name | Sort::Text | Sort::Akey | Sort::Trsc)
    }

    pub fn is_field(self) -> bool {
        matches!(self, Sort::Fld | Sort::Trsc)
    }

    /// Sorts of variables stored inside monomials. A `grp` variable `h`
    /// stands for its own discrete log, so `h` is `g^h`.
    pub fn in_exponent(self) -> bool {
        matches!(self, Sort::Fld | Sort::Trsc | Sort::Grp)
    }

    /// The subsort order: `trsc ≤ fld`, every message sort `≤ basic ≤ mesg`.
    pub fn leq(self, other: Sort) -> bool {
        if self == other {
            return true;
        }
        match (self, other) {
            (Sort::Node, _) | (_, Sort::Node) => false,
            (Sort::Trsc, Sort::Fld) => true,
            (_, Sort::Mesg) => true,
            (Sort::Mesg, _) => false,
            (_, Sort::Basic) => true,
            _ => false,
        }
    }
}

impl fmt::Display for Sort {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var {
    pub name: Arc<str>,
    pub sort: Sort,
}

impl Var {
    pub fn new(name: &str, sort: Sort) -> Var {
        Var { name: Arc::from(name), sort }
    }

    /// Name with any fresh-variable suffix removed.
    pub fn base(&self) -> &str {
        match self.name.find('#') {
            Some(i) => &self.name[..i],
            None => &self.name,
        }
    }
}

impl fmt::Display for Var {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.name)
    }
}

/// Product of variable powers. No stored exponent is zero.
#[derive(Debug, Clone, Default, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Monomial(BTreeMap<Var, i64>);

impl Monomial {
    pub fn one() -> Monomial {
        Monomial(BTreeMap::new())
    }

    pub fn var(v: Var) -> Monomial {
        let mut m = BTreeMap::new();
        m.insert(v, 1);
        Monomial(m)
    }

    pub fn from_pairs<I: IntoIterator<Item = (Var, i64)>>(it: I) -> Monomial {
        let mut m = Monomial::one();
        for (v, e) in it {
            m.add_factor(v, e);
        }
        m
    }

    pub fn add_factor(&mut self, v: Var, e: i64) {
        if e == 0 {
            return;
        }
        let now = self.degree(&v) + e;
        if now == 0 {
            self.0.remove(&v);
        } else {
            self.0.insert(v, now);
        }
    }

    pub fn is_one(&self) -> bool {
        self.0.is_empty()
    }

    pub fn degree(&self, v: &Var) -> i64 {
        self.0.get(v).copied().unwrap_or(0)
    }

    pub fn factors(&self) -> impl Iterator<Item = (&Var, i64)> {
        self.0.iter().map(|(v, e)| (v, *e))
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn vars(&self) -> impl Iterator<Item = &Var> {
        self.0.keys()
    }

    /// `Some(v)` when the monomial is exactly `v¹`.
    pub fn single_var(&self) -> Option<&Var> {
        if self.0.len() == 1 {
            let (v, e) = self.0.iter().next().unwrap();
            if *e == 1 {
                return Some(v);
            }
        }
        None
    }

    pub fn mul(&self, other: &Monomial) -> Monomial {
        let mut out = self.clone();
        for (v, e) in other.factors() {
            out.add_factor(v.clone(), e);
        }
        out
    }

    pub fn pow(&self, k: i64) -> Monomial {
        if k == 0 {
            return Monomial::one();
        }
        Monomial(self.0.iter().map(|(v, e)| (v.clone(), e * k)).collect())
    }

    pub fn inv(&self) -> Monomial {
        self.pow(-1)
    }

    pub fn div(&self, other: &Monomial) -> Monomial {
        self.mul(&other.inv())
    }

    /// Restriction to the variables satisfying `keep`.
    pub fn filter<F: Fn(&Var) -> bool>(&self, keep: F) -> Monomial {
        Monomial(
            self.0
                .iter()
                .filter(|(v, _)| keep(v))
                .map(|(v, e)| (v.clone(), *e))
                .collect(),
        )
    }

    /// Sort of the value: `trsc` for a bare transcendental, else `fld`.
    pub fn sort(&self) -> Sort {
        match self.single_var() {
            Some(v) if v.sort == Sort::Trsc => Sort::Trsc,
            _ => Sort::Fld,
        }
    }
}

impl fmt::Display for Monomial {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let mut items: Vec<String> = Vec::new();
        for (v, e) in self.factors() {
            for _ in 0..e.abs() {
                if e > 0 {
                    items.push(v.name.to_string());
                } else {
                    items.push(format!("(rec {})", v.name));
                }
            }
        }
        match items.len() {
            0 => f.write_str("(one)"),
            1 => f.write_str(&items[0]),
            _ => write!(f, "(mul {})", items.join(" ")),
        }
    }
}

/// Reserved plaintext of hashes. The empty tag is not expressible in input files.
pub const HASH_UNIT: &str = "";

#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Term {
    /// Variable of a non-field sort; field and transcendental variables
    /// always appear inside `FieldVal` / `GroupVal`.
    Var(Var),
    /// Public constant (tag) of sort text.
    Const(Arc<str>),
    Pair(Arc<Term>, Arc<Term>),
    SymEnc(Arc<Term>, Arc<Term>),
    AsymEnc(Arc<Term>, Arc<Term>),
    FieldVal(Monomial),
    GroupVal(Monomial),
    Pk(Arc<Term>),
    Ltk(Arc<Term>, Arc<Term>),
    Inv(Arc<Term>),
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum SortError {
    #[error("ill-sorted term: {0}")]
    IllSorted(String),
}

impl Term {
    pub fn var(v: Var) -> Term {
        match v.sort {
            Sort::Fld | Sort::Trsc => Term::FieldVal(Monomial::var(v)),
            Sort::Grp => Term::GroupVal(Monomial::var(v)),
            _ => Term::Var(v),
        }
    }

    pub fn tag(s: &str) -> Term {
        Term::Const(Arc::from(s))
    }

    pub fn pair(a: Term, b: Term) -> Term {
        Term::Pair(Arc::new(a), Arc::new(b))
    }

    /// Right-nested tuple; a single element is returned unchanged.
    pub fn tuple(mut items: Vec<Term>) -> Term {
        assert!(!items.is_empty());
        let mut acc = items.pop().unwrap();
        while let Some(t) = items.pop() {
            acc = Term::pair(t, acc);
        }
        acc
    }

    pub fn senc(m: Term, k: Term) -> Term {
        Term::SymEnc(Arc::new(m), Arc::new(k))
    }

    pub fn aenc(m: Term, k: Term) -> Term {
        Term::AsymEnc(Arc::new(m), Arc::new(k))
    }

    /// Encryption whose flavor follows the key sort.
    pub fn enc(m: Term, k: Term) -> Term {
        if k.sort() == Sort::Akey {
            Term::aenc(m, k)
        } else {
            Term::senc(m, k)
        }
    }

    pub fn hash(m: Term) -> Term {
        Term::senc(Term::tag(HASH_UNIT), m)
    }

    pub fn as_hash(&self) -> Option<&Term> {
        match self {
            Term::SymEnc(p, k) if matches!(&**p, Term::Const(c) if &**c == HASH_UNIT) => Some(k),
            _ => None,
        }
    }

    pub fn is_hash_unit(&self) -> bool {
        matches!(self, Term::Const(c) if &**c == HASH_UNIT)
    }

    pub fn pk(a: Term) -> Term {
        Term::Pk(Arc::new(a))
    }

    pub fn ltk(a: Term, b: Term) -> Term {
        Term::Ltk(Arc::new(a), Arc::new(b))
    }

    /// Key inverse: `inv(inv(k)) = k`, and non-asymmetric keys are their own inverse.
    pub fn inv(k: Term) -> Term {
        match k {
            Term::Inv(inner) => (*inner).clone(),
            other if other.sort() == Sort::Akey => Term::Inv(Arc::new(other)),
            other => other,
        }
    }

    pub fn privk(a: Term) -> Term {
        Term::inv(Term::pk(a))
    }

    pub fn gen() -> Term {
        Term::GroupVal(Monomial::one())
    }

    pub fn one() -> Term {
        Term::FieldVal(Monomial::one())
    }

    pub fn sort(&self) -> Sort {
        match self {
            Term::Var(v) => v.sort,
            Term::Const(_) => Sort::Text,
            Term::Pair(..) | Term::SymEnc(..) | Term::AsymEnc(..) => Sort::Mesg,
            Term::FieldVal(m) => m.sort(),
            Term::GroupVal(_) => Sort::Grp,
            Term::Pk(_) | Term::Inv(_) => Sort::Akey,
            Term::Ltk(..) => Sort::Skey,
        }
    }

    /// A unit is anything but a tuple.
    pub fn is_unit(&self) -> bool {
        !matches!(self, Term::Pair(..))
    }

    pub fn is_encryption(&self) -> bool {
        matches!(self, Term::SymEnc(..) | Term::AsymEnc(..))
    }

    /// Basic values carry no internal positions.
    pub fn is_basic(&self) -> bool {
        !matches!(self, Term::Pair(..) | Term::SymEnc(..) | Term::AsymEnc(..))
    }

    pub fn trsc_var(&self) -> Option<&Var> {
        match self {
            Term::FieldVal(m) => m.single_var().filter(|v| v.sort == Sort::Trsc),
            _ => None,
        }
    }

    /// Key needed to open an encryption with key `k`.
    pub fn decryption_key(&self) -> Option<Term> {
        match self {
            Term::SymEnc(_, k) => Some((**k).clone()),
            Term::AsymEnc(_, k) => Some(Term::inv((**k).clone())),
            _ => None,
        }
    }

    pub fn tuple_items(&self) -> Vec<&Term> {
        let mut out = Vec::new();
        let mut cur = self;
        while let Term::Pair(a, b) = cur {
            out.push(&**a);
            cur = b;
        }
        out.push(cur);
        out
    }

    pub fn depth(&self) -> usize {
        match self {
            Term::Pair(a, b) | Term::SymEnc(a, b) | Term::AsymEnc(a, b) | Term::Ltk(a, b) => {
                1 + a.depth().max(b.depth())
            }
            Term::Pk(a) | Term::Inv(a) => 1 + a.depth(),
            _ => 0,
        }
    }

    /// Every variable occurring in the term, field variables included.
    pub fn vars(&self) -> BTreeSet<Var> {
        let mut out = BTreeSet::new();
        self.collect_vars(&mut out);
        out
    }

    pub fn collect_vars(&self, out: &mut BTreeSet<Var>) {
        match self {
            Term::Var(v) => {
                out.insert(v.clone());
            }
            Term::Const(_) => {}
            Term::Pair(a, b) | Term::SymEnc(a, b) | Term::AsymEnc(a, b) | Term::Ltk(a, b) => {
                a.collect_vars(out);
                b.collect_vars(out);
            }
            Term::Pk(a) | Term::Inv(a) => a.collect_vars(out),
            Term::FieldVal(m) | Term::GroupVal(m) => {
                out.extend(m.vars().cloned());
            }
        }
    }

    /// Submessage at a 1-based position, `None` for ⊥.
    pub fn at_path(&self, pos: &[usize]) -> Option<&Term> {
        let Some((&first, rest)) = pos.split_first() else {
            return Some(self);
        };
        match (self, first) {
            (Term::Pair(a, _), 1) => a.at_path(rest),
            (Term::Pair(_, b), 2) => b.at_path(rest),
            (Term::SymEnc(m, _) | Term::AsymEnc(m, _), 1) => m.at_path(rest),
            (Term::SymEnc(_, k) | Term::AsymEnc(_, k), 2) => k.at_path(rest),
            _ => None,
        }
    }

    /// All positions in the term, each paired with its submessage.
    pub fn positions(&self) -> Vec<(Vec<usize>, &Term)> {
        let mut out = Vec::new();
        walk(self, &mut Vec::new(), &mut out, true);
        out
    }

    /// Carried positions: never descend into a key.
    pub fn carried_positions(&self) -> Vec<(Vec<usize>, &Term)> {
        let mut out = Vec::new();
        walk(self, &mut Vec::new(), &mut out, false);
        out
    }

    pub fn carried_in(&self, t: &Term) -> bool {
        self.carried_path_to(t).is_some()
    }

    /// Witness position for `t` carried in `self`.
    pub fn carried_path_to(&self, t: &Term) -> Option<Vec<usize>> {
        if self == t {
            return Some(Vec::new());
        }
        let (child, idx) = match self {
            Term::Pair(a, b) => {
                if let Some(mut p) = a.carried_path_to(t) {
                    p.insert(0, 1);
                    return Some(p);
                }
                (b, 2)
            }
            Term::SymEnc(m, _) | Term::AsymEnc(m, _) => (m, 1),
            _ => return None,
        };
        let mut p = child.carried_path_to(t)?;
        p.insert(0, idx);
        Some(p)
    }

    /// `t` reachable from `self` through tuples only.
    pub fn visible_in(&self, t: &Term) -> bool {
        if self == t {
            return true;
        }
        match self {
            Term::Pair(a, b) => a.visible_in(t) || b.visible_in(t),
            _ => false,
        }
    }

    /// Terms reachable through tuples only.
    pub fn visible_parts(&self) -> Vec<&Term> {
        let mut out = Vec::new();
        let mut stack = vec![self];
        while let Some(t) = stack.pop() {
            match t {
                Term::Pair(a, b) => {
                    stack.push(b);
                    stack.push(a);
                }
                other => out.push(other),
            }
        }
        out
    }

    /// `t` is a path endpoint, or a transcendental with nonzero degree at one.
    pub fn present_in(&self, t: &Term) -> bool {
        present(t, self)
    }

    /// Variable occurrence after monomial simplification.
    pub fn occurs(&self, v: &Var) -> bool {
        match self {
            Term::Var(w) => w == v,
            Term::Const(_) => false,
            Term::Pair(a, b) | Term::SymEnc(a, b) | Term::AsymEnc(a, b) | Term::Ltk(a, b) => {
                a.occurs(v) || b.occurs(v)
            }
            Term::Pk(a) | Term::Inv(a) => a.occurs(v),
            Term::FieldVal(m) | Term::GroupVal(m) => m.degree(v) != 0,
        }
    }
}

fn walk<'a>(t: &'a Term, pos: &mut Vec<usize>, out: &mut Vec<(Vec<usize>, &'a Term)>, keys: bool) {
    out.push((pos.clone(), t));
    match t {
        Term::Pair(a, b) => {
            pos.push(1);
            walk(a, pos, out, keys);
            pos.pop();
            pos.push(2);
            walk(b, pos, out, keys);
            pos.pop();
        }
        Term::SymEnc(m, k) | Term::AsymEnc(m, k) => {
            pos.push(1);
            walk(m, pos, out, keys);
            pos.pop();
            if keys {
                pos.push(2);
                walk(k, pos, out, keys);
                pos.pop();
            }
        }
        _ => {}
    }
}

fn present(t: &Term, m: &Term) -> bool {
    if t == m {
        return true;
    }
    match m {
        Term::Pair(a, b) | Term::SymEnc(a, b) | Term::AsymEnc(a, b) => present(t, a) || present(t, b),
        Term::FieldVal(mu) | Term::GroupVal(mu) => match t.trsc_var() {
            Some(x) => mu.degree(x) != 0,
            None => false,
        },
        _ => false,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Dir {
    #[serde(rename = "send")]
    Send,
    #[serde(rename = "recv")]
    Recv,
}

impl Dir {
    pub fn sign(self) -> char {
        match self {
            Dir::Send => '+',
            Dir::Recv => '-',
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Event {
    pub dir: Dir,
    pub msg: Term,
}

impl Event {
    pub fn send(msg: Term) -> Event {
        Event { dir: Dir::Send, msg }
    }
    pub fn recv(msg: Term) -> Event {
        Event { dir: Dir::Recv, msg }
    }
}

/// `t` originates at 1-based event `i`: a transmission carrying `t` with no
/// earlier event carrying it.
pub fn originates_at(t: &Term, trace: &[Event], i: usize) -> bool {
    if i == 0 || i > trace.len() {
        return false;
    }
    let ev = &trace[i - 1];
    ev.dir == Dir::Send && ev.msg.carried_in(t) && trace[..i - 1].iter().all(|e| !e.msg.carried_in(t))
}

/// Like [`originates_at`] with presence in place of carrying.
pub fn chosen_at(t: &Term, trace: &[Event], i: usize) -> bool {
    if i == 0 || i > trace.len() {
        return false;
    }
    let ev = &trace[i - 1];
    ev.dir == Dir::Send && ev.msg.present_in(t) && trace[..i - 1].iter().all(|e| !e.msg.present_in(t))
}

/// Untyped syntax tree as written in input files; [`normalize`] checks sorts
/// and produces the canonical [`Term`].
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Expr {
    Var(Var),
    Tag(String),
    Gen,
    One,
    Cat(Vec<Expr>),
    Enc(Box<Expr>, Box<Expr>),
    SEnc(Box<Expr>, Box<Expr>),
    Hash(Vec<Expr>),
    Exp(Box<Expr>, Box<Expr>),
    Mul(Vec<Expr>),
    Rec(Box<Expr>),
    Pubk(Box<Expr>),
    Privk(Box<Expr>),
    Ltk(Box<Expr>, Box<Expr>),
    Invk(Box<Expr>),
    /// Additive operator as written; never normalizes.
    Additive(String, Vec<Expr>),
}

impl Expr {
    pub fn var(name: &str, sort: Sort) -> Expr {
        Expr::Var(Var::new(name, sort))
    }

    pub fn exp(h: Expr, w: Expr) -> Expr {
        Expr::Exp(Box::new(h), Box::new(w))
    }

    /// Syntax tree for a canonical term.
    pub fn from_term(t: &Term) -> Expr {
        match t {
            Term::Var(v) => Expr::Var(v.clone()),
            Term::Const(c) => Expr::Tag(c.to_string()),
            Term::Pair(a, b) => Expr::Cat(vec![Expr::from_term(a), Expr::from_term(b)]),
            Term::SymEnc(m, k) => {
                if t.as_hash().is_some() {
                    Expr::Hash(vec![Expr::from_term(k)])
                } else {
                    Expr::SEnc(Box::new(Expr::from_term(m)), Box::new(Expr::from_term(k)))
                }
            }
            Term::AsymEnc(m, k) => Expr::Enc(Box::new(Expr::from_term(m)), Box::new(Expr::from_term(k))),
            Term::FieldVal(mu) => mono_expr(mu),
            Term::GroupVal(mu) => match split_group_base(mu) {
                Some((h, rest)) if rest.is_one() => Expr::Var(h.clone()),
                Some((h, rest)) => Expr::exp(Expr::Var(h.clone()), mono_expr(&rest)),
                None if mu.is_one() => Expr::Gen,
                None => Expr::exp(Expr::Gen, mono_expr(mu)),
            },
            Term::Pk(a) => Expr::Pubk(Box::new(Expr::from_term(a))),
            Term::Ltk(a, b) => Expr::Ltk(Box::new(Expr::from_term(a)), Box::new(Expr::from_term(b))),
            Term::Inv(k) => Expr::Invk(Box::new(Expr::from_term(k))),
        }
    }
}

/// A group value `h^ν` with a single `grp` variable of degree one.
fn split_group_base(mu: &Monomial) -> Option<(&Var, Monomial)> {
    let mut grp = mu.factors().filter(|(v, _)| v.sort == Sort::Grp);
    let (h, e) = grp.next()?;
    if e != 1 || grp.next().is_some() {
        return None;
    }
    Some((h, mu.filter(|v| v != h)))
}

fn mono_expr(mu: &Monomial) -> Expr {
    let mut items = Vec::new();
    for (v, e) in mu.factors() {
        for _ in 0..e.abs() {
            let x = Expr::Var(v.clone());
            items.push(if e > 0 { x } else { Expr::Rec(Box::new(x)) });
        }
    }
    match items.len() {
        0 => Expr::One,
        1 => items.pop().unwrap(),
        _ => Expr::Mul(items),
    }
}

fn ill(msg: String) -> SortError {
    SortError::IllSorted(msg)
}

fn expect_field(t: Term, ctx: &str) -> Result<Monomial, SortError> {
    match t {
        Term::FieldVal(m) => Ok(m),
        other => Err(ill(format!("{ctx} expects a field value, got {other}"))),
    }
}

/// Canonical representative of an expression: nested exponentiations
/// collapse into one monomial, zero exponents vanish, `inv(inv(k)) = k`.
pub fn normalize(e: &Expr) -> Result<Term, SortError> {
    Ok(match e {
        Expr::Var(v) => {
            if v.sort == Sort::Node {
                return Err(ill(format!("node variable {v} used as a message")));
            }
            Term::var(v.clone())
        }
        Expr::Tag(s) => Term::tag(s),
        Expr::Gen => Term::gen(),
        Expr::One => Term::one(),
        Expr::Cat(items) => {
            if items.is_empty() {
                return Err(ill("empty tuple".into()));
            }
            Term::tuple(items.iter().map(normalize).collect::<Result<Vec<_>, _>>()?)
        }
        Expr::Enc(m, k) => Term::enc(normalize(m)?, normalize(k)?),
        Expr::SEnc(m, k) => Term::senc(normalize(m)?, normalize(k)?),
        Expr::Hash(items) => {
            if items.is_empty() {
                return Err(ill("empty hash".into()));
            }
            Term::hash(Term::tuple(items.iter().map(normalize).collect::<Result<Vec<_>, _>>()?))
        }
        Expr::Exp(h, w) => {
            let base = match normalize(h)? {
                Term::GroupVal(m) => m,
                other => return Err(ill(format!("exponentiating non-group value {other}"))),
            };
            let w = expect_field(normalize(w)?, "exp")?;
            Term::GroupVal(base.mul(&w))
        }
        Expr::Mul(items) => {
            let mut acc = Monomial::one();
            for it in items {
                acc = acc.mul(&expect_field(normalize(it)?, "mul")?);
            }
            Term::FieldVal(acc)
        }
        Expr::Rec(w) => Term::FieldVal(expect_field(normalize(w)?, "rec")?.inv()),
        Expr::Pubk(a) => {
            let a = normalize(a)?;
            if a.sort() != Sort::Name {
                return Err(ill(format!("pubk expects a name, got {a}")));
            }
            Term::pk(a)
        }
        Expr::Privk(a) => {
            let a = normalize(a)?;
            if a.sort() != Sort::Name {
                return Err(ill(format!("privk expects a name, got {a}")));
            }
            Term::privk(a)
        }
        Expr::Ltk(a, b) => {
            let a = normalize(a)?;
            let b = normalize(b)?;
            if a.sort() != Sort::Name || b.sort() != Sort::Name {
                return Err(ill(format!("ltk expects names, got {a} and {b}")));
            }
            Term::ltk(a, b)
        }
        Expr::Additive(op, _) => return Err(ill(format!("additive operator {op}"))),
        Expr::Invk(k) => {
            let k = normalize(k)?;
            if k.sort() != Sort::Akey {
                return Err(ill(format!("invk expects an asymmetric key, got {k}")));
            }
            Term::inv(k)
        }
    })
}

impl fmt::Display for Term {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Term::Var(v) => write!(f, "{v}"),
            Term::Const(c) => write!(f, "{c:?}"),
            Term::Pair(..) => {
                f.write_str("(cat")?;
                for it in self.tuple_items() {
                    write!(f, " {it}")?;
                }
                f.write_str(")")
            }
            Term::SymEnc(m, k) => match self.as_hash() {
                Some(h) => {
                    f.write_str("(hash")?;
                    for it in h.tuple_items() {
                        write!(f, " {it}")?;
                    }
                    f.write_str(")")
                }
                None => write!(f, "(senc {m} {k})"),
            },
            Term::AsymEnc(m, k) => write!(f, "(enc {m} {k})"),
            Term::FieldVal(mu) => write!(f, "{mu}"),
            Term::GroupVal(mu) => match split_group_base(mu) {
                Some((h, rest)) if rest.is_one() => write!(f, "{h}"),
                Some((h, rest)) => write!(f, "(exp {h} {rest})"),
                None if mu.is_one() => f.write_str("(gen)"),
                None => write!(f, "(exp (gen) {mu})"),
            },
            Term::Pk(a) => write!(f, "(pubk {a})"),
            Term::Ltk(a, b) => write!(f, "(ltk {a} {b})"),
            Term::Inv(k) => match &**k {
                Term::Pk(a) => write!(f, "(privk {a})"),
                _ => write!(f, "(invk {k})"),
            },
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn x() -> Var {
        Var::new("x", Sort::Trsc)
    }
    fn y() -> Var {
        Var::new("y", Sort::Trsc)
    }
    fn name(n: &str) -> Term {
        Term::var(Var::new(n, Sort::Name))
    }
    fn text(n: &str) -> Term {
        Term::var(Var::new(n, Sort::Text))
    }

    #[test]
    fn nested_exp_collapses() {
        let e = Expr::exp(Expr::exp(Expr::Gen, Expr::Var(x())), Expr::Var(y()));
        let t = normalize(&e).unwrap();
        assert_eq!(t, Term::GroupVal(Monomial::from_pairs([(x(), 1), (y(), 1)])));
    }

    #[test]
    fn field_cancellation() {
        let e = Expr::Mul(vec![Expr::Var(x()), Expr::Var(y()), Expr::Rec(Box::new(Expr::Var(x())))]);
        assert_eq!(normalize(&e).unwrap(), Term::FieldVal(Monomial::var(y())));
    }

    #[test]
    fn double_inverse_removed() {
        let k = Expr::Pubk(Box::new(Expr::var("a", Sort::Name)));
        let e = Expr::Invk(Box::new(Expr::Invk(Box::new(k.clone()))));
        assert_eq!(normalize(&e).unwrap(), normalize(&k).unwrap());
    }

    #[test]
    fn exp_of_non_group_is_sort_error() {
        let e = Expr::exp(Expr::var("n", Sort::Text), Expr::Var(x()));
        assert!(normalize(&e).is_err());
    }

    #[test]
    fn sort_order() {
        assert!(Sort::Trsc.leq(Sort::Fld));
        assert!(!Sort::Fld.leq(Sort::Trsc));
        assert!(Sort::Name.leq(Sort::Basic));
        assert!(Sort::Basic.leq(Sort::Mesg));
        assert!(!Sort::Node.leq(Sort::Mesg));
        assert!(!Sort::Name.leq(Sort::Text));
    }

    #[test]
    fn paths() {
        let a = name("a");
        let b = name("b");
        let p = Term::pair(a.clone(), b.clone());
        assert_eq!(p.at_path(&[2]), Some(&b));
        let k = Term::var(Var::new("k", Sort::Skey));
        let e = Term::senc(text("m"), k.clone());
        assert_eq!(e.at_path(&[2]), Some(&k));
        assert_eq!(e.at_path(&[]), Some(&e));
        assert_eq!(e.at_path(&[3]), None);
        let g = Term::GroupVal(Monomial::var(x()));
        assert_eq!(g.at_path(&[1]), None);
    }

    #[test]
    fn carried_and_visible() {
        let n = text("n");
        let k = Term::var(Var::new("K", Sort::Skey));
        let xv = Term::var(x());
        let e = Term::senc(Term::pair(n.clone(), xv), k.clone());
        assert!(e.carried_in(&n));
        assert!(!Term::senc(n.clone(), k.clone()).carried_in(&k));
        assert!(!Term::senc(n.clone(), k.clone()).visible_in(&n));
        assert!(Term::pair(n.clone(), k.clone()).visible_in(&n));
        assert_eq!(e.carried_path_to(&n), Some(vec![1, 1]));
    }

    #[test]
    fn presence() {
        let xt = Term::var(x());
        let g = Term::GroupVal(Monomial::from_pairs([(x(), 1), (y(), 1)]));
        assert!(g.present_in(&xt));
        assert!(!Term::FieldVal(Monomial::var(y())).present_in(&xt));
        let p = Term::pair(name("a"), Term::FieldVal(Monomial::from_pairs([(x(), -2)])));
        assert!(p.present_in(&xt));
    }

    #[test]
    fn origination_and_choice() {
        let na = text("na");
        let tr = vec![Event::send(Term::pair(na.clone(), name("A"))), Event::recv(text("v"))];
        assert!(originates_at(&na, &tr, 1));
        let tr2 = vec![Event::recv(na.clone()), Event::send(na.clone())];
        assert!(!originates_at(&na, &tr2, 2));
        let xt = Term::var(x());
        let tr3 = vec![
            Event::send(Term::GroupVal(Monomial::var(x()))),
            Event::send(Term::FieldVal(Monomial::var(x()))),
        ];
        assert!(!chosen_at(&xt, &tr3, 2));
        assert!(originates_at(&xt, &tr3, 2));
        assert!(chosen_at(&xt, &tr3, 1));
    }

    #[test]
    fn hash_is_symmetric_with_unit_plaintext() {
        let h = Term::hash(text("m"));
        assert!(h.as_hash().is_some());
        assert!(!h.carried_in(&text("m")));
        assert_eq!(h.decryption_key(), Some(text("m")));
    }
}
