//! Unification and matching modulo the exponent group.
//!
//! Free constructors are decomposed syntactically. Exponent equations are
//! solved with the decision-interleaving Abelian group procedure: field
//! variables are unconstrained, transcendental variables are constrained
//! and may only be identified with one another.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use thiserror::Error;

use crate::algebra::{Monomial, Sort, Term, Var};

/// Sort-respecting substitution. Exponent variables are bound to `FieldVal`s.
#[derive(Debug, Clone, Default, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Subst {
    map: BTreeMap<Var, Term>,
}

impl Subst {
    pub fn new() -> Subst {
        Subst::default()
    }

    pub fn single(v: Var, t: Term) -> Subst {
        let mut s = Subst::new();
        s.map.insert(v, t);
        s
    }

    pub fn is_empty(&self) -> bool {
        self.map.is_empty()
    }

    pub fn len(&self) -> usize {
        self.map.len()
    }

    pub fn get(&self, v: &Var) -> Option<&Term> {
        self.map.get(v)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&Var, &Term)> {
        self.map.iter()
    }

    pub fn domain(&self) -> impl Iterator<Item = &Var> {
        self.map.keys()
    }

    /// Raw insertion; callers keep the map idempotent.
    pub fn insert(&mut self, v: Var, t: Term) {
        self.map.insert(v, t);
    }

    /// Image of a variable as a term; exponent variables as monomials.
    pub fn image(&self, v: &Var) -> Term {
        self.map.get(v).cloned().unwrap_or_else(|| var_term(v))
    }

    pub fn apply_mono(&self, m: &Monomial) -> Monomial {
        if self.map.is_empty() {
            return m.clone();
        }
        let mut out = Monomial::one();
        for (v, e) in m.factors() {
            match self.map.get(v) {
                Some(Term::FieldVal(mu)) => out = out.mul(&mu.pow(e)),
                Some(Term::GroupVal(mu)) if v.sort == Sort::Grp => out = out.mul(&mu.pow(e)),
                Some(other) => panic!("exponent variable {v} bound to {other}"),
                None => out.add_factor(v.clone(), e),
            }
        }
        out
    }

    pub fn apply(&self, t: &Term) -> Term {
        if self.map.is_empty() {
            return t.clone();
        }
        match t {
            Term::Var(v) => self.image(v),
            Term::Const(_) => t.clone(),
            Term::Pair(a, b) => Term::pair(self.apply(a), self.apply(b)),
            Term::SymEnc(m, k) => Term::senc(self.apply(m), self.apply(k)),
            Term::AsymEnc(m, k) => Term::aenc(self.apply(m), self.apply(k)),
            Term::FieldVal(mu) => Term::FieldVal(self.apply_mono(mu)),
            Term::GroupVal(mu) => Term::GroupVal(self.apply_mono(mu)),
            Term::Pk(a) => Term::pk(self.apply(a)),
            Term::Ltk(a, b) => Term::ltk(self.apply(a), self.apply(b)),
            Term::Inv(k) => Term::inv(self.apply(k)),
        }
    }

    /// `self` followed by `later`.
    pub fn then(&self, later: &Subst) -> Subst {
        let mut map: BTreeMap<Var, Term> = self
            .map
            .iter()
            .map(|(v, t)| (v.clone(), later.apply(t)))
            .filter(|(v, t)| *t != var_term(v))
            .collect();
        for (v, t) in &later.map {
            map.entry(v.clone()).or_insert_with(|| t.clone());
        }
        Subst { map }
    }

    pub fn restrict(&self, vars: &BTreeSet<Var>) -> Subst {
        Subst {
            map: self
                .map
                .iter()
                .filter(|(v, _)| vars.contains(v))
                .map(|(v, t)| (v.clone(), t.clone()))
                .collect(),
        }
    }

    pub fn is_idempotent(&self) -> bool {
        self.map.values().all(|t| self.apply(t) == *t)
    }

    /// Transcendentals go to transcendentals, exponent variables to
    /// monomials, everything else to terms of a smaller sort.
    pub fn is_sort_respecting(&self) -> bool {
        self.map.iter().all(|(v, t)| match v.sort {
            Sort::Trsc => t.trsc_var().is_some(),
            Sort::Fld | Sort::Grp => matches!(t, Term::FieldVal(_)),
            s => t.sort().leq(s),
        })
    }

    pub fn range_vars(&self) -> BTreeSet<Var> {
        let mut out = BTreeSet::new();
        for t in self.map.values() {
            t.collect_vars(&mut out);
        }
        out
    }
}

impl fmt::Display for Subst {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str("{")?;
        for (i, (v, t)) in self.map.iter().enumerate() {
            if i > 0 {
                f.write_str(", ")?;
            }
            write!(f, "{v} ↦ {t}")?;
        }
        f.write_str("}")
    }
}

/// The value a binding denotes: a group variable's image is stored as
/// its exponent.
pub fn bound_value(v: &Var, t: &Term) -> Term {
    match (v.sort, t) {
        (Sort::Grp, Term::FieldVal(m)) => Term::GroupVal(m.clone()),
        _ => t.clone(),
    }
}

/// A variable as the value a substitution binds it to.
pub fn var_term(v: &Var) -> Term {
    if v.sort.in_exponent() {
        Term::FieldVal(Monomial::var(v.clone()))
    } else {
        Term::Var(v.clone())
    }
}

/// Source of fresh variables `base#N`. `#` never occurs in input identifiers.
#[derive(Debug, Clone, Default, PartialEq, Eq, Hash)]
pub struct Fresh {
    next: u64,
}

impl Fresh {
    pub fn new() -> Fresh {
        Fresh { next: 0 }
    }

    /// A generator whose names avoid every variable in `vars`.
    pub fn above<'a, I: IntoIterator<Item = &'a Var>>(vars: I) -> Fresh {
        let mut f = Fresh::new();
        f.bump_past(vars);
        f
    }

    pub fn bump_past<'a, I: IntoIterator<Item = &'a Var>>(&mut self, vars: I) {
        for v in vars {
            if let Some(i) = v.name.find('#') {
                if let Ok(n) = v.name[i + 1..].parse::<u64>() {
                    self.next = self.next.max(n + 1);
                }
            }
        }
    }

    pub fn peek(&self) -> u64 {
        self.next
    }

    pub fn var(&mut self, like: &Var) -> Var {
        self.named(like.base(), like.sort)
    }

    pub fn named(&mut self, base: &str, sort: Sort) -> Var {
        let v = Var::new(&format!("{base}#{}", self.next), sort);
        self.next += 1;
        v
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum UsageError {
    #[error("empty coefficient list")]
    EmptyCoefficients,
    #[error("zero coefficient at index {0}")]
    ZeroCoefficient(usize),
}

/// General integer solution of `Σ cᵢxᵢ = rhs`: every solution is
/// `particular + Σ kⱼ·basis[j]` for integers `kⱼ`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Diophantine {
    pub particular: Vec<i64>,
    pub basis: Vec<Vec<i64>>,
}

/// Affine integer form over parameters: `konst + Σ coef[p]·tₚ`.
#[derive(Debug, Clone, Default)]
struct Affine {
    konst: i64,
    coef: BTreeMap<usize, i64>,
}

impl Affine {
    fn param(p: usize) -> Affine {
        let mut coef = BTreeMap::new();
        coef.insert(p, 1);
        Affine { konst: 0, coef }
    }

    fn add_scaled(&mut self, other: &Affine, k: i64) {
        self.konst += k * other.konst;
        for (p, c) in &other.coef {
            let e = self.coef.entry(*p).or_insert(0);
            *e += k * c;
        }
        self.coef.retain(|_, c| *c != 0);
    }

    fn substitute(&mut self, p: usize, value: &Affine) {
        if let Some(c) = self.coef.remove(&p) {
            self.add_scaled(value, c);
        }
    }
}

pub fn solve_linear_diophantine(coeffs: &[i64], rhs: i64) -> Result<Option<Diophantine>, UsageError> {
    if coeffs.is_empty() {
        return Err(UsageError::EmptyCoefficients);
    }
    if let Some(i) = coeffs.iter().position(|&c| c == 0) {
        return Err(UsageError::ZeroCoefficient(i));
    }
    let n = coeffs.len();
    // Original variable i is expressed over parameters; parameter ids grow.
    let mut xs: Vec<Affine> = (0..n).map(Affine::param).collect();
    let mut eq: BTreeMap<usize, i64> = coeffs.iter().copied().enumerate().collect();
    let mut rhs = rhs;
    let mut next = n;
    loop {
        let (&p, &c) = eq.iter().min_by_key(|(p, c)| (c.abs(), **p)).unwrap();
        if c < 0 {
            for v in eq.values_mut() {
                *v = -*v;
            }
            rhs = -rhs;
            continue;
        }
        if eq.values().all(|v| v % c == 0) {
            if rhs % c != 0 {
                return Ok(None);
            }
            for v in eq.values_mut() {
                *v /= c;
            }
            rhs /= c;
            // p = rhs - Σ others
            let mut value = Affine { konst: rhs, coef: BTreeMap::new() };
            for (&q, &cq) in &eq {
                if q != p {
                    value.coef.insert(q, -cq);
                }
            }
            for x in xs.iter_mut() {
                x.substitute(p, &value);
            }
            break;
        }
        // p = t' - Σ floor(c_q / c)·q
        let fresh = next;
        next += 1;
        let mut value = Affine::param(fresh);
        for (&q, &cq) in &eq {
            if q != p {
                value.coef.insert(q, -cq.div_euclid(c));
            }
        }
        for x in xs.iter_mut() {
            x.substitute(p, &value);
        }
        let old = std::mem::take(&mut eq);
        for (q, cq) in old {
            if q == p {
                eq.insert(fresh, c);
            } else if cq.rem_euclid(c) != 0 {
                eq.insert(q, cq.rem_euclid(c));
            }
        }
    }
    let params: BTreeSet<usize> = xs.iter().flat_map(|x| x.coef.keys().copied()).collect();
    let particular = xs.iter().map(|x| x.konst).collect();
    let basis = params
        .iter()
        .map(|p| xs.iter().map(|x| x.coef.get(p).copied().unwrap_or(0)).collect())
        .collect();
    Ok(Some(Diophantine { particular, basis }))
}

/// One reduced exponent equation `Σ c·x = Σ d·ȳ` with its accumulated
/// substitution and the disequality decisions made so far.
#[derive(Clone)]
struct AgState {
    c: BTreeMap<Var, i64>,
    d: BTreeMap<Var, i64>,
    theta: Subst,
    apart: BTreeSet<(Var, Var)>,
}

fn mono_from(map: &BTreeMap<Var, i64>, scale: i64) -> Monomial {
    Monomial::from_pairs(map.iter().map(|(v, e)| (v.clone(), e * scale)))
}

struct Solver<'a> {
    rigid: &'a BTreeSet<Var>,
    fresh: &'a mut Fresh,
}

impl Solver<'_> {
    fn unconstrained(&self, v: &Var) -> bool {
        matches!(v.sort, Sort::Fld | Sort::Grp) && !self.rigid.contains(v)
    }

    /// Split `m = 1` into reduced form, continuing from `theta`.
    fn ag_equation(&mut self, m: &Monomial, theta: Subst, out: &mut Vec<Subst>) {
        let mut c = BTreeMap::new();
        let mut d = BTreeMap::new();
        for (v, e) in m.factors() {
            if self.unconstrained(v) {
                c.insert(v.clone(), e);
            } else {
                d.insert(v.clone(), -e);
            }
        }
        self.unify0(AgState { c, d, theta, apart: BTreeSet::new() }, out);
    }

    fn unify0(&mut self, mut st: AgState, out: &mut Vec<Subst>) {
        loop {
            st.c.retain(|_, e| *e != 0);
            st.d.retain(|_, e| *e != 0);
            if st.c.is_empty() {
                if st.d.is_empty() {
                    out.push(st.theta);
                } else {
                    self.unify_prime(st, out);
                }
                return;
            }
            let (xi, ci) = st
                .c
                .iter()
                .min_by_key(|(v, e)| (e.abs(), (*v).clone()))
                .map(|(v, e)| (v.clone(), *e))
                .unwrap();
            if ci < 0 {
                st.c.values_mut().for_each(|e| *e = -*e);
                st.d.values_mut().for_each(|e| *e = -*e);
                continue;
            }
            if st.c.values().all(|e| e % ci == 0) {
                if !st.d.values().all(|e| e % ci == 0) {
                    self.unify_prime(st, out);
                    return;
                }
                st.c.values_mut().for_each(|e| *e /= ci);
                st.d.values_mut().for_each(|e| *e /= ci);
                // Solve for xi.
                let mut value = mono_from(&st.d, 1);
                for (xk, ck) in &st.c {
                    if *xk != xi {
                        value.add_factor(xk.clone(), -ck);
                    }
                }
                let sigma = Subst::single(xi, Term::FieldVal(value));
                out.push(st.theta.then(&sigma));
                return;
            }
            // Eliminate xi in favor of a fresh variable.
            let fresh = self.fresh.var(&xi);
            let mut value = Monomial::var(fresh.clone());
            for (xk, ck) in &st.c {
                if *xk != xi {
                    value.add_factor(xk.clone(), -ck.div_euclid(ci));
                }
            }
            let sigma = Subst::single(xi.clone(), Term::FieldVal(value));
            st.theta = st.theta.then(&sigma);
            let old = std::mem::take(&mut st.c);
            for (xk, ck) in old {
                if xk == xi {
                    st.c.insert(fresh.clone(), ci);
                } else {
                    st.c.insert(xk, ck.rem_euclid(ci));
                }
            }
        }
    }

    fn unify_prime(&mut self, st: AgState, out: &mut Vec<Subst>) {
        let cands: Vec<&Var> = st.d.keys().filter(|v| v.sort == Sort::Trsc).collect();
        let mut choice = None;
        'outer: for (i, x) in cands.iter().enumerate() {
            for y in &cands[i + 1..] {
                let both_rigid = self.rigid.contains(*x) && self.rigid.contains(*y);
                if !both_rigid && !st.apart.contains(&((*x).clone(), (*y).clone())) {
                    choice = Some(((*x).clone(), (*y).clone()));
                    break 'outer;
                }
            }
        }
        let Some((x, y)) = choice else {
            return;
        };
        let (from, to) = if self.rigid.contains(&x) { (y.clone(), x.clone()) } else { (x.clone(), y.clone()) };

        let mut same = st.clone();
        let moved = same.d.remove(&from).unwrap_or(0);
        *same.d.entry(to.clone()).or_insert(0) += moved;
        let rename = Subst::single(from.clone(), var_term(&to));
        same.theta = same.theta.then(&rename);
        same.apart = same
            .apart
            .iter()
            .map(|(a, b)| {
                let a = if *a == from { to.clone() } else { a.clone() };
                let b = if *b == from { to.clone() } else { b.clone() };
                if a <= b { (a, b) } else { (b, a) }
            })
            .collect();
        self.unify0(same, out);

        let mut apart = st;
        apart.apart.insert((x, y));
        self.unify_prime(apart, out);
    }

    /// Syntactic decomposition; exponent equations are returned for the
    /// group solver.
    fn syntactic(&mut self, eqs: &[(Term, Term)]) -> Option<(Subst, Vec<(Monomial, Monomial)>)> {
        let mut sigma = Subst::new();
        let mut ag = Vec::new();
        let mut stack: Vec<(Term, Term)> = eqs.iter().rev().cloned().collect();
        while let Some((a, b)) = stack.pop() {
            let a = sigma.apply(&a);
            let b = sigma.apply(&b);
            if a == b {
                continue;
            }
            match (&a, &b) {
                (Term::Var(v), Term::Var(w)) => {
                    let (bind, to) = self.orient(v, w)?;
                    sigma = sigma.then(&Subst::single(bind, to));
                }
                (Term::Var(v), t) | (t, Term::Var(v)) => {
                    if self.rigid.contains(v) || !t.sort().leq(v.sort) || t.occurs(v) {
                        return None;
                    }
                    sigma = sigma.then(&Subst::single(v.clone(), t.clone()));
                }
                (Term::Pair(a1, a2), Term::Pair(b1, b2))
                | (Term::SymEnc(a1, a2), Term::SymEnc(b1, b2))
                | (Term::AsymEnc(a1, a2), Term::AsymEnc(b1, b2))
                | (Term::Ltk(a1, a2), Term::Ltk(b1, b2)) => {
                    stack.push(((**a2).clone(), (**b2).clone()));
                    stack.push(((**a1).clone(), (**b1).clone()));
                }
                (Term::Pk(x), Term::Pk(y)) | (Term::Inv(x), Term::Inv(y)) => {
                    stack.push(((**x).clone(), (**y).clone()));
                }
                (Term::Inv(k), t) | (t, Term::Inv(k)) if matches!(**k, Term::Var(_)) => {
                    if t.sort() != Sort::Akey {
                        return None;
                    }
                    stack.push(((**k).clone(), Term::inv(t.clone())));
                }
                (Term::FieldVal(m), Term::FieldVal(n)) | (Term::GroupVal(m), Term::GroupVal(n)) => {
                    ag.push((m.clone(), n.clone()));
                }
                _ => return None,
            }
        }
        Some((sigma, ag))
    }

    fn orient(&self, v: &Var, w: &Var) -> Option<(Var, Term)> {
        let vr = self.rigid.contains(v);
        let wr = self.rigid.contains(w);
        let v_to_w = !vr && w.sort.leq(v.sort);
        let w_to_v = !wr && v.sort.leq(w.sort);
        match (v_to_w, w_to_v) {
            (true, true) => {
                if v > w {
                    Some((v.clone(), Term::var(w.clone())))
                } else {
                    Some((w.clone(), Term::var(v.clone())))
                }
            }
            (true, false) => Some((v.clone(), Term::var(w.clone()))),
            (false, true) => Some((w.clone(), Term::var(v.clone()))),
            (false, false) => None,
        }
    }

    fn solve(&mut self, eqs: &[(Term, Term)]) -> Vec<Subst> {
        let Some((sigma, ag)) = self.syntactic(eqs) else {
            return Vec::new();
        };
        let mut sols = vec![Subst::new()];
        for (mu, nu) in &ag {
            let mut next = Vec::new();
            for th in sols {
                let m = th.apply_mono(mu).div(&th.apply_mono(nu));
                self.ag_equation(&m, th, &mut next);
            }
            sols = next;
            if sols.is_empty() {
                break;
            }
        }
        sols.into_iter().map(|th| sigma.then(&th)).collect()
    }
}

/// All variables occurring in a system of equations.
pub fn eq_vars(eqs: &[(Term, Term)]) -> BTreeSet<Var> {
    let mut vars = BTreeSet::new();
    for (a, b) in eqs {
        a.collect_vars(&mut vars);
        b.collect_vars(&mut vars);
    }
    vars
}

/// Complete set of unifiers for a system, never binding `rigid` variables.
/// Results are restricted to the variables of the system; when `minimize`
/// is set, unifiers that are instances of others are removed.
pub fn unify_system(eqs: &[(Term, Term)], rigid: &BTreeSet<Var>, fresh: &mut Fresh, minimize: bool) -> Vec<Subst> {
    let vars = eq_vars(eqs);
    fresh.bump_past(vars.iter().chain(rigid.iter()));
    let sols: Vec<Subst> = Solver { rigid, fresh }.solve(eqs).into_iter().map(|s| s.restrict(&vars)).collect();
    let mut uniq = Vec::new();
    for s in sols {
        if !uniq.contains(&s) {
            uniq.push(s);
        }
    }
    if minimize {
        minimize_set(uniq, &vars, rigid, fresh)
    } else {
        uniq
    }
}

/// Drop every unifier that is an instance of another; of mutually general
/// unifiers the first is kept.
pub fn minimize_set(sols: Vec<Subst>, vars: &BTreeSet<Var>, rigid: &BTreeSet<Var>, fresh: &mut Fresh) -> Vec<Subst> {
    let n = sols.len();
    if n < 2 {
        return sols;
    }
    let mut inst = vec![vec![false; n]; n];
    for i in 0..n {
        for j in 0..n {
            if i != j {
                inst[i][j] = is_instance(&sols[i], &sols[j], vars, rigid, fresh);
            }
        }
    }
    let keep: Vec<bool> = (0..n)
        .map(|j| !(0..n).any(|i| i != j && inst[j][i] && (!inst[i][j] || i < j)))
        .collect();
    sols.into_iter().zip(keep).filter(|(_, k)| *k).map(|(s, _)| s).collect()
}

/// `special` is an instance of `general` on `vars`: some τ has
/// `τ∘general = special` there. Rigid variables stay fixed.
pub fn is_instance(special: &Subst, general: &Subst, vars: &BTreeSet<Var>, rigid: &BTreeSet<Var>, fresh: &mut Fresh) -> bool {
    let items: Vec<&Var> = vars.iter().collect();
    if items.is_empty() {
        return true;
    }
    let g = Term::tuple(items.iter().map(|v| general.image(v)).collect());
    let s = Term::tuple(items.iter().map(|v| special.image(v)).collect());
    let target_vars = s.vars();
    fresh.bump_past(target_vars.iter().chain(g.vars().iter()));
    // Rename the general side apart, except rigid constants.
    let mut rename = Subst::new();
    for v in g.vars() {
        if !rigid.contains(&v) {
            rename.insert(v.clone(), var_term(&fresh.var(&v)));
        }
    }
    let g = rename.apply(&g);
    let mut fixed = target_vars;
    fixed.extend(rigid.iter().cloned());
    !unify_system(&[(g, s)], &fixed, fresh, false).is_empty()
}

pub fn unify(a: &Term, b: &Term) -> Vec<Subst> {
    let eqs = [(a.clone(), b.clone())];
    let mut fresh = Fresh::new();
    unify_system(&eqs, &BTreeSet::new(), &mut fresh, true)
}

pub fn ag_unify(a: &Monomial, b: &Monomial) -> Vec<Subst> {
    unify(&Term::FieldVal(a.clone()), &Term::FieldVal(b.clone()))
}

/// Substitutions on the pattern's variables with `σ(pattern) = target`;
/// target variables are constants. Shared names are renamed apart first.
pub fn match_term(pattern: &Term, target: &Term) -> Vec<Subst> {
    match_system(&[(pattern.clone(), target.clone())], &BTreeSet::new())
}

/// Matching for a system of `(pattern, target)` pairs with extra constants.
pub fn match_system(pairs: &[(Term, Term)], constants: &BTreeSet<Var>) -> Vec<Subst> {
    let mut rigid: BTreeSet<Var> = constants.clone();
    let mut pvars = BTreeSet::new();
    for (p, t) in pairs {
        t.collect_vars(&mut rigid);
        p.collect_vars(&mut pvars);
    }
    let mut fresh = Fresh::above(rigid.iter().chain(pvars.iter()));
    let shared: Vec<Var> = pvars.iter().filter(|v| rigid.contains(*v)).cloned().collect();
    let mut rename = Subst::new();
    let mut back = BTreeMap::new();
    for v in &shared {
        let nv = fresh.var(v);
        back.insert(nv.clone(), v.clone());
        rename.insert(v.clone(), var_term(&nv));
    }
    let eqs: Vec<(Term, Term)> = pairs.iter().map(|(p, t)| (rename.apply(p), t.clone())).collect();
    let sols = unify_system(&eqs, &rigid, &mut fresh, true);
    sols.into_iter()
        .map(|s| {
            let mut out = Subst::new();
            for (v, t) in s.iter() {
                if rigid.contains(v) {
                    continue;
                }
                let key = back.get(v).cloned().unwrap_or_else(|| v.clone());
                out.insert(key, t.clone());
            }
            out
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t(n: &str) -> Var {
        Var::new(n, Sort::Trsc)
    }
    fn f(n: &str) -> Var {
        Var::new(n, Sort::Fld)
    }
    fn mono(items: &[(&Var, i64)]) -> Monomial {
        Monomial::from_pairs(items.iter().map(|(v, e)| ((*v).clone(), *e)))
    }

    /// Equivalence classes of transcendentals induced by a substitution.
    fn classes(s: &Subst, vars: &[Var]) -> BTreeSet<BTreeSet<String>> {
        let mut by_image: BTreeMap<Term, BTreeSet<String>> = BTreeMap::new();
        for v in vars {
            by_image.entry(s.image(v)).or_default().insert(v.name.to_string());
        }
        by_image.into_values().filter(|c| c.len() > 1).collect()
    }

    #[test]
    fn example_one() {
        let (x, y, z) = (t("x"), t("y"), f("z"));
        let sols = ag_unify(&Monomial::var(z.clone()), &mono(&[(&x, 1), (&y, -1)]));
        assert_eq!(sols.len(), 1);
        assert_eq!(sols[0].get(&z), Some(&Term::FieldVal(mono(&[(&x, 1), (&y, -1)]))));
        assert_eq!(sols[0].len(), 1);
    }

    #[test]
    fn example_two() {
        let vs = [t("w"), t("x"), t("y"), t("z")];
        let lhs = mono(&[(&vs[0], 1), (&vs[1], 1)]);
        let rhs = mono(&[(&vs[2], 1), (&vs[3], 1)]);
        let sols = ag_unify(&lhs, &rhs);
        let got: BTreeSet<_> = sols.iter().map(|s| classes(s, &vs)).collect();
        let want: BTreeSet<BTreeSet<BTreeSet<String>>> = [
            [["w", "y"], ["x", "z"]],
            [["w", "z"], ["x", "y"]],
        ]
        .iter()
        .map(|p| p.iter().map(|c| c.iter().map(|s| s.to_string()).collect()).collect())
        .collect();
        assert_eq!(sols.len(), 2);
        assert_eq!(got, want);
    }

    #[test]
    fn trivial_identity() {
        let x = Term::var(t("x"));
        assert_eq!(unify(&x, &x), vec![Subst::new()]);
    }

    #[test]
    fn free_constructor() {
        let v = Var::new("v", Sort::Text);
        let k = Term::var(Var::new("K", Sort::Skey));
        let na = Term::var(Var::new("na", Sort::Text));
        let sols = unify(&Term::senc(Term::var(v.clone()), k.clone()), &Term::senc(na.clone(), k));
        assert_eq!(sols, vec![Subst::single(v, na)]);
    }

    #[test]
    fn constructor_clash() {
        let a = Term::var(Var::new("a", Sort::Name));
        let m = Term::var(Var::new("m", Sort::Text));
        let k = Term::var(Var::new("K", Sort::Skey));
        assert!(unify(&Term::pair(a.clone(), a), &Term::senc(m, k)).is_empty());
    }

    #[test]
    fn group_with_field_var() {
        let (x, z, w) = (t("x"), t("z"), f("w"));
        let a = Term::GroupVal(mono(&[(&x, 1), (&w, 1)]));
        let b = Term::GroupVal(Monomial::var(z.clone()));
        let sols = unify(&a, &b);
        assert!(!sols.is_empty());
        for s in &sols {
            assert_eq!(s.apply(&a), s.apply(&b));
        }
        assert!(sols.iter().any(|s| s.get(&w) == Some(&Term::FieldVal(mono(&[(&z, 1), (&x, -1)])))));
    }

    #[test]
    fn match_exponent() {
        let (b, x, w) = (t("b"), t("x"), f("w"));
        let sols = match_term(&Term::GroupVal(Monomial::var(w.clone())), &Term::GroupVal(mono(&[(&b, 1), (&x, 1)])));
        assert_eq!(sols, vec![Subst::single(w, Term::FieldVal(mono(&[(&b, 1), (&x, 1)])))]);
    }

    #[test]
    fn match_distinct_constants() {
        assert!(match_term(&Term::tag("na"), &Term::tag("nb")).is_empty());
        // a target variable is a constant too
        let na = Term::var(Var::new("na", Sort::Text));
        let nb = Term::var(Var::new("nb", Sort::Text));
        assert!(match_term(&Term::pair(na.clone(), na), &Term::pair(nb.clone(), Term::tag("nb"))).is_empty());
    }

    #[test]
    fn match_mesg_var() {
        let v = Var::new("v", Sort::Mesg);
        let e = Term::senc(Term::var(Var::new("m", Sort::Text)), Term::var(Var::new("K", Sort::Skey)));
        assert_eq!(match_term(&Term::var(v.clone()), &e), vec![Subst::single(v, e)]);
    }

    #[test]
    fn match_shared_names() {
        let a = Var::new("a", Sort::Name);
        let b = Var::new("b", Sort::Name);
        let p = Term::pair(Term::var(a.clone()), Term::var(b.clone()));
        let q = Term::pair(Term::var(b.clone()), Term::var(a.clone()));
        let sols = match_term(&p, &q);
        assert_eq!(sols.len(), 1);
        assert_eq!(sols[0].image(&a), Term::var(b.clone()));
        assert_eq!(sols[0].image(&b), Term::var(a));
    }

    #[test]
    fn trsc_cannot_be_product() {
        let (x, y, z) = (t("x"), t("y"), t("z"));
        assert!(ag_unify(&Monomial::var(x), &mono(&[(&y, 1), (&z, 1)])).is_empty());
    }

    #[test]
    fn inverse_key_var() {
        let k = Var::new("k", Sort::Akey);
        let pa = Term::pk(Term::var(Var::new("a", Sort::Name)));
        let sols = unify(&Term::inv(Term::var(k.clone())), &pa);
        assert_eq!(sols, vec![Subst::single(k, Term::inv(pa))]);
    }

    #[test]
    fn diophantine_examples() {
        let s = solve_linear_diophantine(&[2, 3], 1).unwrap().unwrap();
        assert_eq!(2 * s.particular[0] + 3 * s.particular[1], 1);
        assert_eq!(s.basis.len(), 1);
        assert_eq!(2 * s.basis[0][0] + 3 * s.basis[0][1], 0);
        assert_eq!(solve_linear_diophantine(&[2, 4], 3).unwrap(), None);
        let s = solve_linear_diophantine(&[1], 7).unwrap().unwrap();
        assert_eq!(s.particular, vec![7]);
        assert!(s.basis.is_empty());
        assert_eq!(solve_linear_diophantine(&[], 1), Err(UsageError::EmptyCoefficients));
    }

    #[test]
    fn composition_idempotent() {
        let (w, v, x) = (f("w"), f("v"), t("x"));
        let s1 = Subst::single(w.clone(), Term::FieldVal(mono(&[(&v, 1), (&x, 1)])));
        let s2 = Subst::single(v.clone(), Term::FieldVal(Monomial::var(x.clone())));
        let c = s1.then(&s2);
        assert!(c.is_idempotent());
        assert_eq!(c.get(&w), Some(&Term::FieldVal(mono(&[(&x, 2)]))));
    }
}
