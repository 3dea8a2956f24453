//! Independent checks for exponent unification.
#![allow(dead_code)]

use std::collections::{BTreeMap, BTreeSet};

use rand::Rng;
use shapes_core::algebra::{Monomial, Sort, Term, Var};
use shapes_core::unify::{self, solve_linear_diophantine, Fresh, Subst};

pub const POOL: usize = 4;

/// A random problem `μ = ν` over `k` transcendentals and `m` field variables.
#[derive(Debug, Clone)]
pub struct Problem {
    pub trsc: Vec<Var>,
    pub fld: Vec<Var>,
    pub lhs: Monomial,
    pub rhs: Monomial,
}

impl Problem {
    pub fn random<R: Rng>(rng: &mut R) -> Problem {
        loop {
            let k = rng.gen_range(0..=3);
            let m = rng.gen_range(0..=2);
            let trsc: Vec<Var> = (0..k).map(|i| Var::new(&format!("x{i}"), Sort::Trsc)).collect();
            let fld: Vec<Var> = (0..m).map(|i| Var::new(&format!("w{i}"), Sort::Fld)).collect();
            let mut side = || {
                Monomial::from_pairs(
                    trsc.iter()
                        .chain(fld.iter())
                        .map(|v| (v.clone(), rng.gen_range(-3..=3)))
                        .collect::<Vec<_>>(),
                )
            };
            let lhs = side();
            let rhs = side();
            if !lhs.div(&rhs).is_one() {
                return Problem { trsc, fld, lhs, rhs };
            }
        }
    }

    pub fn net(&self, v: &Var) -> i64 {
        self.lhs.degree(v) - self.rhs.degree(v)
    }

    pub fn vars(&self) -> Vec<Var> {
        self.trsc.iter().chain(self.fld.iter()).cloned().collect()
    }
}

pub fn pool() -> Vec<Var> {
    (0..POOL).map(|i| Var::new(&format!("p{i}"), Sort::Trsc)).collect()
}

/// Ground value assignment: transcendentals to a pool index, field
/// variables to exponent vectors over the pool.
#[derive(Debug, Clone)]
pub struct Ground {
    pub trsc: BTreeMap<Var, usize>,
    pub fld: BTreeMap<Var, [i64; POOL]>,
}

impl Ground {
    pub fn value(&self, v: &Var) -> [i64; POOL] {
        if let Some(i) = self.trsc.get(v) {
            let mut out = [0; POOL];
            out[*i] = 1;
            out
        } else {
            self.fld[v]
        }
    }

    pub fn as_subst(&self) -> Subst {
        let pool = pool();
        let mut s = Subst::new();
        for (v, i) in &self.trsc {
            s.insert(v.clone(), Term::FieldVal(Monomial::var(pool[*i].clone())));
        }
        for (v, e) in &self.fld {
            s.insert(
                v.clone(),
                Term::FieldVal(Monomial::from_pairs(pool.iter().cloned().zip(e.iter().copied()))),
            );
        }
        s
    }
}

fn box_vectors() -> Vec<[i64; POOL]> {
    let mut out = Vec::new();
    for i in 0..5i64.pow(POOL as u32) {
        let mut v = [0; POOL];
        let mut r = i;
        for slot in v.iter_mut() {
            *slot = r % 5 - 2;
            r /= 5;
        }
        out.push(v);
    }
    out
}

/// Every ground unifier with field exponents in `[-2, 2]`. Variables whose
/// net exponent is zero do not affect the equation and are fixed to `1`.
pub fn ground_unifiers(p: &Problem) -> Vec<Ground> {
    let k = p.trsc.len();
    let live: Vec<&Var> = p.fld.iter().filter(|v| p.net(v) != 0).collect();
    let dead: Vec<&Var> = p.fld.iter().filter(|v| p.net(v) == 0).collect();
    let boxed = box_vectors();
    let mut out = Vec::new();
    for code in 0..POOL.pow(k as u32) {
        let mut trsc = BTreeMap::new();
        let mut r = code;
        for v in &p.trsc {
            trsc.insert(v.clone(), r % POOL);
            r /= POOL;
        }
        let mut residual = [0i64; POOL];
        for v in &p.trsc {
            residual[trsc[v]] += p.net(v);
        }
        let mut push = |fld: BTreeMap<Var, [i64; POOL]>| {
            let mut all = fld;
            for v in &dead {
                all.insert((*v).clone(), [0; POOL]);
            }
            out.push(Ground { trsc: trsc.clone(), fld: all });
        };
        match live.len() {
            0 => {
                if residual.iter().all(|&e| e == 0) {
                    push(BTreeMap::new());
                }
            }
            _ => {
                let (last, rest) = live.split_last().unwrap();
                let c_last = p.net(last);
                let mut choices: Vec<Vec<[i64; POOL]>> = vec![Vec::new()];
                for _ in rest {
                    let mut next = Vec::new();
                    for pre in &choices {
                        for b in &boxed {
                            let mut q = pre.clone();
                            q.push(*b);
                            next.push(q);
                        }
                    }
                    choices = next;
                }
                for pre in choices {
                    let mut res = residual;
                    for (v, val) in rest.iter().zip(pre.iter()) {
                        for i in 0..POOL {
                            res[i] += p.net(v) * val[i];
                        }
                    }
                    let mut val = [0; POOL];
                    let ok = (0..POOL).all(|i| {
                        if res[i] % c_last != 0 {
                            return false;
                        }
                        val[i] = -res[i] / c_last;
                        (-2..=2).contains(&val[i])
                    });
                    if ok {
                        let mut fld = BTreeMap::new();
                        for (v, x) in rest.iter().zip(pre.iter()) {
                            fld.insert((*v).clone(), *x);
                        }
                        fld.insert((*last).clone(), val);
                        push(fld);
                    }
                }
            }
        }
    }
    out
}

/// Integer solvability of `A·x = b` by unimodular column reduction.
pub fn int_solvable(a: &[Vec<i128>], b: &[i128]) -> bool {
    let rows = a.len();
    let cols = if rows == 0 { 0 } else { a[0].len() };
    let mut m: Vec<Vec<i128>> = a.to_vec();
    let mut pivot_col = 0;
    let mut pivots: Vec<(usize, usize)> = Vec::new();
    for r in 0..rows {
        if pivot_col >= cols {
            break;
        }
        // gcd-reduce columns pivot_col.. on row r
        loop {
            let nz: Vec<usize> = (pivot_col..cols).filter(|&c| m[r][c] != 0).collect();
            if nz.len() <= 1 {
                if let Some(&c) = nz.first() {
                    for row in m.iter_mut() {
                        row.swap(c, pivot_col);
                    }
                    pivots.push((r, pivot_col));
                    pivot_col += 1;
                }
                break;
            }
            let &small = nz.iter().min_by_key(|&&c| m[r][c].abs()).unwrap();
            for &c in &nz {
                if c != small {
                    let q = m[r][c].div_euclid(m[r][small]);
                    for row in m.iter_mut() {
                        row[c] -= q * row[small];
                    }
                }
            }
        }
    }
    // forward substitution on the lower echelon form
    let mut y = vec![0i128; cols];
    let mut pi = 0;
    for r in 0..rows {
        let mut acc = b[r];
        let has_pivot = pi < pivots.len() && pivots[pi].0 == r;
        let limit = if has_pivot { pivots[pi].1 } else { pivot_col };
        for c in 0..limit {
            acc -= m[r][c] * y[c];
        }
        if has_pivot {
            let pc = pivots[pi].1;
            if acc % m[r][pc] != 0 {
                return false;
            }
            y[pc] = acc / m[r][pc];
            pi += 1;
        } else if acc != 0 {
            return false;
        }
    }
    true
}

/// Ground assignment `g` is an instance of `sigma` on the problem variables.
pub fn ground_is_instance(p: &Problem, g: &Ground, sigma: &Subst) -> bool {
    let vars = p.vars();
    let images: Vec<Monomial> = vars
        .iter()
        .map(|v| match sigma.image(v) {
            Term::FieldVal(m) => m,
            other => panic!("non-monomial image {other}"),
        })
        .collect();
    // transcendentals in the range are problem variables left unbound
    let mut fixed: BTreeMap<Var, [i64; POOL]> = BTreeMap::new();
    let mut unknown: BTreeSet<Var> = BTreeSet::new();
    for m in &images {
        for v in m.vars() {
            if v.sort == Sort::Trsc {
                if !g.trsc.contains_key(v) {
                    return false;
                }
                fixed.insert(v.clone(), g.value(v));
            } else if vars.contains(v) && sigma.get(v).is_none() {
                fixed.insert(v.clone(), g.value(v));
            } else {
                unknown.insert(v.clone());
            }
        }
    }
    let unknown: Vec<Var> = unknown.into_iter().collect();
    for coord in 0..POOL {
        let mut a = Vec::new();
        let mut b = Vec::new();
        for (v, m) in vars.iter().zip(images.iter()) {
            let mut rhs = g.value(v)[coord] as i128;
            for (u, e) in m.factors() {
                if let Some(val) = fixed.get(u) {
                    rhs -= e as i128 * val[coord] as i128;
                }
            }
            a.push(unknown.iter().map(|u| m.degree(u) as i128).collect());
            b.push(rhs);
        }
        if !int_solvable(&a, &b) {
            return false;
        }
    }
    true
}

pub fn sound(p: &Problem, s: &Subst) -> bool {
    s.apply_mono(&p.lhs) == s.apply_mono(&p.rhs) && s.is_idempotent() && s.is_sort_respecting()
}

fn partitions(items: &[Var]) -> Vec<Vec<Vec<Var>>> {
    let Some((first, rest)) = items.split_first() else {
        return vec![Vec::new()];
    };
    let mut out = Vec::new();
    for p in partitions(rest) {
        for i in 0..p.len() {
            let mut q = p.clone();
            q[i].insert(0, first.clone());
            out.push(q);
        }
        let mut q = p.clone();
        q.insert(0, vec![first.clone()]);
        out.push(q);
    }
    out
}

/// Naive unifier set: fix every partition of the transcendentals first,
/// then solve the field part with the Diophantine solver.
pub fn naive_unifiers(p: &Problem) -> Vec<Subst> {
    let mut out = Vec::new();
    let mut fresh = Fresh::new();
    for part in partitions(&p.trsc) {
        let mut ident = Subst::new();
        for block in &part {
            for v in &block[1..] {
                ident.insert(v.clone(), Term::FieldVal(Monomial::var(block[0].clone())));
            }
        }
        let m = ident.apply_mono(&p.lhs).div(&ident.apply_mono(&p.rhs));
        let xs: Vec<&Var> = m.vars().filter(|v| v.sort == Sort::Fld).collect();
        let consts: Vec<(&Var, i64)> = m.factors().filter(|(v, _)| v.sort == Sort::Trsc).collect();
        if xs.is_empty() {
            if consts.is_empty() {
                out.push(ident);
            }
            continue;
        }
        let c: Vec<i64> = xs.iter().map(|v| m.degree(v)).collect();
        let homo = solve_linear_diophantine(&c, 0).unwrap().unwrap();
        let mut parts = Vec::new();
        let mut ok = true;
        for (y, e) in &consts {
            match solve_linear_diophantine(&c, -e).unwrap() {
                Some(sol) => parts.push(((*y).clone(), sol.particular)),
                None => {
                    ok = false;
                    break;
                }
            }
        }
        if !ok {
            continue;
        }
        let params: Vec<Var> = homo.basis.iter().map(|_| fresh.named("t", Sort::Fld)).collect();
        let mut s = ident.clone();
        for (i, x) in xs.iter().enumerate() {
            let mut val = Monomial::one();
            for (y, part) in &parts {
                val.add_factor(y.clone(), part[i]);
            }
            for (t, b) in params.iter().zip(homo.basis.iter()) {
                val.add_factor(t.clone(), b[i]);
            }
            s.insert((*x).clone(), Term::FieldVal(val));
        }
        out.push(s);
    }
    out
}

pub fn returned(p: &Problem) -> Vec<Subst> {
    unify::ag_unify(&p.lhs, &p.rhs)
}

/// Both sets generate the same unifiers.
pub fn same_generators(p: &Problem, a: &[Subst], b: &[Subst]) -> bool {
    let vars: BTreeSet<Var> = p.vars().into_iter().collect();
    let rigid = BTreeSet::new();
    let mut fresh = Fresh::above(vars.iter());
    let covered = |xs: &[Subst], ys: &[Subst], fresh: &mut Fresh| {
        xs.iter().all(|x| ys.iter().any(|y| unify::is_instance(x, y, &vars, &rigid, fresh)))
    };
    covered(a, b, &mut fresh) && covered(b, a, &mut fresh)
}

pub struct CompletenessReport {
    pub problems: usize,
    pub failures: Vec<String>,
    pub ground_checked: usize,
}

/// Soundness and ground completeness over `count` seeded random problems.
pub fn completeness_suite<R: Rng>(rng: &mut R, count: usize) -> CompletenessReport {
    let mut failures = Vec::new();
    let mut ground_checked = 0;
    for i in 0..count {
        let p = Problem::random(rng);
        let sols = returned(&p);
        for s in &sols {
            if !sound(&p, s) {
                failures.push(format!("problem {i}: unsound {s} for {:?}", p));
            }
        }
        for g in ground_unifiers(&p) {
            ground_checked += 1;
            if !sols.iter().any(|s| ground_is_instance(&p, &g, s)) {
                failures.push(format!("problem {i}: ground unifier {} not covered for {} = {}", g.as_subst(), p.lhs, p.rhs));
                break;
            }
        }
    }
    CompletenessReport { problems: count, failures, ground_checked }
}
