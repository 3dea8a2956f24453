//! Skeletons: regular strands with bindings, a node order, and origination
//! and absence facts. Every operation yields new skeletons.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::sync::Arc;

use crate::algebra::{chosen_at, Dir, Event, Monomial, Sort, Term, Var};
use crate::protocol::{Fact, Protocol};
use crate::unify::{self, var_term, Fresh, Subst};

/// `(strand, position)`, both 0-based.
pub type Node = (usize, usize);

#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum StrandKind {
    Role(usize),
    /// Reception of a term followed by its retransmission. `group_split`
    /// marks listeners for `(g^{μ/w}, w)` pairs.
    Listener { group_split: bool },
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Strand {
    pub kind: StrandKind,
    pub height: usize,
    /// Role variable to skeleton term. Empty for listeners.
    pub env: Subst,
    pub events: Vec<Event>,
}

impl Strand {
    pub fn is_listener(&self) -> bool {
        matches!(self.kind, StrandKind::Listener { .. })
    }

    pub fn listened(&self) -> Option<&Term> {
        if self.is_listener() {
            Some(&self.events[0].msg)
        } else {
            None
        }
    }
}

/// Reason a skeleton has no realizations.
pub type Dead = String;

#[derive(Debug, Clone)]
pub struct Skeleton {
    pub protocol: Arc<Protocol>,
    pub strands: Vec<Strand>,
    /// Transitively closed order between nodes of distinct strands.
    pub order: BTreeSet<(Node, Node)>,
    pub non: BTreeSet<Term>,
    pub uniq: BTreeSet<Term>,
    pub absent: BTreeSet<(Var, Monomial)>,
    pub neq: BTreeSet<(Term, Term)>,
    pub fresh: Fresh,
}

impl PartialEq for Skeleton {
    fn eq(&self, other: &Skeleton) -> bool {
        self.strands == other.strands
            && self.order == other.order
            && self.non == other.non
            && self.uniq == other.uniq
            && self.absent == other.absent
            && self.neq == other.neq
    }
}

/// A strand requested by a scenario: `label` groups node claims that
/// must lie on one strand.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct StrandClaim {
    pub label: usize,
    pub role: String,
    pub height: usize,
    pub binds: Vec<(Var, Term)>,
}

impl Skeleton {
    /// Value bound to role variable `name` on strand `s`.
    pub fn binding(&self, s: usize, name: &str) -> Option<Term> {
        let StrandKind::Role(r) = self.strands.get(s)?.kind else { return None };
        let v = self.protocol.roles[r].vars.iter().find(|v| *v.name == *name)?;
        let t = self.strands[s].env.get(v)?;
        Some(unify::bound_value(v, t))
    }

    pub fn empty(protocol: Arc<Protocol>) -> Skeleton {
        Skeleton {
            protocol,
            strands: Vec::new(),
            order: BTreeSet::new(),
            non: BTreeSet::new(),
            uniq: BTreeSet::new(),
            absent: BTreeSet::new(),
            neq: BTreeSet::new(),
            fresh: Fresh::new(),
        }
    }

    pub fn nodes(&self) -> impl Iterator<Item = Node> + '_ {
        self.strands.iter().enumerate().flat_map(|(s, st)| (0..st.height).map(move |i| (s, i)))
    }

    pub fn event(&self, n: Node) -> &Event {
        &self.strands[n.0].events[n.1]
    }

    pub fn msg(&self, n: Node) -> &Term {
        &self.event(n).msg
    }

    /// Strict order, strand succession included.
    pub fn before(&self, a: Node, b: Node) -> bool {
        if a.0 == b.0 {
            a.1 < b.1
        } else {
            self.order.contains(&(a, b))
        }
    }

    pub fn vars(&self) -> BTreeSet<Var> {
        let mut out = BTreeSet::new();
        for st in &self.strands {
            for ev in &st.events {
                ev.msg.collect_vars(&mut out);
            }
            for (_, t) in st.env.iter() {
                t.collect_vars(&mut out);
            }
        }
        for t in self.non.iter().chain(self.uniq.iter()) {
            t.collect_vars(&mut out);
        }
        for (x, m) in &self.absent {
            out.insert(x.clone());
            out.extend(m.vars().cloned());
        }
        for (a, b) in &self.neq {
            a.collect_vars(&mut out);
            b.collect_vars(&mut out);
        }
        out
    }

    /// Values the adversary may not create.
    pub fn restricted(&self) -> BTreeSet<Term> {
        self.non.iter().chain(self.uniq.iter()).cloned().collect()
    }

    /// Appends an instance of role `role` up to `height`. Role variables
    /// not bound by `binds` get fresh skeleton variables.
    pub fn add_role_strand(&mut self, role: usize, height: usize, binds: &Subst) -> usize {
        let r = &self.protocol.roles[role];
        let mut env = Subst::new();
        for v in r.params(height) {
            let t = match binds.get(&v) {
                Some(t) => t.clone(),
                None => var_term(&self.fresh.var(&v)),
            };
            env.insert(v, t);
        }
        let events = events_of(&self.protocol, role, height, &env);
        self.strands.push(Strand { kind: StrandKind::Role(role), height, env, events });
        self.strands.len() - 1
    }

    /// Appends a listener for `t` whose transmission precedes `target`;
    /// everything before `target` is placed before the listener.
    pub fn add_listener(&mut self, t: Term, target: Option<Node>, group_split: bool) -> usize {
        let s = self.strands.len();
        self.strands.push(Strand {
            kind: StrandKind::Listener { group_split },
            height: 2,
            env: Subst::new(),
            events: vec![Event::recv(t.clone()), Event::send(t)],
        });
        if let Some(n) = target {
            self.order.insert(((s, 1), n));
            let preds: Vec<Node> = self.nodes().filter(|m| m.0 != s && self.before(*m, n)).collect();
            for m in preds {
                self.order.insert((m, (s, 0)));
            }
        }
        s
    }

    /// Raw substitution into every term; validation is left to [`normalize`].
    pub fn substitute(&self, s: &Subst) -> Skeleton {
        let mut out = self.clone();
        for st in out.strands.iter_mut() {
            st.env = st.env.iter().map(|(v, t)| (v.clone(), s.apply(t))).fold(Subst::new(), |mut acc, (v, t)| {
                acc.insert(v, t);
                acc
            });
            for ev in st.events.iter_mut() {
                ev.msg = s.apply(&ev.msg);
            }
        }
        out.non = self.non.iter().map(|t| s.apply(t)).collect();
        out.uniq = self.uniq.iter().map(|t| s.apply(t)).collect();
        out.absent = self
            .absent
            .iter()
            .map(|(x, m)| {
                let x2 = s.image(x).trsc_var().cloned().unwrap_or_else(|| x.clone());
                (x2, s.apply_mono(m))
            })
            .collect();
        out.neq = self.neq.iter().map(|(a, b)| ordered(s.apply(a), s.apply(b))).collect();
        out.fresh.bump_past(s.range_vars().iter());
        out
    }

    /// `apply_subst`: substitute, then revalidate.
    pub fn apply_subst(&self, s: &Subst) -> Result<Vec<Skeleton>, Dead> {
        for (x, _) in &self.absent {
            if s.image(x).trsc_var().is_none() {
                return Err(format!("absent variable {x} bound to a non-transcendental"));
            }
        }
        self.substitute(s).normalize()
    }

    /// Reinstalls role facts, checks every fact, infers origination order,
    /// and merges strands forced together by unique generation.
    pub fn normalize(mut self) -> Result<Vec<Skeleton>, Dead> {
        let proto = self.protocol.clone();
        for st in self.strands.iter_mut() {
            if let StrandKind::Role(r) = st.kind {
                st.events = events_of(&proto, r, st.height, &st.env);
            }
        }
        for st in &self.strands {
            if let StrandKind::Role(r) = st.kind {
                for (n, f) in &proto.roles[r].assumptions {
                    if *n > st.height {
                        continue;
                    }
                    match f.apply(&st.env) {
                        Fact::Non(t) => {
                            self.non.insert(t);
                        }
                        Fact::Uniq(t) => {
                            if !chosen_at(&t, &st.events, *n) {
                                if let Some(s) = absorb_early(&t, &st.events, *n, &mut self.fresh) {
                                    return self.substitute(&s).normalize();
                                }
                                return Err(format!("{t} is present before it is chosen"));
                            }
                            self.uniq.insert(t);
                        }
                        Fact::Absent(x, m) => {
                            self.absent.insert((x, m));
                        }
                    }
                }
            }
        }
        let all = self.vars();
        self.fresh.bump_past(all.iter());
        for (a, b) in &self.neq {
            if a == b {
                return Err(format!("{a} must differ from itself"));
            }
        }
        for (x, m) in &self.absent {
            if m.degree(x) != 0 {
                return Err(format!("{x} is not absent from {m}"));
            }
        }
        for t in &self.non {
            if let Some(n) = self.nodes().find(|n| self.msg(*n).carried_in(t)) {
                return Err(format!("non-originating {t} is carried at {}", fmt_node(n)));
            }
        }
        self.close()?;
        let uniq: Vec<Term> = self.uniq.iter().cloned().collect();
        for t in &uniq {
            let choosers = self.choosers(t);
            if choosers.len() > 1 {
                return self.merge_choosers(t, choosers[0], choosers[1]);
            }
            if let Some(&c) = choosers.first() {
                let later: Vec<Node> = self.nodes().filter(|m| m.0 != c.0 && self.msg(*m).present_in(t)).collect();
                for m in later {
                    self.order.insert((c, m));
                }
            }
        }
        self.close()?;
        Ok(vec![self])
    }

    /// Nodes at which `t` is chosen.
    pub fn choosers(&self, t: &Term) -> Vec<Node> {
        let mut out = Vec::new();
        for (s, st) in self.strands.iter().enumerate() {
            if let Some(i) = st.events.iter().position(|ev| ev.msg.present_in(t)) {
                if st.events[i].dir == Dir::Send {
                    out.push((s, i));
                }
            }
        }
        out
    }

    fn merge_choosers(self, t: &Term, a: Node, b: Node) -> Result<Vec<Skeleton>, Dead> {
        let (sa, sb) = (&self.strands[a.0], &self.strands[b.0]);
        if sa.kind != sb.kind || a.1 != b.1 || sa.is_listener() {
            return Err(format!("{t} chosen at both {} and {}", fmt_node(a), fmt_node(b)));
        }
        let StrandKind::Role(r) = sa.kind else { unreachable!() };
        let low = sa.height.min(sb.height);
        let mut eqs = Vec::new();
        for v in self.protocol.roles[r].params(low) {
            eqs.push((sa.env.image(&v), sb.env.image(&v)));
        }
        let mut fresh = self.fresh.clone();
        let sols = unify::unify_system(&eqs, &BTreeSet::new(), &mut fresh, true);
        if sols.is_empty() {
            return Err(format!("{t} forces {} and {} together, but they disagree", fmt_node(a), fmt_node(b)));
        }
        let mut out = Vec::new();
        let mut last = None;
        for sigma in sols {
            let mut sk = self.clone();
            sk.fresh = fresh.clone();
            match sk.merge_strands(a.0, b.0).and_then(|m| m.apply_subst(&sigma)) {
                Ok(v) => out.extend(v),
                Err(e) => last = Some(e),
            }
        }
        if out.is_empty() {
            Err(last.unwrap_or_else(|| "strand merge failed".into()))
        } else {
            Ok(out)
        }
    }

    /// Identifies strand `b` with strand `a`, keeping the taller instance.
    pub fn merge_strands(&self, a: usize, b: usize) -> Result<Skeleton, Dead> {
        let mut out = self.clone();
        let (keep, drop) = (a.min(b), a.max(b));
        let tall = if self.strands[a].height >= self.strands[b].height { a } else { b };
        let merged = self.strands[tall].clone();
        out.strands[keep] = merged;
        out.strands.remove(drop);
        let remap = |n: Node| -> Node {
            let s = if n.0 == drop {
                keep
            } else if n.0 > drop {
                n.0 - 1
            } else {
                n.0
            };
            (s, n.1)
        };
        let mut order = BTreeSet::new();
        for (x, y) in &self.order {
            let (x, y) = (remap(*x), remap(*y));
            if x.0 == y.0 {
                if x.1 >= y.1 {
                    return Err("merged strand would precede itself".into());
                }
                continue;
            }
            order.insert((x, y));
        }
        out.order = order;
        Ok(out)
    }

    /// Transitive closure; fails on a cycle.
    fn close(&mut self) -> Result<(), Dead> {
        let nodes: Vec<Node> = self.nodes().collect();
        let idx: BTreeMap<Node, usize> = nodes.iter().enumerate().map(|(i, n)| (*n, i)).collect();
        let k = nodes.len();
        let mut reach = vec![vec![false; k]; k];
        for (a, b) in &self.order {
            if let (Some(&i), Some(&j)) = (idx.get(a), idx.get(b)) {
                reach[i][j] = true;
            }
        }
        for (i, n) in nodes.iter().enumerate() {
            if n.1 > 0 {
                reach[idx[&(n.0, n.1 - 1)]][i] = true;
            }
        }
        for m in 0..k {
            for i in 0..k {
                if reach[i][m] {
                    for j in 0..k {
                        if reach[m][j] {
                            reach[i][j] = true;
                        }
                    }
                }
            }
        }
        if let Some(i) = (0..k).find(|&i| reach[i][i]) {
            return Err(format!("order cycle through {}", fmt_node(nodes[i])));
        }
        self.order.clear();
        for i in 0..k {
            for j in 0..k {
                if reach[i][j] && nodes[i].0 != nodes[j].0 {
                    self.order.insert((nodes[i], nodes[j]));
                }
            }
        }
        Ok(())
    }

    /// Cross-strand order edges not implied by others.
    pub fn order_reduct(&self) -> Vec<(Node, Node)> {
        let mut out = Vec::new();
        for &(a, b) in &self.order {
            let implied = self
                .nodes()
                .any(|m| m != a && m != b && self.before(a, m) && self.before(m, b));
            if !implied {
                out.push((a, b));
            }
        }
        out
    }

    /// Label-free summary used to bucket candidates for [`iso`].
    pub fn fingerprint(&self) -> String {
        let mut strands: Vec<String> = self.strands.iter().map(strand_signature).collect();
        strands.sort();
        format!(
            "{}|o{}|n{}|u{}|a{}|d{}",
            strands.join(";"),
            self.order.len(),
            self.non.len(),
            self.uniq.len(),
            self.absent.len(),
            self.neq.len()
        )
    }

    fn same_protocol(&self, other: &Skeleton) -> bool {
        Arc::ptr_eq(&self.protocol, &other.protocol) || self.protocol == other.protocol
    }

    /// Equal up to strand order and variable renaming, facts included.
    pub fn iso(&self, other: &Skeleton) -> bool {
        if !self.same_protocol(other) || self.strands.len() != other.strands.len() || self.fingerprint() != other.fingerprint() {
            return false;
        }
        let sig_a: Vec<String> = self.strands.iter().map(strand_signature).collect();
        let sig_b: Vec<String> = other.strands.iter().map(strand_signature).collect();
        let mut perm = vec![usize::MAX; self.strands.len()];
        let mut used = vec![false; other.strands.len()];
        self.iso_perm(other, &sig_a, &sig_b, 0, &mut perm, &mut used)
    }

    fn iso_perm(
        &self,
        other: &Skeleton,
        sig_a: &[String],
        sig_b: &[String],
        i: usize,
        perm: &mut Vec<usize>,
        used: &mut Vec<bool>,
    ) -> bool {
        if i == perm.len() {
            return self.iso_with(other, perm);
        }
        for j in 0..used.len() {
            if !used[j] && sig_a[i] == sig_b[j] {
                used[j] = true;
                perm[i] = j;
                if self.iso_perm(other, sig_a, sig_b, i + 1, perm, used) {
                    return true;
                }
                used[j] = false;
            }
        }
        false
    }

    fn iso_with(&self, other: &Skeleton, perm: &[usize]) -> bool {
        for &(a, b) in &self.order {
            if !other.order.contains(&((perm[a.0], a.1), (perm[b.0], b.1))) {
                return false;
            }
        }
        let mut pairs = Vec::new();
        for (i, st) in self.strands.iter().enumerate() {
            let ot = &other.strands[perm[i]];
            if st.is_listener() {
                pairs.push((st.events[0].msg.clone(), ot.events[0].msg.clone()));
            } else {
                for (v, t) in st.env.iter() {
                    pairs.push((t.clone(), ot.env.image(v)));
                }
            }
        }
        let check = |r: &Renaming| {
            let s = r.subst();
            let map_set = |xs: &BTreeSet<Term>| -> BTreeSet<Term> { xs.iter().map(|t| s.apply(t)).collect() };
            map_set(&self.non) == other.non
                && map_set(&self.uniq) == other.uniq
                && self
                    .absent
                    .iter()
                    .map(|(x, m)| (r.var(x), s.apply_mono(m)))
                    .collect::<BTreeSet<_>>()
                    == other.absent
                && self
                    .neq
                    .iter()
                    .map(|(a, b)| ordered(s.apply(a), s.apply(b)))
                    .collect::<BTreeSet<_>>()
                    == other.neq
        };
        Renaming::default().solve(pairs, &check).is_some()
    }

    /// Homomorphism from `self` into `target`: a strand map and a
    /// substitution carrying bindings, facts, and order along.
    pub fn homomorphism_to(&self, target: &Skeleton) -> Option<(Vec<usize>, Subst)> {
        if !self.same_protocol(target) {
            return None;
        }
        let mut phi = vec![usize::MAX; self.strands.len()];
        self.hom_search(target, 0, &mut phi)
    }

    fn hom_search(&self, target: &Skeleton, i: usize, phi: &mut Vec<usize>) -> Option<(Vec<usize>, Subst)> {
        if i == phi.len() {
            return self.hom_check(target, phi).map(|s| (phi.clone(), s));
        }
        let st = &self.strands[i];
        for (j, ot) in target.strands.iter().enumerate() {
            let compatible = match (&st.kind, &ot.kind) {
                (StrandKind::Role(a), StrandKind::Role(b)) => a == b && st.height <= ot.height,
                (StrandKind::Listener { .. }, StrandKind::Listener { .. }) => true,
                _ => false,
            };
            if !compatible {
                continue;
            }
            phi[i] = j;
            if let Some(found) = self.hom_search(target, i + 1, phi) {
                return Some(found);
            }
        }
        None
    }

    fn hom_check(&self, target: &Skeleton, phi: &[usize]) -> Option<Subst> {
        for &(a, b) in &self.order {
            if !target.before((phi[a.0], a.1), (phi[b.0], b.1)) {
                return None;
            }
        }
        let mut pairs = Vec::new();
        for (i, st) in self.strands.iter().enumerate() {
            let ot = &target.strands[phi[i]];
            if st.is_listener() {
                pairs.push((st.events[0].msg.clone(), ot.events[0].msg.clone()));
            } else {
                for (v, t) in st.env.iter() {
                    pairs.push((t.clone(), ot.env.image(v)));
                }
            }
        }
        if pairs.is_empty() {
            return self.facts_preserved(target, &Subst::new()).then(Subst::new);
        }
        let sols = unify::match_system(&pairs, &target.vars());
        sols.into_iter().find(|s| self.facts_preserved(target, s))
    }

    fn facts_preserved(&self, target: &Skeleton, s: &Subst) -> bool {
        self.non.iter().all(|t| target.non.contains(&s.apply(t)))
            && self.uniq.iter().all(|t| target.uniq.contains(&s.apply(t)))
            && self.absent.iter().all(|(x, m)| match s.image(x).trsc_var() {
                Some(y) => target.absent.contains(&(y.clone(), s.apply_mono(m))) || s.apply_mono(m).degree(y) == 0,
                None => false,
            })
            && self.neq.iter().all(|(a, b)| {
                let (a, b) = (s.apply(a), s.apply(b));
                a != b
            })
    }

    /// Regular strands of a role, by index.
    pub fn role_strands(&self, role: usize) -> impl Iterator<Item = usize> + '_ {
        self.strands
            .iter()
            .enumerate()
            .filter(move |(_, st)| st.kind == StrandKind::Role(role))
            .map(|(i, _)| i)
    }
}

/// Events of a role prefix under a binding.
fn events_of(p: &Protocol, role: usize, height: usize, env: &Subst) -> Vec<Event> {
    p.roles[role].trace[..height]
        .iter()
        .map(|ev| Event { dir: ev.dir, msg: env.apply(&ev.msg) })
        .collect()
}

pub fn ordered(a: Term, b: Term) -> (Term, Term) {
    if a <= b {
        (a, b)
    } else {
        (b, a)
    }
}

pub fn fmt_node(n: Node) -> String {
    format!("({} {})", n.0, n.1)
}

fn strand_signature(st: &Strand) -> String {
    let kind = match &st.kind {
        StrandKind::Role(r) => format!("r{r}"),
        StrandKind::Listener { group_split } => format!("l{}", *group_split as u8),
    };
    let evs: Vec<String> = st.events.iter().map(|e| format!("{}{}", e.dir.sign(), erased(&e.msg))).collect();
    format!("{kind}/{}/{}", st.height, evs.join(","))
}

/// Term shape with variable names replaced by sorts.
fn erased(t: &Term) -> String {
    match t {
        Term::Var(v) => v.sort.to_string(),
        Term::Const(c) => format!("{c:?}"),
        Term::Pair(a, b) => format!("[{} {}]", erased(a), erased(b)),
        Term::SymEnc(m, k) => format!("{{{} {}}}", erased(m), erased(k)),
        Term::AsymEnc(m, k) => format!("<{} {}>", erased(m), erased(k)),
        Term::FieldVal(m) => format!("f{}", erased_mono(m)),
        Term::GroupVal(m) => format!("g{}", erased_mono(m)),
        Term::Pk(a) => format!("pk({})", erased(a)),
        Term::Ltk(a, b) => format!("ltk({} {})", erased(a), erased(b)),
        Term::Inv(k) => format!("inv({})", erased(k)),
    }
}

fn erased_mono(m: &Monomial) -> String {
    let mut parts: Vec<(Sort, i64)> = m.factors().map(|(v, e)| (v.sort, e)).collect();
    parts.sort();
    let items: Vec<String> = parts.iter().map(|(s, e)| format!("{s}^{e}")).collect();
    format!("({})", items.join("*"))
}

/// Bijective variable renaming built by structural matching.
#[derive(Debug, Clone, Default)]
pub struct Renaming {
    fwd: BTreeMap<Var, Var>,
    bwd: BTreeMap<Var, Var>,
}

impl Renaming {
    pub fn var(&self, v: &Var) -> Var {
        self.fwd.get(v).cloned().unwrap_or_else(|| v.clone())
    }

    pub fn subst(&self) -> Subst {
        let mut s = Subst::new();
        for (a, b) in &self.fwd {
            if a != b {
                s.insert(a.clone(), var_term(b));
            }
        }
        s
    }

    fn bind(&mut self, a: &Var, b: &Var) -> bool {
        if a.sort != b.sort {
            return false;
        }
        match (self.fwd.get(a), self.bwd.get(b)) {
            (Some(x), _) if x != b => false,
            (_, Some(y)) if y != a => false,
            (Some(_), Some(_)) => true,
            _ => {
                self.fwd.insert(a.clone(), b.clone());
                self.bwd.insert(b.clone(), a.clone());
                true
            }
        }
    }

    /// First renaming matching every pair and passing `check`.
    pub fn solve(self, mut stack: Vec<(Term, Term)>, check: &dyn Fn(&Renaming) -> bool) -> Option<Renaming> {
        let mut ren = self;
        while let Some((a, b)) = stack.pop() {
            match (&a, &b) {
                (Term::Var(x), Term::Var(y)) => {
                    if !ren.bind(x, y) {
                        return None;
                    }
                }
                (Term::Const(x), Term::Const(y)) => {
                    if x != y {
                        return None;
                    }
                }
                (Term::Pair(a1, a2), Term::Pair(b1, b2))
                | (Term::SymEnc(a1, a2), Term::SymEnc(b1, b2))
                | (Term::AsymEnc(a1, a2), Term::AsymEnc(b1, b2))
                | (Term::Ltk(a1, a2), Term::Ltk(b1, b2)) => {
                    stack.push(((**a1).clone(), (**b1).clone()));
                    stack.push(((**a2).clone(), (**b2).clone()));
                }
                (Term::Pk(x), Term::Pk(y)) | (Term::Inv(x), Term::Inv(y)) => {
                    stack.push(((**x).clone(), (**y).clone()));
                }
                (Term::FieldVal(m), Term::FieldVal(n)) | (Term::GroupVal(m), Term::GroupVal(n)) => {
                    if m.len() != n.len() {
                        return None;
                    }
                    let left: Vec<(Var, i64)> = m.factors().map(|(v, e)| (v.clone(), e)).collect();
                    let right: Vec<(Var, i64)> = n.factors().map(|(v, e)| (v.clone(), e)).collect();
                    return ren.pair_factors(&left, &right, &mut vec![false; right.len()], stack, check);
                }
                _ => return None,
            }
        }
        if check(&ren) {
            Some(ren)
        } else {
            None
        }
    }

    fn pair_factors(
        &self,
        left: &[(Var, i64)],
        right: &[(Var, i64)],
        used: &mut Vec<bool>,
        stack: Vec<(Term, Term)>,
        check: &dyn Fn(&Renaming) -> bool,
    ) -> Option<Renaming> {
        let Some(((v, e), rest)) = left.split_first() else {
            return self.clone().solve(stack, check);
        };
        for j in 0..right.len() {
            if used[j] || right[j].1 != *e {
                continue;
            }
            let mut r = self.clone();
            if r.bind(v, &right[j].0) {
                used[j] = true;
                if let Some(found) = r.pair_factors(rest, right, used, stack.clone(), check) {
                    return Some(found);
                }
                used[j] = false;
            }
        }
        None
    }
}

/// Builds a skeleton from strand claims. Claims sharing a label describe
/// one strand: the tallest height wins and bindings are unified.
pub fn expand(
    protocol: Arc<Protocol>,
    claims: &[StrandClaim],
    listeners: &[(usize, Term)],
    facts: &[Fact],
    neq: &[(Term, Term)],
    precedes: &[(Node, Node)],
    declared: &[Var],
) -> Result<(Skeleton, BTreeMap<usize, usize>), Dead> {
    let mut sk = Skeleton::empty(protocol.clone());
    sk.fresh = Fresh::above(declared.iter());
    let mut labels: Vec<usize> = Vec::new();
    let mut grouped: BTreeMap<usize, Vec<&StrandClaim>> = BTreeMap::new();
    for c in claims {
        if !grouped.contains_key(&c.label) {
            labels.push(c.label);
        }
        grouped.entry(c.label).or_default().push(c);
    }
    let mut eqs: Vec<(Term, Term)> = Vec::new();
    let mut strand_of: BTreeMap<usize, usize> = BTreeMap::new();
    let mut all_labels: Vec<(usize, Option<Term>)> = labels.iter().map(|l| (*l, None)).collect();
    all_labels.extend(listeners.iter().map(|(l, t)| (*l, Some(t.clone()))));
    all_labels.sort_by_key(|(l, _)| *l);
    for (label, listen) in all_labels {
        if let Some(t) = listen {
            let s = sk.add_listener(t, None, false);
            strand_of.insert(label, s);
            continue;
        }
        let group = &grouped[&label];
        let role_name = &group[0].role;
        if group.iter().any(|c| &c.role != role_name) {
            return Err(format!("strand {label} claimed by several roles"));
        }
        let (ri, role) = protocol.role(role_name).ok_or_else(|| format!("unknown role {role_name}"))?;
        let height = group.iter().map(|c| c.height).max().unwrap();
        if height == 0 || height > role.len() {
            return Err(format!("height {height} out of range for role {role_name}"));
        }
        let mut binds = Subst::new();
        for c in group {
            for (v, t) in &c.binds {
                if !role.vars.contains(v) {
                    return Err(format!("{} is not a variable of role {role_name}", v.name));
                }
                match binds.get(v) {
                    Some(prev) => eqs.push((prev.clone(), t.clone())),
                    None => binds.insert(v.clone(), t.clone()),
                }
            }
        }
        let s = sk.add_role_strand(ri, height, &binds);
        strand_of.insert(label, s);
    }
    for f in facts {
        match f {
            Fact::Non(t) => {
                sk.non.insert(t.clone());
            }
            Fact::Uniq(t) => {
                sk.uniq.insert(t.clone());
            }
            Fact::Absent(x, m) => {
                sk.absent.insert((x.clone(), m.clone()));
            }
        }
    }
    for (a, b) in neq {
        sk.neq.insert(ordered(a.clone(), b.clone()));
    }
    for (a, b) in precedes {
        let (Some(&sa), Some(&sb)) = (strand_of.get(&a.0), strand_of.get(&b.0)) else {
            return Err("precedes names an unknown strand".into());
        };
        if a.1 >= sk.strands[sa].height || b.1 >= sk.strands[sb].height {
            return Err("precedes names a node beyond the strand height".into());
        }
        if sa == sb {
            if a.1 >= b.1 {
                return Err("precedes contradicts strand order".into());
            }
            continue;
        }
        sk.order.insert(((sa, a.1), (sb, b.1)));
    }
    let mut fresh = sk.fresh.clone();
    let sols = unify::unify_system(&eqs, &BTreeSet::new(), &mut fresh, true);
    let Some(sigma) = sols.into_iter().next() else {
        return Err("conflicting parameter values on one strand".into());
    };
    sk.fresh = fresh;
    let mut out = sk.apply_subst(&sigma)?;
    Ok((out.remove(0), strand_of))
}

impl fmt::Display for Skeleton {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "(defskeleton {}", self.protocol.name)?;
        let vars = self.vars();
        let mut decl: BTreeMap<Sort, Vec<String>> = BTreeMap::new();
        for v in &vars {
            decl.entry(v.sort).or_default().push(v.name.to_string());
        }
        write!(f, "  (vars")?;
        for (s, names) in &decl {
            write!(f, " ({} {s})", names.join(" "))?;
        }
        writeln!(f, ")")?;
        for st in &self.strands {
            match &st.kind {
                StrandKind::Role(r) => {
                    write!(f, "  (defstrand {} {}", self.protocol.roles[*r].name, st.height)?;
                    for (v, t) in st.env.iter() {
                        write!(f, " ({} {})", v.name, unify::bound_value(v, t))?;
                    }
                    writeln!(f, ")")?;
                }
                StrandKind::Listener { .. } => writeln!(f, "  (deflistener {})", st.events[0].msg)?,
            }
        }
        let reduct = self.order_reduct();
        if !reduct.is_empty() {
            write!(f, "  (precedes")?;
            for (a, b) in reduct {
                write!(f, " ({} {})", fmt_node(a), fmt_node(b))?;
            }
            writeln!(f, ")")?;
        }
        for t in &self.non {
            writeln!(f, "  (non-orig {t})")?;
        }
        for t in &self.uniq {
            writeln!(f, "  (uniq-gen {t})")?;
        }
        for (x, m) in &self.absent {
            writeln!(f, "  (absent {x} {m})")?;
        }
        for (a, b) in &self.neq {
            writeln!(f, "  (neq ({a} {b}))")?;
        }
        write!(f, ")")
    }
}

/// A group value mentioning `t` ahead of its choice point that also has a
/// group variable factor. Rebasing that variable moves `t` out while
/// denoting the same instances.
fn absorb_early(t: &Term, events: &[Event], n: usize, fresh: &mut Fresh) -> Option<Subst> {
    let y = t.trsc_var()?;
    let mut vals = Vec::new();
    for ev in events.iter().take(n.saturating_sub(1)) {
        group_vals(&ev.msg, &mut vals);
    }
    vals.iter().find_map(|m| {
        let d = m.degree(y);
        if d == 0 {
            return None;
        }
        let h = m.vars().find(|v| v.sort == Sort::Grp && m.degree(v) == 1)?;
        let mut img = Monomial::var(fresh.var(h));
        img.add_factor(y.clone(), -d);
        Some(Subst::single(h.clone(), Term::FieldVal(img)))
    })
}

fn group_vals<'a>(t: &'a Term, out: &mut Vec<&'a Monomial>) {
    match t {
        Term::GroupVal(m) => out.push(m),
        Term::Pair(a, b) | Term::SymEnc(a, b) | Term::AsymEnc(a, b) | Term::Ltk(a, b) => {
            group_vals(a, out);
            group_vals(b, out);
        }
        Term::Pk(a) | Term::Inv(a) => group_vals(a, out),
        _ => {}
    }
}
