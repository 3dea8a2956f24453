//! Roles, protocols, compliance, and role instances.

use std::collections::BTreeSet;
use std::fmt;

use serde::Serialize;
use thiserror::Error;

use crate::algebra::{chosen_at, Dir, Event, Monomial, Sort, Term, Var};
use crate::unify::Subst;

/// Atomic node assumption.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Fact {
    Non(Term),
    Uniq(Term),
    Absent(Var, Monomial),
}

impl Fact {
    pub fn vars(&self) -> BTreeSet<Var> {
        match self {
            Fact::Non(t) | Fact::Uniq(t) => t.vars(),
            Fact::Absent(x, m) => {
                let mut out: BTreeSet<Var> = m.vars().cloned().collect();
                out.insert(x.clone());
                out
            }
        }
    }

    pub fn apply(&self, s: &Subst) -> Fact {
        match self {
            Fact::Non(t) => Fact::Non(s.apply(t)),
            Fact::Uniq(t) => Fact::Uniq(s.apply(t)),
            Fact::Absent(x, m) => {
                let x = match s.image(x).trsc_var() {
                    Some(v) => v.clone(),
                    None => panic!("absent variable {x} bound to a non-transcendental"),
                };
                Fact::Absent(x, s.apply_mono(m))
            }
        }
    }
}

impl fmt::Display for Fact {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Fact::Non(t) => write!(f, "(non-orig {t})"),
            Fact::Uniq(t) => write!(f, "(uniq-gen {t})"),
            Fact::Absent(x, m) => write!(f, "(absent {x} {m})"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Role {
    pub name: String,
    pub vars: Vec<Var>,
    pub trace: Vec<Event>,
    /// `(node, fact)` with 1-based nodes: the fact holds once the strand
    /// reaches that node.
    pub assumptions: Vec<(usize, Fact)>,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum RoleError {
    #[error("role {role}: empty trace")]
    EmptyTrace { role: String },
    #[error("role {role}: assumption {fact} mentions variables that never occur in the trace")]
    Unanchored { role: String, fact: String },
    #[error("role {role}: uniq-gen value {value} is not chosen on a transmission")]
    NotChosen { role: String, value: String },
}

impl Role {
    /// Builds a role, attaching each assumption to the first node by which
    /// all of its variables have occurred.
    pub fn new(name: &str, vars: Vec<Var>, trace: Vec<Event>, facts: Vec<Fact>) -> Result<Role, RoleError> {
        if trace.is_empty() {
            return Err(RoleError::EmptyTrace { role: name.to_string() });
        }
        let mut assumptions = Vec::new();
        for fact in facts {
            let fv = fact.vars();
            let mut seen = BTreeSet::new();
            let mut node = None;
            for (i, ev) in trace.iter().enumerate() {
                ev.msg.collect_vars(&mut seen);
                if fv.is_subset(&seen) {
                    node = Some(i + 1);
                    break;
                }
            }
            let Some(mut node) = node else {
                return Err(RoleError::Unanchored { role: name.to_string(), fact: fact.to_string() });
            };
            if let Fact::Uniq(t) = &fact {
                match (1..=trace.len()).find(|&i| chosen_at(t, &trace, i)) {
                    Some(i) => node = node.max(i),
                    None => {
                        return Err(RoleError::NotChosen { role: name.to_string(), value: t.to_string() });
                    }
                }
            }
            assumptions.push((node, fact));
        }
        Ok(Role { name: name.to_string(), vars, trace, assumptions })
    }

    pub fn len(&self) -> usize {
        self.trace.len()
    }

    pub fn is_empty(&self) -> bool {
        self.trace.is_empty()
    }

    /// Variables occurring in the first `height` events.
    pub fn params(&self, height: usize) -> BTreeSet<Var> {
        let mut out = BTreeSet::new();
        for ev in &self.trace[..height.min(self.trace.len())] {
            ev.msg.collect_vars(&mut out);
        }
        out
    }

    /// Node (1-based) at which `t` is uniquely generated, if assumed.
    pub fn uniq_node(&self, t: &Term) -> Option<usize> {
        self.assumptions.iter().find_map(|(n, f)| match f {
            Fact::Uniq(u) if u == t => Some(*n),
            _ => None,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Protocol {
    pub name: String,
    pub roles: Vec<Role>,
    /// Additive operators seen while reading roles, as `(role, location)`.
    pub additive: Vec<(String, String)>,
}

impl Protocol {
    pub fn new(name: &str, roles: Vec<Role>) -> Protocol {
        Protocol { name: name.to_string(), roles, additive: Vec::new() }
    }

    pub fn role(&self, name: &str) -> Option<(usize, &Role)> {
        self.roles.iter().enumerate().find(|(_, r)| r.name == name)
    }

    /// Longest role trace.
    pub fn max_trace_len(&self) -> usize {
        self.roles.iter().map(|r| r.len()).max().unwrap_or(0)
    }

    /// Largest parameter count of a role.
    pub fn max_params(&self) -> usize {
        self.roles.iter().map(|r| r.params(r.len()).len()).max().unwrap_or(0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum ViolationKind {
    SeparatesTranscendentals,
    Acquired,
    Additive,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Violation {
    pub kind: ViolationKind,
    pub role: String,
    pub node: Option<usize>,
    pub path: Option<Vec<usize>>,
    pub detail: String,
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let kind = match self.kind {
            ViolationKind::SeparatesTranscendentals => "separates-transcendentals",
            ViolationKind::Acquired => "acquired",
            ViolationKind::Additive => "additive",
        };
        write!(f, "{kind}: role {}", self.role)?;
        if let Some(n) = self.node {
            write!(f, " node {n}")?;
        }
        if let Some(p) = &self.path {
            write!(f, " path {p:?}")?;
        }
        write!(f, ": {}", self.detail)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct ComplianceReport {
    pub protocol: String,
    pub violations: Vec<Violation>,
}

impl ComplianceReport {
    pub fn passed(&self) -> bool {
        self.violations.is_empty()
    }
}

pub fn check_compliant(p: &Protocol) -> ComplianceReport {
    let mut violations = Vec::new();
    for (role, loc) in &p.additive {
        violations.push(Violation {
            kind: ViolationKind::Additive,
            role: role.clone(),
            node: None,
            path: None,
            detail: format!("additive operator at {loc}"),
        });
    }
    for role in &p.roles {
        for (i, ev) in role.trace.iter().enumerate() {
            if ev.dir != Dir::Send {
                continue;
            }
            for (path, sub) in ev.msg.carried_positions() {
                if let Term::FieldVal(m) = sub {
                    if sub.trsc_var().is_none() {
                        violations.push(Violation {
                            kind: ViolationKind::SeparatesTranscendentals,
                            role: role.name.clone(),
                            node: Some(i + 1),
                            path: Some(path),
                            detail: format!("transmits field value {m} in carried position"),
                        });
                    }
                }
            }
        }
        let mut seen: BTreeSet<Var> = BTreeSet::new();
        for (i, ev) in role.trace.iter().enumerate() {
            for v in ev.msg.vars() {
                if seen.contains(&v) {
                    continue;
                }
                if v.sort == Sort::Mesg && !(ev.dir == Dir::Recv && ev.msg.carried_in(&Term::var(v.clone()))) {
                    violations.push(Violation {
                        kind: ViolationKind::Acquired,
                        role: role.name.clone(),
                        node: Some(i + 1),
                        path: None,
                        detail: format!("message variable {v} is not acquired"),
                    });
                }
            }
            ev.msg.collect_vars(&mut seen);
        }
    }
    ComplianceReport { protocol: p.name.clone(), violations }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Instance {
    pub events: Vec<Event>,
    pub obligations: Vec<Fact>,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum InstanceError {
    #[error("height {height} out of range 1..={len}")]
    Height { height: usize, len: usize },
    #[error("substitution is not sort-respecting")]
    Sort,
}

/// The first `height` events of `role` under `sigma`, with the facts the
/// owning skeleton must install.
pub fn instance_of(role: &Role, height: usize, sigma: &Subst) -> Result<Instance, InstanceError> {
    if height == 0 || height > role.len() {
        return Err(InstanceError::Height { height, len: role.len() });
    }
    if !sigma.is_sort_respecting() {
        return Err(InstanceError::Sort);
    }
    let events = role.trace[..height]
        .iter()
        .map(|ev| Event { dir: ev.dir, msg: sigma.apply(&ev.msg) })
        .collect();
    let obligations = role
        .assumptions
        .iter()
        .filter(|(n, _)| *n <= height)
        .map(|(_, f)| f.apply(sigma))
        .collect();
    Ok(Instance { events, obligations })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn v(n: &str, s: Sort) -> Var {
        Var::new(n, s)
    }

    fn reg() -> Role {
        let p = v("P", Sort::Name);
        let l = v("l", Sort::Trsc);
        let gl = Term::GroupVal(Monomial::var(l.clone()));
        Role::new(
            "reg",
            vec![p.clone(), l.clone()],
            vec![
                Event::send(Term::enc(gl, Term::privk(Term::var(p)))),
                Event::recv(Term::tag("dummy")),
                Event::send(Term::var(l.clone())),
            ],
            vec![Fact::Uniq(Term::var(l))],
        )
        .unwrap()
    }

    #[test]
    fn registration_instance() {
        let r = reg();
        let b = v("B", Sort::Name);
        let bx = v("b", Sort::Trsc);
        let mut s = Subst::new();
        s.insert(v("P", Sort::Name), Term::var(b.clone()));
        s.insert(v("l", Sort::Trsc), Term::var(bx.clone()));
        let inst = instance_of(&r, 1, &s).unwrap();
        assert_eq!(inst.events.len(), 1);
        assert_eq!(
            inst.events[0].msg,
            Term::enc(Term::GroupVal(Monomial::var(bx.clone())), Term::privk(Term::var(b)))
        );
        assert_eq!(inst.obligations, vec![Fact::Uniq(Term::var(bx))]);
        assert!(instance_of(&r, 0, &s).is_err());
        let full = instance_of(&r, 3, &s).unwrap();
        assert_eq!(full.events[..1], inst.events[..]);
    }

    #[test]
    fn separation_violation() {
        let x = v("x", Sort::Trsc);
        let y = v("y", Sort::Trsc);
        let r = Role::new(
            "bad",
            vec![x.clone(), y.clone()],
            vec![Event::send(Term::FieldVal(Monomial::from_pairs([(x, 1), (y, 1)])))],
            vec![],
        )
        .unwrap();
        let rep = check_compliant(&Protocol::new("p", vec![r]));
        assert_eq!(rep.violations.len(), 1);
        assert_eq!(rep.violations[0].kind, ViolationKind::SeparatesTranscendentals);
    }

    #[test]
    fn acquired_violation() {
        let m = v("m", Sort::Mesg);
        let r = Role::new("bad", vec![m.clone()], vec![Event::send(Term::var(m))], vec![]).unwrap();
        let rep = check_compliant(&Protocol::new("p", vec![r]));
        assert_eq!(rep.violations[0].kind, ViolationKind::Acquired);
    }

    #[test]
    fn registration_is_compliant() {
        assert!(check_compliant(&Protocol::new("p", vec![reg()])).passed());
    }

    #[test]
    fn uniq_must_be_chosen() {
        let x = v("x", Sort::Trsc);
        let e = Role::new(
            "r",
            vec![x.clone()],
            vec![Event::recv(Term::GroupVal(Monomial::var(x.clone())))],
            vec![Fact::Uniq(Term::var(x))],
        );
        assert!(matches!(e, Err(RoleError::NotChosen { .. })));
    }
}
