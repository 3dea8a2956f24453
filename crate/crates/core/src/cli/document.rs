//! Input documents: `defprotocol` and `defskeleton` forms.
//!
//! ```text
//! (defprotocol NAME diffie-hellman
//!   (defrole ROLE
//!     (vars (x y trsc) (h grp) (a b name) ...)
//!     (trace (send T) (recv T) ...)
//!     (non-orig T ...) (uniq-gen T ...) (absent X M)))
//! (defskeleton NAME
//!   (label SYM)
//!   (vars ...)
//!   (defstrand ROLE HEIGHT (ROLE-VAR T) ...)
//!   (deflistener T)
//!   (precedes ((S I) (S I)) ...)
//!   (non-orig T ...) (uniq-gen T ...) (absent X M) (neq (T T) ...))
//! ```
//!
//! Strands are numbered in order of appearance and nodes from 0.

use std::collections::BTreeMap;
use std::fmt::{self, Write as _};
use std::sync::Arc;

use thiserror::Error;

use super::sexp::{read_all, Loc, Sexp};
use crate::algebra::{normalize, Dir, Event, Expr, Sort, Term, Var};
use crate::protocol::{Fact, Protocol, Role};
use crate::skeleton::{self, Node, Skeleton, StrandClaim};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("{loc}: {msg}")]
pub struct ParseError {
    pub loc: Loc,
    pub msg: String,
}

fn err<T>(loc: Loc, msg: impl Into<String>) -> Result<T, ParseError> {
    Err(ParseError { loc, msg: msg.into() })
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Document {
    pub items: Vec<Item>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Item {
    Protocol(ProtocolDecl),
    Skeleton(SkeletonDecl),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ProtocolDecl {
    pub name: String,
    pub algebra: String,
    pub roles: Vec<RoleDecl>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RoleDecl {
    pub name: String,
    pub vars: Vec<Var>,
    pub trace: Vec<(Dir, Expr)>,
    pub non: Vec<Expr>,
    pub uniq: Vec<Expr>,
    pub absent: Vec<(Var, Expr)>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum StrandDecl {
    Role { role: String, height: usize, binds: Vec<(String, Expr)> },
    Listener(Expr),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SkeletonDecl {
    pub protocol: String,
    pub label: Option<String>,
    pub vars: Vec<Var>,
    pub strands: Vec<StrandDecl>,
    pub precedes: Vec<(Node, Node)>,
    pub non: Vec<Expr>,
    pub uniq: Vec<Expr>,
    pub absent: Vec<(Var, Expr)>,
    pub neq: Vec<(Expr, Expr)>,
}

impl SkeletonDecl {
    pub fn title(&self) -> String {
        match &self.label {
            Some(l) => format!("{} {l}", self.protocol),
            None => self.protocol.clone(),
        }
    }
}

type Env = BTreeMap<String, Var>;

pub fn parse(src: &str) -> Result<Document, ParseError> {
    let forms = read_all(src).map_err(|e| ParseError { loc: e.loc, msg: e.msg })?;
    let mut items = Vec::new();
    let mut known: Vec<String> = Vec::new();
    for f in &forms {
        match f.head() {
            Some("defprotocol") => {
                let p = parse_protocol(f)?;
                known.push(p.name.clone());
                items.push(Item::Protocol(p));
            }
            Some("defskeleton") => {
                let s = parse_skeleton(f, &items)?;
                if !known.contains(&s.protocol) {
                    return err(f.loc(), format!("unknown protocol {}", s.protocol));
                }
                items.push(Item::Skeleton(s));
            }
            _ => return err(f.loc(), "expected defprotocol or defskeleton"),
        }
    }
    Ok(Document { items })
}

fn sym(s: &Sexp, what: &str) -> Result<String, ParseError> {
    match s {
        Sexp::Sym(x, _) => Ok(x.clone()),
        _ => err(s.loc(), format!("expected {what}")),
    }
}

fn parse_vars(args: &[Sexp], env: &mut Env, out: &mut Vec<Var>) -> Result<(), ParseError> {
    for group in args {
        let Some(items) = group.as_list() else {
            return err(group.loc(), "expected (NAME... SORT)");
        };
        let Some((sort_s, names)) = items.split_last() else {
            return err(group.loc(), "empty variable declaration");
        };
        let sort_name = sym(sort_s, "a sort")?;
        let Some(sort) = Sort::parse(&sort_name) else {
            return err(sort_s.loc(), format!("unknown sort {sort_name}"));
        };
        for n in names {
            let name = sym(n, "a variable name")?;
            if name.contains('#') {
                return err(n.loc(), "'#' is reserved for generated names");
            }
            if env.contains_key(&name) {
                return err(n.loc(), format!("{name} declared twice"));
            }
            let v = Var::new(&name, sort);
            env.insert(name, v.clone());
            out.push(v);
        }
    }
    Ok(())
}

const ADDITIVE: [&str; 4] = ["add", "sub", "neg", "gmul"];

fn parse_expr(s: &Sexp, env: &Env) -> Result<Expr, ParseError> {
    match s {
        Sexp::Sym(name, loc) => match env.get(name) {
            Some(v) => Ok(Expr::Var(v.clone())),
            None => err(*loc, format!("undeclared variable {name}")),
        },
        Sexp::Str(t, loc) => {
            if t.is_empty() {
                return err(*loc, "the empty tag is reserved");
            }
            Ok(Expr::Tag(t.clone()))
        }
        Sexp::Int(i, loc) => err(*loc, format!("unexpected number {i}")),
        Sexp::List(items, loc) => {
            let Some(head) = items.first().and_then(|h| h.as_sym()) else {
                return err(*loc, "expected an operator");
            };
            let args = items[1..].iter().map(|a| parse_expr(a, env)).collect::<Result<Vec<_>, _>>()?;
            let arity = |n: usize| -> Result<(), ParseError> {
                if args.len() == n {
                    Ok(())
                } else {
                    err(*loc, format!("{head} takes {n} argument(s)"))
                }
            };
            let b = |e: &Expr| Box::new(e.clone());
            let enc_args = |args: &[Expr]| -> Result<(Box<Expr>, Box<Expr>), ParseError> {
                if args.len() < 2 {
                    return err(*loc, format!("{head} needs a plaintext and a key"));
                }
                let (key, body) = args.split_last().unwrap();
                let m = if body.len() == 1 { body[0].clone() } else { Expr::Cat(body.to_vec()) };
                Ok((Box::new(m), Box::new(key.clone())))
            };
            Ok(match head {
                "gen" => {
                    arity(0)?;
                    Expr::Gen
                }
                "one" => {
                    arity(0)?;
                    Expr::One
                }
                "cat" if !args.is_empty() => Expr::Cat(args),
                "enc" => {
                    let (m, k) = enc_args(&args)?;
                    Expr::Enc(m, k)
                }
                "senc" => {
                    let (m, k) = enc_args(&args)?;
                    Expr::SEnc(m, k)
                }
                "hash" if !args.is_empty() => Expr::Hash(args),
                "exp" => {
                    arity(2)?;
                    Expr::Exp(b(&args[0]), b(&args[1]))
                }
                "mul" if !args.is_empty() => Expr::Mul(args),
                "rec" => {
                    arity(1)?;
                    Expr::Rec(b(&args[0]))
                }
                "pubk" => {
                    arity(1)?;
                    Expr::Pubk(b(&args[0]))
                }
                "privk" => {
                    arity(1)?;
                    Expr::Privk(b(&args[0]))
                }
                "ltk" => {
                    arity(2)?;
                    Expr::Ltk(b(&args[0]), b(&args[1]))
                }
                "invk" => {
                    arity(1)?;
                    Expr::Invk(b(&args[0]))
                }
                op if ADDITIVE.contains(&op) => Expr::Additive(op.to_string(), args),
                other => return err(*loc, format!("unknown operator {other}")),
            })
        }
    }
}

/// Parses and sort-checks a term.
fn parse_term(s: &Sexp, env: &Env) -> Result<(Expr, Term), ParseError> {
    let e = parse_expr(s, env)?;
    if has_additive(&e) {
        return err(s.loc(), "additive operators are not supported here");
    }
    let t = normalize(&e).map_err(|x| ParseError { loc: s.loc(), msg: x.to_string() })?;
    Ok((e, t))
}

fn has_additive(e: &Expr) -> bool {
    match e {
        Expr::Additive(..) => true,
        Expr::Var(_) | Expr::Tag(_) | Expr::Gen | Expr::One => false,
        Expr::Cat(v) | Expr::Hash(v) | Expr::Mul(v) => v.iter().any(has_additive),
        Expr::Enc(a, b) | Expr::SEnc(a, b) | Expr::Exp(a, b) | Expr::Ltk(a, b) => has_additive(a) || has_additive(b),
        Expr::Rec(a) | Expr::Pubk(a) | Expr::Privk(a) | Expr::Invk(a) => has_additive(a),
    }
}

fn parse_absent(args: &[Sexp], env: &Env) -> Result<(Var, Expr), ParseError> {
    let [x, m] = args else {
        return err(args.first().map(|a| a.loc()).unwrap_or_default(), "absent takes a transcendental and a field value");
    };
    let (_, xt) = parse_term(x, env)?;
    let Some(xv) = xt.trsc_var().cloned() else {
        return err(x.loc(), "absent expects a transcendental");
    };
    let (me, mt) = parse_term(m, env)?;
    let Term::FieldVal(mu) = mt else {
        return err(m.loc(), "absent expects a field value");
    };
    if mu.degree(&xv) != 0 {
        return err(m.loc(), format!("contradictory absent: {xv} occurs in {mu}"));
    }
    Ok((xv, me))
}

fn parse_protocol(f: &Sexp) -> Result<ProtocolDecl, ParseError> {
    let args = f.tagged("defprotocol").unwrap();
    if args.len() < 2 {
        return err(f.loc(), "defprotocol needs a name and an algebra");
    }
    let name = sym(&args[0], "a protocol name")?;
    let algebra = sym(&args[1], "an algebra name")?;
    let mut roles = Vec::new();
    for r in &args[2..] {
        match r.head() {
            Some("defrole") => roles.push(parse_role(r)?),
            _ => return err(r.loc(), "expected defrole"),
        }
    }
    Ok(ProtocolDecl { name, algebra, roles })
}

fn parse_role(f: &Sexp) -> Result<RoleDecl, ParseError> {
    let args = f.tagged("defrole").unwrap();
    let Some(first) = args.first() else {
        return err(f.loc(), "defrole needs a name");
    };
    let mut role = RoleDecl {
        name: sym(first, "a role name")?,
        vars: Vec::new(),
        trace: Vec::new(),
        non: Vec::new(),
        uniq: Vec::new(),
        absent: Vec::new(),
    };
    let mut env = Env::new();
    for part in &args[1..] {
        let rest = &part.as_list().unwrap_or(&[])[..];
        let rest = if rest.is_empty() { rest } else { &rest[1..] };
        match part.head() {
            Some("vars") => parse_vars(rest, &mut env, &mut role.vars)?,
            Some("trace") => {
                for ev in rest {
                    let (dir, body) = match (ev.head(), ev.as_list()) {
                        (Some("send"), Some([_, b])) => (Dir::Send, b),
                        (Some("recv"), Some([_, b])) => (Dir::Recv, b),
                        _ => return err(ev.loc(), "expected (send T) or (recv T)"),
                    };
                    role.trace.push((dir, parse_expr(body, &env)?));
                }
            }
            Some("non-orig") => {
                for t in rest {
                    role.non.push(parse_term(t, &env)?.0);
                }
            }
            Some("uniq-gen") | Some("uniq-orig") => {
                for t in rest {
                    role.uniq.push(parse_term(t, &env)?.0);
                }
            }
            Some("absent") => role.absent.push(parse_absent(rest, &env)?),
            Some("gen-at") => {
                return err(part.loc(), "gen-at is not supported; use uniq-gen");
            }
            _ => return err(part.loc(), "expected vars, trace, non-orig, uniq-gen, or absent"),
        }
    }
    if role.trace.is_empty() {
        return err(f.loc(), format!("role {} has an empty trace", role.name));
    }
    Ok(role)
}

fn parse_node(s: &Sexp) -> Result<Node, ParseError> {
    match s.as_list() {
        Some([Sexp::Int(a, _), Sexp::Int(b, _)]) if *a >= 0 && *b >= 0 => Ok((*a as usize, *b as usize)),
        _ => err(s.loc(), "expected a node (STRAND POSITION)"),
    }
}

fn parse_skeleton(f: &Sexp, items: &[Item]) -> Result<SkeletonDecl, ParseError> {
    let args = f.tagged("defskeleton").unwrap();
    let Some(first) = args.first() else {
        return err(f.loc(), "defskeleton needs a protocol name");
    };
    let protocol = sym(first, "a protocol name")?;
    let proto = items.iter().rev().find_map(|it| match it {
        Item::Protocol(p) if p.name == protocol => Some(p),
        _ => None,
    });
    let Some(proto) = proto else {
        return err(first.loc(), format!("unknown protocol {protocol}"));
    };
    let mut sk = SkeletonDecl {
        protocol,
        label: None,
        vars: Vec::new(),
        strands: Vec::new(),
        precedes: Vec::new(),
        non: Vec::new(),
        uniq: Vec::new(),
        absent: Vec::new(),
        neq: Vec::new(),
    };
    let mut env = Env::new();
    for part in &args[1..] {
        let list = part.as_list().unwrap_or(&[]);
        let rest = if list.is_empty() { list } else { &list[1..] };
        match part.head() {
            Some("label") => match rest {
                [l] => sk.label = Some(sym(l, "a label")?),
                _ => return err(part.loc(), "label takes one symbol"),
            },
            Some("vars") => parse_vars(rest, &mut env, &mut sk.vars)?,
            Some("defstrand") => {
                let [r, h, binds @ ..] = rest else {
                    return err(part.loc(), "defstrand needs a role and a height");
                };
                let role = sym(r, "a role name")?;
                let Some(rd) = proto.roles.iter().find(|x| x.name == role) else {
                    return err(r.loc(), format!("unknown role {role}"));
                };
                let height = match h {
                    Sexp::Int(n, _) if *n >= 1 && (*n as usize) <= rd.trace.len() => *n as usize,
                    _ => return err(h.loc(), format!("height must be between 1 and {}", rd.trace.len())),
                };
                let mut bs = Vec::new();
                for b in binds {
                    let [v, t] = b.as_list().unwrap_or(&[]) else {
                        return err(b.loc(), "expected (ROLE-VAR TERM)");
                    };
                    let vname = sym(v, "a role variable")?;
                    let Some(rv) = rd.vars.iter().find(|x| *x.name == *vname) else {
                        return err(v.loc(), format!("{vname} is not a variable of role {role}"));
                    };
                    let (e, tt) = parse_term(t, &env)?;
                    if !binding_sort_ok(rv, &tt) {
                        return err(t.loc(), format!("{tt} cannot bind {vname} of sort {}", rv.sort));
                    }
                    bs.push((vname, e));
                }
                sk.strands.push(StrandDecl::Role { role, height, binds: bs });
            }
            Some("deflistener") => match rest {
                [t] => sk.strands.push(StrandDecl::Listener(parse_term(t, &env)?.0)),
                _ => return err(part.loc(), "deflistener takes one term"),
            },
            Some("precedes") => {
                for pair in rest {
                    let [a, b] = pair.as_list().unwrap_or(&[]) else {
                        return err(pair.loc(), "expected ((S I) (S I))");
                    };
                    sk.precedes.push((parse_node(a)?, parse_node(b)?));
                }
            }
            Some("non-orig") => {
                for t in rest {
                    sk.non.push(parse_term(t, &env)?.0);
                }
            }
            Some("uniq-gen") | Some("uniq-orig") => {
                for t in rest {
                    sk.uniq.push(parse_term(t, &env)?.0);
                }
            }
            Some("absent") => sk.absent.push(parse_absent(rest, &env)?),
            Some("neq") => {
                for pair in rest {
                    let [a, b] = pair.as_list().unwrap_or(&[]) else {
                        return err(pair.loc(), "expected (T T)");
                    };
                    sk.neq.push((parse_term(a, &env)?.0, parse_term(b, &env)?.0));
                }
            }
            Some("gen-at") => return err(part.loc(), "gen-at is not supported; use uniq-gen"),
            _ => return err(part.loc(), "unknown skeleton declaration"),
        }
    }
    for (a, b) in &sk.precedes {
        for n in [a, b] {
            if n.0 >= sk.strands.len() {
                return err(f.loc(), format!("precedes names strand {} of {}", n.0, sk.strands.len()));
            }
        }
    }
    Ok(sk)
}

fn binding_sort_ok(v: &Var, t: &Term) -> bool {
    match v.sort {
        Sort::Trsc => t.trsc_var().is_some(),
        Sort::Fld => matches!(t, Term::FieldVal(_)),
        Sort::Grp => matches!(t, Term::GroupVal(_)),
        s => t.sort().leq(s),
    }
}

// Building analysis inputs.

fn term(e: &Expr) -> Term {
    normalize(e).expect("sort-checked at parse time")
}

/// Protocol with additive operators recorded for the compliance report.
pub fn build_protocol(p: &ProtocolDecl) -> Result<Protocol, String> {
    let mut roles = Vec::new();
    let mut additive = Vec::new();
    for r in &p.roles {
        let mut trace = Vec::new();
        for (i, (dir, e)) in r.trace.iter().enumerate() {
            let e = if has_additive(e) {
                additive.push((r.name.clone(), format!("node {}", i + 1)));
                strip_additive(e)
            } else {
                e.clone()
            };
            let t = normalize(&e).map_err(|x| format!("role {} node {}: {x}", r.name, i + 1))?;
            trace.push(Event { dir: *dir, msg: t });
        }
        let mut facts: Vec<Fact> = Vec::new();
        facts.extend(r.non.iter().map(|e| Fact::Non(term(e))));
        facts.extend(r.uniq.iter().map(|e| Fact::Uniq(term(e))));
        for (x, e) in &r.absent {
            let Term::FieldVal(m) = term(e) else { unreachable!() };
            facts.push(Fact::Absent(x.clone(), m));
        }
        roles.push(Role::new(&r.name, r.vars.clone(), trace, facts).map_err(|e| e.to_string())?);
    }
    let mut proto = Protocol::new(&p.name, roles);
    proto.additive = additive;
    Ok(proto)
}

/// Replaces additive operators by products so the rest of the role still
/// sort-checks.
fn strip_additive(e: &Expr) -> Expr {
    let b = |x: &Expr| Box::new(strip_additive(x));
    match e {
        Expr::Additive(_, args) => Expr::Mul(args.iter().map(strip_additive).collect()),
        Expr::Var(_) | Expr::Tag(_) | Expr::Gen | Expr::One => e.clone(),
        Expr::Cat(v) => Expr::Cat(v.iter().map(strip_additive).collect()),
        Expr::Hash(v) => Expr::Hash(v.iter().map(strip_additive).collect()),
        Expr::Mul(v) => Expr::Mul(v.iter().map(strip_additive).collect()),
        Expr::Enc(x, y) => Expr::Enc(b(x), b(y)),
        Expr::SEnc(x, y) => Expr::SEnc(b(x), b(y)),
        Expr::Exp(x, y) => Expr::Exp(b(x), b(y)),
        Expr::Ltk(x, y) => Expr::Ltk(b(x), b(y)),
        Expr::Rec(x) => Expr::Rec(b(x)),
        Expr::Pubk(x) => Expr::Pubk(b(x)),
        Expr::Privk(x) => Expr::Privk(b(x)),
        Expr::Invk(x) => Expr::Invk(b(x)),
    }
}

pub fn build_skeleton(s: &SkeletonDecl, proto: Arc<Protocol>) -> Result<Skeleton, String> {
    let mut claims = Vec::new();
    let mut listeners = Vec::new();
    for (i, st) in s.strands.iter().enumerate() {
        match st {
            StrandDecl::Role { role, height, binds } => {
                let (_, r) = proto.role(role).ok_or_else(|| format!("unknown role {role}"))?;
                let binds = binds
                    .iter()
                    .map(|(v, e)| {
                        let var = r.vars.iter().find(|x| *x.name == **v).cloned().expect("checked at parse time");
                        (var, term(e))
                    })
                    .collect();
                claims.push(StrandClaim { label: i, role: role.clone(), height: *height, binds });
            }
            StrandDecl::Listener(e) => listeners.push((i, term(e))),
        }
    }
    let mut facts: Vec<Fact> = Vec::new();
    facts.extend(s.non.iter().map(|e| Fact::Non(term(e))));
    facts.extend(s.uniq.iter().map(|e| Fact::Uniq(term(e))));
    for (x, e) in &s.absent {
        let Term::FieldVal(m) = term(e) else { unreachable!() };
        facts.push(Fact::Absent(x.clone(), m));
    }
    let neq: Vec<(Term, Term)> = s.neq.iter().map(|(a, b)| (term(a), term(b))).collect();
    let (sk, _) = skeleton::expand(proto, &claims, &listeners, &facts, &neq, &s.precedes, &s.vars)?;
    Ok(sk)
}

/// A scenario ready for analysis.
#[derive(Debug, Clone)]
pub struct Scenario {
    pub title: String,
    pub skeleton: Skeleton,
}

/// Every protocol and scenario of a document, built in order.
pub fn load(src: &str) -> Result<(Vec<Arc<Protocol>>, Vec<Scenario>), String> {
    let doc = parse(src).map_err(|e| e.to_string())?;
    let mut protocols: Vec<Arc<Protocol>> = Vec::new();
    let mut scenarios = Vec::new();
    for item in &doc.items {
        match item {
            Item::Protocol(p) => protocols.push(Arc::new(build_protocol(p)?)),
            Item::Skeleton(s) => {
                let proto = protocols.iter().rev().find(|p| p.name == s.protocol).expect("checked at parse time");
                let skeleton = build_skeleton(s, proto.clone()).map_err(|e| format!("{}: {e}", s.title()))?;
                scenarios.push(Scenario { title: s.title(), skeleton });
            }
        }
    }
    Ok((protocols, scenarios))
}

// Printing.

pub fn expr_string(e: &Expr) -> String {
    let mut s = String::new();
    write_expr(&mut s, e);
    s
}

fn write_expr(out: &mut String, e: &Expr) {
    let list = |out: &mut String, head: &str, items: &[&Expr]| {
        out.push('(');
        out.push_str(head);
        for it in items {
            out.push(' ');
            write_expr(out, it);
        }
        out.push(')');
    };
    match e {
        Expr::Var(v) => out.push_str(&v.name),
        Expr::Tag(t) => {
            out.push('"');
            for c in t.chars() {
                if c == '"' || c == '\\' {
                    out.push('\\');
                }
                out.push(c);
            }
            out.push('"');
        }
        Expr::Gen => out.push_str("(gen)"),
        Expr::One => out.push_str("(one)"),
        Expr::Cat(v) => list(out, "cat", &v.iter().collect::<Vec<_>>()),
        Expr::Hash(v) => list(out, "hash", &v.iter().collect::<Vec<_>>()),
        Expr::Mul(v) => list(out, "mul", &v.iter().collect::<Vec<_>>()),
        Expr::Additive(op, v) => list(out, op, &v.iter().collect::<Vec<_>>()),
        Expr::Enc(m, k) => list(out, "enc", &[m, k]),
        Expr::SEnc(m, k) => list(out, "senc", &[m, k]),
        Expr::Exp(h, w) => list(out, "exp", &[h, w]),
        Expr::Ltk(a, b) => list(out, "ltk", &[a, b]),
        Expr::Rec(x) => list(out, "rec", &[x]),
        Expr::Pubk(x) => list(out, "pubk", &[x]),
        Expr::Privk(x) => list(out, "privk", &[x]),
        Expr::Invk(x) => list(out, "invk", &[x]),
    }
}

fn write_vars(out: &mut String, vars: &[Var]) {
    out.push_str("(vars");
    let mut i = 0;
    while i < vars.len() {
        let sort = vars[i].sort;
        out.push_str(" (");
        while i < vars.len() && vars[i].sort == sort {
            out.push_str(&vars[i].name);
            out.push(' ');
            i += 1;
        }
        let _ = write!(out, "{sort})");
    }
    out.push(')');
}

fn write_facts(out: &mut String, indent: &str, non: &[Expr], uniq: &[Expr], absent: &[(Var, Expr)]) {
    for (head, list) in [("non-orig", non), ("uniq-gen", uniq)] {
        if !list.is_empty() {
            let _ = write!(out, "\n{indent}({head}");
            for e in list {
                let _ = write!(out, " {}", expr_string(e));
            }
            out.push(')');
        }
    }
    for (x, e) in absent {
        let _ = write!(out, "\n{indent}(absent {} {})", x.name, expr_string(e));
    }
}

impl fmt::Display for Document {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for (i, it) in self.items.iter().enumerate() {
            if i > 0 {
                f.write_str("\n\n")?;
            }
            match it {
                Item::Protocol(p) => write!(f, "{p}")?,
                Item::Skeleton(s) => write!(f, "{s}")?,
            }
        }
        writeln!(f)
    }
}

impl fmt::Display for ProtocolDecl {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let mut out = format!("(defprotocol {} {}", self.name, self.algebra);
        for r in &self.roles {
            let _ = write!(out, "\n  (defrole {}\n    ", r.name);
            write_vars(&mut out, &r.vars);
            out.push_str("\n    (trace");
            for (d, e) in &r.trace {
                let head = if *d == Dir::Send { "send" } else { "recv" };
                let _ = write!(out, "\n      ({head} {})", expr_string(e));
            }
            out.push(')');
            write_facts(&mut out, "    ", &r.non, &r.uniq, &r.absent);
            out.push(')');
        }
        out.push(')');
        f.write_str(&out)
    }
}

impl fmt::Display for SkeletonDecl {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let mut out = format!("(defskeleton {}", self.protocol);
        if let Some(l) = &self.label {
            let _ = write!(out, "\n  (label {l})");
        }
        out.push_str("\n  ");
        write_vars(&mut out, &self.vars);
        for st in &self.strands {
            match st {
                StrandDecl::Role { role, height, binds } => {
                    let _ = write!(out, "\n  (defstrand {role} {height}");
                    for (v, e) in binds {
                        let _ = write!(out, " ({v} {})", expr_string(e));
                    }
                    out.push(')');
                }
                StrandDecl::Listener(e) => {
                    let _ = write!(out, "\n  (deflistener {})", expr_string(e));
                }
            }
        }
        if !self.precedes.is_empty() {
            out.push_str("\n  (precedes");
            for (a, b) in &self.precedes {
                let _ = write!(out, " (({} {}) ({} {}))", a.0, a.1, b.0, b.1);
            }
            out.push(')');
        }
        write_facts(&mut out, "  ", &self.non, &self.uniq, &self.absent);
        if !self.neq.is_empty() {
            out.push_str("\n  (neq");
            for (a, b) in &self.neq {
                let _ = write!(out, " ({} {})", expr_string(a), expr_string(b));
            }
            out.push(')');
        }
        out.push(')');
        f.write_str(&out)
    }
}
