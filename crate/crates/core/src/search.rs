//! Breadth-first enrich-by-need search over skeletons.

use std::collections::BTreeMap;

use rayon::prelude::*;
use serde::Serialize;

use crate::cohort::{cohort, CohortCase};
use crate::derive::{realized_check, Failure, Realized};
use crate::skeleton::Skeleton;
use crate::unify::Subst;

pub const DEFAULT_BOUND: usize = 2000;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum Status {
    Unexplored,
    Shape,
    Dead,
    Interior,
    BoundExceeded,
    /// Isomorphic to an earlier skeleton; not expanded.
    Duplicate,
    /// Realized but a more general shape covers it.
    Subsumed,
}

#[derive(Debug, Clone)]
pub struct TreeNode {
    pub id: usize,
    pub parent: Option<usize>,
    pub case: Option<CohortCase>,
    pub skeleton: Skeleton,
    pub status: Status,
    pub children: Vec<usize>,
    pub duplicate_of: Option<usize>,
    pub subsumed_by: Option<usize>,
    /// Cancellation substitution for shapes.
    pub sigma: Option<Subst>,
    pub failure: Option<Failure>,
    /// The cancellation search hit its depth bound here.
    pub undecided: bool,
}

#[derive(Debug, Clone)]
pub struct Analysis {
    pub tree: Vec<TreeNode>,
    pub shapes: Vec<usize>,
    pub complete: bool,
    pub steps: usize,
}

#[derive(Debug, Clone, Copy)]
pub struct Config {
    pub bound: usize,
    pub workers: usize,
}

impl Default for Config {
    fn default() -> Config {
        Config { bound: DEFAULT_BOUND, workers: 1 }
    }
}

enum Outcome {
    Shape(Subst),
    Expand(Failure, bool, Vec<(CohortCase, Skeleton)>),
}

fn step(sk: &Skeleton) -> Outcome {
    match realized_check(sk) {
        Realized::Realized { sigma, .. } => Outcome::Shape(sigma),
        other => {
            let undecided = matches!(other, Realized::Undecided(_));
            let f = other.failure().cloned().expect("failure");
            let kids = cohort(sk, &f).into_iter().map(|m| (m.case, m.skeleton)).collect();
            Outcome::Expand(f, undecided, kids)
        }
    }
}

/// Explores from `initial` until the fringe empties or `bound` skeletons
/// have been processed. Output does not depend on `workers`.
pub fn analyze(initial: Skeleton, cfg: Config) -> Analysis {
    let pool = rayon::ThreadPoolBuilder::new().num_threads(cfg.workers.max(1)).build().expect("thread pool");
    let mut tree = vec![node(0, None, None, initial)];
    let mut by_print: BTreeMap<String, Vec<usize>> = BTreeMap::new();
    by_print.entry(tree[0].skeleton.fingerprint()).or_default().push(0);
    let mut fringe = vec![0usize];
    let mut steps = 0;
    let mut complete = true;
    while !fringe.is_empty() {
        let room = cfg.bound.saturating_sub(steps);
        if room == 0 {
            for id in &fringe {
                tree[*id].status = Status::BoundExceeded;
            }
            complete = false;
            break;
        }
        let layer: Vec<usize> = fringe.iter().copied().take(room).collect();
        let rest: Vec<usize> = fringe.iter().copied().skip(room).collect();
        let results: Vec<Outcome> = pool.install(|| layer.par_iter().map(|id| step(&tree[*id].skeleton)).collect());
        steps += layer.len();
        let mut next = rest;
        for (id, out) in layer.into_iter().zip(results) {
            match out {
                Outcome::Shape(sigma) => {
                    log::debug!("skeleton {id} is a shape");
                    tree[id].status = Status::Shape;
                    tree[id].sigma = Some(sigma);
                }
                Outcome::Expand(f, undecided, kids) => {
                    tree[id].failure = Some(f);
                    tree[id].undecided = undecided;
                    tree[id].status = if kids.is_empty() { Status::Dead } else { Status::Interior };
                    log::debug!("skeleton {id}: {} children", kids.len());
                    for (case, sk) in kids {
                        let cid = tree.len();
                        let print = sk.fingerprint();
                        let dup = by_print
                            .get(&print)
                            .and_then(|ids| ids.iter().copied().find(|o| tree[*o].skeleton.iso(&sk)));
                        let mut child = node(cid, Some(id), Some(case), sk);
                        match dup {
                            Some(o) => {
                                child.status = Status::Duplicate;
                                child.duplicate_of = Some(o);
                            }
                            None => {
                                by_print.entry(print).or_default().push(cid);
                                next.push(cid);
                            }
                        }
                        tree[id].children.push(cid);
                        tree.push(child);
                    }
                }
            }
        }
        fringe = next;
    }
    let mut shapes: Vec<usize> = tree.iter().filter(|n| n.status == Status::Shape).map(|n| n.id).collect();
    let snapshot = shapes.clone();
    shapes.retain(|&s| {
        let by = snapshot.iter().copied().find(|&t| {
            t != s && covers(&tree[t].skeleton, &tree[s].skeleton).is_some() && {
                let back = covers(&tree[s].skeleton, &tree[t].skeleton).is_some();
                !back || t < s
            }
        });
        match by {
            Some(t) => {
                tree[s].status = Status::Subsumed;
                tree[s].subsumed_by = Some(t);
                false
            }
            None => true,
        }
    });
    Analysis { tree, shapes, complete, steps }
}

fn node(id: usize, parent: Option<usize>, case: Option<CohortCase>, skeleton: Skeleton) -> TreeNode {
    TreeNode {
        id,
        parent,
        case,
        skeleton,
        status: Status::Unexplored,
        children: Vec::new(),
        duplicate_of: None,
        subsumed_by: None,
        sigma: None,
        failure: None,
        undecided: false,
    }
}

/// Homomorphism witnessing that `shape` enriches `a`.
pub fn covers(a: &Skeleton, shape: &Skeleton) -> Option<(Vec<usize>, Subst)> {
    a.homomorphism_to(shape)
}

impl Analysis {
    /// Every path below `id` ends in a dead skeleton.
    pub fn dead_subtree(&self, id: usize) -> bool {
        self.dead_below(id, 0)
    }

    fn dead_below(&self, id: usize, depth: usize) -> bool {
        if depth > self.tree.len() {
            return false;
        }
        let n = &self.tree[id];
        match n.status {
            Status::Dead => true,
            Status::Interior => n.children.iter().all(|c| self.dead_below(*c, depth + 1)),
            Status::Duplicate => n.duplicate_of.is_some_and(|o| self.dead_below(o, depth + 1)),
            _ => false,
        }
    }

    pub fn shape_skeletons(&self) -> impl Iterator<Item = &Skeleton> {
        self.shapes.iter().map(|s| &self.tree[*s].skeleton)
    }
}
