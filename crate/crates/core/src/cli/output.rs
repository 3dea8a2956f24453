//! Reports: text, DOT exploration trees, and the JSON result document.

use std::fmt::Write as _;

use serde::Serialize;

use crate::cohort::CohortCase;
use crate::search::{Analysis, Status};
use crate::unify::bound_value;

/// One analyzed scenario.
pub struct Run {
    pub file: String,
    pub title: String,
    pub analysis: Analysis,
    pub millis: f64,
}

pub fn text_report(runs: &[Run]) -> String {
    let mut out = String::new();
    for r in runs {
        let a = &r.analysis;
        let _ = writeln!(out, ";; {} ({})", r.title, r.file);
        let _ = writeln!(
            out,
            ";; {} skeletons, {} steps, {} shape(s){}, {:.2} ms",
            a.tree.len(),
            a.steps,
            a.shapes.len(),
            if a.complete { "" } else { ", bound exceeded" },
            r.millis
        );
        for &s in &a.shapes {
            let n = &a.tree[s];
            let _ = writeln!(out, ";; shape {s}");
            if let Some(sigma) = n.sigma.as_ref().filter(|s| !s.is_empty()) {
                let _ = write!(out, ";;   realized after");
                for (v, t) in sigma.iter() {
                    let _ = write!(out, " ({} {})", v.name, bound_value(v, t));
                }
                out.push('\n');
            }
            let _ = writeln!(out, "{}", n.skeleton);
        }
        if a.tree.iter().any(|n| n.undecided) {
            let _ = writeln!(out, ";; some skeletons were not decided within the cancellation bound");
        }
        out.push('\n');
    }
    out
}

fn status_style(s: Status) -> &'static str {
    match s {
        Status::Shape => "style=filled, fillcolor=\"#9be39b\", penwidth=2",
        Status::Dead => "style=filled, fillcolor=\"#d9d9d9\", fontcolor=\"#555555\"",
        Status::Interior => "",
        Status::Unexplored | Status::BoundExceeded => "style=dashed, color=\"#c0392b\"",
        Status::Duplicate => "style=dotted",
        Status::Subsumed => "style=filled, fillcolor=\"#e8f5e8\"",
    }
}

/// One cluster per run. Dead subtrees get a gray outline edge.
pub fn dot(runs: &[Run]) -> String {
    let mut out = String::from("digraph shapes {\n  node [shape=box, fontname=\"Helvetica\"];\n");
    for (k, r) in runs.iter().enumerate() {
        let a = &r.analysis;
        let _ = writeln!(out, "  subgraph cluster_{k} {{");
        let _ = writeln!(out, "    label={};", quote(&r.title));
        for n in &a.tree {
            let mut label = format!("{}", n.id);
            match n.status {
                Status::Shape => label.push_str("\\nshape"),
                Status::Duplicate => {
                    let _ = write!(label, "\\n= {}", n.duplicate_of.unwrap_or(0));
                }
                Status::Subsumed => label.push_str("\\nsubsumed"),
                Status::BoundExceeded => label.push_str("\\nbound"),
                _ => {}
            }
            let mut attrs = format!("label=\"{label}\"");
            let style = status_style(n.status);
            if !style.is_empty() {
                let _ = write!(attrs, ", {style}");
            }
            let _ = writeln!(out, "    r{k}_{} [{attrs}];", n.id);
        }
        for n in &a.tree {
            for c in &n.children {
                let child = &a.tree[*c];
                let mut attrs = String::new();
                if let Some(case) = child.case {
                    let _ = write!(attrs, "label={}", quote(&case.to_string()));
                }
                if child.status != Status::Dead && a.dead_subtree(*c) && matches!(child.status, Status::Interior) {
                    attrs.push_str(if attrs.is_empty() { "color=gray" } else { ", color=gray" });
                }
                let _ = writeln!(out, "    r{k}_{} -> r{k}_{c} [{attrs}];", n.id);
            }
        }
        out.push_str("  }\n");
    }
    out.push_str("}\n");
    out
}

fn quote(s: &str) -> String {
    let mut q = String::from("\"");
    for c in s.chars() {
        if c == '"' || c == '\\' {
            q.push('\\');
        }
        q.push(c);
    }
    q.push('"');
    q
}

#[derive(Serialize)]
struct JsonDoc<'a> {
    runs: Vec<JsonRun<'a>>,
}

#[derive(Serialize)]
struct JsonRun<'a> {
    file: &'a str,
    scenario: &'a str,
    complete: bool,
    steps: usize,
    shapes: &'a [usize],
    tree: Vec<JsonNode>,
    #[serde(skip_serializing_if = "Option::is_none")]
    millis: Option<f64>,
}

#[derive(Serialize)]
struct JsonNode {
    id: usize,
    parent: Option<usize>,
    case: Option<CohortCase>,
    status: Status,
    children: Vec<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    duplicate_of: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    subsumed_by: Option<usize>,
    dead_subtree: bool,
    skeleton: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    critical: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    realized_after: Option<Vec<(String, String)>>,
}

/// The structured result document. Timings are left out unless asked for,
/// so the document only depends on the input.
pub fn json(runs: &[Run], timings: bool) -> String {
    let doc = JsonDoc {
        runs: runs
            .iter()
            .map(|r| JsonRun {
                file: &r.file,
                scenario: &r.title,
                complete: r.analysis.complete,
                steps: r.analysis.steps,
                shapes: &r.analysis.shapes,
                tree: r
                    .analysis
                    .tree
                    .iter()
                    .map(|n| JsonNode {
                        id: n.id,
                        parent: n.parent,
                        case: n.case,
                        status: n.status,
                        children: n.children.clone(),
                        duplicate_of: n.duplicate_of,
                        subsumed_by: n.subsumed_by,
                        dead_subtree: r.analysis.dead_subtree(n.id),
                        skeleton: n.skeleton.to_string(),
                        critical: n.failure.as_ref().map(|f| {
                            format!("{} at ({} {})", f.critical, f.target.0, f.target.1)
                        }),
                        realized_after: n
                            .sigma
                            .as_ref()
                            .map(|s| s.iter().map(|(v, t)| (v.name.to_string(), bound_value(v, t).to_string())).collect()),
                    })
                    .collect(),
                millis: timings.then_some(r.millis),
            })
            .collect(),
    };
    let mut s = serde_json::to_string_pretty(&doc).expect("serializable");
    s.push('\n');
    s
}
