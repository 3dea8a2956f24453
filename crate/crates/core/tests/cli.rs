use std::path::{Path, PathBuf};
use std::process::Command;

use shapes_core::cli::document::{self, load};
use shapes_core::protocol::check_compliant;

fn corpus(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../corpus").join(format!("{name}.shapes"))
}

fn shapes(args: &[&str]) -> (i32, String, String) {
    let out = Command::new(env!("CARGO_BIN_EXE_shapes")).args(args).output().expect("binary runs");
    (
        out.status.code().unwrap_or(-1),
        String::from_utf8_lossy(&out.stdout).into_owned(),
        String::from_utf8_lossy(&out.stderr).into_owned(),
    )
}

fn write(dir: &Path, name: &str, text: &str) -> String {
    let p = dir.join(name);
    std::fs::write(&p, text).unwrap();
    p.display().to_string()
}

/// The UMX protocol and its initiator scenario alone.
fn umx_init_only() -> String {
    let src = std::fs::read_to_string(corpus("dhcr-umx")).unwrap();
    let doc = document::parse(&src).unwrap();
    let keep: Vec<String> = doc
        .items
        .iter()
        .filter(|it| match it {
            document::Item::Protocol(_) => true,
            document::Item::Skeleton(s) => s.label.as_deref() == Some("init-imp"),
        })
        .map(|it| match it {
            document::Item::Protocol(p) => p.to_string(),
            document::Item::Skeleton(s) => s.to_string(),
        })
        .collect();
    keep.join("\n")
}

#[test]
fn corpus_protocols_are_compliant() {
    for f in ["dhcr-um", "dhcr-umx", "dhcr-um3"] {
        let (protos, scenarios) = load(&std::fs::read_to_string(corpus(f)).unwrap()).unwrap();
        assert_eq!(protos.len(), 1);
        assert_eq!(scenarios.len(), 5);
        let report = check_compliant(&protos[0]);
        assert!(report.passed(), "{f}: {:?}", report.violations);
    }
}

#[test]
fn print_then_parse_is_identity() {
    for f in ["dhcr-um", "dhcr-umx", "dhcr-um3"] {
        let doc = document::parse(&std::fs::read_to_string(corpus(f)).unwrap()).unwrap();
        let again = document::parse(&doc.to_string()).unwrap();
        assert_eq!(doc, again, "{f}");
    }
}

#[test]
fn parse_errors_carry_locations() {
    let src = "(defprotocol p diffie-hellman\n  (defrole r (vars (a name))\n    (trace (send b))))";
    let e = document::parse(src).unwrap_err();
    assert_eq!(e.loc.line, 3, "{e}");
    let src = std::fs::read_to_string(corpus("dhcr-umx")).unwrap()
        + "(defskeleton dhcr-umx (vars (x y trsc)) (defstrand reg 1 (l x)) (absent x (mul x y)))";
    assert!(document::parse(&src).unwrap_err().msg.contains("contradictory"));
}

#[test]
fn skeleton_needs_an_earlier_protocol() {
    let e = document::parse("(defskeleton nowhere (vars) (deflistener \"a\"))").unwrap_err();
    assert!(e.msg.contains("nowhere"), "{e}");
}

#[test]
fn exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let bad = write(dir.path(), "bad.shapes", "(defprotocol p");
    assert_eq!(shapes(&[&bad]).0, 1);
    assert_eq!(shapes(&[]).0, 1);
    assert_eq!(shapes(&["--help"]).0, 0);

    let leaky = write(
        dir.path(),
        "leaky.shapes",
        "(defprotocol leaky diffie-hellman
           (defrole r (vars (x y trsc)) (trace (send (mul x y)))))",
    );
    let (code, out, _) = shapes(&[&leaky]);
    assert_eq!(code, 2);
    assert!(out.contains("not compliant"), "{out}");

    let umx = corpus("dhcr-umx").display().to_string();
    let (code, out, _) = shapes(&["--check-only", &umx]);
    assert_eq!(code, 0);
    assert_eq!(out.trim(), ";; dhcr-umx: compliant");

    let json = dir.path().join("b.json").display().to_string();
    let one = write(dir.path(), "one.shapes", &umx_init_only());
    let (code, out, _) = shapes(&["--bound", "1", "--json", &json, &one]);
    assert_eq!(code, 3);
    assert!(out.contains("bound exceeded"), "{out}");
    let doc: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(&json).unwrap()).unwrap();
    let tree = doc["runs"][0]["tree"].as_array().unwrap();
    assert!(tree.iter().any(|n| n["status"] == "bound-exceeded"));
}

#[test]
fn umx_report_and_tree() {
    let dir = tempfile::tempdir().unwrap();
    let one = write(dir.path(), "one.shapes", &umx_init_only());
    let dot = dir.path().join("t.dot").display().to_string();
    let json = dir.path().join("t.json").display().to_string();
    let (code, out, _) = shapes(&["--dot", &dot, "--json", &json, &one]);
    assert_eq!(code, 0);
    assert!(out.contains("1 shape(s)"), "{out}");
    assert!(out.contains("(defstrand resp 3"), "{out}");

    let doc: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(&json).unwrap()).unwrap();
    let run = &doc["runs"][0];
    assert!(run.get("millis").is_none());
    let tree = run["tree"].as_array().unwrap();
    let kids = tree[0]["children"].as_array().unwrap();
    assert_eq!(kids.len(), 2);
    let listener = kids.iter().map(|k| &tree[k.as_u64().unwrap() as usize]).find(|n| n["case"] == "forge-key").unwrap();
    assert_eq!(listener["dead_subtree"], true);

    let text = std::fs::read_to_string(&dot).unwrap();
    dot_parser::ast::Graph::try_from(text.as_str()).expect("valid DOT");
    assert!(text.contains("fillcolor=\"#9be39b\""));
}

#[test]
fn corpus_dot_parses_and_timings_are_reported() {
    let dir = tempfile::tempdir().unwrap();
    let dot = dir.path().join("c.dot").display().to_string();
    let json = dir.path().join("c.json").display().to_string();
    let files: Vec<String> = ["dhcr-um", "dhcr-umx", "dhcr-um3"].iter().map(|f| corpus(f).display().to_string()).collect();
    let mut args = vec!["--dot", &dot, "--json", &json, "--timings"];
    args.extend(files.iter().map(|s| s.as_str()));
    let (code, out, _) = shapes(&args);
    assert_eq!(code, 0);
    for f in ["dhcr-um", "dhcr-umx", "dhcr-um3"] {
        assert!(out.lines().any(|l| l.contains(&format!("{f}.shapes: 5 scenario(s) in"))), "{out}");
    }
    let text = std::fs::read_to_string(&dot).unwrap();
    dot_parser::ast::Graph::try_from(text.as_str()).expect("valid DOT");
    let doc: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(&json).unwrap()).unwrap();
    assert_eq!(doc["runs"].as_array().unwrap().len(), 15);
    assert!(doc["runs"][0]["millis"].is_number());
}
