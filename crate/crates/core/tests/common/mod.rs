#![allow(dead_code)]

use std::path::PathBuf;
use std::sync::Arc;

use shapes_core::cli::document::{self, load, Item};
use shapes_core::protocol::Protocol;
use shapes_core::search::{analyze, Analysis, Config};
use shapes_core::skeleton::{Skeleton, StrandKind};

pub fn corpus(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../corpus").join(format!("{name}.shapes"))
}

/// The `defprotocol` form of a corpus file.
pub fn protocol_src(name: &str) -> String {
    let doc = document::parse(&std::fs::read_to_string(corpus(name)).unwrap()).unwrap();
    doc.items
        .iter()
        .find_map(|it| match it {
            Item::Protocol(p) => Some(p.to_string()),
            _ => None,
        })
        .unwrap()
}

pub fn protocol(name: &str) -> Arc<Protocol> {
    load(&protocol_src(name)).unwrap().0.remove(0)
}

/// Builds `skeleton_src` against the protocol of a corpus file.
pub fn build(name: &str, skeleton_src: &str) -> Result<Skeleton, String> {
    let (_, mut sc) = load(&format!("{}\n{skeleton_src}", protocol_src(name)))?;
    Ok(sc.remove(0).skeleton)
}

pub fn scenario(name: &str, label: &str) -> Skeleton {
    let (_, sc) = load(&std::fs::read_to_string(corpus(name)).unwrap()).unwrap();
    let title = format!("{name} {label}");
    sc.into_iter().find(|s| s.title == title).unwrap().skeleton
}

pub fn all_scenarios() -> Vec<(String, Skeleton)> {
    let mut out = Vec::new();
    for f in ["dhcr-um", "dhcr-umx", "dhcr-um3"] {
        let (_, sc) = load(&std::fs::read_to_string(corpus(f)).unwrap()).unwrap();
        out.extend(sc.into_iter().map(|s| (s.title, s.skeleton)));
    }
    out
}

pub fn run(sk: Skeleton) -> Analysis {
    analyze(sk, Config::default())
}

pub fn role_strands<'a>(sk: &'a Skeleton, role: &'a str) -> Vec<usize> {
    sk.strands
        .iter()
        .enumerate()
        .filter_map(|(i, st)| match st.kind {
            StrandKind::Role(r) if sk.protocol.roles[r].name == role => Some(i),
            _ => None,
        })
        .collect()
}
