//! Command-line driver.

pub mod document;
pub mod output;
pub mod sexp;

use std::path::PathBuf;
use std::sync::Arc;
use std::time::Instant;

use clap::Parser;

use crate::protocol::{check_compliant, Protocol};
use crate::search::{analyze, Config, DEFAULT_BOUND};
use document::{build_protocol, build_skeleton, Item};
use output::Run;

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 1;
pub const EXIT_COMPLIANCE: i32 = 2;
pub const EXIT_BUDGET: i32 = 3;

#[derive(Debug, Parser)]
#[command(name = "shapes", version, about = "Shapes analysis for Diffie-Hellman protocols")]
pub struct Args {
    /// Input files with defprotocol and defskeleton forms.
    #[arg(required = true)]
    pub files: Vec<PathBuf>,
    /// Skeletons processed per scenario before giving up.
    #[arg(long, default_value_t = DEFAULT_BOUND)]
    pub bound: usize,
    #[arg(long, default_value_t = 1)]
    pub workers: usize,
    /// Write the exploration trees as DOT.
    #[arg(long)]
    pub dot: Option<PathBuf>,
    /// Write the structured result document.
    #[arg(long)]
    pub json: Option<PathBuf>,
    /// Only run the compliance check.
    #[arg(long)]
    pub check_only: bool,
    /// Include wall-clock timings in the JSON document.
    #[arg(long)]
    pub timings: bool,
}

/// Runs the tool and returns the exit status.
pub fn run<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let args = match Args::try_parse_from(argv) {
        Ok(a) => a,
        Err(e) => {
            let _ = e.print();
            return match e.kind() {
                clap::error::ErrorKind::DisplayHelp | clap::error::ErrorKind::DisplayVersion => EXIT_OK,
                _ => EXIT_USAGE,
            };
        }
    };
    let mut out = std::io::stdout();
    execute(&args, &mut out)
}

pub fn execute(args: &Args, out: &mut dyn std::io::Write) -> i32 {
    let mut runs: Vec<Run> = Vec::new();
    let mut status = EXIT_OK;
    for path in &args.files {
        let file = path.display().to_string();
        let src = match std::fs::read_to_string(path) {
            Ok(s) => s,
            Err(e) => {
                eprintln!("{file}: {e}");
                return EXIT_USAGE;
            }
        };
        let doc = match document::parse(&src) {
            Ok(d) => d,
            Err(e) => {
                eprintln!("{file}:{e}");
                return EXIT_USAGE;
            }
        };
        let started = Instant::now();
        let mut protocols: Vec<Arc<Protocol>> = Vec::new();
        let mut file_runs = 0;
        for item in &doc.items {
            match item {
                Item::Protocol(p) => {
                    let proto = match build_protocol(p) {
                        Ok(p) => p,
                        Err(e) => {
                            eprintln!("{file}: {e}");
                            return EXIT_USAGE;
                        }
                    };
                    let report = check_compliant(&proto);
                    if !report.passed() {
                        let _ = writeln!(out, ";; {}: not compliant", report.protocol);
                        for v in &report.violations {
                            let _ = writeln!(out, ";;   {v}");
                        }
                        return EXIT_COMPLIANCE;
                    }
                    if args.check_only {
                        let _ = writeln!(out, ";; {}: compliant", proto.name);
                    }
                    protocols.push(Arc::new(proto));
                }
                Item::Skeleton(s) if !args.check_only => {
                    let proto = protocols.iter().rev().find(|p| p.name == s.protocol).expect("checked at parse time");
                    let initial = match build_skeleton(s, proto.clone()) {
                        Ok(sk) => sk,
                        Err(e) => {
                            eprintln!("{file}: {}: {e}", s.title());
                            return EXIT_USAGE;
                        }
                    };
                    let t0 = Instant::now();
                    let analysis = analyze(initial, Config { bound: args.bound, workers: args.workers });
                    let millis = t0.elapsed().as_secs_f64() * 1000.0;
                    if !analysis.complete {
                        status = EXIT_BUDGET;
                    }
                    log::info!("{}: {} shapes in {millis:.1} ms", s.title(), analysis.shapes.len());
                    runs.push(Run { file: file.clone(), title: s.title(), analysis, millis });
                    file_runs += 1;
                }
                Item::Skeleton(_) => {}
            }
        }
        if !args.check_only {
            let _ = writeln!(
                out,
                ";; {file}: {file_runs} scenario(s) in {:.3} s",
                started.elapsed().as_secs_f64()
            );
        }
    }
    if args.check_only {
        return EXIT_OK;
    }
    let _ = write!(out, "{}", output::text_report(&runs));
    if let Some(p) = &args.dot {
        if let Err(e) = std::fs::write(p, output::dot(&runs)) {
            eprintln!("{}: {e}", p.display());
            return EXIT_USAGE;
        }
    }
    if let Some(p) = &args.json {
        if let Err(e) = std::fs::write(p, output::json(&runs, args.timings)) {
            eprintln!("{}: {e}", p.display());
            return EXIT_USAGE;
        }
    }
    status
}
