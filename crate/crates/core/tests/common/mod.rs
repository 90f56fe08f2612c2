//! Helpers shared by the integration test targets.

#![allow(dead_code)]

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use scorekeeping::model::{Dialogue, Proposition, Truth};
use scorekeeping::propgen::render;

pub fn fixture(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures").join(name)
}

/// Turn text followed by its pairs (entailment first) or `none`.
pub fn transcript(dialogues: &[Dialogue], props: &[Proposition]) -> String {
    let mut out = String::new();
    for d in dialogues {
        out += &format!("# dialogue {}\n", d.id);
        for t in 0..=d.last_turn() {
            let text = if t == 0 {
                render(&d.caption)
            } else {
                let turn = &d.turns[t - 1];
                format!("{} {}", render(&turn.question), render(&turn.answer))
            };
            out += &text;
            out.push('\n');
            let here: Vec<&Proposition> = props
                .iter()
                .filter(|p| p.dialogue_id == d.id && p.source_turn == t)
                .collect();
            if here.is_empty() {
                out += "none\n";
            }
            for p in here.iter().filter(|p| p.id == p.pair_id) {
                let partner = here
                    .iter()
                    .find(|q| q.pair_id == p.pair_id && q.id != p.id)
                    .expect("pair partner");
                assert_eq!(p.truth, Truth::TrueToA);
                out += &format!("{}\n{}\n", p.text(), partner.text());
            }
        }
    }
    out
}

/// Runs the `scorekeep` binary in `dir`.
pub fn scorekeep(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_scorekeep"))
        .current_dir(dir)
        .env("RUST_LOG", "warn")
        .args(args)
        .output()
        .expect("spawn scorekeep")
}

/// Like [`scorekeep`] but panics with the captured stderr on failure.
pub fn scorekeep_ok(dir: &Path, args: &[&str]) -> Output {
    let out = scorekeep(dir, args);
    assert!(
        out.status.success(),
        "scorekeep {args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    out
}
