//! Acceptance suite: one PASS/FAIL line per criterion, tolerances pinned below.
//! Runs without the libtest harness so the lines always reach stdout; the
//! process exits non-zero when any criterion fails.

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::path::Path;
use std::time::Instant;

use ndarray::Array2;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use scorekeeping::dataset::{balance_truth, read_props};
use scorekeeping::embed::{SynthMode, PROP_DIM, REP_DIM};
use scorekeeping::eval::{consistency, permutation_test, ConsistencyCounts, PredictedScoreboard};
use scorekeeping::model::{
    build_scoreboard, PolarityKind, Proposition, QuestionKind, Role, ScoreClass, Split, TaskVariant, Truth,
    Visibility,
};
use scorekeeping::probe::{
    cross_entropy, dropout_mask, predict, train, Control, ProbeData, ProbeModel, TrainConfig, HIDDEN,
};
use scorekeeping::propgen::input::load_dialogues;
use scorekeeping::synth::{prepare_split, synth_dialogues, synth_stores, PrepareOptions, PreparedSplit, SynthCorpusConfig};
use tempfile::TempDir;

mod common;
use common::{fixture, scorekeep, transcript};

const PARAM_COUNTS: [(TaskVariant, usize); 4] = [
    (TaskVariant::TFxPS, 1_315_844),
    (TaskVariant::PxTSFS, 1_314_819),
    (TaskVariant::PS, 1_313_794),
    (TaskVariant::TF, 1_313_794),
];
const GRADCHECK_SEEDS: u64 = 6;
const GRADCHECK_HIDDEN: usize = 8;
const GRADCHECK_STEP: f64 = 1e-5;
const GRADCHECK_TOL: f64 = 1e-4;
const REFERENCE_SEED: &str = "5";
const REFERENCE_RATE: &str = "0.15";
const ORACLE_DIALOGUES: usize = 1000;
const BALANCE_CAP: usize = 1000;
const POSITIVE_THRESHOLD: f64 = 0.95;
const NULL_TARGET: f64 = 0.50;
const NULL_TOL: f64 = 0.03;
const PERM_SHUFFLES: usize = 10_000;
const PERM_TOL: f64 = 0.05;
const PERM_ALPHA: f64 = 0.01;
const REPORTED_SHUFFLES: usize = 1000;

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: impl Into<String>) -> Outcome {
    Outcome {
        pass,
        detail: detail.into(),
    }
}

fn parameter_counts() -> Outcome {
    let mut details = Vec::new();
    let mut pass = true;
    for (task, want) in PARAM_COUNTS {
        let got = ProbeModel::new(task, Role::Answerer, HIDDEN, REP_DIM, PROP_DIM, 0)
            .unwrap()
            .param_count();
        pass &= got == want;
        details.push(format!("{}={got}", task.name()));
    }
    outcome(pass, details.join(" "))
}

fn gradient_check() -> Outcome {
    let tasks = [TaskVariant::TFxPS, TaskVariant::PxTSFS, TaskVariant::PS];
    let (r_dim, z_dim, batch) = (3, 4, 6);
    let mut worst: f64 = 0.0;
    for seed in 0..GRADCHECK_SEEDS {
        let task = tasks[seed as usize % tasks.len()];
        let mut m = ProbeModel::new(task, Role::Answerer, GRADCHECK_HIDDEN, r_dim, z_dim, seed).unwrap();
        // push pre-activations out of the sigmoid's linear range
        for s in m.params.slices_mut() {
            s.iter_mut().for_each(|x| *x *= 3.0);
        }
        let mut rng = ChaCha8Rng::seed_from_u64(1000 + seed);
        let x = Array2::from_shape_fn((batch, r_dim + z_dim), |_| rng.gen_range(-1.0..1.0));
        let mask = dropout_mask(batch, GRADCHECK_HIDDEN, 0.1, &mut rng);
        let golds: Vec<usize> = (0..batch).map(|_| rng.gen_range(0..task.n_labels())).collect();
        let cache = m.forward(x.view(), Some(mask.clone())).unwrap();
        let grads = m.backward(x.view(), &cache, &golds).unwrap();
        let loss = |m: &ProbeModel| cross_entropy(&m.forward(x.view(), Some(mask.clone())).unwrap().logits, &golds);
        for k in 0..4 {
            for i in 0..m.params.slices()[k].len() {
                let orig = m.params.slices()[k][i];
                m.params.slices_mut()[k][i] = orig + GRADCHECK_STEP;
                let plus = loss(&m);
                m.params.slices_mut()[k][i] = orig - GRADCHECK_STEP;
                let minus = loss(&m);
                m.params.slices_mut()[k][i] = orig;
                let numeric = (plus - minus) / (2.0 * GRADCHECK_STEP);
                let analytic = grads.slices()[k][i];
                let scale = analytic.abs().max(numeric.abs());
                if scale > 1e-8 {
                    worst = worst.max((analytic - numeric).abs() / scale);
                }
            }
        }
    }
    outcome(
        worst <= GRADCHECK_TOL,
        format!("max relative error {worst:.2e} over {GRADCHECK_SEEDS} seeds (tol {GRADCHECK_TOL:.0e})"),
    )
}

fn reference_dialogues() -> Outcome {
    let tmp = TempDir::new().unwrap();
    let input = fixture("reference_dialogues.json");
    let out = scorekeep(
        tmp.path(),
        &[
            "gen-props", "--dialogues", input.to_str().unwrap(), "--caption-rate", REFERENCE_RATE, "--seed", REFERENCE_SEED,
            "--out", "props.jsonl",
        ],
    );
    if !out.status.success() {
        return outcome(false, format!("gen-props failed: {}", String::from_utf8_lossy(&out.stderr)));
    }
    let dialogues = load_dialogues(&input, None).unwrap();
    let props = read_props(&tmp.path().join("props.jsonl")).unwrap();
    let got = transcript(&dialogues, &props);
    let expected = fs::read_to_string(fixture("reference_propositions.txt")).unwrap();
    let mismatches: Vec<usize> = (0..got.lines().count().max(expected.lines().count()))
        .filter(|&i| got.lines().nth(i) != expected.lines().nth(i))
        .collect();
    outcome(
        mismatches.is_empty(),
        format!(
            "{} fixture lines, {} mismatches{}",
            expected.lines().count(),
            mismatches.len(),
            mismatches.first().map_or(String::new(), |i| format!(" (first at line {})", i + 1))
        ),
    )
}

fn random_split(rng: &mut ChaCha8Rng, n: usize, first_id: u64) -> PreparedSplit {
    let turns = rng.gen_range(1..=10);
    let cfg = SynthCorpusConfig {
        dialogues: n,
        turns,
        objects: 40,
        seed: rng.gen(),
        first_id,
        turn_pools: rng.gen(),
    };
    let role = if rng.gen() { Role::Answerer } else { Role::Questioner };
    prepare_split(
        synth_dialogues(&cfg, Split::Train).unwrap(),
        &PrepareOptions {
            caption_rate: 1.0,
            balance: None,
            seed: rng.gen(),
            role,
        },
    )
    .unwrap()
}

fn labeling_oracle() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let (mut dialogues, mut checked, mut mismatches) = (0, 0usize, 0usize);
    while dialogues < ORACLE_DIALOGUES {
        let split = random_split(&mut rng, 10, 1 + dialogues as u64);
        dialogues += split.dialogues.len();
        let got: BTreeMap<(u64, usize, u64), ScoreClass> = split
            .datapoints
            .iter()
            .map(|dp| ((dp.dialogue_id, dp.turn, dp.prop_id), dp.gold))
            .collect();
        let mut want = BTreeMap::new();
        for d in &split.dialogues {
            let last = d.turns.len();
            for p in split.props.iter().filter(|p| p.dialogue_id == d.id) {
                for l in 0..=last {
                    let visibility = if l < p.source_turn { Visibility::Private } else { Visibility::Shared };
                    want.insert((d.id, l, p.id), ScoreClass { truth: p.truth, visibility });
                }
            }
        }
        checked += want.len();
        if got.len() != split.datapoints.len() {
            mismatches += 1;
        }
        let keys: BTreeSet<_> = got.keys().chain(want.keys()).collect();
        mismatches += keys.into_iter().filter(|k| got.get(k) != want.get(k)).count();
    }
    outcome(
        mismatches == 0,
        format!("{dialogues} dialogues, {checked} labels, {mismatches} mismatches"),
    )
}

fn pool_prop(id: u64, surface: usize, truth: Truth) -> Proposition {
    Proposition {
        id,
        pair_id: id,
        dialogue_id: id / 16,
        source_turn: 1 + (id % 10) as usize,
        surface: vec!["surface".into(), surface.to_string()],
        truth,
        polarity_kind: PolarityKind::Entailment,
        rule_id: "R2".into(),
        question_kind: QuestionKind::PolarPositive,
    }
}

fn balance_invariant() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(77);
    let mut failures = Vec::new();
    let mut total = 0;
    for round in 0..5 {
        let mut pool = Vec::new();
        for s in 0..60 {
            // some surfaces far above the cap, some one-sided
            let hi = if s % 7 == 0 { 2600 } else { 60 };
            let (t, f) = (rng.gen_range(0..hi), rng.gen_range(0..hi));
            for _ in 0..t {
                pool.push(pool_prop(pool.len() as u64, s, Truth::TrueToA));
            }
            for _ in 0..f {
                pool.push(pool_prop(pool.len() as u64, s, Truth::FalseToA));
            }
        }
        pool.shuffle(&mut rng);
        let out = balance_truth(&pool, Some(BALANCE_CAP), round);
        total += out.len();
        let mut counts: BTreeMap<&Vec<String>, [usize; 2]> = BTreeMap::new();
        for p in &out {
            counts.entry(&p.surface).or_default()[(p.truth == Truth::FalseToA) as usize] += 1;
        }
        for (s, [t, f]) in &counts {
            if t != f || *t > BALANCE_CAP {
                failures.push(format!("round {round} {:?}: {t}/{f}", s.join(" ")));
            }
        }
        let trues = out.iter().filter(|p| p.truth == Truth::TrueToA).count();
        if 2 * trues != out.len() {
            failures.push(format!("round {round}: global {trues}/{}", out.len()));
        }
        let ids: BTreeSet<u64> = pool.iter().map(|p| p.id).collect();
        if !out.iter().all(|p| ids.contains(&p.id)) {
            failures.push(format!("round {round}: invented propositions"));
        }
    }
    outcome(
        failures.is_empty(),
        if failures.is_empty() {
            format!("5 random pools, {total} kept, true/false 50.00/50.00, per-surface cap {BALANCE_CAP}")
        } else {
            failures.join("; ")
        },
    )
}

fn gold_consistency() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(31);
    let mut corpora: Vec<(Vec<scorekeeping::model::Dialogue>, Vec<Proposition>)> = (0..20)
        .map(|i| {
            let s = random_split(&mut rng, 25, 1 + 100 * i);
            (s.dialogues, s.props)
        })
        .collect();
    let reference = load_dialogues(&fixture("reference_dialogues.json"), None).unwrap();
    let reference_props = prepare_split(
        reference,
        &PrepareOptions {
            caption_rate: 1.0,
            balance: None,
            seed: 0,
            role: Role::Answerer,
        },
    )
    .unwrap();
    corpora.push((reference_props.dialogues, reference_props.props));
    let mut worst = 1.0f64;
    let mut columns = 0;
    for role in [Role::Answerer, Role::Questioner] {
        for task in [TaskVariant::TFxPS, TaskVariant::TF, TaskVariant::PS, TaskVariant::PxTSFS] {
            if !task.allowed_for(role) {
                continue;
            }
            let mut counts = ConsistencyCounts::default();
            for (dialogues, props) in &corpora {
                for d in dialogues {
                    let mine: Vec<Proposition> = props.iter().filter(|p| p.dialogue_id == d.id).cloned().collect();
                    let gold = build_scoreboard(d, &mine, role).unwrap();
                    counts.add(consistency(&PredictedScoreboard::from_gold(&gold, task), &gold).unwrap());
                }
            }
            let m = counts.metrics(task).unwrap();
            columns += m.columns;
            for v in [m.shift_at_correct_turn, m.only_correct_shift, m.truth_stable].into_iter().flatten() {
                worst = worst.min(v);
            }
        }
    }
    outcome(
        worst == 1.0,
        format!("{} corpora, {columns} role/task columns, minimum metric {worst:.4}", corpora.len()),
    )
}

/// Corpus on which turn-specific object pools make visibility linearly recoverable.
struct ControlSetup {
    train: ProbeData,
    valid: ProbeData,
    test: ProbeData,
}

fn control_setup(task: TaskVariant, balance_held_out: bool) -> ControlSetup {
    let opts = |seed, balanced: bool| PrepareOptions {
        caption_rate: 0.15,
        balance: balanced.then_some(Some(1000)),
        seed,
        role: Role::Answerer,
    };
    let split = |n, seed, first_id, kind, balanced| {
        let cfg = SynthCorpusConfig {
            dialogues: n,
            turns: 10,
            objects: 40,
            seed,
            first_id,
            turn_pools: true,
        };
        prepare_split(synth_dialogues(&cfg, kind).unwrap(), &opts(seed, balanced)).unwrap()
    };
    let tr = split(150, 11, 1, Split::Train, true);
    let va = split(10, 12, 100_000, Split::Valid, balance_held_out);
    let te = split(40, 13, 200_000, Split::Test, balance_held_out);
    let (reps, embs) = synth_stores(&[&tr, &va, &te], SynthMode::Cumulative, 5).unwrap();
    let data = |s: &PreparedSplit| ProbeData::resolve(&s.datapoints, &s.props, &reps, &embs, task).unwrap();
    ControlSetup {
        train: data(&tr),
        valid: data(&va),
        test: data(&te),
    }
}

fn test_correctness(setup: &ControlSetup, model: &ProbeModel, control: Control) -> Vec<bool> {
    let preds = predict(model, &setup.test, control, 0).unwrap();
    preds.iter().zip(&setup.test.labels).map(|(p, g)| p == g).collect()
}

fn mean(xs: &[bool]) -> f64 {
    xs.iter().filter(|&&x| x).count() as f64 / xs.len() as f64
}

/// Exact two-sided p-value over all 2^n sign assignments.
fn exact_p(a: &[bool], b: &[bool]) -> f64 {
    let d: Vec<i64> = a.iter().zip(b).map(|(&x, &y)| x as i64 - y as i64).collect();
    let observed = d.iter().sum::<i64>().abs();
    let n = d.len();
    let extreme = (0u32..1 << n)
        .filter(|mask| {
            let s: i64 = (0..n).map(|i| if mask >> i & 1 == 1 { -d[i] } else { d[i] }).sum();
            s.abs() >= observed
        })
        .count();
    extreme as f64 / (1u64 << n) as f64
}

fn permutation_small(ps_main: &[bool], ps_null: &[bool]) -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(99);
    let mut worst: f64 = 0.0;
    for case in 0..30 {
        let n = rng.gen_range(4..=12);
        let pa = rng.gen_range(0.2..0.95);
        let pb = rng.gen_range(0.2..0.95);
        let a: Vec<bool> = (0..n).map(|_| rng.gen_bool(pa)).collect();
        let b: Vec<bool> = (0..n).map(|_| rng.gen_bool(pb)).collect();
        let approx = permutation_test(&a, &b, PERM_SHUFFLES, case).unwrap().p_value;
        worst = worst.max((approx - exact_p(&a, &b)).abs());
    }
    let same = permutation_test(ps_main, ps_main, REPORTED_SHUFFLES, 0).unwrap().p_value;
    let main_null = permutation_test(ps_main, ps_null, REPORTED_SHUFFLES, 0).unwrap();
    outcome(
        worst <= PERM_TOL && same == 1.0 && main_null.p_value < PERM_ALPHA,
        format!(
            "max |approx-exact| {worst:.4} (tol {PERM_TOL}); identical p={same}; main {:.4} vs null {:.4} p={:.4} (< {PERM_ALPHA})",
            main_null.accuracy_a, main_null.accuracy_b, main_null.p_value
        ),
    )
}

/// Runs the pipeline twice in separate directories and compares every output byte.
fn determinism() -> Outcome {
    let pipeline: &[&[&str]] = &[
        &["synth-dialogues", "--count", "20", "--turns", "8", "--turn-pools", "true", "--seed", "3", "--split", "train", "--out", "tr.json"],
        &["synth-dialogues", "--count", "6", "--turns", "8", "--turn-pools", "true", "--seed", "4", "--first-id", "900", "--split", "valid", "--out", "va.json"],
        &["gen-props", "--dialogues", "tr.json", "--caption-rate", "0.5", "--seed", "2", "--out", "tr.jsonl", "--log", "tr.log.json"],
        &["gen-props", "--dialogues", "va.json", "--out", "va.jsonl"],
        &["build-dataset", "--props", "tr.jsonl", "--dialogues", "tr.json", "--seed", "8", "--out", "tr.skds", "--stats", "tr.stats.json"],
        &["build-dataset", "--props", "va.jsonl", "--dialogues", "va.json", "--out", "va.skds"],
        &["stats", "--props", "va.jsonl", "--dataset", "va.skds", "--turn", "5", "--out", "va.stats.json"],
        &["synth-embed", "--dialogues", "tr.json", "--dialogues", "va.json", "--props", "tr.jsonl", "--props", "va.jsonl", "--seed", "1", "--reps-out", "reps.skve", "--prop-emb-out", "embs.skve"],
        &["train", "--train", "tr.skds", "--valid", "va.skds", "--props", "tr.jsonl", "--props", "va.jsonl", "--reps", "reps.skve", "--prop-emb", "embs.skve", "--task", "tfxps", "--epochs", "3", "--hidden", "64", "--out", "m.skpm", "--history", "h.json"],
        &["train", "--train", "tr.skds", "--valid", "va.skds", "--props", "tr.jsonl", "--props", "va.jsonl", "--synth", "--dialogues", "tr.json", "--dialogues", "va.json", "--synth-seed", "1", "--task", "tfxps", "--control", "random", "--epochs", "2", "--hidden", "32", "--out", "r.skpm"],
        &["eval", "--model", "m.skpm", "--dataset", "va.skds", "--props", "tr.jsonl", "--props", "va.jsonl", "--train-props", "tr.jsonl", "--reps", "reps.skve", "--prop-emb", "embs.skve", "--report", "m.report.json", "--text", "m.report.txt", "--predictions", "m.csv", "--scoreboards", "boards"],
        &["eval", "--model", "r.skpm", "--dataset", "va.skds", "--props", "tr.jsonl", "--props", "va.jsonl", "--reps", "reps.skve", "--prop-emb", "embs.skve", "--control", "random", "--report", "r.report.json", "--predictions", "r.csv"],
        &["scoreboard", "--model", "m.skpm", "--dataset", "va.skds", "--props", "tr.jsonl", "--props", "va.jsonl", "--reps", "reps.skve", "--prop-emb", "embs.skve", "--out", "pred_boards"],
        &["scoreboard", "--dataset", "va.skds", "--props", "va.jsonl", "--out", "gold_boards"],
        &["perm-test", "--a", "m.csv", "--b", "r.csv", "--gold", "va.skds", "--seed", "4", "--out", "perm.json"],
    ];
    let runs: Vec<TempDir> = (0..2).map(|_| TempDir::new().unwrap()).collect();
    for dir in &runs {
        for args in pipeline {
            let out = scorekeep(dir.path(), args);
            if !out.status.success() {
                return outcome(
                    false,
                    format!("{} failed: {}", args[0], String::from_utf8_lossy(&out.stderr).trim()),
                );
            }
        }
    }
    let files = |root: &Path| -> BTreeMap<String, Vec<u8>> {
        let mut out = BTreeMap::new();
        let mut stack = vec![root.to_path_buf()];
        while let Some(dir) = stack.pop() {
            for e in fs::read_dir(&dir).unwrap() {
                let p = e.unwrap().path();
                if p.is_dir() {
                    stack.push(p);
                } else {
                    let rel = p.strip_prefix(root).unwrap().display().to_string();
                    out.insert(rel, fs::read(&p).unwrap());
                }
            }
        }
        out
    };
    let (a, b) = (files(runs[0].path()), files(runs[1].path()));
    let differing: Vec<&String> = a.keys().filter(|k| a.get(*k) != b.get(*k)).collect();
    outcome(
        a.len() == b.len() && differing.is_empty(),
        format!(
            "{} commands, {} output files, {} differ{}",
            pipeline.len(),
            a.len(),
            differing.len(),
            differing.first().map_or(String::new(), |k| format!(" (first: {k})"))
        ),
    )
}

fn main() {
    let mut results: Vec<(&str, Outcome, f64)> = Vec::new();
    let mut run = |name: &'static str, f: &mut dyn FnMut() -> Outcome| {
        let t = Instant::now();
        let o = f();
        let secs = t.elapsed().as_secs_f64();
        println!("{} {name}: {} [{secs:.1}s]", if o.pass { "PASS" } else { "FAIL" }, o.detail);
        results.push((name, o, secs));
    };

    run("parameter-counts", &mut parameter_counts);
    run("gradient-check", &mut gradient_check);
    run("reference-dialogue-regression", &mut reference_dialogues);
    run("labeling-oracle", &mut labeling_oracle);
    run("balance-invariant", &mut balance_invariant);
    run("gold-scoreboard-consistency", &mut gold_consistency);

    let ps = control_setup(TaskVariant::PS, false);
    let mut ps_main = Vec::new();
    run("positive-control", &mut || {
        let cfg = TrainConfig::new(TaskVariant::PS, Role::Answerer);
        let (model, history) = train(&ps.train, &ps.valid, &cfg).unwrap();
        ps_main = test_correctness(&ps, &model, Control::None);
        let acc = mean(&ps_main);
        outcome(
            acc >= POSITIVE_THRESHOLD,
            format!(
                "PS test accuracy {acc:.4} (>= {POSITIVE_THRESHOLD}) on {} datapoints, best epoch {}/{}",
                ps_main.len(),
                history.best_epoch,
                cfg.max_epochs
            ),
        )
    });

    run("negative-control", &mut || {
        let tf = control_setup(TaskVariant::TF, true);
        let mut cfg = TrainConfig::new(TaskVariant::TF, Role::Answerer);
        cfg.control = Control::NullR;
        cfg.control_at_eval = true;
        let (model, _) = train(&tf.train, &tf.valid, &cfg).unwrap();
        let acc = mean(&test_correctness(&tf, &model, Control::NullR));
        outcome(
            (acc - NULL_TARGET).abs() <= NULL_TOL,
            format!("null-r TF test accuracy {acc:.4} (target {NULL_TARGET} +/- {NULL_TOL})"),
        )
    });

    run("permutation-test", &mut || {
        let mut cfg = TrainConfig::new(TaskVariant::PS, Role::Answerer);
        cfg.control = Control::NullR;
        cfg.control_at_eval = true;
        let (null_model, _) = train(&ps.train, &ps.valid, &cfg).unwrap();
        let ps_null = test_correctness(&ps, &null_model, Control::NullR);
        permutation_small(&ps_main, &ps_null)
    });

    run("determinism", &mut determinism);

    let passed = results.iter().filter(|(_, o, _)| o.pass).count();
    let total: f64 = results.iter().map(|(_, _, s)| s).sum();
    println!("acceptance: {passed}/{} criteria passed in {total:.0}s", results.len());
    if passed != results.len() {
        std::process::exit(1);
    }
}
