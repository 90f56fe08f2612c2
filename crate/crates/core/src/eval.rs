//! Accuracy, confusion matrices, breakdowns, predicted scoreboards with
//! incremental-consistency metrics, and the paired permutation test.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt::Write as _;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::dataset::{build_datapoints, Datapoint};
use crate::embed::VectorStore;
use crate::error::{Error, Result};
use crate::model::{
    project_class, Proposition, QuestionKind, Role, Scoreboard, TaskVariant, Tokens, Truth, Visibility,
};
use crate::probe::{predict, Control, ProbeData, ProbeModel};

/// Representation turn at which headline numbers are reported.
pub const REPORT_TURN: usize = 5;

fn check_lengths(preds: &[usize], golds: &[usize]) -> Result<()> {
    if preds.len() != golds.len() {
        return Err(Error::Shape(format!(
            "{} predictions for {} gold labels",
            preds.len(),
            golds.len()
        )));
    }
    Ok(())
}

pub fn accuracy(preds: &[usize], golds: &[usize]) -> Result<f64> {
    check_lengths(preds, golds)?;
    if golds.is_empty() {
        return Err(Error::EmptySubset("no datapoints to score".into()));
    }
    let hits = preds.iter().zip(golds).filter(|(p, g)| p == g).count();
    Ok(hits as f64 / golds.len() as f64)
}

/// Accuracy over the datapoints at representation turn `turn`.
pub fn accuracy_at_turn(preds: &[usize], golds: &[usize], datapoints: &[Datapoint], turn: usize) -> Result<f64> {
    check_lengths(preds, golds)?;
    let (p, g): (Vec<usize>, Vec<usize>) = datapoints
        .iter()
        .zip(preds.iter().zip(golds))
        .filter(|(dp, _)| dp.turn == turn)
        .map(|(_, (&p, &g))| (p, g))
        .unzip();
    if g.is_empty() {
        return Err(Error::EmptySubset(format!("no datapoints at turn {turn}")));
    }
    accuracy(&p, &g)
}

/// `m[gold][pred]` counts.
pub fn confusion(preds: &[usize], golds: &[usize], n_labels: usize) -> Result<Vec<Vec<u64>>> {
    check_lengths(preds, golds)?;
    let mut m = vec![vec![0u64; n_labels]; n_labels];
    for (&p, &g) in preds.iter().zip(golds) {
        if p >= n_labels || g >= n_labels {
            return Err(Error::Shape(format!("label {} out of range", p.max(g))));
        }
        m[g][p] += 1;
    }
    Ok(m)
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct GroupAccuracy {
    pub count: usize,
    pub correct: usize,
    pub accuracy: f64,
}

impl GroupAccuracy {
    fn add(&mut self, hit: bool) {
        self.count += 1;
        self.correct += usize::from(hit);
        self.accuracy = self.correct as f64 / self.count as f64;
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Breakdowns {
    /// question kind → source turn → accuracy
    pub per_kind: BTreeMap<String, BTreeMap<usize, GroupAccuracy>>,
    pub per_source_turn: BTreeMap<usize, GroupAccuracy>,
    /// representation turn → mean over dialogues of the within-dialogue accuracy
    pub per_rep_turn: BTreeMap<usize, f64>,
    /// absent when the group is empty
    pub seen: Option<GroupAccuracy>,
    pub unseen: Option<GroupAccuracy>,
}

pub fn breakdowns(
    datapoints: &[Datapoint],
    preds: &[usize],
    golds: &[usize],
    props: &[Proposition],
    train_surfaces: &BTreeSet<Tokens>,
) -> Result<Breakdowns> {
    check_lengths(preds, golds)?;
    if datapoints.len() != golds.len() {
        return Err(Error::Shape("datapoints and labels differ in length".into()));
    }
    let by_id: HashMap<u64, &Proposition> = props.iter().map(|p| (p.id, p)).collect();
    let mut per_kind: BTreeMap<String, BTreeMap<usize, GroupAccuracy>> = BTreeMap::new();
    let mut per_source_turn: BTreeMap<usize, GroupAccuracy> = BTreeMap::new();
    let mut per_dialogue_turn: BTreeMap<(usize, u64), GroupAccuracy> = BTreeMap::new();
    let mut seen = GroupAccuracy::default();
    let mut unseen = GroupAccuracy::default();
    for (dp, (p, g)) in datapoints.iter().zip(preds.iter().zip(golds)) {
        let prop = by_id
            .get(&dp.prop_id)
            .ok_or_else(|| Error::Consistency(format!("unknown proposition {}", dp.prop_id)))?;
        let hit = p == g;
        per_kind
            .entry(prop.question_kind.name().to_string())
            .or_default()
            .entry(prop.source_turn)
            .or_default()
            .add(hit);
        per_source_turn.entry(prop.source_turn).or_default().add(hit);
        per_dialogue_turn.entry((dp.turn, dp.dialogue_id)).or_default().add(hit);
        if train_surfaces.contains(&prop.surface) {
            seen.add(hit);
        } else {
            unseen.add(hit);
        }
    }
    let mut sums: BTreeMap<usize, (f64, usize)> = BTreeMap::new();
    for ((turn, _), g) in per_dialogue_turn {
        let e = sums.entry(turn).or_default();
        e.0 += g.accuracy;
        e.1 += 1;
    }
    let nonempty = |g: GroupAccuracy| (g.count > 0).then_some(g);
    Ok(Breakdowns {
        per_kind,
        per_source_turn,
        per_rep_turn: sums.into_iter().map(|(t, (s, n))| (t, s / n as f64)).collect(),
        seen: nonempty(seen),
        unseen: nonempty(unseen),
    })
}

/// Predicted labels laid out like a [`Scoreboard`].
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PredictedScoreboard {
    pub dialogue_id: u64,
    pub role: Role,
    pub task: TaskVariant,
    pub prop_ids: Vec<u64>,
    /// `cells[row][col]` task labels; rows are turns `0..=T`
    pub cells: Vec<Vec<usize>>,
}

impl PredictedScoreboard {
    /// The gold scoreboard projected onto `task`.
    pub fn from_gold(gold: &Scoreboard, task: TaskVariant) -> Self {
        PredictedScoreboard {
            dialogue_id: gold.dialogue_id,
            role: gold.role,
            task,
            prop_ids: gold.prop_ids.clone(),
            cells: gold
                .cells
                .iter()
                .map(|row| row.iter().map(|&c| project_class(c, task)).collect())
                .collect(),
        }
    }

    /// Assembles a board from flat predictions over `datapoints` of one dialogue.
    pub fn from_predictions(
        dialogue_id: u64,
        role: Role,
        task: TaskVariant,
        prop_ids: &[u64],
        last_turn: usize,
        datapoints: &[Datapoint],
        preds: &[usize],
    ) -> Result<Self> {
        let col: HashMap<u64, usize> = prop_ids.iter().enumerate().map(|(i, &p)| (p, i)).collect();
        let mut cells = vec![vec![usize::MAX; prop_ids.len()]; last_turn + 1];
        for (dp, &p) in datapoints.iter().zip(preds) {
            if dp.dialogue_id != dialogue_id {
                continue;
            }
            let c = *col
                .get(&dp.prop_id)
                .ok_or_else(|| Error::Consistency(format!("proposition {} not on the board", dp.prop_id)))?;
            if dp.turn > last_turn {
                return Err(Error::TurnRange {
                    turn: dp.turn,
                    last: last_turn,
                });
            }
            cells[dp.turn][c] = p;
        }
        if cells.iter().flatten().any(|&x| x == usize::MAX) {
            return Err(Error::Consistency(format!(
                "predictions do not cover the scoreboard of dialogue {dialogue_id}"
            )));
        }
        Ok(PredictedScoreboard {
            dialogue_id,
            role,
            task,
            prop_ids: prop_ids.to_vec(),
            cells,
        })
    }

    pub fn n_rows(&self) -> usize {
        self.cells.len()
    }

    pub fn n_cols(&self) -> usize {
        self.prop_ids.len()
    }

    pub fn label_name(&self, row: usize, col: usize) -> &'static str {
        self.task.label_names()[self.cells[row][col]]
    }
}

/// Runs the probe over every (turn, proposition) cell of one dialogue.
#[allow(clippy::too_many_arguments)]
pub fn reconstruct_scoreboard(
    model: &ProbeModel,
    dialogue_id: u64,
    last_turn: usize,
    props: &[Proposition],
    reps: &VectorStore,
    embs: &VectorStore,
    control: Control,
    seed: u64,
) -> Result<PredictedScoreboard> {
    let props: Vec<Proposition> = props.iter().filter(|p| p.dialogue_id == dialogue_id).cloned().collect();
    let turns = BTreeMap::from([(dialogue_id, last_turn)]);
    let datapoints = build_datapoints(&turns, &props, model.role)?;
    let data = ProbeData::resolve(&datapoints, &props, reps, embs, model.task)?;
    let preds = predict(model, &data, control, seed)?;
    let ids: Vec<u64> = props.iter().map(|p| p.id).collect();
    PredictedScoreboard::from_predictions(dialogue_id, model.role, model.task, &ids, last_turn, &datapoints, &preds)
}

/// Column counts behind [`ConsistencyMetrics`]; summed across dialogues.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConsistencyCounts {
    pub columns: usize,
    pub shift_at_correct_turn: usize,
    pub only_correct_shift: usize,
    pub truth_stable: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ConsistencyMetrics {
    pub columns: usize,
    /// absent for tasks without a visibility dimension
    pub shift_at_correct_turn: Option<f64>,
    pub only_correct_shift: Option<f64>,
    /// absent for tasks that do not always decide truth
    pub truth_stable: Option<f64>,
}

fn has_visibility(task: TaskVariant) -> bool {
    (0..task.n_labels()).all(|l| task.decode(l).and_then(|c| c.visibility).is_some())
}

fn has_truth(task: TaskVariant) -> bool {
    (0..task.n_labels()).all(|l| task.decode(l).and_then(|c| c.truth).is_some())
}

impl ConsistencyCounts {
    pub fn add(&mut self, other: ConsistencyCounts) {
        self.columns += other.columns;
        self.shift_at_correct_turn += other.shift_at_correct_turn;
        self.only_correct_shift += other.only_correct_shift;
        self.truth_stable += other.truth_stable;
    }

    pub fn metrics(&self, task: TaskVariant) -> Result<ConsistencyMetrics> {
        if self.columns == 0 {
            return Err(Error::EmptySubset("no scoreboard columns".into()));
        }
        let frac = |x: usize| x as f64 / self.columns as f64;
        let vis = has_visibility(task);
        Ok(ConsistencyMetrics {
            columns: self.columns,
            shift_at_correct_turn: vis.then(|| frac(self.shift_at_correct_turn)),
            only_correct_shift: vis.then(|| frac(self.only_correct_shift)),
            truth_stable: has_truth(task).then(|| frac(self.truth_stable)),
        })
    }
}

/// Per-column incremental checks of a predicted board against the gold one.
///
/// The correct turn `i` is the first gold Shared row. For `i > 0` the shift is
/// correct when rows `i-1`, `i` are predicted Private, Shared; for `i = 0`
/// (captions) when row 0 is predicted Shared. The shift is the only one when
/// the predicted visibility matches gold on every row.
pub fn consistency(pred: &PredictedScoreboard, gold: &Scoreboard) -> Result<ConsistencyCounts> {
    if pred.n_rows() != gold.n_rows() || pred.prop_ids != gold.prop_ids {
        return Err(Error::Shape(format!(
            "predicted scoreboard of dialogue {} does not match the gold shape",
            pred.dialogue_id
        )));
    }
    let decode = |row: usize, col: usize| {
        pred.task
            .decode(pred.cells[row][col])
            .ok_or_else(|| Error::Shape(format!("label {} out of range", pred.cells[row][col])))
    };
    let mut counts = ConsistencyCounts {
        columns: gold.n_cols(),
        ..Default::default()
    };
    for col in 0..gold.n_cols() {
        let gold_vis: Vec<Visibility> = gold.column(col).map(|c| c.visibility).collect();
        let i = gold_vis
            .iter()
            .position(|&v| v == Visibility::Shared)
            .ok_or_else(|| Error::Consistency(format!("gold column {col} never becomes shared")))?;
        let cells = (0..pred.n_rows()).map(|r| decode(r, col)).collect::<Result<Vec<_>>>()?;
        let vis: Vec<Option<Visibility>> = cells.iter().map(|c| c.visibility).collect();
        let shift = if i == 0 {
            vis[0] == Some(Visibility::Shared)
        } else {
            vis[i - 1] == Some(Visibility::Private) && vis[i] == Some(Visibility::Shared)
        };
        if shift {
            counts.shift_at_correct_turn += 1;
            if vis.iter().zip(&gold_vis).all(|(p, g)| *p == Some(*g)) {
                counts.only_correct_shift += 1;
            }
        }
        let truths: Vec<Option<Truth>> = cells.iter().map(|c| c.truth).collect();
        if truths[0].is_some() && truths.iter().all(|t| *t == truths[0]) {
            counts.truth_stable += 1;
        }
    }
    Ok(counts)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PermutationResult {
    pub pairs: usize,
    pub accuracy_a: f64,
    pub accuracy_b: f64,
    /// mean(a) − mean(b)
    pub observed: f64,
    pub shuffles: usize,
    pub p_value: f64,
}

/// Paired approximate permutation test on correctness indicators.
///
/// Each shuffle swaps a and b within every pair independently with
/// probability ½; `p = (#{|stat| ≥ |observed|} + 1) / (shuffles + 1)`.
pub fn permutation_test(a: &[bool], b: &[bool], shuffles: usize, seed: u64) -> Result<PermutationResult> {
    if a.len() != b.len() {
        return Err(Error::Shape(format!("{} vs {} paired outcomes", a.len(), b.len())));
    }
    if a.is_empty() {
        return Err(Error::EmptySubset("no paired outcomes".into()));
    }
    if shuffles == 0 {
        return Err(Error::Config("at least one shuffle is required".into()));
    }
    // statistics are kept as integer sums of a_i − b_i
    let diffs: Vec<i64> = a.iter().zip(b).map(|(&x, &y)| i64::from(x) - i64::from(y)).collect();
    let observed: i64 = diffs.iter().sum();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut extreme = 0usize;
    for _ in 0..shuffles {
        let stat: i64 = diffs.iter().map(|&d| if rng.gen::<bool>() { -d } else { d }).sum();
        if stat.abs() >= observed.abs() {
            extreme += 1;
        }
    }
    let n = a.len() as f64;
    let count = |v: &[bool]| v.iter().filter(|&&x| x).count() as f64;
    Ok(PermutationResult {
        pairs: a.len(),
        accuracy_a: count(a) / n,
        accuracy_b: count(b) / n,
        observed: observed as f64 / n,
        shuffles,
        p_value: (extreme + 1) as f64 / (shuffles + 1) as f64,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub task: TaskVariant,
    pub role: Role,
    pub labels: Vec<String>,
    pub datapoints: usize,
    pub accuracy: f64,
    /// absent when no datapoint sits at the report turn
    pub turn5_accuracy: Option<f64>,
    /// `confusion[gold][pred]` over all scored datapoints
    pub confusion: Vec<Vec<u64>>,
    pub confusion_turn5: Option<Vec<Vec<u64>>>,
    pub breakdowns: Breakdowns,
    pub consistency: Option<ConsistencyMetrics>,
}

/// Builds the report; `consistency` comes from reconstructed scoreboards when requested.
pub fn build_report(
    task: TaskVariant,
    role: Role,
    datapoints: &[Datapoint],
    preds: &[usize],
    props: &[Proposition],
    train_surfaces: &BTreeSet<Tokens>,
    consistency: Option<ConsistencyMetrics>,
) -> Result<EvalReport> {
    let golds: Vec<usize> = datapoints.iter().map(|dp| project_class(dp.gold, task)).collect();
    let n = task.n_labels();
    let at5: Vec<usize> = (0..datapoints.len()).filter(|&i| datapoints[i].turn == REPORT_TURN).collect();
    let (p5, g5): (Vec<usize>, Vec<usize>) = at5.iter().map(|&i| (preds[i], golds[i])).unzip();
    Ok(EvalReport {
        task,
        role,
        labels: task.label_names().iter().map(|s| s.to_string()).collect(),
        datapoints: datapoints.len(),
        accuracy: accuracy(preds, &golds)?,
        turn5_accuracy: if g5.is_empty() { None } else { Some(accuracy(&p5, &g5)?) },
        confusion: confusion(preds, &golds, n)?,
        confusion_turn5: if g5.is_empty() { None } else { Some(confusion(&p5, &g5, n)?) },
        breakdowns: breakdowns(datapoints, preds, &golds, props, train_surfaces)?,
        consistency,
    })
}

fn pct(x: f64) -> String {
    format!("{:6.2}", 100.0 * x)
}

/// Plain-text summary of a report.
pub fn render_report(r: &EvalReport) -> String {
    let mut s = String::new();
    let _ = writeln!(s, "task {}  role {}  datapoints {}", r.task, r.role.tag(), r.datapoints);
    let _ = writeln!(s, "accuracy        {}", pct(r.accuracy));
    if let Some(a) = r.turn5_accuracy {
        let _ = writeln!(s, "turn-5 accuracy {}", pct(a));
    }
    let width = r.labels.iter().map(|l| l.len()).max().unwrap_or(4).max(6);
    let _ = writeln!(s, "\nconfusion (rows gold, columns predicted)");
    let _ = write!(s, "{:width$}", "");
    for l in &r.labels {
        let _ = write!(s, " {l:>width$}");
    }
    s.push('\n');
    for (l, row) in r.labels.iter().zip(&r.confusion) {
        let _ = write!(s, "{l:width$}");
        for c in row {
            let _ = write!(s, " {c:>width$}");
        }
        s.push('\n');
    }
    let _ = writeln!(s, "\nsource turn  count  accuracy");
    for (t, g) in &r.breakdowns.per_source_turn {
        let _ = writeln!(s, "{t:>11}  {:>5}  {}", g.count, pct(g.accuracy));
    }
    let _ = writeln!(s, "\nkind             count  accuracy");
    for kind in QuestionKind::ALL {
        if let Some(turns) = r.breakdowns.per_kind.get(kind.name()) {
            let count: usize = turns.values().map(|g| g.count).sum();
            let correct: usize = turns.values().map(|g| g.correct).sum();
            let _ = writeln!(s, "{:15}  {count:>5}  {}", kind.name(), pct(correct as f64 / count as f64));
        }
    }
    for (name, g) in [("seen", r.breakdowns.seen), ("unseen", r.breakdowns.unseen)] {
        if let Some(g) = g {
            let _ = writeln!(s, "{name:15}  {:>5}  {}", g.count, pct(g.accuracy));
        }
    }
    if let Some(c) = &r.consistency {
        let _ = writeln!(s, "\nscoreboard columns {}", c.columns);
        for (name, v) in [
            ("shift at correct turn", c.shift_at_correct_turn),
            ("only correct shift", c.only_correct_shift),
            ("truth stable", c.truth_stable),
        ] {
            if let Some(v) = v {
                let _ = writeln!(s, "{name:22} {}", pct(v));
            }
        }
    }
    s
}

/// Scoreboard as CSV: one row per turn, one column per proposition surface.
pub fn write_scoreboard_csv(path: &Path, board: &PredictedScoreboard, surfaces: &[String]) -> Result<()> {
    if surfaces.len() != board.n_cols() {
        return Err(Error::Shape("one surface per scoreboard column is required".into()));
    }
    let mut w = csv::Writer::from_path(path).map_err(|e| csv_err(path, e))?;
    let mut header = vec!["turn".to_string()];
    header.extend(surfaces.iter().cloned());
    w.write_record(&header).map_err(|e| csv_err(path, e))?;
    for row in 0..board.n_rows() {
        let mut rec = vec![row.to_string()];
        rec.extend((0..board.n_cols()).map(|c| board.label_name(row, c).to_string()));
        w.write_record(&rec).map_err(|e| csv_err(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

fn csv_err(path: &Path, e: csv::Error) -> Error {
    Error::Format(format!("{}: {e}", path.display()))
}

/// One row of a predictions file.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PredictionRow {
    pub dialogue_id: u64,
    pub role: String,
    pub turn: usize,
    pub prop_id: u64,
    pub task: TaskVariant,
    pub pred: String,
}

pub fn write_predictions(path: &Path, task: TaskVariant, datapoints: &[Datapoint], preds: &[usize]) -> Result<()> {
    if datapoints.len() != preds.len() {
        return Err(Error::Shape("one prediction per datapoint is required".into()));
    }
    let mut w = csv::Writer::from_path(path).map_err(|e| csv_err(path, e))?;
    for (dp, &p) in datapoints.iter().zip(preds) {
        let name = task
            .label_names()
            .get(p)
            .ok_or_else(|| Error::Shape(format!("label {p} out of range")))?;
        w.serialize(PredictionRow {
            dialogue_id: dp.dialogue_id,
            role: dp.role.tag().to_string(),
            turn: dp.turn,
            prop_id: dp.prop_id,
            task,
            pred: name.to_string(),
        })
        .map_err(|e| csv_err(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn read_predictions(path: &Path) -> Result<Vec<PredictionRow>> {
    let mut r = csv::Reader::from_path(path).map_err(|e| csv_err(path, e))?;
    r.deserialize()
        .map(|row| row.map_err(|e| csv_err(path, e)))
        .collect()
}

/// Correctness indicators of `rows` against the gold datapoints, which must
/// list the same keys in the same order.
pub fn correctness(rows: &[PredictionRow], gold: &[Datapoint]) -> Result<Vec<bool>> {
    if rows.len() != gold.len() {
        return Err(Error::Consistency(format!(
            "{} predictions for {} gold datapoints",
            rows.len(),
            gold.len()
        )));
    }
    rows.iter()
        .zip(gold)
        .enumerate()
        .map(|(i, (row, dp))| {
            let key = (row.dialogue_id, row.role.as_str(), row.turn, row.prop_id);
            if key != (dp.dialogue_id, dp.role.tag(), dp.turn, dp.prop_id) {
                return Err(Error::Consistency(format!(
                    "row {i}: prediction key d{}/{}/t{}/p{} does not match gold d{}/{}/t{}/p{}",
                    row.dialogue_id,
                    row.role,
                    row.turn,
                    row.prop_id,
                    dp.dialogue_id,
                    dp.role.tag(),
                    dp.turn,
                    dp.prop_id
                )));
            }
            let gold = row.task.label_names()[project_class(dp.gold, row.task)];
            Ok(row.pred == gold)
        })
        .collect()
}
