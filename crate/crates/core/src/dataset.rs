//! Probing datapoints and the sampling steps that shape the proposition sets.

use std::collections::{BTreeMap, BTreeSet};
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{
    score_class, Dialogue, Proposition, QuestionKind, Role, ScoreClass, Tokens, Truth,
};

pub const DATASET_MAGIC: &[u8; 4] = b"SKDS";
pub const DATASET_VERSION: u16 = 1;
const RECORD_LEN: u32 = 8 + 1 + 1 + 8 + 1;

/// Default fraction of caption pairs kept.
pub const DEFAULT_CAPTION_RATE: f64 = 0.15;
/// Default per-surface cap on each truth side of the training set.
pub const DEFAULT_CAP_PER_SIDE: usize = 1000;

/// One (representation, proposition, class) triple.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Datapoint {
    pub dialogue_id: u64,
    pub role: Role,
    pub turn: usize,
    pub prop_id: u64,
    pub gold: ScoreClass,
}

/// Last turn index of every dialogue.
pub fn last_turns(dialogues: &[Dialogue]) -> BTreeMap<u64, usize> {
    dialogues.iter().map(|d| (d.id, d.last_turn())).collect()
}

/// One datapoint per (turn `0..=T`, proposition) pair of every dialogue.
///
/// Dialogues appear in the order of their first proposition; within a dialogue
/// datapoints run turn-major.
pub fn build_datapoints(
    last_turn: &BTreeMap<u64, usize>,
    props: &[Proposition],
    role: Role,
) -> Result<Vec<Datapoint>> {
    let mut order: Vec<u64> = Vec::new();
    let mut groups: BTreeMap<u64, Vec<&Proposition>> = BTreeMap::new();
    for p in props {
        let g = groups.entry(p.dialogue_id).or_insert_with(|| {
            order.push(p.dialogue_id);
            Vec::new()
        });
        g.push(p);
    }
    let mut out = Vec::new();
    for id in order {
        let last = *last_turn.get(&id).ok_or_else(|| {
            Error::Consistency(format!("propositions refer to unknown dialogue {id}"))
        })?;
        let group = &groups[&id];
        for turn in 0..=last {
            for p in group {
                out.push(Datapoint {
                    dialogue_id: id,
                    role,
                    turn,
                    prop_id: p.id,
                    gold: score_class(p, role, turn, last)?,
                });
            }
        }
    }
    Ok(out)
}

/// Keeps `round(rate * n)` of the `n` caption pairs, chosen as the prefix of a
/// seeded shuffle. Pairs are kept or dropped whole; other propositions pass.
pub fn downsample_captions(props: &[Proposition], rate: f64, seed: u64) -> Result<Vec<Proposition>> {
    if !(0.0..=1.0).contains(&rate) {
        return Err(Error::Config(format!("caption rate {rate} outside [0, 1]")));
    }
    let mut pairs: Vec<(u64, u64)> = props
        .iter()
        .filter(|p| p.is_caption())
        .map(|p| (p.dialogue_id, p.pair_id))
        .collect::<BTreeSet<_>>()
        .into_iter()
        .collect();
    let keep = (rate * pairs.len() as f64).round() as usize;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    pairs.shuffle(&mut rng);
    let kept: BTreeSet<(u64, u64)> = pairs.into_iter().take(keep).collect();
    Ok(props
        .iter()
        .filter(|p| !p.is_caption() || kept.contains(&(p.dialogue_id, p.pair_id)))
        .cloned()
        .collect())
}

/// Makes every surface occur equally often as true and as false, at most
/// `cap_per_side` times each (`None` for no cap). Surfaces seen with only one
/// truth value disappear. Output keeps input order.
pub fn balance_truth(props: &[Proposition], cap_per_side: Option<usize>, seed: u64) -> Vec<Proposition> {
    let mut buckets: BTreeMap<&Tokens, [Vec<usize>; 2]> = BTreeMap::new();
    for (i, p) in props.iter().enumerate() {
        let side = match p.truth {
            Truth::TrueToA => 0,
            Truth::FalseToA => 1,
        };
        buckets.entry(&p.surface).or_default()[side].push(i);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut keep = vec![false; props.len()];
    for [trues, falses] in buckets.values_mut() {
        let mut k = trues.len().min(falses.len());
        if let Some(cap) = cap_per_side {
            k = k.min(cap);
        }
        for side in [trues, falses] {
            side.sort_by_key(|&i| (props[i].dialogue_id, props[i].source_turn, props[i].id));
            side.shuffle(&mut rng);
            for &i in side.iter().take(k) {
                keep[i] = true;
            }
        }
    }
    props
        .iter()
        .zip(keep)
        .filter(|(_, k)| *k)
        .map(|(p, _)| p.clone())
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetStats {
    pub dialogues: usize,
    pub propositions: usize,
    pub proposition_types: usize,
    pub datapoints: usize,
    pub vocab_size: usize,
    pub avg_props_per_dialogue: f64,
    /// Turn the class proportions are restricted to, if any.
    pub turn: Option<usize>,
    /// Percentages over datapoints, canonical class order.
    pub class_proportions: BTreeMap<String, f64>,
    /// Percentages over propositions.
    pub truth_proportions: BTreeMap<String, f64>,
    /// Percentages over propositions.
    pub question_kind_proportions: BTreeMap<String, f64>,
}

fn percent(count: usize, total: usize) -> f64 {
    if total == 0 {
        0.0
    } else {
        100.0 * count as f64 / total as f64
    }
}

pub fn compute_stats(props: &[Proposition], datapoints: &[Datapoint], turn: Option<usize>) -> DatasetStats {
    let dialogues: BTreeSet<u64> = props.iter().map(|p| p.dialogue_id).collect();
    let types: BTreeSet<&Tokens> = props.iter().map(|p| &p.surface).collect();
    let vocab: BTreeSet<&String> = props.iter().flat_map(|p| p.surface.iter()).collect();

    let selected: Vec<&Datapoint> = datapoints
        .iter()
        .filter(|d| turn.is_none_or(|t| d.turn == t))
        .collect();
    let mut class_counts = [0usize; 4];
    for d in &selected {
        class_counts[d.gold.index()] += 1;
    }
    let class_proportions = ScoreClass::ALL
        .iter()
        .map(|c| (c.name().to_string(), percent(class_counts[c.index()], selected.len())))
        .collect();

    let n_true = props.iter().filter(|p| p.truth == Truth::TrueToA).count();
    let truth_proportions = [
        ("true_to_a".to_string(), percent(n_true, props.len())),
        ("false_to_a".to_string(), percent(props.len() - n_true, props.len())),
    ]
    .into();
    let question_kind_proportions = QuestionKind::ALL
        .iter()
        .map(|k| {
            let n = props.iter().filter(|p| p.question_kind == *k).count();
            (k.name().to_string(), percent(n, props.len()))
        })
        .collect();

    DatasetStats {
        dialogues: dialogues.len(),
        propositions: props.len(),
        proposition_types: types.len(),
        datapoints: datapoints.len(),
        vocab_size: vocab.len(),
        avg_props_per_dialogue: if dialogues.is_empty() {
            0.0
        } else {
            props.len() as f64 / dialogues.len() as f64
        },
        turn,
        class_proportions,
        truth_proportions,
        question_kind_proportions,
    }
}

/// Writes datapoints in the SKDS binary layout.
pub fn write_dataset(path: &Path, datapoints: &[Datapoint]) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    let mut write = |bytes: &[u8]| w.write_all(bytes).map_err(|e| Error::io(path, e));
    write(DATASET_MAGIC)?;
    write(&DATASET_VERSION.to_le_bytes())?;
    write(&(datapoints.len() as u64).to_le_bytes())?;
    for d in datapoints {
        let turn = u8::try_from(d.turn)
            .map_err(|_| Error::Format(format!("turn {} does not fit the record", d.turn)))?;
        write(&RECORD_LEN.to_le_bytes())?;
        write(&d.dialogue_id.to_le_bytes())?;
        write(&[d.role.code(), turn])?;
        write(&d.prop_id.to_le_bytes())?;
        write(&[d.gold.index() as u8])?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

fn read_exact<R: Read>(r: &mut R, buf: &mut [u8], what: &str) -> Result<()> {
    r.read_exact(buf).map_err(|e| {
        if e.kind() == std::io::ErrorKind::UnexpectedEof {
            Error::Format(format!("truncated dataset file while reading {what}"))
        } else {
            Error::Format(format!("reading {what}: {e}"))
        }
    })
}

pub fn read_dataset(path: &Path) -> Result<Vec<Datapoint>> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut r = BufReader::new(file);
    let mut magic = [0u8; 4];
    read_exact(&mut r, &mut magic, "magic")?;
    if &magic != DATASET_MAGIC {
        return Err(Error::Format(format!("{}: not an SKDS file", path.display())));
    }
    let mut v = [0u8; 2];
    read_exact(&mut r, &mut v, "version")?;
    let version = u16::from_le_bytes(v);
    if version != DATASET_VERSION {
        return Err(Error::Format(format!("unsupported SKDS version {version}")));
    }
    let mut c = [0u8; 8];
    read_exact(&mut r, &mut c, "count")?;
    let count = u64::from_le_bytes(c);
    let mut out = Vec::with_capacity(count.min(1 << 24) as usize);
    let mut rec = [0u8; RECORD_LEN as usize];
    for i in 0..count {
        let mut len = [0u8; 4];
        read_exact(&mut r, &mut len, "record length")?;
        if u32::from_le_bytes(len) != RECORD_LEN {
            return Err(Error::Format(format!("record {i} has unexpected length")));
        }
        read_exact(&mut r, &mut rec, "record")?;
        let dialogue_id = u64::from_le_bytes(rec[0..8].try_into().unwrap());
        let role = Role::from_code(rec[8])
            .ok_or_else(|| Error::Format(format!("record {i}: bad role code {}", rec[8])))?;
        let turn = rec[9] as usize;
        let prop_id = u64::from_le_bytes(rec[10..18].try_into().unwrap());
        let gold = ScoreClass::from_index(rec[18] as usize)
            .ok_or_else(|| Error::Format(format!("record {i}: bad class code {}", rec[18])))?;
        out.push(Datapoint {
            dialogue_id,
            role,
            turn,
            prop_id,
            gold,
        });
    }
    let mut extra = [0u8; 1];
    if r.read(&mut extra).map_err(|e| Error::io(path, e))? != 0 {
        return Err(Error::Format("trailing bytes after last record".into()));
    }
    Ok(out)
}

pub fn write_props(path: &Path, props: &[Proposition]) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    for p in props {
        serde_json::to_writer(&mut w, p).map_err(|e| Error::json("proposition", e))?;
        w.write_all(b"\n").map_err(|e| Error::io(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn read_props(path: &Path) -> Result<Vec<Proposition>> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut out = Vec::new();
    for (n, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(
            serde_json::from_str(&line)
                .map_err(|e| Error::json(format!("{} line {}", path.display(), n + 1), e))?,
        );
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::tests::prop;
    use crate::model::{PolarityKind, Visibility};
    use proptest::prelude::*;

    fn pair(id: u64, dialogue_id: u64, source_turn: usize, surface: &str, negated: &str) -> [Proposition; 2] {
        let mut e = prop(id, dialogue_id, source_turn, Truth::TrueToA);
        e.surface = crate::propgen::tokenize(surface);
        let mut c = prop(id + 1, dialogue_id, source_turn, Truth::FalseToA);
        c.pair_id = id;
        c.polarity_kind = PolarityKind::Contradiction;
        c.surface = crate::propgen::tokenize(negated);
        [e, c]
    }

    #[test]
    fn datapoint_count_and_labels() {
        let turns = BTreeMap::from([(1, 10)]);
        let props: Vec<_> = pair(0, 1, 3, "x.", "not x.").into();
        let dps = build_datapoints(&turns, &props, Role::Answerer).unwrap();
        assert_eq!(dps.len(), 22);
        for d in dps.iter().filter(|d| d.prop_id == 0) {
            let expected = if d.turn < 3 { Visibility::Private } else { Visibility::Shared };
            assert_eq!(d.gold.visibility, expected);
        }
        assert!(build_datapoints(&turns, &[], Role::Answerer).unwrap().is_empty());
        let stray = [prop(0, 9, 1, Truth::TrueToA)];
        assert!(matches!(
            build_datapoints(&turns, &stray, Role::Answerer),
            Err(Error::Consistency(_))
        ));
    }

    fn caption_pool(n: u64) -> Vec<Proposition> {
        (0..n)
            .flat_map(|i| pair(2 * i, i, 0, "one can see a cat.", "one cannot see a cat."))
            .chain(pair(10_000, 1, 2, "x.", "not x."))
            .collect()
    }

    #[test]
    fn downsample_extremes() {
        let pool = caption_pool(20);
        let none = downsample_captions(&pool, 0.0, 1).unwrap();
        assert_eq!(none.len(), 2);
        assert!(none.iter().all(|p| !p.is_caption()));
        assert_eq!(downsample_captions(&pool, 1.0, 1).unwrap(), pool);
        assert!(downsample_captions(&pool, 1.5, 1).is_err());
    }

    #[test]
    fn downsample_count_matches_shuffled_prefix() {
        let pool = caption_pool(1000);
        let kept = downsample_captions(&pool, 0.15, 7).unwrap();
        let kept_pairs: BTreeSet<u64> = kept.iter().filter(|p| p.is_caption()).map(|p| p.pair_id).collect();
        assert_eq!(kept_pairs.len(), 150);
        // oracle: shuffle the sorted pair list with the same seed, take the prefix
        let mut all: Vec<(u64, u64)> = (0..1000).map(|i| (i, 2 * i)).collect();
        all.shuffle(&mut ChaCha8Rng::seed_from_u64(7));
        let expected: BTreeSet<u64> = all[..150].iter().map(|p| p.1).collect();
        assert_eq!(kept_pairs, expected);
        assert_eq!(kept.iter().filter(|p| p.is_caption()).count(), 300);
        assert_eq!(downsample_captions(&pool, 0.15, 7).unwrap(), kept);
    }

    fn occurrences(surface: &str, truth: Truth, n: usize, first_id: u64) -> Vec<Proposition> {
        (0..n)
            .map(|i| {
                let mut p = prop(first_id + i as u64, first_id + i as u64, 1, truth);
                p.surface = crate::propgen::tokenize(surface);
                p
            })
            .collect()
    }

    #[test]
    fn balance_takes_the_minimum() {
        let mut pool = occurrences("there is a zebra.", Truth::TrueToA, 5, 0);
        pool.extend(occurrences("there is a zebra.", Truth::FalseToA, 3, 100));
        pool.extend(occurrences("lonely.", Truth::TrueToA, 4, 200));
        let out = balance_truth(&pool, Some(1000), 3);
        assert_eq!(out.len(), 6);
        assert_eq!(out.iter().filter(|p| p.truth == Truth::TrueToA).count(), 3);
    }

    #[test]
    fn balance_caps_each_side() {
        let mut pool = occurrences("it is sunny.", Truth::TrueToA, 4000, 0);
        pool.extend(occurrences("it is sunny.", Truth::FalseToA, 4000, 10_000));
        let out = balance_truth(&pool, Some(1000), 3);
        assert_eq!(out.len(), 2000);
        let stats = compute_stats(&out, &[], None);
        assert_eq!(stats.truth_proportions["true_to_a"], 50.0);
        assert_eq!(balance_truth(&pool, Some(1000), 3), out);
        assert_eq!(balance_truth(&pool, None, 3).len(), 8000);
    }

    #[test]
    fn stats_basics() {
        let props: Vec<_> = pair(0, 1, 0, "one can see a cat.", "one cannot see a cat.").into();
        let turns = BTreeMap::from([(1, 10)]);
        let dps = build_datapoints(&turns, &props, Role::Answerer).unwrap();
        let s = compute_stats(&props, &dps, None);
        assert_eq!(s.avg_props_per_dialogue, 2.0);
        assert_eq!(s.dialogues, 1);
        assert_eq!(s.proposition_types, 2);
        assert_eq!(s.class_proportions["true_shared"] + s.class_proportions["false_shared"], 100.0);
        let total: f64 = s.class_proportions.values().sum();
        assert!((total - 100.0).abs() < 0.01);
    }

    #[test]
    fn dataset_file_errors() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("d.skds");
        write_dataset(&path, &[]).unwrap();
        assert!(read_dataset(&path).unwrap().is_empty());

        let turns = BTreeMap::from([(1, 10)]);
        let props: Vec<_> = pair(0, 1, 4, "x.", "not x.").into();
        let dps = build_datapoints(&turns, &props, Role::Questioner).unwrap();
        write_dataset(&path, &dps).unwrap();
        let bytes = std::fs::read(&path).unwrap();
        std::fs::write(&path, &bytes[..bytes.len() - 3]).unwrap();
        assert!(matches!(read_dataset(&path), Err(Error::Format(_))));
        let mut bad = bytes.clone();
        bad[0] = b'X';
        std::fs::write(&path, &bad).unwrap();
        assert!(matches!(read_dataset(&path), Err(Error::Format(_))));
        let mut bad = bytes;
        bad[4] = 9;
        std::fs::write(&path, &bad).unwrap();
        assert!(matches!(read_dataset(&path), Err(Error::Format(_))));
    }

    fn arb_datapoint() -> impl Strategy<Value = Datapoint> {
        (any::<u64>(), any::<bool>(), 0usize..=10, any::<u64>(), 0usize..4).prop_map(
            |(dialogue_id, q, turn, prop_id, c)| Datapoint {
                dialogue_id,
                role: if q { Role::Questioner } else { Role::Answerer },
                turn,
                prop_id,
                gold: ScoreClass::ALL[c],
            },
        )
    }

    proptest! {
        #[test]
        fn dataset_round_trip(dps in proptest::collection::vec(arb_datapoint(), 0..50)) {
            let dir = tempfile::tempdir().unwrap();
            let path = dir.path().join("d.skds");
            write_dataset(&path, &dps).unwrap();
            let first = std::fs::read(&path).unwrap();
            prop_assert_eq!(read_dataset(&path).unwrap(), dps.clone());
            write_dataset(&path, &dps).unwrap();
            prop_assert_eq!(std::fs::read(&path).unwrap(), first);
        }

        #[test]
        fn balance_invariant(
            counts in proptest::collection::vec((0usize..6, 0usize..6), 1..8),
            cap in 1usize..5,
            seed in any::<u64>(),
        ) {
            let mut pool = Vec::new();
            let mut id = 0;
            for (s, (t, f)) in counts.iter().enumerate() {
                let surface = format!("thing {s}.");
                pool.extend(occurrences(&surface, Truth::TrueToA, *t, id));
                id += 100;
                pool.extend(occurrences(&surface, Truth::FalseToA, *f, id));
                id += 100;
            }
            let out = balance_truth(&pool, Some(cap), seed);
            for (s, (t, f)) in counts.iter().enumerate() {
                let surface = crate::propgen::tokenize(&format!("thing {s}."));
                let kt = out.iter().filter(|p| p.surface == surface && p.truth == Truth::TrueToA).count();
                let kf = out.iter().filter(|p| p.surface == surface && p.truth == Truth::FalseToA).count();
                prop_assert_eq!(kt, kf);
                prop_assert_eq!(kt, (*t).min(*f).min(cap));
            }
        }

        #[test]
        fn downsampling_keeps_pairs_whole(n in 0u64..60, rate in 0.0f64..=1.0, seed in any::<u64>()) {
            let pool = caption_pool(n);
            let out = downsample_captions(&pool, rate, seed).unwrap();
            let mut per_pair: BTreeMap<u64, usize> = BTreeMap::new();
            for p in out.iter().filter(|p| p.is_caption()) {
                *per_pair.entry(p.pair_id).or_default() += 1;
            }
            prop_assert!(per_pair.values().all(|c| *c == 2));
            prop_assert_eq!(per_pair.len(), (rate * n as f64).round() as usize);
        }
    }
}
