//! Fixed-dimension vector stores for dialogue representations and proposition
//! embeddings, plus a deterministic synthetic embedder.
//!
//! SKVE layout, little-endian: magic `SKVE`, `u16` version, `u32` dim, `u64`
//! count, then per record `u32` key length, UTF-8 key, `dim` x `f32`.
//! Records are written in key order.

use std::collections::BTreeMap;
use std::fmt;
use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{Dialogue, Role};

pub const STORE_MAGIC: &[u8; 4] = b"SKVE";
pub const STORE_VERSION: u16 = 1;

pub const REP_DIM: usize = 512;
pub const PROP_DIM: usize = 768;

#[derive(Debug, Clone, PartialEq)]
pub struct VectorStore {
    dim: usize,
    entries: BTreeMap<String, Vec<f32>>,
}

impl VectorStore {
    pub fn new(dim: usize) -> Result<Self> {
        if dim == 0 {
            return Err(Error::Config("vector dimension must be positive".into()));
        }
        Ok(VectorStore {
            dim,
            entries: BTreeMap::new(),
        })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn keys(&self) -> impl Iterator<Item = &str> {
        self.entries.keys().map(String::as_str)
    }

    /// Inserts a vector; rejects wrong lengths and duplicate keys.
    pub fn insert(&mut self, key: impl Into<String>, vector: Vec<f32>) -> Result<()> {
        let key = key.into();
        if vector.len() != self.dim {
            return Err(Error::Dimension {
                expected: self.dim,
                found: vector.len(),
            });
        }
        if self.entries.contains_key(&key) {
            return Err(Error::Format(format!("duplicate key {key}")));
        }
        self.entries.insert(key, vector);
        Ok(())
    }

    pub fn lookup(&self, key: &str) -> Result<&[f32]> {
        self.entries
            .get(key)
            .map(Vec::as_slice)
            .ok_or_else(|| Error::MissingKey(key.to_string()))
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        let file = File::create(path).map_err(|e| Error::io(path, e))?;
        let mut w = BufWriter::new(file);
        let io = |e| Error::io(path, e);
        w.write_all(STORE_MAGIC).map_err(io)?;
        w.write_all(&STORE_VERSION.to_le_bytes()).map_err(io)?;
        w.write_all(&(self.dim as u32).to_le_bytes()).map_err(io)?;
        w.write_all(&(self.entries.len() as u64).to_le_bytes()).map_err(io)?;
        for (key, vector) in &self.entries {
            w.write_all(&(key.len() as u32).to_le_bytes()).map_err(io)?;
            w.write_all(key.as_bytes()).map_err(io)?;
            for x in vector {
                w.write_all(&x.to_le_bytes()).map_err(io)?;
            }
        }
        w.flush().map_err(io)
    }

    /// Reads a store, checking the dimension when `expected_dim` is given.
    pub fn read(path: &Path, expected_dim: Option<usize>) -> Result<Self> {
        let file = File::open(path).map_err(|e| Error::io(path, e))?;
        let mut reader = StoreReader::new(BufReader::new(file))?;
        if let Some(d) = expected_dim {
            if reader.dim() != d {
                return Err(Error::Dimension {
                    expected: d,
                    found: reader.dim(),
                });
            }
        }
        let mut store = VectorStore::new(reader.dim())?;
        while let Some((key, vector)) = reader.next_record()? {
            store.insert(key, vector)?;
        }
        Ok(store)
    }
}

/// Record-by-record SKVE reader.
pub struct StoreReader<R> {
    inner: R,
    dim: usize,
    remaining: u64,
}

fn read_exact<R: Read>(r: &mut R, buf: &mut [u8], what: &str) -> Result<()> {
    r.read_exact(buf).map_err(|e| {
        if e.kind() == std::io::ErrorKind::UnexpectedEof {
            Error::Format(format!("truncated vector store while reading {what}"))
        } else {
            Error::Format(format!("reading {what}: {e}"))
        }
    })
}

impl<R: Read> StoreReader<R> {
    pub fn new(mut inner: R) -> Result<Self> {
        let mut magic = [0u8; 4];
        read_exact(&mut inner, &mut magic, "magic")?;
        if &magic != STORE_MAGIC {
            return Err(Error::Format("not an SKVE file".into()));
        }
        let mut v = [0u8; 2];
        read_exact(&mut inner, &mut v, "version")?;
        let version = u16::from_le_bytes(v);
        if version != STORE_VERSION {
            return Err(Error::Format(format!("unsupported SKVE version {version}")));
        }
        let mut d = [0u8; 4];
        read_exact(&mut inner, &mut d, "dim")?;
        let dim = u32::from_le_bytes(d) as usize;
        if dim == 0 {
            return Err(Error::Format("zero vector dimension".into()));
        }
        let mut c = [0u8; 8];
        read_exact(&mut inner, &mut c, "count")?;
        Ok(StoreReader {
            inner,
            dim,
            remaining: u64::from_le_bytes(c),
        })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn next_record(&mut self) -> Result<Option<(String, Vec<f32>)>> {
        if self.remaining == 0 {
            let mut extra = [0u8; 1];
            return match self.inner.read(&mut extra) {
                Ok(0) => Ok(None),
                Ok(_) => Err(Error::Format("trailing bytes after last record".into())),
                Err(e) => Err(Error::Format(e.to_string())),
            };
        }
        self.remaining -= 1;
        let mut len = [0u8; 4];
        read_exact(&mut self.inner, &mut len, "key length")?;
        let mut key = vec![0u8; u32::from_le_bytes(len) as usize];
        read_exact(&mut self.inner, &mut key, "key")?;
        let key = String::from_utf8(key).map_err(|_| Error::Format("key is not UTF-8".into()))?;
        let mut raw = vec![0u8; 4 * self.dim];
        read_exact(&mut self.inner, &mut raw, "vector")?;
        let vector = raw
            .chunks_exact(4)
            .map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]]))
            .collect();
        Ok(Some((key, vector)))
    }
}

/// Key of a stored vector.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum RepKey {
    /// `d{dialogue}/{A|Q}/t{turn}`
    Rep { dialogue_id: u64, role: Role, turn: usize },
    /// `s{hash:016x}`, hash of the proposition's token sequence
    Surface(u64),
}

impl RepKey {
    pub fn rep(dialogue_id: u64, role: Role, turn: usize) -> Self {
        RepKey::Rep {
            dialogue_id,
            role,
            turn,
        }
    }

    pub fn surface(tokens: &[String]) -> Self {
        RepKey::Surface(surface_hash(tokens))
    }
}

impl fmt::Display for RepKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            RepKey::Rep {
                dialogue_id,
                role,
                turn,
            } => write!(f, "d{dialogue_id}/{}/t{turn}", role.tag()),
            RepKey::Surface(h) => write!(f, "s{h:016x}"),
        }
    }
}

impl FromStr for RepKey {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let bad = || Error::Format(format!("malformed key {s:?}"));
        if let Some(hex) = s.strip_prefix('s') {
            if hex.len() != 16 {
                return Err(bad());
            }
            return u64::from_str_radix(hex, 16).map(RepKey::Surface).map_err(|_| bad());
        }
        let rest = s.strip_prefix('d').ok_or_else(bad)?;
        let mut parts = rest.split('/');
        let (Some(d), Some(r), Some(t), None) = (parts.next(), parts.next(), parts.next(), parts.next()) else {
            return Err(bad());
        };
        let role = match r {
            "A" => Role::Answerer,
            "Q" => Role::Questioner,
            _ => return Err(bad()),
        };
        Ok(RepKey::Rep {
            dialogue_id: d.parse().map_err(|_| bad())?,
            role,
            turn: t.strip_prefix('t').ok_or_else(bad)?.parse().map_err(|_| bad())?,
        })
    }
}

const FNV_OFFSET: u64 = 0xcbf2_9ce4_8422_2325;
const FNV_PRIME: u64 = 0x0000_0100_0000_01b3;

fn fnv1a(bytes: &[u8]) -> u64 {
    bytes
        .iter()
        .fold(FNV_OFFSET, |h, b| (h ^ u64::from(*b)).wrapping_mul(FNV_PRIME))
}

/// FNV-1a 64 over the tokens joined by single spaces.
pub fn surface_hash(tokens: &[String]) -> u64 {
    fnv1a(tokens.join(" ").as_bytes())
}

fn mix(mut z: u64) -> u64 {
    // splitmix64 finalizer
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

fn normalize(v: &mut [f64]) {
    let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    if norm > 0.0 {
        v.iter_mut().for_each(|x| *x /= norm);
    }
}

fn token_vector(token: &str, dim: usize, seed: u64) -> impl Iterator<Item = f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(mix(fnv1a(token.as_bytes()) ^ mix(seed)));
    (0..dim).map(move |_| rng.gen_range(-1.0..1.0))
}

/// Mean of per-token pseudo-random vectors, scaled to unit norm. Order-free;
/// no tokens gives the zero vector.
pub fn synth_embed<S: AsRef<str>>(tokens: &[S], dim: usize, seed: u64) -> Vec<f64> {
    let mut acc = vec![0.0; dim];
    for t in tokens {
        for (a, x) in acc.iter_mut().zip(token_vector(t.as_ref(), dim, seed)) {
            *a += x;
        }
    }
    if !tokens.is_empty() {
        let n = tokens.len() as f64;
        acc.iter_mut().for_each(|a| *a /= n);
    }
    normalize(&mut acc);
    acc
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SynthMode {
    /// `r_l` is the normalized sum of the turn embeddings up to `l`
    Cumulative,
    /// `r_l` carries no dialogue content
    Noise,
}

impl FromStr for SynthMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "cumulative" => Ok(SynthMode::Cumulative),
            "noise" => Ok(SynthMode::Noise),
            other => Err(Error::Config(format!("unknown synthetic mode {other:?}"))),
        }
    }
}

/// Synthetic representations `r_0..=r_T` for one dialogue and role.
pub fn synth_dialogue_reps(dialogue: &Dialogue, role: Role, dim: usize, seed: u64, mode: SynthMode) -> Vec<Vec<f64>> {
    let role_seed = seed ^ mix(u64::from(role.code()) + 1);
    match mode {
        SynthMode::Cumulative => {
            let mut acc = vec![0.0; dim];
            (0..=dialogue.last_turn())
                .map(|l| {
                    let e = synth_embed(&dialogue.turn_tokens(l), dim, seed);
                    acc.iter_mut().zip(&e).for_each(|(a, x)| *a += x);
                    let mut r = acc.clone();
                    normalize(&mut r);
                    r
                })
                .collect()
        }
        SynthMode::Noise => (0..=dialogue.last_turn())
            .map(|l| {
                let mut rng = ChaCha8Rng::seed_from_u64(mix(role_seed ^ mix(dialogue.id) ^ (l as u64)));
                let mut r: Vec<f64> = (0..dim).map(|_| rng.gen_range(-1.0..1.0)).collect();
                normalize(&mut r);
                r
            })
            .collect(),
    }
}

fn to_f32(v: Vec<f64>) -> Vec<f32> {
    v.into_iter().map(|x| x as f32).collect()
}

/// Representation store covering every turn of every dialogue for the given roles.
pub fn synth_rep_store(
    dialogues: &[Dialogue],
    roles: &[Role],
    dim: usize,
    seed: u64,
    mode: SynthMode,
) -> Result<VectorStore> {
    let mut store = VectorStore::new(dim)?;
    for d in dialogues {
        for &role in roles {
            for (l, r) in synth_dialogue_reps(d, role, dim, seed, mode).into_iter().enumerate() {
                store.insert(RepKey::rep(d.id, role, l).to_string(), to_f32(r))?;
            }
        }
    }
    Ok(store)
}

/// Proposition embedding store, one entry per distinct surface.
pub fn synth_prop_store<'a>(
    surfaces: impl IntoIterator<Item = &'a [String]>,
    dim: usize,
    seed: u64,
) -> Result<VectorStore> {
    let mut store = VectorStore::new(dim)?;
    for s in surfaces {
        let key = RepKey::surface(s).to_string();
        if store.entries.contains_key(&key) {
            continue;
        }
        store.insert(key, to_f32(synth_embed(s, dim, seed)))?;
    }
    Ok(store)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::Split;
    use crate::propgen::tokenize;
    use proptest::prelude::*;

    #[test]
    fn keys_round_trip() {
        let k = RepKey::rep(12, Role::Questioner, 7);
        assert_eq!(k.to_string(), "d12/Q/t7");
        assert_eq!("d12/Q/t7".parse::<RepKey>().unwrap(), k);
        let s = RepKey::surface(&tokenize("it is sunny."));
        assert_eq!(s.to_string().parse::<RepKey>().unwrap(), s);
        assert!("d12/X/t7".parse::<RepKey>().is_err());
        assert!("d12/A".parse::<RepKey>().is_err());
    }

    #[test]
    fn lookup_missing_and_wrong_role() {
        let mut store = VectorStore::new(2).unwrap();
        store.insert(RepKey::rep(1, Role::Answerer, 0).to_string(), vec![1.0, 2.0]).unwrap();
        assert_eq!(store.lookup("d1/A/t0").unwrap(), &[1.0, 2.0]);
        let err = store.lookup(&RepKey::rep(1, Role::Questioner, 0).to_string()).unwrap_err();
        assert!(matches!(err, Error::MissingKey(ref k) if k == "d1/Q/t0"));
        assert!(store.insert("x", vec![1.0]).is_err());
        assert!(store.insert("d1/A/t0", vec![1.0, 1.0]).is_err());
    }

    #[test]
    fn store_file_checks() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("v.skve");
        VectorStore::new(512).unwrap().write(&path).unwrap();
        assert!(VectorStore::read(&path, Some(512)).unwrap().is_empty());
        assert!(matches!(
            VectorStore::read(&path, Some(768)),
            Err(Error::Dimension { expected: 768, found: 512 })
        ));

        let mut store = VectorStore::new(3).unwrap();
        store.insert("a", vec![1.0, 2.0, 3.0]).unwrap();
        store.write(&path).unwrap();
        let bytes = std::fs::read(&path).unwrap();
        std::fs::write(&path, &bytes[..bytes.len() - 1]).unwrap();
        assert!(matches!(VectorStore::read(&path, None), Err(Error::Format(_))));

        // duplicate keys are rejected on read
        let mut dup = bytes[..10].to_vec();
        dup.extend(2u64.to_le_bytes());
        dup.extend(&bytes[18..]);
        dup.extend(&bytes[18..]);
        std::fs::write(&path, &dup).unwrap();
        assert!(matches!(VectorStore::read(&path, None), Err(Error::Format(_))));
    }

    #[test]
    fn synth_embed_properties() {
        let a = synth_embed(&tokenize("there are no people."), 64, 5);
        let b = synth_embed(&tokenize("people no are there ."), 64, 5);
        assert_eq!(a, b);
        let norm = a.iter().map(|x| x * x).sum::<f64>().sqrt();
        assert!((norm - 1.0).abs() < 1e-6);
        assert_ne!(a, synth_embed(&tokenize("there are no people."), 64, 6));
        assert!(synth_embed::<String>(&[], 8, 1).iter().all(|x| *x == 0.0));
    }

    fn dialogue() -> Dialogue {
        Dialogue::new(
            4,
            4,
            tokenize("a dog on grass."),
            vec![
                (tokenize("is it sunny?"), tokenize("yes.")),
                (tokenize("any people?"), tokenize("no.")),
            ],
            Split::Train,
        )
        .unwrap()
    }

    #[test]
    fn cumulative_reps_change_every_turn() {
        let reps = synth_dialogue_reps(&dialogue(), Role::Answerer, 32, 1, SynthMode::Cumulative);
        assert_eq!(reps.len(), 3);
        assert_ne!(reps[0], reps[1]);
        assert_ne!(reps[1], reps[2]);
    }

    #[test]
    fn noise_reps_are_reproducible() {
        let a = synth_dialogue_reps(&dialogue(), Role::Answerer, 32, 9, SynthMode::Noise);
        let b = synth_dialogue_reps(&dialogue(), Role::Answerer, 32, 9, SynthMode::Noise);
        assert_eq!(a, b);
        assert_ne!(a[0], a[1]);
    }

    proptest! {
        #[test]
        fn store_round_trip_is_bit_exact(
            vectors in proptest::collection::vec(proptest::collection::vec(any::<f32>(), 4), 0..20)
        ) {
            let mut store = VectorStore::new(4).unwrap();
            for (i, v) in vectors.iter().enumerate() {
                store.insert(format!("k{i}"), v.clone()).unwrap();
            }
            let dir = tempfile::tempdir().unwrap();
            let path = dir.path().join("v.skve");
            store.write(&path).unwrap();
            let back = VectorStore::read(&path, Some(4)).unwrap();
            prop_assert_eq!(back.len(), vectors.len());
            for (i, v) in vectors.iter().enumerate() {
                let got = back.lookup(&format!("k{i}")).unwrap();
                let same = got.iter().zip(v).all(|(a, b)| a.to_bits() == b.to_bits());
                prop_assert!(same);
            }
        }
    }
}
