//! The two-layer probing classifier and its training loop.
//!
//! `v = softmax(W2 · dropout(sigmoid(W1 [r; z] + b1)) + b2)`, trained with Adam
//! on mean cross-entropy. All arithmetic is in f64.

use std::collections::{BTreeMap, HashMap};
use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;
use std::str::FromStr;

use ndarray::{Array1, Array2, ArrayView2, Axis};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::dataset::Datapoint;
use crate::embed::{RepKey, VectorStore};
use crate::error::{Error, Result};
use crate::model::{project_class, Proposition, Role, TaskVariant};

pub const HIDDEN: usize = 1024;
pub const DROPOUT: f64 = 0.1;
pub const CHECKPOINT_MAGIC: &[u8; 4] = b"SKPM";
pub const CHECKPOINT_VERSION: u16 = 1;

const PREDICT_CHUNK: usize = 2048;

/// Trainable parameters, also used for gradients and Adam moments.
#[derive(Debug, Clone, PartialEq)]
pub struct Params {
    pub w1: Array2<f64>,
    pub b1: Array1<f64>,
    pub w2: Array2<f64>,
    pub b2: Array1<f64>,
}

impl Params {
    pub fn zeros(hidden: usize, in_dim: usize, n_labels: usize) -> Self {
        Params {
            w1: Array2::zeros((hidden, in_dim)),
            b1: Array1::zeros(hidden),
            w2: Array2::zeros((n_labels, hidden)),
            b2: Array1::zeros(n_labels),
        }
    }

    pub fn zeros_like(&self) -> Self {
        Params::zeros(self.w1.nrows(), self.w1.ncols(), self.w2.nrows())
    }

    pub fn len(&self) -> usize {
        self.w1.len() + self.b1.len() + self.w2.len() + self.b2.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Parameter arrays in declaration order.
    pub fn slices(&self) -> [&[f64]; 4] {
        [
            self.w1.as_slice().expect("standard layout"),
            self.b1.as_slice().expect("standard layout"),
            self.w2.as_slice().expect("standard layout"),
            self.b2.as_slice().expect("standard layout"),
        ]
    }

    pub fn slices_mut(&mut self) -> [&mut [f64]; 4] {
        [
            self.w1.as_slice_mut().expect("standard layout"),
            self.b1.as_slice_mut().expect("standard layout"),
            self.w2.as_slice_mut().expect("standard layout"),
            self.b2.as_slice_mut().expect("standard layout"),
        ]
    }

    pub fn norm(&self) -> f64 {
        self.slices()
            .iter()
            .flat_map(|s| s.iter())
            .map(|x| x * x)
            .sum::<f64>()
            .sqrt()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ProbeModel {
    pub task: TaskVariant,
    pub role: Role,
    pub r_dim: usize,
    pub z_dim: usize,
    pub params: Params,
}

/// Intermediates of a batch forward pass.
#[derive(Debug, Clone)]
pub struct ForwardCache {
    /// sigmoid activations before dropout
    pub hidden: Array2<f64>,
    /// activations after dropout, fed to the output layer
    pub dropped: Array2<f64>,
    pub mask: Option<Array2<f64>>,
    pub logits: Array2<f64>,
}

impl ForwardCache {
    pub fn probabilities(&self) -> Array2<f64> {
        let mut p = self.logits.clone();
        for mut row in p.rows_mut() {
            let max = row.fold(f64::NEG_INFINITY, |m, &x| m.max(x));
            row.mapv_inplace(|x| (x - max).exp());
            let sum = row.sum();
            row /= sum;
        }
        p
    }
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

fn log_sum_exp(row: ndarray::ArrayView1<f64>) -> f64 {
    let max = row.fold(f64::NEG_INFINITY, |m, &x| m.max(x));
    max + row.iter().map(|x| (x - max).exp()).sum::<f64>().ln()
}

/// Mean of `-log softmax(logits)[gold]` over the rows.
pub fn cross_entropy(logits: &Array2<f64>, golds: &[usize]) -> f64 {
    let total: f64 = logits
        .rows()
        .into_iter()
        .zip(golds)
        .map(|(row, &g)| log_sum_exp(row) - row[g])
        .sum();
    total / golds.len() as f64
}

/// Inverted-dropout mask: zero with probability `rate`, else `1 / (1 - rate)`.
pub fn dropout_mask(rows: usize, cols: usize, rate: f64, rng: &mut impl Rng) -> Array2<f64> {
    let keep = 1.0 / (1.0 - rate);
    Array2::from_shape_simple_fn((rows, cols), || if rng.gen::<f64>() < rate { 0.0 } else { keep })
}

impl ProbeModel {
    /// Weights and biases uniform in `±1/sqrt(fan_in)`.
    pub fn new(
        task: TaskVariant,
        role: Role,
        hidden: usize,
        r_dim: usize,
        z_dim: usize,
        seed: u64,
    ) -> Result<Self> {
        if hidden == 0 || r_dim + z_dim == 0 {
            return Err(Error::Config("probe dimensions must be positive".into()));
        }
        if !task.allowed_for(role) {
            return Err(Error::Config(format!(
                "task {} is not applicable to the {} role",
                task.name(),
                role.tag()
            )));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let in_dim = r_dim + z_dim;
        let n = task.n_labels();
        let mut params = Params::zeros(hidden, in_dim, n);
        let a1 = 1.0 / (in_dim as f64).sqrt();
        let a2 = 1.0 / (hidden as f64).sqrt();
        for (slice, a) in params.slices_mut().into_iter().zip([a1, a1, a2, a2]) {
            slice.iter_mut().for_each(|x| *x = rng.gen_range(-a..a));
        }
        Ok(ProbeModel {
            task,
            role,
            r_dim,
            z_dim,
            params,
        })
    }

    pub fn hidden(&self) -> usize {
        self.params.w1.nrows()
    }

    pub fn n_labels(&self) -> usize {
        self.params.w2.nrows()
    }

    pub fn param_count(&self) -> usize {
        self.params.len()
    }

    /// Batch forward pass over rows `[r; z]`; `mask` applies dropout.
    pub fn forward(&self, x: ArrayView2<f64>, mask: Option<Array2<f64>>) -> Result<ForwardCache> {
        if x.ncols() != self.r_dim + self.z_dim {
            return Err(Error::Shape(format!(
                "input width {} does not match {} + {}",
                x.ncols(),
                self.r_dim,
                self.z_dim
            )));
        }
        let p = &self.params;
        let mut hidden = x.dot(&p.w1.t());
        hidden += &p.b1;
        hidden.mapv_inplace(sigmoid);
        let dropped = match &mask {
            Some(m) => {
                if m.dim() != hidden.dim() {
                    return Err(Error::Shape("dropout mask shape".into()));
                }
                &hidden * m
            }
            None => hidden.clone(),
        };
        let mut logits = dropped.dot(&p.w2.t());
        logits += &p.b2;
        Ok(ForwardCache {
            hidden,
            dropped,
            mask,
            logits,
        })
    }

    /// Class probabilities for a single `(r, z)` pair, dropout off.
    pub fn probabilities(&self, r: &[f64], z: &[f64]) -> Result<Vec<f64>> {
        if r.len() != self.r_dim || z.len() != self.z_dim {
            return Err(Error::Shape(format!(
                "expected r/z of {}/{}, got {}/{}",
                self.r_dim,
                self.z_dim,
                r.len(),
                z.len()
            )));
        }
        let x = Array2::from_shape_vec((1, r.len() + z.len()), r.iter().chain(z).copied().collect())
            .expect("row vector");
        Ok(self.forward(x.view(), None)?.probabilities().row(0).to_vec())
    }

    /// Gradients of the mean cross-entropy of a forward pass.
    pub fn backward(&self, x: ArrayView2<f64>, cache: &ForwardCache, golds: &[usize]) -> Result<Params> {
        let b = golds.len();
        if b == 0 || cache.logits.nrows() != b || x.nrows() != b {
            return Err(Error::Shape("forward cache does not match the batch".into()));
        }
        let mut dlogits = cache.probabilities();
        for (mut row, &g) in dlogits.rows_mut().into_iter().zip(golds) {
            if g >= row.len() {
                return Err(Error::Shape(format!("label {g} out of range")));
            }
            row[g] -= 1.0;
        }
        dlogits /= b as f64;
        let p = &self.params;
        let w2 = dlogits.t().dot(&cache.dropped);
        let b2 = dlogits.sum_axis(Axis(0));
        let mut dh = dlogits.dot(&p.w2);
        if let Some(m) = &cache.mask {
            dh *= m;
        }
        ndarray::Zip::from(&mut dh)
            .and(&cache.hidden)
            .for_each(|d, &h| *d *= h * (1.0 - h));
        let w1 = dh.t().dot(&x);
        let b1 = dh.sum_axis(Axis(0));
        Ok(Params { w1, b1, w2, b2 })
    }
}

/// Scales `grads` so the global L2 norm is at most `max_norm`; returns the norm before clipping.
pub fn clip_gradients(grads: &mut Params, max_norm: f64) -> f64 {
    let norm = grads.norm();
    if norm > max_norm {
        let scale = max_norm / norm;
        for s in grads.slices_mut() {
            s.iter_mut().for_each(|g| *g *= scale);
        }
    }
    norm
}

#[derive(Debug, Clone)]
pub struct AdamState {
    pub m: Params,
    pub v: Params,
    pub step: u64,
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl AdamState {
    pub fn new(like: &Params, learning_rate: f64) -> Self {
        AdamState {
            m: like.zeros_like(),
            v: like.zeros_like(),
            step: 0,
            learning_rate,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }

    pub fn update(&mut self, params: &mut Params, grads: &Params) {
        self.step += 1;
        let t = self.step as i32;
        let (b1, b2) = (self.beta1, self.beta2);
        let c1 = 1.0 - b1.powi(t);
        let c2 = 1.0 - b2.powi(t);
        let (lr, eps) = (self.learning_rate, self.epsilon);
        let ps = params.slices_mut();
        let ms = self.m.slices_mut();
        let vs = self.v.slices_mut();
        for (((p, m), v), g) in ps.into_iter().zip(ms).zip(vs).zip(grads.slices()) {
            for i in 0..p.len() {
                m[i] = b1 * m[i] + (1.0 - b1) * g[i];
                v[i] = b2 * v[i] + (1.0 - b2) * g[i] * g[i];
                let mh = m[i] / c1;
                let vh = v[i] / c2;
                p[i] -= lr * mh / (vh.sqrt() + eps);
            }
        }
    }
}

/// Substitution applied to the representation channel.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Control {
    #[default]
    None,
    #[serde(rename = "random")]
    RandomR,
    #[serde(rename = "null")]
    NullR,
}

impl Control {
    pub fn name(self) -> &'static str {
        match self {
            Control::None => "none",
            Control::RandomR => "random",
            Control::NullR => "null",
        }
    }
}

impl FromStr for Control {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "none" => Ok(Control::None),
            "random" => Ok(Control::RandomR),
            "null" => Ok(Control::NullR),
            other => Err(Error::Config(format!("unknown control {other:?}"))),
        }
    }
}

/// Writes the (possibly substituted) representation into `out`.
pub fn apply_control(r: &[f64], control: Control, rng: &mut impl Rng, out: &mut [f64]) {
    match control {
        Control::None => out.copy_from_slice(r),
        Control::NullR => out.fill(0.0),
        Control::RandomR => out.iter_mut().for_each(|x| *x = rng.gen_range(-1.0..=1.0)),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub task: TaskVariant,
    pub role: Role,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub clip_norm: f64,
    pub max_epochs: usize,
    pub seed: u64,
    pub hidden: usize,
    pub dropout: f64,
    pub control: Control,
    pub control_at_eval: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            task: TaskVariant::TFxPS,
            role: Role::Answerer,
            batch_size: 512,
            learning_rate: 0.001,
            clip_norm: 1.0,
            max_epochs: 30,
            seed: 54321,
            hidden: HIDDEN,
            dropout: DROPOUT,
            control: Control::None,
            control_at_eval: false,
        }
    }
}

impl TrainConfig {
    pub fn new(task: TaskVariant, role: Role) -> Self {
        TrainConfig {
            task,
            role,
            ..Default::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(m.to_string()));
        if !self.task.allowed_for(self.role) {
            return Err(Error::Config(format!(
                "task {} is not applicable to the {} role",
                self.task.name(),
                self.role.tag()
            )));
        }
        if self.batch_size == 0 || self.max_epochs == 0 || self.hidden == 0 {
            return bad("batch size, epochs and hidden size must be positive");
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return bad("learning rate must be positive");
        }
        if !(self.clip_norm > 0.0) {
            return bad("clip norm must be positive");
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return bad("dropout must lie in [0, 1)");
        }
        Ok(())
    }

    /// Control used when scoring held-out data.
    pub fn eval_control(&self) -> Control {
        if self.control_at_eval {
            self.control
        } else {
            Control::None
        }
    }
}

/// Datapoints resolved against the vector stores. Distinct vectors are kept
/// once; `rows` indexes into them.
#[derive(Debug, Clone)]
pub struct ProbeData {
    pub reps: Array2<f64>,
    pub embs: Array2<f64>,
    pub rows: Vec<(usize, usize)>,
    pub labels: Vec<usize>,
}

fn widen(v: &[f32]) -> impl Iterator<Item = f64> + '_ {
    v.iter().map(|&x| f64::from(x))
}

impl ProbeData {
    pub fn resolve(
        datapoints: &[Datapoint],
        props: &[Proposition],
        reps: &VectorStore,
        embs: &VectorStore,
        task: TaskVariant,
    ) -> Result<Self> {
        let by_id: HashMap<u64, &Proposition> = props.iter().map(|p| (p.id, p)).collect();
        let mut rep_index: HashMap<String, usize> = HashMap::new();
        let mut emb_index: HashMap<String, usize> = HashMap::new();
        let mut rep_data: Vec<f64> = Vec::new();
        let mut emb_data: Vec<f64> = Vec::new();
        let mut rows = Vec::with_capacity(datapoints.len());
        let mut labels = Vec::with_capacity(datapoints.len());
        for dp in datapoints {
            let prop = by_id
                .get(&dp.prop_id)
                .ok_or_else(|| Error::Consistency(format!("datapoint refers to unknown proposition {}", dp.prop_id)))?;
            let rk = RepKey::rep(dp.dialogue_id, dp.role, dp.turn).to_string();
            let next = rep_index.len();
            let ri = match rep_index.get(&rk) {
                Some(&i) => i,
                None => {
                    rep_data.extend(widen(reps.lookup(&rk)?));
                    rep_index.insert(rk, next);
                    next
                }
            };
            let zk = RepKey::surface(&prop.surface).to_string();
            let next = emb_index.len();
            let zi = match emb_index.get(&zk) {
                Some(&i) => i,
                None => {
                    emb_data.extend(widen(embs.lookup(&zk)?));
                    emb_index.insert(zk, next);
                    next
                }
            };
            rows.push((ri, zi));
            labels.push(project_class(dp.gold, task));
        }
        Ok(ProbeData {
            reps: Array2::from_shape_vec((rep_index.len(), reps.dim()), rep_data).expect("rep matrix"),
            embs: Array2::from_shape_vec((emb_index.len(), embs.dim()), emb_data).expect("emb matrix"),
            rows,
            labels,
        })
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn r_dim(&self) -> usize {
        self.reps.ncols()
    }

    pub fn z_dim(&self) -> usize {
        self.embs.ncols()
    }

    /// Input rows `[r; z]` for the selected examples.
    pub fn batch(&self, idx: &[usize], control: Control, rng: &mut impl Rng) -> Array2<f64> {
        let rd = self.r_dim();
        let mut x = Array2::zeros((idx.len(), rd + self.z_dim()));
        for (mut row, &i) in x.rows_mut().into_iter().zip(idx) {
            let (ri, zi) = self.rows[i];
            let row = row.as_slice_mut().expect("standard layout");
            let r = self.reps.row(ri);
            apply_control(r.as_slice().expect("standard layout"), control, rng, &mut row[..rd]);
            row[rd..].copy_from_slice(self.embs.row(zi).as_slice().expect("standard layout"));
        }
        x
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub train_accuracy: f64,
    pub valid_accuracy: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainHistory {
    pub param_count: usize,
    pub best_epoch: usize,
    pub best_valid_accuracy: f64,
    pub epochs: Vec<EpochRecord>,
}

fn argmax(row: ndarray::ArrayView1<f64>) -> usize {
    let mut best = 0;
    for (i, &x) in row.iter().enumerate() {
        if x > row[best] {
            best = i;
        }
    }
    best
}

/// Seed for evaluation-time random controls.
fn eval_seed(seed: u64) -> u64 {
    seed ^ 0x5eed_e7a1
}

/// Argmax predictions, dropout off; ties go to the lowest label.
pub fn predict(model: &ProbeModel, data: &ProbeData, control: Control, seed: u64) -> Result<Vec<usize>> {
    check_dims(model, data)?;
    let mut rng = ChaCha8Rng::seed_from_u64(eval_seed(seed));
    let idx: Vec<usize> = (0..data.len()).collect();
    let mut out = Vec::with_capacity(data.len());
    for chunk in idx.chunks(PREDICT_CHUNK) {
        let x = data.batch(chunk, control, &mut rng);
        let cache = model.forward(x.view(), None)?;
        out.extend(cache.logits.rows().into_iter().map(argmax));
    }
    Ok(out)
}

fn check_dims(model: &ProbeModel, data: &ProbeData) -> Result<()> {
    if data.r_dim() != model.r_dim {
        return Err(Error::Dimension {
            expected: model.r_dim,
            found: data.r_dim(),
        });
    }
    if data.z_dim() != model.z_dim {
        return Err(Error::Dimension {
            expected: model.z_dim,
            found: data.z_dim(),
        });
    }
    Ok(())
}

fn accuracy_of(preds: &[usize], labels: &[usize]) -> f64 {
    let hits = preds.iter().zip(labels).filter(|(p, g)| p == g).count();
    hits as f64 / labels.len() as f64
}

/// Trains for `max_epochs` and returns the epoch snapshot with the best
/// validation accuracy (earliest on ties).
pub fn train(train: &ProbeData, valid: &ProbeData, cfg: &TrainConfig) -> Result<(ProbeModel, TrainHistory)> {
    cfg.validate()?;
    if train.is_empty() {
        return Err(Error::EmptySubset("training set".into()));
    }
    if valid.is_empty() {
        return Err(Error::EmptySubset("validation set".into()));
    }
    let mut model = ProbeModel::new(cfg.task, cfg.role, cfg.hidden, train.r_dim(), train.z_dim(), cfg.seed)?;
    check_dims(&model, valid)?;
    if let Some(&l) = train.labels.iter().chain(&valid.labels).find(|&&l| l >= model.n_labels()) {
        return Err(Error::Shape(format!("label {l} out of range")));
    }
    let mut adam = AdamState::new(&model.params, cfg.learning_rate);
    let mut best: Option<(usize, f64, Params)> = None;
    let mut epochs = Vec::with_capacity(cfg.max_epochs);
    let mut order: Vec<usize> = (0..train.len()).collect();

    for epoch in 1..=cfg.max_epochs {
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ epoch as u64);
        order.sort_unstable();
        order.shuffle(&mut rng);
        let mut loss_sum = 0.0;
        let mut hits = 0usize;
        for batch in order.chunks(cfg.batch_size) {
            let x = train.batch(batch, cfg.control, &mut rng);
            let golds: Vec<usize> = batch.iter().map(|&i| train.labels[i]).collect();
            let mask = (cfg.dropout > 0.0).then(|| dropout_mask(batch.len(), cfg.hidden, cfg.dropout, &mut rng));
            let cache = model.forward(x.view(), mask)?;
            let loss = cross_entropy(&cache.logits, &golds);
            if !loss.is_finite() {
                return Err(Error::Numerical(format!("non-finite loss in epoch {epoch}")));
            }
            loss_sum += loss * batch.len() as f64;
            hits += cache
                .logits
                .rows()
                .into_iter()
                .zip(&golds)
                .filter(|(row, &g)| argmax(*row) == g)
                .count();
            let mut grads = model.backward(x.view(), &cache, &golds)?;
            clip_gradients(&mut grads, cfg.clip_norm);
            adam.update(&mut model.params, &grads);
        }
        let preds = predict(&model, valid, cfg.eval_control(), cfg.seed)?;
        let valid_accuracy = accuracy_of(&preds, &valid.labels);
        let record = EpochRecord {
            epoch,
            train_loss: loss_sum / train.len() as f64,
            train_accuracy: hits as f64 / train.len() as f64,
            valid_accuracy,
        };
        log::info!(
            "epoch {epoch}: loss {:.4} train acc {:.4} valid acc {:.4}",
            record.train_loss,
            record.train_accuracy,
            record.valid_accuracy
        );
        epochs.push(record);
        if best.as_ref().is_none_or(|(_, acc, _)| valid_accuracy > *acc) {
            best = Some((epoch, valid_accuracy, model.params.clone()));
        }
    }
    let (best_epoch, best_valid_accuracy, params) = best.expect("at least one epoch");
    model.params = params;
    let history = TrainHistory {
        param_count: model.param_count(),
        best_epoch,
        best_valid_accuracy,
        epochs,
    };
    Ok((model, history))
}

fn put_u32(w: &mut impl Write, x: usize) -> std::io::Result<()> {
    w.write_all(&(x as u32).to_le_bytes())
}

pub fn save_checkpoint(model: &ProbeModel, path: &Path) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    let res: std::io::Result<()> = (|| {
        w.write_all(CHECKPOINT_MAGIC)?;
        w.write_all(&CHECKPOINT_VERSION.to_le_bytes())?;
        w.write_all(&[model.n_labels() as u8, model.task.code(), model.role.code()])?;
        put_u32(&mut w, model.hidden())?;
        put_u32(&mut w, model.r_dim)?;
        put_u32(&mut w, model.z_dim)?;
        for s in model.params.slices() {
            for x in s {
                w.write_all(&x.to_le_bytes())?;
            }
        }
        w.flush()
    })();
    res.map_err(|e| Error::io(path, e))
}

pub fn load_checkpoint(path: &Path) -> Result<ProbeModel> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut r = BufReader::new(file);
    let fmt = |m: &str| Error::Format(format!("{}: {m}", path.display()));
    let mut read = |buf: &mut [u8]| r.read_exact(buf).map_err(|_| fmt("truncated checkpoint"));
    let mut head = [0u8; 21];
    read(&mut head)?;
    if &head[..4] != CHECKPOINT_MAGIC {
        return Err(fmt("not an SKPM file"));
    }
    let version = u16::from_le_bytes([head[4], head[5]]);
    if version != CHECKPOINT_VERSION {
        return Err(fmt(&format!("unsupported checkpoint version {version}")));
    }
    let n_labels = head[6] as usize;
    let task = TaskVariant::from_code(head[7]).ok_or_else(|| fmt("bad task code"))?;
    let role = Role::from_code(head[8]).ok_or_else(|| fmt("bad role code"))?;
    if task.n_labels() != n_labels {
        return Err(fmt("label count does not match task"));
    }
    let u32_at = |o: usize| u32::from_le_bytes([head[o], head[o + 1], head[o + 2], head[o + 3]]) as usize;
    let (hidden, r_dim, z_dim) = (u32_at(9), u32_at(13), u32_at(17));
    let mut params = Params::zeros(hidden, r_dim + z_dim, n_labels);
    let mut buf = [0u8; 8];
    for s in params.slices_mut() {
        for x in s.iter_mut() {
            read(&mut buf)?;
            *x = f64::from_le_bytes(buf);
        }
    }
    let mut extra = [0u8; 1];
    if r.read(&mut extra).map_err(|e| Error::io(path, e))? != 0 {
        return Err(fmt("trailing bytes after parameters"));
    }
    Ok(ProbeModel {
        task,
        role,
        r_dim,
        z_dim,
        params,
    })
}

/// Parameter counts of the default architecture per label count.
pub fn default_param_counts() -> BTreeMap<usize, usize> {
    [2, 3, 4]
        .into_iter()
        .map(|n| {
            let in_dim = crate::embed::REP_DIM + crate::embed::PROP_DIM;
            (n, HIDDEN * in_dim + HIDDEN + n * HIDDEN + n)
        })
        .collect()
}
