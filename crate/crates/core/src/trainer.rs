//! Desk-scale differentiable models with explicit parameters and gradients.
//!
//! Every model here is a tiny feed-forward network over fixed feature
//! vectors: a frozen extractor stub stands in for the CNN backbone, and the
//! trainable heads reproduce the loss wiring of each team recipe. Gradients
//! are derived by hand and checked against central finite differences in the
//! tests, so the training loops exercise the [`crate::losses`] and
//! [`crate::strategies`] machinery end to end without any autograd runtime.
//!
//! The per-sample forward/backward passes run through [`crate::par`] and are
//! folded sequentially in batch order, so the parallel and sequential builds
//! produce bit-identical parameter trajectories.

use std::collections::{BTreeMap, BTreeSet};
use std::io::{BufRead, Write};
use std::path::Path;

use rand::Rng;
use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::dataset::{Label, SampleId, SampleRecord, Split};
use crate::losses::{
    self, Domain, CHENYIFAN_WEIGHTS, HEXIANHUA_WEIGHTS, IONETWORKS_WEIGHTS, OPDAI_WEIGHTS,
};
use crate::preprocess::{label_smoothing, tta_flip_average, DEFAULT_TTA_WEIGHTS};
use crate::seeding::stream_rng;
use crate::strategies::{
    self, dfq_logits, dfq_update, dfq_update_center, early_stop, ema_update, lr_at, pts_init,
    pts_step, DfqState, LrSchedule, PtsState,
};
use crate::{metrics, par, PadError, Result};

/// Default feature dimensionality of the synthetic inputs.
pub const DEFAULT_FEATURE_DIM: usize = 16;
/// Default width of the extractor stub and of every hidden head.
pub const DEFAULT_HIDDEN_DIM: usize = 32;
/// Default mini-batch size.
pub const DEFAULT_BATCH_SIZE: usize = 32;
/// Cells in the `ionetworks` pixel-wise supervision map (a 4x4 stand-in).
pub const MAP_CELLS: usize = 16;
/// Named crop branches in the `chenyifan` recipe (original + four patches).
pub const NUM_BRANCHES: usize = 5;
/// Class index of bonafide samples in every two-way classification head.
pub const BONAFIDE_CLASS: usize = 1;

// ---------------------------------------------------------------------------
// Tensors and parameter sets
// ---------------------------------------------------------------------------

/// A dense row-major matrix; vectors are `rows x 1`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Tensor {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Tensor {
    /// An all-zero tensor.
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Tensor {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    /// Build a tensor from a function of `(row, col)`.
    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        let mut data = Vec::with_capacity(rows * cols);
        for r in 0..rows {
            for c in 0..cols {
                data.push(f(r, c));
            }
        }
        Tensor { rows, cols, data }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    /// One row as a slice.
    pub fn row(&self, r: usize) -> &[f64] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    /// Matrix-vector product `self * x`.
    pub fn matvec(&self, x: &[f64]) -> Vec<f64> {
        assert_eq!(x.len(), self.cols, "matvec dimension mismatch");
        (0..self.rows)
            .map(|r| self.row(r).iter().zip(x).map(|(w, v)| w * v).sum())
            .collect()
    }

    /// Transposed product `self^T * g` (the input-gradient of [`matvec`](Self::matvec)).
    pub fn matvec_t(&self, g: &[f64]) -> Vec<f64> {
        assert_eq!(g.len(), self.rows, "matvec_t dimension mismatch");
        let mut out = vec![0.0; self.cols];
        for r in 0..self.rows {
            let row = self.row(r);
            let gr = g[r];
            for (o, w) in out.iter_mut().zip(row) {
                *o += w * gr;
            }
        }
        out
    }
}

/// An ordered, named collection of tensors with a flat-vector view.
///
/// The flat layout (concatenation in insertion order) is what the optimizers
/// and finite-difference checks operate on; names gate freezing.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParamSet {
    entries: Vec<(String, Tensor)>,
}

impl ParamSet {
    pub fn new() -> Self {
        ParamSet {
            entries: Vec::new(),
        }
    }

    /// Append a named tensor; names must be unique.
    pub fn push(&mut self, name: &str, tensor: Tensor) {
        assert!(
            self.get(name).is_none(),
            "duplicate parameter name {name:?}"
        );
        self.entries.push((name.to_string(), tensor));
    }

    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.entries
            .iter()
            .find(|(n, _)| n == name)
            .map(|(_, t)| t)
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Tensor> {
        self.entries
            .iter_mut()
            .find(|(n, _)| n == name)
            .map(|(_, t)| t)
    }

    fn tensor(&self, name: &str) -> &Tensor {
        self.get(name)
            .unwrap_or_else(|| panic!("missing parameter {name:?}"))
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor)> {
        self.entries.iter().map(|(n, t)| (n.as_str(), t))
    }

    /// Total number of scalar parameters.
    pub fn len_flat(&self) -> usize {
        self.entries.iter().map(|(_, t)| t.data.len()).sum()
    }

    /// Offset of a tensor's first scalar in the flat layout.
    pub fn offset_of(&self, name: &str) -> usize {
        let mut off = 0;
        for (n, t) in &self.entries {
            if n == name {
                return off;
            }
            off += t.data.len();
        }
        panic!("missing parameter {name:?}");
    }

    /// `(name, offset, len)` for every tensor, in layout order.
    pub fn layout(&self) -> Vec<(String, usize, usize)> {
        let mut out = Vec::with_capacity(self.entries.len());
        let mut off = 0;
        for (n, t) in &self.entries {
            out.push((n.clone(), off, t.data.len()));
            off += t.data.len();
        }
        out
    }

    /// Concatenate all tensors into one flat vector.
    pub fn flatten(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.len_flat());
        for (_, t) in &self.entries {
            out.extend_from_slice(&t.data);
        }
        out
    }

    /// Overwrite every tensor from a flat vector laid out as [`flatten`](Self::flatten).
    pub fn assign_flat(&mut self, flat: &[f64]) -> Result<()> {
        if flat.len() != self.len_flat() {
            return Err(PadError::ShapeMismatch {
                expected: self.len_flat().to_string(),
                got: flat.len().to_string(),
            });
        }
        let mut off = 0;
        for (_, t) in &mut self.entries {
            let n = t.data.len();
            t.data.copy_from_slice(&flat[off..off + n]);
            off += n;
        }
        Ok(())
    }

    /// Affine map `w x + b` where the pair is stored as `<base>.w` / `<base>.b`.
    fn affine(&self, base: &str, input: &[f64]) -> Vec<f64> {
        let w = self.tensor(&format!("{base}.w"));
        let b = self.tensor(&format!("{base}.b"));
        let mut out = w.matvec(input);
        for (o, bv) in out.iter_mut().zip(&b.data) {
            *o += bv;
        }
        out
    }
}

impl Default for ParamSet {
    fn default() -> Self {
        Self::new()
    }
}

/// Accumulates per-sample gradients into the flat parameter layout.
struct Backprop<'p> {
    params: &'p ParamSet,
    flat: Vec<f64>,
}

impl<'p> Backprop<'p> {
    fn new(params: &'p ParamSet) -> Self {
        Backprop {
            params,
            flat: vec![0.0; params.len_flat()],
        }
    }

    /// Accumulate `d(w x + b)` given the output gradient; returns the input
    /// gradient `w^T g`. `g` must already carry the loss weighting.
    fn affine_backward(&mut self, base: &str, input: &[f64], g: &[f64]) -> Vec<f64> {
        let w = self.params.tensor(&format!("{base}.w"));
        let w_off = self.params.offset_of(&format!("{base}.w"));
        let b_off = self.params.offset_of(&format!("{base}.b"));
        for (r, gr) in g.iter().enumerate() {
            let row = &mut self.flat[w_off + r * input.len()..w_off + (r + 1) * input.len()];
            for (slot, x) in row.iter_mut().zip(input) {
                *slot += gr * x;
            }
            self.flat[b_off + r] += gr;
        }
        w.matvec_t(g)
    }

    /// Accumulate into one row of a bias-free matrix parameter.
    fn add_row(&mut self, name: &str, row: usize, g: &[f64]) {
        let t = self.params.tensor(name);
        let off = self.params.offset_of(name) + row * t.cols;
        for (slot, v) in self.flat[off..off + g.len()].iter_mut().zip(g) {
            *slot += v;
        }
    }
}

fn tanh_vec(x: &[f64]) -> Vec<f64> {
    x.iter().map(|v| v.tanh()).collect()
}

/// Gradient of `tanh` given the activations `z = tanh(a)`.
fn tanh_backward(z: &[f64], g: &[f64]) -> Vec<f64> {
    z.iter().zip(g).map(|(zv, gv)| gv * (1.0 - zv * zv)).collect()
}

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

fn l2_norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Gradient of `cos(a, b)` with respect to `a`, given the cosine value.
fn cosine_grad_wrt_first(a: &[f64], b: &[f64], cos: f64) -> Vec<f64> {
    let na = l2_norm(a);
    let nb = l2_norm(b);
    a.iter()
        .zip(b)
        .map(|(av, bv)| bv / (na * nb) - cos * av / (na * na))
        .collect()
}

// ---------------------------------------------------------------------------
// Recipes and the tiny model
// ---------------------------------------------------------------------------

/// Which team's head/loss wiring the model reproduces.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Recipe {
    /// Single softmax classifier over the extractor features.
    Plain,
    /// Shared encoder with a classifier head and a gradient-reversed domain
    /// head; optionally composes with the dynamic feature queue.
    Ctel,
    /// Softmax classifier plus an auxiliary sigmoid head under a focal loss.
    Hexianhua,
    /// Two extractor streams with per-stream heads and a fused head, all
    /// under focal losses.
    Opdai,
    /// Five crop-branch sigmoid heads plus a concatenation head, all under
    /// binary cross-entropy with fixed branch weights.
    Chenyifan,
    /// Pixel-wise sigmoid map plus a sub-center angular-margin head.
    Ionetworks,
}

impl Recipe {
    pub const ALL: [Recipe; 6] = [
        Recipe::Plain,
        Recipe::Ctel,
        Recipe::Hexianhua,
        Recipe::Opdai,
        Recipe::Chenyifan,
        Recipe::Ionetworks,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Recipe::Plain => "plain",
            Recipe::Ctel => "ctel",
            Recipe::Hexianhua => "hexianhua",
            Recipe::Opdai => "opdai",
            Recipe::Chenyifan => "chenyifan",
            Recipe::Ionetworks => "ionetworks",
        }
    }

    /// Loss component names, in the order they appear in reports. The `ctel`
    /// recipe appends a `"dfq"` component when the queue is active.
    pub fn component_names(self) -> &'static [&'static str] {
        match self {
            Recipe::Plain => &["ce"],
            Recipe::Ctel => &["cls", "adv"],
            Recipe::Hexianhua => &["cls", "focal"],
            Recipe::Opdai => &["fused", "stream0", "stream1"],
            Recipe::Chenyifan => &["ori", "face", "eyes", "nose", "chin", "concat"],
            Recipe::Ionetworks => &["pixel", "angular"],
        }
    }
}

/// A tiny feed-forward model with explicit, named parameters.
///
/// The extractor stub (`ext.*`, or `ext0.*`/`ext1.*` for the two-stream
/// recipe) plays the role of a pretrained backbone and starts frozen; heads
/// are trainable. [`TinyModel::unfreeze_all`] lifts the freeze for
/// second-stage fine-tuning.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TinyModel {
    recipe: Recipe,
    feature_dim: usize,
    hidden_dim: usize,
    sub_centers: usize,
    seed: u64,
    params: ParamSet,
    /// Fixed random projections that stand in for the crop branches of the
    /// five-patch recipe (branch 0 is the identity and is not stored).
    views: Vec<Tensor>,
    frozen: BTreeSet<String>,
}

impl TinyModel {
    /// Build a model with seeded Gaussian initialisation.
    ///
    /// Weight scales follow `1/sqrt(fan_in)`; head weights are further damped
    /// by 0.1 so fresh models predict near 0.5, and biases start at zero.
    pub fn new(recipe: Recipe, feature_dim: usize, hidden_dim: usize, seed: u64) -> Result<Self> {
        if feature_dim == 0 || hidden_dim == 0 {
            return Err(PadError::param(
                "feature_dim and hidden_dim must be positive",
            ));
        }
        let d = feature_dim;
        let h = hidden_dim;
        let k = losses::DEFAULT_SUB_CENTERS;
        let gauss = |stream: u64, rows: usize, cols: usize, scale: f64| {
            let mut rng = stream_rng(seed, stream);
            Tensor::from_fn(rows, cols, |_, _| {
                let u1: f64 = rng.random::<f64>().max(1e-12);
                let u2: f64 = rng.random();
                // Box-Muller keeps the init independent of external
                // distribution crates in this hot constructor.
                scale * (-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos()
            })
        };
        let mut params = ParamSet::new();
        let mut frozen = BTreeSet::new();
        let mut views = Vec::new();
        let ext_scale = 1.0 / (d as f64).sqrt();
        let head = |stream: u64, rows: usize, cols: usize| {
            gauss(stream, rows, cols, 0.1 / (cols as f64).sqrt())
        };
        match recipe {
            Recipe::Opdai => {
                params.push("ext0.w", gauss(10, h, d, ext_scale));
                params.push("ext0.b", Tensor::zeros(h, 1));
                params.push("ext1.w", gauss(11, h, d, ext_scale));
                params.push("ext1.b", Tensor::zeros(h, 1));
                params.push("fused.w", head(16, 2, 2 * h));
                params.push("fused.b", Tensor::zeros(2, 1));
                params.push("head0.w", head(17, 2, h));
                params.push("head0.b", Tensor::zeros(2, 1));
                params.push("head1.w", head(18, 2, h));
                params.push("head1.b", Tensor::zeros(2, 1));
                frozen.extend(
                    ["ext0.w", "ext0.b", "ext1.w", "ext1.b"]
                        .iter()
                        .map(|s| s.to_string()),
                );
            }
            _ => {
                params.push("ext.w", gauss(10, h, d, ext_scale));
                params.push("ext.b", Tensor::zeros(h, 1));
                frozen.insert("ext.w".to_string());
                frozen.insert("ext.b".to_string());
                match recipe {
                    Recipe::Plain => {
                        params.push("cls.w", head(13, 2, h));
                        params.push("cls.b", Tensor::zeros(2, 1));
                    }
                    Recipe::Ctel => {
                        params.push("enc.w", gauss(12, h, h, 1.0 / (h as f64).sqrt()));
                        params.push("enc.b", Tensor::zeros(h, 1));
                        params.push("cls.w", head(13, 2, h));
                        params.push("cls.b", Tensor::zeros(2, 1));
                        params.push("dom.w", head(14, 2, h));
                        params.push("dom.b", Tensor::zeros(2, 1));
                    }
                    Recipe::Hexianhua => {
                        params.push("cls.w", head(13, 2, h));
                        params.push("cls.b", Tensor::zeros(2, 1));
                        params.push("bin.w", head(15, 1, h));
                        params.push("bin.b", Tensor::zeros(1, 1));
                    }
                    Recipe::Chenyifan => {
                        for b in 0..NUM_BRANCHES {
                            params.push(&format!("head{b}.w"), head(20 + b as u64, 1, h));
                            params.push(&format!("head{b}.b"), Tensor::zeros(1, 1));
                        }
                        params.push("concat.w", head(25, 1, NUM_BRANCHES * h));
                        params.push("concat.b", Tensor::zeros(1, 1));
                        for b in 1..NUM_BRANCHES {
                            views.push(gauss(30 + b as u64, h, h, 1.0 / (h as f64).sqrt()));
                        }
                    }
                    Recipe::Ionetworks => {
                        params.push("map.w", head(26, MAP_CELLS, h));
                        params.push("map.b", Tensor::zeros(MAP_CELLS, 1));
                        params.push("sub.w", gauss(27, 2 * k, h, 1.0));
                    }
                    Recipe::Opdai => unreachable!(),
                }
            }
        }
        let mut model = TinyModel {
            recipe,
            feature_dim,
            hidden_dim,
            sub_centers: k,
            seed,
            params,
            views,
            frozen,
        };
        if recipe == Recipe::Ionetworks {
            model.renormalize_sub_centers();
        }
        Ok(model)
    }

    pub fn recipe(&self) -> Recipe {
        self.recipe
    }

    pub fn feature_dim(&self) -> usize {
        self.feature_dim
    }

    pub fn hidden_dim(&self) -> usize {
        self.hidden_dim
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn params(&self) -> &ParamSet {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamSet {
        &mut self.params
    }

    /// Names of the frozen tensors (skipped entirely by the optimizers).
    pub fn frozen(&self) -> &BTreeSet<String> {
        &self.frozen
    }

    /// Make every parameter trainable (second fine-tuning stage).
    pub fn unfreeze_all(&mut self) {
        self.frozen.clear();
    }

    /// Rescale each sub-center row to unit norm. No-op for other recipes.
    ///
    /// Called after every optimizer step so the angular head always measures
    /// angles against unit anchors, matching the loss-side convention.
    pub fn renormalize_sub_centers(&mut self) {
        if self.recipe != Recipe::Ionetworks {
            return;
        }
        let t = self.params.get_mut("sub.w").expect("sub.w present");
        let cols = t.cols;
        for r in 0..t.rows {
            let row = &mut t.data[r * cols..(r + 1) * cols];
            let norm = row.iter().map(|v| v * v).sum::<f64>().sqrt();
            if norm > 0.0 {
                for v in row.iter_mut() {
                    *v /= norm;
                }
            }
        }
    }

    /// The embedding that downstream heads (and the feature queue) consume:
    /// post-encoder for `ctel`, post-extractor otherwise. The two-stream
    /// recipe returns the concatenated streams.
    pub fn embed(&self, feature: &[f64]) -> Result<Vec<f64>> {
        if feature.len() != self.feature_dim {
            return Err(PadError::ShapeMismatch {
                expected: self.feature_dim.to_string(),
                got: feature.len().to_string(),
            });
        }
        Ok(match self.recipe {
            Recipe::Opdai => {
                let mut z = tanh_vec(&self.params.affine("ext0", feature));
                z.extend(tanh_vec(&self.params.affine("ext1", feature)));
                z
            }
            Recipe::Ctel => {
                let z = tanh_vec(&self.params.affine("ext", feature));
                tanh_vec(&self.params.affine("enc", &z))
            }
            _ => tanh_vec(&self.params.affine("ext", feature)),
        })
    }

    /// Bonafide probability in `[0, 1]` for one feature vector.
    pub fn score(&self, feature: &[f64]) -> Result<f64> {
        if feature.len() != self.feature_dim {
            return Err(PadError::ShapeMismatch {
                expected: self.feature_dim.to_string(),
                got: feature.len().to_string(),
            });
        }
        Ok(match self.recipe {
            Recipe::Plain | Recipe::Hexianhua => {
                let z = tanh_vec(&self.params.affine("ext", feature));
                softmax_bonafide(&self.params.affine("cls", &z))
            }
            Recipe::Ctel => {
                let e = self.embed(feature)?;
                softmax_bonafide(&self.params.affine("cls", &e))
            }
            Recipe::Opdai => {
                let zf = self.embed(feature)?;
                softmax_bonafide(&self.params.affine("fused", &zf))
            }
            Recipe::Chenyifan => {
                let z = tanh_vec(&self.params.affine("ext", feature));
                let branches = self.branch_views(&z);
                let concat: Vec<f64> = branches.concat();
                sigmoid(self.params.affine("concat", &concat)[0])
            }
            Recipe::Ionetworks => {
                let z = tanh_vec(&self.params.affine("ext", feature));
                let map = self.params.affine("map", &z);
                map.iter().map(|&y| sigmoid(y)).sum::<f64>() / map.len() as f64
            }
        })
    }

    /// The five branch embeddings of the crop recipe (branch 0 = identity).
    fn branch_views(&self, z: &[f64]) -> Vec<Vec<f64>> {
        let mut out = Vec::with_capacity(NUM_BRANCHES);
        out.push(z.to_vec());
        for q in &self.views {
            out.push(q.matvec(z));
        }
        out
    }

    /// Serialize to pretty JSON at `path`.
    pub fn save(&self, path: &Path) -> Result<()> {
        let file = std::fs::File::create(path)?;
        serde_json::to_writer_pretty(std::io::BufWriter::new(file), self)?;
        Ok(())
    }

    /// Load a model saved by [`TinyModel::save`]; round-trips bit-exactly.
    pub fn load(path: &Path) -> Result<Self> {
        let file = std::fs::File::open(path)?;
        let model: TinyModel = serde_json::from_reader(std::io::BufReader::new(file))?;
        Ok(model)
    }
}

/// Probability of the bonafide class from a two-way logit vector.
fn softmax_bonafide(logits: &[f64]) -> f64 {
    let m = logits[0].max(logits[1]);
    let e0 = (logits[0] - m).exp();
    let e1 = (logits[1] - m).exp();
    e1 / (e0 + e1)
}

fn class_of(label: Label) -> usize {
    match label {
        Label::Bonafide => BONAFIDE_CLASS,
        Label::Attack => 1 - BONAFIDE_CLASS,
    }
}

// ---------------------------------------------------------------------------
// Forward/backward over a batch
// ---------------------------------------------------------------------------

/// One training item: a feature vector, an optional label, and the quality
/// band it was drawn from (the domain-adversarial signal).
#[derive(Debug, Clone, PartialEq)]
pub struct TrainItem {
    pub feature: Vec<f64>,
    pub label: Option<Label>,
    pub domain: Domain,
}

impl TrainItem {
    /// Labeled training-band item from a catalog record.
    pub fn from_record(record: &SampleRecord) -> Result<Self> {
        let feature = record
            .feature
            .clone()
            .ok_or_else(|| PadError::param(format!("sample {} has no feature vector", record.sample_id.as_str())))?;
        Ok(TrainItem {
            feature,
            label: Some(record.label),
            domain: Domain::TrainBand,
        })
    }
}

/// Loss-side knobs threaded through the batch evaluation.
#[derive(Debug, Clone, Copy)]
pub struct LossCtx<'a> {
    /// Gradient-reversal strength for the domain head.
    pub grl_lambda: f64,
    /// Focusing exponent for the focal-loss recipes.
    pub focal_gamma: f64,
    /// Optional label smoothing applied to classification targets.
    pub label_smoothing: Option<f64>,
    /// Feature queue snapshot and logit scale; `ctel` only. Logits are
    /// computed against this batch-start snapshot, and the queue itself is
    /// updated sequentially after the optimizer step.
    pub dfq: Option<(&'a DfqState, f64)>,
}

impl Default for LossCtx<'static> {
    fn default() -> Self {
        LossCtx {
            grl_lambda: losses::DEFAULT_GRL_LAMBDA,
            focal_gamma: losses::DEFAULT_FOCAL_GAMMA,
            label_smoothing: None,
            dfq: None,
        }
    }
}

/// A queue interaction recorded during the forward pass: the (normalised on
/// enqueue) embedding of a labeled attack sample and its cosine to the
/// batch-start negative center.
#[derive(Debug, Clone)]
pub struct DfqEvent {
    pub embedding: Vec<f64>,
    pub log0: f64,
}

/// Loss value, per-component means, and the flat gradient for one batch.
#[derive(Debug, Clone)]
pub struct BatchEval {
    /// The weighted composite loss (what the optimizer descends).
    pub total: f64,
    /// Unweighted per-component means, keyed by
    /// [`Recipe::component_names`] (plus `"dfq"` when the queue is active).
    pub components: BTreeMap<String, f64>,
    /// Gradient of `total` with respect to [`ParamSet::flatten`].
    pub grads: Vec<f64>,
    /// Queue interactions, in batch order, for the sequential update pass.
    pub dfq_events: Vec<DfqEvent>,
}

/// Per-batch normalisers shared by all samples.
struct Norms {
    all: f64,
    labeled: f64,
    attack: f64,
}

struct SampleEval {
    comps: Vec<f64>,
    grads: Vec<f64>,
    dfq_event: Option<DfqEvent>,
}

/// Evaluate the recipe's composite loss and its gradient over one batch.
///
/// Per-sample passes run through [`par::try_map_ordered`]; the results are
/// folded sequentially in batch order so both execution modes are
/// bit-identical. Component means are returned unweighted; `total` applies
/// the recipe's composite weights exactly once.
pub fn forward_backward(
    model: &TinyModel,
    batch: &[TrainItem],
    ctx: &LossCtx<'_>,
) -> Result<BatchEval> {
    if batch.is_empty() {
        return Err(PadError::param("empty batch"));
    }
    if ctx.dfq.is_some() && model.recipe != Recipe::Ctel {
        return Err(PadError::param(
            "the feature queue only composes with the ctel recipe",
        ));
    }
    for item in batch {
        if item.feature.len() != model.feature_dim {
            return Err(PadError::ShapeMismatch {
                expected: model.feature_dim.to_string(),
                got: item.feature.len().to_string(),
            });
        }
        if model.recipe != Recipe::Ctel && item.label.is_none() {
            return Err(PadError::param(format!(
                "recipe {} requires labeled batches",
                model.recipe.name()
            )));
        }
    }
    let n_labeled = batch.iter().filter(|i| i.label.is_some()).count();
    if model.recipe == Recipe::Ctel {
        if n_labeled == 0 {
            return Err(PadError::MissingClass {
                context: "ctel batch has no labeled samples".to_string(),
            });
        }
        let has_train = batch.iter().any(|i| i.domain == Domain::TrainBand);
        let has_dev = batch.iter().any(|i| i.domain == Domain::DevBand);
        if !has_train || !has_dev {
            return Err(PadError::MissingClass {
                context: "ctel batch must mix both quality-band domains".to_string(),
            });
        }
    }
    let n_attack = batch
        .iter()
        .filter(|i| i.label == Some(Label::Attack))
        .count();
    let norms = Norms {
        all: batch.len() as f64,
        labeled: n_labeled.max(1) as f64,
        attack: n_attack.max(1) as f64,
    };

    let evals = par::try_map_ordered(batch, |item| per_sample(model, item, ctx, &norms))?;

    let has_dfq = ctx.dfq.is_some();
    let mut names: Vec<&str> = model.recipe.component_names().to_vec();
    if has_dfq {
        names.push("dfq");
    }
    let mut comp_sums = vec![0.0; names.len()];
    let mut grads = vec![0.0; model.params.len_flat()];
    let mut dfq_events = Vec::new();
    for eval in evals {
        for (sum, v) in comp_sums.iter_mut().zip(&eval.comps) {
            *sum += v;
        }
        for (slot, g) in grads.iter_mut().zip(&eval.grads) {
            *slot += g;
        }
        if let Some(ev) = eval.dfq_event {
            dfq_events.push(ev);
        }
    }
    let total = composite_total(model.recipe, &comp_sums, has_dfq);
    let components = names
        .iter()
        .map(|n| n.to_string())
        .zip(comp_sums.iter().copied())
        .collect();
    Ok(BatchEval {
        total,
        components,
        grads,
        dfq_events,
    })
}

/// Apply the recipe's composite weights to already-averaged components.
fn composite_total(recipe: Recipe, comps: &[f64], has_dfq: bool) -> f64 {
    match recipe {
        Recipe::Plain => comps[0],
        Recipe::Ctel => {
            let base = losses::total_ctel(comps[0], comps[1]);
            if has_dfq {
                base + comps[2]
            } else {
                base
            }
        }
        Recipe::Hexianhua => losses::total_hexianhua(comps[0], comps[1]),
        Recipe::Opdai => losses::total_opdai(comps[0], comps[1], comps[2]),
        Recipe::Chenyifan => losses::total_chenyifan(
            comps[0], comps[1], comps[2], comps[3], comps[4], comps[5],
        ),
        Recipe::Ionetworks => losses::total_ionetworks(comps[0], comps[1]),
    }
}

/// Smooth a hard binary target when smoothing is configured.
fn smooth_binary(t: f64, eps: Option<f64>) -> f64 {
    match eps {
        Some(e) => (1.0 - e) * t + e / 2.0,
        None => t,
    }
}

/// One-hot (optionally smoothed) two-class target.
fn soft_target(class: usize, eps: Option<f64>) -> Vec<f64> {
    let mut one_hot = vec![0.0; 2];
    one_hot[class] = 1.0;
    match eps {
        Some(e) => label_smoothing(&one_hot, e),
        None => one_hot,
    }
}

fn per_sample(
    model: &TinyModel,
    item: &TrainItem,
    ctx: &LossCtx<'_>,
    norms: &Norms,
) -> Result<SampleEval> {
    let x = &item.feature;
    let p = &model.params;
    let mut bp = Backprop::new(p);
    let mut dfq_event = None;
    let comps = match model.recipe {
        Recipe::Plain => {
            let label = item.label.expect("validated");
            let a = p.affine("ext", x);
            let z = tanh_vec(&a);
            let logits = p.affine("cls", &z);
            let target = soft_target(class_of(label), ctx.label_smoothing);
            let ce = losses::cross_entropy_soft(&logits, &target)?;
            let w = 1.0 / norms.all;
            let g_logits: Vec<f64> = ce.gradient.iter().map(|g| g * w).collect();
            let g_z = bp.affine_backward("cls", &z, &g_logits);
            let g_a = tanh_backward(&z, &g_z);
            bp.affine_backward("ext", x, &g_a);
            vec![ce.value / norms.all]
        }
        Recipe::Ctel => ctel_sample(model, item, ctx, norms, &mut bp, &mut dfq_event)?,
        Recipe::Hexianhua => {
            let label = item.label.expect("validated");
            let a = p.affine("ext", x);
            let z = tanh_vec(&a);
            let logits = p.affine("cls", &z);
            let target = soft_target(class_of(label), ctx.label_smoothing);
            let ce = losses::cross_entropy_soft(&logits, &target)?;
            let y = p.affine("bin", &z)[0];
            let prob = sigmoid(y);
            let t = smooth_binary(label.as_target(), ctx.label_smoothing);
            let foc = losses::focal(prob, t, ctx.focal_gamma);
            // Composite weights: 1 for the classifier, 0.5 for the focal head.
            let w_ce = HEXIANHUA_WEIGHTS[0] / norms.all;
            let w_f = HEXIANHUA_WEIGHTS[1] / norms.all;
            let g_logits: Vec<f64> = ce.gradient.iter().map(|g| g * w_ce).collect();
            let mut g_z = bp.affine_backward("cls", &z, &g_logits);
            let g_y = w_f * foc.gradient[0] * prob * (1.0 - prob);
            let g_z_bin = bp.affine_backward("bin", &z, &[g_y]);
            for (a, b) in g_z.iter_mut().zip(&g_z_bin) {
                *a += b;
            }
            let g_a = tanh_backward(&z, &g_z);
            bp.affine_backward("ext", x, &g_a);
            vec![ce.value / norms.all, foc.value / norms.all]
        }
        Recipe::Opdai => {
            let label = item.label.expect("validated");
            let t = smooth_binary(label.as_target(), ctx.label_smoothing);
            let z0 = tanh_vec(&p.affine("ext0", x));
            let z1 = tanh_vec(&p.affine("ext1", x));
            let zf: Vec<f64> = z0.iter().chain(&z1).copied().collect();
            let mut comps = Vec::with_capacity(3);
            let mut g_z0 = vec![0.0; z0.len()];
            let mut g_z1 = vec![0.0; z1.len()];
            let streams: [(&str, &[f64], f64); 3] = [
                ("fused", &zf, OPDAI_WEIGHTS[0]),
                ("head0", &z0, OPDAI_WEIGHTS[1]),
                ("head1", &z1, OPDAI_WEIGHTS[2]),
            ];
            for (head, input, weight) in streams {
                let logits = p.affine(head, input);
                let prob = softmax_bonafide(&logits);
                let foc = losses::focal(prob, t, ctx.focal_gamma);
                comps.push(foc.value / norms.all);
                let w = weight / norms.all;
                // dp/dlogits for a two-way softmax taken at the bonafide slot.
                let dp = prob * (1.0 - prob);
                let g_logits = [
                    -w * foc.gradient[0] * dp,
                    w * foc.gradient[0] * dp,
                ];
                let g_in = bp.affine_backward(head, input, &g_logits);
                match head {
                    "fused" => {
                        for (a, b) in g_z0.iter_mut().zip(&g_in[..z0.len()]) {
                            *a += b;
                        }
                        for (a, b) in g_z1.iter_mut().zip(&g_in[z0.len()..]) {
                            *a += b;
                        }
                    }
                    "head0" => {
                        for (a, b) in g_z0.iter_mut().zip(&g_in) {
                            *a += b;
                        }
                    }
                    _ => {
                        for (a, b) in g_z1.iter_mut().zip(&g_in) {
                            *a += b;
                        }
                    }
                }
            }
            bp.affine_backward("ext0", x, &tanh_backward(&z0, &g_z0));
            bp.affine_backward("ext1", x, &tanh_backward(&z1, &g_z1));
            comps
        }
        Recipe::Chenyifan => {
            let label = item.label.expect("validated");
            let t = smooth_binary(label.as_target(), ctx.label_smoothing);
            let z = tanh_vec(&p.affine("ext", x));
            let branches = model.branch_views(&z);
            let mut comps = Vec::with_capacity(NUM_BRANCHES + 1);
            let mut g_z = vec![0.0; z.len()];
            for (b, v) in branches.iter().enumerate() {
                let y = p.affine(&format!("head{b}"), v)[0];
                let prob = sigmoid(y);
                let loss = losses::bce(prob, t);
                comps.push(loss.value / norms.all);
                let w = CHENYIFAN_WEIGHTS[b] / norms.all;
                let g_y = w * loss.gradient[0] * prob * (1.0 - prob);
                let g_v = bp.affine_backward(&format!("head{b}"), v, &[g_y]);
                accumulate_branch(model, b, &g_v, &mut g_z);
            }
            let concat: Vec<f64> = branches.concat();
            let y = p.affine("concat", &concat)[0];
            let prob = sigmoid(y);
            let loss = losses::bce(prob, t);
            comps.push(loss.value / norms.all);
            let w = CHENYIFAN_WEIGHTS[NUM_BRANCHES] / norms.all;
            let g_y = w * loss.gradient[0] * prob * (1.0 - prob);
            let g_concat = bp.affine_backward("concat", &concat, &[g_y]);
            let h = z.len();
            for b in 0..NUM_BRANCHES {
                accumulate_branch(model, b, &g_concat[b * h..(b + 1) * h], &mut g_z);
            }
            bp.affine_backward("ext", x, &tanh_backward(&z, &g_z));
            comps
        }
        Recipe::Ionetworks => {
            let label = item.label.expect("validated");
            let z = tanh_vec(&p.affine("ext", x));
            let mut g_z = vec![0.0; z.len()];

            let y_map = p.affine("map", &z);
            let map: Vec<f64> = y_map.iter().map(|&y| sigmoid(y)).collect();
            let pix = losses::pixelwise_bce(&map, label)?;
            let w_pix = IONETWORKS_WEIGHTS[0] / norms.all;
            let g_y: Vec<f64> = pix
                .gradient
                .iter()
                .zip(&map)
                .map(|(g, m)| w_pix * g * m * (1.0 - m))
                .collect();
            let g_z_map = bp.affine_backward("map", &z, &g_y);
            for (a, b) in g_z.iter_mut().zip(&g_z_map) {
                *a += b;
            }

            // Angular head: every sample is measured against the bonafide
            // anchors, so the margin term pulls live faces toward them and
            // the log term pushes attacks away. The attack-class rows keep
            // the two-class bank shape but receive no gradient.
            let sub = p.tensor("sub.w");
            let k = model.sub_centers;
            let base = BONAFIDE_CLASS * k;
            let mut best = (0usize, f64::NEG_INFINITY);
            for j in 0..k {
                let row = sub.row(base + j);
                let c = dot(&z, row) / (l2_norm(&z) * l2_norm(row));
                if c > best.1 {
                    best = (j, c);
                }
            }
            let (j_star, cos_raw) = best;
            let cos = cos_raw.clamp(-1.0, 1.0);
            let theta = cos.acos();
            let am = losses::angular_margin_loss(&[theta], &[label.as_target()])?;
            let w_ang = IONETWORKS_WEIGHTS[1] / norms.all;
            if cos.abs() < 1.0 - 1e-12 {
                let dtheta_dcos = -1.0 / (1.0 - cos * cos).sqrt();
                let g_cos = w_ang * am.gradient[0] * dtheta_dcos;
                let row = sub.row(base + j_star);
                let gz: Vec<f64> = cosine_grad_wrt_first(&z, row, cos)
                    .iter()
                    .map(|g| g_cos * g)
                    .collect();
                for (a, b) in g_z.iter_mut().zip(&gz) {
                    *a += b;
                }
                let gw: Vec<f64> = cosine_grad_wrt_first(row, &z, cos)
                    .iter()
                    .map(|g| g_cos * g)
                    .collect();
                bp.add_row("sub.w", base + j_star, &gw);
            }
            bp.affine_backward("ext", x, &tanh_backward(&z, &g_z));
            vec![pix.value / norms.all, am.value / norms.all]
        }
    };
    Ok(SampleEval {
        comps,
        grads: bp.flat,
        dfq_event,
    })
}

/// Route a branch-embedding gradient back to the shared trunk activation.
fn accumulate_branch(model: &TinyModel, branch: usize, g_v: &[f64], g_z: &mut [f64]) {
    if branch == 0 {
        for (a, b) in g_z.iter_mut().zip(g_v) {
            *a += b;
        }
    } else {
        let back = model.views[branch - 1].matvec_t(g_v);
        for (a, b) in g_z.iter_mut().zip(&back) {
            *a += b;
        }
    }
}

/// The adversarial recipe's per-sample pass: classifier over labeled items,
/// gradient-reversed domain head over all items, optional queue loss over
/// labeled attacks.
fn ctel_sample(
    model: &TinyModel,
    item: &TrainItem,
    ctx: &LossCtx<'_>,
    norms: &Norms,
    bp: &mut Backprop<'_>,
    dfq_event: &mut Option<DfqEvent>,
) -> Result<Vec<f64>> {
    let p = &model.params;
    let x = &item.feature;
    let z = tanh_vec(&p.affine("ext", x));
    let e = tanh_vec(&p.affine("enc", &z));
    let has_dfq = ctx.dfq.is_some();
    let mut comps = vec![0.0; if has_dfq { 3 } else { 2 }];
    let mut g_e = vec![0.0; e.len()];

    if let Some(label) = item.label {
        let target = soft_target(class_of(label), ctx.label_smoothing);
        let ce = losses::cross_entropy_soft(&p.affine("cls", &e), &target)?;
        comps[0] = ce.value / norms.labeled;
        let w = 1.0 / norms.labeled;
        let g_logits: Vec<f64> = ce.gradient.iter().map(|g| g * w).collect();
        let g = bp.affine_backward("cls", &e, &g_logits);
        for (a, b) in g_e.iter_mut().zip(&g) {
            *a += b;
        }
    }

    let dom_ce = losses::cross_entropy(&p.affine("dom", &e), item.domain.as_index())?;
    comps[1] = dom_ce.value / norms.all;
    let w_dom = 1.0 / norms.all;
    let g_logits: Vec<f64> = dom_ce.gradient.iter().map(|g| g * w_dom).collect();
    // The domain head itself descends its loss; only the gradient flowing
    // back into the shared encoder is reversed.
    let g_into_e = bp.affine_backward("dom", &e, &g_logits);
    let reversed = losses::grl(&g_into_e, ctx.grl_lambda);
    for (a, b) in g_e.iter_mut().zip(&reversed) {
        *a += b;
    }

    if let Some((state, scale)) = ctx.dfq {
        if item.label == Some(Label::Attack) {
            let (l0, l1) = dfq_logits(&e, state)?;
            let ce = losses::cross_entropy(&[scale * l0, scale * l1], 0)?;
            comps[2] = ce.value / norms.attack;
            let w = 1.0 / norms.attack;
            // Chain through both cosine logits; the queue side only carries
            // gradient when the queue is non-empty (otherwise l1 is the
            // constant sentinel).
            let g_l0 = w * scale * ce.gradient[0];
            let center = state.center();
            let grad0 = cosine_grad_wrt_first(&e, &center, l0);
            for (a, g) in g_e.iter_mut().zip(&grad0) {
                *a += g_l0 * g;
            }
            if !state.queue().is_empty() {
                let (best_idx, _) = state
                    .queue()
                    .iter()
                    .enumerate()
                    .map(|(i, q)| (i, dot(&e, q) / (l2_norm(&e) * l2_norm(q))))
                    .fold((0, f64::NEG_INFINITY), |acc, (i, c)| {
                        if c > acc.1 {
                            (i, c)
                        } else {
                            acc
                        }
                    });
                let q = &state.queue()[best_idx];
                let g_l1 = w * scale * ce.gradient[1];
                let grad1 = cosine_grad_wrt_first(&e, q, l1);
                for (a, g) in g_e.iter_mut().zip(&grad1) {
                    *a += g_l1 * g;
                }
            }
            *dfq_event = Some(DfqEvent {
                embedding: e.clone(),
                log0: l0,
            });
        }
    }

    let g_a_enc = tanh_backward(&e, &g_e);
    let g_z = bp.affine_backward("enc", &z, &g_a_enc);
    let g_a = tanh_backward(&z, &g_z);
    bp.affine_backward("ext", x, &g_a);
    Ok(comps)
}

// ---------------------------------------------------------------------------
// Optimizers
// ---------------------------------------------------------------------------

/// Which update rule the optimizer applies.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OptimizerKind {
    SgdMomentum,
    Adamw,
}

/// Optimizer hyper-parameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct OptimizerConfig {
    pub kind: OptimizerKind,
    pub lr: f64,
    /// Momentum coefficient (SGD only).
    pub momentum: f64,
    /// Adam moment decays.
    pub betas: (f64, f64),
    pub eps: f64,
    /// Decoupled weight decay (AdamW only).
    pub weight_decay: f64,
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        OptimizerConfig {
            kind: OptimizerKind::SgdMomentum,
            lr: 0.01,
            momentum: 0.9,
            betas: (0.9, 0.999),
            eps: 1e-8,
            weight_decay: 0.0,
        }
    }
}

impl OptimizerConfig {
    /// AdamW with the usual defaults: lr 1e-3, betas (0.9, 0.999), decoupled
    /// weight decay 1e-2.
    pub fn adamw_default() -> Self {
        OptimizerConfig {
            kind: OptimizerKind::Adamw,
            lr: 1e-3,
            weight_decay: 1e-2,
            ..OptimizerConfig::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.lr.is_finite() && self.lr > 0.0) {
            return Err(PadError::param("learning rate must be positive"));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(PadError::param("momentum must lie in [0, 1)"));
        }
        for b in [self.betas.0, self.betas.1] {
            if !(0.0..1.0).contains(&b) {
                return Err(PadError::param("betas must lie in [0, 1)"));
            }
        }
        if !(self.eps.is_finite() && self.eps > 0.0) {
            return Err(PadError::param("eps must be positive"));
        }
        if !(self.weight_decay.is_finite() && self.weight_decay >= 0.0) {
            return Err(PadError::param("weight decay must be non-negative"));
        }
        if self.kind == OptimizerKind::SgdMomentum && self.weight_decay != 0.0 {
            return Err(PadError::param(
                "weight decay is only applied by the adamw optimizer",
            ));
        }
        Ok(())
    }
}

/// Mutable optimizer state (moment buffers and the step counter).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OptimizerState {
    config: OptimizerConfig,
    step_count: u64,
    moments1: Vec<f64>,
    moments2: Vec<f64>,
    layout: Vec<(String, usize, usize)>,
}

impl OptimizerState {
    pub fn new(config: OptimizerConfig, params: &ParamSet) -> Result<Self> {
        config.validate()?;
        let n = params.len_flat();
        Ok(OptimizerState {
            config,
            step_count: 0,
            moments1: vec![0.0; n],
            moments2: vec![0.0; n],
            layout: params.layout(),
        })
    }

    pub fn config(&self) -> &OptimizerConfig {
        &self.config
    }

    pub fn step_count(&self) -> u64 {
        self.step_count
    }

    /// First-moment (velocity) buffer, for inspection in tests.
    pub fn first_moments(&self) -> &[f64] {
        &self.moments1
    }

    /// Override the learning rate (driven by the schedule each epoch).
    pub fn set_lr(&mut self, lr: f64) {
        self.config.lr = lr;
    }

    fn check(&self, params: &ParamSet, grads: &[f64]) -> Result<()> {
        if grads.len() != self.moments1.len() || params.len_flat() != self.moments1.len() {
            return Err(PadError::ShapeMismatch {
                expected: self.moments1.len().to_string(),
                got: grads.len().to_string(),
            });
        }
        Ok(())
    }
}

/// Heavy-ball SGD: `v <- momentum * v + g`, `p <- p - lr * v`.
///
/// Frozen tensors are skipped entirely: neither their parameters nor their
/// velocity buffers change.
pub fn sgd_momentum_step(
    state: &mut OptimizerState,
    params: &mut ParamSet,
    grads: &[f64],
    frozen: &BTreeSet<String>,
) -> Result<()> {
    state.check(params, grads)?;
    state.step_count += 1;
    let lr = state.config.lr;
    let momentum = state.config.momentum;
    let layout = state.layout.clone();
    for (name, off, len) in layout {
        if frozen.contains(&name) {
            continue;
        }
        let tensor = params
            .get_mut(&name)
            .ok_or_else(|| PadError::param(format!("optimizer layout names unknown tensor {name:?}")))?;
        for i in 0..len {
            let v = momentum * state.moments1[off + i] + grads[off + i];
            state.moments1[off + i] = v;
            tensor.data_mut()[i] -= lr * v;
        }
    }
    Ok(())
}

/// AdamW with bias correction and decoupled weight decay:
/// `p <- p * (1 - lr * wd) - lr * m_hat / (sqrt(v_hat) + eps)`.
///
/// With a zero gradient the update is exactly the multiplicative shrink
/// `p * (1 - lr * wd)`.
pub fn adamw_step(
    state: &mut OptimizerState,
    params: &mut ParamSet,
    grads: &[f64],
    frozen: &BTreeSet<String>,
) -> Result<()> {
    state.check(params, grads)?;
    state.step_count += 1;
    let t = state.step_count as i32;
    let lr = state.config.lr;
    let (b1, b2) = state.config.betas;
    let eps = state.config.eps;
    let wd = state.config.weight_decay;
    let c1 = 1.0 - b1.powi(t);
    let c2 = 1.0 - b2.powi(t);
    let layout = state.layout.clone();
    for (name, off, len) in layout {
        if frozen.contains(&name) {
            continue;
        }
        let tensor = params
            .get_mut(&name)
            .ok_or_else(|| PadError::param(format!("optimizer layout names unknown tensor {name:?}")))?;
        for i in 0..len {
            let g = grads[off + i];
            let m = b1 * state.moments1[off + i] + (1.0 - b1) * g;
            let v = b2 * state.moments2[off + i] + (1.0 - b2) * g * g;
            state.moments1[off + i] = m;
            state.moments2[off + i] = v;
            let m_hat = m / c1;
            let v_hat = v / c2;
            let p = &mut tensor.data_mut()[i];
            *p = *p * (1.0 - lr * wd) - lr * m_hat / (v_hat.sqrt() + eps);
        }
    }
    Ok(())
}

/// Dispatch one optimizer step by the configured kind.
pub fn optimizer_step(
    state: &mut OptimizerState,
    params: &mut ParamSet,
    grads: &[f64],
    frozen: &BTreeSet<String>,
) -> Result<()> {
    match state.config.kind {
        OptimizerKind::SgdMomentum => sgd_momentum_step(state, params, grads, frozen),
        OptimizerKind::Adamw => adamw_step(state, params, grads, frozen),
    }
}

// ---------------------------------------------------------------------------
// Training configuration and data
// ---------------------------------------------------------------------------

/// Progressive-training knobs (rate of the roster expansion per epoch).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PtsConfig {
    pub initial_rate: f64,
    pub decay: f64,
}

impl Default for PtsConfig {
    fn default() -> Self {
        PtsConfig {
            initial_rate: 0.3,
            decay: 0.9,
        }
    }
}

/// Feature-queue knobs for the adversarial recipe.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DfqConfig {
    pub capacity: usize,
    pub alpha: f64,
    /// Scale applied to the cosine logits before the cross-entropy.
    pub scale: f64,
}

impl Default for DfqConfig {
    fn default() -> Self {
        DfqConfig {
            capacity: strategies::DFQ_DEFAULT_CAPACITY,
            alpha: strategies::DFQ_DEFAULT_ALPHA,
            scale: losses::DEFAULT_COSINE_SCALE,
        }
    }
}

/// Two-stage fine-tuning: heads only at a large batch, then everything at a
/// smaller batch until the epoch loss drops under `loss_threshold`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TwoStageConfig {
    pub stage1_batch: usize,
    pub stage2_batch: usize,
    pub stage1_epochs: usize,
    pub stage2_max_epochs: usize,
    pub loss_threshold: f64,
}

impl Default for TwoStageConfig {
    fn default() -> Self {
        TwoStageConfig {
            stage1_batch: 512,
            stage2_batch: 200,
            stage1_epochs: 5,
            stage2_max_epochs: 50,
            loss_threshold: 1e-4,
        }
    }
}

/// Everything a training run needs besides the data.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub recipe: Recipe,
    pub feature_dim: usize,
    pub hidden_dim: usize,
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
    pub optimizer: OptimizerConfig,
    pub schedule: LrSchedule,
    pub grl_lambda: f64,
    pub focal_gamma: f64,
    pub label_smoothing: Option<f64>,
    pub pts: Option<PtsConfig>,
    pub dfq: Option<DfqConfig>,
    /// Shadow-weight decay; when set, dev evaluation and the returned model
    /// use the shadow parameters.
    pub ema_decay: Option<f64>,
    /// Stop when dev ACER has not improved for this many epochs.
    pub early_stop_patience: Option<usize>,
    pub two_stage: Option<TwoStageConfig>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            recipe: Recipe::Plain,
            feature_dim: DEFAULT_FEATURE_DIM,
            hidden_dim: DEFAULT_HIDDEN_DIM,
            epochs: 20,
            batch_size: DEFAULT_BATCH_SIZE,
            seed: 7,
            optimizer: OptimizerConfig::default(),
            schedule: LrSchedule::CosineWarmup {
                lr0: 0.01,
                warmup_epochs: 1,
                total_epochs: 20,
            },
            grl_lambda: losses::DEFAULT_GRL_LAMBDA,
            focal_gamma: losses::DEFAULT_FOCAL_GAMMA,
            label_smoothing: None,
            pts: None,
            dfq: None,
            ema_decay: None,
            early_stop_patience: None,
            two_stage: None,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.feature_dim == 0 || self.hidden_dim == 0 {
            return Err(PadError::param("model dimensions must be positive"));
        }
        if self.epochs == 0 {
            return Err(PadError::param("epochs must be at least 1"));
        }
        if self.batch_size == 0 {
            return Err(PadError::param("batch_size must be at least 1"));
        }
        if self.recipe == Recipe::Ctel && self.batch_size < 2 {
            return Err(PadError::param(
                "the ctel recipe needs batch_size >= 2 to mix both domains",
            ));
        }
        self.optimizer.validate()?;
        self.schedule.validate()?;
        if !(self.grl_lambda.is_finite() && self.grl_lambda >= 0.0) {
            return Err(PadError::param("grl_lambda must be non-negative"));
        }
        if !(self.focal_gamma.is_finite() && self.focal_gamma >= 0.0) {
            return Err(PadError::param("focal_gamma must be non-negative"));
        }
        if let Some(eps) = self.label_smoothing {
            if !(0.0..1.0).contains(&eps) {
                return Err(PadError::param("label_smoothing must lie in [0, 1)"));
            }
        }
        if let Some(pts) = &self.pts {
            for v in [pts.initial_rate, pts.decay] {
                if !(v > 0.0 && v <= 1.0) {
                    return Err(PadError::param("pts rates must lie in (0, 1]"));
                }
            }
        }
        if let Some(dfq) = &self.dfq {
            if self.recipe != Recipe::Ctel {
                return Err(PadError::param(
                    "the feature queue only composes with the ctel recipe",
                ));
            }
            if dfq.capacity == 0 {
                return Err(PadError::param("dfq capacity must be positive"));
            }
            if !(-1.0..=1.0).contains(&dfq.alpha) {
                return Err(PadError::param("dfq alpha must lie in [-1, 1]"));
            }
            if !(dfq.scale.is_finite() && dfq.scale > 0.0) {
                return Err(PadError::param("dfq scale must be positive"));
            }
        }
        if let Some(d) = self.ema_decay {
            if !(0.0..1.0).contains(&d) {
                return Err(PadError::param("ema_decay must lie in [0, 1)"));
            }
        }
        if let Some(p) = self.early_stop_patience {
            if p == 0 {
                return Err(PadError::param("early_stop_patience must be at least 1"));
            }
        }
        if let Some(ts) = &self.two_stage {
            if ts.stage1_batch == 0 || ts.stage2_batch == 0 {
                return Err(PadError::param("two-stage batch sizes must be positive"));
            }
            if ts.stage1_epochs == 0 || ts.stage2_max_epochs == 0 {
                return Err(PadError::param("two-stage epoch counts must be positive"));
            }
            if !(ts.loss_threshold.is_finite() && ts.loss_threshold > 0.0) {
                return Err(PadError::param("loss_threshold must be positive"));
            }
        }
        Ok(())
    }
}

/// Feature-bearing records split into the training pool and the dev set.
#[derive(Debug, Clone)]
pub struct TrainData {
    pub train: Vec<SampleRecord>,
    pub dev: Vec<SampleRecord>,
}

impl TrainData {
    /// Validate features (present, uniform dimension) and class coverage.
    pub fn new(train: Vec<SampleRecord>, dev: Vec<SampleRecord>) -> Result<Self> {
        let data = TrainData { train, dev };
        data.check()?;
        Ok(data)
    }

    fn check(&self) -> Result<()> {
        if self.train.is_empty() || self.dev.is_empty() {
            return Err(PadError::param("both train and dev splits must be non-empty"));
        }
        let dim = self
            .train
            .first()
            .and_then(|r| r.feature.as_ref())
            .map(|f| f.len())
            .ok_or_else(|| PadError::param("training records must carry feature vectors"))?;
        for (split, records) in [("train", &self.train), ("dev", &self.dev)] {
            let mut bona = false;
            let mut attack = false;
            for r in records {
                let f = r.feature.as_ref().ok_or_else(|| {
                    PadError::param(format!(
                        "{split} sample {} has no feature vector",
                        r.sample_id.as_str()
                    ))
                })?;
                if f.len() != dim {
                    return Err(PadError::ShapeMismatch {
                        expected: dim.to_string(),
                        got: f.len().to_string(),
                    });
                }
                if !f.iter().all(|v| v.is_finite()) {
                    return Err(PadError::param(format!(
                        "{split} sample {} has non-finite features",
                        r.sample_id.as_str()
                    )));
                }
                match r.label {
                    Label::Bonafide => bona = true,
                    Label::Attack => attack = true,
                }
            }
            if !bona || !attack {
                return Err(PadError::MissingClass {
                    context: format!("{split} split"),
                });
            }
        }
        Ok(())
    }

    /// Feature dimension shared by every record.
    pub fn feature_dim(&self) -> usize {
        self.train[0].feature.as_ref().map(|f| f.len()).unwrap_or(0)
    }

    /// Partition catalog records by a protocol manifest's train/dev splits.
    pub fn from_manifest(
        records: &[SampleRecord],
        manifest: &crate::dataset::ProtocolManifest,
    ) -> Result<Self> {
        let mut train = Vec::new();
        let mut dev = Vec::new();
        for r in records {
            match manifest.split_of(&r.sample_id) {
                Some(Split::Train) => train.push(r.clone()),
                Some(Split::Dev) => dev.push(r.clone()),
                _ => {}
            }
        }
        TrainData::new(train, dev)
    }
}

// ---------------------------------------------------------------------------
// Training loops
// ---------------------------------------------------------------------------

/// Dev-set metrics at the dev-derived equal-error threshold.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DevMetrics {
    pub acer: f64,
    pub apcer: f64,
    pub bpcer: f64,
    pub auc: f64,
    pub eer: f64,
    pub threshold: f64,
}

/// Compute [`DevMetrics`] for a scored, labeled set.
pub fn dev_metrics(scores: &[f64], labels: &[Label]) -> Result<DevMetrics> {
    let point = metrics::eer_threshold(scores, labels)?;
    let apcer = metrics::apcer(scores, labels, point.threshold)?;
    let bpcer = metrics::bpcer(scores, labels, point.threshold)?;
    Ok(DevMetrics {
        acer: metrics::acer(apcer, bpcer),
        apcer,
        bpcer,
        auc: metrics::auc(scores, labels)?,
        eer: point.eer,
        threshold: point.threshold,
    })
}

/// One epoch's log line.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub lr: f64,
    /// Mean composite loss over the epoch, weighted by batch size.
    pub loss: f64,
    /// Mean unweighted loss components over the epoch.
    pub components: BTreeMap<String, f64>,
    pub dev: DevMetrics,
    /// Roster-expansion rate at the start of the epoch, when progressive
    /// training is active.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub pts_rate: Option<f64>,
    /// Samples still outside the roster at the end of the epoch.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub pts_pending: Option<usize>,
    /// Queue occupancy at the end of the epoch.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dfq_len: Option<usize>,
}

/// A finished single-stage run.
#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub model: TinyModel,
    pub history: Vec<EpochRecord>,
}

/// A finished two-stage run.
#[derive(Debug, Clone)]
pub struct TwoStageOutcome {
    pub model: TinyModel,
    pub stage1: Vec<EpochRecord>,
    pub stage2: Vec<EpochRecord>,
    pub stage1_batch: usize,
    pub stage2_batch: usize,
    /// Whether stage 2 drove the epoch loss under the configured threshold.
    pub threshold_met: bool,
}

/// Mutable loop state shared between the stages of a run.
struct LoopState {
    optimizer: OptimizerState,
    pts: Option<PtsState>,
    dfq: Option<DfqState>,
    ema: Option<Vec<f64>>,
}

/// Train a fresh model with the configured recipe and strategies.
pub fn train(config: &TrainConfig, data: &TrainData) -> Result<TrainOutcome> {
    config.validate()?;
    check_dims(config, data)?;
    let mut model = TinyModel::new(
        config.recipe,
        config.feature_dim,
        config.hidden_dim,
        config.seed,
    )?;
    let mut state = init_loop_state(config, data, &model)?;
    let history = run_stage(
        &mut model,
        &mut state,
        config,
        data,
        config.epochs,
        config.batch_size,
        None,
        0,
    )?;
    finish_ema(&mut model, &state);
    Ok(TrainOutcome { model, history })
}

/// Two-stage fine-tuning: heads only, then everything until convergence.
///
/// Stage 2 starts a fresh optimizer (the stage-1 moment buffers describe a
/// different trainable set) and stops at the first epoch whose mean loss
/// falls below the threshold.
pub fn two_stage_train(config: &TrainConfig, data: &TrainData) -> Result<TwoStageOutcome> {
    config.validate()?;
    check_dims(config, data)?;
    let ts = config
        .two_stage
        .ok_or_else(|| PadError::param("two_stage_train requires config.two_stage"))?;
    let mut model = TinyModel::new(
        config.recipe,
        config.feature_dim,
        config.hidden_dim,
        config.seed,
    )?;
    let mut state = init_loop_state(config, data, &model)?;
    let stage1 = run_stage(
        &mut model,
        &mut state,
        config,
        data,
        ts.stage1_epochs,
        ts.stage1_batch,
        None,
        0,
    )?;
    model.unfreeze_all();
    let mut state2 = init_loop_state(config, data, &model)?;
    state2.pts = state.pts.take();
    state2.dfq = state.dfq.take();
    let stage2 = run_stage(
        &mut model,
        &mut state2,
        config,
        data,
        ts.stage2_max_epochs,
        ts.stage2_batch,
        Some(ts.loss_threshold),
        1,
    )?;
    finish_ema(&mut model, &state2);
    let threshold_met = stage2
        .last()
        .map(|r| r.loss < ts.loss_threshold)
        .unwrap_or(false);
    Ok(TwoStageOutcome {
        model,
        stage1,
        stage2,
        stage1_batch: ts.stage1_batch,
        stage2_batch: ts.stage2_batch,
        threshold_met,
    })
}

fn check_dims(config: &TrainConfig, data: &TrainData) -> Result<()> {
    data.check()?;
    if data.feature_dim() != config.feature_dim {
        return Err(PadError::ShapeMismatch {
            expected: config.feature_dim.to_string(),
            got: data.feature_dim().to_string(),
        });
    }
    Ok(())
}

fn init_loop_state(config: &TrainConfig, data: &TrainData, model: &TinyModel) -> Result<LoopState> {
    let optimizer = OptimizerState::new(config.optimizer, model.params())?;
    let pts = match &config.pts {
        Some(p) => {
            let roster: Vec<(SampleId, Label)> = data
                .train
                .iter()
                .map(|r| (r.sample_id.clone(), r.label))
                .collect();
            Some(pts_init(
                &roster,
                p.initial_rate,
                p.decay,
                config.seed.wrapping_add(1),
            )?)
        }
        None => None,
    };
    let dfq = match &config.dfq {
        Some(d) => {
            // Seed the negative center with the mean normalized attack
            // feature so the first cosine logits are meaningful.
            let mut sum = vec![0.0; model.hidden_dim()];
            let mut count = 0usize;
            for r in data.train.iter().filter(|r| r.label == Label::Attack) {
                let e = model.embed(r.feature.as_ref().expect("validated"))?;
                let norm = l2_norm(&e);
                if norm > 0.0 {
                    for (s, v) in sum.iter_mut().zip(&e) {
                        *s += v / norm;
                    }
                    count += 1;
                }
            }
            if count == 0 {
                return Err(PadError::MissingClass {
                    context: "feature queue needs attack samples".to_string(),
                });
            }
            Some(DfqState::new(&sum, d.capacity, d.alpha)?)
        }
        None => None,
    };
    let ema = config.ema_decay.map(|_| model.params().flatten());
    Ok(LoopState {
        optimizer,
        pts,
        dfq,
        ema,
    })
}

/// Copy the shadow weights into the model at the end of a run.
fn finish_ema(model: &mut TinyModel, state: &LoopState) {
    if let Some(shadow) = &state.ema {
        model
            .params_mut()
            .assign_flat(shadow)
            .expect("shadow layout matches");
    }
}

/// The model used for evaluation: the shadow copy under EMA, else the live one.
fn eval_model(model: &TinyModel, state: &LoopState) -> TinyModel {
    match &state.ema {
        Some(shadow) => {
            let mut m = model.clone();
            m.params_mut()
                .assign_flat(shadow)
                .expect("shadow layout matches");
            m
        }
        None => model.clone(),
    }
}

#[allow(clippy::too_many_arguments)]
fn run_stage(
    model: &mut TinyModel,
    state: &mut LoopState,
    config: &TrainConfig,
    data: &TrainData,
    epochs: usize,
    batch_size: usize,
    loss_stop: Option<f64>,
    stage: u64,
) -> Result<Vec<EpochRecord>> {
    let index: BTreeMap<&SampleId, &SampleRecord> =
        data.train.iter().map(|r| (&r.sample_id, r)).collect();
    let dev_features: Vec<Vec<f64>> = data
        .dev
        .iter()
        .map(|r| r.feature.clone().expect("validated"))
        .collect();
    let dev_labels: Vec<Label> = data.dev.iter().map(|r| r.label).collect();
    let stream_base = 10_000 + stage * 40_000;
    let mut history: Vec<EpochRecord> = Vec::with_capacity(epochs);
    let mut acer_history: Vec<f64> = Vec::new();

    for epoch in 0..epochs {
        let lr = lr_at(&config.schedule, epoch);
        state.optimizer.set_lr(lr);
        let pts_rate = state.pts.as_ref().map(|p| p.rate());

        // Epoch roster: the progressive subset when active, else everything.
        let pool: Vec<&SampleRecord> = match &state.pts {
            Some(p) => p
                .train_ids()
                .iter()
                .map(|id| *index.get(id).expect("roster ids come from the pool"))
                .collect(),
            None => data.train.iter().collect(),
        };
        let mut order: Vec<usize> = (0..pool.len()).collect();
        order.shuffle(&mut stream_rng(config.seed, stream_base + epoch as u64));

        let mut loss_sum = 0.0;
        let mut comp_sums: BTreeMap<String, f64> = BTreeMap::new();
        let mut item_count = 0usize;

        if config.recipe == Recipe::Ctel {
            // Mixed batches: labeled training-band halves paired with an
            // equal number of unlabeled dev-band samples (cycled).
            let half = (batch_size / 2).max(1);
            let mut dev_order: Vec<usize> = (0..data.dev.len()).collect();
            dev_order.shuffle(&mut stream_rng(
                config.seed,
                stream_base + 20_000 + epoch as u64,
            ));
            let mut dev_cursor = 0usize;
            for chunk in order.chunks(half) {
                let mut batch = Vec::with_capacity(chunk.len() * 2);
                for &i in chunk {
                    batch.push(TrainItem::from_record(pool[i])?);
                }
                for _ in 0..chunk.len() {
                    let r = &data.dev[dev_order[dev_cursor % dev_order.len()]];
                    dev_cursor += 1;
                    batch.push(TrainItem {
                        feature: r.feature.clone().expect("validated"),
                        label: None,
                        domain: Domain::DevBand,
                    });
                }
                step_batch(model, state, config, &batch, &mut loss_sum, &mut comp_sums)?;
                item_count += batch.len();
            }
        } else {
            for chunk in order.chunks(batch_size) {
                let mut batch = Vec::with_capacity(chunk.len());
                for &i in chunk {
                    batch.push(TrainItem::from_record(pool[i])?);
                }
                step_batch(model, state, config, &batch, &mut loss_sum, &mut comp_sums)?;
                item_count += batch.len();
            }
        }

        let evaluator = eval_model(model, state);
        let dev_scores = par::try_map_ordered(&dev_features, |f| evaluator.score(f))?;
        let dev = dev_metrics(&dev_scores, &dev_labels)?;

        // Re-score the pending pool and expand the roster for the next epoch.
        if let Some(pts) = &state.pts {
            if !pts.is_exhausted() {
                let pending: Vec<&SampleId> = pts.pending_ids().iter().collect();
                let mut scores = BTreeMap::new();
                for id in pending {
                    let r = index.get(id).expect("pending ids come from the pool");
                    let s = evaluator.score(r.feature.as_ref().expect("validated"))?;
                    scores.insert((*id).clone(), s);
                }
                state.pts = Some(pts_step(pts, &scores)?);
            }
        }

        let n = item_count.max(1) as f64;
        let components: BTreeMap<String, f64> =
            comp_sums.iter().map(|(k, v)| (k.clone(), v / n)).collect();
        let loss = loss_sum / n;
        let record = EpochRecord {
            epoch,
            lr,
            loss,
            components,
            dev,
            pts_rate,
            pts_pending: state.pts.as_ref().map(|p| p.pending_ids().len()),
            dfq_len: state.dfq.as_ref().map(|d| d.queue().len()),
        };
        acer_history.push(record.dev.acer);
        history.push(record);

        if let Some(threshold) = loss_stop {
            if loss < threshold {
                break;
            }
        }
        if let Some(patience) = config.early_stop_patience {
            if early_stop(&acer_history, patience)? {
                break;
            }
        }
    }
    Ok(history)
}

/// One gradient step plus the sequential strategy updates that follow it.
fn step_batch(
    model: &mut TinyModel,
    state: &mut LoopState,
    config: &TrainConfig,
    batch: &[TrainItem],
    loss_sum: &mut f64,
    comp_sums: &mut BTreeMap<String, f64>,
) -> Result<()> {
    let scale = config.dfq.map(|d| d.scale).unwrap_or(losses::DEFAULT_COSINE_SCALE);
    let ctx = LossCtx {
        grl_lambda: config.grl_lambda,
        focal_gamma: config.focal_gamma,
        label_smoothing: config.label_smoothing,
        dfq: state.dfq.as_ref().map(|d| (d, scale)),
    };
    let eval = forward_backward(model, batch, &ctx)?;
    let frozen = model.frozen.clone();
    optimizer_step(&mut state.optimizer, model.params_mut(), &eval.grads, &frozen)?;
    model.renormalize_sub_centers();
    if let Some(dfq) = &mut state.dfq {
        // Queue/center updates are applied in batch order after the step;
        // the loss above saw the batch-start snapshot.
        let mut next = dfq.clone();
        for ev in &eval.dfq_events {
            next = dfq_update(&next, &ev.embedding, ev.log0)?;
            next = dfq_update_center(&next, &ev.embedding)?;
        }
        *dfq = next;
    }
    if let (Some(decay), Some(shadow)) = (config.ema_decay, &mut state.ema) {
        *shadow = ema_update(shadow, &model.params().flatten(), decay)?;
    }
    let n = batch.len() as f64;
    *loss_sum += eval.total * n;
    for (k, v) in &eval.components {
        *comp_sums.entry(k.clone()).or_insert(0.0) += v * n;
    }
    Ok(())
}

// ---------------------------------------------------------------------------
// Prediction
// ---------------------------------------------------------------------------

/// Score one feature vector, optionally averaging with its reversed copy
/// (the fixed-feature analogue of horizontal-flip test-time augmentation).
pub fn predict_one(model: &TinyModel, feature: &[f64], tta: bool) -> Result<f64> {
    let plain = model.score(feature)?;
    if !tta {
        return Ok(plain);
    }
    let reversed: Vec<f64> = feature.iter().rev().copied().collect();
    let flipped = model.score(&reversed)?;
    tta_flip_average(plain, flipped, DEFAULT_TTA_WEIGHTS)
}

/// Score a batch of feature vectors; order is preserved.
pub fn predict(model: &TinyModel, features: &[Vec<f64>], tta: bool) -> Result<Vec<f64>> {
    par::try_map_ordered(features, |f| predict_one(model, f, tta))
}

// ---------------------------------------------------------------------------
// History IO
// ---------------------------------------------------------------------------

/// Write epoch records as JSON Lines.
pub fn write_history<W: Write>(mut writer: W, history: &[EpochRecord]) -> Result<()> {
    for record in history {
        serde_json::to_writer(&mut writer, record)?;
        writer.write_all(b"\n")?;
    }
    Ok(())
}

/// Read epoch records written by [`write_history`].
pub fn read_history<R: BufRead>(reader: R) -> Result<Vec<EpochRecord>> {
    let mut out = Vec::new();
    for line in reader.lines() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(serde_json::from_str(&line)?);
    }
    Ok(out)
}
