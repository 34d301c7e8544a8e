//! Training-time control algorithms: the progressive training curriculum
//! (PTS), the dynamic feature queue (DFQ), learning-rate schedules,
//! exponential moving averages, and early stopping.
//!
//! `PtsState` and `DfqState` are single-writer state machines — the training
//! loop owns them and every transition returns a fresh state — while the
//! schedule and EMA operations are pure functions. All states serialize to
//! JSON so runs can be snapshotted and resumed.

use std::collections::{BTreeMap, BTreeSet, VecDeque};

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::dataset::{Label, SampleId};
use crate::error::{PadError, Result};

/// Default feature-queue capacity.
pub const DFQ_DEFAULT_CAPACITY: usize = 64;
/// Default cosine-similarity threshold for enqueueing.
pub const DFQ_DEFAULT_ALPHA: f64 = 0.5;

// ---------------------------------------------------------------------------
// Progressive training strategy
// ---------------------------------------------------------------------------

/// Curriculum state: which samples are already in the training pool, which
/// are still pending, and the (decaying) per-step admission rate.
///
/// Invariant: `train_ids` and `pending_ids` are disjoint and together cover
/// every sample the state was initialized with, after every step.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PtsState {
    train_ids: BTreeSet<SampleId>,
    pending_ids: BTreeSet<SampleId>,
    labels: BTreeMap<SampleId, Label>,
    rate: f64,
    decay: f64,
}

impl PtsState {
    pub fn train_ids(&self) -> &BTreeSet<SampleId> {
        &self.train_ids
    }
    pub fn pending_ids(&self) -> &BTreeSet<SampleId> {
        &self.pending_ids
    }
    pub fn rate(&self) -> f64 {
        self.rate
    }
    pub fn decay(&self) -> f64 {
        self.decay
    }
    pub fn label_of(&self, id: &SampleId) -> Option<Label> {
        self.labels.get(id).copied()
    }
    /// True once every sample has been admitted to the training pool.
    pub fn is_exhausted(&self) -> bool {
        self.pending_ids.is_empty()
    }

    #[cfg(debug_assertions)]
    fn assert_partition(&self) {
        assert!(self.train_ids.is_disjoint(&self.pending_ids));
        assert_eq!(self.train_ids.len() + self.pending_ids.len(), self.labels.len());
    }
    #[cfg(not(debug_assertions))]
    fn assert_partition(&self) {}
}

/// Start the curriculum: admit `⌊initial_rate · n_c⌋` samples of each class
/// `c`, drawn uniformly without replacement; the rest go to pending.
///
/// `decay` multiplies the admission rate after every [`pts_step`].
pub fn pts_init(
    samples: &[(SampleId, Label)],
    initial_rate: f64,
    decay: f64,
    seed: u64,
) -> Result<PtsState> {
    if !(initial_rate.is_finite() && initial_rate > 0.0 && initial_rate <= 1.0) {
        return Err(PadError::param(format!("initial rate {initial_rate} outside (0, 1]")));
    }
    if !(decay.is_finite() && decay > 0.0 && decay <= 1.0) {
        return Err(PadError::param(format!("decay {decay} outside (0, 1]")));
    }
    let mut labels = BTreeMap::new();
    for (id, label) in samples {
        if labels.insert(id.clone(), *label).is_some() {
            return Err(PadError::param(format!("duplicate sample id {id}")));
        }
    }
    let mut by_class: [Vec<SampleId>; 2] = [Vec::new(), Vec::new()];
    for (id, label) in samples {
        by_class[matches!(label, Label::Attack) as usize].push(id.clone());
    }
    for (class, ids) in by_class.iter().enumerate() {
        if ids.is_empty() {
            return Err(PadError::MissingClass {
                context: format!(
                    "pts_init needs both classes, class {} is empty",
                    if class == 0 { "bonafide" } else { "attack" }
                ),
            });
        }
    }
    let mut rng = crate::seeding::stream_rng(seed, 0);
    let mut train_ids = BTreeSet::new();
    for ids in by_class.iter_mut() {
        let quota = (initial_rate * ids.len() as f64).floor() as usize;
        ids.shuffle(&mut rng);
        train_ids.extend(ids.iter().take(quota).cloned());
    }
    let pending_ids = labels
        .keys()
        .filter(|id| !train_ids.contains(*id))
        .cloned()
        .collect();
    let state = PtsState { train_ids, pending_ids, labels, rate: initial_rate, decay };
    state.assert_partition();
    Ok(state)
}

/// One curriculum step. `pending_scores` must cover exactly the pending ids
/// (liveness scores: higher = more bonafide). The hardest samples move to
/// the training pool — the `⌈rate·|pending positives|⌉` **lowest-scoring**
/// bonafide samples and the `⌈rate·|pending negatives|⌉` **highest-scoring**
/// attacks — then the rate decays.
///
/// Score ties are broken by sample id so the step is deterministic.
pub fn pts_step(state: &PtsState, pending_scores: &BTreeMap<SampleId, f64>) -> Result<PtsState> {
    let missing = state
        .pending_ids
        .iter()
        .filter(|id| !pending_scores.contains_key(*id))
        .count();
    let extra = pending_scores
        .keys()
        .filter(|id| !state.pending_ids.contains(*id))
        .count();
    if missing > 0 || extra > 0 {
        return Err(PadError::IdMismatch { context: "pts_step scores".into(), missing, extra });
    }
    if let Some((id, score)) = pending_scores.iter().find(|(_, s)| !s.is_finite()) {
        return Err(PadError::param(format!("score for {id} is not finite: {score}")));
    }

    let mut positives: Vec<(&SampleId, f64)> = Vec::new();
    let mut negatives: Vec<(&SampleId, f64)> = Vec::new();
    for id in &state.pending_ids {
        let score = pending_scores[id];
        match state.labels[id] {
            Label::Bonafide => positives.push((id, score)),
            Label::Attack => negatives.push((id, score)),
        }
    }
    // Hard positives score low; take the ascending prefix.
    positives.sort_by(|a, b| a.1.total_cmp(&b.1).then_with(|| a.0.cmp(b.0)));
    // Hard negatives score high; take the descending prefix.
    negatives.sort_by(|a, b| b.1.total_cmp(&a.1).then_with(|| a.0.cmp(b.0)));

    let mut next = state.clone();
    for (pool, quota) in [
        (&positives, (state.rate * positives.len() as f64).ceil() as usize),
        (&negatives, (state.rate * negatives.len() as f64).ceil() as usize),
    ] {
        for (id, _) in pool.iter().take(quota) {
            next.pending_ids.remove(*id);
            next.train_ids.insert((*id).clone());
        }
    }
    next.rate = state.rate * state.decay;
    next.assert_partition();
    Ok(next)
}

// ---------------------------------------------------------------------------
// Dynamic feature queue
// ---------------------------------------------------------------------------

/// Queue of hard-negative feature directions plus the negative-class center.
///
/// The queue holds at most `capacity` unit vectors in FIFO order; the center
/// is the running mean of the (normalized) negative features it has been fed,
/// re-normalized to unit length.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DfqState {
    center_sum: Vec<f64>,
    center_count: u64,
    queue: VecDeque<Vec<f64>>,
    capacity: usize,
    alpha: f64,
}

fn l2_norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

fn normalized(v: &[f64], context: &str) -> Result<Vec<f64>> {
    let norm = l2_norm(v);
    if norm == 0.0 || !norm.is_finite() {
        return Err(PadError::ZeroVector { context: context.into() });
    }
    Ok(v.iter().map(|x| x / norm).collect())
}

fn cosine(a: &[f64], b: &[f64]) -> f64 {
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    dot / (l2_norm(a) * l2_norm(b))
}

impl DfqState {
    /// Seed the queue with an initial center direction (normalized here),
    /// an empty queue of the given capacity, and the enqueue threshold.
    pub fn new(initial_center: &[f64], capacity: usize, alpha: f64) -> Result<Self> {
        if capacity == 0 {
            return Err(PadError::param("queue capacity must be positive"));
        }
        if !(-1.0..=1.0).contains(&alpha) || !alpha.is_finite() {
            return Err(PadError::param(format!("alpha {alpha} outside [-1, 1]")));
        }
        let center_sum = normalized(initial_center, "dfq initial center")?;
        Ok(DfqState { center_sum, center_count: 1, queue: VecDeque::new(), capacity, alpha })
    }

    /// Defaults: capacity 64, alpha 0.5.
    pub fn with_defaults(initial_center: &[f64]) -> Result<Self> {
        DfqState::new(initial_center, DFQ_DEFAULT_CAPACITY, DFQ_DEFAULT_ALPHA)
    }

    /// The unit-norm negative-class center.
    pub fn center(&self) -> Vec<f64> {
        let norm = l2_norm(&self.center_sum);
        self.center_sum.iter().map(|x| x / norm).collect()
    }
    pub fn queue(&self) -> &VecDeque<Vec<f64>> {
        &self.queue
    }
    pub fn capacity(&self) -> usize {
        self.capacity
    }
    pub fn alpha(&self) -> f64 {
        self.alpha
    }
}

/// Cosine logits of a feature: `log0` against the negative-class center,
/// `log1` the maximum over the queue — or the sentinel `−1` (the cosine
/// minimum) while the queue is still empty.
pub fn dfq_logits(feature: &[f64], state: &DfqState) -> Result<(f64, f64)> {
    if feature.len() != state.center_sum.len() {
        return Err(PadError::ShapeMismatch {
            expected: format!("feature dim {}", state.center_sum.len()),
            got: format!("{}", feature.len()),
        });
    }
    if l2_norm(feature) == 0.0 {
        return Err(PadError::ZeroVector { context: "dfq_logits feature".into() });
    }
    let center = state.center();
    let log0 = cosine(feature, &center);
    let log1 = state
        .queue
        .iter()
        .map(|q| cosine(feature, q))
        .fold(f64::NEG_INFINITY, f64::max);
    let log1 = if state.queue.is_empty() { -1.0 } else { log1 };
    Ok((log0, log1))
}

/// [`dfq_logits`] scaled by `s`, the form fed to cross-entropy.
pub fn dfq_scaled_logits(feature: &[f64], state: &DfqState, scale: f64) -> Result<(f64, f64)> {
    let (log0, log1) = dfq_logits(feature, state)?;
    Ok((scale * log0, scale * log1))
}

/// Queue transition for a negative sample's feature: if `log0 < alpha` the
/// normalized feature is enqueued (evicting the FIFO head beyond capacity);
/// otherwise the state is returned unchanged.
pub fn dfq_update(state: &DfqState, feature: &[f64], log0: f64) -> Result<DfqState> {
    if log0 >= state.alpha {
        return Ok(state.clone());
    }
    let mut next = state.clone();
    next.queue.push_back(normalized(feature, "dfq_update feature")?);
    if next.queue.len() > next.capacity {
        next.queue.pop_front();
    }
    Ok(next)
}

/// Fold one more negative feature into the running center mean.
pub fn dfq_update_center(state: &DfqState, feature: &[f64]) -> Result<DfqState> {
    let unit = normalized(feature, "dfq_update_center feature")?;
    let mut next = state.clone();
    for (s, u) in next.center_sum.iter_mut().zip(&unit) {
        *s += u;
    }
    next.center_count += 1;
    if l2_norm(&next.center_sum) == 0.0 {
        return Err(PadError::ZeroVector { context: "dfq center sum cancelled to zero".into() });
    }
    Ok(next)
}

// ---------------------------------------------------------------------------
// Learning-rate schedules
// ---------------------------------------------------------------------------

/// A learning-rate schedule; [`lr_at`] is pure in `(schedule, epoch)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum LrSchedule {
    /// Linear warmup to `lr0`, then cosine decay to exactly `0.01·lr0` at
    /// the final epoch.
    CosineWarmup { lr0: f64, warmup_epochs: usize, total_epochs: usize },
    /// Triangular wave from `lr_min` up to `lr_max` and back over `period`
    /// epochs.
    Cyclic { lr_min: f64, lr_max: f64, period: usize },
    /// `lr0 · factor^⌊epoch / every⌋`.
    StepDecay { lr0: f64, factor: f64, every: usize },
    /// Cosine decay from `peak` to `lr_min` over `total_epochs`; with
    /// `cycle_decay` set, the schedule warm-restarts each cycle at a
    /// peak multiplied by that factor.
    CosineAnnealing { peak: f64, lr_min: f64, total_epochs: usize, cycle_decay: Option<f64> },
}

impl LrSchedule {
    /// Check the parameters once (typically right after deserializing).
    pub fn validate(&self) -> Result<()> {
        let positive = |v: f64, what: &str| -> Result<()> {
            if !(v.is_finite() && v > 0.0) {
                return Err(PadError::param(format!("{what} must be positive, got {v}")));
            }
            Ok(())
        };
        match self {
            LrSchedule::CosineWarmup { lr0, warmup_epochs, total_epochs } => {
                positive(*lr0, "lr0")?;
                if *total_epochs <= warmup_epochs + 1 {
                    return Err(PadError::param(format!(
                        "cosine warmup needs total_epochs > warmup_epochs + 1 \
                         (got {total_epochs} and {warmup_epochs})"
                    )));
                }
            }
            LrSchedule::Cyclic { lr_min, lr_max, period } => {
                positive(*lr_min, "lr_min")?;
                positive(*lr_max, "lr_max")?;
                if lr_max <= lr_min {
                    return Err(PadError::param("cyclic needs lr_max > lr_min"));
                }
                if *period < 2 || period % 2 != 0 {
                    return Err(PadError::param(format!(
                        "cyclic period must be even and at least 2, got {period}"
                    )));
                }
            }
            LrSchedule::StepDecay { lr0, factor, every } => {
                positive(*lr0, "lr0")?;
                positive(*factor, "factor")?;
                if *factor > 1.0 {
                    return Err(PadError::param("step decay factor must be at most 1"));
                }
                if *every == 0 {
                    return Err(PadError::param("step decay interval must be positive"));
                }
            }
            LrSchedule::CosineAnnealing { peak, lr_min, total_epochs, cycle_decay } => {
                positive(*peak, "peak")?;
                if !(lr_min.is_finite() && *lr_min >= 0.0) || lr_min >= peak {
                    return Err(PadError::param(format!(
                        "cosine annealing needs 0 <= lr_min < peak, got {lr_min} and {peak}"
                    )));
                }
                if *total_epochs < 2 {
                    return Err(PadError::param("cosine annealing needs at least 2 epochs"));
                }
                if let Some(d) = cycle_decay {
                    if !(d.is_finite() && *d > 0.0 && *d <= 1.0) {
                        return Err(PadError::param(format!("cycle decay {d} outside (0, 1]")));
                    }
                }
            }
        }
        Ok(())
    }

    /// Schedule used when a recipe's write-up gives the range but not the
    /// period: triangular between 1e-5 and 2e-3 over ten epochs.
    pub fn cyclic_default() -> LrSchedule {
        LrSchedule::Cyclic { lr_min: 1e-5, lr_max: 2e-3, period: 10 }
    }
}

/// Learning rate at an epoch (0-based). Epochs beyond a schedule's horizon
/// clamp to its final value.
pub fn lr_at(schedule: &LrSchedule, epoch: usize) -> f64 {
    debug_assert!(schedule.validate().is_ok(), "invalid schedule: {schedule:?}");
    match *schedule {
        LrSchedule::CosineWarmup { lr0, warmup_epochs, total_epochs } => {
            let floor = 0.01 * lr0;
            if epoch < warmup_epochs {
                return lr0 * (epoch + 1) as f64 / (warmup_epochs + 1) as f64;
            }
            if epoch >= total_epochs - 1 {
                return floor;
            }
            let span = (total_epochs - 1 - warmup_epochs) as f64;
            let progress = (epoch - warmup_epochs) as f64 / span;
            floor + 0.5 * (lr0 - floor) * (1.0 + (std::f64::consts::PI * progress).cos())
        }
        LrSchedule::Cyclic { lr_min, lr_max, period } => {
            let p = epoch % period;
            let half = period / 2;
            let tri = if p <= half {
                p as f64 / half as f64
            } else {
                (period - p) as f64 / half as f64
            };
            lr_min + (lr_max - lr_min) * tri
        }
        LrSchedule::StepDecay { lr0, factor, every } => lr0 * factor.powi((epoch / every) as i32),
        LrSchedule::CosineAnnealing { peak, lr_min, total_epochs, cycle_decay } => {
            let (cycle, e) = match cycle_decay {
                Some(_) => (epoch / total_epochs, epoch % total_epochs),
                None => (0, epoch.min(total_epochs - 1)),
            };
            let cycle_peak = peak * cycle_decay.unwrap_or(1.0).powi(cycle as i32);
            let progress = e as f64 / (total_epochs - 1) as f64;
            lr_min + 0.5 * (cycle_peak - lr_min) * (1.0 + (std::f64::consts::PI * progress).cos())
        }
    }
}

// ---------------------------------------------------------------------------
// EMA and early stopping
// ---------------------------------------------------------------------------

/// One exponential-moving-average update: `decay·ema + (1−decay)·params`.
pub fn ema_update(ema_params: &[f64], params: &[f64], decay: f64) -> Result<Vec<f64>> {
    if ema_params.len() != params.len() {
        return Err(PadError::ShapeMismatch {
            expected: format!("params of length {}", ema_params.len()),
            got: format!("{}", params.len()),
        });
    }
    if !(decay.is_finite() && (0.0..1.0).contains(&decay)) {
        return Err(PadError::param(format!("ema decay {decay} outside [0, 1)")));
    }
    Ok(ema_params
        .iter()
        .zip(params)
        .map(|(e, p)| decay * e + (1.0 - decay) * p)
        .collect())
}

/// Early-stopping rule on a lower-is-better history: stop once the best
/// value has not improved for `patience` consecutive epochs — i.e. the
/// *first* occurrence of the minimum lies at least `patience` epochs back.
pub fn early_stop(history: &[f64], patience: usize) -> Result<bool> {
    if history.is_empty() {
        return Err(PadError::param("early_stop needs a nonempty history"));
    }
    if patience == 0 {
        return Err(PadError::param("patience must be at least 1"));
    }
    if let Some(v) = history.iter().find(|v| !v.is_finite()) {
        return Err(PadError::param(format!("history contains non-finite value {v}")));
    }
    let mut best_idx = 0;
    for (i, v) in history.iter().enumerate() {
        if *v < history[best_idx] {
            best_idx = i;
        }
    }
    Ok(history.len() - 1 - best_idx >= patience)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::Rng;

    fn sid(s: &str) -> SampleId {
        SampleId(s.to_string())
    }

    fn roster(n_pos: usize, n_neg: usize) -> Vec<(SampleId, Label)> {
        let mut out = Vec::new();
        for i in 0..n_pos {
            out.push((sid(&format!("p{i:03}")), Label::Bonafide));
        }
        for i in 0..n_neg {
            out.push((sid(&format!("n{i:03}")), Label::Attack));
        }
        out
    }

    #[test]
    fn full_rate_admits_everything() {
        let state = pts_init(&roster(5, 7), 1.0, 0.9, 1).unwrap();
        assert!(state.is_exhausted());
        assert_eq!(state.train_ids().len(), 12);
    }

    #[test]
    fn tenth_rate_on_hundred_per_class_takes_ten_each() {
        let state = pts_init(&roster(100, 100), 0.1, 0.9, 2).unwrap();
        let count = |label: Label| {
            state
                .train_ids()
                .iter()
                .filter(|id| state.label_of(id) == Some(label))
                .count()
        };
        assert_eq!(count(Label::Bonafide), 10);
        assert_eq!(count(Label::Attack), 10);
        assert_eq!(state.pending_ids().len(), 180);
    }

    #[test]
    fn same_seed_reproduces_the_selection() {
        let a = pts_init(&roster(40, 40), 0.3, 0.9, 7).unwrap();
        let b = pts_init(&roster(40, 40), 0.3, 0.9, 7).unwrap();
        assert_eq!(a, b);
        let c = pts_init(&roster(40, 40), 0.3, 0.9, 8).unwrap();
        assert_ne!(a.train_ids(), c.train_ids());
    }

    #[test]
    fn init_rejects_bad_inputs() {
        assert!(pts_init(&roster(0, 5), 0.5, 0.9, 1).is_err(), "no positives");
        assert!(pts_init(&roster(5, 0), 0.5, 0.9, 1).is_err(), "no negatives");
        assert!(pts_init(&roster(5, 5), 0.0, 0.9, 1).is_err(), "zero rate");
        assert!(pts_init(&roster(5, 5), 1.5, 0.9, 1).is_err(), "rate above 1");
        assert!(pts_init(&roster(5, 5), 0.5, 0.0, 1).is_err(), "zero decay");
        let mut dup = roster(2, 2);
        dup.push((sid("p000"), Label::Bonafide));
        assert!(pts_init(&dup, 0.5, 0.9, 1).is_err(), "duplicate id");
    }

    #[test]
    fn step_moves_the_hard_prefix_of_each_class() {
        // Start empty-ish: rate low enough that init admits nobody.
        let mut samples = roster(4, 2);
        samples.truncate(6);
        let state = pts_init(&samples, 0.1, 1.0, 3).unwrap();
        assert_eq!(state.train_ids().len(), 0, "floor(0.1*4) + floor(0.1*2) = 0");

        // Manually set up the published example: positives scored
        // (0.9, 0.2, 0.8, 0.1) at rate 0.5 → the 0.1 and 0.2 ids move.
        let state = PtsState { rate: 0.5, ..state };
        let mut scores = BTreeMap::new();
        for (id, s) in [("p000", 0.9), ("p001", 0.2), ("p002", 0.8), ("p003", 0.1)] {
            scores.insert(sid(id), s);
        }
        for (id, s) in [("n000", 0.3), ("n001", 0.6)] {
            scores.insert(sid(id), s);
        }
        let next = pts_step(&state, &scores).unwrap();
        let moved: BTreeSet<_> = next.train_ids().iter().map(|id| id.0.as_str()).collect();
        // ceil(0.5*4) = 2 lowest positives; ceil(0.5*2) = 1 highest negative.
        assert_eq!(moved, ["p001", "p003", "n001"].into_iter().collect());
        assert_eq!(next.pending_ids().len(), 3);
    }

    #[test]
    fn rate_follows_the_decay_closed_form() {
        let mut state = pts_init(&roster(30, 30), 0.5, 0.8, 4).unwrap();
        for k in 1..=6 {
            let scores: BTreeMap<SampleId, f64> = state
                .pending_ids()
                .iter()
                .enumerate()
                .map(|(i, id)| (id.clone(), i as f64 * 0.01))
                .collect();
            state = pts_step(&state, &scores).unwrap();
            let expected = 0.5 * 0.8f64.powi(k);
            assert!((state.rate() - expected).abs() < 1e-12, "step {k}: {}", state.rate());
        }
        // decay = 1 keeps the rate constant.
        let mut flat = pts_init(&roster(30, 30), 0.5, 1.0, 4).unwrap();
        let scores: BTreeMap<SampleId, f64> = flat
            .pending_ids()
            .iter()
            .map(|id| (id.clone(), 0.5))
            .collect();
        flat = pts_step(&flat, &scores).unwrap();
        assert_eq!(flat.rate(), 0.5);
    }

    #[test]
    fn step_rejects_score_maps_that_mismatch_pending() {
        let state = pts_init(&roster(3, 3), 0.2, 0.9, 5).unwrap();
        let mut scores: BTreeMap<SampleId, f64> = state
            .pending_ids()
            .iter()
            .map(|id| (id.clone(), 0.5))
            .collect();
        let (first, _) = scores.pop_first().unwrap();
        let err = pts_step(&state, &scores).unwrap_err();
        assert!(matches!(err, PadError::IdMismatch { .. }), "missing id: {err}");
        scores.insert(first, 0.5);
        scores.insert(sid("ghost"), 0.5);
        assert!(pts_step(&state, &scores).is_err(), "extra id");
        scores.remove(&sid("ghost"));
        *scores.values_mut().next().unwrap() = f64::NAN;
        assert!(pts_step(&state, &scores).is_err(), "non-finite score");
    }

    #[test]
    fn repeated_steps_drain_pending_and_keep_the_partition() {
        let mut rng = crate::seeding::stream_rng(41, 0);
        for (n_pos, n_neg, rate, decay) in
            [(5, 9, 0.3, 0.7), (12, 4, 0.5, 1.0), (7, 7, 0.9, 0.5), (1, 30, 0.2, 0.9)]
        {
            let samples = roster(n_pos, n_neg);
            let full: BTreeSet<SampleId> = samples.iter().map(|(id, _)| id.clone()).collect();
            let mut state = pts_init(&samples, rate, decay, 6).unwrap();
            let mut steps = 0;
            while !state.is_exhausted() {
                let scores: BTreeMap<SampleId, f64> = state
                    .pending_ids()
                    .iter()
                    .map(|id| (id.clone(), rng.random_range(0.0..1.0)))
                    .collect();

                // Oracle: per-class sorted prefix/suffix of the known sizes.
                let mut pos: Vec<_> = scores
                    .iter()
                    .filter(|(id, _)| state.label_of(id) == Some(Label::Bonafide))
                    .collect();
                let mut neg: Vec<_> = scores
                    .iter()
                    .filter(|(id, _)| state.label_of(id) == Some(Label::Attack))
                    .collect();
                pos.sort_by(|a, b| a.1.total_cmp(b.1).then_with(|| a.0.cmp(b.0)));
                neg.sort_by(|a, b| b.1.total_cmp(a.1).then_with(|| a.0.cmp(b.0)));
                let qp = (state.rate() * pos.len() as f64).ceil() as usize;
                let qn = (state.rate() * neg.len() as f64).ceil() as usize;
                let expected_moved: BTreeSet<SampleId> = pos
                    .iter()
                    .take(qp)
                    .chain(neg.iter().take(qn))
                    .map(|(id, _)| (*id).clone())
                    .collect();

                let next = pts_step(&state, &scores).unwrap();
                let moved: BTreeSet<SampleId> =
                    next.train_ids().difference(state.train_ids()).cloned().collect();
                assert_eq!(moved, expected_moved);

                // Partition invariant.
                assert!(next.train_ids().is_disjoint(next.pending_ids()));
                let union: BTreeSet<SampleId> =
                    next.train_ids().union(next.pending_ids()).cloned().collect();
                assert_eq!(union, full);
                assert!(next.rate() <= state.rate() + 1e-15);

                state = next;
                steps += 1;
                assert!(steps < 1000, "curriculum failed to drain");
            }
        }
    }

    #[test]
    fn pts_state_round_trips_through_json() {
        let state = pts_init(&roster(4, 4), 0.5, 0.8, 9).unwrap();
        let json = serde_json::to_string(&state).unwrap();
        let back: PtsState = serde_json::from_str(&json).unwrap();
        assert_eq!(state, back);
    }

    // -- DFQ ---------------------------------------------------------------

    #[test]
    fn center_similarity_of_the_center_itself_is_one() {
        let state = DfqState::with_defaults(&[3.0, 4.0]).unwrap();
        let (log0, log1) = dfq_logits(&state.center(), &state).unwrap();
        assert!((log0 - 1.0).abs() < 1e-12);
        assert_eq!(log1, -1.0, "empty queue sentinel");
        assert_eq!(state.capacity(), DFQ_DEFAULT_CAPACITY);
        assert_eq!(state.alpha(), DFQ_DEFAULT_ALPHA);
    }

    #[test]
    fn logits_reject_zero_or_misshapen_features() {
        let state = DfqState::with_defaults(&[1.0, 0.0]).unwrap();
        assert!(dfq_logits(&[0.0, 0.0], &state).is_err());
        assert!(dfq_logits(&[1.0], &state).is_err());
        assert!(DfqState::with_defaults(&[0.0, 0.0]).is_err(), "zero initial center");
        assert!(DfqState::new(&[1.0], 0, 0.5).is_err(), "zero capacity");
        assert!(DfqState::new(&[1.0], 8, 1.5).is_err(), "alpha out of range");
    }

    #[test]
    fn queue_max_matches_a_brute_force_scan() {
        let mut rng = crate::seeding::stream_rng(42, 0);
        let mut state = DfqState::new(&[1.0, 0.0, 0.0, 0.0], 32, 0.5).unwrap();
        let mut stored = Vec::new();
        for _ in 0..16 {
            let f: Vec<f64> = (0..4).map(|_| rng.random_range(-1.0..1.0)).collect();
            state = dfq_update(&state, &f, -1.0).unwrap(); // force enqueue
            stored.push(f);
        }
        let probe: Vec<f64> = (0..4).map(|_| rng.random_range(-1.0..1.0)).collect();
        let (_, log1) = dfq_logits(&probe, &state).unwrap();
        // Oracle normalizes both sides before the dot product.
        let pnorm = l2_norm(&probe);
        let oracle = stored
            .iter()
            .map(|f| {
                let fnorm = l2_norm(f);
                probe
                    .iter()
                    .zip(f)
                    .map(|(a, b)| (a / pnorm) * (b / fnorm))
                    .sum::<f64>()
            })
            .fold(f64::NEG_INFINITY, f64::max);
        assert!((log1 - oracle).abs() < 1e-12, "log1 {log1} oracle {oracle}");
    }

    #[test]
    fn high_similarity_leaves_the_state_unchanged() {
        let state = DfqState::with_defaults(&[1.0, 0.0]).unwrap();
        let next = dfq_update(&state, &[0.5, 0.5], 0.5).unwrap();
        assert_eq!(state, next, "log0 == alpha does not enqueue");
        let next = dfq_update(&state, &[0.5, 0.5], 0.9).unwrap();
        assert_eq!(state, next);
    }

    #[test]
    fn queue_is_fifo_with_capacity_eviction() {
        let capacity = 4;
        let mut state = DfqState::new(&[1.0, 0.0], capacity, 0.5).unwrap();
        let mut enqueued = Vec::new();
        for i in 0..capacity + 3 {
            let f = vec![1.0, i as f64];
            state = dfq_update(&state, &f, -1.0).unwrap();
            enqueued.push(normalized(&f, "test").unwrap());
            assert!(state.queue().len() <= capacity);
        }
        assert_eq!(state.queue().len(), capacity);
        // The queue holds exactly the last `capacity` entries, oldest first.
        let expected: Vec<_> = enqueued[enqueued.len() - capacity..].to_vec();
        let got: Vec<_> = state.queue().iter().cloned().collect();
        assert_eq!(got, expected);
    }

    #[test]
    fn thousand_step_fuzz_respects_the_alpha_rule() {
        let mut rng = crate::seeding::stream_rng(43, 0);
        let mut state = DfqState::new(&[1.0, 0.0, 0.0], 16, 0.5).unwrap();
        let mut expected_tail: Vec<Vec<f64>> = Vec::new();
        for _ in 0..1000 {
            let f: Vec<f64> = (0..3).map(|_| rng.random_range(-1.0..1.0)).collect();
            if l2_norm(&f) == 0.0 {
                continue;
            }
            let (log0, _) = dfq_logits(&f, &state).unwrap();
            state = dfq_update(&state, &f, log0).unwrap();
            if log0 < state.alpha() {
                expected_tail.push(normalized(&f, "test").unwrap());
            }
            assert!(state.queue().len() <= state.capacity());
            for q in state.queue() {
                assert!((l2_norm(q) - 1.0).abs() <= 1e-9, "stored vector not unit");
            }
            let tail_start = expected_tail.len().saturating_sub(state.capacity());
            let expected: Vec<_> = expected_tail[tail_start..].to_vec();
            let got: Vec<_> = state.queue().iter().cloned().collect();
            assert_eq!(got, expected, "queue must replay the enqueue trace");
        }
        assert_eq!(state.queue().len(), state.capacity(), "fuzz should fill the queue");
    }

    #[test]
    fn center_update_is_a_renormalized_running_mean() {
        let init = [2.0, 0.0];
        let mut state = DfqState::with_defaults(&init).unwrap();
        let feats = [vec![0.0, 3.0], vec![1.0, 1.0], vec![-0.5, 2.0]];
        let mut sum = normalized(&init, "test").unwrap();
        for f in &feats {
            state = dfq_update_center(&state, f).unwrap();
            for (s, u) in sum.iter_mut().zip(normalized(f, "test").unwrap()) {
                *s += u;
            }
        }
        let expected = normalized(&sum, "test").unwrap();
        for (c, e) in state.center().iter().zip(&expected) {
            assert!((c - e).abs() < 1e-12);
        }
        assert!((l2_norm(&state.center()) - 1.0).abs() < 1e-12);
        // The queue is untouched by center updates.
        assert!(state.queue().is_empty());
    }

    #[test]
    fn scaled_logits_multiply_by_s() {
        let state = DfqState::with_defaults(&[1.0, 0.0]).unwrap();
        let (l0, l1) = dfq_logits(&[1.0, 1.0], &state).unwrap();
        let (s0, s1) = dfq_scaled_logits(&[1.0, 1.0], &state, 16.0).unwrap();
        assert_eq!(s0, 16.0 * l0);
        assert_eq!(s1, 16.0 * l1);
    }

    // -- Schedules ----------------------------------------------------------

    #[test]
    fn cosine_warmup_ends_at_one_percent_exactly() {
        let schedule = LrSchedule::CosineWarmup { lr0: 0.1, warmup_epochs: 1, total_epochs: 50 };
        schedule.validate().unwrap();
        assert_eq!(lr_at(&schedule, 49), 0.01 * 0.1);
        assert_eq!(lr_at(&schedule, 120), 0.01 * 0.1, "clamps past the horizon");
        // Warmup epoch sits strictly below lr0; the first cosine epoch is lr0.
        assert!(lr_at(&schedule, 0) < 0.1);
        assert!((lr_at(&schedule, 1) - 0.1).abs() < 1e-15);
        // Monotone decrease across the cosine span.
        for e in 1..49 {
            assert!(lr_at(&schedule, e + 1) <= lr_at(&schedule, e) + 1e-18);
        }
    }

    #[test]
    fn cyclic_hits_both_extremes_each_period() {
        let schedule = LrSchedule::Cyclic { lr_min: 1e-5, lr_max: 2e-3, period: 10 };
        schedule.validate().unwrap();
        assert_eq!(lr_at(&schedule, 0), 1e-5);
        assert!((lr_at(&schedule, 5) - 2e-3).abs() < 1e-15);
        for e in 0..40 {
            assert_eq!(lr_at(&schedule, e), lr_at(&schedule, e + 10), "period 10");
            let lr = lr_at(&schedule, e);
            assert!((1e-5..=2e-3 + 1e-15).contains(&lr));
        }
        assert_eq!(LrSchedule::cyclic_default(), schedule);
    }

    #[test]
    fn step_decay_drops_by_its_factor_every_interval() {
        let schedule = LrSchedule::StepDecay { lr0: 1e-4, factor: 0.8, every: 20 };
        schedule.validate().unwrap();
        assert_eq!(lr_at(&schedule, 0), 1e-4);
        assert_eq!(lr_at(&schedule, 19), 1e-4);
        assert!((lr_at(&schedule, 20) - 8e-5).abs() < 1e-18);
        assert_eq!(lr_at(&schedule, 20), 1e-4 * 0.8);
        assert_eq!(lr_at(&schedule, 40), 1e-4 * 0.8 * 0.8);
    }

    #[test]
    fn cosine_annealing_reaches_its_floor_and_restarts() {
        let plain =
            LrSchedule::CosineAnnealing { peak: 0.05, lr_min: 0.0, total_epochs: 100, cycle_decay: None };
        plain.validate().unwrap();
        assert_eq!(lr_at(&plain, 0), 0.05);
        assert_eq!(lr_at(&plain, 99), 0.0, "floor of exactly 0 is reachable");
        assert_eq!(lr_at(&plain, 150), 0.0, "clamps past the horizon");
        for e in 0..99 {
            assert!(lr_at(&plain, e + 1) <= lr_at(&plain, e));
            assert!(lr_at(&plain, e) > 0.0, "positive before the floor");
        }
        let restarting = LrSchedule::CosineAnnealing {
            peak: 0.05,
            lr_min: 0.0,
            total_epochs: 10,
            cycle_decay: Some(0.5),
        };
        restarting.validate().unwrap();
        assert_eq!(lr_at(&restarting, 10), 0.025, "second cycle restarts at half peak");
        assert_eq!(lr_at(&restarting, 20), 0.0125);
        assert_eq!(lr_at(&restarting, 9), 0.0);
    }

    #[test]
    fn schedules_validate_and_round_trip_through_json() {
        let schedules = [
            LrSchedule::CosineWarmup { lr0: 0.1, warmup_epochs: 1, total_epochs: 50 },
            LrSchedule::cyclic_default(),
            LrSchedule::StepDecay { lr0: 1e-4, factor: 0.8, every: 20 },
            LrSchedule::CosineAnnealing {
                peak: 0.05,
                lr_min: 1e-6,
                total_epochs: 100,
                cycle_decay: Some(0.5),
            },
        ];
        for s in &schedules {
            let json = serde_json::to_string(s).unwrap();
            let back: LrSchedule = serde_json::from_str(&json).unwrap();
            assert_eq!(*s, back);
        }
        assert!(serde_json::to_string(&schedules[0]).unwrap().contains("cosine_warmup"));
        assert!(LrSchedule::CosineWarmup { lr0: 0.0, warmup_epochs: 1, total_epochs: 50 }
            .validate()
            .is_err());
        assert!(LrSchedule::Cyclic { lr_min: 1e-5, lr_max: 1e-6, period: 10 }.validate().is_err());
        assert!(LrSchedule::Cyclic { lr_min: 1e-5, lr_max: 2e-3, period: 7 }.validate().is_err());
        assert!(LrSchedule::StepDecay { lr0: 1e-4, factor: 1.2, every: 20 }.validate().is_err());
        assert!(LrSchedule::CosineAnnealing {
            peak: 0.05,
            lr_min: 0.1,
            total_epochs: 100,
            cycle_decay: None
        }
        .validate()
        .is_err());
    }

    // -- EMA and early stopping ----------------------------------------------

    #[test]
    fn zero_decay_copies_params() {
        let ema = ema_update(&[1.0, 2.0, 3.0], &[4.0, 5.0, 6.0], 0.0).unwrap();
        assert_eq!(ema, vec![4.0, 5.0, 6.0]);
        assert!(ema_update(&[1.0], &[1.0, 2.0], 0.5).is_err(), "shape mismatch");
        assert!(ema_update(&[1.0], &[2.0], 1.0).is_err(), "decay must stay below 1");
    }

    #[test]
    fn constant_params_converge_by_the_geometric_closed_form() {
        let decay = 0.9;
        let target = [2.0, -1.0];
        let mut ema = vec![10.0, 5.0];
        for k in 1..=60 {
            ema = ema_update(&ema, &target, decay).unwrap();
            // Closed form: d^k·ema0 + (1 − d^k)·target.
            let dk = decay.powi(k);
            for ((e, t), e0) in ema.iter().zip(&target).zip(&[10.0, 5.0]) {
                let expected = dk * e0 + (1.0 - dk) * t;
                assert!((e - expected).abs() < 1e-12, "step {k}");
            }
        }
        assert!((ema[0] - 2.0).abs() < 0.02, "converged near target");
    }

    #[test]
    fn early_stop_contract_holds_on_the_edges() {
        let improving: Vec<f64> = (0..40).map(|i| 1.0 / (i + 1) as f64).collect();
        for len in 1..=improving.len() {
            assert!(!early_stop(&improving[..len], 5).unwrap());
        }
        let flat = vec![0.3; 6];
        assert!(early_stop(&flat, 5).unwrap(), "flat history of length patience+1");
        assert!(!early_stop(&flat[..5], 5).unwrap(), "length patience is not enough");
        assert!(early_stop(&[], 5).is_err());
        assert!(early_stop(&[1.0], 0).is_err());
        assert!(early_stop(&[1.0, f64::NAN], 1).is_err());
    }

    #[test]
    fn early_stop_matches_the_window_scan_oracle() {
        let mut rng = crate::seeding::stream_rng(44, 0);
        for _ in 0..1000 {
            let len = rng.random_range(1..30);
            let patience = rng.random_range(1..10);
            // Coarse grid so ties actually happen.
            let history: Vec<f64> =
                (0..len).map(|_| rng.random_range(0..6) as f64 / 4.0).collect();
            let got = early_stop(&history, patience).unwrap();
            // Oracle: stop iff the last `patience` values contain nothing
            // strictly better than the best seen before them.
            let oracle = if history.len() <= patience {
                false
            } else {
                let split = history.len() - patience;
                let before = history[..split].iter().cloned().fold(f64::INFINITY, f64::min);
                let window = history[split..].iter().cloned().fold(f64::INFINITY, f64::min);
                window >= before
            };
            assert_eq!(got, oracle, "history {history:?} patience {patience}");
        }
    }

    proptest! {
        #[test]
        fn every_schedule_emits_nonnegative_finite_rates(
            epoch in 0usize..500,
            lr0 in 1e-6f64..1.0,
        ) {
            let schedules = [
                LrSchedule::CosineWarmup { lr0, warmup_epochs: 2, total_epochs: 40 },
                LrSchedule::cyclic_default(),
                LrSchedule::StepDecay { lr0, factor: 0.8, every: 20 },
                LrSchedule::CosineAnnealing {
                    peak: lr0,
                    lr_min: 0.0,
                    total_epochs: 100,
                    cycle_decay: Some(0.5),
                },
            ];
            for s in &schedules {
                let lr = lr_at(s, epoch);
                prop_assert!(lr.is_finite() && lr >= 0.0, "{s:?} at {epoch} gave {lr}");
            }
        }
    }
}
