//! Loss functions with analytic gradients: softmax cross-entropy, binary and
//! focal cross-entropy, pixelwise map supervision, sub-center angular-margin
//! loss, gradient reversal for adversarial domain generalization, and the
//! per-team composite objectives.
//!
//! Every loss returns a [`LossResult`] pairing the scalar value with the
//! gradient for the differentiated input, so optimizers never re-derive
//! derivatives. Probabilities and `1 − cos θ` are clamped at
//! [`PROB_EPSILON`] to keep values and gradient checks finite near the
//! boundaries of their domains.

use serde::{Deserialize, Serialize};

use crate::error::{PadError, Result};

/// Clamp floor for probabilities and for `1 − cos θ` inside logarithms.
pub const PROB_EPSILON: f64 = 1e-7;
/// Focal-loss focusing exponent used when a recipe does not override it.
pub const DEFAULT_FOCAL_GAMMA: f64 = 2.0;
/// Gradient-reversal strength used by the adversarial recipe.
pub const DEFAULT_GRL_LAMBDA: f64 = 1.0;
/// Sub-centers per class in the angular-margin head.
pub const DEFAULT_SUB_CENTERS: usize = 3;
/// Cosine-logit scale for sub-center similarity scores.
pub const DEFAULT_COSINE_SCALE: f64 = 16.0;
/// Additive angle margin applied to the bonafide term.
pub const ANGULAR_MARGIN: f64 = 0.5;

/// A loss value and its gradient with respect to the differentiated input.
///
/// The gradient always has the input's length; `value` is finite for finite
/// inputs thanks to clamping. Values are nonnegative except for
/// [`angular_margin_loss`], whose published form is unbounded below.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LossResult {
    pub value: f64,
    pub gradient: Vec<f64>,
}

/// Quality-band origin of a sample in an adversarial batch.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Domain {
    TrainBand,
    DevBand,
}

impl Domain {
    /// Class index fed to the domain discriminator (train = 0, dev = 1).
    pub fn as_index(self) -> usize {
        match self {
            Domain::TrainBand => 0,
            Domain::DevBand => 1,
        }
    }
}

/// A feature batch tagged with quality-band domains for an adversarial step.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DomainBatch {
    pub features: Vec<Vec<f64>>,
    pub domain_labels: Vec<Domain>,
}

impl DomainBatch {
    /// Validating constructor: aligned lengths, uniform feature dimension,
    /// and **both** domains present — a discriminator step with a single
    /// domain would silently train nothing adversarial.
    pub fn new(features: Vec<Vec<f64>>, domain_labels: Vec<Domain>) -> Result<Self> {
        if features.len() != domain_labels.len() {
            return Err(PadError::ShapeMismatch {
                expected: format!("{} domain labels", features.len()),
                got: format!("{}", domain_labels.len()),
            });
        }
        if let Some(first) = features.first() {
            if let Some(bad) = features.iter().find(|f| f.len() != first.len()) {
                return Err(PadError::ShapeMismatch {
                    expected: format!("feature dim {}", first.len()),
                    got: format!("{}", bad.len()),
                });
            }
        }
        for domain in [Domain::TrainBand, Domain::DevBand] {
            if !domain_labels.contains(&domain) {
                return Err(PadError::MissingClass {
                    context: format!("adversarial batch has no {domain:?} samples"),
                });
            }
        }
        Ok(DomainBatch { features, domain_labels })
    }
}

fn check_finite(values: &[f64], what: &str) -> Result<()> {
    if let Some(v) = values.iter().find(|v| !v.is_finite()) {
        return Err(PadError::param(format!("{what} contains non-finite value {v}")));
    }
    Ok(())
}

/// Log-sum-exp–stabilized softmax cross-entropy against a class index.
///
/// Gradient with respect to the logits is `softmax(logits) − one_hot(class)`.
pub fn cross_entropy(logits: &[f64], class: usize) -> Result<LossResult> {
    if class >= logits.len() {
        return Err(PadError::param(format!(
            "target class {class} out of range for {} logits",
            logits.len()
        )));
    }
    let mut one_hot = vec![0.0; logits.len()];
    one_hot[class] = 1.0;
    cross_entropy_soft(logits, &one_hot)
}

/// Softmax cross-entropy against a target distribution; gradient is
/// `softmax(logits) − target`.
pub fn cross_entropy_soft(logits: &[f64], target: &[f64]) -> Result<LossResult> {
    if logits.is_empty() {
        return Err(PadError::param("cross_entropy needs at least one logit"));
    }
    if logits.len() != target.len() {
        return Err(PadError::ShapeMismatch {
            expected: format!("target of length {}", logits.len()),
            got: format!("{}", target.len()),
        });
    }
    check_finite(logits, "logits")?;
    check_finite(target, "target")?;
    let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let shifted: Vec<f64> = logits.iter().map(|l| l - max).collect();
    let lse = shifted.iter().map(|z| z.exp()).sum::<f64>().ln();
    let value = target
        .iter()
        .zip(&shifted)
        .map(|(t, z)| t * (lse - z))
        .sum::<f64>();
    let gradient = shifted
        .iter()
        .zip(target)
        .map(|(z, t)| (z - lse).exp() - t)
        .collect();
    Ok(LossResult { value, gradient })
}

fn clamp_prob(p: f64) -> f64 {
    debug_assert!(p.is_finite(), "probability {p} is not finite");
    p.clamp(PROB_EPSILON, 1.0 - PROB_EPSILON)
}

/// Binary cross-entropy `−(t·log p + (1−t)·log(1−p))` with the probability
/// clamped to `[ε, 1−ε]`. Gradient is with respect to the (clamped)
/// probability; `t` may be soft in `[0, 1]`.
pub fn bce(p: f64, t: f64) -> LossResult {
    debug_assert!((0.0..=1.0).contains(&t), "target {t} outside [0, 1]");
    let p = clamp_prob(p);
    let q = 1.0 - p;
    let value = t * (-(p.ln())) + (1.0 - t) * (-(q.ln()));
    let gradient = t * (-(1.0 / p)) + (1.0 - t) * (1.0 / q);
    LossResult { value, gradient: vec![gradient] }
}

/// Focal loss `−(1 − p_t)^γ · log(p_t)` with `p_t = p` for the positive
/// class and `1 − p` for the negative; soft targets interpolate the two
/// terms. `γ = 0` reproduces [`bce`] exactly.
pub fn focal(p: f64, t: f64, gamma: f64) -> LossResult {
    debug_assert!((0.0..=1.0).contains(&t), "target {t} outside [0, 1]");
    debug_assert!(gamma.is_finite() && gamma >= 0.0, "gamma {gamma} must be nonnegative");
    let p = clamp_prob(p);
    let q = 1.0 - p;
    // Written so γ = 0 collapses bit-for-bit onto bce: powf(·, 0) = 1 and
    // the γ-scaled derivative terms vanish exactly.
    let pos = q.powf(gamma) * (-(p.ln()));
    let neg = p.powf(gamma) * (-(q.ln()));
    let value = t * pos + (1.0 - t) * neg;
    let dpos = gamma * q.powf(gamma - 1.0) * p.ln() + (-(q.powf(gamma) / p));
    let dneg = gamma * p.powf(gamma - 1.0) * (-(q.ln())) + p.powf(gamma) * (1.0 / q);
    let gradient = t * dpos + (1.0 - t) * dneg;
    LossResult { value, gradient: vec![gradient] }
}

/// Mean binary cross-entropy of a predicted map against the constant map
/// implied by the sample label: all ones for bonafide, all zeros for attack.
/// Gradient is per map entry.
pub fn pixelwise_bce(pred_map: &[f64], label: crate::dataset::Label) -> Result<LossResult> {
    if pred_map.is_empty() {
        return Err(PadError::param("pixelwise_bce needs a non-empty map"));
    }
    check_finite(pred_map, "pred_map")?;
    let t = label.as_target();
    let n = pred_map.len() as f64;
    let mut value = 0.0;
    let mut gradient = Vec::with_capacity(pred_map.len());
    for &p in pred_map {
        let cell = bce(p, t);
        value += cell.value;
        gradient.push(cell.gradient[0] / n);
    }
    Ok(LossResult { value: value / n, gradient })
}

/// Angle between two vectors via the arccos of their clamped cosine
/// similarity. Errors on a zero vector.
pub fn angle_between(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(PadError::ShapeMismatch {
            expected: format!("vector of length {}", a.len()),
            got: format!("{}", b.len()),
        });
    }
    let na = a.iter().map(|v| v * v).sum::<f64>().sqrt();
    let nb = b.iter().map(|v| v * v).sum::<f64>().sqrt();
    if na == 0.0 || nb == 0.0 {
        return Err(PadError::ZeroVector { context: "angle_between".into() });
    }
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    Ok((dot / (na * nb)).clamp(-1.0, 1.0).acos())
}

/// Per-class sub-center directions plus the cosine-logit scale.
///
/// Every sub-center is unit-norm (validated to 1e-9); the trainer keeps
/// them learnable and re-normalizes after each update.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SubCenterBank {
    centers: Vec<Vec<Vec<f64>>>,
    scale: f64,
}

impl SubCenterBank {
    /// Validating constructor: at least one class, a uniform sub-center
    /// count and dimension, unit norms to 1e-9, positive finite scale.
    pub fn new(centers: Vec<Vec<Vec<f64>>>, scale: f64) -> Result<Self> {
        if !(scale.is_finite() && scale > 0.0) {
            return Err(PadError::param(format!("cosine scale {scale} must be positive")));
        }
        let k = centers.first().map(|c| c.len()).unwrap_or(0);
        if centers.is_empty() || k == 0 {
            return Err(PadError::param("sub-center bank needs at least one class and one sub-center"));
        }
        let dim = centers[0][0].len();
        for (class, subs) in centers.iter().enumerate() {
            if subs.len() != k {
                return Err(PadError::ShapeMismatch {
                    expected: format!("{k} sub-centers per class"),
                    got: format!("{} in class {class}", subs.len()),
                });
            }
            for (j, v) in subs.iter().enumerate() {
                if v.len() != dim {
                    return Err(PadError::ShapeMismatch {
                        expected: format!("sub-center dim {dim}"),
                        got: format!("{} at class {class} sub-center {j}", v.len()),
                    });
                }
                let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
                if (norm - 1.0).abs() > 1e-9 {
                    return Err(PadError::param(format!(
                        "sub-center {j} of class {class} has norm {norm}, expected 1"
                    )));
                }
            }
        }
        Ok(SubCenterBank { centers, scale })
    }

    /// Build a bank from arbitrary directions by normalizing each to unit
    /// length; zero vectors are rejected.
    pub fn from_raw(raw: Vec<Vec<Vec<f64>>>, scale: f64) -> Result<Self> {
        let mut centers = Vec::with_capacity(raw.len());
        for subs in raw {
            let mut normed = Vec::with_capacity(subs.len());
            for v in subs {
                let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
                if norm == 0.0 || !norm.is_finite() {
                    return Err(PadError::ZeroVector { context: "sub-center".into() });
                }
                normed.push(v.iter().map(|x| x / norm).collect());
            }
            centers.push(normed);
        }
        SubCenterBank::new(centers, scale)
    }

    pub fn num_classes(&self) -> usize {
        self.centers.len()
    }
    pub fn sub_centers_per_class(&self) -> usize {
        self.centers[0].len()
    }
    pub fn dim(&self) -> usize {
        self.centers[0][0].len()
    }
    pub fn scale(&self) -> f64 {
        self.scale
    }
    pub fn class_centers(&self, class: usize) -> &[Vec<f64>] {
        &self.centers[class]
    }
}

/// Index and angle of the class sub-center closest (in angle) to `feature`.
pub fn sub_center_nearest(
    feature: &[f64],
    bank: &SubCenterBank,
    class: usize,
) -> Result<(usize, f64)> {
    if class >= bank.num_classes() {
        return Err(PadError::param(format!(
            "class {class} out of range for {}-class bank",
            bank.num_classes()
        )));
    }
    let mut best: Option<(usize, f64)> = None;
    for (j, center) in bank.class_centers(class).iter().enumerate() {
        let theta = angle_between(feature, center)?;
        if best.map(|(_, t)| theta < t).unwrap_or(true) {
            best = Some((j, theta));
        }
    }
    Ok(best.expect("bank has at least one sub-center"))
}

/// Angle between a feature and its class: the minimum angle over the
/// class's sub-centers. Errors on a zero feature.
pub fn sub_center_angle(feature: &[f64], bank: &SubCenterBank, class: usize) -> Result<f64> {
    sub_center_nearest(feature, bank, class).map(|(_, theta)| theta)
}

/// Sub-center angular-margin loss over a batch of angles:
///
/// `value = −(1/n) Σ ( t_i·cos(θ_i + 0.5) + (1−t_i)·log(1 − cos θ_i) )`,
///
/// with `1 − cos θ` clamped below at [`PROB_EPSILON`]. The formula is kept
/// exactly as its team published it, including the **non-logarithmic**
/// bonafide term — almost certainly a typo for `log(cos(θ + 0.5))`, but
/// reproduced verbatim rather than silently corrected. Consequence: unlike
/// every other loss here, the value may be negative (the bonafide term is
/// unbounded below over `θ ∈ [0, π]`). Gradient is with respect to the
/// angles; a clamped entry contributes zero attack-term gradient.
pub fn angular_margin_loss(thetas: &[f64], targets: &[f64]) -> Result<LossResult> {
    if thetas.is_empty() {
        return Err(PadError::param("angular_margin_loss needs at least one angle"));
    }
    if thetas.len() != targets.len() {
        return Err(PadError::ShapeMismatch {
            expected: format!("{} targets", thetas.len()),
            got: format!("{}", targets.len()),
        });
    }
    check_finite(thetas, "thetas")?;
    check_finite(targets, "targets")?;
    debug_assert!(
        thetas.iter().all(|t| (-1e-9..=std::f64::consts::PI + 1e-9).contains(t)),
        "angles must lie in [0, pi]"
    );
    let n = thetas.len() as f64;
    let mut value = 0.0;
    let mut gradient = Vec::with_capacity(thetas.len());
    for (&theta, &t) in thetas.iter().zip(targets) {
        let cos = theta.cos();
        let raw = 1.0 - cos;
        let (log_term, dlog) = if raw < PROB_EPSILON {
            (PROB_EPSILON.ln(), 0.0)
        } else {
            (raw.ln(), theta.sin() / raw)
        };
        value += t * (theta + ANGULAR_MARGIN).cos() + (1.0 - t) * log_term;
        gradient.push((t * (theta + ANGULAR_MARGIN).sin() - (1.0 - t) * dlog) / n);
    }
    Ok(LossResult { value: -value / n, gradient })
}

/// Gradient-reversal backward pass: the forward pass is the identity on
/// activations, the backward pass returns `−lambda · gradient_in`.
pub fn grl(gradient_in: &[f64], lambda: f64) -> Vec<f64> {
    debug_assert!(lambda.is_finite() && lambda >= 0.0, "lambda {lambda} must be nonnegative");
    gradient_in.iter().map(|g| -lambda * g).collect()
}

/// Component weights of the adversarial composite: classifier, adversary.
pub const CTEL_WEIGHTS: [f64; 2] = [1.0, 1.0];
/// Component weights of the two-head composite: classifier, focal.
pub const HEXIANHUA_WEIGHTS: [f64; 2] = [1.0, 0.5];
/// Component weights of the fused-branch composite: fused, branch 0, branch 1.
pub const OPDAI_WEIGHTS: [f64; 3] = [1.0, 0.5, 0.5];
/// Component weights of the patch composite: original, face, eyes, nose,
/// chin, concatenated.
pub const CHENYIFAN_WEIGHTS: [f64; 6] = [3.0, 1.0, 0.5, 0.5, 0.5, 3.0];
/// Component weights of the map-plus-angular composite.
pub const IONETWORKS_WEIGHTS: [f64; 2] = [0.5, 0.5];

/// `cls + adv`.
pub fn total_ctel(cls: f64, adv: f64) -> f64 {
    cls + adv
}

/// `cls + 0.5·focal`.
pub fn total_hexianhua(cls: f64, focal: f64) -> f64 {
    cls + 0.5 * focal
}

/// `f1 + 0.5·f2 + 0.5·f3`.
pub fn total_opdai(f1: f64, f2: f64, f3: f64) -> f64 {
    f1 + 0.5 * f2 + 0.5 * f3
}

/// `3·ori + face + 0.5·(eyes + nose + chin) + 3·concat`.
pub fn total_chenyifan(ori: f64, face: f64, eyes: f64, nose: f64, chin: f64, concat: f64) -> f64 {
    3.0 * ori + face + 0.5 * (eyes + nose + chin) + 3.0 * concat
}

/// `0.5·bce + 0.5·ang`.
pub fn total_ionetworks(bce: f64, ang: f64) -> f64 {
    0.5 * bce + 0.5 * ang
}

/// Weighted sum of loss results whose gradients target the same input:
/// `value = Σ wᵢ·valueᵢ`, `gradient = Σ wᵢ·gradientᵢ`. Gradients
/// distribute linearly, so this is exact for any composite above.
pub fn combine_weighted(parts: &[(f64, &LossResult)]) -> Result<LossResult> {
    let Some((_, first)) = parts.first() else {
        return Err(PadError::param("combine_weighted needs at least one component"));
    };
    let len = first.gradient.len();
    let mut value = 0.0;
    let mut gradient = vec![0.0; len];
    for (weight, part) in parts {
        if part.gradient.len() != len {
            return Err(PadError::ShapeMismatch {
                expected: format!("gradient of length {len}"),
                got: format!("{}", part.gradient.len()),
            });
        }
        value += weight * part.value;
        for (g, p) in gradient.iter_mut().zip(&part.gradient) {
            *g += weight * p;
        }
    }
    Ok(LossResult { value, gradient })
}
