//! Sample catalogs, the quality-banded evaluation protocol, and synthetic
//! data generation.
//!
//! A *catalog* is a list of [`SampleRecord`]s — one per captured face image —
//! carrying a binary label, an attack category, a quality score in `[0, 1]`
//! and the metadata parsed from its capture-folder name. The protocol
//! partitions a catalog into train/dev/test splits by quality band alone, so
//! the models are fit on clean imagery and judged on degraded imagery.

use std::collections::{BTreeMap, BTreeSet};
use std::io::{BufRead, Write};
use std::path::Path;

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{PadError, Result};
use crate::{par, seeding};

/// Binary ground-truth label of a sample.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Label {
    /// A live face presented without any instrument.
    Bonafide,
    /// A presentation attack of any category.
    Attack,
}

impl Label {
    /// `1.0` for bonafide, `0.0` for attack — the polarity used everywhere:
    /// higher scores mean "more bonafide".
    pub fn as_target(self) -> f64 {
        match self {
            Label::Bonafide => 1.0,
            Label::Attack => 0.0,
        }
    }
}

/// The instrument category behind an attack sample.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AttackCategory {
    /// Bonafide samples carry no instrument.
    None,
    MaskResin,
    MaskSilicone,
    MaskPlaster,
    MaskHeadgear,
    #[serde(rename = "flat_2d")]
    Flat2d,
    Adversarial,
}

/// The attack categories a synthetic attack sample may draw from.
pub const ATTACK_CATEGORIES: [AttackCategory; 6] = [
    AttackCategory::MaskResin,
    AttackCategory::MaskSilicone,
    AttackCategory::MaskPlaster,
    AttackCategory::MaskHeadgear,
    AttackCategory::Flat2d,
    AttackCategory::Adversarial,
];

/// Opaque, unique sample identifier.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct SampleId(pub String);

impl SampleId {
    pub fn new(s: impl Into<String>) -> Self {
        SampleId(s.into())
    }
    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl std::fmt::Display for SampleId {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

/// Capture metadata encoded in a folder name of the form
/// `Group_Scene_Camera_Epoch_Time`.
///
/// Components are non-empty and contain no underscores, so
/// [`FolderMeta::format`] followed by [`parse_track_name`] is the identity.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct FolderMeta {
    pub group: String,
    pub scene: String,
    pub camera: String,
    pub epoch: String,
    pub time: String,
}

impl FolderMeta {
    /// Render the canonical underscore-joined folder name.
    pub fn format(&self) -> String {
        [&self.group, &self.scene, &self.camera, &self.epoch, &self.time]
            .map(String::as_str)
            .join("_")
    }
}

/// Field names in positional order, used for error messages.
const META_FIELDS: [&str; 5] = ["group", "scene", "camera", "epoch", "time"];

/// Parse a capture-folder name into its five components.
///
/// Errors name the problem precisely: a wrong field count reports how many
/// fields were found, an empty component reports which positional field it is.
pub fn parse_track_name(name: &str) -> Result<FolderMeta> {
    let parts: Vec<&str> = name.split('_').collect();
    if parts.len() != 5 {
        return Err(PadError::TrackName {
            name: name.to_string(),
            reason: format!("expected 5 underscore-separated fields, found {}", parts.len()),
        });
    }
    for (i, part) in parts.iter().enumerate() {
        if part.is_empty() {
            return Err(PadError::TrackName {
                name: name.to_string(),
                reason: format!("field {} ({}) is empty", i + 1, META_FIELDS[i]),
            });
        }
    }
    Ok(FolderMeta {
        group: parts[0].to_string(),
        scene: parts[1].to_string(),
        camera: parts[2].to_string(),
        epoch: parts[3].to_string(),
        time: parts[4].to_string(),
    })
}

/// One catalog entry.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampleRecord {
    pub sample_id: SampleId,
    pub label: Label,
    pub attack_category: AttackCategory,
    /// Image quality in `[0, 1]`; higher is cleaner imagery.
    pub quality_score: f64,
    pub meta: FolderMeta,
    /// Optional fixed feature vector used by the desk-scale trainer.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub feature: Option<Vec<f64>>,
}

impl SampleRecord {
    /// Check the record's internal invariants.
    pub fn validate(&self) -> Result<()> {
        if !self.quality_score.is_finite()
            || !(0.0..=1.0).contains(&self.quality_score)
        {
            return Err(PadError::QualityOutOfRange {
                id: self.sample_id.0.clone(),
                score: self.quality_score,
            });
        }
        let category_is_none = self.attack_category == AttackCategory::None;
        let label_is_bonafide = self.label == Label::Bonafide;
        if category_is_none != label_is_bonafide {
            return Err(PadError::param(format!(
                "sample {}: attack category {:?} does not match label {:?}",
                self.sample_id, self.attack_category, self.label
            )));
        }
        Ok(())
    }
}

/// A half-open or closed quality interval.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct QualityBand {
    pub lo: f64,
    pub hi: f64,
    /// Whether `hi` itself belongs to the band.
    pub hi_closed: bool,
}

impl QualityBand {
    pub fn contains(&self, score: f64) -> bool {
        score >= self.lo && if self.hi_closed { score <= self.hi } else { score < self.hi }
    }
}

/// Train band: `[0.4, 1.0]`. The upper edge is closed so a perfect-quality
/// sample has a home.
pub const TRAIN_BAND: QualityBand = QualityBand { lo: 0.4, hi: 1.0, hi_closed: true };
/// Dev band: `[0.3, 0.4)`. A score of exactly `0.4` belongs to train.
pub const DEV_BAND: QualityBand = QualityBand { lo: 0.3, hi: 0.4, hi_closed: false };
/// Test band: `[0.0, 0.3)`. A score of exactly `0.3` belongs to dev.
pub const TEST_BAND: QualityBand = QualityBand { lo: 0.0, hi: 0.3, hi_closed: false };

/// The three protocol splits.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Split {
    Train,
    Dev,
    Test,
}

impl Split {
    pub const ALL: [Split; 3] = [Split::Train, Split::Dev, Split::Test];

    pub fn name(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Dev => "dev",
            Split::Test => "test",
        }
    }
}

impl std::fmt::Display for Split {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

/// The quality bands of the three splits.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BandSet {
    pub train: QualityBand,
    pub dev: QualityBand,
    pub test: QualityBand,
}

impl BandSet {
    pub fn band(&self, split: Split) -> QualityBand {
        match split {
            Split::Train => self.train,
            Split::Dev => self.dev,
            Split::Test => self.test,
        }
    }

    /// The split whose band contains `score`, if any.
    pub fn split_for(&self, score: f64) -> Option<Split> {
        Split::ALL.into_iter().find(|s| self.band(*s).contains(score))
    }
}

/// The canonical quality-banded band set.
pub const PROTOCOL_BANDS: BandSet =
    BandSet { train: TRAIN_BAND, dev: DEV_BAND, test: TEST_BAND };

/// A catalog partition into train/dev/test, plus the bands that produced it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProtocolManifest {
    pub bands: BandSet,
    pub train: Vec<SampleId>,
    pub dev: Vec<SampleId>,
    pub test: Vec<SampleId>,
}

impl ProtocolManifest {
    pub fn ids(&self, split: Split) -> &[SampleId] {
        match split {
            Split::Train => &self.train,
            Split::Dev => &self.dev,
            Split::Test => &self.test,
        }
    }

    /// The split an id was assigned to, if any.
    pub fn split_of(&self, id: &SampleId) -> Option<Split> {
        Split::ALL.into_iter().find(|s| self.ids(*s).contains(id))
    }

    /// Verify that this manifest is an exact partition of `samples` with each
    /// id placed in the split whose band contains its score.
    pub fn check_partition(&self, samples: &[SampleRecord]) -> Result<()> {
        let by_id: BTreeMap<&SampleId, &SampleRecord> =
            samples.iter().map(|s| (&s.sample_id, s)).collect();
        let mut seen: BTreeSet<&SampleId> = BTreeSet::new();
        for split in Split::ALL {
            for id in self.ids(split) {
                if !seen.insert(id) {
                    return Err(PadError::IdMismatch {
                        context: format!("manifest split {split}: id {id} assigned twice"),
                        missing: 0,
                        extra: 1,
                    });
                }
                let record = by_id.get(id).ok_or_else(|| PadError::IdMismatch {
                    context: format!("manifest split {split}: id {id} not in catalog"),
                    missing: 0,
                    extra: 1,
                })?;
                if !self.bands.band(split).contains(record.quality_score) {
                    return Err(PadError::param(format!(
                        "id {id} with quality {} does not belong in split {split}",
                        record.quality_score
                    )));
                }
            }
        }
        if seen.len() != by_id.len() {
            return Err(PadError::IdMismatch {
                context: "manifest does not cover the catalog".to_string(),
                missing: by_id.len() - seen.len(),
                extra: 0,
            });
        }
        Ok(())
    }
}

/// Partition a catalog into quality-banded train/dev/test splits.
///
/// Every sample lands in exactly one split: `[0.4, 1.0]` → train,
/// `[0.3, 0.4)` → dev, `[0.0, 0.3)` → test. Input order is preserved within
/// each split. Out-of-range or non-finite quality scores and duplicate
/// sample ids are rejected.
pub fn build_protocol3(samples: &[SampleRecord]) -> Result<ProtocolManifest> {
    let mut seen: BTreeSet<&SampleId> = BTreeSet::new();
    let mut manifest = ProtocolManifest {
        bands: PROTOCOL_BANDS,
        train: Vec::new(),
        dev: Vec::new(),
        test: Vec::new(),
    };
    for sample in samples {
        if !sample.quality_score.is_finite()
            || !(0.0..=1.0).contains(&sample.quality_score)
        {
            return Err(PadError::QualityOutOfRange {
                id: sample.sample_id.0.clone(),
                score: sample.quality_score,
            });
        }
        if !seen.insert(&sample.sample_id) {
            return Err(PadError::param(format!(
                "duplicate sample id {} in catalog",
                sample.sample_id
            )));
        }
        // Unwrap is safe: the bands cover [0, 1] with no gaps.
        let split = manifest.bands.split_for(sample.quality_score).unwrap();
        match split {
            Split::Train => manifest.train.push(sample.sample_id.clone()),
            Split::Dev => manifest.dev.push(sample.sample_id.clone()),
            Split::Test => manifest.test.push(sample.sample_id.clone()),
        }
    }
    Ok(manifest)
}

/// Balance classes by duplicating random minority samples.
///
/// Appends draws (with replacement) from the minority class until both class
/// counts are equal. Original entries are kept untouched and in order;
/// duplicates are appended at the end. Deterministic for a fixed seed.
pub fn max_upsample(
    entries: &[(SampleId, Label)],
    seed: u64,
) -> Result<Vec<(SampleId, Label)>> {
    let n_bona = entries.iter().filter(|(_, l)| *l == Label::Bonafide).count();
    let n_attack = entries.len() - n_bona;
    if n_bona == 0 || n_attack == 0 {
        return Err(PadError::MissingClass { context: "max_upsample".to_string() });
    }
    let mut out = entries.to_vec();
    if n_bona == n_attack {
        return Ok(out);
    }
    let minority = if n_bona < n_attack { Label::Bonafide } else { Label::Attack };
    let pool: Vec<&(SampleId, Label)> =
        entries.iter().filter(|(_, l)| *l == minority).collect();
    let deficit = n_bona.abs_diff(n_attack);
    let mut rng = seeding::stream_rng(seed, 0);
    for _ in 0..deficit {
        out.push(pool[rng.random_range(0..pool.len())].clone());
    }
    Ok(out)
}

/// Covariance of a synthetic feature class.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Covariance {
    /// `variance * I`.
    Isotropic(f64),
    /// Per-dimension variances.
    Diagonal(Vec<f64>),
    /// Full symmetric positive-definite matrix, row-major.
    Full(Vec<Vec<f64>>),
}

impl Covariance {
    /// Lower-triangular factor `L` with `L Lᵀ = Σ`, as dense rows.
    fn factor(&self, dim: usize) -> Result<Vec<Vec<f64>>> {
        match self {
            Covariance::Isotropic(v) => {
                if !v.is_finite() || *v <= 0.0 {
                    return Err(PadError::DegenerateCovariance);
                }
                let s = v.sqrt();
                Ok((0..dim)
                    .map(|i| (0..dim).map(|j| if i == j { s } else { 0.0 }).collect())
                    .collect())
            }
            Covariance::Diagonal(vs) => {
                if vs.len() != dim {
                    return Err(PadError::ShapeMismatch {
                        expected: format!("{dim} diagonal variances"),
                        got: format!("{}", vs.len()),
                    });
                }
                if vs.iter().any(|v| !v.is_finite() || *v <= 0.0) {
                    return Err(PadError::DegenerateCovariance);
                }
                Ok((0..dim)
                    .map(|i| {
                        (0..dim).map(|j| if i == j { vs[i].sqrt() } else { 0.0 }).collect()
                    })
                    .collect())
            }
            Covariance::Full(m) => {
                if m.len() != dim || m.iter().any(|row| row.len() != dim) {
                    return Err(PadError::ShapeMismatch {
                        expected: format!("{dim}x{dim} covariance"),
                        got: format!("{}x{}", m.len(), m.first().map_or(0, Vec::len)),
                    });
                }
                for i in 0..dim {
                    for j in 0..dim {
                        if !m[i][j].is_finite() || (m[i][j] - m[j][i]).abs() > 1e-12 {
                            return Err(PadError::DegenerateCovariance);
                        }
                    }
                }
                cholesky(m).ok_or(PadError::DegenerateCovariance)
            }
        }
    }
}

/// Plain Cholesky decomposition; `None` if the matrix is not positive
/// definite.
fn cholesky(m: &[Vec<f64>]) -> Option<Vec<Vec<f64>>> {
    let n = m.len();
    let mut l = vec![vec![0.0; n]; n];
    for i in 0..n {
        for j in 0..=i {
            let mut sum = m[i][j];
            for k in 0..j {
                sum -= l[i][k] * l[j][k];
            }
            if i == j {
                if sum <= 0.0 || !sum.is_finite() {
                    return None;
                }
                l[i][j] = sum.sqrt();
            } else {
                l[i][j] = sum / l[j][j];
            }
        }
    }
    Some(l)
}

/// Gaussian feature model of one class.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassModel {
    pub mean: Vec<f64>,
    pub covariance: Covariance,
}

/// How synthetic quality scores are drawn.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum QualityModel {
    /// Uniform on `[lo, hi] ⊆ [0, 1]`.
    Uniform { lo: f64, hi: f64 },
    /// Mixture over the three protocol bands with the given weights, uniform
    /// within the selected band.
    Banded { train: f64, dev: f64, test: f64 },
}

/// Full description of a synthetic catalog.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthConfig {
    pub n_bonafide: usize,
    pub n_attack: usize,
    pub bonafide: ClassModel,
    pub attack: ClassModel,
    pub quality: QualityModel,
    pub seed: u64,
}

impl SynthConfig {
    /// Two isotropic Gaussians at distance `separation` along the diagonal,
    /// with per-dimension standard deviation `noise`, and quality spread over
    /// all three protocol bands (half train, a quarter each dev and test).
    pub fn separated(
        dim: usize,
        n_per_class: usize,
        separation: f64,
        noise: f64,
        seed: u64,
    ) -> Self {
        let delta = separation / (2.0 * (dim as f64).sqrt());
        SynthConfig {
            n_bonafide: n_per_class,
            n_attack: n_per_class,
            bonafide: ClassModel {
                mean: vec![delta; dim],
                covariance: Covariance::Isotropic(noise * noise),
            },
            attack: ClassModel {
                mean: vec![-delta; dim],
                covariance: Covariance::Isotropic(noise * noise),
            },
            quality: QualityModel::Banded { train: 0.5, dev: 0.25, test: 0.25 },
            seed,
        }
    }

    fn validate(&self) -> Result<()> {
        if self.n_bonafide == 0 || self.n_attack == 0 {
            return Err(PadError::config("synth catalog needs both classes"));
        }
        let dim = self.bonafide.mean.len();
        if dim == 0 || self.attack.mean.len() != dim {
            return Err(PadError::ShapeMismatch {
                expected: format!("attack mean of dim {dim} > 0"),
                got: format!("{}", self.attack.mean.len()),
            });
        }
        match &self.quality {
            QualityModel::Uniform { lo, hi } => {
                if !(lo.is_finite() && hi.is_finite() && 0.0 <= *lo && lo <= hi && *hi <= 1.0) {
                    return Err(PadError::config(format!(
                        "uniform quality range [{lo}, {hi}] must sit inside [0, 1]"
                    )));
                }
            }
            QualityModel::Banded { train, dev, test } => {
                let w = [*train, *dev, *test];
                if w.iter().any(|x| !x.is_finite() || *x < 0.0) || w.iter().sum::<f64>() <= 0.0 {
                    return Err(PadError::config(
                        "banded quality weights must be non-negative with positive sum",
                    ));
                }
            }
        }
        Ok(())
    }
}

/// Draw a quality score according to the model. One or two RNG draws.
fn draw_quality<R: Rng>(model: &QualityModel, rng: &mut R) -> f64 {
    match model {
        QualityModel::Uniform { lo, hi } => {
            if lo == hi {
                *lo
            } else {
                rng.random_range(*lo..=*hi)
            }
        }
        QualityModel::Banded { train, dev, test } => {
            let total = train + dev + test;
            let u: f64 = rng.random_range(0.0..total);
            let band = if u < *train {
                TRAIN_BAND
            } else if u < train + dev {
                DEV_BAND
            } else {
                TEST_BAND
            };
            // Half-open bands never reach `hi`; the closed train band may.
            if band.hi_closed {
                rng.random_range(band.lo..=band.hi)
            } else {
                rng.random_range(band.lo..band.hi)
            }
        }
    }
}

/// Generate a synthetic catalog of labeled, quality-scored feature vectors.
///
/// Record `i` draws from its own RNG stream derived from `(seed, i)`, so the
/// output is byte-identical across runs and across the parallel/sequential
/// builds. Bonafide records come first (`b00000`, `b00001`, …), then attacks
/// (`a00000`, …).
pub fn synth_dataset(cfg: &SynthConfig) -> Result<Vec<SampleRecord>> {
    cfg.validate()?;
    let dim = cfg.bonafide.mean.len();
    let factor_bona = cfg.bonafide.covariance.factor(dim)?;
    let factor_attack = cfg.attack.covariance.factor(dim)?;
    let total = cfg.n_bonafide + cfg.n_attack;

    let records = par::map_indices(total, |i| {
        let mut rng = seeding::stream_rng(cfg.seed, i as u64);
        let bonafide = i < cfg.n_bonafide;
        let (model, factor) = if bonafide {
            (&cfg.bonafide, &factor_bona)
        } else {
            (&cfg.attack, &factor_attack)
        };
        // Draw order is fixed: feature noise, quality, category, metadata.
        let z: Vec<f64> = (0..dim).map(|_| rng.sample::<f64, _>(StandardNormal)).collect();
        let mut feature = model.mean.clone();
        for (r, row) in factor.iter().enumerate() {
            for (c, l) in row.iter().enumerate() {
                feature[r] += l * z[c];
            }
        }
        let quality_score = draw_quality(&cfg.quality, &mut rng);
        let (label, attack_category) = if bonafide {
            (Label::Bonafide, AttackCategory::None)
        } else {
            (Label::Attack, ATTACK_CATEGORIES[rng.random_range(0..ATTACK_CATEGORIES.len())])
        };
        let meta = FolderMeta {
            group: format!("G{}", 1 + rng.random_range(0..4u32)),
            scene: format!("S{:02}", 1 + rng.random_range(0..40u32)),
            camera: format!("C{}", 1 + rng.random_range(0..7u32)),
            epoch: format!("E{}", 1 + rng.random_range(0..3u32)),
            time: format!("T{:03}", 1 + rng.random_range(0..999u32)),
        };
        let sample_id = if bonafide {
            SampleId::new(format!("b{i:05}"))
        } else {
            SampleId::new(format!("a{:05}", i - cfg.n_bonafide))
        };
        SampleRecord { sample_id, label, attack_category, quality_score, meta, feature: Some(feature) }
    });
    Ok(records)
}

/// Write a catalog as JSON lines.
pub fn write_catalog<W: Write>(mut w: W, samples: &[SampleRecord]) -> Result<()> {
    for s in samples {
        serde_json::to_writer(&mut w, s)?;
        w.write_all(b"\n")?;
    }
    Ok(())
}

/// Read a catalog from JSON lines, validating each record.
pub fn read_catalog<R: BufRead>(r: R) -> Result<Vec<SampleRecord>> {
    let mut out = Vec::new();
    for line in r.lines() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let record: SampleRecord = serde_json::from_str(&line)?;
        record.validate()?;
        out.push(record);
    }
    Ok(out)
}

/// Convenience: read a catalog file from disk.
pub fn read_catalog_file(path: &Path) -> Result<Vec<SampleRecord>> {
    let file = std::fs::File::open(path)?;
    read_catalog(std::io::BufReader::new(file))
}

/// Convenience: write a catalog file to disk.
pub fn write_catalog_file(path: &Path, samples: &[SampleRecord]) -> Result<()> {
    let file = std::fs::File::create(path)?;
    write_catalog(std::io::BufWriter::new(file), samples)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn meta() -> FolderMeta {
        parse_track_name("G1_S01_C3_E2_T077").unwrap()
    }

    fn record(id: &str, label: Label, quality: f64) -> SampleRecord {
        SampleRecord {
            sample_id: SampleId::new(id),
            label,
            attack_category: if label == Label::Bonafide {
                AttackCategory::None
            } else {
                AttackCategory::Flat2d
            },
            quality_score: quality,
            meta: meta(),
            feature: None,
        }
    }

    #[test]
    fn track_name_parses_into_positional_fields() {
        let m = parse_track_name("G2_S17_C5_E1_T042").unwrap();
        assert_eq!(m.group, "G2");
        assert_eq!(m.scene, "S17");
        assert_eq!(m.camera, "C5");
        assert_eq!(m.epoch, "E1");
        assert_eq!(m.time, "T042");
        assert_eq!(m.format(), "G2_S17_C5_E1_T042");
    }

    #[test]
    fn track_name_rejects_wrong_field_count_and_empty_fields() {
        let err = parse_track_name("G2_S17_C5_E1").unwrap_err();
        assert!(err.to_string().contains("found 4"), "{err}");
        let err = parse_track_name("G2__C5_E1_T042").unwrap_err();
        assert!(err.to_string().contains("field 2 (scene)"), "{err}");
        let err = parse_track_name("").unwrap_err();
        assert!(err.to_string().contains("found 1"), "{err}");
        // A stray underscore splits a field and shifts the count.
        assert!(parse_track_name("G2_S17_C5_E1_T042_extra").is_err());
    }

    proptest! {
        #[test]
        fn track_name_round_trips(
            parts in proptest::collection::vec("[A-Za-z0-9-]{1,8}", 5)
        ) {
            let meta = FolderMeta {
                group: parts[0].clone(),
                scene: parts[1].clone(),
                camera: parts[2].clone(),
                epoch: parts[3].clone(),
                time: parts[4].clone(),
            };
            let reparsed = parse_track_name(&meta.format()).unwrap();
            prop_assert_eq!(reparsed, meta);
        }

        #[test]
        fn protocol_is_an_exact_partition(scores in proptest::collection::vec(0.0f64..=1.0, 1..200)) {
            let samples: Vec<SampleRecord> = scores
                .iter()
                .enumerate()
                .map(|(i, &q)| record(&format!("s{i}"), Label::Bonafide, q))
                .collect();
            let manifest = build_protocol3(&samples).unwrap();
            manifest.check_partition(&samples).unwrap();
            let n = manifest.train.len() + manifest.dev.len() + manifest.test.len();
            prop_assert_eq!(n, samples.len());
        }
    }

    #[test]
    fn protocol_band_boundaries() {
        let samples = vec![
            record("exact-train-edge", Label::Bonafide, 0.4),
            record("exact-dev-edge", Label::Bonafide, 0.3),
            record("just-below-dev", Label::Attack, 0.2999),
            record("top", Label::Bonafide, 1.0),
            record("bottom", Label::Attack, 0.0),
            record("mid-dev", Label::Bonafide, 0.35),
        ];
        let m = build_protocol3(&samples).unwrap();
        let names = |ids: &[SampleId]| ids.iter().map(|i| i.0.clone()).collect::<Vec<_>>();
        assert_eq!(names(&m.train), ["exact-train-edge", "top"]);
        assert_eq!(names(&m.dev), ["exact-dev-edge", "mid-dev"]);
        assert_eq!(names(&m.test), ["just-below-dev", "bottom"]);
    }

    #[test]
    fn protocol_rejects_bad_quality_and_duplicates() {
        let err = build_protocol3(&[record("x", Label::Bonafide, 1.2)]).unwrap_err();
        assert!(matches!(err, PadError::QualityOutOfRange { .. }), "{err}");
        let err = build_protocol3(&[record("x", Label::Bonafide, -0.1)]).unwrap_err();
        assert!(matches!(err, PadError::QualityOutOfRange { .. }), "{err}");
        let err = build_protocol3(&[record("x", Label::Bonafide, f64::NAN)]).unwrap_err();
        assert!(matches!(err, PadError::QualityOutOfRange { .. }), "{err}");
        let dup = vec![record("x", Label::Bonafide, 0.5), record("x", Label::Attack, 0.6)];
        assert!(build_protocol3(&dup).is_err());
    }

    #[test]
    fn upsample_balances_counts_without_touching_originals() {
        let entries: Vec<(SampleId, Label)> = (0..7)
            .map(|i| (SampleId::new(format!("a{i}")), Label::Attack))
            .chain((0..3).map(|i| (SampleId::new(format!("b{i}")), Label::Bonafide)))
            .collect();
        let out = max_upsample(&entries, 11).unwrap();
        assert_eq!(out.len(), 14);
        assert_eq!(&out[..10], &entries[..], "originals must be untouched and in order");
        let n_bona = out.iter().filter(|(_, l)| *l == Label::Bonafide).count();
        assert_eq!(n_bona, 7);
        for (id, label) in &out[10..] {
            assert_eq!(*label, Label::Bonafide);
            assert!(entries.iter().any(|(i, _)| i == id), "duplicate {id} must be an original");
        }
    }

    #[test]
    fn upsample_is_deterministic_and_a_noop_when_balanced() {
        let entries: Vec<(SampleId, Label)> = (0..5)
            .map(|i| (SampleId::new(format!("a{i}")), Label::Attack))
            .chain((0..9).map(|i| (SampleId::new(format!("b{i}")), Label::Bonafide)))
            .collect();
        assert_eq!(max_upsample(&entries, 3).unwrap(), max_upsample(&entries, 3).unwrap());
        assert_ne!(max_upsample(&entries, 3).unwrap(), max_upsample(&entries, 4).unwrap());

        let balanced: Vec<(SampleId, Label)> = (0..4)
            .map(|i| (SampleId::new(format!("a{i}")), Label::Attack))
            .chain((0..4).map(|i| (SampleId::new(format!("b{i}")), Label::Bonafide)))
            .collect();
        assert_eq!(max_upsample(&balanced, 0).unwrap(), balanced);
    }

    #[test]
    fn upsample_requires_both_classes() {
        let only_attacks: Vec<(SampleId, Label)> =
            (0..4).map(|i| (SampleId::new(format!("a{i}")), Label::Attack)).collect();
        assert!(matches!(
            max_upsample(&only_attacks, 0).unwrap_err(),
            PadError::MissingClass { .. }
        ));
        assert!(max_upsample(&[], 0).is_err());
    }

    #[test]
    fn cholesky_matches_known_factorization() {
        let m = vec![vec![4.0, 2.0], vec![2.0, 3.0]];
        let l = cholesky(&m).unwrap();
        assert!((l[0][0] - 2.0).abs() < 1e-12);
        assert!((l[1][0] - 1.0).abs() < 1e-12);
        assert!((l[1][1] - 2.0f64.sqrt()).abs() < 1e-12);
        // Not positive definite: a negative eigenvalue.
        assert!(cholesky(&[vec![1.0, 2.0], vec![2.0, 1.0]]).is_none());
    }

    #[test]
    fn covariance_factor_rejects_degenerate_inputs() {
        assert!(Covariance::Isotropic(0.0).factor(3).is_err());
        assert!(Covariance::Diagonal(vec![1.0, -1.0]).factor(2).is_err());
        assert!(Covariance::Diagonal(vec![1.0]).factor(2).is_err());
        // Asymmetric matrix.
        let m = Covariance::Full(vec![vec![1.0, 0.5], vec![0.2, 1.0]]);
        assert!(m.factor(2).is_err());
    }

    #[test]
    fn synth_is_byte_identical_across_runs() {
        let cfg = SynthConfig::separated(4, 50, 3.0, 0.5, 99);
        let a = synth_dataset(&cfg).unwrap();
        let b = synth_dataset(&cfg).unwrap();
        let mut buf_a = Vec::new();
        let mut buf_b = Vec::new();
        write_catalog(&mut buf_a, &a).unwrap();
        write_catalog(&mut buf_b, &b).unwrap();
        assert_eq!(buf_a, buf_b);
        // And a different seed changes the bytes.
        let c = synth_dataset(&SynthConfig::separated(4, 50, 3.0, 0.5, 100)).unwrap();
        let mut buf_c = Vec::new();
        write_catalog(&mut buf_c, &c).unwrap();
        assert_ne!(buf_a, buf_c);
    }

    #[test]
    fn synth_catalog_round_trips_through_jsonl() {
        let cfg = SynthConfig::separated(3, 20, 2.0, 0.4, 5);
        let samples = synth_dataset(&cfg).unwrap();
        let mut buf = Vec::new();
        write_catalog(&mut buf, &samples).unwrap();
        let back = read_catalog(std::io::Cursor::new(buf)).unwrap();
        assert_eq!(back, samples);
    }

    /// Seeded Monte Carlo check: empirical class means must sit near the
    /// configured means (standard error at n=2000, sigma=0.5 is ~0.011, so a
    /// 0.06 tolerance is five sigma).
    #[test]
    fn synth_matches_configured_class_means() {
        let cfg = SynthConfig::separated(4, 2000, 3.0, 0.5, 7);
        let samples = synth_dataset(&cfg).unwrap();
        let mean_of = |label: Label| -> Vec<f64> {
            let feats: Vec<&Vec<f64>> = samples
                .iter()
                .filter(|s| s.label == label)
                .map(|s| s.feature.as_ref().unwrap())
                .collect();
            let mut mean = vec![0.0; 4];
            for f in &feats {
                for (m, v) in mean.iter_mut().zip(f.iter()) {
                    *m += v;
                }
            }
            mean.iter().map(|m| m / feats.len() as f64).collect()
        };
        let expect = 3.0 / (2.0 * 4.0f64.sqrt());
        for (got, want) in mean_of(Label::Bonafide).iter().zip(std::iter::repeat(expect)) {
            assert!((got - want).abs() < 0.06, "bonafide mean {got} vs {want}");
        }
        for (got, want) in mean_of(Label::Attack).iter().zip(std::iter::repeat(-expect)) {
            assert!((got - want).abs() < 0.06, "attack mean {got} vs {want}");
        }
        for s in &samples {
            assert!((0.0..=1.0).contains(&s.quality_score));
            s.validate().unwrap();
        }
    }

    #[test]
    fn synth_banded_quality_populates_all_three_splits() {
        let cfg = SynthConfig::separated(2, 300, 2.0, 0.5, 21);
        let samples = synth_dataset(&cfg).unwrap();
        let manifest = build_protocol3(&samples).unwrap();
        assert!(manifest.train.len() > 100, "train {}", manifest.train.len());
        assert!(manifest.dev.len() > 50, "dev {}", manifest.dev.len());
        assert!(manifest.test.len() > 50, "test {}", manifest.test.len());
    }

    #[test]
    fn full_covariance_shapes_samples() {
        // Strongly correlated 2-d Gaussian; the empirical correlation must
        // come out clearly positive.
        let cfg = SynthConfig {
            n_bonafide: 1500,
            n_attack: 1,
            bonafide: ClassModel {
                mean: vec![0.0, 0.0],
                covariance: Covariance::Full(vec![vec![1.0, 0.9], vec![0.9, 1.0]]),
            },
            attack: ClassModel {
                mean: vec![0.0, 0.0],
                covariance: Covariance::Isotropic(1.0),
            },
            quality: QualityModel::Uniform { lo: 0.5, hi: 0.9 },
            seed: 31,
        };
        let samples = synth_dataset(&cfg).unwrap();
        let feats: Vec<&Vec<f64>> = samples
            .iter()
            .filter(|s| s.label == Label::Bonafide)
            .map(|s| s.feature.as_ref().unwrap())
            .collect();
        let n = feats.len() as f64;
        let mx: f64 = feats.iter().map(|f| f[0]).sum::<f64>() / n;
        let my: f64 = feats.iter().map(|f| f[1]).sum::<f64>() / n;
        let cov: f64 = feats.iter().map(|f| (f[0] - mx) * (f[1] - my)).sum::<f64>() / n;
        assert!(cov > 0.7, "correlated covariance came out at {cov}");
    }

    #[test]
    fn sample_record_validate_catches_mismatches() {
        let mut r = record("x", Label::Bonafide, 0.5);
        r.validate().unwrap();
        r.attack_category = AttackCategory::MaskResin;
        assert!(r.validate().is_err());
        let mut r = record("y", Label::Attack, 0.5);
        r.validate().unwrap();
        r.attack_category = AttackCategory::None;
        assert!(r.validate().is_err());
    }
}
