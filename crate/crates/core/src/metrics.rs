//! ISO/IEC 30107-3 style PAD metrics: APCER, BPCER, ACER, dev-set EER
//! thresholding, AUC, submission evaluation and ACER ranking.
//!
//! Score polarity is fixed crate-wide: **higher means more bonafide**, and a
//! sample is classified bonafide iff `score >= threshold`. Every rate is an
//! exact count ratio — comparisons between candidate operating points happen
//! on integer cross-products, so oracle tests can demand exact agreement
//! instead of fuzzy tolerances.

use std::collections::{BTreeMap, BTreeSet};
use std::io::{Read, Write};

use serde::{Deserialize, Serialize};

use crate::dataset::{Label, ProtocolManifest, SampleId, Split};
use crate::error::{PadError, Result};

/// One scored sample, as found in a submission.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoredSample {
    pub sample_id: SampleId,
    /// Higher means more bonafide. Finite by construction.
    pub score: f64,
}

impl ScoredSample {
    pub fn new(sample_id: SampleId, score: f64) -> Result<Self> {
        if !score.is_finite() {
            return Err(PadError::param(format!("score for {sample_id} is not finite")));
        }
        Ok(ScoredSample { sample_id, score })
    }
}

/// Class counts behind a report, attack first.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClassCounts {
    pub n_attack: usize,
    pub n_bonafide: usize,
}

/// The full metric tuple for one evaluated submission.
///
/// All rates are decimals in `[0, 1]`; display layers own any percent
/// formatting.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub apcer: f64,
    pub bpcer: f64,
    pub acer: f64,
    pub auc: f64,
    pub eer: f64,
    pub threshold: f64,
    pub counts: ClassCounts,
}

impl MetricReport {
    /// Build a report from freshly computed rates; `acer` is derived as
    /// `(apcer + bpcer) / 2` so the identity holds exactly.
    pub fn from_error_rates(
        apcer: f64,
        bpcer: f64,
        auc: f64,
        eer: f64,
        threshold: f64,
        counts: ClassCounts,
    ) -> Result<Self> {
        for (name, v) in [("apcer", apcer), ("bpcer", bpcer), ("auc", auc), ("eer", eer)] {
            if !v.is_finite() || !(0.0..=1.0).contains(&v) {
                return Err(PadError::param(format!("{name} = {v} is outside [0, 1]")));
            }
        }
        Ok(MetricReport { apcer, bpcer, acer: acer(apcer, bpcer), auc, eer, threshold, counts })
    }

    /// Build a report from rates transcribed out of a published table, where
    /// the ACER arrives already rounded. The published value is kept verbatim
    /// (so ranking and rendering reproduce the source exactly) but must agree
    /// with `(apcer + bpcer) / 2` to half a display unit — 0.005 in percent
    /// space, i.e. 5e-5 on decimals — or the transcription is rejected.
    pub fn with_reported_acer(
        apcer: f64,
        bpcer: f64,
        reported_acer: f64,
        auc: f64,
        eer: f64,
        threshold: f64,
        counts: ClassCounts,
    ) -> Result<Self> {
        let mut report = Self::from_error_rates(apcer, bpcer, auc, eer, threshold, counts)?;
        // The 1e-12 guard absorbs the float error of the subtraction itself.
        if (report.acer - reported_acer).abs() > 5e-5 + 1e-12 {
            return Err(PadError::param(format!(
                "reported acer {reported_acer} inconsistent with (apcer+bpcer)/2 = {}",
                report.acer
            )));
        }
        report.acer = reported_acer;
        Ok(report)
    }
}

/// Attack presentation classification error rate: the fraction of attack
/// samples accepted as bonafide, i.e. scored at or above the threshold.
pub fn apcer(scores: &[f64], labels: &[Label], threshold: f64) -> Result<f64> {
    check_aligned_finite(scores, labels)?;
    let mut n_attack = 0usize;
    let mut accepted = 0usize;
    for (s, l) in scores.iter().zip(labels) {
        if *l == Label::Attack {
            n_attack += 1;
            if *s >= threshold {
                accepted += 1;
            }
        }
    }
    if n_attack == 0 {
        return Err(PadError::UndefinedMetric("apcer needs at least one attack".into()));
    }
    Ok(accepted as f64 / n_attack as f64)
}

/// Bonafide presentation classification error rate: the fraction of bonafide
/// samples rejected, i.e. scored below the threshold.
pub fn bpcer(scores: &[f64], labels: &[Label], threshold: f64) -> Result<f64> {
    check_aligned_finite(scores, labels)?;
    let mut n_bona = 0usize;
    let mut rejected = 0usize;
    for (s, l) in scores.iter().zip(labels) {
        if *l == Label::Bonafide {
            n_bona += 1;
            if *s < threshold {
                rejected += 1;
            }
        }
    }
    if n_bona == 0 {
        return Err(PadError::UndefinedMetric("bpcer needs at least one bonafide".into()));
    }
    Ok(rejected as f64 / n_bona as f64)
}

/// Average classification error rate. Plain arithmetic mean; inputs are
/// assumed to be valid rates.
pub fn acer(apcer: f64, bpcer: f64) -> f64 {
    debug_assert!((0.0..=1.0).contains(&apcer) && (0.0..=1.0).contains(&bpcer));
    (apcer + bpcer) / 2.0
}

/// The selected dev-set operating point.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EerPoint {
    pub threshold: f64,
    pub eer: f64,
}

/// Find the dev-set threshold where APCER and BPCER meet.
///
/// Candidates are the midpoints of adjacent sorted distinct scores plus one
/// sentinel below the minimum and one above the maximum — a finite sweep that
/// provably contains the `|APCER − BPCER|` minimizer. Ties are broken by the
/// smaller `(APCER + BPCER) / 2`, then the smaller threshold. All comparisons
/// use integer cross-products of counts, so the winner is exact.
pub fn eer_threshold(scores: &[f64], labels: &[Label]) -> Result<EerPoint> {
    check_aligned_finite(scores, labels)?;
    let mut attack: Vec<f64> = Vec::new();
    let mut bona: Vec<f64> = Vec::new();
    for (s, l) in scores.iter().zip(labels) {
        match l {
            Label::Attack => attack.push(*s),
            Label::Bonafide => bona.push(*s),
        }
    }
    if attack.is_empty() || bona.is_empty() {
        return Err(PadError::MissingClass { context: "eer_threshold".into() });
    }
    attack.sort_by(f64::total_cmp);
    bona.sort_by(f64::total_cmp);
    let n_a = attack.len() as i128;
    let n_b = bona.len() as i128;

    let mut distinct: Vec<f64> = scores.to_vec();
    distinct.sort_by(f64::total_cmp);
    distinct.dedup();

    let mut candidates = Vec::with_capacity(distinct.len() + 1);
    candidates.push(distinct[0] - 1.0);
    for w in distinct.windows(2) {
        candidates.push((w[0] + w[1]) / 2.0);
    }
    candidates.push(distinct[distinct.len() - 1] + 1.0);

    // Best = (|a·n_b − b·n_a|, a·n_b + b·n_a, threshold), compared
    // lexicographically. a = attacks accepted, b = bonafide rejected.
    let mut best: Option<(i128, i128, f64, i128, i128)> = None;
    for &t in &candidates {
        let a = n_a - attack.partition_point(|&s| s < t) as i128;
        let b = bona.partition_point(|&s| s < t) as i128;
        let diff = (a * n_b - b * n_a).abs();
        let sum = a * n_b + b * n_a;
        let better = match &best {
            None => true,
            Some((bd, bs, bt, _, _)) => {
                diff < *bd || (diff == *bd && (sum < *bs || (sum == *bs && t < *bt)))
            }
        };
        if better {
            best = Some((diff, sum, t, a, b));
        }
    }
    let (_, _, threshold, a, b) = best.expect("candidate list is never empty");
    let eer = (a as f64 / n_a as f64 + b as f64 / n_b as f64) / 2.0;
    Ok(EerPoint { threshold, eer })
}

/// Area under the ROC curve as the tie-corrected rank statistic
/// `P(score_bona > score_attack) + 0.5 · P(equal)`.
///
/// Computed with midranks: the numerator `2·wins + ties` is assembled in
/// integer arithmetic, so the result is the same single division a pairwise
/// counting oracle performs.
pub fn auc(scores: &[f64], labels: &[Label]) -> Result<f64> {
    check_aligned_finite(scores, labels)?;
    let mut all: Vec<(f64, bool)> =
        scores.iter().zip(labels).map(|(s, l)| (*s, *l == Label::Bonafide)).collect();
    let n_b = all.iter().filter(|(_, b)| *b).count() as i128;
    let n_a = all.len() as i128 - n_b;
    if n_a == 0 || n_b == 0 {
        return Err(PadError::MissingClass { context: "auc".into() });
    }
    all.sort_by(|x, y| x.0.total_cmp(&y.0));

    // Doubled bonafide rank sum: each member of a tie group spanning
    // (0-based) indices [i, j) has average 1-based rank (i + 1 + j) / 2, so
    // its doubled rank is the integer i + 1 + j.
    let mut two_rank_sum: i128 = 0;
    let mut i = 0usize;
    while i < all.len() {
        let mut j = i + 1;
        while j < all.len() && all[j].0 == all[i].0 {
            j += 1;
        }
        let bona_in_group = all[i..j].iter().filter(|(_, b)| *b).count() as i128;
        two_rank_sum += (i as i128 + 1 + j as i128) * bona_in_group;
        i = j;
    }
    // Mann-Whitney: U = R_b − n_b(n_b+1)/2; numerator = 2U = 2·wins + ties.
    let numerator = two_rank_sum - n_b * (n_b + 1);
    Ok(numerator as f64 / (2 * n_a * n_b) as f64)
}

fn check_aligned_finite(scores: &[f64], labels: &[Label]) -> Result<()> {
    if scores.len() != labels.len() {
        return Err(PadError::ShapeMismatch {
            expected: format!("{} labels", scores.len()),
            got: format!("{}", labels.len()),
        });
    }
    if let Some(s) = scores.iter().find(|s| !s.is_finite()) {
        return Err(PadError::param(format!("non-finite score {s}")));
    }
    Ok(())
}

/// Evaluate a full submission: EER threshold fitted on dev, error rates and
/// AUC measured on test at that transferred threshold.
///
/// `dev` and `test` must cover exactly the manifest's dev and test id sets;
/// `labels` must cover both. The report's counts are the test-set counts.
pub fn evaluate_submission(
    dev: &BTreeMap<SampleId, f64>,
    test: &BTreeMap<SampleId, f64>,
    labels: &BTreeMap<SampleId, Label>,
    manifest: &ProtocolManifest,
) -> Result<MetricReport> {
    let (dev_scores, dev_labels) = align(dev, labels, manifest, Split::Dev)?;
    let (test_scores, test_labels) = align(test, labels, manifest, Split::Test)?;

    let point = eer_threshold(&dev_scores, &dev_labels)?;
    let apcer = apcer(&test_scores, &test_labels, point.threshold)?;
    let bpcer = bpcer(&test_scores, &test_labels, point.threshold)?;
    let auc = auc(&test_scores, &test_labels)?;
    let n_bonafide = test_labels.iter().filter(|l| **l == Label::Bonafide).count();
    MetricReport::from_error_rates(
        apcer,
        bpcer,
        auc,
        point.eer,
        point.threshold,
        ClassCounts { n_attack: test_labels.len() - n_bonafide, n_bonafide },
    )
}

/// Check that `scores` covers exactly the manifest ids of `split`, then
/// return score/label vectors in manifest order.
fn align(
    scores: &BTreeMap<SampleId, f64>,
    labels: &BTreeMap<SampleId, Label>,
    manifest: &ProtocolManifest,
    split: Split,
) -> Result<(Vec<f64>, Vec<Label>)> {
    let expected: BTreeSet<&SampleId> = manifest.ids(split).iter().collect();
    let got: BTreeSet<&SampleId> = scores.keys().collect();
    if expected != got {
        return Err(PadError::IdMismatch {
            context: format!("{split} scores vs manifest"),
            missing: expected.difference(&got).count(),
            extra: got.difference(&expected).count(),
        });
    }
    let mut s = Vec::with_capacity(expected.len());
    let mut l = Vec::with_capacity(expected.len());
    for id in manifest.ids(split) {
        s.push(scores[id]);
        l.push(*labels.get(id).ok_or_else(|| PadError::IdMismatch {
            context: format!("label set lacks {id}"),
            missing: 1,
            extra: 0,
        })?);
    }
    Ok((s, l))
}

/// One row of a ranked leaderboard. Rates are decimals.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LeaderboardRow {
    pub rank: usize,
    pub team: String,
    pub acer: f64,
    pub apcer: f64,
    pub bpcer: f64,
    pub auc: f64,
}

/// Rank reports by ascending ACER, ties by ascending APCER, then team name.
pub fn rank(reports: &BTreeMap<String, MetricReport>) -> Result<Vec<LeaderboardRow>> {
    if reports.is_empty() {
        return Err(PadError::param("rank needs at least one report"));
    }
    let mut rows: Vec<LeaderboardRow> = reports
        .iter()
        .map(|(team, r)| LeaderboardRow {
            rank: 0,
            team: team.clone(),
            acer: r.acer,
            apcer: r.apcer,
            bpcer: r.bpcer,
            auc: r.auc,
        })
        .collect();
    rows.sort_by(|a, b| {
        a.acer
            .total_cmp(&b.acer)
            .then(a.apcer.total_cmp(&b.apcer))
            .then(a.team.cmp(&b.team))
    });
    for (i, row) in rows.iter_mut().enumerate() {
        row.rank = i + 1;
    }
    Ok(rows)
}

/// Write scores as the canonical `sample_id,score` CSV.
pub fn write_score_csv<W: Write>(w: W, rows: &[ScoredSample]) -> Result<()> {
    let mut wtr = csv::Writer::from_writer(w);
    wtr.write_record(["sample_id", "score"])?;
    for r in rows {
        wtr.write_record([r.sample_id.as_str(), &r.score.to_string()])?;
    }
    wtr.flush()?;
    Ok(())
}

/// Read a `sample_id,score` CSV. This is the plain loader: the first
/// malformed row aborts with an error. The challenge module layers full
/// violation collection on top for submission gatekeeping.
pub fn read_score_csv<R: Read>(r: R) -> Result<Vec<ScoredSample>> {
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).from_reader(r);
    {
        let headers = rdr.headers()?;
        if headers != vec!["sample_id", "score"] {
            return Err(PadError::param(format!("bad score header {headers:?}")));
        }
    }
    let mut out = Vec::new();
    for record in rdr.records() {
        let record = record?;
        if record.len() != 2 {
            return Err(PadError::param(format!("score row {record:?} needs 2 fields")));
        }
        let score: f64 = record[1]
            .trim()
            .parse()
            .map_err(|_| PadError::param(format!("bad score {:?}", &record[1])))?;
        out.push(ScoredSample::new(SampleId::new(&record[0]), score)?);
    }
    Ok(out)
}

/// Write labels as `sample_id,label` with 0 = attack, 1 = bonafide.
pub fn write_label_csv<W: Write>(w: W, rows: &[(SampleId, Label)]) -> Result<()> {
    let mut wtr = csv::Writer::from_writer(w);
    wtr.write_record(["sample_id", "label"])?;
    for (id, label) in rows {
        let code = if *label == Label::Bonafide { "1" } else { "0" };
        wtr.write_record([id.as_str(), code])?;
    }
    wtr.flush()?;
    Ok(())
}

/// Read a `sample_id,label` CSV with 0 = attack, 1 = bonafide.
pub fn read_label_csv<R: Read>(r: R) -> Result<Vec<(SampleId, Label)>> {
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).from_reader(r);
    {
        let headers = rdr.headers()?;
        if headers != vec!["sample_id", "label"] {
            return Err(PadError::param(format!("bad label header {headers:?}")));
        }
    }
    let mut out = Vec::new();
    for record in rdr.records() {
        let record = record?;
        let label = match record.get(1).map(str::trim) {
            Some("0") => Label::Attack,
            Some("1") => Label::Bonafide,
            other => return Err(PadError::param(format!("bad label {other:?}"))),
        };
        out.push((SampleId::new(&record[0]), label));
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::Rng;

    use Label::{Attack as A, Bonafide as B};

    #[test]
    fn apcer_counts_accepted_attacks() {
        let scores = [0.1, 0.2, 0.9, 0.8];
        let labels = [A, A, B, B];
        assert_eq!(apcer(&scores, &labels, 0.5).unwrap(), 0.0);
        assert_eq!(apcer(&scores, &labels, 0.05).unwrap(), 1.0);
        assert_eq!(apcer(&scores, &labels, 0.2).unwrap(), 0.5, "score == threshold is accepted");
        assert!(matches!(
            apcer(&scores[2..], &labels[2..], 0.5).unwrap_err(),
            PadError::UndefinedMetric(_)
        ));
    }

    #[test]
    fn bpcer_counts_rejected_bonafide() {
        let scores = [0.1, 0.2, 0.9, 0.8];
        let labels = [A, A, B, B];
        assert_eq!(bpcer(&scores, &labels, 0.5).unwrap(), 0.0);
        assert_eq!(bpcer(&scores, &labels, 0.95).unwrap(), 1.0);
        assert_eq!(bpcer(&scores, &labels, 0.9).unwrap(), 0.5, "score == threshold is accepted");
        assert!(matches!(
            bpcer(&scores[..2], &labels[..2], 0.5).unwrap_err(),
            PadError::UndefinedMetric(_)
        ));
    }

    /// Direct counting oracle over random instances.
    #[test]
    fn rates_match_counting_oracle() {
        let mut rng = crate::seeding::stream_rng(17, 0);
        for _ in 0..100 {
            let n = rng.random_range(2..60);
            let scores: Vec<f64> = (0..n).map(|_| rng.random_range(0.0..1.0)).collect();
            let labels: Vec<Label> =
                (0..n).map(|_| if rng.random::<bool>() { A } else { B }).collect();
            let t: f64 = rng.random_range(0.0..1.0);
            let n_a = labels.iter().filter(|l| **l == A).count();
            let n_b = n - n_a;
            if n_a > 0 {
                let direct = scores
                    .iter()
                    .zip(&labels)
                    .filter(|(s, l)| **l == A && **s >= t)
                    .count() as f64
                    / n_a as f64;
                assert_eq!(apcer(&scores, &labels, t).unwrap(), direct);
            }
            if n_b > 0 {
                let direct = scores
                    .iter()
                    .zip(&labels)
                    .filter(|(s, l)| **l == B && **s < t)
                    .count() as f64
                    / n_b as f64;
                assert_eq!(bpcer(&scores, &labels, t).unwrap(), direct);
            }
        }
    }

    #[test]
    fn acer_reproduces_published_examples() {
        // Printed-table rows, in percent space: the mean must sit within half
        // a display unit of the published two-decimal ACER. The true decimal
        // difference is exactly 0.005 for rounded rows; the 1e-9 addend only
        // absorbs binary representation error of the f64 subtraction (the
        // computed gap is 0.005 + ~8e-13).
        assert!(((5.07 + 4.38) / 2.0 - 4.73f64).abs() <= 0.005 + 1e-9);
        assert!(((9.20 + 1.91) / 2.0 - 5.56f64).abs() <= 0.005 + 1e-9);
        assert_eq!(acer(0.0, 0.0), 0.0);
        assert_eq!(acer(0.2, 0.4), 0.30000000000000004); // plain mean, no rounding
    }

    #[test]
    fn eer_on_perfectly_separated_scores_is_zero() {
        let scores = [0.9, 0.8, 0.2, 0.1];
        let labels = [B, B, A, A];
        let p = eer_threshold(&scores, &labels).unwrap();
        assert_eq!(p.eer, 0.0);
        assert!(p.threshold > 0.2 && p.threshold < 0.8, "threshold {}", p.threshold);
    }

    #[test]
    fn eer_requires_both_classes() {
        assert!(matches!(
            eer_threshold(&[0.5, 0.6], &[A, A]).unwrap_err(),
            PadError::MissingClass { .. }
        ));
    }

    /// Exhaustive-sweep oracle: same candidate set, linear scan with exact
    /// rational comparison, independent bookkeeping.
    fn eer_oracle(scores: &[f64], labels: &[Label]) -> (f64, f64) {
        let mut distinct = scores.to_vec();
        distinct.sort_by(f64::total_cmp);
        distinct.dedup();
        let mut candidates = vec![distinct[0] - 1.0];
        for w in distinct.windows(2) {
            candidates.push((w[0] + w[1]) / 2.0);
        }
        candidates.push(distinct.last().unwrap() + 1.0);
        let n_a = labels.iter().filter(|l| **l == A).count() as i128;
        let n_b = labels.len() as i128 - n_a;
        let mut best: Option<(i128, i128, f64)> = None;
        for &t in &candidates {
            let a = scores.iter().zip(labels).filter(|(s, l)| **l == A && **s >= t).count()
                as i128;
            let b = scores.iter().zip(labels).filter(|(s, l)| **l == B && **s < t).count()
                as i128;
            let key = ((a * n_b - b * n_a).abs(), a * n_b + b * n_a, t);
            let better = match best {
                None => true,
                Some(k) => (key.0, key.1) < (k.0, k.1) || ((key.0, key.1) == (k.0, k.1) && t < k.2),
            };
            if better {
                best = Some(key);
            }
        }
        let (_, _, t) = best.unwrap();
        let a = scores.iter().zip(labels).filter(|(s, l)| **l == A && **s >= t).count() as f64;
        let b = scores.iter().zip(labels).filter(|(s, l)| **l == B && **s < t).count() as f64;
        (t, (a / n_a as f64 + b / n_b as f64) / 2.0)
    }

    #[test]
    fn eer_matches_exhaustive_sweep_on_random_instances() {
        let mut rng = crate::seeding::stream_rng(23, 0);
        for round in 0..100 {
            let n = rng.random_range(2..100);
            let mut scores: Vec<f64> = (0..n)
                .map(|_| {
                    // Quantized scores force plenty of exact ties.
                    (rng.random_range(0..20) as f64) / 20.0
                })
                .collect();
            let mut labels: Vec<Label> =
                (0..n).map(|_| if rng.random::<bool>() { A } else { B }).collect();
            labels[0] = A;
            if n > 1 {
                labels[1] = B;
            } else {
                scores.push(0.5);
                labels.push(B);
            }
            let got = eer_threshold(&scores, &labels).unwrap();
            let (want_t, want_eer) = eer_oracle(&scores, &labels);
            assert_eq!(got.threshold, want_t, "round {round}");
            assert_eq!(got.eer, want_eer, "round {round}");
        }
    }

    #[test]
    fn auc_trivial_cases() {
        assert_eq!(auc(&[0.9, 0.8, 0.2, 0.1], &[B, B, A, A]).unwrap(), 1.0);
        assert_eq!(auc(&[0.5, 0.5, 0.5, 0.5], &[B, B, A, A]).unwrap(), 0.5);
        assert_eq!(auc(&[0.1, 0.2, 0.8, 0.9], &[B, B, A, A]).unwrap(), 0.0);
        assert!(auc(&[0.1, 0.2], &[A, A]).is_err());
    }

    /// O(n²) pairwise oracle with the same integer numerator.
    fn auc_oracle(scores: &[f64], labels: &[Label]) -> f64 {
        let bona: Vec<f64> = scores
            .iter()
            .zip(labels)
            .filter(|(_, l)| **l == B)
            .map(|(s, _)| *s)
            .collect();
        let att: Vec<f64> = scores
            .iter()
            .zip(labels)
            .filter(|(_, l)| **l == A)
            .map(|(s, _)| *s)
            .collect();
        let mut numerator: i128 = 0; // 2·wins + ties
        for &sb in &bona {
            for &sa in &att {
                if sb > sa {
                    numerator += 2;
                } else if sb == sa {
                    numerator += 1;
                }
            }
        }
        numerator as f64 / (2 * bona.len() * att.len()) as f64
    }

    #[test]
    fn auc_matches_pairwise_oracle_exactly() {
        let mut rng = crate::seeding::stream_rng(29, 0);
        for _ in 0..100 {
            let n = rng.random_range(2..80);
            let scores: Vec<f64> =
                (0..n).map(|_| (rng.random_range(0..10) as f64) / 10.0).collect();
            let mut labels: Vec<Label> =
                (0..n).map(|_| if rng.random::<bool>() { A } else { B }).collect();
            labels[0] = A;
            labels[n.max(2) - 1] = B;
            // The midrank numerator and the pairwise numerator are the same
            // integer, so the quotients are bit-identical.
            assert_eq!(
                auc(&scores, &labels).unwrap().to_bits(),
                auc_oracle(&scores, &labels).to_bits()
            );
        }
    }

    proptest! {
        /// APCER non-increasing, BPCER non-decreasing in the threshold.
        #[test]
        fn rates_are_threshold_monotone(
            scores in proptest::collection::vec(0.0f64..1.0, 4..40),
            t1 in 0.0f64..1.0,
            t2 in 0.0f64..1.0,
        ) {
            let labels: Vec<Label> =
                (0..scores.len()).map(|i| if i % 2 == 0 { A } else { B }).collect();
            let (lo, hi) = if t1 <= t2 { (t1, t2) } else { (t2, t1) };
            prop_assert!(apcer(&scores, &labels, lo).unwrap() >= apcer(&scores, &labels, hi).unwrap());
            prop_assert!(bpcer(&scores, &labels, lo).unwrap() <= bpcer(&scores, &labels, hi).unwrap());
        }

        /// AUC is invariant under strictly increasing transforms.
        #[test]
        fn auc_is_rank_invariant(
            scores in proptest::collection::vec(0.0f64..1.0, 4..40),
        ) {
            let labels: Vec<Label> =
                (0..scores.len()).map(|i| if i % 2 == 0 { A } else { B }).collect();
            let transformed: Vec<f64> = scores.iter().map(|s| (3.0 * s).exp()).collect();
            let a = auc(&scores, &labels).unwrap();
            let b = auc(&transformed, &labels).unwrap();
            prop_assert!((a - b).abs() < 1e-12);
        }
    }

    fn manifest_and_maps() -> (
        ProtocolManifest,
        BTreeMap<SampleId, f64>,
        BTreeMap<SampleId, f64>,
        BTreeMap<SampleId, Label>,
    ) {
        use crate::dataset::{BandSet, DEV_BAND, TEST_BAND, TRAIN_BAND};
        let ids = |prefix: &str, n: usize| -> Vec<SampleId> {
            (0..n).map(|i| SampleId::new(format!("{prefix}{i}"))).collect()
        };
        let manifest = ProtocolManifest {
            bands: BandSet { train: TRAIN_BAND, dev: DEV_BAND, test: TEST_BAND },
            train: vec![],
            dev: ids("d", 4),
            test: ids("t", 4),
        };
        // Perfectly separated everywhere: bonafide on even indices.
        let mut dev = BTreeMap::new();
        let mut test = BTreeMap::new();
        let mut labels = BTreeMap::new();
        for i in 0..4 {
            let (d, t) = (SampleId::new(format!("d{i}")), SampleId::new(format!("t{i}")));
            let label = if i % 2 == 0 { B } else { A };
            dev.insert(d.clone(), label.as_target() * 0.8 + 0.1);
            test.insert(t.clone(), label.as_target() * 0.8 + 0.1);
            labels.insert(d, label);
            labels.insert(t, label);
        }
        (manifest, dev, test, labels)
    }

    #[test]
    fn evaluate_submission_on_separated_fixture() {
        let (manifest, dev, test, labels) = manifest_and_maps();
        let report = evaluate_submission(&dev, &test, &labels, &manifest).unwrap();
        assert_eq!(report.acer, 0.0);
        assert_eq!(report.auc, 1.0);
        assert_eq!(report.eer, 0.0);
        assert_eq!(report.counts, ClassCounts { n_attack: 2, n_bonafide: 2 });
    }

    #[test]
    fn evaluate_submission_rejects_id_mismatch() {
        let (manifest, mut dev, test, labels) = manifest_and_maps();
        dev.remove(&SampleId::new("d0"));
        dev.insert(SampleId::new("intruder"), 0.5);
        let err = evaluate_submission(&dev, &test, &labels, &manifest).unwrap_err();
        match err {
            PadError::IdMismatch { missing, extra, .. } => {
                assert_eq!((missing, extra), (1, 1));
            }
            other => panic!("wrong error {other}"),
        }
    }

    /// Hand-computed 8-sample fixture: dev picks a threshold between 0.45
    /// and 0.55; on test one attack (0.7) is accepted and one bonafide (0.4)
    /// rejected.
    #[test]
    fn evaluate_submission_matches_hand_arithmetic() {
        use crate::dataset::{BandSet, DEV_BAND, TEST_BAND, TRAIN_BAND};
        let id = |s: &str| SampleId::new(s);
        let manifest = ProtocolManifest {
            bands: BandSet { train: TRAIN_BAND, dev: DEV_BAND, test: TEST_BAND },
            train: vec![],
            dev: vec![id("d0"), id("d1"), id("d2"), id("d3")],
            test: vec![id("t0"), id("t1"), id("t2"), id("t3")],
        };
        let dev: BTreeMap<SampleId, f64> = [
            (id("d0"), 0.9),
            (id("d1"), 0.55),
            (id("d2"), 0.45),
            (id("d3"), 0.1),
        ]
        .into();
        let test: BTreeMap<SampleId, f64> =
            [(id("t0"), 0.8), (id("t1"), 0.4), (id("t2"), 0.7), (id("t3"), 0.2)].into();
        let labels: BTreeMap<SampleId, Label> = [
            (id("d0"), B),
            (id("d1"), B),
            (id("d2"), A),
            (id("d3"), A),
            (id("t0"), B),
            (id("t1"), B),
            (id("t2"), A),
            (id("t3"), A),
        ]
        .into();
        let report = evaluate_submission(&dev, &test, &labels, &manifest).unwrap();
        assert_eq!(report.threshold, 0.5);
        assert_eq!(report.eer, 0.0);
        assert_eq!(report.apcer, 0.5, "attack t2 at 0.7 is accepted");
        assert_eq!(report.bpcer, 0.5, "bonafide t1 at 0.4 is rejected");
        assert_eq!(report.acer, 0.5);
    }

    #[test]
    fn rank_sorts_by_acer_then_apcer_then_name() {
        let mk = |apcer: f64, bpcer: f64| {
            MetricReport::from_error_rates(
                apcer,
                bpcer,
                0.9,
                0.1,
                0.5,
                ClassCounts { n_attack: 10, n_bonafide: 10 },
            )
            .unwrap()
        };
        let reports: BTreeMap<String, MetricReport> = [
            ("zeta".to_string(), mk(0.10, 0.10)),   // acer 0.10, apcer 0.10
            ("alpha".to_string(), mk(0.12, 0.08)),  // acer 0.10, apcer 0.12
            ("mid".to_string(), mk(0.10, 0.10)),    // tie with zeta on all keys but name
            ("best".to_string(), mk(0.02, 0.04)),   // acer 0.03
        ]
        .into();
        let rows = rank(&reports).unwrap();
        let order: Vec<&str> = rows.iter().map(|r| r.team.as_str()).collect();
        assert_eq!(order, ["best", "mid", "zeta", "alpha"]);
        assert_eq!(rows.iter().map(|r| r.rank).collect::<Vec<_>>(), [1, 2, 3, 4]);
        assert!(rank(&BTreeMap::new()).is_err());
    }

    #[test]
    fn reported_acer_is_kept_verbatim_but_checked() {
        let counts = ClassCounts { n_attack: 100, n_bonafide: 100 };
        // 0.0473 is the printed rounding of (0.0507 + 0.0438) / 2 = 0.04725.
        let r =
            MetricReport::with_reported_acer(0.0507, 0.0438, 0.0473, 0.9838, 0.05, 0.5, counts)
                .unwrap();
        assert_eq!(r.acer, 0.0473);
        // A transcription error larger than half a display unit is rejected.
        assert!(MetricReport::with_reported_acer(
            0.0507, 0.0438, 0.0480, 0.9838, 0.05, 0.5, counts
        )
        .is_err());
    }

    #[test]
    fn score_csv_round_trips_and_validates_header() {
        let rows = vec![
            ScoredSample::new(SampleId::new("a"), 0.25).unwrap(),
            ScoredSample::new(SampleId::new("b"), 0.7071067811865476).unwrap(),
        ];
        let mut buf = Vec::new();
        write_score_csv(&mut buf, &rows).unwrap();
        let back = read_score_csv(buf.as_slice()).unwrap();
        assert_eq!(back, rows);
        assert!(read_score_csv("wrong,header\na,0.5\n".as_bytes()).is_err());
        assert!(read_score_csv("sample_id,score\na,abc\n".as_bytes()).is_err());
        assert!(read_score_csv("sample_id,score\na,inf\n".as_bytes()).is_err());
    }

    #[test]
    fn label_csv_round_trips() {
        let rows = vec![
            (SampleId::new("a"), Label::Attack),
            (SampleId::new("b"), Label::Bonafide),
        ];
        let mut buf = Vec::new();
        write_label_csv(&mut buf, &rows).unwrap();
        assert_eq!(read_label_csv(buf.as_slice()).unwrap(), rows);
        assert!(read_label_csv("sample_id,label\na,2\n".as_bytes()).is_err());
    }

    #[test]
    fn scored_sample_rejects_non_finite() {
        assert!(ScoredSample::new(SampleId::new("x"), f64::NAN).is_err());
        assert!(ScoredSample::new(SampleId::new("x"), f64::INFINITY).is_err());
    }
}
