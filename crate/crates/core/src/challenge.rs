//! Two-phase challenge simulator: label firewall, submission validation,
//! daily budgets, audit trail, scripted teams, and leaderboard rendering.
//!
//! The platform runs in two phases. During development, teams see training
//! labels only and submit scores over the dev split for leaderboard
//! feedback. During the final phase, dev labels open up, submissions must
//! cover the dev and test splits together (the dev part fixes the decision
//! threshold, the test part is what gets measured), and each team has a
//! fixed number of submission opportunities per logical day. The final
//! ranking is taken from each team's last accepted final-phase submission.
//!
//! Calendar time is a logical day counter supplied by the driver, so every
//! run is deterministic and replayable.

use std::collections::{BTreeMap, BTreeSet};
use std::io::{BufRead, Write};

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::dataset::{Label, ProtocolManifest, SampleId, SampleRecord, Split};
use crate::error::Violation;
use crate::metrics::{
    self, ClassCounts, LeaderboardRow, MetricReport, ScoredSample,
};
use crate::seeding::stream_rng;
use crate::{par, PadError, Result};

/// Submission opportunities per team per logical day in the final phase.
pub const FINAL_PHASE_DAILY_BUDGET: u32 = 2;

/// The required header line of a score submission file.
pub const SUBMISSION_HEADER: &str = "sample_id,score";

// ---------------------------------------------------------------------------
// Phases and the label firewall
// ---------------------------------------------------------------------------

/// Which stage of the challenge is running.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Phase {
    Development,
    Final,
}

impl Phase {
    pub fn name(self) -> &'static str {
        match self {
            Phase::Development => "development",
            Phase::Final => "final",
        }
    }
}

impl std::fmt::Display for Phase {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

/// Per-phase rules: label visibility and the daily submission budget.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct PhaseConfig {
    pub phase: Phase,
    /// `None` means unlimited (the development-phase default).
    pub submission_budget_per_day: Option<u32>,
}

impl PhaseConfig {
    /// Development phase: train labels visible, unlimited submissions.
    pub fn development() -> Self {
        PhaseConfig {
            phase: Phase::Development,
            submission_budget_per_day: None,
        }
    }

    /// Final phase: train+dev labels visible, two submissions per day.
    pub fn final_phase() -> Self {
        PhaseConfig {
            phase: Phase::Final,
            submission_budget_per_day: Some(FINAL_PHASE_DAILY_BUDGET),
        }
    }

    /// Whether a team may read the labels of `split` during this phase.
    pub fn labels_visible(&self, split: Split) -> bool {
        match self.phase {
            Phase::Development => split == Split::Train,
            Phase::Final => split == Split::Train || split == Split::Dev,
        }
    }

    /// The splits a submission file must cover in this phase.
    pub fn required_splits(&self) -> &'static [Split] {
        match self.phase {
            Phase::Development => &[Split::Dev],
            Phase::Final => &[Split::Dev, Split::Test],
        }
    }
}

/// Owns every ground-truth label. Team-facing code only ever receives a
/// [`TeamLabelView`], which enforces the phase's visibility rules; the
/// scoring internals read the vault directly.
#[derive(Debug, Clone)]
pub struct LabelVault {
    labels: BTreeMap<SampleId, Label>,
    manifest: ProtocolManifest,
}

impl LabelVault {
    /// Index the records' labels and check the manifest covers them.
    pub fn new(records: &[SampleRecord], manifest: ProtocolManifest) -> Result<Self> {
        let labels: BTreeMap<SampleId, Label> = records
            .iter()
            .map(|r| (r.sample_id.clone(), r.label))
            .collect();
        if labels.len() != records.len() {
            return Err(PadError::param("duplicate sample ids in the record set"));
        }
        for split in Split::ALL {
            for id in manifest.ids(split) {
                if !labels.contains_key(id) {
                    return Err(PadError::param(format!(
                        "manifest id {id} has no labeled record"
                    )));
                }
            }
        }
        Ok(LabelVault { labels, manifest })
    }

    pub fn manifest(&self) -> &ProtocolManifest {
        &self.manifest
    }

    /// The phase-gated view handed to team-side code.
    pub fn view(&self, config: PhaseConfig) -> TeamLabelView<'_> {
        TeamLabelView {
            vault: self,
            config,
        }
    }

    /// Unrestricted labels for the scoring internals.
    fn all(&self) -> &BTreeMap<SampleId, Label> {
        &self.labels
    }

    /// Labels of one split, in manifest order.
    fn split_labels(&self, split: Split) -> Vec<Label> {
        self.manifest
            .ids(split)
            .iter()
            .map(|id| self.labels[id])
            .collect()
    }
}

/// A team's phase-limited window onto the labels.
#[derive(Debug, Clone, Copy)]
pub struct TeamLabelView<'a> {
    vault: &'a LabelVault,
    config: PhaseConfig,
}

impl TeamLabelView<'_> {
    pub fn phase(&self) -> Phase {
        self.config.phase
    }

    /// Look up a label, refusing splits the phase keeps hidden.
    pub fn label_of(&self, id: &SampleId) -> Result<Label> {
        let split = self
            .vault
            .manifest
            .split_of(id)
            .ok_or_else(|| PadError::param(format!("unknown sample id {id}")))?;
        if !self.config.labels_visible(split) {
            return Err(PadError::AccessDenied {
                split: split.name().to_string(),
                phase: self.config.phase.name().to_string(),
            });
        }
        Ok(self.vault.labels[id])
    }
}

// ---------------------------------------------------------------------------
// Submission validation
// ---------------------------------------------------------------------------

/// One submission attempt, as the platform records it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Submission {
    pub team: String,
    pub phase: Phase,
    /// Per-team 1-based counter across the whole run.
    pub sequence_number: u32,
    /// Logical day the submission arrived on.
    pub received_at: u32,
    pub scores: BTreeMap<SampleId, f64>,
}

/// The sample ids a submission must cover exactly in the given phase.
pub fn required_ids(manifest: &ProtocolManifest, phase: Phase) -> BTreeSet<SampleId> {
    let config = match phase {
        Phase::Development => PhaseConfig::development(),
        Phase::Final => PhaseConfig::final_phase(),
    };
    config
        .required_splits()
        .iter()
        .flat_map(|s| manifest.ids(*s).iter().cloned())
        .collect()
}

/// Parse and validate a score file against the required id set.
///
/// Every rule is checked on every row and all violations are collected
/// before rejecting, so one upload round-trip reports everything wrong with
/// the file. Row numbers are 1-based over the data rows (what a spreadsheet
/// shows beneath the header). Any violation rejects the whole submission.
pub fn validate_submission(
    text: &str,
    required: &BTreeSet<SampleId>,
) -> Result<BTreeMap<SampleId, f64>> {
    let mut violations = Vec::new();
    let mut lines = text.lines();
    match lines.next() {
        Some(header) if header.trim_end_matches('\r') == SUBMISSION_HEADER => {}
        other => {
            violations.push(Violation::BadHeader {
                found: other.unwrap_or("").trim_end_matches('\r').to_string(),
            });
        }
    }
    let mut scores: BTreeMap<SampleId, f64> = BTreeMap::new();
    let mut seen: BTreeSet<String> = BTreeSet::new();
    for (i, raw) in lines.enumerate() {
        let row = i + 1;
        let line = raw.trim_end_matches('\r');
        if line.is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != 2 {
            violations.push(Violation::WrongColumnCount {
                row,
                found: fields.len(),
            });
            continue;
        }
        let id_str = fields[0].trim();
        let id = SampleId::new(id_str);
        if !seen.insert(id_str.to_string()) {
            violations.push(Violation::DuplicateId {
                row,
                id: id_str.to_string(),
            });
        }
        if !required.contains(&id) {
            violations.push(Violation::UnknownId {
                row,
                id: id_str.to_string(),
            });
        }
        match fields[1].trim().parse::<f64>() {
            Ok(v) if v.is_finite() => {
                if !(0.0..=1.0).contains(&v) {
                    violations.push(Violation::ScoreOutOfRange { row, value: v });
                } else {
                    scores.entry(id).or_insert(v);
                }
            }
            _ => {
                violations.push(Violation::UnparsableScore {
                    row,
                    value: fields[1].trim().to_string(),
                });
            }
        }
    }
    let missing: Vec<String> = required
        .iter()
        .filter(|id| !seen.contains(id.as_str()))
        .map(|id| id.as_str().to_string())
        .collect();
    if !missing.is_empty() {
        violations.push(Violation::MissingIds { ids: missing });
    }
    if violations.is_empty() {
        Ok(scores)
    } else {
        Err(PadError::SubmissionInvalid { violations })
    }
}

/// Render scored samples as a submission file body.
pub fn format_submission(rows: &[ScoredSample]) -> String {
    let mut out = String::from(SUBMISSION_HEADER);
    out.push('\n');
    for r in rows {
        out.push_str(r.sample_id.as_str());
        out.push(',');
        out.push_str(&r.score.to_string());
        out.push('\n');
    }
    out
}

// ---------------------------------------------------------------------------
// Scoring
// ---------------------------------------------------------------------------

/// Score a validated submission under the phase's evaluation rules.
///
/// Development phase: all metrics on the dev split at the dev-derived
/// equal-error threshold. Final phase: the dev part of the submission fixes
/// the threshold, which transfers to the test part for APCER/BPCER/ACER.
pub fn score_submission(
    scores: &BTreeMap<SampleId, f64>,
    phase: Phase,
    vault: &LabelVault,
) -> Result<MetricReport> {
    match phase {
        Phase::Development => {
            let dev_ids = vault.manifest().ids(Split::Dev);
            let mut s = Vec::with_capacity(dev_ids.len());
            for id in dev_ids {
                let v = scores.get(id).ok_or_else(|| PadError::IdMismatch {
                    context: "development submission".to_string(),
                    missing: 1,
                    extra: 0,
                })?;
                s.push(*v);
            }
            let labels = vault.split_labels(Split::Dev);
            let point = metrics::eer_threshold(&s, &labels)?;
            let apcer = metrics::apcer(&s, &labels, point.threshold)?;
            let bpcer = metrics::bpcer(&s, &labels, point.threshold)?;
            let auc = metrics::auc(&s, &labels)?;
            let counts = ClassCounts {
                n_attack: labels.iter().filter(|l| **l == Label::Attack).count(),
                n_bonafide: labels.iter().filter(|l| **l == Label::Bonafide).count(),
            };
            MetricReport::from_error_rates(apcer, bpcer, auc, point.eer, point.threshold, counts)
        }
        Phase::Final => {
            let mut dev = BTreeMap::new();
            let mut test = BTreeMap::new();
            for (id, v) in scores {
                match vault.manifest().split_of(id) {
                    Some(Split::Dev) => {
                        dev.insert(id.clone(), *v);
                    }
                    Some(Split::Test) => {
                        test.insert(id.clone(), *v);
                    }
                    _ => {}
                }
            }
            metrics::evaluate_submission(&dev, &test, vault.all(), vault.manifest())
        }
    }
}

// ---------------------------------------------------------------------------
// Scripted teams
// ---------------------------------------------------------------------------

/// A simulated team: a score generator of configurable quality.
///
/// Scripts that reference ground truth model the *accuracy of the simulated
/// team's classifier* (a perfect classifier is indistinguishable from label
/// knowledge); they are driven by the simulator, not by the phase-gated
/// label view that real team-side code would get.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum TeamScript {
    /// Perfect classifier: bonafide 1.0, attack 0.0.
    Oracle,
    /// Inverted classifier: bonafide 0.0, attack 1.0.
    AntiOracle,
    /// Uniform random scores in `[0, 1]`.
    Random,
    /// Oracle output plus clamped Gaussian noise of the given strength.
    NoisyOracle { noise: f64 },
    /// The same score for every sample.
    Constant { value: f64 },
    /// A buggy exporter: oracle scores, but only every other row makes it
    /// into the file. Always rejected by validation for missing coverage.
    Truncated,
}

impl TeamScript {
    /// Generate scores for `ids` in order.
    pub fn scores(
        &self,
        ids: &[SampleId],
        labels: &BTreeMap<SampleId, Label>,
        rng: &mut ChaCha8Rng,
    ) -> Result<Vec<ScoredSample>> {
        let keep = |i: &usize| match self {
            TeamScript::Truncated => i % 2 == 0,
            _ => true,
        };
        ids.iter()
            .enumerate()
            .filter(|(i, _)| keep(i))
            .map(|(_, id)| {
                let truth = || -> Result<f64> {
                    labels
                        .get(id)
                        .map(|l| l.as_target())
                        .ok_or_else(|| PadError::param(format!("no label for {id}")))
                };
                let score = match self {
                    TeamScript::Oracle | TeamScript::Truncated => truth()?,
                    TeamScript::AntiOracle => 1.0 - truth()?,
                    TeamScript::Random => rng.random::<f64>(),
                    TeamScript::NoisyOracle { noise } => {
                        // Box-Muller noise, clamped back into range.
                        let u1: f64 = rng.random::<f64>().max(1e-12);
                        let u2: f64 = rng.random();
                        let g = (-2.0 * u1.ln()).sqrt()
                            * (2.0 * std::f64::consts::PI * u2).cos();
                        (truth()? + noise * g).clamp(0.0, 1.0)
                    }
                    TeamScript::Constant { value } => *value,
                };
                ScoredSample::new(id.clone(), score)
            })
            .collect()
    }
}

// ---------------------------------------------------------------------------
// The challenge driver
// ---------------------------------------------------------------------------

/// One team's registration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TeamEntry {
    pub name: String,
    pub script: TeamScript,
}

/// Full run configuration for the simulator.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ChallengeConfig {
    pub seed: u64,
    pub development_days: u32,
    pub final_days: u32,
    /// Submission attempts each team makes per development-phase day.
    pub development_attempts_per_day: u32,
    /// Submission attempts each team makes per final-phase day; attempts
    /// beyond the budget are rejected by the ledger.
    pub final_attempts_per_day: u32,
    /// `None` = unlimited, the development default.
    pub development_budget_per_day: Option<u32>,
    pub final_budget_per_day: u32,
    pub teams: Vec<TeamEntry>,
}

impl Default for ChallengeConfig {
    fn default() -> Self {
        ChallengeConfig {
            seed: 7,
            development_days: 3,
            final_days: 2,
            development_attempts_per_day: 1,
            final_attempts_per_day: 1,
            development_budget_per_day: None,
            final_budget_per_day: FINAL_PHASE_DAILY_BUDGET,
            teams: Vec::new(),
        }
    }
}

impl ChallengeConfig {
    pub fn validate(&self) -> Result<()> {
        if self.teams.is_empty() {
            return Err(PadError::config("challenge needs at least one team"));
        }
        let mut names = BTreeSet::new();
        for t in &self.teams {
            if t.name.trim().is_empty() {
                return Err(PadError::config("team names must be non-empty"));
            }
            if !names.insert(&t.name) {
                return Err(PadError::config(format!(
                    "duplicate team name {:?}",
                    t.name
                )));
            }
            if let TeamScript::Constant { value } = t.script {
                if !(0.0..=1.0).contains(&value) {
                    return Err(PadError::config("constant scores must lie in [0, 1]"));
                }
            }
            if let TeamScript::NoisyOracle { noise } = t.script {
                if !(noise.is_finite() && noise >= 0.0) {
                    return Err(PadError::config("noise must be non-negative"));
                }
            }
        }
        if self.final_budget_per_day == 0 {
            return Err(PadError::config("final budget must be at least 1"));
        }
        if self.development_days == 0 && self.final_days == 0 {
            return Err(PadError::config("challenge needs at least one day"));
        }
        Ok(())
    }
}

/// One line of the audit trail: every submission decision, accepted or not.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AuditEvent {
    pub phase: Phase,
    pub day: u32,
    pub team: String,
    pub sequence_number: u32,
    pub accepted: bool,
    /// `"ok"` for accepted submissions, else the rejection reason.
    pub reason: String,
    /// ACER of the submission when it was scored.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub acer: Option<f64>,
}

/// Everything a finished simulation produces.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChallengeOutcome {
    /// Ranking from each team's last accepted development submission.
    pub development_leaderboard: Vec<LeaderboardRow>,
    /// Ranking from each team's last accepted final submission.
    pub final_leaderboard: Vec<LeaderboardRow>,
    /// The final-phase reports behind the final leaderboard.
    pub final_reports: BTreeMap<String, MetricReport>,
    pub audit: Vec<AuditEvent>,
}

/// Rank a report set, treating an empty set as an empty leaderboard.
pub fn leaderboard_from_reports(
    reports: &BTreeMap<String, MetricReport>,
) -> Result<Vec<LeaderboardRow>> {
    if reports.is_empty() {
        return Ok(Vec::new());
    }
    metrics::rank(reports)
}

/// A generated attempt, before the ledger rules on it.
struct Attempt {
    team_index: usize,
    sequence_number: u32,
    text: String,
}

/// The outcome of validating and scoring one attempt (budget not yet
/// applied).
enum ScoredAttempt {
    Valid(MetricReport),
    Invalid(String),
}

/// Simulate both phases end to end.
///
/// Per logical day, every team's attempts are generated deterministically
/// (one RNG stream per phase/day/team/attempt), validated and scored
/// concurrently (both are pure), and then judged in arrival order by a
/// single serialized pass that owns the budget ledger and the
/// last-accepted-submission table. A rejected attempt never displaces an
/// earlier accepted one.
pub fn run_challenge(
    config: &ChallengeConfig,
    records: &[SampleRecord],
    manifest: &ProtocolManifest,
) -> Result<ChallengeOutcome> {
    config.validate()?;
    let vault = LabelVault::new(records, manifest.clone())?;
    let mut audit = Vec::new();
    let mut sequence: BTreeMap<usize, u32> = BTreeMap::new();
    let mut dev_reports: BTreeMap<String, MetricReport> = BTreeMap::new();
    let mut final_reports: BTreeMap<String, MetricReport> = BTreeMap::new();

    for (phase, days, attempts_per_day, budget) in [
        (
            Phase::Development,
            config.development_days,
            config.development_attempts_per_day,
            config.development_budget_per_day,
        ),
        (
            Phase::Final,
            config.final_days,
            config.final_attempts_per_day,
            Some(config.final_budget_per_day),
        ),
    ] {
        let required = required_ids(manifest, phase);
        let id_list: Vec<SampleId> = required.iter().cloned().collect();
        let last_accepted = match phase {
            Phase::Development => &mut dev_reports,
            Phase::Final => &mut final_reports,
        };
        for day in 0..days {
            // Generate the day's attempts in arrival order.
            let mut attempts = Vec::new();
            for (team_index, team) in config.teams.iter().enumerate() {
                for attempt in 0..attempts_per_day {
                    let seq = sequence.entry(team_index).or_insert(0);
                    *seq += 1;
                    let stream = ((phase as u64) << 40)
                        | ((day as u64) << 24)
                        | ((team_index as u64) << 8)
                        | attempt as u64;
                    let mut rng = stream_rng(config.seed, stream);
                    let rows = team.script.scores(&id_list, vault.all(), &mut rng)?;
                    attempts.push(Attempt {
                        team_index,
                        sequence_number: *seq,
                        text: format_submission(&rows),
                    });
                }
            }
            // Validate + score concurrently; both are pure functions.
            let scored = par::try_map_ordered(&attempts, |a| -> Result<ScoredAttempt> {
                match validate_submission(&a.text, &required) {
                    Ok(scores) => {
                        let report = score_submission(&scores, phase, &vault)?;
                        Ok(ScoredAttempt::Valid(report))
                    }
                    Err(e) => Ok(ScoredAttempt::Invalid(e.to_string())),
                }
            })?;
            // Single serialized writer: budget ledger + leaderboard basis.
            let mut accepted_today: BTreeMap<usize, u32> = BTreeMap::new();
            for (attempt, outcome) in attempts.iter().zip(scored) {
                let team = &config.teams[attempt.team_index];
                let used = accepted_today.entry(attempt.team_index).or_insert(0);
                let over_budget = budget.is_some_and(|b| *used >= b);
                let event = if over_budget {
                    let err = PadError::BudgetExceeded {
                        team: team.name.clone(),
                        day,
                        limit: budget.expect("checked"),
                    };
                    AuditEvent {
                        phase,
                        day,
                        team: team.name.clone(),
                        sequence_number: attempt.sequence_number,
                        accepted: false,
                        reason: err.to_string(),
                        acer: None,
                    }
                } else {
                    match outcome {
                        ScoredAttempt::Valid(report) => {
                            *used += 1;
                            last_accepted.insert(team.name.clone(), report.clone());
                            AuditEvent {
                                phase,
                                day,
                                team: team.name.clone(),
                                sequence_number: attempt.sequence_number,
                                accepted: true,
                                reason: "ok".to_string(),
                                acer: Some(report.acer),
                            }
                        }
                        ScoredAttempt::Invalid(reason) => AuditEvent {
                            phase,
                            day,
                            team: team.name.clone(),
                            sequence_number: attempt.sequence_number,
                            accepted: false,
                            reason,
                            acer: None,
                        },
                    }
                };
                audit.push(event);
            }
        }
    }

    Ok(ChallengeOutcome {
        development_leaderboard: leaderboard_from_reports(&dev_reports)?,
        final_leaderboard: leaderboard_from_reports(&final_reports)?,
        final_reports,
        audit,
    })
}

// ---------------------------------------------------------------------------
// Reports and artifacts
// ---------------------------------------------------------------------------

/// The three renderings of a leaderboard.
#[derive(Debug, Clone, PartialEq)]
pub struct RenderedReport {
    /// Fixed-width text table with rates in percent, two decimals.
    pub table: String,
    /// Pretty JSON array of the row records, in rank order.
    pub json: String,
    /// CSV with full-precision decimal rates (lossless round trip).
    pub csv: String,
}

/// Render a leaderboard as a text table, JSON, and CSV.
///
/// The table shows percentages rounded to two decimals; the JSON and CSV
/// artifacts keep full precision, and an empty leaderboard renders as valid,
/// empty artifacts.
pub fn render_leaderboard(rows: &[LeaderboardRow]) -> Result<RenderedReport> {
    let mut table = String::new();
    let name_width = rows
        .iter()
        .map(|r| r.team.len())
        .chain(std::iter::once("Team".len()))
        .max()
        .unwrap_or(4);
    table.push_str(&format!(
        "{:>4}  {:<name_width$}  {:>8}  {:>9}  {:>9}  {:>8}\n",
        "Rank", "Team", "ACER(%)", "APCER(%)", "BPCER(%)", "AUC(%)"
    ));
    for r in rows {
        table.push_str(&format!(
            "{:>4}  {:<name_width$}  {:>8.2}  {:>9.2}  {:>9.2}  {:>8.2}\n",
            r.rank,
            r.team,
            100.0 * r.acer,
            100.0 * r.apcer,
            100.0 * r.bpcer,
            100.0 * r.auc
        ));
    }
    let json = serde_json::to_string_pretty(rows)?;
    let mut csv_writer = csv::Writer::from_writer(Vec::new());
    csv_writer.write_record(["rank", "team", "acer", "apcer", "bpcer", "auc"])?;
    for r in rows {
        csv_writer.write_record([
            r.rank.to_string(),
            r.team.clone(),
            r.acer.to_string(),
            r.apcer.to_string(),
            r.bpcer.to_string(),
            r.auc.to_string(),
        ])?;
    }
    csv_writer.flush()?;
    let csv = String::from_utf8(csv_writer.into_inner().map_err(|e| {
        PadError::param(format!("csv buffer error: {e}"))
    })?)
    .map_err(|e| PadError::param(format!("csv not utf-8: {e}")))?;
    Ok(RenderedReport { table, json, csv })
}

/// Read a leaderboard back from the CSV artifact.
pub fn read_leaderboard_csv(text: &str) -> Result<Vec<LeaderboardRow>> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .from_reader(text.as_bytes());
    {
        let headers = rdr.headers()?;
        if headers != vec!["rank", "team", "acer", "apcer", "bpcer", "auc"] {
            return Err(PadError::param(format!("bad leaderboard header {headers:?}")));
        }
    }
    let mut rows = Vec::new();
    for record in rdr.records() {
        let record = record?;
        if record.len() != 6 {
            return Err(PadError::param("leaderboard rows need 6 fields"));
        }
        let parse = |i: usize| -> Result<f64> {
            record[i]
                .parse::<f64>()
                .map_err(|e| PadError::param(format!("bad number {:?}: {e}", &record[i])))
        };
        rows.push(LeaderboardRow {
            rank: record[0]
                .parse::<usize>()
                .map_err(|e| PadError::param(format!("bad rank {:?}: {e}", &record[0])))?,
            team: record[1].to_string(),
            acer: parse(2)?,
            apcer: parse(3)?,
            bpcer: parse(4)?,
            auc: parse(5)?,
        });
    }
    Ok(rows)
}

/// Append audit events as JSON lines.
pub fn write_audit_log<W: Write>(mut writer: W, events: &[AuditEvent]) -> Result<()> {
    for event in events {
        serde_json::to_writer(&mut writer, event)?;
        writer.write_all(b"\n")?;
    }
    Ok(())
}

/// Read an audit log written by [`write_audit_log`].
pub fn read_audit_log<R: BufRead>(reader: R) -> Result<Vec<AuditEvent>> {
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
