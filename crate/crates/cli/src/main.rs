//! Command-line front end for the toolkit: synthetic catalogs, quality-banded
//! protocol construction, desk-scale training and scoring, submission
//! evaluation, and the two-phase challenge simulator.
//!
//! Exit codes: `0` on success, `2` when input data fails validation
//! (catalogs, manifests, score files, submissions), `3` for configuration
//! and I/O problems (unreadable files, bad config values, missing flags).

use std::collections::BTreeMap;
use std::fs::{self, File};
use std::io::{BufReader, BufWriter};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::anyhow;
use clap::{Args, Parser, Subcommand, ValueEnum};

use padkit_core::challenge::{render_leaderboard, run_challenge, write_audit_log, ChallengeConfig};
use padkit_core::dataset::{
    build_protocol3, read_catalog_file, synth_dataset, write_catalog_file, Label,
    ProtocolManifest, SampleRecord, Split, SynthConfig,
};
use padkit_core::error::PadError;
use padkit_core::metrics::{
    evaluate_submission, read_score_csv, write_score_csv, LeaderboardRow, MetricReport,
    ScoredSample,
};
use padkit_core::trainer::{
    predict, train, two_stage_train, write_history, TinyModel, TrainConfig, TrainData,
};

const EXIT_VALIDATION: u8 = 2;
const EXIT_CONFIG: u8 = 3;

#[derive(Parser)]
#[command(name = "padkit", version, about = "Presentation-attack detection benchmark toolkit")]
struct Cli {
    /// Configuration file (JSON); its schema depends on the verb.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Override the seed found in the configuration file.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output file or directory; its meaning depends on the verb.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic labeled, quality-scored catalog (JSONL).
    Synth,
    /// Protocol operations.
    Protocol {
        #[command(subcommand)]
        command: ProtocolCommand,
    },
    /// Train a model on a catalog's train/dev splits.
    Train(TrainArgs),
    /// Score catalog samples with a trained model.
    Predict(PredictArgs),
    /// Evaluate dev+test score files against a catalog's labels.
    Score(ScoreArgs),
    /// Challenge simulation.
    Challenge {
        #[command(subcommand)]
        command: ChallengeCommand,
    },
    /// Render leaderboard artifacts (text table, JSON, CSV).
    Report(ReportArgs),
}

#[derive(Subcommand)]
enum ProtocolCommand {
    /// Partition a catalog into quality-banded train/dev/test splits.
    Build(ProtocolBuildArgs),
}

#[derive(Subcommand)]
enum ChallengeCommand {
    /// Run the two-phase challenge with the configured scripted teams.
    Run(ChallengeRunArgs),
}

#[derive(Args)]
struct ProtocolBuildArgs {
    /// Catalog file (JSONL) to partition.
    #[arg(long)]
    catalog: PathBuf,
}

#[derive(Args)]
struct TrainArgs {
    /// Catalog file (JSONL) with feature vectors.
    #[arg(long)]
    catalog: PathBuf,
    /// Protocol manifest (JSON); derived from the catalog when omitted.
    #[arg(long)]
    manifest: Option<PathBuf>,
}

#[derive(Args)]
struct PredictArgs {
    /// Trained model checkpoint (JSON).
    #[arg(long)]
    model: PathBuf,
    /// Catalog file (JSONL) with feature vectors.
    #[arg(long)]
    catalog: PathBuf,
    /// Protocol manifest (JSON); derived from the catalog when omitted.
    #[arg(long)]
    manifest: Option<PathBuf>,
    /// Which split to score.
    #[arg(long, value_enum, default_value_t = SplitArg::Test)]
    split: SplitArg,
    /// Average each score with its horizontally flipped feature's score.
    #[arg(long)]
    tta: bool,
}

#[derive(Args)]
struct ScoreArgs {
    /// Development-split score file (CSV).
    #[arg(long)]
    dev: PathBuf,
    /// Test-split score file (CSV).
    #[arg(long)]
    test: PathBuf,
    /// Catalog file (JSONL) providing the ground-truth labels.
    #[arg(long)]
    catalog: PathBuf,
    /// Protocol manifest (JSON); derived from the catalog when omitted.
    #[arg(long)]
    manifest: Option<PathBuf>,
}

#[derive(Args)]
struct ChallengeRunArgs {
    /// Catalog file (JSONL) behind the challenge.
    #[arg(long)]
    catalog: PathBuf,
    /// Protocol manifest (JSON); derived from the catalog when omitted.
    #[arg(long)]
    manifest: Option<PathBuf>,
}

#[derive(Args)]
struct ReportArgs {
    /// Leaderboard JSON (ordered array of row records).
    #[arg(long)]
    leaderboard: PathBuf,
    /// Base name for the emitted artifacts.
    #[arg(long, default_value = "leaderboard")]
    name: String,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum SplitArg {
    Train,
    Dev,
    Test,
    All,
}

/// A failure annotated with the exit code it should produce.
struct Failure {
    code: u8,
    error: anyhow::Error,
}

type CliResult<T> = Result<T, Failure>;

/// Classify a library result by pipeline stage.
trait Stage<T> {
    /// Any failure here is a configuration or I/O problem (exit 3).
    fn in_config(self, what: &str) -> CliResult<T>;
    /// Content failures are data-validation problems (exit 2); the
    /// underlying file being unreadable stays an I/O problem (exit 3).
    fn in_data(self, what: &str) -> CliResult<T>;
}

impl<T, E: Into<anyhow::Error>> Stage<T> for Result<T, E> {
    fn in_config(self, what: &str) -> CliResult<T> {
        self.map_err(|e| Failure {
            code: EXIT_CONFIG,
            error: e.into().context(what.to_string()),
        })
    }

    fn in_data(self, what: &str) -> CliResult<T> {
        self.map_err(|e| {
            let error = e.into();
            let code = match error.downcast_ref::<PadError>() {
                Some(PadError::Io(_)) => EXIT_CONFIG,
                _ => match error.downcast_ref::<std::io::Error>() {
                    Some(_) => EXIT_CONFIG,
                    None => EXIT_VALIDATION,
                },
            };
            Failure { code, error: error.context(what.to_string()) }
        })
    }
}

fn fail_config(message: String) -> Failure {
    Failure { code: EXIT_CONFIG, error: anyhow!(message) }
}

fn require<'a>(opt: &'a Option<PathBuf>, flag: &str, verb: &str) -> CliResult<&'a Path> {
    opt.as_deref()
        .ok_or_else(|| fail_config(format!("`padkit {verb}` requires {flag}")))
}

/// Read and parse a JSON configuration file (exit 3 on any failure).
fn read_config<T: serde::de::DeserializeOwned>(path: &Path) -> CliResult<T> {
    let text = fs::read_to_string(path)
        .in_config(&format!("reading config {}", path.display()))?;
    serde_json::from_str(&text).in_config(&format!("parsing config {}", path.display()))
}

/// Read and parse a JSON data artifact (manifest, model, leaderboard):
/// unreadable file is exit 3, malformed content exit 2.
fn read_json_data<T: serde::de::DeserializeOwned>(path: &Path) -> CliResult<T> {
    let text =
        fs::read_to_string(path).in_config(&format!("reading {}", path.display()))?;
    serde_json::from_str(&text).in_data(&format!("parsing {}", path.display()))
}

fn write_json_pretty<T: serde::Serialize>(path: &Path, value: &T) -> CliResult<()> {
    let mut text = serde_json::to_string_pretty(value)
        .in_config(&format!("encoding {}", path.display()))?;
    text.push('\n');
    fs::write(path, text).in_config(&format!("writing {}", path.display()))
}

fn load_catalog(path: &Path) -> CliResult<Vec<SampleRecord>> {
    read_catalog_file(path).in_data(&format!("loading catalog {}", path.display()))
}

/// Load the manifest if a path was given, otherwise derive it from the
/// catalog's quality scores.
fn load_or_build_manifest(
    manifest: &Option<PathBuf>,
    records: &[SampleRecord],
) -> CliResult<ProtocolManifest> {
    match manifest {
        Some(path) => read_json_data(path),
        None => build_protocol3(records).in_data("deriving the protocol from the catalog"),
    }
}

fn percent(rate: f64) -> String {
    format!("{:.2}%", rate * 100.0)
}

fn report_line(report: &MetricReport) -> String {
    format!(
        "ACER {} (APCER {}, BPCER {}), AUC {}, EER {} at threshold {:.6}",
        percent(report.acer),
        percent(report.apcer),
        percent(report.bpcer),
        percent(report.auc),
        percent(report.eer),
        report.threshold,
    )
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {:#}", f.error);
            ExitCode::from(f.code)
        }
    }
}

fn run(cli: Cli) -> CliResult<()> {
    match &cli.command {
        Command::Synth => cmd_synth(&cli),
        Command::Protocol { command: ProtocolCommand::Build(args) } => {
            cmd_protocol_build(&cli, args)
        }
        Command::Train(args) => cmd_train(&cli, args),
        Command::Predict(args) => cmd_predict(&cli, args),
        Command::Score(args) => cmd_score(&cli, args),
        Command::Challenge { command: ChallengeCommand::Run(args) } => {
            cmd_challenge_run(&cli, args)
        }
        Command::Report(args) => cmd_report(&cli, args),
    }
}

fn cmd_synth(cli: &Cli) -> CliResult<()> {
    let config_path = require(&cli.config, "--config", "synth")?;
    let mut config: SynthConfig = read_config(config_path)?;
    if let Some(seed) = cli.seed {
        config.seed = seed;
    }
    let records = synth_dataset(&config).in_config("generating the synthetic catalog")?;
    let out = require(&cli.out, "--out", "synth")?;
    write_catalog_file(out, &records)
        .in_config(&format!("writing catalog {}", out.display()))?;
    let bonafide = records.iter().filter(|r| r.label == Label::Bonafide).count();
    println!(
        "wrote {} records ({bonafide} bonafide, {} attack) to {}",
        records.len(),
        records.len() - bonafide,
        out.display()
    );
    Ok(())
}

fn cmd_protocol_build(cli: &Cli, args: &ProtocolBuildArgs) -> CliResult<()> {
    let records = load_catalog(&args.catalog)?;
    let manifest =
        build_protocol3(&records).in_data("partitioning the catalog into quality bands")?;
    let out = require(&cli.out, "--out", "protocol build")?;
    write_json_pretty(out, &manifest)?;
    println!(
        "protocol written to {}: train {}, dev {}, test {}",
        out.display(),
        manifest.ids(Split::Train).len(),
        manifest.ids(Split::Dev).len(),
        manifest.ids(Split::Test).len(),
    );
    Ok(())
}

fn cmd_train(cli: &Cli, args: &TrainArgs) -> CliResult<()> {
    let config_path = require(&cli.config, "--config", "train")?;
    let mut config: TrainConfig = read_config(config_path)?;
    if let Some(seed) = cli.seed {
        config.seed = seed;
    }
    config.validate().in_config("validating the training configuration")?;
    let records = load_catalog(&args.catalog)?;
    let manifest = load_or_build_manifest(&args.manifest, &records)?;
    let data = TrainData::from_manifest(&records, &manifest)
        .in_data("assembling train/dev splits")?;
    let out = require(&cli.out, "--out", "train")?;
    fs::create_dir_all(out).in_config(&format!("creating {}", out.display()))?;

    if config.two_stage.is_some() {
        let outcome = two_stage_train(&config, &data).in_data("two-stage training")?;
        outcome
            .model
            .save(&out.join("model.json"))
            .in_config("writing the model checkpoint")?;
        for (name, records) in [("stage1.jsonl", &outcome.stage1), ("stage2.jsonl", &outcome.stage2)]
        {
            let file =
                File::create(out.join(name)).in_config(&format!("creating {name}"))?;
            write_history(BufWriter::new(file), records)
                .in_config(&format!("writing {name}"))?;
        }
        write_json_pretty(
            &out.join("two_stage.json"),
            &serde_json::json!({
                "stage1_batch": outcome.stage1_batch,
                "stage2_batch": outcome.stage2_batch,
                "stage1_epochs": outcome.stage1.len(),
                "stage2_epochs": outcome.stage2.len(),
                "threshold_met": outcome.threshold_met,
            }),
        )?;
        let last = outcome.stage2.last().or_else(|| outcome.stage1.last());
        if let Some(record) = last {
            println!(
                "two-stage training finished (threshold met: {}); dev ACER {}, AUC {}",
                outcome.threshold_met,
                percent(record.dev.acer),
                percent(record.dev.auc),
            );
        }
    } else {
        let outcome = train(&config, &data).in_data("training")?;
        outcome
            .model
            .save(&out.join("model.json"))
            .in_config("writing the model checkpoint")?;
        let file = File::create(out.join("history.jsonl"))
            .in_config("creating history.jsonl")?;
        write_history(BufWriter::new(file), &outcome.history)
            .in_config("writing history.jsonl")?;
        let last = outcome.history.last().expect("training always records epochs");
        println!(
            "trained {} epochs; dev ACER {}, AUC {}; artifacts in {}",
            outcome.history.len(),
            percent(last.dev.acer),
            percent(last.dev.auc),
            out.display(),
        );
    }
    Ok(())
}

fn cmd_predict(cli: &Cli, args: &PredictArgs) -> CliResult<()> {
    let model = TinyModel::load(&args.model)
        .in_data(&format!("loading model {}", args.model.display()))?;
    let records = load_catalog(&args.catalog)?;
    let manifest = load_or_build_manifest(&args.manifest, &records)?;
    let chosen: Vec<&SampleRecord> = records
        .iter()
        .filter(|r| match args.split {
            SplitArg::All => true,
            SplitArg::Train => manifest.split_of(&r.sample_id) == Some(Split::Train),
            SplitArg::Dev => manifest.split_of(&r.sample_id) == Some(Split::Dev),
            SplitArg::Test => manifest.split_of(&r.sample_id) == Some(Split::Test),
        })
        .collect();
    if chosen.is_empty() {
        return Err(Failure {
            code: EXIT_VALIDATION,
            error: anyhow!("no catalog samples fall in the requested split"),
        });
    }
    let mut features = Vec::with_capacity(chosen.len());
    for r in &chosen {
        match &r.feature {
            Some(f) => features.push(f.clone()),
            None => {
                return Err(Failure {
                    code: EXIT_VALIDATION,
                    error: anyhow!("sample {} has no feature vector", r.sample_id),
                })
            }
        }
    }
    let scores = predict(&model, &features, args.tta).in_data("scoring the split")?;
    let mut rows = Vec::with_capacity(scores.len());
    for (r, score) in chosen.iter().zip(scores) {
        rows.push(
            ScoredSample::new(r.sample_id.clone(), score)
                .in_data("assembling the score file")?,
        );
    }
    let out = require(&cli.out, "--out", "predict")?;
    let file =
        File::create(out).in_config(&format!("creating {}", out.display()))?;
    write_score_csv(BufWriter::new(file), &rows)
        .in_config(&format!("writing {}", out.display()))?;
    println!("scored {} samples to {}", rows.len(), out.display());
    Ok(())
}

fn read_scores(path: &Path) -> CliResult<BTreeMap<padkit_core::dataset::SampleId, f64>> {
    let file = File::open(path).in_config(&format!("opening {}", path.display()))?;
    let rows = read_score_csv(BufReader::new(file))
        .in_data(&format!("parsing score file {}", path.display()))?;
    let mut map = BTreeMap::new();
    for row in rows {
        if map.insert(row.sample_id.clone(), row.score).is_some() {
            return Err(Failure {
                code: EXIT_VALIDATION,
                error: anyhow!(
                    "duplicate sample id {} in {}",
                    row.sample_id,
                    path.display()
                ),
            });
        }
    }
    Ok(map)
}

fn cmd_score(cli: &Cli, args: &ScoreArgs) -> CliResult<()> {
    let dev = read_scores(&args.dev)?;
    let test = read_scores(&args.test)?;
    let records = load_catalog(&args.catalog)?;
    let manifest = load_or_build_manifest(&args.manifest, &records)?;
    let labels: BTreeMap<_, _> = records
        .iter()
        .map(|r| (r.sample_id.clone(), r.label))
        .collect();
    let report = evaluate_submission(&dev, &test, &labels, &manifest)
        .in_data("evaluating the submission")?;
    println!("{}", report_line(&report));
    if let Some(out) = &cli.out {
        write_json_pretty(out, &report)?;
        println!("report written to {}", out.display());
    }
    Ok(())
}

fn cmd_challenge_run(cli: &Cli, args: &ChallengeRunArgs) -> CliResult<()> {
    let config_path = require(&cli.config, "--config", "challenge run")?;
    let mut config: ChallengeConfig = read_config(config_path)?;
    if let Some(seed) = cli.seed {
        config.seed = seed;
    }
    config.validate().in_config("validating the challenge configuration")?;
    let records = load_catalog(&args.catalog)?;
    let manifest = load_or_build_manifest(&args.manifest, &records)?;
    let outcome =
        run_challenge(&config, &records, &manifest).in_data("running the challenge")?;
    let out = require(&cli.out, "--out", "challenge run")?;
    fs::create_dir_all(out).in_config(&format!("creating {}", out.display()))?;

    for (stem, rows) in [
        ("development_leaderboard", &outcome.development_leaderboard),
        ("final_leaderboard", &outcome.final_leaderboard),
    ] {
        let rendered = render_leaderboard(rows).in_data("rendering the leaderboard")?;
        fs::write(out.join(format!("{stem}.json")), &rendered.json)
            .in_config(&format!("writing {stem}.json"))?;
        fs::write(out.join(format!("{stem}.csv")), &rendered.csv)
            .in_config(&format!("writing {stem}.csv"))?;
    }
    write_json_pretty(&out.join("final_reports.json"), &outcome.final_reports)?;
    let audit = File::create(out.join("audit.jsonl")).in_config("creating audit.jsonl")?;
    write_audit_log(BufWriter::new(audit), &outcome.audit)
        .in_config("writing audit.jsonl")?;

    if outcome.final_leaderboard.is_empty() {
        println!("final leaderboard is empty; artifacts in {}", out.display());
    } else {
        let rendered = render_leaderboard(&outcome.final_leaderboard)
            .in_data("rendering the final leaderboard")?;
        print!("{}", rendered.table);
        println!("artifacts in {}", out.display());
    }
    Ok(())
}

fn cmd_report(cli: &Cli, args: &ReportArgs) -> CliResult<()> {
    let rows: Vec<LeaderboardRow> = read_json_data(&args.leaderboard)?;
    let rendered = render_leaderboard(&rows).in_data("rendering the leaderboard")?;
    let out = require(&cli.out, "--out", "report")?;
    fs::create_dir_all(out).in_config(&format!("creating {}", out.display()))?;
    fs::write(out.join(format!("{}.txt", args.name)), &rendered.table)
        .in_config("writing the text table")?;
    fs::write(out.join(format!("{}.json", args.name)), &rendered.json)
        .in_config("writing the JSON artifact")?;
    fs::write(out.join(format!("{}.csv", args.name)), &rendered.csv)
        .in_config("writing the CSV artifact")?;
    print!("{}", rendered.table);
    println!("artifacts in {}", out.display());
    Ok(())
}
