use std::fmt;
use std::io::{BufRead, Write};
use std::path::Path;
use std::sync::Arc;

use promptgate::detect::DetectError;
use promptgate::metrics::{nrr, ConfusionCounts, MetricReport};
use promptgate::moderate::{
    Assessment, ModerateError, ModerationDecision, RiskCategory, SystemPromptSet, Verification,
};
use promptgate::pipeline::{Mode, Pipeline, PipelineError, PipelineOptions, ReportSummary};
use promptgate::providers::{ProviderConfig, Providers, SafetyVerdict};
use promptgate::rules::{load_dataset, ExpectedAction, RuleSet};
use promptgate_service::{serve, shutdown_signal, ServiceConfig, ServiceError};
use serde::Serialize;
use serde_json::json;

use crate::{Cli, Command, Exit, Format};

#[derive(Debug)]
pub enum CliError {
    Usage(String),
    Provider(String),
}

impl CliError {
    pub fn exit(&self) -> Exit {
        match self {
            CliError::Usage(_) => Exit::Usage,
            CliError::Provider(_) => Exit::Provider,
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Usage(m) | CliError::Provider(m) => f.write_str(m),
        }
    }
}

fn usage(e: impl fmt::Display) -> CliError {
    CliError::Usage(e.to_string())
}

impl From<PipelineError> for CliError {
    fn from(e: PipelineError) -> Self {
        match e {
            PipelineError::Setup(DetectError::Provider(p)) => {
                CliError::Provider(format!("detector setup failed: {p}"))
            }
            other => usage(other),
        }
    }
}

impl From<ServiceError> for CliError {
    fn from(e: ServiceError) -> Self {
        match e {
            ServiceError::Detect(DetectError::Provider(_))
            | ServiceError::Pipeline(PipelineError::Setup(_)) => CliError::Provider(e.to_string()),
            other => usage(other),
        }
    }
}

pub async fn run(cli: &Cli) -> Result<Exit, CliError> {
    match &cli.command {
        Command::Detect { prompts } => detect(cli, &read_prompts(prompts)?).await,
        Command::Moderate { prompts } => moderate(cli, &read_prompts(prompts)?).await,
        Command::Eval { dataset } => eval(cli, dataset).await,
        Command::Serve { config } => serve_cmd(cli, config).await,
    }
}

fn read_prompts(args: &[String]) -> Result<Vec<String>, CliError> {
    let lines: Vec<String> = if args.is_empty() {
        std::io::stdin()
            .lock()
            .lines()
            .collect::<Result<_, _>>()
            .map_err(|e| usage(format!("failed to read stdin: {e}")))?
    } else {
        args.to_vec()
    };
    Ok(lines.into_iter().filter(|l| !l.trim().is_empty()).collect())
}

fn load_rules(cli: &Cli) -> Result<Arc<RuleSet>, CliError> {
    let rules = match &cli.rules {
        Some(path) => {
            RuleSet::from_path(path).map_err(|e| usage(format!("{}: {e}", path.display())))?
        }
        None => RuleSet::default_rules(),
    };
    Ok(Arc::new(rules))
}

fn load_providers(cli: &Cli, rules: &RuleSet) -> Result<Providers, CliError> {
    let config = match &cli.providers {
        Some(path) => ProviderConfig::from_path(path)
            .map_err(|e| usage(format!("{}: {e}", path.display())))?,
        None => ProviderConfig::default(),
    };
    config.build(rules).map_err(usage)
}

fn load_prompt_set(cli: &Cli) -> Result<Arc<SystemPromptSet>, CliError> {
    let set = match &cli.prompts_dir {
        Some(dir) => {
            SystemPromptSet::from_dir(dir).map_err(|e| usage(format!("{}: {e}", dir.display())))?
        }
        None => SystemPromptSet::default(),
    };
    Ok(Arc::new(set))
}

async fn build_pipeline(cli: &Cli, mode: Mode) -> Result<Pipeline, CliError> {
    let rules = load_rules(cli)?;
    let providers = load_providers(cli, &rules)?;
    let options = PipelineOptions {
        mode,
        policy: cli.policy.into(),
        parallelism: cli.parallel as usize,
        ..PipelineOptions::default()
    };
    Ok(Pipeline::new(rules, &providers, load_prompt_set(cli)?, options).await?)
}

fn moderate_failure(e: ModerateError) -> CliError {
    match e {
        ModerateError::Detect(DetectError::Provider(p)) | ModerateError::Provider(p) => {
            CliError::Provider(p.to_string())
        }
        other => usage(other),
    }
}

#[derive(Serialize)]
struct DetectLine<'a> {
    prompt: &'a str,
    safe: bool,
    category: RiskCategory,
    evidence: String,
    word: bool,
    semantic: bool,
    value: bool,
    intention: bool,
}

fn detect_line(prompt: &str, a: &Assessment, format: Format) -> String {
    match format {
        Format::Text if a.category == RiskCategory::None => "NONE safe".into(),
        Format::Text => format!("{} {}", a.category, a.evidence()),
        Format::Structured => serde_json::to_string(&DetectLine {
            prompt,
            safe: a.safe,
            category: a.category,
            evidence: a.evidence(),
            word: a.outcome.word_flag(),
            semantic: a.outcome.semantic_flag(),
            value: a.outcome.value_flag(),
            intention: a.intent,
        })
        .expect("detect line serializes"),
    }
}

async fn detect(cli: &Cli, prompts: &[String]) -> Result<Exit, CliError> {
    if prompts.is_empty() {
        return Ok(Exit::Ok);
    }
    let pipeline = build_pipeline(cli, Mode::TextOnly).await?;
    let mut out = std::io::stdout().lock();
    let mut exit = Exit::Ok;
    for prompt in prompts {
        let a = pipeline
            .moderator()
            .assess(prompt)
            .await
            .map_err(moderate_failure)?;
        if a.category.is_flagged() {
            exit = Exit::Flagged;
        }
        writeln!(out, "{}", detect_line(prompt, &a, cli.format)).map_err(usage)?;
    }
    Ok(exit)
}

fn action(d: &ModerationDecision) -> &'static str {
    match d.verification {
        Verification::NotNeeded => "pass",
        Verification::Passed => "rewritten",
        Verification::FailedAfterRetries | Verification::ProviderError => "blocked",
    }
}

fn moderate_line(d: &ModerationDecision, format: Format) -> String {
    match format {
        Format::Text => format!(
            "{} {} {}",
            action(d),
            d.category,
            d.effective_prompt().unwrap_or("-")
        ),
        Format::Structured => json!({
            "prompt": d.original_prompt,
            "action": action(d),
            "category": d.category,
            "effective_prompt": d.effective_prompt(),
            "attempts": d.attempts,
            "verification": d.verification,
            "evidence": d.evidence(),
            "error": d.error,
        })
        .to_string(),
    }
}

async fn moderate(cli: &Cli, prompts: &[String]) -> Result<Exit, CliError> {
    if prompts.is_empty() {
        return Ok(Exit::Ok);
    }
    let pipeline = build_pipeline(cli, Mode::TextOnly).await?;
    let mut out = std::io::stdout().lock();
    let mut exit = Exit::Ok;
    for prompt in prompts {
        let d = pipeline.moderate(prompt).await.map_err(moderate_failure)?;
        if d.verification == Verification::ProviderError {
            exit = Exit::Provider;
        }
        writeln!(out, "{}", moderate_line(&d, cli.format)).map_err(usage)?;
    }
    Ok(exit)
}

#[derive(Serialize)]
struct RecordRow<'a> {
    id: &'a str,
    expected_action: ExpectedAction,
    predicted_block: bool,
    category: Option<RiskCategory>,
    blocked: bool,
    final_verdict: Option<SafetyVerdict>,
    #[serde(skip_serializing_if = "Option::is_none")]
    error: Option<String>,
}

#[derive(Serialize)]
struct EvalReport<'a> {
    metrics: &'a MetricReport,
    summary: &'a ReportSummary,
    records: Vec<RecordRow<'a>>,
}

async fn eval(cli: &Cli, dataset: &Path) -> Result<Exit, CliError> {
    let records =
        load_dataset(dataset).map_err(|e| usage(format!("{}: {e}", dataset.display())))?;
    if records.is_empty() {
        return Err(usage(format!(
            "{}: dataset has no records",
            dataset.display()
        )));
    }
    let mode = cli.mode.map_or(Mode::Full, Mode::from);
    let pipeline = build_pipeline(cli, mode).await?;
    let prompts: Vec<&str> = records.iter().map(|r| r.prompt.as_str()).collect();
    let report = pipeline.run(&prompts).await?;

    let predicted: Vec<bool> = report.entries.iter().map(|e| e.predicted_block()).collect();
    let counts = ConfusionCounts::from_predictions(&records, &predicted).map_err(usage)?;
    let mut metrics = MetricReport::from_counts(counts);
    if mode == Mode::Full {
        let unsafe_before = records
            .iter()
            .filter(|r| r.expected_action == ExpectedAction::Block)
            .count() as u64;
        let removed = records
            .iter()
            .zip(&report.entries)
            .filter(|(r, e)| {
                r.expected_action == ExpectedAction::Block
                    && (e.blocked || e.final_verdict == Some(SafetyVerdict::Safe))
            })
            .count() as u64;
        metrics = metrics
            .with_verdicts(&report.final_verdicts())
            .with_nrr(nrr(unsafe_before, removed).map_err(usage)?);
    }
    let summary = report.summary();

    let rows = records
        .iter()
        .zip(&report.entries)
        .map(|(r, e)| RecordRow {
            id: &r.id,
            expected_action: r.expected_action,
            predicted_block: e.predicted_block(),
            category: e.category,
            blocked: e.blocked,
            final_verdict: e.final_verdict,
            error: e
                .error
                .as_ref()
                .map(|err| format!("{}: {}", err.phase, err.message)),
        })
        .collect();
    let full = EvalReport {
        metrics: &metrics,
        summary: &summary,
        records: rows,
    };
    if let Some(path) = &cli.out {
        let text = serde_json::to_string_pretty(&full).expect("report serializes");
        std::fs::write(path, text + "\n").map_err(|e| usage(format!("{}: {e}", path.display())))?;
    }
    match cli.format {
        Format::Text => print!("{}{}", metrics.table(), report.summary_table()),
        Format::Structured => println!("{}", json!({ "metrics": metrics, "summary": summary })),
    }
    if summary.errors > 0 {
        eprintln!(
            "promptgate: {} of {} prompts failed",
            summary.errors, summary.total
        );
        return Ok(Exit::Provider);
    }
    Ok(Exit::Ok)
}

async fn serve_cmd(cli: &Cli, path: &Path) -> Result<Exit, CliError> {
    let mut config =
        ServiceConfig::from_path(path).map_err(|e| usage(format!("{}: {e}", path.display())))?;
    config.apply_process_env().map_err(usage)?;
    if let Some(rules) = &cli.rules {
        config.rules = Some(rules.clone());
    }
    if let Some(mode) = cli.mode {
        config.mode = mode.into();
    }
    if let Some(dir) = &cli.prompts_dir {
        config.prompts_dir = Some(dir.clone());
    }
    serve(&config, shutdown_signal()).await?;
    Ok(Exit::Ok)
}
