//! `emcoder` command line: index, code, eval and serve.

pub mod settings;

use std::collections::{BTreeMap, BTreeSet};
use std::io::Write;
use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand, ValueEnum};
use emcoder_client::{ClientError, EmcoderClient};
use emcoder_core::domain::{parse_record, CodingResult, DatasetRecord, GoldAnnotation};
use emcoder_core::eval::{aggregate_runs, score_run, RunMetrics};
use emcoder_core::retrieval::{Exemplar, ExemplarStore};
use emcoder_service::{AppState, ServiceOptions};
use serde_json::{json, Value};
use tokio::net::TcpListener;

use settings::{EmbedderKind, FileConfig, PipelineArgs, Settings};

#[derive(Debug, Parser)]
#[command(name = "emcoder", version, about = "CPT E/M coding from SOAP notes")]
pub struct Cli {
    /// TOML config file; flags and environment variables take precedence.
    #[arg(long, global = true, env = "EMCODER_CONFIG")]
    pub config: Option<PathBuf>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum OutputFormat {
    Jsonl,
    Json,
    Table,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Build an exemplar store from an annotated dataset.
    Index {
        dataset: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, value_enum, env = "EMCODER_EMBEDDER")]
        embedder: Option<EmbedderKind>,
    },
    /// Code every record of a dataset file.
    Code {
        input: PathBuf,
        /// Output file; standard output when absent.
        #[arg(long)]
        out: Option<PathBuf>,
        /// jsonl or json.
        #[arg(long, value_enum, default_value = "jsonl")]
        format: OutputFormat,
        /// Exit 0 when at least one encounter was coded.
        #[arg(long = "partial-ok")]
        partial_ok: bool,
        /// Send requests to a running service instead of an embedded one.
        #[arg(long, env = "EMCODER_SERVER")]
        server: Option<String>,
        #[command(flatten)]
        pipeline: PipelineArgs,
    },
    /// Score result files against gold annotations.
    Eval {
        /// Dataset file holding the gold annotations.
        #[arg(long)]
        gold: PathBuf,
        /// Result file; repeat for several runs.
        #[arg(long)]
        pred: Vec<PathBuf>,
        /// Glob of result files, one run each.
        #[arg(long = "runs-glob")]
        runs_glob: Option<String>,
        /// Glob of baseline result files to report deltas against.
        #[arg(long = "baseline-glob")]
        baseline_glob: Option<String>,
        /// table or json.
        #[arg(long, value_enum, default_value = "table")]
        format: OutputFormat,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run the HTTP service.
    Serve {
        /// Dataset files to load as the encounter catalog.
        #[arg(long)]
        dataset: Vec<PathBuf>,
        #[arg(long, env = "EMCODER_LISTEN")]
        listen: Option<String>,
        /// Journal directory; in-memory when absent.
        #[arg(long = "data-dir", env = "EMCODER_DATA_DIR")]
        data_dir: Option<PathBuf>,
        #[command(flatten)]
        pipeline: PipelineArgs,
    },
}

pub const DEFAULT_LISTEN: &str = "127.0.0.1:8080";

/// Parse arguments, run, and map failures to exit codes: 1 for command
/// failures, 2 for usage and setup errors.
pub fn main_with_args(args: impl IntoIterator<Item = std::ffi::OsString>) -> ExitCode {
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(2) } else { ExitCode::SUCCESS };
        }
    };
    let runtime = tokio::runtime::Builder::new_multi_thread()
        .enable_all()
        .build()
        .expect("tokio runtime");
    match runtime.block_on(run(cli)) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}

pub async fn run(cli: Cli) -> Result<ExitCode> {
    let file = match &cli.config {
        Some(path) => FileConfig::load(path)?,
        None => FileConfig::default(),
    };
    match cli.command {
        Command::Index { dataset, out, embedder } => {
            index(&dataset, &out, embedder.or(file.embedder).unwrap_or(EmbedderKind::Hash)).await
        }
        Command::Code {
            input,
            out,
            format,
            partial_ok,
            server,
            pipeline,
        } => {
            if format == OutputFormat::Table {
                bail!("code writes jsonl or json");
            }
            let settings = Settings::resolve(&pipeline, &file);
            let server = server.or(file.server.clone());
            code(&input, out.as_deref(), format, partial_ok, server, &settings).await
        }
        Command::Eval {
            gold,
            pred,
            runs_glob,
            baseline_glob,
            format,
            out,
        } => {
            if format == OutputFormat::Jsonl {
                bail!("eval writes table or json");
            }
            eval(&gold, pred, runs_glob.as_deref(), baseline_glob.as_deref(), format, out.as_deref())
        }
        Command::Serve {
            dataset,
            listen,
            data_dir,
            pipeline,
        } => {
            let settings = Settings::resolve(&pipeline, &file);
            let listen = listen.or(file.listen.clone()).unwrap_or_else(|| DEFAULT_LISTEN.to_string());
            let data_dir = data_dir.or(file.data_dir.clone());
            serve(&dataset, &listen, data_dir, &settings).await
        }
    }
}

/// Non-blank lines with their 1-based line numbers.
fn numbered_lines(text: &str) -> impl Iterator<Item = (usize, &str)> {
    text.lines()
        .enumerate()
        .map(|(i, l)| (i + 1, l))
        .filter(|(_, l)| !l.trim().is_empty())
}

fn read(path: &Path) -> Result<String> {
    std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))
}

fn write_output(out: Option<&Path>, text: &str) -> Result<()> {
    match out {
        Some(path) => {
            let tmp = path.with_extension("tmp");
            std::fs::write(&tmp, text).with_context(|| format!("writing {}", tmp.display()))?;
            std::fs::rename(&tmp, path).with_context(|| format!("writing {}", path.display()))
        }
        None => {
            let mut stdout = std::io::stdout().lock();
            stdout.write_all(text.as_bytes())?;
            stdout.flush()?;
            Ok(())
        }
    }
}

fn load_dataset(path: &Path) -> Result<Vec<DatasetRecord>> {
    numbered_lines(&read(path)?)
        .map(|(n, line)| parse_record(line).with_context(|| format!("{}:{n}", path.display())))
        .collect()
}

pub async fn index(dataset: &Path, out: &Path, embedder: EmbedderKind) -> Result<ExitCode> {
    let text = read(dataset)?;
    let mut store = ExemplarStore::new(settings::embedder(embedder)?);
    let mut errors = Vec::new();
    let mut seen = BTreeSet::new();
    for (n, line) in numbered_lines(&text) {
        let record = match parse_record(line) {
            Ok(r) => r,
            Err(e) => {
                errors.push(format!("line {n}: {e}"));
                continue;
            }
        };
        let id = record.encounter.id.clone();
        if !seen.insert(id.clone()) {
            errors.push(format!("line {n}: duplicate id `{id}`"));
            continue;
        }
        let Some(gold) = &record.gold else {
            errors.push(format!("line {n}: `{id}` has no gold annotation"));
            continue;
        };
        let embedding = match store.embedder().embed(record.encounter.soap.raw()).await {
            Ok(v) => v,
            Err(e) => {
                errors.push(format!("line {n}: `{id}`: {e}"));
                continue;
            }
        };
        if let Err(e) = Exemplar::from_annotation(&record.encounter, gold, embedding).and_then(|x| store.index_exemplar(x))
        {
            errors.push(format!("line {n}: {e}"));
        }
    }
    if !errors.is_empty() {
        for e in &errors {
            eprintln!("{}: {e}", dataset.display());
        }
        eprintln!("index failed: {} error(s), nothing written", errors.len());
        return Ok(ExitCode::from(1));
    }
    let mut bytes = Vec::new();
    store.write_to(&mut bytes)?;
    write_output(Some(out), std::str::from_utf8(&bytes).expect("store files are UTF-8"))?;
    eprintln!("indexed {} exemplars into {}", store.len(), out.display());
    Ok(ExitCode::SUCCESS)
}

/// A service to send coding requests to: remote, or embedded in-process.
struct Target {
    client: EmcoderClient,
    stop: Option<tokio::sync::oneshot::Sender<()>>,
    handle: Option<tokio::task::JoinHandle<std::io::Result<()>>>,
}

impl Target {
    async fn embedded(settings: &Settings, golds: Vec<GoldAnnotation>) -> Result<Self> {
        let state = AppState::open(ServiceOptions {
            pipeline: settings.pipeline(golds)?,
            store: settings.exemplar_store()?,
            records: Vec::new(),
            data_dir: None,
        })
        .await?;
        let listener = TcpListener::bind("127.0.0.1:0").await?;
        let addr = listener.local_addr()?;
        let (stop, stopped) = tokio::sync::oneshot::channel::<()>();
        let handle = tokio::spawn(emcoder_service::serve(listener, state, async {
            let _ = stopped.await;
        }));
        Ok(Self {
            client: EmcoderClient::new(format!("http://{addr}")),
            stop: Some(stop),
            handle: Some(handle),
        })
    }

    async fn close(mut self) -> Result<()> {
        if let Some(stop) = self.stop.take() {
            let _ = stop.send(());
        }
        if let Some(handle) = self.handle.take() {
            handle.await??;
        }
        Ok(())
    }
}

fn error_record(line: usize, raw: &str, err: &ClientError) -> Value {
    let id = serde_json::from_str::<Value>(raw)
        .ok()
        .and_then(|v| v.get("id").and_then(Value::as_str).map(str::to_string));
    let (code, message) = match err.error_body() {
        Some(body) => (body.error_code.clone(), body.message.clone()),
        None => ("transport".to_string(), err.to_string()),
    };
    json!({
        "id": id,
        "line": line,
        "error": {"status": err.status(), "error_code": code, "message": message},
    })
}

pub async fn code(
    input: &Path,
    out: Option<&Path>,
    format: OutputFormat,
    partial_ok: bool,
    server: Option<String>,
    settings: &Settings,
) -> Result<ExitCode> {
    let text = read(input)?;
    let lines: Vec<(usize, &str)> = numbered_lines(&text).collect();
    if lines.is_empty() {
        eprintln!("warning: {} has no records", input.display());
        write_output(out, if format == OutputFormat::Json { "[]\n" } else { "" })?;
        return Ok(ExitCode::SUCCESS);
    }
    let target = match server {
        Some(url) => Target {
            client: EmcoderClient::new(url),
            stop: None,
            handle: None,
        },
        None => {
            // golds only matter to the stochastic mock
            let golds = lines
                .iter()
                .filter_map(|(_, l)| parse_record(l).ok().and_then(|r| r.gold))
                .collect();
            Target::embedded(settings, golds).await?
        }
    };
    let mut entries = Vec::with_capacity(lines.len());
    let (mut ok, mut degraded) = (0usize, 0usize);
    for (n, line) in &lines {
        match target.client.code_raw(line.to_string()).await {
            Ok(result) => {
                ok += 1;
                degraded += result.degraded_count();
                entries.push(serde_json::to_value(&result)?);
            }
            Err(e) => entries.push(error_record(*n, line, &e)),
        }
    }
    target.close().await?;
    let rendered = match format {
        OutputFormat::Json => format!("{}\n", serde_json::to_string_pretty(&entries)?),
        _ => entries.iter().map(|e| format!("{e}\n")).collect(),
    };
    write_output(out, &rendered)?;
    let failed = lines.len() - ok;
    eprintln!(
        "coded {ok} of {} encounters: {failed} failed, {degraded} degraded stages",
        lines.len()
    );
    Ok(if failed == 0 || (partial_ok && ok > 0) {
        ExitCode::SUCCESS
    } else {
        ExitCode::from(1)
    })
}

/// Results of one run file. Error records count as missing predictions.
fn load_results(path: &Path) -> Result<Vec<CodingResult>> {
    let mut results = Vec::new();
    for (n, line) in numbered_lines(&read(path)?) {
        let value: Value = serde_json::from_str(line).with_context(|| format!("{}:{n}", path.display()))?;
        if value.get("error").is_some() {
            continue;
        }
        results.push(serde_json::from_value(value).with_context(|| format!("{}:{n}", path.display()))?);
    }
    Ok(results)
}

fn glob_paths(pattern: &str) -> Result<Vec<PathBuf>> {
    let mut paths = glob::glob(pattern)
        .with_context(|| format!("bad glob `{pattern}`"))?
        .collect::<std::result::Result<Vec<_>, _>>()?;
    paths.sort();
    if paths.is_empty() {
        bail!("`{pattern}` matches no files");
    }
    Ok(paths)
}

fn score_files(paths: &[PathBuf], golds: &[GoldAnnotation], unlabeled: &BTreeSet<String>) -> Result<Vec<RunMetrics>> {
    paths
        .iter()
        .map(|path| {
            let mut results = load_results(path)?;
            // predictions for encounters without gold are not scored
            results.retain(|r| !unlabeled.contains(&r.encounter_id));
            score_run(&path.display().to_string(), &results, golds).with_context(|| format!("scoring {}", path.display()))
        })
        .collect()
}

pub fn eval(
    gold_path: &Path,
    mut preds: Vec<PathBuf>,
    runs_glob: Option<&str>,
    baseline_glob: Option<&str>,
    format: OutputFormat,
    out: Option<&Path>,
) -> Result<ExitCode> {
    let records = load_dataset(gold_path)?;
    let unlabeled: BTreeSet<String> = records
        .iter()
        .filter(|r| r.gold.is_none())
        .map(|r| r.encounter.id.clone())
        .collect();
    let golds: Vec<GoldAnnotation> = records.into_iter().filter_map(|r| r.gold).collect();
    if let Some(pattern) = runs_glob {
        preds.extend(glob_paths(pattern)?);
    }
    if preds.is_empty() {
        bail!("give --pred or --runs-glob");
    }
    let runs = score_files(&preds, &golds, &unlabeled)?;
    let baseline = match baseline_glob {
        Some(pattern) => Some(score_files(&glob_paths(pattern)?, &golds, &unlabeled)?),
        None => None,
    };
    let report = aggregate_runs(&runs, baseline.as_deref())?;
    let text = match format {
        OutputFormat::Json => format!("{}\n", report.to_json()),
        _ => report.to_table(),
    };
    write_output(out, &text)?;
    Ok(ExitCode::SUCCESS)
}

pub async fn serve(datasets: &[PathBuf], listen: &str, data_dir: Option<PathBuf>, settings: &Settings) -> Result<ExitCode> {
    let mut records = Vec::new();
    for path in datasets {
        records.extend(load_dataset(path)?);
    }
    let golds: Vec<GoldAnnotation> = records.iter().filter_map(|r| r.gold.clone()).collect();
    let by_id: BTreeMap<&str, usize> = records.iter().enumerate().map(|(i, r)| (r.encounter.id.as_str(), i)).collect();
    if by_id.len() != records.len() {
        bail!("dataset files repeat encounter ids");
    }
    let state = AppState::open(ServiceOptions {
        pipeline: settings.pipeline(golds)?,
        store: settings.exemplar_store()?,
        records,
        data_dir,
    })
    .await?;
    let addr: SocketAddr = listen.parse().with_context(|| format!("bad listen address `{listen}`"))?;
    let listener = TcpListener::bind(addr).await.with_context(|| format!("binding {addr}"))?;
    eprintln!("listening on http://{}", listener.local_addr()?);
    emcoder_service::serve(listener, state, async {
        let _ = tokio::signal::ctrl_c().await;
    })
    .await?;
    Ok(ExitCode::SUCCESS)
}
