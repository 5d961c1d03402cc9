use std::fs;
use std::io::{self, BufRead, IsTerminal, Write};
use std::path::{Path, PathBuf};
use std::time::Duration;

use recollect_core::embedding::{EmbedError, EmbedderConfig, EmbedderKind};
use recollect_core::eval_harness::{self, Dataset, EvalError};
use recollect_core::llm::LlmError;
use recollect_core::memory_math::MathError;
use recollect_core::memory_store::{iso8601, StoreError};
use recollect_core::recall_engine::EngineError;
use recollect_core::{
    ChatClient, EngineConfig, EventId, HttpChatClient, MemoryStore, NewEvent, RecallEngine,
    ScriptedChatClient,
};
use serde::Serialize;

use crate::args::{Command, EmbedderChoice, Format, GlobalOpts};
use crate::render;

pub const EXIT_USAGE: i32 = 2;
pub const EXIT_IO: i32 = 3;
pub const EXIT_REMOTE: i32 = 4;

/// An error with the process exit code it maps to.
#[derive(Debug)]
pub struct CliError {
    pub code: i32,
    pub message: String,
}

impl CliError {
    pub fn usage(message: impl Into<String>) -> Self {
        Self {
            code: EXIT_USAGE,
            message: message.into(),
        }
    }

    pub fn io(message: impl Into<String>) -> Self {
        Self {
            code: EXIT_IO,
            message: message.into(),
        }
    }
}

impl From<StoreError> for CliError {
    fn from(e: StoreError) -> Self {
        let code = match &e {
            StoreError::Io { .. }
            | StoreError::Locked(_)
            | StoreError::Corrupt { .. }
            | StoreError::Truncated { .. } => EXIT_IO,
            StoreError::Embed(inner) => return embed_error(inner, e.to_string()),
            _ => EXIT_USAGE,
        };
        Self {
            code,
            message: e.to_string(),
        }
    }
}

fn embed_error(e: &EmbedError, message: String) -> CliError {
    let code = match e {
        EmbedError::Timeout
        | EmbedError::Status(_)
        | EmbedError::Transport(_)
        | EmbedError::Decode(_)
        | EmbedError::DimensionMismatch { .. } => EXIT_REMOTE,
        EmbedError::NoFeatures | EmbedError::ZeroNorm | EmbedError::Config(_) => EXIT_USAGE,
    };
    CliError { code, message }
}

impl From<EmbedError> for CliError {
    fn from(e: EmbedError) -> Self {
        let message = e.to_string();
        embed_error(&e, message)
    }
}

impl From<LlmError> for CliError {
    fn from(e: LlmError) -> Self {
        let code = match e {
            LlmError::Script { .. } => EXIT_USAGE,
            _ => EXIT_REMOTE,
        };
        Self {
            code,
            message: e.to_string(),
        }
    }
}

impl From<MathError> for CliError {
    fn from(e: MathError) -> Self {
        Self::usage(e.to_string())
    }
}

impl From<EngineError> for CliError {
    fn from(e: EngineError) -> Self {
        match e {
            EngineError::Store(e) => e.into(),
            EngineError::Embed(e) => e.into(),
            EngineError::Llm(e) => e.into(),
            EngineError::Math(e) => e.into(),
            EngineError::Config(m) => Self::usage(m),
        }
    }
}

impl From<EvalError> for CliError {
    fn from(e: EvalError) -> Self {
        match e {
            EvalError::Embed(e) => e.into(),
            EvalError::Engine(e) => e.into(),
            other => Self::usage(other.to_string()),
        }
    }
}

fn engine_config(g: &GlobalOpts) -> Result<EngineConfig, CliError> {
    let mut cfg = EngineConfig::default();
    if let Some(k) = g.threshold {
        cfg.threshold = k;
    }
    if let Some(p) = g.policy {
        cfg.trigger_policy = p;
    }
    if let Some(s) = g.scorer {
        cfg.scorer = s;
    }
    if let Some(d) = g.decay_unit {
        cfg.scaling.decay_unit_seconds = d;
    }
    if let Some(c) = g.consolidation_unit {
        cfg.scaling.consolidation_unit_seconds = c;
    }
    if let Some(k) = g.candidate_k {
        cfg.candidate_k = k;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn embedder_config(g: &GlobalOpts) -> Result<EmbedderConfig, CliError> {
    let cfg = EmbedderConfig {
        kind: match g.embedder {
            EmbedderChoice::Local => EmbedderKind::LocalHash,
            EmbedderChoice::Remote => EmbedderKind::Remote,
        },
        dimension: g.dimension,
        endpoint: g.embed_endpoint.clone(),
        auth_token_env: g.embed_token_env.clone(),
        timeout_ms: g.embed_timeout_ms,
    };
    cfg.validate()?;
    Ok(cfg)
}

fn open_engine(g: &GlobalOpts) -> Result<RecallEngine, CliError> {
    let config = engine_config(g)?;
    let embedder = embedder_config(g)?.build()?;
    let store = MemoryStore::open(&g.store)?;
    Ok(RecallEngine::new(store, embedder, config)?)
}

fn clock_now() -> i64 {
    chrono::Utc::now().timestamp()
}

fn emit<T: Serialize>(format: Format, value: &T, text: impl FnOnce() -> String) {
    match format {
        Format::Json => println!(
            "{}",
            serde_json::to_string_pretty(value).expect("output serializes")
        ),
        Format::Text => print!("{}", text()),
    }
}

fn write_file(path: &Path, contents: &str) -> Result<(), CliError> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent)
            .map_err(|e| CliError::io(format!("{}: {e}", parent.display())))?;
    }
    fs::write(path, contents).map_err(|e| CliError::io(format!("{}: {e}", path.display())))
}

pub fn run(global: &GlobalOpts, command: Command) -> Result<i32, CliError> {
    match command {
        Command::Add {
            content,
            time,
            importance,
            tags,
        } => {
            let importance = match importance {
                Some(i) if !(1..=10).contains(&i) => {
                    return Err(CliError::usage(format!("importance {i} outside 1..=10")))
                }
                other => other.map(|i| i as u8),
            };
            if content.trim().is_empty() {
                return Err(CliError::usage("content must not be empty"));
            }
            let time = time.unwrap_or_else(clock_now);
            if time < 0 {
                return Err(CliError::usage("time must not precede the epoch"));
            }
            let mut engine = open_engine(global)?;
            let event = engine.add(NewEvent {
                content,
                timestamp: time,
                importance,
                tags: tags.into_iter().filter(|t| !t.is_empty()).collect(),
                source: Default::default(),
            })?;
            let view = render::EventView::from(&event);
            emit(global.format, &view, || render::added(&view));
        }
        Command::List => {
            let engine = open_engine(global)?;
            let views: Vec<render::EventView> = engine
                .store()
                .events()
                .iter()
                .map(render::EventView::from)
                .collect();
            emit(global.format, &views, || render::list(&views));
        }
        Command::Recall {
            query,
            now,
            explain,
            dry_run,
        } => {
            let now = now.unwrap_or_else(clock_now);
            let mut engine = open_engine(global)?;
            let outcome = if dry_run {
                engine.recall_dry_run(&query, now)?
            } else {
                engine.recall(&query, now)?
            };
            for w in &outcome.warnings {
                eprintln!("warning: {w}");
            }
            let view = render::RecallView::new(&outcome, dry_run);
            emit(global.format, &view, || {
                render::recall(&view, engine.config(), explain)
            });
        }
        Command::Replay { dataset, task } => {
            let ds = Dataset::load(&dataset)?;
            let task = match task {
                Some(id) => ds
                    .tasks
                    .iter()
                    .find(|t| t.task_id == id)
                    .ok_or_else(|| CliError::usage(format!("dataset has no task {id:?}")))?,
                None if ds.tasks.len() == 1 => &ds.tasks[0],
                None => {
                    return Err(CliError::usage(format!(
                        "dataset has {} tasks; pick one with --task",
                        ds.tasks.len()
                    )))
                }
            };
            let mut engine = open_engine(global)?;
            let imported = eval_harness::replay_task(&mut engine, task)?;
            let view = render::ReplayView {
                task_id: task.task_id.clone(),
                query: task.query.clone(),
                query_time: task.query_time,
                query_time_iso: iso8601(task.query_time),
                events: imported
                    .iter()
                    .map(|(label, id)| render::ReplayedEvent {
                        label: label.clone(),
                        id: id.to_string(),
                    })
                    .collect(),
            };
            emit(global.format, &view, || render::replay(&view));
        }
        Command::Remove { id } => {
            let id: EventId = id
                .parse()
                .map_err(|e| CliError::usage(format!("invalid event id {id:?}: {e}")))?;
            let mut engine = open_engine(global)?;
            let removed = engine.store_mut().remove(&id)?;
            let view = render::EventView::from(&removed);
            emit(global.format, &view, || format!("removed {}\n", view.id));
        }
        Command::Compact => {
            let mut engine = open_engine(global)?;
            let snapshot = engine.store_mut().compact()?;
            let view = serde_json::json!({ "events": snapshot.events.len(), "format_version": snapshot.format_version });
            emit(global.format, &view, || {
                format!("compacted {} events\n", snapshot.events.len())
            });
        }
        Command::Bench {
            dataset,
            models,
            report_out,
        } => {
            if !dataset.exists() {
                return Err(CliError::usage(format!(
                    "dataset {} not found",
                    dataset.display()
                )));
            }
            let config = engine_config(global)?;
            let embedder = embedder_config(global)?.build()?;
            let report =
                eval_harness::run_benchmark(&dataset, &models, &config, embedder.as_ref())?;
            let json = report.to_json();
            let text = eval_harness::render_text(&report);
            if let Some(path) = report_out {
                write_file(&path, &json)?;
                write_file(&path.with_extension("txt"), &text)?;
            }
            match global.format {
                Format::Json => print!("{json}"),
                Format::Text => print!("{text}"),
            }
        }
        Command::Chat {
            user,
            llm_endpoint,
            llm_stub,
            llm_token_env,
            llm_timeout_ms,
            now,
            step,
            transcript,
            explain,
        } => {
            if user.trim().is_empty() {
                return Err(CliError::usage("--user must not be empty"));
            }
            let client: Box<dyn ChatClient> = match (llm_endpoint, llm_stub) {
                (_, Some(path)) => Box::new(ScriptedChatClient::from_file(&path)?),
                (Some(url), None) => Box::new(HttpChatClient::new(
                    url,
                    llm_token_env,
                    Duration::from_millis(llm_timeout_ms),
                )),
                (None, None) => return Err(CliError::usage("give --llm-endpoint or --llm-stub")),
            };
            let mut engine = open_engine(global)?;
            return chat_loop(
                &mut engine,
                client.as_ref(),
                &user,
                now,
                step,
                transcript,
                explain,
                global.format,
            );
        }
    }
    Ok(0)
}

#[allow(clippy::too_many_arguments)]
fn chat_loop(
    engine: &mut RecallEngine,
    client: &dyn ChatClient,
    user: &str,
    start: Option<i64>,
    step: i64,
    transcript: Option<PathBuf>,
    explain: bool,
    format: Format,
) -> Result<i32, CliError> {
    let stdin = io::stdin();
    let interactive = stdin.is_terminal();
    let mut log = match &transcript {
        Some(path) => Some(
            fs::OpenOptions::new()
                .create(true)
                .append(true)
                .open(path)
                .map_err(|e| CliError::io(format!("{}: {e}", path.display())))?,
        ),
        None => None,
    };
    let mut exit = 0;
    let mut turn = 0i64;
    let mut lines = stdin.lock().lines();
    loop {
        if interactive {
            print!("{user}> ");
            io::stdout().flush().ok();
        }
        let Some(line) = lines.next() else { break };
        let line = line.map_err(|e| CliError::io(format!("stdin: {e}")))?;
        let text = line.trim();
        if text.is_empty() {
            continue;
        }
        let now = start.map_or_else(clock_now, |s| s + turn * step);
        turn += 1;
        let mut record = render::TurnView {
            time: iso8601(now),
            user: text.to_string(),
            reply: None,
            error: None,
            recalled: None,
        };
        match engine.chat_turn(text, user, now, client) {
            Ok(t) => {
                record.recalled = t.outcome.recalled.as_ref().map(render::RecalledView::from);
                record.reply = Some(t.reply);
            }
            Err(EngineError::Llm(e)) => {
                eprintln!("error: {e} (turn stored)");
                exit = EXIT_REMOTE;
                record.error = Some(e.to_string());
            }
            Err(e) => return Err(e.into()),
        }
        let rendered = match format {
            Format::Json => format!(
                "{}\n",
                serde_json::to_string(&record).expect("turn serializes")
            ),
            Format::Text => render::turn(&record, explain),
        };
        print!("{rendered}");
        if let Some(f) = log.as_mut() {
            f.write_all(rendered.as_bytes())
                .map_err(|e| CliError::io(e.to_string()))?;
        }
    }
    Ok(exit)
}
