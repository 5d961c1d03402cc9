use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};
use recollect_core::{Scorer, TriggerPolicy};

#[derive(Debug, Parser)]
#[command(
    name = "recollect",
    version,
    about = "Memory recall and consolidation for dialogue agents"
)]
pub struct Cli {
    #[command(flatten)]
    pub global: GlobalOpts,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Format {
    Text,
    Json,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum EmbedderChoice {
    Local,
    Remote,
}

#[derive(Debug, Args)]
pub struct GlobalOpts {
    /// Store directory.
    #[arg(
        long,
        global = true,
        env = "RECOLLECT_STORE",
        default_value = ".recollect"
    )]
    pub store: PathBuf,

    #[arg(long, global = true, value_enum, default_value_t = Format::Text)]
    pub format: Format,

    /// Recall trigger threshold in (0, 1].
    #[arg(long, global = true)]
    pub threshold: Option<f64>,

    /// threshold-only, argmax-only or argmax-and-threshold.
    #[arg(long, global = true, value_parser = parse_policy)]
    pub policy: Option<TriggerPolicy>,

    /// proposed or baseline.
    #[arg(long, global = true, value_parser = parse_scorer)]
    pub scorer: Option<Scorer>,

    /// Seconds per unit of elapsed time in the recall probability.
    #[arg(long, global = true)]
    pub decay_unit: Option<f64>,

    /// Seconds per unit of inter-recall time in the consolidation increment.
    #[arg(long, global = true)]
    pub consolidation_unit: Option<f64>,

    /// Number of nearest events scored per recall.
    #[arg(long, global = true)]
    pub candidate_k: Option<usize>,

    #[arg(long, global = true, value_enum, default_value_t = EmbedderChoice::Local)]
    pub embedder: EmbedderChoice,

    /// Embedding dimension.
    #[arg(long, global = true, default_value_t = recollect_core::embedding::DEFAULT_DIMENSION)]
    pub dimension: usize,

    #[arg(long, global = true, env = "RECOLLECT_EMBED_ENDPOINT")]
    pub embed_endpoint: Option<String>,

    /// Environment variable holding the embedding service token.
    #[arg(long, global = true)]
    pub embed_token_env: Option<String>,

    #[arg(long, global = true, default_value_t = 10_000)]
    pub embed_timeout_ms: u64,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Append an event to the store.
    Add {
        content: String,
        /// Event time (epoch seconds or ISO-8601); defaults to now.
        #[arg(long, value_parser = parse_time)]
        time: Option<i64>,
        /// Importance 1-10, used by the baseline scorer.
        #[arg(long)]
        importance: Option<i64>,
        /// Comma-separated tags.
        #[arg(long, value_delimiter = ',')]
        tags: Vec<String>,
    },
    /// List stored events.
    List,
    /// Recall the memory that best matches a query.
    Recall {
        query: String,
        /// Query time (epoch seconds or ISO-8601); defaults to now.
        #[arg(long, value_parser = parse_time)]
        now: Option<i64>,
        /// Show every scored candidate.
        #[arg(long)]
        explain: bool,
        /// Score without consolidating the recalled memory.
        #[arg(long)]
        dry_run: bool,
    },
    /// Import one task of a benchmark dataset into the store.
    Replay {
        dataset: PathBuf,
        /// Task to import; required when the dataset has several.
        #[arg(long)]
        task: Option<String>,
    },
    /// Remove an event.
    Remove { id: String },
    /// Write a snapshot and truncate the event log.
    Compact,
    /// Run the model comparison benchmark on a dataset.
    Bench {
        dataset: PathBuf,
        /// Comma-separated models, compared in this order.
        #[arg(long, value_delimiter = ',', value_parser = parse_scorer, default_value = "proposed,baseline")]
        models: Vec<Scorer>,
        /// Write the JSON report here, and the text report next to it with a .txt extension.
        #[arg(long)]
        report_out: Option<PathBuf>,
    },
    /// Chat with an agent that recalls from the store. Reads one turn per line.
    Chat {
        #[arg(long)]
        user: String,
        #[arg(
            long,
            conflicts_with = "llm_stub",
            required_unless_present = "llm_stub"
        )]
        llm_endpoint: Option<String>,
        /// Scripted replies, one per line (`@echo` echoes the prompt).
        #[arg(long)]
        llm_stub: Option<PathBuf>,
        /// Environment variable holding the chat service token.
        #[arg(long)]
        llm_token_env: Option<String>,
        #[arg(long, default_value_t = 30_000)]
        llm_timeout_ms: u64,
        /// Time of the first turn (epoch seconds or ISO-8601); defaults to the clock.
        #[arg(long, value_parser = parse_time)]
        now: Option<i64>,
        /// Seconds between turns when --now is given.
        #[arg(long, default_value_t = 60)]
        step: i64,
        /// Append the transcript to this file.
        #[arg(long)]
        transcript: Option<PathBuf>,
        /// Show what was recalled on each turn.
        #[arg(long)]
        explain: bool,
    },
}

pub fn parse_time(s: &str) -> Result<i64, String> {
    if let Ok(secs) = s.parse::<i64>() {
        return Ok(secs);
    }
    chrono::DateTime::parse_from_rfc3339(s)
        .map(|t| t.timestamp())
        .map_err(|e| format!("{s:?} is neither epoch seconds nor ISO-8601: {e}"))
}

fn parse_policy(s: &str) -> Result<TriggerPolicy, String> {
    s.parse()
}

fn parse_scorer(s: &str) -> Result<Scorer, String> {
    s.parse()
}

#[cfg(test)]
mod tests {
    use super::*;
    use clap::CommandFactory;

    #[test]
    fn cli_definition_is_consistent() {
        Cli::command().debug_assert();
    }

    #[test]
    fn time_parsing() {
        assert_eq!(parse_time("1700000000").unwrap(), 1_700_000_000);
        assert_eq!(parse_time("2023-11-14T22:13:20Z").unwrap(), 1_700_000_000);
        assert_eq!(
            parse_time("2023-11-15T07:13:20+09:00").unwrap(),
            1_700_000_000
        );
        assert!(parse_time("next thursday").is_err());
    }
}
