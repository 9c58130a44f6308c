mod commands;

use std::net::SocketAddr;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

#[derive(Parser, Debug)]
#[command(
    name = "iterbank",
    version,
    about = "Iterative human-in-the-loop treebank construction"
)]
pub struct Cli {
    /// Seed for sampling and training (stored in the project on init).
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Leave PUNCT words out of every score.
    #[arg(long, global = true)]
    pub ignore_punct: bool,
    /// Compare relation labels without their subtype (nmod:poss as nmod).
    #[arg(long, global = true)]
    pub strip_subtypes: bool,
    /// More logging on stderr (-v info, -vv debug).
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    pub verbose: u8,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Args, Debug)]
pub struct ProjectArg {
    #[arg(long, short = 'p')]
    pub project: PathBuf,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Create a project from a pool of sentences and a base model.
    Init(InitArgs),
    /// Sample the next batch and pseudo-annotate it.
    NextBatch {
        #[command(flatten)]
        project: ProjectArg,
        /// File with one sentence id per line to use instead of sampling.
        #[arg(long)]
        from_file: Option<PathBuf>,
    },
    /// Correct words of the batch in progress.
    Edit(EditArgs),
    /// Write the corrected batch as gold and score the pseudo-annotation.
    Finalize {
        #[command(flatten)]
        project: ProjectArg,
        /// Defaults to the batch in progress.
        #[arg(long)]
        batch: Option<usize>,
    },
    /// Fine-tune the current model on a finalized batch.
    Finetune {
        #[command(flatten)]
        project: ProjectArg,
        /// Defaults to the latest finalized batch.
        #[arg(long)]
        batch: Option<usize>,
    },
    /// Print the trend over batches, or one batch report.
    Report {
        #[command(flatten)]
        project: ProjectArg,
        #[arg(long)]
        batch: Option<usize>,
        #[arg(long)]
        json: bool,
        /// Print the batch confusion matrix as CSV.
        #[arg(long, requires = "batch")]
        csv: bool,
    },
    /// Serve the JSON API and the correction UI.
    Serve {
        #[command(flatten)]
        project: ProjectArg,
        #[arg(long, default_value = "127.0.0.1:8080")]
        bind: SocketAddr,
        /// Directory with the built UI bundle.
        #[arg(long)]
        ui: Option<PathBuf>,
    },
    /// Attachment scores of a system file against a gold file, or of a
    /// project batch's pseudo-annotation against its gold.
    Eval(PairArgs),
    /// Cohen's kappa over relation labels between two annotations.
    Kappa(PairArgs),
    /// Gold-by-system label confusion matrix as CSV.
    Confusion {
        #[command(flatten)]
        pair: PairArgs,
        /// Keep the k most frequent gold labels, merge the rest into OTHER.
        #[arg(long)]
        top_k: Option<usize>,
    },
    /// Check CoNLL-U files, or every batch of a project, for structural
    /// problems.
    Validate {
        #[arg(long, short = 'p')]
        project: Option<PathBuf>,
        files: Vec<PathBuf>,
    },
    /// Inter-annotator agreement of a double-annotated study.
    Agreement {
        #[arg(long, short = 'p')]
        project: Option<PathBuf>,
        /// Study directory name under <project>/agreement, or a path.
        #[arg(long)]
        study: Option<String>,
        #[arg(long, requires = "b")]
        a: Option<PathBuf>,
        #[arg(long, requires = "a")]
        b: Option<PathBuf>,
        /// Write the disagreement list as CSV to this file.
        #[arg(long)]
        disagreements: Option<PathBuf>,
        #[arg(long)]
        json: bool,
    },
    /// Train the builtin parser.
    Train {
        #[arg(long)]
        corpus: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = iterbank::project::DEFAULT_EPOCHS)]
        epochs: usize,
        /// Warm-start from this model directory.
        #[arg(long)]
        base: Option<PathBuf>,
    },
    /// Parse a CoNLL-U file with a builtin model.
    Predict {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        input: PathBuf,
        /// Defaults to standard output.
        #[arg(long)]
        output: Option<PathBuf>,
    },
    /// The builtin parser behind the external parser protocol.
    AdapterBuiltin {
        #[arg(long, default_value_t = iterbank::project::DEFAULT_EPOCHS)]
        epochs: usize,
        #[command(subcommand)]
        action: AdapterAction,
    },
}

#[derive(Subcommand, Debug)]
pub enum AdapterAction {
    Predict {
        #[arg(long)]
        model: PathBuf,
    },
    Train {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Args, Debug)]
pub struct InitArgs {
    #[command(flatten)]
    pub project: ProjectArg,
    /// CoNLL-U file with the sentences to annotate.
    #[arg(long)]
    pub pool: PathBuf,
    /// Train the builtin base model on this annotated CoNLL-U file.
    #[arg(
        long,
        conflicts_with = "base_model",
        required_unless_present = "base_model"
    )]
    pub base_train: Option<PathBuf>,
    /// Copy this model directory as the base model.
    #[arg(long)]
    pub base_model: Option<PathBuf>,
    #[arg(long)]
    pub name: Option<String>,
    #[arg(long, default_value_t = iterbank::project::DEFAULT_BATCH_SIZE)]
    pub batch_size: usize,
    #[arg(long, default_value_t = iterbank::project::DEFAULT_EPOCHS)]
    pub epochs: usize,
    /// MISC key holding the second-script form.
    #[arg(long, default_value = iterbank::conllu::DEFAULT_ORIG_KEY)]
    pub orig_key: String,
    /// Use an external parser executable instead of the builtin one.
    #[arg(long, requires = "base_model")]
    pub external: Option<PathBuf>,
    /// Argument passed to the external parser before the subcommand.
    #[arg(long = "external-arg", allow_hyphen_values = true)]
    pub external_args: Vec<String>,
    /// External parser timeout in seconds.
    #[arg(long, default_value_t = 3600)]
    pub timeout: u64,
    /// KEY=VALUE environment entry for the external parser.
    #[arg(long = "env")]
    pub env: Vec<String>,
}

#[derive(Args, Debug)]
pub struct EditArgs {
    #[command(flatten)]
    pub project: ProjectArg,
    /// Defaults to the batch in progress.
    #[arg(long)]
    pub batch: Option<usize>,
    #[arg(long, required_unless_present_any = ["script", "from_gold"])]
    pub sentence: Option<String>,
    #[arg(long, requires = "sentence")]
    pub token: Option<usize>,
    #[arg(long)]
    pub head: Option<usize>,
    #[arg(long)]
    pub deprel: Option<String>,
    #[arg(long)]
    pub upos: Option<String>,
    /// JSON lines of {"sentence_id", "token_id", "head"?, "deprel"?, "upos"?}.
    #[arg(long, conflicts_with_all = ["sentence", "from_gold"])]
    pub script: Option<PathBuf>,
    /// Edit every word to match this annotated CoNLL-U file.
    #[arg(long, conflicts_with = "sentence")]
    pub from_gold: Option<PathBuf>,
    #[arg(long, default_value = "cli")]
    pub annotator: String,
}

#[derive(Args, Debug)]
pub struct PairArgs {
    #[arg(long, short = 'p', requires = "batch")]
    pub project: Option<PathBuf>,
    #[arg(long)]
    pub batch: Option<usize>,
    /// System (or first annotator) file.
    #[arg(long, required_unless_present = "project", requires = "gold")]
    pub system: Option<PathBuf>,
    /// Gold (or second annotator) file.
    #[arg(long, required_unless_present = "project", requires = "system")]
    pub gold: Option<PathBuf>,
    #[arg(long)]
    pub json: bool,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = match cli.verbose {
        0 => tracing::Level::WARN,
        1 => tracing::Level::INFO,
        _ => tracing::Level::DEBUG,
    };
    tracing_subscriber::fmt()
        .with_max_level(level)
        .with_writer(std::io::stderr)
        .init();
    match commands::run(cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            let mut source = e.source();
            while let Some(s) = source {
                eprintln!("  caused by: {s}");
                source = s.source();
            }
            ExitCode::FAILURE
        }
    }
}
