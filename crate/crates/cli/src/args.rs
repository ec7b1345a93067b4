use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};
use sectionsum::corpus::ColumnMap;
use sectionsum::pipeline::ReportFormat;
use sectionsum::rouge::TokenizeOptions;
use sectionsum::tinylsg::{LrSchedule, LsgConfig, ModelConfig, TrainConfig};

#[derive(Parser, Debug)]
#[command(
    name = "sectionsum",
    version,
    about = "Section-aware chart note summarization toolkit"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Split chart notes into (section, body) rows.
    SplitSections(SplitArgs),
    /// Train a TinyLsg model on dialogue → note (or one section).
    Train(TrainArgs),
    /// Summarize every dialogue of a corpus with a trained model.
    Predict(PredictArgs),
    /// ROUGE of candidate notes against references.
    Score(ScoreArgs),
    /// Train and evaluate one or all approaches end to end.
    #[command(args_override_self = true)]
    Run(RunArgs),
    /// Render saved run reports (or fresh evaluations) as one table.
    Report(ReportArgs),
    /// Compare backprop gradients with central finite differences.
    GradCheck(GradCheckArgs),
    /// Print the LSG attention mask as a grid.
    MaskDump(MaskDumpArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum FormatArg {
    Table,
    Csv,
    Json,
}

impl From<FormatArg> for ReportFormat {
    fn from(f: FormatArg) -> Self {
        match f {
            FormatArg::Table => ReportFormat::Table,
            FormatArg::Csv => ReportFormat::Csv,
            FormatArg::Json => ReportFormat::Json,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum InputFormat {
    /// Guess from the extension (.jsonl/.json → JSONL, else CSV).
    Auto,
    Csv,
    Jsonl,
}

#[derive(Args, Debug, Clone)]
pub struct OutputOpts {
    /// Output format.
    #[arg(long, value_enum, default_value_t = FormatArg::Table)]
    pub format: FormatArg,
    /// Write data here instead of standard output.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Args, Debug, Clone)]
pub struct CorpusOpts {
    /// Column remap, e.g. `id=encounter_id,note=summary`.
    #[arg(long, default_value = "id=id,dialogue=dialogue,note=note")]
    pub columns: ColumnMap,
    /// Corpus file format.
    #[arg(long, value_enum, default_value_t = InputFormat::Auto)]
    pub input_format: InputFormat,
}

#[derive(Args, Debug, Clone)]
pub struct AliasOpt {
    /// Header alias table (`RAW HEADER<TAB>ID` per line); replaces the built-in one.
    #[arg(long)]
    pub aliases: Option<PathBuf>,
}

#[derive(Args, Debug, Clone)]
pub struct TokenOpts {
    /// Stem tokens (English Snowball) before scoring.
    #[arg(long)]
    pub stem: bool,
    /// Drop common English stopwords before scoring.
    #[arg(long)]
    pub remove_stopwords: bool,
}

impl TokenOpts {
    pub fn options(&self) -> TokenizeOptions {
        TokenizeOptions {
            stem: self.stem,
            remove_stopwords: self.remove_stopwords,
        }
    }
}

#[derive(Args, Debug, Clone)]
pub struct JobsOpt {
    /// Worker threads for per-encounter and per-section work (default: all cores).
    #[arg(long, value_parser = clap::value_parser!(u32).range(1..))]
    pub jobs: Option<u32>,
}

#[derive(Args, Debug, Clone)]
pub struct SplitArgs {
    /// Note file, or `-` for standard input.
    #[arg(default_value = "-")]
    pub input: PathBuf,
    /// Treat the input as a corpus (CSV/JSONL) and split every note in it.
    #[arg(long)]
    pub corpus: bool,
    #[command(flatten)]
    pub corpus_opts: CorpusOpts,
    #[command(flatten)]
    pub aliases: AliasOpt,
    #[command(flatten)]
    pub output: OutputOpts,
}

#[derive(Args, Debug, Clone)]
pub struct LsgArgs {
    /// Tokens per local attention block.
    #[arg(long, default_value_t = 16)]
    pub block: usize,
    /// Sparse attention stride (0 disables sparse keys).
    #[arg(long, default_value_t = 4)]
    pub stride: usize,
    /// Number of global tokens.
    #[arg(long, default_value_t = 1)]
    pub global: usize,
    /// Neighbouring blocks visible on each side.
    #[arg(long, default_value_t = 1)]
    pub radius: usize,
    /// Longest source in tokens; longer inputs are truncated.
    #[arg(long, default_value_t = 512)]
    pub max_input: usize,
}

impl LsgArgs {
    pub fn config(&self) -> LsgConfig {
        LsgConfig {
            block_size: self.block,
            sparsity_stride: self.stride,
            num_global: self.global,
            max_input_tokens: self.max_input,
            local_radius: self.radius,
        }
    }
}

#[derive(Args, Debug, Clone)]
pub struct ModelArgs {
    #[arg(long, default_value_t = 64)]
    pub d_model: usize,
    #[arg(long, default_value_t = 2)]
    pub heads: usize,
    #[arg(long, default_value_t = 2)]
    pub enc_layers: usize,
    #[arg(long, default_value_t = 2)]
    pub dec_layers: usize,
    #[arg(long, default_value_t = 128)]
    pub d_ff: usize,
}

impl ModelArgs {
    pub fn config(&self) -> ModelConfig {
        ModelConfig {
            d_model: self.d_model,
            n_heads: self.heads,
            n_layers_enc: self.enc_layers,
            n_layers_dec: self.dec_layers,
            d_ff: self.d_ff,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ScheduleArg {
    Linear,
    Constant,
}

#[derive(Args, Debug, Clone)]
pub struct OptimArgs {
    /// Initial learning rate.
    #[arg(long, default_value = "5e-5")]
    pub lr: f64,
    #[arg(long, value_enum, default_value_t = ScheduleArg::Linear)]
    pub lr_schedule: ScheduleArg,
    #[arg(long, default_value_t = 20)]
    pub epochs: usize,
    #[arg(long, default_value_t = 4)]
    pub batch_size: usize,
    /// Drop tokens seen fewer times than this from the vocabulary.
    #[arg(long, default_value_t = 1)]
    pub min_freq: usize,
}

impl OptimArgs {
    pub fn config(&self, seed: u64) -> TrainConfig {
        TrainConfig {
            initial_lr: self.lr,
            epochs: self.epochs,
            lr_schedule: match self.lr_schedule {
                ScheduleArg::Linear => LrSchedule::Linear,
                ScheduleArg::Constant => LrSchedule::Constant,
            },
            seed,
            batch_size: self.batch_size,
            ..TrainConfig::default()
        }
    }
}

#[derive(Args, Debug, Clone)]
pub struct TrainArgs {
    /// Training corpus.
    #[arg(long)]
    pub train: PathBuf,
    /// Checkpoint to write.
    #[arg(long)]
    pub out: PathBuf,
    /// Train on one section's body instead of the whole note.
    #[arg(long)]
    pub section: Option<String>,
    #[arg(long)]
    pub seed: u64,
    #[command(flatten)]
    pub optim: OptimArgs,
    #[command(flatten)]
    pub model: ModelArgs,
    #[command(flatten)]
    pub lsg: LsgArgs,
    #[command(flatten)]
    pub corpus_opts: CorpusOpts,
}

#[derive(Args, Debug, Clone)]
pub struct PredictArgs {
    /// Checkpoint written by `train`.
    #[arg(long)]
    pub model: PathBuf,
    /// Corpus whose dialogues are summarized.
    #[arg(long)]
    pub input: PathBuf,
    /// Prediction file to write (JSON); standard output if omitted.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Decoding cap in tokens.
    #[arg(long, default_value_t = 128)]
    pub max_len: usize,
    /// Seed recorded in the prediction file; decoding itself is greedy.
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[command(flatten)]
    pub corpus_opts: CorpusOpts,
    #[command(flatten)]
    pub jobs: JobsOpt,
}

#[derive(Args, Debug, Clone)]
pub struct ScoreArgs {
    /// Prediction JSON, or CSV/JSONL with id and note columns.
    #[arg(long)]
    pub candidates: PathBuf,
    /// Reference CSV/JSONL with id and note columns.
    #[arg(long)]
    pub references: PathBuf,
    #[command(flatten)]
    pub corpus_opts: CorpusOpts,
    #[command(flatten)]
    pub aliases: AliasOpt,
    #[command(flatten)]
    pub tokens: TokenOpts,
    #[command(flatten)]
    pub output: OutputOpts,
    #[command(flatten)]
    pub jobs: JobsOpt,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ApproachArg {
    Single,
    SectionWise,
    MultiLayer,
    All,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum BackendArg {
    Oracle,
    Identity,
    Extractive,
    TinyLsg,
}

#[derive(Args, Debug, Clone)]
pub struct RunArgs {
    /// TOML file of flag values; flags given on the command line win.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long, value_enum, default_value_t = ApproachArg::All)]
    pub approach: ApproachArg,
    /// Training corpus.
    #[arg(long)]
    pub train: PathBuf,
    /// Evaluation corpus.
    #[arg(long, conflicts_with = "train_fraction")]
    pub eval: Option<PathBuf>,
    /// Instead of --eval, train on this fraction of --train and evaluate on the rest.
    #[arg(long)]
    pub train_fraction: Option<f64>,
    #[arg(long, value_enum, default_value_t = BackendArg::Extractive)]
    pub backend: BackendArg,
    /// Second-layer backend for multi-layer (default: same as --backend).
    #[arg(long, value_enum)]
    pub stage2: Option<BackendArg>,
    /// Sections with their own model: `auto` (all seen in training) or a comma list.
    #[arg(long, default_value = "auto")]
    pub sections: String,
    #[arg(long)]
    pub seed: u64,
    /// Sentences kept by the extractive backend.
    #[arg(long, default_value_t = 3)]
    pub k: usize,
    /// Sentences kept by an extractive stage 2 (default: --k).
    #[arg(long)]
    pub stage2_k: Option<usize>,
    /// Train stage 1 and stage 2 on disjoint halves of the training set.
    #[arg(long)]
    pub stage2_split: bool,
    /// Feed stage 2 bare section bodies without headers.
    #[arg(long)]
    pub no_stage2_headers: bool,
    /// Decoding cap in tokens.
    #[arg(long, default_value_t = 128)]
    pub max_len: usize,
    /// Write predictions, reports and logs per approach into this directory.
    #[arg(long)]
    pub out_dir: Option<PathBuf>,
    #[command(flatten)]
    pub optim: OptimArgs,
    #[command(flatten)]
    pub model: ModelArgs,
    #[command(flatten)]
    pub lsg: LsgArgs,
    #[command(flatten)]
    pub corpus_opts: CorpusOpts,
    #[command(flatten)]
    pub tokens: TokenOpts,
    #[command(flatten)]
    pub output: OutputOpts,
    #[command(flatten)]
    pub jobs: JobsOpt,
}

#[derive(Args, Debug, Clone)]
pub struct ReportArgs {
    /// Report JSON files written by `run --out-dir`.
    #[arg(long, num_args = 1.., conflicts_with = "predictions")]
    pub runs: Vec<PathBuf>,
    /// Prediction files to evaluate against --references.
    #[arg(long, num_args = 1.., requires = "references")]
    pub predictions: Vec<PathBuf>,
    /// Reference corpus for --predictions.
    #[arg(long)]
    pub references: Option<PathBuf>,
    #[command(flatten)]
    pub corpus_opts: CorpusOpts,
    #[command(flatten)]
    pub aliases: AliasOpt,
    #[command(flatten)]
    pub tokens: TokenOpts,
    #[command(flatten)]
    pub output: OutputOpts,
    #[command(flatten)]
    pub jobs: JobsOpt,
}

pub const GRADCHECK_SRC: &str = "the patient reports headache and fever for two days denies chest pain";
pub const GRADCHECK_TGT: &str = "headache fever two days plan rest";

#[derive(Args, Debug, Clone)]
pub struct GradCheckArgs {
    /// Seeds both the weights and the parameter sample.
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = 200)]
    pub samples: usize,
    #[arg(long, default_value = "1e-5")]
    pub epsilon: f64,
    /// Exit with status 2 if the max relative error reaches this.
    #[arg(long, default_value = "1e-4")]
    pub tolerance: f64,
    #[arg(long, default_value = GRADCHECK_SRC)]
    pub src: String,
    #[arg(long, default_value = GRADCHECK_TGT)]
    pub tgt: String,
    #[arg(long, default_value_t = 8)]
    pub d_model: usize,
    #[arg(long, default_value_t = 1)]
    pub heads: usize,
    #[arg(long, default_value_t = 1)]
    pub enc_layers: usize,
    #[arg(long, default_value_t = 1)]
    pub dec_layers: usize,
    #[arg(long, default_value_t = 16)]
    pub d_ff: usize,
    #[arg(long, default_value_t = 4)]
    pub block: usize,
    #[arg(long, default_value_t = 2)]
    pub stride: usize,
    #[arg(long, default_value_t = 1)]
    pub global: usize,
    /// Print every sampled parameter as well.
    #[arg(long)]
    pub verbose: bool,
}

#[derive(Args, Debug, Clone)]
pub struct MaskDumpArgs {
    /// Sequence length including global tokens.
    #[arg(long)]
    pub seq_len: usize,
    #[arg(long, default_value_t = 16)]
    pub block: usize,
    /// Sparse stride; 0 shows the local and global pattern only.
    #[arg(long, default_value_t = 0)]
    pub stride: usize,
    #[arg(long, default_value_t = 1)]
    pub global: usize,
    #[arg(long, default_value_t = 1)]
    pub radius: usize,
}
