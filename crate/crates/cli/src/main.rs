//! `dtseg`: segment, evaluate, mine pairs, train a projection head, and run
//! baselines over dialogue corpora.
//!
//! Exit codes: 0 success, 2 usage or input error, 3 no trainable pairs.

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{anyhow, bail, Context};
use clap::{Args, Parser, Subcommand, ValueEnum};
use rayon::prelude::*;
use serde_json::json;

use dtseg_core::dataio::{
    format_hypotheses, format_pairs, load_coherence_cache, load_corpus, load_embedding_cache, load_head,
    load_hypotheses, load_rewrites, pair_records, write_head, write_report, CorpusFormat, HypothesisRecord,
    RelevanceRecord, ReportRow,
};
use dtseg_core::metrics::macro_average;
use dtseg_core::ncum::{
    mine_pairs, pseudo_segment, refine_loop, NcumError, ProjectedEmbeddings, ProjectionHead, TrainParams,
};
use dtseg_core::rewrite::apply_map_all;
use dtseg_core::scoring::{
    CachedCoherence, CachedEmbeddings, CoherenceProvider, EmbeddingProvider, HashingEmbeddings, ScoringError,
    ZeroCoherence,
};
use dtseg_core::{segment_corpus, Algorithm, Dialogue, EmbeddingMatrix, RunConfig, ThresholdPolicy};

#[derive(Parser)]
#[command(name = "dtseg", version, about = "Unsupervised dialogue topic segmentation")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Predict topic boundaries for every dialogue in a corpus.
    Segment(SegmentArgs),
    /// Score a hypothesis file against the corpus gold boundaries.
    Eval(EvalArgs),
    /// Export neighbor/segment pairs mined from a pseudo-segmentation.
    Mine(MineArgs),
    /// Train a projection head with the margin ranking objective.
    Train(TrainArgs),
    /// Run the random or greedy baseline and report its scores.
    Baseline(BaselineArgs),
}

#[derive(Clone, Copy, ValueEnum)]
enum FormatArg {
    Plain,
    Structured,
}

impl From<FormatArg> for CorpusFormat {
    fn from(f: FormatArg) -> Self {
        match f {
            FormatArg::Plain => CorpusFormat::Plain,
            FormatArg::Structured => CorpusFormat::Structured,
        }
    }
}

#[derive(Clone, Copy, PartialEq, ValueEnum)]
enum AlgoArg {
    Texttiling,
    Greedy,
    Random,
}

#[derive(Clone, Copy, PartialEq, ValueEnum)]
enum BaselineAlgo {
    Random,
    Greedy,
}

#[derive(Args)]
struct CorpusArgs {
    #[arg(long)]
    corpus: PathBuf,
    #[arg(long, value_enum, default_value = "plain")]
    format: FormatArg,
}

#[derive(Args)]
struct EmbeddingArgs {
    /// DTSE embedding cache keyed by dialogue id.
    #[arg(long, conflicts_with = "hash_dim")]
    embeddings: Option<PathBuf>,
    /// Embed the (rewritten) text with feature hashing instead of a cache.
    #[arg(long)]
    hash_dim: Option<usize>,
    /// DTSH projection head applied to every embedding.
    #[arg(long)]
    head: Option<PathBuf>,
}

#[derive(Args)]
struct TilingArgs {
    /// Neighbor half-window for pair mining.
    #[arg(long, default_value_t = dtseg_core::types::DEFAULT_WINDOW)]
    w: usize,
    /// Moving-average width over the relevance series (odd; 1 disables).
    #[arg(long, default_value_t = 1)]
    smooth: usize,
    /// `auto` (mean minus half a standard deviation) or a fixed depth cutoff.
    #[arg(long, default_value = "auto", value_parser = parse_threshold)]
    threshold: ThresholdPolicy,
    /// Weight on the coherence term.
    #[arg(long = "lambda", default_value_t = 1.0)]
    lambda: f64,
    #[arg(long)]
    min_seg_len: Option<usize>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

impl TilingArgs {
    fn config(&self) -> RunConfig {
        RunConfig {
            w: self.w,
            smoothing_width: self.smooth,
            threshold_policy: self.threshold,
            coherence_weight: self.lambda,
            min_seg_len: self.min_seg_len,
            seed: self.seed,
            ..RunConfig::default()
        }
    }
}

#[derive(Args)]
struct SegmentArgs {
    #[command(flatten)]
    corpus: CorpusArgs,
    #[command(flatten)]
    embed: EmbeddingArgs,
    /// DTSC coherence cache; coherence is zero without it.
    #[arg(long)]
    coherence: Option<PathBuf>,
    #[arg(long)]
    rewrites: Option<PathBuf>,
    /// Require a rewrite for every utterance.
    #[arg(long, requires = "rewrites")]
    strict_rewrites: bool,
    #[arg(long, value_enum, default_value = "texttiling")]
    algo: AlgoArg,
    /// Greedy cutoff on adjacent cosine; defaults to the dialogue mean.
    #[arg(long, allow_hyphen_values = true)]
    tau: Option<f64>,
    #[command(flatten)]
    tiling: TilingArgs,
    /// Write per-gap relevance scores here (TextTiling only).
    #[arg(long)]
    dump_relevance: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct EvalArgs {
    #[command(flatten)]
    corpus: CorpusArgs,
    #[arg(long)]
    hypothesis: PathBuf,
    /// Metric window; defaults to half the mean gold segment length.
    #[arg(long)]
    k: Option<usize>,
    /// Method label in the report; defaults to the hypothesis file stem.
    #[arg(long)]
    method: Option<String>,
    /// Corpus label in the report; defaults to the corpus file stem.
    #[arg(long)]
    name: Option<String>,
    /// Report table path; a `.jsonl` record file is written beside it.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct MineArgs {
    #[command(flatten)]
    corpus: CorpusArgs,
    #[command(flatten)]
    embed: EmbeddingArgs,
    #[command(flatten)]
    tiling: TilingArgs,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct TrainArgs {
    #[command(flatten)]
    corpus: CorpusArgs,
    #[arg(long)]
    embeddings: Option<PathBuf>,
    #[arg(long)]
    hash_dim: Option<usize>,
    #[arg(long, default_value_t = 3)]
    rounds: usize,
    #[arg(long, default_value_t = 5)]
    epochs: usize,
    #[arg(long, default_value_t = 0.05)]
    lr: f64,
    #[arg(long, default_value_t = 1.0)]
    margin: f64,
    #[arg(long, default_value_t = 5)]
    max_negatives: usize,
    #[command(flatten)]
    tiling: TilingArgs,
    /// DTSH head output.
    #[arg(long)]
    out: PathBuf,
    /// Per-round loss log; defaults to the head path plus `.loss.jsonl`.
    #[arg(long)]
    loss_log: Option<PathBuf>,
}

#[derive(Args)]
struct BaselineArgs {
    #[command(flatten)]
    corpus: CorpusArgs,
    #[arg(long, value_enum)]
    algo: BaselineAlgo,
    #[command(flatten)]
    embed: EmbeddingArgs,
    #[arg(long, allow_hyphen_values = true)]
    tau: Option<f64>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Hypothesis output.
    #[arg(long)]
    out: PathBuf,
    /// Report table path; requires gold boundaries in the corpus.
    #[arg(long)]
    report: Option<PathBuf>,
    #[arg(long)]
    name: Option<String>,
}

fn parse_threshold(s: &str) -> Result<ThresholdPolicy, String> {
    if s == "auto" {
        return Ok(ThresholdPolicy::MeanMinusHalfSigma);
    }
    match s.parse::<f64>() {
        Ok(v) if v.is_finite() => Ok(ThresholdPolicy::Fixed(v)),
        _ => Err(format!("expected `auto` or a finite number, got `{s}`")),
    }
}

struct Failure {
    code: u8,
    error: anyhow::Error,
}

impl<E: Into<anyhow::Error>> From<E> for Failure {
    fn from(e: E) -> Self {
        Failure {
            code: 2,
            error: e.into(),
        }
    }
}

type Outcome = Result<(), Failure>;

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Segment(a) => cmd_segment(a),
        Command::Eval(a) => cmd_eval(a),
        Command::Mine(a) => cmd_mine(a),
        Command::Train(a) => cmd_train(a),
        Command::Baseline(a) => cmd_baseline(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {:#}", f.error);
            ExitCode::from(f.code)
        }
    }
}

fn load_dialogues(args: &CorpusArgs) -> anyhow::Result<Vec<Dialogue>> {
    let corpus = load_corpus(&args.corpus, args.format.into())?;
    if corpus.is_empty() {
        bail!("{}: corpus has no dialogues", args.corpus.display());
    }
    Ok(corpus.dialogues)
}

fn stem(path: &Path) -> String {
    path.file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default()
}

fn write(path: &Path, contents: &str) -> anyhow::Result<()> {
    fs::write(path, contents).with_context(|| format!("writing {}", path.display()))
}

fn jsonl<T: serde::Serialize>(items: &[T]) -> String {
    items
        .iter()
        .map(|r| serde_json::to_string(r).expect("record serializes") + "\n")
        .collect()
}

/// Embedding source chosen on the command line, optionally behind a head.
fn embedding_provider(
    embeddings: Option<&Path>,
    hash_dim: Option<usize>,
    head: Option<&Path>,
) -> anyhow::Result<Option<Box<dyn EmbeddingProvider>>> {
    let base: Box<dyn EmbeddingProvider> = match (embeddings, hash_dim) {
        (Some(path), _) => Box::new(CachedEmbeddings::new(load_embedding_cache(path)?)),
        (None, Some(0)) => bail!("--hash-dim must be positive"),
        (None, Some(d)) => Box::new(HashingEmbeddings::new(d)),
        (None, None) => {
            if head.is_some() {
                bail!("--head needs --embeddings or --hash-dim");
            }
            return Ok(None);
        }
    };
    let Some(head) = head else { return Ok(Some(base)) };
    Ok(Some(Box::new(Headed {
        inner: base,
        head: load_head(head)?,
    })))
}

/// Owning counterpart of `ProjectedEmbeddings` for a boxed provider.
struct Headed {
    inner: Box<dyn EmbeddingProvider>,
    head: ProjectionHead,
}

impl EmbeddingProvider for Headed {
    fn embed(&self, dialogue: &Dialogue) -> Result<EmbeddingMatrix, ScoringError> {
        ProjectedEmbeddings {
            inner: self.inner.as_ref(),
            head: &self.head,
        }
        .embed(dialogue)
    }
}

fn check_ids(dialogues: &[Dialogue], provider: &dyn EmbeddingProvider) -> anyhow::Result<()> {
    dialogues
        .par_iter()
        .try_for_each(|d| provider.embed(d).map(drop))
        .map_err(|e| anyhow!("embedding source: {e}"))
}

fn cmd_segment(a: SegmentArgs) -> Outcome {
    let mut dialogues = load_dialogues(&a.corpus)?;
    if let Some(path) = &a.rewrites {
        let map = load_rewrites(path)?;
        map.check_against(&dialogues)?;
        dialogues = apply_map_all(dialogues, &map, a.strict_rewrites)?;
    }
    let algo = match a.algo {
        AlgoArg::Texttiling => Algorithm::TextTiling,
        AlgoArg::Greedy => Algorithm::Greedy { tau: a.tau },
        AlgoArg::Random => Algorithm::Random,
    };
    let provider = embedding_provider(a.embed.embeddings.as_deref(), a.embed.hash_dim, a.embed.head.as_deref())?;
    if algo.needs_embeddings() && provider.is_none() {
        return Err(anyhow!("--algo {} requires --embeddings PATH or --hash-dim N", algo.name()).into());
    }
    let coherence: Box<dyn CoherenceProvider> = match &a.coherence {
        Some(path) => Box::new(CachedCoherence::new(load_coherence_cache(path)?)),
        None => Box::new(ZeroCoherence),
    };
    let cfg = a.tiling.config();
    let outputs = segment_corpus(&dialogues, provider.as_deref(), coherence.as_ref(), &cfg, algo)?;
    let records: Vec<HypothesisRecord> = outputs
        .iter()
        .map(|o| HypothesisRecord::new(o.id.clone(), &o.segmentation))
        .collect();
    write(&a.out, &format_hypotheses(&records))?;
    if let Some(path) = &a.dump_relevance {
        let dump: Vec<RelevanceRecord> = outputs
            .iter()
            .filter_map(|o| {
                o.relevance.as_ref().map(|r| RelevanceRecord {
                    id: o.id.clone(),
                    scores: r.series.scores().to_vec(),
                    zero_norm_gaps: r.zero_norm_gaps.clone(),
                })
            })
            .collect();
        write(path, &jsonl(&dump))?;
    }
    log::info!("segmented {} dialogues with {}", records.len(), algo.name());
    Ok(())
}

fn score(dialogues: &[Dialogue], hypotheses: &[HypothesisRecord], k: Option<usize>) -> anyhow::Result<(f64, f64)> {
    let gold: BTreeMap<&str, &Dialogue> = dialogues.iter().map(|d| (d.id.as_str(), d)).collect();
    let hyp_ids: BTreeSet<&str> = hypotheses.iter().map(|h| h.id.as_str()).collect();
    if let Some(missing) = gold.keys().find(|id| !hyp_ids.contains(*id)) {
        bail!("hypothesis has no record for dialogue `{missing}`");
    }
    if let Some(extra) = hyp_ids.iter().find(|id| !gold.contains_key(*id)) {
        bail!("hypothesis dialogue `{extra}` is not in the corpus");
    }
    let mut hypotheses: Vec<&HypothesisRecord> = hypotheses.iter().collect();
    hypotheses.sort_by(|a, b| a.id.cmp(&b.id));
    let mut pairs = Vec::with_capacity(hypotheses.len());
    for h in hypotheses {
        let d = gold[h.id.as_str()];
        let reference = d
            .gold
            .as_ref()
            .ok_or_else(|| anyhow!("dialogue `{}` has no gold boundaries", d.id))?;
        let hyp = h.segmentation()?;
        if hyp.n() != reference.n() {
            bail!(
                "dialogue `{}`: hypothesis has n={} but corpus has n={}",
                d.id,
                hyp.n(),
                reference.n()
            );
        }
        pairs.push((reference.clone(), hyp));
    }
    let scores = macro_average(pairs.iter().map(|(r, h)| (r, h)), k)?;
    Ok((scores.pk, scores.wd))
}

fn report(rows: &[ReportRow], out: Option<&Path>) -> anyhow::Result<()> {
    print!("{}", dtseg_core::dataio::format_table(rows)?);
    if let Some(path) = out {
        write_report(rows, path)?;
    }
    Ok(())
}

fn cmd_eval(a: EvalArgs) -> Outcome {
    let dialogues = load_dialogues(&a.corpus)?;
    let hypotheses = load_hypotheses(&a.hypothesis)?;
    let (pk, wd) = score(&dialogues, &hypotheses, a.k)?;
    let row = ReportRow {
        method: a.method.unwrap_or_else(|| stem(&a.hypothesis)),
        corpus: a.name.unwrap_or_else(|| stem(&a.corpus.corpus)),
        dialogues: dialogues.len(),
        pk,
        wd,
    };
    report(&[row], a.out.as_deref())?;
    Ok(())
}

fn required_provider(embed: &EmbeddingArgs) -> anyhow::Result<Box<dyn EmbeddingProvider>> {
    embedding_provider(embed.embeddings.as_deref(), embed.hash_dim, embed.head.as_deref())?
        .ok_or_else(|| anyhow!("--embeddings PATH or --hash-dim N is required"))
}

fn cmd_mine(a: MineArgs) -> Outcome {
    let cfg = a.tiling.config();
    cfg.validate()?;
    let dialogues = load_dialogues(&a.corpus)?;
    let provider = required_provider(&a.embed)?;
    let mut mined = dialogues
        .par_iter()
        .map(|d| {
            let e = provider.embed(d).map_err(|e| anyhow!("dialogue `{}`: {e}", d.id))?;
            let pseudo = pseudo_segment(&e, &cfg)?;
            let pairs = mine_pairs(d.len(), cfg.w, &pseudo)?;
            Ok((d.id.clone(), pairs))
        })
        .collect::<anyhow::Result<Vec<_>>>()?;
    mined.sort_by(|a, b| a.0.cmp(&b.0));
    let records: Vec<_> = mined.iter().flat_map(|(id, p)| pair_records(id, p)).collect();
    write(&a.out, &format_pairs(&records))?;
    let positives: usize = mined.iter().map(|(_, p)| p.positives.len()).sum();
    let negatives: usize = mined.iter().map(|(_, p)| p.negatives.len()).sum();
    let summary = json!({
        "corpus": stem(&a.corpus.corpus),
        "dialogues": mined.len(),
        "w": cfg.w,
        "positives": positives,
        "negatives": negatives,
    });
    println!("{summary}");
    Ok(())
}

fn cmd_train(a: TrainArgs) -> Outcome {
    let cfg = RunConfig {
        margin: a.margin,
        ..a.tiling.config()
    };
    cfg.validate()?;
    if !(a.lr.is_finite() && a.lr >= 0.0) {
        return Err(anyhow!("--lr must be a non-negative number").into());
    }
    let dialogues = load_dialogues(&a.corpus)?;
    let provider = embedding_provider(a.embeddings.as_deref(), a.hash_dim, None)?
        .ok_or_else(|| anyhow!("--embeddings PATH or --hash-dim N is required"))?;
    check_ids(&dialogues, provider.as_ref())?;
    let params = TrainParams {
        epochs: a.epochs,
        lr: a.lr,
        max_negatives: a.max_negatives,
    };
    let outcome = match refine_loop(&dialogues, provider.as_ref(), &cfg, &params, a.rounds) {
        Ok(o) => o,
        Err(NcumError::NoTrainablePairs) => {
            return Err(Failure {
                code: 3,
                error: anyhow!("no trainable pairs: every round mined zero positive/negative triples"),
            })
        }
        Err(e) => return Err(e.into()),
    };
    write_head(&a.out, &outcome.head)?;
    let log_lines: Vec<_> = outcome
        .rounds
        .iter()
        .map(|r| {
            let t = r.training.as_ref();
            json!({
                "round": r.round,
                "positives": r.positives,
                "negatives": r.negatives,
                "triples": t.map_or(0, |t| t.triples),
                "initial_loss": t.map(|t| t.initial_loss),
                "epoch_losses": t.map(|t| t.epoch_losses.clone()),
            })
        })
        .collect();
    let log_path = a.loss_log.unwrap_or_else(|| {
        let mut p = a.out.clone().into_os_string();
        p.push(".loss.jsonl");
        PathBuf::from(p)
    });
    write(&log_path, &jsonl(&log_lines))?;
    Ok(())
}

fn cmd_baseline(a: BaselineArgs) -> Outcome {
    let dialogues = load_dialogues(&a.corpus)?;
    let algo = match a.algo {
        BaselineAlgo::Random => Algorithm::Random,
        BaselineAlgo::Greedy => Algorithm::Greedy { tau: a.tau },
    };
    let provider = embedding_provider(a.embed.embeddings.as_deref(), a.embed.hash_dim, a.embed.head.as_deref())?;
    if algo.needs_embeddings() && provider.is_none() {
        return Err(anyhow!("--algo {} requires --embeddings PATH or --hash-dim N", algo.name()).into());
    }
    let cfg = RunConfig {
        seed: a.seed,
        ..RunConfig::default()
    };
    let outputs = segment_corpus(&dialogues, provider.as_deref(), &ZeroCoherence, &cfg, algo)?;
    let records: Vec<HypothesisRecord> = outputs
        .iter()
        .map(|o| HypothesisRecord::new(o.id.clone(), &o.segmentation))
        .collect();
    write(&a.out, &format_hypotheses(&records))?;
    if let Some(path) = &a.report {
        let (pk, wd) = score(&dialogues, &records, None)?;
        let row = ReportRow {
            method: algo.name().to_string(),
            corpus: a.name.unwrap_or_else(|| stem(&a.corpus.corpus)),
            dialogues: dialogues.len(),
            pk,
            wd,
        };
        report(&[row], Some(path))?;
    }
    Ok(())
}
