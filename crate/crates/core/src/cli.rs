//! Command-line front end: `gen-data`, `train`, `eval`, `ground`, `sweep`, `ablate`.
//!
//! Exit codes: 0 success, 1 invalid input or configuration, 2 runtime failure.
//! Diagnostics go to stderr; data goes to stdout or `--out` files.

use std::fmt::Write as _;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::checkpoint::load_checkpoint;
use crate::data::{load_corpus, BoxCoords, Corpus, ImageExample, Manifest, PhraseRecord};
use crate::embeddings::{infer_dim, load_fixed_table, FixedEmbeddingTable};
use crate::error::{Error, Result};
use crate::evaluation::{ablation, evaluate_prepared, sweep_omega, EvalOptions, GtMode, ScoredCorpus};
use crate::model::{ModelParams, Precision};
use crate::phrase::{tokenize, Lexicon};
use crate::prediction::{ground, learned_scores, refine};
use crate::prepared::{prepare_image, PreparedCorpus};
use crate::synth::{generate, synthetic_embedding_table, GenConfig};
use crate::training::{init_params, train, OptimizerKind, TrainConfig};

#[derive(Debug, Parser)]
#[command(name = "priorground", version, about = "Weakly-supervised phrase grounding")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate synthetic train/val/test corpora.
    GenData(GenDataArgs),
    /// Train the visual and textual branches.
    Train(TrainArgs),
    /// Evaluate grounding accuracy and pointing accuracy.
    Eval(EvalArgs),
    /// Ground the phrases of one image and print the decisions.
    Ground(GroundArgs),
    /// Accuracy over a list of fusion weights.
    Sweep(SweepArgs),
    /// Component ablation table.
    Ablate(AblateArgs),
}

#[derive(Debug, Clone, Args)]
pub struct CommonArgs {
    /// JSON configuration file; flags override its values.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Word-embedding text file (defaults to the manifest's `embeddings` entry).
    #[arg(long)]
    pub embeddings: Option<PathBuf>,
    /// Embedding dimension; inferred from the file when omitted.
    #[arg(long)]
    pub embedding_dim: Option<usize>,
    /// Load at most this many embedding rows.
    #[arg(long)]
    pub max_vocab: Option<usize>,
    /// Locative lexicon and head stoplist (JSON).
    #[arg(long)]
    pub lexicon: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Worker threads; defaults to all cores.
    #[arg(long)]
    pub threads: Option<usize>,
}

#[derive(Debug, Clone, Copy, ValueEnum, PartialEq, Eq)]
pub enum GtModeArg {
    Union,
    AnyBox,
}

impl From<GtModeArg> for GtMode {
    fn from(g: GtModeArg) -> Self {
        match g {
            GtModeArg::Union => GtMode::Union,
            GtModeArg::AnyBox => GtMode::AnyBox,
        }
    }
}

#[derive(Debug, Clone, Copy, ValueEnum, PartialEq, Eq)]
pub enum PrecisionArg {
    F32,
    F64,
}

#[derive(Debug, Clone, Copy, ValueEnum, PartialEq, Eq)]
pub enum OptimizerArg {
    Sgd,
    Adam,
}

#[derive(Debug, Args)]
pub struct GenDataArgs {
    #[command(flatten)]
    pub common: CommonArgs,
    #[arg(long)]
    pub out_dir: PathBuf,
    #[arg(long)]
    pub n_images: Option<usize>,
    #[arg(long)]
    pub val_images: Option<usize>,
    #[arg(long)]
    pub test_images: Option<usize>,
    #[arg(long)]
    pub proposals_per_image: Option<usize>,
    #[arg(long)]
    pub phrases_per_image: Option<usize>,
    #[arg(long)]
    pub label_noise: Option<f64>,
    #[arg(long)]
    pub duplicate_rate: Option<f64>,
    #[arg(long)]
    pub feature_dim: Option<usize>,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[command(flatten)]
    pub common: CommonArgs,
    #[arg(long)]
    pub manifest: PathBuf,
    #[arg(long)]
    pub val_manifest: PathBuf,
    #[arg(long)]
    pub out_dir: PathBuf,
    #[arg(long)]
    pub omega: Option<f64>,
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub fraction: Option<f64>,
    #[arg(long, value_enum)]
    pub precision: Option<PrecisionArg>,
    #[arg(long, value_enum)]
    pub optimizer: Option<OptimizerArg>,
}

#[derive(Debug, Clone, Args)]
pub struct ScoringArgs {
    #[arg(long)]
    pub manifest: PathBuf,
    /// Trained checkpoint; without it only concept scores are used.
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
    #[arg(long)]
    pub omega: Option<f64>,
    /// Disable the relative-position mask on concept scores.
    #[arg(long)]
    pub no_spatial_mask: bool,
    #[arg(long, value_enum)]
    pub gt_mode: Option<GtModeArg>,
    /// Output file; stdout when omitted.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[command(flatten)]
    pub common: CommonArgs,
    #[command(flatten)]
    pub scoring: ScoringArgs,
}

#[derive(Debug, Args)]
pub struct GroundArgs {
    #[command(flatten)]
    pub common: CommonArgs,
    #[command(flatten)]
    pub scoring: ScoringArgs,
    /// Use concept scores only, ignoring any checkpoint.
    #[arg(long)]
    pub concept_only: bool,
    /// Image to ground; the first image of the corpus when omitted.
    #[arg(long)]
    pub image_id: Option<String>,
    /// Ground this text as a single phrase instead of the corpus sentences.
    #[arg(long)]
    pub sentence: Option<String>,
    /// Write an SVG of the proposals and chosen boxes.
    #[arg(long)]
    pub dump_overlay: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct SweepArgs {
    #[command(flatten)]
    pub common: CommonArgs,
    #[command(flatten)]
    pub scoring: ScoringArgs,
    /// Comma-separated fusion weights.
    #[arg(long, value_delimiter = ',', default_value = "0,0.1,0.2,0.3,0.4,0.5,0.6,0.7,0.8,0.9,1")]
    pub omegas: Vec<f64>,
}

#[derive(Debug, Args)]
pub struct AblateArgs {
    #[command(flatten)]
    pub common: CommonArgs,
    #[command(flatten)]
    pub scoring: ScoringArgs,
}

/// Values that may come from a `--config` file. Unknown keys are rejected.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub embeddings: Option<PathBuf>,
    pub embedding_dim: Option<usize>,
    pub max_vocab: Option<usize>,
    pub lexicon: Option<PathBuf>,
    pub seed: Option<u64>,
    pub threads: Option<usize>,
    pub omega: Option<f64>,
    pub spatial_mask: Option<bool>,
    pub gt_mode: Option<GtMode>,
    pub train: Option<TrainConfig>,
    pub generate: Option<GenConfig>,
}

impl RunConfig {
    fn load(path: Option<&Path>) -> Result<Self> {
        match path {
            None => Ok(RunConfig::default()),
            Some(p) => {
                let text = fs::read_to_string(p).map_err(|e| Error::io(p, e))?;
                serde_json::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", p.display())))
            }
        }
    }

    fn merge_common(&mut self, c: &CommonArgs) {
        if c.embeddings.is_some() {
            self.embeddings.clone_from(&c.embeddings);
        }
        self.embedding_dim = c.embedding_dim.or(self.embedding_dim);
        self.max_vocab = c.max_vocab.or(self.max_vocab);
        if c.lexicon.is_some() {
            self.lexicon.clone_from(&c.lexicon);
        }
        self.seed = c.seed.or(self.seed);
        self.threads = c.threads.or(self.threads);
    }

    fn merge_scoring(&mut self, s: &ScoringArgs) {
        self.omega = s.omega.or(self.omega);
        if s.no_spatial_mask {
            self.spatial_mask = Some(false);
        }
        self.gt_mode = s.gt_mode.map(GtMode::from).or(self.gt_mode);
    }

    fn eval_options(&self) -> Result<EvalOptions> {
        let o = EvalOptions {
            omega: self.omega.unwrap_or(EvalOptions::default().omega),
            spatial_mask: self.spatial_mask.unwrap_or(true),
            gt_mode: self.gt_mode.unwrap_or_default(),
        };
        crate::prediction::check_omega(o.omega)?;
        Ok(o)
    }
}

/// Parses `argv` (including the program name) and runs the command.
pub fn dispatch<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(cli) => cli,
        Err(e) => {
            use clap::error::ErrorKind;
            let code = match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => 0,
                _ => 1,
            };
            let _ = e.print();
            return code;
        }
    };
    match run(cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            if e.is_validation() {
                1
            } else {
                2
            }
        }
    }
}

fn setup_threads(threads: Option<usize>) -> Result<()> {
    if let Some(n) = threads {
        if n == 0 {
            return Err(Error::Config("--threads must be at least 1".into()));
        }
        // A pool may already exist when dispatch runs more than once in a process.
        let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    }
    Ok(())
}

fn load_lexicon(cfg: &RunConfig) -> Result<Lexicon> {
    match &cfg.lexicon {
        Some(p) => Lexicon::load(p),
        None => Ok(Lexicon::default()),
    }
}

fn load_embeddings(cfg: &RunConfig, manifest: Option<&Path>) -> Result<FixedEmbeddingTable> {
    let path = match (&cfg.embeddings, manifest) {
        (Some(p), _) => p.clone(),
        (None, Some(m)) => Manifest::read(m)?
            .embeddings
            .ok_or_else(|| Error::Config("no --embeddings given and the manifest names none".into()))?,
        (None, None) => return Err(Error::Config("--embeddings is required".into())),
    };
    let dim = match cfg.embedding_dim {
        Some(d) => d,
        None => infer_dim(&path)?,
    };
    load_fixed_table(&path, dim, cfg.max_vocab)
}

fn write_output(out: Option<&Path>, text: &str) -> Result<()> {
    match out {
        Some(p) => {
            if let Some(dir) = p.parent().filter(|d| !d.as_os_str().is_empty()) {
                fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
            }
            fs::write(p, text).map_err(|e| Error::io(p, e))
        }
        None => {
            let mut stdout = std::io::stdout().lock();
            stdout
                .write_all(text.as_bytes())
                .and_then(|_| stdout.flush())
                .map_err(|e| Error::io("<stdout>", e))
        }
    }
}

fn write_json(path: &Path, value: &impl Serialize) -> Result<()> {
    let text = serde_json::to_string_pretty(value).expect("serializable") + "\n";
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::GenData(a) => run_gen_data(a),
        Command::Train(a) => run_train(a),
        Command::Eval(a) => run_eval(a),
        Command::Ground(a) => run_ground(a),
        Command::Sweep(a) => run_sweep(a),
        Command::Ablate(a) => run_ablate(a),
    }
}

fn run_gen_data(a: GenDataArgs) -> Result<()> {
    let mut cfg = RunConfig::load(a.common.config.as_deref())?;
    cfg.merge_common(&a.common);
    setup_threads(cfg.threads)?;
    let mut gen = cfg.generate.clone().unwrap_or_default();
    macro_rules! take {
        ($($f:ident),*) => { $( if let Some(v) = a.$f { gen.$f = v; } )* };
    }
    take!(n_images, val_images, test_images, proposals_per_image, phrases_per_image, label_noise, duplicate_rate, feature_dim);
    if let Some(s) = cfg.seed {
        gen.seed = s;
    }

    fs::create_dir_all(&a.out_dir).map_err(|e| Error::io(&a.out_dir, e))?;
    let (fixed, emb_path) = match &cfg.embeddings {
        Some(p) => (load_embeddings(&cfg, None)?, fs::canonicalize(p).map_err(|e| Error::io(p, e))?),
        None => {
            let dim = cfg.embedding_dim.unwrap_or(32);
            let table = synthetic_embedding_table(&gen.concepts, dim, gen.seed);
            let p = a.out_dir.join("embeddings.txt");
            table.write(&p)?;
            (table, PathBuf::from("embeddings.txt"))
        }
    };
    let (train_c, val_c, test_c) = generate(&gen, &fixed)?;
    let mut manifests = Vec::new();
    for (corpus, stem) in [(&train_c, "train"), (&val_c, "val"), (&test_c, "test")] {
        manifests.push(crate::data::save_corpus(corpus, &a.out_dir, stem, Some(&emb_path))?);
    }
    write_json(&a.out_dir.join("gen_config.json"), &gen)?;
    for m in manifests {
        println!("{}", m.display());
    }
    Ok(())
}

fn run_train(a: TrainArgs) -> Result<()> {
    let mut cfg = RunConfig::load(a.common.config.as_deref())?;
    cfg.merge_common(&a.common);
    setup_threads(cfg.threads)?;
    let mut tc = cfg.train.clone().unwrap_or_default();
    if let Some(v) = a.omega.or(cfg.omega) {
        tc.omega = v;
    }
    if let Some(v) = a.lr {
        tc.learning_rate = v;
    }
    if let Some(v) = a.epochs {
        tc.epochs = v;
    }
    if let Some(v) = a.batch_size {
        tc.batch_size = v;
    }
    if let Some(v) = a.fraction {
        tc.fraction = v;
    }
    if let Some(v) = cfg.seed {
        tc.seed = v;
    }
    if let Some(p) = a.precision {
        tc.precision = match p {
            PrecisionArg::F32 => Precision::F32,
            PrecisionArg::F64 => Precision::F64,
        };
    }
    if let Some(o) = a.optimizer {
        tc.optimizer = match o {
            OptimizerArg::Sgd => OptimizerKind::Sgd,
            OptimizerArg::Adam => OptimizerKind::Adam,
        };
    }
    if let Some(m) = cfg.spatial_mask {
        tc.spatial_mask = m;
    }
    if let Some(g) = cfg.gt_mode {
        tc.gt_mode = g;
    }
    tc.validate()?;

    let lexicon = load_lexicon(&cfg)?;
    let fixed = load_embeddings(&cfg, Some(&a.manifest))?;
    let train_c = load_corpus(&a.manifest)?;
    let val_c = load_corpus(&a.val_manifest)?;
    fs::create_dir_all(&a.out_dir).map_err(|e| Error::io(&a.out_dir, e))?;
    cfg.train = Some(tc.clone());
    write_json(&a.out_dir.join("run_config.json"), &cfg)?;

    let init = init_params(&[&train_c, &val_c], &fixed, &tc)?;
    let outcome = train(&train_c, &val_c, &fixed, &lexicon, &tc, init, Some(&a.out_dir))?;
    for e in &outcome.log {
        eprintln!(
            "epoch {:>3}  loss {:+.6}  val acc {:.4}  val pointing {:.4}",
            e.epoch, e.mean_loss, e.val_accuracy, e.val_pointing_accuracy
        );
    }
    let summary = json!({
        "best_epoch": outcome.best_epoch,
        "best_val_accuracy": outcome.best_val_accuracy,
        "checkpoint": outcome.checkpoint,
        "log": a.out_dir.join("train_log.jsonl"),
    });
    println!("{}", serde_json::to_string_pretty(&summary).expect("json"));
    Ok(())
}

struct Scoring {
    cfg: RunConfig,
    corpus: Corpus,
    fixed: FixedEmbeddingTable,
    lexicon: Lexicon,
    params: Option<ModelParams>,
    checkpoint: Option<String>,
}

fn load_scoring(common: &CommonArgs, s: &ScoringArgs, use_checkpoint: bool) -> Result<Scoring> {
    let mut cfg = RunConfig::load(common.config.as_deref())?;
    cfg.merge_common(common);
    cfg.merge_scoring(s);
    setup_threads(cfg.threads)?;
    cfg.eval_options()?;
    let lexicon = load_lexicon(&cfg)?;
    let fixed = load_embeddings(&cfg, Some(&s.manifest))?;
    let corpus = load_corpus(&s.manifest)?;
    let (params, checkpoint) = match (&s.checkpoint, use_checkpoint) {
        (Some(p), true) => {
            let (_, params) = load_checkpoint(p)?;
            if params.v() != corpus.feature_dim {
                return Err(Error::Config(format!(
                    "checkpoint expects {}-dim features, corpus has {}",
                    params.v(),
                    corpus.feature_dim
                )));
            }
            (Some(params), Some(p.display().to_string()))
        }
        _ => (None, None),
    };
    Ok(Scoring {
        cfg,
        corpus,
        fixed,
        lexicon,
        params,
        checkpoint,
    })
}

fn require_params(s: &Scoring, what: &str) -> Result<()> {
    if s.params.is_none() {
        return Err(Error::Config(format!("{what} needs --checkpoint")));
    }
    Ok(())
}

fn run_eval(a: EvalArgs) -> Result<()> {
    let s = load_scoring(&a.common, &a.scoring, true)?;
    let options = s.cfg.eval_options()?;
    let prepared = PreparedCorpus::new(&s.corpus, &s.fixed, &s.lexicon)?;
    let mut report = evaluate_prepared(&prepared, s.params.as_ref(), &options)?;
    report.checkpoint = s.checkpoint.clone();
    let out = json!({ "config": s.cfg, "report": report });
    write_output(a.scoring.out.as_deref(), &(serde_json::to_string_pretty(&out).expect("json") + "\n"))?;
    eprintln!(
        "accuracy {:.4} ({}/{})  pointing {:.4}  unscored {}  omega {}  mask {}",
        report.accuracy,
        report.hits,
        report.scored,
        report.pointing_accuracy,
        report.unscored,
        report.omega,
        report.spatial_mask
    );
    Ok(())
}

fn csv_with_echo(out: Option<&Path>, cfg: &RunConfig, csv: &str) -> Result<()> {
    write_output(out, csv)?;
    if let Some(p) = out {
        let mut echo = p.as_os_str().to_owned();
        echo.push(".config.json");
        write_json(Path::new(&echo), cfg)?;
    }
    Ok(())
}

fn run_sweep(a: SweepArgs) -> Result<()> {
    let s = load_scoring(&a.common, &a.scoring, true)?;
    let options = s.cfg.eval_options()?;
    if a.omegas.iter().any(|&w| w > 0.0) {
        require_params(&s, "a sweep over omega > 0")?;
    }
    let prepared = PreparedCorpus::new(&s.corpus, &s.fixed, &s.lexicon)?;
    let scored = ScoredCorpus::new(&prepared, s.params.as_ref())?;
    let rows = sweep_omega(&scored, &a.omegas, options.spatial_mask, options.gt_mode)?;
    let mut csv = String::from("omega,accuracy,pointing_accuracy\n");
    for r in rows {
        writeln!(csv, "{},{},{}", r.omega, r.accuracy, r.pointing_accuracy).expect("string write");
    }
    csv_with_echo(a.scoring.out.as_deref(), &s.cfg, &csv)
}

fn run_ablate(a: AblateArgs) -> Result<()> {
    let s = load_scoring(&a.common, &a.scoring, true)?;
    require_params(&s, "ablation")?;
    let options = s.cfg.eval_options()?;
    let prepared = PreparedCorpus::new(&s.corpus, &s.fixed, &s.lexicon)?;
    let scored = ScoredCorpus::new(&prepared, s.params.as_ref())?;
    let rows = ablation(&scored, options.omega, options.gt_mode)?;
    let mut csv = String::from("concept,trained,relative_position,omega,accuracy,pointing_accuracy\n");
    for r in rows {
        writeln!(
            csv,
            "{},{},{},{},{},{}",
            r.concept, r.trained, r.position, r.omega, r.accuracy, r.pointing_accuracy
        )
        .expect("string write");
    }
    csv_with_echo(a.scoring.out.as_deref(), &s.cfg, &csv)
}

fn sentence_phrase(text: &str) -> Result<PhraseRecord> {
    let tokens = tokenize(text);
    if tokens.is_empty() {
        return Err(Error::Argument("--sentence has no tokens".into()));
    }
    Ok(PhraseRecord {
        first_char: 0,
        last_char: text.chars().count(),
        tokens,
        head: None,
        gt_boxes: None,
    })
}

fn run_ground(a: GroundArgs) -> Result<()> {
    let s = load_scoring(&a.common, &a.scoring, !a.concept_only)?;
    let mut options = s.cfg.eval_options()?;
    if s.params.is_none() {
        options.omega = 0.0;
    }
    let image: &ImageExample = match &a.image_id {
        Some(id) => s
            .corpus
            .examples
            .iter()
            .find(|e| &e.image_id == id)
            .ok_or_else(|| Error::Argument(format!("image {id:?} not in corpus")))?,
        None => &s.corpus.examples[0],
    };
    let sentences: Vec<(String, Vec<PhraseRecord>)> = match &a.sentence {
        Some(text) => vec![(text.clone(), vec![sentence_phrase(text)?])],
        None => image
            .sentences
            .iter()
            .map(|st| (st.text.clone(), st.phrases.clone()))
            .collect(),
    };

    let prepared = prepare_image(image, &s.fixed)?;
    let visual = match &s.params {
        Some(p) => Some(p.visual_forward(&image.proposals, &prepared.spatials)?.0),
        None => None,
    };
    let mut results = Vec::new();
    let mut chosen_boxes: Vec<(BoxCoords, String)> = Vec::new();
    for (text, phrases) in &sentences {
        let analyzed = phrases
            .iter()
            .map(|p| s.lexicon.analyze(&p.tokens, p.head.as_deref()))
            .collect::<Result<Vec<_>>>()?;
        let concept = crate::concept::concept_scores(
            &analyzed,
            &image.proposals,
            &prepared.relations,
            &s.fixed,
            options.spatial_mask,
        );
        let learned = match (&s.params, &visual) {
            (Some(p), Some(v)) => {
                let tokens: Vec<&[String]> = analyzed.iter().map(|a| a.tokens.as_slice()).collect();
                learned_scores(v, &p.textual_forward_all(&tokens)?.0)?
            }
            _ => crate::linalg::Matrix::zeros(analyzed.len(), image.proposals.len()),
        };
        let refined = refine(&learned, &concept, options.omega)?;
        for (j, (rec, an)) in phrases.iter().zip(&analyzed).enumerate() {
            let k = ground(&refined, j)?;
            let span = crate::data::char_slice(text, rec.first_char, rec.last_char).unwrap_or(text);
            chosen_boxes.push((image.proposals[k].bbox, span.to_string()));
            results.push(json!({
                "sentence": text,
                "phrase": span,
                "head": an.head,
                "proposal": k,
                "label": image.proposals[k].label,
                "box": image.proposals[k].bbox,
                "score": refined.matrix.get(j, k),
                "concept_score": concept.matrix().get(j, k),
                "learned_score": s.params.as_ref().map(|_| learned.get(j, k)),
            }));
        }
    }
    let out = json!({
        "image_id": image.image_id,
        "omega": options.omega,
        "spatial_mask": options.spatial_mask,
        "checkpoint": s.checkpoint,
        "phrases": results,
    });
    write_output(a.scoring.out.as_deref(), &(serde_json::to_string_pretty(&out).expect("json") + "\n"))?;
    if let Some(p) = &a.dump_overlay {
        fs::write(p, overlay_svg(image, &chosen_boxes)).map_err(|e| Error::io(p, e))?;
    }
    Ok(())
}

fn xml_escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;").replace('"', "&quot;")
}

/// Proposals in grey, chosen boxes in red with their phrase, on a blank canvas.
pub fn overlay_svg(image: &ImageExample, chosen: &[(BoxCoords, String)]) -> String {
    let mut svg = format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{w}\" height=\"{h}\" viewBox=\"0 0 {w} {h}\">\n\
         <rect x=\"0\" y=\"0\" width=\"{w}\" height=\"{h}\" fill=\"white\" stroke=\"black\"/>\n",
        w = image.width,
        h = image.height
    );
    let rect = |b: &BoxCoords, style: &str| {
        format!(
            "<rect x=\"{}\" y=\"{}\" width=\"{}\" height=\"{}\" {style}/>\n",
            b.x1,
            b.y1,
            b.width(),
            b.height()
        )
    };
    for p in &image.proposals {
        svg.push_str(&rect(&p.bbox, "fill=\"none\" stroke=\"grey\" stroke-dasharray=\"2\""));
        let _ = writeln!(
            svg,
            "<text x=\"{}\" y=\"{}\" font-size=\"4\" fill=\"grey\">{}</text>",
            p.bbox.x1,
            p.bbox.y2,
            xml_escape(&p.label)
        );
    }
    for (b, label) in chosen {
        svg.push_str(&rect(b, "fill=\"none\" stroke=\"red\" stroke-width=\"1\""));
        let _ = writeln!(
            svg,
            "<text x=\"{}\" y=\"{}\" font-size=\"4\" fill=\"red\">{}</text>",
            b.x1,
            b.y1 + 4.0,
            xml_escape(label)
        );
    }
    svg.push_str("</svg>\n");
    svg
}
