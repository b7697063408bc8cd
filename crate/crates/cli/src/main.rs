//! Command-line front end: corpus preparation, training, evaluation,
//! inference and synthetic corpus generation.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use log::info;
use serde_json::{json, Value};

use dualview::autodiff::Checkpoint;
use dualview::eval::{evaluate_run, ClassifierChoice, EvalOptions, EvalReport};
use dualview::model::{merged_predict, predict_example, PredictOptions};
use dualview::par::{try_map_indexed, Parallelism};
use dualview::synth::{write_jsonl, SyntheticSpec};
use dualview::text::{prepare, read_jsonl, Dataset, Example, FieldMap, PrepConfig, Split, SplitSizes, SplitSpec};
use dualview::train::{
    load_pretrained, multi_seed_run, ConfigFile, ModelArtifact, TrainConfig, TrainPaths, Trainer,
    ValidationObjective,
};
use dualview::{Error, HyperParams, Result};

#[derive(Parser)]
#[command(name = "dualview", version, about = "Joint review summarization and sentiment classification")]
struct Cli {
    /// Worker threads for per-example work; 1 runs everything sequentially.
    #[arg(long, global = true)]
    workers: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Tokenize, filter, split and encode a JSON-lines review corpus.
    Prep(PrepArgs),
    /// Train a model on a prepared dataset.
    Train(TrainArgs),
    /// Score checkpoints on a dataset split.
    Eval(EvalArgs),
    /// Summarize and classify raw reviews.
    Predict(PredictArgs),
    /// Write a synthetic review corpus.
    Synth(SynthArgs),
}

/// Hyperparameter overrides shared by `prep` and `train`.
#[derive(Args, Default)]
struct HyperArgs {
    /// TOML file of configuration keys; flags take precedence over it.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    embed_dim: Option<usize>,
    /// Also sets the attention, query and classifier sizes.
    #[arg(long)]
    hidden_dim: Option<usize>,
    #[arg(long)]
    num_classes: Option<usize>,
    #[arg(long)]
    vocab_cap: Option<usize>,
    #[arg(long)]
    max_src_len: Option<usize>,
    #[arg(long)]
    max_tgt_len: Option<usize>,
}

impl HyperArgs {
    fn file(&self) -> Result<ConfigFile> {
        match &self.config {
            Some(p) => ConfigFile::load(p),
            None => Ok(ConfigFile::default()),
        }
    }

    fn flags(&self) -> ConfigFile {
        ConfigFile {
            seed: self.seed,
            embed_dim: self.embed_dim,
            hidden_dim: self.hidden_dim,
            num_classes: self.num_classes,
            vocab_cap: self.vocab_cap,
            max_src_len: self.max_src_len,
            max_tgt_len: self.max_tgt_len,
            ..ConfigFile::default()
        }
    }
}

#[derive(Args)]
struct PrepArgs {
    /// JSON-lines reviews with `reviewText`, `summary` and `overall` fields.
    #[arg(long)]
    input: PathBuf,
    #[arg(long)]
    output: PathBuf,
    #[command(flatten)]
    hyper: HyperArgs,
    /// Fraction of records held out for each of validation and test.
    #[arg(long, conflicts_with = "sizes")]
    valid_fraction: Option<f64>,
    /// Exact split sizes as `TRAIN,VALID,TEST`.
    #[arg(long, value_parser = parse_sizes)]
    sizes: Option<SplitSizes>,
    /// Also write the corpus statistics as JSON.
    #[arg(long)]
    stats: Option<PathBuf>,
}

#[derive(Args)]
struct TrainArgs {
    #[arg(long)]
    dataset: PathBuf,
    /// Where the best checkpoint is written.
    #[arg(long)]
    output: PathBuf,
    /// Where the latest checkpoint is written; it can be resumed from.
    #[arg(long)]
    last: Option<PathBuf>,
    /// JSON-lines training log, one entry per checkpoint.
    #[arg(long)]
    log: Option<PathBuf>,
    /// Continue from a checkpoint written to `--last`.
    #[arg(long)]
    resume: Option<PathBuf>,
    /// Pretrained word vectors in word2vec text format.
    #[arg(long, conflicts_with = "resume")]
    embeddings: Option<PathBuf>,
    #[command(flatten)]
    hyper: HyperArgs,
    #[arg(long)]
    gamma1: Option<f64>,
    #[arg(long)]
    gamma2: Option<f64>,
    #[arg(long)]
    gamma3: Option<f64>,
    #[arg(long)]
    gamma4: Option<f64>,
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    dropout: Option<f64>,
    #[arg(long)]
    clip_norm: Option<f64>,
    #[arg(long)]
    checkpoint_interval: Option<usize>,
    #[arg(long)]
    patience: Option<usize>,
    #[arg(long)]
    max_epochs: Option<usize>,
    #[arg(long)]
    max_steps: Option<usize>,
    #[arg(long)]
    min_lr: Option<f64>,
    /// Loss driving model selection: `full` or `generation`.
    #[arg(long)]
    validation: Option<ValidationObjective>,
    /// `full` or a combination of `-I`, `-A`, `-R`, `-C`.
    #[arg(long, allow_hyphen_values = true)]
    ablations: Option<String>,
}

impl TrainArgs {
    fn flags(&self) -> ConfigFile {
        ConfigFile {
            gamma1: self.gamma1,
            gamma2: self.gamma2,
            gamma3: self.gamma3,
            gamma4: self.gamma4,
            lr: self.lr,
            batch_size: self.batch_size,
            dropout: self.dropout,
            clip_norm: self.clip_norm,
            checkpoint_interval: self.checkpoint_interval,
            patience: self.patience,
            max_epochs: self.max_epochs,
            max_steps: self.max_steps,
            min_lr: self.min_lr,
            validation: self.validation,
            ablations: self.ablations.clone(),
            ..self.hyper.flags()
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum Switch {
    On,
    Off,
}

/// Decoding and classifier selection shared by `eval` and `predict`.
#[derive(Args)]
struct DecodeArgs {
    /// Classifier that supplies the headline label.
    #[arg(long, default_value = "source")]
    classifier: ClassifierChoice,
    /// Summary-view labels from teacher-forced states of the reference summary.
    #[arg(long, value_enum, default_value = "off")]
    teacher_forcing: Switch,
    /// Defaults to the width the model was trained with.
    #[arg(long)]
    beam_width: Option<usize>,
    #[arg(long)]
    max_depth: Option<usize>,
}

impl DecodeArgs {
    fn predict_options(&self, hp: &HyperParams) -> PredictOptions {
        let mut p = PredictOptions::from_hyper(hp);
        if let Some(w) = self.beam_width {
            p.beam_width = w;
        }
        if let Some(d) = self.max_depth {
            p.max_depth = d;
        }
        p
    }

    fn teacher_forcing(&self) -> bool {
        matches!(self.teacher_forcing, Switch::On)
    }
}

#[derive(Args)]
struct EvalArgs {
    /// Repeat to aggregate several runs, typically one per seed.
    #[arg(long, required = true)]
    checkpoint: Vec<PathBuf>,
    #[arg(long)]
    dataset: PathBuf,
    #[arg(long, default_value = "test")]
    split: Split,
    #[command(flatten)]
    decode: DecodeArgs,
    /// Evaluate only the first N examples.
    #[arg(long)]
    limit: Option<usize>,
    /// Write the full report as JSON.
    #[arg(long)]
    report: Option<PathBuf>,
    /// Write per-example predictions as JSON lines (single checkpoint only).
    #[arg(long)]
    predictions: Option<PathBuf>,
    /// Print JSON instead of a table.
    #[arg(long)]
    json: bool,
}

#[derive(Args)]
struct PredictArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    /// JSON-lines reviews; only the review field is required.
    #[arg(long)]
    input: PathBuf,
    /// Defaults to standard output.
    #[arg(long)]
    output: Option<PathBuf>,
    #[command(flatten)]
    decode: DecodeArgs,
}

#[derive(Args)]
struct SynthArgs {
    #[arg(long)]
    output: PathBuf,
    /// TOML generator settings; flags take precedence over it.
    #[arg(long)]
    spec: Option<PathBuf>,
    #[arg(long)]
    examples: Option<usize>,
    #[arg(long)]
    num_classes: Option<usize>,
    /// Fraction of summary words that only occur in their own review.
    #[arg(long)]
    copy_rate: Option<f64>,
    #[arg(long)]
    distractor_rate: Option<f64>,
    #[arg(long)]
    summary_sentiment_rate: Option<f64>,
    #[arg(long)]
    seed: Option<u64>,
}

fn parse_sizes(s: &str) -> std::result::Result<SplitSizes, String> {
    let parts: Vec<usize> = s
        .split(',')
        .map(|p| p.trim().parse::<usize>().map_err(|e| format!("`{p}`: {e}")))
        .collect::<std::result::Result<_, _>>()?;
    match parts[..] {
        [train, valid, test] => Ok(SplitSizes { train, valid, test }),
        _ => Err("expected TRAIN,VALID,TEST".into()),
    }
}

fn parallelism(workers: Option<usize>) -> Result<Parallelism> {
    match workers {
        None => Ok(Parallelism::default()),
        Some(0) => Err(Error::Config("--workers must be at least 1".into())),
        Some(1) => Ok(Parallelism::Sequential),
        #[cfg(feature = "parallel")]
        Some(n) => {
            rayon::ThreadPoolBuilder::new()
                .num_threads(n)
                .build_global()
                .map_err(|e| Error::Config(format!("cannot start {n} workers: {e}")))?;
            Ok(Parallelism::Parallel)
        }
        #[cfg(not(feature = "parallel"))]
        Some(_) => Err(Error::Config("built without parallel support; use --workers 1".into())),
    }
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    File::create(path)
        .map(BufWriter::new)
        .map_err(|e| Error::Io { path: path.to_path_buf(), source: e })
}

fn write_json(path: &Path, value: &Value) -> Result<()> {
    let mut w = create(path)?;
    serde_json::to_writer_pretty(&mut w, value).map_err(|e| Error::Format(e.to_string()))?;
    writeln!(w).and_then(|_| w.flush()).map_err(|e| Error::Io { path: path.to_path_buf(), source: e })
}

fn to_value<T: serde::Serialize>(x: &T) -> Value {
    serde_json::to_value(x).expect("report types serialize")
}

fn prep(args: PrepArgs, par: Parallelism) -> Result<()> {
    let mut hp = HyperParams::default();
    let file = args.hyper.file()?;
    let flags = args.hyper.flags();
    file.apply_hyper(&mut hp);
    flags.apply_hyper(&mut hp);
    let seed = flags.seed.or(file.seed).unwrap_or(0);
    let mut cfg = PrepConfig::new(hp, seed);
    cfg.parallelism = par;
    if let Some(f) = args.valid_fraction {
        cfg.split = SplitSpec::Fraction(f);
    }
    if let Some(s) = args.sizes {
        cfg.split = SplitSpec::Sizes(s);
    }
    let read = read_jsonl(&args.input, &FieldMap::default())?;
    let (data, mut stats) = prepare(&read.records, &cfg)?;
    stats.input_records = read.lines;
    stats.malformed_lines = read.malformed;
    data.save(&args.output)?;
    print!("{}", stats.render_table());
    println!(
        "splits: train {} valid {} test {}; vocabulary {}",
        data.train.len(),
        data.valid.len(),
        data.test.len(),
        data.vocab.len()
    );
    if let Some(p) = &args.stats {
        write_json(p, &to_value(&stats))?;
    }
    Ok(())
}

fn train(args: TrainArgs, par: Parallelism) -> Result<()> {
    let data = Dataset::load(&args.dataset)?;
    let paths = TrainPaths {
        best: Some(args.output.clone()),
        last: args.last.clone(),
        log: args.log.clone(),
    };
    let file = args.hyper.file()?;
    let flags = args.flags();
    let trainer = match &args.resume {
        Some(p) => {
            let ckpt = Checkpoint::load(p)?;
            let mut cfg = ModelArtifact::from_checkpoint(&ckpt)?.config;
            file.apply(&mut cfg)?;
            flags.apply(&mut cfg)?;
            cfg.parallelism = par;
            Trainer::resume(&data, &ckpt, Some(cfg), paths)?
        }
        None => {
            let mut cfg = TrainConfig::default();
            cfg.hp.num_classes = data.num_classes;
            file.apply(&mut cfg)?;
            flags.apply(&mut cfg)?;
            cfg.parallelism = par;
            let mut t = Trainer::new(&data, cfg, paths)?;
            if let Some(e) = &args.embeddings {
                let n = load_pretrained(t.model_mut(), &data.vocab, e)?;
                info!("initialized {n} embeddings from {}", e.display());
            }
            t
        }
    };
    let outcome = trainer.run()?;
    let last = outcome.log.last();
    let summary = json!({
        "steps": outcome.state.step,
        "stop": outcome.stop,
        "best_step": outcome.state.best_step,
        "best_valid": outcome.state.best_valid,
        "final_lr": outcome.state.lr,
        "valid_disagreement_rate": last.map(|e| e.disagreement_rate),
    });
    println!("{summary}");
    Ok(())
}

fn eval(args: EvalArgs, par: Parallelism) -> Result<()> {
    if args.predictions.is_some() && args.checkpoint.len() > 1 {
        return Err(Error::Config("--predictions needs a single --checkpoint".into()));
    }
    let data = Dataset::load(&args.dataset)?;
    let artifacts = args
        .checkpoint
        .iter()
        .map(|p| ModelArtifact::load(p))
        .collect::<Result<Vec<_>>>()?;
    let options = |a: &ModelArtifact| EvalOptions {
        predict: args.decode.predict_options(&a.model.hp),
        classifier: args.decode.classifier,
        teacher_forcing: args.decode.teacher_forcing(),
        parallelism: par,
        limit: args.limit,
    };

    if let [artifact] = artifacts.as_slice() {
        let (report, records) = evaluate_run(artifact, &data, args.split, &options(artifact))?;
        if let Some(p) = &args.predictions {
            let mut w = create(p)?;
            for r in &records {
                writeln!(w, "{}", to_value(r)).map_err(|e| Error::Io { path: p.clone(), source: e })?;
            }
            w.flush().map_err(|e| Error::Io { path: p.clone(), source: e })?;
        }
        let value = to_value(&report);
        emit_report(&args, &value, || report.render_table())?;
        return Ok(());
    }

    let seeds: Vec<u64> = artifacts.iter().map(|a| a.config.seed).collect();
    let mut reports: Vec<Option<EvalReport>> = Vec::new();
    let mut next = artifacts.iter();
    let multi = multi_seed_run(&seeds, |_| {
        let a = next.next().expect("one artifact per seed");
        let run = evaluate_run(a, &data, args.split, &options(a)).map(|(r, _)| r);
        reports.push(run.as_ref().ok().cloned());
        run.map(|r| r.flat_metrics())
    })?;
    let value = json!({
        "checkpoints": args.checkpoint,
        "reports": reports,
        "aggregate": multi,
    });
    emit_report(&args, &value, || multi.render_table())?;
    if multi.runs.iter().all(|r| r.metrics.is_none()) {
        return Err(Error::Training {
            param: "eval".into(),
            message: "every checkpoint failed to evaluate".into(),
        });
    }
    Ok(())
}

fn emit_report(args: &EvalArgs, value: &Value, table: impl FnOnce() -> String) -> Result<()> {
    if let Some(p) = &args.report {
        write_json(p, value)?;
    }
    if args.json {
        println!("{value}");
    } else {
        print!("{}", table());
    }
    Ok(())
}

struct Input {
    id: Value,
    review: String,
    summary: Option<String>,
}

fn read_inputs(path: &Path, fields: &FieldMap) -> Result<Vec<Input>> {
    let file = File::open(path).map_err(|e| Error::Io { path: path.to_path_buf(), source: e })?;
    let mut out = Vec::new();
    for (n, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::Io { path: path.to_path_buf(), source: e })?;
        if line.trim().is_empty() {
            continue;
        }
        let bad = |what: &str| Error::Format(format!("{}:{}: {what}", path.display(), n + 1));
        let v: Value = serde_json::from_str(&line).map_err(|e| bad(&e.to_string()))?;
        let review = v
            .get(&fields.review)
            .and_then(Value::as_str)
            .ok_or_else(|| bad(&format!("missing string field `{}`", fields.review)))?;
        out.push(Input {
            id: v.get(&fields.id).cloned().unwrap_or_else(|| json!(out.len())),
            review: review.to_string(),
            summary: v.get(&fields.summary).and_then(Value::as_str).map(str::to_string),
        });
    }
    Ok(out)
}

fn predict(args: PredictArgs, par: Parallelism) -> Result<()> {
    let artifact = ModelArtifact::load(&args.checkpoint)?;
    let inputs = read_inputs(&args.input, &FieldMap::default())?;
    let tf = args.decode.teacher_forcing();
    if tf {
        if let Some(i) = inputs.iter().position(|x| x.summary.is_none()) {
            return Err(Error::Contract(format!(
                "teacher forcing needs a reference summary; record {} has none",
                i + 1
            )));
        }
    }
    let hp = &artifact.model.hp;
    let mut popts = args.decode.predict_options(hp);
    popts.teacher_forced = tf;
    let choice = args.decode.classifier;
    let lines = try_map_indexed(&inputs, par, |i, x| -> Result<Value> {
        let ex = Example::from_text(
            i as u64,
            &x.review,
            x.summary.as_deref(),
            1,
            &artifact.vocab,
            hp.max_src_len,
            hp.max_tgt_len,
        );
        let p = predict_example(&artifact.model, &ex, &artifact.vocab, &popts)?;
        let summary_view = match (tf, &p.p_dc_tf) {
            (true, Some(d)) => d.clone(),
            _ => p.p_dc_free.clone(),
        };
        let label = match choice {
            ClassifierChoice::Source => argmax(&p.p_ec),
            ClassifierChoice::Summary => argmax(&summary_view),
            ClassifierChoice::Merged => merged_predict(&p.p_ec, &summary_view)?.1,
        };
        Ok(json!({
            "id": x.id,
            "generated_summary": p.words.join(" "),
            "log_prob": p.log_prob,
            "predicted_label": label + 1,
            "source_label": argmax(&p.p_ec) + 1,
            "summary_label": argmax(&summary_view) + 1,
        }))
    })?;
    let mut out: Box<dyn Write> = match &args.output {
        Some(p) => Box::new(create(p)?),
        None => Box::new(std::io::stdout().lock()),
    };
    let origin = args.output.clone().unwrap_or_else(|| PathBuf::from("<stdout>"));
    for v in &lines {
        writeln!(out, "{v}").map_err(|e| Error::Io { path: origin.clone(), source: e })?;
    }
    out.flush().map_err(|e| Error::Io { path: origin, source: e })
}

fn argmax(p: &[f64]) -> usize {
    p.iter()
        .enumerate()
        .fold((0, f64::NEG_INFINITY), |best, (i, &x)| if x > best.1 { (i, x) } else { best })
        .0
}

fn synth(args: SynthArgs) -> Result<()> {
    let mut spec = match &args.spec {
        Some(p) => SyntheticSpec::load(p)?,
        None => SyntheticSpec::default(),
    };
    if let Some(n) = args.examples {
        spec.num_examples = n;
    }
    if let Some(k) = args.num_classes {
        spec.num_classes = k;
    }
    if let Some(c) = args.copy_rate {
        spec.copy_rate = c;
    }
    if let Some(d) = args.distractor_rate {
        spec.distractor_rate = d;
    }
    if let Some(s) = args.summary_sentiment_rate {
        spec.summary_sentiment_rate = s;
    }
    if let Some(s) = args.seed {
        spec.seed = s;
    }
    let records = spec.generate()?;
    write_jsonl(&records, &args.output)?;
    println!("{}", json!({ "records": records.len(), "output": args.output }));
    Ok(())
}

fn run(cli: Cli) -> Result<()> {
    let par = parallelism(cli.workers)?;
    match cli.command {
        Command::Prep(a) => prep(a, par),
        Command::Train(a) => train(a, par),
        Command::Eval(a) => eval(a, par),
        Command::Predict(a) => predict(a, par),
        Command::Synth(a) => synth(a),
    }
}

fn report_error(category: &str, message: &str) {
    eprintln!("{}", json!({ "error": { "category": category, "message": message } }));
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) if !e.use_stderr() => {
            print!("{e}");
            return ExitCode::SUCCESS;
        }
        Err(e) => {
            report_error("usage", e.to_string().trim());
            return ExitCode::from(2);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            report_error(e.category(), &e.to_string());
            ExitCode::FAILURE
        }
    }
}
