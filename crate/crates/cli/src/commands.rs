use std::collections::BTreeMap;
use std::fs::{self, File};
use std::io::{BufReader, BufWriter, Write};
use std::ops::Range;
use std::path::{Path, PathBuf};

use log::info;

use dimo::corpus::{generate_corpus, read_corpus, write_corpus, CorpusRecord, Split, TextVocab};
use dimo::decode::{
    make_task_mask, progressive_decode, write_trace, DecodeConfig, TaskRequest, DEFAULT_CORRECTION_THRESHOLD,
};
use dimo::grpo::{
    mean_t2m_reward, write_diagnostics, CaptionEmbedder, FinetuneOutcome, FrozenCaptioner, GrpoTrainer, Rewarder,
};
use dimo::metrics::{
    generate_m2t, generate_t2m, latency_sweep, score, token_embeddings, tokens_to_clip, write_latency, write_sweep,
    EvalItem, FeatureSpace, Generated,
};
use dimo::model::{load_checkpoint, save_checkpoint, DenoiserParams, Trainer};
use dimo::pipeline::{depth_mse, eval_items, fit_tokenizer, select, train_items};
use dimo::rng::derive_seed;
use dimo::rvq::{read_codebooks, token_rate, write_codebooks, MotionClip, RvqCodebooks};
use dimo::{DimoError, Result};

use crate::config::RunConfig;

/// Where a run reads and writes.
pub struct Ctx {
    pub cfg: RunConfig,
    pub out: PathBuf,
}

impl Ctx {
    fn input(&self, key: &str, default_name: &str) -> PathBuf {
        match self.cfg.text("io", key) {
            "" => self.out.join(default_name),
            p => PathBuf::from(p),
        }
    }

    fn create(&self, name: &str) -> Result<BufWriter<File>> {
        Ok(BufWriter::new(File::create(self.out.join(name))?))
    }

    /// Creates the output directory and records the resolved configuration.
    pub fn prepare(&self) -> Result<()> {
        fs::create_dir_all(&self.out)?;
        fs::write(self.out.join("resolved_config.ini"), self.cfg.to_ini())?;
        Ok(())
    }

    fn vocab(&self) -> TextVocab {
        TextVocab::standard()
    }

    fn corpus(&self) -> Result<Vec<CorpusRecord>> {
        let path = self.input("corpus", "corpus.tsv");
        let file = File::open(&path).map_err(|e| missing(&path, e))?;
        read_corpus(BufReader::new(file), &self.vocab(), self.cfg.int("model", "max_text"))
    }

    fn codebooks(&self) -> Result<RvqCodebooks> {
        let path = self.input("codebooks", "codebooks.bin");
        read_codebooks(BufReader::new(File::open(&path).map_err(|e| missing(&path, e))?))
    }

    fn checkpoint(&self) -> Result<DenoiserParams<f32>> {
        let path = self.input("checkpoint", "model.ckpt");
        if !path.exists() {
            return Err(missing(&path, std::io::ErrorKind::NotFound.into()));
        }
        Ok(load_checkpoint(&path)?.0)
    }

    fn held_out<'a>(&self, records: &'a [CorpusRecord]) -> Result<Vec<&'a CorpusRecord>> {
        let splits: &[Split] = match self.cfg.text("eval", "split") {
            "val" => &[Split::Val],
            "test" => &[Split::Test],
            "heldout" => &[Split::Val, Split::Test],
            other => return Err(DimoError::Config(format!("eval.split must be val, test or heldout, not {other:?}"))),
        };
        let mut picked = select(records, splits);
        let limit = self.cfg.int("eval", "limit");
        if limit > 0 {
            picked.truncate(limit);
        }
        if picked.is_empty() {
            return Err(DimoError::EmptyInput("the evaluation split has no records".into()));
        }
        Ok(picked)
    }
}

fn missing(path: &Path, e: std::io::Error) -> DimoError {
    DimoError::Io(std::io::Error::new(e.kind(), format!("{}: {e}", path.display())))
}

fn write_clip_csv<W: Write>(clip: &MotionClip, mut w: W) -> Result<()> {
    let header: Vec<String> = (0..clip.channels).map(|c| format!("c{c}")).collect();
    writeln!(w, "frame,{}", header.join(","))?;
    for f in 0..clip.frames() {
        let row: Vec<String> = clip.frame(f).iter().map(|v| v.to_string()).collect();
        writeln!(w, "{f},{}", row.join(","))?;
    }
    Ok(())
}

pub fn corpus(ctx: &Ctx) -> Result<()> {
    let count = ctx.cfg.int("corpus", "count");
    let corpus = generate_corpus(ctx.cfg.seed(), count, &ctx.cfg.corpus()?)?;
    write_corpus(&corpus.records, ctx.create("corpus.tsv")?)?;
    fs::write(ctx.out.join("vocab.txt"), corpus.vocab.to_file_string())?;
    for split in [Split::Train, Split::Val, Split::Test] {
        println!("{}: {}", split.name(), corpus.split(split).len());
    }
    Ok(())
}

pub fn print_rate(fps: f64, layers: usize, downsample: usize, codebook: usize) -> Result<()> {
    if downsample == 0 || codebook < 2 || layers == 0 || !(fps > 0.0) {
        return Err(DimoError::Config("rate needs fps > 0, layers ≥ 1, downsample ≥ 1 and codebook ≥ 2".into()));
    }
    let rate = token_rate(layers, downsample, codebook, fps);
    println!("{} tokens/s, {} bits/s", rate.tokens_per_second, rate.bits_per_second);
    Ok(())
}

pub fn tokenizer(ctx: &Ctx) -> Result<()> {
    let records = ctx.corpus()?;
    let train = select(&records, &[Split::Train]);
    let books = fit_tokenizer(
        &train,
        ctx.cfg.int("rvq", "layers"),
        ctx.cfg.int("rvq", "codebook"),
        ctx.cfg.int("rvq", "downsample"),
        &ctx.cfg.ema(),
    )?;
    write_codebooks(&books, ctx.create("codebooks.bin")?)?;
    let held = select(&records, &[Split::Val, Split::Test]);
    let mut report = ctx.create("tokenizer_report.csv")?;
    writeln!(report, "layers,heldout_mse")?;
    if !held.is_empty() {
        for (k, mse) in depth_mse(&held, &books)?.into_iter().enumerate() {
            writeln!(report, "{},{mse}", k + 1)?;
            println!("R={}: held-out MSE {mse:.6}", k + 1);
        }
    }
    Ok(())
}

pub fn train(ctx: &Ctx) -> Result<()> {
    let records = ctx.corpus()?;
    let books = ctx.codebooks()?;
    let model = ctx.cfg.model(ctx.vocab().len(), books.layers, books.size)?;
    let items = train_items(&select(&records, &[Split::Train]), &books, &model)?;
    let tcfg = ctx.cfg.train()?;
    let steps = tcfg.steps;
    let mut trainer = Trainer::new(DenoiserParams::<f32>::init(model, ctx.cfg.seed())?, tcfg)?;
    let mut log = ctx.create("train_loss.csv")?;
    writeln!(log, "step,loss")?;
    let mut io_err = None;
    trainer.fit(&items, steps, |s, loss| {
        if s % 100 == 0 || s == steps {
            info!("step {s}: masked CE {loss:.4}");
        }
        if let Err(e) = writeln!(log, "{s},{loss}") {
            io_err.get_or_insert(e);
        }
    })?;
    if let Some(e) = io_err {
        return Err(e.into());
    }
    log.flush()?;
    let meta = BTreeMap::from([("stage".to_string(), "supervised".to_string()), ("steps".into(), steps.to_string())]);
    save_checkpoint(&ctx.out.join("model.ckpt"), &trainer.params, &meta)
}

/// Inputs for `sample`.
#[derive(Debug, Clone, Default)]
pub struct SampleArgs {
    pub kind: String,
    pub caption: Option<String>,
    pub record: Option<String>,
    pub length: Option<usize>,
    pub keep: Option<String>,
    pub append: Option<usize>,
    pub threshold: Option<f64>,
    pub count: usize,
    pub csv: bool,
}

fn parse_ranges(spec: &str) -> Result<Vec<Range<usize>>> {
    spec.split(',')
        .map(|part| {
            let (a, b) = part
                .trim()
                .split_once("..")
                .ok_or_else(|| DimoError::Config(format!("keep range {part:?} is not start..end")))?;
            let parse = |s: &str| s.trim().parse::<usize>().map_err(|_| DimoError::Config(format!("bad keep bound {s:?}")));
            Ok(parse(a)?..parse(b)?)
        })
        .collect()
}

pub fn sample(ctx: &Ctx, args: &SampleArgs) -> Result<()> {
    let params = ctx.checkpoint()?;
    let books = ctx.codebooks()?;
    let vocab = ctx.vocab();
    let mcfg = params.config;
    let caption = args.caption.as_deref().map(|c| vocab.tokenize(c, mcfg.max_text)).transpose()?;
    let source: Option<EvalItem> = match &args.record {
        Some(id) => {
            let records = ctx.corpus()?;
            let rec = records
                .iter()
                .find(|r| &r.id == id)
                .ok_or_else(|| DimoError::Config(format!("record {id:?} is not in the corpus")))?;
            Some(EvalItem::from_record(rec, &books, &mcfg)?)
        }
        None => None,
    };
    let need_motion = || {
        source
            .as_ref()
            .map(|s| s.grid.indices.clone())
            .ok_or_else(|| DimoError::Config(format!("{} needs --record for its motion", args.kind)))
    };
    let need_caption = || {
        caption
            .clone()
            .or_else(|| source.as_ref().map(|s| s.caption.clone()))
            .ok_or_else(|| DimoError::Config(format!("{} needs --caption or --record", args.kind)))
    };
    let length_default = source.as_ref().map(|s| s.grid.length).unwrap_or(mcfg.max_motion / 2);
    let request = match args.kind.as_str() {
        "t2m" => TaskRequest::T2M { caption: need_caption()?, length: args.length.unwrap_or(length_default) },
        "m2t" => TaskRequest::M2T { motion: need_motion()? },
        "m2m-inbetween" => {
            let motion = need_motion()?;
            let t = motion.len() / mcfg.levels;
            let keep = match &args.keep {
                Some(spec) => parse_ranges(spec)?,
                None => vec![0..t / 4, t - t / 4..t],
            };
            TaskRequest::Inbetween { motion, keep }
        }
        "m2m-continue" => {
            let prefix = need_motion()?;
            let caption = need_caption()?;
            TaskRequest::Continue { prefix, caption, append: args.append.unwrap_or(10) }
        }
        "caption-correct" => TaskRequest::CaptionCorrect {
            caption: caption.clone().ok_or_else(|| DimoError::Config("caption-correct needs --caption".into()))?,
            motion: need_motion()?,
            threshold: args.threshold.unwrap_or(DEFAULT_CORRECTION_THRESHOLD),
        },
        other => return Err(DimoError::Config(format!("unknown sample kind {other:?}"))),
    };
    let init = make_task_mask(&params, &request)?;
    let decode = ctx.cfg.decode()?;
    let mut records = Vec::with_capacity(args.count);
    let mut traces = ctx.create("samples.trace")?;
    for i in 0..args.count.max(1) {
        let cfg = DecodeConfig { seed: derive_seed(decode.seed, i as u64), ..decode.clone() };
        let (out, trace) = progressive_decode(&params, &init, &cfg)?;
        write_trace(&trace, &mut traces)?;
        let clip = tokens_to_clip(&out.motion, out.levels, &books)?;
        let text = vocab.detokenize(&out.text);
        println!("sample{i:03}\t{}\t{} frames", if text.is_empty() { "-" } else { &text }, clip.frames());
        if args.csv {
            write_clip_csv(&clip, ctx.create(&format!("sample{i:03}.csv"))?)?;
        }
        records.push(CorpusRecord {
            id: format!("sample{i:03}"),
            split: Split::Test,
            caption_tokens: out.text.clone(),
            caption_text: text,
            primitives: vec![],
            clip,
        });
    }
    traces.flush()?;
    write_corpus(&records, ctx.create("samples.tsv")?)
}

pub fn grpo(ctx: &Ctx) -> Result<()> {
    let records = ctx.corpus()?;
    let books = ctx.codebooks()?;
    let params = ctx.checkpoint()?;
    let vocab = ctx.vocab();
    let gcfg = ctx.cfg.grpo()?;
    let train_prompts = train_items(&select(&records, &[Split::Train]), &books, &params.config)?;
    let held_prompts = train_items(&ctx.held_out(&records)?, &books, &params.config)?;
    let embedder = CaptionEmbedder::fit(train_prompts.iter().map(|p| p.text.as_slice()))?;
    let captioner = FrozenCaptioner::new(params.clone(), &ctx.cfg.decode()?);
    let rewarder = Rewarder { config: ctx.cfg.reward()?, embedder: &embedder, vocab: &vocab, captioner: &captioner };
    let eval_decode = ctx.cfg.decode()?;
    let before = mean_t2m_reward(&params, &held_prompts, &rewarder, &eval_decode)?;
    info!("held-out T2M reward before: {before:.4}");
    let mut trainer = GrpoTrainer::new(params, gcfg, rewarder)?;
    let outcome = trainer.finetune(&train_prompts, |s| {
        if s.step % 10 == 0 {
            info!("grpo step {}: reward {:.4} clip {:.3} kl {:.5}", s.step, s.mean_reward, s.clip_frac, s.kl);
        }
    })?;
    write_diagnostics(&trainer.history, ctx.create("grpo_diagnostics.csv")?)?;
    let after = mean_t2m_reward(&trainer.params, &held_prompts, &trainer.rewarder, &eval_decode)?;
    let status = match outcome {
        FinetuneOutcome::Completed => "completed".to_string(),
        FinetuneOutcome::Collapsed { at_step } => format!("collapsed at step {at_step}"),
    };
    let mut summary = ctx.create("grpo_summary.txt")?;
    writeln!(summary, "status: {status}\nheldout_t2m_reward_before: {before}\nheldout_t2m_reward_after: {after}")?;
    println!("{status}; held-out T2M reward {before:.4} -> {after:.4}");
    let meta = BTreeMap::from([("stage".to_string(), "grpo".to_string()), ("status".into(), status)]);
    save_checkpoint(&ctx.out.join("grpo.ckpt"), &trainer.params, &meta)
}

fn feature_space(ctx: &Ctx, records: &[CorpusRecord], books: &RvqCodebooks, model: &dimo::model::ModelConfig) -> Result<FeatureSpace> {
    let train = eval_items(&select(records, &[Split::Train]), books, model)?;
    let captions: Vec<Vec<u32>> = train.iter().map(|i| i.caption.clone()).collect();
    let clips: Vec<MotionClip> = train.into_iter().map(|i| i.clip).collect();
    FeatureSpace::fit(&captions, &clips, &ctx.cfg.evaluator())
}

/// Number of conditions sampled repeatedly for multimodality.
const MM_CONDITIONS: usize = 16;

pub fn eval(ctx: &Ctx, ground_truth: bool) -> Result<()> {
    let records = ctx.corpus()?;
    let books = ctx.codebooks()?;
    let params = if ground_truth { None } else { Some(ctx.checkpoint()?) };
    let model = match &params {
        Some(p) => p.config,
        None => ctx.cfg.model(ctx.vocab().len(), books.layers, books.size)?,
    };
    let items = eval_items(&ctx.held_out(&records)?, &books, &model)?;
    let space = feature_space(ctx, &records, &books, &model)?;
    let decode = ctx.cfg.decode()?;
    let (generated, embeddings) = match &params {
        None => (Generated::ground_truth(&items), vec![]),
        Some(p) => {
            let t2m = generate_t2m(p, &items, &decode)?;
            let levels = p.config.levels;
            let motions = t2m.iter().map(|(m, _)| tokens_to_clip(m, levels, &books)).collect::<Result<Vec<_>>>()?;
            let captions = generate_m2t(p, &items, &decode)?;
            let sampling = DecodeConfig { temperature: decode.temperature.max(1.0), ..decode.clone() };
            let subset = &items[..items.len().min(MM_CONDITIONS)];
            let mut motion_groups = vec![Vec::new(); subset.len()];
            for k in 0..ctx.cfg.int("eval", "mm_samples") {
                let cfg = DecodeConfig { seed: derive_seed(decode.seed ^ 0x6d6d, k as u64), ..sampling.clone() };
                for (g, (m, _)) in motion_groups.iter_mut().zip(generate_t2m(p, subset, &cfg)?) {
                    g.push(tokens_to_clip(&m, levels, &books)?);
                }
            }
            let gen = Generated { motions, captions, motion_groups, latencies_ms: t2m.iter().map(|(_, ms)| *ms).collect() };
            (gen, token_embeddings(p))
        }
    };
    let report = score(&items, &generated, &space, &embeddings, &ctx.cfg.score())?;
    report.write_csv(ctx.create("metrics.csv")?)?;
    let echo = config_echo(ctx, ground_truth);
    fs::write(ctx.out.join("metrics_config.txt"), &echo)?;
    println!("{}", report.csv_row());
    print!("{echo}");
    Ok(())
}

fn config_echo(ctx: &Ctx, ground_truth: bool) -> String {
    let mut s = String::from("{\n  \"format\": \"dimo-eval-v1\",\n");
    s.push_str(&format!("  \"ground_truth\": {ground_truth},\n"));
    let keys = [
        ("run", "seed"),
        ("eval", "split"),
        ("eval", "limit"),
        ("eval", "pool"),
        ("eval", "embed_dim"),
        ("eval", "embed_steps"),
        ("decode", "steps"),
        ("decode", "cfg_scale"),
        ("decode", "pad_factor"),
        ("decode", "shape"),
        ("decode", "temperature"),
    ];
    let lines: Vec<String> =
        keys.iter().map(|(sec, k)| format!("  \"{sec}.{k}\": \"{}\"", ctx.cfg.text(sec, k))).collect();
    s.push_str(&lines.join(",\n"));
    s.push_str("\n}\n");
    s
}

pub fn pareto(ctx: &Ctx) -> Result<()> {
    let records = ctx.corpus()?;
    let books = ctx.codebooks()?;
    let params = ctx.checkpoint()?;
    let items = eval_items(&ctx.held_out(&records)?, &books, &params.config)?;
    let space = feature_space(ctx, &records, &books, &params.config)?;
    let decode = ctx.cfg.decode()?;
    let captioner = FrozenCaptioner::new(params.clone(), &decode);
    let rows = latency_sweep(&params, &books, &space, &ctx.vocab(), &captioner, &items, &ctx.cfg.sweep_steps()?, &decode)?;
    write_sweep(&rows, ctx.create("sweep.csv")?)?;
    write_latency(&rows, ctx.create("latency.csv")?)?;
    for r in &rows {
        println!(
            "S={:>3}: fid {:.4} verbs {:.3} caption verbs {:.3} bleu4 {:.3} median {:.2} ms",
            r.steps, r.fid, r.verb_recovery, r.caption_verbs, r.bleu4, r.latency_ms
        );
    }
    Ok(())
}
