use std::fs::OpenOptions;
use std::io::Write;
use std::path::{Path, PathBuf};

use codeclm::bpe::{train_bpe as learn_bpe, BpeVocab, BOS};
use codeclm::corpus::{build_corpus, encode_directory, TokenStore};
use codeclm::desk::{load_photos, random_crops, write_images, CropConfig};
use codeclm::eval::{
    bits_per_byte, decode_success_rate, extract_all, frechet_distance, DefaultExtractor,
    Embeddings, FeatureExtractor, FeatureStats,
};
use codeclm::image::RgbImage;
use codeclm::jpeg::{decode, encode_image, TableSet};
use codeclm::lm::Params;
use codeclm::sample::{complete_image, generate, restore_tokens, RestoredSample, SampleConfig};
use codeclm::train::{fit, Checkpoint, TrainConfig, Trainer};
use codeclm::util::mix_seed;
use codeclm::Error;
use rayon::prelude::*;
use serde::Serialize;
use serde_json::json;

use crate::config::RunConfig;
use crate::{CliError, ModelArgs, SamplingArgs};

pub const STREAM_EXT: &str = "cjs";
pub const TABLES_FILE: &str = "tables.tbl";
const DEFAULT_SAMPLES: usize = 16;

pub struct Ctx {
    pub cfg: RunConfig,
    pub seed: Option<u64>,
    pub out: Option<PathBuf>,
}

impl Ctx {
    fn out_or(&self, default: PathBuf) -> PathBuf {
        self.out.clone().unwrap_or(default)
    }
}

type Res<T = ()> = Result<T, CliError>;

fn io<T>(path: &Path, r: std::io::Result<T>) -> Res<T> {
    r.map_err(|e| Error::io(path, e).into())
}

fn write_json(path: &Path, value: &impl Serialize) -> Res {
    let text = serde_json::to_string_pretty(value).expect("report serializes");
    io(path, std::fs::write(path, text + "\n"))
}

fn print_json(value: &impl Serialize) {
    println!("{}", serde_json::to_string_pretty(value).expect("report serializes"));
}

fn ext_is(p: &Path, exts: &[&str]) -> bool {
    p.extension()
        .and_then(|e| e.to_str())
        .is_some_and(|e| exts.iter().any(|x| e.eq_ignore_ascii_case(x)))
}

fn files_with_ext(dir: &Path, exts: &[&str]) -> Res<Vec<PathBuf>> {
    let mut v: Vec<PathBuf> = io(dir, std::fs::read_dir(dir))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.is_file() && ext_is(p, exts))
        .collect();
    v.sort();
    Ok(v)
}

/// Decodes a JPEG with the built-in decoder, otherwise loads PNG or raw.
fn load_any_image(path: &Path) -> Res<RgbImage> {
    if ext_is(path, &["jpg", "jpeg"]) {
        let bytes = io(path, std::fs::read(path))?;
        return decode(&bytes)
            .map(|d| d.rgb)
            .map_err(|e| Error::format(path, e.to_string()).into());
    }
    Ok(RgbImage::load(path)?)
}

fn load_vocab(path: &Path) -> Res<BpeVocab> {
    Ok(BpeVocab::load(path)?)
}

fn load_tables(cfg: &RunConfig, arg: Option<&Path>) -> Res<TableSet> {
    let t = match arg.or(cfg.paths.tables.as_deref()) {
        Some(p) => TableSet::load(p)?,
        None => TableSet::for_profile(&cfg.profile)?,
    };
    if t.profile != cfg.profile {
        return Err(Error::Mismatch(format!(
            "table set is for {:?} but the config profile is {:?}",
            t.profile, cfg.profile
        ))
        .into());
    }
    Ok(t)
}

fn latest_checkpoint(dir: &Path) -> Res<PathBuf> {
    files_with_ext(dir, &["bin"])?
        .into_iter()
        .filter(|p| {
            p.file_name()
                .and_then(|n| n.to_str())
                .is_some_and(|n| n.starts_with("ckpt-"))
        })
        .next_back()
        .ok_or_else(|| CliError::Usage(format!("no checkpoint under {}", dir.display())))
}

struct Loaded {
    params: Params<f32>,
    vocab: BpeVocab,
    tables: TableSet,
    checkpoint: PathBuf,
}

fn load_model(ctx: &Ctx, args: &ModelArgs) -> Res<Loaded> {
    let paths = &ctx.cfg.paths;
    let ck_path = match &args.checkpoint {
        Some(p) => p.clone(),
        None => latest_checkpoint(&paths.train())?,
    };
    let ck = Checkpoint::<f32>::load(&ck_path)?;
    let vocab = load_vocab(args.vocab.as_deref().unwrap_or(&paths.vocab()))?;
    if vocab.hash() != ck.vocab_hash {
        return Err(Error::Mismatch(format!(
            "checkpoint trained with vocab {} but {} loaded",
            ck.vocab_hash,
            vocab.hash()
        ))
        .into());
    }
    let tables = load_tables(&ctx.cfg, args.tables.as_deref())?;
    if ck.profile_hash != tables.profile.hash() {
        return Err(Error::Mismatch(format!(
            "checkpoint profile {} but tables for {}",
            ck.profile_hash,
            tables.profile.hash()
        ))
        .into());
    }
    log::info!("loaded {} at step {}", ck_path.display(), ck.state.step);
    Ok(Loaded {
        params: ck.state.params,
        vocab,
        tables,
        checkpoint: ck_path,
    })
}

fn sampling_config(ctx: &Ctx, a: &SamplingArgs) -> Res<SampleConfig> {
    let mut s = ctx.cfg.sample;
    if let Some(k) = a.top_k {
        s.top_k = k;
    }
    if let Some(p) = a.top_p {
        s.top_p = p;
    }
    if let Some(t) = a.temperature {
        s.temperature = t;
    }
    if let Some(n) = a.max_new_tokens {
        s.max_new_tokens = n;
    }
    if let Some(seed) = ctx.seed {
        s.seed = seed;
    }
    s.validate()?;
    Ok(s)
}

pub fn make_desk_corpus(mut ctx: Ctx, photos: Option<PathBuf>, size: Option<u32>, count: Option<usize>) -> Res {
    let cfg = &mut ctx.cfg;
    if let Some(p) = photos {
        cfg.paths.photos = p;
    }
    if let Some(s) = size {
        cfg.desk.crops.size = s;
    }
    if let Some(c) = count {
        cfg.desk.crops.count = c;
    }
    if let Some(s) = ctx.seed {
        cfg.desk.crops.seed = s;
    }
    if let Some(out) = &ctx.out {
        cfg.paths.images = out.join("train");
        cfg.paths.heldout = out.join("heldout");
    }
    let held: Vec<&str> = cfg.heldout_photos.iter().map(String::as_str).collect();
    let train_photos: Vec<RgbImage> = load_photos(&cfg.paths.photos, &held)?
        .into_iter()
        .map(|(_, p)| p)
        .collect();
    let crops = random_crops(&train_photos, &cfg.desk.crops)?;
    write_images(&cfg.paths.images, &crops, "img")?;
    let mut n_held = 0;
    if cfg.desk.heldout_count > 0 && !held.is_empty() {
        let held_photos: Vec<RgbImage> = load_photos(&cfg.paths.photos, &[])?
            .into_iter()
            .filter(|(stem, _)| held.contains(&stem.as_str()))
            .map(|(_, p)| p)
            .collect();
        if held_photos.is_empty() {
            log::warn!("none of the held-out photos {held:?} found");
        } else {
            let hc = CropConfig {
                count: cfg.desk.heldout_count,
                seed: mix_seed(cfg.desk.crops.seed, 1),
                ..cfg.desk.crops
            };
            let h = random_crops(&held_photos, &hc)?;
            write_images(&cfg.paths.heldout, &h, "held")?;
            n_held = h.len();
        }
    }
    let dir = ctx.out.clone().unwrap_or_else(|| cfg.paths.work.clone());
    cfg.write_resolved(&dir)?;
    print_json(&json!({
        "train_dir": cfg.paths.images,
        "train_images": crops.len(),
        "heldout_dir": cfg.paths.heldout,
        "heldout_images": n_held,
        "size": cfg.desk.crops.size,
    }));
    Ok(())
}

pub fn encode_corpus(ctx: Ctx, images: Option<PathBuf>) -> Res {
    let cfg = &ctx.cfg;
    let dir = images.unwrap_or_else(|| cfg.paths.images.clone());
    let out = ctx.out_or(cfg.paths.streams());
    let streams = encode_directory(&dir, &cfg.profile)?;
    io(&out, std::fs::create_dir_all(&out))?;
    let mut lens = Vec::with_capacity(streams.len());
    for (src, bytes) in &streams {
        let stem = src.file_stem().unwrap_or_default().to_string_lossy();
        let p = out.join(format!("{stem}.{STREAM_EXT}"));
        io(&p, std::fs::write(&p, bytes))?;
        lens.push(bytes.len());
    }
    let tables = TableSet::for_profile(&cfg.profile)?;
    let tp = out.join(TABLES_FILE);
    io(&tp, tables.save(&tp))?;
    cfg.write_resolved(&out)?;
    let total: usize = lens.iter().sum();
    let summary = json!({
        "images": lens.len(),
        "total_bytes": total,
        "mean_bytes": total as f64 / lens.len() as f64,
        "min_bytes": lens.iter().min(),
        "max_bytes": lens.iter().max(),
        "table_bytes_removed_per_file": tables.removed_bytes().len(),
        "profile_hash": cfg.profile.hash(),
        "out": out,
    });
    write_json(&out.join("streams.json"), &summary)?;
    print_json(&summary);
    Ok(())
}

fn read_streams(dir: &Path, cfg: &RunConfig) -> Res<Vec<Vec<u8>>> {
    let tp = dir.join(TABLES_FILE);
    if tp.exists() {
        let t = TableSet::load(&tp)?;
        if t.profile != cfg.profile {
            return Err(Error::Mismatch(format!(
                "streams in {} were encoded under {:?}, config profile is {:?}",
                dir.display(),
                t.profile,
                cfg.profile
            ))
            .into());
        }
    }
    let files = files_with_ext(dir, &[STREAM_EXT])?;
    if files.is_empty() {
        return Err(Error::EmptyCorpus.into());
    }
    files.iter().map(|p| io(p, std::fs::read(p))).collect()
}

pub fn train_bpe(mut ctx: Ctx, streams: Option<PathBuf>, vocab_size: Option<usize>) -> Res {
    if let Some(v) = vocab_size {
        ctx.cfg.bpe.target_vocab = v;
    }
    let cfg = &ctx.cfg;
    let dir = streams.unwrap_or_else(|| cfg.paths.streams());
    let data = read_streams(&dir, cfg)?;
    let vocab = learn_bpe(data.iter().map(Vec::as_slice), &cfg.bpe, &cfg.profile.hash()).map_err(Error::from)?;
    let out = ctx.out_or(cfg.paths.work.clone());
    io(&out, std::fs::create_dir_all(&out))?;
    let vp = out.join("vocab.txt");
    vocab.save(&vp)?;
    cfg.write_resolved(&out)?;
    let bytes: usize = data.iter().map(Vec::len).sum();
    let tokens: usize = data.iter().map(|d| vocab.encode(d, false, false).len()).sum();
    print_json(&json!({
        "vocab": vp,
        "size": vocab.size(),
        "merges": vocab.merges().len(),
        "hash": vocab.hash(),
        "streams": data.len(),
        "bytes_per_token": bytes as f64 / tokens.max(1) as f64,
    }));
    Ok(())
}

fn manifest_summary(m: &codeclm::corpus::Manifest, out: &Path) -> serde_json::Value {
    json!({
        "store": out,
        "image_count": m.image_count,
        "token_count": m.token_count,
        "mean_doc_len": m.mean_doc_len,
        "median_doc_len": m.median_doc_len,
        "chunk_count": m.chunk_count,
        "chunking": m.chunking,
        "vocab_hash": m.vocab_hash,
        "profile_hash": m.profile_hash,
    })
}

pub fn build_store(
    mut ctx: Ctx,
    images: Option<PathBuf>,
    streams: Option<PathBuf>,
    vocab: Option<PathBuf>,
    context_len: Option<usize>,
) -> Res {
    if let Some(l) = context_len {
        ctx.cfg.corpus.context_len = l;
    }
    let cfg = &ctx.cfg;
    let vocab = load_vocab(&vocab.unwrap_or_else(|| cfg.paths.vocab()))?;
    let l = cfg.corpus.context_len;
    let store = match streams {
        Some(dir) => {
            if vocab.profile_hash != cfg.profile.hash() {
                return Err(Error::Mismatch(format!(
                    "vocab trained under profile {} but config profile is {}",
                    vocab.profile_hash,
                    cfg.profile.hash()
                ))
                .into());
            }
            TokenStore::from_streams(&read_streams(&dir, cfg)?, &vocab, l)?
        }
        None => {
            let dir = images.unwrap_or_else(|| cfg.paths.images.clone());
            build_corpus(&dir, &cfg.profile, &vocab, l)?
        }
    };
    let store = store.with_chunking(cfg.corpus.chunking);
    let out = ctx.out_or(cfg.paths.store());
    let m = store.save(&out, &vocab)?;
    cfg.write_resolved(&out)?;
    print_json(&manifest_summary(&m, &out));
    Ok(())
}

pub fn train(
    mut ctx: Ctx,
    store: Option<PathBuf>,
    heldout: Option<PathBuf>,
    vocab: Option<PathBuf>,
    steps: Option<u64>,
    resume: Option<PathBuf>,
) -> Res {
    let store_dir = store.unwrap_or_else(|| ctx.cfg.paths.store());
    let (store, _) = TokenStore::load(&store_dir)?;
    let out = ctx.out_or(ctx.cfg.paths.train());
    let cfg = &mut ctx.cfg;
    if let Some(s) = ctx.seed {
        cfg.train.seed = s;
        cfg.model.seed = s;
    }
    if let Some(n) = steps {
        cfg.train.total_steps = n;
        if cfg.train.warmup_steps >= n {
            cfg.train.warmup_steps = n / 50;
            log::warn!("warmup shortened to {} steps", cfg.train.warmup_steps);
        }
    }
    if cfg.model.vocab_size != store.vocab_size {
        log::info!("model vocab_size set to the store's {}", store.vocab_size);
        cfg.model.vocab_size = store.vocab_size;
    }
    let mut trainer = match &resume {
        Some(p) => {
            let mut t = Trainer::resume_from_file(p, &store)?;
            t.config.total_steps = cfg.train.total_steps;
            cfg.model = t.state.params.config;
            cfg.train = TrainConfig {
                total_steps: cfg.train.total_steps,
                ..t.config
            };
            t
        }
        None => Trainer::new(cfg.train, &cfg.model, &store)?,
    };
    cfg.write_resolved(&out)?;

    let held = match heldout {
        Some(dir) => {
            let v = load_vocab(&vocab.unwrap_or_else(|| cfg.paths.vocab()))?;
            let (s, _) = TokenStore::load(&dir)?;
            s.check_vocab(&v)?;
            Some((s, v))
        }
        None => None,
    };
    let eval_log = out.join("heldout_bpb.jsonl");
    let outcome = fit(&mut trainer, Some(&out), |ck| {
        if let Some((s, v)) = &held {
            let bpb = bits_per_byte(&ck.state.params, s, v)?;
            log::info!("step {} held-out bits/byte {bpb:.4}", ck.state.step);
            let mut f = OpenOptions::new()
                .create(true)
                .append(true)
                .open(&eval_log)
                .map_err(|e| Error::io(&eval_log, e))?;
            writeln!(f, "{}", json!({"step": ck.state.step, "bits_per_byte": bpb}))
                .map_err(|e| Error::io(&eval_log, e))?;
        }
        Ok(())
    })?;
    let last = outcome.metrics.last();
    print_json(&json!({
        "steps": trainer.state.step,
        "final_loss": last.map(|m| m.loss),
        "checkpoints": outcome.checkpoint_paths,
        "params": trainer.state.params.len(),
    }));
    Ok(())
}

#[derive(Serialize)]
struct SampleRecord {
    index: usize,
    seed: u64,
    tokens: usize,
    outcome: codeclm::sample::DecodeOutcome,
    kept_mcus: u32,
    total_mcus: u32,
    file: Option<PathBuf>,
}

fn write_restored(dir: &Path, stem: &str, r: &RestoredSample, raw: &[u8]) -> Res<PathBuf> {
    let (p, bytes) = match &r.file {
        Some(f) => (dir.join(format!("{stem}.jpg")), f.as_slice()),
        None => (dir.join(format!("{stem}.bin")), raw),
    };
    io(&p, std::fs::write(&p, bytes))?;
    Ok(p)
}

pub fn sample(ctx: Ctx, model: ModelArgs, sampling: SamplingArgs, n: Option<usize>) -> Res {
    let m = load_model(&ctx, &model)?;
    let mut sc = sampling_config(&ctx, &sampling)?;
    sc.max_new_tokens = sc.max_new_tokens.min(m.params.config.max_context - 1);
    let n = n.unwrap_or(DEFAULT_SAMPLES);
    let out = ctx.out_or(ctx.cfg.paths.samples());
    io(&out, std::fs::create_dir_all(&out))?;
    let mut cfg = ctx.cfg.clone();
    cfg.sample = sc;
    cfg.write_resolved(&out)?;
    let records: Vec<Res<SampleRecord>> = (0..n)
        .into_par_iter()
        .map(|i| {
            let seed = mix_seed(sc.seed, i as u64);
            let toks = generate(&m.params, &[BOS], &SampleConfig { seed, ..sc })?;
            let r = restore_tokens(&toks, &m.vocab, &m.tables);
            let raw = m.vocab.decode(&toks).unwrap_or_default();
            let file = write_restored(&out, &format!("sample_{i:04}"), &r, &raw)?;
            Ok(SampleRecord {
                index: i,
                seed,
                tokens: toks.len(),
                outcome: r.outcome,
                kept_mcus: r.kept_mcus,
                total_mcus: r.total_mcus,
                file: Some(file),
            })
        })
        .collect();
    let lp = out.join("samples.jsonl");
    let mut f = io(&lp, std::fs::File::create(&lp))?;
    let mut counts = [0usize; 3];
    for r in records {
        let r = r?;
        counts[r.outcome as usize] += 1;
        io(&lp, writeln!(f, "{}", serde_json::to_string(&r).expect("record serializes")))?;
    }
    print_json(&json!({
        "checkpoint": m.checkpoint,
        "samples": n,
        "clean": counts[0],
        "salvaged": counts[1],
        "unrecoverable": counts[2],
        "out": out,
    }));
    Ok(())
}

pub fn complete(ctx: Ctx, image: PathBuf, ratio: f64, model: ModelArgs, sampling: SamplingArgs) -> Res {
    if !(0.0..=1.0).contains(&ratio) {
        return Err(CliError::Usage(format!("--ratio {ratio} outside [0, 1]")));
    }
    let m = load_model(&ctx, &model)?;
    let sc = sampling_config(&ctx, &sampling)?;
    let raw = io(&image, std::fs::read(&image))?;
    let file = if raw.starts_with(&[0xFF, 0xD8]) {
        raw
    } else {
        encode_image(&RgbImage::load(&image)?, &ctx.cfg.profile)?
    };
    let c = complete_image(&m.params, &file, ratio, &sc, &m.vocab, &m.tables)
        .map_err(|e| match e {
            Error::Jpeg(j) => Error::format(&image, j.to_string()),
            e => e,
        })?;
    let out = ctx.out_or(ctx.cfg.paths.completions());
    io(&out, std::fs::create_dir_all(&out))?;
    let mut cfg = ctx.cfg.clone();
    cfg.sample = sc;
    cfg.write_resolved(&out)?;
    let stem = image.file_stem().unwrap_or_default().to_string_lossy().into_owned();
    let src = out.join(format!("{stem}_source.jpg"));
    io(&src, std::fs::write(&src, &file))?;
    let raw_out = m.vocab.decode(&c.tokens).unwrap_or_default();
    let written = write_restored(&out, &format!("{stem}_r{:03}", (ratio * 100.0).round() as u32), &c.restored, &raw_out)?;
    let report = json!({
        "image": image,
        "ratio": ratio,
        "prompt_mcus": c.prompt_mcus,
        "prompt_tokens": c.prompt_tokens,
        "generated_tokens": c.tokens.len() - c.prompt_tokens,
        "outcome": c.restored.outcome,
        "kept_mcus": c.restored.kept_mcus,
        "total_mcus": c.restored.total_mcus,
        "output": written,
        "source": src,
    });
    write_json(&written.with_extension("json"), &report)?;
    print_json(&report);
    Ok(())
}

pub fn eval_bpb(ctx: Ctx, store: Option<PathBuf>, model: ModelArgs) -> Res {
    let m = load_model(&ctx, &model)?;
    let dir = store.unwrap_or_else(|| ctx.cfg.paths.heldout_store());
    let (s, _) = TokenStore::load(&dir)?;
    let bpb = bits_per_byte(&m.params, &s, &m.vocab)?;
    let out = ctx.out_or(ctx.cfg.paths.eval());
    io(&out, std::fs::create_dir_all(&out))?;
    ctx.cfg.write_resolved(&out)?;
    let report = json!({
        "checkpoint": m.checkpoint,
        "store": dir,
        "documents": s.doc_count(),
        "bits_per_byte": bpb,
    });
    write_json(&out.join("bpb.json"), &report)?;
    print_json(&report);
    Ok(())
}

pub fn eval_decode_rate(ctx: Ctx, model: ModelArgs, sampling: SamplingArgs, n: Option<usize>) -> Res {
    let m = load_model(&ctx, &model)?;
    let sc = sampling_config(&ctx, &sampling)?;
    let n = n.unwrap_or(ctx.cfg.eval.n_samples);
    if n == 0 {
        return Err(CliError::Usage("--n-samples must be at least 1".into()));
    }
    let r = decode_success_rate(&m.params, &sc, n, &m.vocab, &m.tables)?;
    let out = ctx.out_or(ctx.cfg.paths.eval());
    io(&out, std::fs::create_dir_all(&out))?;
    let mut cfg = ctx.cfg.clone();
    cfg.sample = sc;
    cfg.write_resolved(&out)?;
    let report = json!({
        "checkpoint": m.checkpoint,
        "top_k": sc.top_k,
        "top_p": sc.top_p,
        "temperature": sc.temperature,
        "report": r,
    });
    write_json(&out.join("decode_rate.json"), &report)?;
    print_json(&report);
    Ok(())
}

fn feature_stats(path: &Path, n: usize) -> Res<FeatureStats> {
    if path.is_file() {
        let mut e = Embeddings::load(path)?;
        if n > 0 {
            e.rows.truncate(n);
        }
        return Ok(e.stats()?);
    }
    let mut files = files_with_ext(path, &["jpg", "jpeg", "png", "raw"])?;
    if n > 0 {
        files.truncate(n);
    }
    let images: Vec<RgbImage> = files.iter().map(|p| load_any_image(p)).collect::<Res<_>>()?;
    let ex = DefaultExtractor;
    Ok(FeatureStats::from_features(ex.id(), &extract_all(&ex, &images))?)
}

pub fn eval_frechet(ctx: Ctx, a: PathBuf, b: PathBuf, n: Option<usize>) -> Res {
    let n = n.unwrap_or(ctx.cfg.eval.frechet_n);
    let sa = feature_stats(&a, n)?;
    let sb = feature_stats(&b, n)?;
    let d = frechet_distance(&sa, &sb)?;
    let out = ctx.out_or(ctx.cfg.paths.eval());
    io(&out, std::fs::create_dir_all(&out))?;
    ctx.cfg.write_resolved(&out)?;
    let report = json!({
        "a": a,
        "b": b,
        "n_a": sa.n,
        "n_b": sb.n,
        "extractor": sa.extractor,
        "dim": sa.dim(),
        "frechet_distance": d,
    });
    write_json(&out.join("frechet.json"), &report)?;
    print_json(&report);
    Ok(())
}

pub fn gallery(ctx: Ctx, inputs: Option<PathBuf>, cols: usize, n: Option<usize>) -> Res {
    let dir = inputs.unwrap_or_else(|| ctx.cfg.paths.samples());
    let mut files = files_with_ext(&dir, &["jpg", "jpeg", "png"])?;
    let n = n.unwrap_or(0);
    if n > 0 {
        files.truncate(n);
    }
    if files.is_empty() {
        return Err(Error::EmptyCorpus.into());
    }
    let images: Vec<RgbImage> = files.iter().map(|p| load_any_image(p)).collect::<Res<_>>()?;
    let tiled = RgbImage::tile(&images, cols.max(1))
        .ok_or_else(|| CliError::Usage("gallery images differ in size".into()))?;
    let out = ctx.out_or(ctx.cfg.paths.work.clone());
    io(&out, std::fs::create_dir_all(&out))?;
    let p = out.join("gallery.png");
    tiled.save_png(&p)?;
    print_json(&json!({
        "images": images.len(),
        "cols": cols.max(1),
        "width": tiled.width(),
        "height": tiled.height(),
        "gallery": p,
    }));
    Ok(())
}
