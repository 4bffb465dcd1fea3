//! Subcommand implementations other than `bench`.

use std::path::{Path, PathBuf};
use std::time::Instant;

use anyhow::{Context, Result};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use qisa_lab::attention::{count_params, init_weights, AttentionSpec, Variant};
use qisa_lab::data::{load_corpus, Vocab, CORPUS_URL};
use qisa_lab::experiment::{prepare_data, ExperimentConfig, PreparedData};
use qisa_lab::model::{random_tokens, Checkpoint, LanguageModel, ModelConfig, Predictor};
use qisa_lab::quantum::ObservableCache;
use qisa_lab::train::{
    evaluate_ce, evaluate_cer_wer, generate as continue_text, rows_to_csv, train as run_training, Decoding,
    MetricsReport,
};
use qisa_lab::Error;

use crate::run::{self, corpus_path, write_json, RunManifest, EXPERIMENT_FILE};
use crate::svg;
use crate::ExperimentArgs;

/// Samples of greedy continuations kept in `summary.json`.
const SUMMARY_SAMPLES: usize = 5;

pub const CACHE_FILE: &str = "observables.qobs";

#[derive(Serialize)]
struct Sample {
    reference: String,
    hypothesis: String,
}

/// `summary.json` / `eval.json`.
#[derive(Serialize)]
struct Summary {
    variant: Variant,
    parameter_hash: String,
    total_params: usize,
    cached: bool,
    #[serde(flatten)]
    metrics: MetricsReport,
    samples: Vec<Sample>,
}

/// Loads the corpus and fixes the model's vocabulary size against it.
fn load_data(cfg: &mut ExperimentConfig) -> Result<PreparedData> {
    let path = corpus_path(cfg);
    let text = load_corpus(&path)?;
    let data = prepare_data(&text, cfg.corpus_fraction)?;
    match cfg.model.vocab_size {
        0 => cfg.model.vocab_size = data.vocab.len(),
        v if v != data.vocab.len() => {
            return Err(Error::Config(format!(
                "model.vocab_size is {v} but {} has {} distinct characters",
                path.display(),
                data.vocab.len()
            ))
            .into())
        }
        _ => {}
    }
    cfg.corpus = Some(path);
    Ok(data)
}

fn metrics(
    model: &dyn Predictor,
    data: &PreparedData,
    cfg: &ExperimentConfig,
    windows: Option<usize>,
    steps: usize,
    wall_time: f64,
) -> Result<(MetricsReport, Vec<Sample>)> {
    let ce = evaluate_ce(model, &data.split.test, windows)?;
    let rates = evaluate_cer_wer(model, &data.vocab, &data.split.test, &cfg.eval)?;
    let samples = rates
        .samples
        .into_iter()
        .take(SUMMARY_SAMPLES)
        .map(|(reference, hypothesis)| Sample { reference, hypothesis })
        .collect();
    let report = MetricsReport {
        ce,
        cer: rates.cer,
        wer: rates.wer,
        steps,
        wall_time,
    };
    Ok((report, samples))
}

fn print_report(label: &str, r: &MetricsReport) {
    println!("{label}");
    println!("  CE   {:.4} ± {:.4}  (n={})", r.ce.mean, r.ce.std, r.ce.n);
    println!("  CER  {:.4} ± {:.4}  (n={})", r.cer.mean, r.cer.std, r.cer.n);
    println!("  WER  {:.4} ± {:.4}  (n={})", r.wer.mean, r.wer.std, r.wer.n);
}

pub fn train(args: &ExperimentArgs, out_dir: &Path, max_steps: Option<usize>, skip_metrics: bool) -> Result<()> {
    let t0 = Instant::now();
    let mut cfg =
        run::resolve(args)?.ok_or_else(|| Error::Config("train needs --config <file> or --preset <name>".into()))?;
    if max_steps.is_some() {
        cfg.train.max_steps = max_steps;
    }
    cfg.check()?;
    let data = load_data(&mut cfg)?;
    std::fs::create_dir_all(out_dir).with_context(|| format!("creating {}", out_dir.display()))?;
    let mut manifest = RunManifest::new("train", cfg.clone());
    let config_path = out_dir.join("config.json");
    write_json(&config_path, &cfg)?;
    manifest.outputs.insert("config".into(), config_path);

    let mut model = LanguageModel::new(cfg.model.clone())?;
    log::info!(
        "{} m={} H={} layers={}: {} parameters, {} train / {} test tokens",
        cfg.model.variant,
        cfg.model.embedding_size,
        cfg.model.heads,
        cfg.model.layers,
        model.total_param_count(),
        data.split.train.len(),
        data.split.test.len()
    );
    let every = cfg.train.eval_every.max(1);
    let outcome = run_training(
        &mut model,
        &data.split.train,
        &data.split.test,
        &cfg.train,
        |step, loss| {
            if step % every == 0 {
                log::info!("step {step} loss {loss:.4}");
            }
        },
    )?;
    manifest.timings.insert("train".into(), outcome.wall_time);
    log::info!("trained {} steps in {:.1}s", outcome.steps, outcome.wall_time);

    let ckpt_dir = out_dir.join("checkpoint");
    let ckpt = Checkpoint::new(model, data.vocab.clone())?;
    ckpt.save(&ckpt_dir)?;
    write_json(&ckpt_dir.join(EXPERIMENT_FILE), &cfg)?;
    manifest.outputs.insert("checkpoint".into(), ckpt_dir);

    let csv_path = out_dir.join("loss.csv");
    std::fs::write(&csv_path, rows_to_csv(&outcome.rows))?;
    manifest.outputs.insert("loss_csv".into(), csv_path);
    let svg_path = out_dir.join("loss.svg");
    let title = format!(
        "{} m={} H={}",
        cfg.model.variant, cfg.model.embedding_size, cfg.model.heads
    );
    std::fs::write(&svg_path, svg::loss_chart(&outcome.rows, &title))?;
    manifest.outputs.insert("loss_svg".into(), svg_path);

    if !skip_metrics {
        let t = Instant::now();
        let (report, samples) = metrics(&ckpt.model, &data, &cfg, None, outcome.steps, outcome.wall_time)?;
        manifest.timings.insert("eval".into(), t.elapsed().as_secs_f64());
        print_report(&format!("{title}: test metrics"), &report);
        let summary = Summary {
            variant: cfg.model.variant,
            parameter_hash: ckpt.model.param_hash(),
            total_params: ckpt.model.total_param_count(),
            cached: false,
            metrics: report,
            samples,
        };
        let path = out_dir.join("summary.json");
        write_json(&path, &summary)?;
        manifest.outputs.insert("summary".into(), path);
    }
    manifest.timings.insert("total".into(), t0.elapsed().as_secs_f64());
    let path = manifest.write(out_dir)?;
    log::info!("wrote {}", path.display());
    Ok(())
}

/// Architecture fields must agree; seed and dropout only matter in training.
fn same_architecture(a: &ModelConfig, b: &ModelConfig) -> bool {
    let mut a = a.clone();
    a.seed = b.seed;
    a.dropout = b.dropout;
    if a.vocab_size == 0 {
        a.vocab_size = b.vocab_size;
    }
    &a == b
}

pub fn eval(
    checkpoint: &Path,
    args: &ExperimentArgs,
    cached: bool,
    windows: Option<usize>,
    out_dir: Option<&Path>,
) -> Result<()> {
    let ckpt = Checkpoint::load(checkpoint)?;
    let stored = checkpoint.join(EXPERIMENT_FILE);
    let mut cfg = match run::resolve(args)? {
        Some(cfg) => cfg,
        None if stored.exists() => run::apply_overrides(run::read_config(&stored)?, args),
        None => run::apply_overrides(
            ExperimentConfig {
                model: ckpt.model.config().clone(),
                train: qisa_lab::train::TrainConfig::new(1, 1),
                corpus: None,
                corpus_fraction: 1.0,
                eval: Default::default(),
            },
            args,
        ),
    };
    if !same_architecture(&cfg.model, ckpt.model.config()) {
        return Err(Error::Version(format!(
            "checkpoint {} was trained with {:?}, the config describes {:?}",
            checkpoint.display(),
            ckpt.model.config(),
            cfg.model
        ))
        .into());
    }
    cfg.model = ckpt.model.config().clone();
    let data = load_data(&mut cfg)?;
    if data.vocab != ckpt.vocab {
        return Err(Error::Version(format!(
            "checkpoint vocabulary {:?} differs from the corpus vocabulary {:?}",
            ckpt.vocab.as_string(),
            data.vocab.as_string()
        ))
        .into());
    }
    let t = Instant::now();
    let cache;
    let (report, samples) = if cached {
        cache = ckpt.model.build_cache()?;
        let model = ckpt.model.with_cache(&cache)?;
        metrics(&model, &data, &cfg, windows, 0, 0.0)?
    } else {
        metrics(&ckpt.model, &data, &cfg, windows, 0, 0.0)?
    };
    log::info!("evaluated in {:.1}s", t.elapsed().as_secs_f64());
    print_report(&format!("{}: test metrics", checkpoint.display()), &report);
    let summary = Summary {
        variant: cfg.model.variant,
        parameter_hash: ckpt.model.param_hash(),
        total_params: ckpt.model.total_param_count(),
        cached,
        metrics: report,
        samples,
    };
    println!("{}", serde_json::to_string_pretty(&summary)?);
    if let Some(dir) = out_dir {
        std::fs::create_dir_all(dir)?;
        write_json(&dir.join("eval.json"), &summary)?;
    }
    Ok(())
}

pub fn generate(checkpoint: &Path, prompt: &str, chars: usize, temperature: Option<f64>, seed: u64) -> Result<()> {
    let ckpt = Checkpoint::load(checkpoint)?;
    let mut ids = ckpt.vocab.encode(prompt)?;
    if ids.is_empty() {
        return Err(Error::Config("prompt is empty".into()).into());
    }
    let l = ckpt.model.config().context;
    if ids.len() > l {
        ids.drain(..ids.len() - l);
    }
    let mode = match temperature {
        Some(t) => Decoding::Sample { temperature: t, seed },
        None => Decoding::Greedy,
    };
    let out = continue_text(&ckpt.model, &ids, chars, mode)?;
    println!("{prompt}{}", ckpt.vocab.decode(&out)?);
    Ok(())
}

#[derive(Serialize)]
struct ParamRow {
    variant: String,
    per_head: Option<usize>,
    output: Option<usize>,
    total: Option<usize>,
    introspected: Option<usize>,
    note: String,
}

fn param_row(v: Variant, m: usize, h: usize, p: usize, l: usize) -> ParamRow {
    let spec = match AttentionSpec::new(v, m, h, l, p) {
        Ok(s) => s,
        Err(e) => {
            return ParamRow {
                variant: v.to_string(),
                per_head: None,
                output: None,
                total: None,
                introspected: None,
                note: e.to_string(),
            }
        }
    };
    let c = count_params(&spec);
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let introspected = init_weights(&spec, &mut rng)
        .map(|w| w.iter().map(|t| t.numel()).sum::<usize>())
        .ok();
    let note = match introspected {
        Some(n) if n == c.total => "ok".into(),
        Some(n) => format!("MISMATCH: tensors hold {n}"),
        None => "could not build weights".into(),
    };
    ParamRow {
        variant: v.to_string(),
        per_head: Some(c.per_head),
        output: Some(c.output),
        total: Some(c.total),
        introspected,
        note,
    }
}

pub fn params(
    args: &ExperimentArgs,
    embedding: Option<usize>,
    heads: Option<usize>,
    ansatz_layers: Option<usize>,
    context: Option<usize>,
    csv: bool,
) -> Result<()> {
    let base = run::resolve(args)?.map(|c| c.model);
    let pick = |flag: Option<usize>, from: fn(&ModelConfig) -> usize, default: usize| {
        flag.or(base.as_ref().map(from)).unwrap_or(default)
    };
    let m = pick(embedding, |c| c.embedding_size, 16);
    let h = pick(heads, |c| c.heads, 1);
    let p = pick(ansatz_layers, |c| c.ansatz_layers, 1);
    let l = pick(context, |c| c.context, 16);
    let rows: Vec<ParamRow> = Variant::ALL.iter().map(|&v| param_row(v, m, h, p, l)).collect();
    let show = |x: Option<usize>| x.map_or("-".to_string(), |n| n.to_string());
    if csv {
        println!("variant,m,heads,ansatz_layers,context,per_head,output,total,introspected");
        for r in &rows {
            println!(
                "{},{m},{h},{p},{l},{},{},{},{}",
                r.variant,
                show(r.per_head),
                show(r.output),
                show(r.total),
                show(r.introspected)
            );
        }
    } else {
        println!("attention parameters at m={m}, H={h}, p={p}, l={l}");
        println!(
            "{:<10} {:>9} {:>8} {:>9} {:>12}  check",
            "variant", "per head", "output", "total", "introspected"
        );
        for r in &rows {
            println!(
                "{:<10} {:>9} {:>8} {:>9} {:>12}  {}",
                r.variant,
                show(r.per_head),
                show(r.output),
                show(r.total),
                show(r.introspected),
                r.note
            );
        }
    }
    if rows.iter().any(|r| r.note.starts_with("MISMATCH")) {
        anyhow::bail!("closed-form and introspected counts disagree");
    }
    Ok(())
}

pub fn cache(checkpoint: &Path, out: Option<&Path>, verify_batches: usize) -> Result<()> {
    let ckpt = Checkpoint::load(checkpoint)?;
    let model = &ckpt.model;
    let t = Instant::now();
    let cache = model.build_cache()?;
    log::info!(
        "built {} cache entries in {:.3}s",
        cache.len(),
        t.elapsed().as_secs_f64()
    );
    let path: PathBuf = out.map_or_else(|| checkpoint.join(CACHE_FILE), Path::to_path_buf);
    cache.save(&path)?;
    let reloaded = ObservableCache::load(&path)?;
    let cached = model.with_cache(&reloaded)?;
    let cfg = model.config();
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let mut worst = 0.0f64;
    for _ in 0..verify_batches {
        let batch = 4;
        let tokens = random_tokens(&mut rng, cfg.vocab_size, batch * cfg.context);
        let a = model.logits(&tokens, batch, cfg.context)?;
        let b = cached.logits(&tokens, batch, cfg.context)?;
        for (x, y) in a.data().iter().zip(b.data()) {
            worst = worst.max((x - y).abs());
        }
    }
    println!(
        "wrote {} ({} entries); max |cached − uncached| over {verify_batches} batches: {worst:.3e}",
        path.display(),
        cache.len()
    );
    if worst > 1e-10 {
        return Err(Error::Numeric(format!("cached inference deviates by {worst:e}")).into());
    }
    Ok(())
}

pub fn fetch_corpus_info(corpus: &Path) -> Result<()> {
    println!("This lab trains on a plain-text Shakespeare corpus (UTF-8).");
    println!("Download one, for example:");
    println!("  curl -L -o {} {CORPUS_URL}", corpus.display());
    println!("then pass --corpus <file> or set \"corpus\" in the config.");
    match load_corpus(corpus) {
        Ok(text) => {
            let vocab = Vocab::build(&text)?;
            println!(
                "\n{}: {} characters, vocabulary of {}",
                corpus.display(),
                text.chars().count(),
                vocab.len()
            );
        }
        Err(_) => println!("\n{} is not present yet.", corpus.display()),
    }
    Ok(())
}
