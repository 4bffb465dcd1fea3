//! Per-step timing of training and inference, with and without the
//! observable cache.

use std::path::Path;
use std::time::Instant;

use anyhow::Result;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use qisa_lab::attention::Variant;
use qisa_lab::data::Batch;
use qisa_lab::experiment::ExperimentConfig;
use qisa_lab::model::{random_tokens, LanguageModel};
use qisa_lab::train::{train_step, Adam, Stat};
use qisa_lab::Error;

use crate::run::{self, RunManifest};
use crate::svg;
use crate::ExperimentArgs;

pub const WARMUP: usize = 10;
pub const MEASURED: usize = 50;

/// Vocabulary size used when the config leaves it open; timing does not
/// depend on token values.
const BENCH_VOCAB: usize = 65;

pub const BENCH_CSV_HEADER: &str = "variant,phase,batch,iterations,median_s,mean_s,min_s,max_s";

#[derive(Clone, Debug)]
pub struct Timing {
    pub variant: Variant,
    pub phase: &'static str,
    pub batch: usize,
    pub samples: Vec<f64>,
}

impl Timing {
    pub fn median(&self) -> f64 {
        let mut s = self.samples.clone();
        s.sort_by(f64::total_cmp);
        let n = s.len();
        match n {
            0 => f64::NAN,
            _ if n % 2 == 1 => s[n / 2],
            _ => 0.5 * (s[n / 2 - 1] + s[n / 2]),
        }
    }

    pub fn csv(&self) -> String {
        let st = Stat::from_samples(&self.samples);
        let min = self.samples.iter().cloned().fold(f64::INFINITY, f64::min);
        let max = self.samples.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        format!(
            "{},{},{},{},{:.6e},{:.6e},{min:.6e},{max:.6e}",
            self.variant,
            self.phase,
            self.batch,
            self.samples.len(),
            self.median(),
            st.mean
        )
    }
}

/// Runs `f` `warmup` times untimed, then `iters` times timed.
fn time(warmup: usize, iters: usize, mut f: impl FnMut() -> Result<()>) -> Result<Vec<f64>> {
    for _ in 0..warmup {
        f()?;
    }
    let mut out = Vec::with_capacity(iters);
    for _ in 0..iters {
        let t = Instant::now();
        f()?;
        out.push(t.elapsed().as_secs_f64());
    }
    Ok(out)
}

fn bench_variant(
    base: &ExperimentConfig,
    variant: Variant,
    batch: usize,
    warmup: usize,
    iters: usize,
) -> Result<Vec<Timing>> {
    let mut mc = base.model.clone();
    mc.variant = variant;
    if mc.vocab_size == 0 {
        mc.vocab_size = BENCH_VOCAB;
    }
    let mut model = LanguageModel::new(mc.clone())?;
    let l = mc.context;
    let mut rng = ChaCha8Rng::seed_from_u64(mc.seed);
    let data = Batch {
        inputs: random_tokens(&mut rng, mc.vocab_size, batch * l),
        targets: random_tokens(&mut rng, mc.vocab_size, batch * l),
        batch,
        len: l,
    };
    let timing = |phase, samples| Timing {
        variant,
        phase,
        batch,
        samples,
    };
    let mut out = Vec::new();

    let mut adam = Adam::new(base.train.lr, base.train.betas, base.train.eps);
    let mut drop_rng = ChaCha8Rng::seed_from_u64(0);
    let samples = time(warmup, iters, || {
        train_step(&mut model, &mut adam, &data, &base.train, &mut drop_rng)?;
        Ok(())
    })?;
    out.push(timing("train", samples));

    let samples = time(warmup, iters, || {
        model.logits(&data.inputs, batch, l)?;
        Ok(())
    })?;
    out.push(timing("infer", samples));

    if variant.is_quantum() {
        let t = Instant::now();
        let cache = model.build_cache()?;
        out.push(timing("cache_build", vec![t.elapsed().as_secs_f64()]));
        let cached = model.with_cache(&cache)?;
        let a = model.logits(&data.inputs, batch, l)?;
        let b = cached.logits(&data.inputs, batch, l)?;
        let worst = a
            .data()
            .iter()
            .zip(b.data())
            .map(|(x, y)| (x - y).abs())
            .fold(0.0, f64::max);
        log::info!("{variant}: max |cached − uncached| = {worst:.3e}");
        if worst > 1e-10 {
            return Err(Error::Numeric(format!("{variant} cached inference deviates by {worst:e}")).into());
        }
        let samples = time(warmup, iters, || {
            cached.logits(&data.inputs, batch, l)?;
            Ok(())
        })?;
        out.push(timing("infer_cached", samples));
    }
    Ok(out)
}

pub fn run(
    args: &ExperimentArgs,
    variants: &[Variant],
    batch: usize,
    warmup: usize,
    iters: usize,
    out_dir: &Path,
) -> Result<()> {
    if batch == 0 || iters == 0 {
        return Err(Error::Config("bench needs a positive --batch and --iters".into()).into());
    }
    let base = match run::resolve(args)? {
        Some(cfg) => cfg,
        None => run::apply_overrides(ExperimentConfig::preset("emb16-h1-qisa")?, args),
    };
    let variants = if variants.is_empty() {
        Variant::ALL.to_vec()
    } else {
        variants.to_vec()
    };
    std::fs::create_dir_all(out_dir)?;
    let mut manifest = RunManifest::new("bench", base.clone());
    let mut all = Vec::new();
    for &v in &variants {
        log::info!("timing {v} at batch {batch}: {warmup} warmup + {iters} measured steps");
        let t = Instant::now();
        let rows = bench_variant(&base, v, batch, warmup, iters)?;
        manifest.timings.insert(v.to_string(), t.elapsed().as_secs_f64());
        for r in &rows {
            println!("{:<10} {:<13} median {:>10.3} ms", r.variant, r.phase, r.median() * 1e3);
        }
        all.extend(rows);
    }

    let csv_path = out_dir.join("bench.csv");
    let mut csv = String::from(BENCH_CSV_HEADER);
    csv.push('\n');
    for r in &all {
        csv.push_str(&r.csv());
        csv.push('\n');
    }
    std::fs::write(&csv_path, csv)?;
    manifest.outputs.insert("bench_csv".into(), csv_path);

    let phases = ["train", "infer", "infer_cached"];
    let groups: Vec<(String, Vec<Option<f64>>)> = variants
        .iter()
        .map(|&v| {
            let vals = phases
                .iter()
                .map(|p| {
                    all.iter()
                        .find(|r| r.variant == v && r.phase == *p)
                        .map(|r| r.median() * 1e3)
                })
                .collect();
            (v.to_string(), vals)
        })
        .collect();
    let title = format!(
        "median step time, batch {batch}, m={} H={}",
        base.model.embedding_size, base.model.heads
    );
    let svg_path = out_dir.join("bench.svg");
    std::fs::write(&svg_path, svg::bar_chart(&title, "milliseconds", &groups, &phases))?;
    manifest.outputs.insert("bench_svg".into(), svg_path);
    manifest.write(out_dir)?;
    Ok(())
}
