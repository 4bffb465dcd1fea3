//! Trains several variants on one preset shape and prints test metrics.
//!
//! `cargo run --release --example compare_variants -- emb16-h1 csa qisa`
//! (append `-full` to the shape for the full-scale preset)

use qisa_lab::attention::Variant;
use qisa_lab::data::load_corpus;
use qisa_lab::experiment::{prepare_data, ExperimentConfig};
use qisa_lab::model::LanguageModel;
use qisa_lab::train::{evaluate_ce, evaluate_cer_wer, train};

fn main() -> qisa_lab::Result<()> {
    let mut args = std::env::args().skip(1);
    let shape = args.next().unwrap_or_else(|| "emb16-h1".into());
    let variants: Vec<Variant> = args.map(|a| a.parse()).collect::<Result<_, _>>()?;
    let (shape, suffix) = match shape.strip_suffix("-full") {
        Some(s) => (s.to_string(), "-full"),
        None => (shape, ""),
    };
    let text = load_corpus("data/shakespeare.txt".as_ref())?;
    for v in variants {
        let cfg = ExperimentConfig::preset(&format!("{shape}-{v}{suffix}"))?;
        let data = prepare_data(&text, cfg.corpus_fraction)?;
        let mut mc = cfg.model.clone();
        mc.vocab_size = data.vocab.len();
        let mut model = LanguageModel::new(mc)?;
        let out = train(&mut model, &data.split.train, &data.split.test, &cfg.train, |s, l| {
            if s % cfg.train.eval_every == 0 {
                eprintln!("{v} step {s} loss {l:.4}");
            }
        })?;
        let ce = evaluate_ce(&model, &data.split.test, None)?;
        let rates = evaluate_cer_wer(&model, &data.vocab, &data.split.test, &cfg.eval)?;
        println!(
            "{v:9} steps {} time {:.0}s  CE {:.3} ± {:.3}  CER {:.3} ± {:.3}  WER {:.3} ± {:.3}",
            out.steps, out.wall_time, ce.mean, ce.std, rates.cer.mean, rates.cer.std, rates.wer.mean, rates.wer.std
        );
        println!("    sample: {:?} -> {:?}", rates.samples[0].0, rates.samples[0].1);
    }
    Ok(())
}
