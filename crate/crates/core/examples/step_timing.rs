use std::time::Instant;

use qisa_lab::attention::Variant;
use qisa_lab::data::batch_iter;
use qisa_lab::experiment::prepare_data;
use qisa_lab::model::{LanguageModel, ModelConfig};

fn main() {
    let text = std::fs::read_to_string("data/shakespeare.txt").unwrap();
    let data = prepare_data(&text, 0.1).unwrap();
    let m: usize = std::env::args().nth(1).map_or(16, |s| s.parse().unwrap());
    for v in Variant::ALL {
        let model = LanguageModel::new(ModelConfig::paper(v, m, 1, data.vocab.len())).unwrap();
        let mut it = batch_iter(&data.split.train, 16, 64, 0).unwrap();
        let b = it.next().unwrap();
        let t = Instant::now();
        for _ in 0..3 {
            model.gradients(&b.inputs, &b.targets, 64, 16, None).unwrap();
        }
        let per = t.elapsed().as_secs_f64() / 3.0;
        println!(
            "{v:9} m={m} micro-batch 64: {:.1} ms  (batch 256 ≈ {:.2} s)",
            per * 1e3,
            per * 4.0
        );
    }
}
