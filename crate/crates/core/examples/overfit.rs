//! Pre-trains a desk-scale model on a synthetic corpus and reports
//! training-set accuracy of both tasks.
//!
//! `cargo run --release -p av2v-core --example overfit -- [steps] [batch] [lr] [mask_rate] [teacher_forcing] [mlp_weight] [decoder_layers]`

use std::time::Instant;

use av2v::nn::{Model, ModelConfig};
use av2v::report::tokenize_report;
use av2v::synth::{generate_corpus, WorldSpec};
use av2v::train::{evaluate_pretraining, run_pretraining, TrainConfig, TrainSchedule};
use av2v::vocab::{count_tokens, Vocab};

fn main() {
    let args: Vec<String> = std::env::args().collect();
    let arg = |i: usize, d: f64| args.get(i).and_then(|s| s.parse().ok()).unwrap_or(d);
    let steps = arg(1, 2000.0) as usize;
    let schedule = TrainSchedule {
        batch_size: arg(2, 32.0) as usize,
        pretrain_lr: arg(3, 2e-3),
        epoch_length: steps,
        mask_rate: arg(4, 0.15),
        teacher_forcing: arg(5, 0.5),
        mlp_weight: arg(6, 1.0),
        ..Default::default()
    };

    let corpus = generate_corpus(&WorldSpec::with_seed(0)).expect("valid spec");
    let reports: Vec<_> = corpus
        .reports()
        .iter()
        .map(|r| tokenize_report(r, &corpus.roster, 7).expect("roster covers corpus"))
        .collect();
    let vocab = Vocab::build(&count_tokens(&reports), 50_000);
    println!("{} reports, vocab {}", reports.len(), vocab.len());
    let mut cfg = ModelConfig::desk(corpus.roster.len(), vocab.n_classes());
    cfg.n_enc_layers = 2;
    cfg.n_dec_layers = arg(7, 4.0) as usize;
    let mut model = Model::<f32>::new(cfg, vocab, 0).expect("valid config");
    let config = TrainConfig { schedule, pretrain_steps: steps, seed: 1, ..Default::default() };
    let start = Instant::now();
    run_pretraining(&mut model, &reports, &config, |rec, s| {
        if rec.step % 100 == 0 || rec.step + 1 == steps {
            println!(
                "step {} {:.1}s mtp {:.3} mlp {:.3} acc {:.3}/{:.3}",
                rec.step,
                start.elapsed().as_secs_f64(),
                s.mtp_loss,
                s.mlp_loss,
                s.mtp_accuracy(),
                s.mlp_accuracy()
            );
        }
    })
    .expect("training");
    let e = evaluate_pretraining(&model, &reports, 0.05, 7).expect("eval");
    println!("eval mtp {:.4} ({}) mlp {:.4} ({})", e.mtp_accuracy(), e.mtp_targets, e.mlp_accuracy(), e.mlp_tokens);
}
