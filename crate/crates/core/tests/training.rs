use av2v::nn::{AdamW, Model, ModelConfig};
use av2v::report::{tokenize_report, DEFAULT_SLOT_LEN};
use av2v::synth::{generate_corpus, WorldSpec};
use av2v::train::{prepare_batch, pretrain_step_prepared, TrainSchedule};
use av2v::vocab::{count_tokens, Vocab};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

#[test]
fn full_batch_loss_mostly_decreases() {
    let spec = WorldSpec { samples_per_family: 10, ..WorldSpec::with_seed(3) };
    let corpus = generate_corpus(&spec).unwrap();
    let reports: Vec<_> =
        corpus.reports().iter().map(|r| tokenize_report(r, &corpus.roster, DEFAULT_SLOT_LEN).unwrap()).collect();
    assert_eq!(reports.len(), 200);
    let vocab = Vocab::build(&count_tokens(&reports), 50_000);
    let mut cfg = ModelConfig::desk(corpus.roster.len(), vocab.n_classes());
    cfg.n_enc_layers = 2;
    cfg.n_dec_layers = 2;
    let mut model = Model::<f32>::new(cfg, vocab, 0).unwrap();
    let schedule = TrainSchedule { mask_rate: 0.15, ..Default::default() };
    let mut opt = AdamW::new(&model.params, schedule.weight_decay);
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let (samples, seed) = prepare_batch(&model, &reports, schedule.mask_rate, schedule.teacher_forcing, false, &mut rng);
    let losses: Vec<f64> = (0..51)
        .map(|_| pretrain_step_prepared(&mut model, &mut opt, &samples, &schedule, 1e-3, seed).unwrap().total_loss)
        .collect();
    let decreases = losses.windows(2).filter(|w| w[1] < w[0]).count();
    assert!(decreases >= 45, "{decreases}/50 decreasing steps: {losses:?}");
}
