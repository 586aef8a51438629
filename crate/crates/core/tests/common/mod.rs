#![allow(dead_code)]

use std::collections::HashMap;

use av2v::nn::{Graph, Model, ModelConfig, ParamGrads};
use av2v::report::{TokenEntry, TokenizedReport};
use av2v::train::{finetune_grads, pretrain_grads, MaskAction, MaskPlan, MaskTarget, PretrainSample, TrainSchedule};
use av2v::vocab::{make_adaptive_spec, Vocab, CLASS_OFFSET};
use ndarray::{Array1, Array2, ArrayView1, ArrayView2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub const FD_STEP: f64 = 1e-5;

/// Small f64 model with a two-cluster output layer.
pub fn tiny_model(seed: u64) -> Model<f64> {
    let tokens: Vec<String> = (0..40).map(|i| format!("tok{i}")).collect();
    let vocab = Vocab::from_tokens(tokens).unwrap();
    let mut cfg = ModelConfig::with_dim(3, vocab.n_classes(), 8);
    cfg.slot_len = 5;
    cfg.n_enc_layers = 1;
    cfg.n_heads = 2;
    cfg.ffn_dim = 16;
    cfg.n_dec_layers = 2;
    cfg.adaptive = make_adaptive_spec(vocab.n_classes(), &[0.25]).unwrap();
    Model::new(cfg, vocab, seed).unwrap()
}

pub fn plain(s: &str) -> TokenEntry {
    TokenEntry::Plain(s.into())
}

/// Report over 3 AVs with slot length 5 built from per-AV token lists
/// (`None` = abstain, empty = benign).
pub fn report(slots: [Option<&[&str]>; 3]) -> TokenizedReport {
    let mut e = vec![TokenEntry::Cls];
    for (av, slot) in slots.iter().enumerate() {
        e.push(TokenEntry::Sos(av));
        let body: Vec<TokenEntry> = match slot {
            None => vec![TokenEntry::Abs, TokenEntry::Eos],
            Some([]) => vec![TokenEntry::Ben, TokenEntry::Eos],
            Some(toks) => toks.iter().map(|t| plain(t)).chain([TokenEntry::Eos]).collect(),
        };
        let pad = 4 - body.len();
        e.extend(body);
        e.extend(std::iter::repeat_n(TokenEntry::Pad, pad));
    }
    TokenizedReport::from_entries(3, 5, e)
}

pub fn sample_reports() -> Vec<TokenizedReport> {
    vec![
        report([Some(&["tok1", "tok7", "tok30"]), Some(&["tok2", "tok7"]), None]),
        report([Some(&[]), Some(&["tok39", "tok7", "tok12"]), Some(&["tok0"])]),
        report([None, Some(&["tok5"]), Some(&["tok5", "tok22", "tok9"])]),
    ]
}

/// Hand-built pre-training samples: fixed masks, fixed holdouts.
pub fn fixed_samples(model: &Model<f64>, teacher_forced: bool) -> Vec<PretrainSample> {
    let v = model.vocab();
    let class = |t: &str| v.id(t).unwrap() + CLASS_OFFSET;
    let reports = sample_reports();
    let mask = |r: &TokenizedReport, p: usize, action: MaskAction| {
        let t = class(r.entries()[p].as_plain().unwrap());
        MaskTarget { position: p, action, target: t }
    };
    let plan0 = MaskPlan { targets: vec![mask(&reports[0], 2, MaskAction::Mask), mask(&reports[0], 4, MaskAction::Keep)], propagated: vec![8] };
    let plan1 = MaskPlan { targets: vec![mask(&reports[1], 8, MaskAction::Random(3))], propagated: vec![] };
    let plan2 = MaskPlan { targets: vec![], propagated: vec![] };
    let holdouts = [(1usize, vec![class("tok2"), class("tok7"), 0]), (0, vec![1, 0]), (2, vec![class("tok5"), class("tok22"), class("tok9"), 0])];
    reports
        .iter()
        .zip([plan0, plan1, plan2])
        .zip(holdouts)
        .map(|((r, plan), (av, target))| {
            let held = av2v::train::apply_holdout(r, av);
            PretrainSample { input: plan.apply(&held, v), plan, holdout: Some((av, target)), teacher_forced }
        })
        .collect()
}

/// Largest relative error between analytic and central-difference
/// gradients over `per_tensor` random entries of every parameter tensor.
pub fn fd_max_rel_error(
    model: &Model<f64>,
    analytic: &ParamGrads<f64>,
    loss: &dyn Fn(&Model<f64>) -> f64,
    per_tensor: usize,
    seed: u64,
) -> (f64, String) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst = (0.0, String::new());
    let mut m = model.clone();
    for id in model.params.ids() {
        let (rows, cols) = model.params.get(id).dim();
        for _ in 0..per_tensor {
            let (r, c) = (rng.random_range(0..rows), rng.random_range(0..cols));
            let orig = m.params.get(id)[[r, c]];
            m.params.get_mut(id)[[r, c]] = orig + FD_STEP;
            let up = loss(&m);
            m.params.get_mut(id)[[r, c]] = orig - FD_STEP;
            let down = loss(&m);
            m.params.get_mut(id)[[r, c]] = orig;
            let numeric = (up - down) / (2.0 * FD_STEP);
            let a = analytic.get(id).map_or(0.0, |g| g[[r, c]]);
            let scale = a.abs().max(numeric.abs());
            let err = if scale < 1e-6 { (a - numeric).abs() * 1e2 } else { (a - numeric).abs() / scale };
            if err > worst.0 {
                worst = (err, format!("{}[{r},{c}] analytic {a:e} numeric {numeric:e}", model.params.name(id)));
            }
        }
    }
    worst
}

pub fn schedule(mtp_weight: f64, mlp_weight: f64) -> TrainSchedule {
    TrainSchedule { mtp_weight, mlp_weight, ..Default::default() }
}

/// Named gradient checks; each returns the worst relative error.
pub fn gradient_suite(per_tensor: usize) -> Vec<(&'static str, f64, String)> {
    let model = tiny_model(5);
    let mut out = Vec::new();
    let cases: [(&'static str, f64, f64, bool); 4] = [
        ("masked-token NLL", 1.0, 0.0, true),
        ("decoder NLL (teacher forced)", 0.0, 1.0, true),
        ("decoder NLL (own predictions)", 0.0, 1.0, false),
        ("combined pre-training loss", 1.0, 1.0, false),
    ];
    for (name, wm, wl, tf) in cases {
        let samples = fixed_samples(&model, tf);
        let sch = schedule(wm, wl);
        let (_, grads) = pretrain_grads(&model, &samples, &sch, 0).unwrap();
        let grads = grads.unwrap();
        let f = |m: &Model<f64>| pretrain_grads(m, &samples, &sch, 0).unwrap().0.total_loss;
        let (e, at) = fd_max_rel_error(&model, &grads, &f, per_tensor, 1);
        out.push((name, e, at));
    }
    let reports = sample_reports();
    let anchors = vec![reports[0].clone(), reports[1].clone(), reports[2].clone()];
    let positives = vec![reports[1].clone(), reports[2].clone(), reports[0].clone()];
    let (_, grads) = finetune_grads(&model, &anchors, &positives, 0.0, 0).unwrap();
    let f = |m: &Model<f64>| finetune_grads(m, &anchors, &positives, 0.0, 0).unwrap().0;
    let (e, at) = fd_max_rel_error(&model, &grads, &f, per_tensor, 2);
    out.push(("MNR loss through the Siamese encoder", e, at));
    out
}

/// Adaptive-softmax log-probabilities recomputed from raw parameters.
pub fn adaptive_oracle(model: &Model<f64>, h: ArrayView1<'_, f64>) -> Array1<f64> {
    let out = &model.modules.output;
    let p = &model.params;
    let spec = &out.spec;
    let log_softmax = |z: Array1<f64>| {
        let m = z.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let lse = m + z.iter().map(|v| (v - m).exp()).sum::<f64>().ln();
        z.mapv(|v| v - lse)
    };
    let mut head = h.dot(p.get(out.head.weight));
    if let Some(b) = out.head.bias {
        head += &p.get(b).row(0);
    }
    let head = log_softmax(head);
    let mut lp = Array1::zeros(spec.size);
    let c0 = spec.head_size();
    for c in 0..c0 {
        lp[c] = head[c];
    }
    for (i, &(proj, o)) in out.tails.iter().enumerate() {
        let z = h.dot(p.get(proj)).dot(p.get(o));
        let t = log_softmax(z);
        let (lo, _) = spec.tail_range(i);
        for (j, v) in t.iter().enumerate() {
            lp[lo + j] = v + head[c0 + i];
        }
    }
    lp
}

/// Model with `V + 2 = 100` output classes split into head and one tail.
pub fn adaptive_model(seed: u64) -> Model<f64> {
    let tokens: Vec<String> = (0..98).map(|i| format!("w{i}")).collect();
    let vocab = Vocab::from_tokens(tokens).unwrap();
    let mut cfg = ModelConfig::with_dim(2, vocab.n_classes(), 16);
    cfg.n_enc_layers = 1;
    cfg.n_dec_layers = 1;
    cfg.adaptive = make_adaptive_spec(vocab.n_classes(), &[0.2]).unwrap();
    Model::new(cfg, vocab, seed).unwrap()
}

/// Worst NLL and normalization errors of the adaptive output layer over
/// `probes` random hidden states.
pub fn adaptive_errors(probes: usize, seed: u64) -> (f64, f64) {
    let model = adaptive_model(seed);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let h = Array2::from_shape_fn((probes, 16), |_| rng.random_range(-3.0..3.0));
    let targets: Vec<usize> = (0..probes).map(|_| rng.random_range(0..100)).collect();
    let mut g = Graph::new(&model.params);
    let hv = g.input(h.clone());
    let lp = model.modules.output.log_probs(&mut g, hv);
    let nll = model.modules.output.nll(&mut g, hv, &targets);
    let lp = g.value(lp).to_owned();
    let mut nll_oracle = 0.0;
    let mut norm_err: f64 = 0.0;
    let mut pointwise: f64 = 0.0;
    for (r, &t) in targets.iter().enumerate() {
        let o = adaptive_oracle(&model, h.row(r));
        nll_oracle -= o[t];
        norm_err = norm_err.max((lp.row(r).iter().map(|v| v.exp()).sum::<f64>() - 1.0).abs());
        pointwise = pointwise.max((&o - &lp.row(r)).iter().fold(0.0, |a: f64, v| a.max(v.abs())));
    }
    let nll_err = (g.scalar(nll) - nll_oracle).abs() / probes as f64;
    (nll_err.max(pointwise), norm_err)
}

/// Exact k-NN by full scan; ties by ascending index.
pub fn brute_knn(x: ArrayView2<'_, f64>, q: ArrayView1<'_, f64>, k: usize) -> Vec<(usize, f64)> {
    let mut d: Vec<(usize, f64)> =
        x.rows().into_iter().enumerate().map(|(i, r)| (i, (&r - &q).mapv(|v| v * v).sum().sqrt())).collect();
    d.sort_by(|a, b| a.1.total_cmp(&b.1).then(a.0.cmp(&b.0)));
    d.truncate(k);
    d
}

/// Naive complete-linkage agglomeration: repeatedly merge the closest pair
/// of clusters (smallest indices on ties) until `k` remain.
pub fn naive_hac(x: ArrayView2<'_, f64>, k: usize) -> Vec<usize> {
    let n = x.nrows();
    let dist = |i: usize, j: usize| (&x.row(i) - &x.row(j)).mapv(|v| v * v).sum().sqrt();
    let mut clusters: Vec<Vec<usize>> = (0..n).map(|i| vec![i]).collect();
    while clusters.len() > k {
        let mut best = (f64::INFINITY, 0, 0);
        for a in 0..clusters.len() {
            for b in a + 1..clusters.len() {
                let mut link: f64 = 0.0;
                for &i in &clusters[a] {
                    for &j in &clusters[b] {
                        link = link.max(dist(i, j));
                    }
                }
                if link < best.0 {
                    best = (link, a, b);
                }
            }
        }
        let merged = clusters.remove(best.2);
        clusters[best.1].extend(merged);
    }
    let mut label = vec![0; n];
    for (c, members) in clusters.iter().enumerate() {
        for &i in members {
            label[i] = c;
        }
    }
    canonical(&label)
}

/// Relabels a partition by order of first appearance.
pub fn canonical(labels: &[usize]) -> Vec<usize> {
    let mut map = HashMap::new();
    labels
        .iter()
        .map(|l| {
            let next = map.len();
            *map.entry(*l).or_insert(next)
        })
        .collect()
}

/// Homogeneity, completeness and V-measure from explicit probability sums.
pub fn entropy_oracle(classes: &[usize], clusters: &[usize]) -> (f64, f64, f64) {
    let n = classes.len() as f64;
    let uniq = |v: &[usize]| {
        let mut u = v.to_vec();
        u.sort();
        u.dedup();
        u
    };
    let (cs, ks) = (uniq(classes), uniq(clusters));
    let count = |c: Option<usize>, k: Option<usize>| {
        classes
            .iter()
            .zip(clusters)
            .filter(|(a, b)| c.is_none_or(|c| **a == c) && k.is_none_or(|k| **b == k))
            .count() as f64
    };
    let h_c: f64 = cs.iter().map(|&c| count(Some(c), None) / n).map(|p| -p * p.ln()).sum();
    let h_k: f64 = ks.iter().map(|&k| count(None, Some(k)) / n).map(|p| -p * p.ln()).sum();
    let mut h_c_k = 0.0;
    let mut h_k_c = 0.0;
    for &c in &cs {
        for &k in &ks {
            let nck = count(Some(c), Some(k));
            if nck > 0.0 {
                h_c_k -= nck / n * (nck / count(None, Some(k))).ln();
                h_k_c -= nck / n * (nck / count(Some(c), None)).ln();
            }
        }
    }
    let h = if h_c == 0.0 { 1.0 } else { 1.0 - h_c_k / h_c };
    let c = if h_k == 0.0 { 1.0 } else { 1.0 - h_k_c / h_k };
    let v = if h + c == 0.0 { 0.0 } else { 2.0 * h * c / (h + c) };
    (h, c, v)
}

/// Seeded mutated byte blobs: `families` random cores, `per_family` copies each.
pub fn blob_families(families: usize, per_family: usize, len: usize, rate: f64, seed: u64) -> Vec<Vec<u8>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::new();
    for _ in 0..families {
        let core: Vec<u8> = (0..len).map(|_| rng.random()).collect();
        for _ in 0..per_family {
            out.push(core.iter().map(|&b| if rng.random_bool(rate) { rng.random() } else { b }).collect());
        }
    }
    out
}

/// Every unordered pair with distance below the threshold, by direct scan.
pub fn brute_pairs(blobs: &[Vec<u8>], threshold: u32) -> Vec<(usize, usize)> {
    let mut out = Vec::new();
    for i in 0..blobs.len() {
        for j in i + 1..blobs.len() {
            if av2v::train::digest_distance(&blobs[i], &blobs[j]) < threshold {
                out.push((i, j));
            }
        }
    }
    out
}
