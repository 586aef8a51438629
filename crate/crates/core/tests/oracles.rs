mod common;

use std::collections::BTreeSet;

use av2v::dci::{brute_force_knn, DciConfig, DciIndex};
use av2v::eval::{clustering_scores, hac_complete, kmeans, knn_tag_f1, one_nn_accuracy, one_nn_accuracy_self};
use av2v::train::mine_blob_pairs;
use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

fn gaussian(n: usize, d: usize, seed: u64) -> Array2<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Array2::from_shape_fn((n, d), |_| StandardNormal.sample(&mut rng))
}

#[test]
fn dci_full_budget_equals_scan() {
    let x = gaussian(500, 16, 1);
    let ix = DciIndex::build(x.clone(), DciConfig::default()).unwrap();
    let q = gaussian(30, 16, 2);
    for row in q.rows() {
        let got: Vec<(usize, f64)> =
            ix.query_with_budget(row, 10, 500).unwrap().neighbors.iter().map(|n| (n.index, n.distance)).collect();
        let want = common::brute_knn(x.view(), row, 10);
        assert_eq!(got.iter().map(|p| p.0).collect::<Vec<_>>(), want.iter().map(|p| p.0).collect::<Vec<_>>());
        for (g, w) in got.iter().zip(&want) {
            assert!((g.1 - w.1).abs() <= 1e-12 * w.1.max(1.0), "{g:?} vs {w:?}");
        }
        let lib: Vec<usize> = brute_force_knn(x.view(), row, 10).iter().map(|n| n.index).collect();
        assert_eq!(lib, got.iter().map(|p| p.0).collect::<Vec<_>>());
    }
}

#[test]
fn dci_recall_grows_with_budget() {
    let x = gaussian(2000, 16, 3);
    let ix = DciIndex::build(x.clone(), DciConfig::default()).unwrap();
    let q = gaussian(60, 16, 4);
    let truth: Vec<BTreeSet<usize>> =
        q.rows().into_iter().map(|r| common::brute_knn(x.view(), r, 10).into_iter().map(|p| p.0).collect()).collect();
    let mut last = 0.0;
    for budget in [10, 50, 200, 800, 2000] {
        let mut hit = 0;
        for (row, t) in q.rows().into_iter().zip(&truth) {
            let r = ix.query_with_budget(row, 10, budget).unwrap();
            assert!(r.visited <= budget);
            hit += r.neighbors.iter().filter(|n| t.contains(&n.index)).count();
        }
        let recall = hit as f64 / (10 * q.nrows()) as f64;
        assert!(recall >= last, "budget {budget}: {recall} < {last}");
        last = recall;
    }
    assert_eq!(last, 1.0);
}

#[test]
fn dci_insertion_order_does_not_matter() {
    let x = gaussian(300, 8, 5);
    let perm: Vec<usize> = (0..300).rev().collect();
    let y = x.select(ndarray::Axis(0), &perm);
    let a = DciIndex::build(x, DciConfig { budget: 60, ..Default::default() }).unwrap();
    let b = DciIndex::build(y, DciConfig { budget: 60, ..Default::default() }).unwrap();
    for q in gaussian(20, 8, 6).rows() {
        let ra: Vec<usize> = a.query(q, 5).unwrap().neighbors.iter().map(|n| n.index).collect();
        let rb: Vec<usize> = b.query(q, 5).unwrap().neighbors.iter().map(|n| 299 - n.index).collect();
        assert_eq!(ra, rb);
    }
}

#[test]
fn pair_mining_equals_all_pairs_scan() {
    let blobs = common::blob_families(20, 5, 256, 0.02, 7);
    let refs: Vec<&[u8]> = blobs.iter().map(|b| b.as_slice()).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let mined = mine_blob_pairs(&refs, 30, None, &mut rng);
    let brute = common::brute_pairs(&blobs, 30);
    assert_eq!(mined.pairs, brute);
    assert!(mined.pairs.iter().all(|&(i, j)| i < j));
}

#[test]
fn pair_set_invariant_under_shuffling() {
    let blobs = common::blob_families(10, 4, 128, 0.02, 8);
    let perm: Vec<usize> = {
        let mut p: Vec<usize> = (0..blobs.len()).collect();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        rand::seq::SliceRandom::shuffle(p.as_mut_slice(), &mut rng);
        p
    };
    let shuffled: Vec<&[u8]> = perm.iter().map(|&i| blobs[i].as_slice()).collect();
    let refs: Vec<&[u8]> = blobs.iter().map(|b| b.as_slice()).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let a = mine_blob_pairs(&refs, 30, None, &mut rng);
    let b = mine_blob_pairs(&shuffled, 30, None, &mut rng);
    let mut mapped: Vec<(usize, usize)> =
        b.pairs.iter().map(|&(i, j)| (perm[i].min(perm[j]), perm[i].max(perm[j]))).collect();
    mapped.sort();
    assert_eq!(a.pairs, mapped);
}

#[test]
fn hac_equals_naive_agglomeration() {
    for seed in 0..5 {
        let x = gaussian(50, 4, 100 + seed);
        for k in [1, 2, 5, 13, 50] {
            assert_eq!(hac_complete(x.view(), k).unwrap(), common::naive_hac(x.view(), k), "seed {seed} k {k}");
        }
    }
}

#[test]
fn clustering_scores_match_entropy_oracle() {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    for _ in 0..50 {
        let n = rng.random_range(1..40);
        let (nc, nk) = (rng.random_range(1..6), rng.random_range(1..6));
        let classes: Vec<usize> = (0..n).map(|_| rng.random_range(0..nc)).collect();
        let clusters: Vec<usize> = (0..n).map(|_| rng.random_range(0..nk)).collect();
        let s = clustering_scores(&classes, &clusters).unwrap();
        let (h, c, v) = common::entropy_oracle(&classes, &clusters);
        assert!((s.homogeneity - h).abs() < 1e-9);
        assert!((s.completeness - c).abs() < 1e-9);
        assert!((s.v_measure - v).abs() < 1e-9);
    }
}

#[test]
fn worked_four_point_example() {
    let (h, c, v) = common::entropy_oracle(&[0, 0, 1, 1], &[0, 0, 0, 1]);
    // direct arithmetic: H(C)=ln 2, H(C|K)=¾·H(⅔,⅓), H(K)=H(¾,¼), H(K|C)=½·ln 2
    let h3 = -(2.0f64 / 3.0) * (2.0f64 / 3.0).ln() - (1.0f64 / 3.0) * (1.0f64 / 3.0).ln();
    let hk = -0.75f64 * 0.75f64.ln() - 0.25 * 0.25f64.ln();
    let ln2 = 2f64.ln();
    assert!((h - (1.0 - 0.75 * h3 / ln2)).abs() < 1e-12);
    assert!((c - (1.0 - 0.5 * ln2 / hk)).abs() < 1e-12);
    let s = clustering_scores(&["a", "a", "b", "b"], &[0, 0, 0, 1]).unwrap();
    assert!((s.homogeneity - h).abs() < 1e-12);
    assert!((s.completeness - c).abs() < 1e-12);
    assert!((s.v_measure - v).abs() < 1e-12);
    assert!((s.homogeneity - 0.3113).abs() < 1e-4);
    assert!((s.completeness - 0.3837).abs() < 1e-4);
    assert!((s.v_measure - 0.3437).abs() < 1e-4);
}

#[test]
fn one_nn_matches_scan_reimplementation() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let centers = gaussian(4, 6, 12) * 2.0;
    let labels: Vec<usize> = (0..200).map(|_| rng.random_range(0..4)).collect();
    let noise = gaussian(200, 6, 13);
    let x = Array2::from_shape_fn((200, 6), |(i, j)| centers[[labels[i], j]] + noise[[i, j]]);
    let (train, test) = (x.slice(ndarray::s![..150, ..]), x.slice(ndarray::s![150.., ..]));
    let oracle = (150..200).filter(|&i| labels[common::brute_knn(train, x.row(i), 1)[0].0] == labels[i]).count() as f64 / 50.0;
    assert_eq!(one_nn_accuracy(train, &labels[..150], test, &labels[150..]).unwrap(), oracle);

    let loo = (0..200)
        .filter(|&i| {
            let nb = common::brute_knn(x.view(), x.row(i), 2);
            let j = if nb[0].0 == i { nb[1].0 } else { nb[0].0 };
            labels[j] == labels[i]
        })
        .count() as f64
        / 200.0;
    assert_eq!(one_nn_accuracy_self(x.view(), &labels).unwrap(), loo);
}

#[test]
fn tag_f1_matches_pair_recount() {
    let mut rng = ChaCha8Rng::seed_from_u64(14);
    let x = gaussian(500, 5, 15);
    let names: Vec<String> = ["adware", "dropper", "worm"].map(String::from).to_vec();
    let tags: Vec<BTreeSet<String>> =
        (0..500).map(|_| names.iter().filter(|_| rng.random_bool(0.3)).cloned().collect()).collect();
    let queries: Vec<usize> = (0..500).step_by(5).collect();
    let k = 10;
    let got = knn_tag_f1(x.view(), &tags, &queries, k, &names).unwrap();
    for name in &names {
        let (mut tp, mut fp, mut fneg, mut tn) = (0, 0, 0, 0);
        for &q in &queries {
            let nb = common::brute_knn(x.view(), x.row(q), k + 1);
            for (j, _) in nb.into_iter().filter(|p| p.0 != q).take(k) {
                match (tags[q].contains(name), tags[j].contains(name)) {
                    (true, true) => tp += 1,
                    (false, true) => fp += 1,
                    (true, false) => fneg += 1,
                    (false, false) => tn += 1,
                }
            }
        }
        let s = got[name];
        assert_eq!((s.tp, s.fp, s.fn_, s.tn), (tp, fp, fneg, tn));
        assert_eq!(tp + fp + fneg + tn, queries.len() * k);
        let p = tp as f64 / (tp + fp) as f64;
        let r = tp as f64 / (tp + fneg) as f64;
        assert!((s.f1 - 2.0 * p * r / (p + r)).abs() < 1e-12);
    }
}

#[test]
fn kmeans_inertia_never_increases() {
    for seed in 0..5 {
        let x = gaussian(300, 4, 20 + seed);
        let r = kmeans(x.view(), 7, seed, 100).unwrap();
        assert!(r.inertia.windows(2).all(|w| w[1] <= w[0] + 1e-9), "{:?}", r.inertia);
        assert_eq!(r.assignment.iter().collect::<BTreeSet<_>>().len(), 7);
    }
}
