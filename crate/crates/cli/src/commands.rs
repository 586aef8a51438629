use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use av2v::dci::{DciIndex, VectorStore};
use av2v::eval::{
    clustering_scores, hac_complete, kmeans, knn_tag_f1, non_singleton, one_nn_accuracy_self, EvalReport,
};
use av2v::nn::{load_checkpoint, save_checkpoint, Model};
use av2v::report::{read_reports, tokenize_report, AvRoster, ScanReport, TokenizedReport, DEFAULT_SLOT_LEN};
use av2v::synth::{corpus_stats, generate_corpus, read_truth, TruthRecord};
use av2v::train::{embed_reports, mine_blob_pairs, run_finetuning, run_pretraining, MetricsRecord};
use av2v::vocab::{count_report_tokens, make_adaptive_spec, Vocab, DEFAULT_CUTOFF_FRACTIONS};
use av2v::Error;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::config::{require, RunConfig};
use crate::{Cli, Command};

/// Artifact bytes of one report, hex encoded.
#[derive(Debug, Serialize, Deserialize)]
struct ArtifactRecord {
    id: String,
    blob: String,
}

fn create(path: &Path) -> Result<BufWriter<File>, Error> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir)?;
    }
    Ok(BufWriter::new(File::create(path)?))
}

fn write_json<T: Serialize>(value: &T, out: Option<&Path>) -> Result<(), Error> {
    let text = serde_json::to_string_pretty(value)?;
    match out {
        Some(p) => {
            let mut w = create(p)?;
            writeln!(w, "{text}")?;
            w.flush()?;
        }
        None => println!("{text}"),
    }
    Ok(())
}

fn load_reports(path: &Path) -> Result<Vec<ScanReport>, Error> {
    Ok(read_reports(BufReader::new(File::open(path)?))?)
}

fn tokenize_all(reports: &[ScanReport], roster: &AvRoster) -> Result<Vec<TokenizedReport>, Error> {
    reports.iter().map(|r| Ok(tokenize_report(r, roster, DEFAULT_SLOT_LEN)?)).collect()
}

fn eligible(reports: Vec<ScanReport>) -> Vec<ScanReport> {
    reports.into_iter().filter(|r| r.is_training_eligible()).collect()
}

fn load_truth(path: &Path) -> Result<HashMap<String, TruthRecord>, Error> {
    let records = read_truth(BufReader::new(File::open(path)?)).map_err(Error::Format)?;
    Ok(records.into_iter().map(|t| (t.id.clone(), t)).collect())
}

fn truth_for(store: &VectorStore, truth: &HashMap<String, TruthRecord>) -> Result<Vec<TruthRecord>, Error> {
    store
        .ids
        .iter()
        .map(|id| {
            truth.get(id).cloned().ok_or_else(|| av2v::eval::EvalError::IdMismatch(format!("no truth for {id}")).into())
        })
        .collect()
}

fn sha256_file(path: &Path) -> Result<String, Error> {
    Ok(hex::encode(Sha256::digest(std::fs::read(path)?)))
}

struct MetricsLog(BufWriter<File>);

impl MetricsLog {
    fn record(&mut self, r: &MetricsRecord) -> Result<(), Error> {
        writeln!(self.0, "{}", serde_json::to_string(r)?)?;
        Ok(())
    }
}

fn metrics_path(flag: Option<PathBuf>, cfg: Option<&PathBuf>, out: &Path) -> PathBuf {
    flag.or(cfg.cloned()).unwrap_or_else(|| out.with_extension("metrics.jsonl"))
}

pub fn run(cli: Cli) -> Result<(), Error> {
    let g = cli.global;
    let mut cfg = match &g.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    cfg.set_seed(g.seed.unwrap_or(cfg.seed));
    if let Some(d) = g.dim {
        cfg.model.dim = Some(d);
    }
    if let Some(k) = g.k {
        cfg.k = k;
    }
    if let Some(b) = g.budget {
        cfg.dci.budget = b;
    }
    if let Some(t) = g.threshold {
        cfg.threshold = t;
    }
    if let Some(w) = g.workers.or(cfg.workers) {
        // only fails if a pool already exists, which cannot happen here
        let _ = rayon::ThreadPoolBuilder::new().num_threads(w.max(1)).build_global();
    }
    let p = cfg.paths.clone();

    match cli.command {
        Command::Gen { out_dir } => {
            let dir = require(out_dir.as_ref(), p.out_dir.as_ref(), "out-dir")?;
            let corpus = generate_corpus(&cfg.world)?;
            std::fs::create_dir_all(&dir)?;
            let mut w = create(&dir.join("reports.jsonl"))?;
            corpus.write_reports(&mut w)?;
            w.flush()?;
            std::fs::write(dir.join("roster.txt"), corpus.roster.to_text())?;
            let mut w = create(&dir.join("truth.jsonl"))?;
            corpus.write_truth(&mut w)?;
            w.flush()?;
            let mut w = create(&dir.join("artifacts.jsonl"))?;
            for s in &corpus.samples {
                let rec = ArtifactRecord { id: s.report.id.clone(), blob: hex::encode(&s.blob) };
                writeln!(w, "{}", serde_json::to_string(&rec)?)?;
            }
            w.flush()?;
            write_json(&cfg.world, Some(&dir.join("world.json")))?;
            eprintln!("wrote {} reports to {}", corpus.samples.len(), dir.display());
        }

        Command::IngestCheck { reports, roster, out } => {
            let reports = load_reports(&require(reports.as_ref(), p.reports.as_ref(), "reports")?)?;
            let roster = AvRoster::load(&require(roster.as_ref(), p.roster.as_ref(), "roster")?)?;
            tokenize_all(&reports, &roster)?;
            #[derive(Serialize)]
            struct Summary {
                stats: av2v::synth::CorpusStats,
                training_eligible: usize,
                n_avs: usize,
            }
            let summary = Summary {
                training_eligible: reports.iter().filter(|r| r.is_training_eligible()).count(),
                stats: corpus_stats(&reports),
                n_avs: roster.len(),
            };
            write_json(&summary, out.or(p.out).as_deref())?;
        }

        Command::Vocab { reports, roster, size, out, adaptive_out } => {
            let reports = load_reports(&require(reports.as_ref(), p.reports.as_ref(), "reports")?)?;
            let roster = AvRoster::load(&require(roster.as_ref(), p.roster.as_ref(), "roster")?)?;
            let out = require(out.as_ref(), p.vocab.as_ref(), "out")?;
            let table = count_report_tokens(&reports, &roster, DEFAULT_SLOT_LEN)?;
            let vocab = Vocab::build(&table, size.unwrap_or(cfg.vocab_size));
            let fractions = cfg.model.cutoff_fractions.clone().unwrap_or(DEFAULT_CUTOFF_FRACTIONS.to_vec());
            let spec = make_adaptive_spec(vocab.n_classes(), &fractions)?;
            std::fs::write(&out, vocab.to_text())?;
            let spec_path = adaptive_out.or(p.adaptive).unwrap_or_else(|| out.with_extension("adaptive.json"));
            std::fs::write(&spec_path, spec.to_json())?;
            eprintln!("vocab of {} tokens written to {}", vocab.len(), out.display());
        }

        Command::Pretrain { reports, roster, vocab, steps, out, metrics } => {
            let reports = eligible(load_reports(&require(reports.as_ref(), p.reports.as_ref(), "reports")?)?);
            let roster = AvRoster::load(&require(roster.as_ref(), p.roster.as_ref(), "roster")?)?;
            let vocab = Vocab::parse(&std::fs::read_to_string(require(vocab.as_ref(), p.vocab.as_ref(), "vocab")?)?)?;
            let out = require(out.as_ref(), p.checkpoint.as_ref(), "out")?;
            let tokenized = tokenize_all(&reports, &roster)?;
            let model_cfg = cfg.model_config(roster.len(), vocab.n_classes())?;
            let mut model = Model::<f32>::new(model_cfg, vocab, cfg.seed)?;
            let mut train = cfg.train.clone();
            if let Some(s) = steps {
                train.pretrain_steps = s;
            }
            let mut log = MetricsLog(create(&metrics_path(metrics, p.metrics.as_ref(), &out))?);
            let mut io_err = None;
            run_pretraining(&mut model, &tokenized, &train, |rec, _| {
                if let Err(e) = log.record(rec) {
                    io_err.get_or_insert(e);
                }
            })?;
            if let Some(e) = io_err {
                return Err(e);
            }
            log.0.flush()?;
            save_checkpoint(&model, &out)?;
        }

        Command::Finetune { checkpoint, reports, roster, artifacts, steps, out, metrics } => {
            let mut model: Model<f32> = load_checkpoint(&require(checkpoint.as_ref(), p.checkpoint.as_ref(), "checkpoint")?)?;
            let reports = eligible(load_reports(&require(reports.as_ref(), p.reports.as_ref(), "reports")?)?);
            let roster = AvRoster::load(&require(roster.as_ref(), p.roster.as_ref(), "roster")?)?;
            let artifacts_path = require(artifacts.as_ref(), p.artifacts.as_ref(), "artifacts")?;
            let out = require(out.as_ref(), p.out.as_ref(), "out")?;
            let blobs = load_artifacts(&artifacts_path)?;
            let aligned = reports
                .iter()
                .map(|r| blobs.get(&r.id).map(Vec::as_slice).ok_or_else(|| Error::Format(format!("no artifact for {}", r.id))))
                .collect::<Result<Vec<&[u8]>, _>>()?;
            let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
            let pairs = mine_blob_pairs(&aligned, cfg.threshold, cfg.train.max_pairs, &mut rng);
            eprintln!("mined {} pairs", pairs.len());
            let tokenized = tokenize_all(&reports, &roster)?;
            let mut train = cfg.train.clone();
            if let Some(s) = steps {
                train.finetune_steps = s;
            }
            let mut log = MetricsLog(create(&metrics_path(metrics, p.metrics.as_ref(), &out))?);
            let mut io_err = None;
            run_finetuning(&mut model, &tokenized, &pairs, &train, |rec| {
                if let Err(e) = log.record(rec) {
                    io_err.get_or_insert(e);
                }
            })?;
            if let Some(e) = io_err {
                return Err(e);
            }
            log.0.flush()?;
            save_checkpoint(&model, &out)?;
        }

        Command::Embed { checkpoint, reports, roster, out } => {
            let model: Model<f32> = load_checkpoint(&require(checkpoint.as_ref(), p.checkpoint.as_ref(), "checkpoint")?)?;
            let reports = eligible(load_reports(&require(reports.as_ref(), p.reports.as_ref(), "reports")?)?);
            let roster = AvRoster::load(&require(roster.as_ref(), p.roster.as_ref(), "roster")?)?;
            let out = require(out.as_ref(), p.vectors.as_ref(), "out")?;
            let tokenized = tokenize_all(&reports, &roster)?;
            let vectors = embed_reports(&model, &tokenized)?;
            let store = VectorStore::new(reports.into_iter().map(|r| r.id).collect(), vectors)?;
            store.save(&out)?;
        }

        Command::Index { vectors, out } => {
            let store = VectorStore::load(&require(vectors.as_ref(), p.vectors.as_ref(), "vectors")?)?;
            let out = require(out.as_ref(), p.index.as_ref(), "out")?;
            let index = DciIndex::<f32>::build(store.vectors, cfg.dci.clone())?;
            index.save(&out)?;
        }

        Command::Query { vectors, index, ids, out } => {
            let store = VectorStore::load(&require(vectors.as_ref(), p.vectors.as_ref(), "vectors")?)?;
            let index = DciIndex::<f32>::load(&require(index.as_ref(), p.index.as_ref(), "index")?, store.vectors.clone())?;
            #[derive(Serialize)]
            struct Hit<'a> {
                id: &'a str,
                distance: f32,
            }
            #[derive(Serialize)]
            struct Answer<'a> {
                query: &'a str,
                neighbors: Vec<Hit<'a>>,
            }
            let mut lines = Vec::new();
            for id in &ids {
                let pos = store.position(id).ok_or_else(|| Error::Format(format!("id {id} is not in the vector store")))?;
                let res = index.query(store.vectors.row(pos), cfg.k)?;
                let neighbors =
                    res.neighbors.iter().map(|n| Hit { id: &store.ids[n.index], distance: n.distance }).collect();
                lines.push(serde_json::to_string(&Answer { query: id, neighbors })?);
            }
            let text = lines.join("\n") + "\n";
            match out.or(p.out) {
                Some(path) => std::fs::write(path, text)?,
                None => print!("{text}"),
            }
        }

        Command::EvalKnn { vectors, truth, out } => {
            let vpath = require(vectors.as_ref(), p.vectors.as_ref(), "vectors")?;
            let store = VectorStore::load(&vpath)?;
            let truth = truth_for(&store, &load_truth(&require(truth.as_ref(), p.truth.as_ref(), "truth")?)?)?;
            let families: Vec<&str> = truth.iter().map(|t| t.family.as_str()).collect();
            let keep = non_singleton(&families);
            let sub = store.vectors.select(ndarray::Axis(0), &keep);
            let sub_families: Vec<&str> = keep.iter().map(|&i| families[i]).collect();
            let mut report = EvalReport {
                seed: Some(cfg.seed),
                k: Some(cfg.k),
                vectors_sha256: Some(sha256_file(&vpath)?),
                ..Default::default()
            };
            report.metrics.insert("one_nn_accuracy".into(), one_nn_accuracy_self(sub.view(), &sub_families)?);
            let tags: Vec<BTreeSet<String>> = truth.iter().map(|t| t.tags.clone()).collect();
            let names: Vec<String> = tags.iter().flatten().cloned().collect::<BTreeSet<_>>().into_iter().collect();
            let queries: Vec<usize> = (0..store.len()).collect();
            let scores = knn_tag_f1(store.vectors.view(), &tags, &queries, cfg.k, &names)?;
            for (tag, s) in &scores {
                report.metrics.insert(format!("tag_f1.{tag}"), s.f1);
                report.metrics.insert(format!("tag_precision.{tag}"), s.precision);
                report.metrics.insert(format!("tag_recall.{tag}"), s.recall);
            }
            if !scores.is_empty() {
                let macro_f1 = scores.values().map(|s| s.f1).sum::<f64>() / scores.len() as f64;
                report.metrics.insert("tag_f1_macro".into(), macro_f1);
            }
            write_json(&report, out.or(p.out).as_deref())?;
        }

        Command::EvalCluster { vectors, truth, clusters, out } => {
            let vpath = require(vectors.as_ref(), p.vectors.as_ref(), "vectors")?;
            let store = VectorStore::load(&vpath)?;
            let truth = truth_for(&store, &load_truth(&require(truth.as_ref(), p.truth.as_ref(), "truth")?)?)?;
            let families: Vec<&str> = truth.iter().map(|t| t.family.as_str()).collect();
            let n_families = families.iter().collect::<BTreeSet<_>>().len();
            let k = clusters.or(cfg.clusters).unwrap_or(n_families);
            let km = kmeans(store.vectors.view(), k, cfg.seed, 300)?;
            let hac = hac_complete(store.vectors.view(), k)?;
            let mut metrics = BTreeMap::new();
            for (name, assignment) in [("kmeans", &km.assignment), ("hac_complete", &hac)] {
                let s = clustering_scores(&families, assignment)?;
                metrics.insert(format!("{name}.homogeneity"), s.homogeneity);
                metrics.insert(format!("{name}.completeness"), s.completeness);
                metrics.insert(format!("{name}.v_measure"), s.v_measure);
            }
            let report = EvalReport {
                metrics,
                seed: Some(cfg.seed),
                n_clusters: Some(k),
                k: None,
                vectors_sha256: Some(sha256_file(&vpath)?),
            };
            write_json(&report, out.or(p.out).as_deref())?;
        }
    }
    Ok(())
}

fn load_artifacts(path: &Path) -> Result<HashMap<String, Vec<u8>>, Error> {
    let text = std::fs::read_to_string(path)?;
    text.lines()
        .filter(|l| !l.trim().is_empty())
        .enumerate()
        .map(|(n, line)| {
            let rec: ArtifactRecord =
                serde_json::from_str(line).map_err(|e| Error::Format(format!("artifacts line {}: {e}", n + 1)))?;
            let bytes = hex::decode(&rec.blob).map_err(|e| Error::Format(format!("artifacts line {}: {e}", n + 1)))?;
            Ok((rec.id, bytes))
        })
        .collect()
}
