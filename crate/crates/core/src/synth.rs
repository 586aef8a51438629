//! Seeded generator of synthetic scan-report corpora with ground-truth
//! families, per-AV label grammars and artifact byte blobs.
//!
//! Each AV product gets its own label grammar (slot order, separators,
//! capitalization, category and platform spellings, suffix pool). Each
//! family gets a category, platform, behavior tags, a disjoint alias pool
//! and a random byte core. Sample `i` draws everything from its own RNG
//! stream, so generation parallelizes without changing the output.

use std::collections::{BTreeMap, BTreeSet, HashSet};
use std::io::Write;

use chrono::{Duration, NaiveDate};
use rand::seq::{IndexedRandom, SliceRandom};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::report::{normalize_label, AvRoster, Outcome, ScanReport};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SynthError {
    #[error("invalid world spec: {0}")]
    SpecInvalid(String),
}

/// Generation parameters. Per-AV probabilities are broadcast when a single
/// value is given.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct WorldSpec {
    pub seed: u64,
    pub n_avs: usize,
    pub n_families: usize,
    pub samples_per_family: usize,
    /// Per-AV probability of a detection label.
    pub detection_prob: Vec<f64>,
    /// Per-AV probability of a benign verdict.
    pub benign_prob: Vec<f64>,
    /// Per-AV probability of abstaining.
    pub abstain_prob: Vec<f64>,
    /// Probability that a report uses a non-default suffix variant.
    pub noise_rate: f64,
    /// Suffix variants per AV (variant 0 is the default).
    pub suffix_variants: usize,
    /// Aliases per family pool.
    pub aliases_per_family: usize,
    /// Probability that a detection names a generic family instead of
    /// the family alias.
    pub generic_rate: f64,
    pub blob_len: usize,
    /// Per-byte mutation probability applied to the family core.
    pub mutation_rate: f64,
    /// Attempts to draw a report with two detections before dropping it.
    pub max_attempts: usize,
}

impl Default for WorldSpec {
    fn default() -> Self {
        WorldSpec {
            seed: 0,
            n_avs: 8,
            n_families: 20,
            samples_per_family: 30,
            detection_prob: vec![0.8],
            benign_prob: vec![0.1],
            abstain_prob: vec![0.1],
            noise_rate: 0.2,
            suffix_variants: 3,
            aliases_per_family: 3,
            generic_rate: 0.0,
            blob_len: 256,
            mutation_rate: 0.02,
            max_attempts: 20,
        }
    }
}

impl WorldSpec {
    pub fn with_seed(seed: u64) -> Self {
        WorldSpec { seed, ..Self::default() }
    }

    fn per_av(v: &[f64], i: usize) -> f64 {
        if v.len() == 1 {
            v[0]
        } else {
            v[i]
        }
    }

    pub fn validate(&self) -> Result<(), SynthError> {
        let bad = |m: &str| Err(SynthError::SpecInvalid(m.to_string()));
        if self.n_avs == 0 {
            return bad("n_avs must be positive");
        }
        if self.n_families < 2 {
            return bad("n_families must be at least 2");
        }
        if self.suffix_variants == 0 || self.aliases_per_family == 0 || self.blob_len < 3 {
            return bad("suffix_variants, aliases_per_family must be positive and blob_len >= 3");
        }
        for (name, v) in [("detection_prob", &self.detection_prob), ("benign_prob", &self.benign_prob), ("abstain_prob", &self.abstain_prob)] {
            if v.len() != 1 && v.len() != self.n_avs {
                return Err(SynthError::SpecInvalid(format!("{name} needs 1 or n_avs entries")));
            }
            if v.iter().any(|p| !(0.0..=1.0).contains(p)) {
                return Err(SynthError::SpecInvalid(format!("{name} outside [0, 1]")));
            }
        }
        for i in 0..self.n_avs {
            let (d, b) = (Self::per_av(&self.detection_prob, i), Self::per_av(&self.benign_prob, i));
            if Self::per_av(&self.abstain_prob, i) < 1.0 && d + b <= 0.0 {
                return Err(SynthError::SpecInvalid(format!("AV {i} can neither detect nor mark benign")));
            }
        }
        if [self.noise_rate, self.mutation_rate, self.generic_rate].iter().any(|p| !(0.0..=1.0).contains(p)) {
            return bad("noise_rate, mutation_rate and generic_rate must lie in [0, 1]");
        }
        Ok(())
    }
}

/// One generated file: its report plus ground truth and artifact bytes.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SyntheticSample {
    pub report: ScanReport,
    pub family: String,
    pub tags: BTreeSet<String>,
    pub blob: Vec<u8>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticCorpus {
    pub roster: AvRoster,
    pub samples: Vec<SyntheticSample>,
}

impl SyntheticCorpus {
    pub fn reports(&self) -> Vec<ScanReport> {
        self.samples.iter().map(|s| s.report.clone()).collect()
    }

    /// Report JSON Lines.
    pub fn write_reports<W: Write>(&self, w: W) -> std::io::Result<()> {
        crate::report::write_reports(w, &self.reports())
    }

    /// Truth sidecar: one `{"id", "family", "tags"}` object per line.
    pub fn write_truth<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        for s in &self.samples {
            let rec = TruthRecord { id: s.report.id.clone(), family: s.family.clone(), tags: s.tags.clone() };
            writeln!(w, "{}", serde_json::to_string(&rec).expect("truth serializes"))?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TruthRecord {
    pub id: String,
    pub family: String,
    pub tags: BTreeSet<String>,
}

pub fn read_truth<R: std::io::BufRead>(r: R) -> Result<Vec<TruthRecord>, String> {
    let mut out = Vec::new();
    for (n, line) in r.lines().enumerate() {
        let line = line.map_err(|e| e.to_string())?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(serde_json::from_str(&line).map_err(|e| format!("truth line {}: {e}", n + 1))?);
    }
    Ok(out)
}

const AV_NAMES: [&str; 16] = [
    "Arcturus", "Bastion", "Corvid", "Dunlin", "Egret", "Fulmar", "Garnet", "Heron", "Ibis", "Jacana", "Kestrel",
    "Lapwing", "Merlin", "Nightjar", "Osprey", "Petrel",
];

const CATEGORIES: [&str; 8] = ["trojan", "ransom", "worm", "backdoor", "adware", "downloader", "spyware", "virus"];
const CATEGORY_SHORT: [&str; 8] = ["trj", "rnsm", "wrm", "bkdr", "adw", "dldr", "spy", "vir"];
const PLATFORMS: [&str; 5] = ["win32", "win64", "android", "linux", "msil"];
const PLATFORM_ALT: [&str; 5] = ["w32", "w64", "andr", "lnx", "net"];
pub const BEHAVIOR_TAGS: [&str; 11] = [
    "adware", "flooder", "ransomware", "dropper", "spyware", "packed", "crypto_miner", "file_infector", "installer",
    "worm", "downloader",
];

/// Generic family names; no syllable word can spell one.
const GENERIC_NAMES: [&str; 5] = ["agent", "generic", "kryptik", "malgen", "heur"];

const SYLLABLES: [&str; 24] = [
    "ka", "zu", "mor", "tek", "vi", "lo", "shan", "dra", "qu", "bex", "ny", "fal", "gor", "im", "pra", "sol", "tu",
    "wex", "yal", "zen", "cro", "dit", "ek", "hux",
];

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Slot {
    Category,
    Platform,
    Family,
    Suffix,
}

#[derive(Debug, Clone, Copy)]
enum Case {
    Title,
    Upper,
    Lower,
}

#[derive(Debug, Clone)]
struct Grammar {
    order: Vec<Slot>,
    seps: Vec<&'static str>,
    case: Case,
    short_category: bool,
    alt_platform: bool,
    suffixes: Vec<String>,
}

#[derive(Debug, Clone)]
struct Family {
    name: String,
    category: usize,
    platform: usize,
    tags: BTreeSet<String>,
    /// Alias used by each AV.
    aliases: Vec<String>,
    core: Vec<u8>,
}

struct World {
    roster: AvRoster,
    grammars: Vec<Grammar>,
    families: Vec<Family>,
}

fn word<R: Rng>(rng: &mut R, n_syllables: usize) -> String {
    (0..n_syllables).map(|_| *SYLLABLES.choose(rng).unwrap()).collect()
}

fn apply_case(s: &str, case: Case) -> String {
    match case {
        Case::Lower => s.to_string(),
        Case::Upper => s.to_ascii_uppercase(),
        Case::Title => {
            let mut c = s.chars();
            c.next().map(|f| f.to_ascii_uppercase().to_string() + c.as_str()).unwrap_or_default()
        }
    }
}

fn build_world(spec: &WorldSpec) -> World {
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let names: Vec<String> = (0..spec.n_avs)
        .map(|i| {
            let base = AV_NAMES[i % AV_NAMES.len()];
            if i < AV_NAMES.len() {
                base.to_string()
            } else {
                format!("{base}{}", i / AV_NAMES.len() + 1)
            }
        })
        .collect();
    let roster = AvRoster::new(names).expect("generated AV names are unique");

    let mut used: HashSet<String> = HashSet::new();
    let grammars = (0..spec.n_avs)
        .map(|_| {
            let mut order = vec![Slot::Category, Slot::Platform, Slot::Family];
            order.shuffle(&mut rng);
            if rng.random_bool(0.3) {
                order.retain(|s| *s != Slot::Platform);
            }
            order.push(Slot::Suffix);
            let seps = (0..order.len() - 1).map(|_| *[".", "/", ":", "!", "-"].choose(&mut rng).unwrap()).collect();
            let case = *[Case::Title, Case::Upper, Case::Lower].choose(&mut rng).unwrap();
            let suffixes = (0..spec.suffix_variants)
                .map(|_| loop {
                    let len = rng.random_range(2..=3);
                    let s: String = (0..len)
                        .map(|_| *b"abcdefghijklmnopqrstuvwxyz0123456789".choose(&mut rng).unwrap() as char)
                        .collect();
                    if used.insert(s.clone()) {
                        break s;
                    }
                })
                .collect();
            Grammar { order, seps, case, short_category: rng.random_bool(0.4), alt_platform: rng.random_bool(0.4), suffixes }
        })
        .collect();

    for w in CATEGORIES.iter().chain(&CATEGORY_SHORT).chain(&PLATFORMS).chain(&PLATFORM_ALT) {
        used.insert(w.to_string());
    }
    let families = (0..spec.n_families)
        .map(|_| {
            let mut fresh = |rng: &mut ChaCha8Rng, n: usize| loop {
                let w = word(rng, n);
                if used.insert(w.clone()) {
                    break w;
                }
            };
            let name = fresh(&mut rng, 3);
            let pool: Vec<String> = (0..spec.aliases_per_family).map(|_| fresh(&mut rng, 2)).collect();
            let aliases = (0..spec.n_avs).map(|_| pool.choose(&mut rng).unwrap().clone()).collect();
            let n_tags = rng.random_range(1..=3);
            let tags = BEHAVIOR_TAGS.choose_multiple(&mut rng, n_tags).map(|t| t.to_string()).collect();
            let core = (0..spec.blob_len).map(|_| rng.random()).collect();
            Family {
                name,
                category: rng.random_range(0..CATEGORIES.len()),
                platform: rng.random_range(0..PLATFORMS.len()),
                tags,
                aliases,
                core,
            }
        })
        .collect();
    World { roster, grammars, families }
}

fn render_label(g: &Grammar, fam: &Family, av: usize, variant: usize, generic: bool) -> String {
    let mut out = String::new();
    for (i, slot) in g.order.iter().enumerate() {
        if i > 0 {
            out.push_str(g.seps[i - 1]);
        }
        let piece = match slot {
            Slot::Category if g.short_category => CATEGORY_SHORT[fam.category],
            Slot::Category => CATEGORIES[fam.category],
            Slot::Platform if g.alt_platform => PLATFORM_ALT[fam.platform],
            Slot::Platform => PLATFORMS[fam.platform],
            Slot::Family if generic => GENERIC_NAMES[av % GENERIC_NAMES.len()],
            Slot::Family => fam.aliases[av].as_str(),
            Slot::Suffix => {
                out.push_str(&g.suffixes[variant].to_ascii_lowercase());
                continue;
            }
        };
        out.push_str(&apply_case(piece, g.case));
    }
    out
}

fn draw_outcomes(spec: &WorldSpec, world: &World, fam: &Family, rng: &mut ChaCha8Rng) -> BTreeMap<String, Outcome> {
    let variant = if spec.suffix_variants > 1 && rng.random_bool(spec.noise_rate) {
        rng.random_range(1..spec.suffix_variants)
    } else {
        0
    };
    let mut results = BTreeMap::new();
    for (av, name) in world.roster.names().iter().enumerate() {
        let abstain = WorldSpec::per_av(&spec.abstain_prob, av);
        let outcome = if rng.random_bool(abstain) {
            Outcome::Abstain
        } else {
            let d = WorldSpec::per_av(&spec.detection_prob, av);
            let b = WorldSpec::per_av(&spec.benign_prob, av);
            if rng.random_bool(d / (d + b)) {
                let generic = spec.generic_rate > 0.0 && rng.random_bool(spec.generic_rate);
                Outcome::Label(render_label(&world.grammars[av], fam, av, variant, generic))
            } else {
                Outcome::Benign
            }
        };
        // abstaining AVs are simply absent, like a missing engine entry
        if outcome != Outcome::Abstain {
            results.insert(name.clone(), outcome);
        }
    }
    results
}

/// Generates the corpus for `spec`. Samples whose draws never reach two
/// detections within `max_attempts` are dropped.
pub fn generate_corpus(spec: &WorldSpec) -> Result<SyntheticCorpus, SynthError> {
    spec.validate()?;
    let world = build_world(spec);
    let n = spec.n_families * spec.samples_per_family;
    let start = NaiveDate::from_ymd_opt(2018, 1, 1).unwrap();
    let span = (NaiveDate::from_ymd_opt(2023, 4, 30).unwrap() - start).num_days();
    let samples: Vec<Option<SyntheticSample>> = (0..n)
        .into_par_iter()
        .map(|i| {
            let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
            rng.set_stream(i as u64 + 1);
            let fam = &world.families[i % spec.n_families];
            let results = (0..spec.max_attempts.max(1))
                .map(|_| draw_outcomes(spec, &world, fam, &mut rng))
                .find(|r| r.values().filter(|o| o.is_detection()).count() >= 2)?;
            let date = start + Duration::days(rng.random_range(0..=span));
            let blob = fam
                .core
                .iter()
                .map(|&b| if rng.random_bool(spec.mutation_rate) { rng.random() } else { b })
                .collect();
            Some(SyntheticSample {
                report: ScanReport { id: format!("s{i:06}"), date, results },
                family: fam.name.clone(),
                tags: fam.tags.clone(),
                blob,
            })
        })
        .collect();
    Ok(SyntheticCorpus { roster: world.roster, samples: samples.into_iter().flatten().collect() })
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CorpusStats {
    pub n_reports: usize,
    /// Normalized label length → number of labels.
    pub label_lengths: BTreeMap<usize, usize>,
    /// Detections per report → number of reports.
    pub detections: BTreeMap<usize, usize>,
    pub distinct_tokens: usize,
}

pub fn corpus_stats(reports: &[ScanReport]) -> CorpusStats {
    let mut label_lengths = BTreeMap::new();
    let mut detections = BTreeMap::new();
    let mut tokens = HashSet::new();
    for r in reports {
        *detections.entry(r.detections()).or_insert(0) += 1;
        for o in r.results.values() {
            if let Outcome::Label(raw) = o {
                if let Ok(t) = normalize_label(raw) {
                    *label_lengths.entry(t.len()).or_insert(0) += 1;
                    tokens.extend(t.tokens().iter().cloned());
                }
            }
        }
    }
    CorpusStats { n_reports: reports.len(), label_lengths, detections, distinct_tokens: tokens.len() }
}
