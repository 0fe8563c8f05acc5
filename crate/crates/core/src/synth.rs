//! Seeded synthetic corpus: topic-clustered documents with click-weighted
//! queries, several of which recur across documents of the same topic.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::context::DocumentRecord;
use crate::dataset::{Origin, RawPair};

const TOPICS: &[(&str, &[&str])] = &[
    ("paris", &["louvre", "eiffel tower", "montmartre", "seine", "notre dame", "versailles", "latin quarter", "orsay", "marais", "champs elysees", "catacombs", "pantheon"]),
    ("python", &["lists", "dictionaries", "decorators", "generators", "asyncio", "pandas", "numpy", "virtualenv", "type hints", "exceptions", "comprehensions", "pip"]),
    ("gardening", &["tomatoes", "compost", "raised beds", "mulch", "pruning", "seedlings", "herbs", "roses", "soil ph", "irrigation", "greenhouse", "perennials"]),
    ("astronomy", &["black holes", "exoplanets", "nebula", "telescope", "galaxies", "supernova", "dark matter", "mars rover", "solar eclipse", "comets", "pulsars", "big bang"]),
    ("cooking", &["sourdough", "risotto", "braising", "knife skills", "stock", "emulsions", "caramel", "pasta dough", "fermentation", "sous vide", "spices", "roasting"]),
    ("finance", &["index funds", "compound interest", "bonds", "dividends", "inflation", "mortgage", "credit score", "retirement", "tax brackets", "etf", "budgeting", "options"]),
    ("medicine", &["vaccines", "antibiotics", "blood pressure", "diabetes", "cholesterol", "migraine", "asthma", "allergies", "vitamin d", "insomnia", "anemia", "arthritis"]),
    ("history", &["roman empire", "renaissance", "french revolution", "cold war", "industrial revolution", "vikings", "ottoman empire", "silk road", "magna carta", "aztecs", "crusades", "byzantium"]),
    ("music", &["guitar chords", "music theory", "piano scales", "jazz", "symphony", "drum patterns", "songwriting", "opera", "blues", "harmony", "rhythm", "violin"]),
    ("fitness", &["deadlift", "squats", "cardio", "stretching", "protein", "interval training", "yoga", "marathon", "kettlebell", "push ups", "mobility", "recovery"]),
    ("climate", &["greenhouse gases", "sea level", "carbon tax", "glaciers", "renewable energy", "heat waves", "permafrost", "el nino", "carbon capture", "emissions", "drought", "wildfires"]),
    ("linux", &["bash", "grep", "systemd", "permissions", "cron", "ssh keys", "package manager", "kernel", "file system", "processes", "networking", "docker"]),
    ("photography", &["aperture", "shutter speed", "iso", "composition", "lenses", "exposure", "white balance", "portraits", "landscapes", "lighting", "raw files", "tripod"]),
    ("chess", &["openings", "endgames", "sicilian defense", "tactics", "castling", "en passant", "queens gambit", "checkmate patterns", "pawn structure", "blitz", "ratings", "stalemate"]),
    ("biology", &["photosynthesis", "mitosis", "dna replication", "enzymes", "evolution", "cell membrane", "proteins", "ecosystems", "genetics", "bacteria", "neurons", "respiration"]),
    ("coffee", &["espresso", "pour over", "cold brew", "grind size", "arabica", "latte art", "french press", "roasting levels", "crema", "aeropress", "decaf", "milk frothing"]),
    ("economics", &["supply and demand", "gdp", "unemployment", "interest rates", "monopoly", "trade deficit", "recession", "elasticity", "central banks", "game theory", "tariffs", "opportunity cost"]),
    ("travel", &["passport", "visa", "travel insurance", "backpacking", "jet lag", "hostels", "airport security", "carry on", "road trip", "currency exchange", "packing list", "layover"]),
    ("machine learning", &["neural networks", "gradient descent", "overfitting", "decision trees", "transformers", "embeddings", "regularization", "cross validation", "clustering", "reinforcement learning", "feature scaling", "learning rate"]),
    ("architecture", &["gothic cathedrals", "bauhaus", "skyscrapers", "brutalism", "art deco", "arches", "facades", "floor plans", "load bearing walls", "domes", "columns", "modernism"]),
];

const MODIFIERS: &[&str] = &[
    "guide", "history", "examples", "tips", "definition", "explained", "for beginners", "best practices", "facts",
    "overview", "cost", "near me", "tutorial", "benefits", "problems", "ideas", "course", "vs alternatives",
];

const QUESTION_LEADS: &[&str] = &["how to", "what is", "why", "best", "learn", "when to use"];

const SENTENCE_TEMPLATES: &[&str] = &[
    "{A} is one of the central ideas in {T}.",
    "Many readers start with {A} before moving on to {B}.",
    "The relationship between {A} and {B} is often misunderstood.",
    "A short {M} on {A} appears later in this page.",
    "Experts recommend studying {B} alongside {A}.",
    "This section covers {A} {M} in detail.",
    "Common questions about {B} include its {M} and its {M2}.",
    "{B} has a long record in {T} circles.",
    "Newcomers to {T} usually ask about {A} first.",
    "We compare {A} with {B} and {C}.",
    "Understanding {C} makes {A} much easier.",
    "The final part of this article lists {M} for {C}.",
];

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SynthConfig {
    pub seed: u64,
    pub docs_per_topic: usize,
    pub queries_per_doc: usize,
    pub sentences_per_doc: usize,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self { seed: 2024, docs_per_topic: 10, queries_per_doc: 25, sentences_per_doc: 18 }
    }
}

pub struct SynthCorpus {
    pub docs: Vec<DocumentRecord>,
    pub pairs: Vec<RawPair>,
}

fn fill(template: &str, topic: &str, picks: &[&str; 3], mods: [&str; 2]) -> String {
    let s = template
        .replace("{T}", topic)
        .replace("{A}", picks[0])
        .replace("{B}", picks[1])
        .replace("{C}", picks[2])
        .replace("{M2}", mods[1])
        .replace("{M}", mods[0]);
    let mut chars = s.chars();
    match chars.next() {
        Some(c) => c.to_uppercase().chain(chars).collect(),
        None => s,
    }
}

/// Deterministic in `cfg`.
pub fn generate(cfg: &SynthConfig) -> SynthCorpus {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut docs = Vec::new();
    let mut pairs = Vec::new();
    for (ti, &(topic, entities)) in TOPICS.iter().enumerate() {
        for di in 0..cfg.docs_per_topic {
            let doc_id = format!("doc{:03}", ti * cfg.docs_per_topic + di);
            let mut focus: Vec<&str> = entities.to_vec();
            focus.shuffle(&mut rng);
            focus.truncate(5);
            let kind = *["guide", "handbook", "notes", "primer", "faq"].choose(&mut rng).unwrap();
            let title = format!("{} and {} {kind}", focus[0], focus[1]);
            let url = format!("https://example.org/{}/{}", topic.replace(' ', "-"), focus[0].replace(' ', "-"));

            let mut body = Vec::with_capacity(cfg.sentences_per_doc);
            for _ in 0..cfg.sentences_per_doc {
                let template = SENTENCE_TEMPLATES.choose(&mut rng).unwrap();
                // Mostly the document's focus, sometimes other topic entities.
                let mut pick = || {
                    if rng.gen_bool(0.8) {
                        *focus.choose(&mut rng).unwrap()
                    } else {
                        *entities.choose(&mut rng).unwrap()
                    }
                };
                let picks = [pick(), pick(), pick()];
                let mods = [*MODIFIERS.choose(&mut rng).unwrap(), *MODIFIERS.choose(&mut rng).unwrap()];
                body.push(fill(template, topic, &picks, mods));
            }

            let mut queries: Vec<String> = Vec::new();
            let mut guard = 0;
            while queries.len() < cfg.queries_per_doc && guard < cfg.queries_per_doc * 50 {
                guard += 1;
                let e = if rng.gen_bool(0.85) { *focus.choose(&mut rng).unwrap() } else { *entities.choose(&mut rng).unwrap() };
                let q = match rng.gen_range(0..6) {
                    0 => e.to_string(),
                    1 | 2 => format!("{e} {}", MODIFIERS.choose(&mut rng).unwrap()),
                    3 => format!("{} {e}", QUESTION_LEADS.choose(&mut rng).unwrap()),
                    4 => format!("{topic} {e}"),
                    _ => {
                        let other = focus.choose(&mut rng).unwrap();
                        if *other == e {
                            format!("{e} {}", MODIFIERS.choose(&mut rng).unwrap())
                        } else {
                            format!("{e} and {other}")
                        }
                    }
                };
                if !queries.contains(&q) {
                    queries.push(q);
                }
            }
            for (rank, q) in queries.into_iter().enumerate() {
                let base = 200.0 / (rank as f64 + 1.0).powf(1.1);
                let clicks = (base * rng.gen_range(0.5..1.5)).round().max(1.0);
                pairs.push(RawPair { query: q, doc_id: doc_id.clone(), clicks, origin: Origin::Clicked });
            }
            docs.push(DocumentRecord { doc_id, url, title, body: body.join(" "), queries: Vec::new() });
        }
    }
    SynthCorpus { docs, pairs }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::{preprocess, raw_pairs_to_tsv, PreprocessConfig};
    use std::collections::{HashMap, HashSet};

    #[test]
    fn corpus_shape() {
        let c = generate(&SynthConfig::default());
        assert_eq!(c.docs.len(), 200);
        assert_eq!(c.pairs.len(), 5000);
        let mut docs_per_query: HashMap<&str, HashSet<&str>> = HashMap::new();
        for p in &c.pairs {
            docs_per_query.entry(&p.query).or_default().insert(&p.doc_id);
        }
        let shared = docs_per_query.values().filter(|d| d.len() > 1).count();
        assert!(shared > 100, "only {shared} shared queries");
        let ids: HashSet<String> = c.docs.iter().map(|d| d.doc_id.clone()).collect();
        let (kept, stats) = preprocess(&c.pairs, &ids, &PreprocessConfig::default());
        assert_eq!(stats.kept, 5000);
        assert_eq!(kept.len(), 5000);
    }

    #[test]
    fn deterministic() {
        let a = generate(&SynthConfig::default());
        let b = generate(&SynthConfig::default());
        assert_eq!(a.docs, b.docs);
        assert_eq!(raw_pairs_to_tsv(&a.pairs), raw_pairs_to_tsv(&b.pairs));
        let c = generate(&SynthConfig { seed: 1, ..Default::default() });
        assert_ne!(a.docs, c.docs);
    }
}
