//! Dataset pipeline: filtering, quadrant splits, dynamic prefix splits,
//! click estimation for augmented queries, and the relevance-labeling client.

use std::collections::{BTreeMap, BTreeSet, HashMap, HashSet};
use std::fmt;
use std::fs;
use std::path::Path;
use std::str::FromStr;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::time::Duration;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::context::DocumentRecord;
use crate::error::{QacError, Result};
use crate::metrics::Quadrant;
use crate::text::{char_len, normalize_query, split_at_char};
use crate::trie::WeightedQuery;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Origin {
    Clicked,
    Augmented,
}

impl fmt::Display for Origin {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::Clicked => "clicked",
            Self::Augmented => "augmented",
        })
    }
}

impl FromStr for Origin {
    type Err = QacError;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "clicked" => Ok(Self::Clicked),
            "augmented" => Ok(Self::Augmented),
            _ => Err(QacError::Parse(format!("unknown origin {s:?}"))),
        }
    }
}

/// A pairs-file row before filtering.
#[derive(Debug, Clone, PartialEq)]
pub struct RawPair {
    pub query: String,
    pub doc_id: String,
    pub clicks: f64,
    pub origin: Origin,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QueryDocPair {
    pub query: WeightedQuery,
    pub doc_id: String,
    pub origin: Origin,
}

impl QueryDocPair {
    pub fn key(&self) -> (&str, &str) {
        (&self.query.text, &self.doc_id)
    }
}

fn parse_pair_fields(line: &str, no: usize) -> Result<RawPair> {
    let f: Vec<&str> = line.split('\t').collect();
    if f.len() != 4 {
        return Err(QacError::Parse(format!("pairs line {no}: expected 4 fields, got {}", f.len())));
    }
    let clicks = f[2]
        .trim()
        .parse::<f64>()
        .map_err(|e| QacError::Parse(format!("pairs line {no}: clicks {:?}: {e}", f[2])))?;
    Ok(RawPair { query: f[0].to_string(), doc_id: f[1].to_string(), clicks, origin: f[3].parse()? })
}

/// Parses `query<TAB>doc_id<TAB>clicks<TAB>origin` lines.
pub fn parse_raw_pairs(text: &str) -> Result<Vec<RawPair>> {
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| parse_pair_fields(l, i + 1))
        .collect()
}

/// Parses an already filtered pairs file.
pub fn parse_pairs(text: &str) -> Result<Vec<QueryDocPair>> {
    parse_raw_pairs(text)?
        .into_iter()
        .map(|r| {
            Ok(QueryDocPair { query: WeightedQuery::new(&r.query, r.clicks)?, doc_id: r.doc_id, origin: r.origin })
        })
        .collect()
}

pub fn pairs_to_tsv(pairs: &[QueryDocPair]) -> String {
    let mut out = String::new();
    for p in pairs {
        out.push_str(&format!("{}\t{}\t{}\t{}\n", p.query.text, p.doc_id, p.query.clicks, p.origin));
    }
    out
}

pub fn raw_pairs_to_tsv(pairs: &[RawPair]) -> String {
    let mut out = String::new();
    for p in pairs {
        out.push_str(&format!("{}\t{}\t{}\t{}\n", p.query, p.doc_id, p.clicks, p.origin));
    }
    out
}

pub fn load_pairs(path: impl AsRef<Path>) -> Result<Vec<QueryDocPair>> {
    parse_pairs(&fs::read_to_string(path)?)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct PreprocessConfig {
    /// Documents need strictly more queries than this.
    pub min_doc_queries: usize,
    /// Documents need strictly fewer queries than this.
    pub max_doc_queries: usize,
}

impl Default for PreprocessConfig {
    fn default() -> Self {
        Self { min_doc_queries: 10, max_doc_queries: 500 }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct PreprocessStats {
    pub input: usize,
    pub short_query: usize,
    pub bad_clicks: usize,
    pub duplicate: usize,
    pub missing_document: usize,
    pub too_few_queries: usize,
    pub too_many_queries: usize,
    pub kept: usize,
}

/// Normalizes and filters raw pairs. Output is sorted by (doc_id, query).
pub fn preprocess(
    raw: &[RawPair],
    doc_ids: &HashSet<String>,
    cfg: &PreprocessConfig,
) -> (Vec<QueryDocPair>, PreprocessStats) {
    let mut stats = PreprocessStats { input: raw.len(), ..Default::default() };
    let mut merged: BTreeMap<(String, String), QueryDocPair> = BTreeMap::new();
    for r in raw {
        let text = normalize_query(&r.query);
        if char_len(&text) < crate::trie::MIN_QUERY_CHARS {
            stats.short_query += 1;
            continue;
        }
        let Ok(query) = WeightedQuery::new(&text, r.clicks) else {
            stats.bad_clicks += 1;
            continue;
        };
        if !doc_ids.contains(&r.doc_id) {
            stats.missing_document += 1;
            continue;
        }
        match merged.entry((r.doc_id.clone(), text)) {
            std::collections::btree_map::Entry::Occupied(mut e) => {
                stats.duplicate += 1;
                let p = e.get_mut();
                p.query.clicks += query.clicks;
                p.origin = p.origin.min(r.origin);
            }
            std::collections::btree_map::Entry::Vacant(e) => {
                e.insert(QueryDocPair { query, doc_id: r.doc_id.clone(), origin: r.origin });
            }
        }
    }
    let mut per_doc: HashMap<&str, usize> = HashMap::new();
    for (doc, _) in merged.keys() {
        *per_doc.entry(doc.as_str()).or_default() += 1;
    }
    let mut kept = Vec::new();
    for ((doc, _), p) in &merged {
        let n = per_doc[doc.as_str()];
        if n <= cfg.min_doc_queries {
            stats.too_few_queries += 1;
        } else if n >= cfg.max_doc_queries {
            stats.too_many_queries += 1;
        } else {
            kept.push(p.clone());
        }
    }
    stats.kept = kept.len();
    (kept, stats)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SplitConfig {
    pub seed: u64,
    pub unseen_doc_fraction: f64,
    pub unseen_query_fraction: f64,
    /// Share of seen-query/seen-document pairs held out for the SS test set.
    pub ss_fraction: f64,
    /// Share of seen-query/seen-document pairs held out for validation.
    pub val_fraction: f64,
    pub quadrant_cap: usize,
}

impl Default for SplitConfig {
    fn default() -> Self {
        Self {
            seed: 13,
            unseen_doc_fraction: 0.2,
            unseen_query_fraction: 0.2,
            ss_fraction: 0.1,
            val_fraction: 0.05,
            quadrant_cap: 3000,
        }
    }
}

impl SplitConfig {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("unseen_doc_fraction", self.unseen_doc_fraction),
            ("unseen_query_fraction", self.unseen_query_fraction),
            ("ss_fraction", self.ss_fraction),
            ("val_fraction", self.val_fraction),
        ] {
            if !(0.0..=1.0).contains(&v) {
                return Err(QacError::invalid(format!("{name} must lie in [0, 1], got {v}")));
            }
        }
        if self.ss_fraction + self.val_fraction > 1.0 {
            return Err(QacError::invalid("ss_fraction + val_fraction exceeds 1"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplitManifest {
    pub config: SplitConfig,
    pub train: Vec<QueryDocPair>,
    pub val: Vec<QueryDocPair>,
    pub test: BTreeMap<Quadrant, Vec<QueryDocPair>>,
}

#[derive(Debug, Serialize, Deserialize)]
struct ManifestSummary {
    seed: u64,
    config: SplitConfig,
    counts: BTreeMap<String, usize>,
    clicked_ratio: f64,
}

fn seeded_partition<T: Clone + Ord>(items: &BTreeSet<T>, fraction: f64, rng: &mut ChaCha8Rng) -> HashSet<T>
where
    T: std::hash::Hash,
{
    let mut v: Vec<T> = items.iter().cloned().collect();
    v.shuffle(rng);
    let n = (v.len() as f64 * fraction).round() as usize;
    v.into_iter().take(n).collect()
}

fn sort_pairs(v: &mut [QueryDocPair]) {
    v.sort_by(|a, b| a.doc_id.cmp(&b.doc_id).then_with(|| a.query.text.cmp(&b.query.text)));
}

/// Seeded quadrant split. Documents and queries are drawn into unseen pools;
/// held-out seen/seen pairs become SS or validation only while their query
/// and document stay represented in train. Every test pair's quadrant is then
/// decided by membership in the final train sets.
pub fn make_splits(pairs: &[QueryDocPair], cfg: &SplitConfig) -> Result<SplitManifest> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let docs: BTreeSet<String> = pairs.iter().map(|p| p.doc_id.clone()).collect();
    let queries: BTreeSet<String> = pairs.iter().map(|p| p.query.text.clone()).collect();
    let unseen_docs = seeded_partition(&docs, cfg.unseen_doc_fraction, &mut rng);
    let unseen_queries = seeded_partition(&queries, cfg.unseen_query_fraction, &mut rng);

    let mut sorted = pairs.to_vec();
    sort_pairs(&mut sorted);
    let (mut seen_seen, rest): (Vec<_>, Vec<_>) = sorted
        .into_iter()
        .partition(|p| !unseen_docs.contains(&p.doc_id) && !unseen_queries.contains(&p.query.text));

    let mut q_count: HashMap<String, usize> = HashMap::new();
    let mut d_count: HashMap<String, usize> = HashMap::new();
    for p in &seen_seen {
        *q_count.entry(p.query.text.clone()).or_default() += 1;
        *d_count.entry(p.doc_id.clone()).or_default() += 1;
    }
    seen_seen.shuffle(&mut rng);
    let ss_target = (seen_seen.len() as f64 * cfg.ss_fraction).round() as usize;
    let val_target = (seen_seen.len() as f64 * cfg.val_fraction).round() as usize;
    let (mut train, mut val, mut held) = (Vec::new(), Vec::new(), Vec::new());
    for p in seen_seen {
        let removable = q_count[&p.query.text] > 1 && d_count[&p.doc_id] > 1;
        let bucket = if removable && held.len() < ss_target {
            &mut held
        } else if removable && val.len() < val_target {
            &mut val
        } else {
            train.push(p);
            continue;
        };
        *q_count.get_mut(&p.query.text).unwrap() -= 1;
        *d_count.get_mut(&p.doc_id).unwrap() -= 1;
        bucket.push(p);
    }

    let train_q: HashSet<&str> = train.iter().map(|p| p.query.text.as_str()).collect();
    let train_d: HashSet<&str> = train.iter().map(|p| p.doc_id.as_str()).collect();
    let mut test: BTreeMap<Quadrant, Vec<QueryDocPair>> = BTreeMap::new();
    for p in held.into_iter().chain(rest) {
        let q = Quadrant::classify(train_q.contains(p.query.text.as_str()), train_d.contains(p.doc_id.as_str()));
        test.entry(q).or_default().push(p);
    }
    for q in Quadrant::ALL {
        let list = test.entry(q).or_default();
        list.shuffle(&mut rng);
        list.truncate(cfg.quadrant_cap);
        sort_pairs(list);
        if list.is_empty() {
            log::warn!("quadrant {q} is empty");
        } else if list.len() < cfg.quadrant_cap {
            log::info!("quadrant {q} has {} pairs, below the cap of {}", list.len(), cfg.quadrant_cap);
        }
    }
    sort_pairs(&mut train);
    sort_pairs(&mut val);
    let manifest = SplitManifest { config: *cfg, train, val, test };
    manifest.verify()?;
    Ok(manifest)
}

impl SplitManifest {
    pub fn quadrant(&self, q: Quadrant) -> &[QueryDocPair] {
        self.test.get(&q).map_or(&[], Vec::as_slice)
    }

    /// Re-checks quadrant membership and train/test disjointness.
    pub fn verify(&self) -> Result<()> {
        let train_q: HashSet<&str> = self.train.iter().map(|p| p.query.text.as_str()).collect();
        let train_d: HashSet<&str> = self.train.iter().map(|p| p.doc_id.as_str()).collect();
        let train_pairs: HashSet<(&str, &str)> = self.train.iter().map(QueryDocPair::key).collect();
        for (q, list) in &self.test {
            for p in list {
                if train_pairs.contains(&p.key()) {
                    return Err(QacError::invalid(format!("{q} pair {:?} leaks into train", p.key())));
                }
                let got = Quadrant::classify(train_q.contains(p.query.text.as_str()), train_d.contains(p.doc_id.as_str()));
                if got != *q {
                    return Err(QacError::invalid(format!("pair {:?} labelled {q} but belongs to {got}", p.key())));
                }
            }
        }
        Ok(())
    }

    fn summary(&self) -> ManifestSummary {
        let mut counts = BTreeMap::new();
        counts.insert("train".to_string(), self.train.len());
        counts.insert("val".to_string(), self.val.len());
        for q in Quadrant::ALL {
            counts.insert(format!("test_{}", q.as_str().to_ascii_lowercase()), self.quadrant(q).len());
        }
        let all: Vec<&QueryDocPair> = self.train.iter().chain(&self.val).chain(self.test.values().flatten()).collect();
        let clicked = all.iter().filter(|p| p.origin == Origin::Clicked).count();
        let clicked_ratio = if all.is_empty() { 0.0 } else { clicked as f64 / all.len() as f64 };
        ManifestSummary { seed: self.config.seed, config: self.config, counts, clicked_ratio }
    }

    pub fn write(&self, dir: impl AsRef<Path>) -> Result<()> {
        let dir = dir.as_ref();
        fs::create_dir_all(dir)?;
        fs::write(dir.join("train.tsv"), pairs_to_tsv(&self.train))?;
        fs::write(dir.join("val.tsv"), pairs_to_tsv(&self.val))?;
        for q in Quadrant::ALL {
            let name = format!("test_{}.tsv", q.as_str().to_ascii_lowercase());
            fs::write(dir.join(name), pairs_to_tsv(self.quadrant(q)))?;
        }
        let json = serde_json::to_string_pretty(&self.summary()).map_err(|e| QacError::Parse(e.to_string()))?;
        fs::write(dir.join("manifest.json"), json + "\n")?;
        Ok(())
    }

    pub fn read(dir: impl AsRef<Path>) -> Result<Self> {
        let dir = dir.as_ref();
        let summary: ManifestSummary = serde_json::from_str(&fs::read_to_string(dir.join("manifest.json"))?)
            .map_err(|e| QacError::Parse(format!("manifest.json: {e}")))?;
        let mut test = BTreeMap::new();
        for q in Quadrant::ALL {
            let name = format!("test_{}.tsv", q.as_str().to_ascii_lowercase());
            test.insert(q, load_pairs(dir.join(name))?);
        }
        Ok(Self {
            config: summary.config,
            train: load_pairs(dir.join("train.tsv"))?,
            val: load_pairs(dir.join("val.tsv"))?,
            test,
        })
    }
}

/// Random split with the cut uniform over `1..|query|` characters.
pub fn dynamic_prefix_split<R: Rng + ?Sized>(query: &str, rng: &mut R) -> Result<(String, String)> {
    let n = char_len(query);
    if n < crate::trie::MIN_QUERY_CHARS {
        return Err(QacError::invalid(format!("query {query:?} too short to split")));
    }
    let (p, s) = split_at_char(query, rng.gen_range(1..n));
    Ok((p.to_string(), s.to_string()))
}

fn trigrams(s: &str) -> HashMap<String, f64> {
    let padded: Vec<char> = format!(" {} ", normalize_query(s)).chars().collect();
    let mut m = HashMap::new();
    for w in padded.windows(3) {
        *m.entry(w.iter().collect::<String>()).or_insert(0.0) += 1.0;
    }
    m
}

/// Cosine over character-trigram count vectors.
pub fn trigram_similarity(a: &str, b: &str) -> f64 {
    let (ta, tb) = (trigrams(a), trigrams(b));
    let dot: f64 = ta.iter().map(|(k, v)| v * tb.get(k).copied().unwrap_or(0.0)).sum();
    let na: f64 = ta.values().map(|v| v * v).sum::<f64>().sqrt();
    let nb: f64 = tb.values().map(|v| v * v).sum::<f64>().sqrt();
    if na == 0.0 || nb == 0.0 {
        0.0
    } else {
        (dot / (na * nb)).clamp(0.0, 1.0)
    }
}

/// Similarity-weighted mean click count of the `top` most similar known queries.
pub fn estimate_clicks<F>(aug_query: &str, known: &[WeightedQuery], sim: F, top: usize) -> Result<f64>
where
    F: Fn(&str, &str) -> f64,
{
    if known.is_empty() {
        return Err(QacError::invalid("click estimation needs a non-empty pool"));
    }
    let mut scored: Vec<(f64, &WeightedQuery)> = known.iter().map(|q| (sim(aug_query, &q.text), q)).collect();
    scored.sort_by(|a, b| b.0.total_cmp(&a.0).then_with(|| a.1.text.cmp(&b.1.text)));
    scored.truncate(top);
    let total: f64 = scored.iter().map(|(s, _)| s).sum();
    if total <= 0.0 {
        return Ok(0.0);
    }
    Ok(scored.iter().map(|(s, q)| s * q.clicks).sum::<f64>() / total)
}

pub fn levenshtein(a: &str, b: &str) -> usize {
    let b: Vec<char> = b.chars().collect();
    let mut prev: Vec<usize> = (0..=b.len()).collect();
    let mut cur = vec![0; b.len() + 1];
    for (i, ca) in a.chars().enumerate() {
        cur[0] = i + 1;
        for (j, &cb) in b.iter().enumerate() {
            let sub = prev[j] + usize::from(ca != cb);
            cur[j + 1] = sub.min(prev[j + 1] + 1).min(cur[j] + 1);
        }
        std::mem::swap(&mut prev, &mut cur);
    }
    prev[b.len()]
}

pub fn near_duplicate(a: &str, b: &str) -> bool {
    levenshtein(a, b) <= 1
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize)]
pub struct AugmentStats {
    pub candidates: usize,
    pub not_in_corpus: usize,
    pub near_duplicate: usize,
    pub already_clicked: usize,
    pub kept: usize,
}

/// Filters augmented candidates `(query, doc_id)`: the query must occur
/// verbatim in some corpus body, must not be within edit distance 1 of a
/// clicked query of the same document, and must not already be clicked for
/// it. Survivors get click pseudo-counts from that document's clicked queries,
/// or from all clicked queries when the document has none.
pub fn augment_pairs<F>(
    candidates: &[(String, String)],
    docs: &[DocumentRecord],
    clicked: &[QueryDocPair],
    sim: F,
) -> Result<(Vec<QueryDocPair>, AugmentStats)>
where
    F: Fn(&str, &str) -> f64,
{
    let bodies: Vec<String> = docs.iter().map(|d| normalize_query(&d.body)).collect();
    let mut by_doc: HashMap<&str, Vec<WeightedQuery>> = HashMap::new();
    for p in clicked.iter().filter(|p| p.origin == Origin::Clicked) {
        by_doc.entry(p.doc_id.as_str()).or_default().push(p.query.clone());
    }
    let all: Vec<WeightedQuery> = by_doc.values().flatten().cloned().collect();
    let mut stats = AugmentStats { candidates: candidates.len(), ..Default::default() };
    let mut out = Vec::new();
    let mut seen = HashSet::new();
    for (query, doc_id) in candidates {
        let text = normalize_query(query);
        let own = by_doc.get(doc_id.as_str()).map_or(&[][..], Vec::as_slice);
        if own.iter().any(|q| q.text == text) {
            stats.already_clicked += 1;
            continue;
        }
        if own.iter().any(|q| near_duplicate(&q.text, &text)) {
            stats.near_duplicate += 1;
            continue;
        }
        if !bodies.iter().any(|b| contains_phrase(b, &text)) {
            stats.not_in_corpus += 1;
            continue;
        }
        if !seen.insert((text.clone(), doc_id.clone())) {
            continue;
        }
        let pool = if own.is_empty() { &all[..] } else { own };
        let clicks = if pool.is_empty() { 0.0 } else { estimate_clicks(&text, pool, &sim, 5)? };
        let Ok(query) = WeightedQuery::new(&text, clicks) else { continue };
        out.push(QueryDocPair { query, doc_id: doc_id.clone(), origin: Origin::Augmented });
    }
    stats.kept = out.len();
    Ok((out, stats))
}

fn contains_phrase(body: &str, phrase: &str) -> bool {
    body.match_indices(phrase).any(|(i, _)| {
        let before = body[..i].chars().next_back();
        let after = body[i + phrase.len()..].chars().next();
        !before.is_some_and(char::is_alphanumeric) && !after.is_some_and(char::is_alphanumeric)
    })
}

const RELEVANCE_PROMPT: &str = "\
You judge search relevance. The document below was paired with a query that a \
reader might type while searching inside it. Decide whether the document \
genuinely serves that query: it answers it, gives useful background on it, or \
discusses the entities or events it names. Shared words used in an unrelated \
sense do not count.

Document: \"{body}\"
Query: \"{Query}\"
id: \"{id}\"
docid: \"{docid}\"

Reply with only this JSON object:
{\"query_relevance\": bool, \"id\": string, \"Query\": string, \"docid\": string}";

/// Fills the classifier prompt.
pub fn relevance_prompt(body: &str, query: &str, id: &str, doc_id: &str) -> String {
    RELEVANCE_PROMPT
        .replace("{body}", body)
        .replace("{Query}", query)
        .replace("{id}", id)
        .replace("{docid}", doc_id)
}

#[derive(Debug, Clone, PartialEq, Eq, Deserialize)]
pub struct RelevanceJudgement {
    pub query_relevance: bool,
    pub id: String,
    #[serde(rename = "Query")]
    pub query: String,
    pub docid: String,
}

fn strip_fences(s: &str) -> &str {
    let s = s.trim();
    let s = s.strip_prefix("```json").or_else(|| s.strip_prefix("```")).unwrap_or(s);
    s.strip_suffix("```").unwrap_or(s).trim()
}

/// Accepts either the judgement object itself or a chat-completion envelope
/// whose first choice carries it as message content.
pub fn parse_relevance_response(raw: &str) -> Result<RelevanceJudgement> {
    let parse_err = |e: serde_json::Error| {
        log::warn!("unparseable relevance response: {raw}");
        QacError::Parse(format!("relevance response: {e}"))
    };
    let v: serde_json::Value = serde_json::from_str(strip_fences(raw)).map_err(parse_err)?;
    let inner = match v.pointer("/choices/0/message/content").and_then(|c| c.as_str()) {
        Some(content) => serde_json::from_str(strip_fences(content)).map_err(parse_err)?,
        None => v,
    };
    serde_json::from_value(inner).map_err(parse_err)
}

/// Blocking client for a chat-completion style relevance endpoint.
#[derive(Debug, Clone)]
pub struct RelevanceClient {
    endpoint: String,
    api_key: Option<String>,
    model: Option<String>,
    agent: ureq::Agent,
}

impl RelevanceClient {
    pub fn new(endpoint: &str, api_key: Option<String>, model: Option<String>, timeout: Duration) -> Self {
        let agent = ureq::Agent::config_builder().timeout_global(Some(timeout)).build().into();
        Self { endpoint: endpoint.to_string(), api_key, model, agent }
    }

    pub fn judge(&self, doc: &DocumentRecord, query: &str, id: &str) -> Result<bool> {
        let prompt = relevance_prompt(&doc.body, query, id, &doc.doc_id);
        let mut body = serde_json::json!({
            "messages": [{"role": "system", "content": prompt}],
            "temperature": 0,
        });
        if let Some(m) = &self.model {
            body["model"] = serde_json::Value::String(m.clone());
        }
        let mut req = self.agent.post(&self.endpoint);
        if let Some(k) = &self.api_key {
            req = req.header("Authorization", &format!("Bearer {k}"));
        }
        let raw = req
            .send_json(&body)
            .and_then(|mut r| r.body_mut().read_to_string())
            .map_err(|e| QacError::Unavailable(format!("relevance endpoint: {e}")))?;
        Ok(parse_relevance_response(&raw)?.query_relevance)
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize)]
pub struct LabelStats {
    pub judged_relevant: usize,
    pub judged_irrelevant: usize,
    pub unavailable: usize,
    pub parse_errors: usize,
}

/// Drops pairs the classifier rejects. Without a client, or when a request
/// fails, the pair is kept. At most `concurrency` requests run at once.
pub fn label_pairs(
    client: Option<&RelevanceClient>,
    pairs: Vec<QueryDocPair>,
    docs: &HashMap<String, DocumentRecord>,
    concurrency: usize,
) -> (Vec<QueryDocPair>, LabelStats) {
    let Some(client) = client else {
        let stats = LabelStats { unavailable: pairs.len(), ..Default::default() };
        return (pairs, stats);
    };
    let next = AtomicUsize::new(0);
    let mut verdicts: Vec<Option<Result<bool>>> = Vec::new();
    verdicts.resize_with(pairs.len(), || None);
    let results = std::sync::Mutex::new(verdicts);
    std::thread::scope(|s| {
        for _ in 0..concurrency.max(1).min(pairs.len().max(1)) {
            s.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::Relaxed);
                let Some(p) = pairs.get(i) else { break };
                let v = match docs.get(&p.doc_id) {
                    Some(d) => client.judge(d, &p.query.text, &i.to_string()),
                    None => Err(QacError::NotFound(p.doc_id.clone())),
                };
                results.lock().unwrap()[i] = Some(v);
            });
        }
    });
    let mut stats = LabelStats::default();
    let mut kept = Vec::new();
    for (p, v) in pairs.into_iter().zip(results.into_inner().unwrap()) {
        match v {
            Some(Ok(true)) => {
                stats.judged_relevant += 1;
                kept.push(p);
            }
            Some(Ok(false)) => stats.judged_irrelevant += 1,
            Some(Err(QacError::Parse(_))) => {
                stats.parse_errors += 1;
                kept.push(p);
            }
            _ => {
                stats.unavailable += 1;
                kept.push(p);
            }
        }
    }
    (kept, stats)
}
