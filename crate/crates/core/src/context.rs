//! Document context assembly for the scorer.
//!
//! Every mode except `P` produces a bounded token sequence: title and url are
//! cut to 32 tokens each and the document-derived section to 352. The
//! sequence trains a small per-request document model that the scorer mixes
//! in with weight λ.

use std::collections::{HashMap, HashSet};
use std::fmt;
use std::fs;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{QacError, Result};
use crate::text::{is_stopword, normalize_prefix, normalize_query, split_sentences, words};
use crate::tokenizer::{TokenId, TokenizerModel};
use crate::trie::WeightedQuery;

pub const TITLE_BUDGET: usize = 32;
pub const URL_BUDGET: usize = 32;
pub const DOCUMENT_BUDGET: usize = 352;
pub const KEYPHRASE_MAX_N: usize = 3;
pub const KEYPHRASE_LIMIT: usize = 50;
pub const RETRIEVE_K: usize = 20;
pub const CHUNK_CHARS: usize = 200;
pub const CHUNK_STRIDE: usize = 170;
pub const RELATED_DOCS: usize = 10;
pub const BM25_K1: f64 = 1.2;
pub const BM25_B: f64 = 0.75;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DocumentRecord {
    pub doc_id: String,
    #[serde(default)]
    pub url: String,
    #[serde(default)]
    pub title: String,
    #[serde(default)]
    pub body: String,
    #[serde(default)]
    pub queries: Vec<WeightedQuery>,
}

fn escape_field(s: &str) -> String {
    let mut out = String::with_capacity(s.len());
    for c in s.chars() {
        match c {
            '\\' => out.push_str("\\\\"),
            '\t' => out.push_str("\\t"),
            '\n' => out.push_str("\\n"),
            '\r' => out.push_str("\\r"),
            c => out.push(c),
        }
    }
    out
}

fn unescape_field(s: &str) -> Result<String> {
    let mut out = String::with_capacity(s.len());
    let mut chars = s.chars();
    while let Some(c) = chars.next() {
        if c != '\\' {
            out.push(c);
            continue;
        }
        match chars.next() {
            Some('\\') => out.push('\\'),
            Some('t') => out.push('\t'),
            Some('n') => out.push('\n'),
            Some('r') => out.push('\r'),
            other => return Err(QacError::Parse(format!("bad escape \\{}", other.map(String::from).unwrap_or_default()))),
        }
    }
    Ok(out)
}

/// Corpus file: `doc_id<TAB>url<TAB>title<TAB>body`, one document per line,
/// with backslash escapes for tabs and newlines. Queries are not stored.
pub fn parse_corpus_tsv(text: &str) -> Result<Vec<DocumentRecord>> {
    let mut docs = Vec::new();
    let mut seen = HashSet::new();
    for (no, line) in text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty()) {
        let fields: Vec<&str> = line.split('\t').collect();
        if fields.len() != 4 {
            return Err(QacError::Parse(format!("corpus line {}: expected 4 fields, got {}", no + 1, fields.len())));
        }
        let doc_id = unescape_field(fields[0])?;
        if doc_id.is_empty() {
            return Err(QacError::Parse(format!("corpus line {}: empty doc_id", no + 1)));
        }
        if !seen.insert(doc_id.clone()) {
            return Err(QacError::Parse(format!("corpus line {}: duplicate doc_id {doc_id:?}", no + 1)));
        }
        docs.push(DocumentRecord {
            doc_id,
            url: unescape_field(fields[1])?,
            title: unescape_field(fields[2])?,
            body: unescape_field(fields[3])?,
            queries: Vec::new(),
        });
    }
    Ok(docs)
}

pub fn corpus_to_tsv(docs: &[DocumentRecord]) -> String {
    let mut out = String::new();
    for d in docs {
        let fields = [&d.doc_id, &d.url, &d.title, &d.body].map(|f| escape_field(f));
        out.push_str(&fields.join("\t"));
        out.push('\n');
    }
    out
}

pub fn load_corpus(path: impl AsRef<Path>) -> Result<Vec<DocumentRecord>> {
    parse_corpus_tsv(&fs::read_to_string(path)?)
}

pub fn save_corpus(path: impl AsRef<Path>, docs: &[DocumentRecord]) -> Result<()> {
    fs::write(path, corpus_to_tsv(docs))?;
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum ContextMode {
    #[serde(rename = "P")]
    Prefix,
    #[serde(rename = "P_TU")]
    TitleUrl,
    #[serde(rename = "P_TUD")]
    TitleUrlDocument,
    #[serde(rename = "P_TUK")]
    TitleUrlKeyphrases,
    #[serde(rename = "SPARSE_RAG")]
    SparseRag,
    #[serde(rename = "DENSE_RAG")]
    DenseRag,
    #[serde(rename = "REL_DENSE_RAG")]
    RelDenseRag,
}

impl ContextMode {
    pub const ALL: [ContextMode; 7] = [
        Self::Prefix,
        Self::TitleUrl,
        Self::TitleUrlDocument,
        Self::TitleUrlKeyphrases,
        Self::SparseRag,
        Self::DenseRag,
        Self::RelDenseRag,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Self::Prefix => "P",
            Self::TitleUrl => "P_TU",
            Self::TitleUrlDocument => "P_TUD",
            Self::TitleUrlKeyphrases => "P_TUK",
            Self::SparseRag => "SPARSE_RAG",
            Self::DenseRag => "DENSE_RAG",
            Self::RelDenseRag => "REL_DENSE_RAG",
        }
    }

    pub fn needs_vectors(self) -> bool {
        matches!(self, Self::DenseRag | Self::RelDenseRag)
    }
}

impl fmt::Display for ContextMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for ContextMode {
    type Err = QacError;

    fn from_str(s: &str) -> Result<Self> {
        let key = s.trim().to_ascii_uppercase().replace('+', "_").replace(['-', ' '], "_");
        match key.as_str() {
            "P" => Ok(Self::Prefix),
            "P_TU" => Ok(Self::TitleUrl),
            "P_TUD" => Ok(Self::TitleUrlDocument),
            "P_TUK" => Ok(Self::TitleUrlKeyphrases),
            "SPARSE_RAG" | "P_SPARSE_RAG" => Ok(Self::SparseRag),
            "DENSE_RAG" | "P_DENSE_RAG" => Ok(Self::DenseRag),
            "REL_DENSE_RAG" | "P_REL_DENSE_RAG" => Ok(Self::RelDenseRag),
            "P_TUS" => Err(QacError::invalid(
                "context mode P_TUS needs generated summaries, which this engine does not produce",
            )),
            _ => Err(QacError::invalid(format!("unknown context mode {s:?}"))),
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize)]
pub struct TokenBudgetUsed {
    pub title: usize,
    pub url: usize,
    pub document: usize,
}

impl TokenBudgetUsed {
    pub fn total(&self) -> usize {
        self.title + self.url + self.document
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ContextBundle {
    pub mode: ContextMode,
    pub text: String,
    pub tokens: Vec<TokenId>,
    pub token_budget_used: TokenBudgetUsed,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Keyphrase {
    pub phrase: String,
    pub score: f64,
}

/// Statistical keyphrase extraction: candidates are the n-grams (n ≤ `max_n`)
/// of maximal stopword-free word runs within a sentence, scored by the product
/// of their words' body term frequencies over `1 + earliest sentence index`.
pub fn extract_keyphrases(doc: &DocumentRecord, max_n: usize, limit: usize) -> Vec<Keyphrase> {
    let sentences: Vec<Vec<String>> = split_sentences(&doc.body).iter().map(|s| words(s)).collect();
    let mut tf: HashMap<&str, usize> = HashMap::new();
    for w in sentences.iter().flatten() {
        *tf.entry(w.as_str()).or_default() += 1;
    }
    let mut first_seen: HashMap<String, (usize, f64)> = HashMap::new();
    for (si, sentence) in sentences.iter().enumerate() {
        for run in sentence.split(|w| is_stopword(w)) {
            for n in 1..=max_n.min(run.len()) {
                for gram in run.windows(n) {
                    let phrase = gram.join(" ");
                    first_seen.entry(phrase).or_insert_with(|| {
                        let product: f64 = gram.iter().map(|w| tf[w.as_str()] as f64).product();
                        (si, product)
                    });
                }
            }
        }
    }
    let mut out: Vec<Keyphrase> = first_seen
        .into_iter()
        .map(|(phrase, (si, product))| Keyphrase { phrase, score: product / (1.0 + si as f64) })
        .collect();
    out.sort_by(|a, b| b.score.total_cmp(&a.score).then_with(|| a.phrase.cmp(&b.phrase)));
    out.truncate(limit);
    out
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ScoredSentence {
    /// Position in the document.
    pub index: usize,
    pub text: String,
    pub score: f64,
}

/// BM25 over a single document's sentences.
#[derive(Debug, Clone, PartialEq)]
pub struct SentenceIndex {
    sentences: Vec<String>,
    terms: Vec<HashMap<String, usize>>,
    lengths: Vec<usize>,
    doc_freq: HashMap<String, usize>,
    avg_len: f64,
}

impl SentenceIndex {
    pub fn new(body: &str) -> Self {
        let sentences = split_sentences(body);
        let mut terms = Vec::with_capacity(sentences.len());
        let mut lengths = Vec::with_capacity(sentences.len());
        let mut doc_freq: HashMap<String, usize> = HashMap::new();
        for s in &sentences {
            let ws = words(s);
            lengths.push(ws.len());
            let mut tf: HashMap<String, usize> = HashMap::new();
            for w in ws {
                *tf.entry(w).or_default() += 1;
            }
            for w in tf.keys() {
                *doc_freq.entry(w.clone()).or_default() += 1;
            }
            terms.push(tf);
        }
        let avg_len = if lengths.is_empty() { 0.0 } else { lengths.iter().sum::<usize>() as f64 / lengths.len() as f64 };
        Self { sentences, terms, lengths, doc_freq, avg_len }
    }

    pub fn len(&self) -> usize {
        self.sentences.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sentences.is_empty()
    }

    pub fn idf(&self, term: &str) -> f64 {
        let n = self.sentences.len() as f64;
        let df = self.doc_freq.get(term).copied().unwrap_or(0) as f64;
        (1.0 + (n - df + 0.5) / (df + 0.5)).ln()
    }

    pub fn score(&self, sentence: usize, query_terms: &[String]) -> f64 {
        let dl = self.lengths[sentence] as f64;
        let norm = if self.avg_len > 0.0 { dl / self.avg_len } else { 0.0 };
        query_terms
            .iter()
            .map(|q| {
                let tf = self.terms[sentence].get(q).copied().unwrap_or(0) as f64;
                if tf == 0.0 {
                    return 0.0;
                }
                self.idf(q) * tf * (BM25_K1 + 1.0) / (tf + BM25_K1 * (1.0 - BM25_B + BM25_B * norm))
            })
            .sum()
    }

    /// Top-`k` sentences for the whitespace terms of `prefix`; equal scores
    /// keep document order.
    pub fn retrieve(&self, prefix: &str, k: usize) -> Vec<ScoredSentence> {
        let terms = words(prefix);
        let mut scored: Vec<ScoredSentence> = (0..self.sentences.len())
            .map(|i| ScoredSentence { index: i, text: self.sentences[i].clone(), score: self.score(i, &terms) })
            .collect();
        scored.sort_by(|a, b| b.score.total_cmp(&a.score).then(a.index.cmp(&b.index)));
        scored.truncate(k);
        scored
    }
}

pub fn bm25_retrieve(doc: &DocumentRecord, prefix: &str, k: usize) -> Vec<ScoredSentence> {
    SentenceIndex::new(&doc.body).retrieve(prefix, k)
}

/// Externally computed embeddings: `QVEC1 <dim>` header, then
/// `key<TAB>f32,f32,...` lines. Keys are `doc_id#chunk_index` or literal prefixes.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct VectorTable {
    dim: usize,
    vectors: HashMap<String, Vec<f32>>,
}

impl VectorTable {
    pub fn new(dim: usize) -> Self {
        Self { dim, vectors: HashMap::new() }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.vectors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.vectors.is_empty()
    }

    pub fn insert(&mut self, key: impl Into<String>, v: Vec<f32>) -> Result<()> {
        if v.len() != self.dim {
            return Err(QacError::Unavailable(format!("vector of dimension {} in a {}-d table", v.len(), self.dim)));
        }
        self.vectors.insert(key.into(), v);
        Ok(())
    }

    pub fn get(&self, key: &str) -> Option<&[f32]> {
        self.vectors.get(key).map(Vec::as_slice)
    }

    pub fn chunk_key(doc_id: &str, chunk: usize) -> String {
        format!("{doc_id}#{chunk}")
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut lines = text.lines();
        let header = lines.next().unwrap_or_default();
        let dim = header
            .strip_prefix("QVEC1 ")
            .and_then(|d| d.trim().parse::<usize>().ok())
            .filter(|&d| d > 0)
            .ok_or_else(|| QacError::Unavailable("vector file: bad QVEC1 header".into()))?;
        let mut table = Self::new(dim);
        for (no, line) in lines.enumerate().filter(|(_, l)| !l.is_empty()) {
            let (key, values) = line
                .rsplit_once('\t')
                .ok_or_else(|| QacError::Unavailable(format!("vector file line {}: missing tab", no + 2)))?;
            let v = values
                .split(',')
                .map(|x| x.trim().parse::<f32>())
                .collect::<std::result::Result<Vec<_>, _>>()
                .map_err(|e| QacError::Unavailable(format!("vector file line {}: {e}", no + 2)))?;
            table.insert(key, v)?;
        }
        Ok(table)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path)
            .map_err(|e| QacError::Unavailable(format!("vector file {}: {e}", path.display())))?;
        Self::parse(&text)
    }

    pub fn to_text(&self) -> String {
        let mut keys: Vec<_> = self.vectors.keys().collect();
        keys.sort();
        let mut out = format!("QVEC1 {}\n", self.dim);
        for k in keys {
            let vals: Vec<String> = self.vectors[k].iter().map(|x| x.to_string()).collect();
            out.push_str(&format!("{k}\t{}\n", vals.join(",")));
        }
        out
    }
}

pub fn cosine(a: &[f32], b: &[f32]) -> f64 {
    let (mut dot, mut na, mut nb) = (0.0f64, 0.0f64, 0.0f64);
    for (&x, &y) in a.iter().zip(b) {
        let (x, y) = (x as f64, y as f64);
        dot += x * y;
        na += x * x;
        nb += y * y;
    }
    if na == 0.0 || nb == 0.0 {
        0.0
    } else {
        dot / (na.sqrt() * nb.sqrt())
    }
}

/// 200-character windows advancing by 170; the last window reaches the end.
pub fn chunk_body(body: &str) -> Vec<(usize, String)> {
    let chars: Vec<char> = body.chars().collect();
    let mut out = Vec::new();
    let mut offset = 0;
    while offset < chars.len() {
        let end = (offset + CHUNK_CHARS).min(chars.len());
        out.push((offset, chars[offset..end].iter().collect()));
        if end == chars.len() {
            break;
        }
        offset += CHUNK_STRIDE;
    }
    out
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ScoredChunk {
    pub doc_id: String,
    pub index: usize,
    pub text: String,
    pub similarity: f64,
}

fn doc_chunks(doc: &DocumentRecord, vectors: &VectorTable) -> Result<Vec<(usize, String, Vec<f32>)>> {
    chunk_body(&doc.body)
        .into_iter()
        .enumerate()
        .map(|(i, (_, text))| {
            let key = VectorTable::chunk_key(&doc.doc_id, i);
            let v = vectors
                .get(&key)
                .ok_or_else(|| QacError::Unavailable(format!("no vector for chunk {key}")))?;
            Ok((i, text, v.to_vec()))
        })
        .collect()
}

fn check_dim(vectors: &VectorTable, v: &[f32]) -> Result<()> {
    if v.len() == vectors.dim() {
        Ok(())
    } else {
        Err(QacError::Unavailable(format!("prefix vector has dimension {}, table {}", v.len(), vectors.dim())))
    }
}

/// Top-`k` chunks of `doc` by cosine similarity to `prefix_vector`.
pub fn dense_retrieve(
    doc: &DocumentRecord,
    vectors: &VectorTable,
    prefix_vector: &[f32],
    k: usize,
) -> Result<Vec<ScoredChunk>> {
    check_dim(vectors, prefix_vector)?;
    let mut scored: Vec<ScoredChunk> = doc_chunks(doc, vectors)?
        .into_iter()
        .map(|(index, text, v)| ScoredChunk {
            doc_id: doc.doc_id.clone(),
            index,
            text,
            similarity: cosine(&v, prefix_vector),
        })
        .collect();
    sort_chunks(&mut scored);
    scored.truncate(k);
    Ok(scored)
}

fn sort_chunks(v: &mut [ScoredChunk]) {
    v.sort_by(|a, b| {
        b.similarity
            .total_cmp(&a.similarity)
            .then_with(|| a.doc_id.cmp(&b.doc_id))
            .then(a.index.cmp(&b.index))
    });
}

fn mean_vector(chunks: &[(usize, String, Vec<f32>)], dim: usize) -> Vec<f32> {
    let mut mean = vec![0.0f32; dim];
    for (_, _, v) in chunks {
        for (m, x) in mean.iter_mut().zip(v) {
            *m += x;
        }
    }
    if !chunks.is_empty() {
        mean.iter_mut().for_each(|m| *m /= chunks.len() as f32);
    }
    mean
}

/// Dense retrieval over `doc` plus the `RELATED_DOCS` training documents whose
/// mean chunk vectors are closest to `doc`'s. Documents lacking vectors are
/// skipped as neighbours.
pub fn related_dense_retrieve(
    doc: &DocumentRecord,
    training_docs: &[&DocumentRecord],
    vectors: &VectorTable,
    prefix_vector: &[f32],
    k: usize,
) -> Result<Vec<ScoredChunk>> {
    check_dim(vectors, prefix_vector)?;
    let own = doc_chunks(doc, vectors)?;
    let own_mean = mean_vector(&own, vectors.dim());
    let mut neighbours: Vec<(f64, &DocumentRecord, Vec<(usize, String, Vec<f32>)>)> = training_docs
        .iter()
        .copied()
        .filter(|d| d.doc_id != doc.doc_id)
        .filter_map(|d| {
            let chunks = doc_chunks(d, vectors).ok().filter(|c| !c.is_empty())?;
            Some((cosine(&own_mean, &mean_vector(&chunks, vectors.dim())), d, chunks))
        })
        .collect();
    neighbours.sort_by(|a, b| b.0.total_cmp(&a.0).then_with(|| a.1.doc_id.cmp(&b.1.doc_id)));
    neighbours.truncate(RELATED_DOCS);

    let mut scored = Vec::new();
    let sources = std::iter::once((doc, own)).chain(neighbours.into_iter().map(|(_, d, c)| (d, c)));
    for (d, chunks) in sources {
        for (index, text, v) in chunks {
            scored.push(ScoredChunk { doc_id: d.doc_id.clone(), index, text, similarity: cosine(&v, prefix_vector) });
        }
    }
    sort_chunks(&mut scored);
    scored.truncate(k);
    Ok(scored)
}

/// Optional inputs some context modes need.
#[derive(Debug, Clone, Copy, Default)]
pub struct ContextResources<'a> {
    pub vectors: Option<&'a VectorTable>,
    pub training_docs: &'a [&'a DocumentRecord],
    /// Precomputed BM25 index for the document, if the caller keeps one.
    pub sentence_index: Option<&'a SentenceIndex>,
    /// Precomputed keyphrases for the document.
    pub keyphrases: Option<&'a [Keyphrase]>,
}

fn truncate_section(tok: &TokenizerModel, text: &str, budget: usize) -> (Vec<TokenId>, String) {
    let mut ids = tok.encode(&normalize_query(text));
    ids.truncate(budget);
    let text = tok.decode(&ids).unwrap_or_default();
    (ids, text)
}

/// Builds the context for `mode`. Sections are tokenized and truncated
/// independently, so the token sequence never exceeds 32 + 32 + 352.
pub fn assemble_context(
    doc: &DocumentRecord,
    mode: ContextMode,
    prefix: &str,
    tok: &TokenizerModel,
    res: &ContextResources<'_>,
) -> Result<ContextBundle> {
    if mode == ContextMode::Prefix {
        return Ok(ContextBundle { mode, text: String::new(), tokens: Vec::new(), token_budget_used: TokenBudgetUsed::default() });
    }
    let document: String = match mode {
        ContextMode::Prefix | ContextMode::TitleUrl => String::new(),
        ContextMode::TitleUrlDocument => doc.body.clone(),
        ContextMode::TitleUrlKeyphrases => {
            let owned;
            let kps = match res.keyphrases {
                Some(k) => k,
                None => {
                    owned = extract_keyphrases(doc, KEYPHRASE_MAX_N, KEYPHRASE_LIMIT);
                    &owned
                }
            };
            kps.iter().map(|k| k.phrase.as_str()).collect::<Vec<_>>().join("; ")
        }
        ContextMode::SparseRag => {
            let owned;
            let index = match res.sentence_index {
                Some(i) => i,
                None => {
                    owned = SentenceIndex::new(&doc.body);
                    &owned
                }
            };
            index.retrieve(prefix, RETRIEVE_K).into_iter().map(|s| s.text).collect::<Vec<_>>().join(" ")
        }
        ContextMode::DenseRag | ContextMode::RelDenseRag => {
            let vectors = res
                .vectors
                .ok_or_else(|| QacError::Unavailable(format!("{mode} needs an embedding table")))?;
            let key = normalize_prefix(prefix);
            let pv = vectors
                .get(&key)
                .or_else(|| vectors.get(prefix))
                .ok_or_else(|| QacError::Unavailable(format!("no vector for prefix {key:?}")))?;
            let chunks = if mode == ContextMode::DenseRag {
                dense_retrieve(doc, vectors, pv, RETRIEVE_K)?
            } else {
                related_dense_retrieve(doc, res.training_docs, vectors, pv, RETRIEVE_K)?
            };
            chunks.into_iter().map(|c| c.text).collect::<Vec<_>>().join(" ")
        }
    };

    let (title_ids, title_text) = truncate_section(tok, &doc.title, TITLE_BUDGET);
    let (url_ids, url_text) = truncate_section(tok, &doc.url, URL_BUDGET);
    let (doc_ids, doc_text) = truncate_section(tok, &document, DOCUMENT_BUDGET);
    let token_budget_used = TokenBudgetUsed { title: title_ids.len(), url: url_ids.len(), document: doc_ids.len() };
    let mut tokens = title_ids;
    tokens.extend(url_ids);
    tokens.extend(doc_ids);
    let text = [title_text, url_text, doc_text]
        .into_iter()
        .filter(|s| !s.is_empty())
        .collect::<Vec<_>>()
        .join(" ");
    Ok(ContextBundle { mode, text, tokens, token_budget_used })
}

/// Distinct words, used by the dataset pipeline's verbatim-containment check.
pub fn vocabulary(doc: &DocumentRecord) -> HashSet<String> {
    words(&doc.body).into_iter().collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tokenizer::train_bpe;
    use proptest::prelude::*;

    fn doc(body: &str) -> DocumentRecord {
        DocumentRecord {
            doc_id: "d1".into(),
            url: "https://example.org/alpha".into(),
            title: "Alpha guide".into(),
            body: body.into(),
            queries: vec![],
        }
    }

    /// Brute-force keyphrase scoring over every candidate n-gram.
    fn keyphrase_oracle(body: &str, phrase: &str) -> f64 {
        let sentences: Vec<Vec<String>> = split_sentences(body).iter().map(|s| words(s)).collect();
        let all: Vec<&String> = sentences.iter().flatten().collect();
        let parts: Vec<&str> = phrase.split(' ').collect();
        let first = sentences
            .iter()
            .position(|s| s.windows(parts.len()).any(|w| w.iter().zip(&parts).all(|(a, b)| a == b)))
            .unwrap();
        let product: f64 = parts.iter().map(|p| all.iter().filter(|w| w.as_str() == *p).count() as f64).product();
        product / (1.0 + first as f64)
    }

    #[test]
    fn keyphrases_rank_frequent_early_terms() {
        let body = "alpha beta. alpha gamma.";
        let kps = extract_keyphrases(&doc(body), 3, 50);
        assert_eq!(kps[0].phrase, "alpha");
        for k in &kps {
            assert!((k.score - keyphrase_oracle(body, &k.phrase)).abs() < 1e-12, "{}", k.phrase);
        }
        assert!(extract_keyphrases(&doc(""), 3, 50).is_empty());
        assert_eq!(extract_keyphrases(&doc(body), 3, 1).len(), 1);
    }

    #[test]
    fn keyphrases_skip_stopwords() {
        let kps = extract_keyphrases(&doc("the history of the paris museum is long."), 3, 50);
        let phrases: Vec<_> = kps.iter().map(|k| k.phrase.as_str()).collect();
        assert!(phrases.contains(&"paris museum"));
        assert!(!phrases.iter().any(|p| p.split(' ').any(is_stopword)));
    }

    #[test]
    fn bm25_single_match_is_ln2() {
        let d = doc("alpha beta. gamma delta.");
        let out = bm25_retrieve(&d, "alpha", 20);
        assert_eq!(out[0].text, "alpha beta.");
        assert!((out[0].score - 2f64.ln()).abs() < 1e-12);
        assert_eq!(out[1].score, 0.0);
    }

    #[test]
    fn bm25_ties_keep_document_order() {
        let d = doc("one two. three four. five six.");
        let out = bm25_retrieve(&d, "zebra", 20);
        assert_eq!(out.iter().map(|s| s.index).collect::<Vec<_>>(), vec![0, 1, 2]);
        assert!(out.iter().all(|s| s.score == 0.0));
        assert_eq!(bm25_retrieve(&d, "one", 2).len(), 2);
    }

    /// Direct evaluation of the BM25 formula for one sentence.
    fn bm25_oracle(sentences: &[Vec<String>], i: usize, q: &[String]) -> f64 {
        let n = sentences.len() as f64;
        let avg = sentences.iter().map(|s| s.len()).sum::<usize>() as f64 / n;
        q.iter()
            .map(|t| {
                let df = sentences.iter().filter(|s| s.contains(t)).count() as f64;
                let idf = (1.0 + (n - df + 0.5) / (df + 0.5)).ln();
                let tf = sentences[i].iter().filter(|w| *w == t).count() as f64;
                let dl = sentences[i].len() as f64;
                idf * tf * 2.2 / (tf + 1.2 * (1.0 - 0.75 + 0.75 * dl / avg))
            })
            .sum()
    }

    proptest! {
        #[test]
        fn bm25_matches_formula(
            sents in proptest::collection::vec(proptest::collection::vec("[a-e]{1,2}", 1..8), 1..8),
            q in proptest::collection::vec("[a-e]{1,2}", 1..4),
        ) {
            let body = sents.iter().map(|s| format!("{}.", s.join(" "))).collect::<Vec<_>>().join(" ");
            let index = SentenceIndex::new(&body);
            prop_assert_eq!(index.len(), sents.len());
            for i in 0..sents.len() {
                let want = bm25_oracle(&sents, i, &q);
                prop_assert!((index.score(i, &q) - want).abs() < 1e-9);
            }
        }

        #[test]
        fn keyphrases_deterministic_and_bounded(body in "[a-f ]{0,80}(\\. [a-f ]{0,40}){0,3}", limit in 0usize..10) {
            let d = doc(&body);
            let a = extract_keyphrases(&d, 3, limit);
            prop_assert!(a.len() <= limit);
            prop_assert_eq!(a, extract_keyphrases(&d, 3, limit));
        }
    }

    #[test]
    fn chunk_offsets() {
        let body: String = "x".repeat(450);
        let offsets: Vec<_> = chunk_body(&body).into_iter().map(|(o, _)| o).collect();
        assert_eq!(offsets, vec![0, 170, 340]);
        assert!(chunk_body("").is_empty());
        assert_eq!(chunk_body(&"y".repeat(200)).len(), 1);
        assert_eq!(chunk_body(&"y".repeat(201)).len(), 2);
    }

    fn vector_fixture() -> (DocumentRecord, VectorTable) {
        let d = doc(&"z".repeat(450));
        let mut t = VectorTable::new(3);
        t.insert("d1#0", vec![1.0, 0.0, 0.0]).unwrap();
        t.insert("d1#1", vec![0.0, 1.0, 0.0]).unwrap();
        t.insert("d1#2", vec![0.6, 0.8, 0.0]).unwrap();
        (d, t)
    }

    #[test]
    fn dense_similarity_cases() {
        let (d, t) = vector_fixture();
        let out = dense_retrieve(&d, &t, &[0.0, 1.0, 0.0], 20).unwrap();
        assert_eq!(out[0].index, 1);
        assert!((out[0].similarity - 1.0).abs() < 1e-12);
        let ortho = dense_retrieve(&d, &t, &[0.0, 0.0, 1.0], 20).unwrap();
        assert!(ortho.iter().all(|c| c.similarity == 0.0));
        assert!(matches!(dense_retrieve(&d, &t, &[1.0, 0.0], 20), Err(QacError::Unavailable(_))));
        let mut missing = d.clone();
        missing.doc_id = "d2".into();
        assert!(matches!(dense_retrieve(&missing, &t, &[1.0, 0.0, 0.0], 20), Err(QacError::Unavailable(_))));
    }

    #[test]
    fn related_retrieval_pulls_neighbour_chunks() {
        let (d, mut t) = vector_fixture();
        let mut other = doc("neighbour text");
        other.doc_id = "d2".into();
        t.insert("d2#0", vec![0.0, 0.0, 1.0]).unwrap();
        let out = related_dense_retrieve(&d, &[&d, &other], &t, &[0.0, 0.0, 1.0], 2).unwrap();
        assert_eq!(out[0].doc_id, "d2");
        assert!((out[0].similarity - 1.0).abs() < 1e-12);
    }

    #[test]
    fn vector_file_parsing() {
        let text = "QVEC1 2\nd1#0\t0.5,1\nparis \t1,0\n";
        let t = VectorTable::parse(text).unwrap();
        assert_eq!(t.get("d1#0"), Some(&[0.5f32, 1.0][..]));
        assert_eq!(t.get("paris "), Some(&[1.0f32, 0.0][..]));
        assert_eq!(VectorTable::parse(&t.to_text()).unwrap(), t);
        assert!(matches!(VectorTable::parse("QVEC1 2\nk\t1,2,3\n"), Err(QacError::Unavailable(_))));
        assert!(VectorTable::parse("VEC 2\n").is_err());
    }

    fn tok() -> TokenizerModel {
        train_bpe(&["alpha guide https://example.org/alpha", "beta gamma delta epsilon."], 40).unwrap()
    }

    #[test]
    fn assemble_modes() {
        let tok = tok();
        let d = doc("alpha beta. gamma delta.");
        let res = ContextResources::default();
        let p = assemble_context(&d, ContextMode::Prefix, "al", &tok, &res).unwrap();
        assert!(p.text.is_empty() && p.tokens.is_empty());

        let mut short = d.clone();
        short.title = "ab".into();
        let tu = assemble_context(&short, ContextMode::TitleUrl, "al", &tok, &res).unwrap();
        assert_eq!(tu.token_budget_used.title, tok.encode("ab").len());
        assert_eq!(tu.token_budget_used.document, 0);

        let tuk = assemble_context(&d, ContextMode::TitleUrlKeyphrases, "al", &tok, &res).unwrap();
        assert!(tuk.text.contains("alpha"));
        let sparse = assemble_context(&d, ContextMode::SparseRag, "gamma", &tok, &res).unwrap();
        assert!(sparse.text.contains("gamma delta. alpha beta."));
        assert!(matches!(
            assemble_context(&d, ContextMode::DenseRag, "al", &tok, &res),
            Err(QacError::Unavailable(_))
        ));
    }

    #[test]
    fn document_section_is_capped_at_352() {
        let tok = tok();
        let body = "q ".repeat(1000);
        let d = doc(&body);
        assert!(tok.encode(&body).len() >= 1000);
        let b = assemble_context(&d, ContextMode::TitleUrlDocument, "q", &tok, &ContextResources::default()).unwrap();
        assert_eq!(b.token_budget_used.document, 352);
        assert!(b.tokens.len() <= 416);
    }

    #[test]
    fn dense_mode_uses_prefix_vector() {
        let tok = tok();
        let (d, mut t) = vector_fixture();
        t.insert("al", vec![0.0, 1.0, 0.0]).unwrap();
        let res = ContextResources { vectors: Some(&t), ..Default::default() };
        let b = assemble_context(&d, ContextMode::DenseRag, "al", &tok, &res).unwrap();
        assert!(b.token_budget_used.document > 0);
    }

    #[test]
    fn corpus_tsv_round_trip() {
        let mut d = doc("line one\nline\ttwo \\ end");
        d.title = "t\\n".into();
        let text = corpus_to_tsv(std::slice::from_ref(&d));
        assert_eq!(text.lines().count(), 1);
        assert_eq!(parse_corpus_tsv(&text).unwrap(), vec![d]);
        assert!(parse_corpus_tsv("a\tb\tc\n").is_err());
        assert!(parse_corpus_tsv("a\tb\tc\td\na\tb\tc\td\n").is_err());
        assert!(parse_corpus_tsv("a\tb\tc\tbad\\q\n").is_err());
    }

    #[test]
    fn mode_parsing() {
        assert_eq!("p+tu".parse::<ContextMode>().unwrap(), ContextMode::TitleUrl);
        assert_eq!("SPARSE_RAG".parse::<ContextMode>().unwrap(), ContextMode::SparseRag);
        for m in ContextMode::ALL {
            assert_eq!(m.as_str().parse::<ContextMode>().unwrap(), m);
        }
        let err = "P_TUS".parse::<ContextMode>().unwrap_err().to_string();
        assert!(err.contains("summaries"));
    }

    proptest! {
        #[test]
        fn budget_ceiling(title in "[a-z ]{0,300}", body in "[a-z .]{0,3000}", mode_i in 0usize..5) {
            let tok = tok();
            let mut d = doc(&body);
            d.title = title;
            d.url = "x".repeat(200);
            let mode = ContextMode::ALL[mode_i];
            let b = assemble_context(&d, mode, "a b", &tok, &ContextResources::default()).unwrap();
            prop_assert!(b.tokens.len() <= 416);
            prop_assert!(b.token_budget_used.title <= 32);
            prop_assert!(b.token_budget_used.url <= 32);
            prop_assert!(b.token_budget_used.document <= 352);
            prop_assert_eq!(b.tokens.len(), b.token_budget_used.total());
        }
    }
}
