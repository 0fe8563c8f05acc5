//! Corpus-level completion engine: shared models plus per-document indexes.

use std::collections::{BTreeMap, HashMap};
use std::fmt;
use std::fs;
use std::path::Path;
use std::str::FromStr;
use std::sync::{Arc, OnceLock};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::context::{
    assemble_context, extract_keyphrases, ContextMode, ContextResources, DocumentRecord, Keyphrase, SentenceIndex,
    VectorTable, KEYPHRASE_LIMIT, KEYPHRASE_MAX_N,
};
use crate::dataset::{dynamic_prefix_split, QueryDocPair};
use crate::decoder::{guided_beam_search, DecodeConfig};
use crate::error::{QacError, Result};
use crate::scorer::{NgramModel, Scorer, ScorerContext, DEFAULT_DISCOUNT, DEFAULT_LAMBDA, DEFAULT_ORDER};
use crate::suggestion::{Source, Suggestion};
use crate::text::normalize_prefix;
use crate::tokenizer::{train_bpe, TokenizerModel, DEFAULT_VOCAB_SIZE, EOS};
use crate::trie::{CompletionTrie, GuidanceTrie, WeightedQuery};

pub const TOKENIZER_FILE: &str = "tokenizer.qtok";
pub const LM_FILE: &str = "lm.qngrm";
pub const GLOBAL_TRIE_FILE: &str = "global.qtrie";
pub const GLOBAL_GUIDANCE_FILE: &str = "global.gtrie";
pub const DOC_MODEL_ORDER: usize = 3;

/// Which completion trie a request draws on.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TrieScope {
    #[default]
    Global,
    DocQ,
    DocC,
}

impl fmt::Display for TrieScope {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::Global => "global",
            Self::DocQ => "docq",
            Self::DocC => "docc",
        })
    }
}

impl FromStr for TrieScope {
    type Err = QacError;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "global" => Ok(Self::Global),
            "docq" => Ok(Self::DocQ),
            "docc" => Ok(Self::DocC),
            _ => Err(QacError::invalid(format!("unknown trie {s:?}; expected global, docq or docc"))),
        }
    }
}

/// Everything a completion request can set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CompleteOptions {
    pub mode: Source,
    pub trie: TrieScope,
    pub context: ContextMode,
    pub lambda: f64,
    pub decode: DecodeConfig,
}

impl Default for CompleteOptions {
    fn default() -> Self {
        Self {
            mode: Source::Guided,
            trie: TrieScope::Global,
            context: ContextMode::Prefix,
            lambda: DEFAULT_LAMBDA,
            decode: DecodeConfig::default(),
        }
    }
}

/// Per-request changes to [`CompleteOptions`]; unset fields keep the default.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Overrides {
    pub mode: Option<Source>,
    pub trie: Option<TrieScope>,
    pub context: Option<ContextMode>,
    pub k: Option<usize>,
    pub alpha: Option<f64>,
    pub beta: Option<f64>,
    pub bias: Option<f64>,
    pub lambda: Option<f64>,
    pub beam: Option<usize>,
}

impl CompleteOptions {
    pub fn with(&self, o: &Overrides) -> Result<Self> {
        let mut out = self.clone();
        if let Some(m) = o.mode {
            out.mode = m;
        }
        if let Some(t) = o.trie {
            out.trie = t;
        }
        if let Some(c) = o.context {
            out.context = c;
        }
        if let Some(k) = o.k {
            out.decode.top_k_out = k;
        }
        if let Some(a) = o.alpha {
            out.decode.alpha = a;
        }
        if let Some(b) = o.beta {
            out.decode.beta = b;
        }
        if let Some(b) = o.bias {
            out.decode.initial_bias = b;
        }
        if let Some(l) = o.lambda {
            out.lambda = l;
        }
        if let Some(k) = o.beam {
            out.decode.beam_size = k;
        }
        out.validate()?;
        Ok(out)
    }

    pub fn validate(&self) -> Result<()> {
        self.decode.validate()?;
        if !(0.0..=1.0).contains(&self.lambda) {
            return Err(QacError::invalid(format!("lambda must lie in [0, 1], got {}", self.lambda)));
        }
        if self.mode == Source::Guided && self.trie == TrieScope::DocC {
            return Err(QacError::invalid("guided decoding uses the global or docq trie"));
        }
        Ok(())
    }
}

/// Indexes built once per ingested document.
#[derive(Debug)]
pub struct DocIndex {
    pub record: DocumentRecord,
    pub docq: CompletionTrie,
    pub docc: CompletionTrie,
    pub guidance: GuidanceTrie,
    pub sentences: SentenceIndex,
    pub keyphrases: Vec<Keyphrase>,
    /// Document models for the prefix-independent context modes.
    static_models: [OnceLock<Option<Arc<NgramModel>>>; 3],
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct IngestStats {
    pub doc_id: String,
    pub docq_terminals: usize,
    pub docc_terminals: usize,
    pub guidance_sequences: usize,
    pub sentences: usize,
    pub keyphrases: usize,
    pub replaced: bool,
}

/// Shared, trained artifacts.
#[derive(Debug, Clone)]
pub struct ModelBundle {
    pub tokenizer: Arc<TokenizerModel>,
    pub lm: Arc<NgramModel>,
    pub global_trie: Arc<CompletionTrie>,
    pub global_guidance: Arc<GuidanceTrie>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub vocab_size: usize,
    pub order: usize,
    pub discount: f64,
    /// Random prefix/suffix splits drawn per training pair.
    pub splits_per_pair: usize,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self { vocab_size: DEFAULT_VOCAB_SIZE, order: DEFAULT_ORDER, discount: DEFAULT_DISCOUNT, splits_per_pair: 8, seed: 13 }
    }
}

/// Distinct training queries with clicks summed across documents.
pub fn global_queries(train: &[QueryDocPair]) -> Vec<WeightedQuery> {
    let mut m: BTreeMap<&str, f64> = BTreeMap::new();
    for p in train {
        *m.entry(p.query.text.as_str()).or_default() += p.query.clicks;
    }
    m.into_iter().map(|(text, clicks)| WeightedQuery { text: text.to_string(), clicks }).collect()
}

/// Copies each document's training queries onto its record.
pub fn attach_queries(docs: &[DocumentRecord], train: &[QueryDocPair]) -> Vec<DocumentRecord> {
    let mut by_doc: HashMap<&str, Vec<WeightedQuery>> = HashMap::new();
    for p in train {
        by_doc.entry(p.doc_id.as_str()).or_default().push(p.query.clone());
    }
    docs.iter()
        .map(|d| DocumentRecord { queries: by_doc.remove(d.doc_id.as_str()).unwrap_or_default(), ..d.clone() })
        .collect()
}

/// BPE over training queries, titles, urls and bodies.
pub fn train_tokenizer(train: &[QueryDocPair], docs: &[DocumentRecord], vocab_size: usize) -> Result<TokenizerModel> {
    let mut corpus: Vec<String> = global_queries(train).into_iter().map(|q| q.text).collect();
    for d in docs {
        for field in [&d.title, &d.url, &d.body] {
            let n = crate::text::normalize_query(field);
            if !n.is_empty() {
                corpus.push(n);
            }
        }
    }
    train_bpe(&corpus, vocab_size)
}

/// Global n-gram model over `encode_split(prefix, suffix) ⊕ EOS` for seeded
/// random splits of every training query.
pub fn train_lm(tok: &TokenizerModel, train: &[QueryDocPair], cfg: &TrainConfig) -> Result<NgramModel> {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut seqs = Vec::with_capacity(train.len() * cfg.splits_per_pair);
    for p in train {
        for _ in 0..cfg.splits_per_pair {
            let (prefix, suffix) = dynamic_prefix_split(&p.query.text, &mut rng)?;
            let mut seq = tok.encode_split(&prefix, &suffix)?;
            seq.push(EOS);
            seqs.push(seq);
        }
    }
    NgramModel::train(&seqs, cfg.order, tok.vocab_size(), cfg.discount)
}

impl ModelBundle {
    pub fn train(train: &[QueryDocPair], docs: &[DocumentRecord], cfg: &TrainConfig) -> Result<Self> {
        if train.is_empty() {
            return Err(QacError::invalid("no training pairs"));
        }
        let tok = train_tokenizer(train, docs, cfg.vocab_size)?;
        let lm = train_lm(&tok, train, cfg)?;
        Ok(Self::assemble(tok, lm, train))
    }

    pub fn assemble(tok: TokenizerModel, lm: NgramModel, train: &[QueryDocPair]) -> Self {
        let queries = global_queries(train);
        let global_guidance = GuidanceTrie::build(&queries, &tok);
        Self {
            tokenizer: Arc::new(tok),
            lm: Arc::new(lm),
            global_trie: Arc::new(CompletionTrie::build(&queries)),
            global_guidance: Arc::new(global_guidance),
        }
    }

    pub fn save(&self, dir: impl AsRef<Path>) -> Result<()> {
        let dir = dir.as_ref();
        fs::create_dir_all(dir)?;
        self.tokenizer.save(dir.join(TOKENIZER_FILE))?;
        self.lm.save(dir.join(LM_FILE))?;
        self.global_trie.save(dir.join(GLOBAL_TRIE_FILE))?;
        self.global_guidance.save(dir.join(GLOBAL_GUIDANCE_FILE))?;
        Ok(())
    }

    pub fn load(dir: impl AsRef<Path>) -> Result<Self> {
        let dir = dir.as_ref();
        let tokenizer = TokenizerModel::load(dir.join(TOKENIZER_FILE))?;
        let lm = NgramModel::load(dir.join(LM_FILE))?;
        if lm.vocab_size() != tokenizer.vocab_size() {
            return Err(QacError::corrupt("language model and tokenizer vocabularies differ"));
        }
        Ok(Self {
            tokenizer: Arc::new(tokenizer),
            lm: Arc::new(lm),
            global_trie: Arc::new(CompletionTrie::load(dir.join(GLOBAL_TRIE_FILE))?),
            global_guidance: Arc::new(GuidanceTrie::load(dir.join(GLOBAL_GUIDANCE_FILE))?),
        })
    }
}

/// Immutable once built; ingestion returns a new engine sharing the models.
#[derive(Clone)]
pub struct Engine {
    tokenizer: Arc<TokenizerModel>,
    lm: Arc<NgramModel>,
    scorer: Arc<dyn Scorer>,
    global_trie: Arc<CompletionTrie>,
    global_guidance: Arc<GuidanceTrie>,
    docs: BTreeMap<String, Arc<DocIndex>>,
    vectors: Option<Arc<VectorTable>>,
    defaults: CompleteOptions,
}

impl fmt::Debug for Engine {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Engine")
            .field("vocab_size", &self.tokenizer.vocab_size())
            .field("documents", &self.docs.len())
            .field("defaults", &self.defaults)
            .finish()
    }
}

fn static_slot(mode: ContextMode) -> Option<usize> {
    match mode {
        ContextMode::TitleUrl => Some(0),
        ContextMode::TitleUrlDocument => Some(1),
        ContextMode::TitleUrlKeyphrases => Some(2),
        _ => None,
    }
}

impl Engine {
    pub fn new(models: ModelBundle) -> Self {
        let scorer: Arc<dyn Scorer> = models.lm.clone();
        Self {
            tokenizer: models.tokenizer,
            lm: models.lm,
            scorer,
            global_trie: models.global_trie,
            global_guidance: models.global_guidance,
            docs: BTreeMap::new(),
            vectors: None,
            defaults: CompleteOptions::default(),
        }
    }

    /// Replaces the scorer, e.g. with an external process. Document models
    /// are still n-gram models over the same tokenizer.
    pub fn with_scorer(mut self, scorer: Arc<dyn Scorer>) -> Result<Self> {
        if scorer.vocab_size() != self.tokenizer.vocab_size() {
            return Err(QacError::invalid("scorer vocabulary differs from the tokenizer"));
        }
        self.scorer = scorer;
        Ok(self)
    }

    pub fn with_vectors(mut self, vectors: VectorTable) -> Self {
        self.vectors = Some(Arc::new(vectors));
        self
    }

    pub fn with_defaults(mut self, defaults: CompleteOptions) -> Result<Self> {
        defaults.validate()?;
        self.defaults = defaults;
        Ok(self)
    }

    pub fn defaults(&self) -> &CompleteOptions {
        &self.defaults
    }

    pub fn tokenizer(&self) -> &TokenizerModel {
        &self.tokenizer
    }

    pub fn global_trie(&self) -> &CompletionTrie {
        &self.global_trie
    }

    pub fn global_guidance(&self) -> &GuidanceTrie {
        &self.global_guidance
    }

    pub fn document(&self, doc_id: &str) -> Option<&DocIndex> {
        self.docs.get(doc_id).map(Arc::as_ref)
    }

    pub fn documents(&self) -> impl Iterator<Item = &DocumentRecord> {
        self.docs.values().map(|d| &d.record)
    }

    pub fn len(&self) -> usize {
        self.docs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.docs.is_empty()
    }

    /// Builds the per-document indexes for `record`.
    pub fn index_document(&self, record: DocumentRecord) -> Result<DocIndex> {
        if record.doc_id.trim().is_empty() {
            return Err(QacError::invalid("doc_id: must be non-empty"));
        }
        let queries = record
            .queries
            .iter()
            .enumerate()
            .map(|(i, q)| WeightedQuery::new(&q.text, q.clicks).map_err(|e| QacError::invalid(format!("queries[{i}]: {e}"))))
            .collect::<Result<Vec<_>>>()?;
        let record = DocumentRecord { queries, ..record };
        Ok(DocIndex {
            docq: CompletionTrie::build(&record.queries),
            docc: CompletionTrie::from_body(&record.body),
            guidance: GuidanceTrie::build(&record.queries, &self.tokenizer),
            sentences: SentenceIndex::new(&record.body),
            keyphrases: extract_keyphrases(&record, KEYPHRASE_MAX_N, KEYPHRASE_LIMIT),
            static_models: Default::default(),
            record,
        })
    }

    /// Returns a new engine with `record` indexed; `self` is unchanged.
    pub fn with_document(&self, record: DocumentRecord) -> Result<(Self, IngestStats)> {
        let index = self.index_document(record)?;
        let mut next = self.clone();
        let stats = next.insert_index(index);
        Ok((next, stats))
    }

    /// Indexes many documents at once.
    pub fn with_documents(mut self, records: impl IntoIterator<Item = DocumentRecord>) -> Result<Self> {
        for r in records {
            let index = self.index_document(r)?;
            self.insert_index(index);
        }
        Ok(self)
    }

    fn insert_index(&mut self, index: DocIndex) -> IngestStats {
        let stats = IngestStats {
            doc_id: index.record.doc_id.clone(),
            docq_terminals: index.docq.terminal_count(),
            docc_terminals: index.docc.terminal_count(),
            guidance_sequences: index.guidance.sequence_count(),
            sentences: index.sentences.len(),
            keyphrases: index.keyphrases.len(),
            replaced: false,
        };
        let replaced = self.docs.insert(stats.doc_id.clone(), Arc::new(index)).is_some();
        IngestStats { replaced, ..stats }
    }

    fn doc_model(&self, doc: &DocIndex, mode: ContextMode, prefix: &str) -> Result<Option<Arc<NgramModel>>> {
        let build = || -> Result<Option<Arc<NgramModel>>> {
            let records: Vec<&DocumentRecord> = if mode == ContextMode::RelDenseRag {
                self.documents().collect()
            } else {
                Vec::new()
            };
            let res = ContextResources {
                vectors: self.vectors.as_deref(),
                training_docs: &records,
                sentence_index: Some(&doc.sentences),
                keyphrases: Some(&doc.keyphrases),
            };
            let bundle = assemble_context(&doc.record, mode, prefix, &self.tokenizer, &res)?;
            if bundle.tokens.is_empty() {
                return Ok(None);
            }
            let m = NgramModel::train(&[bundle.tokens], DOC_MODEL_ORDER, self.tokenizer.vocab_size(), DEFAULT_DISCOUNT)?;
            Ok(Some(Arc::new(m)))
        };
        match static_slot(mode) {
            Some(slot) => {
                if let Some(m) = doc.static_models[slot].get() {
                    return Ok(m.clone());
                }
                let m = build()?;
                Ok(doc.static_models[slot].get_or_init(|| m).clone())
            }
            None => build(),
        }
    }

    /// Scorer conditioning for a request; λ is ignored without document context.
    pub fn scorer_context(&self, doc_id: Option<&str>, prefix: &str, opts: &CompleteOptions) -> Result<ScorerContext> {
        let (Some(id), true) = (doc_id, opts.context != ContextMode::Prefix) else {
            return Ok(ScorerContext::global());
        };
        let doc = self.docs.get(id).ok_or_else(|| QacError::NotFound(format!("document {id:?}")))?;
        match self.doc_model(doc, opts.context, prefix)? {
            Some(m) => Ok(ScorerContext::with_doc(m, opts.lambda)?.with_doc_id(id)),
            None => Ok(ScorerContext::global().with_doc_id(id)),
        }
    }

    /// Completes `prefix` under `opts`. Document-scoped tries and context need
    /// `doc_id`; an unknown id is a not-found error.
    pub fn complete(&self, doc_id: Option<&str>, prefix: &str, opts: &CompleteOptions) -> Result<Vec<Suggestion>> {
        opts.validate()?;
        let doc = match doc_id {
            Some(id) => Some(self.docs.get(id).ok_or_else(|| QacError::NotFound(format!("document {id:?}")))?),
            None => None,
        };
        let need_doc = |what: &str| QacError::invalid(format!("{what} needs a doc_id"));
        match opts.mode {
            Source::Mpc => {
                let p = normalize_prefix(prefix);
                if p.trim().is_empty() {
                    return Err(QacError::invalid("prefix is empty after normalization"));
                }
                let trie = match opts.trie {
                    TrieScope::Global => &*self.global_trie,
                    TrieScope::DocQ => &doc.ok_or_else(|| need_doc("the docq trie"))?.docq,
                    TrieScope::DocC => &doc.ok_or_else(|| need_doc("the docc trie"))?.docc,
                };
                Ok(trie.mpc(&p, opts.decode.top_k_out))
            }
            Source::Lm | Source::Guided => {
                let ctx = self.scorer_context(doc_id, prefix, opts)?;
                let gt = match (opts.mode, opts.trie) {
                    (Source::Lm, _) => None,
                    (_, TrieScope::Global) => Some(&*self.global_guidance),
                    (_, TrieScope::DocQ) => Some(&doc.ok_or_else(|| need_doc("the docq trie"))?.guidance),
                    (_, TrieScope::DocC) => unreachable!("rejected by validate"),
                };
                guided_beam_search(&*self.scorer, &ctx, &self.tokenizer, gt, prefix, &opts.decode)
            }
        }
    }

    /// Global model, used by tests that need the raw n-gram scorer.
    pub fn lm(&self) -> &NgramModel {
        &self.lm
    }
}
