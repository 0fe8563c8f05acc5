//! Token scorers for the decoder.
//!
//! The contract is [`Scorer::log_probs`]: given the beam's tokens and a
//! [`ScorerContext`], return a full-vocabulary log-probability vector. The
//! shipped scorer is an absolute-discounting n-gram model interpolated with a
//! per-document model trained on the assembled context text:
//!
//! `log[(1 − λ)·P_global(v | h) + λ·P_doc(v | h)]`
//!
//! Each component backs off recursively,
//! `P_k(v|h) = max(c(h,v) − D, 0)/c(h) + (D·N₁₊(h)/c(h))·P_{k−1}(v|h')`, down to
//! a uniform floor `1/V`. Contexts with no counts pass their whole mass down.

use std::collections::HashMap;
use std::fs;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;
use std::process::{Child, ChildStdin, ChildStdout, Command, Stdio};
use std::sync::{Arc, Mutex};

use base64::Engine as _;
use serde::Serialize;

use crate::error::{QacError, Result};
use crate::tokenizer::TokenId;
use crate::trie::{write_varint, Reader};

pub const DEFAULT_ORDER: usize = 4;
pub const DEFAULT_DISCOUNT: f64 = 0.75;
pub const DEFAULT_LAMBDA: f64 = 0.3;

const MAGIC: &[u8; 6] = b"QNGRM1";

/// Full-vocabulary next-token log-probabilities.
pub trait Scorer: Send + Sync {
    fn vocab_size(&self) -> usize;
    fn log_probs(&self, ctx: &ScorerContext, tokens: &[TokenId]) -> Result<Vec<f64>>;
}

/// Per-request conditioning: an optional document model and its weight.
#[derive(Debug, Clone, Default)]
pub struct ScorerContext {
    doc_model: Option<Arc<NgramModel>>,
    lambda: f64,
    doc_id: Option<String>,
}

impl ScorerContext {
    /// No document conditioning; λ is 0.
    pub fn global() -> Self {
        Self::default()
    }

    pub fn with_doc(doc_model: Arc<NgramModel>, lambda: f64) -> Result<Self> {
        if !(0.0..=1.0).contains(&lambda) {
            return Err(QacError::invalid(format!("lambda must lie in [0, 1], got {lambda}")));
        }
        Ok(Self { doc_model: Some(doc_model), lambda, doc_id: None })
    }

    pub fn with_doc_id(mut self, doc_id: impl Into<String>) -> Self {
        self.doc_id = Some(doc_id.into());
        self
    }

    pub fn lambda(&self) -> f64 {
        if self.doc_model.is_some() {
            self.lambda
        } else {
            0.0
        }
    }

    pub fn doc_model(&self) -> Option<&NgramModel> {
        self.doc_model.as_deref()
    }

    pub fn doc_id(&self) -> Option<&str> {
        self.doc_id.as_deref()
    }
}

#[derive(Debug, Clone, PartialEq)]
struct ContextCounts {
    total: u64,
    /// Sorted by token id.
    next: Vec<(TokenId, u64)>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct NgramModel {
    order: usize,
    vocab_size: usize,
    discount: f64,
    /// `tables[k]` maps length-`k` contexts to their continuation counts.
    tables: Vec<HashMap<Vec<TokenId>, ContextCounts>>,
}

impl NgramModel {
    /// Counts every context length `0..order` at every position, so lower
    /// orders are available for backoff.
    pub fn train<S: AsRef<[TokenId]>>(sequences: &[S], order: usize, vocab_size: usize, discount: f64) -> Result<Self> {
        if order < 2 {
            return Err(QacError::invalid(format!("n-gram order must be at least 2, got {order}")));
        }
        if !(discount > 0.0 && discount < 1.0) {
            return Err(QacError::invalid(format!("discount must lie in (0, 1), got {discount}")));
        }
        if sequences.iter().all(|s| s.as_ref().is_empty()) {
            return Err(QacError::invalid("n-gram training input is empty"));
        }
        let mut raw: Vec<HashMap<Vec<TokenId>, HashMap<TokenId, u64>>> = vec![HashMap::new(); order];
        for seq in sequences {
            let seq = seq.as_ref();
            if let Some(&bad) = seq.iter().find(|&&t| t as usize >= vocab_size) {
                return Err(QacError::invalid(format!("token {bad} outside vocabulary of {vocab_size}")));
            }
            for i in 0..seq.len() {
                for (k, table) in raw.iter_mut().enumerate().take(i + 1) {
                    *table.entry(seq[i - k..i].to_vec()).or_default().entry(seq[i]).or_default() += 1;
                }
            }
        }
        let tables = raw
            .into_iter()
            .map(|t| {
                t.into_iter()
                    .map(|(ctx, next)| {
                        let mut next: Vec<_> = next.into_iter().collect();
                        next.sort_unstable();
                        let total = next.iter().map(|&(_, c)| c).sum();
                        (ctx, ContextCounts { total, next })
                    })
                    .collect()
            })
            .collect();
        Ok(Self { order, vocab_size, discount, tables })
    }

    pub fn order(&self) -> usize {
        self.order
    }

    pub fn vocab_size(&self) -> usize {
        self.vocab_size
    }

    pub fn discount(&self) -> f64 {
        self.discount
    }

    /// Raw count of `token` after exactly `context` (length < order).
    pub fn count(&self, context: &[TokenId], token: TokenId) -> u64 {
        self.tables
            .get(context.len())
            .and_then(|t| t.get(context))
            .and_then(|c| c.next.binary_search_by_key(&token, |&(t, _)| t).ok().map(|i| c.next[i].1))
            .unwrap_or(0)
    }

    /// The same model with its highest-order counts removed; it keeps the
    /// declared order, so histories of that length fall through to backoff.
    pub fn without_top_order(&self) -> Self {
        let mut m = self.clone();
        if let Some(top) = m.tables.last_mut() {
            top.clear();
        }
        m
    }

    /// Next-token distribution after `history` (only the last `order − 1`
    /// tokens matter).
    pub fn probs(&self, history: &[TokenId]) -> Vec<f64> {
        let h = &history[history.len().saturating_sub(self.order - 1)..];
        let mut out = vec![0.0; self.vocab_size];
        // Accumulate from the longest context down; `mass` is the product of
        // backoff weights above the current level.
        let mut mass = 1.0;
        for k in (0..=h.len()).rev() {
            let Some(c) = self.tables[k].get(&h[h.len() - k..]) else { continue };
            let total = c.total as f64;
            for &(v, n) in &c.next {
                out[v as usize] += mass * ((n as f64 - self.discount).max(0.0) / total);
            }
            mass *= self.discount * c.next.len() as f64 / total;
        }
        let floor = mass / self.vocab_size as f64;
        out.iter_mut().for_each(|p| *p += floor);
        out
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&(self.order as u32).to_le_bytes());
        out.extend_from_slice(&(self.vocab_size as u32).to_le_bytes());
        out.extend_from_slice(&self.discount.to_le_bytes());
        for table in &self.tables {
            let mut contexts: Vec<_> = table.iter().collect();
            contexts.sort_by(|a, b| a.0.cmp(b.0));
            out.extend_from_slice(&(contexts.len() as u32).to_le_bytes());
            for (ctx, counts) in contexts {
                for &t in ctx {
                    out.extend_from_slice(&t.to_le_bytes());
                }
                write_varint(&mut out, counts.next.len() as u64);
                for &(t, c) in &counts.next {
                    out.extend_from_slice(&t.to_le_bytes());
                    write_varint(&mut out, c);
                }
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader { bytes, pos: 0 };
        if r.take(6)? != MAGIC {
            return Err(QacError::corrupt("bad magic, expected QNGRM1"));
        }
        let order = r.u32()? as usize;
        let vocab_size = r.u32()? as usize;
        let discount = r.f64()?;
        if !(2..=64).contains(&order) || vocab_size == 0 || !(discount > 0.0 && discount < 1.0) {
            return Err(QacError::corrupt("implausible n-gram header"));
        }
        let check_token = |t: u32| {
            if (t as usize) < vocab_size {
                Ok(t)
            } else {
                Err(QacError::corrupt(format!("token {t} outside vocabulary")))
            }
        };
        let mut tables = Vec::with_capacity(order);
        for k in 0..order {
            let n_ctx = r.u32()? as usize;
            let mut table = HashMap::with_capacity(n_ctx.min(bytes.len()));
            for _ in 0..n_ctx {
                let ctx = (0..k).map(|_| r.u32().and_then(check_token)).collect::<Result<Vec<_>>>()?;
                let n_next = r.varint()? as usize;
                if n_next == 0 || n_next > bytes.len() {
                    return Err(QacError::corrupt("bad continuation count"));
                }
                let mut next = Vec::with_capacity(n_next);
                for _ in 0..n_next {
                    let t = check_token(r.u32()?)?;
                    let c = r.varint()?;
                    if c == 0 || next.last().is_some_and(|&(p, _)| p >= t) {
                        return Err(QacError::corrupt("continuations not positive and ascending"));
                    }
                    next.push((t, c));
                }
                let total = next.iter().map(|&(_, c)| c).sum();
                if table.insert(ctx, ContextCounts { total, next }).is_some() {
                    return Err(QacError::corrupt("duplicate context"));
                }
            }
            tables.push(table);
        }
        if r.pos != bytes.len() {
            return Err(QacError::corrupt("trailing bytes after n-gram tables"));
        }
        Ok(Self { order, vocab_size, discount, tables })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        fs::write(path, self.to_bytes())?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_bytes(&fs::read(path)?)
    }
}

/// Interpolated log-probabilities of the global model and the context's
/// document model.
pub fn logits(model: &NgramModel, ctx: &ScorerContext, beam_tokens: &[TokenId]) -> Vec<f64> {
    let mut p = model.probs(beam_tokens);
    let lambda = ctx.lambda();
    if let Some(doc) = ctx.doc_model().filter(|_| lambda > 0.0) {
        let pd = doc.probs(beam_tokens);
        for (g, d) in p.iter_mut().zip(pd) {
            *g = (1.0 - lambda) * *g + lambda * d;
        }
    }
    p.into_iter().map(f64::ln).collect()
}

impl Scorer for NgramModel {
    fn vocab_size(&self) -> usize {
        self.vocab_size
    }

    fn log_probs(&self, ctx: &ScorerContext, tokens: &[TokenId]) -> Result<Vec<f64>> {
        if let Some(doc) = ctx.doc_model() {
            if doc.vocab_size != self.vocab_size {
                return Err(QacError::invalid("document model vocabulary differs from the global model"));
            }
        }
        Ok(logits(self, ctx, tokens))
    }
}

/// One request line of the external-scorer protocol.
#[derive(Debug, Serialize)]
pub struct ScoreRequest<'a> {
    pub tokens: &'a [TokenId],
    pub doc_id: Option<&'a str>,
}

pub fn encode_score_request(tokens: &[TokenId], doc_id: Option<&str>) -> String {
    let mut line = serde_json::to_string(&ScoreRequest { tokens, doc_id }).expect("request serializes");
    line.push('\n');
    line
}

/// Parses a response line: base64 of `vocab_size` little-endian `f32` log-probabilities.
pub fn decode_score_response(line: &str, vocab_size: usize) -> Result<Vec<f64>> {
    let raw = base64::engine::general_purpose::STANDARD
        .decode(line.trim())
        .map_err(|e| QacError::Parse(format!("scorer response is not base64: {e}")))?;
    if raw.len() != vocab_size * 4 {
        return Err(QacError::Parse(format!(
            "scorer response holds {} bytes, expected {}",
            raw.len(),
            vocab_size * 4
        )));
    }
    Ok(raw
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().unwrap()) as f64)
        .collect())
}

pub fn encode_score_response(log_probs: &[f64]) -> String {
    let raw: Vec<u8> = log_probs.iter().flat_map(|&x| (x as f32).to_le_bytes()).collect();
    base64::engine::general_purpose::STANDARD.encode(raw)
}

/// A scorer living in a child process that speaks the line protocol on
/// stdin/stdout. Calls are serialized over the one pipe pair.
pub struct ProcessScorer {
    vocab_size: usize,
    io: Mutex<(ChildStdin, BufReader<ChildStdout>)>,
    child: Mutex<Child>,
}

impl ProcessScorer {
    pub fn spawn(mut command: Command, vocab_size: usize) -> Result<Self> {
        let mut child = command.stdin(Stdio::piped()).stdout(Stdio::piped()).spawn()?;
        let stdin = child.stdin.take().expect("piped stdin");
        let stdout = BufReader::new(child.stdout.take().expect("piped stdout"));
        Ok(Self { vocab_size, io: Mutex::new((stdin, stdout)), child: Mutex::new(child) })
    }
}

impl Scorer for ProcessScorer {
    fn vocab_size(&self) -> usize {
        self.vocab_size
    }

    fn log_probs(&self, ctx: &ScorerContext, tokens: &[TokenId]) -> Result<Vec<f64>> {
        let mut io = self.io.lock().unwrap_or_else(|e| e.into_inner());
        let (stdin, stdout) = &mut *io;
        stdin.write_all(encode_score_request(tokens, ctx.doc_id()).as_bytes())?;
        stdin.flush()?;
        let mut line = String::new();
        if stdout.read_line(&mut line)? == 0 {
            return Err(QacError::Unavailable("external scorer closed its output".into()));
        }
        decode_score_response(&line, self.vocab_size)
    }
}

impl Drop for ProcessScorer {
    fn drop(&mut self) {
        if let Ok(mut child) = self.child.lock() {
            let _ = child.kill();
            let _ = child.wait();
        }
    }
}
