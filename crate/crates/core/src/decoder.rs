//! Soft trie-guided beam search.
//!
//! Every live beam still on a guidance-trie path has its logits for tokens
//! outside the trie's valid next set lowered by an annealed bias
//! `b0 · e^(−α·length) · e^(−β·rank)` before the softmax. Beams that leave the
//! trie are never penalized again: subtracting the same constant from every
//! logit leaves the softmax unchanged, so the penalty would be a no-op.
//!
//! Tokens whose probability underflows to exactly zero after the softmax are
//! never expanded. With a very large bias this turns the soft constraint into
//! a hard one.

use std::cmp::Ordering;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{QacError, Result};
use crate::scorer::{Scorer, ScorerContext};
use crate::suggestion::{assign_ranks, Source, Suggestion};
use crate::text::{char_len, normalize_prefix, normalize_query};
use crate::tokenizer::{TokenId, TokenizerModel, EOS, SEP_SPLIT, UNK};
use crate::trie::{GuidanceTrie, TrieNode};

/// What `length` in the annealed bias measures.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BiasLengthSource {
    /// Total token count of the beam, prefix tokens included.
    #[default]
    Beam,
    /// Character length of the typed prefix; constant over a decode.
    Prefix,
}

impl FromStr for BiasLengthSource {
    type Err = QacError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "beam" => Ok(Self::Beam),
            "prefix" => Ok(Self::Prefix),
            other => Err(QacError::invalid(format!("bias length source must be beam or prefix, got {other:?}"))),
        }
    }
}

impl fmt::Display for BiasLengthSource {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::Beam => "beam",
            Self::Prefix => "prefix",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecodeConfig {
    pub beam_size: usize,
    pub max_steps: usize,
    pub initial_bias: f64,
    pub alpha: f64,
    pub beta: f64,
    /// Finished beams score `logprob / generated_len^length_penalty`.
    pub length_penalty: f64,
    pub top_k_out: usize,
    pub bias_length_source: BiasLengthSource,
}

impl Default for DecodeConfig {
    fn default() -> Self {
        Self {
            beam_size: 25,
            max_steps: 48,
            initial_bias: 40.0,
            alpha: 0.1,
            beta: 0.05,
            length_penalty: 1.0,
            top_k_out: 10,
            bias_length_source: BiasLengthSource::Beam,
        }
    }
}

impl DecodeConfig {
    pub fn validate(&self) -> Result<()> {
        if self.beam_size == 0 || self.max_steps == 0 || self.top_k_out == 0 {
            return Err(QacError::invalid("beam_size, max_steps and top_k_out must be positive"));
        }
        for (name, v) in [("bias", self.initial_bias), ("alpha", self.alpha), ("beta", self.beta)] {
            if !v.is_finite() || v < 0.0 {
                return Err(QacError::invalid(format!("{name} must be finite and non-negative, got {v}")));
            }
        }
        if !self.length_penalty.is_finite() {
            return Err(QacError::invalid("length_penalty must be finite"));
        }
        Ok(())
    }
}

/// `b0 · e^(−α·length) · e^(−β·rank)`.
pub fn annealed_bias(b0: f64, alpha: f64, beta: f64, length: usize, rank: usize) -> f64 {
    b0 * (-alpha * length as f64).exp() * (-beta * rank as f64).exp()
}

/// The bias applied to a beam of `beam_len` tokens at position `rank`.
fn step_bias(cfg: &DecodeConfig, beam_len: usize, prefix_chars: usize, rank: usize) -> f64 {
    let length = match cfg.bias_length_source {
        BiasLengthSource::Beam => beam_len,
        BiasLengthSource::Prefix => prefix_chars,
    };
    annealed_bias(cfg.initial_bias, cfg.alpha, cfg.beta, length, rank)
}

/// A partial decode.
#[derive(Debug, Clone, PartialEq)]
pub struct Beam {
    /// Starts as `encode(prefix) ⊕ [SEP_SPLIT]`.
    pub tokens: Vec<TokenId>,
    pub logprob: f64,
    /// Current guidance-trie node while the beam is still on a stored path.
    pub trie_node: Option<TrieNode>,
    pub finished: bool,
}

impl Beam {
    pub fn trie_path_alive(&self) -> bool {
        self.trie_node.is_some()
    }
}

/// Log-probability descending, then token sequence ascending.
fn beam_order(a: &Beam, b: &Beam) -> Ordering {
    b.logprob.total_cmp(&a.logprob).then_with(|| a.tokens.cmp(&b.tokens))
}

pub fn log_softmax(z: &mut [f64]) {
    let max = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !max.is_finite() {
        return;
    }
    let lse = max + z.iter().map(|&x| (x - max).exp()).sum::<f64>().ln();
    z.iter_mut().for_each(|x| *x -= lse);
}

/// Subtracts `delta` from every entry whose index is not in `valid` (ascending).
fn penalize_outside(z: &mut [f64], valid: impl Iterator<Item = TokenId>, delta: f64) {
    let mut valid = valid.peekable();
    for (v, x) in z.iter_mut().enumerate() {
        while valid.peek().is_some_and(|&t| (t as usize) < v) {
            valid.next();
        }
        if valid.peek() != Some(&(v as TokenId)) {
            *x -= delta;
        }
    }
}

/// The `k` highest-probability expandable tokens, ties by token id.
fn top_tokens(lp: &[f64], k: usize) -> Vec<TokenId> {
    let mut idx: Vec<TokenId> = (0..lp.len() as TokenId)
        .filter(|&v| v != UNK && v != SEP_SPLIT && lp[v as usize].exp() > 0.0)
        .collect();
    let cmp = |a: &TokenId, b: &TokenId| lp[*b as usize].total_cmp(&lp[*a as usize]).then(a.cmp(b));
    if idx.len() > k {
        idx.select_nth_unstable_by(k - 1, cmp);
        idx.truncate(k);
    }
    idx.sort_unstable_by(cmp);
    idx
}

/// Beam search over `scorer`, softly steered by `gt` when given.
///
/// Without a trie, or when the prefix path is not stored in it, this is plain
/// beam search. Suggestions are `prefix ⊕ decoded suffix`, scored by
/// length-normalized log-probability, deduplicated on normalized text.
pub fn guided_beam_search(
    scorer: &dyn Scorer,
    ctx: &ScorerContext,
    tok: &TokenizerModel,
    gt: Option<&GuidanceTrie>,
    prefix: &str,
    cfg: &DecodeConfig,
) -> Result<Vec<Suggestion>> {
    cfg.validate()?;
    let prefix = normalize_prefix(prefix);
    if prefix.trim().is_empty() {
        return Err(QacError::invalid("prefix is empty after normalization"));
    }
    let mut start = tok.encode(&prefix);
    start.push(SEP_SPLIT);
    let prefix_tokens = start.len();
    let vocab = scorer.vocab_size();
    if vocab != tok.vocab_size() {
        return Err(QacError::invalid(format!(
            "scorer vocabulary {vocab} differs from tokenizer vocabulary {}",
            tok.vocab_size()
        )));
    }

    let trie_node = gt.and_then(|g| g.walk(&start));
    let mut live = vec![Beam { tokens: start, logprob: 0.0, trie_node, finished: false }];
    let mut finished: Vec<Beam> = Vec::new();

    for _ in 0..cfg.max_steps {
        if live.is_empty() || finished.len() >= cfg.beam_size {
            break;
        }
        let mut candidates = Vec::with_capacity(live.len() * cfg.beam_size);
        for (rank, beam) in live.iter().enumerate() {
            let mut z = scorer.log_probs(ctx, &beam.tokens)?;
            if z.len() != vocab {
                return Err(QacError::invalid("scorer returned a vector of the wrong length"));
            }
            if let (Some(g), Some(node)) = (gt, beam.trie_node) {
                let delta = step_bias(cfg, beam.tokens.len(), char_len(&prefix), rank);
                if delta > 0.0 {
                    penalize_outside(&mut z, g.labels(node), delta);
                }
            }
            log_softmax(&mut z);
            for v in top_tokens(&z, cfg.beam_size) {
                let mut tokens = Vec::with_capacity(beam.tokens.len() + 1);
                tokens.extend_from_slice(&beam.tokens);
                tokens.push(v);
                candidates.push(Beam {
                    tokens,
                    logprob: beam.logprob + z[v as usize],
                    trie_node: gt.zip(beam.trie_node).and_then(|(g, n)| g.child(n, v)),
                    finished: v == EOS,
                });
            }
        }
        candidates.sort_by(beam_order);
        candidates.truncate(cfg.beam_size);
        live.clear();
        for c in candidates {
            if c.finished {
                finished.push(c);
            } else {
                live.push(c);
            }
        }
    }

    let source = if gt.is_some() { Source::Guided } else { Source::Lm };
    let mut out = Vec::with_capacity(finished.len());
    for beam in &finished {
        let suffix = tok.decode(&beam.tokens[prefix_tokens..])?;
        let text = normalize_query(&format!("{prefix}{suffix}"));
        if !text.starts_with(&prefix) {
            continue;
        }
        let generated = (beam.tokens.len() - prefix_tokens) as f64;
        out.push(Suggestion {
            text,
            score: beam.logprob / generated.powf(cfg.length_penalty),
            rank: 0,
            source,
            trie_conforming: gt.is_some() && beam.trie_node.is_some_and(|n| gt.is_some_and(|g| g.is_terminal(n))),
        });
    }
    Ok(finalize(out, cfg.top_k_out))
}

/// Sorts by score (text ascending on ties), keeps the best of each text, ranks.
pub(crate) fn finalize(mut list: Vec<Suggestion>, k: usize) -> Vec<Suggestion> {
    list.sort_by(|a, b| b.score.total_cmp(&a.score).then_with(|| a.text.cmp(&b.text)));
    let mut seen = std::collections::HashSet::new();
    list.retain(|s| seen.insert(s.text.clone()));
    list.truncate(k);
    assign_ranks(&mut list);
    list
}
