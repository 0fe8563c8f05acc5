//! Byte-pair-encoding tokenizer over characters.
//!
//! Text is pre-split into words where a whitespace character that follows a
//! non-whitespace character starts a new word (`"machine learning"` becomes
//! `["machine", " learning"]`). Merges never cross word boundaries.
//!
//! Ids `0..3` are reserved for [`UNK`], [`EOS`] and [`SEP_SPLIT`]; the base
//! alphabet follows in character order, then merged tokens in merge order.

use std::collections::{BTreeSet, HashMap};
use std::fs;
use std::path::Path;

use crate::error::{QacError, Result};

pub type TokenId = u32;

pub const UNK: TokenId = 0;
pub const EOS: TokenId = 1;
pub const SEP_SPLIT: TokenId = 2;
pub const NUM_SPECIAL: usize = 3;
pub const DEFAULT_VOCAB_SIZE: usize = 1024;

const SPECIAL_NAMES: [&str; NUM_SPECIAL] = ["<unk>", "</s>", "[SEP_SPLIT]"];
const MAGIC: &str = "QTOK1";
const MERGES_MARKER: &str = "#MERGES";
const REPLACEMENT: char = '\u{FFFD}';

#[derive(Debug, Clone, PartialEq)]
pub struct TokenizerModel {
    /// id -> surface string. Special ids hold their display names.
    tokens: Vec<String>,
    token_to_id: HashMap<String, TokenId>,
    alphabet_len: usize,
    merges: Vec<(TokenId, TokenId)>,
    merge_rank: HashMap<(TokenId, TokenId), (usize, TokenId)>,
}

impl TokenizerModel {
    pub fn vocab_size(&self) -> usize {
        self.tokens.len()
    }

    pub fn alphabet(&self) -> impl Iterator<Item = char> + '_ {
        self.tokens[NUM_SPECIAL..NUM_SPECIAL + self.alphabet_len]
            .iter()
            .filter_map(|t| t.chars().next())
    }

    pub fn merges(&self) -> &[(TokenId, TokenId)] {
        &self.merges
    }

    pub fn id_of(&self, token: &str) -> Option<TokenId> {
        self.token_to_id.get(token).copied()
    }

    pub fn token_str(&self, id: TokenId) -> Option<&str> {
        self.tokens.get(id as usize).map(String::as_str)
    }

    pub fn is_special(id: TokenId) -> bool {
        (id as usize) < NUM_SPECIAL
    }

    /// Encodes `text`; characters outside the base alphabet become [`UNK`].
    pub fn encode(&self, text: &str) -> Vec<TokenId> {
        let mut out = Vec::new();
        for word in pre_tokenize(text) {
            let mut ids: Vec<TokenId> = word
                .chars()
                .map(|c| {
                    let mut buf = [0u8; 4];
                    self.id_of(c.encode_utf8(&mut buf)).unwrap_or(UNK)
                })
                .collect();
            self.apply_merges(&mut ids);
            out.extend(ids);
        }
        out
    }

    /// Applies merges in list order. Jumping to the lowest-ranked pair above
    /// the last applied rank is equivalent to a full ordered scan because a
    /// skipped merge can only become applicable through a later merge.
    fn apply_merges(&self, ids: &mut Vec<TokenId>) {
        let mut last_rank: Option<usize> = None;
        loop {
            let next = ids
                .windows(2)
                .filter_map(|w| self.merge_rank.get(&(w[0], w[1])))
                .filter(|(rank, _)| last_rank.is_none_or(|l| *rank > l))
                .min_by_key(|(rank, _)| *rank)
                .copied();
            let Some((rank, merged)) = next else { break };
            let (left, right) = self.merges[rank];
            merge_in_place(ids, left, right, merged);
            last_rank = Some(rank);
        }
    }

    /// Inverse of [`encode`](Self::encode). Separator and end tokens render as
    /// nothing; [`UNK`] renders as U+FFFD.
    pub fn decode(&self, ids: &[TokenId]) -> Result<String> {
        let mut out = String::new();
        for &id in ids {
            match id {
                UNK => out.push(REPLACEMENT),
                EOS | SEP_SPLIT => {}
                _ => out.push_str(
                    self.token_str(id)
                        .ok_or_else(|| QacError::invalid(format!("unknown token id {id}")))?,
                ),
            }
        }
        Ok(out)
    }

    /// `encode(prefix) ⊕ [SEP_SPLIT] ⊕ encode(suffix)`: prefix and suffix are
    /// tokenized independently so a mid-word split still maps onto stored paths.
    pub fn encode_split(&self, prefix: &str, suffix: &str) -> Result<Vec<TokenId>> {
        if prefix.is_empty() {
            return Err(QacError::invalid("split prefix must be non-empty"));
        }
        let mut ids = self.encode(prefix);
        ids.push(SEP_SPLIT);
        ids.extend(self.encode(suffix));
        Ok(ids)
    }

    pub fn to_text(&self) -> String {
        let mut s = format!("{MAGIC}\n{}\n", self.tokens.len());
        for t in &self.tokens {
            s.push_str(&escape(t));
            s.push('\n');
        }
        s.push_str(MERGES_MARKER);
        s.push('\n');
        for &(l, r) in &self.merges {
            s.push_str(&escape(&self.tokens[l as usize]));
            s.push('\t');
            s.push_str(&escape(&self.tokens[r as usize]));
            s.push('\n');
        }
        s
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let mut lines = text.lines();
        if lines.next() != Some(MAGIC) {
            return Err(QacError::corrupt("tokenizer file: bad magic"));
        }
        let vocab_size: usize = lines
            .next()
            .and_then(|l| l.trim().parse().ok())
            .ok_or_else(|| QacError::corrupt("tokenizer file: bad vocab size"))?;
        if vocab_size < NUM_SPECIAL {
            return Err(QacError::corrupt("tokenizer file: vocab smaller than specials"));
        }
        let mut tokens = Vec::with_capacity(vocab_size);
        for _ in 0..vocab_size {
            let line = lines
                .next()
                .ok_or_else(|| QacError::corrupt("tokenizer file: truncated vocabulary"))?;
            tokens.push(unescape(line)?);
        }
        if lines.next() != Some(MERGES_MARKER) {
            return Err(QacError::corrupt("tokenizer file: missing #MERGES"));
        }
        let mut token_to_id = HashMap::new();
        for (id, t) in tokens.iter().enumerate().skip(NUM_SPECIAL) {
            if token_to_id.insert(t.clone(), id as TokenId).is_some() {
                return Err(QacError::corrupt(format!("tokenizer file: duplicate token {t:?}")));
            }
        }
        let alphabet_len = tokens[NUM_SPECIAL..]
            .iter()
            .take_while(|t| t.chars().count() == 1)
            .count();
        let mut merges = Vec::new();
        for line in lines {
            let (l, r) = line
                .split_once('\t')
                .ok_or_else(|| QacError::corrupt("tokenizer file: malformed merge line"))?;
            let (l, r) = (unescape(l)?, unescape(r)?);
            let lid = token_to_id.get(&l).copied();
            let rid = token_to_id.get(&r).copied();
            let merged = token_to_id.get(&format!("{l}{r}")).copied();
            match (lid, rid, merged) {
                (Some(a), Some(b), Some(_)) => merges.push((a, b)),
                _ => return Err(QacError::corrupt(format!("tokenizer file: merge {l:?}+{r:?} not in vocabulary"))),
            }
        }
        Ok(Self::assemble(tokens, token_to_id, alphabet_len, merges))
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        fs::write(path, self.to_text())?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let bytes = fs::read(path)?;
        let text = String::from_utf8(bytes).map_err(|_| QacError::corrupt("tokenizer file: not UTF-8"))?;
        Self::from_text(&text)
    }

    fn assemble(
        tokens: Vec<String>,
        token_to_id: HashMap<String, TokenId>,
        alphabet_len: usize,
        merges: Vec<(TokenId, TokenId)>,
    ) -> Self {
        let merge_rank = merges
            .iter()
            .enumerate()
            .map(|(rank, &(l, r))| {
                let merged = format!("{}{}", tokens[l as usize], tokens[r as usize]);
                ((l, r), (rank, token_to_id[&merged]))
            })
            .collect();
        Self { tokens, token_to_id, alphabet_len, merges, merge_rank }
    }
}

/// Greedy most-frequent-pair BPE training.
///
/// `vocab_size` counts every id including the three specials. Merging stops at
/// `vocab_size` or when no adjacent pair occurs at least twice. Ties go to the
/// lexicographically smallest merged string, then the smallest left token.
pub fn train_bpe<S: AsRef<str>>(corpus: &[S], vocab_size: usize) -> Result<TokenizerModel> {
    if corpus.is_empty() {
        return Err(QacError::invalid("tokenizer corpus is empty"));
    }
    let mut word_freq: HashMap<&str, u64> = HashMap::new();
    let mut alphabet = BTreeSet::new();
    for s in corpus {
        for w in pre_tokenize(s.as_ref()) {
            alphabet.extend(w.chars());
            *word_freq.entry(w).or_default() += 1;
        }
    }
    if alphabet.is_empty() {
        return Err(QacError::invalid("tokenizer corpus contains no characters"));
    }
    if vocab_size < alphabet.len() + NUM_SPECIAL {
        return Err(QacError::invalid(format!(
            "vocab_size {vocab_size} cannot hold {} characters plus {NUM_SPECIAL} specials",
            alphabet.len()
        )));
    }

    let mut tokens: Vec<String> = SPECIAL_NAMES.iter().map(|s| s.to_string()).collect();
    tokens.extend(alphabet.iter().map(|c| c.to_string()));
    let mut token_to_id: HashMap<String, TokenId> = tokens
        .iter()
        .enumerate()
        .skip(NUM_SPECIAL)
        .map(|(i, t)| (t.clone(), i as TokenId))
        .collect();

    // Sorted for a reproducible iteration order.
    let mut words: Vec<(Vec<TokenId>, u64)> = word_freq
        .into_iter()
        .map(|(w, f)| (w.chars().map(|c| token_to_id[&c.to_string()]).collect(), f))
        .collect();
    words.sort();

    let mut merges = Vec::new();
    while tokens.len() < vocab_size {
        let mut counts: HashMap<(TokenId, TokenId), u64> = HashMap::new();
        for (ids, f) in &words {
            for w in ids.windows(2) {
                *counts.entry((w[0], w[1])).or_default() += f;
            }
        }
        let best = counts
            .into_iter()
            .filter(|&(_, c)| c >= 2)
            .map(|((l, r), c)| {
                let merged = format!("{}{}", tokens[l as usize], tokens[r as usize]);
                (c, merged, l, r)
            })
            .min_by(|a, b| {
                b.0.cmp(&a.0)
                    .then_with(|| a.1.cmp(&b.1))
                    .then_with(|| tokens[a.2 as usize].cmp(&tokens[b.2 as usize]))
            });
        let Some((_, merged, left, right)) = best else { break };
        let merged_id = match token_to_id.get(&merged) {
            Some(&id) => id,
            None => {
                let id = tokens.len() as TokenId;
                token_to_id.insert(merged.clone(), id);
                tokens.push(merged);
                id
            }
        };
        for (ids, _) in &mut words {
            merge_in_place(ids, left, right, merged_id);
        }
        merges.push((left, right));
    }

    Ok(TokenizerModel::assemble(tokens, token_to_id, alphabet.len(), merges))
}

fn merge_in_place(ids: &mut Vec<TokenId>, left: TokenId, right: TokenId, merged: TokenId) {
    let mut out = Vec::with_capacity(ids.len());
    let mut i = 0;
    while i < ids.len() {
        if i + 1 < ids.len() && ids[i] == left && ids[i + 1] == right {
            out.push(merged);
            i += 2;
        } else {
            out.push(ids[i]);
            i += 1;
        }
    }
    *ids = out;
}

/// Word pieces whose concatenation is exactly `text`.
fn pre_tokenize(text: &str) -> Vec<&str> {
    let mut out = Vec::new();
    let mut start = 0;
    let mut prev_space = true;
    for (i, c) in text.char_indices() {
        let space = c.is_whitespace();
        if space && !prev_space && i > start {
            out.push(&text[start..i]);
            start = i;
        }
        prev_space = space;
    }
    if start < text.len() {
        out.push(&text[start..]);
    }
    out
}

fn escape(s: &str) -> String {
    let mut out = String::with_capacity(s.len());
    for c in s.chars() {
        match c {
            '\\' => out.push_str("\\\\"),
            '\n' => out.push_str("\\n"),
            '\t' => out.push_str("\\t"),
            '\r' => out.push_str("\\r"),
            _ => out.push(c),
        }
    }
    out
}

fn unescape(s: &str) -> Result<String> {
    let mut out = String::with_capacity(s.len());
    let mut chars = s.chars();
    while let Some(c) = chars.next() {
        if c != '\\' {
            out.push(c);
            continue;
        }
        match chars.next() {
            Some('\\') => out.push('\\'),
            Some('n') => out.push('\n'),
            Some('t') => out.push('\t'),
            Some('r') => out.push('\r'),
            _ => return Err(QacError::corrupt("tokenizer file: bad escape")),
        }
    }
    Ok(out)
}
