//! Token-level guidance trie over every character split of every query.

use super::completion::WeightedQuery;
use super::tree::Tree;
use crate::tokenizer::{TokenId, TokenizerModel, EOS, SEP_SPLIT};
use crate::text::{char_len, split_at_char};

/// A position in a [`GuidanceTrie`].
pub type TrieNode = u32;

/// Stores `encode_split(q[..i], q[i..]) ⊕ [EOS]` for each query `q` and each
/// split point `i` in `1..=|q|`. Every stored sequence holds exactly one
/// separator, so a typed prefix followed by the separator matches one path.
#[derive(Debug, Clone, PartialEq)]
pub struct GuidanceTrie {
    pub(crate) tree: Tree,
}

impl Default for GuidanceTrie {
    fn default() -> Self {
        Self { tree: Tree::new() }
    }
}

impl GuidanceTrie {
    pub fn build(queries: &[WeightedQuery], tok: &TokenizerModel) -> Self {
        let mut t = Self::default();
        for q in queries {
            t.insert_query(&q.text, tok);
        }
        t
    }

    pub fn insert_query(&mut self, query: &str, tok: &TokenizerModel) {
        for i in 1..=char_len(query) {
            let (prefix, suffix) = split_at_char(query, i);
            let mut seq = tok.encode(prefix);
            seq.push(SEP_SPLIT);
            seq.extend(tok.encode(suffix));
            seq.push(EOS);
            self.insert_sequence(&seq);
        }
    }

    /// Stores one raw token sequence as a complete path.
    pub fn insert_sequence(&mut self, seq: &[TokenId]) {
        let node = self.tree.insert(seq.iter().copied());
        self.tree.set_terminal(node);
    }

    pub fn root(&self) -> TrieNode {
        0
    }

    pub fn walk(&self, path: &[TokenId]) -> Option<TrieNode> {
        self.tree.walk(0, path.iter().copied())
    }

    pub fn child(&self, node: TrieNode, token: TokenId) -> Option<TrieNode> {
        self.tree.child(node, token)
    }

    /// Child labels of `node`, ascending.
    pub fn labels(&self, node: TrieNode) -> impl Iterator<Item = TokenId> + '_ {
        self.tree.node(node).edges.iter().map(|&(l, _)| l)
    }

    pub fn is_terminal(&self, node: TrieNode) -> bool {
        self.tree.node(node).terminal
    }

    /// Tokens that may follow `path`; empty when the path is not stored.
    pub fn valid_next_tokens(&self, path: &[TokenId]) -> Vec<TokenId> {
        self.walk(path).map(|n| self.labels(n).collect()).unwrap_or_default()
    }

    /// True when `seq` is a complete stored sequence.
    pub fn contains(&self, seq: &[TokenId]) -> bool {
        self.walk(seq).is_some_and(|n| self.is_terminal(n))
    }

    pub fn sequence_count(&self) -> usize {
        (0..self.tree.len()).filter(|&i| self.tree.node(i as u32).terminal).count()
    }

    pub fn node_count(&self) -> usize {
        self.tree.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tree.is_empty()
    }
}
