//! Character-level completion trie ranked by Most Popular Completion.

use std::cmp::Ordering;
use std::collections::{BinaryHeap, HashMap};

use serde::{Deserialize, Serialize};

use super::tree::Tree;
use crate::error::{QacError, Result};
use crate::suggestion::{assign_ranks, Source, Suggestion};
use crate::text::{char_len, normalize_prefix, normalize_query, words};

/// Minimum query length in characters.
pub const MIN_QUERY_CHARS: usize = 3;
/// Longest body n-gram indexed into a DocC trie.
pub const DOCC_MAX_N: usize = 5;

/// A normalized query string with its (possibly fractional) click count.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WeightedQuery {
    pub text: String,
    pub clicks: f64,
}

impl WeightedQuery {
    pub fn new(text: &str, clicks: f64) -> Result<Self> {
        let text = normalize_query(text);
        if char_len(&text) < MIN_QUERY_CHARS {
            return Err(QacError::invalid(format!("query {text:?} shorter than {MIN_QUERY_CHARS} characters")));
        }
        if !clicks.is_finite() || clicks < 0.0 {
            return Err(QacError::invalid(format!("clicks must be finite and non-negative, got {clicks}")));
        }
        Ok(Self { text, clicks })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CompletionTrie {
    pub(crate) tree: Tree,
    pub(crate) weight: Vec<f64>,
    pub(crate) max_weight: Vec<f64>,
}

impl Default for CompletionTrie {
    fn default() -> Self {
        Self { tree: Tree::new(), weight: vec![0.0], max_weight: vec![0.0] }
    }
}

impl CompletionTrie {
    /// Builds a trie over `queries`; duplicate texts have their clicks summed.
    pub fn build(queries: &[WeightedQuery]) -> Self {
        let mut t = Self::default();
        for q in queries {
            t.insert(&q.text, q.clicks);
        }
        t.recompute_max();
        t
    }

    /// DocC trie: lowercase word n-grams of `body` (n in 1..=5) weighted by raw
    /// occurrence count, excluding n-grams shorter than three characters.
    pub fn from_body(body: &str) -> Self {
        let tokens = words(body);
        let mut counts: HashMap<String, f64> = HashMap::new();
        for n in 1..=DOCC_MAX_N {
            for window in tokens.windows(n) {
                let gram = window.join(" ");
                if char_len(&gram) >= MIN_QUERY_CHARS {
                    *counts.entry(gram).or_default() += 1.0;
                }
            }
        }
        let mut grams: Vec<_> = counts.into_iter().collect();
        grams.sort_by(|a, b| a.0.cmp(&b.0));
        let mut t = Self::default();
        for (g, c) in grams {
            t.insert(&g, c);
        }
        t.recompute_max();
        t
    }

    fn insert(&mut self, text: &str, weight: f64) {
        let node = self.tree.insert(text.chars().map(u32::from));
        self.weight.resize(self.tree.len(), 0.0);
        self.tree.set_terminal(node);
        self.weight[node as usize] += weight;
    }

    pub(crate) fn recompute_max(&mut self) {
        let n = self.tree.len();
        self.weight.resize(n, 0.0);
        self.max_weight = vec![0.0; n];
        // Children always have larger ids than parents.
        for id in (0..n).rev() {
            let node = self.tree.node(id as u32);
            let own = if node.terminal { self.weight[id] } else { 0.0 };
            let best = node
                .edges
                .iter()
                .map(|&(_, c)| self.max_weight[c as usize])
                .fold(own, f64::max);
            self.max_weight[id] = best;
        }
    }

    pub fn is_empty(&self) -> bool {
        self.tree.is_empty()
    }

    pub fn node_count(&self) -> usize {
        self.tree.len()
    }

    pub fn terminal_count(&self) -> usize {
        (0..self.tree.len()).filter(|&i| self.tree.node(i as u32).terminal).count()
    }

    pub fn max_subtree_weight(&self) -> f64 {
        self.max_weight[0]
    }

    /// Weight of an exact stored string, if present.
    pub fn weight_of(&self, text: &str) -> Option<f64> {
        let node = self.tree.walk(0, normalize_query(text).chars().map(u32::from))?;
        self.tree.node(node).terminal.then(|| self.weight[node as usize])
    }

    pub fn contains(&self, text: &str) -> bool {
        self.weight_of(text).is_some()
    }

    /// All stored strings with their weights, in lexicographic order.
    pub fn entries(&self) -> Vec<(String, f64)> {
        let mut out = Vec::new();
        let mut stack = vec![(0u32, String::new())];
        while let Some((n, s)) = stack.pop() {
            let node = self.tree.node(n);
            if node.terminal {
                out.push((s.clone(), self.weight[n as usize]));
            }
            for &(label, child) in node.edges.iter().rev() {
                let mut t = s.clone();
                t.push(char::from_u32(label).unwrap_or(char::REPLACEMENT_CHARACTER));
                stack.push((child, t));
            }
        }
        out
    }

    /// Top-`k` stored strings extending `prefix`, by weight descending with
    /// lexicographically ascending ties. An absent prefix path yields nothing.
    pub fn mpc(&self, prefix: &str, k: usize) -> Vec<Suggestion> {
        let prefix = normalize_prefix(prefix);
        if k == 0 || prefix.is_empty() {
            return Vec::new();
        }
        let Some(start) = self.tree.walk(0, prefix.chars().map(u32::from)) else {
            return Vec::new();
        };

        // Best-first over subtree bounds. Every string below a node has weight
        // <= its bound and sorts >= its path, so popping by (bound desc, text
        // asc) yields terminals in final order.
        let mut heap = BinaryHeap::new();
        heap.push(Frontier { bound: self.max_weight[start as usize], text: prefix, node: start, expanded: false });
        let mut out = Vec::with_capacity(k);
        while let Some(f) = heap.pop() {
            if f.expanded {
                out.push(Suggestion {
                    text: f.text,
                    score: f.bound,
                    rank: 0,
                    source: Source::Mpc,
                    trie_conforming: true,
                });
                if out.len() == k {
                    break;
                }
                continue;
            }
            let node = self.tree.node(f.node);
            if node.terminal {
                heap.push(Frontier {
                    bound: self.weight[f.node as usize],
                    text: f.text.clone(),
                    node: f.node,
                    expanded: true,
                });
            }
            for &(label, child) in &node.edges {
                let mut text = f.text.clone();
                text.push(char::from_u32(label).unwrap_or(char::REPLACEMENT_CHARACTER));
                heap.push(Frontier { bound: self.max_weight[child as usize], text, node: child, expanded: false });
            }
        }
        assign_ranks(&mut out);
        out
    }
}

/// Heap entry: either an unexpanded subtree or a resolved terminal.
struct Frontier {
    bound: f64,
    text: String,
    node: u32,
    expanded: bool,
}

impl Ord for Frontier {
    fn cmp(&self, other: &Self) -> Ordering {
        self.bound
            .total_cmp(&other.bound)
            .then_with(|| other.text.cmp(&self.text))
            // Resolved terminals pop before the subtree sharing their text.
            .then_with(|| self.expanded.cmp(&other.expanded))
    }
}

impl PartialOrd for Frontier {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl PartialEq for Frontier {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}

impl Eq for Frontier {}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn wq(t: &str, c: f64) -> WeightedQuery {
        WeightedQuery::new(t, c).unwrap()
    }

    fn brute_force(entries: &[(String, f64)], prefix: &str, k: usize) -> Vec<(String, f64)> {
        let mut hits: Vec<_> = entries.iter().filter(|(t, _)| t.starts_with(prefix)).cloned().collect();
        hits.sort_by(|a, b| b.1.total_cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
        hits.truncate(k);
        hits
    }

    fn sample() -> CompletionTrie {
        CompletionTrie::build(&[wq("paris tourism", 5.0), wq("paris history", 3.0), wq("python", 7.0)])
    }

    #[test]
    fn builds_three_terminals() {
        let t = sample();
        assert_eq!(t.terminal_count(), 3);
        let oracle = t.entries().iter().map(|e| e.1).fold(f64::MIN, f64::max);
        assert_eq!(t.max_subtree_weight(), oracle);
        assert_eq!(oracle, 7.0);
    }

    #[test]
    fn empty_and_duplicates() {
        let t = CompletionTrie::build(&[]);
        assert!(t.is_empty());
        assert!(t.mpc("a", 5).is_empty());
        let t = CompletionTrie::build(&[wq("abc", 1.0), wq("abc", 2.0)]);
        assert_eq!(t.terminal_count(), 1);
        assert_eq!(t.weight_of("abc"), Some(3.0));
    }

    #[test]
    fn mpc_examples() {
        let t = sample();
        let got: Vec<_> = t.mpc("par", 2).into_iter().map(|s| (s.text, s.score, s.rank)).collect();
        assert_eq!(
            got,
            vec![("paris tourism".to_string(), 5.0, 1), ("paris history".to_string(), 3.0, 2)]
        );
        assert_eq!(brute_force(&t.entries(), "par", 2).len(), 2);
        assert!(t.mpc("z", 3).is_empty());
        assert_eq!(t.mpc("PAR", 10).len(), 2);

        let ties = CompletionTrie::build(&[wq("ab x", 2.0), wq("ab a", 2.0)]);
        let texts: Vec<_> = ties.mpc("ab", 2).into_iter().map(|s| s.text).collect();
        assert_eq!(texts, vec!["ab a", "ab x"]);
    }

    #[test]
    fn exact_prefix_is_eligible() {
        let t = CompletionTrie::build(&[wq("abc", 4.0), wq("abcd", 1.0)]);
        let texts: Vec<_> = t.mpc("abc", 5).into_iter().map(|s| s.text).collect();
        assert_eq!(texts, vec!["abc", "abcd"]);
    }

    #[test]
    fn docc_counts() {
        let t = CompletionTrie::from_body("alpha beta alpha");
        let mut got = t.entries();
        got.sort_by(|a, b| a.0.cmp(&b.0));
        assert_eq!(
            got,
            vec![
                ("alpha".to_string(), 2.0),
                ("alpha beta".to_string(), 1.0),
                ("alpha beta alpha".to_string(), 1.0),
                ("beta".to_string(), 1.0),
                ("beta alpha".to_string(), 1.0),
            ]
        );
        assert!(CompletionTrie::from_body("").is_empty());
        let aaa = CompletionTrie::from_body("a a a");
        assert_eq!(aaa.entries(), vec![("a a".to_string(), 2.0), ("a a a".to_string(), 1.0)]);
    }

    #[test]
    fn rejects_short_queries() {
        assert!(WeightedQuery::new("ab", 1.0).is_err());
        assert!(WeightedQuery::new(" A  b ", 1.0).is_ok());
        assert!(WeightedQuery::new("abc", -1.0).is_err());
    }

    proptest! {
        #[test]
        fn mpc_matches_brute_force(
            qs in proptest::collection::vec(("[a-c]{1,3}( [a-c]{1,3}){0,2}", 0u32..6), 1..60),
            prefix in "[a-c ]{1,3}",
            k in 1usize..12,
        ) {
            let queries: Vec<_> = qs.iter().filter_map(|(t, c)| WeightedQuery::new(t, *c as f64).ok()).collect();
            let t = CompletionTrie::build(&queries);
            let mut merged: HashMap<String, f64> = HashMap::new();
            for q in &queries {
                *merged.entry(q.text.clone()).or_default() += q.clicks;
            }
            let entries: Vec<_> = merged.into_iter().collect();
            let p = normalize_prefix(&prefix);
            let expected = brute_force(&entries, &p, k);
            let got: Vec<_> = t.mpc(&prefix, k).into_iter().map(|s| (s.text, s.score)).collect();
            if p.is_empty() {
                prop_assert!(got.is_empty());
            } else {
                prop_assert_eq!(got, expected);
            }
        }

        #[test]
        fn max_weight_is_monotone(qs in proptest::collection::vec(("[a-d]{3,6}", 0u32..50), 1..40)) {
            let queries: Vec<_> = qs.iter().map(|(t, c)| wq(t, *c as f64)).collect();
            let t = CompletionTrie::build(&queries);
            for id in 0..t.node_count() {
                for &(_, c) in &t.tree.node(id as u32).edges {
                    prop_assert!(t.max_weight[id] >= t.max_weight[c as usize]);
                }
            }
        }
    }
}
