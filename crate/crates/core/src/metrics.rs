//! Evaluation metrics over ranked suggestion lists.
//!
//! Matching is on full normalized query text. Every metric returns a value
//! in `[0, 1]`.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::fmt;
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::context::{cosine, VectorTable};
use crate::error::{QacError, Result};
use crate::text::{char_len, is_stopword, normalize_query, split_at_char, words};

pub const DEPTH: usize = 10;
pub const ALPHA: f64 = 0.5;
pub const SBMRR_THRESHOLD: f64 = 0.9;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Quadrant {
    SS,
    SU,
    US,
    UU,
}

impl Quadrant {
    pub const ALL: [Quadrant; 4] = [Self::SS, Self::SU, Self::US, Self::UU];

    pub fn as_str(self) -> &'static str {
        match self {
            Self::SS => "SS",
            Self::SU => "SU",
            Self::US => "US",
            Self::UU => "UU",
        }
    }

    /// Quadrant of a pair given whether its query and document were seen.
    pub fn classify(query_seen: bool, doc_seen: bool) -> Self {
        match (query_seen, doc_seen) {
            (true, true) => Self::SS,
            (true, false) => Self::SU,
            (false, true) => Self::US,
            (false, false) => Self::UU,
        }
    }

    pub fn query_seen(self) -> bool {
        matches!(self, Self::SS | Self::SU)
    }

    pub fn doc_seen(self) -> bool {
        matches!(self, Self::SS | Self::US)
    }
}

impl fmt::Display for Quadrant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Quadrant {
    type Err = QacError;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_uppercase().as_str() {
            "SS" => Ok(Self::SS),
            "SU" => Ok(Self::SU),
            "US" => Ok(Self::US),
            "UU" => Ok(Self::UU),
            _ => Err(QacError::invalid(format!("unknown quadrant {s:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EvalExample {
    pub target: String,
    pub doc_id: String,
    pub prefix: String,
    pub quadrant: Quadrant,
}

impl EvalExample {
    pub fn new(target: &str, doc_id: &str, prefix: &str, quadrant: Quadrant) -> Result<Self> {
        let target = normalize_query(target);
        let n = char_len(prefix);
        if n == 0 || n >= char_len(&target) || split_at_char(&target, n).0 != prefix {
            return Err(QacError::invalid(format!("{prefix:?} is not a proper prefix of {target:?}")));
        }
        Ok(Self { target, doc_id: doc_id.to_string(), prefix: prefix.to_string(), quadrant })
    }
}

fn top<S: AsRef<str>>(suggestions: &[S], depth: usize) -> impl Iterator<Item = (usize, String)> + '_ {
    suggestions.iter().take(depth).enumerate().map(|(i, s)| (i + 1, normalize_query(s.as_ref())))
}

fn discount(rank: usize) -> f64 {
    1.0 / ((rank + 1) as f64).log2()
}

/// Reciprocal rank of the first exact match in the top 10.
pub fn mrr<S: AsRef<str>>(suggestions: &[S], target: &str) -> f64 {
    let target = normalize_query(target);
    top(suggestions, DEPTH).find(|(_, s)| *s == target).map_or(0.0, |(r, _)| 1.0 / r as f64)
}

/// Typing effort saved: `1 − c/|target|` for the first typed length `c` whose
/// top-`top_n` list contains the target.
pub fn tes<F>(mut system: F, target: &str, top_n: usize) -> f64
where
    F: FnMut(&str) -> Vec<String>,
{
    let target = normalize_query(target);
    let len = char_len(&target);
    for c in 1..len {
        let list = system(split_at_char(&target, c).0);
        if top(&list, top_n).any(|(_, s)| s == target) {
            return 1.0 - c as f64 / len as f64;
        }
    }
    0.0
}

/// Distinct non-stopword terms of the target.
pub fn nuggets(target: &str) -> Vec<String> {
    let mut seen = HashSet::new();
    words(target).into_iter().filter(|w| !is_stopword(w) && seen.insert(w.clone())).collect()
}

fn coverage<S: AsRef<str>>(suggestions: &[S], nuggets: &[String], depth: usize) -> Vec<Vec<bool>> {
    top(suggestions, depth)
        .map(|(_, s)| {
            let ws: HashSet<String> = words(&s).into_iter().collect();
            nuggets.iter().map(|n| ws.contains(n)).collect()
        })
        .collect()
}

fn alpha_gain(covers: &[bool], seen: &[u32], alpha: f64) -> f64 {
    covers.iter().zip(seen).filter(|(c, _)| **c).map(|(_, &k)| (1.0 - alpha).powi(k as i32)).sum()
}

/// α-DCG of the rows in the given order.
pub fn alpha_dcg(rows: &[Vec<bool>], alpha: f64) -> f64 {
    let width = rows.first().map_or(0, Vec::len);
    let mut seen = vec![0u32; width];
    let mut dcg = 0.0;
    for (i, covers) in rows.iter().enumerate() {
        dcg += alpha_gain(covers, &seen, alpha) * discount(i + 1);
        for (s, &c) in seen.iter_mut().zip(covers) {
            *s += c as u32;
        }
    }
    dcg
}

/// Best α-DCG over all orderings, by dynamic programming over subsets: the
/// coverage counts after placing a subset do not depend on its order.
pub fn ideal_alpha_dcg(rows: &[Vec<bool>], alpha: f64) -> f64 {
    let n = rows.len();
    let width = rows.first().map_or(0, Vec::len);
    let mut best = vec![f64::NEG_INFINITY; 1 << n];
    best[0] = 0.0;
    let mut seen = vec![0u32; width];
    for set in 1usize..(1 << n) {
        let pos = set.count_ones() as usize;
        for i in (0..n).filter(|i| set & (1 << i) != 0) {
            let rest = set & !(1 << i);
            seen.iter_mut().for_each(|s| *s = 0);
            for j in (0..n).filter(|j| rest & (1 << j) != 0) {
                for (s, &c) in seen.iter_mut().zip(&rows[j]) {
                    *s += c as u32;
                }
            }
            let v = best[rest] + alpha_gain(&rows[i], &seen, alpha) * discount(pos);
            if v > best[set] {
                best[set] = v;
            }
        }
    }
    best[(1 << n) - 1]
}

/// α-NDCG with nuggets taken from the target's content terms.
pub fn alpha_ndcg<S: AsRef<str>>(suggestions: &[S], target: &str, alpha: f64, depth: usize) -> f64 {
    let ns = nuggets(target);
    if ns.is_empty() {
        return 0.0;
    }
    let rows = coverage(suggestions, &ns, depth);
    let ideal = ideal_alpha_dcg(&rows, alpha);
    if ideal <= 0.0 {
        return 0.0;
    }
    (alpha_dcg(&rows, alpha) / ideal).min(1.0)
}

fn ngram_counts(ws: &[String], n: usize) -> HashMap<&[String], usize> {
    let mut m = HashMap::new();
    for g in ws.windows(n) {
        *m.entry(g).or_default() += 1;
    }
    m
}

/// Sentence BLEU over words, n ≤ 4, brevity penalty, and add-one smoothing
/// on the n ≥ 2 precisions.
pub fn sentence_bleu(hypothesis: &str, reference: &str) -> f64 {
    let hyp = words(hypothesis);
    let rf = words(reference);
    if hyp.is_empty() || rf.is_empty() {
        return 0.0;
    }
    let mut log_sum = 0.0;
    for n in 1..=4 {
        let h = ngram_counts(&hyp, n);
        let r = ngram_counts(&rf, n);
        let matched: usize = h.iter().map(|(g, &c)| c.min(r.get(g).copied().unwrap_or(0))).sum();
        let total = hyp.len().saturating_sub(n - 1);
        let p = if n == 1 {
            matched as f64 / total as f64
        } else {
            (matched as f64 + 1.0) / (total as f64 + 1.0)
        };
        if p == 0.0 {
            return 0.0;
        }
        log_sum += p.ln() / 4.0;
    }
    let (c, r) = (hyp.len() as f64, rf.len() as f64);
    let bp = if c > r { 1.0 } else { (1.0 - r / c).exp() };
    (bp * log_sum.exp()).min(1.0)
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BleuRrMode {
    /// Reciprocal-rank weighted sum over the harmonic number of `depth`.
    #[default]
    Harmonic,
    /// `max_k BLEU(s_k)/k`.
    Max,
}

impl FromStr for BleuRrMode {
    type Err = QacError;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "harmonic" => Ok(Self::Harmonic),
            "max" => Ok(Self::Max),
            _ => Err(QacError::invalid(format!("unknown BLEU_RR mode {s:?}"))),
        }
    }
}

pub fn bleu_rr<S: AsRef<str>>(suggestions: &[S], target: &str, depth: usize, mode: BleuRrMode) -> f64 {
    let scores = top(suggestions, depth).map(|(k, s)| sentence_bleu(&s, target) / k as f64);
    match mode {
        BleuRrMode::Harmonic => {
            let h: f64 = (1..=depth).map(|k| 1.0 / k as f64).sum();
            if h == 0.0 {
                0.0
            } else {
                scores.sum::<f64>() / h
            }
        }
        BleuRrMode::Max => scores.fold(0.0, f64::max),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PartialKind {
    Precision,
    Recall,
}

/// Token-overlap NDCG. The ideal list holds gain 1 at each returned rank.
pub fn partial_ndcg<S: AsRef<str>>(suggestions: &[S], target: &str, kind: PartialKind, depth: usize) -> f64 {
    let t: HashSet<String> = words(target).into_iter().collect();
    if t.is_empty() {
        return 0.0;
    }
    let (mut dcg, mut idcg) = (0.0, 0.0);
    for (rank, s) in top(suggestions, depth) {
        let st: HashSet<String> = words(&s).into_iter().collect();
        let overlap = st.intersection(&t).count() as f64;
        let gain = match kind {
            PartialKind::Precision if st.is_empty() => 0.0,
            PartialKind::Precision => overlap / st.len() as f64,
            PartialKind::Recall => overlap / t.len() as f64,
        };
        dcg += gain * discount(rank);
        idcg += discount(rank);
    }
    if dcg == 0.0 {
        0.0
    } else {
        dcg / idcg
    }
}

/// Semantic MRR: first suggestion whose vector has cosine ≥ `threshold` with
/// the target's. `None` when any needed vector is missing.
pub fn sbmrr<S: AsRef<str>>(suggestions: &[S], target: &str, vectors: &VectorTable, threshold: f64) -> Option<f64> {
    let tv = vectors.get(&normalize_query(target))?;
    let mut rr = 0.0;
    for (rank, s) in top(suggestions, DEPTH) {
        let sv = vectors.get(&s)?;
        if rr == 0.0 && cosine(tv, sv) >= threshold {
            rr = 1.0 / rank as f64;
        }
    }
    Some(rr)
}

#[derive(Debug, Clone)]
pub struct EvalOptions<'a> {
    pub mode_label: String,
    pub depth: usize,
    pub alpha: f64,
    pub bleu_mode: BleuRrMode,
    pub vectors: Option<&'a VectorTable>,
    pub sbmrr_threshold: f64,
    pub compute_tes: bool,
}

impl Default for EvalOptions<'_> {
    fn default() -> Self {
        Self {
            mode_label: "default".into(),
            depth: DEPTH,
            alpha: ALPHA,
            bleu_mode: BleuRrMode::Harmonic,
            vectors: None,
            sbmrr_threshold: SBMRR_THRESHOLD,
            compute_tes: true,
        }
    }
}

/// Metric values for one example.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize)]
pub struct ExampleScores {
    pub mrr: f64,
    pub alpha_ndcg: f64,
    pub bleu_rr: f64,
    pub sbmrr: Option<f64>,
    pub ppn: f64,
    pub prn: f64,
    pub tes: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MetricReport {
    pub quadrant: Quadrant,
    pub mode: String,
    pub n_examples: usize,
    pub mrr: f64,
    pub alpha_ndcg: f64,
    pub bleu_rr: f64,
    pub sbmrr: Option<f64>,
    pub sbmrr_skipped: usize,
    pub ppn: f64,
    pub prn: f64,
    pub tes: f64,
}

pub fn score_example<F>(ex: &EvalExample, system: &F, opts: &EvalOptions<'_>) -> ExampleScores
where
    F: Fn(&str, &str) -> Vec<String>,
{
    let list = system(&ex.doc_id, &ex.prefix);
    let t = &ex.target;
    ExampleScores {
        mrr: mrr(&list, t),
        alpha_ndcg: alpha_ndcg(&list, t, opts.alpha, opts.depth),
        bleu_rr: bleu_rr(&list, t, opts.depth, opts.bleu_mode),
        sbmrr: opts.vectors.and_then(|v| sbmrr(&list, t, v, opts.sbmrr_threshold)),
        ppn: partial_ndcg(&list, t, PartialKind::Precision, opts.depth),
        prn: partial_ndcg(&list, t, PartialKind::Recall, opts.depth),
        tes: if opts.compute_tes { tes(|p| system(&ex.doc_id, p), t, opts.depth) } else { 0.0 },
    }
}

/// Means per quadrant, in SS, SU, US, UU order. Empty quadrants are omitted.
pub fn evaluate_run<F>(examples: &[EvalExample], system: F, opts: &EvalOptions<'_>) -> Vec<MetricReport>
where
    F: Fn(&str, &str) -> Vec<String> + Sync,
{
    let scores: Vec<ExampleScores> = examples.par_iter().map(|ex| score_example(ex, &system, opts)).collect();
    let mut groups: BTreeMap<Quadrant, Vec<ExampleScores>> = BTreeMap::new();
    for (ex, s) in examples.iter().zip(scores) {
        groups.entry(ex.quadrant).or_default().push(s);
    }
    for q in Quadrant::ALL {
        if !groups.contains_key(&q) {
            log::warn!("no {q} examples for mode {}; row omitted", opts.mode_label);
        }
    }
    groups
        .into_iter()
        .map(|(quadrant, s)| {
            let n = s.len() as f64;
            let mean = |f: fn(&ExampleScores) -> f64| s.iter().map(f).sum::<f64>() / n;
            let sb: Vec<f64> = s.iter().filter_map(|x| x.sbmrr).collect();
            let sbmrr_skipped = if opts.vectors.is_some() { s.len() - sb.len() } else { 0 };
            MetricReport {
                quadrant,
                mode: opts.mode_label.clone(),
                n_examples: s.len(),
                mrr: mean(|x| x.mrr),
                alpha_ndcg: mean(|x| x.alpha_ndcg),
                bleu_rr: mean(|x| x.bleu_rr),
                sbmrr: (!sb.is_empty()).then(|| sb.iter().sum::<f64>() / sb.len() as f64),
                sbmrr_skipped,
                ppn: mean(|x| x.ppn),
                prn: mean(|x| x.prn),
                tes: mean(|x| x.tes),
            }
        })
        .collect()
}

pub const REPORT_COLUMNS: [&str; 10] =
    ["quadrant", "mode", "n", "MRR", "αNDCG", "BLEU_RR", "SBMRR", "PPN", "PRN", "TES"];

fn report_cells(r: &MetricReport) -> Vec<String> {
    let f = |x: f64| format!("{x:.4}");
    vec![
        r.quadrant.to_string(),
        r.mode.clone(),
        r.n_examples.to_string(),
        f(r.mrr),
        f(r.alpha_ndcg),
        f(r.bleu_rr),
        r.sbmrr.map_or_else(|| "-".to_string(), f),
        f(r.ppn),
        f(r.prn),
        f(r.tes),
    ]
}

pub fn reports_to_tsv(reports: &[MetricReport]) -> String {
    let mut out = REPORT_COLUMNS.join("\t");
    out.push('\n');
    for r in reports {
        out.push_str(&report_cells(r).join("\t"));
        out.push('\n');
    }
    out
}

pub fn reports_to_table(reports: &[MetricReport]) -> String {
    let rows: Vec<Vec<String>> = std::iter::once(REPORT_COLUMNS.iter().map(|s| s.to_string()).collect())
        .chain(reports.iter().map(report_cells))
        .collect();
    let widths: Vec<usize> = (0..REPORT_COLUMNS.len())
        .map(|c| rows.iter().map(|r| r[c].chars().count()).max().unwrap_or(0))
        .collect();
    let mut out = String::new();
    for (i, row) in rows.iter().enumerate() {
        let cells: Vec<String> = row
            .iter()
            .zip(&widths)
            .map(|(cell, &w)| format!("{cell}{}", " ".repeat(w - cell.chars().count())))
            .collect();
        out.push_str(cells.join("  ").trim_end());
        out.push('\n');
        if i == 0 {
            out.push_str(&widths.iter().map(|&w| "-".repeat(w)).collect::<Vec<_>>().join("  "));
            out.push('\n');
        }
    }
    out
}
