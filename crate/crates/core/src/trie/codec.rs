//! Binary trie files.
//!
//! Layout, little-endian: 6-byte magic (`QTRIE1` completion, `QGTRI1`
//! guidance), `u32` node count, then nodes in preorder. Each node is a varint
//! edge count, per edge a varint label and the varint preorder index of the
//! child, a terminal flag byte, and for completion tries two `f64`s: the
//! terminal weight and the subtree maximum. A trie with no stored strings is
//! written with zero nodes.

use std::fs;
use std::path::Path;

use super::completion::CompletionTrie;
use super::guidance::GuidanceTrie;
use super::tree::{Node, Tree};
use crate::error::{QacError, Result};

pub const COMPLETION_MAGIC: &[u8; 6] = b"QTRIE1";
pub const GUIDANCE_MAGIC: &[u8; 6] = b"QGTRI1";

impl CompletionTrie {
    pub fn to_bytes(&self) -> Vec<u8> {
        encode(COMPLETION_MAGIC, &self.tree, Some((&self.weight, &self.max_weight)))
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let (tree, weights) = decode(COMPLETION_MAGIC, bytes, true)?;
        let (weight, max_weight) = weights.unwrap_or_else(|| (vec![0.0], vec![0.0]));
        Ok(Self { tree, weight, max_weight })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        fs::write(path, self.to_bytes())?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_bytes(&fs::read(path)?)
    }
}

impl GuidanceTrie {
    pub fn to_bytes(&self) -> Vec<u8> {
        encode(GUIDANCE_MAGIC, &self.tree, None)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let (tree, _) = decode(GUIDANCE_MAGIC, bytes, false)?;
        Ok(Self { tree })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        fs::write(path, self.to_bytes())?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_bytes(&fs::read(path)?)
    }
}

fn encode(magic: &[u8; 6], tree: &Tree, weights: Option<(&[f64], &[f64])>) -> Vec<u8> {
    let mut out = Vec::with_capacity(16 + tree.len() * 8);
    out.extend_from_slice(magic);
    if tree.is_empty() {
        out.extend_from_slice(&0u32.to_le_bytes());
        return out;
    }
    let order = tree.preorder();
    let mut index = vec![0u32; tree.len()];
    for (i, &n) in order.iter().enumerate() {
        index[n as usize] = i as u32;
    }
    out.extend_from_slice(&(order.len() as u32).to_le_bytes());
    for &n in &order {
        let node = tree.node(n);
        write_varint(&mut out, node.edges.len() as u64);
        for &(label, child) in &node.edges {
            write_varint(&mut out, label as u64);
            write_varint(&mut out, index[child as usize] as u64);
        }
        out.push(node.terminal as u8);
        if let Some((w, m)) = weights {
            out.extend_from_slice(&w[n as usize].to_le_bytes());
            out.extend_from_slice(&m[n as usize].to_le_bytes());
        }
    }
    out
}

type Weights = (Vec<f64>, Vec<f64>);

fn decode(magic: &[u8; 6], bytes: &[u8], weighted: bool) -> Result<(Tree, Option<Weights>)> {
    let mut r = Reader { bytes, pos: 0 };
    if r.take(6)? != magic {
        return Err(QacError::corrupt(format!("bad magic, expected {}", String::from_utf8_lossy(magic))));
    }
    let count = u32::from_le_bytes(r.take(4)?.try_into().unwrap()) as usize;
    // Each node needs at least two bytes; reject absurd counts before allocating.
    if count > bytes.len() {
        return Err(QacError::corrupt(format!("node count {count} exceeds file size")));
    }
    let mut nodes = Vec::with_capacity(count);
    let mut weight = Vec::new();
    let mut max_weight = Vec::new();
    let mut referenced = vec![false; count];
    for i in 0..count {
        let n_edges = r.varint()? as usize;
        if n_edges > bytes.len() {
            return Err(QacError::corrupt("edge count exceeds file size"));
        }
        let mut edges = Vec::with_capacity(n_edges);
        for _ in 0..n_edges {
            let label = u32::try_from(r.varint()?).map_err(|_| QacError::corrupt("label overflows u32"))?;
            let child = r.varint()? as usize;
            if child <= i || child >= count {
                return Err(QacError::corrupt(format!("child offset {child} out of range at node {i}")));
            }
            if std::mem::replace(&mut referenced[child], true) {
                return Err(QacError::corrupt(format!("node {child} has two parents")));
            }
            if edges.last().is_some_and(|&(prev, _)| prev >= label) {
                return Err(QacError::corrupt(format!("edge labels not ascending at node {i}")));
            }
            if weighted && char::from_u32(label).is_none() {
                return Err(QacError::corrupt(format!("label {label} is not a character")));
            }
            edges.push((label, child as u32));
        }
        let terminal = match r.take(1)?[0] {
            0 => false,
            1 => true,
            f => return Err(QacError::corrupt(format!("bad terminal flag {f}"))),
        };
        if weighted {
            let w = r.f64()?;
            let m = r.f64()?;
            if !w.is_finite() || !m.is_finite() {
                return Err(QacError::corrupt("non-finite weight"));
            }
            weight.push(w);
            max_weight.push(m);
        }
        nodes.push(Node { edges, terminal });
    }
    if r.pos != bytes.len() {
        return Err(QacError::corrupt("trailing bytes after last node"));
    }
    if referenced.iter().skip(1).any(|r| !r) {
        return Err(QacError::corrupt("unreachable node"));
    }
    let weights = (weighted && count > 0).then_some((weight, max_weight));
    Ok((Tree::from_nodes(nodes), weights))
}

pub(crate) fn write_varint(out: &mut Vec<u8>, mut v: u64) {
    loop {
        let byte = (v & 0x7f) as u8;
        v >>= 7;
        if v == 0 {
            out.push(byte);
            return;
        }
        out.push(byte | 0x80);
    }
}

pub(crate) struct Reader<'a> {
    pub bytes: &'a [u8],
    pub pos: usize,
}

impl<'a> Reader<'a> {
    pub fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len());
        let end = end.ok_or_else(|| QacError::corrupt("truncated stream"))?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    pub fn varint(&mut self) -> Result<u64> {
        let mut v = 0u64;
        for shift in (0..64).step_by(7) {
            let b = self.take(1)?[0];
            v |= u64::from(b & 0x7f) << shift;
            if b & 0x80 == 0 {
                return Ok(v);
            }
        }
        Err(QacError::corrupt("varint too long"))
    }

    pub fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    pub fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tokenizer::train_bpe;
    use crate::trie::WeightedQuery;
    use proptest::prelude::*;

    fn sample() -> CompletionTrie {
        let qs: Vec<_> = [("paris tourism", 5.0), ("paris history", 3.0), ("python", 7.0)]
            .iter()
            .map(|(t, c)| WeightedQuery::new(t, *c).unwrap())
            .collect();
        CompletionTrie::build(&qs)
    }

    #[test]
    fn empty_trie_is_header_only() {
        let bytes = CompletionTrie::default().to_bytes();
        assert_eq!(bytes.len(), 10);
        assert_eq!(&bytes[..6], b"QTRIE1");
        assert!(CompletionTrie::from_bytes(&bytes).unwrap().is_empty());
        let g = GuidanceTrie::default().to_bytes();
        assert_eq!(g.len(), 10);
        assert_eq!(&g[..6], b"QGTRI1");
    }

    #[test]
    fn completion_round_trip() {
        let t = sample();
        let back = CompletionTrie::from_bytes(&t.to_bytes()).unwrap();
        for p in ["p", "pa", "paris ", "py", "x"] {
            assert_eq!(back.mpc(p, 10), t.mpc(p, 10));
        }
        assert_eq!(back.entries(), t.entries());
    }

    #[test]
    fn rejects_corruption() {
        let bytes = sample().to_bytes();
        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert!(matches!(CompletionTrie::from_bytes(&bad), Err(QacError::CorruptFile(_))));
        assert!(CompletionTrie::from_bytes(&bytes[..bytes.len() - 3]).is_err());
        assert!(GuidanceTrie::from_bytes(&bytes).is_err());
        let mut trailing = bytes.clone();
        trailing.push(0);
        assert!(CompletionTrie::from_bytes(&trailing).is_err());
        // Root's first child offset pointing back at the root.
        let mut cyclic = bytes;
        assert_eq!(cyclic[10], 1); // root edge count
        cyclic[12] = 0;
        assert!(CompletionTrie::from_bytes(&cyclic).is_err());
    }

    #[test]
    fn varint_round_trip() {
        for v in [0u64, 1, 127, 128, 300, u32::MAX as u64, u64::MAX] {
            let mut buf = Vec::new();
            write_varint(&mut buf, v);
            let mut r = Reader { bytes: &buf, pos: 0 };
            assert_eq!(r.varint().unwrap(), v);
            assert_eq!(r.pos, buf.len());
        }
    }

    proptest! {
        #[test]
        fn guidance_round_trip(qs in proptest::collection::vec("[a-e]{3,7}( [a-e]{2,5})?", 1..15)) {
            let tok = train_bpe(&qs, 30).unwrap();
            let queries: Vec<_> = qs.iter().map(|q| WeightedQuery::new(q, 1.0).unwrap()).collect();
            let gt = GuidanceTrie::build(&queries, &tok);
            let back = GuidanceTrie::from_bytes(&gt.to_bytes()).unwrap();
            prop_assert_eq!(back.sequence_count(), gt.sequence_count());
            for q in &qs {
                for i in 1..=q.len() {
                    let mut path = tok.encode(&q[..i]);
                    path.push(crate::tokenizer::SEP_SPLIT);
                    prop_assert_eq!(back.valid_next_tokens(&path), gt.valid_next_tokens(&path));
                }
            }
        }
    }
}
