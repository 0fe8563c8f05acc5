//! Completion tries (global, DocQ, DocC) and the token-level guidance trie.

mod codec;
mod completion;
mod guidance;
mod tree;

pub use codec::{COMPLETION_MAGIC, GUIDANCE_MAGIC};
pub(crate) use codec::{write_varint, Reader};

pub use completion::{CompletionTrie, WeightedQuery, DOCC_MAX_N, MIN_QUERY_CHARS};
pub use guidance::{GuidanceTrie, TrieNode};
