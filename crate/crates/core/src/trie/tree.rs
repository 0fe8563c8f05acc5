/// Edge-labeled tree arena. Node 0 is the root; a child's id is always greater
/// than its parent's, both after insertion and after deserialization.
#[derive(Debug, Clone, Default, PartialEq)]
pub(crate) struct Tree {
    nodes: Vec<Node>,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub(crate) struct Node {
    /// Sorted by label.
    pub edges: Vec<(u32, u32)>,
    pub terminal: bool,
}

impl Tree {
    pub fn new() -> Self {
        Self { nodes: vec![Node::default()] }
    }

    pub fn from_nodes(nodes: Vec<Node>) -> Self {
        if nodes.is_empty() {
            Self::new()
        } else {
            Self { nodes }
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn node(&self, id: u32) -> &Node {
        &self.nodes[id as usize]
    }

    pub fn set_terminal(&mut self, id: u32) -> bool {
        let was = self.nodes[id as usize].terminal;
        self.nodes[id as usize].terminal = true;
        !was
    }

    pub fn child(&self, id: u32, label: u32) -> Option<u32> {
        let edges = &self.nodes[id as usize].edges;
        edges
            .binary_search_by_key(&label, |&(l, _)| l)
            .ok()
            .map(|i| edges[i].1)
    }

    pub fn walk<I: IntoIterator<Item = u32>>(&self, from: u32, labels: I) -> Option<u32> {
        labels.into_iter().try_fold(from, |n, l| self.child(n, l))
    }

    /// Inserts `labels` below the root, returning the final node.
    pub fn insert<I: IntoIterator<Item = u32>>(&mut self, labels: I) -> u32 {
        let mut cur = 0u32;
        for label in labels {
            let edges = &self.nodes[cur as usize].edges;
            cur = match edges.binary_search_by_key(&label, |&(l, _)| l) {
                Ok(i) => edges[i].1,
                Err(i) => {
                    let id = self.nodes.len() as u32;
                    self.nodes[cur as usize].edges.insert(i, (label, id));
                    self.nodes.push(Node::default());
                    id
                }
            };
        }
        cur
    }

    /// Node ids in depth-first preorder, children visited in label order.
    pub fn preorder(&self) -> Vec<u32> {
        let mut order = Vec::with_capacity(self.nodes.len());
        let mut stack = vec![0u32];
        while let Some(n) = stack.pop() {
            order.push(n);
            stack.extend(self.nodes[n as usize].edges.iter().rev().map(|&(_, c)| c));
        }
        order
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.len() == 1 && !self.nodes[0].terminal
    }
}
