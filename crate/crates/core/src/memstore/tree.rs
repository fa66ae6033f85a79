//! Summary tree over segments.
//!
//! Leaves carry a [`Segment`]; internal nodes carry an aggregated summary of
//! their children. An internal node's embedding is the normalized centroid of
//! its children's embeddings, so placement decisions never wait on the model.
//! Summaries along the touched paths are regenerated through a caller
//! supplied summarizer, deepest nodes first.
//!
//! Two growth policies are provided:
//! * [`SummaryTree::attach_segments`]: leaves go under the most similar
//!   leaf-parent with spare fan-out; when the root overflows its children are
//!   regrouped in insertion order and the tree deepens by one level.
//! * [`SummaryTree::insert_descend`]: greedy top-down descent by cosine with a
//!   new-leaf threshold, splitting a leaf into an internal node on arrival.

use std::collections::{BTreeSet, HashMap};

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};

use super::types::{Segment, SegmentId};
use crate::gateway::Embedding;

pub type NodeId = usize;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TreeNode {
    pub id: NodeId,
    pub summary: String,
    pub embedding: Embedding,
    pub children: Vec<NodeId>,
    pub parent: Option<NodeId>,
    pub descendant_count: u64,
    pub payload: Option<Segment>,
}

impl TreeNode {
    pub fn is_leaf(&self) -> bool {
        self.payload.is_some()
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SummaryTree {
    dim: usize,
    nodes: Vec<TreeNode>,
    root: NodeId,
    #[serde(skip)]
    by_segment: HashMap<SegmentId, NodeId>,
}

impl SummaryTree {
    pub fn new(dim: usize) -> Self {
        let root = TreeNode {
            id: 0,
            summary: String::new(),
            embedding: Embedding::zeros(dim),
            children: Vec::new(),
            parent: None,
            descendant_count: 0,
            payload: None,
        };
        Self { dim, nodes: vec![root], root: 0, by_segment: HashMap::new() }
    }

    /// Rebuild lookups after deserialization.
    pub fn reindex(&mut self) {
        self.by_segment = self
            .nodes
            .iter()
            .filter_map(|n| n.payload.as_ref().map(|s| (s.id, n.id)))
            .collect();
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn root(&self) -> &TreeNode {
        &self.nodes[self.root]
    }

    pub fn node(&self, id: NodeId) -> &TreeNode {
        &self.nodes[id]
    }

    pub fn nodes(&self) -> &[TreeNode] {
        &self.nodes
    }

    pub fn is_empty(&self) -> bool {
        self.root().children.is_empty()
    }

    /// Leaves in insertion order.
    pub fn leaves(&self) -> impl Iterator<Item = &TreeNode> {
        self.nodes.iter().filter(|n| n.is_leaf())
    }

    pub fn leaf_count(&self) -> usize {
        self.by_segment.len()
    }

    /// Non-leaf nodes, root included, in creation order.
    pub fn internal_nodes(&self) -> impl Iterator<Item = &TreeNode> {
        self.nodes.iter().filter(|n| !n.is_leaf())
    }

    pub fn segment(&self, id: SegmentId) -> Option<&Segment> {
        self.by_segment.get(&id).and_then(|&n| self.nodes[n].payload.as_ref())
    }

    pub fn segment_node(&self, id: SegmentId) -> Option<NodeId> {
        self.by_segment.get(&id).copied()
    }

    pub fn depth_of(&self, mut id: NodeId) -> usize {
        let mut d = 0;
        while let Some(p) = self.nodes[id].parent {
            d += 1;
            id = p;
        }
        d
    }

    /// Longest root-to-leaf path, in edges. An empty tree has depth 0.
    pub fn depth(&self) -> usize {
        self.leaves().map(|l| self.depth_of(l.id)).max().unwrap_or(0)
    }

    /// Record a retrieval hit on a segment.
    pub fn touch_segment(&mut self, id: SegmentId, now: DateTime<Utc>) -> bool {
        let Some(&n) = self.by_segment.get(&id) else { return false };
        let seg = self.nodes[n].payload.as_mut().expect("indexed node is a leaf");
        seg.access_count += 1;
        if now > seg.last_access {
            seg.last_access = now;
        }
        true
    }

    fn push_node(&mut self, parent: Option<NodeId>, payload: Option<Segment>) -> NodeId {
        let id = self.nodes.len();
        let (summary, embedding, count) = match &payload {
            Some(seg) => (seg.summary.clone(), seg.embedding.clone(), 1),
            None => (String::new(), Embedding::zeros(self.dim), 0),
        };
        if let Some(seg) = &payload {
            self.by_segment.insert(seg.id, id);
        }
        self.nodes.push(TreeNode {
            id,
            summary,
            embedding,
            children: Vec::new(),
            parent,
            descendant_count: count,
            payload,
        });
        id
    }

    fn recompute(&mut self, id: NodeId) {
        let node = &self.nodes[id];
        if node.is_leaf() {
            return;
        }
        let count = node.children.iter().map(|&c| self.nodes[c].descendant_count).sum();
        let emb = Embedding::centroid(self.dim, node.children.iter().map(|&c| &self.nodes[c].embedding));
        let node = &mut self.nodes[id];
        node.descendant_count = count;
        node.embedding = emb;
    }

    fn refresh_path(&mut self, from: NodeId, dirty: &mut BTreeSet<NodeId>) {
        let mut cur = Some(from);
        while let Some(id) = cur {
            self.recompute(id);
            if !self.nodes[id].is_leaf() {
                dirty.insert(id);
            }
            cur = self.nodes[id].parent;
        }
    }

    fn resummarize<E>(
        &mut self,
        dirty: BTreeSet<NodeId>,
        summarize: &mut dyn FnMut(&[String]) -> Result<String, E>,
    ) -> Result<(), E> {
        let mut order: Vec<(usize, NodeId)> = dirty.into_iter().map(|id| (self.depth_of(id), id)).collect();
        order.sort_by(|a, b| b.0.cmp(&a.0).then(a.1.cmp(&b.1)));
        for (_, id) in order {
            let children: Vec<String> =
                self.nodes[id].children.iter().map(|&c| self.nodes[c].summary.clone()).collect();
            if children.is_empty() {
                continue;
            }
            self.nodes[id].summary = summarize(&children)?;
        }
        Ok(())
    }

    fn leaf_parents_with_room(&self, fanout: usize) -> impl Iterator<Item = &TreeNode> {
        self.nodes.iter().filter(move |n| {
            n.id != self.root
                && !n.is_leaf()
                && n.children.len() < fanout
                && n.children.iter().all(|&c| self.nodes[c].is_leaf())
        })
    }

    /// Edges from `id` down to its leaves along first children. Leaves have
    /// height 0; an empty root counts as a leaf-parent's parent.
    fn height(&self, mut id: NodeId) -> usize {
        if id == self.root && self.nodes[id].children.is_empty() {
            return 2;
        }
        let mut h = 0;
        while let Some(&c) = self.nodes[id].children.first() {
            h += 1;
            id = c;
        }
        h
    }

    fn place_segment(&mut self, seg: Segment, fanout: usize, dirty: &mut BTreeSet<NodeId>) -> NodeId {
        let best = self
            .leaf_parents_with_room(fanout)
            .map(|n| (n.id, seg.embedding.cosine(&n.embedding)))
            .fold(None::<(NodeId, f64)>, |acc, (id, s)| match acc {
                Some((_, bs)) if bs >= s => acc,
                _ => Some((id, s)),
            });
        let emb = seg.embedding.clone();
        let (parent, fresh) = match best {
            Some((id, _)) => (id, false),
            None => (self.push_node(None, None), true),
        };
        let leaf = self.push_node(Some(parent), Some(seg));
        self.nodes[parent].children.push(leaf);
        if fresh {
            self.recompute(parent);
            self.adopt(parent, 1, &emb, fanout, dirty);
        }
        self.refresh_path(parent, dirty);
        leaf
    }

    /// Hang the detached subtree `child` (of height `h`) one level up: under
    /// the most similar node of height `h + 1` with spare fan-out, else under
    /// a new node that is adopted in turn. A full root is pushed down one
    /// level first, so every leaf stays at the same depth.
    fn adopt(&mut self, child: NodeId, h: usize, emb: &Embedding, fanout: usize, dirty: &mut BTreeSet<NodeId>) {
        let root_h = self.height(self.root);
        if h + 1 >= root_h {
            if self.nodes[self.root].children.len() >= fanout {
                self.deepen(dirty);
                return self.adopt(child, h, emb, fanout, dirty);
            }
            self.attach_child(self.root, child);
            return;
        }
        let best = self
            .nodes
            .iter()
            .filter(|n| n.id != self.root && n.id != child && !n.is_leaf() && n.children.len() < fanout)
            .filter(|n| n.parent.is_some() && self.height(n.id) == h + 1)
            .map(|n| (n.id, emb.cosine(&n.embedding)))
            .fold(None::<(NodeId, f64)>, |acc, (id, s)| match acc {
                Some((_, bs)) if bs >= s => acc,
                _ => Some((id, s)),
            });
        match best {
            Some((p, _)) => self.attach_child(p, child),
            None => {
                let p = self.push_node(None, None);
                self.attach_child(p, child);
                self.recompute(p);
                self.adopt(p, h + 1, emb, fanout, dirty);
            }
        }
    }

    fn attach_child(&mut self, parent: NodeId, child: NodeId) {
        self.nodes[child].parent = Some(parent);
        self.nodes[parent].children.push(child);
    }

    /// Move all root children under one new node.
    fn deepen(&mut self, dirty: &mut BTreeSet<NodeId>) {
        let old = std::mem::take(&mut self.nodes[self.root].children);
        let group = self.push_node(Some(self.root), None);
        for &c in &old {
            self.nodes[c].parent = Some(group);
        }
        self.nodes[group].children = old;
        self.nodes[self.root].children.push(group);
        self.recompute(group);
        dirty.insert(group);
        self.recompute(self.root);
        dirty.insert(self.root);
    }

    /// Attach each segment as a leaf (fan-out `fanout`), then regenerate every
    /// touched internal summary once. On error the tree is left unchanged.
    pub fn attach_segments<E>(
        &mut self,
        segments: Vec<Segment>,
        fanout: usize,
        summarize: &mut dyn FnMut(&[String]) -> Result<String, E>,
    ) -> Result<Vec<NodeId>, E> {
        assert!(fanout >= 2, "fan-out must be at least 2");
        let mut work = self.clone();
        let mut dirty = BTreeSet::new();
        let leaves = segments.into_iter().map(|s| work.place_segment(s, fanout, &mut dirty)).collect();
        work.resummarize(dirty, summarize)?;
        *self = work;
        Ok(leaves)
    }

    pub fn attach_segment<E>(
        &mut self,
        segment: Segment,
        fanout: usize,
        summarize: &mut dyn FnMut(&[String]) -> Result<String, E>,
    ) -> Result<NodeId, E> {
        Ok(self.attach_segments(vec![segment], fanout, summarize)?[0])
    }

    /// Greedy descent insert. A new leaf is attached where the best child
    /// similarity drops below `new_leaf_threshold`; reaching a leaf turns it
    /// into an internal node holding the old and the new leaf.
    pub fn insert_descend<E>(
        &mut self,
        segment: Segment,
        new_leaf_threshold: f64,
        summarize: &mut dyn FnMut(&[String]) -> Result<String, E>,
    ) -> Result<NodeId, E> {
        let mut work = self.clone();
        let mut dirty = BTreeSet::new();
        let mut node = work.root;
        let leaf = loop {
            let best = work.nodes[node]
                .children
                .iter()
                .map(|&c| (c, segment.embedding.cosine(&work.nodes[c].embedding)))
                .fold(None::<(NodeId, f64)>, |acc, (id, s)| match acc {
                    Some((_, bs)) if bs >= s => acc,
                    _ => Some((id, s)),
                });
            match best {
                Some((child, sim)) if sim >= new_leaf_threshold => {
                    if work.nodes[child].is_leaf() {
                        let split = work.push_node(Some(node), None);
                        let slot = work.nodes[node].children.iter().position(|&c| c == child).unwrap();
                        work.nodes[node].children[slot] = split;
                        work.nodes[child].parent = Some(split);
                        let leaf = work.push_node(Some(split), Some(segment));
                        work.nodes[split].children = vec![child, leaf];
                        break leaf;
                    }
                    node = child;
                }
                _ => {
                    let leaf = work.push_node(Some(node), Some(segment));
                    work.nodes[node].children.push(leaf);
                    break leaf;
                }
            }
        };
        let parent = work.nodes[leaf].parent.expect("leaf has a parent");
        work.refresh_path(parent, &mut dirty);
        work.resummarize(dirty, summarize)?;
        *self = work;
        Ok(leaf)
    }

    /// Structural check: one root, consistent parent/child links, payloads only
    /// at leaves, descendant counts equal to a full recount.
    pub fn validate(&self) -> Result<(), String> {
        let roots: Vec<_> = self.nodes.iter().filter(|n| n.parent.is_none()).collect();
        if roots.len() != 1 || roots[0].id != self.root {
            return Err(format!("expected exactly one root, found {}", roots.len()));
        }
        let mut seen = vec![false; self.nodes.len()];
        let mut stack = vec![self.root];
        while let Some(id) = stack.pop() {
            if std::mem::replace(&mut seen[id], true) {
                return Err(format!("node {id} reachable twice"));
            }
            let n = &self.nodes[id];
            if n.id != id {
                return Err(format!("node {id} has mismatched id {}", n.id));
            }
            match &n.payload {
                Some(seg) => {
                    if !n.children.is_empty() {
                        return Err(format!("leaf {id} has children"));
                    }
                    if n.descendant_count != 1 {
                        return Err(format!("leaf {id} descendant_count {}", n.descendant_count));
                    }
                    if !seg.is_contiguous() {
                        return Err(format!("leaf {id} segment is empty or out of order"));
                    }
                    if self.by_segment.get(&seg.id) != Some(&id) {
                        return Err(format!("segment {} not indexed at {id}", seg.id));
                    }
                }
                None => {
                    if n.children.is_empty() && id != self.root {
                        return Err(format!("internal node {id} has no children"));
                    }
                    let recount = self.recount(id);
                    if n.descendant_count != recount {
                        return Err(format!(
                            "node {id} descendant_count {} but subtree holds {recount} leaves",
                            n.descendant_count
                        ));
                    }
                }
            }
            for &c in &n.children {
                if self.nodes.get(c).and_then(|cn| cn.parent) != Some(id) {
                    return Err(format!("child {c} does not point back to {id}"));
                }
                stack.push(c);
            }
        }
        if let Some(orphan) = seen.iter().position(|s| !s) {
            return Err(format!("node {orphan} unreachable from root"));
        }
        if self.by_segment.len() != self.leaves().count() {
            return Err("segment index out of sync with leaves".into());
        }
        Ok(())
    }

    fn recount(&self, id: NodeId) -> u64 {
        let n = &self.nodes[id];
        if n.is_leaf() {
            1
        } else {
            n.children.iter().map(|&c| self.recount(c)).sum()
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::memstore::types::Message;
    use chrono::TimeZone;

    fn t0() -> DateTime<Utc> {
        Utc.with_ymd_and_hms(2024, 1, 1, 0, 0, 0).unwrap()
    }

    pub(crate) fn seg(id: u64, emb: Vec<f64>) -> Segment {
        let msg = Message {
            conversation_id: "c".into(),
            session_id: "s".into(),
            seq: id,
            speaker: "u".into(),
            text: format!("m{id}"),
            timestamp: t0(),
        };
        Segment {
            id: SegmentId(id),
            messages: vec![msg],
            summary: format!("leaf {id}"),
            embedding: Embedding(emb).normalized(),
            created_at: t0(),
            last_access: t0(),
            access_count: 0,
            degraded: false,
        }
    }

    fn join(children: &[String]) -> Result<String, String> {
        Ok(children.join(" | "))
    }

    fn failing(_: &[String]) -> Result<String, String> {
        Err("llm down".into())
    }

    #[test]
    fn first_segment_builds_root_parent_leaf() {
        let mut t = SummaryTree::new(2);
        let leaf = t.attach_segment(seg(0, vec![1.0, 0.0]), 5, &mut join).unwrap();
        assert_eq!(t.depth(), 2);
        assert_eq!(t.depth_of(leaf), 2);
        assert_eq!(t.root().children.len(), 1);
        assert_eq!(t.root().descendant_count, 1);
        assert_eq!(t.node(t.root().children[0]).summary, "leaf 0");
        t.validate().unwrap();
    }

    #[test]
    fn sixth_similar_segment_opens_second_parent() {
        let mut t = SummaryTree::new(2);
        for i in 0..5 {
            t.attach_segment(seg(i, vec![1.0, 0.1]), 5, &mut join).unwrap();
        }
        assert_eq!(t.root().children.len(), 1);
        t.attach_segment(seg(5, vec![1.0, 0.1]), 5, &mut join).unwrap();
        assert_eq!(t.root().children.len(), 2);
        assert_eq!(t.root().descendant_count, 6);
        t.validate().unwrap();
    }

    #[test]
    fn failed_summary_leaves_tree_unchanged() {
        let mut t = SummaryTree::new(2);
        t.attach_segment(seg(0, vec![1.0, 0.0]), 5, &mut join).unwrap();
        let before = serde_json::to_string(&t).unwrap();
        assert!(t.attach_segment(seg(1, vec![0.0, 1.0]), 5, &mut failing).is_err());
        assert_eq!(serde_json::to_string(&t).unwrap(), before);
        assert!(t.insert_descend(seg(2, vec![0.0, 1.0]), 0.5, &mut failing).is_err());
        assert_eq!(serde_json::to_string(&t).unwrap(), before);
    }

    #[test]
    fn descend_into_empty_tree_and_orthogonal_entry() {
        let mut t = SummaryTree::new(2);
        let a = t.insert_descend(seg(0, vec![1.0, 0.0]), 0.5, &mut join).unwrap();
        assert_eq!(t.node(a).parent, Some(0));
        let b = t.insert_descend(seg(1, vec![0.0, 1.0]), 0.5, &mut join).unwrap();
        assert_eq!(t.node(b).parent, Some(0));
        assert_eq!(t.root().children, vec![a, b]);
        // similar to the first leaf: the leaf splits into an internal node
        let c = t.insert_descend(seg(2, vec![1.0, 0.2]), 0.5, &mut join).unwrap();
        let split = t.node(c).parent.unwrap();
        assert_ne!(split, 0);
        assert_eq!(t.node(split).children, vec![a, c]);
        assert_eq!(t.node(split).summary, "leaf 0 | leaf 2");
        assert_eq!(t.root().descendant_count, 3);
        t.validate().unwrap();
    }

    #[test]
    fn touch_updates_access_stats() {
        let mut t = SummaryTree::new(2);
        t.attach_segment(seg(7, vec![1.0, 0.0]), 5, &mut join).unwrap();
        assert!(t.touch_segment(SegmentId(7), t0() + chrono::Duration::hours(1)));
        assert!(!t.touch_segment(SegmentId(8), t0()));
        let s = t.segment(SegmentId(7)).unwrap();
        assert_eq!(s.access_count, 1);
        assert_eq!(s.last_access, t0() + chrono::Duration::hours(1));
    }

    #[test]
    fn reindex_after_roundtrip() {
        let mut t = SummaryTree::new(2);
        for i in 0..4 {
            t.attach_segment(seg(i, vec![1.0, i as f64]), 2, &mut join).unwrap();
        }
        let mut back: SummaryTree = serde_json::from_str(&serde_json::to_string(&t).unwrap()).unwrap();
        back.reindex();
        back.validate().unwrap();
        assert_eq!(back.leaf_count(), 4);
    }

    #[test]
    fn fanout_two_deepens_when_root_overflows() {
        // hand simulation: leaf-parents fill to 2, a third parent would push
        // the root past 2 children, which is when the depth grows
        let expected_depth = [2, 2, 2, 2, 3, 3, 3, 3, 4];
        let mut t = SummaryTree::new(2);
        for (i, want) in expected_depth.iter().enumerate() {
            let root_kids = t.root().children.len();
            t.attach_segment(seg(i as u64, vec![1.0, 0.0]), 2, &mut join).unwrap();
            assert_eq!(t.depth(), *want, "after {} segments (root had {root_kids})", i + 1);
            t.validate().unwrap();
        }
    }

    proptest::proptest! {
        #[test]
        fn attach_keeps_leaves_level(fanout in 2usize..6, n in 1usize..80, seed in 0u64..1000) {
            let mut t = SummaryTree::new(3);
            let mut x = seed;
            let mut next = || { x = x.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407); (x >> 33) as f64 / (1u64 << 31) as f64 };
            for i in 0..n {
                t.attach_segment(seg(i as u64, vec![next(), next(), next() + 0.01]), fanout, &mut join).unwrap();
            }
            t.validate().unwrap();
            let depths: std::collections::BTreeSet<usize> = t.leaves().map(|l| t.depth_of(l.id)).collect();
            proptest::prop_assert_eq!(depths.len(), 1);
            // leaf-parents needed, then levels of fan-out above them
            let mut level = n.div_ceil(fanout);
            let mut bound = 2;
            while level > fanout {
                level = level.div_ceil(fanout);
                bound += 1;
            }
            proptest::prop_assert!(t.depth() <= bound + 1, "depth {} bound {}", t.depth(), bound);
        }
    }
}
