//! Retrieval paradigms: lexical scorers, beam search over the summary tree,
//! temporal graph expansion, query rewriting, and tiered context assembly.

use std::collections::{BTreeMap, BTreeSet, HashMap, HashSet};
use std::fmt::Write as _;

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};

use crate::gateway::{CallKind, ChatMessage, ChatRequest, Embedding, LlmContext};
use crate::memstore::{EdgeId, EntityId, FactEdge, Message, NodeId, SegmentId, StoreError, SummaryTree, TemporalGraph, TieredMemory};
use crate::prompts::PromptKind;
use crate::text;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum HitSource {
    ShortTerm,
    MidFlat,
    MidBeam,
    LongTerm,
    Flat,
    Graph,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RetrievalHit {
    pub source: HitSource,
    /// `m{seq}` for messages, `n{node}` for tree nodes, `s{id}` for
    /// segments, `e{id}` for entries, `f{id}` for graph facts.
    pub reference: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub segment: Option<SegmentId>,
    pub score: f64,
    pub text: String,
}

/// Stable sort by score descending; equal scores keep their input order.
pub fn sort_hits(hits: &mut [RetrievalHit]) {
    hits.sort_by(|a, b| b.score.total_cmp(&a.score));
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Bm25Params {
    pub k1: f64,
    pub b: f64,
}

impl Default for Bm25Params {
    fn default() -> Self {
        Self { k1: 1.2, b: 0.75 }
    }
}

/// Okapi BM25 with the non-negative `ln(1 + (N - df + 0.5)/(df + 0.5))` idf.
/// Returns up to `top_k` `(id, score)` pairs, score descending, ties in
/// corpus order. Zero scores are included.
pub fn score_bm25<K: Clone>(query: &str, corpus: &[(K, &str)], params: Bm25Params, top_k: usize) -> Vec<(K, f64)> {
    let q_terms: BTreeSet<String> = text::tokenize(query).into_iter().collect();
    if q_terms.is_empty() || corpus.is_empty() {
        return Vec::new();
    }
    let docs: Vec<Vec<String>> = corpus.iter().map(|(_, t)| text::tokenize(t)).collect();
    let n = docs.len() as f64;
    let avgdl = docs.iter().map(Vec::len).sum::<usize>() as f64 / n;
    let mut tfs: Vec<HashMap<&str, usize>> = Vec::with_capacity(docs.len());
    let mut df: HashMap<&str, usize> = HashMap::new();
    for d in &docs {
        let mut tf: HashMap<&str, usize> = HashMap::new();
        for t in d {
            *tf.entry(t.as_str()).or_default() += 1;
        }
        for t in tf.keys() {
            *df.entry(t).or_default() += 1;
        }
        tfs.push(tf);
    }
    let mut scored: Vec<(usize, f64)> = docs
        .iter()
        .enumerate()
        .map(|(i, d)| {
            let len_norm = if avgdl > 0.0 { d.len() as f64 / avgdl } else { 0.0 };
            let score = q_terms
                .iter()
                .map(|term| {
                    let f = *tfs[i].get(term.as_str()).unwrap_or(&0) as f64;
                    if f == 0.0 {
                        return 0.0;
                    }
                    let dfi = *df.get(term.as_str()).unwrap_or(&0) as f64;
                    let idf = ((n - dfi + 0.5) / (dfi + 0.5) + 1.0).ln();
                    idf * f * (params.k1 + 1.0) / (f + params.k1 * (1.0 - params.b + params.b * len_norm))
                })
                .sum();
            (i, score)
        })
        .collect();
    scored.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
    scored.truncate(top_k);
    scored.into_iter().map(|(i, s)| (corpus[i].0.clone(), s)).collect()
}

pub fn score_jaccard<T: Ord>(a: &BTreeSet<T>, b: &BTreeSet<T>) -> f64 {
    let union = a.union(b).count();
    if union == 0 {
        return 0.0;
    }
    a.intersection(b).count() as f64 / union as f64
}

/// Level-synchronous beam descent. At each step every frontier node is
/// replaced by its children (leaves carry over unchanged) and the `beam`
/// best by cosine survive. The surviving leaves' messages are returned
/// scored by their leaf's cosine, at most `top_k`.
pub fn search_beam_tree(tree: &SummaryTree, query: &Embedding, beam: usize, top_k: usize) -> Vec<RetrievalHit> {
    if tree.is_empty() || beam == 0 {
        return Vec::new();
    }
    let score = |id: NodeId| query.cosine(&tree.node(id).embedding);
    let mut frontier: Vec<NodeId> = vec![tree.root().id];
    while frontier.iter().any(|&id| !tree.node(id).is_leaf()) {
        let mut candidates: Vec<(NodeId, f64)> = Vec::new();
        for &id in &frontier {
            let node = tree.node(id);
            if node.is_leaf() {
                candidates.push((id, score(id)));
            } else {
                candidates.extend(node.children.iter().map(|&c| (c, score(c))));
            }
        }
        candidates.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
        candidates.truncate(beam);
        frontier = candidates.into_iter().map(|(id, _)| id).collect();
    }
    leaf_hits(tree, frontier.into_iter().map(|id| (id, score(id))).collect(), top_k)
}

/// Every leaf ranked by cosine; the reference for beam search.
pub fn exhaustive_leaf_ranking(tree: &SummaryTree, query: &Embedding, top_k: usize) -> Vec<RetrievalHit> {
    let leaves = tree.leaves().map(|n| (n.id, query.cosine(&n.embedding))).collect();
    leaf_hits(tree, leaves, top_k)
}

fn leaf_hits(tree: &SummaryTree, mut leaves: Vec<(NodeId, f64)>, top_k: usize) -> Vec<RetrievalHit> {
    leaves.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
    let mut hits = Vec::new();
    for (id, s) in leaves {
        let seg = tree.node(id).payload.as_ref().expect("frontier holds leaves");
        for m in &seg.messages {
            if hits.len() == top_k {
                return hits;
            }
            hits.push(RetrievalHit {
                source: HitSource::MidBeam,
                reference: format!("m{}", m.seq),
                segment: Some(seg.id),
                score: s,
                text: m.render(),
            });
        }
    }
    hits
}

/// Edges among the nodes within `depth` live hops of `seeds`, with the hop
/// at which each edge is first covered. Sorted by hop, then creation time.
pub fn expand_graph_bfs(
    graph: &TemporalGraph,
    seeds: &[EntityId],
    depth: usize,
    at: DateTime<Utc>,
) -> Result<Vec<(FactEdge, usize)>, StoreError> {
    let n = graph.entities().len();
    if let Some(bad) = seeds.iter().find(|&&s| s >= n) {
        return Err(StoreError::UnknownEntity(format!("#{bad}")));
    }
    let live = graph.edges_live_at(at);
    let mut adj: HashMap<EntityId, Vec<EntityId>> = HashMap::new();
    for e in &live {
        adj.entry(e.subject).or_default().push(e.object);
        adj.entry(e.object).or_default().push(e.subject);
    }
    let mut dist: HashMap<EntityId, usize> = seeds.iter().map(|&s| (s, 0)).collect();
    let mut frontier: Vec<EntityId> = seeds.to_vec();
    for hop in 1..=depth {
        let mut next = Vec::new();
        for u in &frontier {
            for &v in adj.get(u).map(Vec::as_slice).unwrap_or(&[]) {
                if let std::collections::hash_map::Entry::Vacant(slot) = dist.entry(v) {
                    slot.insert(hop);
                    next.push(v);
                }
            }
        }
        frontier = next;
    }
    let mut out: Vec<(FactEdge, usize)> = live
        .into_iter()
        .filter_map(|e| {
            let (a, b) = (dist.get(&e.subject)?, dist.get(&e.object)?);
            Some((e.clone(), *a.max(b)))
        })
        .collect();
    out.sort_by(|x, y| x.1.cmp(&y.1).then(x.0.created_at.cmp(&y.0.created_at)).then(x.0.id.cmp(&y.0.id)));
    Ok(out)
}

pub fn graph_hits(edges: &[(FactEdge, usize)]) -> Vec<RetrievalHit> {
    edges
        .iter()
        .map(|(e, hop)| RetrievalHit {
            source: HitSource::Graph,
            reference: format!("f{}", e.id),
            segment: None,
            score: 1.0 / (1.0 + *hop as f64),
            text: e.fact.clone(),
        })
        .collect()
}

pub fn edge_ids(edges: &[(FactEdge, usize)]) -> Vec<EdgeId> {
    edges.iter().map(|(e, _)| e.id).collect()
}

const REWRITE_FORMAT: &str = "Respond with only a JSON object: {\"queries\": [\"<query>\", ...]}.";

#[derive(Deserialize)]
struct RawRewrites {
    queries: Vec<String>,
}

/// The original query first, then up to three distinct rewrites. Any model
/// failure or unparseable reply yields just the original.
pub fn rewrite_query_llm(ctx: &LlmContext<'_>, query: &str) -> Vec<String> {
    let mut out = vec![query.to_string()];
    let prompt = ctx.prompts.render(PromptKind::QueryRewrite, &[("query", query)]);
    let req = ChatRequest::new(vec![ChatMessage::system(REWRITE_FORMAT), ChatMessage::user(prompt)]).with_max_tokens(128);
    let raw = match ctx.chat(CallKind::Retrieve, &req) {
        Ok((raw, _)) => raw,
        Err(e) => {
            log::warn!("query rewrite failed: {e}");
            return out;
        }
    };
    let parsed = text::find_json_object(&raw).and_then(|b| serde_json::from_str::<RawRewrites>(b).ok());
    for q in parsed.map(|p| p.queries).unwrap_or_default() {
        let q = q.trim().to_string();
        if !q.is_empty() && !out.contains(&q) && out.len() < 4 {
            out.push(q);
        }
    }
    out
}

/// Union of hit lists keeping the best score per `(source, reference)`,
/// ordered by score then first appearance.
pub fn merge_by_max(lists: impl IntoIterator<Item = Vec<RetrievalHit>>) -> Vec<RetrievalHit> {
    let mut order: Vec<RetrievalHit> = Vec::new();
    let mut pos: HashMap<(HitSource, String), usize> = HashMap::new();
    for list in lists {
        for h in list {
            match pos.get(&(h.source, h.reference.clone())) {
                Some(&i) => {
                    if h.score > order[i].score {
                        order[i].score = h.score;
                    }
                }
                None => {
                    pos.insert((h.source, h.reference.clone()), order.len());
                    order.push(h);
                }
            }
        }
    }
    sort_hits(&mut order);
    order
}

/// Min-max normalize each paradigm's scores to [0, 1] (a constant list maps
/// to 1), then fuse by max per reference.
pub fn fuse_min_max(lists: impl IntoIterator<Item = Vec<RetrievalHit>>) -> Vec<RetrievalHit> {
    let normalized = lists.into_iter().map(|mut list| {
        let lo = list.iter().map(|h| h.score).fold(f64::INFINITY, f64::min);
        let hi = list.iter().map(|h| h.score).fold(f64::NEG_INFINITY, f64::max);
        for h in &mut list {
            h.score = if hi > lo { (h.score - lo) / (hi - lo) } else { 1.0 };
        }
        list
    });
    merge_by_max(normalized)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TieredRetrievalParams {
    pub top_k: usize,
    pub beam_width: usize,
    pub context_budget: usize,
}

impl Default for TieredRetrievalParams {
    fn default() -> Self {
        Self { top_k: 10, beam_width: 3, context_budget: 20_000 }
    }
}

/// Assembled context for generation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TieredContext {
    pub short_term: Vec<RetrievalHit>,
    pub long_term: Vec<RetrievalHit>,
    pub mid_summaries: Vec<RetrievalHit>,
    pub mid_raw: Vec<RetrievalHit>,
    /// Hits removed to meet the budget.
    pub dropped: usize,
}

impl TieredContext {
    pub fn render(&self) -> String {
        let mut out = String::new();
        let blocks: [(&str, &[RetrievalHit]); 4] = [
            ("SHORT-TERM", &self.short_term),
            ("LONG-TERM", &self.long_term),
            ("MID-SUMMARIES", &self.mid_summaries),
            ("MID-RAW", &self.mid_raw),
        ];
        for (label, hits) in blocks {
            if hits.is_empty() {
                continue;
            }
            let _ = writeln!(out, "[{label}]");
            for h in hits {
                let _ = writeln!(out, "{}", h.text);
            }
            out.push('\n');
        }
        out
    }

    pub fn tokens(&self) -> usize {
        text::estimate_tokens(&self.render()) as usize
    }

    /// All hits in context order.
    pub fn hits(&self) -> impl Iterator<Item = &RetrievalHit> {
        self.short_term.iter().chain(&self.long_term).chain(&self.mid_summaries).chain(&self.mid_raw)
    }

    /// Segments whose raw messages made it into the context.
    pub fn accessed_segments(&self) -> Vec<SegmentId> {
        let set: BTreeSet<SegmentId> = self.long_term.iter().chain(&self.mid_raw).filter_map(|h| h.segment).collect();
        set.into_iter().collect()
    }

    pub fn contains_segment(&self, id: SegmentId) -> bool {
        self.long_term.iter().chain(&self.mid_raw).any(|h| h.segment == Some(id))
    }

    fn drop_lowest(list: &mut Vec<RetrievalHit>) -> bool {
        let Some(pos) = list
            .iter()
            .enumerate()
            .min_by(|a, b| a.1.score.total_cmp(&b.1.score).then(b.0.cmp(&a.0)))
            .map(|(i, _)| i)
        else {
            return false;
        };
        list.remove(pos);
        true
    }

    fn truncate_to(&mut self, budget: usize) {
        while self.tokens() > budget {
            let dropped = Self::drop_lowest(&mut self.mid_raw)
                || Self::drop_lowest(&mut self.mid_summaries)
                || Self::drop_lowest(&mut self.long_term)
                || (!self.short_term.is_empty() && {
                    self.short_term.remove(0);
                    true
                });
            if !dropped {
                break;
            }
            self.dropped += 1;
        }
    }
}

fn short_term_hit(m: &Message) -> RetrievalHit {
    RetrievalHit {
        source: HitSource::ShortTerm,
        reference: format!("m{}", m.seq),
        segment: None,
        score: 1.0,
        text: m.render(),
    }
}

/// Short-term verbatim, long-term top-k segments (summary plus raw turns),
/// top-k internal-node summaries and beam-search raw turns, deduplicated by
/// segment and truncated to the token budget.
pub fn retrieve_tiered(tiered: &TieredMemory, query: &Embedding, params: &TieredRetrievalParams) -> Result<TieredContext, StoreError> {
    let k = params.top_k.max(1);
    let short_term: Vec<RetrievalHit> = tiered.short_term.iter().map(short_term_hit).collect();
    let tree = &tiered.mid_term;

    let mut seen: HashSet<SegmentId> = HashSet::new();
    let mut long_term = Vec::new();
    for (id, score) in tiered.long_term.topk(query, k)? {
        let Some(seg) = tree.segment(id) else { continue };
        seen.insert(id);
        let mut body = format!("({}) {}", seg.created_at.format("%Y-%m-%d"), seg.summary);
        for line in seg.render_messages() {
            body.push('\n');
            body.push_str(&line);
        }
        long_term.push(RetrievalHit {
            source: HitSource::LongTerm,
            reference: id.to_string(),
            segment: Some(id),
            score,
            text: body,
        });
    }

    let mut mid_summaries: Vec<RetrievalHit> = tree
        .internal_nodes()
        .filter(|n| !n.summary.is_empty())
        .map(|n| RetrievalHit {
            source: HitSource::MidFlat,
            reference: format!("n{}", n.id),
            segment: None,
            score: query.cosine(&n.embedding),
            text: n.summary.clone(),
        })
        .collect();
    sort_hits(&mut mid_summaries);
    mid_summaries.truncate(k);

    let mid_raw: Vec<RetrievalHit> = search_beam_tree(tree, query, params.beam_width, k)
        .into_iter()
        .filter(|h| h.segment.is_some_and(|s| !seen.contains(&s)))
        .collect();

    let mut ctx = TieredContext { short_term, long_term, mid_summaries, mid_raw, dropped: 0 };
    ctx.truncate_to(params.context_budget);
    Ok(ctx)
}

/// Hits per source, for diagnostics and the service preview endpoint.
pub fn count_by_source<'a>(hits: impl IntoIterator<Item = &'a RetrievalHit>) -> BTreeMap<HitSource, usize> {
    let mut out = BTreeMap::new();
    for h in hits {
        *out.entry(h.source).or_default() += 1;
    }
    out
}
