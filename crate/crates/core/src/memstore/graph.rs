//! Temporal knowledge graph: canonical entities and subject-predicate-object
//! facts stamped with creation and (optional) invalidation instants.

use std::collections::HashMap;

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};

use super::StoreError;
use crate::gateway::Embedding;

pub type EntityId = usize;
pub type EdgeId = usize;

pub const DEFAULT_EXCLUSIVE_PREDICATES: [&str; 3] = ["LIVES_IN", "WORKS_FOR", "IS_MARRIED_TO"];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EntityNode {
    pub id: EntityId,
    pub name: String,
    pub embedding: Embedding,
    pub created_at: DateTime<Utc>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FactEdge {
    pub id: EdgeId,
    pub subject: EntityId,
    pub predicate: String,
    pub object: EntityId,
    pub fact: String,
    pub created_at: DateTime<Utc>,
    pub invalid_at: Option<DateTime<Utc>>,
}

impl FactEdge {
    /// created_at <= t and not yet invalidated at t.
    pub fn is_live_at(&self, t: DateTime<Utc>) -> bool {
        self.created_at <= t && self.invalid_at.is_none_or(|inv| inv > t)
    }
}

#[derive(Debug, Clone)]
pub struct NewEntity {
    pub name: String,
    pub embedding: Embedding,
    pub created_at: DateTime<Utc>,
}

/// Edge endpoints are entity names, resolved after canonicalization.
#[derive(Debug, Clone)]
pub struct NewEdge {
    pub subject: String,
    pub predicate: String,
    pub object: String,
    pub fact: String,
    pub created_at: DateTime<Utc>,
}

/// Case-folded, trimmed, whitespace-collapsed entity key.
pub fn canonical_name(name: &str) -> String {
    name.split_whitespace().collect::<Vec<_>>().join(" ").to_lowercase()
}

/// Upper-case with runs of non-alphanumerics collapsed to `_`.
pub fn canonical_predicate(pred: &str) -> String {
    let mut out = String::new();
    for part in pred.split(|c: char| !c.is_alphanumeric()).filter(|p| !p.is_empty()) {
        if !out.is_empty() {
            out.push('_');
        }
        out.push_str(&part.to_uppercase());
    }
    out
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TemporalGraph {
    entities: Vec<EntityNode>,
    edges: Vec<FactEdge>,
    exclusive_predicates: Vec<String>,
    #[serde(skip)]
    by_name: HashMap<String, EntityId>,
}

impl Default for TemporalGraph {
    fn default() -> Self {
        Self::with_exclusive(DEFAULT_EXCLUSIVE_PREDICATES.iter().map(|s| s.to_string()).collect())
    }
}

impl TemporalGraph {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn with_exclusive(predicates: Vec<String>) -> Self {
        Self {
            entities: Vec::new(),
            edges: Vec::new(),
            exclusive_predicates: predicates.iter().map(|p| canonical_predicate(p)).collect(),
            by_name: HashMap::new(),
        }
    }

    pub fn reindex(&mut self) {
        self.by_name = self.entities.iter().map(|e| (canonical_name(&e.name), e.id)).collect();
    }

    pub fn entities(&self) -> &[EntityNode] {
        &self.entities
    }

    pub fn edges(&self) -> &[FactEdge] {
        &self.edges
    }

    pub fn edge(&self, id: EdgeId) -> Option<&FactEdge> {
        self.edges.get(id)
    }

    pub fn entity_by_name(&self, name: &str) -> Option<&EntityNode> {
        self.by_name.get(&canonical_name(name)).map(|&i| &self.entities[i])
    }

    pub fn is_exclusive(&self, predicate: &str) -> bool {
        self.exclusive_predicates.iter().any(|p| p == predicate)
    }

    fn upsert_entity(&mut self, e: NewEntity) -> EntityId {
        let key = canonical_name(&e.name);
        if let Some(&id) = self.by_name.get(&key) {
            return id;
        }
        let id = self.entities.len();
        self.entities.push(EntityNode {
            id,
            name: e.name.split_whitespace().collect::<Vec<_>>().join(" "),
            embedding: e.embedding,
            created_at: e.created_at,
        });
        self.by_name.insert(key, id);
        id
    }

    /// Merge entities by canonical name, then append edges. For exclusive
    /// predicates, a new fact invalidates every live fact with the same
    /// subject and predicate but a different object, at the new fact's
    /// creation instant. Dangling references fail before any mutation.
    pub fn upsert(&mut self, entities: Vec<NewEntity>, edges: Vec<NewEdge>) -> Result<Vec<EdgeId>, StoreError> {
        let known: std::collections::HashSet<String> = entities
            .iter()
            .map(|e| canonical_name(&e.name))
            .chain(self.by_name.keys().cloned())
            .collect();
        for e in &edges {
            for end in [&e.subject, &e.object] {
                if !known.contains(&canonical_name(end)) {
                    return Err(StoreError::UnknownEntity(end.clone()));
                }
            }
        }
        for e in entities {
            self.upsert_entity(e);
        }
        let mut ids = Vec::with_capacity(edges.len());
        for e in edges {
            let subject = self.by_name[&canonical_name(&e.subject)];
            let object = self.by_name[&canonical_name(&e.object)];
            let predicate = canonical_predicate(&e.predicate);
            if self.is_exclusive(&predicate) {
                let at = e.created_at;
                let stale: Vec<EdgeId> = self
                    .edges
                    .iter()
                    .filter(|x| {
                        x.subject == subject
                            && x.predicate == predicate
                            && x.object != object
                            && x.is_live_at(at)
                    })
                    .map(|x| x.id)
                    .collect();
                for id in stale {
                    self.invalidate(id, at)?;
                }
            }
            let id = self.edges.len();
            self.edges.push(FactEdge {
                id,
                subject,
                predicate,
                object,
                fact: e.fact,
                created_at: e.created_at,
                invalid_at: None,
            });
            ids.push(id);
        }
        Ok(ids)
    }

    /// Edges live at `t`, in creation order.
    pub fn edges_live_at(&self, t: DateTime<Utc>) -> Vec<&FactEdge> {
        self.edges.iter().filter(|e| e.is_live_at(t)).collect()
    }

    /// Stamp `invalid_at = t`. The first stamp sticks: repeated calls never
    /// move it, so `invalid_at` is never unset and never decreases.
    pub fn invalidate(&mut self, id: EdgeId, t: DateTime<Utc>) -> Result<bool, StoreError> {
        let edge = self.edges.get_mut(id).ok_or(StoreError::UnknownEdge(id))?;
        if t < edge.created_at {
            return Err(StoreError::InvalidArgument(format!(
                "invalidation instant precedes creation of edge {id}"
            )));
        }
        if edge.invalid_at.is_some() {
            return Ok(false);
        }
        edge.invalid_at = Some(t);
        Ok(true)
    }
}
