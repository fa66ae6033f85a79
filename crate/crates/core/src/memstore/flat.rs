use std::collections::HashMap;

use chrono::{DateTime, Utc};
use super::types::{EntryId, EntryStatus, MemoryEntry};
use super::StoreError;

/// Predicate for [`FlatStore::scan`]. All set fields must match.
#[derive(Debug, Clone, Default)]
pub struct ScanFilter {
    pub status: Option<EntryStatus>,
    pub tag: Option<String>,
    /// Half-open `[from, to)` on `created_at`.
    pub created: Option<(DateTime<Utc>, DateTime<Utc>)>,
}

impl ScanFilter {
    pub fn valid() -> Self {
        Self { status: Some(EntryStatus::Valid), ..Default::default() }
    }

    fn matches(&self, e: &MemoryEntry) -> bool {
        self.status.is_none_or(|s| e.status == s)
            && self.tag.as_ref().is_none_or(|t| e.tags.contains(t))
            && self.created.is_none_or(|(from, to)| e.created_at >= from && e.created_at < to)
    }
}

/// Append-only homogeneous store. Entries are never removed; deletion is
/// a status change.
#[derive(Debug, Clone, Default)]
pub struct FlatStore {
    entries: Vec<MemoryEntry>,
    index: HashMap<EntryId, usize>,
}

impl FlatStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn from_entries(entries: Vec<MemoryEntry>) -> Self {
        let index = entries.iter().enumerate().map(|(i, e)| (e.id, i)).collect();
        Self { entries, index }
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Assigns the next id and appends.
    pub fn append(&mut self, mut entry: MemoryEntry) -> EntryId {
        let id = EntryId(self.entries.len() as u64);
        entry.id = id;
        self.index.insert(id, self.entries.len());
        self.entries.push(entry);
        id
    }

    pub fn scan(&self, filter: &ScanFilter) -> Vec<&MemoryEntry> {
        self.entries.iter().filter(|e| filter.matches(e)).collect()
    }

    pub fn entries(&self) -> &[MemoryEntry] {
        &self.entries
    }

    pub fn get(&self, id: EntryId) -> Option<&MemoryEntry> {
        self.index.get(&id).map(|&i| &self.entries[i])
    }

    pub fn get_mut(&mut self, id: EntryId) -> Result<&mut MemoryEntry, StoreError> {
        let i = *self.index.get(&id).ok_or(StoreError::UnknownEntry(id))?;
        Ok(&mut self.entries[i])
    }

    /// valid → invalid. Returns whether the status changed.
    pub fn invalidate(&mut self, id: EntryId) -> Result<bool, StoreError> {
        let e = self.get_mut(id)?;
        let changed = e.is_valid();
        e.status = EntryStatus::Invalid;
        Ok(changed)
    }

    /// Symmetric link.
    pub fn link(&mut self, a: EntryId, b: EntryId) -> Result<(), StoreError> {
        if a == b {
            return Ok(());
        }
        self.get_mut(b)?;
        self.get_mut(a)?.links.insert(b);
        self.get_mut(b)?.links.insert(a);
        Ok(())
    }

    pub fn links_are_symmetric(&self) -> bool {
        self.entries.iter().all(|e| {
            e.links.iter().all(|other| self.get(*other).is_some_and(|o| o.links.contains(&e.id)))
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gateway::Embedding;
    use chrono::TimeZone;

    fn entry(content: &str, day: u32) -> MemoryEntry {
        let t = Utc.with_ymd_and_hms(2024, 1, day, 0, 0, 0).unwrap();
        MemoryEntry::new(content, Embedding::zeros(2), t)
    }

    #[test]
    fn scan_preserves_order_and_filters() {
        let mut s = FlatStore::new();
        let a = s.append(entry("A", 1));
        let b = s.append(entry("B", 2));
        let all: Vec<_> = s.scan(&ScanFilter::default()).iter().map(|e| e.id).collect();
        assert_eq!(all, vec![a, b]);

        assert!(s.invalidate(b).unwrap());
        assert!(!s.invalidate(b).unwrap());
        let valid: Vec<_> = s.scan(&ScanFilter::valid()).iter().map(|e| e.id).collect();
        assert_eq!(valid, vec![a]);

        let t = Utc.with_ymd_and_hms(2030, 1, 1, 0, 0, 0).unwrap();
        let f = ScanFilter { created: Some((t, t + chrono::Duration::days(1))), ..Default::default() };
        assert!(s.scan(&f).is_empty());
    }

    #[test]
    fn links_are_mutual() {
        let mut s = FlatStore::new();
        let a = s.append(entry("A", 1));
        let b = s.append(entry("B", 1));
        s.link(a, b).unwrap();
        assert!(s.get(a).unwrap().links.contains(&b));
        assert!(s.get(b).unwrap().links.contains(&a));
        assert!(s.links_are_symmetric());
        assert!(s.link(a, EntryId(99)).is_err());
        assert!(s.get(a).unwrap().links.len() == 1);
    }
}
