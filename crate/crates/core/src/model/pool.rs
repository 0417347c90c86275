use std::collections::{BTreeMap, HashSet};

use super::Trajectory;
use crate::error::{Error, Result};
use crate::retriever::TkRecord;

/// Successful trajectories available as demonstrations, plus the per-demo
/// transferable-knowledge cache keyed by trajectory id.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct DemoPool {
    entries: Vec<Trajectory>,
    tk_cache: BTreeMap<String, TkRecord>,
}

/// Counts reported when a pool is filtered out of raw runs.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize)]
pub struct AdmissionStats {
    pub total: usize,
    pub kept: usize,
    pub duplicates: usize,
}

impl AdmissionStats {
    pub fn dropped(&self) -> usize {
        self.total - self.kept
    }
}

impl DemoPool {
    pub fn new(entries: Vec<Trajectory>) -> Result<Self> {
        let mut seen = HashSet::new();
        for t in &entries {
            admit(t)?;
            if !seen.insert(t.id.as_str()) {
                return Err(Error::DuplicateId(t.id.clone()));
            }
        }
        Ok(DemoPool { entries, tk_cache: BTreeMap::new() })
    }

    /// Keeps successful, well-formed runs and drops content-identical
    /// duplicates (first occurrence wins).
    pub fn from_runs(runs: impl IntoIterator<Item = Trajectory>) -> (Self, AdmissionStats) {
        let mut seen = HashSet::new();
        let mut entries = Vec::new();
        let mut total = 0;
        let mut duplicates = 0;
        for t in runs {
            total += 1;
            if admit(&t).is_err() {
                continue;
            }
            if !seen.insert(t.id.clone()) {
                duplicates += 1;
                continue;
            }
            entries.push(t);
        }
        let kept = entries.len();
        (DemoPool { entries, tk_cache: BTreeMap::new() }, AdmissionStats { total, kept, duplicates })
    }

    pub fn entries(&self) -> &[Trajectory] {
        &self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn get(&self, index: usize) -> Option<&Trajectory> {
        self.entries.get(index)
    }

    pub fn tk_cache(&self) -> &BTreeMap<String, TkRecord> {
        &self.tk_cache
    }

    pub fn tk(&self, id: &str) -> Option<&TkRecord> {
        self.tk_cache.get(id)
    }

    /// Installs a cache record. Records for ids outside the pool are ignored.
    pub fn insert_tk(&mut self, record: TkRecord) {
        if self.entries.iter().any(|t| t.id == record.source_id) {
            self.tk_cache.insert(record.source_id.clone(), record);
        }
    }

    pub fn clear_tk_cache(&mut self) {
        self.tk_cache.clear();
    }

    /// True when every entry has a cache record produced under `fingerprint`.
    pub fn is_warm(&self, fingerprint: &str) -> bool {
        self.entries.iter().all(|t| self.tk_cache.get(&t.id).is_some_and(|r| r.retriever_fingerprint == fingerprint))
    }

    /// Cached records in pool order, or `None` if any entry is missing.
    pub fn cached_records(&self) -> Option<Vec<&TkRecord>> {
        self.entries.iter().map(|t| self.tk_cache.get(&t.id)).collect()
    }

    /// Sub-pool of the entries whose index satisfies `keep`, cache included.
    pub fn restrict(&self, mut keep: impl FnMut(usize) -> bool) -> DemoPool {
        let entries: Vec<Trajectory> =
            self.entries.iter().enumerate().filter(|(i, _)| keep(*i)).map(|(_, t)| t.clone()).collect();
        let tk_cache =
            entries.iter().filter_map(|t| self.tk_cache.get(&t.id).map(|r| (t.id.clone(), r.clone()))).collect();
        DemoPool { entries, tk_cache }
    }
}

fn admit(t: &Trajectory) -> Result<()> {
    if t.steps.is_empty() {
        return Err(Error::InvalidInput(format!("trajectory {} has no steps", t.id)));
    }
    if !t.success {
        return Err(Error::UnsuccessfulEntry(t.id.clone()));
    }
    if !t.last_action().is_some_and(|a| a.is_finish()) {
        return Err(Error::InvalidInput(format!("successful trajectory {} does not end in Finish", t.id)));
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{Action, Step};

    fn run(task: &str, success: bool) -> Trajectory {
        let steps = vec![
            Step::new(None, Action::search(task).unwrap(), "para"),
            Step::new(None, Action::finish("x").unwrap(), "done"),
        ];
        Trajectory::binary(task, steps, success).unwrap()
    }

    #[test]
    fn rejects_failures_and_duplicates() {
        assert!(matches!(DemoPool::new(vec![run("a", false)]), Err(Error::UnsuccessfulEntry(_))));
        assert!(matches!(DemoPool::new(vec![run("a", true), run("a", true)]), Err(Error::DuplicateId(_))));
    }

    #[test]
    fn from_runs_filters() {
        let runs = vec![run("a", true), run("b", false), run("c", true), run("a", true), run("d", false)];
        let (pool, stats) = DemoPool::from_runs(runs);
        assert_eq!(pool.len(), 2);
        assert_eq!(stats, AdmissionStats { total: 5, kept: 2, duplicates: 1 });
        assert_eq!(stats.dropped(), 3);
    }
}
