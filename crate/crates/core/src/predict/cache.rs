use std::collections::HashMap;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Mutex;

use crate::types::Value;

/// Identifies one prediction: the same model, prompt and input tuple always
/// map to the same output tuple within a query.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct CacheKey {
    pub model: String,
    pub template_hash: u64,
    pub inputs: Vec<Value>,
}

#[derive(Debug, Default)]
pub struct DedupCache {
    entries: Mutex<HashMap<CacheKey, Vec<Value>>>,
    hits: AtomicU64,
    misses: AtomicU64,
}

impl DedupCache {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn get(&self, key: &CacheKey) -> Option<Vec<Value>> {
        let found = self.entries.lock().expect("cache lock").get(key).cloned();
        match found {
            Some(_) => self.hits.fetch_add(1, Ordering::Relaxed),
            None => self.misses.fetch_add(1, Ordering::Relaxed),
        };
        found
    }

    pub fn insert(&self, key: CacheKey, outputs: Vec<Value>) {
        self.entries.lock().expect("cache lock").insert(key, outputs);
    }

    pub fn len(&self) -> usize {
        self.entries.lock().expect("cache lock").len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn hits(&self) -> u64 {
        self.hits.load(Ordering::Relaxed)
    }

    pub fn misses(&self) -> u64 {
        self.misses.load(Ordering::Relaxed)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn hit_after_insert() {
        let c = DedupCache::new();
        let k = CacheKey { model: "m".into(), template_hash: 1, inputs: vec![Value::Varchar("Titanic".into())] };
        assert!(c.get(&k).is_none());
        c.insert(k.clone(), vec![Value::Varchar("English".into())]);
        assert_eq!(c.get(&k), Some(vec![Value::Varchar("English".into())]));
        assert_eq!((c.hits(), c.misses()), (1, 1));
        let other = CacheKey { template_hash: 2, ..k };
        assert!(c.get(&other).is_none());
    }
}
