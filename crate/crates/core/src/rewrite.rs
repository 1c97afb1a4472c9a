//! Resolves each utterance's rewritten form from a precomputed map, or from
//! the identity transform.

use std::collections::{BTreeMap, BTreeSet};

use thiserror::Error;

use crate::types::Dialogue;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum RewriteError {
    #[error("dialogue `{id}`: no rewrite for utterance {index}")]
    MissingRewrite { id: String, index: usize },
    #[error("rewrite map references unknown dialogue `{0}`")]
    UnknownDialogue(String),
    #[error("dialogue `{id}`: rewrite targets utterance {index} but dialogue has {n}")]
    IndexOutOfRange { id: String, index: usize, n: usize },
    #[error("duplicate rewrite for ({id}, {index})")]
    DuplicateKey { id: String, index: usize },
    #[error("rewrite for ({id}, {index}) is empty")]
    EmptyText { id: String, index: usize },
}

/// `(dialogue id, 1-based utterance index) -> rewritten text`.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct RewriteMap {
    entries: BTreeMap<String, BTreeMap<usize, String>>,
}

impl RewriteMap {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, id: impl Into<String>, index: usize, text: impl Into<String>) -> Result<(), RewriteError> {
        let id = id.into();
        let text = text.into();
        if text.trim().is_empty() {
            return Err(RewriteError::EmptyText { id, index });
        }
        let slot = self.entries.entry(id.clone()).or_default();
        if slot.contains_key(&index) {
            return Err(RewriteError::DuplicateKey { id, index });
        }
        slot.insert(index, text);
        Ok(())
    }

    pub fn get(&self, id: &str, index: usize) -> Option<&str> {
        self.entries.get(id)?.get(&index).map(String::as_str)
    }

    pub fn len(&self) -> usize {
        self.entries.values().map(BTreeMap::len).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn dialogue_ids(&self) -> impl Iterator<Item = &str> {
        self.entries.keys().map(String::as_str)
    }

    /// Entries in `(id, index)` order.
    pub fn iter(&self) -> impl Iterator<Item = (&str, usize, &str)> {
        self.entries
            .iter()
            .flat_map(|(id, m)| m.iter().map(move |(i, t)| (id.as_str(), *i, t.as_str())))
    }

    /// Fails if any entry points at a dialogue or utterance not in `known`.
    pub fn check_against<'a>(&self, known: impl IntoIterator<Item = &'a Dialogue>) -> Result<(), RewriteError> {
        let lens: BTreeMap<&str, usize> = known.into_iter().map(|d| (d.id.as_str(), d.len())).collect();
        for (id, idx) in &self.entries {
            let n = *lens
                .get(id.as_str())
                .ok_or_else(|| RewriteError::UnknownDialogue(id.clone()))?;
            if let Some((&index, _)) = idx.iter().find(|(i, _)| **i == 0 || **i > n) {
                return Err(RewriteError::IndexOutOfRange {
                    id: id.clone(),
                    index,
                    n,
                });
            }
        }
        Ok(())
    }
}

/// Sets every utterance's rewrite to its original text.
pub fn apply_identity(mut d: Dialogue) -> Dialogue {
    for u in &mut d.utterances {
        u.rewritten = Some(u.text.clone());
    }
    d
}

/// Fills rewrites from `m`. Utterances without an entry keep their original
/// text unless `strict`, which makes that an error.
///
/// A dialogue that has no entries at all is fine when not strict.
pub fn apply_map(mut d: Dialogue, m: &RewriteMap, strict: bool) -> Result<Dialogue, RewriteError> {
    let empty = BTreeMap::new();
    let entries = m.entries.get(&d.id).unwrap_or(&empty);
    let n = d.len();
    if let Some(&index) = entries.keys().find(|&&i| i == 0 || i > n) {
        return Err(RewriteError::IndexOutOfRange {
            id: d.id.clone(),
            index,
            n,
        });
    }
    for u in &mut d.utterances {
        match entries.get(&u.index) {
            Some(t) => u.rewritten = Some(t.clone()),
            None if strict => {
                return Err(RewriteError::MissingRewrite {
                    id: d.id.clone(),
                    index: u.index,
                })
            }
            None => u.rewritten = Some(u.text.clone()),
        }
    }
    Ok(d)
}

/// Applies `m` across a corpus; entries for dialogues not present are an
/// error.
pub fn apply_map_all(dialogues: Vec<Dialogue>, m: &RewriteMap, strict: bool) -> Result<Vec<Dialogue>, RewriteError> {
    let ids: BTreeSet<&str> = dialogues.iter().map(|d| d.id.as_str()).collect();
    if let Some(unknown) = m.dialogue_ids().find(|id| !ids.contains(id)) {
        return Err(RewriteError::UnknownDialogue(unknown.to_string()));
    }
    dialogues.into_iter().map(|d| apply_map(d, m, strict)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn shopping() -> Dialogue {
        Dialogue::from_texts(
            "nav",
            [
                "I need to find a shopping center.",
                "The Stanford Shopping Center at 773 Alger Dr is 3 miles away in no traffic. Would you like directions there?",
                "Yes please.",
                "I sent all the info on the screen, please drive carefully!",
            ],
        )
        .with_gold(vec![])
        .unwrap()
    }

    #[test]
    fn identity_is_idempotent() {
        let d = shopping();
        let once = apply_identity(d.clone());
        assert!(once
            .utterances
            .iter()
            .all(|u| u.rewritten.as_deref() == Some(&u.text[..])));
        assert_eq!(apply_identity(once.clone()), once);
        assert_eq!(once.len(), d.len());
        assert_eq!(once.gold, d.gold);
    }

    #[test]
    fn map_fills_and_falls_back() {
        let mut m = RewriteMap::new();
        m.insert(
            "nav",
            3,
            "Yes, I would like directions to the Stanford Shopping Center at 773 Alger Dr, please.",
        )
        .unwrap();
        let out = apply_map(shopping(), &m, false).unwrap();
        assert_eq!(
            out.utterances[2].resolved_text(),
            "Yes, I would like directions to the Stanford Shopping Center at 773 Alger Dr, please."
        );
        assert_eq!(out.utterances[0].resolved_text(), out.utterances[0].text);
        assert!(matches!(
            apply_map(shopping(), &m, true),
            Err(RewriteError::MissingRewrite { index: 1, .. })
        ));
    }

    #[test]
    fn empty_map() {
        let m = RewriteMap::new();
        assert_eq!(apply_map(shopping(), &m, false).unwrap(), apply_identity(shopping()));
        assert!(matches!(
            apply_map(shopping(), &m, true),
            Err(RewriteError::MissingRewrite { .. })
        ));
    }

    #[test]
    fn bad_entries() {
        let mut m = RewriteMap::new();
        m.insert("nav", 1, "x").unwrap();
        assert!(matches!(
            m.insert("nav", 1, "y"),
            Err(RewriteError::DuplicateKey { .. })
        ));
        assert!(matches!(m.insert("nav", 2, "  "), Err(RewriteError::EmptyText { .. })));
        m.insert("nav", 9, "z").unwrap();
        assert!(matches!(
            apply_map(shopping(), &m, false),
            Err(RewriteError::IndexOutOfRange { index: 9, .. })
        ));
        let mut other = RewriteMap::new();
        other.insert("ghost", 1, "boo").unwrap();
        assert_eq!(
            apply_map_all(vec![shopping()], &other, false),
            Err(RewriteError::UnknownDialogue("ghost".into()))
        );
    }

    #[test]
    fn insertion_order_irrelevant() {
        let mut a = RewriteMap::new();
        a.insert("nav", 3, "three").unwrap();
        a.insert("nav", 1, "one").unwrap();
        let mut b = RewriteMap::new();
        b.insert("nav", 1, "one").unwrap();
        b.insert("nav", 3, "three").unwrap();
        assert_eq!(a, b);
        assert_eq!(apply_map(shopping(), &a, false), apply_map(shopping(), &b, false));
    }
}
