use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

/// Spine id to parent shaft id, with explicit "unassigned" entries.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Assignment {
    links: BTreeMap<u64, Option<u64>>,
}

impl Assignment {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn link(&mut self, spine: u64, shaft: u64) {
        self.links.insert(spine, Some(shaft));
    }

    pub fn unassign(&mut self, spine: u64) {
        self.links.insert(spine, None);
    }

    pub fn remove(&mut self, spine: u64) {
        self.links.remove(&spine);
    }

    /// `Some(None)` for an explicit unassigned entry, `None` if the spine is unknown.
    pub fn get(&self, spine: u64) -> Option<Option<u64>> {
        self.links.get(&spine).copied()
    }

    pub fn shaft_of(&self, spine: u64) -> Option<u64> {
        self.links.get(&spine).copied().flatten()
    }

    pub fn len(&self) -> usize {
        self.links.len()
    }

    pub fn is_empty(&self) -> bool {
        self.links.is_empty()
    }

    pub fn spines(&self) -> impl Iterator<Item = u64> + '_ {
        self.links.keys().copied()
    }

    pub fn entries(&self) -> impl Iterator<Item = (u64, Option<u64>)> + '_ {
        self.links.iter().map(|(&s, &d)| (s, d))
    }

    /// Only the assigned pairs.
    pub fn links(&self) -> impl Iterator<Item = (u64, u64)> + '_ {
        self.links.iter().filter_map(|(&s, &d)| d.map(|d| (s, d)))
    }

    /// Entries of `other` override entries of `self`.
    pub fn merged(&self, other: &Assignment) -> Assignment {
        let mut out = self.clone();
        out.links.extend(other.links.iter().map(|(&s, &d)| (s, d)));
        out
    }

    /// CSV with header `spine_id,shaft_id`; unassigned spines have an empty shaft column.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("spine_id,shaft_id\n");
        for (s, d) in self.entries() {
            match d {
                Some(d) => out.push_str(&format!("{s},{d}\n")),
                None => out.push_str(&format!("{s},\n")),
            }
        }
        out
    }
}

impl FromIterator<(u64, u64)> for Assignment {
    fn from_iter<I: IntoIterator<Item = (u64, u64)>>(iter: I) -> Self {
        Self { links: iter.into_iter().map(|(s, d)| (s, Some(d))).collect() }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn json_uses_string_keys_and_nulls() {
        let mut a: Assignment = [(3, 10), (1, 11)].into_iter().collect();
        a.unassign(2);
        let text = serde_json::to_string(&a).unwrap();
        assert_eq!(text, r#"{"1":11,"2":null,"3":10}"#);
        let back: Assignment = serde_json::from_str(&text).unwrap();
        assert_eq!(back, a);
        assert_eq!(a.to_csv(), "spine_id,shaft_id\n1,11\n2,\n3,10\n");
        assert_eq!(a.links().count(), 2);
    }
}
