// SPDX-License-Identifier: Apache-2.0

//! Hash-equivalence bookkeeping: taskhash → unihash, learned from outhashes.

use alloc::collections::BTreeMap;
use alloc::string::String;
use alloc::vec::Vec;

use crate::digest::Digest;

/// `(method, hash, unihash)`
pub type Mapping = (String, Digest, Digest);

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct EquivalenceStore {
    by_taskhash: BTreeMap<(String, Digest), Digest>,
    by_outhash: BTreeMap<(String, Digest), Digest>,
}

/// Outcome of a report.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Reported {
    pub unihash: Digest,
    /// Whether the store changed (and so needs persisting).
    pub changed: bool,
}

impl EquivalenceStore {
    pub fn new() -> Self {
        Self::default()
    }

    /// Records that `taskhash` produced `outhash` and returns its unihash.
    ///
    /// A taskhash keeps the unihash it was first given. Otherwise the first
    /// taskhash to report an outhash defines the unihash for every later
    /// taskhash reporting the same outhash.
    pub fn report(&mut self, method: &str, taskhash: Digest, outhash: Digest) -> Reported {
        let tkey = (String::from(method), taskhash);
        let okey = (String::from(method), outhash);
        if let Some(&unihash) = self.by_taskhash.get(&tkey) {
            let changed = !self.by_outhash.contains_key(&okey);
            if changed {
                self.by_outhash.insert(okey, unihash);
            }
            return Reported { unihash, changed };
        }
        let unihash = *self.by_outhash.entry(okey).or_insert(taskhash);
        self.by_taskhash.insert(tkey, unihash);
        Reported { unihash, changed: true }
    }

    pub fn query(&self, method: &str, taskhash: &Digest) -> Option<Digest> {
        self.by_taskhash.get(&(String::from(method), *taskhash)).copied()
    }

    pub fn len(&self) -> usize {
        self.by_taskhash.len()
    }

    pub fn is_empty(&self) -> bool {
        self.by_taskhash.is_empty()
    }

    /// Sorted `(method, taskhash, unihash)` and `(method, outhash, unihash)` tables.
    pub fn dump(&self) -> (Vec<Mapping>, Vec<Mapping>) {
        let flat = |m: &BTreeMap<(String, Digest), Digest>| {
            m.iter().map(|((method, k), v)| (method.clone(), *k, *v)).collect()
        };
        (flat(&self.by_taskhash), flat(&self.by_outhash))
    }
}
