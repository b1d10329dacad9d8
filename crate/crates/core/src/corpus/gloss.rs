use std::collections::BTreeMap;
use std::path::Path;

use super::data::EmotionLabelSet;
use super::tokenizer::tokenize;
use crate::error::{Error, Result};

/// Adjective and most-frequent-sense gloss of one emotion label.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct GlossEntry {
    pub label: String,
    pub adjective: String,
    pub gloss: Vec<String>,
}

/// Label → gloss lookup parsed from `label<TAB>adjective<TAB>gloss` lines.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct GlossTable {
    entries: BTreeMap<String, GlossEntry>,
}

const BUILTIN: &str = include_str!("../../data/gloss.tsv");

impl GlossTable {
    /// The table shipped with the crate, covering the MELD/DailyDialog and
    /// IEMOCAP label sets.
    pub fn builtin() -> Self {
        Self::parse(BUILTIN).expect("bundled gloss table is valid")
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::parse(&std::fs::read_to_string(path)?)
    }

    pub fn parse(tsv: &str) -> Result<Self> {
        let mut entries = BTreeMap::new();
        for (i, line) in tsv.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let cols: Vec<&str> = line.split('\t').collect();
            if cols.len() != 3 {
                return Err(Error::Parse {
                    line: i + 1,
                    msg: format!("expected 3 tab-separated columns, got {}", cols.len()),
                });
            }
            let gloss = tokenize(cols[2]);
            if gloss.is_empty() {
                return Err(Error::Parse {
                    line: i + 1,
                    msg: format!("empty gloss for {}", cols[0]),
                });
            }
            let adjective = cols[1].trim().to_lowercase();
            if adjective.is_empty() || adjective.contains(char::is_whitespace) {
                return Err(Error::Parse {
                    line: i + 1,
                    msg: format!("adjective for {} must be one word", cols[0]),
                });
            }
            let label = cols[0].trim().to_string();
            if entries.contains_key(&label) {
                return Err(Error::Parse {
                    line: i + 1,
                    msg: format!("duplicate entry for {label}"),
                });
            }
            entries.insert(
                label.clone(),
                GlossEntry {
                    label,
                    adjective,
                    gloss,
                },
            );
        }
        Ok(Self { entries })
    }

    pub fn get(&self, label: &str) -> Option<&GlossEntry> {
        self.entries.get(label)
    }

    pub fn entries(&self) -> impl Iterator<Item = &GlossEntry> {
        self.entries.values()
    }

    /// Entries in label-index order; every label must be covered.
    pub fn for_labels(&self, labels: &EmotionLabelSet) -> Result<Vec<GlossEntry>> {
        labels
            .labels()
            .iter()
            .map(|l| {
                self.get(l)
                    .cloned()
                    .ok_or_else(|| Error::Config(format!("no gloss for label {l}")))
            })
            .collect()
    }

    /// Per label, the gloss words that occur in no other label's gloss.
    pub fn distinctive_words(&self, labels: &EmotionLabelSet) -> Result<Vec<Vec<String>>> {
        let entries = self.for_labels(labels)?;
        let mut owners: BTreeMap<&str, usize> = BTreeMap::new();
        for e in &entries {
            let mut seen: Vec<&str> = e.gloss.iter().map(String::as_str).collect();
            seen.sort_unstable();
            seen.dedup();
            for w in seen {
                *owners.entry(w).or_default() += 1;
            }
        }
        Ok(entries
            .iter()
            .map(|e| {
                let mut words: Vec<String> = e
                    .gloss
                    .iter()
                    .filter(|w| owners[w.as_str()] == 1 && w.chars().all(char::is_alphanumeric))
                    .cloned()
                    .collect();
                words.dedup();
                words
            })
            .collect())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn builtin_covers_both_label_sets() {
        let t = GlossTable::builtin();
        assert_eq!(t.for_labels(&EmotionLabelSet::meld()).unwrap().len(), 7);
        assert_eq!(t.for_labels(&EmotionLabelSet::iemocap()).unwrap().len(), 6);
        assert_eq!(t.get("sadness").unwrap().adjective, "sad");
        assert!(t.entries().all(|e| !e.gloss.is_empty()));
    }

    #[test]
    fn every_label_has_a_distinctive_word() {
        let t = GlossTable::builtin();
        for set in [EmotionLabelSet::meld(), EmotionLabelSet::iemocap()] {
            let words = t.distinctive_words(&set).unwrap();
            for (i, ws) in words.iter().enumerate() {
                assert!(!ws.is_empty(), "{}", set.name(i));
                for (j, other) in t.for_labels(&set).unwrap().iter().enumerate() {
                    if i != j {
                        assert!(ws.iter().all(|w| !other.gloss.contains(w)));
                    }
                }
            }
        }
    }

    #[test]
    fn rejects_bad_rows() {
        assert!(GlossTable::parse("anger\tangry").is_err());
        assert!(GlossTable::parse("anger\tangry\t  ").is_err());
        assert!(GlossTable::parse("anger\tvery angry\tx").is_err());
        assert!(GlossTable::parse("a\tb\tc\na\tb\tc").is_err());
    }
}
