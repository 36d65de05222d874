//! Clinical concept labels and the concept book mapping them to importance
//! tiers (1 = most important, 4 = least).

use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// A clinical concept name, e.g. "Cancer Stage" or "Comorbidities".
///
/// Labels are matched against the configured [`ConceptBook`]
/// case-insensitively; unknown labels fall back to the "Others" tier.
#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ConceptLabel(pub String);

impl ConceptLabel {
    pub fn new(name: impl Into<String>) -> Self {
        ConceptLabel(name.into())
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl fmt::Display for ConceptLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl From<&str> for ConceptLabel {
    fn from(s: &str) -> Self {
        ConceptLabel(s.to_string())
    }
}

/// The default concept book: ten concepts and their tiers.
pub const DEFAULT_CONCEPT_TIERS: [(&str, u8); 10] = [
    ("Cancer Type", 1),
    ("Cancer Subtype", 1),
    ("Cancer Stage", 1),
    ("Cancer Grade/Histology", 1),
    ("Genetic & Biologic Markers", 2),
    ("Lab/Imaging Criteria", 2),
    ("Prior treatment/surgery", 2),
    ("Comorbidities", 3),
    ("Functional Status", 4),
    ("Others", 4),
];

/// Tier assigned to concepts missing from the book.
pub const FALLBACK_TIER: u8 = 4;

#[derive(Debug, Error)]
pub enum ConceptError {
    #[error("concept book is empty")]
    EmptyBook,
    #[error("concept {name:?} has tier {tier}, expected 1..=4")]
    InvalidTier { name: String, tier: u8 },
    #[error("duplicate concept name {0:?} (names are case-insensitive)")]
    DuplicateName(String),
}

/// Mapping from concept names to tiers, extensible via configuration.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConceptBook {
    entries: Vec<(String, u8)>,
}

impl Default for ConceptBook {
    fn default() -> Self {
        ConceptBook {
            entries: DEFAULT_CONCEPT_TIERS
                .iter()
                .map(|(name, tier)| (name.to_string(), *tier))
                .collect(),
        }
    }
}

impl ConceptBook {
    /// Builds a book from explicit entries, validating tiers and uniqueness.
    pub fn from_entries(entries: Vec<(String, u8)>) -> Result<Self, ConceptError> {
        if entries.is_empty() {
            return Err(ConceptError::EmptyBook);
        }
        let mut seen = Vec::new();
        for (name, tier) in &entries {
            if !(1..=4).contains(tier) {
                return Err(ConceptError::InvalidTier {
                    name: name.clone(),
                    tier: *tier,
                });
            }
            let lower = name.to_lowercase();
            if seen.contains(&lower) {
                return Err(ConceptError::DuplicateName(name.clone()));
            }
            seen.push(lower);
        }
        Ok(ConceptBook { entries })
    }

    pub fn entries(&self) -> &[(String, u8)] {
        &self.entries
    }

    /// Tier for a known concept, or `None` if the label is not in the book.
    pub fn tier_of(&self, concept: &ConceptLabel) -> Option<u8> {
        self.entries
            .iter()
            .find(|(name, _)| name.eq_ignore_ascii_case(concept.as_str()))
            .map(|(_, tier)| *tier)
    }

    /// Tier for a concept, mapping unknown labels to the "Others" tier (4)
    /// with a warning.
    pub fn assign_tier(&self, concept: &ConceptLabel) -> u8 {
        match self.tier_of(concept) {
            Some(tier) => tier,
            None => {
                log::warn!(
                    "unknown concept {:?}; assigning fallback tier {}",
                    concept.as_str(),
                    FALLBACK_TIER
                );
                FALLBACK_TIER
            }
        }
    }
}

/// Tier lookup against the default concept book.
pub fn assign_tier(concept: &ConceptLabel) -> u8 {
    ConceptBook::default().assign_tier(concept)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_book_tiers() {
        let book = ConceptBook::default();
        for (name, tier) in DEFAULT_CONCEPT_TIERS {
            assert_eq!(book.assign_tier(&ConceptLabel::from(name)), tier, "{name}");
        }
    }

    #[test]
    fn lookup_is_case_insensitive() {
        let book = ConceptBook::default();
        assert_eq!(book.assign_tier(&ConceptLabel::from("cancer stage")), 1);
        assert_eq!(book.assign_tier(&ConceptLabel::from("COMORBIDITIES")), 3);
    }

    #[test]
    fn unknown_concept_falls_back_to_tier_4() {
        let book = ConceptBook::default();
        assert_eq!(book.assign_tier(&ConceptLabel::from("Zodiac Sign")), 4);
        assert_eq!(book.tier_of(&ConceptLabel::from("Zodiac Sign")), None);
    }

    #[test]
    fn default_book_covers_all_four_tiers() {
        let book = ConceptBook::default();
        for tier in 1..=4u8 {
            assert!(
                book.entries().iter().any(|(_, t)| *t == tier),
                "no concept maps to tier {tier}"
            );
        }
    }

    #[test]
    fn custom_book_validation() {
        assert!(matches!(
            ConceptBook::from_entries(vec![]),
            Err(ConceptError::EmptyBook)
        ));
        assert!(matches!(
            ConceptBook::from_entries(vec![("X".into(), 5)]),
            Err(ConceptError::InvalidTier { .. })
        ));
        assert!(matches!(
            ConceptBook::from_entries(vec![("X".into(), 1), ("x".into(), 2)]),
            Err(ConceptError::DuplicateName(_))
        ));
        let book =
            ConceptBook::from_entries(vec![("ECOG".into(), 4), ("Histology".into(), 1)]).unwrap();
        assert_eq!(book.assign_tier(&ConceptLabel::from("ecog")), 4);
    }
}
