//! The stem taxonomy and the two separation vocabularies built on it.
//!
//! Source material ships as one directory per song with one subdirectory
//! per fine label (30 of them, grouped into 11 stem categories). A
//! `Vocabulary` projects fine labels onto the categories a model actually
//! separates: the coarse six (vocals, bass, drums, guitar, piano, others)
//! or the fine ten that split vocals by singer, guitar by timbre and piano
//! by instrument. Every label maps somewhere; anything outside a
//! vocabulary's named categories lands in `others`.

use std::collections::BTreeMap;

use crate::error::{bail_input, Result};

/// Top-level stem categories of the source hierarchy.
pub const STEM_CATEGORIES: [&str; 11] = [
    "vocals",
    "bass",
    "drums",
    "guitar",
    "piano",
    "other_keys",
    "percussion",
    "bowed_strings",
    "wind",
    "other_plucked",
    "other",
];

/// All fine labels as (label, stem category).
pub const FINE_LABELS: [(&str, &str); 30] = [
    ("lead_male_singer", "vocals"),
    ("lead_female_singer", "vocals"),
    ("background_vocals", "vocals"),
    ("other_vocals", "vocals"),
    ("bass_guitar", "bass"),
    ("bass_synthesizer", "bass"),
    ("contrabass", "bass"),
    ("kick_drum", "drums"),
    ("snare_drum", "drums"),
    ("toms", "drums"),
    ("cymbals", "drums"),
    ("full_acoustic_drumkit", "drums"),
    ("acoustic_guitar", "guitar"),
    ("clean_electric_guitar", "guitar"),
    ("distorted_electric_guitar", "guitar"),
    ("grand_piano", "piano"),
    ("electric_piano", "piano"),
    ("organ", "other_keys"),
    ("synth_lead", "other_keys"),
    ("synth_pad", "other_keys"),
    ("pitched_percussion", "percussion"),
    ("atonal_percussion", "percussion"),
    ("violin", "bowed_strings"),
    ("cello", "bowed_strings"),
    ("string_section", "bowed_strings"),
    ("brass", "wind"),
    ("reeds", "wind"),
    ("flutes", "wind"),
    ("banjo", "other_plucked"),
    ("mandolin", "other_plucked"),
];

/// Catch-all category name shared by both vocabularies.
pub const OTHERS: &str = "others";

/// Stem category for a known fine label.
pub fn stem_category(fine_label: &str) -> Option<&'static str> {
    FINE_LABELS.iter().find(|(l, _)| *l == fine_label).map(|(_, c)| *c)
}

/// An ordered set of output categories plus a total fine-label mapping.
#[derive(Debug, Clone)]
pub struct Vocabulary {
    name: String,
    categories: Vec<String>,
    by_fine: BTreeMap<&'static str, usize>,
}

impl Vocabulary {
    /// vocals, bass, drums, guitar, piano, others. Fine labels map through
    /// their stem category; the six non-core stem categories fall to others.
    pub fn coarse6() -> Self {
        let categories: Vec<String> =
            ["vocals", "bass", "drums", "guitar", "piano", OTHERS].map(String::from).to_vec();
        let mut by_fine = BTreeMap::new();
        for (label, stem) in FINE_LABELS {
            let idx = categories.iter().position(|c| c == stem).unwrap_or(categories.len() - 1);
            by_fine.insert(label, idx);
        }
        Vocabulary { name: "coarse6".into(), categories, by_fine }
    }

    /// The extended ten: vocals split by singer, guitar by timbre, piano by
    /// instrument; drums and bass stay whole; the rest (background vocals
    /// included) falls to others.
    pub fn fine10() -> Self {
        let categories: Vec<String> = [
            "drums",
            "bass",
            "male_vocals",
            "female_vocals",
            "acoustic_guitar",
            "clean_electric_guitar",
            "distorted_electric_guitar",
            "grand_piano",
            "electric_piano",
            OTHERS,
        ]
        .map(String::from)
        .to_vec();
        let direct: [(&str, &str); 5] = [
            ("lead_male_singer", "male_vocals"),
            ("lead_female_singer", "female_vocals"),
            ("acoustic_guitar", "acoustic_guitar"),
            ("clean_electric_guitar", "clean_electric_guitar"),
            ("distorted_electric_guitar", "distorted_electric_guitar"),
        ];
        let mut by_fine = BTreeMap::new();
        for (label, stem) in FINE_LABELS {
            let target = direct
                .iter()
                .find(|(l, _)| *l == label)
                .map(|(_, t)| *t)
                .or(match stem {
                    "drums" => Some("drums"),
                    "bass" => Some("bass"),
                    "piano" => match label {
                        "grand_piano" => Some("grand_piano"),
                        "electric_piano" => Some("electric_piano"),
                        _ => None,
                    },
                    _ => None,
                })
                .unwrap_or(OTHERS);
            let idx = categories.iter().position(|c| c == target).unwrap();
            by_fine.insert(label, idx);
        }
        Vocabulary { name: "fine10".into(), categories, by_fine }
    }

    pub fn by_name(name: &str) -> Result<Self> {
        match name {
            "coarse6" => Ok(Self::coarse6()),
            "fine10" => Ok(Self::fine10()),
            other => bail_input!("unknown vocabulary {other:?} (expected coarse6 or fine10)"),
        }
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    /// Output categories in their canonical order; `others` is always last.
    pub fn categories(&self) -> &[String] {
        &self.categories
    }

    pub fn len(&self) -> usize {
        self.categories.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    /// Categories that enter the aggregate score (everything but others).
    pub fn scored_categories(&self) -> &[String] {
        &self.categories[..self.categories.len() - 1]
    }

    /// "Avg5" for the coarse vocabulary, "Avg9" for the fine one.
    pub fn aggregate_name(&self) -> String {
        format!("Avg{}", self.categories.len() - 1)
    }

    pub fn index_of(&self, category: &str) -> Option<usize> {
        self.categories.iter().position(|c| c == category)
    }

    /// Where a fine label lands. Total: labels outside the taxonomy (or
    /// mapped nowhere specific) go to others.
    pub fn category_index_for(&self, fine_label: &str) -> usize {
        self.by_fine.get(fine_label).copied().unwrap_or(self.categories.len() - 1)
    }

    pub fn category_for(&self, fine_label: &str) -> &str {
        &self.categories[self.category_index_for(fine_label)]
    }
}
