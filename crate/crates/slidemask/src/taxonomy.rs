//! The five-class labelling taxonomy.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// One of the five admissible region classes. `Landslide` is the sole
/// positive class for image-level verdicts.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum ClassLabel {
    Landslide,
    Vegetation,
    WaterBody,
    Building,
    Background,
}

impl ClassLabel {
    pub const ALL: [ClassLabel; 5] = [
        ClassLabel::Landslide,
        ClassLabel::Vegetation,
        ClassLabel::WaterBody,
        ClassLabel::Building,
        ClassLabel::Background,
    ];

    /// The four classes the detector predicts; background is implicit.
    pub const FOREGROUND: [ClassLabel; 4] = [
        ClassLabel::Landslide,
        ClassLabel::Vegetation,
        ClassLabel::WaterBody,
        ClassLabel::Building,
    ];

    pub fn name(self) -> &'static str {
        match self {
            ClassLabel::Landslide => "Landslide",
            ClassLabel::Vegetation => "Vegetation",
            ClassLabel::WaterBody => "WaterBody",
            ClassLabel::Building => "Building",
            ClassLabel::Background => "Background",
        }
    }

    /// Parse a class name. Matching is case-insensitive and internal
    /// whitespace collapses, so "Water body" and "water  body" both map to
    /// `WaterBody`. Trailing plural forms from annotation tools ("Buildings")
    /// are accepted.
    pub fn parse(raw: &str) -> Result<ClassLabel> {
        let folded: String = raw
            .chars()
            .filter(|c| !c.is_whitespace() && *c != '_' && *c != '-')
            .flat_map(|c| c.to_lowercase())
            .collect();
        match folded.as_str() {
            "landslide" | "landslides" => Ok(ClassLabel::Landslide),
            "vegetation" => Ok(ClassLabel::Vegetation),
            "waterbody" | "waterbodies" | "water" => Ok(ClassLabel::WaterBody),
            "building" | "buildings" => Ok(ClassLabel::Building),
            "background" => Ok(ClassLabel::Background),
            _ => Err(Error::Taxonomy(raw.to_string())),
        }
    }

    /// Index into the detector's class head: 0 is implicit background,
    /// 1..=4 are the foreground classes. `Background` has no head slot.
    pub fn head_index(self) -> Option<usize> {
        ClassLabel::FOREGROUND.iter().position(|c| *c == self).map(|i| i + 1)
    }

    pub fn from_head_index(index: usize) -> Option<ClassLabel> {
        if index == 0 {
            return None;
        }
        ClassLabel::FOREGROUND.get(index - 1).copied()
    }
}

impl std::fmt::Display for ClassLabel {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_all_canonical_names() {
        for label in ClassLabel::ALL {
            assert_eq!(ClassLabel::parse(label.name()).unwrap(), label);
        }
    }

    #[test]
    fn whitespace_and_case_are_normalized() {
        assert_eq!(ClassLabel::parse("Water body").unwrap(), ClassLabel::WaterBody);
        assert_eq!(ClassLabel::parse("water  BODY").unwrap(), ClassLabel::WaterBody);
        assert_eq!(ClassLabel::parse("buildings").unwrap(), ClassLabel::Building);
    }

    #[test]
    fn unknown_name_is_a_taxonomy_error() {
        let err = ClassLabel::parse("Road").unwrap_err();
        assert!(matches!(err, Error::Taxonomy(s) if s == "Road"));
    }

    #[test]
    fn head_indices_round_trip() {
        for label in ClassLabel::FOREGROUND {
            let idx = label.head_index().unwrap();
            assert_eq!(ClassLabel::from_head_index(idx), Some(label));
        }
        assert_eq!(ClassLabel::Background.head_index(), None);
        assert_eq!(ClassLabel::from_head_index(0), None);
    }
}
