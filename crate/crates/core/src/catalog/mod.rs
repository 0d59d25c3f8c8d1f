//! Photo catalog: taxonomy, manifest ingestion, train/val/test splits and
//! class weighting.
//!
//! The catalog is immutable after load. Split generation is a pure function
//! of `(catalog, seed)` so a run can be reproduced from its recorded seed.

mod manifest;
mod split;
mod weights;

pub use manifest::{load_manifest, save_catalog, load_catalog, RejectedRow, RejectionReport, MANIFEST_FIELDS};
pub use split::{derive_region_split, largest_remainder_counts, make_splits, SplitAssignment, SplitFractions};
pub use weights::{class_counts, class_weights, ClassWeightVector};

use std::collections::HashMap;
use std::fmt;
use std::path::PathBuf;

use serde::{Deserialize, Serialize};

use crate::error::{CoreError, Result};

/// Year bounds of the archive itself. Records outside are rejected at ingestion.
pub const ARCHIVE_YEAR_MIN: i32 = 1845;
pub const ARCHIVE_YEAR_MAX: i32 = 2009;

/// Year bounds of the dating task.
pub const DATING_YEAR_MIN: i32 = 1930;
pub const DATING_YEAR_MAX: i32 = 1999;

/// The nine socio-historical context classes.
///
/// The taxonomy is closed: labels outside this set are rejected at ingestion.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum ContextClass {
    Work,
    FreeTime,
    Motorization,
    Music,
    Fashion,
    Affectivity,
    Rites,
    School,
    Politics,
}

impl ContextClass {
    pub const COUNT: usize = 9;

    pub const ALL: [ContextClass; Self::COUNT] = [
        ContextClass::Work,
        ContextClass::FreeTime,
        ContextClass::Motorization,
        ContextClass::Music,
        ContextClass::Fashion,
        ContextClass::Affectivity,
        ContextClass::Rites,
        ContextClass::School,
        ContextClass::Politics,
    ];

    /// Stable class index used for heads, confusion matrices and weights.
    pub fn index(self) -> usize {
        Self::ALL.iter().position(|&c| c == self).expect("member of ALL")
    }

    pub fn from_index(index: usize) -> Option<ContextClass> {
        Self::ALL.get(index).copied()
    }

    /// Canonical label as it appears in manifests.
    pub fn label(self) -> &'static str {
        match self {
            ContextClass::Work => "Work",
            ContextClass::FreeTime => "Free-time",
            ContextClass::Motorization => "Motorization",
            ContextClass::Music => "Music",
            ContextClass::Fashion => "Fashion",
            ContextClass::Affectivity => "Affectivity",
            ContextClass::Rites => "Rites",
            ContextClass::School => "School",
            ContextClass::Politics => "Politics",
        }
    }

    /// What the class covers, for reports and docs.
    pub fn description(self) -> &'static str {
        match self {
            ContextClass::Work => "people in workplaces, work clothes and working environments",
            ContextClass::FreeTime => "leisure, holidays, travel and outdoor social activities",
            ContextClass::Motorization => "cars, motorcycles and other symbolic vehicles",
            ContextClass::Music => "musical instruments, concerts and musical events",
            ContextClass::Fashion => "clothing and traditions as social markers",
            ContextClass::Affectivity => "couples, friends and families bound by personal ties",
            ContextClass::Rites => "sacred and celebratory family events such as marriages",
            ContextClass::School => "schools, students and school paraphernalia",
            ContextClass::Politics => "political gatherings, demonstrations and events",
        }
    }

    /// Parse a manifest label. Case-insensitive; hyphens and spaces in
    /// "Free-time" are interchangeable.
    pub fn parse(label: &str) -> Option<ContextClass> {
        let norm: String = label
            .trim()
            .chars()
            .filter(|c| !matches!(c, '-' | ' ' | '_'))
            .collect::<String>()
            .to_ascii_lowercase();
        match norm.as_str() {
            "work" => Some(ContextClass::Work),
            "freetime" => Some(ContextClass::FreeTime),
            "motorization" => Some(ContextClass::Motorization),
            "music" => Some(ContextClass::Music),
            "fashion" => Some(ContextClass::Fashion),
            "affectivity" => Some(ContextClass::Affectivity),
            "rites" => Some(ContextClass::Rites),
            "school" => Some(ContextClass::School),
            "politics" => Some(ContextClass::Politics),
            _ => None,
        }
    }
}

impl fmt::Display for ContextClass {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

/// Which subset of the data a record belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Split {
    Train,
    Val,
    Test,
    Unassigned,
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            Split::Train => "train",
            Split::Val => "val",
            Split::Test => "test",
            Split::Unassigned => "unassigned",
        };
        f.write_str(s)
    }
}

/// One archive image with its metadata.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PhotoRecord {
    pub photo_id: String,
    pub image_ref: PathBuf,
    pub year: i32,
    pub context: ContextClass,
    pub description: String,
    pub city: String,
    pub nation: String,
    pub split: Split,
}

/// The classification task being run.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Task {
    Dating,
    Context,
}

impl Task {
    pub fn num_classes(self) -> usize {
        match self {
            Task::Dating => DatingLabelMap::default().num_classes(),
            Task::Context => ContextClass::COUNT,
        }
    }
}

impl fmt::Display for Task {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Task::Dating => f.write_str("dating"),
            Task::Context => f.write_str("context"),
        }
    }
}

/// Bijection between calendar years and dating-task class indices.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct DatingLabelMap {
    pub year_min: i32,
    pub year_max: i32,
}

impl Default for DatingLabelMap {
    fn default() -> Self {
        DatingLabelMap { year_min: DATING_YEAR_MIN, year_max: DATING_YEAR_MAX }
    }
}

impl DatingLabelMap {
    pub fn num_classes(&self) -> usize {
        (self.year_max - self.year_min + 1) as usize
    }

    pub fn index_of(&self, year: i32) -> Option<usize> {
        if year < self.year_min || year > self.year_max {
            None
        } else {
            Some((year - self.year_min) as usize)
        }
    }

    pub fn year_of(&self, index: usize) -> Option<i32> {
        if index < self.num_classes() {
            Some(self.year_min + index as i32)
        } else {
            None
        }
    }
}

/// Immutable collection of validated photo records.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Catalog {
    records: Vec<PhotoRecord>,
    #[serde(skip)]
    by_id: HashMap<String, usize>,
}

impl Catalog {
    /// Build a catalog from validated records. Fails on duplicate photo ids.
    pub fn new(records: Vec<PhotoRecord>) -> Result<Catalog> {
        let mut by_id = HashMap::with_capacity(records.len());
        for (i, r) in records.iter().enumerate() {
            if by_id.insert(r.photo_id.clone(), i).is_some() {
                return Err(CoreError::Catalog(format!("duplicate photo_id {:?}", r.photo_id)));
            }
        }
        Ok(Catalog { records, by_id })
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn records(&self) -> &[PhotoRecord] {
        &self.records
    }

    pub fn get(&self, photo_id: &str) -> Option<&PhotoRecord> {
        self.by_id.get(photo_id).map(|&i| &self.records[i])
    }

    pub fn contains(&self, photo_id: &str) -> bool {
        self.by_id.contains_key(photo_id)
    }

    /// Keep only records usable for the dating task (1930..=1999).
    ///
    /// The context task uses the unfiltered catalog.
    pub fn filter_for_dating(&self) -> Catalog {
        let records: Vec<PhotoRecord> = self
            .records
            .iter()
            .filter(|r| (DATING_YEAR_MIN..=DATING_YEAR_MAX).contains(&r.year))
            .cloned()
            .collect();
        Catalog::new(records).expect("ids unique in source catalog")
    }

    /// Return a copy with splits assigned from `assignment`.
    pub fn with_split(&self, assignment: &SplitAssignment) -> Result<Catalog> {
        let mut records = self.records.clone();
        for r in &mut records {
            r.split = assignment.split_of(&r.photo_id).ok_or_else(|| {
                CoreError::Catalog(format!("photo_id {:?} missing from split assignment", r.photo_id))
            })?;
        }
        Catalog::new(records)
    }

    /// Rebuild the id index after deserialization.
    pub(crate) fn reindex(&mut self) {
        self.by_id = self
            .records
            .iter()
            .enumerate()
            .map(|(i, r)| (r.photo_id.clone(), i))
            .collect();
    }

    /// Class index of a record under the given task.
    pub fn class_index(record: &PhotoRecord, task: Task, map: &DatingLabelMap) -> Result<usize> {
        match task {
            Task::Context => Ok(record.context.index()),
            Task::Dating => map.index_of(record.year).ok_or_else(|| {
                CoreError::Catalog(format!(
                    "photo {:?} year {} outside dating range {}..={}",
                    record.photo_id, record.year, map.year_min, map.year_max
                ))
            }),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    pub(crate) fn record(id: &str, year: i32, context: ContextClass) -> PhotoRecord {
        PhotoRecord {
            photo_id: id.to_string(),
            image_ref: PathBuf::from(format!("{id}.png")),
            year,
            context,
            description: String::new(),
            city: String::new(),
            nation: String::new(),
            split: Split::Unassigned,
        }
    }

    #[test]
    fn taxonomy_has_exactly_nine_members() {
        assert_eq!(ContextClass::ALL.len(), 9);
        for (i, c) in ContextClass::ALL.iter().enumerate() {
            assert_eq!(c.index(), i);
            assert_eq!(ContextClass::from_index(i), Some(*c));
        }
        assert_eq!(ContextClass::from_index(9), None);
    }

    #[test]
    fn context_labels_round_trip() {
        for c in ContextClass::ALL {
            assert_eq!(ContextClass::parse(c.label()), Some(c));
        }
        assert_eq!(ContextClass::parse("free time"), Some(ContextClass::FreeTime));
        assert_eq!(ContextClass::parse("FREETIME"), Some(ContextClass::FreeTime));
        assert_eq!(ContextClass::parse("Dance"), None);
    }

    #[test]
    fn dating_label_map_round_trip() {
        let map = DatingLabelMap::default();
        assert_eq!(map.num_classes(), 70);
        for i in 0..map.num_classes() {
            let year = map.year_of(i).unwrap();
            assert_eq!(map.index_of(year), Some(i));
        }
        assert_eq!(map.index_of(1929), None);
        assert_eq!(map.index_of(2000), None);
        assert_eq!(map.year_of(70), None);
    }

    #[test]
    fn filter_for_dating_keeps_inclusive_bounds() {
        let cat = Catalog::new(vec![
            record("a", 1929, ContextClass::Work),
            record("b", 1930, ContextClass::Work),
            record("c", 1999, ContextClass::Work),
            record("d", 2000, ContextClass::Work),
        ])
        .unwrap();
        let filtered = cat.filter_for_dating();
        let years: Vec<i32> = filtered.records().iter().map(|r| r.year).collect();
        assert_eq!(years, vec![1930, 1999]);
    }

    #[test]
    fn filter_for_dating_on_empty_catalog() {
        let cat = Catalog::new(vec![]).unwrap();
        assert!(cat.filter_for_dating().is_empty());
    }

    #[test]
    fn duplicate_ids_rejected() {
        let err = Catalog::new(vec![
            record("a", 1950, ContextClass::Work),
            record("a", 1951, ContextClass::Music),
        ]);
        assert!(err.is_err());
    }
}
