//! JSON-Lines item manifests.
//!
//! One object per line; field names follow [`ItemRecord`]. Optional fields
//! may be omitted and take their defaults (`condition = none`,
//! `class_label = unknown`).

use std::collections::HashMap;
use std::fmt;
use std::fs;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Split {
    Query,
    Gallery,
    Train,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Kind {
    Base,
    Refinement,
    Text,
}

/// Generation prompt condition of a refinement.
///
/// `A`: occluding pedestrians, `B`: sunset light, `C`: rain and low visibility.
#[derive(
    Debug, Clone, Copy, Default, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize,
)]
pub enum Condition {
    #[default]
    #[serde(rename = "none")]
    None,
    A,
    B,
    C,
}

impl Condition {
    pub const REFINEMENTS: [Condition; 3] = [Condition::A, Condition::B, Condition::C];

    pub fn as_str(self) -> &'static str {
        match self {
            Condition::None => "none",
            Condition::A => "A",
            Condition::B => "B",
            Condition::C => "C",
        }
    }
}

impl fmt::Display for Condition {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ClassLabel {
    TrashBin,
    WasteContainer,
    Crosswalk,
    #[default]
    Unknown,
}

fn is_default<T: Default + PartialEq>(value: &T) -> bool {
    *value == T::default()
}

/// Metadata for one image-derived vector.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ItemRecord {
    pub item_id: String,
    pub identity_id: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub camera_id: Option<String>,
    pub split: Split,
    pub kind: Kind,
    #[serde(default, skip_serializing_if = "is_default")]
    pub condition: Condition,
    #[serde(default)]
    pub class_label: ClassLabel,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub caption: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub base_item_id: Option<String>,
    /// Low-quality sample; never used as a query-expansion neighbor.
    #[serde(default, skip_serializing_if = "is_default")]
    pub excluded: bool,
}

impl ItemRecord {
    pub fn base(item_id: impl Into<String>, identity_id: impl Into<String>, split: Split) -> Self {
        ItemRecord {
            item_id: item_id.into(),
            identity_id: identity_id.into(),
            camera_id: None,
            split,
            kind: Kind::Base,
            condition: Condition::None,
            class_label: ClassLabel::Unknown,
            caption: None,
            base_item_id: None,
            excluded: false,
        }
    }

    /// A record derived from `base` (refinement or text description).
    pub fn derived(
        item_id: impl Into<String>,
        base: &ItemRecord,
        kind: Kind,
        condition: Condition,
    ) -> Self {
        ItemRecord {
            item_id: item_id.into(),
            identity_id: base.identity_id.clone(),
            camera_id: base.camera_id.clone(),
            split: base.split,
            kind,
            condition,
            class_label: base.class_label,
            caption: None,
            base_item_id: Some(base.item_id.clone()),
            excluded: false,
        }
    }
}

/// A validated list of records with an id index.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Manifest {
    records: Vec<ItemRecord>,
    index: HashMap<String, usize>,
}

impl Manifest {
    /// Validates every `ItemRecord` invariant and builds the id index.
    pub fn new(records: Vec<ItemRecord>) -> Result<Self> {
        let mut index = HashMap::with_capacity(records.len());
        for (i, rec) in records.iter().enumerate() {
            if rec.item_id.is_empty() {
                return Err(Error::Constraint(format!("record {i}: empty item_id")));
            }
            if index.insert(rec.item_id.clone(), i).is_some() {
                return Err(Error::Constraint(format!(
                    "duplicate item_id '{}'",
                    rec.item_id
                )));
            }
        }
        for rec in &records {
            validate_record(rec, &records, &index)?;
        }
        Ok(Manifest { records, index })
    }

    pub fn records(&self) -> &[ItemRecord] {
        &self.records
    }

    pub fn into_records(self) -> Vec<ItemRecord> {
        self.records
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn get(&self, item_id: &str) -> Option<&ItemRecord> {
        self.index.get(item_id).map(|&i| &self.records[i])
    }

    pub fn contains(&self, item_id: &str) -> bool {
        self.index.contains_key(item_id)
    }

    /// Records of one kind/condition, in manifest order. This is the row order
    /// of the vector file holding that channel.
    pub fn channel(&self, kind: Kind, condition: Condition) -> Vec<ItemRecord> {
        self.records
            .iter()
            .filter(|r| r.kind == kind && r.condition == condition)
            .cloned()
            .collect()
    }

    /// Records derived from `base_item_id` with the given kind/condition.
    pub fn derived_from<'a>(
        &'a self,
        base_item_id: &'a str,
        kind: Kind,
        condition: Condition,
    ) -> impl Iterator<Item = &'a ItemRecord> + 'a {
        self.records.iter().filter(move |r| {
            r.kind == kind
                && r.condition == condition
                && r.base_item_id.as_deref() == Some(base_item_id)
        })
    }
}

fn validate_record(
    rec: &ItemRecord,
    records: &[ItemRecord],
    index: &HashMap<String, usize>,
) -> Result<()> {
    let id = &rec.item_id;
    match rec.kind {
        Kind::Base => {
            if rec.condition != Condition::None {
                return Err(Error::Constraint(format!(
                    "item '{id}': base record must have condition none, found {}",
                    rec.condition
                )));
            }
            if rec.base_item_id.is_some() {
                return Err(Error::Constraint(format!(
                    "item '{id}': base record must not set base_item_id"
                )));
            }
        }
        Kind::Refinement | Kind::Text => {
            let kind = if rec.kind == Kind::Refinement {
                "refinement"
            } else {
                "text"
            };
            let Some(base_id) = rec.base_item_id.as_deref() else {
                return Err(Error::Constraint(format!(
                    "item '{id}': {kind} record requires field base_item_id"
                )));
            };
            if rec.kind == Kind::Refinement && rec.condition == Condition::None {
                return Err(Error::Constraint(format!(
                    "item '{id}': refinement record requires condition A, B or C"
                )));
            }
            if rec.kind == Kind::Text && rec.condition != Condition::None {
                return Err(Error::Constraint(format!(
                    "item '{id}': text record must have condition none, found {}",
                    rec.condition
                )));
            }
            let Some(&bi) = index.get(base_id) else {
                return Err(Error::Constraint(format!(
                    "item '{id}': base_item_id '{base_id}' does not resolve"
                )));
            };
            let base = &records[bi];
            if base.kind != Kind::Base {
                return Err(Error::Constraint(format!(
                    "item '{id}': base_item_id '{base_id}' is not a base record"
                )));
            }
            if base.split != rec.split {
                return Err(Error::Constraint(format!(
                    "item '{id}': base_item_id '{base_id}' is in a different split"
                )));
            }
        }
    }
    Ok(())
}

/// Parses manifest text. `origin` is only used in error messages.
pub fn parse_manifest(text: &str, origin: &Path) -> Result<Manifest> {
    let mut records = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let rec: ItemRecord = serde_json::from_str(line).map_err(|e| Error::Parse {
            path: origin.to_path_buf(),
            line: i + 1,
            message: e.to_string(),
        })?;
        records.push(rec);
    }
    Manifest::new(records)
}

pub fn load_manifest(path: impl AsRef<Path>) -> Result<Manifest> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_manifest(&text, path)
}

pub fn manifest_to_string(records: &[ItemRecord]) -> String {
    let mut out = String::new();
    for rec in records {
        // ItemRecord has only string/enum/bool fields; serialization cannot fail.
        out.push_str(&serde_json::to_string(rec).expect("ItemRecord serializes"));
        out.push('\n');
    }
    out
}

pub fn save_manifest(records: &[ItemRecord], path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let mut file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    file.write_all(manifest_to_string(records).as_bytes())
        .map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn parse(text: &str) -> Result<Manifest> {
        parse_manifest(text, Path::new("test.jsonl"))
    }

    #[test]
    fn minimal_record_defaults_condition() {
        let m = parse(r#"{"item_id":"q1","identity_id":"7","split":"query","kind":"base","class_label":"waste_container"}"#)
            .unwrap();
        assert_eq!(m.len(), 1);
        let r = &m.records()[0];
        assert_eq!(r.condition, Condition::None);
        assert_eq!(r.class_label, ClassLabel::WasteContainer);
        assert_eq!(r.camera_id, None);
    }

    #[test]
    fn refinement_links_to_base() {
        let text = concat!(
            r#"{"item_id":"q1","identity_id":"7","split":"query","kind":"base","class_label":"waste_container"}"#,
            "\n",
            r#"{"item_id":"q1_A","identity_id":"7","split":"query","kind":"refinement","condition":"A","base_item_id":"q1"}"#,
            "\n"
        );
        let m = parse(text).unwrap();
        assert_eq!(m.len(), 2);
        assert_eq!(m.records()[1].base_item_id.as_deref(), Some("q1"));
        assert_eq!(m.get("q1_A").unwrap().condition, Condition::A);
        assert_eq!(
            m.derived_from("q1", Kind::Refinement, Condition::A).count(),
            1
        );
    }

    #[test]
    fn refinement_without_base_names_field() {
        let text = r#"{"item_id":"r","identity_id":"7","split":"query","kind":"refinement","condition":"A"}"#;
        let err = parse(text).unwrap_err();
        assert_eq!(err.category(), "constraint");
        assert!(err.to_string().contains("base_item_id"), "{err}");
    }

    #[test]
    fn malformed_line_reports_line_number() {
        let text = concat!(
            r#"{"item_id":"q1","identity_id":"7","split":"query","kind":"base"}"#,
            "\n",
            "{not json\n"
        );
        match parse(text).unwrap_err() {
            Error::Parse { line, .. } => assert_eq!(line, 2),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn rejects_duplicates_and_inconsistent_records() {
        let dup = concat!(
            r#"{"item_id":"a","identity_id":"1","split":"query","kind":"base"}"#,
            "\n",
            r#"{"item_id":"a","identity_id":"2","split":"gallery","kind":"base"}"#
        );
        assert!(parse(dup)
            .unwrap_err()
            .to_string()
            .contains("duplicate item_id 'a'"));

        let base_with_cond =
            r#"{"item_id":"a","identity_id":"1","split":"query","kind":"base","condition":"B"}"#;
        assert_eq!(parse(base_with_cond).unwrap_err().category(), "constraint");

        let dangling = r#"{"item_id":"t","identity_id":"1","split":"query","kind":"text","base_item_id":"zz"}"#;
        assert!(parse(dangling)
            .unwrap_err()
            .to_string()
            .contains("does not resolve"));

        let cross_split = concat!(
            r#"{"item_id":"a","identity_id":"1","split":"query","kind":"base"}"#,
            "\n",
            r#"{"item_id":"a_A","identity_id":"1","split":"gallery","kind":"refinement","condition":"A","base_item_id":"a"}"#
        );
        assert!(parse(cross_split)
            .unwrap_err()
            .to_string()
            .contains("different split"));
    }

    #[test]
    fn validation_is_deterministic() {
        let bad = r#"{"item_id":"r","identity_id":"7","split":"query","kind":"text","condition":"C","base_item_id":"x"}"#;
        let a = parse(bad).unwrap_err().to_string();
        let b = parse(bad).unwrap_err().to_string();
        assert_eq!(a, b);
    }
}
