//! Target attributes and objects.
//!
//! Vocabulary files are JSON:
//!
//! ```json
//! {
//!   "attributes": [{"name": "red", "type": "is", "synonyms": ["crimson"], "bucket": "head"}],
//!   "objects": ["car", "apple"]
//! }
//! ```
//!
//! `type`, `synonyms` and `bucket` may be omitted (defaults: `is`, none, `unknown`).

use std::collections::HashSet;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Separator used in `{attribute}|{object}` query ids.
pub const PAIR_SEPARATOR: char = '|';

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PromptType {
    #[default]
    Is,
    Has,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Bucket {
    Head,
    Medium,
    Tail,
    #[default]
    Unknown,
}

impl Bucket {
    pub fn as_str(self) -> &'static str {
        match self {
            Bucket::Head => "head",
            Bucket::Medium => "medium",
            Bucket::Tail => "tail",
            Bucket::Unknown => "unknown",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttributeEntry {
    pub name: String,
    #[serde(rename = "type", default)]
    pub prompt_type: PromptType,
    #[serde(default)]
    pub synonyms: Vec<String>,
    #[serde(default)]
    pub bucket: Bucket,
}

impl AttributeEntry {
    pub fn new(name: impl Into<String>) -> Self {
        AttributeEntry {
            name: name.into(),
            prompt_type: PromptType::Is,
            synonyms: Vec::new(),
            bucket: Bucket::Unknown,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Vocabulary {
    attributes: Vec<AttributeEntry>,
    objects: Vec<String>,
}

#[derive(Deserialize)]
struct VocabularyFile {
    attributes: Vec<AttributeEntry>,
    objects: Vec<String>,
}

impl Vocabulary {
    pub fn new(attributes: Vec<AttributeEntry>, objects: Vec<String>) -> Result<Self> {
        if attributes.is_empty() || objects.is_empty() {
            return Err(Error::EmptyVocabulary);
        }
        check_names(attributes.iter().map(|a| a.name.as_str()), "attribute")?;
        check_names(objects.iter().map(String::as_str), "object")?;
        Ok(Vocabulary { attributes, objects })
    }

    /// Shorthand for tests and examples: plain `is`-type attributes.
    pub fn simple(attributes: &[&str], objects: &[&str]) -> Result<Self> {
        Self::new(
            attributes.iter().map(|a| AttributeEntry::new(*a)).collect(),
            objects.iter().map(|o| o.to_string()).collect(),
        )
    }

    pub fn load(path: &Path) -> Result<Self> {
        if !path.exists() {
            return Err(Error::MissingPath(path.to_path_buf()));
        }
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let file: VocabularyFile = serde_json::from_str(&text).map_err(|e| Error::json(path, e))?;
        Self::new(file.attributes, file.objects)
    }

    pub fn attributes(&self) -> &[AttributeEntry] {
        &self.attributes
    }

    pub fn objects(&self) -> &[String] {
        &self.objects
    }

    pub fn attribute_names(&self) -> Vec<String> {
        self.attributes.iter().map(|a| a.name.clone()).collect()
    }

    pub fn attribute_index(&self, name: &str) -> Option<usize> {
        self.attributes.iter().position(|a| a.name == name)
    }

    pub fn object_index(&self, name: &str) -> Option<usize> {
        self.objects.iter().position(|o| o == name)
    }
}

/// Id of the precomputed retrieval query for an attribute–object pair.
pub fn pair_id(attribute: &str, object: &str) -> String {
    format!("{attribute}{PAIR_SEPARATOR}{object}")
}

fn check_names<'a>(names: impl Iterator<Item = &'a str>, what: &str) -> Result<()> {
    let mut seen = HashSet::new();
    for name in names {
        if name.trim().is_empty() {
            return Err(Error::InvalidVocabulary(format!("empty {what} name")));
        }
        if name.contains(PAIR_SEPARATOR) {
            return Err(Error::InvalidVocabulary(format!(
                "{what} {name:?} contains the reserved separator '{PAIR_SEPARATOR}'"
            )));
        }
        if !seen.insert(name.to_lowercase()) {
            return Err(Error::InvalidVocabulary(format!("duplicate {what} {name:?}")));
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn case_insensitive_duplicates_rejected() {
        let err = Vocabulary::simple(&["Red", "red"], &["car"]).unwrap_err();
        assert!(matches!(err, Error::InvalidVocabulary(_)));
        let err = Vocabulary::simple(&["red"], &["Car", "car"]).unwrap_err();
        assert!(matches!(err, Error::InvalidVocabulary(_)));
    }

    #[test]
    fn empty_sides_rejected() {
        assert!(matches!(Vocabulary::simple(&[], &["car"]), Err(Error::EmptyVocabulary)));
        assert!(matches!(Vocabulary::simple(&["red"], &[]), Err(Error::EmptyVocabulary)));
    }

    #[test]
    fn separator_reserved() {
        assert!(Vocabulary::simple(&["red|blue"], &["car"]).is_err());
    }

    #[test]
    fn parses_file_shape() {
        let v: VocabularyFile = serde_json::from_str(
            r#"{"attributes": [{"name": "red"}, {"name": "fur", "type": "has", "bucket": "tail"}],
                "objects": ["dog"]}"#,
        )
        .unwrap();
        assert_eq!(v.attributes[1].prompt_type, PromptType::Has);
        assert_eq!(v.attributes[1].bucket, Bucket::Tail);
        assert_eq!(v.attributes[0].bucket, Bucket::Unknown);
    }
}
