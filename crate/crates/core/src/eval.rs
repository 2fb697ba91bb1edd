//! Masked average precision and bucketed mAP.

use std::collections::{BTreeMap, HashMap};
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scoring::ScoreMatrix;
use crate::vocab::{Bucket, PromptType};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "i8", into = "i8")]
pub enum Label {
    Positive,
    Negative,
    Unknown,
}

impl TryFrom<i8> for Label {
    type Error = String;

    fn try_from(v: i8) -> std::result::Result<Self, String> {
        match v {
            1 => Ok(Label::Positive),
            -1 => Ok(Label::Negative),
            0 => Ok(Label::Unknown),
            other => Err(format!("label must be +1, -1 or 0, got {other}")),
        }
    }
}

impl From<Label> for i8 {
    fn from(l: Label) -> i8 {
        match l {
            Label::Positive => 1,
            Label::Negative => -1,
            Label::Unknown => 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnnotatedAttribute {
    pub name: String,
    #[serde(rename = "type")]
    pub prompt_type: PromptType,
    pub bucket: Bucket,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnnotatedInstance {
    pub id: String,
    pub labels: Vec<Label>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnnotationSet {
    pub attributes: Vec<AnnotatedAttribute>,
    pub instances: Vec<AnnotatedInstance>,
}

impl AnnotationSet {
    pub fn new(attributes: Vec<AnnotatedAttribute>, instances: Vec<AnnotatedInstance>) -> Result<Self> {
        let set = AnnotationSet { attributes, instances };
        set.validate()?;
        Ok(set)
    }

    fn validate(&self) -> Result<()> {
        let mut ids = std::collections::HashSet::new();
        for inst in &self.instances {
            if inst.labels.len() != self.attributes.len() {
                return Err(Error::ShapeMismatch(format!(
                    "instance {} has {} labels for {} attributes",
                    inst.id,
                    inst.labels.len(),
                    self.attributes.len()
                )));
            }
            if !ids.insert(inst.id.as_str()) {
                return Err(Error::DuplicateId(inst.id.clone()));
            }
        }
        let mut names = std::collections::HashSet::new();
        for a in &self.attributes {
            if !names.insert(a.name.as_str()) {
                return Err(Error::DuplicateId(a.name.clone()));
            }
        }
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        if !path.exists() {
            return Err(Error::MissingPath(path.to_path_buf()));
        }
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let set: AnnotationSet = serde_json::from_str(&text).map_err(|e| Error::json(path, e))?;
        set.validate()?;
        Ok(set)
    }

    pub fn attribute_names(&self) -> Vec<String> {
        self.attributes.iter().map(|a| a.name.clone()).collect()
    }

    pub fn instance_ids(&self) -> Vec<String> {
        self.instances.iter().map(|i| i.id.clone()).collect()
    }

    /// Labels of one attribute, in instance order.
    pub fn column(&self, attribute: usize) -> Vec<Label> {
        self.instances.iter().map(|i| i.labels[attribute]).collect()
    }
}

/// Mean over positive ranks of the precision of the prefix ending there.
///
/// Unknown labels are dropped before ranking. Scores sort descending with
/// ties broken by id ascending, so the result never depends on input order.
///
/// ```
/// use comca::eval::{average_precision, Label::*};
/// let ap = average_precision(&[0.9, 0.5, 0.1], &[Positive, Unknown, Negative], &["a", "b", "c"]).unwrap();
/// assert_eq!(ap, 1.0);
/// ```
pub fn average_precision<S: AsRef<str>>(scores: &[f64], labels: &[Label], ids: &[S]) -> Result<f64> {
    assert_eq!(scores.len(), labels.len());
    assert_eq!(scores.len(), ids.len());
    let mut kept: Vec<(f64, &str, bool)> = scores
        .iter()
        .zip(labels)
        .zip(ids)
        .filter(|((_, l), _)| **l != Label::Unknown)
        .map(|((s, l), id)| (*s, id.as_ref(), *l == Label::Positive))
        .collect();
    if !kept.iter().any(|k| k.2) {
        return Err(Error::NoPositives);
    }
    kept.sort_by(|a, b| b.0.total_cmp(&a.0).then_with(|| a.1.cmp(b.1)));
    let mut hits = 0usize;
    let mut sum = 0.0;
    for (rank, (_, _, positive)) in kept.iter().enumerate() {
        if *positive {
            hits += 1;
            sum += hits as f64 / (rank + 1) as f64;
        }
    }
    Ok(sum / hits as f64)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttributeResult {
    pub name: String,
    pub bucket: Bucket,
    /// `None` when the attribute had no positives.
    pub ap: Option<f64>,
    pub num_pos: usize,
    pub num_neg: usize,
    pub num_unknown: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalResult {
    pub map: f64,
    /// Bucket name to mAP; buckets with no evaluated attribute are absent.
    pub per_bucket: BTreeMap<String, f64>,
    pub per_attribute: Vec<AttributeResult>,
    pub skipped_attributes: Vec<String>,
}

fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

/// Per-attribute AP and its means. Scores are matched to annotations by
/// instance id and attribute name; extra score rows or columns are ignored.
pub fn evaluate(scores: &ScoreMatrix, ann: &AnnotationSet) -> Result<EvalResult> {
    let row_of: HashMap<&str, usize> = scores
        .instance_ids
        .iter()
        .enumerate()
        .map(|(i, id)| (id.as_str(), i))
        .collect();
    let rows: Vec<usize> = ann
        .instances
        .iter()
        .map(|inst| {
            row_of
                .get(inst.id.as_str())
                .copied()
                .ok_or_else(|| Error::Misalignment(format!("no scores for instance {}", inst.id)))
        })
        .collect::<Result<_>>()?;
    let cols: Vec<usize> = ann
        .attributes
        .iter()
        .map(|a| {
            scores
                .attribute_names
                .iter()
                .position(|n| *n == a.name)
                .ok_or_else(|| Error::Misalignment(format!("no scores for attribute {}", a.name)))
        })
        .collect::<Result<_>>()?;
    let ids = ann.instance_ids();

    let per_attribute: Vec<AttributeResult> = (0..ann.attributes.len())
        .into_par_iter()
        .map(|a| {
            let labels = ann.column(a);
            let column: Vec<f64> = rows.iter().map(|&r| scores.values.get(r, cols[a])).collect();
            let count = |l: Label| labels.iter().filter(|x| **x == l).count();
            let ap = match average_precision(&column, &labels, &ids) {
                Ok(ap) => Some(ap),
                Err(Error::NoPositives) => None,
                Err(e) => return Err(e),
            };
            Ok(AttributeResult {
                name: ann.attributes[a].name.clone(),
                bucket: ann.attributes[a].bucket,
                ap,
                num_pos: count(Label::Positive),
                num_neg: count(Label::Negative),
                num_unknown: count(Label::Unknown),
            })
        })
        .collect::<Result<_>>()?;

    let skipped_attributes: Vec<String> = per_attribute
        .iter()
        .filter(|r| r.ap.is_none())
        .map(|r| r.name.clone())
        .collect();
    for name in &skipped_attributes {
        log::warn!("attribute {name} has no positives and is left out of mAP");
    }
    let aps: Vec<f64> = per_attribute.iter().filter_map(|r| r.ap).collect();
    if aps.is_empty() {
        return Err(Error::AllAttributesSkipped);
    }
    let mut per_bucket = BTreeMap::new();
    for bucket in [Bucket::Head, Bucket::Medium, Bucket::Tail] {
        let in_bucket: Vec<f64> = per_attribute
            .iter()
            .filter(|r| r.bucket == bucket)
            .filter_map(|r| r.ap)
            .collect();
        if !in_bucket.is_empty() {
            per_bucket.insert(bucket.as_str().to_string(), mean(&in_bucket));
        }
    }
    Ok(EvalResult {
        map: mean(&aps),
        per_bucket,
        per_attribute,
        skipped_attributes,
    })
}

impl EvalResult {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("eval result serializes")
    }

    /// One row per attribute: name, bucket, AP (empty when skipped), counts.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("name,bucket,ap,num_pos,num_neg,num_unknown\n");
        for r in &self.per_attribute {
            let ap = r.ap.map(|v| v.to_string()).unwrap_or_default();
            out.push_str(&format!(
                "{},{},{},{},{},{}\n",
                csv_field(&r.name),
                r.bucket.as_str(),
                ap,
                r.num_pos,
                r.num_neg,
                r.num_unknown
            ));
        }
        out
    }
}

fn csv_field(s: &str) -> String {
    if s.contains([',', '"', '\n']) {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_string()
    }
}
