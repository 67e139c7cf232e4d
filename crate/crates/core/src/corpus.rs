//! Relation-extraction corpora: instance model, dataset loaders and the
//! labeled / unlabeled / test split construction.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt::Write as _;
use std::fs;
use std::path::Path;
use std::str::FromStr;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::error::{Error, Result};
use crate::rng::rng_for;

/// A contiguous entity mention, `start..end` over the sentence tokens.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Span {
    pub start: usize,
    pub end: usize,
    pub surface: String,
    pub kb_id: Option<String>,
}

impl Span {
    pub fn new(tokens: &[String], start: usize, end: usize, kb_id: Option<String>) -> Self {
        let surface = tokens[start..end.min(tokens.len())].join(" ");
        Span {
            start,
            end,
            surface,
            kb_id,
        }
    }

    pub fn len(&self) -> usize {
        self.end.saturating_sub(self.start)
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn contains(&self, index: usize) -> bool {
        (self.start..self.end).contains(&index)
    }

    fn overlaps(&self, other: &Span) -> bool {
        self.start < other.end && other.start < self.end
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RelationInstance {
    pub instance_id: String,
    pub tokens: Vec<String>,
    pub head: Span,
    pub tail: Span,
    pub relation_label: Option<String>,
    /// Per-token part-of-speech tags, when the source provides them.
    pub pos_tags: Option<Vec<String>>,
}

impl RelationInstance {
    /// Checks span bounds, non-emptiness and non-overlap.
    pub fn validate(&self) -> Result<()> {
        let bad = |reason: String| Error::InvalidInstance {
            id: self.instance_id.clone(),
            reason,
        };
        if self.tokens.is_empty() {
            return Err(bad("empty token list".into()));
        }
        for (name, span) in [("head", &self.head), ("tail", &self.tail)] {
            if span.is_empty() {
                return Err(bad(format!("{name} span is empty")));
            }
            if span.end > self.tokens.len() {
                return Err(bad(format!(
                    "{name} span {}..{} outside {} tokens",
                    span.start,
                    span.end,
                    self.tokens.len()
                )));
            }
        }
        if self.head.overlaps(&self.tail) {
            return Err(bad("head and tail spans overlap".into()));
        }
        if let Some(tags) = &self.pos_tags {
            if tags.len() != self.tokens.len() {
                return Err(bad(format!(
                    "{} pos tags for {} tokens",
                    tags.len(),
                    self.tokens.len()
                )));
            }
        }
        Ok(())
    }

    pub fn is_entity_token(&self, index: usize) -> bool {
        self.head.contains(index) || self.tail.contains(index)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum DatasetFormat {
    FewrelJson,
    TacredJson,
}

impl FromStr for DatasetFormat {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "fewrel-json" | "fewrel" => Ok(DatasetFormat::FewrelJson),
            "tacred-json" | "tacred" => Ok(DatasetFormat::TacredJson),
            other => Err(Error::Config(format!("unknown dataset format `{other}`"))),
        }
    }
}

/// Loads a dataset file. Instances come back sorted by `instance_id`.
pub fn load_dataset(path: &Path, format: DatasetFormat) -> Result<Vec<RelationInstance>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_dataset(&text, format)
}

pub fn parse_dataset(text: &str, format: DatasetFormat) -> Result<Vec<RelationInstance>> {
    if text.trim().is_empty() {
        return Ok(Vec::new());
    }
    let root: Value = serde_json::from_str(text).map_err(|e| Error::MalformedRecord {
        index: 0,
        field: "<document>".into(),
        reason: e.to_string(),
    })?;
    let mut instances = match format {
        DatasetFormat::FewrelJson => parse_fewrel(&root)?,
        DatasetFormat::TacredJson => parse_tacred(&root)?,
    };
    for inst in &instances {
        inst.validate()?;
    }
    instances.sort_by(|a, b| a.instance_id.cmp(&b.instance_id));
    let mut seen = BTreeSet::new();
    for inst in &instances {
        if !seen.insert(inst.instance_id.as_str()) {
            return Err(Error::InvalidInstance {
                id: inst.instance_id.clone(),
                reason: "duplicate instance id".into(),
            });
        }
    }
    Ok(instances)
}

fn malformed(index: usize, field: &str, reason: impl Into<String>) -> Error {
    Error::MalformedRecord {
        index,
        field: field.to_string(),
        reason: reason.into(),
    }
}

fn string_list(value: Option<&Value>, index: usize, field: &str) -> Result<Vec<String>> {
    let arr = value
        .and_then(Value::as_array)
        .ok_or_else(|| malformed(index, field, "expected a list of strings"))?;
    arr.iter()
        .map(|v| {
            v.as_str()
                .map(str::to_string)
                .ok_or_else(|| malformed(index, field, "expected a list of strings"))
        })
        .collect()
}

fn usize_field(record: &Value, index: usize, field: &str) -> Result<usize> {
    record
        .get(field)
        .and_then(Value::as_u64)
        .map(|v| v as usize)
        .ok_or_else(|| malformed(index, field, "expected a non-negative integer"))
}

/// `[surface, kb_id, [[positions...], ...]]`; the first mention is used.
fn fewrel_entity(
    value: Option<&Value>,
    tokens: &[String],
    index: usize,
    field: &str,
) -> Result<Span> {
    let arr = value
        .and_then(Value::as_array)
        .filter(|a| a.len() >= 3)
        .ok_or_else(|| malformed(index, field, "expected [surface, kb_id, [[positions]]]"))?;
    let kb_id = arr[1]
        .as_str()
        .map(str::to_string)
        .filter(|s| !s.is_empty());
    let positions: Vec<usize> = arr[2]
        .as_array()
        .and_then(|mentions| mentions.first())
        .and_then(Value::as_array)
        .ok_or_else(|| malformed(index, field, "missing mention positions"))?
        .iter()
        .map(|p| {
            p.as_u64()
                .map(|p| p as usize)
                .ok_or_else(|| malformed(index, field, "non-integer token position"))
        })
        .collect::<Result<_>>()?;
    let start = *positions
        .iter()
        .min()
        .ok_or_else(|| malformed(index, field, "empty mention"))?;
    let end = positions.iter().max().copied().unwrap_or(start) + 1;
    let surface = if end <= tokens.len() {
        tokens[start..end].join(" ")
    } else {
        arr[0].as_str().unwrap_or_default().to_string()
    };
    Ok(Span {
        start,
        end,
        surface,
        kb_id,
    })
}

fn parse_fewrel(root: &Value) -> Result<Vec<RelationInstance>> {
    let map = root
        .as_object()
        .ok_or_else(|| malformed(0, "<document>", "expected a map from relation to records"))?;
    let mut out = Vec::new();
    let mut index = 0usize;
    for (relation, records) in map {
        let records = records
            .as_array()
            .ok_or_else(|| malformed(index, relation, "expected a list of records"))?;
        for (local, record) in records.iter().enumerate() {
            let tokens = string_list(record.get("tokens"), index, "tokens")?;
            let head = fewrel_entity(record.get("h"), &tokens, index, "h")?;
            let tail = fewrel_entity(record.get("t"), &tokens, index, "t")?;
            let pos_tags = match record.get("pos") {
                Some(v) => Some(string_list(Some(v), index, "pos")?),
                None => None,
            };
            let instance_id = match record.get("id").and_then(Value::as_str) {
                Some(id) => id.to_string(),
                None => format!("{relation}#{local:05}"),
            };
            out.push(RelationInstance {
                instance_id,
                tokens,
                head,
                tail,
                relation_label: Some(relation.clone()),
                pos_tags,
            });
            index += 1;
        }
    }
    Ok(out)
}

fn parse_tacred(root: &Value) -> Result<Vec<RelationInstance>> {
    let records = root
        .as_array()
        .ok_or_else(|| malformed(0, "<document>", "expected a list of records"))?;
    records
        .iter()
        .enumerate()
        .map(|(index, record)| {
            let tokens = string_list(record.get("token"), index, "token")?;
            let instance_id = record
                .get("id")
                .and_then(Value::as_str)
                .map(str::to_string)
                .unwrap_or_else(|| format!("tacred#{index:06}"));
            let relation = record
                .get("relation")
                .and_then(Value::as_str)
                .ok_or_else(|| malformed(index, "relation", "expected a string"))?;
            let (ss, se) = (
                usize_field(record, index, "subj_start")?,
                usize_field(record, index, "subj_end")?,
            );
            let (os, oe) = (
                usize_field(record, index, "obj_start")?,
                usize_field(record, index, "obj_end")?,
            );
            if se < ss {
                return Err(malformed(index, "subj_end", "end before start"));
            }
            if oe < os {
                return Err(malformed(index, "obj_end", "end before start"));
            }
            let pos_tags = match record.get("stanford_pos") {
                Some(v) => Some(string_list(Some(v), index, "stanford_pos")?),
                None => None,
            };
            let span = |start: usize, end: usize| Span {
                start,
                end,
                surface: if end <= tokens.len() {
                    tokens[start..end].join(" ")
                } else {
                    String::new()
                },
                kb_id: None,
            };
            Ok(RelationInstance {
                head: span(ss, se + 1),
                tail: span(os, oe + 1),
                instance_id,
                relation_label: Some(relation.to_string()),
                pos_tags,
                tokens,
            })
        })
        .collect()
}

/// Reads `instance_id<TAB>tag tag ...` lines and attaches them to instances.
pub fn attach_pos_sidecar(instances: &mut [RelationInstance], path: &Path) -> Result<()> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut tags: HashMap<&str, Vec<String>> = HashMap::new();
    for (line_no, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let (id, rest) = line.split_once('\t').ok_or_else(|| Error::Lexicon {
            path: path.to_path_buf(),
            line: line_no + 1,
            reason: "expected `instance_id<TAB>tags`".into(),
        })?;
        tags.insert(id, rest.split_whitespace().map(str::to_string).collect());
    }
    for inst in instances.iter_mut() {
        if let Some(t) = tags.remove(inst.instance_id.as_str()) {
            inst.pos_tags = Some(t);
            inst.validate()?;
        }
    }
    Ok(())
}

/// How many instances of each relation go to each split.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum SizingPolicy {
    /// Fixed counts per relation; labeled only for pre-defined relations.
    PerRelation {
        test: usize,
        unlabeled: usize,
        labeled: usize,
    },
    /// `test_fraction` of each relation for test, then `unlabeled_fraction`
    /// of the remainder unlabeled and the rest labeled (pre-defined only).
    Fractional {
        test_fraction: f64,
        unlabeled_fraction: f64,
        drop_relations: Vec<String>,
    },
}

impl SizingPolicy {
    pub fn fewrel() -> Self {
        SizingPolicy::PerRelation {
            test: 100,
            unlabeled: 300,
            labeled: 300,
        }
    }

    pub fn tacred() -> Self {
        SizingPolicy::Fractional {
            test_fraction: 0.15,
            unlabeled_fraction: 0.5,
            drop_relations: vec!["no_relation".into(), "NA".into()],
        }
    }
}

impl FromStr for SizingPolicy {
    type Err = Error;

    /// `fewrel`, `tacred`, or `per-relation:TEST,UNLABELED,LABELED`.
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "fewrel" => Ok(SizingPolicy::fewrel()),
            "tacred" => Ok(SizingPolicy::tacred()),
            other => {
                let counts = other
                    .strip_prefix("per-relation:")
                    .ok_or_else(|| Error::Config(format!("unknown split policy `{other}`")))?;
                let parts: Vec<usize> = counts
                    .split(',')
                    .map(|p| p.trim().parse::<usize>())
                    .collect::<std::result::Result<_, _>>()
                    .map_err(|e| Error::Config(format!("split policy `{other}`: {e}")))?;
                match parts.as_slice() {
                    [test, unlabeled, labeled] => Ok(SizingPolicy::PerRelation {
                        test: *test,
                        unlabeled: *unlabeled,
                        labeled: *labeled,
                    }),
                    _ => Err(Error::Config(format!(
                        "split policy `{other}` needs three counts"
                    ))),
                }
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplitSpec {
    pub labeled_ids: BTreeSet<String>,
    pub unlabeled_ids: BTreeSet<String>,
    pub test_ids: BTreeSet<String>,
    pub predefined_relations: BTreeSet<String>,
    pub novel_relations: BTreeSet<String>,
    pub novel_ratio: f64,
}

impl SplitSpec {
    pub fn all_relations(&self) -> BTreeSet<String> {
        self.predefined_relations
            .union(&self.novel_relations)
            .cloned()
            .collect()
    }

    pub fn is_novel(&self, relation: &str) -> bool {
        self.novel_relations.contains(relation)
    }

    /// Plain-text manifest: section headers followed by one entry per line.
    pub fn to_manifest(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "novel_ratio\t{}", self.novel_ratio);
        let sections: [(&str, &BTreeSet<String>); 5] = [
            ("predefined_relations", &self.predefined_relations),
            ("novel_relations", &self.novel_relations),
            ("labeled", &self.labeled_ids),
            ("unlabeled", &self.unlabeled_ids),
            ("test", &self.test_ids),
        ];
        for (name, items) in sections {
            let _ = writeln!(out, "[{name}]");
            for item in items {
                let _ = writeln!(out, "{item}");
            }
        }
        out
    }

    pub fn from_manifest(text: &str) -> Result<Self> {
        let mut ratio = None;
        let mut sections: BTreeMap<String, BTreeSet<String>> = BTreeMap::new();
        let mut current: Option<String> = None;
        for line in text.lines() {
            if line.is_empty() {
                continue;
            }
            if let Some(r) = line.strip_prefix("novel_ratio\t") {
                ratio = Some(
                    r.parse::<f64>()
                        .map_err(|e| Error::InvalidSplit(format!("novel_ratio: {e}")))?,
                );
            } else if let Some(name) = line.strip_prefix('[').and_then(|l| l.strip_suffix(']')) {
                sections.entry(name.to_string()).or_default();
                current = Some(name.to_string());
            } else {
                let section = current
                    .as_ref()
                    .ok_or_else(|| Error::InvalidSplit(format!("entry `{line}` before section")))?;
                sections.get_mut(section).unwrap().insert(line.to_string());
            }
        }
        let mut take = |name: &str| sections.remove(name).unwrap_or_default();
        let spec = SplitSpec {
            predefined_relations: take("predefined_relations"),
            novel_relations: take("novel_relations"),
            labeled_ids: take("labeled"),
            unlabeled_ids: take("unlabeled"),
            test_ids: take("test"),
            novel_ratio: ratio.ok_or_else(|| Error::InvalidSplit("missing novel_ratio".into()))?,
        };
        Ok(spec)
    }
}

/// Number of novel relations for `num_relations` at `ratio`.
pub fn novel_relation_count(
    num_relations: usize,
    ratio: f64,
    policy: &SizingPolicy,
) -> Result<usize> {
    if !(0.0..1.0).contains(&ratio) {
        return Err(Error::InvalidSplit(format!(
            "novel ratio {ratio} outside [0, 1)"
        )));
    }
    let is_fractional = matches!(policy, SizingPolicy::Fractional { .. });
    if is_fractional && num_relations == 41 {
        for (canonical, count) in [(0.2, 9), (0.5, 20), (0.8, 32)] {
            if (ratio - canonical).abs() < 1e-9 {
                return Ok(count);
            }
        }
    }
    let exact = ratio * num_relations as f64;
    let rounded = exact.round();
    if (exact - rounded).abs() < 1e-9 || is_fractional {
        Ok(rounded as usize)
    } else {
        Err(Error::InvalidSplit(format!(
            "{ratio} x {num_relations} relations is not an integral relation count"
        )))
    }
}

/// Builds the labeled / unlabeled / test split. Deterministic in `seed`.
pub fn build_splits(
    instances: &[RelationInstance],
    novel_ratio: f64,
    policy: &SizingPolicy,
    seed: u64,
) -> Result<SplitSpec> {
    let dropped: BTreeSet<&str> = match policy {
        SizingPolicy::Fractional { drop_relations, .. } => {
            drop_relations.iter().map(String::as_str).collect()
        }
        SizingPolicy::PerRelation { .. } => BTreeSet::new(),
    };

    let mut by_relation: BTreeMap<&str, Vec<&str>> = BTreeMap::new();
    for inst in instances {
        let label = inst
            .relation_label
            .as_deref()
            .ok_or_else(|| Error::InvalidInstance {
                id: inst.instance_id.clone(),
                reason: "split construction needs a gold relation".into(),
            })?;
        if dropped.contains(label) {
            continue;
        }
        by_relation
            .entry(label)
            .or_default()
            .push(inst.instance_id.as_str());
    }

    let relations: Vec<&str> = by_relation.keys().copied().collect();
    let n_novel = novel_relation_count(relations.len(), novel_ratio, policy)?;
    let mut shuffled = relations.clone();
    shuffled.shuffle(&mut rng_for(seed, &["split", "novel-relations"]));
    let novel: BTreeSet<String> = shuffled[..n_novel].iter().map(|r| r.to_string()).collect();
    let predefined: BTreeSet<String> = shuffled[n_novel..].iter().map(|r| r.to_string()).collect();

    let mut spec = SplitSpec {
        labeled_ids: BTreeSet::new(),
        unlabeled_ids: BTreeSet::new(),
        test_ids: BTreeSet::new(),
        predefined_relations: predefined,
        novel_relations: novel,
        novel_ratio,
    };

    for (relation, ids) in by_relation {
        let mut ids = ids;
        ids.sort_unstable();
        ids.shuffle(&mut rng_for(seed, &["split", "instances", relation]));
        let is_novel = spec.novel_relations.contains(relation);
        let (n_test, n_unlabeled, n_labeled) = match policy {
            SizingPolicy::PerRelation {
                test,
                unlabeled,
                labeled,
            } => {
                let n_labeled = if is_novel { 0 } else { *labeled };
                let need = test + unlabeled + n_labeled;
                if ids.len() < need {
                    return Err(Error::InsufficientInstances {
                        relation: relation.to_string(),
                        reason: format!("needs {need} instances, has {}", ids.len()),
                    });
                }
                (*test, *unlabeled, n_labeled)
            }
            SizingPolicy::Fractional {
                test_fraction,
                unlabeled_fraction,
                ..
            } => {
                let n_test = (ids.len() as f64 * test_fraction).round() as usize;
                let rest = ids.len() - n_test;
                let n_unlabeled = (rest as f64 * unlabeled_fraction).ceil() as usize;
                let n_labeled = if is_novel { 0 } else { rest - n_unlabeled };
                if n_test == 0 || n_unlabeled == 0 {
                    return Err(Error::InsufficientInstances {
                        relation: relation.to_string(),
                        reason: format!("{} instances leave an empty split", ids.len()),
                    });
                }
                (n_test, n_unlabeled, n_labeled)
            }
        };
        let mut cursor = ids.into_iter();
        spec.test_ids
            .extend(cursor.by_ref().take(n_test).map(str::to_string));
        spec.unlabeled_ids
            .extend(cursor.by_ref().take(n_unlabeled).map(str::to_string));
        spec.labeled_ids
            .extend(cursor.by_ref().take(n_labeled).map(str::to_string));
    }
    Ok(spec)
}

/// Instances of `ids`, in id order.
pub fn select<'a>(
    instances: &'a [RelationInstance],
    ids: &BTreeSet<String>,
) -> Vec<&'a RelationInstance> {
    instances
        .iter()
        .filter(|i| ids.contains(&i.instance_id))
        .collect()
}
