//! Attribute vocabulary, overlap/exclusive relation graphs, and the
//! negative-label expansion scheme.
//!
//! Expansion turns missing labels into explicit negatives: for an instance
//! positively labeled with attribute `a`, every same-type attribute that does
//! not overlap with `a` becomes a negative, and every attribute exclusive with
//! `a` becomes a negative regardless of type. Explicit annotations are never
//! overwritten.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::dataset::DatasetSplit;
use crate::error::{Result, SconeError};

/// Positive label.
pub const POS: i8 = 1;
/// Explicit negative label.
pub const NEG: i8 = 0;
/// Missing (unannotated) label.
pub const MISSING: i8 = -1;

/// Attribute type categories.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AttributeType {
    Color,
    Material,
    Shape,
    Size,
    Texture,
    Action,
    Other,
}

impl AttributeType {
    pub const ALL: [AttributeType; 7] = [
        AttributeType::Color,
        AttributeType::Material,
        AttributeType::Shape,
        AttributeType::Size,
        AttributeType::Texture,
        AttributeType::Action,
        AttributeType::Other,
    ];

    pub fn name(self) -> &'static str {
        match self {
            AttributeType::Color => "color",
            AttributeType::Material => "material",
            AttributeType::Shape => "shape",
            AttributeType::Size => "size",
            AttributeType::Texture => "texture",
            AttributeType::Action => "action",
            AttributeType::Other => "other",
        }
    }
}

impl FromStr for AttributeType {
    type Err = SconeError;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "color" => Ok(AttributeType::Color),
            "material" => Ok(AttributeType::Material),
            "shape" => Ok(AttributeType::Shape),
            "size" => Ok(AttributeType::Size),
            "texture" => Ok(AttributeType::Texture),
            "action" => Ok(AttributeType::Action),
            "other" | "others" => Ok(AttributeType::Other),
            other => Err(SconeError::InvalidType(other.to_string())),
        }
    }
}

impl fmt::Display for AttributeType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Ordered attribute vocabulary: class id = position in `attributes`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AttributeVocabulary {
    attributes: Vec<String>,
    types: Vec<AttributeType>,
    #[serde(skip)]
    index: BTreeMap<String, usize>,
}

impl AttributeVocabulary {
    pub fn new(entries: Vec<(String, AttributeType)>) -> Result<Self> {
        let mut attributes = Vec::with_capacity(entries.len());
        let mut types = Vec::with_capacity(entries.len());
        let mut index = BTreeMap::new();
        for (name, ty) in entries {
            let name = name.trim().to_string();
            if name.is_empty() {
                return Err(SconeError::InvalidType("empty attribute name".into()));
            }
            if index.insert(name.clone(), attributes.len()).is_some() {
                return Err(SconeError::DuplicateAttribute(name));
            }
            attributes.push(name);
            types.push(ty);
        }
        Ok(Self { attributes, types, index })
    }

    /// Parse the vocabulary file format: one `name<TAB>type` per line.
    /// Blank lines and lines starting with `#` are skipped.
    pub fn parse(text: &str) -> Result<Self> {
        let mut entries = Vec::new();
        for (lineno, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let mut parts = line.splitn(2, '\t');
            let name = parts.next().unwrap_or("");
            let ty = parts.next().ok_or_else(|| SconeError::ParseError {
                index: lineno,
                message: format!("expected `name<TAB>type`, got {line:?}"),
            })?;
            entries.push((name.to_string(), ty.parse()?));
        }
        Self::new(entries)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::parse(&std::fs::read_to_string(path)?)
    }

    pub fn len(&self) -> usize {
        self.attributes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.attributes.is_empty()
    }

    pub fn name(&self, class: usize) -> &str {
        &self.attributes[class]
    }

    pub fn names(&self) -> &[String] {
        &self.attributes
    }

    pub fn type_of(&self, class: usize) -> AttributeType {
        self.types[class]
    }

    pub fn lookup(&self, name: &str) -> Option<usize> {
        self.index.get(name).copied()
    }

    /// Class ids of a given type, in index order.
    pub fn classes_of_type(&self, ty: AttributeType) -> Vec<usize> {
        (0..self.len()).filter(|&c| self.types[c] == ty).collect()
    }

    /// Rebuild the name index after deserialization.
    pub fn rebuild_index(&mut self) {
        self.index = self
            .attributes
            .iter()
            .enumerate()
            .map(|(i, n)| (n.clone(), i))
            .collect();
    }

    pub fn to_file_format(&self) -> String {
        let mut out = String::new();
        for (name, ty) in self.attributes.iter().zip(&self.types) {
            out.push_str(name);
            out.push('\t');
            out.push_str(ty.name());
            out.push('\n');
        }
        out
    }
}

/// Where a relation pair came from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Provenance {
    SynsetShare,
    SynonymEdge,
    AntonymEdge,
    Cooccurrence,
    Manual,
}

/// Relation edge labels accepted in the edge source files.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum EdgeLabel {
    Synonym,
    SimilarTo,
    DerivedFrom,
    Antonym,
    DistinctFrom,
    IsA,
}

impl FromStr for EdgeLabel {
    type Err = SconeError;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "Synonym" => Ok(EdgeLabel::Synonym),
            "SimilarTo" => Ok(EdgeLabel::SimilarTo),
            "DerivedFrom" => Ok(EdgeLabel::DerivedFrom),
            "Antonym" => Ok(EdgeLabel::Antonym),
            "DistinctFrom" => Ok(EdgeLabel::DistinctFrom),
            "IsA" => Ok(EdgeLabel::IsA),
            other => Err(SconeError::InvalidType(format!("edge label {other:?}"))),
        }
    }
}

fn canonical(a: usize, b: usize) -> (usize, usize) {
    if a < b {
        (a, b)
    } else {
        (b, a)
    }
}

/// Symmetric overlap/exclusive relations over class ids.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct RelationGraph {
    overlap: BTreeSet<(usize, usize)>,
    exclusive: BTreeSet<(usize, usize)>,
    /// Stored as an entry list: JSON maps cannot key on pairs.
    #[serde(with = "provenance_entries")]
    provenance: BTreeMap<(usize, usize), Provenance>,
}

mod provenance_entries {
    use super::Provenance;
    use serde::{Deserialize, Deserializer, Serialize, Serializer};
    use std::collections::BTreeMap;

    pub fn serialize<S: Serializer>(
        map: &BTreeMap<(usize, usize), Provenance>,
        serializer: S,
    ) -> std::result::Result<S::Ok, S::Error> {
        let entries: Vec<(usize, usize, Provenance)> =
            map.iter().map(|(&(a, b), &p)| (a, b, p)).collect();
        entries.serialize(serializer)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(
        deserializer: D,
    ) -> std::result::Result<BTreeMap<(usize, usize), Provenance>, D::Error> {
        let entries = Vec::<(usize, usize, Provenance)>::deserialize(deserializer)?;
        Ok(entries.into_iter().map(|(a, b, p)| ((a, b), p)).collect())
    }
}

impl RelationGraph {
    pub fn new() -> Self {
        Self::default()
    }

    /// Overlap wins when a pair would land in both sets.
    pub fn add_overlap(&mut self, a: usize, b: usize, source: Provenance) {
        if a == b {
            return;
        }
        let key = canonical(a, b);
        self.exclusive.remove(&key);
        if self.overlap.insert(key) {
            self.provenance.insert(key, source);
        }
    }

    pub fn add_exclusive(&mut self, a: usize, b: usize, source: Provenance) {
        if a == b {
            return;
        }
        let key = canonical(a, b);
        if self.overlap.contains(&key) {
            return;
        }
        if self.exclusive.insert(key) {
            self.provenance.insert(key, source);
        }
    }

    pub fn overlaps(&self, a: usize, b: usize) -> bool {
        a != b && self.overlap.contains(&canonical(a, b))
    }

    pub fn exclusive(&self, a: usize, b: usize) -> bool {
        a != b && self.exclusive.contains(&canonical(a, b))
    }

    pub fn provenance(&self, a: usize, b: usize) -> Option<Provenance> {
        self.provenance.get(&canonical(a, b)).copied()
    }

    pub fn overlap_pairs(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        self.overlap.iter().copied()
    }

    pub fn exclusive_pairs(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        self.exclusive.iter().copied()
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, serde_json::to_string_pretty(self)?)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Ok(serde_json::from_str(&std::fs::read_to_string(path)?)?)
    }
}

/// Joint and marginal positive counts from a training split, used for
/// conditional co-occurrence expansion of overlap relations.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct CooccurrenceCounts {
    joint: BTreeMap<(String, String), u64>,
    marginal: BTreeMap<String, u64>,
}

impl CooccurrenceCounts {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add_joint(&mut self, a: &str, b: &str, count: u64) {
        let key = if a <= b {
            (a.to_string(), b.to_string())
        } else {
            (b.to_string(), a.to_string())
        };
        *self.joint.entry(key).or_insert(0) += count;
    }

    pub fn add_marginal(&mut self, a: &str, count: u64) {
        *self.marginal.entry(a.to_string()).or_insert(0) += count;
    }

    /// Accumulate counts from one instance's positive label set.
    pub fn accumulate(&mut self, labels: &[i8], vocab: &AttributeVocabulary) {
        let positives: Vec<usize> =
            (0..labels.len()).filter(|&c| labels[c] == POS).collect();
        for &c in &positives {
            self.add_marginal(vocab.name(c), 1);
        }
        for (i, &a) in positives.iter().enumerate() {
            for &b in &positives[i + 1..] {
                self.add_joint(vocab.name(a), vocab.name(b), 1);
            }
        }
    }

    pub fn from_split(split: &DatasetSplit, vocab: &AttributeVocabulary) -> Self {
        let mut counts = Self::new();
        for record in &split.records {
            counts.accumulate(&record.labels, vocab);
        }
        counts
    }

    fn pairs(&self) -> impl Iterator<Item = (&str, &str, u64)> + '_ {
        self.joint
            .iter()
            .map(|((a, b), &n)| (a.as_str(), b.as_str(), n))
    }
}

/// Raw relation evidence before graph construction.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct RelationSourceRecords {
    pub synset_membership: BTreeMap<String, BTreeSet<String>>,
    pub antonym_pairs: BTreeSet<(String, String)>,
    pub typed_edges: Vec<(String, String, EdgeLabel)>,
    pub cooccurrence_counts: CooccurrenceCounts,
}

impl RelationSourceRecords {
    pub fn new() -> Self {
        Self::default()
    }

    /// Parse the synset file format: `attribute<TAB>synset_id` per line.
    pub fn parse_synsets(&mut self, text: &str) -> Result<()> {
        for (lineno, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let mut parts = line.splitn(2, '\t');
            let attr = parts.next().unwrap_or("").trim();
            let synset = parts.next().ok_or_else(|| SconeError::ParseError {
                index: lineno,
                message: format!("expected `attribute<TAB>synset_id`, got {line:?}"),
            })?;
            if attr.is_empty() || synset.trim().is_empty() {
                return Err(SconeError::ParseError {
                    index: lineno,
                    message: "empty attribute or synset id".into(),
                });
            }
            self.synset_membership
                .entry(attr.to_string())
                .or_default()
                .insert(synset.trim().to_string());
        }
        Ok(())
    }

    /// Parse the typed-edge file format: `a<TAB>b<TAB>edge_label` per line.
    pub fn parse_edges(&mut self, text: &str) -> Result<()> {
        for (lineno, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let parts: Vec<&str> = line.split('\t').collect();
            if parts.len() != 3 {
                return Err(SconeError::ParseError {
                    index: lineno,
                    message: format!("expected `a<TAB>b<TAB>edge_label`, got {line:?}"),
                });
            }
            let label: EdgeLabel = parts[2].parse()?;
            self.typed_edges
                .push((parts[0].trim().to_string(), parts[1].trim().to_string(), label));
        }
        Ok(())
    }

    pub fn load_synset_file(&mut self, path: &Path) -> Result<()> {
        self.parse_synsets(&std::fs::read_to_string(path)?)
    }

    pub fn load_edge_file(&mut self, path: &Path) -> Result<()> {
        self.parse_edges(&std::fs::read_to_string(path)?)
    }

    fn check_known(&self, vocab: &AttributeVocabulary) -> Result<()> {
        let check = |name: &str| -> Result<()> {
            if vocab.lookup(name).is_none() {
                return Err(SconeError::UnknownAttribute(name.to_string()));
            }
            Ok(())
        };
        for name in self.synset_membership.keys() {
            check(name)?;
        }
        for (a, b) in &self.antonym_pairs {
            check(a)?;
            check(b)?;
        }
        for (a, b, _) in &self.typed_edges {
            check(a)?;
            check(b)?;
        }
        for (a, b, _) in self.cooccurrence_counts.pairs() {
            check(a)?;
            check(b)?;
        }
        Ok(())
    }
}

/// Build the relation graph from the raw evidence.
///
/// Overlap: shared synset, Synonym/SimilarTo/DerivedFrom edges, or conditional
/// co-occurrence `max(P(a|b), P(b|a)) >= cooccur_threshold`. Exclusive:
/// antonym pairs and Antonym/DistinctFrom edges. Overlap wins on conflict.
pub fn build_relations(
    vocab: &AttributeVocabulary,
    sources: &RelationSourceRecords,
    cooccur_threshold: f64,
) -> Result<RelationGraph> {
    sources.check_known(vocab)?;
    let mut graph = RelationGraph::new();

    // Shared-synset overlaps.
    let mut by_synset: BTreeMap<&str, Vec<usize>> = BTreeMap::new();
    for (attr, synsets) in &sources.synset_membership {
        let id = vocab.lookup(attr).unwrap();
        for synset in synsets {
            by_synset.entry(synset.as_str()).or_default().push(id);
        }
    }
    for members in by_synset.values() {
        for (i, &a) in members.iter().enumerate() {
            for &b in &members[i + 1..] {
                graph.add_overlap(a, b, Provenance::SynsetShare);
            }
        }
    }

    // Typed edges.
    for (a, b, label) in &sources.typed_edges {
        let (a, b) = (vocab.lookup(a).unwrap(), vocab.lookup(b).unwrap());
        match label {
            EdgeLabel::Synonym | EdgeLabel::SimilarTo | EdgeLabel::DerivedFrom => {
                graph.add_overlap(a, b, Provenance::SynonymEdge)
            }
            EdgeLabel::Antonym | EdgeLabel::DistinctFrom => {
                graph.add_exclusive(a, b, Provenance::AntonymEdge)
            }
            EdgeLabel::IsA => {} // type assignment evidence, not a pair relation
        }
    }

    // WordNet lemma antonyms.
    for (a, b) in &sources.antonym_pairs {
        let (a, b) = (vocab.lookup(a).unwrap(), vocab.lookup(b).unwrap());
        graph.add_exclusive(a, b, Provenance::AntonymEdge);
    }

    // Co-occurrence expansion.
    for (a, b, joint) in sources.cooccurrence_counts.pairs() {
        let ma = sources.cooccurrence_counts.marginal.get(a).copied().unwrap_or(0);
        let mb = sources.cooccurrence_counts.marginal.get(b).copied().unwrap_or(0);
        let p_a_given_b = if mb > 0 { joint as f64 / mb as f64 } else { 0.0 };
        let p_b_given_a = if ma > 0 { joint as f64 / ma as f64 } else { 0.0 };
        if p_a_given_b.max(p_b_given_a) >= cooccur_threshold {
            let (a, b) = (vocab.lookup(a).unwrap(), vocab.lookup(b).unwrap());
            graph.add_overlap(a, b, Provenance::Cooccurrence);
        }
    }

    Ok(graph)
}

/// One skipped expansion instruction: the rule wanted a negative on a class
/// that is explicitly positive.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ExpansionConflict {
    pub source_class: usize,
    pub target_class: usize,
}

/// Expand negatives for one label vector. Only converts -1 to 0.
pub fn expand_negatives(
    labels: &[i8],
    vocab: &AttributeVocabulary,
    graph: &RelationGraph,
) -> Vec<i8> {
    expand_negatives_logged(labels, vocab, graph).0
}

pub fn expand_negatives_logged(
    labels: &[i8],
    vocab: &AttributeVocabulary,
    graph: &RelationGraph,
) -> (Vec<i8>, Vec<ExpansionConflict>) {
    assert_eq!(labels.len(), vocab.len(), "label vector length != vocabulary size");
    let mut out = labels.to_vec();
    let mut conflicts = Vec::new();
    for a in 0..labels.len() {
        if labels[a] != POS {
            continue;
        }
        let ty = vocab.type_of(a);
        for b in 0..labels.len() {
            if b == a {
                continue;
            }
            let same_type_non_overlap = vocab.type_of(b) == ty && !graph.overlaps(a, b);
            let negated = same_type_non_overlap || graph.exclusive(a, b);
            if !negated {
                continue;
            }
            match labels[b] {
                MISSING => out[b] = NEG,
                POS => conflicts.push(ExpansionConflict { source_class: a, target_class: b }),
                _ => {}
            }
        }
    }
    (out, conflicts)
}

/// Counts from a dataset-wide expansion pass.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ExpansionReport {
    pub added_per_class: Vec<u64>,
    pub total_added: u64,
    pub conflict_count: u64,
    pub instances: usize,
}

impl ExpansionReport {
    pub fn to_text(&self, vocab: &AttributeVocabulary) -> String {
        let mut out = String::new();
        out.push_str(&format!("instances\t{}\n", self.instances));
        out.push_str(&format!("total_added_negatives\t{}\n", self.total_added));
        out.push_str(&format!("expansion_conflicts\t{}\n", self.conflict_count));
        for (c, &n) in self.added_per_class.iter().enumerate() {
            out.push_str(&format!("added[{}]\t{}\n", vocab.name(c), n));
        }
        out
    }
}

/// Apply expansion to every record of a split.
pub fn expand_dataset(
    split: &DatasetSplit,
    vocab: &AttributeVocabulary,
    graph: &RelationGraph,
) -> (DatasetSplit, ExpansionReport) {
    let mut out = split.clone();
    let mut added_per_class = vec![0u64; vocab.len()];
    let mut conflict_count = 0u64;
    for record in &mut out.records {
        let (expanded, conflicts) = expand_negatives_logged(&record.labels, vocab, graph);
        for c in 0..expanded.len() {
            if record.labels[c] == MISSING && expanded[c] == NEG {
                added_per_class[c] += 1;
            }
        }
        conflict_count += conflicts.len() as u64;
        record.labels = expanded;
    }
    let total_added = added_per_class.iter().sum();
    let report = ExpansionReport {
        added_per_class,
        total_added,
        conflict_count,
        instances: split.records.len(),
    };
    (out, report)
}
