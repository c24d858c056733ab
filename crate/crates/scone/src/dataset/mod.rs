//! Dataset schema, VAW-format ingestion, statistics, and serialization.
//!
//! Label convention: per-class entries in {1, 0, -1} for positive, explicit
//! negative, and missing. Images are lazy: a record holds either a file path
//! or a procedural image spec (see [`synth`]).

pub mod preprocess;
pub mod synth;

use std::collections::BTreeSet;
use std::path::{Path, PathBuf};

use ndarray::Array3;
use serde::{Deserialize, Serialize};

use crate::error::{Result, SconeError};
use crate::taxonomy::{AttributeVocabulary, MISSING, NEG, POS};

pub use preprocess::{expanded_bbox, preprocess_instance, ModelInput, PreprocessConfig};
pub use synth::{generate_synthetic, SyntheticConfig, SyntheticImageSpec};

/// Where an instance's pixels come from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum ImageRef {
    Path(PathBuf),
    Synthetic(SyntheticImageSpec),
}

/// One annotated object instance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InstanceRecord {
    pub image_id: String,
    pub instance_id: String,
    pub image_ref: ImageRef,
    /// (x, y, w, h) in image pixels.
    pub bbox: [f64; 4],
    /// Polygons in image coordinates, each a list of (x, y) vertices.
    pub polygon_mask: Option<Vec<Vec<[f64; 2]>>>,
    pub object_phrase: String,
    pub labels: Vec<i8>,
}

impl InstanceRecord {
    /// Load or render this record's full image as H x W x 3 in [0, 1].
    pub fn load_image(&self) -> Result<Array3<f64>> {
        match &self.image_ref {
            ImageRef::Synthetic(spec) => Ok(spec.render()),
            ImageRef::Path(path) => {
                let img = image::open(path)
                    .map_err(|e| SconeError::ImageLoadError(format!("{}: {e}", path.display())))?
                    .to_rgb8();
                let (w, h) = (img.width() as usize, img.height() as usize);
                let mut out = Array3::zeros((h, w, 3));
                for (x, y, pixel) in img.enumerate_pixels() {
                    for ch in 0..3 {
                        out[[y as usize, x as usize, ch]] = pixel.0[ch] as f64 / 255.0;
                    }
                }
                Ok(out)
            }
        }
    }
}

/// A list of records sharing one vocabulary (identified by its size).
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DatasetSplit {
    pub records: Vec<InstanceRecord>,
    pub num_classes: usize,
}

impl DatasetSplit {
    pub fn new(records: Vec<InstanceRecord>, num_classes: usize) -> Result<Self> {
        for (i, record) in records.iter().enumerate() {
            if record.labels.len() != num_classes {
                return Err(SconeError::VocabMismatch(format!(
                    "record {i} has {} labels, expected {num_classes}",
                    record.labels.len()
                )));
            }
        }
        Ok(Self { records, num_classes })
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, serde_json::to_string(self)?)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Ok(serde_json::from_str(&std::fs::read_to_string(path)?)?)
    }
}

/// Per-class counts over a split.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DatasetStats {
    pub n_pos: Vec<u64>,
    pub n_neg: Vec<u64>,
    /// Fraction of records positively labeled per class.
    pub image_freq: Vec<f64>,
    /// Mean number of annotated (non-missing) labels per record.
    pub density: f64,
    pub n_records: usize,
}

impl DatasetStats {
    pub fn to_text(&self, vocab: &AttributeVocabulary) -> String {
        let mut out = String::new();
        out.push_str(&format!("records\t{}\n", self.n_records));
        out.push_str(&format!("density\t{:.4}\n", self.density));
        for c in 0..self.n_pos.len() {
            out.push_str(&format!(
                "{}\tpos={}\tneg={}\tfreq={:.6}\n",
                vocab.name(c),
                self.n_pos[c],
                self.n_neg[c],
                self.image_freq[c]
            ));
        }
        out
    }
}

pub fn compute_stats(split: &DatasetSplit) -> Result<DatasetStats> {
    if split.records.is_empty() {
        return Err(SconeError::EmptySplit);
    }
    let c = split.num_classes;
    let mut n_pos = vec![0u64; c];
    let mut n_neg = vec![0u64; c];
    let mut annotated = 0u64;
    for record in &split.records {
        for (cls, &label) in record.labels.iter().enumerate() {
            match label {
                POS => {
                    n_pos[cls] += 1;
                    annotated += 1;
                }
                NEG => {
                    n_neg[cls] += 1;
                    annotated += 1;
                }
                _ => {}
            }
        }
    }
    let n = split.records.len();
    let image_freq = n_pos.iter().map(|&p| p as f64 / n as f64).collect();
    Ok(DatasetStats {
        n_pos,
        n_neg,
        image_freq,
        density: annotated as f64 / n as f64,
        n_records: n,
    })
}

/// One entry of the VAW annotation distribution format.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct VawEntry {
    pub image_id: String,
    pub instance_id: String,
    pub instance_bbox: [f64; 4],
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub instance_polygon: Option<Vec<Vec<[f64; 2]>>>,
    pub object_name: String,
    pub positive_attributes: Vec<String>,
    pub negative_attributes: Vec<String>,
}

/// Result of an ingestion pass.
#[derive(Debug, Clone)]
pub struct IngestReport {
    pub split: DatasetSplit,
    /// Annotations referencing attributes outside the vocabulary.
    pub dropped_attributes: u64,
}

/// Parse VAW-format JSON text into records. Positives map to 1, negatives to
/// 0, everything else stays -1. Unknown attributes are dropped and counted.
pub fn parse_vaw(
    text: &str,
    image_root: &Path,
    vocab: &AttributeVocabulary,
) -> Result<IngestReport> {
    let entries: Vec<serde_json::Value> =
        serde_json::from_str(text).map_err(|e| SconeError::ParseError {
            index: 0,
            message: e.to_string(),
        })?;
    let mut records = Vec::with_capacity(entries.len());
    let mut dropped = 0u64;
    for (index, value) in entries.into_iter().enumerate() {
        let entry: VawEntry =
            serde_json::from_value(value).map_err(|e| SconeError::ParseError {
                index,
                message: e.to_string(),
            })?;
        if entry.instance_bbox[2] <= 0.0 || entry.instance_bbox[3] <= 0.0 {
            return Err(SconeError::ParseError {
                index,
                message: format!("non-positive bbox size {:?}", entry.instance_bbox),
            });
        }
        let mut labels = vec![MISSING; vocab.len()];
        for name in &entry.negative_attributes {
            match vocab.lookup(name) {
                Some(c) => labels[c] = NEG,
                None => dropped += 1,
            }
        }
        // positives applied second: a name in both lists ends up positive
        for name in &entry.positive_attributes {
            match vocab.lookup(name) {
                Some(c) => labels[c] = POS,
                None => dropped += 1,
            }
        }
        records.push(InstanceRecord {
            image_ref: ImageRef::Path(image_root.join(format!("{}.jpg", entry.image_id))),
            image_id: entry.image_id,
            instance_id: entry.instance_id,
            bbox: entry.instance_bbox,
            polygon_mask: entry.instance_polygon,
            object_phrase: entry.object_name,
            labels,
        });
    }
    Ok(IngestReport {
        split: DatasetSplit::new(records, vocab.len())?,
        dropped_attributes: dropped,
    })
}

/// Ingest one or more VAW annotation files.
pub fn ingest_vaw(
    annotation_files: &[PathBuf],
    image_root: &Path,
    vocab: &AttributeVocabulary,
) -> Result<IngestReport> {
    let mut records = Vec::new();
    let mut dropped = 0u64;
    for file in annotation_files {
        let report = parse_vaw(&std::fs::read_to_string(file)?, image_root, vocab)?;
        records.extend(report.split.records);
        dropped += report.dropped_attributes;
    }
    Ok(IngestReport {
        split: DatasetSplit::new(records, vocab.len())?,
        dropped_attributes: dropped,
    })
}

/// Export a split back to the VAW annotation format (labels only; synthetic
/// image specs do not survive the round trip).
pub fn export_vaw(split: &DatasetSplit, vocab: &AttributeVocabulary) -> Vec<VawEntry> {
    split
        .records
        .iter()
        .map(|record| {
            let positives: Vec<String> = (0..vocab.len())
                .filter(|&c| record.labels[c] == POS)
                .map(|c| vocab.name(c).to_string())
                .collect();
            let negatives: Vec<String> = (0..vocab.len())
                .filter(|&c| record.labels[c] == NEG)
                .map(|c| vocab.name(c).to_string())
                .collect();
            VawEntry {
                image_id: record.image_id.clone(),
                instance_id: record.instance_id.clone(),
                instance_bbox: record.bbox,
                instance_polygon: record.polygon_mask.clone(),
                object_name: record.object_phrase.clone(),
                positive_attributes: positives,
                negative_attributes: negatives,
            }
        })
        .collect()
}

/// Distinct image ids in a split.
pub fn image_ids(split: &DatasetSplit) -> BTreeSet<&str> {
    split.records.iter().map(|r| r.image_id.as_str()).collect()
}
