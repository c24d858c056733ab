//! Per-instance preprocessing: context-expanded crop, resize, mask
//! rasterization, and seeded augmentation.

use ndarray::{Array2, Array3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::taxonomy::{AttributeType, AttributeVocabulary, POS};

use super::synth::point_in_polygon;
use super::InstanceRecord;

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct PreprocessConfig {
    pub input_size: usize,
    /// Crop jitter as a fraction of box size.
    pub jitter: f64,
    pub flip_prob: f64,
    pub color_jitter: f64,
    pub grayscale_prob: f64,
}

impl Default for PreprocessConfig {
    fn default() -> Self {
        Self {
            input_size: 224,
            jitter: 0.1,
            flip_prob: 0.5,
            color_jitter: 0.1,
            grayscale_prob: 0.2,
        }
    }
}

/// Model-ready instance. Image values are centered around zero.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelInput {
    /// input_size x input_size x 3.
    pub image: Array3<f64>,
    /// input_size x input_size binary raster, if a polygon mask exists.
    pub mask: Option<Array2<f64>>,
    pub object_phrase: String,
    pub labels: Vec<i8>,
    pub augmentation_seed: u64,
}

/// Expand a bbox by min(w, h) * 0.3 on each side, clamped to image bounds.
pub fn expanded_bbox(bbox: [f64; 4], image_w: f64, image_h: f64) -> [f64; 4] {
    let [x, y, w, h] = bbox;
    let margin = w.min(h) * 0.3;
    let x0 = (x - margin).max(0.0);
    let y0 = (y - margin).max(0.0);
    let x1 = (x + w + margin).min(image_w);
    let y1 = (y + h + margin).min(image_h);
    [x0, y0, (x1 - x0).max(1e-9), (y1 - y0).max(1e-9)]
}

fn bilinear_sample(img: &Array3<f64>, x: f64, y: f64, ch: usize) -> f64 {
    let (h, w) = (img.shape()[0], img.shape()[1]);
    let x = x.clamp(0.0, w as f64 - 1.0);
    let y = y.clamp(0.0, h as f64 - 1.0);
    let x0 = x.floor() as usize;
    let y0 = y.floor() as usize;
    let x1 = (x0 + 1).min(w - 1);
    let y1 = (y0 + 1).min(h - 1);
    let fx = x - x0 as f64;
    let fy = y - y0 as f64;
    img[[y0, x0, ch]] * (1.0 - fx) * (1.0 - fy)
        + img[[y0, x1, ch]] * fx * (1.0 - fy)
        + img[[y1, x0, ch]] * (1.0 - fx) * fy
        + img[[y1, x1, ch]] * fx * fy
}

/// Preprocess one record into a model input. Deterministic given the seed.
///
/// Random grayscale is applied only when the instance has no positively
/// labeled color-type attribute.
pub fn preprocess_instance(
    record: &InstanceRecord,
    vocab: &AttributeVocabulary,
    config: &PreprocessConfig,
    augment: bool,
    seed: u64,
) -> Result<ModelInput> {
    let img = record.load_image()?;
    let (img_h, img_w) = (img.shape()[0] as f64, img.shape()[1] as f64);
    let mut bbox = expanded_bbox(record.bbox, img_w, img_h);

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut flip = false;
    let mut channel_scale = [1.0f64; 3];
    let mut brightness = 0.0f64;
    let mut grayscale = false;
    // zero-width jitter ranges draw nothing
    fn uniform(rng: &mut ChaCha8Rng, lo: f64, hi: f64) -> f64 {
        if hi > lo {
            rng.gen_range(lo..hi)
        } else {
            lo
        }
    }
    if augment {
        let j = config.jitter;
        let dx = uniform(&mut rng, -j, j) * bbox[2];
        let dy = uniform(&mut rng, -j, j) * bbox[3];
        let scale = uniform(&mut rng, 1.0 - j, 1.0 + j);
        let cx = bbox[0] + bbox[2] / 2.0 + dx;
        let cy = bbox[1] + bbox[3] / 2.0 + dy;
        let bw = bbox[2] * scale;
        let bh = bbox[3] * scale;
        let x0 = (cx - bw / 2.0).max(0.0);
        let y0 = (cy - bh / 2.0).max(0.0);
        let x1 = (cx + bw / 2.0).min(img_w);
        let y1 = (cy + bh / 2.0).min(img_h);
        bbox = [x0, y0, (x1 - x0).max(1e-9), (y1 - y0).max(1e-9)];

        flip = rng.gen_range(0.0..1.0) < config.flip_prob;
        for scale_ch in channel_scale.iter_mut() {
            *scale_ch = 1.0 + uniform(&mut rng, -config.color_jitter, config.color_jitter);
        }
        brightness = rng.gen_range(-0.05..0.05);
        let has_color_positive = (0..vocab.len()).any(|c| {
            vocab.type_of(c) == AttributeType::Color && record.labels[c] == POS
        });
        grayscale =
            !has_color_positive && rng.gen_range(0.0..1.0) < config.grayscale_prob;
    }

    let s = config.input_size;
    let mut out = Array3::zeros((s, s, 3));
    for row in 0..s {
        for col in 0..s {
            let out_col = if flip { s - 1 - col } else { col };
            let src_x = bbox[0] + (col as f64 + 0.5) / s as f64 * bbox[2] - 0.5;
            let src_y = bbox[1] + (row as f64 + 0.5) / s as f64 * bbox[3] - 0.5;
            for ch in 0..3 {
                out[[row, out_col, ch]] = bilinear_sample(&img, src_x, src_y, ch);
            }
        }
    }

    if augment {
        for row in 0..s {
            for col in 0..s {
                for ch in 0..3 {
                    let v = out[[row, col, ch]] * channel_scale[ch] + brightness;
                    out[[row, col, ch]] = v.clamp(0.0, 1.0);
                }
            }
        }
        if grayscale {
            for row in 0..s {
                for col in 0..s {
                    let mean = (out[[row, col, 0]] + out[[row, col, 1]] + out[[row, col, 2]]) / 3.0;
                    for ch in 0..3 {
                        out[[row, col, ch]] = mean;
                    }
                }
            }
        }
    }
    out.mapv_inplace(|v| v - 0.5);

    let mask = record.polygon_mask.as_ref().map(|polygons| {
        let mut raster = Array2::zeros((s, s));
        for row in 0..s {
            for col in 0..s {
                let out_col = if flip { s - 1 - col } else { col };
                let src_x = bbox[0] + (col as f64 + 0.5) / s as f64 * bbox[2];
                let src_y = bbox[1] + (row as f64 + 0.5) / s as f64 * bbox[3];
                if polygons.iter().any(|p| point_in_polygon(src_x, src_y, p)) {
                    raster[[row, out_col]] = 1.0;
                }
            }
        }
        raster
    });

    Ok(ModelInput {
        image: out,
        mask,
        object_phrase: record.object_phrase.clone(),
        labels: record.labels.clone(),
        augmentation_seed: seed,
    })
}
