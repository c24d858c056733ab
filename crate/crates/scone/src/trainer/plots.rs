//! Diagnostic image output: loss curves, grouped-score bars, attention-map
//! overlays, and search contact sheets.

use std::collections::BTreeMap;
use std::path::Path;

use image::{Rgb, RgbImage};
use ndarray::{Array2, Array3};

use crate::error::{Result, SconeError};

use super::EpochLog;

fn save(img: RgbImage, path: &Path) -> Result<()> {
    img.save(path).map_err(|e| SconeError::ImageLoadError(e.to_string()))
}

fn blank(width: u32, height: u32) -> RgbImage {
    RgbImage::from_pixel(width, height, Rgb([255, 255, 255]))
}

fn draw_line(img: &mut RgbImage, x0: f64, y0: f64, x1: f64, y1: f64, color: Rgb<u8>) {
    let steps = ((x1 - x0).abs().max((y1 - y0).abs()).ceil() as usize).max(1);
    for i in 0..=steps {
        let t = i as f64 / steps as f64;
        let x = (x0 + t * (x1 - x0)).round() as i64;
        let y = (y0 + t * (y1 - y0)).round() as i64;
        if x >= 0 && y >= 0 && (x as u32) < img.width() && (y as u32) < img.height() {
            img.put_pixel(x as u32, y as u32, color);
        }
    }
}

/// Total-loss and validation-mAP curves over epochs.
pub fn loss_curve(log: &[EpochLog], path: &Path) -> Result<()> {
    let (width, height) = (640u32, 400u32);
    let mut img = blank(width, height);
    if log.is_empty() {
        return save(img, path);
    }
    let margin = 40.0;
    let max_loss = log.iter().map(|e| e.total).fold(f64::MIN, f64::max).max(1e-9);
    let plot = |values: Vec<f64>, vmax: f64, color: Rgb<u8>, img: &mut RgbImage| {
        let n = values.len();
        for i in 1..n {
            let x0 = margin + (i - 1) as f64 / (n.max(2) - 1) as f64 * (width as f64 - 2.0 * margin);
            let x1 = margin + i as f64 / (n.max(2) - 1) as f64 * (width as f64 - 2.0 * margin);
            let y0 = height as f64 - margin - values[i - 1] / vmax * (height as f64 - 2.0 * margin);
            let y1 = height as f64 - margin - values[i] / vmax * (height as f64 - 2.0 * margin);
            draw_line(img, x0, y0, x1, y1, color);
        }
    };
    plot(log.iter().map(|e| e.total).collect(), max_loss, Rgb([200, 40, 40]), &mut img);
    let maps: Vec<f64> = log.iter().map(|e| if e.val_map.is_finite() { e.val_map } else { 0.0 }).collect();
    plot(maps, 1.0, Rgb([40, 80, 200]), &mut img);
    // axes
    draw_line(&mut img, margin, margin, margin, height as f64 - margin, Rgb([0, 0, 0]));
    draw_line(
        &mut img,
        margin,
        height as f64 - margin,
        width as f64 - margin,
        height as f64 - margin,
        Rgb([0, 0, 0]),
    );
    save(img, path)
}

/// One bar per named group, scaled to [0, 1].
pub fn group_bars(groups: &BTreeMap<String, f64>, path: &Path) -> Result<()> {
    let (width, height) = (640u32, 400u32);
    let mut img = blank(width, height);
    if groups.is_empty() {
        return save(img, path);
    }
    let margin = 40u32;
    let slot = (width - 2 * margin) / groups.len() as u32;
    for (i, (_, &value)) in groups.iter().enumerate() {
        let bar_h = (value.clamp(0.0, 1.0) * (height - 2 * margin) as f64) as u32;
        let x0 = margin + i as u32 * slot + slot / 8;
        let x1 = margin + (i as u32 + 1) * slot - slot / 8;
        for x in x0..x1 {
            for y in (height - margin - bar_h)..(height - margin) {
                img.put_pixel(x, y, Rgb([60, 120, 180]));
            }
        }
    }
    save(img, path)
}

fn to_rgb(value: f64) -> u8 {
    ((value + 0.5).clamp(0.0, 1.0) * 255.0) as u8
}

/// The (normalized, zero-centered) input image with an attention map blended
/// in red; the map is nearest-upsampled to the image size.
pub fn attention_overlay(image: &Array3<f64>, map: &Array2<f64>, path: &Path) -> Result<()> {
    let (h, w) = (image.shape()[0], image.shape()[1]);
    let peak = map.iter().copied().fold(f64::MIN, f64::max).max(1e-12);
    let mut img = RgbImage::new(w as u32, h as u32);
    for y in 0..h {
        for x in 0..w {
            let my = y * map.nrows() / h;
            let mx = x * map.ncols() / w;
            let weight = map[[my, mx]] / peak;
            let r = to_rgb(image[[y, x, 0]]) as f64;
            let g = to_rgb(image[[y, x, 1]]) as f64;
            let b = to_rgb(image[[y, x, 2]]) as f64;
            img.put_pixel(
                x as u32,
                y as u32,
                Rgb([
                    (r * (1.0 - weight) + 255.0 * weight) as u8,
                    (g * (1.0 - weight)) as u8,
                    (b * (1.0 - weight)) as u8,
                ]),
            );
        }
    }
    save(img, path)
}

/// Grid of images (all the same size) left-to-right, top-to-bottom.
pub fn contact_sheet(images: &[Array3<f64>], columns: usize, path: &Path) -> Result<()> {
    if images.is_empty() {
        return save(blank(1, 1), path);
    }
    let columns = columns.max(1);
    let (h, w) = (images[0].shape()[0], images[0].shape()[1]);
    let rows = images.len().div_ceil(columns);
    let pad = 2usize;
    let mut img = blank(
        (columns * (w + pad) + pad) as u32,
        (rows * (h + pad) + pad) as u32,
    );
    for (i, tile) in images.iter().enumerate() {
        let oy = pad + (i / columns) * (h + pad);
        let ox = pad + (i % columns) * (w + pad);
        for y in 0..h {
            for x in 0..w {
                img.put_pixel(
                    (ox + x) as u32,
                    (oy + y) as u32,
                    Rgb([
                        to_rgb(tile[[y, x, 0]]),
                        to_rgb(tile[[y, x, 1]]),
                        to_rgb(tile[[y, x, 2]]),
                    ]),
                );
            }
        }
    }
    save(img, path)
}
