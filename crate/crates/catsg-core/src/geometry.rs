//! Binary mask codec and mask-based geometric reasoning.
//!
//! Masks are run-length encoded over the row-major flattened bitmap, first
//! run counting zeros (possibly zero-length). The `close_to` relation is
//! derived from mask adjacency: two masks are adjacent when some foreground
//! pixel of one lies within Chebyshev distance `1 + gap` of a foreground
//! pixel of the other, i.e. 8-connectivity touch with a configurable slack
//! for noisy pseudo-label masks.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::scenegraph::{FrameSceneGraph, Grounding, RelationInstance};
use crate::PredicateId;

#[derive(Debug, Error)]
pub enum GeometryError {
    #[error("mask has no foreground pixels")]
    EmptyMask,
    #[error("mask dimensions differ: {0}x{1} vs {2}x{3}")]
    DimensionMismatch(u32, u32, u32, u32),
    #[error("entity {0} has no mask")]
    MissingMask(u32),
    #[error("invalid RLE: {0}")]
    InvalidRle(String),
}

/// Run-length encoded binary mask.
///
/// Runs alternate 0s/1s over the row-major flattened mask, starting with
/// zeros. Stored runs are canonical: no zero-length run except possibly the
/// leading zero-count, and no trailing empty run.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Mask {
    pub width: u32,
    pub height: u32,
    runs: Vec<u32>,
}

impl Mask {
    /// Encode a row-major bitmap (nonzero = foreground).
    pub fn encode(pixels: &[u8], width: u32, height: u32) -> Result<Self, GeometryError> {
        let n = (width as usize) * (height as usize);
        if pixels.len() != n {
            return Err(GeometryError::InvalidRle(format!(
                "pixel buffer has {} entries for {}x{} mask",
                pixels.len(),
                width,
                height
            )));
        }
        let mut runs = Vec::new();
        let mut current: u8 = 0;
        let mut count: u32 = 0;
        for &p in pixels {
            let bit = u8::from(p != 0);
            if bit == current {
                count += 1;
            } else {
                runs.push(count);
                current = bit;
                count = 1;
            }
        }
        runs.push(count);
        Ok(Self { width, height, runs })
    }

    /// Decode to a row-major bitmap of 0/1 bytes.
    pub fn decode(&self) -> Vec<u8> {
        let n = (self.width as usize) * (self.height as usize);
        let mut pixels = vec![0u8; n];
        let mut idx = 0usize;
        let mut bit = 0u8;
        for &run in &self.runs {
            let end = idx + run as usize;
            if bit == 1 {
                for p in &mut pixels[idx..end] {
                    *p = 1;
                }
            }
            idx = end;
            bit ^= 1;
        }
        pixels
    }

    /// Parse the comma-joined decimal run string, e.g. `"3,4,93"`.
    ///
    /// Non-canonical run lists (internal zero-length runs) are accepted and
    /// canonicalized.
    pub fn from_rle_string(s: &str, width: u32, height: u32) -> Result<Self, GeometryError> {
        let mut runs = Vec::new();
        for part in s.split(',') {
            let run: u32 = part
                .trim()
                .parse()
                .map_err(|_| GeometryError::InvalidRle(format!("bad run {part:?}")))?;
            runs.push(run);
        }
        let total: u64 = runs.iter().map(|&r| r as u64).sum();
        if total != (width as u64) * (height as u64) {
            return Err(GeometryError::InvalidRle(format!(
                "runs sum to {} but mask is {}x{}",
                total, width, height
            )));
        }
        // Canonicalize by decoding with the raw runs and re-encoding.
        let raw = Self {
            width,
            height,
            runs,
        };
        Self::encode(&raw.decode(), width, height)
    }

    /// The comma-joined decimal run string.
    pub fn to_rle_string(&self) -> String {
        self.runs
            .iter()
            .map(|r| r.to_string())
            .collect::<Vec<_>>()
            .join(",")
    }

    pub fn runs(&self) -> &[u32] {
        &self.runs
    }

    /// Number of foreground pixels (sum of odd-indexed runs).
    pub fn area_px(&self) -> u64 {
        self.runs
            .iter()
            .skip(1)
            .step_by(2)
            .map(|&r| r as u64)
            .sum()
    }

    pub fn is_empty(&self) -> bool {
        self.area_px() == 0
    }
}

/// Compute centroid, area fraction, and tight bounding box from a mask.
///
/// Pixel (x, y) is treated as the unit cell [x, x+1) x [y, y+1), so a
/// full-frame mask has centroid (0.5, 0.5) and bbox (0, 0, 1, 1).
pub fn grounding_from_mask(mask: &Mask) -> Result<Grounding, GeometryError> {
    let w = mask.width as f64;
    let h = mask.height as f64;
    let width = mask.width as usize;

    let mut count: u64 = 0;
    let mut sum_x = 0.0f64;
    let mut sum_y = 0.0f64;
    let (mut min_x, mut max_x) = (usize::MAX, 0usize);
    let (mut min_y, mut max_y) = (usize::MAX, 0usize);

    let mut flat = 0usize;
    for (i, &run) in mask.runs.iter().enumerate() {
        let run = run as usize;
        if i % 2 == 1 && run > 0 {
            // Foreground run; may span several rows.
            let mut start = flat;
            let end = flat + run;
            while start < end {
                let y = start / width;
                let row_end = ((y + 1) * width).min(end);
                let x0 = start % width;
                let x1 = x0 + (row_end - start) - 1;
                let len = (x1 - x0 + 1) as f64;
                // Sum of pixel centers x0+0.5 .. x1+0.5.
                sum_x += ((x0 + x1) as f64 / 2.0 + 0.5) * len;
                sum_y += (y as f64 + 0.5) * len;
                count += len as u64;
                min_x = min_x.min(x0);
                max_x = max_x.max(x1);
                min_y = min_y.min(y);
                max_y = max_y.max(y);
                start = row_end;
            }
        }
        flat += run;
    }

    if count == 0 {
        return Err(GeometryError::EmptyMask);
    }
    let count_f = count as f64;
    Ok(Grounding {
        cx: sum_x / count_f / w,
        cy: sum_y / count_f / h,
        area: count_f / (w * h),
        bbox: [
            min_x as f64 / w,
            min_y as f64 / h,
            (max_x + 1) as f64 / w,
            (max_y + 1) as f64 / h,
        ],
        mask: None,
    })
}

/// True iff some foreground pixel of `a` is within Chebyshev distance
/// `1 + gap` of some foreground pixel of `b`. Symmetric in its arguments.
pub fn masks_adjacent(a: &Mask, b: &Mask, gap: u32) -> Result<bool, GeometryError> {
    if a.width != b.width || a.height != b.height {
        return Err(GeometryError::DimensionMismatch(
            a.width, a.height, b.width, b.height,
        ));
    }
    let radius = (1 + gap) as usize;
    let w = a.width as usize;
    let h = a.height as usize;

    let pa = a.decode();
    let pb = b.decode();

    // Chebyshev dilation of `a` by `radius` is separable into a horizontal
    // and a vertical pass with a box structuring element.
    let mut dil = vec![0u8; w * h];
    for y in 0..h {
        let row = y * w;
        for x in 0..w {
            if pa[row + x] != 0 {
                let x0 = x.saturating_sub(radius);
                let x1 = (x + radius).min(w - 1);
                for d in &mut dil[row + x0..=row + x1] {
                    *d = 1;
                }
            }
        }
    }
    let mut dil2 = vec![0u8; w * h];
    for x in 0..w {
        for y in 0..h {
            if dil[y * w + x] != 0 {
                let y0 = y.saturating_sub(radius);
                let y1 = (y + radius).min(h - 1);
                for yy in y0..=y1 {
                    dil2[yy * w + x] = 1;
                }
            }
        }
    }

    Ok(pb.iter().zip(&dil2).any(|(&b, &d)| b != 0 && d != 0))
}

/// Emit `close_to` relations for every adjacent entity pair of a frame.
///
/// Pairs are undirected but stored as two directed records, the
/// `sub.id < obj.id` direction first. Entities without masks are an error.
pub fn infer_close_to(
    frame: &FrameSceneGraph,
    gap: u32,
    close_to: PredicateId,
) -> Result<Vec<RelationInstance>, GeometryError> {
    let mut entities: Vec<_> = frame.entities.iter().collect();
    entities.sort_by_key(|e| e.id);

    let mut masks = Vec::with_capacity(entities.len());
    for e in &entities {
        let mask = e
            .grounding
            .mask
            .as_ref()
            .ok_or(GeometryError::MissingMask(e.id))?;
        masks.push(mask);
    }

    let mut relations = Vec::new();
    for i in 0..entities.len() {
        for j in (i + 1)..entities.len() {
            if masks_adjacent(masks[i], masks[j], gap)? {
                relations.push(RelationInstance {
                    sub: entities[i].id,
                    obj: entities[j].id,
                    pred: close_to,
                });
                relations.push(RelationInstance {
                    sub: entities[j].id,
                    obj: entities[i].id,
                    pred: close_to,
                });
            }
        }
    }
    Ok(relations)
}

/// Rasterize a filled axis-aligned ellipse; used by the synthetic generator.
///
/// Guarantees at least one foreground pixel by falling back to the pixel
/// nearest the requested center.
pub fn rasterize_ellipse(
    width: u32,
    height: u32,
    cx_px: f64,
    cy_px: f64,
    rx_px: f64,
    ry_px: f64,
) -> Mask {
    let w = width as usize;
    let h = height as usize;
    let mut pixels = vec![0u8; w * h];
    let rx = rx_px.max(1e-9);
    let ry = ry_px.max(1e-9);

    let y0 = ((cy_px - ry).floor().max(0.0)) as usize;
    let y1 = ((cy_px + ry).ceil().min(h as f64 - 1.0)).max(0.0) as usize;
    let x0 = ((cx_px - rx).floor().max(0.0)) as usize;
    let x1 = ((cx_px + rx).ceil().min(w as f64 - 1.0)).max(0.0) as usize;

    let mut any = false;
    for y in y0..=y1.min(h.saturating_sub(1)) {
        let dy = (y as f64 + 0.5 - cy_px) / ry;
        for x in x0..=x1.min(w.saturating_sub(1)) {
            let dx = (x as f64 + 0.5 - cx_px) / rx;
            if dx * dx + dy * dy <= 1.0 {
                pixels[y * w + x] = 1;
                any = true;
            }
        }
    }
    if !any {
        let px = cx_px.clamp(0.0, w as f64 - 1.0) as usize;
        let py = cy_px.clamp(0.0, h as f64 - 1.0) as usize;
        pixels[py * w + px] = 1;
    }
    Mask::encode(&pixels, width, height).expect("buffer sized to dims")
}
