//! Raster comparison: variant pages minus baseline pages, clustered
//! into tight boxes.
//!
//! A pixel belongs to the diff when the absolute grayscale difference
//! exceeds the threshold. Within a page, occupied x-columns are grouped:
//! a horizontal run of empty columns wider than `gap_fraction` of the
//! page width starts a new group, which captures side-by-side regions
//! (columns) as separate boxes. Every differing pixel lands in exactly
//! one box.

use crate::bbox::{BBox, PageImage};
use crate::error::RenderError;

/// Computes diff boxes for one variant against the baseline.
pub fn diff_extract_boxes(
    variant: &[PageImage],
    baseline: &[PageImage],
    threshold: u8,
    gap_fraction: f64,
) -> Result<Vec<BBox>, RenderError> {
    if variant.len() != baseline.len() {
        return Err(RenderError::PageMismatch {
            variant: variant.len(),
            baseline: baseline.len(),
        });
    }
    let mut boxes = Vec::new();
    for (v, b) in variant.iter().zip(baseline) {
        if v.width != b.width || v.height != b.height {
            return Err(RenderError::PageMismatch {
                variant: variant.len(),
                baseline: baseline.len(),
            });
        }
        boxes.extend(page_diff_boxes(v, b, threshold, gap_fraction));
    }
    if boxes.is_empty() {
        return Err(RenderError::EmptyDiff);
    }
    Ok(boxes)
}

fn page_diff_boxes(
    variant: &PageImage,
    baseline: &PageImage,
    threshold: u8,
    gap_fraction: f64,
) -> Vec<BBox> {
    let w = variant.width as usize;
    let h = variant.height as usize;
    // Column occupancy plus per-column vertical extents in one pass.
    let mut col_hit = vec![false; w];
    let mut col_y0 = vec![u32::MAX; w];
    let mut col_y1 = vec![0u32; w];
    let mut any = false;
    for y in 0..h {
        let row = y * w;
        for x in 0..w {
            let dv = variant.pixels[row + x].abs_diff(baseline.pixels[row + x]);
            if dv > threshold {
                any = true;
                col_hit[x] = true;
                if (y as u32) < col_y0[x] {
                    col_y0[x] = y as u32;
                }
                if (y as u32) >= col_y1[x] {
                    col_y1[x] = y as u32 + 1;
                }
            }
        }
    }
    if !any {
        return Vec::new();
    }

    let max_gap = (gap_fraction * w as f64).floor() as usize;
    let mut boxes = Vec::new();
    let mut x = 0usize;
    while x < w {
        if !col_hit[x] {
            x += 1;
            continue;
        }
        // Extend the group while inner gaps stay within max_gap.
        let start = x;
        let mut end = x + 1; // exclusive, last occupied + 1
        let mut probe = end;
        loop {
            let mut gap = 0usize;
            while probe < w && !col_hit[probe] {
                gap += 1;
                probe += 1;
            }
            if probe >= w || gap > max_gap {
                break;
            }
            while probe < w && col_hit[probe] {
                probe += 1;
            }
            end = probe;
        }
        let y0 = (start..end)
            .filter(|&c| col_hit[c])
            .map(|c| col_y0[c])
            .min()
            .expect("group has occupied columns");
        let y1 = (start..end)
            .filter(|&c| col_hit[c])
            .map(|c| col_y1[c])
            .max()
            .expect("group has occupied columns");
        boxes.push(BBox {
            page_index: variant.page_index,
            x0: start as u32,
            y0,
            x1: end as u32,
            y1,
        });
        x = probe.max(end);
    }
    boxes
}
