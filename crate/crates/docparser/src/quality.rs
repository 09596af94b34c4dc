//! Annotation quality grading.
//!
//! Two scores over a document's rendered boxes:
//! - intra-unit overlap: mean pairwise overlap ratio across all ordered
//!   pairs of annotated boxes (lower is better; boxes of distinct units
//!   should not overlap);
//! - alignment: for each reference box, the best overlap ratio achieved by
//!   any annotated box, averaged over the reference set (higher is
//!   better).
//!
//! Pairwise ratios are computed in exact integer rational arithmetic;
//! floating point enters only when averaging.

use serde::{Deserialize, Serialize};

use crate::bbox::BBox;

/// Non-negative rational number, kept reduced.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Ratio {
    pub num: u64,
    pub den: u64,
}

fn gcd(mut a: u64, mut b: u64) -> u64 {
    while b != 0 {
        (a, b) = (b, a % b);
    }
    a
}

impl Ratio {
    pub fn new(num: u64, den: u64) -> Ratio {
        if num == 0 || den == 0 {
            // 0/0 arises only for degenerate zero-area boxes; defined as 0.
            return Ratio { num: 0, den: 1 };
        }
        let g = gcd(num, den);
        Ratio {
            num: num / g,
            den: den / g,
        }
    }

    pub fn zero() -> Ratio {
        Ratio { num: 0, den: 1 }
    }

    pub fn one() -> Ratio {
        Ratio { num: 1, den: 1 }
    }

    pub fn to_f64(self) -> f64 {
        self.num as f64 / self.den as f64
    }
}

/// Overlap ratio of two pixel boxes: intersection area over union area.
/// Boxes on different pages, or with zero union area, score zero. Exact.
pub fn jaccard(a: &BBox, b: &BBox) -> Ratio {
    let inter = a.intersection_area(b);
    let union = a.area() + b.area() - inter;
    Ratio::new(inter, union)
}

/// Mean pairwise overlap across all ordered pairs of distinct boxes.
/// Fewer than two boxes score zero.
pub fn iou_intra(boxes: &[BBox]) -> f64 {
    let n = boxes.len();
    if n < 2 {
        return 0.0;
    }
    let mut sum = 0.0f64;
    for i in 0..n {
        for j in 0..n {
            if i != j {
                sum += jaccard(&boxes[i], &boxes[j]).to_f64();
            }
        }
    }
    sum / (n * (n - 1)) as f64
}

/// For each reference box, the best overlap any annotated box achieves,
/// averaged over the reference set. An empty reference set scores zero.
pub fn iou_align(annotated: &[BBox], reference: &[BBox]) -> f64 {
    if reference.is_empty() {
        return 0.0;
    }
    let mut sum = 0.0f64;
    for r in reference {
        let best = annotated
            .iter()
            .map(|a| jaccard(a, r).to_f64())
            .fold(0.0f64, f64::max);
        sum += best;
    }
    sum / reference.len() as f64
}

/// Document quality tiers. Thresholds are strict: a document exactly on a
/// boundary falls to the lower tier, and both conditions of a tier must
/// hold (an intra score below the tier-2 band with weak alignment grades
/// tier 3).
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Tier {
    Tier1,
    Tier2,
    Tier3,
}

pub const TIER1_INTRA_MAX: f64 = 0.0005;
pub const TIER1_ALIGN_MIN: f64 = 0.60;
pub const TIER2_INTRA_MAX: f64 = 0.01;
pub const TIER2_ALIGN_MIN: f64 = 0.35;

pub fn assign_tier(intra: f64, align: f64) -> Tier {
    if intra < TIER1_INTRA_MAX && align > TIER1_ALIGN_MIN {
        Tier::Tier1
    } else if (TIER1_INTRA_MAX..TIER2_INTRA_MAX).contains(&intra) && align > TIER2_ALIGN_MIN {
        Tier::Tier2
    } else {
        Tier::Tier3
    }
}

/// Quality section of a genome record.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QualityReport {
    pub n_boxes: usize,
    pub n_reference_boxes: usize,
    pub iou_intra: f64,
    pub iou_align: f64,
    pub tier: Tier,
}

pub fn grade(annotated: &[BBox], reference: &[BBox]) -> QualityReport {
    let intra = iou_intra(annotated);
    let align = iou_align(annotated, reference);
    QualityReport {
        n_boxes: annotated.len(),
        n_reference_boxes: reference.len(),
        iou_intra: intra,
        iou_align: align,
        tier: assign_tier(intra, align),
    }
}
