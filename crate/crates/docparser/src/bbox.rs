//! Pixel-space geometry: page rasters and bounding boxes.

use serde::{Deserialize, Serialize};

/// One rasterized page: 8-bit grayscale, row-major.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PageImage {
    pub page_index: usize,
    pub width: u32,
    pub height: u32,
    pub dpi: u32,
    pub pixels: Vec<u8>,
}

impl PageImage {
    pub fn blank(page_index: usize, width: u32, height: u32, dpi: u32) -> PageImage {
        PageImage {
            page_index,
            width,
            height,
            dpi,
            pixels: vec![255; (width as usize) * (height as usize)],
        }
    }

    #[inline]
    pub fn get(&self, x: u32, y: u32) -> u8 {
        self.pixels[(y as usize) * (self.width as usize) + (x as usize)]
    }

    #[inline]
    pub fn set(&mut self, x: u32, y: u32, v: u8) {
        self.pixels[(y as usize) * (self.width as usize) + (x as usize)] = v;
    }
}

/// Axis-aligned box in pixel coordinates, half-open: pixels with
/// `x0 <= x < x1` and `y0 <= y < y1` are inside. Origin is the top-left
/// corner of the page.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub struct BBox {
    pub page_index: usize,
    pub x0: u32,
    pub y0: u32,
    pub x1: u32,
    pub y1: u32,
}

impl BBox {
    pub fn new(page_index: usize, x0: u32, y0: u32, x1: u32, y1: u32) -> BBox {
        debug_assert!(x0 <= x1 && y0 <= y1);
        BBox {
            page_index,
            x0,
            y0,
            x1,
            y1,
        }
    }

    pub fn area(&self) -> u64 {
        u64::from(self.x1 - self.x0) * u64::from(self.y1 - self.y0)
    }

    pub fn is_empty(&self) -> bool {
        self.x0 == self.x1 || self.y0 == self.y1
    }

    /// Pixel-count overlap; zero when pages differ.
    pub fn intersection_area(&self, other: &BBox) -> u64 {
        if self.page_index != other.page_index {
            return 0;
        }
        let w = self.x1.min(other.x1).saturating_sub(self.x0.max(other.x0));
        let h = self.y1.min(other.y1).saturating_sub(self.y0.max(other.y0));
        u64::from(w) * u64::from(h)
    }

    /// Smallest box containing both; caller guarantees same page.
    pub fn union_hull(&self, other: &BBox) -> BBox {
        debug_assert_eq!(self.page_index, other.page_index);
        BBox {
            page_index: self.page_index,
            x0: self.x0.min(other.x0),
            y0: self.y0.min(other.y0),
            x1: self.x1.max(other.x1),
            y1: self.y1.max(other.y1),
        }
    }

    /// Rescales from `from_dpi` to `to_dpi`, rounding half up.
    pub fn rescale(&self, from_dpi: u32, to_dpi: u32) -> BBox {
        if from_dpi == to_dpi {
            return *self;
        }
        let scale = |v: u32| -> u32 {
            ((u64::from(v) * u64::from(to_dpi) * 2 + u64::from(from_dpi))
                / (2 * u64::from(from_dpi))) as u32
        };
        BBox {
            page_index: self.page_index,
            x0: scale(self.x0),
            y0: scale(self.y0),
            x1: scale(self.x1),
            y1: scale(self.y1),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn intersection_basic_and_disjoint() {
        let a = BBox::new(0, 0, 0, 10, 10);
        let b = BBox::new(0, 5, 5, 15, 15);
        assert_eq!(a.intersection_area(&b), 25);
        let c = BBox::new(0, 10, 0, 20, 10);
        assert_eq!(a.intersection_area(&c), 0, "touching edges share no pixels");
        let d = BBox::new(1, 0, 0, 10, 10);
        assert_eq!(a.intersection_area(&d), 0, "different pages never overlap");
    }

    #[test]
    fn area_and_empty() {
        assert_eq!(BBox::new(0, 2, 3, 7, 9).area(), 30);
        assert!(BBox::new(0, 4, 4, 4, 9).is_empty());
    }

    #[test]
    fn rescale_rounds_half_up() {
        let b = BBox::new(0, 1, 3, 5, 7);
        let r = b.rescale(150, 300);
        assert_eq!((r.x0, r.y0, r.x1, r.y1), (2, 6, 10, 14));
        let r = b.rescale(150, 100);
        // 1*2/3 = 0.67 -> 1, 3*2/3 = 2, 5*2/3 = 3.33 -> 3, 7*2/3 = 4.67 -> 5
        assert_eq!((r.x0, r.y0, r.x1, r.y1), (1, 2, 3, 5));
        assert_eq!(b.rescale(150, 150), b);
    }

    #[test]
    fn union_hull_contains_both() {
        let a = BBox::new(0, 2, 2, 4, 4);
        let b = BBox::new(0, 8, 1, 9, 3);
        let u = a.union_hull(&b);
        assert_eq!((u.x0, u.y0, u.x1, u.y1), (2, 1, 9, 4));
    }
}
