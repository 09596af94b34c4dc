//! Minimal PDF writer and rasterizer for typeset ink.
//!
//! The writer emits one content stream per page consisting solely of
//! `rg`/`g` color selections and `re ... f` rectangle fills on a fixed
//! US-letter MediaBox. Coordinates are written with shortest-roundtrip
//! formatting so the rasterizer parses back the exact `f64` values the
//! typesetter produced. Output bytes are fully deterministic.

use crate::bbox::PageImage;
use crate::error::RenderError;
use crate::render::typeset::{Ink, Rgb, TypesetDoc, PAGE_H, PAGE_W};

/// Converts a point-space span `[a, a+len)` to a half-open pixel span at
/// `dpi`. Rounds half away from zero on both edges and guarantees at
/// least one pixel for positive spans. Painting and trace-box
/// computation share this function, so they agree exactly.
pub fn px_span(a: f64, len: f64, dpi: u32, limit: u32) -> Option<(u32, u32)> {
    if len <= 0.0 {
        return None;
    }
    let scale = dpi as f64 / 72.0;
    let lo = (a * scale).round().max(0.0) as u32;
    let hi = ((a + len) * scale).round().max(0.0) as u32;
    let lo = lo.min(limit);
    let hi = hi.min(limit);
    if lo >= limit {
        return None;
    }
    Some((lo, hi.max(lo + 1)))
}

/// Pixel rectangle of one ink at `dpi` within a page of the standard
/// size, or `None` when it rounds away. Half-open `(x0, y0, x1, y1)`.
pub fn ink_px_rect(ink: &Ink, dpi: u32) -> Option<(u32, u32, u32, u32)> {
    let width_px = page_width_px(dpi);
    let height_px = page_height_px(dpi);
    let (x0, x1) = px_span(ink.x, ink.w, dpi, width_px)?;
    let (y0, y1) = px_span(ink.y, ink.h, dpi, height_px)?;
    Some((x0, y0, x1, y1))
}

pub fn page_width_px(dpi: u32) -> u32 {
    (PAGE_W * dpi as f64 / 72.0).round() as u32
}

pub fn page_height_px(dpi: u32) -> u32 {
    (PAGE_H * dpi as f64 / 72.0).round() as u32
}

fn luma(c: Rgb) -> u8 {
    let v = 0.299 * c.0 + 0.587 * c.1 + 0.114 * c.2;
    (v * 255.0).round().clamp(0.0, 255.0) as u8
}

// ----- writer ---------------------------------------------------------------

fn fmt_num(v: f64) -> String {
    // Shortest representation that round-trips through parse::<f64>().
    let s = format!("{v}");
    debug_assert_eq!(s.parse::<f64>().ok(), Some(v));
    s
}

fn content_stream(inks: &[&Ink]) -> String {
    let mut out = String::new();
    let mut current: Option<Rgb> = None;
    for ink in inks {
        if current != Some(ink.color) {
            let Rgb(r, g, b) = ink.color;
            if r == g && g == b {
                out.push_str(&format!("{} g\n", fmt_num(r as f64)));
            } else {
                out.push_str(&format!(
                    "{} {} {} rg\n",
                    fmt_num(r as f64),
                    fmt_num(g as f64),
                    fmt_num(b as f64)
                ));
            }
            current = Some(ink.color);
        }
        // Page space is y-down; PDF user space is y-up.
        let pdf_y = PAGE_H - (ink.y + ink.h);
        out.push_str(&format!(
            "{} {} {} {} re f\n",
            fmt_num(ink.x),
            fmt_num(pdf_y),
            fmt_num(ink.w),
            fmt_num(ink.h)
        ));
    }
    out
}

/// Serializes a typeset document to PDF bytes.
pub fn write_pdf(doc: &TypesetDoc) -> Vec<u8> {
    let pages = doc.pages.max(1);
    let mut per_page: Vec<Vec<&Ink>> = vec![Vec::new(); pages];
    for ink in &doc.inks {
        if ink.page < pages {
            per_page[ink.page].push(ink);
        }
    }

    // Object layout: 1 catalog, 2 pages root, then for each page an
    // object pair (page, contents).
    let total_objects = 2 + pages * 2;
    let mut objects: Vec<String> = Vec::with_capacity(total_objects);
    objects.push("<< /Type /Catalog /Pages 2 0 R >>".to_string());
    let kids: Vec<String> = (0..pages).map(|p| format!("{} 0 R", 3 + p * 2)).collect();
    objects.push(format!(
        "<< /Type /Pages /Kids [{}] /Count {} >>",
        kids.join(" "),
        pages
    ));
    for (p, inks) in per_page.iter().enumerate() {
        let page_obj = 3 + p * 2;
        let content_obj = page_obj + 1;
        objects.push(format!(
            "<< /Type /Page /Parent 2 0 R /MediaBox [0 0 {} {}] /Contents {} 0 R /Resources << >> >>",
            fmt_num(PAGE_W),
            fmt_num(PAGE_H),
            content_obj
        ));
        let stream = content_stream(inks);
        objects.push(format!(
            "<< /Length {} >>\nstream\n{}endstream",
            stream.len(),
            stream
        ));
    }

    let mut out: Vec<u8> = Vec::new();
    out.extend_from_slice(b"%PDF-1.4\n");
    let mut offsets: Vec<usize> = Vec::with_capacity(total_objects);
    for (i, body) in objects.iter().enumerate() {
        offsets.push(out.len());
        out.extend_from_slice(format!("{} 0 obj\n{}\nendobj\n", i + 1, body).as_bytes());
    }
    let xref_at = out.len();
    out.extend_from_slice(format!("xref\n0 {}\n", total_objects + 1).as_bytes());
    out.extend_from_slice(b"0000000000 65535 f \n");
    for off in &offsets {
        out.extend_from_slice(format!("{off:010} 00000 n \n").as_bytes());
    }
    out.extend_from_slice(
        format!(
            "trailer\n<< /Size {} /Root 1 0 R >>\nstartxref\n{}\n%%EOF\n",
            total_objects + 1,
            xref_at
        )
        .as_bytes(),
    );
    out
}

// ----- rasterizer ------------------------------------------------------------

/// Rasterizes PDF bytes in the subset this module writes: per-page
/// content streams of `rg` / `g` / `re` / `f` (plus tolerated `q`/`Q`
/// and `W`/`n` no-ops). Later fills overwrite earlier ones.
pub fn rasterize_pdf(bytes: &[u8], dpi: u32) -> Result<Vec<PageImage>, RenderError> {
    let text = String::from_utf8_lossy(bytes);
    if !text.starts_with("%PDF") {
        return Err(RenderError::RasterFailure {
            reason: "input is not a PDF".to_string(),
        });
    }
    let mut streams: Vec<&str> = Vec::new();
    let mut at = 0usize;
    while let Some(rel) = text[at..].find("stream\n") {
        let start = at + rel + "stream\n".len();
        let Some(end_rel) = text[start..].find("endstream") else {
            break;
        };
        streams.push(&text[start..start + end_rel]);
        at = start + end_rel + "endstream".len();
    }
    if streams.is_empty() {
        return Err(RenderError::RasterFailure {
            reason: "no content streams found".to_string(),
        });
    }

    let width = page_width_px(dpi);
    let height = page_height_px(dpi);
    let mut pages = Vec::with_capacity(streams.len());
    for (page_index, stream) in streams.iter().enumerate() {
        let mut img = PageImage::blank(page_index, width, height, dpi);
        let mut stack: Vec<f64> = Vec::new();
        let mut shade = 0u8; // current fill luma
        let mut pending: Option<(f64, f64, f64, f64)> = None;
        for tok in stream.split_ascii_whitespace() {
            if let Ok(v) = tok.parse::<f64>() {
                stack.push(v);
                continue;
            }
            match tok {
                "g" => {
                    if let Some(v) = stack.pop() {
                        shade = luma(Rgb(v as f32, v as f32, v as f32));
                    }
                    stack.clear();
                }
                "rg" => {
                    if stack.len() >= 3 {
                        let b = stack.pop().expect("len checked");
                        let g = stack.pop().expect("len checked");
                        let r = stack.pop().expect("len checked");
                        shade = luma(Rgb(r as f32, g as f32, b as f32));
                    }
                    stack.clear();
                }
                "re" => {
                    if stack.len() >= 4 {
                        let h = stack.pop().expect("len checked");
                        let w = stack.pop().expect("len checked");
                        let y = stack.pop().expect("len checked");
                        let x = stack.pop().expect("len checked");
                        pending = Some((x, y, w, h));
                    }
                    stack.clear();
                }
                "f" | "f*" | "F" => {
                    if let Some((x, y, w, h)) = pending.take() {
                        // back to page space (y-down)
                        let top = PAGE_H - (y + h);
                        if let (Some((x0, x1)), Some((y0, y1))) = (
                            px_span(x, w, dpi, width),
                            px_span(top, h, dpi, height),
                        ) {
                            for py in y0..y1 {
                                for px in x0..x1 {
                                    img.set(px, py, shade);
                                }
                            }
                        }
                    }
                    stack.clear();
                }
                "q" | "Q" | "W" | "n" | "h" => {
                    stack.clear();
                }
                _ => stack.clear(),
            }
        }
        pages.push(img);
    }
    Ok(pages)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::render::typeset::{BLACK, WHITE};

    fn ink(page: usize, x: f64, y: f64, w: f64, h: f64, color: Rgb) -> Ink {
        Ink {
            page,
            x,
            y,
            w,
            h,
            color,
            src: None,
        }
    }

    #[test]
    fn roundtrip_single_black_rect() {
        let doc = TypesetDoc {
            pages: 1,
            inks: vec![ink(0, 72.0, 72.0, 36.0, 12.0, BLACK)],
        };
        let pdf = write_pdf(&doc);
        let pages = rasterize_pdf(&pdf, 150).unwrap();
        assert_eq!(pages.len(), 1);
        let img = &pages[0];
        assert_eq!((img.width, img.height), (1275, 1650));
        let (x0, y0, x1, y1) = ink_px_rect(&doc.inks[0], 150).unwrap();
        assert_eq!((x0, y0), (150, 150));
        assert_eq!((x1, y1), (225, 175));
        for py in 0..img.height {
            for px in 0..img.width {
                let inside = px >= x0 && px < x1 && py >= y0 && py < y1;
                assert_eq!(
                    img.get(px, py),
                    if inside { 0 } else { 255 },
                    "pixel ({px},{py})"
                );
            }
        }
    }

    #[test]
    fn painted_pixels_match_trace_rects_exactly() {
        // Awkward fractional coordinates: the rasterized footprint must
        // equal ink_px_rect for every ink.
        let inks = vec![
            ink(0, 72.3, 100.7, 35.21, 7.0, BLACK),
            ink(0, 210.49, 333.333, 17.77, 9.5, Rgb(0.25, 0.25, 0.25)),
            ink(1, 90.0, 719.9, 40.0, 0.5, BLACK),
        ];
        let doc = TypesetDoc {
            pages: 2,
            inks: inks.clone(),
        };
        let pages = rasterize_pdf(&write_pdf(&doc), 150).unwrap();
        assert_eq!(pages.len(), 2);
        for target in &inks {
            let (x0, y0, x1, y1) = ink_px_rect(target, 150).unwrap();
            let img = &pages[target.page];
            for py in y0..y1 {
                for px in x0..x1 {
                    assert_ne!(img.get(px, py), 255, "({px},{py}) painted");
                }
            }
            // boundary just outside is untouched (no other ink overlaps)
            if x0 > 0 {
                assert_eq!(img.get(x0 - 1, y0), 255);
            }
            assert_eq!(img.get(x1, y1.saturating_sub(1)), 255);
        }
    }

    #[test]
    fn white_ink_invisible_on_white_page() {
        let doc = TypesetDoc {
            pages: 1,
            inks: vec![ink(0, 100.0, 100.0, 50.0, 10.0, WHITE)],
        };
        let pages = rasterize_pdf(&write_pdf(&doc), 150).unwrap();
        assert!(pages[0].pixels.iter().all(|&p| p == 255));
    }

    #[test]
    fn later_fill_overwrites_earlier() {
        let doc = TypesetDoc {
            pages: 1,
            inks: vec![
                ink(0, 100.0, 100.0, 50.0, 10.0, BLACK),
                ink(0, 100.0, 100.0, 50.0, 10.0, WHITE),
            ],
        };
        let pages = rasterize_pdf(&write_pdf(&doc), 150).unwrap();
        assert!(pages[0].pixels.iter().all(|&p| p == 255));
    }

    #[test]
    fn deterministic_bytes() {
        let doc = TypesetDoc {
            pages: 2,
            inks: vec![
                ink(0, 72.0, 72.0, 36.0, 12.0, BLACK),
                ink(1, 80.5, 90.25, 10.0, 5.0, Rgb(1.0, 0.0, 0.0)),
            ],
        };
        assert_eq!(write_pdf(&doc), write_pdf(&doc));
    }

    #[test]
    fn empty_document_still_has_a_page() {
        let doc = TypesetDoc {
            pages: 1,
            inks: vec![],
        };
        let pages = rasterize_pdf(&write_pdf(&doc), 72).unwrap();
        assert_eq!(pages.len(), 1);
        assert_eq!((pages[0].width, pages[0].height), (612, 792));
    }

    #[test]
    fn min_one_pixel_for_thin_rules() {
        let i = ink(0, 72.0, 722.0, 108.0, 0.4, BLACK);
        let (_, y0, _, y1) = ink_px_rect(&i, 150).unwrap();
        assert_eq!(y1 - y0, 1, "hairline rule still paints one pixel row");
        let doc = TypesetDoc {
            pages: 1,
            inks: vec![i],
        };
        let pages = rasterize_pdf(&write_pdf(&doc), 150).unwrap();
        assert!(pages[0].pixels.iter().any(|&p| p == 0));
    }

    #[test]
    fn color_luma_rec601() {
        let doc = TypesetDoc {
            pages: 1,
            inks: vec![ink(0, 100.0, 100.0, 10.0, 10.0, Rgb(1.0, 0.0, 0.0))],
        };
        let pages = rasterize_pdf(&write_pdf(&doc), 72).unwrap();
        let (x0, y0, _, _) = ink_px_rect(&doc.inks[0], 72).unwrap();
        assert_eq!(pages[0].get(x0, y0), 76); // 0.299 * 255 rounded
    }
}
