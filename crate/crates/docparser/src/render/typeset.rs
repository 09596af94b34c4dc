//! Deterministic typesetter for a practical LaTeX subset.
//!
//! Produces colored ink rectangles (one per word, box, or rule) on US
//! letter pages with fixed metrics. Every ink carries the byte offset of
//! the source token that produced it, so layout can be traced back to
//! units independently of any raster comparison.
//!
//! The geometry depends only on the source text and image dimensions.
//! Color commands have zero width and height: two sources that differ
//! only in `\color` switches and group braces produce identical geometry
//! with different ink colors, which is the property the isolation-render
//! pipeline relies on.

use std::collections::BTreeMap;
use std::ops::Range;
use std::path::PathBuf;

use crate::latex;
use crate::segment::body_range;
use crate::source::SourceTree;

pub const PAGE_W: f64 = 612.0;
pub const PAGE_H: f64 = 792.0;
pub const MARGIN: f64 = 72.0;
pub const CONTENT_LEFT: f64 = MARGIN;
pub const CONTENT_RIGHT: f64 = PAGE_W - MARGIN;
pub const CONTENT_TOP: f64 = 72.0;
pub const CONTENT_BOTTOM: f64 = 720.0;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Rgb(pub f32, pub f32, pub f32);

pub const BLACK: Rgb = Rgb(0.0, 0.0, 0.0);
pub const WHITE: Rgb = Rgb(1.0, 1.0, 1.0);
const IMAGE_GRAY: Rgb = Rgb(0.25, 0.25, 0.25);

pub fn named_color(name: &str) -> Option<Rgb> {
    Some(match name.trim() {
        "black" => BLACK,
        "white" => WHITE,
        "red" => Rgb(1.0, 0.0, 0.0),
        "green" => Rgb(0.0, 1.0, 0.0),
        "blue" => Rgb(0.0, 0.0, 1.0),
        "cyan" => Rgb(0.0, 1.0, 1.0),
        "magenta" => Rgb(1.0, 0.0, 1.0),
        "yellow" => Rgb(1.0, 1.0, 0.0),
        "gray" | "grey" => Rgb(0.5, 0.5, 0.5),
        "lightgray" => Rgb(0.75, 0.75, 0.75),
        "darkgray" => Rgb(0.25, 0.25, 0.25),
        "orange" => Rgb(1.0, 0.5, 0.0),
        "purple" => Rgb(0.5, 0.0, 0.5),
        "teal" => Rgb(0.0, 0.5, 0.5),
        "violet" => Rgb(0.5, 0.0, 1.0),
        "brown" => Rgb(0.6, 0.3, 0.1),
        "olive" => Rgb(0.5, 0.5, 0.0),
        _ => return None,
    })
}

/// One filled rectangle, in points, y growing downward from the page top.
#[derive(Debug, Clone, PartialEq)]
pub struct Ink {
    pub page: usize,
    pub x: f64,
    pub y: f64,
    pub w: f64,
    pub h: f64,
    pub color: Rgb,
    /// Flat-source byte offset of the originating token; `None` for
    /// page furniture (page numbers, footnote separators).
    pub src: Option<usize>,
}

#[derive(Debug, Clone)]
pub struct TypesetDoc {
    pub pages: usize,
    pub inks: Vec<Ink>,
}

/// Image dimension provider: path (as written in the source) to pixel
/// size. One pixel equals one point at natural size.
pub trait ImageDims: Sync {
    fn dims_px(&self, path: &str) -> Option<(u32, u32)>;
}

/// No images resolvable; every graphic falls back to the default size.
pub struct NoResources;

impl ImageDims for NoResources {
    fn dims_px(&self, _path: &str) -> Option<(u32, u32)> {
        None
    }
}

/// Resolves images against files in a directory.
pub struct DirResources(pub PathBuf);

impl ImageDims for DirResources {
    fn dims_px(&self, path: &str) -> Option<(u32, u32)> {
        let norm = crate::source::normalize_path(path);
        for candidate in [norm.clone(), format!("{norm}.png")] {
            if let Ok(bytes) = std::fs::read(self.0.join(&candidate)) {
                if let Ok(img) = image::load_from_memory(&bytes) {
                    return Some((img.width(), img.height()));
                }
            }
        }
        None
    }
}

impl ImageDims for SourceTree {
    fn dims_px(&self, path: &str) -> Option<(u32, u32)> {
        let norm = crate::source::normalize_path(path);
        for candidate in [norm.clone(), format!("{norm}.png")] {
            if let Some(content) = self.files.get(&candidate) {
                if let Ok(img) = image::load_from_memory(content.as_bytes()) {
                    return Some((img.width(), img.height()));
                }
            }
        }
        None
    }
}

/// Size in points of a graphic given its option string (`width=`,
/// `height=`, `scale=`) and intrinsic pixel size. The variant builder
/// uses the same function to emit same-sized rules, so both routes agree
/// exactly.
pub fn graphic_box_size(opts: &str, intrinsic: Option<(u32, u32)>) -> (f64, f64) {
    let (iw, ih) = intrinsic
        .map(|(w, h)| (w.max(1) as f64, h.max(1) as f64))
        .unwrap_or((100.0, 75.0));
    let mut width: Option<f64> = None;
    let mut height: Option<f64> = None;
    let mut scale: Option<f64> = None;
    for part in opts.split(',') {
        let Some((key, value)) = part.split_once('=') else {
            continue;
        };
        match key.trim() {
            "width" => width = parse_dimension(value.trim()),
            "height" => height = parse_dimension(value.trim()),
            "scale" => scale = value.trim().parse().ok(),
            _ => {}
        }
    }
    match (width, height) {
        (Some(w), Some(h)) => (w, h),
        (Some(w), None) => (w, w * ih / iw),
        (None, Some(h)) => (h * iw / ih, h),
        (None, None) => {
            let s = scale.unwrap_or(1.0);
            (iw * s, ih * s)
        }
    }
}

/// Parses a TeX dimension into points. `pt` is treated as 1/72 inch.
/// Supports fractions of `\textwidth` / `\linewidth` / `\columnwidth`.
pub fn parse_dimension(s: &str) -> Option<f64> {
    let s = s.trim();
    for (suffix, base) in [
        ("\\textwidth", CONTENT_RIGHT - CONTENT_LEFT),
        ("\\linewidth", CONTENT_RIGHT - CONTENT_LEFT),
        ("\\columnwidth", CONTENT_RIGHT - CONTENT_LEFT),
    ] {
        if let Some(head) = s.strip_suffix(suffix) {
            let factor: f64 = if head.trim().is_empty() {
                1.0
            } else {
                head.trim().parse().ok()?
            };
            return Some(factor * base);
        }
    }
    for (unit, pts) in [
        ("pt", 1.0),
        ("bp", 1.0),
        ("mm", 72.0 / 25.4),
        ("cm", 72.0 / 2.54),
        ("in", 72.0),
        ("em", 10.0),
        ("ex", 4.3),
        ("px", 1.0),
    ] {
        if let Some(head) = s.strip_suffix(unit) {
            return head.trim().parse::<f64>().ok().map(|v| v * pts);
        }
    }
    s.parse().ok()
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Font {
    pub char_w: f64,
    pub ink_h: f64,
    pub line_h: f64,
}

pub const BODY: Font = Font {
    char_w: 6.0,
    ink_h: 7.0,
    line_h: 12.0,
};
pub const SMALL: Font = Font {
    char_w: 4.8,
    ink_h: 5.6,
    line_h: 9.6,
};
pub const MONO: Font = Font {
    char_w: 6.0,
    ink_h: 7.0,
    line_h: 12.0,
};
const TITLE_FONT: Font = Font {
    char_w: 10.2,
    ink_h: 12.0,
    line_h: 20.0,
};

fn heading_font(level: u8) -> Font {
    match level {
        0 | 1 => Font {
            char_w: 8.4,
            ink_h: 9.5,
            line_h: 17.0,
        },
        2 => Font {
            char_w: 7.2,
            ink_h: 8.2,
            line_h: 15.0,
        },
        _ => Font {
            char_w: 6.6,
            ink_h: 7.5,
            line_h: 13.5,
        },
    }
}

/// Inline content element produced by scanning.
#[derive(Debug, Clone)]
enum Item {
    Word {
        glyphs: usize,
        src: usize,
        color: Rgb,
        /// Joined to the previous item with no intervening space.
        sticky: bool,
    },
    Box {
        w: f64,
        h: f64,
        src: usize,
        color: Rgb,
        sticky: bool,
    },
    Break,
    FootnoteMark {
        src: usize,
        color: Rgb,
        note: Vec<Item>,
    },
}

impl Item {
    fn width(&self, font: Font) -> f64 {
        match self {
            Item::Word { glyphs, .. } => *glyphs as f64 * font.char_w,
            Item::Box { w, .. } => *w,
            Item::Break => 0.0,
            Item::FootnoteMark { .. } => 3.0,
        }
    }

    fn sticky(&self) -> bool {
        match self {
            Item::Word { sticky, .. } | Item::Box { sticky, .. } => *sticky,
            Item::Break => true,
            Item::FootnoteMark { .. } => true,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
enum Align {
    Left,
    Center,
}

#[derive(Default)]
struct Counters {
    section: u32,
    subsection: u32,
    subsubsection: u32,
    figure: u32,
    table: u32,
    algorithm: u32,
    equation: u32,
    footnote: u32,
}

struct Ts<'a> {
    text: &'a str,
    res: &'a dyn ImageDims,
    inks: Vec<Ink>,
    page: usize,
    y: f64,
    color: Rgb,
    color_stack: Vec<Rgb>,
    colorlinks: bool,
    link_color: Rgb,
    title_arg: Option<Range<usize>>,
    author_arg: Option<Range<usize>>,
    ctr: Counters,
    /// Notes to lay out at the bottom of each page.
    notes: BTreeMap<usize, Vec<(usize, Vec<Item>)>>,
    /// Depth of atomic (non-breaking) block nesting.
    float_depth: usize,
    /// Notes collected while inside a float, registered after placement.
    float_notes: Vec<(usize, Vec<Item>)>,
    max_page: usize,
}

pub fn typeset(text: &str, res: &dyn ImageDims) -> TypesetDoc {
    let mut ts = Ts {
        text,
        res,
        inks: Vec::new(),
        page: 0,
        y: CONTENT_TOP,
        color: BLACK,
        color_stack: Vec::new(),
        colorlinks: false,
        link_color: Rgb(1.0, 0.0, 0.0),
        title_arg: None,
        author_arg: None,
        ctr: Counters::default(),
        notes: BTreeMap::new(),
        float_depth: 0,
        float_notes: Vec::new(),
        max_page: 0,
    };
    let body = body_range(text);
    ts.scan_preamble(0..body.start);
    ts.run_blocks(body, Ctx::body());
    ts.finalize()
}

#[derive(Clone, Copy)]
struct Ctx {
    font: Font,
    left: f64,
    right: f64,
    list_depth: usize,
    align: Align,
}

impl Ctx {
    fn body() -> Ctx {
        Ctx {
            font: BODY,
            left: CONTENT_LEFT,
            right: CONTENT_RIGHT,
            list_depth: 0,
            align: Align::Left,
        }
    }
}

impl<'a> Ts<'a> {
    // ----- preamble ------------------------------------------------------

    fn scan_preamble(&mut self, range: Range<usize>) {
        let text = self.text;
        let mut i = range.start;
        while i < range.end {
            if text.as_bytes()[i] == b'%' && !latex::is_escaped(text, i) {
                i = latex::line_end(text, i);
                continue;
            }
            if text.as_bytes()[i] != b'\\' {
                i += 1;
                continue;
            }
            let Some((name_r, full_r)) = latex::command_at(text, i) else {
                i += 1;
                continue;
            };
            match &text[name_r] {
                "title" | "author" => {
                    let is_title = text.as_bytes()[i + 1] == b't';
                    let at = latex::skip_ws(text, full_r.end);
                    if let Some(g) = latex::brace_group(text, at) {
                        let arg = g.start + 1..g.end - 1;
                        if is_title {
                            self.title_arg = Some(arg);
                        } else {
                            self.author_arg = Some(arg);
                        }
                        i = g.end;
                        continue;
                    }
                    i = full_r.end;
                }
                "usepackage" => {
                    let mut cursor = latex::skip_ws(text, full_r.end);
                    let opts = latex::bracket_group(text, cursor);
                    if let Some(o) = &opts {
                        cursor = latex::skip_ws(text, o.end);
                    }
                    if let Some(g) = latex::brace_group(text, cursor) {
                        let pkgs = &text[g.start + 1..g.end - 1];
                        if pkgs.split(',').any(|p| p.trim() == "hyperref") {
                            if let Some(o) = &opts {
                                self.apply_hyperref_opts(&text[o.start + 1..o.end - 1]);
                            }
                        }
                        i = g.end;
                        continue;
                    }
                    i = full_r.end;
                }
                "hypersetup" => {
                    let at = latex::skip_ws(text, full_r.end);
                    if let Some(g) = latex::brace_group(text, at) {
                        let inner = text[g.start + 1..g.end - 1].to_string();
                        self.apply_hyperref_opts(&inner);
                        i = g.end;
                        continue;
                    }
                    i = full_r.end;
                }
                _ => i = full_r.end,
            }
        }
    }

    fn apply_hyperref_opts(&mut self, opts: &str) {
        for part in opts.split(',') {
            let part = part.trim();
            let (key, value) = match part.split_once('=') {
                Some((k, v)) => (k.trim(), v.trim()),
                None => (part, ""),
            };
            match key {
                "colorlinks" => self.colorlinks = value.is_empty() || value == "true",
                "linkcolor" | "allcolors" => {
                    if let Some(c) = named_color(value) {
                        self.link_color = c;
                    }
                }
                "hidelinks" => self.colorlinks = false,
                _ => {}
            }
        }
    }

    // ----- vertical machinery --------------------------------------------

    fn ensure_space(&mut self, h: f64) {
        if self.float_depth == 0 && self.y + h > CONTENT_BOTTOM {
            self.page += 1;
            self.max_page = self.max_page.max(self.page);
            self.y = CONTENT_TOP;
        }
    }

    fn vspace(&mut self, h: f64) {
        if self.y > CONTENT_TOP {
            self.y = (self.y + h).min(if self.float_depth > 0 {
                f64::MAX
            } else {
                CONTENT_BOTTOM
            });
        }
    }

    fn paint(&mut self, x: f64, y: f64, w: f64, h: f64, color: Rgb, src: Option<usize>) {
        if w <= 0.0 || h <= 0.0 {
            return;
        }
        self.inks.push(Ink {
            page: self.page,
            x,
            y,
            w,
            h,
            color,
            src,
        });
    }

    /// Lays out inline items with greedy wrapping, painting line by line.
    #[allow(unused_assignments)]
    fn layout_items(&mut self, items: &[Item], ctx: Ctx) {
        let font = ctx.font;
        let space = font.char_w;
        let mut line: Vec<(f64, &Item)> = Vec::new();
        let mut x = ctx.left;

        macro_rules! flush_line {
            () => {
                if !line.is_empty() {
                    let line_h = line
                        .iter()
                        .map(|(_, it)| match it {
                            Item::Box { h, .. } => h + 3.0,
                            _ => font.line_h,
                        })
                        .fold(font.line_h, f64::max);
                    self.ensure_space(line_h);
                    let shift = if ctx.align == Align::Center {
                        let used = x - ctx.left;
                        ((ctx.right - ctx.left) - used) / 2.0
                    } else {
                        0.0
                    };
                    for (ix, item) in line.drain(..) {
                        let ix = ix + shift;
                        match item {
                            Item::Word { glyphs, src, color, .. } => {
                                let w = (*glyphs as f64 * font.char_w - 1.0).max(1.0);
                                let y = self.y + line_h - font.ink_h - 2.0;
                                self.paint(ix, y, w, font.ink_h, *color, Some(*src));
                            }
                            Item::Box { w, h, src, color, .. } => {
                                let y = self.y + line_h - h - 2.0;
                                self.paint(ix, y, *w, *h, *color, Some(*src));
                            }
                            Item::FootnoteMark { src, color, note } => {
                                self.paint(ix, self.y + 1.0, 2.5, 3.5, *color, Some(*src));
                                let entry = (*src, note.clone());
                                if self.float_depth > 0 {
                                    self.float_notes.push(entry);
                                } else {
                                    self.notes.entry(self.page).or_default().push(entry);
                                }
                            }
                            Item::Break => {}
                        }
                    }
                    self.y += line_h;
                    x = ctx.left;
                }
            };
        }

        for item in items {
            if matches!(item, Item::Break) {
                flush_line!();
                continue;
            }
            let w = item.width(font);
            let gap = if line.is_empty() || item.sticky() {
                0.0
            } else {
                space
            };
            if !line.is_empty() && x + gap + w > ctx.right {
                flush_line!();
                line.push((ctx.left, item));
                x = ctx.left + w;
            } else {
                line.push((x + gap, item));
                x += gap + w;
            }
        }
        flush_line!();
    }

    // ----- inline scanning ------------------------------------------------

    /// Scans inline content in `range` into `items`. Handles words,
    /// groups, color switches, inline math, references, footnotes,
    /// graphics, and rules. Does not split paragraphs.
    #[allow(unused_assignments)]
    fn scan_inline(&mut self, range: Range<usize>, items: &mut Vec<Item>) {
        let text = self.text;
        let bytes = text.as_bytes();
        let mut i = range.start;
        // Current word accumulation.
        let mut glyphs = 0usize;
        let mut word_src = 0usize;
        let mut word_color = self.color;
        let mut word_sticky = false;
        let mut pending_sticky = false; // next item joins without space

        macro_rules! flush_word {
            () => {
                if glyphs > 0 {
                    items.push(Item::Word {
                        glyphs,
                        src: word_src,
                        color: word_color,
                        sticky: word_sticky,
                    });
                    glyphs = 0;
                    pending_sticky = true;
                }
            };
        }
        macro_rules! add_glyphs {
            ($n:expr, $at:expr) => {
                if glyphs == 0 {
                    word_src = $at;
                    word_color = self.color;
                    word_sticky = pending_sticky;
                } else if word_color != self.color {
                    // Color changed mid-word: split, keep joined.
                    items.push(Item::Word {
                        glyphs,
                        src: word_src,
                        color: word_color,
                        sticky: word_sticky,
                    });
                    glyphs = 0;
                    word_src = $at;
                    word_color = self.color;
                    word_sticky = true;
                }
                glyphs += $n;
            };
        }

        while i < range.end {
            let b = bytes[i];
            match b {
                b'%' if !latex::is_escaped(text, i) => {
                    flush_word!();
                    pending_sticky = false;
                    i = latex::line_end(text, i);
                }
                b' ' | b'\t' | b'\n' | b'\r' => {
                    flush_word!();
                    pending_sticky = false;
                    i += 1;
                }
                b'{' => {
                    self.color_stack.push(self.color);
                    i += 1;
                }
                b'}' => {
                    let prev = self.color_stack.pop().unwrap_or(BLACK);
                    if prev != self.color {
                        self.color = prev;
                    }
                    i += 1;
                }
                b'~' => {
                    flush_word!();
                    pending_sticky = false;
                    i += 1;
                }
                b'$' => {
                    // Inline math: glyph words from the math body.
                    let close = latex::find_unescaped(text, b'$', i + 1, false)
                        .unwrap_or(range.end)
                        .min(range.end);
                    flush_word!();
                    self.math_items(i + 1..close, items, &mut pending_sticky);
                    i = (close + 1).min(range.end);
                }
                b'\\' => {
                    let Some((name_r, full_r)) = latex::command_at(text, i) else {
                        i += 1;
                        continue;
                    };
                    let cmd = text[name_r.clone()].to_string();
                    match cmd.as_str() {
                        "color" => {
                            let at = latex::skip_ws(text, full_r.end);
                            if let Some(g) = latex::brace_group(text, at) {
                                if let Some(c) = named_color(&text[g.start + 1..g.end - 1]) {
                                    self.color = c;
                                }
                                i = g.end;
                            } else {
                                i = full_r.end;
                            }
                        }
                        "textcolor" => {
                            let at = latex::skip_ws(text, full_r.end);
                            let Some(cg) = latex::brace_group(text, at) else {
                                i = full_r.end;
                                continue;
                            };
                            let at2 = latex::skip_ws(text, cg.end);
                            let Some(ag) = latex::brace_group(text, at2) else {
                                i = cg.end;
                                continue;
                            };
                            flush_word!();
                            let saved = self.color;
                            if let Some(c) = named_color(&text[cg.start + 1..cg.end - 1]) {
                                self.color = c;
                            }
                            self.scan_inline(ag.start + 1..ag.end - 1, items);
                            self.color = saved;
                            i = ag.end;
                        }
                        "ref" | "pageref" | "eqref" | "autoref" | "cref" | "Cref" | "vref"
                        | "cite" | "citep" | "citet" => {
                            let at = latex::skip_ws(text, full_r.end);
                            let end = latex::brace_group(text, at)
                                .map(|g| g.end)
                                .unwrap_or(full_r.end);
                            flush_word!();
                            let n = match cmd.as_str() {
                                "ref" | "pageref" => 1,
                                "eqref" => 3,
                                "cite" | "citep" | "citet" => 3,
                                _ => 5,
                            };
                            let color = if self.colorlinks {
                                self.link_color
                            } else {
                                self.color
                            };
                            items.push(Item::Word {
                                glyphs: n,
                                src: i,
                                color,
                                sticky: pending_sticky,
                            });
                            pending_sticky = true;
                            i = end;
                        }
                        "label" | "hypersetup" | "centering" | "raggedright" | "raggedleft"
                        | "normalsize" | "small" | "footnotesize" | "scriptsize" | "large"
                        | "Large" | "itshape" | "bfseries" | "ttfamily" | "selectfont"
                        | "indent" => {
                            if cmd == "label" || cmd == "hypersetup" {
                                let at = latex::skip_ws(text, full_r.end);
                                i = latex::brace_group(text, at)
                                    .map(|g| g.end)
                                    .unwrap_or(full_r.end);
                            } else {
                                i = full_r.end;
                            }
                        }
                        "footnote" => {
                            let mut cursor = full_r.end;
                            let at = latex::skip_ws(text, cursor);
                            if let Some(opt) = latex::bracket_group(text, at) {
                                cursor = opt.end;
                            }
                            let at = latex::skip_ws(text, cursor);
                            let Some(g) = latex::brace_group(text, at) else {
                                i = full_r.end;
                                continue;
                            };
                            flush_word!();
                            self.ctr.footnote += 1;
                            let saved = self.color;
                            self.color_stack.push(self.color);
                            let mut note_items = Vec::new();
                            self.scan_inline(g.start + 1..g.end - 1, &mut note_items);
                            self.color_stack.pop();
                            let mark_color = saved;
                            self.color = saved;
                            items.push(Item::FootnoteMark {
                                src: i,
                                color: mark_color,
                                note: note_items,
                            });
                            pending_sticky = true;
                            i = g.end;
                        }
                        "includegraphics" => {
                            let mut cursor = latex::skip_ws(text, full_r.end);
                            let mut opts = "";
                            if let Some(o) = latex::bracket_group(text, cursor) {
                                opts = &text[o.start + 1..o.end - 1];
                                cursor = latex::skip_ws(text, o.end);
                            }
                            let Some(g) = latex::brace_group(text, cursor) else {
                                i = full_r.end;
                                continue;
                            };
                            let path = &text[g.start + 1..g.end - 1];
                            let (w, h) = graphic_box_size(opts, self.res.dims_px(path));
                            flush_word!();
                            items.push(Item::Box {
                                w,
                                h,
                                src: i,
                                color: IMAGE_GRAY,
                                sticky: pending_sticky,
                            });
                            pending_sticky = true;
                            i = g.end;
                        }
                        "rule" => {
                            let mut cursor = latex::skip_ws(text, full_r.end);
                            if let Some(o) = latex::bracket_group(text, cursor) {
                                cursor = latex::skip_ws(text, o.end);
                            }
                            let Some(wg) = latex::brace_group(text, cursor) else {
                                i = full_r.end;
                                continue;
                            };
                            let Some(hg) = latex::brace_group(text, latex::skip_ws(text, wg.end))
                            else {
                                i = wg.end;
                                continue;
                            };
                            let w = parse_dimension(&text[wg.start + 1..wg.end - 1]).unwrap_or(0.0);
                            let h = parse_dimension(&text[hg.start + 1..hg.end - 1]).unwrap_or(0.0);
                            flush_word!();
                            items.push(Item::Box {
                                w,
                                h,
                                src: i,
                                color: self.color,
                                sticky: pending_sticky,
                            });
                            pending_sticky = true;
                            i = hg.end;
                        }
                        "verb" | "verb*" => {
                            if let Some(delim) = text[full_r.end..].chars().next() {
                                let start = full_r.end + delim.len_utf8();
                                let end = text[start..]
                                    .find(delim)
                                    .map(|rel| start + rel)
                                    .unwrap_or(range.end);
                                flush_word!();
                                let n = text[start..end].chars().count().max(1);
                                items.push(Item::Word {
                                    glyphs: n,
                                    src: i,
                                    color: self.color,
                                    sticky: pending_sticky,
                                });
                                pending_sticky = true;
                                i = (end + delim.len_utf8()).min(range.end);
                            } else {
                                i = full_r.end;
                            }
                        }
                        "\\" => {
                            flush_word!();
                            pending_sticky = false;
                            items.push(Item::Break);
                            let at = latex::skip_inline_ws(text, full_r.end);
                            i = latex::bracket_group(text, at)
                                .map(|g| g.end)
                                .unwrap_or(full_r.end);
                        }
                        "%" | "$" | "&" | "#" | "_" | "{" | "}" => {
                            add_glyphs!(1, i);
                            i = full_r.end;
                        }
                        " " | "\n" => {
                            flush_word!();
                            pending_sticky = false;
                            i = full_r.end;
                        }
                        "," | ";" | "quad" | "qquad" | "hfill" | "hspace" => {
                            flush_word!();
                            pending_sticky = false;
                            if cmd == "hspace" {
                                let at = latex::skip_ws(text, full_r.end);
                                i = latex::brace_group(text, at)
                                    .map(|g| g.end)
                                    .unwrap_or(full_r.end);
                            } else {
                                i = full_r.end;
                            }
                        }
                        "ldots" | "dots" | "cdots" => {
                            add_glyphs!(3, i);
                            i = full_r.end;
                        }
                        "vspace" | "vspace*" => {
                            let at = latex::skip_ws(text, full_r.end);
                            i = latex::brace_group(text, at)
                                .map(|g| g.end)
                                .unwrap_or(full_r.end);
                        }
                        "thanks" | "inst" => {
                            let at = latex::skip_ws(text, full_r.end);
                            i = latex::brace_group(text, at)
                                .map(|g| g.end)
                                .unwrap_or(full_r.end);
                        }
                        "begin" | "end" => {
                            // Inline scanning treats environment markers as
                            // transparent; block structure is handled by
                            // run_blocks before we get here.
                            let at = latex::skip_ws(text, full_r.end);
                            i = latex::brace_group(text, at)
                                .map(|g| g.end)
                                .unwrap_or(full_r.end);
                        }
                        _ => {
                            // Unknown command: zero width, transparent to
                            // any following group content.
                            i = full_r.end;
                        }
                    }
                }
                _ => {
                    let ch = text[i..].chars().next().expect("in-bounds char");
                    add_glyphs!(1, i);
                    i += ch.len_utf8();
                }
            }
        }
        flush_word!();
    }

    /// Math body to glyph words: chunks split on top-level whitespace,
    /// commands one glyph each, scripts and braces zero.
    #[allow(unused_assignments)]
    fn math_items(&mut self, range: Range<usize>, items: &mut Vec<Item>, pending_sticky: &mut bool) {
        let text = self.text;
        let bytes = text.as_bytes();
        let mut i = range.start;
        let mut glyphs = 0usize;
        let mut src = range.start;
        macro_rules! flush {
            ($sticky:expr) => {
                if glyphs > 0 {
                    items.push(Item::Word {
                        glyphs,
                        src,
                        color: self.color,
                        sticky: $sticky,
                    });
                    glyphs = 0;
                    *pending_sticky = true;
                }
            };
        }
        let mut first = true;
        while i < range.end {
            match bytes[i] {
                b' ' | b'\t' | b'\n' | b'\r' => {
                    flush!(first && *pending_sticky);
                    if glyphs == 0 && !first {
                        *pending_sticky = false;
                    }
                    first = false;
                    i += 1;
                }
                b'{' | b'}' | b'^' | b'_' | b'&' => i += 1,
                b'\\' => {
                    let Some((name_r, full_r)) = latex::command_at(text, i) else {
                        i += 1;
                        continue;
                    };
                    let cmd = &text[name_r];
                    if cmd == "\\" {
                        flush!(first && *pending_sticky);
                        items.push(Item::Break);
                        first = false;
                        i = full_r.end;
                        continue;
                    }
                    if cmd == "label" || cmd == "tag" {
                        let at = latex::skip_ws(text, full_r.end);
                        i = latex::brace_group(text, at)
                            .map(|g| g.end)
                            .unwrap_or(full_r.end);
                        continue;
                    }
                    if glyphs == 0 {
                        src = i;
                    }
                    glyphs += 1;
                    i = full_r.end;
                }
                _ => {
                    let ch = text[i..].chars().next().expect("in-bounds char");
                    if glyphs == 0 {
                        src = i;
                    }
                    glyphs += 1;
                    i += ch.len_utf8();
                }
            }
        }
        flush!(first && *pending_sticky);
        *pending_sticky = false;
    }

    // ----- block scanning --------------------------------------------------

    fn run_blocks(&mut self, range: Range<usize>, ctx: Ctx) {
        let text = self.text;
        let bytes = text.as_bytes();
        let mut items: Vec<Item> = Vec::new();
        let mut para_from = range.start;
        let mut i = range.start;

        macro_rules! take_para {
            ($to:expr) => {
                if para_from < $to {
                    self.scan_inline(para_from..$to, &mut items);
                }
            };
        }
        macro_rules! flush_para {
            ($to:expr) => {
                take_para!($to);
                if !items.is_empty() {
                    self.layout_items(&items, ctx);
                    self.y += 4.0;
                    items.clear();
                }
            };
        }

        while i < range.end {
            match bytes[i] {
                b'\n' => {
                    let mut j = i + 1;
                    while j < range.end
                        && (bytes[j] == b' ' || bytes[j] == b'\t' || bytes[j] == b'\r')
                    {
                        j += 1;
                    }
                    if j < range.end && bytes[j] == b'\n' {
                        flush_para!(i);
                        while j < range.end && bytes[j].is_ascii_whitespace() {
                            j += 1;
                        }
                        i = j;
                        para_from = i;
                    } else {
                        i += 1;
                    }
                }
                b'$' if bytes.get(i + 1) == Some(&b'$') && !latex::is_escaped(text, i) => {
                    flush_para!(i);
                    let close = text[i + 2..]
                        .find("$$")
                        .map(|rel| i + 2 + rel)
                        .unwrap_or(range.end);
                    self.render_display_math(i + 2..close.min(range.end), false, ctx);
                    i = (close + 2).min(range.end);
                    para_from = i;
                }
                b'\\' => {
                    let Some((name_r, full_r)) = latex::command_at(text, i) else {
                        i += 1;
                        continue;
                    };
                    let cmd = text[name_r.clone()].to_string();
                    match cmd.as_str() {
                        "begin" => {
                            let brace = latex::skip_ws(text, full_r.end);
                            let Some((env, _)) = latex::env_name_at(text, brace) else {
                                i = full_r.end;
                                continue;
                            };
                            let env = env.to_string();
                            let Some(span) = latex::scan_env(text, i) else {
                                // Unclosed: render the rest as inline text.
                                i = full_r.end;
                                continue;
                            };
                            let handled = self.render_env(&env, &span, i, ctx, &mut items);
                            if handled {
                                flush_para!(i);
                                // ordering: flush first, then env block; we
                                // re-run since flush consumed items.
                            }
                            if handled {
                                self.render_env_block(&env, &span, i, ctx);
                                i = span.full.end.min(range.end);
                                para_from = i;
                            } else {
                                // Transparent environment: recurse into the
                                // body as part of the flow.
                                take_para!(i);
                                let inner_ctx = ctx;
                                // Scan body inline as paragraph content.
                                let _ = inner_ctx;
                                self.scan_inline(span.body.clone(), &mut items);
                                i = span.full.end.min(range.end);
                                para_from = i;
                            }
                        }
                        "section" | "section*" | "subsection" | "subsection*"
                        | "subsubsection" | "subsubsection*" | "chapter" | "chapter*" => {
                            flush_para!(i);
                            let starred = cmd.ends_with('*');
                            let level = match cmd.trim_end_matches('*') {
                                "chapter" => 0,
                                "section" => 1,
                                "subsection" => 2,
                                _ => 3,
                            };
                            let mut end = full_r.end;
                            let at = latex::skip_ws(text, end);
                            if let Some(o) = latex::bracket_group(text, at) {
                                end = o.end;
                            }
                            let at = latex::skip_ws(text, end);
                            let arg = latex::brace_group(text, at);
                            let title_range = arg
                                .as_ref()
                                .map(|g| g.start + 1..g.end - 1)
                                .unwrap_or(end..end);
                            if let Some(g) = &arg {
                                end = g.end;
                            }
                            self.render_heading(i, level, title_range, starred);
                            i = end;
                            para_from = i;
                        }
                        "maketitle" => {
                            flush_para!(i);
                            self.render_maketitle(i);
                            i = full_r.end;
                            para_from = i;
                        }
                        // Declarations render nothing where they stand;
                        // \maketitle consumes whatever was stored last.
                        "title" | "author" | "date" => {
                            flush_para!(i);
                            let mut end = full_r.end;
                            let at = latex::skip_ws(text, end);
                            if let Some(o) = latex::bracket_group(text, at) {
                                end = o.end;
                            }
                            let at = latex::skip_ws(text, end);
                            if let Some(g) = latex::brace_group(text, at) {
                                let arg = g.start + 1..g.end - 1;
                                match cmd.as_str() {
                                    "title" => self.title_arg = Some(arg),
                                    "author" => self.author_arg = Some(arg),
                                    _ => {}
                                }
                                end = g.end;
                            }
                            i = end;
                            para_from = i;
                        }
                        "[" => {
                            flush_para!(i);
                            let close = text[full_r.end..]
                                .find("\\]")
                                .map(|rel| full_r.end + rel)
                                .unwrap_or(range.end);
                            self.render_display_math(full_r.end..close.min(range.end), false, ctx);
                            i = (close + 2).min(range.end);
                            para_from = i;
                        }
                        "par" => {
                            flush_para!(i);
                            i = full_r.end;
                            para_from = i;
                        }
                        "item" if ctx.list_depth > 0 => {
                            flush_para!(i);
                            let mut end = full_r.end;
                            let at = latex::skip_inline_ws(text, end);
                            let mut label_glyphs = 0usize;
                            if let Some(o) = latex::bracket_group(text, at) {
                                label_glyphs = text[o.start + 1..o.end - 1].chars().count();
                                end = o.end;
                            }
                            // Marker hangs left of the item text.
                            if label_glyphs > 0 {
                                items.push(Item::Word {
                                    glyphs: label_glyphs,
                                    src: i,
                                    color: self.color,
                                    sticky: false,
                                });
                            } else {
                                items.push(Item::Box {
                                    w: 3.0,
                                    h: 3.0,
                                    src: i,
                                    color: self.color,
                                    sticky: false,
                                });
                            }
                            i = end;
                            para_from = i;
                        }
                        "caption" | "caption*" => {
                            // Outside floats a caption renders as plain
                            // text; inside floats render_float intercepts
                            // before we reach here.
                            i = full_r.end;
                        }
                        _ => {
                            // Inline command: absorbed into the paragraph.
                            take_para!(i);
                            let consumed =
                                self.consume_inline_command(i, full_r.clone(), &cmd, &mut items);
                            i = consumed;
                            para_from = i;
                        }
                    }
                }
                _ => i += 1,
            }
        }
        flush_para!(range.end);
    }

    /// Inline fallback inside run_blocks: scan exactly one command token
    /// (with its arguments) through the inline scanner.
    fn consume_inline_command(
        &mut self,
        start: usize,
        full_r: Range<usize>,
        _cmd: &str,
        items: &mut Vec<Item>,
    ) -> usize {
        // Delegate to scan_inline over a minimal range: the command plus
        // any brace/bracket arguments it consumes.
        let text = self.text;
        let mut end = full_r.end;
        loop {
            let at = latex::skip_inline_ws(text, end);
            if let Some(o) = latex::bracket_group(text, at) {
                end = o.end;
                continue;
            }
            if let Some(g) = latex::brace_group(text, at) {
                end = g.end;
                continue;
            }
            break;
        }
        self.scan_inline(start..end, items);
        end
    }

    fn render_env(
        &mut self,
        env: &str,
        _span: &latex::EnvSpan,
        _at: usize,
        _ctx: Ctx,
        _items: &mut [Item],
    ) -> bool {
        let base = env.strip_suffix('*').unwrap_or(env);
        matches!(
            base,
            "figure"
                | "table"
                | "algorithm"
                | "algorithmic"
                | "equation"
                | "align"
                | "gather"
                | "multline"
                | "eqnarray"
                | "displaymath"
                | "itemize"
                | "enumerate"
                | "description"
                | "abstract"
                | "tabular"
                | "center"
                | "quote"
                | "quotation"
        ) || latex::is_verbatim_env(env)
    }

    fn render_env_block(&mut self, env: &str, span: &latex::EnvSpan, at: usize, ctx: Ctx) {
        let base = env.strip_suffix('*').unwrap_or(env);
        let numbered = !env.ends_with('*');
        match base {
            "figure" | "table" | "algorithm" => self.render_float(base, span, ctx),
            "algorithmic" => self.render_algorithmic(span.body.clone(), ctx),
            "equation" | "align" | "gather" | "multline" | "eqnarray" | "displaymath" => {
                let numbered = numbered && base != "displaymath";
                self.render_display_math(span.body.clone(), numbered, ctx);
            }
            "itemize" | "enumerate" | "description" => {
                let mut inner = ctx;
                inner.left += 14.0 + ctx.list_depth as f64 * 16.0;
                inner.list_depth += 1;
                self.y += 3.0;
                self.run_blocks(span.body.clone(), inner);
                self.y += 3.0;
            }
            "abstract" => {
                let mut inner = ctx;
                inner.left += 30.0;
                inner.right -= 30.0;
                self.y += 6.0;
                self.run_blocks(span.body.clone(), inner);
                self.y += 6.0;
            }
            "tabular" => {
                self.render_tabular(span, at, ctx);
            }
            "center" | "quote" | "quotation" => {
                let mut inner = ctx;
                if base == "center" {
                    inner.align = Align::Center;
                } else {
                    inner.left += 20.0;
                    inner.right -= 20.0;
                }
                self.run_blocks(span.body.clone(), inner);
            }
            _ if latex::is_verbatim_env(env) => self.render_verbatim(span, ctx),
            _ => unreachable!("render_env gates the set"),
        }
    }

    fn render_display_math(&mut self, range: Range<usize>, numbered: bool, ctx: Ctx) {
        let mut items = Vec::new();
        let mut sticky = false;
        self.math_items(range.clone(), &mut items, &mut sticky);
        if numbered {
            self.ctr.equation += 1;
        }
        self.y += 6.0;
        // Rows split on Break; each row centered; the first row of a
        // numbered display carries "(n)" separated by a fixed gap.
        let rows: Vec<&[Item]> = items
            .split(|it| matches!(it, Item::Break))
            .filter(|r| !r.is_empty())
            .collect();
        let font = BODY;
        for (ri, row) in rows.iter().enumerate() {
            let mut w: f64 = 0.0;
            for (k, it) in row.iter().enumerate() {
                w += it.width(font);
                if k > 0 && !it.sticky() {
                    w += font.char_w;
                }
            }
            let number_glyphs = 3usize; // "(n)"
            let extra = if numbered && ri == 0 {
                18.0 + number_glyphs as f64 * font.char_w
            } else {
                0.0
            };
            let line_h = font.line_h + 2.0;
            self.ensure_space(line_h);
            let avail = ctx.right - ctx.left;
            let mut x = ctx.left + ((avail - w - extra) / 2.0).max(0.0);
            for (k, it) in row.iter().enumerate() {
                if k > 0 && !it.sticky() {
                    x += font.char_w;
                }
                let iw = it.width(font);
                if let Item::Word { glyphs, src, color, .. } = it {
                    let wd = (*glyphs as f64 * font.char_w - 1.0).max(1.0);
                    self.paint(x, self.y + line_h - font.ink_h - 2.0, wd, font.ink_h, *color, Some(*src));
                }
                x += iw;
            }
            if numbered && ri == 0 {
                let wd = number_glyphs as f64 * font.char_w - 1.0;
                self.paint(
                    x + 18.0,
                    self.y + line_h - font.ink_h - 2.0,
                    wd,
                    font.ink_h,
                    self.color,
                    Some(range.start),
                );
            }
            self.y += line_h;
        }
        self.y += 6.0;
    }

    fn render_heading(&mut self, src: usize, level: u8, title: Range<usize>, starred: bool) {
        let font = heading_font(level);
        self.vspace(8.0);
        let mut items: Vec<Item> = Vec::new();
        if !starred {
            let number = match level {
                0 | 1 => {
                    self.ctr.section += 1;
                    self.ctr.subsection = 0;
                    self.ctr.subsubsection = 0;
                    format!("{}", self.ctr.section)
                }
                2 => {
                    self.ctr.subsection += 1;
                    self.ctr.subsubsection = 0;
                    format!("{}.{}", self.ctr.section, self.ctr.subsection)
                }
                _ => {
                    self.ctr.subsubsection += 1;
                    format!(
                        "{}.{}.{}",
                        self.ctr.section, self.ctr.subsection, self.ctr.subsubsection
                    )
                }
            };
            items.push(Item::Word {
                glyphs: number.chars().count(),
                src,
                color: self.color,
                sticky: false,
            });
        }
        self.scan_inline(title, &mut items);
        let mut ctx = Ctx::body();
        ctx.font = font;
        self.layout_items(&items, ctx);
        self.y += 5.0;
    }

    fn render_maketitle(&mut self, src: usize) {
        self.vspace(4.0);
        let mut ctx = Ctx::body();
        ctx.align = Align::Center;
        if let Some(arg) = self.title_arg.clone() {
            let mut items = Vec::new();
            self.scan_inline(arg, &mut items);
            // Attribution folds onto the \maketitle command itself: the
            // argument lives in the preamble, outside every unit span.
            for it in &mut items {
                match it {
                    Item::Word { src: s, .. } | Item::Box { src: s, .. } => *s = src,
                    Item::FootnoteMark { src: s, .. } => *s = src,
                    Item::Break => {}
                }
            }
            let mut tctx = ctx;
            tctx.font = TITLE_FONT;
            self.layout_items(&items, tctx);
        }
        if let Some(arg) = self.author_arg.clone() {
            self.y += 4.0;
            let mut items = Vec::new();
            self.scan_inline(arg, &mut items);
            for it in &mut items {
                match it {
                    Item::Word { src: s, .. } | Item::Box { src: s, .. } => *s = src,
                    Item::FootnoteMark { src: s, .. } => *s = src,
                    Item::Break => {}
                }
            }
            self.layout_items(&items, ctx);
        }
        self.y += 10.0;
    }

    fn render_float(&mut self, base: &str, span: &latex::EnvSpan, ctx: Ctx) {
        let text = self.text;
        self.ensure_space(30.0);
        let ink_mark = self.inks.len();
        let page0 = self.page;
        let y0 = self.y;
        self.float_depth += 1;
        self.y += 8.0;

        // Body start: skip a placement option like [t!].
        let mut body = span.body.clone();
        let at = latex::skip_inline_ws(text, body.start);
        if let Some(o) = latex::bracket_group(text, at) {
            body.start = o.end;
        }

        // Walk the body: captions intercepted, everything else flows as
        // centered blocks.
        let mut i = body.start;
        let mut chunk_from = i;
        let mut fctx = ctx;
        fctx.align = Align::Center;
        macro_rules! flush_chunk {
            ($to:expr) => {
                if chunk_from < $to {
                    self.run_blocks(chunk_from..$to, fctx);
                }
            };
        }
        while i < body.end {
            if text.as_bytes()[i] != b'\\' {
                i += 1;
                continue;
            }
            let Some((name_r, full_r)) = latex::command_at(text, i) else {
                i += 1;
                continue;
            };
            match &text[name_r] {
                "begin" => match latex::scan_env(text, i) {
                    Some(inner) => i = inner.full.end.min(body.end),
                    None => break,
                },
                "caption" | "caption*" => {
                    flush_chunk!(i);
                    let mut end = full_r.end;
                    let at = latex::skip_ws(text, end);
                    if let Some(o) = latex::bracket_group(text, at) {
                        end = o.end;
                    }
                    let at = latex::skip_ws(text, end);
                    let Some(g) = latex::brace_group(text, at) else {
                        i = full_r.end;
                        chunk_from = i;
                        continue;
                    };
                    let (prefix, counter) = match base {
                        "figure" => {
                            self.ctr.figure += 1;
                            ("Figure", self.ctr.figure)
                        }
                        "table" => {
                            self.ctr.table += 1;
                            ("Table", self.ctr.table)
                        }
                        _ => {
                            self.ctr.algorithm += 1;
                            ("Algorithm", self.ctr.algorithm)
                        }
                    };
                    let label = format!("{prefix} {counter}:");
                    let mut items = vec![Item::Word {
                        glyphs: label.chars().count(),
                        src: i,
                        color: self.color,
                        sticky: false,
                    }];
                    self.scan_inline(g.start + 1..g.end - 1, &mut items);
                    self.y += 3.0;
                    let mut cctx = ctx;
                    cctx.font = SMALL;
                    cctx.left += 24.0;
                    cctx.right -= 24.0;
                    self.layout_items(&items, cctx);
                    i = g.end;
                    chunk_from = i;
                }
                _ => i = full_r.end,
            }
        }
        flush_chunk!(body.end);

        self.y += 8.0;
        self.float_depth -= 1;

        let h = self.y - y0;
        if self.float_depth == 0
            && page0 == self.page
            && y0 + h > CONTENT_BOTTOM
            && h <= CONTENT_BOTTOM - CONTENT_TOP
        {
            let dy = CONTENT_TOP - y0;
            for ink in &mut self.inks[ink_mark..] {
                ink.page += 1;
                ink.y += dy;
            }
            self.page = page0 + 1;
            self.max_page = self.max_page.max(self.page);
            self.y = y0 + h + dy;
        }
        if self.float_depth == 0 {
            let page = self.page;
            for entry in std::mem::take(&mut self.float_notes) {
                self.notes.entry(page).or_default().push(entry);
            }
        }
    }

    fn render_verbatim(&mut self, span: &latex::EnvSpan, ctx: Ctx) {
        let text = self.text;
        let mut body = span.body.clone();
        // lstlisting options come right after \begin{lstlisting}.
        let at = latex::skip_inline_ws(text, body.start);
        if let Some(o) = latex::bracket_group(text, at) {
            body.start = o.end;
        }
        let font = MONO;
        self.y += 5.0;
        let raw = &text[body.clone()];
        let mut offset = body.start;
        for line in raw.split_inclusive('\n') {
            let content = line.strip_suffix('\n').unwrap_or(line);
            let expanded_lead = content.chars().take_while(|c| *c == ' ' || *c == '\t').fold(
                0usize,
                |acc, c| acc + if c == '\t' { 4 } else { 1 },
            );
            let trimmed = content.trim();
            if !trimmed.is_empty() {
                self.ensure_space(font.line_h);
                let x = ctx.left + expanded_lead as f64 * font.char_w;
                let glyphs = trimmed.chars().count();
                let w = (glyphs as f64 * font.char_w - 1.0).max(1.0);
                self.paint(
                    x,
                    self.y + font.line_h - font.ink_h - 2.0,
                    w.min(ctx.right - x),
                    font.ink_h,
                    self.color,
                    Some(offset + (content.len() - content.trim_start().len())),
                );
            }
            self.y += font.line_h;
            offset += line.len();
        }
        self.y += 5.0;
    }

    fn render_algorithmic(&mut self, body: Range<usize>, ctx: Ctx) {
        const STATEMENT_HEADS: &[&str] = &[
            "State", "For", "ForAll", "While", "If", "ElsIf", "Else", "EndIf", "EndFor",
            "EndWhile", "Return", "Require", "Ensure", "Repeat", "Until", "Procedure",
            "EndProcedure", "Function", "EndFunction", "Loop", "EndLoop", "Comment",
        ];
        let text = self.text;
        let bytes = text.as_bytes();
        let mut starts: Vec<usize> = Vec::new();
        let mut i = body.start;
        while i < body.end {
            if bytes[i] == b'\\' {
                if let Some((name_r, full_r)) = latex::command_at(text, i) {
                    if STATEMENT_HEADS.contains(&&text[name_r.clone()]) {
                        starts.push(i);
                    }
                    i = full_r.end;
                    continue;
                }
            }
            i += 1;
        }
        let mut lctx = ctx;
        lctx.left += 10.0;
        lctx.align = Align::Left;
        self.y += 3.0;
        if starts.is_empty() {
            self.run_blocks(body, lctx);
        } else {
            for (k, &s) in starts.iter().enumerate() {
                let end = starts.get(k + 1).copied().unwrap_or(body.end);
                let (_, full_r) = latex::command_at(text, s).expect("statement head");
                let mut items = vec![Item::Word {
                    glyphs: 2,
                    src: s,
                    color: self.color,
                    sticky: false,
                }];
                self.scan_inline(full_r.end..end, &mut items);
                self.layout_items(&items, lctx);
            }
        }
        self.y += 3.0;
    }

    fn render_tabular(&mut self, span: &latex::EnvSpan, at_src: usize, ctx: Ctx) {
        let text = self.text;
        let mut body = span.body.clone();
        // Column spec group follows \begin{tabular}.
        let at = latex::skip_ws(text, body.start);
        if let Some(o) = latex::bracket_group(text, at) {
            body.start = latex::skip_ws(text, o.end);
        }
        let at = latex::skip_ws(text, body.start);
        if let Some(g) = latex::brace_group(text, at) {
            body.start = g.end;
        }

        // Split into rows on \\ and cells on &, depth-aware.
        struct Row {
            cells: Vec<Range<usize>>,
            hline_before: Option<usize>,
        }
        let mut rows: Vec<Row> = Vec::new();
        let mut cell_start = body.start;
        let mut cells: Vec<Range<usize>> = Vec::new();
        let mut pending_hline: Option<usize> = None;
        let bytes = text.as_bytes();
        let mut i = body.start;
        let mut depth = 0i32;
        macro_rules! close_row {
            ($end:expr) => {
                cells.push(cell_start..$end);
                let has_content = cells
                    .iter()
                    .any(|c| !text[c.clone()].trim().is_empty());
                if has_content {
                    rows.push(Row {
                        cells: std::mem::take(&mut cells),
                        hline_before: pending_hline.take(),
                    });
                } else if pending_hline.is_some() && !rows.is_empty() {
                    // trailing \hline after the last row
                    rows.push(Row {
                        cells: std::mem::take(&mut cells),
                        hline_before: pending_hline.take(),
                    });
                } else {
                    cells.clear();
                }
            };
        }
        while i < body.end {
            match bytes[i] {
                b'{' => {
                    depth += 1;
                    i += 1;
                }
                b'}' => {
                    depth -= 1;
                    i += 1;
                }
                b'&' if depth == 0 && !latex::is_escaped(text, i) => {
                    cells.push(cell_start..i);
                    i += 1;
                    cell_start = i;
                }
                b'\\' => {
                    let Some((name_r, full_r)) = latex::command_at(text, i) else {
                        i += 1;
                        continue;
                    };
                    match &text[name_r] {
                        "\\" if depth == 0 => {
                            close_row!(i);
                            let after = latex::skip_inline_ws(text, full_r.end);
                            i = latex::bracket_group(text, after)
                                .map(|g| g.end)
                                .unwrap_or(full_r.end);
                            cell_start = i;
                        }
                        "hline" if depth == 0 => {
                            if pending_hline.is_none() {
                                pending_hline = Some(i);
                            }
                            i = full_r.end;
                            cell_start = i;
                        }
                        "begin" => match latex::scan_env(text, i) {
                            Some(inner) => i = inner.full.end.min(body.end),
                            None => i = full_r.end,
                        },
                        _ => i = full_r.end,
                    }
                }
                _ => i += 1,
            }
        }
        close_row!(body.end);

        // Scan cells into items (color scoped per cell) and measure.
        let font = ctx.font;
        let mut parsed: Vec<(Option<usize>, Vec<Vec<Item>>)> = Vec::new();
        let mut col_w: Vec<f64> = Vec::new();
        for row in &rows {
            let mut row_items: Vec<Vec<Item>> = Vec::new();
            for (ci, cell) in row.cells.iter().enumerate() {
                let saved = self.color;
                let mut items = Vec::new();
                self.scan_inline(cell.clone(), &mut items);
                self.color = saved;
                let mut w = 0.0;
                for (k, it) in items.iter().enumerate() {
                    w += it.width(font);
                    if k > 0 && !it.sticky() {
                        w += font.char_w;
                    }
                }
                if col_w.len() <= ci {
                    col_w.push(0.0);
                }
                col_w[ci] = col_w[ci].max(w);
                row_items.push(items);
            }
            parsed.push((row.hline_before, row_items));
        }
        let pad = 12.0;
        let table_w: f64 = col_w.iter().map(|w| w + pad).sum::<f64>() - pad.min(0.0);
        let x0 = ctx.left + ((ctx.right - ctx.left - table_w) / 2.0).max(0.0);
        let row_h = font.line_h + 2.0;

        self.y += 4.0;
        for (hline, row_items) in &parsed {
            if let Some(h_src) = hline {
                self.ensure_space(2.0);
                self.paint(x0, self.y, table_w, 0.6, self.color, Some(*h_src));
                self.y += 2.0;
            }
            if row_items.iter().all(|c| c.is_empty()) {
                continue;
            }
            self.ensure_space(row_h);
            let mut cx = x0;
            for (ci, items) in row_items.iter().enumerate() {
                let mut x = cx;
                for (k, it) in items.iter().enumerate() {
                    if k > 0 && !it.sticky() {
                        x += font.char_w;
                    }
                    let iw = it.width(font);
                    match it {
                        Item::Word { glyphs, src, color, .. } => {
                            let w = (*glyphs as f64 * font.char_w - 1.0).max(1.0);
                            self.paint(
                                x,
                                self.y + row_h - font.ink_h - 2.0,
                                w,
                                font.ink_h,
                                *color,
                                Some(*src),
                            );
                        }
                        Item::Box { w, h, src, color, .. } => {
                            self.paint(x, self.y + row_h - h - 2.0, *w, *h, *color, Some(*src));
                        }
                        _ => {}
                    }
                    x += iw;
                }
                cx += col_w[ci] + pad;
            }
            self.y += row_h;
        }
        let _ = at_src;
        self.y += 4.0;
    }

    // ----- finalize ---------------------------------------------------------

    fn finalize(mut self) -> TypesetDoc {
        let total_pages = self.max_page.max(self.page) + 1;

        // Footnote blocks live in the bottom margin: a short separator
        // rule, then the notes, numbered in document order.
        let notes = std::mem::take(&mut self.notes);
        let mut note_number = 0usize;
        for (page, page_notes) in notes {
            let mut y = CONTENT_BOTTOM + 4.0;
            self.inks.push(Ink {
                page,
                x: CONTENT_LEFT,
                y,
                w: 108.0,
                h: 0.5,
                color: BLACK,
                src: None,
            });
            y += 3.0;
            let font = SMALL;
            for (src, items) in page_notes {
                note_number += 1;
                let mut line: Vec<(f64, Item)> = Vec::new();
                let mark_color = items
                    .iter()
                    .find_map(|it| match it {
                        Item::Word { color, .. } | Item::Box { color, .. } => Some(*color),
                        _ => None,
                    })
                    .unwrap_or(BLACK);
                line.push((
                    CONTENT_LEFT,
                    Item::Word {
                        glyphs: note_number.to_string().len(),
                        src,
                        color: mark_color,
                        sticky: false,
                    },
                ));
                let mut x = CONTENT_LEFT + note_number.to_string().len() as f64 * font.char_w + 3.0;
                for it in items {
                    let w = it.width(font);
                    let gap = if it.sticky() { 0.0 } else { font.char_w };
                    let gap = if line.len() == 1 { 0.0 } else { gap };
                    if x + gap + w > CONTENT_RIGHT {
                        // paint the full line
                        for (ix, item) in line.drain(..) {
                            paint_note_item(&mut self.inks, page, ix, y, &item, font);
                        }
                        y += font.line_h;
                        x = CONTENT_LEFT + 10.0;
                    }
                    if y > PAGE_H - 10.0 {
                        break;
                    }
                    line.push((x + gap, it));
                    x += gap + w;
                }
                for (ix, item) in line.drain(..) {
                    paint_note_item(&mut self.inks, page, ix, y, &item, font);
                }
                y += font.line_h;
                if y > PAGE_H - 10.0 {
                    break;
                }
            }
        }

        // Page numbers: black, centered, unattributed.
        for page in 0..total_pages {
            self.inks.push(Ink {
                page,
                x: PAGE_W / 2.0 - 2.5,
                y: 764.0,
                w: 5.0,
                h: 6.0,
                color: BLACK,
                src: None,
            });
        }

        TypesetDoc {
            pages: total_pages,
            inks: self.inks,
        }
    }
}

fn paint_note_item(inks: &mut Vec<Ink>, page: usize, x: f64, y: f64, item: &Item, font: Font) {
    match item {
        Item::Word { glyphs, src, color, .. } => {
            let w = (*glyphs as f64 * font.char_w - 1.0).max(1.0);
            inks.push(Ink {
                page,
                x,
                y: y + font.line_h - font.ink_h - 2.0,
                w,
                h: font.ink_h,
                color: *color,
                src: Some(*src),
            });
        }
        Item::Box { w, h, src, color, .. } => {
            inks.push(Ink {
                page,
                x,
                y: y + font.line_h - h - 2.0,
                w: *w,
                h: *h,
                color: *color,
                src: Some(*src),
            });
        }
        _ => {}
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn doc(body: &str) -> String {
        format!("\\documentclass{{article}}\n\\begin{{document}}\n{body}\n\\end{{document}}\n")
    }

    #[test]
    fn simple_paragraph_produces_word_inks() {
        let src = doc("hello wide world");
        let out = typeset(&src, &NoResources);
        let words: Vec<&Ink> = out.inks.iter().filter(|i| i.src.is_some()).collect();
        assert_eq!(words.len(), 3);
        assert!(words[0].x < words[1].x && words[1].x < words[2].x);
        assert_eq!(words[0].y, words[1].y);
        // src offsets point at the actual words
        let w0 = words[0].src.unwrap();
        assert_eq!(&src[w0..w0 + 5], "hello");
    }

    #[test]
    fn geometry_invariant_under_color_wrapping() {
        let plain = doc("alpha beta\n\ngamma $x+y$ delta\n\n\\begin{itemize}\\item one\\item two\\end{itemize}");
        let wrapped = doc("{\\color{white}alpha beta}\n\n{\\color{black}gamma $x+y$ delta}\n\n\\begin{itemize}\\color{white}\\item one\\item two\\end{itemize}");
        let a = typeset(&plain, &NoResources);
        let b = typeset(&wrapped, &NoResources);
        assert_eq!(a.pages, b.pages);
        let geo = |d: &TypesetDoc| -> Vec<(usize, i64, i64, i64, i64)> {
            d.inks
                .iter()
                .map(|i| {
                    (
                        i.page,
                        (i.x * 1000.0).round() as i64,
                        (i.y * 1000.0).round() as i64,
                        (i.w * 1000.0).round() as i64,
                        (i.h * 1000.0).round() as i64,
                    )
                })
                .collect()
        };
        assert_eq!(geo(&a), geo(&b), "color wrapping must not move ink");
        // and the wrapped version actually changed colors
        assert!(b.inks.iter().any(|i| i.color == WHITE));
        assert!(a.inks.iter().all(|i| i.color == BLACK));
    }

    #[test]
    fn group_close_restores_color() {
        let src = doc("{\\color{white}hidden} visible");
        let out = typeset(&src, &NoResources);
        let attributed: Vec<&Ink> = out.inks.iter().filter(|i| i.src.is_some()).collect();
        assert_eq!(attributed.len(), 2);
        assert_eq!(attributed[0].color, WHITE);
        assert_eq!(attributed[1].color, BLACK);
    }

    #[test]
    fn long_paragraph_wraps_and_breaks_pages() {
        let long: String = (0..2200).map(|k| format!("w{k} ")).collect();
        let src = doc(&long);
        let out = typeset(&src, &NoResources);
        assert!(out.pages >= 2, "expected page break, got {} page(s)", out.pages);
        let attributed: Vec<&Ink> = out.inks.iter().filter(|i| i.src.is_some()).collect();
        assert!(attributed.iter().any(|i| i.page == 1));
        for ink in attributed {
            assert!(ink.y >= CONTENT_TOP - 1e-9);
            assert!(ink.y + ink.h <= CONTENT_BOTTOM + 1e-9);
            assert!(ink.x >= CONTENT_LEFT - 1e-9 && ink.x + ink.w <= CONTENT_RIGHT + 1e-9);
        }
    }

    #[test]
    fn rule_and_image_same_geometry() {
        // An includegraphics with explicit dims and a rule with the same
        // dims must occupy identical space for the diff to cancel.
        let a = doc("x \\includegraphics[width=120pt,height=90pt]{p.png} y");
        let b = doc("x \\rule{120pt}{90pt} y");
        let ta = typeset(&a, &NoResources);
        let tb = typeset(&b, &NoResources);
        let geo = |d: &TypesetDoc| -> Vec<(i64, i64, i64, i64)> {
            d.inks
                .iter()
                .filter(|i| i.src.is_some())
                .map(|i| {
                    (
                        (i.x * 1000.0).round() as i64,
                        (i.y * 1000.0).round() as i64,
                        (i.w * 1000.0).round() as i64,
                        (i.h * 1000.0).round() as i64,
                    )
                })
                .collect()
        };
        assert_eq!(geo(&ta), geo(&tb));
    }

    #[test]
    fn graphic_box_size_rules() {
        assert_eq!(graphic_box_size("", Some((120, 90))), (120.0, 90.0));
        assert_eq!(graphic_box_size("width=60pt", Some((120, 90))), (60.0, 45.0));
        assert_eq!(graphic_box_size("height=45pt", Some((120, 90))), (60.0, 45.0));
        assert_eq!(
            graphic_box_size("width=2in,height=1in", None),
            (144.0, 72.0)
        );
        assert_eq!(graphic_box_size("scale=0.5", Some((120, 90))), (60.0, 45.0));
        assert_eq!(graphic_box_size("", None), (100.0, 75.0));
    }

    #[test]
    fn dimension_parsing() {
        assert_eq!(parse_dimension("72pt"), Some(72.0));
        assert_eq!(parse_dimension("1in"), Some(72.0));
        assert_eq!(parse_dimension("25.4mm"), Some(72.0));
        assert_eq!(parse_dimension("0.5\\textwidth"), Some(234.0));
        assert_eq!(parse_dimension("\\linewidth"), Some(468.0));
        assert_eq!(parse_dimension("junk"), None);
    }

    #[test]
    fn footnote_renders_mark_and_bottom_note() {
        let src = doc("body text\\footnote{the note} more");
        let out = typeset(&src, &NoResources);
        // note ink lives in the bottom margin
        let note_inks: Vec<&Ink> = out
            .inks
            .iter()
            .filter(|i| i.src.is_some() && i.y > CONTENT_BOTTOM)
            .collect();
        assert!(!note_inks.is_empty(), "note text below content area");
        // separator rule is unattributed black
        assert!(out
            .inks
            .iter()
            .any(|i| i.src.is_none() && i.h < 1.0 && i.color == BLACK));
        let note_src = src.find("the note").unwrap();
        assert!(note_inks.iter().any(|i| {
            let s = i.src.unwrap();
            s >= src.find("\\footnote").unwrap() && s <= note_src + 8
        }));
    }

    #[test]
    fn footnote_body_color_follows_inner_switch() {
        let src = doc("x{\\color{white}\\footnote{\\color{white}hidden note}} y");
        let out = typeset(&src, &NoResources);
        let note_inks: Vec<&Ink> = out
            .inks
            .iter()
            .filter(|i| i.src.is_some() && i.y > CONTENT_BOTTOM)
            .collect();
        assert!(!note_inks.is_empty());
        assert!(note_inks.iter().all(|i| i.color == WHITE));
    }

    #[test]
    fn hyperref_colorlinks_colors_refs_until_neutralized() {
        let colored = "\\documentclass{article}\n\\usepackage[colorlinks=true,linkcolor=red]{hyperref}\n\\begin{document}\nsee \\ref{x}\n\\end{document}\n";
        let out = typeset(colored, &NoResources);
        assert!(out.inks.iter().any(|i| i.color == Rgb(1.0, 0.0, 0.0)));
        let neutral = colored.replace("colorlinks=true", "colorlinks=false");
        let out = typeset(&neutral, &NoResources);
        assert!(out.inks.iter().all(|i| i.color == BLACK));
    }

    #[test]
    fn maketitle_ink_attributed_to_command() {
        let src = "\\documentclass{article}\n\\title{A Long Paper Name}\n\\author{Someone}\n\\begin{document}\n\\maketitle\n\nbody\n\\end{document}\n";
        let out = typeset(src, &NoResources);
        let mt = src.find("\\maketitle").unwrap();
        let title_inks: Vec<&Ink> = out
            .inks
            .iter()
            .filter(|i| i.src == Some(mt))
            .collect();
        assert!(title_inks.len() >= 5, "title and author words fold onto maketitle");
    }

    #[test]
    fn body_declared_title_renders_only_at_maketitle() {
        let src = "\\documentclass{article}\n\\begin{document}\n\\title{A Long Paper Name}\n\\author{Someone}\n\\maketitle\n\nbody\n\\end{document}\n";
        let out = typeset(src, &NoResources);
        let mt = src.find("\\maketitle").unwrap();
        let title_inks = out.inks.iter().filter(|i| i.src == Some(mt)).count();
        assert!(title_inks >= 5, "declarations feed maketitle: {title_inks}");
        // The declaration site itself draws nothing.
        let decl = src.find("\\title").unwrap();
        let decl_end = src.find("\\maketitle").unwrap();
        assert!(out
            .inks
            .iter()
            .all(|i| !matches!(i.src, Some(s) if s >= decl && s < decl_end)));
    }

    #[test]
    fn equation_number_stays_near_content() {
        let src = doc("\\begin{equation}E = m c^2\\end{equation}");
        let out = typeset(&src, &NoResources);
        let attributed: Vec<&Ink> = out.inks.iter().filter(|i| i.src.is_some()).collect();
        let min_x = attributed.iter().map(|i| i.x).fold(f64::MAX, f64::min);
        let max_x = attributed.iter().map(|i| i.x + i.w).fold(0.0, f64::max);
        // No gap larger than 5% of page width between any adjacent inks on
        // the line, so a column-split pass keeps the equation whole.
        let mut xs: Vec<(f64, f64)> = attributed.iter().map(|i| (i.x, i.x + i.w)).collect();
        xs.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap());
        for w in xs.windows(2) {
            assert!(w[1].0 - w[0].1 < 0.05 * PAGE_W, "gap too wide: {xs:?}");
        }
        assert!(max_x - min_x > 30.0, "content plus number spread");
    }

    #[test]
    fn verbatim_lines_render_literally() {
        let src = doc("\\begin{verbatim}\nfirst line\n    indented %$\\\n\\end{verbatim}");
        let out = typeset(&src, &NoResources);
        let attributed: Vec<&Ink> = out.inks.iter().filter(|i| i.src.is_some()).collect();
        assert_eq!(attributed.len(), 2);
        assert!(attributed[1].x > attributed[0].x, "indentation preserved");
        assert!(attributed[1].y > attributed[0].y);
    }

    #[test]
    fn float_moves_to_next_page_atomically() {
        // Fill most of page one, then a tall figure: the figure's inks all
        // land on page two.
        let filler: String = (0..150).map(|k| format!("word{k} ")).collect();
        let src = doc(&format!(
            "{filler}\n\n\\begin{{figure}}\\rule{{200pt}}{{400pt}}\\caption{{big}}\\end{{figure}}"
        ));
        let out = typeset(&src, &NoResources);
        let rule_src = src.find("\\rule").unwrap();
        let cap_src = src.find("\\caption").unwrap();
        let float_inks: Vec<&Ink> = out
            .inks
            .iter()
            .filter(|i| matches!(i.src, Some(s) if s == rule_src || s == cap_src))
            .collect();
        assert!(!float_inks.is_empty());
        let pages: std::collections::BTreeSet<usize> =
            float_inks.iter().map(|i| i.page).collect();
        assert_eq!(pages.len(), 1, "float kept on one page");
    }

    #[test]
    fn tabular_rows_and_hlines() {
        let src = doc("\\begin{table}\\begin{tabular}{ll}\\hline a & bb \\\\ ccc & d \\\\ \\hline\\end{tabular}\\caption{t}\\end{table}");
        let out = typeset(&src, &NoResources);
        let attributed: Vec<&Ink> = out.inks.iter().filter(|i| i.src.is_some()).collect();
        let hlines: Vec<&&Ink> = attributed.iter().filter(|i| i.h < 1.0).collect();
        assert_eq!(hlines.len(), 2);
        let cells: Vec<&&Ink> = attributed
            .iter()
            .filter(|i| i.h > 1.0 && i.h < 8.0 && i.y < CONTENT_BOTTOM)
            .collect();
        assert!(cells.len() >= 4 + 2, "4 cells + caption words, got {}", cells.len());
    }

    #[test]
    fn page_numbers_on_every_page_unattributed() {
        let long: String = (0..2200).map(|k| format!("w{k} ")).collect();
        let out = typeset(&doc(&long), &NoResources);
        let pn: Vec<&Ink> = out
            .inks
            .iter()
            .filter(|i| i.src.is_none() && i.y > 760.0)
            .collect();
        assert_eq!(pn.len(), out.pages);
        assert!(pn.iter().all(|i| i.color == BLACK));
    }

    #[test]
    fn section_numbering_sequence() {
        let src = doc("\\section{A}\n\n\\subsection{A1}\n\n\\section{B}\n\ntext");
        let out = typeset(&src, &NoResources);
        // all three headings produce number words attributed to the
        // section commands
        let s1 = src.find("\\section{A}").unwrap();
        let s2 = src.find("\\subsection{A1}").unwrap();
        let s3 = src.find("\\section{B}").unwrap();
        for s in [s1, s2, s3] {
            assert!(out.inks.iter().any(|i| i.src == Some(s)));
        }
    }
}
