//! Color-isolation rendering.
//!
//! Each unit is rendered once as the only black content on an otherwise
//! white document, rasterized, and subtracted from a shared all-white
//! baseline. The differing pixels, clustered by horizontal gaps, are the
//! unit's boxes. Wrapping inserts only zero-width color commands (and
//! replaces non-target graphics with same-sized rules), so page geometry
//! is identical across all variants and the baseline.
//!
//! `trace_unit_boxes` computes the same boxes from typesetter ink
//! bookkeeping without touching pixels, giving an independent route for
//! validating the raster path.

pub mod diff;
pub mod engine;
pub mod pdf;
pub mod typeset;

use std::collections::BTreeMap;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::annotate::{AnnotatedUnit, Relation, RelationKind};
use crate::bbox::BBox;
use crate::config::RenderConfig;
use crate::error::RenderError;
use crate::latex;
use crate::segment::EnvKind;
use crate::source::SourceTree;
use engine::{LatexEngine, Rasterizer};
use typeset::ImageDims;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SplitKind {
    None,
    CrossPage,
    CrossColumn,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum UnitRenderStatus {
    Ok,
    WrapFailed,
    EmptyDiff,
    Failed,
}

#[derive(Debug, Clone)]
pub struct UnitRender {
    pub status: UnitRenderStatus,
    pub boxes: Vec<BBox>,
    pub split_kind: SplitKind,
}

#[derive(Debug, Clone)]
pub struct RenderOutcome {
    pub page_count: usize,
    pub units: Vec<UnitRender>,
    /// Same-unit relations between the boxes of split units.
    pub relations: Vec<Relation>,
    pub warnings: Vec<String>,
}

// ----- wrapping ----------------------------------------------------------------

#[derive(Clone, Copy, PartialEq)]
enum WrapMode {
    /// `{\color{C} ... }` around the whole span.
    Group,
    /// `\color{C}` inserted after the environment header, re-asserted
    /// after each child hole. Floats escape groups, so a group wrap
    /// would not color them reliably.
    Internal,
}

fn wrap_mode(kind: EnvKind) -> WrapMode {
    match kind {
        EnvKind::Figure | EnvKind::Table | EnvKind::Algorithm | EnvKind::List => {
            WrapMode::Internal
        }
        _ => WrapMode::Group,
    }
}

/// Why a unit cannot be color-wrapped, or `None` when it can. An
/// unwrappable unit is left untouched in every variant and the
/// baseline: it renders in the default color everywhere and cancels in
/// the diff.
pub fn wrap_problem(text: &str, units: &[AnnotatedUnit], idx: usize) -> Option<String> {
    let unit = &units[idx];
    let span_text = &text[unit.span.clone()];
    if !latex::braces_balanced(span_text) {
        return Some("span has unbalanced braces".to_string());
    }
    if !latex::envs_balanced(span_text) {
        return Some("span has unbalanced environments".to_string());
    }
    if wrap_mode(unit.kind) == WrapMode::Internal {
        let at = latex::skip_ws(text, unit.span.start);
        if internal_switch_pos(text, at).is_none() {
            return Some("environment header not found".to_string());
        }
    }
    None
}

/// Position right after `\begin{env}` plus an optional `[...]` argument.
fn internal_switch_pos(text: &str, at: usize) -> Option<usize> {
    let (name_r, full_r) = latex::command_at(text, at)?;
    if &text[name_r] != "begin" {
        return None;
    }
    let brace = latex::skip_ws(text, full_r.end);
    let g = latex::brace_group(text, brace)?;
    let after = latex::skip_inline_ws(text, g.end);
    Some(match latex::bracket_group(text, after) {
        Some(o) => o.end,
        None => g.end,
    })
}

/// Position just inside the brace argument of a `\footnote` span.
fn footnote_arg_interior(text: &str, span_start: usize) -> Option<usize> {
    let (_, full_r) = latex::command_at(text, span_start)?;
    let mut at = latex::skip_ws(text, full_r.end);
    if let Some(o) = latex::bracket_group(text, at) {
        at = latex::skip_ws(text, o.end);
    }
    let g = latex::brace_group(text, at)?;
    Some(g.start + 1)
}

struct Event {
    pos: usize,
    order: u32,
    text: String,
    /// For replacements: resume the source at this offset.
    skip_to: Option<usize>,
}

struct Graphic {
    cmd_start: usize,
    cmd_end: usize,
    width_pt: f64,
    height_pt: f64,
}

/// All `\includegraphics` occurrences outside verbatim, with the box
/// size the typesetter will give each one.
fn find_graphics(text: &str, dims: &dyn ImageDims) -> Vec<Graphic> {
    let bytes = text.as_bytes();
    let mut out = Vec::new();
    let mut i = 0usize;
    while i < text.len() {
        match bytes[i] {
            b'%' if !latex::is_escaped(text, i) => i = latex::line_end(text, i),
            b'\\' => {
                let Some((name_r, full_r)) = latex::command_at(text, i) else {
                    i += 1;
                    continue;
                };
                match &text[name_r] {
                    "begin" if latex::env_name_at(text, latex::skip_ws(text, full_r.end))
                        .is_some_and(|(n, _)| latex::is_verbatim_env(n)) =>
                    {
                        i = latex::scan_env(text, i)
                            .map(|s| s.full.end)
                            .unwrap_or(text.len());
                    }
                    "verb" | "verb*" => {
                        if let Some(delim) = text[full_r.end..].chars().next() {
                            let start = full_r.end + delim.len_utf8();
                            i = text[start..]
                                .find(delim)
                                .map(|rel| start + rel + delim.len_utf8())
                                .unwrap_or(text.len());
                        } else {
                            i = full_r.end;
                        }
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
                        let (w, h) = typeset::graphic_box_size(opts, dims.dims_px(path));
                        out.push(Graphic {
                            cmd_start: i,
                            cmd_end: g.end,
                            width_pt: w,
                            height_pt: h,
                        });
                        i = g.end;
                    }
                    _ => i = full_r.end,
                }
            }
            _ => i += 1,
        }
    }
    out
}

fn innermost_unit(units: &[AnnotatedUnit], pos: usize) -> Option<usize> {
    let mut best: Option<usize> = None;
    for (idx, unit) in units.iter().enumerate() {
        if unit.span.contains(&pos) {
            best = match best {
                None => Some(idx),
                Some(b) if units[b].span.start <= unit.span.start => Some(idx),
                keep => keep,
            };
        }
    }
    best
}

fn unit_depth(units: &[AnnotatedUnit], mut idx: usize) -> u32 {
    let mut depth = 0;
    while let Some(p) = units[idx].parent {
        depth += 1;
        idx = p;
        if depth > 64 {
            break;
        }
    }
    depth
}

/// Builds the source for one isolation variant: the target unit black,
/// every other wrappable unit white, graphics outside the target
/// replaced by same-sized rules. `target: None` builds the baseline.
pub fn build_isolation_source(
    text: &str,
    units: &[AnnotatedUnit],
    skip: &[bool],
    dims: &dyn ImageDims,
    target: Option<usize>,
) -> String {
    let color = |idx: usize| if Some(idx) == target { "black" } else { "white" };
    let mut events: Vec<Event> = Vec::new();

    // Color support for external engines; zero-width for the builtin.
    if !text.contains("xcolor") {
        let inject_at = text.find("\\begin{document}").unwrap_or(0);
        events.push(Event {
            pos: inject_at,
            order: 0,
            text: "\\usepackage{xcolor}\n".to_string(),
            skip_to: None,
        });
    }

    for (idx, unit) in units.iter().enumerate() {
        if skip[idx] {
            continue;
        }
        let c = color(idx);
        let depth = unit_depth(units, idx);
        match wrap_mode(unit.kind) {
            WrapMode::Group => {
                events.push(Event {
                    pos: unit.span.start,
                    order: 100 + depth,
                    text: format!("{{\\color{{{c}}}"),
                    skip_to: None,
                });
                events.push(Event {
                    pos: unit.span.end,
                    order: 50u32.saturating_sub(depth),
                    text: "}".to_string(),
                    skip_to: None,
                });
                if unit.kind == EnvKind::Footnote {
                    // Real engines typeset the note body outside the
                    // group, so the color is re-stated inside the
                    // argument.
                    if let Some(inner) = footnote_arg_interior(text, unit.span.start) {
                        events.push(Event {
                            pos: inner,
                            order: 200,
                            text: format!("\\color{{{c}}} "),
                            skip_to: None,
                        });
                    }
                }
            }
            WrapMode::Internal => {
                let at = latex::skip_ws(text, unit.span.start);
                let switch_at = internal_switch_pos(text, at).expect("checked by wrap_problem");
                events.push(Event {
                    pos: switch_at,
                    order: 90,
                    text: format!("\\color{{{c}}} "),
                    skip_to: None,
                });
                for child in units.iter().enumerate().filter(|(_, u)| u.parent == Some(idx)) {
                    events.push(Event {
                        pos: child.1.span.end,
                        order: 60,
                        text: format!("\\color{{{c}}} "),
                        skip_to: None,
                    });
                }
            }
        }
    }

    for g in find_graphics(text, dims) {
        let owner = innermost_unit(units, g.cmd_start);
        if owner.is_some() && owner == target {
            continue;
        }
        events.push(Event {
            pos: g.cmd_start,
            order: 150,
            text: format!("\\rule{{{}pt}}{{{}pt}}", g.width_pt, g.height_pt),
            skip_to: Some(g.cmd_end),
        });
    }

    events.sort_by_key(|e| (e.pos, e.order));
    let mut out = String::with_capacity(text.len() + events.len() * 16);
    let mut cursor = 0usize;
    for event in events {
        if event.pos < cursor {
            debug_assert!(false, "wrap event inside a replaced range");
            continue;
        }
        out.push_str(&text[cursor..event.pos]);
        out.push_str(&event.text);
        cursor = event.skip_to.unwrap_or(event.pos);
    }
    out.push_str(&text[cursor..]);
    out
}

// ----- box unification ----------------------------------------------------------

fn order_boxes(boxes: &mut [BBox]) {
    boxes.sort_by_key(|b| (b.page_index, b.x0, b.y0));
}

pub fn split_kind_of(boxes: &[BBox]) -> SplitKind {
    if boxes.len() < 2 {
        return SplitKind::None;
    }
    let first_page = boxes[0].page_index;
    if boxes.iter().any(|b| b.page_index != first_page) {
        SplitKind::CrossPage
    } else {
        SplitKind::CrossColumn
    }
}

fn identical_relations(unit_id: usize, boxes: &[BBox]) -> Vec<Relation> {
    let mut out = Vec::new();
    for i in 0..boxes.len() {
        for j in i + 1..boxes.len() {
            out.push(Relation {
                from: unit_id,
                to: unit_id,
                kind: RelationKind::Identical,
                from_box: Some(i),
                to_box: Some(j),
            });
        }
    }
    out
}

// ----- trace route ---------------------------------------------------------------

/// Boxes per unit computed from typesetter ink attribution alone: each
/// ink belongs to the innermost unit span containing its source offset;
/// per page, inks cluster on horizontal gaps wider than `gap_fraction`
/// of the page width, the same rule the raster diff applies.
pub fn trace_unit_boxes(
    text: &str,
    units: &[AnnotatedUnit],
    dims: &dyn ImageDims,
    dpi: u32,
    gap_fraction: f64,
) -> (usize, Vec<Vec<BBox>>) {
    let doc = typeset::typeset(text, dims);
    let page_w = pdf::page_width_px(dpi);
    let max_gap = (gap_fraction * page_w as f64).floor() as u32;

    // (unit, page) -> px rects
    let mut grouped: BTreeMap<(usize, usize), Vec<(u32, u32, u32, u32)>> = BTreeMap::new();
    for ink in &doc.inks {
        let Some(src) = ink.src else { continue };
        let Some(unit) = innermost_unit(units, src) else {
            continue;
        };
        if let Some(rect) = pdf::ink_px_rect(ink, dpi) {
            grouped.entry((unit, ink.page)).or_default().push(rect);
        }
    }

    let mut out: Vec<Vec<BBox>> = vec![Vec::new(); units.len()];
    for ((unit, page), mut rects) in grouped {
        rects.sort();
        let mut clusters: Vec<(u32, u32, u32, u32)> = Vec::new();
        for (x0, y0, x1, y1) in rects {
            match clusters.last_mut() {
                Some(c) if x0 <= c.2 || x0 - c.2 <= max_gap => {
                    c.0 = c.0.min(x0);
                    c.1 = c.1.min(y0);
                    c.2 = c.2.max(x1);
                    c.3 = c.3.max(y1);
                }
                _ => clusters.push((x0, y0, x1, y1)),
            }
        }
        for (x0, y0, x1, y1) in clusters {
            out[unit].push(BBox {
                page_index: page,
                x0,
                y0,
                x1,
                y1,
            });
        }
    }
    for boxes in &mut out {
        order_boxes(boxes);
    }
    (doc.pages, out)
}

// ----- orchestration ---------------------------------------------------------------

fn materialize_tree(tree: &SourceTree, dir: &Path) -> std::io::Result<()> {
    for (path, content) in &tree.files {
        let dst = dir.join(path);
        if let Some(parent) = dst.parent() {
            std::fs::create_dir_all(parent)?;
        }
        std::fs::write(dst, content.as_bytes())?;
    }
    Ok(())
}

fn link_or_copy_tree(src: &Path, dst: &Path) -> std::io::Result<()> {
    std::fs::create_dir_all(dst)?;
    for entry in walk_files(src)? {
        let rel = entry.strip_prefix(src).expect("walk stays under root");
        let target = dst.join(rel);
        if let Some(parent) = target.parent() {
            std::fs::create_dir_all(parent)?;
        }
        if std::fs::hard_link(&entry, &target).is_err() {
            std::fs::copy(&entry, &target)?;
        }
    }
    Ok(())
}

fn walk_files(dir: &Path) -> std::io::Result<Vec<std::path::PathBuf>> {
    let mut out = Vec::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for entry in std::fs::read_dir(&d)? {
            let entry = entry?;
            let path = entry.path();
            if path.is_dir() {
                stack.push(path);
            } else {
                out.push(path);
            }
        }
    }
    out.sort();
    Ok(out)
}

const MAIN_NAME: &str = "isolation__main.tex";

fn compile_and_raster(
    eng: &dyn LatexEngine,
    ras: &dyn Rasterizer,
    dir: &Path,
    source: &str,
    dpi: u32,
) -> Result<Vec<crate::bbox::PageImage>, RenderError> {
    std::fs::write(dir.join(MAIN_NAME), source)?;
    let pdf_path = eng.compile(dir, MAIN_NAME)?;
    ras.rasterize(&pdf_path, dpi)
}

/// Renders every unit in isolation and extracts its boxes.
///
/// Fails only when the baseline itself cannot be compiled; per-unit
/// problems degrade to unit statuses.
pub fn render_document(
    text: &str,
    units: &[AnnotatedUnit],
    tree: &SourceTree,
    cfg: &RenderConfig,
    scratch: &Path,
) -> Result<RenderOutcome, RenderError> {
    let (eng, ras) = engine::backends(cfg);
    let mut warnings = Vec::new();

    let skip: Vec<bool> = (0..units.len())
        .map(|idx| match wrap_problem(text, units, idx) {
            Some(reason) => {
                warnings.push(format!("unit {idx} not wrapped: {reason}"));
                true
            }
            None => false,
        })
        .collect();

    let assets = scratch.join("assets");
    std::fs::create_dir_all(&assets)?;
    materialize_tree(tree, &assets)?;

    let baseline_dir = scratch.join("baseline");
    link_or_copy_tree(&assets, &baseline_dir)?;
    let baseline_src = build_isolation_source(text, units, &skip, tree, None);
    let baseline = compile_and_raster(eng.as_ref(), ras.as_ref(), &baseline_dir, &baseline_src, cfg.dpi)?;
    let page_count = baseline.len();

    let results: Vec<(UnitRender, Option<String>)> = (0..units.len())
        .into_par_iter()
        .map(|idx| {
            if skip[idx] {
                return (
                    UnitRender {
                        status: UnitRenderStatus::WrapFailed,
                        boxes: Vec::new(),
                        split_kind: SplitKind::None,
                    },
                    None,
                );
            }
            let dir = scratch.join(format!("v{idx}"));
            let outcome = (|| -> Result<Vec<BBox>, RenderError> {
                link_or_copy_tree(&assets, &dir)?;
                let src = build_isolation_source(text, units, &skip, tree, Some(idx));
                let pages = compile_and_raster(eng.as_ref(), ras.as_ref(), &dir, &src, cfg.dpi)?;
                diff::diff_extract_boxes(&pages, &baseline, cfg.diff_threshold, cfg.column_gap_fraction)
            })();
            let _ = std::fs::remove_dir_all(&dir);
            match outcome {
                Ok(mut boxes) => {
                    order_boxes(&mut boxes);
                    let split_kind = split_kind_of(&boxes);
                    (
                        UnitRender {
                            status: UnitRenderStatus::Ok,
                            boxes,
                            split_kind,
                        },
                        None,
                    )
                }
                Err(RenderError::EmptyDiff) => (
                    UnitRender {
                        status: UnitRenderStatus::EmptyDiff,
                        boxes: Vec::new(),
                        split_kind: SplitKind::None,
                    },
                    Some(format!("unit {idx}: no visible ink")),
                ),
                Err(e) => (
                    UnitRender {
                        status: UnitRenderStatus::Failed,
                        boxes: Vec::new(),
                        split_kind: SplitKind::None,
                    },
                    Some(format!("unit {idx}: {e}")),
                ),
            }
        })
        .collect();

    let mut units_out = Vec::with_capacity(results.len());
    let mut relations = Vec::new();
    for (idx, (render, warning)) in results.into_iter().enumerate() {
        if let Some(w) = warning {
            warnings.push(w);
        }
        relations.extend(identical_relations(idx, &render.boxes));
        units_out.push(render);
    }

    Ok(RenderOutcome {
        page_count,
        units: units_out,
        relations,
        warnings,
    })
}
