//! Attribute assignment and relation retrieval over segmented units.
//!
//! Classification is a fixed-order cascade: identity attributes
//! (paper title, abstract, section title, caption) first, then content
//! attributes with algorithm taking precedence over code over the float's
//! own type, then list/equation/footnote, then the text split by presence
//! of inline math.

use std::collections::{BTreeMap, BTreeSet};
use std::ops::Range;

use serde::Serialize;

use crate::latex;
use crate::segment::{EnvKind, UnitDraft};
use crate::source::FlatSource;

/// Layout attribute classes. `index()` values follow the category table
/// used by the annotation format; two indices in that table are reserved
/// for classes this pipeline never emits, so the sequence has gaps.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize)]
pub enum Attribute {
    Algorithm,
    Caption,
    Equation,
    Figure,
    Footnote,
    List,
    Table,
    Text,
    TextEq,
    Title,
    PaperTitle,
    Code,
    Abstract,
}

impl Attribute {
    pub fn index(self) -> u8 {
        match self {
            Attribute::Algorithm => 0,
            Attribute::Caption => 1,
            Attribute::Equation => 2,
            Attribute::Figure => 3,
            Attribute::Footnote => 4,
            Attribute::List => 5,
            Attribute::Table => 7,
            Attribute::Text => 8,
            Attribute::TextEq => 9,
            Attribute::Title => 10,
            Attribute::PaperTitle => 12,
            Attribute::Code => 13,
            Attribute::Abstract => 14,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Attribute::Algorithm => "Algorithm",
            Attribute::Caption => "Caption",
            Attribute::Equation => "Equation",
            Attribute::Figure => "Figure",
            Attribute::Footnote => "Footnote",
            Attribute::List => "List",
            Attribute::Table => "Table",
            Attribute::Text => "Text",
            Attribute::TextEq => "Text-EQ",
            Attribute::Title => "Title",
            Attribute::PaperTitle => "PaperTitle",
            Attribute::Code => "Code",
            Attribute::Abstract => "Abstract",
        }
    }

    pub fn from_index(idx: u8) -> Option<Attribute> {
        Some(match idx {
            0 => Attribute::Algorithm,
            1 => Attribute::Caption,
            2 => Attribute::Equation,
            3 => Attribute::Figure,
            4 => Attribute::Footnote,
            5 => Attribute::List,
            7 => Attribute::Table,
            8 => Attribute::Text,
            9 => Attribute::TextEq,
            10 => Attribute::Title,
            12 => Attribute::PaperTitle,
            13 => Attribute::Code,
            14 => Attribute::Abstract,
            _ => return None,
        })
    }
}

/// Relation kinds between units.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize)]
pub enum RelationKind {
    /// Two rendered fragments of one unit (column or page split).
    Identical,
    /// Consecutive section titles of the same depth.
    TitleAdjacent,
    /// Unit governed by the nearest enclosing title.
    Subordinate,
    /// Consecutive body-flow units under one title.
    NonTitleAdjacent,
    /// `from` references `to` via a reference command or footnote mark.
    ExplicitlyReferred,
    /// Caption attached to its float.
    ImplicitlyReferred,
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord)]
pub struct Relation {
    pub from: usize,
    pub to: usize,
    pub kind: RelationKind,
    /// Box indices within the owning unit; set only for `Identical`.
    pub from_box: Option<usize>,
    pub to_box: Option<usize>,
}

impl Relation {
    fn new(from: usize, to: usize, kind: RelationKind) -> Relation {
        Relation {
            from,
            to,
            kind,
            from_box: None,
            to_box: None,
        }
    }
}

#[derive(Debug, Clone)]
pub struct AnnotatedUnit {
    pub span: Range<usize>,
    pub kind: EnvKind,
    pub level: u8,
    pub parent: Option<usize>,
    pub attribute: Attribute,
    pub labels: Vec<String>,
    pub refs: Vec<String>,
    pub normalized_text: String,
}

pub struct AnnotateOutcome {
    pub units: Vec<AnnotatedUnit>,
    pub relations: Vec<Relation>,
    pub warnings: Vec<String>,
}

fn contains_env(body: &str, names: &[&str]) -> bool {
    names.iter().any(|n| {
        body.contains(&format!("\\begin{{{n}}}")) || body.contains(&format!("\\begin{{{n}*}}"))
    })
}

fn has_inline_math(body: &str) -> bool {
    let bytes = body.as_bytes();
    for i in 0..bytes.len() {
        match bytes[i] {
            b'$' if !latex::is_escaped(body, i) => return true,
            b'\\' if bytes.get(i + 1) == Some(&b'(') => return true,
            _ => {}
        }
    }
    false
}

pub fn classify_unit(text: &str, unit: &UnitDraft) -> Attribute {
    let body = &text[unit.span.clone()];
    match unit.kind {
        EnvKind::Maketitle => Attribute::PaperTitle,
        EnvKind::Abstract => Attribute::Abstract,
        EnvKind::Section => Attribute::Title,
        EnvKind::Caption => Attribute::Caption,
        EnvKind::Figure | EnvKind::Table | EnvKind::Algorithm => {
            if unit.kind == EnvKind::Algorithm
                || contains_env(body, &["algorithmic", "algorithm"])
            {
                Attribute::Algorithm
            } else if contains_env(body, latex::VERBATIM_ENVS) {
                Attribute::Code
            } else if unit.kind == EnvKind::Table {
                Attribute::Table
            } else {
                Attribute::Figure
            }
        }
        EnvKind::Code => Attribute::Code,
        EnvKind::List => Attribute::List,
        EnvKind::Equation | EnvKind::DisplayMath => Attribute::Equation,
        EnvKind::Footnote => Attribute::Footnote,
        EnvKind::Paragraph => {
            if body.contains("\\includegraphics") {
                Attribute::Figure
            } else if has_inline_math(body) {
                Attribute::TextEq
            } else {
                Attribute::Text
            }
        }
    }
}

const REF_COMMANDS: &[&str] = &["ref", "eqref", "pageref", "autoref", "cref", "Cref", "vref"];

/// Extracts `\label` keys and reference keys from `span`, skipping the
/// given holes (child spans) and verbatim bodies.
fn scan_keys(text: &str, span: Range<usize>, holes: &[Range<usize>]) -> (Vec<String>, Vec<String>) {
    let mut labels = Vec::new();
    let mut refs = Vec::new();
    let bytes = text.as_bytes();
    let mut i = span.start;
    while i < span.end {
        if let Some(hole) = holes.iter().find(|h| h.contains(&i)) {
            i = hole.end;
            continue;
        }
        if bytes[i] != b'\\' {
            i += 1;
            continue;
        }
        let Some((name_r, full_r)) = latex::command_at(text, i) else {
            i += 1;
            continue;
        };
        let cmd = &text[name_r];
        if cmd == "begin" {
            let brace = latex::skip_ws(text, full_r.end);
            if let Some((env, _)) = latex::env_name_at(text, brace) {
                if latex::is_verbatim_env(env) {
                    if let Some(env_span) = latex::scan_env(text, i) {
                        i = env_span.full.end.min(span.end);
                        continue;
                    }
                }
            }
            i = full_r.end;
            continue;
        }
        let is_label = cmd == "label";
        let is_ref = REF_COMMANDS.contains(&cmd);
        if !is_label && !is_ref {
            i = full_r.end;
            continue;
        }
        let at = latex::skip_ws(text, full_r.end);
        let Some(group) = latex::brace_group(text, at) else {
            i = full_r.end;
            continue;
        };
        let inner = &text[group.start + 1..group.end - 1];
        for key in inner.split(',') {
            let key = key.trim();
            if key.is_empty() {
                continue;
            }
            if is_label {
                labels.push(key.to_string());
            } else {
                refs.push(key.to_string());
            }
        }
        i = group.end;
    }
    (labels, refs)
}

/// Plain-text rendering of a unit's own content (child spans excluded):
/// commands dropped or made transparent, reference keys removed, math
/// delimiters stripped, whitespace collapsed. Verbatim content is kept
/// literally.
pub fn normalize_text(text: &str, span: Range<usize>, holes: &[Range<usize>]) -> String {
    let mut out = String::new();
    let bytes = text.as_bytes();
    let mut i = span.start;
    // Environments whose \begin takes mandatory arguments to drop.
    const ENV_ARGS: &[(&str, usize)] = &[
        ("tabular", 1),
        ("tabular*", 2),
        ("longtable", 1),
        ("minipage", 1),
        ("multicols", 1),
        ("wrapfigure", 2),
        ("lstlisting", 0),
    ];
    // Commands whose brace arguments are dropped entirely.
    const DROP_ARG_CMDS: &[&str] = &[
        "label", "ref", "eqref", "pageref", "autoref", "cref", "Cref", "vref", "cite", "citep",
        "citet", "includegraphics", "bibliographystyle", "bibliography", "input", "include",
        "hypersetup", "usepackage", "documentclass", "rule", "thanks",
    ];
    while i < span.end {
        if let Some(hole) = holes.iter().find(|h| h.contains(&i)) {
            i = hole.end;
            out.push(' ');
            continue;
        }
        match bytes[i] {
            b'\\' => {
                let Some((name_r, full_r)) = latex::command_at(text, i) else {
                    i += 1;
                    continue;
                };
                let cmd = text[name_r.clone()].to_string();
                match cmd.as_str() {
                    "begin" => {
                        let brace = latex::skip_ws(text, full_r.end);
                        if let Some((env, after)) = latex::env_name_at(text, brace) {
                            if latex::is_verbatim_env(env) {
                                if let Some(env_span) = latex::scan_env(text, i) {
                                    out.push(' ');
                                    out.push_str(&text[env_span.body.clone()]);
                                    out.push(' ');
                                    i = env_span.full.end.min(span.end);
                                    continue;
                                }
                            }
                            let mut cursor = after;
                            let argc = ENV_ARGS
                                .iter()
                                .find(|(n, _)| *n == env)
                                .map(|(_, c)| *c)
                                .unwrap_or(0);
                            if let Some(opt) = latex::bracket_group(text, latex::skip_ws(text, cursor)) {
                                cursor = opt.end;
                            }
                            for _ in 0..argc {
                                let at = latex::skip_ws(text, cursor);
                                match latex::brace_group(text, at) {
                                    Some(g) => cursor = g.end,
                                    None => break,
                                }
                            }
                            out.push(' ');
                            i = cursor;
                            continue;
                        }
                        i = full_r.end;
                    }
                    "end" => {
                        let brace = latex::skip_ws(text, full_r.end);
                        if let Some((_, after)) = latex::env_name_at(text, brace) {
                            out.push(' ');
                            i = after;
                        } else {
                            i = full_r.end;
                        }
                    }
                    "verb" | "verb*" => {
                        if let Some(delim) = text[full_r.end..].chars().next() {
                            let arg_start = full_r.end + delim.len_utf8();
                            if let Some(rel) = text[arg_start..].find(delim) {
                                out.push_str(&text[arg_start..arg_start + rel]);
                                i = arg_start + rel + delim.len_utf8();
                                continue;
                            }
                        }
                        i = full_r.end;
                    }
                    "\\" => {
                        out.push(' ');
                        // Drop an optional spacing argument like \\[4pt].
                        let at = latex::skip_inline_ws(text, full_r.end);
                        i = latex::bracket_group(text, at).map(|g| g.end).unwrap_or(full_r.end);
                    }
                    "%" | "$" | "&" | "#" | "_" | "{" | "}" => {
                        out.push_str(&cmd);
                        i = full_r.end;
                    }
                    " " | "\n" | "~" => {
                        out.push(' ');
                        i = full_r.end;
                    }
                    "ldots" | "dots" => {
                        out.push_str("...");
                        i = full_r.end;
                    }
                    "item" => {
                        out.push(' ');
                        let at = latex::skip_inline_ws(text, full_r.end);
                        i = latex::bracket_group(text, at).map(|g| g.end).unwrap_or(full_r.end);
                    }
                    "href" => {
                        // Drop the URL group; keep the display text group.
                        let at = latex::skip_ws(text, full_r.end);
                        i = latex::brace_group(text, at).map(|g| g.end).unwrap_or(full_r.end);
                    }
                    "url" => {
                        let at = latex::skip_ws(text, full_r.end);
                        if let Some(g) = latex::brace_group(text, at) {
                            out.push_str(&text[g.start + 1..g.end - 1]);
                            i = g.end;
                        } else {
                            i = full_r.end;
                        }
                    }
                    _ if DROP_ARG_CMDS.contains(&cmd.as_str()) => {
                        let mut cursor = full_r.end;
                        let at = latex::skip_inline_ws(text, cursor);
                        if let Some(opt) = latex::bracket_group(text, at) {
                            cursor = opt.end;
                        }
                        let at = latex::skip_inline_ws(text, cursor);
                        if let Some(g) = latex::brace_group(text, at) {
                            cursor = g.end;
                        }
                        out.push(' ');
                        i = cursor;
                    }
                    _ => {
                        // Unknown command: drop the name, keep any brace
                        // content (scanned as ordinary text).
                        out.push(' ');
                        i = full_r.end;
                    }
                }
            }
            b'{' | b'}' | b'$' => i += 1,
            b'~' => {
                out.push(' ');
                i += 1;
            }
            _ => {
                let ch = text[i..].chars().next().expect("in-bounds char");
                out.push(ch);
                i += ch.len_utf8();
            }
        }
    }
    out.split_whitespace().collect::<Vec<_>>().join(" ")
}

/// Normalized text of the first `\title{...}` and `\author{...}`
/// declarations, space-joined. Declarations may sit in the preamble or
/// in the body ahead of `\maketitle`; either way this is the text that
/// `\maketitle` renders.
fn declaration_text(text: &str) -> String {
    let bytes = text.as_bytes();
    let mut title: Option<String> = None;
    let mut author: Option<String> = None;
    let mut i = 0;
    while i < bytes.len() && (title.is_none() || author.is_none()) {
        if bytes[i] != b'\\' {
            i += 1;
            continue;
        }
        let Some((name_r, full_r)) = latex::command_at(text, i) else {
            i += 1;
            continue;
        };
        let name = &text[name_r];
        if name == "title" || name == "author" {
            let is_title = name == "title";
            let at = latex::skip_ws(text, full_r.end);
            if let Some(g) = latex::brace_group(text, at) {
                let inner = normalize_text(text, g.start + 1..g.end - 1, &[]);
                let slot = if is_title { &mut title } else { &mut author };
                if slot.is_none() {
                    *slot = Some(inner);
                }
                i = g.end;
                continue;
            }
        }
        i = full_r.end;
    }
    let mut out = String::new();
    for part in [title, author].into_iter().flatten() {
        if part.is_empty() {
            continue;
        }
        if !out.is_empty() {
            out.push(' ');
        }
        out.push_str(&part);
    }
    out
}

pub fn annotate_units(flat: &FlatSource, drafts: &[UnitDraft]) -> AnnotateOutcome {
    let text = &flat.text;
    let mut warnings = Vec::new();

    let holes_of = |idx: usize| -> Vec<Range<usize>> {
        drafts
            .iter()
            .filter(|d| d.parent == Some(idx))
            .map(|d| d.span.clone())
            .collect()
    };

    let mut units: Vec<AnnotatedUnit> = drafts
        .iter()
        .enumerate()
        .map(|(idx, d)| {
            let holes = holes_of(idx);
            let (labels, refs) = scan_keys(text, d.span.clone(), &holes);
            AnnotatedUnit {
                span: d.span.clone(),
                kind: d.kind,
                level: d.level,
                parent: d.parent,
                attribute: classify_unit(text, d),
                labels,
                refs,
                normalized_text: normalize_text(text, d.span.clone(), &holes),
            }
        })
        .collect();

    // Labels written inside a caption identify the float, per LaTeX
    // numbering semantics: lift them onto the parent.
    for idx in 0..units.len() {
        if units[idx].kind == EnvKind::Caption {
            if let Some(parent) = units[idx].parent {
                let lifted: Vec<String> = std::mem::take(&mut units[idx].labels);
                units[parent].labels.extend(lifted);
            }
        }
    }

    // A \maketitle unit's text is the declared title and authors; the
    // declarations live outside every unit span (preamble or front
    // matter), so the span alone is blank.
    for u in units.iter_mut() {
        if u.kind == EnvKind::Maketitle && u.normalized_text.is_empty() {
            u.normalized_text = declaration_text(text);
        }
    }

    // Document-wide label map; duplicates keep the first definition.
    let mut label_map: BTreeMap<String, usize> = BTreeMap::new();
    for (idx, u) in units.iter().enumerate() {
        for key in &u.labels {
            if let Some(prev) = label_map.get(key) {
                warnings.push(format!(
                    "duplicate label {key:?} in unit {idx} (first defined in unit {prev}); first definition wins"
                ));
            } else {
                label_map.insert(key.clone(), idx);
            }
        }
    }

    let mut relations: BTreeSet<Relation> = BTreeSet::new();

    // Subordinate: nearest preceding title of lower depth (sections nest
    // under sections; everything else under the nearest title; leading
    // units and top-level sections under the paper title when present).
    let paper_title = units.iter().position(|u| u.attribute == Attribute::PaperTitle);
    let mut title_stack: Vec<(u8, usize)> = Vec::new(); // (level, unit index)
    for idx in 0..units.len() {
        match units[idx].attribute {
            Attribute::PaperTitle => {}
            Attribute::Title => {
                let level = units[idx].level;
                while title_stack.last().map_or(false, |&(l, _)| l >= level) {
                    title_stack.pop();
                }
                let governor = title_stack.last().map(|&(_, i)| i).or(paper_title);
                if let Some(g) = governor {
                    if g != idx {
                        relations.insert(Relation::new(idx, g, RelationKind::Subordinate));
                    }
                }
                title_stack.push((level, idx));
            }
            _ => {
                let governor = title_stack.last().map(|&(_, i)| i).or(paper_title);
                if let Some(g) = governor {
                    if g != idx {
                        relations.insert(Relation::new(idx, g, RelationKind::Subordinate));
                    }
                }
            }
        }
    }

    // TitleAdjacent: consecutive titles of equal depth.
    let titles: Vec<usize> = units
        .iter()
        .enumerate()
        .filter(|(_, u)| u.attribute == Attribute::Title)
        .map(|(i, _)| i)
        .collect();
    let mut last_at_level: BTreeMap<u8, usize> = BTreeMap::new();
    for &idx in &titles {
        let level = units[idx].level;
        if let Some(&prev) = last_at_level.get(&level) {
            relations.insert(Relation::new(prev, idx, RelationKind::TitleAdjacent));
        }
        last_at_level.insert(level, idx);
    }

    // NonTitleAdjacent: consecutive flow units (text, text with math,
    // equations); titles break the chain, floats and lists do not.
    let mut prev_flow: Option<usize> = None;
    for (idx, u) in units.iter().enumerate() {
        if u.parent.is_some() {
            continue;
        }
        match u.attribute {
            Attribute::Title | Attribute::PaperTitle => prev_flow = None,
            Attribute::Text | Attribute::TextEq | Attribute::Equation => {
                if let Some(p) = prev_flow {
                    relations.insert(Relation::new(p, idx, RelationKind::NonTitleAdjacent));
                }
                prev_flow = Some(idx);
            }
            _ => {}
        }
    }

    // ExplicitlyReferred: reference commands, plus footnote marks.
    for (idx, u) in units.iter().enumerate() {
        for key in &u.refs {
            match label_map.get(key) {
                Some(&target) if target != idx => {
                    relations.insert(Relation::new(idx, target, RelationKind::ExplicitlyReferred));
                }
                Some(_) => {}
                None => warnings.push(format!("unresolved reference {key:?} in unit {idx}")),
            }
        }
    }
    for (idx, u) in units.iter().enumerate() {
        if u.kind == EnvKind::Footnote {
            if let Some(parent) = u.parent {
                relations.insert(Relation::new(parent, idx, RelationKind::ExplicitlyReferred));
            }
        }
    }

    // ImplicitlyReferred: caption to its float.
    for (idx, u) in units.iter().enumerate() {
        if u.kind == EnvKind::Caption {
            if let Some(parent) = u.parent {
                relations.insert(Relation::new(idx, parent, RelationKind::ImplicitlyReferred));
            }
        }
    }

    let mut relations: Vec<Relation> = relations.into_iter().collect();
    relations.sort_by_key(|r| (r.from, r.to, r.kind));

    debug_assert!(relations.iter().all(|r| r.from != r.to));

    AnnotateOutcome {
        units,
        relations,
        warnings,
    }
}
