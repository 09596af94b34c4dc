//! Splits the preprocessed flat source into reading-ordered component
//! units: sectioning commands, recognized environments, display math, and
//! blank-line-delimited paragraphs, plus caption and footnote children
//! carved out of their parents.

use std::ops::Range;

use serde::Serialize;

use crate::latex;
use crate::source::FlatSource;

/// Structural kind assigned at segmentation time, before attribute
/// classification.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum EnvKind {
    Maketitle,
    Abstract,
    Section,
    Paragraph,
    Figure,
    Table,
    Algorithm,
    Equation,
    DisplayMath,
    Code,
    List,
    Caption,
    Footnote,
}

/// One segmented unit. `span` indexes the flat buffer; children overlap
/// their parent and are excluded from it for rendering and text purposes.
#[derive(Debug, Clone)]
pub struct UnitDraft {
    pub span: Range<usize>,
    pub kind: EnvKind,
    /// Sectioning depth for `Section` units (1 = section); 0 otherwise.
    pub level: u8,
    /// Index into the same unit vector; set for captions and footnotes.
    pub parent: Option<usize>,
}

pub struct SegmentOutcome {
    pub units: Vec<UnitDraft>,
    pub warnings: Vec<String>,
}

fn env_kind(name: &str) -> Option<EnvKind> {
    let base = name.strip_suffix('*').unwrap_or(name);
    Some(match base {
        "figure" => EnvKind::Figure,
        "table" => EnvKind::Table,
        "algorithm" | "algorithmic" => EnvKind::Algorithm,
        "equation" | "align" | "gather" | "multline" | "eqnarray" | "displaymath" => {
            EnvKind::Equation
        }
        "itemize" | "enumerate" | "description" => EnvKind::List,
        "abstract" => EnvKind::Abstract,
        _ if latex::is_verbatim_env(name) => EnvKind::Code,
        _ => return None,
    })
}

fn section_level(cmd: &str) -> Option<u8> {
    let base = cmd.strip_suffix('*').unwrap_or(cmd);
    Some(match base {
        "chapter" => 0,
        "section" => 1,
        "subsection" => 2,
        "subsubsection" => 3,
        _ => return None,
    })
}

/// Locates the document body: between `\begin{document}` and
/// `\end{document}`. A fragment without the wrapper is treated as all
/// body.
pub fn body_range(text: &str) -> Range<usize> {
    let start = text
        .find("\\begin{document}")
        .map(|i| i + "\\begin{document}".len())
        .unwrap_or(0);
    let end = text[start..]
        .find("\\end{document}")
        .map(|rel| start + rel)
        .unwrap_or(text.len());
    start..end
}

pub fn segment_units(flat: &FlatSource) -> SegmentOutcome {
    let text = &flat.text;
    let body = body_range(text);
    let bytes = text.as_bytes();
    let mut units: Vec<UnitDraft> = Vec::new();
    let mut warnings: Vec<String> = Vec::new();

    let mut para_start: Option<usize> = None;
    let mut i = body.start;

    macro_rules! flush_para {
        ($end:expr) => {
            if let Some(start) = para_start.take() {
                let raw = &text[start..$end];
                let trimmed = raw.trim_end();
                if !trimmed.trim_start().is_empty() {
                    let lead = raw.len() - raw.trim_start().len();
                    units.push(UnitDraft {
                        span: start + lead..start + trimmed.len(),
                        kind: EnvKind::Paragraph,
                        level: 0,
                        parent: None,
                    });
                }
            }
        };
    }

    while i < body.end {
        let b = bytes[i];
        match b {
            b'\\' => {
                let Some((name_r, full_r)) = latex::command_at(text, i) else {
                    if para_start.is_none() {
                        para_start = Some(i);
                    }
                    i += 1;
                    continue;
                };
                let cmd = text[name_r.clone()].to_string();

                if cmd == "begin" {
                    let brace = latex::skip_ws(text, full_r.end);
                    let Some((env, _)) = latex::env_name_at(text, brace) else {
                        if para_start.is_none() {
                            para_start = Some(i);
                        }
                        i = full_r.end;
                        continue;
                    };
                    let env = env.to_string();
                    match env_kind(&env) {
                        Some(kind) => {
                            flush_para!(i);
                            match latex::scan_env(text, i) {
                                Some(span) => {
                                    let end = span.full.end.min(body.end);
                                    units.push(UnitDraft {
                                        span: i..end,
                                        kind,
                                        level: 0,
                                        parent: None,
                                    });
                                    i = end;
                                }
                                None => {
                                    warnings.push(format!(
                                        "unclosed environment {env:?} at offset {i}; unit truncated at end of body"
                                    ));
                                    units.push(UnitDraft {
                                        span: i..body.end,
                                        kind,
                                        level: 0,
                                        parent: None,
                                    });
                                    i = body.end;
                                }
                            }
                        }
                        None => {
                            // Unknown environment: opaque paragraph content.
                            // Blank lines inside it do not split, so wrapping
                            // never cuts an environment in half.
                            if para_start.is_none() {
                                para_start = Some(i);
                            }
                            match latex::scan_env(text, i) {
                                Some(span) => i = span.full.end.min(body.end),
                                None => {
                                    warnings.push(format!(
                                        "unclosed environment {env:?} at offset {i}; treated as text to end of body"
                                    ));
                                    i = body.end;
                                }
                            }
                        }
                    }
                    continue;
                }

                if let Some(level) = section_level(&cmd) {
                    flush_para!(i);
                    let mut end = full_r.end;
                    let at = latex::skip_ws(text, end);
                    if let Some(opt) = latex::bracket_group(text, at) {
                        end = opt.end;
                    }
                    let at = latex::skip_ws(text, end);
                    if let Some(group) = latex::brace_group(text, at) {
                        end = group.end;
                    }
                    end = absorb_labels(text, end, body.end);
                    units.push(UnitDraft {
                        span: i..end.min(body.end),
                        kind: EnvKind::Section,
                        level,
                        parent: None,
                    });
                    i = end.min(body.end);
                    continue;
                }

                if cmd == "maketitle" {
                    flush_para!(i);
                    units.push(UnitDraft {
                        span: i..full_r.end,
                        kind: EnvKind::Maketitle,
                        level: 0,
                        parent: None,
                    });
                    i = full_r.end;
                    continue;
                }

                // Front-matter declarations between paragraphs carry no
                // content of their own; \maketitle renders them.
                if matches!(cmd.as_str(), "title" | "author" | "date") && para_start.is_none() {
                    let mut end = full_r.end;
                    let at = latex::skip_ws(text, end);
                    if let Some(opt) = latex::bracket_group(text, at) {
                        end = opt.end;
                    }
                    let at = latex::skip_ws(text, end);
                    if let Some(group) = latex::brace_group(text, at) {
                        end = group.end;
                    }
                    i = end.min(body.end);
                    continue;
                }

                if cmd == "[" {
                    flush_para!(i);
                    let close = text[full_r.end..]
                        .find("\\]")
                        .map(|rel| full_r.end + rel + 2);
                    match close {
                        Some(end) => {
                            let end = end.min(body.end);
                            units.push(UnitDraft {
                                span: i..end,
                                kind: EnvKind::DisplayMath,
                                level: 0,
                                parent: None,
                            });
                            i = end;
                        }
                        None => {
                            warnings.push(format!(
                                "unterminated display math at offset {i}; unit truncated at end of body"
                            ));
                            units.push(UnitDraft {
                                span: i..body.end,
                                kind: EnvKind::DisplayMath,
                                level: 0,
                                parent: None,
                            });
                            i = body.end;
                        }
                    }
                    continue;
                }

                if cmd == "par" {
                    flush_para!(i);
                    i = full_r.end;
                    continue;
                }

                if cmd == "(" {
                    // Inline math: paragraph content, consumed atomically.
                    if para_start.is_none() {
                        para_start = Some(i);
                    }
                    i = text[full_r.end..]
                        .find("\\)")
                        .map(|rel| full_r.end + rel + 2)
                        .unwrap_or(body.end)
                        .min(body.end);
                    continue;
                }

                if cmd == "verb" || cmd == "verb*" {
                    if para_start.is_none() {
                        para_start = Some(i);
                    }
                    if let Some(delim) = text[full_r.end..].chars().next() {
                        let arg_start = full_r.end + delim.len_utf8();
                        i = text[arg_start..]
                            .find(delim)
                            .map(|rel| arg_start + rel + delim.len_utf8())
                            .unwrap_or(body.end)
                            .min(body.end);
                    } else {
                        i = full_r.end;
                    }
                    continue;
                }

                // Any other command is paragraph content.
                if para_start.is_none() {
                    para_start = Some(i);
                }
                i = full_r.end;
            }
            b'$' if !latex::is_escaped(text, i) => {
                let display = bytes.get(i + 1) == Some(&b'$');
                if display && para_start.is_none() {
                    // $$ .. $$ display math as its own unit only between
                    // paragraphs; inside a paragraph it stays inline-like.
                    let open_end = i + 2;
                    match find_double_dollar(text, open_end, body.end) {
                        Some(close) => {
                            units.push(UnitDraft {
                                span: i..close + 2,
                                kind: EnvKind::DisplayMath,
                                level: 0,
                                parent: None,
                            });
                            i = close + 2;
                        }
                        None => {
                            warnings.push(format!(
                                "unterminated display math at offset {i}; unit truncated at end of body"
                            ));
                            units.push(UnitDraft {
                                span: i..body.end,
                                kind: EnvKind::DisplayMath,
                                level: 0,
                                parent: None,
                            });
                            i = body.end;
                        }
                    }
                    continue;
                }
                if para_start.is_none() {
                    para_start = Some(i);
                }
                let search_from = i + if display { 2 } else { 1 };
                i = latex::find_unescaped(text, b'$', search_from, false)
                    .map(|p| p + if display { 2 } else { 1 })
                    .unwrap_or(body.end)
                    .min(body.end);
            }
            b'\n' => {
                // Blank line: newline, optional horizontal space, newline.
                let mut j = i + 1;
                while j < body.end && (bytes[j] == b' ' || bytes[j] == b'\t' || bytes[j] == b'\r')
                {
                    j += 1;
                }
                if j < body.end && bytes[j] == b'\n' {
                    flush_para!(i);
                    while j < body.end && bytes[j].is_ascii_whitespace() {
                        j += 1;
                    }
                    i = j;
                } else {
                    i += 1;
                }
            }
            _ => {
                if !b.is_ascii_whitespace() && para_start.is_none() {
                    para_start = Some(i);
                }
                i += 1;
            }
        }
    }
    flush_para!(body.end);

    extract_children(text, &mut units, &mut warnings);

    // Reading order: by start offset; a parent (larger span) precedes its
    // children at the same start.
    let mut order: Vec<usize> = (0..units.len()).collect();
    order.sort_by(|&a, &b| {
        (units[a].span.start, std::cmp::Reverse(units[a].span.end))
            .cmp(&(units[b].span.start, std::cmp::Reverse(units[b].span.end)))
    });
    let mut remap = vec![0usize; units.len()];
    for (new_idx, &old_idx) in order.iter().enumerate() {
        remap[old_idx] = new_idx;
    }
    let mut sorted: Vec<UnitDraft> = order.iter().map(|&idx| units[idx].clone()).collect();
    for u in &mut sorted {
        u.parent = u.parent.map(|p| remap[p]);
    }

    SegmentOutcome {
        units: sorted,
        warnings,
    }
}

fn find_double_dollar(text: &str, from: usize, limit: usize) -> Option<usize> {
    let mut pos = from;
    while let Some(p) = latex::find_unescaped(text, b'$', pos, false) {
        if p + 1 < limit && text.as_bytes()[p + 1] == b'$' {
            return Some(p);
        }
        if p >= limit {
            return None;
        }
        pos = p + 1;
    }
    None
}

/// Absorbs `\label{..}` commands that directly follow a sectioning command
/// (no blank line between), so references to the section resolve to the
/// title unit rather than the following paragraph.
fn absorb_labels(text: &str, mut end: usize, limit: usize) -> usize {
    loop {
        let at = latex::skip_ws(text, end);
        if at > limit || latex::has_blank_line(text, end..at.min(limit)) {
            return end;
        }
        let Some((name_r, full_r)) = latex::command_at(text, at) else {
            return end;
        };
        if &text[name_r] != "label" {
            return end;
        }
        let brace = latex::skip_ws(text, full_r.end);
        let Some(group) = latex::brace_group(text, brace) else {
            return end;
        };
        if group.end > limit {
            return end;
        }
        end = group.end;
    }
}

/// Carves `\caption` children out of float bodies (at environment depth 0
/// relative to the float) and `\footnote` children out of any non-code,
/// non-math unit, attributing each footnote to the innermost unit that
/// contains it.
fn extract_children(text: &str, units: &mut Vec<UnitDraft>, warnings: &mut Vec<String>) {
    let float_indices: Vec<usize> = units
        .iter()
        .enumerate()
        .filter(|(_, u)| matches!(u.kind, EnvKind::Figure | EnvKind::Table | EnvKind::Algorithm))
        .map(|(i, _)| i)
        .collect();

    for idx in float_indices {
        let span = units[idx].span.clone();
        let body = match latex::scan_env(text, span.start) {
            Some(env) => env.body,
            None => span.clone(), // truncated float: scan whole span
        };
        let mut i = body.start;
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
                    let mut end = full_r.end;
                    let at = latex::skip_ws(text, end);
                    if let Some(opt) = latex::bracket_group(text, at) {
                        end = opt.end;
                    }
                    let at = latex::skip_ws(text, end);
                    match latex::brace_group(text, at) {
                        Some(group) => {
                            end = absorb_labels(text, group.end, body.end);
                            units.push(UnitDraft {
                                span: i..end,
                                kind: EnvKind::Caption,
                                level: 0,
                                parent: Some(idx),
                            });
                            i = end;
                        }
                        None => {
                            warnings.push(format!(
                                "caption at offset {i} has unbalanced argument; not extracted"
                            ));
                            i = full_r.end;
                        }
                    }
                }
                _ => i = full_r.end,
            }
        }
    }

    // Footnotes: global scan, then attribute to the innermost unit.
    let mut notes: Vec<Range<usize>> = Vec::new();
    let bytes = text.as_bytes();
    let mut i = 0usize;
    while i < bytes.len() {
        if bytes[i] != b'\\' {
            i += 1;
            continue;
        }
        let Some((name_r, full_r)) = latex::command_at(text, i) else {
            i += 1;
            continue;
        };
        match &text[name_r] {
            "begin" => {
                let brace = latex::skip_ws(text, full_r.end);
                if let Some((env, _)) = latex::env_name_at(text, brace) {
                    if latex::is_verbatim_env(env) {
                        if let Some(span) = latex::scan_env(text, i) {
                            i = span.full.end;
                            continue;
                        }
                    }
                }
                i = full_r.end;
            }
            "footnote" => {
                let mut end = full_r.end;
                let at = latex::skip_ws(text, end);
                if let Some(opt) = latex::bracket_group(text, at) {
                    end = opt.end;
                }
                let at = latex::skip_ws(text, end);
                match latex::brace_group(text, at) {
                    Some(group) => {
                        notes.push(i..group.end);
                        i = group.end;
                    }
                    None => {
                        warnings.push(format!(
                            "footnote at offset {i} has unbalanced argument; not extracted"
                        ));
                        i = full_r.end;
                    }
                }
            }
            _ => i = full_r.end,
        }
    }

    for note in notes {
        let host = units
            .iter()
            .enumerate()
            .filter(|(_, u)| u.span.start <= note.start && note.end <= u.span.end)
            .filter(|(_, u)| {
                !matches!(
                    u.kind,
                    EnvKind::Code | EnvKind::Equation | EnvKind::DisplayMath | EnvKind::Footnote
                )
            })
            .min_by_key(|(_, u)| u.span.end - u.span.start)
            .map(|(i, _)| i);
        if let Some(parent) = host {
            units.push(UnitDraft {
                span: note,
                kind: EnvKind::Footnote,
                level: 0,
                parent: Some(parent),
            });
        }
    }
}
