//! Low-level scanning primitives for TeX source text.
//!
//! Everything here operates on byte offsets into UTF-8 text. Scanners are
//! escape-aware (`\%` is not a comment start, `\{` does not open a group)
//! and verbatim-aware where documented. No scanner allocates unless it
//! returns an owned name.

use std::ops::Range;

/// Environments whose body is taken literally: no command, comment, or
/// brace interpretation applies between `\begin{..}` and `\end{..}`.
pub const VERBATIM_ENVS: &[&str] = &["verbatim", "verbatim*", "lstlisting", "minted", "alltt"];

pub fn is_verbatim_env(name: &str) -> bool {
    VERBATIM_ENVS.contains(&name)
}

/// True when the byte at `idx` is preceded by an odd number of backslashes.
pub fn is_escaped(text: &str, idx: usize) -> bool {
    let bytes = text.as_bytes();
    let mut n = 0usize;
    while n < idx && bytes[idx - 1 - n] == b'\\' {
        n += 1;
    }
    n % 2 == 1
}

/// Returns the control-sequence name starting at `idx` (which must point at
/// `\`), together with the full range of the command token. Multi-letter
/// names absorb a trailing `*`; single-character control symbols (`\%`,
/// `\\`, `\ `) are one byte long.
pub fn command_at(text: &str, idx: usize) -> Option<(Range<usize>, Range<usize>)> {
    let bytes = text.as_bytes();
    if bytes.get(idx) != Some(&b'\\') {
        return None;
    }
    let start = idx + 1;
    if start >= bytes.len() {
        return None;
    }
    let mut end = start;
    while end < bytes.len() && bytes[end].is_ascii_alphabetic() {
        end += 1;
    }
    if end == start {
        // Control symbol: exactly one char (may be multi-byte).
        let ch_len = text[start..].chars().next().map(char::len_utf8)?;
        return Some((start..start + ch_len, idx..start + ch_len));
    }
    if bytes.get(end) == Some(&b'*') {
        end += 1;
    }
    Some((start..end, idx..end))
}

fn delimited_group(text: &str, open_idx: usize, open: u8, close: u8) -> Option<Range<usize>> {
    let bytes = text.as_bytes();
    if bytes.get(open_idx) != Some(&open) {
        return None;
    }
    let mut depth = 0usize;
    let mut i = open_idx;
    while i < bytes.len() {
        match bytes[i] {
            b'\\' => {
                i += 1 + text[i + 1..].chars().next().map_or(0, char::len_utf8);
                continue;
            }
            b if b == open => depth += 1,
            b if b == close => {
                depth -= 1;
                if depth == 0 {
                    return Some(open_idx..i + 1);
                }
            }
            _ => {}
        }
        i += 1;
    }
    None
}

/// Balanced `{..}` group starting at `open_idx`; range includes both braces.
pub fn brace_group(text: &str, open_idx: usize) -> Option<Range<usize>> {
    delimited_group(text, open_idx, b'{', b'}')
}

/// Balanced `[..]` group starting at `open_idx`; range includes both brackets.
pub fn bracket_group(text: &str, open_idx: usize) -> Option<Range<usize>> {
    delimited_group(text, open_idx, b'[', b']')
}

/// Skips ASCII whitespace from `idx`, staying inside `text`.
pub fn skip_ws(text: &str, mut idx: usize) -> usize {
    let bytes = text.as_bytes();
    while idx < bytes.len() && bytes[idx].is_ascii_whitespace() {
        idx += 1;
    }
    idx
}

/// Skips spaces and tabs (not newlines) from `idx`.
pub fn skip_inline_ws(text: &str, mut idx: usize) -> usize {
    let bytes = text.as_bytes();
    while idx < bytes.len() && (bytes[idx] == b' ' || bytes[idx] == b'\t') {
        idx += 1;
    }
    idx
}

/// Reads the environment name out of `\begin{name}` / `\end{name}` where
/// `brace_idx` points at the opening brace. Returns (name, end-of-group).
pub fn env_name_at(text: &str, brace_idx: usize) -> Option<(&str, usize)> {
    let group = brace_group(text, brace_idx)?;
    let name = text[group.start + 1..group.end - 1].trim();
    Some((name, group.end))
}

/// Span of one environment: `full` covers `\begin{..}` through `\end{..}`,
/// `body` the text in between.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EnvSpan {
    pub name: String,
    pub full: Range<usize>,
    pub body: Range<usize>,
}

/// Scans an environment whose `\begin` starts at `begin_idx`. Nested
/// environments of the same name are matched; verbatim-like inner
/// environments are skipped literally. Returns `None` when no matching
/// `\end` exists (unclosed environment).
pub fn scan_env(text: &str, begin_idx: usize) -> Option<EnvSpan> {
    let (name_r, full_r) = command_at(text, begin_idx)?;
    debug_assert_eq!(&text[name_r.clone()], "begin");
    let brace = skip_ws(text, full_r.end);
    let (name, after_begin) = env_name_at(text, brace)?;
    let name = name.to_string();

    if is_verbatim_env(&name) {
        // Literal search: verbatim bodies are not scanned.
        let needle_a = format!("\\end{{{name}}}");
        let needle_b = format!("\\end {{{name}}}");
        let found = text[after_begin..]
            .find(&needle_a)
            .map(|p| (p, needle_a.len()))
            .into_iter()
            .chain(
                text[after_begin..]
                    .find(&needle_b)
                    .map(|p| (p, needle_b.len())),
            )
            .min_by_key(|(p, _)| *p);
        let (rel, nlen) = found?;
        let end_start = after_begin + rel;
        return Some(EnvSpan {
            name,
            full: begin_idx..end_start + nlen,
            body: after_begin..end_start,
        });
    }

    let mut depth = 1usize;
    let mut i = after_begin;
    let bytes = text.as_bytes();
    while i < bytes.len() {
        match bytes[i] {
            b'%' if !is_escaped(text, i) => {
                i = line_end(text, i);
                continue;
            }
            b'\\' => {
                if let Some((cmd_name, cmd_full)) = command_at(text, i) {
                    let cmd = &text[cmd_name.clone()];
                    if cmd == "begin" || cmd == "end" {
                        let brace = skip_ws(text, cmd_full.end);
                        if let Some((inner, after)) = env_name_at(text, brace) {
                            if cmd == "begin" && is_verbatim_env(inner) {
                                // Jump over the literal body.
                                if let Some(span) = scan_env(text, i) {
                                    i = span.full.end;
                                    continue;
                                }
                                return None;
                            }
                            if inner == name {
                                if cmd == "begin" {
                                    depth += 1;
                                } else {
                                    depth -= 1;
                                    if depth == 0 {
                                        return Some(EnvSpan {
                                            name,
                                            full: begin_idx..after,
                                            body: after_begin..i,
                                        });
                                    }
                                }
                            }
                            i = after;
                            continue;
                        }
                    }
                    i = cmd_full.end;
                    continue;
                }
                i += 1;
            }
            _ => i += 1,
        }
    }
    None
}

/// Offset one past the end of the line containing `idx` (the index of the
/// terminating newline, or text length when the line is last).
pub fn line_end(text: &str, idx: usize) -> usize {
    match text[idx..].find('\n') {
        Some(rel) => idx + rel,
        None => text.len(),
    }
}

/// Finds the next unescaped occurrence of `needle_char`, skipping comments
/// when `skip_comments` is set.
pub fn find_unescaped(text: &str, needle: u8, mut from: usize, skip_comments: bool) -> Option<usize> {
    let bytes = text.as_bytes();
    while from < bytes.len() {
        match bytes[from] {
            b'\\' => {
                from += 1 + text.get(from + 1..)?.chars().next().map_or(0, char::len_utf8);
            }
            b'%' if skip_comments && needle != b'%' => {
                from = line_end(text, from);
            }
            b if b == needle => return Some(from),
            _ => from += 1,
        }
    }
    None
}

/// True when the text between `a` and `b` contains a blank line (a newline,
/// optional horizontal whitespace, then another newline).
pub fn has_blank_line(text: &str, range: Range<usize>) -> bool {
    let mut newlines = 0usize;
    for ch in text[range].chars() {
        match ch {
            '\n' => {
                newlines += 1;
                if newlines >= 2 {
                    return true;
                }
            }
            ' ' | '\t' | '\r' => {}
            _ => newlines = 0,
        }
    }
    false
}

/// Checks that every `{` has a matching `}` within `text`, escape-aware.
/// Returns false on negative depth or unclosed groups.
pub fn braces_balanced(text: &str) -> bool {
    let bytes = text.as_bytes();
    let mut depth = 0i64;
    let mut i = 0usize;
    while i < bytes.len() {
        match bytes[i] {
            b'\\' => {
                i += 1 + text[i + 1..].chars().next().map_or(0, char::len_utf8);
                continue;
            }
            b'{' => depth += 1,
            b'}' => {
                depth -= 1;
                if depth < 0 {
                    return false;
                }
            }
            _ => {}
        }
        i += 1;
    }
    depth == 0
}

/// Checks that `\begin{..}` / `\end{..}` pairs nest properly within `text`.
/// Verbatim bodies are skipped literally.
pub fn envs_balanced(text: &str) -> bool {
    let mut stack: Vec<String> = Vec::new();
    let bytes = text.as_bytes();
    let mut i = 0usize;
    while i < bytes.len() {
        if bytes[i] == b'\\' {
            if let Some((name_r, full_r)) = command_at(text, i) {
                let cmd = &text[name_r];
                if cmd == "begin" || cmd == "end" {
                    let brace = skip_ws(text, full_r.end);
                    if let Some((env, after)) = env_name_at(text, brace) {
                        if cmd == "begin" {
                            if is_verbatim_env(env) {
                                match scan_env(text, i) {
                                    Some(span) => {
                                        i = span.full.end;
                                        continue;
                                    }
                                    None => return false,
                                }
                            }
                            stack.push(env.to_string());
                        } else if stack.pop().as_deref() != Some(env) {
                            return false;
                        }
                        i = after;
                        continue;
                    }
                }
                i = full_r.end;
                continue;
            }
        }
        i += 1;
    }
    stack.is_empty()
}
