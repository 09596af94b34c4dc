//! In-memory representation of a document's source: the file tree as
//! ingested, and the flattened single-buffer form that all later stages
//! operate on.

use std::collections::BTreeMap;
use std::ops::Range;

/// One file from the ingested source tree. Text files hold UTF-8 content
/// (lossily decoded); binary assets hold raw bytes.
#[derive(Debug, Clone)]
pub enum FileContent {
    Text(String),
    Binary(Vec<u8>),
}

impl FileContent {
    pub fn as_text(&self) -> Option<&str> {
        match self {
            FileContent::Text(t) => Some(t),
            FileContent::Binary(_) => None,
        }
    }

    pub fn as_bytes(&self) -> &[u8] {
        match self {
            FileContent::Text(t) => t.as_bytes(),
            FileContent::Binary(b) => b,
        }
    }
}

/// A document source tree keyed by root-relative path (forward slashes).
/// Paths are normalized: no leading `./`, no backslashes.
#[derive(Debug, Clone, Default)]
pub struct SourceTree {
    pub files: BTreeMap<String, FileContent>,
    /// Identifier derived from the input file name or directory name.
    pub doc_id: String,
    /// Hex SHA-256 over the sorted (path, content) stream as ingested,
    /// before any normalization. Stable across re-ingests of identical
    /// input.
    pub source_digest: String,
}

impl SourceTree {
    pub fn text_files(&self) -> impl Iterator<Item = (&String, &String)> {
        self.files.iter().filter_map(|(p, c)| match c {
            FileContent::Text(t) => Some((p, t)),
            FileContent::Binary(_) => None,
        })
    }

    pub fn tex_files(&self) -> impl Iterator<Item = (&String, &String)> {
        self.text_files().filter(|(p, _)| p.ends_with(".tex"))
    }

    pub fn get_text(&self, path: &str) -> Option<&str> {
        self.files.get(path).and_then(FileContent::as_text)
    }
}

pub fn normalize_path(path: &str) -> String {
    let p = path.replace('\\', "/");
    let p = p.strip_prefix("./").unwrap_or(&p);
    // Collapse interior "./" segments and drop empty segments.
    let mut out: Vec<&str> = Vec::new();
    for seg in p.split('/') {
        match seg {
            "" | "." => {}
            ".." => {
                out.pop();
            }
            s => out.push(s),
        }
    }
    out.join("/")
}

/// Provenance of one contiguous range of the flat buffer.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct OriginEntry {
    /// Range into `FlatSource::text`.
    pub range: Range<usize>,
    /// Root-relative path of the file this range came from.
    pub file: String,
    /// 1-based inclusive line range within that file. Kept as ingested;
    /// later edits shrink ranges but do not recompute line numbers.
    pub line_start: u32,
    pub line_end: u32,
}

/// A single replacement applied to a flat buffer. Ranges of distinct edits
/// must not overlap.
#[derive(Debug, Clone)]
pub struct Edit {
    pub range: Range<usize>,
    pub replacement: String,
}

impl Edit {
    pub fn delete(range: Range<usize>) -> Self {
        Edit {
            range,
            replacement: String::new(),
        }
    }

    pub fn replace(range: Range<usize>, replacement: impl Into<String>) -> Self {
        Edit {
            range,
            replacement: replacement.into(),
        }
    }
}

/// The flattened document: one text buffer plus an origin map.
///
/// Invariant: origin entries are non-overlapping, sorted by range start,
/// and jointly cover `0..text.len()`.
#[derive(Debug, Clone)]
pub struct FlatSource {
    pub text: String,
    pub origin: Vec<OriginEntry>,
    pub doc_id: String,
    pub source_digest: String,
    /// Identifier of the noise policy applied (empty until applied).
    pub noise_policy: String,
}

impl FlatSource {
    /// Builds a flat source from pre-assembled chunks.
    pub fn from_chunks(
        chunks: Vec<(String, String, u32, u32)>,
        doc_id: String,
        source_digest: String,
    ) -> FlatSource {
        let mut text = String::new();
        let mut origin = Vec::with_capacity(chunks.len());
        for (chunk, file, line_start, line_end) in chunks {
            if chunk.is_empty() {
                continue;
            }
            let start = text.len();
            text.push_str(&chunk);
            origin.push(OriginEntry {
                range: start..text.len(),
                file,
                line_start,
                line_end,
            });
        }
        FlatSource {
            text,
            origin,
            doc_id,
            source_digest,
            noise_policy: String::new(),
        }
    }

    /// Single-file convenience constructor used by tests and the renderer.
    pub fn from_text(text: impl Into<String>, file: &str) -> FlatSource {
        let text = text.into();
        let lines = text.lines().count().max(1) as u32;
        let len = text.len();
        FlatSource {
            origin: vec![OriginEntry {
                range: 0..len,
                file: file.to_string(),
                line_start: 1,
                line_end: lines,
            }],
            text,
            doc_id: String::new(),
            source_digest: String::new(),
            noise_policy: String::new(),
        }
    }

    /// The origin entry containing flat offset `pos`.
    pub fn origin_at(&self, pos: usize) -> Option<&OriginEntry> {
        let idx = self
            .origin
            .partition_point(|e| e.range.end <= pos)
            .min(self.origin.len().saturating_sub(1));
        self.origin.get(idx).filter(|e| e.range.contains(&pos))
    }

    /// Applies non-overlapping edits, rebuilding text and origin map.
    /// Replacement text inherits the provenance of the range it replaces
    /// (for pure insertions, of the entry containing the insertion point).
    ///
    /// Panics in debug builds if edits overlap or exceed the buffer.
    pub fn apply_edits(&self, mut edits: Vec<Edit>) -> FlatSource {
        edits.sort_by_key(|e| (e.range.start, e.range.end));
        edits.retain(|e| !(e.range.is_empty() && e.replacement.is_empty()));
        debug_assert!(edits
            .windows(2)
            .all(|w| w[0].range.end <= w[1].range.start));
        debug_assert!(edits.last().map_or(true, |e| e.range.end <= self.text.len()));

        let mut text = String::with_capacity(self.text.len());
        let mut origin: Vec<OriginEntry> = Vec::with_capacity(self.origin.len());
        let mut cursor = 0usize; // position in the old buffer
        let mut entry_idx = 0usize;

        let push_span = |origin: &mut Vec<OriginEntry>,
                             text: &mut String,
                             entry_idx: &mut usize,
                             old_range: Range<usize>,
                             src: &FlatSource,
                             replacement: Option<&str>| {
            // Advance entry_idx to the entry containing old_range.start.
            while *entry_idx + 1 < src.origin.len()
                && src.origin[*entry_idx].range.end <= old_range.start
            {
                *entry_idx += 1;
            }
            match replacement {
                Some(rep) => {
                    if rep.is_empty() {
                        return;
                    }
                    let e = &src.origin[(*entry_idx).min(src.origin.len() - 1)];
                    let start = text.len();
                    text.push_str(rep);
                    origin.push(OriginEntry {
                        range: start..text.len(),
                        file: e.file.clone(),
                        line_start: e.line_start,
                        line_end: e.line_end,
                    });
                }
                None => {
                    // Copy old_range verbatim, splitting across entries.
                    let mut pos = old_range.start;
                    let mut idx = *entry_idx;
                    while pos < old_range.end {
                        while src.origin[idx].range.end <= pos {
                            idx += 1;
                        }
                        let e = &src.origin[idx];
                        let take_end = e.range.end.min(old_range.end);
                        let start = text.len();
                        text.push_str(&src.text[pos..take_end]);
                        origin.push(OriginEntry {
                            range: start..text.len(),
                            file: e.file.clone(),
                            line_start: e.line_start,
                            line_end: e.line_end,
                        });
                        pos = take_end;
                    }
                }
            }
        };

        for edit in &edits {
            if cursor < edit.range.start {
                push_span(
                    &mut origin,
                    &mut text,
                    &mut entry_idx,
                    cursor..edit.range.start,
                    self,
                    None,
                );
            }
            push_span(
                &mut origin,
                &mut text,
                &mut entry_idx,
                edit.range.clone(),
                self,
                Some(&edit.replacement),
            );
            cursor = edit.range.end;
        }
        if cursor < self.text.len() {
            push_span(
                &mut origin,
                &mut text,
                &mut entry_idx,
                cursor..self.text.len(),
                self,
                None,
            );
        }

        // Coalesce adjacent entries with identical provenance.
        let mut merged: Vec<OriginEntry> = Vec::with_capacity(origin.len());
        for e in origin {
            match merged.last_mut() {
                Some(last)
                    if last.range.end == e.range.start
                        && last.file == e.file
                        && last.line_start == e.line_start
                        && last.line_end == e.line_end =>
                {
                    last.range.end = e.range.end;
                }
                _ => merged.push(e),
            }
        }

        debug_assert!(coverage_ok(&merged, text.len()));
        FlatSource {
            text,
            origin: merged,
            doc_id: self.doc_id.clone(),
            source_digest: self.source_digest.clone(),
            noise_policy: self.noise_policy.clone(),
        }
    }
}

fn coverage_ok(origin: &[OriginEntry], len: usize) -> bool {
    if len == 0 {
        return origin.is_empty();
    }
    let mut pos = 0usize;
    for e in origin {
        if e.range.start != pos || e.range.end <= e.range.start {
            return false;
        }
        pos = e.range.end;
    }
    pos == len
}
