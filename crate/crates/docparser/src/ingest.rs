//! Source acquisition: load a document from a directory, a gzipped tar
//! archive, or a single `.tex` file; pick the main file; splice includes
//! into one flat buffer.

use std::collections::BTreeMap;
use std::io::Read;
use std::path::Path;

use sha2::{Digest, Sha256};

use crate::error::IngestError;
use crate::latex;
use crate::source::{normalize_path, FileContent, FlatSource, SourceTree};

const TEXT_EXTENSIONS: &[&str] = &[
    "tex", "sty", "cls", "bib", "bbl", "bst", "clo", "def", "txt", "md",
];

fn is_text_path(path: &str) -> bool {
    Path::new(path)
        .extension()
        .and_then(|e| e.to_str())
        .map(|e| TEXT_EXTENSIONS.contains(&e.to_ascii_lowercase().as_str()))
        .unwrap_or(false)
}

fn doc_id_from_path(path: &Path) -> String {
    let stem = path
        .file_name()
        .map(|n| n.to_string_lossy().to_string())
        .unwrap_or_else(|| "doc".to_string());
    let stem = stem
        .strip_suffix(".tar.gz")
        .or_else(|| stem.strip_suffix(".tgz"))
        .or_else(|| stem.strip_suffix(".tex"))
        .or_else(|| stem.strip_suffix(".gz"))
        .unwrap_or(&stem);
    let cleaned: String = stem
        .chars()
        .map(|c| if c.is_ascii_alphanumeric() || c == '-' || c == '_' || c == '.' { c } else { '_' })
        .collect();
    if cleaned.is_empty() {
        "doc".to_string()
    } else {
        cleaned
    }
}

fn digest_files(files: &BTreeMap<String, FileContent>) -> String {
    let mut hasher = Sha256::new();
    for (path, content) in files {
        hasher.update(path.as_bytes());
        hasher.update([0u8]);
        hasher.update(content.as_bytes());
        hasher.update([0u8]);
    }
    format!("sha256:{:x}", hasher.finalize())
}

fn insert_file(files: &mut BTreeMap<String, FileContent>, path: String, bytes: Vec<u8>) {
    let content = if is_text_path(&path) {
        FileContent::Text(String::from_utf8_lossy(&bytes).into_owned())
    } else {
        FileContent::Binary(bytes)
    };
    files.insert(path, content);
}

/// Loads a source tree from `input`: a directory, a `.tar.gz` / `.tgz`
/// archive, or a bare `.tex` file. Hidden files and VCS metadata are
/// skipped. Fails if no `.tex` file is present.
pub fn ingest_archive(input: &Path) -> Result<SourceTree, IngestError> {
    let io_err = |source| IngestError::Io {
        path: input.to_path_buf(),
        source,
    };
    let mut files = BTreeMap::new();

    if input.is_dir() {
        collect_dir(input, input, &mut files)?;
    } else {
        let name = input
            .file_name()
            .map(|n| n.to_string_lossy().to_string())
            .unwrap_or_default();
        if name.ends_with(".tar.gz") || name.ends_with(".tgz") || name.ends_with(".tar") {
            let raw = std::fs::read(input).map_err(io_err)?;
            let reader: Box<dyn Read> = if name.ends_with(".tar") {
                Box::new(std::io::Cursor::new(raw))
            } else {
                Box::new(flate2::read::GzDecoder::new(std::io::Cursor::new(raw)))
            };
            let mut archive = tar::Archive::new(reader);
            let entries = archive.entries().map_err(|e| IngestError::MalformedArchive {
                path: input.to_path_buf(),
                reason: e.to_string(),
            })?;
            for entry in entries {
                let mut entry = entry.map_err(|e| IngestError::MalformedArchive {
                    path: input.to_path_buf(),
                    reason: e.to_string(),
                })?;
                if !entry.header().entry_type().is_file() {
                    continue;
                }
                let raw_path = entry
                    .path()
                    .map_err(|e| IngestError::MalformedArchive {
                        path: input.to_path_buf(),
                        reason: e.to_string(),
                    })?
                    .to_string_lossy()
                    .into_owned();
                let norm = normalize_path(&raw_path);
                if norm.is_empty() || norm.split('/').any(|s| s.starts_with('.')) {
                    continue;
                }
                let mut bytes = Vec::new();
                entry.read_to_end(&mut bytes).map_err(io_err)?;
                insert_file(&mut files, norm, bytes);
            }
        } else if name.ends_with(".tex") {
            let bytes = std::fs::read(input).map_err(io_err)?;
            insert_file(&mut files, name, bytes);
        } else {
            return Err(IngestError::MalformedArchive {
                path: input.to_path_buf(),
                reason: "expected a directory, .tar.gz, .tgz, or .tex file".to_string(),
            });
        }
    }

    if !files.keys().any(|p| p.ends_with(".tex")) {
        return Err(IngestError::EmptySource {
            path: input.to_path_buf(),
        });
    }

    Ok(SourceTree {
        source_digest: digest_files(&files),
        files,
        doc_id: doc_id_from_path(input),
    })
}

fn collect_dir(
    root: &Path,
    dir: &Path,
    files: &mut BTreeMap<String, FileContent>,
) -> Result<(), IngestError> {
    let io_err = |path: &Path, source| IngestError::Io {
        path: path.to_path_buf(),
        source,
    };
    let mut entries: Vec<_> = std::fs::read_dir(dir)
        .map_err(|e| io_err(dir, e))?
        .collect::<Result<_, _>>()
        .map_err(|e| io_err(dir, e))?;
    entries.sort_by_key(|e| e.file_name());
    for entry in entries {
        let path = entry.path();
        let name = entry.file_name().to_string_lossy().into_owned();
        if name.starts_with('.') {
            continue;
        }
        if path.is_dir() {
            collect_dir(root, &path, files)?;
        } else {
            let rel = path
                .strip_prefix(root)
                .expect("entry under root")
                .to_string_lossy()
                .into_owned();
            let bytes = std::fs::read(&path).map_err(|e| io_err(&path, e))?;
            insert_file(files, normalize_path(&rel), bytes);
        }
    }
    Ok(())
}

/// Picks the main file: the unique `.tex` file containing an uncommented
/// `\documentclass` (or `\documentstyle`). Ties are broken by preferring
/// conventional names (`main.tex`, `paper.tex`, `ms.tex`), then shallower
/// paths, then lexicographic order.
pub fn detect_main_file(tree: &SourceTree) -> Result<String, IngestError> {
    let mut candidates: Vec<&String> = Vec::new();
    for (path, text) in tree.tex_files() {
        if has_documentclass(text) {
            candidates.push(path);
        }
    }
    if candidates.is_empty() {
        return Err(IngestError::NoMainFile);
    }
    candidates.sort_by_key(|p| {
        let name = p.rsplit('/').next().unwrap_or(p);
        let preferred = !matches!(name, "main.tex" | "paper.tex" | "ms.tex");
        (preferred, p.matches('/').count(), p.to_string())
    });
    Ok(candidates[0].clone())
}

fn has_documentclass(text: &str) -> bool {
    for marker in ["\\documentclass", "\\documentstyle"] {
        let mut from = 0;
        while let Some(rel) = text[from..].find(marker) {
            let at = from + rel;
            let line_start = text[..at].rfind('\n').map_or(0, |i| i + 1);
            let commented = text[line_start..at]
                .bytes()
                .enumerate()
                .any(|(i, b)| b == b'%' && !latex::is_escaped(text, line_start + i));
            if !commented {
                return true;
            }
            from = at + marker.len();
        }
    }
    false
}

/// Result of include expansion: the flat buffer plus warnings for includes
/// that could not be resolved.
pub struct ExpandOutcome {
    pub flat: FlatSource,
    pub warnings: Vec<String>,
}

/// Splices every `\input{..}` / `\include{..}` into one buffer,
/// depth-first, recording per-chunk provenance. Commented includes and
/// includes inside verbatim bodies are not expanded. Missing targets leave
/// the command in place and add a warning; cycles are a hard error.
pub fn expand_inputs(tree: &SourceTree, main: &str) -> Result<ExpandOutcome, IngestError> {
    let mut chunks: Vec<(String, String, u32, u32)> = Vec::new();
    let mut warnings = Vec::new();
    let mut stack = vec![main.to_string()];
    expand_file(tree, main, &mut chunks, &mut warnings, &mut stack)?;
    Ok(ExpandOutcome {
        flat: FlatSource::from_chunks(chunks, tree.doc_id.clone(), tree.source_digest.clone()),
        warnings,
    })
}

fn line_of(text: &str, offset: usize) -> u32 {
    (text[..offset].bytes().filter(|&b| b == b'\n').count() + 1) as u32
}

fn resolve_include(tree: &SourceTree, target: &str) -> Option<String> {
    let norm = normalize_path(target.trim());
    for candidate in [norm.clone(), format!("{norm}.tex")] {
        if tree.get_text(&candidate).is_some() {
            return Some(candidate);
        }
    }
    None
}

fn expand_file(
    tree: &SourceTree,
    path: &str,
    chunks: &mut Vec<(String, String, u32, u32)>,
    warnings: &mut Vec<String>,
    stack: &mut Vec<String>,
) -> Result<(), IngestError> {
    let text = tree.get_text(path).expect("caller resolved path");
    let bytes = text.as_bytes();
    let mut emit_from = 0usize;
    let mut i = 0usize;

    let flush = |chunks: &mut Vec<(String, String, u32, u32)>, from: usize, to: usize| {
        if from < to {
            chunks.push((
                text[from..to].to_string(),
                path.to_string(),
                line_of(text, from),
                line_of(text, to.saturating_sub(1)),
            ));
        }
    };

    while i < bytes.len() {
        match bytes[i] {
            b'%' if !latex::is_escaped(text, i) => {
                i = latex::line_end(text, i);
            }
            b'\\' => {
                if let Some((name_r, full_r)) = latex::command_at(text, i) {
                    let cmd = &text[name_r];
                    if cmd == "begin" {
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
                        continue;
                    }
                    if cmd == "input" || cmd == "include" {
                        let brace = latex::skip_inline_ws(text, full_r.end);
                        if let Some(group) = latex::brace_group(text, brace) {
                            let target = &text[group.start + 1..group.end - 1];
                            match resolve_include(tree, target) {
                                Some(resolved) => {
                                    if stack.contains(&resolved) {
                                        let mut chain = stack.clone();
                                        chain.push(resolved);
                                        return Err(IngestError::IncludeCycle {
                                            chain: chain.join(" -> "),
                                        });
                                    }
                                    flush(chunks, emit_from, i);
                                    // \include implies page breaks in LaTeX;
                                    // for flattening both behave as splices.
                                    stack.push(resolved.clone());
                                    expand_file(tree, &resolved, chunks, warnings, stack)?;
                                    stack.pop();
                                    i = group.end;
                                    emit_from = i;
                                    continue;
                                }
                                None => {
                                    warnings.push(format!(
                                        "unresolved \\{cmd}{{{target}}} in {path}"
                                    ));
                                    i = group.end;
                                    continue;
                                }
                            }
                        }
                    }
                    i = full_r.end;
                    continue;
                }
                i += 1;
            }
            _ => i += 1,
        }
    }
    flush(chunks, emit_from, text.len());
    Ok(())
}
