//! Stage-one source cleanup. Every transform is expressed as edits over
//! the flat buffer (or tree), so provenance survives each step.

use std::collections::BTreeMap;
use std::path::Path;

use sha2::{Digest, Sha256};

use crate::config::{NoiseCommand, NoiseConfig};
use crate::latex;
use crate::source::{Edit, FileContent, FlatSource, SourceTree};

/// Removes every unescaped `%`-to-end-of-line span, including the line
/// terminator (TeX comment semantics join the following line). Verbatim
/// environment bodies and `\verb` arguments are left intact.
pub fn strip_comments(flat: &FlatSource) -> FlatSource {
    let text = &flat.text;
    let bytes = text.as_bytes();
    let mut edits = Vec::new();
    let mut i = 0usize;
    while i < bytes.len() {
        match bytes[i] {
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
                    } else if cmd == "verb" || cmd == "verb*" {
                        // \verb<delim>...<delim>: skip the literal argument.
                        if let Some(delim) = text[full_r.end..].chars().next() {
                            let arg_start = full_r.end + delim.len_utf8();
                            if let Some(rel) = text[arg_start..].find(delim) {
                                i = arg_start + rel + delim.len_utf8();
                                continue;
                            }
                        }
                    }
                    i = full_r.end;
                    continue;
                }
                i += 1;
            }
            b'%' => {
                let eol = latex::line_end(text, i);
                let end = if eol < bytes.len() { eol + 1 } else { eol };
                edits.push(Edit::delete(i..end));
                i = end;
            }
            _ => i += 1,
        }
    }
    flat.apply_edits(edits)
}

/// Outcome of noise removal: the edited source plus one warning per
/// occurrence left untouched because its arguments were unbalanced.
pub struct NoiseOutcome {
    pub flat: FlatSource,
    pub warnings: Vec<String>,
}

/// Removes every occurrence of each policy command (with its declared
/// brace arguments) outside verbatim bodies. `\ref`, `\label`, and any
/// command not in the policy are untouched. Applying the same policy to
/// its own output is the identity.
pub fn remove_noise_tokens(flat: &FlatSource, policy: &NoiseConfig) -> NoiseOutcome {
    let commands: Vec<NoiseCommand> = policy.parsed_commands();
    let text = &flat.text;
    let bytes = text.as_bytes();
    let mut edits = Vec::new();
    let mut warnings = Vec::new();
    let mut i = 0usize;
    while i < bytes.len() {
        match bytes[i] {
            b'\\' => {
                let Some((name_r, full_r)) = latex::command_at(text, i) else {
                    i += 1;
                    continue;
                };
                let cmd = &text[name_r];
                if cmd == "begin" {
                    let brace = latex::skip_ws(text, full_r.end);
                    if let Some((env, _)) = latex::env_name_at(text, brace) {
                        if latex::is_verbatim_env(env) || policy.verbatim_envs.iter().any(|v| v == env)
                        {
                            if let Some(span) = latex::scan_env(text, i) {
                                i = span.full.end;
                                continue;
                            }
                        }
                    }
                    i = full_r.end;
                    continue;
                }
                let Some(noise) = commands.iter().find(|c| c.name == cmd) else {
                    i = full_r.end;
                    continue;
                };
                let mut end = full_r.end;
                let mut ok = true;
                for _ in 0..noise.argc {
                    let at = latex::skip_ws(text, end);
                    match latex::brace_group(text, at) {
                        Some(g) => end = g.end,
                        None => {
                            ok = false;
                            break;
                        }
                    }
                }
                if ok {
                    edits.push(Edit::delete(i..end));
                    i = end;
                } else {
                    warnings.push(format!(
                        "noise command \\{cmd} at offset {i} has unbalanced arguments; left in place"
                    ));
                    i = full_r.end;
                }
            }
            _ => i += 1,
        }
    }
    let mut out = flat.apply_edits(edits);
    out.noise_policy = policy.policy_id.clone();
    NoiseOutcome {
        flat: out,
        warnings,
    }
}

const GRAPHIC_EXTENSIONS: &[&str] = &["png", "jpg", "jpeg", "pdf", "eps", "ps", "gif", "bmp"];

fn resolve_graphic(tree: &SourceTree, target: &str) -> Option<String> {
    let norm = crate::source::normalize_path(target.trim());
    if tree.files.contains_key(&norm) {
        return Some(norm);
    }
    for ext in GRAPHIC_EXTENSIONS {
        let candidate = format!("{norm}.{ext}");
        if tree.files.contains_key(&candidate) {
            return Some(candidate);
        }
    }
    None
}

fn is_png_path(path: &str) -> bool {
    Path::new(path)
        .extension()
        .and_then(|e| e.to_str())
        .map(|e| e.eq_ignore_ascii_case("png"))
        .unwrap_or(false)
}

/// 64x64 solid white PNG used when an image cannot be converted.
fn placeholder_png() -> Vec<u8> {
    let img = image::GrayImage::from_pixel(64, 64, image::Luma([255u8]));
    let mut out = Vec::new();
    img.write_to(
        &mut std::io::Cursor::new(&mut out),
        image::ImageFormat::Png,
    )
    .expect("in-memory png encode");
    out
}

/// Converts one image via the external command template (`{in}`, `{out}`
/// placeholders). Returns the PNG bytes.
fn convert_external(cmd_template: &str, input: &[u8], in_ext: &str) -> Result<Vec<u8>, String> {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let in_path = dir.path().join(format!("in.{in_ext}"));
    let out_path = dir.path().join("out.png");
    std::fs::write(&in_path, input).map_err(|e| e.to_string())?;
    let cmd = cmd_template
        .replace("{in}", &in_path.to_string_lossy())
        .replace("{out}", &out_path.to_string_lossy());
    let parts: Vec<&str> = cmd.split_whitespace().collect();
    let (prog, args) = parts.split_first().ok_or("empty convert command")?;
    let status = std::process::Command::new(prog)
        .args(args)
        .stdout(std::process::Stdio::null())
        .stderr(std::process::Stdio::null())
        .status()
        .map_err(|e| e.to_string())?;
    if !status.success() {
        return Err(format!("converter exited with {status}"));
    }
    std::fs::read(&out_path).map_err(|e| e.to_string())
}

/// Rewrites every graphic reference to point at a PNG, converting non-PNG
/// assets. A tree containing only PNG graphics comes back unchanged.
///
/// Conversion results are cached in `cache_dir` keyed by content hash;
/// writes are atomic (temp file then rename) so concurrent processes can
/// share one cache. Without a converter command, non-PNG graphics become
/// a white placeholder and a warning is recorded. `source_digest` is
/// never altered: it identifies the input as ingested.
pub fn normalize_figures(
    tree: &SourceTree,
    convert_cmd: &str,
    cache_dir: Option<&Path>,
) -> (SourceTree, Vec<String>) {
    let mut warnings = Vec::new();
    let mut new_files: BTreeMap<String, FileContent> = tree.files.clone();
    // old asset path -> new asset path
    let mut renames: BTreeMap<String, String> = BTreeMap::new();

    let tex_paths: Vec<String> = tree.tex_files().map(|(p, _)| p.clone()).collect();
    let mut edited_texts: BTreeMap<String, String> = BTreeMap::new();

    for tex_path in &tex_paths {
        let text = tree.get_text(tex_path).expect("listed tex file");
        let bytes = text.as_bytes();
        let mut edits: Vec<(std::ops::Range<usize>, String)> = Vec::new();
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
            if &text[name_r] != "includegraphics" {
                i = full_r.end;
                continue;
            }
            let mut cursor = latex::skip_ws(text, full_r.end);
            if let Some(opt) = latex::bracket_group(text, cursor) {
                cursor = latex::skip_ws(text, opt.end);
            }
            let Some(group) = latex::brace_group(text, cursor) else {
                i = full_r.end;
                continue;
            };
            let target = text[group.start + 1..group.end - 1].to_string();
            i = group.end;

            let Some(resolved) = resolve_graphic(tree, &target) else {
                warnings.push(format!(
                    "unresolved graphic {target:?} in {tex_path}; left untouched"
                ));
                continue;
            };
            if is_png_path(&resolved) {
                continue;
            }
            let new_path = renames.get(&resolved).cloned().unwrap_or_else(|| {
                let stem = resolved.rsplit_once('.').map(|(s, _)| s).unwrap_or(&resolved);
                let mut candidate = format!("{stem}.png");
                if tree.files.contains_key(&candidate) {
                    candidate = format!("{stem}_converted.png");
                }
                let original = tree.files.get(&resolved).expect("resolved asset");
                let png = convert_to_png(original.as_bytes(), &resolved, convert_cmd, cache_dir)
                    .unwrap_or_else(|why| {
                        warnings.push(format!(
                            "cannot convert {resolved} to png ({why}); using white placeholder"
                        ));
                        placeholder_png()
                    });
                new_files.remove(&resolved);
                new_files.insert(candidate.clone(), FileContent::Binary(png));
                renames.insert(resolved.clone(), candidate.clone());
                candidate
            });
            edits.push((group.start + 1..group.end - 1, new_path));
        }
        if !edits.is_empty() {
            let mut out = String::with_capacity(text.len());
            let mut pos = 0usize;
            for (range, rep) in edits {
                out.push_str(&text[pos..range.start]);
                out.push_str(&rep);
                pos = range.end;
            }
            out.push_str(&text[pos..]);
            edited_texts.insert(tex_path.clone(), out);
        }
    }

    for (path, text) in edited_texts {
        new_files.insert(path, FileContent::Text(text));
    }

    (
        SourceTree {
            files: new_files,
            doc_id: tree.doc_id.clone(),
            source_digest: tree.source_digest.clone(),
        },
        warnings,
    )
}

fn convert_to_png(
    input: &[u8],
    source_path: &str,
    convert_cmd: &str,
    cache_dir: Option<&Path>,
) -> Result<Vec<u8>, String> {
    let ext = Path::new(source_path)
        .extension()
        .and_then(|e| e.to_str())
        .unwrap_or("bin")
        .to_ascii_lowercase();

    // jpeg/bmp/gif decode in-process; vector formats need the external tool.
    if matches!(ext.as_str(), "jpg" | "jpeg" | "bmp" | "gif") {
        if let Ok(img) = image::load_from_memory(input) {
            let mut out = Vec::new();
            img.write_to(&mut std::io::Cursor::new(&mut out), image::ImageFormat::Png)
                .map_err(|e| e.to_string())?;
            return Ok(out);
        }
    }

    if convert_cmd.is_empty() {
        return Err("no converter configured".to_string());
    }

    let key = {
        let mut h = Sha256::new();
        h.update(input);
        format!("{:x}", h.finalize())
    };
    if let Some(dir) = cache_dir {
        let cached = dir.join(format!("{key}.png"));
        if let Ok(bytes) = std::fs::read(&cached) {
            return Ok(bytes);
        }
    }
    let png = convert_external(convert_cmd, input, &ext)?;
    if let Some(dir) = cache_dir {
        let _ = std::fs::create_dir_all(dir);
        let final_path = dir.join(format!("{key}.png"));
        let tmp = dir.join(format!("{key}.png.tmp.{}", std::process::id()));
        if std::fs::write(&tmp, &png).is_ok() {
            let _ = std::fs::rename(&tmp, &final_path);
        }
    }
    Ok(png)
}

const COLOR_KEYS: &[&str] = &[
    "linkcolor",
    "citecolor",
    "urlcolor",
    "filecolor",
    "anchorcolor",
    "menucolor",
    "runcolor",
    "allcolors",
];

fn neutralize_keyval(opts: &str) -> String {
    let mut parts: Vec<String> = Vec::new();
    let mut saw_colorlinks = false;
    let mut depth = 0i32;
    let mut current = String::new();
    let flush = |parts: &mut Vec<String>, current: &mut String, saw: &mut bool| {
        let item = current.trim();
        if item.is_empty() {
            current.clear();
            return;
        }
        let key = item.split('=').next().unwrap_or("").trim();
        let rewritten = if key == "colorlinks" {
            *saw = true;
            "colorlinks=false".to_string()
        } else if COLOR_KEYS.contains(&key) {
            format!("{key}=black")
        } else {
            item.to_string()
        };
        parts.push(rewritten);
        current.clear();
    };
    for ch in opts.chars() {
        match ch {
            '{' => {
                depth += 1;
                current.push(ch);
            }
            '}' => {
                depth -= 1;
                current.push(ch);
            }
            ',' if depth == 0 => flush(&mut parts, &mut current, &mut saw_colorlinks),
            _ => current.push(ch),
        }
    }
    flush(&mut parts, &mut current, &mut saw_colorlinks);
    if !saw_colorlinks {
        parts.push("colorlinks=false".to_string());
    }
    parts.join(",")
}

/// Forces hyperref link coloring off so link text cannot leak color into
/// the isolation renders: `colorlinks=false` and all `*color` keys set to
/// black, in both `\usepackage[..]{hyperref}` options and `\hypersetup`.
/// A source that never loads hyperref is returned unchanged.
pub fn neutralize_hyperref(flat: &FlatSource) -> FlatSource {
    let text = &flat.text;
    let bytes = text.as_bytes();
    let mut edits = Vec::new();
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
            "usepackage" => {
                let mut cursor = latex::skip_ws(text, full_r.end);
                let opt = latex::bracket_group(text, cursor);
                if let Some(o) = &opt {
                    cursor = latex::skip_ws(text, o.end);
                }
                let Some(group) = latex::brace_group(text, cursor) else {
                    i = full_r.end;
                    continue;
                };
                let pkgs = &text[group.start + 1..group.end - 1];
                if pkgs.split(',').any(|p| p.trim() == "hyperref") {
                    match opt {
                        Some(o) => {
                            let inner = text[o.start + 1..o.end - 1].to_string();
                            edits.push(Edit::replace(
                                o.start + 1..o.end - 1,
                                neutralize_keyval(&inner),
                            ));
                        }
                        None => {
                            edits.push(Edit::replace(
                                full_r.end..full_r.end,
                                "[colorlinks=false]",
                            ));
                        }
                    }
                }
                i = group.end;
            }
            "hypersetup" => {
                let at = latex::skip_ws(text, full_r.end);
                if let Some(group) = latex::brace_group(text, at) {
                    let inner = text[group.start + 1..group.end - 1].to_string();
                    edits.push(Edit::replace(
                        group.start + 1..group.end - 1,
                        neutralize_keyval(&inner),
                    ));
                    i = group.end;
                } else {
                    i = full_r.end;
                }
            }
            _ => i = full_r.end,
        }
    }
    if edits.is_empty() {
        flat.clone()
    } else {
        flat.apply_edits(edits)
    }
}
