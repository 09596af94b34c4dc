//! End-to-end pipeline: archive in, genome out.
//!
//! Stage order: ingest, main-file detection, figure normalization,
//! include expansion, comment stripping, noise removal, hyperlink color
//! neutralization, segmentation, annotation, isolation rendering,
//! assembly. A document whose baseline fails to compile still yields a
//! genome carrying the full text analysis with `compile_failed` status;
//! only ingest and I/O errors abort.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::config::Config;
use crate::error::{PipelineError, RenderError, SchemaError};
use crate::genome::{self, Genome};
use crate::{annotate, ingest, preprocess, segment};

/// Runs the full pipeline on one input (directory, tarball, or single
/// `.tex` file).
pub fn run_pipeline(input: &Path, config: &Config) -> Result<Genome, PipelineError> {
    let tree = ingest::ingest_archive(input)?;
    let main = ingest::detect_main_file(&tree)?;
    let mut warnings: Vec<String> = Vec::new();

    let cache_dir = config.scratch_dir().map(|d| d.join("convert-cache"));
    let (tree, fig_warnings) = preprocess::normalize_figures(
        &tree,
        &config.render.figure_convert_cmd,
        cache_dir.as_deref(),
    );
    warnings.extend(fig_warnings);

    let expanded = ingest::expand_inputs(&tree, &main)?;
    warnings.extend(expanded.warnings);
    let flat = preprocess::strip_comments(&expanded.flat);
    let noise = preprocess::remove_noise_tokens(&flat, &config.noise);
    warnings.extend(noise.warnings);
    let flat = preprocess::neutralize_hyperref(&noise.flat);

    let seg = segment::segment_units(&flat);
    warnings.extend(seg.warnings);
    let ann = annotate::annotate_units(&flat, &seg.units);
    warnings.extend(ann.warnings);

    // Scratch space: configured directory (kept) or a temp dir (cleaned).
    let tempdir;
    let scratch: PathBuf = match config.scratch_dir() {
        Some(base) => {
            let dir = base.join(format!("render-{}", tree.doc_id));
            std::fs::create_dir_all(&dir)?;
            dir
        }
        None => {
            tempdir = tempfile::tempdir()?;
            tempdir.path().to_path_buf()
        }
    };

    let render = match crate::render::render_document(
        &flat.text,
        &ann.units,
        &tree,
        &config.render,
        &scratch,
    ) {
        Ok(outcome) => Some(outcome),
        Err(RenderError::Io(e)) => return Err(PipelineError::Io(e)),
        Err(e) => {
            warnings.push(format!("render unavailable: {e}"));
            None
        }
    };

    Ok(genome::assemble_genome(
        &tree.doc_id,
        &tree.source_digest,
        config.render.dpi,
        &flat.text,
        &ann.units,
        &ann.relations,
        render.as_ref(),
        warnings,
    ))
}

/// Writes content to `path` atomically (temp file in the same
/// directory, then rename).
pub fn atomic_write(path: &Path, content: &str) -> std::io::Result<()> {
    let dir = path.parent().unwrap_or(Path::new("."));
    std::fs::create_dir_all(dir)?;
    let mut tmp = tempfile::NamedTempFile::new_in(dir)?;
    std::io::Write::write_all(&mut tmp, content.as_bytes())?;
    tmp.persist(path).map_err(|e| e.error)?;
    Ok(())
}

// ----- batch -------------------------------------------------------------------

#[derive(Debug, Clone)]
pub struct BatchOptions {
    /// Worker threads; 0 uses the rayon default.
    pub jobs: usize,
    /// Skip documents whose existing genome matches the input digest.
    pub resume: bool,
}

impl Default for BatchOptions {
    fn default() -> Self {
        BatchOptions {
            jobs: 0,
            resume: false,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ManifestDoc {
    pub doc_id: String,
    pub input: String,
    /// Genome file name, relative to the manifest's directory.
    pub output: Option<String>,
    pub status: String,
    pub page_count: Option<u32>,
    pub unit_count: usize,
    pub warning_count: usize,
    pub seconds: f64,
    pub resumed: bool,
    pub error: Option<String>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Manifest {
    pub pipeline_version: String,
    pub docs: Vec<ManifestDoc>,
}

fn status_name(status: crate::genome::GenomeStatus) -> &'static str {
    match status {
        crate::genome::GenomeStatus::Ok => "ok",
        crate::genome::GenomeStatus::RenderFailed => "render_failed",
        crate::genome::GenomeStatus::CompileFailed => "compile_failed",
    }
}

/// Documents inside a batch directory: subdirectories, tarballs, and
/// loose `.tex` files, sorted by name. Hidden entries are skipped.
pub fn discover_inputs(dir: &Path) -> std::io::Result<Vec<PathBuf>> {
    let mut out = Vec::new();
    for entry in std::fs::read_dir(dir)? {
        let entry = entry?;
        let path = entry.path();
        let name = entry.file_name().to_string_lossy().to_string();
        if name.starts_with('.') {
            continue;
        }
        if path.is_dir() {
            out.push(path);
        } else if name.ends_with(".tex")
            || name.ends_with(".tar")
            || name.ends_with(".tar.gz")
            || name.ends_with(".tgz")
        {
            out.push(path);
        }
    }
    out.sort();
    Ok(out)
}

fn process_one(input: &Path, out_dir: &Path, config: &Config, resume: bool) -> ManifestDoc {
    let started = Instant::now();
    let input_str = input.to_string_lossy().to_string();

    let fallback_id = || {
        let name = input.file_name().map(|n| n.to_string_lossy().to_string());
        let stem = name.unwrap_or_else(|| "doc".to_string());
        stem.trim_end_matches(".tar.gz")
            .trim_end_matches(".tgz")
            .trim_end_matches(".tar")
            .trim_end_matches(".tex")
            .to_string()
    };

    let tree = match ingest::ingest_archive(input) {
        Ok(t) => t,
        Err(e) => {
            return ManifestDoc {
                doc_id: fallback_id(),
                input: input_str,
                output: None,
                status: "error".to_string(),
                page_count: None,
                unit_count: 0,
                warning_count: 0,
                seconds: round3(started.elapsed().as_secs_f64()),
                resumed: false,
                error: Some(e.to_string()),
            }
        }
    };

    let out_name = format!("{}.genome.json", tree.doc_id);
    let out_path = out_dir.join(&out_name);
    if resume && out_path.exists() {
        if let Ok(existing) = genome::load_genome(&out_path) {
            if existing.source_digest == tree.source_digest {
                return ManifestDoc {
                    doc_id: existing.doc_id.clone(),
                    input: input_str,
                    output: Some(out_name),
                    status: status_name(existing.status).to_string(),
                    page_count: existing.page_count,
                    unit_count: existing.units.len(),
                    warning_count: existing.warnings.len(),
                    seconds: 0.0,
                    resumed: true,
                    error: None,
                };
            }
        }
    }

    match run_pipeline(input, config) {
        Ok(g) => {
            let json = match genome::to_canonical_json(&g) {
                Ok(j) => j,
                Err(e) => {
                    return ManifestDoc {
                        doc_id: g.doc_id.clone(),
                        input: input_str,
                        output: None,
                        status: "error".to_string(),
                        page_count: None,
                        unit_count: g.units.len(),
                        warning_count: g.warnings.len(),
                        seconds: round3(started.elapsed().as_secs_f64()),
                        resumed: false,
                        error: Some(e.to_string()),
                    }
                }
            };
            if let Err(e) = atomic_write(&out_path, &json) {
                return ManifestDoc {
                    doc_id: g.doc_id.clone(),
                    input: input_str,
                    output: None,
                    status: "error".to_string(),
                    page_count: None,
                    unit_count: g.units.len(),
                    warning_count: g.warnings.len(),
                    seconds: round3(started.elapsed().as_secs_f64()),
                    resumed: false,
                    error: Some(e.to_string()),
                };
            }
            ManifestDoc {
                doc_id: g.doc_id.clone(),
                input: input_str,
                output: Some(out_name),
                status: status_name(g.status).to_string(),
                page_count: g.page_count,
                unit_count: g.units.len(),
                warning_count: g.warnings.len(),
                seconds: round3(started.elapsed().as_secs_f64()),
                resumed: false,
                error: None,
            }
        }
        Err(e) => ManifestDoc {
            doc_id: tree.doc_id,
            input: input_str,
            output: None,
            status: "error".to_string(),
            page_count: None,
            unit_count: 0,
            warning_count: 0,
            seconds: round3(started.elapsed().as_secs_f64()),
            resumed: false,
            error: Some(e.to_string()),
        },
    }
}

fn round3(v: f64) -> f64 {
    (v * 1000.0).round() / 1000.0
}

/// Processes every document in `input_dir`, writing genomes and a
/// `manifest.json` into `out_dir`. Per-document failures are recorded,
/// not fatal.
pub fn batch_run(
    input_dir: &Path,
    out_dir: &Path,
    config: &Config,
    opts: &BatchOptions,
) -> Result<Manifest, PipelineError> {
    let inputs = discover_inputs(input_dir)?;
    std::fs::create_dir_all(out_dir)?;

    let run = || -> Vec<ManifestDoc> {
        use rayon::prelude::*;
        inputs
            .par_iter()
            .map(|input| process_one(input, out_dir, config, opts.resume))
            .collect()
    };
    let mut docs = if opts.jobs > 0 {
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(opts.jobs)
            .build()
            .map_err(|e| PipelineError::Config(format!("thread pool: {e}")))?;
        pool.install(run)
    } else {
        run()
    };
    docs.sort_by(|a, b| a.input.cmp(&b.input));

    let manifest = Manifest {
        pipeline_version: crate::PIPELINE_VERSION.to_string(),
        docs,
    };
    let value = serde_json::to_value(&manifest).map_err(SchemaError::Json)?;
    let mut json = serde_json::to_string_pretty(&value).map_err(SchemaError::Json)?;
    json.push('\n');
    atomic_write(&out_dir.join("manifest.json"), &json)?;
    Ok(manifest)
}

pub fn load_manifest(path: &Path) -> Result<Manifest, PipelineError> {
    let text = std::fs::read_to_string(path)?;
    let manifest: Manifest = serde_json::from_str(&text).map_err(SchemaError::Json)?;
    Ok(manifest)
}

// ----- stats -------------------------------------------------------------------

#[derive(Debug, Clone, Serialize)]
pub struct Stats {
    pub docs: usize,
    pub status: BTreeMap<String, usize>,
    pub unit_total: usize,
    pub attributes: BTreeMap<String, usize>,
    pub relations: BTreeMap<String, usize>,
    pub split_kinds: BTreeMap<String, usize>,
    pub render_status: BTreeMap<String, usize>,
    pub pages: BTreeMap<String, usize>,
    pub tiers: BTreeMap<String, usize>,
}

/// Aggregates histograms over the genomes a manifest points at.
pub fn stats(manifest_path: &Path) -> Result<Stats, PipelineError> {
    let manifest = load_manifest(manifest_path)?;
    let base = manifest_path.parent().unwrap_or(Path::new("."));
    let mut stats = Stats {
        docs: manifest.docs.len(),
        status: BTreeMap::new(),
        unit_total: 0,
        attributes: BTreeMap::new(),
        relations: BTreeMap::new(),
        split_kinds: BTreeMap::new(),
        render_status: BTreeMap::new(),
        pages: BTreeMap::new(),
        tiers: BTreeMap::new(),
    };
    for doc in &manifest.docs {
        *stats.status.entry(doc.status.clone()).or_default() += 1;
        let Some(output) = &doc.output else { continue };
        let path = {
            let p = Path::new(output);
            if p.is_absolute() {
                p.to_path_buf()
            } else {
                base.join(p)
            }
        };
        let Ok(g) = genome::load_genome(&path) else {
            continue;
        };
        stats.unit_total += g.units.len();
        if let Some(pc) = g.page_count {
            *stats.pages.entry(pc.to_string()).or_default() += 1;
        }
        for u in &g.units {
            *stats
                .attributes
                .entry(u.attribute_name.clone())
                .or_default() += 1;
            let split = serde_json::to_value(u.split_kind)
                .ok()
                .and_then(|v| v.as_str().map(str::to_string))
                .unwrap_or_default();
            *stats.split_kinds.entry(split).or_default() += 1;
            let rs = serde_json::to_value(u.render_status)
                .ok()
                .and_then(|v| v.as_str().map(str::to_string))
                .unwrap_or_default();
            *stats.render_status.entry(rs).or_default() += 1;
        }
        for r in &g.relations {
            *stats.relations.entry(r.kind.clone()).or_default() += 1;
        }
        if let Some(q) = &g.quality {
            let tier = match q.tier {
                crate::quality::Tier::Tier1 => "tier1",
                crate::quality::Tier::Tier2 => "tier2",
                crate::quality::Tier::Tier3 => "tier3",
            };
            *stats.tiers.entry(tier.to_string()).or_default() += 1;
        }
    }
    Ok(stats)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::genome::GenomeStatus;

    fn temp_dir(name: &str) -> PathBuf {
        let dir = std::env::temp_dir().join(format!(
            "docparser-pipeline-{name}-{}",
            std::process::id()
        ));
        let _ = std::fs::remove_dir_all(&dir);
        std::fs::create_dir_all(&dir).unwrap();
        dir
    }

    fn write_doc(dir: &Path, name: &str, body: &str) -> PathBuf {
        let path = dir.join(name);
        std::fs::write(
            &path,
            format!("\\documentclass{{article}}\n\\begin{{document}}\n{body}\n\\end{{document}}\n"),
        )
        .unwrap();
        path
    }

    #[test]
    fn single_document_end_to_end() {
        let dir = temp_dir("single");
        let input = write_doc(
            &dir,
            "demo.tex",
            "\\section{One}\n\nwords in a paragraph\n\n\\begin{equation}x = y\\end{equation}",
        );
        let g = run_pipeline(&input, &Config::default()).unwrap();
        assert_eq!(g.status, GenomeStatus::Ok);
        assert_eq!(g.doc_id, "demo");
        assert!(g.page_count.is_some());
        assert_eq!(g.units.len(), 3);
        assert!(g.units.iter().all(|u| !u.boxes.is_empty()));
        // Subordinate edges exist
        assert!(g.relations.iter().any(|r| r.kind == "Subordinate"));
    }

    #[test]
    fn compile_failure_degrades_to_text_only_genome() {
        let dir = temp_dir("degrade");
        let input = dir.join("broken.tex");
        std::fs::write(
            &input,
            "\\documentclass{article}\n\\begin{document}\npara one\n\n\\begin{itemize}\n\\item never closed\n\\end{document}\n",
        )
        .unwrap();
        let g = run_pipeline(&input, &Config::default()).unwrap();
        assert_eq!(g.status, GenomeStatus::CompileFailed);
        assert!(g.page_count.is_none());
        assert!(!g.units.is_empty(), "text analysis survives");
        assert!(g.units.iter().all(|u| u.boxes.is_empty()));
        assert!(g.warnings.iter().any(|w| w.contains("render unavailable")));
    }

    #[test]
    fn batch_writes_genomes_and_manifest() {
        let dir = temp_dir("batch-in");
        let out = temp_dir("batch-out");
        write_doc(&dir, "a.tex", "alpha paragraph");
        write_doc(&dir, "b.tex", "beta paragraph\n\n\\section{S}\n\nmore");
        let manifest = batch_run(&dir, &out, &Config::default(), &BatchOptions::default()).unwrap();
        assert_eq!(manifest.docs.len(), 2);
        assert!(manifest.docs.iter().all(|d| d.status == "ok"));
        assert!(out.join("a.genome.json").exists());
        assert!(out.join("b.genome.json").exists());
        assert!(out.join("manifest.json").exists());
        // manifest ordering follows input path order
        assert!(manifest.docs[0].input < manifest.docs[1].input);
        let reloaded = load_manifest(&out.join("manifest.json")).unwrap();
        assert_eq!(reloaded.docs.len(), 2);
    }

    #[test]
    fn batch_records_errors_without_aborting() {
        let dir = temp_dir("batch-err-in");
        let out = temp_dir("batch-err-out");
        write_doc(&dir, "good.tex", "fine words");
        std::fs::write(dir.join("empty.tex"), "").unwrap();
        let manifest = batch_run(&dir, &out, &Config::default(), &BatchOptions::default()).unwrap();
        assert_eq!(manifest.docs.len(), 2);
        let empty = manifest.docs.iter().find(|d| d.input.contains("empty")).unwrap();
        assert_eq!(empty.status, "error");
        assert!(empty.error.is_some());
        let good = manifest.docs.iter().find(|d| d.input.contains("good")).unwrap();
        assert_eq!(good.status, "ok");
    }

    #[test]
    fn resume_skips_matching_digests_and_redoes_stale() {
        let dir = temp_dir("resume-in");
        let out = temp_dir("resume-out");
        write_doc(&dir, "keep.tex", "kept words");
        write_doc(&dir, "redo.tex", "redo words");
        batch_run(&dir, &out, &Config::default(), &BatchOptions::default()).unwrap();

        // Plant a sentinel warning in the up-to-date genome: a resumed
        // run must not rewrite it.
        let keep_path = out.join("keep.genome.json");
        let mut keep: Genome = genome::load_genome(&keep_path).unwrap();
        keep.warnings.push("SENTINEL".to_string());
        atomic_write(&keep_path, &genome::to_canonical_json(&keep).unwrap()).unwrap();

        // Invalidate the other genome by changing its recorded digest.
        let redo_path = out.join("redo.genome.json");
        let mut redo: Genome = genome::load_genome(&redo_path).unwrap();
        redo.source_digest = "sha256:stale".to_string();
        atomic_write(&redo_path, &genome::to_canonical_json(&redo).unwrap()).unwrap();

        let manifest = batch_run(
            &dir,
            &out,
            &Config::default(),
            &BatchOptions {
                jobs: 1,
                resume: true,
            },
        )
        .unwrap();
        let keep_doc = manifest.docs.iter().find(|d| d.doc_id == "keep").unwrap();
        let redo_doc = manifest.docs.iter().find(|d| d.doc_id == "redo").unwrap();
        assert!(keep_doc.resumed);
        assert!(!redo_doc.resumed);
        let keep_after = genome::load_genome(&keep_path).unwrap();
        assert!(keep_after.warnings.iter().any(|w| w == "SENTINEL"));
        let redo_after = genome::load_genome(&redo_path).unwrap();
        assert!(redo_after.source_digest.starts_with("sha256:"));
        assert_ne!(redo_after.source_digest, "sha256:stale");
    }

    #[test]
    fn stats_aggregates_histograms() {
        let dir = temp_dir("stats-in");
        let out = temp_dir("stats-out");
        write_doc(
            &dir,
            "s.tex",
            "\\section{T}\n\nwords here\n\n\\begin{equation}e = f\\end{equation}",
        );
        batch_run(&dir, &out, &Config::default(), &BatchOptions::default()).unwrap();
        let s = stats(&out.join("manifest.json")).unwrap();
        assert_eq!(s.docs, 1);
        assert_eq!(s.status.get("ok"), Some(&1));
        assert_eq!(s.unit_total, 3);
        assert_eq!(s.attributes.get("Title"), Some(&1));
        assert_eq!(s.attributes.get("Text"), Some(&1));
        assert_eq!(s.attributes.get("Equation"), Some(&1));
        assert!(s.relations.contains_key("Subordinate"));
        assert_eq!(s.render_status.get("ok"), Some(&3));
    }

    #[test]
    fn discover_inputs_filters_and_sorts() {
        let dir = temp_dir("discover");
        std::fs::create_dir(dir.join("zdoc")).unwrap();
        std::fs::write(dir.join("b.tex"), "x").unwrap();
        std::fs::write(dir.join("a.tar.gz"), "x").unwrap();
        std::fs::write(dir.join("notes.txt"), "x").unwrap();
        std::fs::write(dir.join(".hidden.tex"), "x").unwrap();
        let inputs = discover_inputs(&dir).unwrap();
        let names: Vec<String> = inputs
            .iter()
            .map(|p| p.file_name().unwrap().to_string_lossy().to_string())
            .collect();
        assert_eq!(names, vec!["a.tar.gz", "b.tex", "zdoc"]);
    }
}
