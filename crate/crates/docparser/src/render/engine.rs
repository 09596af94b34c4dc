//! Compile and rasterize backends.
//!
//! `LatexEngine` turns a prepared working directory into a PDF;
//! `Rasterizer` turns that PDF into grayscale page images. The builtin
//! pair is hermetic and deterministic; the external pair shells out to
//! user-configured commands with the same observable contract, so the
//! rest of the pipeline cannot tell them apart.

use std::path::{Path, PathBuf};
use std::process::{Command, Stdio};
use std::time::{Duration, Instant};

use crate::bbox::PageImage;
use crate::error::RenderError;
use crate::render::pdf;
use crate::render::typeset::{self, DirResources};

pub trait LatexEngine: Sync {
    /// Compiles `main` (a file name inside `workdir`) and returns the
    /// path of the produced PDF.
    fn compile(&self, workdir: &Path, main: &str) -> Result<PathBuf, RenderError>;
}

pub trait Rasterizer: Sync {
    fn rasterize(&self, pdf: &Path, dpi: u32) -> Result<Vec<PageImage>, RenderError>;
}

// ----- builtin ----------------------------------------------------------------

/// Hermetic engine: typesets the source with the built-in layout model
/// and writes a minimal PDF next to the input.
pub struct BuiltinEngine;

impl LatexEngine for BuiltinEngine {
    fn compile(&self, workdir: &Path, main: &str) -> Result<PathBuf, RenderError> {
        let main_path = workdir.join(main);
        let source = std::fs::read_to_string(&main_path).map_err(|e| {
            RenderError::CompileFailure {
                reason: format!("cannot read {}: {e}", main_path.display()),
            }
        })?;
        if !crate::latex::braces_balanced(&source) {
            return Err(RenderError::CompileFailure {
                reason: "unbalanced braces".to_string(),
            });
        }
        if !crate::latex::envs_balanced(&source) {
            return Err(RenderError::CompileFailure {
                reason: "unbalanced environments".to_string(),
            });
        }
        let res = DirResources(workdir.to_path_buf());
        let doc = typeset::typeset(&source, &res);
        let bytes = pdf::write_pdf(&doc);
        let out = main_path.with_extension("pdf");
        std::fs::write(&out, bytes)?;
        Ok(out)
    }
}

/// Hermetic rasterizer for PDFs produced by `BuiltinEngine`.
pub struct BuiltinRasterizer;

impl Rasterizer for BuiltinRasterizer {
    fn rasterize(&self, pdf_path: &Path, dpi: u32) -> Result<Vec<PageImage>, RenderError> {
        let bytes = std::fs::read(pdf_path)?;
        pdf::rasterize_pdf(&bytes, dpi)
    }
}

// ----- external ----------------------------------------------------------------

/// Runs a command template in `workdir` with `{main}` substituted.
/// The PDF is expected at the main file's path with a `.pdf` extension.
pub struct ExternalEngine {
    pub command: String,
    pub timeout: Duration,
}

/// Runs a command template with `{pdf}`, `{dpi}`, `{out}` substituted,
/// then loads every PNG the command wrote into `{out}`, sorted by name.
pub struct ExternalRasterizer {
    pub command: String,
    pub timeout: Duration,
}

fn split_template(template: &str, subst: &[(&str, &str)]) -> Vec<String> {
    template
        .split_whitespace()
        .map(|tok| {
            let mut tok = tok.to_string();
            for (key, value) in subst {
                tok = tok.replace(key, value);
            }
            tok
        })
        .collect()
}

fn run_with_timeout(
    argv: &[String],
    cwd: &Path,
    timeout: Duration,
) -> Result<std::process::Output, RenderError> {
    if argv.is_empty() {
        return Err(RenderError::CompileFailure {
            reason: "empty command template".to_string(),
        });
    }
    let mut child = Command::new(&argv[0])
        .args(&argv[1..])
        .current_dir(cwd)
        .stdin(Stdio::null())
        .stdout(Stdio::piped())
        .stderr(Stdio::piped())
        .spawn()
        .map_err(|e| RenderError::CompileFailure {
            reason: format!("cannot spawn {}: {e}", argv[0]),
        })?;
    let started = Instant::now();
    loop {
        match child.try_wait() {
            Ok(Some(_)) => break,
            Ok(None) => {
                if started.elapsed() > timeout {
                    let _ = child.kill();
                    let _ = child.wait();
                    return Err(RenderError::CompileTimeout {
                        seconds: timeout.as_secs(),
                    });
                }
                std::thread::sleep(Duration::from_millis(20));
            }
            Err(e) => {
                return Err(RenderError::CompileFailure {
                    reason: format!("wait failed: {e}"),
                })
            }
        }
    }
    child
        .wait_with_output()
        .map_err(|e| RenderError::CompileFailure {
            reason: format!("collect output failed: {e}"),
        })
}

impl LatexEngine for ExternalEngine {
    fn compile(&self, workdir: &Path, main: &str) -> Result<PathBuf, RenderError> {
        let argv = split_template(&self.command, &[("{main}", main)]);
        let output = run_with_timeout(&argv, workdir, self.timeout)?;
        let pdf = workdir.join(Path::new(main).with_extension("pdf"));
        if !output.status.success() && !pdf.exists() {
            let stderr = String::from_utf8_lossy(&output.stderr);
            let tail: String = stderr.chars().rev().take(400).collect::<String>();
            let tail: String = tail.chars().rev().collect();
            return Err(RenderError::CompileFailure {
                reason: format!("exit {:?}: {}", output.status.code(), tail.trim()),
            });
        }
        if !pdf.exists() {
            return Err(RenderError::CompileFailure {
                reason: format!("command succeeded but {} is missing", pdf.display()),
            });
        }
        Ok(pdf)
    }
}

impl Rasterizer for ExternalRasterizer {
    fn rasterize(&self, pdf_path: &Path, dpi: u32) -> Result<Vec<PageImage>, RenderError> {
        let out_dir = pdf_path.with_extension("pages");
        std::fs::create_dir_all(&out_dir)?;
        let dpi_s = dpi.to_string();
        let pdf_s = pdf_path.to_string_lossy().to_string();
        let out_s = out_dir.to_string_lossy().to_string();
        let argv = split_template(
            &self.command,
            &[("{pdf}", &pdf_s), ("{dpi}", &dpi_s), ("{out}", &out_s)],
        );
        let parent = pdf_path.parent().unwrap_or(Path::new("."));
        let output = run_with_timeout(&argv, parent, self.timeout)?;
        let mut pngs: Vec<PathBuf> = std::fs::read_dir(&out_dir)?
            .filter_map(|e| e.ok())
            .map(|e| e.path())
            .filter(|p| p.extension().is_some_and(|x| x == "png"))
            .collect();
        if pngs.is_empty() {
            let stderr = String::from_utf8_lossy(&output.stderr);
            return Err(RenderError::RasterFailure {
                reason: format!(
                    "no PNG pages in {} (exit {:?}): {}",
                    out_dir.display(),
                    output.status.code(),
                    stderr.trim()
                ),
            });
        }
        pngs.sort();
        let mut pages = Vec::with_capacity(pngs.len());
        for (page_index, path) in pngs.iter().enumerate() {
            let img = image::open(path)
                .map_err(|e| RenderError::RasterFailure {
                    reason: format!("cannot decode {}: {e}", path.display()),
                })?
                .into_luma8();
            pages.push(PageImage {
                page_index,
                width: img.width(),
                height: img.height(),
                dpi,
                pixels: img.into_raw(),
            });
        }
        Ok(pages)
    }
}

/// Selects the backend pair from configuration.
pub fn backends(cfg: &crate::config::RenderConfig) -> (Box<dyn LatexEngine>, Box<dyn Rasterizer>) {
    if cfg.engine == "external" {
        (
            Box::new(ExternalEngine {
                command: cfg.latex_cmd.clone(),
                timeout: Duration::from_secs(cfg.compile_timeout_secs),
            }),
            Box::new(ExternalRasterizer {
                command: cfg.raster_cmd.clone(),
                timeout: Duration::from_secs(cfg.raster_timeout_secs),
            }),
        )
    } else {
        (Box::new(BuiltinEngine), Box::new(BuiltinRasterizer))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn workdir(name: &str) -> PathBuf {
        let dir = std::env::temp_dir().join(format!("docparser-engine-{name}-{}", std::process::id()));
        let _ = std::fs::remove_dir_all(&dir);
        std::fs::create_dir_all(&dir).unwrap();
        dir
    }

    #[test]
    fn builtin_compiles_and_rasterizes() {
        let dir = workdir("builtin");
        std::fs::write(
            dir.join("main.tex"),
            "\\documentclass{article}\n\\begin{document}\nhello world\n\\end{document}\n",
        )
        .unwrap();
        let pdf = BuiltinEngine.compile(&dir, "main.tex").unwrap();
        assert!(pdf.exists());
        let pages = BuiltinRasterizer.rasterize(&pdf, 150).unwrap();
        assert_eq!(pages.len(), 1);
        assert!(pages[0].pixels.iter().any(|&p| p != 255));
    }

    #[test]
    fn builtin_rejects_unbalanced_source() {
        let dir = workdir("unbalanced");
        std::fs::write(
            dir.join("main.tex"),
            "\\documentclass{article}\n\\begin{document}\n\\begin{itemize}\\item x\n\\end{document}\n",
        )
        .unwrap();
        let err = BuiltinEngine.compile(&dir, "main.tex").unwrap_err();
        assert!(matches!(err, RenderError::CompileFailure { .. }), "{err}");
    }

    #[test]
    fn external_engine_runs_template_and_finds_pdf() {
        let dir = workdir("ext-ok");
        std::fs::write(dir.join("main.tex"), "x").unwrap();
        // Fake engine: copies the source to the expected PDF name.
        let script = dir.join("fake-latex.sh");
        std::fs::write(
            &script,
            "#!/bin/sh\ncp \"$1\" \"${1%.tex}.pdf\"\n",
        )
        .unwrap();
        let eng = ExternalEngine {
            command: format!("sh {} {{main}}", script.display()),
            timeout: Duration::from_secs(10),
        };
        let pdf = eng.compile(&dir, "main.tex").unwrap();
        assert_eq!(pdf, dir.join("main.pdf"));
    }

    #[test]
    fn external_engine_reports_failure_with_stderr() {
        let dir = workdir("ext-fail");
        std::fs::write(dir.join("main.tex"), "x").unwrap();
        let script = dir.join("fail.sh");
        std::fs::write(&script, "#!/bin/sh\necho 'boom' >&2\nexit 3\n").unwrap();
        let eng = ExternalEngine {
            command: format!("sh {} {{main}}", script.display()),
            timeout: Duration::from_secs(10),
        };
        let err = eng.compile(&dir, "main.tex").unwrap_err();
        match err {
            RenderError::CompileFailure { reason } => {
                assert!(reason.contains("boom"), "{reason}");
                assert!(reason.contains('3'), "{reason}");
            }
            other => panic!("expected CompileFailure, got {other}"),
        }
    }

    #[test]
    fn external_engine_times_out_and_kills() {
        let dir = workdir("ext-timeout");
        std::fs::write(dir.join("main.tex"), "x").unwrap();
        let script = dir.join("slow.sh");
        std::fs::write(&script, "#!/bin/sh\nsleep 30\n").unwrap();
        let eng = ExternalEngine {
            command: format!("sh {} {{main}}", script.display()),
            timeout: Duration::from_millis(200),
        };
        let started = Instant::now();
        let err = eng.compile(&dir, "main.tex").unwrap_err();
        assert!(matches!(err, RenderError::CompileTimeout { .. }), "{err}");
        assert!(started.elapsed() < Duration::from_secs(10), "killed promptly");
    }

    #[test]
    fn external_rasterizer_loads_sorted_pages() {
        let dir = workdir("ext-raster");
        let pdf = dir.join("doc.pdf");
        std::fs::write(&pdf, "%PDF-fake").unwrap();
        // Fake rasterizer: writes two tiny PNGs into {out}.
        let img = image::GrayImage::from_pixel(4, 4, image::Luma([128u8]));
        let mut png1 = Vec::new();
        img.write_to(&mut std::io::Cursor::new(&mut png1), image::ImageFormat::Png)
            .unwrap();
        let script = dir.join("fake-raster.sh");
        let seed1 = dir.join("seed.png");
        std::fs::write(&seed1, &png1).unwrap();
        std::fs::write(
            &script,
            format!(
                "#!/bin/sh\nmkdir -p \"$2\"\ncp {s} \"$2/page-2.png\"\ncp {s} \"$2/page-1.png\"\n",
                s = seed1.display()
            ),
        )
        .unwrap();
        let r = ExternalRasterizer {
            command: format!("sh {} {{pdf}} {{out}}", script.display()),
            timeout: Duration::from_secs(10),
        };
        let pages = r.rasterize(&pdf, 150).unwrap();
        assert_eq!(pages.len(), 2);
        assert_eq!(pages[0].page_index, 0);
        assert_eq!(pages[1].page_index, 1);
        assert_eq!(pages[0].dpi, 150);
        assert_eq!((pages[0].width, pages[0].height), (4, 4));
    }

    #[test]
    fn external_rasterizer_errors_when_no_pages() {
        let dir = workdir("ext-raster-empty");
        let pdf = dir.join("doc.pdf");
        std::fs::write(&pdf, "%PDF-fake").unwrap();
        let script = dir.join("noop.sh");
        std::fs::write(&script, "#!/bin/sh\nmkdir -p \"$2\"\n").unwrap();
        let r = ExternalRasterizer {
            command: format!("sh {} {{pdf}} {{out}}", script.display()),
            timeout: Duration::from_secs(10),
        };
        let err = r.rasterize(&pdf, 150).unwrap_err();
        assert!(matches!(err, RenderError::RasterFailure { .. }), "{err}");
    }

    #[test]
    fn backend_selection_follows_config() {
        let mut cfg = crate::config::RenderConfig::default();
        assert_eq!(cfg.engine, "builtin");
        let (_e, _r) = backends(&cfg);
        cfg.engine = "external".to_string();
        let (_e, _r) = backends(&cfg);
    }
}
