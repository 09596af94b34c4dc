//! End-to-end tests of the `docparser` binary: argument handling, exit
//! codes, output formats, and the external-engine contract.

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_docparser"))
}

fn fixture(rel: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures").join(rel)
}

fn temp(name: &str) -> PathBuf {
    let dir = std::env::temp_dir().join(format!("docparser-cli-{name}-{}", std::process::id()));
    let _ = std::fs::remove_dir_all(&dir);
    std::fs::create_dir_all(&dir).unwrap();
    dir
}

fn stdout_json(out: &Output) -> serde_json::Value {
    assert!(
        out.status.success(),
        "stderr: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    serde_json::from_slice(&out.stdout).expect("stdout is JSON")
}

fn parse_genome(input: &Path, out_file: &Path) -> serde_json::Value {
    let out = bin()
        .args(["parse", input.to_str().unwrap(), "--out", out_file.to_str().unwrap()])
        .output()
        .unwrap();
    assert!(
        out.status.success(),
        "stderr: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    serde_json::from_str(&std::fs::read_to_string(out_file).unwrap()).unwrap()
}

#[test]
fn parse_stdout_and_file_agree() {
    let dir = temp("parse");
    let input = fixture("golden/g01-minimal.tex");
    let stdout_run = bin().args(["parse", input.to_str().unwrap()]).output().unwrap();
    assert!(stdout_run.status.success());
    assert!(stdout_run.stdout.ends_with(b"\n"));

    let file = dir.join("g01.genome.json");
    let genome = parse_genome(&input, &file);
    assert_eq!(std::fs::read(&file).unwrap(), stdout_run.stdout);
    assert_eq!(genome["doc_id"], "g01-minimal");
    assert_eq!(genome["status"], "ok");
    assert_eq!(genome["units"].as_array().unwrap().len(), 7);
}

#[test]
fn parse_rejects_invalid_config_with_exit_3() {
    let dir = temp("badcfg");
    let cfg = dir.join("bad.toml");
    std::fs::write(&cfg, "[render]\ndpi = 0\n").unwrap();
    let out = bin()
        .args([
            "parse",
            fixture("golden/g01-minimal.tex").to_str().unwrap(),
            "--config",
            cfg.to_str().unwrap(),
        ])
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(3));
    assert!(String::from_utf8_lossy(&out.stderr).contains("dpi"));
}

#[test]
fn parse_missing_input_exits_1() {
    let out = bin().args(["parse", "/nonexistent/nowhere.tex"]).output().unwrap();
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn batch_reports_hard_failures_with_exit_2() {
    let dir = temp("batch-fail");
    let input = dir.join("in");
    std::fs::create_dir_all(&input).unwrap();
    std::fs::copy(fixture("degraded/a-stable.tex"), input.join("a-stable.tex")).unwrap();
    std::fs::write(input.join("junk.tar.gz"), b"this is not an archive").unwrap();
    let outdir = dir.join("out");
    let out = bin()
        .args([
            "batch",
            input.to_str().unwrap(),
            "--out",
            outdir.to_str().unwrap(),
        ])
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(2));
    let manifest: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(outdir.join("manifest.json")).unwrap())
            .unwrap();
    let docs = manifest["docs"].as_array().unwrap();
    assert_eq!(docs.len(), 2);
    let status_of = |id: &str| {
        docs.iter()
            .find(|d| d["doc_id"] == id)
            .unwrap_or_else(|| panic!("{id} missing"))["status"]
            .clone()
    };
    assert_eq!(status_of("a-stable"), "ok");
    assert_eq!(status_of("junk"), "error");
}

#[test]
fn batch_compile_failures_degrade_and_exit_zero() {
    let dir = temp("batch-degraded");
    let out = bin()
        .args([
            "batch",
            fixture("degraded").to_str().unwrap(),
            "--out",
            dir.to_str().unwrap(),
            "--jobs",
            "2",
        ])
        .output()
        .unwrap();
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let manifest: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(dir.join("manifest.json")).unwrap()).unwrap();
    let statuses: Vec<&str> = manifest["docs"]
        .as_array()
        .unwrap()
        .iter()
        .map(|d| d["status"].as_str().unwrap())
        .collect();
    assert_eq!(statuses, ["ok", "compile_failed", "ok"]);
}

#[test]
fn grade_scores_boxes_and_writes_report() {
    let dir = temp("grade");
    let genome_file = dir.join("g01-minimal.genome.json");
    let genome = parse_genome(&fixture("golden/g01-minimal.tex"), &genome_file);

    // Reference boxes identical to the genome's own: alignment is exact.
    let boxes: Vec<serde_json::Value> = genome["units"]
        .as_array()
        .unwrap()
        .iter()
        .flat_map(|u| u["boxes"].as_array().unwrap().clone())
        .collect();
    assert!(!boxes.is_empty());
    let refs_file = dir.join("refs.json");
    std::fs::write(
        &refs_file,
        serde_json::to_string(&serde_json::json!({"dpi": genome["dpi"], "boxes": boxes})).unwrap(),
    )
    .unwrap();

    let out = bin()
        .args([
            "grade",
            genome_file.to_str().unwrap(),
            "--refs",
            refs_file.to_str().unwrap(),
            "--write",
        ])
        .output()
        .unwrap();
    let report = stdout_json(&out);
    assert_eq!(report["n_boxes"], report["n_reference_boxes"]);
    assert_eq!(report["iou_align"], 1.0);
    assert!(report["iou_intra"].as_f64().unwrap() < 0.0005);
    assert_eq!(report["tier"], "Tier1");

    let updated: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(&genome_file).unwrap()).unwrap();
    assert_eq!(updated["quality"]["tier"], "Tier1");
}

#[test]
fn score_classification_accuracy() {
    let dir = temp("score-cls");
    let genome = parse_genome(
        &fixture("golden/g01-minimal.tex"),
        &dir.join("g01-minimal.genome.json"),
    );
    let units = genome["units"].as_array().unwrap();
    let mut rows: Vec<serde_json::Value> = units
        .iter()
        .map(|u| {
            serde_json::json!({
                "id": format!("g01-minimal#{}", u["unit_id"].as_str().unwrap()),
                "label": u["attribute_name"],
            })
        })
        .collect();
    let pred = dir.join("pred.json");
    std::fs::write(&pred, serde_json::to_string(&rows).unwrap()).unwrap();
    let out = bin()
        .args([
            "score",
            "classification",
            "--pred",
            pred.to_str().unwrap(),
            "--gt",
            dir.to_str().unwrap(),
        ])
        .output()
        .unwrap();
    let report = stdout_json(&out);
    assert_eq!(report["accuracy"], 1.0);
    assert_eq!(report["n"], units.len());
    assert_eq!(report["per_class_accuracy"]["Title"], 1.0);

    // One flipped label costs exactly one unit of accuracy.
    rows[0]["label"] = serde_json::json!("Text");
    std::fs::write(&pred, serde_json::to_string(&rows).unwrap()).unwrap();
    let out = bin()
        .args([
            "score",
            "classification",
            "--pred",
            pred.to_str().unwrap(),
            "--gt",
            dir.to_str().unwrap(),
        ])
        .output()
        .unwrap();
    let report = stdout_json(&out);
    let want = (units.len() - 1) as f64 / units.len() as f64;
    assert!((report["accuracy"].as_f64().unwrap() - want).abs() < 1e-12);
    assert_eq!(report["per_class_accuracy"]["PaperTitle"], 0.0);
}

#[test]
fn score_grounding_identity_is_perfect() {
    let dir = temp("score-gnd");
    let genome = parse_genome(
        &fixture("golden/g10-full.tex"),
        &dir.join("g10-full.genome.json"),
    );
    let rows: Vec<serde_json::Value> = genome["units"]
        .as_array()
        .unwrap()
        .iter()
        .filter(|u| {
            u["normalized_text"].as_str().unwrap().split_whitespace().count() >= 8
        })
        .map(|u| {
            serde_json::json!({
                "id": format!("g10-full#{}", u["unit_id"].as_str().unwrap()),
                "text": u["normalized_text"],
            })
        })
        .collect();
    assert!(rows.len() >= 3, "corpus has long units");
    let pred = dir.join("pred.json");
    std::fs::write(&pred, serde_json::to_string(&rows).unwrap()).unwrap();
    let out = bin()
        .args([
            "score",
            "grounding",
            "--pred",
            pred.to_str().unwrap(),
            "--gt",
            dir.to_str().unwrap(),
        ])
        .output()
        .unwrap();
    let report = stdout_json(&out);
    assert_eq!(report["edit_distance"], 0.0);
    assert_eq!(report["token_jaccard"], 1.0);
    assert_eq!(report["token_cosine"], 1.0);
    assert_eq!(report["bleu"], 1.0);
}

#[test]
fn score_detection_perfect_predictions() {
    let dir = temp("score-det");
    let genome = parse_genome(
        &fixture("golden/g01-minimal.tex"),
        &dir.join("g01-minimal.genome.json"),
    );
    let mut rows = Vec::new();
    for u in genome["units"].as_array().unwrap() {
        for b in u["boxes"].as_array().unwrap() {
            rows.push(serde_json::json!({
                "doc_id": "g01-minimal",
                "page_index": b["page_index"],
                "box": [b["x0"], b["y0"], b["x1"], b["y1"]],
                "label": u["attribute_name"],
                "score": 0.9,
            }));
        }
    }
    let pred = dir.join("pred.json");
    std::fs::write(&pred, serde_json::to_string(&rows).unwrap()).unwrap();
    let out = bin()
        .args([
            "score",
            "detection",
            "--pred",
            pred.to_str().unwrap(),
            "--gt",
            dir.to_str().unwrap(),
        ])
        .output()
        .unwrap();
    let report = stdout_json(&out);
    assert_eq!(report["map"], 1.0);
    assert_eq!(report["n_pred"], report["n_gt"]);

    // Unknown labels are a configuration error.
    rows[0]["label"] = serde_json::json!("Bogus");
    std::fs::write(&pred, serde_json::to_string(&rows).unwrap()).unwrap();
    let out = bin()
        .args([
            "score",
            "detection",
            "--pred",
            pred.to_str().unwrap(),
            "--gt",
            dir.to_str().unwrap(),
        ])
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(3));
}

#[test]
fn stats_aggregates_manifest() {
    let dir = temp("stats");
    let out = bin()
        .args([
            "batch",
            fixture("degraded").to_str().unwrap(),
            "--out",
            dir.to_str().unwrap(),
        ])
        .output()
        .unwrap();
    assert!(out.status.success());
    let out = bin()
        .args(["stats", dir.join("manifest.json").to_str().unwrap()])
        .output()
        .unwrap();
    let stats = stdout_json(&out);
    assert_eq!(stats["docs"], 3);
    assert_eq!(stats["status"]["ok"], 2);
    assert_eq!(stats["status"]["compile_failed"], 1);
    assert!(stats["unit_total"].as_u64().unwrap() > 0);
    assert!(stats["attributes"]["Title"].as_u64().unwrap() >= 2);
    assert!(stats["relations"]["Subordinate"].as_u64().unwrap() > 0);
}

#[test]
fn external_engine_failure_degrades_to_text_only() {
    let dir = temp("external");
    let script = dir.join("fake-latex.sh");
    std::fs::write(&script, "#!/bin/sh\necho compile boom >&2\nexit 1\n").unwrap();
    #[cfg(unix)]
    {
        use std::os::unix::fs::PermissionsExt;
        std::fs::set_permissions(&script, std::fs::Permissions::from_mode(0o755)).unwrap();
    }
    let out = bin()
        .args(["parse", fixture("degraded/a-stable.tex").to_str().unwrap()])
        .env("DOCPARSER_ENGINE", "external")
        .env("DOCPARSER_LATEX_CMD", format!("{} {{main}}", script.display()))
        .output()
        .unwrap();
    let genome = stdout_json(&out);
    assert_eq!(genome["status"], "compile_failed");
    assert!(genome["page_count"].is_null());
    assert!(!genome["units"].as_array().unwrap().is_empty());
    assert!(genome["units"]
        .as_array()
        .unwrap()
        .iter()
        .all(|u| u["boxes"].as_array().unwrap().is_empty()));
    let warnings = genome["warnings"].as_array().unwrap();
    assert!(
        warnings.iter().any(|w| w.as_str().unwrap().contains("render unavailable")),
        "warnings: {warnings:?}"
    );
}
