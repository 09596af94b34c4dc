use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use serde::Deserialize;

use docparser::annotate::Attribute;
use docparser::bbox::BBox;
use docparser::config::Config;
use docparser::error::PipelineError;
use docparser::genome::{self, Genome};
use docparser::metrics;
use docparser::pipeline::{self, BatchOptions};

#[derive(Parser)]
#[command(
    name = "docparser",
    version,
    about = "Turns LaTeX sources into document genomes: reading-ordered units with layout attributes, relations, and rendered bounding boxes."
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Process one document (directory, tarball, or .tex file).
    Parse {
        input: PathBuf,
        /// TOML config file; defaults plus environment overrides otherwise.
        #[arg(long)]
        config: Option<PathBuf>,
        /// Output genome path; stdout when omitted.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Process every document in a directory, writing genomes and a manifest.
    Batch {
        input_dir: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        config: Option<PathBuf>,
        /// Worker threads (0 = automatic).
        #[arg(long, default_value_t = 0)]
        jobs: usize,
        /// Skip documents whose existing genome matches the input digest.
        #[arg(long)]
        resume: bool,
    },
    /// Grade a genome's boxes against reference boxes.
    Grade {
        genome: PathBuf,
        /// Reference boxes JSON: {"dpi": N, "boxes": [...]}.
        #[arg(long)]
        refs: PathBuf,
        /// Write the quality report back into the genome file.
        #[arg(long)]
        write: bool,
    },
    /// Score predictions against genomes used as ground truth.
    Score {
        task: Task,
        /// Predictions JSON file.
        #[arg(long)]
        pred: PathBuf,
        /// Directory of *.genome.json ground-truth files.
        #[arg(long)]
        gt: PathBuf,
    },
    /// Aggregate statistics over a batch manifest.
    Stats { manifest: PathBuf },
}

#[derive(Copy, Clone, ValueEnum)]
enum Task {
    /// Unit attribute labels; pred rows {"id": "doc#unit", "label": name}.
    Classification,
    /// Unit text recovery; pred rows {"id": "doc#unit", "text": "..."}.
    Grounding,
    /// Layout boxes; pred rows {"doc_id", "page_index", "box", "label", "score"}.
    Detection,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli.command) {
        Ok(code) => code,
        Err(PipelineError::Config(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(3)
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(1)
        }
    }
}

fn load_config(path: &Option<PathBuf>) -> Result<Config, PipelineError> {
    match path {
        Some(p) => Config::from_path(p),
        None => Ok(Config::with_env_overrides()),
    }
}

fn print_json<T: serde::Serialize>(value: &T) -> Result<(), PipelineError> {
    let v = serde_json::to_value(value).map_err(docparser::error::SchemaError::Json)?;
    println!(
        "{}",
        serde_json::to_string_pretty(&v).map_err(docparser::error::SchemaError::Json)?
    );
    Ok(())
}

fn run(command: Command) -> Result<ExitCode, PipelineError> {
    match command {
        Command::Parse { input, config, out } => {
            let cfg = load_config(&config)?;
            cfg.validate()?;
            let g = pipeline::run_pipeline(&input, &cfg)?;
            let json = genome::to_canonical_json(&g)?;
            match out {
                Some(path) => {
                    pipeline::atomic_write(&path, &json)?;
                    eprintln!("wrote {}", path.display());
                }
                None => print!("{json}"),
            }
            Ok(ExitCode::SUCCESS)
        }
        Command::Batch {
            input_dir,
            out,
            config,
            jobs,
            resume,
        } => {
            let cfg = load_config(&config)?;
            cfg.validate()?;
            let manifest = pipeline::batch_run(&input_dir, &out, &cfg, &BatchOptions { jobs, resume })?;
            let failed = manifest.docs.iter().filter(|d| d.status == "error").count();
            for doc in &manifest.docs {
                let note = doc.error.as_deref().unwrap_or("");
                eprintln!(
                    "{:>14} {} {} {}",
                    doc.status,
                    doc.doc_id,
                    if doc.resumed { "(resumed)" } else { "" },
                    note
                );
            }
            eprintln!(
                "{} documents, {} failed; manifest at {}",
                manifest.docs.len(),
                failed,
                out.join("manifest.json").display()
            );
            if failed > 0 {
                Ok(ExitCode::from(2))
            } else {
                Ok(ExitCode::SUCCESS)
            }
        }
        Command::Grade { genome: genome_path, refs, write } => {
            let mut g = genome::load_genome(&genome_path)?;
            let refs = genome::load_refboxes(&refs)?;
            let report = genome::grade_genome(&g, &refs);
            print_json(&report)?;
            if write {
                g.quality = Some(report);
                pipeline::atomic_write(&genome_path, &genome::to_canonical_json(&g)?)?;
                eprintln!("updated {}", genome_path.display());
            }
            Ok(ExitCode::SUCCESS)
        }
        Command::Score { task, pred, gt } => {
            let genomes = load_genome_dir(&gt)?;
            match task {
                Task::Classification => score_classification(&pred, &genomes)?,
                Task::Grounding => score_grounding(&pred, &genomes)?,
                Task::Detection => score_detection(&pred, &genomes)?,
            }
            Ok(ExitCode::SUCCESS)
        }
        Command::Stats { manifest } => {
            let s = pipeline::stats(&manifest)?;
            print_json(&s)?;
            Ok(ExitCode::SUCCESS)
        }
    }
}

fn load_genome_dir(dir: &Path) -> Result<Vec<Genome>, PipelineError> {
    let mut paths: Vec<PathBuf> = std::fs::read_dir(dir)?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.file_name().is_some_and(|n| n.to_string_lossy().ends_with(".genome.json")))
        .collect();
    paths.sort();
    if paths.is_empty() {
        return Err(PipelineError::Config(format!(
            "no *.genome.json files in {}",
            dir.display()
        )));
    }
    paths.iter().map(|p| genome::load_genome(p)).collect()
}

fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T, PipelineError> {
    let text = std::fs::read_to_string(path)?;
    serde_json::from_str(&text)
        .map_err(|e| PipelineError::Config(format!("{}: {e}", path.display())))
}

/// `doc#unit` keys to attribute names and normalized text.
fn unit_tables(genomes: &[Genome]) -> (BTreeMap<String, String>, BTreeMap<String, String>) {
    let mut labels = BTreeMap::new();
    let mut texts = BTreeMap::new();
    for g in genomes {
        for u in &g.units {
            let key = format!("{}#{}", g.doc_id, u.unit_id);
            labels.insert(key.clone(), u.attribute_name.clone());
            texts.insert(key, u.normalized_text.clone());
        }
    }
    (labels, texts)
}

#[derive(Deserialize)]
struct LabelPred {
    id: String,
    label: String,
}

fn score_classification(pred: &Path, genomes: &[Genome]) -> Result<(), PipelineError> {
    let rows: Vec<LabelPred> = read_json(pred)?;
    let (labels, _) = unit_tables(genomes);
    let mut pred_labels = Vec::with_capacity(rows.len());
    let mut gt_labels = Vec::with_capacity(rows.len());
    for row in &rows {
        let gt = labels.get(&row.id).ok_or_else(|| {
            PipelineError::Config(format!("prediction references unknown unit {:?}", row.id))
        })?;
        pred_labels.push(row.label.clone());
        gt_labels.push(gt.clone());
    }
    let accuracy = metrics::top1_accuracy(&pred_labels, &gt_labels)
        .map_err(|e| PipelineError::Config(e.to_string()))?;
    let mut per_class: BTreeMap<String, [usize; 2]> = BTreeMap::new();
    for (p, g) in pred_labels.iter().zip(&gt_labels) {
        let slot = per_class.entry(g.clone()).or_default();
        slot[1] += 1;
        if p == g {
            slot[0] += 1;
        }
    }
    let per_class: BTreeMap<String, f64> = per_class
        .into_iter()
        .map(|(k, [c, n])| (k, c as f64 / n as f64))
        .collect();
    print_json(&serde_json::json!({
        "task": "classification",
        "n": rows.len(),
        "accuracy": accuracy,
        "per_class_accuracy": per_class,
    }))
}

#[derive(Deserialize)]
struct TextPred {
    id: String,
    text: String,
}

fn score_grounding(pred: &Path, genomes: &[Genome]) -> Result<(), PipelineError> {
    let rows: Vec<TextPred> = read_json(pred)?;
    if rows.is_empty() {
        return Err(PipelineError::Config("prediction file is empty".to_string()));
    }
    let (_, texts) = unit_tables(genomes);
    let mut edit = 0.0;
    let mut jac = 0.0;
    let mut cos = 0.0;
    let mut bleu_sum = 0.0;
    for row in &rows {
        let gt = texts.get(&row.id).ok_or_else(|| {
            PipelineError::Config(format!("prediction references unknown unit {:?}", row.id))
        })?;
        edit += metrics::normalized_edit_distance(&row.text, gt);
        jac += metrics::token_set_jaccard(&row.text, gt);
        cos += metrics::token_cosine(&row.text, gt);
        bleu_sum += metrics::bleu(&row.text, gt);
    }
    let n = rows.len() as f64;
    print_json(&serde_json::json!({
        "task": "grounding",
        "n": rows.len(),
        "edit_distance": edit / n,
        "token_jaccard": jac / n,
        "token_cosine": cos / n,
        "bleu": bleu_sum / n,
    }))
}

#[derive(Deserialize)]
struct BoxPred {
    doc_id: String,
    page_index: usize,
    /// [x0, y0, x1, y1] in pixels at the genome's dpi.
    #[serde(rename = "box")]
    bbox: [u32; 4],
    label: String,
    score: f64,
}

fn attribute_class(name: &str) -> Option<u8> {
    (0u8..=14)
        .filter_map(Attribute::from_index)
        .find(|a| a.name() == name)
        .map(|a| a.index())
}

fn score_detection(pred: &Path, genomes: &[Genome]) -> Result<(), PipelineError> {
    let rows: Vec<BoxPred> = read_json(pred)?;
    let mut preds = Vec::with_capacity(rows.len());
    for row in &rows {
        let class = attribute_class(&row.label).ok_or_else(|| {
            PipelineError::Config(format!("unknown attribute label {:?}", row.label))
        })?;
        let [x0, y0, x1, y1] = row.bbox;
        preds.push(metrics::Detection {
            image_id: format!("{}#{}", row.doc_id, row.page_index),
            class,
            bbox: BBox {
                page_index: row.page_index,
                x0,
                y0,
                x1,
                y1,
            },
            score: row.score,
        });
    }
    let mut gts = Vec::new();
    for g in genomes {
        for u in &g.units {
            for b in &u.boxes {
                gts.push(metrics::GroundTruthBox {
                    image_id: format!("{}#{}", g.doc_id, b.page_index),
                    class: u.attribute_index,
                    bbox: *b,
                });
            }
        }
    }
    let map = metrics::mean_average_precision(&preds, &gts);
    print_json(&serde_json::json!({
        "task": "detection",
        "n_pred": preds.len(),
        "n_gt": gts.len(),
        "map": map,
    }))
}
