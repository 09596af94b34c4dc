//! The document genome record: the pipeline's JSON output.
//!
//! Serialization is canonical: object keys are sorted (serde_json's
//! default map is ordered), floats are rounded to nine significant
//! digits before writing, and the same genome always produces the same
//! bytes.

use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::annotate::{AnnotatedUnit, Attribute, Relation, RelationKind};
use crate::bbox::BBox;
use crate::error::{PipelineError, SchemaError};
use crate::quality::QualityReport;
use crate::render::{RenderOutcome, SplitKind, UnitRender, UnitRenderStatus};
use crate::segment::EnvKind;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GenomeStatus {
    Ok,
    RenderFailed,
    CompileFailed,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GenomeUnit {
    pub unit_id: String,
    pub order_index: u32,
    pub parent_id: Option<String>,
    pub attribute_index: u8,
    pub attribute_name: String,
    pub env_kind: String,
    pub span: [usize; 2],
    pub raw_source: String,
    pub normalized_text: String,
    pub labels_defined: Vec<String>,
    pub refs_used: Vec<String>,
    /// Unit ids of footnotes attached to this unit.
    pub footnote_marks: Vec<String>,
    pub render_status: UnitRenderStatus,
    pub split_kind: SplitKind,
    pub boxes: Vec<BBox>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GenomeRelation {
    pub from_unit: String,
    pub to_unit: String,
    pub kind: String,
    pub from_box: Option<usize>,
    pub to_box: Option<usize>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Genome {
    pub doc_id: String,
    pub source_digest: String,
    pub pipeline_version: String,
    pub dpi: u32,
    pub status: GenomeStatus,
    pub page_count: Option<u32>,
    pub units: Vec<GenomeUnit>,
    pub relations: Vec<GenomeRelation>,
    pub quality: Option<QualityReport>,
    pub warnings: Vec<String>,
}

pub fn unit_id(index: usize) -> String {
    format!("u{index:03}")
}

pub fn relation_kind_name(kind: RelationKind) -> &'static str {
    match kind {
        RelationKind::Identical => "Identical",
        RelationKind::TitleAdjacent => "TitleAdjacent",
        RelationKind::Subordinate => "Subordinate",
        RelationKind::NonTitleAdjacent => "NonTitleAdjacent",
        RelationKind::ExplicitlyReferred => "ExplicitlyReferred",
        RelationKind::ImplicitlyReferred => "ImplicitlyReferred",
    }
}

pub const RELATION_KIND_NAMES: [&str; 6] = [
    "Identical",
    "TitleAdjacent",
    "Subordinate",
    "NonTitleAdjacent",
    "ExplicitlyReferred",
    "ImplicitlyReferred",
];

fn env_kind_name(kind: EnvKind) -> String {
    match serde_json::to_value(kind) {
        Ok(Value::String(s)) => s,
        _ => "unknown".to_string(),
    }
}

/// Assembles the genome from analysis and render results. A `None`
/// render means compilation failed: units keep their text analysis but
/// carry no boxes.
pub fn assemble_genome(
    doc_id: &str,
    source_digest: &str,
    dpi: u32,
    text: &str,
    units: &[AnnotatedUnit],
    relations: &[Relation],
    render: Option<&RenderOutcome>,
    mut warnings: Vec<String>,
) -> Genome {
    if let Some(r) = render {
        warnings.extend(r.warnings.iter().cloned());
    }

    let genome_units: Vec<GenomeUnit> = units
        .iter()
        .enumerate()
        .map(|(idx, unit)| {
            let footnote_marks: Vec<String> = units
                .iter()
                .enumerate()
                .filter(|(_, u)| u.parent == Some(idx) && u.kind == EnvKind::Footnote)
                .map(|(ci, _)| unit_id(ci))
                .collect();
            let rendered: Option<&UnitRender> = render.map(|r| &r.units[idx]);
            GenomeUnit {
                unit_id: unit_id(idx),
                order_index: idx as u32,
                parent_id: unit.parent.map(unit_id),
                attribute_index: unit.attribute.index(),
                attribute_name: unit.attribute.name().to_string(),
                env_kind: env_kind_name(unit.kind),
                span: [unit.span.start, unit.span.end],
                raw_source: text[unit.span.clone()].to_string(),
                normalized_text: unit.normalized_text.clone(),
                labels_defined: unit.labels.clone(),
                refs_used: unit.refs.clone(),
                footnote_marks,
                render_status: rendered
                    .map(|r| r.status)
                    .unwrap_or(UnitRenderStatus::Failed),
                split_kind: rendered.map(|r| r.split_kind).unwrap_or(SplitKind::None),
                boxes: rendered.map(|r| r.boxes.clone()).unwrap_or_default(),
            }
        })
        .collect();

    let mut genome_relations: Vec<GenomeRelation> = relations
        .iter()
        .chain(render.iter().flat_map(|r| r.relations.iter()))
        .map(|r| GenomeRelation {
            from_unit: unit_id(r.from),
            to_unit: unit_id(r.to),
            kind: relation_kind_name(r.kind).to_string(),
            from_box: r.from_box,
            to_box: r.to_box,
        })
        .collect();
    genome_relations.sort_by(|a, b| {
        let ka = RELATION_KIND_NAMES.iter().position(|n| *n == a.kind);
        let kb = RELATION_KIND_NAMES.iter().position(|n| *n == b.kind);
        (&a.from_unit, &a.to_unit, ka, a.from_box, a.to_box).cmp(&(
            &b.from_unit,
            &b.to_unit,
            kb,
            b.from_box,
            b.to_box,
        ))
    });

    let status = match render {
        None => GenomeStatus::CompileFailed,
        Some(r) => {
            if r.units.iter().all(|u| u.status == UnitRenderStatus::Ok) {
                GenomeStatus::Ok
            } else {
                GenomeStatus::RenderFailed
            }
        }
    };

    Genome {
        doc_id: doc_id.to_string(),
        source_digest: source_digest.to_string(),
        pipeline_version: crate::PIPELINE_VERSION.to_string(),
        dpi,
        status,
        page_count: render.map(|r| r.page_count as u32),
        units: genome_units,
        relations: genome_relations,
        quality: None,
        warnings,
    }
}

// ----- canonical serialization ---------------------------------------------------

/// Rounds to nine significant digits.
pub fn round_sig(v: f64) -> f64 {
    if v == 0.0 || !v.is_finite() {
        return v;
    }
    let magnitude = v.abs().log10().floor() as i32;
    let factor = 10f64.powi(8 - magnitude);
    (v * factor).round() / factor
}

fn round_floats(value: &mut Value) {
    match value {
        Value::Number(n) => {
            if n.is_f64() {
                let v = n.as_f64().expect("checked f64");
                if let Some(rounded) = serde_json::Number::from_f64(round_sig(v)) {
                    *n = rounded;
                }
            }
        }
        Value::Array(items) => items.iter_mut().for_each(round_floats),
        Value::Object(map) => map.values_mut().for_each(round_floats),
        _ => {}
    }
}

/// Canonical bytes: sorted keys, rounded floats, pretty-printed, one
/// trailing newline.
pub fn to_canonical_json(genome: &Genome) -> Result<String, SchemaError> {
    let mut value = serde_json::to_value(genome)?;
    round_floats(&mut value);
    let mut s = serde_json::to_string_pretty(&value)?;
    s.push('\n');
    Ok(s)
}

// ----- validation ------------------------------------------------------------------

fn want<'v>(obj: &'v serde_json::Map<String, Value>, key: &str) -> Result<&'v Value, SchemaError> {
    obj.get(key)
        .ok_or_else(|| SchemaError::Violation(format!("missing key '{key}'")))
}

fn violation(msg: impl Into<String>) -> SchemaError {
    SchemaError::Violation(msg.into())
}

/// Structural validation of a genome JSON value.
pub fn validate_value(value: &Value) -> Result<(), SchemaError> {
    let root = value
        .as_object()
        .ok_or_else(|| violation("root must be an object"))?;
    for key in ["doc_id", "source_digest", "pipeline_version"] {
        if !want(root, key)?.is_string() {
            return Err(violation(format!("'{key}' must be a string")));
        }
    }
    if !want(root, "dpi")?.is_u64() {
        return Err(violation("'dpi' must be an unsigned integer"));
    }
    let status = want(root, "status")?
        .as_str()
        .ok_or_else(|| violation("'status' must be a string"))?;
    if !["ok", "render_failed", "compile_failed"].contains(&status) {
        return Err(violation(format!("unknown status '{status}'")));
    }
    let page_count = want(root, "page_count")?;
    if !(page_count.is_null() || page_count.is_u64()) {
        return Err(violation("'page_count' must be null or an unsigned integer"));
    }
    if status == "compile_failed" && !page_count.is_null() {
        return Err(violation("compile_failed genome must have null page_count"));
    }

    let units = want(root, "units")?
        .as_array()
        .ok_or_else(|| violation("'units' must be an array"))?;
    let mut ids = std::collections::BTreeMap::new();
    for (idx, u) in units.iter().enumerate() {
        let u = u
            .as_object()
            .ok_or_else(|| violation(format!("unit {idx} must be an object")))?;
        let id = want(u, "unit_id")?
            .as_str()
            .ok_or_else(|| violation("unit_id must be a string"))?;
        if ids.insert(id.to_string(), idx).is_some() {
            return Err(violation(format!("duplicate unit_id '{id}'")));
        }
        let order = want(u, "order_index")?
            .as_u64()
            .ok_or_else(|| violation("order_index must be an unsigned integer"))?;
        if order != idx as u64 {
            return Err(violation(format!(
                "unit '{id}' order_index {order} != position {idx}"
            )));
        }
        let attr_idx = want(u, "attribute_index")?
            .as_u64()
            .ok_or_else(|| violation("attribute_index must be an unsigned integer"))?;
        let attr = Attribute::from_index(attr_idx as u8).ok_or_else(|| {
            violation(format!("unit '{id}' has invalid attribute_index {attr_idx}"))
        })?;
        let name = want(u, "attribute_name")?
            .as_str()
            .ok_or_else(|| violation("attribute_name must be a string"))?;
        if name != attr.name() {
            return Err(violation(format!(
                "unit '{id}' attribute_name '{name}' does not match index {attr_idx}"
            )));
        }
        let span = want(u, "span")?
            .as_array()
            .ok_or_else(|| violation("span must be an array"))?;
        if span.len() != 2 {
            return Err(violation("span must have exactly two elements"));
        }
        let (s0, s1) = (
            span[0].as_u64().ok_or_else(|| violation("span start must be an unsigned integer"))?,
            span[1].as_u64().ok_or_else(|| violation("span end must be an unsigned integer"))?,
        );
        if s0 > s1 {
            return Err(violation(format!("unit '{id}' span start after end")));
        }
        let boxes = want(u, "boxes")?
            .as_array()
            .ok_or_else(|| violation("boxes must be an array"))?;
        for (bi, b) in boxes.iter().enumerate() {
            let b = b
                .as_object()
                .ok_or_else(|| violation(format!("unit '{id}' box {bi} must be an object")))?;
            for key in ["page_index", "x0", "y0", "x1", "y1"] {
                if !want(b, key)?.is_u64() {
                    return Err(violation(format!(
                        "unit '{id}' box {bi}: '{key}' must be an unsigned integer"
                    )));
                }
            }
            let coord = |k: &str| b[k].as_u64().expect("checked u64");
            if coord("x0") >= coord("x1") || coord("y0") >= coord("y1") {
                return Err(violation(format!("unit '{id}' box {bi} is empty or inverted")));
            }
        }
        let split = want(u, "split_kind")?
            .as_str()
            .ok_or_else(|| violation("split_kind must be a string"))?;
        if !["none", "cross_page", "cross_column"].contains(&split) {
            return Err(violation(format!("unknown split_kind '{split}'")));
        }
        if boxes.len() < 2 && split != "none" {
            return Err(violation(format!(
                "unit '{id}' split_kind '{split}' with {} box(es)",
                boxes.len()
            )));
        }
        let rs = want(u, "render_status")?
            .as_str()
            .ok_or_else(|| violation("render_status must be a string"))?;
        if !["ok", "wrap_failed", "empty_diff", "failed"].contains(&rs) {
            return Err(violation(format!("unknown render_status '{rs}'")));
        }
    }

    let relations = want(root, "relations")?
        .as_array()
        .ok_or_else(|| violation("'relations' must be an array"))?;
    for (ri, r) in relations.iter().enumerate() {
        let r = r
            .as_object()
            .ok_or_else(|| violation(format!("relation {ri} must be an object")))?;
        let kind = want(r, "kind")?
            .as_str()
            .ok_or_else(|| violation("relation kind must be a string"))?;
        if !RELATION_KIND_NAMES.contains(&kind) {
            return Err(violation(format!("unknown relation kind '{kind}'")));
        }
        let from = want(r, "from_unit")?
            .as_str()
            .ok_or_else(|| violation("from_unit must be a string"))?;
        let to = want(r, "to_unit")?
            .as_str()
            .ok_or_else(|| violation("to_unit must be a string"))?;
        for id in [from, to] {
            if !ids.contains_key(id) {
                return Err(violation(format!(
                    "relation {ri} references unknown unit '{id}'"
                )));
            }
        }
        let from_box = want(r, "from_box")?;
        let to_box = want(r, "to_box")?;
        if kind == "Identical" {
            if from != to {
                return Err(violation(format!(
                    "relation {ri}: Identical must connect one unit's boxes"
                )));
            }
            let n_boxes = units[ids[from]]["boxes"]
                .as_array()
                .map(|a| a.len())
                .unwrap_or(0);
            for (label, v) in [("from_box", from_box), ("to_box", to_box)] {
                let b = v.as_u64().ok_or_else(|| {
                    violation(format!("relation {ri}: Identical requires {label}"))
                })?;
                if b as usize >= n_boxes {
                    return Err(violation(format!(
                        "relation {ri}: {label} {b} out of range ({n_boxes} boxes)"
                    )));
                }
            }
            if from_box == to_box {
                return Err(violation(format!(
                    "relation {ri}: Identical must connect distinct boxes"
                )));
            }
        } else {
            if !(from_box.is_null() && to_box.is_null()) {
                return Err(violation(format!(
                    "relation {ri}: box indices only apply to Identical"
                )));
            }
            if from == to {
                return Err(violation(format!("relation {ri}: self-loop {kind}")));
            }
        }
    }

    if !want(root, "warnings")?.is_array() {
        return Err(violation("'warnings' must be an array"));
    }
    let quality = want(root, "quality")?;
    if !quality.is_null() && !quality.is_object() {
        return Err(violation("'quality' must be null or an object"));
    }
    Ok(())
}

/// Reads, validates, and deserializes a genome file.
pub fn load_genome(path: &Path) -> Result<Genome, PipelineError> {
    let text = std::fs::read_to_string(path)?;
    let value: Value = serde_json::from_str(&text).map_err(SchemaError::Json)?;
    validate_value(&value)?;
    let genome: Genome = serde_json::from_value(value).map_err(SchemaError::Json)?;
    Ok(genome)
}

// ----- reference boxes ---------------------------------------------------------------

/// External reference boxes used for alignment grading.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RefBoxes {
    pub dpi: u32,
    pub boxes: Vec<BBox>,
}

impl RefBoxes {
    /// Boxes rescaled to a target resolution.
    pub fn boxes_at(&self, dpi: u32) -> Vec<BBox> {
        if dpi == self.dpi {
            return self.boxes.clone();
        }
        self.boxes
            .iter()
            .map(|b| b.rescale(self.dpi, dpi))
            .collect()
    }
}

pub fn load_refboxes(path: &Path) -> Result<RefBoxes, PipelineError> {
    let text = std::fs::read_to_string(path)?;
    let refs: RefBoxes = serde_json::from_str(&text).map_err(SchemaError::Json)?;
    if refs.dpi == 0 {
        return Err(SchemaError::Violation("refbox dpi must be positive".to_string()).into());
    }
    for (i, b) in refs.boxes.iter().enumerate() {
        if b.x0 >= b.x1 || b.y0 >= b.y1 {
            return Err(
                SchemaError::Violation(format!("reference box {i} is empty or inverted")).into(),
            );
        }
    }
    Ok(refs)
}

/// Grades a genome against reference boxes, rescaled to the genome's
/// resolution.
pub fn grade_genome(genome: &Genome, refs: &RefBoxes) -> QualityReport {
    let boxes: Vec<BBox> = genome
        .units
        .iter()
        .flat_map(|u| u.boxes.iter().copied())
        .collect();
    crate::quality::grade(&boxes, &refs.boxes_at(genome.dpi))
}
