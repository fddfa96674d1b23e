//! Structured spatial chain-of-thought text format.
//!
//! Coordinates are quantized onto a 1000-bin grid per axis and written as
//! `(x,y)` integer pairs. The canonical layout separates blocks with one
//! blank line and closes with `<|cot_end|>` directly after the last block;
//! see `docs/format.md` for the byte-level grammar and the golden example.
//! The parser accepts arbitrary whitespace between tokens but is strict on
//! delimiter spelling and on the digits inside a coordinate pair.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::{ImageBox, ImagePoint};
use crate::guide::{validate_prior, SpatialPrior};

/// Number of quantization bins per axis.
pub const COORD_SCALE: u32 = 1000;
/// Default number of gripper-path waypoints.
pub const PATH_WAYPOINTS: usize = 5;

pub const COT_START: &str = "<|cot_start|>";
pub const COT_END: &str = "<|cot_end|>";
pub const TASK_OPEN: &str = "<TASK>";
pub const TASK_CLOSE: &str = "</TASK>";
pub const SUBTASKS_OPEN: &str = "<SUBTASKS>";
pub const SUBTASKS_CLOSE: &str = "</SUBTASKS>";
pub const CURRENT_OPEN: &str = "<CURRENT>";
pub const CURRENT_CLOSE: &str = "</CURRENT>";
pub const OBJECTS_START: &str = "<|objects_start|>";
pub const OBJECTS_END: &str = "<|objects_end|>";
pub const BOX_START: &str = "<|box_start|>";
pub const BOX_END: &str = "<|box_end|>";
pub const PICK_START: &str = "<|pick_start|>";
pub const PICK_END: &str = "<|pick_end|>";
pub const AFFORDANCE_START: &str = "<|affordance_2d_start|>";
pub const AFFORDANCE_END: &str = "<|affordance_2d_end|>";
pub const PATH_START: &str = "<|gripper_path_2d_start|>";
pub const PATH_END: &str = "<|gripper_path_2d_end|>";
pub const SUBTASK_JOIN: &str = " -> ";

/// Coarse error class, used by callers that only care which kind of
/// failure occurred.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ErrorClass {
    Domain,
    Syntactic,
    Range,
    Semantic,
    Validation,
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum CodecError {
    #[error("coordinate {value} outside [0, 1]")]
    Domain { value: f64 },
    #[error("quantized coordinate {value} outside [0, 999]")]
    QuantizedDomain { value: i64 },
    #[error("syntax error at byte {offset}: expected {expected}")]
    Syntax { offset: usize, expected: String },
    #[error("coordinate {value} at byte {offset} outside [0, 999]")]
    Range { offset: usize, value: u64 },
    #[error("semantic error: {0}")]
    Semantic(String),
    #[error("invalid field `{field}`: {reason}")]
    Validation { field: String, reason: String },
}

impl CodecError {
    pub fn class(&self) -> ErrorClass {
        match self {
            CodecError::Domain { .. } | CodecError::QuantizedDomain { .. } => ErrorClass::Domain,
            CodecError::Syntax { .. } => ErrorClass::Syntactic,
            CodecError::Range { .. } => ErrorClass::Range,
            CodecError::Semantic(_) => ErrorClass::Semantic,
            CodecError::Validation { .. } => ErrorClass::Validation,
        }
    }

    fn invalid(field: impl Into<String>, reason: impl Into<String>) -> Self {
        CodecError::Validation {
            field: field.into(),
            reason: reason.into(),
        }
    }
}

/// Bin index in `[0, 999]`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct QuantizedCoord(u16);

impl QuantizedCoord {
    pub fn new(q: i64) -> Result<Self, CodecError> {
        if (0..COORD_SCALE as i64).contains(&q) {
            Ok(QuantizedCoord(q as u16))
        } else {
            Err(CodecError::QuantizedDomain { value: q })
        }
    }

    pub fn get(self) -> u16 {
        self.0
    }
}

/// `min(floor(v * 1000), 999)` for `v` in `[0, 1]`.
pub fn quantize_coord(v: f64) -> Result<QuantizedCoord, CodecError> {
    if !v.is_finite() || !(0.0..=1.0).contains(&v) {
        return Err(CodecError::Domain { value: v });
    }
    let q = (v * COORD_SCALE as f64).floor() as i64;
    Ok(QuantizedCoord(q.min(COORD_SCALE as i64 - 1) as u16))
}

/// Bin center `(q + 0.5) / 1000`.
pub fn dequantize_coord(q: QuantizedCoord) -> f64 {
    (q.0 as f64 + 0.5) / COORD_SCALE as f64
}

/// Replaces a coordinate by the center of its bin.
pub fn snap_coord(v: f64) -> Result<f64, CodecError> {
    quantize_coord(v).map(dequantize_coord)
}

pub fn snap_point(p: &ImagePoint) -> Result<ImagePoint, CodecError> {
    Ok(ImagePoint::new(snap_coord(p.x)?, snap_coord(p.y)?))
}

pub fn snap_box(b: &ImageBox) -> Result<ImageBox, CodecError> {
    Ok(ImageBox::new(
        snap_coord(b.x_min)?,
        snap_coord(b.y_min)?,
        snap_coord(b.x_max)?,
        snap_coord(b.y_max)?,
    ))
}

/// A detected object: category name plus 2D box.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ObjectRef {
    pub label: String,
    #[serde(rename = "box")]
    pub bbox: ImageBox,
}

impl ObjectRef {
    pub fn new(label: impl Into<String>, bbox: ImageBox) -> Self {
        Self {
            label: label.into(),
            bbox,
        }
    }
}

/// The three-part reasoning record: task decomposition, visual grounding,
/// and the robot motion sketch.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StructuredCot {
    pub task: String,
    pub subtasks: Vec<String>,
    pub current: String,
    pub objects: Vec<ObjectRef>,
    pub pick: Option<ObjectRef>,
    pub affordance: Option<ImagePoint>,
    pub gripper_path: Vec<ImagePoint>,
}

impl StructuredCot {
    /// Checks every field invariant with the default path length.
    pub fn validate(&self) -> Result<(), CodecError> {
        self.validate_with(PATH_WAYPOINTS)
    }

    pub fn validate_with(&self, path_len: usize) -> Result<(), CodecError> {
        check_text("task", &self.task)?;
        if self.subtasks.is_empty() {
            return Err(CodecError::invalid("subtasks", "at least one subtask required"));
        }
        for (i, s) in self.subtasks.iter().enumerate() {
            check_text(&format!("subtasks[{i}]"), s)?;
            if s.contains("->") {
                return Err(CodecError::invalid(format!("subtasks[{i}]"), "contains `->`"));
            }
        }
        check_text("current", &self.current)?;
        if !self.subtasks.contains(&self.current) {
            return Err(CodecError::invalid("current", "not one of the subtasks"));
        }
        for (i, o) in self.objects.iter().enumerate() {
            check_object(&format!("objects[{i}]"), o)?;
        }
        if let Some(pick) = &self.pick {
            check_object("pick", pick)?;
            if !self.objects.contains(pick) {
                return Err(CodecError::invalid("pick", "not one of the objects"));
            }
        }
        if let Some(a) = &self.affordance {
            if !a.in_unit_square() {
                return Err(CodecError::invalid("affordance", "outside [0,1]^2"));
            }
        }
        if !self.gripper_path.is_empty() && self.gripper_path.len() != path_len {
            return Err(CodecError::invalid(
                "gripper_path",
                format!("expected 0 or {path_len} waypoints, got {}", self.gripper_path.len()),
            ));
        }
        for (i, p) in self.gripper_path.iter().enumerate() {
            if !p.in_unit_square() {
                return Err(CodecError::invalid(format!("gripper_path[{i}]"), "outside [0,1]^2"));
            }
        }
        Ok(())
    }

    /// Copy with every coordinate replaced by its bin center.
    pub fn snapped(&self) -> Result<StructuredCot, CodecError> {
        let snap_obj = |o: &ObjectRef| -> Result<ObjectRef, CodecError> {
            Ok(ObjectRef::new(o.label.clone(), snap_box(&o.bbox)?))
        };
        Ok(StructuredCot {
            task: self.task.clone(),
            subtasks: self.subtasks.clone(),
            current: self.current.clone(),
            objects: self.objects.iter().map(snap_obj).collect::<Result<_, _>>()?,
            pick: self.pick.as_ref().map(snap_obj).transpose()?,
            affordance: self.affordance.as_ref().map(snap_point).transpose()?,
            gripper_path: self
                .gripper_path
                .iter()
                .map(snap_point)
                .collect::<Result<_, _>>()?,
        })
    }
}

/// Free text may not contain delimiter characters or line breaks and must
/// already be trimmed, so the parser can recover it exactly.
fn check_text(field: &str, text: &str) -> Result<(), CodecError> {
    if text.is_empty() {
        return Err(CodecError::invalid(field, "empty"));
    }
    if text.trim() != text {
        return Err(CodecError::invalid(field, "leading or trailing whitespace"));
    }
    if let Some(c) = text.chars().find(|c| matches!(c, '<' | '>' | '|' | '\n' | '\r')) {
        return Err(CodecError::invalid(field, format!("contains reserved character {c:?}")));
    }
    Ok(())
}

fn check_object(field: &str, o: &ObjectRef) -> Result<(), CodecError> {
    check_text(&format!("{field}.label"), &o.label)?;
    check_box(&format!("{field}.box"), &o.bbox)
}

fn check_box(field: &str, b: &ImageBox) -> Result<(), CodecError> {
    if !b.in_unit_square() {
        return Err(CodecError::invalid(field, "outside [0,1]^2"));
    }
    if !b.is_well_ordered() {
        return Err(CodecError::invalid(field, "x_min >= x_max or y_min >= y_max"));
    }
    let [lo, hi] = b.corners();
    let (qlo, qhi) = (quantize_pair(&lo)?, quantize_pair(&hi)?);
    if qlo.0 >= qhi.0 || qlo.1 >= qhi.1 {
        return Err(CodecError::invalid(field, "box collapses under quantization"));
    }
    Ok(())
}

fn quantize_pair(p: &ImagePoint) -> Result<(QuantizedCoord, QuantizedCoord), CodecError> {
    Ok((quantize_coord(p.x)?, quantize_coord(p.y)?))
}

fn write_pair(out: &mut String, p: &ImagePoint) -> Result<(), CodecError> {
    let (x, y) = quantize_pair(p)?;
    let _ = write!(out, "({},{})", x.0, y.0);
    Ok(())
}

fn write_box(out: &mut String, b: &ImageBox) -> Result<(), CodecError> {
    out.push_str(BOX_START);
    out.push(' ');
    let [lo, hi] = b.corners();
    write_pair(out, &lo)?;
    out.push(',');
    write_pair(out, &hi)?;
    out.push(' ');
    out.push_str(BOX_END);
    Ok(())
}

fn write_path(out: &mut String, path: &[ImagePoint]) -> Result<(), CodecError> {
    for (i, p) in path.iter().enumerate() {
        if i > 0 {
            out.push(';');
        }
        write_pair(out, p)?;
    }
    Ok(())
}

fn write_object(out: &mut String, o: &ObjectRef) -> Result<(), CodecError> {
    out.push_str(&o.label);
    out.push(' ');
    write_box(out, &o.bbox)
}

/// Emits the canonical text form. Byte-deterministic.
pub fn serialize_cot(cot: &StructuredCot) -> Result<String, CodecError> {
    cot.validate()?;
    let mut out = String::with_capacity(512);
    out.push_str(COT_START);
    out.push('\n');
    let _ = write!(out, "{TASK_OPEN} {} {TASK_CLOSE}\n\n", cot.task);
    let _ = write!(
        out,
        "{SUBTASKS_OPEN}\n{}\n{SUBTASKS_CLOSE}\n\n",
        cot.subtasks.join(SUBTASK_JOIN)
    );
    let _ = write!(out, "{CURRENT_OPEN}\n{}\n{CURRENT_CLOSE}\n\n", cot.current);
    out.push_str(OBJECTS_START);
    out.push('\n');
    for o in &cot.objects {
        write_object(&mut out, o)?;
        out.push('\n');
    }
    out.push_str(OBJECTS_END);
    if let Some(pick) = &cot.pick {
        out.push_str("\n\n");
        out.push_str(PICK_START);
        out.push('\n');
        write_object(&mut out, pick)?;
        out.push('\n');
        out.push_str(PICK_END);
    }
    if let Some(a) = &cot.affordance {
        out.push_str("\n\n");
        out.push_str(AFFORDANCE_START);
        out.push('\n');
        write_pair(&mut out, a)?;
        out.push('\n');
        out.push_str(AFFORDANCE_END);
    }
    if !cot.gripper_path.is_empty() {
        out.push_str("\n\n");
        out.push_str(PATH_START);
        out.push('\n');
        write_path(&mut out, &cot.gripper_path)?;
        out.push('\n');
        out.push_str(PATH_END);
    }
    out.push('\n');
    out.push_str(COT_END);
    Ok(out)
}

/// Byte cursor over the input. Every delimiter is ASCII, so any offset the
/// cursor stops at is a char boundary.
struct Cursor<'a> {
    src: &'a str,
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn new(src: &'a str) -> Self {
        Self { src, pos: 0 }
    }

    fn rest(&self) -> &'a str {
        &self.src[self.pos..]
    }

    fn skip_ws(&mut self) {
        let rest = self.rest();
        self.pos += rest.len() - rest.trim_start().len();
    }

    fn at(&self, token: &str) -> bool {
        self.rest().starts_with(token)
    }

    fn syntax(&self, expected: impl Into<String>) -> CodecError {
        CodecError::Syntax {
            offset: self.pos,
            expected: expected.into(),
        }
    }

    fn expect(&mut self, token: &str) -> Result<(), CodecError> {
        self.skip_ws();
        if self.at(token) {
            self.pos += token.len();
            Ok(())
        } else {
            Err(self.syntax(format!("`{token}`")))
        }
    }

    fn eat(&mut self, token: &str) -> bool {
        self.skip_ws();
        if self.at(token) {
            self.pos += token.len();
            true
        } else {
            false
        }
    }

    /// Free text up to the next `<`, trimmed. The caller then expects the
    /// delimiter that should follow. `->` is let through for subtask lists;
    /// other fields reject it during semantic checks.
    fn text(&mut self, what: &str) -> Result<&'a str, CodecError> {
        self.skip_ws();
        let rest = self.rest();
        let end = rest.find('<').ok_or_else(|| self.syntax(format!("{what} followed by a delimiter")))?;
        let text = rest[..end].trim();
        if text.is_empty() {
            return Err(self.syntax(format!("non-empty {what}")));
        }
        if text.replace(SUBTASK_JOIN.trim(), "").contains(['>', '|']) {
            return Err(self.syntax(format!("{what} without reserved characters")));
        }
        self.pos += end;
        Ok(text)
    }

    fn number(&mut self) -> Result<QuantizedCoord, CodecError> {
        let start = self.pos;
        let digits = self.rest().bytes().take_while(u8::is_ascii_digit).count();
        if digits == 0 {
            return Err(self.syntax("digit"));
        }
        let lit = &self.rest()[..digits];
        if digits > 1 && lit.starts_with('0') {
            return Err(self.syntax("integer without leading zeros"));
        }
        self.pos += digits;
        if digits > 3 {
            // saturate to avoid overflow on absurd inputs
            let value = lit.parse::<u64>().unwrap_or(u64::MAX);
            return Err(CodecError::Range { offset: start, value });
        }
        let value: u64 = lit.parse().expect("at most three ascii digits");
        QuantizedCoord::new(value as i64).map_err(|_| CodecError::Range { offset: start, value })
    }

    /// Strict `(x,y)`: no whitespace inside the parentheses.
    fn pair(&mut self) -> Result<ImagePoint, CodecError> {
        self.skip_ws();
        if !self.at("(") {
            return Err(self.syntax("`(`"));
        }
        self.pos += 1;
        let x = self.number()?;
        if !self.at(",") {
            return Err(self.syntax("`,`"));
        }
        self.pos += 1;
        let y = self.number()?;
        if !self.at(")") {
            return Err(self.syntax("`)`"));
        }
        self.pos += 1;
        Ok(ImagePoint::new(dequantize_coord(x), dequantize_coord(y)))
    }

    fn bbox(&mut self) -> Result<ImageBox, CodecError> {
        self.expect(BOX_START)?;
        let lo = self.pair()?;
        self.expect(",")?;
        let hi = self.pair()?;
        self.expect(BOX_END)?;
        Ok(ImageBox::new(lo.x, lo.y, hi.x, hi.y))
    }

    fn object(&mut self) -> Result<ObjectRef, CodecError> {
        let label = self.text("object label")?.to_string();
        let bbox = self.bbox()?;
        Ok(ObjectRef { label, bbox })
    }

    fn path(&mut self) -> Result<Vec<ImagePoint>, CodecError> {
        let mut pts = vec![self.pair()?];
        while self.eat(";") {
            pts.push(self.pair()?);
        }
        Ok(pts)
    }
}

/// Parses the canonical text form (with flexible whitespace).
pub fn parse_cot(text: &str) -> Result<StructuredCot, CodecError> {
    let mut c = Cursor::new(text);
    c.expect(COT_START)?;
    c.expect(TASK_OPEN)?;
    let task = c.text("task")?.to_string();
    c.expect(TASK_CLOSE)?;

    c.expect(SUBTASKS_OPEN)?;
    let subtasks_at = c.pos;
    let joined = c.text("subtasks")?;
    c.expect(SUBTASKS_CLOSE)?;
    let subtasks: Vec<String> = joined.split("->").map(|s| s.trim().to_string()).collect();
    if subtasks.iter().any(String::is_empty) {
        return Err(CodecError::Syntax {
            offset: subtasks_at,
            expected: "non-empty subtasks between `->`".into(),
        });
    }

    c.expect(CURRENT_OPEN)?;
    let current = c.text("current subtask")?.to_string();
    c.expect(CURRENT_CLOSE)?;

    c.expect(OBJECTS_START)?;
    let mut objects = Vec::new();
    loop {
        c.skip_ws();
        if c.eat(OBJECTS_END) {
            break;
        }
        if c.at("<") {
            return Err(c.syntax(format!("object or `{OBJECTS_END}`")));
        }
        objects.push(c.object()?);
    }

    let pick = if c.eat(PICK_START) {
        let o = c.object()?;
        c.expect(PICK_END)?;
        Some(o)
    } else {
        None
    };
    let affordance = if c.eat(AFFORDANCE_START) {
        let p = c.pair()?;
        c.expect(AFFORDANCE_END)?;
        Some(p)
    } else {
        None
    };
    let gripper_path = if c.eat(PATH_START) {
        let p = c.path()?;
        c.expect(PATH_END)?;
        p
    } else {
        Vec::new()
    };
    c.expect(COT_END)?;
    c.skip_ws();
    if !c.rest().is_empty() {
        return Err(c.syntax("end of input"));
    }

    let cot = StructuredCot {
        task,
        subtasks,
        current,
        objects,
        pick,
        affordance,
        gripper_path,
    };
    semantic_check(&cot)?;
    cot.validate().map_err(|e| match e {
        CodecError::Validation { field, reason } => CodecError::Semantic(format!("{field}: {reason}")),
        other => other,
    })?;
    Ok(cot)
}

/// Byte-level entry point; invalid UTF-8 is a syntax error at the first
/// offending byte.
pub fn parse_cot_bytes(bytes: &[u8]) -> Result<StructuredCot, CodecError> {
    match std::str::from_utf8(bytes) {
        Ok(s) => parse_cot(s),
        Err(e) => Err(CodecError::Syntax {
            offset: e.valid_up_to(),
            expected: "valid UTF-8".into(),
        }),
    }
}

fn semantic_check(cot: &StructuredCot) -> Result<(), CodecError> {
    if !cot.subtasks.contains(&cot.current) {
        return Err(CodecError::Semantic(format!(
            "current subtask `{}` is not one of the subtasks",
            cot.current
        )));
    }
    for o in cot.objects.iter().chain(cot.pick.iter()) {
        if !o.bbox.is_well_ordered() {
            return Err(CodecError::Semantic(format!("box of `{}` is not well ordered", o.label)));
        }
    }
    if let Some(pick) = &cot.pick {
        if !cot.objects.contains(pick) {
            return Err(CodecError::Semantic(format!(
                "pick `{}` does not match any detected object",
                pick.label
            )));
        }
    }
    if !cot.gripper_path.is_empty() && cot.gripper_path.len() != PATH_WAYPOINTS {
        return Err(CodecError::Semantic(format!(
            "gripper path has {} waypoints, expected {PATH_WAYPOINTS}",
            cot.gripper_path.len()
        )));
    }
    Ok(())
}

/// Single-line fragment using the same coordinate grammar as the CoT, meant
/// to be appended to the instruction after one space.
pub fn serialize_prior(prior: &SpatialPrior) -> Result<String, CodecError> {
    validate_prior(prior).map_err(|e| CodecError::invalid("prior", e.to_string()))?;
    let mut out = String::new();
    match prior {
        SpatialPrior::Point { point } => {
            out.push_str(AFFORDANCE_START);
            out.push(' ');
            write_pair(&mut out, point)?;
            out.push(' ');
            out.push_str(AFFORDANCE_END);
        }
        SpatialPrior::Box { bbox } => write_box(&mut out, bbox)?,
        SpatialPrior::Trace { points } => {
            out.push_str(PATH_START);
            out.push(' ');
            write_path(&mut out, points)?;
            out.push(' ');
            out.push_str(PATH_END);
        }
    }
    Ok(out)
}

/// `instruction` followed by each serialized prior, space separated.
pub fn augment_instruction(instruction: &str, priors: &[SpatialPrior]) -> Result<String, CodecError> {
    let mut out = instruction.to_string();
    for p in priors {
        out.push(' ');
        out.push_str(&serialize_prior(p)?);
    }
    Ok(out)
}

/// Splits an augmented instruction into its plain text and the priors
/// appended after it. Coordinates come back as bin centers.
pub fn parse_augmented_instruction(text: &str) -> Result<(String, Vec<SpatialPrior>), CodecError> {
    let split = text.find("<|").unwrap_or(text.len());
    let instruction = text[..split].trim().to_string();
    let mut c = Cursor::new(text);
    c.pos = split;
    let mut priors = Vec::new();
    loop {
        c.skip_ws();
        if c.rest().is_empty() {
            break;
        }
        if c.eat(AFFORDANCE_START) {
            let p = c.pair()?;
            c.expect(AFFORDANCE_END)?;
            priors.push(SpatialPrior::Point { point: p });
        } else if c.at(BOX_START) {
            priors.push(SpatialPrior::Box { bbox: c.bbox()? });
        } else if c.eat(PATH_START) {
            let p = c.path()?;
            c.expect(PATH_END)?;
            priors.push(SpatialPrior::Trace { points: p });
        } else {
            return Err(c.syntax("prior fragment"));
        }
    }
    Ok((instruction, priors))
}
