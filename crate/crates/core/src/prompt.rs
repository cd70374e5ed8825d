//! Prompt rendering.
//!
//! Every prompt string the pipeline sends to a captioner or generator is
//! rendered here, byte-exactly, by plain substitution. There is deliberately
//! no article correction ("a aircraft" stays as-is) and no casing change:
//! downstream models are fine-tuned on these exact strings, so fidelity wins
//! over grammar.

use serde::{Deserialize, Serialize};

use crate::error::{PipelineError, Result};

/// Which class-agnostic attribute an extraction prompt asks for.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AttributeKind {
    Background,
    Pose,
}

impl AttributeKind {
    pub fn word(self) -> &'static str {
        match self {
            AttributeKind::Background => "background",
            AttributeKind::Pose => "pose",
        }
    }
}

/// Validated slot values for the training-caption template.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CaptionSlots {
    pub descriptor: String,
    pub classname: String,
    pub background: String,
    pub pose: String,
}

fn check_slot(slot: &'static str, value: &str) -> Result<()> {
    if value.is_empty() {
        return Err(PipelineError::EmptySlot { slot });
    }
    if value.contains('\n') || value.contains('\r') || value.trim() != value {
        return Err(PipelineError::InvalidSlot {
            slot,
            value: value.to_string(),
        });
    }
    Ok(())
}

impl CaptionSlots {
    pub fn new(
        descriptor: impl Into<String>,
        classname: impl Into<String>,
        background: impl Into<String>,
        pose: impl Into<String>,
    ) -> Result<Self> {
        let slots = CaptionSlots {
            descriptor: descriptor.into(),
            classname: classname.into(),
            background: background.into(),
            pose: pose.into(),
        };
        slots.validate()?;
        Ok(slots)
    }

    pub fn validate(&self) -> Result<()> {
        check_slot("descriptor", &self.descriptor)?;
        check_slot("classname", &self.classname)?;
        check_slot("background", &self.background)?;
        check_slot("pose", &self.pose)?;
        Ok(())
    }
}

/// The full training caption:
/// `a {descriptor} photo of a {classname} in the {background} background with the {pose} pose`
pub fn render_training_caption(slots: &CaptionSlots) -> Result<String> {
    slots.validate()?;
    Ok(format!(
        "a {} photo of a {} in the {} background with the {} pose",
        slots.descriptor, slots.classname, slots.background, slots.pose
    ))
}

/// The attribute-extraction prompt sent to the captioning model. The pose
/// prompt is the background prompt with the word "background" swapped for
/// "pose". Quotes around `a {descriptor}` are plain apostrophes on both
/// sides.
pub fn render_extraction_prompt(kind: AttributeKind, descriptor: &str) -> Result<String> {
    check_slot("descriptor", descriptor)?;
    Ok(format!(
        "describe the {} of the {d} in as few words as possible. Refer to the {d} as simply 'a {d}'",
        kind.word(),
        d = descriptor
    ))
}

/// The bare class-only caption `a photo of a {classname}`, used by the
/// no-preservation ablation baseline.
pub fn render_class_only_caption(descriptor: &str, classname: &str) -> Result<String> {
    check_slot("descriptor", descriptor)?;
    check_slot("classname", classname)?;
    Ok(format!("a photo of a {classname}"))
}

/// Inverse of [`render_training_caption`].
///
/// Splits on the first ` photo of a `, the first ` in the `, and the *last*
/// ` background with the ` / trailing ` pose` anchors. Unique whenever slot
/// values avoid the template keywords; captions whose slots embed those
/// tokens may parse to a different (still template-conformant) tuple.
pub fn parse_training_caption(caption: &str) -> Option<CaptionSlots> {
    let rest = caption.strip_prefix("a ")?;
    let (descriptor, rest) = rest.split_once(" photo of a ")?;
    let (classname, rest) = rest.split_once(" in the ")?;
    let rest = rest.strip_suffix(" pose")?;
    let split_at = rest.rfind(" background with the ")?;
    let background = &rest[..split_at];
    let pose = &rest[split_at + " background with the ".len()..];
    CaptionSlots::new(descriptor, classname, background, pose).ok()
}
