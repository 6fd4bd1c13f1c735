use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const PLACEHOLDER: &str = "{CLS}";

pub const DEFAULT_INPUT_TEMPLATE: &str = "a photo of a {CLS}";

/// Checks that `template` contains exactly one `{CLS}` placeholder.
pub fn check_template(template: &str) -> Result<()> {
    match template.matches(PLACEHOLDER).count() {
        1 => Ok(()),
        n => Err(Error::invalid(format!("template {template:?} has {n} {PLACEHOLDER} placeholders, expected 1"))),
    }
}

pub fn render(template: &str, class_name: &str) -> Result<String> {
    check_template(template)?;
    Ok(template.replace(PLACEHOLDER, class_name))
}

/// An LLM query with one `{CLS}` slot.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "RawQuery")]
pub struct QueryTemplate {
    pub id: u32,
    pub template: String,
}

#[derive(Deserialize)]
struct RawQuery {
    id: u32,
    template: String,
}

impl TryFrom<RawQuery> for QueryTemplate {
    type Error = Error;

    fn try_from(r: RawQuery) -> Result<Self> {
        QueryTemplate::new(r.id, r.template)
    }
}

impl QueryTemplate {
    pub fn new(id: u32, template: impl Into<String>) -> Result<Self> {
        let template = template.into();
        check_template(&template)?;
        Ok(Self { id, template })
    }

    pub fn render(&self, class_name: &str) -> String {
        self.template.replace(PLACEHOLDER, class_name)
    }
}

/// The five description queries used for ImageNet-style class lists.
pub fn default_queries() -> Vec<QueryTemplate> {
    [
        "Describe what a(n) {CLS} looks like.",
        "How can you identify a(n) {CLS}?",
        "What does a(n) {CLS} look like?",
        "Describe an image from the internet of a(n) {CLS}.",
        "A caption of an image of a(n) {CLS}.",
    ]
    .iter()
    .enumerate()
    .map(|(i, t)| QueryTemplate { id: i as u32, template: t.to_string() })
    .collect()
}

/// CLIP's 80 hand-written ImageNet prompt templates.
pub const CLIP_80_TEMPLATES: [&str; 80] = [
    "a bad photo of a {CLS}.",
    "a photo of many {CLS}.",
    "a sculpture of a {CLS}.",
    "a photo of the hard to see {CLS}.",
    "a low resolution photo of the {CLS}.",
    "a rendering of a {CLS}.",
    "graffiti of a {CLS}.",
    "a bad photo of the {CLS}.",
    "a cropped photo of the {CLS}.",
    "a tattoo of a {CLS}.",
    "the embroidered {CLS}.",
    "a photo of a hard to see {CLS}.",
    "a bright photo of a {CLS}.",
    "a photo of a clean {CLS}.",
    "a photo of a dirty {CLS}.",
    "a dark photo of the {CLS}.",
    "a drawing of a {CLS}.",
    "a photo of my {CLS}.",
    "the plastic {CLS}.",
    "a photo of the cool {CLS}.",
    "a close-up photo of a {CLS}.",
    "a black and white photo of the {CLS}.",
    "a painting of the {CLS}.",
    "a painting of a {CLS}.",
    "a pixelated photo of the {CLS}.",
    "a sculpture of the {CLS}.",
    "a bright photo of the {CLS}.",
    "a cropped photo of a {CLS}.",
    "a plastic {CLS}.",
    "a photo of the dirty {CLS}.",
    "a jpeg corrupted photo of a {CLS}.",
    "a blurry photo of the {CLS}.",
    "a photo of the {CLS}.",
    "a good photo of the {CLS}.",
    "a rendering of the {CLS}.",
    "a {CLS} in a video game.",
    "a photo of one {CLS}.",
    "a doodle of a {CLS}.",
    "a close-up photo of the {CLS}.",
    "a photo of a {CLS}.",
    "the origami {CLS}.",
    "the {CLS} in a video game.",
    "a sketch of a {CLS}.",
    "a doodle of the {CLS}.",
    "a origami {CLS}.",
    "a low resolution photo of a {CLS}.",
    "the toy {CLS}.",
    "a rendition of the {CLS}.",
    "a photo of the clean {CLS}.",
    "a photo of a large {CLS}.",
    "a rendition of a {CLS}.",
    "a photo of a nice {CLS}.",
    "a photo of a weird {CLS}.",
    "a blurry photo of a {CLS}.",
    "a cartoon {CLS}.",
    "art of a {CLS}.",
    "a sketch of the {CLS}.",
    "a embroidered {CLS}.",
    "a pixelated photo of a {CLS}.",
    "itap of the {CLS}.",
    "a jpeg corrupted photo of the {CLS}.",
    "a good photo of a {CLS}.",
    "a plushie {CLS}.",
    "a photo of the nice {CLS}.",
    "a photo of the small {CLS}.",
    "a photo of the weird {CLS}.",
    "the cartoon {CLS}.",
    "art of the {CLS}.",
    "a drawing of the {CLS}.",
    "a photo of the large {CLS}.",
    "a black and white photo of a {CLS}.",
    "the plushie {CLS}.",
    "a dark photo of a {CLS}.",
    "itap of a {CLS}.",
    "graffiti of the {CLS}.",
    "a toy {CLS}.",
    "itap of my {CLS}.",
    "a photo of a cool {CLS}.",
    "a photo of a small {CLS}.",
    "a tattoo of the {CLS}.",
];

/// Image-attribute templates (orientation, blur, lighting, framing). Pass a
/// template file to the curate command to use a different list.
pub const ATTRIBUTE_TEMPLATES: [&str; 16] = [
    "a rotated photo of a {CLS}.",
    "an upside down photo of a {CLS}.",
    "a blurry photo of a {CLS}.",
    "a sharp photo of a {CLS}.",
    "a noisy photo of a {CLS}.",
    "a dark photo of a {CLS}.",
    "a bright photo of a {CLS}.",
    "an overexposed photo of a {CLS}.",
    "a low contrast photo of a {CLS}.",
    "a close-up photo of a {CLS}.",
    "a distant photo of a {CLS}.",
    "a cropped photo of a {CLS}.",
    "a centered photo of a {CLS}.",
    "a black and white photo of a {CLS}.",
    "a photo of a {CLS} at night.",
    "a photo of a {CLS} in the snow.",
];
