use sha2::{Digest, Sha256};

use super::CaptionMode;

/// A captioning instruction. The digest pins the exact text that produced a prompt.
#[derive(Debug, PartialEq, Eq)]
pub struct Template {
    pub id: &'static str,
    pub mode: CaptionMode,
    pub text: &'static str,
}

pub static STYLE_TEMPLATE: Template = Template {
    id: "style-caption-v1",
    mode: CaptionMode::Style,
    text: include_str!("../../assets/templates/style_caption_v1.txt"),
};

pub static CONTENT_TEMPLATE: Template = Template {
    id: "content-caption-v1",
    mode: CaptionMode::Content,
    text: include_str!("../../assets/templates/content_caption_v1.txt"),
};

static ALL: [&Template; 2] = [&STYLE_TEMPLATE, &CONTENT_TEMPLATE];

impl Template {
    /// Hex SHA-256 of the template text.
    pub fn digest(&self) -> String {
        Sha256::digest(self.text.as_bytes())
            .iter()
            .map(|b| format!("{b:02x}"))
            .collect()
    }

    /// `id@digest-prefix`, as recorded next to generated prompts.
    pub fn version_tag(&self) -> String {
        format!("{}@{}", self.id, &self.digest()[..12])
    }
}

pub fn template_for(mode: CaptionMode) -> &'static Template {
    match mode {
        CaptionMode::Style => &STYLE_TEMPLATE,
        CaptionMode::Content => &CONTENT_TEMPLATE,
    }
}

pub fn template_by_id(id: &str) -> Option<&'static Template> {
    ALL.iter().copied().find(|t| t.id == id)
}
