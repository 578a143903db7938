use std::sync::OnceLock;

use regex::Regex;
use serde::{Deserialize, Serialize};

use super::{CaptionMode, ClientError};

/// Lexical checks applied to captioner output.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct CaptionRules {
    /// Words or phrases that may not appear in content captions.
    pub banned_lexicon: Vec<String>,
    /// Case-insensitive openings rejected in either mode.
    pub forbidden_prefixes: Vec<String>,
}

const COLORS: &[&str] = &[
    "red",
    "orange",
    "yellow",
    "green",
    "blue",
    "purple",
    "violet",
    "pink",
    "brown",
    "black",
    "white",
    "gray",
    "grey",
    "crimson",
    "scarlet",
    "vermilion",
    "maroon",
    "teal",
    "turquoise",
    "cyan",
    "aqua",
    "azure",
    "navy",
    "indigo",
    "magenta",
    "fuchsia",
    "lavender",
    "lilac",
    "beige",
    "ivory",
    "cream",
    "tan",
    "ochre",
    "amber",
    "gold",
    "golden",
    "silver",
    "bronze",
    "copper",
    "emerald",
    "olive",
    "sepia",
    "monochrome",
    "monochromatic",
    "colorful",
    "colourful",
    "color",
    "colour",
    "colored",
    "coloured",
    "hue",
    "hues",
    "pastel",
];

const STYLE_WORDS: &[&str] = &[
    "watercolor",
    "watercolour",
    "gouache",
    "acrylic",
    "charcoal",
    "impasto",
    "brushwork",
    "brushstroke",
    "brushstrokes",
    "painterly",
    "lighting",
    "texture",
    "textured",
    "oil painting",
    "ink wash",
];

impl Default for CaptionRules {
    fn default() -> Self {
        Self {
            banned_lexicon: COLORS
                .iter()
                .chain(STYLE_WORDS)
                .map(|s| s.to_string())
                .collect(),
            forbidden_prefixes: vec!["the image".into(), "a figure".into(), "this image".into()],
        }
    }
}

fn style_skeleton() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| {
        Regex::new(r"^In the style of [^,]+?, .+? with .+? in .+?, .+? light, .+?, .+?, .+\.$")
            .expect("valid regex")
    })
}

fn tokens(text: &str) -> Vec<String> {
    text.split(|c: char| !c.is_alphanumeric())
        .filter(|t| !t.is_empty())
        .map(str::to_lowercase)
        .collect()
}

/// Checks `text` against the output contract of `mode`, returning the trimmed caption.
pub fn validate_caption(
    text: &str,
    mode: CaptionMode,
    rules: &CaptionRules,
) -> Result<String, ClientError> {
    let trimmed = text.trim().trim_matches('"').trim();
    let reject = |reason: String| Err(ClientError::Validation { reason });
    if trimmed.is_empty() {
        return reject("empty caption".into());
    }
    let lower = trimmed.to_lowercase();
    if let Some(p) = rules
        .forbidden_prefixes
        .iter()
        .find(|p| lower.starts_with(&p.to_lowercase()))
    {
        return reject(format!("starts with {p:?}"));
    }
    match mode {
        CaptionMode::Style => {
            if !trimmed.starts_with("In the style of ") {
                return reject("missing \"In the style of\" prefix".into());
            }
            if !style_skeleton().is_match(trimmed) {
                return reject("does not follow the style output format".into());
            }
        }
        CaptionMode::Content => {
            let toks = tokens(trimmed);
            for entry in &rules.banned_lexicon {
                let phrase = tokens(entry);
                if !phrase.is_empty() && toks.windows(phrase.len()).any(|w| w == phrase.as_slice())
                {
                    return reject(format!("contains banned term {entry:?}"));
                }
            }
        }
    }
    Ok(trimmed.to_string())
}

#[cfg(test)]
mod tests {
    use super::*;

    const GOOD_STYLE: &str = "In the style of ukiyo-e, deep indigo with muted ochre and cream in layered horizontal \
                              bands, soft diffuse light, woodblock print, fine grainy paper surface, crisp \
                              hard-edged contour lines.";

    #[test]
    fn conforming_style_caption_passes() {
        let rules = CaptionRules::default();
        assert_eq!(
            validate_caption(GOOD_STYLE, CaptionMode::Style, &rules).unwrap(),
            GOOD_STYLE
        );
        let quoted = format!("  \"{GOOD_STYLE}\"\n");
        assert_eq!(
            validate_caption(&quoted, CaptionMode::Style, &rules).unwrap(),
            GOOD_STYLE
        );
    }

    #[test]
    fn style_caption_without_prefix_is_rejected() {
        let text = GOOD_STYLE.replacen("In the style of", "Drawn as", 1);
        let err =
            validate_caption(&text, CaptionMode::Style, &CaptionRules::default()).unwrap_err();
        assert!(
            matches!(err, ClientError::Validation { reason } if reason.contains("In the style of"))
        );
    }

    #[test]
    fn style_caption_missing_fields_is_rejected() {
        let rules = CaptionRules::default();
        for text in [
            "In the style of pop art.",
            "In the style of pop art, red with blue in blocks, flat light, screen print, smooth",
            "In the style of pop art, red and blue in blocks, flat light, screen print, smooth, bold.",
        ] {
            assert!(validate_caption(text, CaptionMode::Style, &rules).is_err(), "{text}");
        }
    }

    #[test]
    fn content_caption_with_color_word_is_rejected() {
        let rules = CaptionRules::default();
        let err = validate_caption(
            "A fox sits beside a crimson lantern near a stone bridge.",
            CaptionMode::Content,
            &rules,
        )
        .unwrap_err();
        assert!(matches!(err, ClientError::Validation { reason } if reason.contains("crimson")));
        // whole-token match only
        validate_caption(
            "A man reads beside a redwood tree.",
            CaptionMode::Content,
            &rules,
        )
        .unwrap();
        assert!(
            validate_caption("An oil painting of a dog.", CaptionMode::Content, &rules).is_err()
        );
        validate_caption(
            "An oil lamp stands on a shelf.",
            CaptionMode::Content,
            &rules,
        )
        .unwrap();
        assert!(validate_caption("A BLUE kite.", CaptionMode::Content, &rules).is_err());
    }

    #[test]
    fn custom_lexicon_replaces_default() {
        let rules = CaptionRules {
            banned_lexicon: vec!["kite".into()],
            forbidden_prefixes: vec![],
        };
        validate_caption("A crimson bird.", CaptionMode::Content, &rules).unwrap();
        assert!(validate_caption("A kite.", CaptionMode::Content, &rules).is_err());
    }

    #[test]
    fn instructional_openings_are_rejected() {
        let rules = CaptionRules::default();
        assert!(validate_caption(
            "The image shows a cat on a mat.",
            CaptionMode::Content,
            &rules
        )
        .is_err());
        assert!(validate_caption("   ", CaptionMode::Content, &rules).is_err());
    }
}
