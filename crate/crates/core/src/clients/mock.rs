use std::path::{Path, PathBuf};

use rand::seq::{IndexedRandom, SliceRandom};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{
    Caption, CaptionMode, CaptionRequest, Captioner, ClientError, GenerationOutcome,
    GenerationRequest, Generator,
};
use crate::ids::fnv1a64;
use crate::pairing::split_prompt;
use crate::vector::EmbeddingMatrix;

/// Color-histogram bins, four levels per channel.
pub const STYLE_FEATURE_DIM: usize = 64;

const ART_STYLES: &[&str] = &[
    "graphic illustration",
    "watercolor illustration",
    "abstract expressionism",
    "digital rendering",
    "pop art",
    "chiaroscuro",
    "Romanticism",
    "cyberpunk digital art",
    "3D digital illustration",
    "digital painting",
    "impressionism",
    "Art Deco",
    "digital collage",
    "digital fantasy",
    "Baroque",
    "Art Nouveau",
    "Cubism",
    "vintage illustration",
    "digital abstraction",
    "retro-futurism",
    "comic book",
    "Post-Impressionism",
    "geometric abstraction",
    "folk art",
    "ukiyo-e",
    "botanical illustration",
    "steampunk illustration",
];
const COLORS: &[&str] = &[
    "deep indigo",
    "burnt sienna",
    "muted teal",
    "crimson",
    "pale ochre",
    "charcoal gray",
    "cobalt blue",
    "soft coral",
    "olive green",
    "ivory",
    "warm amber",
    "dusty rose",
    "slate blue",
    "emerald",
    "lemon yellow",
];
const DISTRIBUTIONS: &[&str] = &[
    "scattered patches",
    "horizontal bands",
    "radial gradients",
    "diagonal sweeps",
    "soft clusters",
    "a central glow",
    "fragmented blocks",
];
const LIGHTS: &[&str] = &[
    "soft diffuse",
    "high-contrast directional",
    "even ambient",
    "warm low",
    "cool backlit",
];
const MEDIUMS: &[&str] = &[
    "gouache on paper",
    "oil on canvas",
    "digital brush",
    "ink wash",
    "acrylic on board",
    "woodblock print",
    "charcoal on toned paper",
];
const TEXTURES: &[&str] = &[
    "matte grainy surface",
    "glossy layered finish",
    "dense impasto ridges",
    "smooth flat planes",
    "dry chalky layering",
    "fine paper tooth",
];
const BRUSHWORK: &[&str] = &[
    "short hard-edged strokes",
    "long flowing diagonal strokes",
    "stippled dots",
    "broad soft-edged washes",
    "crisp thin contour lines",
    "loose directional hatching",
];
const SUBJECTS: &[&str] = &[
    "a cat",
    "an old man",
    "a child",
    "a bicycle",
    "a lighthouse",
    "two chairs",
    "a teapot",
    "a sailboat",
    "a violin",
    "a fox",
    "a stack of books",
    "a bridge",
    "a dog",
    "a tall tree",
    "a small house",
    "a woman",
];
const RELATIONS: &[&str] = &[
    "sits beside",
    "leans against",
    "stands in front of",
    "rests under",
    "is partly hidden behind",
    "faces",
    "is placed next to",
];

/// `synthetic://style/{s}/content/{c}`, understood by [`MockCaptioner`].
pub fn synthetic_image_ref(style_class: u32, content_class: u32) -> String {
    format!("synthetic://style/{style_class}/content/{content_class}")
}

fn parse_synthetic(image_ref: &str) -> Option<(u32, u32)> {
    let rest = image_ref.strip_prefix("synthetic://style/")?;
    let (s, c) = rest.split_once("/content/")?;
    Some((s.parse().ok()?, c.parse().ok()?))
}

fn seeded(parts: &[u64]) -> ChaCha8Rng {
    let mut bytes = Vec::with_capacity(parts.len() * 8);
    for p in parts {
        bytes.extend_from_slice(&p.to_le_bytes());
    }
    ChaCha8Rng::seed_from_u64(fnv1a64(&bytes))
}

/// Deterministic captioner. Synthetic refs carry their style and content
/// class; any other ref must name an existing file, whose path hash stands
/// in for both classes.
#[derive(Debug, Clone, Default)]
pub struct MockCaptioner;

impl MockCaptioner {
    fn classes(image_ref: &str) -> Result<(u32, u32), ClientError> {
        if let Some(c) = parse_synthetic(image_ref) {
            return Ok(c);
        }
        if Path::new(image_ref).is_file() {
            let h = fnv1a64(image_ref.as_bytes());
            return Ok(((h % 997) as u32, ((h >> 32) % 991) as u32));
        }
        Err(ClientError::Unresolvable(image_ref.to_string()))
    }

    pub fn style_caption(image_id: u64, style_class: u32) -> String {
        // the overall style and palette follow the class; finer detail varies per image
        let mut class_rng = seeded(&[style_class as u64]);
        let mut rng = seeded(&[image_id, style_class as u64]);
        let style = ART_STYLES.choose(&mut class_rng).expect("non-empty");
        let mut palette: Vec<&str> = COLORS.to_vec();
        palette.shuffle(&mut class_rng);
        let medium = MEDIUMS.choose(&mut class_rng).expect("non-empty");
        let light = LIGHTS.choose(&mut class_rng).expect("non-empty");
        let dist = DISTRIBUTIONS.choose(&mut rng).expect("non-empty");
        let texture = TEXTURES.choose(&mut rng).expect("non-empty");
        let brush = BRUSHWORK.choose(&mut rng).expect("non-empty");
        format!(
            "In the style of {style}, {} with {} and {} in {dist}, {light} light, {medium}, {texture}, {brush}.",
            palette[0], palette[1], palette[2]
        )
    }

    pub fn content_caption(image_id: u64, content_class: u32) -> String {
        let mut class_rng = seeded(&[u64::MAX, content_class as u64]);
        let mut rng = seeded(&[image_id, content_class as u64, 1]);
        let mut subjects: Vec<&str> = SUBJECTS.to_vec();
        subjects.shuffle(&mut class_rng);
        let r1 = RELATIONS.choose(&mut class_rng).expect("non-empty");
        let r2 = RELATIONS.choose(&mut rng).expect("non-empty");
        let first = subjects[0];
        let mut chars = first.chars();
        let cap: String = chars
            .next()
            .map(|c| c.to_uppercase().collect::<String>())
            .unwrap_or_default()
            + chars.as_str();
        format!(
            "{cap} {r1} {}, while {} {r2} {}.",
            subjects[1], subjects[2], subjects[3]
        )
    }
}

impl Captioner for MockCaptioner {
    fn caption(&self, request: &CaptionRequest) -> Result<Caption, ClientError> {
        request.template()?;
        let (style, content) = Self::classes(&request.image_ref)?;
        let text = match request.mode {
            CaptionMode::Style => Self::style_caption(request.image_id, style),
            CaptionMode::Content => Self::content_caption(request.image_id, content),
        };
        Ok(Caption { text, attempts: 1 })
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RgbImage {
    pub width: u32,
    pub height: u32,
    pub pixels: Vec<[u8; 3]>,
}

/// Binary PPM (P6).
pub fn encode_ppm(image: &RgbImage) -> Vec<u8> {
    let mut out = format!("P6\n{} {}\n255\n", image.width, image.height).into_bytes();
    out.reserve(image.pixels.len() * 3);
    for p in &image.pixels {
        out.extend_from_slice(p);
    }
    out
}

pub fn decode_ppm(bytes: &[u8]) -> Result<RgbImage, ClientError> {
    let bad = |m: &str| ClientError::Response(format!("ppm: {m}"));
    let mut fields = Vec::with_capacity(4);
    let mut pos = 0;
    while fields.len() < 4 {
        while pos < bytes.len() && bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        let start = pos;
        while pos < bytes.len() && !bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        if start == pos {
            return Err(bad("truncated header"));
        }
        fields.push(std::str::from_utf8(&bytes[start..pos]).map_err(|_| bad("header"))?);
    }
    pos += 1;
    if fields[0] != "P6" || fields[3] != "255" {
        return Err(bad("only 8-bit P6 is supported"));
    }
    let width: u32 = fields[1].parse().map_err(|_| bad("width"))?;
    let height: u32 = fields[2].parse().map_err(|_| bad("height"))?;
    let n = width as usize * height as usize;
    let data = bytes
        .get(pos..pos + n * 3)
        .ok_or_else(|| bad("truncated pixel data"))?;
    Ok(RgbImage {
        width,
        height,
        pixels: data.chunks_exact(3).map(|c| [c[0], c[1], c[2]]).collect(),
    })
}

/// Renders stylized test images. The palette and its pixel shares come
/// from the style half of the prompt; where each color lands comes from
/// the content half and the seed.
#[derive(Debug, Clone)]
pub struct MockGenerator {
    pub out_dir: PathBuf,
    /// Side of the square thumbnail actually rendered.
    pub size: u32,
}

impl MockGenerator {
    pub fn new(out_dir: impl Into<PathBuf>) -> Self {
        Self {
            out_dir: out_dir.into(),
            size: 32,
        }
    }

    pub fn render(style_text: &str, content_text: &str, seed: u64, size: u32) -> RgbImage {
        let n = (size * size) as usize;
        let mut style_rng = seeded(&[fnv1a64(style_text.as_bytes())]);
        let colors = style_rng.random_range(3..=5usize);
        let palette: Vec<[u8; 3]> = (0..colors).map(|_| style_rng.random()).collect();
        let weights: Vec<f64> = (0..colors)
            .map(|_| style_rng.random_range(0.2..1.0))
            .collect();
        let total: f64 = weights.iter().sum();
        // largest-remainder rounding to exact pixel counts
        let raw: Vec<f64> = weights.iter().map(|w| w / total * n as f64).collect();
        let mut counts: Vec<usize> = raw.iter().map(|r| r.floor() as usize).collect();
        let mut order: Vec<usize> = (0..colors).collect();
        order.sort_by(|&a, &b| {
            (raw[b] - raw[b].floor())
                .total_cmp(&(raw[a] - raw[a].floor()))
                .then(a.cmp(&b))
        });
        let short = n - counts.iter().sum::<usize>();
        for &i in order.iter().take(short) {
            counts[i] += 1;
        }

        let mut layout_rng = seeded(&[fnv1a64(content_text.as_bytes()), seed]);
        let centers: Vec<(f64, f64)> = (0..4)
            .map(|_| {
                (
                    layout_rng.random_range(0.0..size as f64),
                    layout_rng.random_range(0.0..size as f64),
                )
            })
            .collect();
        let jitter: Vec<f64> = (0..n).map(|_| layout_rng.random_range(0.0..2.0)).collect();
        let mut cells: Vec<(f64, usize)> = (0..n)
            .map(|i| {
                let (x, y) = ((i as u32 % size) as f64, (i as u32 / size) as f64);
                let d = centers
                    .iter()
                    .map(|(cx, cy)| ((x - cx).powi(2) + (y - cy).powi(2)).sqrt())
                    .fold(f64::INFINITY, f64::min);
                (d + jitter[i], i)
            })
            .collect();
        cells.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
        let mut pixels = vec![[0u8; 3]; n];
        let mut cursor = cells.iter();
        for (color, &count) in palette.iter().zip(&counts) {
            for (_, i) in cursor.by_ref().take(count) {
                pixels[*i] = *color;
            }
        }
        RgbImage {
            width: size,
            height: size,
            pixels,
        }
    }

    pub fn image_path(&self, request_id: u64) -> PathBuf {
        self.out_dir.join(format!("{request_id:016x}.ppm"))
    }
}

impl Generator for MockGenerator {
    fn generate(&self, request: &GenerationRequest) -> Result<GenerationOutcome, ClientError> {
        request.validate()?;
        let (content, style) =
            split_prompt(&request.combined_prompt).unwrap_or(("", &request.combined_prompt));
        let image = Self::render(style, content, request.seed, self.size);
        let path = self.image_path(request.request_id);
        std::fs::create_dir_all(&self.out_dir)
            .and_then(|_| std::fs::write(&path, encode_ppm(&image)))
            .map_err(|e| ClientError::Io(format!("{}: {e}", path.display())))?;
        Ok(GenerationOutcome {
            image_ref: path.display().to_string(),
            attempts: 1,
        })
    }
}

/// Unit-norm 64-bin RGB histogram. Layout-invariant, so it depends only on
/// the palette shares of a mock image.
pub fn mock_style_features(image: &RgbImage) -> Vec<f64> {
    let mut hist = vec![0.0; STYLE_FEATURE_DIM];
    for p in &image.pixels {
        let bin = (p[0] as usize >> 6) * 16 + (p[1] as usize >> 6) * 4 + (p[2] as usize >> 6);
        hist[bin] += 1.0;
    }
    let norm = hist.iter().map(|v| v * v).sum::<f64>().sqrt();
    if norm > 0.0 {
        hist.iter_mut().for_each(|v| *v /= norm);
    }
    hist
}

/// Signed feature hashing of word unigrams and bigrams.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct HashingTextEmbedder {
    pub dim: usize,
}

impl Default for HashingTextEmbedder {
    fn default() -> Self {
        Self { dim: 64 }
    }
}

impl HashingTextEmbedder {
    pub fn embed(&self, text: &str) -> Vec<f64> {
        let words: Vec<String> = text
            .split(|c: char| !c.is_alphanumeric())
            .filter(|w| !w.is_empty())
            .map(str::to_lowercase)
            .collect();
        let dim = self.dim.max(1) as u64;
        let mut v = vec![0.0; dim as usize];
        let mut add = |key: &str, weight: f64| {
            let h = fnv1a64(key.as_bytes());
            let sign = if h >> 63 == 0 { 1.0 } else { -1.0 };
            v[(h % dim) as usize] += sign * weight;
        };
        if words.is_empty() {
            add(text, 1.0);
        }
        for w in &words {
            add(w, 1.0);
        }
        for pair in words.windows(2) {
            add(&format!("{} {}", pair[0], pair[1]), 0.5);
        }
        let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm > 0.0 {
            v.iter_mut().for_each(|x| *x /= norm);
        } else {
            v[0] = 1.0;
        }
        v
    }

    pub fn embed_all<S: AsRef<str>>(&self, texts: &[S]) -> crate::Result<EmbeddingMatrix> {
        let rows: Vec<Vec<f64>> = texts.iter().map(|t| self.embed(t.as_ref())).collect();
        let data = rows.concat();
        EmbeddingMatrix::new_normalized(texts.len(), self.dim.max(1), data)
    }
}
