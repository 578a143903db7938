use std::collections::{BTreeMap, HashSet};
use std::io::{BufRead, Write};
use std::path::Path;

use rand::seq::index;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::RetrievalError;
use crate::balance::derive_seed;
use crate::record::StyleLabel;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SplitRole {
    Query,
    Gallery,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitItem {
    pub id: u64,
    pub label: StyleLabel,
    /// Row of this item in the embedding matrix.
    pub row: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct RetrievalSplit {
    pub queries: Vec<SplitItem>,
    pub gallery: Vec<SplitItem>,
    /// label -> (queries, gallery items)
    pub per_style: BTreeMap<u32, (usize, usize)>,
}

impl RetrievalSplit {
    /// Builds a split from explicit query and gallery lists, sorting each by id.
    pub fn from_parts(
        mut queries: Vec<SplitItem>,
        mut gallery: Vec<SplitItem>,
    ) -> Result<Self, RetrievalError> {
        queries.sort_by_key(|q| q.id);
        gallery.sort_by_key(|g| g.id);
        let mut per_style: BTreeMap<u32, (usize, usize)> = BTreeMap::new();
        for q in &queries {
            per_style.entry(q.label.0).or_default().0 += 1;
        }
        for g in &gallery {
            per_style.entry(g.label.0).or_default().1 += 1;
        }
        let split = Self {
            queries,
            gallery,
            per_style,
        };
        split.validate()?;
        Ok(split)
    }

    /// Rejects duplicate ids and query/gallery overlap.
    pub fn validate(&self) -> Result<(), RetrievalError> {
        let mut seen = HashSet::with_capacity(self.queries.len() + self.gallery.len());
        for q in &self.queries {
            if !seen.insert(q.id) {
                return Err(RetrievalError::DuplicateId { id: q.id });
            }
        }
        let queries = seen.clone();
        for g in &self.gallery {
            if queries.contains(&g.id) {
                return Err(RetrievalError::Overlap { id: g.id });
            }
            if !seen.insert(g.id) {
                return Err(RetrievalError::DuplicateId { id: g.id });
            }
        }
        Ok(())
    }

    /// Query labels with no gallery item of the same label.
    pub fn orphan_labels(&self) -> Vec<u32> {
        self.per_style
            .iter()
            .filter(|(_, &(q, g))| q > 0 && g == 0)
            .map(|(&l, _)| l)
            .collect()
    }
}

/// Picks `queries_per_style` queries uniformly per style; the rest form the
/// gallery. Item `i` gets embedding row `i`.
pub fn build_split(
    items: &[u64],
    labels: &[StyleLabel],
    queries_per_style: usize,
    seed: u64,
) -> Result<RetrievalSplit, RetrievalError> {
    if items.len() != labels.len() {
        return Err(RetrievalError::LengthMismatch {
            items: items.len(),
            labels: labels.len(),
        });
    }
    let mut by_label: BTreeMap<u32, Vec<usize>> = BTreeMap::new();
    for (i, l) in labels.iter().enumerate() {
        by_label.entry(l.0).or_default().push(i);
    }
    let mut queries = Vec::new();
    let mut gallery = Vec::new();
    for (&label, members) in &by_label {
        if members.len() <= queries_per_style {
            return Err(RetrievalError::UnderpopulatedStyle {
                label,
                count: members.len(),
                needed: queries_per_style,
            });
        }
        let mut members = members.clone();
        members.sort_by_key(|&i| items[i]);
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, label as u64));
        let mut picked = vec![false; members.len()];
        for p in index::sample(&mut rng, members.len(), queries_per_style) {
            picked[p] = true;
        }
        for (p, &i) in members.iter().enumerate() {
            let item = SplitItem {
                id: items[i],
                label: labels[i],
                row: i,
            };
            if picked[p] {
                queries.push(item);
            } else {
                gallery.push(item);
            }
        }
    }
    RetrievalSplit::from_parts(queries, gallery)
}

#[derive(Serialize, Deserialize)]
struct Header {
    schema_version: u32,
    queries: usize,
    gallery: usize,
}

#[derive(Serialize, Deserialize)]
struct Line {
    role: SplitRole,
    id: u64,
    label: StyleLabel,
    row: usize,
}

/// JSONL: a header line, then one line per item, queries first, each group in id order.
pub fn write_split(path: impl AsRef<Path>, split: &RetrievalSplit) -> Result<(), RetrievalError> {
    let path = path.as_ref();
    let mut out = Vec::new();
    let header = Header {
        schema_version: crate::SCHEMA_VERSION,
        queries: split.queries.len(),
        gallery: split.gallery.len(),
    };
    push_line(&mut out, &header);
    for (role, list) in [
        (SplitRole::Query, &split.queries),
        (SplitRole::Gallery, &split.gallery),
    ] {
        for it in list {
            push_line(
                &mut out,
                &Line {
                    role,
                    id: it.id,
                    label: it.label,
                    row: it.row,
                },
            );
        }
    }
    std::fs::File::create(path)
        .and_then(|mut f| f.write_all(&out))
        .map_err(|e| crate::Error::io(path, e))?;
    Ok(())
}

pub fn read_split(path: impl AsRef<Path>) -> Result<RetrievalSplit, RetrievalError> {
    let path = path.as_ref();
    let file = std::fs::File::open(path).map_err(|e| crate::Error::io(path, e))?;
    let malformed = |line: usize, message: String| RetrievalError::Malformed { line, message };
    let mut lines = std::io::BufReader::new(file).lines();
    let header: Header = match lines.next() {
        Some(l) => serde_json::from_str(&l.map_err(|e| crate::Error::io(path, e))?)
            .map_err(|e| malformed(1, e.to_string()))?,
        None => return Err(malformed(1, "missing header".into())),
    };
    if header.schema_version != crate::SCHEMA_VERSION {
        return Err(malformed(
            1,
            format!("unsupported schema_version {}", header.schema_version),
        ));
    }
    let mut queries = Vec::new();
    let mut gallery = Vec::new();
    for (n, l) in lines.enumerate() {
        let l = l.map_err(|e| crate::Error::io(path, e))?;
        if l.trim().is_empty() {
            continue;
        }
        let line: Line = serde_json::from_str(&l).map_err(|e| malformed(n + 2, e.to_string()))?;
        let item = SplitItem {
            id: line.id,
            label: line.label,
            row: line.row,
        };
        match line.role {
            SplitRole::Query => queries.push(item),
            SplitRole::Gallery => gallery.push(item),
        }
    }
    if queries.len() != header.queries || gallery.len() != header.gallery {
        return Err(malformed(
            1,
            format!(
                "header declares {}/{} items, found {}/{}",
                header.queries,
                header.gallery,
                queries.len(),
                gallery.len()
            ),
        ));
    }
    RetrievalSplit::from_parts(queries, gallery)
}

fn push_line<T: Serialize>(out: &mut Vec<u8>, value: &T) {
    serde_json::to_writer(&mut *out, value).expect("plain data serializes");
    out.push(b'\n');
}
