//! JSONL manifests: a header line followed by one record per line, sorted by id.

use std::collections::HashSet;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::record::{PromptRecord, Record, Stage, StyleCombination};

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Serialize, Deserialize)]
struct Header {
    schema_version: u32,
    stage: Stage,
    count: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Manifest {
    schema_version: u32,
    stage: Stage,
    records: Vec<Record>,
}

impl Manifest {
    /// Validates and sorts `records` by id.
    ///
    /// Rejects duplicate ids (including FNV collisions) and empty prompt text.
    pub fn new(stage: Stage, records: impl IntoIterator<Item = Record>) -> Result<Self> {
        let mut records: Vec<Record> = records.into_iter().collect();
        records.sort_by_key(Record::id);
        let mut seen = HashSet::with_capacity(records.len());
        for r in &records {
            if !seen.insert(r.id()) {
                return Err(Error::DuplicateId(r.id()));
            }
            if let Record::Prompt(p) = r {
                if p.text.is_empty() {
                    return Err(Error::EmptyText(p.id));
                }
            }
        }
        Ok(Self {
            schema_version: SCHEMA_VERSION,
            stage,
            records,
        })
    }

    pub fn empty(stage: Stage) -> Self {
        Self {
            schema_version: SCHEMA_VERSION,
            stage,
            records: Vec::new(),
        }
    }

    pub fn from_prompts(
        stage: Stage,
        prompts: impl IntoIterator<Item = PromptRecord>,
    ) -> Result<Self> {
        Self::new(stage, prompts.into_iter().map(Record::Prompt))
    }

    pub fn from_combinations(
        stage: Stage,
        combos: impl IntoIterator<Item = StyleCombination>,
    ) -> Result<Self> {
        Self::new(stage, combos.into_iter().map(Record::Combination))
    }

    pub fn schema_version(&self) -> u32 {
        self.schema_version
    }

    pub fn stage(&self) -> Stage {
        self.stage
    }

    pub fn records(&self) -> &[Record] {
        &self.records
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn prompts(&self) -> impl Iterator<Item = &PromptRecord> {
        self.records.iter().filter_map(Record::as_prompt)
    }

    pub fn combinations(&self) -> impl Iterator<Item = &StyleCombination> {
        self.records.iter().filter_map(Record::as_combination)
    }

    /// Re-labels the manifest with a later stage.
    pub fn advance(self, stage: Stage) -> Result<Self> {
        if stage < self.stage {
            return Err(Error::StageRegression {
                from: self.stage,
                to: stage,
            });
        }
        Ok(Self { stage, ..self })
    }

    pub fn write_to<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        let header = Header {
            schema_version: self.schema_version,
            stage: self.stage,
            count: self.records.len(),
        };
        serde_json::to_writer(&mut w, &header)?;
        w.write_all(b"\n")?;
        for r in &self.records {
            serde_json::to_writer(&mut w, r)?;
            w.write_all(b"\n")?;
        }
        w.flush()
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut buf = Vec::new();
        self.write_to(&mut buf)
            .expect("writing to a Vec cannot fail");
        buf
    }

    pub fn read_from<R: BufRead>(r: R) -> Result<Self> {
        let mut lines = r.lines().enumerate();
        let header: Header = match lines.next() {
            None => {
                return Err(Error::MalformedLine {
                    line: 1,
                    message: "missing header".into(),
                })
            }
            Some((_, line)) => {
                let line = line.map_err(|e| Error::MalformedLine {
                    line: 1,
                    message: e.to_string(),
                })?;
                serde_json::from_str(&line).map_err(|e| Error::MalformedLine {
                    line: 1,
                    message: e.to_string(),
                })?
            }
        };
        if header.schema_version != SCHEMA_VERSION {
            return Err(Error::SchemaVersion {
                found: header.schema_version,
                expected: SCHEMA_VERSION,
            });
        }
        let mut records = Vec::with_capacity(header.count);
        for (i, line) in lines {
            let lineno = i + 1;
            let line = line.map_err(|e| Error::MalformedLine {
                line: lineno,
                message: e.to_string(),
            })?;
            if line.trim().is_empty() {
                continue;
            }
            let rec: Record = serde_json::from_str(&line).map_err(|e| Error::MalformedLine {
                line: lineno,
                message: e.to_string(),
            })?;
            records.push(rec);
        }
        if records.len() != header.count {
            return Err(Error::CountMismatch {
                declared: header.count,
                found: records.len(),
            });
        }
        Manifest::new(header.stage, records)
    }
}

pub fn write_manifest(path: impl AsRef<Path>, manifest: &Manifest) -> Result<()> {
    let path = path.as_ref();
    let f = File::create(path).map_err(|e| Error::io(path, e))?;
    manifest
        .write_to(BufWriter::new(f))
        .map_err(|e| Error::io(path, e))
}

pub fn read_manifest(path: impl AsRef<Path>) -> Result<Manifest> {
    let path = path.as_ref();
    let f = File::open(path).map_err(|e| Error::io(path, e))?;
    Manifest::read_from(BufReader::new(f))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::record::{CombinationStatus, GenerationRecord, PromptKind};
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn roundtrip(m: &Manifest) -> Manifest {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("m.jsonl");
        write_manifest(&p, m).unwrap();
        read_manifest(&p).unwrap()
    }

    #[test]
    fn empty_manifest_roundtrips() {
        let m = Manifest::empty(Stage::Raw);
        assert_eq!(roundtrip(&m), m);
        assert_eq!(
            String::from_utf8(m.to_bytes()).unwrap(),
            "{\"schema_version\":1,\"stage\":\"raw\",\"count\":0}\n"
        );
    }

    #[test]
    fn thousand_random_records_roundtrip() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let mut records: Vec<Record> = Vec::new();
        for i in 0..1000u64 {
            if i % 3 == 0 {
                let mut c = StyleCombination::new(rng.random(), rng.random());
                c.status = CombinationStatus::Done;
                c.generation = Some(GenerationRecord {
                    image_ref: Some(format!("images/{i}.ppm")),
                    seed: c.generation_seed,
                    steps: 40,
                    cfg_scale: 4.0,
                    attempts: 1,
                    error: None,
                });
                records.push(c.into());
            } else {
                let len = rng.random_range(1..40);
                let text: String = (0..len)
                    .map(|_| char::from(rng.random_range(b' '..=b'~')))
                    .collect();
                let kind = if rng.random_bool(0.5) {
                    PromptKind::Style
                } else {
                    PromptKind::Content
                };
                let mut p = PromptRecord::new(kind, text, "fixture", i);
                if rng.random_bool(0.5) {
                    p = p.with_embedding_row(i);
                }
                records.push(p.into());
            }
        }
        let m = Manifest::new(Stage::Paired, records).unwrap();
        assert_eq!(roundtrip(&m), m);
    }

    #[test]
    fn embedded_newline_is_escaped() {
        let p = PromptRecord::new(
            PromptKind::Content,
            "line one\nline two\r\n\"quoted\"",
            "t",
            0,
        );
        let m = Manifest::from_prompts(Stage::Raw, [p]).unwrap();
        let bytes = m.to_bytes();
        // header + one record
        assert_eq!(bytes.iter().filter(|&&b| b == b'\n').count(), 2);
        assert_eq!(roundtrip(&m), m);
    }

    #[test]
    fn records_sorted_by_id_with_fixed_key_order() {
        let a = PromptRecord::with_id(9, PromptKind::Style, "b", "s");
        let b = PromptRecord::with_id(2, PromptKind::Style, "a", "s");
        let m = Manifest::from_prompts(Stage::Raw, [a, b]).unwrap();
        let text = String::from_utf8(m.to_bytes()).unwrap();
        let second = text.lines().nth(1).unwrap();
        assert_eq!(
            second,
            r#"{"type":"prompt","id":2,"kind":"style","text":"a","source_tag":"s","embedding_row":null}"#
        );
    }

    #[test]
    fn rejects_duplicate_ids_and_empty_text() {
        let a = PromptRecord::with_id(1, PromptKind::Style, "x", "s");
        assert!(matches!(
            Manifest::from_prompts(Stage::Raw, [a.clone(), a]),
            Err(Error::DuplicateId(1))
        ));
        let e = PromptRecord::with_id(3, PromptKind::Style, "", "s");
        assert!(matches!(
            Manifest::from_prompts(Stage::Raw, [e]),
            Err(Error::EmptyText(3))
        ));
    }

    #[test]
    fn schema_mismatch_and_malformed_line() {
        let bad = "{\"schema_version\":9,\"stage\":\"raw\",\"count\":0}\n";
        assert!(matches!(
            Manifest::read_from(bad.as_bytes()),
            Err(Error::SchemaVersion { found: 9, .. })
        ));
        let bad = "{\"schema_version\":1,\"stage\":\"raw\",\"count\":2}\n\
                   {\"type\":\"prompt\",\"id\":1,\"kind\":\"style\",\"text\":\"a\",\"source_tag\":\"s\"}\n\
                   {not json}\n";
        assert!(matches!(
            Manifest::read_from(bad.as_bytes()),
            Err(Error::MalformedLine { line: 3, .. })
        ));
    }

    #[test]
    fn stage_only_moves_forward() {
        let m = Manifest::empty(Stage::Balanced);
        assert!(m.clone().advance(Stage::Paired).is_ok());
        assert!(matches!(
            m.advance(Stage::Raw),
            Err(Error::StageRegression { .. })
        ));
    }

    proptest! {
        #[test]
        fn arbitrary_prompt_text_roundtrips(texts in proptest::collection::vec("\\PC{1,30}", 0..20)) {
            let records = texts
                .iter()
                .enumerate()
                .map(|(i, t)| PromptRecord::new(PromptKind::Style, t.clone(), "p", i as u64));
            let m = Manifest::from_prompts(Stage::Raw, records).unwrap();
            let back = Manifest::read_from(m.to_bytes().as_slice()).unwrap();
            prop_assert_eq!(back, m);
        }
    }
}
