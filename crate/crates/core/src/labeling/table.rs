//! Rating tables and their CSV form.

use std::cmp::Ordering;
use std::collections::BTreeMap;
use std::io::{Read, Write};

use serde::{Deserialize, Serialize};

use super::{Encoder, EncodingDescriptor};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Provenance {
    Manual,
    Inferred,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RatingRecord {
    pub content_id: String,
    pub encoding: EncodingDescriptor,
    pub mos: f64,
    pub provenance: Provenance,
}

impl RatingRecord {
    pub fn key(&self) -> RatingKey {
        RatingKey::new(
            &self.content_id,
            &self.encoding.encoder,
            self.encoding.level_param,
        )
    }
}

/// `(content, encoder, level)` identity of a rated video.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct RatingKey {
    pub content_id: String,
    pub encoder: Encoder,
    pub level: Level,
}

impl RatingKey {
    pub fn new(content_id: &str, encoder: &Encoder, level_param: f64) -> Self {
        Self {
            content_id: content_id.to_string(),
            encoder: encoder.clone(),
            level: Level(level_param),
        }
    }
}

impl std::fmt::Display for RatingKey {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}/{}/{}", self.content_id, self.encoder, self.level.0)
    }
}

/// Totally ordered level parameter.
#[derive(Debug, Clone, Copy)]
pub struct Level(pub f64);

impl PartialEq for Level {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}

impl Eq for Level {}

impl PartialOrd for Level {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for Level {
    fn cmp(&self, other: &Self) -> Ordering {
        self.0.total_cmp(&other.0)
    }
}

impl std::hash::Hash for Level {
    fn hash<H: std::hash::Hasher>(&self, state: &mut H) {
        self.0.to_bits().hash(state)
    }
}

/// At most one record per key, iterated in key order.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct RatingTable {
    records: BTreeMap<RatingKey, RatingRecord>,
}

#[derive(Debug, Serialize, Deserialize)]
struct CsvRow {
    content_id: String,
    encoder: String,
    level_param: f64,
    q_step: f64,
    mos: f64,
    provenance: Provenance,
}

impl RatingTable {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn from_records(records: impl IntoIterator<Item = RatingRecord>) -> Result<Self> {
        let mut t = Self::new();
        for r in records {
            t.insert(r)?;
        }
        Ok(t)
    }

    /// Adds a record; a second record for the same key is an error.
    pub fn insert(&mut self, record: RatingRecord) -> Result<()> {
        if !(0.0..=1.0).contains(&record.mos) {
            return Err(Error::OutOfRange(format!(
                "MOS {} for {} outside [0, 1]",
                record.mos,
                record.key()
            )));
        }
        if !(record.encoding.q_step > 0.0) {
            return Err(Error::InvalidArgument(format!(
                "q_step {} for {} must be positive",
                record.encoding.q_step,
                record.key()
            )));
        }
        let key = record.key();
        if self.records.contains_key(&key) {
            return Err(Error::InvalidArgument(format!(
                "duplicate rating for {key}"
            )));
        }
        self.records.insert(key, record);
        Ok(())
    }

    pub fn get(&self, key: &RatingKey) -> Option<&RatingRecord> {
        self.records.get(key)
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = &RatingRecord> {
        self.records.values()
    }

    pub fn keys(&self) -> impl Iterator<Item = &RatingKey> {
        self.records.keys()
    }

    pub fn count(&self, provenance: Provenance) -> usize {
        self.iter().filter(|r| r.provenance == provenance).count()
    }

    /// Records grouped by `(content_id, encoder)`.
    pub fn by_pair(&self) -> BTreeMap<(String, Encoder), Vec<&RatingRecord>> {
        let mut out: BTreeMap<(String, Encoder), Vec<&RatingRecord>> = BTreeMap::new();
        for r in self.iter() {
            out.entry((r.content_id.clone(), r.encoding.encoder.clone()))
                .or_default()
                .push(r);
        }
        out
    }

    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        for r in self.iter() {
            w.serialize(CsvRow {
                content_id: r.content_id.clone(),
                encoder: r.encoding.encoder.to_string(),
                level_param: r.encoding.level_param,
                q_step: r.encoding.q_step,
                mos: r.mos,
                provenance: r.provenance,
            })?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn read_csv<R: Read>(reader: R) -> Result<Self> {
        let mut rd = csv::Reader::from_reader(reader);
        let mut t = Self::new();
        for row in rd.deserialize() {
            let row: CsvRow = row?;
            t.insert(RatingRecord {
                content_id: row.content_id,
                encoding: EncodingDescriptor {
                    encoder: row.encoder.parse()?,
                    level_param: row.level_param,
                    q_step: row.q_step,
                },
                mos: row.mos,
                provenance: row.provenance,
            })?;
        }
        Ok(t)
    }
}
