//! Line-delimited corpus and interest-stream formats.
//!
//! One self-delimiting JSON record per line, UTF-8. Item records carry
//! either raw `text` (vectorized against a training vocabulary) or an
//! explicit sparse `vector`, plus optional `quality` and `followers`
//! fields. A record whose only content is a `meta` object carries
//! provenance; readers skip it.

use std::io::{BufRead, Write};

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::dynapop::InterestEvent;
use crate::eval::follower_quality;
use crate::stream::Item;
use crate::vector::{tokenize, vectorize, SparseVector, Vocabulary, VocabularyBuilder};
use crate::{Error, Result};

/// One corpus line.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ItemRecord {
    pub id: String,
    pub tick: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub text: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub vector: Option<Vec<(u32, f64)>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub quality: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub followers: Option<u64>,
}

/// One interest-stream line.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct InterestRecord {
    pub id: String,
    pub tick: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub quality: Option<f64>,
}

fn parse_err(line: usize, message: impl Into<String>) -> Error {
    Error::Parse { line, message: message.into() }
}

fn is_meta_line(value: &Value) -> bool {
    value.as_object().is_some_and(|o| o.contains_key("meta"))
}

/// Reads item records, skipping meta lines and blank lines; structural
/// problems are reported with their line number.
pub fn read_item_records(reader: impl BufRead) -> Result<Vec<ItemRecord>> {
    let mut out = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let lineno = i + 1;
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let value: Value = serde_json::from_str(&line)
            .map_err(|e| parse_err(lineno, format!("not a JSON record: {e}")))?;
        if is_meta_line(&value) {
            continue;
        }
        let rec: ItemRecord = serde_json::from_value(value)
            .map_err(|e| parse_err(lineno, format!("bad item record: {e}")))?;
        validate_item_record(&rec).map_err(|m| parse_err(lineno, m))?;
        out.push(rec);
    }
    Ok(out)
}

fn validate_item_record(rec: &ItemRecord) -> std::result::Result<(), String> {
    match (&rec.text, &rec.vector) {
        (None, None) => return Err(format!("item {}: needs either text or vector", rec.id)),
        (Some(_), Some(_)) => {
            return Err(format!("item {}: text and vector are mutually exclusive", rec.id))
        }
        _ => {}
    }
    if let Some(q) = rec.quality {
        if !q.is_finite() || !(0.0..=1.0).contains(&q) {
            return Err(format!("item {}: quality {q} outside [0,1]", rec.id));
        }
    }
    if let Some(pairs) = &rec.vector {
        if let Err(e) = SparseVector::new(pairs.clone()) {
            return Err(format!("item {}: {e}", rec.id));
        }
    }
    Ok(())
}

/// Reads interest records (skipping meta lines), validating tick order.
pub fn read_interest_records(reader: impl BufRead) -> Result<Vec<InterestRecord>> {
    let mut out: Vec<InterestRecord> = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let lineno = i + 1;
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let value: Value = serde_json::from_str(&line)
            .map_err(|e| parse_err(lineno, format!("not a JSON record: {e}")))?;
        if is_meta_line(&value) {
            continue;
        }
        let rec: InterestRecord = serde_json::from_value(value)
            .map_err(|e| parse_err(lineno, format!("bad interest record: {e}")))?;
        if let Some(prev) = out.last() {
            if rec.tick < prev.tick {
                return Err(parse_err(lineno, "interest stream is not sorted by tick"));
            }
        }
        out.push(rec);
    }
    Ok(out)
}

/// Writes a provenance meta line followed by one record per line.
pub fn write_item_records(
    mut w: impl Write,
    meta: Option<&Value>,
    records: &[ItemRecord],
) -> Result<()> {
    if let Some(meta) = meta {
        writeln!(w, "{}", serde_json::json!({ "meta": meta }))?;
    }
    for rec in records {
        writeln!(w, "{}", serde_json::to_string(rec).expect("record serializes"))?;
    }
    Ok(())
}

pub fn write_interest_records(
    mut w: impl Write,
    meta: Option<&Value>,
    records: &[InterestRecord],
) -> Result<()> {
    if let Some(meta) = meta {
        writeln!(w, "{}", serde_json::json!({ "meta": meta }))?;
    }
    for rec in records {
        writeln!(w, "{}", serde_json::to_string(rec).expect("record serializes"))?;
    }
    Ok(())
}

/// Where an item's quality score comes from when the record has no explicit
/// `quality` field.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub enum QualitySource {
    /// Explicit field, default 1.0.
    Explicit,
    /// Derive from the `followers` field: `log2(1 + min(1, followers/n_f))`.
    Followers { n_f: u64 },
}

/// Builds a vocabulary over the text records of a (training) corpus slice.
pub fn build_vocabulary(records: &[ItemRecord]) -> Vocabulary {
    let mut b = VocabularyBuilder::default();
    for rec in records {
        if let Some(text) = &rec.text {
            let toks = tokenize(text);
            b.add_document(toks.iter().map(String::as_str));
        }
    }
    b.finish()
}

/// Materializes records into stream items. Text records require a
/// vocabulary (built over the training corpus); vector records pass
/// through. Items that vectorize to nothing are rejected.
pub fn items_from_records(
    records: &[ItemRecord],
    vocab: Option<&Vocabulary>,
    quality: QualitySource,
) -> Result<Vec<Item>> {
    let mut out = Vec::with_capacity(records.len());
    for rec in records {
        let vector = match (&rec.text, &rec.vector) {
            (Some(text), None) => {
                let vocab = vocab.ok_or_else(|| {
                    Error::InvalidConfig(format!(
                        "item {}: text records need a vocabulary",
                        rec.id
                    ))
                })?;
                let toks = tokenize(text);
                vectorize(&toks, vocab)
                    .map_err(|e| Error::EmptyVector(format!("item {}: {e}", rec.id)))?
            }
            (None, Some(pairs)) => SparseVector::new(pairs.clone())?,
            _ => unreachable!("validated at read time"),
        };
        let q = match (rec.quality, quality) {
            (Some(q), _) => q,
            (None, QualitySource::Followers { n_f }) => {
                follower_quality(rec.followers.unwrap_or(0), n_f)
            }
            (None, QualitySource::Explicit) => 1.0,
        };
        out.push(Item { id: rec.id.clone(), tick: rec.tick, vector, quality: q });
    }
    Ok(out)
}

/// Converts interest records to events.
pub fn interest_events(records: &[InterestRecord]) -> Vec<InterestEvent> {
    records
        .iter()
        .map(|r| InterestEvent { id: r.id.clone(), tick: r.tick, quality: r.quality })
        .collect()
}
