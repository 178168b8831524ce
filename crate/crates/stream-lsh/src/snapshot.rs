//! Index snapshot format: a versioned, line-delimited record dump.
//!
//! Layout: one header record, then (optionally) the vocabulary, the stored
//! items sorted by id, every table entry sorted by (table, sketch, seq), and
//! popularity states sorted by id. Loading verifies that each entry's stored
//! sketch matches a re-hash of its item, and round-trips byte-identically.
//! Snapshots serve querying; they do not carry generator state for resuming
//! a replay.

use std::io::{BufRead, Write};

use serde::{Deserialize, Serialize};

use crate::dynapop::LedgerState;
use crate::lsh::{Sketch, TableEntry};
use crate::stream::{Item, StreamIndex, StreamIndexConfig};
use crate::vector::Vocabulary;
use crate::{Error, Result};

pub const SNAPSHOT_VERSION: u32 = 1;

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct SnapshotHeader {
    pub version: u32,
    pub config: StreamIndexConfig,
    pub next_tick: u64,
    pub seq: u64,
    pub dropped_events: u64,
    #[serde(default)]
    pub fingerprint: String,
}

#[derive(Serialize, Deserialize)]
struct EntryRecord {
    table: usize,
    sketch: u64,
    id: String,
    tick: u64,
    seq: u64,
    refreshed: u64,
}

#[derive(Serialize, Deserialize)]
struct PopRecord {
    id: String,
    state: f64,
    last: u64,
}

#[derive(Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
enum Line {
    Snapshot(SnapshotHeader),
    Vocab(Box<Vocabulary>),
    Item(Item),
    Entry(EntryRecord),
    Pop(PopRecord),
}

/// Writes the index (and optional vocabulary) as line-delimited records.
pub fn save(
    index: &StreamIndex,
    vocab: Option<&Vocabulary>,
    fingerprint: &str,
    mut w: impl Write,
) -> Result<()> {
    let header = SnapshotHeader {
        version: SNAPSHOT_VERSION,
        config: index.config().clone(),
        next_tick: index.ticks_processed(),
        seq: index.snapshot_seq(),
        dropped_events: index.dropped_events(),
        fingerprint: fingerprint.to_owned(),
    };
    let mut emit = |line: &Line| -> Result<()> {
        writeln!(w, "{}", serde_json::to_string(line).expect("snapshot line serializes"))?;
        Ok(())
    };
    emit(&Line::Snapshot(header))?;
    if let Some(vocab) = vocab {
        emit(&Line::Vocab(Box::new(vocab.clone())))?;
    }
    for id in index.item_ids() {
        emit(&Line::Item(index.item(&id).expect("listed item resolves").clone()))?;
    }
    for (table, entry) in index.entries_sorted() {
        emit(&Line::Entry(EntryRecord {
            table,
            sketch: entry.sketch.0,
            id: index.item_id_of(entry.item).to_owned(),
            tick: entry.tick,
            seq: entry.seq,
            refreshed: entry.refreshed,
        }))?;
    }
    for (id, state) in index.popularity().entries_sorted() {
        emit(&Line::Pop(PopRecord { id: id.to_owned(), state: state.state, last: state.last }))?;
    }
    Ok(())
}

/// Reconstructs an index from a snapshot, re-verifying entry sketches.
pub fn load(reader: impl BufRead) -> Result<(StreamIndex, Option<Vocabulary>, SnapshotHeader)> {
    let mut lines = reader.lines().enumerate();
    let header = loop {
        let Some((i, line)) = lines.next() else {
            return Err(Error::Parse { line: 0, message: "empty snapshot".into() });
        };
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        match serde_json::from_str::<Line>(&line) {
            Ok(Line::Snapshot(h)) => break h,
            Ok(_) => {
                return Err(Error::Parse {
                    line: i + 1,
                    message: "snapshot must start with its header".into(),
                })
            }
            Err(e) => return Err(Error::Parse { line: i + 1, message: e.to_string() }),
        }
    };
    if header.version != SNAPSHOT_VERSION {
        return Err(Error::InvalidConfig(format!(
            "snapshot version {} unsupported (expected {SNAPSHOT_VERSION})",
            header.version
        )));
    }
    let mut index = StreamIndex::restore(
        header.config.clone(),
        header.next_tick,
        header.seq,
        header.dropped_events,
    )?;
    let mut vocab = None;
    let mut ledger =
        crate::dynapop::PopularityLedger::new(header.config.dynapop.map_or(0.5, |d| d.alpha))?;
    let mut slots: std::collections::HashMap<String, u32> = std::collections::HashMap::new();

    for (i, line) in lines {
        let lineno = i + 1;
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let parsed: Line = serde_json::from_str(&line)
            .map_err(|e| Error::Parse { line: lineno, message: e.to_string() })?;
        match parsed {
            Line::Snapshot(_) => {
                return Err(Error::Parse { line: lineno, message: "duplicate header".into() })
            }
            Line::Vocab(v) => vocab = Some(*v),
            Line::Item(item) => {
                let slot = index.restore_item(item.clone());
                slots.insert(item.id, slot);
            }
            Line::Entry(e) => {
                let &slot = slots.get(&e.id).ok_or_else(|| Error::Parse {
                    line: lineno,
                    message: format!("entry references unknown item {}", e.id),
                })?;
                index.restore_entry(
                    e.table,
                    TableEntry {
                        item: slot,
                        tick: e.tick,
                        seq: e.seq,
                        refreshed: e.refreshed,
                        sketch: Sketch(e.sketch),
                    },
                )?;
            }
            Line::Pop(p) => {
                ledger.restore_entry(p.id, LedgerState { state: p.state, last: p.last });
            }
        }
    }
    index.restore_ledger(ledger);
    index.drop_unreferenced();
    Ok((index, vocab, header))
}
