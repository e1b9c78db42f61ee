// SPDX-License-Identifier: MIT OR Apache-2.0

//! Line-delimited dataset files.
//!
//! Line 1 is a [`DatasetHeader`]; every following line is one
//! [`EditRecord`](super::EditRecord) as a JSON object. Fields are written in
//! declaration order, so files diff cleanly.

use std::fs;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{Dataset, DatasetKind, EditRecord, RelationBank, SentenceTemplate};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetHeader {
    pub kind: DatasetKind,
    pub edit_template: String,
    pub paraphrase_template: String,
    pub seed: u64,
    pub count: usize,
    pub relation_bank: RelationBank,
}

pub fn write_dataset<W: Write>(ds: &Dataset, mut w: W) -> Result<()> {
    let header = DatasetHeader {
        kind: ds.kind,
        edit_template: ds.edit_template.id.clone(),
        paraphrase_template: ds.paraphrase_template.id.clone(),
        seed: ds.seed,
        count: ds.records.len(),
        relation_bank: ds.relation_bank.clone(),
    };
    serde_json::to_writer(&mut w, &header)?;
    w.write_all(b"\n")?;
    for r in &ds.records {
        serde_json::to_writer(&mut w, r)?;
        w.write_all(b"\n")?;
    }
    Ok(())
}

pub fn save_dataset(ds: &Dataset, path: impl AsRef<Path>) -> Result<()> {
    let mut buf = Vec::new();
    write_dataset(ds, &mut buf)?;
    fs::write(path, buf)?;
    Ok(())
}

pub fn load_dataset(path: impl AsRef<Path>) -> Result<Dataset> {
    parse_dataset(&fs::read_to_string(path)?)
}

pub fn parse_dataset(text: &str) -> Result<Dataset> {
    let mut lines = text.lines().enumerate().map(|(i, l)| (i + 1, l));
    let (_, first) = lines
        .next()
        .ok_or_else(|| Error::Parse { line: 1, message: "missing header line (field `kind` is required)".into() })?;
    let header: DatasetHeader =
        serde_json::from_str(first).map_err(|e| Error::Parse { line: 1, message: format!("header: {e}") })?;
    let template = |id: &str| {
        SentenceTemplate::builtin(id)
            .ok_or_else(|| Error::Parse { line: 1, message: format!("unknown template {id:?}") })
    };
    let edit_template = template(&header.edit_template)?;
    let paraphrase_template = template(&header.paraphrase_template)?;

    let mut records = Vec::with_capacity(header.count);
    let mut last_line = 1;
    for (line, raw) in lines {
        last_line = line;
        if raw.trim().is_empty() {
            continue;
        }
        let r: EditRecord = serde_json::from_str(raw).map_err(|e| Error::Parse { line, message: e.to_string() })?;
        records.push(r);
    }
    if records.len() != header.count {
        return Err(Error::Parse {
            line: last_line,
            message: format!("header declares {} records, found {}", header.count, records.len()),
        });
    }
    Ok(Dataset {
        kind: header.kind,
        edit_template,
        paraphrase_template,
        seed: header.seed,
        relation_bank: header.relation_bank,
        records,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{generate, DataConfig};

    fn sample() -> Dataset {
        generate(&DataConfig { n_facts: 5, ..Default::default() }).unwrap().distinct
    }

    fn to_text(ds: &Dataset) -> String {
        let mut buf = Vec::new();
        write_dataset(ds, &mut buf).unwrap();
        String::from_utf8(buf).unwrap()
    }

    #[test]
    fn round_trip() {
        let ds = sample();
        let text = to_text(&ds);
        assert_eq!(text.lines().count(), 6);
        assert_eq!(parse_dataset(&text).unwrap(), ds);
    }

    #[test]
    fn header_only_is_empty_dataset() {
        let mut ds = sample();
        ds.records.clear();
        let back = parse_dataset(&to_text(&ds)).unwrap();
        assert!(back.is_empty());
        assert_eq!(back.kind, ds.kind);
    }

    #[test]
    fn empty_file_demands_kind() {
        match parse_dataset("") {
            Err(Error::Parse { line: 1, message }) => assert!(message.contains("kind")),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn missing_field_is_named_with_line() {
        let text = to_text(&sample());
        let mut lines: Vec<String> = text.lines().map(str::to_string).collect();
        let mut v: serde_json::Value = serde_json::from_str(&lines[3]).unwrap();
        v.as_object_mut().unwrap().remove("old_object");
        lines[3] = v.to_string();
        match parse_dataset(&lines.join("\n")) {
            Err(Error::Parse { line: 4, message }) => assert!(message.contains("old_object"), "{message}"),
            other => panic!("unexpected {other:?}"),
        }
    }
}
