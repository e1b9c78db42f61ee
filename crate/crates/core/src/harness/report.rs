// SPDX-License-Identifier: MIT OR Apache-2.0

//! Report files: JSONL and CSV writers with matching parsers, plus the run
//! manifest.
//!
//! # Sweep CSV (`keymerge.sweep.v1`)
//!
//! One row per edited batch, columns in this order:
//!
//! `schema, seed, config_hash, checkpoint_hash, fresh, trials, max_batches,
//! mode, kind, batch_size, trial, batch, edit_seed, records, efficacy,
//! efficacy_decode, efficacy_prob, paraphrase, paraphrase_decode,
//! paraphrase_prob, specificity, akd, collision_fraction`
//!
//! `records` is the `;`-joined dataset indices of the batch; `akd` is empty
//! for single-edit batches. Cell averages are recomputed from the rows.
//!
//! # Sweep JSONL
//!
//! One cell per line: the schema tag, seed, both hashes, the plan and the
//! cell with its batches.
//!
//! # AKD CSV (`keymerge.akd.v1`)
//!
//! `schema, seed, config_hash, checkpoint_hash, batch_size, spearman,
//! template, kind, n_batches, akd, efficacy`, one row per table row;
//! `spearman` is empty when undefined.
//!
//! Floats use Rust's shortest round-trip formatting, so parsing a report
//! reproduces the exact values.

use std::io::Write;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::akd::{AkdRow, AkdTable};
use super::config::ExperimentConfig;
use super::sweep::{BatchResult, SweepCell, SweepMode, SweepPlan, SweepResult};
use crate::data::DatasetKind;
use crate::error::{Error, Result};

pub const SWEEP_SCHEMA: &str = "keymerge.sweep.v1";
pub const AKD_SCHEMA: &str = "keymerge.akd.v1";

pub const SWEEP_CSV_HEADER: [&str; 23] = [
    "schema",
    "seed",
    "config_hash",
    "checkpoint_hash",
    "fresh",
    "trials",
    "max_batches",
    "mode",
    "kind",
    "batch_size",
    "trial",
    "batch",
    "edit_seed",
    "records",
    "efficacy",
    "efficacy_decode",
    "efficacy_prob",
    "paraphrase",
    "paraphrase_decode",
    "paraphrase_prob",
    "specificity",
    "akd",
    "collision_fraction",
];

pub const AKD_CSV_HEADER: [&str; 11] = [
    "schema",
    "seed",
    "config_hash",
    "checkpoint_hash",
    "batch_size",
    "spearman",
    "template",
    "kind",
    "n_batches",
    "akd",
    "efficacy",
];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ReportFormat {
    Jsonl,
    Csv,
}

impl ReportFormat {
    pub fn extension(self) -> &'static str {
        match self {
            ReportFormat::Jsonl => "jsonl",
            ReportFormat::Csv => "csv",
        }
    }
}

impl FromStr for ReportFormat {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "jsonl" => Ok(ReportFormat::Jsonl),
            "csv" => Ok(ReportFormat::Csv),
            _ => Err(Error::Config(format!("unknown report format {s:?} (expected jsonl or csv)"))),
        }
    }
}

/// Anything that can be written as a report and read back.
pub trait Report: Sized {
    fn write_jsonl<W: Write>(&self, w: W) -> Result<()>;
    fn write_csv<W: Write>(&self, w: W) -> Result<()>;
    fn parse_jsonl(text: &str) -> Result<Self>;
    fn parse_csv(text: &str) -> Result<Self>;

    fn write<W: Write>(&self, format: ReportFormat, w: W) -> Result<()> {
        match format {
            ReportFormat::Jsonl => self.write_jsonl(w),
            ReportFormat::Csv => self.write_csv(w),
        }
    }

    fn parse(format: ReportFormat, text: &str) -> Result<Self> {
        match format {
            ReportFormat::Jsonl => Self::parse_jsonl(text),
            ReportFormat::Csv => Self::parse_csv(text),
        }
    }

    fn to_string(&self, format: ReportFormat) -> String {
        let mut buf = Vec::new();
        self.write(format, &mut buf).expect("writing to memory");
        String::from_utf8(buf).expect("reports are UTF-8")
    }
}

/// Writes `result` to `path` in `format`.
pub fn emit_report<R: Report>(result: &R, format: ReportFormat, path: impl AsRef<Path>) -> Result<()> {
    let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
    result.write(format, &mut f)?;
    f.flush()?;
    Ok(())
}

/// Reads a report, taking the format from the file extension.
pub fn read_report<R: Report>(path: impl AsRef<Path>) -> Result<R> {
    let path = path.as_ref();
    let format: ReportFormat = path.extension().and_then(|e| e.to_str()).unwrap_or_default().parse()?;
    R::parse(format, &std::fs::read_to_string(path)?)
}

fn float(x: f64) -> String {
    format!("{x:?}")
}

fn opt_float(x: Option<f64>) -> String {
    x.map(float).unwrap_or_default()
}

fn parse_err(line: usize, message: impl std::fmt::Display) -> Error {
    Error::Parse { line, message: message.to_string() }
}

fn non_empty_lines(text: &str) -> impl Iterator<Item = (usize, &str)> {
    text.lines().enumerate().map(|(i, l)| (i + 1, l)).filter(|(_, l)| !l.trim().is_empty())
}

fn csv_error(e: csv::Error) -> Error {
    match e.position() {
        Some(p) => parse_err(p.line() as usize, &e),
        None => Error::Io(std::io::Error::other(e.to_string())),
    }
}

/// Field accessor over one CSV record with line-numbered errors.
struct Row<'a> {
    rec: &'a csv::StringRecord,
    line: usize,
}

impl Row<'_> {
    fn str(&self, i: usize) -> Result<&str> {
        self.rec.get(i).ok_or_else(|| parse_err(self.line, format!("missing column {i}")))
    }

    fn parse<T: FromStr>(&self, i: usize) -> Result<T>
    where
        T::Err: std::fmt::Display,
    {
        let s = self.str(i)?;
        s.parse().map_err(|e| parse_err(self.line, format!("column {i} ({s:?}): {e}")))
    }

    fn opt_f64(&self, i: usize) -> Result<Option<f64>> {
        if self.str(i)?.is_empty() {
            Ok(None)
        } else {
            self.parse(i).map(Some)
        }
    }

    fn kind(&self, i: usize) -> Result<DatasetKind> {
        match self.str(i)? {
            "same_subject" => Ok(DatasetKind::SameSubject),
            "distinct_subject" => Ok(DatasetKind::DistinctSubject),
            other => Err(parse_err(self.line, format!("unknown dataset kind {other:?}"))),
        }
    }
}

fn read_csv(text: &str, header: &[&str]) -> Result<Vec<(usize, csv::StringRecord)>> {
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).from_reader(text.as_bytes());
    let got = rdr.headers().map_err(csv_error)?.clone();
    if got.iter().ne(header.iter().copied()) {
        return Err(parse_err(1, format!("unexpected header {:?}", got.iter().collect::<Vec<_>>())));
    }
    rdr.records()
        .map(|r| {
            let r = r.map_err(csv_error)?;
            let line = r.position().map_or(0, |p| p.line() as usize);
            Ok((line, r))
        })
        .collect()
}

#[derive(Serialize, Deserialize)]
struct SweepLine {
    schema: String,
    seed: u64,
    config_hash: String,
    checkpoint_hash: String,
    plan: SweepPlan,
    cell: SweepCell,
}

impl Report for SweepResult {
    fn write_jsonl<W: Write>(&self, mut w: W) -> Result<()> {
        for cell in &self.cells {
            let line = SweepLine {
                schema: SWEEP_SCHEMA.into(),
                seed: self.seed,
                config_hash: self.config_hash.clone(),
                checkpoint_hash: self.checkpoint_hash.clone(),
                plan: self.plan.clone(),
                cell: cell.clone(),
            };
            serde_json::to_writer(&mut w, &line)?;
            w.write_all(b"\n")?;
        }
        Ok(())
    }

    fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut out = csv::Writer::from_writer(w);
        out.write_record(SWEEP_CSV_HEADER).map_err(csv_error)?;
        for c in &self.cells {
            for b in &c.batches {
                let records: Vec<String> = b.records.iter().map(usize::to_string).collect();
                out.write_record([
                    SWEEP_SCHEMA.to_string(),
                    self.seed.to_string(),
                    self.config_hash.clone(),
                    self.checkpoint_hash.clone(),
                    self.plan.fresh.to_string(),
                    self.plan.trials.to_string(),
                    self.plan.max_batches.to_string(),
                    c.mode.as_str().to_string(),
                    c.kind.as_str().to_string(),
                    c.batch_size.to_string(),
                    b.trial.to_string(),
                    b.index.to_string(),
                    b.edit_seed.to_string(),
                    records.join(";"),
                    float(b.efficacy),
                    float(b.efficacy_decode),
                    float(b.efficacy_prob),
                    float(b.paraphrase),
                    float(b.paraphrase_decode),
                    float(b.paraphrase_prob),
                    float(b.specificity),
                    opt_float(b.akd),
                    float(b.collision_fraction),
                ])
                .map_err(csv_error)?;
            }
        }
        out.flush()?;
        Ok(())
    }

    fn parse_jsonl(text: &str) -> Result<Self> {
        let mut head: Option<(u64, String, String, SweepPlan)> = None;
        let mut cells = Vec::new();
        for (n, line) in non_empty_lines(text) {
            let l: SweepLine = serde_json::from_str(line).map_err(|e| parse_err(n, e))?;
            if l.schema != SWEEP_SCHEMA {
                return Err(parse_err(n, format!("schema {:?} is not {SWEEP_SCHEMA}", l.schema)));
            }
            let this = (l.seed, l.config_hash, l.checkpoint_hash, l.plan);
            match &head {
                None => head = Some(this),
                Some(h) if *h != this => return Err(parse_err(n, "provenance differs from the first line")),
                Some(_) => {}
            }
            cells.push(l.cell);
        }
        let (seed, config_hash, checkpoint_hash, plan) = head.ok_or_else(|| parse_err(0, "empty report"))?;
        Ok(SweepResult { seed, config_hash, checkpoint_hash, plan, cells })
    }

    fn parse_csv(text: &str) -> Result<Self> {
        let rows = read_csv(text, &SWEEP_CSV_HEADER)?;
        let mut head: Option<(u64, String, String, bool, usize, usize)> = None;
        // (mode, kind, b) in file order with their batches
        let mut groups: Vec<((SweepMode, DatasetKind, usize), Vec<BatchResult>)> = Vec::new();
        for (line, rec) in &rows {
            let r = Row { rec, line: *line };
            if r.str(0)? != SWEEP_SCHEMA {
                return Err(parse_err(*line, format!("schema {:?} is not {SWEEP_SCHEMA}", r.str(0)?)));
            }
            let this =
                (r.parse(1)?, r.str(2)?.to_string(), r.str(3)?.to_string(), r.parse(4)?, r.parse(5)?, r.parse(6)?);
            match &head {
                None => head = Some(this),
                Some(h) if *h != this => return Err(parse_err(*line, "provenance differs from the first row")),
                Some(_) => {}
            }
            let key = (r.str(7)?.parse()?, r.kind(8)?, r.parse(9)?);
            let records = if r.str(13)?.is_empty() {
                Vec::new()
            } else {
                r.str(13)?
                    .split(';')
                    .map(|s| s.parse().map_err(|e| parse_err(*line, format!("records: {e}"))))
                    .collect::<Result<Vec<usize>>>()?
            };
            let batch = BatchResult {
                trial: r.parse(10)?,
                index: r.parse(11)?,
                edit_seed: r.parse(12)?,
                records,
                efficacy: r.parse(14)?,
                efficacy_decode: r.parse(15)?,
                efficacy_prob: r.parse(16)?,
                paraphrase: r.parse(17)?,
                paraphrase_decode: r.parse(18)?,
                paraphrase_prob: r.parse(19)?,
                specificity: r.parse(20)?,
                akd: r.opt_f64(21)?,
                collision_fraction: r.parse(22)?,
            };
            match groups.last_mut() {
                Some((k, v)) if *k == key => v.push(batch),
                _ => groups.push((key, vec![batch])),
            }
        }
        let (seed, config_hash, checkpoint_hash, fresh, trials, max_batches) =
            head.ok_or_else(|| parse_err(1, "report has no rows"))?;
        let mut plan =
            SweepPlan { modes: Vec::new(), kinds: Vec::new(), batch_sizes: Vec::new(), trials, fresh, max_batches };
        for ((m, k, b), _) in &groups {
            plan.modes.push(*m);
            plan.kinds.push(*k);
            plan.batch_sizes.push(*b);
        }
        plan.batch_sizes.sort_unstable();
        plan.batch_sizes.dedup();
        plan.modes.sort_unstable();
        plan.modes.dedup();
        plan.kinds.sort_unstable();
        plan.kinds.dedup();
        let cells =
            groups.into_iter().map(|((m, k, b), batches)| SweepCell::from_batches(m, k, b, &plan, batches)).collect();
        Ok(SweepResult { seed, config_hash, checkpoint_hash, plan, cells })
    }
}

#[derive(Serialize, Deserialize)]
struct AkdLine {
    schema: String,
    seed: u64,
    config_hash: String,
    checkpoint_hash: String,
    batch_size: usize,
    spearman: Option<f64>,
    row: AkdRow,
}

impl Report for AkdTable {
    fn write_jsonl<W: Write>(&self, mut w: W) -> Result<()> {
        for row in &self.rows {
            let line = AkdLine {
                schema: AKD_SCHEMA.into(),
                seed: self.seed,
                config_hash: self.config_hash.clone(),
                checkpoint_hash: self.checkpoint_hash.clone(),
                batch_size: self.batch_size,
                spearman: self.spearman,
                row: row.clone(),
            };
            serde_json::to_writer(&mut w, &line)?;
            w.write_all(b"\n")?;
        }
        Ok(())
    }

    fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut out = csv::Writer::from_writer(w);
        out.write_record(AKD_CSV_HEADER).map_err(csv_error)?;
        for row in &self.rows {
            out.write_record([
                AKD_SCHEMA.to_string(),
                self.seed.to_string(),
                self.config_hash.clone(),
                self.checkpoint_hash.clone(),
                self.batch_size.to_string(),
                opt_float(self.spearman),
                row.template.clone(),
                row.kind.as_str().to_string(),
                row.n_batches.to_string(),
                float(row.akd),
                float(row.efficacy),
            ])
            .map_err(csv_error)?;
        }
        out.flush()?;
        Ok(())
    }

    fn parse_jsonl(text: &str) -> Result<Self> {
        let mut head = None;
        let mut rows = Vec::new();
        for (n, line) in non_empty_lines(text) {
            let l: AkdLine = serde_json::from_str(line).map_err(|e| parse_err(n, e))?;
            if l.schema != AKD_SCHEMA {
                return Err(parse_err(n, format!("schema {:?} is not {AKD_SCHEMA}", l.schema)));
            }
            let this = (l.seed, l.config_hash, l.checkpoint_hash, l.batch_size, l.spearman.map(f64::to_bits));
            match &head {
                None => head = Some(this),
                Some(h) if *h != this => return Err(parse_err(n, "provenance differs from the first line")),
                Some(_) => {}
            }
            rows.push(l.row);
        }
        let (seed, config_hash, checkpoint_hash, batch_size, sp) = head.ok_or_else(|| parse_err(0, "empty report"))?;
        Ok(AkdTable { seed, config_hash, checkpoint_hash, batch_size, rows, spearman: sp.map(f64::from_bits) })
    }

    fn parse_csv(text: &str) -> Result<Self> {
        let mut head = None;
        let mut rows = Vec::new();
        for (line, rec) in &read_csv(text, &AKD_CSV_HEADER)? {
            let r = Row { rec, line: *line };
            if r.str(0)? != AKD_SCHEMA {
                return Err(parse_err(*line, format!("schema {:?} is not {AKD_SCHEMA}", r.str(0)?)));
            }
            let this: (u64, String, String, usize, Option<u64>) = (
                r.parse(1)?,
                r.str(2)?.to_string(),
                r.str(3)?.to_string(),
                r.parse(4)?,
                r.opt_f64(5)?.map(f64::to_bits),
            );
            match &head {
                None => head = Some(this),
                Some(h) if *h != this => return Err(parse_err(*line, "provenance differs from the first row")),
                Some(_) => {}
            }
            rows.push(AkdRow {
                template: r.str(6)?.to_string(),
                kind: r.kind(7)?,
                n_batches: r.parse(8)?,
                akd: r.parse(9)?,
                efficacy: r.parse(10)?,
            });
        }
        let (seed, config_hash, checkpoint_hash, batch_size, sp) =
            head.ok_or_else(|| parse_err(1, "report has no rows"))?;
        Ok(AkdTable { seed, config_hash, checkpoint_hash, batch_size, rows, spearman: sp.map(f64::from_bits) })
    }
}

/// Written next to every run's outputs. Holds no timestamps, so reruns
/// produce identical bytes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub tool_version: String,
    pub command: String,
    pub config: ExperimentConfig,
    pub config_hash: String,
    pub seeds: Seeds,
    pub checkpoint_hash: Option<String>,
    /// Output file names relative to the manifest.
    pub outputs: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Seeds {
    pub data: u64,
    pub model_init: u64,
    pub train: u64,
    pub edit: u64,
}

impl Manifest {
    pub fn new(
        command: &str,
        config: &ExperimentConfig,
        checkpoint_hash: Option<String>,
        outputs: Vec<String>,
    ) -> Self {
        Self {
            tool_version: env!("CARGO_PKG_VERSION").into(),
            command: command.into(),
            config: config.clone(),
            config_hash: config.hash(),
            seeds: Seeds {
                data: config.data.seed,
                model_init: config.model.rng_seed,
                train: config.train.seed,
                edit: config.edit.seed,
            },
            checkpoint_hash,
            outputs,
        }
    }

    pub fn write(&self, dir: impl AsRef<Path>) -> Result<()> {
        let mut text = serde_json::to_string_pretty(self)?;
        text.push('\n');
        std::fs::write(dir.as_ref().join("manifest.json"), text)?;
        Ok(())
    }

    pub fn read(path: impl AsRef<Path>) -> Result<Self> {
        let f = std::io::BufReader::new(std::fs::File::open(path)?);
        Ok(serde_json::from_reader(f)?)
    }
}
