// SPDX-License-Identifier: MIT OR Apache-2.0

//! `keymerge`: train a toy base model, generate edit datasets, edit, evaluate
//! and sweep.
//!
//! Exit codes: 0 success, 2 configuration error, 3 numeric failure,
//! 4 base model below the recall gate, 1 anything else.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use keymerge::data::{generate, save_dataset, DatasetKind, EditRecord};
use keymerge::edit::{apply_edit_batch, finetune_baseline, EditRequest};
use keymerge::harness::{
    base_fact_recall, emit_report, evaluate_batch, read_report, recall_gate, run_akd_experiment, run_sweep,
    train_from_config, AkdTable, Experiment, ExperimentConfig, Manifest, ReportFormat, SweepMode, SweepPlan,
    SweepResult,
};
use keymerge::model::{load_checkpoint, save_checkpoint, ModelCheckpoint};
use keymerge::{Error, Result};

#[derive(Parser)]
#[command(name = "keymerge", version, about = "Batch knowledge editing experiments on a toy transformer")]
struct Cli {
    #[command(flatten)]
    common: Common,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// Experiment config (TOML); built-in defaults when omitted.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// For train-base and gen-data: overrides every seed. Elsewhere: the edit
    /// seed only, so the data still matches the checkpoint.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory, created if missing.
    #[arg(long, global = true, default_value = "out")]
    out: PathBuf,
}

#[derive(Clone, Copy, ValueEnum)]
enum Format {
    Jsonl,
    Csv,
}

impl From<Format> for ReportFormat {
    fn from(f: Format) -> Self {
        match f {
            Format::Jsonl => ReportFormat::Jsonl,
            Format::Csv => ReportFormat::Csv,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum Kind {
    Same,
    Distinct,
}

impl From<Kind> for DatasetKind {
    fn from(k: Kind) -> Self {
        match k {
            Kind::Same => DatasetKind::SameSubject,
            Kind::Distinct => DatasetKind::DistinctSubject,
        }
    }
}

#[derive(Args)]
struct BatchSel {
    #[arg(long, value_enum, default_value = "same")]
    kind: Kind,
    #[arg(long, default_value_t = 10)]
    batch_size: usize,
    /// Which batch of the dataset, counting from 0.
    #[arg(long, default_value_t = 0)]
    batch_index: usize,
}

#[derive(Subcommand)]
enum Command {
    /// Train the base model and check its fact recall.
    TrainBase,
    /// Write the paired datasets and the training corpus.
    GenData,
    /// Edit one batch and save the edited checkpoint.
    Edit {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long, default_value = "memit", value_parser = parse_mode)]
        mode: SweepMode,
        #[command(flatten)]
        batch: BatchSel,
    },
    /// Score an edited checkpoint on one batch against the base.
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        edited: PathBuf,
        #[command(flatten)]
        batch: BatchSel,
    },
    /// Batch-size sweep over modes and both dataset kinds.
    Sweep {
        #[arg(long)]
        checkpoint: PathBuf,
        /// Comma-separated: memit, memit-merge, ft.
        #[arg(long, value_delimiter = ',', value_parser = parse_mode)]
        mode: Vec<SweepMode>,
        #[arg(long, value_delimiter = ',')]
        batch_sizes: Vec<usize>,
        #[arg(long)]
        trials: Option<usize>,
        /// Edit a fresh copy of the base model per batch (default).
        #[arg(long, conflicts_with = "cumulative")]
        fresh: bool,
        /// Apply batches one after another to the same model (non-default).
        #[arg(long)]
        cumulative: bool,
        /// Cap on batches per cell; 0 means all.
        #[arg(long)]
        max_batches: Option<usize>,
        #[arg(long, value_enum, default_value = "jsonl")]
        format: Format,
    },
    /// Key distance against efficacy across templates.
    Akd {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        batch_size: Option<usize>,
        #[arg(long)]
        max_batches: Option<usize>,
        #[arg(long, value_enum, default_value = "jsonl")]
        format: Format,
    },
    /// Re-emit a sweep or AKD report in another format.
    Report {
        #[arg(long)]
        input: PathBuf,
        #[arg(long, value_enum, default_value = "csv")]
        format: Format,
    },
}

fn parse_mode(s: &str) -> std::result::Result<SweepMode, String> {
    s.parse().map_err(|e: Error| e.to_string())
}

fn exit_code(e: &Error) -> u8 {
    match e {
        Error::Config(_)
        | Error::Parse { .. }
        | Error::Capacity(_)
        | Error::Arity(_)
        | Error::Compatibility(_)
        | Error::UnknownToken(_)
        | Error::SequenceLength { .. } => 2,
        Error::Numeric(_) | Error::Singular(_) | Error::Training { .. } => 3,
        Error::TrainingShortfall { .. } => 4,
        _ => 1,
    }
}

fn load_config(common: &Common) -> Result<ExperimentConfig> {
    match &common.config {
        Some(p) => ExperimentConfig::load(p),
        None => Ok(ExperimentConfig::default()),
    }
}

fn write_json<T: serde::Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    std::fs::write(path, text)?;
    Ok(())
}

fn batch_records(exp: &Experiment, sel: &BatchSel) -> Result<Vec<EditRecord>> {
    let ds = exp.dataset(sel.kind.into());
    let start = sel.batch_index * sel.batch_size;
    let end = start + sel.batch_size;
    if sel.batch_size == 0 || end > ds.len() {
        return Err(Error::Config(format!(
            "batch {} of size {} does not fit a dataset of {}",
            sel.batch_index,
            sel.batch_size,
            ds.len()
        )));
    }
    Ok(ds.records[start..end].to_vec())
}

fn open_experiment(cfg: ExperimentConfig, checkpoint: &Path) -> Result<(Experiment, ModelCheckpoint)> {
    let base = load_checkpoint(checkpoint)?;
    Ok((Experiment::new(cfg, base.clone())?, base))
}

fn run(cli: Cli) -> Result<()> {
    let mut cfg = load_config(&cli.common)?;
    let out = &cli.common.out;
    std::fs::create_dir_all(out)?;
    let reseed_all = matches!(cli.command, Command::TrainBase | Command::GenData);
    if let Some(seed) = cli.common.seed {
        if reseed_all {
            cfg.reseed(seed);
        } else {
            cfg.edit.seed = seed;
        }
    }

    match cli.command {
        Command::TrainBase => {
            let data = generate(&cfg.data)?;
            let model = train_from_config(&cfg, &data)?;
            let recall = base_fact_recall(&model, &[&data.same, &data.distinct])?;
            save_checkpoint(&model, out.join("base.tlmc"))?;
            write_json(&out.join("recall.json"), &recall)?;
            Manifest::new(
                "train-base",
                &cfg,
                Some(model.content_hash()),
                vec!["base.tlmc".into(), "recall.json".into()],
            )
            .write(out)?;
            println!("recall {:.4} (primary {:.4}, secondary {:.4})", recall.recall, recall.primary, recall.secondary);
            recall_gate(&recall, cfg.recall_threshold)
        }
        Command::GenData => {
            let data = generate(&cfg.data)?;
            save_dataset(&data.same, out.join("same_subject.jsonl"))?;
            save_dataset(&data.distinct, out.join("distinct_subject.jsonl"))?;
            let mut corpus = data.corpus.join("\n");
            corpus.push('\n');
            std::fs::write(out.join("corpus.txt"), corpus)?;
            let files = ["same_subject.jsonl", "distinct_subject.jsonl", "corpus.txt"];
            Manifest::new("gen-data", &cfg, None, files.iter().map(|s| s.to_string()).collect()).write(out)?;
            println!("{} records per dataset, {} corpus sentences", data.same.len(), data.corpus.len());
            Ok(())
        }
        Command::Edit { checkpoint, mode, batch } => {
            let (exp, base) = open_experiment(cfg, &checkpoint)?;
            let records = batch_records(&exp, &batch)?;
            let template = exp.dataset(batch.kind.into()).edit_template.clone();
            let requests = records
                .iter()
                .map(|r| EditRequest::from_record(&base.tokenizer, r, &template))
                .collect::<Result<Vec<_>>>()?;
            let (edited, log_name) = match mode.edit_mode() {
                None => {
                    let o = finetune_baseline(&base, &requests, &exp.config.finetune)?;
                    write_json(&out.join("finetune_losses.json"), &o.losses)?;
                    (o.model, "finetune_losses.json")
                }
                Some(em) => {
                    let o = apply_edit_batch(&base, &requests, em, &exp.config.edit, &exp.covariances)?;
                    write_json(&out.join("edit_log.json"), &o.logs)?;
                    (o.model, "edit_log.json")
                }
            };
            save_checkpoint(&edited, out.join("edited.tlmc"))?;
            Manifest::new(
                "edit",
                &exp.config,
                Some(edited.content_hash()),
                vec!["edited.tlmc".into(), log_name.into()],
            )
            .write(out)?;
            println!("edited {} records with {mode}", records.len());
            Ok(())
        }
        Command::Eval { checkpoint, edited, batch } => {
            let (exp, base) = open_experiment(cfg, &checkpoint)?;
            let after = load_checkpoint(&edited)?;
            let records = batch_records(&exp, &batch)?;
            let m = evaluate_batch(&base, &after, &records)?;
            write_json(&out.join("metrics.json"), &m)?;
            Manifest::new("eval", &exp.config, Some(after.content_hash()), vec!["metrics.json".into()]).write(out)?;
            println!("efficacy {:.3} paraphrase {:.3} specificity {:.3}", m.efficacy, m.paraphrase, m.specificity);
            Ok(())
        }
        Command::Sweep { checkpoint, mode, batch_sizes, trials, fresh: _, cumulative, max_batches, format } => {
            let (exp, base) = open_experiment(cfg, &checkpoint)?;
            let mut plan = SweepPlan::from_experiment(&exp);
            if !mode.is_empty() {
                plan.modes = mode;
            }
            if !batch_sizes.is_empty() {
                plan.batch_sizes = batch_sizes;
            }
            if let Some(t) = trials {
                plan.trials = t;
            }
            if cumulative {
                plan.fresh = false;
            }
            if let Some(m) = max_batches {
                plan.max_batches = m;
            }
            let result = run_sweep(&exp, &plan, exp.config.edit.seed)?;
            let format: ReportFormat = format.into();
            let name = format!("sweep.{}", format.extension());
            emit_report(&result, format, out.join(&name))?;
            Manifest::new("sweep", &exp.config, Some(base.content_hash()), vec![name]).write(out)?;
            for c in &result.cells {
                println!(
                    "{:<12} {:<16} b={:<3} efficacy {:.3} paraphrase {:.3} specificity {:.3}",
                    c.mode.as_str(),
                    c.kind.as_str(),
                    c.batch_size,
                    c.efficacy,
                    c.paraphrase,
                    c.specificity
                );
            }
            Ok(())
        }
        Command::Akd { checkpoint, batch_size, max_batches, format } => {
            let (exp, base) = open_experiment(cfg, &checkpoint)?;
            let a = &exp.config.akd;
            let table = run_akd_experiment(
                &exp,
                &a.templates,
                batch_size.unwrap_or(a.batch_size),
                max_batches.unwrap_or(a.max_batches),
                exp.config.edit.seed,
            )?;
            let format: ReportFormat = format.into();
            let name = format!("akd.{}", format.extension());
            emit_report(&table, format, out.join(&name))?;
            Manifest::new("akd", &exp.config, Some(base.content_hash()), vec![name]).write(out)?;
            for r in &table.rows {
                println!("{:<12} {:<16} akd {:>9.4} efficacy {:.3}", r.template, r.kind.as_str(), r.akd, r.efficacy);
            }
            match table.spearman {
                Some(s) => println!("spearman {s:.4}"),
                None => println!("spearman undefined (constant column)"),
            }
            Ok(())
        }
        Command::Report { input, format } => {
            let format: ReportFormat = format.into();
            let stem = input.file_stem().and_then(|s| s.to_str()).unwrap_or("report").to_string();
            let name = format!("{stem}.{}", format.extension());
            let target = out.join(&name);
            if target == input {
                return Err(Error::Config(format!("{} would overwrite its own input", input.display())));
            }
            // Try the sweep schema first, then the AKD one.
            match read_report::<SweepResult>(&input) {
                Ok(r) => emit_report(&r, format, &target)?,
                Err(sweep_err) => match read_report::<AkdTable>(&input) {
                    Ok(t) => emit_report(&t, format, &target)?,
                    Err(_) => return Err(sweep_err),
                },
            }
            println!("wrote {}", target.display());
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn exit_codes() {
        assert_eq!(exit_code(&Error::Config("x".into())), 2);
        assert_eq!(exit_code(&Error::Parse { line: 1, message: "x".into() }), 2);
        assert_eq!(exit_code(&Error::Singular("x".into())), 3);
        assert_eq!(exit_code(&Error::Numeric("x".into())), 3);
        assert_eq!(exit_code(&Error::TrainingShortfall { recall: 0.5, threshold: 0.95 }), 4);
        assert_eq!(exit_code(&Error::Io(std::io::Error::other("x"))), 1);
    }

    #[test]
    fn cli_definition_is_consistent() {
        use clap::CommandFactory;
        Cli::command().debug_assert();
    }
}
