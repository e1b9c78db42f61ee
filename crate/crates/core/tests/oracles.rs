// SPDX-License-Identifier: MIT OR Apache-2.0

use keymerge::data::{DataConfig, DatasetKind};
use keymerge::edit::{apply_edit_batch, closed_form_update, EditMode, EditRequest};
use keymerge::harness::{
    emit_report, read_report, run_sweep, ArchConfig, Experiment, ExperimentConfig, ReportFormat, SweepMode, SweepPlan,
    SweepResult,
};
use keymerge::linalg::Cholesky;
use keymerge::model::TrainHyper;
use nalgebra::DMatrix;
use ndarray::Array2;
use proptest::prelude::*;

fn to_na(a: &Array2<f64>) -> DMatrix<f64> {
    DMatrix::from_fn(a.nrows(), a.ncols(), |i, j| a[[i, j]])
}

fn matrix(r: usize, c: usize) -> impl Strategy<Value = Array2<f64>> {
    prop::collection::vec(-1.0..1.0f64, r * c).prop_map(move |v| Array2::from_shape_vec((r, c), v).unwrap())
}

fn instance() -> impl Strategy<Value = (Array2<f64>, Array2<f64>, Array2<f64>, Array2<f64>)> {
    (1usize..8, 1usize..12, 1usize..6).prop_flat_map(|(dm, dk, n)| {
        (matrix(dm, dk), matrix(dk, n), matrix(dm, n), matrix(dk, dk + 2)).prop_map(|(w0, k, v, g)| {
            // Full-rank SPD covariance: G G^T + I.
            let c = g.dot(&g.t()) + Array2::<f64>::eye(g.nrows());
            (w0, k, v, c)
        })
    })
}

proptest! {
    #[test]
    fn closed_form_matches_lu_normal_equations((w0, k, v, c) in instance()) {
        let w = closed_form_update(&w0, &k, &v, &c, 1e-10).unwrap();
        let (cn, kn) = (to_na(&c), to_na(&k));
        let a = &cn + &kn * kn.transpose();
        let rhs = to_na(&v) * kn.transpose() + to_na(&w0) * &cn;
        let oracle = a.transpose().lu().solve(&rhs.transpose()).unwrap().transpose();
        let err = (to_na(&w) - &oracle).norm() / oracle.norm().max(1e-300);
        prop_assert!(err <= 1e-9, "relative error {err}");
    }

    #[test]
    fn cholesky_solve_matches_nalgebra(g in matrix(6, 8), b in matrix(6, 3)) {
        let a = g.dot(&g.t()) + Array2::<f64>::eye(6);
        let ours = Cholesky::factor(a.view()).unwrap().solve(b.view());
        let theirs = to_na(&a).cholesky().unwrap().solve(&to_na(&b));
        prop_assert!((to_na(&ours) - &theirs).norm() <= 1e-10 * theirs.norm().max(1.0));
    }
}

fn tiny() -> ExperimentConfig {
    let mut cfg = ExperimentConfig {
        recall_threshold: 0.0,
        data: DataConfig { n_relations: 6, n_facts: 6, n_filler: 8, ..Default::default() },
        model: ArchConfig { n_layers: 2, d_model: 32, d_mlp: 64, n_heads: 1, ..Default::default() },
        train: TrainHyper { steps: 80, warmup_steps: 5, lr: 5e-3, ..ExperimentConfig::default().train },
        ..Default::default()
    };
    cfg.edit.value.max_steps = 10;
    cfg.edit.covariance.prefixed_copies = 1;
    cfg.edit.covariance.prefix_pool = 4;
    cfg
}

#[test]
fn tiny_pipeline_properties() {
    let (exp, _) = Experiment::train(tiny()).unwrap();

    // Distinct subjects: merge mode writes exactly what plain mode writes.
    let ds = &exp.data.distinct;
    let reqs: Vec<EditRequest> = ds.records[..4]
        .iter()
        .map(|r| EditRequest::from_record(&exp.base.tokenizer, r, &ds.edit_template).unwrap())
        .collect();
    let a = apply_edit_batch(&exp.base, &reqs, EditMode::Memit, &exp.config.edit, &exp.covariances).unwrap();
    let b = apply_edit_batch(&exp.base, &reqs, EditMode::MemitMerge, &exp.config.edit, &exp.covariances).unwrap();
    assert!(a.model.params_bit_identical(&b.model));

    // Same subject: merge mode uses one column per subject.
    let ds = &exp.data.same;
    let reqs: Vec<EditRequest> = ds.records[..4]
        .iter()
        .map(|r| EditRequest::from_record(&exp.base.tokenizer, r, &ds.edit_template).unwrap())
        .collect();
    let m = apply_edit_batch(&exp.base, &reqs, EditMode::MemitMerge, &exp.config.edit, &exp.covariances).unwrap();
    let subjects: std::collections::BTreeSet<&str> = reqs.iter().map(|r| r.subject()).collect();
    assert_eq!(m.plan.n_columns(), subjects.len());

    // Sweep reports survive a file round trip in both formats.
    let plan = SweepPlan {
        modes: vec![SweepMode::Memit, SweepMode::MemitMerge],
        kinds: vec![DatasetKind::SameSubject, DatasetKind::DistinctSubject],
        batch_sizes: vec![2],
        trials: 1,
        fresh: true,
        max_batches: 1,
    };
    let result = run_sweep(&exp, &plan, 3).unwrap();
    let dir = tempfile::tempdir().unwrap();
    for format in [ReportFormat::Jsonl, ReportFormat::Csv] {
        let path = dir.path().join(format!("sweep.{}", format.extension()));
        emit_report(&result, format, &path).unwrap();
        let back: SweepResult = read_report(&path).unwrap();
        assert_eq!(back, result);
    }
}
