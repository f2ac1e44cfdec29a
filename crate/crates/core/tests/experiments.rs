mod common;

use std::fs;
use std::path::Path;

use segstress::orchestrator::protocol::IdentitySegmenter;
use segstress::orchestrator::{
    prepare_dataset, run_experiment, ExperimentKind, ExperimentResult, Provenance, Runner,
    SegmenterKind, SplitName, CSV_HEADER,
};
use segstress::Error;

use common::{small_config, synth_dataset};

const ALL: [ExperimentKind; 4] = [
    ExperimentKind::CorruptionSweep,
    ExperimentKind::UnderOverSweep,
    ExperimentKind::Transfer,
    ExperimentKind::Bootstrap,
];

fn assert_perfect(r: &ExperimentResult) {
    assert!(!r.models.is_empty());
    for m in &r.models {
        assert!(!m.images.is_empty(), "{} has no test images", m.model);
        for img in &m.images {
            assert_eq!(img.metrics.values(), [1.0; 5], "{} {}", m.model, img.image);
        }
        assert_eq!(m.aggregate.values(), [1.0; 5]);
    }
}

#[test]
fn oracle_scores_perfectly_everywhere() {
    let dir = tempfile::tempdir().unwrap();
    let a = synth_dataset(dir.path(), "a", 10, 1);
    let b = synth_dataset(dir.path(), "b", 10, 2);
    for kind in ALL {
        let manifests: Vec<&Path> = if kind == ExperimentKind::Transfer { vec![&a, &b] } else { vec![&a] };
        let cfg = small_config(&manifests, SegmenterKind::Oracle);
        let r = run_experiment(kind, cfg, dir.path().join("out")).unwrap();
        assert_eq!(r.experiment, kind);
        assert_perfect(&r);
        match kind {
            ExperimentKind::Transfer => {
                assert_eq!(r.transfer.len(), 2 * 5);
                for row in &r.transfer {
                    assert_eq!(row.delta.delta, 0.0);
                }
            }
            ExperimentKind::Bootstrap => {
                assert_eq!(r.bootstrap.len(), 4);
                assert_eq!(r.converged_at, Some(1));
                assert!(r.bootstrap.iter().all(|row| row.test_dsc == 1.0));
                assert_eq!(r.bootstrap[1].target_dsc, 1.0);
                assert!(r.bootstrap[1].changed_pixels > 0);
            }
            _ => {}
        }
    }
}

#[test]
fn results_files_are_written() {
    let dir = tempfile::tempdir().unwrap();
    let a = synth_dataset(dir.path(), "a", 8, 3);
    let out = dir.path().join("out");
    let cfg = small_config(&[&a], SegmenterKind::Oracle);
    let r = run_experiment(ExperimentKind::Bootstrap, cfg, &out).unwrap();

    let mut rdr = csv::Reader::from_path(out.join("bootstrap.csv")).unwrap();
    assert_eq!(rdr.headers().unwrap().iter().collect::<Vec<_>>(), CSV_HEADER);
    let rows = rdr.records().count();
    assert_eq!(rows, r.models.iter().map(|m| m.images.len()).sum::<usize>());
    assert!(out.join("bootstrap_trajectory.csv").is_file());

    let summary: ExperimentResult =
        serde_json::from_str(&fs::read_to_string(out.join("bootstrap_summary.json")).unwrap()).unwrap();
    assert_eq!(summary, r);
}

#[test]
fn test_split_is_never_corrupted() {
    let dir = tempfile::tempdir().unwrap();
    let a = synth_dataset(dir.path(), "a", 10, 4);
    let b = synth_dataset(dir.path(), "b", 10, 5);
    for kind in ALL {
        let manifests: Vec<&Path> = if kind == ExperimentKind::Transfer { vec![&a, &b] } else { vec![&a] };
        let cfg = small_config(&manifests, SegmenterKind::Identity);
        let r = run_experiment(kind, cfg, dir.path().join("out")).unwrap();
        assert!(!r.provenance.is_empty());
        for tag in &r.provenance {
            if tag.split == SplitName::Test {
                assert_eq!(tag.role, "reference", "{tag:?}");
                assert_eq!(tag.provenance, Provenance::Pristine, "{tag:?}");
            } else {
                assert_eq!(tag.role, "target", "{tag:?}");
            }
        }
    }
}

#[test]
fn target_provenance_records_the_corruption() {
    let dir = tempfile::tempdir().unwrap();
    let a = synth_dataset(dir.path(), "a", 10, 6);
    let cfg = small_config(&[&a], SegmenterKind::Identity);
    let r = run_experiment(ExperimentKind::UnderOverSweep, cfg.clone(), dir.path().join("uo")).unwrap();
    let k9: Vec<_> = r
        .provenance
        .iter()
        .filter(|t| t.model == "uo_k9" && t.split == SplitName::Train)
        .collect();
    assert!(!k9.is_empty());
    for t in k9 {
        assert_eq!(t.provenance, Provenance::Corrupted { missing_fraction: 0.5, k_max: 9 });
    }

    let r = run_experiment(ExperimentKind::Bootstrap, cfg, dir.path().join("boot")).unwrap();
    for t in r.provenance.iter().filter(|t| t.split == SplitName::Train) {
        let expected = match t.model.as_str() {
            "boot_it00" => Provenance::Corrupted { missing_fraction: 0.95, k_max: 0 },
            m => Provenance::Bootstrap { iteration: m["boot_it".len()..].parse().unwrap() },
        };
        assert_eq!(t.provenance, expected, "{t:?}");
    }
}

#[test]
fn identity_bootstrap_is_flat() {
    let dir = tempfile::tempdir().unwrap();
    let a = synth_dataset(dir.path(), "a", 10, 7);
    let cfg = small_config(&[&a], SegmenterKind::Identity);
    let r = run_experiment(ExperimentKind::Bootstrap, cfg, dir.path().join("out")).unwrap();
    let first = r.bootstrap[0];
    for row in &r.bootstrap {
        assert_eq!(row.test_dsc, first.test_dsc);
        assert_eq!(row.target_dsc, first.target_dsc);
        assert_eq!(row.changed_pixels, 0);
    }
    assert_eq!(r.converged_at, Some(1));
}

#[test]
fn rerun_reuses_stored_results() {
    let dir = tempfile::tempdir().unwrap();
    let a = synth_dataset(dir.path(), "a", 8, 8);
    let out = dir.path().join("out");
    let cfg = small_config(&[&a], SegmenterKind::Builtin);
    let first = run_experiment(ExperimentKind::CorruptionSweep, cfg.clone(), &out).unwrap();

    let store = out.join("store");
    let entries: Vec<_> = fs::read_dir(&store).unwrap().map(|e| e.unwrap().path()).collect();
    assert_eq!(entries.len(), 3);
    let stamps: Vec<_> = entries
        .iter()
        .map(|e| fs::metadata(e.join("result.json")).unwrap().modified().unwrap())
        .collect();

    let second = run_experiment(ExperimentKind::CorruptionSweep, cfg.clone(), &out).unwrap();
    assert_eq!(first, second);
    for (e, t) in entries.iter().zip(&stamps) {
        assert_eq!(fs::metadata(e.join("result.json")).unwrap().modified().unwrap(), *t);
    }

    // one lost stage is recomputed to the same value
    fs::remove_file(entries[0].join("result.json")).unwrap();
    let third = run_experiment(ExperimentKind::CorruptionSweep, cfg.clone(), &out).unwrap();
    assert_eq!(first, third);

    // a different seed does not collide with the stored stages
    let mut other = cfg;
    other.seed += 1;
    run_experiment(ExperimentKind::CorruptionSweep, other, &out).unwrap();
    assert_eq!(fs::read_dir(&store).unwrap().count(), 6);
}

#[test]
fn builtin_runs_are_reproducible() {
    let dir = tempfile::tempdir().unwrap();
    let a = synth_dataset(dir.path(), "a", 8, 9);
    let cfg = small_config(&[&a], SegmenterKind::Builtin);
    run_experiment(ExperimentKind::UnderOverSweep, cfg.clone(), dir.path().join("x")).unwrap();
    run_experiment(ExperimentKind::UnderOverSweep, cfg, dir.path().join("y")).unwrap();
    let x = fs::read(dir.path().join("x/sweep_uo.csv")).unwrap();
    let y = fs::read(dir.path().join("y/sweep_uo.csv")).unwrap();
    assert_eq!(x, y);
}

#[test]
fn transfer_with_the_same_tissue_twice_has_zero_delta() {
    let dir = tempfile::tempdir().unwrap();
    let a = synth_dataset(dir.path(), "a", 10, 10);
    let cfg = small_config(&[&a, &a], SegmenterKind::Oracle);
    let r = run_experiment(ExperimentKind::Transfer, cfg, dir.path().join("out")).unwrap();
    for row in &r.transfer {
        assert_eq!(row.delta.delta, 0.0);
        assert_eq!(row.delta.delta, row.delta.m_single_tissue - row.delta.m_multi_tissue);
    }
}

#[test]
fn transfer_needs_two_datasets() {
    let dir = tempfile::tempdir().unwrap();
    let a = synth_dataset(dir.path(), "a", 8, 11);
    let cfg = small_config(&[&a], SegmenterKind::Oracle);
    let err = run_experiment(ExperimentKind::Transfer, cfg, dir.path().join("out")).unwrap_err();
    assert!(matches!(err, Error::InvalidConfig(_)), "{err}");
}

#[test]
fn transfer_single_model_never_sees_tissue_b() {
    let dir = tempfile::tempdir().unwrap();
    let a = synth_dataset(dir.path(), "a", 10, 12);
    let b = synth_dataset(dir.path(), "b", 10, 13);
    let cfg = small_config(&[&a, &b], SegmenterKind::Identity);
    let r = run_experiment(ExperimentKind::Transfer, cfg, dir.path().join("out")).unwrap();
    for t in &r.provenance {
        if t.model.starts_with("single_") && t.role == "target" {
            assert_eq!(t.dataset, "a", "{t:?}");
        }
        if t.role == "reference" {
            assert_eq!(t.dataset, "b", "{t:?}");
        }
    }
    for m in &r.models {
        for img in &m.images {
            assert_eq!(img.dataset, "b");
        }
    }
}

#[test]
fn with_segmenter_accepts_custom_implementations() {
    let dir = tempfile::tempdir().unwrap();
    let a = synth_dataset(dir.path(), "a", 8, 14);
    let cfg = small_config(&[&a], SegmenterKind::Builtin);
    let prepared = vec![prepare_dataset(&cfg.datasets[0], &cfg).unwrap()];
    let runner = Runner::with_segmenter(cfg, dir.path().join("out"), prepared, Box::new(IdentitySegmenter)).unwrap();
    let r = runner.run(ExperimentKind::CorruptionSweep).unwrap();
    assert_eq!(r.segmenter, "identity");
    // nothing memorized for test patches, so every prediction is empty
    for m in &r.models {
        assert_eq!(m.aggregate.counts.tp + m.aggregate.counts.fp, 0);
    }
}

#[test]
fn forced_direction_sets_which_error_appears() {
    use segstress::corruption::{resegment_cells_with, ResegmentPolicy};
    use segstress::metrics::evaluate;

    let dir = tempfile::tempdir().unwrap();
    let a = synth_dataset(dir.path(), "a", 4, 15);
    let ds = segstress::ingest::load_dataset(&a).unwrap();
    for acq in &ds.acquisitions {
        let gt = &acq.gt_mask;
        let eroded = resegment_cells_with(gt, 9, 1, ResegmentPolicy::ForceErode).unwrap();
        let dilated = resegment_cells_with(gt, 9, 1, ResegmentPolicy::ForceDilate).unwrap();
        let e = evaluate(&eroded.binarize(), &gt.binarize()).unwrap();
        let d = evaluate(&dilated.binarize(), &gt.binarize()).unwrap();
        assert_eq!(e.precision, 1.0);
        assert!(e.recall < 1.0);
        assert_eq!(d.recall, 1.0);
        assert!(d.precision < 1.0);
    }
}
