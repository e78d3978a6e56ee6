use super::*;
use crate::pruning::expected_sparsity;

const TEXT: &[u8] = b"the quick brown fox jumps over the lazy dog while the cat sleeps by the fire. \
a stitch in time saves nine, and many hands make light work of a heavy load. ";

fn tiny_spec(methods: Vec<Method>, levels: Vec<f64>, seeds: Vec<u64>) -> SweepSpec {
    let levels = levels.into_iter().map(|l| SparsityLevel::new(l).unwrap()).collect();
    let mut spec = SweepSpec::new(methods, LevelGrid::Explicit(levels), seeds, "eval".into(), "calib".into());
    spec.config = ModelConfig {
        d_model: 8,
        n_layers: 1,
        n_heads: 2,
        ctx_len: 16,
        ff_mult: 2,
        ..ModelConfig::default()
    };
    spec.train = TrainHyper {
        steps: 20,
        batch: 4,
        lr: 1e-2,
    };
    spec.calib = CalibParams {
        samples: 4,
        movement_batches: 2,
        batch_windows: 2,
    };
    spec
}

fn corpora() -> Corpora {
    let text = TEXT.repeat(4);
    Corpora {
        train: text.clone(),
        calib: text,
        eval: TEXT.to_vec(),
    }
}

#[test]
fn level_zero_rows_match_base_perplexity() {
    let spec = tiny_spec(Method::ALL.to_vec(), vec![0.0], vec![3, 4]);
    let c = corpora();
    let report = run_sweep_with(&spec, &c).unwrap();
    assert_eq!(report.rows.len(), 10);
    for seed in [3, 4] {
        let base = base_checkpoint(&spec, seed, &c.train).unwrap();
        let ppl = perplexity(&base, &c.eval).unwrap();
        for m in Method::ALL {
            let row = report.row(m, 0.0, seed).unwrap();
            assert_eq!(row.perplexity.to_bits(), ppl.to_bits(), "{m} seed {seed}");
            assert_eq!(row.achieved_sparsity, 0.0);
        }
    }
}

#[test]
fn sweep_is_deterministic_and_sorted() {
    let spec = tiny_spec(vec![Method::Mama, Method::Magnitude], vec![0.5, 0.0], vec![9, 2]);
    let c = corpora();
    let a = run_sweep_with(&spec, &c).unwrap();
    let b = run_sweep_with(&spec, &c).unwrap();
    assert_eq!(a.to_csv().unwrap(), b.to_csv().unwrap());
    let keys: Vec<_> = a.rows.iter().map(|r| (r.method, r.level, r.seed)).collect();
    assert_eq!(
        keys,
        vec![
            (Method::Mama, 0.0, 2),
            (Method::Mama, 0.0, 9),
            (Method::Mama, 0.5, 2),
            (Method::Mama, 0.5, 9),
            (Method::Magnitude, 0.0, 2),
            (Method::Magnitude, 0.0, 9),
            (Method::Magnitude, 0.5, 2),
            (Method::Magnitude, 0.5, 9),
        ]
    );
}

#[test]
fn achieved_sparsity_matches_quota() {
    let spec = tiny_spec(Method::ALL.to_vec(), vec![0.3, 0.7], vec![5]);
    let c = corpora();
    let report = run_sweep_with(&spec, &c).unwrap();
    let base = base_checkpoint(&spec, 5, &c.train).unwrap();
    for r in &report.rows {
        let level = SparsityLevel::new(r.level).unwrap();
        let want = expected_sparsity(&base, level, spec.granularity_for(r.method));
        assert!((r.achieved_sparsity - want).abs() < 1e-6, "{r:?} want {want}");
    }
}

#[test]
fn granularity_override_changes_masks() {
    let mut spec = tiny_spec(vec![Method::Magnitude], vec![0.5], vec![1]);
    let c = corpora();
    let per_layer = run_sweep_with(&spec, &c).unwrap();
    spec.granularity.insert(Method::Magnitude, Granularity::PerRow);
    let per_row = run_sweep_with(&spec, &c).unwrap();
    assert_ne!(per_layer.rows[0].perplexity, per_row.rows[0].perplexity);
}

#[test]
fn cell_errors_name_the_cell() {
    let spec = tiny_spec(vec![Method::Magnitude], vec![0.5], vec![1]);
    let mut c = corpora();
    c.eval = vec![b'x'];
    let msg = run_sweep_with(&spec, &c).unwrap_err().to_string();
    assert!(msg.contains("method magnitude level 0.5 seed 1"), "{msg}");
}

#[test]
fn checkpoint_cache_round_trips() {
    let dir = tempfile::tempdir().unwrap();
    let mut spec = tiny_spec(vec![Method::Magnitude], vec![0.0], vec![1]);
    spec.checkpoint_dir = Some(dir.path().join("cache"));
    let c = corpora();
    let first = base_checkpoint(&spec, 1, &c.train).unwrap();
    assert_eq!(std::fs::read_dir(dir.path().join("cache")).unwrap().count(), 1);
    let second = base_checkpoint(&spec, 1, &c.train).unwrap();
    assert_eq!(first, second);
    spec.train.steps += 1;
    base_checkpoint(&spec, 1, &c.train).unwrap();
    assert_eq!(std::fs::read_dir(dir.path().join("cache")).unwrap().count(), 2);
}

#[test]
fn spec_json_parsing() {
    let spec = SweepSpec::from_json(
        r#"{"methods": ["wanda", "mama"], "levels": "table1", "seeds": [7],
            "granularity": {"mama": "per-layer"},
            "eval_corpus": "e.txt", "calib_corpus": "c.txt", "train": {"steps": 10}}"#,
    )
    .unwrap();
    assert_eq!(spec.levels.levels().len(), 10);
    assert_eq!(spec.granularity_for(Method::Mama), Granularity::PerLayer);
    assert_eq!(spec.granularity_for(Method::Wanda), Granularity::PerRow);
    assert_eq!(spec.train.steps, 10);
    assert_eq!(spec.train.batch, 16);

    let explicit = SweepSpec::from_json(
        r#"{"methods": ["magnitude"], "levels": [0, 0.25], "seeds": [1], "eval_corpus": "e", "calib_corpus": "c"}"#,
    )
    .unwrap();
    assert_eq!(explicit.levels.levels()[1].value(), 0.25);
    assert_eq!(SweepSpec::from_json(r#"{"methods": ["magnitude"], "seeds": [1], "eval_corpus": "e", "calib_corpus": "c"}"#)
        .unwrap()
        .levels
        .levels()
        .len(), 8);

    for bad in [
        r#"{"methods": ["magnitude"], "levels": [1.0], "seeds": [1], "eval_corpus": "e", "calib_corpus": "c"}"#,
        r#"{"methods": [], "seeds": [1], "eval_corpus": "e", "calib_corpus": "c"}"#,
        r#"{"methods": ["magnitude"], "seeds": [], "eval_corpus": "e", "calib_corpus": "c"}"#,
        r#"{"methods": ["magnitude"], "levels": [], "seeds": [1], "eval_corpus": "e", "calib_corpus": "c"}"#,
        r#"{"methods": ["bogus"], "seeds": [1], "eval_corpus": "e", "calib_corpus": "c"}"#,
        r#"{"methods": ["magnitude", "magnitude"], "seeds": [1], "eval_corpus": "e", "calib_corpus": "c"}"#,
        r#"{"methods": ["magnitude"], "seeds": [1], "eval_corpus": "e", "calib_corpus": "c", "extra": 1}"#,
    ] {
        assert!(SweepSpec::from_json(bad).is_err(), "{bad}");
    }
}

#[test]
fn spec_paths_resolve_against_file() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("spec.json");
    std::fs::write(
        &path,
        r#"{"methods": ["magnitude"], "seeds": [1], "eval_corpus": "e.txt", "calib_corpus": "/abs/c.txt"}"#,
    )
    .unwrap();
    let spec = SweepSpec::load(&path).unwrap();
    assert_eq!(spec.eval_corpus, dir.path().join("e.txt"));
    assert_eq!(spec.calib_corpus, PathBuf::from("/abs/c.txt"));
}

#[test]
fn table1_fixture_values() {
    let t = load_paper_fixture("table1").unwrap();
    assert_eq!(t.methods, vec![Method::Magnitude, Method::NegMagnitude]);
    assert_eq!(t.rows.len(), 20);
    assert_eq!(t.row(Method::Magnitude, 0.3, 0).unwrap().perplexity, 6.669);
    assert_eq!(t.row(Method::NegMagnitude, 0.3, 0).unwrap().perplexity, 335747.406);
    assert_eq!(t.row(Method::Magnitude, 0.0, 0).unwrap().perplexity, 5.677);
    assert_eq!(t.row(Method::NegMagnitude, 0.0, 0).unwrap().perplexity, 5.677);
    assert_eq!(t.row(Method::NegMagnitude, 0.1, 0).unwrap().perplexity, 104948.891);
}

#[test]
fn table2_fixture_values() {
    let t = load_paper_fixture("table2").unwrap();
    assert_eq!(t.rows.len(), 32);
    assert_eq!(t.row(Method::SparseGpt, 0.99, 0).unwrap().perplexity, 16869.203);
    assert_eq!(t.row(Method::Wanda, 0.99, 0).unwrap().perplexity, 108234.484);
    assert_eq!(t.row(Method::Mama, 0.7, 0).unwrap().perplexity, 51841.121);
    assert!(t.rows.iter().all(|r| r.seed == 0 && r.achieved_sparsity == 0.0 && r.discarded_rows == 0));
}

#[test]
fn fixtures_agree_on_shared_magnitude_column() {
    let t1 = load_paper_fixture("table1").unwrap();
    let t2 = load_paper_fixture("table2").unwrap();
    for level in [0.0, 0.5, 0.6, 0.7, 0.8, 0.9] {
        assert_eq!(
            t1.row(Method::Magnitude, level, 0).unwrap().perplexity,
            t2.row(Method::Magnitude, level, 0).unwrap().perplexity
        );
    }
}

#[test]
fn unknown_fixture_is_rejected() {
    assert!(matches!(load_paper_fixture("table3"), Err(Error::UnknownFixture(_))));
}

#[test]
fn table2_markdown_layout() {
    let md = load_paper_fixture("table2").unwrap().to_markdown().unwrap();
    let lines: Vec<&str> = md.lines().collect();
    assert_eq!(lines[0], "### seed 0");
    assert_eq!(lines[2], "| level | wanda | sparsegpt | magnitude | mama |");
    assert_eq!(lines[4], "| 0.00 | 5.677 | 5.677 | 5.677 | 5.677 |");
    assert_eq!(lines[5], "| 0.50 | 7.257 | 7.234 | 17.285 | 17.247 |");
    assert_eq!(lines[11], "| 0.99 | 108234.484 | 16869.203 | 222543.047 | 214966.484 |");
}

#[test]
fn markdown_has_one_table_per_seed() {
    let row = |seed, perplexity| ReportRow {
        method: Method::Magnitude,
        level: 0.5,
        seed,
        perplexity,
        achieved_sparsity: 0.5,
        discarded_rows: 0,
    };
    let r = PruneReport::new(vec![], vec![row(2, 3.0), row(1, 2.5)], ReportMetadata::default()).unwrap();
    let md = r.to_markdown().unwrap();
    assert_eq!(md.matches("### seed").count(), 2);
    assert!(md.find("### seed 1").unwrap() < md.find("### seed 2").unwrap());
    assert!(md.contains("| 0.50 | 2.500 |"));
}

#[test]
fn empty_report_is_rejected() {
    let r = PruneReport::new(vec![Method::Magnitude], vec![], ReportMetadata::default()).unwrap();
    assert!(r.to_csv().is_err());
    assert!(r.to_markdown().is_err());
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("out.md");
    assert!(emit_markdown(&r, &path).is_err());
    assert!(!path.exists());
}

#[test]
fn invalid_rows_are_rejected() {
    let row = ReportRow {
        method: Method::Magnitude,
        level: 0.5,
        seed: 1,
        perplexity: 2.0,
        achieved_sparsity: 0.5,
        discarded_rows: 0,
    };
    let dup = vec![row.clone(), row.clone()];
    assert!(PruneReport::new(vec![], dup, ReportMetadata::default()).is_err());
    let zero = vec![ReportRow { perplexity: 0.0, ..row }];
    assert!(PruneReport::new(vec![], zero, ReportMetadata::default()).is_err());
}

#[test]
fn csv_round_trip_through_file() {
    let spec = tiny_spec(vec![Method::Wanda, Method::NegMagnitude], vec![0.0, 0.4], vec![3]);
    let report = run_sweep_with(&spec, &corpora()).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("r.csv");
    emit_csv(&report, &path).unwrap();
    let text = std::fs::read_to_string(&path).unwrap();
    let header = text.lines().find(|l| !l.starts_with('#')).unwrap();
    assert_eq!(header, "method,level,seed,perplexity,achieved_sparsity,discarded_rows");
    let back = PruneReport::load_csv(&path).unwrap();
    assert_eq!(back.to_csv().unwrap(), text);
    assert_eq!(back.metadata, report.metadata);
    assert_eq!(back.methods, report.methods);
    for (a, b) in report.rows.iter().zip(&back.rows) {
        assert_eq!(format!("{:.3}", a.perplexity), format!("{:.3}", b.perplexity));
        assert_eq!((a.method, a.level, a.seed, a.discarded_rows), (b.method, b.level, b.seed, b.discarded_rows));
        assert_eq!(a.achieved_sparsity, b.achieved_sparsity);
    }
    assert_eq!(report.metadata.corpus_hashes.len(), 3);
    assert_eq!(report.metadata.config_hash.len(), 64);
}

#[test]
fn csv_with_wrong_columns_is_rejected() {
    assert!(PruneReport::from_csv("a,b\n1,2\n").is_err());
    assert!(PruneReport::from_csv("method,level,seed,perplexity,achieved_sparsity,discarded_rows\n").is_err());
}

#[test]
fn sha256_known_answer() {
    assert_eq!(
        sha256_hex(b"abc"),
        "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad"
    );
}

#[test]
fn median_over_seeds() {
    let rows = [4.0, 1.0, 3.0]
        .iter()
        .enumerate()
        .map(|(i, &p)| ReportRow {
            method: Method::Wanda,
            level: 0.1,
            seed: i as u64,
            perplexity: p,
            achieved_sparsity: 0.1,
            discarded_rows: 0,
        })
        .collect();
    let r = PruneReport::new(vec![], rows, ReportMetadata::default()).unwrap();
    assert_eq!(r.median_perplexity(Method::Wanda, 0.1), Some(3.0));
    assert_eq!(r.median_perplexity(Method::Mama, 0.1), None);
}
