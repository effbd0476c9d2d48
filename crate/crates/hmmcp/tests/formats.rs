use std::fs;
use std::path::Path;

use hmmcp::config::ConfigFile;
use hmmcp::experiments::{read_rows, CsvSink, ReportRow};
use hmmcp::hmmcp_core::{AugmentedSequence, Pair};
use hmmcp::io::{read_augmented, read_observations, write_augmented};
use proptest::prelude::*;

fn report_row() -> impl Strategy<Value = ReportRow> {
    (
        prop::sample::select(vec!["two_state", "three_state", "three_state_iid", "custom"]),
        prop::option::of(0.0f64..1.0),
        prop::option::of(0.0f64..1.0),
        (2usize..500, 1usize..6, 0.01f64..0.99, 1u64..1000, any::<u64>()),
        (0.0f64..1.0, 0.0f64..1.0, 0.0f64..100.0, 0.0f64..1e9),
        prop::option::of(any::<u64>()),
    )
        .prop_map(
            |(preset, p, b, (t, m, alpha, iterations, seed), (cov, size, blocks, perms), wall_ms)| ReportRow {
                preset: preset.to_owned(),
                p,
                b,
                calibration_len: t,
                horizon: m,
                alpha,
                iterations,
                master_seed: seed,
                coverage: cov,
                scaled_set_size: size,
                mean_blocks: blocks,
                mean_perms: perms,
                wall_ms,
            },
        )
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn augmented_files_roundtrip(pairs in prop::collection::vec((0usize..20, 0usize..20), 1..60)) {
        let seq = AugmentedSequence::new(pairs.into_iter().map(|(s, o)| Pair::new(s, o)).collect()).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("seq.csv");
        let mut buf = Vec::new();
        write_augmented(&seq, &mut buf).unwrap();
        fs::write(&path, &buf).unwrap();
        prop_assert_eq!(read_augmented(&path).unwrap(), seq.clone());
        prop_assert_eq!(read_observations(&path).unwrap(), seq.observations());
    }

    #[test]
    fn sweep_rows_roundtrip(rows in prop::collection::vec(report_row(), 1..8)) {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("sweep.csv");
        let mut sink = CsvSink::create(&path).unwrap();
        for row in &rows {
            sink.push(row).unwrap();
        }
        drop(sink);
        let back = read_rows(&path).unwrap();
        prop_assert_eq!(back.len(), rows.len());
        for (a, b) in back.iter().zip(&rows) {
            prop_assert_eq!(a.key(), b.key());
            prop_assert_eq!(a, b);
        }
    }

    #[test]
    fn config_values_survive_comments(
        entries in prop::collection::btree_map("[a-z][a-z_]{0,8}", "[A-Za-z0-9.]{1,10}", 0..6),
    ) {
        let mut text = String::from("# generated\n\n");
        for (k, v) in &entries {
            text.push_str(&format!("{k} = {v}  # note\n"));
        }
        let parsed = ConfigFile::parse(&text, Path::new("gen.conf"));
        let distinct: std::collections::BTreeSet<String> = entries.keys().map(|k| k.replace('_', "-")).collect();
        if distinct.len() < entries.len() {
            prop_assert!(parsed.is_err());
        } else {
            let parsed = parsed.unwrap();
            for (k, v) in &entries {
                prop_assert_eq!(parsed.raw(k), Some(v.as_str()));
            }
        }
    }
}
