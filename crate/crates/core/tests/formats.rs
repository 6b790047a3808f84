use proptest::prelude::*;
use topoforge::io::{history_csv, parse_pgm, pgm_bytes, read_history, HistoryEntry, HistoryWriter, SolveRecord};

fn record() -> SolveRecord {
    SolveRecord { setting: vec![1.25], x: vec![0.0, 0.5, 1.0], f: 12.5, sensitivity: vec![-1.0, -0.25, 0.0], fea_count: 431 }
}

#[test]
fn record_round_trip() {
    let r = record();
    let bytes = r.to_bytes();
    assert_eq!(&bytes[..4], b"TDTO");
    assert_eq!(bytes[4], 1);
    assert_eq!(SolveRecord::from_bytes(&bytes).unwrap(), r);
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("r.tdto");
    r.save(&p).unwrap();
    assert_eq!(SolveRecord::load(&p).unwrap(), r);
}

#[test]
fn record_reader_rejects_wrong_magic_version_and_length() {
    let bytes = record().to_bytes();
    let mut b = bytes.clone();
    b[1] = b'X';
    assert!(SolveRecord::from_bytes(&b).is_err());
    let mut b = bytes.clone();
    b[4] = 2;
    assert!(SolveRecord::from_bytes(&b).is_err());
    assert!(SolveRecord::from_bytes(&bytes[..bytes.len() - 1]).is_err());
    let mut b = bytes.clone();
    b.extend_from_slice(&[0; 8]);
    assert!(SolveRecord::from_bytes(&b).is_err());
}

#[test]
fn pgm_layout_is_top_down_row_major() {
    // 2 columns, 3 rows; element ix*ny+iy, iy from the bottom
    let rho = [0.0, 0.2, 1.0, 0.4, 0.6, 0.8];
    let bytes = pgm_bytes(&rho, 2, 3).unwrap();
    let header = b"P5\n2 3\n255\n";
    assert_eq!(&bytes[..header.len()], header);
    let px = &bytes[header.len()..];
    assert_eq!(px, &[255, 204, 51, 153, 0, 102]);
    assert!(pgm_bytes(&rho, 3, 3).is_err());
}

#[test]
fn pgm_parser_tolerates_comments() {
    let mut bytes = b"P5\n# made by hand\n1 2\n255\n".to_vec();
    bytes.extend_from_slice(&[0, 255]);
    let (rho, nx, ny) = parse_pgm(&bytes).unwrap();
    assert_eq!((nx, ny), (1, 2));
    assert_eq!(rho, vec![1.0, 0.0]);
    assert!(parse_pgm(b"P2\n1 1\n255\n0").is_err());
    assert!(parse_pgm(b"P5\n1 1\n255\n").is_err());
}

#[test]
fn history_flushes_each_line() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("h.csv");
    let entries: Vec<HistoryEntry> = (0..3)
        .map(|i| HistoryEntry {
            iteration: i,
            remaining_budget: 100 - 10 * i as u64,
            chosen_setting: vec![0.1 * i as f64, 2.0],
            score: 1.0 / 3.0,
            test_metric: 1e-17,
        })
        .collect();
    let mut w = HistoryWriter::create(&p).unwrap();
    for (k, e) in entries.iter().enumerate() {
        w.append(e).unwrap();
        // visible on disk before the writer is dropped
        assert_eq!(read_history(&p).unwrap(), entries[..=k].to_vec());
    }
    drop(w);
    assert_eq!(std::fs::read_to_string(&p).unwrap(), history_csv(&entries));
}

proptest! {
    #[test]
    fn pgm_round_trip_within_one_level(nx in 1usize..12, ny in 1usize..12, seed in any::<u64>()) {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let rho: Vec<f64> = (0..nx * ny).map(|_| rng.gen()).collect();
        let (back, bx, by) = parse_pgm(&pgm_bytes(&rho, nx, ny).unwrap()).unwrap();
        prop_assert_eq!((bx, by), (nx, ny));
        for (a, b) in rho.iter().zip(&back) {
            prop_assert!((a - b).abs() <= 1.0 / 255.0);
        }
    }

    #[test]
    fn record_round_trip_any_values(x in prop::collection::vec(0.0f64..=1.0, 0..40), s in prop::collection::vec(-10.0f64..10.0, 1..4), count in 0u64..1_000_000) {
        let r = SolveRecord { setting: s, sensitivity: x.iter().map(|v| -v).collect(), x, f: 3.5, fea_count: count };
        prop_assert_eq!(SolveRecord::from_bytes(&r.to_bytes()).unwrap(), r);
    }
}
