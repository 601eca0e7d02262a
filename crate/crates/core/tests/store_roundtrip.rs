use proptest::prelude::*;
use scf_core::aes::Block128;
use scf_core::store::{
    read_traceset, write_traceset, Metadata, TraceReader, TraceRecord, TraceSetHeader, FLAG_VARIANT_LOG,
    VARIANT_LOG_KEY,
};
use scf_core::Error;

fn records(n_samples: usize, log: Option<usize>) -> impl Strategy<Value = Vec<TraceRecord>> {
    let rec = (
        any::<[u8; 16]>(),
        any::<[u8; 16]>(),
        prop::collection::vec(-1e6f32..1e6, n_samples),
        prop::collection::vec(any::<u8>(), log.unwrap_or(0)),
    )
        .prop_map(move |(p, c, samples, l)| TraceRecord {
            plaintext: Block128(p),
            ciphertext: Block128(c),
            samples,
            variant_log: log.map(|_| l),
        });
    prop::collection::vec(rec, 0..20)
}

fn header(n: usize, n_samples: usize, log: Option<usize>) -> TraceSetHeader {
    let mut m = Metadata::new();
    m.push("note", "roundtrip");
    let mut h = TraceSetHeader::new(n as u64, n_samples as u32, m);
    if let Some(l) = log {
        h.metadata.push(VARIANT_LOG_KEY, l);
        h.flags |= FLAG_VARIANT_LOG;
    }
    h
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn write_then_read_is_identity(
        (n_samples, log, recs) in (1usize..40, prop::option::of(1usize..50))
            .prop_flat_map(|(s, l)| (Just(s), Just(l), records(s, l)))
    ) {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("t.scf");
        let h = header(recs.len(), n_samples, log);
        write_traceset(&path, h.clone(), recs.iter().cloned().map(Ok)).unwrap();
        let (got_h, reader) = read_traceset(&path).unwrap();
        prop_assert_eq!(&got_h, &h);
        let got: Vec<TraceRecord> = reader.collect::<Result<_, _>>().unwrap();
        prop_assert_eq!(&got, &recs);
        let len = std::fs::metadata(&path).unwrap().len();
        prop_assert_eq!(len, h.encoded_len().unwrap() + recs.len() as u64 * h.record_len().unwrap());
    }
}

#[test]
fn ranges_read_the_right_records() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("r.scf");
    let recs: Vec<TraceRecord> = (0..50u8)
        .map(|i| TraceRecord {
            plaintext: Block128([i; 16]),
            ciphertext: Block128([!i; 16]),
            samples: vec![i as f32; 3],
            variant_log: None,
        })
        .collect();
    write_traceset(&path, header(50, 3, None), recs.iter().cloned().map(Ok)).unwrap();
    let got: Vec<TraceRecord> = TraceReader::open_range(&path, 10, 7)
        .unwrap()
        .collect::<Result<_, _>>()
        .unwrap();
    assert_eq!(got, recs[10..17]);
    assert!(TraceReader::open_range(&path, 45, 6).is_err());
}

#[test]
fn truncated_file_reports_the_first_incomplete_record() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("cut.scf");
    let recs = vec![
        TraceRecord {
            plaintext: Block128::default(),
            ciphertext: Block128::default(),
            samples: vec![0.5; 8],
            variant_log: None,
        };
        5
    ];
    let h = header(5, 8, None);
    write_traceset(&path, h.clone(), recs.into_iter().map(Ok)).unwrap();
    let keep = h.encoded_len().unwrap() + 3 * h.record_len().unwrap() + 7;
    let f = std::fs::OpenOptions::new().write(true).open(&path).unwrap();
    f.set_len(keep).unwrap();
    match TraceReader::open(&path) {
        Err(Error::Truncated { record, .. }) => assert_eq!(record, 3),
        Err(e) => panic!("expected truncation error, got {e}"),
        Ok(_) => panic!("truncated file opened"),
    }
}
