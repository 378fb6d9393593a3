//! File formats, checkpoints, the tokenizer and the synthetic corpus.

use proptest::prelude::*;
use seqdesign::data::{
    format_fasta, format_labels, format_pairs, format_scores, generate_synthetic, motif_profile,
    parse_fasta, parse_labels, parse_pairs, parse_scores, Checkpoint, FastaRecord, PairRecord,
    SyntheticRules, MAGIC,
};
use seqdesign::tokenizer::{decode_protein, encode_protein, TextVocabulary, CANONICAL};
use seqdesign::Error;

proptest! {
    #[test]
    fn protein_tokens_round_trip(seq in "[ACDEFGHIKLMNPQRSTVWYX]{1,60}", specials in any::<bool>()) {
        let ids = encode_protein(&seq, None, specials).unwrap().ids;
        prop_assert_eq!(ids.len(), seq.len() + if specials { 2 } else { 0 });
        prop_assert_eq!(decode_protein(&ids).unwrap(), seq);
    }

    #[test]
    fn padding_truncates_and_fills(seq in "[ACDEFGHIKLMNPQRSTVWY]{1,40}", max in 2usize..30) {
        let t = encode_protein(&seq, Some(max), true).unwrap();
        prop_assert_eq!(t.ids.len(), max);
        let kept = seq.len().min(max - 2);
        prop_assert_eq!(decode_protein(&t.ids).unwrap(), &seq[..kept]);
        prop_assert_eq!(t.mask().iter().filter(|&&m| m).count(), kept + 2);
    }

    #[test]
    fn lowercase_and_rare_letters_canonicalize(seq in "[a-zA-Z]{1,30}") {
        let back = decode_protein(&encode_protein(&seq, None, false).unwrap().ids).unwrap();
        for (a, b) in seq.chars().zip(back.chars()) {
            let up = a.to_ascii_uppercase();
            prop_assert_eq!(b, if CANONICAL.contains(up) { up } else { 'X' });
        }
    }

    #[test]
    fn pairs_round_trip(rows in prop::collection::vec(("[a-z0-9_]{1,8}", "[A-Za-z ,.]{0,30}", "[ACDEFGHIKLMNPQRSTVWY]{1,30}"), 0..10)) {
        let records: Vec<PairRecord> = rows.iter().map(|(i, t, s)| PairRecord::new(i.as_str(), t.as_str(), s.as_str())).collect();
        let text = format_pairs(&records).unwrap();
        prop_assert_eq!(parse_pairs(&text, "mem").unwrap(), records);
    }

    #[test]
    fn fasta_round_trip(rows in prop::collection::vec(("[a-z0-9_]{1,8}", "[a-z=. ]{0,20}", "[ACDEFGHIKLMNPQRSTVWY]{1,50}"), 0..10)) {
        let records: Vec<FastaRecord> = rows
            .iter()
            .map(|(i, d, s)| FastaRecord { id: i.clone(), description: d.trim().to_string(), sequence: s.clone() })
            .collect();
        prop_assert_eq!(parse_fasta(&format_fasta(&records), "mem").unwrap(), records);
    }

    #[test]
    fn scores_round_trip(rows in prop::collection::vec(("[a-z0-9]{1,6}", -1e6..1e6f64), 0..10)) {
        let rows: Vec<(String, f64)> = rows;
        let back = parse_scores(&format_scores(&rows), "mem").unwrap();
        prop_assert_eq!(back.len(), rows.len());
        for (a, b) in back.iter().zip(&rows) {
            prop_assert_eq!(&a.0, &b.0);
            prop_assert_eq!(a.1, b.1);
        }
    }

    #[test]
    fn checkpoint_bytes_round_trip(
        tensors in prop::collection::vec((prop::collection::vec(1usize..4, 1..4), any::<u64>()), 0..6),
        vocab in "[a-z\n]{0,20}",
        config in "[ -~]{0,40}",
    ) {
        let mut ckpt = Checkpoint::new(vocab, config);
        for (i, (shape, seed)) in tensors.iter().enumerate() {
            let n: usize = shape.iter().product();
            let data: Vec<f64> = (0..n).map(|k| f64::from_bits(seed.wrapping_add(k as u64) % 0x7fef_ffff_ffff_ffff)).collect();
            ckpt.add(format!("t{i}"), &seqdesign::Tensor::new(data, shape).unwrap()).unwrap();
        }
        let bytes = ckpt.to_bytes().unwrap();
        let back = Checkpoint::from_bytes(&bytes).unwrap();
        for (a, b) in back.tensors.iter().zip(&ckpt.tensors) {
            prop_assert_eq!(&a.shape, &b.shape);
            prop_assert!(a.data.iter().zip(&b.data).all(|(x, y)| x.to_bits() == y.to_bits()));
        }
        prop_assert_eq!(back.to_bytes().unwrap(), bytes);
    }
}

#[test]
fn pair_errors_name_the_line() {
    match parse_pairs("a\tok\tMKV\nb\tno tabs here\n", "f.tsv") {
        Err(Error::Parse { line, .. }) => assert_eq!(line, 2),
        other => panic!("unexpected {other:?}"),
    }
    assert!(parse_pairs("a\tx\tMK1V\n", "f.tsv").is_err());
    assert!(parse_pairs("", "f.tsv").unwrap().is_empty());
    assert_eq!(
        parse_pairs("p1\tBinds RNA.\tMKV\n", "f.tsv").unwrap().len(),
        1
    );
}

#[test]
fn corrupted_checkpoints_are_rejected_with_offsets() {
    let mut ckpt = Checkpoint::new("v", "{}");
    ckpt.add(
        "w".into(),
        &seqdesign::Tensor::new(vec![1.0, 2.0], &[2]).unwrap(),
    )
    .unwrap();
    let good = ckpt.to_bytes().unwrap();
    assert_eq!(&good[..4], MAGIC);

    let mut bad = good.clone();
    bad[0] = b'X';
    assert!(matches!(
        Checkpoint::from_bytes(&bad),
        Err(Error::Format { offset: 0, .. })
    ));

    let mut bad = good.clone();
    bad[4] = 9;
    assert!(matches!(
        Checkpoint::from_bytes(&bad),
        Err(Error::Format { offset: 4, .. })
    ));

    for cut in [3, 10, good.len() - 1] {
        assert!(
            matches!(
                Checkpoint::from_bytes(&good[..cut]),
                Err(Error::Format { .. })
            ),
            "cut {cut}"
        );
    }
    let mut long = good.clone();
    long.push(0);
    assert!(Checkpoint::from_bytes(&long).is_err());
    assert!(ckpt
        .add("w".into(), &seqdesign::Tensor::from_vec(vec![0.0]))
        .is_err());
}

#[test]
fn text_vocabulary_orders_by_frequency() {
    let v = TextVocabulary::build(&["b a a", "c a b"], 6).unwrap();
    assert_eq!(v.len(), 6);
    assert_eq!(v.token(4), Some("a"));
    assert_eq!(v.token(5), Some("b"));
    assert_eq!(v.id("c"), v.id("never seen"));
}

#[test]
fn synthetic_corpus_separates_properties() {
    let rules = SyntheticRules::default();
    let records = generate_synthetic(&rules, 2000, 11).unwrap();
    assert_eq!(records, generate_synthetic(&rules, 2000, 11).unwrap());
    let k = rules.properties.len();
    let (mut with, mut without) = (vec![(0usize, 0usize); k], vec![(0usize, 0usize); k]);
    let mut correct = 0;
    for r in &records {
        assert!((1..=2).contains(&r.labels.len()));
        let profile = motif_profile(&rules, &r.record.sequence);
        for p in 0..k {
            let slot = if r.labels.contains(&p) {
                &mut with[p]
            } else {
                &mut without[p]
            };
            slot.0 += profile[p];
            slot.1 += 1;
        }
        let predicted: Vec<usize> = (0..k).filter(|&p| profile[p] > 0).collect();
        if predicted == r.labels {
            correct += 1;
        }
    }
    for p in 0..k {
        let mean_with = with[p].0 as f64 / with[p].1 as f64;
        let mean_without = without[p].0 as f64 / without[p].1.max(1) as f64;
        assert!(mean_with >= 1.0);
        assert!(
            mean_with >= 3.0 * mean_without,
            "property {p}: {mean_with} vs {mean_without}"
        );
    }
    assert!(correct as f64 / records.len() as f64 > 0.95);

    let labels = format_labels(&rules, &records);
    let parsed = parse_labels(&rules, &format!("# seed=11\n{labels}")).unwrap();
    assert!(parsed
        .iter()
        .zip(&records)
        .all(|(a, r)| a.0 == r.record.id && a.1 == r.labels));
}

#[test]
fn impossible_length_ranges_are_rejected() {
    let rules = SyntheticRules {
        min_len: 1,
        max_len: 2,
        ..Default::default()
    };
    assert!(generate_synthetic(&rules, 5, 0).is_err());
}
