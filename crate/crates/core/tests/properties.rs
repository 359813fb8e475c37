use proptest::prelude::*;

use ppmarket::dataplane::{check_split, commit, split, verify_commitment, DataError, LabeledDataset, Row};
use ppmarket::fedtrain::{fed_average, mask, unmask, MaskKey, MaskedModel, ModelParams, MASK_RANGE};
use ppmarket::ledger::{import_ndjson, Ledger, LedgerConfig, TransactionEnvelope, TxType};

fn dataset() -> impl Strategy<Value = (LabeledDataset, usize)> {
    (3u32..=6, 3usize..=10).prop_flat_map(|(c, m)| {
        (prop::collection::vec(2usize..=25, c as usize), Just(c), Just(m)).prop_map(|(counts, c, m)| {
            let rows = counts
                .iter()
                .enumerate()
                .flat_map(|(label, &k)| (0..k).map(move |i| Row { features: vec![i as f64, label as f64], label: label as u32 }))
                .collect();
            (LabeledDataset { rows, label_count: c }, m)
        })
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn split_partitions_or_reports_infeasible((data, m) in dataset(), seed in any::<[u8; 8]>()) {
        match split(&data, m, &seed) {
            Ok(chunks) => {
                prop_assert_eq!(chunks.len(), m);
                prop_assert!(check_split(&data, &chunks).is_ok());
                prop_assert_eq!(split(&data, m, &seed).unwrap(), chunks);
            }
            Err(e) => prop_assert!(matches!(e, DataError::Infeasible(_)), "{e}"),
        }
    }

    #[test]
    fn commitment_binds_payload_and_nonce(
        payload in prop::collection::vec(any::<u8>(), 1..200),
        nonce in any::<[u8; 16]>(),
        flip in any::<prop::sample::Index>(),
    ) {
        let c = commit(&payload, &nonce).unwrap();
        prop_assert!(verify_commitment(&c.hash, &payload, &c.nonce));
        let mut altered = payload.clone();
        altered[flip.index(payload.len())] ^= 0x40;
        prop_assert!(!verify_commitment(&c.hash, &altered, &c.nonce));
        let mut other = nonce;
        other[0] ^= 1;
        prop_assert!(!verify_commitment(&c.hash, &payload, &hex::encode(other)));
    }

    #[test]
    fn masking_round_trips_exactly(
        weights in prop::collection::vec(-MASK_RANGE..=MASK_RANGE, 1..8),
        material in any::<[u8; 16]>(),
    ) {
        let key = MaskKey::derive("k", &material);
        let p = ModelParams { weights };
        let mm = mask(&p, &key).unwrap();
        let back = MaskedModel::from_bytes(&mm.to_bytes()).unwrap();
        prop_assert!(unmask(&back, &key).unwrap().bit_eq(&p));
    }

    #[test]
    fn averaging_equal_models_is_identity(
        weights in prop::collection::vec(-10.0f64..10.0, 1..6),
        counts in prop::collection::vec(1u32..50, 1..6),
    ) {
        let p = ModelParams { weights };
        let models: Vec<_> = counts.iter().map(|&c| (p.clone(), f64::from(c))).collect();
        let avg = fed_average(&models).unwrap();
        for (a, b) in avg.weights.iter().zip(&p.weights) {
            prop_assert!((a - b).abs() <= 1e-12 * b.abs().max(1.0));
        }
    }

    #[test]
    fn ledger_replays_and_round_trips(gaps in prop::collection::vec(0u64..1500, 1..700)) {
        let mut ledger = Ledger::new(LedgerConfig::default());
        let mut now = 0;
        for (i, gap) in gaps.iter().enumerate() {
            now += gap;
            ledger.tick(now).unwrap();
            let tx = TransactionEnvelope::new(format!("tx-{i}"), TxType::CreateCO, "", vec![], now);
            ledger.submit(tx).unwrap();
        }
        ledger.flush();
        let blocks = ledger.blocks();
        prop_assert_eq!(blocks.iter().map(|b| b.txs.len()).sum::<usize>(), gaps.len());
        for pair in blocks.windows(2) {
            prop_assert!(pair[1].cut_time >= pair[0].cut_time);
            prop_assert!(pair[1].txs.len() <= 500);
            prop_assert_eq!(pair[1].prev_hash, pair[0].block_hash);
        }
        prop_assert_eq!(ledger.replay().unwrap().canonical_bytes(), ledger.state().canonical_bytes());
        let rebuilt = Ledger::from_blocks(LedgerConfig::default(), import_ndjson(&ledger.export()).unwrap()).unwrap();
        prop_assert_eq!(rebuilt.export(), ledger.export());
    }
}
