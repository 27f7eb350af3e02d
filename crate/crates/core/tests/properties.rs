use std::collections::BTreeMap;

use proptest::prelude::*;

use cellsense::ablate::{Ablator, AblationKind, AblationSpec, TokenBudget};
use cellsense::corpus::{
    build_sentence, parse_dense_csv, parse_sparse_jsonl, write_dense_csv, write_sparse_jsonl, CellRecord, CellSentence,
    Dataset, GeneVocabulary,
};
use cellsense::embed::{EmbeddingStore, EmbeddingVector, StoreHeader};
use cellsense::evalcore::{ami, ari};
use cellsense::interpret::{aggregate_attributions, AttributionRecord};

fn gene_names(max: usize) -> impl Strategy<Value = Vec<String>> {
    prop::collection::btree_set("[A-Z][A-Z0-9]{1,9}", 1..max).prop_map(|s| s.into_iter().collect())
}

fn sentence() -> impl Strategy<Value = CellSentence> {
    gene_names(120).prop_shuffle().prop_map(|g| CellSentence::identity("cell", g))
}

fn counts() -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(prop_oneof![Just(0.0), 0.0f64..1e4, (1u32..50).prop_map(f64::from)], 1..40)
}

fn dataset() -> impl Strategy<Value = Dataset> {
    (1usize..12, 1usize..8).prop_flat_map(|(n_genes, n_cells)| {
        prop::collection::vec(prop::collection::vec(prop_oneof![Just(0.0), (1u32..1000).prop_map(f64::from), 0.0f64..100.0], n_genes), n_cells)
            .prop_map(move |rows| {
                let vocab = GeneVocabulary::new((0..n_genes).map(|g| format!("G{g}")).collect()).unwrap();
                let cells = rows
                    .into_iter()
                    .enumerate()
                    .map(|(i, r)| CellRecord {
                        cell_id: format!("cell{i}"),
                        label: format!("L{}", i % 3),
                        counts: r.into_iter().enumerate().filter(|&(_, v)| v != 0.0).collect(),
                    })
                    .collect();
                Dataset::new(vocab, cells).unwrap()
            })
    })
}

fn partition(n: usize) -> impl Strategy<Value = Vec<u8>> {
    prop::collection::vec(0u8..5, n)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(128))]

    #[test]
    fn sentence_invariant_under_monotone_rescaling(c in counts(), a in 0.1f64..10.0) {
        let vocab = GeneVocabulary::new((0..c.len()).map(|g| format!("G{g}")).collect()).unwrap();
        let cell = |f: &dyn Fn(f64) -> f64| CellRecord {
            cell_id: "c".into(),
            label: "x".into(),
            counts: c.iter().enumerate().map(|(g, &v)| (g, if v > 0.0 { f(v) } else { 0.0 })).collect(),
        };
        let base = build_sentence(&cell(&|v| v), &vocab);
        prop_assert_eq!(&build_sentence(&cell(&|v| a * v), &vocab), &base);
        prop_assert_eq!(&build_sentence(&cell(&|v| v.ln_1p()), &vocab), &base);
        prop_assert_eq!(base.len(), c.iter().filter(|&&v| v > 0.0).count());
    }

    #[test]
    fn shuffles_preserve_multiset(s in sentence(), seed in any::<u64>(), max in 20usize..300) {
        let budget = TokenBudget::new(max, 8).unwrap();
        for kind in [AblationKind::ShuffleAll, AblationKind::ShuffleInContext, AblationKind::ShuffleTop10InContext] {
            let out = Ablator::new(AblationSpec::new(kind, Some(seed), budget)).unwrap().apply(&s).unwrap();
            let (mut a, mut b) = (out.genes.clone(), s.genes.clone());
            a.sort();
            b.sort();
            prop_assert_eq!(a, b);
        }
    }

    #[test]
    fn truncation_is_monotone(s in sentence(), f1 in 0.01f64..=1.0, f2 in 0.01f64..=1.0, max in 20usize..300) {
        let budget = TokenBudget::new(max, 8).unwrap();
        let (lo, hi) = if f1 <= f2 { (f1, f2) } else { (f2, f1) };
        let cut = |f| Ablator::new(AblationSpec::new(AblationKind::TruncateFraction { fraction: f }, None, budget)).unwrap().apply(&s).unwrap().genes;
        let (a, b) = (cut(lo), cut(hi));
        prop_assert!(b.starts_with(&a));
        prop_assert!(s.genes.starts_with(&b));
    }

    #[test]
    fn partition_scores_ignore_label_names(
        (a, b) in (2usize..60).prop_flat_map(|n| (partition(n), partition(n))),
        perm in Just([3u8, 0, 4, 1, 2]).prop_shuffle(),
    ) {
        let renamed: Vec<u8> = a.iter().map(|&x| perm[x as usize]).collect();
        let (r1, r2) = (ari(&a, &b).unwrap(), ari(&renamed, &b).unwrap());
        prop_assert!((r1 - r2).abs() < 1e-12);
        prop_assert!((r1 - ari(&b, &a).unwrap()).abs() < 1e-12);
        let (m1, m2) = (ami(&a, &b).unwrap(), ami(&renamed, &b).unwrap());
        prop_assert!((m1 - m2).abs() < 1e-12);
        prop_assert!((m1 - ami(&b, &a).unwrap()).abs() < 1e-12);
    }

    #[test]
    fn dense_and_sparse_round_trip(ds in dataset()) {
        let mut buf = Vec::new();
        write_dense_csv(&ds, &mut buf).unwrap();
        // Dense rows spell out every zero, so compare counts gene by gene.
        let back = parse_dense_csv(buf.as_slice(), None).unwrap();
        prop_assert_eq!(&back.vocabulary, &ds.vocabulary);
        for (x, y) in back.cells.iter().zip(&ds.cells) {
            prop_assert_eq!((&x.cell_id, &x.label), (&y.cell_id, &y.label));
            for g in 0..ds.vocabulary.len() {
                prop_assert_eq!(x.count(g), y.count(g));
            }
        }
        prop_assert_eq!(back.cells.len(), ds.cells.len());

        let mut buf = Vec::new();
        write_sparse_jsonl(&ds, &mut buf).unwrap();
        let back = parse_sparse_jsonl(buf.as_slice(), Some(ds.vocabulary.clone())).unwrap();
        prop_assert_eq!(&back.cells, &ds.cells);
    }

    #[test]
    fn store_round_trip(vs in prop::collection::vec(prop::collection::vec(-1e3f64..1e3, 5), 1..20)) {
        let mut store = EmbeddingStore::new(StoreHeader { model_id: "m".into(), dim: 5, normalized: false });
        for (i, v) in vs.iter().enumerate() {
            store.insert_key(format!("cell{i}|identity"), EmbeddingVector::new(v.clone()).unwrap()).unwrap();
        }
        let mut buf = Vec::new();
        store.write(&mut buf).unwrap();
        let back = EmbeddingStore::read(buf.as_slice()).unwrap();
        prop_assert_eq!(back.len(), vs.len());
        for (i, v) in vs.iter().enumerate() {
            prop_assert_eq!(back.get_key(&format!("cell{i}|identity")).unwrap().as_slice(), v.as_slice());
        }
    }

    #[test]
    fn aggregation_ignores_record_order(
        scores in prop::collection::vec(prop::collection::btree_map("[A-F]", -5.0f64..5.0, 0..6), 1..14),
        order in Just((0..14).collect::<Vec<usize>>()).prop_shuffle(),
    ) {
        let recs: Vec<AttributionRecord> = scores
            .iter()
            .enumerate()
            .map(|(i, s)| AttributionRecord {
                cell_id: format!("c{i:02}"),
                class: format!("T{}", i % 2),
                method: "lime".into(),
                scores: s.iter().map(|(g, v)| (g.clone(), *v)).collect::<BTreeMap<_, _>>(),
            })
            .collect();
        let shuffled: Vec<AttributionRecord> = order.iter().filter(|&&i| i < recs.len()).map(|&i| recs[i].clone()).collect();
        let a = aggregate_attributions(&recs, 10).unwrap();
        prop_assert_eq!(&a, &aggregate_attributions(&shuffled, 10).unwrap());
        for sig in &a {
            prop_assert!(sig.genes.len() <= 10 && sig.genes.iter().all(|(_, s)| *s > 0.0));
            prop_assert!(sig.genes.windows(2).all(|w| w[0].1 >= w[1].1));
        }
    }
}
