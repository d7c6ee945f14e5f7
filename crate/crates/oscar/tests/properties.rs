//! Property tests over the numeric core and the samplers.

use std::sync::Arc;

use oscar::corpus::triple::Triple;
use oscar::corpus::vocab::{CLS, NUM_SPECIAL, SEP};
use oscar::corpus::{build_world, load_corpus, save_corpus, sample_corpus, CorpusConfig, WorldConfig};
use oscar::finetune::retrieval::recall_at_k;
use oscar::objectives::{sample_mtl_mask, MaskScheme};
use oscar::tape::Tape;
use oscar::tensor::Tensor;
use oscar::Rng;

use proptest::prelude::*;

fn tensor_2d(rows: usize, cols: usize) -> impl Strategy<Value = Tensor> {
    proptest::collection::vec(-10.0f64..10.0, rows * cols)
        .prop_map(move |data| Tensor::new(vec![rows, cols], data).unwrap())
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn softmax_rows_sum_to_one_and_shift_invariant(t in tensor_2d(4, 7), shift in -50.0f64..50.0) {
        let mut tape = Tape::new();
        let x = tape.leaf(t);
        let y = tape.softmax(x, 1).unwrap();
        for r in 0..4 {
            let s: f64 = tape.value(y).row(r).iter().sum();
            prop_assert!((s - 1.0).abs() < 1e-12);
        }
        let shifted = tape.add_const(x, shift);
        let y2 = tape.softmax(shifted, 1).unwrap();
        for (a, b) in tape.value(y).data().iter().zip(tape.value(y2).data()) {
            prop_assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn masked_softmax_zeroes_masked_entries_exactly(
        t in tensor_2d(5, 5),
        mask_bits in proptest::collection::vec(any::<bool>(), 25),
    ) {
        let mut allow = mask_bits;
        for i in 0..5 {
            allow[i * 5 + i] = true; // diagonal always attends
        }
        let mut tape = Tape::new();
        let x = tape.leaf(t);
        let y = tape.masked_softmax_rows(x, Arc::new(allow.clone())).unwrap();
        for i in 0..5 {
            let mut sum = 0.0;
            for j in 0..5 {
                let v = tape.value(y).at2(i, j);
                if !allow[i * 5 + j] {
                    prop_assert_eq!(v, 0.0);
                }
                sum += v;
            }
            prop_assert!((sum - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn ops_never_mutate_inputs(a in tensor_2d(3, 3), b in tensor_2d(3, 3)) {
        let snap_a = a.data().to_vec();
        let snap_b = b.data().to_vec();
        let mut tape = Tape::new();
        let na = tape.leaf(a);
        let nb = tape.leaf(b);
        let mm = tape.matmul(na, nb).unwrap();
        let g = tape.gelu(mm);
        let s = tape.softmax(g, 1).unwrap();
        let m = tape.mul(s, s).unwrap();
        let l = tape.sum_all(m);
        tape.backward(l).unwrap();
        prop_assert_eq!(tape.value(na).data(), snap_a.as_slice());
        prop_assert_eq!(tape.value(nb).data(), snap_b.as_slice());
    }

    #[test]
    fn recall_is_invariant_under_joint_permutation(seed in 0u64..500) {
        let n = 10;
        let mut rng = Rng::new(seed);
        let m = Tensor::randn(vec![n, n], 1.0, &mut rng);
        let r0 = recall_at_k(&m, &[1, 3]).unwrap();
        let mut perm: Vec<usize> = (0..n).collect();
        for i in 0..n {
            let j = i + rng.below(n - i);
            perm.swap(i, j);
        }
        let mut pd = vec![0.0; n * n];
        for i in 0..n {
            for j in 0..n {
                pd[i * n + j] = m.at2(perm[i], perm[j]);
            }
        }
        let r1 = recall_at_k(&Tensor::new(vec![n, n], pd).unwrap(), &[1, 3]).unwrap();
        prop_assert_eq!(r0.text, r1.text);
        prop_assert_eq!(r0.image, r1.image);
    }

    #[test]
    fn masking_never_touches_specials_or_regions(seed in 0u64..500, rate in 0.0f64..=1.0) {
        let triple = Triple {
            word_ids: vec![CLS, 10, 11, SEP],
            tag_ids: vec![7, 8, SEP],
            region_vecs: vec![vec![0.5; 6], vec![0.25; 6]],
        };
        let mut rng = Rng::new(seed);
        let m = sample_mtl_mask(&triple, rate, None, MaskScheme::Plain, 32, false, &mut rng).unwrap();
        let layout = triple.layout();
        for &p in &m.masked_positions {
            prop_assert!(p < layout.discrete_len());
            let original = if layout.words.contains(&p) {
                triple.word_ids[p]
            } else {
                triple.tag_ids[p - layout.tags.start]
            };
            prop_assert!(original >= NUM_SPECIAL);
        }
        // untouched positions keep their ids, regions never change
        prop_assert_eq!(&m.triple.region_vecs, &triple.region_vecs);
        prop_assert_eq!(m.triple.word_ids[0], CLS);
        prop_assert_eq!(*m.triple.word_ids.last().unwrap(), SEP);
        prop_assert_eq!(*m.triple.tag_ids.last().unwrap(), SEP);
    }

    #[test]
    fn corpus_roundtrip_is_bit_exact(seed in 0u64..60) {
        let world = build_world(WorldConfig::default(), 3).unwrap();
        let corpus = sample_corpus(
            &world,
            &CorpusConfig { size: 8, ..CorpusConfig::default() },
            seed,
        ).unwrap();
        let triples = corpus.to_triples();
        let path = std::env::temp_dir().join(format!("oscar_prop_{seed}.osct"));
        save_corpus(&triples, &path).unwrap();
        let loaded = load_corpus(&path).unwrap();
        std::fs::remove_file(&path).ok();
        prop_assert_eq!(&loaded, &triples);
        for (a, b) in loaded.iter().zip(&triples) {
            for (x, y) in a.region_vecs.iter().flatten().zip(b.region_vecs.iter().flatten()) {
                prop_assert_eq!(x.to_bits(), y.to_bits());
            }
        }
    }
}
