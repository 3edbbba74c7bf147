use proptest::prelude::*;
use vhot_numerics::layers::SanmEncoderBlock;
use vhot_numerics::loss::cosine_similarity;
use vhot_numerics::{seeded_rng, Graph, ParamStore, Tensor};

fn matrix(rows: usize, cols: usize) -> impl Strategy<Value = Tensor> {
    prop::collection::vec(-50.0f64..50.0, rows * cols).prop_map(move |d| Tensor::new(vec![rows, cols], d).unwrap())
}

proptest! {
    #[test]
    fn softmax_rows_are_distributions(x in (1usize..6, 1usize..9).prop_flat_map(|(r, c)| matrix(r, c))) {
        let mut g = Graph::new();
        let n = g.constant(x);
        let y = g.softmax(n);
        let v = g.value(y);
        for i in 0..v.rows() {
            let row = v.row(i);
            prop_assert!(row.iter().all(|p| *p > 0.0));
            prop_assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-9);
        }
    }

    #[test]
    fn cosine_is_bounded(a in matrix(4, 5), b in prop::collection::vec(-50.0f64..50.0, 5)) {
        let c = cosine_similarity(&a, &b).unwrap();
        prop_assert!(c.values.iter().all(|v| v.abs() <= 1.0 + 1e-12));
    }
}

#[test]
fn same_seed_same_forward_bits() {
    let run = || {
        let mut rng = seeded_rng(42);
        let mut store = ParamStore::new();
        let blk = SanmEncoderBlock::new(&mut store, "b", 16, 4, 11, &mut rng);
        let mut g = Graph::new();
        let x = g.constant(Tensor::full(&[9, 16], 0.25));
        let y = blk.forward(&mut g, &store, x).unwrap();
        g.value(y).data().iter().map(|v| v.to_bits()).collect::<Vec<_>>()
    };
    assert_eq!(run(), run());
}
