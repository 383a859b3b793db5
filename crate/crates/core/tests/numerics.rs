mod common;

use common::*;
use omni_core::numerics::gradcheck::check_gradients;
use omni_core::numerics::{
    adam_step, load_checkpoint, save_checkpoint, AdamConfig, AdamState, Graph, ParamStore,
    SplitMix64, Tensor,
};
use proptest::prelude::*;

#[test]
fn every_op_matches_finite_differences() {
    for c in op_suite() {
        for seed in 1..4 {
            let r = check_case(&c, seed).unwrap();
            assert!(r.max_rel_err < 1e-4, "{} seed {seed}: {:?}", c.name, r);
        }
    }
}

#[test]
fn mlp_matches_finite_differences() {
    let shapes: Vec<Vec<usize>> = MLP_SHAPES.iter().map(|s| s.to_vec()).collect();
    let r = check_gradients(mlp_loss, &random_inputs(&shapes, 11), 1e-6).unwrap();
    assert!(r.max_rel_err < 1e-4, "{r:?}");
    assert_eq!(r.checked, 5 * 4 + 4 * 6 + 6 + 6 * 3 + 3);
}

#[test]
fn detach_blocks_gradient() {
    let mut g = Graph::new();
    let x = g.param(Tensor::from_vec(vec![1.0, -2.0]));
    let d = g.detach(x);
    let y = g.mul(x, d).unwrap();
    let s = g.sum(y).unwrap();
    g.backward(s).unwrap();
    assert_eq!(g.grad(x).unwrap(), &[1.0, -2.0]);
}

#[test]
fn straight_through_forward_quantized_backward_identity() {
    let mut g = Graph::new();
    let x = g.param(Tensor::from_vec(vec![0.3, 0.7]));
    let q = g.straight_through(x, Tensor::from_vec(vec![0.0, 1.0])).unwrap();
    assert_eq!(g.value(q).data(), &[0.0, 1.0]);
    let w = g.constant(Tensor::from_vec(vec![2.0, -3.0]));
    let y = g.mul(q, w).unwrap();
    let s = g.sum(y).unwrap();
    g.backward(s).unwrap();
    assert_eq!(g.grad(x).unwrap(), &[2.0, -3.0]);
}

#[test]
fn seeded_training_is_bit_reproducible() {
    let run = || {
        let mut rng = SplitMix64::new(99);
        let mut store = ParamStore::new();
        for (i, s) in MLP_SHAPES.iter().enumerate().skip(1) {
            store.insert_normal(&format!("p{i}"), "mlp", s, 0.5, &mut rng);
        }
        let x = Tensor::new(vec![5, 4], rng.normal_vec(20, 1.0)).unwrap();
        let mut adam = AdamState::new(AdamConfig::with_lr(1e-2));
        let mut losses = Vec::new();
        for _ in 0..20 {
            let mut g = Graph::new();
            let b = store.bind(&mut g);
            let xv = g.constant(x.clone());
            let vars = [xv, b.get("p1").unwrap(), b.get("p2").unwrap(), b.get("p3").unwrap(), b.get("p4").unwrap()];
            let l = mlp_loss(&mut g, &vars).unwrap();
            losses.push(g.value(l).item().unwrap());
            g.backward(l).unwrap();
            store.pull_grads(&g, &b);
            adam_step(&mut store, &mut adam).unwrap();
            store.zero_grads();
        }
        (losses, store.checksums())
    };
    let (a, b) = (run(), run());
    assert_eq!(a, b);
    assert!(a.0.last().unwrap() < &a.0[0]);
}

#[test]
fn checkpoint_file_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("m.ckpt");
    let entries = vec![
        ("a".to_string(), Tensor::new(vec![2, 2], vec![1.0, -0.0, f64::MIN_POSITIVE, 3.5]).unwrap()),
        ("b.c".to_string(), Tensor::scalar(7.0)),
    ];
    save_checkpoint(&path, &entries).unwrap();
    assert_eq!(load_checkpoint(&path).unwrap(), entries);
    let bytes = std::fs::read(&path).unwrap();
    assert_eq!(&bytes[..8], b"OMNICKPT");
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(12))]

    #[test]
    fn op_gradients_hold_for_random_inputs(seed in any::<u64>()) {
        for c in op_suite() {
            let r = check_case(&c, seed).unwrap();
            prop_assert!(r.max_rel_err < 1e-4, "{} seed {}: {:?}", c.name, seed, r);
        }
    }

    #[test]
    fn matmul_associates_with_transpose(seed in any::<u64>()) {
        let ins = random_inputs(&[vec![3, 4], vec![4, 2]], seed);
        let mut g = Graph::new();
        let a = g.constant(ins[0].clone());
        let b = g.constant(ins[1].clone());
        let ab = g.matmul(a, b).unwrap();
        let abt = g.transpose(ab).unwrap();
        let at = g.transpose(a).unwrap();
        let bt = g.transpose(b).unwrap();
        let btat = g.matmul(bt, at).unwrap();
        prop_assert!(g.value(abt).max_abs_diff(g.value(btat)) < 1e-12);
    }
}
