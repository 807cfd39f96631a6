use proptest::prelude::*;

use nfa_core::backbone::{Network, NetworkSpec};
use nfa_core::numerics::{Graph, Mode, ParamStore, Tensor};

fn t(shape: [usize; 4], data: &[f64]) -> Tensor {
    Tensor::new(shape, data.to_vec()).unwrap()
}

#[test]
fn conv_of_zero_input_is_the_bias() {
    let mut g = Graph::new();
    let x = g.constant(Tensor::zeros([1, 1, 3, 3]));
    let w = g.constant(t([1, 1, 3, 3], &[0.3, -1.0, 2.0, 0.1, 0.5, 0.7, -0.2, 0.9, 1.1]));
    let b = g.constant(Tensor::scalar(-0.25));
    let y = g.conv2d(x, w, Some(b), 1, 1).unwrap();
    assert!(g.value(y).data().iter().all(|&v| v == -0.25));
}

#[test]
fn identity_kernel_copies_the_input() {
    let mut g = Graph::new();
    let data: Vec<f64> = (0..20).map(|i| (i as f64 * 0.37).sin()).collect();
    let x = g.constant(t([1, 1, 4, 5], &data));
    let mut k = vec![0.0; 9];
    k[4] = 1.0;
    let w = g.constant(t([1, 1, 3, 3], &k));
    let y = g.conv2d(x, w, None, 1, 1).unwrap();
    assert_eq!(g.value(y).data(), &data[..]);
}

#[test]
fn batch_norm_of_constant_channels_is_beta() {
    let mut g = Graph::new();
    let x = g.constant(Tensor::from_fn([2, 2, 3, 3], |_, c, _, _| 4.0 + c as f64));
    let gamma = g.constant(t([1, 2, 1, 1], &[1.7, 0.4]));
    let beta = g.constant(t([1, 2, 1, 1], &[0.25, -0.5]));
    let mut running = vec![0.0, 0.0, 1.0, 1.0];
    let y = g.batch_norm(x, gamma, beta, &mut running, Mode::Train).unwrap();
    let out = g.value(y);
    for n in 0..2 {
        assert!(out.plane(n, 0).iter().all(|&v| (v - 0.25).abs() < 1e-12));
        assert!(out.plane(n, 1).iter().all(|&v| (v + 0.5).abs() < 1e-12));
    }
}

#[test]
fn batch_norm_leaves_standardized_input_alone() {
    // values ±1 in equal numbers per channel: zero mean, unit variance
    let x = Tensor::from_fn([2, 3, 2, 2], |n, c, y, x| if (n + c + y + x) % 2 == 0 { 1.0 } else { -1.0 });
    let mut g = Graph::new();
    let xv = g.constant(x.clone());
    let gamma = g.constant(Tensor::full([1, 3, 1, 1], 1.0));
    let beta = g.constant(Tensor::zeros([1, 3, 1, 1]));
    let mut running = vec![0.0, 0.0, 0.0, 1.0, 1.0, 1.0];
    let y = g.batch_norm(xv, gamma, beta, &mut running, Mode::Train).unwrap();
    assert!(g.value(y).max_abs_diff(&x) < 1e-3);
}

#[test]
fn small_shape_ops() {
    let mut g = Graph::new();
    let x = g.constant(t([1, 1, 1, 3], &[-1.0, 0.0, 2.0]));
    let r = g.relu(x);
    assert_eq!(g.value(r).data(), &[0.0, 0.0, 2.0]);
    let p = g.constant(t([1, 1, 2, 2], &[1.0, 2.0, 3.0, 4.0]));
    let m = g.maxpool2x2(p).unwrap();
    assert_eq!(g.value(m).data(), &[4.0]);
}

#[test]
fn upsampling_constant_and_identity() {
    let mut g = Graph::new();
    let c = g.constant(Tensor::full([1, 2, 3, 3], 0.7));
    let up = g.upsample_bilinear(c, 4).unwrap();
    assert_eq!(g.shape(up).dims(), [1, 2, 12, 12]);
    assert!(g.value(up).data().iter().all(|&v| (v - 0.7).abs() < 1e-15));
    let data: Vec<f64> = (0..9).map(f64::from).collect();
    let x = g.constant(t([1, 1, 3, 3], &data));
    let same = g.upsample_bilinear(x, 1).unwrap();
    assert_eq!(g.value(same).data(), &data[..]);
}

#[test]
fn gradient_of_a_dot_product_is_the_other_factor() {
    let xs = [0.5, -2.0, 3.0, 0.25];
    let mut store = ParamStore::new();
    store.add("w", Tensor::new([1, 1, 1, 4], vec![1.0, 1.0, -1.0, 2.0]).unwrap()).unwrap();
    let run = |store: &mut ParamStore| {
        let mut g = Graph::new();
        let w = g.param(store, "w").unwrap();
        let x = g.constant(t([1, 1, 1, 4], &xs));
        let p = g.mul(w, x).unwrap();
        let l = g.sum(p);
        g.backward(l, store).unwrap();
    };
    run(&mut store);
    assert_eq!(store.get("w").unwrap().tensor.grad.as_deref(), Some(&xs[..]));
    run(&mut store);
    let doubled: Vec<f64> = xs.iter().map(|v| 2.0 * v).collect();
    assert_eq!(store.get("w").unwrap().tensor.grad.as_deref(), Some(&doubled[..]));
}

#[test]
fn backward_rejects_non_scalar_losses() {
    let mut g = Graph::new();
    let x = g.input(Tensor::zeros([1, 1, 2, 2]).with_requires_grad(true));
    assert!(g.backward(x, &mut ParamStore::new()).is_err());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn forward_is_bit_identical_across_runs(seed in 0u64..1000, level in 0.0f64..1.0) {
        let spec = NetworkSpec::default();
        let image = Tensor::from_fn([1, 1, 16, 16], |_, _, y, x| level + ((y * 16 + x) as f64 * 0.31).sin() * 0.1);
        let mut a = Network::new(&spec, seed).unwrap();
        let mut b = Network::new(&spec, seed).unwrap();
        let pa = a.predict(&image, Mode::Eval).unwrap();
        let pb = b.predict(&image, Mode::Eval).unwrap();
        let bits = |t: &Tensor| t.data().iter().map(|v| v.to_bits()).collect::<Vec<_>>();
        prop_assert_eq!(bits(&pa.scores), bits(&pb.scores));
    }

    #[test]
    fn finite_inputs_give_finite_outputs_and_gradients(
        seed in 0u64..1000,
        data in proptest::collection::vec(-50.0f64..50.0, 256),
        plain in any::<bool>(),
    ) {
        let spec = if plain { NetworkSpec::plain() } else { NetworkSpec::default() };
        let mut net = Network::new(&spec, seed).unwrap();
        let image = Tensor::new([1, 1, 16, 16], data).unwrap();
        let mask = Tensor::from_fn([1, 1, 16, 16], |_, _, y, x| (y == 8 && x == 8) as u8 as f64);
        let mut g = Graph::new();
        let x = g.constant(image);
        let y = g.constant(mask);
        let mut ctx = nfa_core::nfa::ForwardCtx::train();
        let o = net.forward(&mut g, x, &mut ctx).unwrap();
        prop_assert!(g.value(o.scores).is_finite());
        let l = g.soft_iou_loss(o.scores, y).unwrap();
        g.backward(l, &mut net.params).unwrap();
        for p in net.params.iter() {
            let grad = p.tensor.grad.as_ref().unwrap();
            prop_assert!(grad.iter().all(|v| v.is_finite()), "{} has a non-finite gradient", p.name);
        }
    }
}
