use proptest::prelude::*;

use nfa_core::backbone::{Checkpoint, Network, NetworkSpec};
use nfa_core::data::{synthesize, Dataset, SyntheticConfig};
use nfa_core::nfa::ForwardCtx;
use nfa_core::eval::BinaryMap;
use nfa_core::numerics::{Graph, ParamStore, Tensor};
use nfa_core::training::{
    adagrad_step, cosine_annealing, object_fragmentation, regularizer_weight, train, train_step, write_log_csv, TrainConfig, ADAGRAD_EPS,
};
use nfa_core::Error;

fn tiny(count: usize, seed: u64) -> Dataset {
    Dataset::from_samples(
        synthesize(&SyntheticConfig {
            size: 32,
            count,
            seed,
            ..Default::default()
        })
        .unwrap(),
    )
}

fn loss_of(pred: &[f64], target: &[f64], tv: bool) -> f64 {
    let n = pred.len();
    let mut g = Graph::new();
    let p = g.constant(Tensor::new([1, 1, 1, n], pred.to_vec()).unwrap());
    let t = g.constant(Tensor::new([1, 1, 1, n], target.to_vec()).unwrap());
    let l = if tv { g.tv_regularizer(p) } else { g.soft_iou_loss(p, t).unwrap() };
    g.value(l).item().unwrap()
}

#[test]
fn soft_iou_examples() {
    let t = [1.0, 0.0, 0.0, 1.0, 1.0];
    assert!(loss_of(&t, &t, false).abs() < 1e-5);
    let inv: Vec<f64> = t.iter().map(|v| 1.0 - v).collect();
    assert!((loss_of(&inv, &t, false) - 1.0).abs() < 1e-5);
    let mut g = Graph::new();
    let a = g.constant(Tensor::zeros([1, 1, 2, 2]));
    let b = g.constant(Tensor::zeros([1, 1, 2, 3]));
    assert!(g.soft_iou_loss(a, b).is_err());
}

#[test]
fn tv_examples() {
    let mut g = Graph::new();
    let c = g.constant(Tensor::full([1, 1, 4, 5], 0.3));
    let tv = g.tv_regularizer(c);
    assert_eq!(g.value(tv).item().unwrap(), 0.0);
    // step 0 -> 1 between columns 2 and 3 of a 4x6 map
    let step = g.constant(Tensor::from_fn([1, 1, 4, 6], |_, _, _, x| (x >= 3) as u8 as f64));
    let tv = g.tv_regularizer(step);
    assert!((g.value(tv).item().unwrap() - 1.0 / 5.0).abs() < 1e-15);
}

#[test]
fn adagrad_examples() {
    let mut store = ParamStore::new();
    store.add("p", Tensor::scalar(1.0)).unwrap();
    store.add("q", Tensor::scalar(2.0)).unwrap();
    store.get_mut("p").unwrap().tensor.grad = Some(vec![0.5]);
    store.get_mut("q").unwrap().tensor.grad = Some(vec![0.0]);
    adagrad_step(&mut store, 0.1, ADAGRAD_EPS);
    let p = store.get("p").unwrap();
    assert_eq!(p.accumulator, vec![0.25]);
    assert!((p.tensor.data()[0] - 0.9).abs() < 1e-9);
    assert_eq!(store.get("q").unwrap().tensor.data()[0], 2.0);
    let first = 1.0 - p.tensor.data()[0];
    store.get_mut("p").unwrap().tensor.grad = Some(vec![0.5]);
    let before = store.get("p").unwrap().tensor.data()[0];
    adagrad_step(&mut store, 0.1, ADAGRAD_EPS);
    let second = before - store.get("p").unwrap().tensor.data()[0];
    assert!(second < first);
}

#[test]
fn cosine_examples() {
    assert_eq!(cosine_annealing(0.1, 0.001, 0, 50).unwrap(), 0.1);
    assert!((cosine_annealing(0.1, 0.001, 50, 50).unwrap() - 0.001).abs() < 1e-15);
    assert!((cosine_annealing(0.1, 0.001, 25, 50).unwrap() - 0.0505).abs() < 1e-15);
    assert!(cosine_annealing(0.1, 0.001, 51, 50).is_err());
}

#[test]
fn zero_epochs_return_the_initialization() {
    let data = tiny(5, 1);
    let cfg = TrainConfig { epochs: 0, seed: 3, ..Default::default() };
    let out = train(&NetworkSpec::default(), &data, &cfg).unwrap();
    let init = Network::new(&NetworkSpec::default(), 3).unwrap();
    assert_eq!(out.best.network, init);
    assert_eq!(out.last.network, init);
    assert_eq!(out.best.epoch, 0);
    assert!(out.log.is_empty());
}

#[test]
fn same_seed_same_log_and_bytes() {
    let data = tiny(10, 2);
    let cfg = TrainConfig { epochs: 3, seed: 11, ..Default::default() };
    let a = train(&NetworkSpec::default(), &data, &cfg).unwrap();
    let b = train(&NetworkSpec::default(), &data, &cfg).unwrap();
    assert_eq!(a.log, b.log);
    assert_eq!(a.best.to_bytes(), b.best.to_bytes());
    assert_eq!(a.last.to_bytes(), b.last.to_bytes());
    let c = train(&NetworkSpec::default(), &data, &TrainConfig { seed: 12, ..cfg }).unwrap();
    assert_ne!(a.log, c.log);
}

#[test]
fn log_csv_layout() {
    let data = tiny(5, 4);
    let out = train(&NetworkSpec::plain(), &data, &TrainConfig { epochs: 2, ..Default::default() }).unwrap();
    let mut buf = Vec::new();
    write_log_csv(&out.log, &mut buf).unwrap();
    let text = String::from_utf8(buf).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines[0], "epoch,loss,lr,val_f1,val_ap");
    assert_eq!(lines.len(), 3);
    assert!(lines[1].starts_with("1,"));
}

#[test]
fn best_checkpoint_has_the_best_validation_f1() {
    let data = tiny(10, 6);
    let out = train(&NetworkSpec::plain(), &data, &TrainConfig { epochs: 6, lr: 0.05, ..Default::default() }).unwrap();
    let best = out.log.iter().map(|e| e.val_f1).fold(f64::NEG_INFINITY, f64::max);
    let first = out.log.iter().find(|e| e.val_f1 == best).unwrap();
    assert_eq!(out.best.epoch, first.epoch);
    assert_eq!(out.last.epoch, 6);
}

/// With the regularizer weight at 0, one step equals Adagrad applied to the
/// soft-IoU gradient alone.
#[test]
fn zero_regularizer_is_plain_soft_iou() {
    let data = tiny(4, 8);
    let mut spec = NetworkSpec::default();
    spec.nfa.reg_weight = 0.0;
    assert_eq!(regularizer_weight(&spec), 0.0);
    assert_eq!(regularizer_weight(&NetworkSpec::plain()), 0.0);
    let images = Tensor::stack_batch(&data.train.iter().map(|s| s.image.clone()).collect::<Vec<_>>()).unwrap();
    let masks = Tensor::stack_batch(&data.train.iter().map(|s| s.mask.clone()).collect::<Vec<_>>()).unwrap();

    let mut stepped = Network::new(&spec, 5).unwrap();
    let loss = train_step(&mut stepped, images.clone(), masks.clone(), 0.01, regularizer_weight(&spec)).unwrap();

    let mut manual = Network::new(&spec, 5).unwrap();
    let mut g = Graph::new();
    let x = g.constant(images);
    let y = g.constant(masks);
    let out = manual.forward(&mut g, x, &mut ForwardCtx::train()).unwrap();
    let l = g.soft_iou_loss(out.scores, y).unwrap();
    assert_eq!(g.value(l).item().unwrap(), loss);
    manual.params.zero_grad();
    g.backward(l, &mut manual.params).unwrap();
    adagrad_step(&mut manual.params, 0.01, ADAGRAD_EPS);
    for (a, b) in stepped.params.iter().zip(manual.params.iter()) {
        assert_eq!(a.tensor.data(), b.tensor.data(), "{}", a.name);
    }
}

#[test]
fn non_finite_input_aborts_with_a_diagnostic() {
    let mut data = tiny(4, 9);
    data.train[1].image.data_mut()[5] = f64::NAN;
    let cfg = TrainConfig { epochs: 1, batch_size: 1, flips: false, ..Default::default() };
    let err = train(&NetworkSpec::plain(), &data, &cfg).unwrap_err();
    let Error::Numerical(msg) = &err else { panic!("{err}") };
    assert!(msg.contains("epoch 1"), "{msg}");
    assert!(msg.contains("batch "), "{msg}");
    assert!(msg.contains("norms"), "{msg}");
}

#[test]
fn invalid_configs_are_rejected() {
    let data = tiny(4, 0);
    for cfg in [
        TrainConfig { lr: 0.0, ..Default::default() },
        TrainConfig { batch_size: 0, ..Default::default() },
        TrainConfig { lr_min: 1.0, lr: 0.1, ..Default::default() },
    ] {
        assert_eq!(train(&NetworkSpec::plain(), &data, &cfg).unwrap_err().code(), "parameter");
    }
    let empty = Dataset::default();
    assert!(train(&NetworkSpec::plain(), &empty, &TrainConfig::default()).is_err());
}

#[test]
fn fragmentation_over_object_quantiles() {
    // a 1x9 bar across a 3x11 map
    let gt = BinaryMap::new(3, 11, (0..33).map(|i| i / 11 == 1 && (1..10).contains(&(i % 11))).collect()).unwrap();
    let alternating = Tensor::from_fn([1, 1, 3, 11], |_, _, y, x| {
        if y == 1 && (1..10).contains(&x) { if x % 2 == 1 { 1.0 } else { 0.5 } } else { 0.0 }
    });
    assert_eq!(object_fragmentation(&[alternating], std::slice::from_ref(&gt)).unwrap(), 5.0);
    let ramp = Tensor::from_fn([1, 1, 3, 11], |_, _, y, x| if y == 1 { x as f64 / 10.0 } else { 0.0 });
    assert_eq!(object_fragmentation(&[ramp], std::slice::from_ref(&gt)).unwrap(), 1.0);
    let flat = Tensor::full([1, 1, 3, 11], 0.7);
    assert_eq!(object_fragmentation(&[flat], &[gt]).unwrap(), 0.0);
    let none = BinaryMap::empty(3, 11);
    assert_eq!(object_fragmentation(&[Tensor::full([1, 1, 3, 11], 0.7)], &[none]).unwrap(), 0.0);
}

/// Loss medians of consecutive 50-epoch windows never rise by more than 5%.
#[test]
fn overfit_loss_trends_down() {
    let mut data = tiny(4, 21);
    data.train.append(&mut data.val);
    data.train.append(&mut data.test);
    let cfg = TrainConfig { epochs: 150, lr: 0.05, ..Default::default() };
    let out = train(&NetworkSpec::plain(), &data, &cfg).unwrap();
    let losses: Vec<f64> = out.log.iter().map(|e| e.loss).collect();
    let medians: Vec<f64> = losses
        .chunks(50)
        .map(|w| {
            let mut w = w.to_vec();
            w.sort_by(f64::total_cmp);
            w[w.len() / 2]
        })
        .collect();
    for m in medians.windows(2) {
        assert!(m[1] <= 1.05 * m[0], "{medians:?}");
    }
    assert!(medians[2] < medians[0], "{medians:?}");
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(6))]

    #[test]
    fn checkpoints_of_trained_networks_round_trip(seed in 0u64..1000) {
        let data = tiny(5, seed);
        let out = train(&NetworkSpec::default(), &data, &TrainConfig { epochs: 1, seed, ..Default::default() }).unwrap();
        // gradients left over from the last step are not persisted
        let bytes = out.last.to_bytes();
        let back = Checkpoint::from_bytes(&bytes).unwrap();
        prop_assert_eq!(back.to_bytes(), bytes);
        for (a, b) in back.network.params.iter().zip(out.last.network.params.iter()) {
            prop_assert_eq!(a.tensor.data(), b.tensor.data());
            prop_assert_eq!(&a.accumulator, &b.accumulator);
        }
    }
}
