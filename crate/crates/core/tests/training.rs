use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rvf_core::dataset::simulate_samples;
use rvf_core::model::{pyramid_sizes, HeadOutput, LevelOutput, Model, ModelConfig, STRIDES};
use rvf_core::scene_sim::SimConfig;
use rvf_core::train::loss::*;
use rvf_core::train::targets::*;
use rvf_core::train::{batch_loss, train, TrainConfig};
use rvf_tensor::gradcheck::{grad_check, GradCheckConfig};
use rvf_tensor::Tensor;

const INPUT: usize = 64;

fn level_sizes() -> Vec<(usize, usize)> {
    pyramid_sizes(INPUT).iter().map(|&s| (s, s)).collect()
}

fn targets_for(boxes: &[[f64; 4]]) -> TargetMap {
    let gts: Vec<GtBox> = boxes.iter().map(|&bbox| GtBox { bbox, class: 0 }).collect();
    assign_targets(&gts, &level_sizes(), &STRIDES, INPUT).unwrap()
}

fn sample_targets() -> Vec<TargetMap> {
    vec![
        targets_for(&[[4.0, 6.0, 30.0, 20.0], [33.0, 30.0, 60.0, 62.0]]),
        targets_for(&[[10.0, 10.0, 19.0, 17.0]]),
    ]
}

/// Random head outputs for a batch; `reg` values are positive.
fn random_head(n: usize, seed: u64) -> Vec<Tensor> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::new();
    for s in pyramid_sizes(INPUT) {
        let hw = s * s;
        out.push(Tensor::new(&[n, 1, s, s], (0..n * hw).map(|_| rng.random_range(-3.0..1.0)).collect()).unwrap());
        out.push(Tensor::new(&[n, 4, s, s], (0..n * 4 * hw).map(|_| rng.random_range(0.5..40.0)).collect()).unwrap());
        out.push(Tensor::new(&[n, 1, s, s], (0..n * hw).map(|_| rng.random_range(-2.0..2.0)).collect()).unwrap());
    }
    out
}

fn head_of(t: &[Tensor]) -> HeadOutput {
    HeadOutput {
        levels: t
            .chunks(3)
            .zip(STRIDES)
            .map(|(c, stride)| LevelOutput { stride, cls: c[0].clone(), reg: c[1].clone(), ctr: c[2].clone() })
            .collect(),
    }
}

fn concat_batch(a: &[Tensor], b: &[Tensor]) -> Vec<Tensor> {
    a.iter()
        .zip(b)
        .map(|(x, y)| {
            let mut shape = x.shape().to_vec();
            shape[0] += y.shape()[0];
            Tensor::new(&shape, [x.data(), y.data()].concat()).unwrap()
        })
        .collect()
}

#[test]
fn loss_gradients_match_differences() {
    let targets = sample_targets();
    let inputs = random_head(2, 1);
    for (name, f) in [
        ("focal", Box::new(|h: &HeadOutput| focal_loss(h, &targets, Some(0.25), 2.0)) as Box<dyn Fn(&HeadOutput) -> _>),
        ("focal unbalanced", Box::new(|h: &HeadOutput| focal_loss(h, &targets, None, 1.5))),
        ("giou", Box::new(|h: &HeadOutput| giou_loss(h, &targets, true))),
        ("giou plain", Box::new(|h: &HeadOutput| giou_loss(h, &targets, false))),
        ("centerness", Box::new(|h: &HeadOutput| centerness_loss(h, &targets))),
        ("total", Box::new(|h: &HeadOutput| detection_loss(h, &targets, &LossConfig::default()).map(|l| l.total))),
    ] {
        let r = grad_check(
            |t| Ok(f(&head_of(t)).map_err(|e| rvf_tensor::TensorError::InvalidArgument(e.to_string()))?),
            &inputs,
            GradCheckConfig::directional(12, 5),
        )
        .unwrap();
        assert!(r.max_rel_error < 1e-6, "{name}: {r:?}");
    }
}

#[test]
fn closed_form_examples() {
    let (v, _) = focal_term(0.0, true, Some(0.25), 2.0);
    assert!((v - 0.25 * 0.25 * std::f64::consts::LN_2).abs() < 1e-15);
    assert!((v - 0.043322).abs() < 5e-7);

    // [0,0,2,2] vs [1,1,3,3] seen from (1.5, 1.5)
    let (g, _) = giou_term([1.5, 1.5, 0.5, 0.5], [0.5, 0.5, 1.5, 1.5]);
    assert!((g - (2.0 - 1.0 / 7.0 - 7.0 / 9.0)).abs() < 1e-12);
    assert!((g - 1.079365).abs() < 1e-6);
}

#[test]
fn single_positive_centerness_is_ln2() {
    // one positive at the exact center of a square box
    let t = targets_for(&[[0.0, 0.0, 8.0, 8.0]]);
    assert_eq!(t.num_pos(), 1);
    let lvl0 = t.levels[0].ctr.iter().position(|&c| c > 0.0).unwrap();
    assert_eq!(t.levels[0].ctr[lvl0], 1.0);
    let inputs: Vec<Tensor> = pyramid_sizes(INPUT)
        .iter()
        .flat_map(|&s| [Tensor::zeros(&[1, 1, s, s]), Tensor::full(&[1, 4, s, s], 1.0), Tensor::zeros(&[1, 1, s, s])])
        .collect();
    let v = centerness_loss(&head_of(&inputs), &[t]).unwrap().item();
    assert!((v - std::f64::consts::LN_2).abs() < 1e-12);
}

#[test]
fn duplicated_batch_keeps_loss() {
    let targets = sample_targets();
    let one = random_head(2, 7);
    let two = concat_batch(&one, &one);
    let doubled: Vec<TargetMap> = targets.iter().chain(&targets).cloned().collect();
    let cfg = LossConfig::default();
    let a = detection_loss(&head_of(&one), &targets, &cfg).unwrap();
    let b = detection_loss(&head_of(&two), &doubled, &cfg).unwrap();
    assert!((a.total.item() - b.total.item()).abs() < 1e-12 * a.total.item().abs());
    assert_eq!(b.num_pos, 2 * a.num_pos);
}

#[test]
fn no_ground_truth_means_no_box_terms() {
    let empty = vec![targets_for(&[])];
    let l = detection_loss(&head_of(&random_head(1, 3)), &empty, &LossConfig::default()).unwrap();
    assert_eq!(l.num_pos, 0);
    assert_eq!((l.reg, l.centerness), (0.0, 0.0));
    assert!(l.cls > 0.0);
}

#[test]
fn box_terms_touch_exactly_the_positives() {
    let targets = sample_targets();
    let inputs: Vec<Tensor> = random_head(2, 4).iter().map(|t| Tensor::parameter(t.shape(), t.data().to_vec()).unwrap()).collect();
    let head = head_of(&inputs);
    let reg = giou_loss(&head, &targets, false).unwrap();
    let ctr = centerness_loss(&head, &targets).unwrap();
    rvf_tensor::add(&reg, &ctr).unwrap().backward().unwrap();
    let n_pos: usize = targets.iter().map(TargetMap::num_pos).sum();
    let touched_ctr: usize = inputs.chunks(3).map(|c| c[2].grad_or_zeros().iter().filter(|&&g| g != 0.0).count()).sum();
    let touched_reg: usize = inputs
        .chunks(3)
        .map(|c| {
            let g = c[1].grad_or_zeros();
            let [n, _, h, w]: [usize; 4] = c[1].shape().try_into().unwrap();
            (0..n * h * w).filter(|&i| (0..4).any(|j| g[((i / (h * w)) * 4 + j) * h * w + i % (h * w)] != 0.0)).count()
        })
        .sum();
    assert!(n_pos > 0);
    assert_eq!(touched_ctr, n_pos);
    assert_eq!(touched_reg, n_pos);
}

#[test]
fn targets_decode_to_zero_giou() {
    let targets = sample_targets();
    let mut inputs = random_head(2, 9);
    for (l, chunk) in inputs.chunks_mut(3).enumerate() {
        let mut data = chunk[1].data().to_vec();
        let [n, _, h, w]: [usize; 4] = chunk[1].shape().try_into().unwrap();
        let hw = h * w;
        for (b, t) in targets.iter().enumerate().take(n) {
            for i in 0..hw {
                if t.levels[l].is_pos(i) {
                    for j in 0..4 {
                        data[(b * 4 + j) * hw + i] = t.levels[l].reg[i][j];
                    }
                }
            }
        }
        chunk[1] = Tensor::new(chunk[1].shape(), data).unwrap();
    }
    assert!(giou_loss(&head_of(&inputs), &targets, true).unwrap().item().abs() < 1e-12);
}

#[test]
fn zero_lambda_leaves_focal_only() {
    let targets = sample_targets();
    let head = head_of(&random_head(2, 2));
    let cfg = LossConfig { lambda_reg: 0.0, centerness_loss: false, ..LossConfig::default() };
    let l = detection_loss(&head, &targets, &cfg).unwrap();
    assert_eq!(l.total.item(), focal_loss(&head, &targets, Some(0.25), 2.0).unwrap().item());
}

fn tiny_config(iterations: usize) -> TrainConfig {
    TrainConfig {
        iterations,
        batch_pairs: 2,
        eval_interval: 0,
        model: ModelConfig { input_size: INPUT, width_mult: 0.0625, ..ModelConfig::default() },
        ..TrainConfig::default()
    }
}

#[test]
fn random_init_loss_is_finite() {
    let samples = simulate_samples(&SimConfig::desk(INPUT as u32), 3).unwrap();
    let model = Model::new(tiny_config(1).model).unwrap();
    let l = batch_loss(&model, &samples, &LossConfig::default()).unwrap();
    assert!(l.total.item().is_finite() && l.total.item() > 0.0);
}

#[test]
fn zero_learning_rate_keeps_weights() {
    let samples = simulate_samples(&SimConfig::desk(INPUT as u32), 4).unwrap();
    let cfg = TrainConfig { lr: 0.0, ..tiny_config(3) };
    let mut model = Model::new(cfg.model.clone()).unwrap();
    let before = model.to_weights_bytes().unwrap();
    train(&mut model, &samples, &[], &cfg, |_| {}).unwrap();
    assert!(model.to_weights_bytes().unwrap() == before);
}

#[test]
fn training_is_deterministic() {
    let samples = simulate_samples(&SimConfig::desk(INPUT as u32), 4).unwrap();
    let cfg = tiny_config(4);
    let run = || {
        let mut m = Model::new(cfg.model.clone()).unwrap();
        let out = train(&mut m, &samples, &samples[..1], &cfg, |_| {}).unwrap();
        (out.losses, m.to_weights_bytes().unwrap(), serde_json::to_string(&out.evals[0].1).unwrap())
    };
    let (a, b) = (run(), run());
    assert_eq!(a.0, b.0);
    assert!(a.1 == b.1);
    assert_eq!(a.2, b.2);
    assert!(a.0.iter().all(|r| r.total.is_finite()));
}

#[test]
fn divergence_is_reported_with_iteration() {
    let samples = simulate_samples(&SimConfig::desk(INPUT as u32), 2).unwrap();
    let cfg = TrainConfig { lr: 1e6, ..tiny_config(50) };
    let mut model = Model::new(cfg.model.clone()).unwrap();
    let err = train(&mut model, &samples, &[], &cfg, |_| {}).unwrap_err();
    assert!(err.is_numerical(), "{err}");
    assert!(err.to_string().contains("iteration"), "{err}");
}

#[test]
fn pyramid_shapes_follow_strides() {
    for size in [128usize, 256] {
        let model = Model::new(ModelConfig { input_size: size, width_mult: 0.0625, ..ModelConfig::default() }).unwrap();
        let x = Tensor::zeros(&[1, 3, size, size]);
        let head = rvf_tensor::no_grad(|| model.forward(&x, &x)).unwrap();
        let got: Vec<usize> = head.levels.iter().map(|l| l.cls.shape()[2]).collect();
        let expect: Vec<usize> = STRIDES.iter().map(|&s| size.div_ceil(s)).collect();
        assert_eq!(got, expect);
    }
    assert_eq!(pyramid_sizes(800), [100, 50, 25, 13, 7]);
}

#[test]
fn weights_round_trip_within_f32_rounding() {
    let model = Model::new(ModelConfig { seed: 4, ..ModelConfig::default() }).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("w.rvpw");
    model.save_weights(&path).unwrap();
    let back = Model::load_weights(&path).unwrap();
    let max_w = model.params.tensors.iter().flat_map(|t| t.data().iter()).fold(0.0f64, |a, &v| a.max(v.abs()));
    for (a, b) in model.params.tensors.iter().zip(&back.params.tensors) {
        for (x, y) in a.data().iter().zip(b.data()) {
            assert!((x - y).abs() <= 2f64.powi(-23) * max_w);
        }
    }
    let bytes = std::fs::read(&path).unwrap();
    assert!(Model::from_weights_bytes(&bytes[..bytes.len() - 3]).is_err());
    let mut bad = bytes.clone();
    bad[0] = b'X';
    assert!(Model::from_weights_bytes(&bad).is_err());
    std::fs::write(&path, &bytes[..bytes.len() / 2]).unwrap();
    assert!(Model::load_weights(&path).is_err());
}
