use loopscope_core::lens::*;
use loopscope_core::math::{self, Matrix};
use loopscope_core::model::{build_toy_model, Model};
use loopscope_core::TokenId;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const TEXT: &str = include_str!("data/sentences.txt");

fn corpus() -> Vec<Vec<TokenId>> {
    TEXT.lines().filter(|l| !l.is_empty()).map(|l| l.bytes().map(TokenId::from).collect()).collect()
}

fn examples(model: &Model, seqs: &[Vec<TokenId>]) -> Vec<LensExample> {
    seqs.iter().map(|s| lens_example(model, s).unwrap()).collect()
}

/// Same capture, but every head's update replaced by the final residual.
fn residual_as_update(ex: &LensExample, n_slots: usize) -> LensExample {
    let mut out = ex.clone();
    out.heads.updates = ex.heads.final_residual.repeat(n_slots);
    out
}

fn perturbed_identity(d: usize, scale: f32, rng: &mut ChaCha8Rng) -> Matrix {
    let mut m = Matrix::identity(d);
    for v in &mut m.data {
        *v += rng.random_range(-scale..scale);
    }
    m
}

#[test]
fn analytic_gradient_matches_finite_differences() {
    let model = build_toy_model(7);
    let d = model.config().d_model;
    let ex = lens_example(&model, &[72, 101, 108, 108, 111, 32, 116]).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let w = perturbed_identity(d, 0.05, &mut rng);
    let b: Vec<f32> = (0..d).map(|_| rng.random_range(-0.1..0.1)).collect();
    let a = ex.heads.update(1, 2).to_vec();
    let (_, g_z) = kl_and_grad(&model, &w, &b, &a, &ex.target);
    let kl =
        |w: &Matrix, b: &[f32]| math::kl_to_logits(&ex.target, &model.logits_from_residual(&w.matvec(&a, Some(b))));
    let h = 1e-2f32;
    for i in [0, 5, 17, 40, 63] {
        let (mut bp, mut bm) = (b.clone(), b.clone());
        bp[i] += h;
        bm[i] -= h;
        let fd = (kl(&w, &bp) - kl(&w, &bm)) / (2.0 * h as f64);
        assert!((fd - g_z[i] as f64).abs() < 1e-3 + 0.02 * fd.abs(), "bias {i}: fd {fd} analytic {}", g_z[i]);
        let j = (i * 7 + 3) % d;
        let (mut wp, mut wm) = (w.clone(), w.clone());
        wp.row_mut(i)[j] += h;
        wm.row_mut(i)[j] -= h;
        let fd = (kl(&wp, &b) - kl(&wm, &b)) / (2.0 * h as f64);
        let analytic = g_z[i] as f64 * a[j] as f64;
        assert!((fd - analytic).abs() < 1e-3 + 0.02 * fd.abs(), "W[{i},{j}]: fd {fd} analytic {analytic}");
    }
}

#[test]
fn identity_lens_recovers_final_residual() {
    let model = build_toy_model(7);
    let slots = model.config().n_head_slots();
    let seqs = corpus();
    let all: Vec<LensExample> = examples(&model, &seqs).iter().map(|e| residual_as_update(e, slots)).collect();
    let cfg = LensTrainingConfig { max_steps: Some(2000), ..Default::default() };
    let mut trainer = LensTrainer::new(&model, &cfg);
    // identity is already exact here, so start away from it
    assert!(trainer.evaluate(&model, &all).iter().all(|&kl| kl < 1e-6));
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let d = model.config().d_model;
    for s in 0..trainer.slot_count() {
        trainer.set_slot(s, perturbed_identity(d, 0.15, &mut rng), vec![0.3; d]).unwrap();
    }
    let before = trainer.evaluate(&model, &all);
    for batch in batch_schedule(all.len(), &cfg).unwrap() {
        let b: Vec<LensExample> = batch.iter().map(|&i| all[i].clone()).collect();
        trainer.step(&model, &b).unwrap();
    }
    let after = trainer.evaluate(&model, &all);
    for (b, a) in before.iter().zip(&after) {
        assert!(*b > 0.05 && *a <= 0.05, "{b} -> {a}");
    }
}

#[test]
fn sharing_ties_parameters() {
    let model = build_toy_model(3);
    let seqs = corpus();
    let ex = examples(&model, &seqs[..8]);
    for sharing in [
        LensSharing { per_layer: true, global_bias: false },
        LensSharing { per_layer: false, global_bias: true },
        LensSharing { per_layer: true, global_bias: true },
    ] {
        let cfg = LensTrainingConfig { learning_rate: 1e-2, sharing, ..Default::default() };
        let mut t = LensTrainer::new(&model, &cfg);
        t.step(&model, &ex).unwrap();
        let set = t.finish(1);
        let h = set.n_heads;
        for lens in &set.lenses {
            let first_in_layer = &set.lenses[lens.layer * h];
            if sharing.per_layer {
                assert_eq!(lens.weight, first_in_layer.weight);
            }
            if sharing.global_bias {
                assert_eq!(lens.bias, set.lenses[0].bias);
            }
        }
        assert_ne!(set.lenses[0].weight, set.lenses[h].weight);
        if !sharing.global_bias {
            assert_ne!(set.lenses[0].bias, set.lenses[h].bias);
        }
    }
}

#[test]
fn slot_gradients_compose_into_the_sequential_step() {
    let model = build_toy_model(3);
    let seqs = corpus();
    let ex = examples(&model, &seqs[..6]);
    let cfg = LensTrainingConfig { learning_rate: 1e-2, ..Default::default() };
    let mut a = LensTrainer::new(&model, &cfg);
    let mut b = a.clone();
    a.step(&model, &ex).unwrap();
    let mut grads: Vec<SlotGradient> = (0..b.slot_count()).map(|s| b.slot_gradient(&model, &ex, s)).collect();
    grads.reverse();
    b.apply(grads).unwrap();
    assert_eq!(a.finish(1), b.finish(1));
}

#[test]
fn translate_contract() {
    let model = build_toy_model(7);
    let d = model.config().d_model;
    let mut lens = HeadLens::identity(0, 0, d);
    lens.bias = vec![0.0; d];
    let zero = translate(&model, &lens, &vec![0.0; d]).unwrap();
    assert_eq!(zero, model.logits_from_residual(&vec![0.0; d]));
    assert_eq!(zero.len(), model.config().vocab_size);
    assert!(translate(&model, &lens, &[0.0; 3]).is_err());
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    lens.weight = perturbed_identity(d, 0.3, &mut rng);
    lens.bias = (0..d).map(|_| rng.random_range(-1.0..1.0)).collect();
    let x: Vec<f32> = (0..d).map(|_| rng.random_range(-1.0..1.0)).collect();
    let alpha = 2.5f32;
    let ax: Vec<f32> = x.iter().map(|v| alpha * v).collect();
    let lin = lens.weight.matvec(&x, None);
    let scaled = lens.affine(&ax).unwrap();
    for i in 0..d {
        assert!((scaled[i] - (alpha * lin[i] + lens.bias[i])).abs() < 1e-4);
    }
}

#[test]
fn contrast_is_shift_invariant_and_bounded() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    for _ in 0..200 {
        let logits: Vec<f32> = (0..50).map(|_| rng.random_range(-8.0..8.0)).collect();
        let c = rng.random_range(0..50u32);
        let n = (c + rng.random_range(1..50u32)) % 50;
        let v = contrast_from_logits(&logits, c, n).unwrap();
        assert!((-1.0..=1.0).contains(&v));
        let shifted: Vec<f32> = logits.iter().map(|x| x + 3.0).collect();
        assert!((contrast_from_logits(&shifted, c, n).unwrap() - v).abs() < 1e-6);
    }
}

#[test]
fn training_reduces_kl_and_is_order_robust() {
    let model = build_toy_model(7);
    let seqs = corpus();
    let (train, held) = seqs.split_at(seqs.len() * 4 / 5);
    let held = examples(&model, held);
    let run = |seed: u64| {
        let cfg = LensTrainingConfig { max_steps: Some(2000), seed, ..Default::default() };
        let (set, history) = train_lenses(&model, train, &cfg).unwrap();
        (evaluate_lenses(&model, &set, &held), history)
    };
    let base = evaluate_lenses(&model, &LensSet::identity(&model), &held);
    let (a, history) = run(0);
    let (b, _) = run(99);
    let h = model.config().n_heads;
    for layer in 0..model.config().n_layers {
        let mean = |v: &[f64]| v[layer * h..(layer + 1) * h].iter().sum::<f64>() / h as f64;
        assert!(mean(&a) <= 0.5 * mean(&base), "layer {layer}: {} -> {}", mean(&base), mean(&a));
    }
    let total = |v: &[f64]| v.iter().sum::<f64>();
    assert!((total(&a) - total(&b)).abs() <= 0.1 * total(&a));
    // smoothed loss over the second half, in windows of 100 steps
    let half = &history[history.len() / 2..];
    let windows: Vec<f64> = half.chunks(100).map(|w| w.iter().sum::<f64>() / w.len() as f64).collect();
    for pair in windows.windows(2) {
        assert!(pair[1] <= pair[0], "{windows:?}");
    }
}
