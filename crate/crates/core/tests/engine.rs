mod common;

use common::*;
use cwct_core::cost::{circular_step_macs, sliding_step_macs, window_encode_macs};
use cwct_core::{
    batch_forward, batch_forward_many, default_config, Engine, Matrix, ModelError, RingSnapshot, SlidingBaseline,
};
use proptest::prelude::*;
use rand::Rng;

fn last(m: &Matrix) -> &[f32] {
    m.row(m.rows() - 1)
}

#[test]
fn warmup_encodes_every_window_once() {
    let (_, model) = small_model(1);
    let c = model.config();
    let a = Engine::new(model.clone());
    let b = Engine::new(model.clone());
    assert_eq!(a.counters().window_encodes, c.num_windows as u64);
    assert_eq!((a.counters().steps, a.counters().bank_attentions, a.cursor(), a.trend_len()), (0, 0, 0, 0));
    assert_eq!(a.summaries(), b.summaries());
    assert_eq!(a.summaries().windows(), c.num_windows);
    assert!(a.slots().data().iter().all(|&v| v == 0.0));
    assert!(a.audit_cache().iter().all(|&g| g == 0.0));
}

#[test]
fn one_encode_per_step_once_the_trend_is_full() {
    let (_, model) = small_model(2);
    let c = model.config().clone();
    let mut e = Engine::new(model);
    let mut r = rng(2);
    let mut prev = e.counters();
    for t in 1..=(c.trend_len + 5 * c.history_len) {
        let out = e.step(&random_vec(&mut r, c.input_dim)).unwrap();
        let now = e.counters();
        let expected = if t <= c.trend_len { 0 } else { 1 };
        assert_eq!(now.window_encodes - prev.window_encodes, expected, "step {t}");
        assert_eq!(now.bank_attentions - prev.bank_attentions, 1);
        assert_eq!(now.steps, t as u64);
        assert_eq!(out.counters, now);
        let sum: f32 = out.refined.iter().sum();
        assert!((sum - 1.0).abs() < 1e-5 && out.refined.iter().all(|&v| v >= 0.0));
        assert!((out.coarse.iter().sum::<f32>() - 1.0).abs() < 1e-5);
        prev = now;
    }
}

#[test]
fn ring_holds_evicted_inputs_in_fifo_order() {
    let (_, model) = small_model(3);
    let c = model.config().clone();
    let mut e = Engine::new(model.clone());
    let mut r = rng(3);
    let mut log = Vec::new();
    for t in 1..=(2 * c.history_len + c.trend_len + 3) {
        let x = random_vec(&mut r, c.input_dim);
        e.step(&x).unwrap();
        log.push(x);
        let evicted = t.saturating_sub(c.trend_len);
        for p in 0..c.history_len {
            // Newest eviction sits just behind the cursor.
            let age = (e.cursor() + c.history_len - 1 - p) % c.history_len;
            let want = if age < evicted {
                model.history().project_history(&log[evicted - 1 - age]).unwrap()
            } else {
                vec![0.0; c.history_dim]
            };
            assert_eq!(e.slots().row(p), want.as_slice(), "step {t} slot {p}");
        }
        assert_eq!(e.cursor(), evicted % c.history_len);
    }
}

#[test]
fn streaming_matches_batch_at_every_step() {
    let (_, model) = small_model(4);
    let c = model.config().clone();
    let mut e = Engine::new(model.clone());
    let mut r = rng(4);
    let mut worst: f32 = 0.0;
    for _ in 0..(4 * c.history_len) {
        let s = e.step(&random_vec(&mut r, c.input_dim)).unwrap();
        let b = batch_forward(&model, &e.snapshot(), false).unwrap();
        assert_eq!(b.window_encodes, c.num_windows as u64);
        worst = worst.max(max_abs(&s.refined, last(b.trend.refined.probs())));
        worst = worst.max(max_abs(&s.coarse, last(b.trend.coarse.probs())));
    }
    assert!(worst <= 1e-5, "{worst}");
}

#[test]
fn batch_ignores_cached_summaries() {
    let (_, model) = small_model(5);
    let c = model.config().clone();
    let mut e = Engine::new(model.clone());
    let mut r = rng(5);
    for _ in 0..(c.history_len + c.trend_len + 3) {
        e.step(&random_vec(&mut r, c.input_dim)).unwrap();
    }
    let clean = e.snapshot();
    let mut stale = clean.clone();
    stale.summaries = random_matrix(&mut r, c.num_windows, c.summary_dim());
    assert_eq!(batch_forward(&model, &clean, true).unwrap(), batch_forward(&model, &stale, true).unwrap());
}

#[test]
fn stacked_batches_equal_single_batches() {
    let (_, model) = small_model(6);
    let c = model.config().clone();
    let mut e = Engine::new(model.clone());
    let mut r = rng(6);
    let mut snaps = Vec::new();
    for _ in 0..(c.history_len + 2 * c.trend_len) {
        e.step(&random_vec(&mut r, c.input_dim)).unwrap();
        snaps.push(e.snapshot());
    }
    let many = batch_forward_many(&model, &snaps, true).unwrap();
    for (s, m) in snaps.iter().zip(&many) {
        assert_eq!(&batch_forward(&model, s, true).unwrap(), m);
    }
    assert!(batch_forward_many(&model, &[], false).unwrap().is_empty());
}

#[test]
fn whole_window_rotation_leaves_predictions_unchanged() {
    let (_, model) = small_model(7);
    let c = model.config().clone();
    let mut e = Engine::new(model.clone());
    let mut r = rng(7);
    for _ in 0..(c.history_len + c.trend_len + 5) {
        e.step(&random_vec(&mut r, c.input_dim)).unwrap();
    }
    let snap = e.snapshot();
    let base = batch_forward(&model, &snap, false).unwrap();
    for k in 1..c.num_windows {
        let rot = batch_forward(&model, &snap.rotated(k), false).unwrap();
        assert!(rot.trend.refined.probs().max_abs_diff(base.trend.refined.probs()) <= 1e-5);
    }

    // The rotated ring keeps streaming in step with the original.
    let mut twin = Engine::from_snapshot(model.clone(), &snap.rotated(2)).unwrap();
    for _ in 0..(2 * c.history_len) {
        let x = random_vec(&mut r, c.input_dim);
        let (a, b) = (e.step(&x).unwrap(), twin.step(&x).unwrap());
        assert!(max_abs(&a.refined, &b.refined) <= 1e-5);
    }
}

#[test]
fn sliding_baseline_agrees_at_window_boundaries() {
    let (_, model) = small_model(8);
    let c = model.config().clone();
    let w = c.window_size();
    let mut circ = Engine::new(model.clone());
    let mut slide = SlidingBaseline::new(model.clone());
    let mut r = rng(8);
    let mut boundaries = 0;
    for _ in 0..(3 * c.history_len + c.trend_len) {
        let x = random_vec(&mut r, c.input_dim);
        let before = slide.counters().window_encodes;
        let (a, b) = (circ.step(&x).unwrap(), slide.step(&x).unwrap());
        assert_eq!(slide.counters().window_encodes - before, c.num_windows as u64);
        if circ.cursor() % w == 0 {
            assert!(max_abs(&a.refined, &b.refined) <= 1e-5);
            assert!(max_abs(&a.coarse, &b.coarse) <= 1e-5);
            boundaries += 1;
        }
    }
    assert!(boundaries >= 3 * c.num_windows);

    let rows: Vec<&[f32]> = (0..c.history_len).map(|j| circ.slots().row((circ.cursor() + j) % c.history_len)).collect();
    assert_eq!(slide.ordered_history(), Matrix::from_rows(&rows));
}

#[test]
fn cache_audit_localizes_a_corrupted_summary() {
    let (_, model) = small_model(9);
    let c = model.config().clone();
    let mut e = Engine::new(model.clone());
    let mut r = rng(9);
    for _ in 0..(c.history_len + c.trend_len) {
        e.step(&random_vec(&mut r, c.input_dim)).unwrap();
    }
    e.corrupt_summary(2, 0.25);
    let gaps = e.audit_cache();
    assert!((gaps[2] - 0.25).abs() < 1e-6);
    assert!(gaps.iter().enumerate().all(|(n, &g)| n == 2 || g == 0.0));

    let s = e.step(&random_vec(&mut r, c.input_dim)).unwrap();
    let b = batch_forward(&model, &e.snapshot(), false).unwrap();
    assert!(max_abs(&s.refined, last(b.trend.refined.probs())) > 1e-5);
}

#[test]
fn snapshot_restores_an_identical_engine() {
    let (_, model) = small_model(10);
    let c = model.config().clone();
    let mut a = Engine::new(model.clone());
    let mut r = rng(10);
    for _ in 0..(c.trend_len / 2) {
        a.step(&random_vec(&mut r, c.input_dim)).unwrap();
    }
    let mut b = Engine::from_snapshot(model.clone(), &a.snapshot()).unwrap();
    assert_eq!(b.snapshot(), a.snapshot());
    for _ in 0..(c.history_len + c.trend_len) {
        let x = random_vec(&mut r, c.input_dim);
        assert_eq!(a.step(&x).unwrap().refined, b.step(&x).unwrap().refined);
    }
    assert_eq!(a.summaries(), b.summaries());

    let mut bad = a.snapshot();
    bad.cursor = c.history_len;
    assert_eq!(Engine::from_snapshot(model.clone(), &bad).unwrap_err(), ModelError::Snapshot("cursor out of range"));
    let bad = RingSnapshot { slots: Matrix::zeros(3, 3), ..a.snapshot() };
    assert!(batch_forward(&model, &bad, false).is_err());
}

#[test]
fn wrong_input_width_is_rejected() {
    let (_, model) = small_model(11);
    let mut e = Engine::new(model);
    let err = e.step(&[0.0; 5]).unwrap_err();
    assert!(matches!(err, ModelError::Dimension { expected: 12, found: 5, .. }));
    assert_eq!(e.counters().steps, 0);
}

#[test]
fn batch_history_branch_covers_every_slot() {
    let (_, model) = small_model(12);
    let c = model.config().clone();
    let mut e = Engine::new(model.clone());
    let mut r = rng(12);
    for _ in 0..c.history_len {
        e.step(&random_vec(&mut r, c.input_dim)).unwrap();
    }
    let b = batch_forward(&model, &e.snapshot(), true).unwrap();
    let h = b.history.unwrap();
    assert_eq!(h.refined.len(), c.history_len);
    assert!(h.refined.is_distribution(1e-5));
    assert_eq!(b.trend.refined.len(), c.trend_len);
}

#[test]
fn window_encoder_cost_ratio_is_the_window_count() {
    for c in [default_config(2048), small_config()] {
        let (circ, slide) = (circular_step_macs(&c), sliding_step_macs(&c));
        assert_eq!(circ.window_encoder, window_encode_macs(&c));
        assert_eq!(slide.window_encoder, c.num_windows as u64 * circ.window_encoder);
        assert_eq!(slide.total() - circ.total(), (c.num_windows as u64 - 1) * circ.window_encoder);
        assert_eq!((circ.bank_attention, circ.trend, circ.cascade), (slide.bank_attention, slide.trend, slide.cascade));
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(8))]

    #[test]
    fn oracle_holds_for_any_weights_and_stream(seed in 0u64..10_000, horizon in 1usize..160) {
        let (_, model) = small_model(seed);
        let c = model.config().clone();
        let mut e = Engine::new(model.clone());
        let mut twin = Engine::new(model.clone());
        let mut r = rng(seed ^ 0x5eed);
        let scale = r.random_range(0.1f32..4.0);
        for _ in 0..horizon {
            let x: Vec<f32> = random_vec(&mut r, c.input_dim).into_iter().map(|v| v * scale).collect();
            let s = e.step(&x).unwrap();
            prop_assert_eq!(&s, &twin.step(&x).unwrap());
            let b = batch_forward(&model, &e.snapshot(), false).unwrap();
            prop_assert!(max_abs(&s.refined, last(b.trend.refined.probs())) <= 1e-5);
        }
    }
}
