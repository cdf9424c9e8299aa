mod common;

use common::*;
use interseq::model::{classifier_block, feature_block, gru_step, ModelError, ModelParams};
use interseq::prep::FeatureVector;
use interseq::{EntityState, Model};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn zero_model() -> Model<f64> {
    let cfg = tiny_config();
    Model::from_parts(cfg.clone(), ModelParams::zeros(&cfg)).unwrap()
}

#[test]
fn zero_gru_halves_the_state() {
    let m = zero_model();
    let layer = &m.params.gru[1];
    let v = [0.4, -1.0, 2.0, 0.0];
    let s = gru_step(&[0.0; 5], &v, layer).unwrap();
    for (a, b) in s.iter().zip(v) {
        assert_eq!(*a, 0.5 * b);
    }
    assert_eq!(gru_step(&[1.0; 5], &[0.0; 4], layer).unwrap(), vec![0.0; 4]);
}

#[test]
fn gru_shape_mismatch() {
    let m = zero_model();
    assert!(matches!(gru_step(&[0.0; 3], &[0.0; 4], &m.params.gru[1]), Err(ModelError::ShapeMismatch(_))));
}

#[test]
fn seeded_gru_layer_matches_oracle() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    for seed in 0..10 {
        let m = random_instance(seed, 1).model;
        let layer = &m.params.gru[1];
        let x: Vec<f64> = (0..5).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let s: Vec<f64> = (0..4).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let got = gru_step(&x, &s, layer).unwrap();
        for (a, b) in got.iter().zip(oracle_gru(layer, &x, &s)) {
            assert!((a - b).abs() <= 1e-14, "{a} vs {b}");
        }
    }
}

#[test]
fn feature_block_zero_weights_give_zero() {
    let m = zero_model();
    let fv = FeatureVector { dense: vec![0.0, 0.0], cat: vec![0, 0] };
    assert_eq!(feature_block(&m.config, &m.params, &fv).unwrap(), vec![0.0; 5]);
}

#[test]
fn feature_block_rejects_out_of_range_index() {
    let m = zero_model();
    let fv = FeatureVector { dense: vec![0.0, 0.0], cat: vec![0, 4] };
    assert!(matches!(
        feature_block(&m.config, &m.params, &fv),
        Err(ModelError::IndexOutOfRange { feature: 1, index: 4, cardinality: 4 })
    ));
}

#[test]
fn feature_block_and_classifier_match_oracles() {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    for seed in 0..10 {
        let m = random_instance(seed, 1).model;
        let fv = &random_fvs(&m.config, 1, &mut rng)[0];
        let x = feature_block(&m.config, &m.params, fv).unwrap();
        for (a, b) in x.iter().zip(oracle_feature_block(&m.params, fv)) {
            assert!((a - b).abs() <= 1e-14);
        }
        let s: Vec<f64> = (0..4).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let y = classifier_block(&m.config, &m.params, &s, &x).unwrap();
        assert!((y - oracle_classifier(&m.params, &s, &x)).abs() <= 1e-14);
    }
}

#[test]
fn zero_classifier_gives_half() {
    let m = zero_model();
    assert_eq!(classifier_block(&m.config, &m.params, &[0.3; 4], &[1.0; 5]).unwrap(), 0.5);
    assert!(classifier_block(&m.config, &m.params, &[0.3; 3], &[1.0; 5]).is_err());
}

#[test]
fn whole_sequence_matches_oracle() {
    for seed in 0..5 {
        let inst = random_instance(seed, 9);
        let got = inst.model.score_sequence(&inst.fvs, &mut inst.model.zero_state()).unwrap();
        for (a, b) in got.iter().zip(oracle_scores(&inst.model.config, &inst.model.params, &inst.fvs)) {
            assert!((a - b).abs() <= 1e-13);
        }
    }
}

#[test]
fn empty_sequence_keeps_state() {
    let inst = random_instance(1, 3);
    let mut s0 = inst.model.zero_state();
    s0.layers[0][2] = 0.7;
    let out = inst.model.forward_sequence(&[], &s0).unwrap();
    assert!(out.scores.is_empty() && out.tape.is_empty());
    assert_eq!(out.state, s0);
}

#[test]
fn wrong_state_width_is_rejected() {
    let inst = random_instance(1, 3);
    let bad = EntityState::<f64>::zeros(&[5, 3]);
    assert!(matches!(inst.model.forward_sequence(&inst.fvs, &bad), Err(ModelError::ShapeMismatch(_))));
}

#[test]
fn split_four_six_equals_single_pass() {
    let inst = random_instance(3, 10);
    let whole = inst.model.forward_sequence(&inst.fvs, &inst.model.zero_state()).unwrap();
    let a = inst.model.forward_sequence(&inst.fvs[..4], &inst.model.zero_state()).unwrap();
    let b = inst.model.forward_sequence(&inst.fvs[4..], &a.state).unwrap();
    let joined: Vec<f64> = a.scores.iter().chain(&b.scores).copied().collect();
    assert_eq!(joined, whole.scores);
    assert_eq!(b.state, whole.state);
}

#[test]
fn f32_split_is_also_exact() {
    let inst = random_instance(5, 12);
    let m32 = Model::<f32>::from_parts(inst.model.config.clone(), inst.model.params.cast()).unwrap();
    let whole = m32.score_sequence(&inst.fvs, &mut m32.zero_state()).unwrap();
    for cut in 0..=12 {
        let mut s = m32.zero_state();
        let mut got = m32.score_sequence(&inst.fvs[..cut], &mut s).unwrap();
        got.extend(m32.score_sequence(&inst.fvs[cut..], &mut s).unwrap());
        assert_eq!(got, whole);
    }
}

#[test]
fn gradients_match_finite_differences() {
    for seed in 0..5 {
        let inst = random_instance(seed, 7);
        let (err, at) = max_grad_error(&inst, 1e-5);
        assert!(err < 1e-6, "seed {seed}: {err} at {at}");
    }
}

#[test]
fn changing_the_mask_is_matched_by_the_oracle() {
    let mut inst = random_instance(21, 7);
    inst.scorable = vec![true; 7];
    let fwd = inst.model.forward_sequence(&inst.fvs, &inst.model.zero_state()).unwrap();
    let (_, full) = inst.model.backward_sequence(&fwd.tape, &inst.labels, &inst.scorable).unwrap();
    inst.scorable[3] = false;
    let (err, at) = max_grad_error(&inst, 1e-5);
    assert!(err < 1e-6, "{err} at {at}");
    let (_, masked) = inst.model.backward_sequence(&fwd.tape, &inst.labels, &inst.scorable).unwrap();
    assert_ne!(full, masked);
}

#[test]
fn all_non_scorable_is_an_error() {
    let inst = random_instance(2, 4);
    let fwd = inst.model.forward_sequence(&inst.fvs, &inst.model.zero_state()).unwrap();
    assert!(matches!(
        inst.model.backward_sequence(&fwd.tape, &inst.labels, &[false; 4]),
        Err(ModelError::EmptyScorableSet)
    ));
}

#[test]
fn non_scorable_prefix_still_receives_gradient() {
    // Loss only on the last event; the first event's embedding row must still
    // get a gradient through the recurrence.
    let mut inst = random_instance(8, 5);
    inst.scorable = vec![false, false, false, false, true];
    inst.fvs[0].cat[0] = 5;
    for fv in &mut inst.fvs[1..] {
        fv.cat[0] = 0;
    }
    let fwd = inst.model.forward_sequence(&inst.fvs, &inst.model.zero_state()).unwrap();
    let (_, g) = inst.model.backward_sequence(&fwd.tape, &inst.labels, &inst.scorable).unwrap();
    assert!(g.embeddings[0].row(5).iter().any(|v| *v != 0.0));
}

#[test]
fn scoring_is_deterministic() {
    let inst = random_instance(6, 20);
    let a = inst.model.score_sequence(&inst.fvs, &mut inst.model.zero_state()).unwrap();
    let b = inst.model.score_sequence(&inst.fvs, &mut inst.model.zero_state()).unwrap();
    assert_eq!(a, b);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(256))]

    #[test]
    fn gru_state_is_a_convex_mix(seed in 0u64..1000, xs in prop::collection::vec(-3.0f64..3.0, 5), ss in prop::collection::vec(-1.0f64..1.0, 4)) {
        let m = random_instance(seed, 1).model;
        let layer = &m.params.gru[1];
        let fv = FeatureVector { dense: vec![0.0, 0.0], cat: vec![0, 0] };
        let inst_fvs = vec![fv];
        let mut state = EntityState::<f64>::zeros(&m.config.gru_widths);
        state.layers[1].copy_from_slice(&ss);
        let out = m.forward_sequence(&inst_fvs, &state).unwrap();
        let g = &out.tape[0].layers[1];
        for i in 0..4 {
            prop_assert!(g.r[i] > 0.0 && g.r[i] < 1.0);
            prop_assert!(g.z[i] > 0.0 && g.z[i] < 1.0);
            prop_assert!(g.h[i] > -1.0 && g.h[i] < 1.0);
            let (lo, hi) = (g.s_prev[i].min(g.h[i]), g.s_prev[i].max(g.h[i]));
            prop_assert!(g.s_new[i] >= lo && g.s_new[i] <= hi);
        }
        let direct = gru_step(&xs, &ss, layer).unwrap();
        for (i, v) in direct.iter().enumerate() {
            prop_assert!(v.abs() <= ss[i].abs().max(1.0));
        }
    }

    #[test]
    fn splitting_anywhere_twice_is_exact(seed in 0u64..500, len in 1usize..16, a in 0usize..16, b in 0usize..16) {
        let inst = random_instance(seed, len);
        let (a, b) = (a.min(len), b.min(len));
        let (c1, c2) = (a.min(b), a.max(b));
        let whole = inst.model.score_sequence(&inst.fvs, &mut inst.model.zero_state()).unwrap();
        let mut s = inst.model.zero_state();
        let mut got = inst.model.score_sequence(&inst.fvs[..c1], &mut s).unwrap();
        got.extend(inst.model.score_sequence(&inst.fvs[c1..c2], &mut s).unwrap());
        got.extend(inst.model.score_sequence(&inst.fvs[c2..], &mut s).unwrap());
        prop_assert_eq!(got, whole);
    }
}
