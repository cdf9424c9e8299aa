//! Independent oracles shared by the integration suites. Everything here is
//! written with plain loops in f64 and does not call into the model kernels.
#![allow(dead_code)]

pub mod world;

use interseq::model::{GruLayer, Matrix, ModelConfig, ModelParams, Precision};
use interseq::prep::FeatureVector;
use interseq::train::loss::masked_bce;
use interseq::Model;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn sig(v: f64) -> f64 {
    1.0 / (1.0 + (-v).exp())
}

pub fn matvec(m: &Matrix<f64>, x: &[f64]) -> Vec<f64> {
    assert_eq!(m.cols, x.len());
    (0..m.rows).map(|i| (0..m.cols).map(|j| m.data[i * m.cols + j] * x[j]).sum()).collect()
}

/// The GRU cell evaluated one unit at a time.
pub fn oracle_gru(layer: &GruLayer<f64>, x: &[f64], s: &[f64]) -> Vec<f64> {
    let (wr, ur) = (matvec(&layer.w_r, x), matvec(&layer.u_r, s));
    let (wz, uz) = (matvec(&layer.w_z, x), matvec(&layer.u_z, s));
    let (wh, uh) = (matvec(&layer.w_h, x), matvec(&layer.u_h, s));
    (0..s.len())
        .map(|i| {
            let r = sig(wr[i] + ur[i] + layer.b_r[i]);
            let z = sig(wz[i] + uz[i] + layer.b_z[i]);
            let cand = (wh[i] + r * uh[i] + layer.b_h[i]).tanh();
            z * s[i] + (1.0 - z) * cand
        })
        .collect()
}

pub fn oracle_feature_block(p: &ModelParams<f64>, fv: &FeatureVector) -> Vec<f64> {
    let mut input = fv.dense.clone();
    for (table, &idx) in p.embeddings.iter().zip(&fv.cat) {
        input.extend_from_slice(&table.data[idx as usize * table.cols..(idx as usize + 1) * table.cols]);
    }
    matvec(&p.input.w, &input).iter().zip(&p.input.b).map(|(a, b)| (a + b).max(0.0)).collect()
}

pub fn oracle_classifier(p: &ModelParams<f64>, s_top: &[f64], x: &[f64]) -> f64 {
    let mut h: Vec<f64> = s_top.iter().chain(x).copied().collect();
    let n = p.classifier.len();
    for (k, layer) in p.classifier.iter().enumerate() {
        let pre: Vec<f64> = matvec(&layer.w, &h).iter().zip(&layer.b).map(|(a, b)| a + b).collect();
        h = if k + 1 < n { pre.iter().map(|v| v.max(0.0)).collect() } else { pre };
    }
    sig(h[0])
}

/// Scores a sequence from the zero state with the oracles above.
pub fn oracle_scores(cfg: &ModelConfig, p: &ModelParams<f64>, fvs: &[FeatureVector]) -> Vec<f64> {
    let mut state: Vec<Vec<f64>> = cfg.gru_widths.iter().map(|w| vec![0.0; *w]).collect();
    fvs.iter()
        .map(|fv| {
            let x = oracle_feature_block(p, fv);
            let mut u = x.clone();
            for (l, layer) in p.gru.iter().enumerate() {
                state[l] = oracle_gru(layer, &u, &state[l]);
                u = state[l].clone();
            }
            oracle_classifier(p, &u, &x)
        })
        .collect()
}

/// The gradient-check architecture: 2 dense + 2 categorical features,
/// embed_dim 3, GRU [5, 4], classifier [6].
pub fn tiny_config() -> ModelConfig {
    ModelConfig {
        n_dense: 2,
        cat_cardinalities: vec![6, 4],
        embed_dims: vec![3, 3],
        input_width: 5,
        gru_widths: vec![5, 4],
        classifier_widths: vec![6],
        precision: Precision::F64,
        schema_hash: 0,
    }
}

pub fn random_fvs(cfg: &ModelConfig, len: usize, rng: &mut ChaCha8Rng) -> Vec<FeatureVector> {
    (0..len)
        .map(|_| FeatureVector {
            dense: (0..cfg.n_dense).map(|_| rng.gen_range(-2.0..2.0)).collect(),
            cat: cfg.cat_cardinalities.iter().map(|c| rng.gen_range(0..*c as u32)).collect(),
        })
        .collect()
}

pub struct Instance {
    pub model: Model<f64>,
    pub fvs: Vec<FeatureVector>,
    pub labels: Vec<f64>,
    pub scorable: Vec<bool>,
}

/// A random model and sequence with random labels and at least one scorable event.
pub fn random_instance(seed: u64, len: usize) -> Instance {
    let cfg = tiny_config();
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x9e37_79b9);
    let mut model = Model::<f64>::init(cfg.clone(), seed).unwrap();
    // Non-zero biases so their gradients are exercised away from the init point.
    for t in model.params.tensors_mut() {
        for v in t.iter_mut() {
            *v += rng.gen_range(-0.3..0.3);
        }
    }
    let fvs = random_fvs(&cfg, len, &mut rng);
    let labels = (0..len).map(|_| if rng.gen_bool(0.4) { 1.0 } else { 0.0 }).collect();
    let mut scorable: Vec<bool> = (0..len).map(|_| rng.gen_bool(0.7)).collect();
    if !scorable.iter().any(|s| *s) {
        scorable[len - 1] = true;
    }
    Instance { model, fvs, labels, scorable }
}

pub fn loss_of(model: &Model<f64>, inst: &Instance) -> f64 {
    let fwd = model.forward_sequence(&inst.fvs, &model.zero_state()).unwrap();
    masked_bce(&fwd.scores, &inst.labels, &inst.scorable).unwrap()
}

/// Relative error with an absolute floor so that near-zero gradients are
/// compared on an absolute scale.
pub fn rel_err(a: f64, n: f64, floor: f64) -> f64 {
    (a - n).abs() / a.abs().max(n.abs()).max(floor)
}

pub const GRAD_FLOOR: f64 = 1e-4;

/// Central finite differences over every parameter; returns the worst relative
/// error against the analytic gradient and the name of the tensor it came from.
pub fn max_grad_error(inst: &Instance, eps: f64) -> (f64, String) {
    let fwd = inst.model.forward_sequence(&inst.fvs, &inst.model.zero_state()).unwrap();
    let (_, grads) = inst.model.backward_sequence(&fwd.tape, &inst.labels, &inst.scorable).unwrap();
    let analytic: Vec<(String, Vec<f64>)> = grads.tensors().into_iter().map(|(n, _, d)| (n, d.to_vec())).collect();
    let mut probe = inst.model.clone();
    let mut worst = (0.0, String::new());
    for (ti, (name, g)) in analytic.iter().enumerate() {
        for k in 0..g.len() {
            let orig = probe.params.tensors_mut()[ti][k];
            probe.params.tensors_mut()[ti][k] = orig + eps;
            let up = loss_of(&probe, inst);
            probe.params.tensors_mut()[ti][k] = orig - eps;
            let down = loss_of(&probe, inst);
            probe.params.tensors_mut()[ti][k] = orig;
            let numeric = (up - down) / (2.0 * eps);
            let e = rel_err(g[k], numeric, GRAD_FLOOR);
            if e > worst.0 {
                worst = (e, format!("{name}[{k}] analytic {} numeric {numeric}", g[k]));
            }
        }
    }
    worst
}
