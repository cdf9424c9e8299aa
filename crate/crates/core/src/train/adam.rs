use crate::model::{ModelConfig, ModelParams, Real};

use super::TrainError;

pub const ADAM_BETA1: f64 = 0.9;
pub const ADAM_BETA2: f64 = 0.999;
pub const ADAM_EPS: f64 = 1e-8;

/// First and second moment estimates, shaped like the parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState<F> {
    pub m: ModelParams<F>,
    pub v: ModelParams<F>,
    pub t: u64,
}

impl<F: Real> AdamState<F> {
    pub fn new(cfg: &ModelConfig) -> Self {
        AdamState { m: ModelParams::zeros(cfg), v: ModelParams::zeros(cfg), t: 0 }
    }
}

/// One bias-corrected Adam update. Parameters are left untouched when any
/// gradient is not finite.
pub fn adam_step<F: Real>(p: &mut ModelParams<F>, g: &ModelParams<F>, st: &mut AdamState<F>, lr: f64) -> Result<(), TrainError> {
    if !g.all_finite() {
        return Err(TrainError::NonFiniteGradient);
    }
    st.t += 1;
    let (b1, b2) = (F::of(ADAM_BETA1), F::of(ADAM_BETA2));
    let c1 = F::of(1.0 - ADAM_BETA1.powi(st.t.min(i32::MAX as u64) as i32));
    let c2 = F::of(1.0 - ADAM_BETA2.powi(st.t.min(i32::MAX as u64) as i32));
    let (lr, eps, one) = (F::of(lr), F::of(ADAM_EPS), F::one());
    let grads = g.tensors();
    for (((pt, mt), vt), (_, _, gt)) in
        p.tensors_mut().into_iter().zip(st.m.tensors_mut()).zip(st.v.tensors_mut()).zip(grads.iter())
    {
        for i in 0..pt.len() {
            let gi = gt[i];
            mt[i] = b1 * mt[i] + (one - b1) * gi;
            vt[i] = b2 * vt[i] + (one - b2) * gi * gi;
            let m_hat = mt[i] / c1;
            let v_hat = vt[i] / c2;
            pt[i] = pt[i] - lr * m_hat / (v_hat.sqrt() + eps);
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{Matrix, Precision};

    fn cfg() -> ModelConfig {
        ModelConfig {
            n_dense: 1,
            cat_cardinalities: vec![],
            embed_dims: vec![],
            input_width: 1,
            gru_widths: vec![1],
            classifier_widths: vec![],
            precision: Precision::F64,
            schema_hash: 0,
        }
    }

    #[test]
    fn zero_gradient_changes_nothing() {
        let c = cfg();
        let mut p = ModelParams::<f64>::init(&c, 3);
        let before = p.clone();
        let mut st = AdamState::new(&c);
        adam_step(&mut p, &ModelParams::zeros(&c), &mut st, 0.001).unwrap();
        assert_eq!(p, before);
    }

    #[test]
    fn unit_gradient_first_step_moves_by_lr() {
        let c = cfg();
        let mut p = ModelParams::<f64>::zeros(&c);
        let mut g = ModelParams::<f64>::zeros(&c);
        g.input.w = Matrix { rows: 1, cols: 1, data: vec![1.0] };
        let mut st = AdamState::new(&c);
        adam_step(&mut p, &g, &mut st, 0.001).unwrap();
        // m̂ = 1, v̂ = 1: step = lr / (1 + ε).
        let expected = -0.001 / (1.0 + ADAM_EPS);
        assert!((p.input.w.data[0] - expected).abs() < 1e-18);
        assert!(p.gru[0].b_r.iter().all(|v| *v == 0.0));
    }

    #[test]
    fn nan_gradient_is_rejected() {
        let c = cfg();
        let mut p = ModelParams::<f64>::init(&c, 1);
        let before = p.clone();
        let mut g = ModelParams::<f64>::zeros(&c);
        g.input.b[0] = f64::NAN;
        let mut st = AdamState::new(&c);
        assert!(matches!(adam_step(&mut p, &g, &mut st, 0.001), Err(TrainError::NonFiniteGradient)));
        assert_eq!((p, st.t), (before, 0));
    }
}
