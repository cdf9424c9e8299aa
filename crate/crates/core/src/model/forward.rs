use super::linalg::{gemv_acc, Matrix};
use super::params::{GruLayer, ModelConfig, ModelParams};
use super::real::{sigmoid, Real};
use super::{Model, ModelError};
use crate::prep::FeatureVector;

/// Per-entity recurrent state: one hidden vector per GRU layer plus the
/// timestamp of the last event folded into it.
#[derive(Debug, Clone, PartialEq)]
pub struct EntityState<F> {
    pub layers: Vec<Vec<F>>,
    pub last_event_ts: Option<i64>,
}

impl<F: Real> EntityState<F> {
    pub fn zeros(widths: &[usize]) -> Self {
        EntityState { layers: widths.iter().map(|w| vec![F::zero(); *w]).collect(), last_event_ts: None }
    }

    pub fn top(&self) -> &[F] {
        self.layers.last().map(Vec::as_slice).unwrap_or(&[])
    }

    pub fn matches(&self, widths: &[usize]) -> bool {
        self.layers.len() == widths.len() && self.layers.iter().zip(widths).all(|(l, w)| l.len() == *w)
    }
}

/// Intermediates of one GRU layer at one step.
#[derive(Debug, Clone, PartialEq)]
pub struct GruTrace<F> {
    pub s_prev: Vec<F>,
    pub r: Vec<F>,
    pub z: Vec<F>,
    /// `U · s_prev` for the candidate, before the reset gate is applied.
    pub us: Vec<F>,
    /// Candidate state s′.
    pub h: Vec<F>,
    pub s_new: Vec<F>,
}

/// Everything one step computes, kept for backpropagation.
#[derive(Debug, Clone, PartialEq)]
pub struct StepTrace<F> {
    pub cat: Vec<u32>,
    /// Dense features followed by the looked-up embeddings.
    pub input: Vec<F>,
    pub pre_x: Vec<F>,
    /// x′ after the ReLU.
    pub x: Vec<F>,
    pub layers: Vec<GruTrace<F>>,
    /// Input of each classifier layer; the first is `[s_top, x′]`.
    pub cls_inputs: Vec<Vec<F>>,
    /// Pre-activation of each classifier layer; the last holds the logit.
    pub cls_pre: Vec<Vec<F>>,
    pub y_hat: F,
}

impl<F: Real> StepTrace<F> {
    pub fn new(cfg: &ModelConfig) -> Self {
        let layers = cfg
            .gru_widths
            .iter()
            .map(|&h| {
                let z = vec![F::zero(); h];
                GruTrace { s_prev: z.clone(), r: z.clone(), z: z.clone(), us: z.clone(), h: z.clone(), s_new: z }
            })
            .collect();
        let mut cls_inputs = Vec::new();
        let mut cls_pre = Vec::new();
        let mut w = cfg.top_width() + cfg.input_width;
        for &out in cfg.classifier_widths.iter().chain(std::iter::once(&1)) {
            cls_inputs.push(vec![F::zero(); w]);
            cls_pre.push(vec![F::zero(); out]);
            w = out;
        }
        StepTrace {
            cat: Vec::with_capacity(cfg.cat_cardinalities.len()),
            input: vec![F::zero(); cfg.concat_width()],
            pre_x: vec![F::zero(); cfg.input_width],
            x: vec![F::zero(); cfg.input_width],
            layers,
            cls_inputs,
            cls_pre,
            y_hat: F::zero(),
        }
    }

    pub fn logit(&self) -> F {
        self.cls_pre.last().expect("output layer")[0]
    }
}

/// Output of a traced pass over one sequence.
#[derive(Debug, Clone)]
pub struct SequenceForward<F> {
    pub scores: Vec<F>,
    pub state: EntityState<F>,
    pub tape: Vec<StepTrace<F>>,
}

#[inline]
fn relu<F: Real>(v: F) -> F {
    if v > F::zero() {
        v
    } else {
        F::zero()
    }
}

fn affine_into<F: Real>(out: &mut [F], w: &Matrix<F>, b: &[F], x: &[F]) {
    out.copy_from_slice(b);
    gemv_acc(out, w, x);
}

/// Concatenates dense features with embedding lookups, then applies the
/// input dense layer and ReLU. Fills `input`, `pre_x` and `x` of the trace.
pub(crate) fn feature_block_into<F: Real>(
    p: &ModelParams<F>,
    fv: &FeatureVector,
    t: &mut StepTrace<F>,
) -> Result<(), ModelError> {
    let n_dense = t.input.len() - p.embeddings.iter().map(|e| e.cols).sum::<usize>();
    if fv.dense.len() != n_dense || fv.cat.len() != p.embeddings.len() {
        return Err(ModelError::ShapeMismatch(format!(
            "feature vector has {} dense / {} categorical slots, model expects {} / {}",
            fv.dense.len(),
            fv.cat.len(),
            n_dense,
            p.embeddings.len()
        )));
    }
    for (dst, v) in t.input.iter_mut().zip(&fv.dense) {
        *dst = F::of(*v);
    }
    let mut off = n_dense;
    t.cat.clear();
    for (j, (&idx, table)) in fv.cat.iter().zip(&p.embeddings).enumerate() {
        if idx as usize >= table.rows {
            return Err(ModelError::IndexOutOfRange { feature: j, index: idx, cardinality: table.rows });
        }
        t.input[off..off + table.cols].copy_from_slice(table.row(idx as usize));
        off += table.cols;
        t.cat.push(idx);
    }
    affine_into(&mut t.pre_x, &p.input.w, &p.input.b, &t.input);
    for (x, a) in t.x.iter_mut().zip(&t.pre_x) {
        *x = relu(*a);
    }
    Ok(())
}

/// One GRU update:
/// r = σ(W_r u + U_r s + b_r), z = σ(W_z u + U_z s + b_z),
/// s′ = tanh(W_h u + r ⊙ (U_h s) + b_h), s_new = z ⊙ s + (1 − z) ⊙ s′.
pub(crate) fn gru_step_into<F: Real>(layer: &GruLayer<F>, u: &[F], s_prev: &[F], t: &mut GruTrace<F>) {
    t.s_prev.copy_from_slice(s_prev);
    affine_into(&mut t.r, &layer.w_r, &layer.b_r, u);
    gemv_acc(&mut t.r, &layer.u_r, s_prev);
    t.r.iter_mut().for_each(|v| *v = sigmoid(*v));

    affine_into(&mut t.z, &layer.w_z, &layer.b_z, u);
    gemv_acc(&mut t.z, &layer.u_z, s_prev);
    t.z.iter_mut().for_each(|v| *v = sigmoid(*v));

    t.us.iter_mut().for_each(|v| *v = F::zero());
    gemv_acc(&mut t.us, &layer.u_h, s_prev);
    affine_into(&mut t.h, &layer.w_h, &layer.b_h, u);
    for i in 0..t.h.len() {
        t.h[i] = (t.h[i] + t.r[i] * t.us[i]).tanh();
    }
    for i in 0..t.s_new.len() {
        t.s_new[i] = t.z[i] * s_prev[i] + (F::one() - t.z[i]) * t.h[i];
    }
}

/// Dense ReLU layers over `[s_top, x′]` ending in a sigmoid unit. Reads the
/// top layer's `s_new` and `x` from the trace.
pub(crate) fn classifier_into<F: Real>(p: &ModelParams<F>, t: &mut StepTrace<F>) -> F {
    let s_top = &t.layers.last().expect("at least one GRU layer").s_new;
    let first = &mut t.cls_inputs[0];
    first[..s_top.len()].copy_from_slice(s_top);
    first[s_top.len()..].copy_from_slice(&t.x);
    let n = p.classifier.len();
    for k in 0..n {
        let layer = &p.classifier[k];
        affine_into(&mut t.cls_pre[k], &layer.w, &layer.b, &t.cls_inputs[k]);
        if k + 1 < n {
            let (pre, next) = (&t.cls_pre[k], &mut t.cls_inputs[k + 1]);
            for (o, a) in next.iter_mut().zip(pre) {
                *o = relu(*a);
            }
        }
    }
    t.y_hat = sigmoid(t.logit());
    t.y_hat
}

impl<F: Real> Model<F> {
    pub fn zero_state(&self) -> EntityState<F> {
        EntityState::zeros(&self.config.gru_widths)
    }

    pub fn new_trace(&self) -> StepTrace<F> {
        StepTrace::new(&self.config)
    }

    /// Scores one event and advances `state` in place. `trace` is scratch
    /// space that ends up holding every intermediate of the step.
    pub fn step(&self, fv: &FeatureVector, state: &mut EntityState<F>, trace: &mut StepTrace<F>) -> Result<F, ModelError> {
        if !state.matches(&self.config.gru_widths) {
            return Err(ModelError::ShapeMismatch("entity state widths differ from the model's GRU widths".into()));
        }
        let p = &self.params;
        feature_block_into(p, fv, trace)?;
        for l in 0..p.gru.len() {
            let (below, rest) = trace.layers.split_at_mut(l);
            let u: &[F] = if l == 0 { &trace.x } else { &below[l - 1].s_new };
            gru_step_into(&p.gru[l], u, &state.layers[l], &mut rest[0]);
            state.layers[l].copy_from_slice(&rest[0].s_new);
        }
        Ok(classifier_into(p, trace))
    }

    /// Runs a whole sequence from `s0`, keeping every step's trace.
    pub fn forward_sequence(&self, fvs: &[FeatureVector], s0: &EntityState<F>) -> Result<SequenceForward<F>, ModelError> {
        let mut state = s0.clone();
        let mut scores = Vec::with_capacity(fvs.len());
        let mut tape = Vec::with_capacity(fvs.len());
        for fv in fvs {
            let mut trace = self.new_trace();
            scores.push(self.step(fv, &mut state, &mut trace)?);
            tape.push(trace);
        }
        if fvs.is_empty() && !state.matches(&self.config.gru_widths) {
            return Err(ModelError::ShapeMismatch("entity state widths differ from the model's GRU widths".into()));
        }
        Ok(SequenceForward { scores, state, tape })
    }

    /// Scores a sequence without keeping traces.
    pub fn score_sequence(&self, fvs: &[FeatureVector], state: &mut EntityState<F>) -> Result<Vec<F>, ModelError> {
        let mut trace = self.new_trace();
        fvs.iter().map(|fv| self.step(fv, state, &mut trace)).collect()
    }
}

/// x′ for one feature vector.
pub fn feature_block<F: Real>(cfg: &ModelConfig, p: &ModelParams<F>, fv: &FeatureVector) -> Result<Vec<F>, ModelError> {
    let mut t = StepTrace::new(cfg);
    feature_block_into(p, fv, &mut t)?;
    Ok(t.x)
}

/// New hidden state of one GRU layer.
pub fn gru_step<F: Real>(x: &[F], s_prev: &[F], layer: &GruLayer<F>) -> Result<Vec<F>, ModelError> {
    let h = layer.width();
    if x.len() != layer.input_width() || s_prev.len() != h {
        return Err(ModelError::ShapeMismatch(format!(
            "gru step got input {} / state {}, layer expects {} / {}",
            x.len(),
            s_prev.len(),
            layer.input_width(),
            h
        )));
    }
    let z = vec![F::zero(); h];
    let mut t = GruTrace { s_prev: z.clone(), r: z.clone(), z: z.clone(), us: z.clone(), h: z.clone(), s_new: z };
    gru_step_into(layer, x, s_prev, &mut t);
    Ok(t.s_new)
}

/// Fraud probability from the top GRU output and x′.
pub fn classifier_block<F: Real>(cfg: &ModelConfig, p: &ModelParams<F>, s_top: &[F], x: &[F]) -> Result<F, ModelError> {
    if s_top.len() != cfg.top_width() || x.len() != cfg.input_width {
        return Err(ModelError::ShapeMismatch(format!(
            "classifier got state {} / x′ {}, expects {} / {}",
            s_top.len(),
            x.len(),
            cfg.top_width(),
            cfg.input_width
        )));
    }
    let mut t = StepTrace::new(cfg);
    t.layers.last_mut().expect("at least one GRU layer").s_new.copy_from_slice(s_top);
    t.x.copy_from_slice(x);
    Ok(classifier_into(p, &mut t))
}
