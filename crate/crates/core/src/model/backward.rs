//! Backpropagation through time over a recorded forward tape.

use super::forward::StepTrace;
use super::linalg::{add_assign, gemv_t_acc, outer_acc};
use super::params::ModelParams;
use super::real::Real;
use super::{Model, ModelError};
use crate::train::loss::{bce_logit_grad, masked_bce};

impl<F: Real> Model<F> {
    /// Accumulates into `grads` the gradient of `Σ_t dlogits[t] · logit_t`,
    /// i.e. backpropagates per-step logit gradients through the classifier,
    /// the GRU recurrence and the feature block.
    pub fn backward_tape(&self, tape: &[StepTrace<F>], dlogits: &[F], grads: &mut ModelParams<F>) {
        assert_eq!(tape.len(), dlogits.len(), "one logit gradient per step");
        let p = &self.params;
        let n_layers = p.gru.len();
        let top = self.config.top_width();
        let mut carry: Vec<Vec<F>> = p.gru.iter().map(|g| vec![F::zero(); g.width()]).collect();

        for (t, &dlogit) in tape.iter().zip(dlogits).rev() {
            // Classifier.
            let n_cls = p.classifier.len();
            let mut dy = vec![dlogit];
            for k in (0..n_cls).rev() {
                let layer = &p.classifier[k];
                let pre = &t.cls_pre[k];
                let dpre: Vec<F> = if k + 1 == n_cls {
                    dy
                } else {
                    dy.iter().zip(pre).map(|(d, a)| if *a > F::zero() { *d } else { F::zero() }).collect()
                };
                let g = &mut grads.classifier[k];
                outer_acc(&mut g.w, &dpre, &t.cls_inputs[k]);
                add_assign(&mut g.b, &dpre);
                let mut dinput = vec![F::zero(); layer.w.cols];
                gemv_t_acc(&mut dinput, &layer.w, &dpre);
                dy = dinput;
            }
            let mut dx: Vec<F> = dy[top..].to_vec();
            let mut d_above: Vec<F> = dy[..top].to_vec();

            // GRU stack, top layer first.
            for l in (0..n_layers).rev() {
                let layer = &p.gru[l];
                let tr = &t.layers[l];
                let u: &[F] = if l == 0 { &t.x } else { &t.layers[l - 1].s_new };
                let h = layer.width();
                let one = F::one();

                let ds: Vec<F> = d_above.iter().zip(&carry[l]).map(|(a, b)| *a + *b).collect();
                let mut ds_prev = vec![F::zero(); h];
                let mut dah = vec![F::zero(); h];
                let mut daz = vec![F::zero(); h];
                let mut dar = vec![F::zero(); h];
                let mut dus = vec![F::zero(); h];
                for i in 0..h {
                    let (z, hh, r) = (tr.z[i], tr.h[i], tr.r[i]);
                    let dh = ds[i] * (one - z);
                    let dz = ds[i] * (tr.s_prev[i] - hh);
                    ds_prev[i] = ds[i] * z;
                    dah[i] = dh * (one - hh * hh);
                    let dr = dah[i] * tr.us[i];
                    dus[i] = dah[i] * r;
                    daz[i] = dz * z * (one - z);
                    dar[i] = dr * r * (one - r);
                }
                let g = &mut grads.gru[l];
                let mut du = vec![F::zero(); layer.input_width()];

                outer_acc(&mut g.w_h, &dah, u);
                add_assign(&mut g.b_h, &dah);
                gemv_t_acc(&mut du, &layer.w_h, &dah);
                outer_acc(&mut g.u_h, &dus, &tr.s_prev);
                gemv_t_acc(&mut ds_prev, &layer.u_h, &dus);

                outer_acc(&mut g.w_z, &daz, u);
                outer_acc(&mut g.u_z, &daz, &tr.s_prev);
                add_assign(&mut g.b_z, &daz);
                gemv_t_acc(&mut du, &layer.w_z, &daz);
                gemv_t_acc(&mut ds_prev, &layer.u_z, &daz);

                outer_acc(&mut g.w_r, &dar, u);
                outer_acc(&mut g.u_r, &dar, &tr.s_prev);
                add_assign(&mut g.b_r, &dar);
                gemv_t_acc(&mut du, &layer.w_r, &dar);
                gemv_t_acc(&mut ds_prev, &layer.u_r, &dar);

                carry[l] = ds_prev;
                if l == 0 {
                    add_assign(&mut dx, &du);
                } else {
                    d_above = du;
                }
            }

            // Input dense layer and embeddings.
            let dpre_x: Vec<F> =
                dx.iter().zip(&t.pre_x).map(|(d, a)| if *a > F::zero() { *d } else { F::zero() }).collect();
            outer_acc(&mut grads.input.w, &dpre_x, &t.input);
            add_assign(&mut grads.input.b, &dpre_x);
            let mut dinput = vec![F::zero(); t.input.len()];
            gemv_t_acc(&mut dinput, &p.input.w, &dpre_x);
            let mut off = self.config.n_dense;
            for (j, &idx) in t.cat.iter().enumerate() {
                let table = &mut grads.embeddings[j];
                let dim = table.cols;
                add_assign(table.row_mut(idx as usize), &dinput[off..off + dim]);
                off += dim;
            }
        }
    }

    /// Loss and gradients of mean binary cross-entropy over the scorable
    /// steps of one traced sequence. Non-scorable steps add no loss but the
    /// gradient still flows through their state transitions.
    pub fn backward_sequence(
        &self,
        tape: &[StepTrace<F>],
        labels: &[F],
        scorable: &[bool],
    ) -> Result<(F, ModelParams<F>), ModelError> {
        let y_hat: Vec<F> = tape.iter().map(|t| t.y_hat).collect();
        let loss = masked_bce(&y_hat, labels, scorable).map_err(|_| ModelError::EmptyScorableSet)?;
        let n = scorable.iter().filter(|s| **s).count();
        let norm = F::one() / F::of(n as f64);
        let dlogits: Vec<F> = tape
            .iter()
            .zip(labels.iter().zip(scorable))
            .map(|(t, (y, s))| if *s { bce_logit_grad(t.y_hat, *y) * norm } else { F::zero() })
            .collect();
        let mut grads = ModelParams::zeros(&self.config);
        self.backward_tape(tape, &dlogits, &mut grads);
        Ok((loss, grads))
    }
}
