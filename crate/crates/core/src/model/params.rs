use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::linalg::Matrix;
use super::real::{Precision, Real};
use super::ModelError;
use crate::prep::FeatureLayout;

const EMBEDDING_INIT: f64 = 0.05;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub n_dense: usize,
    /// Rows of each embedding table, in feature order.
    pub cat_cardinalities: Vec<usize>,
    pub embed_dims: Vec<usize>,
    /// Width of x′, the output of the input dense layer.
    pub input_width: usize,
    pub gru_widths: Vec<usize>,
    /// Hidden classifier widths; a single-logit layer follows them.
    pub classifier_widths: Vec<usize>,
    pub precision: Precision,
    /// Hash of the dataset schema the feature layout came from.
    #[serde(default)]
    pub schema_hash: u64,
}

/// Architecture knobs independent of the feature layout.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct ModelHyper {
    /// Embedding width used for every categorical feature.
    pub embed_dim: usize,
    pub input_width: usize,
    pub gru_widths: Vec<usize>,
    pub classifier_widths: Vec<usize>,
    pub precision: Precision,
}

impl Default for ModelHyper {
    fn default() -> Self {
        ModelHyper {
            embed_dim: 8,
            input_width: 64,
            gru_widths: vec![128, 64],
            classifier_widths: vec![64],
            precision: Precision::F32,
        }
    }
}

impl ModelConfig {
    pub fn from_layout(layout: &FeatureLayout, hyper: &ModelHyper, schema_hash: u64) -> Self {
        ModelConfig {
            n_dense: layout.n_dense(),
            cat_cardinalities: layout.cat_cardinalities.clone(),
            embed_dims: vec![hyper.embed_dim; layout.n_cat()],
            input_width: hyper.input_width,
            gru_widths: hyper.gru_widths.clone(),
            classifier_widths: hyper.classifier_widths.clone(),
            precision: hyper.precision,
            schema_hash,
        }
    }

    pub fn check(&self) -> Result<(), ModelError> {
        let bad = |m: &str| Err(ModelError::InvalidConfig(m.to_string()));
        if self.cat_cardinalities.len() != self.embed_dims.len() {
            return bad("one embedding width is needed per categorical feature");
        }
        if self.input_width == 0 || self.gru_widths.is_empty() {
            return bad("input width and at least one GRU layer are required");
        }
        if self.gru_widths.iter().chain(&self.classifier_widths).chain(&self.embed_dims).any(|w| *w == 0)
            || self.cat_cardinalities.iter().any(|c| *c == 0)
        {
            return bad("all widths and cardinalities must be >= 1");
        }
        Ok(())
    }

    /// Length of the concatenation fed to the input dense layer.
    pub fn concat_width(&self) -> usize {
        self.n_dense + self.embed_dims.iter().sum::<usize>()
    }

    pub fn top_width(&self) -> usize {
        *self.gru_widths.last().expect("at least one GRU layer")
    }

    /// Number of floats in one entity's recurrent state.
    pub fn state_len(&self) -> usize {
        self.gru_widths.iter().sum()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DenseLayer<F> {
    pub w: Matrix<F>,
    pub b: Vec<F>,
}

/// One GRU layer: reset gate, update gate and candidate, each with an input
/// matrix, a recurrent matrix and a bias.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GruLayer<F> {
    pub w_r: Matrix<F>,
    pub u_r: Matrix<F>,
    pub b_r: Vec<F>,
    pub w_z: Matrix<F>,
    pub u_z: Matrix<F>,
    pub b_z: Vec<F>,
    pub w_h: Matrix<F>,
    pub u_h: Matrix<F>,
    pub b_h: Vec<F>,
}

impl<F: Real> GruLayer<F> {
    pub fn width(&self) -> usize {
        self.b_r.len()
    }

    pub fn input_width(&self) -> usize {
        self.w_r.cols
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelParams<F> {
    pub embeddings: Vec<Matrix<F>>,
    pub input: DenseLayer<F>,
    pub gru: Vec<GruLayer<F>>,
    /// Hidden layers followed by the one-unit output layer.
    pub classifier: Vec<DenseLayer<F>>,
}

/// Name, shape and flat data of one tensor.
pub type TensorRef<'a, F> = (String, Vec<usize>, &'a [F]);

impl<F: Real> ModelParams<F> {
    /// All-zero parameters with the shapes `cfg` implies.
    pub fn zeros(cfg: &ModelConfig) -> Self {
        let dense = |rows: usize, cols: usize| DenseLayer { w: Matrix::zeros(rows, cols), b: vec![F::zero(); rows] };
        let embeddings = cfg
            .cat_cardinalities
            .iter()
            .zip(&cfg.embed_dims)
            .map(|(rows, dim)| Matrix::zeros(*rows, *dim))
            .collect();
        let mut gru = Vec::with_capacity(cfg.gru_widths.len());
        let mut in_w = cfg.input_width;
        for &h in &cfg.gru_widths {
            gru.push(GruLayer {
                w_r: Matrix::zeros(h, in_w),
                u_r: Matrix::zeros(h, h),
                b_r: vec![F::zero(); h],
                w_z: Matrix::zeros(h, in_w),
                u_z: Matrix::zeros(h, h),
                b_z: vec![F::zero(); h],
                w_h: Matrix::zeros(h, in_w),
                u_h: Matrix::zeros(h, h),
                b_h: vec![F::zero(); h],
            });
            in_w = h;
        }
        let mut classifier = Vec::with_capacity(cfg.classifier_widths.len() + 1);
        let mut in_w = cfg.top_width() + cfg.input_width;
        for &w in cfg.classifier_widths.iter().chain(std::iter::once(&1)) {
            classifier.push(dense(w, in_w));
            in_w = w;
        }
        ModelParams {
            embeddings,
            input: dense(cfg.input_width, cfg.concat_width()),
            gru,
            classifier,
        }
    }

    /// Glorot-uniform matrices, zero biases and small uniform embeddings,
    /// fully determined by `seed`.
    pub fn init(cfg: &ModelConfig, seed: u64) -> Self {
        let mut p = Self::zeros(cfg);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut glorot = |m: &mut Matrix<F>| {
            let a = (6.0 / (m.rows + m.cols) as f64).sqrt();
            for v in &mut m.data {
                *v = F::of(rng.gen_range(-a..=a));
            }
        };
        glorot(&mut p.input.w);
        for layer in &mut p.gru {
            for m in [
                &mut layer.w_r,
                &mut layer.u_r,
                &mut layer.w_z,
                &mut layer.u_z,
                &mut layer.w_h,
                &mut layer.u_h,
            ] {
                glorot(m);
            }
        }
        for layer in &mut p.classifier {
            glorot(&mut layer.w);
        }
        for table in &mut p.embeddings {
            for v in &mut table.data {
                *v = F::of(rng.gen_range(-EMBEDDING_INIT..=EMBEDDING_INIT));
            }
        }
        p
    }

    /// Every tensor in a fixed canonical order.
    pub fn tensors(&self) -> Vec<TensorRef<'_, F>> {
        let mut out: Vec<TensorRef<'_, F>> = Vec::new();
        for (i, e) in self.embeddings.iter().enumerate() {
            out.push((format!("embedding.{i}"), vec![e.rows, e.cols], &e.data));
        }
        out.push(("input.w".into(), vec![self.input.w.rows, self.input.w.cols], &self.input.w.data));
        out.push(("input.b".into(), vec![self.input.b.len()], &self.input.b));
        for (l, g) in self.gru.iter().enumerate() {
            for (name, m) in [("w_r", &g.w_r), ("u_r", &g.u_r), ("w_z", &g.w_z), ("u_z", &g.u_z), ("w_h", &g.w_h), ("u_h", &g.u_h)] {
                out.push((format!("gru.{l}.{name}"), vec![m.rows, m.cols], &m.data));
            }
            for (name, b) in [("b_r", &g.b_r), ("b_z", &g.b_z), ("b_h", &g.b_h)] {
                out.push((format!("gru.{l}.{name}"), vec![b.len()], b));
            }
        }
        for (k, d) in self.classifier.iter().enumerate() {
            out.push((format!("classifier.{k}.w"), vec![d.w.rows, d.w.cols], &d.w.data));
            out.push((format!("classifier.{k}.b"), vec![d.b.len()], &d.b));
        }
        out
    }

    /// Mutable views in the same order as [`tensors`](Self::tensors).
    pub fn tensors_mut(&mut self) -> Vec<&mut [F]> {
        let mut out: Vec<&mut [F]> = Vec::new();
        for e in &mut self.embeddings {
            out.push(&mut e.data);
        }
        out.push(&mut self.input.w.data);
        out.push(&mut self.input.b);
        for g in &mut self.gru {
            out.push(&mut g.w_r.data);
            out.push(&mut g.u_r.data);
            out.push(&mut g.w_z.data);
            out.push(&mut g.u_z.data);
            out.push(&mut g.w_h.data);
            out.push(&mut g.u_h.data);
            out.push(&mut g.b_r);
            out.push(&mut g.b_z);
            out.push(&mut g.b_h);
        }
        for d in &mut self.classifier {
            out.push(&mut d.w.data);
            out.push(&mut d.b);
        }
        out
    }

    pub fn n_params(&self) -> usize {
        self.tensors().iter().map(|(_, _, d)| d.len()).sum()
    }

    pub fn fill_zero(&mut self) {
        for t in self.tensors_mut() {
            t.iter_mut().for_each(|v| *v = F::zero());
        }
    }

    /// `self += other`, tensor by tensor.
    pub fn add_assign(&mut self, other: &Self) {
        let src: Vec<&[F]> = other.tensors().into_iter().map(|(_, _, d)| d).collect();
        for (dst, src) in self.tensors_mut().into_iter().zip(src) {
            for (a, b) in dst.iter_mut().zip(src) {
                *a = *a + *b;
            }
        }
    }

    pub fn scale(&mut self, k: F) {
        for t in self.tensors_mut() {
            t.iter_mut().for_each(|v| *v = *v * k);
        }
    }

    pub fn all_finite(&self) -> bool {
        self.tensors().iter().all(|(_, _, d)| d.iter().all(|v| v.is_finite()))
    }

    /// Converts every tensor to another precision.
    pub fn cast<G: Real>(&self) -> ModelParams<G> {
        let m = |x: &Matrix<F>| Matrix { rows: x.rows, cols: x.cols, data: x.data.iter().map(|v| G::of(v.to_f64().unwrap())).collect() };
        let v = |x: &Vec<F>| x.iter().map(|v| G::of(v.to_f64().unwrap())).collect::<Vec<G>>();
        ModelParams {
            embeddings: self.embeddings.iter().map(m).collect(),
            input: DenseLayer { w: m(&self.input.w), b: v(&self.input.b) },
            gru: self
                .gru
                .iter()
                .map(|g| GruLayer {
                    w_r: m(&g.w_r),
                    u_r: m(&g.u_r),
                    b_r: v(&g.b_r),
                    w_z: m(&g.w_z),
                    u_z: m(&g.u_z),
                    b_z: v(&g.b_z),
                    w_h: m(&g.w_h),
                    u_h: m(&g.u_h),
                    b_h: v(&g.b_h),
                })
                .collect(),
            classifier: self.classifier.iter().map(|d| DenseLayer { w: m(&d.w), b: v(&d.b) }).collect(),
        }
    }
}
