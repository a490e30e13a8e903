//! Parameters and the forward/backward passes of the tagger:
//! hash-embedding lookup, linear projection, `depth` windowed ReLU layers
//! with zero padding at the sequence ends, and a softmax output layer.

use std::collections::BTreeMap;

use ndarray::linalg::general_mat_mul;
use ndarray::{s, Array1, Array2, ArrayView2, Axis};
use rand::Rng;

use super::ModelConfig;

pub(crate) const FEATURE_TABLES: [&str; 4] = ["prefix", "suffix", "norm", "shape"];

/// Embedding row per table (prefix, suffix, norm, shape) for one token.
pub(crate) type Rows = [usize; 4];

#[derive(Clone, Debug, PartialEq)]
pub(crate) struct Params {
    pub embed: [Array2<f64>; 4],
    pub proj_w: Array2<f64>,
    pub proj_b: Array1<f64>,
    pub conv_w: Vec<Array2<f64>>,
    pub conv_b: Vec<Array1<f64>>,
    pub out_w: Array2<f64>,
    pub out_b: Array1<f64>,
}

pub(crate) struct Activations {
    input: Array2<f64>,
    /// `hidden[0]` is the projection, `hidden[l]` the output of layer `l`.
    hidden: Vec<Array2<f64>>,
    windows: Vec<Array2<f64>>,
    pre: Vec<Array2<f64>>,
    pub logits: Array2<f64>,
}

impl Activations {
    pub fn log_probs(&self) -> Array2<f64> {
        log_softmax(&self.logits)
    }
}

/// Row-wise log-softmax.
pub(crate) fn log_softmax(logits: &Array2<f64>) -> Array2<f64> {
    let mut out = logits.clone();
    for mut row in out.rows_mut() {
        let max = row.fold(f64::NEG_INFINITY, |m, &v| m.max(v));
        let lse = max + row.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
        row.mapv_inplace(|v| v - lse);
    }
    out
}

/// Row-wise softmax.
pub(crate) fn softmax(logits: &Array2<f64>) -> Array2<f64> {
    let mut out = logits.clone();
    for mut row in out.rows_mut() {
        let max = row.fold(f64::NEG_INFINITY, |m, &v| m.max(v));
        row.mapv_inplace(|v| (v - max).exp());
        let total = row.sum();
        row.mapv_inplace(|v| v / total);
    }
    out
}

#[derive(Clone, Debug)]
pub(crate) struct Grads {
    pub embed: [BTreeMap<usize, Array1<f64>>; 4],
    pub proj_w: Array2<f64>,
    pub proj_b: Array1<f64>,
    pub conv_w: Vec<Array2<f64>>,
    pub conv_b: Vec<Array1<f64>>,
    pub out_w: Array2<f64>,
    pub out_b: Array1<f64>,
}

fn uniform(rng: &mut impl Rng, shape: (usize, usize), scale: f64) -> Array2<f64> {
    Array2::from_shape_simple_fn(shape, || rng.random_range(-scale..scale))
}

fn xavier(rng: &mut impl Rng, fan_in: usize, fan_out: usize) -> Array2<f64> {
    let scale = (6.0 / (fan_in + fan_out) as f64).sqrt();
    uniform(rng, (fan_in, fan_out), scale)
}

/// Concatenates each position with its `window` neighbours on either side.
pub(crate) fn windowed(h: &Array2<f64>, window: usize) -> Array2<f64> {
    let (n, dim) = h.dim();
    let width = 2 * window + 1;
    let mut u = Array2::zeros((n, width * dim));
    for i in 0..n {
        for j in 0..width {
            let Some(src) = (i + j).checked_sub(window).filter(|&k| k < n) else {
                continue;
            };
            u.slice_mut(s![i, j * dim..(j + 1) * dim]).assign(&h.row(src));
        }
    }
    u
}

/// `x · w + b` for standard-layout operands.
fn affine(x: &Array2<f64>, w: &Array2<f64>, b: &Array1<f64>) -> Array2<f64> {
    let (n, k) = x.dim();
    let m = w.ncols();
    let w = w.as_slice().expect("standard layout");
    let x = x.as_slice().expect("standard layout");
    let b = b.as_slice().expect("standard layout");
    let mut out = Vec::with_capacity(n * m);
    for xi in x.chunks_exact(k) {
        let start = out.len();
        out.extend_from_slice(b);
        let row = &mut out[start..];
        for (&xv, wk) in xi.iter().zip(w.chunks_exact(m)) {
            if xv != 0.0 {
                for (o, &wv) in row.iter_mut().zip(wk) {
                    *o += xv * wv;
                }
            }
        }
    }
    Array2::from_shape_vec((n, m), out).expect("shape")
}

impl Params {
    pub fn init(cfg: &ModelConfig, tags: usize, rng: &mut impl Rng) -> Params {
        let d = cfg.embed_dim_per_feature;
        let h = cfg.hidden_dim;
        let width = 2 * cfg.window + 1;
        let embed = std::array::from_fn(|_| uniform(rng, (cfg.embed_rows_per_feature, d), 0.1));
        let proj_w = xavier(rng, 4 * d, h);
        let mut conv_w = Vec::with_capacity(cfg.encoder_depth);
        for _ in 0..cfg.encoder_depth {
            conv_w.push(xavier(rng, width * h, h));
        }
        let out_w = xavier(rng, h, tags);
        Params {
            embed,
            proj_w,
            proj_b: Array1::zeros(h),
            conv_b: vec![Array1::zeros(h); cfg.encoder_depth],
            conv_w,
            out_w,
            out_b: Array1::zeros(tags),
        }
    }

    fn dim(&self) -> usize {
        self.embed[0].ncols()
    }

    fn window(&self) -> usize {
        let h = self.proj_w.ncols();
        (self.conv_w[0].nrows() / h - 1) / 2
    }

    pub fn embed_rows(&self, rows: &[Rows]) -> Array2<f64> {
        let d = self.dim();
        let mut e = Array2::zeros((rows.len(), 4 * d));
        for (i, r) in rows.iter().enumerate() {
            for (t, &row) in r.iter().enumerate() {
                e.slice_mut(s![i, t * d..(t + 1) * d]).assign(&self.embed[t].row(row));
            }
        }
        e
    }

    pub fn forward(&self, rows: &[Rows]) -> Activations {
        let input = self.embed_rows(rows);
        let window = self.window();
        let mut hidden = Vec::with_capacity(self.conv_w.len() + 1);
        hidden.push(input.dot(&self.proj_w) + &self.proj_b);
        let mut windows = Vec::with_capacity(self.conv_w.len());
        let mut pre = Vec::with_capacity(self.conv_w.len());
        for (w, b) in self.conv_w.iter().zip(&self.conv_b) {
            let u = windowed(hidden.last().unwrap(), window);
            let z = u.dot(w) + b;
            hidden.push(z.mapv(|v| v.max(0.0)));
            windows.push(u);
            pre.push(z);
        }
        let logits = hidden.last().unwrap().dot(&self.out_w) + &self.out_b;
        Activations {
            input,
            hidden,
            windows,
            pre,
            logits,
        }
    }

    /// The output logits of [`Params::forward`], computed with the same
    /// operations but without keeping the intermediates backprop needs.
    /// Inputs here are a few tokens wide, too small for the packed GEMM
    /// kernel to pay off, so the products are plain row-major loops.
    pub fn logits(&self, rows: &[Rows]) -> Array2<f64> {
        let window = self.window();
        let mut h = affine(&self.embed_rows(rows), &self.proj_w, &self.proj_b);
        for (w, b) in self.conv_w.iter().zip(&self.conv_b) {
            h = affine(&windowed(&h, window), w, b);
            h.mapv_inplace(|v| v.max(0.0));
        }
        affine(&h, &self.out_w, &self.out_b)
    }

    pub fn zero_grads(&self) -> Grads {
        Grads {
            embed: Default::default(),
            proj_w: Array2::zeros(self.proj_w.raw_dim()),
            proj_b: Array1::zeros(self.proj_b.raw_dim()),
            conv_w: self.conv_w.iter().map(|w| Array2::zeros(w.raw_dim())).collect(),
            conv_b: self.conv_b.iter().map(|b| Array1::zeros(b.raw_dim())).collect(),
            out_w: Array2::zeros(self.out_w.raw_dim()),
            out_b: Array1::zeros(self.out_b.raw_dim()),
        }
    }

    /// Accumulates `scale * d(sum of token cross-entropies)/d(params)` into
    /// `grads` and returns the unscaled cross-entropy sum.
    pub fn backward(
        &self,
        rows: &[Rows],
        act: &Activations,
        gold: &[usize],
        scale: f64,
        grads: &mut Grads,
    ) -> f64 {
        let log_probs = act.log_probs();
        let mut loss = 0.0;
        let mut d_logits = log_probs.mapv(f64::exp);
        for (i, &g) in gold.iter().enumerate() {
            loss -= log_probs[[i, g]];
            d_logits[[i, g]] -= 1.0;
        }
        d_logits *= scale;

        let top = act.hidden.last().unwrap();
        general_mat_mul(1.0, &top.t(), &d_logits, 1.0, &mut grads.out_w);
        grads.out_b += &d_logits.sum_axis(Axis(0));
        let mut d_hidden = d_logits.dot(&self.out_w.t());

        let window = self.window();
        let h = self.proj_w.ncols();
        for l in (0..self.conv_w.len()).rev() {
            let mut d_pre = d_hidden;
            d_pre.zip_mut_with(&act.pre[l], |g, &z| {
                if z <= 0.0 {
                    *g = 0.0
                }
            });
            general_mat_mul(1.0, &act.windows[l].t(), &d_pre, 1.0, &mut grads.conv_w[l]);
            grads.conv_b[l] += &d_pre.sum_axis(Axis(0));
            let d_window = d_pre.dot(&self.conv_w[l].t());
            d_hidden = unwindow(d_window.view(), window, h);
        }

        general_mat_mul(1.0, &act.input.t(), &d_hidden, 1.0, &mut grads.proj_w);
        grads.proj_b += &d_hidden.sum_axis(Axis(0));
        let d_input = d_hidden.dot(&self.proj_w.t());
        let d = self.dim();
        for (i, r) in rows.iter().enumerate() {
            for (t, &row) in r.iter().enumerate() {
                let g = d_input.slice(s![i, t * d..(t + 1) * d]);
                grads.embed[t]
                    .entry(row)
                    .and_modify(|acc| *acc += &g)
                    .or_insert_with(|| g.to_owned());
            }
        }
        loss
    }

    pub fn sgd_step(&mut self, grads: &Grads, lr: f64) {
        for (table, g) in self.embed.iter_mut().zip(&grads.embed) {
            for (&row, delta) in g {
                table.row_mut(row).scaled_add(-lr, delta);
            }
        }
        self.proj_w.scaled_add(-lr, &grads.proj_w);
        self.proj_b.scaled_add(-lr, &grads.proj_b);
        for (w, g) in self.conv_w.iter_mut().zip(&grads.conv_w) {
            w.scaled_add(-lr, g);
        }
        for (b, g) in self.conv_b.iter_mut().zip(&grads.conv_b) {
            b.scaled_add(-lr, g);
        }
        self.out_w.scaled_add(-lr, &grads.out_w);
        self.out_b.scaled_add(-lr, &grads.out_b);
    }

    /// Tensors in declaration order, as flat row-major slices.
    pub fn tensors(&self) -> Vec<(String, Vec<usize>, &[f64])> {
        let mut out: Vec<(String, Vec<usize>, &[f64])> = Vec::new();
        for (name, t) in FEATURE_TABLES.iter().zip(&self.embed) {
            out.push((format!("embed.{name}"), t.shape().to_vec(), t.as_slice().unwrap()));
        }
        out.push(("proj.w".into(), self.proj_w.shape().to_vec(), self.proj_w.as_slice().unwrap()));
        out.push(("proj.b".into(), self.proj_b.shape().to_vec(), self.proj_b.as_slice().unwrap()));
        for (l, (w, b)) in self.conv_w.iter().zip(&self.conv_b).enumerate() {
            out.push((format!("conv{l}.w"), w.shape().to_vec(), w.as_slice().unwrap()));
            out.push((format!("conv{l}.b"), b.shape().to_vec(), b.as_slice().unwrap()));
        }
        out.push(("out.w".into(), self.out_w.shape().to_vec(), self.out_w.as_slice().unwrap()));
        out.push(("out.b".into(), self.out_b.shape().to_vec(), self.out_b.as_slice().unwrap()));
        out
    }

    pub fn tensors_mut(&mut self) -> Vec<&mut [f64]> {
        let mut out: Vec<&mut [f64]> = Vec::new();
        for t in &mut self.embed {
            out.push(t.as_slice_mut().unwrap());
        }
        out.push(self.proj_w.as_slice_mut().unwrap());
        out.push(self.proj_b.as_slice_mut().unwrap());
        for (w, b) in self.conv_w.iter_mut().zip(&mut self.conv_b) {
            out.push(w.as_slice_mut().unwrap());
            out.push(b.as_slice_mut().unwrap());
        }
        out.push(self.out_w.as_slice_mut().unwrap());
        out.push(self.out_b.as_slice_mut().unwrap());
        out
    }
}

impl Grads {
    /// Dense copies in the same order as [`Params::tensors`].
    pub fn dense(&self, params: &Params) -> Vec<Vec<f64>> {
        let mut out = Vec::new();
        for (table, g) in params.embed.iter().zip(&self.embed) {
            let mut dense = Array2::<f64>::zeros(table.raw_dim());
            for (&row, delta) in g {
                dense.row_mut(row).assign(delta);
            }
            out.push(dense.into_raw_vec_and_offset().0);
        }
        out.push(self.proj_w.iter().copied().collect());
        out.push(self.proj_b.to_vec());
        for (w, b) in self.conv_w.iter().zip(&self.conv_b) {
            out.push(w.iter().copied().collect());
            out.push(b.to_vec());
        }
        out.push(self.out_w.iter().copied().collect());
        out.push(self.out_b.to_vec());
        out
    }
}

/// Adjoint of [`windowed`].
fn unwindow(d_window: ArrayView2<f64>, window: usize, dim: usize) -> Array2<f64> {
    let n = d_window.nrows();
    let width = 2 * window + 1;
    let mut d_h = Array2::zeros((n, dim));
    for i in 0..n {
        for j in 0..width {
            let Some(src) = (i + j).checked_sub(window).filter(|&k| k < n) else {
                continue;
            };
            let mut target = d_h.row_mut(src);
            target += &d_window.slice(s![i, j * dim..(j + 1) * dim]);
        }
    }
    d_h
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn window_pads_with_zeros() {
        let h = array![[1.0, 2.0], [3.0, 4.0]];
        let u = windowed(&h, 1);
        assert_eq!(u, array![[0.0, 0.0, 1.0, 2.0, 3.0, 4.0], [1.0, 2.0, 3.0, 4.0, 0.0, 0.0]]);
        assert_eq!(unwindow(u.view(), 1, 2), array![[2.0, 4.0], [6.0, 8.0]]);
    }

    #[test]
    fn inference_logits_match_training_forward() {
        use rand::SeedableRng;
        let cfg = ModelConfig { hidden_dim: 8, embed_rows_per_feature: 64, ..ModelConfig::default() };
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(3);
        let params = Params::init(&cfg, 9, &mut rng);
        for n in 1..6 {
            let rows: Vec<Rows> = (0..n).map(|i| [i, 2 * i + 1, 63 - i, 7]).collect();
            let fast = params.logits(&rows);
            let slow = params.forward(&rows).logits;
            assert_eq!(fast.dim(), slow.dim());
            for (a, b) in fast.iter().zip(&slow) {
                assert!((a - b).abs() < 1e-12, "{a} vs {b}");
            }
        }
    }

    #[test]
    fn affine_matches_dot() {
        let x = array![[1.0, 0.0, -2.0], [0.5, 3.0, 1.0]];
        let w = array![[1.0, 2.0], [3.0, 4.0], [5.0, 6.0]];
        let b = array![0.25, -1.0];
        assert_eq!(affine(&x, &w, &b), x.dot(&w) + &b);
    }
}
