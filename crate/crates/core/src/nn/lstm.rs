use std::sync::OnceLock;

use rand::Rng;

use super::matrix::{gemm, Matrix};
use super::activation::{sigmoid_slice, tanh, tanh_slice};
use super::{uniform_fill, Params};
use crate::error::{Error, Result};

/// Single-layer LSTM cell. Gate rows are stacked as input, forget, cell
/// candidate, output: `w_ih` is `4H x I`, `w_hh` is `4H x H`.
#[derive(Debug, Clone, PartialEq)]
pub struct LstmParams {
    input_size: usize,
    hidden_size: usize,
    w_ih: Matrix,
    w_hh: Matrix,
    bias: Vec<f64>,
    // bumped on every mutable access; ties caches to parameter values
    generation: u64,
    transposed: TransposedWeights,
}

/// `w_ihᵀ` and `w_hhᵀ` for the single-sequence kernel, built on first use
/// and dropped whenever the parameters change.
#[derive(Debug, Clone, Default)]
struct TransposedWeights(OnceLock<(Vec<f64>, Vec<f64>)>);

impl PartialEq for TransposedWeights {
    // derived data only
    fn eq(&self, _: &Self) -> bool {
        true
    }
}

/// Intermediates of one forward pass, consumed by [`LstmParams::backward`].
#[derive(Debug, Clone)]
pub struct LstmCache {
    generation: u64,
    batch: usize,
    steps: Vec<StepCache>,
}

#[derive(Debug, Clone)]
struct StepCache {
    x: Matrix,
    h_prev: Matrix,
    c_prev: Matrix,
    // activated gates, B x 4H, same stacking as the weights
    gates: Matrix,
    tanh_c: Matrix,
}

impl LstmCache {
    pub fn batch(&self) -> usize {
        self.batch
    }

    pub fn steps(&self) -> usize {
        self.steps.len()
    }
}

impl LstmParams {
    pub fn zeros(input_size: usize, hidden_size: usize) -> Self {
        Self {
            input_size,
            hidden_size,
            w_ih: Matrix::zeros(4 * hidden_size, input_size),
            w_hh: Matrix::zeros(4 * hidden_size, hidden_size),
            bias: vec![0.0; 4 * hidden_size],
            generation: 0,
            transposed: TransposedWeights::default(),
        }
    }

    /// Uniform `±1/sqrt(fan_in)` weights per matrix, zero biases except the
    /// forget gate, which starts at 1.
    pub fn init<R: Rng>(input_size: usize, hidden_size: usize, rng: &mut R) -> Self {
        let mut p = Self::zeros(input_size, hidden_size);
        uniform_fill(p.w_ih.as_mut_slice(), 1.0 / (input_size as f64).sqrt(), rng);
        uniform_fill(p.w_hh.as_mut_slice(), 1.0 / (hidden_size as f64).sqrt(), rng);
        p.bias[hidden_size..2 * hidden_size].fill(1.0);
        p
    }

    pub fn from_parts(w_ih: Matrix, w_hh: Matrix, bias: Vec<f64>) -> Result<Self> {
        let h4 = w_ih.rows();
        if h4 == 0 || !h4.is_multiple_of(4) {
            return Err(Error::shape("4H rows", h4));
        }
        let hidden = h4 / 4;
        w_hh.check_shape(h4, hidden)?;
        if bias.len() != h4 {
            return Err(Error::shape(h4, bias.len()));
        }
        Ok(Self {
            input_size: w_ih.cols(),
            hidden_size: hidden,
            w_ih,
            w_hh,
            bias,
            generation: 0,
            transposed: TransposedWeights::default(),
        })
    }

    pub fn input_size(&self) -> usize {
        self.input_size
    }

    pub fn hidden_size(&self) -> usize {
        self.hidden_size
    }

    pub fn w_ih(&self) -> &Matrix {
        &self.w_ih
    }

    pub fn w_hh(&self) -> &Matrix {
        &self.w_hh
    }

    pub fn bias(&self) -> &[f64] {
        &self.bias
    }

    pub fn zeros_like(&self) -> Self {
        Self::zeros(self.input_size, self.hidden_size)
    }

    /// Batched forward pass from a zero state. `xs[t]` is `B x I`; returns
    /// the hidden state after every step (`B x H` each).
    pub fn forward(&self, xs: &[Matrix]) -> Result<(Vec<Matrix>, LstmCache)> {
        let (batch, hidden) = self.check_inputs(xs)?;
        let mut h = Matrix::zeros(batch, hidden);
        let mut c = Matrix::zeros(batch, hidden);
        let mut outputs = Vec::with_capacity(xs.len());
        let mut steps = Vec::with_capacity(xs.len());

        // input projections for every step in one product
        let mut x_all = Matrix::zeros(xs.len() * batch, self.input_size);
        for (t, x) in xs.iter().enumerate() {
            let n = batch * self.input_size;
            x_all.as_mut_slice()[t * n..(t + 1) * n].copy_from_slice(x.as_slice());
        }
        let mut proj = Matrix::zeros(xs.len() * batch, 4 * hidden);
        gemm(1.0, &x_all, false, &self.w_ih, true, 0.0, &mut proj);
        let w_hh_t = self.w_hh.transposed();

        for (t, x) in xs.iter().enumerate() {
            let n = batch * 4 * hidden;
            let mut gates =
                Matrix::from_vec(batch, 4 * hidden, proj.as_slice()[t * n..(t + 1) * n].to_vec())?;
            gemm(1.0, &h, false, &w_hh_t, false, 1.0, &mut gates);
            gates.add_row_vector(&self.bias);

            let mut c_next = Matrix::zeros(batch, hidden);
            let mut tanh_c = Matrix::zeros(batch, hidden);
            let mut h_next = Matrix::zeros(batch, hidden);
            for b in 0..batch {
                let g = gates.row_mut(b);
                activate_gates(g, hidden);
                let (cp, cn, tc, hn) = (
                    c.row(b),
                    c_next.row_mut(b),
                    tanh_c.row_mut(b),
                    h_next.row_mut(b),
                );
                for j in 0..hidden {
                    cn[j] = g[hidden + j] * cp[j] + g[j] * g[2 * hidden + j];
                }
                tc.copy_from_slice(cn);
                tanh_slice(tc);
                for j in 0..hidden {
                    hn[j] = g[3 * hidden + j] * tc[j];
                }
            }
            steps.push(StepCache {
                x: x.clone(),
                h_prev: h,
                c_prev: c,
                gates,
                tanh_c,
            });
            outputs.push(h_next.clone());
            h = h_next;
            c = c_next;
        }
        Ok((
            outputs,
            LstmCache {
                generation: self.generation,
                batch,
                steps,
            },
        ))
    }

    /// Backpropagation through time. `d_hidden[t]` is the loss gradient with
    /// respect to the step-`t` output. Returns parameter gradients and input
    /// gradients (`B x I` per step).
    pub fn backward(&self, cache: &LstmCache, d_hidden: &[Matrix]) -> Result<(LstmParams, Vec<Matrix>)> {
        let (grads, dx) = self.backward_impl(cache, d_hidden, true)?;
        Ok((grads, dx.expect("requested")))
    }

    /// Parameter gradients only; skips the input gradients.
    pub fn backward_params(&self, cache: &LstmCache, d_hidden: &[Matrix]) -> Result<LstmParams> {
        Ok(self.backward_impl(cache, d_hidden, false)?.0)
    }

    fn backward_impl(
        &self,
        cache: &LstmCache,
        d_hidden: &[Matrix],
        input_grads: bool,
    ) -> Result<(LstmParams, Option<Vec<Matrix>>)> {
        if cache.generation != self.generation || cache.steps.is_empty() {
            return Err(Error::InvalidCache);
        }
        let batch = cache.batch;
        let hidden = self.hidden_size;
        if cache.steps[0].x.cols() != self.input_size {
            return Err(Error::InvalidCache);
        }
        if d_hidden.len() != cache.steps.len() {
            return Err(Error::shape(cache.steps.len(), d_hidden.len()));
        }
        for d in d_hidden {
            d.check_shape(batch, hidden)?;
        }

        let mut grads = self.zeros_like();
        let mut dx = if input_grads {
            vec![Matrix::zeros(batch, self.input_size); cache.steps.len()]
        } else {
            Vec::new()
        };
        let mut dh_next = Matrix::zeros(batch, hidden);
        let mut dc_next = Matrix::zeros(batch, hidden);
        let mut d_pre = Matrix::zeros(batch, 4 * hidden);
        let steps = cache.steps.len();
        let mut d_pre_all = Matrix::zeros(steps * batch, 4 * hidden);

        for (t, step) in cache.steps.iter().enumerate().rev() {
            for b in 0..batch {
                let g = step.gates.row(b);
                let tc = step.tanh_c.row(b);
                let cp = step.c_prev.row(b);
                let dh_out = d_hidden[t].row(b);
                let dhn = dh_next.row(b);
                let dcn = dc_next.row_mut(b);
                let dp = d_pre.row_mut(b);
                for j in 0..hidden {
                    let (i, f, gg, o) = (g[j], g[hidden + j], g[2 * hidden + j], g[3 * hidden + j]);
                    let dh = dh_out[j] + dhn[j];
                    let d_o = dh * tc[j];
                    let dc = dh * o * (1.0 - tc[j] * tc[j]) + dcn[j];
                    let d_i = dc * gg;
                    let d_g = dc * i;
                    let d_f = dc * cp[j];
                    dcn[j] = dc * f;
                    dp[j] = d_i * i * (1.0 - i);
                    dp[hidden + j] = d_f * f * (1.0 - f);
                    dp[2 * hidden + j] = d_g * (1.0 - gg * gg);
                    dp[3 * hidden + j] = d_o * o * (1.0 - o);
                }
            }
            if input_grads {
                gemm(1.0, &d_pre, false, &self.w_ih, false, 0.0, &mut dx[t]);
            }
            if t > 0 {
                gemm(1.0, &d_pre, false, &self.w_hh, false, 0.0, &mut dh_next);
            }
            let rows = t * batch * 4 * hidden..(t + 1) * batch * 4 * hidden;
            d_pre_all.as_mut_slice()[rows].copy_from_slice(d_pre.as_slice());
        }
        // weight gradients for all steps at once: one long-K product each
        let stack = |part: fn(&StepCache) -> &Matrix, cols: usize| {
            let mut m = Matrix::zeros(steps * batch, cols);
            for (t, step) in cache.steps.iter().enumerate() {
                m.as_mut_slice()[t * batch * cols..(t + 1) * batch * cols]
                    .copy_from_slice(part(step).as_slice());
            }
            m
        };
        let xs = stack(|s| &s.x, self.input_size);
        let hs = stack(|s| &s.h_prev, hidden);
        gemm(1.0, &d_pre_all, true, &xs, false, 0.0, &mut grads.w_ih);
        gemm(1.0, &d_pre_all, true, &hs, false, 0.0, &mut grads.w_hh);
        d_pre_all.add_column_sums_to(&mut grads.bias);
        Ok((grads, input_grads.then_some(dx)))
    }

    /// Final hidden state for a single sequence, computed with a fixed
    /// summation order independent of any batch it might belong to.
    pub fn last_hidden(&self, xs: &[&[f64]]) -> Result<Vec<f64>> {
        if xs.is_empty() {
            return Err(Error::TooShort { needed: 1, got: 0 });
        }
        let hidden = self.hidden_size;
        let (w_ih_t, w_hh_t) = self
            .transposed
            .0
            .get_or_init(|| (self.w_ih.transposed().into_vec(), self.w_hh.transposed().into_vec()));
        let mut h = vec![0.0; hidden];
        let mut c = vec![0.0; hidden];
        let mut gates = vec![0.0; 4 * hidden];
        for x in xs {
            if x.len() != self.input_size {
                return Err(Error::shape(self.input_size, x.len()));
            }
            gates.copy_from_slice(&self.bias);
            matvec_acc(&mut gates, w_ih_t, x);
            matvec_acc(&mut gates, w_hh_t, &h);
            activate_gates(&mut gates, hidden);
            for j in 0..hidden {
                c[j] = gates[hidden + j] * c[j] + gates[j] * gates[2 * hidden + j];
                h[j] = gates[3 * hidden + j] * tanh(c[j]);
            }
        }
        Ok(h)
    }

    fn check_inputs(&self, xs: &[Matrix]) -> Result<(usize, usize)> {
        let first = xs.first().ok_or(Error::TooShort { needed: 1, got: 0 })?;
        let batch = first.rows();
        for x in xs {
            x.check_shape(batch, self.input_size)?;
        }
        Ok((batch, self.hidden_size))
    }
}

const TILE: usize = 32;

/// `out[r] += Σ_k wt[k][r] · v[k]`, summed in increasing `k` for every `r`
/// (`wt` is row-major `len(v) x len(out)`).
#[inline(always)]
fn matvec_acc_body(out: &mut [f64], wt: &[f64], v: &[f64]) {
    let n = out.len();
    let mut chunks = out.chunks_exact_mut(TILE);
    for (t, o) in chunks.by_ref().enumerate() {
        let base = t * TILE;
        let mut acc = [0.0; TILE];
        acc.copy_from_slice(o);
        for (k, &vk) in v.iter().enumerate() {
            let row = &wt[k * n + base..k * n + base + TILE];
            for i in 0..TILE {
                acc[i] += row[i] * vk;
            }
        }
        o.copy_from_slice(&acc);
    }
    let rest = chunks.into_remainder();
    let base = n - rest.len();
    for (k, &vk) in v.iter().enumerate() {
        for (i, o) in rest.iter_mut().enumerate() {
            *o += wt[k * n + base + i] * vk;
        }
    }
}

/// Same arithmetic on every CPU; AVX2 only widens the vectors.
fn matvec_acc(out: &mut [f64], wt: &[f64], v: &[f64]) {
    debug_assert_eq!(wt.len(), out.len() * v.len());
    #[cfg(target_arch = "x86_64")]
    if std::arch::is_x86_feature_detected!("avx2") {
        #[target_feature(enable = "avx2")]
        unsafe fn wide(out: &mut [f64], wt: &[f64], v: &[f64]) {
            matvec_acc_body(out, wt, v)
        }
        // SAFETY: AVX2 support was just checked.
        unsafe { wide(out, wt, v) };
        return;
    }
    matvec_acc_body(out, wt, v)
}

fn activate_gates(g: &mut [f64], hidden: usize) {
    sigmoid_slice(&mut g[..2 * hidden]);
    tanh_slice(&mut g[2 * hidden..3 * hidden]);
    sigmoid_slice(&mut g[3 * hidden..]);
}

impl Params for LstmParams {
    fn tensors(&self) -> Vec<&[f64]> {
        vec![self.w_ih.as_slice(), self.w_hh.as_slice(), &self.bias]
    }

    fn tensors_mut(&mut self) -> Vec<&mut [f64]> {
        self.generation += 1;
        self.transposed = TransposedWeights::default();
        vec![self.w_ih.as_mut_slice(), self.w_hh.as_mut_slice(), &mut self.bias]
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::grad_check;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn random_inputs(rng: &mut ChaCha8Rng, steps: usize, batch: usize, input: usize) -> Vec<Matrix> {
        (0..steps)
            .map(|_| Matrix::from_fn(batch, input, |_, _| rng.random_range(-1.0..1.0)))
            .collect()
    }

    #[test]
    fn zero_params_give_zero_outputs() {
        let p = LstmParams::zeros(6, 8);
        let xs = random_inputs(&mut ChaCha8Rng::seed_from_u64(1), 4, 3, 6);
        let (hs, _) = p.forward(&xs).unwrap();
        assert!(hs.iter().all(|h| h.as_slice().iter().all(|v| *v == 0.0)));
    }

    #[test]
    fn hand_computed_single_step() {
        // H = 1, I = 1, all weights zero: i = sigmoid(b_i), g = tanh(b_g), o = sigmoid(b_o)
        let w_ih = Matrix::zeros(4, 1);
        let w_hh = Matrix::zeros(4, 1);
        let bias = vec![0.0, 10.0, 0.5, 2.0];
        let p = LstmParams::from_parts(w_ih, w_hh, bias).unwrap();
        let (hs, _) = p.forward(&[Matrix::from_vec(1, 1, vec![3.0]).unwrap()]).unwrap();
        let c = 0.5 * 0.5f64.tanh();
        let o = 1.0 / (1.0 + (-2.0f64).exp());
        let expect = o * c.tanh();
        assert!((hs[0].get(0, 0) - expect).abs() < 1e-15);
    }

    #[test]
    fn batched_and_single_paths_agree() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let p = LstmParams::init(6, 16, &mut rng);
        let xs = random_inputs(&mut rng, 10, 5, 6);
        let (hs, _) = p.forward(&xs).unwrap();
        let (hs2, _) = p.forward(&xs).unwrap();
        assert_eq!(hs, hs2);
        for b in 0..5 {
            let rows: Vec<&[f64]> = xs.iter().map(|x| x.row(b)).collect();
            let h = p.last_hidden(&rows).unwrap();
            for (j, v) in h.iter().enumerate() {
                assert!((v - hs[9].get(b, j)).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn backward_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let p = LstmParams::init(3, 4, &mut rng);
        let xs = random_inputs(&mut rng, 5, 2, 3);
        let probes: Vec<Matrix> = (0..5)
            .map(|_| Matrix::from_fn(2, 4, |_, _| rng.random_range(-1.0..1.0)))
            .collect();
        let loss = |q: &LstmParams| -> f64 {
            let (hs, _) = q.forward(&xs).unwrap();
            hs.iter()
                .zip(&probes)
                .map(|(h, w)| h.as_slice().iter().zip(w.as_slice()).map(|(a, b)| a * b).sum::<f64>())
                .sum()
        };
        let (_, cache) = p.forward(&xs).unwrap();
        let (grads, dx) = p.backward(&cache, &probes).unwrap();
        let report = grad_check(&p, &grads, loss, 1e-5);
        assert!(report.max_rel_error < 1e-4, "{report:?}");

        // input gradients
        for t in 0..5 {
            for b in 0..2 {
                for k in 0..3 {
                    let mut plus = xs.clone();
                    plus[t].set(b, k, xs[t].get(b, k) + 1e-5);
                    let mut minus = xs.clone();
                    minus[t].set(b, k, xs[t].get(b, k) - 1e-5);
                    let eval = |inp: &[Matrix]| -> f64 {
                        let (hs, _) = p.forward(inp).unwrap();
                        hs.iter()
                            .zip(&probes)
                            .map(|(h, w)| h.as_slice().iter().zip(w.as_slice()).map(|(a, b)| a * b).sum::<f64>())
                            .sum()
                    };
                    let num = (eval(&plus) - eval(&minus)) / 2e-5;
                    let ana = dx[t].get(b, k);
                    assert!((num - ana).abs() / num.abs().max(ana.abs()).max(1e-8) < 1e-4);
                }
            }
        }
    }

    #[test]
    fn zero_and_doubled_output_gradients() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let p = LstmParams::init(3, 4, &mut rng);
        let xs = random_inputs(&mut rng, 4, 2, 3);
        let (_, cache) = p.forward(&xs).unwrap();
        let zeros = vec![Matrix::zeros(2, 4); 4];
        let (g0, _) = p.backward(&cache, &zeros).unwrap();
        assert!(g0.tensors().iter().all(|t| t.iter().all(|v| *v == 0.0)));

        let d: Vec<Matrix> = (0..4).map(|_| Matrix::from_fn(2, 4, |_, _| rng.random_range(-1.0..1.0))).collect();
        let d2: Vec<Matrix> = d.iter().map(|m| Matrix::from_fn(2, 4, |i, j| 2.0 * m.get(i, j))).collect();
        let (g1, _) = p.backward(&cache, &d).unwrap();
        let (g2, _) = p.backward(&cache, &d2).unwrap();
        for (a, b) in g1.tensors().iter().zip(g2.tensors()) {
            for (x, y) in a.iter().zip(b) {
                assert!((2.0 * x - y).abs() <= 1e-12 * y.abs().max(1.0));
            }
        }
    }

    #[test]
    fn stale_cache_is_rejected() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let mut p = LstmParams::init(3, 4, &mut rng);
        let xs = random_inputs(&mut rng, 2, 1, 3);
        let (_, cache) = p.forward(&xs).unwrap();
        p.tensors_mut()[2][0] += 0.1;
        let d = vec![Matrix::zeros(1, 4); 2];
        assert!(matches!(p.backward(&cache, &d), Err(Error::InvalidCache)));
    }

    #[test]
    fn input_shape_is_checked() {
        let p = LstmParams::zeros(6, 4);
        assert!(matches!(p.forward(&[Matrix::zeros(1, 5)]), Err(Error::ShapeMismatch { .. })));
        assert!(p.last_hidden(&[&[0.0; 5]]).is_err());
    }

    #[test]
    fn matvec_dispatch_is_bit_identical() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for (n, k) in [(512, 128), (40, 6), (7, 3)] {
            let wt: Vec<f64> = (0..n * k).map(|_| rng.random_range(-1.0..1.0)).collect();
            let v: Vec<f64> = (0..k).map(|_| rng.random_range(-1.0..1.0)).collect();
            let init: Vec<f64> = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
            let (mut a, mut b) = (init.clone(), init.clone());
            matvec_acc(&mut a, &wt, &v);
            matvec_acc_body(&mut b, &wt, &v);
            assert_eq!(a, b);
            for r in 0..n {
                let mut want = init[r];
                for j in 0..k {
                    want += wt[j * n + r] * v[j];
                }
                assert_eq!(a[r].to_bits(), want.to_bits());
            }
        }
    }
}
