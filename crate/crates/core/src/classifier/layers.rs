//! Network layers with explicit forward and backward passes.
//!
//! Everything is expressed as 2D: a 1D sequence is a height-1 image and a
//! 1D kernel of length `k` is a `1 × k` kernel. Convolutions use "same"
//! padding (extra padding on the bottom/right for even kernels) and pooling
//! uses ceil mode, so a partial trailing window still yields an output.
// Flat-index kernels read better with explicit index ranges.
#![allow(clippy::needless_range_loop)]

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use super::scalar::Scalar;

pub(crate) const BN_EPS: f64 = 1e-5;

/// Dense `n × c × h × w` activations.
#[derive(Debug, Clone, PartialEq)]
pub(crate) struct Tensor<F> {
    pub n: usize,
    pub c: usize,
    pub h: usize,
    pub w: usize,
    pub data: Vec<F>,
}

impl<F: Scalar> Tensor<F> {
    pub fn zeros(n: usize, c: usize, h: usize, w: usize) -> Self {
        Self {
            n,
            c,
            h,
            w,
            data: vec![F::zero(); n * c * h * w],
        }
    }

    pub fn sample_len(&self) -> usize {
        self.c * self.h * self.w
    }

    pub fn sample(&self, i: usize) -> &[F] {
        let len = self.sample_len();
        &self.data[i * len..(i + 1) * len]
    }

    pub fn sample_mut(&mut self, i: usize) -> &mut [F] {
        let len = self.sample_len();
        &mut self.data[i * len..(i + 1) * len]
    }

    fn same_shape(&self) -> Self {
        Self::zeros(self.n, self.c, self.h, self.w)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) enum Mode {
    /// Dropout on, batch-norm on batch statistics.
    Train,
    /// Dropout off, batch-norm on batch statistics which are reported back.
    Calibrate,
    /// Dropout off, batch-norm on running statistics.
    Eval,
}

#[derive(Debug, Clone, PartialEq)]
pub(crate) struct Conv<F> {
    pub cin: usize,
    pub cout: usize,
    pub kh: usize,
    pub kw: usize,
    /// `cout × (cin·kh·kw)`
    pub weight: Vec<F>,
    pub bias: Vec<F>,
}

#[derive(Debug, Clone, PartialEq)]
pub(crate) struct BatchNorm<F> {
    pub gamma: Vec<F>,
    pub beta: Vec<F>,
    pub running_mean: Vec<F>,
    pub running_var: Vec<F>,
}

impl<F: Scalar> BatchNorm<F> {
    pub fn identity(c: usize) -> Self {
        Self {
            gamma: vec![F::one(); c],
            beta: vec![F::zero(); c],
            running_mean: vec![F::zero(); c],
            running_var: vec![F::one(); c],
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub(crate) enum Layer<F> {
    Conv(Conv<F>),
    Relu,
    BatchNorm(BatchNorm<F>),
    MaxPool { ph: usize, pw: usize },
    Dropout { rate: f64 },
    GlobalAvgPool,
}

pub(crate) enum Cache<F> {
    Conv {
        input: Tensor<F>,
    },
    Relu {
        mask: Vec<bool>,
    },
    BatchNorm {
        xhat: Vec<F>,
        inv_std: Vec<F>,
        batch_stats: bool,
    },
    MaxPool {
        argmax: Vec<u32>,
        in_h: usize,
        in_w: usize,
    },
    Dropout {
        mask: Option<Vec<F>>,
    },
    Gap {
        h: usize,
        w: usize,
    },
}

pub(crate) enum Grad<F> {
    None,
    Conv { dw: Vec<F>, db: Vec<F> },
    BatchNorm { dgamma: Vec<F>, dbeta: Vec<F> },
}

/// Per-channel `(mean, biased variance)` of one batch-norm layer.
pub(crate) type BnStats = (Vec<f64>, Vec<f64>);

fn pads(kh: usize, kw: usize) -> (usize, usize) {
    ((kh - 1) / 2, (kw - 1) / 2)
}

/// Column buffer `[(ci, ki, kj)][y·w + x]` for one sample.
fn im2col<F: Scalar>(x: &[F], cin: usize, h: usize, w: usize, kh: usize, kw: usize, col: &mut [F]) {
    let (pt, pl) = pads(kh, kw);
    let p = h * w;
    for ci in 0..cin {
        let plane = &x[ci * p..(ci + 1) * p];
        for ki in 0..kh {
            for kj in 0..kw {
                let row = &mut col[((ci * kh + ki) * kw + kj) * p..][..p];
                let shift = kj as isize - pl as isize;
                let x0 = (-shift).max(0) as usize;
                let x1 = (w as isize - shift).clamp(0, w as isize) as usize;
                for y in 0..h {
                    let dst = &mut row[y * w..(y + 1) * w];
                    let sy = y as isize + ki as isize - pt as isize;
                    if sy < 0 || sy >= h as isize || x0 >= x1 {
                        dst.fill(F::zero());
                        continue;
                    }
                    let src = &plane[sy as usize * w..(sy as usize + 1) * w];
                    dst[..x0].fill(F::zero());
                    dst[x1..].fill(F::zero());
                    let s0 = (x0 as isize + shift) as usize;
                    dst[x0..x1].copy_from_slice(&src[s0..s0 + (x1 - x0)]);
                }
            }
        }
    }
}

/// Adjoint of [`im2col`]: accumulates columns back into the input gradient.
fn col2im<F: Scalar>(col: &[F], cin: usize, h: usize, w: usize, kh: usize, kw: usize, dx: &mut [F]) {
    let (pt, pl) = pads(kh, kw);
    let p = h * w;
    for ci in 0..cin {
        let plane = &mut dx[ci * p..(ci + 1) * p];
        for ki in 0..kh {
            for kj in 0..kw {
                let row = &col[((ci * kh + ki) * kw + kj) * p..][..p];
                let shift = kj as isize - pl as isize;
                let x0 = (-shift).max(0) as usize;
                let x1 = (w as isize - shift).clamp(0, w as isize) as usize;
                if x0 >= x1 {
                    continue;
                }
                for y in 0..h {
                    let sy = y as isize + ki as isize - pt as isize;
                    if sy < 0 || sy >= h as isize {
                        continue;
                    }
                    let s0 = (x0 as isize + shift) as usize;
                    let dst = &mut plane[sy as usize * w + s0..][..x1 - x0];
                    for (d, s) in dst.iter_mut().zip(&row[y * w + x0..y * w + x1]) {
                        *d += *s;
                    }
                }
            }
        }
    }
}

impl<F: Scalar> Conv<F> {
    fn k(&self) -> usize {
        self.cin * self.kh * self.kw
    }

    fn pointwise(&self) -> bool {
        self.kh == 1 && self.kw == 1
    }

    fn forward(&self, x: &Tensor<F>) -> Tensor<F> {
        let (h, w, p, k) = (x.h, x.w, x.h * x.w, self.k());
        let mut out = Tensor::zeros(x.n, self.cout, h, w);
        let mut col = if self.pointwise() {
            Vec::new()
        } else {
            vec![F::zero(); k * p]
        };
        for s in 0..x.n {
            let o = out.sample_mut(s);
            for (co, b) in self.bias.iter().enumerate() {
                o[co * p..(co + 1) * p].fill(*b);
            }
            let cols: &[F] = if self.pointwise() {
                x.sample(s)
            } else {
                im2col(x.sample(s), self.cin, h, w, self.kh, self.kw, &mut col);
                &col
            };
            F::gemm(
                self.cout,
                k,
                p,
                &self.weight,
                (k as isize, 1),
                cols,
                (p as isize, 1),
                F::one(),
                o,
                (p as isize, 1),
            );
        }
        out
    }

    fn backward(&self, input: &Tensor<F>, dout: &Tensor<F>, need_dx: bool) -> (Option<Tensor<F>>, Grad<F>) {
        let (h, w, p, k) = (input.h, input.w, input.h * input.w, self.k());
        let mut dw = vec![F::zero(); self.cout * k];
        let mut db = vec![F::zero(); self.cout];
        let mut dx = need_dx.then(|| input.same_shape());
        let mut col = if self.pointwise() {
            Vec::new()
        } else {
            vec![F::zero(); k * p]
        };
        let mut dcol = vec![F::zero(); if need_dx && !self.pointwise() { k * p } else { 0 }];
        for s in 0..input.n {
            let g = dout.sample(s);
            for (co, d) in db.iter_mut().enumerate() {
                *d += g[co * p..(co + 1) * p].iter().copied().sum::<F>();
            }
            let cols: &[F] = if self.pointwise() {
                input.sample(s)
            } else {
                im2col(input.sample(s), self.cin, h, w, self.kh, self.kw, &mut col);
                &col
            };
            // dW += dY · colsᵀ
            F::gemm(
                self.cout,
                p,
                k,
                g,
                (p as isize, 1),
                cols,
                (1, p as isize),
                F::one(),
                &mut dw,
                (k as isize, 1),
            );
            if let Some(dx) = dx.as_mut() {
                let target = dx.sample_mut(s);
                if self.pointwise() {
                    F::gemm(
                        k,
                        self.cout,
                        p,
                        &self.weight,
                        (1, k as isize),
                        g,
                        (p as isize, 1),
                        F::zero(),
                        target,
                        (p as isize, 1),
                    );
                } else {
                    F::gemm(
                        k,
                        self.cout,
                        p,
                        &self.weight,
                        (1, k as isize),
                        g,
                        (p as isize, 1),
                        F::zero(),
                        &mut dcol,
                        (p as isize, 1),
                    );
                    col2im(&dcol, self.cin, h, w, self.kh, self.kw, target);
                }
            }
        }
        (dx, Grad::Conv { dw, db })
    }
}

impl<F: Scalar> Layer<F> {
    pub fn forward(
        &self,
        mut x: Tensor<F>,
        mode: Mode,
        rng: &mut ChaCha8Rng,
        keep_cache: bool,
        stats: &mut Vec<BnStats>,
    ) -> (Tensor<F>, Option<Cache<F>>) {
        match self {
            Layer::Conv(conv) => {
                let out = conv.forward(&x);
                (out, keep_cache.then_some(Cache::Conv { input: x }))
            }
            Layer::Relu => {
                let mut mask = Vec::new();
                if keep_cache {
                    mask.reserve(x.data.len());
                }
                for v in &mut x.data {
                    let on = *v > F::zero();
                    if !on {
                        *v = F::zero();
                    }
                    if keep_cache {
                        mask.push(on);
                    }
                }
                (x, keep_cache.then_some(Cache::Relu { mask }))
            }
            Layer::BatchNorm(bn) => {
                let (c, p) = (x.c, x.h * x.w);
                let batch_stats = mode != Mode::Eval;
                let mut inv_std = Vec::with_capacity(c);
                let mut shift = Vec::with_capacity(c);
                if batch_stats {
                    let count = (x.n * p) as f64;
                    let (mut means, mut vars) = (Vec::with_capacity(c), Vec::with_capacity(c));
                    for ch in 0..c {
                        let mut sum = 0.0;
                        for s in 0..x.n {
                            let off = (s * c + ch) * p;
                            sum += x.data[off..off + p].iter().map(|v| v.to_f64().unwrap()).sum::<f64>();
                        }
                        let mean = sum / count;
                        let mut sq = 0.0;
                        for s in 0..x.n {
                            let off = (s * c + ch) * p;
                            sq += x.data[off..off + p]
                                .iter()
                                .map(|v| {
                                    let d = v.to_f64().unwrap() - mean;
                                    d * d
                                })
                                .sum::<f64>();
                        }
                        let var = sq / count;
                        means.push(mean);
                        vars.push(var);
                        inv_std.push(F::lit(1.0 / (var + BN_EPS).sqrt()));
                        shift.push(F::lit(mean));
                    }
                    if mode == Mode::Calibrate {
                        stats.push((means, vars));
                    }
                } else {
                    for ch in 0..c {
                        inv_std.push(F::one() / (bn.running_var[ch] + F::lit(BN_EPS)).sqrt());
                        shift.push(bn.running_mean[ch]);
                    }
                }
                let mut xhat = if keep_cache {
                    vec![F::zero(); x.data.len()]
                } else {
                    Vec::new()
                };
                for s in 0..x.n {
                    for ch in 0..c {
                        let off = (s * c + ch) * p;
                        let (g, b, is, mu) = (bn.gamma[ch], bn.beta[ch], inv_std[ch], shift[ch]);
                        for i in off..off + p {
                            let nx = (x.data[i] - mu) * is;
                            if keep_cache {
                                xhat[i] = nx;
                            }
                            x.data[i] = g * nx + b;
                        }
                    }
                }
                (
                    x,
                    keep_cache.then_some(Cache::BatchNorm {
                        xhat,
                        inv_std,
                        batch_stats,
                    }),
                )
            }
            Layer::MaxPool { ph, pw } => {
                let (oh, ow) = (x.h.div_ceil(*ph), x.w.div_ceil(*pw));
                let mut out = Tensor::zeros(x.n, x.c, oh, ow);
                let mut argmax = if keep_cache {
                    vec![0u32; out.data.len()]
                } else {
                    Vec::new()
                };
                let (h, w) = (x.h, x.w);
                for plane in 0..x.n * x.c {
                    let src = &x.data[plane * h * w..(plane + 1) * h * w];
                    for oy in 0..oh {
                        for ox in 0..ow {
                            let mut best = F::neg_infinity();
                            let mut at = 0;
                            for y in oy * ph..((oy + 1) * ph).min(h) {
                                for xx in ox * pw..((ox + 1) * pw).min(w) {
                                    let v = src[y * w + xx];
                                    if v > best {
                                        best = v;
                                        at = y * w + xx;
                                    }
                                }
                            }
                            let o = plane * oh * ow + oy * ow + ox;
                            out.data[o] = best;
                            if keep_cache {
                                argmax[o] = at as u32;
                            }
                        }
                    }
                }
                (
                    out,
                    keep_cache.then_some(Cache::MaxPool {
                        argmax,
                        in_h: h,
                        in_w: w,
                    }),
                )
            }
            Layer::Dropout { rate } => {
                if mode != Mode::Train || *rate <= 0.0 {
                    return (x, keep_cache.then_some(Cache::Dropout { mask: None }));
                }
                let keep = F::lit(1.0 / (1.0 - rate));
                let mask: Vec<F> = (0..x.data.len())
                    .map(|_| if rng.random::<f64>() < *rate { F::zero() } else { keep })
                    .collect();
                for (v, m) in x.data.iter_mut().zip(&mask) {
                    *v *= *m;
                }
                (x, keep_cache.then_some(Cache::Dropout { mask: Some(mask) }))
            }
            Layer::GlobalAvgPool => {
                let p = x.h * x.w;
                let scale = F::lit(1.0 / p as f64);
                let mut out = Tensor::zeros(x.n, x.c, 1, 1);
                for (o, plane) in out.data.iter_mut().zip(x.data.chunks_exact(p)) {
                    *o = plane.iter().copied().sum::<F>() * scale;
                }
                (out, keep_cache.then_some(Cache::Gap { h: x.h, w: x.w }))
            }
        }
    }

    /// Returns the input gradient (unless `need_dx` is false) and parameter gradients.
    pub fn backward(&self, cache: Cache<F>, mut dout: Tensor<F>, need_dx: bool) -> (Option<Tensor<F>>, Grad<F>) {
        match (self, cache) {
            (Layer::Conv(conv), Cache::Conv { input }) => conv.backward(&input, &dout, need_dx),
            (Layer::Relu, Cache::Relu { mask }) => {
                for (d, on) in dout.data.iter_mut().zip(mask) {
                    if !on {
                        *d = F::zero();
                    }
                }
                (Some(dout), Grad::None)
            }
            (
                Layer::BatchNorm(bn),
                Cache::BatchNorm {
                    xhat,
                    inv_std,
                    batch_stats,
                },
            ) => {
                let (c, p) = (dout.c, dout.h * dout.w);
                let count = F::lit((dout.n * p) as f64);
                let mut dgamma = vec![F::zero(); c];
                let mut dbeta = vec![F::zero(); c];
                for s in 0..dout.n {
                    for ch in 0..c {
                        let off = (s * c + ch) * p;
                        for i in off..off + p {
                            dgamma[ch] += dout.data[i] * xhat[i];
                            dbeta[ch] += dout.data[i];
                        }
                    }
                }
                for s in 0..dout.n {
                    for ch in 0..c {
                        let off = (s * c + ch) * p;
                        let scale = bn.gamma[ch] * inv_std[ch];
                        for i in off..off + p {
                            dout.data[i] = if batch_stats {
                                scale / count * (count * dout.data[i] - dbeta[ch] - xhat[i] * dgamma[ch])
                            } else {
                                scale * dout.data[i]
                            };
                        }
                    }
                }
                (Some(dout), Grad::BatchNorm { dgamma, dbeta })
            }
            (Layer::MaxPool { .. }, Cache::MaxPool { argmax, in_h, in_w }) => {
                let mut dx = Tensor::zeros(dout.n, dout.c, in_h, in_w);
                let op = dout.h * dout.w;
                let ip = in_h * in_w;
                for (o, (g, at)) in dout.data.iter().zip(&argmax).enumerate() {
                    let plane = o / op;
                    dx.data[plane * ip + *at as usize] += *g;
                }
                (Some(dx), Grad::None)
            }
            (Layer::Dropout { .. }, Cache::Dropout { mask }) => {
                if let Some(mask) = mask {
                    for (d, m) in dout.data.iter_mut().zip(mask) {
                        *d *= m;
                    }
                }
                (Some(dout), Grad::None)
            }
            (Layer::GlobalAvgPool, Cache::Gap { h, w }) => {
                let p = h * w;
                let scale = F::lit(1.0 / p as f64);
                let mut dx = Tensor::zeros(dout.n, dout.c, h, w);
                for (plane, g) in dx.data.chunks_exact_mut(p).zip(&dout.data) {
                    plane.fill(*g * scale);
                }
                (Some(dx), Grad::None)
            }
            _ => unreachable!("cache does not belong to this layer"),
        }
    }
}
