//! Static layer graph with forward evaluation and reverse-mode gradients.
//!
//! Activations are `[batch][channel][time]`. Slot 0 holds the input; the
//! final op writes logits shaped `[batch][classes][1]`. Per-example work in
//! convolutions runs through [`crate::par`]; every reduction across the batch
//! is a sequential fold in example order, so results do not depend on the
//! thread count.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::params::{ModelParams, ParamMap, Tensor};
use super::{Batch, Scalar, NUM_CLASSES};
use crate::error::{Error, Result};
use crate::indicators::NUM_FEATURES;
use crate::par;
use crate::tensor::WINDOW;

pub const BN_EPS: f64 = 1e-5;
/// Weight kept by running statistics on each training batch.
pub const BN_MOMENTUM: f64 = 0.9;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Padding {
    /// Output length equals input length; extra padding goes on the right.
    Same,
    /// All padding on the left: output at `t` sees inputs `<= t` only.
    Causal,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Op {
    Conv {
        x: usize,
        y: usize,
        weight: String,
        bias: String,
        dilation: usize,
        padding: Padding,
    },
    BatchNorm {
        x: usize,
        y: usize,
        name: String,
    },
    Relu {
        x: usize,
        y: usize,
    },
    Add {
        a: usize,
        b: usize,
        y: usize,
    },
    GlobalAvgPool {
        x: usize,
        y: usize,
    },
    LastStep {
        x: usize,
        y: usize,
    },
    Dense {
        x: usize,
        y: usize,
        weight: String,
        bias: String,
    },
}

impl Op {
    fn output(&self) -> usize {
        match *self {
            Op::Conv { y, .. }
            | Op::BatchNorm { y, .. }
            | Op::Relu { y, .. }
            | Op::Add { y, .. }
            | Op::GlobalAvgPool { y, .. }
            | Op::LastStep { y, .. }
            | Op::Dense { y, .. } => y,
        }
    }
}

pub fn bn_keys(name: &str) -> [String; 4] {
    [
        format!("{name}.gamma"),
        format!("{name}.beta"),
        format!("{name}.running_mean"),
        format!("{name}.running_var"),
    ]
}

#[derive(Debug, Clone, PartialEq)]
pub struct Graph {
    pub ops: Vec<Op>,
    pub num_slots: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    /// Batch statistics in normalization layers; running statistics updated.
    Train,
    /// Running statistics.
    Eval,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Act<S> {
    pub batch: usize,
    pub channels: usize,
    pub len: usize,
    pub data: Vec<S>,
}

impl<S: Scalar> Act<S> {
    fn zeros(batch: usize, channels: usize, len: usize) -> Self {
        Self {
            batch,
            channels,
            len,
            data: vec![S::zero(); batch * channels * len],
        }
    }

    fn same_shape(&self) -> Self {
        Self::zeros(self.batch, self.channels, self.len)
    }

    fn example_len(&self) -> usize {
        self.channels * self.len
    }

    /// Transposes a `[example][day][feature]` batch into channel-major layout.
    pub fn from_batch(batch: &Batch<S>) -> Self {
        let b = batch.len();
        let mut a = Self::zeros(b, NUM_FEATURES, WINDOW);
        for e in 0..b {
            for t in 0..WINDOW {
                for c in 0..NUM_FEATURES {
                    a.data[(e * NUM_FEATURES + c) * WINDOW + t] =
                        batch.inputs[(e * WINDOW + t) * NUM_FEATURES + c];
                }
            }
        }
        a
    }
}

#[derive(Debug, Clone)]
struct BnCache<S> {
    x_hat: Vec<S>,
    inv_std: Vec<f64>,
    batch_stats: bool,
}

/// Everything the backward pass needs from a forward evaluation.
#[derive(Debug, Clone)]
pub struct Trace<S> {
    pub slots: Vec<Act<S>>,
    bn: Vec<Option<BnCache<S>>>,
    /// Active-unit masks of every ReLU op (indexed by op).
    pub relu_masks: Vec<Option<Vec<bool>>>,
    pub mode: Mode,
}

impl<S: Scalar> Trace<S> {
    pub fn logits(&self) -> &Act<S> {
        self.slots.last().expect("graph has an output slot")
    }
}

fn param<'a, S>(map: &'a ParamMap<S>, key: &str) -> Result<&'a Tensor<S>> {
    map.get(key)
        .ok_or_else(|| Error::Shape(format!("missing parameter {key}")))
}

fn same_padding(span: usize) -> usize {
    span / 2
}

fn left_pad(k: usize, dilation: usize, padding: Padding) -> usize {
    let span = (k - 1) * dilation;
    match padding {
        Padding::Same => same_padding(span),
        Padding::Causal => span,
    }
}

/// Valid output range `[lo, hi)` for tap offset `shift` (input index = t + shift).
fn tap_range(shift: isize, len: usize) -> (usize, usize) {
    let lo = (-shift).max(0) as usize;
    let hi = (len as isize - shift).clamp(0, len as isize) as usize;
    (lo.min(hi), hi)
}

impl Graph {
    pub fn forward<S: Scalar>(
        &self,
        model: &ModelParams<S>,
        input: Act<S>,
        mode: Mode,
        relu_override: Option<&[Option<Vec<bool>>]>,
        running_out: Option<&mut ParamMap<S>>,
    ) -> Result<Trace<S>> {
        if input.channels != NUM_FEATURES || input.len != WINDOW {
            return Err(Error::Shape(format!(
                "input is {}x{}, expected {NUM_FEATURES}x{WINDOW}",
                input.channels, input.len
            )));
        }
        let mut slots: Vec<Option<Act<S>>> = vec![None; self.num_slots];
        slots[0] = Some(input);
        let mut bn = vec![None; self.ops.len()];
        let mut relu_masks = vec![None; self.ops.len()];
        let mut running_out = running_out;
        let get = |slots: &Vec<Option<Act<S>>>, i: usize| -> Result<Act<S>> {
            slots[i]
                .clone()
                .ok_or_else(|| Error::Shape(format!("slot {i} read before write")))
        };

        for (oi, op) in self.ops.iter().enumerate() {
            let out = match op {
                Op::Conv {
                    x,
                    weight,
                    bias,
                    dilation,
                    padding,
                    ..
                } => {
                    let x = slots[*x].as_ref().expect("slot written");
                    let w = param(&model.params, weight)?;
                    let b = param(&model.params, bias)?;
                    conv_forward(x, w, b, *dilation, *padding)?
                }
                Op::BatchNorm { x, name, .. } => {
                    let x = slots[*x].as_ref().expect("slot written");
                    let [g, be, rm, rv] = bn_keys(name);
                    let gamma = param(&model.params, &g)?;
                    let beta = param(&model.params, &be)?;
                    let rmean = param(&model.buffers, &rm)?;
                    let rvar = param(&model.buffers, &rv)?;
                    let (y, cache, stats) = bn_forward(x, gamma, beta, rmean, rvar, mode)?;
                    if let (Some(run), Some((mean, var))) = (running_out.as_deref_mut(), stats) {
                        let blend = |old: &Tensor<S>, new: &[f64]| Tensor {
                            shape: old.shape.clone(),
                            data: old
                                .data
                                .iter()
                                .zip(new)
                                .map(|(o, n)| {
                                    S::of(BN_MOMENTUM * o.f64() + (1.0 - BN_MOMENTUM) * n)
                                })
                                .collect(),
                        };
                        run.insert(rm.clone(), blend(rmean, &mean));
                        run.insert(rv.clone(), blend(rvar, &var));
                    }
                    bn[oi] = Some(cache);
                    y
                }
                Op::Relu { x, .. } => {
                    let mut y = get(&slots, *x)?;
                    let mask: Vec<bool> = match relu_override
                        .and_then(|m| m.get(oi))
                        .and_then(|m| m.as_ref())
                    {
                        Some(m) if m.len() == y.data.len() => m.clone(),
                        Some(_) => {
                            return Err(Error::Shape(format!(
                                "relu mask for op {oi} has wrong size"
                            )))
                        }
                        None => y.data.iter().map(|v| *v > S::zero()).collect(),
                    };
                    for (v, &keep) in y.data.iter_mut().zip(&mask) {
                        if !keep {
                            *v = S::zero();
                        }
                    }
                    relu_masks[oi] = Some(mask);
                    y
                }
                Op::Add { a, b, .. } => {
                    let mut y = get(&slots, *a)?;
                    let rhs = slots[*b].as_ref().expect("slot written");
                    if (y.batch, y.channels, y.len) != (rhs.batch, rhs.channels, rhs.len) {
                        return Err(Error::Shape("residual operands differ in shape".into()));
                    }
                    for (v, r) in y.data.iter_mut().zip(&rhs.data) {
                        *v = *v + *r;
                    }
                    y
                }
                Op::GlobalAvgPool { x, .. } => {
                    let x = slots[*x].as_ref().expect("slot written");
                    let mut y = Act::zeros(x.batch, x.channels, 1);
                    for (i, row) in x.data.chunks(x.len).enumerate() {
                        y.data[i] = S::of(row.iter().map(|v| v.f64()).sum::<f64>() / x.len as f64);
                    }
                    y
                }
                Op::LastStep { x, .. } => {
                    let x = slots[*x].as_ref().expect("slot written");
                    let mut y = Act::zeros(x.batch, x.channels, 1);
                    for (i, row) in x.data.chunks(x.len).enumerate() {
                        y.data[i] = row[x.len - 1];
                    }
                    y
                }
                Op::Dense {
                    x, weight, bias, ..
                } => {
                    let x = slots[*x].as_ref().expect("slot written");
                    let w = param(&model.params, weight)?;
                    let b = param(&model.params, bias)?;
                    dense_forward(x, w, b)?
                }
            };
            slots[op.output()] = Some(out);
        }
        let slots: Vec<Act<S>> = slots
            .into_iter()
            .enumerate()
            .map(|(i, s)| s.ok_or_else(|| Error::Shape(format!("slot {i} never written"))))
            .collect::<Result<_>>()?;
        Ok(Trace {
            slots,
            bn,
            relu_masks,
            mode,
        })
    }

    /// Gradients of the loss w.r.t. every trainable parameter, given the
    /// gradient w.r.t. the logits slot.
    pub fn backward<S: Scalar>(
        &self,
        model: &ModelParams<S>,
        trace: &Trace<S>,
        d_logits: Vec<S>,
    ) -> Result<ParamMap<S>> {
        let mut grads: ParamMap<S> = model
            .params
            .iter()
            .map(|(k, t)| (k.clone(), Tensor::zeros(&t.shape)))
            .collect();
        let mut dslots: Vec<Option<Vec<S>>> = vec![None; self.num_slots];
        dslots[self.num_slots - 1] = Some(d_logits);

        let accumulate =
            |dslots: &mut Vec<Option<Vec<S>>>, slot: usize, g: Vec<S>| match &mut dslots[slot] {
                Some(acc) => acc.iter_mut().zip(&g).for_each(|(a, b)| *a = *a + *b),
                none => *none = Some(g),
            };

        for (oi, op) in self.ops.iter().enumerate().rev() {
            let Some(dy) = dslots[op.output()].take() else {
                continue;
            };
            match op {
                Op::Conv {
                    x,
                    weight,
                    bias,
                    dilation,
                    padding,
                    ..
                } => {
                    let w = param(&model.params, weight)?;
                    let (dx, dw, db) = conv_backward(&trace.slots[*x], w, &dy, *dilation, *padding);
                    grads.get_mut(weight).expect("grad slot").data = dw;
                    grads.get_mut(bias).expect("grad slot").data = db;
                    if *x != 0 {
                        accumulate(&mut dslots, *x, dx);
                    }
                }
                Op::BatchNorm { x, name, .. } => {
                    let [g, be, _, _] = bn_keys(name);
                    let gamma = param(&model.params, &g)?;
                    let cache = trace.bn[oi].as_ref().expect("bn cache");
                    let (dx, dgamma, dbeta) = bn_backward(&trace.slots[*x], gamma, cache, &dy);
                    grads.get_mut(&g).expect("grad slot").data = dgamma;
                    grads.get_mut(&be).expect("grad slot").data = dbeta;
                    accumulate(&mut dslots, *x, dx);
                }
                Op::Relu { x, .. } => {
                    let mask = trace.relu_masks[oi].as_ref().expect("relu mask");
                    let dx = dy
                        .iter()
                        .zip(mask)
                        .map(|(g, &m)| if m { *g } else { S::zero() })
                        .collect();
                    accumulate(&mut dslots, *x, dx);
                }
                Op::Add { a, b, .. } => {
                    accumulate(&mut dslots, *b, dy.clone());
                    accumulate(&mut dslots, *a, dy);
                }
                Op::GlobalAvgPool { x, .. } => {
                    let xs = &trace.slots[*x];
                    let inv = S::of(1.0 / xs.len as f64);
                    let mut dx = vec![S::zero(); xs.data.len()];
                    for (row, g) in dx.chunks_mut(xs.len).zip(&dy) {
                        row.iter_mut().for_each(|v| *v = *g * inv);
                    }
                    accumulate(&mut dslots, *x, dx);
                }
                Op::LastStep { x, .. } => {
                    let xs = &trace.slots[*x];
                    let mut dx = vec![S::zero(); xs.data.len()];
                    for (row, g) in dx.chunks_mut(xs.len).zip(&dy) {
                        row[xs.len - 1] = *g;
                    }
                    accumulate(&mut dslots, *x, dx);
                }
                Op::Dense {
                    x, weight, bias, ..
                } => {
                    let w = param(&model.params, weight)?;
                    let (dx, dw, db) = dense_backward(&trace.slots[*x], w, &dy);
                    grads.get_mut(weight).expect("grad slot").data = dw;
                    grads.get_mut(bias).expect("grad slot").data = db;
                    accumulate(&mut dslots, *x, dx);
                }
            }
        }
        Ok(grads)
    }
}

fn conv_forward<S: Scalar>(
    x: &Act<S>,
    w: &Tensor<S>,
    b: &Tensor<S>,
    dilation: usize,
    padding: Padding,
) -> Result<Act<S>> {
    let [c_out, c_in, k] = w.shape[..] else {
        return Err(Error::Shape(format!("conv weight has shape {:?}", w.shape)));
    };
    if c_in != x.channels || b.len() != c_out {
        return Err(Error::Shape(format!(
            "conv expects {c_in} input channels, got {}",
            x.channels
        )));
    }
    let len = x.len;
    let pad = left_pad(k, dilation, padding) as isize;
    let mut y = Act::zeros(x.batch, c_out, len);
    let in_len = x.example_len();
    par::for_each_chunk_mut(&mut y.data, c_out * len, |e, ye| {
        let xe = &x.data[e * in_len..(e + 1) * in_len];
        for o in 0..c_out {
            let yo = &mut ye[o * len..(o + 1) * len];
            yo.iter_mut().for_each(|v| *v = b.data[o]);
            for i in 0..c_in {
                let xi = &xe[i * len..(i + 1) * len];
                for kk in 0..k {
                    let wv = w.data[(o * c_in + i) * k + kk];
                    let shift = (kk * dilation) as isize - pad;
                    let (lo, hi) = tap_range(shift, len);
                    let src = &xi[(lo as isize + shift) as usize..(hi as isize + shift) as usize];
                    for (yv, xv) in yo[lo..hi].iter_mut().zip(src) {
                        *yv = *yv + wv * *xv;
                    }
                }
            }
        }
    });
    Ok(y)
}

fn conv_backward<S: Scalar>(
    x: &Act<S>,
    w: &Tensor<S>,
    dy: &[S],
    dilation: usize,
    padding: Padding,
) -> (Vec<S>, Vec<S>, Vec<S>) {
    let (c_out, c_in, k) = (w.shape[0], w.shape[1], w.shape[2]);
    let len = x.len;
    let pad = left_pad(k, dilation, padding) as isize;
    let in_len = x.example_len();
    let out_len = c_out * len;
    let per_example = par::map_range(x.batch, |e| {
        let xe = &x.data[e * in_len..(e + 1) * in_len];
        let dye = &dy[e * out_len..(e + 1) * out_len];
        let mut dx = vec![S::zero(); in_len];
        let mut dw = vec![S::zero(); w.len()];
        let mut db = vec![S::zero(); c_out];
        for o in 0..c_out {
            let dyo = &dye[o * len..(o + 1) * len];
            db[o] = dyo.iter().fold(S::zero(), |a, v| a + *v);
            for i in 0..c_in {
                let xi = &xe[i * len..(i + 1) * len];
                let dxi = &mut dx[i * len..(i + 1) * len];
                for kk in 0..k {
                    let wi = (o * c_in + i) * k + kk;
                    let wv = w.data[wi];
                    let shift = (kk * dilation) as isize - pad;
                    let (lo, hi) = tap_range(shift, len);
                    let s0 = (lo as isize + shift) as usize;
                    let s1 = (hi as isize + shift) as usize;
                    let mut acc = S::zero();
                    for ((g, xv), dxv) in dyo[lo..hi].iter().zip(&xi[s0..s1]).zip(&mut dxi[s0..s1])
                    {
                        acc = acc + *g * *xv;
                        *dxv = *dxv + wv * *g;
                    }
                    dw[wi] = acc;
                }
            }
        }
        (dx, dw, db)
    });
    let mut dx = Vec::with_capacity(x.data.len());
    let mut dw = vec![0.0f64; w.len()];
    let mut db = vec![0.0f64; c_out];
    for (dxe, dwe, dbe) in per_example {
        dx.extend(dxe);
        dw.iter_mut().zip(&dwe).for_each(|(a, b)| *a += b.f64());
        db.iter_mut().zip(&dbe).for_each(|(a, b)| *a += b.f64());
    }
    (
        dx,
        dw.into_iter().map(S::of).collect(),
        db.into_iter().map(S::of).collect(),
    )
}

type BnStats = Option<(Vec<f64>, Vec<f64>)>;

fn bn_forward<S: Scalar>(
    x: &Act<S>,
    gamma: &Tensor<S>,
    beta: &Tensor<S>,
    rmean: &Tensor<S>,
    rvar: &Tensor<S>,
    mode: Mode,
) -> Result<(Act<S>, BnCache<S>, BnStats)> {
    let c = x.channels;
    if gamma.len() != c || beta.len() != c || rmean.len() != c || rvar.len() != c {
        return Err(Error::Shape(format!(
            "batch-norm over {c} channels has mismatched parameters"
        )));
    }
    let n = (x.batch * x.len) as f64;
    let rows = |ch: usize| (0..x.batch).map(move |b| (b * c + ch) * x.len);
    let (mean, var): (Vec<f64>, Vec<f64>) = match mode {
        Mode::Train => (0..c)
            .map(|ch| {
                let mut s = 0.0;
                for r in rows(ch) {
                    s += x.data[r..r + x.len].iter().map(|v| v.f64()).sum::<f64>();
                }
                let m = s / n;
                let mut ss = 0.0;
                for r in rows(ch) {
                    ss += x.data[r..r + x.len]
                        .iter()
                        .map(|v| (v.f64() - m).powi(2))
                        .sum::<f64>();
                }
                (m, ss / n)
            })
            .unzip(),
        Mode::Eval => (
            rmean.data.iter().map(|v| v.f64()).collect(),
            rvar.data.iter().map(|v| v.f64()).collect(),
        ),
    };
    let inv_std: Vec<f64> = var.iter().map(|v| 1.0 / (v + BN_EPS).sqrt()).collect();
    let mut y = x.same_shape();
    let mut x_hat = vec![S::zero(); x.data.len()];
    for ch in 0..c {
        let (g, bt) = (gamma.data[ch].f64(), beta.data[ch].f64());
        for r in rows(ch) {
            for t in r..r + x.len {
                let xh = (x.data[t].f64() - mean[ch]) * inv_std[ch];
                x_hat[t] = S::of(xh);
                y.data[t] = S::of(g * xh + bt);
            }
        }
    }
    let train = mode == Mode::Train;
    Ok((
        y,
        BnCache {
            x_hat,
            inv_std,
            batch_stats: train,
        },
        train.then_some((mean, var)),
    ))
}

fn bn_backward<S: Scalar>(
    x: &Act<S>,
    gamma: &Tensor<S>,
    cache: &BnCache<S>,
    dy: &[S],
) -> (Vec<S>, Vec<S>, Vec<S>) {
    let c = x.channels;
    let n = (x.batch * x.len) as f64;
    let mut dx = vec![S::zero(); dy.len()];
    let mut dgamma = Vec::with_capacity(c);
    let mut dbeta = Vec::with_capacity(c);
    for ch in 0..c {
        let idx = || {
            (0..x.batch).flat_map(move |b| ((b * c + ch) * x.len)..((b * c + ch) * x.len + x.len))
        };
        let mut sum_dy = 0.0;
        let mut sum_dy_xh = 0.0;
        for t in idx() {
            sum_dy += dy[t].f64();
            sum_dy_xh += dy[t].f64() * cache.x_hat[t].f64();
        }
        dgamma.push(S::of(sum_dy_xh));
        dbeta.push(S::of(sum_dy));
        let scale = gamma.data[ch].f64() * cache.inv_std[ch];
        for t in idx() {
            let g = if cache.batch_stats {
                scale / n * (n * dy[t].f64() - sum_dy - cache.x_hat[t].f64() * sum_dy_xh)
            } else {
                scale * dy[t].f64()
            };
            dx[t] = S::of(g);
        }
    }
    (dx, dgamma, dbeta)
}

fn dense_forward<S: Scalar>(x: &Act<S>, w: &Tensor<S>, b: &Tensor<S>) -> Result<Act<S>> {
    let [out, inp] = w.shape[..] else {
        return Err(Error::Shape(format!(
            "dense weight has shape {:?}",
            w.shape
        )));
    };
    if inp != x.example_len() || b.len() != out {
        return Err(Error::Shape(format!(
            "dense expects {inp} inputs, got {}",
            x.example_len()
        )));
    }
    let mut y = Act::zeros(x.batch, out, 1);
    for e in 0..x.batch {
        let xe = &x.data[e * inp..(e + 1) * inp];
        for o in 0..out {
            let row = &w.data[o * inp..(o + 1) * inp];
            let s: f64 = row.iter().zip(xe).map(|(a, b)| a.f64() * b.f64()).sum();
            y.data[e * out + o] = S::of(s + b.data[o].f64());
        }
    }
    Ok(y)
}

fn dense_backward<S: Scalar>(x: &Act<S>, w: &Tensor<S>, dy: &[S]) -> (Vec<S>, Vec<S>, Vec<S>) {
    let (out, inp) = (w.shape[0], w.shape[1]);
    let mut dx = vec![S::zero(); x.data.len()];
    let mut dw = vec![0.0f64; w.len()];
    let mut db = vec![0.0f64; out];
    for e in 0..x.batch {
        let xe = &x.data[e * inp..(e + 1) * inp];
        for o in 0..out {
            let g = dy[e * out + o].f64();
            db[o] += g;
            for i in 0..inp {
                dw[o * inp + i] += g * xe[i].f64();
                dx[e * inp + i] = S::of(dx[e * inp + i].f64() + g * w.data[o * inp + i].f64());
            }
        }
    }
    (
        dx,
        dw.into_iter().map(S::of).collect(),
        db.into_iter().map(S::of).collect(),
    )
}

/// Row-wise softmax of `[batch][classes]` logits, computed in f64.
pub fn softmax<S: Scalar>(logits: &[S], classes: usize) -> Vec<f64> {
    let mut out = Vec::with_capacity(logits.len());
    for row in logits.chunks(classes) {
        let m = row
            .iter()
            .map(|v| v.f64())
            .fold(f64::NEG_INFINITY, f64::max);
        let e: Vec<f64> = row.iter().map(|v| (v.f64() - m).exp()).collect();
        let z: f64 = e.iter().sum();
        out.extend(e.into_iter().map(|v| v / z));
    }
    out
}

/// Mean softmax cross-entropy and its gradient w.r.t. the logits.
pub fn cross_entropy<S: Scalar>(logits: &[S], targets: &[usize]) -> (f64, Vec<S>) {
    let probs = softmax(logits, NUM_CLASSES);
    let n = targets.len() as f64;
    let mut loss = 0.0;
    let mut grad = Vec::with_capacity(probs.len());
    for (row, &t) in probs.chunks(NUM_CLASSES).zip(targets) {
        loss -= row[t].max(f64::MIN_POSITIVE).ln();
        for (c, p) in row.iter().enumerate() {
            let onehot = if c == t { 1.0 } else { 0.0 };
            grad.push(S::of((p - onehot) / n));
        }
    }
    (loss / n, grad)
}

pub struct Forward<S> {
    /// `[batch][classes]`
    pub logits: Vec<S>,
    /// Updated running statistics (train mode only; empty in eval mode).
    pub running: ParamMap<S>,
    pub trace: Trace<S>,
}

pub fn forward<S: Scalar>(
    model: &ModelParams<S>,
    batch: &Batch<S>,
    mode: Mode,
) -> Result<Forward<S>> {
    let graph = super::graph_for(model.arch, &model.scale)?;
    let mut running = BTreeMap::new();
    let trace = graph.forward(
        model,
        Act::from_batch(batch),
        mode,
        None,
        Some(&mut running),
    )?;
    Ok(Forward {
        logits: trace.logits().data.clone(),
        running,
        trace,
    })
}

pub struct LossAndGrads<S> {
    pub loss: f64,
    pub grads: ParamMap<S>,
    pub running: ParamMap<S>,
}

/// Train-mode forward, mean cross-entropy and reverse-mode gradients.
pub fn loss_and_grads<S: Scalar>(
    model: &ModelParams<S>,
    batch: &Batch<S>,
) -> Result<LossAndGrads<S>> {
    let graph = super::graph_for(model.arch, &model.scale)?;
    let mut running = BTreeMap::new();
    let trace = graph.forward(
        model,
        Act::from_batch(batch),
        Mode::Train,
        None,
        Some(&mut running),
    )?;
    let (loss, d_logits) = cross_entropy(&trace.logits().data, &batch.targets);
    if !loss.is_finite() {
        return Err(Error::Divergence(format!("loss = {loss}")));
    }
    let grads = graph.backward(model, &trace, d_logits)?;
    Ok(LossAndGrads {
        loss,
        grads,
        running,
    })
}

impl<S: Scalar> ModelParams<S> {
    /// Installs running statistics produced by a train-mode forward.
    pub fn apply_running(&mut self, running: ParamMap<S>) {
        for (k, t) in running {
            if let Some(dst) = self.buffers.get_mut(&k) {
                *dst = t;
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn tap_ranges() {
        assert_eq!(tap_range(0, 5), (0, 5));
        assert_eq!(tap_range(-2, 5), (2, 5));
        assert_eq!(tap_range(3, 5), (0, 2));
        assert_eq!(tap_range(-7, 5), (5, 5));
        assert_eq!(tap_range(9, 5), (0, 0));
    }

    #[test]
    fn uniform_logits_give_ln4() {
        let (loss, g) = cross_entropy(&[0.0f64; 8], &[0, 3]);
        assert!((loss - 4f64.ln()).abs() < 1e-15);
        assert!((g[0] - (0.25 - 1.0) / 2.0).abs() < 1e-15);
        let p = softmax(&[1.0f64, 2.0, -3.0, 0.5], 4);
        assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-15);
    }
}
