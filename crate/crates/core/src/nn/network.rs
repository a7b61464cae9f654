use std::collections::hash_map::DefaultHasher;
use std::hash::{Hash, Hasher};

use super::params::{bias_name, weight_name, Gradients, Params};
use super::spec::{Activation, LayerSpec, NetSpec};
use super::{NnError, Tensor};

const PAD: u32 = u32::MAX;

#[derive(Clone, Debug)]
enum Plan {
    Conv {
        cin: usize,
        cout: usize,
        kvol: usize,
        in_pos: usize,
        out_pos: usize,
        /// `out_pos * kvol` input offsets, `PAD` where the tap falls in the padding.
        gather: Vec<u32>,
    },
    Pool {
        channels: usize,
        in_pos: usize,
        out_pos: usize,
        wvol: usize,
        gather: Vec<u32>,
    },
    Dense {
        fan_in: usize,
        fan_out: usize,
    },
    Relu,
    Identity,
    Flatten,
}

/// A validated [`NetSpec`] with precomputed index plans.
#[derive(Clone, Debug)]
pub struct Network {
    spec: NetSpec,
    shapes: Vec<Vec<usize>>,
    plans: Vec<Plan>,
    fingerprint: u64,
}

/// Activations recorded by [`Network::forward_trace`] for a later backward pass.
#[derive(Clone, Debug)]
pub struct ForwardTrace {
    fingerprint: u64,
    batch: usize,
    inputs: Vec<Vec<f32>>,
    aux: Vec<Vec<f32>>,
    argmax: Vec<Vec<u32>>,
    output: Tensor,
}

impl ForwardTrace {
    pub fn output(&self) -> &Tensor {
        &self.output
    }
}

/// Row-major `c = a * b + beta * c` where `a` is `m x k` and `b` is `k x n` with arbitrary strides.
#[allow(clippy::too_many_arguments)]
fn gemm(
    m: usize,
    k: usize,
    n: usize,
    a: &[f32],
    (rsa, csa): (usize, usize),
    b: &[f32],
    (rsb, csb): (usize, usize),
    c: &mut [f32],
    beta: f32,
) {
    if m == 0 || n == 0 {
        return;
    }
    assert!(c.len() >= m * n);
    if k > 0 {
        assert!(a.len() > (m - 1) * rsa + (k - 1) * csa);
        assert!(b.len() > (k - 1) * rsb + (n - 1) * csb);
    }
    // SAFETY: the asserts above keep every strided access inside the slices.
    unsafe {
        matrixmultiply::sgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            rsa as isize,
            csa as isize,
            b.as_ptr(),
            rsb as isize,
            csb as isize,
            beta,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

fn strides(ext: &[usize]) -> Vec<usize> {
    let mut s = vec![1; ext.len()];
    for i in (0..ext.len().saturating_sub(1)).rev() {
        s[i] = s[i + 1] * ext[i + 1];
    }
    s
}

fn unravel(mut idx: usize, ext: &[usize], out: &mut [usize]) {
    for i in (0..ext.len()).rev() {
        out[i] = idx % ext[i];
        idx /= ext[i];
    }
}

fn conv_gather(in_ext: &[usize], out_ext: &[usize], kernel: usize, stride: usize, padding: usize) -> Vec<u32> {
    let nd = in_ext.len();
    let kext = vec![kernel; nd];
    let kvol: usize = kext.iter().product();
    let out_pos: usize = out_ext.iter().product();
    let in_str = strides(in_ext);
    let mut gather = Vec::with_capacity(out_pos * kvol);
    let mut o = vec![0; nd];
    let mut kk = vec![0; nd];
    for p in 0..out_pos {
        unravel(p, out_ext, &mut o);
        for t in 0..kvol {
            unravel(t, &kext, &mut kk);
            let mut off = 0usize;
            let mut inside = true;
            for d in 0..nd {
                let x = (o[d] * stride + kk[d]) as isize - padding as isize;
                if x < 0 || x >= in_ext[d] as isize {
                    inside = false;
                    break;
                }
                off += x as usize * in_str[d];
            }
            gather.push(if inside { off as u32 } else { PAD });
        }
    }
    gather
}

fn pool_gather(in_ext: &[usize], out_ext: &[usize], window: usize) -> Vec<u32> {
    let nd = in_ext.len();
    let wext = vec![window; nd];
    let wvol: usize = wext.iter().product();
    let out_pos: usize = out_ext.iter().product();
    let in_str = strides(in_ext);
    let mut gather = Vec::with_capacity(out_pos * wvol);
    let mut o = vec![0; nd];
    let mut w = vec![0; nd];
    for p in 0..out_pos {
        unravel(p, out_ext, &mut o);
        for t in 0..wvol {
            unravel(t, &wext, &mut w);
            let off: usize = (0..nd).map(|d| (o[d] * window + w[d]) * in_str[d]).sum();
            gather.push(off as u32);
        }
    }
    gather
}

impl Network {
    pub fn new(spec: NetSpec) -> Result<Self, NnError> {
        let shapes = spec.layer_shapes()?;
        let mut plans = Vec::with_capacity(spec.layers.len());
        let mut prev = spec.input.clone();
        for (layer, shape) in spec.layers.iter().zip(&shapes) {
            let plan = match *layer {
                LayerSpec::Conv { out_channels, kernel, stride, padding } => {
                    let gather = conv_gather(&prev[1..], &shape[1..], kernel, stride, padding);
                    Plan::Conv {
                        cin: prev[0],
                        cout: out_channels,
                        kvol: kernel.pow((prev.len() - 1) as u32),
                        in_pos: prev[1..].iter().product(),
                        out_pos: shape[1..].iter().product(),
                        gather,
                    }
                }
                LayerSpec::MaxPool { window } => Plan::Pool {
                    channels: prev[0],
                    in_pos: prev[1..].iter().product(),
                    out_pos: shape[1..].iter().product(),
                    wvol: window.pow((prev.len() - 1) as u32),
                    gather: pool_gather(&prev[1..], &shape[1..], window),
                },
                LayerSpec::Dense { out } => Plan::Dense { fan_in: prev[0], fan_out: out },
                LayerSpec::Act(Activation::Relu) => Plan::Relu,
                LayerSpec::Act(Activation::Identity) => Plan::Identity,
                LayerSpec::Flatten => Plan::Flatten,
            };
            plans.push(plan);
            prev = shape.clone();
        }
        let mut h = DefaultHasher::new();
        format!("{spec:?}").hash(&mut h);
        Ok(Self { spec, shapes, plans, fingerprint: h.finish() })
    }

    pub fn spec(&self) -> &NetSpec {
        &self.spec
    }

    pub fn input_shape(&self) -> &[usize] {
        &self.spec.input
    }

    pub fn output_shape(&self) -> &[usize] {
        &self.spec.output
    }

    pub fn input_len(&self) -> usize {
        self.spec.input.iter().product()
    }

    pub fn output_len(&self) -> usize {
        self.spec.output.iter().product()
    }

    fn check_params(&self, params: &Params) -> Result<(), NnError> {
        let mut prev = self.spec.input.clone();
        for (i, (plan, shape)) in self.plans.iter().zip(&self.shapes).enumerate() {
            let expect = match plan {
                Plan::Conv { cin, cout, kvol, .. } => Some((cout * cin * kvol, *cout)),
                Plan::Dense { fan_in, fan_out } => Some((fan_in * fan_out, *fan_out)),
                _ => None,
            };
            if let Some((wn, bn)) = expect {
                let w = params.get(&weight_name(i));
                let b = params.get(&bias_name(i));
                match (w, b) {
                    (Some(w), Some(b)) if w.len() == wn && b.len() == bn => {}
                    _ => {
                        return Err(NnError::config(
                            Some(i),
                            format!("parameters missing or mis-sized for layer input {prev:?}"),
                        ))
                    }
                }
            }
            prev = shape.clone();
        }
        Ok(())
    }

    fn batch_of(&self, input: &Tensor) -> Result<usize, NnError> {
        let s = input.shape();
        if s.len() == self.spec.input.len() + 1 && s[1..] == self.spec.input[..] {
            Ok(s[0])
        } else if s == &self.spec.input[..] {
            Ok(1)
        } else {
            Err(NnError::config(
                Some(0),
                format!("input shape {s:?} does not match declared {:?}", self.spec.input),
            ))
        }
    }

    /// Evaluates the network on a batch `[B, input...]` (or a single unbatched sample).
    pub fn forward(&self, params: &Params, input: &Tensor) -> Result<Tensor, NnError> {
        self.check_params(params)?;
        let batch = self.batch_of(input)?;
        let (out, _) = self.run(params, input.data().to_vec(), batch, false);
        self.wrap_output(out, batch)
    }

    /// Like [`forward`](Self::forward) but keeps every intermediate needed by [`backward`](Self::backward).
    pub fn forward_trace(&self, params: &Params, input: &Tensor) -> Result<ForwardTrace, NnError> {
        self.check_params(params)?;
        let batch = self.batch_of(input)?;
        let (out, rec) = self.run(params, input.data().to_vec(), batch, true);
        let rec = rec.expect("recording requested");
        Ok(ForwardTrace {
            fingerprint: self.fingerprint,
            batch,
            inputs: rec.0,
            aux: rec.1,
            argmax: rec.2,
            output: self.wrap_output(out, batch)?,
        })
    }

    fn wrap_output(&self, out: Vec<f32>, batch: usize) -> Result<Tensor, NnError> {
        let mut shape = vec![batch];
        shape.extend_from_slice(&self.spec.output);
        Tensor::new(shape, out)
    }

    #[allow(clippy::type_complexity)]
    fn run(
        &self,
        params: &Params,
        mut x: Vec<f32>,
        batch: usize,
        record: bool,
    ) -> (Vec<f32>, Option<(Vec<Vec<f32>>, Vec<Vec<f32>>, Vec<Vec<u32>>)>) {
        let n = self.plans.len();
        let mut inputs = Vec::new();
        let mut aux = Vec::new();
        let mut argmaxes = Vec::new();
        for (i, plan) in self.plans.iter().enumerate() {
            let mut col_keep = Vec::new();
            let mut arg_keep = Vec::new();
            let y = match plan {
                Plan::Conv { cin, cout, kvol, in_pos, out_pos, gather } => {
                    let (cin, cout, kvol, in_pos, out_pos) = (*cin, *cout, *kvol, *in_pos, *out_pos);
                    let bp = batch * out_pos;
                    let rows = cin * kvol;
                    let mut col = vec![0f32; rows * bp];
                    for b in 0..batch {
                        for ci in 0..cin {
                            let src = &x[(b * cin + ci) * in_pos..(b * cin + ci + 1) * in_pos];
                            for t in 0..kvol {
                                let dst = &mut col[(ci * kvol + t) * bp + b * out_pos..][..out_pos];
                                for (p, d) in dst.iter_mut().enumerate() {
                                    let g = gather[p * kvol + t];
                                    if g != PAD {
                                        *d = src[g as usize];
                                    }
                                }
                            }
                        }
                    }
                    let w = params.get(&weight_name(i)).unwrap().data();
                    let bias = params.get(&bias_name(i)).unwrap().data();
                    let mut o2 = vec![0f32; cout * bp];
                    gemm(cout, rows, bp, w, (rows, 1), &col, (bp, 1), &mut o2, 0.0);
                    let mut y = vec![0f32; batch * cout * out_pos];
                    for co in 0..cout {
                        for b in 0..batch {
                            let src = &o2[co * bp + b * out_pos..][..out_pos];
                            let dst = &mut y[(b * cout + co) * out_pos..][..out_pos];
                            for (d, s) in dst.iter_mut().zip(src) {
                                *d = s + bias[co];
                            }
                        }
                    }
                    if record {
                        col_keep = col;
                    }
                    y
                }
                Plan::Pool { channels, in_pos, out_pos, wvol, gather } => {
                    let mut y = vec![0f32; batch * channels * out_pos];
                    if record {
                        arg_keep = vec![0u32; y.len()];
                    }
                    for bc in 0..batch * channels {
                        let src = &x[bc * in_pos..(bc + 1) * in_pos];
                        for p in 0..*out_pos {
                            let taps = &gather[p * wvol..(p + 1) * wvol];
                            let mut best = taps[0];
                            for &g in &taps[1..] {
                                if src[g as usize] > src[best as usize] {
                                    best = g;
                                }
                            }
                            y[bc * out_pos + p] = src[best as usize];
                            if record {
                                arg_keep[bc * out_pos + p] = best;
                            }
                        }
                    }
                    y
                }
                Plan::Dense { fan_in, fan_out } => {
                    let (fi, fo) = (*fan_in, *fan_out);
                    let w = params.get(&weight_name(i)).unwrap().data();
                    let bias = params.get(&bias_name(i)).unwrap().data();
                    let mut y = vec![0f32; batch * fo];
                    for b in 0..batch {
                        y[b * fo..(b + 1) * fo].copy_from_slice(bias);
                    }
                    gemm(batch, fi, fo, &x, (fi, 1), w, (1, fi), &mut y, 1.0);
                    y
                }
                Plan::Relu => x.iter().map(|&v| v.max(0.0)).collect(),
                Plan::Identity | Plan::Flatten => x.clone(),
            };
            if record {
                inputs.push(std::mem::replace(&mut x, y));
                aux.push(col_keep);
                argmaxes.push(arg_keep);
            } else {
                x = y;
            }
            debug_assert!(i < n);
        }
        (x, if record { Some((inputs, aux, argmaxes)) } else { None })
    }

    /// Gradient of a scalar loss with respect to every weight, given the loss gradient
    /// with respect to the output recorded in `trace`.
    pub fn backward(
        &self,
        params: &Params,
        trace: &ForwardTrace,
        loss_grad: &Tensor,
    ) -> Result<Gradients, NnError> {
        if trace.fingerprint != self.fingerprint {
            return Err(NnError::Usage("trace was recorded by a different network".into()));
        }
        if loss_grad.shape() != trace.output.shape() {
            return Err(NnError::Usage(format!(
                "loss gradient shape {:?} does not match the traced output {:?}",
                loss_grad.shape(),
                trace.output.shape()
            )));
        }
        self.check_params(params)?;
        let batch = trace.batch;
        let mut grads = Gradients::zeros_like(params);
        let mut dy = loss_grad.data().to_vec();
        for (i, plan) in self.plans.iter().enumerate().rev() {
            let x = &trace.inputs[i];
            let need_dx = i > 0;
            let dx = match plan {
                Plan::Conv { cin, cout, kvol, in_pos, out_pos, gather } => {
                    let (cin, cout, kvol, in_pos, out_pos) = (*cin, *cout, *kvol, *in_pos, *out_pos);
                    let bp = batch * out_pos;
                    let rows = cin * kvol;
                    let col = &trace.aux[i];
                    let mut d2 = vec![0f32; cout * bp];
                    for b in 0..batch {
                        for co in 0..cout {
                            d2[co * bp + b * out_pos..][..out_pos]
                                .copy_from_slice(&dy[(b * cout + co) * out_pos..][..out_pos]);
                        }
                    }
                    {
                        let gw = grads.0.get_mut(&weight_name(i)).unwrap().data_mut();
                        gemm(cout, bp, rows, &d2, (bp, 1), col, (1, bp), gw, 0.0);
                        let gb = grads.0.get_mut(&bias_name(i)).unwrap().data_mut();
                        for co in 0..cout {
                            gb[co] = d2[co * bp..(co + 1) * bp].iter().sum();
                        }
                    }
                    if need_dx {
                        let w = params.get(&weight_name(i)).unwrap().data();
                        let mut dcol = vec![0f32; rows * bp];
                        gemm(rows, cout, bp, w, (1, rows), &d2, (bp, 1), &mut dcol, 0.0);
                        let mut dx = vec![0f32; batch * cin * in_pos];
                        for b in 0..batch {
                            for ci in 0..cin {
                                let dst = &mut dx[(b * cin + ci) * in_pos..][..in_pos];
                                for t in 0..kvol {
                                    let src = &dcol[(ci * kvol + t) * bp + b * out_pos..][..out_pos];
                                    for (p, s) in src.iter().enumerate() {
                                        let g = gather[p * kvol + t];
                                        if g != PAD {
                                            dst[g as usize] += s;
                                        }
                                    }
                                }
                            }
                        }
                        dx
                    } else {
                        Vec::new()
                    }
                }
                Plan::Pool { channels, in_pos, out_pos, .. } => {
                    let mut dx = vec![0f32; batch * channels * in_pos];
                    let arg = &trace.argmax[i];
                    for bc in 0..batch * channels {
                        for p in 0..*out_pos {
                            dx[bc * in_pos + arg[bc * out_pos + p] as usize] += dy[bc * out_pos + p];
                        }
                    }
                    dx
                }
                Plan::Dense { fan_in, fan_out } => {
                    let (fi, fo) = (*fan_in, *fan_out);
                    {
                        let gw = grads.0.get_mut(&weight_name(i)).unwrap().data_mut();
                        gemm(fo, batch, fi, &dy, (1, fo), x, (fi, 1), gw, 0.0);
                        let gb = grads.0.get_mut(&bias_name(i)).unwrap().data_mut();
                        for b in 0..batch {
                            for (g, d) in gb.iter_mut().zip(&dy[b * fo..(b + 1) * fo]) {
                                *g += d;
                            }
                        }
                    }
                    if need_dx {
                        let w = params.get(&weight_name(i)).unwrap().data();
                        let mut dx = vec![0f32; batch * fi];
                        gemm(batch, fo, fi, &dy, (fo, 1), w, (fi, 1), &mut dx, 0.0);
                        dx
                    } else {
                        Vec::new()
                    }
                }
                Plan::Relu => dy
                    .iter()
                    .zip(x)
                    .map(|(&d, &v)| if v > 0.0 { d } else { 0.0 })
                    .collect(),
                Plan::Identity | Plan::Flatten => dy,
            };
            dy = dx;
        }
        Ok(grads)
    }
}
