//! Brute-force reference computations for the test suites.
//!
//! Nothing here shares code with the production paths it is used to check:
//! the network forward pass is a naive 64-bit loop nest, distances are all-pairs,
//! and shape fitting is a generic damped Gauss-Newton.

pub mod fit;
pub mod metrics;

use crate::nn::{Activation, LayerSpec, NetSpec, Params};

/// Single-sample forward pass in `f64` by direct summation.
pub fn reference_forward(spec: &NetSpec, params: &Params, input: &[f64]) -> Vec<f64> {
    let mut shape = spec.input.clone();
    let mut x = input.to_vec();
    for (i, layer) in spec.layers.iter().enumerate() {
        match *layer {
            LayerSpec::Conv { out_channels, kernel, stride, padding } => {
                let w: Vec<f64> = params.get(&format!("l{i:02}.w")).unwrap().data().iter().map(|&v| v as f64).collect();
                let b: Vec<f64> = params.get(&format!("l{i:02}.b")).unwrap().data().iter().map(|&v| v as f64).collect();
                let cin = shape[0];
                let sp = &shape[1..];
                let nd = sp.len();
                let osp: Vec<usize> = sp.iter().map(|&e| (e + 2 * padding - kernel) / stride + 1).collect();
                let opos: usize = osp.iter().product();
                let kvol = kernel.pow(nd as u32);
                let ipos: usize = sp.iter().product();
                let mut y = vec![0.0; out_channels * opos];
                for co in 0..out_channels {
                    for p in 0..opos {
                        let mut o = vec![0usize; nd];
                        let mut rem = p;
                        for d in (0..nd).rev() {
                            o[d] = rem % osp[d];
                            rem /= osp[d];
                        }
                        let mut acc = b[co];
                        for ci in 0..cin {
                            for t in 0..kvol {
                                let mut kk = vec![0usize; nd];
                                let mut rem = t;
                                for d in (0..nd).rev() {
                                    kk[d] = rem % kernel;
                                    rem /= kernel;
                                }
                                let mut flat = 0usize;
                                let mut inside = true;
                                for d in 0..nd {
                                    let c = (o[d] * stride + kk[d]) as isize - padding as isize;
                                    if c < 0 || c >= sp[d] as isize {
                                        inside = false;
                                    } else {
                                        flat = flat * sp[d] + c as usize;
                                    }
                                }
                                if inside {
                                    acc += w[(co * cin + ci) * kvol + t] * x[ci * ipos + flat];
                                }
                            }
                        }
                        y[co * opos + p] = acc;
                    }
                }
                x = y;
                shape = std::iter::once(out_channels).chain(osp).collect();
            }
            LayerSpec::MaxPool { window } => {
                let c = shape[0];
                let sp = shape[1..].to_vec();
                let nd = sp.len();
                let osp: Vec<usize> = sp.iter().map(|&e| e / window).collect();
                let opos: usize = osp.iter().product();
                let ipos: usize = sp.iter().product();
                let mut y = vec![f64::NEG_INFINITY; c * opos];
                for ch in 0..c {
                    for q in 0..ipos {
                        let mut idx = vec![0usize; nd];
                        let mut rem = q;
                        for d in (0..nd).rev() {
                            idx[d] = rem % sp[d];
                            rem /= sp[d];
                        }
                        if idx.iter().zip(&osp).any(|(&i, &o)| i / window >= o) {
                            continue;
                        }
                        let mut op = 0;
                        for d in 0..nd {
                            op = op * osp[d] + idx[d] / window;
                        }
                        let v = x[ch * ipos + q];
                        if v > y[ch * opos + op] {
                            y[ch * opos + op] = v;
                        }
                    }
                }
                x = y;
                shape = std::iter::once(c).chain(osp).collect();
            }
            LayerSpec::Dense { out } => {
                let w = params.get(&format!("l{i:02}.w")).unwrap().data();
                let b = params.get(&format!("l{i:02}.b")).unwrap().data();
                let fi = x.len();
                x = (0..out)
                    .map(|o| b[o] as f64 + (0..fi).map(|j| w[o * fi + j] as f64 * x[j]).sum::<f64>())
                    .collect();
                shape = vec![out];
            }
            LayerSpec::Act(Activation::Relu) => x.iter_mut().for_each(|v| *v = v.max(0.0)),
            LayerSpec::Act(Activation::Identity) => {}
            LayerSpec::Flatten => shape = vec![x.len()],
        }
    }
    x
}

/// Central finite-difference agreement statistics for a scalar loss over sampled weights.
///
/// `loss` is evaluated on perturbed copies of `params`; `analytic` returns the gradient entry
/// for `(name, index)`. Returns `(agreeing, sampled)` under the relative tolerance `rel`
/// with absolute floor `abs`.
pub fn finite_difference_agreement(
    params: &Params,
    picks: &[(String, usize)],
    step: f32,
    rel: f64,
    abs: f64,
    loss: impl Fn(&Params) -> f64,
    analytic: impl Fn(&str, usize) -> f64,
) -> (usize, usize) {
    let mut ok = 0;
    for (name, idx) in picks {
        let mut plus = params.clone();
        let base = plus.get(name).unwrap().data()[*idx];
        plus.get_mut(name).unwrap().data_mut()[*idx] = base + step;
        let mut minus = params.clone();
        minus.get_mut(name).unwrap().data_mut()[*idx] = base - step;
        // the perturbation actually representable in f32
        let h = (base + step) as f64 - (base - step) as f64;
        let fd = (loss(&plus) - loss(&minus)) / h;
        let an = analytic(name, *idx);
        let err = (fd - an).abs();
        if err <= abs || err <= rel * fd.abs().max(an.abs()) {
            ok += 1;
        }
    }
    (ok, picks.len())
}
