use rand::seq::SliceRandom;
use rand::Rng;

use super::library::{Provenance, ShapeLibrary};
use crate::error::{Error, Result};
use crate::grid::{distance, LandmarkSet};
use crate::nn::{opt_step, Gradients, NetSpec, Network, OptimConfig, Params, Tensor};
use crate::shape::{sample, AffineJitter, AffineTransform, ShapeModel};

/// Output of the shape regressor for one landmark set.
#[derive(Clone, Debug, PartialEq)]
pub struct Prediction {
    /// Pose in image coordinates.
    pub a: AffineTransform,
    /// Mode weights.
    pub b: Vec<f64>,
    /// `T_a(mean + P b)`.
    pub reconstruction: LandmarkSet,
}

/// Centroid and RMS radius of a shape.
#[derive(Clone, Debug, PartialEq)]
struct Frame {
    center: Vec<f64>,
    radius: f64,
}

impl Frame {
    fn of(dim: usize, coords: &[f64]) -> Self {
        let n = (coords.len() / dim).max(1);
        let mut center = vec![0.0; dim];
        for p in coords.chunks(dim) {
            for (c, v) in center.iter_mut().zip(p) {
                *c += v / n as f64;
            }
        }
        let ss: f64 = coords.chunks(dim).map(|p| p.iter().zip(&center).map(|(v, c)| (v - c).powi(2)).sum::<f64>()).sum();
        let radius = (ss / n as f64).sqrt();
        Self { center, radius: if radius > 1e-12 { radius } else { 1.0 } }
    }
}

/// Learned regressor from landmark coordinates to pose and mode weights.
///
/// Inputs are centered on their centroid and divided by their RMS radius. The network's
/// pose output lives in that normalized frame, rescaled to the radius of the mean shape,
/// and the normalizing similarity is composed back before the pose is reported. Mode
/// outputs are in units of standard deviations.
#[derive(Clone, Debug)]
pub struct DeepSsmNet {
    net: Network,
    params: Params,
    model: ShapeModel,
    mean_radius: f64,
    sigma: Vec<f64>,
}

impl DeepSsmNet {
    pub fn output_len(model: &ShapeModel) -> usize {
        AffineTransform::param_count(model.dim()) + model.mode_count()
    }

    pub fn spec_for(model: &ShapeModel, hidden: &[usize]) -> NetSpec {
        NetSpec::mlp(model.dim() * model.landmark_count(), hidden, Self::output_len(model))
    }

    pub fn new<R: Rng + ?Sized>(model: ShapeModel, hidden: &[usize], rng: &mut R) -> Result<Self> {
        let spec = Self::spec_for(&model, hidden);
        let params = Params::init(&spec, rng)?;
        Self::from_params(model, spec, params)
    }

    pub fn from_params(model: ShapeModel, spec: NetSpec, params: Params) -> Result<Self> {
        let d = model.dim();
        if spec.input != [d * model.landmark_count()] || spec.output != [Self::output_len(&model)] {
            return Err(Error::Config(format!(
                "shape regressor needs input [{}] and output [{}], got {:?} and {:?}",
                d * model.landmark_count(),
                Self::output_len(&model),
                spec.input,
                spec.output
            )));
        }
        let net = Network::new(spec)?;
        let mean_radius = Frame::of(d, model.mean()).radius;
        let sigma = model.variances().iter().map(|v| v.sqrt()).collect();
        let out = Self { net, params, model, mean_radius, sigma };
        out.net.forward(&out.params, &Tensor::zeros(vec![1, out.net.input_len()]))?;
        Ok(out)
    }

    pub fn model(&self) -> &ShapeModel {
        &self.model
    }

    pub fn network(&self) -> &Network {
        &self.net
    }

    pub fn spec(&self) -> &NetSpec {
        self.net.spec()
    }

    pub fn params(&self) -> &Params {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut Params {
        &mut self.params
    }

    fn check_input(&self, x: &LandmarkSet) -> Result<()> {
        if x.dim() != self.model.dim() || x.len() != self.model.landmark_count() {
            return Err(Error::Argument(format!(
                "shape regressor expects {} landmarks in {}D, got {} in {}D",
                self.model.landmark_count(),
                self.model.dim(),
                x.len(),
                x.dim()
            )));
        }
        if !x.all_available() {
            return Err(Error::Argument("shape regressor needs every landmark available".into()));
        }
        Ok(())
    }

    fn encode(&self, batch: &[&LandmarkSet]) -> Result<(Tensor, Vec<Frame>)> {
        let d = self.model.dim();
        let mut data = Vec::with_capacity(batch.len() * self.net.input_len());
        let mut frames = Vec::with_capacity(batch.len());
        for x in batch {
            self.check_input(x)?;
            let f = Frame::of(d, x.coords());
            for p in x.coords().chunks(d) {
                data.extend(p.iter().zip(&f.center).map(|(v, c)| ((v - c) / f.radius) as f32));
            }
            frames.push(f);
        }
        Ok((Tensor::new(vec![batch.len(), self.net.input_len()], data)?, frames))
    }

    /// Image-frame pose and mode weights from one raw output row.
    fn decode(&self, frame: &Frame, out: &[f32]) -> Result<(AffineTransform, Vec<f64>)> {
        let d = self.model.dim();
        let scale = frame.radius / self.mean_radius;
        let mut params = Vec::with_capacity(d * (d + 1));
        params.extend(out[..d * d].iter().map(|&v| scale * v as f64));
        params.extend(out[d * d..d * (d + 1)].iter().zip(&frame.center).map(|(&v, c)| scale * v as f64 + c));
        let b = out[d * (d + 1)..].iter().zip(&self.sigma).map(|(&z, s)| s * z as f64).collect();
        Ok((AffineTransform::from_params(d, params)?, b))
    }

    fn reconstruct(&self, a: &AffineTransform, b: &[f64]) -> Result<LandmarkSet> {
        LandmarkSet::complete(self.model.dim(), a.apply(&self.model.expand(b)))
    }

    /// Reconstruction with every mode weight limited to three standard deviations, as used
    /// for landmark correction.
    pub fn plausible_reconstruction(&self, x: &LandmarkSet) -> Result<LandmarkSet> {
        let p = self.predict(x)?;
        let b: Vec<f64> = p.b.iter().zip(&self.sigma).map(|(v, s)| v.clamp(-3.0 * s, 3.0 * s)).collect();
        self.reconstruct(&p.a, &b)
    }

    pub fn predict(&self, x: &LandmarkSet) -> Result<Prediction> {
        Ok(self.predict_batch(&[x])?.pop().expect("one prediction per input"))
    }

    pub fn predict_batch(&self, batch: &[&LandmarkSet]) -> Result<Vec<Prediction>> {
        if batch.is_empty() {
            return Ok(Vec::new());
        }
        let (input, frames) = self.encode(batch)?;
        let out = self.net.forward(&self.params, &input)?;
        let w = self.net.output_len();
        frames
            .iter()
            .zip(out.data().chunks(w))
            .map(|(f, row)| {
                let (a, b) = self.decode(f, row)?;
                let reconstruction = self.reconstruct(&a, &b)?;
                Ok(Prediction { a, b, reconstruction })
            })
            .collect()
    }

    /// Raw network targets for a shape generated by `(a, b)`: the pose re-expressed in the
    /// normalized frame of the shape and the weights in standard deviations.
    pub fn targets(&self, shape: &LandmarkSet, a: &AffineTransform, b: &[f64]) -> Vec<f32> {
        let d = self.model.dim();
        let f = Frame::of(d, shape.coords());
        let scale = f.radius / self.mean_radius;
        let mut out = Vec::with_capacity(self.net.output_len());
        out.extend(a.params()[..d * d].iter().map(|v| (v / scale) as f32));
        out.extend(a.translation().iter().zip(&f.center).map(|(t, c)| ((t - c) / scale) as f32));
        out.extend(b.iter().zip(&self.sigma).map(|(v, s)| if *s > 0.0 { (v / s) as f32 } else { 0.0 }));
        out
    }

    /// Summed squared reconstruction error over the batch and its gradient with respect to
    /// the weights. The mean shape and modes are constants.
    pub fn joint_update(&self, batch: &[&LandmarkSet]) -> Result<(f64, Gradients)> {
        if batch.is_empty() {
            return Err(Error::Usage("shape regressor update needs a non-empty batch".into()));
        }
        let d = self.model.dim();
        let k = self.model.mode_count();
        let (input, frames) = self.encode(batch)?;
        let trace = self.net.forward_trace(&self.params, &input)?;
        let w = self.net.output_len();
        let modes = self.model.modes();
        let mut grad = vec![0f32; trace.output().len()];
        let mut loss = 0.0;
        for (i, (x, f)) in batch.iter().zip(&frames).enumerate() {
            let row = &trace.output().data()[i * w..(i + 1) * w];
            let (a, b) = self.decode(f, row)?;
            let y = self.model.expand(&b);
            let rec = a.apply(&y);
            let scale = f.radius / self.mean_radius;
            let g = &mut grad[i * w..(i + 1) * w];
            // dL/dy in the model frame, needed for the mode gradient.
            let mut dy = vec![0.0; y.len()];
            for (j, (rp, xp)) in rec.chunks(d).zip(x.coords().chunks(d)).enumerate() {
                let yp = &y[j * d..(j + 1) * d];
                for r in 0..d {
                    let res = rp[r] - xp[r];
                    loss += res * res;
                    let s = 2.0 * res * scale;
                    for e in 0..d {
                        g[r * d + e] += (s * yp[e]) as f32;
                        dy[j * d + e] += s * row[r * d + e] as f64;
                    }
                    g[d * d + r] += s as f32;
                }
            }
            for m in 0..k {
                let dz: f64 = (0..dy.len()).map(|q| dy[q] * modes[(q, m)]).sum::<f64>() * self.sigma[m];
                g[d * (d + 1) + m] = dz as f32;
            }
        }
        let loss_grad = Tensor::new(trace.output().shape().to_vec(), grad)?;
        let grads = self.net.backward(&self.params, &trace, &loss_grad)?;
        Ok((loss, grads))
    }

    /// Mean squared error between raw outputs and targets, with its gradient.
    pub fn regression_loss(&self, inputs: &[&LandmarkSet], targets: &[Vec<f32>]) -> Result<(f64, Gradients)> {
        if inputs.is_empty() || inputs.len() != targets.len() {
            return Err(Error::Usage("regression needs matching non-empty inputs and targets".into()));
        }
        let (input, _) = self.encode(inputs)?;
        let trace = self.net.forward_trace(&self.params, &input)?;
        let w = self.net.output_len();
        let total = (inputs.len() * w) as f64;
        let mut grad = vec![0f32; trace.output().len()];
        let mut loss = 0.0;
        for (i, t) in targets.iter().enumerate() {
            if t.len() != w {
                return Err(Error::Usage(format!("target has {} values, network outputs {w}", t.len())));
            }
            for (q, &tv) in t.iter().enumerate() {
                let diff = (trace.output().data()[i * w + q] - tv) as f64;
                loss += diff * diff / total;
                grad[i * w + q] = (2.0 * diff / total) as f32;
            }
        }
        let loss_grad = Tensor::new(trace.output().shape().to_vec(), grad)?;
        Ok((loss, self.net.backward(&self.params, &trace, &loss_grad)?))
    }

    pub fn apply(&mut self, grads: &Gradients, optim: &OptimConfig) -> Result<()> {
        opt_step(&mut self.params, grads, optim)?;
        Ok(())
    }

    /// Supervised pretraining on `n_samples` shapes drawn from the model. The samples are
    /// appended to `library`. Returns the mean loss of every epoch.
    pub fn pretrain<R: Rng + ?Sized>(
        &mut self,
        library: &mut ShapeLibrary,
        n_samples: usize,
        schedule: &PretrainSchedule,
        rng: &mut R,
    ) -> Result<Vec<f64>> {
        schedule.validate()?;
        if n_samples == 0 {
            return Ok(Vec::new());
        }
        let mut shapes = Vec::with_capacity(n_samples);
        let mut targets = Vec::with_capacity(n_samples);
        for _ in 0..n_samples {
            let s = sample(&self.model, rng, &schedule.jitter)?;
            targets.push(self.targets(&s.shape, &s.a, &s.b));
            shapes.push(s.shape);
        }
        for s in &shapes {
            library.push(s.clone(), Provenance::Sampled)?;
        }
        let mut order: Vec<usize> = (0..n_samples).collect();
        let mut history = Vec::with_capacity(schedule.epochs);
        for _ in 0..schedule.epochs {
            order.shuffle(rng);
            let mut sum = 0.0;
            let mut batches = 0;
            for chunk in order.chunks(schedule.batch_size) {
                let xs: Vec<&LandmarkSet> = chunk.iter().map(|&i| &shapes[i]).collect();
                let ts: Vec<Vec<f32>> = chunk.iter().map(|&i| targets[i].clone()).collect();
                let (loss, grads) = self.regression_loss(&xs, &ts)?;
                self.apply(&grads, &schedule.optim)?;
                sum += loss;
                batches += 1;
            }
            history.push(sum / batches as f64);
        }
        Ok(history)
    }

    /// Twice the median per-landmark residual over `shapes`.
    pub fn calibrate_threshold(&self, shapes: &[LandmarkSet]) -> Result<f64> {
        let refs: Vec<&LandmarkSet> = shapes.iter().collect();
        let mut residuals = Vec::new();
        for chunk in refs.chunks(256) {
            for (x, p) in chunk.iter().zip(self.predict_batch(chunk)?) {
                residuals.extend((0..x.len()).map(|j| distance(x.point(j), p.reconstruction.point(j))));
            }
        }
        if residuals.is_empty() {
            return Err(Error::Argument("threshold calibration needs at least one shape".into()));
        }
        residuals.sort_by(f64::total_cmp);
        let n = residuals.len();
        let median = if n % 2 == 1 { residuals[n / 2] } else { 0.5 * (residuals[n / 2 - 1] + residuals[n / 2]) };
        Ok(2.0 * median)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct PretrainSchedule {
    pub epochs: usize,
    pub batch_size: usize,
    pub optim: OptimConfig,
    /// Pose perturbation of the sampled shapes.
    pub jitter: AffineJitter,
}

impl Default for PretrainSchedule {
    fn default() -> Self {
        Self {
            epochs: 30,
            batch_size: 64,
            optim: OptimConfig::adam(1e-3),
            jitter: AffineJitter { matrix: 0.15, translation: 0.5 },
        }
    }
}

impl PretrainSchedule {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(Error::Config("pretraining batch size must be positive".into()));
        }
        self.jitter.validate()
    }
}
