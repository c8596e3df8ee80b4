//! Pixel-to-pixel transform: a small MLP fit per sample at inference time.
//!
//! The network maps per-pixel features (standardized guide bands followed by
//! the normalized pixel-centre coordinates) to one HR value. It is trained on
//! the sample itself against
//!
//! ```text
//! L(θ) = Σ_{p ∈ LR} | S_p − pool_α(f_θ(G, X))_p | + λ ‖θ‖²
//! ```
//!
//! where `pool_α` is [`downsample_avg`](crate::raster::downsample_avg). The
//! last iterate's HR map is the prediction. Gradients are computed by hand
//! (reverse mode) over the full batch of pixels.

use rand::{Rng, SeedableRng};
use rand_xoshiro::Xoshiro256StarStar;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::jbu::{standardize_guide, GuideStats};
use crate::raster::{coord_grid, PatchRecord, Raster};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Relu,
    Identity,
}

impl Activation {
    #[inline]
    fn apply(self, z: f64) -> f64 {
        match self {
            Activation::Relu => z.max(0.0),
            Activation::Identity => z,
        }
    }

    #[inline]
    fn derivative(self, z: f64) -> f64 {
        match self {
            Activation::Relu => {
                if z > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Identity => 1.0,
        }
    }
}

/// Fully connected network with flat parameter storage.
///
/// Layer `l` maps `dims[l]` inputs to `dims[l+1]` outputs. Its weights are
/// stored input-major (`w[i * out + j]` connects input `i` to output `j`),
/// followed by its biases. Hidden layers apply their activation; the output
/// layer is affine.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct P2pNet {
    dims: Vec<usize>,
    activations: Vec<Activation>,
    params: Vec<f64>,
}

impl P2pNet {
    pub fn layer_dims(&self) -> &[usize] {
        &self.dims
    }

    pub fn activations(&self) -> &[Activation] {
        &self.activations
    }

    pub fn num_layers(&self) -> usize {
        self.dims.len() - 1
    }

    pub fn param_count(&self) -> usize {
        self.params.len()
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    /// Offset of layer `l`'s weights in the flat parameter vector.
    fn offset(&self, l: usize) -> usize {
        (0..l)
            .map(|k| self.dims[k] * self.dims[k + 1] + self.dims[k + 1])
            .sum()
    }

    pub fn weights(&self, l: usize) -> &[f64] {
        let o = self.offset(l);
        &self.params[o..o + self.dims[l] * self.dims[l + 1]]
    }

    pub fn biases(&self, l: usize) -> &[f64] {
        let o = self.offset(l) + self.dims[l] * self.dims[l + 1];
        &self.params[o..o + self.dims[l + 1]]
    }

    pub fn l2_sq(&self) -> f64 {
        self.params.iter().map(|p| p * p).sum()
    }

    /// Sets every parameter to zero.
    pub fn zeroed(mut self) -> Self {
        self.params.iter_mut().for_each(|p| *p = 0.0);
        self
    }
}

fn parameter_count(dims: &[usize]) -> usize {
    dims.windows(2).map(|w| w[0] * w[1] + w[1]).sum()
}

/// Glorot-uniform weights, zero biases, ReLU hidden activations.
pub fn net_init(layer_dims: &[usize], seed: u64) -> Result<P2pNet> {
    if layer_dims.len() < 2 {
        return Err(Error::Argument(format!(
            "network needs at least input and output dims, got {layer_dims:?}"
        )));
    }
    if layer_dims.contains(&0) {
        return Err(Error::Argument(format!(
            "layer dims must be positive, got {layer_dims:?}"
        )));
    }
    let mut rng = Xoshiro256StarStar::seed_from_u64(seed);
    let mut params = Vec::with_capacity(parameter_count(layer_dims));
    for w in layer_dims.windows(2) {
        let (fan_in, fan_out) = (w[0], w[1]);
        let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
        params.extend((0..fan_in * fan_out).map(|_| rng.random_range(-limit..=limit)));
        params.extend(std::iter::repeat_n(0.0, fan_out));
    }
    Ok(P2pNet {
        dims: layer_dims.to_vec(),
        activations: vec![Activation::Relu; layer_dims.len() - 2],
        params,
    })
}

/// Row-major `n × dim` feature matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct Features {
    pub dim: usize,
    pub data: Vec<f64>,
}

impl Features {
    pub fn new(dim: usize, data: Vec<f64>) -> Result<Self> {
        if dim == 0 || !data.len().is_multiple_of(dim) {
            return Err(Error::Validation(format!(
                "feature buffer of length {} is not a multiple of dim {dim}",
                data.len()
            )));
        }
        if let Some(i) = data.iter().position(|v| !v.is_finite()) {
            return Err(Error::Validation(format!(
                "non-finite feature at pixel {}, component {}",
                i / dim,
                i % dim
            )));
        }
        Ok(Self { dim, data })
    }

    pub fn len(&self) -> usize {
        self.data.len() / self.dim
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }
}

/// Per-pixel features: guide bands standardized with the guide's own
/// per-channel statistics, then the (row, col) pixel-centre coordinates.
/// Pixels are in row-major order.
pub fn guide_features(guide: &Raster) -> Result<Features> {
    let stats = GuideStats::from_guide(guide);
    let z = standardize_guide(guide, &stats.mean, &stats.std)?;
    let grid = coord_grid(guide.height(), guide.width())?;
    let (c, h, w) = z.dims();
    let dim = c + 2;
    let mut data = Vec::with_capacity(h * w * dim);
    for r in 0..h {
        for col in 0..w {
            for k in 0..c {
                data.push(z.get(k, r, col) as f64);
            }
            data.push(grid.row_coord(r, col) as f64);
            data.push(grid.col_coord(r, col) as f64);
        }
    }
    Features::new(dim, data)
}

/// Pre-activation and post-activation values of every layer for one batch.
struct Trace {
    /// `pre[l]` is `n × dims[l+1]`.
    pre: Vec<Vec<f64>>,
    /// `post[l]` is `n × dims[l+1]`; the last entry equals the last `pre`.
    post: Vec<Vec<f64>>,
}

fn forward_trace(net: &P2pNet, x: &Features) -> Trace {
    let n = x.len();
    let mut pre = Vec::with_capacity(net.num_layers());
    let mut post: Vec<Vec<f64>> = Vec::with_capacity(net.num_layers());
    for l in 0..net.num_layers() {
        let (din, dout) = (net.dims[l], net.dims[l + 1]);
        let w = net.weights(l);
        let b = net.biases(l);
        let input: &[f64] = if l == 0 { &x.data } else { &post[l - 1] };
        let mut z = vec![0.0f64; n * dout];
        for p in 0..n {
            let zp = &mut z[p * dout..(p + 1) * dout];
            zp.copy_from_slice(b);
            let xp = &input[p * din..(p + 1) * din];
            for (i, &xi) in xp.iter().enumerate() {
                if xi == 0.0 {
                    continue;
                }
                let wi = &w[i * dout..(i + 1) * dout];
                for (zj, wij) in zp.iter_mut().zip(wi) {
                    *zj += xi * wij;
                }
            }
        }
        let a = if l + 1 < net.num_layers() {
            let act = net.activations[l];
            z.iter().map(|&v| act.apply(v)).collect()
        } else {
            z.clone()
        };
        pre.push(z);
        post.push(a);
    }
    Trace { pre, post }
}

/// Per-pixel scalar predictions, in input order.
pub fn net_forward(net: &P2pNet, features: &Features) -> Result<Vec<f64>> {
    if features.dim != net.dims[0] {
        return Err(Error::Validation(format!(
            "features have dim {} but the network expects {}",
            features.dim, net.dims[0]
        )));
    }
    if *net.dims.last().unwrap() != 1 {
        return Err(Error::Validation("network output must be scalar".into()));
    }
    if let Some(i) = features.data.iter().position(|v| !v.is_finite()) {
        return Err(Error::Validation(format!(
            "non-finite feature at flat index {i}"
        )));
    }
    Ok(forward_trace(net, features).post.pop().unwrap_or_default())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct P2pConfig {
    pub lambda: f64,
    pub step_size: f64,
    pub max_iters: usize,
    pub plateau_window: usize,
    pub plateau_tol: f64,
    pub seed: u64,
    /// Hidden layer widths; input and output dims follow from the record.
    pub hidden: Vec<usize>,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    /// Fit against the z-scored source and map the output back with the
    /// source mean and std.
    pub normalize_source: bool,
}

impl Default for P2pConfig {
    fn default() -> Self {
        Self {
            lambda: 1e-4,
            step_size: 1e-3,
            max_iters: 2000,
            plateau_window: 100,
            plateau_tol: 1e-5,
            seed: 0,
            hidden: vec![32, 32],
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            normalize_source: true,
        }
    }
}

impl P2pConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lambda >= 0.0 && self.lambda.is_finite()) {
            return Err(Error::Argument(format!(
                "lambda must be >= 0, got {}",
                self.lambda
            )));
        }
        if !(self.step_size > 0.0 && self.step_size.is_finite()) {
            return Err(Error::Argument(format!(
                "step_size must be > 0, got {}",
                self.step_size
            )));
        }
        if self.max_iters == 0 {
            return Err(Error::Argument("max_iters must be at least 1".into()));
        }
        if !(self.plateau_tol >= 0.0) {
            return Err(Error::Argument(format!(
                "plateau_tol must be >= 0, got {}",
                self.plateau_tol
            )));
        }
        if !(0.0..1.0).contains(&self.beta1)
            || !(0.0..1.0).contains(&self.beta2)
            || !(self.epsilon > 0.0)
        {
            return Err(Error::Argument(
                "Adam betas must lie in [0, 1) and epsilon be positive".into(),
            ));
        }
        Ok(())
    }

    pub fn layer_dims(&self, input_dim: usize) -> Vec<usize> {
        let mut dims = vec![input_dim];
        dims.extend(&self.hidden);
        dims.push(1);
        dims
    }
}

fn check_inputs(source: &Raster, guide: &Raster, alpha: usize) -> Result<()> {
    if source.channels() != 1 {
        return Err(Error::Dimension(format!(
            "source must have one channel, got {}",
            source.channels()
        )));
    }
    if alpha == 0
        || source.height() * alpha != guide.height()
        || source.width() * alpha != guide.width()
    {
        return Err(Error::Dimension(format!(
            "source {}x{} times alpha={alpha} does not match guide {}x{}",
            source.height(),
            source.width(),
            guide.height(),
            guide.width()
        )));
    }
    Ok(())
}

/// Everything the loss needs, precomputed once per record.
struct Problem {
    features: Features,
    source: Vec<f64>,
    alpha: usize,
    height: usize,
    width: usize,
    lambda: f64,
}

impl Problem {
    fn new(source: &Raster, guide: &Raster, alpha: usize, lambda: f64) -> Result<Self> {
        check_inputs(source, guide, alpha)?;
        Ok(Self {
            features: guide_features(guide)?,
            source: source.values().iter().map(|&v| v as f64).collect(),
            alpha,
            height: guide.height(),
            width: guide.width(),
            lambda,
        })
    }

    fn from_record(record: &PatchRecord, lambda: f64) -> Result<Self> {
        record.validate()?;
        Self::new(&record.source, &record.guide, record.alpha, lambda)
    }

    fn check_net(&self, net: &P2pNet) -> Result<()> {
        if net.dims[0] != self.features.dim || *net.dims.last().unwrap() != 1 {
            return Err(Error::Validation(format!(
                "network dims {:?} do not fit {} input features and a scalar output",
                net.dims, self.features.dim
            )));
        }
        Ok(())
    }

    /// LR residuals `S_p − pool(pred)_p`, accumulated in a fixed order.
    fn residuals(&self, pred: &[f64]) -> Vec<f64> {
        let a = self.alpha;
        let (lh, lw) = (self.height / a, self.width / a);
        let norm = (a * a) as f64;
        let mut res = Vec::with_capacity(lh * lw);
        for i in 0..lh {
            for j in 0..lw {
                let mut acc = 0.0;
                for r in i * a..(i + 1) * a {
                    acc += pred[r * self.width + j * a..r * self.width + (j + 1) * a]
                        .iter()
                        .sum::<f64>();
                }
                res.push(self.source[i * lw + j] - acc / norm);
            }
        }
        res
    }

    fn loss_from(&self, net: &P2pNet, pred: &[f64]) -> f64 {
        let data: f64 = self.residuals(pred).iter().map(|r| r.abs()).sum();
        data + self.lambda * net.l2_sq()
    }

    fn loss(&self, net: &P2pNet) -> f64 {
        let trace = forward_trace(net, &self.features);
        self.loss_from(net, trace.post.last().unwrap())
    }

    /// Loss, gradient and the HR prediction at `net`.
    fn loss_and_grad(&self, net: &P2pNet) -> (f64, Vec<f64>, Vec<f64>) {
        let trace = forward_trace(net, &self.features);
        let pred = trace.post.last().unwrap();
        let res = self.residuals(pred);
        let loss = res.iter().map(|r| r.abs()).sum::<f64>() + self.lambda * net.l2_sq();

        // d|S − pool(y)| / dy = −sign(residual) / α² on every pixel of the block.
        let a = self.alpha;
        let lw = self.width / a;
        let scale = 1.0 / (a * a) as f64;
        let n = self.features.len();
        let mut delta: Vec<f64> = (0..n)
            .map(|p| {
                let (r, c) = (p / self.width, p % self.width);
                let rv = res[(r / a) * lw + c / a];
                if rv > 0.0 {
                    -scale
                } else if rv < 0.0 {
                    scale
                } else {
                    0.0
                }
            })
            .collect();

        let mut grad: Vec<f64> = net.params.iter().map(|p| 2.0 * self.lambda * p).collect();
        for l in (0..net.num_layers()).rev() {
            let (din, dout) = (net.dims[l], net.dims[l + 1]);
            let off = net.offset(l);
            let input: &[f64] = if l == 0 {
                &self.features.data
            } else {
                &trace.post[l - 1]
            };
            let (gw, gb) = grad[off..off + din * dout + dout].split_at_mut(din * dout);
            for p in 0..n {
                let dp = &delta[p * dout..(p + 1) * dout];
                for (gbj, dj) in gb.iter_mut().zip(dp) {
                    *gbj += dj;
                }
                let xp = &input[p * din..(p + 1) * din];
                for (i, &xi) in xp.iter().enumerate() {
                    if xi == 0.0 {
                        continue;
                    }
                    for (g, dj) in gw[i * dout..(i + 1) * dout].iter_mut().zip(dp) {
                        *g += xi * dj;
                    }
                }
            }
            if l > 0 {
                // Transposed copy so the back-projection is an axpy over inputs.
                let w = net.weights(l);
                let mut wt = vec![0.0; din * dout];
                for i in 0..din {
                    for j in 0..dout {
                        wt[j * din + i] = w[i * dout + j];
                    }
                }
                let act = net.activations[l - 1];
                let z_prev = &trace.pre[l - 1];
                let mut next = vec![0.0; n * din];
                for p in 0..n {
                    let np = &mut next[p * din..(p + 1) * din];
                    for (j, &dj) in delta[p * dout..(p + 1) * dout].iter().enumerate() {
                        if dj == 0.0 {
                            continue;
                        }
                        for (v, wji) in np.iter_mut().zip(&wt[j * din..(j + 1) * din]) {
                            *v += dj * wji;
                        }
                    }
                    for (v, &z) in np.iter_mut().zip(&z_prev[p * din..(p + 1) * din]) {
                        *v *= act.derivative(z);
                    }
                }
                delta = next;
            }
        }
        (loss, grad, trace.post.last().unwrap().clone())
    }
}

pub fn p2p_loss(net: &P2pNet, record: &PatchRecord, config: &P2pConfig) -> Result<f64> {
    let problem = Problem::from_record(record, config.lambda)?;
    problem.check_net(net)?;
    Ok(problem.loss(net))
}

/// Reverse-mode gradient of [`p2p_loss`], laid out like [`P2pNet::params`].
pub fn p2p_grad(net: &P2pNet, record: &PatchRecord, config: &P2pConfig) -> Result<Vec<f64>> {
    let problem = Problem::from_record(record, config.lambda)?;
    problem.check_net(net)?;
    Ok(problem.loss_and_grad(net).1)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StopReason {
    Plateau,
    MaxIters,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitDiagnostics {
    pub iterations: usize,
    /// Loss of the returned (final) iterate, in fitting units.
    pub final_loss: f64,
    pub best_loss: f64,
    /// Loss before each update, in fitting units.
    pub loss_curve: Vec<f64>,
    pub stop_reason: StopReason,
    /// Affine map from network output to the returned prediction.
    pub output_offset: f64,
    pub output_scale: f64,
    pub config: P2pConfig,
}

/// Fits a fresh network to `record` and returns its HR prediction. Only the
/// source and guide are read.
pub fn p2p_fit_predict(
    record: &PatchRecord,
    config: &P2pConfig,
) -> Result<(Raster, FitDiagnostics)> {
    record.validate()?;
    p2p_upsample(&record.source, &record.guide, record.alpha, config)
}

/// Fits a fresh network to `(source, guide)` and returns its HR prediction.
///
/// Adam on the full batch; stops after `max_iters` updates or once the best
/// loss has improved by less than `plateau_tol` (relative) over the last
/// `plateau_window` iterations.
pub fn p2p_upsample(
    source: &Raster,
    guide: &Raster,
    alpha: usize,
    config: &P2pConfig,
) -> Result<(Raster, FitDiagnostics)> {
    config.validate()?;
    let (offset, scale) = if config.normalize_source {
        let std = source.std();
        (source.mean(), if std > 0.0 { std } else { 1.0 })
    } else {
        (0.0, 1.0)
    };
    let mut problem = Problem::new(source, guide, alpha, config.lambda)?;
    for s in problem.source.iter_mut() {
        *s = (*s - offset) / scale;
    }

    let mut net = net_init(&config.layer_dims(problem.features.dim), config.seed)?;
    let np = net.param_count();
    let (mut m, mut v) = (vec![0.0; np], vec![0.0; np]);
    let mut curve = Vec::with_capacity(config.max_iters);
    let mut best_curve: Vec<f64> = Vec::with_capacity(config.max_iters);
    let mut stop_reason = StopReason::MaxIters;

    for t in 1..=config.max_iters {
        let (loss, grad, _) = problem.loss_and_grad(&net);
        if !loss.is_finite() {
            return Err(Error::Divergence {
                iteration: t - 1,
                loss,
            });
        }
        curve.push(loss);
        let best = best_curve.last().map_or(loss, |b: &f64| b.min(loss));
        best_curve.push(best);

        let (b1, b2) = (config.beta1, config.beta2);
        let c1 = 1.0 - b1.powi(t as i32);
        let c2 = 1.0 - b2.powi(t as i32);
        for ((p, g), (mi, vi)) in net
            .params
            .iter_mut()
            .zip(&grad)
            .zip(m.iter_mut().zip(v.iter_mut()))
        {
            *mi = b1 * *mi + (1.0 - b1) * g;
            *vi = b2 * *vi + (1.0 - b2) * g * g;
            *p -= config.step_size * (*mi / c1) / ((*vi / c2).sqrt() + config.epsilon);
        }

        let k = best_curve.len();
        if config.plateau_window > 0 && k > config.plateau_window {
            let earlier = best_curve[k - 1 - config.plateau_window];
            if earlier - best < config.plateau_tol * earlier.abs() {
                stop_reason = StopReason::Plateau;
                break;
            }
        }
    }

    let trace = forward_trace(&net, &problem.features);
    let pred = trace.post.last().unwrap();
    let final_loss = problem.loss_from(&net, pred);
    if !final_loss.is_finite() {
        return Err(Error::Divergence {
            iteration: curve.len(),
            loss: final_loss,
        });
    }
    let values: Vec<f32> = pred.iter().map(|&y| (offset + scale * y) as f32).collect();
    let map = Raster::single(problem.height, problem.width, values, source.units())?;
    let best_loss = best_curve
        .last()
        .copied()
        .unwrap_or(final_loss)
        .min(final_loss);
    Ok((
        map,
        FitDiagnostics {
            iterations: curve.len(),
            final_loss,
            best_loss,
            loss_curve: curve,
            stop_reason,
            output_offset: offset,
            output_scale: scale,
            config: config.clone(),
        },
    ))
}
