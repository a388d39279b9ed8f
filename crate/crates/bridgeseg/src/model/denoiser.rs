//! Reference trainable denoiser: a small convolutional network with
//! hand-written forward and backward passes.
//!
//! Input is the 6-channel bridge state plus one constant channel
//! broadcasting t. Hidden layers are 3×3 convolutions (stride 1, zero
//! padding) with a SiLU nonlinearity; the output head is a linear 1×1
//! convolution back to 6 channels. Computation is in f64 so analytic
//! gradients agree with finite differences to many digits.

use rand::Rng;

use super::Denoiser;
use crate::bridge::BridgeState;
use crate::error::{Error, Result};
use crate::tensor::ImageTensor;

/// Number of channels in a bridge state.
pub const STATE_CHANNELS: usize = 6;
/// State channels plus the constant time channel.
pub const INPUT_CHANNELS: usize = STATE_CHANNELS + 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LayerKind {
    Conv3x3,
    Conv1x1,
}

impl LayerKind {
    pub fn kernel(&self) -> usize {
        match self {
            LayerKind::Conv3x3 => 3,
            LayerKind::Conv1x1 => 1,
        }
    }
}

/// Ordered layer descriptor; together with the layer order this fixes the
/// layout of the flat parameter vector (weights, then biases, per layer).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LayerShape {
    pub kind: LayerKind,
    pub c_in: usize,
    pub c_out: usize,
}

impl LayerShape {
    pub fn weight_count(&self) -> usize {
        let k = self.kind.kernel();
        self.c_in * self.c_out * k * k
    }

    pub fn param_count(&self) -> usize {
        self.weight_count() + self.c_out
    }
}

/// Flat parameter vector with its layer table, paired gradient and EMA
/// buffers.
#[derive(Debug, Clone)]
pub struct DenoiserParams {
    width: usize,
    depth: usize,
    shapes: Vec<LayerShape>,
    /// Weight offset per layer into the flat vectors; biases follow the
    /// weights of their layer.
    offsets: Vec<usize>,
    pub values: Vec<f64>,
    pub grads: Vec<f64>,
    pub ema_values: Vec<f64>,
    pub ema_decay: f64,
}

impl DenoiserParams {
    /// Zero-initialized parameters for a depth×width network.
    pub fn new(width: usize, depth: usize, ema_decay: f64) -> Result<Self> {
        if width == 0 {
            return Err(Error::config("model.width", "must be positive"));
        }
        if depth == 0 {
            return Err(Error::config("model.depth", "must be positive"));
        }
        if !(0.0..=1.0).contains(&ema_decay) {
            return Err(Error::config(
                "train.ema_decay",
                format!("must lie in [0, 1], got {ema_decay}"),
            ));
        }
        let mut shapes = Vec::with_capacity(depth + 1);
        for l in 0..depth {
            shapes.push(LayerShape {
                kind: LayerKind::Conv3x3,
                c_in: if l == 0 { INPUT_CHANNELS } else { width },
                c_out: width,
            });
        }
        shapes.push(LayerShape {
            kind: LayerKind::Conv1x1,
            c_in: width,
            c_out: STATE_CHANNELS,
        });
        let mut offsets = Vec::with_capacity(shapes.len());
        let mut cursor = 0usize;
        for s in &shapes {
            offsets.push(cursor);
            cursor += s.param_count();
        }
        Ok(Self {
            width,
            depth,
            shapes,
            offsets,
            values: vec![0.0; cursor],
            grads: vec![0.0; cursor],
            ema_values: vec![0.0; cursor],
            ema_decay,
        })
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn depth(&self) -> usize {
        self.depth
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn shapes(&self) -> &[LayerShape] {
        &self.shapes
    }

    /// Fan-in-scaled uniform weight init (U(−1/√fan_in, 1/√fan_in)), zero
    /// biases; the EMA buffer starts as a copy of the values.
    pub fn init_random<R: Rng>(&mut self, rng: &mut R) {
        for (shape, &w_off) in self.shapes.iter().zip(&self.offsets) {
            let k = shape.kind.kernel();
            let fan_in = (shape.c_in * k * k) as f64;
            let bound = 1.0 / fan_in.sqrt();
            let wc = shape.weight_count();
            for w in &mut self.values[w_off..w_off + wc] {
                *w = rng.random_range(-bound..bound);
            }
            for b in &mut self.values[w_off + wc..w_off + wc + shape.c_out] {
                *b = 0.0;
            }
        }
        self.ema_values.copy_from_slice(&self.values);
    }

    fn arch(&self) -> Arch<'_> {
        Arch {
            shapes: &self.shapes,
            offsets: &self.offsets,
            width: self.width,
            depth: self.depth,
        }
    }

    /// Forward pass with the live parameter values.
    pub fn forward(&self, state: &BridgeState) -> Result<ImageTensor> {
        let acts = run_forward(&self.arch(), &self.values, state)?;
        Ok(output_tensor(state, &acts.output))
    }

    /// Forward pass with the EMA parameter values.
    pub fn forward_ema(&self, state: &BridgeState) -> Result<ImageTensor> {
        let acts = run_forward(&self.arch(), &self.ema_values, state)?;
        Ok(output_tensor(state, &acts.output))
    }
}

/// View over parameters that implements [`Denoiser`], selecting either the
/// live or the EMA weights.
pub struct ReferenceDenoiser<'a> {
    params: &'a DenoiserParams,
    use_ema: bool,
}

impl<'a> ReferenceDenoiser<'a> {
    pub fn new(params: &'a DenoiserParams) -> Self {
        Self {
            params,
            use_ema: false,
        }
    }

    /// Inference view: uses the EMA parameter set.
    pub fn with_ema(params: &'a DenoiserParams) -> Self {
        Self {
            params,
            use_ema: true,
        }
    }
}

impl Denoiser for ReferenceDenoiser<'_> {
    fn predict_eps(&self, state: &BridgeState) -> Result<ImageTensor> {
        if self.use_ema {
            self.params.forward_ema(state)
        } else {
            self.params.forward(state)
        }
    }
}

/// Architecture view, separated from the parameter storage so forward and
/// backward can borrow values and gradients independently.
struct Arch<'a> {
    shapes: &'a [LayerShape],
    offsets: &'a [usize],
    width: usize,
    depth: usize,
}

impl Arch<'_> {
    fn layer_params<'v>(&self, values: &'v [f64], layer: usize) -> (&'v [f64], &'v [f64]) {
        let shape = self.shapes[layer];
        let off = self.offsets[layer];
        let wc = shape.weight_count();
        (
            &values[off..off + wc],
            &values[off + wc..off + wc + shape.c_out],
        )
    }
}

struct Activations {
    /// Input planes of each conv layer; [0] is the 7-channel network input.
    layer_inputs: Vec<Vec<f64>>,
    /// Pre-activation planes of each hidden layer.
    preacts: Vec<Vec<f64>>,
    output: Vec<f64>,
}

fn silu(x: f64) -> f64 {
    x / (1.0 + (-x).exp())
}

fn silu_prime(x: f64) -> f64 {
    let s = 1.0 / (1.0 + (-x).exp());
    s * (1.0 + x * (1.0 - s))
}

fn ensure_finite(plane: &[f64], layer: usize) -> Result<()> {
    // Any non-finite element makes the sum non-finite.
    let sum: f64 = plane.iter().sum();
    if sum.is_finite() {
        Ok(())
    } else {
        Err(Error::NonFinite {
            context: format!("denoiser layer {layer}"),
        })
    }
}

fn input_planes(state: &BridgeState) -> Result<(usize, usize, Vec<f64>)> {
    state.data.ensure_channels(STATE_CHANNELS, "denoiser input")?;
    let (h, w, _) = state.data.shape();
    let hw = h * w;
    let mut planes = vec![0.0f64; INPUT_CHANNELS * hw];
    for c in 0..STATE_CHANNELS {
        for (dst, &src) in planes[c * hw..(c + 1) * hw]
            .iter_mut()
            .zip(state.data.plane(c))
        {
            *dst = src as f64;
        }
    }
    planes[STATE_CHANNELS * hw..].fill(state.t);
    Ok((h, w, planes))
}

fn output_tensor(state: &BridgeState, output: &[f64]) -> ImageTensor {
    let (h, w, _) = state.data.shape();
    let data: Vec<f32> = output.iter().map(|&v| v as f32).collect();
    ImageTensor::from_planes(h, w, STATE_CHANNELS, data).expect("output plane count is fixed")
}

fn conv3x3_forward(
    inp: &[f64],
    c_in: usize,
    out: &mut [f64],
    c_out: usize,
    h: usize,
    w: usize,
    weights: &[f64],
    bias: &[f64],
) {
    let hw = h * w;
    for co in 0..c_out {
        out[co * hw..(co + 1) * hw].fill(bias[co]);
        for ci in 0..c_in {
            let wbase = (co * c_in + ci) * 9;
            for ky in 0..3usize {
                let dy = ky as isize - 1;
                let y0 = usize::from(dy < 0);
                let y1 = if dy > 0 { h - 1 } else { h };
                for kx in 0..3usize {
                    let dx = kx as isize - 1;
                    let x0 = usize::from(dx < 0);
                    let x1 = if dx > 0 { w - 1 } else { w };
                    let wv = weights[wbase + ky * 3 + kx];
                    let span = x1 - x0;
                    for y in y0..y1 {
                        let iy = (y as isize + dy) as usize;
                        let ix0 = (x0 as isize + dx) as usize;
                        let orow = &mut out[co * hw + y * w + x0..co * hw + y * w + x1];
                        let irow = &inp[ci * hw + iy * w + ix0..ci * hw + iy * w + ix0 + span];
                        for (o, &i) in orow.iter_mut().zip(irow) {
                            *o += wv * i;
                        }
                    }
                }
            }
        }
    }
}

/// Backward of [`conv3x3_forward`]: accumulates weight/bias gradients and,
/// when `d_in` is given, the input gradient.
#[allow(clippy::too_many_arguments)]
fn conv3x3_backward(
    d_out: &[f64],
    inp: &[f64],
    c_in: usize,
    c_out: usize,
    h: usize,
    w: usize,
    weights: &[f64],
    d_weights: &mut [f64],
    d_bias: &mut [f64],
    mut d_in: Option<&mut [f64]>,
) {
    let hw = h * w;
    for co in 0..c_out {
        let dplane = &d_out[co * hw..(co + 1) * hw];
        d_bias[co] += dplane.iter().sum::<f64>();
        for ci in 0..c_in {
            let wbase = (co * c_in + ci) * 9;
            for ky in 0..3usize {
                let dy = ky as isize - 1;
                let y0 = usize::from(dy < 0);
                let y1 = if dy > 0 { h - 1 } else { h };
                for kx in 0..3usize {
                    let dx = kx as isize - 1;
                    let x0 = usize::from(dx < 0);
                    let x1 = if dx > 0 { w - 1 } else { w };
                    let span = x1 - x0;
                    let wv = weights[wbase + ky * 3 + kx];
                    let mut wgrad = 0.0;
                    for y in y0..y1 {
                        let iy = (y as isize + dy) as usize;
                        let ix0 = (x0 as isize + dx) as usize;
                        let drow = &dplane[y * w + x0..y * w + x1];
                        let irow = &inp[ci * hw + iy * w + ix0..ci * hw + iy * w + ix0 + span];
                        let mut acc = 0.0;
                        for (&d, &i) in drow.iter().zip(irow) {
                            acc += d * i;
                        }
                        wgrad += acc;
                        if let Some(din) = d_in.as_deref_mut() {
                            let dirow =
                                &mut din[ci * hw + iy * w + ix0..ci * hw + iy * w + ix0 + span];
                            for (di, &d) in dirow.iter_mut().zip(drow) {
                                *di += wv * d;
                            }
                        }
                    }
                    d_weights[wbase + ky * 3 + kx] += wgrad;
                }
            }
        }
    }
}

fn conv1x1_forward(
    inp: &[f64],
    c_in: usize,
    out: &mut [f64],
    c_out: usize,
    hw: usize,
    weights: &[f64],
    bias: &[f64],
) {
    for co in 0..c_out {
        out[co * hw..(co + 1) * hw].fill(bias[co]);
        for ci in 0..c_in {
            let wv = weights[co * c_in + ci];
            let orow = &mut out[co * hw..(co + 1) * hw];
            let irow = &inp[ci * hw..(ci + 1) * hw];
            for (o, &i) in orow.iter_mut().zip(irow) {
                *o += wv * i;
            }
        }
    }
}

#[allow(clippy::too_many_arguments)]
fn conv1x1_backward(
    d_out: &[f64],
    inp: &[f64],
    c_in: usize,
    c_out: usize,
    hw: usize,
    weights: &[f64],
    d_weights: &mut [f64],
    d_bias: &mut [f64],
    d_in: &mut [f64],
) {
    for co in 0..c_out {
        let dplane = &d_out[co * hw..(co + 1) * hw];
        d_bias[co] += dplane.iter().sum::<f64>();
        for ci in 0..c_in {
            let irow = &inp[ci * hw..(ci + 1) * hw];
            let mut acc = 0.0;
            for (&d, &i) in dplane.iter().zip(irow) {
                acc += d * i;
            }
            d_weights[co * c_in + ci] += acc;
            let wv = weights[co * c_in + ci];
            let dirow = &mut d_in[ci * hw..(ci + 1) * hw];
            for (di, &d) in dirow.iter_mut().zip(dplane) {
                *di += wv * d;
            }
        }
    }
}

fn run_forward(arch: &Arch<'_>, values: &[f64], state: &BridgeState) -> Result<Activations> {
    let (h, w, input) = input_planes(state)?;
    let hw = h * w;

    let mut layer_inputs: Vec<Vec<f64>> = Vec::with_capacity(arch.depth + 1);
    let mut preacts: Vec<Vec<f64>> = Vec::with_capacity(arch.depth);
    layer_inputs.push(input);

    for l in 0..arch.depth {
        let shape = arch.shapes[l];
        let (weights, bias) = arch.layer_params(values, l);
        let mut pre = vec![0.0f64; arch.width * hw];
        conv3x3_forward(
            &layer_inputs[l],
            shape.c_in,
            &mut pre,
            shape.c_out,
            h,
            w,
            weights,
            bias,
        );
        ensure_finite(&pre, l)?;
        let post: Vec<f64> = pre.iter().map(|&x| silu(x)).collect();
        preacts.push(pre);
        layer_inputs.push(post);
    }

    let head = arch.shapes[arch.depth];
    let (weights, bias) = arch.layer_params(values, arch.depth);
    let mut output = vec![0.0f64; STATE_CHANNELS * hw];
    conv1x1_forward(
        &layer_inputs[arch.depth],
        head.c_in,
        &mut output,
        head.c_out,
        hw,
        weights,
        bias,
    );
    ensure_finite(&output, arch.depth)?;

    Ok(Activations {
        layer_inputs,
        preacts,
        output,
    })
}

/// Mean squared error over a batch of (state, target) pairs plus analytic
/// gradients, accumulated into `params.grads`.
///
/// The loss is the mean over batch elements, pixels, and channels.
pub fn loss_and_grad(
    params: &mut DenoiserParams,
    batch: &[(BridgeState, ImageTensor)],
) -> Result<f64> {
    if batch.is_empty() {
        return Err(Error::Domain("loss_and_grad: empty batch".into()));
    }
    let shape0 = batch[0].0.data.shape();
    for (state, target) in batch {
        if state.data.shape() != shape0 || !target.same_shape(&state.data) {
            return Err(Error::Shape {
                context: "loss_and_grad batch",
                expected: format!("{shape0:?}"),
                got: format!("state {:?}, target {:?}", state.data.shape(), target.shape()),
            });
        }
    }
    let (h, w, _) = shape0;
    let hw = h * w;
    let n_total = (batch.len() * STATE_CHANNELS * hw) as f64;

    let DenoiserParams {
        width,
        depth,
        shapes,
        offsets,
        values,
        grads,
        ..
    } = params;
    let arch = Arch {
        shapes,
        offsets,
        width: *width,
        depth: *depth,
    };
    let depth = arch.depth;
    grads.fill(0.0);
    let mut loss_sum = 0.0f64;

    for (state, target) in batch {
        let acts = run_forward(&arch, values, state)?;

        let mut d_out = vec![0.0f64; STATE_CHANNELS * hw];
        for ((d, &o), &t) in d_out.iter_mut().zip(&acts.output).zip(target.data()) {
            let diff = o - t as f64;
            loss_sum += diff * diff;
            *d = 2.0 * diff / n_total;
        }

        // Head backward.
        let head = arch.shapes[depth];
        let (head_w, _) = arch.layer_params(values, depth);
        let head_wc = head.weight_count();
        let mut d_post = vec![0.0f64; arch.width * hw];
        {
            let layer_grads = &mut grads[arch.offsets[depth]..];
            let (dw, db) = layer_grads.split_at_mut(head_wc);
            conv1x1_backward(
                &d_out,
                &acts.layer_inputs[depth],
                head.c_in,
                head.c_out,
                hw,
                head_w,
                dw,
                &mut db[..head.c_out],
                &mut d_post,
            );
        }

        // Hidden layers, last to first.
        for l in (0..depth).rev() {
            let shape = arch.shapes[l];
            let (layer_w, _) = arch.layer_params(values, l);
            let wc = shape.weight_count();
            let mut d_pre = d_post;
            for (dp, &pre) in d_pre.iter_mut().zip(&acts.preacts[l]) {
                *dp *= silu_prime(pre);
            }
            let mut d_in = if l > 0 {
                vec![0.0f64; shape.c_in * hw]
            } else {
                Vec::new()
            };
            {
                let layer_grads = &mut grads[arch.offsets[l]..];
                let (dw, db) = layer_grads.split_at_mut(wc);
                conv3x3_backward(
                    &d_pre,
                    &acts.layer_inputs[l],
                    shape.c_in,
                    shape.c_out,
                    h,
                    w,
                    layer_w,
                    dw,
                    &mut db[..shape.c_out],
                    (l > 0).then_some(d_in.as_mut_slice()),
                );
            }
            d_post = d_in;
        }
    }

    Ok(loss_sum / n_total)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::bridge::BridgeState;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn random_state(h: usize, w: usize, rng: &mut ChaCha8Rng, t: f64) -> BridgeState {
        let data = ImageTensor::from_fn(h, w, 6, |_, _, _| rng.random_range(-1.0..1.0));
        BridgeState::new(data, t).unwrap()
    }

    #[test]
    fn zero_params_give_zero_output() {
        let params = DenoiserParams::new(8, 2, 0.999).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let state = random_state(8, 8, &mut rng, 0.7);
        let out = params.forward(&state).unwrap();
        assert!(out.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn output_shape_matches_input() {
        let mut params = DenoiserParams::new(8, 2, 0.999).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        params.init_random(&mut rng);
        for size in [8usize, 16, 32] {
            let state = random_state(size, size, &mut rng, 0.4);
            let out = params.forward(&state).unwrap();
            assert_eq!(out.shape(), (size, size, 6));
            assert!(out.is_finite());
        }
    }

    #[test]
    fn forward_is_deterministic() {
        let mut params = DenoiserParams::new(6, 2, 0.999).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        params.init_random(&mut rng);
        let state = random_state(10, 7, &mut rng, 0.55);
        let a = params.forward(&state).unwrap();
        let b = params.forward(&state).unwrap();
        assert_eq!(a.data(), b.data());
    }

    #[test]
    fn rejects_wrong_channel_count() {
        let params = DenoiserParams::new(4, 1, 0.999).unwrap();
        let state = BridgeState::new(ImageTensor::zeros(4, 4, 3), 0.5).unwrap();
        assert!(params.forward(&state).is_err());
    }

    #[test]
    fn rejects_bad_construction() {
        assert!(DenoiserParams::new(0, 2, 0.999).is_err());
        assert!(DenoiserParams::new(8, 0, 0.999).is_err());
        assert!(DenoiserParams::new(8, 2, 1.5).is_err());
    }

    #[test]
    fn perfect_prediction_gives_zero_loss_and_grads() {
        // With zero parameters the output is zero; zero targets give a
        // zero loss and zero gradients.
        let mut params = DenoiserParams::new(8, 2, 0.999).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let state = random_state(8, 8, &mut rng, 0.6);
        let target = ImageTensor::zeros(8, 8, 6);
        let loss = loss_and_grad(&mut params, &[(state, target)]).unwrap();
        assert_eq!(loss, 0.0);
        assert!(params.grads.iter().all(|&g| g == 0.0));
    }

    #[test]
    fn unit_error_single_pixel_loss() {
        // 1×1 spatial case: prediction 0 (zero params), target 1 in every
        // channel → mean squared error 1.
        let mut params = DenoiserParams::new(4, 1, 0.999).unwrap();
        let state = BridgeState::new(ImageTensor::zeros(1, 1, 6), 0.5).unwrap();
        let target = ImageTensor::constant(1, 1, 6, 1.0);
        let loss = loss_and_grad(&mut params, &[(state, target)]).unwrap();
        assert!((loss - 1.0).abs() < 1e-12);
    }

    #[test]
    fn batch_shape_mismatch_is_rejected() {
        let mut params = DenoiserParams::new(4, 1, 0.999).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let a = (random_state(4, 4, &mut rng, 0.5), ImageTensor::zeros(4, 4, 6));
        let b = (random_state(5, 4, &mut rng, 0.5), ImageTensor::zeros(5, 4, 6));
        assert!(loss_and_grad(&mut params, &[a, b]).is_err());
        assert!(loss_and_grad(&mut params, &[]).is_err());
    }

    #[test]
    fn translation_equivariant_in_the_interior() {
        // Shift the input by one pixel; interior outputs shift identically
        // (borders differ because of zero padding).
        let mut params = DenoiserParams::new(6, 2, 0.999).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        params.init_random(&mut rng);
        let base = ImageTensor::from_fn(12, 12, 6, |_, _, _| rng.random_range(-1.0..1.0));
        let shifted = ImageTensor::from_fn(12, 12, 6, |y, x, c| {
            if y > 0 && x > 0 {
                base.get(y - 1, x - 1, c)
            } else {
                0.0
            }
        });
        let out_a = params
            .forward(&BridgeState::new(base, 0.5).unwrap())
            .unwrap();
        let out_b = params
            .forward(&BridgeState::new(shifted, 0.5).unwrap())
            .unwrap();
        // Receptive field of depth-2 3×3 convs is 5×5: compare pixels at
        // least 3 away from every border in both frames.
        for y in 3..9 {
            for x in 3..9 {
                for c in 0..6 {
                    let a = out_a.get(y, x, c);
                    let b = out_b.get(y + 1, x + 1, c);
                    assert!(
                        (a - b).abs() < 1e-5,
                        "mismatch at ({y},{x},{c}): {a} vs {b}"
                    );
                }
            }
        }
    }
}
