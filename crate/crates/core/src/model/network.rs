//! Forward and reverse-mode passes of the three-stage CNN.
//!
//! Activations are kept channels-last: a batch of `b` feature maps of size
//! `h×w` with `c` channels is a `(b·h·w, c)` matrix. A 3×3 convolution then
//! becomes one GEMM against the im2col matrix `(b·h·w, 9·c_in)`, whose column
//! `(ky·3 + kx)·c_in + ci` holds input channel `ci` at offset `(ky−1, kx−1)`.

use ndarray::linalg::general_mat_mul;
use ndarray::{Array1, Array2, ArrayView2, Axis};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use super::ModelError;
use crate::csi::{ActivityLabel, SUBCARRIERS};
use crate::dsp::WINDOW_LEN;

pub const CONV_CHANNELS: [usize; 3] = [8, 16, 32];
pub const NUM_CLASSES: usize = ActivityLabel::COUNT;
pub const INPUT_SHAPE: (usize, usize) = (WINDOW_LEN, SUBCARRIERS);
pub const ARCHITECTURE: &str = "input 1x400x52 | conv3x3(8,pad1)-relu-maxpool2 | conv3x3(16,pad1)-relu-maxpool2 | \
conv3x3(32,pad1)-relu-maxpool2 | global-avg-pool | dense(32->3) | softmax";

pub const TENSOR_NAMES: [&str; 8] = [
    "conv1.weight",
    "conv1.bias",
    "conv2.weight",
    "conv2.bias",
    "conv3.weight",
    "conv3.bias",
    "dense.weight",
    "dense.bias",
];

#[derive(Debug, Clone, PartialEq)]
pub struct ConvLayer {
    /// `(9·c_in, c_out)`, rows in im2col order.
    pub weight: Array2<f64>,
    pub bias: Array1<f64>,
}

impl ConvLayer {
    fn zeros(cin: usize, cout: usize) -> Self {
        Self {
            weight: Array2::zeros((9 * cin, cout)),
            bias: Array1::zeros(cout),
        }
    }

    pub fn in_channels(&self) -> usize {
        self.weight.nrows() / 9
    }

    pub fn out_channels(&self) -> usize {
        self.weight.ncols()
    }
}

/// Network weights. The same layout doubles as the gradient container.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams {
    pub conv: [ConvLayer; 3],
    /// `(32, 3)`: logits = features · weight + bias.
    pub dense_weight: Array2<f64>,
    pub dense_bias: Array1<f64>,
}

impl ModelParams {
    pub fn zeros() -> Self {
        let [c1, c2, c3] = CONV_CHANNELS;
        Self {
            conv: [
                ConvLayer::zeros(1, c1),
                ConvLayer::zeros(c1, c2),
                ConvLayer::zeros(c2, c3),
            ],
            dense_weight: Array2::zeros((c3, NUM_CLASSES)),
            dense_bias: Array1::zeros(NUM_CLASSES),
        }
    }

    /// He-normal weights, zero biases.
    pub fn init(seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = Self::zeros();
        for layer in &mut params.conv {
            let fan_in = layer.weight.nrows() as f64;
            let normal = Normal::new(0.0, (2.0 / fan_in).sqrt()).expect("positive std");
            layer.weight.mapv_inplace(|_| normal.sample(&mut rng));
        }
        let fan_in = params.dense_weight.nrows() as f64;
        let normal = Normal::new(0.0, (2.0 / fan_in).sqrt()).expect("positive std");
        params.dense_weight.mapv_inplace(|_| normal.sample(&mut rng));
        params
    }

    pub fn shapes(&self) -> [Vec<usize>; 8] {
        let [a, b, c] = &self.conv;
        [
            a.weight.shape().to_vec(),
            a.bias.shape().to_vec(),
            b.weight.shape().to_vec(),
            b.bias.shape().to_vec(),
            c.weight.shape().to_vec(),
            c.bias.shape().to_vec(),
            self.dense_weight.shape().to_vec(),
            self.dense_bias.shape().to_vec(),
        ]
    }

    pub fn tensors(&self) -> [&[f64]; 8] {
        let [a, b, c] = &self.conv;
        fn s(v: Option<&[f64]>) -> &[f64] {
            v.expect("standard layout")
        }
        [
            s(a.weight.as_slice()),
            s(a.bias.as_slice()),
            s(b.weight.as_slice()),
            s(b.bias.as_slice()),
            s(c.weight.as_slice()),
            s(c.bias.as_slice()),
            s(self.dense_weight.as_slice()),
            s(self.dense_bias.as_slice()),
        ]
    }

    pub fn tensors_mut(&mut self) -> [&mut [f64]; 8] {
        let [a, b, c] = &mut self.conv;
        fn s(v: Option<&mut [f64]>) -> &mut [f64] {
            v.expect("standard layout")
        }
        [
            s(a.weight.as_slice_mut()),
            s(a.bias.as_slice_mut()),
            s(b.weight.as_slice_mut()),
            s(b.bias.as_slice_mut()),
            s(c.weight.as_slice_mut()),
            s(c.bias.as_slice_mut()),
            s(self.dense_weight.as_slice_mut()),
            s(self.dense_bias.as_slice_mut()),
        ]
    }

    pub fn parameter_count(&self) -> usize {
        self.tensors().iter().map(|t| t.len()).sum()
    }

    pub fn is_finite(&self) -> bool {
        self.tensors().iter().all(|t| t.iter().all(|v| v.is_finite()))
    }
}

/// Stable softmax cross-entropy: `−log softmax(logits)[label]`.
pub fn cross_entropy(logits: &[f64], label: ActivityLabel) -> f64 {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let log_sum = logits.iter().map(|z| (z - max).exp()).sum::<f64>().ln();
    log_sum - (logits[label.index()] - max)
}

pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exp: Vec<f64> = logits.iter().map(|z| (z - max).exp()).collect();
    let sum: f64 = exp.iter().sum();
    exp.into_iter().map(|e| e / sum).collect()
}

pub fn argmax(values: &[f64]) -> usize {
    values
        .iter()
        .enumerate()
        .fold(
            (0, f64::NEG_INFINITY),
            |best, (k, &v)| if v > best.1 { (k, v) } else { best },
        )
        .0
}

/// Copies the 3×3 neighbourhood of every pixel into one im2col row. Border
/// entries are never written, so `cols` must start zeroed and keep its size.
fn im2col<const C: usize>(input: &[f64], h: usize, w: usize, cols: &mut [f64]) {
    let k = 9 * C;
    for y in 0..h {
        for x in 0..w {
            let row = (y * w + x) * k;
            for ky in 0..3 {
                let sy = y + ky;
                if sy == 0 || sy > h {
                    continue;
                }
                for kx in 0..3 {
                    let sx = x + kx;
                    if sx == 0 || sx > w {
                        continue;
                    }
                    let src = ((sy - 1) * w + sx - 1) * C;
                    let dst = row + (ky * 3 + kx) * C;
                    cols[dst..dst + C].copy_from_slice(&input[src..src + C]);
                }
            }
        }
    }
}

fn col2im<const C: usize>(dcols: &[f64], h: usize, w: usize, dinput: &mut [f64]) {
    let k = 9 * C;
    dinput.fill(0.0);
    for y in 0..h {
        for x in 0..w {
            let row = (y * w + x) * k;
            for ky in 0..3 {
                let sy = y + ky;
                if sy == 0 || sy > h {
                    continue;
                }
                for kx in 0..3 {
                    let sx = x + kx;
                    if sx == 0 || sx > w {
                        continue;
                    }
                    let dst = ((sy - 1) * w + sx - 1) * C;
                    let src = row + (ky * 3 + kx) * C;
                    for (d, s) in dinput[dst..dst + C].iter_mut().zip(&dcols[src..src + C]) {
                        *d += s;
                    }
                }
            }
        }
    }
}

/// Buffers of one conv → ReLU → pool stage for a single sample.
#[derive(Debug, Clone)]
struct Stage {
    h: usize,
    w: usize,
    cin: usize,
    cols: Array2<f64>,
    z: Array2<f64>,
    /// Post-ReLU pooled output, `(h/2·w/2, c_out)`.
    out: Array2<f64>,
    /// Index into `z` of each pooled maximum.
    argmax: Vec<u32>,
    dz: Array2<f64>,
    dcols: Array2<f64>,
}

impl Stage {
    fn new(h: usize, w: usize, cin: usize, cout: usize) -> Self {
        Self {
            h,
            w,
            cin,
            cols: Array2::zeros((h * w, 9 * cin)),
            z: Array2::zeros((h * w, cout)),
            out: Array2::zeros(((h / 2) * (w / 2), cout)),
            argmax: vec![0; (h / 2) * (w / 2) * cout],
            dz: Array2::zeros((h * w, cout)),
            dcols: Array2::zeros((h * w, 9 * cin)),
        }
    }

    fn forward(&mut self, layer: &ConvLayer, input: &[f64]) {
        let cols = self.cols.as_slice_mut().expect("standard layout");
        match self.cin {
            1 => im2col::<1>(input, self.h, self.w, cols),
            8 => im2col::<8>(input, self.h, self.w, cols),
            16 => im2col::<16>(input, self.h, self.w, cols),
            c => unreachable!("no stage has {c} input channels"),
        }
        for mut row in self.z.rows_mut() {
            row.assign(&layer.bias);
        }
        general_mat_mul(1.0, &self.cols, &layer.weight, 1.0, &mut self.z);

        let (w, c) = (self.w, layer.out_channels());
        let (ph, pw) = (self.h / 2, self.w / 2);
        let z = self.z.as_slice().expect("standard layout");
        let out = self.out.as_slice_mut().expect("standard layout");
        for py in 0..ph {
            for px in 0..pw {
                let dst = (py * pw + px) * c;
                let corners = [
                    ((2 * py) * w + 2 * px) * c,
                    ((2 * py) * w + 2 * px + 1) * c,
                    ((2 * py + 1) * w + 2 * px) * c,
                    ((2 * py + 1) * w + 2 * px + 1) * c,
                ];
                for ch in 0..c {
                    let mut at = corners[0] + ch;
                    for &base in &corners[1..] {
                        if z[base + ch] > z[at] {
                            at = base + ch;
                        }
                    }
                    out[dst + ch] = z[at].max(0.0);
                    self.argmax[dst + ch] = at as u32;
                }
            }
        }
    }

    /// Accumulates this sample's weight gradients and, when `dinput` is
    /// given, writes the gradient with respect to the stage input.
    fn backward(&mut self, layer: &ConvLayer, dout: &[f64], grads: &mut ConvLayer, dinput: Option<&mut [f64]>) {
        self.dz.fill(0.0);
        {
            let dz = self.dz.as_slice_mut().expect("standard layout");
            let out = self.out.as_slice().expect("standard layout");
            for (i, &at) in self.argmax.iter().enumerate() {
                if out[i] > 0.0 {
                    dz[at as usize] += dout[i];
                }
            }
        }
        general_mat_mul(1.0, &self.cols.t(), &self.dz, 1.0, &mut grads.weight);
        grads.bias += &self.dz.sum_axis(Axis(0));
        if let Some(dinput) = dinput {
            general_mat_mul(1.0, &self.dz, &layer.weight.t(), 0.0, &mut self.dcols);
            let dcols = self.dcols.as_slice().expect("standard layout");
            match self.cin {
                8 => col2im::<8>(dcols, self.h, self.w, dinput),
                16 => col2im::<16>(dcols, self.h, self.w, dinput),
                c => unreachable!("no input gradient for {c} channels"),
            }
        }
    }
}

/// Reusable per-sample activation buffers. One workspace serves any number
/// of forward/backward calls; each `backward` uses the activations of the
/// preceding `forward`.
#[derive(Debug, Clone)]
pub struct Workspace {
    input: Vec<f64>,
    stages: [Stage; 3],
    features: Array1<f64>,
    dstage: [Vec<f64>; 3],
}

impl Default for Workspace {
    fn default() -> Self {
        let (h, w) = INPUT_SHAPE;
        let [c1, c2, c3] = CONV_CHANNELS;
        Self {
            input: vec![0.0; h * w],
            stages: [
                Stage::new(h, w, 1, c1),
                Stage::new(h / 2, w / 2, c1, c2),
                Stage::new(h / 4, w / 4, c2, c3),
            ],
            features: Array1::zeros(c3),
            dstage: [
                vec![0.0; (h / 2) * (w / 2) * c1],
                vec![0.0; (h / 4) * (w / 4) * c2],
                vec![0.0; (h / 8) * (w / 8) * c3],
            ],
        }
    }
}

impl Workspace {
    pub fn new() -> Self {
        Self::default()
    }

    /// Logits for one 400×52 window; activations stay cached for `backward`.
    pub fn forward(
        &mut self,
        params: &ModelParams,
        window: ArrayView2<'_, f64>,
    ) -> Result<[f64; NUM_CLASSES], ModelError> {
        if window.dim() != INPUT_SHAPE {
            return Err(ModelError::ShapeMismatch {
                expected: INPUT_SHAPE,
                found: window.dim(),
            });
        }
        for (dst, src) in self.input.iter_mut().zip(window.iter()) {
            *dst = *src;
        }
        let [s1, s2, s3] = &mut self.stages;
        s1.forward(&params.conv[0], &self.input);
        s2.forward(&params.conv[1], s1.out.as_slice().expect("standard layout"));
        s3.forward(&params.conv[2], s2.out.as_slice().expect("standard layout"));
        self.features = s3.out.mean_axis(Axis(0)).expect("non-empty map");
        let logits = self.features.dot(&params.dense_weight) + &params.dense_bias;
        Ok([logits[0], logits[1], logits[2]])
    }

    /// Appends the piecewise-linear region of the last forward sample: every
    /// pooled argmax, with the top bit set where the ReLU passes.
    pub fn activation_pattern(&self, into: &mut Vec<u32>) {
        for stage in &self.stages {
            let out = stage.out.as_slice().expect("standard layout");
            into.extend(
                stage
                    .argmax
                    .iter()
                    .zip(out)
                    .map(|(&a, &o)| a | (u32::from(o > 0.0) << 31)),
            );
        }
    }

    /// Adds the gradient of `dlogits · logits` for the last forward sample.
    pub fn backward(&mut self, params: &ModelParams, dlogits: [f64; NUM_CLASSES], grads: &mut ModelParams) {
        let d = Array1::from(dlogits.to_vec());
        for (i, f) in self.features.iter().enumerate() {
            for k in 0..NUM_CLASSES {
                grads.dense_weight[[i, k]] += f * d[k];
            }
        }
        grads.dense_bias += &d;
        let dfeatures = params.dense_weight.dot(&d);

        // Global average pooling spreads each feature gradient evenly.
        let positions = self.stages[2].out.nrows();
        let [d1, d2, d3] = &mut self.dstage;
        for (k, v) in d3.iter_mut().enumerate() {
            *v = dfeatures[k % dfeatures.len()] / positions as f64;
        }
        let [s1, s2, s3] = &mut self.stages;
        let [g1, g2, g3] = &mut grads.conv;
        s3.backward(&params.conv[2], d3, g3, Some(d2));
        s2.backward(&params.conv[1], d2, g2, Some(d1));
        s1.backward(&params.conv[0], d1, g1, None);
    }
}

fn check_batch(batch: &[ArrayView2<'_, f64>], labels: &[ActivityLabel]) -> Result<(), ModelError> {
    if batch.is_empty() {
        return Err(ModelError::EmptyBatch);
    }
    if labels.len() != batch.len() {
        return Err(ModelError::LabelCount {
            windows: batch.len(),
            labels: labels.len(),
        });
    }
    Ok(())
}

/// Logits of every window, one row per window.
pub fn forward(params: &ModelParams, batch: &[ArrayView2<'_, f64>]) -> Result<Array2<f64>, ModelError> {
    forward_with(&mut Workspace::new(), params, batch)
}

pub fn forward_with(
    ws: &mut Workspace,
    params: &ModelParams,
    batch: &[ArrayView2<'_, f64>],
) -> Result<Array2<f64>, ModelError> {
    if batch.is_empty() {
        return Err(ModelError::EmptyBatch);
    }
    let mut logits = Array2::zeros((batch.len(), NUM_CLASSES));
    for (n, x) in batch.iter().enumerate() {
        let row = ws.forward(params, x.view())?;
        logits.row_mut(n).assign(&ndarray::aview1(&row));
    }
    Ok(logits)
}

/// Mean cross-entropy of a batch and its gradient.
pub fn loss_and_grad(
    params: &ModelParams,
    batch: &[ArrayView2<'_, f64>],
    labels: &[ActivityLabel],
) -> Result<(f64, ModelParams), ModelError> {
    loss_and_grad_with(&mut Workspace::new(), params, batch, labels)
}

/// [`loss_and_grad`] on a caller-owned workspace. Samples are accumulated in
/// batch order, so the result does not depend on the workspace history.
pub fn loss_and_grad_with(
    ws: &mut Workspace,
    params: &ModelParams,
    batch: &[ArrayView2<'_, f64>],
    labels: &[ActivityLabel],
) -> Result<(f64, ModelParams), ModelError> {
    check_batch(batch, labels)?;
    let scale = 1.0 / batch.len() as f64;
    let mut grads = ModelParams::zeros();
    let mut loss = 0.0;
    for (x, &label) in batch.iter().zip(labels) {
        let logits = ws.forward(params, x.view())?;
        loss += cross_entropy(&logits, label);
        let p = softmax(&logits);
        let mut d = [0.0; NUM_CLASSES];
        for k in 0..NUM_CLASSES {
            let onehot = if k == label.index() { 1.0 } else { 0.0 };
            d[k] = (p[k] - onehot) * scale;
        }
        ws.backward(params, d, &mut grads);
    }
    Ok((loss * scale, grads))
}

/// Mean cross-entropy of a batch without gradients.
pub fn batch_loss(
    params: &ModelParams,
    batch: &[ArrayView2<'_, f64>],
    labels: &[ActivityLabel],
) -> Result<f64, ModelError> {
    batch_loss_with(&mut Workspace::new(), params, batch, labels)
}

pub fn batch_loss_with(
    ws: &mut Workspace,
    params: &ModelParams,
    batch: &[ArrayView2<'_, f64>],
    labels: &[ActivityLabel],
) -> Result<f64, ModelError> {
    check_batch(batch, labels)?;
    let mut loss = 0.0;
    for (x, &label) in batch.iter().zip(labels) {
        loss += cross_entropy(&ws.forward(params, x.view())?, label);
    }
    Ok(loss / batch.len() as f64)
}

/// Arg-max class of every row of `logits`.
pub fn predictions(logits: &Array2<f64>) -> Vec<ActivityLabel> {
    logits
        .rows()
        .into_iter()
        .map(|row| ActivityLabel::ALL[argmax(row.as_slice().expect("row-major"))])
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::Array3;
    use rand::Rng;

    fn random_input(rng: &mut impl Rng) -> Array2<f64> {
        Array2::from_shape_fn(INPUT_SHAPE, |_| rng.gen_range(-2.0..2.0))
    }

    /// Direct nested-loop reference in (channel, row, col) layout.
    fn oracle_logits(params: &ModelParams, x: &Array2<f64>) -> Vec<f64> {
        let mut act = x
            .clone()
            .into_shape_with_order((1, INPUT_SHAPE.0, INPUT_SHAPE.1))
            .unwrap();
        for layer in &params.conv {
            let (cin, h, w) = act.dim();
            let cout = layer.out_channels();
            let mut z = Array3::<f64>::zeros((cout, h, w));
            for co in 0..cout {
                for y in 0..h {
                    for x in 0..w {
                        let mut acc = layer.bias[co];
                        for ky in 0..3 {
                            for kx in 0..3 {
                                let (sy, sx) = (y as isize + ky as isize - 1, x as isize + kx as isize - 1);
                                if sy < 0 || sx < 0 || sy >= h as isize || sx >= w as isize {
                                    continue;
                                }
                                for ci in 0..cin {
                                    acc += layer.weight[[(ky * 3 + kx) * cin + ci, co]]
                                        * act[[ci, sy as usize, sx as usize]];
                                }
                            }
                        }
                        z[[co, y, x]] = acc.max(0.0);
                    }
                }
            }
            let mut pooled = Array3::<f64>::zeros((cout, h / 2, w / 2));
            for ((co, y, x), v) in pooled.indexed_iter_mut() {
                *v = [(0, 0), (0, 1), (1, 0), (1, 1)]
                    .iter()
                    .map(|(dy, dx)| z[[co, 2 * y + dy, 2 * x + dx]])
                    .fold(f64::NEG_INFINITY, f64::max);
            }
            act = pooled;
        }
        let (c, h, w) = act.dim();
        let features: Vec<f64> = (0..c)
            .map(|ch| act.slice(ndarray::s![ch, .., ..]).sum() / (h * w) as f64)
            .collect();
        (0..NUM_CLASSES)
            .map(|k| {
                params.dense_bias[k]
                    + (0..c)
                        .map(|ch| features[ch] * params.dense_weight[[ch, k]])
                        .sum::<f64>()
            })
            .collect()
    }

    #[test]
    fn shapes_and_counts() {
        let p = ModelParams::init(0);
        assert_eq!(p.shapes()[0], vec![9, 8]);
        assert_eq!(p.shapes()[2], vec![72, 16]);
        assert_eq!(p.shapes()[4], vec![144, 32]);
        assert_eq!(p.shapes()[6], vec![32, 3]);
        assert_eq!(p.parameter_count(), 80 + 1168 + 4640 + 99);
        assert_eq!(ModelParams::init(0), ModelParams::init(0));
        assert_ne!(ModelParams::init(0), ModelParams::init(1));
    }

    #[test]
    fn zero_params_give_zero_logits() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let x = random_input(&mut rng);
        let pass = forward(&ModelParams::zeros(), &[x.view()]).unwrap();
        assert!(pass.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn forward_matches_direct_convolution() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let mut params = ModelParams::init(3);
        for t in params.tensors_mut() {
            for v in t.iter_mut() {
                *v += rng.gen_range(-0.1..0.1);
            }
        }
        let xs: Vec<_> = (0..2).map(|_| random_input(&mut rng)).collect();
        let views: Vec<_> = xs.iter().map(|x| x.view()).collect();
        let pass = forward(&params, &views).unwrap();
        for (n, x) in xs.iter().enumerate() {
            let expected = oracle_logits(&params, x);
            for k in 0..NUM_CLASSES {
                assert!(
                    (pass[[n, k]] - expected[k]).abs() <= 1e-10,
                    "{} vs {}",
                    pass[[n, k]],
                    expected[k]
                );
            }
        }
        let doubled = &xs[0] * 2.0;
        let again = forward(&params, &[doubled.view()]).unwrap();
        assert!(again.row(0).iter().zip(pass.row(0)).any(|(a, b)| (a - b).abs() > 1e-9));
    }

    #[test]
    fn shape_mismatch_is_rejected() {
        let x = Array2::<f64>::zeros((399, 52));
        assert!(matches!(
            forward(&ModelParams::zeros(), &[x.view()]),
            Err(ModelError::ShapeMismatch { found: (399, 52), .. })
        ));
        assert!(matches!(
            forward(&ModelParams::zeros(), &[]),
            Err(ModelError::EmptyBatch)
        ));
    }

    #[test]
    fn cross_entropy_examples() {
        for label in ActivityLabel::ALL {
            assert!((cross_entropy(&[0.0, 0.0, 0.0], label) - 3f64.ln()).abs() < 1e-15);
        }
        let saturated = cross_entropy(&[1000.0, 0.0, 0.0], ActivityLabel::NoPresence);
        assert!(saturated.is_finite() && saturated < 1e-12);
        assert!(cross_entropy(&[1000.0, 0.0, 0.0], ActivityLabel::Walking).is_finite());

        let logits = [0.3, -1.2, 2.0];
        let p = softmax(&logits);
        for label in ActivityLabel::ALL {
            for k in 0..3 {
                let eps = 1e-6;
                let mut up = logits;
                let mut down = logits;
                up[k] += eps;
                down[k] -= eps;
                let numeric = (cross_entropy(&up, label) - cross_entropy(&down, label)) / (2.0 * eps);
                let analytic = p[k] - if k == label.index() { 1.0 } else { 0.0 };
                assert!((numeric - analytic).abs() < 1e-8);
            }
        }
    }

    #[test]
    fn dense_gradient_matches_closed_form() {
        // Only the dense bias and weights carry signal when every conv output is zero
        // except a constant positive bias in conv3.
        let mut params = ModelParams::zeros();
        params.conv[2].bias.fill(0.5);
        params.dense_weight = Array2::from_shape_fn((32, 3), |(i, k)| 0.01 * (i as f64) - 0.1 * k as f64);
        params.dense_bias = Array1::from(vec![0.1, -0.2, 0.3]);
        let x = Array2::<f64>::zeros(INPUT_SHAPE);
        let label = ActivityLabel::Walking;
        let (_, g) = loss_and_grad(&params, &[x.view()], &[label]).unwrap();
        let features = Array1::from_elem(32, 0.5);
        let logits = features.dot(&params.dense_weight) + &params.dense_bias;
        let p = softmax(logits.as_slice().unwrap());
        for k in 0..3 {
            let d = p[k] - if k == label.index() { 1.0 } else { 0.0 };
            assert!((g.dense_bias[k] - d).abs() < 1e-14);
            for i in 0..32 {
                assert!((g.dense_weight[[i, k]] - 0.5 * d).abs() < 1e-14);
            }
        }
        assert!(g.conv[0].weight.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn duplicated_sample_has_single_sample_gradient() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let params = ModelParams::init(5);
        let x = random_input(&mut rng);
        let (l1, g1) = loss_and_grad(&params, &[x.view()], &[ActivityLabel::Walking]).unwrap();
        let (l2, g2) = loss_and_grad(&params, &[x.view(), x.view()], &[ActivityLabel::Walking; 2]).unwrap();
        assert!((l1 - l2).abs() < 1e-12);
        for (a, b) in g1.tensors().iter().zip(g2.tensors()) {
            for (x, y) in a.iter().zip(b.iter()) {
                assert!((x - y).abs() <= 1e-12 * x.abs().max(1e-3));
            }
        }
    }
}
