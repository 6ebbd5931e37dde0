//! Flat-parameter MLP: forward pass with optional dropout multipliers and
//! reverse-mode gradient of the softmax cross-entropy.

use crate::bnn::Architecture;

/// Per-hidden-layer multiplicative dropout factors (0 or 1/keep_prob for a
/// sampled mask, all 1.0 for the identity mask).
#[derive(Debug, Clone, PartialEq)]
pub struct DropoutMask {
    pub layers: Vec<Vec<f64>>,
}

impl DropoutMask {
    pub fn keep_all(arch: &Architecture) -> Self {
        Self {
            layers: arch.hidden_sizes().iter().map(|&n| vec![1.0; n]).collect(),
        }
    }

    /// Bernoulli mask with inverted scaling.
    pub fn sample<R: rand::Rng + ?Sized>(arch: &Architecture, rate: f64, rng: &mut R) -> Self {
        let keep = 1.0 - rate;
        Self {
            layers: arch
                .hidden_sizes()
                .iter()
                .map(|&n| {
                    (0..n)
                        .map(|_| if rng.random::<f64>() < keep { 1.0 / keep } else { 0.0 })
                        .collect()
                })
                .collect(),
        }
    }
}

/// Activations kept from a forward pass for backpropagation.
#[derive(Debug, Clone, Default)]
pub(crate) struct ForwardCache {
    /// Input of each layer (after activation and dropout of the previous one).
    inputs: Vec<Vec<f64>>,
    /// Pre-activations of each layer.
    pre: Vec<Vec<f64>>,
    pub probs: Vec<f64>,
}

/// Softmax of `logits` into `out`, shifted by the max for stability.
pub(crate) fn softmax_into(logits: &[f64], out: &mut Vec<f64>) {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    out.clear();
    out.extend(logits.iter().map(|z| (z - max).exp()));
    let sum: f64 = out.iter().sum();
    out.iter_mut().for_each(|p| *p /= sum);
}

pub(crate) fn forward_cached(
    arch: &Architecture,
    params: &[f64],
    x: &[f64],
    mask: Option<&DropoutMask>,
    cache: &mut ForwardCache,
) {
    let layers = arch.layer_count();
    cache.inputs.resize(layers, Vec::new());
    cache.pre.resize(layers, Vec::new());
    cache.inputs[0].clear();
    cache.inputs[0].extend_from_slice(x);
    let mut offset = 0;
    for l in 0..layers {
        let (fan_in, fan_out) = arch.layer_shape(l);
        let weights = &params[offset..offset + fan_in * fan_out];
        let bias = &params[offset + fan_in * fan_out..offset + fan_in * fan_out + fan_out];
        offset += fan_in * fan_out + fan_out;

        let input = &cache.inputs[l];
        let z: Vec<f64> = (0..fan_out)
            .map(|o| {
                let row = &weights[o * fan_in..(o + 1) * fan_in];
                row.iter().zip(input).fold(bias[o], |acc, (w, a)| acc + w * a)
            })
            .collect();
        if l + 1 < layers {
            let drop = mask.map(|m| m.layers[l].as_slice());
            cache.inputs[l + 1] = z
                .iter()
                .enumerate()
                .map(|(i, &v)| {
                    let h = v.max(0.0);
                    drop.map_or(h, |d| h * d[i])
                })
                .collect();
        }
        cache.pre[l] = z;
    }
    softmax_into(&cache.pre[layers - 1], &mut cache.probs);
}

/// Adds `scale * d(-ln p[label]) / d(params)` into `grad`.
pub(crate) fn backward_cross_entropy(
    arch: &Architecture,
    params: &[f64],
    cache: &ForwardCache,
    label: usize,
    mask: Option<&DropoutMask>,
    scale: f64,
    grad: &mut [f64],
) {
    let layers = arch.layer_count();
    // dL/dz for the softmax-cross-entropy output layer
    let mut delta: Vec<f64> = cache.probs.iter().map(|p| p * scale).collect();
    delta[label] -= scale;

    let mut offsets = Vec::with_capacity(layers);
    let mut offset = 0;
    for l in 0..layers {
        offsets.push(offset);
        let (fan_in, fan_out) = arch.layer_shape(l);
        offset += fan_in * fan_out + fan_out;
    }

    for l in (0..layers).rev() {
        let (fan_in, fan_out) = arch.layer_shape(l);
        let off = offsets[l];
        let input = &cache.inputs[l];
        for o in 0..fan_out {
            let d = delta[o];
            if d == 0.0 {
                continue;
            }
            let row = &mut grad[off + o * fan_in..off + (o + 1) * fan_in];
            for (g, a) in row.iter_mut().zip(input) {
                *g += d * a;
            }
            grad[off + fan_in * fan_out + o] += d;
        }
        if l == 0 {
            break;
        }
        let weights = &params[off..off + fan_in * fan_out];
        let prev_pre = &cache.pre[l - 1];
        let drop = mask.map(|m| m.layers[l - 1].as_slice());
        let mut prev = vec![0.0; fan_in];
        for (o, &d) in delta.iter().enumerate() {
            if d == 0.0 {
                continue;
            }
            for (p, w) in prev.iter_mut().zip(&weights[o * fan_in..(o + 1) * fan_in]) {
                *p += d * w;
            }
        }
        for (i, p) in prev.iter_mut().enumerate() {
            let relu_grad = if prev_pre[i] > 0.0 { 1.0 } else { 0.0 };
            *p *= relu_grad * drop.map_or(1.0, |d| d[i]);
        }
        delta = prev;
    }
}

impl ForwardCache {
    /// `-ln softmax(z)[label]` computed from the logits.
    pub(crate) fn cross_entropy(&self, label: usize) -> f64 {
        let logits = self.pre.last().expect("forward pass ran");
        let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let lse = max + logits.iter().map(|z| (z - max).exp()).sum::<f64>().ln();
        lse - logits[label]
    }
}
