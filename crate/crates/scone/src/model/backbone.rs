//! Convolutional backbone with configurable stage geometry. Stage outputs can
//! be tapped as low-level feature maps; the last stage is the high-level map.

use ndarray::Array3;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::nn::{conv_output_size, relu3, relu3_backward, Conv2d, ParamVisit};

/// Stage layout of the backbone. A stride-4 stage is realized as two stride-2
/// convolutions. `low_taps` lists the 0-based stages whose (post-activation)
/// outputs feed the low-level pooling path.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct BackboneConfig {
    pub stage_channels: Vec<usize>,
    pub stage_strides: Vec<usize>,
    pub kernel: usize,
    pub low_taps: Vec<usize>,
}

impl BackboneConfig {
    /// Small 4-stage CNN used for tests and synthetic runs.
    pub fn toy() -> Self {
        Self {
            stage_channels: vec![8, 16, 32, 32],
            stage_strides: vec![2, 2, 2, 1],
            kernel: 3,
            low_taps: vec![1, 2],
        }
    }

    /// Stage geometry matching a standard 50-layer residual network:
    /// 1/4, 1/8, 1/16, 1/32 resolution at 256/512/1024/2048 channels, tapping
    /// the second and third stages.
    pub fn resnet50_geometry() -> Self {
        Self {
            stage_channels: vec![256, 512, 1024, 2048],
            stage_strides: vec![4, 2, 2, 2],
            kernel: 3,
            low_taps: vec![1, 2],
        }
    }

    /// Per-stage (spatial, channels) output shapes for a square input.
    pub fn output_shapes(&self, input_size: usize) -> Vec<(usize, usize)> {
        let mut size = input_size;
        let pad = self.kernel / 2;
        self.stage_strides
            .iter()
            .zip(self.stage_channels.iter())
            .map(|(&stride, &channels)| {
                let mut remaining = stride;
                loop {
                    let step = remaining.min(2);
                    size = conv_output_size(size, self.kernel, step, pad);
                    if remaining <= 2 {
                        break;
                    }
                    remaining /= 2;
                }
                (size, channels)
            })
            .collect()
    }

    pub fn high_channels(&self) -> usize {
        *self.stage_channels.last().unwrap()
    }

    pub fn low_channels(&self) -> Vec<usize> {
        self.low_taps.iter().map(|&i| self.stage_channels[i]).collect()
    }
}

/// Per-conv forward cache: the layer input and its pre-activation output.
pub struct BackboneCache {
    inputs: Vec<Array3<f64>>,
    pre: Vec<Array3<f64>>,
    /// conv index (exclusive) ending each stage
    stage_ends: Vec<usize>,
}

#[derive(Debug, Clone)]
pub struct Backbone {
    pub config: BackboneConfig,
    /// Flat conv list; stage boundaries derived from the config.
    convs: Vec<Conv2d>,
    stage_of_conv: Vec<usize>,
}

impl Backbone {
    pub fn new(config: BackboneConfig, in_channels: usize, rng: &mut ChaCha8Rng) -> Self {
        assert_eq!(config.stage_channels.len(), config.stage_strides.len());
        let pad = config.kernel / 2;
        let mut convs = Vec::new();
        let mut stage_of_conv = Vec::new();
        let mut cin = in_channels;
        for (stage, (&cout, &stride)) in
            config.stage_channels.iter().zip(config.stage_strides.iter()).enumerate()
        {
            let mut remaining = stride;
            loop {
                let step = remaining.min(2);
                convs.push(Conv2d::new(cin, cout, config.kernel, step, pad, rng));
                stage_of_conv.push(stage);
                cin = cout;
                if remaining <= 2 {
                    break;
                }
                remaining /= 2;
            }
        }
        Self { config, convs, stage_of_conv }
    }

    /// Returns (low_maps in tap order, high_map, cache).
    pub fn forward(&self, image: &Array3<f64>) -> (Vec<Array3<f64>>, Array3<f64>, BackboneCache) {
        let mut cache = BackboneCache {
            inputs: Vec::with_capacity(self.convs.len()),
            pre: Vec::with_capacity(self.convs.len()),
            stage_ends: vec![0; self.config.stage_channels.len()],
        };
        let mut low_maps = vec![Array3::zeros((0, 0, 0)); self.config.low_taps.len()];
        let mut x = image.clone();
        for (i, conv) in self.convs.iter().enumerate() {
            let pre = conv.forward(&x);
            let out = relu3(&pre);
            cache.inputs.push(x);
            cache.pre.push(pre);
            let stage = self.stage_of_conv[i];
            cache.stage_ends[stage] = i + 1;
            let stage_done = i + 1 == self.convs.len() || self.stage_of_conv[i + 1] != stage;
            if stage_done {
                if let Some(tap) = self.config.low_taps.iter().position(|&t| t == stage) {
                    low_maps[tap] = out.clone();
                }
            }
            x = out;
        }
        (low_maps, x, cache)
    }

    /// Backward from the high-map gradient plus per-tap low-map gradients;
    /// accumulates weight gradients and returns the image gradient.
    pub fn backward(
        &mut self,
        cache: &BackboneCache,
        grad_high: &Array3<f64>,
        grad_low: &[Array3<f64>],
    ) -> Array3<f64> {
        assert_eq!(grad_low.len(), self.config.low_taps.len());
        let mut grad = grad_high.clone();
        for i in (0..self.convs.len()).rev() {
            let stage = self.stage_of_conv[i];
            // a tap's gradient joins where that stage's output was consumed
            if i + 1 == cache.stage_ends[stage] {
                if let Some(tap) = self.config.low_taps.iter().position(|&t| t == stage) {
                    grad += &grad_low[tap];
                }
            }
            let grad_pre = relu3_backward(&cache.pre[i], &grad);
            grad = self.convs[i].backward(&cache.inputs[i], &grad_pre);
        }
        grad
    }

    pub fn visit(&mut self, prefix: &str, f: &mut dyn FnMut(ParamVisit<'_>)) {
        for (i, conv) in self.convs.iter_mut().enumerate() {
            conv.visit(&format!("{prefix}.conv{i:02}"), f);
        }
    }
}
