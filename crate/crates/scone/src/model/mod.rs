//! Object-conditioned attribute prediction network: backbone features gated
//! by an object-phrase embedding, a relevant-object localizer with spatial
//! softmax, multiple attention heads with per-head projections, low-level
//! pooling under the localizer map, and a sigmoid classifier head.

pub mod backbone;

use ndarray::{Array1, Array2, Array3, Axis};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Result, SconeError};
use crate::nn::{
    attention_pool, attention_pool_backward, mean_pool, mean_pool_backward, relu1,
    relu1_backward, relu3, relu3_backward, sigmoid, spatial_softmax, spatial_softmax_backward,
    BilinearResize, Conv2d, Linear, ParamVisit, Params,
};

use backbone::{Backbone, BackboneConfig};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelMode {
    /// Full pipeline: gating, localizer, multi-attention, low-level pooling.
    StrongBaseline,
    /// Gating only; classify from the mean-pooled composed features.
    ResnetBaseline,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct ModelConfig {
    pub backbone: BackboneConfig,
    pub num_classes: usize,
    /// Object-embedding dimensionality (frozen input).
    pub embed_dim: usize,
    /// Hidden width of the gate MLP.
    pub gate_hidden: usize,
    /// Number of attention heads.
    pub num_heads: usize,
    /// Per-head projection output size.
    pub proj_dim: usize,
    pub mode: ModelMode,
}

impl ModelConfig {
    /// Small configuration for tests and synthetic-data runs.
    pub fn toy(num_classes: usize) -> Self {
        Self {
            backbone: BackboneConfig::toy(),
            num_classes,
            embed_dim: 32,
            gate_hidden: 32,
            num_heads: 3,
            proj_dim: 16,
            mode: ModelMode::StrongBaseline,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.num_heads < 1 {
            return Err(SconeError::InvalidConfig("num_heads must be >= 1".into()));
        }
        if self.num_classes == 0 {
            return Err(SconeError::InvalidConfig("num_classes must be >= 1".into()));
        }
        Ok(())
    }

    /// Length of the classifier input for the configured mode.
    pub fn feature_len(&self) -> usize {
        let d = self.backbone.high_channels();
        match self.mode {
            ModelMode::StrongBaseline => {
                let low: usize = self.backbone.low_channels().iter().sum();
                low + d + self.num_heads * self.proj_dim
            }
            ModelMode::ResnetBaseline => d,
        }
    }
}

/// Everything the forward pass produces, inference-facing.
#[derive(Debug, Clone)]
pub struct ModelOutput {
    /// Localizer attention map (absent in `ResnetBaseline` mode).
    pub g: Option<Array2<f64>>,
    /// Pre-softmax per-head maps.
    pub e_maps: Vec<Array2<f64>>,
    /// Post-softmax per-head attention maps.
    pub a_maps: Vec<Array2<f64>>,
    pub z_low: Array1<f64>,
    pub z_rel: Array1<f64>,
    pub z_att: Array1<f64>,
    pub logits: Array1<f64>,
    /// Sigmoid scores, strictly inside (0, 1).
    pub scores: Array1<f64>,
    /// Mean-pooled composed feature map (contrastive-learning input).
    pub x_pooled: Array1<f64>,
}

struct HeadCache {
    att1_pre: Array3<f64>,
    e: Array2<f64>,
    a: Array2<f64>,
    r: Array1<f64>,
}

struct LowCache {
    /// Resized (un-normalized) localizer map and its sum.
    u_sum: f64,
    /// Resized and renormalized localizer map.
    gp: Array2<f64>,
}

/// Intermediate activations retained for the backward pass.
pub struct ForwardCache {
    backbone: backbone::BackboneCache,
    low_maps: Vec<Array3<f64>>,
    high: Array3<f64>,
    phi: Array1<f64>,
    g1_pre: Array1<f64>,
    g1: Array1<f64>,
    gate: Array1<f64>,
    x: Array3<f64>,
    rel1_pre: Array3<f64>,
    g: Array2<f64>,
    heads: Vec<HeadCache>,
    low: Vec<LowCache>,
    feat: Array1<f64>,
}

/// External gradients flowing into the network outputs.
#[derive(Debug, Clone, Default)]
pub struct OutputGrads {
    pub logits: Option<Array1<f64>>,
    pub g: Option<Array2<f64>>,
    pub e_maps: Vec<Array2<f64>>,
    pub x_pooled: Option<Array1<f64>>,
}

#[derive(Debug, Clone)]
pub struct SconeModel {
    pub config: ModelConfig,
    pub backbone: Backbone,
    gate_fc1: Linear,
    gate_fc2: Linear,
    rel1: Conv2d,
    rel2: Conv2d,
    att1: Vec<Conv2d>,
    att2: Vec<Conv2d>,
    projectors: Vec<Linear>,
    classifier: Linear,
}

impl SconeModel {
    pub fn new(config: ModelConfig, rng: &mut ChaCha8Rng) -> Result<Self> {
        config.validate()?;
        let d = config.backbone.high_channels();
        let rel_hidden = (d / 4).max(1);
        let backbone = Backbone::new(config.backbone.clone(), 3, rng);
        let gate_fc1 = Linear::new(config.embed_dim, config.gate_hidden, rng);
        let gate_fc2 = Linear::new(config.gate_hidden, d, rng);
        let rel1 = Conv2d::new(d, rel_hidden, 1, 1, 0, rng);
        let rel2 = Conv2d::new(rel_hidden, 1, 1, 1, 0, rng);
        let mut att1 = Vec::new();
        let mut att2 = Vec::new();
        let mut projectors = Vec::new();
        for _ in 0..config.num_heads {
            att1.push(Conv2d::new(d, rel_hidden, 1, 1, 0, rng));
            att2.push(Conv2d::new(rel_hidden, 1, 1, 1, 0, rng));
            projectors.push(Linear::new(d, config.proj_dim, rng));
        }
        let classifier = Linear::new(config.feature_len(), config.num_classes, rng);
        Ok(Self {
            config,
            backbone,
            gate_fc1,
            gate_fc2,
            rel1,
            rel2,
            att1,
            att2,
            projectors,
            classifier,
        })
    }

    fn map_1x1(conv1: &Conv2d, conv2: &Conv2d, x: &Array3<f64>) -> (Array3<f64>, Array2<f64>) {
        let pre = conv1.forward(x);
        let logits3 = conv2.forward(&relu3(&pre));
        (pre, logits3.index_axis(Axis(2), 0).to_owned())
    }

    /// Full forward pass. `phi` is the frozen object-phrase embedding.
    pub fn forward(&self, image: &Array3<f64>, phi: &Array1<f64>) -> Result<(ModelOutput, ForwardCache)> {
        if phi.len() != self.config.embed_dim {
            return Err(SconeError::ShapeError(format!(
                "object embedding length {} != {}",
                phi.len(),
                self.config.embed_dim
            )));
        }
        let (low_maps, high, backbone_cache) = self.backbone.forward(image);
        // object-conditioned channel gate, broadcast over space
        let g1_pre = self.gate_fc1.forward(phi);
        let g1 = relu1(&g1_pre);
        let gate = self.gate_fc2.forward(&g1).mapv(sigmoid);
        let mut x = high.clone();
        for mut lane in x.lanes_mut(Axis(2)) {
            lane.zip_mut_with(&gate, |v, &g| *v *= g);
        }
        let x_pooled = mean_pool(&x);

        if self.config.mode == ModelMode::ResnetBaseline {
            let logits = self.classifier.forward(&x_pooled);
            let scores = logits.mapv(sigmoid);
            let output = ModelOutput {
                g: None,
                e_maps: Vec::new(),
                a_maps: Vec::new(),
                z_low: Array1::zeros(0),
                z_rel: Array1::zeros(0),
                z_att: Array1::zeros(0),
                logits,
                scores,
                x_pooled: x_pooled.clone(),
            };
            let cache = ForwardCache {
                backbone: backbone_cache,
                low_maps,
                high,
                phi: phi.clone(),
                g1_pre,
                g1,
                gate,
                feat: x_pooled,
                x,
                rel1_pre: Array3::zeros((0, 0, 0)),
                g: Array2::zeros((0, 0)),
                heads: Vec::new(),
                low: Vec::new(),
            };
            return Ok((output, cache));
        }

        // localizer: two 1x1 convs, spatial softmax, attention pooling
        let (rel1_pre, g_logits) = Self::map_1x1(&self.rel1, &self.rel2, &x);
        let g = spatial_softmax(&g_logits);
        let z_rel = attention_pool(&g, &x);

        // attention heads
        let mut heads = Vec::with_capacity(self.config.num_heads);
        let mut z_att = Array1::zeros(self.config.num_heads * self.config.proj_dim);
        for m in 0..self.config.num_heads {
            let (att1_pre, e) = Self::map_1x1(&self.att1[m], &self.att2[m], &x);
            let a = spatial_softmax(&e);
            let r = attention_pool(&a, &x);
            let z = self.projectors[m].forward(&r);
            let base = m * self.config.proj_dim;
            for (i, &v) in z.iter().enumerate() {
                z_att[base + i] = v;
            }
            heads.push(HeadCache { att1_pre, e, a, r });
        }

        // low-level pooling under the (resized, renormalized) localizer map
        let mut low = Vec::with_capacity(low_maps.len());
        let mut z_low_parts = Vec::with_capacity(low_maps.len());
        for low_map in &low_maps {
            let resize = BilinearResize::new(g.dim(), (low_map.shape()[0], low_map.shape()[1]));
            let u = resize.forward(&g);
            let u_sum = u.sum();
            let gp = u / u_sum;
            z_low_parts.push(attention_pool(&gp, low_map));
            low.push(LowCache { u_sum, gp });
        }
        let z_low_len: usize = z_low_parts.iter().map(|p| p.len()).sum();
        let mut z_low = Array1::zeros(z_low_len);
        let mut offset = 0;
        for part in &z_low_parts {
            for &v in part.iter() {
                z_low[offset] = v;
                offset += 1;
            }
        }

        let mut feat = Array1::zeros(self.config.feature_len());
        let mut offset = 0;
        for source in [&z_low, &z_rel, &z_att] {
            for &v in source.iter() {
                feat[offset] = v;
                offset += 1;
            }
        }
        let logits = self.classifier.forward(&feat);
        let scores = logits.mapv(sigmoid);

        let output = ModelOutput {
            g: Some(g.clone()),
            e_maps: heads.iter().map(|h| h.e.clone()).collect(),
            a_maps: heads.iter().map(|h| h.a.clone()).collect(),
            z_low,
            z_rel,
            z_att,
            logits,
            scores,
            x_pooled,
        };
        let cache = ForwardCache {
            backbone: backbone_cache,
            low_maps,
            high,
            phi: phi.clone(),
            g1_pre,
            g1,
            gate,
            x,
            rel1_pre,
            g,
            heads,
            low,
            feat,
        };
        Ok((output, cache))
    }

    fn map_1x1_backward(
        conv1: &mut Conv2d,
        conv2: &mut Conv2d,
        x: &Array3<f64>,
        pre: &Array3<f64>,
        grad_map: &Array2<f64>,
    ) -> Array3<f64> {
        let grad3 = grad_map.clone().insert_axis(Axis(2));
        let grad_hidden = conv2.backward(&relu3(pre), &grad3);
        let grad_pre = relu3_backward(pre, &grad_hidden);
        conv1.backward(x, &grad_pre)
    }

    /// Backward pass; accumulates parameter gradients and returns the image
    /// gradient. Gradients on unused outputs for the active mode are ignored.
    pub fn backward(&mut self, cache: &ForwardCache, grads: &OutputGrads) -> Array3<f64> {
        let dim = self.config.proj_dim;
        let mut d_x = Array3::zeros(cache.x.raw_dim());
        let mut d_low: Vec<Array3<f64>> =
            cache.low_maps.iter().map(|m| Array3::zeros(m.raw_dim())).collect();

        let d_feat = grads
            .logits
            .as_ref()
            .map(|dl| self.classifier.backward(&cache.feat, dl));

        if self.config.mode == ModelMode::ResnetBaseline {
            let mut d_xpool = d_feat.unwrap_or_else(|| Array1::zeros(cache.feat.len()));
            if let Some(extra) = &grads.x_pooled {
                d_xpool += extra;
            }
            d_x += &mean_pool_backward(
                (cache.x.shape()[0], cache.x.shape()[1], cache.x.shape()[2]),
                &d_xpool,
            );
            return self.gate_and_backbone_backward(cache, d_x, &d_low);
        }

        let mut d_g: Array2<f64> = grads.g.clone().unwrap_or_else(|| Array2::zeros(cache.g.dim()));

        if let Some(d_feat) = &d_feat {
            // split the classifier-input gradient back into its segments
            let low_lens: Vec<usize> = cache.low_maps.iter().map(|m| m.shape()[2]).collect();
            let mut offset = 0;

            // low-level pooling path
            for (i, &len) in low_lens.iter().enumerate() {
                let d_part = d_feat.slice(ndarray::s![offset..offset + len]).to_owned();
                offset += len;
                let mut d_gp = Array2::zeros(cache.low[i].gp.dim());
                attention_pool_backward(
                    &cache.low[i].gp,
                    &cache.low_maps[i],
                    &d_part,
                    &mut d_gp,
                    &mut d_low[i],
                );
                // renormalization backward: gp = u / sum(u)
                let dot: f64 = (&d_gp * &cache.low[i].gp).sum();
                let d_u = (d_gp - dot) / cache.low[i].u_sum;
                let resize = BilinearResize::new(cache.g.dim(), cache.low[i].gp.dim());
                d_g += &resize.backward(&d_u);
            }

            // localizer pooling path
            let d = cache.x.shape()[2];
            let d_z_rel = d_feat.slice(ndarray::s![offset..offset + d]).to_owned();
            offset += d;
            attention_pool_backward(&cache.g, &cache.x, &d_z_rel, &mut d_g, &mut d_x);

            // attention heads
            for m in 0..self.config.num_heads {
                let d_z = d_feat.slice(ndarray::s![offset..offset + dim]).to_owned();
                offset += dim;
                let d_r = self.projectors[m].backward(&cache.heads[m].r, &d_z);
                let mut d_a = Array2::zeros(cache.heads[m].a.dim());
                attention_pool_backward(&cache.heads[m].a, &cache.x, &d_r, &mut d_a, &mut d_x);
                let mut d_e = spatial_softmax_backward(&cache.heads[m].a, &d_a);
                if let Some(external) = grads.e_maps.get(m) {
                    d_e += external;
                }
                d_x += &Self::map_1x1_backward(
                    &mut self.att1[m],
                    &mut self.att2[m],
                    &cache.x,
                    &cache.heads[m].att1_pre,
                    &d_e,
                );
            }
        } else {
            // heads still receive external pre-softmax gradients
            for m in 0..self.config.num_heads {
                if let Some(external) = grads.e_maps.get(m) {
                    d_x += &Self::map_1x1_backward(
                        &mut self.att1[m],
                        &mut self.att2[m],
                        &cache.x,
                        &cache.heads[m].att1_pre,
                        external,
                    );
                }
            }
        }

        // localizer map gradient through the spatial softmax and its convs
        if d_g.iter().any(|&v| v != 0.0) {
            let d_g_logits = spatial_softmax_backward(&cache.g, &d_g);
            d_x += &Self::map_1x1_backward(
                &mut self.rel1,
                &mut self.rel2,
                &cache.x,
                &cache.rel1_pre,
                &d_g_logits,
            );
        }

        if let Some(d_xpool) = &grads.x_pooled {
            d_x += &mean_pool_backward(
                (cache.x.shape()[0], cache.x.shape()[1], cache.x.shape()[2]),
                d_xpool,
            );
        }

        self.gate_and_backbone_backward(cache, d_x, &d_low)
    }

    fn gate_and_backbone_backward(
        &mut self,
        cache: &ForwardCache,
        d_x: Array3<f64>,
        d_low: &[Array3<f64>],
    ) -> Array3<f64> {
        // X = high * gate (channel broadcast)
        let d = cache.gate.len();
        let mut d_high = d_x;
        let mut d_gate = Array1::zeros(d);
        for h in 0..cache.high.shape()[0] {
            for w in 0..cache.high.shape()[1] {
                for c in 0..d {
                    d_gate[c] += d_high[[h, w, c]] * cache.high[[h, w, c]];
                    d_high[[h, w, c]] *= cache.gate[c];
                }
            }
        }
        let d_gate_logits =
            &d_gate * &cache.gate.mapv(|g| g * (1.0 - g));
        let d_g1 = self.gate_fc2.backward(&cache.g1, &d_gate_logits);
        let d_g1_pre = relu1_backward(&cache.g1_pre, &d_g1);
        // phi is frozen: its gradient is discarded
        let _ = self.gate_fc1.backward(&cache.phi, &d_g1_pre);
        self.backbone.backward(&cache.backbone, &d_high, d_low)
    }
}

impl Params for SconeModel {
    fn visit(&mut self, prefix: &str, f: &mut dyn FnMut(ParamVisit<'_>)) {
        self.backbone.visit(&format!("{prefix}backbone"), f);
        self.gate_fc1.visit(&format!("{prefix}gate.fc1"), f);
        self.gate_fc2.visit(&format!("{prefix}gate.fc2"), f);
        self.rel1.visit(&format!("{prefix}rel.conv1"), f);
        self.rel2.visit(&format!("{prefix}rel.conv2"), f);
        for m in 0..self.att1.len() {
            self.att1[m].visit(&format!("{prefix}att{m}.conv1"), f);
            self.att2[m].visit(&format!("{prefix}att{m}.conv2"), f);
            self.projectors[m].visit(&format!("{prefix}proj{m}"), f);
        }
        self.classifier.visit(&format!("{prefix}classifier"), f);
    }
}

/// Two-layer projection head used during contrastive pretraining; discarded
/// for supervised training and evaluation.
#[derive(Debug, Clone)]
pub struct ProjectionHead {
    pub fc1: Linear,
    pub fc2: Linear,
}

impl ProjectionHead {
    pub fn new(dim_in: usize, hidden: usize, dim_out: usize, rng: &mut ChaCha8Rng) -> Self {
        Self { fc1: Linear::new(dim_in, hidden, rng), fc2: Linear::new(hidden, dim_out, rng) }
    }

    pub fn forward(&self, x: &Array1<f64>) -> (Array1<f64>, Array1<f64>) {
        let pre = self.fc1.forward(x);
        (self.fc2.forward(&relu1(&pre)), pre)
    }

    pub fn backward(&mut self, x: &Array1<f64>, pre: &Array1<f64>, grad_out: &Array1<f64>) -> Array1<f64> {
        let d_hidden = self.fc2.backward(&relu1(pre), grad_out);
        let d_pre = relu1_backward(pre, &d_hidden);
        self.fc1.backward(x, &d_pre)
    }
}

impl Params for ProjectionHead {
    fn visit(&mut self, prefix: &str, f: &mut dyn FnMut(ParamVisit<'_>)) {
        self.fc1.visit(&format!("{prefix}head.fc1"), f);
        self.fc2.visit(&format!("{prefix}head.fc2"), f);
    }
}
