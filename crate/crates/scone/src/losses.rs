//! Training objectives: reweighted BCE with soft-negative missing labels,
//! the localizer mask loss, the attention divergence penalty, and the
//! attribute-aware multi-label supervised contrastive loss. Every loss
//! returns its analytic gradients alongside the value.

use ndarray::{Array1, Array2};
use serde::{Deserialize, Serialize};

use crate::dataset::DatasetStats;
use crate::error::{Result, SconeError};
use crate::taxonomy::{MISSING, NEG, POS};

const SCORE_EPS: f64 = 1e-7;

/// Per-class reweighting triples for RW-BCE.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct LossWeights {
    /// Per-class weight, sums to C.
    pub w: Vec<f64>,
    /// Positive-branch weight, p_c + n_c = 2.
    pub p: Vec<f64>,
    /// Negative-branch weight.
    pub n: Vec<f64>,
    pub alpha: f64,
    /// Weight multiplier for missing labels treated as soft negatives.
    pub missing_weight: f64,
    /// Classes whose zero counts were floored to 1.
    pub floored_classes: Vec<usize>,
}

impl LossWeights {
    /// Uniform weights (plain BCE); missing labels weighted by `missing_weight`.
    pub fn uniform(num_classes: usize, missing_weight: f64) -> Self {
        Self {
            w: vec![1.0; num_classes],
            p: vec![1.0; num_classes],
            n: vec![1.0; num_classes],
            alpha: 0.0,
            missing_weight,
            floored_classes: Vec::new(),
        }
    }
}

/// w_c proportional to (n_pos_c)^-alpha normalized to sum C; p_c, n_c from the
/// same power law jointly normalized to p_c + n_c = 2. Zero counts floor to 1.
pub fn compute_class_weights(
    stats: &DatasetStats,
    alpha: f64,
    missing_weight: f64,
) -> LossWeights {
    let c = stats.n_pos.len();
    let mut floored = Vec::new();
    let mut w = Vec::with_capacity(c);
    let mut p = Vec::with_capacity(c);
    let mut n = Vec::with_capacity(c);
    for cls in 0..c {
        if stats.n_pos[cls] == 0 || stats.n_neg[cls] == 0 {
            floored.push(cls);
        }
        let pos = stats.n_pos[cls].max(1) as f64;
        let neg = stats.n_neg[cls].max(1) as f64;
        w.push(pos.powf(-alpha));
        let a = pos.powf(-alpha);
        let b = neg.powf(-alpha);
        p.push(2.0 * a / (a + b));
        n.push(2.0 * b / (a + b));
    }
    let w_sum: f64 = w.iter().sum();
    for v in w.iter_mut() {
        *v *= c as f64 / w_sum;
    }
    LossWeights { w, p, n, alpha, missing_weight, floored_classes: floored }
}

/// Reweighted BCE over one instance. Returns (loss, d_loss/d_scores).
pub fn rw_bce(scores: &Array1<f64>, labels: &[i8], weights: &LossWeights) -> (f64, Array1<f64>) {
    assert_eq!(scores.len(), labels.len());
    let mut loss = 0.0;
    let mut grad = Array1::zeros(scores.len());
    for c in 0..labels.len() {
        let s = scores[c].clamp(SCORE_EPS, 1.0 - SCORE_EPS);
        let w = weights.w[c];
        match labels[c] {
            POS => {
                loss -= w * weights.p[c] * s.ln();
                grad[c] = -w * weights.p[c] / s;
            }
            NEG => {
                loss -= w * weights.n[c] * (1.0 - s).ln();
                grad[c] = w * weights.n[c] / (1.0 - s);
            }
            MISSING => {
                let mw = weights.missing_weight * weights.n[c] * w;
                loss -= mw * (1.0 - s).ln();
                grad[c] = mw / (1.0 - s);
            }
            other => panic!("invalid label {other}"),
        }
    }
    (loss, grad)
}

/// Localizer loss: attention mass outside the mask, minus a small reward for
/// mass inside. Returns (loss, d_loss/d_G). Mask resolution mismatches are
/// resolved by nearest-neighbor resize to G's grid.
pub fn rel_loss(g_map: &Array2<f64>, mask: &Array2<f64>, lambda_rel: f64) -> (f64, Array2<f64>) {
    let mask = if mask.dim() == g_map.dim() {
        mask.clone()
    } else {
        nearest_resize(mask, g_map.dim())
    };
    let mut loss = 0.0;
    let mut grad = Array2::zeros(g_map.dim());
    for ((idx, &g), &m) in g_map.indexed_iter().zip(mask.iter()) {
        loss += g * (1.0 - m) - lambda_rel * g * m;
        grad[idx] = (1.0 - m) - lambda_rel * m;
    }
    (loss, grad)
}

fn nearest_resize(m: &Array2<f64>, out_shape: (usize, usize)) -> Array2<f64> {
    let (h_in, w_in) = m.dim();
    Array2::from_shape_fn(out_shape, |(y, x)| {
        let sy = ((y as f64 + 0.5) * h_in as f64 / out_shape.0 as f64) as usize;
        let sx = ((x as f64 + 0.5) * w_in as f64 / out_shape.1 as f64) as usize;
        m[[sy.min(h_in - 1), sx.min(w_in - 1)]]
    })
}

/// Pairwise cosine similarity between pre-softmax attention maps, summed over
/// unordered pairs. Returns (loss, per-map gradients). Zero-norm maps
/// contribute zero cosine (and zero gradient) and are counted in the report.
pub fn div_loss(e_maps: &[Array2<f64>]) -> (f64, Vec<Array2<f64>>, usize) {
    let m = e_maps.len();
    let mut grads: Vec<Array2<f64>> = e_maps.iter().map(|e| Array2::zeros(e.dim())).collect();
    let mut loss = 0.0;
    let mut zero_norm_count = 0;
    let norms: Vec<f64> = e_maps.iter().map(|e| e.iter().map(|v| v * v).sum::<f64>().sqrt()).collect();
    for (i, &norm_i) in norms.iter().enumerate() {
        if norm_i == 0.0 {
            zero_norm_count += 1;
        }
        for j in (i + 1)..m {
            let norm_j = norms[j];
            if norm_i == 0.0 || norm_j == 0.0 {
                continue;
            }
            let dot: f64 = e_maps[i].iter().zip(e_maps[j].iter()).map(|(a, b)| a * b).sum();
            let cos = dot / (norm_i * norm_j);
            loss += cos;
            // d cos/d a = b/(|a||b|) - cos * a/|a|^2
            for ((ga, &a), &b) in grads[i].iter_mut().zip(e_maps[i].iter()).zip(e_maps[j].iter()) {
                *ga += b / (norm_i * norm_j) - cos * a / (norm_i * norm_i);
            }
            for ((gb, &b), &a) in grads[j].iter_mut().zip(e_maps[j].iter()).zip(e_maps[i].iter()) {
                *gb += a / (norm_i * norm_j) - cos * b / (norm_j * norm_j);
            }
        }
    }
    (loss, grads, zero_norm_count)
}

/// Scalar combination of the per-batch loss components.
#[derive(Debug, Clone, Copy, Default, Serialize, Deserialize)]
pub struct LossComponents {
    pub bce: f64,
    pub rel: f64,
    pub div: f64,
    pub sup: f64,
}

pub fn total_loss(
    components: &LossComponents,
    lambda_div: f64,
    lambda_sup: f64,
    joint_supcon: bool,
) -> f64 {
    let mut total = components.bce + components.rel + lambda_div * components.div;
    if joint_supcon {
        total += lambda_sup * components.sup;
    }
    total
}

/// Attribute-aware SupCon configuration: one linear probe per class mapping
/// the shared embedding into a class-specific unit-sphere space.
#[derive(Debug, Clone)]
pub struct SupConConfig {
    /// One (embed_dim x embed_dim) matrix per class, initialized to identity.
    pub a_matrices: Vec<Array2<f64>>,
    pub temperature: f64,
}

impl SupConConfig {
    pub fn identity(num_classes: usize, embed_dim: usize, temperature: f64) -> Result<Self> {
        if temperature <= 0.0 {
            return Err(SconeError::InvalidConfig("temperature must be > 0".into()));
        }
        Ok(Self {
            a_matrices: (0..num_classes).map(|_| Array2::eye(embed_dim)).collect(),
            temperature,
        })
    }
}

/// Value and gradients of the multi-label SupCon loss.
pub struct SupConResult {
    pub loss: f64,
    pub grad_embeddings: Vec<Array1<f64>>,
    pub grad_a_matrices: Vec<Array2<f64>>,
}

/// Multi-label supervised contrastive loss over a batch of embeddings with
/// paired views. For each anchor i and positive attribute c, contrasts the
/// class-projected unit embeddings of samples sharing c against all others.
pub fn supcon_multilabel(
    embeddings: &[Array1<f64>],
    labels: &[Vec<i8>],
    cfg: &SupConConfig,
) -> Result<SupConResult> {
    if cfg.temperature <= 0.0 {
        return Err(SconeError::InvalidConfig("temperature must be > 0".into()));
    }
    assert_eq!(embeddings.len(), labels.len());
    let batch = embeddings.len();
    let num_classes = cfg.a_matrices.len();
    let tau = cfg.temperature;

    let mut loss = 0.0;
    let mut grad_z: Vec<Array1<f64>> =
        embeddings.iter().map(|z| Array1::zeros(z.len())).collect();
    let mut grad_a: Vec<Array2<f64>> =
        cfg.a_matrices.iter().map(|a| Array2::zeros(a.dim())).collect();

    for c in 0..num_classes {
        let members: Vec<usize> = (0..batch).filter(|&i| labels[i][c] == POS).collect();
        if members.len() < 2 {
            // every P(i, c) is empty for this class
            continue;
        }
        // class-projected unit embeddings for the whole batch
        let mut raw = Vec::with_capacity(batch);
        let mut unit = Vec::with_capacity(batch);
        for z in embeddings {
            let u = cfg.a_matrices[c].dot(z);
            let norm = u.dot(&u).sqrt().max(1e-12);
            unit.push(&u / norm);
            raw.push((u, norm));
        }
        // gradient w.r.t. the unit embeddings, accumulated over anchors
        let mut grad_unit: Vec<Array1<f64>> =
            unit.iter().map(|u| Array1::zeros(u.len())).collect();
        for &i in &members {
            let p_count = (members.len() - 1) as f64;
            // softmax over j != i of s_ij / tau
            let sims: Vec<f64> = (0..batch)
                .map(|j| if j == i { f64::NEG_INFINITY } else { unit[i].dot(&unit[j]) / tau })
                .collect();
            let max_sim = sims.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let exp_sum: f64 = sims
                .iter()
                .map(|&s| if s.is_finite() { (s - max_sim).exp() } else { 0.0 })
                .sum();
            let lse = max_sim + exp_sum.ln();
            for &p in &members {
                if p == i {
                    continue;
                }
                loss -= (sims[p] - lse) / p_count;
            }
            for j in 0..batch {
                if j == i {
                    continue;
                }
                let q = (sims[j] - lse).exp();
                let in_p = if members.contains(&j) && j != i { 1.0 } else { 0.0 };
                let coeff = (q - in_p / p_count) / tau;
                if coeff == 0.0 {
                    continue;
                }
                grad_unit[i].scaled_add(coeff, &unit[j]);
                grad_unit[j].scaled_add(coeff, &unit[i]);
            }
        }
        // backprop unit normalization, then the class probe
        for j in 0..batch {
            let (_, norm) = &raw[j];
            let g = &grad_unit[j];
            if g.iter().all(|&v| v == 0.0) {
                continue;
            }
            let dot = g.dot(&unit[j]);
            let grad_raw = (g - &(&unit[j] * dot)) / *norm;
            for (row, &gr) in grad_raw.iter().enumerate() {
                if gr == 0.0 {
                    continue;
                }
                for (col, &zv) in embeddings[j].iter().enumerate() {
                    grad_a[c][[row, col]] += gr * zv;
                }
            }
            grad_z[j] += &cfg.a_matrices[c].t().dot(&grad_raw);
        }
    }

    Ok(SupConResult { loss, grad_embeddings: grad_z, grad_a_matrices: grad_a })
}
