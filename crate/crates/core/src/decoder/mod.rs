//! The iterative query decoder.
//!
//! A layer refines every joint of every query in two stages. The appearance
//! stage projects the joint into each view, samples that view's feature map
//! at learned offsets around the projection (projective attention), and
//! predicts a 2D residual plus a confidence. The geometry stage
//! re-triangulates the joint from the corrected 2D positions, weighting each
//! view by its confidence. The per-view attention features are then fused
//! back into the joint's appearance vector:
//! `f' = f_γ(f + f_α(mean_t s_t))`, and a linear classifier `f_β` scores the
//! query from the fused features.

mod attention;
mod decode;
mod forward;
mod maps;
mod query;
mod select;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::{DenseParams, Parameters};
use crate::skeleton::NUM_JOINTS;

pub use attention::{projective_attention, AttentionHead};
pub use decode::{
    decode, decode_batch, snapshot_records, DecodeOptions, DecodeOutput, LayerSnapshot, QueryTrace,
    SnapshotRecord, ViewSnapshot,
};
pub use forward::{
    appearance_step, backward_query, forward_query, fuse_features, geometry_step, score_query,
    DecodeContext, JointRecord, LayerRecord, LayerUpstream, QueryForward, QueryUpstream,
    ViewRecord, ViewStepOutput,
};
pub use maps::{FeatureMap, FeatureMapSet, SampleGeom};
pub use query::{init_queries, CompositionalQuery, EmbeddingTable};
pub use select::{filter_queries, nms};

/// How the 3D joint update is produced.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GeometryMode {
    /// Confidence-weighted triangulation of the refined 2D joints.
    Triangulate,
    /// Learned regressor from fused features and flattened camera
    /// parameters to a 3D offset. Used as the camera-dependent baseline.
    Regress,
}

/// How per-view attention features update the appearance term.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FusionMode {
    /// `f' = f_γ(f + f_α(mean s_t))`
    Mlp,
    /// `f' = f + mean s_t`
    Mean,
}

/// Architecture of a decoder.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ModelConfig {
    /// Number of queries `K`; must be a perfect square.
    pub num_queries: usize,
    pub joints: usize,
    /// Appearance feature dimension `L`.
    pub feature_dim: usize,
    /// Feature-map channel count `C`.
    pub map_channels: usize,
    /// Sampling points per projective attention.
    pub sampling_points: usize,
    /// Hidden width of `g_θ` (three layers).
    pub g_hidden: usize,
    /// Hidden width of `f_γ` (two layers, residual, layer norm).
    pub gamma_hidden: usize,
    pub layers: usize,
    /// One parameter set reused by every layer.
    pub shared_layers: bool,
    pub geometry: GeometryMode,
    pub fusion: FusionMode,
    /// Radius of the initial sampling pattern.
    pub offset_init_px: f64,
    /// Camera slots in the regressor input (zero-padded).
    pub max_cameras: usize,
    pub regressor_hidden: usize,
    /// Regressor outputs are multiplied by this to give millimeters.
    pub regressor_scale_mm: f64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self::desk()
    }
}

impl ModelConfig {
    /// Small configuration that trains in minutes on one core.
    pub fn desk() -> Self {
        Self {
            num_queries: 256,
            joints: NUM_JOINTS,
            feature_dim: 16,
            map_channels: NUM_JOINTS + 4,
            sampling_points: 4,
            g_hidden: 32,
            gamma_hidden: 64,
            layers: 4,
            shared_layers: false,
            geometry: GeometryMode::Triangulate,
            fusion: FusionMode::Mlp,
            offset_init_px: 2.0,
            max_cameras: 10,
            regressor_hidden: 64,
            regressor_scale_mm: 100.0,
        }
    }

    /// Full-size networks: `L = 256`, `g_θ` hidden 256, `f_γ` hidden 1024,
    /// 1024 queries.
    pub fn full() -> Self {
        Self {
            num_queries: 1024,
            feature_dim: 256,
            g_hidden: 256,
            gamma_hidden: 1024,
            regressor_hidden: 256,
            ..Self::desk()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let g = (self.num_queries as f64).sqrt().round() as usize;
        if g * g != self.num_queries || g == 0 {
            return Err(Error::NonSquareK(self.num_queries));
        }
        if self.joints == 0 || self.feature_dim == 0 || self.map_channels == 0 {
            return Err(Error::Config(
                "joints, feature_dim and map_channels must be positive".into(),
            ));
        }
        if self.sampling_points == 0 || self.layers == 0 {
            return Err(Error::Config(
                "sampling_points and layers must be positive".into(),
            ));
        }
        Ok(())
    }

    pub fn regressor_input_dim(&self) -> usize {
        self.feature_dim + 16 * self.max_cameras
    }
}

/// Parameters of one decoder layer.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayerParams {
    pub attention: AttentionHead,
    /// `g_θ`: attention feature → `[Δu_x, Δu_y, confidence logit]`.
    pub g_theta: DenseParams,
    /// `f_α`: single linear map `L → L`.
    pub f_alpha: DenseParams,
    /// `f_γ`: two layers, residual, layer norm.
    pub f_gamma: DenseParams,
    /// `f_β`: linear `L → 2` (positive, negative scores).
    pub f_beta: DenseParams,
    pub regressor: Option<DenseParams>,
}

impl LayerParams {
    pub fn init<R: Rng + ?Sized>(cfg: &ModelConfig, rng: &mut R) -> Self {
        let l = cfg.feature_dim;
        let mut g_theta = DenseParams::mlp(&[l, cfg.g_hidden, cfg.g_hidden, 3], rng);
        g_theta.zero_last_layer();
        let f_alpha = DenseParams::mlp(&[l, l], rng);
        let f_gamma = DenseParams::residual_block(l, cfg.gamma_hidden, rng);
        let mut f_beta = DenseParams::mlp(&[l, 2], rng);
        f_beta.layers[0].linear.bias.fill(0.0);
        let regressor = match cfg.geometry {
            GeometryMode::Triangulate => None,
            GeometryMode::Regress => {
                let mut r =
                    DenseParams::mlp(&[cfg.regressor_input_dim(), cfg.regressor_hidden, 3], rng);
                r.zero_last_layer();
                Some(r)
            }
        };
        Self {
            attention: AttentionHead::init(cfg, rng),
            g_theta,
            f_alpha,
            f_gamma,
            f_beta,
            regressor,
        }
    }
}

impl Parameters for LayerParams {
    fn for_each(&self, prefix: &str, f: &mut dyn FnMut(String, &[usize], &[f64])) {
        let p = |n: &str| crate::nn::join(prefix, n);
        self.attention.for_each(&p("attention"), f);
        self.g_theta.for_each(&p("g_theta"), f);
        self.f_alpha.for_each(&p("f_alpha"), f);
        self.f_gamma.for_each(&p("f_gamma"), f);
        self.f_beta.for_each(&p("f_beta"), f);
        if let Some(r) = &self.regressor {
            r.for_each(&p("regressor"), f);
        }
    }

    fn for_each_mut(&mut self, f: &mut dyn FnMut(&mut [f64])) {
        self.attention.for_each_mut(f);
        self.g_theta.for_each_mut(f);
        self.f_alpha.for_each_mut(f);
        self.f_gamma.for_each_mut(f);
        self.f_beta.for_each_mut(f);
        if let Some(r) = &mut self.regressor {
            r.for_each_mut(f);
        }
    }
}

/// All learnable parameters of a decoder.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecoderParams {
    pub config: ModelConfig,
    pub embeddings: EmbeddingTable,
    /// One entry per layer, or a single entry when layers are shared.
    pub layers: Vec<LayerParams>,
}

impl DecoderParams {
    pub fn init(cfg: &ModelConfig, seed: u64) -> Result<Self> {
        cfg.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut normal = |n: usize| -> Vec<f64> {
            (0..n)
                .map(|_| StandardNormal.sample(&mut rng))
                .collect::<Vec<f64>>()
        };
        let embeddings = EmbeddingTable {
            feature_dim: cfg.feature_dim,
            instance: normal(cfg.num_queries * cfg.feature_dim),
            joint: normal(cfg.joints * cfg.feature_dim),
        };
        let n_sets = if cfg.shared_layers { 1 } else { cfg.layers };
        let layers = (0..n_sets)
            .map(|_| LayerParams::init(cfg, &mut rng))
            .collect();
        Ok(Self {
            config: cfg.clone(),
            embeddings,
            layers,
        })
    }

    /// Parameters used by decoder layer `layer`.
    pub fn layer(&self, layer: usize) -> &LayerParams {
        if self.config.shared_layers {
            &self.layers[0]
        } else {
            &self.layers[layer]
        }
    }

    pub fn layer_mut(&mut self, layer: usize) -> &mut LayerParams {
        if self.config.shared_layers {
            &mut self.layers[0]
        } else {
            &mut self.layers[layer]
        }
    }

    /// Number of layers a decode runs.
    pub fn depth(&self) -> usize {
        self.config.layers
    }

    /// Keeps only the first `n` layers (for evaluating truncated stacks).
    pub fn truncated(&self, n: usize) -> Self {
        let mut p = self.clone();
        p.config.layers = n.min(self.config.layers);
        if !p.config.shared_layers {
            p.layers.truncate(p.config.layers);
        }
        p
    }
}

impl Parameters for DecoderParams {
    fn for_each(&self, prefix: &str, f: &mut dyn FnMut(String, &[usize], &[f64])) {
        self.embeddings
            .for_each(&crate::nn::join(prefix, "embeddings"), f);
        for (i, l) in self.layers.iter().enumerate() {
            l.for_each(&crate::nn::join(prefix, &format!("layer{i}")), f);
        }
    }

    fn for_each_mut(&mut self, f: &mut dyn FnMut(&mut [f64])) {
        self.embeddings.for_each_mut(f);
        for l in &mut self.layers {
            l.for_each_mut(f);
        }
    }
}
