//! Minimal pre-LayerNorm ViT encoder.
//!
//! [`forward_features`] patchifies an image and runs the first `L − 1`
//! encoder layers, recording every layer's hidden tokens and per-head
//! attention probabilities. The last layer is applied by the caller (see
//! [`crate::model`]), either on the full token sequence or on the
//! hierarchically selected one.

use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::image::{Image, CHANNELS};
use crate::tensor::{Tape, Tensor, Var};

pub const LAYER_NORM_EPS: f64 = 1e-6;

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ViTConfig {
    pub image_size: usize,
    pub patch_size: usize,
    pub hidden_dim: usize,
    pub layers: usize,
    pub heads: usize,
    pub mlp_dim: usize,
    pub num_classes: usize,
    pub seed: u64,
}

impl Default for ViTConfig {
    /// Desk-scale configuration.
    fn default() -> Self {
        Self {
            image_size: 64,
            patch_size: 8,
            hidden_dim: 64,
            layers: 6,
            heads: 4,
            mlp_dim: 128,
            num_classes: 4,
            seed: 0,
        }
    }
}

impl ViTConfig {
    /// ViT-B/16 at 448² input.
    pub fn vit_b16(num_classes: usize) -> Self {
        Self {
            image_size: 448,
            patch_size: 16,
            hidden_dim: 768,
            layers: 12,
            heads: 12,
            mlp_dim: 3072,
            num_classes,
            seed: 0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |msg: String| Err(Error::Config(msg));
        if self.patch_size == 0 || self.image_size == 0 {
            return fail("image_size and patch_size must be positive".into());
        }
        if !self.image_size.is_multiple_of(self.patch_size) {
            return fail(format!(
                "image_size {} not divisible by patch_size {}",
                self.image_size, self.patch_size
            ));
        }
        if self.heads == 0 || !self.hidden_dim.is_multiple_of(self.heads) {
            return fail(format!(
                "hidden_dim {} not divisible by heads {}",
                self.hidden_dim, self.heads
            ));
        }
        if self.layers < 2 {
            return fail(format!("layers must be >= 2, got {}", self.layers));
        }
        if self.num_classes < 2 {
            return fail(format!("num_classes must be >= 2, got {}", self.num_classes));
        }
        if self.mlp_dim == 0 {
            return fail("mlp_dim must be positive".into());
        }
        Ok(())
    }

    /// Patches per side, `G`.
    pub fn grid(&self) -> usize {
        self.image_size / self.patch_size
    }

    /// Patch tokens, `N = G²`.
    pub fn num_patches(&self) -> usize {
        self.grid() * self.grid()
    }

    /// `N + 1`, class token included.
    pub fn num_tokens(&self) -> usize {
        self.num_patches() + 1
    }

    pub fn head_dim(&self) -> usize {
        self.hidden_dim / self.heads
    }

    pub fn patch_dim(&self) -> usize {
        self.patch_size * self.patch_size * CHANNELS
    }
}

/// Ordered, named parameter tensors. Order is fixed by the config and is the
/// order used for binding, optimisation and serialisation.
#[derive(Clone, Debug, PartialEq)]
pub struct ParamStore {
    entries: Vec<(String, Tensor)>,
}

impl ParamStore {
    pub fn from_entries(entries: Vec<(String, Tensor)>) -> Self {
        Self { entries }
    }

    pub fn init(config: &ViTConfig, rng: &mut ChaCha8Rng) -> Result<Self> {
        config.validate()?;
        let d = config.hidden_dim;
        let mut entries = Vec::new();
        let mut push = |name: String, t: Tensor| entries.push((name, t));

        push("patch.weight".into(), trunc_normal(rng, &[config.patch_dim(), d], config.patch_dim()));
        push("patch.bias".into(), Tensor::zeros(&[d]));
        push("cls".into(), Tensor::zeros(&[1, d]));
        push("pos".into(), trunc_normal(rng, &[config.num_tokens(), d], d));
        for l in 0..config.layers {
            let p = format!("layer{l}");
            push(format!("{p}.ln1.gain"), Tensor::full(&[d], 1.0));
            push(format!("{p}.ln1.bias"), Tensor::zeros(&[d]));
            push(format!("{p}.qkv.weight"), trunc_normal(rng, &[d, 3 * d], d));
            push(format!("{p}.qkv.bias"), Tensor::zeros(&[3 * d]));
            push(format!("{p}.proj.weight"), trunc_normal(rng, &[d, d], d));
            push(format!("{p}.proj.bias"), Tensor::zeros(&[d]));
            push(format!("{p}.ln2.gain"), Tensor::full(&[d], 1.0));
            push(format!("{p}.ln2.bias"), Tensor::zeros(&[d]));
            push(format!("{p}.fc1.weight"), trunc_normal(rng, &[d, config.mlp_dim], d));
            push(format!("{p}.fc1.bias"), Tensor::zeros(&[config.mlp_dim]));
            push(format!("{p}.fc2.weight"), trunc_normal(rng, &[config.mlp_dim, d], config.mlp_dim));
            push(format!("{p}.fc2.bias"), Tensor::zeros(&[d]));
        }
        push("norm.gain".into(), Tensor::full(&[d], 1.0));
        push("norm.bias".into(), Tensor::zeros(&[d]));
        push("head.weight".into(), trunc_normal(rng, &[d, config.num_classes], d));
        push("head.bias".into(), Tensor::zeros(&[config.num_classes]));
        Ok(Self { entries })
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn entries(&self) -> &[(String, Tensor)] {
        &self.entries
    }

    pub fn tensors(&self) -> impl Iterator<Item = &Tensor> {
        self.entries.iter().map(|(_, t)| t)
    }

    pub fn tensors_mut(&mut self) -> impl Iterator<Item = &mut Tensor> {
        self.entries.iter_mut().map(|(_, t)| t)
    }

    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.entries.iter().find(|(n, _)| n == name).map(|(_, t)| t)
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Tensor> {
        self.entries.iter_mut().find(|(n, _)| n == name).map(|(_, t)| t)
    }

    pub fn num_scalars(&self) -> usize {
        self.tensors().map(Tensor::numel).sum()
    }

    /// Checks names and shapes against a freshly initialised layout.
    pub fn check_layout(&self, config: &ViTConfig) -> Result<()> {
        let mut rng = rand::SeedableRng::seed_from_u64(0);
        let reference = ParamStore::init(config, &mut rng)?;
        if reference.len() != self.len() {
            return Err(Error::Config(format!(
                "parameter count {} does not match config layout {}",
                self.len(),
                reference.len()
            )));
        }
        for ((n, t), (rn, rt)) in self.entries.iter().zip(&reference.entries) {
            if n != rn || t.shape() != rt.shape() {
                return Err(Error::Config(format!(
                    "parameter {n} {:?} does not match expected {rn} {:?}",
                    t.shape(),
                    rt.shape()
                )));
            }
        }
        Ok(())
    }
}

/// Truncated normal at ±2σ with σ = 1/√fan_in.
fn trunc_normal(rng: &mut ChaCha8Rng, shape: &[usize], fan_in: usize) -> Tensor {
    let std = (fan_in as f64).sqrt().recip();
    let n: usize = shape.iter().product();
    let data = (0..n)
        .map(|_| loop {
            let z: f64 = StandardNormal.sample(rng);
            if z.abs() <= 2.0 {
                break z * std;
            }
        })
        .collect();
    Tensor::new(shape, data).expect("shape product matches")
}

#[derive(Clone, Copy, Debug)]
pub struct LayerVars {
    pub ln1_gain: Var,
    pub ln1_bias: Var,
    pub qkv_w: Var,
    pub qkv_b: Var,
    pub proj_w: Var,
    pub proj_b: Var,
    pub ln2_gain: Var,
    pub ln2_bias: Var,
    pub fc1_w: Var,
    pub fc1_b: Var,
    pub fc2_w: Var,
    pub fc2_b: Var,
}

/// Parameters registered as tape leaves, in [`ParamStore`] order.
#[derive(Clone, Debug)]
pub struct ModelVars {
    pub all: Vec<Var>,
    pub patch_w: Var,
    pub patch_b: Var,
    pub cls: Var,
    pub pos: Var,
    pub layers: Vec<LayerVars>,
    pub norm_gain: Var,
    pub norm_bias: Var,
    pub head_w: Var,
    pub head_b: Var,
}

impl ModelVars {
    pub fn bind(tape: &mut Tape, params: &ParamStore, requires_grad: bool) -> Self {
        let all: Vec<Var> = params
            .tensors()
            .map(|t| tape.leaf(t.clone(), requires_grad))
            .collect();
        let mut it = all.iter().copied();
        let mut next = || it.next().expect("parameter layout");
        let patch_w = next();
        let patch_b = next();
        let cls = next();
        let pos = next();
        let n_layers = (params.len() - 8) / 12;
        let layers = (0..n_layers)
            .map(|_| LayerVars {
                ln1_gain: next(),
                ln1_bias: next(),
                qkv_w: next(),
                qkv_b: next(),
                proj_w: next(),
                proj_b: next(),
                ln2_gain: next(),
                ln2_bias: next(),
                fc1_w: next(),
                fc1_b: next(),
                fc2_w: next(),
                fc2_b: next(),
            })
            .collect();
        let norm_gain = next();
        let norm_bias = next();
        let head_w = next();
        let head_b = next();
        Self {
            all,
            patch_w,
            patch_b,
            cls,
            pos,
            layers,
            norm_gain,
            norm_bias,
            head_w,
            head_b,
        }
    }
}

/// Per-layer attention probabilities `a_l`, each `[K × (N+1) × (N+1)]`.
/// Index 0 holds layer 1.
#[derive(Clone, Debug, PartialEq)]
pub struct AttentionStack {
    pub layers: Vec<Tensor>,
}

impl AttentionStack {
    pub fn num_layers(&self) -> usize {
        self.layers.len()
    }

    pub fn heads(&self) -> usize {
        self.layers.first().map_or(0, |t| t.shape()[0])
    }

    pub fn tokens(&self) -> usize {
        self.layers.first().map_or(0, |t| t.shape()[1])
    }

    /// Row `row` of head `head` in layer index `layer` (0-based).
    pub fn row(&self, layer: usize, head: usize, row: usize) -> &[f64] {
        head_row(&self.layers[layer], head, row)
    }
}

pub(crate) fn head_row(a: &Tensor, head: usize, row: usize) -> &[f64] {
    let t = a.shape()[1];
    let start = (head * t + row) * t;
    &a.data()[start..start + t]
}

/// Non-overlapping `P×P×3` patches in raster order, each flattened
/// row-major with channels innermost: `[N × P·P·3]`.
pub fn patchify(image: &Image, patch: usize) -> Result<Tensor> {
    if !image.height().is_multiple_of(patch) || !image.width().is_multiple_of(patch) {
        return Err(Error::InvalidArgument(format!(
            "{}x{} image not divisible into {patch}x{patch} patches",
            image.height(),
            image.width()
        )));
    }
    let (gh, gw) = (image.height() / patch, image.width() / patch);
    let dim = patch * patch * CHANNELS;
    let mut data = Vec::with_capacity(gh * gw * dim);
    let row_len = image.width() * CHANNELS;
    for pr in 0..gh {
        for pc in 0..gw {
            for y in 0..patch {
                let start = (pr * patch + y) * row_len + pc * patch * CHANNELS;
                data.extend_from_slice(&image.data()[start..start + patch * CHANNELS]);
            }
        }
    }
    Tensor::new(&[gh * gw, dim], data)
}

/// Patch projection of centred pixels, class token prepended, position
/// embeddings added.
pub fn patch_embed(
    tape: &mut Tape,
    vars: &ModelVars,
    config: &ViTConfig,
    image: &Image,
) -> Result<Var> {
    if image.height() != config.image_size || image.width() != config.image_size {
        return Err(Error::shape(
            "patch_embed",
            &[image.height(), image.width()],
            &[config.image_size, config.image_size],
        ));
    }
    // Pixels enter the projection centred on zero, in [-1, 1].
    let mut patches = patchify(image, config.patch_size)?;
    for v in patches.data_mut() {
        *v = 2.0 * *v - 1.0;
    }
    let patches = tape.constant(patches);
    let projected = tape.linear(patches, vars.patch_w, vars.patch_b)?;
    let tokens = tape.concat_rows(&[vars.cls, projected])?;
    tape.add(tokens, vars.pos)
}

/// One pre-LayerNorm block: `x + MSA(LN(x))`, then `+ MLP(LN(·))`.
/// Returns the new tokens and the per-head attention probabilities `[K×T×T]`.
pub fn encoder_layer(
    tape: &mut Tape,
    layer: &LayerVars,
    tokens: Var,
    heads: usize,
) -> Result<(Var, Tensor)> {
    let (t, d) = tape.value(tokens).dims2()?;
    if heads == 0 || d % heads != 0 {
        return Err(Error::shape("encoder_layer", &[t, d], &[heads]));
    }
    let dh = d / heads;
    let scale = 1.0 / (dh as f64).sqrt();

    let h = tape.layer_norm(tokens, layer.ln1_gain, layer.ln1_bias, LAYER_NORM_EPS)?;
    let qkv = tape.linear(h, layer.qkv_w, layer.qkv_b)?;
    let mut head_outputs = Vec::with_capacity(heads);
    let mut attention = Vec::with_capacity(heads * t * t);
    for k in 0..heads {
        let q = tape.slice_cols(qkv, k * dh, (k + 1) * dh)?;
        let key = tape.slice_cols(qkv, d + k * dh, d + (k + 1) * dh)?;
        let v = tape.slice_cols(qkv, 2 * d + k * dh, 2 * d + (k + 1) * dh)?;
        let scores = tape.matmul_nt(q, key)?;
        let scores = tape.scale(scores, scale)?;
        let probs = tape.softmax(scores, 1)?;
        attention.extend_from_slice(tape.value(probs).data());
        head_outputs.push(tape.matmul(probs, v)?);
    }
    let merged = tape.concat_cols(&head_outputs)?;
    let attended = tape.linear(merged, layer.proj_w, layer.proj_b)?;
    let x = tape.add(tokens, attended)?;

    let h = tape.layer_norm(x, layer.ln2_gain, layer.ln2_bias, LAYER_NORM_EPS)?;
    let h = tape.linear(h, layer.fc1_w, layer.fc1_b)?;
    let h = tape.gelu(h)?;
    let h = tape.linear(h, layer.fc2_w, layer.fc2_b)?;
    let out = tape.add(x, h)?;
    Ok((out, Tensor::new(&[heads, t, t], attention)?))
}

/// Hidden states `z_1 … z_{L−1}` and attention `a_1 … a_{L−1}`.
#[derive(Clone, Debug)]
pub struct Features {
    pub states: Vec<Var>,
    pub attention: AttentionStack,
}

pub fn forward_features(
    tape: &mut Tape,
    vars: &ModelVars,
    config: &ViTConfig,
    image: &Image,
) -> Result<Features> {
    let mut x = patch_embed(tape, vars, config, image)?;
    let captured = config.layers - 1;
    let mut states = Vec::with_capacity(captured);
    let mut layers = Vec::with_capacity(captured);
    for layer in &vars.layers[..captured] {
        let (next, attn) = encoder_layer(tape, layer, x, config.heads)?;
        states.push(next);
        layers.push(attn);
        x = next;
    }
    Ok(Features {
        states,
        attention: AttentionStack { layers },
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};

    fn tiny() -> ViTConfig {
        ViTConfig {
            image_size: 32,
            patch_size: 8,
            hidden_dim: 16,
            layers: 4,
            heads: 2,
            mlp_dim: 32,
            num_classes: 3,
            seed: 1,
        }
    }

    fn random_image(size: usize, seed: u64) -> Image {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let data = (0..size * size * 3).map(|_| rng.random::<f64>()).collect();
        Image::new(size, size, data).unwrap()
    }

    #[test]
    fn token_bookkeeping() {
        let full = ViTConfig::vit_b16(200);
        full.validate().unwrap();
        assert_eq!(full.num_patches(), 784);
        assert_eq!(full.num_tokens(), 785);
        let desk = tiny();
        assert_eq!(desk.num_patches(), 16);
        assert_eq!(desk.num_tokens(), 17);
    }

    #[test]
    fn config_validation() {
        let mut c = tiny();
        c.image_size = 30;
        assert!(c.validate().is_err());
        let mut c = tiny();
        c.heads = 3;
        assert!(c.validate().is_err());
        let mut c = tiny();
        c.layers = 1;
        assert!(c.validate().is_err());
        let mut c = tiny();
        c.num_classes = 1;
        assert!(c.validate().is_err());
    }

    #[test]
    fn zero_image_and_projection_give_position_embeddings() {
        let config = tiny();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut params = ParamStore::init(&config, &mut rng).unwrap();
        params.get_mut("patch.weight").unwrap().data_mut().fill(0.0);
        let mut tape = Tape::new();
        let vars = ModelVars::bind(&mut tape, &params, false);
        let image = Image::filled(32, 32, [0.0; 3]);
        let tokens = patch_embed(&mut tape, &vars, &config, &image).unwrap();
        let tokens = tape.value(tokens);
        assert_eq!(tokens.shape(), &[17, 16]);
        let pos = params.get("pos").unwrap();
        for r in 1..17 {
            assert_eq!(tokens.row(r), pos.row(r));
        }
    }

    #[test]
    fn patch_embed_rejects_wrong_size() {
        let config = tiny();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let params = ParamStore::init(&config, &mut rng).unwrap();
        let mut tape = Tape::new();
        let vars = ModelVars::bind(&mut tape, &params, false);
        let image = Image::filled(16, 16, [0.0; 3]);
        assert!(patch_embed(&mut tape, &vars, &config, &image).is_err());
    }

    #[test]
    fn patchify_raster_order() {
        let mut data = Vec::new();
        for r in 0..4 {
            for c in 0..4 {
                data.extend_from_slice(&[(r * 4 + c) as f64, 0.0, 0.0]);
            }
        }
        let img = Image::new(4, 4, data).unwrap();
        let p = patchify(&img, 2).unwrap();
        assert_eq!(p.shape(), &[4, 12]);
        let reds: Vec<f64> = p.row(1).iter().step_by(3).copied().collect();
        assert_eq!(reds, vec![2.0, 3.0, 6.0, 7.0]);
    }

    #[test]
    fn forward_features_shapes_and_stochastic_rows() {
        let config = tiny();
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let params = ParamStore::init(&config, &mut rng).unwrap();
        let mut tape = Tape::new();
        let vars = ModelVars::bind(&mut tape, &params, false);
        let f = forward_features(&mut tape, &vars, &config, &random_image(32, 9)).unwrap();
        assert_eq!(f.states.len(), 3);
        assert_eq!(f.attention.num_layers(), 3);
        for s in &f.states {
            assert_eq!(tape.shape(*s), &[17, 16]);
        }
        for l in 0..3 {
            for k in 0..2 {
                for r in 0..17 {
                    let row = f.attention.row(l, k, r);
                    assert!(row.iter().all(|&v| v >= 0.0));
                    assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-9);
                }
            }
        }
    }

    #[test]
    fn dominant_logit_gives_near_one_hot_attention() {
        // Every query is e0 (via the bias); head 0's first key dimension
        // reads LN(x)[0] scaled by 400. Only token 5 has a nonzero input
        // (its position embedding), so its key dominates row 0.
        let config = tiny();
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let mut params = ParamStore::init(&config, &mut rng).unwrap();
        let d = config.hidden_dim;
        let qkv = params.get_mut("layer0.qkv.weight").unwrap();
        qkv.data_mut().fill(0.0);
        qkv.data_mut()[d] = 400.0;
        let b = params.get_mut("layer0.qkv.bias").unwrap();
        b.data_mut().fill(0.0);
        b.data_mut()[0] = 1.0;
        let pos = params.get_mut("pos").unwrap();
        pos.data_mut().fill(0.0);
        pos.data_mut()[5 * d] = 1.0;
        params.get_mut("patch.weight").unwrap().data_mut().fill(0.0);
        let mut tape = Tape::new();
        let vars = ModelVars::bind(&mut tape, &params, false);
        let f = forward_features(&mut tape, &vars, &config, &Image::filled(32, 32, [0.5; 3]))
            .unwrap();
        let row = f.attention.row(0, 0, 0);
        assert!(row[5] > 0.999, "{row:?}");
    }

    #[test]
    fn forward_is_bit_deterministic() {
        let config = tiny();
        let run = || {
            let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
            let params = ParamStore::init(&config, &mut rng).unwrap();
            let mut tape = Tape::new();
            let vars = ModelVars::bind(&mut tape, &params, false);
            let f = forward_features(&mut tape, &vars, &config, &random_image(32, 2)).unwrap();
            let last = *f.states.last().unwrap();
            (tape.value(last).clone(), f.attention)
        };
        assert_eq!(run(), run());
    }

    #[test]
    fn layout_check_detects_mismatch() {
        let config = tiny();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let params = ParamStore::init(&config, &mut rng).unwrap();
        params.check_layout(&config).unwrap();
        let mut other = config.clone();
        other.num_classes = 5;
        assert!(params.check_layout(&other).is_err());
    }
}
