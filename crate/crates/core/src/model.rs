//! Full classifier: backbone, optional hierarchical selection, final layer,
//! LayerNorm and linear head on the class token.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::backbone::{
    encoder_layer, forward_features, AttentionStack, ModelVars, ParamStore, ViTConfig,
    LAYER_NORM_EPS,
};
use crate::error::Result;
use crate::has::{assemble_input, select_all, FusionMode, TokenSelection};
use crate::image::Image;
use crate::tensor::{Tape, Var};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelOptions {
    /// When off, the final layer sees the full token sequence (plain ViT).
    pub has: bool,
    pub fusion: FusionMode,
}

impl Default for ModelOptions {
    fn default() -> Self {
        Self {
            has: true,
            fusion: FusionMode::Pairwise,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Davt {
    pub config: ViTConfig,
    pub options: ModelOptions,
    pub params: ParamStore,
}

/// Everything a forward pass exposes besides the graph itself.
#[derive(Clone, Debug)]
pub struct ForwardOutput {
    /// `[1 × num_classes]`
    pub logits: Var,
    pub attention: AttentionStack,
    /// Present when hierarchical selection is on.
    pub selections: Option<Vec<TokenSelection>>,
    /// Input of the final encoder layer.
    pub final_input: Var,
}

impl Davt {
    /// Fresh parameters drawn from `config.seed`.
    pub fn new(config: ViTConfig, options: ModelOptions) -> Result<Self> {
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let params = ParamStore::init(&config, &mut rng)?;
        Ok(Self {
            config,
            options,
            params,
        })
    }

    pub fn bind(&self, tape: &mut Tape, requires_grad: bool) -> ModelVars {
        ModelVars::bind(tape, &self.params, requires_grad)
    }

    pub fn forward(&self, tape: &mut Tape, vars: &ModelVars, image: &Image) -> Result<ForwardOutput> {
        self.forward_with(tape, vars, image, None)
    }

    /// Forward pass with optionally pinned token selections. Pinning makes
    /// the loss a smooth function of the parameters, which finite-difference
    /// checks rely on.
    pub fn forward_with(
        &self,
        tape: &mut Tape,
        vars: &ModelVars,
        image: &Image,
        pinned: Option<&[TokenSelection]>,
    ) -> Result<ForwardOutput> {
        let features = forward_features(tape, vars, &self.config, image)?;
        let last_layer = &vars.layers[self.config.layers - 1];

        let (final_input, selections) = if self.options.has {
            let selections = match pinned {
                Some(s) => s.to_vec(),
                None => select_all(&features.attention, self.options.fusion)?,
            };
            let zf = assemble_input(tape, &features.states, &selections)?;
            (zf, Some(selections))
        } else {
            (*features.states.last().expect("layers >= 2"), None)
        };

        let (out, _) = encoder_layer(tape, last_layer, final_input, self.config.heads)?;
        let cls = tape.gather_rows(out, &[0])?;
        let cls = tape.layer_norm(cls, vars.norm_gain, vars.norm_bias, LAYER_NORM_EPS)?;
        let logits = tape.linear(cls, vars.head_w, vars.head_b)?;
        Ok(ForwardOutput {
            logits,
            attention: features.attention,
            selections,
            final_input,
        })
    }

    /// Untracked logits for one image.
    pub fn predict_logits(&self, image: &Image) -> Result<Vec<f64>> {
        let mut tape = Tape::new();
        let vars = self.bind(&mut tape, false);
        let out = self.forward(&mut tape, &vars, image)?;
        Ok(tape.value(out.logits).data().to_vec())
    }

    /// Predicted class: first maximal logit.
    pub fn predict(&self, image: &Image) -> Result<usize> {
        Ok(argmax(&self.predict_logits(image)?))
    }
}

pub fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate().skip(1) {
        if v > values[best] {
            best = i;
        }
    }
    best
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny(has: bool) -> Davt {
        let config = ViTConfig {
            image_size: 32,
            patch_size: 8,
            hidden_dim: 16,
            layers: 4,
            heads: 2,
            mlp_dim: 32,
            num_classes: 3,
            seed: 5,
        };
        Davt::new(
            config,
            ModelOptions {
                has,
                ..Default::default()
            },
        )
        .unwrap()
    }

    fn image() -> Image {
        let data = (0..32 * 32 * 3).map(|i| ((i * 37) % 101) as f64 / 100.0).collect();
        Image::new(32, 32, data).unwrap()
    }

    #[test]
    fn logits_have_class_count_and_are_finite() {
        for has in [true, false] {
            let model = tiny(has);
            let logits = model.predict_logits(&image()).unwrap();
            assert_eq!(logits.len(), 3);
            assert!(logits.iter().all(|v| v.is_finite()));
        }
    }

    #[test]
    fn final_input_row_count() {
        let model = tiny(true);
        let mut tape = Tape::new();
        let vars = model.bind(&mut tape, false);
        let out = model.forward(&mut tape, &vars, &image()).unwrap();
        // 1 + K·(L−1) = 1 + 2·3
        assert_eq!(tape.shape(out.final_input), &[7, 16]);
        let sel = out.selections.unwrap();
        assert_eq!(sel.len(), 3);
        assert!(sel.iter().flat_map(|s| &s.indices).all(|&i| (1..17).contains(&i)));

        let plain = tiny(false);
        let mut tape = Tape::new();
        let vars = plain.bind(&mut tape, false);
        let out = plain.forward(&mut tape, &vars, &image()).unwrap();
        assert_eq!(tape.shape(out.final_input), &[17, 16]);
        assert!(out.selections.is_none());
    }

    #[test]
    fn logits_are_deterministic() {
        let a = tiny(true).predict_logits(&image()).unwrap();
        let b = tiny(true).predict_logits(&image()).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn argmax_breaks_ties_low() {
        assert_eq!(argmax(&[1.0, 3.0, 3.0]), 1);
        assert_eq!(argmax(&[2.0]), 0);
    }
}
