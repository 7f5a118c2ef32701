//! The three trainable heads. Everything else is frozen.

use serde::{Deserialize, Serialize};

use crate::backbone::{BackendCaps, FeatureMap};
use crate::error::{Error, Result};
use crate::nn::{Linear, Mlp, MlpCache};
use crate::rng::rng_for;

/// Adapter over semantic features, the shared binary classifier and the
/// parallel IoU head.
///
/// The classifier is a single parameter set: the heatmap path and the
/// semantic-score path both read `cls`, so there is nothing to keep in sync.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Heads {
    /// `C -> C -> C`
    pub adapter: Mlp,
    /// `C -> 1`, emits logits.
    pub cls: Linear,
    /// `2 C_tok -> C_tok -> 1`
    pub par: Mlp,
}

impl Heads {
    /// Adapter and the hidden layer of the IoU head are He-initialised; the
    /// classifier and the IoU head's output layer start at zero so the
    /// untrained model reports a uniform 0.5 heatmap and the decoder's own
    /// IoU predictions.
    pub fn new(feature_channels: usize, token_channels: usize, seed: u64) -> Self {
        let mut rng = rng_for(seed, 0x4EAD);
        let (c, t) = (feature_channels, token_channels);
        Heads {
            adapter: Mlp::new(Linear::he(c, c, &mut rng), Linear::he(c, c, &mut rng)),
            cls: Linear::zeros(c, 1),
            par: Mlp::new(Linear::he(2 * t, t, &mut rng), Linear::zeros(t, 1)),
        }
    }

    pub fn for_caps(caps: &BackendCaps, seed: u64) -> Self {
        Heads::new(caps.feature_channels, caps.token_channels, seed)
    }

    pub fn feature_channels(&self) -> usize {
        self.adapter.inputs()
    }

    pub fn token_channels(&self) -> usize {
        self.par.inputs() / 2
    }

    pub fn zeros_like(&self) -> Self {
        Heads {
            adapter: self.adapter.zeros_like(),
            cls: self.cls.zeros_like(),
            par: self.par.zeros_like(),
        }
    }

    /// Named parameter tensors with their shapes, in a fixed order.
    pub fn tensors(&self) -> Vec<(&'static str, Vec<usize>, &[f64])> {
        let lin = |l: &Linear| (vec![l.outputs, l.inputs], vec![l.outputs]);
        let (aw1, ab1) = lin(&self.adapter.hidden);
        let (aw2, ab2) = lin(&self.adapter.output);
        let (cw, cb) = lin(&self.cls);
        let (pw1, pb1) = lin(&self.par.hidden);
        let (pw2, pb2) = lin(&self.par.output);
        vec![
            ("adapter.hidden.weight", aw1, &self.adapter.hidden.weight),
            ("adapter.hidden.bias", ab1, &self.adapter.hidden.bias),
            ("adapter.output.weight", aw2, &self.adapter.output.weight),
            ("adapter.output.bias", ab2, &self.adapter.output.bias),
            ("cls.weight", cw, &self.cls.weight),
            ("cls.bias", cb, &self.cls.bias),
            ("par.hidden.weight", pw1, &self.par.hidden.weight),
            ("par.hidden.bias", pb1, &self.par.hidden.bias),
            ("par.output.weight", pw2, &self.par.output.weight),
            ("par.output.bias", pb2, &self.par.output.bias),
        ]
    }

    /// Same order as [`Heads::tensors`].
    pub fn tensors_mut(&mut self) -> Vec<&mut Vec<f64>> {
        vec![
            &mut self.adapter.hidden.weight,
            &mut self.adapter.hidden.bias,
            &mut self.adapter.output.weight,
            &mut self.adapter.output.bias,
            &mut self.cls.weight,
            &mut self.cls.bias,
            &mut self.par.hidden.weight,
            &mut self.par.hidden.bias,
            &mut self.par.output.weight,
            &mut self.par.output.bias,
        ]
    }

    pub fn is_finite(&self) -> bool {
        self.tensors()
            .iter()
            .all(|(_, _, v)| v.iter().all(|x| x.is_finite()))
    }

    /// Runs the adapter over every cell of a raw semantic feature map.
    pub fn adapt(&self, raw: &FeatureMap) -> Result<Adapted> {
        if raw.channels != self.feature_channels() {
            return Err(Error::DimensionMismatch(format!(
                "feature map has {} channels, adapter expects {}",
                raw.channels,
                self.feature_channels()
            )));
        }
        let cache = self.adapter.forward_batch(&raw.data);
        let features = FeatureMap {
            height: raw.height,
            width: raw.width,
            channels: raw.channels,
            data: cache.output.clone(),
        };
        Ok(Adapted { features, cache })
    }
}

/// Adapter output plus the activations needed to backpropagate through it.
#[derive(Debug, Clone)]
pub struct Adapted {
    pub features: FeatureMap,
    pub(crate) cache: MlpCache,
}
