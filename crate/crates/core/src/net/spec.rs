use serde::{Deserialize, Serialize};

use super::activation::ActivationConfig;
use crate::error::{NlcError, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Normalization {
    None,
    BatchNorm,
    LayerNorm,
}

impl Normalization {
    pub fn name(self) -> &'static str {
        match self {
            Normalization::None => "none",
            Normalization::BatchNorm => "batchnorm",
            Normalization::LayerNorm => "layernorm",
        }
    }
}

/// Where a skip connection taps the source layer.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SkipStart {
    AfterLinear,
    AfterNormalization,
}

/// Skip connections bypassing two layers: layer 1 feeds layer 3, 3 feeds 5,
/// and so on up to the output layer. The one ending at the output layer goes
/// through a fixed random projection.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SkipConfig {
    pub enabled: bool,
    pub strength: f64,
    pub start: SkipStart,
}

impl SkipConfig {
    pub fn none() -> Self {
        SkipConfig {
            enabled: false,
            strength: 0.0,
            start: SkipStart::AfterLinear,
        }
    }

    pub fn new(strength: f64, start: SkipStart) -> Self {
        SkipConfig {
            enabled: true,
            strength,
            start,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LayerSpec {
    pub fan_in: usize,
    pub fan_out: usize,
    pub normalization: Normalization,
    /// Absent on the output layer.
    pub activation: Option<ActivationConfig>,
    /// Applied on top of the fan gain `max(1, sqrt(fan_out / fan_in))`.
    pub weight_multiplier: f64,
    pub bias_variance: f64,
    /// Global multiplier also applied to the sampled biases.
    pub bias_multiplier: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ArchitectureSpec {
    pub depth: usize,
    pub width: usize,
    pub d_in: usize,
    pub d_out: usize,
    pub layers: Vec<LayerSpec>,
    pub skip: SkipConfig,
    pub seed: u64,
    pub budget: usize,
}

impl ArchitectureSpec {
    /// Plain multilayer perceptron: `depth` linear layers of width `width`,
    /// every layer but the last followed by `norm` and `act`.
    pub fn mlp(
        d_in: usize,
        width: usize,
        d_out: usize,
        depth: usize,
        norm: Normalization,
        act: ActivationConfig,
    ) -> Self {
        let layers = (0..depth)
            .map(|i| {
                let last = i + 1 == depth;
                LayerSpec {
                    fan_in: if i == 0 { d_in } else { width },
                    fan_out: if last { d_out } else { width },
                    normalization: if last { Normalization::None } else { norm },
                    activation: if last { None } else { Some(act.clone()) },
                    weight_multiplier: 1.0,
                    bias_variance: 0.0,
                    bias_multiplier: 1.0,
                }
            })
            .collect();
        ArchitectureSpec {
            depth,
            width,
            d_in,
            d_out,
            layers,
            skip: SkipConfig::none(),
            seed: 0,
            budget: 0,
        }
    }

    pub fn with_skip(mut self, skip: SkipConfig) -> Self {
        self.skip = skip;
        self
    }

    /// Number of trainable weights and biases.
    pub fn parameter_count(&self) -> usize {
        self.layers.iter().map(|l| l.fan_in * l.fan_out + l.fan_out).sum()
    }

    /// Layer (0-based) whose pre-activation receives the skip that starts
    /// at `source`, if any.
    pub fn skip_target(&self, source: usize) -> Option<usize> {
        if self.skip.enabled && source % 2 == 0 && source + 2 < self.depth {
            Some(source + 2)
        } else {
            None
        }
    }

    /// Source layer of the skip ending at `target`, if any.
    pub fn skip_source(&self, target: usize) -> Option<usize> {
        if target >= 2 && self.skip_target(target - 2) == Some(target) {
            Some(target - 2)
        } else {
            None
        }
    }

    pub fn has_batchnorm(&self) -> bool {
        self.layers
            .iter()
            .any(|l| l.normalization == Normalization::BatchNorm)
    }

    pub fn uses_normalization(&self) -> bool {
        self.layers
            .iter()
            .any(|l| l.normalization != Normalization::None)
    }

    pub fn activation_name(&self) -> Option<&str> {
        self.layers
            .iter()
            .find_map(|l| l.activation.as_ref().map(|a| a.base.as_str()))
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(NlcError::Configuration(m));
        if self.depth == 0 || self.layers.len() != self.depth {
            return bad(format!(
                "depth {} does not match {} layers",
                self.depth,
                self.layers.len()
            ));
        }
        if self.skip.enabled && self.depth % 2 == 0 {
            return bad("skip connections need an odd depth".into());
        }
        if !(0.0..=1.0).contains(&self.skip.strength) {
            return bad(format!("skip strength {} outside [0, 1]", self.skip.strength));
        }
        let mut prev = self.d_in;
        for (i, l) in self.layers.iter().enumerate() {
            let last = i + 1 == self.depth;
            if l.fan_in != prev || l.fan_in == 0 || l.fan_out == 0 {
                return bad(format!("layer {} has inconsistent fan-in", i + 1));
            }
            if last {
                if l.fan_out != self.d_out {
                    return bad("output layer width differs from d_out".into());
                }
                if l.activation.is_some() || l.normalization != Normalization::None {
                    return bad("output layer must be purely linear".into());
                }
            } else if l.activation.is_none() {
                return bad(format!("hidden layer {} has no activation", i + 1));
            }
            if !(l.weight_multiplier > 0.0) || l.bias_variance < 0.0 {
                return bad(format!("layer {} has invalid init scales", i + 1));
            }
            prev = l.fan_out;
        }
        if self.skip.enabled {
            // Identity skips need matching widths.
            for t in 0..self.depth {
                if let Some(s) = self.skip_source(t) {
                    let src_w = self.layers[s].fan_out;
                    if t + 1 < self.depth && self.layers[t].fan_out != src_w {
                        return bad(format!("skip {}->{} joins unequal widths", s + 1, t + 1));
                    }
                }
            }
        }
        Ok(())
    }
}
