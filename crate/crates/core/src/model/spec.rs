use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Family {
    Vit,
    Mixer,
    Cnn,
    /// Bias-free multilayer perceptron over flattened pixels.
    Mlp,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    Gelu,
    Relu,
}

fn default_activation() -> Activation {
    Activation::Gelu
}

/// Architecture description.
///
/// For `mlp`, `num_layers` counts hidden layers of width `hidden_size`; for
/// `cnn` it counts residual blocks of `hidden_size` channels.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelSpec {
    pub family: Family,
    pub image_height: usize,
    pub image_width: usize,
    pub channels: usize,
    #[serde(default)]
    pub patch_size: usize,
    pub hidden_size: usize,
    pub num_layers: usize,
    #[serde(default)]
    pub num_heads: usize,
    #[serde(default)]
    pub mlp_dim: usize,
    #[serde(default)]
    pub token_mlp_dim: usize,
    #[serde(default)]
    pub channel_mlp_dim: usize,
    pub num_classes: usize,
    #[serde(default)]
    pub dropout_rate: f64,
    #[serde(default)]
    pub stochastic_depth_rate: f64,
    #[serde(default)]
    pub softmax_free: bool,
    #[serde(default = "default_activation")]
    pub activation: Activation,
}

impl ModelSpec {
    fn base(family: Family, size: usize, channels: usize, classes: usize) -> Self {
        Self {
            family,
            image_height: size,
            image_width: size,
            channels,
            patch_size: 0,
            hidden_size: 0,
            num_layers: 0,
            num_heads: 0,
            mlp_dim: 0,
            token_mlp_dim: 0,
            channel_mlp_dim: 0,
            num_classes: classes,
            dropout_rate: 0.0,
            stochastic_depth_rate: 0.0,
            softmax_free: false,
            activation: Activation::Gelu,
        }
    }

    #[allow(clippy::too_many_arguments)]
    pub fn vit(size: usize, channels: usize, patch: usize, hidden: usize, layers: usize, heads: usize, mlp_dim: usize, classes: usize) -> Self {
        Self { patch_size: patch, hidden_size: hidden, num_layers: layers, num_heads: heads, mlp_dim, ..Self::base(Family::Vit, size, channels, classes) }
    }

    #[allow(clippy::too_many_arguments)]
    pub fn mixer(size: usize, channels: usize, patch: usize, hidden: usize, layers: usize, token_dim: usize, channel_dim: usize, classes: usize) -> Self {
        Self {
            patch_size: patch,
            hidden_size: hidden,
            num_layers: layers,
            token_mlp_dim: token_dim,
            channel_mlp_dim: channel_dim,
            ..Self::base(Family::Mixer, size, channels, classes)
        }
    }

    pub fn cnn(size: usize, channels: usize, width: usize, blocks: usize, classes: usize) -> Self {
        Self { hidden_size: width, num_layers: blocks, activation: Activation::Relu, ..Self::base(Family::Cnn, size, channels, classes) }
    }

    pub fn mlp(size: usize, channels: usize, hidden: usize, hidden_layers: usize, classes: usize) -> Self {
        Self { hidden_size: hidden, num_layers: hidden_layers, ..Self::base(Family::Mlp, size, channels, classes) }
    }

    /// Named architectures: the ImageNet-scale ViT/Mixer variants at 224x224
    /// with 1000 classes, a CNN baseline, and tiny desk-scale models.
    pub fn preset(name: &str) -> Option<Self> {
        let s = match name {
            "vit-s32" => Self::vit(224, 3, 32, 384, 12, 6, 1536, 1000),
            "vit-s16" => Self::vit(224, 3, 16, 384, 12, 6, 1536, 1000),
            "vit-s14" => Self::vit(224, 3, 14, 384, 12, 6, 1536, 1000),
            "vit-s8" => Self::vit(224, 3, 8, 384, 12, 6, 1536, 1000),
            "vit-b32" => Self::vit(224, 3, 32, 768, 12, 12, 3072, 1000),
            "vit-b16" => Self::vit(224, 3, 16, 768, 12, 12, 3072, 1000),
            "mixer-s32" => Self::mixer(224, 3, 32, 512, 8, 256, 2048, 1000),
            "mixer-s16" => Self::mixer(224, 3, 16, 512, 8, 256, 2048, 1000),
            "mixer-s8" => Self::mixer(224, 3, 8, 512, 8, 256, 2048, 1000),
            "mixer-b32" => Self::mixer(224, 3, 32, 768, 12, 384, 3072, 1000),
            "mixer-b16" => Self::mixer(224, 3, 16, 768, 12, 384, 3072, 1000),
            "mixer-b8" => Self::mixer(224, 3, 8, 768, 12, 384, 3072, 1000),
            "cnn-baseline" => Self::cnn(32, 3, 96, 6, 10),
            "tiny-vit" => Self::vit(8, 3, 4, 8, 1, 2, 32, 2),
            "desk-vit" => Self::vit(16, 3, 4, 16, 2, 2, 32, 4),
            "desk-mixer" => Self::mixer(16, 3, 4, 16, 2, 16, 32, 4),
            "desk-cnn" => Self::cnn(16, 3, 8, 2, 4),
            _ => return None,
        };
        Some(s)
    }

    pub fn num_patches(&self) -> usize {
        if self.patch_size == 0 {
            return 0;
        }
        (self.image_height / self.patch_size) * (self.image_width / self.patch_size)
    }

    /// Tokens seen by attention: patches plus the class token.
    pub fn seq_len(&self) -> usize {
        match self.family {
            Family::Vit => self.num_patches() + 1,
            _ => self.num_patches(),
        }
    }

    pub fn patch_dim(&self) -> usize {
        self.patch_size * self.patch_size * self.channels
    }

    pub fn input_dim(&self) -> usize {
        self.image_height * self.image_width * self.channels
    }

    pub fn validate(&self) -> Result<()> {
        let mut problems = Vec::new();
        if self.image_height == 0 || self.image_width == 0 || self.channels == 0 {
            problems.push("image extents must be positive".to_string());
        }
        if self.num_classes == 0 {
            problems.push("num_classes must be positive".to_string());
        }
        if self.hidden_size == 0 {
            problems.push("hidden_size must be positive".to_string());
        }
        if !(0.0..1.0).contains(&self.dropout_rate) {
            problems.push("dropout_rate must lie in [0, 1)".to_string());
        }
        if !(0.0..1.0).contains(&self.stochastic_depth_rate) {
            problems.push("stochastic_depth_rate must lie in [0, 1)".to_string());
        }
        match self.family {
            Family::Vit | Family::Mixer => {
                if self.patch_size == 0
                    || self.image_height % self.patch_size != 0
                    || self.image_width % self.patch_size != 0
                {
                    problems.push(format!(
                        "patch_size {} must divide image {}x{}",
                        self.patch_size, self.image_height, self.image_width
                    ));
                }
                if self.num_layers == 0 {
                    problems.push("num_layers must be positive".to_string());
                }
            }
            Family::Cnn => {
                if self.num_layers == 0 {
                    problems.push("num_layers must be positive".to_string());
                }
            }
            Family::Mlp => {}
        }
        if self.family == Family::Vit {
            if self.num_heads == 0 || self.hidden_size % self.num_heads != 0 {
                problems.push(format!(
                    "hidden_size {} must be divisible by num_heads {}",
                    self.hidden_size, self.num_heads
                ));
            }
            if self.mlp_dim == 0 {
                problems.push("mlp_dim must be positive".to_string());
            }
        }
        if self.family == Family::Mixer && (self.token_mlp_dim == 0 || self.channel_mlp_dim == 0) {
            problems.push("token_mlp_dim and channel_mlp_dim must be positive".to_string());
        }
        if problems.is_empty() {
            Ok(())
        } else {
            Err(Error::InvalidSpec(problems.join("; ")))
        }
    }

    /// Parameter count from the architecture formulas alone.
    pub fn closed_form_param_count(&self) -> usize {
        let d = self.hidden_size;
        let k = self.num_classes;
        let dense = |i: usize, o: usize| i * o + o;
        let norm = 2 * d;
        match self.family {
            Family::Vit => {
                let embed = dense(self.patch_dim(), d) + d + self.seq_len() * d;
                let block = 2 * norm + 4 * dense(d, d) + dense(d, self.mlp_dim) + dense(self.mlp_dim, d);
                embed + self.num_layers * block + norm + dense(d, k)
            }
            Family::Mixer => {
                let n = self.num_patches();
                let embed = dense(self.patch_dim(), d);
                let token = dense(n, self.token_mlp_dim) + dense(self.token_mlp_dim, n);
                let channel = dense(d, self.channel_mlp_dim) + dense(self.channel_mlp_dim, d);
                embed + self.num_layers * (2 * norm + token + channel) + norm + dense(d, k)
            }
            Family::Cnn => {
                let conv = |cin: usize, cout: usize| 9 * cin * cout + cout;
                conv(self.channels, d) + self.num_layers * 2 * conv(d, d) + dense(d, k)
            }
            Family::Mlp => {
                if self.num_layers == 0 {
                    self.input_dim() * k
                } else {
                    self.input_dim() * d + (self.num_layers - 1) * d * d + d * k
                }
            }
        }
    }
}
