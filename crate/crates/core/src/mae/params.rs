use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use super::MaeConfig;

/// Affine map `x·weight + bias` with `weight: [in, out]`, `bias: [out]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Linear<P> {
    pub weight: P,
    pub bias: P,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LayerNormParams<P> {
    pub gain: P,
    pub bias: P,
}

/// Pre-norm transformer block.
#[derive(Debug, Clone, PartialEq)]
pub struct Block<P> {
    pub norm1: LayerNormParams<P>,
    pub query: Linear<P>,
    /// Key projection weight `[embed_dim, embed_dim]`. There is no key
    /// bias: it would shift every score in a softmax row by the same amount
    /// and so never receive gradient.
    pub key: P,
    pub value: Linear<P>,
    pub output: Linear<P>,
    pub norm2: LayerNormParams<P>,
    pub fc1: Linear<P>,
    pub fc2: Linear<P>,
}

/// Every learnable parameter of the autoencoder, generic over what is
/// stored per parameter (tensors, tape handles, layout slots, ...).
///
/// The positional table is fixed and lives on the model, not here.
#[derive(Debug, Clone, PartialEq)]
pub struct MaeParams<P> {
    pub patch_embed: Linear<P>,
    /// `[1, embed_dim]`.
    pub mask_token: P,
    pub encoder: Vec<Block<P>>,
    pub decoder: Vec<Block<P>>,
    /// One per target channel, in config order.
    pub heads: Vec<Linear<P>>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ParamKind {
    Weight { fan_in: usize },
    Bias { fan_in: usize },
    MaskToken,
    NormGain,
    NormBias,
}

/// Name, shape and role of one parameter.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ParamSlot {
    pub name: String,
    pub shape: Vec<usize>,
    pub kind: ParamKind,
}

impl<P> Linear<P> {
    pub fn map<'a, Q>(&'a self, f: &mut impl FnMut(&'a P) -> Q) -> Linear<Q> {
        Linear {
            weight: f(&self.weight),
            bias: f(&self.bias),
        }
    }
    fn push_into(self, out: &mut Vec<P>) {
        out.push(self.weight);
        out.push(self.bias);
    }
    fn push_mut<'a>(&'a mut self, out: &mut Vec<&'a mut P>) {
        out.push(&mut self.weight);
        out.push(&mut self.bias);
    }
}

impl<P> LayerNormParams<P> {
    pub fn map<'a, Q>(&'a self, f: &mut impl FnMut(&'a P) -> Q) -> LayerNormParams<Q> {
        LayerNormParams {
            gain: f(&self.gain),
            bias: f(&self.bias),
        }
    }
    fn push_into(self, out: &mut Vec<P>) {
        out.push(self.gain);
        out.push(self.bias);
    }
    fn push_mut<'a>(&'a mut self, out: &mut Vec<&'a mut P>) {
        out.push(&mut self.gain);
        out.push(&mut self.bias);
    }
}

impl<P> Block<P> {
    pub fn map<'a, Q>(&'a self, f: &mut impl FnMut(&'a P) -> Q) -> Block<Q> {
        Block {
            norm1: self.norm1.map(f),
            query: self.query.map(f),
            key: f(&self.key),
            value: self.value.map(f),
            output: self.output.map(f),
            norm2: self.norm2.map(f),
            fc1: self.fc1.map(f),
            fc2: self.fc2.map(f),
        }
    }
    fn push_into(self, out: &mut Vec<P>) {
        self.norm1.push_into(out);
        self.query.push_into(out);
        out.push(self.key);
        self.value.push_into(out);
        self.output.push_into(out);
        self.norm2.push_into(out);
        self.fc1.push_into(out);
        self.fc2.push_into(out);
    }
    fn push_mut<'a>(&'a mut self, out: &mut Vec<&'a mut P>) {
        self.norm1.push_mut(out);
        self.query.push_mut(out);
        out.push(&mut self.key);
        self.value.push_mut(out);
        self.output.push_mut(out);
        self.norm2.push_mut(out);
        self.fc1.push_mut(out);
        self.fc2.push_mut(out);
    }
}

impl<P> MaeParams<P> {
    /// Applies `f` to every parameter in canonical order.
    pub fn map<'a, Q>(&'a self, mut f: impl FnMut(&'a P) -> Q) -> MaeParams<Q> {
        let f = &mut f;
        MaeParams {
            patch_embed: self.patch_embed.map(f),
            mask_token: f(&self.mask_token),
            encoder: self.encoder.iter().map(|b| b.map(f)).collect(),
            decoder: self.decoder.iter().map(|b| b.map(f)).collect(),
            heads: self.heads.iter().map(|h| h.map(f)).collect(),
        }
    }

    /// Parameters in canonical order.
    pub fn into_vec(self) -> Vec<P> {
        let mut out = Vec::new();
        self.patch_embed.push_into(&mut out);
        out.push(self.mask_token);
        for b in self.encoder {
            b.push_into(&mut out);
        }
        for b in self.decoder {
            b.push_into(&mut out);
        }
        for h in self.heads {
            h.push_into(&mut out);
        }
        out
    }

    pub fn iter(&self) -> impl Iterator<Item = &P> {
        self.map(|p| p).into_vec().into_iter()
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = &mut P> {
        let mut out = Vec::new();
        self.patch_embed.push_mut(&mut out);
        out.push(&mut self.mask_token);
        for b in &mut self.encoder {
            b.push_mut(&mut out);
        }
        for b in &mut self.decoder {
            b.push_mut(&mut out);
        }
        for h in &mut self.heads {
            h.push_mut(&mut out);
        }
        out.into_iter()
    }

    pub fn len(&self) -> usize {
        self.iter().count()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    /// Rebuilds a tree with the structure of `layout` from values given in
    /// canonical order. `None` if the count does not match.
    pub fn from_vec<S>(layout: &MaeParams<S>, values: Vec<P>) -> Option<Self> {
        if values.len() != layout.len() {
            return None;
        }
        let mut it = values.into_iter();
        Some(layout.map(|_| it.next().expect("length checked")))
    }

    /// Pairs two trees of the same structure.
    pub fn zip<'a, Q>(&'a self, other: &'a MaeParams<Q>) -> Option<MaeParams<(&'a P, &'a Q)>> {
        if self.len() != other.len() {
            return None;
        }
        MaeParams::from_vec(self, self.iter().zip(other.iter()).collect())
    }
}

impl MaeParams<ParamSlot> {
    /// Names, shapes and roles of every parameter for `config`.
    pub fn layout(config: &MaeConfig) -> Self {
        let d = config.embed_dim;
        let linear = |name: &str, fan_in: usize, fan_out: usize| Linear {
            weight: ParamSlot {
                name: format!("{name}.weight"),
                shape: vec![fan_in, fan_out],
                kind: ParamKind::Weight { fan_in },
            },
            bias: ParamSlot {
                name: format!("{name}.bias"),
                shape: vec![fan_out],
                kind: ParamKind::Bias { fan_in },
            },
        };
        let norm = |name: &str| LayerNormParams {
            gain: ParamSlot {
                name: format!("{name}.gain"),
                shape: vec![d],
                kind: ParamKind::NormGain,
            },
            bias: ParamSlot {
                name: format!("{name}.bias"),
                shape: vec![d],
                kind: ParamKind::NormBias,
            },
        };
        let block = |prefix: String| Block {
            norm1: norm(&format!("{prefix}.norm1")),
            query: linear(&format!("{prefix}.attn.query"), d, d),
            key: ParamSlot {
                name: format!("{prefix}.attn.key.weight"),
                shape: vec![d, d],
                kind: ParamKind::Weight { fan_in: d },
            },
            value: linear(&format!("{prefix}.attn.value"), d, d),
            output: linear(&format!("{prefix}.attn.output"), d, d),
            norm2: norm(&format!("{prefix}.norm2")),
            fc1: linear(&format!("{prefix}.mlp.fc1"), d, config.mlp_dim()),
            fc2: linear(&format!("{prefix}.mlp.fc2"), config.mlp_dim(), d),
        };
        MaeParams {
            patch_embed: linear("patch_embed", config.patch_size, d),
            mask_token: ParamSlot {
                name: "mask_token".into(),
                shape: vec![1, d],
                kind: ParamKind::MaskToken,
            },
            encoder: (0..config.encoder_layers)
                .map(|i| block(format!("encoder.{i}")))
                .collect(),
            decoder: (0..config.decoder_layers)
                .map(|i| block(format!("decoder.{i}")))
                .collect(),
            heads: (0..config.num_targets())
                .map(|i| linear(&format!("heads.{i}"), d, config.patch_size))
                .collect(),
        }
    }
}
