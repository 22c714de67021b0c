use alloc::format;
use alloc::vec::Vec;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, Uniform};

use super::loss::cosine_loss_on_tape;
use super::{make_mask, Block, Linear, MaeConfig, MaeError, MaeParams, MaskPlan, ParamKind};
use crate::numcore::{NumError, Scalar, Tape, Tensor, Var};
use crate::pipeline::EpochRecord;

const LAYER_NORM_EPS: f64 = 1e-5;
const MASK_TOKEN_STD: f64 = 0.02;

/// Splits an epoch into `seq_len` consecutive patches, `[seq_len, patch_size]`.
pub fn patchify<T: Scalar>(samples: &[f32], config: &MaeConfig) -> Result<Tensor<T>, MaeError> {
    let expected = config.epoch_len();
    if samples.len() != expected {
        return Err(MaeError::WrongLength {
            expected,
            got: samples.len(),
        });
    }
    let data = samples.iter().map(|&v| T::from_f64(v as f64)).collect();
    Ok(Tensor::new(&[config.seq_len, config.patch_size], data)?)
}

/// Concatenates patches back into one signal.
pub fn unpatchify<T: Scalar>(tokens: &Tensor<T>) -> Vec<f32> {
    tokens.data().iter().map(|v| v.as_f64() as f32).collect()
}

/// Fixed sinusoidal table, `[seq_len, dim]`.
pub(crate) fn positional_encoding<T: Scalar>(seq_len: usize, dim: usize) -> Tensor<T> {
    let mut data = Vec::with_capacity(seq_len * dim);
    for t in 0..seq_len {
        for j in 0..dim {
            let pair = (j - j % 2) as f64;
            let angle = t as f64 / libm::pow(10000.0, pair / dim as f64);
            let v = if j % 2 == 0 {
                libm::sin(angle)
            } else {
                libm::cos(angle)
            };
            data.push(T::from_f64(v));
        }
    }
    Tensor::new(&[seq_len, dim], data).expect("positive dims")
}

/// Parameters and positional table recorded on one tape.
#[derive(Debug, Clone)]
pub struct BoundMae {
    pub params: MaeParams<Var>,
    pub pos: Var,
}

/// Handles produced by recording one example.
#[derive(Debug, Clone, Copy)]
pub struct ExampleGraph {
    pub latents: Var,
    /// `[targets, seq_len, patch_size]`.
    pub reconstruction: Var,
    pub loss: Var,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MaeModel<T> {
    pub config: MaeConfig,
    pub pos_encoding: Tensor<T>,
    pub params: MaeParams<Tensor<T>>,
}

impl<T: Scalar> MaeModel<T> {
    /// Fresh parameters drawn from a ChaCha8 generator on stream 0 of `seed`.
    ///
    /// Values are sampled in `f64` and then rounded, so `f32` and `f64`
    /// models with the same seed agree up to rounding.
    pub fn init(config: MaeConfig, seed: u64) -> Result<Self, MaeError> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(0);
        let layout = MaeParams::layout(&config);
        let params = layout.map(|slot| {
            let n: usize = slot.shape.iter().product();
            let values: Vec<T> = match slot.kind {
                ParamKind::Weight { fan_in } | ParamKind::Bias { fan_in } => {
                    let a = 1.0 / libm::sqrt(fan_in as f64);
                    let dist = Uniform::new_inclusive(-a, a).expect("finite bound");
                    (0..n).map(|_| T::from_f64(dist.sample(&mut rng))).collect()
                }
                ParamKind::MaskToken => {
                    let dist = Normal::new(0.0, MASK_TOKEN_STD).expect("positive std");
                    (0..n).map(|_| T::from_f64(dist.sample(&mut rng))).collect()
                }
                ParamKind::NormGain => alloc::vec![T::one(); n],
                ParamKind::NormBias => alloc::vec![T::zero(); n],
            };
            Tensor::new(&slot.shape, values).expect("layout shapes are positive")
        });
        Ok(Self::from_parts(config, params))
    }

    fn from_parts(config: MaeConfig, params: MaeParams<Tensor<T>>) -> Self {
        let pos_encoding = positional_encoding(config.seq_len, config.embed_dim);
        Self {
            config,
            pos_encoding,
            params,
        }
    }

    /// Wraps existing parameters after checking them against the layout.
    pub fn from_params(config: MaeConfig, params: MaeParams<Tensor<T>>) -> Result<Self, MaeError> {
        config.validate()?;
        let layout = MaeParams::layout(&config);
        let pairs = layout.zip(&params).ok_or_else(|| {
            MaeError::InvalidConfig(format!(
                "expected {} parameters, got {}",
                layout.len(),
                params.len()
            ))
        })?;
        for (slot, t) in pairs.iter() {
            if slot.shape != t.shape() {
                return Err(MaeError::InvalidConfig(format!(
                    "parameter {} has shape {:?}, expected {:?}",
                    slot.name,
                    t.shape(),
                    slot.shape
                )));
            }
        }
        Ok(Self::from_parts(config, params))
    }

    pub fn cast<U: Scalar>(&self) -> MaeModel<U> {
        MaeModel {
            config: self.config.clone(),
            pos_encoding: self.pos_encoding.cast(),
            params: self.params.map(|t| t.cast()),
        }
    }

    /// Records every parameter as a leaf of `tape`.
    pub fn bind(&self, tape: &mut Tape<T>, requires_grad: bool) -> BoundMae {
        BoundMae {
            params: self.params.map(|t| tape.leaf(t.clone(), requires_grad)),
            pos: tape.constant(self.pos_encoding.clone()),
        }
    }

    /// Rebuilds bound handles from leaves given in canonical order, as
    /// handed out by [`grad_check`](crate::numcore::grad_check).
    pub fn bind_vars(&self, tape: &mut Tape<T>, vars: &[Var]) -> Result<BoundMae, MaeError> {
        let params = MaeParams::from_vec(&self.params, vars.to_vec()).ok_or_else(|| {
            MaeError::InvalidConfig(format!(
                "{} leaves for {} parameters",
                vars.len(),
                self.params.len()
            ))
        })?;
        Ok(BoundMae {
            params,
            pos: tape.constant(self.pos_encoding.clone()),
        })
    }

    /// Encodes the visible rows of `tokens` (`[seq_len, patch_size]`) into
    /// `[visible, embed_dim]` latents. Masked rows are never read.
    pub fn encode(
        &self,
        tape: &mut Tape<T>,
        bound: &BoundMae,
        tokens: Var,
        plan: &MaskPlan,
    ) -> Result<Var, NumError> {
        let visible = tape.gather_rows(tokens, &plan.visible_indices)?;
        let embedded = linear(tape, visible, &bound.params.patch_embed)?;
        let pos = tape.gather_rows(bound.pos, &plan.visible_indices)?;
        let mut x = tape.add(embedded, pos)?;
        for block in &bound.params.encoder {
            x = self.block(tape, x, block)?;
        }
        Ok(x)
    }

    /// Expands latents to the full sequence with mask tokens, runs the
    /// decoder and applies every head: `[targets, seq_len, patch_size]`.
    pub fn decode(
        &self,
        tape: &mut Tape<T>,
        bound: &BoundMae,
        latents: Var,
        plan: &MaskPlan,
    ) -> Result<Var, NumError> {
        let rows = tape.shape(latents)?[0];
        if rows != plan.visible_indices.len() {
            return Err(NumError::ShapeMismatch {
                op: "decode",
                detail: format!(
                    "{} latents for {} visible tokens",
                    rows,
                    plan.visible_indices.len()
                ),
            });
        }
        let with_token = tape.concat(&[latents, bound.params.mask_token], 0)?;
        let full = tape.gather_rows(with_token, &plan.decoder_sources())?;
        let mut x = tape.add(full, bound.pos)?;
        for block in &bound.params.decoder {
            x = self.block(tape, x, block)?;
        }
        let (s, p) = (self.config.seq_len, self.config.patch_size);
        let mut outs = Vec::with_capacity(bound.params.heads.len());
        for head in &bound.params.heads {
            let y = linear(tape, x, head)?;
            outs.push(tape.reshape(y, &[1, s, p])?);
        }
        tape.concat(&outs, 0)
    }

    fn block(&self, tape: &mut Tape<T>, x: Var, b: &Block<Var>) -> Result<Var, NumError> {
        let h = tape.layer_norm(x, b.norm1.gain, b.norm1.bias, LAYER_NORM_EPS)?;
        let a = self.attention(tape, h, b)?;
        let x = tape.add(x, a)?;
        let h = tape.layer_norm(x, b.norm2.gain, b.norm2.bias, LAYER_NORM_EPS)?;
        let h = linear(tape, h, &b.fc1)?;
        let h = tape.gelu(h)?;
        let h = linear(tape, h, &b.fc2)?;
        tape.add(x, h)
    }

    fn attention(&self, tape: &mut Tape<T>, x: Var, b: &Block<Var>) -> Result<Var, NumError> {
        let heads = self.config.num_heads;
        let dh = self.config.head_dim();
        let q = linear(tape, x, &b.query)?;
        let q = split_heads(tape, q, heads, dh)?;
        let k = tape.matmul(x, b.key)?;
        let k = split_heads(tape, k, heads, dh)?;
        let v = linear(tape, x, &b.value)?;
        let v = split_heads(tape, v, heads, dh)?;
        let kt = tape.transpose(k)?;
        let scores = tape.matmul(q, kt)?;
        let scores = tape.scale(scores, 1.0 / libm::sqrt(dh as f64))?;
        let weights = tape.softmax(scores)?;
        let ctx = tape.matmul(weights, v)?;
        let ctx = merge_heads(tape, ctx, heads * dh)?;
        linear(tape, ctx, &b.output)
    }

    /// Records the full forward pass and loss of one example.
    pub fn record_example(
        &self,
        tape: &mut Tape<T>,
        bound: &BoundMae,
        input: &[f32],
        targets: &[&[f32]],
        plan: &MaskPlan,
    ) -> Result<ExampleGraph, MaeError> {
        if targets.len() != self.config.num_targets() {
            return Err(MaeError::InvalidConfig(format!(
                "{} targets given, model has {} heads",
                targets.len(),
                self.config.num_targets()
            )));
        }
        let tokens = patchify::<T>(input, &self.config)?;
        let tokens = tape.constant(tokens);
        let mut target_data = Vec::with_capacity(targets.len() * self.config.epoch_len());
        for t in targets {
            target_data.extend(patchify::<T>(t, &self.config)?.into_data());
        }
        let shape = [targets.len(), self.config.seq_len, self.config.patch_size];
        let target = tape.constant(Tensor::new(&shape, target_data)?);
        let latents = self.encode(tape, bound, tokens, plan)?;
        let reconstruction = self.decode(tape, bound, latents, plan)?;
        let loss = cosine_loss_on_tape(
            tape,
            reconstruction,
            target,
            self.config.loss_scope,
            &plan.masked_indices,
        )?;
        Ok(ExampleGraph {
            latents,
            reconstruction,
            loss,
        })
    }

    /// Loss of one example and its gradient for every parameter in
    /// canonical order.
    pub fn loss_and_grads(
        &self,
        input: &[f32],
        targets: &[&[f32]],
        plan: &MaskPlan,
    ) -> Result<(f64, Vec<Vec<T>>), MaeError> {
        let mut tape = Tape::new();
        let bound = self.bind(&mut tape, true);
        let graph = self.record_example(&mut tape, &bound, input, targets, plan)?;
        let loss = tape.value(graph.loss)?.data()[0].as_f64();
        let mut grads = tape.backward(graph.loss)?;
        let out = bound
            .params
            .iter()
            .zip(self.params.iter())
            .map(|(&v, t)| {
                grads
                    .take(v)
                    .unwrap_or_else(|| alloc::vec![T::zero(); t.len()])
            })
            .collect();
        Ok((loss, out))
    }

    /// Raw head outputs `[targets, seq_len, patch_size]` for one input epoch.
    pub fn reconstruct(&self, input: &[f32], plan: &MaskPlan) -> Result<Tensor<T>, MaeError> {
        let mut tape = Tape::new();
        let bound = self.bind(&mut tape, false);
        let tokens = patchify::<T>(input, &self.config)?;
        let tokens = tape.constant(tokens);
        let latents = self.encode(&mut tape, &bound, tokens, plan)?;
        let out = self.decode(&mut tape, &bound, latents, plan)?;
        Ok(tape.value(out)?.clone())
    }

    /// Input and target sample slices of each epoch, in config target order.
    pub fn batch_views<'a>(
        &self,
        batch: &[&'a EpochRecord],
    ) -> Result<Vec<(&'a [f32], Vec<&'a [f32]>)>, MaeError> {
        let first = batch.first().ok_or(MaeError::EmptyBatch)?;
        let input_name = first.input.name.as_str();
        let mut out = Vec::with_capacity(batch.len());
        for e in batch {
            if e.input.name != input_name || e.targets.len() != first.targets.len() {
                return Err(MaeError::HeterogeneousBatch);
            }
            let targets = self
                .config
                .target_channels
                .iter()
                .map(|name| {
                    e.target(name)
                        .map(|c| c.samples.as_slice())
                        .ok_or_else(|| MaeError::MissingTarget(name.clone()))
                })
                .collect::<Result<Vec<_>, _>>()?;
            out.push((e.input.samples.as_slice(), targets));
        }
        Ok(out)
    }

    /// Mean loss over the batch with a fresh mask per example (drawn in
    /// batch order from `rng`) and the raw reconstructions.
    pub fn forward_loss<R: Rng + ?Sized>(
        &self,
        batch: &[&EpochRecord],
        rng: &mut R,
    ) -> Result<(f64, Vec<Tensor<T>>), MaeError> {
        let views = self.batch_views(batch)?;
        let mut total = 0.0;
        let mut recs = Vec::with_capacity(views.len());
        for (input, targets) in &views {
            let plan = make_mask(self.config.seq_len, self.config.mask_ratio, rng);
            let mut tape = Tape::new();
            let bound = self.bind(&mut tape, false);
            let g = self.record_example(&mut tape, &bound, input, targets, &plan)?;
            total += tape.value(g.loss)?.data()[0].as_f64();
            recs.push(tape.value(g.reconstruction)?.clone());
        }
        Ok((total / views.len() as f64, recs))
    }

    /// Like [`forward_loss`](Self::forward_loss) but returns gradients
    /// averaged over the batch instead of reconstructions. Per-example
    /// gradients are accumulated in batch order.
    pub fn batch_loss_and_grads<R: Rng + ?Sized>(
        &self,
        batch: &[&EpochRecord],
        rng: &mut R,
    ) -> Result<(f64, Vec<Vec<T>>), MaeError> {
        let views = self.batch_views(batch)?;
        let plans: Vec<MaskPlan> = views
            .iter()
            .map(|_| make_mask(self.config.seq_len, self.config.mask_ratio, rng))
            .collect();
        let mut total = 0.0;
        let mut sum: Vec<Vec<T>> = self
            .params
            .iter()
            .map(|t| alloc::vec![T::zero(); t.len()])
            .collect();
        for ((input, targets), plan) in views.iter().zip(&plans) {
            let (loss, grads) = self.loss_and_grads(input, targets, plan)?;
            total += loss;
            for (acc, g) in sum.iter_mut().zip(grads) {
                for (a, v) in acc.iter_mut().zip(g) {
                    *a += v;
                }
            }
        }
        let n = views.len() as f64;
        let inv = T::from_f64(1.0 / n);
        for acc in &mut sum {
            for a in acc.iter_mut() {
                *a *= inv;
            }
        }
        Ok((total / n, sum))
    }
}

fn linear<T: Scalar>(tape: &mut Tape<T>, x: Var, l: &Linear<Var>) -> Result<Var, NumError> {
    let y = tape.matmul(x, l.weight)?;
    tape.add(y, l.bias)
}

/// `[seq, heads*dh]` → `[heads, seq, dh]`.
fn split_heads<T: Scalar>(
    tape: &mut Tape<T>,
    x: Var,
    heads: usize,
    dh: usize,
) -> Result<Var, NumError> {
    let s = tape.shape(x)?[0];
    let t = tape.transpose(x)?;
    let t = tape.reshape(t, &[heads, dh, s])?;
    tape.transpose(t)
}

/// `[heads, seq, dh]` → `[seq, heads*dh]`.
fn merge_heads<T: Scalar>(tape: &mut Tape<T>, x: Var, dim: usize) -> Result<Var, NumError> {
    let s = tape.shape(x)?[1];
    let t = tape.transpose(x)?;
    let t = tape.reshape(t, &[dim, s])?;
    tape.transpose(t)
}
