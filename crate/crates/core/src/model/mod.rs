//! The multimodal auto-encoder.
//!
//! Each modality `t` passes through its own Volterra encoder. Latent
//! tensors are flattened channel by channel (row-major inside a channel)
//! and the modalities are concatenated in dataset order, giving the
//! `n x d` matrix `L`. The self-expressive layer re-expresses `L` as
//! `Wᵀ L`, and per-modality decoders map latents back to images.
//!
//! The objective is
//!
//! ```text
//! λ reg(W) + γ/2 Σ_t ‖X(t) − X_r(t)‖² + μ/2 ‖L − Wᵀ L‖²
//! ```

mod checkpoint;
mod preset;

pub use checkpoint::{read_checkpoint, write_checkpoint, CHECKPOINT_MAGIC, FLATTEN_ORDER};
pub use preset::{architecture, preset, Architecture, ModelSpec, PRESET_MODALITIES};

use crate::data::MultiModalDataset;
use crate::error::{Error, Result};
use crate::numerics::{gemm, gram, Matrix, Tensor3};
use crate::selfexpr::{RegKind, SelfExpressiveLayer};
use crate::volterra::VolterraBank;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

/// Weights of the three objective terms.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LossWeights {
    /// Reconstruction weight `γ`.
    pub gamma: f64,
    /// Self-expression weight `μ`.
    pub mu: f64,
    /// Coefficient of the sparsity penalty on `W`.
    pub lambda: f64,
    pub reg: RegKind,
}

impl Default for LossWeights {
    fn default() -> Self {
        LossWeights {
            gamma: 1.0,
            mu: 1.0,
            lambda: 1.0,
            reg: RegKind::L1,
        }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [("gamma", self.gamma), ("mu", self.mu), ("lambda", self.lambda)] {
            if !(v.is_finite() && v >= 0.0) {
                return Err(Error::InvalidInput(format!("{name} must be finite and >= 0, got {v}")));
            }
        }
        Ok(())
    }
}

/// What the decoders read.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DecoderInput {
    /// The encoder latents `L`.
    #[default]
    Latent,
    /// The self-expressed latents `Wᵀ L`.
    SelfExpressed,
}

impl DecoderInput {
    pub fn as_str(&self) -> &'static str {
        match self {
            DecoderInput::Latent => "latent",
            DecoderInput::SelfExpressed => "self-expressed",
        }
    }
}

impl std::str::FromStr for DecoderInput {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "latent" => Ok(DecoderInput::Latent),
            "self-expressed" => Ok(DecoderInput::SelfExpressed),
            other => Err(Error::InvalidInput(format!(
                "unknown decoder input {other:?} (expected latent or self-expressed)"
            ))),
        }
    }
}

/// The objective split into its terms, weights already applied.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct LossParts {
    pub reg: f64,
    pub recon: f64,
    pub selfexpr: f64,
}

impl LossParts {
    pub fn total(&self) -> f64 {
        self.reg + self.recon + self.selfexpr
    }
}

/// Latent codes of a whole dataset.
#[derive(Clone, Debug, PartialEq)]
pub struct LatentBatch {
    /// `L(t)`, one `n x latent_t` matrix per modality.
    pub per_modality: Vec<Matrix>,
    /// The modality latents side by side, `n x d`.
    pub concatenated: Matrix,
}

#[derive(Clone, Debug, PartialEq)]
pub struct VmscModel {
    preset: String,
    seed: u64,
    shapes: Vec<(usize, usize, usize)>,
    encoders: Vec<VolterraBank>,
    decoders: Vec<VolterraBank>,
    selfexpr: SelfExpressiveLayer,
    weights: LossWeights,
    decoder_input: DecoderInput,
}

struct Decoded {
    recon_sq: f64,
    dec_grads: Vec<Vec<f64>>,
    /// Gradient with respect to the decoder inputs, laid out like a row of `L`.
    input_grad: Vec<f64>,
}

impl VmscModel {
    /// Assembles a model from parts. `shapes[t]` is the `(height, width,
    /// channels)` of modality `t`.
    pub fn new(
        shapes: Vec<(usize, usize, usize)>,
        encoders: Vec<VolterraBank>,
        decoders: Vec<VolterraBank>,
        selfexpr: SelfExpressiveLayer,
        weights: LossWeights,
        decoder_input: DecoderInput,
    ) -> Result<Self> {
        if shapes.is_empty() {
            return Err(Error::InvalidInput("model needs at least one modality".into()));
        }
        if encoders.len() != shapes.len() || decoders.len() != shapes.len() {
            return Err(Error::Shape(format!(
                "{} modalities but {} encoders and {} decoders",
                shapes.len(),
                encoders.len(),
                decoders.len()
            )));
        }
        weights.validate()?;
        for (t, ((enc, dec), &(_, _, c))) in encoders.iter().zip(&decoders).zip(&shapes).enumerate() {
            if enc.in_channels() != c {
                return Err(Error::Shape(format!(
                    "encoder {t} reads {} channels, modality has {c}",
                    enc.in_channels()
                )));
            }
            if dec.in_channels() != enc.out_channels() {
                return Err(Error::Shape(format!(
                    "decoder {t} reads {} channels, encoder emits {}",
                    dec.in_channels(),
                    enc.out_channels()
                )));
            }
            if dec.out_channels() != c {
                return Err(Error::Shape(format!(
                    "decoder {t} emits {} channels, modality has {c}",
                    dec.out_channels()
                )));
            }
        }
        Ok(VmscModel {
            preset: "custom".into(),
            seed: 0,
            shapes,
            encoders,
            decoders,
            selfexpr,
            weights,
            decoder_input,
        })
    }

    pub(crate) fn with_origin(mut self, preset: &str, seed: u64) -> Self {
        self.preset = preset.to_string();
        self.seed = seed;
        self
    }

    /// Preset name, or `custom`.
    pub fn preset_name(&self) -> &str {
        &self.preset
    }

    /// Seed the weights were initialized from.
    pub fn init_seed(&self) -> u64 {
        self.seed
    }

    pub fn modality_count(&self) -> usize {
        self.shapes.len()
    }

    pub fn shapes(&self) -> &[(usize, usize, usize)] {
        &self.shapes
    }

    pub fn encoders(&self) -> &[VolterraBank] {
        &self.encoders
    }

    pub fn decoders(&self) -> &[VolterraBank] {
        &self.decoders
    }

    pub fn selfexpr(&self) -> &SelfExpressiveLayer {
        &self.selfexpr
    }

    pub fn selfexpr_mut(&mut self) -> &mut SelfExpressiveLayer {
        &mut self.selfexpr
    }

    pub fn weights(&self) -> &LossWeights {
        &self.weights
    }

    pub fn set_weights(&mut self, weights: LossWeights) -> Result<()> {
        weights.validate()?;
        self.weights = weights;
        Ok(())
    }

    pub fn decoder_input(&self) -> DecoderInput {
        self.decoder_input
    }

    /// Sample count the self-expressive layer was built for.
    pub fn n(&self) -> usize {
        self.selfexpr.n()
    }

    /// Flattened latent width of each modality.
    pub fn latent_widths(&self) -> Vec<usize> {
        self.shapes
            .iter()
            .zip(&self.encoders)
            .map(|(&(h, w, _), e)| h * w * e.out_channels())
            .collect()
    }

    pub fn latent_dim(&self) -> usize {
        self.latent_widths().iter().sum()
    }

    /// The effective coefficient matrix `W`.
    pub fn coefficients(&self) -> Matrix {
        self.selfexpr.effective()
    }

    /// Encoder and decoder weights.
    pub fn bank_param_count(&self) -> usize {
        self.encoders
            .iter()
            .chain(&self.decoders)
            .map(VolterraBank::param_count)
            .sum()
    }

    /// Reported parameter count: bank weights plus trainable coefficients.
    pub fn param_count(&self) -> usize {
        self.bank_param_count() + self.selfexpr.active_param_count()
    }

    /// Length of [`Self::params`]: encoders, then decoders, then the
    /// self-expressive parameters.
    pub fn param_len(&self) -> usize {
        self.bank_param_count() + self.selfexpr.param_len()
    }

    /// Offset of the self-expressive block inside the parameter vector.
    pub fn selfexpr_offset(&self) -> usize {
        self.bank_param_count()
    }

    pub fn params(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.param_len());
        for bank in self.encoders.iter().chain(&self.decoders) {
            out.extend(bank.params());
        }
        out.extend(self.selfexpr.params());
        out
    }

    /// Replaces every parameter; masked coefficients are re-projected to zero.
    pub fn set_params(&mut self, params: &[f64]) -> Result<()> {
        if params.len() != self.param_len() {
            return Err(Error::Shape(format!(
                "model has {} parameters, got {}",
                self.param_len(),
                params.len()
            )));
        }
        let mut at = 0;
        for bank in self.encoders.iter_mut().chain(self.decoders.iter_mut()) {
            let len = bank.param_count();
            bank.set_params(&params[at..at + len])?;
            at += len;
        }
        self.selfexpr.set_params(&params[at..])
    }

    fn check_dataset(&self, data: &MultiModalDataset) -> Result<()> {
        if data.modality_count() != self.shapes.len() {
            return Err(Error::Shape(format!(
                "model has {} modalities, dataset has {}",
                self.shapes.len(),
                data.modality_count()
            )));
        }
        for (t, &shape) in self.shapes.iter().enumerate() {
            if data.n() > 0 && data.shape(t) != shape {
                return Err(Error::Shape(format!(
                    "modality {t} is {:?}, model expects {:?}",
                    data.shape(t),
                    shape
                )));
            }
        }
        Ok(())
    }

    fn check_samples(&self, data: &MultiModalDataset) -> Result<()> {
        if data.n() != self.n() {
            return Err(Error::Shape(format!(
                "self-expressive layer covers {} samples, dataset has {}",
                self.n(),
                data.n()
            )));
        }
        Ok(())
    }

    fn latent_offsets(&self) -> Vec<usize> {
        let mut at = 0;
        self.latent_widths()
            .into_iter()
            .map(|w| {
                let o = at;
                at += w;
                o
            })
            .collect()
    }

    fn encode_matrix(&self, data: &MultiModalDataset) -> Result<Matrix> {
        let t_count = self.shapes.len();
        let rows: Vec<Vec<f64>> = (0..data.n())
            .into_par_iter()
            .map(|i| {
                let mut row = Vec::with_capacity(self.latent_dim());
                for t in 0..t_count {
                    row.extend(self.encoders[t].forward(&data.modality(t).samples[i])?.into_vec());
                }
                Ok(row)
            })
            .collect::<Result<_>>()?;
        let l = Matrix::from_vec(data.n(), self.latent_dim(), rows.concat())?;
        if !l.all_finite() {
            return Err(Error::Numerical("non-finite latent codes".into()));
        }
        Ok(l)
    }

    /// Encodes every sample of every modality.
    pub fn encode_all(&self, data: &MultiModalDataset) -> Result<LatentBatch> {
        self.check_dataset(data)?;
        let concatenated = self.encode_matrix(data)?;
        let offsets = self.latent_offsets();
        let per_modality = self
            .latent_widths()
            .iter()
            .zip(&offsets)
            .map(|(&w, &o)| Matrix::from_fn(data.n(), w, |i, j| concatenated[(i, o + j)]))
            .collect();
        Ok(LatentBatch {
            per_modality,
            concatenated,
        })
    }

    /// Decodes one latent tensor of modality `t`.
    pub fn decode(&self, t: usize, latent: &Tensor3) -> Result<Tensor3> {
        let dec = self
            .decoders
            .get(t)
            .ok_or_else(|| Error::InvalidInput(format!("no modality {t}")))?;
        dec.forward(latent)
    }

    fn latent_tensor(&self, t: usize, row: &[f64], offset: usize) -> Result<Tensor3> {
        let (h, w, _) = self.shapes[t];
        let c = self.encoders[t].out_channels();
        Tensor3::from_vec(h, w, c, row[offset..offset + h * w * c].to_vec())
    }

    /// Runs every decoder on its modality's slice of `source`, returning
    /// squared reconstruction errors and, on request, gradients of
    /// `γ/2 Σ ‖X − X_r‖²`.
    fn decode_all(
        &self,
        data: &MultiModalDataset,
        source: &Matrix,
        gamma: f64,
        want_grad: bool,
    ) -> Result<Vec<Decoded>> {
        let offsets = self.latent_offsets();
        let d = self.latent_dim();
        (0..data.n())
            .into_par_iter()
            .map(|i| {
                let row = source.row(i);
                let mut recon_sq = 0.0;
                let mut dec_grads = Vec::new();
                let mut input_grad = if want_grad { vec![0.0; d] } else { Vec::new() };
                for (t, dec) in self.decoders.iter().enumerate() {
                    let input = self.latent_tensor(t, row, offsets[t])?;
                    let x = &data.modality(t).samples[i];
                    let mut diff = dec.forward(&input)?;
                    for (r, &v) in diff.data_mut().iter_mut().zip(x.data()) {
                        *r -= v;
                    }
                    recon_sq += diff.data().iter().map(|v| v * v).sum::<f64>();
                    if want_grad {
                        let g = dec.backward(&input, &diff.scaled(gamma), true)?;
                        let gi = g.input.expect("input gradient requested");
                        input_grad[offsets[t]..offsets[t] + gi.len()].copy_from_slice(gi.data());
                        dec_grads.push(g.params);
                    }
                }
                Ok(Decoded {
                    recon_sq,
                    dec_grads,
                    input_grad,
                })
            })
            .collect()
    }

    /// Objective value at the model's own weights.
    pub fn loss(&self, data: &MultiModalDataset) -> Result<LossParts> {
        self.loss_with(data, &self.weights)
    }

    pub fn loss_with(&self, data: &MultiModalDataset, weights: &LossWeights) -> Result<LossParts> {
        self.check_dataset(data)?;
        self.check_samples(data)?;
        weights.validate()?;
        let l = self.encode_matrix(data)?;
        let z = self.selfexpr.self_express(&l)?;
        let source = match self.decoder_input {
            DecoderInput::Latent => &l,
            DecoderInput::SelfExpressed => &z,
        };
        let recon_sq: f64 = self
            .decode_all(data, source, weights.gamma, false)?
            .iter()
            .map(|d| d.recon_sq)
            .sum();
        let residual = l.sub(&z)?;
        let parts = LossParts {
            reg: weights.lambda * self.selfexpr.regularizer(weights.reg),
            recon: 0.5 * weights.gamma * recon_sq,
            selfexpr: 0.5 * weights.mu * residual.frobenius_sq(),
        };
        check_parts(&parts)?;
        Ok(parts)
    }

    /// Objective value and its gradient with respect to [`Self::params`].
    pub fn loss_grad(&self, data: &MultiModalDataset) -> Result<(LossParts, Vec<f64>)> {
        self.loss_grad_with(data, &self.weights)
    }

    /// As [`Self::loss_grad`] with overridden term weights.
    pub fn loss_grad_with(
        &self,
        data: &MultiModalDataset,
        weights: &LossWeights,
    ) -> Result<(LossParts, Vec<f64>)> {
        self.loss_grad_split(data, weights, weights)
    }

    /// Gradient of the objective under `optimized` weights, reporting the
    /// loss parts under `reported` weights.
    pub fn loss_grad_split(
        &self,
        data: &MultiModalDataset,
        optimized: &LossWeights,
        reported: &LossWeights,
    ) -> Result<(LossParts, Vec<f64>)> {
        self.check_dataset(data)?;
        self.check_samples(data)?;
        optimized.validate()?;
        reported.validate()?;
        let weights = optimized;
        let n = data.n();
        let l = self.encode_matrix(data)?;
        let w = self.selfexpr.effective();

        let z = match self.decoder_input {
            DecoderInput::Latent => None,
            DecoderInput::SelfExpressed => Some(self.selfexpr.self_express(&l)?),
        };
        let decoded = self.decode_all(data, z.as_ref().unwrap_or(&l), weights.gamma, true)?;
        let recon = 0.5 * reported.gamma * decoded.iter().map(|d| d.recon_sq).sum::<f64>();

        // Gradient of the decoder inputs, n x d.
        let dsrc = Matrix::from_vec(
            n,
            self.latent_dim(),
            decoded.iter().flat_map(|d| d.input_grad.iter().copied()).collect(),
        )?;
        let mut grad_w = Matrix::zeros(n, n);
        let mut grad_l = match &z {
            None => dsrc.clone(),
            Some(_) => {
                // Z = Wᵀ L: dW = L dZᵀ, dL = W dZ.
                gemm(1.0, &l, false, &dsrc, true, 0.0, &mut grad_w)?;
                let mut gl = Matrix::zeros(n, self.latent_dim());
                gemm(1.0, &w, false, &dsrc, false, 0.0, &mut gl)?;
                gl
            }
        };

        // ½‖(I − Wᵀ) L‖² = ½ <L Lᵀ, (I − W)(I − Wᵀ)>.
        let mut selfexpr = 0.0;
        if weights.mu != 0.0 || reported.mu != 0.0 {
            let g = gram(&l);
            let mut iw = w.clone();
            iw.scale(-1.0);
            for i in 0..n {
                iw[(i, i)] += 1.0;
            }
            let m = iw.matmul_t(&iw)?;
            selfexpr = (0.5 * reported.mu * g.dot(&m)).max(0.0);
            if weights.mu != 0.0 {
                gemm(-weights.mu, &g, false, &iw, false, 1.0, &mut grad_w)?;
                gemm(weights.mu, &m, false, &l, false, 1.0, &mut grad_l)?;
            }
        }
        let parts = LossParts {
            reg: reported.lambda * self.selfexpr.regularizer(reported.reg),
            recon,
            selfexpr,
        };
        check_parts(&parts)?;

        let offsets = self.latent_offsets();
        let enc_grads: Vec<Vec<Vec<f64>>> = (0..n)
            .into_par_iter()
            .map(|i| {
                let row = grad_l.row(i);
                self.encoders
                    .iter()
                    .enumerate()
                    .map(|(t, enc)| {
                        let up = self.latent_tensor(t, row, offsets[t])?;
                        Ok(enc.backward(&data.modality(t).samples[i], &up, false)?.params)
                    })
                    .collect::<Result<Vec<_>>>()
            })
            .collect::<Result<_>>()?;

        let mut grad = Vec::with_capacity(self.param_len());
        for (t, enc) in self.encoders.iter().enumerate() {
            let mut acc = vec![0.0; enc.param_count()];
            for sample in &enc_grads {
                add_into(&mut acc, &sample[t]);
            }
            grad.extend(acc);
        }
        for (t, dec) in self.decoders.iter().enumerate() {
            let mut acc = vec![0.0; dec.param_count()];
            for sample in &decoded {
                add_into(&mut acc, &sample.dec_grads[t]);
            }
            grad.extend(acc);
        }
        grad.extend(self.selfexpr.param_grad(&grad_w, weights.reg, weights.lambda)?);
        Ok((parts, grad))
    }
}

fn add_into(acc: &mut [f64], v: &[f64]) {
    for (a, b) in acc.iter_mut().zip(v) {
        *a += b;
    }
}

fn check_parts(parts: &LossParts) -> Result<()> {
    for (name, v) in [
        ("regularization", parts.reg),
        ("reconstruction", parts.recon),
        ("self-expression", parts.selfexpr),
    ] {
        if !v.is_finite() {
            return Err(Error::Numerical(format!("non-finite {name} term ({v})")));
        }
    }
    Ok(())
}
