use super::{DecoderInput, LossWeights, VmscModel};
use crate::data::MultiModalDataset;
use crate::error::{Error, Result};
use crate::numerics::Rng;
use crate::selfexpr::{MaskKind, SelfExpressiveLayer};
use crate::volterra::VolterraBank;

/// Modalities a preset model is built for when no dataset is given.
pub const PRESET_MODALITIES: usize = 5;

/// A named encoder layout and its learning rate.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Architecture {
    pub name: &'static str,
    /// `(channel count, filter size)` groups of every encoder bank.
    pub mix: &'static [(usize, usize)],
    pub learning_rate: f64,
}

const ARL: Architecture = Architecture {
    name: "arl",
    mix: &[(3, 1), (2, 3)],
    learning_rate: 1e-3,
};

const EYB: Architecture = Architecture {
    name: "eyb",
    mix: &[(7, 1), (7, 3), (6, 5)],
    learning_rate: 1e-4,
};

pub fn architecture(name: &str) -> Result<Architecture> {
    match name {
        "arl" => Ok(ARL),
        "eyb" => Ok(EYB),
        other => Err(Error::InvalidInput(format!(
            "unknown preset {other:?} (expected arl or eyb)"
        ))),
    }
}

/// Everything needed to build a freshly initialized model.
#[derive(Clone, Debug, PartialEq)]
pub struct ModelSpec {
    pub preset: String,
    pub shapes: Vec<(usize, usize, usize)>,
    pub n: usize,
    pub mask: MaskKind,
    pub weights: LossWeights,
    pub decoder_input: DecoderInput,
    pub seed: u64,
}

impl ModelSpec {
    /// A spec matching `data`'s modality count, shapes and size.
    pub fn for_dataset(preset: &str, data: &MultiModalDataset) -> Self {
        ModelSpec {
            preset: preset.to_string(),
            shapes: (0..data.modality_count()).map(|t| data.shape(t)).collect(),
            n: data.n(),
            mask: MaskKind::Full,
            weights: LossWeights::default(),
            decoder_input: DecoderInput::Latent,
            seed: 0,
        }
    }

    pub fn build(&self) -> Result<VmscModel> {
        let arch = architecture(&self.preset)?;
        let root = Rng::new(self.seed);
        let mut encoders = Vec::with_capacity(self.shapes.len());
        let mut decoders = Vec::with_capacity(self.shapes.len());
        for (t, &(_, _, c)) in self.shapes.iter().enumerate() {
            if c != 1 {
                return Err(Error::Shape(format!(
                    "preset decoders emit one channel, modality {t} has {c}"
                )));
            }
            encoders.push(VolterraBank::encoder(c, arch.mix, &mut root.derive(10 + t as u64))?);
            decoders.push(VolterraBank::mirrored_decoder(arch.mix, &mut root.derive(1000 + t as u64))?);
        }
        let selfexpr = SelfExpressiveLayer::new(self.n, self.mask.clone(), &mut root.derive(5000))?;
        Ok(VmscModel::new(
            self.shapes.clone(),
            encoders,
            decoders,
            selfexpr,
            self.weights,
            self.decoder_input,
        )?
        .with_origin(arch.name, self.seed))
    }
}

/// Preset model for [`PRESET_MODALITIES`] single-channel square modalities.
pub fn preset(name: &str, n_samples: usize, image_size: usize) -> Result<VmscModel> {
    architecture(name)?;
    ModelSpec {
        preset: name.to_string(),
        shapes: vec![(image_size, image_size, 1); PRESET_MODALITIES],
        n: n_samples,
        mask: MaskKind::Full,
        weights: LossWeights::default(),
        decoder_input: DecoderInput::Latent,
        seed: 0,
    }
    .build()
}
