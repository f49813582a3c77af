#![allow(dead_code)]

pub mod oracles;

use vmsc::data::{Modality, MultiModalDataset};
use vmsc::model::{DecoderInput, LossWeights, ModelSpec, VmscModel};
use vmsc::numerics::{Rng, Tensor3};
use vmsc::selfexpr::MaskKind;

pub fn random_tensor(h: usize, w: usize, c: usize, rng: &mut Rng) -> Tensor3 {
    Tensor3::from_vec(h, w, c, (0..h * w * c).map(|_| rng.normal()).collect()).unwrap()
}

/// `n` samples of `t_count` single-channel `side x side` images in `[0, 1]`.
pub fn toy_dataset(n: usize, side: usize, t_count: usize, seed: u64) -> MultiModalDataset {
    let mut rng = Rng::new(seed);
    let modalities = (0..t_count)
        .map(|t| Modality {
            name: format!("m{t}"),
            samples: (0..n)
                .map(|_| {
                    let px = (0..side * side).map(|_| rng.unit()).collect();
                    Tensor3::from_vec(side, side, 1, px).unwrap()
                })
                .collect(),
        })
        .collect();
    let labels = (0..n).map(|i| i % 2).collect();
    MultiModalDataset::new(modalities, Some(labels), (0..n).map(|i| format!("s{i}")).collect()).unwrap()
}

/// ARL-layout model on `data` with every weight redrawn at moderate scale,
/// so no coefficient sits near the kink of the L1 penalty.
pub fn toy_model(
    data: &MultiModalDataset,
    mask: MaskKind,
    weights: LossWeights,
    decoder_input: DecoderInput,
    seed: u64,
) -> VmscModel {
    let mut spec = ModelSpec::for_dataset("arl", data);
    spec.mask = mask;
    spec.weights = weights;
    spec.decoder_input = decoder_input;
    spec.seed = seed;
    let mut model = spec.build().unwrap();
    let mut rng = Rng::new(seed ^ 0x5eed);
    let p: Vec<f64> = (0..model.param_len())
        .map(|_| {
            let v = 0.3 * rng.normal();
            if v.abs() < 1e-3 {
                0.05
            } else {
                v
            }
        })
        .collect();
    model.set_params(&p).unwrap();
    model
}
