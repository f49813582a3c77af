//! Multimodal datasets: directory ingestion, synthetic generation and
//! stratified subsetting.
//!
//! On-disk layout:
//!
//! ```text
//! root/<modality>/<sample_id>.pgm   one binary PGM per sample and modality
//! root/labels.csv                   optional, header "sample_id,label"
//! ```

pub mod pgm;
mod synth;

pub use synth::{synth_generate, synth_generate_with_truth, SynthSpec, SynthTruth};

use crate::error::{Error, Result};
use crate::numerics::{Rng, Tensor3};
use pgm::{resize_bilinear, Pgm};
use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

/// One sensing modality: a tensor per sample, all of the same shape.
#[derive(Clone, Debug, PartialEq)]
pub struct Modality {
    pub name: String,
    pub samples: Vec<Tensor3>,
}

/// `T` aligned modalities over the same `n` samples.
#[derive(Clone, Debug, PartialEq)]
pub struct MultiModalDataset {
    modalities: Vec<Modality>,
    labels: Option<Vec<usize>>,
    sample_ids: Vec<String>,
}

impl MultiModalDataset {
    pub fn new(
        modalities: Vec<Modality>,
        labels: Option<Vec<usize>>,
        sample_ids: Vec<String>,
    ) -> Result<Self> {
        if modalities.is_empty() {
            return Err(Error::InvalidInput("dataset needs at least one modality".into()));
        }
        let n = sample_ids.len();
        for m in &modalities {
            if m.samples.len() != n {
                return Err(Error::Alignment(format!(
                    "modality '{}' has {} samples, expected {n}",
                    m.name,
                    m.samples.len()
                )));
            }
            if let Some(first) = m.samples.first() {
                if let Some(bad) = m.samples.iter().position(|s| s.shape() != first.shape()) {
                    return Err(Error::Shape(format!(
                        "modality '{}' sample {bad} is {:?}, expected {:?}",
                        m.name,
                        m.samples[bad].shape(),
                        first.shape()
                    )));
                }
            }
        }
        if let Some(l) = &labels {
            if l.len() != n {
                return Err(Error::Alignment(format!("{} labels for {n} samples", l.len())));
            }
        }
        Ok(MultiModalDataset {
            modalities,
            labels,
            sample_ids,
        })
    }

    pub fn n(&self) -> usize {
        self.sample_ids.len()
    }

    pub fn modality_count(&self) -> usize {
        self.modalities.len()
    }

    pub fn modalities(&self) -> &[Modality] {
        &self.modalities
    }

    pub fn modality(&self, t: usize) -> &Modality {
        &self.modalities[t]
    }

    /// `(height, width, channels)` of modality `t`.
    pub fn shape(&self, t: usize) -> (usize, usize, usize) {
        self.modalities[t]
            .samples
            .first()
            .map_or((0, 0, 0), Tensor3::shape)
    }

    pub fn labels(&self) -> Option<&[usize]> {
        self.labels.as_deref()
    }

    pub fn sample_ids(&self) -> &[String] {
        &self.sample_ids
    }

    /// Number of distinct ground-truth labels, if labels are known.
    pub fn cluster_count(&self) -> Option<usize> {
        self.labels
            .as_ref()
            .map(|l| l.iter().collect::<BTreeSet<_>>().len())
    }

    /// Keeps the listed samples, in the given order, across all modalities.
    pub fn select(&self, indices: &[usize]) -> MultiModalDataset {
        MultiModalDataset {
            modalities: self
                .modalities
                .iter()
                .map(|m| Modality {
                    name: m.name.clone(),
                    samples: indices.iter().map(|&i| m.samples[i].clone()).collect(),
                })
                .collect(),
            labels: self
                .labels
                .as_ref()
                .map(|l| indices.iter().map(|&i| l[i]).collect()),
            sample_ids: indices.iter().map(|&i| self.sample_ids[i].clone()).collect(),
        }
    }

    /// Writes the dataset in the directory layout, 16-bit PGM per sample.
    pub fn write_image_dirs(&self, root: &Path) -> Result<()> {
        for m in &self.modalities {
            let dir = root.join(&m.name);
            std::fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
            for (id, sample) in self.sample_ids.iter().zip(&m.samples) {
                if sample.channels() != 1 {
                    return Err(Error::InvalidInput(format!(
                        "only grayscale samples can be exported, '{}' has {} channels",
                        m.name,
                        sample.channels()
                    )));
                }
                let pgm = Pgm {
                    width: sample.width(),
                    height: sample.height(),
                    maxval: u16::MAX,
                    pixels: sample
                        .data()
                        .iter()
                        .map(|&v| (v.clamp(0.0, 1.0) * u16::MAX as f64).round() as u16)
                        .collect(),
                };
                pgm.write(&dir.join(format!("{id}.pgm")))?;
            }
        }
        if let Some(labels) = &self.labels {
            let path = root.join("labels.csv");
            let mut w = csv::Writer::from_path(&path)
                .map_err(|e| Error::Format(format!("{}: {e}", path.display())))?;
            let io_err = |e: csv::Error| Error::Format(format!("{}: {e}", path.display()));
            w.write_record(["sample_id", "label"]).map_err(io_err)?;
            for (id, l) in self.sample_ids.iter().zip(labels) {
                w.write_record([id.as_str(), &l.to_string()]).map_err(io_err)?;
            }
            w.flush().map_err(|e| Error::io(&path, e))?;
        }
        Ok(())
    }
}

/// Loads `root/<modality>/<id>.pgm` for every modality, resizing to
/// `size x size` and scaling to `[0, 1]`. With `modalities = None` every
/// subdirectory is a modality, in name order.
pub fn load_image_dirs(
    root: &Path,
    modalities: Option<&[String]>,
    size: usize,
) -> Result<MultiModalDataset> {
    if !root.is_dir() {
        return Err(Error::io(
            root,
            std::io::Error::new(std::io::ErrorKind::NotFound, "dataset directory not found"),
        ));
    }
    let names: Vec<String> = match modalities {
        Some(m) => m.to_vec(),
        None => {
            let mut v = Vec::new();
            for entry in std::fs::read_dir(root).map_err(|e| Error::io(root, e))? {
                let entry = entry.map_err(|e| Error::io(root, e))?;
                if entry.path().is_dir() {
                    v.push(entry.file_name().to_string_lossy().into_owned());
                }
            }
            v.sort();
            v
        }
    };
    if names.is_empty() {
        return Err(Error::Format(format!("{} has no modality directories", root.display())));
    }

    let list = |name: &str| -> Result<BTreeSet<String>> {
        let dir = root.join(name);
        let mut ids = BTreeSet::new();
        for entry in std::fs::read_dir(&dir).map_err(|e| Error::io(&dir, e))? {
            let path = entry.map_err(|e| Error::io(&dir, e))?.path();
            if path.extension().is_some_and(|e| e == "pgm") {
                if let Some(stem) = path.file_stem() {
                    ids.insert(stem.to_string_lossy().into_owned());
                }
            }
        }
        Ok(ids)
    };
    let reference = list(&names[0])?;
    for name in &names[1..] {
        let ids = list(name)?;
        if let Some(missing) = reference.difference(&ids).next() {
            return Err(Error::Alignment(format!(
                "modality '{name}' is missing {missing}.pgm present in '{}'",
                names[0]
            )));
        }
        if let Some(extra) = ids.difference(&reference).next() {
            return Err(Error::Alignment(format!(
                "modality '{}' is missing {extra}.pgm present in '{name}'",
                names[0]
            )));
        }
    }
    let sample_ids: Vec<String> = reference.into_iter().collect();

    let mut mods = Vec::with_capacity(names.len());
    for name in &names {
        let mut samples = Vec::with_capacity(sample_ids.len());
        for id in &sample_ids {
            let img = Pgm::read(&root.join(name).join(format!("{id}.pgm")))?;
            let px = resize_bilinear(&img.normalized(), img.width, img.height, size, size);
            samples.push(Tensor3::from_vec(size, size, 1, px)?);
        }
        mods.push(Modality {
            name: name.clone(),
            samples,
        });
    }

    let label_path = root.join("labels.csv");
    let labels = if label_path.is_file() {
        Some(read_labels(&label_path, &sample_ids)?)
    } else {
        None
    };
    MultiModalDataset::new(mods, labels, sample_ids)
}

/// Reads a `sample_id,label` CSV and orders the labels like `ids`.
pub fn read_labels(path: &Path, ids: &[String]) -> Result<Vec<usize>> {
    let fmt = |e: csv::Error| Error::Format(format!("{}: {e}", path.display()));
    let mut reader = csv::Reader::from_path(path).map_err(fmt)?;
    let mut by_id = BTreeMap::new();
    for rec in reader.records() {
        let rec = rec.map_err(fmt)?;
        let (Some(id), Some(label)) = (rec.get(0), rec.get(1)) else {
            return Err(Error::Format(format!("{}: short record", path.display())));
        };
        let label: usize = label.trim().parse().map_err(|_| {
            Error::Format(format!("{}: label {label:?} is not an integer", path.display()))
        })?;
        by_id.insert(id.trim().to_string(), label);
    }
    ids.iter()
        .map(|id| {
            by_id.get(id).copied().ok_or_else(|| {
                Error::Alignment(format!("{} has no label for sample {id}", path.display()))
            })
        })
        .collect()
}

/// Keeps `fraction` of the samples, stratified by label when labels exist
/// (`round(fraction * class size)` per class), uniformly otherwise. The
/// original sample order is preserved.
pub fn subset(dataset: &MultiModalDataset, fraction: f64, seed: u64) -> Result<MultiModalDataset> {
    if !(fraction > 0.0 && fraction <= 1.0) {
        return Err(Error::InvalidInput(format!(
            "fraction must lie in (0, 1], got {fraction}"
        )));
    }
    if fraction == 1.0 {
        return Ok(dataset.clone());
    }
    let mut rng = Rng::new(seed);
    let mut keep = Vec::new();
    let minimum = match dataset.labels() {
        Some(labels) => {
            let mut groups: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
            for (i, &l) in labels.iter().enumerate() {
                groups.entry(l).or_default().push(i);
            }
            for members in groups.values_mut() {
                let take = (fraction * members.len() as f64).round() as usize;
                rng.shuffle(members);
                keep.extend_from_slice(&members[..take]);
            }
            groups.len()
        }
        None => {
            let mut all: Vec<usize> = (0..dataset.n()).collect();
            rng.shuffle(&mut all);
            let take = (fraction * all.len() as f64).round() as usize;
            keep.extend_from_slice(&all[..take]);
            2
        }
    };
    if keep.len() < minimum {
        return Err(Error::InvalidInput(format!(
            "fraction {fraction} keeps {} samples, fewer than the {minimum} clusters",
            keep.len()
        )));
    }
    keep.sort_unstable();
    Ok(dataset.select(&keep))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn toy(n_per: usize, clusters: usize) -> MultiModalDataset {
        let n = n_per * clusters;
        let mods = (0..2)
            .map(|t| Modality {
                name: format!("m{t}"),
                samples: (0..n)
                    .map(|i| Tensor3::from_vec(1, 1, 1, vec![(i * 10 + t) as f64]).unwrap())
                    .collect(),
            })
            .collect();
        let labels = (0..n).map(|i| i / n_per).collect();
        MultiModalDataset::new(mods, Some(labels), (0..n).map(|i| format!("s{i}")).collect())
            .unwrap()
    }

    #[test]
    fn full_fraction_is_identity() {
        let d = toy(4, 3);
        assert_eq!(subset(&d, 1.0, 1).unwrap(), d);
    }

    #[test]
    fn half_of_balanced_set_is_stratified_and_deterministic() {
        let d = toy(40, 5);
        let s = subset(&d, 0.5, 7).unwrap();
        assert_eq!(s.n(), 100);
        for c in 0..5 {
            assert_eq!(s.labels().unwrap().iter().filter(|&&l| l == c).count(), 20);
        }
        assert_eq!(subset(&d, 0.5, 7).unwrap(), s);
        // alignment: each kept sample keeps its value in both modalities
        for i in 0..s.n() {
            let a = s.modality(0).samples[i].data()[0];
            let b = s.modality(1).samples[i].data()[0];
            assert_eq!(b - a, 1.0);
            assert_eq!(format!("s{}", a as usize / 10), s.sample_ids()[i]);
        }
    }

    #[test]
    fn infeasible_fraction_rejected() {
        let d = toy(2, 5);
        assert!(matches!(subset(&d, 0.1, 1), Err(Error::InvalidInput(_))));
        assert!(subset(&d, 0.0, 1).is_err());
        assert!(subset(&d, 1.5, 1).is_err());
    }

    #[test]
    fn misaligned_construction_rejected() {
        let d = toy(2, 2);
        let mut mods = d.modalities().to_vec();
        mods[1].samples.pop();
        assert!(matches!(
            MultiModalDataset::new(mods, None, d.sample_ids().to_vec()),
            Err(Error::Alignment(_))
        ));
    }
}
