//! Synthetic clear/foggy scenes, label files, datasets on disk, and mixed
//! source/target batches.
//!
//! A dataset directory holds one subdirectory per split with
//! `images/NNNNN.png` and `labels/NNNNN.txt`, plus `manifest.json`.

mod annotations;
mod batch;
mod render;

use std::collections::BTreeMap;
use std::fmt;
use std::path::Path;

use image::RgbImage;
use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

pub use annotations::{format_annotations, parse_annotations, read_annotations, write_annotations};
pub use batch::{check_batch_size, compose_batch, DomainBatch, DomainStream, SceneCursor};
pub use render::{apply_fog, generate_scene, Background, ObjectSpec, Scene, SceneSpec, SHAPES};

use crate::detector::GroundTruthBox;
use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub const GENERATOR_VERSION: &str = "msda-scenes/1";
pub const MANIFEST_FILE: &str = "manifest.json";

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Domain {
    Source,
    Target,
}

impl fmt::Display for Domain {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Domain::Source => "source",
            Domain::Target => "target",
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SceneConfig {
    pub image_size: usize,
    pub num_classes: usize,
    pub min_objects: usize,
    pub max_objects: usize,
    /// Object extent bounds, as fractions of the image side.
    pub min_size: f64,
    pub max_size: f64,
    pub corruption_strength: f64,
}

impl Default for SceneConfig {
    fn default() -> Self {
        Self {
            image_size: 64,
            num_classes: 3,
            min_objects: 1,
            max_objects: 3,
            min_size: 0.15,
            max_size: 0.4,
            corruption_strength: 1.0,
        }
    }
}

impl SceneConfig {
    pub fn validate(&self) -> Result<()> {
        if self.image_size < 8 {
            return Err(Error::Config(format!("image size {} is too small", self.image_size)));
        }
        if !(2..=SHAPES.len()).contains(&self.num_classes) {
            return Err(Error::Config(format!(
                "scenes support 2 to {} classes, got {}",
                SHAPES.len(),
                self.num_classes
            )));
        }
        if self.min_objects > self.max_objects {
            return Err(Error::Config("min_objects exceeds max_objects".into()));
        }
        if !(self.min_size > 0.0 && self.min_size <= self.max_size && self.max_size <= 1.0) {
            return Err(Error::Config("object sizes must satisfy 0 < min <= max <= 1".into()));
        }
        if !(0.0..=1.0).contains(&self.corruption_strength) {
            return Err(Error::Config(format!(
                "corruption strength {} outside [0, 1]",
                self.corruption_strength
            )));
        }
        Ok(())
    }

    pub fn class_names(&self) -> Vec<String> {
        SHAPES[..self.num_classes].iter().map(|s| s.to_string()).collect()
    }
}

/// Converts 8-bit images to a `[N, 3, H, W]` tensor in `[0, 1]`.
pub fn images_to_tensor(images: &[&RgbImage]) -> Result<Tensor> {
    let first = images
        .first()
        .ok_or_else(|| Error::Shape("no images to convert".into()))?;
    let (w, h) = first.dimensions();
    let plane = (w * h) as usize;
    let mut data = vec![0.0; images.len() * 3 * plane];
    for (n, img) in images.iter().enumerate() {
        if img.dimensions() != (w, h) {
            return Err(Error::Shape("images in a batch differ in size".into()));
        }
        for (i, p) in img.pixels().enumerate() {
            for c in 0..3 {
                data[(n * 3 + c) * plane + i] = p.0[c] as f64 / 255.0;
            }
        }
    }
    Tensor::from_vec(&[images.len(), 3, h as usize, w as usize], data)
}

#[derive(Clone, Debug, PartialEq)]
pub struct Split {
    pub name: String,
    pub domain: Domain,
    pub seeds: Vec<u64>,
    pub images: Vec<RgbImage>,
    pub boxes: Vec<Vec<GroundTruthBox>>,
}

impl Split {
    pub fn len(&self) -> usize {
        self.images.len()
    }

    pub fn is_empty(&self) -> bool {
        self.images.is_empty()
    }

    /// One `[1, 3, H, W]` tensor per index.
    pub fn images_tensor(&self, indices: &[usize]) -> Vec<Tensor> {
        indices
            .iter()
            .map(|&i| images_to_tensor(&[&self.images[i]]).unwrap())
            .collect()
    }

    /// `[n, 3, H, W]` for the given indices.
    pub fn batch(&self, indices: &[usize]) -> Tensor {
        let refs: Vec<&RgbImage> = indices.iter().map(|&i| &self.images[i]).collect();
        images_to_tensor(&refs).unwrap()
    }

    pub fn all_boxes(&self) -> impl Iterator<Item = &GroundTruthBox> {
        self.boxes.iter().flatten()
    }

    /// The first `n` scenes.
    pub fn truncated(&self, n: usize) -> Split {
        let n = n.min(self.len());
        Split {
            name: self.name.clone(),
            domain: self.domain,
            seeds: self.seeds[..n.min(self.seeds.len())].to_vec(),
            images: self.images[..n].to_vec(),
            boxes: self.boxes[..n].to_vec(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DatasetConfig {
    pub seed: u64,
    pub scene: SceneConfig,
    pub n_train: usize,
    pub n_val: usize,
}

impl Default for DatasetConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            scene: SceneConfig::default(),
            n_train: 2000,
            n_val: 500,
        }
    }
}

/// Split names with their domains, in generation order.
pub const SPLITS: [(&str, Domain); 4] = [
    ("source_train", Domain::Source),
    ("target_train", Domain::Target),
    ("source_val", Domain::Source),
    ("target_val", Domain::Target),
];

/// Scene seeds of split number `split`: an independent ChaCha stream per
/// split, so sizes can change without reshuffling other splits.
fn split_seeds(seed: u64, split: usize, n: usize) -> Vec<u64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(split as u64 + 1);
    (0..n).map(|_| rng.next_u64()).collect()
}

#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub config: DatasetConfig,
    pub splits: BTreeMap<String, Split>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SplitManifest {
    pub domain: Domain,
    pub count: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub generator_version: String,
    pub config: DatasetConfig,
    pub class_names: Vec<String>,
    pub splits: BTreeMap<String, SplitManifest>,
}

/// Renders every split. Validation splits use `n_val` scenes, training
/// splits `n_train`.
pub fn generate_dataset(config: &DatasetConfig) -> Result<Dataset> {
    config.scene.validate()?;
    let mut splits = BTreeMap::new();
    for (k, &(name, domain)) in SPLITS.iter().enumerate() {
        let n = if name.ends_with("train") { config.n_train } else { config.n_val };
        let seeds = split_seeds(config.seed, k, n);
        let mut images = Vec::with_capacity(n);
        let mut boxes = Vec::with_capacity(n);
        for &s in &seeds {
            let scene = generate_scene(s, domain, &config.scene)?;
            images.push(scene.image);
            boxes.push(scene.boxes);
        }
        splits.insert(
            name.to_string(),
            Split {
                name: name.to_string(),
                domain,
                seeds,
                images,
                boxes,
            },
        );
    }
    Ok(Dataset {
        config: config.clone(),
        splits,
    })
}

fn file_stem(i: usize) -> String {
    format!("{i:05}")
}

impl Dataset {
    pub fn split(&self, name: &str) -> Result<&Split> {
        self.splits
            .get(name)
            .ok_or_else(|| Error::Data(format!("dataset has no split `{name}`")))
    }

    pub fn manifest(&self) -> Manifest {
        Manifest {
            generator_version: GENERATOR_VERSION.to_string(),
            config: self.config.clone(),
            class_names: self.config.scene.class_names(),
            splits: self
                .splits
                .iter()
                .map(|(k, s)| {
                    (
                        k.clone(),
                        SplitManifest {
                            domain: s.domain,
                            count: s.len(),
                        },
                    )
                })
                .collect(),
        }
    }

    pub fn write(&self, dir: impl AsRef<Path>) -> Result<()> {
        let dir = dir.as_ref();
        for (name, split) in &self.splits {
            let img_dir = dir.join(name).join("images");
            let lbl_dir = dir.join(name).join("labels");
            for d in [&img_dir, &lbl_dir] {
                std::fs::create_dir_all(d).map_err(|e| Error::io(d, e))?;
            }
            for (i, (img, boxes)) in split.images.iter().zip(&split.boxes).enumerate() {
                let p = img_dir.join(format!("{}.png", file_stem(i)));
                img.save(&p).map_err(|source| Error::Image { path: p.clone(), source })?;
                write_annotations(boxes, lbl_dir.join(format!("{}.txt", file_stem(i))))?;
            }
        }
        let manifest = serde_json::to_string_pretty(&self.manifest()).expect("serializable");
        let p = dir.join(MANIFEST_FILE);
        std::fs::write(&p, manifest + "\n").map_err(|e| Error::io(&p, e))
    }

    /// Loads a dataset directory, checking it against its manifest.
    pub fn load(dir: impl AsRef<Path>) -> Result<Self> {
        let dir = dir.as_ref();
        let mp = dir.join(MANIFEST_FILE);
        let text = std::fs::read_to_string(&mp).map_err(|e| Error::io(&mp, e))?;
        let manifest: Manifest =
            serde_json::from_str(&text).map_err(|e| Error::Data(format!("{}: {e}", mp.display())))?;
        let cfg = &manifest.config.scene;
        let size = cfg.image_size as u32;
        let mut splits = BTreeMap::new();
        for (name, sm) in &manifest.splits {
            let mut images = Vec::with_capacity(sm.count);
            let mut boxes = Vec::with_capacity(sm.count);
            for i in 0..sm.count {
                let p = dir.join(name).join("images").join(format!("{}.png", file_stem(i)));
                let img = image::open(&p)
                    .map_err(|source| Error::Image { path: p.clone(), source })?
                    .to_rgb8();
                if img.dimensions() != (size, size) {
                    return Err(Error::Data(format!(
                        "{} is {:?}, manifest says {size}x{size}",
                        p.display(),
                        img.dimensions()
                    )));
                }
                images.push(img);
                let lp = dir.join(name).join("labels").join(format!("{}.txt", file_stem(i)));
                boxes.push(read_annotations(&lp, Some(cfg.num_classes))?);
            }
            splits.insert(
                name.clone(),
                Split {
                    name: name.clone(),
                    domain: sm.domain,
                    seeds: Vec::new(),
                    images,
                    boxes,
                },
            );
        }
        Ok(Self {
            config: manifest.config,
            splits,
        })
    }
}

#[cfg(test)]
mod tests;
