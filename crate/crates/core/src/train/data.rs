//! Image ingestion: weighted multi-root sampling, center crop and resize,
//! `[-1, 1]` mapping and optional horizontal flip.

use std::path::{Path, PathBuf};

use rand::distributions::{Distribution, WeightedIndex};
use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};
use tch::Tensor;

use crate::error::{Error, Result};
use crate::imageio::{center_crop_resize, open_image, rgb_to_tensor};
use crate::tensor::ImageTensor;

const EXTENSIONS: [&str; 5] = ["png", "jpg", "jpeg", "bmp", "webp"];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DataRoot {
    pub path: PathBuf,
    #[serde(default = "one")]
    pub weight: f64,
}

fn one() -> f64 {
    1.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DatasetSpec {
    pub roots: Vec<DataRoot>,
    /// Defaults to the network resolution when zero.
    pub resolution: u32,
    pub hflip: bool,
    /// Keep decoded images in memory.
    pub cache: bool,
}

impl Default for DatasetSpec {
    fn default() -> Self {
        Self {
            roots: Vec::new(),
            resolution: 0,
            hflip: true,
            cache: true,
        }
    }
}

fn list_images(root: &Path) -> Result<Vec<PathBuf>> {
    let mut out = Vec::new();
    for entry in walkdir::WalkDir::new(root).follow_links(true) {
        let entry = entry.map_err(|e| {
            Error::config("data.roots", format!("cannot read {}: {e}", root.display()))
        })?;
        let ext = entry
            .path()
            .extension()
            .and_then(|e| e.to_str())
            .map(str::to_ascii_lowercase);
        if entry.file_type().is_file() && ext.is_some_and(|e| EXTENSIONS.contains(&e.as_str())) {
            out.push(entry.into_path());
        }
    }
    out.sort();
    Ok(out)
}

#[derive(Debug)]
enum Slot {
    Unread,
    Loaded(Tensor),
    Broken,
}

#[derive(Debug)]
struct Root {
    files: Vec<PathBuf>,
    slots: Vec<Slot>,
}

/// Indexed image collection drawn from one or more weighted roots.
#[derive(Debug)]
pub struct Dataset {
    roots: Vec<Root>,
    chooser: WeightedIndex<f64>,
    resolution: u32,
    hflip: bool,
    cache: bool,
}

impl Dataset {
    pub fn open(spec: &DatasetSpec, resolution: u32) -> Result<Self> {
        if spec.roots.is_empty() {
            return Err(Error::config("data.roots", "no dataset roots configured"));
        }
        let mut roots = Vec::new();
        let mut weights = Vec::new();
        for r in &spec.roots {
            if !(r.weight > 0.0 && r.weight.is_finite()) {
                return Err(Error::config(
                    "data.roots.weight",
                    format!("weight of {} must be positive", r.path.display()),
                ));
            }
            if !r.path.is_dir() {
                return Err(Error::config(
                    "data.roots.path",
                    format!("{} is not a directory", r.path.display()),
                ));
            }
            let files = list_images(&r.path)?;
            if files.is_empty() {
                return Err(Error::config(
                    "data.roots.path",
                    format!("{} contains no images", r.path.display()),
                ));
            }
            let slots = files.iter().map(|_| Slot::Unread).collect();
            roots.push(Root { files, slots });
            weights.push(r.weight);
        }
        let chooser = WeightedIndex::new(&weights)
            .map_err(|e| Error::config("data.roots.weight", e.to_string()))?;
        Ok(Self {
            roots,
            chooser,
            resolution: if spec.resolution == 0 {
                resolution
            } else {
                spec.resolution
            },
            hflip: spec.hflip,
            cache: spec.cache,
        })
    }

    pub fn resolution(&self) -> u32 {
        self.resolution
    }

    pub fn len(&self) -> usize {
        self.roots.iter().map(|r| r.files.len()).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Draws a root index according to the normalised weights.
    pub fn draw_root<R: Rng + ?Sized>(&self, rng: &mut R) -> usize {
        self.chooser.sample(rng)
    }

    fn load(&mut self, root: usize, index: usize) -> Option<Tensor> {
        let r = &mut self.roots[root];
        match &r.slots[index] {
            Slot::Loaded(t) => return Some(t.shallow_clone()),
            Slot::Broken => return None,
            Slot::Unread => {}
        }
        let path = &r.files[index];
        match open_image(path) {
            Ok(img) => {
                let (rgb, _) = center_crop_resize(&img, self.resolution);
                let t = rgb_to_tensor(&rgb).into_tensor();
                if self.cache {
                    r.slots[index] = Slot::Loaded(t.shallow_clone());
                }
                Some(t)
            }
            Err(e) => {
                log::warn!("skipping undecodable image {}: {e}", path.display());
                r.slots[index] = Slot::Broken;
                None
            }
        }
    }

    /// One image `(1, 3, res, res)`; undecodable files are skipped.
    pub fn draw<R: Rng + ?Sized>(&mut self, rng: &mut R) -> Result<Tensor> {
        for _ in 0..10_000 {
            let root = self.draw_root(rng);
            let index = rng.gen_range(0..self.roots[root].files.len());
            let flip = self.hflip && rng.gen_bool(0.5);
            if let Some(t) = self.load(root, index) {
                return Ok(if flip { t.flip([3]) } else { t });
            }
            if self.roots[root]
                .slots
                .iter()
                .all(|s| matches!(s, Slot::Broken))
            {
                return Err(Error::config(
                    "data.roots",
                    "a dataset root has no decodable images",
                ));
            }
        }
        Err(Error::config("data.roots", "too many undecodable images"))
    }

    pub fn batch<R: Rng + ?Sized>(&mut self, n: i64, rng: &mut R) -> Result<ImageTensor> {
        let imgs = (0..n).map(|_| self.draw(rng)).collect::<Result<Vec<_>>>()?;
        ImageTensor::new(Tensor::cat(&imgs, 0))
    }

    /// Content batch A and an independently drawn, shuffled style batch B.
    pub fn pair<R: Rng + ?Sized>(
        &mut self,
        n: i64,
        rng: &mut R,
    ) -> Result<(ImageTensor, ImageTensor)> {
        let a = self.batch(n, rng)?;
        let b = self.batch(n, rng)?;
        let mut order: Vec<i64> = (0..n).collect();
        order.shuffle(rng);
        let b = ImageTensor::new(b.tensor().index_select(0, &Tensor::from_slice(&order)))?;
        Ok((a, b))
    }
}
