//! Blender-convention scenes: `transforms_{train,val,test}.json` with
//! `camera_angle_x` and per-frame `file_path` + 4×4 `transform_matrix`
//! (camera-to-world, camera looking down −z, +y up, right-handed).

use std::fs;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{downsample_avg, Dataset, Image, View};
use crate::geometry::Camera;
use crate::{Error, Result, Scalar};

pub const SPLITS: [&str; 3] = ["train", "val", "test"];

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct TransformsFile {
    pub camera_angle_x: f64,
    pub frames: Vec<FrameEntry>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct FrameEntry {
    pub file_path: String,
    pub transform_matrix: [[f64; 4]; 4],
}

/// Parsed transforms for one split; images are read on demand.
#[derive(Clone, Debug)]
pub struct BlenderSplit {
    pub root: PathBuf,
    pub transforms: TransformsFile,
}

impl BlenderSplit {
    pub fn open(root: &Path, split: &str) -> Result<Self> {
        let path = root.join(format!("transforms_{split}.json"));
        let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
        let transforms: TransformsFile = serde_json::from_str(&text).map_err(|e| Error::Parse {
            path: path.clone(),
            msg: e.to_string(),
        })?;
        Ok(Self {
            root: root.to_path_buf(),
            transforms,
        })
    }

    pub fn len(&self) -> usize {
        self.transforms.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.transforms.frames.is_empty()
    }

    fn image_path(&self, frame: &FrameEntry) -> PathBuf {
        let rel = Path::new(&frame.file_path);
        let rel = if rel.extension().is_some() {
            rel.to_path_buf()
        } else {
            rel.with_extension("png")
        };
        self.root.join(rel)
    }

    /// Loads the selected frames (all when `indices` is `None`),
    /// downsampling each image by `factor`.
    pub fn load<T: Scalar>(
        &self,
        indices: Option<&[usize]>,
        factor: u32,
        near: f64,
        far: f64,
        background: [f64; 3],
    ) -> Result<Vec<View<T>>> {
        let all: Vec<usize> = (0..self.len()).collect();
        let indices = indices.unwrap_or(&all);
        if let Some(&bad) = indices.iter().find(|&&i| i >= self.len()) {
            return Err(Error::Input(format!("frame id {bad} out of range ({} frames)", self.len())));
        }
        indices
            .par_iter()
            .map(|&i| {
                let frame = &self.transforms.frames[i];
                let image = Image::<T>::load_png(&self.image_path(frame), background)?;
                let image = downsample_avg(&image, factor)?;
                let focal = Camera::<T>::focal_from_angle_x(image.width, T::lit(self.transforms.camera_angle_x));
                let camera = Camera::new(
                    image.width,
                    image.height,
                    focal,
                    frame.transform_matrix.map(|r| r.map(T::lit)),
                    T::lit(near),
                    T::lit(far),
                )?;
                Ok(View { camera, image })
            })
            .collect()
    }
}

/// Loads every split at full resolution. Missing `val` is allowed.
pub fn load_blender<T: Scalar>(dir: &Path, near: f64, far: f64) -> Result<Dataset<T>> {
    let mut ds = Dataset {
        name: dir.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default(),
        ..Dataset::default()
    };
    for split in SPLITS {
        let opened = match BlenderSplit::open(dir, split) {
            Ok(s) => s,
            Err(Error::Io { .. }) if split == "val" => continue,
            Err(e) => return Err(e),
        };
        let views = opened.load(None, 1, near, far, [1.0; 3])?;
        match split {
            "train" => ds.train = views,
            "val" => ds.val = views,
            _ => ds.test = views,
        }
    }
    Ok(ds)
}

/// Writes a dataset in the transforms format (PNG images, square pixels).
pub fn save_blender<T: Scalar>(ds: &Dataset<T>, dir: &Path) -> Result<()> {
    for (split, views) in [("train", &ds.train), ("val", &ds.val), ("test", &ds.test)] {
        let Some(first) = views.first() else { continue };
        let img_dir = dir.join(split);
        fs::create_dir_all(&img_dir).map_err(|e| Error::io(&img_dir, e))?;
        let angle = 2.0 * (0.5 * first.camera.width as f64 / first.camera.focal.as_f64()).atan();
        let mut frames = Vec::new();
        for (i, v) in views.iter().enumerate() {
            let rel = format!("./{split}/r_{i}");
            v.image.save_png(&dir.join(format!("{rel}.png")))?;
            frames.push(FrameEntry {
                file_path: rel,
                transform_matrix: v.camera.cam_to_world.map(|r| r.map(|x| x.as_f64())),
            });
        }
        let body = TransformsFile {
            camera_angle_x: angle,
            frames,
        };
        let path = dir.join(format!("transforms_{split}.json"));
        let text = serde_json::to_string_pretty(&body).expect("transforms serialize");
        fs::write(&path, text).map_err(|e| Error::io(&path, e))?;
    }
    Ok(())
}
