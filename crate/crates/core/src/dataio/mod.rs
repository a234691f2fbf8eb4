//! Datasets: Blender-convention loaders, few-view selection, average
//! downsampling and procedural oracle scenes.

pub mod blender;
pub mod image;
pub mod procedural;

use crate::error::ensure;
use crate::geometry::Camera;
use crate::{Result, Scalar};
pub use self::image::{save_depth_png, Image};
pub use blender::{load_blender, save_blender, BlenderSplit};
pub use procedural::{procedural_dataset, render_procedural_gt, ProceduralScene, RigConfig};

/// View IDs of the standard 8-view few-shot split.
pub const FEWSHOT_IDS: [usize; 8] = [26, 86, 2, 55, 75, 93, 16, 73];

/// Held-out views used for evaluation.
pub const EVAL_VIEWS: usize = 25;

#[derive(Clone, Debug, PartialEq)]
pub struct View<T> {
    pub camera: Camera<T>,
    pub image: Image<T>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Dataset<T> {
    pub name: String,
    pub train: Vec<View<T>>,
    pub val: Vec<View<T>>,
    pub test: Vec<View<T>>,
}

impl<T> Default for Dataset<T> {
    fn default() -> Self {
        Self {
            name: String::new(),
            train: Vec::new(),
            val: Vec::new(),
            test: Vec::new(),
        }
    }
}

impl<T: Scalar> Dataset<T> {
    pub fn train_pixel_count(&self) -> usize {
        self.train.iter().map(|v| v.image.pixel_count()).sum()
    }
}

/// `count` indices spread evenly over `0..n` by `⌊k·n/count⌋`.
pub fn even_selection(n: usize, count: usize) -> Vec<usize> {
    if count >= n {
        return (0..n).collect();
    }
    (0..count).map(|k| k * n / count).collect()
}

/// Restricts training to `ids` (in the given order) and evaluation to
/// `eval_count` evenly selected test views.
pub fn select_fewshot<T: Scalar>(ds: &Dataset<T>, ids: &[usize], eval_count: usize) -> Result<Dataset<T>> {
    if let Some(&bad) = ids.iter().find(|&&i| i >= ds.train.len()) {
        return Err(crate::Error::Input(format!(
            "few-shot id {bad} out of range ({} training views)",
            ds.train.len()
        )));
    }
    Ok(Dataset {
        name: ds.name.clone(),
        train: ids.iter().map(|&i| ds.train[i].clone()).collect(),
        val: ds.val.clone(),
        test: even_selection(ds.test.len(), eval_count)
            .into_iter()
            .map(|i| ds.test[i].clone())
            .collect(),
    })
}

/// Non-overlapping `factor × factor` block means. Dimensions that are not
/// a multiple of `factor` are cropped to the largest multiple.
pub fn downsample_avg<T: Scalar>(image: &Image<T>, factor: u32) -> Result<Image<T>> {
    ensure!(factor >= 1, Input, "downsample factor must be >= 1, got {factor}");
    if factor == 1 {
        return Ok(image.clone());
    }
    let (w, h) = (image.width / factor, image.height / factor);
    ensure!(w >= 1 && h >= 1, Input, "image {}x{} smaller than factor {factor}", image.width, image.height);
    let c = image.channels;
    let f = factor as usize;
    let inv = T::one() / T::from_usize_lossy(f * f);
    let mut data = vec![T::zero(); w as usize * h as usize * c];
    for y in 0..h as usize {
        for x in 0..w as usize {
            let out = &mut data[(y * w as usize + x) * c..][..c];
            for sy in 0..f {
                for sx in 0..f {
                    let src = image.pixel((x * f + sx) as u32, (y * f + sy) as u32);
                    for (o, s) in out.iter_mut().zip(src) {
                        *o += *s;
                    }
                }
            }
            out.iter_mut().for_each(|v| *v *= inv);
        }
    }
    Image::new(w, h, c, data)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn even_selection_rule() {
        let s = even_selection(200, 25);
        assert_eq!(s.len(), 25);
        assert_eq!(s, (0..25).map(|k| 8 * k).collect::<Vec<_>>());
        assert_eq!(even_selection(10, 25), (0..10).collect::<Vec<_>>());
    }

    #[test]
    fn downsample_cases() {
        let img = Image::new(2, 2, 1, vec![0.0f64, 0.0, 1.0, 1.0]).unwrap();
        assert_eq!(downsample_avg(&img, 2).unwrap().data, vec![0.5]);
        assert_eq!(downsample_avg(&img, 1).unwrap(), img);
        assert!(downsample_avg(&img, 0).is_err());
        let flat = Image::filled(4, 4, 3, 0.25f64);
        assert!(downsample_avg(&flat, 2).unwrap().data.iter().all(|v| *v == 0.25));
        // 5x3 crops to 4x2
        let odd = Image::filled(5, 3, 1, 1.0f64);
        let d = downsample_avg(&odd, 2).unwrap();
        assert_eq!((d.width, d.height), (2, 1));
    }

    fn dummy_views(n: usize) -> Vec<View<f64>> {
        let cam = Camera::new(2, 2, 1.0, [[1., 0., 0., 0.], [0., 1., 0., 0.], [0., 0., 1., 4.], [0., 0., 0., 1.]], 2.0, 6.0).unwrap();
        (0..n)
            .map(|i| View {
                camera: cam.clone(),
                image: Image::filled(2, 2, 3, i as f64),
            })
            .collect()
    }

    #[test]
    fn fewshot_selection() {
        let ds = Dataset {
            name: "d".into(),
            train: dummy_views(100),
            val: vec![],
            test: dummy_views(200),
        };
        let few = select_fewshot(&ds, &FEWSHOT_IDS, EVAL_VIEWS).unwrap();
        assert_eq!(few.train.len(), 8);
        assert_eq!(few.train[0].image.data[0], 26.0);
        assert_eq!(few.train[7].image.data[0], 73.0);
        assert_eq!(few.test.len(), 25);
        assert_eq!(few.test[3].image.data[0], 24.0);
        assert!(select_fewshot(&ds, &[100], 25).is_err());
        assert!(select_fewshot(&ds, &[], 25).unwrap().train.is_empty());
    }

    proptest! {
        #[test]
        fn downsample_preserves_mean(vals in proptest::collection::vec(0.0f64..1.0, 48)) {
            let img = Image::new(4, 4, 3, vals).unwrap();
            let d = downsample_avg(&img, 2).unwrap();
            prop_assert!((img.mean() - d.mean()).abs() < 1e-12);
        }
    }
}
