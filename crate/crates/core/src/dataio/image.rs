use std::path::Path;

use image::{ImageBuffer, Luma, Rgb};

use crate::error::ensure;
use crate::{Error, Result, Scalar};

/// Interleaved float image, values nominally in `[0, 1]`.
#[derive(Clone, Debug, PartialEq)]
pub struct Image<T> {
    pub width: u32,
    pub height: u32,
    pub channels: usize,
    pub data: Vec<T>,
}

impl<T: Scalar> Image<T> {
    pub fn new(width: u32, height: u32, channels: usize, data: Vec<T>) -> Result<Self> {
        ensure!(
            data.len() == width as usize * height as usize * channels,
            Input,
            "image buffer of {} values does not match {width}x{height}x{channels}",
            data.len()
        );
        Ok(Self {
            width,
            height,
            channels,
            data,
        })
    }

    pub fn filled(width: u32, height: u32, channels: usize, value: T) -> Self {
        Self {
            width,
            height,
            channels,
            data: vec![value; width as usize * height as usize * channels],
        }
    }

    pub fn pixel_count(&self) -> usize {
        self.width as usize * self.height as usize
    }

    pub fn pixel(&self, x: u32, y: u32) -> &[T] {
        let i = (y as usize * self.width as usize + x as usize) * self.channels;
        &self.data[i..i + self.channels]
    }

    pub fn same_shape(&self, other: &Image<T>) -> bool {
        self.width == other.width && self.height == other.height && self.channels == other.channels
    }

    pub fn mean(&self) -> f64 {
        self.data.iter().map(|v| v.as_f64()).sum::<f64>() / self.data.len() as f64
    }

    pub fn cast<U: Scalar>(&self) -> Image<U> {
        Image {
            width: self.width,
            height: self.height,
            channels: self.channels,
            data: self.data.iter().map(|v| U::lit(v.as_f64())).collect(),
        }
    }

    /// Loads an 8-bit PNG; an alpha channel is composited onto `background`.
    pub fn load_png(path: &Path, background: [f64; 3]) -> Result<Self> {
        let img = image::open(path).map_err(|e| match e {
            image::ImageError::IoError(io) => Error::io(path, io),
            other => Error::Image {
                path: path.to_path_buf(),
                msg: other.to_string(),
            },
        })?;
        let rgba = img.to_rgba8();
        let (w, h) = rgba.dimensions();
        let mut data = Vec::with_capacity(w as usize * h as usize * 3);
        for px in rgba.pixels() {
            let a = px[3] as f64 / 255.0;
            for c in 0..3 {
                let v = px[c] as f64 / 255.0;
                data.push(T::lit(v * a + background[c] * (1.0 - a)));
            }
        }
        Self::new(w, h, 3, data)
    }

    /// Writes an 8-bit RGB (or gray) PNG, clamping to `[0, 1]`.
    pub fn save_png(&self, path: &Path) -> Result<()> {
        let q = |v: T| (v.as_f64().clamp(0.0, 1.0) * 255.0).round() as u8;
        let err = |e: image::ImageError| Error::Image {
            path: path.to_path_buf(),
            msg: e.to_string(),
        };
        match self.channels {
            3 => {
                let buf: ImageBuffer<Rgb<u8>, Vec<u8>> =
                    ImageBuffer::from_raw(self.width, self.height, self.data.iter().map(|v| q(*v)).collect())
                        .expect("buffer size checked at construction");
                buf.save(path).map_err(err)
            }
            1 => {
                let buf: ImageBuffer<Luma<u8>, Vec<u8>> =
                    ImageBuffer::from_raw(self.width, self.height, self.data.iter().map(|v| q(*v)).collect())
                        .expect("buffer size checked at construction");
                buf.save(path).map_err(err)
            }
            c => Err(Error::Input(format!("cannot save {c}-channel image as PNG"))),
        }
    }
}

/// Writes depth as 16-bit grayscale, mapping `[near, far]` onto `[0, 65535]`.
pub fn save_depth_png<T: Scalar>(depth: &[T], width: u32, height: u32, near: f64, far: f64, path: &Path) -> Result<()> {
    ensure!(depth.len() == width as usize * height as usize, Input, "depth buffer size mismatch");
    let data: Vec<u16> = depth
        .iter()
        .map(|d| (((d.as_f64() - near) / (far - near)).clamp(0.0, 1.0) * 65535.0).round() as u16)
        .collect();
    let buf: ImageBuffer<Luma<u16>, Vec<u16>> = ImageBuffer::from_raw(width, height, data).expect("size checked");
    buf.save(path).map_err(|e| Error::Image {
        path: path.to_path_buf(),
        msg: e.to_string(),
    })
}
