//! Quantized image patches and binary segmentation masks.

use alloc::format;
use alloc::vec::Vec;

use crate::error::{Error, Result};

/// A quantized image stored planar (`[channel][row][col]`).
///
/// The autoregressive order used by the density model is raster order over
/// pixels (row-major, top-left first) with channels in index order inside
/// each pixel; see [`ImagePatch::raster_index`].
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct ImagePatch {
    height: usize,
    width: usize,
    channels: usize,
    levels: u16,
    data: Vec<u8>,
}

impl ImagePatch {
    pub fn new(height: usize, width: usize, channels: usize, levels: u16, data: Vec<u8>) -> Result<Self> {
        if height == 0 || width == 0 || channels == 0 {
            return Err(Error::Invalid(format!("empty patch geometry {channels}x{height}x{width}")));
        }
        if !(2..=256).contains(&levels) {
            return Err(Error::Invalid(format!("quantization levels must be in 2..=256, got {levels}")));
        }
        if data.len() != height * width * channels {
            return Err(Error::Invalid(format!(
                "{} values for a {channels}x{height}x{width} patch",
                data.len()
            )));
        }
        if let Some(&v) = data.iter().find(|&&v| u16::from(v) >= levels) {
            return Err(Error::Invalid(format!("pixel value {v} outside 0..{levels}")));
        }
        Ok(Self { height, width, channels, levels, data })
    }

    /// Single-channel patch.
    pub fn gray(height: usize, width: usize, levels: u16, data: Vec<u8>) -> Result<Self> {
        Self::new(height, width, 1, levels, data)
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn levels(&self) -> u16 {
        self.levels
    }

    pub fn data(&self) -> &[u8] {
        &self.data
    }

    pub fn dims(&self) -> usize {
        self.data.len()
    }

    pub fn get(&self, c: usize, y: usize, x: usize) -> u8 {
        self.data[(c * self.height + y) * self.width + x]
    }

    /// Position of sub-pixel `(c, y, x)` in the autoregressive ordering.
    pub fn raster_index(&self, c: usize, y: usize, x: usize) -> usize {
        (y * self.width + x) * self.channels + c
    }

    /// Inverse of [`raster_index`](Self::raster_index).
    pub fn raster_position(&self, index: usize) -> (usize, usize, usize) {
        let c = index % self.channels;
        let pixel = index / self.channels;
        (c, pixel / self.width, pixel % self.width)
    }

    /// Copy with sub-pixel `(c, y, x)` replaced; `value` is clamped to the
    /// valid range.
    pub fn with_value(&self, c: usize, y: usize, x: usize, value: u8) -> Self {
        let mut out = self.clone();
        let v = value.min((self.levels - 1) as u8);
        out.data[(c * self.height + y) * self.width + x] = v;
        out
    }

    /// Same geometry and quantization, new values (clamped to range).
    pub fn with_data(&self, data: Vec<u8>) -> Result<Self> {
        Self::new(self.height, self.width, self.channels, self.levels, data)
    }

    /// Non-overlapping `tile x tile` sub-patches in raster order of tiles.
    pub fn tiles(&self, tile: usize) -> Result<Vec<ImagePatch>> {
        if tile == 0 || !self.height.is_multiple_of(tile) || !self.width.is_multiple_of(tile) {
            return Err(Error::Invalid(format!(
                "tile {tile} does not divide patch {}x{}",
                self.height, self.width
            )));
        }
        let mut out = Vec::with_capacity((self.height / tile) * (self.width / tile));
        for ty in 0..self.height / tile {
            for tx in 0..self.width / tile {
                let mut data = Vec::with_capacity(tile * tile * self.channels);
                for c in 0..self.channels {
                    for y in 0..tile {
                        let row = (c * self.height + ty * tile + y) * self.width + tx * tile;
                        data.extend_from_slice(&self.data[row..row + tile]);
                    }
                }
                out.push(Self { height: tile, width: tile, channels: self.channels, levels: self.levels, data });
            }
        }
        Ok(out)
    }
}

/// Binary per-pixel labels, 1 = object, 0 = background.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct MaskPatch {
    height: usize,
    width: usize,
    data: Vec<u8>,
}

impl MaskPatch {
    pub fn new(height: usize, width: usize, data: Vec<u8>) -> Result<Self> {
        if height == 0 || width == 0 || data.len() != height * width {
            return Err(Error::Invalid(format!("{} labels for a {height}x{width} mask", data.len())));
        }
        if data.iter().any(|&v| v > 1) {
            return Err(Error::Invalid("mask labels must be 0 or 1".into()));
        }
        Ok(Self { height, width, data })
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn data(&self) -> &[u8] {
        &self.data
    }

    pub fn object_pixels(&self) -> usize {
        self.data.iter().filter(|&&v| v == 1).count()
    }

    pub fn matches_geometry(&self, image: &ImagePatch) -> bool {
        self.height == image.height() && self.width == image.width()
    }
}
