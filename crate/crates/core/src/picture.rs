//! Grayscale PNG mosaics of pixel images.
//!
//! Every tile is scaled by its own maximum absolute value: zero maps to mid-gray,
//! the most negative value to black and the most positive to white.

use std::fs::File;
use std::io::BufWriter;
use std::path::Path;

use crate::error::{check_len, invalid, EitError, Result};
use crate::geometry::GridSize;

/// Gray level of the one-pixel gutter between tiles.
const GUTTER: u8 = 255;

/// 8-bit gray levels of one tile.
pub fn gray_levels(image: &[f64]) -> Vec<u8> {
    let top = image.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    image
        .iter()
        .map(|v| {
            let u = if top > 0.0 { v / top } else { 0.0 };
            (127.5 + 127.5 * u).round().clamp(0.0, 255.0) as u8
        })
        .collect()
}

/// Tiles laid out row-major, `None` leaves a blank (mid-gray) tile.
#[derive(Clone, Debug)]
pub struct Mosaic {
    tile: GridSize,
    cols: usize,
    tiles: Vec<Option<Vec<f64>>>,
}

impl Mosaic {
    pub fn new(tile: GridSize, cols: usize) -> Result<Self> {
        if cols == 0 || tile.width == 0 || tile.height == 0 {
            return Err(invalid("mosaic", format!("needs positive columns and tile size, got {cols} of {tile:?}")));
        }
        Ok(Self { tile, cols, tiles: Vec::new() })
    }

    pub fn push(&mut self, image: &[f64]) -> Result<()> {
        check_len("tile", self.tile.width * self.tile.height, image.len())?;
        self.tiles.push(Some(image.to_vec()));
        Ok(())
    }

    pub fn push_f32(&mut self, image: &[f32]) -> Result<()> {
        self.push(&image.iter().map(|&v| v as f64).collect::<Vec<_>>())
    }

    pub fn push_blank(&mut self) {
        self.tiles.push(None);
    }

    /// Pads the current row with blanks.
    pub fn end_row(&mut self) {
        while self.tiles.len() % self.cols != 0 {
            self.push_blank();
        }
    }

    pub fn len(&self) -> usize {
        self.tiles.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tiles.is_empty()
    }

    pub fn rows(&self) -> usize {
        self.tiles.len().div_ceil(self.cols)
    }

    /// Pixel dimensions `(width, height)` including gutters.
    pub fn dimensions(&self) -> (usize, usize) {
        let (w, h) = (self.tile.width, self.tile.height);
        (self.cols * (w + 1) - 1, (self.rows().max(1)) * (h + 1) - 1)
    }

    pub fn render(&self) -> Vec<u8> {
        let (width, height) = self.dimensions();
        let (w, h) = (self.tile.width, self.tile.height);
        let mut out = vec![GUTTER; width * height];
        for (i, tile) in self.tiles.iter().enumerate() {
            let (r, c) = (i / self.cols, i % self.cols);
            let levels = tile.as_ref().map_or_else(|| vec![128; w * h], |t| gray_levels(t));
            for y in 0..h {
                let row = (r * (h + 1) + y) * width + c * (w + 1);
                out[row..row + w].copy_from_slice(&levels[y * w..(y + 1) * w]);
            }
        }
        out
    }

    pub fn write_png(&self, path: &Path) -> Result<()> {
        let (width, height) = self.dimensions();
        let file = BufWriter::new(File::create(path)?);
        let mut encoder = png::Encoder::new(file, width as u32, height as u32);
        encoder.set_color(png::ColorType::Grayscale);
        encoder.set_depth(png::BitDepth::Eight);
        let mut writer = encoder.write_header().map_err(|e| EitError::Format(format!("png {}: {e}", path.display())))?;
        writer
            .write_image_data(&self.render())
            .map_err(|e| EitError::Format(format!("png {}: {e}", path.display())))?;
        Ok(())
    }
}

/// Writes a single image as a one-tile PNG.
pub fn write_image_png(path: &Path, image: &[f64], size: GridSize) -> Result<()> {
    let mut m = Mosaic::new(size, 1)?;
    m.push(image)?;
    m.write_png(path)
}
