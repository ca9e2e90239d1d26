use serde::{Deserialize, Serialize};

use super::mesh::Mesh;
use crate::error::{check_len, invalid, Result};

/// Row-major pixel grid over the mesh bounding box; row 0 is the top edge.
/// A pixel belongs to the lowest-indexed element containing its center.
#[derive(Clone, Debug)]
pub struct PixelGrid {
    width: usize,
    height: usize,
    origin: [f64; 2],
    step: [f64; 2],
    element_of_pixel: Vec<Option<usize>>,
    pixels_of_element: Vec<Vec<usize>>,
    centroid_pixel: Vec<usize>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct GridSize {
    pub width: usize,
    pub height: usize,
}

const INSIDE_EPS: f64 = 1e-12;

fn barycentric_inside(p: [f64; 2], v: &[[f64; 2]; 3]) -> bool {
    let d = (v[1][1] - v[2][1]) * (v[0][0] - v[2][0]) + (v[2][0] - v[1][0]) * (v[0][1] - v[2][1]);
    let l0 = ((v[1][1] - v[2][1]) * (p[0] - v[2][0]) + (v[2][0] - v[1][0]) * (p[1] - v[2][1])) / d;
    let l1 = ((v[2][1] - v[0][1]) * (p[0] - v[2][0]) + (v[0][0] - v[2][0]) * (p[1] - v[2][1])) / d;
    let l2 = 1.0 - l0 - l1;
    l0 >= -INSIDE_EPS && l1 >= -INSIDE_EPS && l2 >= -INSIDE_EPS
}

impl PixelGrid {
    pub fn new(mesh: &Mesh, width: usize, height: usize) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(invalid("grid", format!("{width}x{height} has no pixels")));
        }
        let (lo, hi) = mesh.bounding_box();
        let step = [(hi[0] - lo[0]) / width as f64, (hi[1] - lo[1]) / height as f64];
        let origin = [lo[0], hi[1]];
        let mut grid = Self {
            width,
            height,
            origin,
            step,
            element_of_pixel: vec![None; width * height],
            pixels_of_element: vec![Vec::new(); mesh.element_count()],
            centroid_pixel: Vec::with_capacity(mesh.element_count()),
        };
        for e in 0..mesh.element_count() {
            let v = mesh.vertices(e);
            let xmin = v.iter().map(|p| p[0]).fold(f64::INFINITY, f64::min);
            let xmax = v.iter().map(|p| p[0]).fold(f64::NEG_INFINITY, f64::max);
            let ymin = v.iter().map(|p| p[1]).fold(f64::INFINITY, f64::min);
            let ymax = v.iter().map(|p| p[1]).fold(f64::NEG_INFINITY, f64::max);
            let c0 = grid.col_floor(xmin);
            let c1 = grid.col_floor(xmax);
            let r0 = grid.row_floor(ymax);
            let r1 = grid.row_floor(ymin);
            for r in r0..=r1 {
                for c in c0..=c1 {
                    let pix = r * width + c;
                    if grid.element_of_pixel[pix].is_none() && barycentric_inside(grid.pixel_center(pix), &v) {
                        grid.element_of_pixel[pix] = Some(e);
                        grid.pixels_of_element[e].push(pix);
                    }
                }
            }
            let cen = mesh.centroid(e);
            grid.centroid_pixel.push(grid.row_floor(cen[1]) * width + grid.col_floor(cen[0]));
        }
        Ok(grid)
    }

    pub fn square(mesh: &Mesh, n: usize) -> Result<Self> {
        Self::new(mesh, n, n)
    }

    fn col_floor(&self, x: f64) -> usize {
        (((x - self.origin[0]) / self.step[0]).floor().max(0.0) as usize).min(self.width - 1)
    }

    fn row_floor(&self, y: f64) -> usize {
        (((self.origin[1] - y) / self.step[1]).floor().max(0.0) as usize).min(self.height - 1)
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn size(&self) -> GridSize {
        GridSize {
            width: self.width,
            height: self.height,
        }
    }

    pub fn len(&self) -> usize {
        self.width * self.height
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn pixel_center(&self, pixel: usize) -> [f64; 2] {
        let (r, c) = (pixel / self.width, pixel % self.width);
        [
            self.origin[0] + (c as f64 + 0.5) * self.step[0],
            self.origin[1] - (r as f64 + 0.5) * self.step[1],
        ]
    }

    pub fn element_at(&self, pixel: usize) -> Option<usize> {
        self.element_of_pixel[pixel]
    }

    pub fn is_inside(&self, pixel: usize) -> bool {
        self.element_of_pixel[pixel].is_some()
    }

    pub fn mask(&self) -> Vec<bool> {
        self.element_of_pixel.iter().map(Option::is_some).collect()
    }

    pub fn pixels_of(&self, e: usize) -> &[usize] {
        &self.pixels_of_element[e]
    }

    /// Paints each inside pixel with its element's value; outside pixels are 0.
    pub fn rasterize(&self, values: &[f64]) -> Result<Vec<f64>> {
        check_len("element values", self.pixels_of_element.len(), values.len())?;
        Ok(self
            .element_of_pixel
            .iter()
            .map(|e| e.map_or(0.0, |e| values[e]))
            .collect())
    }

    /// Mean over each element's pixels; elements smaller than a pixel take the
    /// value of the pixel containing their centroid.
    pub fn sample_to_elements(&self, image: &[f64]) -> Result<Vec<f64>> {
        check_len("image", self.len(), image.len())?;
        Ok(self
            .pixels_of_element
            .iter()
            .zip(&self.centroid_pixel)
            .map(|(pix, &cp)| {
                if pix.is_empty() {
                    image[cp]
                } else {
                    // offset from the first pixel keeps constant elements exact
                    let first = image[pix[0]];
                    first + pix.iter().map(|&p| image[p] - first).sum::<f64>() / pix.len() as f64
                }
            })
            .collect())
    }
}
