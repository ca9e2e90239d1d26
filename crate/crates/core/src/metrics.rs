//! Image comparison metrics on the pixel grid.

use serde::{Deserialize, Serialize};

use crate::error::{check_len, invalid, Result};
use crate::geometry::GridSize;

/// Fraction of the maximum absolute value used to define an image's support.
pub const SUPPORT_THRESHOLD: f64 = 0.5;

/// `‖estimate − truth‖ / ‖truth‖`.
pub fn relative_l2(estimate: &[f64], truth: &[f64]) -> Result<f64> {
    check_len("image", truth.len(), estimate.len())?;
    let num: f64 = estimate.iter().zip(truth).map(|(a, b)| (a - b).powi(2)).sum();
    let den: f64 = truth.iter().map(|b| b * b).sum();
    if den == 0.0 {
        return Err(invalid("reference image", "has zero norm"));
    }
    Ok((num / den).sqrt())
}

/// Pixels with `|value| ≥ fraction × max |value|`; empty for an all-zero image.
pub fn support(image: &[f64], fraction: f64) -> Vec<bool> {
    let top = image.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    if top == 0.0 {
        return vec![false; image.len()];
    }
    image.iter().map(|v| v.abs() >= fraction * top).collect()
}

/// 4-connected components of a boolean mask, labelled from 1; 0 marks background.
pub fn label_components(mask: &[bool], size: GridSize) -> Result<(usize, Vec<usize>)> {
    check_len("mask", size.width * size.height, mask.len())?;
    let (w, h) = (size.width, size.height);
    let mut labels = vec![0; mask.len()];
    let mut count = 0;
    let mut stack = Vec::new();
    for start in 0..mask.len() {
        if !mask[start] || labels[start] != 0 {
            continue;
        }
        count += 1;
        labels[start] = count;
        stack.push(start);
        while let Some(p) = stack.pop() {
            let (x, y) = (p % w, p / w);
            let mut visit = |q: usize| {
                if mask[q] && labels[q] == 0 {
                    labels[q] = count;
                    stack.push(q);
                }
            };
            if x > 0 {
                visit(p - 1);
            }
            if x + 1 < w {
                visit(p + 1);
            }
            if y > 0 {
                visit(p - w);
            }
            if y + 1 < h {
                visit(p + w);
            }
        }
    }
    Ok((count, labels))
}

/// Number of 4-connected components of the 50%-of-max support.
pub fn component_count(image: &[f64], size: GridSize) -> Result<usize> {
    Ok(label_components(&support(image, SUPPORT_THRESHOLD), size)?.0)
}

/// Dice overlap `2|A∩B| / (|A|+|B|)` of the two 50%-of-max supports; 1 when both are empty.
pub fn dice(estimate: &[f64], truth: &[f64]) -> Result<f64> {
    check_len("image", truth.len(), estimate.len())?;
    let (a, b) = (support(estimate, SUPPORT_THRESHOLD), support(truth, SUPPORT_THRESHOLD));
    let both = a.iter().zip(&b).filter(|(x, y)| **x && **y).count();
    let total = a.iter().filter(|x| **x).count() + b.iter().filter(|x| **x).count();
    Ok(if total == 0 { 1.0 } else { 2.0 * both as f64 / total as f64 })
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ImageMetrics {
    pub relative_l2: f64,
    pub dice: f64,
    pub components: usize,
}

pub fn evaluate(estimate: &[f64], truth: &[f64], size: GridSize) -> Result<ImageMetrics> {
    Ok(ImageMetrics {
        relative_l2: relative_l2(estimate, truth)?,
        dice: dice(estimate, truth)?,
        components: component_count(estimate, size)?,
    })
}
