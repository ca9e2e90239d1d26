//! Two-ellipse lung ventilation phantoms.

use std::f64::consts::PI;
use std::fmt;
use std::str::FromStr;

use diffkit::{derive_seed, seeded_rng};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, EitError, Result};
use crate::geometry::{DomainShape, Mesh};

/// Sampling ranges, as fractions of the domain semi-axes where lengths are involved.
pub const CENTER_X: (f64, f64) = (0.42, 0.50);
pub const CENTER_Y: (f64, f64) = (-0.05, 0.15);
pub const AXIS_X: (f64, f64) = (0.20, 0.28);
pub const AXIS_Y: (f64, f64) = (0.40, 0.55);
pub const ROTATION: (f64, f64) = (-0.15, 0.15);
pub const AMPLITUDE: (f64, f64) = (-0.6, -0.3);
pub const PHASE: (f64, f64) = (0.5, 1.0);
pub const DEPTH_OFFSET: (f64, f64) = (0.25, 0.35);
/// Amplitudes never reach this, so `1 + γ̇` stays positive.
pub const MIN_AMPLITUDE: f64 = -0.9;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Family {
    Normal,
    Obese,
    Mixed,
}

impl fmt::Display for Family {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Family::Normal => "normal",
            Family::Obese => "obese",
            Family::Mixed => "mixed",
        })
    }
}

impl FromStr for Family {
    type Err = EitError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "normal" => Ok(Family::Normal),
            "obese" => Ok(Family::Obese),
            "mixed" => Ok(Family::Mixed),
            other => Err(invalid("phantom family", format!("expected normal, obese or mixed, got {other:?}"))),
        }
    }
}

/// One elliptical lung at full inhalation.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Lung {
    pub center: [f64; 2],
    pub semi_axes: [f64; 2],
    pub rotation: f64,
    pub amplitude: f64,
}

impl Lung {
    /// `true` when `p` lies strictly inside the ellipse.
    pub fn contains(&self, p: [f64; 2]) -> bool {
        let (dx, dy) = (p[0] - self.center[0], p[1] - self.center[1]);
        let (s, c) = self.rotation.sin_cos();
        let u = c * dx + s * dy;
        let v = -s * dx + c * dy;
        (u / self.semi_axes[0]).powi(2) + (v / self.semi_axes[1]).powi(2) < 1.0
    }

    pub fn area(&self) -> f64 {
        PI * self.semi_axes[0] * self.semi_axes[1]
    }

    /// Point on the outline at parameter angle `t`.
    pub fn outline(&self, t: f64) -> [f64; 2] {
        let (u, v) = (self.semi_axes[0] * t.cos(), self.semi_axes[1] * t.sin());
        let (s, c) = self.rotation.sin_cos();
        [self.center[0] + c * u - s * v, self.center[1] + s * u + c * v]
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LungPhantomParams {
    pub left: Lung,
    pub right: Lung,
    /// Fractional inward shift toward the domain center; 0 for the normal family.
    pub depth_offset: f64,
    /// 0 is full exhalation (no change), 1 full inhalation.
    pub ventilation_phase: f64,
}

fn lerp(a: f64, b: f64, t: f64) -> f64 {
    a + t * (b - a)
}

impl Lung {
    fn lerp(&self, other: &Lung, t: f64) -> Lung {
        Lung {
            center: [lerp(self.center[0], other.center[0], t), lerp(self.center[1], other.center[1], t)],
            semi_axes: [lerp(self.semi_axes[0], other.semi_axes[0], t), lerp(self.semi_axes[1], other.semi_axes[1], t)],
            rotation: lerp(self.rotation, other.rotation, t),
            amplitude: lerp(self.amplitude, other.amplitude, t),
        }
    }
}

impl LungPhantomParams {
    /// Field-wise linear blend; `t = 0` gives `self`, `t = 1` gives `other`.
    pub fn lerp(&self, other: &Self, t: f64) -> Self {
        Self {
            left: self.left.lerp(&other.left, t),
            right: self.right.lerp(&other.right, t),
            depth_offset: lerp(self.depth_offset, other.depth_offset, t),
            ventilation_phase: lerp(self.ventilation_phase, other.ventilation_phase, t),
        }
    }

    /// The two lungs after depth offset and ventilation phase are applied.
    pub fn lungs(&self) -> [Lung; 2] {
        let shrink = 1.0 - self.depth_offset;
        let breathe = 0.75 + 0.25 * self.ventilation_phase;
        [self.left, self.right].map(|l| Lung {
            center: [l.center[0] * shrink, l.center[1] * shrink],
            semi_axes: [l.semi_axes[0] * shrink * breathe, l.semi_axes[1] * shrink * breathe],
            rotation: l.rotation,
            amplitude: l.amplitude * self.ventilation_phase,
        })
    }

    pub fn validate(&self) -> Result<()> {
        for l in [self.left, self.right] {
            if !(l.amplitude >= MIN_AMPLITUDE && l.amplitude < 0.0) {
                return Err(invalid("lung amplitude", format!("must lie in [{MIN_AMPLITUDE}, 0), got {}", l.amplitude)));
            }
            if !(l.semi_axes[0] > 0.0 && l.semi_axes[1] > 0.0) {
                return Err(invalid("lung semi-axes", format!("must be positive, got {:?}", l.semi_axes)));
            }
        }
        if !(0.0..1.0).contains(&self.depth_offset) {
            return Err(invalid("depth offset", format!("must lie in [0, 1), got {}", self.depth_offset)));
        }
        if !(0.0..=1.0).contains(&self.ventilation_phase) {
            return Err(invalid("ventilation phase", format!("must lie in [0, 1], got {}", self.ventilation_phase)));
        }
        Ok(())
    }

    /// Smallest distance from either lung outline to the mesh boundary.
    pub fn boundary_clearance(&self, mesh: &Mesh) -> f64 {
        self.lungs()
            .iter()
            .flat_map(|l| (0..256).map(move |i| l.outline(2.0 * PI * i as f64 / 256.0)))
            .map(|p| mesh.distance_to_boundary(p))
            .fold(f64::INFINITY, f64::min)
    }
}

fn draw(rng: &mut impl Rng, range: (f64, f64)) -> f64 {
    rng.random_range(range.0..range.1)
}

fn sample_lung(rng: &mut impl Rng, a: f64, b: f64, side: f64) -> Lung {
    let cx = draw(rng, CENTER_X) * a;
    let cy = draw(rng, CENTER_Y) * b;
    let ax = draw(rng, AXIS_X) * a;
    let ay = draw(rng, AXIS_Y) * b;
    let rot = draw(rng, ROTATION);
    let amp = draw(rng, AMPLITUDE);
    Lung {
        center: [side * cx, cy],
        semi_axes: [ax, ay],
        rotation: side * rot,
        amplitude: amp,
    }
}

/// Deterministic phantom for `seed`. The obese family shares every draw with the
/// normal family for the same seed and adds the depth offset on top.
pub fn sample_phantom(family: Family, domain: &DomainShape, seed: u64) -> LungPhantomParams {
    let (a, b) = domain.semi_axes();
    let mut rng = seeded_rng(seed);
    let right = sample_lung(&mut rng, a, b, 1.0);
    let left = sample_lung(&mut rng, a, b, -1.0);
    let phase = draw(&mut rng, PHASE);
    let depth = draw(&mut rng, DEPTH_OFFSET);
    let obese = match family {
        Family::Normal => false,
        Family::Obese => true,
        Family::Mixed => seeded_rng(derive_seed(seed, "family", 0)).random_bool(0.5),
    };
    LungPhantomParams {
        left,
        right,
        depth_offset: if obese { depth } else { 0.0 },
        ventilation_phase: phase,
    }
}

/// Element-wise conductivity change: a lung's amplitude where its ellipse contains
/// the element centroid, zero elsewhere.
pub fn render(params: &LungPhantomParams, mesh: &Mesh) -> Vec<f64> {
    let lungs = params.lungs();
    (0..mesh.element_count())
        .map(|m| {
            let c = mesh.centroid(m);
            lungs.iter().find(|l| l.contains(c)).map_or(0.0, |l| l.amplitude)
        })
        .collect()
}
