//! Random 90° rotation and up-down flip applied jointly to geometry images
//! and velocity fields.
//!
//! Scalar images are only re-indexed. Velocity components transform as a
//! vector: a counter-clockwise quarter turn maps `(vx, vy)` to `(-vy, vx)`,
//! an up-down flip maps it to `(vx, -vy)`. Rotation, when drawn, is applied
//! before the flip.

use rand::Rng;

use crate::dataset::Sample;
use crate::error::{Error, Result};
use crate::raster::ScalarField;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AugmentConfig {
    pub enabled: bool,
    pub p_rotate: f64,
    pub p_flip: f64,
}

impl Default for AugmentConfig {
    fn default() -> Self {
        Self { enabled: true, p_rotate: 0.44, p_flip: 0.44 }
    }
}

impl AugmentConfig {
    pub fn disabled() -> Self {
        Self { enabled: false, ..Self::default() }
    }

    pub fn validate(&self) -> Result<()> {
        for p in [self.p_rotate, self.p_flip] {
            if !(0.0..=1.0).contains(&p) {
                return Err(Error::InvalidParams(format!("probability {p} outside [0, 1]")));
            }
        }
        Ok(())
    }
}

/// Element of the group generated by the two transforms.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Transform {
    Identity,
    Rotate,
    Flip,
    /// Rotate, then flip.
    RotateFlip,
}

impl Transform {
    pub const ALL: [Transform; 4] = [Transform::Identity, Transform::Rotate, Transform::Flip, Transform::RotateFlip];

    pub fn new(rotate: bool, flip: bool) -> Self {
        match (rotate, flip) {
            (false, false) => Transform::Identity,
            (true, false) => Transform::Rotate,
            (false, true) => Transform::Flip,
            (true, true) => Transform::RotateFlip,
        }
    }

    pub fn code(self) -> u8 {
        match self {
            Transform::Identity => 0,
            Transform::Rotate => 1,
            Transform::Flip => 2,
            Transform::RotateFlip => 3,
        }
    }

    pub fn from_code(code: u8) -> Result<Self> {
        Transform::ALL.get(code as usize).copied().ok_or(Error::UnknownTransform(code))
    }

    fn parts(self) -> (bool, bool) {
        match self {
            Transform::Identity => (false, false),
            Transform::Rotate => (true, false),
            Transform::Flip => (false, true),
            Transform::RotateFlip => (true, true),
        }
    }

    pub fn apply_scalar(self, field: &ScalarField) -> ScalarField {
        let (rot, flip) = self.parts();
        let mut out = if rot { rot90(field) } else { field.clone() };
        if flip {
            out = flip_ud(&out);
        }
        out
    }

    pub fn apply_vector(self, vx: &ScalarField, vy: &ScalarField) -> (ScalarField, ScalarField) {
        let (rot, flip) = self.parts();
        let (mut x, mut y) = if rot { rot90_vector(vx, vy) } else { (vx.clone(), vy.clone()) };
        if flip {
            (x, y) = flip_vector(&x, &y);
        }
        (x, y)
    }

    /// Maps fields from the transformed frame back to the canonical one.
    pub fn invert_vector(self, vx: &ScalarField, vy: &ScalarField) -> (ScalarField, ScalarField) {
        let (rot, flip) = self.parts();
        let (mut x, mut y) = if flip { flip_vector(vx, vy) } else { (vx.clone(), vy.clone()) };
        if rot {
            for _ in 0..3 {
                (x, y) = rot90_vector(&x, &y);
            }
        }
        (x, y)
    }

    pub fn invert_scalar(self, field: &ScalarField) -> ScalarField {
        let (rot, flip) = self.parts();
        let mut out = if flip { flip_ud(field) } else { field.clone() };
        if rot {
            for _ in 0..3 {
                out = rot90(&out);
            }
        }
        out
    }
}

/// Counter-clockwise quarter turn about the grid centre.
pub fn rot90(field: &ScalarField) -> ScalarField {
    let n = field.n();
    let mut out = field.clone();
    for row in 0..n {
        for col in 0..n {
            out.set(col, row, field.get(row, n - 1 - col));
        }
    }
    out
}

/// Mirror about the horizontal centre line.
pub fn flip_ud(field: &ScalarField) -> ScalarField {
    let n = field.n();
    let mut out = field.clone();
    for row in 0..n {
        for col in 0..n {
            out.set(col, row, field.get(col, n - 1 - row));
        }
    }
    out
}

pub fn rot90_vector(vx: &ScalarField, vy: &ScalarField) -> (ScalarField, ScalarField) {
    (rot90(vy).map(|v| -v), rot90(vx))
}

pub fn flip_vector(vx: &ScalarField, vy: &ScalarField) -> (ScalarField, ScalarField) {
    (flip_ud(vx), flip_ud(vy).map(|v| -v))
}

/// Draws each transform independently and applies the result to every
/// field of the sample.
pub fn augment_sample<R: Rng + ?Sized>(sample: &Sample, config: &AugmentConfig, rng: &mut R) -> (Sample, Transform) {
    let transform = if config.enabled {
        let rotate = rng.gen_bool(config.p_rotate);
        let flip = rng.gen_bool(config.p_flip);
        Transform::new(rotate, flip)
    } else {
        Transform::Identity
    };
    (apply_transform(sample, transform), transform)
}

pub fn apply_transform(sample: &Sample, transform: Transform) -> Sample {
    if transform == Transform::Identity {
        return sample.clone();
    }
    let (vx, vy) = transform.apply_vector(&sample.vx, &sample.vy);
    Sample {
        binary: transform.apply_scalar(&sample.binary),
        sdf: transform.apply_scalar(&sample.sdf),
        mask: transform.apply_scalar(&sample.mask),
        vx,
        vy,
        ..sample.clone()
    }
}

/// Brings predicted velocity fields back to the canonical frame.
pub fn transform_prediction_frame(vx: &ScalarField, vy: &ScalarField, record: u8) -> Result<(ScalarField, ScalarField)> {
    Ok(Transform::from_code(record)?.invert_vector(vx, vy))
}
