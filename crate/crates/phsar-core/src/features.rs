//! Patch features: gradient orientation, strength and coherence from the
//! structure tensor, plus the PST response, embedded into the 5-component
//! vector used for clustering.
//!
//! The orientation enters the embedding as (cos 2θ, sin 2θ) rather than raw
//! θ: orientation is π-periodic and the raw angle is discontinuous at the
//! 0/π wrap, which would corrupt Euclidean distances. The four semantic
//! features therefore occupy five embedding components.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::image::Patch;

/// Structure-tensor summary of one patch.
///
/// `angle` is the dominant gradient orientation in [0, π); `strength` is the
/// square root of the dominant eigenvalue; `coherence` in [0, 1] measures how
/// anisotropic the gradient distribution is. A zero-gradient patch reports
/// (0, 0, 0).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GradientFeatures {
    pub angle: f64,
    pub strength: f64,
    pub coherence: f64,
}

/// Per-component weights applied when assembling the clustering embedding.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FeatureWeights {
    pub strength: f64,
    pub coherence: f64,
    pub angle: f64,
    pub pst: f64,
}

impl Default for FeatureWeights {
    fn default() -> Self {
        FeatureWeights {
            strength: 1.0,
            coherence: 1.0,
            angle: 1.0,
            pst: 1.0,
        }
    }
}

impl FeatureWeights {
    pub fn validate(&self) -> Result<()> {
        for (name, w) in [
            ("strength", self.strength),
            ("coherence", self.coherence),
            ("angle", self.angle),
            ("pst", self.pst),
        ] {
            if !w.is_finite() || w < 0.0 {
                return Err(Error::Argument(format!(
                    "feature weight {name} must be finite and >= 0, got {w}"
                )));
            }
        }
        Ok(())
    }
}

/// The 5-component clustering embedding:
/// `[strength·wS, coherence·wC, cos(2θ)·wA, sin(2θ)·wA, (pst/π)·wP]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FeatureVector(pub [f64; 5]);

pub const FEATURE_DIM: usize = 5;

impl FeatureVector {
    pub const ZERO: FeatureVector = FeatureVector([0.0; 5]);

    #[inline]
    pub fn dist_sq(&self, other: &FeatureVector) -> f64 {
        let mut acc = 0.0;
        for i in 0..FEATURE_DIM {
            let d = self.0[i] - other.0[i];
            acc += d * d;
        }
        acc
    }
}

/// Central-difference gradients over the patch (one-sided at the borders),
/// accumulated into the 2x2 structure tensor and reduced by its closed-form
/// eigendecomposition.
pub fn gradient_features(patch: &Patch) -> GradientFeatures {
    let n = patch.size();
    let mut sxx = 0.0;
    let mut sxy = 0.0;
    let mut syy = 0.0;
    for y in 0..n {
        for x in 0..n {
            let gx = if x == 0 {
                patch.value_at(1, y) - patch.value_at(0, y)
            } else if x == n - 1 {
                patch.value_at(n - 1, y) - patch.value_at(n - 2, y)
            } else {
                0.5 * (patch.value_at(x + 1, y) - patch.value_at(x - 1, y))
            };
            let gy = if y == 0 {
                patch.value_at(x, 1) - patch.value_at(x, 0)
            } else if y == n - 1 {
                patch.value_at(x, n - 1) - patch.value_at(x, n - 2)
            } else {
                0.5 * (patch.value_at(x, y + 1) - patch.value_at(x, y - 1))
            };
            sxx += gx * gx;
            sxy += gx * gy;
            syy += gy * gy;
        }
    }

    let mean = 0.5 * (sxx + syy);
    let half_diff = 0.5 * (sxx - syy);
    let disc = (half_diff * half_diff + sxy * sxy).sqrt();
    let lambda1 = (mean + disc).max(0.0);
    let lambda2 = (mean - disc).max(0.0);

    if lambda1 <= 0.0 {
        return GradientFeatures {
            angle: 0.0,
            strength: 0.0,
            coherence: 0.0,
        };
    }

    let s1 = lambda1.sqrt();
    let s2 = lambda2.sqrt();
    let coherence = (s1 - s2) / (s1 + s2);

    // Dominant eigenvector: both algebraic forms are valid; take the better
    // conditioned one. Both vanish only for an isotropic tensor, where the
    // orientation is undefined and reported as 0.
    let v1 = (sxy, lambda1 - sxx);
    let v2 = (lambda1 - syy, sxy);
    let (vx, vy) = if v1.0 * v1.0 + v1.1 * v1.1 >= v2.0 * v2.0 + v2.1 * v2.1 {
        v1
    } else {
        v2
    };
    let angle = if vx == 0.0 && vy == 0.0 {
        0.0
    } else {
        let mut a = vy.atan2(vx);
        if a < 0.0 {
            a += PI;
        }
        if a >= PI {
            a -= PI;
        }
        a
    };

    GradientFeatures {
        angle,
        strength: s1,
        coherence,
    }
}

/// Builds the clustering embedding from gradient features and the PST value.
/// Degenerate (zero-strength) patches contribute zero orientation components
/// so that flat regions land on the all-zero vector.
pub fn assemble_feature(
    g: &GradientFeatures,
    pst_value: f64,
    weights: &FeatureWeights,
) -> Result<FeatureVector> {
    weights.validate()?;
    Ok(assemble_unchecked(g, pst_value, weights))
}

/// Hot-path variant for callers that validated the weights once up front.
pub(crate) fn assemble_unchecked(
    g: &GradientFeatures,
    pst_value: f64,
    weights: &FeatureWeights,
) -> FeatureVector {
    let (cos2, sin2) = if g.strength > 0.0 {
        ((2.0 * g.angle).cos(), (2.0 * g.angle).sin())
    } else {
        (0.0, 0.0)
    };
    FeatureVector([
        g.strength * weights.strength,
        g.coherence * weights.coherence,
        cos2 * weights.angle,
        sin2 * weights.angle,
        (pst_value / PI) * weights.pst,
    ])
}
