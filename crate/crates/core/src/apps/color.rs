//! Mini-batch color transfer.
//!
//! Pixels are points in RGB space. Each iteration samples `m` source and `m`
//! target pixels, transports the source colors onto the target colors and
//! moves every sampled source pixel to the barycenter of the target colors
//! it sends mass to (its plan row, normalised by the row mass). A pixel's
//! final color is the average of the barycenters it received; pixels that
//! never received any keep their original color.

use ndarray::{Array2, Axis};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::measure::{DiscreteMeasure, Metric};
use crate::minibatch::{batch_at, solve_batch, BatchSpec};
use crate::solver::SolverKind;

/// Plan rows carrying no more than this mass leave their pixel untouched.
pub const ROW_MASS_TOL: f64 = 1e-12;

/// Batches solved together before their contributions are accumulated.
const CHUNK: usize = 64;

#[derive(Debug, Clone, PartialEq)]
pub struct ImageRGB {
    width: usize,
    height: usize,
    pixels: Vec<[f64; 3]>,
}

impl ImageRGB {
    /// Row-major pixels; channels are clamped into `[0, 1]`.
    pub fn new(width: usize, height: usize, pixels: Vec<[f64; 3]>) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(Error::invalid("image dimensions must be positive"));
        }
        if pixels.len() != width * height {
            return Err(Error::invalid(format!(
                "{} pixels for a {width}x{height} image",
                pixels.len()
            )));
        }
        if pixels.iter().flatten().any(|c| !c.is_finite()) {
            return Err(Error::invalid("non-finite channel value"));
        }
        let pixels = pixels.into_iter().map(|p| p.map(|c| c.clamp(0.0, 1.0))).collect();
        Ok(Self { width, height, pixels })
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn len(&self) -> usize {
        self.pixels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pixels.is_empty()
    }

    pub fn pixels(&self) -> &[[f64; 3]] {
        &self.pixels
    }

    /// The pixels as a uniform cloud in RGB space.
    pub fn to_measure(&self) -> Result<DiscreteMeasure> {
        let pts = Array2::from_shape_fn((self.len(), 3), |(i, c)| self.pixels[i][c]);
        DiscreteMeasure::uniform(pts)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TransferConfig {
    pub num_batches: usize,
    pub batch_size: usize,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TransferResult {
    pub image: ImageRGB,
    /// Number of batches in which each pixel was sampled.
    pub visits: Vec<u32>,
    /// Number of those visits in which the pixel's plan row carried mass.
    pub updates: Vec<u32>,
}

impl TransferResult {
    /// Pixels whose color was never replaced.
    pub fn unmodified(&self) -> usize {
        self.updates.iter().filter(|&&u| u == 0).count()
    }
}

/// Transfers the palette of `target` onto `source` with `k` mini-batches of
/// `m` pixels each (squared-Euclidean ground cost).
pub fn color_transfer(
    source: &ImageRGB,
    target: &ImageRGB,
    kind: &SolverKind,
    config: &TransferConfig,
) -> Result<TransferResult> {
    let (k, m) = (config.num_batches, config.batch_size);
    if m == 0 || m > source.len().min(target.len()) {
        return Err(Error::invalid(format!(
            "batch size {m} must lie in [1, {}]",
            source.len().min(target.len())
        )));
    }
    if k == 0 {
        return Err(Error::invalid("need at least one batch"));
    }
    let solver = kind.build()?;
    let xs = source.to_measure()?;
    let ys = target.to_measure()?;
    let spec = BatchSpec::new(m, k, config.seed);

    let n = source.len();
    let mut acc = vec![[0.0f64; 3]; n];
    let mut visits = vec![0u32; n];
    let mut updates = vec![0u32; n];

    for start in (0..k).step_by(CHUNK) {
        let end = (start + CHUNK).min(k);
        let solved: Vec<_> = (start..end)
            .into_par_iter()
            .map(|i| {
                let pair = batch_at(n, target.len(), &spec, i);
                let plan = solve_batch(&xs, &ys, &pair, solver.as_ref(), Metric::SquaredEuclidean)
                    .map_err(|e| Error::Batch { index: i, source: Box::new(e) })?;
                Ok((pair, plan))
            })
            .collect::<Result<_>>()?;
        for (pair, plan) in solved {
            let colors = ys.points().select(Axis(0), &pair.target);
            for (r, &i) in pair.source.iter().enumerate() {
                visits[i] += 1;
                let row = plan.coupling.row(r);
                let mass = row.sum();
                if mass <= ROW_MASS_TOL {
                    continue;
                }
                updates[i] += 1;
                for (c, slot) in acc[i].iter_mut().enumerate() {
                    *slot += row.dot(&colors.column(c)) / mass;
                }
            }
        }
    }

    let pixels = (0..n)
        .map(|i| {
            if updates[i] == 0 {
                source.pixels[i]
            } else {
                acc[i].map(|c| c / updates[i] as f64)
            }
        })
        .collect();
    let image = ImageRGB::new(source.width, source.height, pixels)?;
    Ok(TransferResult { image, visits, updates })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::partial::PartialParams;

    fn gradient(w: usize, h: usize, tint: [f64; 3]) -> ImageRGB {
        let pixels = (0..w * h)
            .map(|p| {
                let (x, y) = ((p % w) as f64 / w as f64, (p / w) as f64 / h as f64);
                [x * tint[0], y * tint[1], (x + y) / 2.0 * tint[2]]
            })
            .collect();
        ImageRGB::new(w, h, pixels).unwrap()
    }

    #[test]
    fn channels_are_clamped() {
        let img = ImageRGB::new(1, 1, vec![[-0.5, 0.5, 2.0]]).unwrap();
        assert_eq!(img.pixels()[0], [0.0, 0.5, 1.0]);
        assert!(ImageRGB::new(2, 1, vec![[0.0; 3]]).is_err());
    }

    #[test]
    fn two_pixel_matching() {
        let src = ImageRGB::new(2, 1, vec![[0.1, 0.1, 0.1], [0.9, 0.9, 0.9]]).unwrap();
        let tgt = ImageRGB::new(2, 1, vec![[1.0, 0.8, 0.7], [0.0, 0.2, 0.3]]).unwrap();
        let cfg = TransferConfig { num_batches: 1, batch_size: 2, seed: 0 };
        let out = color_transfer(&src, &tgt, &SolverKind::exact_ot(), &cfg).unwrap();
        assert_eq!(out.image.pixels(), &[[0.0, 0.2, 0.3], [1.0, 0.8, 0.7]]);
    }

    #[test]
    fn self_transfer_full_batch_is_identity() {
        let img = gradient(8, 8, [1.0, 0.7, 0.4]);
        let cfg = TransferConfig { num_batches: 1, batch_size: 64, seed: 3 };
        let out = color_transfer(&img, &img, &SolverKind::exact_ot(), &cfg).unwrap();
        for (a, b) in out.image.pixels().iter().zip(img.pixels()) {
            for c in 0..3 {
                assert!((a[c] - b[c]).abs() <= 1e-6);
            }
        }
    }

    #[test]
    fn unvisited_pixels_keep_their_color() {
        let src = gradient(6, 6, [1.0, 1.0, 1.0]);
        let tgt = gradient(6, 6, [0.2, 0.9, 0.5]);
        let cfg = TransferConfig { num_batches: 2, batch_size: 4, seed: 11 };
        let out = color_transfer(&src, &tgt, &SolverKind::exact_ot(), &cfg).unwrap();
        for i in 0..src.len() {
            if out.visits[i] == 0 {
                assert_eq!(out.image.pixels()[i], src.pixels()[i]);
            }
        }
        assert!(out.visits.iter().filter(|&&v| v == 0).count() >= 36 - 8);
    }

    #[test]
    fn smaller_fraction_leaves_more_pixels() {
        let src = gradient(8, 8, [1.0, 1.0, 1.0]);
        let tgt = gradient(8, 8, [0.1, 0.9, 0.3]);
        let cfg = TransferConfig { num_batches: 20, batch_size: 16, seed: 5 };
        let counts: Vec<usize> = [0.5, 0.9, 1.0]
            .iter()
            .map(|&s| {
                let kind = SolverKind::Pot(PartialParams::exact(s));
                color_transfer(&src, &tgt, &kind, &cfg).unwrap().unmodified()
            })
            .collect();
        assert!(counts[0] >= counts[1] && counts[1] >= counts[2], "{counts:?}");
        assert!(counts[0] > counts[2]);
    }

    #[test]
    fn deterministic() {
        let src = gradient(6, 6, [1.0, 1.0, 1.0]);
        let tgt = gradient(6, 6, [0.2, 0.9, 0.5]);
        let cfg = TransferConfig { num_batches: 10, batch_size: 5, seed: 2 };
        let a = color_transfer(&src, &tgt, &SolverKind::exact_ot(), &cfg).unwrap();
        let b = color_transfer(&src, &tgt, &SolverKind::exact_ot(), &cfg).unwrap();
        assert_eq!(a, b);
    }
}
