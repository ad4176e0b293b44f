//! Gaussian target heatmaps.
//!
//! Each landmark channel is the pointwise maximum of isotropic, peak-one
//! Gaussians placed at that landmark's instances. Channels can optionally be
//! divided by their own mean.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::Tensor;

/// Sub-pixel image coordinate.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Point {
    pub row: f64,
    pub col: f64,
}

impl Point {
    pub fn new(row: f64, col: f64) -> Self {
        Self { row, col }
    }

    pub fn distance(&self, other: &Point) -> f64 {
        (self.row - other.row).hypot(self.col - other.col)
    }
}

/// Instances per landmark; an empty list marks an absent landmark.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct LandmarkSet {
    pub landmarks: Vec<Vec<Point>>,
}

impl LandmarkSet {
    pub fn new(landmarks: Vec<Vec<Point>>) -> Self {
        Self { landmarks }
    }

    /// One instance per landmark.
    pub fn single(points: &[Point]) -> Self {
        Self {
            landmarks: points.iter().map(|p| vec![*p]).collect(),
        }
    }

    pub fn len(&self) -> usize {
        self.landmarks.len()
    }

    pub fn is_empty(&self) -> bool {
        self.landmarks.is_empty()
    }

    pub fn instances(&self, landmark: usize) -> &[Point] {
        &self.landmarks[landmark]
    }

    pub fn check_bounds(&self, height: usize, width: usize) -> Result<()> {
        for (l, instances) in self.landmarks.iter().enumerate() {
            for p in instances {
                let inside = p.row >= 0.0
                    && p.row < height as f64
                    && p.col >= 0.0
                    && p.col < width as f64;
                if !inside {
                    return Err(Error::invalid(format!(
                        "landmark {l} at ({}, {}) lies outside {height}x{width}",
                        p.row, p.col
                    )));
                }
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TargetSpec {
    /// Per-landmark standard deviation in pixels.
    pub sigmas: Vec<f64>,
    pub height: usize,
    pub width: usize,
    pub normalize_by_mean: bool,
}

impl TargetSpec {
    /// Every landmark starts at [`initial_sigma`] of the resolution.
    pub fn initial(landmarks: usize, height: usize, width: usize, normalize_by_mean: bool) -> Self {
        Self {
            sigmas: vec![initial_sigma(height, width); landmarks],
            height,
            width,
            normalize_by_mean,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.sigmas.is_empty() {
            return Err(Error::invalid("target spec needs at least one landmark"));
        }
        if let Some(s) = self.sigmas.iter().find(|s| !(**s > 0.0) || !s.is_finite()) {
            return Err(Error::invalid(format!("sigma must be positive and finite, got {s}")));
        }
        if self.height == 0 || self.width == 0 {
            return Err(Error::invalid("target resolution must be positive"));
        }
        Ok(())
    }
}

/// Starting standard deviation: a quarter of the smaller image extent.
pub fn initial_sigma(height: usize, width: usize) -> f64 {
    height.min(width) as f64 / 4.0
}

/// Renders the `(L, H, W)` target stack for one sample.
pub fn render_targets(gt: &LandmarkSet, spec: &TargetSpec) -> Result<Tensor> {
    let mut out = Tensor::zeros(&[spec.sigmas.len(), spec.height, spec.width]);
    render_into(gt, spec, out.data_mut())?;
    Ok(out)
}

/// Like [`render_targets`] but writes into a caller-provided `L·H·W` buffer.
pub fn render_into(gt: &LandmarkSet, spec: &TargetSpec, out: &mut [f64]) -> Result<()> {
    spec.validate()?;
    if gt.len() != spec.sigmas.len() {
        return Err(Error::invalid(format!(
            "{} landmarks but {} sigmas",
            gt.len(),
            spec.sigmas.len()
        )));
    }
    gt.check_bounds(spec.height, spec.width)?;
    let (h, w) = (spec.height, spec.width);
    if out.len() != gt.len() * h * w {
        return Err(Error::ShapeMismatch {
            expected: vec![gt.len(), h, w],
            actual: vec![out.len()],
        });
    }
    for ((channel, instances), &sigma) in out.chunks_exact_mut(h * w).zip(&gt.landmarks).zip(&spec.sigmas) {
        channel.fill(0.0);
        if instances.is_empty() {
            continue;
        }
        let inv = 1.0 / (2.0 * sigma * sigma);
        for p in instances {
            for r in 0..h {
                let dr = r as f64 - p.row;
                let row = &mut channel[r * w..(r + 1) * w];
                for (c, v) in row.iter_mut().enumerate() {
                    let dc = c as f64 - p.col;
                    let g = (-(dr * dr + dc * dc) * inv).exp();
                    if g > *v {
                        *v = g;
                    }
                }
            }
        }
        if spec.normalize_by_mean {
            let mean = channel.iter().sum::<f64>() / channel.len() as f64;
            if mean > 0.0 {
                channel.iter_mut().for_each(|v| *v /= mean);
            }
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn spec(sigma: f64, h: usize, w: usize) -> TargetSpec {
        TargetSpec {
            sigmas: vec![sigma],
            height: h,
            width: w,
            normalize_by_mean: false,
        }
    }

    #[test]
    fn peak_is_one_at_integer_centre() {
        let gt = LandmarkSet::single(&[Point::new(10.0, 7.0)]);
        for sigma in [0.5, 1.0, 3.3, 16.0] {
            let t = render_targets(&gt, &spec(sigma, 32, 20)).unwrap();
            assert_eq!(t.data()[10 * 20 + 7], 1.0);
        }
    }

    #[test]
    fn value_one_sigma_away() {
        let gt = LandmarkSet::single(&[Point::new(20.0, 20.0)]);
        let t = render_targets(&gt, &spec(5.0, 64, 64)).unwrap();
        // (20, 25): 5 px from the peak; exp(-25 / 50)
        assert!((t.data()[20 * 64 + 25] - 0.606_530_659_712_633_4).abs() < 1e-15);
        assert!((t.data()[17 * 64 + 24] - 0.606_530_659_712_633_4).abs() < 1e-15);
    }

    #[test]
    fn two_instances_keep_separate_unit_peaks() {
        let gt = LandmarkSet::new(vec![vec![Point::new(32.0, 12.0), Point::new(32.0, 52.0)]]);
        let t = render_targets(&gt, &spec(5.0, 64, 64)).unwrap();
        let d = t.data();
        assert_eq!(d[32 * 64 + 12], 1.0);
        assert_eq!(d[32 * 64 + 52], 1.0);
        // midpoint is 20 px from both: exp(-400 / 50)
        let mid = d[32 * 64 + 32];
        assert!((mid - (-8.0f64).exp()).abs() < 1e-15);
        assert!(mid < 1e-3);
    }

    #[test]
    fn absent_landmark_renders_zero_even_when_normalized() {
        let gt = LandmarkSet::new(vec![vec![], vec![Point::new(3.0, 3.0)]]);
        let spec = TargetSpec {
            sigmas: vec![2.0, 2.0],
            height: 8,
            width: 8,
            normalize_by_mean: true,
        };
        let t = render_targets(&gt, &spec).unwrap();
        assert!(t.data()[..64].iter().all(|&v| v == 0.0));
        let mean = t.data()[64..].iter().sum::<f64>() / 64.0;
        assert!((mean - 1.0).abs() < 1e-12);
    }

    #[test]
    fn rejects_bad_sigma_and_out_of_bounds() {
        let gt = LandmarkSet::single(&[Point::new(1.0, 1.0)]);
        assert!(render_targets(&gt, &spec(0.0, 8, 8)).is_err());
        assert!(render_targets(&gt, &spec(-1.0, 8, 8)).is_err());
        let out = LandmarkSet::single(&[Point::new(8.0, 1.0)]);
        assert!(render_targets(&out, &spec(1.0, 8, 8)).is_err());
        let neg = LandmarkSet::single(&[Point::new(1.0, -0.1)]);
        assert!(render_targets(&neg, &spec(1.0, 8, 8)).is_err());
    }

    #[test]
    fn initial_sigma_uses_smaller_extent() {
        assert_eq!(initial_sigma(256, 256), 64.0);
        assert_eq!(initial_sigma(64, 64), 16.0);
        assert_eq!(initial_sigma(64, 128), 16.0);
    }

    proptest! {
        #[test]
        fn sharpening_never_raises_off_centre_values(
            r in 0.0f64..24.0, c in 0.0f64..24.0, s_hi in 1.0f64..8.0, frac in 0.1f64..1.0,
        ) {
            let gt = LandmarkSet::single(&[Point::new(r.floor(), c.floor())]);
            let wide = render_targets(&gt, &spec(s_hi, 24, 24)).unwrap();
            let narrow = render_targets(&gt, &spec(s_hi * frac, 24, 24)).unwrap();
            for (a, b) in wide.data().iter().zip(narrow.data()) {
                prop_assert!(b <= a);
            }
            let centre = r.floor() as usize * 24 + c.floor() as usize;
            prop_assert_eq!(narrow.data()[centre], 1.0);
        }

        #[test]
        fn normalized_channels_have_unit_mean(
            r in 0.0f64..16.0, c in 0.0f64..20.0, sigma in 0.5f64..10.0,
        ) {
            let gt = LandmarkSet::single(&[Point::new(r, c)]);
            let mut s = spec(sigma, 16, 20);
            s.normalize_by_mean = true;
            let t = render_targets(&gt, &s).unwrap();
            let mean = t.data().iter().sum::<f64>() / t.len() as f64;
            prop_assert!((mean - 1.0).abs() < 1e-12);
        }

        #[test]
        fn reflection_through_centre_reflects_the_render(
            r in 0.0f64..15.0, c in 0.0f64..15.0, sigma in 0.5f64..6.0,
        ) {
            let n = 16usize;
            let gt = LandmarkSet::single(&[Point::new(r, c)]);
            let mirrored = LandmarkSet::single(&[Point::new((n - 1) as f64 - r, (n - 1) as f64 - c)]);
            let a = render_targets(&gt, &spec(sigma, n, n)).unwrap();
            let b = render_targets(&mirrored, &spec(sigma, n, n)).unwrap();
            for i in 0..n {
                for j in 0..n {
                    let x = a.data()[i * n + j];
                    let y = b.data()[(n - 1 - i) * n + (n - 1 - j)];
                    prop_assert!((x - y).abs() < 1e-12);
                }
            }
        }
    }
}
