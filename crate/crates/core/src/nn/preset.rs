//! Desk-scale encoder–decoder heatmap regressor.

use serde::{Deserialize, Serialize};

use super::network::{GraphBuilder, Network};
use crate::error::{Error, Result};

/// Configuration of the U-shaped preset.
///
/// Three stride-2 convolutions halve the grid down to `H/8`; three
/// nearest-upsample stages bring it back, each followed by a convolution over
/// the concatenation with the matching encoder activation. A 1×1 head maps to
/// one channel per landmark.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct UNetConfig {
    pub in_channels: usize,
    pub landmarks: usize,
    pub height: usize,
    pub width: usize,
    /// Encoder widths at full, half and quarter resolution; the bottleneck reuses the last.
    pub widths: [usize; 3],
    pub kernel: usize,
    pub leaky_slope: f64,
    pub seed: u64,
}

impl Default for UNetConfig {
    fn default() -> Self {
        Self {
            in_channels: 1,
            landmarks: 1,
            height: 64,
            width: 64,
            widths: [8, 16, 32],
            kernel: 3,
            leaky_slope: 0.01,
            seed: 0,
        }
    }
}

impl UNetConfig {
    pub fn validate(&self) -> Result<()> {
        if self.in_channels == 0 || self.landmarks == 0 {
            return Err(Error::invalid("channel counts must be positive"));
        }
        if self.height == 0 || self.width == 0 || self.height % 8 != 0 || self.width % 8 != 0 {
            return Err(Error::invalid(format!(
                "resolution {}x{} must be a positive multiple of 8",
                self.height, self.width
            )));
        }
        if self.widths.contains(&0) {
            return Err(Error::invalid("layer widths must be positive"));
        }
        if self.kernel % 2 == 0 {
            return Err(Error::invalid("kernel size must be odd"));
        }
        Ok(())
    }

    /// Builds and initializes the network.
    pub fn build(&self) -> Result<Network> {
        self.validate()?;
        let [w0, w1, w2] = self.widths;
        let k = self.kernel;
        let slope = self.leaky_slope;
        let mut b = GraphBuilder::new(self.in_channels, self.height, self.width);

        let x = b.input();
        let e0 = b.conv("enc0", x, w0, k, 1, true)?;
        let e0 = b.leaky_relu(e0, slope);
        let e1 = b.conv("enc1", e0, w1, k, 2, true)?;
        let e1 = b.leaky_relu(e1, slope);
        let e2 = b.conv("enc2", e1, w2, k, 2, true)?;
        let e2 = b.leaky_relu(e2, slope);
        let bott = b.conv("bottleneck", e2, w2, k, 2, true)?;
        let bott = b.leaky_relu(bott, slope);

        let u2 = b.upsample(bott, 2);
        let c2 = b.concat(&[u2, e2])?;
        let d2 = b.conv("dec2", c2, w1, k, 1, true)?;
        let d2 = b.leaky_relu(d2, slope);
        let u1 = b.upsample(d2, 2);
        let c1 = b.concat(&[u1, e1])?;
        let d1 = b.conv("dec1", c1, w0, k, 1, true)?;
        let d1 = b.leaky_relu(d1, slope);
        let u0 = b.upsample(d1, 2);
        let c0 = b.concat(&[u0, e0])?;
        let d0 = b.conv("dec0", c0, w0, k, 1, true)?;
        let d0 = b.leaky_relu(d0, slope);
        let head = b.conv("head", d0, self.landmarks, 1, 1, true)?;

        let mut net = b.build(head);
        net.init_uniform(self.seed);
        Ok(net)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::Tensor;

    #[test]
    fn output_has_one_channel_per_landmark() {
        let cfg = UNetConfig {
            landmarks: 3,
            height: 16,
            width: 24,
            widths: [2, 3, 4],
            ..UNetConfig::default()
        };
        let mut net = cfg.build().unwrap();
        let out = net.forward(&Tensor::zeros(&[2, 1, 16, 24])).unwrap();
        assert_eq!(out.shape(), &[2, 3, 16, 24]);
        let mut names: Vec<_> = net.params().iter().map(|p| p.name.clone()).collect();
        names.dedup();
        assert_eq!(names.len(), net.params().len());
    }

    #[test]
    fn rejects_resolution_not_divisible_by_eight() {
        let cfg = UNetConfig {
            height: 20,
            ..UNetConfig::default()
        };
        assert!(cfg.build().is_err());
    }
}
