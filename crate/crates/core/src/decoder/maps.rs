use serde::{Deserialize, Serialize};

/// One view's dense feature grid, channel-last (`[y][x][c]`).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureMap {
    pub width: usize,
    pub height: usize,
    pub channels: usize,
    pub data: Vec<f32>,
}

/// Per-view feature maps standing in for backbone output.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureMapSet {
    pub views: Vec<FeatureMap>,
}

/// A bilinear sample with its spatial partial derivatives.
#[derive(Debug, Clone, Copy)]
pub struct SampleGeom {
    x0: usize,
    y0: usize,
    fx: f64,
    fy: f64,
    /// The location was clamped on this axis, so it carries no gradient.
    pub clamped_x: bool,
    pub clamped_y: bool,
}

impl FeatureMap {
    pub fn zeros(width: usize, height: usize, channels: usize) -> Self {
        Self {
            width,
            height,
            channels,
            data: vec![0.0; width * height * channels],
        }
    }

    #[inline]
    pub fn pixel(&self, x: usize, y: usize) -> &[f32] {
        let o = (y * self.width + x) * self.channels;
        &self.data[o..o + self.channels]
    }

    #[inline]
    pub fn pixel_mut(&mut self, x: usize, y: usize) -> &mut [f32] {
        let o = (y * self.width + x) * self.channels;
        &mut self.data[o..o + self.channels]
    }

    /// Clamps `(x, y)` into the grid and locates the interpolation cell.
    #[inline]
    pub fn locate(&self, x: f64, y: f64) -> SampleGeom {
        let xmax = (self.width - 1) as f64;
        let ymax = (self.height - 1) as f64;
        let clamped_x = !(x > 0.0 && x < xmax);
        let clamped_y = !(y > 0.0 && y < ymax);
        let cx = if x.is_nan() { 0.0 } else { x.clamp(0.0, xmax) };
        let cy = if y.is_nan() { 0.0 } else { y.clamp(0.0, ymax) };
        let x0 = (cx.floor() as usize).min(self.width - 2);
        let y0 = (cy.floor() as usize).min(self.height - 2);
        SampleGeom {
            x0,
            y0,
            fx: cx - x0 as f64,
            fy: cy - y0 as f64,
            clamped_x,
            clamped_y,
        }
    }

    /// Bilinear interpolation of all channels into `out`.
    #[inline]
    pub fn sample_into(&self, g: &SampleGeom, out: &mut [f64]) {
        let (a, b, c, d) = self.corners(g);
        let w00 = (1.0 - g.fx) * (1.0 - g.fy);
        let w10 = g.fx * (1.0 - g.fy);
        let w01 = (1.0 - g.fx) * g.fy;
        let w11 = g.fx * g.fy;
        for k in 0..self.channels {
            out[k] = w00 * a[k] as f64 + w10 * b[k] as f64 + w01 * c[k] as f64 + w11 * d[k] as f64;
        }
    }

    /// Partial derivatives of the bilinear sample w.r.t. x and y. Axes that
    /// were clamped get zeros.
    #[inline]
    pub fn sample_grad_into(&self, g: &SampleGeom, dx: &mut [f64], dy: &mut [f64]) {
        let (a, b, c, d) = self.corners(g);
        for k in 0..self.channels {
            let (a, b, c, d) = (a[k] as f64, b[k] as f64, c[k] as f64, d[k] as f64);
            dx[k] = if g.clamped_x {
                0.0
            } else {
                (1.0 - g.fy) * (b - a) + g.fy * (d - c)
            };
            dy[k] = if g.clamped_y {
                0.0
            } else {
                (1.0 - g.fx) * (c - a) + g.fx * (d - b)
            };
        }
    }

    #[inline]
    fn corners(&self, g: &SampleGeom) -> (&[f32], &[f32], &[f32], &[f32]) {
        (
            self.pixel(g.x0, g.y0),
            self.pixel(g.x0 + 1, g.y0),
            self.pixel(g.x0, g.y0 + 1),
            self.pixel(g.x0 + 1, g.y0 + 1),
        )
    }

    /// Convenience bilinear sample at a point.
    pub fn sample(&self, x: f64, y: f64) -> Vec<f64> {
        let mut out = vec![0.0; self.channels];
        self.sample_into(&self.locate(x, y), &mut out);
        out
    }
}

impl FeatureMapSet {
    pub fn channels(&self) -> usize {
        self.views.first().map_or(0, |v| v.channels)
    }

    pub fn validate(&self) -> crate::Result<()> {
        let c = self.channels();
        for (i, v) in self.views.iter().enumerate() {
            if v.channels != c || v.data.len() != v.width * v.height * v.channels {
                return Err(crate::Error::ShapeMismatch(format!("feature map {i}")));
            }
            if v.width < 2 || v.height < 2 {
                return Err(crate::Error::ShapeMismatch(format!(
                    "feature map {i} is too small"
                )));
            }
            if v.data.iter().any(|x| !x.is_finite()) {
                return Err(crate::Error::Invariant(format!(
                    "feature map {i} is not finite"
                )));
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ramp() -> FeatureMap {
        let mut m = FeatureMap::zeros(5, 4, 2);
        for y in 0..4 {
            for x in 0..5 {
                let p = m.pixel_mut(x, y);
                p[0] = (2 * x + 3 * y) as f32;
                p[1] = (x * y) as f32;
            }
        }
        m
    }

    #[test]
    fn bilinear_reproduces_affine_and_bilinear_fields() {
        let m = ramp();
        let s = m.sample(1.25, 2.5);
        assert!((s[0] - (2.0 * 1.25 + 3.0 * 2.5)).abs() < 1e-12);
        assert!((s[1] - 1.25 * 2.5).abs() < 1e-12);
    }

    #[test]
    fn out_of_bounds_samples_clamp_to_border() {
        let m = ramp();
        assert_eq!(m.sample(-3.0, -1.0), m.sample(0.0, 0.0));
        assert_eq!(m.sample(10.0, 10.0), vec![17.0, 12.0]);
        let g = m.locate(-3.0, 1.5);
        assert!(g.clamped_x && !g.clamped_y);
    }

    #[test]
    fn spatial_gradient_matches_finite_difference() {
        let m = ramp();
        let (x, y) = (2.3, 1.7);
        let g = m.locate(x, y);
        let mut dx = vec![0.0; 2];
        let mut dy = vec![0.0; 2];
        m.sample_grad_into(&g, &mut dx, &mut dy);
        let h = 1e-6;
        for k in 0..2 {
            let fx = (m.sample(x + h, y)[k] - m.sample(x - h, y)[k]) / (2.0 * h);
            let fy = (m.sample(x, y + h)[k] - m.sample(x, y - h)[k]) / (2.0 * h);
            assert!((dx[k] - fx).abs() < 1e-6);
            assert!((dy[k] - fy).abs() < 1e-6);
        }
    }
}
