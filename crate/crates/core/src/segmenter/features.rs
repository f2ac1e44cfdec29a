use crate::types::{MultiChannelImage, Raster};

/// Per-pixel feature vectors, pixel-major: `[raw, box3, box5] × C, bias`.
#[derive(Debug, Clone, PartialEq)]
pub struct Features {
    pub width: usize,
    pub height: usize,
    pub dim: usize,
    pub data: Vec<f32>,
}

impl Features {
    #[inline]
    pub fn pixel(&self, i: usize) -> &[f32] {
        &self.data[i * self.dim..(i + 1) * self.dim]
    }

    pub fn len(&self) -> usize {
        self.width * self.height
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

pub fn feature_dim(channels: usize) -> usize {
    3 * channels + 1
}

/// Summed-area table with one row/column of leading zeros.
fn integral(plane: &[f32], w: usize, h: usize) -> Vec<f64> {
    let stride = w + 1;
    let mut sat = vec![0.0f64; stride * (h + 1)];
    for y in 0..h {
        let mut row = 0.0f64;
        for x in 0..w {
            row += plane[y * w + x] as f64;
            sat[(y + 1) * stride + x + 1] = sat[y * stride + x + 1] + row;
        }
    }
    sat
}

/// Mean over a `(2r+1)²` window, zero padding outside the image.
fn box_mean(sat: &[f64], w: usize, h: usize, r: usize, y: usize, x: usize) -> f32 {
    let stride = w + 1;
    let y0 = y.saturating_sub(r);
    let x0 = x.saturating_sub(r);
    let y1 = (y + r + 1).min(h);
    let x1 = (x + r + 1).min(w);
    let s = sat[y1 * stride + x1] - sat[y0 * stride + x1] - sat[y1 * stride + x0]
        + sat[y0 * stride + x0];
    let n = (2 * r + 1) * (2 * r + 1);
    (s / n as f64) as f32
}

pub fn featurize(image: &MultiChannelImage) -> Features {
    let (w, h) = image.dims();
    let c = image.channels();
    let dim = feature_dim(c);
    let mut data = vec![0.0f32; w * h * dim];
    for ch in 0..c {
        let plane = image.channel(ch);
        let sat = integral(&plane, w, h);
        for y in 0..h {
            for x in 0..w {
                let i = y * w + x;
                let f = &mut data[i * dim + 3 * ch..i * dim + 3 * ch + 3];
                f[0] = plane[i];
                f[1] = box_mean(&sat, w, h, 1, y, x);
                f[2] = box_mean(&sat, w, h, 2, y, x);
            }
        }
    }
    for i in 0..w * h {
        data[i * dim + dim - 1] = 1.0;
    }
    Features {
        width: w,
        height: h,
        dim,
        data,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn constant_image_interior_and_edges() {
        let img = MultiChannelImage::unnamed(7, 7, 1, vec![2.0; 49]).unwrap();
        let f = featurize(&img);
        assert_eq!(f.dim, 4);
        let centre = f.pixel(3 * 7 + 3);
        assert_eq!(centre, &[2.0, 2.0, 2.0, 1.0]);
        let corner = f.pixel(0);
        assert_eq!(corner[0], 2.0);
        assert!((corner[1] - 2.0 * 4.0 / 9.0).abs() < 1e-6);
        assert!((corner[2] - 2.0 * 9.0 / 25.0).abs() < 1e-6);
    }

    #[test]
    fn bright_pixel_spreads_to_neighbours() {
        let mut px = vec![0.0f32; 25];
        px[12] = 9.0;
        let img = MultiChannelImage::unnamed(5, 5, 1, px).unwrap();
        let f = featurize(&img);
        for y in 1..4 {
            for x in 1..4 {
                assert!((f.pixel(y * 5 + x)[1] - 1.0).abs() < 1e-6);
            }
        }
        assert_eq!(f.pixel(0)[1], 0.0);
    }

    #[test]
    fn six_channels_give_nineteen_features() {
        assert_eq!(feature_dim(6), 19);
        let img = MultiChannelImage::unnamed(2, 2, 6, vec![0.5; 24]).unwrap();
        assert_eq!(featurize(&img).dim, 19);
    }
}
