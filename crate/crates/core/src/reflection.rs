//! Reciprocal image pairs.
//!
//! A mean-subtracted image `X - M` and its scaled negation `k (M - X)` carry
//! the same content mirrored about zero. The two halves feed the two sibling
//! branches of the network.

use ndarray::{Array1, Array3, Axis};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// RGB image stored channel-first as `[3, H, W]`.
#[derive(Clone, Debug, PartialEq)]
pub struct ImageTensor {
    pub data: Array3<f64>,
}

impl ImageTensor {
    pub fn new(data: Array3<f64>) -> Result<Self> {
        if data.dim().0 != 3 {
            return Err(Error::shape("[3, H, W]", data.dim()));
        }
        Ok(Self { data })
    }

    /// Constant image with the given per-channel value.
    pub fn filled(height: usize, width: usize, rgb: [f64; 3]) -> Self {
        Self {
            data: Array3::from_shape_fn((3, height, width), |(c, _, _)| rgb[c]),
        }
    }

    pub fn height(&self) -> usize {
        self.data.dim().1
    }

    pub fn width(&self) -> usize {
        self.data.dim().2
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", content = "values", rename_all = "kebab-case")]
pub enum MeanImage {
    ScalarPerChannel([f64; 3]),
    FullImage(Array3<f64>),
}

impl MeanImage {
    fn check(&self, x: &ImageTensor) -> Result<()> {
        match self {
            MeanImage::ScalarPerChannel(_) => Ok(()),
            MeanImage::FullImage(m) if m.dim() == x.data.dim() => Ok(()),
            MeanImage::FullImage(m) => Err(Error::shape(x.data.dim(), m.dim())),
        }
    }

    /// `x - self`, computed in place.
    fn subtract_from(&self, x: &ImageTensor) -> Array3<f64> {
        match self {
            MeanImage::ScalarPerChannel(rgb) => {
                let mut out = x.data.clone();
                for (mut ch, m) in out.axis_iter_mut(Axis(0)).zip(rgb) {
                    ch -= *m;
                }
                out
            }
            MeanImage::FullImage(m) => &x.data - m,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ReciprocalPair {
    /// `X - M`
    pub origin: ImageTensor,
    /// `k (M - X)`
    pub reflected: ImageTensor,
    pub scale: f64,
}

/// Per-channel mean over every pixel of every image.
pub fn compute_dataset_mean<'a, I>(images: I) -> Result<MeanImage>
where
    I: IntoIterator<Item = &'a ImageTensor>,
{
    let mut sum = Array1::<f64>::zeros(3);
    let mut count = 0usize;
    for img in images {
        if img.data.dim().0 != 3 {
            return Err(Error::shape("3 channels", img.data.dim().0));
        }
        for (c, ch) in img.data.axis_iter(Axis(0)).enumerate() {
            sum[c] += ch.sum();
        }
        count += img.height() * img.width();
    }
    if count == 0 {
        return Err(Error::EmptyDataset);
    }
    let n = count as f64;
    Ok(MeanImage::ScalarPerChannel([sum[0] / n, sum[1] / n, sum[2] / n]))
}

/// Builds the reciprocal pair `(X - M, k (M - X))`.
///
/// The reflected half is produced as `-k * origin` from the already
/// subtracted origin, so `reflected + k * origin == 0` holds exactly.
pub fn reflect(x: &ImageTensor, mean: &MeanImage, k: f64) -> Result<ReciprocalPair> {
    if !(k > 0.0) || !k.is_finite() {
        return Err(Error::Config(format!("reflection scale must be positive, got {k}")));
    }
    mean.check(x)?;
    let origin = mean.subtract_from(x);
    let reflected = origin.mapv(|v| -k * v);
    Ok(ReciprocalPair {
        origin: ImageTensor { data: origin },
        reflected: ImageTensor { data: reflected },
        scale: k,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn mean_of_zero_image() {
        let img = ImageTensor::filled(4, 4, [0.0; 3]);
        assert_eq!(compute_dataset_mean([&img]).unwrap(), MeanImage::ScalarPerChannel([0.0; 3]));
    }

    #[test]
    fn mean_of_constant_image() {
        let img = ImageTensor::filled(3, 5, [0.2, 0.4, 0.6]);
        let MeanImage::ScalarPerChannel(m) = compute_dataset_mean([&img]).unwrap() else {
            panic!("expected per-channel mean");
        };
        for (a, b) in m.iter().zip([0.2, 0.4, 0.6]) {
            assert!((a - b).abs() < 1e-15);
        }
    }

    #[test]
    fn mean_of_black_and_white() {
        let a = ImageTensor::filled(4, 4, [0.0; 3]);
        let b = ImageTensor::filled(4, 4, [1.0; 3]);
        assert_eq!(compute_dataset_mean([&a, &b]).unwrap(), MeanImage::ScalarPerChannel([0.5; 3]));
    }

    #[test]
    fn empty_dataset_is_an_error() {
        let none: Vec<ImageTensor> = Vec::new();
        assert!(matches!(compute_dataset_mean(&none), Err(Error::EmptyDataset)));
    }

    #[test]
    fn image_equal_to_mean_reflects_to_zero() {
        let m = [0.3, 0.5, 0.1];
        let x = ImageTensor::filled(2, 2, m);
        for k in [0.5, 1.0, 3.0] {
            let pair = reflect(&x, &MeanImage::ScalarPerChannel(m), k).unwrap();
            assert!(pair.origin.data.iter().all(|&v| v == 0.0));
            assert!(pair.reflected.data.iter().all(|&v| v == 0.0));
        }
    }

    #[test]
    fn pixel_two_above_mean() {
        let mean = MeanImage::ScalarPerChannel([0.25; 3]);
        let x = ImageTensor::filled(1, 1, [2.25; 3]);
        let p1 = reflect(&x, &mean, 1.0).unwrap();
        assert_eq!(p1.origin.data[[0, 0, 0]], 2.0);
        assert_eq!(p1.reflected.data[[0, 0, 0]], -2.0);
        let p2 = reflect(&x, &mean, 2.0).unwrap();
        assert_eq!(p2.origin.data[[0, 0, 0]], 2.0);
        assert_eq!(p2.reflected.data[[0, 0, 0]], -4.0);
    }

    #[test]
    fn full_image_mean_shape_mismatch() {
        let x = ImageTensor::filled(4, 4, [0.5; 3]);
        let mean = MeanImage::FullImage(Array3::zeros((3, 4, 5)));
        assert!(matches!(reflect(&x, &mean, 1.0), Err(Error::ShapeMismatch { .. })));
    }

    #[test]
    fn non_positive_scale_rejected() {
        let x = ImageTensor::filled(2, 2, [0.5; 3]);
        assert!(reflect(&x, &MeanImage::ScalarPerChannel([0.0; 3]), 0.0).is_err());
    }

    proptest! {
        #[test]
        fn reflection_is_antisymmetric_and_reconstructs(
            pixels in proptest::collection::vec(0.0f64..1.0, 3 * 4 * 5),
            mean in proptest::array::uniform3(0.0f64..1.0),
            k in 0.01f64..10.0,
        ) {
            let x = ImageTensor::new(Array3::from_shape_vec((3, 4, 5), pixels).unwrap()).unwrap();
            let m = MeanImage::ScalarPerChannel(mean);
            let pair = reflect(&x, &m, k).unwrap();
            for (r, o) in pair.reflected.data.iter().zip(pair.origin.data.iter()) {
                prop_assert_eq!(r + k * o, 0.0);
            }
            // origin + M gives back X (up to the rounding of the subtraction).
            for ((c, y, xx), o) in pair.origin.data.indexed_iter() {
                prop_assert!((o + mean[c] - x.data[[c, y, xx]]).abs() <= 1e-15);
            }
        }
    }
}
