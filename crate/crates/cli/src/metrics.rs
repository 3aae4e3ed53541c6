use gradleak_core::Tensor;
use serde::Serialize;

use crate::error::CliError;

/// Image quality of a reconstruction, pixels in `[0, 1]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Metrics {
    pub mse: f64,
    /// Decibels with a peak of 1; `None` when the images are identical
    /// (written as the string `"inf"`).
    #[serde(serialize_with = "psnr_or_inf")]
    pub psnr: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub wall_time: Option<f64>,
}

fn psnr_or_inf<S: serde::Serializer>(v: &Option<f64>, s: S) -> Result<S::Ok, S::Error> {
    match v {
        Some(p) => s.serialize_f64(*p),
        None => s.serialize_str("inf"),
    }
}

impl Metrics {
    pub fn compare(original: &Tensor, reconstructed: &Tensor) -> Result<Self, CliError> {
        if original.shape() != reconstructed.shape() {
            return Err(CliError::Invalid(format!(
                "image shapes differ: {:?} vs {:?}",
                original.shape(),
                reconstructed.shape()
            )));
        }
        let n = original.len() as f64;
        let mse = original.data().iter().zip(reconstructed.data()).map(|(a, b)| (a - b) * (a - b)).sum::<f64>() / n;
        let psnr = (mse > 0.0).then(|| 10.0 * (1.0 / mse).log10());
        Ok(Self { mse, psnr, wall_time: None })
    }

    pub fn psnr_text(&self) -> String {
        self.psnr.map_or_else(|| "inf".to_owned(), |p| format!("{p:.4}"))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn identical_images() {
        let a = Tensor::from_fn(&[1, 2, 2], |i| i as f64 / 4.0);
        let m = Metrics::compare(&a, &a).unwrap();
        assert_eq!(m.mse, 0.0);
        assert_eq!(m.psnr, None);
        assert_eq!(serde_json::to_string(&m).unwrap(), r#"{"mse":0.0,"psnr":"inf"}"#);
    }

    #[test]
    fn uniform_offset() {
        let a = Tensor::from_fn(&[3, 4, 4], |i| (i % 7) as f64 / 10.0);
        let b = a.map(|v| v + 0.1);
        let m = Metrics::compare(&a, &b).unwrap();
        assert!((m.mse - 0.01).abs() < 1e-15);
        assert!((m.psnr.unwrap() - 20.0).abs() < 1e-10);
    }

    #[test]
    fn shape_mismatch() {
        assert!(Metrics::compare(&Tensor::zeros(&[1, 2, 2]), &Tensor::zeros(&[3, 2, 2])).is_err());
    }
}
