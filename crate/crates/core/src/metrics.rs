//! Reconstruction quality: NMSE in dB and mean cosine similarity.

use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::{NeftError, Result};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    /// `-inf` for perfect reconstruction.
    #[serde(with = "db")]
    pub nmse_db: f64,
    pub rho: f64,
}

/// JSON has no infinities; they are written as the strings "-inf" / "inf".
pub mod db {
    use super::*;

    pub fn serialize<S: Serializer>(v: &f64, s: S) -> std::result::Result<S::Ok, S::Error> {
        if v.is_finite() {
            s.serialize_f64(*v)
        } else if *v == f64::NEG_INFINITY {
            s.serialize_str("-inf")
        } else if *v == f64::INFINITY {
            s.serialize_str("inf")
        } else {
            s.serialize_str("nan")
        }
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> std::result::Result<f64, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Raw {
            Num(f64),
            Text(String),
        }
        match Raw::deserialize(d)? {
            Raw::Num(v) => Ok(v),
            Raw::Text(t) => match t.as_str() {
                "-inf" => Ok(f64::NEG_INFINITY),
                "inf" => Ok(f64::INFINITY),
                "nan" => Ok(f64::NAN),
                other => Err(serde::de::Error::custom(format!("invalid dB value `{other}`"))),
            },
        }
    }
}

fn check_lengths(h: &[f64], h_hat: &[f64], sample_len: usize) -> Result<()> {
    if h.len() != h_hat.len() || sample_len == 0 || !h.len().is_multiple_of(sample_len) || h.is_empty() {
        return Err(NeftError::Dimension(format!(
            "metric inputs of length {} and {} do not split into samples of {sample_len}",
            h.len(),
            h_hat.len()
        )));
    }
    Ok(())
}

/// Accumulates batch statistics so metrics over many batches equal the
/// metrics over their concatenation.
#[derive(Clone, Debug, Default)]
pub struct MetricAccumulator {
    err: f64,
    reference: f64,
    rho_sum: f64,
    count: usize,
}

impl MetricAccumulator {
    pub fn new() -> Self {
        Self::default()
    }

    /// `h` and `h_hat` hold consecutive samples of `sample_len` values each.
    pub fn push(&mut self, h: &[f64], h_hat: &[f64], sample_len: usize) -> Result<()> {
        check_lengths(h, h_hat, sample_len)?;
        for (a, b) in h.chunks_exact(sample_len).zip(h_hat.chunks_exact(sample_len)) {
            let (mut err, mut nh, mut nhat, mut dot) = (0.0, 0.0, 0.0, 0.0);
            for (&x, &y) in a.iter().zip(b) {
                err += (x - y) * (x - y);
                nh += x * x;
                nhat += y * y;
                dot += x * y;
            }
            if nh == 0.0 || nhat == 0.0 {
                return Err(NeftError::Domain("cosine similarity is undefined for an all-zero sample".into()));
            }
            self.err += err;
            self.reference += nh;
            self.rho_sum += dot / (nh.sqrt() * nhat.sqrt());
            self.count += 1;
        }
        Ok(())
    }

    /// Same as [`push`](Self::push) but skips the similarity term, so an
    /// all-zero estimate is allowed.
    pub fn push_nmse_only(&mut self, h: &[f64], h_hat: &[f64]) -> Result<()> {
        check_lengths(h, h_hat, h.len().max(1))?;
        for (&x, &y) in h.iter().zip(h_hat) {
            self.err += (x - y) * (x - y);
            self.reference += x * x;
        }
        Ok(())
    }

    pub fn nmse_db(&self) -> Result<f64> {
        if self.reference == 0.0 {
            return Err(NeftError::Domain("NMSE is undefined for an all-zero reference".into()));
        }
        Ok(if self.err == 0.0 { f64::NEG_INFINITY } else { 10.0 * (self.err / self.reference).log10() })
    }

    pub fn rho(&self) -> Result<f64> {
        if self.count == 0 {
            return Err(NeftError::Domain("no samples accumulated".into()));
        }
        Ok(self.rho_sum / self.count as f64)
    }

    pub fn finish(&self) -> Result<Metrics> {
        Ok(Metrics { nmse_db: self.nmse_db()?, rho: self.rho()? })
    }
}

/// `10 log10(E||H - H_hat||^2 / E||H||^2)` over the batch.
pub fn nmse(h: &[f64], h_hat: &[f64]) -> Result<f64> {
    let mut acc = MetricAccumulator::new();
    acc.push_nmse_only(h, h_hat)?;
    acc.nmse_db()
}

/// Mean over samples of the normalized real Frobenius inner product.
pub fn cosine_similarity(h: &[f64], h_hat: &[f64], sample_len: usize) -> Result<f64> {
    let mut acc = MetricAccumulator::new();
    acc.push(h, h_hat, sample_len)?;
    acc.rho()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> Vec<f64> {
        (0..24).map(|i| ((i * 7 % 11) as f64 - 4.5) / 3.0).collect()
    }

    #[test]
    fn nmse_reference_points() {
        let h = sample();
        assert_eq!(nmse(&h, &h).unwrap(), f64::NEG_INFINITY);
        assert_eq!(nmse(&h, &vec![0.0; h.len()]).unwrap(), 0.0);
        let norm2: f64 = h.iter().map(|v| v * v).sum();
        let mut e = vec![0.0; h.len()];
        e[3] = (0.01 * norm2).sqrt();
        let noisy: Vec<f64> = h.iter().zip(&e).map(|(a, b)| a + b).collect();
        assert!((nmse(&h, &noisy).unwrap() + 20.0).abs() < 1e-12);
        assert!(nmse(&[0.0; 4], &[1.0; 4]).is_err());
    }

    #[test]
    fn rho_reference_points() {
        let h = sample();
        let neg: Vec<f64> = h.iter().map(|v| -v).collect();
        let dbl: Vec<f64> = h.iter().map(|v| 2.0 * v).collect();
        assert!((cosine_similarity(&h, &h, 8).unwrap() - 1.0).abs() < 1e-15);
        assert!((cosine_similarity(&h, &neg, 8).unwrap() + 1.0).abs() < 1e-15);
        assert!((cosine_similarity(&h, &dbl, 8).unwrap() - 1.0).abs() < 1e-15);
        assert!(cosine_similarity(&h, &[0.0; 24], 8).is_err());
    }

    #[test]
    fn accumulation_matches_single_pass() {
        let h = sample();
        let g: Vec<f64> = h.iter().map(|v| v * 0.9 + 0.01).collect();
        let mut acc = MetricAccumulator::new();
        acc.push(&h[..8], &g[..8], 8).unwrap();
        acc.push(&h[8..], &g[8..], 8).unwrap();
        let whole = {
            let mut a = MetricAccumulator::new();
            a.push(&h, &g, 8).unwrap();
            a.finish().unwrap()
        };
        assert_eq!(acc.finish().unwrap(), whole);
    }

    #[test]
    fn infinite_db_round_trips_through_json() {
        let m = Metrics { nmse_db: f64::NEG_INFINITY, rho: 1.0 };
        let s = serde_json::to_string(&m).unwrap();
        assert_eq!(s, r#"{"nmse_db":"-inf","rho":1.0}"#);
        assert_eq!(serde_json::from_str::<Metrics>(&s).unwrap(), m);
    }
}
