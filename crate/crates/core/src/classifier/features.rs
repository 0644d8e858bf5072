use serde::{Deserialize, Serialize};

use crate::corpus::{Modality, Payload};
use crate::error::{Error, Result};
use crate::rng;

/// Maps an example payload to the real vector a classifier consumes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum FeatureMap {
    /// Continuous features passed through unchanged.
    Identity { dim: usize },
    /// Continuous features plus all pairwise products `x_i * x_j`, `i <= j`.
    Quadratic { input_dim: usize },
    /// Signed hashing of word n-grams into `dim` buckets, L2-normalized.
    HashedNgrams {
        orders: Vec<usize>,
        dim: usize,
        hash_seed: u64,
    },
}

impl FeatureMap {
    pub fn hashed(orders: Vec<usize>, dim: usize, hash_seed: u64) -> Result<Self> {
        let fm = FeatureMap::HashedNgrams {
            orders,
            dim,
            hash_seed,
        };
        fm.validate()?;
        Ok(fm)
    }

    pub fn validate(&self) -> Result<()> {
        match self {
            FeatureMap::Identity { dim } | FeatureMap::Quadratic { input_dim: dim } if *dim == 0 => {
                Err(Error::invalid("feature dimension must be positive"))
            }
            FeatureMap::HashedNgrams { orders, dim, .. } => {
                if *dim == 0 {
                    return Err(Error::invalid("hash dimension must be positive"));
                }
                if orders.is_empty() || orders.contains(&0) {
                    return Err(Error::invalid("n-gram orders must be non-empty and positive"));
                }
                Ok(())
            }
            _ => Ok(()),
        }
    }

    pub fn modality(&self) -> Modality {
        match self {
            FeatureMap::HashedNgrams { .. } => Modality::Text,
            _ => Modality::Continuous,
        }
    }

    pub fn output_dim(&self) -> usize {
        match self {
            FeatureMap::Identity { dim } => *dim,
            FeatureMap::Quadratic { input_dim: d } => d + d * (d + 1) / 2,
            FeatureMap::HashedNgrams { dim, .. } => *dim,
        }
    }

    pub fn featurize(&self, payload: &Payload) -> Result<Vec<f64>> {
        match (self, payload) {
            (FeatureMap::Identity { dim }, Payload::Features(x)) => {
                check_dim(*dim, x.len())?;
                Ok(x.clone())
            }
            (FeatureMap::Quadratic { input_dim }, Payload::Features(x)) => {
                check_dim(*input_dim, x.len())?;
                let mut out = x.clone();
                for i in 0..x.len() {
                    for j in i..x.len() {
                        out.push(x[i] * x[j]);
                    }
                }
                Ok(out)
            }
            (
                FeatureMap::HashedNgrams {
                    orders,
                    dim,
                    hash_seed,
                },
                Payload::Segments(segments),
            ) => Ok(hashed_ngrams(segments, orders, *dim, *hash_seed)),
            (fm, p) => Err(Error::UnsupportedModality {
                op: if fm.modality() == Modality::Text {
                    "hashed n-gram featurization"
                } else {
                    "continuous featurization"
                },
                modality: p.modality().to_string(),
            }),
        }
    }
}

fn check_dim(expected: usize, actual: usize) -> Result<()> {
    if expected != actual {
        return Err(Error::DimensionMismatch { expected, actual });
    }
    Ok(())
}

/// Bucket and sign for one n-gram. N-grams never cross segment boundaries,
/// and the segment index is part of the key.
pub fn ngram_slot(segment: usize, ngram: &[String], dim: usize, hash_seed: u64) -> (usize, f64) {
    let mut h = 0xcbf2_9ce4_8422_2325u64 ^ rng::derive(hash_seed, 0x5eed);
    let mut feed = |bytes: &[u8]| {
        for b in bytes {
            h ^= u64::from(*b);
            h = h.wrapping_mul(0x0000_0100_0000_01b3);
        }
    };
    feed(&(segment as u64).to_le_bytes());
    for tok in ngram {
        feed(&[0x1f]);
        feed(tok.as_bytes());
    }
    let h = rng::derive(h, 0);
    let bucket = (h % dim as u64) as usize;
    let sign = if h >> 63 == 1 { -1.0 } else { 1.0 };
    (bucket, sign)
}

fn hashed_ngrams(segments: &[Vec<String>], orders: &[usize], dim: usize, hash_seed: u64) -> Vec<f64> {
    let mut v = vec![0.0; dim];
    for (s, seg) in segments.iter().enumerate() {
        for &n in orders {
            for gram in seg.windows(n) {
                let (bucket, sign) = ngram_slot(s, gram, dim, hash_seed);
                v[bucket] += sign;
            }
        }
    }
    let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    if norm > 0.0 {
        for x in &mut v {
            *x /= norm;
        }
    }
    v
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn identity_passes_through() {
        let fm = FeatureMap::Identity { dim: 2 };
        assert_eq!(fm.featurize(&Payload::Features(vec![1.0, 2.0])).unwrap(), vec![1.0, 2.0]);
        assert!(matches!(
            fm.featurize(&Payload::Features(vec![1.0])),
            Err(Error::DimensionMismatch { .. })
        ));
    }

    #[test]
    fn quadratic_products() {
        let fm = FeatureMap::Quadratic { input_dim: 2 };
        assert_eq!(
            fm.featurize(&Payload::Features(vec![2.0, 3.0])).unwrap(),
            vec![2.0, 3.0, 4.0, 6.0, 9.0]
        );
        assert_eq!(fm.output_dim(), 5);
    }

    #[test]
    fn modality_mismatch() {
        let fm = FeatureMap::hashed(vec![1], 16, 0).unwrap();
        assert!(matches!(
            fm.featurize(&Payload::Features(vec![1.0])),
            Err(Error::UnsupportedModality { .. })
        ));
        let id = FeatureMap::Identity { dim: 1 };
        assert!(id.featurize(&Payload::from_text(&["a"])).is_err());
    }

    #[test]
    fn hashed_is_deterministic_and_normalized() {
        let fm = FeatureMap::hashed(vec![1, 2], 64, 9).unwrap();
        let p = Payload::from_text(&["the cat sat on the mat"]);
        let a = fm.featurize(&p).unwrap();
        let b = fm.featurize(&p).unwrap();
        assert_eq!(a, b);
        let norm: f64 = a.iter().map(|x| x * x).sum::<f64>().sqrt();
        assert!((norm - 1.0).abs() < 1e-12);
    }

    #[test]
    fn hashed_matches_explicit_enumeration_at_small_dim() {
        // Enumerate every (bucket, sign) slot by hand and rebuild the vector.
        let dim = 16;
        let fm = FeatureMap::hashed(vec![1, 2], dim, 3).unwrap();
        let segs = vec![vec!["red".to_string(), "fox".to_string(), "red".to_string()]];
        let mut expected = vec![0.0; dim];
        let grams: Vec<Vec<String>> = vec![
            vec!["red".into()],
            vec!["fox".into()],
            vec!["red".into()],
            vec!["red".into(), "fox".into()],
            vec!["fox".into(), "red".into()],
        ];
        for g in &grams {
            let (b, s) = ngram_slot(0, g, dim, 3);
            expected[b] += s;
        }
        let norm = expected.iter().map(|x| x * x).sum::<f64>().sqrt();
        expected.iter_mut().for_each(|x| *x /= norm);
        assert_eq!(fm.featurize(&Payload::Segments(segs)).unwrap(), expected);
    }

    #[test]
    fn disjoint_vocabularies_rarely_collide() {
        let a = Payload::from_text(&["alpha beta gamma"]);
        let b = Payload::from_text(&["delta epsilon zeta"]);
        let trials = 1000;
        let mut orthogonal = 0;
        for seed in 0..trials {
            let fm = FeatureMap::hashed(vec![1], 1 << 16, seed).unwrap();
            let x = fm.featurize(&a).unwrap();
            let y = fm.featurize(&b).unwrap();
            let dot: f64 = x.iter().zip(&y).map(|(p, q)| p * q).sum();
            if dot == 0.0 {
                orthogonal += 1;
            }
        }
        assert!(orthogonal as f64 / trials as f64 >= 0.99, "{orthogonal}");
    }

    #[test]
    fn collisions_at_dim_16_are_exactly_shared_buckets() {
        // With 16 buckets collisions happen; a nonzero dot product requires a
        // bucket hit by both texts.
        let a = vec![vec!["alpha".to_string(), "beta".to_string()]];
        let b = vec![vec!["gamma".to_string(), "delta".to_string()]];
        for seed in 0..200 {
            let fm = FeatureMap::hashed(vec![1], 16, seed).unwrap();
            let x = fm.featurize(&Payload::Segments(a.clone())).unwrap();
            let y = fm.featurize(&Payload::Segments(b.clone())).unwrap();
            let dot: f64 = x.iter().zip(&y).map(|(p, q)| p * q).sum();
            let buckets = |segs: &Vec<Vec<String>>| {
                segs[0]
                    .iter()
                    .map(|t| ngram_slot(0, std::slice::from_ref(t), 16, seed).0)
                    .collect::<std::collections::HashSet<_>>()
            };
            let shared = buckets(&a).intersection(&buckets(&b)).count();
            let x_nonzero = |i: usize| x[i] != 0.0;
            let y_nonzero = |i: usize| y[i] != 0.0;
            let overlap = (0..16).any(|i| x_nonzero(i) && y_nonzero(i));
            assert!(dot == 0.0 || overlap, "seed {seed}");
            assert!(!overlap || shared > 0, "seed {seed}");
        }
    }
}
