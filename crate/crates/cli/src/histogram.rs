//! Fixed-bin histograms for external plotting.

use serde::Serialize;

pub const DEFAULT_BINS: usize = 20;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Bucket {
    pub lo: f64,
    pub hi: f64,
    pub count: usize,
}

/// `bins` equal-width buckets spanning the data; the last bucket is closed.
/// A constant sample gives one bucket.
pub fn histogram(values: &[f64], bins: usize) -> Vec<Bucket> {
    let Some((min, max)) = values.iter().fold(None, |acc: Option<(f64, f64)>, &v| {
        Some(acc.map_or((v, v), |(a, b)| (a.min(v), b.max(v))))
    }) else {
        return Vec::new();
    };
    if max == min || bins <= 1 {
        return vec![Bucket {
            lo: min,
            hi: max,
            count: values.len(),
        }];
    }
    let width = (max - min) / bins as f64;
    let mut buckets: Vec<Bucket> = (0..bins)
        .map(|k| Bucket {
            lo: min + width * k as f64,
            hi: if k + 1 == bins {
                max
            } else {
                min + width * (k + 1) as f64
            },
            count: 0,
        })
        .collect();
    for &v in values {
        let k = (((v - min) / width) as usize).min(bins - 1);
        buckets[k].count += 1;
    }
    buckets
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn counts_everything() {
        let v = [0.0, 0.1, 0.5, 0.99, 1.0];
        let h = histogram(&v, 4);
        assert_eq!(h.len(), 4);
        assert_eq!(h.iter().map(|b| b.count).sum::<usize>(), 5);
        assert_eq!(h[3].count, 2);
        assert_eq!(h[3].hi, 1.0);
    }

    #[test]
    fn degenerate_samples() {
        assert!(histogram(&[], 5).is_empty());
        assert_eq!(
            histogram(&[2.0, 2.0], 5),
            vec![Bucket {
                lo: 2.0,
                hi: 2.0,
                count: 2
            }]
        );
    }
}
