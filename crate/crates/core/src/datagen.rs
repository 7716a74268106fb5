//! Synthetic labelled datasets in the unit box.

use std::f64::consts::PI;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{invalid, Result};

/// Points in `[0,1]^n` with class labels in `1..=c`.
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledDataset {
    points: Vec<Vec<f64>>,
    labels: Vec<usize>,
    dim: usize,
    classes: usize,
}

impl LabeledDataset {
    pub fn new(points: Vec<Vec<f64>>, labels: Vec<usize>, dim: usize, classes: usize) -> Result<Self> {
        if points.len() != labels.len() {
            return Err(invalid(format!("{} points but {} labels", points.len(), labels.len())));
        }
        if dim == 0 || classes < 2 {
            return Err(invalid("need dim >= 1 and at least two classes"));
        }
        for (i, p) in points.iter().enumerate() {
            if p.len() != dim {
                return Err(invalid(format!("point {i} has length {}, expected {dim}", p.len())));
            }
            if p.iter().any(|v| !(0.0..=1.0).contains(v)) {
                return Err(invalid(format!("point {i} leaves the unit box")));
            }
        }
        if let Some(l) = labels.iter().find(|&&l| l == 0 || l > classes) {
            return Err(invalid(format!("label {l} outside 1..={classes}")));
        }
        Ok(LabeledDataset { points, labels, dim, classes })
    }

    pub fn points(&self) -> &[Vec<f64>] {
        &self.points
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn classes(&self) -> usize {
        self.classes
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    /// Sub-dataset made of the given indices, in that order.
    pub fn select(&self, idx: &[usize]) -> LabeledDataset {
        LabeledDataset {
            points: idx.iter().map(|&i| self.points[i].clone()).collect(),
            labels: idx.iter().map(|&i| self.labels[i]).collect(),
            dim: self.dim,
            classes: self.classes,
        }
    }
}

/// Two interleaving half circles with Gaussian noise, rescaled with a single
/// isotropic affine map so that all points land in `[0.05, 0.95]²`.
///
/// The outer moon is class 1, the inner one class 2; class sizes differ by at
/// most one.
pub fn two_moons(n_samples: usize, noise_sd: f64, seed: u64) -> Result<LabeledDataset> {
    if n_samples < 2 {
        return Err(invalid("two_moons needs at least 2 samples"));
    }
    if !(noise_sd >= 0.0 && noise_sd.is_finite()) {
        return Err(invalid("noise_sd must be a finite non-negative number"));
    }
    let n_outer = n_samples / 2;
    let n_inner = n_samples - n_outer;
    let angle = |i: usize, n: usize| if n > 1 { PI * i as f64 / (n - 1) as f64 } else { 0.0 };

    let mut raw = Vec::with_capacity(n_samples);
    let mut labels = Vec::with_capacity(n_samples);
    for i in 0..n_outer {
        let t = angle(i, n_outer);
        raw.push([t.cos(), t.sin()]);
        labels.push(1);
    }
    for i in 0..n_inner {
        let t = angle(i, n_inner);
        raw.push([1.0 - t.cos(), 0.5 - t.sin()]);
        labels.push(2);
    }
    if noise_sd > 0.0 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let normal = Normal::new(0.0, noise_sd).map_err(|e| invalid(e.to_string()))?;
        for p in &mut raw {
            p[0] += normal.sample(&mut rng);
            p[1] += normal.sample(&mut rng);
        }
    }

    let (mut lo, mut hi) = ([f64::INFINITY; 2], [f64::NEG_INFINITY; 2]);
    for p in &raw {
        for d in 0..2 {
            lo[d] = lo[d].min(p[d]);
            hi[d] = hi[d].max(p[d]);
        }
    }
    let span = (hi[0] - lo[0]).max(hi[1] - lo[1]);
    let scale = if span > 0.0 { 0.9 / span } else { 0.0 };
    let points = raw
        .iter()
        .map(|p| {
            (0..2)
                .map(|d| (0.5 + scale * (p[d] - 0.5 * (lo[d] + hi[d]))).clamp(0.0, 1.0))
                .collect()
        })
        .collect();
    LabeledDataset::new(points, labels, 2, 2)
}

/// Fixed centre of class `k` (0-based) among `c` in dimension `n`.
pub fn blob_center(k: usize, c: usize, n: usize) -> Vec<f64> {
    if n == 1 {
        let t = if c > 1 { k as f64 / (c - 1) as f64 } else { 0.5 };
        return vec![0.2 + 0.6 * t];
    }
    let phi = 2.0 * PI * k as f64 / c as f64;
    let mut center = vec![0.5; n];
    center[0] = 0.5 + 0.3 * phi.cos();
    center[1] = 0.5 + 0.3 * phi.sin();
    center
}

/// Isotropic Gaussian clusters around [`blob_center`], clipped to the box.
/// Sample `i` belongs to class `i % c + 1`.
pub fn blobs(n_samples: usize, c: usize, n: usize, spread: f64, seed: u64) -> Result<LabeledDataset> {
    if c < 2 {
        return Err(invalid("blobs needs at least two classes"));
    }
    if n == 0 {
        return Err(invalid("dimension must be at least 1"));
    }
    if !(spread >= 0.0 && spread.is_finite()) {
        return Err(invalid("spread must be a finite non-negative number"));
    }
    let centers: Vec<Vec<f64>> = (0..c).map(|k| blob_center(k, c, n)).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let normal = Normal::new(0.0, spread.max(f64::MIN_POSITIVE)).map_err(|e| invalid(e.to_string()))?;
    let mut points = Vec::with_capacity(n_samples);
    let mut labels = Vec::with_capacity(n_samples);
    for i in 0..n_samples {
        let k = i % c;
        let p = centers[k]
            .iter()
            .map(|&m| {
                let v = if spread > 0.0 { m + normal.sample(&mut rng) } else { m };
                v.clamp(0.0, 1.0)
            })
            .collect();
        points.push(p);
        labels.push(k + 1);
    }
    LabeledDataset::new(points, labels, n, c)
}

/// Random permutation of `0..n` for `seed`.
pub fn permutation(n: usize, seed: u64) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    idx
}

/// Randomly splits into two disjoint halves; the first gets the extra sample
/// when the size is odd.
pub fn split_half(data: &LabeledDataset, seed: u64) -> Result<(LabeledDataset, LabeledDataset)> {
    if data.len() < 2 {
        return Err(invalid("need at least 2 samples to split"));
    }
    let idx = permutation(data.len(), seed);
    let cut = data.len().div_ceil(2);
    Ok((data.select(&idx[..cut]), data.select(&idx[cut..])))
}

/// Random split into `n_first` and the remaining samples.
pub fn split_at(data: &LabeledDataset, n_first: usize, seed: u64) -> Result<(LabeledDataset, LabeledDataset)> {
    if n_first > data.len() {
        return Err(invalid(format!("cannot take {n_first} of {} samples", data.len())));
    }
    let idx = permutation(data.len(), seed);
    Ok((data.select(&idx[..n_first]), data.select(&idx[n_first..])))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn in_box(d: &LabeledDataset) -> bool {
        d.points().iter().flatten().all(|v| (0.0..=1.0).contains(v))
    }

    #[test]
    fn noiseless_moons_are_arc_points() {
        let d = two_moons(4, 0.0, 0).unwrap();
        assert_eq!(d.len(), 4);
        assert_eq!(d.labels(), &[1, 1, 2, 2]);
        for p in d.points() {
            assert!(p.iter().all(|v| (0.05 - 1e-12..=0.95 + 1e-12).contains(v)), "{p:?}");
        }
        // raw arc points (1,0), (-1,0), (0,0.5), (2,0.5): x spans 3, y spans 0.5
        let xs: Vec<f64> = d.points().iter().map(|p| p[0]).collect();
        assert!((xs[1] - 0.05).abs() < 1e-12 && (xs[3] - 0.95).abs() < 1e-12);
        assert!((d.points()[0][1] - d.points()[1][1]).abs() < 1e-12);
    }

    #[test]
    fn moons_are_deterministic_and_boxed() {
        let a = two_moons(2300, 0.1, 11).unwrap();
        let b = two_moons(2300, 0.1, 11).unwrap();
        assert_eq!(a, b);
        assert!(in_box(&a));
        let ones = a.labels().iter().filter(|&&l| l == 1).count();
        assert_eq!(ones, 1150);
        assert_ne!(a, two_moons(2300, 0.1, 12).unwrap());
        assert!(two_moons(1, 0.1, 0).is_err());
        assert!(two_moons(10, -1.0, 0).is_err());
    }

    #[test]
    fn blobs_cases() {
        let d = blobs(30, 3, 2, 0.0, 5).unwrap();
        for (p, l) in d.points().iter().zip(d.labels()) {
            assert_eq!(p, &blob_center(l - 1, 3, 2));
        }
        let a = blobs(300, 4, 5, 0.3, 9).unwrap();
        assert!(in_box(&a));
        assert_eq!(a, blobs(300, 4, 5, 0.3, 9).unwrap());
        assert!(blobs(10, 1, 2, 0.1, 0).is_err());
    }

    #[test]
    fn split_half_partitions() {
        let d = two_moons(300, 0.1, 3).unwrap();
        let (a, b) = split_half(&d, 4).unwrap();
        assert_eq!((a.len(), b.len()), (150, 150));
        let mut all: Vec<(String, usize)> = a
            .points()
            .iter()
            .chain(b.points())
            .zip(a.labels().iter().chain(b.labels()))
            .map(|(p, l)| (format!("{p:?}"), *l))
            .collect();
        let mut orig: Vec<(String, usize)> =
            d.points().iter().zip(d.labels()).map(|(p, l)| (format!("{p:?}"), *l)).collect();
        all.sort();
        orig.sort();
        assert_eq!(all, orig);

        let idx = permutation(300, 4);
        let mut seen = vec![false; 300];
        idx.iter().for_each(|&i| seen[i] = true);
        assert!(seen.iter().all(|&s| s));

        let two = two_moons(2, 0.0, 0).unwrap();
        let (x, y) = split_half(&two, 1).unwrap();
        assert_eq!((x.len(), y.len()), (1, 1));
        let (x, y) = split_half(&two_moons(7, 0.1, 0).unwrap(), 1).unwrap();
        assert_eq!((x.len(), y.len()), (4, 3));
        assert!(split_half(&two.select(&[0]), 1).is_err());
    }

    #[test]
    fn dataset_validation() {
        assert!(LabeledDataset::new(vec![vec![1.5]], vec![1], 1, 2).is_err());
        assert!(LabeledDataset::new(vec![vec![0.5]], vec![3], 1, 2).is_err());
        assert!(LabeledDataset::new(vec![vec![0.5]], vec![], 1, 2).is_err());
    }
}
