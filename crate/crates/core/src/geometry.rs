//! Point-set geometry: farthest point sampling, k-nearest-neighbor grouping,
//! feature gathers and unit-sphere normalization.
//!
//! Distances are always measured between 3D coordinates, never in feature
//! space. Both sampling and grouping are exhaustive (`O(n m)` and
//! `O(n log n)` per query), which is adequate for clouds of a few thousand
//! points.

use std::cmp::Ordering;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::{Float, Graph, Tensor, Var};

pub type Point = [f64; 3];

/// One cloud: coordinates, optional per-point features and an optional label.
#[derive(Clone, Debug, PartialEq)]
pub struct PointCloud {
    pub coords: Vec<Point>,
    /// Row-major `n x feature_dim` values, when present.
    pub features: Option<Vec<f64>>,
    pub feature_dim: usize,
    pub label: Option<usize>,
}

impl PointCloud {
    pub fn new(coords: Vec<Point>, label: Option<usize>) -> Result<Self> {
        if coords.is_empty() {
            return Err(Error::arg("a point cloud needs at least one point"));
        }
        if coords.iter().flatten().any(|v| !v.is_finite()) {
            return Err(Error::numeric("non-finite point coordinate"));
        }
        Ok(Self {
            coords,
            features: None,
            feature_dim: 0,
            label,
        })
    }

    pub fn with_features(mut self, dim: usize, values: Vec<f64>) -> Result<Self> {
        if dim == 0 || values.len() != dim * self.coords.len() {
            return Err(Error::Dimension {
                op: "point features",
                lhs: vec![self.coords.len(), dim],
                rhs: vec![values.len()],
            });
        }
        self.features = Some(values);
        self.feature_dim = dim;
        Ok(self)
    }

    pub fn len(&self) -> usize {
        self.coords.len()
    }

    pub fn is_empty(&self) -> bool {
        self.coords.is_empty()
    }
}

/// How farthest point sampling picks its first point.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SeedRule {
    /// The point farthest from the centroid (lowest index on ties). The
    /// resulting selection does not depend on input order.
    #[default]
    FarthestFromCentroid,
    /// A fixed index, for comparisons against other implementations.
    Index(usize),
}

#[inline]
pub fn squared_distance(a: &Point, b: &Point) -> f64 {
    let dx = a[0] - b[0];
    let dy = a[1] - b[1];
    let dz = a[2] - b[2];
    dx * dx + dy * dy + dz * dz
}

pub fn centroid(coords: &[Point]) -> Point {
    let n = coords.len() as f64;
    let mut c = [0.0; 3];
    for p in coords {
        for a in 0..3 {
            c[a] += p[a];
        }
    }
    c.map(|v| v / n)
}

/// Greedy farthest point sampling: after the seed, each pick maximizes the
/// distance to the nearest already-chosen point, lowest index on ties.
/// Returns indices in selection order.
pub fn farthest_point_sample(coords: &[Point], m: usize, seed: SeedRule) -> Result<Vec<usize>> {
    let n = coords.len();
    if m == 0 || m > n {
        return Err(Error::arg(format!(
            "farthest point sampling needs 1 <= m <= n, got m = {m}, n = {n}"
        )));
    }
    let first = match seed {
        SeedRule::Index(i) if i < n => i,
        SeedRule::Index(i) => {
            return Err(Error::Index {
                op: "farthest_point_sample",
                index: i,
                extent: n,
            })
        }
        SeedRule::FarthestFromCentroid => {
            let c = centroid(coords);
            argmax_first(coords.iter().map(|p| squared_distance(p, &c)))
        }
    };
    let mut chosen = vec![false; n];
    let mut nearest = vec![f64::INFINITY; n];
    let mut out = Vec::with_capacity(m);
    let mut last = first;
    chosen[first] = true;
    out.push(first);
    while out.len() < m {
        let lp = coords[last];
        let mut best = usize::MAX;
        let mut best_d = f64::NEG_INFINITY;
        for (i, p) in coords.iter().enumerate() {
            if chosen[i] {
                continue;
            }
            let d = squared_distance(p, &lp);
            if d < nearest[i] {
                nearest[i] = d;
            }
            if nearest[i] > best_d {
                best_d = nearest[i];
                best = i;
            }
        }
        chosen[best] = true;
        out.push(best);
        last = best;
    }
    Ok(out)
}

fn argmax_first(values: impl Iterator<Item = f64>) -> usize {
    let mut best = 0;
    let mut best_v = f64::NEG_INFINITY;
    for (i, v) in values.enumerate() {
        if v > best_v {
            best_v = v;
            best = i;
        }
    }
    best
}

/// For each sample, the `k` nearest source points (the sample itself
/// included), sorted by ascending distance with ties broken by lower index.
/// Returns a flat `m * k` index list.
pub fn knn_group(coords: &[Point], samples: &[usize], k: usize) -> Result<Vec<usize>> {
    let n = coords.len();
    if k == 0 || k > n {
        return Err(Error::arg(format!(
            "knn grouping needs 1 <= k <= n, got k = {k}, n = {n}"
        )));
    }
    let mut out = Vec::with_capacity(samples.len() * k);
    let mut order: Vec<(f64, usize)> = Vec::with_capacity(n);
    for &s in samples {
        let q = coords.get(s).ok_or(Error::Index {
            op: "knn_group",
            index: s,
            extent: n,
        })?;
        order.clear();
        order.extend(coords.iter().enumerate().map(|(i, p)| (squared_distance(p, q), i)));
        let cmp =
            |a: &(f64, usize), b: &(f64, usize)| a.0.partial_cmp(&b.0).unwrap_or(Ordering::Equal).then(a.1.cmp(&b.1));
        if k < n {
            order.select_nth_unstable_by(k - 1, cmp);
        }
        order[..k].sort_unstable_by(cmp);
        out.extend(order[..k].iter().map(|&(_, i)| i));
    }
    Ok(out)
}

/// Sample and neighbor indices for one cloud at one stage.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct GroupIndex {
    pub sample_indices: Vec<usize>,
    /// Flat `m x k`.
    pub neighbor_indices: Vec<usize>,
    pub k: usize,
}

impl GroupIndex {
    pub fn build(coords: &[Point], m: usize, k: usize, seed: SeedRule) -> Result<Self> {
        let sample_indices = farthest_point_sample(coords, m, seed)?;
        let neighbor_indices = knn_group(coords, &sample_indices, k)?;
        Ok(Self {
            sample_indices,
            neighbor_indices,
            k,
        })
    }

    pub fn m(&self) -> usize {
        self.sample_indices.len()
    }
}

/// Plain gather: `x_s[i] = features[sample[i]]`, `x_g[i, j] = features[neighbor[i, j]]`.
/// `features` is `n x d`; returns `(m x d, m x k x d)`.
pub fn gather_groups<T: Float>(features: &Tensor<T>, groups: &GroupIndex) -> Result<(Tensor<T>, Tensor<T>)> {
    if features.rank() != 2 {
        return Err(Error::Dimension {
            op: "gather_groups",
            lhs: features.shape().to_vec(),
            rhs: vec![2],
        });
    }
    let (n, d) = (features.shape()[0], features.shape()[1]);
    let rows = |idx: &[usize]| -> Result<Vec<T>> {
        let mut out = Vec::with_capacity(idx.len() * d);
        for &i in idx {
            if i >= n {
                return Err(Error::Index {
                    op: "gather_groups",
                    index: i,
                    extent: n,
                });
            }
            out.extend_from_slice(&features.data()[i * d..(i + 1) * d]);
        }
        Ok(out)
    };
    let m = groups.m();
    let xs = Tensor::new(vec![m, d], rows(&groups.sample_indices)?)?;
    let xg = Tensor::new(vec![m, groups.k, d], rows(&groups.neighbor_indices)?)?;
    Ok((xs, xg))
}

/// Recorded gather over a batch: `features` is `[batch, n, d]` and `groups`
/// holds one index set per cloud (all with equal `m` and `k`). Returns
/// `x_s: [batch, m, 1, d]` and `x_g: [batch, m, k, d]`; gradients scatter-add
/// back onto `features`.
pub fn gather_groups_var<T: Float>(g: &mut Graph<T>, features: Var, groups: &[GroupIndex]) -> Result<(Var, Var)> {
    let shape = g.shape(features).to_vec();
    if shape.len() != 3 || shape[0] != groups.len() {
        return Err(Error::Dimension {
            op: "gather_groups",
            lhs: shape,
            rhs: vec![groups.len()],
        });
    }
    let (batch, d) = (shape[0], shape[2]);
    let m = groups[0].m();
    let k = groups[0].k;
    if groups.iter().any(|gi| gi.m() != m || gi.k != k) {
        return Err(Error::arg("group index sets disagree on m or k within a batch"));
    }
    let samples: Vec<usize> = groups.iter().flat_map(|gi| gi.sample_indices.iter().copied()).collect();
    let neighbors: Vec<usize> = groups
        .iter()
        .flat_map(|gi| gi.neighbor_indices.iter().copied())
        .collect();
    let xs = g.gather_rows(features, &samples)?;
    let xs = g.reshape(xs, &[batch, m, 1, d])?;
    let xg = g.gather_rows(features, &neighbors)?;
    let xg = g.reshape(xg, &[batch, m, k, d])?;
    Ok((xs, xg))
}

/// Subtracts the centroid and scales so the largest point norm is 1. A cloud
/// of identical points maps to the origin.
pub fn normalize_unit_sphere(coords: &[Point]) -> Vec<Point> {
    if coords.is_empty() {
        return Vec::new();
    }
    let c = centroid(coords);
    let centered: Vec<Point> = coords.iter().map(|p| [p[0] - c[0], p[1] - c[1], p[2] - c[2]]).collect();
    let radius = centered
        .iter()
        .map(|p| squared_distance(p, &[0.0; 3]))
        .fold(0.0, f64::max)
        .sqrt();
    if radius > 0.0 {
        centered.into_iter().map(|p| p.map(|v| v / radius)).collect()
    } else {
        centered
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn line() -> Vec<Point> {
        (0..4).map(|i| [i as f64, 0.0, 0.0]).collect()
    }

    #[test]
    fn fps_collinear_picks_far_end() {
        let idx = farthest_point_sample(&line(), 2, SeedRule::Index(0)).unwrap();
        assert_eq!(idx, vec![0, 3]);
    }

    #[test]
    fn fps_m_equals_n_returns_every_index() {
        let mut idx = farthest_point_sample(&line(), 4, SeedRule::Index(0)).unwrap();
        assert_eq!(idx[0], 0);
        idx.sort_unstable();
        assert_eq!(idx, vec![0, 1, 2, 3]);
    }

    #[test]
    fn fps_m_one_is_seed() {
        assert_eq!(farthest_point_sample(&line(), 1, SeedRule::Index(2)).unwrap(), vec![2]);
        // centroid 1.5: points 0 and 3 tie, lower index wins
        assert_eq!(
            farthest_point_sample(&line(), 1, SeedRule::FarthestFromCentroid).unwrap(),
            vec![0]
        );
    }

    #[test]
    fn fps_rejects_bad_m() {
        assert!(farthest_point_sample(&line(), 5, SeedRule::Index(0)).is_err());
        assert!(farthest_point_sample(&line(), 0, SeedRule::Index(0)).is_err());
        assert!(farthest_point_sample(&line(), 2, SeedRule::Index(9)).is_err());
    }

    #[test]
    fn fps_duplicate_points_never_repeat_indices() {
        let pts = vec![[0.0; 3]; 5];
        let mut idx = farthest_point_sample(&pts, 5, SeedRule::Index(0)).unwrap();
        idx.sort_unstable();
        assert_eq!(idx, vec![0, 1, 2, 3, 4]);
    }

    #[test]
    fn knn_self_is_nearest() {
        let pts = line();
        assert_eq!(knn_group(&pts, &[2], 1).unwrap(), vec![2]);
    }

    #[test]
    fn knn_hand_layout() {
        // 5 points; query index 0 at origin
        let pts = vec![
            [0.0, 0.0, 0.0],
            [2.0, 0.0, 0.0],
            [0.0, 1.0, 0.0],
            [0.0, 0.0, -1.5],
            [1.0, 1.0, 1.0],
        ];
        // distances^2: 0, 4, 1, 2.25, 3
        assert_eq!(knn_group(&pts, &[0], 3).unwrap(), vec![0, 2, 3]);
        // ties: from point 2 (0,1,0): d^2 to 0 = 1, to 4 = 2, to 1 = 5, to 3 = 3.25
        assert_eq!(knn_group(&pts, &[2], 3).unwrap(), vec![2, 0, 4]);
    }

    #[test]
    fn knn_tie_prefers_lower_index() {
        let pts = vec![[0.0, 0.0, 0.0], [1.0, 0.0, 0.0], [-1.0, 0.0, 0.0]];
        assert_eq!(knn_group(&pts, &[0], 2).unwrap(), vec![0, 1]);
    }

    #[test]
    fn knn_k_equals_n_is_permutation() {
        let pts = line();
        let mut idx = knn_group(&pts, &[1], 4).unwrap();
        idx.sort_unstable();
        assert_eq!(idx, vec![0, 1, 2, 3]);
        assert!(knn_group(&pts, &[1], 5).is_err());
    }

    #[test]
    fn gather_identity_and_lookup() {
        let f = Tensor::<f64>::from_f64(&[3, 2], &[1., 2., 3., 4., 5., 6.]).unwrap();
        let gi = GroupIndex {
            sample_indices: vec![0, 1, 2],
            neighbor_indices: vec![0, 1, 2],
            k: 1,
        };
        let (xs, _) = gather_groups(&f, &gi).unwrap();
        assert_eq!(xs.data(), f.data());

        let gi = GroupIndex {
            sample_indices: vec![1],
            neighbor_indices: vec![2, 0],
            k: 2,
        };
        let (xs, xg) = gather_groups(&f, &gi).unwrap();
        assert_eq!(xs.data(), &[3., 4.]);
        assert_eq!(xg.shape(), &[1, 2, 2]);
        assert_eq!(xg.data(), &[5., 6., 1., 2.]);

        let bad = GroupIndex {
            sample_indices: vec![3],
            neighbor_indices: vec![0],
            k: 1,
        };
        assert!(matches!(gather_groups(&f, &bad), Err(Error::Index { .. })));
    }

    #[test]
    fn unit_sphere_cases() {
        let out = normalize_unit_sphere(&[[0.0, 0.0, 0.0], [2.0, 0.0, 0.0]]);
        assert_eq!(out, vec![[-1.0, 0.0, 0.0], [1.0, 0.0, 0.0]]);
        let same = normalize_unit_sphere(&[[3.0, 1.0, 2.0]; 4]);
        assert!(same.iter().all(|p| *p == [0.0; 3]));
        let unit = vec![[1.0, 0.0, 0.0], [-1.0, 0.0, 0.0], [0.0, 0.5, 0.0], [0.0, -0.5, 0.0]];
        assert_eq!(normalize_unit_sphere(&unit), unit);
    }
}
