//! Uniform-grid spatial index over a fixed point set.

use std::collections::HashMap;

use nalgebra::Vector3;

pub struct PointIndex<'a> {
    points: &'a [Vector3<f64>],
    cell: f64,
    buckets: HashMap<[i64; 3], Vec<usize>>,
}

impl<'a> PointIndex<'a> {
    pub fn new(points: &'a [Vector3<f64>], cell: f64) -> Self {
        assert!(cell > 0.0, "cell size must be positive");
        let mut buckets: HashMap<[i64; 3], Vec<usize>> = HashMap::new();
        for (i, p) in points.iter().enumerate() {
            buckets.entry(Self::key_of(p, cell)).or_default().push(i);
        }
        Self { points, cell, buckets }
    }

    fn key_of(p: &Vector3<f64>, cell: f64) -> [i64; 3] {
        [0, 1, 2].map(|c| (p[c] / cell).floor() as i64)
    }

    /// The `k` nearest points to `q` (including `q` itself if it is in the set),
    /// ordered by distance and then index.
    pub fn knn(&self, q: &Vector3<f64>, k: usize) -> Vec<usize> {
        let k = k.min(self.points.len());
        if k == 0 {
            return Vec::new();
        }
        let center = Self::key_of(q, self.cell);
        let mut found: Vec<(f64, usize)> = Vec::new();
        let mut ring = 0i64;
        loop {
            for dz in -ring..=ring {
                for dy in -ring..=ring {
                    for dx in -ring..=ring {
                        if dx.abs().max(dy.abs()).max(dz.abs()) != ring {
                            continue;
                        }
                        if let Some(list) = self.buckets.get(&[center[0] + dx, center[1] + dy, center[2] + dz]) {
                            found.extend(list.iter().map(|&i| ((self.points[i] - q).norm(), i)));
                        }
                    }
                }
            }
            // every point inside `ring` cells of q has been seen once the shell is complete
            let covered = ring as f64 * self.cell;
            if found.len() >= k {
                found.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
                if found[k - 1].0 <= covered || found.len() == self.points.len() {
                    found.truncate(k);
                    return found.into_iter().map(|(_, i)| i).collect();
                }
            }
            ring += 1;
        }
    }

    /// All points within `radius` of `q`, by ascending index.
    pub fn within(&self, q: &Vector3<f64>, radius: f64) -> Vec<usize> {
        let r = (radius / self.cell).ceil() as i64;
        let c = Self::key_of(q, self.cell);
        let mut out = Vec::new();
        for dz in -r..=r {
            for dy in -r..=r {
                for dx in -r..=r {
                    if let Some(list) = self.buckets.get(&[c[0] + dx, c[1] + dy, c[2] + dz]) {
                        out.extend(list.iter().copied().filter(|&i| (self.points[i] - q).norm() <= radius));
                    }
                }
            }
        }
        out.sort_unstable();
        out
    }
}
