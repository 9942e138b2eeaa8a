//! Fibonacci grids on S², nearest-neighbour graphs, widest (bottleneck)
//! paths and superlevel-set connectivity thresholds.

use std::cmp::Ordering;
use std::collections::BinaryHeap;

use nalgebra::Vector3;

use crate::so3::{perpendicular, Rotation};

/// `n` nearly uniform points on the unit sphere, ordered by decreasing `z`.
pub fn fibonacci_sphere(n: usize) -> Vec<Vector3<f64>> {
    let golden = std::f64::consts::PI * (3.0 - 5f64.sqrt());
    (0..n)
        .map(|i| {
            let z = 1.0 - 2.0 * (i as f64 + 0.5) / n as f64;
            let r = (1.0 - z * z).max(0.0).sqrt();
            let phi = golden * i as f64;
            Vector3::new(r * phi.cos(), r * phi.sin(), z)
        })
        .collect()
}

/// Point at fraction `t` of the great-circle arc from `a` to `b`.
pub fn arc_point(a: &Vector3<f64>, b: &Vector3<f64>, t: f64) -> Vector3<f64> {
    let angle = a.dot(b).clamp(-1.0, 1.0).acos();
    if angle < 1e-12 {
        return *a;
    }
    let axis = {
        let c = a.cross(b);
        if c.norm() < 1e-12 {
            perpendicular(a)
        } else {
            c.normalize()
        }
    };
    Rotation::exp(&(axis * (angle * t))).apply(a)
}

/// The arc from `a` to `b` sampled with spacing at most `max_step`,
/// excluding `a` and including `b`.
pub fn densify_arc(a: &Vector3<f64>, b: &Vector3<f64>, max_step: f64) -> Vec<Vector3<f64>> {
    let angle = a.dot(b).clamp(-1.0, 1.0).acos();
    let pieces = ((angle / max_step).ceil() as usize).max(1);
    (1..=pieces).map(|k| arc_point(a, b, k as f64 / pieces as f64)).collect()
}

/// Fibonacci grid with a symmetric k-nearest-neighbour graph.
#[derive(Clone, Debug)]
pub struct SphereGraph {
    pub points: Vec<Vector3<f64>>,
    pub neighbors: Vec<Vec<usize>>,
}

impl SphereGraph {
    pub fn new(n: usize, k: usize) -> Self {
        let points = fibonacci_sphere(n);
        // Neighbours within angle θ satisfy |Δz| ≤ θ, and the grid is sorted
        // by z, so a window in index space suffices.
        let spacing = (4.0 * std::f64::consts::PI / n as f64).sqrt();
        let dz = 4.0 * spacing * (k as f64 / 6.0).sqrt().max(1.0);
        let window = ((dz * n as f64 / 2.0).ceil() as usize + 2).min(n);
        let mut neighbors = vec![Vec::new(); n];
        for i in 0..n {
            let lo = i.saturating_sub(window);
            let hi = (i + window + 1).min(n);
            let mut cand: Vec<(f64, usize)> = (lo..hi)
                .filter(|&j| j != i)
                .map(|j| (-points[i].dot(&points[j]), j))
                .collect();
            cand.sort_by(|a, b| a.0.total_cmp(&b.0));
            for &(_, j) in cand.iter().take(k) {
                neighbors[i].push(j);
            }
        }
        let mut sym = neighbors.clone();
        for i in 0..n {
            for &j in &neighbors[i] {
                if !sym[j].contains(&i) {
                    sym[j].push(i);
                }
            }
        }
        SphereGraph { points, neighbors: sym }
    }

    /// Index of the grid point closest to `x`.
    pub fn nearest(&self, x: &Vector3<f64>) -> usize {
        self.nearest_k(x, 1)[0]
    }

    /// Indices of the `k` grid points closest to `x`, nearest first.
    pub fn nearest_k(&self, x: &Vector3<f64>, k: usize) -> Vec<usize> {
        let mut d: Vec<(f64, usize)> = self.points.iter().enumerate().map(|(i, p)| (-p.dot(x), i)).collect();
        d.sort_by(|a, b| a.0.total_cmp(&b.0));
        d.iter().take(k).map(|x| x.1).collect()
    }

    /// Edge weights `min(φ(a), φ(b), φ(midpoint))` in adjacency order.
    pub fn edge_weights(&self, node_values: &[f64], phi: &dyn Fn(&Vector3<f64>) -> f64) -> Vec<Vec<f64>> {
        self.neighbors
            .iter()
            .enumerate()
            .map(|(i, nb)| {
                nb.iter()
                    .map(|&j| {
                        let mid = (self.points[i] + self.points[j]).normalize();
                        node_values[i].min(node_values[j]).min(phi(&mid))
                    })
                    .collect()
            })
            .collect()
    }

    /// Path from `from` to `to` maximizing the smallest edge weight, with
    /// that bottleneck value.
    pub fn widest_path(&self, weights: &[Vec<f64>], from: usize, to: usize) -> (Vec<usize>, f64) {
        let n = self.points.len();
        let mut best = vec![f64::NEG_INFINITY; n];
        let mut prev = vec![usize::MAX; n];
        let mut heap = BinaryHeap::new();
        best[from] = f64::INFINITY;
        heap.push(Entry(f64::INFINITY, from));
        while let Some(Entry(w, i)) = heap.pop() {
            if w < best[i] {
                continue;
            }
            if i == to {
                break;
            }
            for (k, &j) in self.neighbors[i].iter().enumerate() {
                let cand = w.min(weights[i][k]);
                if cand > best[j] {
                    best[j] = cand;
                    prev[j] = i;
                    heap.push(Entry(cand, j));
                }
            }
        }
        let mut path = vec![to];
        let mut cur = to;
        while cur != from {
            cur = prev[cur];
            if cur == usize::MAX {
                return (Vec::new(), f64::NEG_INFINITY);
            }
            path.push(cur);
        }
        path.reverse();
        (path, best[to])
    }

    /// Largest `c` such that the edges of weight above `c` span one
    /// component containing every local maximum: the value of the last merge
    /// of two existing components when edges are added by decreasing weight.
    pub fn merge_threshold(&self, weights: &[Vec<f64>]) -> f64 {
        let mut edges: Vec<(f64, usize, usize)> = Vec::new();
        for (i, nb) in self.neighbors.iter().enumerate() {
            for (k, &j) in nb.iter().enumerate() {
                if i < j {
                    edges.push((weights[i][k], i, j));
                }
            }
        }
        edges.sort_by(|a, b| b.0.total_cmp(&a.0));
        let n = self.points.len();
        let mut uf = UnionFind::new(n);
        let mut touched = vec![false; n];
        // Weight at which each component appeared; components born on a
        // plateau at the merge weight are not separate maxima.
        let mut birth = vec![f64::NEG_INFINITY; n];
        // With a single maximum every superlevel set is connected.
        let mut last = edges.first().map_or(f64::NEG_INFINITY, |e| e.0);
        for (w, i, j) in edges {
            let (ri, rj) = (uf.find(i), uf.find(j));
            if ri == rj {
                continue;
            }
            let bi = if touched[i] { birth[ri] } else { w };
            let bj = if touched[j] { birth[rj] } else { w };
            if touched[i] && touched[j] && bi > w && bj > w {
                last = w;
            }
            uf.union(ri, rj);
            let r = uf.find(i);
            birth[r] = bi.max(bj);
            touched[i] = true;
            touched[j] = true;
        }
        last
    }
}

#[derive(PartialEq)]
struct Entry(f64, usize);

impl Eq for Entry {}

impl PartialOrd for Entry {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for Entry {
    fn cmp(&self, other: &Self) -> Ordering {
        self.0.total_cmp(&other.0).then_with(|| other.1.cmp(&self.1))
    }
}

/// Disjoint-set forest with path halving.
#[derive(Clone, Debug)]
pub struct UnionFind {
    parent: Vec<u32>,
}

impl UnionFind {
    pub fn new(n: usize) -> Self {
        UnionFind { parent: (0..n as u32).collect() }
    }

    pub fn find(&mut self, mut i: usize) -> usize {
        while self.parent[i] as usize != i {
            let p = self.parent[i] as usize;
            self.parent[i] = self.parent[p];
            i = self.parent[i] as usize;
        }
        i
    }

    pub fn union(&mut self, a: usize, b: usize) {
        let (ra, rb) = (self.find(a), self.find(b));
        if ra != rb {
            self.parent[ra.max(rb)] = ra.min(rb) as u32;
        }
    }
}

/// Monotone ascent of `phi` on S² from `start` until `phi ≥ target`, a
/// local maximum, or `max_steps`. Returns the visited points after `start`.
pub fn ascend(
    phi: &dyn Fn(&Vector3<f64>) -> f64,
    start: &Vector3<f64>,
    target: f64,
    step: f64,
    max_steps: usize,
) -> Vec<Vector3<f64>> {
    let mut x = *start;
    let mut fx = phi(&x);
    let mut out = Vec::new();
    let h = 1e-6;
    for _ in 0..max_steps {
        if fx >= target {
            break;
        }
        let t1 = perpendicular(&x);
        let t2 = x.cross(&t1);
        let d1 = (phi(&(x + t1 * h).normalize()) - phi(&(x - t1 * h).normalize())) / (2.0 * h);
        let d2 = (phi(&(x + t2 * h).normalize()) - phi(&(x - t2 * h).normalize())) / (2.0 * h);
        let g = t1 * d1 + t2 * d2;
        let gn = g.norm();
        if gn < 1e-12 {
            break;
        }
        let mut a = step;
        let mut moved = false;
        while a > 1e-9 {
            let y = arc_point(&x, &(x + g / gn * a.tan()).normalize(), 1.0);
            let fy = phi(&y);
            if fy > fx {
                x = y;
                fx = fy;
                out.push(y);
                moved = true;
                break;
            }
            a *= 0.5;
        }
        if !moved {
            break;
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn grid_is_unit_and_graph_is_local() {
        let g = SphereGraph::new(2000, 8);
        let spacing = (4.0 * std::f64::consts::PI / 2000.0).sqrt();
        for (i, p) in g.points.iter().enumerate() {
            assert!((p.norm() - 1.0).abs() < 1e-12);
            assert!(g.neighbors[i].len() >= 8);
            for &j in &g.neighbors[i] {
                assert!(p.dot(&g.points[j]).acos() < 3.0 * spacing);
            }
        }
    }

    #[test]
    fn widest_path_avoids_a_cap() {
        // φ is low on a band around the equator except near +x.
        let phi = |x: &Vector3<f64>| if x.z.abs() < 0.2 && x.x < 0.9 { 0.1 } else { 1.0 };
        let g = SphereGraph::new(3000, 8);
        let vals: Vec<f64> = g.points.iter().map(phi).collect();
        let w = g.edge_weights(&vals, &phi);
        let (path, bottleneck) = g.widest_path(&w, 0, 2999);
        assert_eq!(bottleneck, 1.0);
        assert!(path.iter().all(|&i| phi(&g.points[i]) == 1.0));
        assert_eq!(g.merge_threshold(&w), 1.0);
    }

    #[test]
    fn merge_threshold_of_two_caps() {
        // Two maxima at the poles joined through a saddle band of value 0.3.
        let phi = |x: &Vector3<f64>| x.z.abs().max(0.3);
        let g = SphereGraph::new(3000, 8);
        let vals: Vec<f64> = g.points.iter().map(phi).collect();
        let w = g.edge_weights(&vals, &phi);
        assert!((g.merge_threshold(&w) - 0.3).abs() < 1e-12);
    }

    #[test]
    fn ascent_is_monotone() {
        let phi = |x: &Vector3<f64>| x.z;
        let start = Vector3::new(1.0, 0.0, -0.5).normalize();
        let path = ascend(&phi, &start, 0.99, 0.05, 1000);
        let mut last = phi(&start);
        for p in &path {
            assert!(phi(p) > last);
            last = phi(p);
        }
        assert!(last >= 0.99);
    }
}
