//! Bounding volume hierarchy over arbitrary primitives, plus the
//! ray/triangle test used at the leaves.

use crate::geometry::{Aabb, Vec3};

const LEAF_SIZE: usize = 4;
const BINS: usize = 12;

#[derive(Debug, Clone)]
struct Node {
    bounds: Aabb,
    /// Interior: index of the second child (the first follows this node).
    /// Leaf: first entry in `order`.
    offset: u32,
    /// 0 for interior nodes.
    count: u32,
}

#[derive(Debug, Clone, Default)]
pub struct Bvh {
    nodes: Vec<Node>,
    order: Vec<u32>,
}

impl Bvh {
    /// Builds over primitive bounds with binned SAH splits.
    pub fn build(bounds: &[Aabb]) -> Self {
        let mut bvh = Bvh {
            nodes: Vec::with_capacity(bounds.len() * 2),
            order: (0..bounds.len() as u32).collect(),
        };
        if !bounds.is_empty() {
            let centroids: Vec<Vec3> = bounds.iter().map(Aabb::centroid).collect();
            bvh.build_node(bounds, &centroids, 0, bounds.len());
        }
        bvh
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn bounds(&self) -> Aabb {
        self.nodes.first().map_or(Aabb::EMPTY, |n| n.bounds)
    }

    fn build_node(&mut self, bounds: &[Aabb], centroids: &[Vec3], start: usize, end: usize) -> usize {
        let idx = self.nodes.len();
        let node_bounds = self.order[start..end]
            .iter()
            .fold(Aabb::EMPTY, |b, &i| b.union(bounds[i as usize]));
        self.nodes.push(Node {
            bounds: node_bounds,
            offset: start as u32,
            count: (end - start) as u32,
        });
        let n = end - start;
        if n <= LEAF_SIZE {
            return idx;
        }
        let cb = Aabb::from_points(self.order[start..end].iter().map(|&i| centroids[i as usize]));
        let ext = cb.extent();
        let axis = if ext.x >= ext.y && ext.x >= ext.z {
            0
        } else if ext.y >= ext.z {
            1
        } else {
            2
        };
        if ext[axis] <= 0.0 {
            return idx;
        }
        let lo = cb.min[axis];
        let scale = BINS as f64 / ext[axis];
        let bin_of = |c: Vec3| (((c[axis] - lo) * scale) as usize).min(BINS - 1);
        let mut bin_bounds = [Aabb::EMPTY; BINS];
        let mut bin_count = [0usize; BINS];
        for &i in &self.order[start..end] {
            let b = bin_of(centroids[i as usize]);
            bin_bounds[b] = bin_bounds[b].union(bounds[i as usize]);
            bin_count[b] += 1;
        }
        let mut best = (f64::INFINITY, BINS / 2);
        for split in 1..BINS {
            let (mut lb, mut lc) = (Aabb::EMPTY, 0);
            for b in 0..split {
                lb = lb.union(bin_bounds[b]);
                lc += bin_count[b];
            }
            let (mut rb, mut rc) = (Aabb::EMPTY, 0);
            for b in split..BINS {
                rb = rb.union(bin_bounds[b]);
                rc += bin_count[b];
            }
            if lc == 0 || rc == 0 {
                continue;
            }
            let cost = lb.surface_area() * lc as f64 + rb.surface_area() * rc as f64;
            if cost < best.0 {
                best = (cost, split);
            }
        }
        let split = best.1;
        let slice = &mut self.order[start..end];
        let mut mid = 0;
        for k in 0..slice.len() {
            if bin_of(centroids[slice[k] as usize]) < split {
                slice.swap(k, mid);
                mid += 1;
            }
        }
        if mid == 0 || mid == n {
            mid = n / 2;
            slice.sort_by(|&a, &b| centroids[a as usize][axis].total_cmp(&centroids[b as usize][axis]));
        }
        let mid = start + mid;
        self.nodes[idx].count = 0;
        self.build_node(bounds, centroids, start, mid);
        let right = self.build_node(bounds, centroids, mid, end);
        self.nodes[idx].offset = right as u32;
        idx
    }

    /// Visits primitives whose boxes the ray may hit before `t_max`.
    /// `visit` returns the new closest distance when it records a hit.
    pub fn traverse(&self, origin: Vec3, dir: Vec3, mut t_max: f64, mut visit: impl FnMut(usize, f64) -> Option<f64>) -> f64 {
        if self.nodes.is_empty() {
            return t_max;
        }
        let inv = Vec3::new(1.0 / dir.x, 1.0 / dir.y, 1.0 / dir.z);
        let mut stack = [0u32; 64];
        let mut sp = 1;
        while sp > 0 {
            sp -= 1;
            let node = &self.nodes[stack[sp] as usize];
            if node.bounds.hit(origin, inv, t_max).is_none() {
                continue;
            }
            if node.count > 0 {
                let s = node.offset as usize;
                for &p in &self.order[s..s + node.count as usize] {
                    if let Some(t) = visit(p as usize, t_max) {
                        t_max = t_max.min(t);
                    }
                }
            } else {
                let here = stack[sp] as usize;
                stack[sp] = here as u32 + 1;
                stack[sp + 1] = node.offset;
                sp += 2;
            }
        }
        t_max
    }
}

/// Möller–Trumbore. Returns the ray parameter of a hit in `(t_min, t_max)`.
pub fn intersect_triangle(origin: Vec3, dir: Vec3, v0: Vec3, e1: Vec3, e2: Vec3, t_min: f64, t_max: f64) -> Option<f64> {
    let p = dir.cross(e2);
    let det = e1.dot(p);
    if det.abs() < 1e-300 {
        return None;
    }
    let inv = 1.0 / det;
    let s = origin - v0;
    let u = s.dot(p) * inv;
    if !(0.0..=1.0).contains(&u) {
        return None;
    }
    let q = s.cross(e1);
    let v = dir.dot(q) * inv;
    if v < 0.0 || u + v > 1.0 {
        return None;
    }
    let t = e2.dot(q) * inv;
    (t > t_min && t < t_max).then_some(t)
}
