//! Bounding volume hierarchy over mesh triangles.
//!
//! All queries break ties by the lowest triangle index so results are identical
//! to an exhaustive scan, not merely equally good.

use crate::geometry::{closest_point_on_triangle, ray_triangle, Aabb, Vec3};

const LEAF_SIZE: usize = 4;
// Rounding slack for box-vs-triangle distance comparisons when pruning.
const PRUNE_SLACK: f64 = 1e-12;

#[derive(Debug, Clone)]
enum NodeKind {
    Leaf { start: u32, count: u32 },
    Inner { left: u32, right: u32 },
}

#[derive(Debug, Clone)]
struct Node {
    bounds: Aabb,
    kind: NodeKind,
}

#[derive(Debug, Clone)]
pub struct Bvh {
    nodes: Vec<Node>,
    order: Vec<u32>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NearestHit {
    pub triangle: usize,
    pub point: Vec3,
    pub distance_squared: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RayHit {
    pub triangle: usize,
    pub t: f64,
}

/// Vertex access the hierarchy needs from its owner.
pub trait TriangleSource {
    fn triangle_count(&self) -> usize;
    fn corners(&self, tri: usize) -> [Vec3; 3];
}

impl Bvh {
    pub fn build(src: &impl TriangleSource) -> Self {
        let n = src.triangle_count();
        let mut bounds = Vec::with_capacity(n);
        let mut centroids = Vec::with_capacity(n);
        for t in 0..n {
            let c = src.corners(t);
            bounds.push(Aabb::from_points(c.iter()));
            centroids.push((c[0] + c[1] + c[2]) / 3.0);
        }
        let mut bvh = Bvh {
            nodes: Vec::with_capacity(2 * n / LEAF_SIZE + 1),
            order: (0..n as u32).collect(),
        };
        if n > 0 {
            bvh.build_node(0, n, &bounds, &centroids);
        }
        bvh
    }

    fn build_node(&mut self, start: usize, end: usize, bounds: &[Aabb], centroids: &[Vec3]) -> u32 {
        let mut b = Aabb::EMPTY;
        let mut cb = Aabb::EMPTY;
        for &t in &self.order[start..end] {
            b = b.union(&bounds[t as usize]);
            cb.grow(&centroids[t as usize]);
        }
        let id = self.nodes.len() as u32;
        self.nodes.push(Node {
            bounds: b,
            kind: NodeKind::Leaf {
                start: start as u32,
                count: (end - start) as u32,
            },
        });
        if end - start <= LEAF_SIZE {
            return id;
        }
        let ext = cb.extents();
        let axis = (0..3).max_by(|&i, &j| ext[i].total_cmp(&ext[j])).unwrap();
        if ext[axis] <= 0.0 {
            return id;
        }
        let mid = (start + end) / 2;
        self.order[start..end].select_nth_unstable_by(mid - start, |&a, &b| {
            centroids[a as usize][axis]
                .total_cmp(&centroids[b as usize][axis])
                .then(a.cmp(&b))
        });
        let left = self.build_node(start, mid, bounds, centroids);
        let right = self.build_node(mid, end, bounds, centroids);
        self.nodes[id as usize].kind = NodeKind::Inner { left, right };
        id
    }

    pub fn root_bounds(&self) -> Aabb {
        self.nodes.first().map_or(Aabb::EMPTY, |n| n.bounds)
    }

    /// Triangle indices held by the leaves. Split nodes are rewritten in place
    /// during the build, so every remaining leaf is reachable.
    pub fn leaf_triangles(&self) -> Vec<usize> {
        let mut out = Vec::new();
        for n in &self.nodes {
            if let NodeKind::Leaf { start, count } = n.kind {
                out.extend(
                    self.order[start as usize..(start + count) as usize]
                        .iter()
                        .map(|&t| t as usize),
                );
            }
        }
        out
    }

    /// Nearest triangle to `p` with squared distance at most `max_d2`.
    pub fn nearest(&self, src: &impl TriangleSource, p: &Vec3, max_d2: f64) -> Option<NearestHit> {
        let mut best: Option<NearestHit> = None;
        let mut bound = max_d2;
        if self.nodes.is_empty() {
            return None;
        }
        let mut stack: Vec<u32> = Vec::with_capacity(64);
        stack.push(0);
        while let Some(id) = stack.pop() {
            let node = &self.nodes[id as usize];
            if node.bounds.distance_squared(p) > bound * (1.0 + PRUNE_SLACK) {
                continue;
            }
            match node.kind {
                NodeKind::Leaf { start, count } => {
                    for &t in &self.order[start as usize..(start + count) as usize] {
                        let t = t as usize;
                        let [a, b, c] = src.corners(t);
                        let q = closest_point_on_triangle(p, &a, &b, &c);
                        let d2 = (p - q).norm_squared();
                        if d2 > max_d2 {
                            continue;
                        }
                        let better = match &best {
                            None => true,
                            Some(h) => d2 < h.distance_squared || (d2 == h.distance_squared && t < h.triangle),
                        };
                        if better {
                            best = Some(NearestHit {
                                triangle: t,
                                point: q,
                                distance_squared: d2,
                            });
                            bound = d2;
                        }
                    }
                }
                NodeKind::Inner { left, right } => {
                    let dl = self.nodes[left as usize].bounds.distance_squared(p);
                    let dr = self.nodes[right as usize].bounds.distance_squared(p);
                    // visit the closer child first
                    if dl <= dr {
                        stack.push(right);
                        stack.push(left);
                    } else {
                        stack.push(left);
                        stack.push(right);
                    }
                }
            }
        }
        best
    }

    /// True if any triangle lies within squared distance `d2` of `p`.
    pub fn any_within(&self, src: &impl TriangleSource, p: &Vec3, d2: f64) -> bool {
        if self.nodes.is_empty() {
            return false;
        }
        let mut stack: Vec<u32> = Vec::with_capacity(64);
        stack.push(0);
        while let Some(id) = stack.pop() {
            let node = &self.nodes[id as usize];
            if node.bounds.distance_squared(p) > d2 * (1.0 + PRUNE_SLACK) {
                continue;
            }
            match node.kind {
                NodeKind::Leaf { start, count } => {
                    for &t in &self.order[start as usize..(start + count) as usize] {
                        let [a, b, c] = src.corners(t as usize);
                        let q = closest_point_on_triangle(p, &a, &b, &c);
                        if (p - q).norm_squared() <= d2 {
                            return true;
                        }
                    }
                }
                NodeKind::Inner { left, right } => {
                    stack.push(left);
                    stack.push(right);
                }
            }
        }
        false
    }

    /// Closest ray hit within `[0, t_max]`.
    pub fn raycast(&self, src: &impl TriangleSource, origin: &Vec3, dir: &Vec3, t_max: f64) -> Option<RayHit> {
        if self.nodes.is_empty() {
            return None;
        }
        let inv = Vec3::new(1.0 / dir.x, 1.0 / dir.y, 1.0 / dir.z);
        let mut best: Option<RayHit> = None;
        let mut bound = t_max;
        let mut stack: Vec<u32> = Vec::with_capacity(64);
        stack.push(0);
        while let Some(id) = stack.pop() {
            let node = &self.nodes[id as usize];
            let slack = bound.abs() * PRUNE_SLACK + 1e-12;
            let Some(_) = node.bounds.padded(slack).ray_entry(origin, &inv, bound + slack) else {
                continue;
            };
            match node.kind {
                NodeKind::Leaf { start, count } => {
                    for &t in &self.order[start as usize..(start + count) as usize] {
                        let t = t as usize;
                        let [a, b, c] = src.corners(t);
                        if let Some(h) = ray_triangle(origin, dir, &a, &b, &c) {
                            if h > t_max {
                                continue;
                            }
                            let better = match &best {
                                None => true,
                                Some(b) => h < b.t || (h == b.t && t < b.triangle),
                            };
                            if better {
                                best = Some(RayHit { triangle: t, t: h });
                                bound = h;
                            }
                        }
                    }
                }
                NodeKind::Inner { left, right } => {
                    stack.push(left);
                    stack.push(right);
                }
            }
        }
        best
    }
}
