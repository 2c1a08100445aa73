use crate::mesh::Point3;
use crate::scalar::Scalar;

#[inline]
pub fn sq_dist<T: Scalar>(a: &Point3<T>, b: &Point3<T>) -> T {
    let dx = a[0] - b[0];
    let dy = a[1] - b[1];
    let dz = a[2] - b[2];
    dx * dx + dy * dy + dz * dz
}

enum Node {
    Leaf { start: usize, end: usize },
    Split { axis: usize, value_idx: usize, left: usize, right: usize },
}

/// Static 3-d tree for exact nearest-neighbor queries.
///
/// Distances use [`sq_dist`], so results agree bit for bit with a linear scan.
pub struct KdTree<'a, T> {
    points: &'a [Point3<T>],
    order: Vec<usize>,
    nodes: Vec<Node>,
}

const LEAF: usize = 8;

impl<'a, T: Scalar> KdTree<'a, T> {
    pub fn new(points: &'a [Point3<T>]) -> Self {
        let mut tree = Self {
            points,
            order: (0..points.len()).collect(),
            nodes: Vec::new(),
        };
        if !points.is_empty() {
            tree.build(0, points.len());
        }
        tree
    }

    fn build(&mut self, start: usize, end: usize) -> usize {
        let id = self.nodes.len();
        if end - start <= LEAF {
            self.nodes.push(Node::Leaf { start, end });
            return id;
        }
        let pts = self.points;
        let mut lo = [T::infinity(); 3];
        let mut hi = [T::neg_infinity(); 3];
        for &i in &self.order[start..end] {
            for k in 0..3 {
                lo[k] = lo[k].min(pts[i][k]);
                hi[k] = hi[k].max(pts[i][k]);
            }
        }
        let axis = (0..3)
            .max_by(|&a, &b| (hi[a] - lo[a]).partial_cmp(&(hi[b] - lo[b])).unwrap_or(std::cmp::Ordering::Equal))
            .unwrap_or(0);
        let mid = (start + end) / 2;
        self.order[start..end].select_nth_unstable_by(mid - start, |&a, &b| {
            pts[a][axis].partial_cmp(&pts[b][axis]).unwrap_or(std::cmp::Ordering::Equal)
        });
        let value_idx = self.order[mid];
        self.nodes.push(Node::Leaf { start: 0, end: 0 });
        let left = self.build(start, mid);
        let right = self.build(mid, end);
        self.nodes[id] = Node::Split {
            axis,
            value_idx,
            left,
            right,
        };
        id
    }

    /// Squared distance to the nearest point and its index.
    pub fn nearest(&self, q: &Point3<T>) -> Option<(T, usize)> {
        if self.points.is_empty() {
            return None;
        }
        let mut best = (T::infinity(), usize::MAX);
        self.search(0, q, &mut best);
        Some(best)
    }

    fn search(&self, node: usize, q: &Point3<T>, best: &mut (T, usize)) {
        match self.nodes[node] {
            Node::Leaf { start, end } => {
                for &i in &self.order[start..end] {
                    let d = sq_dist(q, &self.points[i]);
                    if d < best.0 || (d == best.0 && i < best.1) {
                        *best = (d, i);
                    }
                }
            }
            Node::Split {
                axis,
                value_idx,
                left,
                right,
            } => {
                let split = self.points[value_idx][axis];
                let diff = q[axis] - split;
                let (near, far) = if diff < T::zero() { (left, right) } else { (right, left) };
                self.search(near, q, best);
                // every point across the plane is at least |diff| away on this axis
                if diff * diff <= best.0 {
                    self.search(far, q, best);
                }
            }
        }
    }
}
