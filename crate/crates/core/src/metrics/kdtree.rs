use nalgebra::Vector3;

/// Static 3-d tree for exact nearest-neighbour distances. Distances are
/// computed as `(q - p).norm()`, the same expression a brute-force loop
/// uses, and pruning is conservative, so results match brute force bit for
/// bit.
pub(crate) struct KdTree {
    points: Vec<Vector3<f64>>,
    nodes: Vec<Node>,
}

struct Node {
    /// Index into `points` of the splitting point.
    point: usize,
    axis: usize,
    left: Option<usize>,
    right: Option<usize>,
}

impl KdTree {
    pub fn new(points: Vec<Vector3<f64>>) -> Self {
        let mut idx: Vec<usize> = (0..points.len()).collect();
        let mut tree = Self {
            points,
            nodes: Vec::with_capacity(idx.len()),
        };
        tree.build(&mut idx, 0);
        tree
    }

    fn build(&mut self, idx: &mut [usize], depth: usize) -> Option<usize> {
        if idx.is_empty() {
            return None;
        }
        let axis = depth % 3;
        let mid = idx.len() / 2;
        let pts = &self.points;
        idx.select_nth_unstable_by(mid, |a, b| pts[*a][axis].total_cmp(&pts[*b][axis]));
        let node = self.nodes.len();
        self.nodes.push(Node {
            point: idx[mid],
            axis,
            left: None,
            right: None,
        });
        let (lo, rest) = idx.split_at_mut(mid);
        let left = self.build(lo, depth + 1);
        let right = self.build(&mut rest[1..], depth + 1);
        self.nodes[node].left = left;
        self.nodes[node].right = right;
        Some(node)
    }

    /// Distance from `q` to the nearest stored point; infinite when empty.
    pub fn nearest_distance(&self, q: &Vector3<f64>) -> f64 {
        let mut best_sq = f64::INFINITY;
        if !self.nodes.is_empty() {
            self.search(0, q, &mut best_sq);
        }
        best_sq.sqrt()
    }

    fn search(&self, node: usize, q: &Vector3<f64>, best_sq: &mut f64) {
        let n = &self.nodes[node];
        let p = &self.points[n.point];
        let d = (q - p).norm_squared();
        if d < *best_sq {
            *best_sq = d;
        }
        let diff = q[n.axis] - p[n.axis];
        let (near, far) = if diff < 0.0 { (n.left, n.right) } else { (n.right, n.left) };
        if let Some(c) = near {
            self.search(c, q, best_sq);
        }
        if let Some(c) = far {
            if diff * diff <= *best_sq {
                self.search(c, q, best_sq);
            }
        }
    }
}
