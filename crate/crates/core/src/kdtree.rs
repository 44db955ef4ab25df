//! Exact nearest-neighbour queries over 3-D points.

use crate::scalar::Real;

const LEAF: usize = 8;

/// Static k-d tree. Indices returned refer to the slice it was built from.
#[derive(Debug, Clone)]
pub struct KdTree<T> {
    points: Vec<[T; 3]>,
    /// Permutation of point indices; each node owns a contiguous range.
    order: Vec<usize>,
    nodes: Vec<Node<T>>,
}

#[derive(Debug, Clone)]
enum Node<T> {
    Leaf { start: usize, end: usize },
    Split { axis: usize, value: T, left: usize, right: usize },
}

fn dist2<T: Real>(a: &[T; 3], b: &[T; 3]) -> T {
    let d = [a[0] - b[0], a[1] - b[1], a[2] - b[2]];
    d[0] * d[0] + d[1] * d[1] + d[2] * d[2]
}

impl<T: Real> KdTree<T> {
    pub fn new(points: &[[T; 3]]) -> Self {
        let mut tree = KdTree {
            points: points.to_vec(),
            order: (0..points.len()).collect(),
            nodes: Vec::new(),
        };
        if !points.is_empty() {
            tree.build(0, points.len());
        }
        tree
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    fn build(&mut self, start: usize, end: usize) -> usize {
        let id = self.nodes.len();
        if end - start <= LEAF {
            self.nodes.push(Node::Leaf { start, end });
            return id;
        }
        // split on the widest axis at the median
        let mut lo = [T::infinity(); 3];
        let mut hi = [T::neg_infinity(); 3];
        for &i in &self.order[start..end] {
            for a in 0..3 {
                lo[a] = lo[a].min(self.points[i][a]);
                hi[a] = hi[a].max(self.points[i][a]);
            }
        }
        let axis = (0..3)
            .max_by(|&a, &b| (hi[a] - lo[a]).partial_cmp(&(hi[b] - lo[b])).expect("finite points"))
            .expect("three axes");
        let mid = start + (end - start) / 2;
        let pts = &self.points;
        self.order[start..end].select_nth_unstable_by(mid - start, |&i, &j| {
            pts[i][axis].partial_cmp(&pts[j][axis]).expect("finite points")
        });
        let value = self.points[self.order[mid]][axis];
        self.nodes.push(Node::Leaf { start, end });
        let left = self.build(start, mid);
        let right = self.build(mid, end);
        self.nodes[id] = Node::Split {
            axis,
            value,
            left,
            right,
        };
        id
    }

    /// Nearest point to `q`: `(index, squared distance)`. Ties go to the lower index.
    pub fn nearest(&self, q: &[T; 3]) -> Option<(usize, T)> {
        self.k_nearest(q, 1).into_iter().next()
    }

    /// The `k` nearest points to `q`, nearest first; ties broken by index.
    pub fn k_nearest(&self, q: &[T; 3], k: usize) -> Vec<(usize, T)> {
        if self.points.is_empty() || k == 0 {
            return Vec::new();
        }
        let mut best: Vec<(usize, T)> = Vec::with_capacity(k + 1);
        self.search(0, q, k, &mut best);
        best
    }

    fn search(&self, node: usize, q: &[T; 3], k: usize, best: &mut Vec<(usize, T)>) {
        match self.nodes[node] {
            Node::Leaf { start, end } => {
                for &i in &self.order[start..end] {
                    let d = dist2(&self.points[i], q);
                    // entries ordered by (distance, index)
                    let before = |e: &(usize, T)| e.1 < d || (e.1 == d && e.0 < i);
                    if best.len() == k && before(&best[k - 1]) {
                        continue;
                    }
                    let pos = best.iter().position(|e| !before(e)).unwrap_or(best.len());
                    best.insert(pos, (i, d));
                    best.truncate(k);
                }
            }
            Node::Split {
                axis,
                value,
                left,
                right,
            } => {
                let diff = q[axis] - value;
                let (near, far) = if diff < T::zero() { (left, right) } else { (right, left) };
                self.search(near, q, k, best);
                if best.len() < k || diff * diff <= best[k - 1].1 {
                    self.search(far, q, k, best);
                }
            }
        }
    }
}

/// Reference nearest neighbour by linear scan, with the same tie rule.
pub fn brute_nearest<T: Real>(points: &[[T; 3]], q: &[T; 3]) -> Option<(usize, T)> {
    brute_k_nearest(points, q, 1).into_iter().next()
}

/// Reference `k` nearest neighbours by sorting all distances.
pub fn brute_k_nearest<T: Real>(points: &[[T; 3]], q: &[T; 3], k: usize) -> Vec<(usize, T)> {
    let mut all: Vec<(usize, T)> = points.iter().enumerate().map(|(i, p)| (i, dist2(p, q))).collect();
    all.sort_by(|a, b| a.1.partial_cmp(&b.1).expect("finite").then(a.0.cmp(&b.0)));
    all.truncate(k);
    all
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::forward::row_rng;
    use rand::Rng;

    #[test]
    fn matches_brute_force() {
        let mut rng = row_rng(2, 0);
        let pts: Vec<[f64; 3]> = (0..700).map(|_| [rng.random(), rng.random(), rng.random::<f64>() * 0.1]).collect();
        let tree = KdTree::new(&pts);
        for _ in 0..200 {
            let q = [rng.random::<f64>() * 1.2 - 0.1, rng.random(), rng.random()];
            assert_eq!(tree.nearest(&q), brute_nearest(&pts, &q));
            assert_eq!(tree.k_nearest(&q, 6), brute_k_nearest(&pts, &q, 6));
        }
    }

    #[test]
    fn duplicates_and_ties_prefer_lower_index() {
        let pts = vec![[1.0, 0.0, 0.0]; 20];
        let tree = KdTree::new(&pts);
        assert_eq!(tree.nearest(&[0.0, 0.0, 0.0]), Some((0, 1.0)));
        let k: Vec<usize> = tree.k_nearest(&[0.0; 3], 3).iter().map(|e| e.0).collect();
        assert_eq!(k, vec![0, 1, 2]);
        assert!(KdTree::<f64>::new(&[]).nearest(&[0.0; 3]).is_none());
    }
}
