//! Static 3D kd-tree for k-nearest-neighbor queries. Distance ties are
//! broken by point index so queries are fully deterministic.

/// Balanced kd-tree over a fixed set of points; node i of the implicit
/// binary layout owns the median of its subrange.
pub(crate) struct KdTree3 {
    points: Vec<[f64; 3]>,
    order: Vec<u32>,
}

impl KdTree3 {
    pub fn build(points: &[[f64; 3]]) -> Self {
        let mut order: Vec<u32> = (0..points.len() as u32).collect();
        build_range(points, &mut order, 0);
        KdTree3 {
            points: points.to_vec(),
            order,
        }
    }

    /// Mean Euclidean distance from point `query_idx` to its k nearest
    /// other points. Panics if fewer than k other points exist.
    pub fn mean_knn_distance(&self, query_idx: usize, k: usize) -> f64 {
        assert!(self.points.len() > k, "need more than k points");
        let mut heap: Vec<(f64, u32)> = Vec::with_capacity(k + 1);
        self.search(
            &self.points[query_idx],
            query_idx as u32,
            k,
            0,
            &mut heap,
            0,
            self.order.len(),
        );
        debug_assert_eq!(heap.len(), k);
        heap.iter().map(|(d, _)| d.sqrt()).sum::<f64>() / k as f64
    }

    #[allow(clippy::too_many_arguments)]
    fn search(
        &self,
        target: &[f64; 3],
        skip: u32,
        k: usize,
        depth: usize,
        heap: &mut Vec<(f64, u32)>,
        lo: usize,
        hi: usize,
    ) {
        if lo >= hi {
            return;
        }
        let mid = lo + (hi - lo) / 2;
        let idx = self.order[mid];
        let p = &self.points[idx as usize];
        if idx != skip {
            let d2 = dist2(target, p);
            push_bounded(heap, (d2, idx), k);
        }
        let axis = depth % 3;
        let diff = target[axis] - p[axis];
        let (near, far) = if diff < 0.0 {
            ((lo, mid), (mid + 1, hi))
        } else {
            ((mid + 1, hi), (lo, mid))
        };
        self.search(target, skip, k, depth + 1, heap, near.0, near.1);
        let worst = heap.last().map_or(f64::INFINITY, |(d, _)| *d);
        if heap.len() < k || diff * diff <= worst {
            self.search(target, skip, k, depth + 1, heap, far.0, far.1);
        }
    }
}

fn dist2(a: &[f64; 3], b: &[f64; 3]) -> f64 {
    let dx = a[0] - b[0];
    let dy = a[1] - b[1];
    let dz = a[2] - b[2];
    dx * dx + dy * dy + dz * dz
}

/// Keeps the k smallest candidates, ordered worst-last; ties prefer the
/// smaller index.
fn push_bounded(heap: &mut Vec<(f64, u32)>, item: (f64, u32), k: usize) {
    let worse = |a: &(f64, u32), b: &(f64, u32)| (a.0, a.1) > (b.0, b.1);
    if heap.len() == k {
        if !worse(heap.last().unwrap(), &item) {
            return;
        }
        heap.pop();
    }
    let pos = heap.partition_point(|e| !worse(e, &item));
    heap.insert(pos, item);
}

fn build_range(points: &[[f64; 3]], order: &mut [u32], depth: usize) {
    if order.len() <= 1 {
        return;
    }
    let axis = depth % 3;
    let mid = order.len() / 2;
    order.select_nth_unstable_by(mid, |&a, &b| {
        (points[a as usize][axis], a)
            .partial_cmp(&(points[b as usize][axis], b))
            .unwrap()
    });
    let (left, rest) = order.split_at_mut(mid);
    build_range(points, left, depth + 1);
    build_range(points, &mut rest[1..], depth + 1);
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{RngExt, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn brute_force_mean(points: &[[f64; 3]], i: usize, k: usize) -> f64 {
        let mut d: Vec<(f64, usize)> = points
            .iter()
            .enumerate()
            .filter(|(j, _)| *j != i)
            .map(|(j, p)| (dist2(&points[i], p), j))
            .collect();
        d.sort_by(|a, b| a.partial_cmp(b).unwrap());
        d[..k].iter().map(|(d2, _)| d2.sqrt()).sum::<f64>() / k as f64
    }

    #[test]
    fn matches_brute_force_on_random_clouds() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let points: Vec<[f64; 3]> = (0..400)
            .map(|_| {
                [
                    rng.random_range(-1.0..1.0),
                    rng.random_range(-1.0..1.0),
                    rng.random_range(-1.0..1.0),
                ]
            })
            .collect();
        let tree = KdTree3::build(&points);
        for i in (0..400).step_by(7) {
            for k in [1, 5, 80] {
                let fast = tree.mean_knn_distance(i, k);
                let slow = brute_force_mean(&points, i, k);
                assert!(
                    (fast - slow).abs() < 1e-12,
                    "point {i} k={k}: {fast} vs {slow}"
                );
            }
        }
    }

    #[test]
    fn handles_coincident_points_deterministically() {
        let mut points = vec![[0.0, 0.0, 0.0]; 5];
        points.push([1.0, 0.0, 0.0]);
        let tree = KdTree3::build(&points);
        // Query from a coincident point: 4 zero distances, then 1.0.
        let m = tree.mean_knn_distance(0, 5);
        assert!((m - 0.2).abs() < 1e-15);
        let m4 = tree.mean_knn_distance(0, 4);
        assert_eq!(m4, 0.0);
    }
}
