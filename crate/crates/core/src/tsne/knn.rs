use crate::nn::{squared_distance, Matrix};

/// Leave-one-out k-nearest-neighbor accuracy on the given coordinates.
///
/// Neighbors are ordered by distance, then by index. A vote tie between
/// classes goes to the class whose tied neighbors have the smallest mean
/// distance, then to the lowest class index.
pub fn knn_utility(coords: &Matrix, labels: &[usize], k: usize) -> f64 {
    let n = coords.rows();
    if n < 2 || k == 0 {
        return 0.0;
    }
    let k = k.min(n - 1);
    let classes = labels.iter().copied().max().unwrap_or(0) + 1;
    let mut hits = 0usize;
    let mut neighbors: Vec<(f64, usize)> = Vec::with_capacity(n - 1);
    let mut votes = vec![0usize; classes];
    let mut dist_sum = vec![0.0f64; classes];
    for i in 0..n {
        neighbors.clear();
        neighbors.extend(
            (0..n)
                .filter(|&j| j != i)
                .map(|j| (squared_distance(coords.row(i), coords.row(j)).sqrt(), j)),
        );
        neighbors.select_nth_unstable_by(k - 1, |a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
        votes.iter_mut().for_each(|v| *v = 0);
        dist_sum.iter_mut().for_each(|v| *v = 0.0);
        for &(d, j) in &neighbors[..k] {
            votes[labels[j]] += 1;
            dist_sum[labels[j]] += d;
        }
        let mut best = 0;
        for c in 1..classes {
            if votes[c] > votes[best]
                || (votes[c] == votes[best]
                    && votes[c] > 0
                    && dist_sum[c] / (votes[c] as f64) < dist_sum[best] / (votes[best] as f64))
            {
                best = c;
            }
        }
        if best == labels[i] {
            hits += 1;
        }
    }
    hits as f64 / n as f64
}
