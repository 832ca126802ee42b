//! Average-linkage agglomerative clustering over a condensed dissimilarity
//! matrix, using the nearest-neighbour chain algorithm (O(N²) time).

/// Position of pair `(i, j)`, `i < j`, in a condensed upper triangle.
#[inline]
pub fn condensed_index(n: usize, i: usize, j: usize) -> usize {
    debug_assert!(i < j && j < n);
    i * (2 * n - i - 1) / 2 + (j - i - 1)
}

#[inline]
fn pair(n: usize, a: usize, b: usize) -> usize {
    if a < b {
        condensed_index(n, a, b)
    } else {
        condensed_index(n, b, a)
    }
}

/// One agglomeration step. Clusters are named by one of their member
/// samples, so `a` and `b` are sample indices.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Merge {
    pub a: usize,
    pub b: usize,
    pub height: f64,
}

/// Average-linkage dendrogram, merges sorted by non-decreasing height.
///
/// `dissim` is the condensed matrix of `n` points and is consumed as scratch.
pub fn average_linkage(n: usize, mut dissim: Vec<f64>) -> Vec<Merge> {
    assert_eq!(dissim.len(), n * n.saturating_sub(1) / 2, "condensed length");
    let mut merges = Vec::with_capacity(n.saturating_sub(1));
    if n < 2 {
        return merges;
    }
    let mut active = vec![true; n];
    let mut size = vec![1usize; n];
    let mut chain: Vec<usize> = Vec::with_capacity(n);
    let mut first_active = 0usize;

    while merges.len() < n - 1 {
        if chain.is_empty() {
            while !active[first_active] {
                first_active += 1;
            }
            chain.push(first_active);
        }
        let (a, b, height) = loop {
            let a = *chain.last().unwrap();
            let prev = (chain.len() >= 2).then(|| chain[chain.len() - 2]);
            let (mut best, mut best_d) = match prev {
                Some(p) => (p, dissim[pair(n, a, p)]),
                None => (usize::MAX, f64::INFINITY),
            };
            for x in 0..n {
                if x == a || !active[x] {
                    continue;
                }
                let d = dissim[pair(n, a, x)];
                if d < best_d {
                    best_d = d;
                    best = x;
                }
            }
            if Some(best) == prev {
                chain.pop();
                chain.pop();
                break (a, best, best_d);
            }
            chain.push(best);
        };

        // merged cluster keeps the larger index slot b' = max(a, b)
        let (gone, keep) = if a < b { (a, b) } else { (b, a) };
        let (sg, sk) = (size[gone] as f64, size[keep] as f64);
        active[gone] = false;
        for x in 0..n {
            if !active[x] || x == keep {
                continue;
            }
            let dg = dissim[pair(n, gone, x)];
            let dk = dissim[pair(n, keep, x)];
            dissim[pair(n, keep, x)] = (sg * dg + sk * dk) / (sg + sk);
        }
        size[keep] += size[gone];
        merges.push(Merge {
            a: gone,
            b: keep,
            height,
        });
    }
    merges.sort_by(|x, y| x.height.total_cmp(&y.height));
    merges
}

/// Labels after applying the first `applied` merges; ids are contiguous and
/// ordered by first appearance.
pub fn labels_after(n: usize, merges: &[Merge], applied: usize) -> Vec<usize> {
    let mut parent: Vec<usize> = (0..n).collect();
    fn find(parent: &mut [usize], mut x: usize) -> usize {
        while parent[x] != x {
            parent[x] = parent[parent[x]];
            x = parent[x];
        }
        x
    }
    for m in &merges[..applied] {
        let ra = find(&mut parent, m.a);
        let rb = find(&mut parent, m.b);
        if ra != rb {
            parent[ra.max(rb)] = ra.min(rb);
        }
    }
    let mut ids = vec![usize::MAX; n];
    let mut next = 0;
    let mut labels = Vec::with_capacity(n);
    for i in 0..n {
        let r = find(&mut parent, i);
        if ids[r] == usize::MAX {
            ids[r] = next;
            next += 1;
        }
        labels.push(ids[r]);
    }
    labels
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    /// Textbook O(N³) average linkage: repeatedly merge the closest pair of
    /// clusters by mean pairwise dissimilarity.
    fn naive_heights(n: usize, d: &[f64]) -> Vec<f64> {
        let mut clusters: Vec<Vec<usize>> = (0..n).map(|i| vec![i]).collect();
        let mut heights = Vec::new();
        while clusters.len() > 1 {
            let mut best = (0, 1, f64::INFINITY);
            for i in 0..clusters.len() {
                for j in i + 1..clusters.len() {
                    let mut s = 0.0;
                    for &p in &clusters[i] {
                        for &q in &clusters[j] {
                            s += d[pair(n, p, q)];
                        }
                    }
                    let avg = s / (clusters[i].len() * clusters[j].len()) as f64;
                    if avg < best.2 {
                        best = (i, j, avg);
                    }
                }
            }
            let (i, j, h) = best;
            let moved = clusters.remove(j);
            clusters[i].extend(moved);
            heights.push(h);
        }
        heights.sort_by(f64::total_cmp);
        heights
    }

    #[test]
    fn condensed_layout() {
        let n = 4;
        let idx: Vec<usize> = [(0, 1), (0, 2), (0, 3), (1, 2), (1, 3), (2, 3)]
            .iter()
            .map(|&(i, j)| condensed_index(n, i, j))
            .collect();
        assert_eq!(idx, vec![0, 1, 2, 3, 4, 5]);
    }

    #[test]
    fn two_blocks() {
        // {0,2} and {1,3} at distance 0 inside, 1 across
        let n = 4;
        let mut d = vec![1.0; 6];
        d[condensed_index(n, 0, 2)] = 0.0;
        d[condensed_index(n, 1, 3)] = 0.0;
        let m = average_linkage(n, d);
        assert_eq!(
            m.iter().map(|m| m.height).collect::<Vec<_>>(),
            vec![0.0, 0.0, 1.0]
        );
        assert_eq!(labels_after(n, &m, 2), vec![0, 1, 0, 1]);
        assert_eq!(labels_after(n, &m, 3), vec![0, 0, 0, 0]);
        assert_eq!(labels_after(n, &m, 0), vec![0, 1, 2, 3]);
    }

    proptest! {
        #[test]
        fn matches_naive_average_linkage(n in 2usize..12, seed in any::<u64>()) {
            use rand::{Rng, SeedableRng};
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
            // points on a line give distinct, tie-free dissimilarities
            let pts: Vec<f64> = (0..n).map(|_| rng.random_range(0.0..100.0)).collect();
            let mut d = Vec::new();
            for i in 0..n {
                for j in i + 1..n {
                    d.push((pts[i] - pts[j]).abs());
                }
            }
            let fast: Vec<f64> = average_linkage(n, d.clone()).iter().map(|m| m.height).collect();
            let slow = naive_heights(n, &d);
            for (a, b) in fast.iter().zip(&slow) {
                prop_assert!((a - b).abs() < 1e-9, "{:?} vs {:?}", fast, slow);
            }
        }
    }
}
