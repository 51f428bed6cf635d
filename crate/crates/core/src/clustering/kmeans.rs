//! K-means by Lloyd's iteration from k-means++ seeding.

use rand::seq::index::sample;
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{
    check_dimensions, distinct_count, dot, mean_of, squared_distance, ClusterAssignment,
    ClusterError,
};
use crate::seed;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Distance {
    #[default]
    SquaredEuclidean,
    /// `1 - cos(a, b)`; intended for unit-normalized embeddings.
    Cosine,
}

impl Distance {
    pub fn eval(self, a: &[f64], b: &[f64]) -> f64 {
        match self {
            Distance::SquaredEuclidean => squared_distance(a, b),
            Distance::Cosine => {
                let na = dot(a, a).sqrt();
                let nb = dot(b, b).sqrt();
                if na == 0.0 || nb == 0.0 {
                    1.0
                } else {
                    1.0 - dot(a, b) / (na * nb)
                }
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KMeansOptions {
    pub max_iter: usize,
    /// Independent k-means++ restarts; the lowest-inertia run wins.
    pub n_init: usize,
    pub distance: Distance,
    /// After Lloyd converges, move single points between clusters while a
    /// move lowers the squared-Euclidean objective. Ignored for cosine.
    pub transfer_refinement: bool,
    /// When the number of `C`-subsets of the points is at most this, Lloyd
    /// is also started from every such subset as the initial centres.
    pub exhaustive_seed_limit: usize,
}

impl Default for KMeansOptions {
    fn default() -> Self {
        Self {
            max_iter: 300,
            n_init: 10,
            distance: Distance::SquaredEuclidean,
            transfer_refinement: true,
            exhaustive_seed_limit: 256,
        }
    }
}

pub fn kmeans<V: AsRef<[f64]>>(
    vectors: &[V],
    c: usize,
    seed: u64,
) -> Result<ClusterAssignment, ClusterError> {
    kmeans_with(vectors, c, seed, &KMeansOptions::default())
}

/// Clusters `vectors` into `c` groups. Deterministic for a given seed.
/// Clusters are numbered in order of their first member in the input.
pub fn kmeans_with<V: AsRef<[f64]>>(
    vectors: &[V],
    c: usize,
    seed: u64,
    opts: &KMeansOptions,
) -> Result<ClusterAssignment, ClusterError> {
    let dim = check_dimensions(vectors)?;
    if c == 0 || c > vectors.len() {
        return Err(ClusterError::InvalidClusterCount {
            requested: c,
            points: vectors.len(),
        });
    }
    let distinct = distinct_count(vectors);
    if c > distinct {
        return Err(ClusterError::DegenerateInput {
            requested: c,
            distinct,
        });
    }

    let mut inits: Vec<Vec<Vec<f64>>> = (0..opts.n_init.max(1))
        .map(|run| {
            let mut rng = seed::rng(seed, "kmeans-init", run as u64);
            plus_plus_init(vectors, c, opts.distance, &mut rng)
        })
        .collect();
    if binomial_at_most(vectors.len(), c, opts.exhaustive_seed_limit) {
        for subset in combinations(vectors.len(), c) {
            let centres: Vec<Vec<f64>> =
                subset.iter().map(|&i| vectors[i].as_ref().to_vec()).collect();
            if distinct_count(&centres) == c {
                inits.push(centres);
            }
        }
    }

    let mut best: Option<ClusterAssignment> = None;
    for init in inits {
        let mut result = lloyd(vectors, init, dim, opts);
        if opts.transfer_refinement && opts.distance == Distance::SquaredEuclidean {
            transfer_refine(vectors, &mut result, dim);
        }
        if best.as_ref().is_none_or(|b| result.inertia < b.inertia) {
            best = Some(result);
        }
    }
    Ok(first_appearance_order(best.expect("at least one run")))
}

fn binomial_at_most(n: usize, k: usize, limit: usize) -> bool {
    let k = k.min(n - k);
    let mut acc: u128 = 1;
    for i in 0..k {
        acc = acc * (n - i) as u128 / (i + 1) as u128;
        if acc > limit as u128 {
            return false;
        }
    }
    acc <= limit as u128
}

fn combinations(n: usize, k: usize) -> Vec<Vec<usize>> {
    let mut out = Vec::new();
    let mut idx: Vec<usize> = (0..k).collect();
    loop {
        out.push(idx.clone());
        let Some(i) = (0..k).rev().find(|&i| idx[i] < n - k + i) else {
            return out;
        };
        idx[i] += 1;
        for j in i + 1..k {
            idx[j] = idx[j - 1] + 1;
        }
    }
}

fn plus_plus_init<V: AsRef<[f64]>, R: Rng>(
    vectors: &[V],
    c: usize,
    distance: Distance,
    rng: &mut R,
) -> Vec<Vec<f64>> {
    let n = vectors.len();
    let mut centres = vec![vectors[rng.random_range(0..n)].as_ref().to_vec()];
    let mut nearest: Vec<f64> = vectors
        .iter()
        .map(|v| distance.eval(v.as_ref(), &centres[0]))
        .collect();
    while centres.len() < c {
        let total: f64 = nearest.iter().sum();
        let pick = if total > 0.0 {
            let mut target = rng.random::<f64>() * total;
            let mut chosen = n - 1;
            for (i, w) in nearest.iter().enumerate() {
                if *w > 0.0 && target < *w {
                    chosen = i;
                    break;
                }
                target -= w;
            }
            while nearest[chosen] == 0.0 {
                chosen -= 1;
            }
            chosen
        } else {
            rng.random_range(0..n)
        };
        let centre = vectors[pick].as_ref().to_vec();
        for (d, v) in nearest.iter_mut().zip(vectors) {
            *d = d.min(distance.eval(v.as_ref(), &centre));
        }
        centres.push(centre);
    }
    centres
}

fn nearest_centre(point: &[f64], centres: &[Vec<f64>], distance: Distance) -> (usize, f64) {
    let mut best = (0, f64::INFINITY);
    for (j, centre) in centres.iter().enumerate() {
        let d = distance.eval(point, centre);
        if d < best.1 {
            best = (j, d);
        }
    }
    best
}

fn lloyd<V: AsRef<[f64]>>(
    vectors: &[V],
    mut centres: Vec<Vec<f64>>,
    dim: usize,
    opts: &KMeansOptions,
) -> ClusterAssignment {
    let c = centres.len();
    let mut labels: Vec<usize> = Vec::new();
    let mut trace = Vec::new();
    for _ in 0..opts.max_iter.max(1) {
        let mut next: Vec<usize> = vectors
            .iter()
            .map(|v| nearest_centre(v.as_ref(), &centres, opts.distance).0)
            .collect();
        repair_empty(vectors, &mut next, &centres, c, opts.distance);
        if next == labels {
            break;
        }
        centres = (0..c)
            .map(|k| {
                let members: Vec<usize> = (0..next.len()).filter(|&i| next[i] == k).collect();
                mean_of(vectors, &members, dim)
            })
            .collect();
        labels = next;
        trace.push(objective(vectors, &labels, &centres, opts.distance));
    }
    let inertia = *trace.last().expect("at least one iteration");
    ClusterAssignment {
        c,
        labels,
        centroids: centres,
        inertia,
        discarded: Vec::new(),
        trace,
    }
}

/// Any cluster left without members takes the point farthest from its
/// current centre.
fn repair_empty<V: AsRef<[f64]>>(
    vectors: &[V],
    labels: &mut [usize],
    centres: &[Vec<f64>],
    c: usize,
    distance: Distance,
) {
    loop {
        let mut counts = vec![0usize; c];
        for &l in labels.iter() {
            counts[l] += 1;
        }
        let Some(empty) = counts.iter().position(|&n| n == 0) else {
            return;
        };
        let donor = (0..labels.len())
            .filter(|&i| counts[labels[i]] > 1)
            .max_by(|&a, &b| {
                let da = distance.eval(vectors[a].as_ref(), &centres[labels[a]]);
                let db = distance.eval(vectors[b].as_ref(), &centres[labels[b]]);
                da.total_cmp(&db).then(b.cmp(&a))
            })
            .expect("fewer clusters than points");
        labels[donor] = empty;
    }
}

fn objective<V: AsRef<[f64]>>(
    vectors: &[V],
    labels: &[usize],
    centres: &[Vec<f64>],
    distance: Distance,
) -> f64 {
    vectors
        .iter()
        .zip(labels)
        .map(|(v, &l)| distance.eval(v.as_ref(), &centres[l]))
        .sum()
}

/// Single-point transfers: moving `x` from cluster `a` (size `n_a > 1`) to
/// `b` changes the objective by
/// `n_b/(n_b+1)·‖x−μ_b‖² − n_a/(n_a−1)·‖x−μ_a‖²`. Applies the best
/// improving move per point until a full pass makes none. A partition with
/// no improving move is also a Lloyd fixpoint.
fn transfer_refine<V: AsRef<[f64]>>(vectors: &[V], a: &mut ClusterAssignment, dim: usize) {
    let c = a.c;
    let mut sizes = vec![0usize; c];
    for &l in &a.labels {
        sizes[l] += 1;
    }
    const EPS: f64 = 1e-12;
    loop {
        let mut moved = false;
        for i in 0..vectors.len() {
            let x = vectors[i].as_ref();
            let from = a.labels[i];
            if sizes[from] < 2 {
                continue;
            }
            let na = sizes[from] as f64;
            let gain_out = na / (na - 1.0) * squared_distance(x, &a.centroids[from]);
            let mut best: Option<(usize, f64)> = None;
            for to in (0..c).filter(|&k| k != from) {
                let nb = sizes[to] as f64;
                let delta = nb / (nb + 1.0) * squared_distance(x, &a.centroids[to]) - gain_out;
                if delta < -EPS && best.is_none_or(|(_, d)| delta < d) {
                    best = Some((to, delta));
                }
            }
            if let Some((to, _)) = best {
                a.labels[i] = to;
                sizes[from] -= 1;
                sizes[to] += 1;
                for k in [from, to] {
                    let members: Vec<usize> =
                        (0..a.labels.len()).filter(|&j| a.labels[j] == k).collect();
                    a.centroids[k] = mean_of(vectors, &members, dim);
                }
                moved = true;
            }
        }
        if !moved {
            break;
        }
        a.trace.push(objective(vectors, &a.labels, &a.centroids, Distance::SquaredEuclidean));
    }
    a.inertia = *a.trace.last().expect("lloyd ran");
}

fn first_appearance_order(mut a: ClusterAssignment) -> ClusterAssignment {
    let mut rename = vec![usize::MAX; a.c];
    let mut next = 0;
    for &l in &a.labels {
        if rename[l] == usize::MAX {
            rename[l] = next;
            next += 1;
        }
    }
    let mut centroids = vec![Vec::new(); a.c];
    for (old, centroid) in a.centroids.drain(..).enumerate() {
        centroids[rename[old]] = centroid;
    }
    a.centroids = centroids;
    for l in &mut a.labels {
        *l = rename[*l];
    }
    a
}

/// K-means followed by a size cap: clusters larger than `cap` have their
/// excess members discarded uniformly at random (seeded). Discarded points
/// keep their label and are listed in `discarded`; centroids and inertia
/// are recomputed over the retained members.
pub fn kmeans_balanced<V: AsRef<[f64]>>(
    vectors: &[V],
    c: usize,
    seed: u64,
    cap: usize,
    opts: &KMeansOptions,
) -> Result<ClusterAssignment, ClusterError> {
    if cap == 0 {
        return Err(ClusterError::InvalidCap);
    }
    let a = kmeans_with(vectors, c, seed, opts)?;
    apply_cap(vectors, a, cap, seed, opts.distance)
}

/// Caps every cluster of an existing assignment at `cap` members by seeded
/// uniform discard, then recomputes centroids and inertia over the
/// retained members.
pub fn apply_cap<V: AsRef<[f64]>>(
    vectors: &[V],
    mut a: ClusterAssignment,
    cap: usize,
    seed: u64,
    distance: Distance,
) -> Result<ClusterAssignment, ClusterError> {
    if cap == 0 {
        return Err(ClusterError::InvalidCap);
    }
    let dim = check_dimensions(vectors)?;
    if a.labels.len() != vectors.len() {
        return Err(ClusterError::InvalidLabels(format!(
            "{} labels for {} vectors",
            a.labels.len(),
            vectors.len()
        )));
    }
    let mut discarded = Vec::new();
    for (k, members) in a.members().iter().enumerate() {
        if members.len() > cap {
            let mut rng = seed::rng(seed, "balance-discard", k as u64);
            let drop = sample(&mut rng, members.len(), members.len() - cap);
            discarded.extend(drop.iter().map(|j| members[j]));
        }
    }
    if discarded.is_empty() {
        return Ok(a);
    }
    discarded.extend_from_slice(&a.discarded);
    discarded.sort_unstable();
    discarded.dedup();
    a.discarded = discarded;
    let members = a.members();
    a.centroids = members.iter().map(|m| mean_of(vectors, m, dim)).collect();
    a.inertia = members
        .iter()
        .enumerate()
        .flat_map(|(k, m)| m.iter().map(move |&i| (k, i)))
        .map(|(k, i)| distance.eval(vectors[i].as_ref(), &a.centroids[k]))
        .sum();
    Ok(a)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::clustering::inertia;
    use proptest::prelude::{prop_assert, prop_assert_eq, prop_assume, proptest, Strategy};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn four_points() -> Vec<Vec<f64>> {
        vec![vec![0.0, 0.0], vec![0.0, 1.0], vec![10.0, 10.0], vec![10.0, 11.0]]
    }

    /// Minimum inertia over every split of the points into two non-empty
    /// groups.
    fn best_bipartition(points: &[Vec<f64>]) -> f64 {
        let n = points.len();
        let mut best = f64::INFINITY;
        for mask in 1u32..(1 << (n - 1)) {
            let labels: Vec<usize> = (0..n).map(|i| ((mask >> i) & 1) as usize).collect();
            best = best.min(inertia(points, &labels).unwrap());
        }
        best
    }

    #[test]
    fn separated_pairs() {
        let a = kmeans(&four_points(), 2, 7).unwrap();
        assert_eq!(a.labels, vec![0, 0, 1, 1]);
        assert_eq!(a.centroids, vec![vec![0.0, 0.5], vec![10.0, 10.5]]);
        assert!((a.inertia - 1.0).abs() < 1e-12);
    }

    #[test]
    fn single_cluster_is_the_mean() {
        let a = kmeans(&four_points(), 1, 0).unwrap();
        assert_eq!(a.labels, vec![0; 4]);
        assert_eq!(a.centroids, vec![vec![5.0, 5.5]]);
    }

    #[test]
    fn six_points_reach_the_best_bipartition() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for trial in 0..200 {
            let pts: Vec<Vec<f64>> = (0..6)
                .map(|_| vec![rng.random::<f64>(), rng.random::<f64>()])
                .collect();
            let a = kmeans(&pts, 2, trial).unwrap();
            let b = best_bipartition(&pts);
            assert!((a.inertia - b).abs() < 1e-9, "trial {trial}: {} vs {b} {:?} {:?}", a.inertia, a.labels, pts);
        }
    }

    #[test]
    fn errors() {
        let pts = four_points();
        assert!(matches!(
            kmeans(&pts, 5, 0),
            Err(ClusterError::InvalidClusterCount { .. })
        ));
        assert!(matches!(
            kmeans(&pts, 0, 0),
            Err(ClusterError::InvalidClusterCount { .. })
        ));
        let same = vec![vec![1.0, 1.0]; 4];
        assert_eq!(
            kmeans(&same, 2, 0),
            Err(ClusterError::DegenerateInput {
                requested: 2,
                distinct: 1
            })
        );
        let ragged = vec![vec![1.0, 1.0], vec![1.0]];
        assert!(matches!(
            kmeans(&ragged, 1, 0),
            Err(ClusterError::DimensionMismatch { index: 1, .. })
        ));
    }

    #[test]
    fn seeded_runs_are_identical() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let pts: Vec<Vec<f64>> = (0..40)
            .map(|_| vec![rng.random::<f64>(), rng.random::<f64>(), rng.random::<f64>()])
            .collect();
        assert_eq!(kmeans(&pts, 4, 9).unwrap(), kmeans(&pts, 4, 9).unwrap());
    }

    #[test]
    fn duplicate_points_still_fill_every_cluster() {
        let mut pts = vec![vec![0.0]; 6];
        pts.push(vec![1.0]);
        pts.push(vec![2.0]);
        let a = kmeans(&pts, 3, 1).unwrap();
        assert!(a.sizes().iter().all(|&s| s > 0));
    }

    #[test]
    fn cosine_distance_groups_by_direction() {
        let pts = vec![vec![1.0, 0.0], vec![5.0, 0.1], vec![0.0, 1.0], vec![0.1, 7.0]];
        let opts = KMeansOptions {
            distance: Distance::Cosine,
            ..KMeansOptions::default()
        };
        let a = kmeans_with(&pts, 2, 0, &opts).unwrap();
        assert_eq!(a.labels[0], a.labels[1]);
        assert_eq!(a.labels[2], a.labels[3]);
        assert_ne!(a.labels[0], a.labels[2]);
    }

    #[test]
    fn balanced_cap_discards_excess() {
        let pts = vec![vec![0.0], vec![0.1], vec![0.2], vec![9.0]];
        let opts = KMeansOptions::default();
        let a = kmeans_balanced(&pts, 2, 5, 2, &opts).unwrap();
        assert_eq!(a.discarded.len(), 1);
        assert!(a.discarded[0] < 3);
        assert_eq!(a.sizes(), vec![2, 1]);
        let members = a.members();
        let expected = members[0].iter().map(|&i| pts[i][0]).sum::<f64>() / 2.0;
        assert!((a.centroids[0][0] - expected).abs() < 1e-12);
        assert_eq!(a, kmeans_balanced(&pts, 2, 5, 2, &opts).unwrap());

        let loose = kmeans_balanced(&pts, 2, 5, 3, &opts).unwrap();
        assert_eq!(loose, kmeans_with(&pts, 2, 5, &opts).unwrap());
        assert_eq!(kmeans_balanced(&pts, 2, 5, 0, &opts), Err(ClusterError::InvalidCap));
    }

    fn point_cloud() -> impl Strategy<Value = Vec<Vec<f64>>> {
        proptest::collection::vec(proptest::collection::vec(-5.0f64..5.0, 2), 3..25)
    }

    proptest! {
        #[test]
        fn lloyd_invariants(pts in point_cloud(), c in 1usize..4, seed in 0u64..1000) {
            prop_assume!(c <= distinct_count(&pts));
            let a = kmeans(&pts, c, seed).unwrap();
            for w in a.trace.windows(2) {
                prop_assert!(w[1] <= w[0] + 1e-9, "trace {:?}", a.trace);
            }
            prop_assert!(a.labels.iter().all(|&l| l < c));
            prop_assert!(a.sizes().iter().all(|&s| s > 0));
            let members = a.members();
            for (k, m) in members.iter().enumerate() {
                let mean = mean_of(&pts, m, 2);
                for d in 0..2 {
                    prop_assert!((mean[d] - a.centroids[k][d]).abs() < 1e-9);
                }
            }
            prop_assert!((inertia(&pts, &a.labels).unwrap() - a.inertia).abs() < 1e-9);
        }

        #[test]
        fn permutation_equivariance_on_separated_blobs(seed in 0u64..500, shift in 0usize..12) {
            let mut pts = Vec::new();
            for (cx, cy) in [(0.0, 0.0), (20.0, 0.0), (0.0, 20.0)] {
                for k in 0..4 {
                    pts.push(vec![cx + 0.1 * k as f64, cy - 0.05 * k as f64]);
                }
            }
            let perm: Vec<usize> = (0..pts.len()).map(|i| (i * 5 + shift) % pts.len()).collect();
            let permuted: Vec<Vec<f64>> = perm.iter().map(|&i| pts[i].clone()).collect();
            let a = kmeans(&pts, 3, seed).unwrap();
            let b = kmeans(&permuted, 3, seed).unwrap();
            for (j1, &i1) in perm.iter().enumerate() {
                for (j2, &i2) in perm.iter().enumerate() {
                    prop_assert_eq!(b.labels[j1] == b.labels[j2], a.labels[i1] == a.labels[i2]);
                }
            }
            for (j, &i) in perm.iter().enumerate() {
                let (p, q) = (&b.centroids[b.labels[j]], &a.centroids[a.labels[i]]);
                prop_assert!(squared_distance(p, q) < 1e-18);
            }
        }
    }
}
