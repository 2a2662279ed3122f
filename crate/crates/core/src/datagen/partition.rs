use std::collections::BTreeSet;

use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::{Distribution, Gamma};
use serde::{Deserialize, Serialize};

use crate::datagen::LocalDataset;
use crate::error::{Error, Result};
use crate::linalg::{symmetric_top_eigen, Matrix};
use crate::rng::{stream, stream_rng};
use crate::Scalar;

const KMEANS_MAX_ITERS: usize = 100;
const PCA_COMPONENTS: usize = 30;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PartitionScheme {
    Dirichlet,
    Skewness,
    FeatureCluster,
    Manual,
}

/// Assignment of global sample indices to sources.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PartitionSpec {
    pub scheme: PartitionScheme,
    pub parameter: f64,
    /// `assignments[k]` lists the indices held by source `k`, ascending.
    pub assignments: Vec<Vec<usize>>,
    pub label_histograms: Vec<Vec<usize>>,
}

impl PartitionSpec {
    /// Builds a spec from assignments, sorting each list and computing the
    /// histograms from `labels`.
    pub fn from_assignments(
        scheme: PartitionScheme,
        parameter: f64,
        mut assignments: Vec<Vec<usize>>,
        labels: &[usize],
    ) -> Result<Self> {
        let num_classes = labels.iter().map(|&l| l + 1).max().unwrap_or(0);
        let mut label_histograms = Vec::with_capacity(assignments.len());
        for a in assignments.iter_mut() {
            a.sort_unstable();
            let mut h = vec![0; num_classes];
            for &i in a.iter() {
                let l = *labels
                    .get(i)
                    .ok_or_else(|| Error::invalid(format!("index {i} out of range {}", labels.len())))?;
                h[l] += 1;
            }
            label_histograms.push(h);
        }
        let spec = PartitionSpec {
            scheme,
            parameter,
            assignments,
            label_histograms,
        };
        spec.validate(labels.len())?;
        Ok(spec)
    }

    pub fn num_sources(&self) -> usize {
        self.assignments.len()
    }

    /// Checks that the assignments are a disjoint exact cover of `0..n` and
    /// that the histograms have one entry per source.
    pub fn validate(&self, n: usize) -> Result<()> {
        if self.label_histograms.len() != self.assignments.len() {
            return Err(Error::invalid("one label histogram per source required"));
        }
        let mut seen = vec![false; n];
        for (k, a) in self.assignments.iter().enumerate() {
            if self.label_histograms[k].iter().sum::<usize>() != a.len() {
                return Err(Error::invalid(format!("histogram of source {k} disagrees with its assignment")));
            }
            for &i in a {
                match seen.get_mut(i) {
                    None => return Err(Error::invalid(format!("index {i} out of range {n}"))),
                    Some(true) => return Err(Error::invalid(format!("index {i} assigned twice"))),
                    Some(s) => *s = true,
                }
            }
        }
        if let Some(i) = seen.iter().position(|s| !s) {
            return Err(Error::invalid(format!("index {i} unassigned")));
        }
        Ok(())
    }

    /// Splits `data` into one dataset per source.
    pub fn apply<T: Scalar>(&self, data: &LocalDataset<T>) -> Result<Vec<LocalDataset<T>>> {
        self.validate(data.len())?;
        self.assignments
            .iter()
            .enumerate()
            .map(|(k, idx)| Ok(data.subset(idx)?.with_source_id(k)))
            .collect()
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        Ok(serde_json::from_str(s)?)
    }
}

fn class_indices(labels: &[usize]) -> Vec<Vec<usize>> {
    let num_classes = labels.iter().map(|&l| l + 1).max().unwrap_or(0);
    let mut by_class = vec![Vec::new(); num_classes];
    for (i, &l) in labels.iter().enumerate() {
        by_class[l].push(i);
    }
    by_class
}

fn check_sources(k: usize) -> Result<()> {
    if k == 0 {
        return Err(Error::invalid("number of sources must be at least 1"));
    }
    Ok(())
}

/// Dirichlet(alpha) proportions over `k` sources, computed in log space so
/// that tiny `alpha` does not underflow every component to zero.
pub fn dirichlet_proportions<R: Rng + ?Sized>(alpha: f64, k: usize, rng: &mut R) -> Result<Vec<f64>> {
    if !(alpha > 0.0 && alpha.is_finite()) {
        return Err(Error::invalid(format!("alpha = {alpha} must be positive")));
    }
    // For alpha < 1, Gamma(alpha) = Gamma(alpha + 1) * U^(1/alpha).
    let shape = if alpha < 1.0 { alpha + 1.0 } else { alpha };
    let gamma = Gamma::new(shape, 1.0).map_err(|e| Error::invalid(e.to_string()))?;
    let logs: Vec<f64> = (0..k)
        .map(|_| {
            let g: f64 = gamma.sample(rng);
            if alpha < 1.0 {
                let u: f64 = 1.0 - rng.random::<f64>();
                g.ln() + u.ln() / alpha
            } else {
                g.ln()
            }
        })
        .collect();
    let top = logs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let w: Vec<f64> = logs.iter().map(|l| (l - top).exp()).collect();
    let total: f64 = w.iter().sum();
    Ok(w.into_iter().map(|x| x / total).collect())
}

/// Integer counts summing to `n`, proportional to `p`, with leftover units
/// going to the largest fractional remainders (lowest index on ties).
pub fn largest_remainder(p: &[f64], n: usize) -> Vec<usize> {
    let raw: Vec<f64> = p.iter().map(|&x| x * n as f64).collect();
    let mut counts: Vec<usize> = raw.iter().map(|&r| r.floor() as usize).collect();
    let assigned: usize = counts.iter().sum();
    let mut order: Vec<usize> = (0..p.len()).collect();
    order.sort_by(|&a, &b| {
        let fa = raw[a] - raw[a].floor();
        let fb = raw[b] - raw[b].floor();
        fb.partial_cmp(&fa).unwrap_or(std::cmp::Ordering::Equal).then(a.cmp(&b))
    });
    for &i in order.iter().take(n.saturating_sub(assigned)) {
        counts[i] += 1;
    }
    counts
}

/// Splits every class across `k` sources by its own Dirichlet(alpha) draw.
pub fn partition_dirichlet(labels: &[usize], k: usize, alpha: f64, seed: u64) -> Result<PartitionSpec> {
    check_sources(k)?;
    if !(alpha > 0.0 && alpha.is_finite()) {
        return Err(Error::invalid(format!("alpha = {alpha} must be positive")));
    }
    let mut assignments = vec![Vec::new(); k];
    for (c, mut idx) in class_indices(labels).into_iter().enumerate() {
        let mut rng = stream_rng(seed, &[stream::PARTITION, c as u64]);
        idx.shuffle(&mut rng);
        let p = dirichlet_proportions(alpha, k, &mut rng)?;
        let mut start = 0;
        for (src, cnt) in largest_remainder(&p, idx.len()).into_iter().enumerate() {
            assignments[src].extend_from_slice(&idx[start..start + cnt]);
            start += cnt;
        }
    }
    PartitionSpec::from_assignments(PartitionScheme::Dirichlet, alpha, assignments, labels)
}

/// A `beta` fraction of every class is dealt uniformly over the sources; the
/// rest of each class goes to the single source owning it. Each source owns
/// `floor(N / k)` classes chosen by a seeded permutation; the skewed part of
/// unowned classes is dealt uniformly as well.
pub fn partition_skewness(labels: &[usize], k: usize, beta: f64, seed: u64) -> Result<PartitionSpec> {
    check_sources(k)?;
    if !(0.0..=1.0).contains(&beta) {
        return Err(Error::invalid(format!("beta = {beta} outside [0, 1]")));
    }
    let by_class = class_indices(labels);
    let n_classes = by_class.len();
    let mut perm: Vec<usize> = (0..n_classes).collect();
    perm.shuffle(&mut stream_rng(seed, &[stream::PARTITION, u64::MAX]));
    let per_source = n_classes / k;
    let mut owner = vec![None; n_classes];
    for (slot, &c) in perm.iter().enumerate().take(per_source * k) {
        owner[c] = Some(slot / per_source);
    }

    let mut assignments = vec![Vec::new(); k];
    let mut pool = Vec::new();
    for (c, mut idx) in by_class.into_iter().enumerate() {
        let mut rng = stream_rng(seed, &[stream::PARTITION, c as u64]);
        idx.shuffle(&mut rng);
        let n_uniform = (beta * idx.len() as f64).round() as usize;
        let (uniform, skewed) = idx.split_at(n_uniform);
        pool.extend_from_slice(uniform);
        match owner[c] {
            Some(src) => assignments[src].extend_from_slice(skewed),
            None => pool.extend_from_slice(skewed),
        }
    }
    pool.shuffle(&mut stream_rng(seed, &[stream::PARTITION, u64::MAX - 1]));
    for (j, i) in pool.into_iter().enumerate() {
        assignments[j % k].push(i);
    }
    PartitionSpec::from_assignments(PartitionScheme::Skewness, beta, assignments, labels)
}

/// PCA to `min(30, dim)` components followed by k-means++ / Lloyd with `k`
/// clusters. Cluster `j` becomes source `j`.
pub fn partition_feature_clusters<T: Scalar>(
    features: &Matrix<T>,
    labels: &[usize],
    k: usize,
    seed: u64,
) -> Result<PartitionSpec> {
    check_sources(k)?;
    let n = features.rows();
    if n == 0 {
        return Err(Error::Empty("no feature vectors".into()));
    }
    if labels.len() != n {
        return Err(Error::dims(format!("{n} feature vectors but {} labels", labels.len())));
    }
    if k > n {
        return Err(Error::invalid(format!("{k} clusters for {n} samples")));
    }
    let z = pca_project(features, PCA_COMPONENTS.min(features.cols()))?;
    let mut rng = stream_rng(seed, &[stream::PARTITION]);
    let assign = kmeans(&z, k, KMEANS_MAX_ITERS, &mut rng);
    let mut assignments = vec![Vec::new(); k];
    for (i, &c) in assign.iter().enumerate() {
        assignments[c].push(i);
    }
    PartitionSpec::from_assignments(PartitionScheme::FeatureCluster, k as f64, assignments, labels)
}

/// Projects centered rows onto the top `p` principal directions.
pub fn pca_project<T: Scalar>(x: &Matrix<T>, p: usize) -> Result<Matrix<f64>> {
    let x = x.cast::<f64>();
    let (n, d) = x.shape();
    let mut mean = vec![0.0; d];
    for row in x.row_iter() {
        for (m, v) in mean.iter_mut().zip(row) {
            *m += v;
        }
    }
    mean.iter_mut().for_each(|m| *m /= n as f64);
    let centered = Matrix::from_fn(n, d, |i, j| x[(i, j)] - mean[j]);
    let mut cov = centered.row_outer_sum();
    cov.scale_in_place(1.0 / n as f64);
    let top = symmetric_top_eigen(&cov, p)?;
    centered.matmul_transpose(&top.vectors)
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

fn nearest(x: &[f64], centroids: &[Vec<f64>]) -> (usize, f64) {
    let mut best = (0, f64::INFINITY);
    for (j, c) in centroids.iter().enumerate() {
        let d = sq_dist(x, c);
        if d < best.1 {
            best = (j, d);
        }
    }
    best
}

/// k-means++ seeding then Lloyd iterations. Ties go to the lowest centroid
/// index and an empty cluster keeps its previous centroid.
pub fn kmeans<R: Rng + ?Sized>(z: &Matrix<f64>, k: usize, max_iters: usize, rng: &mut R) -> Vec<usize> {
    let n = z.rows();
    let mut centroids: Vec<Vec<f64>> = vec![z.row(rng.random_range(0..n)).to_vec()];
    let mut d2: Vec<f64> = z.row_iter().map(|x| sq_dist(x, &centroids[0])).collect();
    while centroids.len() < k {
        let total: f64 = d2.iter().sum();
        let pick = if total > 0.0 {
            let target = rng.random::<f64>() * total;
            let mut acc = 0.0;
            let mut pick = n - 1;
            for (i, &w) in d2.iter().enumerate() {
                acc += w;
                if acc > target && w > 0.0 {
                    pick = i;
                    break;
                }
            }
            pick
        } else {
            rng.random_range(0..n)
        };
        centroids.push(z.row(pick).to_vec());
        let c = centroids.last().expect("just pushed");
        for (i, x) in z.row_iter().enumerate() {
            d2[i] = d2[i].min(sq_dist(x, c));
        }
    }

    let mut assign: Vec<usize> = z.row_iter().map(|x| nearest(x, &centroids).0).collect();
    for _ in 0..max_iters {
        let mut sums = vec![vec![0.0; z.cols()]; k];
        let mut counts = vec![0usize; k];
        for (x, &a) in z.row_iter().zip(&assign) {
            counts[a] += 1;
            for (s, v) in sums[a].iter_mut().zip(x) {
                *s += v;
            }
        }
        for j in 0..k {
            if counts[j] > 0 {
                centroids[j] = sums[j].iter().map(|s| s / counts[j] as f64).collect();
            }
        }
        let next: Vec<usize> = z.row_iter().map(|x| nearest(x, &centroids).0).collect();
        if next == assign {
            break;
        }
        assign = next;
    }
    assign
}

/// Mean over sources of the total-variation distance between the normalized
/// local and global label histograms. With unit ground distance between
/// distinct classes this is the earth mover's distance.
pub fn heterogeneity_emd(spec: &PartitionSpec, global_histogram: &[usize]) -> Result<f64> {
    let g_total: usize = global_histogram.iter().sum();
    if g_total == 0 {
        return Err(Error::Empty("global histogram".into()));
    }
    if spec.label_histograms.is_empty() {
        return Err(Error::Empty("partition has no sources".into()));
    }
    let mut acc = 0.0;
    for (k, h) in spec.label_histograms.iter().enumerate() {
        let total: usize = h.iter().sum();
        if total == 0 {
            return Err(Error::Empty(format!("source {k} holds no samples")));
        }
        let classes = h.len().max(global_histogram.len());
        let tv: f64 = (0..classes)
            .map(|c| {
                let p = h.get(c).copied().unwrap_or(0) as f64 / total as f64;
                let q = global_histogram.get(c).copied().unwrap_or(0) as f64 / g_total as f64;
                (p - q).abs()
            })
            .sum();
        acc += 0.5 * tv;
    }
    Ok(acc / spec.label_histograms.len() as f64)
}

/// Histogram of `labels` over `max label + 1` classes.
pub fn label_histogram(labels: &[usize]) -> Vec<usize> {
    class_indices(labels).iter().map(Vec::len).collect()
}

/// Classes present in a histogram.
pub fn support(h: &[usize]) -> BTreeSet<usize> {
    h.iter().enumerate().filter(|(_, &c)| c > 0).map(|(i, _)| i).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn balanced_labels(classes: usize, per_class: usize) -> Vec<usize> {
        (0..classes * per_class).map(|i| i % classes).collect()
    }

    #[test]
    fn single_source_gets_everything() {
        let labels = balanced_labels(3, 7);
        for alpha in [0.01, 1.0, 100.0] {
            let spec = partition_dirichlet(&labels, 1, alpha, 5).unwrap();
            assert_eq!(spec.assignments[0], (0..21).collect::<Vec<_>>());
        }
    }

    #[test]
    fn dirichlet_rejects_nonpositive_alpha() {
        assert!(partition_dirichlet(&[0, 1], 2, 0.0, 1).is_err());
        assert!(partition_dirichlet(&[0, 1], 2, -1.0, 1).is_err());
    }

    #[test]
    fn dirichlet_proportions_sum_to_one_even_for_tiny_alpha() {
        let mut rng = stream_rng(1, &[]);
        for alpha in [1e-3, 0.01, 0.5, 1.0, 7.0, 1e6] {
            for _ in 0..50 {
                let p = dirichlet_proportions(alpha, 6, &mut rng).unwrap();
                assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-12);
                assert!(p.iter().all(|&x| x.is_finite() && x >= 0.0));
            }
        }
    }

    #[test]
    fn dirichlet_large_alpha_is_near_uniform() {
        let labels = balanced_labels(10, 1000);
        let spec = partition_dirichlet(&labels, 5, 1e6, 3).unwrap();
        for h in &spec.label_histograms {
            let total: usize = h.iter().sum();
            for &c in h {
                assert!((c as f64 / total as f64 - 0.1).abs() < 0.02);
            }
        }
    }

    #[test]
    fn dirichlet_small_alpha_concentrates() {
        let labels = balanced_labels(10, 500);
        let mut significant = 0usize;
        let mut sources = 0usize;
        for seed in 0..5 {
            let spec = partition_dirichlet(&labels, 5, 0.01, seed).unwrap();
            for h in &spec.label_histograms {
                let n: usize = h.iter().sum();
                if n == 0 {
                    continue;
                }
                sources += 1;
                significant += h.iter().filter(|&&c| c as f64 > 0.05 * n as f64).count();
            }
        }
        // ten classes over five sources: about two dominant classes each
        let mean = significant as f64 / sources as f64;
        assert!((1.5..=3.0).contains(&mean), "{mean}");
    }

    #[test]
    fn largest_remainder_ties_go_low() {
        assert_eq!(largest_remainder(&[0.5, 0.5], 3), vec![2, 1]);
        assert_eq!(largest_remainder(&[0.1, 0.3, 0.6], 10), vec![1, 3, 6]);
        assert_eq!(largest_remainder(&[1.0 / 3.0; 3], 4), vec![2, 1, 1]);
    }

    #[test]
    fn skewness_zero_is_exclusive() {
        let labels = balanced_labels(10, 40);
        let spec = partition_skewness(&labels, 5, 0.0, 9).unwrap();
        let mut owned = BTreeSet::new();
        for h in &spec.label_histograms {
            let s = support(h);
            assert_eq!(s.len(), 2);
            for c in &s {
                assert_eq!(h[*c], 40);
                assert!(owned.insert(*c));
            }
        }
    }

    #[test]
    fn skewness_one_is_near_uniform() {
        let labels = balanced_labels(10, 200);
        let spec = partition_skewness(&labels, 5, 1.0, 2).unwrap();
        for h in &spec.label_histograms {
            assert_eq!(h.iter().sum::<usize>(), 400);
            for &c in h {
                assert!((c as f64 / 400.0 - 0.1).abs() < 0.05, "{h:?}");
            }
        }
    }

    #[test]
    fn skewness_half_split_matches_expectation() {
        let labels = balanced_labels(4, 100);
        let mut exclusive = 0.0;
        let mut foreign = 0.0;
        let seeds = 40;
        for seed in 0..seeds {
            let spec = partition_skewness(&labels, 2, 0.5, seed).unwrap();
            let mut seen_foreign = 0;
            for h in &spec.label_histograms {
                let mut s = h.clone();
                s.sort_unstable_by(|a, b| b.cmp(a));
                // owned classes carry 50 exclusive + ~25 uniform samples each
                exclusive += (s[0] + s[1]) as f64 - 50.0;
                foreign += (s[2] + s[3]) as f64;
                seen_foreign += 1;
            }
            assert_eq!(seen_foreign, 2);
        }
        let per = (seeds * 2) as f64;
        assert!((exclusive / per - 100.0).abs() < 5.0, "{}", exclusive / per);
        assert!((foreign / per - 50.0).abs() < 5.0);
    }

    #[test]
    fn skewness_rejects_bad_beta() {
        assert!(partition_skewness(&[0, 1], 2, 1.5, 0).is_err());
        assert!(partition_skewness(&[0, 1], 2, -0.1, 0).is_err());
    }

    #[test]
    fn emd_examples() {
        let labels = vec![0, 0, 1, 1];
        let spec =
            PartitionSpec::from_assignments(PartitionScheme::Manual, 0.0, vec![vec![0, 1], vec![2, 3]], &labels).unwrap();
        assert_eq!(heterogeneity_emd(&spec, &[2, 2]).unwrap(), 0.5);
        let same =
            PartitionSpec::from_assignments(PartitionScheme::Manual, 0.0, vec![vec![0, 2], vec![1, 3]], &labels).unwrap();
        assert_eq!(heterogeneity_emd(&same, &[2, 2]).unwrap(), 0.0);
        let empty = PartitionSpec::from_assignments(PartitionScheme::Manual, 0.0, vec![vec![0, 1, 2, 3], vec![]], &labels)
            .unwrap();
        assert!(heterogeneity_emd(&empty, &[2, 2]).is_err());
    }

    #[test]
    fn emd_decreases_with_beta() {
        let labels = balanced_labels(10, 100);
        let global = label_histogram(&labels);
        let mut prev = f64::INFINITY;
        for beta in [0.0, 0.25, 0.5, 0.75, 1.0] {
            let e = heterogeneity_emd(&partition_skewness(&labels, 5, beta, 4).unwrap(), &global).unwrap();
            assert!(e < prev, "beta {beta}: {e} vs {prev}");
            prev = e;
        }
    }

    fn blobs(seed: u64, rotate: bool) -> (Matrix<f64>, Vec<usize>) {
        use crate::linalg::random_orthogonal;
        let mut rng = stream_rng(seed, &[]);
        let d = 5;
        let mut rows = Vec::new();
        let mut labels = Vec::new();
        for i in 0..60 {
            let c = i % 2;
            let mut x: Vec<f64> = crate::rng::normal_vec(&mut rng, d);
            x[0] += if c == 0 { 20.0 } else { -20.0 };
            x[1] *= 3.0;
            rows.push(x);
            labels.push(c);
        }
        let mut m = Matrix::from_rows(&rows).unwrap();
        if rotate {
            let q: Matrix<f64> = random_orthogonal(d, &mut stream_rng(seed + 1, &[]));
            m = m.matmul_transpose(&q).unwrap();
        }
        (m, labels)
    }

    #[test]
    fn feature_clusters_recover_blobs() {
        let (x, labels) = blobs(8, false);
        let spec = partition_feature_clusters(&x, &labels, 2, 1).unwrap();
        for h in &spec.label_histograms {
            assert_eq!(support(h).len(), 1);
        }
        // oracle: brute-force nearest-centroid of the resulting clusters
        let centroid = |idx: &[usize]| -> Vec<f64> {
            (0..x.cols()).map(|j| idx.iter().map(|&i| x[(i, j)]).sum::<f64>() / idx.len() as f64).collect()
        };
        let cs: Vec<Vec<f64>> = spec.assignments.iter().map(|a| centroid(a)).collect();
        for (k, a) in spec.assignments.iter().enumerate() {
            for &i in a {
                assert_eq!(nearest(x.row(i), &cs).0, k);
            }
        }
    }

    #[test]
    fn feature_clusters_are_rotation_invariant() {
        let (x, labels) = blobs(3, false);
        let (xr, _) = blobs(3, true);
        let a = partition_feature_clusters(&x, &labels, 3, 6).unwrap();
        let b = partition_feature_clusters(&xr, &labels, 3, 6).unwrap();
        assert_eq!(a.assignments, b.assignments);
    }

    #[test]
    fn feature_clusters_edge_cases() {
        let (x, labels) = blobs(1, false);
        let one = partition_feature_clusters(&x, &labels, 1, 0).unwrap();
        assert_eq!(one.assignments[0].len(), 60);
        let small = x.truncate_rows(2);
        assert!(partition_feature_clusters(&small, &labels[..2], 3, 0).is_err());
    }

    #[test]
    fn json_round_trip() {
        let labels = balanced_labels(3, 4);
        let spec = partition_dirichlet(&labels, 2, 0.5, 1).unwrap();
        let json = spec.to_json().unwrap();
        assert!(json.contains("\"scheme\": \"dirichlet\""));
        assert_eq!(PartitionSpec::from_json(&json).unwrap(), spec);
    }

    proptest! {
        #[test]
        fn partitions_are_exact_covers(
            labels in prop::collection::vec(0usize..6, 1..200),
            k in 1usize..6,
            alpha in 0.005f64..50.0,
            beta in 0.0f64..=1.0,
            seed in any::<u64>(),
        ) {
            let n = labels.len();
            let d = partition_dirichlet(&labels, k, alpha, seed).unwrap();
            prop_assert!(d.validate(n).is_ok());
            prop_assert_eq!(&d, &partition_dirichlet(&labels, k, alpha, seed).unwrap());
            let s = partition_skewness(&labels, k, beta, seed).unwrap();
            prop_assert!(s.validate(n).is_ok());
            let e = heterogeneity_emd(&s, &label_histogram(&labels));
            if let Ok(e) = e {
                prop_assert!((0.0..=1.0).contains(&e));
            }
        }
    }
}
