use crate::datagen::LocalDataset;
use crate::error::{Error, Result};
use crate::linalg::{axpy, dot, svd, Matrix};
use crate::Scalar;

/// Solution of the hard-margin multiclass problem.
#[derive(Clone, Debug)]
pub struct MarginSolution<T> {
    /// `c x d`; row `i` is the weight of class `i`.
    pub w_tilde: Matrix<T>,
    /// Largest `1 - <w_y - w_y', x>` over all constraints (0 when feasible).
    pub margin_violation: T,
    /// `sum_i |w_i|^2`.
    pub objective: T,
    pub sweeps: usize,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct MarginConfig {
    /// Bound on the final margin violation and on the relative duality gap.
    pub tolerance: f64,
    /// Cap on coordinate-ascent sweeps over the working set.
    pub max_sweeps: usize,
}

impl Default for MarginConfig {
    fn default() -> Self {
        MarginConfig {
            tolerance: 1e-6,
            max_sweeps: 50_000,
        }
    }
}

/// Working-set slack: constraints with margin below `1 + SLACK` stay active.
const SLACK: f64 = 0.25;
const DIVERGED_NORM_SQ: f64 = 1e14;

/// Minimizes `sum_i |w_i|^2` subject to `<w_y - w_y', x> >= 1` for every
/// sample `(x, y)` and every other class `y' < num_classes`.
///
/// Dual coordinate ascent (Hildreth's method) on the multipliers of the
/// constraints, run on a working set that is refreshed from a full pass over
/// all constraints. Stops once every constraint holds within `tolerance` and
/// the duality gap is below `tolerance` relative to the objective. Data that
/// is not separable makes the multipliers grow without bound, which surfaces
/// as [`Error::InfeasibleOrUnconverged`].
pub fn margin_problem_solve<T: Scalar>(
    dataset: &LocalDataset<T>,
    num_classes: usize,
    cfg: MarginConfig,
) -> Result<MarginSolution<T>> {
    if dataset.is_empty() {
        return Err(Error::Empty("margin problem on an empty dataset".into()));
    }
    if num_classes < 2 {
        return Err(Error::invalid("margin problem needs at least two classes"));
    }
    if let Some(&bad) = dataset.labels().iter().find(|&&y| y >= num_classes) {
        return Err(Error::invalid(format!("label {bad} outside {num_classes} classes")));
    }
    if !(cfg.tolerance > 0.0) {
        return Err(Error::invalid("tolerance must be positive"));
    }
    let x = dataset.samples().cast::<f64>();
    let labels = dataset.labels();
    let (n, d) = x.shape();
    let xsq: Vec<f64> = x.row_iter().map(|r| dot(r, r)).collect();
    if let Some(s) = xsq.iter().position(|&v| v == 0.0) {
        return Err(Error::InfeasibleOrUnconverged(format!("sample {s} is zero; no margin is possible")));
    }

    // constraint id = s * num_classes + y'; ids with y' == y_s are unused
    let mut alpha = vec![0.0f64; n * num_classes];
    let mut w = Matrix::<f64>::zeros(num_classes, d);
    let all: Vec<usize> = (0..n)
        .flat_map(|s| (0..num_classes).filter(move |&c| c != labels[s]).map(move |c| s * num_classes + c))
        .collect();
    let mut active = all.clone();
    let mut sweeps = 0usize;

    loop {
        loop {
            if sweeps >= cfg.max_sweeps {
                return Err(Error::InfeasibleOrUnconverged(format!(
                    "no solution within {} sweeps",
                    cfg.max_sweeps
                )));
            }
            sweeps += 1;
            let mut max_change = 0.0f64;
            for &id in &active {
                let (s, yp) = (id / num_classes, id % num_classes);
                let y = labels[s];
                let xs = x.row(s);
                let margin = dot(w.row(y), xs) - dot(w.row(yp), xs);
                let next = (alpha[id] + (1.0 - margin) / (2.0 * xsq[s])).max(0.0);
                let delta = next - alpha[id];
                if delta != 0.0 {
                    alpha[id] = next;
                    axpy(delta, xs, w.row_mut(y));
                    axpy(-delta, xs, w.row_mut(yp));
                    max_change = max_change.max(2.0 * delta.abs() * xsq[s]);
                }
            }
            if max_change <= 0.1 * cfg.tolerance {
                break;
            }
            if w.frobenius_norm_sq() > DIVERGED_NORM_SQ {
                return Err(Error::InfeasibleOrUnconverged("multipliers diverge; data is not separable".into()));
            }
        }

        let scores = x.matmul_transpose(&w)?;
        let mut violation = 0.0f64;
        let mut next_active = Vec::new();
        for &id in &all {
            let (s, yp) = (id / num_classes, id % num_classes);
            let margin = scores[(s, labels[s])] - scores[(s, yp)];
            violation = violation.max(1.0 - margin);
            if alpha[id] > 0.0 || margin < 1.0 + SLACK {
                next_active.push(id);
            }
        }
        let norm_sq = w.frobenius_norm_sq();
        let gap = (norm_sq - alpha.iter().sum::<f64>()).abs();
        if violation <= cfg.tolerance && gap <= cfg.tolerance * norm_sq.max(f64::MIN_POSITIVE) {
            return Ok(MarginSolution {
                w_tilde: w.cast(),
                margin_violation: T::of(violation.max(0.0)),
                objective: T::of(norm_sq),
                sweeps,
            });
        }
        active = next_active;
    }
}

/// Balanced factorization `w_tilde = v u` of a classifier into a
/// two-layer linear network.
#[derive(Clone, Debug)]
pub struct FactorPair<T> {
    /// `m x d` first layer.
    pub u: Matrix<T>,
    /// `c x m` second layer.
    pub v: Matrix<T>,
}

/// Minimum-norm factorization through the SVD `w_tilde = U S V^T`:
/// `u = S^(1/2) V^T` and `v = U S^(1/2)`, zero-padded to width `m`. Then
/// `u u^T = v^T v` and both squared norms equal the nuclear norm.
pub fn min_norm_factorize<T: Scalar>(w_tilde: &Matrix<T>, m: usize) -> Result<FactorPair<T>> {
    let (c, d) = w_tilde.shape();
    let s = svd(w_tilde)?;
    let rank = s.rank(1e-10);
    if m < rank {
        return Err(Error::invalid(format!("m = {m} is below rank {rank}")));
    }
    let mut u = Matrix::zeros(m, d);
    let mut v = Matrix::zeros(c, m);
    for i in 0..rank {
        let root = s.singular_values[i].sqrt();
        for (o, &x) in u.row_mut(i).iter_mut().zip(s.vt.row(i)) {
            *o = root * x;
        }
        for r in 0..c {
            v[(r, i)] = root * s.u[(r, i)];
        }
    }
    Ok(FactorPair { u, v })
}

/// `sum_i <u_i, e_j>^2`, the diagonal entry `(u^T u)_jj`.
pub fn feature_correlation<T: Scalar>(pair: &FactorPair<T>, j: usize) -> Result<T> {
    if j >= pair.u.cols() {
        return Err(Error::invalid(format!("direction {j} outside dimension {}", pair.u.cols())));
    }
    Ok((0..pair.u.rows()).map(|i| pair.u[(i, j)] * pair.u[(i, j)]).sum())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::random_orthogonal;
    use crate::rng::stream_rng;
    use proptest::prelude::*;
    use rand::seq::SliceRandom;

    fn ds(rows: &[&[f64]], labels: &[usize], c: usize) -> LocalDataset<f64> {
        LocalDataset::new(Matrix::from_rows(rows).unwrap(), labels.to_vec(), c, 0).unwrap()
    }

    #[test]
    fn one_dimensional_split() {
        let sol = margin_problem_solve(&ds(&[&[1.0], &[-1.0]], &[0, 1], 2), 2, MarginConfig::default()).unwrap();
        assert!((sol.w_tilde[(0, 0)] - 0.5).abs() < 1e-6);
        assert!((sol.w_tilde[(1, 0)] + 0.5).abs() < 1e-6);
        assert!((sol.objective - 0.5).abs() < 1e-6);

        let sol = margin_problem_solve(&ds(&[&[2.0], &[-2.0]], &[0, 1], 2), 2, MarginConfig::default()).unwrap();
        assert!((sol.w_tilde[(0, 0)] - 0.25).abs() < 1e-6);
        assert!((sol.objective - 0.125).abs() < 1e-6);
    }

    #[test]
    fn non_separable_data_is_reported() {
        let data = ds(&[&[1.0], &[1.0]], &[0, 1], 2);
        let cfg = MarginConfig {
            tolerance: 1e-6,
            max_sweeps: 2000,
        };
        assert!(matches!(
            margin_problem_solve(&data, 2, cfg),
            Err(Error::InfeasibleOrUnconverged(_))
        ));
    }

    /// Projected gradient ascent on the dual from several random starts.
    fn qp_oracle(x: &Matrix<f64>, labels: &[usize], c: usize) -> f64 {
        let n = x.rows();
        let cons: Vec<(usize, usize)> = (0..n)
            .flat_map(|s| (0..c).filter(move |&k| k != labels[s]).map(move |k| (s, k)))
            .collect();
        let w_of = |alpha: &[f64]| {
            let mut w = Matrix::<f64>::zeros(c, x.cols());
            for (&(s, k), &a) in cons.iter().zip(alpha) {
                axpy(a, x.row(s), w.row_mut(labels[s]));
                axpy(-a, x.row(s), w.row_mut(k));
            }
            w
        };
        let lmax: f64 = 2.0 * x.row_iter().map(|r| dot(r, r)).sum::<f64>() * (c as f64);
        let mut best_dual = f64::NEG_INFINITY;
        let mut rng = stream_rng(77, &[]);
        for _ in 0..4 {
            let mut alpha: Vec<f64> = (0..cons.len()).map(|_| rand::Rng::random::<f64>(&mut rng)).collect();
            for _ in 0..100_000 {
                let w = w_of(&alpha);
                for (a, &(s, k)) in alpha.iter_mut().zip(&cons) {
                    let m = dot(w.row(labels[s]), x.row(s)) - dot(w.row(k), x.row(s));
                    *a = (*a + (1.0 - m) / lmax).max(0.0);
                }
            }
            let w = w_of(&alpha);
            best_dual = best_dual.max(alpha.iter().sum::<f64>() - 0.5 * w.frobenius_norm_sq());
        }
        // strong duality: sum |w_i|^2 at the optimum is twice the dual optimum
        2.0 * best_dual
    }

    #[test]
    fn matches_projected_gradient_reference() {
        let mut rng = stream_rng(5, &[]);
        let d = 5;
        let mut rows = Vec::new();
        let mut labels = Vec::new();
        let dir: Vec<f64> = crate::rng::normal_vec(&mut rng, d);
        for i in 0..12 {
            let mut x: Vec<f64> = crate::rng::normal_vec(&mut rng, d);
            let y = i % 2;
            let shift = if y == 0 { 1.5 } else { -1.5 };
            axpy(shift, &dir, &mut x);
            rows.push(x);
            labels.push(y);
        }
        let x = Matrix::from_rows(&rows).unwrap();
        let data = LocalDataset::new(x.clone(), labels.clone(), 2, 0).unwrap();
        let sol = match margin_problem_solve(&data, 2, MarginConfig::default()) {
            Ok(s) => s,
            Err(e) => panic!("instance should be separable: {e}"),
        };
        let reference = qp_oracle(&x, &labels, 2);
        assert!(
            (sol.objective - reference).abs() <= 1e-4 * reference,
            "{} vs {reference}",
            sol.objective
        );
        assert!(sol.margin_violation <= 1e-6);
    }

    #[test]
    fn objective_is_permutation_invariant() {
        let cfg = crate::datagen::TheoryGenConfig::new(12, 2, 15, 3, 4);
        let src = &crate::datagen::generate_theory_dataset::<f64>(&cfg).unwrap()[0];
        let a = margin_problem_solve(src, 4, MarginConfig::default()).unwrap();
        let mut idx: Vec<usize> = (0..src.len()).collect();
        idx.shuffle(&mut stream_rng(1, &[]));
        let b = margin_problem_solve(&src.subset(&idx).unwrap(), 4, MarginConfig::default()).unwrap();
        assert!((a.objective - b.objective).abs() <= 1e-5 * a.objective);
    }

    #[test]
    fn factorize_identity_and_rank_one() {
        let p = min_norm_factorize(&Matrix::<f64>::identity(2), 2).unwrap();
        assert!(p.v.matmul(&p.u).unwrap().sub(&Matrix::identity(2)).unwrap().max_abs() < 1e-12);
        assert!((p.u.frobenius_norm_sq() - 2.0).abs() < 1e-12);
        assert!(p.u.gram_rows().sub(&Matrix::identity(2)).unwrap().max_abs() < 1e-12);

        let a = [1.0f64, -2.0, 2.0];
        let b = [3.0, 4.0];
        let w = Matrix::from_fn(3, 2, |i, j| a[i] * b[j]);
        let p = min_norm_factorize(&w, 1).unwrap();
        assert!((p.u.frobenius_norm_sq() - 15.0).abs() < 1e-10);
        assert!(min_norm_factorize(&Matrix::<f64>::identity(3), 2).is_err());
    }

    #[test]
    fn correlation_examples() {
        let pair = FactorPair {
            u: Matrix::from_rows(&[[1.0, 0.0, 0.0]]).unwrap(),
            v: Matrix::from_rows(&[[1.0]]).unwrap(),
        };
        assert_eq!(feature_correlation(&pair, 0).unwrap(), 1.0);
        assert_eq!(feature_correlation(&pair, 1).unwrap(), 0.0);
        assert!(feature_correlation(&pair, 3).is_err());
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(24))]

        #[test]
        fn factorization_is_balanced(seed in any::<u64>(), pad in 0usize..3) {
            let mut rng = stream_rng(seed, &[]);
            let w = Matrix::<f64>::random_normal(4, 6, 1.0, &mut rng);
            let p = min_norm_factorize(&w, 4 + pad).unwrap();
            let nuclear: f64 = svd(&w).unwrap().singular_values.iter().sum();
            prop_assert!(p.v.matmul(&p.u).unwrap().sub(&w).unwrap().frobenius_norm() <= 1e-8);
            prop_assert!((p.u.frobenius_norm_sq() - nuclear).abs() <= 1e-9);
            prop_assert!((p.v.frobenius_norm_sq() - nuclear).abs() <= 1e-9);
            let balance = p.u.gram_rows().sub(&p.v.transpose().matmul(&p.v).unwrap()).unwrap();
            prop_assert!(balance.frobenius_norm() <= 1e-8);

            let q: Matrix<f64> = random_orthogonal(4 + pad, &mut rng);
            let rotated = FactorPair { u: q.matmul(&p.u).unwrap(), v: p.v.clone() };
            for j in 0..6 {
                let a = feature_correlation(&p, j).unwrap();
                let b = feature_correlation(&rotated, j).unwrap();
                prop_assert!(a >= 0.0 && (a - b).abs() <= 1e-12 * a.max(1.0));
            }
        }
    }
}
