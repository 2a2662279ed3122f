//! Acceptance suite. Prints one PASS/FAIL line per criterion and exits
//! non-zero if any criterion fails.

use std::panic::{catch_unwind, AssertUnwindSafe};
use std::process::ExitCode;
use std::time::Instant;

use decssl::datagen::{
    generate_theory_dataset, heterogeneity_emd, label_histogram, partition_dirichlet, partition_skewness, support,
    TheoryGenConfig,
};
use decssl::featarc::{run_featarc, FeatArcConfig};
use decssl::fedsim::{
    build_topology, gossip_round, pairwise_distances, run_fedavg, run_local, FedConfig, GradientMode, LocalBudget,
    TopologyKind,
};
use decssl::linalg::{random_orthogonal, Matrix};
use decssl::objectives::{
    alignment_regularizer, cosine_distance, cosine_distance_grad, infonce_batch, infonce_loss,
    linear_ssl_gradient, linear_ssl_loss_expected, linear_ssl_views_loss_grad, reconstruction_objective,
    simsiam_batch, simsiam_loss, softmax_batch, LinearEncoder,
};
use decssl::rng::stream_rng;
use decssl::spectral::{encoder_representability, representability};
use decssl::verify::{verify_equivalence, verify_prop1, verify_theorem1, EquivalenceConfig, Prop1Config, Theorem1Config};

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: impl Into<String>) -> Outcome {
    Outcome {
        pass,
        detail: detail.into(),
    }
}

fn theorem1() -> Outcome {
    let r = verify_theorem1(&Theorem1Config::default()).expect("theorem 1 sweep");
    let checked: Vec<_> = r.rows.iter().filter(|row| row.thresholds_checked).collect();
    let a = checked.iter().all(|row| row.min_local >= r.config.threshold);
    let b = checked.iter().all(|row| row.min_global >= r.config.threshold);
    let c = r.trend_non_decreasing;
    let rows: Vec<String> = r
        .rows
        .iter()
        .map(|row| {
            format!(
                "d={} min_local={:.5} min_global={:.5} median_min_local={:.5}",
                row.d, row.min_local, row.min_global, row.median_min_local
            )
        })
        .collect();
    let flag = |ok: bool| if ok { "ok" } else { "FAIL" };
    outcome(
        a && b && c,
        format!("(a) {} (b) {} (c) {}; {}", flag(a), flag(b), flag(c), rows.join("; ")),
    )
}

fn prop1() -> Outcome {
    let r = verify_prop1(&Prop1Config::default()).expect("margin problems");
    let bad: Vec<String> = r
        .cases
        .iter()
        .filter(|c| !(c.ratio_ok && c.ssl_ok))
        .map(|c| format!("seed {} source {} ratio {:.3} ssl {:.4}", c.seed, c.source, c.ratio, c.min_ssl_other))
        .collect();
    outcome(
        r.pass,
        format!(
            "min ratio {:.3} (need >= {}), min SSL representability {:.4} (need >= {}){}",
            r.min_ratio,
            r.config.factor,
            r.min_ssl_other,
            r.config.ssl_threshold,
            if bad.is_empty() { String::new() } else { format!("; failing: {}", bad.join(", ")) }
        ),
    )
}

fn equivalence() -> Outcome {
    let mut worst_angle = 0.0f64;
    let mut worst_gap = f64::NEG_INFINITY;
    let mut pass = true;
    for seed in 0..20u64 {
        let (d, m) = [(16, 2), (32, 4), (64, 8)][seed as usize % 3];
        let r = verify_equivalence(&EquivalenceConfig {
            d,
            m,
            seed,
            ..EquivalenceConfig::default()
        })
        .expect("gradient descent");
        worst_angle = worst_angle.max(r.principal_angle);
        worst_gap = worst_gap.max(r.relative_gap);
        pass &= r.pass;
    }
    outcome(
        pass,
        format!("20 instances, worst angle {worst_angle:.2e} rad, worst relative gap {worst_gap:.2e}"),
    )
}

fn fedavg_local_budgets() -> Outcome {
    let k = 5;
    let data = generate_theory_dataset::<f64>(&TheoryGenConfig::new(256, k, 500, 20, 0)).expect("data");
    let dirs: Vec<usize> = (0..k).collect();
    let mut mins = Vec::new();
    for e in [1, 5, 25] {
        let cfg = FedConfig {
            rounds: 50,
            local_budget: LocalBudget::Epochs(e),
            gradient_mode: GradientMode::Expected,
            embedding_dim: 2 * k,
            ..FedConfig::default()
        };
        let trace = run_fedavg(&data, &cfg).expect("fedavg");
        let r = encoder_representability(&trace.final_models[0], &dirs).expect("representability");
        mins.push(r.min().unwrap());
    }
    let lo = mins.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = mins.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    outcome(
        lo >= 0.85 && hi - lo <= 0.05,
        format!("min representability at E=1,5,25: {mins:.5?}; spread {:.2e}", hi - lo),
    )
}

fn reductions() -> Outcome {
    let k = 3;
    let data = generate_theory_dataset::<f64>(&TheoryGenConfig::new(16, k, 30, 3, 11)).expect("data");
    let mut notes = Vec::new();
    let mut pass = true;
    for participation in [1.0, 0.5] {
        let fed = FedConfig {
            rounds: 6,
            participation,
            embedding_dim: 4,
            batch_size: 8,
            learning_rate: 0.02,
            seed: 5,
            ..FedConfig::default()
        };
        let cfg = FeatArcConfig {
            num_clusters: 1,
            alignment_weight: 0.0,
            ..FeatArcConfig::new(fed.clone())
        };
        let (far, _) = run_featarc(&data, &cfg).expect("featarc");
        let avg = run_fedavg(&data, &fed).expect("fedavg");
        let same = far.core_eq(&avg);
        pass &= same;
        notes.push(format!("C=1 rho={participation}: {}", if same { "identical" } else { "differs" }));

        let cfg = FeatArcConfig {
            num_clusters: k,
            alignment_weight: 0.0,
            pin_assignments: Some((0..k).collect()),
            ..FeatArcConfig::new(fed.clone())
        };
        let (far, state) = run_featarc(&data, &cfg).expect("featarc");
        let local = run_local(&data, &fed).expect("local");
        let same = far.final_models == local.final_models
            && state.local_models == local.final_models
            && far.records.len() == local.records.len()
            && far.records.iter().zip(&local.records).all(|(a, b)| {
                a.participants == b.participants
                    && a.mean_local_loss.map(f64::to_bits) == b.mean_local_loss.map(f64::to_bits)
                    && a.global_loss.to_bits() == b.global_loss.to_bits()
                    && a.cluster_angles == b.node_angles
            });
        pass &= same;
        notes.push(format!("C=K pinned rho={participation}: {}", if same { "identical" } else { "differs" }));
    }
    outcome(pass, notes.join(", "))
}

fn gossip_consensus() -> Outcome {
    let k = 10;
    let d = 24;
    let data = generate_theory_dataset::<f64>(&TheoryGenConfig::new(d, k, 10, 1, 1)).expect("data");
    let cfg = FedConfig {
        local_budget: LocalBudget::Steps(0),
        embedding_dim: 4,
        ..FedConfig::default()
    };
    let mut pass = true;
    let mut notes = Vec::new();
    for kind in [TopologyKind::Star, TopologyKind::Cycle, TopologyKind::BinaryTree, TopologyKind::RandomGraph] {
        let topo = build_topology(kind, k, 0.7, 2).expect("topology");
        let mut models: Vec<LinearEncoder<f64>> = (0..k)
            .map(|i| LinearEncoder::random(4, d, &mut stream_rng(3, &[i as u64])).unwrap())
            .collect();
        let mean0 = LinearEncoder::mean(&models.iter().collect::<Vec<_>>()).unwrap();
        let mut last = pairwise_distances(&models).unwrap().1;
        let mut monotone = true;
        let mut reached = None;
        let mut drift_at_200 = 0.0;
        let mut round = 0;
        // run past 200 rounds only to report when the threshold is reached
        while round < 200 || (reached.is_none() && round < 1000) {
            models = gossip_round(&models, &topo, &data, &cfg, round).expect("gossip");
            let max_d = pairwise_distances(&models).unwrap().1;
            round += 1;
            if round <= 200 {
                monotone &= max_d <= last;
                last = max_d;
            }
            if reached.is_none() && max_d < 1e-6 {
                reached = Some(round);
            }
            if round == 200 {
                let mean = LinearEncoder::mean(&models.iter().collect::<Vec<_>>()).unwrap();
                drift_at_200 = mean.weight().sub(mean0.weight()).unwrap().max_abs();
            }
        }
        let ok = monotone && reached.is_some_and(|r| r <= 200) && drift_at_200 <= 1e-10;
        pass &= ok;
        notes.push(format!(
            "{kind:?}: below 1e-6 after {} rounds, max distance at 200 {last:.1e}, mean drift {drift_at_200:.1e}{}",
            reached.map_or("over 1000".to_string(), |r| r.to_string()),
            if monotone { "" } else { ", not monotone" }
        ));
    }
    outcome(pass, notes.join("; "))
}

fn balanced_labels(classes: usize, per_class: usize) -> Vec<usize> {
    (0..classes * per_class).map(|i| i % classes).collect()
}

fn partitioners() -> Outcome {
    let labels = balanced_labels(10, 1000);
    let within = |hists: &[Vec<usize>], tol: f64| {
        hists.iter().all(|h| {
            let total: usize = h.iter().sum();
            h.iter().all(|&c| (c as f64 / total as f64 - 0.1).abs() <= tol)
        })
    };
    let dirichlet = partition_dirichlet(&labels, 5, 1e6, 0).expect("dirichlet");
    let dirichlet_ok = within(&dirichlet.label_histograms, 0.02);

    let exclusive = partition_skewness(&labels, 5, 0.0, 0).expect("skewness");
    let mut owners = [0usize; 10];
    for h in &exclusive.label_histograms {
        for c in support(h) {
            owners[c] += 1;
        }
    }
    let exclusive_ok = owners.iter().all(|&o| o == 1);
    let uniform = partition_skewness(&labels, 5, 1.0, 0).expect("skewness");
    let uniform_ok = within(&uniform.label_histograms, 0.02);

    let small = balanced_labels(10, 100);
    let global = label_histogram(&small);
    let emds: Vec<f64> = [0.0, 0.25, 0.5, 0.75, 1.0]
        .iter()
        .map(|&b| heterogeneity_emd(&partition_skewness(&small, 5, b, 0).unwrap(), &global).unwrap())
        .collect();
    let emd_ok = emds.windows(2).all(|w| w[1] < w[0]);
    outcome(
        dirichlet_ok && exclusive_ok && uniform_ok && emd_ok,
        format!(
            "dirichlet uniform {dirichlet_ok}, beta=0 exclusive {exclusive_ok}, beta=1 uniform {uniform_ok}, emd {emds:.4?}"
        ),
    )
}

/// Largest relative error between central differences and `grad` over every
/// parameter, with relative errors floored at a scale of 1e-2.
fn fd_error(f: &dyn Fn(&LinearEncoder<f64>) -> f64, e: &LinearEncoder<f64>, grad: &LinearEncoder<f64>) -> f64 {
    let h = 1e-5;
    let mut worst = 0.0f64;
    for b in 0..e.blocks().len() {
        let (rows, cols) = e.blocks()[b].shape();
        for i in 0..rows {
            for j in 0..cols {
                let bump = |delta: f64| {
                    let mut d = e.zeros_like();
                    match b {
                        0 => d.weight_mut()[(i, j)] = delta,
                        1 if e.predictor().is_some() => d.predictor_mut().unwrap()[(i, j)] = delta,
                        _ => d.head_mut().unwrap()[(i, j)] = delta,
                    }
                    let mut x = e.clone();
                    x.add_scaled(1.0, &d).unwrap();
                    f(&x)
                };
                let fd = (bump(h) - bump(-h)) / (2.0 * h);
                let an = grad.blocks()[b][(i, j)];
                worst = worst.max((fd - an).abs() / fd.abs().max(an.abs()).max(1e-2));
            }
        }
    }
    worst
}

fn hygiene() -> Outcome {
    let mut worst_grad = 0.0f64;
    let mut worst_identity = 0.0f64;
    let mut worst_sum = 0.0f64;
    let mut worst_infonce = 0.0f64;
    for seed in 0..5u64 {
        let mut rng = stream_rng(seed, &[1]);
        let (m, d, n, c) = (3, 6, 5, 4);
        let base = LinearEncoder::<f64>::random(m, d, &mut rng).unwrap();
        let with_pred = base.clone().with_predictor(Matrix::random_normal(m, m, 0.7, &mut rng)).unwrap();
        let with_head = base.clone().with_head(Matrix::random_normal(c, m, 0.7, &mut rng)).unwrap();
        let a = Matrix::random_normal(n, d, 1.0, &mut rng);
        let b = Matrix::random_normal(n, d, 1.0, &mut rng);
        let labels: Vec<usize> = (0..n).map(|i| i % c).collect();
        let zg = Matrix::random_normal(n, m, 1.0, &mut rng);
        let x = {
            let g = Matrix::random_normal(2 * d, d, 1.0, &mut rng);
            g.transpose_matmul(&g).unwrap().scale(1.0 / (2 * d) as f64)
        };

        let mut g = base.zeros_like();
        *g.weight_mut() = linear_ssl_gradient(&base, &x).unwrap();
        worst_grad = worst_grad.max(fd_error(&|e| linear_ssl_loss_expected(e, &x).unwrap(), &base, &g));
        *g.weight_mut() = linear_ssl_views_loss_grad(&base, &a, &b).unwrap().1;
        worst_grad = worst_grad.max(fd_error(&|e| linear_ssl_views_loss_grad(e, &a, &b).unwrap().0, &base, &g));
        let (_, g) = infonce_batch(&base, &a, &b, 0.5).unwrap();
        worst_grad = worst_grad.max(fd_error(&|e| infonce_batch(e, &a, &b, 0.5).unwrap().0, &base, &g));
        for enc in [&base, &with_pred] {
            // the SimSiam target is a stop-gradient, frozen at the current weights
            let (_, g) = simsiam_batch(enc, &a, &b).unwrap();
            let (z1, z2) = (enc.embed_rows(&a).unwrap(), enc.embed_rows(&b).unwrap());
            let frozen = |x: &LinearEncoder<f64>| {
                let mut l = 0.0;
                for s in 0..n {
                    let p1 = x.predict(&x.embed(a.row(s)).unwrap()).unwrap();
                    let p2 = x.predict(&x.embed(b.row(s)).unwrap()).unwrap();
                    l += 0.5 * simsiam_loss(&p1, z2.row(s)).unwrap() + 0.5 * simsiam_loss(&p2, z1.row(s)).unwrap();
                }
                l / n as f64
            };
            worst_grad = worst_grad.max(fd_error(&frozen, enc, &g));
            let (_, g) = alignment_regularizer(enc, &zg, &a, &b, 0.7).unwrap();
            worst_grad = worst_grad.max(fd_error(&|e| alignment_regularizer(e, &zg, &a, &b, 0.7).unwrap().0, enc, &g));
        }
        let (_, g) = softmax_batch(&with_head, &a, &labels).unwrap();
        worst_grad = worst_grad.max(fd_error(&|e| softmax_batch(e, &a, &labels).unwrap().0, &with_head, &g));
        let (u, v) = (a.row(0).to_vec(), b.row(0).to_vec());
        let (_, cg) = cosine_distance_grad(&u, &v).unwrap();
        for (j, &an) in cg.iter().enumerate() {
            let bump = |delta: f64| {
                let mut w = u.clone();
                w[j] += delta;
                cosine_distance(&w, &v).unwrap()
            };
            let fd = (bump(1e-6) - bump(-1e-6)) / 2e-6;
            worst_grad = worst_grad.max((fd - an).abs() / fd.abs().max(an.abs()).max(1e-2));
        }

        let lhs = 2.0 * linear_ssl_loss_expected(&base, &x).unwrap() + x.frobenius_norm_sq();
        let rhs = reconstruction_objective(&base, &x).unwrap();
        worst_identity = worst_identity.max((lhs - rhs).abs() / rhs.abs());

        let q: Matrix<f64> = random_orthogonal(d, &mut rng);
        for rows in [base.weight().clone(), q.truncate_rows(2)] {
            let r = representability(&rows, &[]).unwrap();
            let total: f64 = r.values.iter().sum();
            worst_sum = worst_sum.max((total - r.subspace_dim as f64).abs());
        }

        let anchor = [1.0, 0.0, 0.0];
        let positive = [0.0, 1.0, 0.0];
        for negs in 1..=8usize {
            let negatives: Vec<[f64; 3]> = (0..negs)
                .map(|i| if i % 2 == 0 { positive } else { [0.0, 0.0, 1.0 + i as f64] })
                .collect();
            let l = infonce_loss(&anchor, &positive, &negatives, 0.1 + seed as f64).unwrap();
            worst_infonce = worst_infonce.max((l - ((negs + 1) as f64).ln()).abs());
        }
    }
    outcome(
        worst_grad <= 1e-4 && worst_identity <= 1e-9 && worst_sum <= 1e-8 && worst_infonce <= 1e-12,
        format!(
            "gradient rel err {worst_grad:.1e}, loss identity {worst_identity:.1e}, representability sum {worst_sum:.1e}, InfoNCE ln(n+1) {worst_infonce:.1e}"
        ),
    )
}

type Criterion = (&'static str, fn() -> Outcome);

fn main() -> ExitCode {
    let criteria: [Criterion; 8] = [
        ("1 local/global representability on theory data", theorem1),
        ("2 supervised features concentrate, SSL features do not", prop1),
        ("3 gradient descent reaches the rank-m minimizer", equivalence),
        ("4 FedAvg insensitive to the local budget", fedavg_local_budgets),
        ("5 FeatARC reductions to FedAvg and local training", reductions),
        ("6 gossip consensus on four topologies", gossip_consensus),
        ("7 partitioner contracts", partitioners),
        ("8 numerical hygiene", hygiene),
    ];
    let filter: Vec<String> = std::env::args().skip(1).filter(|a| !a.starts_with('-')).collect();
    let mut failed = 0;
    for (name, run) in criteria {
        if !filter.is_empty() && !filter.iter().any(|f| name.starts_with(f.as_str())) {
            continue;
        }
        let start = Instant::now();
        let result = catch_unwind(AssertUnwindSafe(run)).unwrap_or_else(|e| {
            let msg = e
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| e.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_default();
            outcome(false, format!("panicked: {msg}"))
        });
        if !result.pass {
            failed += 1;
        }
        println!(
            "{} criterion {name} [{:.1}s]: {}",
            if result.pass { "PASS" } else { "FAIL" },
            start.elapsed().as_secs_f64(),
            result.detail
        );
    }
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        println!("{failed} criteria failed");
        ExitCode::FAILURE
    }
}
