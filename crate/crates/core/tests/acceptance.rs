//! Acceptance suite: one test per criterion, each printing a PASS/FAIL
//! line with its measured statistics (visible with `--nocapture`).

mod common;

use common::{exact_error_curve, finite_difference_gradient, sgm_rdp_quadrature, sort_quantile};
use dcsgd::accountant::{
    calibrate_sigma, compose, epsilon_for, lt_tuning_cost, rdp_sgm, sgm_curve, split_noise,
    PrivacyBudget,
};
use dcsgd::data::{gen_blobs, gen_norms, NormDistribution};
use dcsgd::histogram::build_histogram;
use dcsgd::models::{per_example_gradient, Architecture, Example, ModelParams};
use dcsgd::strategy::{expected_squared_error, percentile_threshold, ClipState, ThresholdStrategy};
use dcsgd::trainer::{train, Optimizer, TrainConfig};
use proptest::prelude::*;
use proptest::test_runner::{Config as ProptestConfig, TestRunner};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use rand_distr::StandardNormal;

#[test]
fn criterion_01_noise_split_identity() {
    let mut rng = ChaCha20Rng::seed_from_u64(101);
    let mut worst_merge = 0.0f64;
    let mut worst_delta = 0.0f64;
    for _ in 0..1000 {
        let sigma = rng.gen_range(0.1..10.0);
        let sigma_h = sigma * rng.gen_range(1.0001..100.0);
        let sigma_t = split_noise(sigma, sigma_h).unwrap();

        let merge_rel =
            ((sigma_t.powi(-2) + sigma_h.powi(-2)) - sigma.powi(-2)).abs() / sigma.powi(-2);
        worst_merge = worst_merge.max(merge_rel);
        assert!(merge_rel <= 1e-12, "split identity off by {merge_rel:e}");

        // Joint-release sensitivity bound: sigma * Delta = 1.
        let delta = (sigma_t.powi(-2) + sigma_h.powi(-2)).sqrt();
        let delta_rel = (sigma * delta - 1.0).abs();
        worst_delta = worst_delta.max(delta_rel);
        assert!(delta_rel <= 1e-12, "sigma*Delta off by {delta_rel:e}");
    }
    println!(
        "criterion 01 (noise-split identity): PASS — worst split residual {worst_merge:.2e}, worst sigma*Delta residual {worst_delta:.2e} over 1000 draws"
    );
}

#[test]
fn criterion_02_percentile_error_bound() {
    let mut runner = TestRunner::new(ProptestConfig {
        cases: 500,
        ..ProptestConfig::default()
    });
    let strategy = (
        proptest::collection::vec(0.0f64..1.0, 1..300),
        0.5f64..500.0,
        1.01f64..2.0,
        5usize..=100,
        0.01f64..0.99,
    );
    runner
        .run(&strategy, |(raw, scale, headroom, bins, p)| {
            let norms: Vec<f64> = raw.iter().map(|x| x * scale).collect();
            let max = norms.iter().cloned().fold(0.0, f64::max);
            let range = (max * headroom).max(1e-6);
            let mut rng = ChaCha20Rng::seed_from_u64(0);
            let hist = build_histogram(&norms, range, bins, 0.0, &mut rng).unwrap();
            let state = ClipState {
                c: 1.0,
                r: range,
                strategy: ThresholdStrategy::Percentile { p },
            };
            let estimated = percentile_threshold(&hist, p, &state).unwrap().c;
            let exact = sort_quantile(&norms, p);
            let bound = range / (2.0 * bins as f64);
            prop_assert!(
                (estimated - exact).abs() <= bound * (1.0 + 1e-9),
                "err {} > bound {}",
                (estimated - exact).abs(),
                bound
            );
            Ok(())
        })
        .unwrap();
    println!(
        "criterion 02 (percentile error bound): PASS — 500 random multisets within R/(2b) of the sort quantile"
    );
}

#[test]
fn criterion_03_fig2_percentile_reproduction() {
    let range = 150.0;
    let percentiles: Vec<f64> = (1..=9).map(|i| i as f64 / 10.0).collect();
    let mut table = Vec::new();
    let mut all_pass = true;
    for (bi, &bins) in [10usize, 20, 50].iter().enumerate() {
        for (si, &sigma_h) in [1.0f64, 5.0, 10.0].iter().enumerate() {
            let mut hits = 0usize;
            let mut checks = 0usize;
            for trial in 0..100u64 {
                let seed = 10_000 + (bi as u64 * 3 + si as u64) * 1000 + trial;
                let pop = gen_norms(
                    NormDistribution::Gaussian {
                        mean: 100.0,
                        std: 20.0,
                    },
                    256,
                    seed,
                )
                .unwrap();
                let mut rng = ChaCha20Rng::seed_from_u64(seed ^ 0xABCD_EF01);
                let hist = build_histogram(&pop.values, range, bins, sigma_h, &mut rng).unwrap();
                let state = ClipState {
                    c: 1.0,
                    r: range,
                    strategy: ThresholdStrategy::Percentile { p: 0.5 },
                };
                for &p in &percentiles {
                    let estimated = percentile_threshold(&hist, p, &state).unwrap().c;
                    let exact = sort_quantile(&pop.values, p);
                    if (estimated - exact).abs() <= range / bins as f64 {
                        hits += 1;
                    }
                    checks += 1;
                }
            }
            let rate = hits as f64 / checks as f64;
            let ok = rate >= 0.95;
            all_pass &= ok;
            table.push((bins, sigma_h, rate, ok));
        }
    }
    println!("criterion 03 (Fig. 2 percentile reproduction): per-cell rate of |C_est - quantile| <= R/b over 100 seeds x 9 percentiles");
    for (bins, sigma_h, rate, ok) in &table {
        println!(
            "  b={bins:<3} sigma_H={sigma_h:<4} rate={rate:.3} [{}]",
            if *ok { "ok" } else { "BELOW 0.95" }
        );
    }
    println!(
        "criterion 03 (Fig. 2 percentile reproduction): {}",
        if all_pass {
            "PASS"
        } else {
            "FAIL — see table above; the estimator is pinned by the histogram mechanism, whose stopping-bin displacement under count noise exceeds one bin width for high (b, sigma_H)"
        }
    );
    assert!(
        all_pass,
        "cells below the 95% threshold: {:?}",
        table
            .iter()
            .filter(|(_, _, _, ok)| !ok)
            .map(|(b, s, r, _)| format!("b={b},sigma_H={s}: {r:.3}"))
            .collect::<Vec<_>>()
    );
}

#[test]
fn criterion_04_fig3_error_curve_fidelity() {
    let range = 120.0;
    let (sigma_t, batch, dim) = (1.0, 256.0, 100_000usize);
    let grid: Vec<f64> = (1..=60).map(|j| j as f64 * 150.0 / 60.0).collect();

    let mut pooled_hits = 0usize;
    let mut pooled_total = 0usize;
    let mut cells = Vec::new();
    for (bi, &bins) in [10usize, 20, 50].iter().enumerate() {
        for (si, &sigma_h) in [1.0f64, 5.0, 10.0].iter().enumerate() {
            let mut hits = 0usize;
            for trial in 0..100u64 {
                let seed = 40_000 + (bi as u64 * 3 + si as u64) * 1000 + trial;
                let pop = gen_norms(
                    NormDistribution::Gaussian {
                        mean: 100.0,
                        std: 20.0,
                    },
                    256,
                    seed,
                )
                .unwrap();
                let mut rng = ChaCha20Rng::seed_from_u64(seed ^ 0x1357_9BDF);
                let hist = build_histogram(&pop.values, range, bins, sigma_h, &mut rng).unwrap();

                let exact: Vec<f64> = grid
                    .iter()
                    .map(|&c| exact_error_curve(&pop.values, c, sigma_t, batch, dim))
                    .collect();
                let estimated: Vec<f64> = grid
                    .iter()
                    .map(|&c| {
                        expected_squared_error(&hist, c, sigma_t, batch, dim)
                            .unwrap()
                            .total
                    })
                    .collect();

                let argmin = |v: &[f64]| {
                    let mut k = 0;
                    for (i, &x) in v.iter().enumerate() {
                        if x < v[k] {
                            k = i;
                        }
                    }
                    k
                };
                let k_exact = argmin(&exact);
                let k_est = argmin(&estimated);

                // The exact curve must be U-shaped: strictly falling, then
                // strictly rising, with an interior minimum.
                assert!(
                    k_exact > 0 && k_exact < grid.len() - 1,
                    "argmin on the boundary"
                );
                for i in 0..k_exact {
                    assert!(
                        exact[i] > exact[i + 1],
                        "not strictly falling before argmin"
                    );
                }
                for i in k_exact..grid.len() - 1 {
                    assert!(exact[i] < exact[i + 1], "not strictly rising after argmin");
                }

                if (grid[k_est] - grid[k_exact]).abs() <= 2.0 * range / bins as f64 {
                    hits += 1;
                }
            }
            cells.push((bins, sigma_h, hits as f64 / 100.0));
            pooled_hits += hits;
            pooled_total += 100;
        }
    }
    let pooled = pooled_hits as f64 / pooled_total as f64;
    println!("criterion 04 (Fig. 3/4 E-curve fidelity): per-cell argmin-within-2-bin-width rates");
    for (bins, sigma_h, rate) in &cells {
        println!("  b={bins:<3} sigma_H={sigma_h:<4} rate={rate:.2}");
    }
    println!(
        "criterion 04 (Fig. 3/4 E-curve fidelity): {} — pooled rate {pooled:.3} (>= 0.90 required), exact curve U-shaped in all 900 trials",
        if pooled >= 0.90 { "PASS" } else { "FAIL" }
    );
    assert!(pooled >= 0.90, "pooled argmin agreement {pooled:.3} < 0.90");
}

#[test]
fn criterion_05_accountant_identities() {
    // Pure-Gaussian closed form at q = 1.
    let mut worst_gauss = 0.0f64;
    for &sigma in &[0.5, 1.0, 2.0, 4.0] {
        for &alpha in &[1.5, 2.0, 8.0, 64.0, 512.0] {
            let got = rdp_sgm(1.0, sigma, alpha).unwrap();
            let want = alpha / (2.0 * sigma * sigma);
            let rel = (got - want).abs() / want;
            worst_gauss = worst_gauss.max(rel);
            assert!(rel <= 1e-9, "q=1 closed form off by {rel:e}");
        }
    }

    // Composition linearity: T-fold composition is elementwise T * rho,
    // and nesting with a power-of-two factor is exact.
    let orders = dcsgd::accountant::default_orders();
    let curve = sgm_curve(256.0 / 60_000.0, 1.1, &orders).unwrap();
    let composed = compose(&curve, 37);
    for (v, base) in composed.values.iter().zip(&curve.values) {
        assert_eq!(*v, base * 37.0);
    }
    assert_eq!(
        compose(&compose(&curve, 3), 4).values,
        compose(&curve, 12).values
    );

    // Independent quadrature oracle on a 3x3x3 grid.
    let mut worst_quad = 0.0f64;
    for &q in &[256.0 / 60_000.0, 0.02, 0.1] {
        for &sigma in &[1.0, 1.1, 2.0] {
            for &alpha in &[2.0, 8.0, 32.0] {
                let got = rdp_sgm(q, sigma, alpha).unwrap();
                let oracle = sgm_rdp_quadrature(q, sigma, alpha);
                let rel = (got - oracle).abs() / oracle;
                worst_quad = worst_quad.max(rel);
                assert!(
                    rel <= 1e-4,
                    "rdp_sgm({q}, {sigma}, {alpha}) = {got} vs quadrature {oracle}: rel {rel:e}"
                );
            }
        }
    }

    // Calibration round trip at the MNIST-scale setting.
    let (target, delta, q, steps) = (8.0, 1.0 / 60_000.0, 256.0 / 60_000.0, 2340);
    let sigma = calibrate_sigma(target, delta, q, steps).unwrap();
    let (realized, _) = epsilon_for(q, sigma, steps, delta).unwrap();
    assert!(
        realized <= target && realized >= 0.99 * target,
        "round trip epsilon {realized} vs target {target} (sigma = {sigma})"
    );

    println!(
        "criterion 05 (accountant identities): PASS — gaussian closed form worst rel {worst_gauss:.1e}, quadrature worst rel {worst_quad:.1e}, round trip epsilon {realized:.4} for target 8 at sigma {sigma:.4}"
    );
}

#[test]
fn criterion_06_lt_formula() {
    let mut rng = ChaCha20Rng::seed_from_u64(606);
    for _ in 0..100 {
        let eps1 = rng.gen_range(0.01..5.0);
        let delta1 = if rng.gen_bool(0.2) {
            0.0
        } else {
            rng.gen_range(0.0..1e-4)
        };
        let gamma = rng.gen_range(0.001..=1.0);
        let delta2 = 10f64.powf(rng.gen_range(-30.0..-0.31));

        let cost = lt_tuning_cost(eps1, delta1, gamma, delta2).unwrap();
        let t = (1.0 / delta2).ln() / gamma;
        let radical = 3.0 * (2.0 * delta1).sqrt();
        assert_eq!(cost.trial_bound, t);
        assert_eq!(cost.epsilon, 3.0 * eps1 + radical);
        assert_eq!(cost.delta, radical * t + delta2);
    }
    println!("criterion 06 (LT tuning formula): PASS — 100 random inputs reproduced exactly");
}

#[test]
fn criterion_07_gradient_correctness() {
    let mut rng = ChaCha20Rng::seed_from_u64(707);
    let mut worst = 0.0f64;
    for arch in [Architecture::logistic(6, 3), Architecture::mlp(6, 5, 3)] {
        for _ in 0..100 {
            let params = ModelParams::random_init(arch, &mut rng);
            let example = Example {
                features: (0..6).map(|_| rng.gen_range(-2.0..2.0)).collect(),
                label: rng.gen_range(0..3),
            };
            let analytic = per_example_gradient(&params, &example).unwrap();
            let numeric = finite_difference_gradient(&params, &example);
            for (a, n) in analytic.iter().zip(&numeric) {
                let rel = (a - n).abs() / a.abs().max(n.abs()).max(1e-3);
                worst = worst.max(rel);
                assert!(
                    rel < 1e-5,
                    "coordinate rel error {rel:e} (analytic {a}, numeric {n})"
                );
            }
        }
    }
    println!(
        "criterion 07 (gradient correctness): PASS — 100 instances per architecture, worst per-coordinate rel error {worst:.1e}"
    );
}

#[test]
fn criterion_08_dpsgd_collapse() {
    let dataset = gen_blobs(2000, 10, 2, 8.0, 88).unwrap();
    let train_examples: Vec<&Example> = dataset.train_examples().collect();
    let n = train_examples.len();
    let (batch, epochs, lr, momentum, sigma, c, seed) =
        (64usize, 2usize, 0.05, 0.9, 1.1, 1.0, 1234u64);
    let steps = epochs as u64 * n.div_ceil(batch) as u64;
    let q = batch as f64 / n as f64;
    let delta = 1e-4;
    let (epsilon, _) = epsilon_for(q, sigma, steps, delta).unwrap();

    let config = TrainConfig {
        batch_size: batch,
        epochs,
        learning_rate: lr,
        optimizer: Optimizer::SgdMomentum { momentum },
        budget: PrivacyBudget::without_split(epsilon, delta, q, steps, sigma),
        clip: ClipState {
            c,
            r: 2.0 * c,
            strategy: ThresholdStrategy::Static,
        },
        bins: 20,
        hidden_dim: None,
        seed,
    };
    let (params, _) = train(&dataset, &config).unwrap();

    // Hand-rolled vanilla DP-SGD over the same seeded generator.
    let arch = Architecture::logistic(10, 2);
    let dim = arch.param_count();
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    let mut reference = ModelParams::random_init(arch, &mut rng);
    let mut velocity = vec![0.0; dim];
    for _ in 0..steps {
        let batch_idx: Vec<usize> = (0..n).filter(|_| rng.gen::<f64>() < q).collect();
        let mut update = vec![0.0; dim];
        for &i in &batch_idx {
            let g = per_example_gradient(&reference, train_examples[i]).unwrap();
            let norm = g.iter().map(|x| x * x).sum::<f64>().sqrt();
            let scale = 1.0 / (norm / c).max(1.0);
            for (u, gi) in update.iter_mut().zip(&g) {
                *u += gi * scale;
            }
        }
        let noise_scale = sigma * c;
        for u in update.iter_mut() {
            let z: f64 = rng.sample(StandardNormal);
            *u += noise_scale * z;
        }
        for u in update.iter_mut() {
            *u /= batch as f64;
        }
        for i in 0..dim {
            velocity[i] = momentum * velocity[i] + update[i];
            reference.theta[i] -= lr * velocity[i];
        }
    }

    assert_eq!(
        params.theta, reference.theta,
        "static DC-SGD diverged bitwise from the vanilla reference loop"
    );
    println!(
        "criterion 08 (DP-SGD collapse): PASS — {steps} iterations bitwise identical to the hand-rolled reference ({dim} parameters)"
    );
}

#[test]
fn criterion_09_percentile_tracking_in_vivo() {
    let dataset = gen_blobs(10_000, 20, 2, 10.0, 909).unwrap();
    let n = dataset.train_idx.len();
    let (batch, epochs, target_eps, delta, p) = (256usize, 10usize, 8.0, 1e-4, 0.7);
    let steps = epochs as u64 * n.div_ceil(batch) as u64;
    let q = batch as f64 / n as f64;
    let sigma = calibrate_sigma(target_eps, delta, q, steps).unwrap();
    let sigma_h = dcsgd::accountant::auto_sigma_h(sigma);
    let config = TrainConfig {
        batch_size: batch,
        epochs,
        learning_rate: 0.001,
        optimizer: Optimizer::adam_default(),
        budget: PrivacyBudget::with_split(target_eps, delta, q, steps, sigma, sigma_h).unwrap(),
        clip: ClipState {
            c: 1.0,
            r: 1.0,
            strategy: ThresholdStrategy::Percentile { p },
        },
        bins: 20,
        hidden_dim: None,
        seed: 909,
    };
    let (_, metrics) = train(&dataset, &config).unwrap();

    let warmup = (steps as f64 * 0.2) as usize;
    let mut within = 0usize;
    let mut total = 0usize;
    for row in metrics.rows.iter().skip(warmup) {
        if row.batch_size == 0 {
            continue;
        }
        total += 1;
        if (row.unclipped_fraction - p).abs() <= 0.1 {
            within += 1;
        }
    }
    let rate = within as f64 / total as f64;
    println!(
        "criterion 09 (percentile tracking in vivo): {} — unclipped fraction within 0.7 +/- 0.1 in {rate:.3} of {total} post-warmup iterations (>= 0.90 required, sigma {sigma:.3})",
        if rate >= 0.90 { "PASS" } else { "FAIL" }
    );
    assert!(rate >= 0.90, "tracking rate {rate:.3} < 0.90");
}

#[test]
fn criterion_10_end_to_end_smoke() {
    let dataset = gen_blobs(10_000, 20, 2, 10.0, 1010).unwrap();
    let n = dataset.train_idx.len();
    let (batch, epochs, target_eps, delta) = (256usize, 10usize, 8.0, 1e-4);
    let steps = epochs as u64 * n.div_ceil(batch) as u64;
    let q = batch as f64 / n as f64;
    let sigma = calibrate_sigma(target_eps, delta, q, steps).unwrap();
    let sigma_h = dcsgd::accountant::auto_sigma_h(sigma);
    let config = TrainConfig {
        batch_size: batch,
        epochs,
        learning_rate: 0.001,
        optimizer: Optimizer::adam_default(),
        budget: PrivacyBudget::with_split(target_eps, delta, q, steps, sigma, sigma_h).unwrap(),
        clip: ClipState {
            c: 1.0,
            r: 20.0,
            strategy: ThresholdStrategy::ExpectedError,
        },
        bins: 20,
        hidden_dim: None,
        seed: 1010,
    };
    let (_, metrics) = train(&dataset, &config).unwrap();
    println!(
        "criterion 10 (end-to-end smoke): {} — DC-SGD-E test accuracy {:.4} (>= 0.95 required) at epsilon {:.3}",
        if metrics.final_accuracy >= 0.95 { "PASS" } else { "FAIL" },
        metrics.final_accuracy,
        metrics.realized_epsilon
    );
    assert!(
        metrics.final_accuracy >= 0.95,
        "accuracy {} < 0.95",
        metrics.final_accuracy
    );
}
