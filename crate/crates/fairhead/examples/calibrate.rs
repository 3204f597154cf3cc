//! Scratch calibration harness for the synthetic benchmark dynamics.

use std::collections::BTreeSet;

use fairhead::dataio::{generate_synthetic, Axis, OracleSpec, SignalSpec};
use fairhead::gbt::GbtParams;
use fairhead::heads::{HeadKind, HeadParams};
use fairhead::mitigate::{run_experiment, ActiveLearningConfig, ExperimentConfig, Mitigation};

fn run(label: &str, spec: &OracleSpec, n: usize, seed: u64, cfg: &ExperimentConfig) {
    let (e, s, _) = generate_synthetic(spec, n, seed).unwrap();
    let mut arms: Vec<(String, BTreeSet<Mitigation>)> = vec![
        ("baseline".into(), BTreeSet::new()),
        ("reweight".into(), [Mitigation::Reweight].into_iter().collect()),
        ("active".into(), [Mitigation::ActiveLearning].into_iter().collect()),
    ];
    if std::env::var("WITH_AUGMENT").is_ok() {
        arms.push(("augment".into(), [Mitigation::Augment].into_iter().collect()));
    }
    for (name, set) in arms {
        let mut cfg = cfg.clone();
        cfg.mitigations = set;
        let t0 = std::time::Instant::now();
        let r = run_experiment(&e, &s, &cfg).unwrap();
        let a = &r.aggregates;
        println!(
            "{label:<24} {name:<9} auprc {:.3}  d_sex {:.3}  d_age {:.3}  d_race {:.3}   ({:.1}s)",
            a["mean_auprc"].mean,
            a["delta_sex"].mean,
            a["delta_age"].mean,
            a["delta_race"].mean,
            t0.elapsed().as_secs_f64()
        );
    }
}

fn main() {
    let args: Vec<String> = std::env::args().collect();
    let which = args.get(1).map(String::as_str).unwrap_or("all");

    let mut cfg = ExperimentConfig {
        head: HeadKind::Gbt,
        n_repeats: 2,
        base_seed: 42,
        active: ActiveLearningConfig {
            initial_pool: 4000,
            batch_size: 1500,
            rounds: 4,
            strategy: fairhead::mitigate::AcquisitionStrategy::Uncertainty,
        },
        ..ExperimentConfig::default()
    };
    cfg.params = HeadParams {
        gbt: GbtParams {
            n_estimators: 60,
            max_depth: 4,
            learning_rate: 0.1,
            ..GbtParams::default()
        },
        ..HeadParams::default()
    };

    let n = 20_000;

    if which == "all" || which == "noise" {
        // mechanism probe: noise only, no race weight control
        let spec = OracleSpec::biased(16, 0.25);
        run("biased(noise .25)", &spec, n, 1, &cfg);
        let mut clean = spec.clone();
        clean.label_noise_rate = 0.0;
        run("signal only (no noise)", &clean, n, 1, &cfg);
    }

    if which == "all" || which == "raceweight" {
        // sweep the fraction f of margin variance carried by the two
        // race-shifted dims
        for f in [0.7, 0.85] {
            for noise in [0.25, 0.0] {
                let mut spec = OracleSpec::biased(16, noise);
                let c = (f * 6.25f64 / 2.0).sqrt();
                for w in &mut spec.weights {
                    let rest: f64 =
                        w.iter().enumerate().filter(|(j, _)| *j != 2 && *j != 3).map(|(_, v)| v * v).sum();
                    let scale = ((1.0 - f) * 6.25 / rest).sqrt();
                    for (j, v) in w.iter_mut().enumerate() {
                        if j != 2 && j != 3 {
                            *v *= scale;
                        }
                    }
                    w[2] = c;
                    w[3] = -c;
                }
                for (trees, depth, lr) in
                    [(20usize, 2usize, 0.3), (30, 3, 0.2), (60, 3, 0.1)]
                {
                    let mut c2 = cfg.clone();
                    c2.params.gbt.n_estimators = trees;
                    c2.params.gbt.max_depth = depth;
                    c2.params.gbt.learning_rate = lr;
                    run(&format!("f{f} p{noise} t{trees} d{depth}"), &spec, n, 1, &c2);
                }
            }
        }
    }

    if which == "reg" {
        // evidence-shrinkage regime: high leaf regularization suppresses the
        // minority band unless weights rebalance it
        let f = 0.85;
        let norm = 4.5f64;
        let mut spec = OracleSpec::biased(16, 0.25);
        let c = (f * norm * norm / 2.0_f64).sqrt();
        for w in &mut spec.weights {
            let rest: f64 = w
                .iter()
                .enumerate()
                .filter(|(j, _)| *j != 2 && *j != 3)
                .map(|(_, v)| v * v)
                .sum();
            let scale = ((1.0 - f) * norm * norm / rest).sqrt();
            for (j, v) in w.iter_mut().enumerate() {
                if j != 2 && j != 3 {
                    *v *= scale;
                }
            }
            w[2] = c;
            w[3] = -c;
        }
        for (lam, mch) in [(20.0, 5.0), (50.0, 5.0), (50.0, 15.0), (100.0, 15.0)] {
            let mut c2 = cfg.clone();
            c2.params.gbt = GbtParams {
                n_estimators: 50,
                max_depth: 4,
                learning_rate: 0.15,
                lambda_l2: lam,
                min_child_hessian: mch,
                ..GbtParams::default()
            };
            run(&format!("lam{lam} mch{mch}"), &spec, n, 1, &c2);
        }
    }

    if which == "diag" {
        use fairhead::dataio::{Label, Split};
        use fairhead::heads::train_multihead;
        use fairhead::linalg::{fit_pca, pca_transform};
        use fairhead::metrics::auprc;

        let f = 0.85;
        for (norm, trees, depth, lr) in
            [(2.5, 30usize, 3usize, 0.2), (4.5, 30, 3, 0.2), (4.5, 60, 6, 0.1)]
        {
            let mut spec = OracleSpec::biased(16, 0.25);
            let c = (f * norm * norm / 2.0_f64).sqrt();
            for w in &mut spec.weights {
                let rest: f64 = w
                    .iter()
                    .enumerate()
                    .filter(|(j, _)| *j != 2 && *j != 3)
                    .map(|(_, v)| v * v)
                    .sum();
                let scale = ((1.0 - f) * norm * norm / rest).sqrt();
                for (j, v) in w.iter_mut().enumerate() {
                    if j != 2 && j != 3 {
                        *v *= scale;
                    }
                }
                w[2] = c;
                w[3] = -c;
            }
            let (e, s, _) = generate_synthetic(&spec, 20_000, 1).unwrap();

            for (arm, reweight) in [("base", false), ("rw", true)] {
                let train = s.split_indices(Split::Train);
                let test = s.split_indices(Split::Test);
                let mut weights = vec![1.0; s.n_samples()];
                if reweight {
                    let gids: Vec<usize> = train
                        .iter()
                        .map(|&i| {
                            Axis::Race
                                .all_groups()
                                .iter()
                                .position(|g| *g == s.group_name(Axis::Race, i))
                                .unwrap()
                        })
                        .collect();
                    for (pos, w) in
                        train.iter().zip(fairhead::mitigate::balance_weights(&gids))
                    {
                        weights[*pos] = w;
                    }
                }
                let pca = fit_pca(&e.data().select_rows(&train), 0.95).unwrap();
                let reduced = pca_transform(&pca, e.data()).unwrap();
                let labels: Vec<Vec<Label>> = (0..s.n_conditions())
                    .map(|cid| train.iter().map(|&i| s.label(cid, i)).collect())
                    .collect();
                let names = s.condition_names().to_vec();
                let w_train: Vec<f64> = train.iter().map(|&i| weights[i]).collect();
                let mut params = HeadParams::default();
                params.gbt =
                    GbtParams { n_estimators: trees, max_depth: depth, learning_rate: lr, ..GbtParams::default() };
                let model = train_multihead(
                    HeadKind::Gbt,
                    &reduced.select_rows(&train),
                    &labels,
                    &names,
                    &w_train,
                    &params,
                    42,
                )
                .unwrap();

                // condition 0 only: model vs oracle per race group on test
                let c0 = 0;
                let probs =
                    model.heads[c0].predict_proba(&reduced.select_rows(&test)).unwrap();
                let oracle: Vec<f64> = test
                    .iter()
                    .map(|&i| {
                        let m: f64 = e
                            .row(i)
                            .iter()
                            .zip(&spec.weights[c0])
                            .map(|(x, w)| x * w)
                            .sum::<f64>()
                            + spec.biases[c0];
                        m
                    })
                    .collect();
                print!("norm{norm} t{trees} d{depth} {arm:<4} ");
                for group in ["white", "asian", "black"] {
                    let idx: Vec<usize> = (0..test.len())
                        .filter(|&j| {
                            s.group_name(Axis::Race, test[j]) == group
                                && s.label(c0, test[j]) != Label::Missing
                        })
                        .collect();
                    let ys: Vec<u8> = idx
                        .iter()
                        .map(|&j| s.label(c0, test[j]).as_binary().unwrap())
                        .collect();
                    let ps: Vec<f64> = idx.iter().map(|&j| probs[j]).collect();
                    let os: Vec<f64> = idx.iter().map(|&j| oracle[j]).collect();
                    print!(
                        "{group}: m {:.3} o {:.3}  ",
                        auprc(&ps, &ys).unwrap(),
                        auprc(&os, &ys).unwrap()
                    );
                }
                println!();
            }
        }
    }

    if which == "strength" {
        for strength in [1.5, 3.0, 4.5] {
            let mut spec = OracleSpec::biased(16, 0.25);
            for s in &mut spec.signals {
                if s.axis == Axis::Race {
                    s.strength = strength;
                }
            }
            let _ = SignalSpec { axis: Axis::Race, dim_index: 2, strength };
            run(&format!("race_strength {strength}"), &spec, n, 1, &cfg);
        }
    }

    if which == "crit7" {
        let f = 0.85;
        let norm = 4.5f64;
        let mut spec = OracleSpec::biased(16, 0.25);
        let c = (f * norm * norm / 2.0_f64).sqrt();
        for w in &mut spec.weights {
            let rest: f64 = w
                .iter()
                .enumerate()
                .filter(|(j, _)| *j != 2 && *j != 3)
                .map(|(_, v)| v * v)
                .sum();
            let scale = ((1.0 - f) * norm * norm / rest).sqrt();
            for (j, v) in w.iter_mut().enumerate() {
                if j != 2 && j != 3 {
                    *v *= scale;
                }
            }
            w[2] = c;
            w[3] = -c;
        }
        for seed in [1u64, 7, 13] {
            let (e, s, _) = generate_synthetic(&spec, 20_000, seed).unwrap();
            for gamma in [100.0f64, 300.0, 1000.0, 3000.0] {
                let (trees, depth, lr) = (60usize, 4usize, 0.15);
                for (init, batch, rounds) in [(4000usize, 1500usize, 4usize)] {
                    let mut c2 = cfg.clone();
                    c2.n_repeats = 5;
                    c2.base_seed = 42;
                    c2.params.gbt = GbtParams {
                        n_estimators: trees,
                        max_depth: depth,
                        learning_rate: lr,
                        gamma,
                        ..GbtParams::default()
                    };
                    c2.active = ActiveLearningConfig {
                        initial_pool: init,
                        batch_size: batch,
                        rounds,
                        strategy: fairhead::mitigate::AcquisitionStrategy::Uncertainty,
                    };
                    let mut results = Vec::new();
                    for set in [
                        BTreeSet::new(),
                        [Mitigation::Reweight].into_iter().collect::<BTreeSet<_>>(),
                        [Mitigation::ActiveLearning].into_iter().collect::<BTreeSet<_>>(),
                    ] {
                        let mut cc = c2.clone();
                        cc.mitigations = set;
                        let r = run_experiment(&e, &s, &cc).unwrap();
                        results.push((
                            r.aggregates["delta_race"].mean,
                            r.aggregates["mean_auprc"].mean,
                        ));
                    }
                    let (d0, a0) = results[0];
                    let (d1, a1) = results[1];
                    let (d2, a2) = results[2];
                    println!(
                        "seed{seed} g{gamma} t{trees} d{depth} al{init}+{batch}x{rounds}: base {d0:.3}/{a0:.3}  rw {d1:.3} ({:+.0}%) cost {:.3}  al {d2:.3} ({:+.0}%) cost {:.3}",
                        100.0 * (d1 - d0) / d0,
                        a0 - a1,
                        100.0 * (d2 - d0) / d0,
                        a0 - a2
                    );
                }
            }
        }
    }

    if which == "heads" {
        // which head kinds expose the injected degradation in bias_report?
        use fairhead::dataio::{Label, Split};
        use fairhead::detect::bias_report;
        use fairhead::heads::train_multihead;
        use fairhead::linalg::{fit_pca, pca_transform};

        let f = 0.85;
        let norm = 4.5f64;
        let mut spec = OracleSpec::biased(16, 0.25);
        let c = (f * norm * norm / 2.0_f64).sqrt();
        for w in &mut spec.weights {
            let rest: f64 = w
                .iter()
                .enumerate()
                .filter(|(j, _)| *j != 2 && *j != 3)
                .map(|(_, v)| v * v)
                .sum();
            let scale = ((1.0 - f) * norm * norm / rest).sqrt();
            for (j, v) in w.iter_mut().enumerate() {
                if j != 2 && j != 3 {
                    *v *= scale;
                }
            }
            w[2] = c;
            w[3] = -c;
        }
        for seed in [1u64, 7, 13] {
            let (e, s, _) = generate_synthetic(&spec, 20_000, seed).unwrap();
            let train = s.split_indices(Split::Train);
            let pca = fit_pca(&e.data().select_rows(&train), 0.95).unwrap();
            let reduced_train = pca_transform(&pca, &e.data().select_rows(&train)).unwrap();
            let labels: Vec<Vec<Label>> = (0..s.n_conditions())
                .map(|cid| train.iter().map(|&i| s.label(cid, i)).collect())
                .collect();
            let names = s.condition_names().to_vec();
            let w1 = vec![1.0; train.len()];
            for kind in [HeadKind::Knn, HeadKind::Mlp, HeadKind::LogisticRegression] {
                let mut params = HeadParams::default();
                params.mlp.epochs = 150;
                let t0 = std::time::Instant::now();
                let model = train_multihead(
                    kind,
                    &reduced_train,
                    &labels,
                    &names,
                    &w1,
                    &params,
                    42,
                )
                .unwrap()
                .with_pca(pca.clone());
                let rep = bias_report(&model, &e, &s).unwrap();
                println!(
                    "seed{seed} {kind:<22} auprc {:.3}  d_sex {:.3}  d_age {:.3}  d_race {:.3}  ({:.1}s)",
                    rep.mean_auprc,
                    rep.mean_delta_sex,
                    rep.mean_delta_age,
                    rep.mean_delta_race,
                    t0.elapsed().as_secs_f64()
                );
            }
        }
    }

    if which == "interp" {
        // leaf-memorization regime: flips in the degraded group survive into
        // leaf values
        let f = 0.85;
        let norm = 4.5f64;
        let mut spec = OracleSpec::biased(16, 0.25);
        let c = (f * norm * norm / 2.0_f64).sqrt();
        for w in &mut spec.weights {
            let rest: f64 = w
                .iter()
                .enumerate()
                .filter(|(j, _)| *j != 2 && *j != 3)
                .map(|(_, v)| v * v)
                .sum();
            let scale = ((1.0 - f) * norm * norm / rest).sqrt();
            for (j, v) in w.iter_mut().enumerate() {
                if j != 2 && j != 3 {
                    *v *= scale;
                }
            }
            w[2] = c;
            w[3] = -c;
        }
        for (trees, depth, lr, lam, mch) in [
            (80usize, 8usize, 0.3, 0.1, 0.1),
            (150, 10, 0.3, 0.1, 0.1),
            (80, 8, 0.3, 1.0, 1.0),
        ] {
            let mut c2 = cfg.clone();
            c2.params.gbt = GbtParams {
                n_estimators: trees,
                max_depth: depth,
                learning_rate: lr,
                lambda_l2: lam,
                min_child_hessian: mch,
                gamma: 0.0,
                seed: 0,
            };
            run(&format!("t{trees} d{depth} l{lam}"), &spec, n, 1, &c2);
        }
    }

    if which == "grid" {
        let f = 0.85;
        let norm = 4.5f64;
        for seed in [1u64, 2] {
            let mut spec = OracleSpec::biased(16, 0.25);
            let c = (f * norm * norm / 2.0_f64).sqrt();
            for w in &mut spec.weights {
                let rest: f64 = w
                    .iter()
                    .enumerate()
                    .filter(|(j, _)| *j != 2 && *j != 3)
                    .map(|(_, v)| v * v)
                    .sum();
                let scale = ((1.0 - f) * norm * norm / rest).sqrt();
                for (j, v) in w.iter_mut().enumerate() {
                    if j != 2 && j != 3 {
                        *v *= scale;
                    }
                }
                w[2] = c;
                w[3] = -c;
            }
            for (trees, depth) in [(8usize, 2usize), (12, 2), (16, 2), (12, 3), (20, 3)] {
                for lr in [0.3, 0.5] {
                    let mut c2 = cfg.clone();
                    c2.n_repeats = 1;
                    c2.base_seed = 42;
                    c2.params.gbt = GbtParams {
                        n_estimators: trees,
                        max_depth: depth,
                        learning_rate: lr,
                        ..GbtParams::default()
                    };
                    run(&format!("s{seed} t{trees} d{depth} lr{lr}"), &spec, n, seed, &c2);
                }
            }
        }
    }
}
