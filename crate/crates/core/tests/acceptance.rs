//! Acceptance suite: one test per gating criterion, each printing a
//! PASS line with the measured quantity (run with `--nocapture` to see them
//! on success).
//!
//! Run: cargo test -p gibbs-pruning --test acceptance -- --nocapture

mod common;

use std::fs;
use std::path::PathBuf;
use std::time::Instant;

use gibbs_pruning::experiment::config::parse_config;
use gibbs_pruning::experiment::maskio::import_mask;
use gibbs_pruning::experiment::runner::run_experiment;
use gibbs_pruning::hamiltonian::{
    build_linear_coeffs, build_quadratic, min_coupling_for_uniformity, LinearVariant,
};
use gibbs_pruning::mask::{
    converged_mask_unstructured, NeighbourhoodPartition, PruneFraction, PruneMask, WeightVector,
};
use gibbs_pruning::nn::data::synthetic_dataset;
use gibbs_pruning::nn::models::{small_resnet, toy_cnn};
use gibbs_pruning::rng::RandomSource;
use gibbs_pruning::sampler::{
    binary_convergence_probability, make_bipartite_colouring, sample_binary, sample_chromatic,
    sample_linear, truncate_couplings,
};
use gibbs_pruning::schedule::{beta_at, lr_at, BetaSchedule, LrSchedule};

fn sigmoid(t: f64) -> f64 {
    if t >= 0.0 {
        1.0 / (1.0 + (-t).exp())
    } else {
        let e = t.exp();
        e / (1.0 + e)
    }
}

fn temp_dir(tag: &str) -> PathBuf {
    let dir = std::env::temp_dir().join(format!("gibbs-accept-{}-{tag}", std::process::id()));
    let _ = fs::remove_dir_all(&dir);
    fs::create_dir_all(&dir).unwrap();
    dir
}

/// Criterion 1: total-variation distance between a million product-sampler
/// draws and the closed-form product distribution stays under 0.01 at
/// N = 10, linear-square coefficients, beta = 0.5.
#[test]
fn acceptance_01_sampler_exactness() {
    let started = Instant::now();
    let n = 10usize;
    let beta = 0.5;
    let draws = 1_000_000usize;

    let mut wrng = RandomSource::new(101);
    let values: Vec<f64> = (0..n).map(|_| wrng.next_normal()).collect();
    let w = WeightVector::new(values, "acc1").unwrap();
    let a = build_linear_coeffs(LinearVariant::Square, PruneFraction::new(0.5).unwrap(), &w);

    let rng = RandomSource::new(102);
    let mut counts = vec![0u32; 1 << n];
    for t in 0..draws {
        let mask = sample_linear(&a, beta, &rng.fork(t as u64));
        let mut state = 0usize;
        for (i, e) in mask.entries().iter().enumerate() {
            if *e == -1 {
                state |= 1 << i;
            }
        }
        counts[state] += 1;
    }

    let prune_probs: Vec<f64> = a.iter().map(|ai| sigmoid(2.0 * beta * ai)).collect();
    let mut tv = 0.0;
    for (state, count) in counts.iter().enumerate() {
        let mut prob = 1.0;
        for (i, q) in prune_probs.iter().enumerate() {
            prob *= if state >> i & 1 == 1 { *q } else { 1.0 - q };
        }
        tv += (prob - *count as f64 / draws as f64).abs();
    }
    tv *= 0.5;

    let elapsed = started.elapsed().as_secs_f64();
    assert!(tv < 0.01, "TV distance {tv}");
    assert!(elapsed < 60.0, "runtime {elapsed}s");
    println!("acceptance 01 sampler-exactness: PASS (TV {tv:.5}, {elapsed:.1}s)");
}

/// Criterion 2: the binary sampler hits the converged mask at the predicted
/// rate p_cvg + (1 - p_cvg)/2^N within 3 binomial sigma over a million
/// draws (N = 4, beta = ln 2, p_cvg = 0.5/8.5).
#[test]
fn acceptance_02_binary_convergence_rate() {
    let beta = std::f64::consts::LN_2;
    let p_cvg = binary_convergence_probability(4, beta);
    assert!((p_cvg - 0.5 / 8.5).abs() < 1e-12, "p_cvg {p_cvg}");

    let x_cvg = PruneMask::new(vec![-1, 1, 1, -1]).unwrap();
    let draws = 1_000_000usize;
    let expect = p_cvg + (1.0 - p_cvg) / 16.0;
    let rng = RandomSource::new(202);
    let mut hits = 0usize;
    for t in 0..draws {
        if sample_binary(&x_cvg, beta, &rng.fork(t as u64)) == x_cvg {
            hits += 1;
        }
    }
    let freq = hits as f64 / draws as f64;
    let sigma = (expect * (1.0 - expect) / draws as f64).sqrt();
    assert!(
        (freq - expect).abs() < 3.0 * sigma,
        "freq {freq} expect {expect} sigma {sigma}"
    );
    println!(
        "acceptance 02 binary-convergence-rate: PASS (freq {freq:.6} vs {expect:.6}, 3sigma {:.6})",
        3.0 * sigma
    );
}

/// Criterion 3: with c = 2*sum|b| + 0.1 the exhaustive argmin over all 256
/// states is neighbourhood-uniform for 100/100 random b (N = 8, two
/// neighbourhoods of 4); with c = 0 an adversarial b breaks uniformity.
#[test]
fn acceptance_03_uniformity_bound() {
    let groups: [[usize; 4]; 2] = [[0, 1, 2, 3], [4, 5, 6, 7]];
    let quad_energy = |b: &[f64], c: f64, state: usize| -> f64 {
        let x = |i: usize| if state >> i & 1 == 1 { -1.0 } else { 1.0 };
        let mut e = 0.0;
        for group in &groups {
            for (ai, &i) in group.iter().enumerate() {
                for &j in &group[ai + 1..] {
                    e -= c * x(i) * x(j);
                }
            }
        }
        for (i, bi) in b.iter().enumerate() {
            e += bi * x(i);
        }
        e
    };
    let argmin = |b: &[f64], c: f64| -> usize {
        (0..256usize)
            .min_by(|&s1, &s2| {
                quad_energy(b, c, s1)
                    .partial_cmp(&quad_energy(b, c, s2))
                    .unwrap()
            })
            .unwrap()
    };
    let uniform = |state: usize| -> bool {
        groups.iter().all(|group| {
            let first = state >> group[0] & 1;
            group.iter().all(|&i| state >> i & 1 == first)
        })
    };

    let mut rng = RandomSource::new(303);
    let mut ok = 0;
    for _ in 0..100 {
        let b: Vec<f64> = (0..8).map(|_| 2.0 * rng.next_f64() - 1.0).collect();
        let c = min_coupling_for_uniformity(&b) + 0.1;
        if uniform(argmin(&b, c)) {
            ok += 1;
        }
    }
    assert_eq!(ok, 100, "uniform argmin in {ok}/100 cases");

    // Negative control: no coupling, signs mixed within each neighbourhood.
    let adversarial = [1.0, -1.0, 1.0, -1.0, 1.0, -1.0, 1.0, -1.0];
    assert!(
        !uniform(argmin(&adversarial, 0.0)),
        "c = 0 must break uniformity"
    );
    println!("acceptance 03 uniformity-bound: PASS (100/100 uniform, negative control holds)");
}

/// Criterion 4: chromatic-sampler marginals over 1e5 chains of 50 sweeps
/// match exact enumeration of the truncated energy within 0.02 absolute
/// (N = 8 quadratic instance, beta = 1, c = 0.05).
#[test]
fn acceptance_04_chromatic_fidelity() {
    let started = Instant::now();
    let n = 8usize;
    let beta = 1.0;
    let c = 0.05;

    let mut wrng = RandomSource::new(404);
    let values: Vec<f64> = (0..n).map(|_| wrng.next_normal()).collect();
    let w = WeightVector::new(values, "acc4").unwrap();
    let part = NeighbourhoodPartition::new(vec![(0..4).collect(), (4..8).collect()], n).unwrap();
    let spec = build_quadratic(PruneFraction::new(0.5).unwrap(), &w, &part, c).unwrap();

    // Exact marginals of the truncated (bipartite) energy, enumerated
    // independently of the sampler.
    let colouring = make_bipartite_colouring(&part);
    let truncated = truncate_couplings(spec.coupling().unwrap(), &colouring);
    let spin = |state: usize, i: usize| if state >> i & 1 == 1 { -1.0 } else { 1.0 };
    let mut weights = vec![0.0f64; 1 << n];
    for (state, weight) in weights.iter_mut().enumerate() {
        let mut e = 0.0;
        for &(i, j) in truncated.edges() {
            e -= c * spin(state, i as usize) * spin(state, j as usize);
        }
        for (i, bi) in spec.coeffs().iter().enumerate() {
            e += bi * spin(state, i);
        }
        *weight = (-beta * e).exp();
    }
    let z: f64 = weights.iter().sum();
    let mut exact = [0.0f64; 8];
    for (state, weight) in weights.iter().enumerate() {
        for (i, m) in exact.iter_mut().enumerate() {
            if state >> i & 1 == 1 {
                *m += weight / z;
            }
        }
    }

    let chains = 100_000usize;
    let rng = RandomSource::new(405);
    let mut pruned = [0usize; 8];
    for t in 0..chains {
        let mask = sample_chromatic(&spec, beta, 50, &rng.fork(t as u64)).unwrap();
        for (i, count) in pruned.iter_mut().enumerate() {
            if mask.entries()[i] == -1 {
                *count += 1;
            }
        }
    }

    let mut worst = 0.0f64;
    for i in 0..n {
        let got = pruned[i] as f64 / chains as f64;
        worst = worst.max((got - exact[i]).abs());
    }
    let elapsed = started.elapsed().as_secs_f64();
    assert!(worst < 0.02, "worst marginal error {worst}");
    assert!(elapsed < 300.0, "runtime {elapsed}s");
    println!("acceptance 04 chromatic-fidelity: PASS (max marginal err {worst:.4}, {elapsed:.1}s)");
}

/// Criterion 5: at beta = ln(1000 N) / (2 delta) with delta = min |a_i|,
/// the product sampler returns the converged mask in at least 99.9% of 1e4
/// draws, matching the union bound 1 - N exp(-2 beta delta) = 0.999.
#[test]
fn acceptance_05_convergence_bound() {
    let n = 10usize;
    let mut wrng = RandomSource::new(505);
    let values: Vec<f64> = (0..n).map(|_| wrng.next_normal()).collect();
    let w = WeightVector::new(values, "acc5").unwrap();
    let p = PruneFraction::new(0.5).unwrap();
    let a = build_linear_coeffs(LinearVariant::Square, p, &w);
    let delta = a.iter().map(|v| v.abs()).fold(f64::INFINITY, f64::min);
    assert!(delta > 0.0);
    let beta = (1000.0 * n as f64).ln() / (2.0 * delta);
    let bound = 1.0 - n as f64 * (-2.0 * beta * delta).exp();
    assert!((bound - 0.999).abs() < 1e-12, "bound {bound}");

    let x_cvg = converged_mask_unstructured(p, &w);
    let draws = 10_000usize;
    let rng = RandomSource::new(506);
    let mut hits = 0usize;
    for t in 0..draws {
        if sample_linear(&a, beta, &rng.fork(t as u64)) == x_cvg {
            hits += 1;
        }
    }
    let freq = hits as f64 / draws as f64;
    assert!(freq >= 0.999, "observed convergence {freq}");
    println!("acceptance 05 convergence-bound: PASS (P[x = x_cvg] = {freq:.4} >= 0.999)");
}

/// Criterion 6: central finite differences agree with the analytic gradient
/// to relative error < 1e-4 on every layer type, masked and unmasked, and
/// masked indices get exactly zero gradient.
#[test]
fn acceptance_06_gradient_correctness() {
    let (train, _) = synthetic_dataset(606, 8).unwrap();
    let (batch, labels) = gibbs_pruning::nn::data::gather_batch(&train, &[0, 7, 13, 21], None);

    // toy_cnn: conv, batch norm, relu, max pool, global avg pool, dense.
    // small_resnet adds residual blocks and 1x1 projection convs.
    // toy_mlp covers flatten + dense stacks.
    let mut worst = 0.0f64;
    let mut checked = 0usize;
    for (name, mut net, stride) in [
        (
            "toy-cnn",
            toy_cnn([1, 8, 8], 4, &RandomSource::new(61)).unwrap(),
            13usize,
        ),
        (
            "small-resnet",
            small_resnet([1, 8, 8], 4, &RandomSource::new(62)).unwrap(),
            17,
        ),
        (
            "toy-mlp",
            gibbs_pruning::nn::models::toy_mlp([1, 8, 8], 4, &RandomSource::new(63)).unwrap(),
            37,
        ),
    ] {
        let report = common::grad_check(&mut net, &batch, &labels, stride);
        assert!(
            report.max_rel_error < 1e-4,
            "{name}: rel err {}",
            report.max_rel_error
        );
        worst = worst.max(report.max_rel_error);
        checked += report.checked;
    }

    // Masked run: install a mask on conv2/conv3 and re-check, verifying the
    // masked indices' gradients are exactly zero.
    let mut net = toy_cnn([1, 8, 8], 4, &RandomSource::new(64)).unwrap();
    let mut masked_indices = Vec::new();
    let mut offset = 0usize;
    net.visit_layers_mut(&mut |layer| {
        use gibbs_pruning::nn::layers::Layer;
        match layer {
            Layer::Conv(c) => {
                if c.name == "conv2" || c.name == "conv3" {
                    let n = c.weight_count();
                    let mut state = gibbs_pruning::nn::prune::PruneState::new(
                        gibbs_pruning::nn::prune::PruneConfig::unstructured(0.5).unwrap(),
                        n,
                        None,
                    )
                    .unwrap();
                    state.set_converged(&c.weights.clone(), &c.name).unwrap();
                    for (i, e) in state.mask.entries().iter().enumerate() {
                        if *e == -1 {
                            masked_indices.push(offset + i);
                        }
                    }
                    c.prune = Some(state);
                }
                offset += c.weight_count() + c.bias.len();
            }
            Layer::Dense(d) => offset += d.weight_count() + d.bias.len(),
            Layer::BatchNorm(b) => offset += 2 * b.channels,
            _ => {}
        }
    });
    let report = common::grad_check(&mut net, &batch, &labels, 11);
    assert!(
        report.max_rel_error < 1e-4,
        "masked toy-cnn: rel err {}",
        report.max_rel_error
    );
    worst = worst.max(report.max_rel_error);
    checked += report.checked;

    let (_, cache) = gibbs_pruning::nn::network::forward(&net, &batch, true).unwrap();
    let grads = gibbs_pruning::nn::network::backward(&net, &cache, &labels).unwrap();
    let flat = common::flatten_grads(&net, &grads);
    for &i in &masked_indices {
        assert_eq!(flat[i], 0.0, "masked index {i} must have zero gradient");
    }

    println!(
        "acceptance 06 gradient-correctness: PASS (max rel err {worst:.2e} over {checked} params, {} masked indices exactly zero)",
        masked_indices.len()
    );
}

fn uniform_groups(mask: &PruneMask, group_size: usize) -> bool {
    mask.entries()
        .chunks(group_size)
        .all(|g| g.iter().all(|e| *e == g[0]))
}

/// Criterion 7: end-to-end desk-scale comparison at 90% unstructured
/// pruning over 5 seeds; mean Gibbs accuracy must meet or beat the
/// random-mask baseline and final fractions must hit 0.9 within mask
/// granularity, all inside 15 CPU minutes.
#[test]
fn acceptance_07_end_to_end_gibbs_vs_random_mask() {
    let started = Instant::now();
    let dir = temp_dir("e2e");
    let base = format!(
        "model=toy-cnn\ndataset=synthetic:150\nepochs=40\nanneal_epochs=28\nbatch_size=32\n\
         p=0.9\nhamiltonian=linear-square\noutput_dir={}\n",
        dir.display()
    );

    let mut gibbs_accs = Vec::new();
    let mut random_accs = Vec::new();
    for seed in 0..5u64 {
        let gibbs_cfg = parse_config(&format!("{base}seed={seed}\n")).unwrap();
        let artifacts = run_experiment(&gibbs_cfg).unwrap();
        // Final pruned fraction within one mask slot of the target.
        let masks = import_mask(&artifacts.mask_file).unwrap();
        assert_eq!(masks.len(), 2);
        for (name, mask) in &masks {
            let n = mask.len() as f64;
            let fraction = gibbs_pruning::mask::pruned_fraction(mask);
            assert!(
                (fraction - 0.9).abs() <= 1.0 / n,
                "seed {seed} layer {name}: fraction {fraction}"
            );
        }
        gibbs_accs.push(artifacts.final_accuracy);

        let random_cfg =
            parse_config(&format!("{base}seed={seed}\nbaseline=random-mask\n")).unwrap();
        random_accs.push(run_experiment(&random_cfg).unwrap().final_accuracy);
    }

    let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
    let gibbs_mean = mean(&gibbs_accs);
    let random_mean = mean(&random_accs);
    let elapsed = started.elapsed().as_secs_f64();
    assert!(
        gibbs_mean >= random_mean,
        "gibbs mean {gibbs_mean} vs random-mask mean {random_mean} ({gibbs_accs:?} vs {random_accs:?})"
    );
    // The comparison must not be carried by broken runs: every pruned net
    // still has to solve the task.
    assert!(
        gibbs_accs.iter().all(|a| *a >= 0.95),
        "every gibbs run stays accurate at 90% sparsity: {gibbs_accs:?}"
    );
    assert!(elapsed < 900.0, "runtime {elapsed}s");
    fs::remove_dir_all(&dir).unwrap();
    println!(
        "acceptance 07 end-to-end: PASS (gibbs {gibbs_mean:.4} >= random {random_mean:.4} at p=0.9, {elapsed:.0}s)"
    );
}

/// Criterion 8: kernel- and filter-structured runs produce exactly
/// neighbourhood-uniform final masks at the target fraction (within one
/// neighbourhood), and the quadratic energy beats the structured-linear one
/// on at least 3 of 5 seeds.
#[test]
fn acceptance_08_structured_sanity() {
    let started = Instant::now();
    let dir = temp_dir("structured");
    let base = format!(
        "model=toy-cnn\ndataset=synthetic:150\nepochs=40\nanneal_epochs=28\nbatch_size=32\n\
         p=0.75\nc=0.01\noutput_dir={}\n",
        dir.display()
    );

    // Filter-wise run exercises the chromatic MCMC path end to end.
    let filter_cfg = parse_config(&format!("{base}seed=0\nstructure=filter\n")).unwrap();
    let artifacts = run_experiment(&filter_cfg).unwrap();
    for (name, mask) in import_mask(&artifacts.mask_file).unwrap() {
        let group = match name.as_str() {
            "conv2" => 8 * 9,
            "conv3" => 16 * 9,
            other => panic!("unexpected layer {other}"),
        };
        assert!(
            uniform_groups(&mask, group),
            "filter masks uniform in {name}"
        );
        let pruned = mask.entries().iter().filter(|e| **e == -1).count() as f64;
        let target = 0.75 * mask.len() as f64;
        assert!(
            (pruned - target).abs() <= group as f64,
            "{name}: pruned {pruned} vs target {target}"
        );
    }

    // Kernel-wise: quadratic vs structured-linear across 5 seeds.
    let mut quad_wins = 0usize;
    for seed in 0..5u64 {
        let quad_cfg = parse_config(&format!(
            "{base}seed={seed}\nstructure=kernel\nhamiltonian=structured-quadratic\n"
        ))
        .unwrap();
        let quad = run_experiment(&quad_cfg).unwrap();
        for (name, mask) in import_mask(&quad.mask_file).unwrap() {
            assert!(uniform_groups(&mask, 9), "kernel masks uniform in {name}");
            let pruned = mask.entries().iter().filter(|e| **e == -1).count() as f64;
            assert!((pruned - 0.75 * mask.len() as f64).abs() <= 9.0);
        }

        let lin_cfg = parse_config(&format!(
            "{base}seed={seed}\nstructure=kernel\nhamiltonian=structured-linear\n"
        ))
        .unwrap();
        let lin = run_experiment(&lin_cfg).unwrap();
        if quad.final_accuracy >= lin.final_accuracy {
            quad_wins += 1;
        }
    }
    let elapsed = started.elapsed().as_secs_f64();
    assert!(quad_wins >= 3, "quadratic >= linear on {quad_wins}/5 seeds");
    fs::remove_dir_all(&dir).unwrap();
    println!(
        "acceptance 08 structured-sanity: PASS (masks uniform; quadratic >= linear on {quad_wins}/5 seeds, {elapsed:.0}s)"
    );
}

/// Criterion 9: schedules reproduce their pinned values exactly and the
/// stretching identity holds over 1000 random (s, n) pairs.
#[test]
fn acceptance_09_schedule_identities() {
    let beta = BetaSchedule::standard();
    assert_eq!(beta_at(&beta, 0), 0.7);
    assert!((beta_at(&beta, 128) - 1e4).abs() < 1e-9);
    assert!((beta_at(&beta, 64) - (0.7f64 * 1e4).sqrt()).abs() < 1e-9);

    let lr = LrSchedule::standard();
    assert_eq!(lr_at(&lr, 0), 1e-3);
    assert!((lr_at(&lr, 80) - 1e-4).abs() < 1e-18);
    assert!((lr_at(&lr, 160) - 1e-6).abs() < 1e-20);

    let rng = RandomSource::new(909);
    for t in 0..1000u64 {
        let s = 1 + (rng.at(2 * t) % 32) as usize;
        let n = (rng.at(2 * t + 1) % 8192) as usize;
        let sb = beta.stretched(s).unwrap();
        assert_eq!(beta_at(&sb, n), beta_at(&beta, n / s), "beta s={s} n={n}");
        let sl = lr.stretched(s).unwrap();
        assert_eq!(lr_at(&sl, n), lr_at(&lr, n / s), "lr s={s} n={n}");
    }
    println!(
        "acceptance 09 schedule-identities: PASS (pinned values exact; 1000 stretch identities)"
    );
}

/// Criterion 10: identical config and seed give byte-identical mask files
/// and checkpoints, and byte-identical CSVs up to the wall_time_s column,
/// at different thread counts.
#[test]
fn acceptance_10_determinism() {
    let dir_a = temp_dir("det-a");
    let dir_b = temp_dir("det-b");
    let config_for = |dir: &PathBuf| {
        parse_config(&format!(
            "model=toy-cnn\ndataset=synthetic:20\nepochs=3\nanneal_epochs=3\nbatch_size=16\n\
             seed=9\np=0.75\nstructure=filter\naugment=on\noutput_dir={}\n",
            dir.display()
        ))
        .unwrap()
    };

    let run_in_pool = |threads: usize, dir: &PathBuf| {
        let cfg = config_for(dir);
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build()
            .unwrap();
        pool.install(|| run_experiment(&cfg).unwrap())
    };

    let a = run_in_pool(1, &dir_a);
    let b = run_in_pool(4, &dir_b);

    let strip_wall_time = |text: &str| -> String {
        text.lines()
            .map(|line| line.rfind(',').map_or(line, |at| &line[..at]).to_string())
            .collect::<Vec<_>>()
            .join("\n")
    };
    let csv_a = fs::read_to_string(&a.report_csv).unwrap();
    let csv_b = fs::read_to_string(&b.report_csv).unwrap();
    assert_eq!(
        strip_wall_time(&csv_a),
        strip_wall_time(&csv_b),
        "CSV rows must match"
    );
    assert_eq!(
        fs::read(&a.mask_file).unwrap(),
        fs::read(&b.mask_file).unwrap(),
        "mask files must be byte-identical"
    );
    assert_eq!(
        fs::read(&a.checkpoint).unwrap(),
        fs::read(&b.checkpoint).unwrap(),
        "checkpoints must be byte-identical"
    );
    fs::remove_dir_all(&dir_a).unwrap();
    fs::remove_dir_all(&dir_b).unwrap();
    println!("acceptance 10 determinism: PASS (1-thread and 4-thread runs byte-identical)");
}
