//! End-to-end acceptance checks. Every test prints one `ACCEPTANCE n:
//! PASS/FAIL` line with its measured evidence before asserting, so a full
//! run reads as a checklist. Training-heavy checks share a lock to keep
//! their wall-clock limits honest on one core.

use std::path::Path;
use std::sync::Mutex;
use std::time::{Duration, Instant};

use dofrank_core::data::{load_dataset, DatasetName, Split};
use dofrank_core::dof::{estimate_dof, estimate_dof_full, projection_dim, run_dof_schedule, EstimatorConfig};
use dofrank_core::experiment::{
    emit_tables, run_experiment, ExperimentConfig, ATTACK_NAME, CORRELATION_NAME, METRICS_NAME,
    SUMMARY_NAME,
};
use dofrank_core::jrank::{estimate_rank, probe_gradients, run_rank_schedule, ProbeSet};
use dofrank_core::metrics::{
    compute_cv, compute_mcr, format_cv, read_metrics_csv, summarize, write_summary_json,
    MetricKind, MetricSeries,
};
use dofrank_core::mia::{build_attack_dataset, train_attack, AttackConfig, AttackResult, CorrelationReport};
use dofrank_core::model::{Model, ModelKind};
use dofrank_core::rng::SeededRng;
use dofrank_core::synth::make_synthetic_lowrank;
use dofrank_core::tensor::{matmul, Tensor};

static HEAVY: Mutex<()> = Mutex::new(());

fn heavy_lock() -> std::sync::MutexGuard<'static, ()> {
    HEAVY.lock().unwrap_or_else(|e| e.into_inner())
}

fn report(n: usize, pass: bool, detail: &str) {
    println!("ACCEPTANCE {}: {} - {}", n, if pass { "PASS" } else { "FAIL" }, detail);
    assert!(pass, "acceptance {} failed: {}", n, detail);
}

fn within(elapsed: Duration, budget_secs: u64) -> bool {
    elapsed <= Duration::from_secs(budget_secs)
}

/// Criterion 1: on seeded low-rank data the projected estimate must agree
/// with the exact full-spectrum count in at least 45 of 50 cases and never
/// be off by more than 1.
#[test]
fn acceptance_1_dof_projection_matches_full_spectrum() {
    let start = Instant::now();
    let (ambient, m, tau) = (200, 256, 0.95);
    let r_l = projection_dim(ambient, 0.1).unwrap();

    let mut matches = 0usize;
    let mut max_dev = 0usize;
    for i in 0..50u64 {
        let rank = 2 + (i % 7) as usize;
        let h = make_synthetic_lowrank(ambient, m, rank, 0.0, 9000 + i).unwrap();
        let (full, _, full_degenerate) = estimate_dof_full(&h, tau).unwrap();
        let projection =
            SeededRng::new(9000 + i, "acc1-proj", 0).sample_gaussian(ambient, r_l);
        let (proj, _, proj_degenerate) = estimate_dof(&h, tau, &projection).unwrap();
        assert!(!full_degenerate && !proj_degenerate);
        if proj == full {
            matches += 1;
        }
        max_dev = max_dev.max(full.abs_diff(proj));
    }

    let elapsed = start.elapsed();
    let pass = matches >= 45 && max_dev <= 1 && within(elapsed, 30);
    report(
        1,
        pass,
        &format!(
            "projected matched full-spectrum in {}/50 seeds (need 45), max deviation {} (need <= 1), {:.1}s",
            matches,
            max_dev,
            elapsed.as_secs_f64()
        ),
    );
}

/// Criterion 2: probing a linear map of known rank must recover that rank
/// exactly in at least 48 of 50 cases.
#[test]
fn acceptance_2_rank_probes_recover_linear_map_rank() {
    let start = Instant::now();
    let (d, k_l, k, tau) = (30, 20, 10, 0.95);

    let mut exact = 0usize;
    for i in 0..50u64 {
        let r = 1 + (i % 6) as usize;
        let mut rng = SeededRng::new(7000 + i, "acc2-map", 0);
        let p = rng.sample_gaussian(d, r);
        let q = rng.sample_gaussian(r, k_l);
        let w = matmul(&p, &q).unwrap();
        let x = rng.sample_gaussian(1, d);

        let mut g = dofrank_core::autodiff::Graph::new();
        let xi = g.leaf(x);
        let wi = g.leaf(w);
        let h = g.matmul_node(xi, wi).unwrap();
        let probes = ProbeSet::draw(k_l, k, 7000 + i, "acc2", 0).unwrap();
        let u = probe_gradients(&g, xi, h, &probes).unwrap();
        let (rank, _, degenerate) = estimate_rank(&u, tau).unwrap();
        assert!(!degenerate);
        if rank == r {
            exact += 1;
        }
    }

    let elapsed = start.elapsed();
    let pass = exact >= 48 && within(elapsed, 30);
    report(
        2,
        pass,
        &format!(
            "exact rank recovered in {}/50 maps (need 48), {:.1}s",
            exact,
            elapsed.as_secs_f64()
        ),
    );
}

/// Central finite differences of `f` at `leaves`, one perturbed element at
/// a time, compared against the taped gradients. Returns the worst relative
/// error across every element of every leaf.
fn fd_worst_rel_error(
    leaves: &[Tensor],
    wire: &dyn Fn(&mut dofrank_core::autodiff::Graph, &[dofrank_core::autodiff::VarId]) -> dofrank_core::autodiff::VarId,
) -> f64 {
    use dofrank_core::autodiff::Graph;
    let eval = |ls: &[Tensor]| -> f64 {
        let mut g = Graph::new();
        let ids: Vec<_> = ls.iter().map(|t| g.leaf(t.clone())).collect();
        let out = wire(&mut g, &ids);
        g.value(out).data[0]
    };

    let mut g = Graph::new();
    let ids: Vec<_> = leaves.iter().map(|t| g.leaf(t.clone())).collect();
    let out = wire(&mut g, &ids);
    let grads = g.backward(out).unwrap();

    let step = 1e-5;
    let mut worst = 0.0f64;
    for (li, leaf) in leaves.iter().enumerate() {
        let ad = grads.get(ids[li]).unwrap();
        for e in 0..leaf.len() {
            let mut hi = leaves.to_vec();
            hi[li].data[e] += step;
            let mut lo = leaves.to_vec();
            lo[li].data[e] -= step;
            let fd = (eval(&hi) - eval(&lo)) / (2.0 * step);
            let a = ad.data[e];
            let rel = (a - fd).abs() / a.abs().max(fd.abs()).max(1e-6);
            worst = worst.max(rel);
        }
    }
    worst
}

/// Push Gaussian values away from a kink so finite differences stay valid.
fn clear_of(t: &mut Tensor, margin: f64) {
    for v in t.data.iter_mut() {
        if v.abs() < margin {
            *v += if *v >= 0.0 { margin } else { -margin };
        }
    }
}

/// Criterion 3: every layer type agrees with central finite differences at
/// relative tolerance 1e-4 on 20 random instances each.
#[test]
fn acceptance_3_gradients_match_finite_differences() {
    let tol = 1e-4;
    let mut failures: Vec<String> = Vec::new();
    let mut summary: Vec<String> = Vec::new();

    let mut check = |name: &str, worst_over_instances: f64| {
        summary.push(format!("{} {:.2e}", name, worst_over_instances));
        if worst_over_instances > tol {
            failures.push(name.to_string());
        }
    };

    let mut worst = 0.0f64;
    for i in 0..20u64 {
        let mut rng = SeededRng::new(100 + i, "acc3-conv", 0);
        let x = rng.sample_gaussian(2, 2 * 6 * 6).reshape(&[2, 2, 6, 6]).unwrap();
        let w = rng.sample_gaussian(3, 2 * 9).reshape(&[3, 2, 3, 3]).unwrap();
        let b = rng.sample_gaussian(1, 3).reshape(&[3]).unwrap();
        let pad = (i % 2) as usize;
        let mix = rng.sample_gaussian(2, 3 * (4 + 2 * pad) * (4 + 2 * pad));
        let mix_shape = vec![2, 3, 4 + 2 * pad, 4 + 2 * pad];
        let mix = mix.reshape(&mix_shape).unwrap();
        worst = worst.max(fd_worst_rel_error(&[x, w, b], &|g, ids| {
            let conv = g.conv2d(ids[0], ids[1], ids[2], pad).unwrap();
            let m = g.leaf(mix.clone());
            let prod = g.mul_elem(conv, m).unwrap();
            g.sum_all(prod)
        }));
    }
    check("conv", worst);

    let mut worst = 0.0f64;
    for i in 0..20u64 {
        let mut rng = SeededRng::new(200 + i, "acc3-dense", 0);
        let x = rng.sample_gaussian(3, 5);
        let w = rng.sample_gaussian(5, 4);
        let b = rng.sample_gaussian(1, 4).reshape(&[4]).unwrap();
        let mix = rng.sample_gaussian(3, 4);
        worst = worst.max(fd_worst_rel_error(&[x, w, b], &|g, ids| {
            let lin = g.matmul_node(ids[0], ids[1]).unwrap();
            let out = g.bias_add_row(lin, ids[2]).unwrap();
            let m = g.leaf(mix.clone());
            let prod = g.mul_elem(out, m).unwrap();
            g.sum_all(prod)
        }));
    }
    check("dense", worst);

    let mut worst = 0.0f64;
    for i in 0..20u64 {
        let mut rng = SeededRng::new(300 + i, "acc3-relu", 0);
        let mut x = rng.sample_gaussian(4, 7);
        clear_of(&mut x, 1e-3);
        let mix = rng.sample_gaussian(4, 7);
        worst = worst.max(fd_worst_rel_error(&[x], &|g, ids| {
            let act = g.relu(ids[0]);
            let m = g.leaf(mix.clone());
            let prod = g.mul_elem(act, m).unwrap();
            g.sum_all(prod)
        }));
    }
    check("relu", worst);

    let mut worst = 0.0f64;
    for i in 0..20u64 {
        let mut rng = SeededRng::new(400 + i, "acc3-pool", 0);
        // Widen the spread so window maxima stay separated by more than
        // the finite-difference step.
        let x = rng.sample_gaussian(2, 3 * 6 * 6).scale(3.0).reshape(&[2, 3, 6, 6]).unwrap();
        let mix = rng.sample_gaussian(2, 3 * 3 * 3).reshape(&[2, 3, 3, 3]).unwrap();
        worst = worst.max(fd_worst_rel_error(&[x], &|g, ids| {
            let pooled = g.maxpool2(ids[0]).unwrap();
            let m = g.leaf(mix.clone());
            let prod = g.mul_elem(pooled, m).unwrap();
            g.sum_all(prod)
        }));
    }
    check("maxpool", worst);

    let mut worst = 0.0f64;
    for i in 0..20u64 {
        let mut rng = SeededRng::new(500 + i, "acc3-sce", 0);
        let logits = rng.sample_gaussian(5, 7);
        let labels: Vec<usize> = (0..5).map(|s| ((i as usize + s) * 3) % 7).collect();
        worst = worst.max(fd_worst_rel_error(&[logits], &|g, ids| {
            g.softmax_cross_entropy(ids[0], &labels).unwrap()
        }));
    }
    check("softmax-ce", worst);

    let mut worst = 0.0f64;
    for i in 0..20u64 {
        let mut rng = SeededRng::new(600 + i, "acc3-bce", 0);
        let logits = rng.sample_gaussian(6, 1);
        let targets: Vec<f64> = (0..6).map(|s| ((i as usize + s) % 2) as f64).collect();
        worst = worst.max(fd_worst_rel_error(&[logits], &|g, ids| {
            g.sigmoid_bce(ids[0], &targets).unwrap()
        }));
    }
    check("sigmoid-bce", worst);

    let pass = failures.is_empty();
    report(
        3,
        pass,
        &format!(
            "worst relative error per layer type (tolerance 1e-4): {}{}",
            summary.join(", "),
            if pass { String::new() } else { format!("; over tolerance: {}", failures.join(", ")) }
        ),
    );
}

/// First index is epoch 1; the dip-rise shape asks the minimum to appear
/// strictly after epoch 1 and the series to end above it.
fn dips_then_rises(values: &[i64]) -> bool {
    let min = *values.iter().min().unwrap();
    values[0] > min && *values.last().unwrap() > min
}

fn series_values(all: &[MetricSeries], layer: &str, kind: MetricKind) -> Vec<i64> {
    all.iter()
        .find(|s| s.layer == layer && s.kind == kind)
        .map(|s| s.values.clone())
        .unwrap_or_default()
}

const TREND_CONFIG: &str = r#"
model = "cnn_mnist"
epochs = 20
batch_size = 128
probe_batch_size = 128
seed = __SEED__
projection_factor = 0.04
limit_train = 8000
limit_test = 1000
[dataset]
name = "mnist"
dir = "__DATA__"
synthesize = true
synth_train = 8000
synth_test = 1000
[optimizer]
kind = "adam"
learning_rate = 0.004
"#;

fn seeded_config(toml_template: &str, data_dir: &Path, seed: u64) -> ExperimentConfig {
    let text = toml_template
        .replace("__DATA__", data_dir.to_str().unwrap())
        .replace("__SEED__", &seed.to_string());
    ExperimentConfig::from_toml_str(&text).unwrap()
}

/// Criterion 4: on a small MNIST subset both per-epoch series for the conv
/// layer dip below their first-epoch value and recover, in at least 4 of 5
/// seeds.
#[test]
fn acceptance_4_dof_and_rank_dip_then_rise_during_training() {
    let _guard = heavy_lock();
    let start = Instant::now();
    let root = tempfile::tempdir().unwrap();

    let mut ok_seeds = 0usize;
    let mut shapes: Vec<String> = Vec::new();
    for seed in 0..5u64 {
        let data = root.path().join(format!("data{}", seed));
        let out = root.path().join(format!("out{}", seed));
        let cfg = seeded_config(TREND_CONFIG, &data, seed);
        let manifest = run_experiment(&cfg, &out).unwrap();
        assert!(manifest.complete);
        let series = read_metrics_csv(&out.join(METRICS_NAME)).unwrap();
        let dof = series_values(&series, "Conv2d_1", MetricKind::Dof);
        let rank = series_values(&series, "Conv2d_1", MetricKind::Rank);
        assert_eq!(dof.len(), 20);
        assert_eq!(rank.len(), 20);
        let ok = dips_then_rises(&dof) && dips_then_rises(&rank);
        if ok {
            ok_seeds += 1;
        }
        shapes.push(format!(
            "seed {}: dof {}..{}..{} rank {}..{}..{} {}",
            seed,
            dof[0],
            dof.iter().min().unwrap(),
            dof[19],
            rank[0],
            rank.iter().min().unwrap(),
            rank[19],
            if ok { "ok" } else { "flat" }
        ));
    }

    let elapsed = start.elapsed();
    let pass = ok_seeds >= 4 && within(elapsed, 900);
    report(
        4,
        pass,
        &format!(
            "dip-then-rise on both series in {}/5 seeds (need 4), {:.0}s of 900; {}",
            ok_seeds,
            elapsed.as_secs_f64(),
            shapes.join("; ")
        ),
    );
}

const DEPTH_CONFIG: &str = r#"
model = "lenet"
epochs = 30
batch_size = 128
probe_batch_size = 128
seed = __SEED__
projection_factor = 0.1
limit_train = 10000
limit_test = 1000
estimators = ["dof"]
[dataset]
name = "cifar10"
dir = "__DATA__"
synthesize = true
synth_train = 10000
synth_test = 1000
[optimizer]
kind = "adam"
learning_rate = 0.002
"#;

/// Criterion 5: deeper conv layers end with a larger memorization ratio on
/// a small CIFAR-10 subset, in at least 3 of 5 seeds.
#[test]
fn acceptance_5_mcr_orders_layers_by_depth() {
    let _guard = heavy_lock();
    let start = Instant::now();
    let root = tempfile::tempdir().unwrap();

    let mut ordered_seeds = 0usize;
    let mut finals: Vec<String> = Vec::new();
    for seed in 0..5u64 {
        let data = root.path().join(format!("data{}", seed));
        let out = root.path().join(format!("out{}", seed));
        let cfg = seeded_config(DEPTH_CONFIG, &data, seed);
        let manifest = run_experiment(&cfg, &out).unwrap();
        assert!(manifest.complete);
        let series = read_metrics_csv(&out.join(METRICS_NAME)).unwrap();
        let final_mcr = |layer: &str| -> Option<f64> {
            let values = series_values(&series, layer, MetricKind::Dof);
            compute_mcr(&values).unwrap().map(|m| *m.last().unwrap())
        };
        let (c1, c2, c3) = (
            final_mcr("Conv2d_1"),
            final_mcr("Conv2d_2"),
            final_mcr("Conv2d_3"),
        );
        let ordered = match (c1, c2, c3) {
            (Some(a), Some(b), Some(c)) => c >= b && b >= a,
            _ => false,
        };
        if ordered {
            ordered_seeds += 1;
        }
        finals.push(format!(
            "seed {}: {:?} {:?} {:?} {}",
            seed,
            c1,
            c2,
            c3,
            if ordered { "ordered" } else { "unordered" }
        ));
    }

    let elapsed = start.elapsed();
    let pass = ordered_seeds >= 3 && within(elapsed, 2700);
    report(
        5,
        pass,
        &format!(
            "deepest-first ordering in {}/5 seeds (need 3), {:.0}s of 2700; {}",
            ordered_seeds,
            elapsed.as_secs_f64(),
            finals.join("; ")
        ),
    );
}

/// Criterion 6: documented table arithmetic, both through the metric
/// functions and through the rendered table text.
#[test]
fn acceptance_6_metric_formulas_match_documented_cells() {
    // Peak compression 24 at the mid epoch, receding by 9 by the end.
    let series = MetricSeries {
        layer: "Conv2d_1".to_string(),
        kind: MetricKind::Dof,
        values: vec![100, 76, 85],
    };
    let cv = compute_cv(&series.values).unwrap();
    let row = summarize(&series, 312, None, 3).unwrap();
    let cell = format_cv(row.max_cv, row.max_cv_minus_final);
    let mcr = compute_mcr(&[100, 50, 77]).unwrap();

    let dir = tempfile::tempdir().unwrap();
    let cfg_toml = r#"
model = "cnn_mnist"
epochs = 3
batch_size = 16
probe_batch_size = 8
seed = 1
[dataset]
name = "mnist"
dir = "unused"
synthesize = true
[optimizer]
kind = "adam"
learning_rate = 0.001
"#;
    let cfg = ExperimentConfig::from_toml_str(cfg_toml).unwrap();
    write_summary_json(&dir.path().join(SUMMARY_NAME), &[row.clone()]).unwrap();
    let manifest = dofrank_core::experiment::RunManifest {
        config: cfg,
        num_classes: 10,
        parameter_total: 312,
        layers: vec!["Conv2d_1".to_string()],
        epochs: Vec::new(),
        artifacts: dofrank_core::experiment::Artifacts {
            metrics_csv: None,
            summary_json: Some(SUMMARY_NAME.to_string()),
            checkpoint: None,
            attack_results_json: None,
            correlation_json: None,
        },
        timing: Default::default(),
        complete: true,
    };
    let tables = emit_tables(dir.path(), &manifest).unwrap();

    let pass = cv == vec![0, 24, 15]
        && cell == "24 (9)"
        && tables.contains("24 (9)")
        && mcr == Some(vec![100.0, 0.0, 54.0]);
    report(
        6,
        pass,
        &format!(
            "cv cell rendered {:?} (table contains it: {}), mcr [100,50,77] -> {:?}",
            cell,
            tables.contains("24 (9)"),
            mcr
        ),
    );
}

fn config_with_dirs(toml_template: &str, data_dir: &Path) -> ExperimentConfig {
    let text = toml_template.replace("__DATA__", data_dir.to_str().unwrap());
    ExperimentConfig::from_toml_str(&text).unwrap()
}

const OVERFIT_CONFIG: &str = r#"
model = "lenet"
epochs = 40
batch_size = 128
probe_batch_size = 128
seed = 7
projection_factor = 0.1
limit_train = 2000
limit_test = 1000
estimators = ["dof"]
[dataset]
name = "cifar10"
dir = "__DATA__"
synthesize = true
synth_train = 2000
synth_test = 1000
[optimizer]
kind = "adam"
learning_rate = 0.003
[mia]
n_per_class = 500
attack_epochs = 40
attack_batch_size = 64
attack_learning_rate = 0.0001
attack_hidden = 64
"#;

/// Criterion 7: membership attacks read chance on an untrained model, beat
/// 55% on the deepest layer of an overfit one, and their per-layer accuracy
/// rank-correlates positively with the final memorization ratio.
#[test]
fn acceptance_7_attack_sanity_and_metric_correlation() {
    let _guard = heavy_lock();
    let start = Instant::now();
    let root = tempfile::tempdir().unwrap();

    let data = root.path().join("data");
    let out = root.path().join("out");
    let cfg = config_with_dirs(OVERFIT_CONFIG, &data);
    let manifest = run_experiment(&cfg, &out).unwrap();
    assert!(manifest.complete);

    let attacks: Vec<AttackResult> = serde_json::from_str(
        &std::fs::read_to_string(out.join(ATTACK_NAME)).unwrap(),
    )
    .unwrap();
    let deepest = attacks
        .iter()
        .find(|a| a.layer == "Conv2d_3")
        .expect("deepest layer attacked");
    let correlation: CorrelationReport = serde_json::from_str(
        &std::fs::read_to_string(out.join(CORRELATION_NAME)).unwrap(),
    )
    .unwrap();

    // Untrained targets share the overfit run's data; only the model and
    // the attack seed vary.
    let train = load_dataset(DatasetName::Cifar10, &data, Split::Train).unwrap();
    let test = load_dataset(DatasetName::Cifar10, &data, Split::Test).unwrap();
    let attack_cfg = AttackConfig {
        epochs: 40,
        batch_size: 64,
        learning_rate: 1e-4,
        hidden: 64,
    };
    let mut null_accs: Vec<f64> = Vec::new();
    for seed in 0..10u64 {
        let blank = Model::build(ModelKind::Lenet, 10, 1000 + seed).unwrap();
        let ds = build_attack_dataset(&blank, &train, &test, "Conv2d_3", 500, seed).unwrap();
        let result = train_attack(&ds, &attack_cfg, seed).unwrap();
        null_accs.push(result.test_accuracy);
    }
    let null_mean = null_accs.iter().sum::<f64>() / null_accs.len() as f64;

    let elapsed = start.elapsed();
    let pass = deepest.test_accuracy > 0.55
        && correlation.rho > 0.0
        && (0.45..=0.55).contains(&null_mean)
        && within(elapsed, 1800);
    report(
        7,
        pass,
        &format!(
            "overfit deepest-layer attack {:.1}% (need > 55), rho {:.2} over {} layers (need > 0), untrained mean {:.1}% across 10 seeds (need 45..55, spread {:.1}..{:.1}), {:.0}s of 1800",
            100.0 * deepest.test_accuracy,
            correlation.rho,
            correlation.n,
            100.0 * null_mean,
            100.0 * null_accs.iter().cloned().fold(f64::INFINITY, f64::min),
            100.0 * null_accs.iter().cloned().fold(f64::NEG_INFINITY, f64::max),
            elapsed.as_secs_f64()
        ),
    );
}

const DETERMINISM_CONFIG: &str = r#"
model = "cnn_mnist"
epochs = 3
batch_size = 128
probe_batch_size = 64
seed = 21
projection_factor = 0.05
limit_train = 2000
limit_test = 500
[dataset]
name = "mnist"
dir = "__DATA__"
synthesize = true
synth_train = 2000
synth_test = 500
[optimizer]
kind = "adam"
learning_rate = 0.002
"#;

/// Criterion 8: identical config and seed reproduce metrics.csv byte for
/// byte, including independent dataset synthesis.
#[test]
fn acceptance_8_repeated_runs_are_byte_identical() {
    let _guard = heavy_lock();
    let start = Instant::now();
    let root = tempfile::tempdir().unwrap();

    let mut bytes: Vec<Vec<u8>> = Vec::new();
    for run in 0..2 {
        let data = root.path().join(format!("data{}", run));
        let out = root.path().join(format!("out{}", run));
        let cfg = config_with_dirs(DETERMINISM_CONFIG, &data);
        let manifest = run_experiment(&cfg, &out).unwrap();
        assert!(manifest.complete);
        bytes.push(std::fs::read(out.join(METRICS_NAME)).unwrap());
    }

    let elapsed = start.elapsed();
    let identical = bytes[0] == bytes[1];
    let pass = identical && within(elapsed, 120);
    report(
        8,
        pass,
        &format!(
            "two 3-epoch runs, metrics.csv byte-identical: {} ({} bytes), {:.1}s",
            identical,
            bytes[0].len(),
            elapsed.as_secs_f64()
        ),
    );
}

/// Criterion 9: a probe batch the layer maps to a constant must degrade to
/// dof = 0 and rank = 0 with degeneracy flags rather than crash.
#[test]
fn acceptance_9_constant_probe_batch_degenerates_cleanly() {
    // Zeroed parameters make every probe activation constant in the input,
    // so both estimators must flag degeneracy on every layer.
    let mut model = Model::build(ModelKind::Lenet, 10, 3).unwrap();
    for p in &mut model.params {
        p.value.data.fill(0.0);
    }
    let batch = Tensor::zeros(&[6, 3, 32, 32]);
    let mut g = dofrank_core::autodiff::Graph::new();
    let pass_t = model.forward(&mut g, &batch).unwrap();
    let layers: Vec<String> = model.probe_points().iter().map(|p| p.name.clone()).collect();
    let cfg = EstimatorConfig::new(11);

    let dofs = run_dof_schedule(&g, &pass_t, &model, &layers, 1, &cfg).unwrap();
    let ranks = run_rank_schedule(&g, &pass_t, &model, &layers, 1, &cfg).unwrap();
    let all_dof_degenerate = dofs.iter().all(|d| d.dof == 0 && d.degenerate);
    let all_rank_degenerate = ranks.iter().all(|r| r.rank == 0 && r.degenerate);

    // A constant batch through a live model is the activation-side analogue:
    // identical samples centralize to zero, so dof degenerates even though
    // the Jacobian does not.
    let live = Model::build(ModelKind::CnnMnist, 10, 4).unwrap();
    let one = SeededRng::new(5, "acc9-img", 0).sample_gaussian(1, 28 * 28);
    let mut const_batch = Tensor::zeros(&[6, 1, 28, 28]);
    for s in 0..6 {
        const_batch.data[s * 784..(s + 1) * 784].copy_from_slice(&one.data);
    }
    let mut g2 = dofrank_core::autodiff::Graph::new();
    let pass2 = live.forward(&mut g2, &const_batch).unwrap();
    let live_layers: Vec<String> = live.probe_points().iter().map(|p| p.name.clone()).collect();
    let live_dofs = run_dof_schedule(&g2, &pass2, &live, &live_layers, 1, &cfg).unwrap();
    let live_dof_degenerate = live_dofs.iter().all(|d| d.dof == 0 && d.degenerate);

    let pass = all_dof_degenerate && all_rank_degenerate && live_dof_degenerate;
    report(
        9,
        pass,
        &format!(
            "zeroed model: dof degenerate on {}/{} layers, rank degenerate on {}/{}; constant batch dof degenerate on {}/{}",
            dofs.iter().filter(|d| d.dof == 0 && d.degenerate).count(),
            dofs.len(),
            ranks.iter().filter(|r| r.rank == 0 && r.degenerate).count(),
            ranks.len(),
            live_dofs.iter().filter(|d| d.dof == 0 && d.degenerate).count(),
            live_dofs.len()
        ),
    );
}
