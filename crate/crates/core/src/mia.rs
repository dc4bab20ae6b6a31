//! Membership inference attack harness.
//!
//! The attack validates the estimators externally: a small MLP is trained
//! to tell training members from held-out non-members using only one
//! layer's activations. Attack accuracy is an empirical privacy-risk score
//! per layer, which `correlate` then compares (rank correlation) against
//! the layer's memorization-compression ratio.
//!
//! The attacker selects its model on its own training split: the reported
//! accuracy is the held-out accuracy at the epoch with the best attack
//! train accuracy. Held-out rows never influence the selection, so a
//! signal-free target scores at chance.

use crate::autodiff::Graph;
use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::model::{Model, Param};
use crate::optim::{Optimizer, OptimizerKind};
use crate::rng::SeededRng;
use crate::tensor::Tensor;

/// Balanced member/non-member activation features with a fixed 70/30
/// attack train/test split.
#[derive(Debug)]
pub struct AttackDataset {
    pub layer: String,
    /// `[n, f]`, members first.
    pub features: Tensor,
    /// 1.0 for members, 0.0 for non-members.
    pub is_member: Vec<f64>,
    pub train_idx: Vec<usize>,
    pub test_idx: Vec<usize>,
}

/// Flattened probe activations of `layer` for every row of `images`.
/// Forward passes run in chunks; rows align with `images` order.
pub fn layer_features(
    model: &Model,
    images: &Tensor,
    layer: &str,
    chunk: usize,
) -> Result<Tensor> {
    let (idx, point) = model.probe_point(layer).ok_or_else(|| {
        Error::config(format!(
            "unknown probe layer '{}' for model {}",
            layer,
            model.kind.name()
        ))
    })?;
    let n = images.shape[0];
    let sample: usize = images.shape[1..].iter().product();
    let mut features = Tensor::zeros(&[n, point.dim]);
    let mut done = 0;
    while done < n {
        let take = chunk.min(n - done);
        let mut shape = images.shape.clone();
        shape[0] = take;
        let batch = Tensor {
            shape,
            data: images.data[done * sample..(done + take) * sample].to_vec(),
        };
        let mut g = Graph::new();
        let pass = model.forward(&mut g, &batch)?;
        let acts = g.value(pass.probes[idx]);
        features.data[done * point.dim..(done + take) * point.dim]
            .copy_from_slice(&acts.data);
        done += take;
    }
    Ok(features)
}

/// Assemble a balanced attack set: `n_per_side` members drawn from the
/// training split and the same number of non-members from the test split,
/// both seeded. The 70/30 split shuffles members and non-members
/// separately, so each attack split stays balanced within one example.
pub fn build_attack_dataset(
    model: &Model,
    train: &Dataset,
    test: &Dataset,
    layer: &str,
    n_per_side: usize,
    seed: u64,
) -> Result<AttackDataset> {
    if n_per_side < 2 {
        return Err(Error::contract(
            "attack set needs at least 2 examples per side".to_string(),
        ));
    }
    if n_per_side > train.len() || n_per_side > test.len() {
        return Err(Error::contract(format!(
            "attack set wants {} per side, have {} members / {} non-members",
            n_per_side,
            train.len(),
            test.len()
        )));
    }

    let pick = |n: usize, len: usize, stream: u64| -> Vec<usize> {
        let mut order: Vec<usize> = (0..len).collect();
        SeededRng::new(seed, "attack-pick", stream).shuffle(&mut order);
        order.truncate(n);
        order
    };
    let member_rows = pick(n_per_side, train.len(), 0);
    let nonmember_rows = pick(n_per_side, test.len(), 1);

    let (member_imgs, _) = train.gather(&member_rows)?;
    let (nonmember_imgs, _) = test.gather(&nonmember_rows)?;

    let mf = layer_features(model, &member_imgs, layer, 128)?;
    let nf = layer_features(model, &nonmember_imgs, layer, 128)?;
    let f = mf.cols();
    let mut features = Tensor::zeros(&[2 * n_per_side, f]);
    features.data[..n_per_side * f].copy_from_slice(&mf.data);
    features.data[n_per_side * f..].copy_from_slice(&nf.data);

    let mut is_member = vec![1.0; n_per_side];
    is_member.extend(vec![0.0; n_per_side]);

    // Split each side separately to keep both splits balanced.
    let n_train_side = (n_per_side * 7) / 10;
    let mut members: Vec<usize> = (0..n_per_side).collect();
    let mut nonmembers: Vec<usize> = (n_per_side..2 * n_per_side).collect();
    SeededRng::new(seed, "attack-split", 0).shuffle(&mut members);
    SeededRng::new(seed, "attack-split", 1).shuffle(&mut nonmembers);
    let mut train_idx: Vec<usize> = members[..n_train_side].to_vec();
    train_idx.extend_from_slice(&nonmembers[..n_train_side]);
    let mut test_idx: Vec<usize> = members[n_train_side..].to_vec();
    test_idx.extend_from_slice(&nonmembers[n_train_side..]);

    Ok(AttackDataset {
        layer: layer.to_string(),
        features,
        is_member,
        train_idx,
        test_idx,
    })
}

#[derive(Debug, Clone)]
pub struct AttackConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub hidden: usize,
}

impl Default for AttackConfig {
    fn default() -> Self {
        AttackConfig {
            epochs: 100,
            batch_size: 64,
            learning_rate: 1e-4,
            hidden: 128,
        }
    }
}

/// Outcome of one attack training run.
#[derive(Debug, Clone, serde::Serialize, serde::Deserialize)]
pub struct AttackResult {
    pub layer: String,
    /// Held-out accuracy at the selected epoch.
    pub test_accuracy: f64,
    /// Accuracy on the attack training split at the best epoch.
    pub train_accuracy: f64,
    pub best_epoch: usize,
    pub n_train: usize,
    pub n_test: usize,
}

struct AttackNet {
    params: Vec<Param>,
}

impl AttackNet {
    fn new(f: usize, hidden: usize, seed: u64) -> AttackNet {
        let make = |name: &str, shape: &[usize], fan_in: usize, stream: u64| {
            let n: usize = shape.iter().product();
            let bound = (6.0 / fan_in as f64).sqrt();
            Param {
                name: name.to_string(),
                value: Tensor {
                    shape: shape.to_vec(),
                    data: SeededRng::new(seed, "attack-init", stream).sample_uniform(n, bound),
                },
            }
        };
        AttackNet {
            params: vec![
                make("w1", &[f, hidden], f, 0),
                Param {
                    name: "b1".to_string(),
                    value: Tensor::zeros(&[hidden]),
                },
                make("w2", &[hidden, 1], hidden, 2),
                Param {
                    name: "b2".to_string(),
                    value: Tensor::zeros(&[1]),
                },
            ],
        }
    }

    /// Tape logits for a feature batch; returns (graph, param ids, logits).
    fn forward(&self, batch: &Tensor) -> Result<(Graph, Vec<crate::autodiff::VarId>, crate::autodiff::VarId)> {
        let mut g = Graph::new();
        let x = g.leaf(batch.clone());
        let ids: Vec<_> = self.params.iter().map(|p| g.leaf(p.value.clone())).collect();
        let l1 = g.matmul_node(x, ids[0])?;
        let l1b = g.bias_add_row(l1, ids[1])?;
        let a1 = g.relu(l1b);
        let l2 = g.matmul_node(a1, ids[2])?;
        let logits = g.bias_add_row(l2, ids[3])?;
        Ok((g, ids, logits))
    }

    fn accuracy(&self, ds: &AttackDataset, rows: &[usize]) -> Result<f64> {
        let f = ds.features.cols();
        let mut correct = 0usize;
        let chunk = 256;
        let mut done = 0;
        while done < rows.len() {
            let take = chunk.min(rows.len() - done);
            let mut batch = Tensor::zeros(&[take, f]);
            for (bi, &r) in rows[done..done + take].iter().enumerate() {
                batch.data[bi * f..(bi + 1) * f]
                    .copy_from_slice(&ds.features.data[r * f..(r + 1) * f]);
            }
            let (g, _, logits) = self.forward(&batch)?;
            let lv = g.value(logits);
            for (bi, &r) in rows[done..done + take].iter().enumerate() {
                let predicted_member = lv.data[bi] > 0.0;
                if predicted_member == (ds.is_member[r] == 1.0) {
                    correct += 1;
                }
            }
            done += take;
        }
        Ok(correct as f64 / rows.len() as f64)
    }
}

/// Train the attack MLP (one hidden layer, sigmoid output, binary
/// cross-entropy, Adam). Reports held-out accuracy at the epoch with the
/// best train accuracy; held-out rows never steer the selection.
pub fn train_attack(ds: &AttackDataset, cfg: &AttackConfig, seed: u64) -> Result<AttackResult> {
    if ds.train_idx.len() < cfg.batch_size {
        return Err(Error::contract(format!(
            "attack train split of {} is smaller than batch size {}",
            ds.train_idx.len(),
            cfg.batch_size
        )));
    }
    let f = ds.features.cols();
    let mut net = AttackNet::new(f, cfg.hidden, seed);
    let mut opt = Optimizer::new(
        OptimizerKind::Adam {
            learning_rate: cfg.learning_rate,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        },
        &net.params,
    );

    let mut best = AttackResult {
        layer: ds.layer.clone(),
        test_accuracy: 0.0,
        train_accuracy: 0.0,
        best_epoch: 0,
        n_train: ds.train_idx.len(),
        n_test: ds.test_idx.len(),
    };

    for epoch in 1..=cfg.epochs {
        let mut order = ds.train_idx.clone();
        SeededRng::new(seed, "attack-batch", epoch as u64).shuffle(&mut order);
        for chunk in order.chunks_exact(cfg.batch_size) {
            let mut batch = Tensor::zeros(&[cfg.batch_size, f]);
            let mut targets = Vec::with_capacity(cfg.batch_size);
            for (bi, &r) in chunk.iter().enumerate() {
                batch.data[bi * f..(bi + 1) * f]
                    .copy_from_slice(&ds.features.data[r * f..(r + 1) * f]);
                targets.push(ds.is_member[r]);
            }
            let (mut g, ids, logits) = net.forward(&batch)?;
            let loss = g.sigmoid_bce(logits, &targets)?;
            let loss_value = g.value(loss).data[0];
            if !loss_value.is_finite() {
                return Err(Error::numerical(format!(
                    "attack loss became non-finite at epoch {}",
                    epoch
                )));
            }
            let mut grads = g.backward(loss)?;
            let grad_list: Result<Vec<Tensor>> = ids
                .iter()
                .map(|id| {
                    grads.take(*id).ok_or_else(|| {
                        Error::contract("attack parameter missing gradient".to_string())
                    })
                })
                .collect();
            opt.step(&mut net.params, &grad_list?)?;
        }
        let train_acc = net.accuracy(ds, &ds.train_idx)?;
        if train_acc > best.train_accuracy {
            best.train_accuracy = train_acc;
            best.test_accuracy = net.accuracy(ds, &ds.test_idx)?;
            best.best_epoch = epoch;
        }
    }
    Ok(best)
}

/// Spearman rank correlation with average ranks for ties.
pub fn spearman(xs: &[f64], ys: &[f64]) -> Result<f64> {
    if xs.len() != ys.len() {
        return Err(Error::contract(format!(
            "spearman needs equal-length inputs, got {} and {}",
            xs.len(),
            ys.len()
        )));
    }
    if xs.len() < 3 {
        return Err(Error::contract(format!(
            "spearman needs at least 3 pairs, got {}",
            xs.len()
        )));
    }
    let rx = average_ranks(xs);
    let ry = average_ranks(ys);
    pearson(&rx, &ry)
}

fn average_ranks(values: &[f64]) -> Vec<f64> {
    let n = values.len();
    let mut idx: Vec<usize> = (0..n).collect();
    idx.sort_by(|&a, &b| values[a].partial_cmp(&values[b]).unwrap());
    let mut ranks = vec![0.0; n];
    let mut i = 0;
    while i < n {
        let mut j = i;
        while j + 1 < n && values[idx[j + 1]] == values[idx[i]] {
            j += 1;
        }
        // Tied block shares the mean of the ranks it spans (1-based).
        let rank = (i + j) as f64 / 2.0 + 1.0;
        for &k in &idx[i..=j] {
            ranks[k] = rank;
        }
        i = j + 1;
    }
    ranks
}

fn pearson(xs: &[f64], ys: &[f64]) -> Result<f64> {
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let mut sxy = 0.0;
    let mut sxx = 0.0;
    let mut syy = 0.0;
    for (x, y) in xs.iter().zip(ys.iter()) {
        sxy += (x - mx) * (y - my);
        sxx += (x - mx) * (x - mx);
        syy += (y - my) * (y - my);
    }
    if sxx == 0.0 || syy == 0.0 {
        return Err(Error::numerical(
            "correlation undefined: an input has zero rank variance".to_string(),
        ));
    }
    Ok(sxy / (sxx * syy).sqrt())
}

/// One layer's (metric, risk) pair for correlation.
#[derive(Debug, Clone, serde::Serialize, serde::Deserialize)]
pub struct CorrelationPair {
    pub layer: String,
    pub mcr_percent: f64,
    pub attack_accuracy: f64,
}

#[derive(Debug, Clone, serde::Serialize, serde::Deserialize)]
pub struct CorrelationReport {
    pub rho: f64,
    pub n: usize,
    pub pairs: Vec<CorrelationPair>,
}

/// Rank-correlate per-layer metric values against attack accuracies.
/// Needs at least 3 layers.
pub fn correlate(pairs: &[CorrelationPair]) -> Result<CorrelationReport> {
    if pairs.len() < 3 {
        return Err(Error::contract(format!(
            "correlation needs at least 3 layers, got {}",
            pairs.len()
        )));
    }
    let xs: Vec<f64> = pairs.iter().map(|p| p.mcr_percent).collect();
    let ys: Vec<f64> = pairs.iter().map(|p| p.attack_accuracy).collect();
    Ok(CorrelationReport {
        rho: spearman(&xs, &ys)?,
        n: pairs.len(),
        pairs: pairs.to_vec(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::ModelKind;
    use crate::synth;

    fn tiny_world(seed: u64) -> (Model, Dataset, Dataset) {
        let dir = tempfile::tempdir().unwrap();
        synth::write_synthetic_mnist(dir.path(), 40, 30, seed).unwrap();
        let train = crate::data::load_mnist(dir.path(), crate::data::Split::Train).unwrap();
        let test = crate::data::load_mnist(dir.path(), crate::data::Split::Test).unwrap();
        let model = Model::build(ModelKind::CnnMnist, 10, seed).unwrap();
        (model, train, test)
    }

    #[test]
    fn attack_dataset_is_balanced_and_split_correctly() {
        let (model, train, test) = tiny_world(3);
        let ds = build_attack_dataset(&model, &train, &test, "Conv2d_1", 20, 7).unwrap();
        assert_eq!(ds.features.rows(), 40);
        assert_eq!(ds.is_member.iter().filter(|v| **v == 1.0).count(), 20);
        assert_eq!(ds.train_idx.len(), 28);
        assert_eq!(ds.test_idx.len(), 12);
        // Balance within each split.
        let members_in = |rows: &[usize]| {
            rows.iter().filter(|&&r| ds.is_member[r] == 1.0).count() as i64
        };
        assert!((members_in(&ds.train_idx) - 14).abs() <= 1);
        assert!((members_in(&ds.test_idx) - 6).abs() <= 1);
        // No row appears in both splits.
        for r in &ds.train_idx {
            assert!(!ds.test_idx.contains(r));
        }
    }

    #[test]
    fn attack_dataset_is_deterministic() {
        let (model, train, test) = tiny_world(4);
        let a = build_attack_dataset(&model, &train, &test, "Conv2d_1", 10, 9).unwrap();
        let b = build_attack_dataset(&model, &train, &test, "Conv2d_1", 10, 9).unwrap();
        assert_eq!(a.features.data, b.features.data);
        assert_eq!(a.train_idx, b.train_idx);
    }

    #[test]
    fn features_match_a_direct_forward_pass() {
        let (model, train, _) = tiny_world(5);
        let (imgs, _) = train.gather(&[2, 5]).unwrap();
        let feats = layer_features(&model, &imgs, "Conv2d_1", 128).unwrap();
        let mut g = Graph::new();
        let pass = model.forward(&mut g, &imgs).unwrap();
        let acts = g.value(pass.probes[0]);
        assert_eq!(feats.data, acts.data);
    }

    #[test]
    fn build_rejects_oversized_request_and_unknown_layer() {
        let (model, train, test) = tiny_world(6);
        assert!(matches!(
            build_attack_dataset(&model, &train, &test, "Conv2d_1", 500, 1),
            Err(Error::Contract(_))
        ));
        assert!(matches!(
            build_attack_dataset(&model, &train, &test, "Conv2d_7", 5, 1),
            Err(Error::Config(_))
        ));
    }

    #[test]
    fn separable_features_reach_near_perfect_accuracy() {
        // Members at +2, non-members at -2 in every coordinate: the attack
        // must exceed 99%.
        let n = 60;
        let f = 8;
        let mut features = Tensor::zeros(&[2 * n, f]);
        let mut rng = SeededRng::new(11, "mia-test", 0);
        for i in 0..2 * n {
            let center = if i < n { 2.0 } else { -2.0 };
            for j in 0..f {
                features.data[i * f + j] = center + 0.3 * rng.standard_normal();
            }
        }
        let mut is_member = vec![1.0; n];
        is_member.extend(vec![0.0; n]);
        let ds = AttackDataset {
            layer: "synthetic".to_string(),
            features,
            is_member,
            train_idx: (0..42).chain(n..n + 42).collect(),
            test_idx: (42..n).chain(n + 42..2 * n).collect(),
        };
        let cfg = AttackConfig {
            epochs: 40,
            batch_size: 16,
            learning_rate: 1e-3,
            hidden: 16,
        };
        let res = train_attack(&ds, &cfg, 13).unwrap();
        assert!(res.test_accuracy >= 0.99, "accuracy {}", res.test_accuracy);
    }

    #[test]
    fn unrelated_features_stay_near_chance() {
        // Random features carry no membership signal. Best-over-epochs
        // biases any single run high, so the band check uses the mean
        // across seeds.
        let mut accs = Vec::new();
        for seed in 0..5u64 {
            let n = 100;
            let f = 12;
            let features = SeededRng::new(seed, "mia-noise", 0).sample_gaussian(2 * n, f);
            let mut is_member = vec![1.0; n];
            is_member.extend(vec![0.0; n]);
            let ds = AttackDataset {
                layer: "noise".to_string(),
                features,
                is_member,
                train_idx: (0..70).chain(n..n + 70).collect(),
                test_idx: (70..n).chain(n + 70..2 * n).collect(),
            };
            let cfg = AttackConfig {
                epochs: 15,
                batch_size: 20,
                learning_rate: 1e-3,
                hidden: 16,
            };
            accs.push(train_attack(&ds, &cfg, seed).unwrap().test_accuracy);
        }
        let mean = accs.iter().sum::<f64>() / accs.len() as f64;
        assert!(
            (mean - 0.5).abs() <= 0.08,
            "mean accuracy {} from {:?}",
            mean,
            accs
        );
    }

    #[test]
    fn spearman_handles_monotone_and_reversed_data() {
        let xs = [1.0, 2.0, 3.0, 4.0];
        let up = [10.0, 20.0, 30.0, 40.0];
        let down = [8.0, 6.0, 4.0, 2.0];
        assert!((spearman(&xs, &up).unwrap() - 1.0).abs() < 1e-12);
        assert!((spearman(&xs, &down).unwrap() + 1.0).abs() < 1e-12);
        // Nonlinear but monotone still gives exactly 1.
        let exp = [2.7, 7.4, 20.1, 54.6];
        assert!((spearman(&xs, &exp).unwrap() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn spearman_averages_ties() {
        let xs = [1.0, 2.0, 2.0, 4.0];
        let ys = [10.0, 20.0, 20.0, 40.0];
        assert!((spearman(&xs, &ys).unwrap() - 1.0).abs() < 1e-12);
        assert_eq!(average_ranks(&xs), vec![1.0, 2.5, 2.5, 4.0]);
    }

    #[test]
    fn spearman_rejects_degenerate_inputs() {
        assert!(spearman(&[1.0, 2.0], &[1.0, 2.0]).is_err());
        assert!(matches!(
            spearman(&[1.0, 1.0, 1.0], &[1.0, 2.0, 3.0]),
            Err(Error::Numerical(_))
        ));
    }

    #[test]
    fn correlate_requires_three_layers() {
        let pairs = vec![
            CorrelationPair {
                layer: "Conv2d_1".to_string(),
                mcr_percent: 27.27,
                attack_accuracy: 0.78,
            },
            CorrelationPair {
                layer: "Conv2d_2".to_string(),
                mcr_percent: 0.82,
                attack_accuracy: 0.55,
            },
        ];
        assert!(matches!(correlate(&pairs), Err(Error::Contract(_))));
        let mut three = pairs.clone();
        three.push(CorrelationPair {
            layer: "Conv2d_3".to_string(),
            mcr_percent: 12.0,
            attack_accuracy: 0.61,
        });
        let report = correlate(&three).unwrap();
        assert_eq!(report.n, 3);
        // Larger ratio pairs with larger accuracy twice out of three:
        // 27.27 -> 0.78, 0.82 -> 0.55, 12.0 -> 0.61 is perfectly monotone.
        assert!((report.rho - 1.0).abs() < 1e-12);
    }
}
