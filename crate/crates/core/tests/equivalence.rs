//! Closed-form equivalence of the classic second-order presets against
//! brute-force pair-enumeration oracles, plus the linear-time property of
//! the FM configuration.

use std::time::Instant;

use ipa_core::data::{FieldInput, Task};
use ipa_core::linalg::SeededRng;
use ipa_core::model::{preset, IpaModel};

fn one_hot_sample(m: usize) -> Vec<FieldInput> {
    (0..m).map(|_| FieldInput::Cat(vec![0])).collect()
}

/// Builds a preset model with vocab-1 fields, random embeddings and random
/// pair weights; returns the model plus the embedding vectors.
fn random_second_order(name: &str, m: usize, k: usize, rng: &mut SeededRng) -> (IpaModel, Vec<Vec<f64>>) {
    let vocabs = vec![1u32; m];
    let mut config = preset(name, m, k, &vocabs, Task::Regression).unwrap();
    config.first_order = false;
    let mut model = IpaModel::new(config, 0).unwrap();
    let mut vs = Vec::with_capacity(m);
    for f in 0..m {
        let v: Vec<f64> = (0..k).map(|_| rng.uniform(-1.0, 1.0)).collect();
        model.params.embeddings[f] = v.clone();
        vs.push(v);
    }
    for block in &mut model.params.layer_blocks {
        for w in block.iter_mut() {
            *w = rng.uniform(-1.0, 1.0);
        }
    }
    (model, vs)
}

/// Pair-weight slot of the unordered pair (i, j), i < j, in the shared
/// pair-once layout used by the second-order presets.
fn pair_slot(i: usize, j: usize) -> usize {
    j * (j - 1) / 2 + i
}

#[test]
fn fm_matches_pair_enumeration() {
    let mut rng = SeededRng::new(101, 0);
    let (m, k) = (5, 4);
    for _ in 0..200 {
        let (model, vs) = random_second_order("FM", m, k, &mut rng);
        let score = model.forward(&one_hot_sample(m)).unwrap();
        let mut oracle = 0.0;
        for i in 0..m {
            for j in (i + 1)..m {
                oracle += vs[i].iter().zip(&vs[j]).map(|(a, b)| a * b).sum::<f64>();
            }
        }
        assert!((score - oracle).abs() < 1e-10, "{score} vs {oracle}");
    }
}

#[test]
fn fwfm_matches_pair_enumeration() {
    let mut rng = SeededRng::new(102, 0);
    let (m, k) = (5, 4);
    for _ in 0..200 {
        let (model, vs) = random_second_order("FwFM", m, k, &mut rng);
        let block = &model.params.layer_blocks[0];
        let score = model.forward(&one_hot_sample(m)).unwrap();
        let mut oracle = 0.0;
        for i in 0..m {
            for j in (i + 1)..m {
                let w = block[pair_slot(i, j)];
                oracle += w * vs[i].iter().zip(&vs[j]).map(|(a, b)| a * b).sum::<f64>();
            }
        }
        assert!((score - oracle).abs() < 1e-10, "{score} vs {oracle}");
    }
}

#[test]
fn fvfm_matches_pair_enumeration() {
    let mut rng = SeededRng::new(103, 0);
    let (m, k) = (5, 4);
    for _ in 0..200 {
        let (model, vs) = random_second_order("FvFM", m, k, &mut rng);
        let block = &model.params.layer_blocks[0];
        let score = model.forward(&one_hot_sample(m)).unwrap();
        let mut oracle = 0.0;
        for i in 0..m {
            for j in (i + 1)..m {
                let d = &block[pair_slot(i, j) * k..(pair_slot(i, j) + 1) * k];
                oracle += (0..k).map(|c| vs[i][c] * d[c] * vs[j][c]).sum::<f64>();
            }
        }
        assert!((score - oracle).abs() < 1e-10, "{score} vs {oracle}");
    }
}

#[test]
fn fmfm_matches_pair_enumeration() {
    let mut rng = SeededRng::new(104, 0);
    let (m, k) = (4, 3);
    for _ in 0..200 {
        let (model, vs) = random_second_order("FmFM", m, k, &mut rng);
        let block = &model.params.layer_blocks[0];
        let score = model.forward(&one_hot_sample(m)).unwrap();
        let mut oracle = 0.0;
        for i in 0..m {
            for j in (i + 1)..m {
                let w = &block[pair_slot(i, j) * k * k..(pair_slot(i, j) + 1) * k * k];
                // <v_i W_ij, v_j>
                for c in 0..k {
                    let proj: f64 = (0..k).map(|r| vs[i][r] * w[r * k + c]).sum();
                    oracle += proj * vs[j][c];
                }
            }
        }
        assert!((score - oracle).abs() < 1e-10, "{score} vs {oracle}");
    }
}

#[test]
fn fm_with_first_order_matches_oracle() {
    let mut rng = SeededRng::new(105, 0);
    let (m, k) = (4, 3);
    let vocabs = vec![1u32; m];
    let config = preset("FM", m, k, &vocabs, Task::Classification).unwrap();
    let mut model = IpaModel::new(config, 0).unwrap();
    let mut vs = Vec::new();
    for f in 0..m {
        let v: Vec<f64> = (0..k).map(|_| rng.uniform(-1.0, 1.0)).collect();
        model.params.embeddings[f] = v.clone();
        vs.push(v);
        model.params.first_order[f][0] = rng.uniform(-1.0, 1.0);
    }
    model.params.bias[0] = rng.uniform(-1.0, 1.0);

    let score = model.forward(&one_hot_sample(m)).unwrap();
    let mut oracle = model.params.bias[0];
    for f in 0..m {
        oracle += model.params.first_order[f][0];
    }
    for i in 0..m {
        for j in (i + 1)..m {
            oracle += vs[i].iter().zip(&vs[j]).map(|(a, b)| a * b).sum::<f64>();
        }
    }
    assert!((score - oracle).abs() < 1e-10);
}

#[test]
fn fast_fm_identity_holds() {
    // sum_{i<j} <v_i,v_j> = 1/2 ((sum_i v_i)^2 - sum_i v_i^2), summed over
    // components; the pooled model equals both routes.
    let mut rng = SeededRng::new(106, 0);
    let (m, k) = (7, 5);
    for _ in 0..100 {
        let (model, vs) = random_second_order("FM", m, k, &mut rng);
        let score = model.forward(&one_hot_sample(m)).unwrap();
        let mut closed = 0.0;
        for c in 0..k {
            let s: f64 = vs.iter().map(|v| v[c]).sum();
            let sq: f64 = vs.iter().map(|v| v[c] * v[c]).sum();
            closed += 0.5 * (s * s - sq);
        }
        assert!((score - closed).abs() < 1e-10, "{score} vs {closed}");
    }
}

#[test]
fn fm_forward_scales_linearly_in_fields() {
    // Wall-clock slope check: the Naive pooling closed form makes FM forward
    // O(M K), not O(M^2 K). Compare per-forward time at M=8 vs M=512; a
    // quadratic implementation would blow past the bound by ~64x.
    let k = 16;
    let time_for = |m: usize, reps: usize| -> f64 {
        let mut rng = SeededRng::new(2000 + m as u64, 0);
        let (model, _) = random_second_order("FM", m, k, &mut rng);
        let sample = one_hot_sample(m);
        // Warm up.
        for _ in 0..3 {
            let _ = model.forward(&sample).unwrap();
        }
        let mut times: Vec<f64> = (0..reps)
            .map(|_| {
                let t = Instant::now();
                std::hint::black_box(model.forward(&sample).unwrap());
                t.elapsed().as_secs_f64()
            })
            .collect();
        times.sort_by(|a, b| a.partial_cmp(b).unwrap());
        times[reps / 2]
    };

    let t8 = time_for(8, 301);
    let t512 = time_for(512, 31);
    let ratio = t512 / t8;
    // Linear scaling predicts ~64x; allow a wide margin for constant
    // overheads and timer noise while still rejecting ~4096x quadratic.
    assert!(
        ratio < 800.0,
        "forward time ratio M=512/M=8 is {ratio:.1}, not linear-like"
    );
}
