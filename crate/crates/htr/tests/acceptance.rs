//! Acceptance suite: one test per criterion, each printing a pass/fail
//! line. Run with `cargo test --test acceptance -- --nocapture` to see the
//! lines.

use htr::losses::{
    bootstrapped_ce, box_losses, dice_loss, focal_loss, focal_term, hungarian_match, matched_cost,
    refer_loss, score_loss, BoxXYXY, LossWeights, QueryPrediction, VideoGroundTruth, FOCAL_ALPHA,
    FOCAL_GAMMA,
};
use htr::mask::Mask;
use htr::memory::{
    aggregate_global, build_memory, hybrid_propagate, local_affinity, local_readout, FeatureMap,
    MemoryWeights, STRIDE,
};
use htr::metrics::{boundary_f, jaccard, mcs, video_metrics, JTable, MaskSequence};
use htr::oracle;
use htr::selection::select_reference_frames;
use htr::synth::synth_scenario;
use htr::tensor::Tensor;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use std::sync::OnceLock;
use std::time::{Duration, Instant};

fn report(criterion: u32, name: &str, pass: bool, detail: &str) {
    let status = if pass { "PASS" } else { "FAIL" };
    println!("acceptance {criterion:02} {name}: {status} ({detail})");
    assert!(pass, "criterion {criterion} ({name}) failed: {detail}");
}

// ---------------------------------------------------------------------------
// Shared 500-instance propagation corpus for criteria 1-3.
// ---------------------------------------------------------------------------

struct ReadoutCase {
    /// Max |impl - oracle| over values, global affinities, and soft mask.
    oracle_diff: f64,
    /// Max |row sum - 1| over all affinity rows.
    affinity_err: f64,
    /// Convex-hull violations (beyond one f32 rounding step) plus soft-mask
    /// probabilities outside [0, 1].
    hull_violations: usize,
}

struct ReadoutCorpus {
    cases: Vec<ReadoutCase>,
    elapsed: Duration,
}

fn readout_corpus() -> &'static ReadoutCorpus {
    static CORPUS: OnceLock<ReadoutCorpus> = OnceLock::new();
    CORPUS.get_or_init(|| {
        let start = Instant::now();
        let mut rng = ChaCha8Rng::seed_from_u64(0xACCE);
        let mut cases = Vec::with_capacity(500);
        for instance in 0..500u64 {
            let t = rng.gen_range(1..=3usize);
            let h = rng.gen_range(1..=8usize);
            let w = rng.gen_range(1..=8usize);
            let c = rng.gen_range(1..=16usize);
            let cy = rng.gen_range(1..=8usize);
            let weights = MemoryWeights::seeded(instance, c, cy).unwrap();

            let rand_features = |rng: &mut ChaCha8Rng| {
                let data: Vec<f32> = (0..h * w * c)
                    .map(|_| rng.gen_range(-2.0f32..2.0))
                    .collect();
                FeatureMap::new(h, w, Tensor::new(vec![h * w, c], data).unwrap()).unwrap()
            };
            // Every tenth instance keeps all probabilities at or below 0.5 so
            // the undefined-foreground path is exercised.
            let low_conf = instance % 10 == 9;
            let rand_mask = |rng: &mut ChaCha8Rng| {
                let hi = if low_conf { 0.5 } else { 1.0 };
                let data: Vec<f32> = (0..(h * STRIDE) * (w * STRIDE))
                    .map(|_| rng.gen_range(0.0f32..=hi))
                    .collect();
                Mask::new(h * STRIDE, w * STRIDE, data).unwrap()
            };
            let ref_features: Vec<FeatureMap> = (0..t).map(|_| rand_features(&mut rng)).collect();
            let ref_masks: Vec<Mask> = (0..t).map(|_| rand_mask(&mut rng)).collect();
            let query = rand_features(&mut rng);

            let memory = build_memory(&ref_features, &ref_masks, &weights).unwrap();
            let prop = hybrid_propagate(&query, &memory, &weights).unwrap();
            let naive = oracle::hybrid_propagate_naive(&query, &ref_features, &ref_masks, &weights)
                .unwrap();

            let mut diff = 0.0f64;
            for i in 0..prop.values.rows() {
                for (j, &v) in prop.values.row(i).iter().enumerate() {
                    diff = diff.max((f64::from(v) - naive.values[i][j]).abs());
                }
            }
            match (&prop.global_affinity, &naive.global_affinity) {
                (Some(ga), Some(ng)) => {
                    for (i, n) in ng.iter().enumerate() {
                        diff = diff.max((f64::from(ga.get2(i, 0)) - n[0]).abs());
                        diff = diff.max((f64::from(ga.get2(i, 1)) - n[1]).abs());
                    }
                }
                (None, None) => {}
                _ => diff = f64::INFINITY,
            }
            for (i, &p) in prop.soft_mask.data().iter().enumerate() {
                diff = diff.max((f64::from(p) - naive.soft_mask[i]).abs());
            }

            let affinity = local_affinity(&query, &memory.local, &weights.key_proj).unwrap();
            let mut affinity_err = 0.0f64;
            for i in 0..affinity.rows() {
                let sum: f64 = affinity.row(i).iter().map(|&v| f64::from(v)).sum();
                affinity_err = affinity_err.max((sum - 1.0).abs());
            }

            let mut hull_violations = 0usize;
            let values = memory.local.values();
            for col in 0..values.cols() {
                let mut lo = f32::INFINITY;
                let mut hi = f32::NEG_INFINITY;
                for row in 0..values.rows() {
                    lo = lo.min(values.get2(row, col));
                    hi = hi.max(values.get2(row, col));
                }
                for row in 0..prop.values.rows() {
                    let x = prop.values.get2(row, col);
                    if x < lo || x > hi {
                        hull_violations += 1;
                    }
                }
            }
            for &p in prop.soft_mask.data() {
                if !(0.0..=1.0).contains(&p) {
                    hull_violations += 1;
                }
            }

            cases.push(ReadoutCase {
                oracle_diff: diff,
                affinity_err,
                hull_violations,
            });
        }
        ReadoutCorpus {
            cases,
            elapsed: start.elapsed(),
        }
    })
}

#[test]
fn criterion_01_readout_oracle() {
    let corpus = readout_corpus();
    let max_diff = corpus
        .cases
        .iter()
        .map(|c| c.oracle_diff)
        .fold(0.0f64, f64::max);
    let within_time = corpus.elapsed < Duration::from_secs(10);
    report(
        1,
        "readout oracle (500 instances vs double loop)",
        max_diff <= 1e-4 && within_time,
        &format!(
            "max abs diff {max_diff:.2e}, elapsed {:.2?}",
            corpus.elapsed
        ),
    );
}

#[test]
fn criterion_02_affinity_normalization() {
    let corpus = readout_corpus();
    let max_err = corpus
        .cases
        .iter()
        .map(|c| c.affinity_err)
        .fold(0.0f64, f64::max);
    report(
        2,
        "affinity rows sum to 1",
        max_err <= 1e-5,
        &format!("max |sum - 1| = {max_err:.2e}"),
    );
}

#[test]
fn criterion_03_convex_hull_bound() {
    let corpus = readout_corpus();
    let violations: usize = corpus.cases.iter().map(|c| c.hull_violations).sum();
    report(
        3,
        "readout stays within value bounds",
        violations == 0,
        &format!("{violations} violations"),
    );
}

#[test]
fn criterion_04_nearest_neighbor_limit() {
    let mut rng = ChaCha8Rng::seed_from_u64(0x4E4E);
    let mut max_diff = 0.0f64;
    for instance in 0..100u64 {
        let h = rng.gen_range(2..=4usize);
        let w = rng.gen_range(2..=4usize);
        let c = rng.gen_range(2..=8usize);
        let cy = rng.gen_range(1..=4usize);
        let weights = MemoryWeights::seeded(1000 + instance, c, cy).unwrap();

        // Rejection-sample base features until projected keys are pairwise
        // at least 0.1 apart, then scale everything by 100.
        let nodes = h * w;
        let base = loop {
            let data: Vec<f32> = (0..nodes * c)
                .map(|_| rng.gen_range(-2.0f32..2.0))
                .collect();
            let fm = FeatureMap::new(h, w, Tensor::new(vec![nodes, c], data).unwrap()).unwrap();
            let keys = fm.data().matmul(&weights.key_proj).unwrap();
            let mut ok = true;
            'outer: for i in 0..nodes {
                for j in (i + 1)..nodes {
                    let d2: f64 = keys
                        .row(i)
                        .iter()
                        .zip(keys.row(j))
                        .map(|(&a, &b)| (f64::from(a) - f64::from(b)).powi(2))
                        .sum();
                    if d2.sqrt() < 0.1 {
                        ok = false;
                        break 'outer;
                    }
                }
            }
            if ok {
                break fm;
            }
        };
        let alpha = 100.0f32;
        let scale = |fm: &FeatureMap, jitter: &mut ChaCha8Rng, eps: f32| {
            let data: Vec<f32> = fm
                .data()
                .data()
                .iter()
                .map(|&v| {
                    alpha * v
                        + if eps > 0.0 {
                            jitter.gen_range(-eps..=eps)
                        } else {
                            0.0
                        }
                })
                .collect();
            FeatureMap::new(h, w, Tensor::new(vec![nodes, c], data).unwrap()).unwrap()
        };
        let ref_fm = scale(&base, &mut rng, 0.0);
        let query_fm = scale(&base, &mut rng, 0.01);

        let labels: Vec<f32> = (0..nodes)
            .map(|_| if rng.gen_bool(0.5) { 1.0 } else { 0.0 })
            .collect();
        let mask = Mask::new(h, w, labels).unwrap().upsample(STRIDE).unwrap();
        let memory = build_memory(&[ref_fm], &[mask], &weights).unwrap();

        // Nearest bank key per query node by explicit distances.
        let q_keys = query_fm.data().matmul(&weights.key_proj).unwrap();
        let bank_keys = memory.local.keys();
        let readout = local_readout(&query_fm, &memory.local, &weights.key_proj).unwrap();
        for i in 0..nodes {
            let mut nearest = 0usize;
            let mut best = f64::INFINITY;
            for j in 0..bank_keys.rows() {
                let d2: f64 = q_keys
                    .row(i)
                    .iter()
                    .zip(bank_keys.row(j))
                    .map(|(&a, &b)| (f64::from(a) - f64::from(b)).powi(2))
                    .sum();
                if d2 < best {
                    best = d2;
                    nearest = j;
                }
            }
            for (col, &expected) in memory.local.values().row(nearest).iter().enumerate() {
                let got = readout.get2(i, col);
                max_diff = max_diff.max((f64::from(got) - f64::from(expected)).abs());
            }
        }
    }
    report(
        4,
        "scaled readout collapses to nearest neighbor",
        max_diff <= 1e-3,
        &format!("max abs diff {max_diff:.2e}"),
    );
}

#[test]
fn criterion_05_global_token_correctness() {
    // Worked aggregation example.
    let joint = Tensor::from_rows(&[vec![1.0, 0.0], vec![0.0, 1.0]]).unwrap();
    let token = aggregate_global(&joint, &[0.8, 0.6], 0.5).unwrap();
    let example_ok = (f64::from(token.get2(0, 0)) - 0.5714).abs() <= 1e-4
        && (f64::from(token.get2(0, 1)) - 0.4286).abs() <= 1e-4;

    // Perturbing rows at or below the threshold must have exactly zero
    // effect.
    let mut rng = ChaCha8Rng::seed_from_u64(0x61);
    let mut perturbation_ok = true;
    for _ in 0..100 {
        let rows = rng.gen_range(2..10usize);
        let cols = rng.gen_range(1..8usize);
        let probs: Vec<f32> = (0..rows).map(|_| rng.gen_range(0.0f32..=1.0)).collect();
        if !probs.iter().any(|&p| p > 0.5) {
            continue;
        }
        let base: Vec<Vec<f32>> = (0..rows)
            .map(|_| (0..cols).map(|_| rng.gen_range(-3.0f32..3.0)).collect())
            .collect();
        let mut perturbed = base.clone();
        for (row, &p) in perturbed.iter_mut().zip(&probs) {
            if p <= 0.5 {
                for v in row.iter_mut() {
                    *v = rng.gen_range(-100.0f32..100.0);
                }
            }
        }
        let a = aggregate_global(&Tensor::from_rows(&base).unwrap(), &probs, 0.5).unwrap();
        let b = aggregate_global(&Tensor::from_rows(&perturbed).unwrap(), &probs, 0.5).unwrap();
        if a.data() != b.data() {
            perturbation_ok = false;
        }
    }
    report(
        5,
        "global token worked example and strict exclusion",
        example_ok && perturbation_ok,
        &format!("example_ok={example_ok}, zero-effect={perturbation_ok}"),
    );
}

#[test]
fn criterion_06_mcs_suite() {
    let table = JTable::new(vec![vec![0.6, 0.7], vec![0.4, 0.9]]).unwrap();
    let exact = mcs(&table, 0.1).unwrap() == 1.0
        && mcs(&table, 0.5).unwrap() == 0.5
        && mcs(&table, 0.9).unwrap() == 0.0;

    let mut rng = ChaCha8Rng::seed_from_u64(0x6D63);
    let mut monotone = true;
    for _ in 0..1000 {
        let videos = rng.gen_range(1..=6usize);
        let rows: Vec<Vec<f64>> = (0..videos)
            .map(|_| {
                (0..rng.gen_range(1..=8usize))
                    .map(|_| rng.gen_range(0.0f64..=1.0))
                    .collect()
            })
            .collect();
        let table = JTable::new(rows).unwrap();
        let t1 = rng.gen_range(0.0f64..=1.0);
        let t2 = rng.gen_range(0.0f64..=1.0);
        let (lo, hi) = if t1 <= t2 { (t1, t2) } else { (t2, t1) };
        if mcs(&table, lo).unwrap() < mcs(&table, hi).unwrap() {
            monotone = false;
        }
    }
    report(
        6,
        "MCS derived values exact and monotone over 1000 tables",
        exact && monotone,
        &format!("exact={exact}, monotone={monotone}"),
    );
}

#[test]
fn criterion_07_ablation_shape() {
    let frames = 4usize;
    let (h, w, c) = (3usize, 3usize, 4usize);
    // Features are scaled down so the softmax affinity averages within a
    // cluster instead of snapping to the single nearest node; cluster
    // separation stays 10x the noise, and averaging is the regime where the
    // memory can cancel label noise at all.
    let feature_scale = 0.15f32;
    let mut hybrid_sum = 0.0f64;
    let mut local_sum = 0.0f64;
    let mut nomem_sum = 0.0f64;
    for seed in 0..20u64 {
        let mut scenario = synth_scenario(seed, frames, h, w, c, 10.0).unwrap();
        scenario.features = scenario
            .features
            .iter()
            .map(|fm| {
                let data: Vec<f32> = fm
                    .data()
                    .data()
                    .iter()
                    .map(|&v| v * feature_scale)
                    .collect();
                FeatureMap::new(h, w, Tensor::new(vec![h * w, c], data).unwrap()).unwrap()
            })
            .collect();
        let weights = MemoryWeights::seeded(seed, c, 8).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(0xAB1 + seed);

        // 10% label noise on every frame's selective mask.
        let noisy: Vec<Mask> = scenario
            .node_masks
            .iter()
            .map(|m| {
                let data: Vec<f32> = m
                    .data()
                    .iter()
                    .map(|&v| if rng.gen_bool(0.1) { 1.0 - v } else { v })
                    .collect();
                Mask::new(h, w, data).unwrap()
            })
            .collect();

        let gt = &scenario.node_masks;
        let mean_j = |masks: &[Mask]| -> f64 {
            let total: f64 = masks
                .iter()
                .zip(gt)
                .map(|(p, g)| jaccard(p, g).unwrap())
                .sum();
            total / masks.len() as f64
        };

        // No memory: every frame keeps its own noisy selective mask.
        nomem_sum += mean_j(&noisy);

        // References = top 25% of scores; targets propagated.
        let refs = select_reference_frames(&scenario.scores, 0.25).unwrap();
        let ref_features: Vec<FeatureMap> =
            refs.iter().map(|&i| scenario.features[i].clone()).collect();
        let ref_masks: Vec<Mask> = refs
            .iter()
            .map(|&i| noisy[i].upsample(STRIDE).unwrap())
            .collect();
        let memory = build_memory(&ref_features, &ref_masks, &weights).unwrap();

        let mut local_masks = Vec::with_capacity(frames);
        let mut hybrid_masks = Vec::with_capacity(frames);
        for (i, noisy_mask) in noisy.iter().enumerate() {
            if refs.contains(&i) {
                local_masks.push(noisy_mask.clone());
                hybrid_masks.push(noisy_mask.clone());
                continue;
            }
            // Local-only: readout and renormalize the probability pair.
            let values =
                local_readout(&scenario.features[i], &memory.local, &weights.key_proj).unwrap();
            let cy = values.cols() - 2;
            let probs: Vec<f32> = (0..values.rows())
                .map(|r| {
                    let fg = values.get2(r, cy);
                    let bg = values.get2(r, cy + 1);
                    fg / (fg + bg)
                })
                .collect();
            local_masks.push(Mask::new(h, w, probs).unwrap().binarize(0.5));

            let prop = hybrid_propagate(&scenario.features[i], &memory, &weights).unwrap();
            hybrid_masks.push(prop.soft_mask.binarize(0.5));
        }
        local_sum += mean_j(&local_masks);
        hybrid_sum += mean_j(&hybrid_masks);
    }
    let hybrid = hybrid_sum / 20.0;
    let local = local_sum / 20.0;
    let nomem = nomem_sum / 20.0;
    report(
        7,
        "hybrid >= local-only >= no-memory under 10% label noise",
        hybrid >= local && local >= nomem,
        &format!("hybrid {hybrid:.4}, local {local:.4}, no-memory {nomem:.4}"),
    );
}

#[test]
fn criterion_08_selection_contract() {
    let mut ok = true;
    let mut detail = String::new();
    for t in 1..=10usize {
        for &(ratio, num, den) in &[
            (0.01f64, 1usize, 100usize),
            (0.25, 1, 4),
            (0.5, 1, 2),
            (0.75, 3, 4),
        ] {
            let scores: Vec<f32> = (0..t).map(|i| (t - i) as f32).collect();
            let selected = select_reference_frames(&scores, ratio).unwrap();
            let expected = (num * t).div_ceil(den);
            if selected.len() != expected
                || selected.iter().any(|&i| i >= t)
                || selected.windows(2).any(|w| w[0] >= w[1])
            {
                ok = false;
                detail = format!("T={t} k={ratio}: got {}, want {expected}", selected.len());
            }
        }
    }
    // The 5-frame / 25% case rounds up to 2.
    let five = select_reference_frames(&[0.9, 0.8, 0.7, 0.6, 0.5], 0.25).unwrap();
    if five.len() != 2 {
        ok = false;
        detail = format!("5-frame case selected {}", five.len());
    }
    report(
        8,
        "selection counts equal ceil(k*T)",
        ok,
        if detail.is_empty() {
            "all counts match"
        } else {
            &detail
        },
    );
}

#[test]
fn criterion_09_hungarian_optimality() {
    let mut rng = ChaCha8Rng::seed_from_u64(0x4855);
    let mut max_gap = 0.0f64;
    for _ in 0..500 {
        let n = rng.gen_range(1..=6usize);
        let cost = Tensor::new(
            vec![n, n],
            (0..n * n).map(|_| rng.gen_range(-10.0f32..10.0)).collect(),
        )
        .unwrap();
        let perm = hungarian_match(&cost).unwrap();
        let total: f64 = perm
            .iter()
            .enumerate()
            .map(|(i, &j)| f64::from(cost.get2(i, j)))
            .sum();
        let (_, best) = oracle::hungarian_brute_force(&cost).unwrap();
        max_gap = max_gap.max((total - best).abs());
    }
    report(
        9,
        "assignment equals exhaustive optimum on 500 instances",
        max_gap <= 1e-9,
        &format!("max cost gap {max_gap:.2e}"),
    );
}

#[test]
fn criterion_10_loss_formulas() {
    let mut ok = true;
    let mut notes: Vec<String> = Vec::new();

    let pred = Mask::new(1, 8, vec![1.0, 1.0, 1.0, 1.0, 0.0, 0.0, 0.0, 0.0]).unwrap();
    let gt = Mask::new(1, 8, vec![0.0, 0.0, 0.0, 0.0, 1.0, 1.0, 1.0, 1.0]).unwrap();
    let dice = dice_loss(&pred, &gt).unwrap();
    if (dice - (1.0 - 1.0 / 9.0)).abs() > 1e-4 {
        ok = false;
        notes.push(format!("dice {dice}"));
    }

    let focal = focal_term(0.5, true, 0.25, 2.0);
    if (focal - 0.0433).abs() > 1e-4 {
        ok = false;
        notes.push(format!("focal {focal}"));
    }

    let a = BoxXYXY::new(0.0, 0.0, 1.0, 1.0).unwrap();
    let b = BoxXYXY::new(1.0, 0.0, 2.0, 1.0).unwrap();
    let (_, giou) = box_losses(&a, &b);
    if (giou - 1.0).abs() > 1e-4 {
        ok = false;
        notes.push(format!("giou {giou}"));
    }

    let p_hard = (-1.0f64).exp() as f32;
    let p_easy = (-0.1f64).exp() as f32;
    let bpred = Mask::new(1, 4, vec![p_hard, p_easy, p_easy, p_easy]).unwrap();
    let bgt = Mask::new(1, 4, vec![1.0; 4]).unwrap();
    let boot = bootstrapped_ce(&bpred, &bgt, 0.25).unwrap();
    if (boot - 1.0).abs() > 1e-4 {
        ok = false;
        notes.push(format!("bootstrapped {boot}"));
    }

    // refer_loss must equal the independently summed components exactly.
    let mut rng = ChaCha8Rng::seed_from_u64(0x10);
    let gt_video = VideoGroundTruth {
        masks: vec![
            Mask::new(1, 4, vec![1.0, 0.0, 1.0, 0.0]).unwrap(),
            Mask::new(1, 4, vec![0.0, 1.0, 0.0, 1.0]).unwrap(),
        ],
        boxes: vec![
            BoxXYXY::new(0.0, 0.0, 2.0, 2.0).unwrap(),
            BoxXYXY::new(1.0, 1.0, 3.0, 3.0).unwrap(),
        ],
    };
    let preds: Vec<QueryPrediction> = (0..4)
        .map(|_| QueryPrediction {
            masks: (0..2)
                .map(|_| {
                    Mask::new(1, 4, (0..4).map(|_| rng.gen_range(0.0f32..1.0)).collect()).unwrap()
                })
                .collect(),
            boxes: (0..2)
                .map(|_| {
                    let x1 = rng.gen_range(0.0..2.0);
                    BoxXYXY::new(x1, 0.0, x1 + rng.gen_range(0.5..2.0), 1.5).unwrap()
                })
                .collect(),
            scores: vec![rng.gen_range(0.0..1.0), rng.gen_range(0.0..1.0)],
        })
        .collect();
    let w = LossWeights::default();
    let loss = refer_loss(&preds, &gt_video, &w).unwrap();
    let costs: Vec<f64> = preds
        .iter()
        .map(|p| {
            let mut acc = 0.0;
            for j in 0..2 {
                let d = dice_loss(&p.masks[j], &gt_video.masks[j]).unwrap();
                let f =
                    focal_loss(&p.masks[j], &gt_video.masks[j], FOCAL_ALPHA, FOCAL_GAMMA).unwrap();
                let (l1, giou) = box_losses(&p.boxes[j], &gt_video.boxes[j]);
                acc += w.dice * d + w.focal * f + w.giou * giou + w.l1 * l1;
            }
            acc / 2.0
        })
        .collect();
    let optimal = costs
        .iter()
        .enumerate()
        .min_by(|x, y| x.1.partial_cmp(y.1).unwrap())
        .unwrap()
        .0;
    let mut expected = costs[optimal];
    for (i, p) in preds.iter().enumerate() {
        expected += w.ce * score_loss(p, i == optimal);
    }
    if loss != expected {
        ok = false;
        notes.push(format!("refer {loss} vs {expected}"));
    }
    // Cross-check matched_cost against the inline summation.
    for (p, &c) in preds.iter().zip(&costs) {
        if matched_cost(p, &gt_video, &w).unwrap() != c {
            ok = false;
            notes.push("matched_cost mismatch".into());
        }
    }

    report(
        10,
        "loss formulas reproduce hand-evaluated values",
        ok,
        &if notes.is_empty() {
            "all formulas match".into()
        } else {
            notes.join("; ")
        },
    );
}

#[test]
fn criterion_11_metric_basics() {
    let mut ok = true;
    let mut notes: Vec<String> = Vec::new();

    let square = {
        let mut data = vec![0.0f32; 32 * 32];
        for y in 2..4 {
            for x in 2..4 {
                data[y * 32 + x] = 1.0;
            }
        }
        Mask::new(32, 32, data).unwrap()
    };
    if jaccard(&square, &square).unwrap() != 1.0
        || boundary_f(&square, &square, None).unwrap() != 1.0
    {
        ok = false;
        notes.push("identical masks".into());
    }

    let far_a = {
        let mut data = vec![0.0f32; 32 * 32];
        data[33] = 1.0;
        Mask::new(32, 32, data).unwrap()
    };
    let far_b = {
        let mut data = vec![0.0f32; 32 * 32];
        data[30 * 32 + 30] = 1.0;
        Mask::new(32, 32, data).unwrap()
    };
    if jaccard(&far_a, &far_b).unwrap() != 0.0
        || boundary_f(&far_a, &far_b, Some(2.0)).unwrap() != 0.0
    {
        ok = false;
        notes.push("disjoint/distant masks".into());
    }

    // J&F is exactly the mean of J and F.
    let pred =
        MaskSequence::new("v".into(), vec![0, 1], vec![square.clone(), far_a.clone()]).unwrap();
    let gt =
        MaskSequence::new("v".into(), vec![0, 1], vec![square.clone(), far_b.clone()]).unwrap();
    let (vm, _) = video_metrics(&pred, &gt, Some(1.5)).unwrap();
    if vm.jf != (vm.j + vm.f) / 2.0 {
        ok = false;
        notes.push("J&F mean".into());
    }

    // Unit square shifted by one pixel matches within tolerance 1.5.
    let shifted_a = {
        let mut data = vec![0.0f32; 36];
        data[2 * 6 + 2] = 1.0;
        Mask::new(6, 6, data).unwrap()
    };
    let shifted_b = {
        let mut data = vec![0.0f32; 36];
        data[2 * 6 + 3] = 1.0;
        Mask::new(6, 6, data).unwrap()
    };
    if boundary_f(&shifted_a, &shifted_b, Some(1.5)).unwrap() != 1.0 {
        ok = false;
        notes.push("shifted square".into());
    }

    report(
        11,
        "metric basics (J, F, J&F, shifted square)",
        ok,
        &if notes.is_empty() {
            "all checks hold".into()
        } else {
            notes.join("; ")
        },
    );
}

#[test]
fn criterion_12_end_to_end_cli() {
    use std::process::Command;
    let start = Instant::now();
    let bin = env!("CARGO_BIN_EXE_htr");
    let work = tempfile::tempdir().unwrap();

    let run_pipeline = |tag: &str| -> (std::path::PathBuf, String) {
        let dir = work.path().join(tag);
        let scenario_dir = dir.join("scenario");
        let out_dir = dir.join("out");
        let run = |args: &[&str]| {
            let output = Command::new(bin).args(args).output().expect("spawn htr");
            assert!(
                output.status.success(),
                "htr {args:?} failed: {}",
                String::from_utf8_lossy(&output.stderr)
            );
            output
        };
        run(&[
            "synth",
            "--seed",
            "77",
            "--out",
            scenario_dir.to_str().unwrap(),
            "--frames",
            "4",
            "--height",
            "4",
            "--width",
            "4",
            "--channels",
            "8",
            "--separation",
            "10",
        ]);
        run(&[
            "propagate",
            "--seed",
            "77",
            "--features",
            scenario_dir.join("features.htrt").to_str().unwrap(),
            "--ref-masks",
            scenario_dir.join("gt").to_str().unwrap(),
            "--scores",
            scenario_dir.join("scores.htrt").to_str().unwrap(),
            "--ratio",
            "0.25",
            "--out",
            out_dir.to_str().unwrap(),
        ]);
        let eval = run(&[
            "evaluate",
            "--pred-dir",
            out_dir.join("mask").to_str().unwrap(),
            "--gt-dir",
            scenario_dir.join("gt").to_str().unwrap(),
        ]);
        (dir, String::from_utf8(eval.stdout).unwrap())
    };

    let (dir_a, eval_a) = run_pipeline("a");
    let (dir_b, eval_b) = run_pipeline("b");

    // Byte-identical across the two same-seed runs: every written file and
    // the evaluation output.
    let mut identical = eval_a == eval_b;
    let mut compare_dir = |sub: &str| {
        let list = |d: &std::path::Path| -> Vec<std::path::PathBuf> {
            let mut v: Vec<_> = std::fs::read_dir(d)
                .unwrap()
                .map(|e| e.unwrap().path())
                .filter(|p| p.is_file())
                .collect();
            v.sort();
            v
        };
        let fa = list(&dir_a.join(sub));
        let fb = list(&dir_b.join(sub));
        assert_eq!(fa.len(), fb.len(), "{sub}: file count differs");
        for (pa, pb) in fa.iter().zip(&fb) {
            if std::fs::read(pa).unwrap() != std::fs::read(pb).unwrap() {
                identical = false;
            }
        }
    };
    compare_dir("scenario/gt");
    compare_dir("out/mask");
    compare_dir("out/soft");

    // Reference selection for this scenario is frame 0 (highest score).
    let select_out = Command::new(bin)
        .args([
            "select",
            "--scores",
            dir_a.join("scenario/scores.htrt").to_str().unwrap(),
            "--ratio",
            "0.25",
        ])
        .output()
        .expect("spawn htr");
    let selected: Vec<usize> =
        serde_json::from_slice(&select_out.stdout).expect("selected indices JSON");

    // Target frames reach J >= 0.99 against the ground truth.
    let mut min_target_j = 1.0f64;
    for frame in 0..4usize {
        if selected.contains(&frame) {
            continue;
        }
        let pred =
            htr::io::pgm::read_mask(&dir_a.join(format!("out/mask/{frame:05}.pgm"))).unwrap();
        let gt =
            htr::io::pgm::read_mask(&dir_a.join(format!("scenario/gt/{frame:05}.pgm"))).unwrap();
        min_target_j = min_target_j.min(jaccard(&pred, &gt).unwrap());
    }

    // The evaluate output is parseable JSON lines.
    let mut parsed = 0;
    for line in eval_a.lines() {
        let value: serde_json::Value = serde_json::from_str(line).expect("JSON line");
        assert!(value.is_object());
        parsed += 1;
    }

    let elapsed = start.elapsed();
    report(
        12,
        "synth -> propagate -> evaluate pipeline",
        min_target_j >= 0.99
            && identical
            && parsed == 2
            && elapsed < Duration::from_secs(30),
        &format!(
            "min target J {min_target_j:.4}, byte-identical {identical}, {parsed} JSON lines, {elapsed:.2?}"
        ),
    );
}

#[test]
fn criterion_13_format_round_trips() {
    use htr::io::{container, jtable, pgm};
    let mut ok = true;
    let mut notes: Vec<String> = Vec::new();

    // HTRT bit-exact round trip.
    let tensor = Tensor::new(vec![3, 2], vec![0.5, -1.25, 3.0e-7, 42.0, -0.0, 1.0]).unwrap();
    let bytes = container::encode(&tensor);
    match container::decode(&bytes) {
        Ok(back) if back.dims() == tensor.dims() && container::encode(&back) == bytes => {}
        _ => {
            ok = false;
            notes.push("HTRT round trip".into());
        }
    }

    // PGM bit-exact round trip for a binary mask.
    let mask = Mask::new(2, 2, vec![1.0, 0.0, 0.0, 1.0]).unwrap();
    let mbytes = pgm::encode(&mask);
    match pgm::decode(&mbytes) {
        Ok(back) if back.data() == mask.data() && pgm::encode(&back) == mbytes => {}
        _ => {
            ok = false;
            notes.push("PGM round trip".into());
        }
    }

    // Designated malformed-input errors.
    let mut bad_magic = bytes.clone();
    bad_magic[..4].copy_from_slice(b"XXXX");
    if !matches!(container::decode(&bad_magic), Err(htr::Error::BadMagic)) {
        ok = false;
        notes.push("BadMagic".into());
    }
    let mut bad_version = bytes.clone();
    bad_version[4] = 2;
    if !matches!(
        container::decode(&bad_version),
        Err(htr::Error::BadVersion(2))
    ) {
        ok = false;
        notes.push("BadVersion".into());
    }
    let mut bad_dtype = bytes.clone();
    bad_dtype[5] = 1;
    if !matches!(
        container::decode(&bad_dtype),
        Err(htr::Error::UnsupportedDtype(1))
    ) {
        ok = false;
        notes.push("UnsupportedDtype".into());
    }
    let truncated = &bytes[..bytes.len() - 4];
    if !matches!(
        container::decode(truncated),
        Err(htr::Error::TruncatedPayload { .. })
    ) {
        ok = false;
        notes.push("TruncatedPayload".into());
    }
    if !matches!(
        pgm::decode(b"P6\n1 1\n255\n\x00"),
        Err(htr::Error::UnsupportedFormat(_))
    ) {
        ok = false;
        notes.push("UnsupportedFormat".into());
    }
    if !matches!(
        pgm::decode(b"P5\n2 2\n255\n\x00\x00"),
        Err(htr::Error::HeaderMismatch(_))
    ) {
        ok = false;
        notes.push("HeaderMismatch".into());
    }
    if !matches!(jtable::parse("0.5,,0.7\n"), Err(htr::Error::Malformed(_))) {
        ok = false;
        notes.push("JTable blank".into());
    }

    report(
        13,
        "format round trips and malformed-input errors",
        ok,
        &if notes.is_empty() {
            "all formats behave".into()
        } else {
            notes.join("; ")
        },
    );
}
