//! Acceptance gate: one pass/fail line per criterion. Criteria 1-8 are
//! exact property suites; criteria 9-12 are directional trends on the
//! default desk-scale experiment over three seeds.

use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use tempmerge::corpuslab::{CorpusConfig, World};
use tempmerge::encoder::{Embedding, EncoderParams, LoraAdapter};
use tempmerge::evalkit::{ndcg_at_k, recall_at_k, Qrels};
use tempmerge::experiment::{run_seed, spearman_against_position, ExperimentConfig, SeedOutcome};
use tempmerge::mergekit::{merge_average, merge_sequence, weight_change};
use tempmerge::retrieval::{build_index, ensemble_search, search, RetrievalRun, ScoredHit};
use tempmerge::timeparse::parse_query;
use tempmerge::trainlab::{
    batch_loss, info_nce_from_sims, loss_gradients, router_loss, router_loss_grads,
    RouterParams, TrainConfig, TrainExample, TrainMode,
};

fn verdict(criterion: usize, name: &str, pass: bool) {
    println!(
        "criterion {criterion:>2}: {} - {name}",
        if pass { "PASS" } else { "FAIL" }
    );
    assert!(pass, "criterion {criterion} failed: {name}");
}

fn random_params(vocab: usize, dim: usize, seed: u64) -> EncoderParams {
    EncoderParams::init(vocab, dim, 0.4, seed, [9u8; 32])
}

fn random_batch(rng: &mut ChaCha8Rng, vocab: u32, count: usize) -> Vec<TrainExample> {
    (0..count)
        .map(|i| TrainExample {
            query_tokens: (0..rng.gen_range(2..6)).map(|_| rng.gen_range(1..vocab)).collect(),
            positive_tokens: (0..rng.gen_range(3..8)).map(|_| rng.gen_range(1..vocab)).collect(),
            query_id: format!("q{i}"),
        })
        .collect()
}

#[test]
fn criterion_01_gradient_correctness() {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(100);
    let h = 1e-6;
    let mut checked = 0usize;
    let mut ok = true;

    // encoder gradients over all three training modes
    for draw in 0..70 {
        let mode = match draw % 3 {
            0 => TrainMode::Full,
            1 => TrainMode::Lora,
            _ => TrainMode::FullRegularized,
        };
        let params = random_params(12, 4, 200 + draw as u64);
        let mut adapter = None;
        if mode == TrainMode::Lora {
            let mut a = LoraAdapter::init(4, 2, 8.0, 300 + draw as u64);
            for v in a.b.data.iter_mut() {
                *v = rng.gen_range(-0.3..0.3);
            }
            adapter = Some(a);
        }
        let batch = random_batch(&mut rng, 12, 6);
        let config = TrainConfig { negatives: 2, mode, ..TrainConfig::default() };
        let step = 2;
        let (_, grads) = loss_gradients(&params, adapter.as_ref(), &batch, &config, step).unwrap();
        let tensors: Vec<(&str, usize)> = if mode == TrainMode::Lora {
            let ad = adapter.as_ref().unwrap();
            vec![("lora_a", ad.a.data.len()), ("lora_b", ad.b.data.len())]
        } else {
            vec![
                ("embed", params.embed.data.len()),
                ("proj_w", params.proj_w.data.len()),
                ("proj_b", params.proj_b.len()),
            ]
        };
        let (name, len) = tensors[rng.gen_range(0..tensors.len())];
        let idx = rng.gen_range(0..len);
        let eval = |delta: f64| -> f64 {
            let mut p = params.clone();
            let mut a = adapter.clone();
            match name {
                "lora_a" => a.as_mut().unwrap().a.data[idx] += delta,
                "lora_b" => a.as_mut().unwrap().b.data[idx] += delta,
                _ => p.tensor_mut(name).unwrap()[idx] += delta,
            }
            batch_loss(&p, a.as_ref(), &batch, &config, step).unwrap()
        };
        let fd = (eval(h) - eval(-h)) / (2.0 * h);
        let analytic = match name {
            "embed" => grads.embed.data[idx],
            "proj_w" => grads.proj_w.data[idx],
            "proj_b" => grads.proj_b[idx],
            "lora_a" => grads.lora_a.as_ref().unwrap().data[idx],
            "lora_b" => grads.lora_b.as_ref().unwrap().data[idx],
            _ => unreachable!(),
        };
        let rel = (analytic - fd).abs() / analytic.abs().max(fd.abs()).max(1e-8);
        ok &= rel < 1e-4;
        checked += 1;
    }

    // router gradients
    for draw in 0..30 {
        let d = 5;
        let router = RouterParams::init(d, 4, 400 + draw as u64);
        let xs: Vec<Vec<f64>> =
            (0..8).map(|_| (0..d).map(|_| rng.gen_range(-1.0..1.0)).collect()).collect();
        let ys: Vec<usize> = (0..8).map(|_| rng.gen_range(0..2)).collect();
        let (_, grads) = router_loss_grads(&router, &xs, &ys);
        let tensor = rng.gen_range(0..4);
        let len = match tensor {
            0 => router.w1.data.len(),
            1 => router.b1.len(),
            2 => router.w2.data.len(),
            _ => router.b2.len(),
        };
        let idx = rng.gen_range(0..len);
        let eval = |delta: f64| {
            let mut r = router.clone();
            match tensor {
                0 => r.w1.data[idx] += delta,
                1 => r.b1[idx] += delta,
                2 => r.w2.data[idx] += delta,
                _ => r.b2[idx] += delta,
            }
            router_loss(&r, &xs, &ys)
        };
        let fd = (eval(h) - eval(-h)) / (2.0 * h);
        let analytic = match tensor {
            0 => grads.w1.data[idx],
            1 => grads.b1[idx],
            2 => grads.w2.data[idx],
            _ => grads.b2[idx],
        };
        let rel = (analytic - fd).abs() / analytic.abs().max(fd.abs()).max(1e-8);
        ok &= rel < 1e-4;
        checked += 1;
    }

    ok &= checked == 100;
    ok &= start.elapsed().as_secs() < 30;
    verdict(1, "analytic gradients match finite differences (100 draws, < 30 s)", ok);
}

#[test]
fn criterion_02_info_nce_closed_form() {
    let sims = [0.0; 6]; // one positive, five uniform negatives
    let loss = info_nce_from_sims(&sims, 1.0);
    let ok = (loss - 6.0_f64.ln()).abs() < 1e-12 && (loss - 1.791759).abs() < 1e-6;
    verdict(2, "uniform InfoNCE with 5 negatives equals ln 6", ok);
}

#[test]
fn criterion_03_merge_algebra() {
    let mut ok = true;
    let models: Vec<EncoderParams> = (0..7).map(|i| random_params(9, 4, 500 + i)).collect();

    // idempotence (exact for power-of-two member counts)
    let merged = merge_average(&vec![models[0].clone(); 4]).unwrap();
    ok &= merged == models[0];

    // permutation invariance
    let forward = merge_average(&models).unwrap();
    let mut reversed = models.clone();
    reversed.reverse();
    let backward = merge_average(&reversed).unwrap();
    for name in EncoderParams::tensor_names() {
        for (a, b) in forward.tensor(name).unwrap().iter().zip(backward.tensor(name).unwrap()) {
            ok &= (a - b).abs() < 1e-12;
        }
    }

    // symmetry
    let mut neg = models[0].clone();
    for name in EncoderParams::tensor_names() {
        for v in neg.tensor_mut(name).unwrap() {
            *v = -*v;
        }
    }
    let zero = merge_average(&[models[0].clone(), neg]).unwrap();
    for name in EncoderParams::tensor_names() {
        ok &= zero.tensor(name).unwrap().iter().all(|&v| v == 0.0);
    }

    // sequence agrees with direct merge
    let seq = merge_sequence(&models).unwrap();
    for name in EncoderParams::tensor_names() {
        for (a, b) in seq[6].tensor(name).unwrap().iter().zip(forward.tensor(name).unwrap()) {
            ok &= (a - b).abs() < 1e-12;
        }
    }

    verdict(3, "merge idempotence, permutation invariance, symmetry, sequence agreement", ok);
}

#[test]
fn criterion_04_norm_convexity() {
    let mut rng = ChaCha8Rng::seed_from_u64(600);
    let base = random_params(10, 5, 601);
    let mut ok = true;
    for _ in 0..50 {
        let members: Vec<EncoderParams> = (0..7)
            .map(|_| {
                let mut p = base.clone();
                for name in EncoderParams::tensor_names() {
                    for v in p.tensor_mut(name).unwrap() {
                        *v += rng.gen_range(-1.0..1.0);
                    }
                }
                p
            })
            .collect();
        let merged = merge_average(&members).unwrap();
        let merged_change = weight_change(&base, &merged).unwrap().total;
        let mean: f64 = members
            .iter()
            .map(|m| weight_change(&base, m).unwrap().total)
            .sum::<f64>()
            / members.len() as f64;
        ok &= merged_change <= mean + 1e-9;
    }
    verdict(4, "merged weight change never exceeds the member mean", ok);
}

#[test]
fn criterion_05_metric_oracles() {
    let mut rng = ChaCha8Rng::seed_from_u64(700);
    let mut ok = true;

    // closed form: single relevant document at rank 2
    {
        let mut results = std::collections::BTreeMap::new();
        results.insert(
            "q".to_string(),
            vec![
                ScoredHit { passage_id: "p9".into(), score: 2.0, rank: 1 },
                ScoredHit { passage_id: "p1".into(), score: 1.0, rank: 2 },
            ],
        );
        let run = RetrievalRun { results, strategy: "single".into(), k: 5 };
        let mut qrels = Qrels::default();
        qrels.relevant.insert("q".into(), ["p1".to_string()].into());
        let n = ndcg_at_k(&run, &qrels, 5).unwrap();
        ok &= (n - 1.0 / 3.0_f64.log2()).abs() < 1e-12;
    }

    for _ in 0..1000 {
        let depth = rng.gen_range(1..12);
        let mut ids: Vec<String> = (0..25).map(|i| format!("p{i:02}")).collect();
        for i in (1..ids.len()).rev() {
            ids.swap(i, rng.gen_range(0..=i));
        }
        ids.truncate(depth);
        let rel: std::collections::BTreeSet<String> =
            (0..rng.gen_range(1..5)).map(|_| format!("p{:02}", rng.gen_range(0..25))).collect();
        let k = rng.gen_range(1..10);

        let mut results = std::collections::BTreeMap::new();
        results.insert(
            "q".to_string(),
            ids.iter()
                .enumerate()
                .map(|(i, id)| ScoredHit { passage_id: id.clone(), score: -(i as f64), rank: i + 1 })
                .collect(),
        );
        let run = RetrievalRun { results, strategy: "single".into(), k: 20 };
        let mut qrels = Qrels::default();
        qrels.relevant.insert("q".into(), rel.clone());

        // brute force
        let hits = ids.iter().take(k).filter(|id| rel.contains(*id)).count();
        let recall_oracle = hits as f64 / rel.len() as f64;
        let mut dcg = 0.0;
        for (i, id) in ids.iter().take(k).enumerate() {
            if rel.contains(id) {
                dcg += 1.0 / ((i + 2) as f64).log2();
            }
        }
        let mut idcg = 0.0;
        for i in 0..rel.len().min(k) {
            idcg += 1.0 / ((i + 2) as f64).log2();
        }
        ok &= recall_at_k(&run, &qrels, k).unwrap() == recall_oracle;
        ok &= (ndcg_at_k(&run, &qrels, k).unwrap() - dcg / idcg).abs() < 1e-14;
    }
    verdict(5, "Recall@k and nDCG@k match brute force on 1000 instances", ok);
}

#[test]
fn criterion_06_search_exactness() {
    let mut rng = ChaCha8Rng::seed_from_u64(800);
    let mut ok = true;
    for trial in 0..1000 {
        let d = rng.gen_range(2..6);
        let n = rng.gen_range(1..40);
        let params = random_params(15, d, 900 + trial);
        let passages: Vec<(String, Vec<u32>)> = (0..n)
            .map(|i| {
                (
                    format!("p{i:02}"),
                    (0..rng.gen_range(1..6)).map(|_| rng.gen_range(1..15)).collect(),
                )
            })
            .collect();
        let index = build_index(&params, &passages).unwrap();
        let q = Embedding((0..d).map(|_| rng.gen_range(-1.0..1.0)).collect());
        let k = rng.gen_range(1..=n + 3);
        let hits = search(&index, &q, k).unwrap();

        let mut oracle: Vec<(String, f64)> = index
            .ids
            .iter()
            .enumerate()
            .map(|(row, id)| {
                let score: f64 =
                    index.matrix.row(row).iter().zip(&q.0).map(|(a, b)| a * b).sum();
                (id.clone(), score)
            })
            .collect();
        oracle.sort_by(|a, b| b.1.partial_cmp(&a.1).unwrap().then_with(|| a.0.cmp(&b.0)));
        ok &= hits.len() == k.min(n);
        for (hit, (id, score)) in hits.iter().zip(&oracle) {
            ok &= &hit.passage_id == id && hit.score == *score;
        }
    }
    verdict(6, "top-k equals the full-sort oracle on 1000 triples", ok);
}

#[test]
fn criterion_07_parser_round_trip() {
    let config = CorpusConfig {
        entity_count: 24,
        facts_per_entity: 12,
        year_range: (1900, 2000),
        queries_per_specifier: 40,
        nontemporal_query_count: 40,
        chunk_size: 100,
        seed: 23,
    };
    let world = World::generate(&config).unwrap();
    let mut ok = true;
    let mut temporal = 0usize;
    let mut seen_specs = std::collections::BTreeSet::new();
    for q in &world.queries {
        let Some(spec) = q.specifier else { continue };
        temporal += 1;
        seen_specs.insert(spec);
        match parse_query(&q.text) {
            Some((parsed_spec, parsed)) => {
                ok &= parsed_spec == spec && Some(parsed) == q.constraint;
            }
            None => ok = false,
        }
    }
    ok &= temporal > 0 && seen_specs.len() == 7;
    verdict(7, "100% specifier and constraint recovery on generated queries", ok);
}

#[test]
fn criterion_08_ensemble_affine_invariance() {
    let pa = random_params(20, 6, 1000);
    let pb = random_params(20, 6, 1001);
    let mut rng = ChaCha8Rng::seed_from_u64(1002);
    let passages: Vec<(String, Vec<u32>)> = (0..30)
        .map(|i| {
            (
                format!("p{i:02}"),
                (0..rng.gen_range(2..7)).map(|_| rng.gen_range(1..20)).collect(),
            )
        })
        .collect();
    let ia = build_index(&pa, &passages).unwrap();
    let ib = build_index(&pb, &passages).unwrap();
    let mut ok = true;
    for trial in 0..20 {
        let query: Vec<u32> = (0..3).map(|_| rng.gen_range(1..20)).collect();
        let baseline = ensemble_search(&[(&pa, &ia), (&pb, &ib)], &query, 30).unwrap();

        // positive affine transform of one member's raw scores: scale the
        // rows (a > 0); min-max normalization also kills any shift b
        let a = rng.gen_range(0.1..5.0);
        let mut scaled = ib.clone();
        for v in scaled.matrix.data.iter_mut() {
            *v *= a;
        }
        let transformed = ensemble_search(&[(&pa, &ia), (&pb, &scaled)], &query, 30).unwrap();
        let ids: Vec<&str> = baseline.iter().map(|h| h.passage_id.as_str()).collect();
        let ids2: Vec<&str> = transformed.iter().map(|h| h.passage_id.as_str()).collect();
        ok &= ids == ids2;
        let _ = trial;
    }
    verdict(8, "ensemble ranking invariant to positive affine score transforms", ok);
}

#[test]
fn criteria_09_to_12_directional_trends() {
    let config = ExperimentConfig::default();
    let start = Instant::now();
    let outcomes: Vec<SeedOutcome> = config
        .seeds
        .iter()
        .map(|&seed| run_seed(&config, seed).unwrap())
        .collect();
    eprintln!(
        "desk-scale experiment: {} seeds in {:.1} s",
        outcomes.len(),
        start.elapsed().as_secs_f64()
    );
    for o in &outcomes {
        eprintln!(
            "seed {}: base t={:.3} n={:.3} | pooled t={:.3} n={:.3} | tsm t={:.3} n={:.3}",
            o.seed,
            o.base_temporal_r20,
            o.base_nontemporal_r20,
            o.pooled_temporal_r20,
            o.pooled_nontemporal_r20,
            o.tsm_temporal_r20,
            o.tsm_nontemporal_r20,
        );
        assert!(o.convexity_holds, "norm convexity must hold on every run");
    }
    let majority = outcomes.len() / 2 + 1;

    // criterion 9: fine-tuning helps temporal, hurts non-temporal
    let fig1 = outcomes
        .iter()
        .filter(|o| {
            o.base_nontemporal_r20 - o.pooled_nontemporal_r20 >= 0.05
                && o.pooled_temporal_r20 - o.base_temporal_r20 >= 0.10
        })
        .count();
    verdict(
        9,
        "pooled FT: non-temporal drops >= 5 pts, temporal gains >= 10 pts (majority of seeds)",
        fig1 >= majority,
    );

    // criterion 10: TSM keeps both sides
    let balance = outcomes
        .iter()
        .filter(|o| {
            o.tsm_temporal_r20 >= o.base_temporal_r20 + 0.10
                && o.tsm_nontemporal_r20 >= o.pooled_nontemporal_r20 + 0.05
        })
        .count();
    verdict(
        10,
        "TSM gains >= 10 temporal pts over base and >= 5 non-temporal pts over pooled FT (majority)",
        balance >= majority,
    );

    // criterion 11: recall rises with merge count
    let rising = outcomes
        .iter()
        .filter(|o| spearman_against_position(&o.sequence_temporal_r20) > 0.5)
        .count();
    for o in &outcomes {
        eprintln!(
            "seed {}: sequence rho {:.3} ({:?})",
            o.seed,
            spearman_against_position(&o.sequence_temporal_r20),
            o.sequence_temporal_r20
                .iter()
                .map(|v| (v * 1000.0).round() / 1000.0)
                .collect::<Vec<_>>()
        );
    }
    verdict(
        11,
        "merge-sequence temporal Recall@20 rises with merge count (rho > 0.5 in >= 2 of 3 seeds)",
        rising >= 2,
    );

    // criterion 12: the merge covers every specifier group
    let mut covered_all = true;
    for o in &outcomes {
        let mut wins = 0usize;
        let mut cells = 0usize;
        for (model_spec, breakdown) in &o.specialist_breakdowns {
            for (group, recall) in &breakdown.per_specifier {
                if group == model_spec {
                    continue;
                }
                cells += 1;
                let tsm = o.tsm_breakdown.per_specifier.get(group).copied().unwrap_or(0.0);
                if tsm >= *recall {
                    wins += 1;
                }
            }
        }
        eprintln!("seed {}: tsm covers {wins}/{cells} away cells", o.seed);
        covered_all &= (wins as f64) >= 0.8 * cells as f64;
    }
    verdict(
        12,
        "TSM matches specialists on away specifier groups (>= 80% of cells per seed)",
        covered_all,
    );
}
