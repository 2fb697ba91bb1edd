//! Acceptance suite. Each criterion prints one PASS or FAIL line; the process
//! exits non-zero if any criterion fails.
#![allow(clippy::needless_range_loop)]

mod support;

use std::panic::{catch_unwind, AssertUnwindSafe};
use std::time::{Duration, Instant};

use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use statrs::distribution::{ChiSquared, ContinuousCDF};

use comca::cache::{Cache, CacheEntry, CacheStrategy};
use comca::compat::corpus::{count_cooccurrences, count_file};
use comca::compat::{llm_score_pairs, AttributeDistribution, CombineMode, CompatibilityTable, LlmConfig, MatchConfig, ScoreCache};
use comca::config::RunConfig;
use comca::embedding::{EmbeddingKind, EmbeddingMatrix};
use comca::eval::{average_precision, evaluate, AnnotatedAttribute, AnnotatedInstance, AnnotationSet, Label};
use comca::labels::{blend_labels, cache_statistics, normalize_soft_labels, standardized_softmax, LabelMatrix, LabelVariant, SoftLabelMode};
use comca::matrix::Matrix;
use comca::pipeline::run_pipeline;
use comca::rng::sample_objects;
use comca::scoring::{comca_cache_scores, fuse_final, tip_cache_scores, zero_shot_scores, EtaForm, LabelPlacement, NormMode, ScoreKind, ScoreMatrix};
use comca::vocab::{Bucket, PromptType, Vocabulary};

use support::{ablation_margins, fixture, TableClient};

type Check = fn() -> Result<String, String>;

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn within(budget: Duration, start: Instant, what: &str) -> Result<(), String> {
    let spent = start.elapsed();
    ensure(spent < budget, || format!("{what} took {spent:?}, budget {budget:?}"))
}

// ---------------------------------------------------------------- oracles

fn random_unit(rng: &mut ChaCha8Rng, d: usize) -> Vec<f64> {
    loop {
        let v: Vec<f64> = (0..d).map(|_| rng.random_range(-1.0..1.0)).collect();
        let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if n > 1e-3 {
            return v.iter().map(|x| x / n).collect();
        }
    }
}

fn emb(kind: EmbeddingKind, prefix: &str, rows: &[Vec<f64>]) -> EmbeddingMatrix {
    let ids: Vec<String> = (0..rows.len()).map(|i| format!("{prefix}{i}")).collect();
    let refs: Vec<&str> = ids.iter().map(String::as_str).collect();
    EmbeddingMatrix::from_rows(kind, &refs, rows).unwrap()
}

fn scalar_dot(u: &[f64], v: &[f64]) -> f64 {
    let mut s = 0.0;
    for i in 0..u.len() {
        s += u[i] * v[i];
    }
    s.clamp(-1.0, 1.0)
}

fn max_abs_diff(a: &Matrix, b: &[Vec<f64>]) -> f64 {
    let mut worst = 0.0f64;
    for (r, row) in b.iter().enumerate() {
        for (c, v) in row.iter().enumerate() {
            worst = worst.max((a.get(r, c) - v).abs());
        }
    }
    worst
}

fn oracle_fuse(cache: &[Vec<f64>], clip: &[Vec<f64>], lambda: f64, mode: NormMode) -> Vec<Vec<f64>> {
    let mut out = Vec::new();
    for (crow, zrow) in cache.iter().zip(clip) {
        let mut z: Vec<f64> = Vec::new();
        for j in 0..crow.len() {
            z.push(lambda * crow[j] + zrow[j]);
        }
        match mode {
            NormMode::None => {}
            NormMode::MinMax => {
                let mut lo = f64::INFINITY;
                let mut hi = f64::NEG_INFINITY;
                for v in &z {
                    lo = lo.min(*v);
                    hi = hi.max(*v);
                }
                for v in z.iter_mut() {
                    *v = if hi > lo { (*v - lo) / (hi - lo) } else { 0.0 };
                }
            }
            NormMode::MaxSoftmax => {
                let mut m = f64::NEG_INFINITY;
                for v in &z {
                    m = m.max(*v);
                }
                if m <= 1e-12 {
                    for v in z.iter_mut() {
                        *v += 1e-6 - m;
                    }
                    m = 1e-6;
                }
                let scaled: Vec<f64> = z.iter().map(|v| v / m).collect();
                let top = scaled.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                let mut total = 0.0;
                for v in &scaled {
                    total += (v - top).exp();
                }
                z = scaled.iter().map(|v| (v - top).exp() / total).collect();
            }
        }
        out.push(z);
    }
    out
}

fn oracle_equivalence() -> Result<String, String> {
    let start = Instant::now();
    let mut worst = 0.0f64;
    for seed in 0..50u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let d = rng.random_range(2..=16);
        let n_attr = rng.random_range(1..=8);
        let n_cache = rng.random_range(1..=32);
        let n_img = rng.random_range(1..=12);
        let beta = rng.random_range(0.1..5.0);
        let lambda = rng.random_range(0.0..3.0);
        let eta = if rng.random_bool(0.5) { EtaForm::Tip } else { EtaForm::Paper };

        let images: Vec<Vec<f64>> = (0..n_img).map(|_| random_unit(&mut rng, d)).collect();
        let prompts: Vec<Vec<f64>> = (0..n_attr).map(|_| random_unit(&mut rng, d)).collect();
        let cache_rows: Vec<Vec<f64>> = (0..n_cache).map(|_| random_unit(&mut rng, d)).collect();
        let hard: Vec<usize> = (0..n_cache).map(|_| rng.random_range(0..n_attr)).collect();
        let labels: Vec<Vec<f64>> = (0..n_cache)
            .map(|_| {
                let raw: Vec<f64> = (0..n_attr).map(|_| rng.random_range(0.0..1.0)).collect();
                let s: f64 = raw.iter().sum();
                raw.iter().map(|v| v / s).collect()
            })
            .collect();

        let img = emb(EmbeddingKind::Image, "x", &images);
        let txt = emb(EmbeddingKind::Text, "a", &prompts);
        let names: Vec<String> = txt.ids().to_vec();
        let cache = Cache {
            entries: cache_rows
                .iter()
                .zip(&hard)
                .enumerate()
                .map(|(i, (e, a))| CacheEntry {
                    image_id: format!("c{i}"),
                    embedding: e.clone(),
                    source_attribute: Some(*a),
                    sampled_object: None,
                    query_text: None,
                })
                .collect(),
            shots_per_attribute: 1,
            seed,
            strategy: CacheStrategy::Comca,
        };
        let label_matrix = LabelMatrix {
            values: Matrix::from_rows(&labels).unwrap(),
            variant: LabelVariant::Blended,
            alpha: 1.0,
            stats: None,
        };
        let eta_fn = |z: f64| match eta {
            EtaForm::Tip => (-beta * (1.0 - z)).exp(),
            EtaForm::Paper => (1.0 + beta * z).exp(),
        };

        let zs_oracle: Vec<Vec<f64>> = images
            .iter()
            .map(|x| prompts.iter().map(|t| scalar_dot(x, t)).collect())
            .collect();
        let mut tip_oracle = vec![vec![0.0; n_attr]; n_img];
        let mut outside_oracle = vec![vec![0.0; n_attr]; n_img];
        let mut inside_oracle = vec![vec![0.0; n_attr]; n_img];
        for x in 0..n_img {
            for c in 0..n_cache {
                let cos = scalar_dot(&images[x], &cache_rows[c]);
                tip_oracle[x][hard[c]] += eta_fn(cos);
                for a in 0..n_attr {
                    outside_oracle[x][a] += eta_fn(labels[c][a] * cos);
                    inside_oracle[x][a] += labels[c][a] * eta_fn(cos);
                }
            }
        }

        let zs = zero_shot_scores(&img, &txt).map_err(|e| e.to_string())?;
        worst = worst.max(max_abs_diff(&zs.values, &zs_oracle));
        let tip = tip_cache_scores(&img, &cache, &names, beta, eta).map_err(|e| e.to_string())?;
        worst = worst.max(max_abs_diff(&tip.values, &tip_oracle));
        let outside = comca_cache_scores(&img, &cache, &label_matrix, &names, beta, eta, LabelPlacement::Outside).map_err(|e| e.to_string())?;
        worst = worst.max(max_abs_diff(&outside.values, &outside_oracle));
        let inside = comca_cache_scores(&img, &cache, &label_matrix, &names, beta, eta, LabelPlacement::Inside).map_err(|e| e.to_string())?;
        worst = worst.max(max_abs_diff(&inside.values, &inside_oracle));
        for mode in [NormMode::None, NormMode::MinMax, NormMode::MaxSoftmax] {
            let fused = fuse_final(&outside, &zs, lambda, mode).map_err(|e| e.to_string())?;
            worst = worst.max(max_abs_diff(&fused.values, &oracle_fuse(&outside_oracle, &zs_oracle, lambda, mode)));
        }
    }
    ensure(worst <= 1e-6, || format!("max deviation {worst:e}"))?;
    within(Duration::from_secs(10), start, "50 instances")?;
    Ok(format!("50 seeds, max deviation {worst:.1e}, {:?}", start.elapsed()))
}

// ---------------------------------------------------------- compatibility

fn compatibility_pipeline() -> Result<String, String> {
    let dir = fixture("toy");
    let vocab = Vocabulary::load(&dir.join("vocab.json")).map_err(|e| e.to_string())?;
    let expected: Vec<Vec<u64>> = serde_json::from_str(&std::fs::read_to_string(dir.join("expected_phi_db.json")).unwrap()).unwrap();

    let serial = count_cooccurrences(std::fs::File::open(dir.join("corpus.tsv")).map(std::io::BufReader::new).unwrap(), &vocab, MatchConfig::default())
        .map_err(|e| e.to_string())?;
    ensure(serial.records == 50, || format!("{} records", serial.records))?;
    ensure(serial.malformed.is_empty(), || format!("{:?}", serial.malformed))?;
    for (a, row) in expected.iter().enumerate() {
        ensure(serial.phi_db.row(a) == row.as_slice(), || {
            format!("row {a}: got {:?}, hand count {:?}", serial.phi_db.row(a), row)
        })?;
    }
    for shards in [1, 3, 7] {
        let sharded = count_file(&dir.join("corpus.tsv"), &vocab, MatchConfig::default(), shards).map_err(|e| e.to_string())?;
        ensure(sharded.phi_db == serial.phi_db, || format!("{shards} shards disagree"))?;
    }

    let client = TableClient::new(|a, o| ((a * 3 + o * 2) % 11) as f64);
    let cfg = LlmConfig {
        model: "table".into(),
        batch_size: 2,
        retry_backoff_ms: 0,
        ..LlmConfig::default()
    };
    let llm = llm_score_pairs(&vocab, Some(&client), &cfg, &mut ScoreCache::in_memory()).map_err(|e| e.to_string())?;
    ensure(llm.fallbacks.is_empty(), || format!("fallbacks {:?}", llm.fallbacks))?;

    let (n, m) = (vocab.attributes().len(), vocab.objects().len());
    for mode in [CombineMode::Multiply, CombineMode::Sum, CombineMode::DbOnly, CombineMode::LlmOnly] {
        let table = CompatibilityTable::new(
            vocab.attribute_names(),
            vocab.objects().to_vec(),
            serial.phi_db.clone(),
            llm.phi_llm.clone(),
            mode,
        )
        .map_err(|e| e.to_string())?;
        for a in 0..n {
            for o in 0..m {
                let db = expected[a][o] as f64;
                let l = ((a * 3 + o * 2) % 11) as f64;
                ensure(llm.phi_llm.get(a, o) == l, || format!("phi_llm[{a}][{o}] = {}", llm.phi_llm.get(a, o)))?;
                let want = match mode {
                    CombineMode::Multiply => db * l,
                    CombineMode::Sum => db + l,
                    CombineMode::DbOnly => db,
                    CombineMode::LlmOnly => l,
                    CombineMode::Uniform => 1.0,
                };
                ensure(table.phi.get(a, o) == want, || format!("{mode:?} [{a}][{o}]: {} != {want}", table.phi.get(a, o)))?;
            }
        }
    }
    Ok(format!("{n}x{m} table matches the hand count; {} LLM requests", llm.requests))
}

// ---------------------------------------------------------------- sampling

fn sampling_fidelity() -> Result<String, String> {
    let probs = [0.2, 0.3, 0.5];
    let dist = AttributeDistribution {
        attribute: "a".into(),
        probs: probs.to_vec(),
    };
    let k = 100_000;
    let draws = sample_objects(&dist, k, 2024, 3);
    let mut counts = [0usize; 3];
    for d in &draws {
        counts[*d] += 1;
    }
    let chi2: f64 = counts
        .iter()
        .zip(probs)
        .map(|(c, p)| {
            let e = p * k as f64;
            (*c as f64 - e).powi(2) / e
        })
        .sum();
    let critical = ChiSquared::new(2.0).unwrap().inverse_cdf(0.999);
    ensure(chi2 < critical, || format!("chi2 {chi2:.3} >= {critical:.3}, counts {counts:?}"))?;
    ensure(sample_objects(&dist, k, 2024, 3) == draws, || "rerun differs".into())?;
    ensure(sample_objects(&dist, 64, 2025, 3) != draws[..64], || "seed ignored".into())?;
    Ok(format!("chi2 {chi2:.3} < {critical:.3}, counts {counts:?}"))
}

// ------------------------------------------------------------- soft labels

fn soft_label_contracts() -> Result<String, String> {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let mut worst_sum = 0.0f64;
    let mut worst_shift = 0.0f64;
    for _ in 0..200 {
        let rows = rng.random_range(1..=20);
        let cols = rng.random_range(2..=10);
        let raw = Matrix::from_vec(rows, cols, (0..rows * cols).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap();
        let stats = cache_statistics(&raw).map_err(|e| e.to_string())?;
        let soft = standardized_softmax(&raw, stats);
        for mode in [SoftLabelMode::SoftmaxOnly, SoftLabelMode::Standardized] {
            let m = normalize_soft_labels(&raw, mode).map_err(|e| e.to_string())?;
            for r in m.iter_rows() {
                worst_sum = worst_sum.max((r.iter().sum::<f64>() - 1.0).abs());
            }
        }
        let c = rng.random_range(-5.0..5.0);
        let shifted = raw.map(|v| v + c);
        let again = standardized_softmax(&shifted, cache_statistics(&shifted).unwrap());
        for (a, b) in soft.as_slice().iter().zip(again.as_slice()) {
            worst_shift = worst_shift.max((a - b).abs());
        }
    }
    ensure(worst_sum <= 1e-9, || format!("row sum off by {worst_sum:e}"))?;
    ensure(worst_shift <= 1e-9, || format!("shift changed labels by {worst_shift:e}"))?;

    let one_hot = Matrix::from_rows(&[[1.0, 0.0], [0.0, 1.0]]).unwrap();
    let soft = Matrix::from_rows(&[[0.7, 0.3], [0.45, 0.55]]).unwrap();
    for (alpha, want) in [
        (0.0, [[1.0, 0.0], [0.0, 1.0]]),
        (0.6, [[0.82, 0.18], [0.27, 0.73]]),
        (1.0, [[0.7, 0.3], [0.45, 0.55]]),
    ] {
        let b = blend_labels(&one_hot, &soft, alpha).map_err(|e| e.to_string())?;
        for r in 0..2 {
            for c in 0..2 {
                ensure((b.get(r, c) - want[r][c]).abs() <= 1e-12, || format!("alpha {alpha}: [{r}][{c}] = {}", b.get(r, c)))?;
            }
        }
    }
    let sigma = 0.25;
    let raw = Matrix::from_rows(&[[0.0, sigma * 2f64.ln()], [-0.5, 0.5]]).unwrap();
    let third = standardized_softmax(&raw, comca::labels::CacheStats { mu: 0.0, sigma });
    ensure((third.get(0, 0) - 1.0 / 3.0).abs() <= 1e-9 && (third.get(0, 1) - 2.0 / 3.0).abs() <= 1e-9, || {
        format!("logit gap ln 2 gave {:?}", third.row(0))
    })?;
    Ok(format!("row sums within {worst_sum:.1e}, shift {worst_shift:.1e}"))
}

// ----------------------------------------------------------------------- AP

fn brute_force_ap(scores: &[f64], labels: &[Label], ids: &[String]) -> Option<f64> {
    let kept: Vec<usize> = (0..scores.len()).filter(|&i| labels[i] != Label::Unknown).collect();
    // rank of i = 1 + number of kept items ordered before it
    let before = |j: usize, i: usize| scores[j] > scores[i] || (scores[j] == scores[i] && ids[j] < ids[i]);
    let mut precisions = Vec::new();
    for &i in &kept {
        if labels[i] != Label::Positive {
            continue;
        }
        let ahead: Vec<usize> = kept.iter().copied().filter(|&j| j != i && before(j, i)).collect();
        let pos_ahead = ahead.iter().filter(|&&j| labels[j] == Label::Positive).count();
        precisions.push((pos_ahead + 1) as f64 / (ahead.len() + 1) as f64);
    }
    (!precisions.is_empty()).then(|| precisions.iter().sum::<f64>() / precisions.len() as f64)
}

fn ap_correctness() -> Result<String, String> {
    let mut rng = ChaCha8Rng::seed_from_u64(99);
    let mut worst = 0.0f64;
    let mut scored = 0;
    for _ in 0..1000 {
        let n = rng.random_range(1..=12);
        let scores: Vec<f64> = (0..n)
            .map(|_| if rng.random_bool(0.3) { rng.random_range(0..4) as f64 } else { rng.random_range(-1.0..1.0) })
            .collect();
        let labels: Vec<Label> = (0..n)
            .map(|_| match rng.next_u32() % 3 {
                0 => Label::Positive,
                1 => Label::Negative,
                _ => Label::Unknown,
            })
            .collect();
        let ids: Vec<String> = (0..n).map(|i| format!("id{:02}", (i * 7) % 13)).collect();
        match (average_precision(&scores, &labels, &ids), brute_force_ap(&scores, &labels, &ids)) {
            (Ok(a), Some(b)) => {
                worst = worst.max((a - b).abs());
                scored += 1;
            }
            (Err(comca::Error::NoPositives), None) => {}
            (a, b) => return Err(format!("{a:?} vs oracle {b:?} on {scores:?} {labels:?}")),
        }
    }
    ensure(worst <= 1e-12, || format!("deviation {worst:e}"))?;

    let n = 20;
    let n_attr = 5;
    let truth: Vec<Vec<i8>> = (0..n)
        .map(|i| (0..n_attr).map(|a| [1i8, -1, 0][(i * 7 + a * 3) % 3]).collect())
        .collect();
    let ann = AnnotationSet::new(
        (0..n_attr)
            .map(|a| AnnotatedAttribute {
                name: format!("a{a}"),
                prompt_type: PromptType::Is,
                bucket: Bucket::Head,
            })
            .collect(),
        truth
            .iter()
            .enumerate()
            .map(|(i, l)| AnnotatedInstance {
                id: format!("i{i}"),
                labels: l.iter().map(|v| Label::try_from(*v).unwrap()).collect(),
            })
            .collect(),
    )
    .unwrap();
    let perfect: Vec<Vec<f64>> = truth
        .iter()
        .map(|r| r.iter().map(|v| if *v == 1 { 1.0 } else { 0.0 }).collect())
        .collect();
    let scores = ScoreMatrix::new(
        ann.instance_ids(),
        ann.attribute_names(),
        Matrix::from_rows(&perfect).unwrap(),
        ScoreKind::Fused,
    )
    .unwrap();
    let map = evaluate(&scores, &ann).map_err(|e| e.to_string())?.map;
    ensure(map == 1.0, || format!("perfect mAP {map}"))?;
    Ok(format!("1000 vectors, {scored} scored within {worst:.1e}, the rest agree on no positives; perfect mAP 1.0"))
}

// ------------------------------------------------------------------ golden

fn golden_run() -> Result<String, String> {
    let dir = fixture("golden");
    let expected: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(dir.join("expected.json")).unwrap()).unwrap();
    let run_dir = tempfile::tempdir().unwrap();
    let mut cfg = RunConfig::load(&dir.join("config.json")).map_err(|e| e.to_string())?;
    let p = &mut cfg.paths;
    p.vocab = Some(dir.join("vocab.json"));
    p.compat = Some(dir.join("compat.json"));
    p.pool = Some(dir.join("pool.emb"));
    p.queries = Some(dir.join("queries.emb"));
    p.images = Some(dir.join("images.emb"));
    p.prompts = Some(dir.join("prompts.emb"));
    p.attr_text = Some(dir.join("attr_text.emb"));
    p.annotations = Some(dir.join("annotations.json"));
    p.run_dir = Some(run_dir.path().join("run"));
    let report = run_pipeline(&cfg, None, false).map_err(|e| e.to_string())?;

    let golden = expected["map"].as_f64().unwrap();
    ensure(report.eval.map == golden, || format!("mAP {} != golden {golden}", report.eval.map))?;
    let zs = expected["zero_shot_map"].as_f64().unwrap();
    ensure(report.zero_shot_eval.map == zs, || format!("zero-shot mAP {} != {zs}", report.zero_shot_eval.map))?;
    let fused = ScoreMatrix::load(&run_dir.path().join("run/fused.json")).map_err(|e| e.to_string())?;
    let want: Vec<Vec<f64>> = serde_json::from_value(expected["fused"].clone()).unwrap();
    let dev = max_abs_diff(&fused.values, &want);
    ensure(dev <= 1e-9, || format!("fused scores deviate by {dev:e}"))?;
    Ok(format!("mAP {golden} (zero-shot {zs}), scores within {dev:.1e}"))
}

// ---------------------------------------------------------------- ablation

fn directional_ablation() -> Result<String, String> {
    let start = Instant::now();
    let seeds = [1u64, 2, 3, 4, 5];
    let mut fused_margin = 0.0;
    let mut soft_margin = 0.0;
    let mut detail = Vec::new();
    for seed in seeds {
        let m = ablation_margins(seed)?;
        fused_margin += m.fused - m.zero_shot;
        soft_margin += m.fused - m.one_hot;
        detail.push(format!("{:.3}/{:.3}/{:.3}", m.zero_shot, m.one_hot, m.fused));
    }
    within(Duration::from_secs(30), start, "ablation")?;
    ensure(fused_margin > 0.0, || format!("fused - zero-shot = {fused_margin:.4} [{}]", detail.join(" ")))?;
    ensure(soft_margin > 0.0, || format!("soft - one-hot = {soft_margin:.4} [{}]", detail.join(" ")))?;
    Ok(format!(
        "summed margins: fused-zs {fused_margin:+.4}, soft-onehot {soft_margin:+.4}; zs/onehot/soft per seed [{}]",
        detail.join(" ")
    ))
}

// ---------------------------------------------------------------- defaults

fn hyperparameter_defaults() -> Result<String, String> {
    let v = serde_json::to_value(RunConfig::default()).unwrap();
    for (k, want) in [
        ("lambda", serde_json::json!(1.17)),
        ("beta", serde_json::json!(1.0)),
        ("alpha", serde_json::json!(0.6)),
        ("k", serde_json::json!(16)),
    ] {
        ensure(v[k] == want, || format!("{k} = {} != {want}", v[k]))?;
    }
    let text = serde_json::to_string(&RunConfig::default()).unwrap();
    ensure(text.contains("\"lambda\":1.17,") && text.contains("\"alpha\":0.6,") && text.contains("\"k\":16,"), || text.clone())?;
    Ok("lambda 1.17, beta 1.0, alpha 0.6, k 16".into())
}

fn main() {
    let checks: [(&str, Check); 8] = [
        ("oracle equivalence", oracle_equivalence),
        ("compatibility pipeline", compatibility_pipeline),
        ("sampling fidelity", sampling_fidelity),
        ("soft-label contracts", soft_label_contracts),
        ("AP correctness", ap_correctness),
        ("end-to-end golden run", golden_run),
        ("directional ablation", directional_ablation),
        ("hyperparameter defaults", hyperparameter_defaults),
    ];
    let mut failed = 0;
    for (name, check) in checks {
        let outcome = catch_unwind(AssertUnwindSafe(check)).unwrap_or_else(|p| {
            Err(p
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_else(|| "panic".into()))
        });
        match outcome {
            Ok(msg) => println!("PASS {name}: {msg}"),
            Err(msg) => {
                failed += 1;
                println!("FAIL {name}: {msg}");
            }
        }
    }
    println!("{} of {} criteria passed", 8 - failed, 8);
    if failed > 0 {
        std::process::exit(1);
    }
}
