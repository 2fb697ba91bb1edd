//! Fixtures and synthetic data shared by the acceptance suite.
#![allow(clippy::needless_range_loop)]

use std::path::PathBuf;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use regex::Regex;

use comca::cache::CacheStrategy;
use comca::compat::{ChatClient, CombineMode, CompatibilityTable, CountMatrix};
use comca::embedding::{EmbeddingKind, EmbeddingMatrix};
use comca::eval::{evaluate, AnnotatedAttribute, AnnotatedInstance, AnnotationSet, Label};
use comca::matrix::Matrix;
use comca::pipeline::{run_scoring, ScoringInputs};
use comca::scoring::HyperParams;
use comca::vocab::{pair_id, AttributeEntry, Bucket, PromptType, Vocabulary};

pub fn fixture(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures").join(name)
}

/// Answers compatibility prompts from a fixed `(attribute, object)` table.
pub struct TableClient {
    score: fn(usize, usize) -> f64,
    attribute: Regex,
    category: Regex,
    attributes: Vec<String>,
    objects: Vec<String>,
}

impl TableClient {
    pub fn new(score: fn(usize, usize) -> f64) -> Self {
        let vocab: serde_json::Value =
            serde_json::from_str(&std::fs::read_to_string(fixture("toy/vocab.json")).unwrap()).unwrap();
        TableClient {
            score,
            attribute: Regex::new(r"The attribute is: (.+)\.\s*$").unwrap(),
            category: Regex::new(r"(?m)^(\d+)\. (.+)$").unwrap(),
            attributes: vocab["attributes"]
                .as_array()
                .unwrap()
                .iter()
                .map(|a| a["name"].as_str().unwrap().to_string())
                .collect(),
            objects: vocab["objects"]
                .as_array()
                .unwrap()
                .iter()
                .map(|o| o.as_str().unwrap().to_string())
                .collect(),
        }
    }
}

impl ChatClient for TableClient {
    fn model_id(&self) -> &str {
        "table"
    }

    fn complete(&self, prompt: &str) -> comca::Result<String> {
        let attr = &self.attribute.captures(prompt).expect("attribute line")[1];
        let a = self.attributes.iter().position(|n| n == attr).expect("known attribute");
        let listing = prompt.split("is the following:").nth(1).expect("category list");
        let mut out = String::from("Sure, here are the scores:\n");
        for caps in self.category.captures_iter(listing) {
            let o = self.objects.iter().position(|n| *n == caps[2]).expect("known object");
            out.push_str(&format!("{}. {}: {}\n", &caps[1], &caps[2], (self.score)(a, o)));
        }
        Ok(out)
    }
}

pub struct Margins {
    pub zero_shot: f64,
    pub one_hot: f64,
    pub fused: f64,
}

const DIM: usize = 32;
const ATTRS: usize = 6;
const OBJECTS: usize = 4;
const SIGMA: f64 = 0.1;
const POOL: usize = 600;
const TEST: usize = 200;
const PRESENT_COMPATIBLE: f64 = 0.6;
const PRESENT_OTHER: f64 = 0.08;
/// Text embeddings sit off their attribute direction by these weights.
const PROMPT_SKEW: f64 = 0.8;
const TEMPLATE_SKEW: f64 = 0.2;
/// Extra per-pair offset on retrieval queries, so some shots miss.
const QUERY_NOISE: f64 = 2.0;

fn gaussian(rng: &mut ChaCha8Rng) -> f64 {
    rng.sample(StandardNormal)
}

fn unit(v: Vec<f64>) -> Vec<f64> {
    let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    v.into_iter().map(|x| x / n).collect()
}

fn direction(rng: &mut ChaCha8Rng) -> Vec<f64> {
    unit((0..DIM).map(|_| gaussian(rng)).collect())
}

fn combine(parts: &[(f64, &[f64])]) -> Vec<f64> {
    let mut out = vec![0.0; DIM];
    for (w, v) in parts {
        out.iter_mut().zip(v.iter()).for_each(|(o, x)| *o += w * x);
    }
    out
}

struct World {
    attr_dirs: Vec<Vec<f64>>,
    obj_dirs: Vec<Vec<f64>>,
    /// `p(attribute present | object)`
    presence: Vec<Vec<f64>>,
}

impl World {
    fn new(rng: &mut ChaCha8Rng) -> Self {
        let attr_dirs = (0..ATTRS).map(|_| direction(rng)).collect();
        let obj_dirs = (0..OBJECTS).map(|_| direction(rng)).collect();
        let presence = (0..ATTRS)
            .map(|a| (0..OBJECTS).map(|o| if (a + o) % 3 == 0 { PRESENT_COMPATIBLE } else { PRESENT_OTHER }).collect())
            .collect();
        World {
            attr_dirs,
            obj_dirs,
            presence,
        }
    }

    /// One image: its object, its attribute set, and its embedding.
    fn sample(&self, rng: &mut ChaCha8Rng) -> (usize, Vec<bool>, Vec<f64>) {
        let o = rng.random_range(0..OBJECTS);
        let mut present: Vec<bool> = (0..ATTRS).map(|a| rng.random_bool(self.presence[a][o])).collect();
        if !present.contains(&true) {
            present[rng.random_range(0..ATTRS)] = true;
        }
        let mut v = self.obj_dirs[o].clone();
        for a in (0..ATTRS).filter(|&a| present[a]) {
            v.iter_mut().zip(&self.attr_dirs[a]).for_each(|(x, d)| *x += d);
        }
        v.iter_mut().for_each(|x| *x += SIGMA * gaussian(rng));
        (o, present, unit(v))
    }
}

fn matrix_of(kind: EmbeddingKind, ids: &[String], rows: &[Vec<f64>]) -> EmbeddingMatrix {
    let refs: Vec<&str> = ids.iter().map(String::as_str).collect();
    EmbeddingMatrix::from_rows(kind, &refs, rows).unwrap()
}

/// mAP of zero-shot, one-hot-labeled cache, and soft-labeled cache scoring on
/// one synthetic draw.
pub fn ablation_margins(seed: u64) -> Result<Margins, String> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let world = World::new(&mut rng);

    let attr_names: Vec<String> = (0..ATTRS).map(|a| format!("attr{a}")).collect();
    let obj_names: Vec<String> = (0..OBJECTS).map(|o| format!("obj{o}")).collect();
    let vocab = Vocabulary::new(
        attr_names.iter().map(|n| AttributeEntry::new(n.clone())).collect(),
        obj_names.clone(),
    )
    .map_err(|e| e.to_string())?;

    // text side: a shared offset plus per-attribute misalignment
    let gap = direction(&mut rng);
    let skew: Vec<Vec<f64>> = (0..ATTRS).map(|_| direction(&mut rng)).collect();
    let template_skew: Vec<Vec<f64>> = (0..ATTRS).map(|_| direction(&mut rng)).collect();
    let prompts: Vec<Vec<f64>> = (0..ATTRS)
        .map(|a| unit(combine(&[(1.0, &world.attr_dirs[a]), (0.5, &gap), (PROMPT_SKEW, &skew[a])])))
        .collect();
    let attr_text: Vec<Vec<f64>> = (0..ATTRS)
        .map(|a| unit(combine(&[(1.0, &world.attr_dirs[a]), (0.5, &gap), (TEMPLATE_SKEW, &template_skew[a])])))
        .collect();
    let mut pair_ids = Vec::new();
    let mut queries = Vec::new();
    for a in 0..ATTRS {
        for o in 0..OBJECTS {
            pair_ids.push(pair_id(&attr_names[a], &obj_names[o]));
            queries.push(unit(combine(&[
                (1.0, &world.attr_dirs[a]),
                (1.0, &world.obj_dirs[o]),
                (0.5, &gap),
                (PROMPT_SKEW, &skew[a]),
                (QUERY_NOISE, &direction(&mut rng)),
            ])));
        }
    }

    let mut counts = vec![vec![0u64; OBJECTS]; ATTRS];
    let mut pool = Vec::new();
    for _ in 0..POOL {
        let (o, present, v) = world.sample(&mut rng);
        for a in (0..ATTRS).filter(|&a| present[a]) {
            counts[a][o] += 1;
        }
        pool.push(v);
    }
    let mut test = Vec::new();
    let mut truth = Vec::new();
    for _ in 0..TEST {
        let (_, present, v) = world.sample(&mut rng);
        test.push(v);
        truth.push(present);
    }

    let compat = CompatibilityTable::new(
        attr_names.clone(),
        obj_names.clone(),
        CountMatrix::from_rows(&counts).unwrap(),
        Matrix::filled(ATTRS, OBJECTS, 5.0),
        CombineMode::Multiply,
    )
    .map_err(|e| e.to_string())?;
    let pool_ids: Vec<String> = (0..POOL).map(|i| format!("p{i:04}")).collect();
    let test_ids: Vec<String> = (0..TEST).map(|i| format!("t{i:04}")).collect();
    let pool = matrix_of(EmbeddingKind::Image, &pool_ids, &pool);
    let images = matrix_of(EmbeddingKind::Image, &test_ids, &test);
    let prompts = matrix_of(EmbeddingKind::Text, &attr_names, &prompts);
    let attr_text = matrix_of(EmbeddingKind::Text, &attr_names, &attr_text);
    let queries = matrix_of(EmbeddingKind::Text, &pair_ids, &queries);

    let annotations = AnnotationSet::new(
        attr_names
            .iter()
            .map(|n| AnnotatedAttribute {
                name: n.clone(),
                prompt_type: PromptType::Is,
                bucket: Bucket::Head,
            })
            .collect(),
        truth
            .iter()
            .zip(&test_ids)
            .map(|(present, id)| AnnotatedInstance {
                id: id.clone(),
                labels: present
                    .iter()
                    .map(|p| if *p { Label::Positive } else { Label::Negative })
                    .collect(),
            })
            .collect(),
    )
    .map_err(|e| e.to_string())?;

    let inputs = ScoringInputs {
        vocab: &vocab,
        compat: Some(&compat),
        pool: &pool,
        queries: Some(&queries),
        images: &images,
        prompts: &prompts,
        attr_text: &attr_text,
    };
    let soft = HyperParams::default();
    let hard = HyperParams { alpha: 0.0, ..soft };
    let map = |params: &HyperParams| -> Result<(f64, f64), String> {
        let out = run_scoring(&inputs, params, CacheStrategy::Comca, seed).map_err(|e| e.to_string())?;
        let fused = evaluate(&out.fused, &annotations).map_err(|e| e.to_string())?.map;
        let zs = evaluate(&out.zero_shot, &annotations).map_err(|e| e.to_string())?.map;
        Ok((zs, fused))
    };
    let (zero_shot, fused) = map(&soft)?;
    let (_, one_hot) = map(&hard)?;
    Ok(Margins {
        zero_shot,
        one_hot,
        fused,
    })
}
