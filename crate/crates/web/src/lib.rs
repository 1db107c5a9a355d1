//! Browser bindings: parallel analysis on a planted sample, t-SNE of
//! planted clusters, and a Kruskal-Wallis calculator.
//!
//! Each export returns a JSON string; the page renders it.

use serde::Serialize;
use wasm_bindgen::prelude::*;

use synthpsych::cluster::{kruskal_wallis, tsne, TsneConfig};
use synthpsych::factor::{run_efa, EfaConfig};
use synthpsych::pipeline::svg;
use synthpsych::rng;
use synthpsych::synth::{sample_respondents, PlantedModel, ProfileMix};

#[derive(Serialize)]
struct ScreeOut {
    observed: Vec<f64>,
    reference: Vec<f64>,
    retained_k: usize,
    svg: String,
}

/// Sample `n` respondents from the seven-factor planted model and run
/// parallel analysis plus EFA on them.
pub fn scree(n: usize, own_loading: f64, factor_corr: f64, replicates: usize, seed: u64) -> Result<String, String> {
    let model = PlantedModel::ams(own_loading, factor_corr).map_err(|e| e.to_string())?;
    let data = sample_respondents(&model, n, &ProfileMix::neutral(7), seed)
        .map_err(|e| e.to_string())?
        .to_matrix();
    let cfg = EfaConfig {
        pa_replicates: replicates.max(1),
        rng_seed: seed,
        ..EfaConfig::default()
    };
    let efa = run_efa(&data, &cfg).map_err(|e| e.to_string())?;
    let out = ScreeOut {
        svg: svg::scree(&efa),
        observed: efa.observed_eigenvalues,
        reference: efa.reference_eigenvalues,
        retained_k: efa.retained_k,
    };
    Ok(serde_json::to_string(&out).expect("serializes"))
}

#[derive(Serialize)]
struct TsneOut {
    layout: Vec<[f64; 2]>,
    labels: Vec<usize>,
    final_kl: Option<f64>,
    svg: String,
}

/// `clusters` Gaussian blobs of `per_cluster` points in `dim` dimensions,
/// embedded in 2-D.
pub fn tsne_blobs(
    clusters: usize,
    per_cluster: usize,
    dim: usize,
    perplexity: f64,
    seed: u64,
) -> Result<String, String> {
    use rand::Rng;
    use rand_distr::{Distribution, StandardNormal};
    if clusters == 0 || per_cluster == 0 || dim == 0 {
        return Err("clusters, points per cluster and dimension must be positive".into());
    }
    let mut r = rng::derived(seed, 0);
    let centres: Vec<Vec<f64>> = (0..clusters)
        .map(|_| (0..dim).map(|_| r.random_range(-10.0..10.0)).collect())
        .collect();
    let mut data = Vec::new();
    let mut labels = Vec::new();
    for (c, centre) in centres.iter().enumerate() {
        for _ in 0..per_cluster {
            data.push(
                centre
                    .iter()
                    .map(|m| {
                        let z: f64 = StandardNormal.sample(&mut r);
                        m + z
                    })
                    .collect::<Vec<f64>>(),
            );
            labels.push(c);
        }
    }
    let cfg = TsneConfig {
        perplexity,
        iterations: 500,
        rng_seed: seed,
        ..TsneConfig::default()
    };
    let res = tsne(&data, &cfg).map_err(|e| e.to_string())?;
    let points: Vec<([f64; 2], usize)> = res.layout.iter().copied().zip(labels.iter().copied()).collect();
    let out = TsneOut {
        svg: svg::tsne(&points),
        final_kl: res.kl_trace.last().map(|t| t.1),
        layout: res.layout,
        labels,
    };
    Ok(serde_json::to_string(&out).expect("serializes"))
}

/// Groups as text: one group per line, values separated by commas or
/// whitespace.
pub fn kruskal(text: &str) -> Result<String, String> {
    let groups: Vec<Vec<f64>> = text
        .lines()
        .filter(|l| !l.trim().is_empty())
        .map(|l| {
            l.split(|c: char| c == ',' || c.is_whitespace())
                .filter(|t| !t.is_empty())
                .map(|t| t.parse::<f64>().map_err(|_| format!("not a number: '{t}'")))
                .collect()
        })
        .collect::<Result<_, _>>()?;
    let res = kruskal_wallis(&groups).map_err(|e| e.to_string())?;
    Ok(serde_json::to_string(&res).expect("serializes"))
}

#[wasm_bindgen(js_name = scree)]
pub fn scree_js(n: usize, own_loading: f64, factor_corr: f64, replicates: usize, seed: u32) -> Result<String, JsValue> {
    scree(n, own_loading, factor_corr, replicates, seed as u64).map_err(|e| JsValue::from_str(&e))
}

#[wasm_bindgen(js_name = tsneBlobs)]
pub fn tsne_blobs_js(
    clusters: usize,
    per_cluster: usize,
    dim: usize,
    perplexity: f64,
    seed: u32,
) -> Result<String, JsValue> {
    tsne_blobs(clusters, per_cluster, dim, perplexity, seed as u64).map_err(|e| JsValue::from_str(&e))
}

#[wasm_bindgen(js_name = kruskal)]
pub fn kruskal_js(text: &str) -> Result<String, JsValue> {
    kruskal(text).map_err(|e| JsValue::from_str(&e))
}
