use std::collections::{BTreeMap, HashSet};
use std::fmt::Write;

use serde_json::json;

use super::manifest::{file_digest, RunManifest, StageRecord};
use super::{render_report, svg, PipelineError, Result, Run};
use crate::cluster::{kmeans, subgroup_summary, tsne, BoxStats};
use crate::factor::{covariance, fit_cfa, run_efa, CfaSpec};
use crate::persona::{generate_cohort, read_personas_jsonl, write_personas_jsonl, Persona};
use crate::scale::{administer, subscale_scores, ItemBank, ResponseMatrix};
use crate::synth::{sample_with_labels, PlantedModel};
use crate::transport::{sha256_hex, ChatClient, EmbeddingClient};

pub const CONFIG_ECHO: &str = "config.toml";

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stage {
    GeneratePersonas,
    Administer,
    Analyze,
    Cluster,
    Simulate,
    Report,
}

impl Stage {
    pub fn name(self) -> &'static str {
        match self {
            Self::GeneratePersonas => "generate-personas",
            Self::Administer => "administer",
            Self::Analyze => "analyze",
            Self::Cluster => "cluster",
            Self::Simulate => "simulate",
            Self::Report => "report",
        }
    }

    pub fn inputs(self) -> &'static [&'static str] {
        match self {
            Self::GeneratePersonas | Self::Simulate => &[],
            Self::Administer => &["personas.jsonl"],
            Self::Analyze => &["responses.csv"],
            Self::Cluster => &["personas.jsonl", "responses.csv"],
            Self::Report => &["efa_result.json", "cfa_result.json"],
        }
    }

    pub fn outputs(self) -> &'static [&'static str] {
        match self {
            Self::GeneratePersonas => &["personas.jsonl"],
            Self::Administer => &["responses.csv", "dropouts.jsonl"],
            Self::Analyze => &["efa_result.json", "cfa_result.json", "scree.csv", "scree.svg"],
            Self::Cluster => &[
                "clusters.csv",
                "tsne.csv",
                "tsne.svg",
                "kw_tests.json",
                "boxplot_data.csv",
                "boxplots.svg",
            ],
            Self::Simulate => &["responses.csv", "planted_model.json"],
            Self::Report => &["report.md"],
        }
    }
}

/// Files a stage produced, in write order.
pub type Outputs = Vec<(&'static str, String)>;

/// Shared stage scaffolding: input and overwrite checks, config echo, output
/// writes and the manifest entry.
fn execute(run: &Run, stage: Stage, body: impl FnOnce() -> Result<(Outputs, serde_json::Value)>) -> Result<Outputs> {
    let missing: Vec<String> = stage
        .inputs()
        .iter()
        .filter(|f| !run.path(f).exists())
        .map(|f| f.to_string())
        .collect();
    if !missing.is_empty() {
        return Err(PipelineError::MissingArtifacts(missing));
    }
    if !run.force {
        if let Some(f) = stage.outputs().iter().find(|f| run.path(f).exists()) {
            return Err(PipelineError::WouldOverwrite(run.path(f)));
        }
    }
    let started_at = chrono::Utc::now().to_rfc3339();
    let mut inputs = BTreeMap::new();
    for f in stage.inputs() {
        inputs.insert(f.to_string(), file_digest(&run.path(f))?);
    }

    let (outputs, params) = body()?;

    let echo = run.config.to_toml();
    let echo_path = run.path(CONFIG_ECHO);
    std::fs::write(&echo_path, &echo).map_err(|e| PipelineError::io(&echo_path, e))?;
    let config_digest = sha256_hex(echo.as_bytes());

    let mut written = BTreeMap::new();
    for (name, text) in &outputs {
        let path = run.path(name);
        std::fs::write(&path, text).map_err(|e| PipelineError::io(&path, e))?;
        written.insert(name.to_string(), sha256_hex(text.as_bytes()));
    }

    let mut manifest = RunManifest::load_or_new(&run.dir, &run.run_id())?;
    manifest.config_digest = config_digest.clone();
    manifest.stages.insert(
        stage.name().to_string(),
        StageRecord {
            config_digest,
            inputs,
            outputs: written,
            params,
            started_at,
            finished_at: chrono::Utc::now().to_rfc3339(),
        },
    );
    manifest.save(&run.dir)?;
    log::info!("{}: wrote {}", stage.name(), outputs.iter().map(|(n, _)| *n).collect::<Vec<_>>().join(", "));
    Ok(outputs)
}

fn read(run: &Run, name: &str) -> Result<String> {
    let path = run.path(name);
    std::fs::read_to_string(&path).map_err(|e| PipelineError::io(&path, e))
}

fn read_personas(run: &Run) -> Result<Vec<Persona>> {
    let text = read(run, "personas.jsonl")?;
    read_personas_jsonl(&text).map_err(|e| PipelineError::io(&run.path("personas.jsonl"), e))
}

fn read_responses(run: &Run) -> Result<ResponseMatrix> {
    Ok(ResponseMatrix::from_csv(&read(run, "responses.csv")?)?)
}

fn to_json<T: serde::Serialize>(value: &T) -> String {
    serde_json::to_string_pretty(value).expect("result serializes") + "\n"
}

/// Persona generation in batches → `personas.jsonl`.
pub fn cmd_generate_personas(run: &Run, client: &dyn ChatClient) -> Result<Outputs> {
    execute(run, Stage::GeneratePersonas, || {
        let spec = run.config.cohort_spec();
        let cohort = generate_cohort(&spec, client)?;
        let params = json!({
            "model": spec.model_id,
            "n": spec.n_total,
            "batch_size": spec.batch_size,
            "temperature": spec.temperature,
            "requests": cohort.requests,
            "retries": cohort.retries.len(),
        });
        Ok((vec![("personas.jsonl", write_personas_jsonl(&cohort.personas))], params))
    })
}

/// Questionnaire administration → `responses.csv` and `dropouts.jsonl`.
pub fn cmd_administer(run: &Run, client: &dyn ChatClient) -> Result<Outputs> {
    execute(run, Stage::Administer, || {
        let personas = read_personas(run)?;
        let bank = ItemBank::canonical();
        let opts = run.config.administer_options();
        let admin = administer(&personas, &bank, client, &opts)?;
        let mut dropouts = String::new();
        for d in &admin.dropouts {
            dropouts.push_str(&serde_json::to_string(d).expect("dropout serializes"));
            dropouts.push('\n');
        }
        let params = json!({
            "model": opts.model_id,
            "temperature": opts.temperature,
            "reprompt_budget": opts.reprompt_budget,
            "personas": personas.len(),
            "retained": admin.matrix.n(),
            "dropouts": admin.dropouts.len(),
            "retries": admin.retries.len(),
        });
        Ok((
            vec![("responses.csv", admin.matrix.to_csv()), ("dropouts.jsonl", dropouts)],
            params,
        ))
    })
}

/// Parallel analysis, PAF, promax and the seven-factor CFA.
pub fn cmd_analyze(run: &Run) -> Result<Outputs> {
    execute(run, Stage::Analyze, || {
        let responses = read_responses(run)?;
        let data = responses.to_matrix();
        let efa = run_efa(&data, &run.config.efa)?;
        let s = covariance(&data)?;
        let cfa = fit_cfa(&s, data.nrows(), &CfaSpec::ams(), &run.config.cfa)?;

        let mut scree = String::from("factor,observed,reference_mean,reference_p95\n");
        for i in 0..efa.observed_eigenvalues.len() {
            let _ = writeln!(
                scree,
                "{},{},{},{}",
                i + 1,
                efa.observed_eigenvalues[i],
                efa.reference_eigenvalues[i],
                efa.reference_p95[i]
            );
        }
        let params = json!({
            "n": data.nrows(),
            "retained_k": efa.retained_k,
            "extracted_k": efa.extracted_k,
            "cfa_converged": cfa.converged,
        });
        Ok((
            vec![
                ("efa_result.json", to_json(&efa)),
                ("cfa_result.json", to_json(&cfa)),
                ("scree.csv", scree),
                ("scree.svg", svg::scree(&efa)),
            ],
            params,
        ))
    })
}

fn boxplot_csv(boxes: &[BoxStats]) -> String {
    let mut out = String::from("cluster,subscale,n,median,q1,q3,lo_whisker,hi_whisker,outliers\n");
    for b in boxes {
        let outliers = b.outliers.iter().map(f64::to_string).collect::<Vec<_>>().join(";");
        let _ = writeln!(
            out,
            "{},{},{},{},{},{},{},{},{}",
            b.cluster,
            b.subscale.code(),
            b.n,
            b.median,
            b.q1,
            b.q3,
            b.lo_whisker,
            b.hi_whisker,
            outliers
        );
    }
    out
}

/// Embedding, k-means, t-SNE and per-cluster subscale comparisons.
pub fn cmd_cluster(run: &Run, embedder: &dyn EmbeddingClient) -> Result<Outputs> {
    execute(run, Stage::Cluster, || {
        let cfg = &run.config;
        let personas = read_personas(run)?;
        let responses = read_responses(run)?;
        let texts: Vec<String> = personas.iter().map(|p| p.description.clone()).collect();
        let vectors = embedder.embed(&texts, &cfg.models.embedding)?;
        let data: Vec<Vec<f64>> = vectors.into_iter().map(|v| v.values).collect();

        let km = kmeans(&data, &cfg.cluster)?;
        let layout = tsne(&data, &cfg.tsne)?;

        let mut clusters = String::from("persona_id,cluster\n");
        let mut tsne_csv = String::from("persona_id,x,y,cluster\n");
        let mut points = Vec::with_capacity(personas.len());
        for (i, p) in personas.iter().enumerate() {
            let c = km.assignments[i];
            let [x, y] = layout.layout[i];
            let _ = writeln!(clusters, "{},{c}", p.id);
            let _ = writeln!(tsne_csv, "{},{x},{y},{c}", p.id);
            points.push(([x, y], c));
        }

        // Personas who dropped out of the questionnaire keep their cluster
        // but have no subscale scores.
        let bank = ItemBank::canonical();
        let answered: HashSet<u32> = responses.persona_ids().into_iter().collect();
        let scores: Vec<_> = responses.rows().iter().map(|rv| subscale_scores(rv, &bank)).collect();
        let assignments: Vec<(u32, usize)> = personas
            .iter()
            .zip(&km.assignments)
            .filter(|(p, _)| answered.contains(&p.id))
            .map(|(p, &c)| (p.id, c))
            .collect();
        let summary = subgroup_summary(&scores, &assignments)?;

        let mut sizes = vec![0usize; cfg.cluster.k];
        km.assignments.iter().for_each(|&c| sizes[c] += 1);
        let params = json!({
            "embedding_model": cfg.models.embedding,
            "k": cfg.cluster.k,
            "cluster_sizes": sizes,
            "inertia": km.inertia,
            "tsne_final_kl": layout.kl_trace.last().map(|t| t.1),
        });
        Ok((
            vec![
                ("clusters.csv", clusters),
                ("tsne.csv", tsne_csv),
                ("tsne.svg", svg::tsne(&points)),
                ("kw_tests.json", to_json(&summary.tests)),
                ("boxplot_data.csv", boxplot_csv(&summary.boxes)),
                ("boxplots.svg", svg::boxplots(&summary.boxes)),
            ],
            params,
        ))
    })
}

/// Responses sampled from the planted model instead of a language model.
pub fn cmd_simulate(run: &Run) -> Result<Outputs> {
    execute(run, Stage::Simulate, || {
        let s = &run.config.simulate;
        let model = PlantedModel::ams(s.own_loading, s.factor_corr)?;
        let mix = s.mix();
        let (matrix, labels) = sample_with_labels(&model, s.n, &mix, run.config.seed)?;
        let planted = json!({
            "seed": run.config.seed,
            "n": s.n,
            "model": model,
            "profiles": mix,
            "profile_of_row": labels,
            "attenuated_targets": model.attenuated_targets(),
        });
        let params = json!({ "n": s.n, "own_loading": s.own_loading, "factor_corr": s.factor_corr });
        Ok((
            vec![("responses.csv", matrix.to_csv()), ("planted_model.json", to_json(&planted))],
            params,
        ))
    })
}

/// Human-readable summary of whatever analysis outputs the run holds.
pub fn cmd_report(run: &Run) -> Result<Outputs> {
    execute(run, Stage::Report, || {
        let text = render_report(&run.dir)?;
        Ok((vec![("report.md", text)], json!({})))
    })
}

