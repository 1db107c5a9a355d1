use std::collections::HashMap;
use std::path::Path;
use std::sync::Arc;

use synthpsych::cluster::{adjusted_rand_index, KwResult};
use synthpsych::factor::{fit_cfa, CfaOptions, CfaSpec, EfaResult};
use synthpsych::persona::{write_personas_jsonl, Persona};
use synthpsych::pipeline::{
    cmd_administer, cmd_analyze, cmd_cluster, cmd_generate_personas, cmd_report, cmd_simulate, MixKind,
    PipelineError, Provider, Run, RunConfig, RunManifest,
};
use synthpsych::rng;
use synthpsych::scale::ResponseMatrix;
use synthpsych::synth::{PlantedModel, SyntheticBackend};
use synthpsych::transport::{
    ChatClient, ChatRequest, ChatResponse, EmbeddingClient, EmbeddingVector, Gateway, ResponseSource,
    TranscriptMode, TranscriptStore, TransportError,
};

fn persona(id: u32, description: &str) -> Persona {
    Persona {
        id,
        age: 20,
        gender: "Female".into(),
        description: description.into(),
    }
}

/// Replies by persona description; "broken" personas always get prose.
struct Scripted;

impl ChatClient for Scripted {
    fn chat_complete(&self, req: &ChatRequest) -> Result<ChatResponse, TransportError> {
        let prompt = &req.messages.last().unwrap().content;
        let text = if prompt.contains("broken") {
            "I would rather not answer.".to_string()
        } else {
            vec!["4"; 28].join(",")
        };
        Ok(ChatResponse {
            text,
            request_digest: req.digest(),
            source: ResponseSource::Replay,
        })
    }
}

fn small_config() -> RunConfig {
    let mut cfg = RunConfig::default();
    cfg.efa.pa_replicates = 20;
    cfg
}

fn seed_personas(run: &Run, personas: &[Persona]) {
    std::fs::write(run.path("personas.jsonl"), write_personas_jsonl(personas)).unwrap();
}

#[test]
fn administer_writes_rows_and_dropouts() {
    let dir = tempfile::tempdir().unwrap();
    let run = Run::at(dir.path(), small_config(), false).unwrap();
    seed_personas(&run, &[persona(1, "a"), persona(2, "b"), persona(3, "c")]);
    cmd_administer(&run, &Scripted).unwrap();
    let csv = std::fs::read_to_string(run.path("responses.csv")).unwrap();
    let header = (1..=28).map(|i| format!("Q{i}")).collect::<Vec<_>>().join(",");
    assert_eq!(csv.lines().next().unwrap(), format!("persona_id,{header}"));
    assert_eq!(csv.lines().count(), 4);

    let manifest = RunManifest::load_or_new(dir.path(), "x").unwrap();
    assert_eq!(manifest.stages["administer"].params["temperature"], 0.0);
    assert!(manifest.verify(dir.path()).is_empty());
    assert!(dir.path().join("config.toml").exists());

    let dir2 = tempfile::tempdir().unwrap();
    let run2 = Run::at(dir2.path(), small_config(), false).unwrap();
    seed_personas(&run2, &[persona(1, "a"), persona(2, "broken"), persona(3, "c")]);
    cmd_administer(&run2, &Scripted).unwrap();
    let m = ResponseMatrix::from_csv(&std::fs::read_to_string(run2.path("responses.csv")).unwrap()).unwrap();
    assert_eq!(m.persona_ids(), vec![1, 3]);
    let dropouts = std::fs::read_to_string(run2.path("dropouts.jsonl")).unwrap();
    assert_eq!(dropouts.lines().count(), 1);
    assert!(dropouts.contains("\"persona_id\":2"));
}

#[test]
fn stages_refuse_to_overwrite_without_force() {
    let dir = tempfile::tempdir().unwrap();
    let run = Run::at(dir.path(), small_config(), false).unwrap();
    seed_personas(&run, &[persona(1, "a")]);
    cmd_administer(&run, &Scripted).unwrap();
    let before = std::fs::read(run.path("responses.csv")).unwrap();
    match cmd_administer(&run, &Scripted) {
        Err(e @ PipelineError::WouldOverwrite(_)) => assert_eq!(e.exit_code(), 3),
        other => panic!("expected refusal, got {other:?}"),
    }
    assert_eq!(std::fs::read(run.path("responses.csv")).unwrap(), before);
    let forced = Run { force: true, ..run };
    cmd_administer(&forced, &Scripted).unwrap();
}

#[test]
fn missing_inputs_are_reported() {
    let dir = tempfile::tempdir().unwrap();
    let run = Run::at(dir.path(), small_config(), false).unwrap();
    match cmd_analyze(&run) {
        Err(PipelineError::MissingArtifacts(m)) => assert_eq!(m, vec!["responses.csv".to_string()]),
        other => panic!("{other:?}"),
    }
    std::fs::write(run.path("efa_result.json"), "{}").unwrap();
    match cmd_report(&run) {
        Err(e @ PipelineError::MissingArtifacts(_)) => {
            assert!(e.to_string().contains("cfa_result.json"));
            assert_eq!(e.exit_code(), 3);
        }
        other => panic!("{other:?}"),
    }
}

#[test]
fn default_cohort_takes_one_hundred_requests() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = small_config();
    cfg.api.concurrency = 8;
    let run = Run::at(dir.path(), cfg, false).unwrap();
    let gw = Gateway::new(
        TranscriptStore::in_memory(TranscriptMode::Record),
        Some(Arc::new(SyntheticBackend::new(1))),
    )
    .with_concurrency(8);
    cmd_generate_personas(&run, &gw).unwrap();
    assert_eq!(gw.store().len(), 100);
    let text = std::fs::read_to_string(run.path("personas.jsonl")).unwrap();
    assert_eq!(text.lines().count(), 2000);
    let m = RunManifest::load_or_new(dir.path(), "x").unwrap();
    assert_eq!(m.stages["generate-personas"].params["requests"], 100);
}

#[test]
fn simulate_then_analyze_recovers_seven_factors() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = small_config();
    cfg.simulate.profiles = MixKind::Neutral;
    let run = Run::at(dir.path(), cfg, false).unwrap();
    cmd_simulate(&run).unwrap();
    cmd_analyze(&run).unwrap();
    let efa: EfaResult = serde_json::from_str(&std::fs::read_to_string(run.path("efa_result.json")).unwrap()).unwrap();
    assert_eq!(efa.retained_k, 7);

    let svg = std::fs::read_to_string(run.path("scree.svg")).unwrap();
    let doc = roxmltree::Document::parse(&svg).expect("well-formed SVG");
    let lines = doc.descendants().filter(|n| n.has_tag_name("polyline")).count();
    assert_eq!(lines, 2);
    let texts: String = doc.descendants().filter_map(|n| n.text()).collect();
    assert!(texts.contains("Eigenvalue") && texts.contains("Factor number"));
    assert!(texts.contains("Observed data"));

    let scree = std::fs::read_to_string(run.path("scree.csv")).unwrap();
    assert_eq!(scree.lines().count(), 29);

    let planted: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(run.path("planted_model.json")).unwrap()).unwrap();
    assert_eq!(planted["model"]["loadings"].as_array().unwrap().len(), 28);
}

#[test]
fn population_covariance_fits_exactly() {
    let model = PlantedModel::ams(0.7, 0.4).unwrap();
    let r = fit_cfa(&model.population_covariance(), 2000, &CfaSpec::ams(), &CfaOptions::default()).unwrap();
    assert!((r.cfi - 1.0).abs() < 1e-9);
    assert_eq!(r.rmsea, 0.0);
}

/// Embeddings keyed by persona description: three tight blobs chosen by
/// the description's first word.
struct Blobs;

impl EmbeddingClient for Blobs {
    fn embed(&self, texts: &[String], _model_id: &str) -> Result<Vec<EmbeddingVector>, TransportError> {
        Ok(texts
            .iter()
            .enumerate()
            .map(|(i, t)| {
                let c: usize = t.split_whitespace().next().unwrap().parse().unwrap();
                let mut r = rng::seeded(i as u64);
                let values = (0..32)
                    .map(|d| {
                        let u: f64 = rand::Rng::random_range(&mut r, -0.01..0.01);
                        if d == c { 10.0 + u } else { u }
                    })
                    .collect();
                EmbeddingVector { subject_id: i, values }
            })
            .collect())
    }
}

#[test]
fn cluster_stage_recovers_planted_blobs_and_writes_figures() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = small_config();
    cfg.tsne.perplexity = 10.0;
    cfg.tsne.iterations = 300;
    let run = Run::at(dir.path(), cfg, false).unwrap();
    let personas: Vec<Persona> = (1..=60).map(|id| persona(id, &format!("{} student", id % 3))).collect();
    seed_personas(&run, &personas);
    // Persona 5 dropped out of the questionnaire.
    let mut csv = String::from("persona_id");
    (1..=28).for_each(|i| csv.push_str(&format!(",Q{i}")));
    csv.push('\n');
    for id in (1..=60).filter(|&id| id != 5) {
        let v = 1 + (id % 3) * 3;
        csv.push_str(&format!("{id}{}\n", format!(",{v}").repeat(28)));
    }
    std::fs::write(run.path("responses.csv"), csv).unwrap();

    cmd_cluster(&run, &Blobs).unwrap();
    let clusters = std::fs::read_to_string(run.path("clusters.csv")).unwrap();
    let labels: Vec<usize> = clusters.lines().skip(1).map(|l| l.split(',').nth(1).unwrap().parse().unwrap()).collect();
    let truth: Vec<usize> = (1..=60).map(|id| id as usize % 3).collect();
    assert_eq!(labels.len(), 60);
    assert_eq!(adjusted_rand_index(&labels, &truth), 1.0);

    let kw: Vec<KwResult> = serde_json::from_str(&std::fs::read_to_string(run.path("kw_tests.json")).unwrap()).unwrap();
    assert_eq!(kw.len(), 7);
    assert!(kw.iter().all(|t| t.p < 1e-6));

    let tsne = std::fs::read_to_string(run.path("tsne.csv")).unwrap();
    assert_eq!(tsne.lines().next().unwrap(), "persona_id,x,y,cluster");
    assert_eq!(tsne.lines().count(), 61);

    let boxes = std::fs::read_to_string(run.path("boxplot_data.csv")).unwrap();
    assert_eq!(
        boxes.lines().next().unwrap(),
        "cluster,subscale,n,median,q1,q3,lo_whisker,hi_whisker,outliers"
    );
    assert_eq!(boxes.lines().count(), 1 + 21);

    for f in ["tsne.svg", "boxplots.svg"] {
        let text = std::fs::read_to_string(run.path(f)).unwrap();
        roxmltree::Document::parse(&text).unwrap_or_else(|e| panic!("{f}: {e}"));
    }
}

#[test]
fn profile_offsets_reach_the_intrinsic_subscale_test() {
    // Two planted profiles with a large offset, 600 personas, embeddings
    // that follow the profile: the intrinsic subscale must separate clusters.
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = small_config();
    cfg.api.provider = Provider::Synthetic;
    cfg.simulate.profiles = MixKind::Two;
    cfg.simulate.profile_delta = 1.5;
    cfg.cohort.n = 600;
    cfg.cluster.k = 2;
    cfg.models.embedding_dim = 32;
    cfg.tsne.iterations = 250;
    cfg.transcript.mode = TranscriptMode::Passthrough;
    let run = Run::at(dir.path(), cfg, false).unwrap();
    let gw = run.gateway().unwrap();
    cmd_generate_personas(&run, &gw).unwrap();
    cmd_administer(&run, &gw).unwrap();
    cmd_cluster(&run, &gw).unwrap();
    let kw: Vec<KwResult> = serde_json::from_str(&std::fs::read_to_string(run.path("kw_tests.json")).unwrap()).unwrap();
    let imtk = kw.iter().find(|t| t.subscale == "IMTK").unwrap();
    assert!(imtk.p < 1e-3, "IMTK p = {}", imtk.p);
}

#[test]
fn report_has_table_and_fit_line() {
    let dir = tempfile::tempdir().unwrap();
    let run = Run::at(dir.path(), small_config(), false).unwrap();
    cmd_simulate(&run).unwrap();
    cmd_analyze(&run).unwrap();
    cmd_report(&run).unwrap();
    let report = std::fs::read_to_string(run.path("report.md")).unwrap();
    let rows: Vec<&str> = report.lines().filter(|l| l.contains("| AMS_Q")).collect();
    assert_eq!(rows.len(), 28);
    // Grouped: the first row of each factor carries its label.
    let labelled: Vec<&str> = rows.iter().filter(|l| !l.starts_with("|  |")).copied().collect();
    assert_eq!(labelled.len(), 7);
    assert!(labelled[0].starts_with("| IMTK (Intrinsic Motivation - To Know) | AMS_Q2 |"));
    let fit = regex::Regex::new(r"CFI = \d\.\d{3}, TLI = \d\.\d{3}, RMSEA = \d\.\d{3}, SRMR = \d\.\d{3}").unwrap();
    assert!(fit.is_match(&report));
    assert!(report.contains("(scree.svg)"));
}

#[test]
fn replay_miss_is_an_analysis_failure() {
    let dir = tempfile::tempdir().unwrap();
    let store = dir.path().join("empty.jsonl");
    std::fs::write(&store, "").unwrap();
    let mut cfg = small_config();
    cfg.transcript.mode = TranscriptMode::Replay;
    cfg.transcript.path = store;
    let run = Run::at(dir.path().join("run"), cfg, false).unwrap();
    let gw = run.gateway().unwrap();
    let err = cmd_generate_personas(&run, &gw).unwrap_err();
    assert!(matches!(err, PipelineError::Transport(TransportError::ReplayMiss { .. })), "{err:?}");
    assert_eq!(err.exit_code(), 1);
    assert!(!run.path("personas.jsonl").exists());
}

#[test]
fn manifest_digests_match_files() {
    let dir = tempfile::tempdir().unwrap();
    let run = Run::at(dir.path(), small_config(), false).unwrap();
    cmd_simulate(&run).unwrap();
    let m = RunManifest::load_or_new(dir.path(), "x").unwrap();
    let rec = &m.stages["simulate"];
    let digests: HashMap<&str, String> = ["responses.csv", "planted_model.json"]
        .into_iter()
        .map(|f| (f, synthpsych::transport::sha256_hex(&std::fs::read(Path::new(dir.path()).join(f)).unwrap())))
        .collect();
    for (f, d) in digests {
        assert_eq!(rec.outputs[f], d);
    }
    assert_eq!(m.run_id, dir.path().file_name().unwrap().to_string_lossy());
}
