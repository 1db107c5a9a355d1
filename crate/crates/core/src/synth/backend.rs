use std::sync::OnceLock;

use rand::Rng as _;
use rand_distr::{Distribution, StandardNormal};
use regex::Regex;

use super::sample::sample_row;
use super::{PlantedModel, ProfileMix};
use crate::rng;
use crate::transport::{Backend, BackendError, ChatRequest, EmbeddingRequest};

/// Offline provider that answers persona, questionnaire and embedding
/// requests from the planted model.
///
/// Persona descriptions are built from per-profile phrase banks; a
/// questionnaire prompt is mapped back to a profile through those phrases
/// and answered by sampling the model with that profile's factor offsets.
/// Embeddings are a profile direction plus small per-text noise. Every
/// answer is a pure function of the seed and the request.
pub struct SyntheticBackend {
    model: PlantedModel,
    mix: ProfileMix,
    seed: u64,
    embedding_noise: f64,
    malformed_rate: f64,
}

struct Voice {
    profile: &'static str,
    marker: &'static str,
    personality: [&'static str; 4],
    learning: [&'static str; 4],
    motivation: [&'static str; 4],
}

const VOICES: [Voice; 4] = [
    Voice {
        profile: "intrinsic",
        marker: "genuinely curious",
        personality: [
            "Is genuinely curious and reads beyond the syllabus",
            "Is genuinely curious about how ideas connect across subjects",
            "Is a genuinely curious thinker who enjoys open problems",
            "Is genuinely curious and asks probing questions in seminars",
        ],
        learning: [
            "explores topics through self-directed projects",
            "learns best by experimenting and building things",
            "keeps a notebook of questions to chase down later",
            "prefers deep reading over memorizing summaries",
        ],
        motivation: [
            "finds real joy in mastering difficult material.",
            "studies for the satisfaction of understanding.",
            "feels energized when a hard concept finally clicks.",
            "values learning for its own sake.",
        ],
    },
    Voice {
        profile: "external",
        marker: "grade-focused",
        personality: [
            "Is grade-focused and keeps a close eye on rankings",
            "Is a grade-focused planner with a detailed schedule",
            "Is grade-focused and competitive with classmates",
            "Is grade-focused and careful to meet every requirement",
        ],
        learning: [
            "relies on past exams and flashcards",
            "prefers structured lectures with clear rubrics",
            "studies in intense bursts before deadlines",
            "memorizes key facts that are likely to be tested",
        ],
        motivation: [
            "is driven by the promise of a well-paid career.",
            "works hard to meet family expectations.",
            "stays motivated mainly by scholarships and rewards.",
            "wants the degree mostly for the status it brings.",
        ],
    },
    Voice {
        profile: "amotivated",
        marker: "unsure why",
        personality: [
            "Is unsure why they enrolled and often feels adrift",
            "Is quiet and unsure why college matters to them",
            "Is easily distracted and unsure why the courses are relevant",
            "Is unsure why they keep attending and rarely speaks in class",
        ],
        learning: [
            "skims readings at the last minute",
            "has no consistent study routine",
            "copies notes without engaging with them",
            "avoids group work whenever possible",
        ],
        motivation: [
            "sees little point in finishing the program.",
            "often considers dropping out.",
            "feels college is a waste of time.",
            "cannot name a goal the degree would serve.",
        ],
    },
    Voice {
        profile: "neutral",
        marker: "balanced",
        personality: [
            "Is a balanced student with a steady temperament",
            "Is balanced between coursework and a part-time job",
            "Is a balanced and sociable classmate",
            "Is balanced in effort across subjects",
        ],
        learning: [
            "mixes lecture notes with online videos",
            "studies with a small group once a week",
            "reviews material on a regular schedule",
            "uses practice problems to check understanding",
        ],
        motivation: [
            "is motivated by a mix of interest and practical goals.",
            "wants both a good job and a broad education.",
            "keeps going out of habit and mild interest.",
            "tries to do well without overthinking it.",
        ],
    },
];

const GENDERS: [(&str, f64); 3] = [("Female", 0.48), ("Male", 0.47), ("Non-binary", 0.05)];

fn persona_request() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(r"Generate (\d+) fictional student personas(?s:.*?)\n(\d{4})\. ").expect("valid regex"))
}

fn questionnaire_request() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| {
        Regex::new(r"Imagine the following student: (.+),\n(?s:.*)Please return exactly (\d+) integers").expect("valid regex")
    })
}

impl SyntheticBackend {
    /// AMS-shaped default model with intrinsic, external and amotivated
    /// profiles.
    pub fn new(seed: u64) -> Self {
        Self::with_model(PlantedModel::ams_default(), ProfileMix::three_profile(1.0), seed)
    }

    /// Profiles whose names have no phrase bank are described in neutral terms.
    pub fn with_model(model: PlantedModel, mix: ProfileMix, seed: u64) -> Self {
        Self {
            model,
            mix,
            seed,
            embedding_noise: 0.3,
            malformed_rate: 0.0,
        }
    }

    /// Fraction of questionnaire replies returned in an unparseable form.
    pub fn with_malformed_rate(mut self, rate: f64) -> Self {
        self.malformed_rate = rate.clamp(0.0, 1.0);
        self
    }

    /// Norm of the per-text embedding noise relative to the unit profile
    /// direction.
    pub fn with_embedding_noise(mut self, noise: f64) -> Self {
        self.embedding_noise = noise.max(0.0);
        self
    }

    pub fn model(&self) -> &PlantedModel {
        &self.model
    }

    pub fn mix(&self) -> &ProfileMix {
        &self.mix
    }

    fn voice_of(&self, profile: usize) -> &'static Voice {
        let name = &self.mix.profiles[profile].name;
        VOICES
            .iter()
            .find(|v| v.profile == name)
            .unwrap_or(&VOICES[VOICES.len() - 1])
    }

    /// Profile index of a persona id.
    pub fn profile_of_id(&self, id: u32) -> usize {
        let mut r = rng::seeded(rng::seed_from_bytes(self.seed, format!("persona:{id}").as_bytes()));
        self.mix.pick(r.random())
    }

    /// Profile inferred from description text; `None` when no phrase bank
    /// marker is present.
    pub fn profile_of_text(&self, text: &str) -> Option<usize> {
        (0..self.mix.profiles.len()).find(|&p| {
            let v = self.voice_of(p);
            v.profile != "neutral" && text.contains(v.marker)
        })
    }

    fn persona_line(&self, id: u32) -> String {
        let mut r = rng::seeded(rng::seed_from_bytes(self.seed, format!("line:{id}").as_bytes()));
        let voice = self.voice_of(self.profile_of_id(id));
        let age = r.random_range(18..=25);
        let u: f64 = r.random();
        let mut acc = 0.0;
        let gender = GENDERS
            .iter()
            .find(|(_, w)| {
                acc += w;
                u < acc
            })
            .map_or("Female", |(g, _)| g);
        let a = voice.personality[r.random_range(0..4)];
        let b = voice.learning[r.random_range(0..4)];
        let c = voice.motivation[r.random_range(0..4)];
        format!("{id:04}. {age}, {gender} - {a}; {b}; {c}")
    }

    fn answer_questionnaire(&self, description: &str, items: usize, req: &ChatRequest) -> String {
        let mut r = rng::seeded(rng::seed_from_bytes(self.seed, req.digest().as_bytes()));
        let offsets = match self.profile_of_text(description) {
            Some(p) => self.mix.profiles[p].offsets.clone(),
            None => vec![0.0; self.model.k()],
        };
        let chol = self.model.phi().cholesky().expect("validated model").l();
        let mut values = sample_row(&self.model, &chol, &offsets, &mut r);
        values.resize(items, 4);
        let body = values.iter().map(u8::to_string).collect::<Vec<_>>().join(",");
        if r.random::<f64>() < self.malformed_rate {
            format!("Sure! Here are my answers: {body}")
        } else {
            body
        }
    }

    fn embed_text(&self, text: &str, dim: usize) -> Vec<f64> {
        let centre = self.profile_of_text(text).unwrap_or(self.mix.profiles.len());
        let mut dr = rng::derived(self.seed ^ 0x5eed_e3be_dd00, centre as u64);
        let direction: Vec<f64> = (0..dim).map(|_| StandardNormal.sample(&mut dr)).collect();
        let dnorm = direction.iter().map(|v| v * v).sum::<f64>().sqrt();
        let mut nr = rng::seeded(rng::seed_from_bytes(self.seed, text.as_bytes()));
        let scale = self.embedding_noise / (dim as f64).sqrt();
        let mut v: Vec<f64> = direction
            .iter()
            .map(|d| {
                let z: f64 = StandardNormal.sample(&mut nr);
                d / dnorm + scale * z
            })
            .collect();
        let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        v.iter_mut().for_each(|x| *x /= norm);
        v
    }
}

impl Backend for SyntheticBackend {
    fn chat(&self, req: &ChatRequest) -> Result<String, BackendError> {
        let prompt = req
            .messages
            .iter()
            .rev()
            .find(|m| m.role == crate::transport::Role::User)
            .map(|m| m.content.as_str())
            .unwrap_or_default();
        if let Some(c) = persona_request().captures(prompt) {
            let count: u32 = c[1].parse().map_err(|_| BackendError::Fatal("bad batch size".into()))?;
            let start: u32 = c[2].parse().map_err(|_| BackendError::Fatal("bad start id".into()))?;
            let lines: Vec<String> = (start..start + count).map(|id| self.persona_line(id)).collect();
            return Ok(lines.join("\n"));
        }
        if let Some(c) = questionnaire_request().captures(prompt) {
            let items: usize = c[2].parse().map_err(|_| BackendError::Fatal("bad item count".into()))?;
            return Ok(self.answer_questionnaire(&c[1], items, req));
        }
        Err(BackendError::Fatal("synthetic backend does not recognise this prompt".into()))
    }

    fn embed(&self, req: &EmbeddingRequest) -> Result<Vec<Vec<f64>>, BackendError> {
        Ok(req.input.iter().map(|t| self.embed_text(t, req.dimensions)).collect())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::persona::{build_persona_prompt, parse_persona_batch};
    use crate::scale::{build_response_prompt, parse_response_line, ItemBank};

    #[test]
    fn persona_batches_parse() {
        let b = SyntheticBackend::new(1);
        let prompt = build_persona_prompt(20, 41).unwrap();
        let text = b.chat(&ChatRequest::new("gpt-4o", prompt, 1.0, 4096)).unwrap();
        let personas = parse_persona_batch(&text, 20, 41).unwrap();
        assert_eq!(personas.len(), 20);
        assert_eq!(personas[0].id, 41);
        for p in &personas {
            assert_eq!(b.profile_of_text(&p.description), {
                let profile = b.profile_of_id(p.id);
                Some(profile)
            });
        }
    }

    #[test]
    fn questionnaire_replies_parse_and_follow_profile() {
        let b = SyntheticBackend::new(2);
        let bank = ItemBank::canonical();
        let text = b.chat(&ChatRequest::new("gpt-4o", build_persona_prompt(40, 1).unwrap(), 1.0, 4096)).unwrap();
        let personas = parse_persona_batch(&text, 40, 1).unwrap();
        let mut imtk = [Vec::new(), Vec::new(), Vec::new()];
        for p in &personas {
            let prompt = build_response_prompt(p, &bank).unwrap();
            let reply = b.chat(&ChatRequest::new("gpt-4o", prompt, 0.0, 256)).unwrap();
            let rv = parse_response_line(&reply, p.id).unwrap();
            let s = crate::scale::subscale_scores(&rv, &bank);
            imtk[b.profile_of_id(p.id)].push(s.get(crate::scale::Subscale::ToKnow));
        }
        let mean = |v: &Vec<f64>| v.iter().sum::<f64>() / v.len() as f64;
        assert!(mean(&imtk[0]) > mean(&imtk[1]));
        assert!(mean(&imtk[0]) > mean(&imtk[2]));
    }

    #[test]
    fn malformed_replies_when_requested() {
        let b = SyntheticBackend::new(3).with_malformed_rate(1.0);
        let persona = crate::persona::Persona {
            id: 1,
            age: 20,
            gender: "Male".into(),
            description: "Is balanced; reads; works.".into(),
        };
        let prompt = build_response_prompt(&persona, &ItemBank::canonical()).unwrap();
        let reply = b.chat(&ChatRequest::new("gpt-4o", prompt, 0.0, 256)).unwrap();
        assert!(parse_response_line(&reply, 1).is_err());
    }

    #[test]
    fn embeddings_cluster_by_profile() {
        let b = SyntheticBackend::new(4);
        let req = EmbeddingRequest {
            model_id: "text-embedding-3-small".into(),
            input: vec![
                "Is genuinely curious; x; y.".into(),
                "Is genuinely curious; z; w.".into(),
                "Is grade-focused; x; y.".into(),
            ],
            dimensions: 64,
        };
        let v = b.embed(&req).unwrap();
        let dot = |a: &[f64], c: &[f64]| a.iter().zip(c).map(|(x, y)| x * y).sum::<f64>();
        assert!((dot(&v[0], &v[0]) - 1.0).abs() < 1e-12);
        assert!(dot(&v[0], &v[1]) > 0.8);
        assert!(dot(&v[0], &v[2]).abs() < 0.6);
        assert_eq!(v, b.embed(&req).unwrap());
    }

    #[test]
    fn unknown_prompt_is_fatal() {
        let b = SyntheticBackend::new(5);
        assert!(matches!(
            b.chat(&ChatRequest::new("m", "hello", 0.0, 10)),
            Err(BackendError::Fatal(_))
        ));
    }
}
