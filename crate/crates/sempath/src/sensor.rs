//! The language model as a stochastic sensor: `k` independent danger ratings
//! per obstacle class, in [0,1], for one natural-language prompt.
//!
//! Three acquisition paths share the [`SampleSet`] representation: a live
//! chat-completions endpoint ([`sample_llm`]), a seeded Beta-distributed mock
//! ([`sample_mock`]), and a record/replay cache ([`cache_store`] /
//! [`cache_load`]). Readings are clamped to [0,1] and stored sorted, so a
//! sample set never depends on completion arrival order.

use std::collections::BTreeMap;
use std::path::Path;
use std::time::{Duration, Instant};

use rand_distr::Distribution;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::rng::{seeded, substream_seed};

// Domain tag separating mock-reading substreams from the posterior's
// resampling substreams, which are derived from the same user-facing seed.
const MOCK_DOMAIN: u64 = 0x6d6f_636b;

#[derive(Debug, thiserror::Error)]
pub enum SensorError {
    #[error("prompt text must be non-empty")]
    EmptyPrompt,
    #[error("prompt must name at least one class")]
    NoClasses,
    #[error("duplicate class name {0:?} in prompt")]
    DuplicateClass(String),
    #[error("shot count k must be at least 1")]
    ZeroShots,
    #[error("class {class:?} has {got} readings, expected k = {expected}")]
    WrongReadingCount {
        class: String,
        got: usize,
        expected: usize,
    },
    #[error("non-finite reading for class {0:?}")]
    NonFiniteReading(String),
    #[error("no API key in environment: set {0}")]
    MissingCredentials(&'static str),
    #[error("endpoint request failed after {attempts} attempts: {detail}")]
    Transport { attempts: usize, detail: String },
    #[error("shot {shot} completion invalid after {attempts} attempts: {detail}")]
    MalformedCompletion {
        shot: usize,
        attempts: usize,
        detail: String,
    },
    #[error("Beta shape parameters must be positive, got ({a}, {b}) for class {class:?}")]
    InvalidBetaShape { class: String, a: f64, b: f64 },
    #[error("no Beta parameters for class {0:?}")]
    MissingBetaParams(String),
    #[error("cache I/O: {0}")]
    CacheIo(#[from] std::io::Error),
    #[error("cache file is corrupt: {0}")]
    CacheParse(String),
    #[error("cache was recorded for a different prompt (digest {found} != {expected})")]
    DigestMismatch { found: String, expected: String },
    #[error("cache is missing readings for class {0:?}")]
    CacheMissingClass(String),
    #[error("latency measurement needs runs >= 1")]
    NoRuns,
    #[error("sensor config invalid: {0}")]
    InvalidConfig(String),
}

/// The instruction given to the sensor: free text plus the ordered list of
/// class labels it must rate. Class order here fixes class order everywhere
/// downstream (substream seeding, exports).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Prompt {
    text: String,
    class_names: Vec<String>,
}

impl Prompt {
    pub fn new(
        text: impl Into<String>,
        class_names: Vec<String>,
    ) -> Result<Self, SensorError> {
        let text = text.into();
        if text.is_empty() {
            return Err(SensorError::EmptyPrompt);
        }
        if class_names.is_empty() {
            return Err(SensorError::NoClasses);
        }
        let mut seen = std::collections::BTreeSet::new();
        for name in &class_names {
            if !seen.insert(name.as_str()) {
                return Err(SensorError::DuplicateClass(name.clone()));
            }
        }
        Ok(Prompt { text, class_names })
    }

    pub fn text(&self) -> &str {
        &self.text
    }

    pub fn class_names(&self) -> &[String] {
        &self.class_names
    }

    /// Content hash binding a sample set to the exact prompt that produced
    /// it: text and class list, order-sensitive.
    pub fn digest(&self) -> String {
        let mut hasher = Sha256::new();
        hasher.update(self.text.as_bytes());
        for name in &self.class_names {
            hasher.update([0u8]);
            hasher.update(name.as_bytes());
        }
        let bytes = hasher.finalize();
        let mut hex = String::with_capacity(64);
        for b in bytes {
            use std::fmt::Write;
            write!(hex, "{b:02x}").expect("writing to String cannot fail");
        }
        hex
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Provenance {
    Live,
    Cached,
    Mock,
}

/// `k` sorted readings for one class.
#[derive(Debug, Clone, PartialEq)]
pub struct ClassReadings {
    name: String,
    readings: Vec<f64>,
}

impl ClassReadings {
    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn readings(&self) -> &[f64] {
        &self.readings
    }
}

/// One acquisition: `k` readings per class, clamped to [0,1] and sorted
/// ascending, in prompt class order.
#[derive(Debug, Clone, PartialEq)]
pub struct SampleSet {
    prompt_digest: String,
    k: usize,
    temperature: f64,
    classes: Vec<ClassReadings>,
    provenance: Provenance,
}

impl SampleSet {
    /// Builds a sample set from per-class reading lists aligned with
    /// `prompt.class_names()`. Readings are clamped and sorted here, so the
    /// result is independent of acquisition order.
    pub fn new(
        prompt: &Prompt,
        temperature: f64,
        readings_per_class: Vec<Vec<f64>>,
        provenance: Provenance,
    ) -> Result<Self, SensorError> {
        if readings_per_class.len() != prompt.class_names.len() {
            return Err(SensorError::InvalidConfig(format!(
                "{} reading lists for {} classes",
                readings_per_class.len(),
                prompt.class_names.len()
            )));
        }
        let k = readings_per_class.first().map_or(0, Vec::len);
        if k == 0 {
            return Err(SensorError::ZeroShots);
        }
        let mut classes = Vec::with_capacity(readings_per_class.len());
        for (name, mut readings) in prompt.class_names.iter().zip(readings_per_class) {
            if readings.len() != k {
                return Err(SensorError::WrongReadingCount {
                    class: name.clone(),
                    got: readings.len(),
                    expected: k,
                });
            }
            for r in &mut readings {
                if !r.is_finite() {
                    return Err(SensorError::NonFiniteReading(name.clone()));
                }
                *r = r.clamp(0.0, 1.0);
            }
            readings.sort_by(f64::total_cmp);
            classes.push(ClassReadings {
                name: name.clone(),
                readings,
            });
        }
        Ok(SampleSet {
            prompt_digest: prompt.digest(),
            k,
            temperature,
            classes,
            provenance,
        })
    }

    pub fn prompt_digest(&self) -> &str {
        &self.prompt_digest
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn temperature(&self) -> f64 {
        self.temperature
    }

    pub fn provenance(&self) -> Provenance {
        self.provenance
    }

    /// Per-class readings in prompt class order.
    pub fn classes(&self) -> &[ClassReadings] {
        &self.classes
    }

    pub fn readings(&self, class_name: &str) -> Option<&[f64]> {
        self.classes
            .iter()
            .find(|c| c.name == class_name)
            .map(|c| c.readings.as_slice())
    }
}

/// Connection settings for the live sensor.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SensorConfig {
    pub endpoint: String,
    pub model_name: String,
    pub k: usize,
    pub temperature: f64,
    pub max_retries: usize,
    pub timeout_secs: f64,
}

impl Default for SensorConfig {
    fn default() -> Self {
        SensorConfig {
            endpoint: "https://api.openai.com/v1/chat/completions".to_string(),
            model_name: "gpt-4o".to_string(),
            k: 16,
            temperature: 1.0,
            max_retries: 2,
            timeout_secs: 30.0,
        }
    }
}

impl SensorConfig {
    pub fn validate(&self) -> Result<(), SensorError> {
        if self.k == 0 {
            return Err(SensorError::ZeroShots);
        }
        if !(self.timeout_secs > 0.0) {
            return Err(SensorError::InvalidConfig(format!(
                "timeout must be positive, got {}",
                self.timeout_secs
            )));
        }
        Ok(())
    }
}

/// Deterministic rating instruction: asks for a bare JSON object mapping
/// every class name to a danger rating in [0,1], echoing the prompt verbatim.
pub fn build_rating_prompt(prompt: &Prompt) -> String {
    let mut keys = String::new();
    for (i, name) in prompt.class_names.iter().enumerate() {
        if i > 0 {
            keys.push_str(", ");
        }
        keys.push('"');
        keys.push_str(name);
        keys.push('"');
    }
    format!(
        "You rate how dangerous obstacles are to a ground robot in the \
         situation described below. Respond with only a JSON object mapping \
         each class name to a number between 0 and 1, where 0 is harmless \
         and 1 is extremely dangerous. No explanation, no code fences.\n\
         \n\
         Situation: {}\n\
         \n\
         Classes to rate: {}",
        prompt.text, keys
    )
}

/// One chat completion. Implementations decide transport and may batch
/// several completions into one provider request.
pub trait ChatBackend: Sync {
    /// Requests a single completion and returns the assistant message text.
    fn complete(
        &self,
        system: &str,
        user: &str,
        temperature: f64,
    ) -> Result<String, SensorError>;

    /// True when [`ChatBackend::complete_many`] issues one provider request
    /// for all `n` completions instead of `n` independent requests.
    fn batches(&self) -> bool {
        false
    }

    /// Requests `n` completions. The default issues `n` independent calls.
    fn complete_many(
        &self,
        system: &str,
        user: &str,
        temperature: f64,
        n: usize,
    ) -> Result<Vec<String>, SensorError> {
        (0..n).map(|_| self.complete(system, user, temperature)).collect()
    }
}

/// Environment variables consulted for the API key, in order.
pub const API_KEY_VARS: [&str; 2] = ["SEMPATH_API_KEY", "OPENAI_API_KEY"];

/// Chat-completions HTTP backend (OpenAI-style request/response shape).
pub struct HttpBackend {
    endpoint: String,
    model_name: String,
    api_key: String,
    timeout: Duration,
    single_request_batching: bool,
}

impl HttpBackend {
    pub fn new(config: &SensorConfig, api_key: impl Into<String>) -> Self {
        HttpBackend {
            endpoint: config.endpoint.clone(),
            model_name: config.model_name.clone(),
            api_key: api_key.into(),
            timeout: Duration::from_secs_f64(config.timeout_secs),
            single_request_batching: false,
        }
    }

    /// Reads the API key from the environment; never from a config file.
    pub fn from_env(config: &SensorConfig) -> Result<Self, SensorError> {
        for var in API_KEY_VARS {
            if let Ok(key) = std::env::var(var) {
                if !key.is_empty() {
                    return Ok(Self::new(config, key));
                }
            }
        }
        Err(SensorError::MissingCredentials(API_KEY_VARS[0]))
    }

    /// Switches to one provider request carrying `n` completion choices,
    /// instead of `n` independent requests.
    pub fn with_single_request_batching(mut self) -> Self {
        self.single_request_batching = true;
        self
    }

    fn request(
        &self,
        system: &str,
        user: &str,
        temperature: f64,
        n: usize,
    ) -> Result<Vec<String>, SensorError> {
        let body = serde_json::json!({
            "model": self.model_name,
            "temperature": temperature,
            "n": n,
            "messages": [
                {"role": "system", "content": system},
                {"role": "user", "content": user},
            ],
        });
        let agent = ureq::AgentBuilder::new().timeout(self.timeout).build();
        let response = agent
            .post(&self.endpoint)
            .set("authorization", &format!("Bearer {}", self.api_key))
            .set("content-type", "application/json")
            .send_string(&body.to_string())
            .map_err(|e| SensorError::Transport {
                attempts: 1,
                detail: e.to_string(),
            })?;
        let payload: serde_json::Value =
            response
                .into_json()
                .map_err(|e| SensorError::Transport {
                    attempts: 1,
                    detail: format!("response body was not JSON: {e}"),
                })?;
        let choices = payload
            .get("choices")
            .and_then(|c| c.as_array())
            .ok_or_else(|| SensorError::Transport {
                attempts: 1,
                detail: "response had no choices array".to_string(),
            })?;
        let mut contents = Vec::with_capacity(n);
        for choice in choices.iter().take(n) {
            let content = choice
                .pointer("/message/content")
                .and_then(|c| c.as_str())
                .ok_or_else(|| SensorError::Transport {
                    attempts: 1,
                    detail: "choice had no message content".to_string(),
                })?;
            contents.push(content.to_string());
        }
        if contents.len() != n {
            return Err(SensorError::Transport {
                attempts: 1,
                detail: format!("asked for {n} choices, got {}", contents.len()),
            });
        }
        Ok(contents)
    }
}

impl ChatBackend for HttpBackend {
    fn complete(
        &self,
        system: &str,
        user: &str,
        temperature: f64,
    ) -> Result<String, SensorError> {
        Ok(self.request(system, user, temperature, 1)?.remove(0))
    }

    fn batches(&self) -> bool {
        self.single_request_batching
    }

    fn complete_many(
        &self,
        system: &str,
        user: &str,
        temperature: f64,
        n: usize,
    ) -> Result<Vec<String>, SensorError> {
        if self.single_request_batching {
            self.request(system, user, temperature, n)
        } else {
            (0..n).map(|_| self.complete(system, user, temperature)).collect()
        }
    }
}

/// Parses one completion into ratings aligned with the prompt's class order.
/// The content must be a bare JSON object of class name to number.
fn parse_ratings(content: &str, prompt: &Prompt) -> Result<Vec<f64>, String> {
    let parsed: BTreeMap<String, f64> = serde_json::from_str(content.trim())
        .map_err(|e| format!("not a JSON object of class->number: {e}"))?;
    let mut out = Vec::with_capacity(prompt.class_names.len());
    for name in &prompt.class_names {
        match parsed.get(name) {
            Some(&value) => out.push(value),
            None => return Err(format!("missing rating for class {name:?}")),
        }
    }
    Ok(out)
}

fn shot_with_retries(
    backend: &dyn ChatBackend,
    system: &str,
    user: &str,
    temperature: f64,
    max_retries: usize,
    shot: usize,
    prompt: &Prompt,
) -> Result<Vec<f64>, SensorError> {
    let attempts = max_retries + 1;
    let mut last = String::new();
    for _ in 0..attempts {
        match backend.complete(system, user, temperature) {
            Ok(content) => match parse_ratings(&content, prompt) {
                Ok(ratings) => return Ok(ratings),
                Err(detail) => last = detail,
            },
            Err(e) => last = e.to_string(),
        }
    }
    Err(SensorError::MalformedCompletion {
        shot,
        attempts,
        detail: last,
    })
}

/// Queries the live sensor: `k` completions (issued concurrently, or as one
/// batched request when the backend batches), each parsed into per-class
/// ratings. A failed or malformed shot is retried alone up to
/// `config.max_retries` times; exhaustion fails the whole call.
pub fn sample_llm(
    config: &SensorConfig,
    prompt: &Prompt,
    backend: &dyn ChatBackend,
) -> Result<SampleSet, SensorError> {
    config.validate()?;
    let system = build_rating_prompt(prompt);
    let user = prompt.text.to_string();
    let k = config.k;

    let mut shots: Vec<Option<Vec<f64>>> = vec![None; k];
    if backend.batches() {
        // One provider request for all k shots, then per-shot repair of any
        // malformed completion through single calls.
        let mut contents = Err(SensorError::Transport {
            attempts: 0,
            detail: String::new(),
        });
        for attempt in 0..=config.max_retries {
            contents = backend.complete_many(&system, &user, config.temperature, k);
            match contents {
                Ok(_) => break,
                Err(ref e) if attempt == config.max_retries => {
                    return Err(SensorError::Transport {
                        attempts: config.max_retries + 1,
                        detail: e.to_string(),
                    });
                }
                Err(_) => {}
            }
        }
        for (shot, content) in contents?.into_iter().enumerate() {
            match parse_ratings(&content, prompt) {
                Ok(ratings) => shots[shot] = Some(ratings),
                Err(_) => {
                    shots[shot] = Some(shot_with_retries(
                        backend,
                        &system,
                        &user,
                        config.temperature,
                        config.max_retries,
                        shot,
                        prompt,
                    )?);
                }
            }
        }
    } else {
        let results: Vec<Result<Vec<f64>, SensorError>> = std::thread::scope(|scope| {
            let handles: Vec<_> = (0..k)
                .map(|shot| {
                    let system = &system;
                    let user = &user;
                    scope.spawn(move || {
                        shot_with_retries(
                            backend,
                            system,
                            user,
                            config.temperature,
                            config.max_retries,
                            shot,
                            prompt,
                        )
                    })
                })
                .collect();
            handles
                .into_iter()
                .map(|h| h.join().expect("sensor shot thread panicked"))
                .collect()
        });
        for (shot, result) in results.into_iter().enumerate() {
            shots[shot] = Some(result?);
        }
    }

    // Transpose shot-major ratings into per-class lists.
    let c = prompt.class_names.len();
    let mut per_class = vec![Vec::with_capacity(k); c];
    for shot in shots.into_iter().map(|s| s.expect("all shots filled")) {
        for (i, rating) in shot.into_iter().enumerate() {
            per_class[i].push(rating);
        }
    }
    SampleSet::new(prompt, config.temperature, per_class, Provenance::Live)
}

/// Deterministic sensor stand-in: `k` seeded Beta(a, b) draws per class.
/// Class `i` draws from its own substream, so appending a class never
/// changes the readings of earlier ones.
pub fn sample_mock(
    seed: u64,
    prompt: &Prompt,
    k: usize,
    per_class_params: &BTreeMap<String, (f64, f64)>,
) -> Result<SampleSet, SensorError> {
    if k == 0 {
        return Err(SensorError::ZeroShots);
    }
    let root = substream_seed(seed, MOCK_DOMAIN);
    let mut per_class = Vec::with_capacity(prompt.class_names.len());
    for (i, name) in prompt.class_names.iter().enumerate() {
        let &(a, b) = per_class_params
            .get(name)
            .ok_or_else(|| SensorError::MissingBetaParams(name.clone()))?;
        let beta = rand_distr::Beta::new(a, b).map_err(|_| SensorError::InvalidBetaShape {
            class: name.clone(),
            a,
            b,
        })?;
        let mut rng = seeded(substream_seed(root, i as u64));
        per_class.push((0..k).map(|_| beta.sample(&mut rng)).collect());
    }
    SampleSet::new(prompt, 1.0, per_class, Provenance::Mock)
}

#[derive(Debug, Serialize, Deserialize)]
struct CacheDocument {
    prompt_digest: String,
    k: usize,
    temperature: f64,
    per_class: BTreeMap<String, Vec<f64>>,
}

/// Writes a sample set to a replayable JSON cache file.
pub fn cache_store(set: &SampleSet, path: impl AsRef<Path>) -> Result<(), SensorError> {
    let doc = CacheDocument {
        prompt_digest: set.prompt_digest.clone(),
        k: set.k,
        temperature: set.temperature,
        per_class: set
            .classes
            .iter()
            .map(|c| (c.name.clone(), c.readings.clone()))
            .collect(),
    };
    let text = serde_json::to_string_pretty(&doc).expect("cache document serializes");
    std::fs::write(path, text)?;
    Ok(())
}

/// Reads a cache file recorded for exactly this prompt. The stored digest
/// must match the prompt's; provenance becomes [`Provenance::Cached`].
pub fn cache_load(path: impl AsRef<Path>, prompt: &Prompt) -> Result<SampleSet, SensorError> {
    let text = std::fs::read_to_string(path)?;
    let doc: CacheDocument =
        serde_json::from_str(&text).map_err(|e| SensorError::CacheParse(e.to_string()))?;
    let expected = prompt.digest();
    if doc.prompt_digest != expected {
        return Err(SensorError::DigestMismatch {
            found: doc.prompt_digest,
            expected,
        });
    }
    let mut per_class = Vec::with_capacity(prompt.class_names.len());
    for name in &prompt.class_names {
        let readings = doc
            .per_class
            .get(name)
            .ok_or_else(|| SensorError::CacheMissingClass(name.clone()))?;
        per_class.push(readings.clone());
    }
    let set = SampleSet::new(prompt, doc.temperature, per_class, Provenance::Cached)?;
    if set.k != doc.k {
        return Err(SensorError::CacheParse(format!(
            "stored k = {} disagrees with reading lists of length {}",
            doc.k, set.k
        )));
    }
    Ok(set)
}

/// Anything that can produce a [`SampleSet`] on demand — the live sensor or
/// the mock — so ablation and timing harnesses can swap them freely.
pub trait Sampler: Sync {
    fn sample(&self, prompt: &Prompt, k: usize, seed: u64) -> Result<SampleSet, SensorError>;
}

/// Seeded Beta mock with an optional injected per-shot latency, for timing
/// harnesses. The delay is served by concurrent per-shot sleepers, matching
/// the live sensor's fan-out.
pub struct MockSampler {
    pub per_class_params: BTreeMap<String, (f64, f64)>,
    pub shot_delay: Option<Duration>,
}

impl MockSampler {
    pub fn new(per_class_params: BTreeMap<String, (f64, f64)>) -> Self {
        MockSampler {
            per_class_params,
            shot_delay: None,
        }
    }

    pub fn with_shot_delay(mut self, delay: Duration) -> Self {
        self.shot_delay = Some(delay);
        self
    }
}

impl Sampler for MockSampler {
    fn sample(&self, prompt: &Prompt, k: usize, seed: u64) -> Result<SampleSet, SensorError> {
        if let Some(delay) = self.shot_delay {
            std::thread::scope(|scope| {
                for _ in 0..k {
                    scope.spawn(move || std::thread::sleep(delay));
                }
            });
        }
        sample_mock(seed, prompt, k, &self.per_class_params)
    }
}

/// The live sensor as a [`Sampler`]; the seed argument is ignored because
/// the endpoint's randomness is not seedable.
pub struct LiveSampler<'a> {
    pub config: SensorConfig,
    pub backend: &'a dyn ChatBackend,
}

impl Sampler for LiveSampler<'_> {
    fn sample(&self, prompt: &Prompt, k: usize, _seed: u64) -> Result<SampleSet, SensorError> {
        let mut config = self.config.clone();
        config.k = k;
        sample_llm(&config, prompt, self.backend)
    }
}

/// One row of the shot-latency table.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LatencyRow {
    pub k: usize,
    pub runs: usize,
    pub mean_s: f64,
    pub std_s: f64,
    pub mean_per_shot_s: f64,
}

/// Measures wall time of whole acquisitions for each shot count in `ks`,
/// `runs` times each. Reports mean, sample standard deviation, and mean
/// per-shot time.
pub fn measure_shot_latency(
    sampler: &dyn Sampler,
    prompt: &Prompt,
    ks: &[usize],
    runs: usize,
    seed: u64,
) -> Result<Vec<LatencyRow>, SensorError> {
    if runs == 0 {
        return Err(SensorError::NoRuns);
    }
    let mut rows = Vec::with_capacity(ks.len());
    for (i, &k) in ks.iter().enumerate() {
        let mut times = Vec::with_capacity(runs);
        for run in 0..runs {
            let run_seed = substream_seed(seed, (i * runs + run) as u64);
            let t0 = Instant::now();
            sampler.sample(prompt, k, run_seed)?;
            times.push(t0.elapsed().as_secs_f64());
        }
        let mean = times.iter().sum::<f64>() / runs as f64;
        let std = if runs > 1 {
            (times.iter().map(|t| (t - mean).powi(2)).sum::<f64>() / (runs - 1) as f64).sqrt()
        } else {
            0.0
        };
        rows.push(LatencyRow {
            k,
            runs,
            mean_s: mean,
            std_s: std,
            mean_per_shot_s: mean / k as f64,
        });
    }
    Ok(rows)
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::sync::Mutex;

    fn prompt() -> Prompt {
        Prompt::new(
            "the workzone is busy",
            vec!["crane".to_string(), "forklift".to_string()],
        )
        .unwrap()
    }

    /// Replays scripted completions in order; records nothing after the
    /// script runs out.
    struct ScriptedBackend {
        replies: Mutex<Vec<Result<String, String>>>,
    }

    impl ScriptedBackend {
        fn new(replies: Vec<Result<&str, &str>>) -> Self {
            ScriptedBackend {
                replies: Mutex::new(
                    replies
                        .into_iter()
                        .rev()
                        .map(|r| r.map(str::to_string).map_err(str::to_string))
                        .collect(),
                ),
            }
        }
    }

    impl ChatBackend for ScriptedBackend {
        fn complete(&self, _: &str, _: &str, _: f64) -> Result<String, SensorError> {
            match self.replies.lock().unwrap().pop() {
                Some(Ok(content)) => Ok(content),
                Some(Err(detail)) => Err(SensorError::Transport { attempts: 1, detail }),
                None => Err(SensorError::Transport {
                    attempts: 1,
                    detail: "script exhausted".to_string(),
                }),
            }
        }
    }

    fn config(k: usize, max_retries: usize) -> SensorConfig {
        SensorConfig {
            k,
            max_retries,
            ..SensorConfig::default()
        }
    }

    #[test]
    fn prompt_rejects_duplicates_and_empties() {
        assert!(matches!(
            Prompt::new("", vec!["a".to_string()]),
            Err(SensorError::EmptyPrompt)
        ));
        assert!(matches!(
            Prompt::new("x", vec![]),
            Err(SensorError::NoClasses)
        ));
        assert!(matches!(
            Prompt::new("x", vec!["a".to_string(), "a".to_string()]),
            Err(SensorError::DuplicateClass(_))
        ));
    }

    #[test]
    fn rating_prompt_echoes_text_and_classes() {
        let p = prompt();
        let text = build_rating_prompt(&p);
        assert!(text.contains("the workzone is busy"));
        assert!(text.contains("\"crane\""));
        assert!(text.contains("\"forklift\""));
        assert_eq!(text, build_rating_prompt(&p));
    }

    #[test]
    fn sample_set_clamps_and_sorts() {
        let p = prompt();
        let set = SampleSet::new(
            &p,
            1.0,
            vec![vec![1.3, 0.2], vec![-0.5, 0.9]],
            Provenance::Mock,
        )
        .unwrap();
        assert_eq!(set.readings("crane").unwrap(), &[0.2, 1.0]);
        assert_eq!(set.readings("forklift").unwrap(), &[0.0, 0.9]);
    }

    #[test]
    fn sample_set_is_order_invariant() {
        let p = prompt();
        let a = SampleSet::new(
            &p,
            1.0,
            vec![vec![0.7, 0.3, 0.5], vec![0.1, 0.9, 0.4]],
            Provenance::Live,
        )
        .unwrap();
        let b = SampleSet::new(
            &p,
            1.0,
            vec![vec![0.3, 0.5, 0.7], vec![0.9, 0.4, 0.1]],
            Provenance::Live,
        )
        .unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn sample_llm_collects_k_shots() {
        let p = prompt();
        let backend = ScriptedBackend::new(vec![
            Ok(r#"{"crane": 0.7, "forklift": 0.4}"#),
            Ok(r#"{"crane": 0.6, "forklift": 0.5}"#),
        ]);
        let set = sample_llm(&config(2, 0), &p, &backend).unwrap();
        assert_eq!(set.k(), 2);
        assert_eq!(set.provenance(), Provenance::Live);
        assert_eq!(set.readings("crane").unwrap(), &[0.6, 0.7]);
        assert_eq!(set.readings("forklift").unwrap(), &[0.4, 0.5]);
    }

    #[test]
    fn out_of_range_rating_is_clamped() {
        let p = prompt();
        let backend = ScriptedBackend::new(vec![Ok(r#"{"crane": 1.3, "forklift": -2.0}"#)]);
        let set = sample_llm(&config(1, 0), &p, &backend).unwrap();
        assert_eq!(set.readings("crane").unwrap(), &[1.0]);
        assert_eq!(set.readings("forklift").unwrap(), &[0.0]);
    }

    #[test]
    fn missing_class_without_retries_fails() {
        let p = prompt();
        let backend = ScriptedBackend::new(vec![Ok(r#"{"crane": 0.7}"#)]);
        match sample_llm(&config(1, 0), &p, &backend) {
            Err(SensorError::MalformedCompletion { attempts: 1, detail, .. }) => {
                assert!(detail.contains("forklift"), "detail: {detail}");
            }
            other => panic!("expected malformed-completion, got {other:?}"),
        }
    }

    #[test]
    fn failed_shot_is_retried_alone() {
        let p = prompt();
        // k=1: first reply malformed, retry succeeds.
        let backend = ScriptedBackend::new(vec![
            Ok("not json"),
            Ok(r#"{"crane": 0.2, "forklift": 0.8}"#),
        ]);
        let set = sample_llm(&config(1, 1), &p, &backend).unwrap();
        assert_eq!(set.readings("crane").unwrap(), &[0.2]);
    }

    #[test]
    fn transport_errors_exhaust_retries() {
        let p = prompt();
        let backend = ScriptedBackend::new(vec![Err("boom"), Err("boom"), Err("boom")]);
        assert!(matches!(
            sample_llm(&config(1, 2), &p, &backend),
            Err(SensorError::MalformedCompletion { attempts: 3, .. })
        ));
    }

    #[test]
    fn mock_is_deterministic_and_in_range() {
        let p = prompt();
        let params: BTreeMap<String, (f64, f64)> = [
            ("crane".to_string(), (2.0, 5.0)),
            ("forklift".to_string(), (5.0, 2.0)),
        ]
        .into();
        let a = sample_mock(7, &p, 16, &params).unwrap();
        let b = sample_mock(7, &p, 16, &params).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.provenance(), Provenance::Mock);
        for class in a.classes() {
            assert!(class.readings().iter().all(|r| (0.0..=1.0).contains(r)));
        }
        let c = sample_mock(8, &p, 16, &params).unwrap();
        assert_ne!(a, c, "different seeds should give different readings");
    }

    #[test]
    fn mock_concentrated_beta_centers_near_half() {
        let p = Prompt::new("x", vec!["crane".to_string()]).unwrap();
        let params: BTreeMap<String, (f64, f64)> = [("crane".to_string(), (50.0, 50.0))].into();
        let set = sample_mock(3, &p, 16, &params).unwrap();
        let readings = set.readings("crane").unwrap();
        let mean = readings.iter().sum::<f64>() / readings.len() as f64;
        assert!((mean - 0.5).abs() < 0.1, "mean {mean}");
    }

    #[test]
    fn appending_a_class_leaves_earlier_readings_alone() {
        let p1 = Prompt::new("x", vec!["crane".to_string()]).unwrap();
        let p2 = Prompt::new(
            "x",
            vec!["crane".to_string(), "forklift".to_string()],
        )
        .unwrap();
        let params: BTreeMap<String, (f64, f64)> = [
            ("crane".to_string(), (2.0, 2.0)),
            ("forklift".to_string(), (3.0, 3.0)),
        ]
        .into();
        let a = sample_mock(7, &p1, 8, &params).unwrap();
        let b = sample_mock(7, &p2, 8, &params).unwrap();
        assert_eq!(a.readings("crane"), b.readings("crane"));
    }

    #[test]
    fn mock_rejects_bad_shapes() {
        let p = Prompt::new("x", vec!["crane".to_string()]).unwrap();
        let params: BTreeMap<String, (f64, f64)> = [("crane".to_string(), (0.0, 1.0))].into();
        assert!(matches!(
            sample_mock(7, &p, 4, &params),
            Err(SensorError::InvalidBetaShape { .. })
        ));
        assert!(matches!(
            sample_mock(7, &p, 4, &BTreeMap::new()),
            Err(SensorError::MissingBetaParams(_))
        ));
    }

    #[test]
    fn cache_round_trips_except_provenance() {
        let p = prompt();
        let params: BTreeMap<String, (f64, f64)> = [
            ("crane".to_string(), (2.0, 5.0)),
            ("forklift".to_string(), (5.0, 2.0)),
        ]
        .into();
        let original = sample_mock(7, &p, 4, &params).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("readings.json");
        cache_store(&original, &path).unwrap();
        let loaded = cache_load(&path, &p).unwrap();
        assert_eq!(loaded.provenance(), Provenance::Cached);
        assert_eq!(loaded.k(), original.k());
        assert_eq!(loaded.classes(), original.classes());
        assert_eq!(loaded.prompt_digest(), original.prompt_digest());
    }

    #[test]
    fn cache_load_rejects_changed_prompt() {
        let p = prompt();
        let params: BTreeMap<String, (f64, f64)> = [
            ("crane".to_string(), (2.0, 5.0)),
            ("forklift".to_string(), (5.0, 2.0)),
        ]
        .into();
        let set = sample_mock(7, &p, 4, &params).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("readings.json");
        cache_store(&set, &path).unwrap();
        let other = Prompt::new(
            "a different situation",
            vec!["crane".to_string(), "forklift".to_string()],
        )
        .unwrap();
        assert!(matches!(
            cache_load(&path, &other),
            Err(SensorError::DigestMismatch { .. })
        ));
    }

    #[test]
    fn cache_load_rejects_truncation() {
        let p = prompt();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("readings.json");
        std::fs::write(&path, "{\"prompt_digest\": \"ab").unwrap();
        assert!(matches!(
            cache_load(&path, &p),
            Err(SensorError::CacheParse(_))
        ));
    }

    #[test]
    fn latency_per_shot_shrinks_under_fan_out() {
        let p = prompt();
        let params: BTreeMap<String, (f64, f64)> = [
            ("crane".to_string(), (2.0, 2.0)),
            ("forklift".to_string(), (2.0, 2.0)),
        ]
        .into();
        let sampler = MockSampler::new(params).with_shot_delay(Duration::from_millis(10));
        let rows = measure_shot_latency(&sampler, &p, &[1, 8], 3, 7).unwrap();
        assert_eq!(rows.len(), 2);
        assert_eq!((rows[0].k, rows[1].k), (1, 8));
        assert!(
            rows[1].mean_per_shot_s <= rows[0].mean_per_shot_s * 1.05,
            "per-shot time should not grow with k: {rows:?}"
        );
    }

    #[test]
    fn latency_needs_at_least_one_run() {
        let p = prompt();
        let sampler = MockSampler::new(BTreeMap::new());
        assert!(matches!(
            measure_shot_latency(&sampler, &p, &[1], 0, 7),
            Err(SensorError::NoRuns)
        ));
    }

    #[test]
    fn http_backend_round_trips_against_local_server() {
        use std::io::{Read, Write};

        let listener = std::net::TcpListener::bind("127.0.0.1:0").unwrap();
        let addr = listener.local_addr().unwrap();
        let server = std::thread::spawn(move || {
            let (mut stream, _) = listener.accept().unwrap();
            let mut buf = vec![0u8; 65536];
            let mut read = 0;
            let body_start;
            loop {
                let n = stream.read(&mut buf[read..]).unwrap();
                read += n;
                if let Some(pos) = buf[..read].windows(4).position(|w| w == b"\r\n\r\n") {
                    body_start = pos + 4;
                    break;
                }
            }
            let head = String::from_utf8_lossy(&buf[..body_start]).to_string();
            let content_length: usize = head
                .lines()
                .find(|l| l.to_ascii_lowercase().starts_with("content-length:"))
                .and_then(|l| l.split(':').nth(1))
                .and_then(|v| v.trim().parse().ok())
                .unwrap();
            while read < body_start + content_length {
                let n = stream.read(&mut buf[read..]).unwrap();
                read += n;
            }
            let body: serde_json::Value =
                serde_json::from_slice(&buf[body_start..body_start + content_length]).unwrap();
            let reply = serde_json::json!({
                "choices": [
                    {"message": {"role": "assistant",
                                 "content": "{\"crane\": 0.7, \"forklift\": 0.4}"}}
                ]
            })
            .to_string();
            let response = format!(
                "HTTP/1.1 200 OK\r\ncontent-type: application/json\r\n\
                 content-length: {}\r\nconnection: close\r\n\r\n{}",
                reply.len(),
                reply
            );
            stream.write_all(response.as_bytes()).unwrap();
            (head, body)
        });

        let cfg = SensorConfig {
            endpoint: format!("http://{addr}/v1/chat/completions"),
            k: 1,
            ..SensorConfig::default()
        };
        let backend = HttpBackend::new(&cfg, "test-key");
        let content = backend.complete("sys", "usr", 1.0).unwrap();
        assert_eq!(content, "{\"crane\": 0.7, \"forklift\": 0.4}");

        let (head, body) = server.join().unwrap();
        assert!(head.contains("Bearer test-key"), "head: {head}");
        assert_eq!(body["model"], "gpt-4o");
        assert_eq!(body["temperature"], 1.0);
        assert_eq!(body["messages"][0]["role"], "system");
        assert_eq!(body["messages"][1]["content"], "usr");
    }
}
