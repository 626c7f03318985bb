//! Set-function oracles: synthetic objectives, an external subprocess
//! evaluator, and the caching wrapper the search engines talk to.

use std::collections::{BTreeMap, HashMap};
use std::io::{BufRead, BufReader, Write};
use std::process::{Child, ChildStdin, Command, Stdio};
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::mpsc::{Receiver, RecvTimeoutError};
use std::sync::Mutex;
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::domain::{Assignment, DomainError, Element, FilledSlot};

/// Version of the line protocol spoken to external evaluators.
pub const PROTOCOL_VERSION: u64 = 1;

/// Evaluation fidelity: 1.0 means a full evaluation, smaller values trade
/// accuracy for speed. Fixed for the duration of one search run so cached
/// scores stay coherent.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Fidelity(f64);

impl Fidelity {
    pub const FULL: Fidelity = Fidelity(1.0);

    pub fn new(level: f64) -> Option<Self> {
        if level.is_finite() && level > 0.0 && level <= 1.0 {
            Some(Fidelity(level))
        } else {
            None
        }
    }

    pub fn level(self) -> f64 {
        self.0
    }

    pub(crate) fn key_bits(self) -> u64 {
        self.0.to_bits()
    }
}

impl Default for Fidelity {
    fn default() -> Self {
        Fidelity::FULL
    }
}

/// Failures while scoring an assignment.
#[derive(Debug, Error)]
pub enum EvalError {
    #[error("evaluator failure: {reason}")]
    EvaluatorFailure { reason: String, payload: Option<String> },
    #[error("evaluator handshake failed: {0}")]
    HandshakeFailure(String),
    #[error("evaluator timed out after {0:?}")]
    Timeout(Duration),
    #[error("evaluator protocol error: {detail} (line: {line:?})")]
    ProtocolError { line: String, detail: String },
    #[error(transparent)]
    Domain(#[from] DomainError),
}

/// Where a score came from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EvalSource {
    Synthetic,
    External,
    Cache,
}

/// One logged evaluation.
#[derive(Debug, Clone, Serialize)]
pub struct EvalRecord {
    pub assignment: Assignment,
    pub fidelity: Fidelity,
    pub value: f64,
    pub source: EvalSource,
}

/// A raw scoring backend. Implementations must be deterministic: the same
/// assignment at the same fidelity always yields the same score.
pub trait ScoreBackend: Send + Sync {
    fn score(&self, a: &Assignment, fidelity: Fidelity) -> Result<f64, EvalError>;

    fn name(&self) -> &str;

    fn source(&self) -> EvalSource {
        EvalSource::Synthetic
    }

    /// Whether `score` may be called from several threads at once.
    fn concurrency_safe(&self) -> bool {
        true
    }

    /// Largest score this backend may legally return. Accuracy-like backends
    /// are capped at 1.0; diagnostic backends with free-form values return
    /// infinity.
    fn max_score(&self) -> f64 {
        1.0
    }
}

type CacheKey = (Box<[(u32, u32)]>, u64);

struct CacheSlot {
    value: f64,
    last_used: u64,
}

struct Cache {
    map: HashMap<CacheKey, CacheSlot>,
    tick: u64,
    cap: Option<usize>,
    evictions: u64,
}

impl Cache {
    fn get(&mut self, key: &CacheKey) -> Option<f64> {
        self.tick += 1;
        let tick = self.tick;
        self.map.get_mut(key).map(|slot| {
            slot.last_used = tick;
            slot.value
        })
    }

    fn insert(&mut self, key: CacheKey, value: f64) {
        self.tick += 1;
        if let Some(cap) = self.cap {
            // evict the least recently used entry; eviction changes miss
            // counts on later lookups, never values
            while self.map.len() >= cap.max(1) && !self.map.contains_key(&key) {
                if let Some(oldest) = self
                    .map
                    .iter()
                    .min_by_key(|(_, slot)| slot.last_used)
                    .map(|(k, _)| k.clone())
                {
                    self.map.remove(&oldest);
                    self.evictions += 1;
                } else {
                    break;
                }
            }
        }
        self.map.insert(key, CacheSlot { value, last_used: self.tick });
    }
}

/// The oracle the engines consume: a backend plus a score cache keyed by
/// canonical assignment and fidelity, with hit/miss accounting.
///
/// INVARIANT: hits + misses equals the number of `evaluate` calls, and a
/// repeated call with identical arguments returns the identical value.
pub struct Objective {
    backend: Box<dyn ScoreBackend>,
    cache: Mutex<Cache>,
    misses: AtomicU64,
    hits: AtomicU64,
    log: Option<Mutex<Vec<EvalRecord>>>,
}

impl Objective {
    pub fn new(backend: Box<dyn ScoreBackend>) -> Self {
        Objective {
            backend,
            cache: Mutex::new(Cache { map: HashMap::new(), tick: 0, cap: None, evictions: 0 }),
            misses: AtomicU64::new(0),
            hits: AtomicU64::new(0),
            log: None,
        }
    }

    /// Bound the cache to `cap` entries with least-recently-used eviction.
    pub fn with_cache_cap(mut self, cap: usize) -> Self {
        self.cache.get_mut().unwrap().cap = Some(cap);
        self
    }

    /// Keep a record of every evaluation (used by the diagnostics command).
    pub fn with_eval_log(mut self) -> Self {
        self.log = Some(Mutex::new(Vec::new()));
        self
    }

    pub fn name(&self) -> &str {
        self.backend.name()
    }

    pub fn concurrency_safe(&self) -> bool {
        self.backend.concurrency_safe()
    }

    /// Score `a` at `fidelity`, consulting the cache first.
    pub fn evaluate(&self, a: &Assignment, fidelity: Fidelity) -> Result<f64, EvalError> {
        let key: CacheKey = (a.canonical_key(), fidelity.key_bits());
        if let Some(value) = self.cache.lock().unwrap().get(&key) {
            self.hits.fetch_add(1, Ordering::Relaxed);
            self.record(a, fidelity, value, EvalSource::Cache);
            return Ok(value);
        }
        let value = self.backend.score(a, fidelity)?;
        if !value.is_finite() || value < 0.0 || value > self.backend.max_score() {
            return Err(EvalError::EvaluatorFailure {
                reason: format!(
                    "score {value} outside the accepted range [0, {}]",
                    self.backend.max_score()
                ),
                payload: None,
            });
        }
        self.misses.fetch_add(1, Ordering::Relaxed);
        self.cache.lock().unwrap().insert(key, value);
        self.record(a, fidelity, value, self.backend.source());
        Ok(value)
    }

    /// `F(a + e) - F(a)`; exactly two `evaluate` calls in the worst case.
    pub fn marginal_gain(&self, a: &Assignment, e: Element, fidelity: Fidelity) -> Result<f64, EvalError> {
        let extended = a.with(e)?;
        Ok(self.evaluate(&extended, fidelity)? - self.evaluate(a, fidelity)?)
    }

    /// Number of backend evaluations performed (cache misses).
    pub fn misses(&self) -> u64 {
        self.misses.load(Ordering::Relaxed)
    }

    /// Number of evaluate calls answered from the cache.
    pub fn hits(&self) -> u64 {
        self.hits.load(Ordering::Relaxed)
    }

    pub fn evictions(&self) -> u64 {
        self.cache.lock().unwrap().evictions
    }

    /// Snapshot of the evaluation log; empty unless enabled via
    /// [`Objective::with_eval_log`].
    pub fn eval_log(&self) -> Vec<EvalRecord> {
        match &self.log {
            Some(log) => log.lock().unwrap().clone(),
            None => Vec::new(),
        }
    }

    fn record(&self, a: &Assignment, fidelity: Fidelity, value: f64, source: EvalSource) {
        if let Some(log) = &self.log {
            log.lock().unwrap().push(EvalRecord {
                assignment: a.clone(),
                fidelity,
                value,
                source,
            });
        }
    }
}

/// Weighted coverage: each element covers a fixed subset of a weighted
/// universe and `F(S)` is the covered weight fraction. Monotone submodular.
#[derive(Debug, Clone)]
pub struct CoverageOracle {
    weights: Vec<f64>,
    covers: BTreeMap<(u32, u32), Vec<u32>>,
    total: f64,
}

impl CoverageOracle {
    /// `weights[j]` is the value of universe item `j`; `covers` maps each
    /// element to the items it covers.
    pub fn new(
        weights: Vec<f64>,
        covers: impl IntoIterator<Item = (Element, Vec<u32>)>,
    ) -> Result<Self, EvalError> {
        if weights.iter().any(|w| !w.is_finite() || *w < 0.0) {
            return Err(EvalError::EvaluatorFailure {
                reason: "coverage weights must be finite and nonnegative".into(),
                payload: None,
            });
        }
        let n = weights.len() as u32;
        let mut map = BTreeMap::new();
        for (e, mut items) in covers {
            if let Some(&bad) = items.iter().find(|&&j| j >= n) {
                return Err(EvalError::EvaluatorFailure {
                    reason: format!("element {e} covers unknown universe item {bad}"),
                    payload: None,
                });
            }
            items.sort_unstable();
            items.dedup();
            map.insert((e.position, e.block), items);
        }
        let total = weights.iter().sum();
        Ok(CoverageOracle { weights, covers: map, total })
    }
}

impl ScoreBackend for CoverageOracle {
    fn score(&self, a: &Assignment, _fidelity: Fidelity) -> Result<f64, EvalError> {
        if self.total <= 0.0 {
            return Ok(0.0);
        }
        let mut covered = vec![false; self.weights.len()];
        for e in a.iter() {
            let items = self.covers.get(&(e.position, e.block)).ok_or_else(|| {
                EvalError::EvaluatorFailure {
                    reason: format!("no coverage entry for element {e}"),
                    payload: None,
                }
            })?;
            for &j in items {
                covered[j as usize] = true;
            }
        }
        // summed in ascending item order so equal sets give bit-equal scores
        let mut sum = 0.0;
        for (j, w) in self.weights.iter().enumerate() {
            if covered[j] {
                sum += w;
            }
        }
        Ok(sum / self.total)
    }

    fn name(&self) -> &str {
        "coverage"
    }
}

/// Concave-of-modular objective: per-feature modular mass pushed through a
/// power `rho` in (0, 1), normalized by the full ground set's score so values
/// stay in [0, 1]. Monotone submodular.
#[derive(Debug, Clone)]
pub struct ConcaveModularOracle {
    outer_weights: Vec<f64>,
    features: BTreeMap<(u32, u32), Vec<f64>>,
    rho: f64,
    normalizer: f64,
}

impl ConcaveModularOracle {
    /// `features` maps each element to one nonnegative mass per feature.
    pub fn new(
        outer_weights: Vec<f64>,
        features: impl IntoIterator<Item = (Element, Vec<f64>)>,
        rho: f64,
    ) -> Result<Self, EvalError> {
        if !(rho > 0.0 && rho < 1.0) {
            return Err(EvalError::EvaluatorFailure {
                reason: format!("rho must lie in (0, 1); got {rho}"),
                payload: None,
            });
        }
        if outer_weights.iter().any(|w| !w.is_finite() || *w < 0.0) {
            return Err(EvalError::EvaluatorFailure {
                reason: "outer weights must be finite and nonnegative".into(),
                payload: None,
            });
        }
        let mut map: BTreeMap<(u32, u32), Vec<f64>> = BTreeMap::new();
        for (e, masses) in features {
            if masses.len() != outer_weights.len() || masses.iter().any(|m| !m.is_finite() || *m < 0.0) {
                return Err(EvalError::EvaluatorFailure {
                    reason: format!("element {e} needs one nonnegative mass per feature"),
                    payload: None,
                });
            }
            map.insert((e.position, e.block), masses);
        }
        let mut oracle = ConcaveModularOracle { outer_weights, features: map, rho, normalizer: 1.0 };
        oracle.normalizer = oracle.raw_full().max(0.0);
        Ok(oracle)
    }

    fn raw(&self, masses_of: impl Fn(usize) -> f64) -> f64 {
        let mut sum = 0.0;
        for (j, w) in self.outer_weights.iter().enumerate() {
            sum += w * masses_of(j).powf(self.rho);
        }
        sum
    }

    fn raw_full(&self) -> f64 {
        self.raw(|j| self.features.values().map(|m| m[j]).sum())
    }
}

impl ScoreBackend for ConcaveModularOracle {
    fn score(&self, a: &Assignment, _fidelity: Fidelity) -> Result<f64, EvalError> {
        if self.normalizer <= 0.0 {
            return Ok(0.0);
        }
        let mut totals = vec![0.0; self.outer_weights.len()];
        for e in a.iter() {
            let masses = self.features.get(&(e.position, e.block)).ok_or_else(|| {
                EvalError::EvaluatorFailure {
                    reason: format!("no feature entry for element {e}"),
                    payload: None,
                }
            })?;
            for (t, m) in totals.iter_mut().zip(masses) {
                *t += m;
            }
        }
        Ok(self.raw(|j| totals[j]) / self.normalizer)
    }

    fn name(&self) -> &str {
        "concave_modular"
    }
}

/// Stand-in for a trained accuracy predictor: a saturating function of
/// per-element quality mass, with optional seeded noise whose amplitude
/// shrinks as fidelity rises. At `sigma = 0` or full fidelity it is exactly
/// monotone submodular; with noise it may be neither, deliberately.
#[derive(Debug, Clone)]
pub struct SurrogateAccuracyOracle {
    quality: BTreeMap<(u32, u32), f64>,
    kappa: f64,
    sigma: f64,
    seed: u64,
}

impl SurrogateAccuracyOracle {
    pub fn new(
        quality: impl IntoIterator<Item = (Element, f64)>,
        kappa: f64,
        sigma: f64,
        seed: u64,
    ) -> Result<Self, EvalError> {
        if !(kappa.is_finite() && kappa > 0.0) || !(sigma.is_finite() && sigma >= 0.0) {
            return Err(EvalError::EvaluatorFailure {
                reason: format!("need kappa > 0 and sigma >= 0; got kappa={kappa}, sigma={sigma}"),
                payload: None,
            });
        }
        let mut map = BTreeMap::new();
        for (e, q) in quality {
            if !q.is_finite() || q < 0.0 {
                return Err(EvalError::EvaluatorFailure {
                    reason: format!("element {e} needs a finite nonnegative quality"),
                    payload: None,
                });
            }
            map.insert((e.position, e.block), q);
        }
        Ok(SurrogateAccuracyOracle { quality: map, kappa, sigma, seed })
    }
}

/// FNV-1a over arbitrary bytes; used to derive per-assignment noise streams.
pub fn fnv1a(bytes: impl IntoIterator<Item = u8>) -> u64 {
    let mut h: u64 = 0xcbf29ce484222325;
    for b in bytes {
        h ^= b as u64;
        h = h.wrapping_mul(0x100000001b3);
    }
    h
}

impl ScoreBackend for SurrogateAccuracyOracle {
    fn score(&self, a: &Assignment, fidelity: Fidelity) -> Result<f64, EvalError> {
        let mut mass = 0.0;
        for e in a.iter() {
            let q = self.quality.get(&(e.position, e.block)).ok_or_else(|| {
                EvalError::EvaluatorFailure {
                    reason: format!("no quality entry for element {e}"),
                    payload: None,
                }
            })?;
            mass += q;
        }
        let base = 1.0 - (-mass / self.kappa).exp();
        let amplitude = self.sigma * (1.0 - fidelity.level());
        if amplitude <= 0.0 {
            return Ok(base);
        }
        // noise is a pure function of (seed, assignment, fidelity): repeat
        // queries see the same score
        let mut bytes: Vec<u8> = self.seed.to_le_bytes().to_vec();
        for (p, b) in a.canonical_key().iter() {
            bytes.extend_from_slice(&p.to_le_bytes());
            bytes.extend_from_slice(&b.to_le_bytes());
        }
        bytes.extend_from_slice(&fidelity.key_bits().to_le_bytes());
        let mut rng = ChaCha8Rng::seed_from_u64(fnv1a(bytes));
        let unit = (rng.random::<u64>() >> 11) as f64 / (1u64 << 53) as f64;
        Ok((base + amplitude * (2.0 * unit - 1.0)).clamp(0.0, 1.0))
    }

    fn name(&self) -> &str {
        "surrogate"
    }
}

/// Modular objective: a fixed value per element, summed. Gains never depend
/// on context, which makes it the canonical instrument for cost-mode
/// comparisons; values are not capped at 1.
#[derive(Debug, Clone)]
pub struct ModularOracle {
    values: BTreeMap<(u32, u32), f64>,
}

impl ModularOracle {
    pub fn new(values: impl IntoIterator<Item = (Element, f64)>) -> Result<Self, EvalError> {
        let mut map = BTreeMap::new();
        for (e, v) in values {
            if !v.is_finite() || v < 0.0 {
                return Err(EvalError::EvaluatorFailure {
                    reason: format!("element {e} needs a finite nonnegative value"),
                    payload: None,
                });
            }
            map.insert((e.position, e.block), v);
        }
        Ok(ModularOracle { values: map })
    }
}

impl ScoreBackend for ModularOracle {
    fn score(&self, a: &Assignment, _fidelity: Fidelity) -> Result<f64, EvalError> {
        let mut sum = 0.0;
        for e in a.iter() {
            sum += self.values.get(&(e.position, e.block)).ok_or_else(|| {
                EvalError::EvaluatorFailure {
                    reason: format!("no value entry for element {e}"),
                    payload: None,
                }
            })?;
        }
        Ok(sum)
    }

    fn name(&self) -> &str {
        "modular"
    }

    fn max_score(&self) -> f64 {
        f64::INFINITY
    }
}

/// Fully explicit set function: a score per assignment, looked up by
/// canonical key. A diagnostics instrument — it can express any shape,
/// including deliberately non-submodular ones.
#[derive(Debug, Clone)]
pub struct ExplicitOracle {
    values: HashMap<Box<[(u32, u32)]>, f64>,
}

impl ExplicitOracle {
    pub fn new(values: impl IntoIterator<Item = (Assignment, f64)>) -> Self {
        ExplicitOracle {
            values: values.into_iter().map(|(a, v)| (a.canonical_key(), v)).collect(),
        }
    }
}

impl ScoreBackend for ExplicitOracle {
    fn score(&self, a: &Assignment, _fidelity: Fidelity) -> Result<f64, EvalError> {
        self.values.get(&a.canonical_key()).copied().ok_or_else(|| {
            EvalError::EvaluatorFailure {
                reason: format!("no explicit value for assignment with {} elements", a.len()),
                payload: Some(serde_json::to_string(a).unwrap_or_default()),
            }
        })
    }

    fn name(&self) -> &str {
        "explicit"
    }

    fn max_score(&self) -> f64 {
        f64::INFINITY
    }
}

#[derive(Serialize)]
struct HelloRequest<'a> {
    cmd: &'a str,
    version: u64,
}

#[derive(Serialize)]
struct EvalRequest {
    id: u64,
    cmd: &'static str,
    assignment: Vec<FilledSlot>,
    fidelity: f64,
}

#[derive(Deserialize)]
struct HelloResponse {
    cmd: String,
    version: u64,
    #[serde(default)]
    name: Option<String>,
}

#[derive(Deserialize)]
struct EvalResponse {
    id: Option<u64>,
    #[serde(default)]
    accuracy: Option<f64>,
    #[serde(default)]
    error: Option<String>,
}

struct SessionInner {
    child: Child,
    stdin: ChildStdin,
    lines: Receiver<std::io::Result<String>>,
    next_id: u64,
    dead: bool,
}

/// A live evaluator subprocess speaking newline-delimited JSON.
///
/// One request is in flight at a time; request ids increase strictly.
/// Malformed responses poison the session: every later call fails fast
/// instead of desynchronizing the stream.
pub struct ExternalEvaluator {
    inner: Mutex<SessionInner>,
    name: String,
    timeout: Duration,
}

impl ExternalEvaluator {
    /// Launch `cmd` and perform the version handshake.
    pub fn spawn(cmd: &[String], timeout: Duration) -> Result<Self, EvalError> {
        if cmd.is_empty() {
            return Err(EvalError::HandshakeFailure("empty evaluator command".into()));
        }
        let mut child = Command::new(&cmd[0])
            .args(&cmd[1..])
            .stdin(Stdio::piped())
            .stdout(Stdio::piped())
            .stderr(Stdio::inherit())
            .spawn()
            .map_err(|e| EvalError::HandshakeFailure(format!("failed to launch {:?}: {e}", cmd[0])))?;
        let stdin = child.stdin.take().expect("piped stdin");
        let stdout = child.stdout.take().expect("piped stdout");
        let (tx, rx) = std::sync::mpsc::channel();
        std::thread::Builder::new()
            .name("evaluator-reader".into())
            .spawn(move || {
                let reader = BufReader::new(stdout);
                for line in reader.lines() {
                    if tx.send(line).is_err() {
                        break;
                    }
                }
            })
            .expect("spawn reader thread");

        let mut inner = SessionInner { child, stdin, lines: rx, next_id: 0, dead: false };
        let hello = serde_json::to_string(&HelloRequest { cmd: "hello", version: PROTOCOL_VERSION })
            .expect("serialize hello");
        writeln!(inner.stdin, "{hello}")
            .and_then(|_| inner.stdin.flush())
            .map_err(|e| EvalError::HandshakeFailure(format!("failed to send hello: {e}")))?;
        let line = match inner.lines.recv_timeout(timeout) {
            Ok(Ok(line)) => line,
            Ok(Err(e)) => return Err(EvalError::HandshakeFailure(format!("read error: {e}"))),
            Err(_) => return Err(EvalError::HandshakeFailure("no hello response".into())),
        };
        let resp: HelloResponse = serde_json::from_str(&line)
            .map_err(|e| EvalError::HandshakeFailure(format!("bad hello response ({e}): {line}")))?;
        if resp.cmd != "hello" || resp.version != PROTOCOL_VERSION {
            return Err(EvalError::HandshakeFailure(format!(
                "evaluator speaks version {}, expected {}",
                resp.version, PROTOCOL_VERSION
            )));
        }
        Ok(ExternalEvaluator {
            inner: Mutex::new(inner),
            name: resp.name.unwrap_or_else(|| "external".into()),
            timeout,
        })
    }

    fn request(&self, a: &Assignment, fidelity: Fidelity) -> Result<f64, EvalError> {
        let mut inner = self.inner.lock().unwrap();
        if inner.dead {
            return Err(EvalError::EvaluatorFailure {
                reason: "evaluator session is closed after an earlier failure".into(),
                payload: None,
            });
        }
        inner.next_id += 1;
        let id = inner.next_id;
        let req = serde_json::to_string(&EvalRequest {
            id,
            cmd: "eval",
            assignment: a.slots(),
            fidelity: fidelity.level(),
        })
        .expect("serialize eval request");
        if let Err(e) = writeln!(inner.stdin, "{req}").and_then(|_| inner.stdin.flush()) {
            inner.dead = true;
            return Err(EvalError::EvaluatorFailure {
                reason: format!("failed to send request: {e}"),
                payload: None,
            });
        }
        let deadline = Instant::now() + self.timeout;
        loop {
            let remaining = deadline.saturating_duration_since(Instant::now());
            let line = match inner.lines.recv_timeout(remaining) {
                Ok(Ok(line)) => line,
                Ok(Err(e)) => {
                    inner.dead = true;
                    return Err(EvalError::EvaluatorFailure {
                        reason: format!("read error: {e}"),
                        payload: None,
                    });
                }
                Err(RecvTimeoutError::Timeout) => {
                    inner.dead = true;
                    return Err(EvalError::Timeout(self.timeout));
                }
                Err(RecvTimeoutError::Disconnected) => {
                    inner.dead = true;
                    return Err(EvalError::EvaluatorFailure {
                        reason: "evaluator closed its output stream".into(),
                        payload: None,
                    });
                }
            };
            if line.trim().is_empty() {
                continue;
            }
            let resp: EvalResponse = match serde_json::from_str(&line) {
                Ok(r) => r,
                Err(e) => {
                    inner.dead = true;
                    return Err(EvalError::ProtocolError {
                        line,
                        detail: format!("response is not valid JSON: {e}"),
                    });
                }
            };
            match resp.id {
                Some(got) if got == id => {}
                _ => {
                    inner.dead = true;
                    return Err(EvalError::ProtocolError {
                        line,
                        detail: format!("response id does not echo request id {id}"),
                    });
                }
            }
            if let Some(msg) = resp.error {
                return Err(EvalError::EvaluatorFailure { reason: msg, payload: Some(line) });
            }
            return match resp.accuracy {
                Some(acc) => Ok(acc),
                None => {
                    inner.dead = true;
                    Err(EvalError::ProtocolError {
                        line,
                        detail: "response has neither accuracy nor error".into(),
                    })
                }
            };
        }
    }
}

impl ScoreBackend for ExternalEvaluator {
    fn score(&self, a: &Assignment, fidelity: Fidelity) -> Result<f64, EvalError> {
        self.request(a, fidelity)
    }

    fn name(&self) -> &str {
        &self.name
    }

    fn source(&self) -> EvalSource {
        EvalSource::External
    }

    fn concurrency_safe(&self) -> bool {
        false
    }
}

impl Drop for ExternalEvaluator {
    fn drop(&mut self) {
        if let Ok(mut inner) = self.inner.lock() {
            let _ = writeln!(inner.stdin, r#"{{"cmd":"shutdown"}}"#).and_then(|_| inner.stdin.flush());
            for _ in 0..50 {
                match inner.child.try_wait() {
                    Ok(Some(_)) => return,
                    Ok(None) => std::thread::sleep(Duration::from_millis(10)),
                    Err(_) => break,
                }
            }
            let _ = inner.child.kill();
            let _ = inner.child.wait();
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::domain::Element;

    fn e(p: u32, b: u32) -> Element {
        Element::new(p, b)
    }

    fn a(elems: &[(u32, u32)]) -> Assignment {
        Assignment::from_elements(elems.iter().map(|&(p, b)| e(p, b))).unwrap()
    }

    #[test]
    fn coverage_hand_values() {
        // universe {0, 1} at unit weight; e1 covers both, e2 covers item 1
        let oracle = CoverageOracle::new(
            vec![1.0, 1.0],
            vec![(e(0, 1), vec![0, 1]), (e(1, 1), vec![1])],
        )
        .unwrap();
        let obj = Objective::new(Box::new(oracle));
        assert_eq!(obj.evaluate(&a(&[]), Fidelity::FULL).unwrap(), 0.0);
        assert_eq!(obj.evaluate(&a(&[(0, 1)]), Fidelity::FULL).unwrap(), 1.0);
        assert_eq!(obj.evaluate(&a(&[(1, 1)]), Fidelity::FULL).unwrap(), 0.5);
        assert_eq!(obj.evaluate(&a(&[(0, 1), (1, 1)]), Fidelity::FULL).unwrap(), 1.0);
        // overlap makes the second element worthless once the first is in:
        // the gain is exactly zero, not merely close to it
        let gain = obj.marginal_gain(&a(&[(0, 1)]), e(1, 1), Fidelity::FULL).unwrap();
        assert_eq!(gain, 0.0);
    }

    #[test]
    fn cache_counts_hits_and_misses() {
        let oracle = CoverageOracle::new(vec![1.0], vec![(e(0, 1), vec![0])]).unwrap();
        let obj = Objective::new(Box::new(oracle));
        let x = a(&[(0, 1)]);
        let v1 = obj.evaluate(&x, Fidelity::FULL).unwrap();
        let v2 = obj.evaluate(&x, Fidelity::FULL).unwrap();
        assert_eq!(v1, v2);
        assert_eq!((obj.misses(), obj.hits()), (1, 1));
        // a different fidelity is a different cache line
        let v3 = obj.evaluate(&x, Fidelity::new(0.5).unwrap()).unwrap();
        assert_eq!(v3, v1);
        assert_eq!((obj.misses(), obj.hits()), (2, 1));
    }

    #[test]
    fn bounded_cache_evicts_but_stays_correct() {
        let oracle = CoverageOracle::new(
            vec![1.0, 2.0, 4.0],
            vec![(e(0, 1), vec![0]), (e(1, 1), vec![1]), (e(2, 1), vec![2])],
        )
        .unwrap();
        let obj = Objective::new(Box::new(oracle)).with_cache_cap(2);
        let xs = [a(&[(0, 1)]), a(&[(1, 1)]), a(&[(2, 1)])];
        let first: Vec<f64> = xs.iter().map(|x| obj.evaluate(x, Fidelity::FULL).unwrap()).collect();
        let second: Vec<f64> = xs.iter().map(|x| obj.evaluate(x, Fidelity::FULL).unwrap()).collect();
        assert_eq!(first, second);
        assert!(obj.evictions() > 0);
        assert!(obj.misses() > 3, "evicted entries recompute as fresh misses");
    }

    #[test]
    fn marginal_gain_uses_two_evaluations() {
        let oracle = CoverageOracle::new(vec![1.0], vec![(e(0, 1), vec![0]), (e(1, 1), vec![])]).unwrap();
        let obj = Objective::new(Box::new(oracle));
        obj.marginal_gain(&a(&[]), e(0, 1), Fidelity::FULL).unwrap();
        assert_eq!(obj.misses() + obj.hits(), 2);
        // occupied position is refused before any evaluation happens
        let err = obj.marginal_gain(&a(&[(0, 1)]), e(0, 1), Fidelity::FULL).unwrap_err();
        assert!(matches!(err, EvalError::Domain(DomainError::PositionOccupied { position: 0 })));
    }

    #[test]
    fn concave_modular_is_normalized_and_concave() {
        let oracle = ConcaveModularOracle::new(
            vec![1.0, 3.0],
            vec![(e(0, 1), vec![4.0, 1.0]), (e(1, 1), vec![4.0, 1.0])],
            0.5,
        )
        .unwrap();
        let obj = Objective::new(Box::new(oracle));
        let f0 = obj.evaluate(&a(&[]), Fidelity::FULL).unwrap();
        let f1 = obj.evaluate(&a(&[(0, 1)]), Fidelity::FULL).unwrap();
        let f2 = obj.evaluate(&a(&[(0, 1), (1, 1)]), Fidelity::FULL).unwrap();
        assert_eq!(f0, 0.0);
        assert_eq!(f2, 1.0);
        // diminishing gains: the identical second element adds less
        assert!(f1 - f0 > f2 - f1);
    }

    #[test]
    fn surrogate_noise_is_deterministic_and_fades_at_full_fidelity() {
        let oracle = SurrogateAccuracyOracle::new(
            vec![(e(0, 1), 1.0), (e(1, 1), 2.0)],
            2.0,
            0.1,
            42,
        )
        .unwrap();
        let obj = Objective::new(Box::new(oracle.clone()));
        let x = a(&[(0, 1), (1, 1)]);
        let clean = obj.evaluate(&x, Fidelity::FULL).unwrap();
        assert!((clean - (1.0 - (-1.5f64).exp())).abs() < 1e-12);
        let low = Fidelity::new(0.25).unwrap();
        let noisy1 = oracle.score(&x, low).unwrap();
        let noisy2 = oracle.score(&x, low).unwrap();
        assert_eq!(noisy1, noisy2, "noise must be a pure function of its inputs");
        assert!(noisy1 != clean);
        assert!((0.0..=1.0).contains(&noisy1));
    }

    #[test]
    fn out_of_range_scores_are_rejected_not_clamped() {
        struct Bad;
        impl ScoreBackend for Bad {
            fn score(&self, _: &Assignment, _: Fidelity) -> Result<f64, EvalError> {
                Ok(1.5)
            }
            fn name(&self) -> &str {
                "bad"
            }
        }
        let obj = Objective::new(Box::new(Bad));
        let err = obj.evaluate(&a(&[]), Fidelity::FULL).unwrap_err();
        assert!(matches!(err, EvalError::EvaluatorFailure { .. }));
    }

    #[test]
    fn synthetic_oracles_evaluate_concurrently() {
        let oracle = CoverageOracle::new(
            vec![1.0, 1.0, 1.0, 1.0],
            (0..4).map(|p| (e(p, 1), vec![p])).collect::<Vec<_>>(),
        )
        .unwrap();
        let obj = std::sync::Arc::new(Objective::new(Box::new(oracle)));
        let handles: Vec<_> = (0..4u32)
            .map(|p| {
                let obj = obj.clone();
                std::thread::spawn(move || obj.evaluate(&a(&[(p, 1)]), Fidelity::FULL).unwrap())
            })
            .collect();
        let mut got: Vec<f64> = handles.into_iter().map(|h| h.join().unwrap()).collect();
        got.sort_by(f64::total_cmp);
        assert_eq!(got, vec![0.25; 4]);
        assert_eq!(obj.misses() + obj.hits(), 4);
    }
}
