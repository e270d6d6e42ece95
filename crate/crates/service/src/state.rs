//! Session registry, bundle catalog and on-disk persistence.

use std::collections::{BTreeMap, HashMap};
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::{Arc, Mutex, RwLock};

use axum::http::StatusCode;
use balaf_core::engine::{Session, SessionParams};
use balaf_core::eval::predicted_label;
use balaf_core::map::{GaussianPrior, LinearModel, MapBelief, MapConfig};
use balaf_core::scenario::{fit_oracle_estimator, Bundle};
use balaf_core::strategy::{BeliefView, Selector};
use balaf_core::{ExampleId, Pool, Response, TraceStep};
use serde::{Deserialize, Serialize};

use crate::api::*;
use crate::error::ApiError;

/// A scenario bundle loaded from disk.
#[derive(Debug)]
pub struct LoadedBundle {
    pub name: String,
    pub bundle: Bundle,
    pub pool: Arc<Pool>,
    oracle_rates: Mutex<HashMap<u64, Arc<Vec<f64>>>>,
}

impl LoadedBundle {
    /// Reads a bundle directory. The name comes from the manifest, falling
    /// back to the directory name.
    pub fn load(dir: &Path) -> balaf_core::Result<Self> {
        let bundle = Bundle::read(dir)?;
        let name = if bundle.manifest.name.is_empty() {
            dir.file_name().map(|s| s.to_string_lossy().into_owned()).unwrap_or_else(|| "default".into())
        } else {
            bundle.manifest.name.clone()
        };
        Ok(Self::from_bundle(name, bundle))
    }

    pub fn from_bundle(name: String, bundle: Bundle) -> Self {
        let pool = Arc::new(bundle.pool());
        LoadedBundle { name, bundle, pool, oracle_rates: Mutex::new(HashMap::new()) }
    }

    pub fn info(&self) -> BundleInfo {
        BundleInfo {
            name: self.name.clone(),
            size: self.pool.len(),
            dim: self.pool.dim(),
            alphabet: self.pool.alphabet().size() as u32,
            has_abstention: self.bundle.abstain.is_some(),
        }
    }

    fn text(&self, x: ExampleId) -> Option<String> {
        self.bundle.manifest.display_text.get(x).cloned()
    }

    /// Fixed abstention estimate for the oracle strategies, fit once per
    /// prior variance.
    fn oracle_rates(&self, sigma2: f64) -> Result<Arc<Vec<f64>>, ApiError> {
        let pattern = self.bundle.abstain.as_ref().ok_or_else(|| {
            ApiError::bad_request(
                "oracle_unavailable",
                format!("bundle {} has no abstention sidecar for the oracle strategies", self.name),
            )
        })?;
        let mut cache = self.oracle_rates.lock().expect("oracle cache poisoned");
        if let Some(rates) = cache.get(&sigma2.to_bits()) {
            return Ok(rates.clone());
        }
        let estimate = fit_oracle_estimator(&self.pool, pattern, sigma2)?;
        let rates = Arc::new(estimate.rates(&self.pool));
        cache.insert(sigma2.to_bits(), rates.clone());
        Ok(rates)
    }
}

/// A stored 2xx reply, keyed by idempotency key.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StoredReply {
    pub request: serde_json::Value,
    pub status: u16,
    pub body: serde_json::Value,
}

/// What is written to `<state_dir>/<id>.json` after every step.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionRecord {
    pub id: String,
    pub bundle: String,
    pub config: SessionConfig,
    pub steps: Vec<TraceStep>,
    #[serde(default)]
    pub truncated: bool,
    pub label_observations: Vec<(ExampleId, bool)>,
    pub abstention_observations: Vec<(ExampleId, bool)>,
    #[serde(default)]
    pub idempotency: BTreeMap<String, StoredReply>,
}

struct Live {
    bundle: Arc<LoadedBundle>,
    session: Session<MapBelief>,
}

enum Slot {
    Live(Box<Live>),
    Suspended { record: Box<SessionRecord>, reason: String },
}

struct Entry {
    id: String,
    bundle: String,
    config: SessionConfig,
    slot: Slot,
    idempotency: BTreeMap<String, StoredReply>,
}

#[derive(Debug, Clone, Default)]
pub struct ServiceConfig {
    pub bundles: Vec<PathBuf>,
    /// Where session records live; `None` keeps sessions in memory only.
    pub state_dir: Option<PathBuf>,
    /// Static console bundle served at `/`.
    pub static_dir: Option<PathBuf>,
}

pub struct AppState {
    bundles: BTreeMap<String, Arc<LoadedBundle>>,
    sessions: RwLock<HashMap<String, Arc<Mutex<Entry>>>>,
    state_dir: Option<PathBuf>,
    pub(crate) static_dir: Option<PathBuf>,
}

fn build_session(config: &SessionConfig, bundle: &LoadedBundle) -> Result<Session<MapBelief>, ApiError> {
    if config.budget == 0 {
        return Err(ApiError::bad_request("invalid_config", "budget must be at least 1"));
    }
    let mut map = MapConfig::isotropic(config.sigma2)
        .map_err(|e| ApiError::bad_request("invalid_config", e.to_string()))?;
    if let Some(model) = &config.label_prior {
        map.label_prior = GaussianPrior::centered_at(model.clone());
    }
    if let Some(model) = &config.abstention_prior {
        map.abstention_prior = GaussianPrior::centered_at(model.clone());
    }
    let belief = MapBelief::new(bundle.pool.clone(), map)
        .map_err(|e| ApiError::bad_request("invalid_config", e.to_string()))?;
    let selector = if config.strategy.needs_oracle() {
        Selector::with_fixed_rates(config.strategy, bundle.oracle_rates(config.sigma2)?.to_vec())?
    } else {
        Selector::new(config.strategy)?
    };
    let params = SessionParams { budget: config.budget, seed: config.seed, record_scores: false };
    Session::new(belief, selector, params).map_err(|e| ApiError::bad_request("invalid_config", e.to_string()))
}

fn trace_entries(steps: &[TraceStep]) -> Vec<TraceEntry> {
    steps.iter().enumerate().map(|(i, s)| TraceEntry { t: i + 1, x: s.x, y: s.response.code() }).collect()
}

fn checkpoint_links(id: &str) -> CheckpointLinks {
    CheckpointLinks { h: format!("/sessions/{id}/checkpoints/h"), r: format!("/sessions/{id}/checkpoints/r") }
}

impl Live {
    fn status(&self) -> SessionStatus {
        if self.session.outstanding().is_some() {
            SessionStatus::AwaitingResponse
        } else {
            SessionStatus::Completed
        }
    }

    fn query(&self) -> Option<QueryView> {
        let sel = self.session.outstanding()?;
        let belief = self.session.belief();
        let example = &self.bundle.pool.examples()[sel.x];
        Some(QueryView {
            step: self.session.steps_taken() + 1,
            x: sel.x,
            features: example.features.clone(),
            text: self.bundle.text(sel.x),
            abstention: belief.abstention(sel.x),
            label_dist: belief.label_dist(sel.x),
            score: self.session.selector().score(belief, sel.x),
            scores: sel.scores.clone(),
        })
    }

    /// Selects the next query if one is due. Completion is a no-op.
    fn advance(&mut self) -> Result<(), ApiError> {
        self.session.next_query()?;
        Ok(())
    }
}

impl Entry {
    fn live(&self) -> Result<&Live, ApiError> {
        match &self.slot {
            Slot::Live(live) => Ok(live),
            Slot::Suspended { reason, .. } => {
                Err(ApiError::conflict("session_suspended", format!("session {} is suspended: {reason}", self.id)))
            }
        }
    }

    fn record(&self) -> SessionRecord {
        match &self.slot {
            Slot::Suspended { record, .. } => SessionRecord { idempotency: self.idempotency.clone(), ..(**record).clone() },
            Slot::Live(live) => {
                let belief = live.session.belief();
                SessionRecord {
                    id: self.id.clone(),
                    bundle: self.bundle.clone(),
                    config: self.config.clone(),
                    steps: live.session.trace().steps.clone(),
                    truncated: live.session.trace().truncated,
                    label_observations: belief.label_observations().entries().to_vec(),
                    abstention_observations: belief.abstention_observations().entries().to_vec(),
                    idempotency: self.idempotency.clone(),
                }
            }
        }
    }

    fn step_reply(&self) -> Result<StepReply, ApiError> {
        let live = self.live()?;
        let s = &live.session;
        let status = live.status();
        let summary = (status == SessionStatus::Completed).then(|| {
            let abstentions = s.trace().steps.iter().filter(|st| st.response.is_abstain()).count();
            CompletionSummary {
                labels: s.steps_taken() - abstentions,
                abstentions,
                trace: format!("/sessions/{}", self.id),
                checkpoints: checkpoint_links(&self.id),
            }
        });
        Ok(StepReply {
            id: self.id.clone(),
            status,
            step: s.steps_taken(),
            budget: s.params().budget,
            remaining: s.remaining(),
            truncated: s.trace().truncated,
            query: live.query(),
            summary,
        })
    }

    fn view(&self) -> SessionView {
        match &self.slot {
            Slot::Suspended { record, reason } => SessionView {
                id: self.id.clone(),
                status: SessionStatus::Suspended,
                config: self.config.clone(),
                bundle: self.bundle.clone(),
                step: record.steps.len(),
                budget: record.config.budget,
                remaining: record.config.budget.saturating_sub(record.steps.len()),
                truncated: record.truncated,
                alphabet: 2,
                trace: trace_entries(&record.steps),
                label_observations: record.label_observations.len(),
                abstention_observations: record.abstention_observations.len(),
                query: None,
                candidates: Vec::new(),
                checkpoints: None,
                reason: Some(reason.clone()),
            },
            Slot::Live(live) => {
                let s = &live.session;
                let belief = s.belief();
                let status = live.status();
                let candidates = s
                    .unqueried()
                    .into_iter()
                    .map(|x| CandidateView {
                        x,
                        abstention: belief.abstention(x),
                        label_dist: belief.label_dist(x),
                        score: s.selector().score(belief, x),
                    })
                    .collect();
                SessionView {
                    id: self.id.clone(),
                    status,
                    config: self.config.clone(),
                    bundle: self.bundle.clone(),
                    step: s.steps_taken(),
                    budget: s.params().budget,
                    remaining: s.remaining(),
                    truncated: s.trace().truncated,
                    alphabet: belief.alphabet().size() as u32,
                    trace: trace_entries(&s.trace().steps),
                    label_observations: belief.label_observations().len(),
                    abstention_observations: belief.abstention_observations().len(),
                    query: live.query(),
                    candidates,
                    checkpoints: (status == SessionStatus::Completed).then(|| checkpoint_links(&self.id)),
                    reason: None,
                }
            }
        }
    }
}

fn parse_respond(body: &serde_json::Value) -> Result<RespondRequest, ApiError> {
    let req: RespondRequest = serde_json::from_value(body.clone())
        .map_err(|e| ApiError::bad_request("malformed_body", e.to_string()))?;
    match (req.label, req.abstain) {
        (Some(_), None) | (Some(_), Some(false)) | (None, Some(true)) => Ok(req),
        (Some(_), Some(true)) => Err(ApiError::bad_request("malformed_body", "give either label or abstain, not both")),
        _ => Err(ApiError::bad_request("malformed_body", "expected {\"label\": y} or {\"abstain\": true}")),
    }
}

impl AppState {
    /// Loads every bundle and restores persisted sessions.
    pub fn new(config: ServiceConfig) -> balaf_core::Result<Self> {
        let mut bundles = BTreeMap::new();
        for dir in &config.bundles {
            let b = LoadedBundle::load(dir)?;
            if bundles.contains_key(&b.name) {
                return Err(balaf_core::Error::Input(format!("duplicate bundle name {}", b.name)));
            }
            bundles.insert(b.name.clone(), Arc::new(b));
        }
        Self::with_bundles(bundles.into_values().collect(), config.state_dir, config.static_dir)
    }

    pub fn with_bundles(
        bundles: Vec<Arc<LoadedBundle>>,
        state_dir: Option<PathBuf>,
        static_dir: Option<PathBuf>,
    ) -> balaf_core::Result<Self> {
        let state = AppState {
            bundles: bundles.into_iter().map(|b| (b.name.clone(), b)).collect(),
            sessions: RwLock::new(HashMap::new()),
            state_dir,
            static_dir,
        };
        state.restore()?;
        Ok(state)
    }

    pub fn bundles(&self) -> Vec<BundleInfo> {
        self.bundles.values().map(|b| b.info()).collect()
    }

    fn record_path(&self, id: &str) -> Option<PathBuf> {
        self.state_dir.as_ref().map(|d| d.join(format!("{id}.json")))
    }

    fn restore(&self) -> balaf_core::Result<()> {
        let Some(dir) = &self.state_dir else { return Ok(()) };
        fs::create_dir_all(dir)?;
        let mut paths: Vec<PathBuf> = fs::read_dir(dir)?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| p.extension().is_some_and(|e| e == "json"))
            .collect();
        paths.sort();
        let mut sessions = self.sessions.write().expect("session table poisoned");
        for path in paths {
            let record: SessionRecord = match fs::read_to_string(&path)
                .map_err(balaf_core::Error::from)
                .and_then(|s| serde_json::from_str(&s).map_err(balaf_core::Error::from))
            {
                Ok(r) => r,
                Err(e) => {
                    log::warn!("skipping unreadable session record {}: {e}", path.display());
                    continue;
                }
            };
            let entry = self.revive(record);
            if let Slot::Suspended { reason, .. } = &entry.slot {
                log::warn!("session {} restored as suspended: {reason}", entry.id);
            }
            sessions.insert(entry.id.clone(), Arc::new(Mutex::new(entry)));
        }
        Ok(())
    }

    /// Rebuilds a session from its record by replaying the recorded steps.
    fn revive(&self, record: SessionRecord) -> Entry {
        let attempt = || -> Result<Box<Live>, String> {
            let bundle = self.bundles.get(&record.bundle).ok_or_else(|| format!("bundle {} is not loaded", record.bundle))?;
            let session = build_session(&record.config, bundle).map_err(|e| e.message)?;
            let (belief, selector, params) = (session.belief().clone(), session.selector().clone(), session.params());
            let mut session = Session::replay(belief, selector, params, &record.steps).map_err(|e| e.to_string())?;
            let b = session.belief();
            if b.label_observations().entries() != record.label_observations.as_slice()
                || b.abstention_observations().entries() != record.abstention_observations.as_slice()
            {
                return Err("replayed observations differ from the record".into());
            }
            session.next_query().map_err(|e| e.to_string())?;
            Ok(Box::new(Live { bundle: bundle.clone(), session }))
        };
        let slot = match attempt() {
            Ok(live) => Slot::Live(live),
            Err(reason) => Slot::Suspended { record: Box::new(record.clone()), reason },
        };
        Entry { id: record.id, bundle: record.bundle, config: record.config, slot, idempotency: record.idempotency }
    }

    fn persist(&self, entry: &Entry) -> Result<(), ApiError> {
        let Some(path) = self.record_path(&entry.id) else { return Ok(()) };
        let tmp = path.with_extension("json.tmp");
        let write = || -> std::io::Result<()> {
            let bytes = serde_json::to_vec(&entry.record()).map_err(std::io::Error::other)?;
            fs::write(&tmp, bytes)?;
            fs::rename(&tmp, &path)
        };
        write().map_err(|e| ApiError::internal(format!("persisting session {}: {e}", entry.id)))
    }

    /// Writes every session record; used at shutdown.
    pub fn persist_all(&self) -> Result<(), ApiError> {
        let entries: Vec<_> = self.sessions.read().expect("session table poisoned").values().cloned().collect();
        for entry in entries {
            self.persist(&entry.lock().expect("session poisoned"))?;
        }
        Ok(())
    }

    fn entry(&self, id: &str) -> Result<Arc<Mutex<Entry>>, ApiError> {
        self.sessions
            .read()
            .expect("session table poisoned")
            .get(id)
            .cloned()
            .ok_or_else(|| ApiError::not_found("unknown_session", format!("no session {id}")))
    }

    fn with_entry<T>(&self, id: &str, f: impl FnOnce(&mut Entry) -> Result<T, ApiError>) -> Result<T, ApiError> {
        let entry = self.entry(id)?;
        let mut guard = entry.lock().map_err(|_| ApiError::internal("session lock poisoned"))?;
        f(&mut guard)
    }

    pub fn create_session(&self, body: &[u8]) -> Result<StepReply, ApiError> {
        let config: SessionConfig =
            serde_json::from_slice(body).map_err(|e| ApiError::bad_request("invalid_config", e.to_string()))?;
        let bundle = match &config.bundle {
            Some(name) => self
                .bundles
                .get(name)
                .ok_or_else(|| ApiError::not_found("unknown_bundle", format!("no bundle named {name}")))?,
            None if self.bundles.len() == 1 => self.bundles.values().next().expect("one bundle"),
            None => {
                return Err(ApiError::bad_request("invalid_config", "bundle must be named when several are loaded"))
            }
        };
        let mut live = Live { bundle: bundle.clone(), session: build_session(&config, bundle)? };
        live.advance()?;
        let id = uuid::Uuid::new_v4().simple().to_string();
        let entry = Entry {
            id: id.clone(),
            bundle: bundle.name.clone(),
            config,
            slot: Slot::Live(Box::new(live)),
            idempotency: BTreeMap::new(),
        };
        self.persist(&entry)?;
        let reply = entry.step_reply()?;
        self.sessions.write().expect("session table poisoned").insert(id, Arc::new(Mutex::new(entry)));
        Ok(reply)
    }

    /// Applies one response. Returns the HTTP status and JSON body; a reused
    /// idempotency key with the same body returns the stored reply.
    pub fn respond(
        &self,
        id: &str,
        key: Option<&str>,
        body: &[u8],
    ) -> Result<(StatusCode, serde_json::Value), ApiError> {
        let value: serde_json::Value =
            serde_json::from_slice(body).map_err(|e| ApiError::bad_request("malformed_body", e.to_string()))?;
        self.with_entry(id, |entry| {
            if let Some(stored) = key.and_then(|k| entry.idempotency.get(k)) {
                if stored.request != value {
                    return Err(ApiError::unprocessable(
                        "idempotency_key_reused",
                        "idempotency key was already used with a different body",
                    ));
                }
                let status = StatusCode::from_u16(stored.status).map_err(|e| ApiError::internal(e.to_string()))?;
                return Ok((status, stored.body.clone()));
            }
            let req = parse_respond(&value)?;
            entry.live()?;
            let Slot::Live(live) = &mut entry.slot else { unreachable!("checked live above") };
            let outstanding = match live.session.outstanding() {
                Some(sel) => sel.x,
                None => return Err(ApiError::conflict("session_completed", format!("session {id} is completed"))),
            };
            let expected_step = live.session.steps_taken() + 1;
            if let Some(x) = req.x.filter(|&x| x != outstanding) {
                return Err(ApiError::conflict(
                    "out_of_order",
                    format!("response for example {x}, but example {outstanding} is outstanding"),
                ));
            }
            if let Some(step) = req.step.filter(|&s| s != expected_step) {
                return Err(ApiError::conflict(
                    "out_of_order",
                    format!("response for step {step}, but step {expected_step} is outstanding"),
                ));
            }
            let resp = match req.label {
                Some(y) => {
                    let alphabet = live.session.belief().alphabet();
                    if !alphabet.contains(y) {
                        return Err(ApiError::unprocessable(
                            "label_out_of_range",
                            format!("label {y} is outside the alphabet 1..={}", alphabet.size()),
                        ));
                    }
                    Response::Label(y)
                }
                None => Response::Abstain,
            };
            live.session.step(outstanding, resp)?;
            live.advance()?;
            let reply = serde_json::to_value(entry.step_reply()?).map_err(|e| ApiError::internal(e.to_string()))?;
            if let Some(k) = key {
                entry.idempotency.insert(
                    k.to_string(),
                    StoredReply { request: value.clone(), status: StatusCode::OK.as_u16(), body: reply.clone() },
                );
            }
            self.persist(entry)?;
            Ok((StatusCode::OK, reply))
        })
    }

    pub fn view(&self, id: &str) -> Result<SessionView, ApiError> {
        self.with_entry(id, |e| Ok(e.view()))
    }

    pub fn query(&self, id: &str) -> Result<QueryReply, ApiError> {
        self.with_entry(id, |e| {
            let live = e.live()?;
            Ok(QueryReply { id: e.id.clone(), status: live.status(), query: live.query() })
        })
    }

    pub fn predictions(&self, id: &str) -> Result<PredictionsReply, ApiError> {
        self.with_entry(id, |e| {
            let live = e.live()?;
            let belief = live.session.belief();
            let predictions = live
                .bundle
                .pool
                .ids()
                .map(|x| {
                    let label_dist = belief.label_dist(x);
                    Prediction { x, label: predicted_label(&label_dist), label_dist, abstention: belief.abstention(x) }
                })
                .collect();
            Ok(PredictionsReply { id: e.id.clone(), step: live.session.steps_taken(), predictions })
        })
    }

    /// `h` is the label model, `r` the abstention model.
    pub fn checkpoint(&self, id: &str, which: &str) -> Result<LinearModel, ApiError> {
        self.with_entry(id, |e| {
            let belief = e.live()?.session.belief();
            match which {
                "h" => Ok(belief.label_model().clone()),
                "r" => Ok(belief.abstention_model().clone()),
                other => Err(ApiError::not_found("unknown_checkpoint", format!("no checkpoint {other}; use h or r"))),
            }
        })
    }

    pub fn session_ids(&self) -> Vec<String> {
        let mut ids: Vec<_> = self.sessions.read().expect("session table poisoned").keys().cloned().collect();
        ids.sort();
        ids
    }
}
