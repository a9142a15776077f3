//! Experiment documents: JSON in, validated [`ExperimentConfig`] out.
//!
//! Validation is all-or-nothing. Every violation found in a document is
//! reported with the path of the offending value, e.g. `model.prior.transition[1]`.

use std::fmt;
use std::path::PathBuf;

use replica_core::amp::AmpScaling;
use replica_core::markov_core::{HiddenMarkovPrior, MarkovPrior, ProbabilityVector, TransitionMatrix};
use replica_core::replica_solver::{ModelSpec, Prior, SnrLaw};
use replica_core::simulator::ENUMERATION_BUDGET;
use replica_core::single_symbol::{Atom, ConditionalInputLaw};
use serde_json::{Map, Value};

pub const SCHEMA_VERSION: u64 = 1;

const ROW_SUM_TOL: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ConfigError {
    pub path: String,
    pub message: String,
}

impl fmt::Display for ConfigError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}: {}", self.path, self.message)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Task {
    Replica,
    ExactSim,
    Mh,
    Amp,
}

impl Task {
    pub fn name(self) -> &'static str {
        match self {
            Task::Replica => "replica",
            Task::ExactSim => "exact_sim",
            Task::Mh => "mh",
            Task::Amp => "amp",
        }
    }

    fn parse(s: &str) -> Option<Self> {
        [Task::Replica, Task::ExactSim, Task::Mh, Task::Amp].into_iter().find(|t| t.name() == s)
    }

    fn simulates(self) -> bool {
        self != Task::Replica
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Units {
    #[default]
    Nats,
    Bits,
}

impl Units {
    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "nats" => Some(Units::Nats),
            "bits" => Some(Units::Bits),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct MhSettings {
    pub steps: usize,
    pub burn_in: usize,
}

impl Default for MhSettings {
    fn default() -> Self {
        MhSettings { steps: 100_000, burn_in: 10_000 }
    }
}

/// Activity rate and independence parameter of a sparse hidden-Markov prior.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SparseParams {
    pub kappa: f64,
    pub gamma: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub version: u64,
    pub model: ModelSpec,
    /// Set when the true prior was given as `sparse_hmm`.
    pub sparse: Option<SparseParams>,
    /// Sorted ascending, no duplicates.
    pub betas: Vec<f64>,
    /// Sorted, no duplicates.
    pub tasks: Vec<Task>,
    pub n: usize,
    pub trials: usize,
    pub seed: u64,
    pub output: Option<PathBuf>,
    pub units: Units,
    pub iterations: usize,
    pub mh: MhSettings,
    pub amp_scaling: AmpScaling,
}

impl ExperimentConfig {
    pub fn has(&self, task: Task) -> bool {
        self.tasks.contains(&task)
    }
}

/// Parses and validates a JSON document.
pub fn validate_str(text: &str) -> Result<ExperimentConfig, Vec<ConfigError>> {
    let doc: Value = serde_json::from_str(text)
        .map_err(|e| vec![ConfigError { path: "$".into(), message: format!("not valid JSON: {e}") }])?;
    validate_config(&doc)
}

pub fn validate_config(doc: &Value) -> Result<ExperimentConfig, Vec<ConfigError>> {
    let mut c = Checker::default();
    let cfg = c.document(doc);
    match cfg {
        Some(cfg) if c.errors.is_empty() => Ok(cfg),
        _ => {
            if c.errors.is_empty() {
                c.fail("$", "invalid document");
            }
            Err(c.errors)
        }
    }
}

fn join(path: &str, key: &str) -> String {
    if path.is_empty() {
        key.to_string()
    } else {
        format!("{path}.{key}")
    }
}

fn index(path: &str, i: usize) -> String {
    format!("{path}[{i}]")
}

#[derive(Default)]
struct Checker {
    errors: Vec<ConfigError>,
}

impl Checker {
    fn fail(&mut self, path: &str, message: impl Into<String>) {
        self.errors.push(ConfigError { path: path.to_string(), message: message.into() });
    }

    fn object<'a>(&mut self, v: &'a Value, path: &str, allowed: &[&str]) -> Option<&'a Map<String, Value>> {
        match v.as_object() {
            Some(map) => {
                for key in map.keys() {
                    if !allowed.contains(&key.as_str()) {
                        self.fail(&join(path, key), "unknown field");
                    }
                }
                Some(map)
            }
            None => {
                self.fail(path, "expected an object");
                None
            }
        }
    }

    fn required<'a>(&mut self, map: &'a Map<String, Value>, path: &str, key: &str) -> Option<&'a Value> {
        let v = map.get(key);
        if v.is_none() {
            self.fail(&join(path, key), "missing required field");
        }
        v
    }

    fn number(&mut self, v: &Value, path: &str) -> Option<f64> {
        match v.as_f64() {
            Some(x) if x.is_finite() => Some(x),
            _ => {
                self.fail(path, "expected a finite number");
                None
            }
        }
    }

    fn number_in(&mut self, v: &Value, path: &str, ok: impl Fn(f64) -> bool, what: &str) -> Option<f64> {
        let x = self.number(v, path)?;
        if ok(x) {
            Some(x)
        } else {
            self.fail(path, format!("{x} must be {what}"));
            None
        }
    }

    fn field_in(
        &mut self,
        map: &Map<String, Value>,
        path: &str,
        key: &str,
        ok: impl Fn(f64) -> bool,
        what: &str,
    ) -> Option<f64> {
        let v = self.required(map, path, key)?;
        self.number_in(v, &join(path, key), ok, what)
    }

    fn count(&mut self, v: &Value, path: &str, min: u64) -> Option<usize> {
        match v.as_u64() {
            Some(k) if k >= min => Some(k as usize),
            _ => {
                self.fail(path, format!("expected an integer ≥ {min}"));
                None
            }
        }
    }

    fn array<'a>(&mut self, v: &'a Value, path: &str) -> Option<&'a Vec<Value>> {
        let a = v.as_array();
        if a.is_none() {
            self.fail(path, "expected an array");
        }
        a
    }

    fn numbers(&mut self, v: &Value, path: &str) -> Option<Vec<f64>> {
        let items = self.array(v, path)?;
        let parsed: Vec<Option<f64>> = items.iter().enumerate().map(|(i, x)| self.number(x, &index(path, i))).collect();
        parsed.into_iter().collect()
    }

    fn probabilities(&mut self, v: &Value, path: &str, dim: usize) -> Option<Vec<f64>> {
        let p = self.numbers(v, path)?;
        if p.len() != dim {
            self.fail(path, format!("expected {dim} entries, found {}", p.len()));
            return None;
        }
        let mut ok = true;
        for (i, x) in p.iter().enumerate() {
            if *x < 0.0 {
                self.fail(&index(path, i), "probabilities must be nonnegative");
                ok = false;
            }
        }
        let sum: f64 = p.iter().sum();
        if ok && (sum - 1.0).abs() > ROW_SUM_TOL {
            self.fail(path, format!("entries sum to {sum}, not 1"));
            ok = false;
        }
        ok.then_some(p)
    }

    /// A `dim × dim` stochastic matrix; missing or extra rows are reported by index.
    fn transition(&mut self, v: &Value, path: &str, dim: usize) -> Option<Vec<Vec<f64>>> {
        let rows = self.array(v, path)?;
        let mut out = Vec::with_capacity(dim);
        let mut ok = true;
        for i in 0..dim {
            let p = index(path, i);
            match rows.get(i) {
                None => {
                    self.fail(&p, "missing row");
                    ok = false;
                }
                Some(r) => match self.probabilities(r, &p, dim) {
                    Some(row) => out.push(row),
                    None => ok = false,
                },
            }
        }
        for i in dim..rows.len() {
            self.fail(&index(path, i), format!("unexpected row; the chain has {dim} states"));
            ok = false;
        }
        ok.then_some(out)
    }

    fn core<T>(&mut self, path: &str, r: replica_core::Result<T>) -> Option<T> {
        match r {
            Ok(v) => Some(v),
            Err(replica_core::Error::Reducible) => {
                self.fail(path, "transition matrix is reducible; the chain must be irreducible");
                None
            }
            Err(e) => {
                self.fail(path, e.to_string());
                None
            }
        }
    }

    fn law(&mut self, v: &Value, path: &str) -> Option<ConditionalInputLaw> {
        let map = self.object(v, path, &["components"])?;
        let comps_v = self.required(map, path, "components")?;
        let cpath = join(path, "components");
        let comps = self.array(comps_v, &cpath)?;
        if comps.is_empty() {
            self.fail(&cpath, "needs at least one component");
            return None;
        }
        let mut parts = Vec::new();
        let mut ok = true;
        for (i, c) in comps.iter().enumerate() {
            let p = index(&cpath, i);
            let Some(m) = self.object(c, &p, &["weight", "point", "mean", "variance"]) else {
                ok = false;
                continue;
            };
            let w = self.field_in(m, &p, "weight", |w| w >= 0.0, "nonnegative");
            let atom = if let Some(x) = m.get("point") {
                if m.contains_key("mean") || m.contains_key("variance") {
                    self.fail(&p, "give either a point or a mean and variance, not both");
                    None
                } else {
                    self.number(x, &join(&p, "point")).map(Atom::PointMass)
                }
            } else {
                let mean = self.required(m, &p, "mean").and_then(|x| self.number(x, &join(&p, "mean")));
                let var = self.field_in(m, &p, "variance", |v| v > 0.0, "positive");
                mean.zip(var).map(|(mean, variance)| Atom::Gaussian { mean, variance })
            };
            match (w, atom) {
                (Some(w), Some(a)) => parts.push((w, a)),
                _ => ok = false,
            }
        }
        if !ok {
            return None;
        }
        self.core(path, ConditionalInputLaw::new(parts))
    }

    fn prior(&mut self, v: &Value, path: &str) -> Option<(Prior, Option<SparseParams>)> {
        let Some(kind) = v.get("type").and_then(Value::as_str) else {
            self.fail(&join(path, "type"), "missing or non-string prior type");
            return None;
        };
        let unit = |x: f64| (0.0..=1.0).contains(&x);
        match kind {
            "binary_markov" => {
                let map = self.object(v, path, &["type", "alpha", "delta"])?;
                let a = self.field_in(map, path, "alpha", unit, "in [0, 1]");
                let d = self.field_in(map, path, "delta", unit, "in [0, 1]");
                let (a, d) = a.zip(d)?;
                self.core(path, MarkovPrior::binary(a, d)).map(|p| (p.into(), None))
            }
            "markov" => {
                let map = self.object(v, path, &["type", "states", "transition", "initial"])?;
                let states = self.required(map, path, "states").and_then(|s| self.numbers(s, &join(path, "states")));
                let states = states?;
                if states.is_empty() {
                    self.fail(&join(path, "states"), "needs at least one state");
                    return None;
                }
                let dim = states.len();
                let rows = self.required(map, path, "transition").and_then(|t| self.transition(t, &join(path, "transition"), dim));
                let initial = match map.get("initial") {
                    Some(i) => Some(self.probabilities(i, &join(path, "initial"), dim)?),
                    None => None,
                };
                let kernel = self.core(path, TransitionMatrix::with_states(states, &rows?))?;
                let prior = match initial {
                    Some(p) => {
                        let p = self.core(&join(path, "initial"), ProbabilityVector::new(p))?;
                        self.core(path, MarkovPrior::discrete_with_initial(kernel, p))?
                    }
                    None => self.core(path, MarkovPrior::discrete(kernel))?,
                };
                Some((prior.into(), None))
            }
            "gauss_markov" => {
                let map = self.object(v, path, &["type", "nu", "innovation_variance"])?;
                let nu = self.field_in(map, path, "nu", |x| x > 0.0 && x < 1.0, "in (0, 1)");
                let var = match map.get("innovation_variance") {
                    Some(x) => self.number_in(x, &join(path, "innovation_variance"), |x| x > 0.0, "positive"),
                    None => Some(1.0),
                };
                let (nu, var) = nu.zip(var)?;
                self.core(path, MarkovPrior::gauss_markov(nu, var)).map(|p| (p.into(), None))
            }
            "hidden_markov" => {
                let map = self.object(v, path, &["type", "transition", "emissions", "initial"])?;
                let em_path = join(path, "emissions");
                let ems = self.required(map, path, "emissions").and_then(|e| self.array(e, &em_path))?;
                if ems.is_empty() {
                    self.fail(&em_path, "needs at least one hidden state");
                    return None;
                }
                let laws: Vec<Option<ConditionalInputLaw>> =
                    ems.iter().enumerate().map(|(i, e)| self.law(e, &index(&em_path, i))).collect();
                let dim = ems.len();
                let rows = self.required(map, path, "transition").and_then(|t| self.transition(t, &join(path, "transition"), dim));
                let initial = match map.get("initial") {
                    Some(i) => Some(self.probabilities(i, &join(path, "initial"), dim)?),
                    None => None,
                };
                let laws: Option<Vec<_>> = laws.into_iter().collect();
                let hidden = self.core(&join(path, "transition"), TransitionMatrix::new(&rows?))?;
                let mut h = self.core(path, HiddenMarkovPrior::new(hidden, laws?))?;
                if let Some(p) = initial {
                    h.initial = self.core(&join(path, "initial"), ProbabilityVector::new(p))?;
                }
                Some((h.into(), None))
            }
            "sparse_hmm" => {
                let map = self.object(v, path, &["type", "kappa", "gamma"])?;
                let k = self.field_in(map, path, "kappa", |x| x > 0.0 && x < 1.0, "in (0, 1)");
                let g = self.field_in(map, path, "gamma", |x| x > 0.0 && x <= 1.0, "in (0, 1]");
                let (kappa, gamma) = k.zip(g)?;
                let h = self.core(path, HiddenMarkovPrior::sparse(kappa, gamma))?;
                Some((h.into(), Some(SparseParams { kappa, gamma })))
            }
            other => {
                self.fail(
                    &join(path, "type"),
                    format!("unknown prior type {other:?}; expected markov, binary_markov, gauss_markov, hidden_markov or sparse_hmm"),
                );
                None
            }
        }
    }

    fn snr(&mut self, v: &Value, path: &str) -> Option<SnrLaw> {
        if let Some(s) = v.as_f64() {
            return self.core(path, SnrLaw::fixed(s));
        }
        let items = self.array(v, path)?;
        let mut pts = Vec::new();
        let mut ok = true;
        for (i, it) in items.iter().enumerate() {
            let p = index(path, i);
            let Some(m) = self.object(it, &p, &["value", "probability"]) else {
                ok = false;
                continue;
            };
            let s = self.field_in(m, &p, "value", |s| s > 0.0, "positive");
            let q = self.field_in(m, &p, "probability", |q| q >= 0.0, "nonnegative");
            match s.zip(q) {
                Some(pt) => pts.push(pt),
                None => ok = false,
            }
        }
        if !ok {
            return None;
        }
        self.core(path, SnrLaw::new(pts))
    }

    fn model(&mut self, v: &Value, path: &str) -> Option<(ModelSpec, Option<SparseParams>)> {
        let map = self.object(v, path, &["prior", "postulated_prior", "snr", "sigma"])?;
        let prior = self.required(map, path, "prior").and_then(|p| self.prior(p, &join(path, "prior")));
        let postulated = match map.get("postulated_prior") {
            Some(p) => Some(self.prior(p, &join(path, "postulated_prior")).map(|p| p.0)),
            None => None,
        };
        let snr = match map.get("snr") {
            Some(s) => self.snr(s, &join(path, "snr")),
            None => SnrLaw::fixed(1.0).ok(),
        };
        let sigma = match map.get("sigma") {
            Some(s) => self.number_in(s, &join(path, "sigma"), |x| x > 0.0, "positive"),
            None => Some(1.0),
        };
        let (prior, sparse) = prior?;
        let postulated = match postulated {
            Some(p) => Some(p?),
            None => None,
        };
        let spec = self.core(&join(path, "postulated_prior"), ModelSpec::new(prior, postulated, snr?, sigma?))?;
        Some((spec, sparse))
    }

    fn sweep(&mut self, v: &Value, path: &str) -> Option<Vec<f64>> {
        let values = if v.is_array() {
            self.numbers(v, path)?
        } else if v.get("values").is_some() {
            let map = self.object(v, path, &["values"])?;
            self.numbers(&map["values"], &join(path, "values"))?
        } else {
            let map = self.object(v, path, &["start", "stop", "step"])?;
            let start = self.field_in(map, path, "start", |x| x > 0.0, "positive");
            let stop = self.field_in(map, path, "stop", |x| x > 0.0, "positive");
            let step = self.field_in(map, path, "step", |x| x > 0.0, "positive");
            let (start, stop, step) = (start?, stop?, step?);
            if stop < start {
                self.fail(&join(path, "stop"), "stop is below start");
                return None;
            }
            let count = ((stop - start) / step + 1e-9).floor() as usize + 1;
            if count > 100_000 {
                self.fail(&join(path, "step"), format!("grid would have {count} points"));
                return None;
            }
            // k·step from the start, rounded so grids print cleanly
            (0..count).map(|k| ((start + k as f64 * step) * 1e12).round() / 1e12).collect()
        };
        if values.is_empty() {
            self.fail(path, "sweep has no load values");
            return None;
        }
        let mut ok = true;
        for (i, b) in values.iter().enumerate() {
            if !(*b > 0.0) {
                self.fail(&index(path, i), format!("load {b} must be positive"));
                ok = false;
            }
        }
        if !ok {
            return None;
        }
        let mut values = values;
        values.sort_by(f64::total_cmp);
        values.dedup();
        Some(values)
    }

    fn tasks(&mut self, v: Option<&Value>) -> Option<Vec<Task>> {
        let Some(v) = v else {
            return Some(vec![Task::Replica]);
        };
        let items = self.array(v, "tasks")?;
        if items.is_empty() {
            self.fail("tasks", "at least one task is required");
            return None;
        }
        let mut tasks = Vec::new();
        let mut ok = true;
        for (i, t) in items.iter().enumerate() {
            match t.as_str().and_then(Task::parse) {
                Some(t) => tasks.push(t),
                None => {
                    self.fail(&index("tasks", i), "expected one of replica, exact_sim, mh, amp");
                    ok = false;
                }
            }
        }
        tasks.sort();
        tasks.dedup();
        ok.then_some(tasks)
    }

    fn document(&mut self, doc: &Value) -> Option<ExperimentConfig> {
        let map = self.object(
            doc,
            "",
            &["version", "model", "sweep", "tasks", "n", "trials", "seed", "output", "units", "iterations", "mh", "amp"],
        )?;
        let version = match map.get("version") {
            Some(v) => match v.as_u64() {
                Some(SCHEMA_VERSION) => Some(SCHEMA_VERSION),
                _ => {
                    self.fail("version", format!("unsupported schema version; expected {SCHEMA_VERSION}"));
                    None
                }
            },
            None => {
                self.fail("version", "missing required field");
                None
            }
        };
        let model = self.required(map, "", "model").and_then(|m| self.model(m, "model"));
        let betas = self.required(map, "", "sweep").and_then(|s| self.sweep(s, "sweep"));
        let tasks = self.tasks(map.get("tasks"));
        let simulating = tasks.as_ref().is_some_and(|t| t.iter().any(|t| t.simulates()));
        let need = |key: &str, min: u64, this: &mut Self| match map.get(key) {
            Some(v) => this.count(v, key, min),
            None if simulating => {
                this.fail(key, "required by the simulation tasks");
                None
            }
            None => Some(0),
        };
        let n = need("n", 1, self);
        let trials = need("trials", 1, self);
        let seed = match map.get("seed") {
            Some(v) => {
                let s = v.as_u64();
                if s.is_none() {
                    self.fail("seed", "expected a nonnegative 64-bit integer");
                }
                s
            }
            None => Some(0),
        };
        let output = match map.get("output") {
            Some(Value::String(s)) => Some(Some(PathBuf::from(s))),
            Some(_) => {
                self.fail("output", "expected a path string");
                None
            }
            None => Some(None),
        };
        let units = match map.get("units") {
            Some(v) => {
                let u = v.as_str().and_then(Units::parse);
                if u.is_none() {
                    self.fail("units", "expected \"nats\" or \"bits\"");
                }
                u
            }
            None => Some(Units::Nats),
        };
        let iterations = match map.get("iterations") {
            Some(v) => self.count(v, "iterations", 1),
            None => Some(10),
        };
        let mh = match map.get("mh") {
            Some(v) => self.object(v, "mh", &["steps", "burn_in"]).and_then(|m| {
                let d = MhSettings::default();
                let steps = m.get("steps").map_or(Some(d.steps), |s| self.count(s, "mh.steps", 1));
                let burn_in = m.get("burn_in").map_or(Some(d.burn_in), |s| self.count(s, "mh.burn_in", 0));
                let (steps, burn_in) = steps.zip(burn_in)?;
                if steps <= burn_in {
                    self.fail("mh.steps", "steps must exceed burn_in");
                    return None;
                }
                Some(MhSettings { steps, burn_in })
            }),
            None => Some(MhSettings::default()),
        };
        let amp_scaling = match map.get("amp") {
            Some(v) => self.object(v, "amp", &["scaling", "normalized_a"]).and_then(|m| {
                let normalized = match m.get("normalized_a") {
                    Some(Value::Bool(b)) => *b,
                    Some(_) => {
                        self.fail("amp.normalized_a", "expected a boolean");
                        return None;
                    }
                    None => false,
                };
                match (m.get("scaling").map(|s| s.as_str()), normalized) {
                    (None, false) => Some(AmpScaling::Verbatim),
                    (None, true) => Some(AmpScaling::SqrtN),
                    (Some(s), n) => {
                        let sc = match s {
                            Some("verbatim") => Some(AmpScaling::Verbatim),
                            Some("sqrt_n") => Some(AmpScaling::SqrtN),
                            Some("sqrt_m") => Some(AmpScaling::SqrtM),
                            _ => None,
                        };
                        match sc {
                            None => {
                                self.fail("amp.scaling", "expected verbatim, sqrt_n or sqrt_m");
                                None
                            }
                            Some(sc) if n && sc != AmpScaling::SqrtN => {
                                self.fail("amp.normalized_a", "conflicts with amp.scaling");
                                None
                            }
                            Some(sc) => Some(sc),
                        }
                    }
                }
            }),
            None => Some(AmpScaling::Verbatim),
        };

        let (model, sparse) = model?;
        let tasks = tasks?;
        let n = n?;
        self.task_support(&model, sparse, &tasks, n);
        Some(ExperimentConfig {
            version: version?,
            model,
            sparse,
            betas: betas?,
            tasks,
            n,
            trials: trials?,
            seed: seed?,
            output: output?,
            units: units?,
            iterations: iterations?,
            mh: mh?,
            amp_scaling: amp_scaling?,
        })
    }

    fn task_support(&mut self, model: &ModelSpec, sparse: Option<SparseParams>, tasks: &[Task], n: usize) {
        for (i, t) in tasks.iter().enumerate() {
            let path = index("tasks", i);
            match t {
                Task::Replica => {}
                Task::ExactSim | Task::Mh => match &model.postulated {
                    Prior::Hidden(_) => self.fail(&path, format!("{} needs a Markov or Gauss-Markov prior", t.name())),
                    Prior::Markov(MarkovPrior::Discrete { kernel, .. }) if *t == Task::ExactSim => {
                        let configs = (kernel.dim() as f64).powi(n as i32);
                        if configs > ENUMERATION_BUDGET as f64 {
                            self.fail("n", format!("{configs:e} signal configurations exceed the enumeration budget of {ENUMERATION_BUDGET}"));
                        }
                    }
                    _ => {}
                },
                Task::Amp => {
                    if sparse.is_none() {
                        self.fail(&path, "amp needs a sparse_hmm prior");
                    } else if !model.is_matched() {
                        self.fail(&path, "amp runs on matched models only");
                    }
                }
            }
        }
    }
}
