//! Experiment configuration: parsing and validation.

use std::fmt;
use std::path::{Path, PathBuf};

use graphmfg::graph::{GeneratorParams, GraphSpec};
use graphmfg::{ModelSpec, SimplexPoint, WeightedGraph};
use serde::{Deserialize, Deserializer, Serialize};
use serde_json::Value;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum Suite {
    Interiority,
    Mfg,
    Master,
    Hjb,
    Nash,
    All,
}

impl Suite {
    pub const CONCRETE: [Suite; 5] = [Suite::Interiority, Suite::Mfg, Suite::Master, Suite::Hjb, Suite::Nash];

    pub fn name(self) -> &'static str {
        match self {
            Suite::Interiority => "interiority",
            Suite::Mfg => "mfg",
            Suite::Master => "master",
            Suite::Hjb => "hjb",
            Suite::Nash => "nash",
            Suite::All => "all",
        }
    }

    /// Suites that need a Hamiltonian-derived system.
    pub fn needs_hamiltonian(self) -> bool {
        matches!(self, Suite::Hjb | Suite::Nash)
    }
}

/// Sorted, deduplicated concrete suites.
pub fn expand(selection: &[Suite]) -> Vec<Suite> {
    let mut out: Vec<Suite> = if selection.contains(&Suite::All) {
        Suite::CONCRETE.to_vec()
    } else {
        selection.to_vec()
    };
    out.sort();
    out.dedup();
    out
}

/// Graph section, validated and built during deserialization so that errors carry a position.
#[derive(Debug, Clone)]
pub struct GraphField {
    pub spec: GraphSpec,
    pub graph: WeightedGraph,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct GeneratorForm {
    generator: String,
    #[serde(default)]
    params: GeneratorParams,
}

fn explicit_graph(v: &Value) -> Result<GraphSpec, String> {
    let obj = v.as_object().ok_or("graph must be an object")?;
    if let Some(key) = obj.keys().find(|k| *k != "n" && *k != "edges") {
        return Err(format!("unknown field `{key}` in graph, expected `n` and `edges`"));
    }
    let n = obj
        .get("n")
        .and_then(Value::as_u64)
        .ok_or("graph.n must be a positive integer")? as usize;
    let edges = obj.get("edges").and_then(Value::as_array).ok_or("graph.edges must be an array")?;
    let mut out = Vec::with_capacity(edges.len());
    for (k, e) in edges.iter().enumerate() {
        let triple = e.as_array().filter(|a| a.len() == 3);
        let Some(triple) = triple else {
            return Err(format!("edge #{} ({e}) must be [i, j, omega]", k + 1));
        };
        let vertex = |x: &Value| x.as_u64().filter(|&i| i >= 1 && i as usize <= n).map(|i| i as usize);
        let (Some(i), Some(j)) = (vertex(&triple[0]), vertex(&triple[1])) else {
            return Err(format!("edge #{} ({e}): endpoints must be vertices in 1..={n}", k + 1));
        };
        let w = triple[2].as_f64().filter(|w| w.is_finite() && *w > 0.0).ok_or_else(|| {
            format!("edge #{} ({i}, {j}): weight {} is not a positive finite number", k + 1, triple[2])
        })?;
        out.push((i, j, w));
    }
    Ok(GraphSpec::Explicit { n, edges: out })
}

impl<'de> Deserialize<'de> for GraphField {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        use serde::de::Error;
        let v = Value::deserialize(d)?;
        let spec = if v.get("generator").is_some() {
            let g: GeneratorForm = serde_json::from_value(v).map_err(D::Error::custom)?;
            GraphSpec::Generator { generator: g.generator, params: g.params }
        } else {
            explicit_graph(&v).map_err(D::Error::custom)?
        };
        let graph = spec.build().map_err(D::Error::custom)?;
        Ok(Self { spec, graph })
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PointConfig {
    #[serde(default)]
    pub t: f64,
    pub mu: Vec<f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct InteriorityOptions {
    /// Strength of the adversarial flux draining the lightest vertex.
    pub magnitude: f64,
    /// Reporting step of the continuity integrator; `(T - t)/2000` when absent.
    pub dt: Option<f64>,
}

impl Default for InteriorityOptions {
    fn default() -> Self {
        Self { magnitude: 2.0, dt: None }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MfgOptions {
    pub residual_tol: f64,
    pub probe_tol: f64,
}

impl Default for MfgOptions {
    fn default() -> Self {
        Self { residual_tol: 1e-6, probe_tol: 1e-6 }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MasterOptions {
    pub time_steps: Vec<f64>,
    pub residual_tol: f64,
    pub solver_tol: f64,
    pub consistency_samples: usize,
    pub consistency_tol: f64,
}

impl Default for MasterOptions {
    fn default() -> Self {
        Self {
            time_steps: vec![1e-2, 5e-3, 2.5e-3],
            residual_tol: 1e-4,
            solver_tol: 1e-13,
            consistency_samples: 10,
            consistency_tol: 1e-6,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct HjbOptions {
    pub direct_steps: usize,
    pub chords: usize,
    pub gradient_h: f64,
    pub residual_h: f64,
    pub semiconcavity_h: f64,
    pub tol: f64,
}

impl Default for HjbOptions {
    fn default() -> Self {
        Self { direct_steps: 200, chords: 20, gradient_h: 1e-4, residual_h: 1e-3, semiconcavity_h: 1e-2, tol: 1e-4 }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct NashSuiteOptions {
    pub paths: usize,
    pub random_directions: usize,
    /// Number of sampled equilibrium paths written as CSV.
    pub dump_paths: usize,
}

impl Default for NashSuiteOptions {
    fn default() -> Self {
        Self { paths: 100_000, random_directions: 20, dump_paths: 0 }
    }
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct NumericOptions {
    pub steps: Option<usize>,
    pub tol: Option<f64>,
    pub seed: Option<u64>,
    pub interiority: InteriorityOptions,
    pub mfg: MfgOptions,
    pub master: MasterOptions,
    pub hjb: HjbOptions,
    pub nash: NashSuiteOptions,
}

fn default_horizon() -> f64 {
    1.0
}

fn default_suites() -> Vec<Suite> {
    vec![Suite::All]
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub graph: GraphField,
    pub model: ModelSpec,
    #[serde(default = "default_horizon")]
    pub horizon: f64,
    /// Strength of the non-Hamiltonian flux modification; zero for the plain game.
    #[serde(default)]
    pub beta: f64,
    pub points: Vec<PointConfig>,
    #[serde(default = "default_suites")]
    pub suites: Vec<Suite>,
    #[serde(default)]
    pub options: NumericOptions,
    #[serde(default)]
    pub out: Option<PathBuf>,
}

#[derive(Debug)]
pub struct ConfigError {
    pub path: PathBuf,
    pub line: usize,
    pub column: usize,
    pub message: String,
}

impl fmt::Display for ConfigError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}:{}:{}: {}", self.path.display(), self.line, self.column, self.message)
    }
}

/// 1-based line and column of the `occurrence`-th appearance of `"key"`, or the file start.
fn locate(text: &str, key: &str, occurrence: usize) -> (usize, usize) {
    let needle = format!("\"{key}\"");
    let Some((offset, _)) = text.match_indices(&needle).nth(occurrence) else {
        return (1, 1);
    };
    let before = &text[..offset];
    let line = before.matches('\n').count() + 1;
    let column = offset - before.rfind('\n').map_or(0, |p| p + 1) + 1;
    (line, column)
}

pub struct Loaded {
    pub config: ExperimentConfig,
    pub suites: Vec<Suite>,
}

/// Reads and validates a config. `suite_override` replaces the configured suite list.
pub fn load(path: &Path, suite_override: &[Suite]) -> Result<Loaded, ConfigError> {
    let err = |line, column, message: String| ConfigError { path: path.to_path_buf(), line, column, message };
    let text = std::fs::read_to_string(path).map_err(|e| err(0, 0, format!("cannot read config: {e}")))?;
    let config: ExperimentConfig = serde_json::from_str(&text).map_err(|e| {
        let msg = e.to_string();
        let msg = msg.rfind(" at line ").map_or(msg.as_str(), |p| &msg[..p]).to_string();
        err(e.line(), e.column(), msg)
    })?;
    let at = |key: &str, occurrence: usize, message: String| {
        let (line, column) = locate(&text, key, occurrence);
        err(line, column, message)
    };

    if !(config.horizon > 0.0 && config.horizon.is_finite()) {
        return Err(at("horizon", 0, format!("horizon must be positive, got {}", config.horizon)));
    }
    if !(config.beta >= 0.0 && config.beta.is_finite()) {
        return Err(at("beta", 0, format!("beta must be nonnegative, got {}", config.beta)));
    }
    if config.points.is_empty() {
        return Err(at("points", 0, "at least one (t, mu) point is required".into()));
    }
    let n = config.graph.graph.n();
    for (k, p) in config.points.iter().enumerate() {
        if !(p.t >= 0.0 && p.t < config.horizon) {
            return Err(at("mu", k, format!("point {}: t = {} must lie in [0, horizon)", k + 1, p.t)));
        }
        if p.mu.len() != n {
            return Err(at("mu", k, format!("point {}: mu has {} entries, graph has {n} vertices", k + 1, p.mu.len())));
        }
        if let Err(e) = SimplexPoint::new(p.mu.clone()) {
            return Err(at("mu", k, format!("point {}: {e}", k + 1)));
        }
        if p.mu.iter().any(|v| *v <= 0.0) {
            return Err(at("mu", k, format!("point {}: mu must be strictly positive", k + 1)));
        }
    }
    let opts = &config.options;
    if opts.steps.is_some_and(|s| s < 3) {
        return Err(at("steps", 0, "options.steps must be at least 3".into()));
    }
    if opts.tol.is_some_and(|t| !(t > 0.0)) {
        return Err(at("tol", 0, "options.tol must be positive".into()));
    }
    if opts.master.time_steps.is_empty() || opts.master.time_steps.iter().any(|h| !(*h > 0.0)) {
        return Err(at("time_steps", 0, "options.master.time_steps must be nonempty and positive".into()));
    }
    if opts.interiority.dt.is_some_and(|dt| !(dt > 0.0)) {
        return Err(at("dt", 0, "options.interiority.dt must be positive".into()));
    }

    let requested = if suite_override.is_empty() { &config.suites } else { suite_override };
    if requested.is_empty() {
        return Err(at("suites", 0, "no suites selected".into()));
    }
    let suites = expand(requested);
    if suites.contains(&Suite::Nash) && opts.seed.is_none() {
        return Err(at("options", 0, "the nash suite requires options.seed".into()));
    }
    if suites.contains(&Suite::Nash) && opts.nash.paths < 2 {
        return Err(at("paths", 0, "options.nash.paths must be at least 2".into()));
    }
    if config.beta > 0.0 && !requested.contains(&Suite::All) {
        if let Some(s) = suites.iter().find(|s| s.needs_hamiltonian()) {
            return Err(at("beta", 0, format!("suite {} requires beta = 0", s.name())));
        }
    }
    Ok(Loaded { config, suites })
}
