//! Configuration ingestion: one strict JSON document per run.
//!
//! Unknown keys are rejected with the nearest valid key suggested, and
//! semantic failures carry the offending field path. Defaults are filled
//! in here so the resolved configuration can be echoed back verbatim.

use serde::{Deserialize, Serialize};
use serde_json::Value;
use std::fmt;
use std::path::{Path, PathBuf};

use mrcm::model::ModelSpec;
use mrcm::simulate::{ExplorationConfig, ExploreMode};

#[derive(Debug)]
pub struct ConfigError {
    pub path: String,
    pub message: String,
}

impl fmt::Display for ConfigError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.path.is_empty() {
            write!(f, "config error: {}", self.message)
        } else {
            write!(f, "config error at {}: {}", self.path, self.message)
        }
    }
}

impl std::error::Error for ConfigError {}

fn err(path: &str, message: impl Into<String>) -> ConfigError {
    ConfigError { path: path.to_string(), message: message.into() }
}

fn levenshtein(a: &str, b: &str) -> usize {
    let a: Vec<char> = a.chars().collect();
    let b: Vec<char> = b.chars().collect();
    let mut prev: Vec<usize> = (0..=b.len()).collect();
    let mut cur = vec![0usize; b.len() + 1];
    for i in 1..=a.len() {
        cur[0] = i;
        for j in 1..=b.len() {
            let cost = usize::from(a[i - 1] != b[j - 1]);
            cur[j] = (prev[j] + 1).min(cur[j - 1] + 1).min(prev[j - 1] + cost);
        }
        std::mem::swap(&mut prev, &mut cur);
    }
    prev[b.len()]
}

fn check_keys(value: &Value, path: &str, known: &[&str]) -> Result<(), ConfigError> {
    let obj = value
        .as_object()
        .ok_or_else(|| err(path, "expected a JSON object"))?;
    for key in obj.keys() {
        if !known.contains(&key.as_str()) {
            let nearest = known
                .iter()
                .min_by_key(|k| levenshtein(key, k))
                .filter(|k| levenshtein(key, k) <= 3);
            let suggestion = match nearest {
                Some(k) => format!("; did you mean \"{k}\"?"),
                None => format!("; known keys: {}", known.join(", ")),
            };
            let key_path = if path.is_empty() { key.clone() } else { format!("{path}.{key}") };
            return Err(err(&key_path, format!("unknown key{suggestion}")));
        }
    }
    Ok(())
}

fn check_kind(value: &Value, path: &str, kinds: &[&str]) -> Result<String, ConfigError> {
    let kind = value
        .get("kind")
        .and_then(|k| k.as_str())
        .ok_or_else(|| err(&format!("{path}.kind"), "missing discriminator"))?;
    if !kinds.contains(&kind) {
        let nearest = kinds.iter().min_by_key(|k| levenshtein(kind, k)).unwrap();
        return Err(err(
            &format!("{path}.kind"),
            format!("unknown kind {kind:?}; did you mean {nearest:?}? (valid: {})", kinds.join(", ")),
        ));
    }
    Ok(kind.to_string())
}

fn validate_model_value(value: &Value, path: &str) -> Result<(), ConfigError> {
    check_keys(value, path, &["d", "adjacency", "marks"])?;
    for field in ["d", "adjacency", "marks"] {
        if value.get(field).is_none() {
            return Err(err(path, format!("missing required key \"{field}\"")));
        }
    }
    let adj = &value["adjacency"];
    let apath = format!("{path}.adjacency");
    let kind = check_kind(adj, &apath, &["boolean_disc", "gaussian", "factorisable"])?;
    match kind.as_str() {
        "boolean_disc" => check_keys(adj, &apath, &["kind", "r_min", "r_max"])?,
        "gaussian" => {
            check_keys(adj, &apath, &["kind", "amplitude", "sigma"])?;
            if let Some(sigma) = adj.get("sigma") {
                let spath = format!("{apath}.sigma");
                let skind =
                    check_kind(sigma, &spath, &["spherical", "spherical_table", "matrix"])?;
                match skind.as_str() {
                    "spherical" => check_keys(sigma, &spath, &["kind", "value"])?,
                    _ => check_keys(sigma, &spath, &["kind", "values"])?,
                }
            }
        }
        "factorisable" => {
            check_keys(adj, &apath, &["kind", "profile", "mark_kernel"])?;
            if let Some(profile) = adj.get("profile") {
                let ppath = format!("{apath}.profile");
                let pkind =
                    check_kind(profile, &ppath, &["uniform_box", "uniform_ball", "gaussian"])?;
                match pkind.as_str() {
                    "uniform_box" => check_keys(profile, &ppath, &["kind", "half_width"])?,
                    "uniform_ball" => check_keys(profile, &ppath, &["kind", "radius"])?,
                    _ => check_keys(profile, &ppath, &["kind", "sigma", "scale"])?,
                }
            }
            if let Some(kernel) = adj.get("mark_kernel") {
                let kpath = format!("{apath}.mark_kernel");
                let kkind = check_kind(kernel, &kpath, &["matrix", "constant"])?;
                match kkind.as_str() {
                    "matrix" => check_keys(kernel, &kpath, &["kind", "values"])?,
                    _ => check_keys(kernel, &kpath, &["kind", "value"])?,
                }
            }
        }
        _ => unreachable!(),
    }
    let marks = &value["marks"];
    let mpath = format!("{path}.marks");
    let mkind = check_kind(marks, &mpath, &["finite", "uniform_interval"])?;
    match mkind.as_str() {
        "finite" => {
            check_keys(marks, &mpath, &["kind", "weights", "values"])?;
            let weights = marks
                .get("weights")
                .and_then(|w| w.as_array())
                .ok_or_else(|| err(&format!("{mpath}.weights"), "expected an array"))?;
            let mut total = 0.0;
            for (i, w) in weights.iter().enumerate() {
                let x = match w {
                    Value::Number(n) => n.as_f64().unwrap_or(f64::NAN),
                    Value::String(s) => parse_fraction_f64(s).ok_or_else(|| {
                        err(&format!("{mpath}.weights[{i}]"), format!("bad rational literal {s:?}"))
                    })?,
                    _ => return Err(err(
                        &format!("{mpath}.weights[{i}]"),
                        "expected a number or a \"p/q\" string",
                    )),
                };
                if !(x.is_finite() && x >= 0.0) {
                    return Err(err(
                        &format!("{mpath}.weights[{i}]"),
                        format!("weight {x} must be finite and >= 0"),
                    ));
                }
                total += x;
            }
            if (total - 1.0).abs() > 1e-12 {
                return Err(err(
                    &format!("{mpath}.weights"),
                    format!("weights sum to {total}, expected 1 within 1e-12"),
                ));
            }
        }
        "uniform_interval" => check_keys(marks, &mpath, &["kind", "lo", "hi"])?,
        _ => unreachable!(),
    }
    Ok(())
}

fn parse_fraction_f64(s: &str) -> Option<f64> {
    let mut parts = s.splitn(2, '/');
    let num: f64 = parts.next()?.trim().parse().ok()?;
    match parts.next() {
        Some(d) => {
            let den: f64 = d.trim().parse().ok()?;
            if den == 0.0 {
                None
            } else {
                Some(num / den)
            }
        }
        None => Some(num),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CommandKind {
    Kernels,
    Simulate,
    Scan,
    Fit,
    Validate,
    Report,
}

impl fmt::Display for CommandKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            CommandKind::Kernels => "kernels",
            CommandKind::Simulate => "simulate",
            CommandKind::Scan => "scan",
            CommandKind::Fit => "fit",
            CommandKind::Validate => "validate",
            CommandKind::Report => "report",
        };
        f.write_str(s)
    }
}

fn default_resolution() -> usize {
    16
}
fn default_k_max() -> usize {
    64
}
fn default_size_cap() -> u64 {
    100_000
}
fn default_generation_cap() -> u32 {
    u32::MAX
}
fn default_runs() -> u64 {
    10_000
}
fn default_mode() -> ExploreMode {
    ExploreMode::Thinned
}
fn default_k_list() -> Vec<usize> {
    vec![1, 2, 4]
}
fn default_p_star() -> f64 {
    0.01
}
fn default_bisect_iters() -> usize {
    18
}
fn default_gamma_grid() -> Vec<f64> {
    (1..=8).map(|j| 2f64.powi(-j)).collect()
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct KernelsParams {
    #[serde(default = "default_resolution")]
    pub resolution: usize,
    #[serde(default = "default_k_list")]
    pub k_list: Vec<usize>,
    #[serde(default)]
    pub lambda: f64,
    #[serde(default)]
    pub delta: f64,
    #[serde(default = "default_k_max")]
    pub k_max: usize,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimulateParams {
    pub lambda: f64,
    #[serde(default)]
    pub root_mark: f64,
    pub runs: u64,
    #[serde(default = "default_mode")]
    pub mode: ExploreMode,
    #[serde(default = "default_size_cap")]
    pub size_cap: u64,
    #[serde(default = "default_generation_cap")]
    pub generation_cap: u32,
    #[serde(default)]
    pub radius_cap: Option<f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScanParams {
    pub lambda_grid: Vec<f64>,
    #[serde(default)]
    pub root_mark: f64,
    #[serde(default = "default_runs")]
    pub runs_per_point: u64,
    #[serde(default = "default_mode")]
    pub mode: ExploreMode,
    #[serde(default = "default_size_cap")]
    pub size_cap: u64,
    #[serde(default = "default_generation_cap")]
    pub generation_cap: u32,
    #[serde(default)]
    pub radius_cap: Option<f64>,
    /// Ghost weight used for the magnetization column of the scan.
    #[serde(default = "default_gamma_scan")]
    pub gamma: f64,
}

fn default_gamma_scan() -> f64 {
    0.25
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FitParams {
    /// Path to a scan JSON produced by the scan command.
    pub scan_file: PathBuf,
    pub lambda_hat: f64,
    pub form: mrcm::analyze::FitForm,
    /// Which scan observable to fit.
    #[serde(default = "default_fit_observable")]
    pub observable: mrcm::analyze::Observable,
}

fn default_fit_observable() -> mrcm::analyze::Observable {
    mrcm::analyze::Observable::Chi
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TwoPointParams {
    pub h: f64,
    pub half_cells: usize,
    pub runs_per_cell: u64,
    /// Re-estimate at half the spacing and report the difference.
    #[serde(default)]
    pub refine: bool,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ValidateParams {
    pub bracket: (f64, f64),
    #[serde(default = "default_runs")]
    pub bisect_runs: u64,
    #[serde(default = "default_bisect_size_cap")]
    pub bisect_size_cap: u64,
    #[serde(default = "default_p_star")]
    pub p_star: f64,
    #[serde(default = "default_bisect_iters")]
    pub bisect_iters: usize,
    #[serde(default = "default_mode")]
    pub mode: ExploreMode,
    #[serde(default)]
    pub root_mark: f64,
    #[serde(default = "default_resolution")]
    pub resolution: usize,
    #[serde(default = "default_k_max")]
    pub k_max: usize,
    /// Fractions of lambda_hat probed below it for the chi scan.
    #[serde(default = "default_chi_fractions")]
    pub chi_fractions: Vec<f64>,
    #[serde(default = "default_runs")]
    pub chi_runs: u64,
    /// Fractions of lambda_hat probed above it for the theta scan.
    #[serde(default = "default_theta_fractions")]
    pub theta_fractions: Vec<f64>,
    #[serde(default = "default_runs")]
    pub theta_runs: u64,
    #[serde(default = "default_gamma_grid")]
    pub gamma_grid: Vec<f64>,
    #[serde(default = "default_runs")]
    pub magnetization_runs: u64,
    #[serde(default = "default_tail_grid")]
    pub tail_grid: Vec<u64>,
    #[serde(default = "default_runs")]
    pub tail_runs: u64,
    #[serde(default = "default_size_cap")]
    pub size_cap: u64,
    #[serde(default)]
    pub two_point: Option<TwoPointParams>,
}

fn default_bisect_size_cap() -> u64 {
    10_000
}
fn default_chi_fractions() -> Vec<f64> {
    vec![0.3, 0.45, 0.6, 0.7, 0.8, 0.9]
}
fn default_theta_fractions() -> Vec<f64> {
    vec![1.1, 1.2, 1.35, 1.5]
}
fn default_tail_grid() -> Vec<u64> {
    vec![2, 4, 8, 16, 32, 64, 128]
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ReportParams {
    pub lambda: f64,
    #[serde(default)]
    pub root_mark: f64,
    #[serde(default = "default_runs")]
    pub runs: u64,
    #[serde(default = "default_resolution")]
    pub resolution: usize,
    #[serde(default = "default_k_max")]
    pub k_max: usize,
    #[serde(default = "default_gamma_grid")]
    pub gamma_grid: Vec<f64>,
    #[serde(default = "default_size_cap")]
    pub size_cap: u64,
    #[serde(default)]
    pub two_point: Option<TwoPointParams>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(untagged)]
pub enum CommandParams {
    Kernels(KernelsParams),
    Simulate(SimulateParams),
    Scan(ScanParams),
    Fit(FitParams),
    Validate(ValidateParams),
    Report(ReportParams),
}

/// The fully validated, defaults-filled description of one run.
#[derive(Debug, Clone, Serialize)]
pub struct RunConfig {
    pub seed: u64,
    pub command: CommandKind,
    pub workers: usize,
    pub out_dir: PathBuf,
    pub model: ModelSpec,
    pub params: CommandParams,
    /// SHA-256 of the raw configuration bytes.
    #[serde(skip)]
    pub config_sha256: String,
}

impl RunConfig {
    pub fn exploration_config(size_cap: u64, generation_cap: u32, radius_cap: Option<f64>) -> ExplorationConfig {
        ExplorationConfig { size_cap, generation_cap, radius_cap }
    }
}

const TOP_KEYS: &[&str] =
    &["seed", "command", "workers", "out_dir", "model", "model_file", "params"];

/// Parses and validates a configuration document. `base_dir` anchors
/// relative `model_file` references.
pub fn parse_config(text: &str, base_dir: &Path) -> Result<RunConfig, ConfigError> {
    let value: Value =
        serde_json::from_str(text).map_err(|e| err("", format!("invalid JSON: {e}")))?;
    check_keys(&value, "", TOP_KEYS)?;

    let seed = value
        .get("seed")
        .ok_or_else(|| err("seed", "missing seed: runs must be explicitly seeded"))?
        .as_u64()
        .ok_or_else(|| err("seed", "seed must be an unsigned 64-bit integer"))?;

    let command_str = value
        .get("command")
        .and_then(|c| c.as_str())
        .ok_or_else(|| err("command", "missing command"))?;
    let command: CommandKind = serde_json::from_value(Value::String(command_str.into()))
        .map_err(|_| {
            let known = ["kernels", "simulate", "scan", "fit", "validate", "report"];
            let nearest = known.iter().min_by_key(|k| levenshtein(command_str, k)).unwrap();
            err("command", format!("unknown command {command_str:?}; did you mean {nearest:?}?"))
        })?;

    let workers = match value.get("workers") {
        None => 0,
        Some(w) => w
            .as_u64()
            .ok_or_else(|| err("workers", "workers must be a non-negative integer"))?
            as usize,
    };

    let out_dir = match value.get("out_dir") {
        None => PathBuf::from("."),
        Some(v) => PathBuf::from(
            v.as_str().ok_or_else(|| err("out_dir", "out_dir must be a string"))?,
        ),
    };

    let model_value = match (value.get("model"), value.get("model_file")) {
        (Some(_), Some(_)) => {
            return Err(err("model", "give either \"model\" or \"model_file\", not both"))
        }
        (Some(m), None) => m.clone(),
        (None, Some(f)) => {
            let rel = f
                .as_str()
                .ok_or_else(|| err("model_file", "model_file must be a string path"))?;
            let path = base_dir.join(rel);
            let text = std::fs::read_to_string(&path).map_err(|e| {
                err("model_file", format!("cannot read {}: {e}", path.display()))
            })?;
            serde_json::from_str(&text)
                .map_err(|e| err("model_file", format!("invalid model JSON: {e}")))?
        }
        (None, None) => return Err(err("model", "missing model: give \"model\" or \"model_file\"")),
    };
    validate_model_value(&model_value, "model")?;
    let model: ModelSpec = serde_json::from_value(model_value)
        .map_err(|e| err("model", format!("{e}")))?;
    // full semantic validation (positive-definiteness, bounds, ...)
    model
        .clone()
        .build()
        .map_err(|e| err("model", e.to_string()))?;

    let params_value = value.get("params").cloned().unwrap_or(Value::Object(Default::default()));
    let params = parse_params(command, params_value)?;

    let mut hasher = <sha2::Sha256 as sha2::Digest>::new();
    sha2::Digest::update(&mut hasher, text.as_bytes());
    let config_sha256 = hex_string(&sha2::Digest::finalize(hasher));

    let config = RunConfig { seed, command, workers, out_dir, model, params, config_sha256 };
    validate_params(&config)?;
    Ok(config)
}

fn hex_string(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

fn parse_params(command: CommandKind, value: Value) -> Result<CommandParams, ConfigError> {
    let path = "params";
    let wrap = |e: serde_json::Error| err(path, e.to_string());
    Ok(match command {
        CommandKind::Kernels => {
            check_keys(&value, path, &["resolution", "k_list", "lambda", "delta", "k_max"])?;
            CommandParams::Kernels(serde_json::from_value(value).map_err(wrap)?)
        }
        CommandKind::Simulate => {
            check_keys(
                &value,
                path,
                &["lambda", "root_mark", "runs", "mode", "size_cap", "generation_cap", "radius_cap"],
            )?;
            CommandParams::Simulate(serde_json::from_value(value).map_err(wrap)?)
        }
        CommandKind::Scan => {
            check_keys(
                &value,
                path,
                &[
                    "lambda_grid",
                    "root_mark",
                    "runs_per_point",
                    "mode",
                    "size_cap",
                    "generation_cap",
                    "radius_cap",
                    "gamma",
                ],
            )?;
            CommandParams::Scan(serde_json::from_value(value).map_err(wrap)?)
        }
        CommandKind::Fit => {
            check_keys(&value, path, &["scan_file", "lambda_hat", "form", "observable"])?;
            CommandParams::Fit(serde_json::from_value(value).map_err(wrap)?)
        }
        CommandKind::Validate => {
            check_keys(
                &value,
                path,
                &[
                    "bracket",
                    "bisect_runs",
                    "bisect_size_cap",
                    "p_star",
                    "bisect_iters",
                    "mode",
                    "root_mark",
                    "resolution",
                    "k_max",
                    "chi_fractions",
                    "chi_runs",
                    "theta_fractions",
                    "theta_runs",
                    "gamma_grid",
                    "magnetization_runs",
                    "tail_grid",
                    "tail_runs",
                    "size_cap",
                    "two_point",
                ],
            )?;
            CommandParams::Validate(serde_json::from_value(value).map_err(wrap)?)
        }
        CommandKind::Report => {
            check_keys(
                &value,
                path,
                &[
                    "lambda",
                    "root_mark",
                    "runs",
                    "resolution",
                    "k_max",
                    "gamma_grid",
                    "size_cap",
                    "two_point",
                ],
            )?;
            CommandParams::Report(serde_json::from_value(value).map_err(wrap)?)
        }
    })
}

fn validate_params(config: &RunConfig) -> Result<(), ConfigError> {
    match &config.params {
        CommandParams::Scan(p) => {
            if p.lambda_grid.is_empty() {
                return Err(err("params.lambda_grid", "scan grid must not be empty"));
            }
            if p.lambda_grid.windows(2).any(|w| w[0] >= w[1]) {
                return Err(err("params.lambda_grid", "grid must be strictly increasing"));
            }
            if p.runs_per_point < 1 {
                return Err(err("params.runs_per_point", "sample counts must be >= 1"));
            }
        }
        CommandParams::Simulate(p) => {
            if p.runs < 1 {
                return Err(err("params.runs", "sample counts must be >= 1"));
            }
        }
        CommandParams::Validate(p) => {
            if !(p.bracket.0 >= 0.0 && p.bracket.0 < p.bracket.1) {
                return Err(err("params.bracket", "bracket must satisfy 0 <= lo < hi"));
            }
        }
        _ => {}
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn minimal(command: &str) -> String {
        format!(
            r#"{{
                "seed": 7,
                "command": "{command}",
                "model": {{
                    "d": 1,
                    "adjacency": {{"kind": "boolean_disc", "r_min": 0.5, "r_max": 0.5}},
                    "marks": {{"kind": "finite", "weights": [1.0], "values": [0.5]}}
                }},
                "params": {{"lambda": 0.3, "runs": 10}}
            }}"#
        )
    }

    #[test]
    fn minimal_document_fills_defaults() {
        let cfg = parse_config(&minimal("simulate"), Path::new(".")).unwrap();
        assert_eq!(cfg.seed, 7);
        assert_eq!(cfg.command, CommandKind::Simulate);
        match cfg.params {
            CommandParams::Simulate(p) => {
                assert_eq!(p.size_cap, 100_000);
                assert_eq!(p.mode, ExploreMode::Thinned);
            }
            _ => panic!("wrong params"),
        }
    }

    #[test]
    fn missing_seed_is_rejected() {
        let text = r#"{"command": "kernels", "model_file": "x.json"}"#;
        let e = parse_config(text, Path::new(".")).unwrap_err();
        assert!(e.path.contains("seed"), "{e}");
    }

    #[test]
    fn bad_weights_name_the_field() {
        let text = r#"{
            "seed": 1, "command": "kernels",
            "model": {
                "d": 1,
                "adjacency": {"kind": "boolean_disc", "r_min": 0.5, "r_max": 1.0},
                "marks": {"kind": "finite", "weights": [0.5, 0.6], "values": [0.5, 1.0]}
            }
        }"#;
        let e = parse_config(text, Path::new(".")).unwrap_err();
        assert_eq!(e.path, "model.marks.weights", "{e}");
        assert!(e.message.contains("sum"), "{e}");
    }

    #[test]
    fn unknown_keys_suggest_the_nearest_valid_one() {
        let text = r#"{
            "seed": 1, "command": "kernels",
            "model": {
                "d": 1,
                "adjacensy": {"kind": "boolean_disc", "r_min": 0.5, "r_max": 1.0},
                "marks": {"kind": "finite", "weights": [1.0], "values": [0.5]}
            }
        }"#;
        let e = parse_config(text, Path::new(".")).unwrap_err();
        assert_eq!(e.path, "model.adjacensy");
        assert!(e.message.contains("did you mean \"adjacency\""), "{e}");
    }

    #[test]
    fn unknown_adjacency_kind_is_rejected() {
        let text = r#"{
            "seed": 1, "command": "kernels",
            "model": {
                "d": 1,
                "adjacency": {"kind": "boolean_disk", "r_min": 0.5, "r_max": 1.0},
                "marks": {"kind": "finite", "weights": [1.0], "values": [0.5]}
            }
        }"#;
        let e = parse_config(text, Path::new(".")).unwrap_err();
        assert_eq!(e.path, "model.adjacency.kind");
        assert!(e.message.contains("boolean_disc"), "{e}");
    }
}
