use std::path::{Path, PathBuf};

use modmf_core::nash::DeviationFamily;
use serde::{Deserialize, Serialize};
use serde_json::Value;
use sha2::{Digest, Sha256};

use crate::error::{HarnessError, Result};
use crate::output;

/// Environment variable for the default output directory.
pub const OUT_DIR_ENV: &str = "MODMF_OUT_DIR";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Kind {
    Chain,
    ModelCheck,
    Particles,
    Meanfield,
    Chaos,
    Adjoint,
    VerifyMp,
    LqOracle,
    Nash,
}

impl Kind {
    pub fn name(self) -> &'static str {
        match self {
            Kind::Chain => "chain",
            Kind::ModelCheck => "model-check",
            Kind::Particles => "particles",
            Kind::Meanfield => "meanfield",
            Kind::Chaos => "chaos",
            Kind::Adjoint => "adjoint",
            Kind::VerifyMp => "verify-mp",
            Kind::LqOracle => "lq-oracle",
            Kind::Nash => "nash",
        }
    }
}

/// Feedback control selection.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum FeedbackSpec {
    Constant {
        value: f64,
    },
    /// Time-constant `u = k0[i] + k1[i]·x` per regime.
    Affine {
        k0: Vec<f64>,
        k1: Vec<f64>,
    },
    /// Riccati oracle gains of an LQ model.
    Riccati,
    /// Tabulated gains as written by `lq-oracle` (`gains.json`).
    Table {
        path: PathBuf,
    },
}

/// Top-level keys of a configuration file.
pub const KEYS: &[&str] = &[
    "kind",
    "model",
    "generator",
    "initial_regime",
    "feedback",
    "deviation",
    "n",
    "paths",
    "horizon",
    "n_steps",
    "tol",
    "max_iters",
    "damping",
    "ladder",
    "replications",
    "samples",
    "seed",
    "out_dir",
    "threads",
    "basis_degree",
    "comparisons",
    "per_path",
    "plot",
];

/// One source of settings (file or flags); unset fields fall through.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConfigLayer {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub kind: Option<Kind>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub model: Option<PathBuf>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub generator: Option<PathBuf>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub initial_regime: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub feedback: Option<FeedbackSpec>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub deviation: Option<DeviationFamily>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub n: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub paths: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub horizon: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub n_steps: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub tol: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub max_iters: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub damping: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub ladder: Option<Vec<usize>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub replications: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub samples: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub out_dir: Option<PathBuf>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub threads: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub basis_degree: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub comparisons: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub per_path: Option<bool>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub plot: Option<bool>,
}

impl ConfigLayer {
    /// Parses a JSON configuration. Unknown keys are all reported at once;
    /// relative paths are resolved against `base_dir`.
    pub fn from_json_str(text: &str, base_dir: Option<&Path>) -> Result<Self> {
        let value: Value =
            serde_json::from_str(text).map_err(|e| HarnessError::validation(format!("malformed JSON: {e}")))?;
        let unknown = unknown_keys(&value);
        if !unknown.is_empty() {
            return Err(HarnessError::Validation(unknown));
        }
        let mut layer: ConfigLayer =
            serde_json::from_value(value).map_err(|e| HarnessError::validation(format!("schema violation: {e}")))?;
        if let Some(dir) = base_dir {
            layer.rebase(dir);
        }
        Ok(layer)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| HarnessError::io(path, e))?;
        Self::from_json_str(&text, path.parent())
    }

    fn rebase(&mut self, dir: &Path) {
        let join = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = dir.join(&*p);
            }
        };
        self.model.as_mut().map(join);
        self.generator.as_mut().map(join);
        if let Some(FeedbackSpec::Table { path }) = &mut self.feedback {
            join(path);
        }
    }

    /// Fields set in `over` replace those of `self`.
    pub fn merge(self, over: ConfigLayer) -> ConfigLayer {
        macro_rules! pick {
            ($($f:ident),*) => { ConfigLayer { $($f: over.$f.or(self.$f)),* } };
        }
        pick!(
            kind,
            model,
            generator,
            initial_regime,
            feedback,
            deviation,
            n,
            paths,
            horizon,
            n_steps,
            tol,
            max_iters,
            damping,
            ladder,
            replications,
            samples,
            seed,
            out_dir,
            threads,
            basis_degree,
            comparisons,
            per_path,
            plot
        )
    }
}

fn unknown_keys(v: &Value) -> Vec<String> {
    let Some(obj) = v.as_object() else {
        return vec!["configuration must be a JSON object".into()];
    };
    let mut out = Vec::new();
    for (k, val) in obj {
        if !KEYS.contains(&k.as_str()) {
            out.push(format!("unknown key `{k}`"));
            continue;
        }
        match k.as_str() {
            "feedback" => feedback_keys(val, &mut out),
            "deviation" => deviation_keys(val, &mut out),
            _ => {}
        }
    }
    out
}

fn feedback_keys(v: &Value, out: &mut Vec<String>) {
    let Some(o) = v.as_object() else { return };
    let allowed: &[&str] = match o.get("kind").and_then(Value::as_str) {
        Some("constant") => &["kind", "value"],
        Some("affine") => &["kind", "k0", "k1"],
        Some("riccati") => &["kind"],
        Some("table") => &["kind", "path"],
        _ => return,
    };
    out.extend(o.keys().filter(|k| !allowed.contains(&k.as_str())).map(|k| format!("unknown key `feedback.{k}`")));
}

fn deviation_keys(v: &Value, out: &mut Vec<String>) {
    let Some(o) = v.as_object() else { return };
    for (k, inner) in o {
        match k.as_str() {
            "affine_grid" | "affine_per_regime" => {
                if let Some(io) = inner.as_object() {
                    out.extend(
                        io.keys()
                            .filter(|f| !["offsets", "slopes"].contains(&f.as_str()))
                            .map(|f| format!("unknown key `deviation.{k}.{f}`")),
                    );
                }
            }
            _ => out.push(format!("unknown key `deviation.{k}`")),
        }
    }
}

/// Fully resolved settings of one run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub kind: Kind,
    pub model: Option<PathBuf>,
    pub generator: Option<PathBuf>,
    /// 1-based; defaults to the model's.
    pub initial_regime: Option<usize>,
    pub feedback: Option<FeedbackSpec>,
    pub deviation: DeviationFamily,
    pub n: usize,
    pub paths: usize,
    pub horizon: f64,
    pub n_steps: usize,
    pub tol: f64,
    pub max_iters: usize,
    pub damping: f64,
    pub ladder: Vec<usize>,
    pub replications: usize,
    pub samples: usize,
    pub seed: u64,
    pub out_dir: PathBuf,
    pub threads: usize,
    pub basis_degree: usize,
    pub comparisons: usize,
    pub per_path: bool,
    pub plot: bool,
}

impl ExperimentConfig {
    /// Applies defaults to `layer`. `kind` comes from the subcommand and must
    /// agree with the file, if the file names one.
    pub fn resolve(layer: ConfigLayer, kind: Option<Kind>) -> Result<Self> {
        let kind = match (kind, layer.kind) {
            (Some(a), Some(b)) if a != b => {
                return Err(HarnessError::validation(format!(
                    "config kind `{}` does not match subcommand `{}`",
                    b.name(),
                    a.name()
                )))
            }
            (Some(k), _) | (None, Some(k)) => k,
            (None, None) => return Err(HarnessError::validation("missing key `kind`")),
        };
        let default_ladder = match kind {
            Kind::Chaos => vec![64, 128, 256, 512, 1024],
            _ => Vec::new(),
        };
        let default_samples = match kind {
            Kind::ModelCheck => 1000,
            _ => 100_000,
        };
        let out_dir = layer
            .out_dir
            .or_else(|| std::env::var_os(OUT_DIR_ENV).map(PathBuf::from))
            .unwrap_or_else(|| PathBuf::from("modmf-out"));
        let threads = layer.threads.unwrap_or_else(|| std::thread::available_parallelism().map_or(1, |n| n.get()));
        let cfg = ExperimentConfig {
            kind,
            model: layer.model,
            generator: layer.generator,
            initial_regime: layer.initial_regime,
            feedback: layer.feedback,
            deviation: layer
                .deviation
                .unwrap_or(DeviationFamily::AffineGrid { offsets: vec![-0.1, 0.0, 0.1], slopes: vec![-0.1, 0.0, 0.1] }),
            n: layer.n.unwrap_or(256),
            paths: layer.paths.unwrap_or(20_000),
            horizon: layer.horizon.unwrap_or(1.0),
            n_steps: layer.n_steps.unwrap_or(50),
            tol: layer.tol.unwrap_or(1e-3),
            max_iters: layer.max_iters.unwrap_or(50),
            damping: layer.damping.unwrap_or(1.0),
            ladder: layer.ladder.unwrap_or(default_ladder),
            replications: layer.replications.unwrap_or(100),
            samples: layer.samples.unwrap_or(default_samples),
            seed: layer.seed.unwrap_or(0),
            out_dir,
            threads,
            basis_degree: layer.basis_degree.unwrap_or(2),
            comparisons: layer.comparisons.unwrap_or(20),
            per_path: layer.per_path.unwrap_or(false),
            plot: layer.plot.unwrap_or(true),
        };
        cfg.validate()?;
        Ok(cfg)
    }

    /// Checks every invariant and reports all violations together.
    pub fn validate(&self) -> Result<()> {
        let mut errs = Vec::new();
        for (name, v) in [
            ("n", self.n),
            ("paths", self.paths),
            ("n_steps", self.n_steps),
            ("max_iters", self.max_iters),
            ("replications", self.replications),
            ("samples", self.samples),
            ("threads", self.threads),
        ] {
            if v == 0 {
                errs.push(format!("`{name}` must be >= 1"));
            }
        }
        if !(self.horizon > 0.0 && self.horizon.is_finite()) {
            errs.push(format!("`horizon` must be > 0, got {}", self.horizon));
        }
        if !(self.tol > 0.0 && self.tol.is_finite()) {
            errs.push(format!("`tol` must be > 0, got {}", self.tol));
        }
        if !(self.damping > 0.0 && self.damping <= 1.0) {
            errs.push(format!("`damping` must lie in (0, 1], got {}", self.damping));
        }
        if self.ladder.contains(&0) || self.ladder.windows(2).any(|w| w[1] <= w[0]) {
            errs.push("`ladder` must be positive and strictly increasing".into());
        }
        if self.initial_regime == Some(0) {
            errs.push("`initial_regime` is 1-based".into());
        }
        match (&self.model, self.kind) {
            (None, Kind::Chain) if self.generator.is_some() => {}
            (None, Kind::Chain) => errs.push("`chain` needs `generator` or `model`".into()),
            (None, k) => errs.push(format!("`{}` needs `model`", k.name())),
            (Some(p), _) if !p.is_file() => errs.push(format!("`model` file {} does not exist", p.display())),
            _ => {}
        }
        if let Some(p) = &self.generator {
            if !p.is_file() {
                errs.push(format!("`generator` file {} does not exist", p.display()));
            }
        }
        if let Some(FeedbackSpec::Table { path }) = &self.feedback {
            if !path.is_file() {
                errs.push(format!("`feedback.path` file {} does not exist", path.display()));
            }
        }
        if self.kind == Kind::Chaos && self.ladder.len() < 2 {
            errs.push("`chaos` needs a ladder of at least 2 particle counts".into());
        }
        if self.kind == Kind::Nash && !self.ladder.is_empty() && self.ladder.len() < 3 {
            errs.push("a `nash` ladder needs at least 3 particle counts".into());
        }
        if errs.is_empty() {
            Ok(())
        } else {
            Err(HarnessError::Validation(errs))
        }
    }

    /// SHA-256 of the canonical JSON of every setting that affects results
    /// (everything except `out_dir` and `threads`).
    pub fn hash(&self) -> String {
        let mut v = serde_json::to_value(self).unwrap_or(Value::Null);
        if let Some(o) = v.as_object_mut() {
            o.remove("out_dir");
            o.remove("threads");
        }
        let bytes = output::json_bytes(&v).unwrap_or_default();
        output::hex(&Sha256::digest(&bytes))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn every_unknown_key_is_listed() {
        let text = r#"{"kind": "chain", "bogus": 1, "nn": 2, "feedback": {"kind": "constant", "value": 0, "extra": 1},
                       "deviation": {"affine_grid": {"offsets": [0], "slopes": [0], "oops": 1}}}"#;
        let HarnessError::Validation(errs) = ConfigLayer::from_json_str(text, None).unwrap_err() else {
            panic!("expected validation error");
        };
        for k in ["`bogus`", "`nn`", "`feedback.extra`", "`deviation.affine_grid.oops`"] {
            assert!(errs.iter().any(|e| e.contains(k)), "{k} missing from {errs:?}");
        }
        assert_eq!(errs.len(), 4);
    }

    #[test]
    fn invariants_are_reported_together() {
        let layer = ConfigLayer {
            kind: Some(Kind::Particles),
            n: Some(0),
            horizon: Some(-1.0),
            model: Some(PathBuf::from("/nonexistent/model.json")),
            out_dir: Some(PathBuf::from("x")),
            ..Default::default()
        };
        let HarnessError::Validation(errs) = ExperimentConfig::resolve(layer, None).unwrap_err() else {
            panic!("expected validation error");
        };
        assert_eq!(errs.len(), 3, "{errs:?}");
    }

    #[test]
    fn flags_override_file_values() {
        let file = ConfigLayer { n: Some(10), seed: Some(1), ..Default::default() };
        let flags = ConfigLayer { seed: Some(2), ..Default::default() };
        let m = file.merge(flags);
        assert_eq!((m.n, m.seed), (Some(10), Some(2)));
    }

    #[test]
    fn subcommand_and_file_kind_must_agree() {
        let layer = ConfigLayer { kind: Some(Kind::Nash), ..Default::default() };
        assert!(ExperimentConfig::resolve(layer, Some(Kind::Chain)).is_err());
    }

    #[test]
    fn hash_ignores_output_location_and_threads() {
        let dir = tempfile::tempdir().unwrap();
        let gen = dir.path().join("g.json");
        std::fs::write(&gen, "[[0.0]]").unwrap();
        let base = ConfigLayer { kind: Some(Kind::Chain), generator: Some(gen), ..Default::default() };
        let a = ExperimentConfig::resolve(
            base.clone().merge(ConfigLayer { out_dir: Some("a".into()), threads: Some(1), ..Default::default() }),
            None,
        )
        .unwrap();
        let b = ExperimentConfig::resolve(
            base.clone().merge(ConfigLayer { out_dir: Some("b".into()), threads: Some(4), ..Default::default() }),
            None,
        )
        .unwrap();
        let c =
            ExperimentConfig::resolve(base.merge(ConfigLayer { seed: Some(9), ..Default::default() }), None).unwrap();
        assert_eq!(a.hash(), b.hash());
        assert_ne!(a.hash(), c.hash());
    }
}
