use std::fmt;
use std::path::{Path, PathBuf};

use dal_core::dataio::{LabelColumn, StreamMode, StreamSpec, ToyParams};
use dal_core::efmdi::EfmdiMethod;
use dal_core::solvers::{BoundReporting, Loss, SolverConfig, Variant};
use serde::de::Error as _;
use serde::{Deserialize, Deserializer, Serialize};

/// Schema violation, located by a JSON pointer into the config document.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ConfigError {
    pub pointer: String,
    pub message: String,
}

impl ConfigError {
    fn at(pointer: &str, message: impl Into<String>) -> Self {
        Self { pointer: pointer.to_owned(), message: message.into() }
    }
}

impl fmt::Display for ConfigError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let at = if self.pointer.is_empty() { "/" } else { &self.pointer };
        write!(f, "config error at {at}: {}", self.message)
    }
}

impl std::error::Error for ConfigError {}

/// Domain-checked numbers: the check runs during deserialization so the
/// error carries the field's path.
macro_rules! bounded {
    ($name:ident, $ty:ty, $ok:expr, $what:literal) => {
        #[derive(Debug, Clone, Copy, PartialEq, Serialize)]
        #[serde(transparent)]
        pub struct $name(pub $ty);

        impl<'de> Deserialize<'de> for $name {
            fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
                let v = <$ty>::deserialize(d)?;
                let ok: fn($ty) -> bool = $ok;
                if ok(v) {
                    Ok(Self(v))
                } else {
                    Err(D::Error::custom(format!(concat!("must be ", $what, ", got {}"), v)))
                }
            }
        }
    };
}

bounded!(NonNeg, f64, |v| v.is_finite() && v >= 0.0, ">= 0");
bounded!(Positive, f64, |v| v.is_finite() && v > 0.0, "> 0");
bounded!(Fraction, f64, |v| v > 0.0 && v <= 1.0, "in (0, 1]");
bounded!(OpenUnit, f64, |v| v > 0.0 && v < 1.0, "in (0, 1)");
bounded!(Finite, f64, |v| v.is_finite(), "finite");
bounded!(Count, usize, |v| v >= 1, ">= 1");

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum LabelRef {
    Index(usize),
    Name(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CsvSource {
    pub path: PathBuf,
    pub label: LabelRef,
    #[serde(default = "yes")]
    pub header: bool,
}

fn yes() -> bool {
    true
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RawToy {
    pub rotation_deg: Finite,
    pub separation: NonNeg,
    pub initial_angle_deg: Finite,
}

impl Default for RawToy {
    fn default() -> Self {
        let t = ToyParams::default();
        Self {
            rotation_deg: Finite(t.rotation_deg),
            separation: NonNeg(t.separation),
            initial_angle_deg: Finite(t.initial_angle_deg),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RawStream {
    pub mode: StreamMode,
    pub task_count: Count,
    pub labeled_fraction: Fraction,
    pub task0_size_multiplier: Positive,
    pub batch_size: Count,
    pub schedule: Option<Vec<f64>>,
    pub toy: RawToy,
    /// Arrival-ordered table for `csv_split`.
    pub csv: Option<CsvSource>,
    /// Pools for `mixture`.
    pub source: Option<CsvSource>,
    pub target: Option<CsvSource>,
}

impl Default for RawStream {
    fn default() -> Self {
        let s = StreamSpec::default();
        Self {
            mode: s.mode,
            task_count: Count(s.task_count),
            labeled_fraction: Fraction(s.labeled_fraction),
            task0_size_multiplier: Positive(s.task0_size_multiplier),
            batch_size: Count(s.batch_size),
            schedule: s.schedule,
            toy: RawToy::default(),
            csv: None,
            source: None,
            target: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RawBounds {
    pub enabled: bool,
    pub loss_bound: Positive,
    pub delta: OpenUnit,
}

impl Default for RawBounds {
    fn default() -> Self {
        let b = BoundReporting::default();
        Self { enabled: b.enabled, loss_bound: Positive(b.loss_bound), delta: OpenUnit(b.delta) }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RawSolver {
    pub loss: Loss,
    pub alpha: NonNeg,
    pub beta: NonNeg,
    pub step0: Positive,
    pub shrink: OpenUnit,
    pub max_iter: Count,
    pub obj_tol: Positive,
    /// Neighbors in the graph Laplacian.
    pub k: Count,
    pub efmdi: EfmdiMethod,
    pub epsilon: Positive,
    pub cel_bias: bool,
    pub bounds: RawBounds,
}

impl Default for RawSolver {
    fn default() -> Self {
        let c = SolverConfig::default();
        Self {
            loss: c.loss,
            alpha: NonNeg(c.alpha),
            beta: NonNeg(c.beta),
            step0: Positive(c.step0),
            shrink: OpenUnit(c.shrink),
            max_iter: Count(c.max_iter),
            obj_tol: Positive(c.obj_tol),
            k: Count(c.knn_k),
            efmdi: c.efmdi,
            epsilon: Positive(c.epsilon),
            cel_bias: c.cel_bias,
            bounds: RawBounds::default(),
        }
    }
}

/// The config document as written, with defaults filled in.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RawConfig {
    #[serde(default)]
    pub stream: RawStream,
    #[serde(default)]
    pub solver: RawSolver,
    #[serde(default = "all_variants")]
    pub variants: Vec<Variant>,
    #[serde(default = "first_seed")]
    pub seeds: Vec<u64>,
    #[serde(default = "runs_dir")]
    pub output_dir: PathBuf,
}

fn all_variants() -> Vec<Variant> {
    Variant::ALL.to_vec()
}

fn first_seed() -> Vec<u64> {
    vec![0]
}

fn runs_dir() -> PathBuf {
    PathBuf::from("runs")
}

#[derive(Debug, Clone, PartialEq)]
pub enum DataSource {
    Toy,
    Csv { path: PathBuf, label: LabelColumn, header: bool },
    Mixture { source: (PathBuf, LabelColumn, bool), target: (PathBuf, LabelColumn, bool) },
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    /// Stream shape; its seed is replaced by each run seed.
    pub stream: StreamSpec,
    pub data: DataSource,
    pub solver: SolverConfig,
    pub variants: Vec<Variant>,
    pub seeds: Vec<u64>,
    pub output_dir: PathBuf,
    pub raw: RawConfig,
}

impl ExperimentConfig {
    /// Default toy experiment, as parsed from `{}`.
    pub fn toy() -> Self {
        from_raw(serde_json::from_str("{}").expect("empty object"), Path::new(".")).expect("defaults are valid")
    }

    pub fn spec_for_seed(&self, seed: u64) -> StreamSpec {
        StreamSpec { seed, ..self.stream.clone() }
    }
}

fn pointer(path: &serde_path_to_error::Path) -> String {
    use serde_path_to_error::Segment;
    let mut out = String::new();
    for seg in path.iter() {
        match seg {
            Segment::Seq { index } => out.push_str(&format!("/{index}")),
            Segment::Map { key } => out.push_str(&format!("/{}", key.replace('~', "~0").replace('/', "~1"))),
            Segment::Enum { variant } => out.push_str(&format!("/{variant}")),
            Segment::Unknown => {}
        }
    }
    out
}

/// Parse a config document; relative data paths resolve against `base`.
pub fn parse_config_str(text: &str, base: &Path) -> Result<ExperimentConfig, ConfigError> {
    let de = &mut serde_json::Deserializer::from_str(text);
    let raw: RawConfig = serde_path_to_error::deserialize(de).map_err(|e| {
        let at = pointer(e.path());
        ConfigError::at(&at, e.into_inner().to_string())
    })?;
    from_raw(raw, base)
}

pub fn parse_config(path: &Path) -> Result<ExperimentConfig, ConfigError> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| ConfigError::at("", format!("cannot read {}: {e}", path.display())))?;
    parse_config_str(&text, path.parent().unwrap_or(Path::new(".")))
}

fn csv_source(src: &Option<CsvSource>, at: &str, base: &Path) -> Result<(PathBuf, LabelColumn, bool), ConfigError> {
    let src = src.as_ref().ok_or_else(|| ConfigError::at(at, "required for this stream mode"))?;
    let label = match &src.label {
        LabelRef::Index(i) => LabelColumn::Index(*i),
        LabelRef::Name(n) => LabelColumn::Name(n.clone()),
    };
    if matches!(label, LabelColumn::Name(_)) && !src.header {
        return Err(ConfigError::at(&format!("{at}/label"), "a label name needs a header row"));
    }
    Ok((base.join(&src.path), label, src.header))
}

fn from_raw(raw: RawConfig, base: &Path) -> Result<ExperimentConfig, ConfigError> {
    if raw.variants.is_empty() {
        return Err(ConfigError::at("/variants", "must not be empty"));
    }
    for (i, v) in raw.variants.iter().enumerate() {
        if raw.variants[..i].contains(v) {
            return Err(ConfigError::at(&format!("/variants/{i}"), format!("duplicate variant {v}")));
        }
    }
    if raw.seeds.is_empty() {
        return Err(ConfigError::at("/seeds", "must not be empty"));
    }
    let s = &raw.stream;
    let stream = StreamSpec {
        mode: s.mode,
        task_count: s.task_count.0,
        labeled_fraction: s.labeled_fraction.0,
        task0_size_multiplier: s.task0_size_multiplier.0,
        seed: raw.seeds[0],
        batch_size: s.batch_size.0,
        schedule: s.schedule.clone(),
        toy: ToyParams {
            rotation_deg: s.toy.rotation_deg.0,
            separation: s.toy.separation.0,
            initial_angle_deg: s.toy.initial_angle_deg.0,
        },
    };
    if let Err(e) = stream.validate() {
        let at = if s.schedule.is_some() && e.to_string().contains("schedule") { "/stream/schedule" } else { "/stream" };
        return Err(ConfigError::at(at, e.to_string()));
    }
    let data = match s.mode {
        StreamMode::Toy => DataSource::Toy,
        StreamMode::CsvSplit => {
            let (path, label, header) = csv_source(&s.csv, "/stream/csv", base)?;
            DataSource::Csv { path, label, header }
        }
        StreamMode::Mixture => DataSource::Mixture {
            source: csv_source(&s.source, "/stream/source", base)?,
            target: csv_source(&s.target, "/stream/target", base)?,
        },
    };
    let r = &raw.solver;
    let solver = SolverConfig {
        loss: r.loss,
        alpha: r.alpha.0,
        beta: r.beta.0,
        step0: r.step0.0,
        shrink: r.shrink.0,
        max_iter: r.max_iter.0,
        obj_tol: r.obj_tol.0,
        knn_k: r.k.0,
        efmdi: r.efmdi,
        epsilon: r.epsilon.0,
        cel_bias: r.cel_bias,
        bounds: BoundReporting { enabled: r.bounds.enabled, loss_bound: r.bounds.loss_bound.0, delta: r.bounds.delta.0 },
    };
    solver.validate().map_err(|e| ConfigError::at("/solver", e.to_string()))?;
    Ok(ExperimentConfig {
        stream,
        data,
        solver,
        variants: raw.variants.clone(),
        seeds: raw.seeds.clone(),
        output_dir: raw.output_dir.clone(),
        raw,
    })
}

/// Apply a `DAL_SEED` value: one seed or a comma-separated list.
pub fn override_seeds(cfg: &mut ExperimentConfig, value: &str) -> Result<(), ConfigError> {
    let seeds: Result<Vec<u64>, _> = value.split(',').map(|s| s.trim().parse::<u64>()).collect();
    match seeds {
        Ok(s) if !s.is_empty() => {
            cfg.stream.seed = s[0];
            cfg.raw.seeds = s.clone();
            cfg.seeds = s;
            Ok(())
        }
        _ => Err(ConfigError::at("/seeds", format!("DAL_SEED={value:?} is not a seed list"))),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn parse(text: &str) -> Result<ExperimentConfig, ConfigError> {
        parse_config_str(text, Path::new("/data"))
    }

    #[test]
    fn stream_block_only_gets_solver_defaults() {
        let cfg = parse(r#"{"stream": {"task_count": 4}}"#).unwrap();
        assert_eq!(cfg.solver, SolverConfig::default());
        assert_eq!(cfg.solver.alpha, 1.0);
        assert_eq!(cfg.solver.beta, 0.1);
        assert_eq!(cfg.stream.labeled_fraction, 0.01);
        assert_eq!(cfg.solver.knn_k, 10);
        assert_eq!(cfg.variants, Variant::ALL.to_vec());
        assert_eq!(cfg.seeds, vec![0]);
    }

    #[test]
    fn negative_alpha_points_at_field() {
        let err = parse(r#"{"solver": {"alpha": -1.0}}"#).unwrap_err();
        assert_eq!(err.pointer, "/solver/alpha");
    }

    #[test]
    fn unknown_key_is_named() {
        let err = parse(r#"{"solver": {"alpha_": 1.0}}"#).unwrap_err();
        assert_eq!(err.pointer, "/solver/alpha_");
        assert!(err.message.contains("alpha_"), "{err}");
    }

    #[test]
    fn nested_errors_point_into_arrays() {
        let err = parse(r#"{"variants": ["dal", "lsg"]}"#).unwrap_err();
        assert_eq!(err.pointer, "/variants/1");
        let err = parse(r#"{"seeds": []}"#).unwrap_err();
        assert_eq!(err.pointer, "/seeds");
        let err = parse(r#"{"stream": {"labeled_fraction": 0}}"#).unwrap_err();
        assert_eq!(err.pointer, "/stream/labeled_fraction");
        let err = parse(r#"{"stream": {"schedule": [0.0, 0.5]}}"#).unwrap_err();
        assert_eq!(err.pointer, "/stream/schedule");
    }

    #[test]
    fn csv_mode_requires_and_resolves_source() {
        let err = parse(r#"{"stream": {"mode": "csv_split"}}"#).unwrap_err();
        assert_eq!(err.pointer, "/stream/csv");
        let cfg = parse(r#"{"stream": {"mode": "csv_split", "csv": {"path": "a.csv", "label": "y"}}}"#).unwrap();
        assert_eq!(
            cfg.data,
            DataSource::Csv { path: PathBuf::from("/data/a.csv"), label: LabelColumn::Name("y".into()), header: true }
        );
        let err =
            parse(r#"{"stream": {"mode": "csv_split", "csv": {"path": "a.csv", "label": "y", "header": false}}}"#)
                .unwrap_err();
        assert_eq!(err.pointer, "/stream/csv/label");
    }

    #[test]
    fn seed_override() {
        let mut cfg = parse("{}").unwrap();
        override_seeds(&mut cfg, "3, 5").unwrap();
        assert_eq!(cfg.seeds, vec![3, 5]);
        assert!(override_seeds(&mut cfg, "x").is_err());
    }

    #[test]
    fn resolved_config_round_trips() {
        let cfg = parse(r#"{"solver": {"loss": "cel"}, "seeds": [1, 2]}"#).unwrap();
        let text = serde_json::to_string(&cfg.raw).unwrap();
        assert_eq!(parse(&text).unwrap(), cfg);
    }
}
