//! Flat `section.key = value` run configuration.

use std::collections::BTreeSet;
use std::fmt;
use std::path::PathBuf;

use stopdetect::detect::DetectorParams;
use stopdetect::gaps::StrataKeys;
use stopdetect::models::{FfnnConfig, ForestConfig, Init};
use stopdetect::quality::MeanBasis;
use stopdetect::split::SplitFractions;
use stopdetect::synth::GeneratorConfig;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ConfigIssue {
    /// Key path, or `line N` for syntax errors.
    pub key: String,
    pub message: String,
}

impl fmt::Display for ConfigIssue {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}: {}", self.key, self.message)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FilterConfig {
    pub enabled: bool,
    pub min_active_days: u32,
    pub min_daily_pings: f64,
    pub mean_basis: MeanBasis,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GapConfig {
    pub fraction: f64,
    pub strata: StrataKeys,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalConfig {
    pub threshold: f64,
    pub tn_sample: usize,
    pub importance_repeats: usize,
    /// 0 means every validation row.
    pub importance_max_rows: usize,
}

/// Stage seeds not set explicitly are derived from the global seed.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct SeedOverrides {
    pub generator: Option<u64>,
    pub gaps: Option<u64>,
    pub forest: Option<u64>,
    pub ffnn: Option<u64>,
    pub eval: Option<u64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Paths {
    pub out: PathBuf,
    /// External ping file for `label`; defaults to the generated `pings.csv`.
    pub input_pings: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub seed: u64,
    pub seeds: SeedOverrides,
    pub generator: GeneratorConfig,
    pub filter: FilterConfig,
    pub detector: DetectorParams,
    pub gaps: GapConfig,
    pub include_collective: bool,
    pub split: SplitFractions,
    pub forest: ForestConfig,
    pub ffnn: FfnnConfig,
    pub eval: EvalConfig,
    pub paths: Paths,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            seed: 1,
            seeds: SeedOverrides::default(),
            generator: GeneratorConfig::default(),
            filter: FilterConfig { enabled: true, min_active_days: 20, min_daily_pings: 200.0, mean_basis: MeanBasis::ActiveDays },
            detector: DetectorParams::default(),
            gaps: GapConfig { fraction: 0.1, strata: StrataKeys::default() },
            include_collective: false,
            split: SplitFractions::default(),
            forest: ForestConfig::default(),
            ffnn: FfnnConfig::default(),
            eval: EvalConfig { threshold: 0.5, tn_sample: 20_000, importance_repeats: 3, importance_max_rows: 5_000 },
            paths: Paths { out: PathBuf::from("out"), input_pings: None },
        }
    }
}

fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9E37_79B9_7F4A_7C15);
    x = (x ^ (x >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    x ^ (x >> 31)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stage {
    Generator,
    Gaps,
    Forest,
    Ffnn,
    Eval,
}

impl RunConfig {
    pub fn stage_seed(&self, stage: Stage) -> u64 {
        let (explicit, k) = match stage {
            Stage::Generator => (self.seeds.generator, 1),
            Stage::Gaps => (self.seeds.gaps, 2),
            Stage::Forest => (self.seeds.forest, 3),
            Stage::Ffnn => (self.seeds.ffnn, 4),
            Stage::Eval => (self.seeds.eval, 5),
        };
        explicit.unwrap_or_else(|| splitmix64(self.seed.wrapping_mul(16).wrapping_add(k)))
    }

    pub fn generator_config(&self) -> GeneratorConfig {
        GeneratorConfig { seed: self.stage_seed(Stage::Generator), ..self.generator.clone() }
    }

    pub fn forest_config(&self) -> ForestConfig {
        ForestConfig { seed: self.stage_seed(Stage::Forest), ..self.forest }
    }

    pub fn ffnn_config(&self) -> FfnnConfig {
        FfnnConfig { seed: self.stage_seed(Stage::Ffnn), ..self.ffnn }
    }
}

trait Value: Sized {
    fn parse(s: &str) -> Result<Self, String>;
    fn show(&self) -> String;
}

macro_rules! plain_value {
    ($($t:ty),*) => {$(
        impl Value for $t {
            fn parse(s: &str) -> Result<Self, String> {
                s.parse().map_err(|_| format!("expected {}, got {s:?}", stringify!($t)))
            }
            fn show(&self) -> String {
                self.to_string()
            }
        }
    )*};
}
plain_value!(u32, u64, usize, i64);

impl Value for f64 {
    fn parse(s: &str) -> Result<Self, String> {
        match s.parse::<f64>() {
            Ok(v) if v.is_finite() => Ok(v),
            _ => Err(format!("expected a finite number, got {s:?}")),
        }
    }
    fn show(&self) -> String {
        self.to_string()
    }
}

impl Value for bool {
    fn parse(s: &str) -> Result<Self, String> {
        match s {
            "true" | "yes" | "1" => Ok(true),
            "false" | "no" | "0" => Ok(false),
            _ => Err(format!("expected true or false, got {s:?}")),
        }
    }
    fn show(&self) -> String {
        self.to_string()
    }
}

impl Value for Option<u64> {
    fn parse(s: &str) -> Result<Self, String> {
        if s == "auto" {
            Ok(None)
        } else {
            u64::parse(s).map(Some)
        }
    }
    fn show(&self) -> String {
        self.map_or("auto".into(), |v| v.to_string())
    }
}

impl Value for Option<usize> {
    fn parse(s: &str) -> Result<Self, String> {
        if s == "auto" {
            Ok(None)
        } else {
            usize::parse(s).map(Some)
        }
    }
    fn show(&self) -> String {
        self.map_or("auto".into(), |v| v.to_string())
    }
}

impl Value for PathBuf {
    fn parse(s: &str) -> Result<Self, String> {
        if s.is_empty() {
            Err("empty path".into())
        } else {
            Ok(PathBuf::from(s))
        }
    }
    fn show(&self) -> String {
        self.display().to_string()
    }
}

impl Value for Option<PathBuf> {
    fn parse(s: &str) -> Result<Self, String> {
        if s == "none" {
            Ok(None)
        } else {
            PathBuf::parse(s).map(Some)
        }
    }
    fn show(&self) -> String {
        self.as_ref().map_or("none".into(), |p| p.display().to_string())
    }
}

impl Value for [f64; 7] {
    fn parse(s: &str) -> Result<Self, String> {
        let parts: Vec<f64> = s.split(',').map(|p| f64::parse(p.trim())).collect::<Result<_, _>>()?;
        parts.try_into().map_err(|_| "expected 7 comma-separated weights, Monday first".to_string())
    }
    fn show(&self) -> String {
        self.iter().map(|v| v.to_string()).collect::<Vec<_>>().join(",")
    }
}

impl Value for MeanBasis {
    fn parse(s: &str) -> Result<Self, String> {
        match s {
            "active_days" => Ok(MeanBasis::ActiveDays),
            "calendar_days" => Ok(MeanBasis::CalendarDays),
            _ => Err(format!("expected active_days or calendar_days, got {s:?}")),
        }
    }
    fn show(&self) -> String {
        match self {
            MeanBasis::ActiveDays => "active_days",
            MeanBasis::CalendarDays => "calendar_days",
        }
        .into()
    }
}

impl Value for Init {
    fn parse(s: &str) -> Result<Self, String> {
        match s {
            "he" => Ok(Init::He),
            "zero" => Ok(Init::Zero),
            _ => Err(format!("expected he or zero, got {s:?}")),
        }
    }
    fn show(&self) -> String {
        match self {
            Init::He => "he",
            Init::Zero => "zero",
        }
        .into()
    }
}

impl Value for StrataKeys {
    fn parse(s: &str) -> Result<Self, String> {
        let mut k = StrataKeys { weekday: false, point_type: false, persistence: false };
        for part in s.split(',').map(str::trim).filter(|p| !p.is_empty() && *p != "none") {
            match part {
                "weekday" => k.weekday = true,
                "point_type" => k.point_type = true,
                "persistence" => k.persistence = true,
                _ => return Err(format!("unknown stratum key {part:?}")),
            }
        }
        Ok(k)
    }
    fn show(&self) -> String {
        let mut v = Vec::new();
        if self.weekday {
            v.push("weekday");
        }
        if self.point_type {
            v.push("point_type");
        }
        if self.persistence {
            v.push("persistence");
        }
        if v.is_empty() {
            "none".into()
        } else {
            v.join(",")
        }
    }
}

type Setter = fn(&mut RunConfig, &str) -> Result<(), String>;
type Getter = fn(&RunConfig) -> String;

struct Field {
    key: &'static str,
    set: Setter,
    get: Getter,
}

macro_rules! fields {
    ($($key:literal => $($path:ident).+),* $(,)?) => {
        &[$(Field {
            key: $key,
            set: |c, v| {
                c.$($path).+ = Value::parse(v)?;
                Ok(())
            },
            get: |c| Value::show(&c.$($path).+),
        }),*]
    };
}

static FIELDS: &[Field] = fields! {
    "seed" => seed,
    "generator.seed" => seeds.generator,
    "generator.n_devices" => generator.n_devices,
    "generator.window_start_ts" => generator.window_start_ts,
    "generator.window_days" => generator.window_days,
    "generator.anchors_per_device" => generator.anchors_per_device,
    "generator.n_pois" => generator.n_pois,
    "generator.whitelisted_poi_fraction" => generator.whitelisted_poi_fraction,
    "generator.mean_daily_pings" => generator.mean_daily_pings,
    "generator.sigma_gps_m" => generator.sigma_gps_m,
    "generator.accuracy_min_m" => generator.accuracy_min_m,
    "generator.accuracy_max_m" => generator.accuracy_max_m,
    "generator.dwell_median_s" => generator.dwell_median_s,
    "generator.dwell_sigma" => generator.dwell_sigma,
    "generator.work_dwell_median_s" => generator.work_dwell_median_s,
    "generator.work_prob" => generator.work_prob,
    "generator.depart_hour_mean" => generator.depart_hour_mean,
    "generator.depart_hour_sd" => generator.depart_hour_sd,
    "generator.speed_min_mps" => generator.speed_min_mps,
    "generator.speed_max_mps" => generator.speed_max_mps,
    "generator.weekday_weights" => generator.weekday_weights,
    "generator.stops_per_day" => generator.stops_per_day,
    "generator.anchor_radius_m" => generator.anchor_radius_m,
    "generator.area_radius_m" => generator.area_radius_m,
    "generator.city_lat" => generator.city_lat,
    "generator.city_lon" => generator.city_lon,
    "generator.city_radius_m" => generator.city_radius_m,
    "generator.dropout_prob" => generator.dropout_prob,
    "generator.bursts_per_day" => generator.bursts_per_day,
    "generator.burst_mean_s" => generator.burst_mean_s,
    "filter.enabled" => filter.enabled,
    "filter.min_active_days" => filter.min_active_days,
    "filter.min_daily_pings" => filter.min_daily_pings,
    "filter.mean_basis" => filter.mean_basis,
    "detector.roam_radius_m" => detector.roam_radius_m,
    "detector.min_duration_s" => detector.min_duration_s,
    "detector.max_ping_gap_s" => detector.max_ping_gap_s,
    "detector.min_pings" => detector.min_pings,
    "gaps.fraction" => gaps.fraction,
    "gaps.seed" => seeds.gaps,
    "gaps.strata" => gaps.strata,
    "features.include_collective" => include_collective,
    "split.train" => split.train,
    "split.validation" => split.validation,
    "split.test" => split.test,
    "forest.n_trees" => forest.n_trees,
    "forest.max_depth" => forest.max_depth,
    "forest.min_leaf" => forest.min_leaf,
    "forest.mtry" => forest.mtry,
    "forest.max_bins" => forest.max_bins,
    "forest.class_weighted" => forest.class_weighted,
    "forest.seed" => seeds.forest,
    "ffnn.hidden_layers" => ffnn.hidden_layers,
    "ffnn.width" => ffnn.width,
    "ffnn.learning_rate" => ffnn.learning_rate,
    "ffnn.momentum" => ffnn.momentum,
    "ffnn.epochs" => ffnn.epochs,
    "ffnn.batch_size" => ffnn.batch_size,
    "ffnn.class_weighted" => ffnn.class_weighted,
    "ffnn.init" => ffnn.init,
    "ffnn.seed" => seeds.ffnn,
    "eval.seed" => seeds.eval,
    "eval.threshold" => eval.threshold,
    "eval.tn_sample" => eval.tn_sample,
    "eval.importance_repeats" => eval.importance_repeats,
    "eval.importance_max_rows" => eval.importance_max_rows,
    "paths.out" => paths.out,
    "paths.input_pings" => paths.input_pings,
};

pub fn known_keys() -> impl Iterator<Item = &'static str> {
    FIELDS.iter().map(|f| f.key)
}

/// Parse and validate config text. Every problem is reported; nothing is
/// accepted partially.
pub fn validate_config(text: &str) -> Result<RunConfig, Vec<ConfigIssue>> {
    let mut cfg = RunConfig::default();
    let mut issues = Vec::new();
    let mut seen = BTreeSet::new();
    for (n, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let Some((key, value)) = line.split_once('=') else {
            issues.push(ConfigIssue { key: format!("line {}", n + 1), message: "expected key = value".into() });
            continue;
        };
        let (key, value) = (key.trim(), value.trim());
        let Some(field) = FIELDS.iter().find(|f| f.key == key) else {
            issues.push(ConfigIssue { key: key.into(), message: "unknown key".into() });
            continue;
        };
        if !seen.insert(key.to_string()) {
            issues.push(ConfigIssue { key: key.into(), message: "duplicate key".into() });
            continue;
        }
        if let Err(message) = (field.set)(&mut cfg, value) {
            issues.push(ConfigIssue { key: key.into(), message });
        }
    }
    issues.extend(check_constraints(&cfg));
    if issues.is_empty() {
        Ok(cfg)
    } else {
        Err(issues)
    }
}

fn check_constraints(c: &RunConfig) -> Vec<ConfigIssue> {
    let mut out = Vec::new();
    let mut bad = |key: &str, ok: bool, message: &str| {
        if !ok {
            out.push(ConfigIssue { key: key.into(), message: message.into() });
        }
    };
    let g = &c.generator;
    bad("generator.n_devices", g.n_devices > 0, "must be positive");
    bad("generator.window_days", g.window_days > 0, "must be positive");
    bad("generator.window_start_ts", g.window_start_ts > 0, "must be after the epoch");
    bad("generator.anchors_per_device", g.anchors_per_device > 0, "must be positive");
    bad("generator.n_pois", g.anchors_per_device <= 2 || g.n_pois > 0, "anchors beyond home and work need POIs");
    bad("generator.mean_daily_pings", g.mean_daily_pings > 0.0, "must be positive");
    bad("generator.sigma_gps_m", g.sigma_gps_m >= 0.0, "must be non-negative");
    bad("generator.accuracy_min_m", g.accuracy_min_m >= 0.0, "must be non-negative");
    bad("generator.accuracy_max_m", g.accuracy_max_m >= g.accuracy_min_m, "must be at least accuracy_min_m");
    bad("generator.dwell_median_s", g.dwell_median_s > 0.0, "must be positive");
    bad("generator.work_dwell_median_s", g.work_dwell_median_s > 0.0, "must be positive");
    bad("generator.dwell_sigma", g.dwell_sigma >= 0.0, "must be non-negative");
    bad("generator.speed_min_mps", g.speed_min_mps > 0.0, "must be positive");
    bad("generator.speed_max_mps", g.speed_max_mps >= g.speed_min_mps, "must be at least speed_min_mps");
    bad("generator.weekday_weights", g.weekday_weights.iter().all(|w| *w >= 0.0), "weights must be non-negative");
    for (key, v) in [
        ("generator.work_prob", g.work_prob),
        ("generator.whitelisted_poi_fraction", g.whitelisted_poi_fraction),
        ("generator.dropout_prob", g.dropout_prob),
        ("gaps.fraction", c.gaps.fraction),
    ] {
        bad(key, (0.0..=1.0).contains(&v), "must be within [0, 1]");
    }
    bad("generator.stops_per_day", g.stops_per_day >= 0.0, "must be non-negative");
    bad("generator.bursts_per_day", g.bursts_per_day >= 0.0, "must be non-negative");
    bad("generator.burst_mean_s", g.burst_mean_s > 0.0, "must be positive");
    bad("generator.city_lat", (-90.0..=90.0).contains(&g.city_lat), "must be within [-90, 90]");
    bad("generator.city_lon", (-180.0..=180.0).contains(&g.city_lon), "must be within [-180, 180]");
    bad("filter.min_daily_pings", c.filter.min_daily_pings >= 0.0, "must be non-negative");
    bad("detector.roam_radius_m", c.detector.roam_radius_m > 0.0, "must be positive");
    bad("detector.min_duration_s", c.detector.min_duration_s > 0, "must be positive");
    bad("detector.max_ping_gap_s", c.detector.max_ping_gap_s > 0, "must be positive");
    bad("detector.min_pings", c.detector.min_pings > 0, "must be positive");
    let s = &c.split;
    for (key, v) in [("split.train", s.train), ("split.validation", s.validation), ("split.test", s.test)] {
        bad(key, v > 0.0 && v < 1.0, "must be within (0, 1)");
    }
    bad("split", (s.train + s.validation + s.test - 1.0).abs() <= 1e-9, "fractions must sum to 1");
    bad("forest.n_trees", c.forest.n_trees > 0, "must be positive");
    bad("forest.max_depth", c.forest.max_depth > 0, "must be positive");
    bad("forest.min_leaf", c.forest.min_leaf > 0, "must be positive");
    bad("forest.mtry", c.forest.mtry != Some(0), "must be positive");
    bad("forest.max_bins", (2..=256).contains(&c.forest.max_bins), "must be within 2..=256");
    bad("ffnn.width", c.ffnn.width > 0, "must be positive");
    bad("ffnn.epochs", c.ffnn.epochs > 0, "must be positive");
    bad("ffnn.batch_size", c.ffnn.batch_size > 0, "must be positive");
    bad("ffnn.learning_rate", c.ffnn.learning_rate > 0.0, "must be positive");
    bad("ffnn.momentum", (0.0..1.0).contains(&c.ffnn.momentum), "must be within [0, 1)");
    bad("eval.threshold", (0.0..=1.0).contains(&c.eval.threshold), "must be within [0, 1]");
    bad("eval.tn_sample", c.eval.tn_sample > 0, "must be positive");
    out
}

/// Every key with its effective value, one per line; seeds are resolved.
pub fn render_config(c: &RunConfig) -> String {
    let mut resolved = c.clone();
    resolved.seeds = SeedOverrides {
        generator: Some(c.stage_seed(Stage::Generator)),
        gaps: Some(c.stage_seed(Stage::Gaps)),
        forest: Some(c.stage_seed(Stage::Forest)),
        ffnn: Some(c.stage_seed(Stage::Ffnn)),
        eval: Some(c.stage_seed(Stage::Eval)),
    };
    let mut out = String::new();
    for f in FIELDS {
        out.push_str(f.key);
        out.push_str(" = ");
        out.push_str(&(f.get)(&resolved));
        out.push('\n');
    }
    out
}
