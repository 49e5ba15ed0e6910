//! Key-value settings. Layers, lowest first: built-in defaults, config file,
//! `--set key=value`, dedicated flags. The resolved map is what manifests
//! record and what `replay` feeds back.

use std::collections::BTreeMap;
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use anyhow::{Context, Result};
use syntrack::classifier::{ClassifierConfig, FeedbackSource, TrackerKind};
use syntrack::grammar::{builtin_patterns, named_grammar, Grammar};
use syntrack::kinematics::{NoiseConfig, Platform};
use syntrack::parser::{ParserConfig, SimilarityConfig, SimilarityMode};
use syntrack::simulator::{ScenarioConfig, Steer, PINCER_OFFSET};
use syntrack::tracker::{FeedbackTiming, TrackerConfig};

/// Input the user got wrong: bad config, bad field value, malformed file.
/// Exits with status 1.
#[derive(Debug)]
pub struct Invalid(pub String);

impl fmt::Display for Invalid {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for Invalid {}

pub fn invalid(msg: impl Into<String>) -> anyhow::Error {
    Invalid(msg.into()).into()
}

pub const SCENARIO_KEYS: &[&str] = &[
    "grammar",
    "seed",
    "scenario",
    "scans_per_mode",
    "speed",
    "p_detect",
    "platform_x",
    "platform_y",
    "platform_z",
    "platform_vx",
    "platform_vy",
    "start_x",
    "start_y",
    "max_modes",
    "max_depth",
    "steer",
    "distinctive",
    "process_noise",
    "measurement_noise",
    "pincer_offset",
    "sigma_along",
    "sigma_ortho",
    "sigma_r",
    "sigma_rdot",
    "sigma_theta_deg",
    "period",
    "format",
];

pub const CLASSIFY_KEYS: &[&str] = &[
    "detections",
    "modes",
    "grammar",
    "seed",
    "tracker",
    "particles",
    "resample_threshold",
    "feedback",
    "feedback_weight",
    "feedback_source",
    "feedback_timing",
    "heading_kappa",
    "tracker_sigma_along",
    "tracker_sigma_ortho",
    "sigma_r",
    "sigma_rdot",
    "sigma_theta_deg",
    "period",
    "prune",
    "theta1",
    "theta2",
    "similarity",
    "nd_prob",
    "soft",
    "input_floor",
    "spawn_threshold",
    "dump_chart",
];

fn defaults() -> BTreeMap<String, String> {
    let sc = ScenarioConfig::<f64>::default();
    let cc = ClassifierConfig::<f64>::default();
    let tn = cc.tracker.noise;
    let n = sc.noise;
    let mut m = BTreeMap::new();
    let mut put = |k: &str, v: String| {
        m.insert(k.to_string(), v);
    };
    put("seed", "0".into());
    put("scenario", "single".into());
    put("scans_per_mode", sc.scans_per_mode.to_string());
    put("speed", sc.speed.to_string());
    put("p_detect", sc.p_detect.to_string());
    put("platform_x", sc.platform.x.to_string());
    put("platform_y", sc.platform.y.to_string());
    put("platform_z", sc.platform.z.to_string());
    put("platform_vx", sc.platform.vx.to_string());
    put("platform_vy", sc.platform.vy.to_string());
    put("start_x", sc.start[0].to_string());
    put("start_y", sc.start[1].to_string());
    put("max_modes", opt(sc.max_modes));
    put("max_depth", opt(sc.max_depth));
    put("steer", "hard".into());
    put("distinctive", sc.distinctive.to_string());
    put("process_noise", sc.process_noise.to_string());
    put("measurement_noise", sc.measurement_noise.to_string());
    put("pincer_offset", PINCER_OFFSET.to_string());
    put("sigma_along", n.sigma_along.to_string());
    put("sigma_ortho", n.sigma_ortho.to_string());
    put("sigma_r", n.sigma_r.to_string());
    put("sigma_rdot", n.sigma_rdot.to_string());
    // rounded so that the default reads back as the same radians
    put("sigma_theta_deg", ((n.sigma_theta.to_degrees() * 1e9).round() / 1e9).to_string());
    put("period", n.period.to_string());
    put("format", "jsonl".into());
    put("detections", String::new());
    put("modes", String::new());
    put("tracker", "imm".into());
    put("particles", "2000".into());
    put("resample_threshold", "0.5".into());
    put("feedback", "on".into());
    put("feedback_weight", cc.tracker.feedback_weight.to_string());
    put("feedback_source", "best".into());
    put("feedback_timing", "pre".into());
    put("heading_kappa", cc.tracker.heading_kappa.to_string());
    put("tracker_sigma_along", tn.sigma_along.to_string());
    put("tracker_sigma_ortho", tn.sigma_ortho.to_string());
    put("prune", cc.parser.prune.map_or("off".to_string(), |p| p.to_string()));
    put("theta1", cc.association.theta1.to_string());
    put("theta2", cc.association.theta2.to_string());
    put("similarity", "high-low".into());
    put("nd_prob", cc.nd_prob.to_string());
    put("soft", cc.soft.to_string());
    put("input_floor", cc.input_floor.to_string());
    put("spawn_threshold", cc.spawn_threshold.to_string());
    put("dump_chart", "false".into());
    m
}

fn opt(v: Option<usize>) -> String {
    v.map_or("none".to_string(), |x| x.to_string())
}

#[derive(Clone, Debug, PartialEq)]
pub struct Settings {
    map: BTreeMap<String, String>,
    /// Keys recorded in the manifest for this command.
    keys: &'static [&'static str],
}

impl Settings {
    pub fn new(keys: &'static [&'static str], default_grammar: &str) -> Self {
        let mut map = defaults();
        map.insert("grammar".into(), default_grammar.into());
        Settings { map, keys }
    }

    /// Applies `key = value` lines; `#` starts a comment.
    pub fn apply_text(&mut self, src: &str, origin: &str) -> Result<()> {
        for (i, raw) in src.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let Some((k, v)) = line.split_once('=') else {
                return Err(invalid(format!("{origin}:{}: expected `key = value`", i + 1)));
            };
            self.set(k.trim(), v.trim()).map_err(|e| invalid(format!("{origin}:{}: {e}", i + 1)))?;
        }
        Ok(())
    }

    pub fn apply_file(&mut self, path: &Path) -> Result<()> {
        let src = std::fs::read_to_string(path).with_context(|| format!("reading config {}", path.display()))?;
        self.apply_text(&src, &path.display().to_string())
    }

    /// `key=value` pairs from `--set`.
    pub fn apply_pairs(&mut self, pairs: &[String]) -> Result<()> {
        for p in pairs {
            let Some((k, v)) = p.split_once('=') else {
                return Err(invalid(format!("--set {p}: expected key=value")));
            };
            self.set(k.trim(), v.trim())?;
        }
        Ok(())
    }

    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        if !self.keys.contains(&key) {
            return Err(invalid(format!("unknown setting `{key}`")));
        }
        self.map.insert(key.to_string(), value.to_string());
        Ok(())
    }

    pub fn set_opt<V: ToString>(&mut self, key: &str, v: Option<V>) -> Result<()> {
        match v {
            Some(v) => self.set(key, &v.to_string()),
            None => Ok(()),
        }
    }

    /// The resolved values of this command's keys.
    pub fn snapshot(&self) -> BTreeMap<String, String> {
        self.keys.iter().map(|k| (k.to_string(), self.map[*k].clone())).collect()
    }

    pub fn from_snapshot(keys: &'static [&'static str], snap: &BTreeMap<String, String>) -> Result<Self> {
        let mut s = Settings::new(keys, "");
        for (k, v) in snap {
            s.set(k, v)?;
        }
        Ok(s)
    }

    pub fn str(&self, key: &str) -> &str {
        &self.map[key]
    }

    pub fn get<V: FromStr>(&self, key: &str) -> Result<V> {
        let v = self.str(key);
        v.parse().map_err(|_| invalid(format!("setting `{key}`: cannot parse `{v}`")))
    }

    pub fn flag(&self, key: &str) -> Result<bool> {
        match self.str(key) {
            "true" | "on" | "yes" | "1" => Ok(true),
            "false" | "off" | "no" | "0" => Ok(false),
            v => Err(invalid(format!("setting `{key}`: expected true or false, got `{v}`"))),
        }
    }

    fn opt_usize(&self, key: &str) -> Result<Option<usize>> {
        match self.str(key) {
            "none" | "" => Ok(None),
            _ => self.get(key).map(Some),
        }
    }

    fn noise(&self, along: &str, ortho: &str) -> Result<NoiseConfig<f64>> {
        Ok(NoiseConfig {
            sigma_along: self.get(along)?,
            sigma_ortho: self.get(ortho)?,
            sigma_r: self.get("sigma_r")?,
            sigma_rdot: self.get("sigma_rdot")?,
            sigma_theta: self.get::<f64>("sigma_theta_deg")?.to_radians(),
            period: self.get("period")?,
            ..NoiseConfig::default()
        })
    }

    pub fn scenario(&self) -> Result<ScenarioConfig<f64>> {
        let steer = match self.str("steer") {
            "hard" => Steer::Hard,
            "soft" => Steer::Soft,
            v => return Err(invalid(format!("setting `steer`: expected hard or soft, got `{v}`"))),
        };
        Ok(ScenarioConfig {
            grammar: self.str("grammar").to_string(),
            speed: self.get("speed")?,
            noise: self.noise("sigma_along", "sigma_ortho")?,
            p_detect: self.get("p_detect")?,
            platform: Platform {
                x: self.get("platform_x")?,
                y: self.get("platform_y")?,
                z: self.get("platform_z")?,
                vx: self.get("platform_vx")?,
                vy: self.get("platform_vy")?,
            },
            start: [self.get("start_x")?, self.get("start_y")?],
            seed: self.get("seed")?,
            max_depth: self.opt_usize("max_depth")?,
            scans_per_mode: self.get("scans_per_mode")?,
            steer,
            process_noise: self.flag("process_noise")?,
            measurement_noise: self.flag("measurement_noise")?,
            distinctive: self.flag("distinctive")?,
            max_modes: self.opt_usize("max_modes")?,
        })
    }

    pub fn parser(&self) -> Result<ParserConfig<f64>> {
        let mode = match self.str("similarity") {
            "high-high" => SimilarityMode::HighHigh,
            "high-low" => SimilarityMode::HighLow,
            "off" => SimilarityMode::Off,
            v => return Err(invalid(format!("setting `similarity`: expected high-high, high-low or off, got `{v}`"))),
        };
        let similarity = SimilarityConfig::new(self.get("theta1")?, self.get("theta2")?, mode)
            .map_err(|e| invalid(format!("settings `theta1`/`theta2`: {e}")))?;
        let prune = match self.str("prune") {
            "off" | "none" => None,
            _ => {
                let p: f64 = self.get("prune")?;
                if !(p < 0.0) {
                    return Err(invalid("setting `prune`: must be a negative log offset or `off`"));
                }
                Some(p)
            }
        };
        Ok(ParserConfig { similarity, prune })
    }

    /// Classifier configuration with feedback forced on or off.
    pub fn classifier(&self, feedback: bool) -> Result<ClassifierConfig<f64>> {
        let tracker_kind = match self.str("tracker") {
            "imm" => TrackerKind::Imm,
            "pf" => TrackerKind::Pf { particles: self.get("particles")?, resample_threshold: self.get("resample_threshold")? },
            v => return Err(invalid(format!("setting `tracker`: expected imm or pf, got `{v}`"))),
        };
        let feedback_source = match self.str("feedback_source") {
            "best" => FeedbackSource::BestPattern,
            "mix" => FeedbackSource::PosteriorMix,
            v => return Err(invalid(format!("setting `feedback_source`: expected best or mix, got `{v}`"))),
        };
        let feedback_timing = match self.str("feedback_timing") {
            "pre" => FeedbackTiming::PreLikelihood,
            "post" => FeedbackTiming::PostLikelihood,
            v => return Err(invalid(format!("setting `feedback_timing`: expected pre or post, got `{v}`"))),
        };
        let feedback_weight: f64 = self.get("feedback_weight")?;
        if !(0.0..=1.0).contains(&feedback_weight) {
            return Err(invalid("setting `feedback_weight`: must be in [0, 1]"));
        }
        let nd_prob: f64 = self.get("nd_prob")?;
        if !(0.0..1.0).contains(&nd_prob) {
            return Err(invalid("setting `nd_prob`: must be in [0, 1)"));
        }
        let input_floor: f64 = self.get("input_floor")?;
        if !(0.0..=1.0).contains(&input_floor) {
            return Err(invalid("setting `input_floor`: must be in [0, 1]"));
        }
        let parser = self.parser()?;
        let tracker = TrackerConfig {
            noise: self.noise("tracker_sigma_along", "tracker_sigma_ortho")?,
            feedback_weight,
            feedback_timing,
            heading_kappa: self.get("heading_kappa")?,
            ..TrackerConfig::default()
        };
        tracker.noise.validate().map_err(|e| invalid(format!("tracker noise: {e}")))?;
        Ok(ClassifierConfig {
            tracker,
            tracker_kind,
            parser,
            feedback,
            feedback_source,
            nd_prob,
            soft: self.flag("soft")?,
            input_floor,
            association: parser.similarity,
            spawn_threshold: self.get("spawn_threshold")?,
            seed: self.get("seed")?,
        })
    }
}

/// A built-in name (`A_ur`, `line`, `full`, ...) or a grammar file, text or
/// JSON by extension.
pub fn resolve_grammar(spec: &str) -> Result<(String, Grammar)> {
    let path = Path::new(spec);
    if path.is_file() {
        let src = std::fs::read_to_string(path).with_context(|| format!("reading grammar {spec}"))?;
        let g = if path.extension().is_some_and(|e| e == "json") {
            Grammar::from_json(&src).map_err(|e| invalid(format!("{spec}: {e}")))?
        } else {
            Grammar::from_text(&src).map_err(|e| invalid(format!("{spec}: {e}")))?
        };
        let name = path.file_stem().and_then(|s| s.to_str()).unwrap_or(spec).to_string();
        return Ok((name, g));
    }
    named_grammar(spec).map(|g| (spec.to_string(), g)).map_err(|_| {
        invalid(format!("unknown grammar `{spec}`: not a file and not a built-in name"))
    })
}

/// Candidate patterns: `builtin` for the twelve built-in patterns, else a
/// comma-separated list of names or files.
pub fn resolve_patterns(spec: &str) -> Result<indexmap::IndexMap<String, Grammar>> {
    if spec == "builtin" {
        return Ok(builtin_patterns());
    }
    let mut out = indexmap::IndexMap::new();
    for part in spec.split(',').map(str::trim).filter(|s| !s.is_empty()) {
        let (name, g) = resolve_grammar(part)?;
        if out.insert(name.clone(), g).is_some() {
            return Err(invalid(format!("pattern `{name}` given twice")));
        }
    }
    if out.is_empty() {
        return Err(invalid("no grammar given"));
    }
    Ok(out)
}
