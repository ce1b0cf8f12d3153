//! Sectioned `key = value` run configuration.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use pptv::attribution::{ChannelMode, Method, PerturbationConfig};
use pptv::data::SynthConfig;
use pptv::experiments::TrainSpec;
use pptv::model::ModelConfig;
use pptv::{Error, Result};

pub const SECTIONS: [&str; 7] = ["grid", "synth", "model", "train", "attribution", "paths", "export"];

const GRID_KEYS: [&str; 6] = ["nlat", "nlon", "lat0", "dlat", "lon0", "dlon"];

const MODEL_KEYS: [&str; 6] = ["conv_filters", "dense_neurons", "kernel", "lead_months", "target_month", "calibration"];

#[derive(Debug, Clone, PartialEq)]
pub struct AttributionSettings {
    pub method: Method,
    pub channels: ChannelMode,
    pub perturbation: PerturbationConfig,
    pub threshold: f64,
}

impl Default for AttributionSettings {
    fn default() -> Self {
        AttributionSettings {
            method: Method::Pptv,
            channels: ChannelMode::Mean,
            perturbation: PerturbationConfig::default(),
            threshold: 0.5,
        }
    }
}

/// Default file locations, used when the matching flag is absent.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Paths {
    pub data: Option<PathBuf>,
    pub model: Option<PathBuf>,
    pub saliency: Option<PathBuf>,
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct RunConfig {
    pub synth: SynthConfig,
    pub model: ModelConfig,
    pub train: TrainSpec,
    pub attribution: AttributionSettings,
    pub paths: Paths,
    /// Prefix for report file names.
    pub report_prefix: String,
}

fn num<T: FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .trim()
        .parse()
        .map_err(|_| Error::InvalidConfig {
            field: key.into(),
            reason: format!("cannot parse {value:?}"),
        })
}

fn pair<T: FromStr + Copy>(key: &str, value: &str) -> Result<(T, T)> {
    let parts: Vec<T> = value.split(',').map(|p| num(key, p)).collect::<Result<_>>()?;
    match parts[..] {
        [a, b] => Ok((a, b)),
        _ => Err(Error::InvalidConfig {
            field: key.into(),
            reason: format!("expected two comma-separated values, got {value:?}"),
        }),
    }
}

fn unknown(section: &str, key: &str) -> Error {
    Error::InvalidConfig {
        field: format!("{section}.{key}"),
        reason: "unknown key".into(),
    }
}

fn fmt_pair<T: std::fmt::Display>((a, b): (T, T)) -> String {
    format!("{a},{b}")
}

impl RunConfig {
    /// Every `(section, key, default value)` in file order.
    pub fn default_entries() -> Vec<(&'static str, String, String)> {
        let c = RunConfig::default();
        let mut out = Vec::new();
        for section in SECTIONS {
            for (k, v) in c.section_entries(section) {
                out.push((section, k, v));
            }
        }
        out
    }

    fn section_entries(&self, section: &str) -> Vec<(String, String)> {
        let kv = |k: &str, v: String| (k.to_string(), v);
        let g = &self.synth.grid;
        let s = &self.synth;
        let path = |p: &Option<PathBuf>| p.as_ref().map_or(String::new(), |p| p.display().to_string());
        match section {
            "grid" => vec![
                kv("nlat", g.nlat.to_string()),
                kv("nlon", g.nlon.to_string()),
                kv("lat0", g.lat0.to_string()),
                kv("dlat", g.dlat.to_string()),
                kv("lon0", g.lon0.to_string()),
                kv("dlon", g.dlon.to_string()),
            ],
            "synth" => vec![
                kv("n_samples", s.n_samples.to_string()),
                kv("max_lead", s.max_lead.to_string()),
                kv("noise_level", s.noise_level.to_string()),
                kv("driver_label", s.driver_box.label.clone()),
                kv("driver_lat", fmt_pair(s.driver_box.lat)),
                kv("driver_lon", fmt_pair(s.driver_box.lon)),
                kv("driver_lag", s.driver_lag.to_string()),
                kv("hc_shift", s.hc_shift.to_string()),
                kv("ar_coeff", s.ar_coeff.to_string()),
                kv("driver_patterns", s.driver_patterns.to_string()),
                kv("remote_patterns", s.remote_patterns.to_string()),
                kv("coupling", s.coupling.to_string()),
                kv("quad_coeff", s.quad_coeff.to_string()),
            ],
            "model" => self
                .model
                .to_key_values()
                .into_iter()
                .filter(|(k, _)| MODEL_KEYS.contains(&k.as_str()))
                .collect(),
            "train" => self.train.to_key_values().into_iter().filter(|(k, _)| k != "seed").collect(),
            "attribution" => {
                let a = &self.attribution;
                vec![
                    kv("method", a.method.to_string()),
                    kv("channels", a.channels.to_string()),
                    kv("patch", fmt_pair(a.perturbation.patch)),
                    kv("stride", a.perturbation.stride.to_string()),
                    kv("fill", a.perturbation.fill.to_string()),
                    kv("threshold", a.threshold.to_string()),
                ]
            }
            "paths" => vec![
                kv("data", path(&self.paths.data)),
                kv("model", path(&self.paths.model)),
                kv("saliency", path(&self.paths.saliency)),
                kv("out", path(&self.paths.out)),
            ],
            "export" => vec![kv("report_prefix", self.report_prefix.clone())],
            _ => Vec::new(),
        }
    }

    /// All settings that shape a run, for hashing and reports.
    pub fn entries(&self) -> Vec<(String, String)> {
        SECTIONS
            .iter()
            .filter(|s| **s != "paths")
            .flat_map(|s| self.section_entries(s).into_iter().map(move |(k, v)| (format!("{s}.{k}"), v)))
            .collect()
    }

    fn set(&mut self, section: &str, key: &str, value: &str, base: &Path) -> Result<()> {
        let value = value.trim();
        let field = format!("{section}.{key}");
        let field = field.as_str();
        match (section, key) {
            ("grid", "nlat") => self.synth.grid.nlat = num(field, value)?,
            ("grid", "nlon") => self.synth.grid.nlon = num(field, value)?,
            ("grid", "lat0") => self.synth.grid.lat0 = num(field, value)?,
            ("grid", "dlat") => self.synth.grid.dlat = num(field, value)?,
            ("grid", "lon0") => self.synth.grid.lon0 = num(field, value)?,
            ("grid", "dlon") => self.synth.grid.dlon = num(field, value)?,
            ("synth", "n_samples") => self.synth.n_samples = num(field, value)?,
            ("synth", "max_lead") => self.synth.max_lead = num(field, value)?,
            ("synth", "noise_level") => self.synth.noise_level = num(field, value)?,
            ("synth", "driver_label") => self.synth.driver_box.label = value.to_string(),
            ("synth", "driver_lat") => self.synth.driver_box.lat = pair(field, value)?,
            ("synth", "driver_lon") => self.synth.driver_box.lon = pair(field, value)?,
            ("synth", "driver_lag") => self.synth.driver_lag = num(field, value)?,
            ("synth", "hc_shift") => self.synth.hc_shift = num(field, value)?,
            ("synth", "ar_coeff") => self.synth.ar_coeff = num(field, value)?,
            ("synth", "driver_patterns") => self.synth.driver_patterns = num(field, value)?,
            ("synth", "remote_patterns") => self.synth.remote_patterns = num(field, value)?,
            ("synth", "coupling") => self.synth.coupling = num(field, value)?,
            ("synth", "quad_coeff") => self.synth.quad_coeff = num(field, value)?,
            ("model", k) if MODEL_KEYS.contains(&k) => self.model.set(k, value).map_err(|e| prefix(e, section))?,
            ("train", k) if k != "seed" && TrainSpec::KEYS.contains(&k) => {
                self.train.set(k, value).map_err(|e| prefix(e, section))?
            }
            ("attribution", "method") => self.attribution.method = value.parse().map_err(|e| as_config(e, field))?,
            ("attribution", "channels") => self.attribution.channels = value.parse().map_err(|e| as_config(e, field))?,
            ("attribution", "patch") => self.attribution.perturbation.patch = pair(field, value)?,
            ("attribution", "stride") => self.attribution.perturbation.stride = num(field, value)?,
            ("attribution", "fill") => self.attribution.perturbation.fill = num(field, value)?,
            ("attribution", "threshold") => self.attribution.threshold = num(field, value)?,
            ("paths", k @ ("data" | "model" | "saliency" | "out")) => {
                let p = (!value.is_empty()).then(|| base.join(value));
                match k {
                    "data" => self.paths.data = p,
                    "model" => self.paths.model = p,
                    "saliency" => self.paths.saliency = p,
                    _ => self.paths.out = p,
                }
            }
            ("export", "report_prefix") => self.report_prefix = value.to_string(),
            _ => return Err(unknown(section, key)),
        }
        Ok(())
    }

    /// Parses config text. Relative paths are resolved against `base`.
    pub fn parse(text: &str, base: &Path) -> Result<Self> {
        let mut config = RunConfig::default();
        let mut section: Option<String> = None;
        for (n, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            if let Some(name) = line.strip_prefix('[').and_then(|l| l.strip_suffix(']')) {
                let name = name.trim();
                if !SECTIONS.contains(&name) {
                    return Err(Error::InvalidConfig {
                        field: name.to_string(),
                        reason: format!("unknown section on line {}", n + 1),
                    });
                }
                section = Some(name.to_string());
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| Error::InvalidConfig {
                field: line.to_string(),
                reason: format!("line {} is not key = value", n + 1),
            })?;
            let sec = section.as_deref().ok_or_else(|| Error::InvalidConfig {
                field: key.trim().to_string(),
                reason: "key outside any [section]".into(),
            })?;
            config.set(sec, key.trim(), value, base)?;
        }
        config.synth.validate().map_err(|e| match &e {
            Error::InvalidConfig { field, .. } if GRID_KEYS.contains(&field.as_str()) => prefix(e, "grid"),
            _ => prefix(e, "synth"),
        })?;
        config.model.grid = config.synth.grid.extents();
        config.model.validate().map_err(|e| prefix(e, "model"))?;
        config.train.validate().map_err(|e| prefix(e, "train"))?;
        Ok(config)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::Io {
            path: path.to_path_buf(),
            source: e,
        })?;
        let base = path.parent().unwrap_or(Path::new("."));
        RunConfig::parse(&text, base)
    }

    /// The config, rendered as a file that parses back to itself.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for section in SECTIONS {
            let _ = writeln!(out, "[{section}]");
            for (k, v) in self.section_entries(section) {
                let _ = writeln!(out, "{k} = {v}");
            }
            out.push('\n');
        }
        out
    }
}

fn prefix(e: Error, section: &str) -> Error {
    match e {
        Error::InvalidConfig { field, reason } if !field.contains('.') => Error::InvalidConfig {
            field: format!("{section}.{field}"),
            reason,
        },
        other => other,
    }
}

fn as_config(e: Error, field: &str) -> Error {
    Error::InvalidConfig {
        field: field.to_string(),
        reason: e.to_string(),
    }
}

/// Help text listing every section, key and default.
pub fn keys_help() -> String {
    let mut out = String::from("Configuration keys (section.key = default):\n");
    for (section, key, value) in RunConfig::default_entries() {
        let shown = if value.is_empty() { "<unset>".to_string() } else { value };
        let _ = writeln!(out, "  {section}.{key} = {shown}");
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn text_round_trip() {
        let mut c = RunConfig::default();
        c.synth.n_samples = 17;
        c.attribution.method = Method::GradCam;
        c.train.epochs = 3;
        let back = RunConfig::parse(&c.to_text(), Path::new(".")).unwrap();
        assert_eq!(back, c);
    }

    #[test]
    fn unknown_keys_and_sections_rejected() {
        let e = RunConfig::parse("[grid]\nnlatt = 3\n", Path::new(".")).unwrap_err();
        assert!(e.to_string().contains("grid.nlatt"), "{e}");
        assert!(RunConfig::parse("[gird]\n", Path::new(".")).is_err());
        assert!(RunConfig::parse("nlat = 3\n", Path::new(".")).is_err());
        assert!(RunConfig::parse("[train]\nseed = 3\n", Path::new(".")).is_err());
    }

    #[test]
    fn invalid_values_name_the_key() {
        let e = RunConfig::parse("[grid]\nnlat = 0\n", Path::new(".")).unwrap_err();
        assert!(e.to_string().contains("grid.nlat"), "{e}");
        let e = RunConfig::parse("[model]\nlead_months = 30\n", Path::new(".")).unwrap_err();
        assert!(e.to_string().contains("lead_months"), "{e}");
    }

    #[test]
    fn paths_are_relative_to_config() {
        let c = RunConfig::parse("[paths]\ndata = d/x.bin\n", Path::new("/etc/run")).unwrap();
        assert_eq!(c.paths.data, Some(PathBuf::from("/etc/run/d/x.bin")));
    }

    #[test]
    fn help_lists_every_key() {
        let help = keys_help();
        for (section, key, _) in RunConfig::default_entries() {
            assert!(help.contains(&format!("{section}.{key} = ")));
        }
        assert!(help.contains("train.learning_rate = 0.001"));
    }
}
