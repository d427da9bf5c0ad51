//! Plain-text experiment configuration.
//!
//! ```text
//! # comment
//! [section]
//! key = value
//! ```
//!
//! Sections and keys are fixed; anything unknown, duplicated or malformed is an
//! error naming `section.key` and the line. [`ExperimentConfig::to_text`] emits the
//! canonical form, which parses back to the same config.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::PathBuf;

use dtmc::noise::parse_law;
use dtmc::scheme::Grid;
use dtmc::semigroup::TestFunction;
use dtmc::vectorfield::Profile;
use serde::Serialize;

use crate::error::{HarnessError, Result};

pub const EXPERIMENTS: &[&str] = &["simulate", "hormander-scan", "ibp-check", "kinetic-tv", "density", "iterated-clt", "localization"];
pub const SCHEMES: &[&str] = &["random-walk", "kinetic", "iterated", "quadratic"];

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SchemeSpec {
    pub id: String,
    /// Kinetic `b(x¹, t)`, in profile syntax.
    pub drift: String,
    /// Kinetic `σ(x¹, t)`.
    pub diffusion: String,
    /// Random-walk dimension.
    pub dim: usize,
    /// Iterated-sum depth `h`.
    pub levels: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct LocalizationSpec {
    /// `None` means the formula thresholds.
    pub eta1: Option<f64>,
    pub eta2: Option<f64>,
    pub frak_d: f64,
    pub frak_p: f64,
    pub hoeffding_steps: usize,
    pub hoeffding_paths: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct IbpSpec {
    pub tests: Vec<String>,
    pub dual: String,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Axis {
    pub lo: f64,
    pub hi: f64,
    pub count: usize,
}

impl Axis {
    pub fn points(&self) -> Vec<f64> {
        if self.count == 1 {
            return vec![self.lo];
        }
        (0..self.count).map(|i| self.lo + (self.hi - self.lo) * i as f64 / (self.count - 1) as f64).collect()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct HormanderSpec {
    pub axes: Vec<Axis>,
    pub t: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct TvSpec {
    pub reference_factor: usize,
    pub reference_law: String,
    pub max_nodes: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct DensitySpec {
    pub axis: Axis,
    pub beta: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ExperimentConfig {
    pub experiment: String,
    pub scheme: SchemeSpec,
    pub law: String,
    pub x0: Vec<f64>,
    pub horizon: f64,
    pub deltas: Vec<f64>,
    pub theta: f64,
    pub l: usize,
    pub n_paths: usize,
    pub seed: u64,
    pub out: PathBuf,
    pub threads: usize,
    pub max_memory_mb: u64,
    pub record: usize,
    pub localization: LocalizationSpec,
    pub ibp: IbpSpec,
    pub hormander: HormanderSpec,
    pub tv: TvSpec,
    pub density: DensitySpec,
}

struct Entry {
    value: String,
    line: usize,
    used: bool,
}

struct Raw {
    sections: BTreeMap<String, BTreeMap<String, Entry>>,
}

const SECTIONS: &[(&str, &[&str])] = &[
    ("experiment", &["id"]),
    ("scheme", &["id", "drift", "diffusion", "dim", "levels"]),
    ("law", &["id"]),
    ("run", &["x0", "T", "deltas", "theta", "L", "n_paths", "seed", "out", "threads", "max_memory_mb", "record"]),
    ("localization", &["eta1", "eta2", "frak_d", "frak_p", "hoeffding_steps", "hoeffding_paths"]),
    ("ibp", &["tests", "dual"]),
    ("hormander", &["axes", "t"]),
    ("tv", &["reference_factor", "reference_law", "max_nodes"]),
    ("density", &["axis", "beta"]),
];

pub const MAX_CONFIG_BYTES: usize = 1 << 20;

fn err(path: &str, line: usize, msg: impl Into<String>) -> HarnessError {
    HarnessError::Config { path: path.to_string(), line, msg: msg.into() }
}

impl Raw {
    fn parse(text: &str) -> Result<Self> {
        if text.len() > MAX_CONFIG_BYTES {
            return Err(err("", 0, "config larger than 1 MiB"));
        }
        let mut sections: BTreeMap<String, BTreeMap<String, Entry>> = BTreeMap::new();
        let mut current: Option<String> = None;
        for (i, raw) in text.lines().enumerate() {
            let line = i + 1;
            let s = raw.split('#').next().unwrap_or("").trim();
            if s.is_empty() {
                continue;
            }
            if let Some(rest) = s.strip_prefix('[') {
                let name = rest.strip_suffix(']').ok_or_else(|| err("", line, "unterminated section header"))?.trim();
                if !SECTIONS.iter().any(|(n, _)| *n == name) {
                    return Err(err(name, line, "unknown section"));
                }
                if sections.contains_key(name) {
                    return Err(err(name, line, "duplicate section"));
                }
                sections.insert(name.to_string(), BTreeMap::new());
                current = Some(name.to_string());
                continue;
            }
            let (k, v) = s.split_once('=').ok_or_else(|| err("", line, "expected `key = value`"))?;
            let (k, v) = (k.trim(), v.trim());
            let sec = current.as_ref().ok_or_else(|| err(k, line, "key outside any section"))?;
            let allowed = SECTIONS.iter().find(|(n, _)| n == sec).map(|(_, ks)| *ks).unwrap_or(&[]);
            let path = format!("{sec}.{k}");
            if !allowed.contains(&k) {
                return Err(err(&path, line, "unknown key"));
            }
            let map = sections.get_mut(sec).expect("section registered");
            if map.contains_key(k) {
                return Err(err(&path, line, "duplicate key"));
            }
            map.insert(k.to_string(), Entry { value: v.to_string(), line, used: false });
        }
        Ok(Self { sections })
    }

    fn take(&mut self, sec: &str, key: &str) -> Option<(String, usize)> {
        let e = self.sections.get_mut(sec)?.get_mut(key)?;
        e.used = true;
        Some((e.value.clone(), e.line))
    }

    fn get<T>(&mut self, sec: &str, key: &str, default: Option<T>, conv: impl Fn(&str) -> std::result::Result<T, String>) -> Result<T> {
        let path = format!("{sec}.{key}");
        match self.take(sec, key) {
            Some((v, line)) => conv(&v).map_err(|m| err(&path, line, m)),
            None => default.ok_or_else(|| err(&path, 0, "missing required key")),
        }
    }

    fn line_of(&self, sec: &str, key: &str) -> usize {
        self.sections.get(sec).and_then(|m| m.get(key)).map_or(0, |e| e.line)
    }
}

fn num(s: &str) -> std::result::Result<f64, String> {
    let s = s.trim();
    let v = if let Some(e) = s.strip_prefix("2^") {
        let k: i32 = e.trim().parse().map_err(|_| format!("bad exponent in `{s}`"))?;
        if k.abs() > 1000 {
            return Err(format!("exponent out of range in `{s}`"));
        }
        2f64.powi(k)
    } else {
        s.parse::<f64>().map_err(|_| format!("`{s}` is not a number"))?
    };
    if v.is_finite() {
        Ok(v)
    } else {
        Err(format!("`{s}` is not finite"))
    }
}

fn list(s: &str) -> std::result::Result<Vec<f64>, String> {
    s.split(',').map(num).collect()
}

fn count(s: &str) -> std::result::Result<usize, String> {
    s.trim().parse::<usize>().map_err(|_| format!("`{s}` is not a non-negative integer"))
}

fn auto_or_num(s: &str) -> std::result::Result<Option<f64>, String> {
    if s.trim() == "auto" {
        Ok(None)
    } else {
        num(s).map(Some)
    }
}

fn axis(s: &str) -> std::result::Result<Axis, String> {
    let v = list(s)?;
    if v.len() != 3 || v[2] < 1.0 || v[2].fract() != 0.0 || v[2] > 1e7 {
        return Err(format!("axis must be `lo, hi, count`, got `{s}`"));
    }
    if v[1] < v[0] {
        return Err("axis has hi < lo".into());
    }
    Ok(Axis { lo: v[0], hi: v[1], count: v[2] as usize })
}

fn fmt_f(v: f64) -> String {
    format!("{v:?}")
}

fn fmt_list(v: &[f64]) -> String {
    v.iter().map(|x| fmt_f(*x)).collect::<Vec<_>>().join(", ")
}

fn fmt_axis(a: &Axis) -> String {
    format!("{}, {}, {}", fmt_f(a.lo), fmt_f(a.hi), a.count)
}

impl ExperimentConfig {
    pub fn parse(text: &str) -> Result<Self> {
        let mut raw = Raw::parse(text)?;
        let experiment = raw.get("experiment", "id", None, |s| Ok(s.to_string()))?;
        if !EXPERIMENTS.contains(&experiment.as_str()) {
            return Err(err("experiment.id", raw.line_of("experiment", "id"), format!("unknown experiment `{experiment}`; expected one of {EXPERIMENTS:?}")));
        }
        let scheme = SchemeSpec {
            id: raw.get("scheme", "id", None, |s| Ok(s.to_string()))?,
            drift: raw.get("scheme", "drift", Some("const:0".into()), |s| Profile::parse(s).map(|_| s.to_string()).map_err(|e| e.to_string()))?,
            diffusion: raw.get("scheme", "diffusion", Some("const:1".into()), |s| Profile::parse(s).map(|_| s.to_string()).map_err(|e| e.to_string()))?,
            dim: raw.get("scheme", "dim", Some(1), count)?,
            levels: raw.get("scheme", "levels", Some(1), count)?,
        };
        let law = raw.get("law", "id", None, |s| Ok(s.to_string()))?;
        let x0 = raw.get("run", "x0", None, list)?;
        let horizon = raw.get("run", "T", None, num)?;
        let deltas = raw.get("run", "deltas", None, list)?;
        let theta = raw.get("run", "theta", Some(0.25), num)?;
        let l = raw.get("run", "L", Some(1), count)?;
        let n_paths = raw.get("run", "n_paths", Some(10_000), count)?;
        let seed = raw.get("run", "seed", Some(0), |s| s.trim().parse::<u64>().map_err(|_| format!("`{s}` is not a u64")))?;
        let out = raw.get("run", "out", Some(PathBuf::from("out")), |s| Ok(PathBuf::from(s)))?;
        let threads = raw.get("run", "threads", Some(0), count)?;
        let max_memory_mb = raw.get("run", "max_memory_mb", Some(4096), |s| s.trim().parse::<u64>().map_err(|_| format!("`{s}` is not a u64")))?;
        let record = raw.get("run", "record", Some(1), count)?;
        let localization = LocalizationSpec {
            eta1: raw.get("localization", "eta1", Some(None), auto_or_num)?,
            eta2: raw.get("localization", "eta2", Some(None), auto_or_num)?,
            frak_d: raw.get("localization", "frak_d", Some(1.0), num)?,
            frak_p: raw.get("localization", "frak_p", Some(0.0), num)?,
            hoeffding_steps: raw.get("localization", "hoeffding_steps", Some(16), count)?,
            hoeffding_paths: raw.get("localization", "hoeffding_paths", Some(100_000), count)?,
        };
        let ibp = IbpSpec {
            tests: raw.get("ibp", "tests", Some(Vec::new()), |s| {
                s.split('|')
                    .map(str::trim)
                    .filter(|t| !t.is_empty())
                    .map(|t| TestFunction::parse(t).map(|_| t.to_string()).map_err(|e| e.to_string()))
                    .collect()
            })?,
            dual: raw.get("ibp", "dual", Some("sin:0,1".into()), |s| TestFunction::parse(s).map(|_| s.trim().to_string()).map_err(|e| e.to_string()))?,
        };
        let hormander = HormanderSpec {
            axes: raw.get("hormander", "axes", Some(Vec::new()), |s| s.split('|').filter(|a| !a.trim().is_empty()).map(axis).collect())?,
            t: raw.get("hormander", "t", Some(0.0), num)?,
        };
        let tv = TvSpec {
            reference_factor: raw.get("tv", "reference_factor", Some(8), count)?,
            reference_law: raw.get("tv", "reference_law", Some("gaussian".into()), |s| Ok(s.to_string()))?,
            max_nodes: raw.get("tv", "max_nodes", Some(1 << 24), count)?,
        };
        let density = DensitySpec {
            axis: raw.get("density", "axis", Some(Axis { lo: -3.0, hi: 3.0, count: 121 }), axis)?,
            beta: raw.get("density", "beta", Some(1), count)?,
        };
        // Every key was consumed by a typed reader above; an unread key would be a bug here.
        debug_assert!(raw.sections.values().all(|m| m.values().all(|e| e.used)));
        let cfg = Self {
            experiment,
            scheme,
            law,
            x0,
            horizon,
            deltas,
            theta,
            l,
            n_paths,
            seed,
            out,
            threads,
            max_memory_mb,
            record,
            localization,
            ibp,
            hormander,
            tv,
            density,
        };
        cfg.validate(&raw)?;
        Ok(cfg)
    }

    fn validate(&self, raw: &Raw) -> Result<()> {
        let at = |sec: &str, key: &str| raw.line_of(sec, key);
        if !SCHEMES.contains(&self.scheme.id.as_str()) {
            return Err(err("scheme.id", at("scheme", "id"), format!("unknown scheme `{}`; expected one of {SCHEMES:?}", self.scheme.id)));
        }
        if self.scheme.dim == 0 || self.scheme.dim > 16 {
            return Err(err("scheme.dim", at("scheme", "dim"), "must lie in 1..=16"));
        }
        if self.scheme.levels > 8 {
            return Err(err("scheme.levels", at("scheme", "levels"), "must be at most 8"));
        }
        let (d, n) = self.dims();
        if self.x0.len() != d {
            return Err(err("run.x0", at("run", "x0"), format!("expected {d} coordinates, got {}", self.x0.len())));
        }
        parse_law(&self.law, n).map_err(|e| err("law.id", at("law", "id"), e.to_string()))?;
        parse_law(&self.tv.reference_law, n).map_err(|e| err("tv.reference_law", at("tv", "reference_law"), e.to_string()))?;
        if !(self.horizon > 0.0) {
            return Err(err("run.T", at("run", "T"), "must be positive"));
        }
        if self.deltas.is_empty() {
            return Err(err("run.deltas", at("run", "deltas"), "needs at least one step size"));
        }
        for &delta in &self.deltas {
            Grid::new(delta, self.horizon).map_err(|e| err("run.deltas", at("run", "deltas"), e.to_string()))?;
            if self.horizon / delta > 1e9 {
                return Err(err("run.deltas", at("run", "deltas"), format!("δ = {delta} needs more than 1e9 steps")));
            }
        }
        if !(self.theta > 0.0) {
            return Err(err("run.theta", at("run", "theta"), "must be positive"));
        }
        if self.l > 6 {
            return Err(err("run.L", at("run", "L"), "bracket order above 6 is not supported"));
        }
        if self.n_paths == 0 {
            return Err(err("run.n_paths", at("run", "n_paths"), "must be positive"));
        }
        if self.threads > 1024 {
            return Err(err("run.threads", at("run", "threads"), "at most 1024"));
        }
        for (key, v) in [("eta1", self.localization.eta1), ("eta2", self.localization.eta2)] {
            if let Some(v) = v {
                if !(v > 1.0) {
                    return Err(err(&format!("localization.{key}"), at("localization", key), "must exceed 1"));
                }
            }
        }
        if self.localization.eta1.is_some() != self.localization.eta2.is_some() {
            return Err(err("localization.eta1", at("localization", "eta1"), "set both thresholds or neither"));
        }
        if !(self.localization.frak_d > 0.0 && self.localization.frak_p >= 0.0) {
            return Err(err("localization.frak_d", at("localization", "frak_d"), "need frak_d > 0 and frak_p ≥ 0"));
        }
        if self.tv.reference_factor == 0 {
            return Err(err("tv.reference_factor", at("tv", "reference_factor"), "must be positive"));
        }
        if self.experiment == "hormander-scan" && self.hormander.axes.len() != d {
            return Err(err("hormander.axes", at("hormander", "axes"), format!("expected {d} axes, got {}", self.hormander.axes.len())));
        }
        if self.experiment == "ibp-check" && self.ibp.tests.is_empty() {
            return Err(err("ibp.tests", at("ibp", "tests"), "needs at least one test function"));
        }
        for t in self.ibp.tests.iter().chain(std::iter::once(&self.ibp.dual)) {
            if let Some(len) = test_dim(t) {
                if len != d {
                    return Err(err("ibp.tests", at("ibp", "tests"), format!("`{t}` has {len} coordinates, state has {d}")));
                }
            }
        }
        if self.density.beta > 4 {
            return Err(err("density.beta", at("density", "beta"), "derivative order at most 4"));
        }
        Ok(())
    }

    /// State and noise dimensions of the configured scheme.
    pub fn dims(&self) -> (usize, usize) {
        match self.scheme.id.as_str() {
            "random-walk" => (self.scheme.dim, self.scheme.dim),
            "kinetic" => (2, 1),
            "iterated" => (self.scheme.levels + 1, 1),
            _ => (1, 1),
        }
    }

    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let l = &self.localization;
        let opt = |v: Option<f64>| v.map_or("auto".to_string(), fmt_f);
        let _ = writeln!(s, "[experiment]\nid = {}\n", self.experiment);
        let _ = writeln!(
            s,
            "[scheme]\nid = {}\ndrift = {}\ndiffusion = {}\ndim = {}\nlevels = {}\n",
            self.scheme.id, self.scheme.drift, self.scheme.diffusion, self.scheme.dim, self.scheme.levels
        );
        let _ = writeln!(s, "[law]\nid = {}\n", self.law);
        let _ = writeln!(
            s,
            "[run]\nx0 = {}\nT = {}\ndeltas = {}\ntheta = {}\nL = {}\nn_paths = {}\nseed = {}\nout = {}\nthreads = {}\nmax_memory_mb = {}\nrecord = {}\n",
            fmt_list(&self.x0),
            fmt_f(self.horizon),
            fmt_list(&self.deltas),
            fmt_f(self.theta),
            self.l,
            self.n_paths,
            self.seed,
            self.out.display(),
            self.threads,
            self.max_memory_mb,
            self.record
        );
        let _ = writeln!(
            s,
            "[localization]\neta1 = {}\neta2 = {}\nfrak_d = {}\nfrak_p = {}\nhoeffding_steps = {}\nhoeffding_paths = {}\n",
            opt(l.eta1),
            opt(l.eta2),
            fmt_f(l.frak_d),
            fmt_f(l.frak_p),
            l.hoeffding_steps,
            l.hoeffding_paths
        );
        let _ = writeln!(s, "[ibp]\ntests = {}\ndual = {}\n", self.ibp.tests.join(" | "), self.ibp.dual);
        let axes: Vec<String> = self.hormander.axes.iter().map(fmt_axis).collect();
        let _ = writeln!(s, "[hormander]\naxes = {}\nt = {}\n", axes.join(" | "), fmt_f(self.hormander.t));
        let _ = writeln!(
            s,
            "[tv]\nreference_factor = {}\nreference_law = {}\nmax_nodes = {}\n",
            self.tv.reference_factor, self.tv.reference_law, self.tv.max_nodes
        );
        let _ = write!(s, "[density]\naxis = {}\nbeta = {}\n", fmt_axis(&self.density.axis), self.density.beta);
        s
    }

    /// Builtin configuration for an experiment id.
    pub fn builtin(id: &str) -> Result<Self> {
        let text = match id {
            "simulate" => include_str!("../configs/simulate.conf"),
            "hormander-scan" => include_str!("../configs/hormander-scan.conf"),
            "ibp-check" => include_str!("../configs/ibp-check.conf"),
            "kinetic-tv" => include_str!("../configs/kinetic-tv.conf"),
            "density" => include_str!("../configs/density.conf"),
            "iterated-clt" => include_str!("../configs/iterated-clt.conf"),
            "localization" => include_str!("../configs/localization.conf"),
            _ => return Err(err("experiment.id", 0, format!("no builtin config for `{id}`"))),
        };
        Self::parse(text)
    }
}

/// Coordinate count implied by a test-function string, when it names a point.
fn test_dim(t: &str) -> Option<usize> {
    match TestFunction::parse(t).ok()? {
        TestFunction::Gauss { center, .. } | TestFunction::Bump { center, .. } => Some(center.len()),
        _ => None,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = "[experiment]\nid = simulate\n[scheme]\nid = random-walk\n[law]\nid = gaussian\n[run]\nx0 = 0\nT = 1\ndeltas = 2^-4\n";

    #[test]
    fn minimal_config_gets_defaults() {
        let c = ExperimentConfig::parse(MINIMAL).unwrap();
        assert_eq!(c.deltas, vec![0.0625]);
        assert_eq!(c.n_paths, 10_000);
        assert_eq!(c.tv.reference_factor, 8);
        assert_eq!(c.localization.eta1, None);
    }

    #[test]
    fn canonical_text_round_trips() {
        for id in EXPERIMENTS {
            let c = ExperimentConfig::builtin(id).unwrap();
            assert_eq!(c.experiment, *id);
            let again = ExperimentConfig::parse(&c.to_text()).unwrap();
            assert_eq!(again, c, "{id}");
        }
    }

    fn path_of(text: &str) -> (String, usize) {
        match ExperimentConfig::parse(text) {
            Err(HarnessError::Config { path, line, .. }) => (path, line),
            other => panic!("expected config error, got {other:?}"),
        }
    }

    #[test]
    fn errors_carry_field_paths() {
        assert_eq!(path_of(&format!("{MINIMAL}bogus = 1\n")), ("run.bogus".into(), 11));
        assert_eq!(path_of(&MINIMAL.replace("T = 1", "T = 0.3")), ("run.deltas".into(), 10));
        assert_eq!(path_of(&MINIMAL.replace("x0 = 0", "x0 = 0, 1")), ("run.x0".into(), 8));
        assert_eq!(path_of(&MINIMAL.replace("gaussian", "cauchy")), ("law.id".into(), 6));
        assert_eq!(path_of(&format!("{MINIMAL}[tv]\n[tv]\n")).0, "tv");
        assert_eq!(path_of(&format!("{MINIMAL}[extra]\n")).0, "extra");
        assert_eq!(path_of(&MINIMAL.replace("deltas = 2^-4", "deltas = 2^-4\ndeltas = 2^-5")).0, "run.deltas");
        assert_eq!(path_of("x = 1\n").0, "x");
        assert_eq!(path_of(&MINIMAL.replace("[run]\n", "")).0, "law.x0");
        assert_eq!(path_of(&MINIMAL.replace("x0 = 0\n", "")).0, "run.x0");
        assert_eq!(path_of(&MINIMAL.replace("T = 1", "T = nan")).0, "run.T");
    }

    #[test]
    fn dyadic_and_decimal_numbers() {
        assert_eq!(num("2^-3").unwrap(), 0.125);
        assert_eq!(num(" 0.5 ").unwrap(), 0.5);
        assert!(num("2^x").is_err());
        assert!(num("inf").is_err());
        assert!(num("2^-5000").is_err());
    }
}
