//! Run configuration: flat `key = value` text with dotted section keys.
//!
//! ```text
//! # comment
//! background.kind = synthetic
//! background.cells = 12
//! background.r0 = bump
//! background.r0.base = -6
//! flow.mode = normalized
//! flow.ops = laplacian/closed, schrodinger/closed/0.125
//! checks = prop4, prop5, sandwich
//! ```

use std::collections::BTreeMap;
use std::f64::consts::PI;
use std::path::{Path, PathBuf};

use crate::cr::build_nilmanifold;
use crate::error::{Error, Result};
use crate::flow::{FlowConfig, FlowMode};
use crate::geometry::{build_background, BackgroundGeometry, BackgroundKind, BackgroundSpec, CurvatureField};
use crate::spectral::{OperatorDescriptor, SpectralOptions};
use crate::verify::CHECK_IDS;

#[derive(Debug, Clone, PartialEq)]
pub enum InitialSpec {
    Constant(f64),
    GaussianBump {
        center: Option<Vec<f64>>,
        width: f64,
        amplitude: f64,
    },
    File(PathBuf),
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub background: BackgroundSpec,
    pub initial: InitialSpec,
    pub flow: FlowConfig,
    pub checks: Vec<String>,
    pub sandwich_tol: f64,
    pub out_dir: PathBuf,
    pub trace_name: String,
    pub report_name: String,
    pub plots: bool,
    pub seed: u64,
    pub deterministic: bool,
    pub threads: Option<usize>,
}

const KEYS: &[&str] = &[
    "background.kind",
    "background.n",
    "background.grid_dim",
    "background.cells",
    "background.side",
    "background.r0",
    "background.r0.value",
    "background.r0.base",
    "background.r0.amplitude",
    "background.r0.width",
    "background.r0.center",
    "initial.kind",
    "initial.value",
    "initial.center",
    "initial.width",
    "initial.amplitude",
    "initial.file",
    "flow.mode",
    "flow.t_end",
    "flow.cfl",
    "flow.sample_dt",
    "flow.convergence_tol",
    "flow.max_dt",
    "flow.ops",
    "flow.track_diameter",
    "spectral.tol",
    "checks",
    "checks.sandwich_tol",
    "output.dir",
    "output.trace",
    "output.report",
    "output.plots",
    "run.seed",
    "run.deterministic",
    "run.threads",
];

/// Parses `key = value` lines; `#` starts a comment.
pub fn parse_pairs(text: &str) -> Result<BTreeMap<String, String>> {
    let mut map = BTreeMap::new();
    for (lineno, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (key, value) = line
            .split_once('=')
            .ok_or_else(|| Error::Config(format!("line {}: expected `key = value`", lineno + 1)))?;
        let key = key.trim().to_string();
        if !KEYS.contains(&key.as_str()) {
            return Err(Error::Config(format!("line {}: unknown key `{key}`", lineno + 1)));
        }
        if map.insert(key.clone(), value.trim().to_string()).is_some() {
            return Err(Error::Config(format!("line {}: duplicate key `{key}`", lineno + 1)));
        }
    }
    Ok(map)
}

struct Lookup<'a>(&'a BTreeMap<String, String>);

impl Lookup<'_> {
    fn str(&self, key: &str) -> Option<&str> {
        self.0.get(key).map(String::as_str)
    }

    fn parse<T: std::str::FromStr>(&self, key: &str, default: T) -> Result<T> {
        match self.str(key) {
            None => Ok(default),
            Some(v) => v
                .parse()
                .map_err(|_| Error::Config(format!("cannot parse `{key}` value `{v}`"))),
        }
    }

    fn list_f64(&self, key: &str) -> Result<Option<Vec<f64>>> {
        match self.str(key) {
            None => Ok(None),
            Some(v) => v
                .split(',')
                .map(|x| {
                    x.trim()
                        .parse()
                        .map_err(|_| Error::Config(format!("cannot parse `{key}` entry `{x}`")))
                })
                .collect::<Result<Vec<f64>>>()
                .map(Some),
        }
    }
}

impl RunConfig {
    pub fn from_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
        Self::parse(&text, path.parent().unwrap_or(Path::new(".")))
    }

    /// Parses configuration text; relative file paths resolve against `base`.
    pub fn parse(text: &str, base: &Path) -> Result<Self> {
        let map = parse_pairs(text)?;
        let l = Lookup(&map);
        let kind_name = l.str("background.kind").unwrap_or("flat-torus");
        let kind = BackgroundKind::parse(kind_name)
            .ok_or_else(|| Error::Config(format!("unknown background.kind `{kind_name}`")))?;
        let default_n = if kind == BackgroundKind::Heisenberg { 1 } else { 3 };
        let default_side = if kind == BackgroundKind::Heisenberg { 1.0 } else { 2.0 * PI };
        let curvature = match l.str("background.r0").unwrap_or("zero") {
            "zero" => CurvatureField::Zero,
            "constant" => CurvatureField::Constant(l.parse("background.r0.value", 0.0)?),
            "bump" => CurvatureField::Bump {
                base: l.parse("background.r0.base", 0.0)?,
                amplitude: l.parse("background.r0.amplitude", 1.0)?,
                width: l.parse("background.r0.width", 1.0)?,
                center: l.list_f64("background.r0.center")?,
            },
            other => return Err(Error::Config(format!("unknown background.r0 `{other}`"))),
        };
        let background = BackgroundSpec {
            kind,
            n: l.parse("background.n", default_n)?,
            grid_dim: l.parse("background.grid_dim", 3)?,
            cells: l.parse("background.cells", 8)?,
            side: l.parse("background.side", default_side)?,
            curvature,
        };
        let initial = match l.str("initial.kind").unwrap_or("constant") {
            "constant" => InitialSpec::Constant(l.parse("initial.value", 1.0)?),
            "gaussian-bump" => InitialSpec::GaussianBump {
                center: l.list_f64("initial.center")?,
                width: l.parse("initial.width", 1.0)?,
                amplitude: l.parse("initial.amplitude", 0.5)?,
            },
            "file" => {
                let f = l
                    .str("initial.file")
                    .ok_or_else(|| Error::Config("initial.kind = file needs initial.file".into()))?;
                let p = base.join(f);
                if !p.exists() {
                    return Err(Error::Config(format!("initial.file {} does not exist", p.display())));
                }
                InitialSpec::File(p)
            }
            other => return Err(Error::Config(format!("unknown initial.kind `{other}`"))),
        };
        let mode_name = l.str("flow.mode").unwrap_or("normalized");
        let mode = FlowMode::parse(mode_name)
            .ok_or_else(|| Error::Config(format!("unknown flow.mode `{mode_name}`")))?;
        let t_end = l.parse("flow.t_end", 1.0)?;
        let mut flow = FlowConfig::new(mode, t_end);
        flow.cfl = l.parse("flow.cfl", 0.5)?;
        flow.sample_dt = l.parse("flow.sample_dt", t_end / 10.0)?;
        flow.convergence_tol = l.parse("flow.convergence_tol", 1e-7)?;
        flow.max_dt = match l.str("flow.max_dt") {
            None => None,
            Some(_) => Some(l.parse("flow.max_dt", 0.0)?),
        };
        flow.track_diameter = l.parse("flow.track_diameter", false)?;
        if let Some(ops) = l.str("flow.ops") {
            for item in ops.split(',').map(str::trim).filter(|s| !s.is_empty()) {
                flow.tracked_ops.push(
                    OperatorDescriptor::parse(item)
                        .ok_or_else(|| Error::Config(format!("cannot parse operator `{item}`")))?,
                );
            }
        }
        let seed = l.parse("run.seed", 0x5eed_u64)?;
        flow.spectral = SpectralOptions {
            tol: l.parse("spectral.tol", 1e-9)?,
            seed,
            ..SpectralOptions::default()
        };
        let deterministic = l.parse("run.deterministic", false)?;
        flow.deterministic = deterministic;
        flow.validate()?;
        let checks: Vec<String> = l
            .str("checks")
            .unwrap_or("")
            .split(',')
            .map(str::trim)
            .filter(|s| !s.is_empty())
            .map(String::from)
            .collect();
        if let Some(bad) = checks.iter().find(|c| !CHECK_IDS.contains(&c.as_str())) {
            return Err(Error::Config(format!("unknown check id `{bad}`")));
        }
        let threads: usize = l.parse("run.threads", 0)?;
        Ok(Self {
            background,
            initial,
            flow,
            checks,
            sandwich_tol: l.parse("checks.sandwich_tol", 1e-6)?,
            out_dir: base.join(l.str("output.dir").unwrap_or("out")),
            trace_name: l.str("output.trace").unwrap_or("trace.csv").to_string(),
            report_name: l.str("output.report").unwrap_or("report.txt").to_string(),
            plots: l.parse("output.plots", true)?,
            seed,
            deterministic,
            threads: (threads > 0).then_some(threads),
        })
    }

    pub fn build_background(&self) -> Result<BackgroundGeometry> {
        if self.background.kind == BackgroundKind::Heisenberg {
            Ok(build_nilmanifold(self.background.cells, self.background.n, &self.background.curvature)?
                .into_geometry())
        } else {
            build_background(&self.background)
        }
    }

    pub fn initial_factor(&self, bg: &BackgroundGeometry) -> Result<Vec<f64>> {
        let u = match &self.initial {
            InitialSpec::Constant(c) => vec![*c; bg.num_vertices()],
            InitialSpec::GaussianBump { center, width, amplitude } => {
                if !(*width > 0.0) {
                    return Err(Error::Config("initial.width must be positive".into()));
                }
                bg.bump_profile(center.as_deref(), *width, *amplitude)
            }
            InitialSpec::File(p) => {
                let text = std::fs::read_to_string(p)?;
                text.split_whitespace()
                    .map(|x| {
                        x.parse()
                            .map_err(|_| Error::Config(format!("bad value `{x}` in {}", p.display())))
                    })
                    .collect::<Result<Vec<f64>>>()?
            }
        };
        if u.len() != bg.num_vertices() {
            return Err(Error::Config(format!(
                "initial factor has {} values, background has {} vertices",
                u.len(),
                bg.num_vertices()
            )));
        }
        if let Some(x) = u.iter().find(|x| !(**x > 0.0 && x.is_finite())) {
            return Err(Error::Config(format!("initial factor must be positive, found {x}")));
        }
        Ok(u)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_full_config() {
        let text = "\
background.kind = synthetic
background.cells = 6
background.r0 = bump   # trailing comment
background.r0.base = -6
background.r0.amplitude = 2
flow.mode = normalized
flow.t_end = 3
flow.ops = laplacian/closed, schrodinger/closed/0.125
checks = prop4, sandwich
run.seed = 7
";
        let cfg = RunConfig::parse(text, Path::new("/tmp")).unwrap();
        assert_eq!(cfg.background.cells, 6);
        assert_eq!(cfg.flow.tracked_ops.len(), 2);
        assert_eq!(cfg.flow.spectral.seed, 7);
        assert_eq!(cfg.checks, vec!["prop4", "sandwich"]);
        assert!((cfg.flow.sample_dt - 0.3).abs() < 1e-15);
        let bg = cfg.build_background().unwrap();
        assert_eq!(bg.num_vertices(), 216);
    }

    #[test]
    fn rejects_bad_input() {
        for text in [
            "flow.t_end = 0",
            "flow.unknown = 1",
            "background.kind = sphere",
            "checks = prop99",
            "flow.ops = laplacian/periodic",
            "flow.cfl = 2",
            "no equals sign",
            "flow.t_end = 1\nflow.t_end = 2",
        ] {
            assert!(matches!(RunConfig::parse(text, Path::new(".")), Err(Error::Config(_))), "{text}");
        }
    }

    #[test]
    fn heisenberg_defaults() {
        let cfg = RunConfig::parse("background.kind = heisenberg\nbackground.cells = 4", Path::new(".")).unwrap();
        let bg = cfg.build_background().unwrap();
        assert!(bg.law().is_cr());
        assert_eq!(bg.num_vertices(), 64);
    }
}
