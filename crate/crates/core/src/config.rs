//! Line-oriented `key = value` run configuration.
//!
//! Blank lines and text after `#` are ignored. Every key must be known,
//! appear at most once and parse to the expected type; violations are
//! reported as [`Error::Config`] with the offending line and key.

use std::collections::BTreeMap;
use std::path::Path;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::grid::{Field, GridSpec};
use crate::hele_shaw::{FrontOptions, LimitOptions, SweepOrder};
use crate::model::{Barenblatt, GrowthLaw, InitialData, ModelParams, Potential, PotentialKind};
use crate::pme::{ReactionTreatment, SolverConfig};
use crate::sweep::{well_prepared_patch, Reference, Scenario, SweepConfig};

/// Known keys and their defaults. `None` marks keys without a default.
const KEYS: &[(&str, Option<&str>)] = &[
    ("dim", Some("1")),
    ("cells", None),
    ("extent", None),
    ("gamma", None),
    ("horizon", None),
    ("n_max", None),
    ("cfl_safety", Some("0.45")),
    ("max_dt", Some("1.0")),
    ("reaction", Some("explicit")),
    ("snapshots", Some("50")),
    ("log_stride", Some("100")),
    ("output.dir", Some("out")),
    ("barrier.radius", None),
    ("growth.kind", Some("linear")),
    ("growth.alpha", Some("1.0")),
    ("growth.p_max", Some("1.0")),
    ("growth.nodes", None),
    ("potential.kind", Some("zero")),
    ("potential.lambda", Some("1.0")),
    ("potential.amplitude", Some("1.0")),
    ("potential.width", Some("0.5")),
    ("potential.center", Some("0, 0")),
    ("potential.slope", Some("0, 0")),
    ("init.kind", Some("patch")),
    ("init.radius", Some("1.0")),
    ("init.height", None),
    ("init.width", Some("0.1")),
    ("init.cutoff", Some("1e-12")),
    ("init.t0", Some("0.1")),
    ("init.constant", None),
    ("front.left", None),
    ("front.right", None),
    ("front.mesh", Some("2000")),
    ("front.dt", Some("0.001")),
    ("front.heun", Some("true")),
    ("front.min_width", Some("1e-6")),
    ("limit.dt", None),
    ("limit.tolerance", Some("1e-10")),
    ("limit.ordering", Some("forward")),
    ("limit.max_sweeps", Some("10000")),
    ("sweep.scenario", None),
    ("sweep.ladder", Some("5, 10, 20, 40, 80")),
    ("sweep.reference", None),
    ("sweep.threads", None),
];

const REQUIRED: &[&str] = &["cells", "extent", "horizon"];

#[derive(Debug, Clone, PartialEq)]
struct Entry {
    line: usize,
    value: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Config {
    entries: BTreeMap<String, Entry>,
}

fn config_error(line: usize, key: &str, message: impl Into<String>) -> Error {
    Error::Config {
        line,
        key: key.to_string(),
        message: message.into(),
    }
}

fn default_of(key: &str) -> Option<&'static str> {
    KEYS.iter().find(|(k, _)| *k == key).and_then(|(_, d)| *d)
}

impl FromStr for Config {
    type Err = Error;

    fn from_str(text: &str) -> Result<Self> {
        let mut entries = BTreeMap::new();
        for (i, raw) in text.lines().enumerate() {
            let line = i + 1;
            let body = raw.split('#').next().unwrap_or("").trim();
            if body.is_empty() {
                continue;
            }
            let Some((key, value)) = body.split_once('=') else {
                return Err(config_error(line, body, "expected `key = value`"));
            };
            let key = key.trim();
            let value = value.trim();
            if key.is_empty() {
                return Err(config_error(line, key, "empty key"));
            }
            if !KEYS.iter().any(|(k, _)| *k == key) {
                return Err(config_error(line, key, "unknown key"));
            }
            if value.is_empty() {
                return Err(config_error(line, key, "missing value"));
            }
            if let Some(prev) = entries.get(key) {
                let prev: &Entry = prev;
                return Err(config_error(line, key, format!("duplicate key, first set on line {}", prev.line)));
            }
            entries.insert(key.to_string(), Entry { line, value: value.to_string() });
        }
        for key in REQUIRED {
            if !entries.contains_key(*key) {
                return Err(config_error(0, key, "required key is missing"));
            }
        }
        let cfg = Config { entries };
        cfg.check_types()?;
        Ok(cfg)
    }
}

impl Config {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| config_error(0, "", format!("{}: {e}", path.display())))?;
        text.parse()
    }

    /// Resolved configuration: every explicit entry plus every default.
    pub fn echo(&self) -> BTreeMap<String, String> {
        let mut out: BTreeMap<String, String> = KEYS
            .iter()
            .filter_map(|(k, d)| d.map(|d| (k.to_string(), d.to_string())))
            .collect();
        for (k, e) in &self.entries {
            out.insert(k.clone(), e.value.clone());
        }
        out
    }

    pub fn contains(&self, key: &str) -> bool {
        self.entries.contains_key(key)
    }

    fn line(&self, key: &str) -> usize {
        self.entries.get(key).map_or(0, |e| e.line)
    }

    fn raw(&self, key: &str) -> Option<&str> {
        self.entries.get(key).map(|e| e.value.as_str()).or_else(|| default_of(key))
    }

    fn parse<T: FromStr>(&self, key: &str, what: &str) -> Result<Option<T>> {
        match self.raw(key) {
            None => Ok(None),
            Some(v) => v
                .parse()
                .map(Some)
                .map_err(|_| config_error(self.line(key), key, format!("expected {what}, got `{v}`"))),
        }
    }

    fn require<T: FromStr>(&self, key: &str, what: &str) -> Result<T> {
        self.parse(key, what)?
            .ok_or_else(|| config_error(0, key, "required key is missing"))
    }

    fn real(&self, key: &str) -> Result<Option<f64>> {
        let v: Option<f64> = self.parse(key, "a real number")?;
        match v {
            Some(x) if !x.is_finite() => Err(config_error(self.line(key), key, "value must be finite")),
            _ => Ok(v),
        }
    }

    fn req_real(&self, key: &str) -> Result<f64> {
        self.real(key)?.ok_or_else(|| config_error(0, key, "required key is missing"))
    }

    fn list(&self, key: &str) -> Result<Option<Vec<f64>>> {
        let Some(v) = self.raw(key) else { return Ok(None) };
        v.split(',')
            .map(|s| s.trim().parse::<f64>())
            .collect::<std::result::Result<Vec<_>, _>>()
            .map(Some)
            .map_err(|_| config_error(self.line(key), key, format!("expected a comma-separated list of reals, got `{v}`")))
    }

    fn pair(&self, key: &str) -> Result<[f64; 2]> {
        let v = self.list(key)?.unwrap_or_default();
        match v.as_slice() {
            [x] => Ok([*x, 0.0]),
            [x, y] => Ok([*x, *y]),
            _ => Err(config_error(self.line(key), key, "expected one or two components")),
        }
    }

    fn choice<T: FromStr>(&self, key: &str, options: &str) -> Result<Option<T>> {
        self.parse(key, options)
    }

    /// Parses every present key once so that type errors surface at load time.
    fn check_types(&self) -> Result<()> {
        for key in ["dim", "cells", "snapshots", "log_stride", "front.mesh", "limit.max_sweeps", "sweep.threads"] {
            let _: Option<usize> = self.parse(key, "a non-negative integer")?;
        }
        for key in [
            "extent", "gamma", "horizon", "n_max", "cfl_safety", "max_dt", "barrier.radius", "growth.alpha",
            "growth.p_max", "potential.lambda", "potential.amplitude", "potential.width", "init.radius",
            "init.height", "init.width", "init.cutoff", "init.t0", "init.constant", "front.left", "front.right",
            "front.dt", "front.min_width", "limit.dt", "limit.tolerance",
        ] {
            self.real(key)?;
        }
        for key in ["potential.center", "potential.slope", "sweep.ladder"] {
            self.list(key)?;
        }
        let _: Option<bool> = self.parse("front.heun", "true or false")?;
        self.reaction()?;
        self.growth_kind()?;
        self.potential_kind()?;
        self.init_kind()?;
        self.ordering()?;
        self.scenario()?;
        self.reference()?;
        self.growth_nodes()?;
        Ok(())
    }

    fn reaction(&self) -> Result<ReactionTreatment> {
        match self.raw("reaction").unwrap_or("explicit") {
            "explicit" => Ok(ReactionTreatment::Explicit),
            "semi-implicit" => Ok(ReactionTreatment::SemiImplicit),
            v => Err(config_error(self.line("reaction"), "reaction", format!("expected explicit or semi-implicit, got `{v}`"))),
        }
    }

    fn keyword(&self, key: &str, options: &[&'static str]) -> Result<&'static str> {
        let v = self.raw(key).unwrap_or(options[0]);
        options
            .iter()
            .find(|o| **o == v)
            .copied()
            .ok_or_else(|| config_error(self.line(key), key, format!("expected one of {}, got `{v}`", options.join(", "))))
    }

    fn growth_kind(&self) -> Result<&'static str> {
        self.keyword("growth.kind", &["linear", "zero", "tabulated"])
    }

    fn potential_kind(&self) -> Result<&'static str> {
        self.keyword("potential.kind", &["zero", "quadratic-well", "gaussian-bump", "tilt"])
    }

    fn init_kind(&self) -> Result<&'static str> {
        self.keyword("init.kind", &["patch", "bump", "barenblatt", "pressure-patch"])
    }

    fn ordering(&self) -> Result<SweepOrder> {
        Ok(self.choice("limit.ordering", "forward, backward or red-black")?.unwrap_or(SweepOrder::Forward))
    }

    fn scenario(&self) -> Result<Option<Scenario>> {
        self.choice("sweep.scenario", "mesa, patch-growth, drift-well or barenblatt")
    }

    fn reference(&self) -> Result<Option<Reference>> {
        self.choice("sweep.reference", "front-tracking, limit-step or largest-gamma")
    }

    fn growth_nodes(&self) -> Result<Option<Vec<(f64, f64)>>> {
        let key = "growth.nodes";
        let Some(v) = self.raw(key) else { return Ok(None) };
        let bad = || config_error(self.line(key), key, format!("expected `p:g, p:g, ...`, got `{v}`"));
        v.split(',')
            .map(|node| {
                let (p, g) = node.split_once(':').ok_or_else(bad)?;
                let p = p.trim().parse().map_err(|_| bad())?;
                let g = g.trim().parse().map_err(|_| bad())?;
                Ok((p, g))
            })
            .collect::<Result<Vec<_>>>()
            .map(Some)
    }

    // -----------------------------------------------------------------------
    // Resolved objects

    pub fn gamma(&self) -> Result<f64> {
        self.req_real("gamma")
    }

    pub fn horizon(&self) -> Result<f64> {
        self.req_real("horizon")
    }

    pub fn output_dir(&self) -> String {
        self.raw("output.dir").unwrap_or("out").to_string()
    }

    pub fn snapshots(&self) -> Result<usize> {
        self.require("snapshots", "a non-negative integer")
    }

    pub fn grid(&self) -> Result<GridSpec> {
        let dim: usize = self.require("dim", "1 or 2")?;
        if !(1..=2).contains(&dim) {
            return Err(config_error(self.line("dim"), "dim", "dimension must be 1 or 2"));
        }
        let cells: usize = self.require("cells", "a positive integer")?;
        let extent = self.req_real("extent")?;
        GridSpec::centered(dim, cells, extent).map_err(|e| config_error(self.line("cells"), "cells", e.to_string()))
    }

    pub fn growth(&self) -> Result<GrowthLaw> {
        let alpha = self.req_real("growth.alpha")?;
        let p_max = self.req_real("growth.p_max")?;
        let law = match self.growth_kind()? {
            "zero" => Ok(GrowthLaw::Zero),
            "linear" => GrowthLaw::linear(alpha, p_max),
            _ => {
                let nodes = self
                    .growth_nodes()?
                    .ok_or_else(|| config_error(0, "growth.nodes", "tabulated growth needs nodes"))?;
                GrowthLaw::tabulated(&nodes, alpha, p_max)
            }
        };
        law.map_err(|e| config_error(self.line("growth.kind"), "growth.kind", e.to_string()))
    }

    pub fn potential(&self, grid: &GridSpec) -> Result<Potential> {
        let kind = match self.potential_kind()? {
            "zero" => PotentialKind::Zero,
            "quadratic-well" => PotentialKind::QuadraticWell { lambda: self.req_real("potential.lambda")? },
            "gaussian-bump" => PotentialKind::GaussianBump {
                amplitude: self.req_real("potential.amplitude")?,
                width: self.req_real("potential.width")?,
                center: self.pair("potential.center")?,
            },
            _ => PotentialKind::Tilt { slope: self.pair("potential.slope")? },
        };
        Potential::new(kind, grid).map_err(|e| config_error(self.line("potential.kind"), "potential.kind", e.to_string()))
    }

    /// Initial density for exponent `gamma`.
    pub fn initial(&self, gamma: f64, grid: &GridSpec) -> Result<InitialData> {
        let radius = self.req_real("init.radius")?;
        let at = |e: Error| config_error(self.line("init.kind"), "init.kind", e.to_string());
        match self.init_kind()? {
            "patch" => Ok(InitialData::Patch {
                radius,
                height: self.real("init.height")?.unwrap_or(1.0),
            }),
            "bump" => Ok(InitialData::Bump {
                height: self.real("init.height")?.unwrap_or(0.8),
                width: self.req_real("init.width")?,
                cutoff: self.req_real("init.cutoff")?,
            }),
            "barenblatt" => {
                let t0 = self.req_real("init.t0")?;
                let constant = match self.real("init.constant")? {
                    Some(c) => c,
                    None => Barenblatt::constant_for_radius(grid.dim(), gamma, radius, t0),
                };
                InitialData::barenblatt(grid, gamma, constant, t0).map_err(at)
            }
            _ => {
                let law = self.growth()?;
                let pot = self.potential(grid)?;
                well_prepared_patch(grid, gamma, radius, &pot, &law).map_err(at)
            }
        }
    }

    /// Initial density of the incompressible limit: the indicator of the patch.
    pub fn limit_initial(&self, grid: &GridSpec) -> Result<Field> {
        let radius = self.req_real("init.radius")?;
        let height = match self.init_kind()? {
            "patch" => self.real("init.height")?.unwrap_or(1.0),
            "pressure-patch" => 1.0,
            k => {
                return Err(config_error(
                    self.line("init.kind"),
                    "init.kind",
                    format!("the limit solver takes patch or pressure-patch data, got `{k}`"),
                ))
            }
        };
        if !(0.0..=1.0).contains(&height) {
            return Err(config_error(self.line("init.height"), "init.height", "limit data must lie in [0, 1]"));
        }
        InitialData::Patch { radius, height }.field(grid)
    }

    pub fn params(&self, gamma: f64) -> Result<(ModelParams, InitialData)> {
        let grid = self.grid()?;
        let growth = self.growth()?;
        let potential = self.potential(&grid)?;
        let init = self.initial(gamma, &grid)?;
        let n_max = match self.real("n_max")? {
            Some(v) => v,
            None => init.max_value(&grid)?.max(1.0),
        };
        let mut params = ModelParams::new(gamma, growth, potential, grid, n_max, init.support_radius());
        if let Some(r) = self.real("barrier.radius")? {
            params = params.with_barrier_radius(r);
        }
        Ok((params, init))
    }

    pub fn solver(&self, snapshots: usize) -> Result<SolverConfig> {
        let horizon = self.horizon()?;
        let config = SolverConfig {
            cfl_safety: self.req_real("cfl_safety")?,
            reaction: self.reaction()?,
            max_dt: self.req_real("max_dt")?,
            log_stride: self.require("log_stride", "a positive integer")?,
            ..SolverConfig::default()
        }
        .with_uniform_snapshots(horizon, snapshots);
        config.validate().map_err(|e| config_error(self.line("cfl_safety"), "cfl_safety", e.to_string()))?;
        Ok(config)
    }

    pub fn front(&self) -> Result<(f64, f64, f64, FrontOptions)> {
        let radius = self.req_real("init.radius")?;
        let left = self.real("front.left")?.unwrap_or(-radius);
        let right = self.real("front.right")?.unwrap_or(radius);
        let opts = FrontOptions {
            mesh: self.require("front.mesh", "a positive integer")?,
            heun: self.require("front.heun", "true or false")?,
            min_width: self.req_real("front.min_width")?,
        };
        Ok((left, right, self.req_real("front.dt")?, opts))
    }

    pub fn limit(&self) -> Result<LimitOptions> {
        Ok(LimitOptions {
            dt: self.real("limit.dt")?,
            tolerance: self.req_real("limit.tolerance")?,
            max_sweeps: self.require("limit.max_sweeps", "a positive integer")?,
            order: self.ordering()?,
            ..LimitOptions::default()
        })
    }

    /// Sweep setup: the preset fixes the model, the config fixes grid, horizon and ladder.
    pub fn sweep(&self, snapshots: usize) -> Result<SweepConfig> {
        let scenario = self
            .scenario()?
            .ok_or_else(|| config_error(0, "sweep.scenario", "required key is missing"))?;
        let mut config = SweepConfig::new(scenario);
        config.cells = self.require("cells", "a positive integer")?;
        config.extent = self.req_real("extent")?;
        config.horizon = self.horizon()?;
        config.snapshots = snapshots;
        config.cfl_safety = self.req_real("cfl_safety")?;
        config.ladder = self.list("sweep.ladder")?.unwrap_or_default();
        if let Some(r) = self.reference()? {
            config.reference = r;
        }
        config.threads = self.parse("sweep.threads", "a positive integer")?;
        config.limit = self.limit()?;
        let (_, _, front_dt, front) = self.front()?;
        config.front = front;
        config.front_dt = front_dt;
        config
            .validate()
            .map_err(|e| config_error(self.line("sweep.scenario"), "sweep.scenario", e.to_string()))?;
        Ok(config)
    }
}
