//! γ-ladders: runs the finite-γ solver across a ladder, evaluates the
//! diagnostics of each run and measures the distance to a reference limit
//! solution.

use std::collections::VecDeque;
use std::io::Write;
use std::sync::{mpsc, Mutex};

use serde::{Deserialize, Serialize};

use crate::diagnostics::{space_time_norms, DiagnosticsReport};
use crate::error::{Error, Result};
use crate::grid::{Field, GridSpec};
use crate::hele_shaw::{run_limit, solve_stationary_pressure, track_front, FrontOptions, FrontState, LimitOptions};
use crate::model::{
    validate_assumptions, Barenblatt, GrowthLaw, InitialData, InitialRegularity, ModelParams, Potential, PotentialKind,
};
use crate::pme::{run, SolverConfig, State};

pub const THREADS_ENV: &str = "MESA_LIMIT_THREADS";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Scenario {
    /// `0.8·1_{[-1,1]}`, no growth, no drift.
    Mesa,
    /// Saturating patch on `[-1, 1]` with `G(p) = 1 - p`, no drift.
    PatchGrowth,
    /// `0.8·1_{[-1,1]}` in the well `Φ = x²/2`, no growth.
    DriftWell,
    /// Barenblatt profile of support radius 1 at `t₀ = 0.1`, no growth, no drift.
    Barenblatt,
}

impl std::str::FromStr for Scenario {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "mesa" => Ok(Scenario::Mesa),
            "patch-growth" => Ok(Scenario::PatchGrowth),
            "drift-well" => Ok(Scenario::DriftWell),
            "barenblatt" => Ok(Scenario::Barenblatt),
            _ => Err(Error::invalid(format!("unknown scenario `{s}`"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Reference {
    FrontTracking,
    LimitStep,
    LargestGamma,
}

impl std::str::FromStr for Reference {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "front-tracking" => Ok(Reference::FrontTracking),
            "limit-step" => Ok(Reference::LimitStep),
            "largest-gamma" => Ok(Reference::LargestGamma),
            _ => Err(Error::invalid(format!("unknown reference `{s}`"))),
        }
    }
}

pub const BARENBLATT_T0: f64 = 0.1;
pub const PATCH_HALF_WIDTH: f64 = 1.0;

impl Scenario {
    pub fn default_horizon(self) -> f64 {
        match self {
            Scenario::Mesa => 0.25,
            Scenario::PatchGrowth => 0.3,
            Scenario::DriftWell => 0.1,
            Scenario::Barenblatt => 0.1,
        }
    }

    pub fn default_extent(self) -> f64 {
        match self {
            Scenario::Mesa | Scenario::DriftWell | Scenario::Barenblatt => 6.0,
            Scenario::PatchGrowth => 7.0,
        }
    }

    pub fn default_reference(self) -> Reference {
        match self {
            Scenario::PatchGrowth => Reference::FrontTracking,
            Scenario::Mesa | Scenario::DriftWell => Reference::LimitStep,
            Scenario::Barenblatt => Reference::LargestGamma,
        }
    }

    pub fn growth(self) -> GrowthLaw {
        match self {
            Scenario::PatchGrowth => GrowthLaw::linear(1.0, 1.0).expect("valid preset"),
            _ => GrowthLaw::Zero,
        }
    }

    pub fn potential(self, grid: &GridSpec) -> Result<Potential> {
        match self {
            Scenario::DriftWell => Potential::new(PotentialKind::QuadraticWell { lambda: 1.0 }, grid),
            _ => Ok(Potential::zero(grid)),
        }
    }

    /// Model parameters and initial density for one ladder entry.
    pub fn setup(self, gamma: f64, grid: &GridSpec) -> Result<(ModelParams, InitialData)> {
        let potential = self.potential(grid)?;
        let growth = self.growth();
        let init = match self {
            Scenario::Mesa | Scenario::DriftWell => InitialData::Patch { radius: PATCH_HALF_WIDTH, height: 0.8 },
            Scenario::PatchGrowth => well_prepared_patch(grid, gamma, PATCH_HALF_WIDTH, &potential, &growth)?,
            Scenario::Barenblatt => {
                let c = Barenblatt::constant_for_radius(grid.dim(), gamma, PATCH_HALF_WIDTH, BARENBLATT_T0);
                InitialData::barenblatt(grid, gamma, c, BARENBLATT_T0)?
            }
        };
        let n_max = match self {
            Scenario::Barenblatt => init.max_value(grid)?,
            _ => 1.0,
        };
        let params = ModelParams::new(gamma, growth, potential, *grid, n_max, init.support_radius());
        Ok((params, init))
    }

    /// Initial limit density, where the scenario has one.
    pub fn limit_initial(self, grid: &GridSpec) -> Result<Field> {
        let h = match self {
            Scenario::Mesa | Scenario::DriftWell => 0.8,
            Scenario::PatchGrowth => 1.0,
            Scenario::Barenblatt => {
                return Err(Error::invalid("the barenblatt scenario has no limit-step reference"))
            }
        };
        Ok(Field::from_fn(grid, |x| if x[0].abs() <= PATCH_HALF_WIDTH { h } else { 0.0 }))
    }
}

/// `n⁰ = p^{1/γ}` with `p` the stationary pressure on `[-r, r]`, so that the
/// initial pressure is the same for every γ.
pub fn well_prepared_patch(
    grid: &GridSpec,
    gamma: f64,
    half_width: f64,
    potential: &Potential,
    law: &GrowthLaw,
) -> Result<InitialData> {
    if grid.dim() != 1 {
        return Err(Error::invalid("well-prepared patches are one-dimensional"));
    }
    let prof = solve_stationary_pressure(-half_width, half_width, 2000, potential, law)?;
    let pressure = Field::from_fn(grid, |x| prof.value_at(x[0]));
    InitialData::from_pressure(&pressure, gamma, half_width)
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepConfig {
    pub scenario: Scenario,
    pub ladder: Vec<f64>,
    pub horizon: f64,
    pub cells: usize,
    pub extent: f64,
    pub reference: Reference,
    /// Snapshots per horizon.
    pub snapshots: usize,
    pub cfl_safety: f64,
    pub threads: Option<usize>,
    pub limit: LimitOptions,
    pub front: FrontOptions,
    pub front_dt: f64,
}

impl SweepConfig {
    pub fn new(scenario: Scenario) -> Self {
        let extent = scenario.default_extent();
        SweepConfig {
            scenario,
            ladder: vec![5.0, 10.0, 20.0, 40.0, 80.0],
            horizon: scenario.default_horizon(),
            cells: (extent * 100.0).round() as usize,
            extent,
            reference: scenario.default_reference(),
            snapshots: 50,
            cfl_safety: 0.45,
            threads: None,
            limit: LimitOptions::default(),
            front: FrontOptions::default(),
            front_dt: 1e-3,
        }
    }

    pub fn grid(&self) -> Result<GridSpec> {
        GridSpec::centered(1, self.cells, self.extent)
    }

    pub fn snapshot_times(&self) -> Vec<f64> {
        let k = self.snapshots.max(1);
        (1..=k).map(|i| self.horizon * i as f64 / k as f64).collect()
    }

    pub fn validate(&self) -> Result<()> {
        if self.ladder.is_empty() {
            return Err(Error::invalid("empty gamma ladder"));
        }
        if self.ladder.windows(2).any(|w| !(w[1] > w[0])) {
            return Err(Error::invalid("gamma ladder must be strictly increasing"));
        }
        let floor = ModelParams::gamma_floor(1);
        if let Some(g) = self.ladder.iter().find(|&&g| !(g > floor)) {
            return Err(Error::invalid(format!("gamma = {g} must exceed {floor}")));
        }
        if !(self.horizon > 0.0) {
            return Err(Error::invalid("sweep horizon must be positive"));
        }
        Ok(())
    }

    fn thread_count(&self) -> usize {
        let env = std::env::var(THREADS_ENV).ok().and_then(|v| v.parse::<usize>().ok());
        let avail = std::thread::available_parallelism().map(|n| n.get()).unwrap_or(1);
        let cap = env.unwrap_or(avail).max(1);
        self.threads.unwrap_or(cap).min(cap).max(1)
    }
}

/// Per-snapshot and space-time distances between two aligned runs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Distances {
    pub l1_per_snapshot: Vec<f64>,
    pub l1_sup: f64,
    pub l1_final: f64,
    /// `‖∇p_a - ∇p_b‖_{L²(Q_T)}`.
    pub grad_p_l2_qt: f64,
}

pub fn distance_metrics(a: &[State], b: &[State]) -> Result<Distances> {
    if a.is_empty() || b.is_empty() {
        return Err(Error::invalid("distance needs nonempty runs"));
    }
    if a.iter().chain(b).any(|s| !s.grid().same_as(a[0].grid())) {
        return Err(Error::invalid("runs live on different grids"));
    }
    if a.len() != b.len() || a.iter().zip(b).any(|(x, y)| (x.t - y.t).abs() > 1e-12 * x.t.abs().max(1.0)) {
        return Err(Error::Internal("snapshot times of the two runs are not aligned".into()));
    }
    let vol = a[0].grid().cell_volume();
    let mut l1 = Vec::with_capacity(a.len());
    let mut g2 = Vec::with_capacity(a.len());
    for (x, y) in a.iter().zip(b) {
        l1.push(x.n.values().iter().zip(y.n.values()).map(|(u, v)| (u - v).abs()).sum::<f64>() * vol);
        let dp = x.p.zip_map(&y.p, |u, v| u - v);
        g2.push(dp.gradient_magnitude().values().iter().map(|g| g * g).sum::<f64>() * vol);
    }
    let times: Vec<f64> = a.iter().map(|s| s.t).collect();
    let qt: f64 = times.windows(2).zip(g2.windows(2)).map(|(t, v)| 0.5 * (t[1] - t[0]) * (v[0] + v[1])).sum();
    Ok(Distances {
        l1_sup: l1.iter().copied().fold(0.0, f64::max),
        l1_final: *l1.last().expect("nonempty"),
        l1_per_snapshot: l1,
        grad_p_l2_qt: qt.sqrt(),
    })
}

/// Outcome of one ladder entry.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub gamma: f64,
    pub error: Option<String>,
    pub diagnostics: Option<DiagnosticsReport>,
    pub initial_regularity: Option<InitialRegularity>,
    pub steps: usize,
    pub max_balance_error: f64,
    pub max_clip_fraction: f64,
    pub confinement_violations: usize,
    pub d_l1_to_ref: Option<f64>,
    pub d_l1_sup_to_ref: Option<f64>,
    pub d_l2_gradp_to_ref: Option<f64>,
    pub wall_time_s: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Verdicts {
    /// `comp_residual` at the largest γ over its value at the smallest γ >= 10.
    pub comp_residual_ratio: Option<f64>,
    pub comp_residual_decay: Option<bool>,
    pub sat_residual_ratio: Option<f64>,
    pub sat_residual_decay: Option<bool>,
    /// Nonincreasing along the ladder up to 10% slack.
    pub comp_residual_nonincreasing: Option<bool>,
    pub sat_residual_nonincreasing: Option<bool>,
    /// `grad_p_l4_qt`, `ab_l3`, `lap_p_l1` within a factor 2 over γ >= 10.
    pub uniform_bounds: Option<bool>,
    pub ref_distance_decreasing: Option<bool>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepReport {
    pub scenario: Scenario,
    pub reference: Reference,
    pub horizon: f64,
    pub cells: usize,
    pub extent: f64,
    pub ladder: Vec<f64>,
    pub rows: Vec<SweepRow>,
    pub reference_error: Option<String>,
    pub verdicts: Verdicts,
}

struct RunOutcome {
    row: SweepRow,
    snapshots: Vec<State>,
}

fn run_one(config: &SweepConfig, grid: &GridSpec, gamma: f64) -> RunOutcome {
    let mut row = SweepRow {
        gamma,
        error: None,
        diagnostics: None,
        initial_regularity: None,
        steps: 0,
        max_balance_error: 0.0,
        max_clip_fraction: 0.0,
        confinement_violations: 0,
        d_l1_to_ref: None,
        d_l1_sup_to_ref: None,
        d_l2_gradp_to_ref: None,
        wall_time_s: 0.0,
    };
    let result = (|| -> Result<Vec<State>> {
        let (params, init) = config.scenario.setup(gamma, grid)?;
        let n0 = init.field(grid)?;
        row.initial_regularity = Some(validate_assumptions(&params, &n0).initial_regularity);
        let solver = SolverConfig {
            cfl_safety: config.cfl_safety,
            snapshot_times: config.snapshot_times(),
            log_stride: usize::MAX,
            ..SolverConfig::default()
        };
        let traj = run(&params, &init, &solver, config.horizon)?;
        row.steps = traj.log.steps;
        row.max_balance_error = traj.log.max_balance_error.max(traj.log.max_source_balance_error);
        row.max_clip_fraction = traj.log.max_clip_fraction;
        row.confinement_violations = traj.log.confinement_violations;
        row.wall_time_s = traj.log.wall_time_s;
        row.diagnostics = Some(space_time_norms(&traj.snapshots, &params)?);
        Ok(traj.snapshots)
    })();
    match result {
        Ok(snapshots) => RunOutcome { row, snapshots },
        Err(e) => {
            row.error = Some(e.to_string());
            RunOutcome { row, snapshots: Vec::new() }
        }
    }
}

/// Reference snapshots aligned with the ladder runs.
pub fn reference_snapshots(config: &SweepConfig, grid: &GridSpec) -> Result<Vec<State>> {
    let times = config.snapshot_times();
    let potential = config.scenario.potential(grid)?;
    let law = config.scenario.growth();
    match config.reference {
        Reference::FrontTracking => {
            let init = FrontState::new(0.0, -PATCH_HALF_WIDTH, PATCH_HALF_WIDTH, &potential, &law, &config.front)?;
            let traj = track_front(init, &potential, &law, config.front_dt, config.horizon, &times, &config.front)?;
            let mut out = traj.snapshots.iter().map(|f| f.to_state(grid)).collect::<Result<Vec<_>>>()?;
            // after extinction the limit density is empty
            for &t in times.iter().skip(out.len() - 1) {
                out.push(State { t, n: Field::zeros(grid), p: Field::zeros(grid) });
            }
            Ok(out)
        }
        Reference::LimitStep => {
            let n0 = config.scenario.limit_initial(grid)?;
            let traj = run_limit(&potential, &law, &n0, config.horizon, &times, &config.limit)?;
            Ok(traj.snapshots.iter().map(|s| s.to_state()).collect())
        }
        Reference::LargestGamma => Err(Error::Internal("largest-gamma reference is taken from the ladder".into())),
    }
}

enum Job {
    Gamma(usize),
    Reference,
}

enum Done {
    Gamma(usize, Box<RunOutcome>),
    Reference(Result<Vec<State>>),
}

pub fn run_sweep(config: &SweepConfig) -> Result<SweepReport> {
    config.validate()?;
    let grid = config.grid()?;
    let mut queue: VecDeque<Job> = VecDeque::new();
    if config.reference != Reference::LargestGamma {
        queue.push_back(Job::Reference);
    }
    // largest γ first: those runs take longest
    for i in (0..config.ladder.len()).rev() {
        queue.push_back(Job::Gamma(i));
    }
    let jobs = Mutex::new(queue);
    let (tx, rx) = mpsc::channel::<Done>();
    let mut outcomes: Vec<Option<RunOutcome>> = (0..config.ladder.len()).map(|_| None).collect();
    let mut reference: Option<Result<Vec<State>>> = None;
    std::thread::scope(|scope| {
        for _ in 0..config.thread_count() {
            let tx = tx.clone();
            let jobs = &jobs;
            let grid = &grid;
            scope.spawn(move || loop {
                let job = jobs.lock().expect("job queue lock").pop_front();
                let done = match job {
                    None => break,
                    Some(Job::Gamma(i)) => Done::Gamma(i, Box::new(run_one(config, grid, config.ladder[i]))),
                    Some(Job::Reference) => Done::Reference(reference_snapshots(config, grid)),
                };
                if tx.send(done).is_err() {
                    break;
                }
            });
        }
        drop(tx);
        for done in rx {
            match done {
                Done::Gamma(i, out) => outcomes[i] = Some(*out),
                Done::Reference(r) => reference = Some(r),
            }
        }
    });

    let mut outcomes: Vec<RunOutcome> =
        outcomes.into_iter().map(|o| o.ok_or_else(|| Error::Internal("a ladder run went missing".into()))).collect::<Result<_>>()?;
    let reference = match config.reference {
        Reference::LargestGamma => {
            let last = outcomes.last().expect("nonempty ladder");
            if last.row.error.is_none() {
                Ok(last.snapshots.clone())
            } else {
                Err(Error::invalid("largest-gamma run failed"))
            }
        }
        _ => reference.unwrap_or_else(|| Err(Error::Internal("reference job did not report".into()))),
    };
    let reference_error = match &reference {
        Ok(snaps) => {
            for out in outcomes.iter_mut().filter(|o| o.row.error.is_none()) {
                let d = distance_metrics(&out.snapshots, snaps)?;
                out.row.d_l1_to_ref = Some(d.l1_final);
                out.row.d_l1_sup_to_ref = Some(d.l1_sup);
                out.row.d_l2_gradp_to_ref = Some(d.grad_p_l2_qt);
            }
            None
        }
        Err(e) => Some(e.to_string()),
    };
    let rows: Vec<SweepRow> = outcomes.into_iter().map(|o| o.row).collect();
    let verdicts = verdicts(&rows);
    Ok(SweepReport {
        scenario: config.scenario,
        reference: config.reference,
        horizon: config.horizon,
        cells: config.cells,
        extent: config.extent,
        ladder: config.ladder.clone(),
        rows,
        reference_error,
        verdicts,
    })
}

fn verdicts(rows: &[SweepRow]) -> Verdicts {
    let mut v = Verdicts::default();
    if rows.len() < 2 || rows.iter().any(|r| r.diagnostics.is_none()) {
        return v;
    }
    let diag: Vec<&DiagnosticsReport> = rows.iter().map(|r| r.diagnostics.as_ref().expect("checked")).collect();
    let base = rows.iter().position(|r| r.gamma >= 10.0).unwrap_or(0);
    let last = rows.len() - 1;
    let ratio = |f: fn(&DiagnosticsReport) -> f64| {
        let b = f(diag[base]);
        if b > 0.0 {
            f(diag[last]) / b
        } else {
            0.0
        }
    };
    if base < last {
        let c = ratio(|d| d.comp_residual);
        let s = ratio(|d| d.sat_residual);
        v.comp_residual_ratio = Some(c);
        v.comp_residual_decay = Some(c <= 0.25);
        v.sat_residual_ratio = Some(s);
        v.sat_residual_decay = Some(s <= 0.25);
        let within_two = |f: fn(&DiagnosticsReport) -> f64| {
            let vals: Vec<f64> = diag[base..].iter().map(|d| f(d)).collect();
            let (lo, hi) = vals.iter().fold((f64::INFINITY, 0.0f64), |(lo, hi), &x| (lo.min(x), hi.max(x)));
            hi <= 2.0 * lo
        };
        v.uniform_bounds =
            Some(within_two(|d| d.grad_p_l4_qt) && within_two(|d| d.ab_l3) && within_two(|d| d.lap_p_l1));
    }
    let nonincreasing =
        |f: fn(&DiagnosticsReport) -> f64| diag.windows(2).all(|w| f(w[1]) <= 1.1 * f(w[0]));
    v.comp_residual_nonincreasing = Some(nonincreasing(|d| d.comp_residual));
    v.sat_residual_nonincreasing = Some(nonincreasing(|d| d.sat_residual));
    let dist: Option<Vec<f64>> = rows.iter().map(|r| r.d_l1_to_ref).collect();
    v.ref_distance_decreasing = dist.map(|d| d.windows(2).all(|w| w[1] < w[0]));
    v
}

pub const CSV_HEADER: &str =
    "gamma,sup_p,grad_p_l2,grad_p_l4,ab_l3,lap_p_l1,comp_residual,sat_residual,d_l1_to_ref,d_l2_gradp_to_ref,wall_time_s";

fn num(v: Option<f64>) -> String {
    match v {
        Some(x) => format!("{x:.10e}"),
        None => "nan".into(),
    }
}

pub fn write_sweep_csv<W: Write>(mut w: W, report: &SweepReport) -> Result<()> {
    writeln!(w, "{CSV_HEADER}")?;
    for r in &report.rows {
        let d = r.diagnostics.as_ref();
        let cols = [
            num(Some(r.gamma)),
            num(d.map(|d| d.sup_p)),
            num(d.map(|d| d.grad_p_l2_qt)),
            num(d.map(|d| d.grad_p_l4_qt)),
            num(d.map(|d| d.ab_l3)),
            num(d.map(|d| d.lap_p_l1)),
            num(d.map(|d| d.comp_residual)),
            num(d.map(|d| d.sat_residual)),
            num(r.d_l1_to_ref),
            num(r.d_l2_gradp_to_ref),
            format!("{:.3}", r.wall_time_s),
        ];
        writeln!(w, "{}", cols.join(","))?;
    }
    Ok(())
}
