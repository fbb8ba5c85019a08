//! Explicit finite-volume integration of the density equation
//!
//! ```text
//! ∂ₜn = γ/(γ+1) Δ(n^{γ+1}) + ∇·(n∇Φ) + n G(n^γ)
//! ```
//!
//! The porous-medium flux `n∇p` is written as `γ/(γ+1) ∇n^{γ+1}`, so the
//! diffusion is a plain Laplacian of `n^{γ+1}` and every transport term is in
//! divergence form. Drift uses first-order upwinding on face velocities
//! `-∂Φ`. Steps are bounded by a combined CFL rule that keeps the update a
//! convex combination, hence positivity preserving.

use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{laplacian_into, Field, GridSpec};
use crate::model::{
    eval_pressure, pressure_of, supersolution_constants, GrowthLaw, InitialData, ModelParams, Potential, Supersolution,
    SUPPORT_THRESHOLD,
};

/// Clipped mass allowed per step, relative to the total mass.
pub const CLIP_TOLERANCE: f64 = 1e-12;
/// Cells this close to the edge must stay empty.
pub const EDGE_LAYERS: usize = 3;

#[derive(Debug, Clone, PartialEq)]
pub struct State {
    pub t: f64,
    pub n: Field,
    pub p: Field,
}

impl State {
    pub fn new(t: f64, n: Field, gamma: f64) -> Result<Self> {
        let p = eval_pressure(&n, gamma)?;
        Ok(State { t, n, p })
    }

    pub fn mass(&self) -> f64 {
        self.n.integrate()
    }

    pub fn grid(&self) -> &GridSpec {
        self.n.grid()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ReactionTreatment {
    Explicit,
    /// Loss part `n G⁻` taken implicitly.
    SemiImplicit,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SolverConfig {
    pub cfl_safety: f64,
    pub reaction: ReactionTreatment,
    /// Times in `(0, T]` at which snapshots are recorded; `T` is always added.
    pub snapshot_times: Vec<f64>,
    /// Step used when nothing in the state constrains it; also a hard cap.
    pub max_dt: f64,
    /// Record the per-step series every `log_stride` steps.
    pub log_stride: usize,
    /// Refuse to start when the grid does not contain the confinement ball.
    pub enforce_domain_bound: bool,
    pub max_steps: usize,
}

impl Default for SolverConfig {
    fn default() -> Self {
        SolverConfig {
            cfl_safety: 0.45,
            reaction: ReactionTreatment::Explicit,
            snapshot_times: Vec::new(),
            max_dt: 1.0,
            log_stride: 1,
            enforce_domain_bound: true,
            max_steps: 2_000_000_000,
        }
    }
}

impl SolverConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.cfl_safety > 0.0 && self.cfl_safety <= 1.0) {
            return Err(Error::invalid(format!("cfl_safety must lie in (0, 1], got {}", self.cfl_safety)));
        }
        if !(self.max_dt > 0.0) {
            return Err(Error::invalid("max_dt must be positive"));
        }
        Ok(())
    }

    /// `count` equally spaced snapshot times ending at `horizon`.
    pub fn with_uniform_snapshots(mut self, horizon: f64, count: usize) -> Self {
        self.snapshot_times = (1..=count.max(1)).map(|k| horizon * k as f64 / count.max(1) as f64).collect();
        self
    }
}

/// Upwind face velocities `-∂_kΦ` for each axis.
#[derive(Debug, Clone)]
pub(crate) struct Drift {
    /// Axis 0: `(nx + 1) * ny` faces; axis 1: `nx * (ny + 1)` faces.
    faces: Vec<Vec<f64>>,
    active: bool,
}

impl Drift {
    pub(crate) fn new(grid: &GridSpec, potential: &Potential) -> Self {
        let (nx, ny, h) = (grid.nx(), grid.ny(), grid.h());
        let o = grid.origin();
        if potential.is_zero() {
            return Drift { faces: Vec::new(), active: false };
        }
        let mut faces = Vec::with_capacity(grid.dim());
        let yc = |j: usize| if grid.dim() == 2 { o[1] + (j as f64 + 0.5) * h } else { 0.0 };
        let mut ax0 = Vec::with_capacity((nx + 1) * ny);
        for j in 0..ny {
            for i in 0..=nx {
                let x = [o[0] + i as f64 * h, yc(j)];
                ax0.push(-potential.partial(x, 0));
            }
        }
        faces.push(ax0);
        if grid.dim() == 2 {
            let mut ax1 = Vec::with_capacity(nx * (ny + 1));
            for j in 0..=ny {
                for i in 0..nx {
                    let x = [o[0] + (i as f64 + 0.5) * h, o[1] + j as f64 * h];
                    ax1.push(-potential.partial(x, 1));
                }
            }
            faces.push(ax1);
        }
        Drift { faces, active: true }
    }

    /// Adds `∇·(n∇Φ) = -∇·(n u)` to `out`; returns the outflow rate through
    /// the domain boundary (mass per unit time).
    pub(crate) fn add_divergence(&self, grid: &GridSpec, n: &[f64], out: &mut [f64]) -> f64 {
        if !self.active {
            return 0.0;
        }
        let (nx, ny, h) = (grid.nx(), grid.ny(), grid.h());
        let inv_h = 1.0 / h;
        let face_area = h.powi(grid.dim() as i32 - 1);
        let mut outflow = 0.0;
        let ax0 = &self.faces[0];
        for j in 0..ny {
            let row = j * nx;
            let frow = j * (nx + 1);
            let mut flux_left = {
                let u = ax0[frow];
                // ghost on the left is empty
                u.min(0.0) * n[row]
            };
            outflow -= flux_left;
            for i in 0..nx {
                let u = ax0[frow + i + 1];
                let right = if i + 1 < nx { n[row + i + 1] } else { 0.0 };
                let flux_right = u.max(0.0) * n[row + i] + u.min(0.0) * right;
                out[row + i] -= (flux_right - flux_left) * inv_h;
                flux_left = flux_right;
            }
            outflow += flux_left;
        }
        if grid.dim() == 2 {
            let ax1 = &self.faces[1];
            for i in 0..nx {
                let mut flux_low = ax1[i].min(0.0) * n[i];
                outflow -= flux_low;
                for j in 0..ny {
                    let u = ax1[i + nx * (j + 1)];
                    let up = if j + 1 < ny { n[i + nx * (j + 1)] } else { 0.0 };
                    let flux_up = u.max(0.0) * n[i + nx * j] + u.min(0.0) * up;
                    out[i + nx * j] -= (flux_up - flux_low) * inv_h;
                    flux_low = flux_up;
                }
                outflow += flux_low;
            }
        }
        outflow * face_area
    }
}

/// Largest admissible step for `state`.
///
/// Combines the diffusion (`h²/(2·d·D)`, `D = γ max(n)^γ`), drift
/// (`h/(2V)`, `V = Σ_k sup|∂_kΦ|`) and reaction (`1/(2 sup|G|)`) limits
/// harmonically, `Δt = cfl / Σ 1/Δt_k`, skipping vanishing terms; falls back
/// to `config.max_dt`.
pub fn stable_dt(state: &State, params: &ModelParams, config: &SolverConfig) -> f64 {
    let max_n = state.n.max().max(0.0);
    let max_p = pressure_of(max_n, params.gamma);
    stable_dt_from(max_n, max_p, params, config)
}

fn stable_dt_from(max_n: f64, max_p: f64, params: &ModelParams, config: &SolverConfig) -> f64 {
    let g = &params.grid;
    let h = g.h();
    let d = g.dim() as f64;
    let diff = params.gamma * max_p;
    let _ = max_n;
    let mut rate = 0.0;
    if diff > 0.0 {
        rate += 2.0 * d * diff / (h * h);
    }
    let v = params.potential.norms().drift_speed;
    if v > 0.0 {
        rate += 2.0 * v / h;
    }
    let upper = params.growth.p_max().unwrap_or(0.0).max(max_p);
    let gsup = params.growth.sup_abs(upper);
    if gsup > 0.0 {
        rate += 2.0 * gsup;
    }
    if rate > 0.0 {
        (config.cfl_safety / rate).min(config.max_dt)
    } else {
        config.max_dt
    }
}

/// Bookkeeping returned with every step.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepReport {
    /// `∫ n G` quadrature actually applied (per unit time).
    pub source: f64,
    /// Transport outflow through the domain boundary (per unit time).
    pub outflow: f64,
    /// Mass removed by clipping negative cells.
    pub clipped: f64,
    pub mass_before: f64,
    pub mass_after: f64,
}

impl StepReport {
    /// `|Δmass - dt (source - outflow)| / mass_before`.
    pub fn balance_error(&self, dt: f64) -> f64 {
        let expected = dt * (self.source - self.outflow);
        let scale = self.mass_before.max(f64::MIN_POSITIVE);
        ((self.mass_after - self.mass_before) - expected).abs() / scale
    }
}

/// Reusable buffers for repeated steps.
struct Stepper<'a> {
    params: &'a ModelParams,
    reaction: ReactionTreatment,
    drift: Drift,
    p: Vec<f64>,
    u: Vec<f64>,
    lap: Vec<f64>,
    rhs: Vec<f64>,
    step_index: usize,
    /// `p` already holds `n^γ` for the density passed to the next `advance`.
    p_fresh: bool,
}

impl<'a> Stepper<'a> {
    fn new(params: &'a ModelParams, reaction: ReactionTreatment) -> Self {
        let len = params.grid.len();
        Stepper {
            params,
            reaction,
            drift: Drift::new(&params.grid, &params.potential),
            p: vec![0.0; len],
            u: vec![0.0; len],
            lap: vec![0.0; len],
            rhs: vec![0.0; len],
            step_index: 0,
            p_fresh: false,
        }
    }

    /// Advances `n` in place; `p` is refreshed to the new density on return.
    fn advance(&mut self, n: &mut [f64], dt: f64) -> Result<StepReport> {
        let params = self.params;
        let g = &params.grid;
        let gamma = params.gamma;
        let c = gamma / (gamma + 1.0);
        let vol = g.cell_volume();
        let law: &GrowthLaw = &params.growth;

        let mut mass_before = 0.0;
        for i in 0..n.len() {
            let v = n[i];
            mass_before += v;
            if !self.p_fresh {
                self.p[i] = pressure_of(v, gamma);
            }
            self.u[i] = v * self.p[i];
        }
        mass_before *= vol;

        laplacian_into(g, &self.u, &mut self.lap);
        for i in 0..n.len() {
            self.rhs[i] = c * self.lap[i];
        }
        let outflow = self.drift.add_divergence(g, n, &mut self.rhs);

        let mut source = 0.0;
        let mut clipped = 0.0;
        let mut mass_after = 0.0;
        let growth_active = !law.is_zero();
        for i in 0..n.len() {
            let old = n[i];
            let mut new = match (growth_active, self.reaction) {
                (false, _) => old + dt * self.rhs[i],
                (true, ReactionTreatment::Explicit) => {
                    let r = old * law.eval(self.p[i]);
                    source += r;
                    old + dt * (self.rhs[i] + r)
                }
                (true, ReactionTreatment::SemiImplicit) => {
                    let gv = law.eval(self.p[i]);
                    let (gain, loss) = (gv.max(0.0), (-gv).max(0.0));
                    let v = (old + dt * (self.rhs[i] + old * gain)) / (1.0 + dt * loss);
                    source += old * gain - v * loss;
                    v
                }
            };
            if !new.is_finite() {
                return Err(Error::Divergence { step: self.step_index });
            }
            if new < 0.0 {
                clipped -= new;
                new = 0.0;
            }
            n[i] = new;
            mass_after += new;
        }
        self.step_index += 1;
        for i in 0..n.len() {
            let v = n[i];
            self.p[i] = pressure_of(v, gamma);
        }
        self.p_fresh = true;
        Ok(StepReport {
            source: source * vol,
            outflow,
            clipped: clipped * vol,
            mass_before,
            mass_after: mass_after * vol,
        })
    }
}

/// One explicit step of size `dt`; fails if `dt` exceeds [`stable_dt`].
pub fn step(state: &State, params: &ModelParams, config: &SolverConfig, dt: f64) -> Result<(State, StepReport)> {
    let limit = stable_dt(state, params, config);
    if dt > limit * (1.0 + 1e-12) {
        return Err(Error::Stability { dt, limit });
    }
    let mut stepper = Stepper::new(params, config.reaction);
    let mut n = state.n.values().to_vec();
    let report = stepper.advance(&mut n, dt)?;
    let p = Field::from_values_unchecked(&params.grid, stepper.p.clone());
    let n = Field::from_values_unchecked(&params.grid, n);
    Ok((State { t: state.t + dt, n, p }, report))
}

/// Per-run log. The serialized keys `steps`, `mass_series`, `clipped_mass`,
/// `max_p_series` and `wall_time_s` are part of the output format.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct RunLog {
    pub steps: usize,
    pub time_series: Vec<f64>,
    pub mass_series: Vec<f64>,
    pub min_n_series: Vec<f64>,
    pub max_n_series: Vec<f64>,
    pub min_p_series: Vec<f64>,
    pub max_p_series: Vec<f64>,
    pub clipped_series: Vec<f64>,
    /// Total clipped mass over the run.
    pub clipped_mass: f64,
    /// Largest per-step clipped mass relative to the total mass.
    pub max_clip_fraction: f64,
    /// Largest per-step `|Δmass - dt(∫nG - outflow)| / mass`.
    pub max_balance_error: f64,
    /// Largest per-step `|Δmass - dt ∫nG| / mass`, boundary outflow included in the error.
    pub max_source_balance_error: f64,
    pub boundary_outflow: f64,
    /// Count of (step, cell) pairs with density above the support threshold
    /// outside the confinement ball.
    pub confinement_violations: usize,
    pub wall_time_s: f64,
}

impl RunLog {
    fn record(&mut self, t: f64, n: &[f64], p: &[f64], vol: f64, clipped: f64) {
        let (mut lo, mut hi, mut plo, mut phi, mut mass) = (f64::INFINITY, f64::NEG_INFINITY, f64::INFINITY, 0.0f64, 0.0);
        for (&v, &q) in n.iter().zip(p) {
            lo = lo.min(v);
            hi = hi.max(v);
            plo = plo.min(q);
            phi = phi.max(q);
            mass += v;
        }
        self.time_series.push(t);
        self.mass_series.push(mass * vol);
        self.min_n_series.push(lo);
        self.max_n_series.push(hi);
        self.min_p_series.push(plo);
        self.max_p_series.push(phi);
        self.clipped_series.push(clipped);
    }
}

#[derive(Debug, Clone)]
pub struct Trajectory {
    pub gamma: f64,
    pub snapshots: Vec<State>,
    pub log: RunLog,
}

impl Trajectory {
    pub fn last(&self) -> &State {
        self.snapshots.last().expect("a trajectory holds at least the initial state")
    }
}

fn snapshot_schedule(times: &[f64], horizon: f64) -> Vec<f64> {
    let mut s: Vec<f64> = times.iter().copied().filter(|&t| t > 0.0 && t < horizon).collect();
    if horizon > 0.0 {
        s.push(horizon);
    }
    s.sort_by(|a, b| a.partial_cmp(b).expect("finite snapshot times"));
    s.dedup_by(|a, b| (*a - *b).abs() <= 1e-14 * horizon.max(1.0));
    s
}

/// Evolves `init` to `horizon`, landing exactly on every snapshot time.
pub fn run(params: &ModelParams, init: &InitialData, config: &SolverConfig, horizon: f64) -> Result<Trajectory> {
    config.validate()?;
    if !(horizon >= 0.0 && horizon.is_finite()) {
        return Err(Error::invalid("horizon must be finite and nonnegative"));
    }
    if !params.gamma_admissible() {
        return Err(Error::invalid(format!(
            "gamma = {} must exceed {}",
            params.gamma,
            ModelParams::gamma_floor(params.grid.dim())
        )));
    }
    if config.enforce_domain_bound {
        params.check_domain(horizon)?;
    }
    let start = Instant::now();
    let grid = params.grid;
    let vol = grid.cell_volume();
    let n0 = init.field(&grid)?;
    let first = State::new(0.0, n0, params.gamma)?;

    let edge: Vec<usize> = (0..grid.len()).filter(|&i| grid.layer(i) < EDGE_LAYERS).collect();
    let barrier: Option<Supersolution> = supersolution_constants(params).ok();
    let radius2: Vec<f64> = (0..grid.len())
        .map(|i| {
            let x = grid.center(i);
            x[0] * x[0] + x[1] * x[1]
        })
        .collect();

    let mut log = RunLog::default();
    let mut n = first.n.values().to_vec();
    log.record(0.0, &n, first.p.values(), vol, 0.0);
    check_edge(&n, &edge, 0.0)?;
    if let Some(b) = &barrier {
        log.confinement_violations += count_outside(&n, &radius2, b.radius(0.0));
    }
    let mut snapshots = vec![first];

    let schedule = snapshot_schedule(&config.snapshot_times, horizon);
    let mut stepper = Stepper::new(params, config.reaction);
    stepper.p.copy_from_slice(snapshots[0].p.values());
    stepper.p_fresh = true;
    let mut t = 0.0;
    let mut max_n = n.iter().copied().fold(0.0, f64::max);
    for &target in &schedule {
        while t < target {
            if stepper.step_index >= config.max_steps {
                return Err(Error::invalid(format!("step budget of {} exhausted at t = {t}", config.max_steps)));
            }
            let max_p = pressure_of(max_n, params.gamma);
            let mut dt = stable_dt_from(max_n, max_p, params, config);
            let landing = t + dt >= target * (1.0 - 1e-13);
            if landing {
                dt = target - t;
            }
            let rep = stepper.advance(&mut n, dt)?;
            t = if landing { target } else { t + dt };

            let clip_fraction = rep.clipped / rep.mass_before.max(f64::MIN_POSITIVE);
            log.max_clip_fraction = log.max_clip_fraction.max(clip_fraction);
            log.clipped_mass += rep.clipped;
            log.max_balance_error = log.max_balance_error.max(rep.balance_error(dt));
            let src_err = ((rep.mass_after - rep.mass_before) - dt * rep.source).abs()
                / rep.mass_before.max(f64::MIN_POSITIVE);
            log.max_source_balance_error = log.max_source_balance_error.max(src_err);
            log.boundary_outflow += dt * rep.outflow;
            max_n = n.iter().copied().fold(0.0, f64::max);
            if stepper.step_index % config.log_stride.max(1) == 0 || landing {
                log.record(t, &n, &stepper.p, vol, rep.clipped);
            }
            check_edge(&n, &edge, t)?;
            if let Some(b) = &barrier {
                log.confinement_violations += count_outside(&n, &radius2, b.radius(t));
            }
        }
        let nf = Field::from_values_unchecked(&grid, n.clone());
        let pf = Field::from_values_unchecked(&grid, stepper.p.clone());
        snapshots.push(State { t, n: nf, p: pf });
    }
    log.steps = stepper.step_index;
    log.wall_time_s = start.elapsed().as_secs_f64();
    Ok(Trajectory { gamma: params.gamma, snapshots, log })
}

fn check_edge(n: &[f64], edge: &[usize], t: f64) -> Result<()> {
    match edge.iter().find(|&&i| n[i] > SUPPORT_THRESHOLD) {
        Some(&i) => Err(Error::GridTooSmall { index: i, layers: EDGE_LAYERS, t }),
        None => Ok(()),
    }
}

fn count_outside(n: &[f64], radius2: &[f64], radius: f64) -> usize {
    let r2 = radius * radius;
    n.iter().zip(radius2).filter(|(&v, &d)| d > r2 && v >= SUPPORT_THRESHOLD).count()
}
