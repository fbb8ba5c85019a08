//! Solvers for the incompressible limit.
//!
//! * stationary pressure on an interval (Numerov discretization, Newton) or
//!   on a saturated set of grid cells,
//! * one-dimensional patch front tracking with the velocity law
//!   `ẋ = -(p' + Φ')` at each end,
//! * a time stepper for the limit density that splits each step into
//!   explicit transport and an implicit pressure projection, solved as a
//!   linear complementarity problem by projected SOR.

use std::io::Write;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{Field, GridSpec};
use crate::model::{GrowthLaw, Potential, SUPPORT_THRESHOLD};
use crate::pme::{Drift, State, EDGE_LAYERS};

// ---------------------------------------------------------------------------
// Stationary pressure on an interval

/// Pressure sampled at `m + 1` equally spaced nodes of `[a, b]`, ends included.
#[derive(Debug, Clone, PartialEq)]
pub struct PressureProfile {
    pub a: f64,
    pub b: f64,
    pub p: Vec<f64>,
}

impl PressureProfile {
    pub fn intervals(&self) -> usize {
        self.p.len() - 1
    }

    pub fn spacing(&self) -> f64 {
        (self.b - self.a) / self.intervals() as f64
    }

    /// Piecewise-linear interpolant, zero outside `[a, b]`.
    pub fn value_at(&self, x: f64) -> f64 {
        if !(x > self.a && x < self.b) {
            return 0.0;
        }
        let s = (x - self.a) / self.spacing();
        let i = (s.floor() as usize).min(self.intervals() - 1);
        let f = s - i as f64;
        self.p[i] * (1.0 - f) + self.p[i + 1] * f
    }

    pub fn center_value(&self) -> f64 {
        self.value_at(0.5 * (self.a + self.b))
    }
}

pub const NEWTON_TOLERANCE: f64 = 1e-10;
pub const NEWTON_MAX_ITERATIONS: usize = 50;
/// Below this Newton update the residual is at roundoff.
const NEWTON_STEP_FLOOR: f64 = 1e-14;

fn check_line_potential(potential: &Potential) -> Result<()> {
    if potential.dim() != 1 {
        return Err(Error::invalid("front tracking needs a one-dimensional potential"));
    }
    Ok(())
}

/// Solves `-p'' = Φ'' + G(p)` on `[a, b]` with `p(a) = p(b) = 0` using `m`
/// intervals. Newton iteration on the Numerov scheme.
pub fn solve_stationary_pressure(
    a: f64,
    b: f64,
    m: usize,
    potential: &Potential,
    law: &GrowthLaw,
) -> Result<PressureProfile> {
    check_line_potential(potential)?;
    if !(b > a) || !a.is_finite() || !b.is_finite() {
        return Err(Error::invalid(format!("empty interval [{a}, {b}]")));
    }
    if m < 2 {
        return Err(Error::invalid("need at least 2 intervals"));
    }
    let k = (b - a) / m as f64;
    let w = k * k / 12.0;
    let phi2: Vec<f64> = (0..=m).map(|i| potential.laplacian([a + i as f64 * k, 0.0])).collect();
    let f = |i: usize, p: f64| phi2[i] + law.eval(p);

    let residual = |p: &[f64], out: &mut [f64]| -> f64 {
        let mut worst = 0.0f64;
        for i in 1..m {
            let r = p[i - 1] - 2.0 * p[i] + p[i + 1] + w * (f(i - 1, p[i - 1]) + 10.0 * f(i, p[i]) + f(i + 1, p[i + 1]));
            out[i] = r;
            worst = worst.max((r / (k * k)).abs());
        }
        worst
    };

    let mut p = vec![0.0; m + 1];
    let mut r = vec![0.0; m + 1];
    let mut trial = vec![0.0; m + 1];
    let mut r_trial = vec![0.0; m + 1];
    let (mut sub, mut diag, mut sup, mut rhs) = (vec![0.0; m + 1], vec![0.0; m + 1], vec![0.0; m + 1], vec![0.0; m + 1]);
    let mut history = Vec::new();
    let mut norm = residual(&p, &mut r);
    history.push(norm);
    let mut converged = norm <= NEWTON_TOLERANCE;
    let mut iterations = 0;
    while !converged && iterations < NEWTON_MAX_ITERATIONS {
        iterations += 1;
        for i in 1..m {
            sub[i] = if i > 1 { 1.0 + w * law.derivative(p[i - 1]) } else { 0.0 };
            diag[i] = -2.0 + 10.0 * w * law.derivative(p[i]);
            sup[i] = if i + 1 < m { 1.0 + w * law.derivative(p[i + 1]) } else { 0.0 };
            rhs[i] = -r[i];
        }
        let delta = thomas(&sub[1..m], &diag[1..m], &sup[1..m], &rhs[1..m])?;
        let step = delta.iter().fold(0.0f64, |acc, v| acc.max(v.abs()));
        let mut lambda = 1.0;
        loop {
            for i in 1..m {
                trial[i] = p[i] + lambda * delta[i - 1];
            }
            let n_trial = residual(&trial, &mut r_trial);
            if n_trial < norm || lambda < 1.0 / 1024.0 {
                std::mem::swap(&mut p, &mut trial);
                std::mem::swap(&mut r, &mut r_trial);
                norm = n_trial;
                break;
            }
            lambda *= 0.5;
        }
        history.push(norm);
        converged = norm <= NEWTON_TOLERANCE || lambda * step <= NEWTON_STEP_FLOOR;
    }
    if !converged {
        return Err(Error::NoConvergence { solver: "stationary pressure", iterations, last: norm, history });
    }
    let worst = p.iter().copied().fold(0.0, f64::min);
    if worst < -1e-12 {
        return Err(Error::Modeling(format!(
            "stationary pressure takes the negative value {worst:e}; the interval is not admissible"
        )));
    }
    for v in p.iter_mut() {
        *v = v.max(0.0);
    }
    Ok(PressureProfile { a, b, p })
}

/// Tridiagonal solve; `sub[0]` and `sup[last]` are ignored.
fn thomas(sub: &[f64], diag: &[f64], sup: &[f64], rhs: &[f64]) -> Result<Vec<f64>> {
    let n = diag.len();
    let mut c = vec![0.0; n];
    let mut d = vec![0.0; n];
    let mut beta = diag[0];
    if beta == 0.0 {
        return Err(Error::Internal("singular tridiagonal system".into()));
    }
    c[0] = sup[0] / beta;
    d[0] = rhs[0] / beta;
    for i in 1..n {
        beta = diag[i] - sub[i] * c[i - 1];
        if beta == 0.0 {
            return Err(Error::Internal("singular tridiagonal system".into()));
        }
        c[i] = sup[i] / beta;
        d[i] = (rhs[i] - sub[i] * d[i - 1]) / beta;
    }
    for i in (0..n - 1).rev() {
        d[i] -= c[i] * d[i + 1];
    }
    Ok(d)
}

// ---------------------------------------------------------------------------
// Front tracking

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FrontOptions {
    /// Intervals of the internal pressure mesh.
    pub mesh: usize,
    pub heun: bool,
    /// Width at which the patch counts as extinct.
    pub min_width: f64,
}

impl Default for FrontOptions {
    fn default() -> Self {
        FrontOptions { mesh: 2000, heun: true, min_width: 1e-6 }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FrontState {
    pub t: f64,
    pub profile: PressureProfile,
}

impl FrontState {
    pub fn new(t: f64, a: f64, b: f64, potential: &Potential, law: &GrowthLaw, opts: &FrontOptions) -> Result<Self> {
        let profile = solve_stationary_pressure(a, b, opts.mesh, potential, law)?;
        Ok(FrontState { t, profile })
    }

    pub fn a(&self) -> f64 {
        self.profile.a
    }

    pub fn b(&self) -> f64 {
        self.profile.b
    }

    /// Density `1_{[a,b]}` as cell averages and the pressure at cell centres.
    pub fn to_state(&self, grid: &GridSpec) -> Result<State> {
        if grid.dim() != 1 {
            return Err(Error::invalid("front states live on one-dimensional grids"));
        }
        let h = grid.h();
        let (a, b) = (self.a(), self.b());
        let n = Field::from_fn(grid, |x| {
            let lo = (x[0] - 0.5 * h).max(a);
            let hi = (x[0] + 0.5 * h).min(b);
            ((hi - lo) / h).clamp(0.0, 1.0)
        });
        let p = Field::from_fn(grid, |x| self.profile.value_at(x[0]));
        Ok(State { t: self.t, n, p })
    }
}

/// `(da/dt, db/dt) = (-(p'(a⁺) + Φ'(a)), -(p'(b⁻) + Φ'(b)))`.
pub fn front_velocity(front: &FrontState, potential: &Potential) -> Result<(f64, f64)> {
    check_line_potential(potential)?;
    let prof = &front.profile;
    let m = prof.intervals();
    if m < 8 {
        return Err(Error::invalid(format!("pressure mesh of {m} intervals is too coarse (need 8)")));
    }
    let k = prof.spacing();
    let p = &prof.p;
    let dpa = (-3.0 * p[0] + 4.0 * p[1] - p[2]) / (2.0 * k);
    let dpb = (3.0 * p[m] - 4.0 * p[m - 1] + p[m - 2]) / (2.0 * k);
    let va = -(dpa + potential.partial([prof.a, 0.0], 0));
    let vb = -(dpb + potential.partial([prof.b, 0.0], 0));
    Ok((va, vb))
}

#[derive(Debug, Clone, PartialEq)]
pub enum FrontEvent {
    Moved(FrontState),
    /// The patch collapsed during the step ending at `t`.
    Extinct { t: f64, a: f64, b: f64 },
}

/// Advances both ends by `dt` (Heun or forward Euler) and re-solves the pressure.
pub fn evolve_front(
    front: &FrontState,
    potential: &Potential,
    law: &GrowthLaw,
    dt: f64,
    opts: &FrontOptions,
) -> Result<FrontEvent> {
    if !(dt > 0.0) {
        return Err(Error::invalid("front step must be positive"));
    }
    let (a, b) = (front.a(), front.b());
    let (va, vb) = front_velocity(front, potential)?;
    if dt * va.abs().max(vb.abs()) >= 0.25 * (b - a) {
        return Err(Error::invalid(format!(
            "step {dt:e} moves a front by more than a quarter of the width {:e}",
            b - a
        )));
    }
    let t = front.t + dt;
    let (mut a1, mut b1) = (a + dt * va, b + dt * vb);
    if b1 - a1 <= opts.min_width {
        return Ok(FrontEvent::Extinct { t, a: a1, b: b1 });
    }
    if opts.heun {
        let pred = FrontState::new(t, a1, b1, potential, law, opts)?;
        let (va1, vb1) = front_velocity(&pred, potential)?;
        a1 = a + 0.5 * dt * (va + va1);
        b1 = b + 0.5 * dt * (vb + vb1);
        if b1 - a1 <= opts.min_width {
            return Ok(FrontEvent::Extinct { t, a: a1, b: b1 });
        }
    }
    Ok(FrontEvent::Moved(FrontState::new(t, a1, b1, potential, law, opts)?))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FrontRow {
    pub t: f64,
    pub a: f64,
    pub b: f64,
    pub p_center: f64,
    pub da_dt: f64,
    pub db_dt: f64,
}

#[derive(Debug, Clone)]
pub struct FrontTrajectory {
    /// One row per step, the initial state first.
    pub rows: Vec<FrontRow>,
    /// Front states at `0` and at each requested snapshot time reached.
    pub snapshots: Vec<FrontState>,
    pub extinct_at: Option<f64>,
}

fn front_row(front: &FrontState, potential: &Potential) -> Result<FrontRow> {
    let (da_dt, db_dt) = front_velocity(front, potential)?;
    Ok(FrontRow { t: front.t, a: front.a(), b: front.b(), p_center: front.profile.center_value(), da_dt, db_dt })
}

/// Tracks the fronts up to `horizon`, landing on each snapshot time.
pub fn track_front(
    initial: FrontState,
    potential: &Potential,
    law: &GrowthLaw,
    dt: f64,
    horizon: f64,
    snapshot_times: &[f64],
    opts: &FrontOptions,
) -> Result<FrontTrajectory> {
    let schedule = schedule(snapshot_times, horizon);
    let mut rows = vec![front_row(&initial, potential)?];
    let mut snapshots = vec![initial.clone()];
    let mut front = initial;
    for target in schedule {
        while front.t < target {
            let step = if front.t + dt >= target * (1.0 - 1e-13) { target - front.t } else { dt };
            match evolve_front(&front, potential, law, step, opts)? {
                FrontEvent::Moved(mut next) => {
                    if step != dt {
                        next.t = target;
                    }
                    front = next;
                    rows.push(front_row(&front, potential)?);
                }
                FrontEvent::Extinct { t, .. } => {
                    return Ok(FrontTrajectory { rows, snapshots, extinct_at: Some(t) });
                }
            }
        }
        snapshots.push(front.clone());
    }
    Ok(FrontTrajectory { rows, snapshots, extinct_at: None })
}

pub fn write_front_csv<W: Write>(mut w: W, rows: &[FrontRow]) -> Result<()> {
    writeln!(w, "t,a,b,p_center,da_dt,db_dt")?;
    for r in rows {
        writeln!(w, "{:.15e},{:.15e},{:.15e},{:.15e},{:.15e},{:.15e}", r.t, r.a, r.b, r.p_center, r.da_dt, r.db_dt)?;
    }
    Ok(())
}

/// Left and right crossings of `level` in a one-dimensional field, by linear
/// interpolation between cell centres.
pub fn front_positions(n: &Field, level: f64) -> Option<(f64, f64)> {
    let g = n.grid();
    let v = n.values();
    let first = v.iter().position(|&x| x >= level)?;
    let last = v.iter().rposition(|&x| x >= level)?;
    let h = g.h();
    let left = if first == 0 {
        g.center(0)[0]
    } else {
        let (lo, hi) = (v[first - 1], v[first]);
        g.center(first)[0] - h * (hi - level) / (hi - lo)
    };
    let right = if last + 1 == v.len() {
        g.center(last)[0]
    } else {
        let (hi, lo) = (v[last], v[last + 1]);
        g.center(last)[0] + h * (hi - level) / (hi - lo)
    };
    Some((left, right))
}

fn schedule(times: &[f64], horizon: f64) -> Vec<f64> {
    let mut s: Vec<f64> = times.iter().copied().filter(|&t| t > 0.0 && t < horizon).collect();
    if horizon > 0.0 {
        s.push(horizon);
    }
    s.sort_by(|a, b| a.partial_cmp(b).expect("finite snapshot times"));
    s.dedup_by(|a, b| (*a - *b).abs() <= 1e-14 * horizon.max(1.0));
    s
}

// ---------------------------------------------------------------------------
// Limit density stepper

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SweepOrder {
    /// Lexicographic, x fastest.
    Forward,
    Backward,
    /// Checkerboard: even `i + j` first.
    RedBlack,
}

impl std::str::FromStr for SweepOrder {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "forward" => Ok(SweepOrder::Forward),
            "backward" => Ok(SweepOrder::Backward),
            "red-black" => Ok(SweepOrder::RedBlack),
            _ => Err(Error::invalid(format!("unknown sweep order `{s}`"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LimitOptions {
    /// Step size; by default half a cell per unit speed.
    pub dt: Option<f64>,
    /// Bound on `max |min(p, 1 - n)|` after the projection.
    pub tolerance: f64,
    pub max_sweeps: usize,
    pub order: SweepOrder,
    /// Relaxation factor; by default the SOR optimum for the active region.
    pub omega: Option<f64>,
}

impl Default for LimitOptions {
    fn default() -> Self {
        LimitOptions { dt: None, tolerance: 1e-10, max_sweeps: 10_000, order: SweepOrder::Forward, omega: None }
    }
}

impl LimitOptions {
    pub fn step_size(&self, grid: &GridSpec, potential: &Potential) -> f64 {
        self.dt.unwrap_or_else(|| 0.5 * grid.h() / (1.0 + potential.norms().drift_speed))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LimitState {
    pub t: f64,
    pub n_inf: Field,
    pub p_inf: Field,
}

impl LimitState {
    pub fn to_state(&self) -> State {
        State { t: self.t, n: self.n_inf.clone(), p: self.p_inf.clone() }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LimitStepReport {
    pub sweeps: usize,
    pub violation: f64,
    pub clamped_mass: f64,
    /// `∫ n G(p)` applied (per unit time).
    pub source: f64,
    /// Boundary outflow by drift and pressure (per unit time).
    pub outflow: f64,
    pub mass_before: f64,
    pub mass_after: f64,
}

impl LimitStepReport {
    pub fn balance_error(&self, dt: f64) -> f64 {
        let expected = dt * (self.source - self.outflow);
        ((self.mass_after - self.mass_before) - expected).abs() / self.mass_before.max(f64::MIN_POSITIVE)
    }
}

/// Complementarity problem `p >= 0`, `w(p) >= 0`, `p w = 0` with
/// `w_i = b_i - τ (Δ_h p)_i - τ ν_i G(p_i)`, zero pressure outside the grid.
///
/// Pressure vectors carry one trailing ghost slot that stays zero; `nbrs`
/// points missing neighbours at it so the stencil needs no branches.
struct Lcp<'a> {
    grid: &'a GridSpec,
    nbrs: &'a [[usize; 4]],
    law: &'a GrowthLaw,
    tau: f64,
    b: &'a [f64],
    nu: &'a [f64],
    /// Cells allowed to carry pressure.
    free: Option<&'a [bool]>,
}

struct LcpOutcome {
    sweeps: usize,
    violation: f64,
}

/// Sweeps between convergence checks.
const CHECK_EVERY: usize = 4;
/// Cells added on each side of the candidate box before sweeping.
const WINDOW_MARGIN: usize = 4;

impl Lcp<'_> {
    fn w(&self, p: &[f64], idx: usize) -> f64 {
        let h2 = self.grid.h() * self.grid.h();
        let d2 = 2.0 * self.grid.dim() as f64;
        let [a, b, c, d] = self.nbrs[idx];
        let s = p[a] + p[b] + p[c] + p[d];
        let pi = p[idx];
        self.b[idx] - self.tau * (s - d2 * pi) / h2 - self.tau * self.nu[idx] * self.law.eval(pi)
    }

    fn is_free(&self, idx: usize) -> bool {
        self.free.map_or(true, |f| f[idx])
    }

    fn violation(&self, p: &[f64], cells: &[usize]) -> f64 {
        cells
            .iter()
            .filter(|&&idx| self.is_free(idx))
            .map(|&idx| p[idx].min(self.w(p, idx)).abs())
            .fold(0.0, f64::max)
    }

    /// Cells of `order` inside the box around `{b <= 0} ∪ {p > 0}`, widened by
    /// [`WINDOW_MARGIN`]; pressure cannot appear far from either set in one step.
    fn window(&self, p: &[f64], order: &[usize]) -> Vec<usize> {
        let g = self.grid;
        let mut lo = [usize::MAX; 2];
        let mut hi = [0usize; 2];
        for idx in 0..g.len() {
            if self.is_free(idx) && (self.b[idx] <= 0.0 || p[idx] > 0.0) {
                let (i, j) = g.ij(idx);
                lo = [lo[0].min(i), lo[1].min(j)];
                hi = [hi[0].max(i), hi[1].max(j)];
            }
        }
        if lo[0] == usize::MAX {
            return Vec::new();
        }
        let lo = lo.map(|v| v.saturating_sub(WINDOW_MARGIN));
        let hi = hi.map(|v| v + WINDOW_MARGIN);
        order
            .iter()
            .copied()
            .filter(|&idx| {
                let (i, j) = g.ij(idx);
                self.is_free(idx) && (lo[0]..=hi[0]).contains(&i) && (lo[1]..=hi[1]).contains(&j)
            })
            .collect()
    }

    /// Projected SOR on the window, confirmed by a check over every free cell;
    /// if that check fails the remaining budget is spent on the whole grid.
    fn solve(&self, p: &mut [f64], order: &[usize], omega: f64, tol: f64, max_sweeps: usize) -> Result<LcpOutcome> {
        let len = self.grid.len();
        debug_assert_eq!(p.len(), len + 1);
        for idx in 0..len {
            if !self.is_free(idx) {
                p[idx] = 0.0;
            }
        }
        let everywhere: Vec<usize> = order.iter().copied().filter(|&i| self.is_free(i)).collect();
        let window = self.window(p, order);
        let mut cells: &[usize] = &window;
        let h2 = self.grid.h() * self.grid.h();
        let diag = self.tau * 2.0 * self.grid.dim() as f64 / h2;
        let mut history = Vec::new();
        let mut sweeps = 0;
        let mut violation = self.violation(p, &everywhere);
        while violation > tol {
            if sweeps >= max_sweeps {
                return Err(Error::NoConvergence { solver: "projected SOR", iterations: sweeps, last: violation, history });
            }
            for &idx in cells {
                let pi = p[idx];
                let w = self.w(p, idx);
                let dw = diag - self.tau * self.nu[idx] * self.law.derivative(pi);
                p[idx] = (pi - omega * w / dw).max(0.0);
            }
            sweeps += 1;
            if sweeps % CHECK_EVERY == 0 || sweeps >= max_sweeps {
                violation = self.violation(p, cells);
                if violation <= tol && cells.len() < everywhere.len() {
                    violation = self.violation(p, &everywhere);
                    if violation > tol {
                        cells = &everywhere;
                    }
                }
                history.push(violation);
            }
        }
        Ok(LcpOutcome { sweeps, violation })
    }
}

/// Neighbour table with missing neighbours pointing at the ghost slot `len`.
fn neighbours(grid: &GridSpec) -> Vec<[usize; 4]> {
    let (nx, ny, len) = (grid.nx(), grid.ny(), grid.len());
    (0..len)
        .map(|idx| {
            let (i, j) = grid.ij(idx);
            let mut n = [len; 4];
            if i > 0 {
                n[0] = idx - 1;
            }
            if i + 1 < nx {
                n[1] = idx + 1;
            }
            if grid.dim() == 2 {
                if j > 0 {
                    n[2] = idx - nx;
                }
                if j + 1 < ny {
                    n[3] = idx + nx;
                }
            }
            n
        })
        .collect()
}

fn sweep_order(grid: &GridSpec, order: SweepOrder) -> Vec<usize> {
    let len = grid.len();
    match order {
        SweepOrder::Forward => (0..len).collect(),
        SweepOrder::Backward => (0..len).rev().collect(),
        SweepOrder::RedBlack => {
            let parity = |idx: usize| {
                let (i, j) = grid.ij(idx);
                (i + j) % 2
            };
            (0..len).filter(|&i| parity(i) == 0).chain((0..len).filter(|&i| parity(i) == 1)).collect()
        }
    }
}

/// SOR optimum for a Laplacian on the bounding box of `active` cells.
fn default_omega(grid: &GridSpec, active: impl Iterator<Item = usize>) -> f64 {
    let mut lo = [usize::MAX; 2];
    let mut hi = [0usize; 2];
    let mut any = false;
    for idx in active {
        any = true;
        let (i, j) = grid.ij(idx);
        lo = [lo[0].min(i), lo[1].min(j)];
        hi = [hi[0].max(i), hi[1].max(j)];
    }
    if !any {
        return 1.0;
    }
    let width = (hi[0] - lo[0]).max(hi[1] - lo[1]) + 2;
    2.0 / (1.0 + (std::f64::consts::PI / width as f64).sin())
}

/// Reusable limit stepper for a fixed grid, potential and growth law.
pub struct LimitStepper<'a> {
    grid: GridSpec,
    law: &'a GrowthLaw,
    drift: Drift,
    opts: LimitOptions,
    order: Vec<usize>,
    nbrs: Vec<[usize; 4]>,
    edge: Vec<usize>,
}

impl<'a> LimitStepper<'a> {
    pub fn new(grid: &GridSpec, potential: &Potential, law: &'a GrowthLaw, opts: LimitOptions) -> Self {
        LimitStepper {
            grid: *grid,
            law,
            drift: Drift::new(grid, potential),
            opts,
            order: sweep_order(grid, opts.order),
            nbrs: neighbours(grid),
            edge: (0..grid.len()).filter(|&i| grid.layer(i) < EDGE_LAYERS).collect(),
        }
    }

    fn omega(&self, active: impl Iterator<Item = usize>) -> f64 {
        self.opts.omega.unwrap_or_else(|| default_omega(&self.grid, active))
    }

    /// Pressure of a limit density at rest: the obstacle problem
    /// `-Δp - n G(p) = ∇·(n∇Φ)` on the saturated cells, `p = 0` elsewhere.
    pub fn initial_pressure(&self, n: &Field) -> Result<Field> {
        let g = &self.grid;
        let free: Vec<bool> = n.values().iter().map(|&v| v >= 1.0 - 1e-12).collect();
        let mut div = vec![0.0; g.len()];
        self.drift.add_divergence(g, n.values(), &mut div);
        let b: Vec<f64> = div.iter().map(|v| -v).collect();
        let lcp = Lcp { grid: g, nbrs: &self.nbrs, law: self.law, tau: 1.0, b: &b, nu: n.values(), free: Some(&free) };
        let mut p = vec![0.0; g.len() + 1];
        let omega = self.omega((0..g.len()).filter(|&i| free[i]));
        lcp.solve(&mut p, &self.order, omega, 1e-9, 50 * self.opts.max_sweeps)?;
        p.truncate(g.len());
        Ok(Field::from_values_unchecked(g, p))
    }

    pub fn step(&self, state: &LimitState, dt: f64) -> Result<(LimitState, LimitStepReport)> {
        let g = &self.grid;
        let vol = g.cell_volume();
        let n = state.n_inf.values();
        let mut div = vec![0.0; g.len()];
        let drift_out = self.drift.add_divergence(g, n, &mut div);
        let b: Vec<f64> = n.iter().zip(&div).map(|(v, d)| 1.0 - v - dt * d).collect();
        let lcp = Lcp { grid: g, nbrs: &self.nbrs, law: self.law, tau: dt, b: &b, nu: n, free: None };
        let mut p = state.p_inf.values().to_vec();
        p.push(0.0);
        let omega = self.omega((0..g.len()).filter(|&i| b[i] <= 0.0 || p[i] > 0.0));
        let out = lcp.solve(&mut p, &self.order, omega, self.opts.tolerance, self.opts.max_sweeps)?;

        let (mut mass_before, mut mass_after, mut source, mut clamped) = (0.0, 0.0, 0.0, 0.0);
        let mut next = vec![0.0; g.len()];
        for idx in 0..g.len() {
            mass_before += n[idx];
            source += n[idx] * self.law.eval(p[idx]);
            let mut v = 1.0 - lcp.w(&p, idx);
            if v > 1.0 {
                clamped += v - 1.0;
                v = 1.0;
            } else if v < 0.0 {
                clamped -= v;
                v = 0.0;
            }
            next[idx] = v;
            mass_after += v;
        }
        // pressure leaving through the zero ghost layer
        let h = g.h();
        let mut pressure_out = 0.0;
        for idx in 0..g.len() {
            let (i, j) = g.ij(idx);
            let mut faces = (i == 0) as usize + (i + 1 == g.nx()) as usize;
            if g.dim() == 2 {
                faces += (j == 0) as usize + (j + 1 == g.ny()) as usize;
            }
            pressure_out += faces as f64 * p[idx] / h;
        }
        pressure_out *= h.powi(g.dim() as i32 - 1);

        if let Some(&i) = self.edge.iter().find(|&&i| next[i] > SUPPORT_THRESHOLD) {
            return Err(Error::GridTooSmall { index: i, layers: EDGE_LAYERS, t: state.t + dt });
        }
        let report = LimitStepReport {
            sweeps: out.sweeps,
            violation: out.violation,
            clamped_mass: clamped * vol,
            source: source * vol,
            outflow: drift_out + pressure_out,
            mass_before: mass_before * vol,
            mass_after: mass_after * vol,
        };
        p.truncate(g.len());
        let state = LimitState {
            t: state.t + dt,
            n_inf: Field::from_values_unchecked(g, next),
            p_inf: Field::from_values_unchecked(g, p),
        };
        Ok((state, report))
    }
}

/// One transport-projection step of the limit density.
pub fn limit_step(
    state: &LimitState,
    potential: &Potential,
    law: &GrowthLaw,
    dt: f64,
    opts: &LimitOptions,
) -> Result<(LimitState, LimitStepReport)> {
    LimitStepper::new(state.n_inf.grid(), potential, law, *opts).step(state, dt)
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct LimitLog {
    pub steps: usize,
    pub dt: f64,
    pub total_sweeps: usize,
    pub max_sweeps_per_step: usize,
    pub max_violation: f64,
    pub clamped_mass: f64,
    pub max_balance_error: f64,
    pub time_series: Vec<f64>,
    pub mass_series: Vec<f64>,
    pub wall_time_s: f64,
}

#[derive(Debug, Clone)]
pub struct LimitTrajectory {
    pub snapshots: Vec<LimitState>,
    pub log: LimitLog,
}

/// Runs the limit stepper from `n0` to `horizon`, landing on snapshot times.
pub fn run_limit(
    potential: &Potential,
    law: &GrowthLaw,
    n0: &Field,
    horizon: f64,
    snapshot_times: &[f64],
    opts: &LimitOptions,
) -> Result<LimitTrajectory> {
    let start = Instant::now();
    let grid = *n0.grid();
    if let Some(i) = n0.values().iter().position(|&v| !(0.0..=1.0 + 1e-12).contains(&v)) {
        return Err(Error::Domain { index: i, message: "limit density must lie in [0, 1]".into() });
    }
    let stepper = LimitStepper::new(&grid, potential, law, *opts);
    let p0 = stepper.initial_pressure(n0)?;
    let mut state = LimitState { t: 0.0, n_inf: n0.clone(), p_inf: p0 };
    let dt = opts.step_size(&grid, potential);
    let mut log = LimitLog { dt, ..LimitLog::default() };
    log.time_series.push(0.0);
    log.mass_series.push(n0.integrate());
    let mut snapshots = vec![state.clone()];
    for target in schedule(snapshot_times, horizon) {
        while state.t < target {
            let landing = state.t + dt >= target * (1.0 - 1e-13);
            let step = if landing { target - state.t } else { dt };
            let (mut next, rep) = stepper.step(&state, step)?;
            if landing {
                next.t = target;
            }
            state = next;
            log.steps += 1;
            log.total_sweeps += rep.sweeps;
            log.max_sweeps_per_step = log.max_sweeps_per_step.max(rep.sweeps);
            log.max_violation = log.max_violation.max(rep.violation);
            log.clamped_mass += rep.clamped_mass;
            log.max_balance_error = log.max_balance_error.max(rep.balance_error(step));
            log.time_series.push(state.t);
            log.mass_series.push(rep.mass_after);
        }
        snapshots.push(state.clone());
    }
    log.wall_time_s = start.elapsed().as_secs_f64();
    Ok(LimitTrajectory { snapshots, log })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::PotentialKind;

    fn line_potential(kind: PotentialKind) -> Potential {
        let g = GridSpec::centered(1, 400, 8.0).unwrap();
        Potential::new(kind, &g).unwrap()
    }

    fn linear() -> GrowthLaw {
        GrowthLaw::linear(1.0, 1.0).unwrap()
    }

    #[test]
    fn cosh_profile() {
        let pot = line_potential(PotentialKind::Zero);
        let prof = solve_stationary_pressure(-1.0, 1.0, 2000, &pot, &linear()).unwrap();
        let exact = 1.0 - 1.0 / 1f64.cosh();
        assert!((prof.p[1000] - exact).abs() <= 1e-8, "{}", prof.p[1000] - exact);
        assert!((prof.center_value() - 0.3519457).abs() < 1e-7);
        for (i, &v) in prof.p.iter().enumerate() {
            let x = -1.0 + i as f64 * prof.spacing();
            assert!((v - (1.0 - x.cosh() / 1f64.cosh())).abs() < 1e-9);
        }
    }

    #[test]
    fn quadratic_well_profile_is_exact() {
        let pot = line_potential(PotentialKind::QuadraticWell { lambda: 2.0 });
        let prof = solve_stationary_pressure(-1.5, 1.5, 60, &pot, &GrowthLaw::Zero).unwrap();
        for (i, &v) in prof.p.iter().enumerate() {
            let x = -1.5 + i as f64 * prof.spacing();
            assert!((v - (2.25 - x * x)).abs() < 1e-11);
        }
    }

    #[test]
    fn narrow_interval_has_small_pressure() {
        let pot = line_potential(PotentialKind::Zero);
        let mut last = f64::INFINITY;
        for &w in &[1e-1, 1e-2, 1e-3] {
            let prof = solve_stationary_pressure(-w / 2.0, w / 2.0, 100, &pot, &linear()).unwrap();
            let max = prof.p.iter().copied().fold(0.0, f64::max);
            assert!(max < last && max <= w * w);
            last = max;
        }
    }

    #[test]
    fn tabulated_law_converges_by_newton() {
        let pot = line_potential(PotentialKind::Zero);
        let law = GrowthLaw::tabulated(&[(0.0, 1.0), (0.5, 0.6), (1.0, 0.0), (2.0, -2.0)], 0.5, 1.0).unwrap();
        let prof = solve_stationary_pressure(-1.0, 1.0, 400, &pot, &law).unwrap();
        let k = prof.spacing();
        for i in 1..400 {
            let lhs = -(prof.p[i - 1] - 2.0 * prof.p[i] + prof.p[i + 1]) / (k * k);
            assert!((lhs - law.eval(prof.p[i])).abs() < 1e-3);
        }
    }

    #[test]
    fn negative_pressure_is_a_modeling_error() {
        let pot = line_potential(PotentialKind::QuadraticWell { lambda: -1.0 });
        let r = solve_stationary_pressure(-1.0, 1.0, 100, &pot, &GrowthLaw::Zero);
        assert!(matches!(r, Err(Error::Modeling(_))));
    }

    #[test]
    fn velocity_of_cosh_profile() {
        let pot = line_potential(PotentialKind::Zero);
        let f = FrontState::new(0.0, -1.0, 1.0, &pot, &linear(), &FrontOptions::default()).unwrap();
        let (va, vb) = front_velocity(&f, &pot).unwrap();
        let t = 1f64.tanh();
        assert!((vb - t).abs() < 1e-6 && (va + t).abs() < 1e-6, "{va} {vb}");
    }

    #[test]
    fn motionless_front() {
        let opts = FrontOptions { mesh: 64, ..FrontOptions::default() };
        let zero = line_potential(PotentialKind::Zero);
        let f = FrontState::new(0.0, -1.0, 1.0, &zero, &GrowthLaw::Zero, &opts).unwrap();
        assert_eq!(front_velocity(&f, &zero).unwrap(), (0.0, 0.0));
        match evolve_front(&f, &zero, &GrowthLaw::Zero, 0.1, &opts).unwrap() {
            FrontEvent::Moved(g) => assert_eq!((g.a(), g.b()), (-1.0, 1.0)),
            e => panic!("{e:?}"),
        }
    }

    #[test]
    fn pure_drift_translates_rigidly() {
        let opts = FrontOptions { mesh: 64, ..FrontOptions::default() };
        let tilt = line_potential(PotentialKind::Tilt { slope: [0.5, 0.0] });
        let f = FrontState::new(0.0, -1.0, 1.0, &tilt, &GrowthLaw::Zero, &opts).unwrap();
        assert_eq!(front_velocity(&f, &tilt).unwrap(), (-0.5, -0.5));
        let traj = track_front(f, &tilt, &GrowthLaw::Zero, 0.01, 0.5, &[], &opts).unwrap();
        for r in &traj.rows {
            assert!((r.b - r.a - 2.0).abs() < 1e-12 * (1.0 + r.t * 100.0));
        }
        let last = traj.rows.last().unwrap();
        assert!((last.t - 0.5).abs() < 1e-15);
        assert!((last.a + 1.25).abs() < 1e-12 && (last.b - 0.75).abs() < 1e-12);
    }

    #[test]
    fn collapsing_interval_is_extinct() {
        let well = line_potential(PotentialKind::QuadraticWell { lambda: 1.0 });
        let opts = FrontOptions { mesh: 64, min_width: 1.5e-3, heun: false };
        let tiny = FrontState { t: 0.0, profile: PressureProfile { a: -1e-3, b: 1e-3, p: vec![0.0; 65] } };
        match evolve_front(&tiny, &well, &GrowthLaw::Zero, 0.3, &opts).unwrap() {
            FrontEvent::Extinct { t, a, b } => {
                assert_eq!(t, 0.3);
                assert!(b - a < 1.5e-3);
            }
            e => panic!("{e:?}"),
        }
    }

    #[test]
    fn coarse_profile_is_rejected() {
        let pot = line_potential(PotentialKind::Zero);
        let opts = FrontOptions { mesh: 6, ..FrontOptions::default() };
        let f = FrontState::new(0.0, -1.0, 1.0, &pot, &linear(), &opts).unwrap();
        assert!(matches!(front_velocity(&f, &pot), Err(Error::InvalidArgument(_))));
    }

    #[test]
    fn one_heun_step() {
        let pot = line_potential(PotentialKind::Zero);
        let opts = FrontOptions::default();
        let f = FrontState::new(0.0, -1.0, 1.0, &pot, &linear(), &opts).unwrap();
        let step = |dt: f64| match evolve_front(&f, &pot, &linear(), dt, &opts).unwrap() {
            FrontEvent::Moved(g) => g,
            e => panic!("{e:?}"),
        };
        let g = step(1e-3);
        let t = 1f64.tanh();
        assert!((g.b() - (1.0 + t * 1e-3)).abs() < 1e-6);
        assert!((g.a() + g.b()).abs() < 1e-12);
        // Heun error against a halved step is second order
        let half = step(5e-4);
        let h2 = match evolve_front(&half, &pot, &linear(), 5e-4, &opts).unwrap() {
            FrontEvent::Moved(g) => g,
            e => panic!("{e:?}"),
        };
        assert!((h2.b() - g.b()).abs() < 1e-8);
    }

    #[test]
    fn oversized_step_is_rejected() {
        let pot = line_potential(PotentialKind::Zero);
        let opts = FrontOptions { mesh: 100, ..FrontOptions::default() };
        let f = FrontState::new(0.0, -0.1, 0.1, &pot, &linear(), &opts).unwrap();
        assert!(evolve_front(&f, &pot, &linear(), 10.0, &opts).is_err());
    }

    #[test]
    fn front_csv_header() {
        let mut buf = Vec::new();
        write_front_csv(&mut buf, &[FrontRow { t: 0.0, a: -1.0, b: 1.0, p_center: 0.5, da_dt: -1.0, db_dt: 1.0 }])
            .unwrap();
        let s = String::from_utf8(buf).unwrap();
        assert!(s.starts_with("t,a,b,p_center,da_dt,db_dt\n"));
        assert_eq!(s.lines().count(), 2);
    }

    #[test]
    fn crossings_of_a_step() {
        let g = GridSpec::centered(1, 100, 4.0).unwrap();
        let n = Field::from_fn(&g, |x| if x[0].abs() < 1.0 { 1.0 } else { 0.0 });
        let (l, r) = front_positions(&n, 0.5).unwrap();
        assert!((l + 1.0).abs() < 1e-12 && (r - 1.0).abs() < 1e-12, "{l} {r}");
        assert!(front_positions(&Field::zeros(&g), 0.5).is_none());
    }

    fn limit_grid() -> GridSpec {
        GridSpec::centered(1, 240, 6.0).unwrap()
    }

    #[test]
    fn projection_is_inactive_below_saturation() {
        let g = limit_grid();
        let pot = Potential::zero(&g);
        let n = Field::from_fn(&g, |x| if x[0].abs() < 1.0 { 0.5 } else { 0.0 });
        let s = LimitState { t: 0.0, p_inf: Field::zeros(&g), n_inf: n.clone() };
        let (next, rep) = limit_step(&s, &pot, &linear(), 0.01, &LimitOptions::default()).unwrap();
        assert_eq!(rep.sweeps, 0);
        assert!(next.p_inf.values().iter().all(|&p| p == 0.0));
        for (a, b) in next.n_inf.values().iter().zip(n.values()) {
            assert!((a - b * 1.01).abs() < 1e-15);
        }
    }

    #[test]
    fn saturated_patch_grows_and_stays_a_patch() {
        let g = limit_grid();
        let pot = Potential::zero(&g);
        let n0 = Field::from_fn(&g, |x| if x[0].abs() < 1.0 { 1.0 } else { 0.0 });
        let traj = run_limit(&pot, &linear(), &n0, 0.1, &[0.05], &LimitOptions::default()).unwrap();
        assert!(traj.log.max_violation <= 1e-10);
        assert!(traj.log.max_balance_error <= 1e-8, "{}", traj.log.max_balance_error);
        let mut width = 2.0;
        for s in &traj.snapshots[1..] {
            let v = s.n_inf.values();
            let partial = v.iter().filter(|&&x| x > 1e-9 && x < 1.0 - 1e-9).count();
            assert!(partial <= 2, "{partial} partially filled cells");
            assert!(v.iter().all(|&x| (0.0..=1.0 + 1e-12).contains(&x)));
            let mut ok = true;
            for (&n, &p) in v.iter().zip(s.p_inf.values()) {
                ok &= p * (1.0 - n) <= 1e-8 && p >= -1e-12;
            }
            assert!(ok);
            let (l, r) = front_positions(&s.n_inf, 0.5).unwrap();
            assert!(r - l > width);
            width = r - l;
        }
    }

    #[test]
    fn orderings_agree() {
        let g = limit_grid();
        let pot = Potential::zero(&g);
        let n0 = Field::from_fn(&g, |x| if x[0].abs() < 1.0 { 1.0 } else { 0.0 });
        let run = |order| {
            let opts = LimitOptions { order, tolerance: 1e-12, ..LimitOptions::default() };
            run_limit(&pot, &linear(), &n0, 0.05, &[], &opts).unwrap()
        };
        let a = run(SweepOrder::Forward);
        for order in [SweepOrder::Backward, SweepOrder::RedBlack] {
            let b = run(order);
            let d: f64 = a.snapshots[1]
                .n_inf
                .values()
                .iter()
                .zip(b.snapshots[1].n_inf.values())
                .map(|(x, y)| (x - y).abs())
                .sum::<f64>()
                * g.h();
            assert!(d <= 1e-7, "{order:?}: {d}");
        }
    }

    #[test]
    fn sweep_budget_exhaustion_reports_history() {
        let g = limit_grid();
        let pot = Potential::zero(&g);
        let n0 = Field::from_fn(&g, |x| if x[0].abs() < 1.0 { 1.0 } else { 0.0 });
        let s = LimitState { t: 0.0, p_inf: Field::zeros(&g), n_inf: n0 };
        let opts = LimitOptions { max_sweeps: 3, ..LimitOptions::default() };
        match limit_step(&s, &pot, &linear(), 0.01, &opts) {
            Err(Error::NoConvergence { iterations, history, .. }) => {
                assert_eq!(iterations, 3);
                assert!(!history.is_empty());
            }
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn initial_pressure_matches_interval_solve() {
        let g = GridSpec::centered(1, 400, 4.0).unwrap();
        let pot = Potential::zero(&g);
        let n0 = Field::from_fn(&g, |x| if x[0].abs() < 1.0 { 1.0 } else { 0.0 });
        let law = linear();
        let stepper = LimitStepper::new(&g, &pot, &law, LimitOptions::default());
        let p = stepper.initial_pressure(&n0).unwrap();
        let exact = 1.0 - 1.0 / 1f64.cosh();
        let mid = p.values()[199].max(p.values()[200]);
        assert!((mid - exact).abs() < 5e-3, "{mid}");
    }
}
