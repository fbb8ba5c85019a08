//! Problem definition for `∂ₜn = ∇·(n∇p) + ∇·(n∇Φ) + n G(p)` with `p = n^γ`:
//! growth laws, potential presets, initial data, assumption checks and the
//! parabolic barrier that confines supports.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{Field, GridSpec};

/// Values below this count as outside the support.
pub const SUPPORT_THRESHOLD: f64 = 1e-14;

// ---------------------------------------------------------------------------
// Growth laws

#[derive(Debug, Clone, PartialEq)]
pub enum GrowthLaw {
    /// `G ≡ 0`. Violates the strict decrease required of growth laws; kept for
    /// the pure porous-medium test cases.
    Zero,
    /// `G(p) = alpha (p_max - p)`.
    Linear { alpha: f64, p_max: f64 },
    Tabulated(TabulatedGrowth),
}

/// Monotone cubic Hermite interpolant (Fritsch–Carlson slopes) through
/// `(p_k, G_k)` nodes, continued linearly outside the table.
#[derive(Debug, Clone, PartialEq)]
pub struct TabulatedGrowth {
    p: Vec<f64>,
    g: Vec<f64>,
    slope: Vec<f64>,
    alpha: f64,
    p_max: f64,
}

impl GrowthLaw {
    pub fn linear(alpha: f64, p_max: f64) -> Result<Self> {
        if !(alpha > 0.0 && alpha.is_finite()) || !(p_max > 0.0 && p_max.is_finite()) {
            return Err(Error::invalid("linear growth needs alpha > 0 and p_max > 0"));
        }
        Ok(GrowthLaw::Linear { alpha, p_max })
    }

    /// Builds a smooth tabulated law and checks `|G(p_max)| <= 1e-12` and
    /// `G' <= -alpha` on `[0, p_max]`.
    pub fn tabulated(nodes: &[(f64, f64)], alpha: f64, p_max: f64) -> Result<Self> {
        if nodes.len() < 2 {
            return Err(Error::invalid("tabulated growth needs at least two nodes"));
        }
        if nodes.windows(2).any(|w| w[1].0 <= w[0].0) {
            return Err(Error::invalid("tabulated growth nodes must have increasing pressure"));
        }
        if !(alpha > 0.0) || !(p_max > 0.0) {
            return Err(Error::invalid("tabulated growth needs alpha > 0 and p_max > 0"));
        }
        let p: Vec<f64> = nodes.iter().map(|n| n.0).collect();
        let g: Vec<f64> = nodes.iter().map(|n| n.1).collect();
        let slope = pchip_slopes(&p, &g);
        let law = GrowthLaw::Tabulated(TabulatedGrowth { p, g, slope, alpha, p_max });
        let check = law.check(1000);
        if check.g_at_p_max.abs() > 1e-12 {
            return Err(Error::invalid(format!("G(p_max) = {:e}, expected 0", check.g_at_p_max)));
        }
        if check.max_slope > -alpha {
            return Err(Error::invalid(format!("G' reaches {} > -alpha = {}", check.max_slope, -alpha)));
        }
        Ok(law)
    }

    pub fn eval(&self, p: f64) -> f64 {
        match self {
            GrowthLaw::Zero => 0.0,
            GrowthLaw::Linear { alpha, p_max } => alpha * (p_max - p),
            GrowthLaw::Tabulated(t) => t.eval(p),
        }
    }

    pub fn derivative(&self, p: f64) -> f64 {
        match self {
            GrowthLaw::Zero => 0.0,
            GrowthLaw::Linear { alpha, .. } => -alpha,
            GrowthLaw::Tabulated(t) => t.derivative(p),
        }
    }

    /// Homeostatic pressure; `None` for the zero law.
    pub fn p_max(&self) -> Option<f64> {
        match self {
            GrowthLaw::Zero => None,
            GrowthLaw::Linear { p_max, .. } => Some(*p_max),
            GrowthLaw::Tabulated(t) => Some(t.p_max),
        }
    }

    pub fn alpha(&self) -> f64 {
        match self {
            GrowthLaw::Zero => 0.0,
            GrowthLaw::Linear { alpha, .. } => *alpha,
            GrowthLaw::Tabulated(t) => t.alpha,
        }
    }

    pub fn is_zero(&self) -> bool {
        matches!(self, GrowthLaw::Zero)
    }

    /// `sup |G|` over `[0, upper]`.
    pub fn sup_abs(&self, upper: f64) -> f64 {
        match self {
            GrowthLaw::Zero => 0.0,
            GrowthLaw::Linear { .. } => self.eval(0.0).abs().max(self.eval(upper).abs()),
            GrowthLaw::Tabulated(_) => (0..=1000)
                .map(|k| self.eval(upper * k as f64 / 1000.0).abs())
                .fold(0.0, f64::max),
        }
    }

    /// Samples the law on `[0, p_max]` and reports `G(p_max)` and the largest
    /// finite-difference slope.
    pub fn check(&self, samples: usize) -> GrowthCheck {
        let Some(pm) = self.p_max() else {
            return GrowthCheck { g_at_p_max: 0.0, max_slope: 0.0 };
        };
        let dp = pm / samples as f64;
        let max_slope = (0..samples)
            .map(|k| {
                let a = k as f64 * dp;
                (self.eval(a + dp) - self.eval(a)) / dp
            })
            .fold(f64::NEG_INFINITY, f64::max);
        GrowthCheck { g_at_p_max: self.eval(pm), max_slope }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GrowthCheck {
    pub g_at_p_max: f64,
    pub max_slope: f64,
}

impl TabulatedGrowth {
    fn segment(&self, p: f64) -> usize {
        match self.p.partition_point(|&x| x <= p) {
            0 => 0,
            k if k >= self.p.len() => self.p.len() - 2,
            k => k - 1,
        }
    }

    fn eval(&self, p: f64) -> f64 {
        let last = self.p.len() - 1;
        if p <= self.p[0] {
            return self.g[0] + self.slope[0] * (p - self.p[0]);
        }
        if p >= self.p[last] {
            return self.g[last] + self.slope[last] * (p - self.p[last]);
        }
        let k = self.segment(p);
        let w = self.p[k + 1] - self.p[k];
        let s = (p - self.p[k]) / w;
        let (h00, h10, h01, h11) = (
            (1.0 + 2.0 * s) * (1.0 - s) * (1.0 - s),
            s * (1.0 - s) * (1.0 - s),
            s * s * (3.0 - 2.0 * s),
            s * s * (s - 1.0),
        );
        h00 * self.g[k] + h10 * w * self.slope[k] + h01 * self.g[k + 1] + h11 * w * self.slope[k + 1]
    }

    fn derivative(&self, p: f64) -> f64 {
        let last = self.p.len() - 1;
        if p <= self.p[0] {
            return self.slope[0];
        }
        if p >= self.p[last] {
            return self.slope[last];
        }
        let k = self.segment(p);
        let w = self.p[k + 1] - self.p[k];
        let s = (p - self.p[k]) / w;
        let d00 = 6.0 * s * s - 6.0 * s;
        let d10 = 3.0 * s * s - 4.0 * s + 1.0;
        let d01 = -d00;
        let d11 = 3.0 * s * s - 2.0 * s;
        (d00 * self.g[k] + d01 * self.g[k + 1]) / w + d10 * self.slope[k] + d11 * self.slope[k + 1]
    }
}

fn pchip_slopes(x: &[f64], y: &[f64]) -> Vec<f64> {
    let n = x.len();
    let delta: Vec<f64> = (0..n - 1).map(|k| (y[k + 1] - y[k]) / (x[k + 1] - x[k])).collect();
    if n == 2 {
        return vec![delta[0]; 2];
    }
    let mut m = vec![0.0; n];
    m[0] = delta[0];
    m[n - 1] = delta[n - 2];
    for k in 1..n - 1 {
        if delta[k - 1] * delta[k] <= 0.0 {
            m[k] = 0.0;
        } else {
            let w1 = 2.0 * (x[k + 1] - x[k]) + (x[k] - x[k - 1]);
            let w2 = (x[k + 1] - x[k]) + 2.0 * (x[k] - x[k - 1]);
            m[k] = (w1 + w2) / (w1 / delta[k - 1] + w2 / delta[k]);
        }
    }
    m
}

// ---------------------------------------------------------------------------
// Potentials

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum PotentialKind {
    Zero,
    /// `Φ = (λ/2)|x|²`.
    QuadraticWell { lambda: f64 },
    /// `Φ = A exp(-|x - x₀|² / (2 s²))`.
    GaussianBump { amplitude: f64, width: f64, center: [f64; 2] },
    /// `Φ = s·x`, a uniform drift `-s`.
    Tilt { slope: [f64; 2] },
}

/// Bounds of the potential on the computational box, fixed at construction.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PotentialNorms {
    /// `sup |∇Φ|` (Euclidean).
    pub grad_sup: f64,
    /// `Σ_k sup |∂_k Φ|`, the drift speed bound used by the CFL rule.
    pub drift_speed: f64,
    pub lap_sup: f64,
    /// `‖∇(ΔΦ)‖_{L^{12/5}}` over the box.
    pub grad_lap_l12_5: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Potential {
    kind: PotentialKind,
    dim: usize,
    norms: PotentialNorms,
}

impl Potential {
    pub fn zero(grid: &GridSpec) -> Self {
        Potential::new(PotentialKind::Zero, grid).expect("zero potential is always valid")
    }

    pub fn new(kind: PotentialKind, grid: &GridSpec) -> Result<Self> {
        let dim = grid.dim();
        match kind {
            PotentialKind::Zero => {}
            PotentialKind::QuadraticWell { lambda } if !lambda.is_finite() => {
                return Err(Error::invalid("well strength must be finite"))
            }
            PotentialKind::GaussianBump { amplitude, width, .. } if !(width > 0.0) || !amplitude.is_finite() => {
                return Err(Error::invalid("gaussian bump needs width > 0 and finite amplitude"))
            }
            PotentialKind::Tilt { slope } if slope.iter().any(|s| !s.is_finite()) => {
                return Err(Error::invalid("tilt slope must be finite"))
            }
            _ => {}
        }
        let mut pot = Potential {
            kind,
            dim,
            norms: PotentialNorms { grad_sup: 0.0, drift_speed: 0.0, lap_sup: 0.0, grad_lap_l12_5: 0.0 },
        };
        pot.norms = pot.compute_norms(grid);
        Ok(pot)
    }

    fn compute_norms(&self, grid: &GridSpec) -> PotentialNorms {
        let d = self.dim as f64;
        match self.kind {
            PotentialKind::Zero => PotentialNorms { grad_sup: 0.0, drift_speed: 0.0, lap_sup: 0.0, grad_lap_l12_5: 0.0 },
            PotentialKind::QuadraticWell { lambda } => {
                let axis_sup: Vec<f64> = (0..self.dim)
                    .map(|k| lambda.abs() * grid.origin()[k].abs().max((grid.origin()[k] + grid.extent(k)).abs()))
                    .collect();
                PotentialNorms {
                    grad_sup: axis_sup.iter().map(|v| v * v).sum::<f64>().sqrt(),
                    drift_speed: axis_sup.iter().sum(),
                    lap_sup: lambda.abs() * d,
                    grad_lap_l12_5: 0.0,
                }
            }
            PotentialKind::Tilt { .. } => {
                let g = self.gradient([0.0; 2]);
                PotentialNorms {
                    grad_sup: (g[0] * g[0] + g[1] * g[1]).sqrt(),
                    drift_speed: g[0].abs() + g[1].abs(),
                    lap_sup: 0.0,
                    grad_lap_l12_5: 0.0,
                }
            }
            PotentialKind::GaussianBump { amplitude, width, .. } => {
                let a = amplitude.abs();
                // |∂_k Φ| peaks at A e^{-1/2} / s; |ΔΦ| peaks at the centre
                let peak = a * (-0.5f64).exp() / width;
                let q = 12.0 / 5.0;
                let sum: f64 = (0..grid.len())
                    .map(|i| {
                        let g = self.grad_laplacian(grid.center(i));
                        (g[0] * g[0] + g[1] * g[1]).sqrt().powf(q)
                    })
                    .sum();
                PotentialNorms {
                    grad_sup: peak,
                    drift_speed: peak * d,
                    lap_sup: a * d / (width * width),
                    grad_lap_l12_5: (sum * grid.cell_volume()).powf(1.0 / q),
                }
            }
        }
    }

    pub fn kind(&self) -> PotentialKind {
        self.kind
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn norms(&self) -> PotentialNorms {
        self.norms
    }

    pub fn is_zero(&self) -> bool {
        matches!(self.kind, PotentialKind::Zero)
    }

    pub fn value(&self, x: [f64; 2]) -> f64 {
        match self.kind {
            PotentialKind::Zero => 0.0,
            PotentialKind::QuadraticWell { lambda } => 0.5 * lambda * (x[0] * x[0] + x[1] * x[1]),
            PotentialKind::Tilt { .. } => {
                let g = self.gradient(x);
                g[0] * x[0] + g[1] * x[1]
            }
            PotentialKind::GaussianBump { amplitude, width, center } => {
                let r2 = self.r2(x, center);
                amplitude * (-r2 / (2.0 * width * width)).exp()
            }
        }
    }

    pub fn gradient(&self, x: [f64; 2]) -> [f64; 2] {
        match self.kind {
            PotentialKind::Zero => [0.0; 2],
            PotentialKind::QuadraticWell { lambda } => {
                let mut g = [lambda * x[0], lambda * x[1]];
                if self.dim == 1 {
                    g[1] = 0.0;
                }
                g
            }
            PotentialKind::Tilt { slope } => {
                if self.dim == 1 {
                    [slope[0], 0.0]
                } else {
                    slope
                }
            }
            PotentialKind::GaussianBump { width, center, .. } => {
                let f = self.value(x) / (width * width);
                let mut g = [-(x[0] - center[0]) * f, -(x[1] - center[1]) * f];
                if self.dim == 1 {
                    g[1] = 0.0;
                }
                g
            }
        }
    }

    /// One component of `∇Φ`.
    pub fn partial(&self, x: [f64; 2], axis: usize) -> f64 {
        self.gradient(x)[axis]
    }

    pub fn laplacian(&self, x: [f64; 2]) -> f64 {
        let d = self.dim as f64;
        match self.kind {
            PotentialKind::Zero | PotentialKind::Tilt { .. } => 0.0,
            PotentialKind::QuadraticWell { lambda } => lambda * d,
            PotentialKind::GaussianBump { width, center, .. } => {
                let s2 = width * width;
                self.value(x) * (self.r2(x, center) / (s2 * s2) - d / s2)
            }
        }
    }

    pub fn grad_laplacian(&self, x: [f64; 2]) -> [f64; 2] {
        match self.kind {
            PotentialKind::Zero | PotentialKind::QuadraticWell { .. } | PotentialKind::Tilt { .. } => [0.0; 2],
            PotentialKind::GaussianBump { width, center, .. } => {
                let s2 = width * width;
                let d = self.dim as f64;
                let f = self.value(x) / (s2 * s2) * (d + 2.0 - self.r2(x, center) / s2);
                let mut g = [(x[0] - center[0]) * f, (x[1] - center[1]) * f];
                if self.dim == 1 {
                    g[1] = 0.0;
                }
                g
            }
        }
    }

    fn r2(&self, x: [f64; 2], c: [f64; 2]) -> f64 {
        let dx = x[0] - c[0];
        let dy = if self.dim == 2 { x[1] - c[1] } else { 0.0 };
        dx * dx + dy * dy
    }

    pub fn field(&self, grid: &GridSpec) -> Field {
        Field::from_fn(grid, |x| self.value(x))
    }

    pub fn laplacian_field(&self, grid: &GridSpec) -> Field {
        Field::from_fn(grid, |x| self.laplacian(x))
    }
}

// ---------------------------------------------------------------------------
// Initial data

#[derive(Debug, Clone, PartialEq)]
pub enum InitialData {
    /// `height · 1_{|x| <= radius}` on cell centres.
    Patch { radius: f64, height: f64 },
    /// `height · exp(-|x|²/width)`, zeroed where it drops below `cutoff`.
    Bump { height: f64, width: f64, cutoff: f64 },
    Custom { field: Field, support_radius: f64 },
}

impl InitialData {
    pub fn field(&self, grid: &GridSpec) -> Result<Field> {
        match self {
            InitialData::Patch { radius, height } => Ok(Field::from_fn(grid, |x| {
                if x[0] * x[0] + x[1] * x[1] <= radius * radius {
                    *height
                } else {
                    0.0
                }
            })),
            InitialData::Bump { height, width, cutoff } => Ok(Field::from_fn(grid, |x| {
                let v = height * (-(x[0] * x[0] + x[1] * x[1]) / width).exp();
                if v < *cutoff {
                    0.0
                } else {
                    v
                }
            })),
            InitialData::Custom { field, .. } => {
                if !field.grid().same_as(grid) {
                    return Err(Error::invalid("custom initial field lives on a different grid"));
                }
                Ok(field.clone())
            }
        }
    }

    /// Radius of a centred ball containing the support.
    pub fn support_radius(&self) -> f64 {
        match self {
            InitialData::Patch { radius, .. } => *radius,
            InitialData::Bump { height, width, cutoff } => {
                if height <= cutoff {
                    0.0
                } else {
                    (width * (height / cutoff).ln()).sqrt()
                }
            }
            InitialData::Custom { support_radius, .. } => *support_radius,
        }
    }

    pub fn max_value(&self, grid: &GridSpec) -> Result<f64> {
        Ok(self.field(grid)?.max().max(0.0))
    }

    /// Barenblatt profile of `∂ₜu = c Δu^m`, `c = γ/(γ+1)`, `m = γ+1`, at time `t0`.
    pub fn barenblatt(grid: &GridSpec, gamma: f64, constant: f64, t0: f64) -> Result<Self> {
        let b = Barenblatt::new(grid.dim(), gamma, constant);
        let field = Field::from_fn(grid, |x| b.density(x, t0));
        let support_radius = b.support_radius(t0) + grid.h();
        Ok(InitialData::Custom { field, support_radius })
    }

    /// Density `pressure^{1/γ}` for a prescribed compactly supported pressure.
    pub fn from_pressure(pressure: &Field, gamma: f64, support_radius: f64) -> Result<Self> {
        if let Some(i) = pressure.values().iter().position(|&v| v < 0.0) {
            return Err(Error::Domain { index: i, message: "negative pressure".into() });
        }
        let field = pressure.map(|p| if p > 0.0 { p.powf(1.0 / gamma) } else { 0.0 });
        Ok(InitialData::Custom { field, support_radius })
    }
}

/// Self-similar source solution of `∂ₜu = c Δu^m`.
#[derive(Debug, Clone, Copy)]
pub struct Barenblatt {
    dim: usize,
    m: f64,
    coeff: f64,
    constant: f64,
}

impl Barenblatt {
    /// Profile for the density equation with `γ`: exponent `γ + 1`, coefficient `γ/(γ+1)`.
    pub fn new(dim: usize, gamma: f64, constant: f64) -> Self {
        Barenblatt { dim, m: gamma + 1.0, coeff: gamma / (gamma + 1.0), constant }
    }

    fn exponents(&self) -> (f64, f64, f64) {
        let d = self.dim as f64;
        let alpha = d / (d * (self.m - 1.0) + 2.0);
        let beta = alpha / d;
        let k = alpha * (self.m - 1.0) / (2.0 * self.m * d);
        (alpha, beta, k)
    }

    pub fn density(&self, x: [f64; 2], t: f64) -> f64 {
        let (alpha, beta, k) = self.exponents();
        let tau = self.coeff * t;
        let r2 = x[0] * x[0] + if self.dim == 2 { x[1] * x[1] } else { 0.0 };
        let xi2 = r2 * tau.powf(-2.0 * beta);
        let base = self.constant - k * xi2;
        if base <= 0.0 {
            0.0
        } else {
            tau.powf(-alpha) * base.powf(1.0 / (self.m - 1.0))
        }
    }

    pub fn support_radius(&self, t: f64) -> f64 {
        let (_, beta, k) = self.exponents();
        (self.constant / k).sqrt() * (self.coeff * t).powf(beta)
    }

    /// Constant for which the support has radius `radius` at time `t`.
    pub fn constant_for_radius(dim: usize, gamma: f64, radius: f64, t: f64) -> f64 {
        let b = Barenblatt::new(dim, gamma, 1.0);
        let (_, beta, k) = b.exponents();
        k * (radius / (b.coeff * t).powf(beta)).powi(2)
    }
}

// ---------------------------------------------------------------------------
// Model parameters

#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams {
    pub gamma: f64,
    pub growth: GrowthLaw,
    pub potential: Potential,
    pub grid: GridSpec,
    /// Upper bound `n_M` of the initial density.
    pub n_max: f64,
    /// Radius of a centred ball containing `supp(n⁰)`.
    pub support_radius: f64,
    /// Initial radius `√(2R(0))` of the barrier ball; must exceed `support_radius`.
    pub barrier_radius: f64,
}

impl ModelParams {
    /// Barrier radius defaults to 1.5 × the support radius.
    pub fn new(
        gamma: f64,
        growth: GrowthLaw,
        potential: Potential,
        grid: GridSpec,
        n_max: f64,
        support_radius: f64,
    ) -> Self {
        ModelParams {
            gamma,
            growth,
            potential,
            grid,
            n_max,
            support_radius,
            barrier_radius: 1.5 * support_radius,
        }
    }

    pub fn with_barrier_radius(mut self, r: f64) -> Self {
        self.barrier_radius = r;
        self
    }

    /// Smallest admissible exponent, `max(1, 2 - 2/d)`.
    pub fn gamma_floor(dim: usize) -> f64 {
        1.0f64.max(2.0 - 2.0 / dim as f64)
    }

    pub fn gamma_admissible(&self) -> bool {
        self.gamma.is_finite() && self.gamma > Self::gamma_floor(self.grid.dim())
    }

    /// Bound on the initial pressure implied by `n⁰ <= n_M`.
    pub fn pressure_bound(&self) -> f64 {
        if self.n_max <= 0.0 {
            0.0
        } else {
            self.n_max.powf(self.gamma)
        }
    }

    /// Checks that the grid box contains the barrier ball at time `horizon`.
    pub fn check_domain(&self, horizon: f64) -> Result<()> {
        let r = domain_bound(self, horizon)?;
        if self.grid.contains_ball(r) {
            Ok(())
        } else {
            Err(Error::invalid(format!(
                "grid does not contain the confinement ball of radius {r:.4} at t = {horizon}"
            )))
        }
    }
}

/// `n^γ` for `n >= 0`, with `0^γ = 0`. Integer exponents use repeated
/// squaring, which is several times cheaper than `powf` in the stepper.
#[inline]
pub fn pressure_of(n: f64, gamma: f64) -> f64 {
    if n <= 0.0 {
        0.0
    } else if gamma.fract() == 0.0 && gamma <= 1024.0 {
        n.powi(gamma as i32)
    } else {
        n.powf(gamma)
    }
}

pub fn eval_pressure(n: &Field, gamma: f64) -> Result<Field> {
    let mut out = Vec::with_capacity(n.values().len());
    for (i, &v) in n.values().iter().enumerate() {
        if v < 0.0 {
            return Err(Error::Domain { index: i, message: format!("negative density {v:e}") });
        }
        out.push(pressure_of(v, gamma));
    }
    Ok(Field::from_values_unchecked(n.grid(), out))
}

pub fn eval_growth(p: &Field, law: &GrowthLaw) -> Field {
    p.map(|v| law.eval(v))
}

// ---------------------------------------------------------------------------
// Parabolic barrier

/// Barrier `Π = C (R(t) - |x|²/2)₊` with `R' = (2C + 1) R + M`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Supersolution {
    pub c: f64,
    /// The growth/potential part `(2/d)(G(0) + sup|ΔΦ|)` of `c`.
    pub c_growth: f64,
    /// The part of `c` that makes the barrier dominate the initial pressure.
    pub c_data: f64,
    /// `R(0)`.
    pub r0: f64,
    /// Source term `M = sup|∇Φ|² / 2`.
    pub m: f64,
}

impl Supersolution {
    /// Barrier with the smallest `C` allowed by the growth and potential terms.
    pub fn minimal(dim: usize, g0: f64, lap_phi_sup: f64, grad_phi_sup: f64, r0: f64) -> Self {
        let c = 2.0 / dim as f64 * (g0.max(0.0) + lap_phi_sup);
        Supersolution { c, c_growth: c, c_data: 0.0, r0, m: 0.5 * grad_phi_sup * grad_phi_sup }
    }

    pub fn rate(&self) -> f64 {
        2.0 * self.c + 1.0
    }

    pub fn r(&self, t: f64) -> f64 {
        let k = self.m / self.rate();
        (self.rate() * t).exp() * (self.r0 + k) - k
    }

    /// `√(2 R(t))`.
    pub fn radius(&self, t: f64) -> f64 {
        (2.0 * self.r(t)).sqrt()
    }

    pub fn barrier(&self, x: [f64; 2], t: f64) -> f64 {
        self.c * (self.r(t) - 0.5 * (x[0] * x[0] + x[1] * x[1])).max(0.0)
    }
}

/// Barrier constants for `params`. `C` is the larger of the growth/potential
/// minimum and `sup p⁰ / (R(0) - K²/2)`, so that `Π(0) >= p⁰` on the initial
/// support of radius `K`.
pub fn supersolution_constants(params: &ModelParams) -> Result<Supersolution> {
    let k = params.support_radius;
    let rb = params.barrier_radius;
    if !(rb > k) {
        return Err(Error::invalid(format!(
            "barrier radius {rb} must exceed the initial support radius {k}"
        )));
    }
    let norms = params.potential.norms();
    let r0 = 0.5 * rb * rb;
    let mut s = Supersolution::minimal(params.grid.dim(), params.growth.eval(0.0), norms.lap_sup, norms.grad_sup, r0);
    s.c_data = params.pressure_bound() / (r0 - 0.5 * k * k);
    s.c = s.c_growth.max(s.c_data);
    Ok(s)
}

/// Radius `√(2R(T))` of the ball that contains every support up to time `T`.
pub fn domain_bound(params: &ModelParams, horizon: f64) -> Result<f64> {
    if !(horizon >= 0.0) {
        return Err(Error::invalid("horizon must be nonnegative"));
    }
    Ok(supersolution_constants(params)?.radius(horizon))
}

// ---------------------------------------------------------------------------
// Assumption checks

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Verdict {
    Pass,
    Fail,
    /// Not applicable to this configuration.
    Info,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ValidationEntry {
    pub name: String,
    pub verdict: Verdict,
    pub value: f64,
    pub detail: String,
}

/// The γ-dependent initial-data quantities bounded uniformly by assumption.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct InitialRegularity {
    pub lap_n_pow_l1: f64,
    pub grad_p0_l2: f64,
    pub lap_p0_neg_l2: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ValidationReport {
    pub gamma: f64,
    pub entries: Vec<ValidationEntry>,
    pub initial_regularity: InitialRegularity,
    pub potential: PotentialNorms,
}

impl ValidationReport {
    pub fn passed(&self) -> bool {
        self.entries.iter().all(|e| e.verdict != Verdict::Fail)
    }

    pub fn entry(&self, name: &str) -> Option<&ValidationEntry> {
        self.entries.iter().find(|e| e.name == name)
    }
}

fn entry(name: &str, ok: bool, value: f64, detail: String) -> ValidationEntry {
    ValidationEntry {
        name: name.into(),
        verdict: if ok { Verdict::Pass } else { Verdict::Fail },
        value,
        detail,
    }
}

pub fn validate_assumptions(params: &ModelParams, n0: &Field) -> ValidationReport {
    let gamma = params.gamma;
    let floor = ModelParams::gamma_floor(params.grid.dim());
    let mut entries = vec![entry(
        "gamma",
        params.gamma_admissible(),
        gamma,
        format!("requires gamma > {floor}"),
    )];

    let (nmin, nmax) = (n0.min(), n0.max());
    entries.push(entry(
        "density-bounds",
        nmin >= 0.0 && nmax <= params.n_max,
        nmax,
        format!("min {nmin:e}, max {nmax:e}, n_M = {}", params.n_max),
    ));

    let p0 = n0.map(|v| pressure_of(v, gamma));
    let pmax0 = p0.max();
    entries.push(match params.growth.p_max() {
        Some(pm) => entry(
            "pressure-bounds",
            nmin >= 0.0 && pmax0 <= pm,
            pmax0,
            format!("max p0 {pmax0:e}, p_M = {pm}"),
        ),
        None => ValidationEntry {
            name: "pressure-bounds".into(),
            verdict: Verdict::Info,
            value: pmax0,
            detail: "zero growth law has no homeostatic pressure".into(),
        },
    });

    let k = params.support_radius;
    let outside = n0
        .values()
        .iter()
        .enumerate()
        .filter(|(i, &v)| {
            let x = n0.grid().center(*i);
            v != 0.0 && (x[0] * x[0] + x[1] * x[1]).sqrt() > k
        })
        .count();
    let touches_edge = n0.values().iter().enumerate().any(|(i, &v)| v > 0.0 && n0.grid().layer(i) < 3);
    entries.push(entry(
        "compact-support",
        outside == 0 && !touches_edge,
        n0.support_radius(0.0),
        format!("{outside} cells outside radius {k}; touches grid edge: {touches_edge}"),
    ));

    entries.push(if params.growth.is_zero() {
        ValidationEntry {
            name: "growth-law".into(),
            verdict: Verdict::Info,
            value: 0.0,
            detail: "zero growth law (pure porous-medium configuration)".into(),
        }
    } else {
        let c = params.growth.check(1000);
        let alpha = params.growth.alpha();
        entry(
            "growth-law",
            c.g_at_p_max.abs() <= 1e-12 && c.max_slope <= -alpha * (1.0 - 1e-12),
            c.max_slope,
            format!("G(p_M) = {:e}, max G' = {}, alpha = {alpha}", c.g_at_p_max, c.max_slope),
        )
    });

    let norms = params.potential.norms();
    entries.push(entry(
        "potential-regularity",
        norms.grad_sup.is_finite() && norms.lap_sup.is_finite() && norms.grad_lap_l12_5.is_finite(),
        norms.grad_lap_l12_5,
        format!("sup|grad phi| {}, sup|lap phi| {}", norms.grad_sup, norms.lap_sup),
    ));

    let u = n0.zip_map(&p0, |n, p| n * p);
    let lap_p0 = p0.laplacian();
    let initial_regularity = InitialRegularity {
        lap_n_pow_l1: u.laplacian().norm_lp(1.0).unwrap_or(f64::NAN),
        grad_p0_l2: p0.gradient_magnitude().norm_lp(2.0).unwrap_or(f64::NAN),
        lap_p0_neg_l2: lap_p0.map(|v| (-v).max(0.0)).norm_lp(2.0).unwrap_or(f64::NAN),
    };
    let finite = initial_regularity.lap_n_pow_l1.is_finite()
        && initial_regularity.grad_p0_l2.is_finite()
        && initial_regularity.lap_p0_neg_l2.is_finite();
    entries.push(entry(
        "initial-regularity",
        finite,
        initial_regularity.lap_n_pow_l1,
        format!(
            "|lap n^(g+1)|_1 = {:e}, |grad p0|_2 = {:e}, |(lap p0)_-|_2 = {:e}",
            initial_regularity.lap_n_pow_l1, initial_regularity.grad_p0_l2, initial_regularity.lap_p0_neg_l2
        ),
    ));

    ValidationReport { gamma, entries, initial_regularity, potential: norms }
}
