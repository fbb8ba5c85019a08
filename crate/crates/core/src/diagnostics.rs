//! Norms, residuals and bound proxies evaluated on snapshot sequences.
//!
//! Space integrals are cell sums; time integrals use the trapezoidal rule
//! over snapshot times.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::Field;
use crate::model::{GrowthLaw, ModelParams, Potential, SUPPORT_THRESHOLD};
use crate::pme::State;

/// `w = Δp + G(p)`.
pub fn ab_quantity(p: &Field, law: &GrowthLaw) -> Field {
    let lap = p.laplacian();
    lap.zip_map(p, |l, v| l + law.eval(v))
}

/// `|w|₋ = max(-w, 0)`.
pub fn negative_part(w: &Field) -> Field {
    w.map(|v| (-v).max(0.0))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Residual {
    pub integral: f64,
    pub pointwise_max: f64,
}

/// `∫|p (Δp + ΔΦ + G(p))|` over one snapshot, and its cellwise maximum.
pub fn complementarity_residual(state: &State, params: &ModelParams) -> Residual {
    complementarity_with(state, &params.growth, &params.potential)
}

fn complementarity_with(state: &State, law: &GrowthLaw, potential: &Potential) -> Residual {
    let grid = state.grid();
    let lap = state.p.laplacian();
    let (mut sum, mut max) = (0.0, 0.0f64);
    for (i, (&p, &l)) in state.p.values().iter().zip(lap.values()).enumerate() {
        if p == 0.0 {
            continue;
        }
        let phi = if potential.is_zero() { 0.0 } else { potential.laplacian(grid.center(i)) };
        let r = (p * (l + phi + law.eval(p))).abs();
        sum += r;
        max = max.max(r);
    }
    Residual { integral: sum * grid.cell_volume(), pointwise_max: max }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SaturationResidual {
    /// `∫ p (1 - n)₊`.
    pub integral: f64,
    pub pointwise_max: f64,
    /// `max |p^{(1+γ)/γ} - n p| / max(1, n p)` over cells.
    pub identity_error: f64,
}

pub fn saturation_residual(state: &State, gamma: f64) -> SaturationResidual {
    let grid = state.grid();
    let expo = (1.0 + gamma) / gamma;
    let (mut sum, mut max, mut ident) = (0.0, 0.0f64, 0.0f64);
    for (&n, &p) in state.n.values().iter().zip(state.p.values()) {
        if p == 0.0 {
            continue;
        }
        let r = p * (1.0 - n).max(0.0);
        sum += r;
        max = max.max(r);
        let np = n * p;
        ident = ident.max((p.powf(expo) - np).abs() / np.max(1.0));
    }
    SaturationResidual { integral: sum * grid.cell_volume(), pointwise_max: max, identity_error: ident }
}

/// Per-run summary. Serialized keys are part of the output format.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiagnosticsReport {
    pub gamma: f64,
    pub horizon: f64,
    pub sup_n: f64,
    pub sup_p: f64,
    /// Total variation of `n` at each snapshot.
    pub bv_space: Vec<f64>,
    /// `Σ_k ∫|n(t_{k+1}) - n(t_k)|`, the snapshot proxy for `‖∂ₜn‖_{L¹(Q_T)}`.
    pub l1_dt_n: f64,
    pub grad_p_l2_qt: f64,
    pub grad_p_l4_qt: f64,
    pub ab_l3: f64,
    pub lap_p_l1: f64,
    pub comp_residual: f64,
    pub sat_residual: f64,
    pub sat_residual_max: f64,
    pub identity_error: f64,
    pub support_radius_series: Vec<f64>,
}

fn trapezoid(times: &[f64], values: &[f64]) -> f64 {
    times
        .windows(2)
        .zip(values.windows(2))
        .map(|(t, v)| 0.5 * (t[1] - t[0]) * (v[0] + v[1]))
        .sum()
}

/// Space-time diagnostics of a snapshot sequence.
pub fn space_time_norms(snapshots: &[State], params: &ModelParams) -> Result<DiagnosticsReport> {
    if snapshots.len() < 2 {
        return Err(Error::invalid(format!("need at least 2 snapshots, got {}", snapshots.len())));
    }
    let law = &params.growth;
    let k = snapshots.len();
    let vol = snapshots[0].grid().cell_volume();
    let times: Vec<f64> = snapshots.iter().map(|s| s.t).collect();
    let (mut g2, mut g4, mut ab3, mut lap1, mut comp, mut sat) =
        (vec![0.0; k], vec![0.0; k], vec![0.0; k], vec![0.0; k], vec![0.0; k], vec![0.0; k]);
    let mut report = DiagnosticsReport {
        gamma: params.gamma,
        horizon: times[k - 1],
        sup_n: 0.0,
        sup_p: 0.0,
        bv_space: Vec::with_capacity(k),
        l1_dt_n: 0.0,
        grad_p_l2_qt: 0.0,
        grad_p_l4_qt: 0.0,
        ab_l3: 0.0,
        lap_p_l1: 0.0,
        comp_residual: 0.0,
        sat_residual: 0.0,
        sat_residual_max: 0.0,
        identity_error: 0.0,
        support_radius_series: Vec::with_capacity(k),
    };
    for (idx, s) in snapshots.iter().enumerate() {
        report.sup_n = report.sup_n.max(s.n.max());
        report.sup_p = report.sup_p.max(s.p.max());
        report.bv_space.push(s.n.total_variation());
        report.support_radius_series.push(s.n.support_radius(SUPPORT_THRESHOLD));

        let grad = s.p.gradient_magnitude();
        let (mut a2, mut a4) = (0.0, 0.0);
        for &g in grad.values() {
            let q = g * g;
            a2 += q;
            a4 += q * q;
        }
        g2[idx] = a2 * vol;
        g4[idx] = a4 * vol;

        let lap = s.p.laplacian();
        let (mut a3, mut l1) = (0.0, 0.0);
        for (&l, &p) in lap.values().iter().zip(s.p.values()) {
            let neg = (-(l + law.eval(p))).max(0.0);
            a3 += neg * neg * neg;
            l1 += l.abs();
        }
        ab3[idx] = a3 * vol;
        lap1[idx] = l1 * vol;

        comp[idx] = complementarity_residual(s, params).integral;
        let sr = saturation_residual(s, params.gamma);
        sat[idx] = sr.integral;
        report.sat_residual_max = report.sat_residual_max.max(sr.pointwise_max);
        report.identity_error = report.identity_error.max(sr.identity_error);

        if idx > 0 {
            let prev = &snapshots[idx - 1].n;
            let d: f64 = prev.values().iter().zip(s.n.values()).map(|(a, b)| (a - b).abs()).sum();
            report.l1_dt_n += d * vol;
        }
    }
    report.grad_p_l2_qt = trapezoid(&times, &g2).sqrt();
    report.grad_p_l4_qt = trapezoid(&times, &g4).powf(0.25);
    report.ab_l3 = trapezoid(&times, &ab3).cbrt();
    report.lap_p_l1 = trapezoid(&times, &lap1);
    report.comp_residual = trapezoid(&times, &comp);
    report.sat_residual = trapezoid(&times, &sat);
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::GridSpec;
    use crate::model::InitialData;
    use crate::pme::{run, SolverConfig};

    fn grid(cells: usize, extent: f64) -> GridSpec {
        GridSpec::centered(1, cells, extent).unwrap()
    }

    #[test]
    fn ab_quantity_of_zero_pressure() {
        let g = grid(50, 2.0);
        let law = GrowthLaw::linear(1.0, 1.0).unwrap();
        let w = ab_quantity(&Field::zeros(&g), &law);
        assert!(w.values().iter().all(|&v| v == 1.0));
        assert!(negative_part(&w).values().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn ab_quantity_exact_on_quadratic() {
        let g = grid(180, 1.8);
        let law = GrowthLaw::linear(1.0, 1.0).unwrap();
        let p = Field::from_fn(&g, |x| 1.0 - x[0] * x[0]);
        let w = ab_quantity(&p, &law);
        let neg = negative_part(&w);
        for i in 1..g.len() - 1 {
            let x = g.center(i)[0];
            assert!((w.values()[i] - (x * x - 2.0)).abs() < 1e-9, "cell {i}");
            assert!((neg.values()[i] - (2.0 - x * x)).abs() < 1e-9);
        }
    }

    #[test]
    fn ab_quantity_vanishes_at_homeostatic_pressure() {
        let g = grid(40, 2.0);
        let law = GrowthLaw::linear(2.0, 0.7).unwrap();
        let w = ab_quantity(&Field::constant(&g, 0.7), &law);
        for i in 1..g.len() - 1 {
            assert!(w.values()[i].abs() < 1e-12);
        }
    }

    fn params(g: GridSpec, gamma: f64, law: GrowthLaw) -> ModelParams {
        ModelParams::new(gamma, law, Potential::zero(&g), g, 1.0, 1.0)
    }

    #[test]
    fn residuals_vanish_without_pressure() {
        let g = grid(40, 4.0);
        let pr = params(g, 5.0, GrowthLaw::linear(1.0, 1.0).unwrap());
        let s = State::new(0.0, Field::zeros(&g), 5.0).unwrap();
        let c = complementarity_residual(&s, &pr);
        assert_eq!((c.integral, c.pointwise_max), (0.0, 0.0));
        let r = saturation_residual(&s, 5.0);
        assert_eq!((r.integral, r.pointwise_max), (0.0, 0.0));
    }

    #[test]
    fn saturation_residual_of_uniform_state() {
        let g = grid(10, 1.0);
        let s = State::new(0.0, Field::constant(&g, 0.9), 40.0).unwrap();
        let r = saturation_residual(&s, 40.0);
        let p = 0.9f64.powi(40);
        assert!((p - 1.478e-2).abs() < 1e-5);
        assert!((r.pointwise_max - 0.1 * p).abs() < 1e-15);
        assert!((r.integral - 0.1 * p).abs() < 1e-15);
        assert!(r.identity_error <= 1e-10);
    }

    #[test]
    fn identity_holds_on_random_states() {
        let g = grid(200, 2.0);
        for &gamma in &[1.5, 5.0, 40.0, 200.0] {
            let n = Field::from_fn(&g, |x| (0.5 + 0.5 * (7.3 * x[0]).sin()).clamp(0.0, 1.0));
            let s = State::new(0.0, n, gamma).unwrap();
            assert!(saturation_residual(&s, gamma).identity_error <= 1e-10);
        }
    }

    #[test]
    fn complementarity_of_cosh_profile_is_first_order() {
        let law = GrowthLaw::linear(1.0, 1.0).unwrap();
        let mut last = None;
        for &cells in &[200usize, 400, 800] {
            let g = grid(cells, 4.0);
            let pf = Field::from_fn(&g, |x| {
                if x[0].abs() < 1.0 {
                    1.0 - x[0].cosh() / 1f64.cosh()
                } else {
                    0.0
                }
            });
            let n = pf.map(|p| if p > 0.0 { 1.0 } else { 0.0 });
            let s = State { t: 0.0, n, p: pf };
            let r = complementarity_residual(&s, &params(g, 5.0, law.clone())).integral;
            let h = g.h();
            assert!(r <= 2.0 * h, "residual {r} at h = {h}");
            if let Some(prev) = last {
                assert!(r < prev);
            }
            last = Some(r);
        }
    }

    #[test]
    fn zero_trajectory_has_zero_norms() {
        let g = grid(30, 3.0);
        let pr = params(g, 4.0, GrowthLaw::Zero);
        let s0 = State::new(0.0, Field::zeros(&g), 4.0).unwrap();
        let s1 = State { t: 1.0, ..s0.clone() };
        let r = space_time_norms(&[s0, s1], &pr).unwrap();
        for v in [
            r.sup_n,
            r.sup_p,
            r.l1_dt_n,
            r.grad_p_l2_qt,
            r.grad_p_l4_qt,
            r.ab_l3,
            r.lap_p_l1,
            r.comp_residual,
            r.sat_residual,
        ] {
            assert_eq!(v, 0.0);
        }
    }

    #[test]
    fn single_snapshot_is_rejected() {
        let g = grid(30, 3.0);
        let pr = params(g, 4.0, GrowthLaw::Zero);
        let s0 = State::new(0.0, Field::zeros(&g), 4.0).unwrap();
        assert!(matches!(space_time_norms(&[s0], &pr), Err(Error::InvalidArgument(_))));
    }

    #[test]
    fn trapezoid_matches_linear_integrand() {
        assert!((trapezoid(&[0.0, 0.5, 2.0], &[0.0, 0.5, 2.0]) - 2.0).abs() < 1e-15);
    }

    fn patch_run(cells: usize) -> DiagnosticsReport {
        let g = grid(cells, 4.0);
        let pr = params(g, 3.0, GrowthLaw::Zero);
        let init = InitialData::Patch { radius: 1.0, height: 0.5 };
        let cfg = SolverConfig::default().with_uniform_snapshots(0.02, 10);
        let traj = run(&pr, &init, &cfg, 0.02).unwrap();
        space_time_norms(&traj.snapshots, &pr).unwrap()
    }

    #[test]
    fn gradient_norm_agrees_under_refinement() {
        let coarse = patch_run(200);
        let fine = patch_run(400);
        let rel = (coarse.grad_p_l2_qt - fine.grad_p_l2_qt).abs() / fine.grad_p_l2_qt;
        assert!(rel <= 0.1, "{} vs {}", coarse.grad_p_l2_qt, fine.grad_p_l2_qt);
    }

    #[test]
    fn norms_invariant_under_cell_translation() {
        let g = grid(200, 4.0);
        let law = GrowthLaw::linear(1.0, 1.0).unwrap();
        let pr = params(g, 4.0, law);
        let base = Field::from_fn(&g, |x| if x[0].abs() < 0.8 { 0.9 - 0.2 * x[0] * x[0] } else { 0.0 });
        let mut moved = base.clone();
        moved.values_mut().rotate_right(7);
        let run_of = |f: Field| {
            let init = InitialData::Custom { field: f, support_radius: 1.0 };
            let cfg = SolverConfig::default().with_uniform_snapshots(0.01, 4);
            let traj = run(&pr, &init, &cfg, 0.01).unwrap();
            space_time_norms(&traj.snapshots, &pr).unwrap()
        };
        let (a, b) = (run_of(base), run_of(moved));
        for (x, y) in [
            (a.grad_p_l2_qt, b.grad_p_l2_qt),
            (a.grad_p_l4_qt, b.grad_p_l4_qt),
            (a.ab_l3, b.ab_l3),
            (a.lap_p_l1, b.lap_p_l1),
            (a.comp_residual, b.comp_residual),
            (a.sat_residual, b.sat_residual),
        ] {
            assert!((x - y).abs() <= 1e-9 * x.abs().max(1.0), "{x} vs {y}");
        }
    }
}
