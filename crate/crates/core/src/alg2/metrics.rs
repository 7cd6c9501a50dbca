//! Solution diagnostics and the traveling-wave benchmark.

use std::sync::Arc;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{Alg2State, DensityData, Mode, ProblemSpec, SampledData, SpaceTimeFn};
use crate::assembly::Discretization;
use crate::costs::{terminal_kkt_residual, RHO_EPS};
use crate::error::Result;
use crate::fespace::WSpace;
use crate::quad::gauss_legendre;

/// `m(t, x)`, one value per spatial component.
pub type VectorFn = Arc<dyn Fn(f64, &[f64]) -> Vec<f64> + Send + Sync>;

/// Exact density and momentum, for error measurement.
#[derive(Clone)]
pub struct ExactSolution {
    pub rho: SpaceTimeFn,
    pub momentum: VectorFn,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    /// `‖ρ_h − ρ_ex‖_{L²}`; absent without an exact solution.
    pub l2_rho: Option<f64>,
    pub l2_m: Option<f64>,
    /// `⟨|m|² / (2 max(ρ, ε)), 1⟩_h`.
    pub w2: f64,
    /// `∫∫ |m_ex|² / (2 ρ_ex)` by refined quadrature.
    pub w2_reference: Option<f64>,
    pub w2_error: Option<f64>,
    /// Temporal quadrature times and `(ρ(t, ·), 1)_h` at each.
    pub slice_times: Vec<f64>,
    pub slice_mass: Vec<f64>,
    /// `(ρ0, 1)_h`.
    pub initial_mass: f64,
    /// `max_t |mass(t) − mass(0)| / mass(0)`.
    pub mass_drift: f64,
    /// Density-weighted RMS of `m/ρ − ∇_x φ`.
    pub kkt_momentum: f64,
    /// MFG: max over M points of the distance from `−φ(1)` to `∂Γ(ρ1)`.
    pub kkt_terminal: Option<f64>,
}

const SUB_POINTS: usize = 6;

/// A composite Gauss rule on the reference cell with the W reconstruction basis
/// tabulated at its points.
struct RefinedRule {
    points: Vec<Vec<f64>>,
    weights: Vec<f64>,
    /// `n_points × n_local`.
    basis: Vec<f64>,
}

fn composite_1d(n_sub: usize) -> (Vec<f64>, Vec<f64>) {
    let g = gauss_legendre(SUB_POINTS).expect("supported rule size");
    let h = 1.0 / n_sub as f64;
    let mut x = Vec::with_capacity(n_sub * SUB_POINTS);
    let mut w = Vec::with_capacity(n_sub * SUB_POINTS);
    for s in 0..n_sub {
        for (n, wt) in g.nodes.iter().zip(&g.weights) {
            x.push((s as f64 + n) * h);
            w.push(wt * h);
        }
    }
    (x, w)
}

impl RefinedRule {
    /// At least `target` points per unit length along every space-time axis.
    fn new(w: &WSpace) -> Self {
        let d = w.mesh.dim();
        let target: usize = if d == 1 { 192 } else { 96 };
        let mut counts = vec![w.mesh.n_time];
        counts.extend(&w.mesh.spatial.cells_per_axis);
        let axes: Vec<(Vec<f64>, Vec<f64>)> = counts
            .iter()
            .map(|&n| composite_1d(target.div_ceil(n * SUB_POINTS).max(1)))
            .collect();
        let mut points = vec![Vec::new()];
        let mut weights = vec![1.0];
        for (x, wt) in &axes {
            let mut np = Vec::with_capacity(points.len() * x.len());
            let mut nw = Vec::with_capacity(points.len() * x.len());
            for (p, pw) in points.iter().zip(&weights) {
                for (xi, wi) in x.iter().zip(wt) {
                    let mut q = p.clone();
                    q.push(*xi);
                    np.push(q);
                    nw.push(pw * wi);
                }
            }
            points = np;
            weights = nw;
        }
        let basis = points.iter().flat_map(|r| w.local_basis(r)).collect();
        Self { points, weights, basis }
    }

    /// `Σ_cells ∫_cell f(cell, point index, t, x)`, summed in cell order.
    fn integrate(&self, w: &WSpace, f: impl Fn(usize, usize, f64, &[f64]) -> f64 + Sync) -> f64 {
        let mesh = &w.mesh;
        let na = mesh.spatial.n_active();
        let vol = mesh.cell_volume();
        let per_cell: Vec<f64> = (0..mesh.n_cells())
            .into_par_iter()
            .map(|c| {
                let (j, l) = (c / na, c % na);
                let t0 = mesh.interval(j).0;
                let lower = mesh.spatial.cell_lower(l);
                let mut x = vec![0.0; mesh.dim()];
                let mut s = 0.0;
                for (i, (r, wt)) in self.points.iter().zip(&self.weights).enumerate() {
                    let t = t0 + r[0] * mesh.dt;
                    for (a, xa) in x.iter_mut().enumerate() {
                        *xa = lower[a] + r[a + 1] * mesh.spatial.h[a];
                    }
                    s += wt * f(c, i, t, &x);
                }
                s * vol
            })
            .collect();
        per_cell.iter().sum()
    }

    fn reconstruct(&self, w: &WSpace, values: &[f64], components: usize, comp: usize, cell: usize, i: usize) -> f64 {
        let nl = w.n_local();
        let row = &self.basis[i * nl..(i + 1) * nl];
        let base = cell * nl;
        row.iter()
            .enumerate()
            .map(|(q, b)| b * values[(base + q) * components + comp])
            .sum()
    }
}

/// `(L²(ρ) error, L²(m) error)` of the per-cell reconstruction of `α`.
pub fn l2_errors(disc: &Discretization, state: &Alg2State, exact: &ExactSolution) -> (f64, f64) {
    let w = &disc.w;
    let rule = RefinedRule::new(w);
    let nc = state.alpha.components;
    let vals = &state.alpha.values;
    let e_rho = rule.integrate(w, |c, i, t, x| {
        let e = rule.reconstruct(w, vals, nc, 0, c, i) - (exact.rho)(t, x);
        e * e
    });
    let e_m = rule.integrate(w, |c, i, t, x| {
        let m = (exact.momentum)(t, x);
        (1..nc)
            .map(|comp| {
                let e = rule.reconstruct(w, vals, nc, comp, c, i) - m[comp - 1];
                e * e
            })
            .sum()
    });
    (e_rho.sqrt(), e_m.sqrt())
}

/// `∫∫ |m_ex|² / (2 max(ρ_ex, ε))` over the space-time domain of `w`.
pub fn reference_w2(w: &WSpace, exact: &ExactSolution) -> f64 {
    let rule = RefinedRule::new(w);
    rule.integrate(w, |_, _, t, x| {
        let m = (exact.momentum)(t, x);
        let m2: f64 = m.iter().map(|v| v * v).sum();
        m2 / (2.0 * (exact.rho)(t, x).max(RHO_EPS))
    })
}

/// `⟨|m|² / (2 max(ρ, ε)), 1⟩_h` of a W field.
pub fn discrete_w2(w: &WSpace, alpha: &[f64], components: usize) -> f64 {
    w.weights
        .iter()
        .enumerate()
        .map(|(p, wt)| {
            let a = &alpha[p * components..(p + 1) * components];
            let m2: f64 = a[1..].iter().map(|v| v * v).sum();
            wt * m2 / (2.0 * a[0].max(RHO_EPS))
        })
        .sum()
}

/// Temporal quadrature times and `(ρ(t, ·), 1)_h` at each, in time order.
pub fn slice_masses(disc: &Discretization, rho: &[f64]) -> (Vec<f64>, Vec<f64>) {
    let w = &disc.w;
    let na = w.mesh.spatial.n_active();
    let ns = w.n_spatial_local();
    let mut times = Vec::new();
    let mut mass = Vec::new();
    for j in 0..w.mesh.n_time {
        for it in 0..w.n_time_local() {
            times.push(w.time_of(j, it));
            let mut s = 0.0;
            for l in 0..na {
                for is in 0..ns {
                    s += disc.m.weights[l * ns + is] * rho[w.index(j, l, it, is)];
                }
            }
            mass.push(s);
        }
    }
    (times, mass)
}

pub fn compute_metrics(
    disc: &Discretization,
    spec: &ProblemSpec,
    state: &Alg2State,
    data: &SampledData,
) -> Result<Metrics> {
    let w = &disc.w;
    let nc = state.alpha.components;
    let rho = state.density();
    let (l2_rho, l2_m, w2_reference) = match &spec.exact {
        Some(ex) => {
            let (a, b) = l2_errors(disc, state, ex);
            (Some(a), Some(b), Some(reference_w2(w, ex)))
        }
        None => (None, None, None),
    };
    let w2 = discrete_w2(w, &state.alpha.values, nc);
    let (slice_times, slice_mass) = slice_masses(disc, &rho);
    let initial_mass = disc.m.integrate(&data.rho0);
    let mass_drift = slice_mass
        .iter()
        .map(|m| (m - initial_mass).abs())
        .fold(0.0, f64::max)
        / initial_mass.abs().max(RHO_EPS);

    let grad = disc.gradv_at_points(&state.phi);
    let (mut num, mut den) = (0.0, 0.0);
    for (p, wt) in w.weights.iter().enumerate() {
        let a = &state.alpha.values[p * nc..(p + 1) * nc];
        let r = a[0].max(RHO_EPS);
        let e2: f64 = (1..nc).map(|c| (a[c] / r - grad[p * nc + c]).powi(2)).sum();
        num += wt * a[0].max(0.0) * e2;
        den += wt * a[0].max(0.0);
    }
    let kkt_momentum = if den > 0.0 { (num / den).sqrt() } else { 0.0 };

    let kkt_terminal = (spec.mode == Mode::Mfg).then(|| {
        let phi1 = disc.end.eval_at_m_points(&disc.v, &disc.m, &state.phi);
        (0..phi1.len())
            .map(|i| terminal_kkt_residual(data.rho_t[i], state.rho1[i], phi1[i]))
            .fold(0.0, f64::max)
    });

    Ok(Metrics {
        l2_rho,
        l2_m,
        w2,
        w2_reference,
        w2_error: w2_reference.map(|r| (w2 - r).abs()),
        slice_times,
        slice_mass,
        initial_mass,
        mass_drift,
        kkt_momentum,
        kkt_terminal,
    })
}

/// Center offset and speed of the traveling wave, per axis.
const WAVE_X0: f64 = 0.25;
const WAVE_SPEED: f64 = 2.0 * WAVE_X0;

fn wave_rho(t: f64, x: &[f64]) -> f64 {
    let c = (1.0 + 2.0 * t) * WAVE_X0;
    (-50.0 * x.iter().map(|xi| (xi - c) * (xi - c)).sum::<f64>()).exp()
}

/// OT between `exp(−50|x − x0|²)` and its translate on `[0, 1]^d`, `x0 = (0.25, …)`:
/// the exact solution moves with velocity `(0.5, …)`, and the boundary source
/// carries the flux through `∂Ω`. `r = 1`, no mass normalization.
pub fn traveling_wave(d: usize) -> ProblemSpec {
    let mut spec = ProblemSpec::ot(
        DensityData::sampler(|x| wave_rho(0.0, x)),
        DensityData::sampler(|x| wave_rho(1.0, x)),
        1.0,
    );
    spec.boundary_flux = Some(Arc::new(|t, x, n| {
        WAVE_SPEED * wave_rho(t, x) * n.iter().sum::<f64>()
    }));
    spec.exact = Some(ExactSolution {
        rho: Arc::new(wave_rho),
        momentum: Arc::new(move |t, x| vec![WAVE_SPEED * wave_rho(t, x); d]),
    });
    spec
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::assembly::build_discretization;
    use crate::fespace::{CoefficientField, SpaceKind};
    use crate::mesh::{build_spacetime_mesh, build_spatial_mesh};

    fn disc(d: usize, cells: usize, n_time: usize, k: usize) -> Discretization {
        let sp = build_spatial_mesh(&vec![0.0; d], &vec![1.0; d], &vec![cells; d], &[]).unwrap();
        build_discretization(&build_spacetime_mesh(sp, n_time).unwrap(), k).unwrap()
    }

    fn state_from(disc: &Discretization, f: impl Fn(f64, &[f64]) -> Vec<f64>) -> Alg2State {
        let nc = disc.dim() + 1;
        let mut alpha = CoefficientField::zeros(SpaceKind::W, disc.w.n_dofs(), nc);
        for p in 0..disc.w.n_dofs() {
            let c = disc.w.coords(p);
            alpha.values[p * nc..(p + 1) * nc].copy_from_slice(&f(c[0], &c[1..]));
        }
        Alg2State {
            phi: vec![0.0; disc.v.n_dofs()],
            alpha_star: alpha.clone(),
            alpha,
            rho1: vec![],
            rho1_star: vec![],
            iteration: 0,
            err_a: 0.0,
            err_r: 0.0,
        }
    }

    #[test]
    fn constant_fields_w2() {
        let ds = disc(1, 3, 2, 1);
        let s = state_from(&ds, |_, _| vec![1.0, 0.5]);
        assert!((discrete_w2(&ds.w, &s.alpha.values, 2) - 0.125).abs() < 1e-14);
        let ds = disc(2, 2, 2, 0);
        let s = state_from(&ds, |_, _| vec![1.0, 0.5, 0.5]);
        assert!((discrete_w2(&ds.w, &s.alpha.values, 3) - 0.25).abs() < 1e-14);
    }

    #[test]
    fn interpolant_errors_small_not_zero() {
        let spec = traveling_wave(1);
        let ex = spec.exact.clone().unwrap();
        let mut prev = f64::INFINITY;
        for cells in [4, 8, 16] {
            let ds = disc(1, cells, cells, 1);
            let s = state_from(&ds, |t, x| {
                let mut v = vec![(ex.rho)(t, x)];
                v.extend((ex.momentum)(t, x));
                v
            });
            let (er, em) = l2_errors(&ds, &s, &ex);
            assert!(er > 0.0 && er < prev);
            assert!((em - WAVE_SPEED * er).abs() < 1e-12);
            prev = er;
        }
        assert!(prev < 1e-2);
    }

    #[test]
    fn reconstruction_error_vanishes_for_polynomials() {
        let ds = disc(2, 2, 3, 2);
        let ex = ExactSolution {
            rho: Arc::new(|t, x| 1.0 + t * t - x[0] * x[1] * x[1]),
            momentum: Arc::new(|t, x| vec![t * x[0], x[1] * x[1]]),
        };
        let s = state_from(&ds, |t, x| {
            let mut v = vec![(ex.rho)(t, x)];
            v.extend((ex.momentum)(t, x));
            v
        });
        let (er, em) = l2_errors(&ds, &s, &ex);
        assert!(er < 1e-13 && em < 1e-13, "{er} {em}");
    }

    #[test]
    fn traveling_wave_reference_w2() {
        // ∫∫ |m|²/(2ρ) = (d/8) ∫∫ ρ, and ∫ρ(t, ·) over the line is close to sqrt(π/50).
        let ds = disc(1, 8, 8, 3);
        let ex = traveling_wave(1).exact.unwrap();
        let w2 = reference_w2(&ds.w, &ex);
        let mass: f64 = {
            let g = gauss_legendre(16).unwrap();
            let erf_like = |c: f64| {
                // ∫_0^1 exp(−50(x − c)²) dx by a composite 16-point rule.
                (0..64)
                    .map(|s| {
                        g.integrate(|u| {
                            let x = (s as f64 + u) / 64.0;
                            (-50.0 * (x - c) * (x - c)).exp()
                        }) / 64.0
                    })
                    .sum::<f64>()
            };
            (0..64)
                .map(|s| g.integrate(|u| erf_like((1.0 + 2.0 * (s as f64 + u) / 64.0) * WAVE_X0)) / 64.0)
                .sum()
        };
        assert!((w2 - mass / 8.0).abs() < 1e-12, "{w2} vs {}", mass / 8.0);
        assert!((w2 - 0.0313).abs() < 1e-3);
        let ds2 = disc(2, 2, 2, 1);
        let w2_2d = reference_w2(&ds2.w, &traveling_wave(2).exact.unwrap());
        assert!((w2_2d - 0.0157).abs() < 1e-3, "{w2_2d}");
    }

    #[test]
    fn slice_mass_of_constant() {
        let ds = disc(2, 3, 4, 1);
        let rho = vec![2.0; ds.w.n_dofs()];
        let (t, m) = slice_masses(&ds, &rho);
        assert_eq!(t.len(), 8);
        assert!(t.windows(2).all(|p| p[0] < p[1]));
        assert!(m.iter().all(|v| (v - 2.0).abs() < 1e-13));
    }
}
