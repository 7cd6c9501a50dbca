//! Cost catalog: the kinetic cost `L`, the interaction costs `A` with their
//! conjugates, the terminal cost `Γ`, and the pointwise proximal maps of
//! ALG2 Step B.
//!
//! The alpha prox minimizes
//! `J(a) = A*(a0 + ½|a1|²) + (r/2)|a|² − b·a`.
//! Writing `μ ∈ ∂A*(s)` for the density at the optimum, `a0 = (b0 − μ)/r` and
//! `a1 = b1/(μ + r)`, so everything reduces to the scalar monotone equation
//! `μ ∈ ∂A*(s(μ))` with `s(μ) = (b0 − μ)/r + |b1|²/(2(μ + r)²)`.

use crate::error::{ensure_arg, Error, Result};
use crate::fespace::{CoefficientField, MSpace, SpaceKind, WSpace};
use serde::{Deserialize, Serialize};

/// Density threshold below which `ρ` counts as zero in [`eval_l`].
pub const RHO_EPS: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CostCase {
    /// Case 1: `A = 0` on `ρ ≥ 0`.
    Zero,
    /// Case 2: `A = cρ²`.
    Quadratic,
    /// Case 3: `A = cρ ln(cρ)`.
    Entropy,
    /// Case 4: `A = c/ρ`.
    InverseDensity,
    /// Case 5: indicator of `0 ≤ ρ ≤ ρ_max`.
    BoxConstraint,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CostModel {
    pub case: CostCase,
    pub c: f64,
    pub rho_max: f64,
}

impl CostModel {
    pub fn new(case: CostCase, c: f64, rho_max: f64) -> Result<Self> {
        let m = Self { case, c, rho_max };
        m.validate()?;
        Ok(m)
    }

    pub fn zero() -> Self {
        Self {
            case: CostCase::Zero,
            c: 0.1,
            rho_max: 1.0,
        }
    }

    pub fn quadratic(c: f64) -> Self {
        Self {
            case: CostCase::Quadratic,
            c,
            rho_max: 1.0,
        }
    }

    pub fn entropy(c: f64) -> Self {
        Self {
            case: CostCase::Entropy,
            c,
            rho_max: 1.0,
        }
    }

    pub fn inverse_density(c: f64) -> Self {
        Self {
            case: CostCase::InverseDensity,
            c,
            rho_max: 1.0,
        }
    }

    pub fn box_constraint(rho_max: f64) -> Self {
        Self {
            case: CostCase::BoxConstraint,
            c: 0.1,
            rho_max,
        }
    }

    pub fn validate(&self) -> Result<()> {
        ensure_arg!(self.c > 0.0 && self.c.is_finite(), "cost scaling c must be positive, got {}", self.c);
        ensure_arg!(
            self.rho_max > 0.0 && self.rho_max.is_finite(),
            "rho_max must be positive, got {}",
            self.rho_max
        );
        Ok(())
    }

    /// Primal interaction cost `A(ρ)`; `+∞` outside its domain.
    pub fn eval_a(&self, rho: f64) -> f64 {
        if rho < 0.0 {
            return f64::INFINITY;
        }
        let c = self.c;
        match self.case {
            CostCase::Zero => 0.0,
            CostCase::Quadratic => c * rho * rho,
            CostCase::Entropy => {
                if rho == 0.0 {
                    0.0
                } else {
                    c * rho * (c * rho).ln()
                }
            }
            CostCase::InverseDensity => {
                if rho == 0.0 {
                    f64::INFINITY
                } else {
                    c / rho
                }
            }
            CostCase::BoxConstraint => {
                if rho <= self.rho_max {
                    0.0
                } else {
                    f64::INFINITY
                }
            }
        }
    }

    /// `A'(ρ)` on the interior of the domain.
    pub fn eval_a_prime(&self, rho: f64) -> f64 {
        let c = self.c;
        match self.case {
            CostCase::Zero | CostCase::BoxConstraint => 0.0,
            CostCase::Quadratic => 2.0 * c * rho,
            CostCase::Entropy => c * ((c * rho).ln() + 1.0),
            CostCase::InverseDensity => -c / (rho * rho),
        }
    }
}

/// Kinetic cost `|m|²/(2ρ)` with the conventions at `ρ = 0`.
pub fn eval_l(rho: f64, m: &[f64]) -> Result<f64> {
    ensure_arg!(rho >= 0.0, "eval_l: negative density {rho}");
    let m2: f64 = m.iter().map(|x| x * x).sum();
    if rho <= RHO_EPS {
        return Ok(if m2 == 0.0 { 0.0 } else { f64::INFINITY });
    }
    Ok(m2 / (2.0 * rho))
}

/// `(A*(s), A*'(s))`. Infinite values are reported as `f64::INFINITY`;
/// at kinks the derivative is the left derivative.
pub fn eval_a_star(model: &CostModel, s: f64) -> (f64, f64) {
    let c = model.c;
    match model.case {
        CostCase::Zero => {
            if s <= 0.0 {
                (0.0, 0.0)
            } else {
                (f64::INFINITY, f64::INFINITY)
            }
        }
        CostCase::Quadratic => {
            if s > 0.0 {
                (s * s / (4.0 * c), s / (2.0 * c))
            } else {
                (0.0, 0.0)
            }
        }
        CostCase::Entropy => {
            let e = (s / c - 1.0).exp();
            (e, e / c)
        }
        CostCase::InverseDensity => {
            if s < 0.0 {
                (-2.0 * (-c * s).sqrt(), (c / -s).sqrt())
            } else if s == 0.0 {
                (0.0, f64::INFINITY)
            } else {
                (f64::INFINITY, f64::INFINITY)
            }
        }
        CostCase::BoxConstraint => {
            if s > 0.0 {
                (model.rho_max * s, model.rho_max)
            } else {
                (0.0, 0.0)
            }
        }
    }
}

/// Objective of the alpha prox at `a`.
pub fn prox_alpha_objective(model: &CostModel, a: &[f64], b: &[f64], r: f64) -> f64 {
    let s = a[0] + 0.5 * a[1..].iter().map(|x| x * x).sum::<f64>();
    let quad: f64 = a.iter().map(|x| x * x).sum::<f64>() * 0.5 * r;
    let lin: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    eval_a_star(model, s).0 + quad - lin
}

const MAX_NEWTON: usize = 200;

/// Root of an increasing function on `[lo, hi]` with `f(lo) ≤ 0 ≤ f(hi)`,
/// by Newton steps kept inside the bracket and bisection otherwise.
fn bracketed_newton(f: impl Fn(f64) -> (f64, f64), mut lo: f64, mut hi: f64, x0: f64) -> std::result::Result<f64, String> {
    let mut x = if x0 > lo && x0 < hi { x0 } else { 0.5 * (lo + hi) };
    let (mut w1, mut w2) = (f64::INFINITY, f64::INFINITY);
    for _ in 0..MAX_NEWTON {
        let (v, dv) = f(x);
        if v == 0.0 {
            return Ok(x);
        }
        if v < 0.0 {
            lo = x;
        } else {
            hi = x;
        }
        let width = hi - lo;
        if width <= 4.0 * f64::EPSILON * x.abs().max(f64::MIN_POSITIVE) {
            return Ok(0.5 * (lo + hi));
        }
        let newton = x - v / dv;
        // Bisect when Newton leaves the bracket or the bracket has not halved in two steps.
        let next = if dv > 0.0 && newton > lo && newton < hi && width <= 0.5 * w2 {
            newton
        } else {
            0.5 * (lo + hi)
        };
        w2 = w1;
        w1 = width;
        if (next - x).abs() <= 2.0 * f64::EPSILON * x.abs() {
            return Ok(next);
        }
        x = next;
    }
    Err(format!("scalar solve did not converge in {MAX_NEWTON} steps (bracket [{lo:e}, {hi:e}])"))
}

/// Finds `lo < hi` around the root of an increasing function on the real line.
fn expand_bracket(f: &impl Fn(f64) -> (f64, f64), start: f64) -> std::result::Result<(f64, f64), String> {
    let mut step = 1.0;
    let f0 = f(start).0;
    let (mut lo, mut hi) = (start, start);
    for _ in 0..64 {
        if f0 <= 0.0 {
            hi = start + step;
            if f(hi).0 >= 0.0 {
                return Ok((lo, hi));
            }
            lo = hi;
        } else {
            lo = start - step;
            if f(lo).0 <= 0.0 {
                return Ok((lo, hi));
            }
            hi = lo;
        }
        step *= 2.0;
    }
    Err("could not bracket the scalar root".into())
}

/// Writes the alpha prox into `out` (same length as `b`) and returns the density `μ`.
///
/// `warm` is an earlier result for the same point; it only seeds the scalar solve.
pub fn prox_alpha_into(
    model: &CostModel,
    b: &[f64],
    r: f64,
    warm: Option<&[f64]>,
    out: &mut [f64],
) -> std::result::Result<f64, String> {
    if !(r > 0.0) {
        return Err(format!("prox parameter must be positive, got {r}"));
    }
    if b.iter().any(|x| !x.is_finite()) {
        return Err(format!("non-finite prox input {b:?}"));
    }
    let b0 = b[0];
    let nb1: f64 = b[1..].iter().map(|x| x * x).sum();
    let s = |mu: f64| (b0 - mu) / r + nb1 / (2.0 * (mu + r) * (mu + r));
    let ds = |mu: f64| -1.0 / r - nb1 / ((mu + r) * (mu + r) * (mu + r));
    let guess = warm.map(|a| b0 - r * a[0]).unwrap_or(f64::NAN);
    let c = model.c;
    let s0 = s(0.0);

    // Root of s(μ) = 0 for μ ≥ 0 when s(0) > 0.
    let zero_of_s = |hi: f64| bracketed_newton(|mu| (-s(mu), -ds(mu)), 0.0, hi, guess);
    let hi_s = (b0 + nb1 / (2.0 * r)).max(0.0);

    let mu = match model.case {
        CostCase::Zero => {
            if s0 <= 0.0 {
                0.0
            } else {
                zero_of_s(hi_s)?
            }
        }
        CostCase::Quadratic => {
            if s0 <= 0.0 {
                0.0
            } else {
                bracketed_newton(|mu| (2.0 * c * mu - s(mu), 2.0 * c - ds(mu)), 0.0, s0 / (2.0 * c), guess)?
            }
        }
        CostCase::Entropy => {
            // In u = ln(cμ): c(u + 1) = s(e^u / c).
            let g = |u: f64| {
                let mu = u.exp() / c;
                (c * (u + 1.0) - s(mu), c - ds(mu) * mu)
            };
            let u_hi = s0 / c - 1.0;
            let (lo, hi) = expand_bracket(&g, u_hi)?;
            let ug = if guess > 0.0 { (c * guess).ln() } else { f64::NAN };
            bracketed_newton(g, lo, hi, ug)?.exp() / c
        }
        CostCase::InverseDensity => {
            // μ = sqrt(c / −s): in u = ln μ, −s(e^u) − c e^{−2u} = 0.
            let g = |u: f64| {
                let mu = u.exp();
                (-s(mu) - c / (mu * mu), (-ds(mu) + 2.0 * c / (mu * mu * mu)) * mu)
            };
            let start = if s0 < 0.0 { 0.5 * (c / -s0).ln() } else { 0.0 };
            let (lo, hi) = expand_bracket(&g, start)?;
            let ug = if guess > 0.0 { guess.ln() } else { f64::NAN };
            bracketed_newton(g, lo, hi, ug)?.exp()
        }
        CostCase::BoxConstraint => {
            let rm = model.rho_max;
            if s0 <= 0.0 {
                0.0
            } else if s(rm) >= 0.0 {
                rm
            } else {
                bracketed_newton(|mu| (-s(mu), -ds(mu)), 0.0, rm, guess)?
            }
        }
    };
    if !mu.is_finite() {
        return Err(format!("non-finite density {mu} in prox"));
    }
    out[0] = (b0 - mu) / r;
    for (o, bi) in out[1..].iter_mut().zip(&b[1..]) {
        *o = bi / (mu + r);
    }
    if model.case == CostCase::Zero && mu > 0.0 {
        // Keep the result feasible against rounding in s(μ) = 0.
        let half: f64 = 0.5 * out[1..].iter().map(|x| x * x).sum::<f64>();
        out[0] = out[0].min(-half);
    }
    Ok(mu)
}

/// The alpha prox of Step B: the minimizer of `A*(a0 + ½|a1|²) + (r1/2)|a|² − b·a`.
pub fn prox_alpha(model: &CostModel, b: &[f64], r1: f64, warm_start: Option<&[f64]>) -> Result<Vec<f64>> {
    let mut out = vec![0.0; b.len()];
    prox_alpha_into(model, b, r1, warm_start, &mut out).map_err(|reason| Error::Prox {
        failures: vec![crate::error::ProxFailure { coords: b.to_vec(), reason }],
    })?;
    Ok(out)
}

/// Terminal cost `Γ(ρ) = ½(ρ − ρ_T)²` on `ρ ≥ 0`, one target value per M point.
#[derive(Debug, Clone, PartialEq)]
pub struct TerminalCost {
    pub rho_t: Vec<f64>,
}

impl TerminalCost {
    pub fn new(rho_t: Vec<f64>) -> Result<Self> {
        ensure_arg!(
            rho_t.iter().all(|&x| x >= 0.0 && x.is_finite()),
            "terminal target density must be finite and nonnegative"
        );
        Ok(Self { rho_t })
    }
}

/// Admissible set for the terminal dual variable.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Rho1Domain {
    /// Unconstrained: the exact prox of `Γ*`.
    #[default]
    Real,
    /// `r* ≥ 0`.
    NonNegative,
}

/// `Γ(ρ)` at one point.
pub fn eval_gamma(rho_t: f64, rho: f64) -> f64 {
    if rho < 0.0 {
        f64::INFINITY
    } else {
        0.5 * (rho - rho_t) * (rho - rho_t)
    }
}

/// `(Γ*(r), Γ*'(r))` at one point: `ρ_T r + r²/2` for `r ≥ −ρ_T`, else `−ρ_T²/2`.
pub fn eval_gamma_star(rho_t: f64, r: f64) -> (f64, f64) {
    if r >= -rho_t {
        (rho_t * r + 0.5 * r * r, rho_t + r)
    } else {
        (-0.5 * rho_t * rho_t, 0.0)
    }
}

/// Residual of `−φ(1) ∈ ∂Γ(ρ1)` in complementarity form,
/// `ρ1 ≥ 0 ⟂ φ(1) + ρ1 − ρ_T ≥ 0`: `|min(ρ1, φ(1) + ρ1 − ρ_T)|`.
///
/// Equals `|φ(1) + Γ'(ρ1)|` where the relation is active and is continuous at `ρ1 = 0`.
pub fn terminal_kkt_residual(rho_t: f64, rho1: f64, phi1: f64) -> f64 {
    rho1.min(phi1 + rho1 - rho_t).abs()
}

/// The terminal prox: minimizer of `Γ*(r) + (r2/2) r² − b r` over `domain`.
pub fn prox_rho1(rho_t: f64, b: f64, r2: f64, domain: Rho1Domain) -> f64 {
    let r = (b - rho_t) / (1.0 + r2);
    match domain {
        Rho1Domain::NonNegative => r.max(0.0),
        Rho1Domain::Real => {
            if r >= -rho_t {
                r
            } else {
                b / r2
            }
        }
    }
}

/// `F_h*(α*) = ⟨A*(α*_0 + ½|α*_1|²), 1⟩_h`; `+∞` if any point is infinite.
pub fn eval_f_h_star(model: &CostModel, w: &WSpace, alpha_star: &CoefficientField) -> Result<f64> {
    alpha_star.check(SpaceKind::W, w.n_dofs(), "eval_f_h_star")?;
    let nc = alpha_star.components;
    Ok(w
        .weights
        .iter()
        .enumerate()
        .map(|(p, wt)| {
            let a = alpha_star.at(p);
            let s = a[0] + 0.5 * a[1..nc].iter().map(|x| x * x).sum::<f64>();
            wt * eval_a_star(model, s).0
        })
        .sum())
}

/// `R_h*(ρ1*) = (Γ*(ρ1*), 1)_h`.
pub fn eval_r_h_star(gamma: &TerminalCost, m: &MSpace, rho1_star: &[f64]) -> Result<f64> {
    ensure_arg!(
        rho1_star.len() == m.n_dofs() && gamma.rho_t.len() == m.n_dofs(),
        "eval_r_h_star: expected {} M values",
        m.n_dofs()
    );
    Ok(m
        .weights
        .iter()
        .zip(rho1_star.iter().zip(&gamma.rho_t))
        .map(|(w, (r, t))| w * eval_gamma_star(*t, *r).0)
        .sum())
}
