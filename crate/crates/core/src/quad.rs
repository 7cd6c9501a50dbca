//! Gauss-Legendre quadrature on the unit interval and its tensor products.
//!
//! All reference rules live on `[0, 1]` (or `[0, 1]^d`); [`map_rule`] moves
//! them onto physical axis-aligned boxes.

use crate::error::{ensure_arg, Result};

/// Largest supported number of Gauss points per axis.
pub const MAX_POINTS: usize = 16;

/// A one-dimensional rule on `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct QuadRule1D {
    pub nodes: Vec<f64>,
    pub weights: Vec<f64>,
    /// Highest polynomial degree integrated exactly (`2n - 1`).
    pub exact_degree: usize,
}

impl QuadRule1D {
    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn integrate(&self, f: impl Fn(f64) -> f64) -> f64 {
        self.nodes
            .iter()
            .zip(&self.weights)
            .map(|(&x, &w)| w * f(x))
            .sum()
    }
}

/// A tensor-product rule in `dim` dimensions, points stored row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct QuadRuleND {
    pub dim: usize,
    points: Vec<f64>,
    pub weights: Vec<f64>,
    /// Points per axis, first axis slowest.
    pub counts: Vec<usize>,
}

impl QuadRuleND {
    pub(crate) fn from_parts(dim: usize, points: Vec<f64>, weights: Vec<f64>, counts: Vec<usize>) -> Self {
        debug_assert_eq!(points.len(), dim * weights.len());
        Self {
            dim,
            points,
            weights,
            counts,
        }
    }

    pub fn len(&self) -> usize {
        self.weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }

    pub fn point(&self, i: usize) -> &[f64] {
        &self.points[i * self.dim..(i + 1) * self.dim]
    }

    pub fn points(&self) -> impl Iterator<Item = &[f64]> {
        self.points.chunks_exact(self.dim)
    }

    pub fn integrate(&self, f: impl Fn(&[f64]) -> f64) -> f64 {
        self.points()
            .zip(&self.weights)
            .map(|(p, &w)| w * f(p))
            .sum()
    }
}

/// An axis-aligned box `[lower, upper]`.
#[derive(Debug, Clone, PartialEq)]
pub struct AxisBox {
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
}

impl AxisBox {
    pub fn new(lower: Vec<f64>, upper: Vec<f64>) -> Self {
        Self { lower, upper }
    }

    pub fn dim(&self) -> usize {
        self.lower.len()
    }

    pub fn volume(&self) -> f64 {
        self.lower
            .iter()
            .zip(&self.upper)
            .map(|(a, b)| b - a)
            .product()
    }
}

/// Evaluates the Legendre polynomial `P_n` and its derivative on `[-1, 1]`.
pub(crate) fn legendre(n: usize, x: f64) -> (f64, f64) {
    if n == 0 {
        return (1.0, 0.0);
    }
    let (mut p0, mut p1) = (1.0, x);
    for j in 2..=n {
        let jf = j as f64;
        let p2 = ((2.0 * jf - 1.0) * x * p1 - (jf - 1.0) * p0) / jf;
        p0 = p1;
        p1 = p2;
    }
    // P'_n = n (x P_n - P_{n-1}) / (x^2 - 1), valid away from the endpoints.
    let dp = n as f64 * (x * p1 - p0) / (x * x - 1.0);
    (p1, dp)
}

/// The `n`-point Gauss-Legendre rule on `[0, 1]`.
pub fn gauss_legendre(n: usize) -> Result<QuadRule1D> {
    ensure_arg!(
        (1..=MAX_POINTS).contains(&n),
        "Gauss-Legendre point count must be in 1..={MAX_POINTS}, got {n}"
    );
    let mut nodes = vec![0.0; n];
    let mut weights = vec![0.0; n];
    for i in 0..n {
        // Roots in decreasing order on [-1, 1]; mirror so nodes increase.
        let mut x = (std::f64::consts::PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
        for _ in 0..100 {
            let (p, dp) = legendre(n, x);
            let dx = p / dp;
            x -= dx;
            if dx.abs() <= 1e-15 {
                break;
            }
        }
        let (_, dp) = legendre(n, x);
        let w = 2.0 / ((1.0 - x * x) * dp * dp);
        nodes[n - 1 - i] = 0.5 * (1.0 + x);
        weights[n - 1 - i] = 0.5 * w;
    }
    // Symmetrize to kill round-off asymmetry.
    for i in 0..n / 2 {
        let j = n - 1 - i;
        let d = 0.5 * (nodes[i] + 1.0 - nodes[j]);
        nodes[i] = d;
        nodes[j] = 1.0 - d;
        let w = 0.5 * (weights[i] + weights[j]);
        weights[i] = w;
        weights[j] = w;
    }
    if n % 2 == 1 {
        nodes[n / 2] = 0.5;
    }
    Ok(QuadRule1D {
        nodes,
        weights,
        exact_degree: 2 * n - 1,
    })
}

/// The `n + 1` Gauss-Lobatto points on `[0, 1]` (endpoints included), used
/// as nodes of the degree-`n` Lagrange basis.
pub fn gauss_lobatto_nodes(n: usize) -> Result<Vec<f64>> {
    ensure_arg!(
        (1..=MAX_POINTS).contains(&n),
        "Lobatto degree must be in 1..={MAX_POINTS}, got {n}"
    );
    let mut nodes = vec![0.0; n + 1];
    nodes[n] = 1.0;
    // Interior nodes are the roots of P'_n; Newton on P'_n with P''_n from
    // the Legendre ODE: (1 - x^2) P'' = 2x P' - n(n+1) P.
    let nn = (n * (n + 1)) as f64;
    for i in 1..n {
        let mut x = -(std::f64::consts::PI * i as f64 / n as f64).cos();
        for _ in 0..100 {
            let (p, dp) = legendre(n, x);
            let ddp = (2.0 * x * dp - nn * p) / (1.0 - x * x);
            let dx = dp / ddp;
            x -= dx;
            if dx.abs() <= 1e-15 {
                break;
            }
        }
        nodes[i] = 0.5 * (1.0 + x);
    }
    for i in 1..=n / 2 {
        let j = n - i;
        let d = 0.5 * (nodes[i] + 1.0 - nodes[j]);
        nodes[i] = d;
        nodes[j] = 1.0 - d;
    }
    if n.is_multiple_of(2) {
        nodes[n / 2] = 0.5;
    }
    Ok(nodes)
}

/// Lexicographic tensor product of 1D rules; the first axis varies slowest.
pub fn tensor_rule(axes: &[QuadRule1D]) -> Result<QuadRuleND> {
    ensure_arg!(
        (1..=3).contains(&axes.len()),
        "tensor rule needs 1 to 3 axes, got {}",
        axes.len()
    );
    let dim = axes.len();
    let counts: Vec<usize> = axes.iter().map(QuadRule1D::len).collect();
    let total: usize = counts.iter().product();
    let mut points = Vec::with_capacity(total * dim);
    let mut weights = Vec::with_capacity(total);
    let mut idx = vec![0usize; dim];
    for _ in 0..total {
        let mut w = 1.0;
        for (a, &i) in idx.iter().enumerate() {
            points.push(axes[a].nodes[i]);
            w *= axes[a].weights[i];
        }
        weights.push(w);
        for a in (0..dim).rev() {
            idx[a] += 1;
            if idx[a] < counts[a] {
                break;
            }
            idx[a] = 0;
        }
    }
    Ok(QuadRuleND {
        dim,
        points,
        weights,
        counts,
    })
}

/// Maps a reference rule on `[0,1]^d` affinely onto `cell`.
pub fn map_rule(rule: &QuadRuleND, cell: &AxisBox) -> Result<QuadRuleND> {
    ensure_arg!(
        cell.dim() == rule.dim,
        "cell dimension {} does not match rule dimension {}",
        cell.dim(),
        rule.dim
    );
    for a in 0..cell.dim() {
        let ext = cell.upper[a] - cell.lower[a];
        ensure_arg!(
            ext > 0.0 && ext.is_finite(),
            "degenerate cell: axis {a} has extent {ext}"
        );
    }
    let vol = cell.volume();
    let points = rule
        .points()
        .flat_map(|p| {
            p.iter()
                .enumerate()
                .map(|(a, &x)| cell.lower[a] + x * (cell.upper[a] - cell.lower[a]))
                .collect::<Vec<_>>()
        })
        .collect();
    Ok(QuadRuleND {
        dim: rule.dim,
        points,
        weights: rule.weights.iter().map(|w| w * vol).collect(),
        counts: rule.counts.clone(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn one_and_two_point_rules() {
        let r1 = gauss_legendre(1).unwrap();
        assert_eq!(r1.nodes, vec![0.5]);
        assert_eq!(r1.weights, vec![1.0]);
        let r2 = gauss_legendre(2).unwrap();
        let s = 1.0 / 3f64.sqrt();
        assert!((r2.nodes[0] - 0.5 * (1.0 - s)).abs() < 1e-15);
        assert!((r2.nodes[1] - 0.5 * (1.0 + s)).abs() < 1e-15);
        assert!((r2.weights[0] - 0.5).abs() < 1e-15);
        assert!((r2.integrate(|x| x.powi(3)) - 0.25).abs() < 1e-15);
        assert_eq!(r2.exact_degree, 3);
    }

    #[test]
    fn three_point_closed_form() {
        let r = gauss_legendre(3).unwrap();
        let s = (0.6f64).sqrt();
        assert!((r.nodes[0] - 0.5 * (1.0 - s)).abs() < 1e-15);
        assert!((r.weights[0] - 5.0 / 18.0).abs() < 1e-15);
        assert!((r.weights[1] - 8.0 / 18.0).abs() < 1e-15);
    }

    #[test]
    fn out_of_range_counts_rejected() {
        assert!(gauss_legendre(0).is_err());
        assert!(gauss_legendre(17).is_err());
        assert!(tensor_rule(&[]).is_err());
    }

    #[test]
    fn weights_sum_to_one_and_nodes_increase() {
        for n in 1..=MAX_POINTS {
            let r = gauss_legendre(n).unwrap();
            let s: f64 = r.weights.iter().sum();
            assert!((s - 1.0).abs() < 1e-14, "n={n}: {s}");
            assert!(r.nodes.windows(2).all(|w| w[0] < w[1]));
            assert!(r.nodes[0] > 0.0 && r.nodes[n - 1] < 1.0);
            assert!(r.weights.iter().all(|&w| w > 0.0));
        }
    }

    #[test]
    fn lobatto_nodes() {
        assert_eq!(gauss_lobatto_nodes(1).unwrap(), vec![0.0, 1.0]);
        assert_eq!(gauss_lobatto_nodes(2).unwrap(), vec![0.0, 0.5, 1.0]);
        let n3 = gauss_lobatto_nodes(3).unwrap();
        let s = 1.0 / 5f64.sqrt();
        assert!((n3[1] - 0.5 * (1.0 - s)).abs() < 1e-15);
        let n4 = gauss_lobatto_nodes(4).unwrap();
        let s = (3.0f64 / 7.0).sqrt();
        assert!((n4[1] - 0.5 * (1.0 - s)).abs() < 1e-15);
    }

    #[test]
    fn tensor_examples() {
        let g1 = gauss_legendre(1).unwrap();
        let t = tensor_rule(&[g1.clone(), g1]).unwrap();
        assert_eq!(t.len(), 1);
        assert_eq!(t.point(0), &[0.5, 0.5]);
        assert_eq!(t.weights, vec![1.0]);

        let g2 = gauss_legendre(2).unwrap();
        let t = tensor_rule(&[g2.clone(), g2]).unwrap();
        assert_eq!(t.len(), 4);
        assert!(t.weights.iter().all(|&w| (w - 0.25).abs() < 1e-15));
        let v = t.integrate(|p| p[0] * p[0] * p[1] * p[1]);
        assert!((v - 1.0 / 9.0).abs() < 1e-15);
    }

    #[test]
    fn map_rule_examples() {
        let r = tensor_rule(&[gauss_legendre(1).unwrap()]).unwrap();
        let m = map_rule(&r, &AxisBox::new(vec![0.0], vec![2.0])).unwrap();
        assert_eq!(m.point(0), &[1.0]);
        assert_eq!(m.weights, vec![2.0]);

        let r = tensor_rule(&[gauss_legendre(2).unwrap()]).unwrap();
        let (a, b) = (-0.3, 1.7);
        let m = map_rule(&r, &AxisBox::new(vec![a], vec![b])).unwrap();
        let exact = (b.powi(4) - a.powi(4)) / 4.0;
        assert!((m.integrate(|p| p[0].powi(3)) - exact).abs() < 1e-14);
        let s: f64 = m.weights.iter().sum();
        assert!((s - (b - a)).abs() < 1e-15);

        assert!(map_rule(&r, &AxisBox::new(vec![1.0], vec![1.0])).is_err());
    }
}
