//! Degree-of-freedom layouts for the three discrete spaces.
//!
//! * [`VSpace`]: continuous tensor-product Lagrange elements of degree `q` on the
//!   space-time mesh, nodes at Gauss-Lobatto points. Holds the potential.
//! * [`WSpace`]: one value per space-time Gauss point, `(k+1)^(d+1)` per cell.
//!   Holds density/momentum multipliers and their duals.
//! * [`MSpace`]: one value per spatial Gauss point, `(k+1)^d` per spatial cell.
//!   Holds the terminal density and its dual.
//!
//! Space-time coordinates are ordered `(t, x[, y])` everywhere.

use crate::error::{ensure_arg, Result};
use crate::mesh::{SpaceTimeMesh, SpatialMesh};
use crate::quad::{gauss_legendre, gauss_lobatto_nodes, tensor_rule, QuadRule1D, QuadRuleND};

/// Lagrange basis on `[0, 1]` through a fixed node set.
#[derive(Debug, Clone)]
pub struct Lagrange1D {
    pub nodes: Vec<f64>,
}

impl Lagrange1D {
    pub fn new(nodes: Vec<f64>) -> Self {
        Self { nodes }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn values(&self, x: f64) -> Vec<f64> {
        let n = &self.nodes;
        (0..n.len())
            .map(|i| {
                (0..n.len())
                    .filter(|&m| m != i)
                    .map(|m| (x - n[m]) / (n[i] - n[m]))
                    .product()
            })
            .collect()
    }

    pub fn derivatives(&self, x: f64) -> Vec<f64> {
        let n = &self.nodes;
        (0..n.len())
            .map(|i| {
                let mut s = 0.0;
                for m in (0..n.len()).filter(|&m| m != i) {
                    let mut p = 1.0 / (n[i] - n[m]);
                    for o in (0..n.len()).filter(|&o| o != i && o != m) {
                        p *= (x - n[o]) / (n[i] - n[o]);
                    }
                    s += p;
                }
                s
            })
            .collect()
    }
}

fn pow(base: usize, e: usize) -> usize {
    base.pow(e as u32)
}

/// Decomposes a lexicographic local index (x fastest) into per-axis indices.
#[inline]
pub(crate) fn split_spatial(is: usize, n1: usize, dim: usize) -> [usize; 2] {
    if dim == 1 {
        [is, 0]
    } else {
        [is % n1, is / n1]
    }
}

/// The H1-conforming space-time space of per-axis degree `q`.
#[derive(Debug, Clone)]
pub struct VSpace {
    pub mesh: SpaceTimeMesh,
    pub degree: usize,
    pub basis: Lagrange1D,
    n_snodes: usize,
    /// Spatial node per (active cell, local spatial node), stride `(q+1)^d`.
    cell_snodes: Vec<usize>,
    /// Physical coordinates of the spatial nodes, stride `d`.
    snode_coords: Vec<f64>,
}

impl VSpace {
    pub fn dim(&self) -> usize {
        self.mesh.dim()
    }

    pub fn n_spatial_nodes(&self) -> usize {
        self.n_snodes
    }

    pub fn n_time_nodes(&self) -> usize {
        self.mesh.n_time * self.degree + 1
    }

    pub fn n_dofs(&self) -> usize {
        self.n_time_nodes() * self.n_snodes
    }

    /// Local basis functions per spatial cell.
    pub fn n_local_spatial(&self) -> usize {
        pow(self.degree + 1, self.dim())
    }

    /// Local basis functions per space-time cell.
    pub fn n_local(&self) -> usize {
        (self.degree + 1) * self.n_local_spatial()
    }

    pub fn cell_spatial_nodes(&self, l: usize) -> &[usize] {
        let n = self.n_local_spatial();
        &self.cell_snodes[l * n..(l + 1) * n]
    }

    pub fn spatial_node_coords(&self, s: usize) -> &[f64] {
        let d = self.dim();
        &self.snode_coords[s * d..(s + 1) * d]
    }

    pub fn time_node_coord(&self, tn: usize) -> f64 {
        let q = self.degree;
        let (j, it) = if tn == self.n_time_nodes() - 1 {
            (self.mesh.n_time - 1, q)
        } else {
            (tn / q, tn % q)
        };
        let (t0, t1) = self.mesh.interval(j);
        t0 + self.basis.nodes[it] * (t1 - t0)
    }

    /// Global DOF of local node `(it, is)` in space-time cell `(j, l)`.
    #[inline]
    pub fn dof(&self, j: usize, l: usize, it: usize, is: usize) -> usize {
        (j * self.degree + it) * self.n_snodes + self.cell_snodes[l * self.n_local_spatial() + is]
    }

    /// Global DOFs of space-time cell `(j, l)` in local order `it * (q+1)^d + is`.
    pub fn cell_dofs(&self, j: usize, l: usize) -> Vec<usize> {
        let ns = self.n_local_spatial();
        let mut out = Vec::with_capacity(self.n_local());
        for it in 0..=self.degree {
            for is in 0..ns {
                out.push(self.dof(j, l, it, is));
            }
        }
        out
    }

    /// Space-time coordinates `(t, x[, y])` of a DOF.
    pub fn dof_coords(&self, dof: usize) -> Vec<f64> {
        let tn = dof / self.n_snodes;
        let s = dof % self.n_snodes;
        let mut c = vec![self.time_node_coord(tn)];
        c.extend_from_slice(self.spatial_node_coords(s));
        c
    }

    /// Nodal interpolant of `f(t, x)`.
    pub fn interpolate(&self, f: impl Fn(f64, &[f64]) -> f64) -> Vec<f64> {
        (0..self.n_dofs())
            .map(|dof| {
                let c = self.dof_coords(dof);
                f(c[0], &c[1..])
            })
            .collect()
    }

    /// Evaluates a V field at a physical space-time point.
    pub fn evaluate(&self, phi: &[f64], t: f64, x: &[f64]) -> Option<f64> {
        let (j, rt) = self.mesh.locate_time(t);
        let (l, rx) = self.mesh.spatial.locate(x)?;
        let vt = self.basis.values(rt);
        let vx: Vec<Vec<f64>> = rx.iter().map(|&r| self.basis.values(r)).collect();
        let n1 = self.degree + 1;
        let mut v = 0.0;
        for it in 0..n1 {
            for is in 0..self.n_local_spatial() {
                let ia = split_spatial(is, n1, self.dim());
                let mut b = vt[it];
                for (a, va) in vx.iter().enumerate() {
                    b *= va[ia[a]];
                }
                v += b * phi[self.dof(j, l, it, is)];
            }
        }
        Some(v)
    }
}

/// Builds the continuous space of per-axis degree `q`.
pub fn build_v_space(mesh: &SpaceTimeMesh, q: usize) -> Result<VSpace> {
    ensure_arg!(q >= 1, "V-space degree must be at least 1");
    let basis = Lagrange1D::new(gauss_lobatto_nodes(q)?);
    let sp = &mesh.spatial;
    let d = sp.dim;
    let lattice: Vec<usize> = sp.cells_per_axis.iter().map(|&n| n * q + 1).collect();
    let n_lattice: usize = lattice.iter().product();
    let ns_local = pow(q + 1, d);

    let lattice_index = |l: usize, is: usize| -> usize {
        let mi = sp.cell_multi_index(l);
        let ia = split_spatial(is, q + 1, d);
        let ix = mi[0] * q + ia[0];
        if d == 1 {
            ix
        } else {
            ix + lattice[0] * (mi[1] * q + ia[1])
        }
    };

    let mut compact = vec![usize::MAX; n_lattice];
    for l in 0..sp.n_active() {
        for is in 0..ns_local {
            compact[lattice_index(l, is)] = 0;
        }
    }
    let mut n_snodes = 0;
    let mut snode_coords = Vec::new();
    for (li, c) in compact.iter_mut().enumerate() {
        if *c == 0 {
            *c = n_snodes;
            n_snodes += 1;
            let idx = if d == 1 {
                [li, 0]
            } else {
                [li % lattice[0], li / lattice[0]]
            };
            for a in 0..d {
                let cell = (idx[a] / q).min(sp.cells_per_axis[a] - 1);
                let local = idx[a] - cell * q;
                snode_coords.push(sp.origin[a] + (cell as f64 + basis.nodes[local]) * sp.h[a]);
            }
        }
    }
    let mut cell_snodes = Vec::with_capacity(sp.n_active() * ns_local);
    for l in 0..sp.n_active() {
        for is in 0..ns_local {
            cell_snodes.push(compact[lattice_index(l, is)]);
        }
    }
    Ok(VSpace {
        mesh: mesh.clone(),
        degree: q,
        basis,
        n_snodes,
        cell_snodes,
        snode_coords,
    })
}

/// Values and physical space-time gradients of the local V basis at a set of points.
#[derive(Debug, Clone)]
pub struct BasisTable {
    pub n_points: usize,
    pub n_basis: usize,
    /// Space-time dimension `d + 1`.
    pub n_comp: usize,
    /// `values[p * n_basis + i]`
    pub values: Vec<f64>,
    /// `grads[(p * n_basis + i) * n_comp + c]`
    pub grads: Vec<f64>,
}

impl BasisTable {
    #[inline]
    pub fn value(&self, p: usize, i: usize) -> f64 {
        self.values[p * self.n_basis + i]
    }

    #[inline]
    pub fn grad(&self, p: usize, i: usize) -> &[f64] {
        let o = (p * self.n_basis + i) * self.n_comp;
        &self.grads[o..o + self.n_comp]
    }
}

/// Tabulates the local basis at reference points `ref_points` (coordinates in `[0,1]^(d+1)`),
/// with gradients scaled to the physical cell sizes.
pub(crate) fn tabulate_reference(v: &VSpace, ref_points: &[Vec<f64>]) -> BasisTable {
    let d = v.dim();
    let n1 = v.degree + 1;
    let ns = v.n_local_spatial();
    let nb = v.n_local();
    let scale: Vec<f64> = std::iter::once(v.mesh.dt)
        .chain(v.mesh.spatial.h.iter().copied())
        .collect();
    let mut values = Vec::with_capacity(ref_points.len() * nb);
    let mut grads = Vec::with_capacity(ref_points.len() * nb * (d + 1));
    for p in ref_points {
        let vals: Vec<Vec<f64>> = p.iter().map(|&r| v.basis.values(r)).collect();
        let ders: Vec<Vec<f64>> = p.iter().map(|&r| v.basis.derivatives(r)).collect();
        for it in 0..n1 {
            for is in 0..ns {
                let ia = split_spatial(is, n1, d);
                let idx: Vec<usize> = std::iter::once(it).chain(ia[..d].iter().copied()).collect();
                let val: f64 = (0..=d).map(|a| vals[a][idx[a]]).product();
                values.push(val);
                for c in 0..=d {
                    let g: f64 = (0..=d)
                        .map(|a| if a == c { ders[a][idx[a]] } else { vals[a][idx[a]] })
                        .product();
                    grads.push(g / scale[c]);
                }
            }
        }
    }
    BasisTable {
        n_points: ref_points.len(),
        n_basis: nb,
        n_comp: d + 1,
        values,
        grads,
    }
}

/// Evaluates the local basis of space-time cell `cell = (j, l)` at physical points.
pub fn eval_v_basis(v: &VSpace, cell: (usize, usize), points: &QuadRuleND) -> Result<BasisTable> {
    let d = v.dim();
    ensure_arg!(points.dim == d + 1, "points must have dimension {}", d + 1);
    let (t0, t1) = v.mesh.interval(cell.0);
    let lower = v.mesh.spatial.cell_lower(cell.1);
    let mut refs = Vec::with_capacity(points.len());
    for p in points.points() {
        let mut r = vec![(p[0] - t0) / (t1 - t0)];
        for a in 0..d {
            r.push((p[a + 1] - lower[a]) / v.mesh.spatial.h[a]);
        }
        ensure_arg!(
            r.iter().all(|&s| (-1e-12..=1.0 + 1e-12).contains(&s)),
            "point {p:?} lies outside cell {cell:?}"
        );
        refs.push(r);
    }
    Ok(tabulate_reference(v, &refs))
}

/// Time node index (in the V time lattice) of the slice `t = 0` or `t = 1`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TraceMap {
    pub time_node: usize,
}

impl TraceMap {
    /// V DOFs on the slice, indexed by spatial node.
    pub fn dofs(&self, v: &VSpace) -> std::ops::Range<usize> {
        let n = v.n_spatial_nodes();
        self.time_node * n..(self.time_node + 1) * n
    }

    /// `phi(t, .)` at every M point.
    pub fn eval_at_m_points(&self, v: &VSpace, m: &MSpace, phi: &[f64]) -> Vec<f64> {
        let slice = &phi[self.dofs(v)];
        let tab = &m.trace_table;
        let ns = v.n_local_spatial();
        let mut out = vec![0.0; m.n_dofs()];
        for l in 0..m.spatial.n_active() {
            let nodes = v.cell_spatial_nodes(l);
            for ps in 0..m.n_local() {
                out[l * m.n_local() + ps] = (0..ns).map(|is| tab[ps * ns + is] * slice[nodes[is]]).sum();
            }
        }
        out
    }

    /// Adds `(f, psi_i(t, .))_h` into `rhs` for all V test functions, with `f` given at M points.
    pub fn scatter_pairing(&self, v: &VSpace, m: &MSpace, f: &[f64], scale: f64, rhs: &mut [f64]) {
        let base = self.time_node * v.n_spatial_nodes();
        let tab = &m.trace_table;
        let ns = v.n_local_spatial();
        for l in 0..m.spatial.n_active() {
            let nodes = v.cell_spatial_nodes(l);
            for ps in 0..m.n_local() {
                let idx = l * m.n_local() + ps;
                let fw = scale * f[idx] * m.weights[idx];
                for is in 0..ns {
                    rhs[base + nodes[is]] += fw * tab[ps * ns + is];
                }
            }
        }
    }
}

/// Trace at `t = 0` (`at_end = false`) or `t = 1`.
pub fn trace_map(v: &VSpace, at_end: bool) -> TraceMap {
    TraceMap {
        time_node: if at_end { v.n_time_nodes() - 1 } else { 0 },
    }
}

/// Spatial Gauss-point space: `(k+1)^d` values per active spatial cell.
#[derive(Debug, Clone)]
pub struct MSpace {
    pub spatial: SpatialMesh,
    pub k: usize,
    pub rule: QuadRuleND,
    /// Physical weights per DOF.
    pub weights: Vec<f64>,
    coords: Vec<f64>,
    /// V spatial basis (degree `k+1`) at the reference spatial Gauss points,
    /// `[ps * (k+2)^d + is]`.
    trace_table: Vec<f64>,
}

impl MSpace {
    pub fn n_local(&self) -> usize {
        self.rule.len()
    }

    pub fn n_dofs(&self) -> usize {
        self.weights.len()
    }

    pub fn coords(&self, i: usize) -> &[f64] {
        let d = self.spatial.dim;
        &self.coords[i * d..(i + 1) * d]
    }

    /// Samples `f(x)` at every DOF.
    pub fn sample(&self, f: impl Fn(&[f64]) -> f64) -> Vec<f64> {
        (0..self.n_dofs()).map(|i| f(self.coords(i))).collect()
    }

    /// `(f, g)_h`
    pub fn inner(&self, f: &[f64], g: &[f64]) -> f64 {
        self.weights
            .iter()
            .zip(f.iter().zip(g))
            .map(|(w, (a, b))| w * a * b)
            .sum()
    }

    /// `(f, 1)_h`
    pub fn integrate(&self, f: &[f64]) -> f64 {
        self.weights.iter().zip(f).map(|(w, a)| w * a).sum()
    }
}

/// Spatial Gauss rule with the x index varying fastest, matching the V node order.
fn spatial_gauss(k: usize, d: usize) -> Result<QuadRuleND> {
    let g = gauss_legendre(k + 1)?;
    let r = tensor_rule(&vec![g; d])?;
    if d == 1 {
        return Ok(r);
    }
    // tensor_rule makes the first axis slowest; read its output as (y, x).
    let pts = r.points().flat_map(|p| [p[1], p[0]]).collect();
    Ok(QuadRuleND::from_parts(2, pts, r.weights.clone(), vec![k + 1, k + 1]))
}

pub fn build_m_space(spatial: &SpatialMesh, k: usize) -> Result<MSpace> {
    let d = spatial.dim;
    let rule = spatial_gauss(k, d)?;
    let vol = spatial.cell_volume();
    let mut weights = Vec::with_capacity(spatial.n_active() * rule.len());
    let mut coords = Vec::with_capacity(spatial.n_active() * rule.len() * d);
    for l in 0..spatial.n_active() {
        let lower = spatial.cell_lower(l);
        for (p, w) in rule.points().zip(&rule.weights) {
            weights.push(w * vol);
            for a in 0..d {
                coords.push(lower[a] + p[a] * spatial.h[a]);
            }
        }
    }
    let lag = Lagrange1D::new(gauss_lobatto_nodes(k + 1)?);
    let n1 = k + 2;
    let ns = pow(n1, d);
    let mut trace_table = Vec::with_capacity(rule.len() * ns);
    for p in rule.points() {
        let vals: Vec<Vec<f64>> = p.iter().map(|&r| lag.values(r)).collect();
        for is in 0..ns {
            let ia = split_spatial(is, n1, d);
            trace_table.push((0..d).map(|a| vals[a][ia[a]]).product());
        }
    }
    Ok(MSpace {
        spatial: spatial.clone(),
        k,
        rule,
        weights,
        coords,
        trace_table,
    })
}

/// Space-time Gauss-point space: `(k+1)^(d+1)` values per space-time cell.
///
/// Point `p` of cell `(j, l)` with local index `it * (k+1)^d + is` has global index
/// `(j * n_active + l) * (k+1)^(d+1) + it * (k+1)^d + is`; its spatial part is
/// M DOF `l * (k+1)^d + is`.
#[derive(Debug, Clone)]
pub struct WSpace {
    pub mesh: SpaceTimeMesh,
    pub k: usize,
    pub time_rule: QuadRule1D,
    pub spatial_rule: QuadRuleND,
    /// Physical weights per point.
    pub weights: Vec<f64>,
}

impl WSpace {
    pub fn n_time_local(&self) -> usize {
        self.k + 1
    }

    pub fn n_spatial_local(&self) -> usize {
        self.spatial_rule.len()
    }

    pub fn n_local(&self) -> usize {
        self.n_time_local() * self.n_spatial_local()
    }

    pub fn n_dofs(&self) -> usize {
        self.mesh.n_cells() * self.n_local()
    }

    #[inline]
    pub fn index(&self, j: usize, l: usize, it: usize, is: usize) -> usize {
        (j * self.mesh.spatial.n_active() + l) * self.n_local() + it * self.n_spatial_local() + is
    }

    /// Inverse of [`WSpace::index`]: `(j, l, it, is)`.
    #[inline]
    pub fn split(&self, p: usize) -> (usize, usize, usize, usize) {
        let nl = self.n_local();
        let cell = p / nl;
        let loc = p % nl;
        let na = self.mesh.spatial.n_active();
        (cell / na, cell % na, loc / self.n_spatial_local(), loc % self.n_spatial_local())
    }

    /// M DOF sharing the spatial location of W point `p`.
    #[inline]
    pub fn m_index(&self, p: usize) -> usize {
        let (_, l, _, is) = self.split(p);
        l * self.n_spatial_local() + is
    }

    pub fn time_of(&self, j: usize, it: usize) -> f64 {
        let (t0, t1) = self.mesh.interval(j);
        t0 + self.time_rule.nodes[it] * (t1 - t0)
    }

    /// Space-time coordinates `(t, x[, y])` of point `p`.
    pub fn coords(&self, p: usize) -> Vec<f64> {
        let (j, l, it, is) = self.split(p);
        let lower = self.mesh.spatial.cell_lower(l);
        let sp = self.spatial_rule.point(is);
        let mut c = vec![self.time_of(j, it)];
        for a in 0..self.mesh.dim() {
            c.push(lower[a] + sp[a] * self.mesh.spatial.h[a]);
        }
        c
    }

    /// Samples `f(t, x)` at every point.
    pub fn sample(&self, f: impl Fn(f64, &[f64]) -> f64) -> Vec<f64> {
        (0..self.n_dofs())
            .map(|p| {
                let c = self.coords(p);
                f(c[0], &c[1..])
            })
            .collect()
    }

    /// `<f, g>_h` for scalar fields.
    pub fn inner(&self, f: &[f64], g: &[f64]) -> f64 {
        self.weights
            .iter()
            .zip(f.iter().zip(g))
            .map(|(w, (a, b))| w * a * b)
            .sum()
    }

    /// Local interpolation basis through the cell's Gauss points, evaluated at the
    /// reference point `r = (t, x[, y])` in `[0, 1]^(d+1)`; one value per local point.
    pub fn local_basis(&self, r: &[f64]) -> Vec<f64> {
        let lag = Lagrange1D::new(self.time_rule.nodes.clone());
        let d = self.mesh.dim();
        let n1 = self.k + 1;
        let vt = lag.values(r[0]);
        let vx: Vec<Vec<f64>> = r[1..=d].iter().map(|&s| lag.values(s)).collect();
        let mut out = Vec::with_capacity(self.n_local());
        for v in &vt {
            for is in 0..self.n_spatial_local() {
                let ia = split_spatial(is, n1, d);
                let mut b = *v;
                for (a, va) in vx.iter().enumerate() {
                    b *= va[ia[a]];
                }
                out.push(b);
            }
        }
        out
    }

    /// Per-cell polynomial reconstruction of a W field with `components` interleaved
    /// values per point, evaluated at a physical point. `None` outside the active region.
    pub fn reconstruct(&self, values: &[f64], components: usize, t: f64, x: &[f64]) -> Option<Vec<f64>> {
        let (j, rt) = self.mesh.locate_time(t);
        let (l, rx) = self.mesh.spatial.locate(x)?;
        let mut r = vec![rt];
        r.extend(rx);
        let basis = self.local_basis(&r);
        let base = self.index(j, l, 0, 0);
        let mut out = vec![0.0; components];
        for (i, b) in basis.iter().enumerate() {
            let v = &values[(base + i) * components..(base + i + 1) * components];
            out.iter_mut().zip(v).for_each(|(o, vi)| *o += b * vi);
        }
        Some(out)
    }
}

pub fn build_w_space(mesh: &SpaceTimeMesh, k: usize) -> Result<WSpace> {
    let time_rule = gauss_legendre(k + 1)?;
    let spatial_rule = spatial_gauss(k, mesh.dim())?;
    let vol = mesh.cell_volume();
    let mut local = Vec::with_capacity(time_rule.len() * spatial_rule.len());
    for wt in &time_rule.weights {
        for ws in &spatial_rule.weights {
            local.push(wt * ws * vol);
        }
    }
    let weights = (0..mesh.n_cells()).flat_map(|_| local.iter().copied()).collect();
    Ok(WSpace {
        mesh: mesh.clone(),
        k,
        time_rule,
        spatial_rule,
        weights,
    })
}

/// Which space a coefficient vector belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SpaceKind {
    V,
    W,
    M,
}

/// Coefficients over a space, `components` values per DOF (interleaved).
#[derive(Debug, Clone, PartialEq)]
pub struct CoefficientField {
    pub kind: SpaceKind,
    pub components: usize,
    pub values: Vec<f64>,
}

impl CoefficientField {
    pub fn zeros(kind: SpaceKind, n_dofs: usize, components: usize) -> Self {
        Self {
            kind,
            components,
            values: vec![0.0; n_dofs * components],
        }
    }

    pub fn n_dofs(&self) -> usize {
        self.values.len() / self.components
    }

    #[inline]
    pub fn at(&self, dof: usize) -> &[f64] {
        &self.values[dof * self.components..(dof + 1) * self.components]
    }

    /// Component `c` as a contiguous vector.
    pub fn component(&self, c: usize) -> Vec<f64> {
        self.values
            .iter()
            .skip(c)
            .step_by(self.components)
            .copied()
            .collect()
    }

    pub(crate) fn check(&self, kind: SpaceKind, n_dofs: usize, what: &str) -> Result<()> {
        ensure_arg!(
            self.kind == kind && self.values.len() == n_dofs * self.components,
            "{what}: expected {kind:?} field with {n_dofs} DOFs, got {:?} with {} values",
            self.kind,
            self.values.len()
        );
        Ok(())
    }
}
