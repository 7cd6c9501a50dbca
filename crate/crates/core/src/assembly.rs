//! Step-A system: exact space-time stiffness and terminal mass, and the
//! right-hand side pairings computed with the discrete products at the W and
//! M quadrature points.
//!
//! The operator `r1 K + r2 M1` is a Kronecker sum
//! `(r1 Kt + r2 E) ⊗ Ms + (r1 Mt) ⊗ Ks` of 1D time matrices and spatial
//! matrices; [`step_a_operator`] builds that form and [`assemble_stiffness`]
//! the explicit sparse matrix.

use crate::error::{ensure_arg, Result};
use crate::fespace::{
    build_m_space, build_v_space, build_w_space, split_spatial, tabulate_reference, trace_map, CoefficientField,
    Lagrange1D, MSpace, SpaceKind, TraceMap, VSpace, WSpace,
};
use crate::mesh::SpaceTimeMesh;
use crate::quad::{gauss_legendre, tensor_rule};
pub use crate::solver::SparseSymMatrix;
use crate::solver::KroneckerSum;
use rayon::prelude::*;

/// Dense `(q+1) x (q+1)` matrices, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct Local1D {
    pub n: usize,
    pub mass: Vec<f64>,
    pub stiffness: Vec<f64>,
}

/// Exact 1D mass and stiffness of the degree-`q` Lobatto-Lagrange basis on an interval of length `h`.
pub fn local_1d(q: usize, h: f64) -> Result<Local1D> {
    ensure_arg!(h > 0.0, "interval length must be positive");
    let basis = Lagrange1D::new(crate::quad::gauss_lobatto_nodes(q)?);
    let rule = gauss_legendre(q + 1)?;
    let n = q + 1;
    let mut mass = vec![0.0; n * n];
    let mut stiffness = vec![0.0; n * n];
    for (x, w) in rule.nodes.iter().zip(&rule.weights) {
        let v = basis.values(*x);
        let d = basis.derivatives(*x);
        for i in 0..n {
            for j in 0..n {
                mass[i * n + j] += w * v[i] * v[j] * h;
                stiffness[i * n + j] += w * d[i] * d[j] / h;
            }
        }
    }
    Ok(Local1D { n, mass, stiffness })
}

/// Global 1D time stiffness `Kt` and mass `Mt` over the time lattice of `v`.
pub fn time_matrices(v: &VSpace) -> Result<(SparseSymMatrix, SparseSymMatrix)> {
    let q = v.degree;
    let loc = local_1d(q, v.mesh.dt)?;
    let nt = v.n_time_nodes();
    let mut tk = Vec::new();
    let mut tm = Vec::new();
    for j in 0..v.mesh.n_time {
        for a in 0..=q {
            for b in 0..=q {
                tk.push((j * q + a, j * q + b, loc.stiffness[a * loc.n + b]));
                tm.push((j * q + a, j * q + b, loc.mass[a * loc.n + b]));
            }
        }
    }
    Ok((SparseSymMatrix::from_triplets(nt, tk), SparseSymMatrix::from_triplets(nt, tm)))
}

/// Global spatial mass `Ms` and stiffness `Ks` over the active cells.
pub fn spatial_matrices(v: &VSpace) -> Result<(SparseSymMatrix, SparseSymMatrix)> {
    let sp = &v.mesh.spatial;
    let d = sp.dim;
    let q = v.degree;
    let n1 = q + 1;
    let lx = local_1d(q, sp.h[0])?;
    let ly = if d == 2 { Some(local_1d(q, sp.h[1])?) } else { None };
    let ns = v.n_local_spatial();
    let mut lm = vec![0.0; ns * ns];
    let mut lk = vec![0.0; ns * ns];
    for i in 0..ns {
        let ia = split_spatial(i, n1, d);
        for j in 0..ns {
            let ja = split_spatial(j, n1, d);
            let (mx, kx) = (lx.mass[ia[0] * n1 + ja[0]], lx.stiffness[ia[0] * n1 + ja[0]]);
            match &ly {
                None => {
                    lm[i * ns + j] = mx;
                    lk[i * ns + j] = kx;
                }
                Some(ly) => {
                    let (my, ky) = (ly.mass[ia[1] * n1 + ja[1]], ly.stiffness[ia[1] * n1 + ja[1]]);
                    lm[i * ns + j] = mx * my;
                    lk[i * ns + j] = kx * my + mx * ky;
                }
            }
        }
    }
    let mut tm = Vec::with_capacity(sp.n_active() * ns * ns);
    let mut tk = Vec::with_capacity(sp.n_active() * ns * ns);
    for l in 0..sp.n_active() {
        let nodes = v.cell_spatial_nodes(l);
        for i in 0..ns {
            for j in 0..ns {
                tm.push((nodes[i], nodes[j], lm[i * ns + j]));
                tk.push((nodes[i], nodes[j], lk[i * ns + j]));
            }
        }
    }
    let n = v.n_spatial_nodes();
    Ok((SparseSymMatrix::from_triplets(n, tm), SparseSymMatrix::from_triplets(n, tk)))
}

/// The Step-A operator `r1 K + r2 M1` in Kronecker form.
pub fn step_a_operator(v: &VSpace, r1: f64, r2: f64) -> Result<KroneckerSum> {
    ensure_arg!(r1 > 0.0 && r2 >= 0.0, "need r1 > 0 and r2 >= 0 (got {r1}, {r2})");
    let (kt, mt) = time_matrices(v)?;
    let (ms, ks) = spatial_matrices(v)?;
    let nt = v.n_time_nodes();
    let top = SparseSymMatrix::from_triplets(nt, vec![(nt - 1, nt - 1, 1.0)]);
    let t1 = kt.linear_combination(r1, &top, r2);
    let t2 = mt.linear_combination(r1, &top, 0.0);
    KroneckerSum::new(t1, ms, t2, ks)
}

/// Local space-time stiffness of one cell, by tensor Gauss quadrature with `q+1` points per axis.
fn local_stiffness(v: &VSpace) -> Result<Vec<f64>> {
    let d = v.dim();
    let rule = tensor_rule(&vec![gauss_legendre(v.degree + 1)?; d + 1])?;
    let refs: Vec<Vec<f64>> = rule.points().map(|p| p.to_vec()).collect();
    let tab = tabulate_reference(v, &refs);
    let nb = v.n_local();
    let vol = v.mesh.cell_volume();
    let mut k = vec![0.0; nb * nb];
    for (p, w) in rule.weights.iter().enumerate() {
        for i in 0..nb {
            let gi = tab.grad(p, i);
            for j in 0..nb {
                let gj = tab.grad(p, j);
                k[i * nb + j] += w * vol * gi.iter().zip(gj).map(|(a, b)| a * b).sum::<f64>();
            }
        }
    }
    Ok(k)
}

/// Explicit space-time stiffness `K_ij = ∫∫ ∇ψ_i · ∇ψ_j`.
pub fn assemble_stiffness(v: &VSpace) -> Result<SparseSymMatrix> {
    let k = local_stiffness(v)?;
    let nb = v.n_local();
    let mut t = Vec::with_capacity(v.mesh.n_cells() * nb * nb);
    for j in 0..v.mesh.n_time {
        for l in 0..v.mesh.spatial.n_active() {
            let dofs = v.cell_dofs(j, l);
            for a in 0..nb {
                for b in 0..nb {
                    t.push((dofs[a], dofs[b], k[a * nb + b]));
                }
            }
        }
    }
    Ok(SparseSymMatrix::from_triplets(v.n_dofs(), t))
}

/// Explicit terminal mass `M1_ij = ∫ ψ_i(1,x) ψ_j(1,x) dx`, zero off the `t = 1` slice.
pub fn assemble_terminal_mass(v: &VSpace) -> Result<SparseSymMatrix> {
    let (ms, _) = spatial_matrices(v)?;
    let base = (v.n_time_nodes() - 1) * v.n_spatial_nodes();
    let mut t = Vec::with_capacity(ms.nnz());
    for a in 0..ms.n() {
        t.extend(ms.row(a).map(|(b, x)| (base + a, base + b, x)));
    }
    Ok(SparseSymMatrix::from_triplets(v.n_dofs(), t))
}

/// One quadrature point on a lateral facet.
#[derive(Debug, Clone, PartialEq)]
pub struct BoundaryPoint {
    /// Space-time cell `(j, l)`.
    pub cell: (usize, usize),
    /// `(t, x[, y])`
    pub coords: Vec<f64>,
    pub normal: Vec<f64>,
    pub weight: f64,
    table: usize,
    local: usize,
}

/// The discrete spaces of one problem together with the evaluation tables used every iteration.
#[derive(Debug, Clone)]
pub struct Discretization {
    pub v: VSpace,
    pub w: WSpace,
    pub m: MSpace,
    pub start: TraceMap,
    pub end: TraceMap,
    /// `grad[(p * (d+1) + c) * n_basis + i]`: component `c` of `∇ψ_i` at local W point `p`.
    grad: Vec<f64>,
    /// `value[p * n_basis + i]`: `ψ_i` at local W point `p`.
    value: Vec<f64>,
    /// V basis values at reference facet points, one table per `(axis, upper)`.
    facet_tables: Vec<Vec<f64>>,
    pub boundary: Vec<BoundaryPoint>,
}

/// Builds `V^{k+1}`, `W^k`, `M^k` on `mesh` and their coupling tables.
pub fn build_discretization(mesh: &SpaceTimeMesh, k: usize) -> Result<Discretization> {
    let v = build_v_space(mesh, k + 1)?;
    let w = build_w_space(mesh, k)?;
    let m = build_m_space(&mesh.spatial, k)?;
    let d = mesh.dim();
    let nb = v.n_local();

    let refs: Vec<Vec<f64>> = (0..w.n_local())
        .map(|p| {
            let it = p / w.n_spatial_local();
            let is = p % w.n_spatial_local();
            let mut r = vec![w.time_rule.nodes[it]];
            r.extend_from_slice(w.spatial_rule.point(is));
            r
        })
        .collect();
    let tab = tabulate_reference(&v, &refs);
    let mut grad = vec![0.0; refs.len() * (d + 1) * nb];
    for p in 0..refs.len() {
        for i in 0..nb {
            for (c, g) in tab.grad(p, i).iter().enumerate() {
                grad[(p * (d + 1) + c) * nb + i] = *g;
            }
        }
    }

    // Facet rule: (k+1) Gauss points in time and along the facet.
    let g = gauss_legendre(k + 1)?;
    let mut facet_tables = Vec::with_capacity(2 * d);
    let mut facet_refs = Vec::with_capacity(2 * d);
    for axis in 0..d {
        for upper in [false, true] {
            let mut pts = Vec::new();
            let mut wts = Vec::new();
            for (tn, tw) in g.nodes.iter().zip(&g.weights) {
                if d == 1 {
                    pts.push(vec![*tn, if upper { 1.0 } else { 0.0 }]);
                    wts.push(*tw);
                } else {
                    for (sn, sw) in g.nodes.iter().zip(&g.weights) {
                        let mut r = vec![*tn, 0.0, 0.0];
                        r[1 + axis] = if upper { 1.0 } else { 0.0 };
                        r[2 - axis] = *sn;
                        pts.push(r);
                        wts.push(tw * sw);
                    }
                }
            }
            facet_tables.push(tabulate_reference(&v, &pts).values);
            facet_refs.push((pts, wts));
        }
    }
    let sp = &mesh.spatial;
    let mut boundary = Vec::new();
    for lf in mesh.boundary_facets() {
        let f = lf.facet;
        let table = 2 * f.axis + usize::from(f.upper);
        let (pts, wts) = &facet_refs[table];
        let (t0, _) = mesh.interval(lf.interval);
        let lower = sp.cell_lower(f.cell);
        let area: f64 = (0..d).filter(|&a| a != f.axis).map(|a| sp.h[a]).product();
        for (local, (r, wr)) in pts.iter().zip(wts).enumerate() {
            let mut coords = vec![t0 + r[0] * mesh.dt];
            for a in 0..d {
                coords.push(lower[a] + r[1 + a] * sp.h[a]);
            }
            boundary.push(BoundaryPoint {
                cell: (lf.interval, f.cell),
                coords,
                normal: f.normal(d),
                weight: wr * mesh.dt * area,
                table,
                local,
            });
        }
    }

    Ok(Discretization {
        start: trace_map(&v, false),
        end: trace_map(&v, true),
        v,
        w,
        m,
        grad,
        value: tab.values,
        facet_tables,
        boundary,
    })
}

impl Discretization {
    pub fn dim(&self) -> usize {
        self.v.dim()
    }

    /// Space-time cells in `(j, l)` order, matching the W numbering.
    fn cells(&self) -> impl IndexedParallelIterator<Item = (usize, usize, usize)> + '_ {
        let na = self.v.mesh.spatial.n_active();
        (0..self.v.mesh.n_cells()).into_par_iter().map(move |c| (c, c / na, c % na))
    }

    /// `∇φ` at every W point, interleaved `[p * (d+1) + c]`.
    pub fn gradv_at_points(&self, phi: &[f64]) -> Vec<f64> {
        let nc = self.dim() + 1;
        let nb = self.v.n_local();
        let chunk = self.w.n_local() * nc;
        let mut out = vec![0.0; self.w.n_dofs() * nc];
        out.par_chunks_mut(chunk).zip(self.cells()).for_each(|(o, (_, j, l))| {
            let loc: Vec<f64> = self.v.cell_dofs(j, l).into_iter().map(|g| phi[g]).collect();
            for (r, oi) in o.iter_mut().enumerate() {
                let row = &self.grad[r * nb..(r + 1) * nb];
                *oi = row.iter().zip(&loc).map(|(a, b)| a * b).sum();
            }
        });
        out
    }

    /// `φ` at every W point.
    pub fn v_at_points(&self, phi: &[f64]) -> Vec<f64> {
        let nb = self.v.n_local();
        let chunk = self.w.n_local();
        let mut out = vec![0.0; self.w.n_dofs()];
        out.par_chunks_mut(chunk).zip(self.cells()).for_each(|(o, (_, j, l))| {
            let loc: Vec<f64> = self.v.cell_dofs(j, l).into_iter().map(|g| phi[g]).collect();
            for (p, oi) in o.iter_mut().enumerate() {
                let row = &self.value[p * nb..(p + 1) * nb];
                *oi = row.iter().zip(&loc).map(|(a, b)| a * b).sum();
            }
        });
        out
    }

    /// `⟨f, ∇φ⟩_h` for an interleaved `(d+1)`-component W field `f`.
    pub fn pairing_w_gradv(&self, f: &CoefficientField, phi: &[f64]) -> Result<f64> {
        f.check(SpaceKind::W, self.w.n_dofs(), "pairing_w_gradv")?;
        ensure_arg!(f.components == self.dim() + 1, "pairing_w_gradv: field needs d+1 components");
        ensure_arg!(phi.len() == self.v.n_dofs(), "pairing_w_gradv: V field has wrong length");
        let g = self.gradv_at_points(phi);
        let nc = f.components;
        Ok(self
            .w
            .weights
            .iter()
            .enumerate()
            .map(|(p, w)| w * (0..nc).map(|c| f.values[p * nc + c] * g[p * nc + c]).sum::<f64>())
            .sum())
    }

    /// Adds `scale * ⟨f, ∇ψ_i⟩_h` to `rhs[i]` for every V test function.
    pub fn scatter_w_gradv(&self, f: &[f64], scale: f64, rhs: &mut [f64]) {
        let nc = self.dim() + 1;
        let nb = self.v.n_local();
        let nl = self.w.n_local();
        let local: Vec<Vec<f64>> = self
            .cells()
            .map(|(c, _, _)| {
                let mut out = vec![0.0; nb];
                for p in 0..nl {
                    let gp = c * nl + p;
                    let wt = scale * self.w.weights[gp];
                    for comp in 0..nc {
                        let fv = wt * f[gp * nc + comp];
                        if fv != 0.0 {
                            let row = &self.grad[(p * nc + comp) * nb..(p * nc + comp + 1) * nb];
                            out.iter_mut().zip(row).for_each(|(o, r)| *o += fv * r);
                        }
                    }
                }
                out
            })
            .collect();
        let na = self.v.mesh.spatial.n_active();
        for (c, out) in local.iter().enumerate() {
            for (g, val) in self.v.cell_dofs(c / na, c % na).into_iter().zip(out) {
                rhs[g] += val;
            }
        }
    }

    /// Samples `g(t, x, n)` at every boundary point.
    pub fn sample_boundary(&self, g: impl Fn(f64, &[f64], &[f64]) -> f64) -> Vec<f64> {
        self.boundary.iter().map(|b| g(b.coords[0], &b.coords[1..], &b.normal)).collect()
    }

    /// Adds `scale * ∫∫ ψ_i g` over the lateral boundary, `g` given at the boundary points.
    pub fn scatter_boundary(&self, g: &[f64], scale: f64, rhs: &mut [f64]) {
        let nb = self.v.n_local();
        for (b, gv) in self.boundary.iter().zip(g) {
            let tab = &self.facet_tables[b.table][b.local * nb..(b.local + 1) * nb];
            let f = scale * b.weight * gv;
            for (dof, t) in self.v.cell_dofs(b.cell.0, b.cell.1).into_iter().zip(tab) {
                rhs[dof] += f * t;
            }
        }
    }
}

/// Inputs of the Step-A right-hand side.
#[derive(Debug, Clone, Copy)]
pub struct StepAData<'a> {
    /// Multiplier `α`, `d+1` components per W point.
    pub alpha: &'a CoefficientField,
    /// Dual variable `α*`, `d+1` components per W point.
    pub alpha_star: &'a CoefficientField,
    /// Terminal density at the M points: data for OT/MFP, multiplier for MFG.
    pub rho1: &'a [f64],
    /// Terminal dual variable (MFG only).
    pub rho1_star: Option<&'a [f64]>,
    pub rho0: &'a [f64],
    /// `m_ex · n` at the boundary points.
    pub boundary_flux: Option<&'a [f64]>,
    pub r1: f64,
    pub r2: f64,
}

/// Load vector of the Step-A problem:
/// `⟨r1 α* − α, ∇ψ⟩_h − (r2 ρ1* − ρ1, ψ(1))_h − (ρ0, ψ(0))_h + ∫∫ ψ m_ex·n`.
pub fn assemble_step_a_rhs(disc: &Discretization, data: &StepAData) -> Result<Vec<f64>> {
    let nw = disc.w.n_dofs();
    let nm = disc.m.n_dofs();
    let nc = disc.dim() + 1;
    data.alpha.check(SpaceKind::W, nw, "alpha")?;
    data.alpha_star.check(SpaceKind::W, nw, "alpha_star")?;
    ensure_arg!(
        data.alpha.components == nc && data.alpha_star.components == nc,
        "alpha fields need {nc} components"
    );
    ensure_arg!(data.rho0.len() == nm && data.rho1.len() == nm, "rho0/rho1 must have {nm} M values");
    if let Some(rs) = data.rho1_star {
        ensure_arg!(rs.len() == nm, "rho1_star must have {nm} M values");
    }
    if let Some(b) = data.boundary_flux {
        ensure_arg!(b.len() == disc.boundary.len(), "boundary flux must have {} values", disc.boundary.len());
    }

    let mut rhs = vec![0.0; disc.v.n_dofs()];
    let f: Vec<f64> = data
        .alpha_star
        .values
        .iter()
        .zip(&data.alpha.values)
        .map(|(s, a)| data.r1 * s - a)
        .collect();
    disc.scatter_w_gradv(&f, 1.0, &mut rhs);

    let terminal: Vec<f64> = match data.rho1_star {
        Some(rs) => rs.iter().zip(data.rho1).map(|(s, r)| r - data.r2 * s).collect(),
        None => data.rho1.to_vec(),
    };
    disc.end.scatter_pairing(&disc.v, &disc.m, &terminal, 1.0, &mut rhs);
    disc.start.scatter_pairing(&disc.v, &disc.m, data.rho0, -1.0, &mut rhs);
    if let Some(b) = data.boundary_flux {
        disc.scatter_boundary(b, 1.0, &mut rhs);
    }
    Ok(rhs)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mesh::{build_spacetime_mesh, build_spatial_mesh};
    use crate::solver::LinearOperator;

    fn mesh(d: usize, cells: usize, n_time: usize) -> SpaceTimeMesh {
        let sp = build_spatial_mesh(&vec![0.0; d], &vec![1.0; d], &vec![cells; d], &[]).unwrap();
        build_spacetime_mesh(sp, n_time).unwrap()
    }

    #[test]
    fn one_d_hat_stiffness() {
        let l = local_1d(1, 0.25).unwrap();
        let want = [4.0, -4.0, -4.0, 4.0];
        for (a, b) in l.stiffness.iter().zip(want) {
            assert!((a - b).abs() < 1e-12);
        }
        let want = [0.25 / 3.0, 0.25 / 6.0, 0.25 / 6.0, 0.25 / 3.0];
        for (a, b) in l.mass.iter().zip(want) {
            assert!((a - b).abs() < 1e-15);
        }
    }

    #[test]
    fn unit_square_bilinear_stiffness_pattern() {
        // One space-time cell with d = 1: the (t, x) unit square.
        let v = build_v_space(&mesh(1, 1, 1), 1).unwrap();
        let k = assemble_stiffness(&v).unwrap();
        for i in 0..4 {
            for j in 0..4 {
                let ci = v.dof_coords(i);
                let cj = v.dof_coords(j);
                let diff = ((ci[0] - cj[0]).abs() > 0.5) as usize + ((ci[1] - cj[1]).abs() > 0.5) as usize;
                let want = [2.0 / 3.0, -1.0 / 6.0, -1.0 / 3.0][diff];
                assert!((k.get(i, j) - want).abs() < 1e-12, "{i},{j}");
            }
        }
    }

    #[test]
    fn stiffness_kills_constants_and_matches_kronecker_form() {
        for (d, q) in [(1, 1), (1, 3), (2, 2)] {
            let m = mesh(d, 3, 2);
            let v = build_v_space(&m, q).unwrap();
            let k = assemble_stiffness(&v).unwrap();
            assert!(k.asymmetry() < 1e-12);
            let r = k.mul_vec(&vec![1.0; v.n_dofs()]);
            assert!(r.iter().all(|x| x.abs() < 1e-11));
            let m1 = assemble_terminal_mass(&v).unwrap();
            let sum: f64 = m1.mul_vec(&vec![1.0; v.n_dofs()]).iter().sum();
            assert!((sum - 1.0).abs() < 1e-12);

            let (r1, r2) = (0.7, 1.3);
            let op = step_a_operator(&v, r1, r2).unwrap();
            let full = k.linear_combination(r1, &m1, r2);
            let x: Vec<f64> = (0..v.n_dofs()).map(|i| (i as f64 * 0.61).cos()).collect();
            let mut y = vec![0.0; x.len()];
            op.apply(&x, &mut y);
            let y2 = full.mul_vec(&x);
            for (a, b) in y.iter().zip(&y2) {
                assert!((a - b).abs() < 1e-11);
            }
        }
    }

    #[test]
    fn terminal_mass_single_cell() {
        let v = build_v_space(&mesh(1, 1, 1), 1).unwrap();
        let m1 = assemble_terminal_mass(&v).unwrap();
        let top: Vec<usize> = (0..4).filter(|&i| v.dof_coords(i)[0] == 1.0).collect();
        assert_eq!(top.len(), 2);
        assert!((m1.get(top[0], top[0]) - 1.0 / 3.0).abs() < 1e-15);
        assert!((m1.get(top[0], top[1]) - 1.0 / 6.0).abs() < 1e-15);
        assert_eq!(m1.nnz(), 4);
    }

    fn zero_fields(disc: &Discretization) -> (CoefficientField, CoefficientField, Vec<f64>) {
        let nc = disc.dim() + 1;
        (
            CoefficientField::zeros(SpaceKind::W, disc.w.n_dofs(), nc),
            CoefficientField::zeros(SpaceKind::W, disc.w.n_dofs(), nc),
            vec![0.0; disc.m.n_dofs()],
        )
    }

    #[test]
    fn zero_data_gives_zero_rhs() {
        let disc = build_discretization(&mesh(2, 2, 2), 1).unwrap();
        let (a, s, z) = zero_fields(&disc);
        let data = StepAData {
            alpha: &a,
            alpha_star: &s,
            rho1: &z,
            rho1_star: Some(&z),
            rho0: &z,
            boundary_flux: None,
            r1: 1.0,
            r2: 1.0,
        };
        assert!(assemble_step_a_rhs(&disc, &data).unwrap().iter().all(|&x| x == 0.0));
    }

    #[test]
    fn time_component_rhs_is_integral_of_dt_psi() {
        let disc = build_discretization(&mesh(1, 3, 2), 1).unwrap();
        let (a, mut s, z) = zero_fields(&disc);
        for p in 0..disc.w.n_dofs() {
            s.values[p * 2] = 1.0;
        }
        let data = StepAData {
            alpha: &a,
            alpha_star: &s,
            rho1: &z,
            rho1_star: None,
            rho0: &z,
            boundary_flux: None,
            r1: 1.0,
            r2: 0.0,
        };
        let rhs = assemble_step_a_rhs(&disc, &data).unwrap();
        // ∫∫ ∂_t ψ_i = ∫ ψ_i(1,x) − ψ_i(0,x): oracle from the 1D mass matrix row sums.
        let (ms, _) = spatial_matrices(&disc.v).unwrap();
        let row_sums = ms.mul_vec(&vec![1.0; ms.n()]);
        let ns = disc.v.n_spatial_nodes();
        let last = disc.v.n_time_nodes() - 1;
        for (i, r) in rhs.iter().enumerate() {
            let (tn, sn) = (i / ns, i % ns);
            let want = if tn == last {
                row_sums[sn]
            } else if tn == 0 {
                -row_sums[sn]
            } else {
                0.0
            };
            assert!((r - want).abs() < 1e-13, "dof {i}: {r} vs {want}");
        }
        assert!(rhs.iter().sum::<f64>().abs() < 1e-13);
    }

    #[test]
    fn matching_marginals_are_compatible() {
        let disc = build_discretization(&mesh(2, 3, 2), 2).unwrap();
        let (a, s, _) = zero_fields(&disc);
        let rho = disc.m.sample(|x| 1.0 + x[0] * x[1]);
        let data = StepAData {
            alpha: &a,
            alpha_star: &s,
            rho1: &rho,
            rho1_star: None,
            rho0: &rho,
            boundary_flux: None,
            r1: 1.0,
            r2: 0.0,
        };
        let rhs = assemble_step_a_rhs(&disc, &data).unwrap();
        assert!(rhs.iter().sum::<f64>().abs() < 1e-13);
    }

    #[test]
    fn pairing_against_direct_summation() {
        let m = mesh(1, 2, 3);
        let disc = build_discretization(&m, 1).unwrap();
        let phi = disc.v.interpolate(|t, _| t);
        let mut f = CoefficientField::zeros(SpaceKind::W, disc.w.n_dofs(), 2);
        for p in 0..disc.w.n_dofs() {
            f.values[2 * p] = 1.0;
        }
        assert!((disc.pairing_w_gradv(&f, &phi).unwrap() - 1.0).abs() < 1e-14);

        let c = disc.v.interpolate(|_, _| 3.0);
        assert!(disc.gradv_at_points(&c).iter().all(|g| g.abs() < 1e-12));

        // Random quadratic field against pointwise evaluation through eval_v_basis.
        let poly = |t: f64, x: &[f64]| 1.0 + t * t - 2.0 * t * x[0] + 0.5 * x[0] * x[0];
        let phi = disc.v.interpolate(poly);
        for (p, fv) in f.values.iter_mut().enumerate() {
            *fv = ((p * 13 % 7) as f64 - 3.0) * 0.1;
        }
        let got = disc.pairing_w_gradv(&f, &phi).unwrap();
        let mut want = 0.0;
        for p in 0..disc.w.n_dofs() {
            let c = disc.w.coords(p);
            let (t, x) = (c[0], c[1]);
            let g = [2.0 * t - 2.0 * x, -2.0 * t + x];
            want += disc.w.weights[p] * (f.values[2 * p] * g[0] + f.values[2 * p + 1] * g[1]);
        }
        assert!((got - want).abs() < 1e-12 * want.abs().max(1.0));
        let vals = disc.v_at_points(&phi);
        for (p, v) in vals.iter().enumerate() {
            let c = disc.w.coords(p);
            assert!((v - poly(c[0], &c[1..])).abs() < 1e-13);
        }
    }

    #[test]
    fn boundary_source_integrates_flux() {
        for d in [1, 2] {
            let disc = build_discretization(&mesh(d, 2, 2), 1).unwrap();
            assert_eq!(disc.boundary.len(), 2 * d * 2usize.pow(d as u32 - 1) * 2 * 2usize.pow(d as u32));
            // g = n_0 (t + 1): on [0,1]^d only the two x-faces contribute, ∫(t+1)dt times face area, signs cancel.
            let g = disc.sample_boundary(|t, _, n| n[0] * (t + 1.0));
            let mut rhs = vec![0.0; disc.v.n_dofs()];
            disc.scatter_boundary(&g, 1.0, &mut rhs);
            assert!(rhs.iter().sum::<f64>().abs() < 1e-13);
            // Pairing with ψ = x picks out the x = 1 face: ∫(t+1)dt = 1.5.
            let x = disc.v.interpolate(|_, x| x[0]);
            let got: f64 = rhs.iter().zip(&x).map(|(a, b)| a * b).sum();
            assert!((got - 1.5).abs() < 1e-13, "d={d}: {got}");
        }
    }
}
