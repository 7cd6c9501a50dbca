//! Structured space-time meshes: a uniform time partition of `[0, 1]`
//! tensored with a uniform rectangular spatial grid from which obstacle
//! cells have been removed.

use crate::error::{ensure_arg, Error, Result};
use crate::quad::AxisBox;

const AXIS_NAMES: [&str; 2] = ["x", "y"];

/// Uniform 1D or 2D grid with an activity mask.
///
/// Grid cells are numbered lexicographically with the x index fastest.
/// Active cells get a compact index `0..n_active()` in grid order.
#[derive(Debug, Clone)]
pub struct SpatialMesh {
    pub dim: usize,
    pub origin: Vec<f64>,
    pub extent: Vec<f64>,
    pub cells_per_axis: Vec<usize>,
    pub h: Vec<f64>,
    pub active_mask: Vec<bool>,
    active_cells: Vec<usize>,
    grid_to_active: Vec<Option<usize>>,
}

/// One side of an active spatial cell that lies on the domain or an obstacle boundary.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct BoundaryFacet {
    /// Active cell index.
    pub cell: usize,
    pub axis: usize,
    /// `true` for the face at the cell's upper coordinate (outward normal `+e_axis`).
    pub upper: bool,
}

impl BoundaryFacet {
    pub fn normal(&self, dim: usize) -> Vec<f64> {
        let mut n = vec![0.0; dim];
        n[self.axis] = if self.upper { 1.0 } else { -1.0 };
        n
    }
}

impl SpatialMesh {
    pub fn n_grid_cells(&self) -> usize {
        self.active_mask.len()
    }

    pub fn n_active(&self) -> usize {
        self.active_cells.len()
    }

    /// Grid index of each active cell.
    pub fn active_cells(&self) -> &[usize] {
        &self.active_cells
    }

    pub fn active_index(&self, grid: usize) -> Option<usize> {
        self.grid_to_active[grid]
    }

    pub fn multi_index(&self, grid: usize) -> [usize; 2] {
        if self.dim == 1 {
            [grid, 0]
        } else {
            [grid % self.cells_per_axis[0], grid / self.cells_per_axis[0]]
        }
    }

    pub fn grid_index(&self, multi: [usize; 2]) -> usize {
        if self.dim == 1 {
            multi[0]
        } else {
            multi[0] + self.cells_per_axis[0] * multi[1]
        }
    }

    /// Multi-index of active cell `l`.
    pub fn cell_multi_index(&self, l: usize) -> [usize; 2] {
        self.multi_index(self.active_cells[l])
    }

    pub fn cell_lower(&self, l: usize) -> Vec<f64> {
        let mi = self.cell_multi_index(l);
        (0..self.dim)
            .map(|a| self.origin[a] + mi[a] as f64 * self.h[a])
            .collect()
    }

    pub fn cell_box(&self, l: usize) -> AxisBox {
        let lower = self.cell_lower(l);
        let upper = lower.iter().zip(&self.h).map(|(x, h)| x + h).collect();
        AxisBox::new(lower, upper)
    }

    pub fn cell_volume(&self) -> f64 {
        self.h.iter().product()
    }

    /// Volume of the active region.
    pub fn volume(&self) -> f64 {
        self.n_active() as f64 * self.cell_volume()
    }

    /// Active cell containing `x`, if any. Points on shared faces go to the upper cell
    /// unless that one is inactive or outside.
    pub fn locate(&self, x: &[f64]) -> Option<(usize, Vec<f64>)> {
        let mut candidates: Vec<Vec<(usize, f64)>> = Vec::with_capacity(self.dim);
        for a in 0..self.dim {
            let s = (x[a] - self.origin[a]) / self.h[a];
            let n = self.cells_per_axis[a];
            if s < -1e-12 || s > n as f64 + 1e-12 {
                return None;
            }
            let i = (s.floor().max(0.0) as usize).min(n - 1);
            let mut c = vec![(i, (s - i as f64).clamp(0.0, 1.0))];
            let frac = s - i as f64;
            if frac < 1e-12 && i > 0 {
                c.push((i - 1, 1.0));
            }
            if frac > 1.0 - 1e-12 && i + 1 < n {
                c.push((i + 1, 0.0));
            }
            candidates.push(c);
        }
        let ys = if self.dim == 2 {
            candidates[1].clone()
        } else {
            vec![(0, 0.0)]
        };
        for &(ix, fx) in &candidates[0] {
            for &(iy, fy) in &ys {
                let g = self.grid_index([ix, iy]);
                if let Some(l) = self.grid_to_active[g] {
                    let r = if self.dim == 1 { vec![fx] } else { vec![fx, fy] };
                    return Some((l, r));
                }
            }
        }
        None
    }

    fn neighbor_active(&self, l: usize, axis: usize, upper: bool) -> bool {
        let mut mi = self.cell_multi_index(l);
        if upper {
            if mi[axis] + 1 >= self.cells_per_axis[axis] {
                return false;
            }
            mi[axis] += 1;
        } else {
            if mi[axis] == 0 {
                return false;
            }
            mi[axis] -= 1;
        }
        self.grid_to_active[self.grid_index(mi)].is_some()
    }

    /// Facets of active cells adjacent to an inactive cell or the domain boundary.
    pub fn boundary_facets(&self) -> Vec<BoundaryFacet> {
        let mut out = Vec::new();
        for l in 0..self.n_active() {
            for axis in 0..self.dim {
                for upper in [false, true] {
                    if !self.neighbor_active(l, axis, upper) {
                        out.push(BoundaryFacet { cell: l, axis, upper });
                    }
                }
            }
        }
        out
    }
}

/// Builds a uniform grid over `[origin, origin + extent]` with the given obstacles removed.
///
/// Obstacle edges must lie on grid lines; a cell is inactive when its center lies
/// inside an obstacle.
pub fn build_spatial_mesh(
    origin: &[f64],
    extent: &[f64],
    cells_per_axis: &[usize],
    obstacles: &[AxisBox],
) -> Result<SpatialMesh> {
    let dim = origin.len();
    ensure_arg!(dim == 1 || dim == 2, "spatial dimension must be 1 or 2, got {dim}");
    ensure_arg!(
        extent.len() == dim && cells_per_axis.len() == dim,
        "origin, extent and cells_per_axis must have the same length"
    );
    for a in 0..dim {
        ensure_arg!(
            extent[a] > 0.0 && extent[a].is_finite() && origin[a].is_finite(),
            "extent along {} must be positive and finite",
            AXIS_NAMES[a]
        );
        ensure_arg!(cells_per_axis[a] >= 1, "need at least one cell per axis");
    }
    let h: Vec<f64> = (0..dim).map(|a| extent[a] / cells_per_axis[a] as f64).collect();

    for ob in obstacles {
        ensure_arg!(
            ob.dim() == dim,
            "obstacle dimension {} does not match mesh dimension {dim}",
            ob.dim()
        );
        for a in 0..dim {
            ensure_arg!(ob.upper[a] > ob.lower[a], "obstacle has empty extent along {}", AXIS_NAMES[a]);
            for &v in [ob.lower[a], ob.upper[a]].iter() {
                let s = (v - origin[a]) / h[a];
                let grid_line = origin[a] + s.round() * h[a];
                let tol = 1e-12 * extent[a].max(1.0);
                if (v - grid_line).abs() > tol {
                    return Err(Error::Alignment {
                        axis_name: AXIS_NAMES[a],
                        value: v,
                    });
                }
            }
        }
    }

    let n_grid: usize = cells_per_axis.iter().product();
    let mut active_mask = vec![true; n_grid];
    for (g, active) in active_mask.iter_mut().enumerate() {
        let mi = if dim == 1 {
            [g, 0]
        } else {
            [g % cells_per_axis[0], g / cells_per_axis[0]]
        };
        let center: Vec<f64> = (0..dim)
            .map(|a| origin[a] + (mi[a] as f64 + 0.5) * h[a])
            .collect();
        if obstacles
            .iter()
            .any(|ob| (0..dim).all(|a| ob.lower[a] < center[a] && center[a] < ob.upper[a]))
        {
            *active = false;
        }
    }
    let mut grid_to_active = vec![None; n_grid];
    let mut active_cells = Vec::new();
    for g in 0..n_grid {
        if active_mask[g] {
            grid_to_active[g] = Some(active_cells.len());
            active_cells.push(g);
        }
    }
    ensure_arg!(!active_cells.is_empty(), "obstacles cover the whole domain");

    Ok(SpatialMesh {
        dim,
        origin: origin.to_vec(),
        extent: extent.to_vec(),
        cells_per_axis: cells_per_axis.to_vec(),
        h,
        active_mask,
        active_cells,
        grid_to_active,
    })
}

/// `n_time` uniform intervals of `[0, 1]` tensored with a spatial mesh.
#[derive(Debug, Clone)]
pub struct SpaceTimeMesh {
    pub spatial: SpatialMesh,
    pub n_time: usize,
    pub dt: f64,
}

/// A lateral space-time facet: a spatial boundary facet times one time interval.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LateralFacet {
    pub interval: usize,
    pub facet: BoundaryFacet,
}

impl SpaceTimeMesh {
    pub fn dim(&self) -> usize {
        self.spatial.dim
    }

    pub fn n_cells(&self) -> usize {
        self.n_time * self.spatial.n_active()
    }

    pub fn interval(&self, j: usize) -> (f64, f64) {
        let t1 = if j + 1 == self.n_time {
            1.0
        } else {
            (j + 1) as f64 * self.dt
        };
        (j as f64 * self.dt, t1)
    }

    /// Interval containing `t` and the local coordinate in `[0, 1]`.
    pub fn locate_time(&self, t: f64) -> (usize, f64) {
        let s = t / self.dt;
        let j = (s.floor().max(0.0) as usize).min(self.n_time - 1);
        (j, (s - j as f64).clamp(0.0, 1.0))
    }

    /// Space-time cell volume.
    pub fn cell_volume(&self) -> f64 {
        self.dt * self.spatial.cell_volume()
    }

    pub fn boundary_facets(&self) -> Vec<LateralFacet> {
        let spatial = self.spatial.boundary_facets();
        (0..self.n_time)
            .flat_map(|interval| {
                spatial
                    .iter()
                    .map(move |&facet| LateralFacet { interval, facet })
            })
            .collect()
    }
}

pub fn build_spacetime_mesh(spatial: SpatialMesh, n_time: usize) -> Result<SpaceTimeMesh> {
    ensure_arg!(n_time >= 1, "need at least one time interval");
    Ok(SpaceTimeMesh {
        spatial,
        n_time,
        dt: 1.0 / n_time as f64,
    })
}
