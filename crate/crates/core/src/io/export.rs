//! CSV and graymap output.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use super::density::{format_pgm_p2, GrayImage};
use crate::alg2::{IterationRecord, StudyRow};
use crate::error::{Error, Result};
use crate::fespace::WSpace;

/// A W field `(ρ, m)` reconstructed on a uniform pixel-center grid at one time.
#[derive(Debug, Clone, PartialEq)]
pub struct Snapshot {
    pub t: f64,
    /// Pixels per axis; 1D snapshots have a single row.
    pub width: usize,
    pub height: usize,
    /// Pixel centers, x fastest, rows from the smallest `y` upward.
    pub points: Vec<Vec<f64>>,
    /// `(ρ, m...)` per point, `None` inside obstacles.
    pub values: Vec<Option<Vec<f64>>>,
}

impl Snapshot {
    pub fn dim(&self) -> usize {
        self.points.first().map_or(0, Vec::len)
    }

    /// Value at pixel `(col, row)` with row 0 at the top of the domain.
    pub fn pixel(&self, col: usize, row: usize) -> Option<&[f64]> {
        let r = self.height - 1 - row;
        self.values[r * self.width + col].as_deref()
    }
}

/// Reconstructs `alpha` (`ρ` then momentum, interleaved) at time `t` on a
/// `resolution^d` grid of pixel centers over the mesh bounding box.
pub fn sample_snapshot(w: &WSpace, alpha: &[f64], t: f64, resolution: usize) -> Result<Snapshot> {
    if !(0.0..=1.0).contains(&t) {
        return Err(Error::InvalidArgument(format!("snapshot time {t} outside [0, 1]")));
    }
    if resolution == 0 {
        return Err(Error::InvalidArgument("snapshot resolution must be positive".into()));
    }
    let sp = &w.mesh.spatial;
    let d = sp.dim;
    let nc = d + 1;
    let height = if d == 2 { resolution } else { 1 };
    let center = |a: usize, i: usize| sp.origin[a] + (i as f64 + 0.5) / resolution as f64 * sp.extent[a];
    let mut points = Vec::with_capacity(resolution * height);
    let mut values = Vec::with_capacity(resolution * height);
    for r in 0..height {
        for c in 0..resolution {
            let x = if d == 2 {
                vec![center(0, c), center(1, r)]
            } else {
                vec![center(0, c)]
            };
            values.push(w.reconstruct(alpha, nc, t, &x));
            points.push(x);
        }
    }
    Ok(Snapshot {
        t,
        width: resolution,
        height,
        points,
        values,
    })
}

/// CSV text with header `x[,y],rho,mx[,my]`; obstacle points are omitted.
pub fn format_snapshot_csv(snap: &Snapshot) -> String {
    let d = snap.dim();
    let mut s = String::from(if d == 2 { "x,y,rho,mx,my\n" } else { "x,rho,mx\n" });
    for (x, v) in snap.points.iter().zip(&snap.values) {
        let Some(v) = v else { continue };
        let fields: Vec<String> = x.iter().chain(v).map(|f| format!("{f:.16e}")).collect();
        s.push_str(&fields.join(","));
        s.push('\n');
    }
    s
}

/// `ρ / max ρ` quantized to 8 bits, top row first; obstacles and negative values are 0.
pub fn snapshot_raster(snap: &Snapshot) -> GrayImage {
    let max = snap
        .values
        .iter()
        .flatten()
        .map(|v| v[0])
        .fold(0.0, f64::max);
    let mut data = Vec::with_capacity(snap.width * snap.height);
    for row in 0..snap.height {
        for col in 0..snap.width {
            let g = match snap.pixel(col, row) {
                Some(v) if max > 0.0 => (v[0].max(0.0) / max * 255.0).round().min(255.0) as u16,
                _ => 0,
            };
            data.push(g);
        }
    }
    GrayImage {
        width: snap.width,
        height: snap.height,
        maxval: 255,
        data,
    }
}

pub fn write_file(path: &Path, contents: &str) -> Result<()> {
    if let Some(dir) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    std::fs::write(path, contents).map_err(|e| Error::io(path, e))
}

/// File stem for the snapshot at `t`, e.g. `snapshot_t0.300`.
pub fn snapshot_stem(t: f64) -> String {
    format!("snapshot_t{t:.3}")
}

/// Writes `<stem>.csv` and, with `raster`, `<stem>.pgm` into `dir`. Returns the paths written.
pub fn export_snapshot(
    w: &WSpace,
    alpha: &[f64],
    t: f64,
    resolution: usize,
    dir: &Path,
    raster: bool,
) -> Result<Vec<PathBuf>> {
    let snap = sample_snapshot(w, alpha, t, resolution)?;
    let stem = snapshot_stem(t);
    let csv = dir.join(format!("{stem}.csv"));
    write_file(&csv, &format_snapshot_csv(&snap))?;
    let mut out = vec![csv];
    if raster {
        let pgm = dir.join(format!("{stem}.pgm"));
        write_file(&pgm, &format_pgm_p2(&snapshot_raster(&snap)))?;
        out.push(pgm);
    }
    Ok(out)
}

pub fn format_log_csv(log: &[IterationRecord]) -> String {
    let mut s = String::from("iter,err_a,err_r,cg_iters,seconds\n");
    for r in log {
        let _ = writeln!(s, "{},{:e},{:e},{},{:e}", r.iter, r.err_a, r.err_r, r.cg_iters, r.seconds);
    }
    s
}

fn opt(v: Option<f64>) -> String {
    v.map(|x| format!("{x:.16e}")).unwrap_or_default()
}

pub fn format_study_csv(rows: &[StudyRow]) -> String {
    let mut s = String::from("k,level,cells,iterations,converged,l2_rho,order_rho,l2_m,order_m,w2_error,order_w2,error\n");
    for r in rows {
        let err = r.error.as_deref().unwrap_or("").replace([',', '\n'], ";");
        let _ = writeln!(
            s,
            "{},{},{},{},{},{},{},{},{},{},{},{}",
            r.k,
            r.level,
            r.cells,
            r.iterations,
            r.converged,
            opt(r.l2_rho),
            opt(r.order_rho),
            opt(r.l2_m),
            opt(r.order_m),
            opt(r.w2_error),
            opt(r.order_w2),
            err
        );
    }
    s
}
