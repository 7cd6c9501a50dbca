//! Density ingestion: analytic Gaussians and portable graymap images.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::config::DomainConfig;
use crate::error::{Error, Result};
use crate::fespace::MSpace;

/// Relative floor applied to image densities before normalization.
pub const IMAGE_FLOOR: f64 = 1e-8;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GaussianScaling {
    /// `exp(−|x − c|²/(2σ²))`, unit peak.
    #[default]
    Peak,
    /// Divided by `(2πσ²)^(d/2)`: unit mass on the whole space.
    Analytic,
    /// Rescaled to discrete mass `(ρ, 1)_h = 1`.
    Discrete,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case", deny_unknown_fields)]
pub enum DensitySpec {
    /// Sum of equal-width Gaussians.
    Gaussian {
        sigma: f64,
        centers: Vec<Vec<f64>>,
        #[serde(default)]
        scaling: GaussianScaling,
    },
    Uniform {
        value: f64,
    },
    /// A P2/P5 graymap stretched over the domain box, top row at the largest `y`.
    Image {
        path: PathBuf,
    },
}

impl DensitySpec {
    pub fn validate(&self, dim: usize) -> Result<()> {
        match self {
            DensitySpec::Gaussian { sigma, centers, .. } => {
                if !(*sigma > 0.0 && sigma.is_finite()) {
                    return Err(Error::Config(format!("sigma must be positive, got {sigma}")));
                }
                if centers.is_empty() || centers.iter().any(|c| c.len() != dim || c.iter().any(|v| !v.is_finite())) {
                    return Err(Error::Config(format!("centers must be a nonempty list of {dim}-vectors")));
                }
            }
            DensitySpec::Uniform { value } => {
                if !(*value >= 0.0 && value.is_finite()) {
                    return Err(Error::Config(format!("uniform value must be nonnegative, got {value}")));
                }
            }
            DensitySpec::Image { .. } => {}
        }
        Ok(())
    }
}

/// A grayscale raster, row 0 at the top.
#[derive(Debug, Clone, PartialEq)]
pub struct GrayImage {
    pub width: usize,
    pub height: usize,
    pub maxval: u16,
    pub data: Vec<u16>,
}

impl GrayImage {
    pub fn get(&self, col: usize, row: usize) -> u16 {
        self.data[row * self.width + col]
    }

    /// Bilinear interpolation of the pixel values; `(u, v)` in `[0, 1]²` with `v = 0`
    /// at the top edge and pixel centers at `(i + ½)/n`. Clamped at the borders.
    pub fn sample(&self, u: f64, v: f64) -> f64 {
        let axis = |s: f64, n: usize| -> (usize, usize, f64) {
            let p = (s * n as f64 - 0.5).clamp(0.0, (n - 1) as f64);
            let i = (p.floor() as usize).min(n - 1);
            let j = (i + 1).min(n - 1);
            (i, j, p - i as f64)
        };
        let (c0, c1, fx) = axis(u, self.width);
        let (r0, r1, fy) = axis(v, self.height);
        let g = |c, r| self.get(c, r) as f64;
        (1.0 - fy) * ((1.0 - fx) * g(c0, r0) + fx * g(c1, r0)) + fy * ((1.0 - fx) * g(c0, r1) + fx * g(c1, r1))
    }
}

struct Tokens<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl Tokens<'_> {
    fn skip_space(&mut self) {
        while self.pos < self.bytes.len() {
            match self.bytes[self.pos] {
                b'#' => {
                    while self.pos < self.bytes.len() && self.bytes[self.pos] != b'\n' {
                        self.pos += 1;
                    }
                }
                c if c.is_ascii_whitespace() => self.pos += 1,
                _ => break,
            }
        }
    }

    fn token(&mut self) -> Result<&str> {
        self.skip_space();
        let start = self.pos;
        while self.pos < self.bytes.len() && !self.bytes[self.pos].is_ascii_whitespace() {
            self.pos += 1;
        }
        if start == self.pos {
            return Err(Error::Format("unexpected end of graymap".into()));
        }
        std::str::from_utf8(&self.bytes[start..self.pos]).map_err(|_| Error::Format("non-ASCII graymap header".into()))
    }

    fn number(&mut self, what: &str) -> Result<usize> {
        let t = self.token()?;
        t.parse()
            .map_err(|_| Error::Format(format!("bad {what} {t:?} in graymap")))
    }
}

/// Parses an 8- or 16-bit P2 (ASCII) or P5 (binary) graymap.
pub fn parse_pgm(bytes: &[u8]) -> Result<GrayImage> {
    let mut tk = Tokens { bytes, pos: 0 };
    let magic = tk.token()?.to_string();
    if magic != "P2" && magic != "P5" {
        return Err(Error::Format(format!("not a P2/P5 graymap (magic {magic:?})")));
    }
    let width = tk.number("width")?;
    let height = tk.number("height")?;
    let maxval = tk.number("maxval")?;
    if width == 0 || height == 0 {
        return Err(Error::Format("graymap has zero size".into()));
    }
    if maxval == 0 || maxval > 65535 {
        return Err(Error::Format(format!("graymap maxval {maxval} out of range")));
    }
    let n = width * height;
    let mut data = Vec::with_capacity(n);
    if magic == "P2" {
        for _ in 0..n {
            let v = tk.number("pixel")?;
            if v > maxval {
                return Err(Error::Format(format!("pixel {v} exceeds maxval {maxval}")));
            }
            data.push(v as u16);
        }
    } else {
        // Exactly one whitespace byte separates the header from the raster.
        let start = tk.pos + 1;
        let bpp = if maxval > 255 { 2 } else { 1 };
        let raster = bytes
            .get(start..start + n * bpp)
            .ok_or_else(|| Error::Format("truncated P5 raster".into()))?;
        for px in raster.chunks_exact(bpp) {
            let v = if bpp == 2 {
                u16::from_be_bytes([px[0], px[1]])
            } else {
                px[0] as u16
            };
            if v as usize > maxval {
                return Err(Error::Format(format!("pixel {v} exceeds maxval {maxval}")));
            }
            data.push(v);
        }
    }
    Ok(GrayImage {
        width,
        height,
        maxval: maxval as u16,
        data,
    })
}

pub fn read_pgm(path: &Path) -> Result<GrayImage> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    parse_pgm(&bytes).map_err(|e| match e {
        Error::Format(m) => Error::Format(format!("{}: {m}", path.display())),
        other => other,
    })
}

/// Serializes `image` as an ASCII P2 graymap.
pub fn format_pgm_p2(image: &GrayImage) -> String {
    let mut s = format!("P2\n{} {}\n{}\n", image.width, image.height, image.maxval);
    for row in image.data.chunks(image.width) {
        let line: Vec<String> = row.iter().map(|v| v.to_string()).collect();
        s.push_str(&line.join(" "));
        s.push('\n');
    }
    s
}

fn gaussian_values(m: &MSpace, sigma: f64, centers: &[Vec<f64>], scaling: GaussianScaling) -> Vec<f64> {
    let d = m.spatial.dim as i32;
    let amp = match scaling {
        GaussianScaling::Analytic => (2.0 * std::f64::consts::PI * sigma * sigma).powi(d).sqrt().recip(),
        _ => 1.0,
    };
    m.sample(|x| {
        centers
            .iter()
            .map(|c| {
                let r2: f64 = x.iter().zip(c).map(|(a, b)| (a - b) * (a - b)).sum();
                amp * (-r2 / (2.0 * sigma * sigma)).exp()
            })
            .sum()
    })
}

fn normalize(m: &MSpace, mut v: Vec<f64>, what: &str) -> Result<Vec<f64>> {
    let mass = m.integrate(&v);
    if !(mass > 0.0 && mass.is_finite()) {
        return Err(Error::DegenerateDensity(format!("{what} has mass {mass}")));
    }
    v.iter_mut().for_each(|x| *x /= mass);
    Ok(v)
}

/// Image values at the M points: bilinear in the pixels, floored at
/// [`IMAGE_FLOOR`] times the maximum, then scaled to discrete unit mass.
pub fn image_density(image: &GrayImage, m: &MSpace, domain: &DomainConfig) -> Result<Vec<f64>> {
    let d = m.spatial.dim;
    let raw = m.sample(|x| {
        let u = (x[0] - domain.origin[0]) / domain.extent[0];
        let v = if d == 2 {
            1.0 - (x[1] - domain.origin[1]) / domain.extent[1]
        } else {
            0.5
        };
        image.sample(u, v)
    });
    let max = raw.iter().copied().fold(0.0, f64::max);
    if max <= 0.0 {
        return Err(Error::DegenerateDensity("image is black on the domain".into()));
    }
    let floor = IMAGE_FLOOR * max;
    normalize(m, raw.into_iter().map(|v| v.max(floor)).collect(), "image")
}

/// Samples `spec` at every spatial quadrature point of `m`.
pub fn load_density(spec: &DensitySpec, m: &MSpace, domain: &DomainConfig, base_dir: &Path) -> Result<Vec<f64>> {
    spec.validate(m.spatial.dim)?;
    match spec {
        DensitySpec::Gaussian {
            sigma,
            centers,
            scaling,
        } => {
            let v = gaussian_values(m, *sigma, centers, *scaling);
            if *scaling == GaussianScaling::Discrete {
                normalize(m, v, "gaussian")
            } else {
                Ok(v)
            }
        }
        DensitySpec::Uniform { value } => Ok(vec![*value; m.n_dofs()]),
        DensitySpec::Image { path } => {
            let p = if path.is_absolute() {
                path.clone()
            } else {
                base_dir.join(path)
            };
            image_density(&read_pgm(&p)?, m, domain)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fespace::build_m_space;
    use crate::mesh::build_spatial_mesh;

    fn unit_m(cells: usize, k: usize) -> MSpace {
        let sp = build_spatial_mesh(&[0.0, 0.0], &[1.0, 1.0], &[cells, cells], &[]).unwrap();
        build_m_space(&sp, k).unwrap()
    }

    fn unit_domain() -> DomainConfig {
        DomainConfig {
            origin: vec![0.0, 0.0],
            extent: vec![1.0, 1.0],
        }
    }

    #[test]
    fn parse_p2_with_comments() {
        let img = parse_pgm(b"P2\n# comment\n3 2\n# another\n255\n0 1 2\n3 4 255\n").unwrap();
        assert_eq!((img.width, img.height, img.maxval), (3, 2, 255));
        assert_eq!(img.data, vec![0, 1, 2, 3, 4, 255]);
        assert_eq!(parse_pgm(format_pgm_p2(&img).as_bytes()).unwrap(), img);
    }

    #[test]
    fn parse_p5_8_and_16_bit() {
        let mut b = b"P5 2 2 255\n".to_vec();
        b.extend([10u8, 20, 30, 40]);
        assert_eq!(parse_pgm(&b).unwrap().data, vec![10, 20, 30, 40]);
        let mut b = b"P5\n2 1\n65535\n".to_vec();
        b.extend([0x01u8, 0x02, 0xff, 0xff]);
        let img = parse_pgm(&b).unwrap();
        assert_eq!(img.data, vec![0x0102, 0xffff]);
        assert_eq!(img.maxval, 65535);
    }

    #[test]
    fn parse_errors() {
        assert!(matches!(parse_pgm(b"P6 1 1 255\n\0\0\0"), Err(Error::Format(_))));
        assert!(matches!(parse_pgm(b"P5 2 2 255\n\0"), Err(Error::Format(_))));
        assert!(matches!(parse_pgm(b"P2 2 1 10\n1 11\n"), Err(Error::Format(_))));
        assert!(matches!(parse_pgm(b"P2 2 1 10\n1"), Err(Error::Format(_))));
        assert!(matches!(parse_pgm(b""), Err(Error::Format(_))));
    }

    #[test]
    fn bilinear_sampling() {
        let img = parse_pgm(b"P2 2 2 100\n0 100\n50 50\n").unwrap();
        // Pixel centers reproduce pixel values.
        assert_eq!(img.sample(0.25, 0.25), 0.0);
        assert_eq!(img.sample(0.75, 0.25), 100.0);
        assert_eq!(img.sample(0.25, 0.75), 50.0);
        // Midpoint averages all four.
        assert!((img.sample(0.5, 0.5) - 50.0).abs() < 1e-12);
        // Clamped beyond the outer centers.
        assert_eq!(img.sample(0.0, 0.0), 0.0);
    }

    #[test]
    fn uniform_image_gives_unit_density() {
        let img = parse_pgm(b"P2 4 4 255\n7 7 7 7 7 7 7 7 7 7 7 7 7 7 7 7\n").unwrap();
        let m = unit_m(3, 2);
        let v = image_density(&img, &m, &unit_domain()).unwrap();
        assert!(v.iter().all(|x| (x - 1.0).abs() < 1e-12));
    }

    #[test]
    fn checkerboard_mass_is_one() {
        let mut data = Vec::new();
        for r in 0..8 {
            for c in 0..8 {
                data.push(if (r + c) % 2 == 0 { 255 } else { 0 });
            }
        }
        let img = GrayImage {
            width: 8,
            height: 8,
            maxval: 255,
            data,
        };
        let m = unit_m(5, 1);
        let v = image_density(&img, &m, &unit_domain()).unwrap();
        // Summation oracle over the M points.
        let mass: f64 = m.weights.iter().zip(&v).map(|(w, x)| w * x).sum();
        assert!((mass - 1.0).abs() < 1e-12);
        let max = v.iter().copied().fold(0.0, f64::max);
        assert!(v.iter().all(|&x| x >= IMAGE_FLOOR * max * (1.0 - 1e-12)));
    }

    #[test]
    fn black_image_is_degenerate() {
        let img = parse_pgm(b"P2 2 2 255\n0 0 0 0\n").unwrap();
        assert!(matches!(
            image_density(&img, &unit_m(2, 0), &unit_domain()),
            Err(Error::DegenerateDensity(_))
        ));
    }

    #[test]
    fn gaussian_scalings() {
        // k = 0 on 4 cells: a quadrature point sits at (0.125, 0.125).
        let m = unit_m(4, 0);
        let spec = DensitySpec::Gaussian {
            sigma: 0.1,
            centers: vec![vec![0.125, 0.125]],
            scaling: GaussianScaling::Peak,
        };
        let v = load_density(&spec, &m, &unit_domain(), Path::new(".")).unwrap();
        assert_eq!(v[0], 1.0);
        let spec = DensitySpec::Gaussian {
            sigma: 0.1,
            centers: vec![vec![0.125, 0.125]],
            scaling: GaussianScaling::Analytic,
        };
        let v = load_density(&spec, &m, &unit_domain(), Path::new(".")).unwrap();
        assert!((v[0] - 1.0 / (2.0 * std::f64::consts::PI * 0.01)).abs() < 1e-9);
        let spec = DensitySpec::Gaussian {
            sigma: 0.2,
            centers: vec![vec![0.3, 0.5], vec![0.7, 0.5]],
            scaling: GaussianScaling::Discrete,
        };
        let v = load_density(&spec, &unit_m(6, 2), &unit_domain(), Path::new(".")).unwrap();
        assert!((unit_m(6, 2).integrate(&v) - 1.0).abs() < 1e-12);
    }
}
