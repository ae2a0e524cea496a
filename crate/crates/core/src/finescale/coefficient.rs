use std::fmt::Write as _;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;
use std::str::FromStr;

use rand::distributions::{Distribution, Uniform};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::mesh::CartesianMesh;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CoefficientKind {
    /// Smooth coarse background plus a checkerboard ε-oscillation.
    Structured,
    /// Independent uniform draws per ε-cell.
    Random,
    /// `A ≡ β`.
    Constant,
}

impl CoefficientKind {
    pub fn name(self) -> &'static str {
        match self {
            CoefficientKind::Structured => "structured",
            CoefficientKind::Random => "random",
            CoefficientKind::Constant => "constant",
        }
    }
}

impl FromStr for CoefficientKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim() {
            "structured" => Ok(Self::Structured),
            "random" => Ok(Self::Random),
            "constant" => Ok(Self::Constant),
            other => Err(format!("unknown coefficient kind `{other}` (expected structured|random|constant)")),
        }
    }
}

/// Scalar diffusion coefficient, constant on each cell of a uniform ε-grid
/// over the unit box.
#[derive(Debug, Clone, PartialEq)]
pub struct CoefficientField {
    grid: CartesianMesh,
    values: Vec<f64>,
    alpha: f64,
    beta: f64,
}

fn cells_for(eps: f64) -> Result<usize> {
    if !(eps > 0.0 && eps <= 1.0) {
        return Err(Error::Config(format!("eps = {eps} must lie in (0, 1]")));
    }
    let n = (1.0 / eps).round();
    if ((1.0 / n) - eps).abs() > 1e-12 * eps {
        return Err(Error::Config(format!("eps = {eps} is not the reciprocal of an integer")));
    }
    Ok(n as usize)
}

impl CoefficientField {
    pub fn from_values(dim: usize, eps: f64, values: Vec<f64>, alpha: f64, beta: f64) -> Result<Self> {
        if !(alpha > 0.0 && beta >= alpha) {
            return Err(Error::Config(format!("coefficient bounds need 0 < alpha <= beta, got ({alpha}, {beta})")));
        }
        let grid = CartesianMesh::unit(dim, cells_for(eps)?)?;
        if values.len() != grid.element_count() {
            return Err(Error::InvalidInput(format!(
                "expected {} coefficient values, got {}",
                grid.element_count(),
                values.len()
            )));
        }
        if let Some(v) = values.iter().find(|&&v| !(v >= alpha && v <= beta)) {
            return Err(Error::InvalidInput(format!("coefficient value {v} outside [{alpha}, {beta}]")));
        }
        Ok(Self {
            grid,
            values,
            alpha,
            beta,
        })
    }

    pub fn constant(dim: usize, value: f64) -> Result<Self> {
        Self::from_values(dim, 1.0, vec![value], value, value)
    }

    /// Generates a field on the ε-grid. `amplitude` scales the deviation of
    /// the structured field from `α` (0 gives `A ≡ α`); it is ignored by the
    /// other kinds.
    pub fn generate(
        kind: CoefficientKind,
        dim: usize,
        eps: f64,
        bounds: (f64, f64),
        seed: u64,
        amplitude: f64,
    ) -> Result<Self> {
        let (alpha, beta) = bounds;
        if !(alpha > 0.0 && beta >= alpha) {
            return Err(Error::Config(format!("coefficient bounds need 0 < alpha <= beta, got ({alpha}, {beta})")));
        }
        let grid = CartesianMesh::unit(dim, cells_for(eps)?)?;
        let n = grid.element_count();
        let values = match kind {
            CoefficientKind::Constant => vec![beta; n],
            CoefficientKind::Random => {
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                let dist = Uniform::new_inclusive(alpha, beta);
                (0..n).map(|_| dist.sample(&mut rng)).collect()
            }
            CoefficientKind::Structured => (0..n)
                .map(|e| {
                    let (lo, hi) = grid.element_bounds(e);
                    let mi = grid.element_index(e);
                    let mut background = 1.0;
                    for a in 0..dim {
                        background *= (std::f64::consts::PI * 0.5 * (lo[a] + hi[a])).sin();
                    }
                    let sign = if (mi[0] + mi[1]) % 2 == 0 { 1.0 } else { -1.0 };
                    let raw = 0.5 + 0.4 * background + 0.3 * sign;
                    (alpha + amplitude * (raw - alpha)).clamp(alpha, beta)
                })
                .collect(),
        };
        Ok(Self {
            grid,
            values,
            alpha,
            beta,
        })
    }

    pub fn dim(&self) -> usize {
        self.grid.dim()
    }

    pub fn eps(&self) -> f64 {
        self.grid.element_size(0)
    }

    pub fn grid(&self) -> &CartesianMesh {
        &self.grid
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn bounds(&self) -> (f64, f64) {
        (self.alpha, self.beta)
    }

    pub fn min(&self) -> f64 {
        self.values.iter().copied().fold(f64::INFINITY, f64::min)
    }

    pub fn max(&self) -> f64 {
        self.values.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }

    /// Value at a point of the unit box.
    pub fn value_at(&self, x: &[f64]) -> f64 {
        self.values[self.grid.locate(x)]
    }

    /// Per-element values on a fine mesh that refines the ε-grid.
    pub fn sample(&self, fine: &CartesianMesh) -> Result<Vec<f64>> {
        if fine.dim() != self.dim() {
            return Err(Error::Config(format!(
                "coefficient is {}-dimensional but the mesh is {}-dimensional",
                self.dim(),
                fine.dim()
            )));
        }
        for a in 0..self.dim() {
            let (nf, ne) = (fine.cells()[a], self.grid.cells()[a]);
            if nf < ne {
                return Err(Error::Config(format!(
                    "eps = {} is below the fine mesh size h = {}: oscillations are unresolved",
                    self.eps(),
                    fine.element_size(a)
                )));
            }
            if nf % ne != 0 {
                return Err(Error::Config(format!(
                    "fine mesh with {nf} cells does not nest in the eps-grid with {ne} cells"
                )));
            }
        }
        Ok((0..fine.element_count())
            .map(|e| {
                let (lo, hi) = fine.element_bounds(e);
                let mid = [0.5 * (lo[0] + hi[0]), 0.5 * (lo[1] + hi[1])];
                self.value_at(&mid[..self.dim()])
            })
            .collect())
    }

    /// Hex SHA-256 of the dimension, grid, bounds and values.
    pub fn content_hash(&self) -> String {
        let mut h = Sha256::new();
        h.update((self.dim() as u64).to_le_bytes());
        for &c in self.grid.cells() {
            h.update((c as u64).to_le_bytes());
        }
        h.update(self.alpha.to_bits().to_le_bytes());
        h.update(self.beta.to_bits().to_le_bytes());
        for v in &self.values {
            h.update(v.to_bits().to_le_bytes());
        }
        h.finalize().iter().fold(String::new(), |mut s, b| {
            let _ = write!(s, "{b:02x}");
            s
        })
    }

    /// Writes the CSV grid format: a `d,eps,alpha,beta` header row followed
    /// by one row of cell values per grid row (first axis along the row).
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut out = String::from("# eholod coefficient field\nd,eps,alpha,beta\n");
        let _ = writeln!(out, "{},{},{},{}", self.dim(), self.eps(), self.alpha, self.beta);
        let nx = self.grid.cells()[0];
        for row in self.values.chunks(nx) {
            let line: Vec<String> = row.iter().map(|v| v.to_string()).collect();
            out.push_str(&line.join(","));
            out.push('\n');
        }
        std::fs::File::create(path)
            .and_then(|mut f| f.write_all(out.as_bytes()))
            .map_err(|e| Error::io(path, e))
    }

    pub fn read_csv(path: &Path) -> Result<Self> {
        let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
        let parse_err = |line: usize, message: String| Error::Parse {
            path: path.to_path_buf(),
            line,
            message,
        };
        let mut header: Option<(usize, f64, f64, f64)> = None;
        let mut seen_names = false;
        let mut values = Vec::new();
        for (idx, line) in BufReader::new(file).lines().enumerate() {
            let lineno = idx + 1;
            let line = line.map_err(|e| Error::io(path, e))?;
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            if !seen_names {
                if line.replace(' ', "") != "d,eps,alpha,beta" {
                    return Err(parse_err(lineno, "expected header `d,eps,alpha,beta`".into()));
                }
                seen_names = true;
                continue;
            }
            let fields: Vec<&str> = line.split(',').map(str::trim).collect();
            if header.is_none() {
                if fields.len() != 4 {
                    return Err(parse_err(lineno, "header row needs 4 fields".into()));
                }
                let num = |s: &str| s.parse::<f64>().map_err(|e| parse_err(lineno, format!("`{s}`: {e}")));
                let d = fields[0]
                    .parse::<usize>()
                    .map_err(|e| parse_err(lineno, format!("`{}`: {e}", fields[0])))?;
                header = Some((d, num(fields[1])?, num(fields[2])?, num(fields[3])?));
                continue;
            }
            for f in fields {
                values.push(f.parse::<f64>().map_err(|e| parse_err(lineno, format!("`{f}`: {e}")))?);
            }
        }
        let (d, eps, alpha, beta) = header.ok_or_else(|| parse_err(0, "missing header".into()))?;
        Self::from_values(d, eps, values, alpha, beta)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn random_field_respects_bounds_and_is_deterministic() {
        let a = CoefficientField::generate(CoefficientKind::Random, 1, 1.0 / 64.0, (0.1, 1.0), 7, 1.0).unwrap();
        assert!(a.min() >= 0.1 && a.max() <= 1.0);
        let b = CoefficientField::generate(CoefficientKind::Random, 1, 1.0 / 64.0, (0.1, 1.0), 7, 1.0).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.content_hash(), b.content_hash());
        let c = CoefficientField::generate(CoefficientKind::Random, 1, 1.0 / 64.0, (0.1, 1.0), 8, 1.0).unwrap();
        assert_ne!(a.content_hash(), c.content_hash());
    }

    #[test]
    fn structured_without_oscillation_is_alpha() {
        let a = CoefficientField::generate(CoefficientKind::Structured, 2, 1.0 / 16.0, (0.1, 1.0), 0, 0.0).unwrap();
        assert!(a.values().iter().all(|&v| v == 0.1));
        let b = CoefficientField::generate(CoefficientKind::Structured, 2, 1.0 / 16.0, (0.1, 1.0), 0, 1.0).unwrap();
        assert!(b.min() >= 0.1 && b.max() <= 1.0 && b.max() - b.min() > 0.5);
    }

    #[test]
    fn unresolved_oscillation_is_rejected() {
        let a = CoefficientField::generate(CoefficientKind::Random, 1, 1.0 / 64.0, (0.1, 1.0), 1, 1.0).unwrap();
        let coarse = CartesianMesh::unit(1, 32).unwrap();
        assert!(matches!(a.sample(&coarse), Err(Error::Config(_))));
        let fine = CartesianMesh::unit(1, 128).unwrap();
        let s = a.sample(&fine).unwrap();
        assert_eq!(s[0], s[1]);
        assert_eq!(s[2], a.values()[1]);
    }

    #[test]
    fn csv_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("a.csv");
        let a = CoefficientField::generate(CoefficientKind::Random, 2, 0.125, (0.1, 1.0), 3, 1.0).unwrap();
        a.write_csv(&path).unwrap();
        let b = CoefficientField::read_csv(&path).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn malformed_csv_reports_line() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bad.csv");
        std::fs::write(&path, "d,eps,alpha,beta\n1,0.5,0.1,1\n0.2,zz\n").unwrap();
        match CoefficientField::read_csv(&path) {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 3),
            other => panic!("unexpected {other:?}"),
        }
    }
}
