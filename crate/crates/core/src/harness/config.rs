//! Flat `key = value` experiment configuration.

use std::collections::HashSet;
use std::path::{Path, PathBuf};

use crate::correctors::{EnrichmentMode, GLOBAL_PATCH};
use crate::error::{Error, Result};
use crate::finescale::{CoefficientField, CoefficientKind, SourceTerm};
use crate::scalar::Precision;

/// Where the coefficient comes from.
#[derive(Debug, Clone, PartialEq)]
pub enum CoefficientSpec {
    Generated(CoefficientKind),
    File(PathBuf),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum SolverChoice {
    #[default]
    Direct,
    Schur,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub d: usize,
    /// Coarse mesh sizes (a halving chain for convergence studies).
    pub h_coarse: Vec<f64>,
    pub h: f64,
    pub eps: f64,
    pub p: usize,
    /// `None` selects `⌈p/2⌉`.
    pub j: Option<usize>,
    /// `None` selects `⌈C_ℓ (p+2) log₂(1/H)⌉`; [`GLOBAL_PATCH`] means `ℓ = ∞`.
    pub ell: Option<Vec<usize>>,
    pub c_ell: f64,
    pub lambda_mode: EnrichmentMode,
    pub tau: f64,
    pub t_final: f64,
    pub coefficient: CoefficientSpec,
    pub amplitude: f64,
    pub seed: u64,
    pub alpha: f64,
    pub beta: f64,
    pub source: String,
    pub precision: Precision,
    pub solver: SolverChoice,
    pub out: PathBuf,
    /// Elements sampled by the decay study (`None`: the middle element).
    pub decay_elements: Option<Vec<usize>>,
    /// Step indices whose states the `solve` command dumps.
    pub dump_steps: Vec<usize>,
    pub matrix_market: bool,
    pub export_basis: bool,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            d: 1,
            h_coarse: vec![0.25, 0.125, 0.0625, 0.03125],
            h: 1.0 / 512.0,
            eps: 1.0 / 64.0,
            p: 1,
            j: None,
            ell: None,
            c_ell: 0.6,
            lambda_mode: EnrichmentMode::Practical,
            tau: 1.0 / 256.0,
            t_final: 1.0,
            coefficient: CoefficientSpec::Generated(CoefficientKind::Random),
            amplitude: 1.0,
            seed: 1,
            alpha: 0.1,
            beta: 1.0,
            source: "ex1".into(),
            precision: Precision::Double,
            solver: SolverChoice::Direct,
            out: PathBuf::from("eholod-out"),
            decay_elements: None,
            dump_steps: Vec::new(),
            matrix_market: false,
            export_basis: false,
        }
    }
}

/// Parses `2^-k`, `2^k` or a plain float.
pub fn parse_number(s: &str) -> std::result::Result<f64, String> {
    let s = s.trim();
    if let Some(exp) = s.strip_prefix("2^") {
        let e: i32 = exp
            .trim()
            .parse()
            .map_err(|_| format!("bad exponent in `{s}`"))?;
        return Ok(2f64.powi(e));
    }
    s.parse::<f64>().map_err(|_| format!("`{s}` is not a number"))
}

fn parse_usize(s: &str) -> std::result::Result<usize, String> {
    s.trim().parse().map_err(|_| format!("`{}` is not a nonnegative integer", s.trim()))
}

fn parse_list<V>(s: &str, f: impl Fn(&str) -> std::result::Result<V, String>) -> std::result::Result<Vec<V>, String> {
    let items: Vec<&str> = s.split(',').map(str::trim).filter(|x| !x.is_empty()).collect();
    if items.is_empty() {
        return Err("empty list".into());
    }
    items.into_iter().map(f).collect()
}

fn parse_ell(s: &str) -> std::result::Result<usize, String> {
    match s.trim() {
        "inf" | "global" => Ok(GLOBAL_PATCH),
        other => parse_usize(other),
    }
}

fn parse_bool(s: &str) -> std::result::Result<bool, String> {
    match s.trim() {
        "true" | "yes" | "1" => Ok(true),
        "false" | "no" | "0" => Ok(false),
        other => Err(format!("`{other}` is not a boolean")),
    }
}

/// `⌈C_ℓ (p+2) log₂(1/H)⌉`, at least 1.
pub fn default_ell(c_ell: f64, p: usize, h_coarse: f64) -> usize {
    ((c_ell * (p as f64 + 2.0) * (1.0 / h_coarse).log2()).ceil() as usize).max(1)
}

impl ExperimentConfig {
    pub const KEYS: &'static [&'static str] = &[
        "d",
        "H",
        "h",
        "eps",
        "p",
        "j",
        "ell",
        "c_ell",
        "lambda_mode",
        "tau",
        "T",
        "coefficient",
        "amplitude",
        "seed",
        "alpha",
        "beta",
        "source",
        "precision",
        "solver",
        "out",
        "decay_elements",
        "dump_steps",
        "matrix_market",
        "export_basis",
    ];

    pub fn from_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text, path)
    }

    /// Parses the text of a config file; `origin` names it in errors.
    pub fn parse(text: &str, origin: &Path) -> Result<Self> {
        let mut cfg = Self::default();
        let mut seen = HashSet::new();
        for (idx, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let parse_err = |message: String| Error::Parse {
                path: origin.to_path_buf(),
                line: idx + 1,
                message,
            };
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| parse_err(format!("expected `key = value`, got `{line}`")))?;
            let key = key.trim();
            if !seen.insert(key.to_string()) {
                return Err(parse_err(format!("duplicate key `{key}`")));
            }
            cfg.set(key, value.trim()).map_err(parse_err)?;
        }
        Ok(cfg)
    }

    /// Sets one key from its text value.
    pub fn set(&mut self, key: &str, value: &str) -> std::result::Result<(), String> {
        match key {
            "d" => self.d = parse_usize(value)?,
            "H" => self.h_coarse = parse_list(value, parse_number)?,
            "h" => self.h = parse_number(value)?,
            "eps" => self.eps = parse_number(value)?,
            "p" => self.p = parse_usize(value)?,
            "j" => {
                self.j = match value.trim() {
                    "auto" => None,
                    v => Some(parse_usize(v)?),
                }
            }
            "ell" => {
                self.ell = match value.trim() {
                    "auto" => None,
                    v => Some(parse_list(v, parse_ell)?),
                }
            }
            "c_ell" => self.c_ell = parse_number(value)?,
            "lambda_mode" => self.lambda_mode = value.parse().map_err(|e: Error| e.to_string())?,
            "tau" => self.tau = parse_number(value)?,
            "T" => self.t_final = parse_number(value)?,
            "coefficient" => {
                self.coefficient = match value.strip_prefix("file:") {
                    Some(path) => CoefficientSpec::File(PathBuf::from(path.trim())),
                    None => CoefficientSpec::Generated(value.parse()?),
                }
            }
            "amplitude" => self.amplitude = parse_number(value)?,
            "seed" => self.seed = value.trim().parse().map_err(|_| format!("`{value}` is not a seed"))?,
            "alpha" => self.alpha = parse_number(value)?,
            "beta" => self.beta = parse_number(value)?,
            "source" => self.source = value.trim().to_string(),
            "precision" => self.precision = value.parse()?,
            "solver" => {
                self.solver = match value.trim() {
                    "direct" => SolverChoice::Direct,
                    "schur" => SolverChoice::Schur,
                    other => return Err(format!("unknown solver `{other}` (expected direct|schur)")),
                }
            }
            "out" => self.out = PathBuf::from(value.trim()),
            "decay_elements" => {
                self.decay_elements = match value.trim() {
                    "auto" => None,
                    v => Some(parse_list(v, parse_usize)?),
                }
            }
            "dump_steps" => self.dump_steps = parse_list(value, parse_usize)?,
            "matrix_market" => self.matrix_market = parse_bool(value)?,
            "export_basis" => self.export_basis = parse_bool(value)?,
            other => return Err(format!("unknown key `{other}` (known: {})", Self::KEYS.join(", "))),
        }
        Ok(())
    }

    pub fn j_value(&self) -> usize {
        self.j.unwrap_or(self.p.div_ceil(2))
    }

    /// Localization parameters for coarse size `h_coarse`.
    pub fn ell_values(&self, h_coarse: f64) -> Vec<usize> {
        self.ell
            .clone()
            .unwrap_or_else(|| vec![default_ell(self.c_ell, self.p, h_coarse)])
    }

    fn check_reciprocal(name: &str, v: f64) -> Result<usize> {
        let n = (1.0 / v).round();
        if !(v > 0.0) || n < 1.0 || ((1.0 / n) - v).abs() > 1e-12 * v {
            return Err(Error::Config(format!("{name} = {v} must be 1/n for an integer n")));
        }
        Ok(n as usize)
    }

    /// Checks the structural invariants of the configuration.
    pub fn validate(&self) -> Result<()> {
        if !(1..=2).contains(&self.d) {
            return Err(Error::Config(format!("d = {} (only 1 and 2 are supported)", self.d)));
        }
        let nh = Self::check_reciprocal("h", self.h)?;
        let ne = Self::check_reciprocal("eps", self.eps)?;
        if self.h > self.eps {
            return Err(Error::Config(format!("h = {} must not exceed eps = {}", self.h, self.eps)));
        }
        if nh % ne != 0 {
            return Err(Error::Config("the fine mesh must resolve the coefficient grid (1/eps divides 1/h)".into()));
        }
        if self.h_coarse.is_empty() {
            return Err(Error::Config("H needs at least one value".into()));
        }
        for &hc in &self.h_coarse {
            let nc = Self::check_reciprocal("H", hc)?;
            if hc < self.eps {
                return Err(Error::Config(format!("H = {hc} is below eps = {}", self.eps)));
            }
            if nh % nc != 0 {
                return Err(Error::Config(format!("H = {hc} is not a multiple of h = {}", self.h)));
            }
            if nh / nc < self.p + 2 {
                return Err(Error::Config(format!(
                    "H/h = {} must be at least p + 2 = {} for the bubbles",
                    nh / nc,
                    self.p + 2
                )));
            }
            for ell in self.ell_values(hc) {
                if ell == 0 {
                    return Err(Error::Config("ell must be at least 1".into()));
                }
                if ell != GLOBAL_PATCH && hc * hc * (ell as f64).powi(self.d as i32 + 1) > 1.0 {
                    log::warn!("H²ℓ^(d+1) = {} > 1 for H = {hc}, ℓ = {ell}", hc * hc * (ell as f64).powi(self.d as i32 + 1));
                }
            }
        }
        if !(self.tau > 0.0 && self.t_final > 0.0) {
            return Err(Error::Config("tau and T must be positive".into()));
        }
        let steps = (self.t_final / self.tau).round();
        if (steps * self.tau - self.t_final).abs() > 1e-9 * self.t_final {
            return Err(Error::Config(format!("tau = {} does not divide T = {}", self.tau, self.t_final)));
        }
        if !(self.alpha > 0.0 && self.beta >= self.alpha) {
            return Err(Error::Config(format!(
                "coefficient bounds need 0 < alpha <= beta, got ({}, {})",
                self.alpha, self.beta
            )));
        }
        if !(self.c_ell > 0.0) {
            return Err(Error::Config("c_ell must be positive".into()));
        }
        SourceTerm::by_id(&self.source)?;
        Ok(())
    }

    pub fn coefficient_field(&self) -> Result<CoefficientField> {
        let field = match &self.coefficient {
            CoefficientSpec::Generated(kind) => {
                CoefficientField::generate(*kind, self.d, self.eps, (self.alpha, self.beta), self.seed, self.amplitude)?
            }
            CoefficientSpec::File(path) => CoefficientField::read_csv(path)?,
        };
        if field.dim() != self.d {
            return Err(Error::Config(format!(
                "coefficient field is {}-dimensional, the experiment is {}-dimensional",
                field.dim(),
                self.d
            )));
        }
        Ok(field)
    }

    pub fn source_term(&self) -> Result<SourceTerm> {
        SourceTerm::by_id(&self.source)
    }

    /// Gauss points per axis for load vectors.
    pub fn quadrature_points(&self) -> usize {
        (self.p + 2).max(4)
    }
}
