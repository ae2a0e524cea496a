//! Records, CSV files and binary dumps.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use crate::correctors::GLOBAL_PATCH;
use crate::error::{Error, Result};

use super::{ExperimentConfig, RunParams};

pub const CSV_HEADER: &str = "d,H,h,eps,p,j,ell,tau,T,seed,dof_ms,dof_fine,err_energy_abs,err_energy_rel,err_l2,rate,cond_est,t_offline_s,t_online_s,status";

/// One experiment run (one CSV row).
#[derive(Debug, Clone, PartialEq)]
pub struct RunRecord {
    pub d: usize,
    pub h_coarse: f64,
    pub h: f64,
    pub eps: f64,
    pub p: usize,
    pub j: usize,
    pub ell: usize,
    pub tau: f64,
    pub t_final: f64,
    pub seed: u64,
    pub dof_ms: usize,
    pub dof_fine: usize,
    pub err_energy_abs: Option<f64>,
    pub err_energy_rel: Option<f64>,
    pub err_l2: Option<f64>,
    pub rate: Option<f64>,
    pub cond_est: Option<f64>,
    pub t_offline_s: f64,
    pub t_online_s: f64,
    pub status: String,
}

pub(crate) fn ell_text(ell: usize) -> String {
    if ell == GLOBAL_PATCH {
        "inf".into()
    } else {
        ell.to_string()
    }
}

fn opt(v: Option<f64>) -> String {
    v.map_or(String::new(), |x| x.to_string())
}

impl RunRecord {
    pub(crate) fn failed(cfg: &ExperimentConfig, params: RunParams, dof_fine: usize, e: &Error) -> Self {
        Self {
            d: cfg.d,
            h_coarse: params.h_coarse,
            h: cfg.h,
            eps: cfg.eps,
            p: params.p,
            j: params.j,
            ell: params.ell,
            tau: cfg.tau,
            t_final: cfg.t_final,
            seed: cfg.seed,
            dof_ms: 0,
            dof_fine,
            err_energy_abs: None,
            err_energy_rel: None,
            err_l2: None,
            rate: None,
            cond_est: None,
            t_offline_s: 0.0,
            t_online_s: 0.0,
            status: format!("failed: {}", e.to_string().replace([',', '\n', '"'], " ")),
        }
    }

    pub fn is_ok(&self) -> bool {
        !self.status.starts_with("failed")
    }

    /// The CSV line (no trailing newline). Floats use the shortest decimal
    /// that round-trips.
    pub fn csv_line(&self) -> String {
        format!(
            "{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{}",
            self.d,
            self.h_coarse,
            self.h,
            self.eps,
            self.p,
            self.j,
            ell_text(self.ell),
            self.tau,
            self.t_final,
            self.seed,
            self.dof_ms,
            self.dof_fine,
            opt(self.err_energy_abs),
            opt(self.err_energy_rel),
            opt(self.err_l2),
            opt(self.rate),
            opt(self.cond_est),
            self.t_offline_s,
            self.t_online_s,
            self.status
        )
    }
}

pub fn write_csv(path: &Path, records: &[RunRecord]) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    let mut s = String::from(CSV_HEADER);
    s.push('\n');
    for r in records {
        s.push_str(&r.csv_line());
        s.push('\n');
    }
    fs::write(path, s).map_err(|e| Error::io(path, e))
}

/// Localization sweep rows and the saturation point.
#[derive(Debug, Clone)]
pub struct SweepReport {
    pub records: Vec<RunRecord>,
    /// First `ℓ` whose error is within 5% of the smallest error of the sweep.
    pub saturation: Option<usize>,
}

impl SweepReport {
    pub fn new(records: Vec<RunRecord>) -> Self {
        let min = records
            .iter()
            .filter_map(|r| r.err_energy_abs)
            .fold(f64::INFINITY, f64::min);
        let saturation = records
            .iter()
            .find(|r| r.err_energy_abs.is_some_and(|e| e <= 1.05 * min))
            .map(|r| r.ell);
        Self { records, saturation }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DecayRow {
    pub element: usize,
    pub local: usize,
    pub level: usize,
    pub ell: usize,
    pub fraction: f64,
}

/// Least-squares fit of `ln(fraction)` against `ℓ` over the points above the
/// solver floor (`ℓ ≥ 1`).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DecayFit {
    pub element: usize,
    pub local: usize,
    pub level: usize,
    pub slope: f64,
    pub r2: f64,
    pub points: usize,
}

#[derive(Debug, Clone)]
pub struct DecayReport {
    pub rows: Vec<DecayRow>,
    pub fits: Vec<DecayFit>,
    /// Fractions at or below this value are treated as solver noise.
    pub floor: f64,
}

fn least_squares(points: &[(f64, f64)]) -> (f64, f64) {
    let n = points.len() as f64;
    let mx = points.iter().map(|p| p.0).sum::<f64>() / n;
    let my = points.iter().map(|p| p.1).sum::<f64>() / n;
    let sxx: f64 = points.iter().map(|p| (p.0 - mx).powi(2)).sum();
    let sxy: f64 = points.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let syy: f64 = points.iter().map(|p| (p.1 - my).powi(2)).sum();
    let slope = sxy / sxx;
    let r2 = if syy > 0.0 { sxy * sxy / (sxx * syy) } else { 1.0 };
    (slope, r2)
}

impl DecayReport {
    /// `eps` is the unit roundoff of the arithmetic used.
    pub fn new(rows: Vec<DecayRow>, eps: f64) -> Self {
        // Energies are quadratic, so the noise floor of a fraction is about
        // the squared relative solver accuracy.
        let floor = (1e3 * eps).powi(2);
        let mut report = Self {
            rows,
            fits: Vec::new(),
            floor,
        };
        let fits: Vec<DecayFit> = report
            .series()
            .into_iter()
            .filter_map(|series| {
                let pts: Vec<(f64, f64)> = series
                    .iter()
                    .filter(|r| r.ell >= 1 && r.fraction > floor)
                    .map(|r| (r.ell as f64, r.fraction.ln()))
                    .collect();
                (pts.len() >= 2).then(|| {
                    let (slope, r2) = least_squares(&pts);
                    DecayFit {
                        element: series[0].element,
                        local: series[0].local,
                        level: series[0].level,
                        slope,
                        r2,
                        points: pts.len(),
                    }
                })
            })
            .collect();
        report.fits = fits;
        report
    }

    /// Rows grouped by `(element, local, level)`, each ordered by `ℓ`.
    pub fn series(&self) -> Vec<Vec<DecayRow>> {
        let mut out: Vec<Vec<DecayRow>> = Vec::new();
        for r in &self.rows {
            match out.last_mut() {
                Some(s) if (s[0].element, s[0].local, s[0].level) == (r.element, r.local, r.level) => s.push(*r),
                _ => out.push(vec![*r]),
            }
        }
        out
    }

    pub fn fraction(&self, element: usize, local: usize, level: usize, ell: usize) -> Option<f64> {
        self.rows
            .iter()
            .find(|r| (r.element, r.local, r.level, r.ell) == (element, local, level, ell))
            .map(|r| r.fraction)
    }
}

/// Writes `decay.csv` and `decay_fit.csv` into `dir`.
pub fn write_decay_csv(dir: &Path, report: &DecayReport) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut s = String::from("element,local,level,ell,fraction\n");
    for r in &report.rows {
        writeln!(s, "{},{},{},{},{}", r.element, r.local, r.level, r.ell, r.fraction).unwrap();
    }
    let path = dir.join("decay.csv");
    fs::write(&path, s).map_err(|e| Error::io(&path, e))?;
    let mut s = String::from("element,local,level,slope,r2,points\n");
    for f in &report.fits {
        writeln!(s, "{},{},{},{},{},{}", f.element, f.local, f.level, f.slope, f.r2, f.points).unwrap();
    }
    let path = dir.join("decay_fit.csv");
    fs::write(&path, s).map_err(|e| Error::io(&path, e))
}

/// Writes `states.bin` (concatenated little-endian `f64` vectors) and
/// `states_manifest.csv` (`step,time,len,offset`, offsets in bytes).
pub fn write_state_dump(dir: &Path, states: &[(usize, f64, Vec<f64>)]) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut bytes = Vec::new();
    let mut manifest = String::from("step,time,len,offset\n");
    for (step, t, v) in states {
        writeln!(manifest, "{step},{t},{},{}", v.len(), bytes.len()).unwrap();
        for x in v {
            bytes.extend_from_slice(&x.to_le_bytes());
        }
    }
    let bin = dir.join("states.bin");
    fs::write(&bin, bytes).map_err(|e| Error::io(&bin, e))?;
    let man = dir.join("states_manifest.csv");
    fs::write(&man, manifest).map_err(|e| Error::io(&man, e))
}

/// Reads back a dump written by [`write_state_dump`].
pub fn read_vectors(dir: &Path) -> Result<Vec<(usize, f64, Vec<f64>)>> {
    let man = dir.join("states_manifest.csv");
    let text = fs::read_to_string(&man).map_err(|e| Error::io(&man, e))?;
    let bin = dir.join("states.bin");
    let bytes = fs::read(&bin).map_err(|e| Error::io(&bin, e))?;
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate().skip(1) {
        let err = |message: &str| Error::Parse {
            path: man.clone(),
            line: i + 1,
            message: message.into(),
        };
        let f: Vec<&str> = line.split(',').collect();
        if f.len() != 4 {
            return Err(err("expected step,time,len,offset"));
        }
        let step: usize = f[0].parse().map_err(|_| err("bad step"))?;
        let t: f64 = f[1].parse().map_err(|_| err("bad time"))?;
        let len: usize = f[2].parse().map_err(|_| err("bad length"))?;
        let off: usize = f[3].parse().map_err(|_| err("bad offset"))?;
        let chunk = bytes.get(off..off + 8 * len).ok_or_else(|| err("offset beyond the binary file"))?;
        out.push((
            step,
            t,
            chunk.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap())).collect(),
        ));
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn record(h: f64, err: Option<f64>) -> RunRecord {
        RunRecord {
            d: 1,
            h_coarse: h,
            h: 1.0 / 512.0,
            eps: 1.0 / 64.0,
            p: 1,
            j: 1,
            ell: GLOBAL_PATCH,
            tau: 1.0 / 256.0,
            t_final: 1.0,
            seed: 3,
            dof_ms: 10,
            dof_fine: 511,
            err_energy_abs: err,
            err_energy_rel: err,
            err_l2: None,
            rate: None,
            cond_est: Some(12.5),
            t_offline_s: 0.5,
            t_online_s: 0.25,
            status: "ok".into(),
        }
    }

    #[test]
    fn csv_row_has_all_columns() {
        let line = record(0.25, Some(0.1)).csv_line();
        assert_eq!(line.split(',').count(), CSV_HEADER.split(',').count());
        assert_eq!(line, "1,0.25,0.001953125,0.015625,1,1,inf,0.00390625,1,3,10,511,0.1,0.1,,,12.5,0.5,0.25,ok");
    }

    #[test]
    fn rates_use_consecutive_halvings() {
        let mut rs = vec![record(0.25, Some(1.0)), record(0.125, Some(0.25)), record(0.1, Some(0.1))];
        super::super::fill_rates(&mut rs);
        assert_eq!(rs[0].rate, None);
        assert_eq!(rs[1].rate, Some(2.0));
        assert_eq!(rs[2].rate, None);
    }

    #[test]
    fn saturation_is_first_within_five_percent() {
        let mut rs: Vec<RunRecord> = [1.0, 0.1, 0.0104, 0.01, 0.0101].iter().map(|&e| record(0.25, Some(e))).collect();
        for (i, r) in rs.iter_mut().enumerate() {
            r.ell = i + 1;
        }
        assert_eq!(SweepReport::new(rs).saturation, Some(3));
    }

    #[test]
    fn decay_fit_recovers_slope() {
        let rows: Vec<DecayRow> = (0..8)
            .map(|ell| DecayRow {
                element: 0,
                local: 0,
                level: 0,
                ell,
                fraction: if ell == 7 { 0.0 } else { (-1.5 * ell as f64).exp() },
            })
            .collect();
        let rep = DecayReport::new(rows, f64::EPSILON);
        assert_eq!(rep.fits.len(), 1);
        assert!((rep.fits[0].slope + 1.5).abs() < 1e-12);
        assert!(rep.fits[0].r2 > 0.999_999);
        assert_eq!(rep.fits[0].points, 6);
    }

    #[test]
    fn state_dump_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let states = vec![(1, 0.5, vec![1.0, -2.0]), (2, 1.0, vec![3.5])];
        write_state_dump(dir.path(), &states).unwrap();
        assert_eq!(read_vectors(dir.path()).unwrap(), states);
    }
}
