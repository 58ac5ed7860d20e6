//! The cumulative robustness function `R(t)`.
//!
//! Each nominal sample contributes a lognormal model of its local risk,
//! `ln p_i ~ N(mu_hat_i, sigma_hat_i^2)`, and `R(t)` is the average mass those
//! models put at or below `ln t`. Entries with `sigma_hat = 0` are point
//! estimates and contribute a step.

use std::fmt;
use std::io::{Read, Write};
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::RobustnessMetric;
use crate::normal::normal_cdf_at;

/// Thresholds used when a report does not ask for specific ones.
pub const DEFAULT_T_VALUES: [f64; 3] = [1e-5, 1e-10, 1e-15];

/// How a curve entry was obtained.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EntryMethod {
    /// Calibration line applied to the parametric tail estimate.
    Predicted,
    /// Adaptive multi-level splitting that reached the violation set.
    Amls,
    /// Splitting run that stopped early; `mu_hat` is an upper bound.
    AmlsCensored,
    /// Point-mass parametric estimate (all sampled margins equal).
    ParamEst,
    NaiveMc,
}

impl EntryMethod {
    fn as_str(self) -> &'static str {
        match self {
            EntryMethod::Predicted => "predicted",
            EntryMethod::Amls => "amls",
            EntryMethod::AmlsCensored => "amls_censored",
            EntryMethod::ParamEst => "param_est",
            EntryMethod::NaiveMc => "naive_mc",
        }
    }
}

impl fmt::Display for EntryMethod {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for EntryMethod {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        [
            EntryMethod::Predicted,
            EntryMethod::Amls,
            EntryMethod::AmlsCensored,
            EntryMethod::ParamEst,
            EntryMethod::NaiveMc,
        ]
        .into_iter()
        .find(|m| m.as_str() == s)
        .ok_or_else(|| Error::Config(format!("unknown curve entry method '{s}'")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CurveEntry {
    /// Location of `ln p_i`; `-inf` encodes an estimate of exactly zero.
    pub mu_hat: f64,
    pub sigma_hat: f64,
    pub method: EntryMethod,
}

impl CurveEntry {
    pub fn new(mu_hat: f64, sigma_hat: f64, method: EntryMethod) -> Self {
        Self {
            mu_hat,
            sigma_hat,
            method,
        }
    }

    /// A point estimate `p` of the local risk.
    pub fn point(p: f64, method: EntryMethod) -> Self {
        Self::new(p.ln(), 0.0, method)
    }

    /// `P(ln p_i <= ln t)` under this entry's model.
    pub fn mass_below(&self, log_t: f64) -> f64 {
        normal_cdf_at(log_t, self.mu_hat, self.sigma_hat)
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct CumulativeRobustnessCurve {
    pub entries: Vec<CurveEntry>,
    pub metric: Option<RobustnessMetric>,
    pub radius: Option<f64>,
    /// Hash of the configuration that produced the curve.
    pub fingerprint: Option<String>,
}

fn check_t(t: f64) -> Result<f64> {
    if t > 0.0 && t <= 1.0 {
        Ok(t.ln())
    } else {
        Err(Error::Domain(format!("threshold t must be in (0, 1], got {t}")))
    }
}

impl CumulativeRobustnessCurve {
    pub fn new(entries: Vec<CurveEntry>) -> Self {
        Self {
            entries,
            ..Default::default()
        }
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// `R(t)`.
    pub fn evaluate(&self, t: f64) -> Result<f64> {
        let log_t = check_t(t)?;
        if self.entries.is_empty() {
            return Err(Error::InsufficientData("curve has no entries".into()));
        }
        let sum: f64 = self.entries.iter().map(|e| e.mass_below(log_t)).sum();
        Ok((sum / self.entries.len() as f64).clamp(0.0, 1.0))
    }

    /// The thresholded global risk `1 - R(t)`.
    pub fn thresholded_risk(&self, t: f64) -> Result<f64> {
        Ok(1.0 - self.evaluate(t)?)
    }

    /// Standard error of `R(t)` as a mean over nominal samples; `None` with
    /// fewer than two entries.
    pub fn standard_error(&self, t: f64) -> Result<Option<f64>> {
        let log_t = check_t(t)?;
        let n = self.entries.len();
        if n < 2 {
            return Ok(None);
        }
        let q: Vec<f64> = self.entries.iter().map(|e| e.mass_below(log_t)).collect();
        let mean = q.iter().sum::<f64>() / n as f64;
        let var = q.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
        Ok(Some((var / n as f64).sqrt()))
    }

    /// True when `R(t)` carries no information below the estimators'
    /// resolution: every entry is a point estimate and none of them is a
    /// positive risk at or below `t`, so the value only reflects estimates of
    /// exactly zero.
    pub fn is_degenerate(&self, t: f64) -> Result<bool> {
        let log_t = check_t(t)?;
        Ok(self
            .entries
            .iter()
            .all(|e| e.sigma_hat == 0.0 && !(e.mu_hat.is_finite() && e.mu_hat <= log_t)))
    }

    /// `(t, R(t))` at every point of `grid`.
    pub fn sample(&self, grid: &[f64]) -> Result<Vec<(f64, f64)>> {
        grid.iter().map(|&t| Ok((t, self.evaluate(t)?))).collect()
    }

    /// Writes `index,mu_hat,sigma_hat,method`.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        let err = |e: csv::Error| Error::Config(format!("writing curve CSV: {e}"));
        w.write_record(["index", "mu_hat", "sigma_hat", "method"]).map_err(err)?;
        for (i, e) in self.entries.iter().enumerate() {
            w.write_record([
                i.to_string(),
                e.mu_hat.to_string(),
                e.sigma_hat.to_string(),
                e.method.to_string(),
            ])
            .map_err(err)?;
        }
        w.flush().map_err(|e| Error::Config(format!("writing curve CSV: {e}")))?;
        Ok(())
    }

    pub fn to_csv_string(&self) -> String {
        let mut buf = Vec::new();
        self.write_csv(&mut buf).expect("writing to memory cannot fail");
        String::from_utf8(buf).expect("CSV output is ASCII")
    }

    /// Parses the curve CSV; `origin` names the source in error messages.
    pub fn read_csv<R: Read>(input: R, origin: &Path) -> Result<Self> {
        let mut rdr = csv::Reader::from_reader(input);
        let headers = rdr.headers().map_err(|e| Error::parse(origin, e))?.clone();
        if headers.iter().collect::<Vec<_>>() != ["index", "mu_hat", "sigma_hat", "method"] {
            return Err(Error::parse(
                origin,
                "expected header 'index,mu_hat,sigma_hat,method'",
            ));
        }
        let mut entries = Vec::new();
        for (row, rec) in rdr.records().enumerate() {
            let line = row + 2;
            let rec = rec.map_err(|e| Error::parse(origin, e))?;
            let field = |k: usize| rec.get(k).unwrap_or("");
            let num = |k: usize, name: &str| -> Result<f64> {
                field(k)
                    .parse::<f64>()
                    .map_err(|_| Error::parse(origin, format!("line {line}: bad {name} '{}'", field(k))))
            };
            let index: usize = field(0)
                .parse()
                .map_err(|_| Error::parse(origin, format!("line {line}: bad index '{}'", field(0))))?;
            if index != entries.len() {
                return Err(Error::parse(origin, format!("line {line}: expected index {}", entries.len())));
            }
            let mu_hat = num(1, "mu_hat")?;
            let sigma_hat = num(2, "sigma_hat")?;
            if mu_hat.is_nan() || mu_hat == f64::INFINITY || !(sigma_hat >= 0.0 && sigma_hat.is_finite()) {
                return Err(Error::parse(origin, format!("line {line}: invalid entry")));
            }
            let method = field(3)
                .parse()
                .map_err(|e: Error| Error::parse(origin, format!("line {line}: {e}")))?;
            entries.push(CurveEntry::new(mu_hat, sigma_hat, method));
        }
        Ok(Self::new(entries))
    }

    pub fn load_csv(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
        Self::read_csv(std::io::BufReader::new(file), path)
    }
}

/// `R(t)` for a curve.
pub fn evaluate_curve(curve: &CumulativeRobustnessCurve, t: f64) -> Result<f64> {
    curve.evaluate(t)
}

/// `points` values of `t` spaced evenly in `log10` from `lo` to `hi`.
pub fn log_grid(lo: f64, hi: f64, points: usize) -> Result<Vec<f64>> {
    check_t(lo)?;
    check_t(hi)?;
    if points < 2 || lo >= hi {
        return Err(Error::Config("log grid needs lo < hi and at least 2 points".into()));
    }
    let (a, b) = (lo.log10(), hi.log10());
    let step = (b - a) / (points - 1) as f64;
    Ok((0..points)
        .map(|i| if i + 1 == points { hi } else { 10f64.powf(a + step * i as f64) })
        .collect())
}

/// Writes `t,R_t` rows.
pub fn write_grid_csv<W: Write>(rows: &[(f64, f64)], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    let err = |e: csv::Error| Error::Config(format!("writing grid CSV: {e}"));
    w.write_record(["t", "R_t"]).map_err(err)?;
    for (t, r) in rows {
        w.write_record([format!("{t:e}"), r.to_string()]).map_err(err)?;
    }
    w.flush().map_err(|e| Error::Config(format!("writing grid CSV: {e}")))?;
    Ok(())
}

/// Reads `t,R_t` rows written by [`write_grid_csv`].
pub fn read_grid_csv<R: Read>(input: R, origin: &Path) -> Result<Vec<(f64, f64)>> {
    let mut rdr = csv::Reader::from_reader(input);
    rdr.records()
        .map(|rec| {
            let rec = rec.map_err(|e| Error::parse(origin, e))?;
            let t = rec.get(0).and_then(|v| v.parse().ok());
            let r = rec.get(1).and_then(|v| v.parse().ok());
            t.zip(r).ok_or_else(|| Error::parse(origin, format!("bad grid row {:?}", rec)))
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn curve(entries: &[(f64, f64)]) -> CumulativeRobustnessCurve {
        CumulativeRobustnessCurve::new(
            entries
                .iter()
                .map(|&(m, s)| CurveEntry::new(m, s, EntryMethod::Predicted))
                .collect(),
        )
    }

    #[test]
    fn step_entry() {
        let c = curve(&[(1e-3f64.ln(), 0.0)]);
        assert_eq!(c.evaluate(1e-2).unwrap(), 1.0);
        assert_eq!(c.evaluate(1e-4).unwrap(), 0.0);
        assert_eq!(c.evaluate(1e-3).unwrap(), 1.0);
    }

    #[test]
    fn median_of_normal_entry() {
        let t: f64 = 3e-7;
        assert_eq!(curve(&[(t.ln(), 2.0)]).evaluate(t).unwrap(), 0.5);
        for n in [1, 7, 50] {
            let c = curve(&vec![(1e-5f64.ln(), 0.5); n]);
            assert!((c.evaluate(1e-5).unwrap() - 0.5).abs() < 1e-15);
        }
    }

    #[test]
    fn domain_errors() {
        let c = curve(&[(-3.0, 1.0)]);
        for t in [0.0, -1.0, 1.5, f64::NAN] {
            assert!(matches!(c.evaluate(t), Err(Error::Domain(_))));
        }
        assert!(c.evaluate(1.0).unwrap() > 0.5);
    }

    #[test]
    fn zero_estimates_are_always_counted() {
        let c = CumulativeRobustnessCurve::new(vec![
            CurveEntry::point(0.0, EntryMethod::NaiveMc),
            CurveEntry::point(0.2, EntryMethod::NaiveMc),
        ]);
        assert_eq!(c.evaluate(1e-300).unwrap(), 0.5);
        assert!(c.is_degenerate(1e-6).unwrap());
        assert!(!c.is_degenerate(0.3).unwrap());
    }

    #[test]
    fn csv_round_trip_keeps_bits() {
        let mut c = curve(&[(-0.1 / 3.0, 1.0 / 7.0), (-1234.5678e-3, 0.0)]);
        c.entries.push(CurveEntry::point(0.0, EntryMethod::NaiveMc));
        c.entries.push(CurveEntry::new(-46.0, 0.3, EntryMethod::AmlsCensored));
        let text = c.to_csv_string();
        assert!(text.starts_with("index,mu_hat,sigma_hat,method\n"));
        let back = CumulativeRobustnessCurve::read_csv(text.as_bytes(), Path::new("mem")).unwrap();
        assert_eq!(back.entries, c.entries);
    }

    #[test]
    fn csv_errors_name_the_line() {
        let bad = "index,mu_hat,sigma_hat,method\n0,-1,0.5,predicted\n1,abc,0,amls\n";
        let err = CumulativeRobustnessCurve::read_csv(bad.as_bytes(), Path::new("c.csv")).unwrap_err();
        assert!(err.to_string().contains("line 3"), "{err}");
    }

    #[test]
    fn grid_endpoints() {
        let g = log_grid(1e-20, 1.0, 21).unwrap();
        assert_eq!(g.len(), 21);
        assert_eq!(g[20], 1.0);
        assert!((g[0] / 1e-20 - 1.0).abs() < 1e-12);
        assert!(g.windows(2).all(|w| w[0] < w[1]));
        let rows = curve(&[(-5.0, 1.0)]).sample(&g).unwrap();
        let mut buf = Vec::new();
        write_grid_csv(&rows, &mut buf).unwrap();
        let back = read_grid_csv(buf.as_slice(), Path::new("mem")).unwrap();
        assert_eq!(back, rows);
    }

    #[test]
    fn standard_error_of_mean() {
        let c = curve(&[(-1.0, 0.0), (-10.0, 0.0)]);
        // q = (0, 1) at t = e^-5: sd = sqrt(0.5), se = 0.5
        assert!((c.standard_error((-5.0f64).exp()).unwrap().unwrap() - 0.5).abs() < 1e-15);
        assert_eq!(curve(&[(-1.0, 0.0)]).standard_error(0.5).unwrap(), None);
    }
}
