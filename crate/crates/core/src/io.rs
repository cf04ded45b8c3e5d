//! Benchmark data generation and the on-disk formats: point CSV, dense
//! sample CSV and the JSON result artifact.
//!
//! # Benchmark generator
//!
//! `gen_dataset(n, seed, sigma)` places `x_i = i / (n − 1)` on `[0, 1]` and
//! sets `y_i = sin(4π x_i²) + sigma · z_i`. The normals `z_i` come from
//! Box–Muller on a SplitMix64 stream, so any implementation reproduces the
//! same data per seed:
//!
//! ```text
//! state += 0x9E3779B97F4A7C15
//! z = state
//! z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9
//! z = (z ^ (z >> 27)) * 0x94D049BB133111EB
//! next = z ^ (z >> 31)                         (all arithmetic wrapping, u64)
//! uniform = (next >> 11) * 2^-53               in [0, 1)
//! u1 = 1 − uniform, u2 = uniform (two draws)   u1 in (0, 1]
//! r = sqrt(−2 ln u1)
//! z_even = r cos(2π u2), z_odd = r sin(2π u2)  (pairs used in that order)
//! ```

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::ckmin::CorrectionReport;
use crate::error::{Error, Result};
use crate::losses::LossBreakdown;
use crate::pareto::{RunOutcome, SweepRecord};
use crate::pp_model::{Breakpoints, Dataset, PiecewisePolynomial, SampleRow};
use crate::trainer::FitConfig;

pub const RESULT_VERSION: &str = "1";

/// SplitMix64 pseudo-random generator.
#[derive(Debug, Clone)]
pub struct SplitMix64 {
    state: u64,
}

impl SplitMix64 {
    pub fn new(seed: u64) -> Self {
        Self { state: seed }
    }

    pub fn next_u64(&mut self) -> u64 {
        self.state = self.state.wrapping_add(0x9E37_79B9_7F4A_7C15);
        let mut z = self.state;
        z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
        z ^ (z >> 31)
    }

    /// Uniform in `[0, 1)` with 53 random bits.
    pub fn next_f64(&mut self) -> f64 {
        (self.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }
}

/// Standard normal draws by the Box–Muller transform, used in pairs.
#[derive(Debug, Clone)]
pub struct BoxMuller {
    rng: SplitMix64,
    spare: Option<f64>,
}

impl BoxMuller {
    pub fn new(seed: u64) -> Self {
        Self {
            rng: SplitMix64::new(seed),
            spare: None,
        }
    }

    pub fn sample(&mut self) -> f64 {
        if let Some(z) = self.spare.take() {
            return z;
        }
        let u1 = 1.0 - self.rng.next_f64();
        let u2 = self.rng.next_f64();
        let r = (-2.0 * u1.ln()).sqrt();
        let theta = 2.0 * std::f64::consts::PI * u2;
        self.spare = Some(r * theta.sin());
        r * theta.cos()
    }
}

/// `sin(π t)` with exact zeros at integer `t`.
pub fn sin_pi(t: f64) -> f64 {
    // `%` is exact for floats, so the reduction adds no rounding
    let r = t % 2.0;
    let r = if r < 0.0 { r + 2.0 } else { r };
    // r in [0, 2): reflect into [-0.5, 0.5]
    let reduced = if r <= 0.5 {
        r
    } else if r <= 1.5 {
        1.0 - r
    } else {
        r - 2.0
    };
    (std::f64::consts::PI * reduced).sin()
}

/// The benchmark target `sin(4π x²)`.
pub fn benchmark_target(x: f64) -> f64 {
    sin_pi(4.0 * x * x)
}

/// `n` points of the noisy benchmark on `[0, 1]`.
pub fn gen_dataset(n: usize, seed: u64, noise_sigma: f64) -> Result<Dataset> {
    if n == 0 {
        return Err(Error::invalid("n must be at least 1"));
    }
    if !(noise_sigma >= 0.0 && noise_sigma.is_finite()) {
        return Err(Error::invalid("noise sigma must be a non-negative number"));
    }
    let mut normal = BoxMuller::new(seed);
    let points = (0..n)
        .map(|i| {
            let x = if n == 1 {
                0.0
            } else {
                i as f64 / (n - 1) as f64
            };
            (x, benchmark_target(x) + noise_sigma * normal.sample())
        })
        .collect();
    Dataset::new(points)
}

fn io_err(path: &Path, source: std::io::Error) -> Error {
    Error::Io {
        path: path.display().to_string(),
        source,
    }
}

fn csv_err(path: &Path, e: csv::Error) -> Error {
    let line = e.position().map_or(0, |p| p.line());
    match e.into_kind() {
        csv::ErrorKind::Io(source) => io_err(path, source),
        other => Error::Parse {
            line,
            message: format!("{other:?}"),
        },
    }
}

/// 17 significant digits.
fn fmt_f64(v: f64) -> String {
    format!("{v:.16e}")
}

/// Reads a two-column `x,y` CSV. Rows may come in any order.
pub fn read_points_csv(path: &Path) -> Result<Dataset> {
    let file = File::open(path).map_err(|e| io_err(path, e))?;
    let mut reader = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_reader(file);
    let headers = reader.headers().map_err(|e| csv_err(path, e))?.clone();
    if headers.len() != 2
        || !headers[0].eq_ignore_ascii_case("x")
        || !headers[1].eq_ignore_ascii_case("y")
    {
        return Err(Error::Parse {
            line: 1,
            message: format!(
                "expected header \"x,y\", found {:?}",
                headers.iter().collect::<Vec<_>>().join(",")
            ),
        });
    }
    let mut points = Vec::new();
    for record in reader.records() {
        let record = record.map_err(|e| csv_err(path, e))?;
        let line = record.position().map_or(0, |p| p.line());
        if record.len() != 2 {
            return Err(Error::Parse {
                line,
                message: format!("expected 2 fields, found {}", record.len()),
            });
        }
        let parse = |field: &str, name: &str| -> Result<f64> {
            let v: f64 = field.parse().map_err(|_| Error::Parse {
                line,
                message: format!("{name} value {field:?} is not a number"),
            })?;
            if !v.is_finite() {
                return Err(Error::Parse {
                    line,
                    message: format!("{name} value {field:?} is not finite"),
                });
            }
            Ok(v)
        };
        points.push((parse(&record[0], "x")?, parse(&record[1], "y")?));
    }
    if points.is_empty() {
        return Err(Error::Parse {
            line: 1,
            message: "no data rows".into(),
        });
    }
    Dataset::new(points)
}

pub fn write_points_csv(path: &Path, data: &Dataset) -> Result<()> {
    let file = File::create(path).map_err(|e| io_err(path, e))?;
    let mut out = BufWriter::new(file);
    writeln!(out, "x,y").map_err(|e| io_err(path, e))?;
    for (x, y) in data.points() {
        writeln!(out, "{},{}", fmt_f64(x), fmt_f64(y)).map_err(|e| io_err(path, e))?;
    }
    out.flush().map_err(|e| io_err(path, e))
}

/// Dense plot data with header `x,f,f1,f2`.
pub fn write_samples_csv(path: &Path, rows: &[SampleRow]) -> Result<()> {
    let file = File::create(path).map_err(|e| io_err(path, e))?;
    let mut out = BufWriter::new(file);
    writeln!(out, "x,f,f1,f2").map_err(|e| io_err(path, e))?;
    for r in rows {
        writeln!(
            out,
            "{},{},{},{}",
            fmt_f64(r.x),
            fmt_f64(r.f),
            fmt_f64(r.f1),
            fmt_f64(r.f2)
        )
        .map_err(|e| io_err(path, e))?;
    }
    out.flush().map_err(|e| io_err(path, e))
}

/// Affine input normalization `x_model = (x_data − offset) / scale`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct XMap {
    pub offset: f64,
    pub scale: f64,
}

impl XMap {
    pub const IDENTITY: XMap = XMap {
        offset: 0.0,
        scale: 1.0,
    };

    /// Maps the data range onto `[0, 1]`; identity for a single abscissa.
    pub fn unit_interval(data: &Dataset) -> Self {
        let (lo, hi) = data.x_range();
        if hi > lo {
            Self {
                offset: lo,
                scale: hi - lo,
            }
        } else {
            Self::IDENTITY
        }
    }

    pub fn to_model(&self, x: f64) -> f64 {
        (x - self.offset) / self.scale
    }

    pub fn to_data(&self, x: f64) -> f64 {
        self.offset + self.scale * x
    }

    pub fn apply(&self, data: &Dataset) -> Dataset {
        data.map_x(self.offset, self.scale)
    }

    /// Sample rows in data coordinates (derivatives rescaled by the chain rule).
    pub fn samples_to_data(&self, rows: &[SampleRow]) -> Vec<SampleRow> {
        rows.iter()
            .map(|r| SampleRow {
                x: self.to_data(r.x),
                f: r.f,
                f1: r.f1 / self.scale,
                f2: r.f2 / (self.scale * self.scale),
            })
            .collect()
    }
}

impl Default for XMap {
    fn default() -> Self {
        Self::IDENTITY
    }
}

/// Training summary stored alongside the projected model.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrainingSummary {
    pub epochs_run: usize,
    pub best_epoch: usize,
    pub stopped_early: bool,
    /// Losses of the restored model before the continuity projection.
    pub before_projection: LossBreakdown,
}

/// Everything a `fit` run produces, as persisted in the JSON result file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunArtifact {
    pub version: String,
    pub config: FitConfig,
    #[serde(default)]
    pub x_map: XMap,
    pub breakpoints: Vec<f64>,
    pub coeffs: Vec<Vec<f64>>,
    pub losses: LossBreakdown,
    pub correction: CorrectionReport,
    pub training: TrainingSummary,
    /// Path of the dense sample CSV written with this result, if any.
    #[serde(default)]
    pub samples: Option<String>,
}

impl RunArtifact {
    pub fn from_outcome(outcome: &RunOutcome, x_map: XMap, samples: Option<String>) -> Self {
        Self {
            version: RESULT_VERSION.into(),
            config: outcome.config,
            x_map,
            breakpoints: outcome.projected.breakpoints().as_slice().to_vec(),
            coeffs: outcome.projected.rows(),
            losses: outcome.losses,
            correction: outcome.report,
            training: TrainingSummary {
                epochs_run: outcome.fit.epochs_run(),
                best_epoch: outcome.fit.best_epoch,
                stopped_early: outcome.fit.stopped_early,
                before_projection: *outcome.fit.best(),
            },
            samples,
        }
    }

    /// Pareto record of this run; `model_ref` names the file it came from.
    pub fn record(&self, model_ref: Option<String>) -> SweepRecord {
        SweepRecord {
            alpha: self.config.weights.alpha(),
            beta: self.config.weights.beta(),
            l2: self.losses.l2,
            le: self.losses.le,
            lck: self.losses.lck,
            seed: self.config.seed,
            epochs_run: self.training.epochs_run,
            model_ref,
            failure: None,
        }
    }

    pub fn model(&self) -> Result<PiecewisePolynomial> {
        let bp =
            Breakpoints::new(self.breakpoints.clone()).map_err(|e| Error::Schema(e.to_string()))?;
        PiecewisePolynomial::from_rows(bp, &self.coeffs).map_err(|e| Error::Schema(e.to_string()))
    }
}

pub fn write_result_json(path: &Path, artifact: &RunArtifact) -> Result<()> {
    let file = File::create(path).map_err(|e| io_err(path, e))?;
    let mut out = BufWriter::new(file);
    serde_json::to_writer_pretty(&mut out, artifact).map_err(|e| Error::Schema(e.to_string()))?;
    writeln!(out).map_err(|e| io_err(path, e))?;
    out.flush().map_err(|e| io_err(path, e))
}

pub fn read_result_json(path: &Path) -> Result<RunArtifact> {
    let text = std::fs::read_to_string(path).map_err(|e| io_err(path, e))?;
    parse_result_json(&text)
}

pub fn parse_result_json(text: &str) -> Result<RunArtifact> {
    let value: serde_json::Value =
        serde_json::from_str(text).map_err(|e| Error::Schema(format!("invalid JSON: {e}")))?;
    match value.get("version") {
        Some(serde_json::Value::String(v)) if v == RESULT_VERSION => {}
        Some(serde_json::Value::String(v)) => return Err(Error::UnsupportedVersion(v.clone())),
        Some(other) => return Err(Error::UnsupportedVersion(other.to_string())),
        None => return Err(Error::Schema("missing field `version`".into())),
    }
    let artifact: RunArtifact =
        serde_json::from_value(value).map_err(|e| Error::Schema(e.to_string()))?;
    artifact.model()?;
    Ok(artifact)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::losses::ContinuityMode;
    use crate::pareto::run_point;
    use proptest::prelude::*;

    #[test]
    fn splitmix_reference_values() {
        // first outputs for seed 0 (published reference sequence)
        let mut rng = SplitMix64::new(0);
        assert_eq!(rng.next_u64(), 0xE220_A839_7B1D_CDAF);
        assert_eq!(rng.next_u64(), 0x6E78_9E6A_A1B9_65F4);
    }

    #[test]
    fn noiseless_benchmark_values() {
        let d = gen_dataset(101, 7, 0.0).unwrap();
        assert_eq!(d.xs()[50], 0.5);
        assert_eq!(d.ys()[50], 0.0);
        assert_eq!(d.xs()[100], 1.0);
        assert_eq!(d.ys()[100], 0.0);
        assert_eq!(d.ys()[0], 0.0);
        let d = gen_dataset(100, 7, 0.0).unwrap();
        assert_eq!(d.ys()[99], 0.0);
    }

    #[test]
    fn sin_pi_matches_sin() {
        for i in -40..40 {
            let t = i as f64 * 0.137;
            assert!((sin_pi(t) - (std::f64::consts::PI * t).sin()).abs() < 1e-14);
        }
    }

    #[test]
    fn noise_has_requested_spread() {
        let d = gen_dataset(100, 1, 0.1).unwrap();
        let resid: Vec<f64> = d.points().map(|(x, y)| y - benchmark_target(x)).collect();
        let mean = resid.iter().sum::<f64>() / resid.len() as f64;
        let var = resid.iter().map(|r| (r - mean).powi(2)).sum::<f64>() / (resid.len() - 1) as f64;
        let sd = var.sqrt();
        assert!((0.07..=0.13).contains(&sd), "sd = {sd}");
    }

    #[test]
    fn generator_is_seeded() {
        assert_eq!(
            gen_dataset(50, 3, 0.1).unwrap(),
            gen_dataset(50, 3, 0.1).unwrap()
        );
        assert_ne!(
            gen_dataset(50, 3, 0.1).unwrap(),
            gen_dataset(50, 4, 0.1).unwrap()
        );
        assert!(gen_dataset(0, 1, 0.1).is_err());
        assert!(gen_dataset(5, 1, -1.0).is_err());
    }

    #[test]
    fn csv_round_trip_and_sorting() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("d.csv");
        let d = gen_dataset(37, 11, 0.1).unwrap();
        write_points_csv(&path, &d).unwrap();
        assert_eq!(read_points_csv(&path).unwrap(), d);

        std::fs::write(&path, "x,y\n0.9,1\n0.1,2\n0.5,3\n").unwrap();
        assert_eq!(read_points_csv(&path).unwrap().xs(), &[0.1, 0.5, 0.9]);
    }

    #[test]
    fn csv_errors_name_the_line() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bad.csv");
        std::fs::write(&path, "x,y\n0.1,2\n0.5,abc\n").unwrap();
        match read_points_csv(&path) {
            Err(Error::Parse { line, message }) => {
                assert_eq!(line, 3);
                assert!(message.contains("abc"));
            }
            other => panic!("unexpected {other:?}"),
        }
        std::fs::write(&path, "x,y\n0.1,inf\n").unwrap();
        assert!(matches!(
            read_points_csv(&path),
            Err(Error::Parse { line: 2, .. })
        ));
        std::fs::write(&path, "a,b\n0.1,1\n").unwrap();
        assert!(matches!(
            read_points_csv(&path),
            Err(Error::Parse { line: 1, .. })
        ));
        assert!(matches!(
            read_points_csv(&dir.path().join("missing.csv")),
            Err(Error::Io { .. })
        ));
    }

    fn sample_artifact() -> RunArtifact {
        let data = gen_dataset(40, 2, 0.1).unwrap();
        let config = FitConfig {
            degree: 5,
            segments: 4,
            epochs: 20,
            mode: ContinuityMode::periodic(2),
            ..Default::default()
        };
        let outcome = run_point(&data, &config).unwrap();
        RunArtifact::from_outcome(&outcome, XMap::IDENTITY, None)
    }

    #[test]
    fn json_round_trip_is_bitwise() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("r.json");
        let art = sample_artifact();
        write_result_json(&path, &art).unwrap();
        let back = read_result_json(&path).unwrap();
        let bits = |a: &RunArtifact| {
            a.coeffs
                .iter()
                .flatten()
                .map(|c| c.to_bits())
                .collect::<Vec<_>>()
        };
        assert_eq!(bits(&back), bits(&art));
        assert_eq!(back, art);
    }

    #[test]
    fn json_schema_errors() {
        let art = sample_artifact();
        let mut value = serde_json::to_value(&art).unwrap();
        value.as_object_mut().unwrap().remove("coeffs");
        assert!(matches!(
            parse_result_json(&value.to_string()),
            Err(Error::Schema(_))
        ));

        let mut value = serde_json::to_value(&art).unwrap();
        value["version"] = "2".into();
        assert!(
            matches!(parse_result_json(&value.to_string()), Err(Error::UnsupportedVersion(v)) if v == "2")
        );

        let mut value = serde_json::to_value(&art).unwrap();
        value["coeffs"] = serde_json::json!([[1.0, 2.0]]);
        assert!(matches!(
            parse_result_json(&value.to_string()),
            Err(Error::Schema(_))
        ));
    }

    #[test]
    fn xmap_inverts() {
        let m = XMap {
            offset: 2.0,
            scale: 4.0,
        };
        assert_eq!(m.to_data(m.to_model(3.0)), 3.0);
        let rows = m.samples_to_data(&[SampleRow {
            x: 0.5,
            f: 1.0,
            f1: 4.0,
            f2: 16.0,
        }]);
        assert_eq!(
            rows[0],
            SampleRow {
                x: 4.0,
                f: 1.0,
                f1: 1.0,
                f2: 1.0
            }
        );
    }

    proptest! {
        #[test]
        fn written_floats_read_back_exactly(v in prop::num::f64::NORMAL | prop::num::f64::SUBNORMAL | prop::num::f64::ZERO) {
            let s = fmt_f64(v);
            prop_assert_eq!(s.parse::<f64>().unwrap().to_bits(), v.to_bits());
        }
    }
}
