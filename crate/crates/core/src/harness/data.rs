use std::fmt;
use std::fs::File;
use std::io::{BufRead, BufReader, Read, Write};
use std::path::Path;
use std::str::FromStr;

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::losses::Example;
use crate::rng::{stream_rng, Stream};
use crate::vector::{dot, norm};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DatasetFormat {
    Csv,
    Libsvm,
}

impl FromStr for DatasetFormat {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "csv" => Ok(Self::Csv),
            "libsvm" | "svmlight" => Ok(Self::Libsvm),
            other => Err(Error::invalid("format", format!("unknown dataset format `{other}`"))),
        }
    }
}

impl fmt::Display for DatasetFormat {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::Csv => "csv",
            Self::Libsvm => "libsvm",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dataset {
    pub examples: Vec<Example>,
    pub n: usize,
    pub d: usize,
    /// Exact `max ‖x‖₂`.
    pub feature_bound: f64,
    pub source: String,
}

impl Dataset {
    pub fn new(examples: Vec<Example>, source: impl Into<String>) -> Result<Self> {
        let first = examples.first().ok_or(Error::EmptyDataset)?;
        let d = first.dim();
        let mut bound = 0.0f64;
        for z in &examples {
            if z.dim() != d {
                return Err(Error::DimensionMismatch { expected: d, actual: z.dim() });
            }
            bound = bound.max(norm(&z.features));
        }
        Ok(Self { n: examples.len(), d, feature_bound: bound, examples, source: source.into() })
    }

    pub fn examples(&self) -> &[Example] {
        &self.examples
    }
}

impl AsRef<[Example]> for Dataset {
    fn as_ref(&self) -> &[Example] {
        &self.examples
    }
}

pub fn load_dataset(path: impl AsRef<Path>, format: DatasetFormat) -> Result<Dataset> {
    let path = path.as_ref();
    let file = File::open(path)?;
    let source = path.display().to_string();
    match format {
        DatasetFormat::Csv => parse_csv(file, source),
        DatasetFormat::Libsvm => parse_libsvm(BufReader::new(file), source),
    }
}

fn parse_field(s: &str, line: usize) -> Result<f64> {
    let t = s.trim();
    t.parse::<f64>()
        .ok()
        .filter(|v| v.is_finite())
        .ok_or_else(|| Error::Parse { line, reason: format!("`{t}` is not a finite number") })
}

/// Label-first dense CSV without a header.
pub fn parse_csv<R: Read>(reader: R, source: impl Into<String>) -> Result<Dataset> {
    let mut rdr = csv::ReaderBuilder::new().has_headers(false).flexible(true).from_reader(reader);
    let mut examples = Vec::new();
    let mut dim: Option<usize> = None;
    for rec in rdr.records() {
        let rec = rec.map_err(|e| {
            let line = e.position().map_or(0, |p| p.line() as usize);
            Error::Parse { line, reason: e.to_string() }
        })?;
        let line = rec.position().map_or(0, |p| p.line() as usize);
        if rec.len() == 1 && rec[0].trim().is_empty() {
            continue;
        }
        if rec.len() < 2 {
            return Err(Error::Parse { line, reason: "expected a label and at least one feature".into() });
        }
        let label = parse_field(&rec[0], line)?;
        let features = rec.iter().skip(1).map(|f| parse_field(f, line)).collect::<Result<Vec<_>>>()?;
        match dim {
            None => dim = Some(features.len()),
            Some(d) if d != features.len() => {
                return Err(Error::Parse { line, reason: format!("expected {d} features, found {}", features.len()) });
            }
            Some(_) => {}
        }
        examples.push(Example::new(features, label));
    }
    Dataset::new(examples, source)
}

/// `label idx:val ...` with 1-based indices, expanded to the largest index seen.
pub fn parse_libsvm<R: BufRead>(reader: R, source: impl Into<String>) -> Result<Dataset> {
    let mut sparse: Vec<(f64, Vec<(usize, f64)>)> = Vec::new();
    let mut max_index = 0usize;
    for (i, line) in reader.lines().enumerate() {
        let lineno = i + 1;
        let line = line?;
        let body = line.split('#').next().unwrap_or("").trim();
        if body.is_empty() {
            continue;
        }
        let mut tokens = body.split_whitespace();
        let label = parse_field(tokens.next().unwrap_or(""), lineno)?;
        let mut entries = Vec::new();
        for tok in tokens {
            let (idx, val) = tok
                .split_once(':')
                .ok_or_else(|| Error::Parse { line: lineno, reason: format!("`{tok}` is not idx:val") })?;
            let idx: usize = idx
                .parse()
                .ok()
                .filter(|&k| k >= 1)
                .ok_or_else(|| Error::Parse { line: lineno, reason: format!("bad feature index `{idx}`") })?;
            max_index = max_index.max(idx);
            entries.push((idx - 1, parse_field(val, lineno)?));
        }
        sparse.push((label, entries));
    }
    if sparse.is_empty() {
        return Err(Error::EmptyDataset);
    }
    if max_index == 0 {
        return Err(Error::Parse { line: 1, reason: "no features in file".into() });
    }
    let examples = sparse
        .into_iter()
        .map(|(label, entries)| {
            let mut x = vec![0.0; max_index];
            for (j, v) in entries {
                x[j] = v;
            }
            Example::new(x, label)
        })
        .collect();
    Dataset::new(examples, source)
}

/// Writes label-first CSV; values use the shortest round-tripping decimal form.
pub fn write_csv<W: Write>(data: &Dataset, writer: W) -> Result<()> {
    let mut w = csv::WriterBuilder::new().has_headers(false).from_writer(writer);
    let mut row: Vec<String> = Vec::with_capacity(data.d + 1);
    for z in &data.examples {
        row.clear();
        row.push(format!("{:?}", z.label));
        row.extend(z.features.iter().map(|v| format!("{v:?}")));
        w.write_record(&row).map_err(|e| Error::Io(std::io::Error::other(e)))?;
    }
    w.flush()?;
    Ok(())
}

pub fn save_csv(data: &Dataset, path: impl AsRef<Path>) -> Result<()> {
    write_csv(data, File::create(path)?)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SyntheticTask {
    /// `y = ⟨w°, x⟩ + noise_level · N(0, 1)`.
    LinearRegression,
    /// `y = sign⟨w°, x⟩`, flipped with probability `noise_level`.
    LinearClassification,
}

/// Features uniform on the unit ball; a unit-norm `w°` fixed by `truth_seed`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticGenerator {
    pub task: SyntheticTask,
    pub d: usize,
    pub noise_level: f64,
    pub truth_seed: u64,
    pub truth: Vec<f64>,
}

fn unit_direction<R: Rng + ?Sized>(d: usize, rng: &mut R) -> Vec<f64> {
    loop {
        let v: Vec<f64> = (0..d).map(|_| StandardNormal.sample(rng)).collect();
        let nv = norm(&v);
        if nv > 0.0 {
            return v.into_iter().map(|x| x / nv).collect();
        }
    }
}

impl SyntheticGenerator {
    pub fn new(task: SyntheticTask, d: usize, noise_level: f64, truth_seed: u64) -> Result<Self> {
        if d == 0 {
            return Err(Error::invalid("d", "dimension must be at least 1"));
        }
        if !(noise_level >= 0.0) || !noise_level.is_finite() {
            return Err(Error::invalid("noise_level", format!("must be nonnegative, got {noise_level}")));
        }
        if task == SyntheticTask::LinearClassification && noise_level > 1.0 {
            return Err(Error::invalid("noise_level", "flip probability must lie in [0, 1]"));
        }
        let truth = unit_direction(d, &mut stream_rng(truth_seed, Stream::Truth));
        Ok(Self { task, d, noise_level, truth_seed, truth })
    }

    pub fn describe(&self) -> String {
        let task = match self.task {
            SyntheticTask::LinearRegression => "linear_regression",
            SyntheticTask::LinearClassification => "linear_classification",
        };
        format!("synthetic:{task}:d={}:noise={}:truth_seed={}", self.d, self.noise_level, self.truth_seed)
    }

    pub fn sample(&self, n: usize, seed: u64) -> Result<Dataset> {
        if n == 0 {
            return Err(Error::EmptyDataset);
        }
        let mut rng = stream_rng(seed, Stream::Data);
        let inv_d = 1.0 / self.d as f64;
        let examples = (0..n)
            .map(|_| {
                let dir = unit_direction(self.d, &mut rng);
                let u: f64 = rng.random();
                let r = u.powf(inv_d);
                let x: Vec<f64> = dir.into_iter().map(|v| v * r).collect();
                let signal = dot(&self.truth, &x);
                let y = match self.task {
                    SyntheticTask::LinearRegression => {
                        if self.noise_level > 0.0 {
                            let e: f64 = StandardNormal.sample(&mut rng);
                            signal + self.noise_level * e
                        } else {
                            signal
                        }
                    }
                    SyntheticTask::LinearClassification => {
                        let s = if signal >= 0.0 { 1.0 } else { -1.0 };
                        if self.noise_level > 0.0 && rng.random::<f64>() < self.noise_level {
                            -s
                        } else {
                            s
                        }
                    }
                };
                Example::new(x, y)
            })
            .collect();
        Dataset::new(examples, format!("{}:n={n}:seed={seed}", self.describe()))
    }
}

pub fn synth_dataset(task: SyntheticTask, n: usize, d: usize, seed: u64, noise_level: f64) -> Result<Dataset> {
    SyntheticGenerator::new(task, d, noise_level, seed)?.sample(n, seed)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::losses::{LossFamily, LossSpec};

    #[test]
    fn csv_line() {
        let d = parse_csv("1.0,0.5,-0.5\n".as_bytes(), "inline").unwrap();
        assert_eq!(d.examples, vec![Example::new(vec![0.5, -0.5], 1.0)]);
        assert_eq!((d.n, d.d), (1, 2));
        assert_eq!(d.feature_bound, 0.5f64.hypot(0.5));
    }

    #[test]
    fn csv_errors_name_line() {
        match parse_csv("1,2,3\n1,2\n".as_bytes(), "x") {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 2),
            other => panic!("expected parse error, got {other:?}"),
        }
        match parse_csv("1,2\n1,abc\n".as_bytes(), "x") {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 2),
            other => panic!("expected parse error, got {other:?}"),
        }
        assert!(matches!(parse_csv("".as_bytes(), "x"), Err(Error::EmptyDataset)));
        assert_eq!(Error::EmptyDataset.to_string(), "empty dataset");
    }

    #[test]
    fn libsvm_expansion() {
        let d = parse_libsvm("-1 2:3.0\n+1 1:1 3:2 # trailing\n".as_bytes(), "x").unwrap();
        assert_eq!(d.d, 3);
        assert_eq!(d.examples[0], Example::new(vec![0.0, 3.0, 0.0], -1.0));
        assert_eq!(d.examples[1], Example::new(vec![1.0, 0.0, 2.0], 1.0));
        assert!(matches!(parse_libsvm("".as_bytes(), "x"), Err(Error::EmptyDataset)));
        match parse_libsvm("1 1:1\n1 0:2\n".as_bytes(), "x") {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 2),
            other => panic!("expected parse error, got {other:?}"),
        }
    }

    #[test]
    fn synthetic_contract() {
        let a = synth_dataset(SyntheticTask::LinearRegression, 500, 4, 3, 0.0).unwrap();
        let b = synth_dataset(SyntheticTask::LinearRegression, 500, 4, 3, 0.0).unwrap();
        assert_eq!(a, b);
        assert!(a.feature_bound <= 1.0);
        let g = SyntheticGenerator::new(SyntheticTask::LinearRegression, 4, 0.0, 3).unwrap();
        assert!((norm(&g.truth) - 1.0).abs() < 1e-12);
        let spec = LossSpec::new(LossFamily::QNormRegression, 1.0, 1.0).unwrap();
        let risk: f64 = a.examples.iter().map(|z| spec.eval_loss(&g.truth, z).unwrap()).sum::<f64>() / a.n as f64;
        assert_eq!(risk, 0.0);

        let c = synth_dataset(SyntheticTask::LinearClassification, 200, 3, 1, 0.0).unwrap();
        assert!(c.examples.iter().all(|z| z.label == 1.0 || z.label == -1.0));
        let g = SyntheticGenerator::new(SyntheticTask::LinearClassification, 3, 0.0, 1).unwrap();
        assert!(c.examples.iter().all(|z| dot(&g.truth, &z.features) * z.label >= 0.0));
    }

    #[test]
    fn synthetic_radius_distribution() {
        // P(‖x‖ ≤ 1/2) = 2^{-d} for the uniform ball
        let a = synth_dataset(SyntheticTask::LinearRegression, 40_000, 2, 11, 0.0).unwrap();
        let frac = a.examples.iter().filter(|z| norm(&z.features) <= 0.5).count() as f64 / a.n as f64;
        assert!((frac - 0.25).abs() < 0.015, "{frac}");
    }

    #[test]
    fn write_then_load() {
        let a = synth_dataset(SyntheticTask::LinearRegression, 20, 3, 5, 0.1).unwrap();
        let mut buf = Vec::new();
        write_csv(&a, &mut buf).unwrap();
        let b = parse_csv(buf.as_slice(), a.source.clone()).unwrap();
        assert_eq!(a, b);
    }
}
