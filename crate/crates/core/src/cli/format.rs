//! On-disk text formats.
//!
//! Distribution files (`WBD1`):
//!
//! ```text
//! WBD1
//! N d
//! n_1
//! b_1 a_11 ... a_1d
//! ...
//! n_2
//! ...
//! ```
//!
//! Reports are `key: value` lines; cluster models start with `WBC1`.
//! Floats are written with 17 significant digits so every value re-parses
//! exactly.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;
use std::str::FromStr;

use log::warn;
use ndarray::{Array1, Array2};

use crate::cluster::ClusterModel;
use crate::model::{DiscreteDistribution, Method, SolveReport, WEIGHT_SUM_TOL};
use crate::{Error, Result};

pub const DISTRIBUTION_MAGIC: &str = "WBD1";
pub const MODEL_MAGIC: &str = "WBC1";

/// 17 significant digits.
pub fn fmt_f64(v: f64) -> String {
    format!("{v:.16e}")
}

/// Non-empty lines with their 1-based line numbers.
struct Lines<'a> {
    inner: std::iter::Peekable<Box<dyn Iterator<Item = (usize, &'a str)> + 'a>>,
    last: usize,
}

impl<'a> Lines<'a> {
    fn new(text: &'a str) -> Self {
        let it: Box<dyn Iterator<Item = (usize, &'a str)> + 'a> = Box::new(
            text.lines()
                .enumerate()
                .map(|(i, l)| (i + 1, l.trim()))
                .filter(|(_, l)| !l.is_empty() && !l.starts_with('#')),
        );
        Self { inner: it.peekable(), last: 0 }
    }

    fn next_line(&mut self, what: &str) -> Result<(usize, &'a str)> {
        match self.inner.next() {
            Some((n, l)) => {
                self.last = n;
                Ok((n, l))
            }
            None => Err(Error::parse(self.last + 1, format!("unexpected end of file, expected {what}"))),
        }
    }

    fn is_done(&mut self) -> bool {
        self.inner.peek().is_none()
    }
}

fn parse_num<T: FromStr>(tok: &str, line: usize, what: &str) -> Result<T> {
    tok.parse().map_err(|_| Error::parse(line, format!("cannot parse {what} from '{tok}'")))
}

fn parse_fields<T: FromStr>(text: &str, line: usize, expected: usize, what: &str) -> Result<Vec<T>> {
    let toks: Vec<&str> = text.split_whitespace().collect();
    if toks.len() != expected {
        return Err(Error::parse(line, format!("expected {expected} values ({what}), found {}", toks.len())));
    }
    toks.iter().map(|t| parse_num(t, line, what)).collect()
}

/// Reads one `n_t` block; zero-weight points are dropped with a warning.
fn read_block(lines: &mut Lines<'_>, d: usize, index: usize) -> Result<DiscreteDistribution> {
    let (hline, htext) = lines.next_line("support size")?;
    let n: usize = parse_fields::<usize>(htext, hline, 1, "support size")?[0];
    if n == 0 {
        return Err(Error::parse(hline, format!("distribution {index} has no support points")));
    }
    let mut support = Array2::zeros((n, d));
    let mut weights = Array1::zeros(n);
    for j in 0..n {
        let (line, text) = lines.next_line("support point")?;
        let vals: Vec<f64> = parse_fields(text, line, d + 1, "weight and coordinates")?;
        if let Some(v) = vals.iter().find(|v| !v.is_finite()) {
            return Err(Error::parse(line, format!("non-finite value {v}")));
        }
        if vals[0] < 0.0 {
            if vals[0] < -WEIGHT_SUM_TOL {
                return Err(Error::parse(line, format!("negative weight {}", vals[0])));
            }
        }
        weights[j] = vals[0].max(0.0);
        for k in 0..d {
            support[[j, k]] = vals[k + 1];
        }
    }
    let p = DiscreteDistribution::new(support, weights).map_err(|e| Error::parse(hline, format!("distribution {index}: {e}")))?;
    let (p, dropped) = p.without_zero_weights();
    if dropped > 0 {
        warn!("distribution {index} (line {hline}): dropped {dropped} zero-weight points");
    }
    Ok(p)
}

fn write_block(out: &mut String, p: &DiscreteDistribution) {
    let _ = writeln!(out, "{}", p.len());
    for (b, a) in p.weights().iter().zip(p.support().outer_iter()) {
        out.push_str(&fmt_f64(*b));
        for v in a {
            out.push(' ');
            out.push_str(&fmt_f64(*v));
        }
        out.push('\n');
    }
}

pub fn parse_distributions_str(text: &str) -> Result<Vec<DiscreteDistribution>> {
    let mut lines = Lines::new(text);
    let (line, magic) = lines.next_line("header")?;
    if magic != DISTRIBUTION_MAGIC {
        return Err(Error::parse(line, format!("expected header '{DISTRIBUTION_MAGIC}', found '{magic}'")));
    }
    let (line, dims) = lines.next_line("N and d")?;
    let nd: Vec<usize> = parse_fields(dims, line, 2, "N and d")?;
    let (n, d) = (nd[0], nd[1]);
    if n == 0 || d == 0 {
        return Err(Error::parse(line, "N and d must be positive"));
    }
    let data = (0..n).map(|t| read_block(&mut lines, d, t)).collect::<Result<Vec<_>>>()?;
    if !lines.is_done() {
        let (line, _) = lines.next_line("")?;
        return Err(Error::parse(line, format!("trailing content after {n} distributions")));
    }
    Ok(data)
}

pub fn parse_distributions(path: &Path) -> Result<Vec<DiscreteDistribution>> {
    parse_distributions_str(&fs::read_to_string(path)?)
}

pub fn serialize_distributions(data: &[DiscreteDistribution]) -> Result<String> {
    let d = data.first().ok_or_else(|| Error::invalid("no distributions to write"))?.dim();
    if data.iter().any(|p| p.dim() != d) {
        return Err(Error::dim("distributions have mixed dimensions"));
    }
    let mut out = format!("{DISTRIBUTION_MAGIC}\n{} {d}\n", data.len());
    for p in data {
        write_block(&mut out, p);
    }
    Ok(out)
}

pub fn write_distributions(data: &[DiscreteDistribution], path: &Path) -> Result<()> {
    Ok(fs::write(path, serialize_distributions(data)?)?)
}

const REPORT_KEYS: [&str; 9] = [
    "method",
    "objval",
    "pinfeas",
    "outer_iterations",
    "inner_iterations",
    "wall_time_s",
    "converged",
    "m",
    "seed",
];

pub fn serialize_report(report: &SolveReport) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "method: {}", report.method);
    let _ = writeln!(out, "objval: {}", fmt_f64(report.objval));
    let _ = writeln!(out, "pinfeas: {}", fmt_f64(report.pinfeas));
    let _ = writeln!(out, "outer_iterations: {}", report.outer_iterations);
    let _ = writeln!(out, "inner_iterations: {}", report.inner_iterations);
    let _ = writeln!(out, "wall_time_s: {}", fmt_f64(report.wall_time_s));
    let _ = writeln!(out, "converged: {}", report.converged);
    let _ = writeln!(out, "m: {}", report.m);
    let _ = writeln!(out, "seed: {}", report.seed);
    for (k, v) in &report.config {
        let _ = writeln!(out, "config.{k}: {v}");
    }
    out
}

pub fn parse_report_str(text: &str) -> Result<SolveReport> {
    let mut found: Vec<Option<(usize, String)>> = vec![None; REPORT_KEYS.len()];
    let mut config = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = i + 1;
        if raw.trim().is_empty() {
            continue;
        }
        let (key, value) = raw
            .split_once(':')
            .ok_or_else(|| Error::parse(line, format!("expected 'key: value', found '{raw}'")))?;
        let (key, value) = (key.trim(), value.trim().to_string());
        if let Some(k) = key.strip_prefix("config.") {
            config.push((k.to_string(), value));
        } else if let Some(pos) = REPORT_KEYS.iter().position(|&k| k == key) {
            if found[pos].is_some() {
                return Err(Error::parse(line, format!("duplicate key '{key}'")));
            }
            found[pos] = Some((line, value));
        } else {
            return Err(Error::parse(line, format!("unknown key '{key}'")));
        }
    }
    let end = text.lines().count() + 1;
    let get = |key: &str| -> Result<(usize, &str)> {
        let pos = REPORT_KEYS.iter().position(|&k| k == key).expect("known key");
        found[pos]
            .as_ref()
            .map(|(l, v)| (*l, v.as_str()))
            .ok_or_else(|| Error::parse(end, format!("missing key '{key}'")))
    };
    fn typed<T: FromStr>(entry: (usize, &str), key: &str) -> Result<T> {
        parse_num(entry.1, entry.0, key)
    }
    let method_entry = get("method")?;
    let method: Method = method_entry.1.parse().map_err(|e: Error| Error::parse(method_entry.0, e.to_string()))?;
    Ok(SolveReport {
        method,
        objval: typed(get("objval")?, "objval")?,
        pinfeas: typed(get("pinfeas")?, "pinfeas")?,
        outer_iterations: typed(get("outer_iterations")?, "outer_iterations")?,
        inner_iterations: typed(get("inner_iterations")?, "inner_iterations")?,
        wall_time_s: typed(get("wall_time_s")?, "wall_time_s")?,
        converged: typed(get("converged")?, "converged")?,
        m: typed(get("m")?, "m")?,
        seed: typed(get("seed")?, "seed")?,
        config,
    })
}

pub fn write_report(report: &SolveReport, path: &Path) -> Result<()> {
    Ok(fs::write(path, serialize_report(report))?)
}

pub fn read_report(path: &Path) -> Result<SolveReport> {
    parse_report_str(&fs::read_to_string(path)?)
}

/// One value per line.
pub fn serialize_vector(v: &Array1<f64>) -> String {
    v.iter().map(|x| fmt_f64(*x) + "\n").collect()
}

/// One row per line, whitespace separated.
pub fn serialize_matrix(x: &Array2<f64>) -> String {
    x.outer_iter()
        .map(|row| row.iter().map(|v| fmt_f64(*v)).collect::<Vec<_>>().join(" ") + "\n")
        .collect()
}

pub fn parse_matrix_str(text: &str) -> Result<Array2<f64>> {
    let mut rows: Vec<Vec<f64>> = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let toks: Vec<&str> = raw.split_whitespace().collect();
        if toks.is_empty() {
            continue;
        }
        if let Some(first) = rows.first() {
            if first.len() != toks.len() {
                return Err(Error::parse(i + 1, format!("expected {} columns, found {}", first.len(), toks.len())));
            }
        }
        rows.push(toks.iter().map(|t| parse_num(t, i + 1, "number")).collect::<Result<_>>()?);
    }
    let cols = rows.first().map_or(0, |r| r.len());
    if rows.is_empty() {
        return Err(Error::parse(1, "empty matrix"));
    }
    Ok(Array2::from_shape_vec((rows.len(), cols), rows.concat()).expect("rectangular rows"))
}

pub fn parse_vector_str(text: &str) -> Result<Array1<f64>> {
    let toks: Vec<(usize, &str)> = text
        .lines()
        .enumerate()
        .flat_map(|(i, l)| l.split_whitespace().map(move |t| (i + 1, t)))
        .collect();
    if toks.is_empty() {
        return Err(Error::parse(1, "empty vector"));
    }
    toks.iter().map(|(l, t)| parse_num(t, *l, "number")).collect()
}

pub fn serialize_model(model: &ClusterModel) -> Result<String> {
    let d = model.centroids.first().ok_or_else(|| Error::invalid("model has no centroids"))?.dim();
    let mut out = format!("{MODEL_MAGIC}\n{} {d}\n", model.centroids.len());
    let _ = writeln!(out, "objective {}", fmt_f64(model.within_cluster_objective));
    let _ = writeln!(out, "rounds {}", model.rounds);
    let _ = writeln!(out, "converged {}", model.converged);
    let labels: Vec<String> = model.assignments.iter().map(|l| (l + 1).to_string()).collect();
    let _ = writeln!(out, "labels {} {}", labels.len(), labels.join(" "));
    for c in &model.centroids {
        write_block(&mut out, c);
    }
    Ok(out)
}

pub fn parse_model_str(text: &str) -> Result<ClusterModel> {
    let mut lines = Lines::new(text);
    let (line, magic) = lines.next_line("header")?;
    if magic != MODEL_MAGIC {
        return Err(Error::parse(line, format!("expected header '{MODEL_MAGIC}', found '{magic}'")));
    }
    let (line, dims) = lines.next_line("K and d")?;
    let kd: Vec<usize> = parse_fields(dims, line, 2, "K and d")?;
    let mut keyed = |key: &str| -> Result<(usize, Vec<&str>)> {
        let (line, text) = lines.next_line(key)?;
        let mut toks = text.split_whitespace();
        if toks.next() != Some(key) {
            return Err(Error::parse(line, format!("expected '{key}'")));
        }
        Ok((line, toks.collect()))
    };
    let (l, v) = keyed("objective")?;
    let within_cluster_objective = parse_num(v.first().copied().unwrap_or(""), l, "objective")?;
    let (l, v) = keyed("rounds")?;
    let rounds = parse_num(v.first().copied().unwrap_or(""), l, "rounds")?;
    let (l, v) = keyed("converged")?;
    let converged = parse_num(v.first().copied().unwrap_or(""), l, "converged")?;
    let (l, v) = keyed("labels")?;
    let n: usize = parse_num(v.first().copied().unwrap_or(""), l, "label count")?;
    if v.len() != n + 1 {
        return Err(Error::parse(l, format!("expected {n} labels, found {}", v.len().saturating_sub(1))));
    }
    let assignments = v[1..]
        .iter()
        .map(|t| {
            let s: usize = parse_num(t, l, "label")?;
            if s == 0 || s > kd[0] {
                return Err(Error::parse(l, format!("label {s} outside 1..={}", kd[0])));
            }
            Ok(s - 1)
        })
        .collect::<Result<_>>()?;
    let centroids = (0..kd[0]).map(|s| read_block(&mut lines, kd[1], s)).collect::<Result<_>>()?;
    Ok(ClusterModel { centroids, assignments, within_cluster_objective, rounds, converged })
}
