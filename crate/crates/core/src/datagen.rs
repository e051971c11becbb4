//! Seeded synthetic datasets.
//!
//! Every distribution `t` draws from its own ChaCha8 stream (the seed selects
//! the key, `t` the stream), so output does not depend on thread count or on
//! how many distributions precede it.

use std::fmt;
use std::str::FromStr;

use ndarray::{Array1, Array2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp1, StandardNormal, StudentT};
use rayon::prelude::*;

use crate::model::DiscreteDistribution;
use crate::{Error, Result};

/// Means are drawn uniformly from `[0, MEAN_BOX]^d`.
pub const MEAN_BOX: f64 = 5.0;
pub const T_DOF: f64 = 3.0;
pub const T_SCALE: f64 = 0.5;
/// Pixels sampled per requested color cluster.
pub const PIXELS_PER_CLUSTER: usize = 16;
pub const KMEANS_ITERS: usize = 10;
const COLOR_SPREAD: f64 = 0.06;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Family {
    MvnT,
    Colors,
    VariedNt,
}

impl Family {
    pub fn as_str(self) -> &'static str {
        match self {
            Family::MvnT => "mvn-t",
            Family::Colors => "colors",
            Family::VariedNt => "varied-nt",
        }
    }
}

impl fmt::Display for Family {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Family {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "mvn-t" => Ok(Family::MvnT),
            "colors" => Ok(Family::Colors),
            "varied-nt" => Ok(Family::VariedNt),
            _ => Err(Error::invalid(format!("unknown family '{s}' (expected mvn-t, colors or varied-nt)"))),
        }
    }
}

/// Support sizes: one fixed value or an inclusive `start:step:stop` grid.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum NtSpec {
    Fixed(usize),
    Grid { start: usize, step: usize, stop: usize },
}

impl NtSpec {
    pub fn values(&self) -> Vec<usize> {
        match *self {
            NtSpec::Fixed(n) => vec![n],
            NtSpec::Grid { start, step, stop } => (start..=stop).step_by(step).collect(),
        }
    }

    /// Support size of distribution `t`; grids are cycled.
    pub fn for_index(&self, t: usize) -> usize {
        match *self {
            NtSpec::Fixed(n) => n,
            NtSpec::Grid { start, step, stop } => {
                let len = (stop - start) / step + 1;
                start + (t % len) * step
            }
        }
    }

    fn validate(&self) -> Result<()> {
        match *self {
            NtSpec::Fixed(0) => Err(Error::invalid("n_t must be positive")),
            NtSpec::Grid { start, step, stop } if start == 0 || step == 0 || stop < start => {
                Err(Error::invalid(format!("bad grid {start}:{step}:{stop}")))
            }
            _ => Ok(()),
        }
    }
}

impl fmt::Display for NtSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            NtSpec::Fixed(n) => write!(f, "{n}"),
            NtSpec::Grid { start, step, stop } => write!(f, "{start}:{step}:{stop}"),
        }
    }
}

impl FromStr for NtSpec {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let parse = |p: &str| {
            p.trim()
                .parse::<usize>()
                .map_err(|_| Error::invalid(format!("bad n_t value '{p}' in '{s}'")))
        };
        let parts: Vec<&str> = s.split(':').collect();
        let spec = match parts.as_slice() {
            [n] => NtSpec::Fixed(parse(n)?),
            [a, b, c] => NtSpec::Grid { start: parse(a)?, step: parse(b)?, stop: parse(c)? },
            _ => return Err(Error::invalid(format!("n_t must be N or START:STEP:STOP, got '{s}'"))),
        };
        spec.validate()?;
        Ok(spec)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GenSpec {
    pub family: Family,
    pub n: usize,
    pub d: usize,
    pub nt: NtSpec,
    pub seed: u64,
}

impl GenSpec {
    pub fn validate(&self) -> Result<()> {
        if self.n == 0 || self.d == 0 {
            return Err(Error::invalid("N and d must be positive"));
        }
        self.nt.validate()?;
        match (self.family, self.nt) {
            (Family::Colors, _) if self.d != 3 => {
                Err(Error::invalid(format!("colors family is 3-dimensional, got d = {}", self.d)))
            }
            (Family::VariedNt, NtSpec::Fixed(_)) => {
                Err(Error::invalid("varied-nt needs a START:STEP:STOP grid"))
            }
            _ => Ok(()),
        }
    }
}

fn stream_rng(seed: u64, t: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(t as u64);
    rng
}

/// Flat Dirichlet weights via normalized Exp(1) draws.
fn flat_dirichlet(rng: &mut ChaCha8Rng, n: usize) -> Array1<f64> {
    let mut w = Array1::from_shape_fn(n, |_| loop {
        let v: f64 = Exp1.sample(&mut *rng);
        if v > 0.0 {
            break v;
        }
    });
    let total = w.sum();
    w /= total;
    w
}

fn mvn_t_one(rng: &mut ChaCha8Rng, d: usize, nt: usize) -> Result<DiscreteDistribution> {
    let t = StudentT::new(T_DOF).expect("valid degrees of freedom");
    let mean: Vec<f64> = (0..d).map(|_| rng.random_range(0.0..MEAN_BOX)).collect();
    let mut support = Array2::zeros((nt, d));
    for j in 0..nt {
        for k in 0..d {
            let g: f64 = StandardNormal.sample(&mut *rng);
            let noise: f64 = t.sample(&mut *rng);
            support[[j, k]] = mean[k] + g + T_SCALE * noise;
        }
    }
    let weights = flat_dirichlet(rng, nt);
    DiscreteDistribution::new(support, weights)
}

pub fn gen_mvn_t(spec: &GenSpec) -> Result<Vec<DiscreteDistribution>> {
    spec.validate()?;
    (0..spec.n)
        .into_par_iter()
        .map(|t| mvn_t_one(&mut stream_rng(spec.seed, t), spec.d, spec.nt.for_index(t)))
        .collect()
}

/// Same mechanism as [`gen_mvn_t`], with n_t cycling through the grid.
pub fn gen_varied_nt(spec: &GenSpec) -> Result<Vec<DiscreteDistribution>> {
    spec.validate()?;
    gen_mvn_t(spec)
}

fn colors_one(rng: &mut ChaCha8Rng, k: usize) -> Result<DiscreteDistribution> {
    let palette: Vec<[f64; 3]> = (0..3).map(|_| std::array::from_fn(|_| rng.random::<f64>())).collect();
    let mix = flat_dirichlet(rng, 3);
    let n_pix = PIXELS_PER_CLUSTER * k;
    let mut pixels = Array2::<f64>::zeros((n_pix, 3));
    for p in 0..n_pix {
        let u: f64 = rng.random();
        let mut c = 0;
        let mut acc = mix[0];
        while u >= acc && c < 2 {
            c += 1;
            acc += mix[c];
        }
        for ch in 0..3 {
            let g: f64 = StandardNormal.sample(&mut *rng);
            pixels[[p, ch]] = (palette[c][ch] + COLOR_SPREAD * g).clamp(0.0, 1.0);
        }
    }
    let (centers, counts) = kmeans(&pixels, k, rng);
    let keep: Vec<usize> = (0..k).filter(|&c| counts[c] > 0).collect();
    let mut support = Array2::zeros((keep.len(), 3));
    let mut masses = Array1::zeros(keep.len());
    for (r, &c) in keep.iter().enumerate() {
        support.row_mut(r).assign(&centers.row(c));
        masses[r] = counts[c] as f64;
    }
    DiscreteDistribution::from_masses(support, masses)
}

/// Lloyd iterations from k distinct random pixels; returns centers and occupancy.
fn kmeans(pixels: &Array2<f64>, k: usize, rng: &mut ChaCha8Rng) -> (Array2<f64>, Vec<usize>) {
    let n = pixels.nrows();
    let dim = pixels.ncols();
    let picks = rand::seq::index::sample(rng, n, k.min(n));
    let mut centers = Array2::zeros((k, dim));
    for (c, p) in picks.iter().enumerate() {
        centers.row_mut(c).assign(&pixels.row(p));
    }
    let mut labels = vec![0usize; n];
    let mut counts = vec![0usize; k];
    for _ in 0..KMEANS_ITERS {
        for (p, label) in labels.iter_mut().enumerate() {
            let mut best = (f64::INFINITY, 0);
            for c in 0..k {
                let dist: f64 = (0..dim).map(|j| (pixels[[p, j]] - centers[[c, j]]).powi(2)).sum();
                if dist < best.0 {
                    best = (dist, c);
                }
            }
            *label = best.1;
        }
        counts.iter_mut().for_each(|c| *c = 0);
        let mut sums = Array2::<f64>::zeros((k, dim));
        for (p, &c) in labels.iter().enumerate() {
            counts[c] += 1;
            let mut row = sums.row_mut(c);
            row += &pixels.row(p);
        }
        for c in 0..k {
            if counts[c] > 0 {
                let mut row = centers.row_mut(c);
                row.assign(&sums.row(c));
                row /= counts[c] as f64;
            }
        }
    }
    (centers, counts)
}

pub fn gen_colors(spec: &GenSpec) -> Result<Vec<DiscreteDistribution>> {
    spec.validate()?;
    (0..spec.n)
        .into_par_iter()
        .map(|t| colors_one(&mut stream_rng(spec.seed, t), spec.nt.for_index(t)))
        .collect()
}

pub fn generate(spec: &GenSpec) -> Result<Vec<DiscreteDistribution>> {
    match spec.family {
        Family::MvnT => gen_mvn_t(spec),
        Family::Colors => gen_colors(spec),
        Family::VariedNt => gen_varied_nt(spec),
    }
}
