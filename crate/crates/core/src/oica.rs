//! Overcomplete ICA with mixing structure `[A_nl | I]`.
//!
//! Each shared source is a univariate Gaussian mixture, each `E*_i` is
//! Gaussian. Given the joint component assignment of all sources the data is
//! Gaussian, and the posterior mean of the sources is affine in `x`, so the
//! E-step only needs per-assignment weighted moments of the data. The M-step
//! is exact.

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::factor::{fa_fit, FaFit};
use crate::graph::CanonicalRep;
use crate::linalg::{self, serde_rows};
use crate::simulate::Dataset;
use crate::stats;

const LN_2PI: f64 = 1.837_877_066_409_345_5;
const MAX_STATES: usize = 4096;
const CHUNK: usize = 4096;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OicaConfig {
    /// Mixture components per source.
    pub components: usize,
    pub starts: usize,
    pub max_iter: usize,
    /// Stop when the relative log-likelihood change falls below this.
    pub rel_tol: f64,
    /// Starts are screened on a random subsample of this many rows.
    pub screen_samples: usize,
    pub screen_iter: usize,
    /// Component variance floor, relative to the unit source variance.
    pub var_floor: f64,
    pub seed: u64,
}

impl Default for OicaConfig {
    fn default() -> Self {
        OicaConfig {
            components: 2,
            starts: 10,
            max_iter: 1000,
            rel_tol: 1e-8,
            screen_samples: 100_000,
            screen_iter: 40,
            var_floor: 1e-3,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SourceParams {
    pub weights: Vec<f64>,
    pub means: Vec<f64>,
    pub variances: Vec<f64>,
}

impl SourceParams {
    pub fn mean(&self) -> f64 {
        self.weights.iter().zip(&self.means).map(|(w, m)| w * m).sum()
    }

    pub fn variance(&self) -> f64 {
        let m = self.mean();
        self.weights.iter().zip(&self.means).zip(&self.variances).map(|((w, mu), v)| w * (v + mu * mu)).sum::<f64>()
            - m * m
    }

    fn scale(&mut self, s: f64) {
        self.means.iter_mut().for_each(|m| *m *= s);
        self.variances.iter_mut().for_each(|v| *v *= s * s);
    }
}

/// Estimated `A_nl` up to column permutation and scale.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MixingEstimate {
    /// Unit-norm columns, largest-magnitude entry positive.
    #[serde(with = "serde_rows")]
    pub a_nl: DMatrix<f64>,
    pub estar_var: Vec<f64>,
    pub sources: Vec<SourceParams>,
    /// `None` for estimates not obtained by fitting.
    pub loglik: Option<f64>,
    pub iterations: usize,
    pub converged: bool,
    pub monotone: bool,
    pub best_start: usize,
    pub warnings: Vec<String>,
}

impl MixingEstimate {
    /// Exact population quantities of a model's canonical representation.
    pub fn from_canonical(cr: &CanonicalRep) -> Self {
        let sources = cr
            .nl_noise_variances
            .iter()
            .map(|&v| SourceParams { weights: vec![1.0], means: vec![0.0], variances: vec![v] })
            .collect();
        let mut est = MixingEstimate {
            a_nl: cr.a_nl.clone(),
            estar_var: cr.estar_variances.clone(),
            sources,
            loglik: None,
            iterations: 0,
            converged: true,
            monotone: true,
            best_start: 0,
            warnings: Vec::new(),
        };
        est.normalize();
        est
    }

    pub fn n(&self) -> usize {
        self.a_nl.nrows()
    }

    pub fn r(&self) -> usize {
        self.a_nl.ncols()
    }

    pub fn source_variances(&self) -> Vec<f64> {
        self.sources.iter().map(SourceParams::variance).collect()
    }

    /// Rows are the node coefficients over unit-variance sources.
    pub fn standardized_rows(&self) -> DMatrix<f64> {
        let mut m = self.a_nl.clone();
        for (k, v) in self.source_variances().into_iter().enumerate() {
            m.column_mut(k).scale_mut(v.max(0.0).sqrt());
        }
        m
    }

    /// Model-implied covariance of `X`.
    pub fn implied_cov(&self) -> DMatrix<f64> {
        let mut c = linalg::scaled_gram(&self.a_nl, &self.source_variances());
        for (i, v) in self.estar_var.iter().enumerate() {
            c[(i, i)] += v;
        }
        c
    }

    /// Apply the unit-norm and sign convention, then order columns by the row
    /// of their largest entry.
    fn normalize(&mut self) {
        for k in 0..self.r() {
            let norm = self.a_nl.column(k).norm();
            if norm == 0.0 {
                continue;
            }
            let imax = self.a_nl.column(k).iamax();
            let s = norm * self.a_nl[(imax, k)].signum();
            self.a_nl.column_mut(k).unscale_mut(s);
            self.sources[k].scale(s);
        }
        let mut order: Vec<usize> = (0..self.r()).collect();
        let key = |k: usize| {
            let c = self.a_nl.column(k);
            (c.iamax(), c.iter().map(|v| -v.abs()).fold(f64::INFINITY, f64::min))
        };
        order.sort_by(|&a, &b| {
            let (ia, va) = key(a);
            let (ib, vb) = key(b);
            ia.cmp(&ib).then(va.total_cmp(&vb)).then(a.cmp(&b))
        });
        self.a_nl = DMatrix::from_fn(self.n(), order.len(), |i, j| self.a_nl[(i, order[j])]);
        self.sources = order.iter().map(|&k| self.sources[k].clone()).collect();
    }
}

/// Column matching between an estimate and a reference.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Alignment {
    /// `permutation[k]` is the estimate column matched to reference column `k`.
    pub permutation: Vec<usize>,
    /// Scale applied to that estimate column (sign included).
    pub scales: Vec<f64>,
    pub max_abs_error: f64,
}

/// Match columns of `est` to `reference` allowing per-column rescaling.
///
/// The assignment minimizes the summed Euclidean column residuals; it is
/// solved exactly by dynamic programming over column subsets.
///
/// # Panics
/// If the shapes differ or there are more than 20 columns.
pub fn align_columns(est: &DMatrix<f64>, reference: &DMatrix<f64>) -> Alignment {
    assert_eq!(est.shape(), reference.shape(), "align_columns needs equal shapes");
    let r = est.ncols();
    assert!(r <= 20, "align_columns supports at most 20 columns");
    let fit = |e: usize, k: usize| -> (f64, f64) {
        let ec = est.column(e);
        let rc = reference.column(k);
        let ee = ec.dot(&ec);
        let s = if ee > 0.0 { ec.dot(&rc) / ee } else { 0.0 };
        (s, (ec * s - rc).norm())
    };
    let table: Vec<Vec<(f64, f64)>> = (0..r).map(|k| (0..r).map(|e| fit(e, k)).collect()).collect();

    // best[mask]: cost of matching reference columns 0..popcount(mask) to the
    // estimate columns in mask.
    let full = 1usize << r;
    let mut best = vec![f64::INFINITY; full];
    let mut choice = vec![usize::MAX; full];
    best[0] = 0.0;
    for mask in 0..full {
        if !best[mask].is_finite() {
            continue;
        }
        let k = mask.count_ones() as usize;
        if k == r {
            continue;
        }
        for e in 0..r {
            if mask & (1 << e) == 0 {
                let next = mask | (1 << e);
                let c = best[mask] + table[k][e].1;
                if c < best[next] {
                    best[next] = c;
                    choice[next] = e;
                }
            }
        }
    }
    let mut permutation = vec![0; r];
    let mut mask = full - 1;
    for k in (0..r).rev() {
        let e = choice[mask];
        permutation[k] = e;
        mask &= !(1 << e);
    }
    let scales: Vec<f64> = (0..r).map(|k| table[k][permutation[k]].0).collect();
    let mut max_abs_error = 0.0f64;
    for k in 0..r {
        for i in 0..est.nrows() {
            max_abs_error = max_abs_error.max((est[(i, permutation[k])] * scales[k] - reference[(i, k)]).abs());
        }
    }
    Alignment { permutation, scales, max_abs_error }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NongaussianityScreen {
    pub excess_kurtosis: Vec<f64>,
    pub threshold: f64,
    /// Variables whose kurtosis is within the threshold of zero.
    pub gaussian_like: Vec<bool>,
    pub a4_likely_violated: bool,
}

/// Per-variable excess kurtosis against `3 sqrt(24 / N)`.
pub fn nongaussianity_screen(data: &Dataset) -> Result<NongaussianityScreen> {
    let n_samples = data.n_samples();
    if n_samples < 100 {
        return Err(Error::Config(format!("kurtosis screen needs at least 100 rows, got {n_samples}")));
    }
    let threshold = 3.0 * stats::kurtosis_se(n_samples);
    let excess_kurtosis: Vec<f64> = (0..data.n_vars()).map(|j| stats::excess_kurtosis(&data.column(j))).collect();
    let gaussian_like: Vec<bool> = excess_kurtosis.iter().map(|k| k.abs() <= threshold).collect();
    let a4_likely_violated = gaussian_like.iter().all(|&g| g);
    Ok(NongaussianityScreen { excess_kurtosis, threshold, gaussian_like, a4_likely_violated })
}

/// Fit `r` shared sources to `data`.
pub fn oica_fit(data: &Dataset, r: usize, cfg: &OicaConfig) -> Result<MixingEstimate> {
    let n = data.n_vars();
    let n_samples = data.n_samples();
    if r == 0 || r >= n {
        return Err(Error::Config(format!("source count must lie in [1, {}], got {r}", n.saturating_sub(1))));
    }
    if cfg.components == 0 || cfg.starts == 0 || cfg.max_iter == 0 {
        return Err(Error::Config("components, starts and max_iter must be positive".into()));
    }
    let states = cfg.components.checked_pow(r as u32).filter(|&s| s <= MAX_STATES);
    if states.is_none() {
        return Err(Error::Config(format!("{} components over {r} sources is too many joint states", cfg.components)));
    }
    if n_samples <= n * (r + 2) {
        return Err(Error::Config(format!("{n_samples} rows are too few for {n} variables")));
    }

    let mut warnings = Vec::new();
    if let Ok(screen) = nongaussianity_screen(data) {
        if screen.a4_likely_violated {
            warnings.push("all variables look Gaussian; the mixing estimate is unreliable".to_owned());
        }
    }

    let x = centered_rows(&data.values);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let sub = if n_samples > cfg.screen_samples {
        let mut idx = sample(&mut rng, n_samples, cfg.screen_samples).into_vec();
        idx.sort_unstable();
        idx.iter().flat_map(|&t| x[t * n..(t + 1) * n].iter().copied()).collect()
    } else {
        x.clone()
    };
    let sub_cov = row_cov(&sub, n);
    let base = initial_loadings(&sub_cov, r, n_samples);

    let inits: Vec<Params> = (0..cfg.starts)
        .map(|s| {
            let mut srng = ChaCha8Rng::seed_from_u64(cfg.seed.wrapping_add(1 + s as u64));
            init_params(&base, &sub, n, r, s, cfg, &mut srng)
        })
        .collect();
    let screen_iter = cfg.screen_iter.min(cfg.max_iter);
    let screened: Vec<(Params, Trace)> =
        inits.into_par_iter().map(|p| run_em(p, &sub, n, screen_iter, cfg.rel_tol, cfg)).collect();
    let (best_start, _) = screened
        .iter()
        .enumerate()
        .filter(|(_, (_, t))| t.loglik.is_finite())
        .fold(None::<(usize, f64)>, |acc, (i, (_, t))| match acc {
            Some((_, ll)) if ll >= t.loglik => acc,
            _ => Some((i, t.loglik)),
        })
        .ok_or_else(|| Error::Inconsistency("every start produced a degenerate likelihood".into()))?;

    let (mut params, mut trace) = screened.into_iter().nth(best_start).expect("index in range");
    if n_samples > cfg.screen_samples || !trace.converged {
        let (p, t) = run_em(params, &x, n, cfg.max_iter, cfg.rel_tol, cfg);
        params = p;
        trace = Trace { monotone: trace.monotone && t.monotone, ..t };
    }
    let loglik = estep(&params, &x, n, cfg.components).loglik;
    if !trace.converged {
        warnings.push(format!("EM stopped after {} iterations without meeting the tolerance", trace.iterations));
    }

    let mut est = MixingEstimate {
        a_nl: params.a,
        estar_var: params.psi,
        sources: params.sources,
        loglik: Some(loglik),
        iterations: trace.iterations,
        converged: trace.converged,
        monotone: trace.monotone,
        best_start,
        warnings,
    };
    est.normalize();
    Ok(est)
}

#[derive(Debug, Clone)]
struct Params {
    a: DMatrix<f64>,
    psi: Vec<f64>,
    sources: Vec<SourceParams>,
    psi_floor: f64,
}

#[derive(Debug, Clone, Copy)]
struct Trace {
    loglik: f64,
    iterations: usize,
    converged: bool,
    monotone: bool,
}

fn centered_rows(values: &DMatrix<f64>) -> Vec<f64> {
    let (rows, n) = values.shape();
    let means: Vec<f64> = (0..n).map(|j| values.column(j).mean()).collect();
    let mut out = Vec::with_capacity(rows * n);
    for t in 0..rows {
        for j in 0..n {
            out.push(values[(t, j)] - means[j]);
        }
    }
    out
}

fn row_cov(x: &[f64], n: usize) -> DMatrix<f64> {
    let rows = x.len() / n;
    let mut c = DMatrix::zeros(n, n);
    for row in x.chunks_exact(n) {
        for i in 0..n {
            for j in 0..=i {
                c[(i, j)] += row[i] * row[j];
            }
        }
    }
    for i in 0..n {
        for j in 0..i {
            c[(j, i)] = c[(i, j)];
        }
    }
    c / rows as f64
}

/// Factor-analysis loadings and uniquenesses, with a principal-component
/// fallback.
fn initial_loadings(cov: &DMatrix<f64>, r: usize, n_samples: usize) -> (DMatrix<f64>, Vec<f64>) {
    let n = cov.nrows();
    let floor = 1e-3 * (0..n).map(|i| cov[(i, i)]).fold(0.0, f64::max);
    match fa_fit(cov, n_samples, r) {
        Ok(FaFit { l, psi, .. }) => (l, psi.into_iter().map(|p| p.max(floor)).collect()),
        Err(_) => {
            let eig = SymmetricEigen::new(cov.clone());
            let mut order: Vec<usize> = (0..n).collect();
            order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));
            let rest = order[r..].iter().map(|&k| eig.eigenvalues[k]).sum::<f64>() / (n - r) as f64;
            let l = DMatrix::from_fn(n, r, |i, k| {
                let lam = (eig.eigenvalues[order[k]] - rest).max(0.0);
                eig.eigenvectors[(i, order[k])] * lam.sqrt()
            });
            let psi = (0..n).map(|i| (cov[(i, i)] - l.row(i).norm_squared()).max(floor)).collect();
            (l, psi)
        }
    }
}

fn inv_sqrt_sym(m: &DMatrix<f64>) -> DMatrix<f64> {
    let eig = SymmetricEigen::new((m + m.transpose()) * 0.5);
    let d = DMatrix::from_diagonal(&eig.eigenvalues.map(|v| 1.0 / v.max(1e-12).sqrt()));
    &eig.eigenvectors * d * eig.eigenvectors.transpose()
}

fn random_rotation<R: Rng>(r: usize, rng: &mut R) -> DMatrix<f64> {
    let g = DMatrix::from_fn(r, r, |_, _| rng.sample::<f64, _>(StandardNormal));
    g.qr().q()
}

/// Symmetric FastICA with the cubic nonlinearity on whitened scores.
fn fastica(z: &[f64], r: usize, mut w: DMatrix<f64>) -> DMatrix<f64> {
    let rows = z.len() / r;
    for _ in 0..200 {
        let mut next = DMatrix::zeros(r, r);
        for zt in z.chunks_exact(r) {
            let zt = DVector::from_column_slice(zt);
            let y = &w * &zt;
            for k in 0..r {
                let g = y[k].powi(3);
                for j in 0..r {
                    next[(k, j)] += g * zt[j];
                }
            }
        }
        next /= rows as f64;
        next -= &w * 3.0;
        let next = inv_sqrt_sym(&(&next * next.transpose())) * next;
        let change = (&next * w.transpose()).diagonal().iter().map(|v| 1.0 - v.abs()).fold(0.0, f64::max);
        w = next;
        if change < 1e-10 {
            break;
        }
    }
    w
}

fn init_params<R: Rng>(
    base: &(DMatrix<f64>, Vec<f64>),
    x: &[f64],
    n: usize,
    r: usize,
    start: usize,
    cfg: &OicaConfig,
    rng: &mut R,
) -> Params {
    let (l, psi) = base;
    let psi_inv = DMatrix::from_diagonal(&DVector::from_iterator(n, psi.iter().map(|p| 1.0 / p)));
    let lt_pi = l.transpose() * &psi_inv;
    let proj = (&lt_pi * l).pseudo_inverse(1e-12).expect("finite matrix") * lt_pi;
    let scores: Vec<f64> = x
        .chunks_exact(n)
        .flat_map(|xt| (&proj * DVector::from_column_slice(xt)).iter().copied().collect::<Vec<_>>())
        .collect();
    let wh = inv_sqrt_sym(&row_cov(&scores, r));
    let z: Vec<f64> = scores
        .chunks_exact(r)
        .flat_map(|yt| (&wh * DVector::from_column_slice(yt)).iter().copied().collect::<Vec<_>>())
        .collect();
    let rot0 = if start == 0 { DMatrix::identity(r, r) } else { random_rotation(r, rng) };
    let w = fastica(&z, r, rot0);
    // x ~ L y, y = wh^-1 z, z = w^T s
    let wh_inv = wh.clone().pseudo_inverse(1e-12).expect("finite matrix");
    let mut a = l * wh_inv * w.transpose();
    if start > 0 {
        let jitter = 0.1 * a.abs().max();
        a.iter_mut().for_each(|v| *v += jitter * rng.sample::<f64, _>(StandardNormal));
    }
    let s_hat: Vec<f64> = z
        .chunks_exact(r)
        .flat_map(|zt| (&w * DVector::from_column_slice(zt)).iter().copied().collect::<Vec<_>>())
        .collect();
    let sources = (0..r)
        .map(|k| {
            let col: Vec<f64> = s_hat.iter().skip(k).step_by(r).copied().collect();
            init_source(&col, cfg.components, start, rng)
        })
        .collect();
    let psi_floor = 1e-6 * psi.iter().fold(0.0, |a: f64, &b| a.max(b));
    Params { a, psi: psi.clone(), sources, psi_floor }
}

/// Bimodal start for light tails, scale mixture for heavy tails.
fn init_source<R: Rng>(s: &[f64], m: usize, start: usize, rng: &mut R) -> SourceParams {
    if m == 1 {
        return SourceParams { weights: vec![1.0], means: vec![0.0], variances: vec![1.0] };
    }
    let k = stats::excess_kurtosis(s);
    let mut p = if k < 0.0 {
        let spread = 0.9;
        SourceParams {
            weights: vec![1.0 / m as f64; m],
            means: (0..m).map(|c| spread * (2.0 * c as f64 / (m - 1) as f64 - 1.0)).collect(),
            variances: vec![0.3; m],
        }
    } else {
        let mut weights: Vec<f64> = (0..m).map(|c| if c == 0 { 0.7 } else { 0.3 / (m - 1) as f64 }).collect();
        let total: f64 = weights.iter().sum();
        weights.iter_mut().for_each(|w| *w /= total);
        SourceParams { weights, means: vec![0.0; m], variances: (0..m).map(|c| 0.5 * 3f64.powi(c as i32)).collect() }
    };
    if start > 0 {
        p.means.iter_mut().for_each(|v| *v += 0.1 * rng.sample::<f64, _>(StandardNormal));
        p.variances.iter_mut().for_each(|v| *v *= rng.random_range(0.7..1.4));
    }
    let v = p.variance().sqrt();
    let mu = p.mean();
    p.means.iter_mut().for_each(|x| *x -= mu);
    p.scale(1.0 / v);
    p
}

/// Joint assignment `z` decoded into one component index per source.
fn decode(mut z: usize, m: usize, r: usize) -> Vec<usize> {
    (0..r)
        .map(|_| {
            let c = z % m;
            z /= m;
            c
        })
        .collect()
}

struct State {
    log_pi: f64,
    mean: DVector<f64>,
    prec: DMatrix<f64>,
    log_det: f64,
    post_cov: DMatrix<f64>,
    gain: DMatrix<f64>,
    offset: DVector<f64>,
}

fn states(p: &Params, m: usize) -> Vec<State> {
    let (n, r) = p.a.shape();
    let psi_inv = DVector::from_iterator(n, p.psi.iter().map(|v| 1.0 / v));
    let at_pi = DMatrix::from_fn(r, n, |k, i| p.a[(i, k)] * psi_inv[i]);
    let ata = &at_pi * &p.a;
    (0..m.pow(r as u32))
        .map(|z| {
            let comp = decode(z, m, r);
            let mu = DVector::from_iterator(r, (0..r).map(|k| p.sources[k].means[comp[k]]));
            let d = DVector::from_iterator(r, (0..r).map(|k| p.sources[k].variances[comp[k]]));
            let log_pi: f64 = (0..r).map(|k| p.sources[k].weights[comp[k]].ln()).sum();
            let mut cov = &p.a * DMatrix::from_diagonal(&d) * p.a.transpose();
            for i in 0..n {
                cov[(i, i)] += p.psi[i];
            }
            let chol = cov.cholesky().expect("positive uniquenesses keep the covariance definite");
            let log_det = 2.0 * chol.l().diagonal().iter().map(|v| v.ln()).sum::<f64>();
            let prec = chol.inverse();
            let post_prec = &ata + DMatrix::from_diagonal(&d.map(|v| 1.0 / v));
            let post_cov = post_prec.cholesky().expect("definite posterior precision").inverse();
            let gain = &post_cov * &at_pi;
            let offset = &post_cov * mu.component_div(&d);
            State { log_pi, mean: &p.a * mu, prec, log_det, post_cov, gain, offset }
        })
        .collect()
}

/// Per-state weighted moments `(sum g, sum g x, sum g x x^T)` plus the log-likelihood.
struct Moments {
    n: usize,
    weight: Vec<f64>,
    first: Vec<f64>,
    second: Vec<f64>,
    loglik: f64,
}

impl Moments {
    fn zeros(states: usize, n: usize) -> Self {
        Moments {
            n,
            weight: vec![0.0; states],
            first: vec![0.0; states * n],
            second: vec![0.0; states * n * n],
            loglik: 0.0,
        }
    }

    fn merge(mut self, o: Moments) -> Self {
        let add = |a: &mut [f64], b: &[f64]| a.iter_mut().zip(b).for_each(|(x, y)| *x += y);
        add(&mut self.weight, &o.weight);
        add(&mut self.first, &o.first);
        add(&mut self.second, &o.second);
        self.loglik += o.loglik;
        self
    }

    fn first(&self, z: usize) -> DVector<f64> {
        DVector::from_column_slice(&self.first[z * self.n..(z + 1) * self.n])
    }

    fn second(&self, z: usize) -> DMatrix<f64> {
        let nn = self.n * self.n;
        DMatrix::from_column_slice(self.n, self.n, &self.second[z * nn..(z + 1) * nn])
    }
}

fn estep(p: &Params, x: &[f64], n: usize, m: usize) -> Moments {
    let st = states(p, m);
    let zc = st.len();
    let consts: Vec<f64> = st.iter().map(|s| s.log_pi - 0.5 * (n as f64 * LN_2PI + s.log_det)).collect();
    x.par_chunks(CHUNK * n)
        .map(|chunk| {
            let mut acc = Moments::zeros(zc, n);
            let mut logp = vec![0.0; zc];
            let mut dev = vec![0.0; n];
            for xt in chunk.chunks_exact(n) {
                for (z, s) in st.iter().enumerate() {
                    for i in 0..n {
                        dev[i] = xt[i] - s.mean[i];
                    }
                    let mut q = 0.0;
                    for i in 0..n {
                        let mut row = 0.0;
                        for j in 0..n {
                            row += s.prec[(i, j)] * dev[j];
                        }
                        q += dev[i] * row;
                    }
                    logp[z] = consts[z] - 0.5 * q;
                }
                let mx = logp.iter().copied().fold(f64::NEG_INFINITY, f64::max);
                let total: f64 = logp.iter().map(|l| (l - mx).exp()).sum();
                acc.loglik += mx + total.ln();
                for z in 0..zc {
                    let g = (logp[z] - mx).exp() / total;
                    if g < 1e-300 {
                        continue;
                    }
                    acc.weight[z] += g;
                    let f = &mut acc.first[z * n..(z + 1) * n];
                    for i in 0..n {
                        f[i] += g * xt[i];
                    }
                    let sec = &mut acc.second[z * n * n..(z + 1) * n * n];
                    for j in 0..n {
                        let gx = g * xt[j];
                        for i in 0..n {
                            sec[j * n + i] += gx * xt[i];
                        }
                    }
                }
            }
            acc
        })
        .reduce(|| Moments::zeros(zc, n), Moments::merge)
}

fn mstep(p: &Params, mo: &Moments, rows: usize, m: usize, var_floor: f64) -> Params {
    let (n, r) = p.a.shape();
    let st = states(p, m);
    let mut sxs = DMatrix::zeros(n, r);
    let mut sss = DMatrix::zeros(r, r);
    let mut sxx = DMatrix::zeros(n, n);
    let mut m0 = vec![vec![0.0; m]; r];
    let mut m1 = vec![vec![0.0; m]; r];
    let mut m2 = vec![vec![0.0; m]; r];
    for (z, s) in st.iter().enumerate() {
        let w = mo.weight[z];
        if w <= 0.0 {
            continue;
        }
        let fx = mo.first(z);
        let sx = mo.second(z);
        let kf = &s.gain * &fx;
        let ks = &s.gain * &sx;
        sxs += &fx * s.offset.transpose() + &sx * s.gain.transpose();
        sss += (&s.post_cov + &s.offset * s.offset.transpose()) * w
            + &kf * s.offset.transpose()
            + &s.offset * kf.transpose()
            + &ks * s.gain.transpose();
        sxx += &sx;
        let comp = decode(z, m, r);
        for k in 0..r {
            let c = comp[k];
            let b = s.offset[k];
            let kk = s.gain.row(k);
            m0[k][c] += w;
            m1[k][c] += w * b + kf[k];
            m2[k][c] += w * (s.post_cov[(k, k)] + b * b) + 2.0 * b * kf[k] + (kk * &sx * kk.transpose())[(0, 0)];
        }
    }
    let a = match sss.clone().cholesky() {
        Some(c) => &sxs * c.inverse(),
        None => &sxs * sss.clone().pseudo_inverse(1e-12).expect("finite matrix"),
    };
    let cross = &a * sxs.transpose();
    let quad = &a * &sss * a.transpose();
    let psi = (0..n)
        .map(|i| ((sxx[(i, i)] - 2.0 * cross[(i, i)] + quad[(i, i)]) / rows as f64).max(p.psi_floor))
        .collect();
    let mut sources: Vec<SourceParams> = (0..r)
        .map(|k| {
            let tot: f64 = m0[k].iter().sum();
            let prev = &p.sources[k];
            let mut weights = Vec::with_capacity(m);
            let mut means = Vec::with_capacity(m);
            let mut variances = Vec::with_capacity(m);
            for c in 0..m {
                if m0[k][c] <= 1e-12 * tot {
                    weights.push(1e-12);
                    means.push(prev.means[c]);
                    variances.push(prev.variances[c]);
                    continue;
                }
                let mu = m1[k][c] / m0[k][c];
                weights.push(m0[k][c] / tot);
                means.push(mu);
                variances.push((m2[k][c] / m0[k][c] - mu * mu).max(var_floor));
            }
            let wsum: f64 = weights.iter().sum();
            weights.iter_mut().for_each(|w| *w /= wsum);
            SourceParams { weights, means, variances }
        })
        .collect();
    // Unit source variance, compensated in A: the likelihood is unchanged.
    let mut a = a;
    for (k, s) in sources.iter_mut().enumerate() {
        let sd = s.variance().sqrt();
        if sd > 0.0 && sd.is_finite() {
            s.scale(1.0 / sd);
            a.column_mut(k).scale_mut(sd);
        }
    }
    Params { a, psi, sources, psi_floor: p.psi_floor }
}

fn run_em(mut p: Params, x: &[f64], n: usize, max_iter: usize, rel_tol: f64, cfg: &OicaConfig) -> (Params, Trace) {
    let rows = x.len() / n;
    let mut prev = f64::NEG_INFINITY;
    let mut monotone = true;
    let mut converged = false;
    let mut iterations = 0;
    while iterations < max_iter {
        let mo = estep(&p, x, n, cfg.components);
        if !mo.loglik.is_finite() {
            return (p, Trace { loglik: f64::NEG_INFINITY, iterations, converged: false, monotone });
        }
        if mo.loglik < prev - 1e-9 * prev.abs() {
            monotone = false;
        }
        if prev.is_finite() && (mo.loglik - prev).abs() <= rel_tol * mo.loglik.abs() {
            converged = true;
            prev = mo.loglik;
            break;
        }
        prev = mo.loglik;
        p = mstep(&p, &mo, rows, cfg.components, cfg.var_floor);
        iterations += 1;
    }
    (p, Trace { loglik: prev, iterations, converged, monotone })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn align_recovers_swap_and_sign() {
        let reference = DMatrix::from_row_slice(3, 2, &[1.0, 0.0, 1.0, 1.0, 0.0, 1.0]);
        let est = DMatrix::from_row_slice(3, 2, &[0.0, -2.0, 0.5, -2.0, 0.5, 0.0]);
        let al = align_columns(&est, &reference);
        assert_eq!(al.permutation, vec![1, 0]);
        assert_relative_eq!(al.scales[0], -0.5);
        assert_relative_eq!(al.scales[1], 2.0);
        assert!(al.max_abs_error < 1e-15);
    }

    #[test]
    fn source_moments() {
        let mut s = SourceParams { weights: vec![0.5, 0.5], means: vec![-1.0, 1.0], variances: vec![0.5, 0.5] };
        assert_relative_eq!(s.variance(), 1.5);
        s.scale(2.0);
        assert_relative_eq!(s.variance(), 6.0);
    }

    #[test]
    fn oracle_estimate_convention() {
        let m = crate::fixtures::example1(1.0, 1.0, 1.0, 1.0, crate::fixtures::NoiseFamily::Uniform).unwrap();
        let cr = crate::graph::build_canonical(&m).unwrap();
        let est = MixingEstimate::from_canonical(&cr);
        let h = 0.5f64.sqrt();
        let expect = DMatrix::from_row_slice(3, 2, &[h, 0.0, h, h, 0.0, h]);
        assert!(linalg::max_abs_diff(&est.a_nl, &expect) < 1e-12);
        assert!(linalg::max_abs_diff(&est.implied_cov(), &cr.observed_cov()) < 1e-12);
        assert!(linalg::max_abs_diff(&est.standardized_rows(), &cr.standardized_a_nl()) < 1e-12);
    }

    #[test]
    fn rejects_bad_source_counts() {
        let d = Dataset::from_values(DMatrix::from_fn(200, 2, |i, j| (i * (j + 1)) as f64), vec!["a".into(), "b".into()])
            .unwrap();
        assert!(matches!(oica_fit(&d, 2, &OicaConfig::default()), Err(Error::Config(_))));
        assert!(matches!(oica_fit(&d, 0, &OicaConfig::default()), Err(Error::Config(_))));
    }
}
