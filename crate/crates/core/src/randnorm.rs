//! Rademacher averages and the norms built from them: randomized `L^p` norms,
//! square functions, Carleson norms, R-bounds, the Rademacher maximal
//! function, tangent decoupling and the contraction-type inequalities.
//!
//! Sign averages are exact (Gray-code enumeration of `2^{n-1}` patterns, using
//! the symmetry `ε -> -ε`) when the number of active terms is at most
//! `n_exact`, and Monte Carlo otherwise.

use ndarray::{Array1, Array2, ArrayView2, Axis};
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Result, TbError};
use crate::grid::{CubeId, CubeIndex};
use crate::martingale::MartingaleContext;
use crate::measure::{lp_norm, AtomicMeasure, LatticeSpace};
use crate::seed;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    Exact,
    Mc,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Sampler {
    pub n_exact: usize,
    pub mc_trials: usize,
    pub seed: u64,
}

impl Default for Sampler {
    fn default() -> Self {
        Self {
            n_exact: 14,
            mc_trials: 4096,
            seed: 0,
        }
    }
}

/// Mean of a functional of `Σ ε_k h_k` over sign patterns.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Average {
    pub mean: f64,
    pub stderr: f64,
    pub method: Method,
    pub trials: usize,
}

impl Sampler {
    pub fn new(seed: u64) -> Self {
        Self {
            seed,
            ..Self::default()
        }
    }

    /// Same settings, independent stream.
    pub fn child(&self, label: &str, key: &[i64]) -> Self {
        Self {
            seed: seed::derive_indexed(self.seed, label, key),
            ..*self
        }
    }

    /// `E_ε eval(Σ_k ε_k terms[k])` for an even functional `eval`.
    pub fn sign_average<F>(&self, terms: &[Array2<f64>], eval: F) -> Average
    where
        F: Fn(ArrayView2<f64>) -> f64 + Sync,
    {
        assert!(!terms.is_empty(), "sign average of an empty family");
        if terms.len() <= self.n_exact {
            self.exact(terms, &eval)
        } else {
            self.monte_carlo(terms, &eval)
        }
    }

    fn exact<F>(&self, terms: &[Array2<f64>], eval: &F) -> Average
    where
        F: Fn(ArrayView2<f64>) -> f64 + Sync,
    {
        let free = terms.len() - 1;
        let high = free.min(6);
        let low = free - high;
        let chunks: Vec<f64> = (0..1usize << high)
            .into_par_iter()
            .map(|c| {
                let mut signs = vec![1.0; terms.len()];
                for b in 0..high {
                    if (c >> b) & 1 == 1 {
                        signs[1 + low + b] = -1.0;
                    }
                }
                let mut s = Array2::zeros(terms[0].raw_dim());
                for (t, &e) in terms.iter().zip(&signs) {
                    s.scaled_add(e, t);
                }
                let steps = 1usize << low;
                let mut acc = 0.0;
                for g in 0..steps {
                    acc += eval(s.view());
                    if g + 1 < steps {
                        let j = 1 + (g + 1).trailing_zeros() as usize;
                        signs[j] = -signs[j];
                        s.scaled_add(2.0 * signs[j], &terms[j]);
                    }
                }
                acc
            })
            .collect();
        let total = 1usize << free;
        Average {
            mean: chunks.iter().sum::<f64>() / total as f64,
            stderr: 0.0,
            method: Method::Exact,
            trials: total,
        }
    }

    fn monte_carlo<F>(&self, terms: &[Array2<f64>], eval: &F) -> Average
    where
        F: Fn(ArrayView2<f64>) -> f64 + Sync,
    {
        const CHUNK: usize = 256;
        let trials = self.mc_trials.max(2);
        let n_chunks = trials.div_ceil(CHUNK);
        let parts: Vec<(f64, f64)> = (0..n_chunks)
            .into_par_iter()
            .map(|c| {
                let mut rng = seed::rng(seed::derive_indexed(self.seed, "signs", &[c as i64]));
                let count = CHUNK.min(trials - c * CHUNK);
                let mut s = Array2::zeros(terms[0].raw_dim());
                let (mut a, mut a2) = (0.0, 0.0);
                for _ in 0..count {
                    s.fill(0.0);
                    for t in terms {
                        let e = if rng.gen::<bool>() { 1.0 } else { -1.0 };
                        s.scaled_add(e, t);
                    }
                    let v = eval(s.view());
                    a += v;
                    a2 += v * v;
                }
                (a, a2)
            })
            .collect();
        let (sum, sum2) = parts
            .iter()
            .fold((0.0, 0.0), |(x, y), &(a, b)| (x + a, y + b));
        let n = trials as f64;
        let mean = sum / n;
        let var = ((sum2 / n - mean * mean) * n / (n - 1.0)).max(0.0);
        Average {
            mean,
            stderr: (var / n).sqrt(),
            method: Method::Mc,
            trials,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NormReport {
    pub value: f64,
    pub method: Method,
    pub stderr: f64,
    pub trials: usize,
    /// `||(Σ_k |h_k|^2)^{1/2}||_{L^p(μ; X)}`.
    pub square_function: f64,
    /// `value / square_function`, absent when the family vanishes.
    pub ratio: Option<f64>,
}

/// `p`-th root of a mean with its delta-method standard error.
fn root(avg: &Average, p: f64) -> (f64, f64) {
    let v = avg.mean.max(0.0).powf(1.0 / p);
    let se = if avg.stderr == 0.0 || avg.mean <= 0.0 {
        0.0
    } else {
        v / (p * avg.mean) * avg.stderr
    };
    (v, se)
}

fn is_zero(h: &Array2<f64>) -> bool {
    h.iter().all(|&v| v == 0.0)
}

fn lp_eval(
    mu: &AtomicMeasure,
    lattice: LatticeSpace,
    p: f64,
) -> impl Fn(ArrayView2<f64>) -> f64 + Sync + '_ {
    move |s: ArrayView2<f64>| {
        s.outer_iter()
            .enumerate()
            .map(|(x, row)| match row.as_slice() {
                Some(v) => mu.weight(x) * lattice.norm_pow(v, p),
                None => mu.weight(x) * lattice.norm_pow(&row.to_vec(), p),
            })
            .sum()
    }
}

/// Exact sign average of `||Σ ε_k h_k||^p`, atom by atom: each atom only
/// enumerates the terms that are nonzero there.
fn pointwise_exact(
    mu: &AtomicMeasure,
    terms: &[Array2<f64>],
    lattice: LatticeSpace,
    p: f64,
) -> Average {
    let m = terms[0].ncols();
    let mean = (0..mu.len())
        .into_par_iter()
        .map(|x| {
            let rows: Vec<Vec<f64>> = terms
                .iter()
                .map(|t| t.row(x).to_vec())
                .filter(|r| r.iter().any(|&v| v != 0.0))
                .collect();
            if rows.is_empty() {
                return 0.0;
            }
            let mut signs = vec![1.0; rows.len()];
            let mut s = vec![0.0; m];
            for r in &rows {
                for (a, b) in s.iter_mut().zip(r) {
                    *a += b;
                }
            }
            // The first sign stays fixed: the functional is even.
            let steps = 1usize << (rows.len() - 1);
            let mut acc = 0.0;
            for g in 0..steps {
                acc += lattice.norm_pow(&s, p);
                if g + 1 < steps {
                    let j = 1 + (g + 1).trailing_zeros() as usize;
                    signs[j] = -signs[j];
                    for (a, b) in s.iter_mut().zip(&rows[j]) {
                        *a += 2.0 * signs[j] * b;
                    }
                }
            }
            mu.weight(x) * acc / steps as f64
        })
        .sum();
    Average {
        mean,
        stderr: 0.0,
        method: Method::Exact,
        trials: 1usize << (terms.len() - 1),
    }
}

/// `||Σ_k ε_k h_k||_{L^p(μ ⊗ P; X)}` together with the square-function norm.
pub fn randomized_norm(
    mu: &AtomicMeasure,
    family: &[Array2<f64>],
    lattice: LatticeSpace,
    p: f64,
    sampler: &Sampler,
) -> NormReport {
    let terms: Vec<Array2<f64>> = family.iter().filter(|h| !is_zero(h)).cloned().collect();
    if terms.is_empty() {
        return NormReport {
            value: 0.0,
            method: Method::Exact,
            stderr: 0.0,
            trials: 1,
            square_function: 0.0,
            ratio: None,
        };
    }
    let avg = if terms.len() <= sampler.n_exact {
        pointwise_exact(mu, &terms, lattice, p)
    } else {
        sampler.sign_average(&terms, lp_eval(mu, lattice, p))
    };
    let (value, stderr) = root(&avg, p);
    let sq = square_function_norm(mu, &terms, lattice, p);
    NormReport {
        value,
        method: avg.method,
        stderr,
        trials: avg.trials,
        square_function: sq,
        ratio: (sq > 0.0).then(|| value / sq),
    }
}

/// `||(Σ_k |h_k|^2)^{1/2}||_{L^p(μ; X)}` with the lattice absolute value.
pub fn square_function_norm(
    mu: &AtomicMeasure,
    family: &[Array2<f64>],
    lattice: LatticeSpace,
    p: f64,
) -> f64 {
    let Some(first) = family.first() else {
        return 0.0;
    };
    let mut sq = Array2::<f64>::zeros(first.raw_dim());
    for h in family {
        sq.zip_mut_with(h, |a, &b| *a += b * b);
    }
    sq.mapv_inplace(f64::sqrt);
    lp_norm(mu, sq.view(), &lattice, p)
}

/// Sharp scalar Khintchine constants `A_p <= ||Σ ε_k a_k||_p / |a|_2 <= B_p`.
pub fn khintchine_constants(p: f64) -> (f64, f64) {
    use statrs::function::gamma::gamma;
    if p == 2.0 {
        return (1.0, 1.0);
    }
    let g = std::f64::consts::SQRT_2
        * (gamma((p + 1.0) / 2.0) / std::f64::consts::PI.sqrt()).powf(1.0 / p);
    if p >= 2.0 {
        (1.0, g)
    } else {
        (g.min(2f64.powf(0.5 - 1.0 / p)), 1.0)
    }
}

/// Operator families whose square functions are compared with `||f||_p`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SquareFamily {
    /// `D_k^a f`.
    AdaptedDiff,
    /// `(D_k^a)^* f`.
    AdaptedDiffAdjoint,
    /// `D_k f`.
    Diff,
    /// `χ_{k-1} E_{k-1} f`.
    ChiPrev,
    /// `1_{b_{k-1}^a = b_k^a} (E_{k-1} f / E_{k-1} b_{k-1}^a - E_k f / E_k b_k^a)`.
    Quotient,
    /// `(||E_{Q_0}^a f|| + ||Σ ε D_k^a f|| + ||Σ ε χ_{k-1} E_k f||) / ||f||`.
    NormEquivUpper,
    /// `||f|| / (||E_{Q_0}^a f|| + ||Σ ε D_k^a f|| + ||Σ ε χ_{k-1} E_k f||)`.
    NormEquivLower,
}

impl SquareFamily {
    pub const ALL: [SquareFamily; 7] = [
        SquareFamily::AdaptedDiff,
        SquareFamily::AdaptedDiffAdjoint,
        SquareFamily::Diff,
        SquareFamily::ChiPrev,
        SquareFamily::Quotient,
        SquareFamily::NormEquivUpper,
        SquareFamily::NormEquivLower,
    ];

    pub fn name(&self) -> &'static str {
        match self {
            SquareFamily::AdaptedDiff => "adapted_diff",
            SquareFamily::AdaptedDiffAdjoint => "adapted_diff_adjoint",
            SquareFamily::Diff => "diff",
            SquareFamily::ChiPrev => "chi_prev",
            SquareFamily::Quotient => "quotient",
            SquareFamily::NormEquivUpper => "norm_equiv_upper",
            SquareFamily::NormEquivLower => "norm_equiv_lower",
        }
    }
}

fn scale_rows_by(mut f: Array2<f64>, s: &Array1<f64>) -> Array2<f64> {
    for (mut row, &v) in f.axis_iter_mut(Axis(0)).zip(s) {
        row *= v;
    }
    f
}

/// `χ_{k-1} E_k f` for `k_min < k <= s`.
pub fn chi_next_terms(ctx: &MartingaleContext, f: ArrayView2<f64>) -> Vec<Array2<f64>> {
    ctx.diff_scales()
        .map(|k| scale_rows_by(ctx.expectation(f, k), &ctx.chi(k - 1)))
        .collect()
}

/// The terms `h_k` of a family applied to `f` (not for the norm-equivalence
/// variants, which combine several families).
pub fn family_terms(
    ctx: &MartingaleContext,
    family: SquareFamily,
    f: ArrayView2<f64>,
) -> Vec<Array2<f64>> {
    match family {
        SquareFamily::AdaptedDiff | SquareFamily::NormEquivUpper | SquareFamily::NormEquivLower => {
            ctx.diff_scales().map(|k| ctx.adapted_diff(f, k)).collect()
        }
        SquareFamily::AdaptedDiffAdjoint => ctx
            .diff_scales()
            .map(|k| ctx.adapted_diff_adjoint(f, k))
            .collect(),
        SquareFamily::Diff => ctx.diff_scales().map(|k| ctx.diff(f, k)).collect(),
        SquareFamily::ChiPrev => ctx
            .diff_scales()
            .map(|k| scale_rows_by(ctx.expectation(f, k - 1), &ctx.chi(k - 1)))
            .collect(),
        SquareFamily::Quotient => ctx
            .diff_scales()
            .map(|k| {
                let same = ctx.chi(k - 1).mapv(|c| 1.0 - c);
                let a = scale_rows_by(ctx.expectation(f, k - 1), &ctx.eba(k - 1).mapv(|v| 1.0 / v));
                let b = scale_rows_by(ctx.expectation(f, k), &ctx.eba(k).mapv(|v| 1.0 / v));
                scale_rows_by(a - b, &same)
            })
            .collect(),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RatioReport {
    pub family: SquareFamily,
    pub max_ratio: f64,
    pub ratios: Vec<f64>,
    pub max_stderr: f64,
}

/// Sup over the ensemble of the family's randomized norm divided by `||f||_p`.
pub fn square_function_ratio(
    ctx: &MartingaleContext,
    family: SquareFamily,
    p: f64,
    lattice: LatticeSpace,
    ensemble: &[Array2<f64>],
    sampler: &Sampler,
) -> RatioReport {
    let mu = ctx.measure();
    let rows: Vec<(f64, f64)> = ensemble
        .par_iter()
        .enumerate()
        .map(|(i, f)| {
            let s = sampler.child(family.name(), &[i as i64]);
            let norm_f = lp_norm(mu, f.view(), &lattice, p);
            let main = randomized_norm(mu, &family_terms(ctx, family, f.view()), lattice, p, &s);
            match family {
                SquareFamily::NormEquivUpper | SquareFamily::NormEquivLower => {
                    let top = lp_norm(mu, ctx.top_term(f.view()).view(), &lattice, p);
                    let chi = randomized_norm(
                        mu,
                        &chi_next_terms(ctx, f.view()),
                        lattice,
                        p,
                        &s.child("chi", &[]),
                    );
                    let rhs = top + main.value + chi.value;
                    let se = main.stderr + chi.stderr;
                    if family == SquareFamily::NormEquivUpper {
                        (rhs / norm_f, se / norm_f)
                    } else {
                        (norm_f / rhs, norm_f * se / (rhs * rhs))
                    }
                }
                _ => (main.value / norm_f, main.stderr / norm_f),
            }
        })
        .collect();
    let ratios: Vec<f64> = rows.iter().map(|r| r.0).collect();
    RatioReport {
        family,
        max_ratio: ratios.iter().copied().fold(0.0, f64::max),
        max_stderr: rows.iter().map(|r| r.1).fold(0.0, f64::max),
        ratios,
    }
}

/// Largest growth factor between consecutive entries of a size-doubling series.
pub fn doubling_growth(series: &[f64]) -> f64 {
    series.windows(2).map(|w| w[1] / w[0]).fold(0.0, f64::max)
}

/// Random test functions normalised to `||f||_{L^p(μ;X)} = 1`: half i.i.d.
/// uniform values, half cube indicators times a random vector.
pub fn ensemble(
    seed_value: u64,
    mu: &AtomicMeasure,
    index: &CubeIndex,
    lattice: LatticeSpace,
    p: f64,
    count: usize,
) -> Vec<Array2<f64>> {
    let mut rng = seed::rng(seed_value);
    let n = mu.len();
    (0..count)
        .map(|i| {
            let mut f = Array2::<f64>::zeros((n, lattice.m));
            if i % 2 == 0 {
                f.mapv_inplace(|_| rng.gen_range(-1.0..1.0));
            } else {
                let t = rng.gen_range(0..index.n_levels());
                let slot = rng.gen_range(0..index.level(t).cubes.len());
                let v: Vec<f64> = (0..lattice.m).map(|_| rng.gen_range(-1.0..1.0)).collect();
                for &x in &index.cube(CubeId { level: t, slot }).atoms {
                    for (j, &vj) in v.iter().enumerate() {
                        f[[x, j]] = vj;
                    }
                }
            }
            let norm = lp_norm(mu, f.view(), &lattice, p);
            if norm > 0.0 {
                f / norm
            } else {
                f
            }
        })
        .collect()
}

/// `1_Q ξ` for every distinct atom set of an occupied cube `Q`, with one
/// fixed direction `ξ`, normalized to `||f||_p = 1`.
pub fn cube_indicators(
    mu: &AtomicMeasure,
    index: &CubeIndex,
    lattice: LatticeSpace,
    p: f64,
) -> Vec<Array2<f64>> {
    let xi: Vec<f64> = (0..lattice.m)
        .map(|j| if j % 2 == 0 { 1.0 } else { -1.0 } / (j + 1) as f64)
        .collect();
    let mut seen = std::collections::HashSet::new();
    index
        .ids()
        .map(|q| &index.cube(q).atoms)
        .filter(|atoms| seen.insert(atoms.as_slice()))
        .map(|atoms| {
            let mut f = Array2::<f64>::zeros((mu.len(), lattice.m));
            for &x in atoms {
                for (j, &v) in xi.iter().enumerate() {
                    f[[x, j]] = v;
                }
            }
            let norm = lp_norm(mu, f.view(), &lattice, p);
            f / norm
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CarlesonReport {
    pub value: f64,
    pub argmax: Option<CubeId>,
    pub stderr: f64,
}

/// `Car^p({d_k})`: sup over occupied `Q` of
/// `μ(Q)^{-1/p} ||1_Q Σ_{2^k <= ℓ(Q)} ε_k d_k||_{L^p(μ⊗P)}`.
/// `d` lists `(k, d_k)` for scales of the window.
pub fn carleson_norm(
    mu: &AtomicMeasure,
    index: &CubeIndex,
    d: &[(i32, Array1<f64>)],
    p: f64,
    sampler: &Sampler,
) -> CarlesonReport {
    let ids: Vec<CubeId> = index.ids().collect();
    let rows: Vec<(f64, f64, CubeId)> = ids
        .par_iter()
        .map(|&id| {
            let cube = index.cube(id);
            let kq = index.scale(id.level);
            let weights: Vec<f64> = cube.atoms.iter().map(|&x| mu.weight(x)).collect();
            let terms: Vec<Array2<f64>> = d
                .iter()
                .filter(|(k, _)| *k <= kq)
                .map(|(_, dk)| {
                    Array2::from_shape_fn((cube.atoms.len(), 1), |(i, _)| dk[cube.atoms[i]])
                })
                .filter(|h| !is_zero(h))
                .collect();
            if terms.is_empty() {
                return (0.0, 0.0, id);
            }
            let s = sampler.child("carleson", &[id.level as i64, id.slot as i64]);
            let avg = s.sign_average(&terms, |v: ArrayView2<f64>| {
                v.iter()
                    .zip(&weights)
                    .map(|(a, w)| w * a.abs().powf(p))
                    .sum::<f64>()
            });
            let scaled = Average {
                mean: avg.mean / cube.mass,
                stderr: avg.stderr / cube.mass,
                ..avg
            };
            let (v, se) = root(&scaled, p);
            (v, se, id)
        })
        .collect();
    let mut best = CarlesonReport {
        value: 0.0,
        argmax: None,
        stderr: 0.0,
    };
    for (v, se, id) in rows {
        if v > best.value {
            best = CarlesonReport {
                value: v,
                argmax: Some(id),
                stderr: se,
            };
        }
    }
    best
}

/// Error unless `d` is constant on every cube of `D_k`.
pub fn check_measurable(index: &CubeIndex, k: i32, d: &Array1<f64>) -> Result<()> {
    let level = index.level(index.level_of(k));
    for c in &level.cubes {
        let v0 = d[c.atoms[0]];
        if c.atoms
            .iter()
            .any(|&x| (d[x] - v0).abs() > 1e-12 * (1.0 + v0.abs()))
        {
            return Err(TbError::NotMeasurable(format!(
                "d_{k} varies on cube {:?}",
                c.cube.index
            )));
        }
    }
    Ok(())
}

/// `(k, χ_k)` over the window, where `χ_k` marks the layer cubes of `D_k`
/// other than `Q_0`.
pub fn chi_sequence(ctx: &MartingaleContext) -> Vec<(i32, Array1<f64>)> {
    (ctx.k_min()..=ctx.top()).map(|k| (k, ctx.chi(k))).collect()
}

/// Upper bound `1 + Σ_{j>=1} (1-τ)^{j-1} = 1 + 1/τ` for `Car^1` of the
/// χ-sequence.
pub fn chi_carleson_bound(delta: f64) -> f64 {
    1.0 + 1.0 / crate::accretive::tau(delta)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmbeddingReport {
    pub car1: f64,
    pub max_ratio: f64,
    pub ratios: Vec<f64>,
}

/// `||Σ ε_k d_k E_k(c_k f)||_p / (Car^1 · ||f||_p)` over an ensemble.
/// `multipliers` gives `c_k` in the order of `d`; `None` means `c_k = 1`.
pub fn carleson_embedding_check(
    ctx: &MartingaleContext,
    d: &[(i32, Array1<f64>)],
    multipliers: Option<&[Array1<f64>]>,
    ensemble: &[Array2<f64>],
    p: f64,
    lattice: LatticeSpace,
    sampler: &Sampler,
) -> Result<EmbeddingReport> {
    for (k, dk) in d {
        check_measurable(ctx.index(), *k, dk)?;
    }
    if let Some(c) = multipliers {
        if c.len() != d.len() || c.iter().any(|ck| ck.iter().any(|v| v.abs() > 1.0)) {
            return Err(TbError::InvalidParams(
                "multipliers must match d and satisfy |c_k| <= 1".into(),
            ));
        }
    }
    let mu = ctx.measure();
    let car1 = carleson_norm(mu, ctx.index(), d, 1.0, &sampler.child("car1", &[])).value;
    let ratios: Vec<f64> = ensemble
        .par_iter()
        .enumerate()
        .map(|(i, f)| {
            let terms: Vec<Array2<f64>> = d
                .iter()
                .enumerate()
                .map(|(j, (k, dk))| {
                    let cf = match multipliers {
                        Some(c) => scale_rows_by(f.clone(), &c[j]),
                        None => f.clone(),
                    };
                    scale_rows_by(ctx.expectation(cf.view(), *k), dk)
                })
                .collect();
            let lhs =
                randomized_norm(mu, &terms, lattice, p, &sampler.child("embed", &[i as i64])).value;
            let nf = lp_norm(mu, f.view(), &lattice, p);
            if lhs == 0.0 {
                0.0
            } else {
                lhs / (car1 * nf)
            }
        })
        .collect();
    Ok(EmbeddingReport {
        car1,
        max_ratio: ratios.iter().copied().fold(0.0, f64::max),
        ratios,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum UpperMethod {
    /// Scalar family: contraction principle, `R = sup |t_k|`.
    Contraction,
    /// `l^2 -> l^2`: orthogonality, `R = sup ||T_k||`.
    Hilbert,
    /// Vectors as maps from the scalars into `l^ρ`.
    RankOne,
    /// `Σ_k ||T_k||`.
    Triangle,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RBound {
    pub lower: f64,
    /// Certified upper bound, omitted for families above `n_exact` members.
    pub upper: Option<f64>,
    pub upper_method: Option<UpperMethod>,
}

/// `(E||Σ ε_k T_k ξ_k||^2 / E||Σ ε_k ξ_k||^2)^{1/2}`.
fn r_quotient(
    family: &[Array2<f64>],
    xi: &[Array1<f64>],
    x1: LatticeSpace,
    x2: LatticeSpace,
    sampler: &Sampler,
) -> f64 {
    let (num_terms, den_terms): (Vec<Array2<f64>>, Vec<Array2<f64>>) = family
        .iter()
        .zip(xi)
        .filter(|(_, v)| v.iter().any(|&a| a != 0.0))
        .map(|(t, v)| {
            (
                t.dot(v).insert_axis(Axis(0)),
                v.clone().insert_axis(Axis(0)),
            )
        })
        .unzip();
    if den_terms.is_empty() {
        return 0.0;
    }
    let den = sampler
        .sign_average(&den_terms, |s: ArrayView2<f64>| {
            x1.norm_pow(&s.row(0).to_vec(), 2.0)
        })
        .mean;
    if num_terms.iter().all(is_zero) {
        return 0.0;
    }
    let num = sampler
        .sign_average(&num_terms, |s: ArrayView2<f64>| {
            x2.norm_pow(&s.row(0).to_vec(), 2.0)
        })
        .mean;
    (num / den).sqrt()
}

/// Certified upper bound for `||T||_{l^ρ1 -> l^ρ2}`.
pub fn operator_norm_upper(t: &Array2<f64>, x1: LatticeSpace, x2: LatticeSpace) -> f64 {
    let (rows, cols) = t.dim();
    if rows == 1 && cols == 1 {
        return t[[0, 0]].abs();
    }
    if cols == 1 {
        return x2.norm(&t.column(0).to_vec());
    }
    if x1.rho == 2.0 && x2.rho == 2.0 {
        return spectral_upper(t);
    }
    let abs = t.mapv(f64::abs);
    let col = abs.sum_axis(Axis(0)).iter().copied().fold(0.0, f64::max);
    let row = abs.sum_axis(Axis(1)).iter().copied().fold(0.0, f64::max);
    if x1.rho == x2.rho && x1.rho.is_finite() {
        // Schur test on |T|.
        return col.powf(1.0 / x1.rho) * row.powf(1.0 - 1.0 / x1.rho);
    }
    // ||Tx||_ρ2 <= ||Tx||_1 <= col ||x||_1 <= col m^{1-1/ρ1} ||x||_ρ1.
    col * (cols as f64).powf(1.0 - 1.0 / x1.rho)
}

/// `σ_max(T) <= ||(T^T T)^{2^j}||_F^{1/2^{j+1}}`.
fn spectral_upper(t: &Array2<f64>) -> f64 {
    let mut g = t.t().dot(t);
    let mut log_scale = 0.0;
    let mut power = 1.0;
    for _ in 0..6 {
        let fro = g.iter().map(|v| v * v).sum::<f64>().sqrt();
        if fro == 0.0 {
            return 0.0;
        }
        g /= fro;
        log_scale += fro.ln() / power;
        g = g.dot(&g);
        power *= 2.0;
    }
    let fro = g.iter().map(|v| v * v).sum::<f64>().sqrt();
    let log_sigma2 = log_scale + fro.ln() / power;
    (0.5 * log_sigma2).exp() * (1.0 + 1e-12)
}

/// Lower bound by search and, for at most `n_exact` members, a certified
/// upper bound for `R({T_k})` from `l^ρ1` to `l^ρ2`.
pub fn rademacher_bound(
    family: &[Array2<f64>],
    x1: LatticeSpace,
    x2: LatticeSpace,
    sampler: &Sampler,
    search: usize,
) -> RBound {
    if family.is_empty() {
        return RBound {
            lower: 0.0,
            upper: Some(0.0),
            upper_method: Some(UpperMethod::Contraction),
        };
    }
    let cols = family[0].ncols();
    let k = family.len();
    let mut rng = seed::rng(seed::derive(sampler.seed, "rbound"));
    let mut lower: f64 = 0.0;
    let zero = || vec![Array1::<f64>::zeros(cols); k];
    for i in 0..k {
        for j in 0..cols {
            let mut xi = zero();
            xi[i][j] = 1.0;
            lower = lower.max(r_quotient(family, &xi, x1, x2, sampler));
        }
        if cols > 1 {
            for _ in 0..4 {
                let mut xi = zero();
                xi[i] = Array1::from_iter((0..cols).map(|_| rng.gen_range(-1.0..1.0)));
                lower = lower.max(r_quotient(family, &xi, x1, x2, sampler));
            }
        }
    }
    let mut best: Vec<Array1<f64>> = (0..k)
        .map(|_| Array1::from_iter((0..cols).map(|_| rng.gen_range(-1.0..1.0))))
        .collect();
    let mut best_q = r_quotient(family, &best, x1, x2, sampler);
    let mut step = 0.5;
    for _ in 0..search {
        let cand: Vec<Array1<f64>> = best
            .iter()
            .map(|v| v.mapv(|a| a + step * rng.gen_range(-1.0..1.0)))
            .collect();
        let q = r_quotient(family, &cand, x1, x2, sampler);
        if q > best_q {
            best_q = q;
            best = cand;
        } else {
            step = (step * 0.97).max(1e-3);
        }
    }
    lower = lower.max(best_q);

    let upper = (k <= sampler.n_exact).then(|| {
        if family.iter().all(|t| t.dim() == (1, 1)) {
            (
                family.iter().map(|t| t[[0, 0]].abs()).fold(0.0, f64::max),
                UpperMethod::Contraction,
            )
        } else if x1.rho == 2.0 && x2.rho == 2.0 && cols > 1 {
            (
                family
                    .iter()
                    .map(|t| operator_norm_upper(t, x1, x2))
                    .fold(0.0, f64::max),
                UpperMethod::Hilbert,
            )
        } else if cols == 1 {
            let m = family[0].nrows();
            let v = if x2.rho >= 2.0 && x2.rho.is_finite() {
                let (_, b) = khintchine_constants(x2.rho);
                let sup: Vec<f64> = (0..m)
                    .map(|j| family.iter().map(|t| t[[j, 0]].abs()).fold(0.0, f64::max))
                    .collect();
                b * x2.norm(&sup)
            } else {
                let l2 = LatticeSpace { m, rho: 2.0 };
                let e = if x2.rho.is_finite() {
                    1.0 / x2.rho - 0.5
                } else {
                    0.0
                };
                (m as f64).powf(e.max(0.0))
                    * family
                        .iter()
                        .map(|t| l2.norm(&t.column(0).to_vec()))
                        .fold(0.0, f64::max)
            };
            (v, UpperMethod::RankOne)
        } else {
            (
                family.iter().map(|t| operator_norm_upper(t, x1, x2)).sum(),
                UpperMethod::Triangle,
            )
        }
    });
    RBound {
        lower: lower.min(upper.map_or(f64::INFINITY, |u| u.0)),
        upper: upper.map(|u| u.0),
        upper_method: upper.map(|u| u.1),
    }
}

/// `M_R f(x) = R({E_k f(x)})`, with the vectors viewed as maps `λ -> λ ξ`.
pub fn rmf_maximal(
    ctx: &MartingaleContext,
    f: ArrayView2<f64>,
    x: usize,
    lattice: LatticeSpace,
    sampler: &Sampler,
    search: usize,
) -> RBound {
    let mut family: Vec<Array2<f64>> = Vec::new();
    for k in ctx.k_min()..=ctx.top() {
        let v = ctx.expectation(f, k).row(x).to_owned().insert_axis(Axis(1));
        if !family.iter().any(|t| *t == v) {
            family.push(v);
        }
    }
    let scalar = LatticeSpace { m: 1, rho: 2.0 };
    rademacher_bound(&family, scalar, lattice, sampler, search)
}

/// `||Σ ε_k E_k f_k||_p / ||Σ ε_k f_k||_p` for terms `(k, f_k)`.
pub fn stein_ratio(
    ctx: &MartingaleContext,
    terms: &[(i32, Array2<f64>)],
    p: f64,
    lattice: LatticeSpace,
    sampler: &Sampler,
) -> f64 {
    let mu = ctx.measure();
    let proj: Vec<Array2<f64>> = terms
        .iter()
        .map(|(k, f)| ctx.expectation(f.view(), *k))
        .collect();
    let raw: Vec<Array2<f64>> = terms.iter().map(|(_, f)| f.clone()).collect();
    let lhs = randomized_norm(mu, &proj, lattice, p, &sampler.child("stein_lhs", &[])).value;
    let rhs = randomized_norm(mu, &raw, lattice, p, &sampler.child("stein_rhs", &[])).value;
    if lhs == 0.0 {
        0.0
    } else {
        lhs / rhs
    }
}

/// Cotype exponent of `l^ρ`: `max(2, ρ)`.
pub fn cotype_exponent(lattice: LatticeSpace) -> f64 {
    lattice.rho.max(2.0)
}

/// Auxiliary exponent `t = 2 max(s, p, q)`.
pub fn auxiliary_exponent(s: f64, p: f64) -> f64 {
    2.0 * s.max(p).max(crate::measure::conjugate(p))
}

fn l2_random_norm(xis: &[Array1<f64>], lattice: LatticeSpace, sampler: &Sampler) -> f64 {
    let terms: Vec<Array2<f64>> = xis
        .iter()
        .filter(|v| v.iter().any(|&a| a != 0.0))
        .map(|v| v.clone().insert_axis(Axis(0)))
        .collect();
    if terms.is_empty() {
        return 0.0;
    }
    sampler
        .sign_average(&terms, |s: ArrayView2<f64>| {
            lattice.norm_pow(&s.row(0).to_vec(), 2.0)
        })
        .mean
        .sqrt()
}

/// `(Σ ||ξ_j||^s)^{1/s} / ||Σ ε_j ξ_j||_{L^2(Ω;X)}`.
pub fn cotype_ratio(xis: &[Array1<f64>], lattice: LatticeSpace, s: f64, sampler: &Sampler) -> f64 {
    let lhs = xis
        .iter()
        .map(|v| lattice.norm(&v.to_vec()).powf(s))
        .sum::<f64>()
        .powf(1.0 / s);
    lhs / l2_random_norm(xis, lattice, sampler)
}

/// `||Σ ε_j ρ_j ξ_j||_{L^t(Ω̃; L^2(Ω;X))} / (sup_j ||ρ_j||_{L^t} ||Σ ε_j ξ_j||_{L^2(Ω;X)})`
/// with `Ω̃` the points of `rhos` (rows) weighted by `weights`.
pub fn improved_contraction_ratio(
    rhos: ArrayView2<f64>,
    weights: &[f64],
    xis: &[Array1<f64>],
    lattice: LatticeSpace,
    t: f64,
    sampler: &Sampler,
) -> f64 {
    let lhs = rhos
        .outer_iter()
        .zip(weights)
        .enumerate()
        .map(|(i, (r, w))| {
            let scaled: Vec<Array1<f64>> = xis.iter().zip(r).map(|(v, &a)| v * a).collect();
            w * l2_random_norm(&scaled, lattice, &sampler.child("tilde", &[i as i64])).powf(t)
        })
        .sum::<f64>()
        .powf(1.0 / t);
    let sup_rho = rhos
        .axis_iter(Axis(1))
        .map(|c| {
            c.iter()
                .zip(weights)
                .map(|(a, w)| w * a.abs().powf(t))
                .sum::<f64>()
                .powf(1.0 / t)
        })
        .fold(0.0, f64::max);
    lhs / (sup_rho * l2_random_norm(xis, lattice, sampler))
}

/// One block `f_A` of a tangent-decoupling family: supported on `A`,
/// constant on the children of `A`.
#[derive(Debug, Clone, PartialEq)]
pub struct DecouplingTerm {
    pub cube: CubeId,
    pub values: Array2<f64>,
}

/// `f_A = 1_A D_k f` for every cube above the finest scale.
pub fn decoupling_terms_from_diffs(
    ctx: &MartingaleContext,
    f: ArrayView2<f64>,
) -> Vec<DecouplingTerm> {
    let index = ctx.index();
    let mut out = Vec::new();
    for k in ctx.diff_scales() {
        let d = ctx.diff(f, k);
        let t = index.level_of(k);
        for slot in 0..index.level(t).cubes.len() {
            let id = CubeId { level: t, slot };
            let mut v = Array2::zeros(d.raw_dim());
            for &x in &index.cube(id).atoms {
                v.row_mut(x).assign(&d.row(x));
            }
            if !is_zero(&v) {
                out.push(DecouplingTerm {
                    cube: id,
                    values: v,
                });
            }
        }
    }
    out
}

/// Error unless every `f_A` is supported on `A` and constant on its children.
pub fn check_decoupling_terms(index: &CubeIndex, terms: &[DecouplingTerm]) -> Result<()> {
    for term in terms {
        if term.cube.level == 0 {
            return Err(TbError::NotMeasurable("block at the finest scale".into()));
        }
        let atoms = &index.cube(term.cube).atoms;
        for (x, row) in term.values.outer_iter().enumerate() {
            if atoms.binary_search(&x).is_err() && row.iter().any(|&v| v != 0.0) {
                return Err(TbError::NotMeasurable(format!(
                    "block {:?} not supported on its cube",
                    term.cube
                )));
            }
        }
        for child in index.children(term.cube) {
            let c = index.cube(child);
            let first = term.values.row(c.atoms[0]);
            for &x in &c.atoms {
                let row = term.values.row(x);
                if row
                    .iter()
                    .zip(first.iter())
                    .any(|(a, b)| (a - b).abs() > 1e-12 * (1.0 + b.abs()))
                {
                    return Err(TbError::NotMeasurable(format!(
                        "block {:?} varies on a child",
                        term.cube
                    )));
                }
            }
        }
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecouplingReport {
    pub lhs: f64,
    pub rhs: f64,
    pub rhs_stderr: f64,
    pub ratio: f64,
    pub ratio_low: f64,
    pub ratio_high: f64,
    pub trials: usize,
    pub method: Method,
}

fn group_by_scale(index: &CubeIndex, terms: &[DecouplingTerm]) -> Vec<Vec<usize>> {
    let mut levels: Vec<usize> = terms.iter().map(|t| t.cube.level).collect();
    levels.sort_unstable();
    levels.dedup();
    let _ = index;
    levels
        .iter()
        .map(|&l| {
            (0..terms.len())
                .filter(|&j| terms[j].cube.level == l)
                .collect()
        })
        .collect()
}

/// `E_ε ∫ |Σ_k ε_k Σ_{A∈A_k} 1_A(x) f_A(y_A)|^p dμ` for a fixed choice of
/// points `y_A` (one per term).
fn tangent_moment(
    mu: &AtomicMeasure,
    index: &CubeIndex,
    terms: &[DecouplingTerm],
    groups: &[Vec<usize>],
    y: &[usize],
    lattice: LatticeSpace,
    p: f64,
    sampler: &Sampler,
) -> f64 {
    let n = mu.len();
    let m = lattice.m;
    let h: Vec<Array2<f64>> = groups
        .iter()
        .map(|g| {
            let mut hk = Array2::zeros((n, m));
            for &j in g {
                let v = terms[j].values.row(y[j]);
                for &x in &index.cube(terms[j].cube).atoms {
                    hk.row_mut(x).scaled_add(1.0, &v);
                }
            }
            hk
        })
        .filter(|hk| !is_zero(hk))
        .collect();
    if h.is_empty() {
        return 0.0;
    }
    sampler.sign_average(&h, lp_eval(mu, lattice, p)).mean
}

fn decoupling_lhs(
    mu: &AtomicMeasure,
    terms: &[DecouplingTerm],
    groups: &[Vec<usize>],
    lattice: LatticeSpace,
    p: f64,
    sampler: &Sampler,
) -> f64 {
    let h: Vec<Array2<f64>> = groups
        .iter()
        .map(|g| {
            let mut hk = Array2::zeros(terms[g[0]].values.raw_dim());
            for &j in g {
                hk += &terms[j].values;
            }
            hk
        })
        .collect();
    randomized_norm(mu, &h, lattice, p, &sampler.child("lhs", &[])).value
}

/// Monte Carlo tangent decoupling: `y_A ~ μ|_A / μ(A)` independently.
pub fn decoupling_check(
    mu: &AtomicMeasure,
    index: &CubeIndex,
    terms: &[DecouplingTerm],
    lattice: LatticeSpace,
    p: f64,
    trials: usize,
    sampler: &Sampler,
) -> Result<DecouplingReport> {
    check_decoupling_terms(index, terms)?;
    let groups = group_by_scale(index, terms);
    let lhs = decoupling_lhs(mu, terms, &groups, lattice, p, sampler);
    let cumulative: Vec<(Vec<usize>, Vec<f64>)> = terms
        .iter()
        .map(|t| {
            let c = index.cube(t.cube);
            let mut acc = 0.0;
            let cdf = c.atoms.iter().map(|&x| {
                acc += mu.weight(x) / c.mass;
                acc
            });
            (c.atoms.clone(), cdf.collect())
        })
        .collect();
    let values: Vec<f64> = (0..trials.max(2))
        .into_par_iter()
        .map(|i| {
            let mut rng = seed::rng(seed::derive_indexed(sampler.seed, "tangent", &[i as i64]));
            let y: Vec<usize> = cumulative
                .iter()
                .map(|(atoms, cdf)| {
                    let u: f64 = rng.gen();
                    let pos = cdf.partition_point(|&c| c < u).min(atoms.len() - 1);
                    atoms[pos]
                })
                .collect();
            tangent_moment(
                mu,
                index,
                terms,
                &groups,
                &y,
                lattice,
                p,
                &sampler.child("inner", &[i as i64]),
            )
        })
        .collect();
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1.0);
    let avg = Average {
        mean,
        stderr: (var / n).sqrt(),
        method: Method::Mc,
        trials: values.len(),
    };
    Ok(finish_report(lhs, &avg, p))
}

fn finish_report(lhs: f64, avg: &Average, p: f64) -> DecouplingReport {
    let (rhs, se) = root(avg, p);
    let ratio = if rhs > 0.0 { lhs / rhs } else { f64::NAN };
    let ratio_low = lhs / (rhs + 3.0 * se);
    let ratio_high = if rhs > 3.0 * se {
        lhs / (rhs - 3.0 * se)
    } else {
        f64::INFINITY
    };
    DecouplingReport {
        lhs,
        rhs,
        rhs_stderr: se,
        ratio,
        ratio_low,
        ratio_high,
        trials: avg.trials,
        method: avg.method,
    }
}

/// Tangent decoupling by enumerating the product of child cells (each `f_A`
/// only sees which child of `A` contains `y_A`).
pub fn decoupling_exact(
    mu: &AtomicMeasure,
    index: &CubeIndex,
    terms: &[DecouplingTerm],
    lattice: LatticeSpace,
    p: f64,
    sampler: &Sampler,
) -> Result<DecouplingReport> {
    check_decoupling_terms(index, terms)?;
    let groups = group_by_scale(index, terms);
    let lhs = decoupling_lhs(mu, terms, &groups, lattice, p, sampler);
    let cells: Vec<Vec<(usize, f64)>> = terms
        .iter()
        .map(|t| {
            let mass = index.cube(t.cube).mass;
            index
                .children(t.cube)
                .iter()
                .map(|&c| (index.cube(c).atoms[0], index.cube(c).mass / mass))
                .collect()
        })
        .collect();
    let total: f64 = cells.iter().map(|c| c.len() as f64).product();
    if total > (1u64 << 22) as f64 {
        return Err(TbError::InvalidParams(format!(
            "product space of {total} cells is too large to enumerate"
        )));
    }
    let total = total as usize;
    let mean: f64 = (0..total)
        .into_par_iter()
        .map(|code| {
            let mut rest = code;
            let mut weight = 1.0;
            let y: Vec<usize> = cells
                .iter()
                .map(|c| {
                    let (atom, w) = c[rest % c.len()];
                    rest /= c.len();
                    weight *= w;
                    atom
                })
                .collect();
            weight * tangent_moment(mu, index, terms, &groups, &y, lattice, p, sampler)
        })
        .collect::<Vec<f64>>()
        .iter()
        .sum();
    let avg = Average {
        mean,
        stderr: 0.0,
        method: Method::Exact,
        trials: total,
    };
    Ok(finish_report(lhs, &avg, p))
}

/// Kernel decoupling: `||Σ ε_k Σ_A (1_A/μ(A)) ∫_A k_A(·,z) f_A(z) dμ(z)||_p`
/// against `||Σ ε_k Σ_A f_A||_p`. Returns `(lhs, rhs)`.
pub fn decoupling_trick<K>(
    mu: &AtomicMeasure,
    index: &CubeIndex,
    terms: &[DecouplingTerm],
    kernel: K,
    lattice: LatticeSpace,
    p: f64,
    sampler: &Sampler,
) -> Result<(f64, f64)>
where
    K: Fn(CubeId, usize, usize) -> f64,
{
    check_decoupling_terms(index, terms)?;
    let groups = group_by_scale(index, terms);
    let rhs = decoupling_lhs(mu, terms, &groups, lattice, p, sampler);
    let h: Vec<Array2<f64>> = groups
        .iter()
        .map(|g| {
            let mut hk = Array2::<f64>::zeros(terms[g[0]].values.raw_dim());
            for &j in g {
                let cube = index.cube(terms[j].cube);
                for &x in &cube.atoms {
                    let mut row = hk.row_mut(x);
                    for &z in &cube.atoms {
                        let kv = kernel(terms[j].cube, x, z);
                        if kv.abs() > 1.0 + 1e-12 {
                            continue;
                        }
                        row.scaled_add(kv * mu.weight(z) / cube.mass, &terms[j].values.row(z));
                    }
                }
            }
            hk
        })
        .collect();
    let lhs = randomized_norm(mu, &h, lattice, p, &sampler.child("trick", &[])).value;
    Ok((lhs, rhs))
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    fn line(n: usize) -> AtomicMeasure {
        AtomicMeasure::new(
            1,
            1.0,
            (0..n)
                .map(|i| (vec![i as f64 / n as f64], 1.0 / n as f64))
                .collect(),
        )
        .unwrap()
    }

    #[test]
    fn cube_indicators_cover_every_cube() {
        let spec = crate::fixtures::FixtureSpec::new(
            4,
            2,
            24,
            0.5,
            crate::accretive::AccretiveStyle::SignedPerturbation,
            2,
        )
        .unwrap();
        let inst = crate::fixtures::Instance::build(&spec).unwrap();
        let (mu, index) = (inst.measure(), inst.ctx.index());
        let lat = LatticeSpace::new(3, 2.0).unwrap();
        let fs = cube_indicators(mu, index, lat, 1.5);
        let mut sets: Vec<&Vec<usize>> = index.ids().map(|q| &index.cube(q).atoms).collect();
        sets.sort();
        sets.dedup();
        assert_eq!(fs.len(), sets.len());
        for f in &fs {
            assert!((lp_norm(mu, f.view(), &lat, 1.5) - 1.0).abs() < 1e-12);
            let support: Vec<usize> = (0..mu.len()).filter(|&x| f[[x, 0]] != 0.0).collect();
            assert!(sets.contains(&&support));
        }
    }

    #[test]
    fn pointwise_enumeration_matches_full_enumeration() {
        let mu = line(6);
        let mut rng = seed::rng(8);
        let lat = LatticeSpace::new(2, 3.0).unwrap();
        let fam: Vec<Array2<f64>> = (0..7)
            .map(|k| {
                Array2::from_shape_fn((6, 2), |(x, _)| {
                    if x % (k + 1) == 0 {
                        rng.gen_range(-1.0..1.0)
                    } else {
                        0.0
                    }
                })
            })
            .collect();
        for p in [1.5, 2.0, 3.0] {
            let a = pointwise_exact(&mu, &fam, lat, p);
            let b = Sampler::default().sign_average(&fam, lp_eval(&mu, lat, p));
            assert!(
                (a.mean - b.mean).abs() <= 1e-13 * b.mean,
                "{} vs {}",
                a.mean,
                b.mean
            );
            assert_eq!(a.trials, b.trials);
        }
    }

    #[test]
    fn single_term_is_lp_norm() {
        let mu = line(4);
        let h = array![[1.0], [-2.0], [0.5], [3.0]];
        let r = randomized_norm(
            &mu,
            &[h.clone()],
            LatticeSpace::scalar(),
            3.0,
            &Sampler::default(),
        );
        assert!((r.value - lp_norm(&mu, h.view(), &LatticeSpace::scalar(), 3.0)).abs() < 1e-14);
        assert_eq!(r.method, Method::Exact);
        assert_eq!(r.stderr, 0.0);
    }

    #[test]
    fn p2_scalar_matches_square_function() {
        let mu = line(5);
        let mut rng = seed::rng(3);
        let fam: Vec<Array2<f64>> = (0..9)
            .map(|_| Array2::from_shape_fn((5, 1), |_| rng.gen_range(-1.0..1.0)))
            .collect();
        let r = randomized_norm(&mu, &fam, LatticeSpace::scalar(), 2.0, &Sampler::default());
        assert!((r.value - r.square_function).abs() < 1e-12 * r.value);
    }

    #[test]
    fn exact_and_mc_agree() {
        let mu = line(3);
        let mut rng = seed::rng(5);
        let fam: Vec<Array2<f64>> = (0..10)
            .map(|_| Array2::from_shape_fn((3, 2), |_| rng.gen_range(-1.0..1.0)))
            .collect();
        let lat = LatticeSpace::new(2, 4.0).unwrap();
        let ex = randomized_norm(&mu, &fam, lat, 1.5, &Sampler::default());
        let mc = randomized_norm(
            &mu,
            &fam,
            lat,
            1.5,
            &Sampler {
                n_exact: 4,
                mc_trials: 20000,
                seed: 9,
            },
        );
        assert_eq!(mc.method, Method::Mc);
        assert!(
            (ex.value - mc.value).abs() <= 3.0 * mc.stderr + 1e-12,
            "{} vs {} ± {}",
            ex.value,
            mc.value,
            mc.stderr
        );
        let again = randomized_norm(
            &mu,
            &fam,
            lat,
            1.5,
            &Sampler {
                n_exact: 4,
                mc_trials: 20000,
                seed: 9,
            },
        );
        assert_eq!(mc.value.to_bits(), again.value.to_bits());
    }

    #[test]
    fn khintchine_window_on_random_scalar_families() {
        let mu = line(1);
        for p in [1.0, 1.5, 3.0, 4.0] {
            let (a, b) = khintchine_constants(p);
            for s in 0..20u64 {
                let mut rng = seed::rng(100 + s);
                let k = rng.gen_range(1..=14);
                let fam: Vec<Array2<f64>> =
                    (0..k).map(|_| array![[rng.gen_range(-1.0..1.0)]]).collect();
                let r = randomized_norm(&mu, &fam, LatticeSpace::scalar(), p, &Sampler::default());
                let q = r.ratio.unwrap();
                assert!(
                    q >= a - 1e-12 && q <= b + 1e-12,
                    "p={p} q={q} window=[{a},{b}]"
                );
            }
        }
        assert_eq!(khintchine_constants(2.0), (1.0, 1.0));
        // B_4 = 3^{1/4}.
        assert!((khintchine_constants(4.0).1 - 3f64.powf(0.25)).abs() < 1e-12);
        // A_1 = 1/sqrt(2).
        assert!((khintchine_constants(1.0).0 - 0.5f64.sqrt()).abs() < 1e-12);
    }

    #[test]
    fn scalar_rbound_is_sup() {
        let fam: Vec<Array2<f64>> = [0.3, -1.7, 0.9].iter().map(|&t| array![[t]]).collect();
        let s = LatticeSpace::scalar();
        let r = rademacher_bound(&fam, s, s, &Sampler::default(), 50);
        assert_eq!(r.upper, Some(1.7));
        assert!((r.lower - 1.7).abs() < 1e-12);
    }

    #[test]
    fn singleton_rbound_is_operator_norm() {
        let t = array![[2.0, 0.0], [0.0, 0.5]];
        let l2 = LatticeSpace::new(2, 2.0).unwrap();
        let r = rademacher_bound(&[t], l2, l2, &Sampler::default(), 50);
        assert!((r.lower - 2.0).abs() < 1e-12);
        assert!((r.upper.unwrap() - 2.0).abs() < 1e-9);
    }

    #[test]
    fn operator_norm_upper_dominates_samples() {
        let mut rng = seed::rng(17);
        for rho in [1.0, 2.0, 3.0] {
            let lat = LatticeSpace::new(3, rho).unwrap();
            let t = Array2::from_shape_fn((3, 3), |_| rng.gen_range(-1.0..1.0));
            let up = operator_norm_upper(&t, lat, lat);
            for _ in 0..200 {
                let v = Array1::from_iter((0..3).map(|_| rng.gen_range(-1.0..1.0)));
                let q = lat.norm(&t.dot(&v).to_vec()) / lat.norm(&v.to_vec());
                assert!(q <= up * (1.0 + 1e-12));
            }
        }
    }

    #[test]
    fn cotype_and_auxiliary_exponent() {
        assert_eq!(cotype_exponent(LatticeSpace::new(2, 4.0).unwrap()), 4.0);
        assert_eq!(cotype_exponent(LatticeSpace::new(2, 1.5).unwrap()), 2.0);
        assert_eq!(auxiliary_exponent(2.0, 1.5), 6.0);
        let xis = vec![array![1.0, 0.0], array![0.0, 1.0]];
        let l2 = LatticeSpace::new(2, 2.0).unwrap();
        assert!((cotype_ratio(&xis, l2, 2.0, &Sampler::default()) - 1.0).abs() < 1e-12);
    }
}
