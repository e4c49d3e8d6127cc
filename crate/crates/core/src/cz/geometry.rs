//! Boundary geometry: child containment of deep good cubes, the five-term
//! split of comparable pairs, and collar probabilities of random grids.

use ndarray::Array1;
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::cz::operator::DiscreteOperator;
use crate::cz::paraproduct::chi;
use crate::cz::TwoGrid;
use crate::error::{Result, TbError};
use crate::grid::{Bounds, CubeId};
use crate::seed;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct RcubReport {
    pub pairs: usize,
    pub exceptions: usize,
}

/// Every good `Q ⊂ R` with `l(Q) < 2^{-r} l(R)` lies in one geometric child of `R`.
pub fn rcub_check(two: &TwoGrid) -> RcubReport {
    let (i1, i2) = (two.index1(), two.index2());
    let mut out = RcubReport {
        pairs: 0,
        exceptions: 0,
    };
    for q in i1.ids() {
        let qb = two.bounds1(q);
        for r in i2.ids() {
            if !chi(two, q, r) {
                continue;
            }
            out.pairs += 1;
            let inside = two
                .sys2
                .children(&i2.cube(r).cube)
                .iter()
                .any(|c| two.sys2.bounds(c).contains(&qb));
            if !inside {
                out.exceptions += 1;
            }
        }
    }
    out
}

/// `x ∈ λQ` for the half-open dilate `[c - λl/2, c + λl/2)` about the centre.
fn in_dilate(b: &Bounds, lambda: f64, x: &[f64]) -> bool {
    let h = lambda * b.side / 2.0;
    b.lo.iter().zip(x).all(|(lo, xi)| {
        let c = lo + b.side / 2.0;
        *xi >= c - h && *xi < c + h
    })
}

/// `x ∈ δ_Q^η = (1+η)Q ∖ (1-η)Q`.
pub fn in_collar(b: &Bounds, eta: f64, x: &[f64]) -> bool {
    in_dilate(b, 1.0 + eta, x) && !in_dilate(b, 1.0 - eta, x)
}

/// Atom sets of a comparable pair of children `Q_i`, `R_j`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparablePartition {
    pub delta_q: Vec<usize>,
    pub q_sep: Vec<usize>,
    pub q_boundary: Vec<usize>,
    pub delta_r: Vec<usize>,
    pub r_sep: Vec<usize>,
    pub r_boundary: Vec<usize>,
    /// Both three-way unions are disjoint and exhaust `Q_i` and `R_j`.
    pub exact: bool,
    /// `M_1, ..., M_5`.
    pub m: [f64; 5],
    /// `<1_{R_j} ψ, T 1_{Q_i} φ>`.
    pub whole: f64,
    pub residual: f64,
}

/// Split of `<1_{R_j} ψ, T 1_{Q_i} φ>` for `Q ∈ D`, `R ∈ D'` with `Q ∼ R` (either
/// orientation), where `Q_i`, `R_j` are children of `Q` and `R`.
#[allow(clippy::too_many_arguments)]
pub fn comparable_partition(
    op: &DiscreteOperator,
    two: &TwoGrid,
    q: CubeId,
    qi: CubeId,
    r: CubeId,
    rj: CubeId,
    eta: f64,
    psi: &Array1<f64>,
    phi: &Array1<f64>,
) -> Result<ComparablePartition> {
    let (i1, i2) = (two.index1(), two.index2());
    let (qb, rb) = (two.bounds1(q), two.bounds2(r));
    let (sq, sr) = (i1.scale(q.level), i2.scale(r.level));
    let rr = two.params.r as i32;
    let dist = qb.dist(&rb);
    let comparable = (sq <= sr && sr - sq <= rr && dist < qb.side)
        || (sr <= sq && sq - sr <= rr && dist < rb.side);
    if !comparable {
        return Err(TbError::NotComparable);
    }
    if i1.parent(qi) != Some(q) || i2.parent(rj) != Some(r) {
        return Err(TbError::InvalidParams(
            "Q_i and R_j must be children of Q and R".into(),
        ));
    }
    let mu = op.measure();
    let (qib, rjb) = (two.bounds1(qi), two.bounds2(rj));
    let q_atoms = &i1.cube(qi).atoms;
    let r_atoms = &i2.cube(rj).atoms;
    let in_r = |x: usize| r_atoms.binary_search(&x).is_ok();
    let in_q = |x: usize| q_atoms.binary_search(&x).is_ok();
    let mut p = ComparablePartition {
        delta_q: vec![],
        q_sep: vec![],
        q_boundary: vec![],
        delta_r: vec![],
        r_sep: vec![],
        r_boundary: vec![],
        exact: false,
        m: [0.0; 5],
        whole: 0.0,
        residual: 0.0,
    };
    for &x in q_atoms {
        if in_collar(&rjb, eta, mu.point(x)) {
            p.q_boundary.push(x);
        } else if in_r(x) {
            p.delta_q.push(x);
        } else {
            p.q_sep.push(x);
        }
    }
    for &x in r_atoms {
        if in_collar(&qib, eta, mu.point(x)) {
            p.r_boundary.push(x);
        } else if in_q(x) {
            p.delta_r.push(x);
        } else {
            p.r_sep.push(x);
        }
    }
    p.exact = covers(q_atoms, [&p.delta_q, &p.q_sep, &p.q_boundary])
        && covers(r_atoms, [&p.delta_r, &p.r_sep, &p.r_boundary]);
    let on = |f: &Array1<f64>, set: &[usize]| -> Vec<(usize, f64)> {
        set.iter().map(|&x| (x, f[x])).collect()
    };
    let m = |a: &[usize], b: &[usize]| op.block_element(&on(psi, a), &on(phi, b));
    p.m = [
        m(&p.r_sep, q_atoms),
        m(&p.r_boundary, q_atoms),
        m(&p.delta_r, &p.delta_q),
        m(&p.delta_r, &p.q_boundary),
        m(&p.delta_r, &p.q_sep),
    ];
    p.whole = m(r_atoms, q_atoms);
    p.residual = (p.m.iter().sum::<f64>() - p.whole).abs();
    Ok(p)
}

fn covers(all: &[usize], parts: [&Vec<usize>; 3]) -> bool {
    let mut joined: Vec<usize> = parts.iter().flat_map(|p| p.iter().copied()).collect();
    joined.sort_unstable();
    joined == all
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CollarEstimate {
    pub p_hat: f64,
    pub stderr: f64,
    pub trials: usize,
    /// `4 N (r+1) η`.
    pub bound: f64,
}

impl CollarEstimate {
    pub fn pass(&self) -> bool {
        self.p_hat <= self.bound + 3.0 * self.stderr
    }
}

/// Lowest random bit in the offsets `x_m = Σ_{j<m} β_j 2^j`.
const LOWEST_BIT: i32 = -50;
const CHUNK: usize = 4096;

/// Monte Carlo estimate of `P[x ∈ δ^η(k)]`, `δ^η(k) = ∪_{m=k-r-1}^{k-1} ∪_{Q∈D_m} δ_Q^η`,
/// for `k = 0` and a fixed `x ∈ [0,1)^N`, over random grids.
pub fn boundary_probability(
    dim: usize,
    r: u32,
    eta: f64,
    x: &[f64],
    trials: usize,
    seed_value: u64,
) -> Result<CollarEstimate> {
    if !(eta > 0.0 && eta < 0.25) {
        return Err(TbError::InvalidParams(format!(
            "eta = {eta} outside (0, 1/4)"
        )));
    }
    if x.len() != dim || trials == 0 {
        return Err(TbError::InvalidParams(
            "collar estimate needs a point in R^N and trials > 0".into(),
        ));
    }
    let k = 0i32;
    let scales: Vec<i32> = ((k - r as i32 - 1)..k).collect();
    let chunks = trials.div_ceil(CHUNK);
    let hits: usize = (0..chunks)
        .into_par_iter()
        .map(|c| {
            let mut rng = seed::rng(seed::derive_indexed(seed_value, "collar", &[c as i64]));
            let count = CHUNK.min(trials - c * CHUNK);
            let mut hits = 0;
            let mut bits = vec![vec![0u8; dim]; (k - LOWEST_BIT) as usize];
            for _ in 0..count {
                for b in bits.iter_mut() {
                    for v in b.iter_mut() {
                        *v = rng.gen_range(0..2);
                    }
                }
                let hit = scales.iter().any(|&m| {
                    let side = 2f64.powi(m);
                    (0..dim).any(|a| {
                        let offset: f64 = (LOWEST_BIT..m)
                            .map(|j| bits[(j - LOWEST_BIT) as usize][a] as f64 * 2f64.powi(j))
                            .sum();
                        let t = (x[a] - offset).rem_euclid(side);
                        t < eta * side / 2.0 || t >= side * (1.0 - eta / 2.0)
                    })
                });
                if hit {
                    hits += 1;
                }
            }
            hits
        })
        .sum();
    let p_hat = hits as f64 / trials as f64;
    Ok(CollarEstimate {
        p_hat,
        stderr: (p_hat * (1.0 - p_hat) / trials as f64).sqrt(),
        trials,
        bound: 4.0 * dim as f64 * (r as f64 + 1.0) * eta,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn collar_membership() {
        let b = Bounds::new(vec![0.0], 1.0);
        assert!(in_collar(&b, 0.1, &[0.02]));
        assert!(in_collar(&b, 0.1, &[-0.04]));
        assert!(!in_collar(&b, 0.1, &[0.5]));
        assert!(!in_collar(&b, 0.1, &[1.06]));
    }

    #[test]
    fn collar_probability_is_linear() {
        let x = [0.3141592653589793];
        let a = boundary_probability(1, 2, 0.05, &x, 20000, 7).unwrap();
        let b = boundary_probability(1, 2, 0.025, &x, 20000, 7).unwrap();
        assert!(a.pass() && b.pass());
        let ratio = b.p_hat / a.p_hat;
        assert!((0.3..=0.7).contains(&ratio), "{ratio}");
        let tiny = boundary_probability(1, 2, 1e-6, &x, 20000, 7).unwrap();
        assert!(tiny.p_hat < 1e-3);
    }
}
