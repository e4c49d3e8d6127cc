//! The stopping map `S(Q)` and the paraproduct
//! `Πg = Σ_Q <g>_S/<b_{S^a}>_S (D_Q^{a,1})*(T* b_{S^a})`.

use std::collections::HashMap;

use ndarray::{Array1, Array2, ArrayView2};
use serde::{Deserialize, Serialize};

use crate::cz::operator::{col0, DiscreteOperator};
use crate::cz::TwoGrid;
use crate::grid::CubeId;
use crate::martingale::column;
use crate::measure::pairing;

/// `S(Q)` for every cube of the first grid (`None` when no `R` has `χ_{Q,R} = 1`).
#[derive(Debug, Clone, PartialEq)]
pub struct SMap {
    s: Vec<Vec<Option<CubeId>>>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SMapCheck {
    pub pairs: usize,
    pub equivalence_violations: usize,
    pub monotonicity_violations: usize,
    pub nonempty: usize,
}

impl SMapCheck {
    pub fn pass(&self) -> bool {
        self.equivalence_violations == 0 && self.monotonicity_violations == 0
    }
}

/// `χ_{Q,R}`: `Q` is R-good, `Q ⊂ R` and `l(Q) < 2^{-r} l(R)`.
pub fn chi(two: &TwoGrid, q: CubeId, r: CubeId) -> bool {
    let sq = two.index1().scale(q.level);
    let sr = two.index2().scale(r.level);
    sr - sq > two.params.r as i32
        && two.bounds2(r).contains(&two.bounds1(q))
        && !two.bad12.is_bad_for(q, sq, sr)
}

impl SMap {
    pub fn build(two: &TwoGrid) -> Self {
        let (i1, i2) = (two.index1(), two.index2());
        let s = (0..i1.n_levels())
            .map(|t| {
                (0..i1.level(t).cubes.len())
                    .map(|slot| {
                        let q = CubeId { level: t, slot };
                        let anchor = i1.cube(q).atoms[0];
                        // Candidates are the cubes of D' containing an atom of Q, finest first.
                        (1..i2.n_levels())
                            .map(|u| i2.atom_cube(u, anchor))
                            .find(|&r| chi(two, q, r))
                            .and_then(|r| {
                                i2.children(r)
                                    .into_iter()
                                    .find(|c| i2.cube(*c).atoms.binary_search(&anchor).is_ok())
                            })
                    })
                    .collect()
            })
            .collect();
        Self { s }
    }

    pub fn get(&self, q: CubeId) -> Option<CubeId> {
        self.s[q.level][q.slot]
    }

    /// Exhaustive check of `χ_{Q,R} = 1 ⇔ S(Q) ⊊ R` and of upward monotonicity.
    pub fn verify(&self, two: &TwoGrid) -> SMapCheck {
        let (i1, i2) = (two.index1(), two.index2());
        let mut out = SMapCheck {
            pairs: 0,
            equivalence_violations: 0,
            monotonicity_violations: 0,
            nonempty: 0,
        };
        for q in i1.ids() {
            let s = self.get(q);
            if s.is_some() {
                out.nonempty += 1;
            }
            for r in i2.ids() {
                out.pairs += 1;
                let c = chi(two, q, r);
                let strict = s.is_some_and(|s| r.level > s.level && i2.ancestor(s, r.level) == r);
                if c != strict {
                    out.equivalence_violations += 1;
                }
                if c {
                    if let Some(p) = i2.parent(r) {
                        if !chi(two, q, p) {
                            out.monotonicity_violations += 1;
                        }
                    }
                }
            }
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParaproductReport {
    pub smap: SMapCheck,
    /// `<Πg, f>`.
    pub pairing: f64,
    /// `Σ_Q <g>_S/<b_{S^a}>_S · <b_{S^a}, T D_Q f>`.
    pub direct: f64,
    pub residual: f64,
    /// Largest deviation of `Σ_{R: χ_{Q,R}=1} G_{Q,R}` from its telescoped form.
    pub telescoping_residual: f64,
}

impl ParaproductReport {
    pub fn pass(&self, tol: f64) -> bool {
        self.smap.pass() && self.residual <= tol && self.telescoping_residual <= tol
    }
}

struct Coeff {
    q: CubeId,
    s: CubeId,
    /// `<g>_S / <b_{S^a}>_S`.
    c: Array1<f64>,
}

fn coefficients(two: &TwoGrid, smap: &SMap, g: ArrayView2<f64>) -> Vec<Coeff> {
    let (i1, i2) = (two.index1(), two.index2());
    let c2 = &two.ctx2;
    let mu = c2.measure();
    i1.ids()
        .filter(|q| q.level > 0)
        .filter_map(|q| smap.get(q).map(|s| (q, s)))
        .map(|(q, s)| {
            let atoms = &i2.cube(s).atoms;
            let b = c2.b_of(s);
            let mut gs = Array1::zeros(g.ncols());
            let mut bs = 0.0;
            for &x in atoms {
                gs.scaled_add(mu.weight(x), &g.row(x));
                bs += mu.weight(x) * b[x];
            }
            Coeff { q, s, c: gs / bs }
        })
        .collect()
}

/// `Πg` as a function with the value space of `g`.
pub fn paraproduct(
    op: &DiscreteOperator,
    two: &TwoGrid,
    smap: &SMap,
    g: ArrayView2<f64>,
) -> Array2<f64> {
    let mut tb: HashMap<CubeId, Array1<f64>> = HashMap::new();
    let mut out = Array2::zeros(g.raw_dim());
    for k in coefficients(two, smap, g) {
        let t = tb
            .entry(k.s)
            .or_insert_with(|| op.adjoint_apply_scalar(two.ctx2.b_of(k.s).view()));
        let h = col0(two.ctx1.adapted_diff_local_adjoint(column(t.view()), k.q));
        for (x, mut row) in out.outer_iter_mut().enumerate() {
            if h[x] != 0.0 {
                row.scaled_add(h[x], &k.c);
            }
        }
    }
    out
}

pub fn paraproduct_check(
    op: &DiscreteOperator,
    two: &TwoGrid,
    g: ArrayView2<f64>,
    f: ArrayView2<f64>,
) -> ParaproductReport {
    let smap = SMap::build(two);
    let check = smap.verify(two);
    let mu = op.measure();
    let pi = paraproduct(op, two, &smap, g);
    let lhs = pairing(mu, pi.view(), f);
    let mut direct = 0.0;
    let mut scale = 0.0;
    for k in coefficients(two, &smap, g) {
        let u = op.apply(two.ctx1.adapted_diff_local(f, k.q).view());
        let b = two.ctx2.b_of(k.s);
        let mut v = Array1::zeros(f.ncols());
        for (x, row) in u.outer_iter().enumerate() {
            if b[x] != 0.0 {
                v.scaled_add(mu.weight(x) * b[x], &row);
            }
        }
        let term = k.c.dot(&v);
        direct += term;
        scale += term.abs();
    }
    ParaproductReport {
        smap: check,
        pairing: lhs,
        direct,
        residual: (lhs - direct).abs() / scale.max(f64::MIN_POSITIVE),
        telescoping_residual: telescoping(two, &smap, g),
    }
}

/// `G_{Q,R}` summed over all `R` with `χ_{Q,R} = 1`, against `b_{S^a}<g>_S/<b_{S^a}>_S - b_{R_0}<g>/<b_{R_0}>`.
fn telescoping(two: &TwoGrid, smap: &SMap, g: ArrayView2<f64>) -> f64 {
    let (i1, i2) = (two.index1(), two.index2());
    let c2 = &two.ctx2;
    let mu = c2.measure();
    let n = mu.len();
    let term = |r: CubeId| -> Array2<f64> {
        let atoms = &i2.cube(r).atoms;
        let b = c2.b_of(r);
        let mut gs = Array1::zeros(g.ncols());
        let mut bs = 0.0;
        for &x in atoms {
            gs.scaled_add(mu.weight(x), &g.row(x));
            bs += mu.weight(x) * b[x];
        }
        let c = gs / bs;
        let mut out = Array2::zeros((n, g.ncols()));
        for (x, mut row) in out.outer_iter_mut().enumerate() {
            if b[x] != 0.0 {
                row.scaled_add(b[x], &c);
            }
        }
        out
    };
    let mut cache: HashMap<CubeId, Array2<f64>> = HashMap::new();
    let mut worst = 0.0f64;
    let top = i2.top_id();
    for q in i1.ids() {
        let Some(s) = smap.get(q) else { continue };
        let mut acc: Array2<f64> = Array2::zeros((n, g.ncols()));
        let anchor = i1.cube(q).atoms[0];
        for r in i2.ids().filter(|&r| chi(two, q, r)) {
            let r1 = i2.atom_cube(r.level - 1, anchor);
            let hi = cache.entry(r1).or_insert_with(|| term(r1)).clone();
            let lo = cache.entry(r).or_insert_with(|| term(r)).clone();
            acc = acc + hi - lo;
        }
        let expect = cache.entry(s).or_insert_with(|| term(s)).clone()
            - cache.entry(top).or_insert_with(|| term(top)).clone();
        let scale = expect.iter().fold(1.0f64, |a, v| a.max(v.abs()));
        let dev = (&acc - &expect).iter().fold(0.0f64, |a, v| a.max(v.abs()));
        worst = worst.max(dev / scale);
    }
    worst
}
