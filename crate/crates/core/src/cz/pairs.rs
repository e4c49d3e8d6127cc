//! Classification of cube pairs across two grids and the off-diagonal decay
//! of the martingale matrix `<ψ_R, T φ_Q>`.

use ndarray::Array1;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::cz::kernel::Kernel;
use crate::cz::operator::{col0, DiscreteOperator};
use crate::cz::TwoGrid;
use crate::error::{Result, TbError};
use crate::grid::{long_distance, Bounds, CubeId, DyadicSystem};
use crate::martingale::{column, MartingaleContext};
use crate::measure::AtomicMeasure;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PairClass {
    Separated,
    DeepNested,
    Comparable,
    Bad,
}

impl PairClass {
    pub const ALL: [PairClass; 4] = [
        Self::Separated,
        Self::DeepNested,
        Self::Comparable,
        Self::Bad,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Self::Separated => "separated",
            Self::DeepNested => "deep_nested",
            Self::Comparable => "comparable",
            Self::Bad => "bad",
        }
    }
}

/// Class of a pair with `l(small) <= l(large)`; `small_bad` is whether the
/// small cube is bad for the large one.
pub fn classify_pair(
    small: &Bounds,
    small_scale: i32,
    small_bad: bool,
    large: &Bounds,
    large_scale: i32,
    r: u32,
) -> Result<PairClass> {
    if small_scale > large_scale {
        return Err(TbError::InvalidParams(
            "classify_pair needs l(Q) <= l(R)".into(),
        ));
    }
    if small_bad {
        return Ok(PairClass::Bad);
    }
    let gap = (large_scale - small_scale) as i64;
    let dist = small.dist(large);
    if gap <= r as i64 && dist < small.side {
        return Ok(PairClass::Comparable);
    }
    if gap > r as i64 && large.contains(small) {
        return Ok(PairClass::DeepNested);
    }
    if dist >= small.side {
        return Ok(PairClass::Separated);
    }
    Err(TbError::Geometry(format!(
        "good cube of scale {small_scale} meets the boundary of a cube of scale {large_scale}"
    )))
}

/// Worst menu entry of one checked pair.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecayRecord {
    pub class: PairClass,
    /// Whether the smaller cube belongs to the first grid.
    pub small_in_first: bool,
    pub l_small: f64,
    pub l_large: f64,
    pub long_distance: f64,
    pub value: f64,
    pub bound: f64,
}

impl DecayRecord {
    pub fn margin(&self) -> f64 {
        if self.bound > 0.0 {
            self.value / self.bound
        } else if self.value == 0.0 {
            0.0
        } else {
            f64::INFINITY
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecayReport {
    pub separated: usize,
    pub deep_nested: usize,
    pub violations: usize,
    pub worst_margin_separated: f64,
    pub worst_margin_deep: f64,
    /// Largest `|<ψ,Tφ>| dist^{d+α} / (l(Q)^α ||φ||_1 ||ψ||_1)` over separated pairs.
    pub separated_constant: f64,
    pub records: Vec<DecayRecord>,
}

impl DecayReport {
    pub fn pass(&self) -> bool {
        self.violations == 0
    }
}

/// Sparse function: `(atom, value)` pairs.
type Sparse = Vec<(usize, f64)>;

struct Entry {
    f: Sparse,
    c: f64,
    mass: f64,
}

fn sparse(v: &Array1<f64>) -> Sparse {
    v.iter()
        .enumerate()
        .filter(|(_, x)| **x != 0.0)
        .map(|(i, x)| (i, *x))
        .collect()
}

fn l1(mu: &AtomicMeasure, f: &Sparse) -> f64 {
    f.iter().map(|&(x, v)| v.abs() * mu.weight(x)).sum()
}

fn dot(mu: &AtomicMeasure, f: &Sparse, g: &Array1<f64>) -> f64 {
    f.iter().map(|&(x, v)| v * g[x] * mu.weight(x)).sum()
}

fn restrict(f: &Sparse, atoms: &[usize]) -> Sparse {
    f.iter()
        .filter(|(x, _)| atoms.binary_search(x).is_ok())
        .copied()
        .collect()
}

/// Mean-zero menu functions of a cube: `φ_{Q,i}^a` and `ω_{Q,i}^a` per child.
fn menu(ctx: &MartingaleContext, q: CubeId) -> Vec<(usize, Entry, Entry)> {
    let d = ctx.delta();
    let c_phi = 2.0 / (d * d);
    let c_omega = 1.0 / (d * d) + 1.0 / d.powi(4);
    ctx.index()
        .children(q)
        .into_iter()
        .map(|c| {
            let mass = ctx.index().cube(c).mass;
            (
                c.slot,
                Entry {
                    f: sparse(&ctx.phi(q, c)),
                    c: c_phi,
                    mass,
                },
                Entry {
                    f: sparse(&ctx.omega_local_child(q, c)),
                    c: c_omega,
                    mass,
                },
            )
        })
        .collect()
}

struct Side<'a> {
    ctx: &'a MartingaleContext,
    sys: &'a DyadicSystem,
    first: bool,
}

/// Check every good separated and deep-nested pair against the explicit
/// bounds. Both orientations are covered: the smaller cube may come from
/// either grid, `T` or `T*` acting on its functions.
pub fn decay_bound_check(op: &DiscreteOperator, two: &TwoGrid) -> Result<DecayReport> {
    let a = Side {
        ctx: &two.ctx1,
        sys: &two.sys1,
        first: true,
    };
    let b = Side {
        ctx: &two.ctx2,
        sys: &two.sys2,
        first: false,
    };
    let mut records = orientation(op, two, &a, &b)?;
    records.extend(orientation(op, two, &b, &a)?);
    let mut rep = DecayReport {
        separated: 0,
        deep_nested: 0,
        violations: 0,
        worst_margin_separated: 0.0,
        worst_margin_deep: 0.0,
        separated_constant: 0.0,
        records: Vec::with_capacity(records.len()),
    };
    for (rec, sep_c) in records {
        let m = rec.margin();
        if m > 1.0 {
            rep.violations += 1;
        }
        match rec.class {
            PairClass::Separated => {
                rep.separated += 1;
                rep.worst_margin_separated = rep.worst_margin_separated.max(m);
                rep.separated_constant = rep.separated_constant.max(sep_c);
            }
            PairClass::DeepNested => {
                rep.deep_nested += 1;
                rep.worst_margin_deep = rep.worst_margin_deep.max(m);
            }
            _ => unreachable!(),
        }
        rep.records.push(rec);
    }
    Ok(rep)
}

fn orientation(
    op: &DiscreteOperator,
    two: &TwoGrid,
    small: &Side,
    large: &Side,
) -> Result<Vec<(DecayRecord, f64)>> {
    let kernel = op.kernel();
    let mu = op.measure();
    let (d, alpha) = (kernel.d, kernel.alpha);
    let chain = 2f64.powf(d + alpha + 1.0) * kernel.constant();
    let si = small.ctx.index();
    let li = large.ctx.index();
    let large_ids: Vec<CubeId> = li.ids().filter(|id| id.level > 0).collect();
    let large_menus: Vec<Vec<(usize, Entry, Entry)>> =
        large_ids.par_iter().map(|&l| menu(large.ctx, l)).collect();
    let small_ids: Vec<CubeId> = si.ids().filter(|id| id.level > 0).collect();
    let chunks: Vec<Result<Vec<(DecayRecord, f64)>>> = small_ids
        .par_iter()
        .map(|&s| {
            let s_scale = si.scale(s.level);
            let sb = small.sys.bounds(&si.cube(s).cube);
            let applied: Vec<(Array1<f64>, f64, f64, f64)> = menu(small.ctx, s)
                .into_iter()
                .flat_map(|(_, p, w)| [p, w])
                .filter(|e| !e.f.is_empty())
                .map(|e| {
                    let mut dense = Array1::zeros(mu.len());
                    for &(x, v) in &e.f {
                        dense[x] = v;
                    }
                    let t = if small.first {
                        col0(op.apply(column(dense.view())))
                    } else {
                        col0(op.adjoint_apply(column(dense.view())))
                    };
                    let norm = l1(mu, &e.f);
                    (t, e.c, e.mass, norm)
                })
                .collect();
            let mut out = Vec::new();
            for (pos, &l) in large_ids.iter().enumerate() {
                let l_scale = li.scale(l.level);
                if l_scale < s_scale || (l_scale == s_scale && !small.first) {
                    continue;
                }
                let class = if small.first {
                    two.class_of(s, l)?
                } else {
                    two.class_of(l, s)?
                };
                if !matches!(class, PairClass::Separated | PairClass::DeepNested) {
                    continue;
                }
                let lb = large.sys.bounds(&li.cube(l).cube);
                let (ls, ll) = (sb.side, lb.side);
                let mut worst = (0.0f64, 0.0f64, -1.0f64);
                let mut sep_c = 0.0f64;
                let mut consider = |value: f64, bound: f64| {
                    let m = if bound > 0.0 {
                        value / bound
                    } else if value == 0.0 {
                        0.0
                    } else {
                        f64::INFINITY
                    };
                    if m > worst.2 {
                        worst = (value, bound, m);
                    }
                };
                if class == PairClass::Separated {
                    let big_d = long_distance(&sb, &lb);
                    let dist = sb.dist(&lb);
                    let geo = ls.powf(alpha / 2.0) * ll.powf(alpha / 2.0) / big_d.powf(d + alpha);
                    for (_, p, w) in &large_menus[pos] {
                        for e in [p, w] {
                            if e.f.is_empty() {
                                continue;
                            }
                            let psi_l1 = l1(mu, &e.f);
                            for (t, c, mass, phi_l1) in &applied {
                                let v = dot(mu, &e.f, t).abs();
                                consider(v, chain * e.c * c * geo * e.mass * mass);
                                let base = ls.powf(alpha) / dist.powf(d + alpha) * psi_l1 * phi_l1;
                                if base > 0.0 {
                                    sep_c = sep_c.max(v / base);
                                }
                            }
                        }
                    }
                } else {
                    let ratio = (ls / ll).powf(alpha / 2.0);
                    let l_mass = li.cube(l).mass;
                    let anchor = si.cube(s).atoms[0];
                    let children = li.children(l);
                    let l1_id = *children
                        .iter()
                        .find(|c| li.cube(**c).atoms.binary_search(&anchor).is_ok())
                        .expect("deep cube lies in a child");
                    for &m in children.iter().filter(|&&c| c != l1_id) {
                        let atoms = &li.cube(m).atoms;
                        for (_, p, w) in &large_menus[pos] {
                            for e in [p, w] {
                                let f = restrict(&e.f, atoms);
                                if f.is_empty() {
                                    continue;
                                }
                                for (t, c, mass, _) in &applied {
                                    let v = dot(mu, &f, t).abs();
                                    consider(v, chain * e.c * c * ratio * e.mass * mass / l_mass);
                                }
                            }
                        }
                    }
                    let inside = &li.cube(l1_id).atoms;
                    for owner in [l, l1_id] {
                        let b = large.ctx.b_of(owner);
                        let f: Sparse = sparse(&b)
                            .into_iter()
                            .filter(|(x, _)| inside.binary_search(x).is_err())
                            .collect();
                        for (t, c, mass, _) in &applied {
                            let v = dot(mu, &f, t).abs();
                            consider(v, chain * c * ratio * mass);
                        }
                    }
                }
                out.push((
                    DecayRecord {
                        class,
                        small_in_first: small.first,
                        l_small: ls,
                        l_large: ll,
                        long_distance: long_distance(&sb, &lb),
                        value: worst.0,
                        bound: worst.1,
                    },
                    sep_c,
                ));
            }
            Ok(out)
        })
        .collect();
    let mut all = Vec::new();
    for c in chunks {
        all.extend(c?);
    }
    Ok(all)
}

/// Log-log fit of `|<ψ, Tφ>|` against distance for a mean-zero dipole `φ`
/// in `[0,l)^N` and a point mass `ψ` moved out along the first axis.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SlopeFit {
    pub slope: f64,
    pub expected: f64,
    pub rel_error: f64,
    pub points: Vec<(f64, f64)>,
}

pub fn slope_sweep(kernel: &Kernel, dim: usize, side: f64, distances: &[f64]) -> Result<SlopeFit> {
    if distances.len() < 2 {
        return Err(TbError::InvalidParams("need at least two distances".into()));
    }
    let mut centre = vec![side / 2.0; dim];
    // Offset the off-axis coordinates so that the dipole is not degenerate for
    // directional kernels.
    for c in centre.iter_mut().skip(1) {
        *c += side / 8.0;
    }
    let mut plus = centre.clone();
    let mut minus = centre.clone();
    plus[0] += side / 4.0;
    minus[0] -= side / 4.0;
    let mut points = Vec::with_capacity(distances.len());
    for &t in distances {
        let mut x = vec![side / 2.0; dim];
        x[0] += t;
        let mu = AtomicMeasure::new(
            dim,
            dim as f64,
            vec![(plus.clone(), 1.0), (minus.clone(), 1.0), (x, 1.0)],
        )?;
        let op = DiscreteOperator::new(kernel.clone(), &mu);
        let phi = Array1::from(vec![1.0, -1.0, 0.0]);
        let psi = Array1::from(vec![0.0, 0.0, 1.0]);
        points.push((t, op.matrix_element(psi.view(), phi.view()).abs()));
    }
    let xs: Vec<f64> = points.iter().map(|p| p.0.ln()).collect();
    let ys: Vec<f64> = points.iter().map(|p| p.1.ln()).collect();
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let sxy: f64 = xs.iter().zip(&ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let sxx: f64 = xs.iter().map(|x| (x - mx) * (x - mx)).sum();
    let slope = sxy / sxx;
    let expected = -(kernel.d + kernel.alpha);
    Ok(SlopeFit {
        slope,
        expected,
        rel_error: ((slope - expected) / expected).abs(),
        points,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cube(lo: &[f64], side: f64) -> Bounds {
        Bounds::new(lo.to_vec(), side)
    }

    #[test]
    fn definitions() {
        let big = cube(&[0.0, 0.0], 1.0);
        let small = cube(&[0.25, 0.5], 2f64.powi(-5));
        assert_eq!(
            classify_pair(&small, -5, false, &big, 0, 2).unwrap(),
            PairClass::DeepNested
        );
        assert_eq!(
            classify_pair(&small, -5, true, &big, 0, 2).unwrap(),
            PairClass::Bad
        );
        let twin = cube(&[0.5, 0.25], 1.0);
        assert_eq!(
            classify_pair(&twin, 0, false, &big, 0, 2).unwrap(),
            PairClass::Comparable
        );
        let far = cube(&[3.0, 0.0], 0.5);
        assert_eq!(
            classify_pair(&far, -1, false, &big, 0, 2).unwrap(),
            PairClass::Separated
        );
        let straddle = cube(&[0.99, 0.5], 2f64.powi(-5));
        assert!(matches!(
            classify_pair(&straddle, -5, false, &big, 0, 2),
            Err(TbError::Geometry(_))
        ));
    }

    #[test]
    fn riesz_slope() {
        let k = Kernel::riesz(0.8, 1e-6).unwrap();
        let ds: Vec<f64> = (4..14).map(|j| 2f64.powi(j)).collect();
        let fit = slope_sweep(&k, 1, 1.0, &ds).unwrap();
        assert!(fit.rel_error < 0.1, "{fit:?}");
    }
}
