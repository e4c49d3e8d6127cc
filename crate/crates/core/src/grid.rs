//! Shifted dyadic systems over a finite scale window.
//!
//! A system is described by shift bits `beta_j` for `k_min <= j < s`. The
//! cumulative offset at scale `k` is `x_k = sum_{k_min <= j < k} beta_j 2^j`
//! and the cubes of scale `k` are `x_k + 2^k (m + [0,1)^N)`. With this
//! convention the children of the cube `m` at scale `k` are the cubes
//! `2m + beta_{k-1} + e`, `e in {0,1}^N`, at scale `k - 1`.

use std::collections::HashMap;

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Result, TbError};
use crate::measure::AtomicMeasure;
use crate::seed;

/// Goodness parameters `gamma`, `r` together with the kernel exponent and
/// growth exponent they are constrained by.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DyadicParams {
    pub gamma: f64,
    pub r: u32,
    pub alpha: f64,
    pub d: f64,
}

impl DyadicParams {
    pub fn new(gamma: f64, r: u32, alpha: f64, d: f64) -> Result<Self> {
        let p = Self { gamma, r, alpha, d };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        let Self { gamma, r, alpha, d } = *self;
        if !(gamma > 0.0 && gamma < 1.0) {
            return Err(TbError::InvalidParams(format!(
                "gamma = {gamma} not in (0,1)"
            )));
        }
        if r == 0 || !(alpha > 0.0) || !(d > 0.0) {
            return Err(TbError::InvalidParams(format!(
                "r = {r}, alpha = {alpha}, d = {d}"
            )));
        }
        if d * gamma / (1.0 - gamma) > alpha / 4.0 + 1e-15 {
            return Err(TbError::InvalidParams(format!(
                "d*gamma/(1-gamma) = {} exceeds alpha/4 = {}",
                d * gamma / (1.0 - gamma),
                alpha / 4.0
            )));
        }
        if gamma > alpha / (2.0 * (d + alpha)) + 1e-15 {
            return Err(TbError::InvalidParams(format!(
                "gamma = {gamma} exceeds alpha/(2(d+alpha)) = {}",
                alpha / (2.0 * (d + alpha))
            )));
        }
        Ok(())
    }

    pub fn with_r(&self, r: u32) -> Self {
        Self { r, ..*self }
    }

    /// `theta(j) = ceil((gamma j + r) / (1 - gamma))`.
    pub fn theta(&self, j: u32) -> u32 {
        let v = (self.gamma * j as f64 + self.r as f64) / (1.0 - self.gamma);
        // Guard against representation error just above an integer.
        let rounded = v.round();
        if (v - rounded).abs() <= 1e-12 * v.max(1.0) {
            rounded as u32
        } else {
            v.ceil() as u32
        }
    }

    /// Upper bound `2N 2^{-(r v n) gamma} / (1 - 2^{-gamma})` on the
    /// probability that a fixed cube is n-bad.
    pub fn bad_probability_bound(&self, n: i64, dim: usize) -> f64 {
        let e = n.max(self.r as i64) as f64;
        2.0 * dim as f64 * 2f64.powf(-e * self.gamma) / (1.0 - 2f64.powf(-self.gamma))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Cube {
    pub scale: i32,
    pub index: Vec<i64>,
}

/// Axis-parallel half-open box `lo + [0, side)^N`.
#[derive(Debug, Clone, PartialEq)]
pub struct Bounds {
    pub lo: Vec<f64>,
    pub side: f64,
}

impl Bounds {
    pub fn new(lo: Vec<f64>, side: f64) -> Self {
        Self { lo, side }
    }

    pub fn dim(&self) -> usize {
        self.lo.len()
    }

    pub fn centre(&self) -> Vec<f64> {
        self.lo.iter().map(|a| a + 0.5 * self.side).collect()
    }

    pub fn contains_point(&self, x: &[f64]) -> bool {
        self.lo
            .iter()
            .zip(x)
            .all(|(a, xi)| *a <= *xi && *xi < a + self.side)
    }

    /// Set inclusion of half-open boxes.
    pub fn contains(&self, other: &Bounds) -> bool {
        self.lo
            .iter()
            .zip(&other.lo)
            .all(|(a, b)| *a <= *b && b + other.side <= a + self.side)
    }

    /// Supremum-norm distance between the closures.
    pub fn dist(&self, other: &Bounds) -> f64 {
        self.lo
            .iter()
            .zip(&other.lo)
            .map(|(a, b)| (b - (a + self.side)).max(a - (b + other.side)).max(0.0))
            .fold(0.0, f64::max)
    }

    /// `dist(self, boundary of other)`.
    pub fn dist_to_boundary(&self, other: &Bounds) -> f64 {
        if other.contains(self) {
            self.lo
                .iter()
                .zip(&other.lo)
                .map(|(a, b)| (a - b).min(b + other.side - (a + self.side)))
                .fold(f64::INFINITY, f64::min)
        } else {
            // Outside or straddling: the distance to the closure, which is zero
            // when the sets meet.
            self.dist(other)
        }
    }

    pub fn intersects(&self, other: &Bounds) -> bool {
        self.lo
            .iter()
            .zip(&other.lo)
            .all(|(a, b)| *a < b + other.side && *b < a + self.side)
    }
}

/// `D(Q,R) = l(Q) + dist(Q,R) + l(R)`.
pub fn long_distance(q: &Bounds, r: &Bounds) -> f64 {
    q.side + q.dist(r) + r.side
}

/// Distance from the closed interval `[a, a+len]` to `offset + side Z`.
pub fn lattice_gap(a: f64, len: f64, offset: f64, side: f64) -> f64 {
    let below = ((a - offset) / side).floor() * side + offset;
    let above = below + side;
    let g = (a - below).min(above - (a + len));
    g.max(0.0)
}

/// Window configuration for building systems.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WindowSpec {
    /// Finest scale; `None` picks the largest scale isolating every atom.
    pub k_min: Option<i32>,
    /// Minimum number of scales `s - k_min`.
    pub min_span: u32,
    pub max_retries: usize,
}

impl Default for WindowSpec {
    fn default() -> Self {
        Self {
            k_min: None,
            min_span: 8,
            max_retries: 64,
        }
    }
}

impl WindowSpec {
    pub fn for_params(params: &DyadicParams) -> Self {
        Self {
            min_span: params.r + 4,
            ..Self::default()
        }
    }
}

/// Largest `k` such that half-open cubes of side `2^k` never contain two atoms.
pub fn isolation_scale(mu: &AtomicMeasure) -> i32 {
    match mu.min_gap() {
        Some(g) => g.log2().floor() as i32,
        None => 0,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SystemDump {
    pub dim: usize,
    pub k_min: i32,
    pub top: i32,
    pub shifts: Vec<Vec<u8>>,
    pub top_cube: Cube,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DyadicSystem {
    dim: usize,
    k_min: i32,
    top: i32,
    shifts: Vec<Vec<u8>>,
    offsets: Vec<Vec<f64>>,
    top_cube: Cube,
}

impl DyadicSystem {
    fn assemble(dim: usize, k_min: i32, shifts: Vec<Vec<u8>>, top_cube: Cube) -> Self {
        let top = k_min + shifts.len() as i32;
        let mut offsets = vec![vec![0.0; dim]];
        for (t, b) in shifts.iter().enumerate() {
            let h = 2f64.powi(k_min + t as i32);
            let prev = offsets.last().expect("non-empty").clone();
            offsets.push(
                prev.iter()
                    .zip(b)
                    .map(|(x, &bi)| x + bi as f64 * h)
                    .collect(),
            );
        }
        Self {
            dim,
            k_min,
            top,
            shifts,
            offsets,
            top_cube,
        }
    }

    /// System with the given shift bits, top cube chosen to contain `mu`.
    pub fn from_shifts(mu: &AtomicMeasure, k_min: i32, shifts: Vec<Vec<u8>>) -> Result<Self> {
        let dim = mu.dim();
        if shifts
            .iter()
            .any(|b| b.len() != dim || b.iter().any(|&v| v > 1))
        {
            return Err(TbError::InvalidParams(
                "shift bits must be 0/1 vectors of length N".into(),
            ));
        }
        let placeholder = Cube {
            scale: k_min + shifts.len() as i32,
            index: vec![0; dim],
        };
        let mut sys = Self::assemble(dim, k_min, shifts, placeholder);
        sys.top_cube = sys
            .covering_top_cube(mu)
            .ok_or(TbError::OutsideWindow { atom: 0 })?;
        Ok(sys)
    }

    /// The standard grid `2^k (m + [0,1)^N)` on `[k_min, top]`.
    pub fn standard(mu: &AtomicMeasure, k_min: i32, top: i32) -> Result<Self> {
        if top < k_min {
            return Err(TbError::InvalidParams("top below k_min".into()));
        }
        Self::from_shifts(mu, k_min, vec![vec![0; mu.dim()]; (top - k_min) as usize])
    }

    /// Random system with per-scale shift bits drawn from labelled seeds, so
    /// that enlarging the window never changes existing bits.
    pub fn build_random(
        seed_value: u64,
        mu: &AtomicMeasure,
        params: &DyadicParams,
        window: WindowSpec,
    ) -> Result<Self> {
        params.validate()?;
        let k_min = window.k_min.unwrap_or_else(|| isolation_scale(mu));
        let diam = mu.diameter();
        let needed = if diam > 0.0 {
            diam.log2().floor() as i32 + 1
        } else {
            k_min
        };
        let start = needed.max(k_min + window.min_span as i32);
        for top in start..=start + window.max_retries as i32 {
            let shifts = (k_min..top)
                .map(|j| random_shift(seed_value, j, mu.dim()))
                .collect();
            let sys = Self::from_shifts(mu, k_min, shifts);
            if let Ok(sys) = sys {
                return Ok(sys);
            }
        }
        Err(TbError::RetryExhausted(window.max_retries))
    }

    /// Extend the window upward to `top`, drawing new bits from `seed_value`.
    pub fn extended_to(&self, seed_value: u64, mu: &AtomicMeasure, top: i32) -> Result<Self> {
        let mut shifts = self.shifts.clone();
        for j in self.top..top {
            shifts.push(random_shift(seed_value, j, self.dim));
        }
        Self::from_shifts(mu, self.k_min, shifts)
    }

    fn covering_top_cube(&self, mu: &AtomicMeasure) -> Option<Cube> {
        let first = self.cube_containing(mu.point(0), self.top);
        (1..mu.len())
            .all(|i| self.cube_containing(mu.point(i), self.top) == first)
            .then_some(first)
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn k_min(&self) -> i32 {
        self.k_min
    }

    pub fn top(&self) -> i32 {
        self.top
    }

    pub fn top_cube(&self) -> &Cube {
        &self.top_cube
    }

    /// Shift bits `beta_j`, `k_min <= j < top`.
    pub fn shift(&self, j: i32) -> &[u8] {
        &self.shifts[(j - self.k_min) as usize]
    }

    pub fn shifts(&self) -> &[Vec<u8>] {
        &self.shifts
    }

    /// Cumulative offset `x_k`; zero at and below `k_min`.
    pub fn offset(&self, k: i32) -> &[f64] {
        let t = (k - self.k_min).clamp(0, self.offsets.len() as i32 - 1);
        &self.offsets[t as usize]
    }

    pub fn side(k: i32) -> f64 {
        2f64.powi(k)
    }

    pub fn bounds(&self, q: &Cube) -> Bounds {
        let h = Self::side(q.scale);
        let x = self.offset(q.scale);
        Bounds::new(
            q.index
                .iter()
                .zip(x)
                .map(|(&m, xi)| xi + h * m as f64)
                .collect(),
            h,
        )
    }

    pub fn cube_containing(&self, x: &[f64], k: i32) -> Cube {
        let h = Self::side(k);
        let off = self.offset(k);
        Cube {
            scale: k,
            index: x
                .iter()
                .zip(off)
                .map(|(xi, o)| ((xi - o) / h).floor() as i64)
                .collect(),
        }
    }

    pub fn parent(&self, q: &Cube) -> Cube {
        let b = self.shift(q.scale);
        Cube {
            scale: q.scale + 1,
            index: q
                .index
                .iter()
                .zip(b)
                .map(|(&m, &bi)| (m - bi as i64).div_euclid(2))
                .collect(),
        }
    }

    pub fn ancestor(&self, q: &Cube, scale: i32) -> Cube {
        let mut c = q.clone();
        while c.scale < scale {
            c = self.parent(&c);
        }
        c
    }

    pub fn children(&self, q: &Cube) -> Vec<Cube> {
        let b = self.shift(q.scale - 1);
        let n = self.dim;
        (0..1usize << n)
            .map(|e| Cube {
                scale: q.scale - 1,
                index: (0..n)
                    .map(|i| 2 * q.index[i] + b[i] as i64 + ((e >> i) & 1) as i64)
                    .collect(),
            })
            .collect()
    }

    /// Distance from `q` to the union of cube boundaries of scale `k`.
    pub fn boundary_gap(&self, q: &Bounds, k: i32) -> f64 {
        let h = Self::side(k);
        let off = self.offset(k);
        q.lo.iter()
            .zip(off)
            .map(|(a, o)| lattice_gap(*a, q.side, *o, h))
            .fold(f64::INFINITY, f64::min)
    }

    pub fn dump(&self) -> SystemDump {
        SystemDump {
            dim: self.dim,
            k_min: self.k_min,
            top: self.top,
            shifts: self.shifts.clone(),
            top_cube: self.top_cube.clone(),
        }
    }

    pub fn from_dump(d: &SystemDump) -> Result<Self> {
        if d.shifts.len() as i32 != d.top - d.k_min || d.top_cube.scale != d.top {
            return Err(TbError::Format("inconsistent system dump".into()));
        }
        Ok(Self::assemble(
            d.dim,
            d.k_min,
            d.shifts.clone(),
            d.top_cube.clone(),
        ))
    }
}

fn random_shift(seed_value: u64, j: i32, dim: usize) -> Vec<u8> {
    let mut rng = seed::rng(seed::derive_indexed(seed_value, "shift", &[j as i64]));
    (0..dim).map(|_| rng.gen_range(0..2u8)).collect()
}

#[derive(Debug, Clone)]
pub struct OccupiedCube {
    pub cube: Cube,
    pub atoms: Vec<usize>,
    pub mass: f64,
    pub parent: Option<usize>,
    pub children: Vec<usize>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct CubeId {
    pub level: usize,
    pub slot: usize,
}

#[derive(Debug, Clone)]
pub struct Level {
    pub cubes: Vec<OccupiedCube>,
    pub atom_cube: Vec<usize>,
    lookup: HashMap<Vec<i64>, usize>,
}

/// Partition of the atoms by occupied cubes at every scale of the window.
/// Level `t` holds scale `k_min + t`.
#[derive(Debug, Clone)]
pub struct CubeIndex {
    k_min: i32,
    levels: Vec<Level>,
}

impl CubeIndex {
    pub fn locate(mu: &AtomicMeasure, sys: &DyadicSystem) -> Result<Self> {
        let top = sys.top();
        let top_b = sys.bounds(sys.top_cube());
        for i in 0..mu.len() {
            if !top_b.contains_point(mu.point(i)) {
                return Err(TbError::OutsideWindow { atom: i });
            }
        }
        let mut current: Vec<Cube> = (0..mu.len())
            .map(|i| sys.cube_containing(mu.point(i), sys.k_min()))
            .collect();
        let mut levels: Vec<Level> = Vec::new();
        for k in sys.k_min()..=top {
            if k > sys.k_min() {
                current = current.iter().map(|c| sys.parent(c)).collect();
            }
            let mut keys: Vec<&Vec<i64>> = current.iter().map(|c| &c.index).collect();
            keys.sort();
            keys.dedup();
            let lookup: HashMap<Vec<i64>, usize> = keys
                .iter()
                .enumerate()
                .map(|(s, k)| ((*k).clone(), s))
                .collect();
            let mut cubes: Vec<OccupiedCube> = keys
                .iter()
                .map(|key| OccupiedCube {
                    cube: Cube {
                        scale: k,
                        index: (*key).clone(),
                    },
                    atoms: Vec::new(),
                    mass: 0.0,
                    parent: None,
                    children: Vec::new(),
                })
                .collect();
            let atom_cube: Vec<usize> = current.iter().map(|c| lookup[&c.index]).collect();
            for (i, &s) in atom_cube.iter().enumerate() {
                cubes[s].atoms.push(i);
                cubes[s].mass += mu.weight(i);
            }
            levels.push(Level {
                cubes,
                atom_cube,
                lookup,
            });
        }
        for t in 1..levels.len() {
            let (lo, hi) = levels.split_at_mut(t);
            let child_level = &mut lo[t - 1];
            let parent_level = &mut hi[0];
            for s in 0..child_level.cubes.len() {
                let a = child_level.cubes[s].atoms[0];
                let p = parent_level.atom_cube[a];
                child_level.cubes[s].parent = Some(p);
                parent_level.cubes[p].children.push(s);
            }
        }
        if levels.last().map(|l| l.cubes.len()) != Some(1) {
            return Err(TbError::OutsideWindow { atom: 0 });
        }
        Ok(Self {
            k_min: sys.k_min(),
            levels,
        })
    }

    pub fn k_min(&self) -> i32 {
        self.k_min
    }

    pub fn top(&self) -> i32 {
        self.k_min + self.levels.len() as i32 - 1
    }

    pub fn n_levels(&self) -> usize {
        self.levels.len()
    }

    pub fn scale(&self, level: usize) -> i32 {
        self.k_min + level as i32
    }

    pub fn level_of(&self, scale: i32) -> usize {
        assert!(
            scale >= self.k_min && scale <= self.top(),
            "scale {scale} outside window"
        );
        (scale - self.k_min) as usize
    }

    pub fn level(&self, t: usize) -> &Level {
        &self.levels[t]
    }

    pub fn cube(&self, id: CubeId) -> &OccupiedCube {
        &self.levels[id.level].cubes[id.slot]
    }

    pub fn top_id(&self) -> CubeId {
        CubeId {
            level: self.levels.len() - 1,
            slot: 0,
        }
    }

    pub fn atom_cube(&self, level: usize, atom: usize) -> CubeId {
        CubeId {
            level,
            slot: self.levels[level].atom_cube[atom],
        }
    }

    pub fn find(&self, cube: &Cube) -> Option<CubeId> {
        if cube.scale < self.k_min || cube.scale > self.top() {
            return None;
        }
        let level = self.level_of(cube.scale);
        self.levels[level]
            .lookup
            .get(&cube.index)
            .map(|&slot| CubeId { level, slot })
    }

    pub fn parent(&self, id: CubeId) -> Option<CubeId> {
        self.cube(id).parent.map(|slot| CubeId {
            level: id.level + 1,
            slot,
        })
    }

    pub fn children(&self, id: CubeId) -> Vec<CubeId> {
        if id.level == 0 {
            return Vec::new();
        }
        self.cube(id)
            .children
            .iter()
            .map(|&slot| CubeId {
                level: id.level - 1,
                slot,
            })
            .collect()
    }

    pub fn ancestor(&self, id: CubeId, level: usize) -> CubeId {
        let mut c = id;
        while c.level < level {
            c = self.parent(c).expect("ancestor inside window");
        }
        c
    }

    /// All occupied cubes, finest level first.
    pub fn ids(&self) -> impl Iterator<Item = CubeId> + '_ {
        self.levels
            .iter()
            .enumerate()
            .flat_map(|(level, l)| (0..l.cubes.len()).map(move |slot| CubeId { level, slot }))
    }

    pub fn is_isolating(&self) -> bool {
        self.levels[0].cubes.iter().all(|c| c.atoms.len() == 1)
    }
}

/// Outcome of a direct badness scan.
#[derive(Debug, Clone, PartialEq)]
pub struct Badness {
    pub bad: bool,
    pub witness: Option<Cube>,
    /// The window does not reach `max(n, r) + 2` scales above `l(Q)`.
    pub window_truncated: bool,
}

/// Whether `q` (with geometry `q_bounds`) is n-bad with respect to `dprime`,
/// scanning every `R` of the window that is at least `2^{max(n,r)}` times
/// larger. Candidates at each scale are the `3^N` cubes around `q`.
pub fn is_n_bad(
    q_bounds: &Bounds,
    q_scale: i32,
    dprime: &DyadicSystem,
    n: i64,
    params: &DyadicParams,
) -> Badness {
    let e = n.max(params.r as i64);
    let first = q_scale as i64 + e;
    let window_truncated = (dprime.top() as i64) < first + 2;
    let lq = q_bounds.side;
    let dim = q_bounds.dim();
    for k in first..=dprime.top() as i64 {
        let k = k as i32;
        let base = dprime.cube_containing(&q_bounds.lo, k);
        let thr = lq.powf(params.gamma) * DyadicSystem::side(k).powf(1.0 - params.gamma);
        for code in 0..3usize.pow(dim as u32) {
            let mut c = code;
            let index: Vec<i64> = base
                .index
                .iter()
                .map(|&m| {
                    let o = (c % 3) as i64 - 1;
                    c /= 3;
                    m + o
                })
                .collect();
            let r = Cube { scale: k, index };
            if q_bounds.dist_to_boundary(&dprime.bounds(&r)) <= thr {
                return Badness {
                    bad: true,
                    witness: Some(r),
                    window_truncated,
                };
            }
        }
    }
    Badness {
        bad: false,
        witness: None,
        window_truncated,
    }
}

/// Badness of every occupied cube of one grid relative to the other grid,
/// summarised by the largest scale offset with a close boundary.
#[derive(Debug, Clone)]
pub struct BadnessTable {
    r: u32,
    max_offset: Vec<Vec<Option<u32>>>,
}

impl BadnessTable {
    pub fn build(
        index: &CubeIndex,
        sys: &DyadicSystem,
        dprime: &DyadicSystem,
        params: &DyadicParams,
    ) -> Self {
        let max_offset = (0..index.n_levels())
            .map(|t| {
                let i = index.scale(t);
                index
                    .level(t)
                    .cubes
                    .iter()
                    .map(|c| {
                        let b = sys.bounds(&c.cube);
                        let thr_base = b.side.powf(params.gamma);
                        let mut best = None;
                        for k in (i + params.r as i32)..=dprime.top() {
                            let thr = thr_base * DyadicSystem::side(k).powf(1.0 - params.gamma);
                            if dprime.boundary_gap(&b, k) <= thr {
                                best = Some((k - i) as u32);
                            }
                        }
                        best
                    })
                    .collect()
            })
            .collect();
        Self {
            r: params.r,
            max_offset,
        }
    }

    pub fn is_n_bad(&self, id: CubeId, n: i64) -> bool {
        let e = n.max(self.r as i64);
        self.max_offset[id.level][id.slot].is_some_and(|m| m as i64 >= e)
    }

    /// `Q in D_i` is R-bad for `R in D'_j` iff it is `(j - i - 1)`-bad.
    pub fn is_bad_for(&self, id: CubeId, q_scale: i32, r_scale: i32) -> bool {
        self.is_n_bad(id, (r_scale - q_scale - 1) as i64)
    }

    pub fn r(&self) -> u32 {
        self.r
    }
}

/// Geometry of the test cube for [`bad_probability_mc`]: unit side with the
/// given lower corner (the law of the random grid is scale invariant).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QShape {
    pub corner: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct McEstimate {
    pub p_hat: f64,
    pub stderr: f64,
    pub trials: usize,
    pub bound: f64,
    /// Number of scales above `max(n, r)` scanned per trial.
    pub depth: u32,
}

/// Monte-Carlo estimate of `P[Q is n-bad]` over independent random grids.
///
/// Offsets are tracked as the pair `(u, 2^k - u)` per axis, accumulated bit
/// by bit, so that lattice positions close to `Q` keep full precision even
/// hundreds of scales above it.
pub fn bad_probability_mc(
    shape: &QShape,
    n: i64,
    params: &DyadicParams,
    trials: usize,
    seed_value: u64,
) -> Result<McEstimate> {
    params.validate()?;
    if trials < 1000 {
        return Err(TbError::InvalidParams(format!(
            "trials = {trials} below 1000"
        )));
    }
    let dim = shape.corner.len();
    let e = n.max(params.r as i64) as i32;
    let depth = ((40.0 / params.gamma).ceil() as i32).min(900 - e).max(8) as u32;
    let below = 40;
    let gamma = params.gamma;
    let hits: Vec<bool> = (0..trials)
        .into_par_iter()
        .map(|t| {
            let mut rng = seed::rng(seed::derive_indexed(seed_value, "bad-trial", &[t as i64]));
            // u = x_k mod 2^k and v = 2^k - u for each axis, starting at 2^{-below}.
            let mut u = vec![0.0f64; dim];
            let mut v = vec![2f64.powi(-below); dim];
            let mut bad = false;
            for j in -below..(e + depth as i32) {
                let k = j + 1;
                for a in 0..dim {
                    let bit = rng.gen_range(0..2u8);
                    let h = 2f64.powi(j);
                    if bit == 1 {
                        u[a] += h;
                    } else {
                        v[a] += h;
                    }
                }
                if k >= e && !bad {
                    // Hyperplanes u + 2^k Z; Q = [lo, lo+1] lies in [0, 2] and k >= 1,
                    // so the candidates are -v, u and u + 2^k.
                    let side = 2f64.powi(k);
                    let thr = side.powf(1.0 - gamma);
                    for a in 0..dim {
                        let lo = shape.corner[a];
                        let hi = lo + 1.0;
                        let at_u = if u[a] < lo {
                            lo - u[a]
                        } else if u[a] > hi {
                            u[a] - hi
                        } else {
                            0.0
                        };
                        let g = (lo + v[a]).min(at_u).min(u[a] + side - hi);
                        if g <= thr {
                            bad = true;
                        }
                    }
                }
            }
            bad
        })
        .collect();
    let count = hits.iter().filter(|&&b| b).count();
    let p = count as f64 / trials as f64;
    Ok(McEstimate {
        p_hat: p,
        stderr: (p * (1.0 - p) / trials as f64).sqrt(),
        trials,
        bound: params.bad_probability_bound(n, dim),
        depth,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::measure::{generate_random_measure, Profile};

    fn params() -> DyadicParams {
        DyadicParams::new(0.1, 3, 1.0, 1.0).unwrap()
    }

    #[test]
    fn theta_examples() {
        let p = params();
        assert_eq!(p.theta(0), 4);
        assert_eq!(p.theta(9), 5);
        for j in 0..200 {
            assert!(p.theta(j + 1) >= p.theta(j));
        }
    }

    #[test]
    fn params_constraints() {
        assert!(DyadicParams::new(0.3, 4, 1.0, 1.0).is_err());
        assert!(DyadicParams::new(0.3, 4, 1.0, 0.5).is_ok());
        assert!(DyadicParams::new(1.0, 4, 1.0, 0.5).is_err());
    }

    #[test]
    fn long_distance_examples() {
        let q = Bounds::new(vec![0.0], 1.0);
        let r = Bounds::new(vec![4.0], 2.0);
        assert_eq!(long_distance(&q, &r), 6.0);
        assert_eq!(long_distance(&q, &q), 2.0);
        let big = Bounds::new(vec![0.0], 4.0);
        assert_eq!(long_distance(&q, &big), 5.0);
    }

    #[test]
    fn lattice_gap_cases() {
        assert_eq!(lattice_gap(0.25, 0.25, 0.0, 1.0), 0.25);
        assert_eq!(lattice_gap(0.0, 0.25, 0.0, 1.0), 0.0);
        assert_eq!(lattice_gap(0.75, 0.5, 0.0, 1.0), 0.0);
        assert_eq!(lattice_gap(0.25, 0.125, 0.125, 0.5), 0.125);
        assert_eq!(lattice_gap(0.5, 0.25, 0.125, 0.5), 0.0);
    }

    #[test]
    fn zero_shifts_give_standard_grid() {
        let mu = generate_random_measure(1, 2, 1.0, 20, Profile::Uniform).unwrap();
        let sys = DyadicSystem::standard(&mu, -6, 0).unwrap();
        let c = Cube {
            scale: -2,
            index: vec![1, 3],
        };
        assert_eq!(sys.bounds(&c), Bounds::new(vec![0.25, 0.75], 0.25));
        assert_eq!(sys.top_cube().index, vec![0, 0]);
    }

    #[test]
    fn parent_child_consistency() {
        let mu = generate_random_measure(2, 2, 1.0, 50, Profile::Uniform).unwrap();
        let p = DyadicParams::new(0.1, 2, 1.0, 2.0).unwrap();
        let sys = DyadicSystem::build_random(5, &mu, &p, WindowSpec::for_params(&p)).unwrap();
        let q = sys.cube_containing(mu.point(3), sys.k_min() + 2);
        let kids = sys.children(&q);
        let qb = sys.bounds(&q);
        for c in &kids {
            assert_eq!(sys.parent(c), q);
            assert!(qb.contains(&sys.bounds(c)));
        }
        let mass: f64 = kids.iter().map(|c| sys.bounds(c).side.powi(2)).sum();
        assert!((mass - qb.side.powi(2)).abs() < 1e-15);
    }

    #[test]
    fn shifts_are_deterministic_and_extend_stably() {
        let mu = generate_random_measure(2, 1, 1.0, 30, Profile::Uniform).unwrap();
        let p = params();
        let a = DyadicSystem::build_random(9, &mu, &p, WindowSpec::for_params(&p)).unwrap();
        let b = DyadicSystem::build_random(9, &mu, &p, WindowSpec::for_params(&p)).unwrap();
        assert_eq!(a, b);
        let c = a.extended_to(9, &mu, a.top() + 3).unwrap();
        assert_eq!(&c.shifts()[..a.shifts().len()], a.shifts());
        let back = DyadicSystem::from_dump(&a.dump()).unwrap();
        assert_eq!(back, a);
    }

    #[test]
    fn shift_frequencies() {
        let trials = 10_000;
        let mut counts = [0usize; 4];
        for t in 0..trials {
            let b = random_shift(77, t as i32, 2);
            counts[(b[0] + 2 * b[1]) as usize] += 1;
        }
        let p = 0.25;
        let sigma = (trials as f64 * p * (1.0 - p)).sqrt();
        for c in counts {
            assert!(
                (c as f64 - trials as f64 * p).abs() <= 3.0 * sigma,
                "{counts:?}"
            );
        }
    }

    #[test]
    fn locate_invariants() {
        let mu = generate_random_measure(4, 2, 1.0, 60, Profile::Clustered).unwrap();
        let p = DyadicParams::new(0.1, 2, 1.0, 2.0).unwrap();
        let sys = DyadicSystem::build_random(4, &mu, &p, WindowSpec::for_params(&p)).unwrap();
        let idx = CubeIndex::locate(&mu, &sys).unwrap();
        assert!(idx.is_isolating());
        let mut prev = usize::MAX;
        for t in 0..idx.n_levels() {
            let l = idx.level(t);
            assert!(l.cubes.len() <= prev);
            prev = l.cubes.len();
            let total: f64 = l.cubes.iter().map(|c| c.mass).sum();
            assert!((total - mu.total_mass()).abs() < 1e-12);
            for c in &l.cubes {
                let b = sys.bounds(&c.cube);
                assert!(c.atoms.iter().all(|&a| b.contains_point(mu.point(a))));
                if t > 0 {
                    let child_mass: f64 = idx
                        .children(CubeId {
                            level: t,
                            slot: idx.find(&c.cube).unwrap().slot,
                        })
                        .iter()
                        .map(|&k| idx.cube(k).mass)
                        .sum();
                    assert!((child_mass - c.mass).abs() <= 1e-14 * c.mass);
                }
            }
        }
        let one = AtomicMeasure::new(1, 1.0, vec![(vec![0.3], 0.5)]).unwrap();
        let sys1 = DyadicSystem::standard(&one, -3, 0).unwrap();
        let idx1 = CubeIndex::locate(&one, &sys1).unwrap();
        assert!((0..idx1.n_levels()).all(|t| idx1.level(t).cubes.len() == 1));
    }

    #[test]
    fn badness_examples() {
        let mu = AtomicMeasure::new(1, 1.0, vec![(vec![0.01], 1.0)]).unwrap();
        let std = DyadicSystem::standard(&mu, -8, 0).unwrap();
        let p = DyadicParams::new(0.1, 2, 1.0, 1.0).unwrap();
        let q = Bounds::new(vec![0.0], 2f64.powi(-5));
        let b = is_n_bad(&q, -5, &std, 3, &p);
        assert!(b.bad);
        assert!(b.witness.unwrap().scale >= -2);

        // Only scale 2^{-1} qualifies; Q sits 0.234 away from {0, 1/2} while the
        // threshold is 2^{-1.5} 2^{-0.7} = 0.218.
        let mu = AtomicMeasure::new(1, 0.5, vec![(vec![0.26], 1.0)]).unwrap();
        let std = DyadicSystem::standard(&mu, -8, -1).unwrap();
        let p = DyadicParams::new(0.3, 2, 1.0, 0.5).unwrap();
        let q = Bounds::new(vec![0.25 - 2f64.powi(-6)], 2f64.powi(-5));
        let g = is_n_bad(&q, -5, &std, 4, &p);
        assert!(!g.bad);
        assert!(g.window_truncated);
        assert!(is_n_bad(&q, -5, &std, 3, &p).bad);
    }

    #[test]
    fn table_matches_direct_scan() {
        let mu = generate_random_measure(8, 1, 1.0, 40, Profile::Uniform).unwrap();
        let p = DyadicParams::new(0.2, 2, 1.0, 1.0).unwrap();
        let w = WindowSpec::for_params(&p);
        let d = DyadicSystem::build_random(1, &mu, &p, w).unwrap();
        let dp = DyadicSystem::build_random(2, &mu, &p, w).unwrap();
        let top = d.top().max(dp.top());
        let d = d.extended_to(1, &mu, top).unwrap();
        let dp = dp.extended_to(2, &mu, top).unwrap();
        let idx = CubeIndex::locate(&mu, &d).unwrap();
        let table = BadnessTable::build(&idx, &d, &dp, &p);
        for id in idx.ids() {
            let c = &idx.cube(id).cube;
            for n in -1..6 {
                let direct = is_n_bad(&d.bounds(c), c.scale, &dp, n, &p);
                assert_eq!(direct.bad, table.is_n_bad(id, n), "{c:?} n={n}");
            }
        }
    }

    #[test]
    fn bad_probability_limits() {
        let shape = QShape { corner: vec![0.37] };
        let huge = DyadicParams::new(0.1, 200, 1.0, 1.0).unwrap();
        let est = bad_probability_mc(&shape, 0, &huge, 2000, 3).unwrap();
        assert!(est.bound < 1e-4);
        assert!(est.p_hat <= est.bound + 3.0 * est.stderr + 1e-3);
        let p = DyadicParams::new(0.1, 2, 1.0, 1.0).unwrap();
        let est = bad_probability_mc(&shape, 0, &p, 2000, 3).unwrap();
        assert!(est.bound > 1.0 && est.p_hat <= est.bound);
    }
}
