//! Accretive test-function systems and their stopping layers.
//!
//! A system stores one bounded function `b_Q` per occupied cube of a
//! [`CubeIndex`], as values on the atoms of `Q` (so `supp b_Q ⊂ Q` holds by
//! construction). [`Layers`] are produced by the usual top-down stopping
//! scan: below a layer cube `R`, the maximal cubes with
//! `|∫_Q b_R| < δ² μ(Q)` form the next generation.

use std::collections::BTreeMap;

use ndarray::Array1;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Result, TbError};
use crate::grid::{CubeId, CubeIndex};
use crate::measure::AtomicMeasure;
use crate::seed;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum AccretiveStyle {
    Indicator,
    SignedPerturbation,
    Oscillatory,
}

impl std::str::FromStr for AccretiveStyle {
    type Err = TbError;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "indicator" => Ok(Self::Indicator),
            "signed-perturbation" => Ok(Self::SignedPerturbation),
            "oscillatory" => Ok(Self::Oscillatory),
            other => Err(TbError::InvalidParams(format!(
                "unknown accretive style {other}"
            ))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AccretiveSystem {
    delta: f64,
    /// Measured `sup_Q ||T b_Q||_inf`, filled in by the operator module.
    pub testing_bound: Option<f64>,
    values: Vec<Vec<Vec<f64>>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CubeCheck {
    pub id: CubeId,
    pub support_ok: bool,
    pub sup_ok: bool,
    /// `|<b_Q>_Q| - delta`; negative means the mean bound fails.
    pub mean_margin: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AccretiveReport {
    pub pass: bool,
    pub cubes: Vec<CubeCheck>,
    pub offending: Vec<CubeId>,
}

#[derive(Serialize, Deserialize)]
struct AccretiveEntry {
    scale: i32,
    index: Vec<i64>,
    atoms: Vec<usize>,
    values: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
struct AccretiveFile {
    delta: f64,
    cubes: Vec<AccretiveEntry>,
}

impl AccretiveSystem {
    /// `b_Q = 1_Q` on every occupied cube.
    pub fn indicator(index: &CubeIndex, delta: f64) -> Self {
        let values = (0..index.n_levels())
            .map(|t| {
                index
                    .level(t)
                    .cubes
                    .iter()
                    .map(|c| vec![1.0; c.atoms.len()])
                    .collect()
            })
            .collect();
        Self {
            delta,
            testing_bound: None,
            values,
        }
    }

    /// Build from explicit values; `f(id)` returns the values on the atoms of
    /// the cube in index order, or `None` if missing.
    pub fn from_fn(
        index: &CubeIndex,
        delta: f64,
        mut f: impl FnMut(CubeId) -> Option<Vec<f64>>,
    ) -> Result<Self> {
        check_delta(delta)?;
        let mut values = Vec::with_capacity(index.n_levels());
        for t in 0..index.n_levels() {
            let mut lv = Vec::new();
            for (slot, c) in index.level(t).cubes.iter().enumerate() {
                let id = CubeId { level: t, slot };
                let v = f(id).ok_or_else(|| TbError::MissingTestFunction {
                    scale: c.cube.scale,
                    index: c.cube.index.clone(),
                })?;
                if v.len() != c.atoms.len() {
                    return Err(TbError::Format(format!(
                        "cube {:?} has {} values",
                        c.cube,
                        v.len()
                    )));
                }
                lv.push(v);
            }
            values.push(lv);
        }
        Ok(Self {
            delta,
            testing_bound: None,
            values,
        })
    }

    pub fn delta(&self) -> f64 {
        self.delta
    }

    /// Values of `b_Q` on the atoms of `Q` (index order).
    pub fn values(&self, id: CubeId) -> &[f64] {
        &self.values[id.level][id.slot]
    }

    /// `b_Q` as a function on all atoms.
    pub fn function(&self, index: &CubeIndex, id: CubeId, n_atoms: usize) -> Array1<f64> {
        let mut out = Array1::zeros(n_atoms);
        for (&a, &v) in index.cube(id).atoms.iter().zip(self.values(id)) {
            out[a] = v;
        }
        out
    }

    /// `b_R(x)` for an atom `x` of `R`.
    pub fn value_at(&self, index: &CubeIndex, id: CubeId, atom: usize) -> f64 {
        let pos = index
            .cube(id)
            .atoms
            .binary_search(&atom)
            .expect("atom lies in the cube");
        self.values(id)[pos]
    }

    /// `∫_S b_R dμ` for `S ⊂ R`.
    pub fn integral_over(
        &self,
        index: &CubeIndex,
        mu: &AtomicMeasure,
        r: CubeId,
        s: CubeId,
    ) -> f64 {
        let atoms_r = &index.cube(r).atoms;
        let vals = self.values(r);
        index
            .cube(s)
            .atoms
            .iter()
            .map(|&a| {
                let pos = atoms_r.binary_search(&a).expect("S inside R");
                vals[pos] * mu.weight(a)
            })
            .sum()
    }

    pub fn verify(&self, index: &CubeIndex, mu: &AtomicMeasure) -> AccretiveReport {
        let mut cubes = Vec::new();
        let mut offending = Vec::new();
        for id in index.ids() {
            let c = index.cube(id);
            let vals = self.values(id);
            let support_ok = vals.len() == c.atoms.len();
            let sup_ok = vals.iter().all(|v| v.abs() <= 1.0);
            let integral: f64 = c
                .atoms
                .iter()
                .zip(vals)
                .map(|(&a, v)| mu.weight(a) * v)
                .sum();
            let mean_margin = integral.abs() / c.mass - self.delta;
            if !(support_ok && sup_ok && mean_margin >= -1e-12) {
                offending.push(id);
            }
            cubes.push(CubeCheck {
                id,
                support_ok,
                sup_ok,
                mean_margin,
            });
        }
        AccretiveReport {
            pass: offending.is_empty(),
            cubes,
            offending,
        }
    }

    pub fn generate(
        seed_value: u64,
        mu: &AtomicMeasure,
        index: &CubeIndex,
        delta: f64,
        style: AccretiveStyle,
    ) -> Result<Self> {
        check_delta(delta)?;
        if style == AccretiveStyle::Indicator {
            return Ok(Self::indicator(index, delta));
        }
        let target = delta + 0.02 * (1.0 - delta);
        Self::from_fn(index, delta, |id| {
            let c = index.cube(id);
            let key: Vec<i64> = std::iter::once(c.cube.scale as i64)
                .chain(c.cube.index.iter().copied())
                .collect();
            let mut out = None;
            for attempt in 0..8 {
                let mut rng = seed::rng(seed::derive_indexed(
                    seed_value,
                    &format!("b/{attempt}"),
                    &key,
                ));
                let raw = match style {
                    AccretiveStyle::SignedPerturbation => {
                        signed_profile(&mut rng, index, id, delta)
                    }
                    AccretiveStyle::Oscillatory => oscillatory_profile(&mut rng, mu, index, id),
                    AccretiveStyle::Indicator => unreachable!(),
                };
                if let Some(v) = project(raw, &c.atoms, mu, target) {
                    let flip = style == AccretiveStyle::SignedPerturbation && rng.gen_bool(0.2);
                    out = Some(if flip {
                        v.into_iter().map(|x| -x).collect()
                    } else {
                        v
                    });
                    break;
                }
            }
            out
        })
        .map_err(|e| match e {
            TbError::MissingTestFunction { scale, index } => {
                TbError::Projection(format!("cube at scale {scale}, index {index:?}"))
            }
            other => other,
        })
    }

    pub fn to_fixture_string(&self, index: &CubeIndex) -> String {
        let mut cubes = Vec::new();
        for id in index.ids() {
            let c = index.cube(id);
            cubes.push(AccretiveEntry {
                scale: c.cube.scale,
                index: c.cube.index.clone(),
                atoms: c.atoms.clone(),
                values: self.values(id).to_vec(),
            });
        }
        serde_json::to_string(&AccretiveFile {
            delta: self.delta,
            cubes,
        })
        .expect("serialises")
    }

    pub fn from_fixture_str(index: &CubeIndex, s: &str) -> Result<Self> {
        let file: AccretiveFile = serde_json::from_str(s)?;
        let mut map: BTreeMap<(i32, Vec<i64>), AccretiveEntry> = BTreeMap::new();
        for e in file.cubes {
            map.insert((e.scale, e.index.clone()), e);
        }
        Self::from_fn(index, file.delta, |id| {
            let c = index.cube(id);
            let e = map.get(&(c.cube.scale, c.cube.index.clone()))?;
            // Values on atoms outside the stored list are zero.
            let mut v = vec![0.0; c.atoms.len()];
            for (&a, &x) in e.atoms.iter().zip(&e.values) {
                let pos = c.atoms.binary_search(&a).ok()?;
                v[pos] = x;
            }
            Some(v)
        })
    }
}

fn check_delta(delta: f64) -> Result<()> {
    if delta > 0.0 && delta <= 1.0 {
        Ok(())
    } else {
        Err(TbError::InvalidParams(format!(
            "delta = {delta} not in (0,1]"
        )))
    }
}

/// Near-indicator values with an occasional degenerate sub-cube ("sink")
/// whose average is far below `δ²`, so the stopping scan fires.
fn signed_profile(rng: &mut impl Rng, index: &CubeIndex, id: CubeId, delta: f64) -> Vec<f64> {
    let c = index.cube(id);
    let mut v: Vec<f64> = c
        .atoms
        .iter()
        .map(|_| 1.0 - 0.25 * rng.gen::<f64>())
        .collect();
    if c.atoms.len() == 1 {
        return v;
    }
    // Candidate sinks: strict descendants up to two levels down that carry at
    // most a fraction of the mass.
    let mut candidates = Vec::new();
    for k in index.children(id) {
        candidates.push(k);
        for g in index.children(k) {
            candidates.push(g);
        }
    }
    candidates.retain(|&k| index.cube(k).mass <= 0.5 * (1.0 - delta) * c.mass);
    if !candidates.is_empty() && rng.gen_bool(0.75) {
        let s = candidates[rng.gen_range(0..candidates.len())];
        let amp = 0.4 * delta * delta;
        for &a in &index.cube(s).atoms {
            let pos = c.atoms.binary_search(&a).expect("descendant atoms");
            v[pos] = amp * rng.gen_range(-1.0..1.0);
        }
    }
    v
}

fn oscillatory_profile(
    rng: &mut impl Rng,
    mu: &AtomicMeasure,
    index: &CubeIndex,
    id: CubeId,
) -> Vec<f64> {
    let c = index.cube(id);
    let freq = rng.gen_range(1..4) as f64;
    let phase = rng.gen_range(0.0..std::f64::consts::TAU);
    let dir: Vec<f64> = (0..mu.dim()).map(|_| rng.gen_range(-1.0..1.0)).collect();
    c.atoms
        .iter()
        .map(|&a| {
            let t: f64 = mu.point(a).iter().zip(&dir).map(|(x, w)| x * w).sum();
            (std::f64::consts::TAU * freq * t * 2f64.powi(-c.cube.scale) + phase).cos()
        })
        .collect()
}

/// Mix `v` with the constant of its mean's sign until the normalised mean
/// reaches `target`. Values stay in `[-1, 1]`.
fn project(v: Vec<f64>, atoms: &[usize], mu: &AtomicMeasure, target: f64) -> Option<Vec<f64>> {
    let mass: f64 = atoms.iter().map(|&a| mu.weight(a)).sum();
    let m: f64 = atoms
        .iter()
        .zip(&v)
        .map(|(&a, x)| mu.weight(a) * x)
        .sum::<f64>()
        / mass;
    let s = if m < 0.0 { -1.0 } else { 1.0 };
    let am = m.abs();
    let out: Vec<f64> = if am >= target {
        v
    } else {
        let lambda = (target - am) / (1.0 - am);
        v.into_iter()
            .map(|x| (1.0 - lambda) * x + lambda * s)
            .collect()
    };
    let m2: f64 = atoms
        .iter()
        .zip(&out)
        .map(|(&a, x)| mu.weight(a) * x)
        .sum::<f64>()
        / mass;
    (m2.abs() >= target * (1.0 - 1e-12) && out.iter().all(|x| x.abs() <= 1.0)).then_some(out)
}

/// Stopping layers `D^0 = {Q_0}, D^1, ...` and the ancestor map `Q -> Q^a`.
#[derive(Debug, Clone, PartialEq)]
pub struct Layers {
    pub layers: Vec<Vec<CubeId>>,
    ancestor: Vec<Vec<CubeId>>,
    generation: Vec<Vec<usize>>,
}

impl Layers {
    pub fn build(sys: &AccretiveSystem, mu: &AtomicMeasure, index: &CubeIndex) -> Self {
        let d2 = sys.delta() * sys.delta();
        let top = index.top_id();
        let mut ancestor: Vec<Vec<CubeId>> = (0..index.n_levels())
            .map(|t| vec![top; index.level(t).cubes.len()])
            .collect();
        let mut layers = vec![vec![top]];
        loop {
            let mut next = Vec::new();
            for &r in layers.last().expect("non-empty") {
                // Depth-first scan of the strict subcubes of r.
                let mut stack = index.children(r);
                while let Some(q) = stack.pop() {
                    let integral = sys.integral_over(index, mu, r, q);
                    if integral.abs() < d2 * index.cube(q).mass {
                        next.push(q);
                    } else {
                        ancestor[q.level][q.slot] = r;
                        stack.extend(index.children(q));
                    }
                }
            }
            if next.is_empty() {
                break;
            }
            next.sort();
            for &q in &next {
                ancestor[q.level][q.slot] = q;
            }
            layers.push(next);
        }
        let mut generation: Vec<Vec<usize>> = (0..index.n_levels())
            .map(|t| vec![0; index.level(t).cubes.len()])
            .collect();
        for (j, layer) in layers.iter().enumerate() {
            for &q in layer {
                generation[q.level][q.slot] = j;
            }
        }
        Self {
            layers,
            ancestor,
            generation,
        }
    }

    /// `Q^a`, the smallest layer cube containing `Q`.
    pub fn ancestor(&self, id: CubeId) -> CubeId {
        self.ancestor[id.level][id.slot]
    }

    pub fn is_layer_cube(&self, id: CubeId) -> bool {
        self.ancestor(id) == id
    }

    /// Layer number `j` with `Q^a ∈ D^j`.
    pub fn generation(&self, id: CubeId) -> usize {
        let a = self.ancestor(id);
        self.generation[a.level][a.slot]
    }

    pub fn depth(&self) -> usize {
        self.layers.len()
    }

    pub fn is_trivial(&self) -> bool {
        self.layers.len() == 1
    }

    /// Parent layer cube `(Q^{(1)})^a` of a layer cube other than `Q_0`.
    pub fn layer_parent(&self, index: &CubeIndex, id: CubeId) -> Option<CubeId> {
        index.parent(id).map(|p| self.ancestor(p))
    }

    /// `1 - max` over layer cubes of the next-generation mass ratio.
    pub fn tau_emp(&self, index: &CubeIndex) -> f64 {
        let rows = self.decay_rows(index);
        1.0 - rows
            .iter()
            .filter(|r| r.j == 1)
            .map(|r| r.ratio)
            .fold(0.0, f64::max)
    }

    fn decay_rows(&self, index: &CubeIndex) -> Vec<DecayRow> {
        let mut sums: BTreeMap<(CubeId, usize), f64> = BTreeMap::new();
        for layer in self.layers.iter().skip(1) {
            for &s in layer {
                let mass = index.cube(s).mass;
                let mut j = 0;
                let mut cur = s;
                while let Some(up) = self.layer_parent(index, cur) {
                    j += 1;
                    *sums.entry((up, j)).or_insert(0.0) += mass;
                    cur = up;
                }
            }
        }
        let mut rows = Vec::new();
        for layer in &self.layers {
            for &q in layer {
                let mq = index.cube(q).mass;
                for j in 1..self.layers.len() {
                    let s = sums.get(&(q, j)).copied().unwrap_or(0.0);
                    rows.push(DecayRow {
                        cube: q,
                        j,
                        ratio: s / mq,
                        bound: 0.0,
                    });
                }
            }
        }
        rows
    }

    /// Mass decay of later generations inside each layer cube against
    /// `(1+δ)^{-j}`.
    pub fn decay_report(&self, index: &CubeIndex, delta: f64) -> DecayReport {
        let mut rows = self.decay_rows(index);
        let mut worst = f64::INFINITY;
        for r in &mut rows {
            r.bound = (1.0 + delta).powi(-(r.j as i32));
            worst = worst.min(r.bound - r.ratio);
        }
        let pass = rows.iter().all(|r| r.ratio <= r.bound * (1.0 + 1e-12));
        DecayReport {
            pass,
            rows,
            worst_margin: worst,
        }
    }

    /// `∫_{Q_0} Σ_j Σ_{Q∈D^j} 1_Q dμ`.
    pub fn overlap_mass(&self, index: &CubeIndex) -> f64 {
        self.layers
            .iter()
            .flatten()
            .map(|&q| index.cube(q).mass)
            .sum()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecayRow {
    pub cube: CubeId,
    pub j: usize,
    pub ratio: f64,
    pub bound: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecayReport {
    pub pass: bool,
    pub rows: Vec<DecayRow>,
    pub worst_margin: f64,
}

/// `τ = δ/(1+δ)`.
pub fn tau(delta: f64) -> f64 {
    delta / (1.0 + delta)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::{DyadicParams, DyadicSystem, WindowSpec};
    use crate::measure::{generate_random_measure, Profile};

    fn four_atoms() -> (AtomicMeasure, CubeIndex) {
        let mu = AtomicMeasure::new(
            1,
            1.0,
            [0.1, 0.3, 0.6, 0.9]
                .iter()
                .map(|&x| (vec![x], 1.0))
                .collect(),
        )
        .unwrap();
        let sys = DyadicSystem::standard(&mu, -2, 0).unwrap();
        let idx = CubeIndex::locate(&mu, &sys).unwrap();
        (mu, idx)
    }

    fn four_atom_system(idx: &CubeIndex) -> AccretiveSystem {
        let top = idx.top_id();
        AccretiveSystem::from_fn(idx, 0.5, |id| {
            Some(if id == top {
                vec![1.0, 1.0, 1.0, -0.6]
            } else {
                vec![1.0; idx.cube(id).atoms.len()]
            })
        })
        .unwrap()
    }

    #[test]
    fn indicator_system_never_stops() {
        let (mu, idx) = four_atoms();
        let b = AccretiveSystem::indicator(&idx, 1.0);
        assert!(b.verify(&idx, &mu).pass);
        let layers = Layers::build(&b, &mu, &idx);
        assert!(layers.is_trivial());
        assert!(layers
            .decay_report(&idx, 1.0)
            .rows
            .iter()
            .all(|r| r.ratio == 0.0));
    }

    #[test]
    fn zero_function_fails() {
        let (mu, idx) = four_atoms();
        let top = idx.top_id();
        let b = AccretiveSystem::from_fn(&idx, 0.5, |id| {
            Some(vec![
                if id == top { 0.0 } else { 1.0 };
                idx.cube(id).atoms.len()
            ])
        })
        .unwrap();
        let rep = b.verify(&idx, &mu);
        assert!(!rep.pass);
        assert_eq!(rep.offending, vec![top]);
    }

    #[test]
    fn four_atom_stopping() {
        let (mu, idx) = four_atoms();
        let b = four_atom_system(&idx);
        assert!(b.verify(&idx, &mu).pass);
        let layers = Layers::build(&b, &mu, &idx);
        assert_eq!(layers.depth(), 2);
        let stop = layers.layers[1][0];
        assert_eq!(idx.cube(stop).cube.scale, -1);
        assert_eq!(idx.cube(stop).atoms, vec![2, 3]);
        for leaf in [2usize, 3] {
            let q = idx.atom_cube(0, leaf);
            assert_eq!(layers.ancestor(q), stop);
        }
        assert_eq!(layers.ancestor(idx.atom_cube(0, 0)), idx.top_id());
        let rep = layers.decay_report(&idx, 0.5);
        let row = rep
            .rows
            .iter()
            .find(|r| r.cube == idx.top_id() && r.j == 1)
            .unwrap();
        assert_eq!(row.ratio, 0.5);
        assert!(rep.pass);
    }

    #[test]
    fn fixture_round_trip() {
        let (mu, idx) = four_atoms();
        let b = four_atom_system(&idx);
        let back = AccretiveSystem::from_fixture_str(&idx, &b.to_fixture_string(&idx)).unwrap();
        assert_eq!(b, back);
        let _ = mu;
    }

    #[test]
    fn generated_systems_are_accretive_with_layers() {
        let mu = generate_random_measure(21, 1, 1.0, 64, Profile::Uniform).unwrap();
        let p = DyadicParams::new(0.1, 4, 1.0, 1.0).unwrap();
        let sys = DyadicSystem::build_random(3, &mu, &p, WindowSpec::for_params(&p)).unwrap();
        let idx = CubeIndex::locate(&mu, &sys).unwrap();
        for style in [
            AccretiveStyle::SignedPerturbation,
            AccretiveStyle::Oscillatory,
        ] {
            let b = AccretiveSystem::generate(5, &mu, &idx, 0.4, style).unwrap();
            assert!(b.verify(&idx, &mu).pass, "{style:?}");
            assert_eq!(
                b,
                AccretiveSystem::generate(5, &mu, &idx, 0.4, style).unwrap()
            );
            let layers = Layers::build(&b, &mu, &idx);
            if style == AccretiveStyle::SignedPerturbation {
                assert!(layers.depth() >= 2);
            }
            assert!(layers.decay_report(&idx, 0.4).pass);
            for id in idx.ids() {
                let a = layers.ancestor(id);
                let m = b.integral_over(&idx, &mu, a, id).abs();
                assert!(m >= 0.16 * idx.cube(id).mass * (1.0 - 1e-12));
            }
            let t = tau(0.4);
            assert!(layers.overlap_mass(&idx) <= mu.total_mass() / t);
        }
    }
}
