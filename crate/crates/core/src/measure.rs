//! Atomic measures, lattice value spaces and integration primitives.
//!
//! Functions on a measure are plain `ndarray` arrays: a [`DiscreteFunction`]
//! is an `n_atoms x m` array of lattice vectors, a [`ScalarFunction`] is
//! indexed by atom only. Distances are taken in the supremum norm, balls are
//! closed.

use std::path::Path;

use ndarray::{Array1, Array2, ArrayView1, ArrayView2, Axis};
use rand::seq::index::sample;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Result, TbError};
use crate::seed;

pub type DiscreteFunction = Array2<f64>;
pub type ScalarFunction = Array1<f64>;

/// Supremum-norm distance between two points.
pub fn dist_inf(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y).abs())
        .fold(0.0, f64::max)
}

#[derive(Debug, Clone, PartialEq)]
pub struct AtomicMeasure {
    dim: usize,
    growth_exponent: f64,
    positions: Vec<f64>,
    weights: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
struct MeasureFile {
    dimension: usize,
    growth_exponent: f64,
    atoms: Vec<(Vec<f64>, f64)>,
}

impl AtomicMeasure {
    pub fn new(dim: usize, growth_exponent: f64, atoms: Vec<(Vec<f64>, f64)>) -> Result<Self> {
        if dim == 0 {
            return Err(TbError::InvalidParams("dimension must be positive".into()));
        }
        if !(growth_exponent > 0.0 && growth_exponent <= dim as f64) {
            return Err(TbError::InvalidParams(format!(
                "growth exponent {growth_exponent} outside (0, {dim}]"
            )));
        }
        if atoms.is_empty() {
            return Err(TbError::EmptySupport);
        }
        let mut positions = Vec::with_capacity(atoms.len() * dim);
        let mut weights = Vec::with_capacity(atoms.len());
        for (i, (x, w)) in atoms.iter().enumerate() {
            if x.len() != dim {
                return Err(TbError::InvalidParams(format!(
                    "atom {i} has {} coordinates",
                    x.len()
                )));
            }
            if !(*w > 0.0 && w.is_finite()) {
                return Err(TbError::InvalidParams(format!("atom {i} has weight {w}")));
            }
            if x.iter().any(|c| !c.is_finite()) {
                return Err(TbError::InvalidParams(format!(
                    "atom {i} has a non-finite coordinate"
                )));
            }
            positions.extend_from_slice(x);
            weights.push(*w);
        }
        let mu = Self {
            dim,
            growth_exponent,
            positions,
            weights,
        };
        let mut order: Vec<usize> = (0..mu.len()).collect();
        order.sort_by(|&a, &b| mu.point(a).partial_cmp(mu.point(b)).expect("finite"));
        for w in order.windows(2) {
            if mu.point(w[0]) == mu.point(w[1]) {
                return Err(TbError::InvalidParams(format!(
                    "atoms {} and {} coincide",
                    w[0], w[1]
                )));
            }
        }
        Ok(mu)
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn growth_exponent(&self) -> f64 {
        self.growth_exponent
    }

    pub fn len(&self) -> usize {
        self.weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }

    pub fn point(&self, i: usize) -> &[f64] {
        &self.positions[i * self.dim..(i + 1) * self.dim]
    }

    pub fn weight(&self, i: usize) -> f64 {
        self.weights[i]
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn total_mass(&self) -> f64 {
        self.weights.iter().sum()
    }

    pub fn mass_of(&self, atoms: &[usize]) -> f64 {
        atoms.iter().map(|&i| self.weights[i]).sum()
    }

    /// Copy with every weight multiplied by `lambda`.
    pub fn scaled(&self, lambda: f64) -> Self {
        let mut out = self.clone();
        for w in &mut out.weights {
            *w *= lambda;
        }
        out
    }

    pub fn diameter(&self) -> f64 {
        let mut d: f64 = 0.0;
        for i in 0..self.len() {
            for j in i + 1..self.len() {
                d = d.max(dist_inf(self.point(i), self.point(j)));
            }
        }
        d
    }

    /// Smallest supremum-norm gap between distinct atoms, `None` for one atom.
    pub fn min_gap(&self) -> Option<f64> {
        let mut g = f64::INFINITY;
        for i in 0..self.len() {
            for j in i + 1..self.len() {
                g = g.min(dist_inf(self.point(i), self.point(j)));
            }
        }
        g.is_finite().then_some(g)
    }

    /// Mass of the closed ball `B(x, r)`.
    pub fn ball_mass(&self, x: &[f64], r: f64) -> f64 {
        (0..self.len())
            .filter(|&i| dist_inf(self.point(i), x) <= r)
            .map(|i| self.weights[i])
            .sum()
    }

    /// Dyadic radii used by [`AtomicMeasure::growth_check`]: from the atom
    /// separation up to twice the diameter (radius 1 for a single atom).
    pub fn growth_radii(&self) -> Vec<f64> {
        let lo = self.min_gap().unwrap_or(1.0).log2().ceil() as i32;
        let diam = self.diameter();
        let hi = if diam > 0.0 {
            (2.0 * diam).log2().ceil() as i32
        } else {
            lo
        };
        (lo..=hi.max(lo)).map(|k| 2f64.powi(k)).collect()
    }

    /// Returns `(pass, C_gr)` where `C_gr` is the largest ratio
    /// `mu(B(x, r)) / r^d` over atom centres and the dyadic radius sweep.
    pub fn growth_check(&self) -> Result<(bool, f64)> {
        if self.is_empty() {
            return Err(TbError::EmptySupport);
        }
        let radii = self.growth_radii();
        let d = self.growth_exponent;
        let mut c: f64 = 0.0;
        for i in 0..self.len() {
            let x = self.point(i);
            let mut dists: Vec<(f64, f64)> = (0..self.len())
                .map(|j| (dist_inf(self.point(j), x), self.weights[j]))
                .collect();
            dists.sort_by(|a, b| a.0.partial_cmp(&b.0).expect("finite"));
            let mut acc = 0.0;
            let mut j = 0;
            for &r in &radii {
                while j < dists.len() && dists[j].0 <= r {
                    acc += dists[j].1;
                    j += 1;
                }
                c = c.max(acc / r.powf(d));
            }
        }
        Ok((c <= 1.0 + 1e-12, c))
    }

    pub fn to_fixture_string(&self) -> String {
        let file = MeasureFile {
            dimension: self.dim,
            growth_exponent: self.growth_exponent,
            atoms: (0..self.len())
                .map(|i| (self.point(i).to_vec(), self.weights[i]))
                .collect(),
        };
        serde_json::to_string_pretty(&file).expect("measure serialises")
    }

    pub fn from_fixture_str(s: &str) -> Result<Self> {
        let file: MeasureFile = serde_json::from_str(s)?;
        Self::new(file.dimension, file.growth_exponent, file.atoms)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_fixture_string())?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_fixture_str(&std::fs::read_to_string(path)?)
    }

    /// Test function helpers.
    pub fn zeros(&self, m: usize) -> DiscreteFunction {
        Array2::zeros((self.len(), m))
    }
}

/// Finite-dimensional lattice `(R^m, l^rho)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LatticeSpace {
    pub m: usize,
    pub rho: f64,
}

impl LatticeSpace {
    pub fn new(m: usize, rho: f64) -> Result<Self> {
        if m == 0 || !(rho >= 1.0) {
            return Err(TbError::InvalidParams(format!(
                "lattice (m={m}, rho={rho})"
            )));
        }
        Ok(Self { m, rho })
    }

    pub fn scalar() -> Self {
        Self { m: 1, rho: 2.0 }
    }

    pub fn dual_exponent(&self) -> f64 {
        conjugate(self.rho)
    }

    pub fn dual(&self) -> Self {
        Self {
            m: self.m,
            rho: self.dual_exponent(),
        }
    }

    /// `sum_j |v_j|^rho`, with integer fast paths. Undefined for `rho = inf`.
    fn power_sum(&self, v: &[f64]) -> f64 {
        match self.rho {
            r if r == 1.0 => v.iter().map(|x| x.abs()).sum(),
            r if r == 2.0 => v.iter().map(|x| x * x).sum(),
            r if r == 4.0 => v.iter().map(|x| (x * x) * (x * x)).sum(),
            r => v.iter().map(|x| x.abs().powf(r)).sum(),
        }
    }

    pub fn norm(&self, v: &[f64]) -> f64 {
        if self.m == 1 || v.len() == 1 {
            return v.first().map_or(0.0, |x| x.abs());
        }
        if self.rho.is_infinite() {
            return v.iter().map(|x| x.abs()).fold(0.0, f64::max);
        }
        match self.rho {
            r if r == 1.0 => self.power_sum(v),
            r if r == 2.0 => self.power_sum(v).sqrt(),
            r => self.power_sum(v).powf(1.0 / r),
        }
    }

    /// `||v||^p`, avoiding the intermediate root where possible.
    pub fn norm_pow(&self, v: &[f64], p: f64) -> f64 {
        if self.m == 1 || v.len() == 1 {
            let a = v.first().map_or(0.0, |x| x.abs());
            return pow_fast(a, p);
        }
        if self.rho.is_infinite() {
            return pow_fast(self.norm(v), p);
        }
        let s = self.power_sum(v);
        let e = p / self.rho;
        if e == 1.0 {
            s
        } else if e == 0.5 {
            s.sqrt()
        } else {
            s.powf(e)
        }
    }

    pub fn pairing(phi: &[f64], xi: &[f64]) -> f64 {
        phi.iter().zip(xi).map(|(a, b)| a * b).sum()
    }
}

/// Hoelder conjugate exponent.
pub fn conjugate(p: f64) -> f64 {
    if p == 1.0 {
        f64::INFINITY
    } else if p.is_infinite() {
        1.0
    } else {
        p / (p - 1.0)
    }
}

pub(crate) fn pow_fast(a: f64, p: f64) -> f64 {
    if p == 2.0 {
        a * a
    } else if p == 1.0 {
        a
    } else if p == 3.0 {
        a * a * a
    } else if p == 4.0 {
        (a * a) * (a * a)
    } else {
        a.powf(p)
    }
}

/// `||f||_{L^p(mu; X)}`; `p = inf` gives the essential supremum over atoms.
pub fn lp_norm(mu: &AtomicMeasure, f: ArrayView2<f64>, lattice: &LatticeSpace, p: f64) -> f64 {
    if p.is_infinite() {
        return f
            .outer_iter()
            .map(|row| lattice.norm(&row.to_vec()))
            .fold(0.0, f64::max);
    }
    let mut acc = 0.0;
    for (i, row) in f.outer_iter().enumerate() {
        let row = row.to_vec();
        acc += mu.weight(i) * lattice.norm_pow(&row, p);
    }
    acc.powf(1.0 / p)
}

pub fn lp_norm_scalar(mu: &AtomicMeasure, f: ArrayView1<f64>, p: f64) -> f64 {
    if p.is_infinite() {
        return f.iter().map(|x| x.abs()).fold(0.0, f64::max);
    }
    let acc: f64 = f
        .iter()
        .enumerate()
        .map(|(i, x)| mu.weight(i) * pow_fast(x.abs(), p))
        .sum();
    acc.powf(1.0 / p)
}

pub fn sup_norm(f: ArrayView2<f64>) -> f64 {
    f.iter().map(|x| x.abs()).fold(0.0, f64::max)
}

/// `sum_{x in region} w(x) f(x)`; `region = None` integrates over all atoms.
pub fn integrate(mu: &AtomicMeasure, f: ArrayView2<f64>, region: Option<&[usize]>) -> Array1<f64> {
    let mut out = Array1::zeros(f.ncols());
    match region {
        Some(atoms) => {
            for &i in atoms {
                out.scaled_add(mu.weight(i), &f.row(i));
            }
        }
        None => {
            for (i, row) in f.outer_iter().enumerate() {
                out.scaled_add(mu.weight(i), &row);
            }
        }
    }
    out
}

/// Average over a region, zero when the region carries no mass.
pub fn average(mu: &AtomicMeasure, f: ArrayView2<f64>, region: Option<&[usize]>) -> Array1<f64> {
    let mass = match region {
        Some(a) => mu.mass_of(a),
        None => mu.total_mass(),
    };
    if mass == 0.0 {
        return Array1::zeros(f.ncols());
    }
    integrate(mu, f, region) / mass
}

pub fn integrate_scalar(mu: &AtomicMeasure, f: ArrayView1<f64>, region: Option<&[usize]>) -> f64 {
    match region {
        Some(atoms) => atoms.iter().map(|&i| mu.weight(i) * f[i]).sum(),
        None => f.iter().enumerate().map(|(i, v)| mu.weight(i) * v).sum(),
    }
}

/// `<g, f> = sum_x w(x) <g(x), f(x)>`.
pub fn pairing(mu: &AtomicMeasure, g: ArrayView2<f64>, f: ArrayView2<f64>) -> f64 {
    g.outer_iter()
        .zip(f.outer_iter())
        .enumerate()
        .map(|(i, (a, b))| mu.weight(i) * a.dot(&b))
        .sum()
}

pub fn pairing_scalar(mu: &AtomicMeasure, g: ArrayView1<f64>, f: ArrayView1<f64>) -> f64 {
    g.iter()
        .zip(f.iter())
        .enumerate()
        .map(|(i, (a, b))| mu.weight(i) * a * b)
        .sum()
}

/// Multiply each row of `f` by the scalar function `s`.
pub fn scale_rows(s: ArrayView1<f64>, f: ArrayView2<f64>) -> DiscreteFunction {
    let mut out = f.to_owned();
    for (mut row, &c) in out.axis_iter_mut(Axis(0)).zip(s.iter()) {
        row *= c;
    }
    out
}

/// `s ⊗ xi` for a scalar function and a fixed vector.
pub fn tensor(s: ArrayView1<f64>, xi: ArrayView1<f64>) -> DiscreteFunction {
    let mut out = Array2::zeros((s.len(), xi.len()));
    for (mut row, &c) in out.axis_iter_mut(Axis(0)).zip(s.iter()) {
        row.scaled_add(c, &xi);
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Profile {
    Uniform,
    FractalCantor,
    Clustered,
}

impl std::str::FromStr for Profile {
    type Err = TbError;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "uniform" => Ok(Self::Uniform),
            "fractal-cantor" => Ok(Self::FractalCantor),
            "clustered" => Ok(Self::Clustered),
            other => Err(TbError::InvalidParams(format!("unknown profile {other}"))),
        }
    }
}

/// Generate a random measure on `[0,1)^N` with weights normalised so that the
/// growth constant is at most one.
///
/// Atoms sit at centres of a dyadic lattice, so the separation scale is a
/// power of two and no atom lies on a grid hyperplane of any coarser scale.
pub fn generate_random_measure(
    seed_value: u64,
    dim: usize,
    d: f64,
    atom_count: usize,
    profile: Profile,
) -> Result<AtomicMeasure> {
    if atom_count == 0 {
        return Err(TbError::EmptySupport);
    }
    if dim == 0 {
        return Err(TbError::InvalidParams("dimension must be positive".into()));
    }
    let mut rng = seed::rng_for(seed_value, "measure");
    let points: Vec<Vec<f64>> = match profile {
        Profile::Uniform => {
            let bits = (((4 * atom_count) as f64).log2() / dim as f64)
                .ceil()
                .max(1.0) as u32;
            let side = 1u64 << bits;
            let cells = side.pow(dim as u32) as usize;
            let h = 1.0 / side as f64;
            sample(&mut rng, cells, atom_count)
                .into_iter()
                .map(|c| lattice_centre(c as u64, side, dim, h))
                .collect()
        }
        Profile::FractalCantor => {
            // Two of four sub-intervals per axis and level: dimension N/2.
            let depth = (((2 * atom_count) as f64).log2() / dim as f64)
                .ceil()
                .max(1.0) as u32;
            let leaves = 1u64 << (depth * dim as u32);
            if leaves > usize::MAX as u64 / 2 {
                return Err(TbError::InvalidParams("cantor depth too large".into()));
            }
            let h = 4f64.powi(-(depth as i32));
            sample(&mut rng, leaves as usize, atom_count)
                .into_iter()
                .map(|c| {
                    let mut code = c as u64;
                    let mut x = vec![0.5 * h; dim];
                    for level in (1..=depth).rev() {
                        for xi in x.iter_mut() {
                            let digit = if code & 1 == 1 { 3.0 } else { 0.0 };
                            *xi += digit * 4f64.powi(-(level as i32));
                            code >>= 1;
                        }
                    }
                    x
                })
                .collect()
        }
        Profile::Clustered => {
            let bits = (((16 * atom_count) as f64).log2() / dim as f64)
                .ceil()
                .max(2.0) as u32;
            let side = 1i64 << bits;
            let h = 1.0 / side as f64;
            let clusters = (atom_count / 16).max(1);
            let centres: Vec<Vec<f64>> = (0..clusters)
                .map(|_| (0..dim).map(|_| rng.gen_range(0.15..0.85)).collect())
                .collect();
            let spread = 0.08;
            let mut taken = std::collections::BTreeSet::new();
            let mut out = Vec::with_capacity(atom_count);
            let mut attempts = 0usize;
            while out.len() < atom_count {
                attempts += 1;
                if attempts > 200 * atom_count + 1000 {
                    return Err(TbError::Rescale(format!(
                        "clustered profile could not place {atom_count} distinct atoms \
                         ({} placed on a {side}^{dim} lattice)",
                        out.len()
                    )));
                }
                let c = &centres[rng.gen_range(0..clusters)];
                let cell: Vec<i64> = c
                    .iter()
                    .map(|&ci| {
                        let g: f64 = (0..4).map(|_| rng.gen_range(-1.0..1.0)).sum::<f64>() * 0.5;
                        (((ci + spread * g) / h).floor() as i64).clamp(0, side - 1)
                    })
                    .collect();
                if taken.insert(cell.clone()) {
                    out.push(cell.iter().map(|&k| (k as f64 + 0.5) * h).collect());
                }
            }
            out
        }
    };
    let atoms: Vec<(Vec<f64>, f64)> = points
        .into_iter()
        .map(|x| (x, rng.gen_range(0.5..1.5)))
        .collect();
    let raw = AtomicMeasure::new(dim, d, atoms)?;
    let (_, c) = raw.growth_check()?;
    if !(c.is_finite() && c > 0.0) {
        return Err(TbError::Rescale(format!("growth constant {c}")));
    }
    let mu = raw.scaled(1.0 / (c * (1.0 + 1e-14)));
    let (ok, c2) = mu.growth_check()?;
    if !ok || c2 > 1.0 {
        return Err(TbError::Rescale(format!("rescaled growth constant {c2}")));
    }
    Ok(mu)
}

fn lattice_centre(mut code: u64, side: u64, dim: usize, h: f64) -> Vec<f64> {
    let mut x = Vec::with_capacity(dim);
    for _ in 0..dim {
        x.push(((code % side) as f64 + 0.5) * h);
        code /= side;
    }
    x
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use ndarray::array;

    fn unit(dim: usize, d: f64, atoms: &[(&[f64], f64)]) -> AtomicMeasure {
        AtomicMeasure::new(
            dim,
            d,
            atoms.iter().map(|(x, w)| (x.to_vec(), *w)).collect(),
        )
        .unwrap()
    }

    #[test]
    fn ball_mass_examples() {
        let mu = unit(2, 1.0, &[(&[0.0, 0.0], 1.0)]);
        assert_eq!(mu.ball_mass(&[0.0, 0.0], 1.0), 1.0);
        assert_eq!(mu.ball_mass(&[2.0, 0.0], 1.0), 0.0);
        let mu = unit(1, 1.0, &[(&[0.0], 1.0), (&[0.5], 3.0)]);
        assert_eq!(mu.ball_mass(&[0.0], 0.5), 4.0);
    }

    #[test]
    fn growth_check_examples() {
        let one = unit(1, 1.0, &[(&[0.0], 1.0)]);
        assert_eq!(one.growth_check().unwrap(), (true, 1.0));
        let two = unit(1, 1.0, &[(&[0.0], 1.0), (&[1.0], 1.0)]);
        assert_eq!(two.growth_check().unwrap(), (false, 2.0));
        let half = two.scaled(0.5);
        assert_relative_eq!(half.growth_check().unwrap().1, 1.0);
    }

    #[test]
    fn rejects_bad_atoms() {
        assert!(AtomicMeasure::new(1, 1.0, vec![]).is_err());
        assert!(AtomicMeasure::new(1, 1.0, vec![(vec![0.0], 0.0)]).is_err());
        assert!(AtomicMeasure::new(1, 1.0, vec![(vec![0.0], 1.0), (vec![0.0], 2.0)]).is_err());
        assert!(AtomicMeasure::new(1, 1.5, vec![(vec![0.0], 1.0)]).is_err());
    }

    #[test]
    fn integrate_and_average() {
        let mu = unit(1, 1.0, &[(&[0.1], 1.0), (&[0.3], 3.0)]);
        let f = array![[2.0], [6.0]];
        assert_eq!(average(&mu, f.view(), None)[0], 5.0);
        let c = array![[1.5, -2.0], [1.5, -2.0]];
        assert_eq!(integrate(&mu, c.view(), None), array![6.0, -8.0]);
        assert_eq!(average(&mu, f.view(), Some(&[])), array![0.0]);
    }

    #[test]
    fn fixture_round_trip_is_bit_exact() {
        let mu = generate_random_measure(11, 2, 1.5, 40, Profile::Clustered).unwrap();
        let back = AtomicMeasure::from_fixture_str(&mu.to_fixture_string()).unwrap();
        assert_eq!(mu, back);
    }

    #[test]
    fn generated_measures_pass_growth() {
        for (seed, dim, d, n, profile) in [
            (7, 1, 1.0, 1, Profile::Uniform),
            (3, 2, 1.0, 64, Profile::FractalCantor),
            (5, 1, 1.0, 200, Profile::Uniform),
            (9, 2, 2.0, 100, Profile::Clustered),
        ] {
            let mu = generate_random_measure(seed, dim, d, n, profile).unwrap();
            assert_eq!(mu.len(), n);
            let (ok, c) = mu.growth_check().unwrap();
            assert!(ok && c <= 1.0, "{profile:?}: {c}");
            for i in 0..mu.len() {
                assert!(mu.point(i).iter().all(|&x| (0.0..1.0).contains(&x)));
            }
        }
        let one = generate_random_measure(7, 1, 1.0, 1, Profile::Uniform).unwrap();
        assert!(one.weight(0) <= 1.0);
        assert_eq!(
            generate_random_measure(4, 2, 1.0, 30, Profile::Uniform).unwrap(),
            generate_random_measure(4, 2, 1.0, 30, Profile::Uniform).unwrap()
        );
    }

    #[test]
    fn lattice_norms_and_duality() {
        let l = LatticeSpace::new(3, 4.0).unwrap();
        assert_relative_eq!(l.dual_exponent(), 4.0 / 3.0);
        let v = [1.0, -2.0, 0.5];
        assert_relative_eq!(l.norm(&v), (1.0f64 + 16.0 + 0.0625).powf(0.25));
        assert_relative_eq!(
            l.norm_pow(&v, 3.0),
            l.norm(&v).powi(3),
            max_relative = 1e-14
        );
        let inf = LatticeSpace::new(3, f64::INFINITY).unwrap();
        assert_eq!(inf.norm(&v), 2.0);
        assert_eq!(inf.dual_exponent(), 1.0);
    }
}
