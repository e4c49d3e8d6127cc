//! Adapted conditional expectations and martingale differences.
//!
//! With `b_k^a = Σ_{Q∈D_k} 1_Q b_{Q^a}` the adapted expectation is
//! `E_k^a f = b_k^a E_k f / E_k b_k^a` and `D_k^a = E_{k-1}^a - E_k^a`.
//! Every operator here is block diagonal over the cubes of one or two
//! consecutive scales, so applications cost `O(n m)` per scale. Dense matrix
//! forms are available for transposition checks.

use ndarray::{Array1, Array2, ArrayView1, ArrayView2, Axis};

use crate::accretive::{AccretiveSystem, Layers};
use crate::error::{Result, TbError};
use crate::grid::{CubeId, CubeIndex};
use crate::measure::AtomicMeasure;

#[derive(Debug, Clone)]
pub struct MartingaleContext {
    mu: AtomicMeasure,
    index: CubeIndex,
    b: AccretiveSystem,
    layers: Layers,
    /// `b_k^a` at every atom, per level.
    ba: Vec<Vec<f64>>,
    /// `E_k b_k^a` at every atom, per level.
    eba: Vec<Vec<f64>>,
    /// Layer cubes other than `Q_0`, per level and slot.
    stop: Vec<Vec<bool>>,
}

/// Output of [`MartingaleContext::reconstruct`].
#[derive(Debug, Clone)]
pub struct Reconstruction {
    pub top: Array2<f64>,
    /// `(k, D_k^a f)` for `k_min < k <= s`.
    pub diffs: Vec<(i32, Array2<f64>)>,
    /// `||f - top - Σ_k D_k^a f||_inf`.
    pub residual: f64,
}

impl MartingaleContext {
    pub fn new(
        mu: &AtomicMeasure,
        index: &CubeIndex,
        b: &AccretiveSystem,
        layers: &Layers,
    ) -> Result<Self> {
        if !index.is_isolating() {
            return Err(TbError::InvalidParams(
                "atoms are not isolated at the finest scale".into(),
            ));
        }
        let n = mu.len();
        let d2 = b.delta() * b.delta();
        let mut ba = Vec::with_capacity(index.n_levels());
        let mut eba = Vec::with_capacity(index.n_levels());
        let mut stop = Vec::with_capacity(index.n_levels());
        let top = index.top_id();
        for t in 0..index.n_levels() {
            let level = index.level(t);
            let mut bv = vec![0.0; n];
            let mut ev = vec![0.0; n];
            let mut sv = vec![false; level.cubes.len()];
            for (slot, c) in level.cubes.iter().enumerate() {
                let id = CubeId { level: t, slot };
                let a = layers.ancestor(id);
                sv[slot] = a == id && id != top;
                let mut integral = 0.0;
                for &x in &c.atoms {
                    let v = b.value_at(index, a, x);
                    bv[x] = v;
                    integral += v * mu.weight(x);
                }
                let avg = integral / c.mass;
                for &x in &c.atoms {
                    if avg.abs() < 0.5 * d2 {
                        return Err(TbError::Denominator {
                            atom: x,
                            scale: index.scale(t),
                            value: avg,
                        });
                    }
                    ev[x] = avg;
                }
            }
            ba.push(bv);
            eba.push(ev);
            stop.push(sv);
        }
        Ok(Self {
            mu: mu.clone(),
            index: index.clone(),
            b: b.clone(),
            layers: layers.clone(),
            ba,
            eba,
            stop,
        })
    }

    pub fn measure(&self) -> &AtomicMeasure {
        &self.mu
    }

    pub fn index(&self) -> &CubeIndex {
        &self.index
    }

    pub fn accretive(&self) -> &AccretiveSystem {
        &self.b
    }

    pub fn layers(&self) -> &Layers {
        &self.layers
    }

    pub fn delta(&self) -> f64 {
        self.b.delta()
    }

    pub fn n_atoms(&self) -> usize {
        self.mu.len()
    }

    pub fn k_min(&self) -> i32 {
        self.index.k_min()
    }

    pub fn top(&self) -> i32 {
        self.index.top()
    }

    /// Scales `k` with a difference operator: `k_min < k <= s`.
    pub fn diff_scales(&self) -> std::ops::RangeInclusive<i32> {
        self.k_min() + 1..=self.top()
    }

    fn level(&self, k: i32) -> usize {
        self.index.level_of(k)
    }

    /// `b_k^a` as a function.
    pub fn ba(&self, k: i32) -> Array1<f64> {
        Array1::from(self.ba[self.level(k)].clone())
    }

    /// `E_k b_k^a` as a function.
    pub fn eba(&self, k: i32) -> Array1<f64> {
        Array1::from(self.eba[self.level(k)].clone())
    }

    /// `b_{Q^a}` on the atoms of all of `Q^a` (not only `Q`), as a function.
    pub fn b_of(&self, id: CubeId) -> Array1<f64> {
        self.b.function(&self.index, id, self.n_atoms())
    }

    fn cube_sums(&self, t: usize, f: ArrayView2<f64>) -> Array2<f64> {
        let level = self.index.level(t);
        let mut sums = Array2::zeros((level.cubes.len(), f.ncols()));
        for (x, row) in f.outer_iter().enumerate() {
            sums.row_mut(level.atom_cube[x])
                .scaled_add(self.mu.weight(x), &row);
        }
        sums
    }

    fn expectation_level(&self, t: usize, f: ArrayView2<f64>) -> Array2<f64> {
        let level = self.index.level(t);
        let mut sums = self.cube_sums(t, f);
        for (mut row, c) in sums.axis_iter_mut(Axis(0)).zip(&level.cubes) {
            row /= c.mass;
        }
        let mut out = Array2::zeros(f.raw_dim());
        for (x, mut row) in out.axis_iter_mut(Axis(0)).enumerate() {
            row.assign(&sums.row(level.atom_cube[x]));
        }
        out
    }

    /// `E_k f = Σ_{Q∈D_k} 1_Q <f>_Q`.
    pub fn expectation(&self, f: ArrayView2<f64>, k: i32) -> Array2<f64> {
        self.expectation_level(self.level(k), f)
    }

    /// `D_k f = E_{k-1} f - E_k f`.
    pub fn diff(&self, f: ArrayView2<f64>, k: i32) -> Array2<f64> {
        self.expectation(f, k - 1) - self.expectation(f, k)
    }

    fn adapted_level(&self, t: usize, f: ArrayView2<f64>) -> Array2<f64> {
        let mut e = self.expectation_level(t, f);
        for (x, mut row) in e.axis_iter_mut(Axis(0)).enumerate() {
            row *= self.ba[t][x] / self.eba[t][x];
        }
        e
    }

    /// `E_k^a f = b_k^a E_k f / E_k b_k^a`.
    pub fn adapted_expectation(&self, f: ArrayView2<f64>, k: i32) -> Array2<f64> {
        self.adapted_level(self.level(k), f)
    }

    /// `D_k^a f = E_{k-1}^a f - E_k^a f`; zero for `k > s`.
    pub fn adapted_diff(&self, f: ArrayView2<f64>, k: i32) -> Array2<f64> {
        if k > self.top() {
            return Array2::zeros(f.raw_dim());
        }
        let t = self.level(k);
        assert!(t > 0, "no difference at the finest scale");
        self.adapted_level(t - 1, f) - self.adapted_level(t, f)
    }

    /// `D_Q^a f = 1_Q D_k^a f` for `Q ∈ D_k`, computed from `f|_Q` only.
    pub fn adapted_diff_local(&self, f: ArrayView2<f64>, q: CubeId) -> Array2<f64> {
        let mut out = Array2::zeros(f.raw_dim());
        let vals = self.adapted_diff_on(f, q);
        for (&x, row) in self.index.cube(q).atoms.iter().zip(vals.outer_iter()) {
            out.row_mut(x).assign(&row);
        }
        out
    }

    /// Values of `D_Q^a f` on the atoms of `Q` (index order).
    pub fn adapted_diff_on(&self, f: ArrayView2<f64>, q: CubeId) -> Array2<f64> {
        assert!(q.level > 0, "no difference at the finest scale");
        let cube = self.index.cube(q);
        let m = f.ncols();
        let t = q.level;
        let avg_q = self.average_on(&cube.atoms, f);
        let mut out = Array2::zeros((cube.atoms.len(), m));
        for child in self.index.children(q) {
            let c = self.index.cube(child);
            let avg_c = self.average_on(&c.atoms, f);
            for &x in &c.atoms {
                let pos = cube.atoms.binary_search(&x).expect("child atoms");
                let lo = self.ba[t - 1][x] / self.eba[t - 1][x];
                let hi = self.ba[t][x] / self.eba[t][x];
                let mut row = out.row_mut(pos);
                row.scaled_add(lo, &avg_c);
                row.scaled_add(-hi, &avg_q);
            }
        }
        out
    }

    fn average_on(&self, atoms: &[usize], f: ArrayView2<f64>) -> Array1<f64> {
        let mut acc = Array1::zeros(f.ncols());
        let mut mass = 0.0;
        for &x in atoms {
            acc.scaled_add(self.mu.weight(x), &f.row(x));
            mass += self.mu.weight(x);
        }
        if mass == 0.0 {
            acc
        } else {
            acc / mass
        }
    }

    /// `φ_{Q,i}^a` for the child `Q_i` of `Q` (zero when `Q_i` is empty, which
    /// cannot be represented by a [`CubeId`] and is therefore not offered).
    pub fn phi(&self, q: CubeId, child: CubeId) -> Array1<f64> {
        debug_assert_eq!(self.index.parent(child), Some(q));
        let n = self.n_atoms();
        let t = q.level;
        let cq = self.index.cube(q);
        let ci = self.index.cube(child);
        let ratio = ci.mass / cq.mass;
        let mut out = Array1::zeros(n);
        for &x in &cq.atoms {
            out[x] -= ratio * self.ba[t][x] / self.eba[t][x];
        }
        for &x in &ci.atoms {
            out[x] += self.ba[t - 1][x] / self.eba[t - 1][x];
        }
        out
    }

    /// Indicator of `{b_k^a ≠ b_{k+1}^a}`, i.e. the layer cubes of `D_k` other
    /// than `Q_0`.
    pub fn chi(&self, k: i32) -> Array1<f64> {
        let t = self.level(k);
        let level = self.index.level(t);
        Array1::from_iter((0..self.n_atoms()).map(|x| {
            if self.stop[t][level.atom_cube[x]] {
                1.0
            } else {
                0.0
            }
        }))
    }

    /// `{b_{k-1}^a ≠ b_k^a}` evaluated pointwise from the cached functions.
    pub fn chi_pointwise(&self, k: i32) -> Array1<f64> {
        let t = self.level(k);
        Array1::from_iter((0..self.n_atoms()).map(|x| {
            let a = self.layers.ancestor(self.index.atom_cube(t - 1, x));
            let b = self.layers.ancestor(self.index.atom_cube(t, x));
            if a != b {
                1.0
            } else {
                0.0
            }
        }))
    }

    pub fn is_stop(&self, id: CubeId) -> bool {
        self.stop[id.level][id.slot]
    }

    /// `ω_k^a = 1_{χ_{k-1}} (b_k^a/E_k b_k^a - b_{k-1}^a/E_{k-1}b_{k-1}^a · E_{k-1}b_k^a/E_k b_k^a)`.
    pub fn omega(&self, k: i32) -> Array1<f64> {
        let t = self.level(k);
        let chi = self.chi(k - 1);
        let bk = Array2::from_shape_vec((self.n_atoms(), 1), self.ba[t].clone()).expect("shape");
        let e_prev_bk = self.expectation_level(t - 1, bk.view());
        Array1::from_iter((0..self.n_atoms()).map(|x| {
            if chi[x] == 0.0 {
                return 0.0;
            }
            let q = self.ba[t][x] / self.eba[t][x];
            let p = self.ba[t - 1][x] / self.eba[t - 1][x];
            q - p * e_prev_bk[[x, 0]] / self.eba[t][x]
        }))
    }

    /// `ω_Q^a = 1_Q ω_k^a`.
    pub fn omega_local(&self, q: CubeId) -> Array1<f64> {
        self.restrict(
            self.omega(self.index.scale(q.level)),
            &self.index.cube(q).atoms,
        )
    }

    /// `ω_{Q,i}^a = 1_{Q_i} ω_Q^a`.
    pub fn omega_local_child(&self, q: CubeId, child: CubeId) -> Array1<f64> {
        self.restrict(
            self.omega(self.index.scale(q.level)),
            &self.index.cube(child).atoms,
        )
    }

    fn restrict(&self, f: Array1<f64>, atoms: &[usize]) -> Array1<f64> {
        let mut out = Array1::zeros(f.len());
        for &x in atoms {
            out[x] = f[x];
        }
        out
    }

    /// `A_k g = E_k(b_k^a g) / E_k b_k^a`, the adjoint of `E_k^a`.
    pub fn adjoint_expectation(&self, g: ArrayView2<f64>, k: i32) -> Array2<f64> {
        let t = self.level(k);
        let mut bg = g.to_owned();
        for (x, mut row) in bg.axis_iter_mut(Axis(0)).enumerate() {
            row *= self.ba[t][x];
        }
        let mut e = self.expectation_level(t, bg.view());
        for (x, mut row) in e.axis_iter_mut(Axis(0)).enumerate() {
            row /= self.eba[t][x];
        }
        e
    }

    /// `(D_k^a)^* g = A_{k-1} g - A_k g`.
    pub fn adapted_diff_adjoint(&self, g: ArrayView2<f64>, k: i32) -> Array2<f64> {
        self.adjoint_expectation(g, k - 1) - self.adjoint_expectation(g, k)
    }

    /// `(D_Q^a)^* g = (D_k^a)^*(1_Q g)`.
    pub fn adapted_diff_local_adjoint(&self, g: ArrayView2<f64>, q: CubeId) -> Array2<f64> {
        let mut gq = Array2::zeros(g.raw_dim());
        for &x in &self.index.cube(q).atoms {
            gq.row_mut(x).assign(&g.row(x));
        }
        self.adapted_diff_adjoint(gq.view(), self.index.scale(q.level))
    }

    /// `E_s^a f = b_{Q_0} <f> / <b_{Q_0}>`.
    pub fn top_term(&self, f: ArrayView2<f64>) -> Array2<f64> {
        self.adapted_expectation(f, self.top())
    }

    pub fn reconstruct(&self, f: ArrayView2<f64>) -> Reconstruction {
        let top = self.top_term(f);
        let mut rest = f.to_owned() - &top;
        let mut diffs = Vec::new();
        for k in self.diff_scales() {
            let d = self.adapted_diff(f, k);
            rest -= &d;
            diffs.push((k, d));
        }
        let residual = rest.iter().map(|x| x.abs()).fold(0.0, f64::max);
        Reconstruction {
            top,
            diffs,
            residual,
        }
    }

    /// `E_{σ_n} f = Σ_{Q∈D^n} 1_Q <f>_Q`.
    pub fn layer_expectation(&self, n: usize, f: ArrayView2<f64>) -> Array2<f64> {
        let mut out = Array2::zeros(f.raw_dim());
        if let Some(layer) = self.layers.layers.get(n) {
            for &q in layer {
                let atoms = &self.index.cube(q).atoms;
                let avg = self.average_on(atoms, f);
                for &x in atoms {
                    out.row_mut(x).assign(&avg);
                }
            }
        }
        out
    }

    /// Dense `n x n` matrix of a scalar linear operator, column `y` = image of
    /// the indicator of atom `y`.
    pub fn dense<F>(&self, op: F) -> Array2<f64>
    where
        F: Fn(ArrayView2<f64>) -> Array2<f64>,
    {
        let n = self.n_atoms();
        let mut m = Array2::zeros((n, n));
        for y in 0..n {
            let mut e = Array2::zeros((n, 1));
            e[[y, 0]] = 1.0;
            let col = op(e.view());
            m.column_mut(y).assign(&col.column(0));
        }
        m
    }

    /// Adjoint of a dense operator with respect to `<g,f> = Σ w g f`:
    /// `M*_{xy} = M_{yx} w(y) / w(x)`.
    pub fn weighted_transpose(&self, m: &Array2<f64>) -> Array2<f64> {
        let n = self.n_atoms();
        Array2::from_shape_fn((n, n), |(x, y)| {
            m[[y, x]] * self.mu.weight(y) / self.mu.weight(x)
        })
    }
}

/// Column view of a scalar function.
pub fn column(f: ArrayView1<f64>) -> ArrayView2<f64> {
    f.insert_axis(Axis(1))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::DyadicSystem;
    use crate::measure::pairing;
    use ndarray::array;

    fn four_atom_ctx() -> MartingaleContext {
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
        let top = idx.top_id();
        let b = AccretiveSystem::from_fn(&idx, 0.5, |id| {
            Some(if id == top {
                vec![1.0, 1.0, 1.0, -0.6]
            } else {
                vec![1.0; idx.cube(id).atoms.len()]
            })
        })
        .unwrap();
        let layers = Layers::build(&b, &mu, &idx);
        MartingaleContext::new(&mu, &idx, &b, &layers).unwrap()
    }

    #[test]
    fn top_term_matches_direct_evaluation() {
        let ctx = four_atom_ctx();
        let f = array![[1.0], [2.0], [-1.0], [4.0]];
        let top = ctx.top_term(f.view());
        // <f> = 1.5, <b_{Q_0}> = 0.6
        let expect = array![[2.5], [2.5], [2.5], [-1.5]];
        for (a, b) in top.iter().zip(expect.iter()) {
            assert!((a - b).abs() < 1e-14);
        }
        let rec = ctx.reconstruct(f.view());
        assert!(rec.residual < 1e-13);
    }

    #[test]
    fn omega_on_four_atoms() {
        let ctx = four_atom_ctx();
        // The only layer transition is at the scale-(-1) cube [0.5, 1).
        assert_eq!(ctx.chi(-1), array![0.0, 0.0, 1.0, 1.0]);
        assert_eq!(ctx.chi_pointwise(0), ctx.chi(-1));
        assert!(ctx.omega(-1).iter().all(|&v| v == 0.0));
        let w = ctx.omega(0);
        assert_eq!(w[0], 0.0);
        let e = ctx.expectation(column(w.view()), -1);
        assert!(e.iter().all(|v| v.abs() < 1e-14));
    }

    #[test]
    fn dense_adjoint_matches_formula() {
        let ctx = four_atom_ctx();
        for k in ctx.diff_scales() {
            let m = ctx.dense(|f| ctx.adapted_diff(f, k));
            let adj = ctx.dense(|g| ctx.adapted_diff_adjoint(g, k));
            let t = ctx.weighted_transpose(&m);
            for (a, b) in adj.iter().zip(t.iter()) {
                assert!((a - b).abs() < 1e-13);
            }
        }
        let f = array![[1.0, 0.0], [0.5, 2.0], [-1.0, 1.0], [3.0, -2.0]];
        let g = array![[0.2, 1.0], [1.0, -1.0], [0.0, 0.5], [1.0, 1.0]];
        let lhs = pairing(
            ctx.measure(),
            g.view(),
            ctx.adapted_diff(f.view(), 0).view(),
        );
        let rhs = pairing(
            ctx.measure(),
            ctx.adapted_diff_adjoint(g.view(), 0).view(),
            f.view(),
        );
        assert!((lhs - rhs).abs() < 1e-13);
    }
}
