//! Dense discrete operator `Tf(x) = Σ_{y≠x} K(x,y) f(y) w(y)`.

use ndarray::{Array1, Array2, ArrayView1, ArrayView2, Axis};
use rayon::prelude::*;

use crate::cz::kernel::Kernel;
use crate::grid::CubeIndex;
use crate::martingale::column;
use crate::measure::AtomicMeasure;

#[derive(Debug, Clone)]
pub struct DiscreteOperator {
    kernel: Kernel,
    mu: AtomicMeasure,
    /// `M[x][y] = K(x,y) w(y)`, zero diagonal.
    m: Array2<f64>,
    /// `M*[x][y] = K(y,x) w(y)`.
    mt: Array2<f64>,
}

impl DiscreteOperator {
    pub fn new(kernel: Kernel, mu: &AtomicMeasure) -> Self {
        let n = mu.len();
        let rows: Vec<(Vec<f64>, Vec<f64>)> = (0..n)
            .into_par_iter()
            .map(|x| {
                let mut a = vec![0.0; n];
                let mut b = vec![0.0; n];
                for y in 0..n {
                    if y != x {
                        a[y] = kernel.eval(mu.point(x), mu.point(y)) * mu.weight(y);
                        b[y] = kernel.eval(mu.point(y), mu.point(x)) * mu.weight(y);
                    }
                }
                (a, b)
            })
            .collect();
        let mut m = Array2::zeros((n, n));
        let mut mt = Array2::zeros((n, n));
        for (x, (a, b)) in rows.into_iter().enumerate() {
            m.row_mut(x).assign(&Array1::from(a));
            mt.row_mut(x).assign(&Array1::from(b));
        }
        Self {
            kernel,
            mu: mu.clone(),
            m,
            mt,
        }
    }

    pub fn kernel(&self) -> &Kernel {
        &self.kernel
    }

    pub fn measure(&self) -> &AtomicMeasure {
        &self.mu
    }

    pub fn matrix(&self) -> &Array2<f64> {
        &self.m
    }

    pub fn apply(&self, f: ArrayView2<f64>) -> Array2<f64> {
        self.m.dot(&f)
    }

    pub fn adjoint_apply(&self, g: ArrayView2<f64>) -> Array2<f64> {
        self.mt.dot(&g)
    }

    pub fn apply_scalar(&self, f: ArrayView1<f64>) -> Array1<f64> {
        self.m.dot(&f)
    }

    pub fn adjoint_apply_scalar(&self, g: ArrayView1<f64>) -> Array1<f64> {
        self.mt.dot(&g)
    }

    /// `<ψ, Tφ> = Σ_{x≠y} ψ(x) K(x,y) φ(y) w(x) w(y)`.
    pub fn matrix_element(&self, psi: ArrayView1<f64>, phi: ArrayView1<f64>) -> f64 {
        let tphi = self.m.dot(&phi);
        weighted_dot(&self.mu, psi, tphi.view())
    }

    /// `max_Q ||T b_Q||_∞` over the cubes of `index`, with `b_Q` given per cube.
    pub fn testing_constant<F>(&self, index: &CubeIndex, adjoint: bool, b_of: F) -> f64
    where
        F: Fn(crate::grid::CubeId) -> Array1<f64> + Sync,
    {
        let ids: Vec<_> = index.ids().collect();
        ids.par_iter()
            .map(|&id| {
                let b = b_of(id);
                let mut bq = Array1::zeros(b.len());
                for &x in &index.cube(id).atoms {
                    bq[x] = b[x];
                }
                let t = if adjoint {
                    self.adjoint_apply(column(bq.view()))
                } else {
                    self.apply(column(bq.view()))
                };
                t.iter().fold(0.0f64, |a, v| a.max(v.abs()))
            })
            .reduce(|| 0.0, f64::max)
    }

    /// `T` restricted to functions supported on `src`, evaluated on `dst`.
    pub fn block_element(&self, psi: &[(usize, f64)], phi: &[(usize, f64)]) -> f64 {
        let mut s = 0.0;
        for &(x, a) in psi {
            let row = self.m.row(x);
            let mut inner = 0.0;
            for &(y, b) in phi {
                inner += row[y] * b;
            }
            s += a * self.mu.weight(x) * inner;
        }
        s
    }
}

pub(crate) fn weighted_dot(mu: &AtomicMeasure, a: ArrayView1<f64>, b: ArrayView1<f64>) -> f64 {
    a.iter()
        .zip(b.iter())
        .zip(mu.weights())
        .map(|((x, y), w)| x * y * w)
        .sum()
}

/// Collapse a one-column function to a vector.
pub(crate) fn col0(f: Array2<f64>) -> Array1<f64> {
    f.index_axis_move(Axis(1), 0)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::measure::{generate_random_measure, pairing, Profile};
    use crate::seed;
    use rand::Rng;

    #[test]
    fn two_atoms() {
        let mu = AtomicMeasure::new(1, 1.0, vec![(vec![0.25], 0.5), (vec![0.75], 0.25)]).unwrap();
        let k = Kernel::riesz(1.0, 1e-3).unwrap();
        let op = DiscreteOperator::new(k.clone(), &mu);
        let f = Array1::from(vec![0.0, 2.0]);
        let tf = op.apply_scalar(f.view());
        assert_eq!(tf[0], k.eval(&[0.25], &[0.75]) * 2.0 * 0.25);
        assert_eq!(tf[1], 0.0);
    }

    #[test]
    fn duality_and_antisymmetry() {
        let mu = generate_random_measure(9, 2, 1.5, 64, Profile::Clustered).unwrap();
        let k = Kernel::random_dipole(9, 2, 1.5, 1e-3).unwrap();
        let op = DiscreteOperator::new(k, &mu);
        let mut rng = seed::rng(3);
        let f = Array2::from_shape_fn((64, 3), |_| rng.gen_range(-1.0..1.0));
        let g = Array2::from_shape_fn((64, 3), |_| rng.gen_range(-1.0..1.0));
        let lhs = pairing(&mu, g.view(), op.apply(f.view()).view());
        let rhs = pairing(&mu, op.adjoint_apply(g.view()).view(), f.view());
        let scale = op.matrix().iter().fold(0.0f64, |a, v| a.max(v.abs()));
        assert!((lhs - rhs).abs() <= 1e-12 * scale.max(1.0));
        let s = f.column(0).to_owned();
        assert!(op.matrix_element(s.view(), s.view()).abs() <= 1e-12 * scale);
    }

    #[test]
    fn mean_zero_kills_constant_kernel() {
        // K ≡ 1 on supp ψ × supp φ: the truncation radius exceeds every distance.
        let mu = AtomicMeasure::new(
            1,
            1.0,
            vec![(vec![0.1], 0.25), (vec![0.2], 0.25), (vec![0.8], 0.5)],
        )
        .unwrap();
        let op = DiscreteOperator::new(Kernel::riesz(1.0, 1.0).unwrap(), &mu);
        let phi = Array1::from(vec![1.0, -1.0, 0.0]);
        let psi = Array1::from(vec![0.0, 0.0, 1.0]);
        assert_eq!(op.matrix_element(psi.view(), phi.view()), 0.0);
    }
}
