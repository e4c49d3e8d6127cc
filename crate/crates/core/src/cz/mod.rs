//! Calderón–Zygmund operators on atomic measures and the two-grid analysis of
//! their martingale matrix.

pub mod geometry;
pub mod kernel;
pub mod ledger;
pub mod operator;
pub mod pairs;
pub mod paraproduct;

pub use geometry::{
    boundary_probability, comparable_partition, in_collar, rcub_check, CollarEstimate,
    ComparablePartition, RcubReport,
};
pub use kernel::{Kernel, KernelCheck, KernelKind};
pub use ledger::{pairing_decomposition, ClassStats, Ledger, LedgerRow};
pub use operator::DiscreteOperator;
pub use pairs::{
    classify_pair, decay_bound_check, slope_sweep, DecayRecord, DecayReport, PairClass, SlopeFit,
};
pub use paraproduct::{chi, paraproduct, paraproduct_check, ParaproductReport, SMap, SMapCheck};

use crate::error::Result;
use crate::grid::{BadnessTable, Bounds, CubeId, CubeIndex, DyadicParams, DyadicSystem};
use crate::martingale::MartingaleContext;

/// Martingale contexts over two independent grids `D` (first) and `D'`
/// (second) for the same measure, with badness of each grid against the other.
#[derive(Debug, Clone)]
pub struct TwoGrid {
    pub params: DyadicParams,
    pub sys1: DyadicSystem,
    pub ctx1: MartingaleContext,
    pub sys2: DyadicSystem,
    pub ctx2: MartingaleContext,
    /// Cubes of `D` against `D'`.
    pub bad12: BadnessTable,
    /// Cubes of `D'` against `D`.
    pub bad21: BadnessTable,
}

impl TwoGrid {
    pub fn new(
        params: DyadicParams,
        sys1: DyadicSystem,
        ctx1: MartingaleContext,
        sys2: DyadicSystem,
        ctx2: MartingaleContext,
    ) -> Result<Self> {
        params.validate()?;
        let bad12 = BadnessTable::build(ctx1.index(), &sys1, &sys2, &params);
        let bad21 = BadnessTable::build(ctx2.index(), &sys2, &sys1, &params);
        Ok(Self {
            params,
            sys1,
            ctx1,
            sys2,
            ctx2,
            bad12,
            bad21,
        })
    }

    /// Same grids and functions with another separation parameter `r`.
    pub fn with_r(&self, r: u32) -> Result<Self> {
        Self::new(
            self.params.with_r(r),
            self.sys1.clone(),
            self.ctx1.clone(),
            self.sys2.clone(),
            self.ctx2.clone(),
        )
    }

    pub fn bounds1(&self, q: CubeId) -> Bounds {
        self.sys1.bounds(&self.ctx1.index().cube(q).cube)
    }

    pub fn bounds2(&self, r: CubeId) -> Bounds {
        self.sys2.bounds(&self.ctx2.index().cube(r).cube)
    }

    pub fn index1(&self) -> &CubeIndex {
        self.ctx1.index()
    }

    pub fn index2(&self) -> &CubeIndex {
        self.ctx2.index()
    }

    /// Class of the pair `(Q ∈ D, R ∈ D')`, ordering by side length so that
    /// the smaller cube is tested for badness against the grid of the larger.
    pub fn class_of(&self, q: CubeId, r: CubeId) -> Result<PairClass> {
        let (i1, i2) = (self.index1(), self.index2());
        let (sq, sr) = (i1.scale(q.level), i2.scale(r.level));
        if sq <= sr {
            let bad = self.bad12.is_bad_for(q, sq, sr);
            classify_pair(
                &self.bounds1(q),
                sq,
                bad,
                &self.bounds2(r),
                sr,
                self.params.r,
            )
        } else {
            let bad = self.bad21.is_bad_for(r, sr, sq);
            classify_pair(
                &self.bounds2(r),
                sr,
                bad,
                &self.bounds1(q),
                sq,
                self.params.r,
            )
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::accretive::AccretiveStyle;
    use crate::fixtures::{two_grid, FixtureSpec};
    use crate::seed;
    use ndarray::Array2;
    use rand::Rng;

    fn instance(dim: usize, r: u32) -> (TwoGrid, DiscreteOperator) {
        let spec =
            FixtureSpec::new(11, dim, 48, 0.4, AccretiveStyle::SignedPerturbation, r).unwrap();
        let two = two_grid(&spec).unwrap();
        let k = Kernel::random_dipole(5, dim, spec.d, 1e-4).unwrap();
        let op = DiscreteOperator::new(k, two.ctx1.measure());
        (two, op)
    }

    fn random(n: usize, m: usize, s: u64) -> Array2<f64> {
        let mut rng = seed::rng(s);
        Array2::from_shape_fn((n, m), |_| rng.gen_range(-1.0..1.0))
    }

    #[test]
    fn classification_partitions_all_pairs() {
        let (two, _) = instance(1, 4);
        let mut counts = std::collections::BTreeMap::new();
        for q in two.index1().ids() {
            for r in two.index2().ids() {
                *counts.entry(two.class_of(q, r).unwrap()).or_insert(0usize) += 1;
            }
        }
        assert_eq!(counts.len(), 4, "{counts:?}");
    }

    #[test]
    fn ledger_reproduces_pairing() {
        let (two, op) = instance(2, 2);
        let n = op.measure().len();
        let led = pairing_decomposition(&op, &two, random(n, 2, 1).view(), random(n, 2, 2).view())
            .unwrap();
        assert!(led.identity_residual <= 1e-10, "{}", led.identity_residual);
    }

    #[test]
    fn decay_bounds_hold() {
        let (two, op) = instance(1, 4);
        let rep = decay_bound_check(&op, &two).unwrap();
        assert!(rep.separated > 0 && rep.deep_nested > 0);
        assert!(
            rep.pass(),
            "{} violations, worst {} {}",
            rep.violations,
            rep.worst_margin_separated,
            rep.worst_margin_deep
        );
        assert!(rep.separated_constant <= op.kernel().c_smooth);
    }

    #[test]
    fn paraproduct_and_rcub() {
        let (two, op) = instance(1, 2);
        let n = op.measure().len();
        let rep = paraproduct_check(&op, &two, random(n, 2, 3).view(), random(n, 2, 4).view());
        assert!(rep.smap.nonempty > 0);
        assert!(rep.pass(1e-12), "{rep:?}");
        let zero = paraproduct(&op, &two, &SMap::build(&two), Array2::zeros((n, 2)).view());
        assert!(zero.iter().all(|v| *v == 0.0));
        let rc = rcub_check(&two);
        assert!(rc.pairs > 0 && rc.exceptions == 0);
    }

    #[test]
    fn comparable_split_is_exact() {
        let (two, op) = instance(2, 2);
        let n = op.measure().len();
        let psi = random(n, 1, 5).column(0).to_owned();
        let phi = random(n, 1, 6).column(0).to_owned();
        let mut seen = 0;
        for q in two.index1().ids().filter(|q| q.level > 0) {
            for r in two.index2().ids().filter(|r| r.level > 0) {
                if two.class_of(q, r).unwrap() != PairClass::Comparable {
                    continue;
                }
                for qi in two.index1().children(q) {
                    for rj in two.index2().children(r) {
                        let p =
                            comparable_partition(&op, &two, q, qi, r, rj, 0.1, &psi, &phi).unwrap();
                        assert!(p.exact);
                        assert!(p.residual <= 1e-12 * p.whole.abs() + 1e-14);
                        seen += 1;
                    }
                }
            }
        }
        assert!(seen > 0);
    }
}
