//! Exact decomposition of `<g, Tf>` into martingale blocks over two grids:
//! `<g,Tf> = Σ_{R,Q} <D_R^{a,2} g, T D_Q^{a,1} f> + <T*(E_s^{a,2} g), Σ_Q D_Q^{a,1} f> + <g, T E_s^{a,1} f>`.

use std::collections::BTreeMap;

use ndarray::{Array2, ArrayView2};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::cz::operator::DiscreteOperator;
use crate::cz::pairs::{DecayReport, PairClass};
use crate::cz::TwoGrid;
use crate::error::Result;
use crate::grid::{long_distance, CubeId};
use crate::measure::pairing;

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ClassStats {
    pub pair_count: usize,
    pub sum: f64,
    pub abs_sum: f64,
    pub abs_mass: f64,
    /// Filled from a decay check on the same instance, where applicable.
    pub worst_decay_margin: Option<f64>,
}

/// One block `<D_R g, T D_Q f>`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LedgerRow {
    pub class: PairClass,
    pub l_q: f64,
    pub l_r: f64,
    pub long_distance: f64,
    pub value: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Ledger {
    pub direct: f64,
    pub top_first: f64,
    pub top_second: f64,
    pub classes: BTreeMap<PairClass, ClassStats>,
    pub total: f64,
    pub identity_residual: f64,
    /// `Σ_bad |block| / Σ |block|`.
    pub bad_mass_fraction: f64,
    pub rows: Vec<LedgerRow>,
}

impl Ledger {
    pub fn with_decay(mut self, decay: &DecayReport) -> Self {
        if let Some(s) = self.classes.get_mut(&PairClass::Separated) {
            s.worst_decay_margin = Some(decay.worst_margin_separated);
        }
        if let Some(s) = self.classes.get_mut(&PairClass::DeepNested) {
            s.worst_decay_margin = Some(decay.worst_margin_deep);
        }
        self
    }
}

pub fn pairing_decomposition(
    op: &DiscreteOperator,
    two: &TwoGrid,
    f: ArrayView2<f64>,
    g: ArrayView2<f64>,
) -> Result<Ledger> {
    let mu = op.measure();
    let (c1, c2) = (&two.ctx1, &two.ctx2);
    let direct = pairing(mu, g, op.apply(f).view());
    let top_first = pairing(mu, g, op.apply(c1.top_term(f).view()).view());
    let mut diff_sum = Array2::zeros(f.raw_dim());
    let qs: Vec<CubeId> = c1.index().ids().filter(|id| id.level > 0).collect();
    let rs: Vec<CubeId> = c2.index().ids().filter(|id| id.level > 0).collect();
    for &q in &qs {
        for (&x, row) in c1
            .index()
            .cube(q)
            .atoms
            .iter()
            .zip(c1.adapted_diff_on(f, q).outer_iter())
        {
            diff_sum.row_mut(x).scaled_add(1.0, &row);
        }
    }
    let top_second = pairing(
        mu,
        op.adjoint_apply(c2.top_term(g).view()).view(),
        diff_sum.view(),
    );
    let dr: Vec<Array2<f64>> = rs.par_iter().map(|&r| c2.adapted_diff_on(g, r)).collect();
    let rows: Vec<Result<Vec<LedgerRow>>> = qs
        .par_iter()
        .map(|&q| {
            let u = op.apply(c1.adapted_diff_local(f, q).view());
            let qb = two.bounds1(q);
            let mut out = Vec::with_capacity(rs.len());
            for (&r, d) in rs.iter().zip(&dr) {
                let atoms = &c2.index().cube(r).atoms;
                let mut value = 0.0;
                for (&x, row) in atoms.iter().zip(d.outer_iter()) {
                    value += mu.weight(x) * row.dot(&u.row(x));
                }
                let rb = two.bounds2(r);
                out.push(LedgerRow {
                    class: two.class_of(q, r)?,
                    l_q: qb.side,
                    l_r: rb.side,
                    long_distance: long_distance(&qb, &rb),
                    value,
                });
            }
            Ok(out)
        })
        .collect();
    let mut all = Vec::new();
    for r in rows {
        all.extend(r?);
    }
    let mut classes: BTreeMap<PairClass, ClassStats> = PairClass::ALL
        .iter()
        .map(|&c| (c, ClassStats::default()))
        .collect();
    for row in &all {
        let s = classes.get_mut(&row.class).expect("all classes present");
        s.pair_count += 1;
        s.sum += row.value;
        s.abs_mass += row.value.abs();
    }
    let mut blocks = 0.0;
    let mut mass = 0.0;
    for s in classes.values_mut() {
        s.abs_sum = s.sum.abs();
        blocks += s.sum;
        mass += s.abs_mass;
    }
    let total = blocks + top_first + top_second;
    let scale = direct.abs().max(f64::MIN_POSITIVE);
    let bad_mass = classes[&PairClass::Bad].abs_mass;
    Ok(Ledger {
        direct,
        top_first,
        top_second,
        classes,
        total,
        identity_residual: (total - direct).abs() / scale,
        bad_mass_fraction: if mass > 0.0 { bad_mass / mass } else { 0.0 },
        rows: all,
    })
}
