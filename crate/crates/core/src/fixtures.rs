//! Reproducible instances: measure, grids, accretive systems and contexts,
//! all derived from one root seed.

use serde::{Deserialize, Serialize};

use crate::accretive::{AccretiveStyle, AccretiveSystem, Layers};
use crate::cz::TwoGrid;
use crate::error::Result;
use crate::grid::{CubeIndex, DyadicParams, DyadicSystem, WindowSpec};
use crate::martingale::MartingaleContext;
use crate::measure::{generate_random_measure, AtomicMeasure, Profile};
use crate::seed;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FixtureSpec {
    pub seed: u64,
    pub dim: usize,
    pub d: f64,
    pub atoms: usize,
    pub profile: Profile,
    pub delta: f64,
    pub style: AccretiveStyle,
    pub params: DyadicParams,
}

impl FixtureSpec {
    /// Largest `γ` allowed for `(d, α)`, rounded down.
    pub fn default_gamma(d: f64, alpha: f64) -> f64 {
        let g1 = alpha / (4.0 * d + alpha);
        let g2 = alpha / (2.0 * (d + alpha));
        (g1.min(g2) * 1000.0).floor() / 1000.0
    }

    pub fn new(
        seed: u64,
        dim: usize,
        atoms: usize,
        delta: f64,
        style: AccretiveStyle,
        r: u32,
    ) -> Result<Self> {
        let d = 0.5;
        let params = DyadicParams::new(Self::default_gamma(d, 1.0), r, 1.0, d)?;
        Ok(Self {
            seed,
            dim,
            d,
            atoms,
            profile: Profile::Uniform,
            delta,
            style,
            params,
        })
    }

    pub fn with_profile(mut self, profile: Profile) -> Self {
        self.profile = profile;
        self
    }

    pub fn with_atoms(mut self, atoms: usize) -> Self {
        self.atoms = atoms;
        self
    }

    pub fn label(&self) -> String {
        format!(
            "seed={} N={} n={} {:?} delta={} {:?} r={}",
            self.seed, self.dim, self.atoms, self.profile, self.delta, self.style, self.params.r
        )
    }

    pub fn measure(&self) -> Result<AtomicMeasure> {
        generate_random_measure(
            seed::derive(self.seed, "measure"),
            self.dim,
            self.d,
            self.atoms,
            self.profile,
        )
    }
}

/// One grid with its accretive system and martingale context.
#[derive(Debug, Clone)]
pub struct Instance {
    pub spec: FixtureSpec,
    pub sys: DyadicSystem,
    pub ctx: MartingaleContext,
}

impl Instance {
    pub fn build(spec: &FixtureSpec) -> Result<Self> {
        Self::on_measure(spec, &spec.measure()?)
    }

    /// Same construction over a given measure (the fixture's own atom data is ignored).
    pub fn on_measure(spec: &FixtureSpec, mu: &AtomicMeasure) -> Result<Self> {
        let mu = mu.clone();
        let sys = DyadicSystem::build_random(
            seed::derive(spec.seed, "grid1"),
            &mu,
            &spec.params,
            WindowSpec::for_params(&spec.params),
        )?;
        let ctx = context(spec, &mu, &sys, "b1")?;
        Ok(Self {
            spec: spec.clone(),
            sys,
            ctx,
        })
    }

    pub fn measure(&self) -> &AtomicMeasure {
        self.ctx.measure()
    }
}

fn context(
    spec: &FixtureSpec,
    mu: &AtomicMeasure,
    sys: &DyadicSystem,
    label: &str,
) -> Result<MartingaleContext> {
    let index = CubeIndex::locate(mu, sys)?;
    let b = AccretiveSystem::generate(
        seed::derive(spec.seed, label),
        mu,
        &index,
        spec.delta,
        spec.style,
    )?;
    let layers = Layers::build(&b, mu, &index);
    MartingaleContext::new(mu, &index, &b, &layers)
}

/// Two independent grids sharing a common top scale, each with its own accretive system.
pub fn two_grid(spec: &FixtureSpec) -> Result<TwoGrid> {
    two_grid_on(spec, &spec.measure()?)
}

pub fn two_grid_on(spec: &FixtureSpec, mu: &AtomicMeasure) -> Result<TwoGrid> {
    let mu = mu.clone();
    let window = WindowSpec::for_params(&spec.params);
    let s1 = seed::derive(spec.seed, "grid1");
    let s2 = seed::derive(spec.seed, "grid2");
    let mut sys1 = DyadicSystem::build_random(s1, &mu, &spec.params, window)?;
    let mut sys2 = DyadicSystem::build_random(s2, &mu, &spec.params, window)?;
    let top = sys1.top().max(sys2.top());
    if sys1.top() < top {
        sys1 = sys1.extended_to(s1, &mu, top)?;
    }
    if sys2.top() < top {
        sys2 = sys2.extended_to(s2, &mu, top)?;
    }
    let ctx1 = context(spec, &mu, &sys1, "b1")?;
    let ctx2 = context(spec, &mu, &sys2, "b2")?;
    TwoGrid::new(spec.params, sys1, ctx1, sys2, ctx2)
}

/// The standard battery: one- and two-dimensional instances of 64 atoms with
/// both non-indicator accretive styles, across profiles.
pub fn standard_battery(r: u32) -> Result<Vec<FixtureSpec>> {
    let mut out = Vec::new();
    for (i, (dim, profile, style, delta)) in [
        (1, Profile::Uniform, AccretiveStyle::SignedPerturbation, 0.4),
        (1, Profile::FractalCantor, AccretiveStyle::Oscillatory, 0.5),
        (2, Profile::Uniform, AccretiveStyle::SignedPerturbation, 0.4),
        (2, Profile::Clustered, AccretiveStyle::Oscillatory, 0.6),
    ]
    .into_iter()
    .enumerate()
    {
        out.push(FixtureSpec::new(100 + i as u64, dim, 64, delta, style, r)?.with_profile(profile));
    }
    Ok(out)
}
