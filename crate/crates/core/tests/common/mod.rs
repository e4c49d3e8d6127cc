#![allow(dead_code)]

use ndarray::Array2;
use rand::Rng;
use tblab::accretive::AccretiveStyle;
use tblab::fixtures::{FixtureSpec, Instance};
use tblab::measure::Profile;
use tblab::seed;

pub const STYLES: [AccretiveStyle; 3] = [
    AccretiveStyle::Indicator,
    AccretiveStyle::SignedPerturbation,
    AccretiveStyle::Oscillatory,
];
pub const PROFILES: [Profile; 3] = [Profile::Uniform, Profile::FractalCantor, Profile::Clustered];

pub fn instance(
    seed_value: u64,
    dim: usize,
    atoms: usize,
    delta: f64,
    style: AccretiveStyle,
    profile: Profile,
) -> Instance {
    let spec = FixtureSpec::new(seed_value, dim, atoms, delta, style, 2)
        .unwrap()
        .with_profile(profile);
    Instance::build(&spec).unwrap()
}

pub fn random(n: usize, m: usize, s: u64) -> Array2<f64> {
    let mut rng = seed::rng(s);
    Array2::from_shape_fn((n, m), |_| rng.gen_range(-1.0..1.0))
}

pub fn max_abs(a: &Array2<f64>) -> f64 {
    a.iter().fold(0.0, |m, v| m.max(v.abs()))
}
