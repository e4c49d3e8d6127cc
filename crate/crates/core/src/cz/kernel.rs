//! Truncated Calderón–Zygmund kernels with explicit size and smoothness
//! constants in the `l^∞` metric.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Result, TbError};
use crate::measure::{dist_inf, AtomicMeasure};
use crate::seed;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum KernelKind {
    /// `max(|x-y|, ε)^{-d}`.
    Riesz,
    /// `Σ_i v_i (x_i - y_i) / max(|x-y|, ε)^{d+1}` with `Σ|v_i| <= 1`; antisymmetric.
    Dipole { weights: Vec<f64> },
    /// `sign(x-y) / max(|x-y|, ε)` on the line; antisymmetric.
    Hilbert,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Kernel {
    pub kind: KernelKind,
    pub d: f64,
    pub alpha: f64,
    pub eps: f64,
    pub c_size: f64,
    pub c_smooth: f64,
}

/// Sampled size/smoothness ratios of a kernel against its constants.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KernelCheck {
    pub pass: bool,
    pub size_ratio: f64,
    pub smooth_ratio: f64,
    pub samples: usize,
}

impl Kernel {
    /// Constants: size 1; smoothness `2 d 2^{d+1}` from the mean value theorem
    /// on `|z| >= |x-y|/2`.
    pub fn riesz(d: f64, eps: f64) -> Result<Self> {
        check(d, eps)?;
        Ok(Self {
            kind: KernelKind::Riesz,
            d,
            alpha: 1.0,
            eps,
            c_size: 1.0,
            c_smooth: d * 2f64.powf(d + 2.0),
        })
    }

    pub fn dipole(d: f64, eps: f64, weights: Vec<f64>) -> Result<Self> {
        check(d, eps)?;
        if weights.iter().map(|w| w.abs()).sum::<f64>() > 1.0 + 1e-12 {
            return Err(TbError::InvalidParams(
                "dipole weights must have l^1 norm at most 1".into(),
            ));
        }
        Ok(Self {
            kind: KernelKind::Dipole { weights },
            d,
            alpha: 1.0,
            eps,
            c_size: 1.0,
            c_smooth: (4.0 + 3.0 * d) * 2f64.powf(d + 2.0),
        })
    }

    /// Dipole with random direction, drawn from `seed_value`.
    pub fn random_dipole(seed_value: u64, dim: usize, d: f64, eps: f64) -> Result<Self> {
        let mut rng = seed::rng(seed::derive(seed_value, "dipole"));
        let raw: Vec<f64> = (0..dim).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let s: f64 = raw.iter().map(|v: &f64| v.abs()).sum::<f64>().max(1e-300);
        Self::dipole(d, eps, raw.iter().map(|v| v / s).collect())
    }

    pub fn hilbert(eps: f64) -> Result<Self> {
        check(1.0, eps)?;
        Ok(Self {
            kind: KernelKind::Hilbert,
            d: 1.0,
            alpha: 1.0,
            eps,
            c_size: 1.0,
            c_smooth: 8.0,
        })
    }

    pub fn name(&self) -> &'static str {
        match self.kind {
            KernelKind::Riesz => "riesz",
            KernelKind::Dipole { .. } => "dipole",
            KernelKind::Hilbert => "hilbert",
        }
    }

    pub fn is_antisymmetric(&self) -> bool {
        !matches!(self.kind, KernelKind::Riesz)
    }

    /// `K(x, y)` for `x != y`.
    pub fn eval(&self, x: &[f64], y: &[f64]) -> f64 {
        let r = dist_inf(x, y).max(self.eps);
        match &self.kind {
            KernelKind::Riesz => r.powf(-self.d),
            KernelKind::Dipole { weights } => {
                let num: f64 = weights
                    .iter()
                    .zip(x.iter().zip(y))
                    .map(|(v, (a, b))| v * (a - b))
                    .sum();
                num / r.powf(self.d + 1.0)
            }
            KernelKind::Hilbert => (x[0] - y[0]).signum() / r,
        }
    }

    /// `max(C_size, C_smooth)`.
    pub fn constant(&self) -> f64 {
        self.c_size.max(self.c_smooth)
    }

    /// Check `|K(x,y)| <= C_size |x-y|^{-d}` and the two-sided Hölder bound
    /// on random pairs and triples with `2|x-x'| <= |x-y|`. Points are atoms
    /// of `mu` perturbed at random scales.
    pub fn validate(
        &self,
        mu: &AtomicMeasure,
        samples: usize,
        seed_value: u64,
    ) -> Result<KernelCheck> {
        if let KernelKind::Hilbert = self.kind {
            if mu.dim() != 1 {
                return Err(TbError::InvalidParams(
                    "Hilbert kernel lives on the line".into(),
                ));
            }
        }
        let mut rng = seed::rng(seed::derive(seed_value, "kernel-check"));
        let diam = mu.diameter().max(1e-3);
        let mut size_ratio: f64 = 0.0;
        let mut smooth_ratio: f64 = 0.0;
        for _ in 0..samples {
            let x: Vec<f64> = mu.point(rng.gen_range(0..mu.len())).to_vec();
            let scale = diam * 2f64.powf(-rng.gen_range(0.0..12.0));
            let y: Vec<f64> = x
                .iter()
                .map(|&a| a + scale * rng.gen_range(-1.0..1.0))
                .collect();
            let t = dist_inf(&x, &y);
            if t == 0.0 {
                continue;
            }
            size_ratio = size_ratio.max(self.eval(&x, &y).abs() * t.powf(self.d) / self.c_size);
            let h = 0.5 * t * rng.gen_range(0.0..1.0f64).powi(3);
            let xp: Vec<f64> = x
                .iter()
                .map(|&a| a + h * rng.gen_range(-1.0..1.0))
                .collect();
            let hh = dist_inf(&x, &xp);
            if hh == 0.0 || 2.0 * hh > t {
                continue;
            }
            let lhs = (self.eval(&x, &y) - self.eval(&xp, &y)).abs()
                + (self.eval(&y, &x) - self.eval(&y, &xp)).abs();
            let rhs = self.c_smooth * hh.powf(self.alpha) / t.powf(self.d + self.alpha);
            smooth_ratio = smooth_ratio.max(lhs / rhs);
        }
        Ok(KernelCheck {
            pass: size_ratio <= 1.0 + 1e-12 && smooth_ratio <= 1.0 + 1e-12,
            size_ratio,
            smooth_ratio,
            samples,
        })
    }
}

fn check(d: f64, eps: f64) -> Result<()> {
    if !(d > 0.0) || !(eps > 0.0) {
        return Err(TbError::InvalidParams(format!(
            "kernel needs d > 0 and eps > 0 (d={d}, eps={eps})"
        )));
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::measure::{generate_random_measure, Profile};

    #[test]
    fn bundled_kernels_validate() {
        let mu2 = generate_random_measure(4, 2, 1.5, 40, Profile::Uniform).unwrap();
        let mu1 = generate_random_measure(4, 1, 0.8, 40, Profile::Uniform).unwrap();
        for (k, mu) in [
            (Kernel::riesz(0.8, 1.0).unwrap(), &mu1),
            (Kernel::riesz(1.5, 1e-3).unwrap(), &mu2),
            (Kernel::random_dipole(3, 2, 1.5, 1e-3).unwrap(), &mu2),
            (Kernel::hilbert(1e-4).unwrap(), &mu1),
        ] {
            let c = k.validate(mu, 20000, 1).unwrap();
            assert!(c.pass, "{} {:?}", k.name(), c);
        }
    }

    #[test]
    fn antisymmetry() {
        let k = Kernel::random_dipole(5, 2, 1.0, 0.01).unwrap();
        let (x, y) = ([0.1, 0.7], [0.4, 0.2]);
        assert_eq!(k.eval(&x, &y), -k.eval(&y, &x));
        let h = Kernel::hilbert(0.01).unwrap();
        assert_eq!(h.eval(&[0.2], &[0.5]), -h.eval(&[0.5], &[0.2]));
    }
}
