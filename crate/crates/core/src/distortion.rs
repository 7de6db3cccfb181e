//! Distortion functions assigning copulas to probability regions.
//!
//! A distortion set holds continuous increasing maps `D_ik: [0,1] -> [0,1]`
//! with `D_ik(0) = 0`, `D_ik(1) = 1` and weights `alpha_0..alpha_m` summing
//! to one, subject to the reconstruction constraint
//! `sum_i alpha_i D_ik(v) = v` for every level `v` and coordinate `k`.
//!
//! Both shipped families use the same distortion for every coordinate.

use crate::error::{Error, Result};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "snake_case", deny_unknown_fields)]
pub enum DistortionFamily {
    /// Smooth rational family with two tail slots; `alpha` is the weight of
    /// each tail component and `1 - 2 alpha` the weight of the center.
    Rational { alpha: f64 },
    /// Piecewise-linear ramps over consecutive probability bands
    /// `[0, w_0], (w_0, w_0+w_1], ...`; `weights` are `alpha_0..alpha_m`.
    Piecewise { weights: Vec<f64> },
    /// Every distortion is the identity; useful as the degenerate case where
    /// the DM copula collapses to a plain mixture.
    Identity { weights: Vec<f64> },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DistortionSet {
    family: DistortionFamily,
    dim: usize,
}

impl DistortionSet {
    pub fn new(family: DistortionFamily, dim: usize) -> Result<Self> {
        match &family {
            DistortionFamily::Rational { alpha } => {
                if !(*alpha > 0.0 && *alpha < 0.5) {
                    return Err(Error::Domain(format!(
                        "rational family needs alpha in (0, 0.5), got {alpha}"
                    )));
                }
            }
            DistortionFamily::Piecewise { weights } | DistortionFamily::Identity { weights } => {
                if weights.is_empty() {
                    return Err(Error::Domain("weights must not be empty".into()));
                }
                if weights.iter().any(|&w| w <= 0.0) {
                    return Err(Error::Domain("weights must be positive".into()));
                }
                let total: f64 = weights.iter().sum();
                if (total - 1.0).abs() > 1e-12 {
                    return Err(Error::Domain(format!("weights sum to {total}, not 1")));
                }
            }
        }
        let set = DistortionSet { family, dim };
        set.check_reconstruction(101, 1e-9)?;
        Ok(set)
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    /// Number of tail slots `m`.
    pub fn m(&self) -> usize {
        match &self.family {
            DistortionFamily::Rational { .. } => 2,
            DistortionFamily::Piecewise { weights } | DistortionFamily::Identity { weights } => {
                weights.len() - 1
            }
        }
    }

    /// Component weights `alpha_0..alpha_m`.
    pub fn weights(&self) -> Vec<f64> {
        match &self.family {
            DistortionFamily::Rational { alpha } => vec![1.0 - 2.0 * alpha, *alpha, *alpha],
            DistortionFamily::Piecewise { weights } | DistortionFamily::Identity { weights } => {
                weights.clone()
            }
        }
    }

    pub fn family(&self) -> &DistortionFamily {
        &self.family
    }

    /// Evaluates `D_ik(v)` or, with `inverse`, the generalized inverse
    /// `inf { x : D_ik(x) >= v }`. On flat segments of the piecewise family
    /// this returns the left endpoint of the preimage interval.
    pub fn eval(&self, i: usize, k: usize, v: f64, inverse: bool) -> Result<f64> {
        if i > self.m() {
            return Err(Error::Domain(format!("component index {i} out of range")));
        }
        if k >= self.dim {
            return Err(Error::Domain(format!("coordinate index {k} out of range")));
        }
        if !(0.0..=1.0).contains(&v) {
            return Err(Error::Domain(format!("level {v} outside [0,1]")));
        }
        Ok(if inverse { self.inverse(i, v) } else { self.forward(i, v) })
    }

    /// `D_i(v)`; both shipped families are coordinate-uniform.
    pub(crate) fn forward(&self, i: usize, v: f64) -> f64 {
        match &self.family {
            DistortionFamily::Rational { alpha } => {
                let a = *alpha;
                match i {
                    1 => (v - a * v * v) / (a + (1.0 - 2.0 * a) * v),
                    2 => a * v * v / (a + (1.0 - 2.0 * a) * (1.0 - v)),
                    _ => {
                        (v - a * self.forward(1, v) - a * self.forward(2, v)) / (1.0 - 2.0 * a)
                    }
                }
            }
            DistortionFamily::Piecewise { weights } => {
                let start: f64 = weights[..i].iter().sum();
                ((v - start) / weights[i]).clamp(0.0, 1.0)
            }
            DistortionFamily::Identity { .. } => v,
        }
    }

    pub(crate) fn inverse(&self, i: usize, v: f64) -> f64 {
        match &self.family {
            DistortionFamily::Rational { alpha } => {
                let a = *alpha;
                match i {
                    1 => {
                        // root of a x^2 - (1 - v(1-2a)) x + v a = 0 in [0,1]
                        let b = 1.0 - v * (1.0 - 2.0 * a);
                        let disc = (b * b - 4.0 * a * a * v).max(0.0);
                        (b - disc.sqrt()) / (2.0 * a)
                    }
                    2 => {
                        // root of a x^2 + v(1-2a) x - v(1-a) = 0 in [0,1]
                        let bb = v * (1.0 - 2.0 * a);
                        let disc = (bb * bb + 4.0 * a * v * (1.0 - a)).max(0.0);
                        (-bb + disc.sqrt()) / (2.0 * a)
                    }
                    _ => {
                        // no closed form for the residual center distortion
                        let mut lo = 0.0f64;
                        let mut hi = 1.0f64;
                        while hi - lo > 1e-13 {
                            let mid = 0.5 * (lo + hi);
                            if self.forward(0, mid) < v {
                                lo = mid;
                            } else {
                                hi = mid;
                            }
                        }
                        0.5 * (lo + hi)
                    }
                }
            }
            DistortionFamily::Piecewise { weights } => {
                if v == 0.0 {
                    return 0.0;
                }
                let start: f64 = weights[..i].iter().sum();
                start + weights[i] * v
            }
            DistortionFamily::Identity { .. } => v,
        }
    }

    fn check_reconstruction(&self, grid: usize, tol: f64) -> Result<()> {
        let w = self.weights();
        for g in 0..=grid {
            let v = g as f64 / grid as f64;
            let total: f64 = (0..=self.m()).map(|i| w[i] * self.forward(i, v)).sum();
            if (total - v).abs() > tol {
                return Err(Error::Domain(format!(
                    "distortion family violates the reconstruction identity at v={v}: {total}"
                )));
            }
        }
        Ok(())
    }

    /// Largest reconstruction error `|sum_i alpha_i D_i(v) - v|` over an
    /// equally spaced grid.
    pub fn reconstruction_error(&self, grid: usize) -> f64 {
        let w = self.weights();
        let mut worst = 0.0f64;
        for g in 0..=grid {
            let v = g as f64 / grid as f64;
            let total: f64 = (0..=self.m()).map(|i| w[i] * self.forward(i, v)).sum();
            worst = worst.max((total - v).abs());
        }
        worst
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    fn rational(alpha: f64) -> DistortionSet {
        DistortionSet::new(DistortionFamily::Rational { alpha }, 2).unwrap()
    }

    fn piecewise() -> DistortionSet {
        DistortionSet::new(
            DistortionFamily::Piecewise { weights: vec![0.92, 0.04, 0.04] },
            7,
        )
        .unwrap()
    }

    #[test]
    fn rational_boundary_and_midpoint_values() {
        let d = rational(0.1);
        assert_relative_eq!(d.eval(1, 0, 1.0, false).unwrap(), 1.0, epsilon = 1e-12);
        assert_relative_eq!(d.eval(1, 0, 0.5, false).unwrap(), 0.95, epsilon = 1e-12);
        for i in 0..=2 {
            assert_relative_eq!(d.eval(i, 0, 0.0, false).unwrap(), 0.0, epsilon = 1e-12);
            assert_relative_eq!(d.eval(i, 0, 1.0, false).unwrap(), 1.0, epsilon = 1e-12);
        }
    }

    #[test]
    fn piecewise_ramp_value() {
        let d = piecewise();
        assert_relative_eq!(d.eval(2, 0, 0.98, false).unwrap(), 0.5, epsilon = 1e-12);
        assert_relative_eq!(d.eval(1, 0, 0.94, false).unwrap(), 0.5, epsilon = 1e-12);
        assert_relative_eq!(d.eval(0, 0, 0.46, false).unwrap(), 0.5, epsilon = 1e-12);
    }

    #[test]
    fn reconstruction_identity_fine_grid() {
        assert!(rational(0.1).reconstruction_error(10_000) <= 1e-12);
        assert!(piecewise().reconstruction_error(10_000) <= 1e-12);
    }

    #[test]
    fn forward_monotone_on_grid() {
        for set in [rational(0.1), piecewise()] {
            for i in 0..=set.m() {
                let mut last = -1.0;
                for g in 0..=2000 {
                    let v = g as f64 / 2000.0;
                    let y = set.forward(i, v);
                    assert!(y >= last - 1e-12, "family {:?} slot {i} at {v}", set.family());
                    last = y;
                }
            }
        }
    }

    #[test]
    fn inverse_round_trip() {
        for set in [rational(0.1), rational(0.25)] {
            for i in 0..=2 {
                for g in 0..=200 {
                    let v = g as f64 / 200.0;
                    let x = set.inverse(i, v);
                    assert!(
                        (set.forward(i, x) - v).abs() < 1e-10,
                        "slot {i} level {v}: x={x}"
                    );
                }
            }
        }
    }

    #[test]
    fn piecewise_inverse_is_left_endpoint_on_flats() {
        let d = piecewise();
        // preimage of 1 under D_1 is [0.96, 1]; active-branch inverse gives 0.96
        assert_relative_eq!(d.inverse(1, 1.0), 0.96, epsilon = 1e-12);
        // generalized inverse at level zero is zero
        assert_eq!(d.inverse(1, 0.0), 0.0);
        assert_relative_eq!(d.inverse(0, 1.0), 0.92, epsilon = 1e-12);
        // on the ramp the inverse is exact
        assert_relative_eq!(d.forward(1, d.inverse(1, 0.5)), 0.5, epsilon = 1e-12);
    }

    #[test]
    fn identity_family_collapses() {
        let d = DistortionSet::new(
            DistortionFamily::Identity { weights: vec![0.5, 0.3, 0.2] },
            2,
        )
        .unwrap();
        assert_eq!(d.forward(1, 0.37), 0.37);
        assert_eq!(d.inverse(2, 0.37), 0.37);
        assert!(d.reconstruction_error(1000) < 1e-15);
    }

    #[test]
    fn invalid_families_rejected() {
        assert!(DistortionSet::new(DistortionFamily::Rational { alpha: 0.5 }, 2).is_err());
        assert!(DistortionSet::new(
            DistortionFamily::Piecewise { weights: vec![0.9, 0.2] },
            2
        )
        .is_err());
        assert!(DistortionSet::new(DistortionFamily::Piecewise { weights: vec![] }, 2).is_err());
        // a single weight of one is the degenerate center-only model
        assert!(DistortionSet::new(DistortionFamily::Piecewise { weights: vec![1.0] }, 2).is_ok());
    }

    #[test]
    fn eval_argument_checks() {
        let d = rational(0.1);
        assert!(d.eval(3, 0, 0.5, false).is_err());
        assert!(d.eval(0, 2, 0.5, false).is_err());
        assert!(d.eval(0, 0, 1.5, false).is_err());
    }

    proptest! {
        #[test]
        fn rational_identity_holds_for_random_alpha(alpha in 0.01f64..0.49, v in 0.0f64..1.0) {
            let set = rational(alpha);
            let w = set.weights();
            let total: f64 = (0..=2).map(|i| w[i] * set.forward(i, v)).sum();
            prop_assert!((total - v).abs() < 1e-12);
        }

        #[test]
        fn rational_inverse_round_trips(alpha in 0.01f64..0.49, v in 0.0f64..=1.0, i in 0usize..3) {
            let set = rational(alpha);
            let x = set.inverse(i, v);
            prop_assert!((0.0..=1.0).contains(&x));
            prop_assert!((set.forward(i, x) - v).abs() < 1e-9);
        }
    }
}
