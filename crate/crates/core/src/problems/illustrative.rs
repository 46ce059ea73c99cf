//! A 1-d multimodal sum of Gaussian bumps, written as one non-increasing and
//! one non-decreasing component.

use crate::bo::Problem;
use crate::composite::ComponentSpec;
use crate::error::{Error, Result};

pub const CENTERS: [f64; 4] = [0.5351, 0.3412, 0.3061, 0.3325];
pub const SIGMA: f64 = 0.05;

#[derive(Debug, Clone)]
pub struct IllustrativeObjective {
    centers: Vec<f64>,
    sigma: f64,
    specs: Vec<ComponentSpec>,
}

impl Default for IllustrativeObjective {
    fn default() -> Self {
        Self::new(CENTERS.to_vec(), SIGMA).expect("built-in constants are valid")
    }
}

impl IllustrativeObjective {
    pub fn new(centers: Vec<f64>, sigma: f64) -> Result<Self> {
        if centers.is_empty() || centers.iter().any(|c| !(0.0..=1.0).contains(c)) {
            return Err(Error::usage("bump centers must lie in [0, 1]"));
        }
        if !(sigma > 0.0) {
            return Err(Error::usage("bump width must be positive"));
        }
        Ok(Self {
            centers,
            sigma,
            specs: vec![
                ComponentSpec { name: "f1".into(), signs: vec![-1] },
                ComponentSpec { name: "f2".into(), signs: vec![1] },
            ],
        })
    }

    /// `φ(y, σ) / φ(0, σ)`.
    fn bump(&self, y: f64) -> f64 {
        (-0.5 * y * y / (self.sigma * self.sigma)).exp()
    }

    /// `(f1, f2)`. f1 flattens each bump to its peak left of the center, so it
    /// starts at 1 and never rises; f2 flattens each bump right of the center,
    /// so it never falls and ends at 1. Both are normalized by `|centers| φ(0)`.
    pub fn components_at(&self, x: f64) -> (f64, f64) {
        let n = self.centers.len() as f64;
        let f1 = self.centers.iter().map(|c| self.bump((x - c).max(0.0))).sum::<f64>() / n;
        let f2 = self.centers.iter().map(|c| self.bump((x - c).min(0.0))).sum::<f64>() / n;
        (f1, f2)
    }

    /// `1 + Σ φ(x − c, σ) / (|centers| φ(0, σ))`.
    pub fn objective(&self, x: f64) -> f64 {
        1.0 + self.centers.iter().map(|c| self.bump(x - c)).sum::<f64>() / self.centers.len() as f64
    }
}

pub fn illustrative_components(x: f64) -> (f64, f64) {
    IllustrativeObjective::default().components_at(x)
}

impl Problem for IllustrativeObjective {
    fn name(&self) -> &str {
        "illustrative"
    }

    fn dimension(&self) -> usize {
        1
    }

    fn components(&self) -> &[ComponentSpec] {
        &self.specs
    }

    fn evaluate(&self, x: &[f64]) -> Result<Vec<f64>> {
        match x {
            [v] if (0.0..=1.0).contains(v) => {
                let (f1, f2) = self.components_at(*v);
                Ok(vec![f1, f2])
            }
            _ => Err(Error::usage(format!("illustrative objective takes one value in [0,1], got {x:?}"))),
        }
    }

    fn transform_descriptions(&self) -> Vec<String> {
        vec!["x0: identity on [0, 1]".into()]
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn endpoint_values() {
        let (f1, f2) = illustrative_components(0.0);
        assert_eq!(f1, 1.0);
        assert!(f2.abs() < 1e-8);
        let (f1, f2) = illustrative_components(1.0);
        assert_eq!(f2, 1.0);
        assert!(f1.abs() < 1e-8);
    }

    #[test]
    fn decomposition_identity_and_monotonicity() {
        let p = IllustrativeObjective::default();
        let mut prev = p.components_at(0.0);
        for i in 0..1000 {
            let x = i as f64 / 999.0;
            let (f1, f2) = p.components_at(x);
            assert!((f1 + f2 - p.objective(x)).abs() < 1e-12);
            assert!(f1 <= prev.0 + 1e-12);
            assert!(f2 >= prev.1 - 1e-12);
            prev = (f1, f2);
        }
    }

    #[test]
    fn rejects_out_of_range() {
        let p = IllustrativeObjective::default();
        assert!(p.evaluate(&[1.5]).is_err());
        assert!(p.evaluate(&[0.1, 0.2]).is_err());
        assert!(IllustrativeObjective::new(vec![0.5], 0.0).is_err());
    }
}
