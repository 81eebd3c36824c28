//! Symmetric quadrature rules on triangles, in barycentric coordinates.
//! Weights are normalized to sum to one; multiply by the triangle area.

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum QuadRule {
    /// Exact for degree 1.
    Centroid,
    /// Exact for degree 2.
    #[default]
    ThreePoint,
    /// Exact for degree 4.
    SixPoint,
}

const C1: [([f64; 3], f64); 1] = [([1.0 / 3.0, 1.0 / 3.0, 1.0 / 3.0], 1.0)];

const C2: [([f64; 3], f64); 3] = [
    ([2.0 / 3.0, 1.0 / 6.0, 1.0 / 6.0], 1.0 / 3.0),
    ([1.0 / 6.0, 2.0 / 3.0, 1.0 / 6.0], 1.0 / 3.0),
    ([1.0 / 6.0, 1.0 / 6.0, 2.0 / 3.0], 1.0 / 3.0),
];

const A6: f64 = 0.445_948_490_915_965;
const WA6: f64 = 0.223_381_589_678_011;
const B6: f64 = 0.091_576_213_509_771;
const WB6: f64 = 0.109_951_743_655_322;

const C3: [([f64; 3], f64); 6] = [
    ([1.0 - 2.0 * A6, A6, A6], WA6),
    ([A6, 1.0 - 2.0 * A6, A6], WA6),
    ([A6, A6, 1.0 - 2.0 * A6], WA6),
    ([1.0 - 2.0 * B6, B6, B6], WB6),
    ([B6, 1.0 - 2.0 * B6, B6], WB6),
    ([B6, B6, 1.0 - 2.0 * B6], WB6),
];

impl QuadRule {
    /// Rule for quadrature order 1, 2 or 3.
    pub fn from_order(order: u32) -> Result<Self> {
        match order {
            1 => Ok(QuadRule::Centroid),
            2 => Ok(QuadRule::ThreePoint),
            3 => Ok(QuadRule::SixPoint),
            _ => Err(Error::invalid(format!(
                "quadrature order must be 1, 2 or 3, got {order}"
            ))),
        }
    }

    pub fn points(self) -> &'static [([f64; 3], f64)] {
        match self {
            QuadRule::Centroid => &C1,
            QuadRule::ThreePoint => &C2,
            QuadRule::SixPoint => &C3,
        }
    }

    pub fn len(self) -> usize {
        self.points().len()
    }

    pub fn is_empty(self) -> bool {
        false
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    // ∫_T λ₀^a λ₁^b λ₂^c = 2|T| a! b! c! / (a+b+c+2)!
    fn exact(a: u32, b: u32, c: u32) -> f64 {
        let f = |k: u32| (1..=k).map(f64::from).product::<f64>();
        2.0 * f(a) * f(b) * f(c) / f(a + b + c + 2)
    }

    #[test]
    fn rules_are_exact_to_their_degree() {
        for (rule, deg) in [
            (QuadRule::Centroid, 1),
            (QuadRule::ThreePoint, 2),
            (QuadRule::SixPoint, 4),
        ] {
            for a in 0..=deg {
                for b in 0..=(deg - a) {
                    let c = deg - a - b;
                    let q: f64 = rule
                        .points()
                        .iter()
                        .map(|(p, w)| w * p[0].powi(a as i32) * p[1].powi(b as i32) * p[2].powi(c as i32))
                        .sum();
                    assert!((q - exact(a, b, c)).abs() < 1e-12, "{rule:?} {a} {b} {c}");
                }
            }
        }
    }

    #[test]
    fn invalid_order() {
        assert!(QuadRule::from_order(0).is_err());
        assert!(QuadRule::from_order(4).is_err());
    }
}
