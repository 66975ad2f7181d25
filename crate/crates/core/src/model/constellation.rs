use super::config::ConstellationKind;
use crate::error::{Error, Result};
use num_complex::Complex64;
use std::f64::consts::PI;

/// Finite set of complex points with unit average power.
#[derive(Debug, Clone, PartialEq)]
pub struct Constellation {
    points: Vec<Complex64>,
}

impl Constellation {
    /// Normalizes `points` to unit average power; rejects duplicates.
    pub fn new(points: Vec<Complex64>) -> Result<Self> {
        if points.len() < 2 {
            return Err(Error::Config("constellation needs at least 2 points".into()));
        }
        let power = points.iter().map(|c| c.norm_sqr()).sum::<f64>() / points.len() as f64;
        if !(power > 0.0 && power.is_finite()) {
            return Err(Error::Config("constellation has zero or non-finite power".into()));
        }
        let scale = power.sqrt();
        let points: Vec<Complex64> = points.iter().map(|c| c / scale).collect();
        for i in 0..points.len() {
            for j in 0..i {
                if points[i] == points[j] {
                    return Err(Error::Config(format!("constellation points {j} and {i} coincide")));
                }
            }
        }
        Ok(Constellation { points })
    }

    /// `K`-PSK rotated by `π/K`; `K = 4` gives `(±1 ± j)/√2`.
    pub fn psk(k: usize) -> Result<Self> {
        if k == 4 {
            // exact values, so membership checks compare against the same bits
            let a = std::f64::consts::FRAC_1_SQRT_2;
            return Ok(Constellation {
                points: vec![
                    Complex64::new(a, a),
                    Complex64::new(-a, a),
                    Complex64::new(-a, -a),
                    Complex64::new(a, -a),
                ],
            });
        }
        Constellation::new(
            (0..k)
                .map(|i| Complex64::from_polar(1.0, PI / k as f64 + 2.0 * PI * i as f64 / k as f64))
                .collect(),
        )
    }

    /// Square `K`-QAM (`K` a perfect square).
    pub fn qam(k: usize) -> Result<Self> {
        let side = (k as f64).sqrt().round() as usize;
        if side * side != k || side < 2 {
            return Err(Error::Config(format!("QAM order {k} is not a square ≥ 4")));
        }
        let level = |i: usize| 2.0 * i as f64 - (side - 1) as f64;
        Constellation::new(
            (0..k)
                .map(|i| Complex64::new(level(i % side), level(i / side)))
                .collect(),
        )
    }

    pub fn from_kind(kind: ConstellationKind, k: usize) -> Result<Self> {
        match kind {
            ConstellationKind::Psk => Constellation::psk(k),
            ConstellationKind::Qam => Constellation::qam(k),
        }
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn points(&self) -> &[Complex64] {
        &self.points
    }

    pub fn point(&self, i: usize) -> Complex64 {
        self.points[i]
    }

    pub fn contains(&self, z: Complex64) -> bool {
        self.points.iter().any(|&c| c == z)
    }

    pub fn average_power(&self) -> f64 {
        self.points.iter().map(|c| c.norm_sqr()).sum::<f64>() / self.points.len() as f64
    }

    /// Points as a `K × 2` row-major matrix of `(re, im)`.
    pub fn as_matrix(&self) -> Vec<f64> {
        self.points.iter().flat_map(|c| [c.re, c.im]).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn unit_power_and_distinct() {
        for c in [
            Constellation::psk(4).unwrap(),
            Constellation::psk(8).unwrap(),
            Constellation::qam(16).unwrap(),
            Constellation::qam(4).unwrap(),
        ] {
            assert!((c.average_power() - 1.0).abs() < 1e-12);
        }
        let q = Constellation::psk(4).unwrap();
        let a = std::f64::consts::FRAC_1_SQRT_2;
        assert!(q.contains(Complex64::new(-a, a)));
        assert!(Constellation::qam(8).is_err());
        assert!(Constellation::new(vec![Complex64::new(1.0, 0.0); 2]).is_err());
    }
}
