//! Restoring forces of the simulated oscillator, per unit mass.

use serde::{Deserialize, Serialize};

/// Two springs mounted perpendicular to the direction of motion.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SpringGeometry {
    /// N/m, per spring.
    pub spring_constant: f64,
    /// Unstretched spring length, m.
    pub rest_length: f64,
    /// Distance from the mount to the line of motion, m.
    pub mount_length: f64,
    /// Moving mass, kg.
    pub mass: f64,
}

impl SpringGeometry {
    fn stretch(&self, x: f64) -> f64 {
        (self.mount_length * self.mount_length + x * x).sqrt()
    }

    /// Acceleration `2k x (1 − L₀/√(L_m² + x²)) / mass`.
    pub fn force(&self, x: f64) -> f64 {
        2.0 * self.spring_constant * x * (1.0 - self.rest_length / self.stretch(x)) / self.mass
    }

    pub fn stiffness(&self, x: f64) -> f64 {
        let l = self.stretch(x);
        let lm2 = self.mount_length * self.mount_length;
        2.0 * self.spring_constant * (1.0 - self.rest_length * lm2 / (l * l * l)) / self.mass
    }

    pub fn potential(&self, x: f64) -> f64 {
        (self.spring_constant * x * x - 2.0 * self.spring_constant * self.rest_length * (self.stretch(x) - self.mount_length))
            / self.mass
    }
}

/// `ẍ + 2ζω₀ẋ + ω₀²x + N(x) = i(t)` where `N` is either the cubic Duffing
/// term `αx³` or the perpendicular-spring force.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Plant {
    pub natural_frequency: f64,
    pub damping_ratio: f64,
    pub cubic_stiffness: f64,
    pub springs: Option<SpringGeometry>,
}

impl Plant {
    pub fn damping(&self) -> f64 {
        2.0 * self.damping_ratio * self.natural_frequency
    }

    pub fn restoring(&self, x: f64) -> f64 {
        let w2 = self.natural_frequency * self.natural_frequency;
        match &self.springs {
            Some(g) => w2 * x + g.force(x),
            None => w2 * x + self.cubic_stiffness * x * x * x,
        }
    }

    /// `d(restoring)/dx`.
    pub fn stiffness(&self, x: f64) -> f64 {
        let w2 = self.natural_frequency * self.natural_frequency;
        match &self.springs {
            Some(g) => w2 + g.stiffness(x),
            None => w2 + 3.0 * self.cubic_stiffness * x * x,
        }
    }

    pub fn potential(&self, x: f64) -> f64 {
        let w2 = self.natural_frequency * self.natural_frequency;
        match &self.springs {
            Some(g) => 0.5 * w2 * x * x + g.potential(x),
            None => 0.5 * w2 * x * x + 0.25 * self.cubic_stiffness * x.powi(4),
        }
    }

    /// Mechanical energy per unit mass.
    pub fn energy(&self, x: f64, v: f64) -> f64 {
        0.5 * v * v + self.potential(x)
    }

    /// Acceleration for a given total input.
    pub fn acceleration(&self, x: f64, v: f64, input: f64) -> f64 {
        input - self.damping() * v - self.restoring(x)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn spring_force_consistency() {
        let g = SpringGeometry {
            spring_constant: 150.0,
            rest_length: 0.09,
            mount_length: 0.1,
            mass: 1.2,
        };
        for &x in &[-0.07, -0.01, 0.0, 0.02, 0.05] {
            assert!((g.force(x) + g.force(-x)).abs() < 1e-15);
            let h = 1e-6;
            let fd = (g.force(x + h) - g.force(x - h)) / (2.0 * h);
            assert!((fd - g.stiffness(x)).abs() < 1e-6);
            let pd = (g.potential(x + h) - g.potential(x - h)) / (2.0 * h);
            assert!((pd - g.force(x)).abs() < 1e-6);
        }
    }
}
