//! Interfaces described by level-set functions.
//!
//! Convention: `phi < 0` on the enclosed subdomain `Omega_0`, `phi > 0` on
//! `Omega_1`, and the interface is the zero set. Gradients point from
//! `Omega_0` into `Omega_1`, which fixes the interface normal orientation.

use std::fmt;
use std::sync::Arc;

use crate::mesh::Point2;

type ScalarFn = Arc<dyn Fn(Point2) -> f64 + Send + Sync>;
type GradFn = Arc<dyn Fn(Point2) -> [f64; 2] + Send + Sync>;

/// A signed implicit description of the interface.
#[derive(Clone)]
pub enum LevelSet {
    /// `phi = |x - center| - radius`.
    Circle { center: Point2, radius: f64 },
    /// Star-shaped curve `r(theta) = base_radius + amplitude sin(lobes theta)`
    /// centered at the origin; `phi = |x| - r(theta)`.
    Flower {
        base_radius: f64,
        amplitude: f64,
        lobes: u32,
    },
    /// `phi = n . x - offset` with `|n| = 1`. The "interior" side `Omega_0`
    /// is the half-plane `n . x < offset`. Test fixture: not a closed curve.
    Affine { normal: [f64; 2], offset: f64 },
    /// User-supplied signed function and gradient.
    Custom { phi: ScalarFn, grad: GradFn },
}

impl LevelSet {
    pub fn circle(cx: f64, cy: f64, radius: f64) -> Self {
        LevelSet::Circle {
            center: Point2::new(cx, cy),
            radius,
        }
    }

    pub fn flower(base_radius: f64, amplitude: f64, lobes: u32) -> Self {
        LevelSet::Flower {
            base_radius,
            amplitude,
            lobes,
        }
    }

    /// Normalizes the given direction.
    pub fn affine(nx: f64, ny: f64, offset: f64) -> Self {
        let len = (nx * nx + ny * ny).sqrt();
        assert!(len > 0.0, "affine level set needs a nonzero normal");
        LevelSet::Affine {
            normal: [nx / len, ny / len],
            offset: offset / len,
        }
    }

    pub fn custom(
        phi: impl Fn(Point2) -> f64 + Send + Sync + 'static,
        grad: impl Fn(Point2) -> [f64; 2] + Send + Sync + 'static,
    ) -> Self {
        LevelSet::Custom {
            phi: Arc::new(phi),
            grad: Arc::new(grad),
        }
    }

    pub fn value(&self, p: Point2) -> f64 {
        match self {
            LevelSet::Circle { center, radius } => p.dist(*center) - radius,
            LevelSet::Flower {
                base_radius,
                amplitude,
                lobes,
            } => {
                let r = (p.x * p.x + p.y * p.y).sqrt();
                let theta = p.y.atan2(p.x);
                r - (base_radius + amplitude * (*lobes as f64 * theta).sin())
            }
            LevelSet::Affine { normal, offset } => normal[0] * p.x + normal[1] * p.y - offset,
            LevelSet::Custom { phi, .. } => phi(p),
        }
    }

    pub fn gradient(&self, p: Point2) -> [f64; 2] {
        match self {
            LevelSet::Circle { center, .. } => {
                let dx = p.x - center.x;
                let dy = p.y - center.y;
                let r = (dx * dx + dy * dy).sqrt();
                [dx / r, dy / r]
            }
            LevelSet::Flower {
                amplitude, lobes, ..
            } => {
                let r2 = p.x * p.x + p.y * p.y;
                let r = r2.sqrt();
                let k = *lobes as f64;
                let theta = p.y.atan2(p.x);
                let dr = amplitude * k * (k * theta).cos();
                // d/dx = x/r + dr * y/r^2, d/dy = y/r - dr * x/r^2
                [p.x / r + dr * p.y / r2, p.y / r - dr * p.x / r2]
            }
            LevelSet::Affine { normal, .. } => *normal,
            LevelSet::Custom { grad, .. } => grad(p),
        }
    }

    /// Unit normal `grad phi / |grad phi|`, pointing from `Omega_0` into
    /// `Omega_1`.
    pub fn unit_normal(&self, p: Point2) -> [f64; 2] {
        let g = self.gradient(p);
        let len = (g[0] * g[0] + g[1] * g[1]).sqrt();
        [g[0] / len, g[1] / len]
    }
}

impl fmt::Debug for LevelSet {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            LevelSet::Circle { center, radius } => f
                .debug_struct("Circle")
                .field("center", center)
                .field("radius", radius)
                .finish(),
            LevelSet::Flower {
                base_radius,
                amplitude,
                lobes,
            } => f
                .debug_struct("Flower")
                .field("base_radius", base_radius)
                .field("amplitude", amplitude)
                .field("lobes", lobes)
                .finish(),
            LevelSet::Affine { normal, offset } => f
                .debug_struct("Affine")
                .field("normal", normal)
                .field("offset", offset)
                .finish(),
            LevelSet::Custom { .. } => f.write_str("Custom"),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn circle_sign_convention() {
        let ls = LevelSet::circle(0.0, 0.0, 0.6);
        assert!(ls.value(Point2::new(0.0, 0.0)) < 0.0);
        assert!(ls.value(Point2::new(0.9, 0.0)) > 0.0);
        let n = ls.unit_normal(Point2::new(0.6, 0.0));
        assert_relative_eq!(n[0], 1.0, epsilon = 1e-14);
        assert_relative_eq!(n[1], 0.0, epsilon = 1e-14);
    }

    #[test]
    fn flower_gradient_matches_finite_differences() {
        let ls = LevelSet::flower(0.5, 1.0 / 7.0, 5);
        let eps = 1e-6;
        for &(x, y) in &[(0.5, 0.2), (-0.3, 0.4), (0.1, -0.6)] {
            let p = Point2::new(x, y);
            let g = ls.gradient(p);
            let gx = (ls.value(Point2::new(x + eps, y)) - ls.value(Point2::new(x - eps, y)))
                / (2.0 * eps);
            let gy = (ls.value(Point2::new(x, y + eps)) - ls.value(Point2::new(x, y - eps)))
                / (2.0 * eps);
            assert_relative_eq!(g[0], gx, epsilon = 1e-8);
            assert_relative_eq!(g[1], gy, epsilon = 1e-8);
        }
    }

    #[test]
    fn flower_zero_on_curve() {
        let ls = LevelSet::flower(0.5, 1.0 / 7.0, 5);
        for k in 0..20 {
            let theta = 2.0 * std::f64::consts::PI * k as f64 / 20.0;
            let r = 0.5 + (5.0 * theta).sin() / 7.0;
            let p = Point2::new(r * theta.cos(), r * theta.sin());
            assert!(ls.value(p).abs() < 1e-13);
        }
    }

    #[test]
    fn affine_normalizes() {
        let ls = LevelSet::affine(2.0, 0.0, 1.0);
        assert_relative_eq!(ls.value(Point2::new(0.5, 3.0)), 0.0, epsilon = 1e-15);
        assert_relative_eq!(ls.value(Point2::new(1.5, 0.0)), 1.0, epsilon = 1e-15);
    }
}
