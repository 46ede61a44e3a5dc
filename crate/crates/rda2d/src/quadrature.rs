//! Gauss quadrature on segments and triangles.
//!
//! Segment rules are standard Gauss-Legendre. Triangle rules are built by
//! collapsing a tensor Gauss-Legendre grid onto the reference triangle
//! (Duffy transform); the resulting weights are all positive and a rule
//! requested at order `q` integrates every bivariate polynomial of total
//! degree `<= q` exactly.

use crate::mesh::Point2;

/// Gauss-Legendre nodes and weights on `[-1, 1]`.
///
/// Computed by Newton iteration on the Legendre polynomial; accurate to
/// machine precision for the orders used here.
pub fn gauss_legendre(n: usize) -> (Vec<f64>, Vec<f64>) {
    assert!(n >= 1, "quadrature rule needs at least one node");
    let mut nodes = vec![0.0; n];
    let mut weights = vec![0.0; n];
    let m = n.div_ceil(2);
    for i in 0..m {
        // Chebyshev initial guess for the i-th root.
        let mut x = (std::f64::consts::PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
        for _ in 0..100 {
            let (p, d) = legendre_with_derivative(n, x);
            let dx = p / d;
            x -= dx;
            if dx.abs() < 1e-15 {
                break;
            }
        }
        let (_, dp) = legendre_with_derivative(n, x);
        let w = 2.0 / ((1.0 - x * x) * dp * dp);
        nodes[i] = -x;
        nodes[n - 1 - i] = x;
        weights[i] = w;
        weights[n - 1 - i] = w;
    }
    if n % 2 == 1 {
        let (_, d) = legendre_with_derivative(n, 0.0);
        nodes[n / 2] = 0.0;
        weights[n / 2] = 2.0 / (d * d);
    }
    (nodes, weights)
}

fn legendre_with_derivative(n: usize, x: f64) -> (f64, f64) {
    let mut p0 = 1.0;
    let mut p1 = x;
    if n == 0 {
        return (1.0, 0.0);
    }
    for k in 2..=n {
        let kf = k as f64;
        let p2 = ((2.0 * kf - 1.0) * x * p1 - (kf - 1.0) * p0) / kf;
        p0 = p1;
        p1 = p2;
    }
    let d = n as f64 * (x * p1 - p0) / (x * x - 1.0);
    (p1, d)
}

/// A quadrature rule on a segment, with points embedded in the plane.
#[derive(Debug, Clone, Default)]
pub struct SegmentRule {
    pub points: Vec<Point2>,
    pub weights: Vec<f64>,
}

impl SegmentRule {
    /// Gauss-Legendre rule with `n` points on the segment `[a, b]`;
    /// weights sum to the segment length.
    pub fn new(a: Point2, b: Point2, n: usize) -> Self {
        let (xs, ws) = gauss_legendre(n);
        let len = a.dist(b);
        let points = xs
            .iter()
            .map(|&t| {
                let s = 0.5 * (t + 1.0);
                Point2::new(a.x + s * (b.x - a.x), a.y + s * (b.y - a.y))
            })
            .collect();
        let weights = ws.iter().map(|&w| 0.5 * w * len).collect();
        SegmentRule { points, weights }
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }
}

/// Reference-triangle rule on the unit triangle (0,0)-(1,0)-(0,1).
/// Weights sum to 1/2.
#[derive(Debug, Clone)]
pub struct TriangleRule {
    pub points: Vec<(f64, f64)>,
    pub weights: Vec<f64>,
}

impl TriangleRule {
    /// Rule exact for all polynomials of total degree `<= order`.
    pub fn with_order(order: usize) -> Self {
        // Collapsed coordinates: x = u, y = v (1 - u), Jacobian (1 - u).
        // The u-direction picks up one extra degree from the Jacobian.
        let nu = (order + 3) / 2;
        let nv = (order + 2) / 2;
        let (xu, wu) = gauss_legendre(nu.max(1));
        let (xv, wv) = gauss_legendre(nv.max(1));
        let mut points = Vec::with_capacity(nu * nv);
        let mut weights = Vec::with_capacity(nu * nv);
        for (iu, &tu) in xu.iter().enumerate() {
            let u = 0.5 * (tu + 1.0);
            for (iv, &tv) in xv.iter().enumerate() {
                let v = 0.5 * (tv + 1.0);
                points.push((u, v * (1.0 - u)));
                weights.push(0.25 * wu[iu] * wv[iv] * (1.0 - u));
            }
        }
        TriangleRule { points, weights }
    }

    /// Map the reference rule onto the physical triangle `(a, b, c)`;
    /// weights sum to the triangle area.
    pub fn map_to(&self, a: Point2, b: Point2, c: Point2) -> (Vec<Point2>, Vec<f64>) {
        let jac = ((b.x - a.x) * (c.y - a.y) - (c.x - a.x) * (b.y - a.y)).abs();
        let points = self
            .points
            .iter()
            .map(|&(x, y)| {
                Point2::new(
                    a.x + x * (b.x - a.x) + y * (c.x - a.x),
                    a.y + x * (b.y - a.y) + y * (c.y - a.y),
                )
            })
            .collect();
        let weights = self.weights.iter().map(|&w| w * jac).collect();
        (points, weights)
    }
}
