//! Patch-based constrained least-squares reconstruction: one degree of
//! freedom per active element per side is lifted to a piecewise polynomial
//! of degree `m`.
//!
//! Per element `K` and side `i`, a patch of exactly `N_m` nearby active
//! elements is collected; the local polynomial minimizes the squared misfit
//! against the member barycenter values subject to interpolation at the
//! owner barycenter (and, for interior elements anchoring a cut element,
//! at that cut element's barycenter as well). The constraint rows are
//! eliminated exactly by a Householder null-space basis, so constraint
//! interpolation holds to machine precision.

use nalgebra::DMatrix;
use rayon::prelude::*;
use thiserror::Error;

use crate::active::{ActiveMeshes, SigmaMap};
use crate::mesh::{neighborhood, Point2, TriMesh};
use crate::quadrature::TriangleRule;

#[derive(Debug, Error)]
pub enum ReconstructionError {
    #[error("patch threshold {requested} exceeds the {available} active elements on side {side}")]
    PatchInfeasible {
        side: usize,
        requested: usize,
        available: usize,
    },
    #[error("patch threshold {threshold} is below dim(P_m) + constraints = {required}")]
    ThresholdTooSmall { threshold: usize, required: usize },
    #[error("reduced least-squares system is rank deficient on element {element} (side {side}); patch barycenters are degenerate")]
    RankDeficient { side: usize, element: usize },
    #[error("sampling matrix of element {element} (side {side}) is numerically singular")]
    SingularSampling { side: usize, element: usize },
}

/// Number of monomials of total degree `<= m` in two variables.
pub fn polynomial_dim(m: usize) -> usize {
    (m + 1) * (m + 2) / 2
}

/// Default patch size for degree `m`.
pub fn default_threshold(m: usize) -> usize {
    polynomial_dim(m) + 3
}

/// Exponent pairs of the monomial basis, by total degree then descending
/// x-power: 1, x, y, x^2, xy, y^2, ...
pub fn monomial_exponents(m: usize) -> Vec<(u32, u32)> {
    let mut out = Vec::with_capacity(polynomial_dim(m));
    for d in 0..=m as u32 {
        for b in 0..=d {
            out.push((d - b, b));
        }
    }
    out
}

/// Evaluate scaled monomials `((x-cx)/h)^a ((y-cy)/h)^b` at the given
/// points; one row per monomial.
fn monomial_values(exps: &[(u32, u32)], center: Point2, scale: f64, pts: &[Point2]) -> DMatrix<f64> {
    let mut out = DMatrix::zeros(exps.len(), pts.len());
    for (col, p) in pts.iter().enumerate() {
        let xi = (p.x - center.x) / scale;
        let eta = (p.y - center.y) / scale;
        for (row, &(a, b)) in exps.iter().enumerate() {
            out[(row, col)] = xi.powi(a as i32) * eta.powi(b as i32);
        }
    }
    out
}

fn monomial_gradients(
    exps: &[(u32, u32)],
    center: Point2,
    scale: f64,
    pts: &[Point2],
) -> (DMatrix<f64>, DMatrix<f64>) {
    let mut gx = DMatrix::zeros(exps.len(), pts.len());
    let mut gy = DMatrix::zeros(exps.len(), pts.len());
    for (col, p) in pts.iter().enumerate() {
        let xi = (p.x - center.x) / scale;
        let eta = (p.y - center.y) / scale;
        for (row, &(a, b)) in exps.iter().enumerate() {
            if a > 0 {
                gx[(row, col)] =
                    a as f64 * xi.powi(a as i32 - 1) * eta.powi(b as i32) / scale;
            }
            if b > 0 {
                gy[(row, col)] =
                    b as f64 * xi.powi(a as i32) * eta.powi(b as i32 - 1) / scale;
            }
        }
    }
    (gx, gy)
}

/// An L2(K)-orthonormal polynomial basis on one element, stored as a
/// coefficient matrix over scaled monomials.
#[derive(Debug, Clone)]
pub struct LocalBasis {
    pub center: Point2,
    pub scale: f64,
    pub degree: usize,
    /// Row `r` holds the scaled-monomial coefficients of basis function `r`.
    pub coeff: DMatrix<f64>,
}

impl LocalBasis {
    /// Orthonormalize scaled monomials on element `k` by modified
    /// Gram-Schmidt against the quadrature Gram matrix.
    pub fn new(mesh: &TriMesh, k: usize, m: usize) -> Self {
        let exps = monomial_exponents(m);
        let l = exps.len();
        let center = mesh.barycenter(k);
        let scale = mesh.element_diameters[k];
        let [a, b, c] = mesh.element_vertices(k);
        let rule = TriangleRule::with_order(2 * m.max(1));
        let (pts, wts) = rule.map_to(a, b, c);
        let phi = monomial_values(&exps, center, scale, &pts);
        // Gram[j][k] = int_K mono_j mono_k
        let mut gram = DMatrix::zeros(l, l);
        for j in 0..l {
            for i in j..l {
                let mut s = 0.0;
                for (q, &w) in wts.iter().enumerate() {
                    s += w * phi[(j, q)] * phi[(i, q)];
                }
                gram[(j, i)] = s;
                gram[(i, j)] = s;
            }
        }
        let mut coeff = DMatrix::identity(l, l);
        for j in 0..l {
            // two orthogonalization passes
            for _ in 0..2 {
                for k2 in 0..j {
                    let proj = quad_form(&coeff, j, k2, &gram);
                    let row_k = coeff.row(k2).into_owned();
                    let mut row_j = coeff.row_mut(j);
                    row_j.zip_apply(&row_k, |x, y| *x -= proj * y);
                }
            }
            let norm = quad_form(&coeff, j, j, &gram).sqrt();
            coeff.row_mut(j).scale_mut(1.0 / norm);
        }
        LocalBasis {
            center,
            scale,
            degree: m,
            coeff,
        }
    }

    /// Orthonormal basis values at points, one row per basis function.
    pub fn eval(&self, pts: &[Point2]) -> DMatrix<f64> {
        let exps = monomial_exponents(self.degree);
        &self.coeff * monomial_values(&exps, self.center, self.scale, pts)
    }
}

/// `row_j(coeff) * gram * row_k(coeff)^T`
fn quad_form(coeff: &DMatrix<f64>, j: usize, k: usize, gram: &DMatrix<f64>) -> f64 {
    let l = coeff.ncols();
    let mut s = 0.0;
    for p in 0..l {
        let cj = coeff[(j, p)];
        if cj == 0.0 {
            continue;
        }
        for q in 0..l {
            s += cj * gram[(p, q)] * coeff[(k, q)];
        }
    }
    s
}

/// An element patch on one side.
#[derive(Debug, Clone)]
pub struct Patch {
    pub owner: usize,
    pub side: usize,
    /// Mesh element ids, exactly the patch threshold many.
    pub members: Vec<usize>,
    /// Neighborhood depth `t` reached before the distance fill.
    pub depth: usize,
    /// Elements whose barycenter values are interpolated exactly
    /// (the owner, plus the anchored cut element if there is one).
    pub constraints: Vec<usize>,
}

/// Grow the patch of element `k` on the given side to exactly `threshold`
/// members: whole neighborhood layers while they fit, then the nearest
/// elements of the next layer (ties by index). The anchored cut element is
/// forced in, evicting the farthest unconstrained member if needed.
pub fn build_patch(
    mesh: &TriMesh,
    active: &ActiveMeshes,
    sigma: &SigmaMap,
    side: usize,
    k: usize,
    threshold: usize,
) -> Result<Patch, ReconstructionError> {
    let side_mesh = active.side(side);
    let available = side_mesh.n_elements();
    if threshold > available {
        return Err(ReconstructionError::PatchInfeasible {
            side,
            requested: threshold,
            available,
        });
    }
    let xk = mesh.barycenter(k);
    let active_filter = |e: &usize| side_mesh.dof(*e).is_some();
    let mut depth = 0usize;
    let mut inner: Vec<usize> = vec![k];
    let outer: Vec<usize>;
    loop {
        let candidate: Vec<usize> = neighborhood(mesh, k, depth + 1)
            .into_iter()
            .filter(active_filter)
            .collect();
        if candidate.len() >= threshold {
            outer = candidate;
            break;
        }
        if candidate.len() == inner.len() {
            // side exhausted below the threshold
            return Err(ReconstructionError::PatchInfeasible {
                side,
                requested: threshold,
                available: candidate.len(),
            });
        }
        inner = candidate;
        depth += 1;
    }
    let mut members = inner.clone();
    let mut ring: Vec<usize> = outer
        .iter()
        .copied()
        .filter(|e| !inner.contains(e))
        .collect();
    ring.sort_by(|&a, &b| {
        let da = mesh.barycenter(a).dist(xk);
        let db = mesh.barycenter(b).dist(xk);
        da.partial_cmp(&db).unwrap().then(a.cmp(&b))
    });
    members.extend(ring.into_iter().take(threshold - members.len()));
    members.sort_unstable();

    let mut constraints = vec![k];
    if side_mesh.is_interior[k] {
        if let Some(anchored) = sigma.varsigma(side, k) {
            constraints.push(anchored);
            if !members.contains(&anchored) {
                // evict the farthest member that is not the owner
                let evict = members
                    .iter()
                    .copied()
                    .filter(|&e| e != k)
                    .max_by(|&a, &b| {
                        let da = mesh.barycenter(a).dist(xk);
                        let db = mesh.barycenter(b).dist(xk);
                        da.partial_cmp(&db).unwrap().then(a.cmp(&b))
                    })
                    .expect("patch has more than one member");
                members.retain(|&e| e != evict);
                members.push(anchored);
                members.sort_unstable();
            }
        }
    }
    Ok(Patch {
        owner: k,
        side,
        members,
        depth,
        constraints,
    })
}

/// Exact null-space solution of `min |A c - y|^2` subject to `B c = d`.
///
/// Returns the dense map `M` with `c = M [y; d]` split as `c = My y + Md d`;
/// `My` is `l x N`, `Md` is `l x cns`. The constraint rows are eliminated by
/// Householder reflections, the reduced problem solved by SVD.
fn constrained_ls_operator(
    a: &DMatrix<f64>,
    b: &DMatrix<f64>,
) -> Result<(DMatrix<f64>, DMatrix<f64>), &'static str> {
    let l = a.ncols();
    let n = a.nrows();
    let cns = b.nrows();
    debug_assert!(cns >= 1 && cns <= l);
    // Householder: H B^T = [R; 0], columns of H^T past cns span null(B)
    let mut g = b.transpose();
    let mut ht = DMatrix::<f64>::identity(l, l);
    for k in 0..cns {
        let mut v = DMatrix::zeros(l, 1);
        let mut norm = 0.0;
        for r in k..l {
            v[(r, 0)] = g[(r, k)];
            norm += g[(r, k)] * g[(r, k)];
        }
        let norm = norm.sqrt();
        if norm == 0.0 {
            return Err("zero constraint row");
        }
        let sign = if v[(k, 0)] >= 0.0 { 1.0 } else { -1.0 };
        v[(k, 0)] += sign * norm;
        let vtv: f64 = v.iter().map(|x| x * x).sum();
        // apply P = I - 2 v v^T / (v^T v) on the left of g, right of ht
        let vt_g = v.transpose() * &g;
        g -= &v * vt_g * (2.0 / vtv);
        let ht_v = &ht * &v;
        ht -= ht_v * v.transpose() * (2.0 / vtv);
    }
    // particular solution: R^T y = d with R = g[0..cns, 0..cns] upper
    // c_p = H^T [R^{-T} d; 0] = P1 R^{-T} d
    let r = g.view((0, 0), (cns, cns)).into_owned();
    let p1 = ht.view((0, 0), (l, cns)).into_owned();
    // R^{-T}: lower-triangular solve, cns <= 2
    let rinv_t = {
        let mut m = DMatrix::zeros(cns, cns);
        // invert upper-triangular R, then transpose
        for j in (0..cns).rev() {
            m[(j, j)] = 1.0 / r[(j, j)];
            for i in (0..j).rev() {
                let mut s = 0.0;
                for t in (i + 1)..=j {
                    s += r[(i, t)] * m[(t, j)];
                }
                m[(i, j)] = -s / r[(i, i)];
            }
        }
        m.transpose()
    };
    let pc = &p1 * &rinv_t; // l x cns, maps d -> particular solution
    if cns == l {
        return Ok((DMatrix::zeros(l, n), pc));
    }
    let z = ht.view((0, cns), (l, l - cns)).into_owned();
    let az = a * &z;
    let svd = az.clone().svd(true, true);
    let smax = svd.singular_values.max();
    let smin = svd.singular_values.min();
    if !(smin > 1e-10 * smax) {
        return Err("rank deficient");
    }
    let pinv = svd.pseudo_inverse(1e-12 * smax).map_err(|_| "svd failed")?;
    // c = Pc d + Z W (y - A Pc d)
    let zw = &z * pinv;
    let my = zw.clone();
    let md = &pc - &zw * (a * &pc);
    Ok((my, md))
}

/// Fit a polynomial of the given degree to scattered samples under exact
/// point constraints; coefficients come back in the plain monomial basis
/// (1, x, y, x^2, xy, y^2, ...).
pub fn constrained_poly_fit(
    samples: &[(Point2, f64)],
    constraints: &[(Point2, f64)],
    degree: usize,
) -> Result<Vec<f64>, ReconstructionError> {
    let exps = monomial_exponents(degree);
    let origin = Point2::new(0.0, 0.0);
    let sample_pts: Vec<Point2> = samples.iter().map(|s| s.0).collect();
    let cons_pts: Vec<Point2> = constraints.iter().map(|s| s.0).collect();
    let a = monomial_values(&exps, origin, 1.0, &sample_pts).transpose();
    let b = monomial_values(&exps, origin, 1.0, &cons_pts).transpose();
    let (my, md) = constrained_ls_operator(&a, &b).map_err(|e| match e {
        "rank deficient" => ReconstructionError::RankDeficient { side: 0, element: 0 },
        _ => ReconstructionError::SingularSampling { side: 0, element: 0 },
    })?;
    let y = DMatrix::from_iterator(samples.len(), 1, samples.iter().map(|s| s.1));
    let d = DMatrix::from_iterator(constraints.len(), 1, constraints.iter().map(|s| s.1));
    let c = my * y + md * d;
    Ok(c.column(0).iter().copied().collect())
}

/// The dense per-element block mapping patch DOF values to local polynomial
/// coefficients, stored over scaled monomials for fast evaluation.
#[derive(Debug, Clone)]
pub struct ElementOperator {
    /// Global DOFs of the patch members, parallel to the patch member list.
    pub dofs: Vec<usize>,
    /// `l x N`: member values -> scaled-monomial coefficients.
    pub mono_coeff: DMatrix<f64>,
    pub center: Point2,
    pub scale: f64,
    pub degree: usize,
}

impl ElementOperator {
    /// Values of every member basis column at the points: `N x P`.
    pub fn values_at(&self, pts: &[Point2]) -> DMatrix<f64> {
        let exps = monomial_exponents(self.degree);
        let phi = monomial_values(&exps, self.center, self.scale, pts);
        self.mono_coeff.transpose() * phi
    }

    /// Gradients of every member basis column: two `N x P` matrices.
    pub fn grads_at(&self, pts: &[Point2]) -> (DMatrix<f64>, DMatrix<f64>) {
        let exps = monomial_exponents(self.degree);
        let (gx, gy) = monomial_gradients(&exps, self.center, self.scale, pts);
        (
            self.mono_coeff.transpose() * gx,
            self.mono_coeff.transpose() * gy,
        )
    }

    /// Evaluate the reconstructed polynomial for a global DOF vector.
    pub fn evaluate(&self, dof_values: &[f64], p: Point2) -> f64 {
        let vals = self.values_at(&[p]);
        self.dofs
            .iter()
            .enumerate()
            .map(|(r, &d)| dof_values[d] * vals[(r, 0)])
            .sum()
    }

    /// Evaluate the gradient for a global DOF vector.
    pub fn evaluate_grad(&self, dof_values: &[f64], p: Point2) -> [f64; 2] {
        let (gx, gy) = self.grads_at(&[p]);
        let mut out = [0.0, 0.0];
        for (r, &d) in self.dofs.iter().enumerate() {
            out[0] += dof_values[d] * gx[(r, 0)];
            out[1] += dof_values[d] * gy[(r, 0)];
        }
        out
    }
}

/// Stability constant of one patch from the singular values of the
/// orthonormal-basis sampling matrix (`d = 2`).
fn stability_constant(sampling: &DMatrix<f64>, h: f64) -> Option<f64> {
    let svd = sampling.clone().svd(false, false);
    let smin = svd.singular_values.min();
    if smin * smin * h * h < 1e-28 {
        return None;
    }
    Some(1.0 / (h * smin))
}

/// One row of the stability report.
#[derive(Debug, Clone, Copy)]
pub struct LambdaRow {
    pub side: usize,
    pub element: usize,
    pub depth: usize,
    pub lambda: f64,
}

/// Per-patch stability constants and the aggregate used in the analysis.
#[derive(Debug, Clone)]
pub struct StabilityReport {
    pub rows: Vec<LambdaRow>,
    /// `max (1 + t_m Lambda_{K,i} sqrt(N))` over all patches.
    pub lambda_m: f64,
    pub max_depth: usize,
    pub side_min: [f64; 2],
    pub side_max: [f64; 2],
    /// `max <= 5 min` on both sides.
    pub adequate: bool,
}

impl StabilityReport {
    fn from_rows(rows: Vec<LambdaRow>, threshold: usize) -> Self {
        let max_depth = rows.iter().map(|r| r.depth).max().unwrap_or(0);
        let mut side_min = [f64::INFINITY; 2];
        let mut side_max = [0.0_f64; 2];
        for r in &rows {
            side_min[r.side] = side_min[r.side].min(r.lambda);
            side_max[r.side] = side_max[r.side].max(r.lambda);
        }
        let lambda_m = rows
            .iter()
            .map(|r| 1.0 + max_depth as f64 * r.lambda * (threshold as f64).sqrt())
            .fold(0.0_f64, f64::max);
        let adequate = (0..2).all(|s| {
            !side_min[s].is_finite() || side_max[s] <= 5.0 * side_min[s]
        });
        StabilityReport {
            rows,
            lambda_m,
            max_depth,
            side_min,
            side_max,
            adequate,
        }
    }

    /// CSV dump: `side,element,t_depth,lambda`.
    pub fn write_csv(&self, out: &mut dyn std::io::Write) -> std::io::Result<()> {
        writeln!(out, "side,element,t_depth,lambda")?;
        for r in &self.rows {
            writeln!(out, "{},{},{},{:.12e}", r.side, r.element, r.depth, r.lambda)?;
        }
        Ok(())
    }
}

/// Reconstruction configuration.
#[derive(Debug, Clone, Copy)]
pub struct ReconstructionConfig {
    /// Patch size; defaults to [`default_threshold`] of the degree.
    pub threshold: Option<usize>,
    /// Grow the threshold by 2 while the adequacy criterion fails.
    pub adequacy_autoraise: bool,
    pub max_raises: usize,
}

impl Default for ReconstructionConfig {
    fn default() -> Self {
        ReconstructionConfig {
            threshold: None,
            adequacy_autoraise: true,
            max_raises: 5,
        }
    }
}

/// The assembled reconstruction operators for both sides.
#[derive(Debug)]
pub struct Reconstruction {
    pub degree: usize,
    /// Patch size actually used (after any adequacy raises).
    pub threshold: usize,
    /// Per side, indexed by mesh element id.
    pub patches: [Vec<Option<Patch>>; 2],
    pub ops: [Vec<Option<ElementOperator>>; 2],
    pub stability: StabilityReport,
}

impl Reconstruction {
    pub fn op(&self, side: usize, element: usize) -> &ElementOperator {
        self.ops[side][element]
            .as_ref()
            .expect("element not active on this side")
    }

    pub fn patch(&self, side: usize, element: usize) -> &Patch {
        self.patches[side][element]
            .as_ref()
            .expect("element not active on this side")
    }
}

/// Build patches, least-squares operators, and stability constants for both
/// sides, raising the patch size until the adequacy criterion holds (when
/// enabled).
pub fn build_reconstruction(
    mesh: &TriMesh,
    active: &ActiveMeshes,
    sigma: &SigmaMap,
    m: usize,
    config: &ReconstructionConfig,
) -> Result<Reconstruction, ReconstructionError> {
    let l = polynomial_dim(m);
    let max_constraints = 2.min(l);
    let mut threshold = config.threshold.unwrap_or_else(|| default_threshold(m));
    if threshold < l + max_constraints {
        return Err(ReconstructionError::ThresholdTooSmall {
            threshold,
            required: l + max_constraints,
        });
    }
    // orthonormal local bases are shared by both sides
    let bases: Vec<LocalBasis> = (0..mesh.n_elements())
        .into_par_iter()
        .map(|k| LocalBasis::new(mesh, k, m))
        .collect();
    let mut raises = 0usize;
    loop {
        let built = build_at_threshold(mesh, active, sigma, m, threshold, &bases)?;
        if built.stability.adequate || !config.adequacy_autoraise || raises >= config.max_raises {
            return Ok(built);
        }
        threshold += 2;
        raises += 1;
    }
}

fn build_at_threshold(
    mesh: &TriMesh,
    active: &ActiveMeshes,
    sigma: &SigmaMap,
    m: usize,
    threshold: usize,
    bases: &[LocalBasis],
) -> Result<Reconstruction, ReconstructionError> {
    let l = polynomial_dim(m);
    let n_elem = mesh.n_elements();
    let mut patches: [Vec<Option<Patch>>; 2] = [vec![None; n_elem], vec![None; n_elem]];
    let mut ops: [Vec<Option<ElementOperator>>; 2] = [vec![None; n_elem], vec![None; n_elem]];
    let mut rows: Vec<LambdaRow> = Vec::new();
    for side in 0..2 {
        let list = &active.side(side).elements;
        let built: Vec<(Patch, ElementOperator, LambdaRow)> = list
            .par_iter()
            .map(|&k| -> Result<_, ReconstructionError> {
                let mut patch = build_patch(mesh, active, sigma, side, k, threshold)?;
                // constraints capped by the polynomial dimension: piecewise
                // constants can only interpolate at a single point
                patch.constraints.truncate(2.min(l));
                let basis = &bases[k];
                let member_centers: Vec<Point2> =
                    patch.members.iter().map(|&e| mesh.barycenter(e)).collect();
                let cons_centers: Vec<Point2> = patch
                    .constraints
                    .iter()
                    .map(|&e| mesh.barycenter(e))
                    .collect();
                let a = basis.eval(&member_centers).transpose();
                let b = basis.eval(&cons_centers).transpose();
                let lambda = stability_constant(&a, mesh.element_diameters[k]).ok_or(
                    ReconstructionError::SingularSampling { side, element: k },
                )?;
                let (my, md) = constrained_ls_operator(&a, &b).map_err(|e| match e {
                    "rank deficient" => ReconstructionError::RankDeficient { side, element: k },
                    _ => ReconstructionError::SingularSampling { side, element: k },
                })?;
                // fold the constraint selection into the member map
                let mut coeff_ortho = my;
                for (ci, ce) in patch.constraints.iter().enumerate() {
                    let pos = patch
                        .members
                        .iter()
                        .position(|e| e == ce)
                        .expect("constraint elements are patch members");
                    for r in 0..l {
                        coeff_ortho[(r, pos)] += md[(r, ci)];
                    }
                }
                let mono_coeff = basis.coeff.transpose() * &coeff_ortho;
                let dofs: Vec<usize> = patch
                    .members
                    .iter()
                    .map(|&e| active.side(side).dof(e).expect("member is active"))
                    .collect();
                let op = ElementOperator {
                    dofs,
                    mono_coeff,
                    center: basis.center,
                    scale: basis.scale,
                    degree: m,
                };
                let row = LambdaRow {
                    side,
                    element: k,
                    depth: patch.depth,
                    lambda,
                };
                Ok((patch, op, row))
            })
            .collect::<Result<_, _>>()?;
        for (patch, op, row) in built {
            let k = patch.owner;
            patches[side][k] = Some(patch);
            ops[side][k] = Some(op);
            rows.push(row);
        }
    }
    rows.sort_by_key(|r| (r.side, r.element));
    let stability = StabilityReport::from_rows(rows, threshold);
    Ok(Reconstruction {
        degree: m,
        threshold,
        patches,
        ops,
        stability,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::active::{build_active_meshes, build_sigma_map};
    use crate::geometry::classify_mesh;
    use crate::levelset::LevelSet;
    use crate::mesh::{build_uniform_mesh, test_support::mesh_from_raw};
    use approx::{assert_abs_diff_eq, assert_relative_eq};

    #[test]
    fn fit_interpolates_when_square() {
        let samples = [
            (Point2::new(0.0, 0.0), 1.0),
            (Point2::new(1.0, 0.0), 2.0),
            (Point2::new(0.0, 1.0), 3.0),
        ];
        let constraints = [(Point2::new(0.0, 0.0), 1.0)];
        let c = constrained_poly_fit(&samples, &constraints, 1).unwrap();
        // p = 1 + x + 2y
        assert_abs_diff_eq!(c[0], 1.0, epsilon = 1e-13);
        assert_abs_diff_eq!(c[1], 1.0, epsilon = 1e-13);
        assert_abs_diff_eq!(c[2], 2.0, epsilon = 1e-13);
    }

    /// Dense KKT oracle for the equality-constrained least squares.
    fn kkt_oracle(
        samples: &[(Point2, f64)],
        constraints: &[(Point2, f64)],
        degree: usize,
    ) -> Vec<f64> {
        let exps = monomial_exponents(degree);
        let l = exps.len();
        let c = constraints.len();
        let origin = Point2::new(0.0, 0.0);
        let pts: Vec<Point2> = samples.iter().map(|s| s.0).collect();
        let cpts: Vec<Point2> = constraints.iter().map(|s| s.0).collect();
        let a = monomial_values(&exps, origin, 1.0, &pts).transpose();
        let b = monomial_values(&exps, origin, 1.0, &cpts).transpose();
        let mut kkt = DMatrix::zeros(l + c, l + c);
        let ata = a.transpose() * &a;
        for i in 0..l {
            for j in 0..l {
                kkt[(i, j)] = 2.0 * ata[(i, j)];
            }
        }
        for i in 0..c {
            for j in 0..l {
                kkt[(l + i, j)] = b[(i, j)];
                kkt[(j, l + i)] = b[(i, j)];
            }
        }
        let mut rhs = DMatrix::zeros(l + c, 1);
        let y = DMatrix::from_iterator(samples.len(), 1, samples.iter().map(|s| s.1));
        let aty = a.transpose() * y;
        for i in 0..l {
            rhs[(i, 0)] = 2.0 * aty[(i, 0)];
        }
        for i in 0..c {
            rhs[(l + i, 0)] = constraints[i].1;
        }
        let sol = kkt.lu().solve(&rhs).unwrap();
        (0..l).map(|i| sol[(i, 0)]).collect()
    }

    #[test]
    fn fit_matches_dense_kkt_oracle() {
        let samples = [
            (Point2::new(0.0, 0.0), 0.0),
            (Point2::new(1.0, 0.0), 1.0),
            (Point2::new(2.0, 0.0), 2.0),
            (Point2::new(0.0, 1.0), 5.0),
        ];
        let constraints = [(Point2::new(0.0, 0.0), 0.0)];
        let ours = constrained_poly_fit(&samples, &constraints, 1).unwrap();
        let oracle = kkt_oracle(&samples, &constraints, 1);
        for (a, b) in ours.iter().zip(&oracle) {
            assert_abs_diff_eq!(a, b, epsilon = 1e-12);
        }
    }

    #[test]
    fn fit_recovers_affine_exactly() {
        let p = |x: f64, y: f64| 3.0 - 2.0 * x + y;
        let samples: Vec<(Point2, f64)> = [(0.1, 0.2), (0.9, 0.3), (0.5, 0.8), (0.2, 0.6), (0.7, 0.7)]
            .iter()
            .map(|&(x, y)| (Point2::new(x, y), p(x, y)))
            .collect();
        let constraints = [(Point2::new(0.4, 0.4), p(0.4, 0.4))];
        let c = constrained_poly_fit(&samples, &constraints, 1).unwrap();
        assert_abs_diff_eq!(c[0], 3.0, epsilon = 1e-13);
        assert_abs_diff_eq!(c[1], -2.0, epsilon = 1e-13);
        assert_abs_diff_eq!(c[2], 1.0, epsilon = 1e-13);
    }

    #[test]
    fn fit_with_two_constraints_satisfies_both() {
        let samples: Vec<(Point2, f64)> = [
            (0.0, 0.0, 1.0),
            (1.0, 0.0, 0.5),
            (0.0, 1.0, -0.3),
            (1.0, 1.0, 2.0),
            (0.5, 0.2, 0.9),
            (0.2, 0.7, 0.1),
        ]
        .iter()
        .map(|&(x, y, v)| (Point2::new(x, y), v))
        .collect();
        let constraints = [
            (Point2::new(0.0, 0.0), 1.0),
            (Point2::new(1.0, 1.0), 2.0),
        ];
        let c = constrained_poly_fit(&samples, &constraints, 2).unwrap();
        let eval = |x: f64, y: f64| {
            let exps = monomial_exponents(2);
            exps.iter()
                .zip(&c)
                .map(|(&(a, b), &cc)| cc * x.powi(a as i32) * y.powi(b as i32))
                .sum::<f64>()
        };
        assert_abs_diff_eq!(eval(0.0, 0.0), 1.0, epsilon = 1e-12);
        assert_abs_diff_eq!(eval(1.0, 1.0), 2.0, epsilon = 1e-12);
    }

    #[test]
    fn local_basis_is_orthonormal() {
        let mesh = build_uniform_mesh(4).unwrap();
        for m in 0..=4 {
            let basis = LocalBasis::new(&mesh, 5, m);
            let [a, b, c] = mesh.element_vertices(5);
            let rule = TriangleRule::with_order(2 * m.max(1) + 2);
            let (pts, wts) = rule.map_to(a, b, c);
            let vals = basis.eval(&pts);
            let l = polynomial_dim(m);
            for i in 0..l {
                for j in 0..l {
                    let mut s = 0.0;
                    for (q, &w) in wts.iter().enumerate() {
                        s += w * vals[(i, q)] * vals[(j, q)];
                    }
                    let expect = if i == j { 1.0 } else { 0.0 };
                    assert_abs_diff_eq!(s, expect, epsilon = 1e-11);
                }
            }
        }
    }

    #[test]
    fn stability_constant_on_unit_right_triangle() {
        // area 1/2, diameter sqrt(2): orthonormal constant is sqrt(2), and a
        // single-member patch gives Lambda = (h^2 * 2)^{-1/2} = 0.5
        let mesh = mesh_from_raw(
            vec![
                Point2::new(0.0, 0.0),
                Point2::new(1.0, 0.0),
                Point2::new(0.0, 1.0),
            ],
            vec![[0, 1, 2]],
        );
        let basis = LocalBasis::new(&mesh, 0, 0);
        let a = basis.eval(&[mesh.barycenter(0)]).transpose();
        assert_relative_eq!(a[(0, 0)], std::f64::consts::SQRT_2, epsilon = 1e-12);
        let lambda = stability_constant(&a, mesh.element_diameters[0]).unwrap();
        assert_relative_eq!(lambda, 0.5, epsilon = 1e-12);
    }

    fn circle_reconstruction(n: usize, m: usize) -> (crate::mesh::TriMesh, ActiveMeshes, Reconstruction) {
        let mesh = build_uniform_mesh(n).unwrap();
        let ls = LevelSet::circle(0.0, 0.0, 0.6);
        let classes = classify_mesh(&ls, &mesh, 3).unwrap();
        let active = build_active_meshes(&mesh, &classes).unwrap();
        let sigma = build_sigma_map(&mesh, &active, 3).unwrap();
        let recon =
            build_reconstruction(&mesh, &active, &sigma, m, &ReconstructionConfig::default())
                .unwrap();
        (mesh, active, recon)
    }

    #[test]
    fn patches_have_exact_threshold_size() {
        let (_, active, recon) = circle_reconstruction(10, 1);
        for side in 0..2 {
            for &k in &active.side(side).elements {
                assert_eq!(recon.patch(side, k).members.len(), recon.threshold);
            }
        }
    }

    #[test]
    fn patch_of_interior_element_is_nearest_neighbors() {
        let mesh = build_uniform_mesh(10).unwrap();
        let ls = LevelSet::circle(0.0, 0.0, 0.6);
        let classes = classify_mesh(&ls, &mesh, 3).unwrap();
        let active = build_active_meshes(&mesh, &classes).unwrap();
        let sigma = build_sigma_map(&mesh, &active, 3).unwrap();
        // an interior element far from the interface that anchors no cut
        // element, so no constraint forcing applies
        let k = (0..mesh.n_elements())
            .find(|&k| active.side(1).is_interior[k] && sigma.varsigma(1, k).is_none())
            .unwrap();
        let patch = build_patch(&mesh, &active, &sigma, 1, k, 6).unwrap();
        // oracle: brute-force vertex-sharing scan, distance sorted
        let xk = mesh.barycenter(k);
        let mut nbrs: Vec<usize> = (0..mesh.n_elements())
            .filter(|&e| {
                mesh.elements[e]
                    .iter()
                    .any(|v| mesh.elements[k].contains(v))
            })
            .filter(|&e| active.side(1).dof(e).is_some())
            .collect();
        nbrs.sort_by(|&a, &b| {
            mesh.barycenter(a)
                .dist(xk)
                .partial_cmp(&mesh.barycenter(b).dist(xk))
                .unwrap()
                .then(a.cmp(&b))
        });
        let mut expect: Vec<usize> = nbrs.into_iter().take(6).collect();
        expect.sort_unstable();
        assert_eq!(patch.members, expect);
    }

    #[test]
    fn anchored_cut_element_forced_into_patch() {
        let (_, active, recon) = circle_reconstruction(20, 1);
        for side in 0..2 {
            for &k in &active.side(side).elements {
                let patch = recon.patch(side, k);
                for ce in &patch.constraints {
                    assert!(patch.members.contains(ce));
                }
            }
        }
    }

    #[test]
    fn reconstruction_reproduces_constants_and_affine() {
        let (mesh, active, recon) = circle_reconstruction(10, 1);
        let n = active.n_dofs;
        let ones = vec![1.0; n];
        // affine data per DOF: sample p(x, y) = x at barycenters
        let mut affine = vec![0.0; n];
        for side in 0..2 {
            for &k in &active.side(side).elements {
                affine[active.side(side).dof(k).unwrap()] = mesh.barycenter(k).x;
            }
        }
        for side in 0..2 {
            for &k in &active.side(side).elements {
                let op = recon.op(side, k);
                let [a, b, c] = mesh.element_vertices(k);
                for (t1, t2) in [(0.2, 0.3), (0.6, 0.1), (0.1, 0.7), (0.3, 0.3), (0.05, 0.9)] {
                    let p = Point2::new(
                        a.x + t1 * (b.x - a.x) + t2 * (c.x - a.x),
                        a.y + t1 * (b.y - a.y) + t2 * (c.y - a.y),
                    );
                    assert_abs_diff_eq!(op.evaluate(&ones, p), 1.0, epsilon = 1e-13);
                    assert_abs_diff_eq!(op.evaluate(&affine, p), p.x, epsilon = 1e-12);
                }
            }
        }
    }

    #[test]
    fn constraint_interpolation_for_unit_vectors() {
        let (mesh, active, recon) = circle_reconstruction(10, 2);
        let n = active.n_dofs;
        for side in 0..2 {
            for &k in active.side(side).elements.iter().take(40) {
                let patch = recon.patch(side, k);
                let op = recon.op(side, k);
                for &ce in &patch.constraints {
                    let dof = active.side(side).dof(ce).unwrap();
                    let mut e = vec![0.0; n];
                    e[dof] = 1.0;
                    let v = op.evaluate(&e, mesh.barycenter(ce));
                    assert_abs_diff_eq!(v, 1.0, epsilon = 1e-12);
                    // a unit vector on a non-constraint member evaluates to 0
                    // at the constraint points
                    if let Some(&other) = patch
                        .members
                        .iter()
                        .find(|&&mz| !patch.constraints.contains(&mz))
                    {
                        let mut e2 = vec![0.0; n];
                        e2[active.side(side).dof(other).unwrap()] = 1.0;
                        let v2 = op.evaluate(&e2, mesh.barycenter(ce));
                        assert_abs_diff_eq!(v2, 0.0, epsilon = 1e-12);
                    }
                }
            }
        }
    }

    #[test]
    fn lambda_nonincreasing_under_patch_growth() {
        let mesh = build_uniform_mesh(10).unwrap();
        let ls = LevelSet::circle(0.0, 0.0, 0.6);
        let classes = classify_mesh(&ls, &mesh, 3).unwrap();
        let active = build_active_meshes(&mesh, &classes).unwrap();
        let sigma = build_sigma_map(&mesh, &active, 3).unwrap();
        let basis = LocalBasis::new(&mesh, 0, 1);
        let k = 0;
        let mut last = f64::INFINITY;
        for threshold in [6, 8, 10, 12] {
            let patch = build_patch(&mesh, &active, &sigma, 1, k, threshold).unwrap();
            let centers: Vec<Point2> = patch.members.iter().map(|&e| mesh.barycenter(e)).collect();
            let a = basis.eval(&centers).transpose();
            let lambda = stability_constant(&a, mesh.element_diameters[k]).unwrap();
            assert!(lambda <= last + 1e-12);
            last = lambda;
        }
    }

    #[test]
    fn dof_count_independent_of_degree() {
        for m in [0, 1, 2, 3] {
            let (_, active, recon) = circle_reconstruction(10, m);
            let op_count: usize = (0..2)
                .map(|s| recon.ops[s].iter().filter(|o| o.is_some()).count())
                .sum();
            assert_eq!(op_count, active.n_dofs);
        }
    }

    #[test]
    fn linearity_of_reconstruction() {
        let (mesh, active, recon) = circle_reconstruction(10, 2);
        let n = active.n_dofs;
        let v: Vec<f64> = (0..n).map(|i| (i as f64 * 0.7).sin()).collect();
        let w: Vec<f64> = (0..n).map(|i| (i as f64 * 1.3).cos()).collect();
        let combo: Vec<f64> = v.iter().zip(&w).map(|(a, b)| 2.0 * a - 0.5 * b).collect();
        let k = active.side(1).elements[3];
        let op = recon.op(1, k);
        let p = mesh.barycenter(k);
        let lhs = op.evaluate(&combo, p);
        let rhs = 2.0 * op.evaluate(&v, p) - 0.5 * op.evaluate(&w, p);
        assert_abs_diff_eq!(lhs, rhs, epsilon = 1e-12);
    }
}
