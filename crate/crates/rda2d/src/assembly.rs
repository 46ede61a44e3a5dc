//! Assembly of the interior-penalty bilinear forms over the reconstructed
//! space: the degree-`m` system with harmonic-weighted interface terms, the
//! matching piecewise-constant jump operator, the rediscretized per-level
//! operators, and the injection transfers between levels.
//!
//! Penalties on active-mesh faces integrate over whole faces even when the
//! face is cut; this is the stabilization mechanism of the scheme. Interface
//! flux averages use harmonic weights, which keeps the forms robust under
//! large coefficient jumps.

use std::sync::Arc;

use nalgebra::DMatrix;
use sprs::{CsMat, TriMat};
use thiserror::Error;

use crate::active::{build_active_meshes, ActiveError, ActiveMeshes};
use crate::geometry::{CutGeometry, ElementClass, GeometryConfig, GeometryError};
use crate::levelset::LevelSet;
use crate::mesh::{MeshHierarchy, Point2, TriMesh};
use crate::quadrature::TriangleRule;
use crate::reconstruction::Reconstruction;

pub type ScalarFn = Arc<dyn Fn(Point2) -> f64 + Send + Sync>;
pub type GradientFn = Arc<dyn Fn(Point2) -> [f64; 2] + Send + Sync>;
pub type BoundaryFn = Arc<dyn Fn(Point2, usize) -> f64 + Send + Sync>;

/// Symmetric sparse matrix in CSR form.
pub type SparseSym = CsMat<f64>;

#[derive(Debug, Error)]
pub enum AssemblyError {
    #[error("penalty parameter must be positive, got {0}")]
    NonPositivePenalty(f64),
    #[error("no reconstruction operator for element {element} on side {side}")]
    MissingReconstruction { side: usize, element: usize },
    #[error(transparent)]
    Geometry(#[from] GeometryError),
    #[error(transparent)]
    Active(#[from] ActiveError),
    #[error("fine DOF of element {element} on level {level} has no active parent (side {side})")]
    OrphanFineDof {
        level: usize,
        element: usize,
        side: usize,
    },
    #[error("aggregated mass entry vanishes on level {level}; coarse classification inconsistent")]
    DegenerateMass { level: usize },
}

/// Exact solution data for error studies.
#[derive(Clone)]
pub struct ExactSolution {
    pub value: [ScalarFn; 2],
    pub gradient: [GradientFn; 2],
}

/// Problem data: coefficients, sources, boundary datum, and the interface
/// jump data (value jump `a`, flux jump `b` against the interface normal).
#[derive(Clone)]
pub struct ProblemSpec {
    pub alpha: [f64; 2],
    pub source: [ScalarFn; 2],
    /// Dirichlet datum; receives the side owning the boundary portion.
    pub boundary: BoundaryFn,
    /// `a = u_0 - u_1` on the interface.
    pub jump_value: ScalarFn,
    /// `b = (alpha_0 grad u_0 - alpha_1 grad u_1) . n` on the interface.
    pub jump_flux: ScalarFn,
    pub exact: Option<ExactSolution>,
}

/// Interface averaging weights `w0 = a1/(a0+a1)`, `w1 = a0/(a0+a1)` and the
/// harmonic mean `2 a0 a1 / (a0 + a1)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HarmonicWeights {
    pub w0: f64,
    pub w1: f64,
    pub mean: f64,
}

pub fn harmonic_weights(alpha0: f64, alpha1: f64) -> HarmonicWeights {
    let s = alpha0 + alpha1;
    HarmonicWeights {
        w0: alpha1 / s,
        w1: alpha0 / s,
        mean: 2.0 * alpha0 * alpha1 / s,
    }
}

impl ProblemSpec {
    pub fn weights(&self) -> HarmonicWeights {
        harmonic_weights(self.alpha[0], self.alpha[1])
    }
}

/// Term selection; the default assembles everything. `boundary = false`
/// drops every boundary-face term regardless of the other flags.
#[derive(Debug, Clone, Copy)]
pub struct AssemblyParts {
    pub volume: bool,
    pub consistency: bool,
    pub penalty: bool,
    pub boundary: bool,
}

impl Default for AssemblyParts {
    fn default() -> Self {
        AssemblyParts {
            volume: true,
            consistency: true,
            penalty: true,
            boundary: true,
        }
    }
}

/// CSR builder with a precomputed symmetric pattern; values are scattered
/// serially in deterministic order.
struct MatrixBuilder {
    n: usize,
    row_cols: Vec<Vec<u32>>,
    indptr: Vec<usize>,
    indices: Vec<usize>,
    data: Vec<f64>,
    sealed: bool,
}

impl MatrixBuilder {
    fn new(n: usize) -> Self {
        MatrixBuilder {
            n,
            row_cols: vec![Vec::new(); n],
            indptr: Vec::new(),
            indices: Vec::new(),
            data: Vec::new(),
            sealed: false,
        }
    }

    /// Declare the coupling block `rows x cols` (and its transpose).
    fn couple(&mut self, rows: &[usize], cols: &[usize]) {
        for &r in rows {
            for &c in cols {
                self.row_cols[r].push(c as u32);
            }
        }
        for &c in cols {
            for &r in rows {
                self.row_cols[c].push(r as u32);
            }
        }
    }

    fn seal(&mut self) {
        let mut indptr = Vec::with_capacity(self.n + 1);
        indptr.push(0usize);
        let mut indices = Vec::new();
        for r in 0..self.n {
            let cols = &mut self.row_cols[r];
            cols.sort_unstable();
            cols.dedup();
            indices.extend(cols.iter().map(|&c| c as usize));
            indptr.push(indices.len());
            cols.clear();
            cols.shrink_to_fit();
        }
        self.data = vec![0.0; indices.len()];
        self.indptr = indptr;
        self.indices = indices;
        self.sealed = true;
    }

    #[inline]
    fn add(&mut self, r: usize, c: usize, v: f64) {
        debug_assert!(self.sealed);
        let lo = self.indptr[r];
        let hi = self.indptr[r + 1];
        let pos = self.indices[lo..hi]
            .binary_search(&c)
            .expect("entry outside the precomputed pattern");
        self.data[lo + pos] += v;
    }

    fn scatter(&mut self, rows: &[usize], cols: &[usize], block: &DMatrix<f64>) {
        for (a, &r) in rows.iter().enumerate() {
            for (b, &c) in cols.iter().enumerate() {
                let v = block[(a, b)];
                if v != 0.0 {
                    self.add(r, c, v);
                }
            }
        }
    }

    fn finish(self) -> CsMat<f64> {
        CsMat::new((self.n, self.n), self.indptr, self.indices, self.data)
    }
}

/// Per-element volume points and weights of one side.
fn side_volume_rule(
    geom: &CutGeometry,
    mesh: &TriMesh,
    reference: &TriangleRule,
    k: usize,
    side: usize,
) -> Option<(Vec<Point2>, Vec<f64>)> {
    match (geom.classes[k], side) {
        (ElementClass::Interior0, 0) | (ElementClass::Interior1, 1) => {
            let [a, b, c] = mesh.element_vertices(k);
            Some(reference.map_to(a, b, c))
        }
        (ElementClass::Cut, _) => {
            let rule = geom.cut_rules[k].as_ref().unwrap();
            let v = if side == 0 { &rule.vol0 } else { &rule.vol1 };
            Some((v.points.clone(), v.weights.clone()))
        }
        _ => None,
    }
}

/// Assemble the degree-`m` Nitsche system and its right-hand side.
pub fn assemble_highorder(
    mesh: &TriMesh,
    geom: &CutGeometry,
    active: &ActiveMeshes,
    recon: &Reconstruction,
    spec: &ProblemSpec,
    penalty_mu: f64,
    parts: AssemblyParts,
) -> Result<(SparseSym, Vec<f64>), AssemblyError> {
    if !(penalty_mu > 0.0) {
        return Err(AssemblyError::NonPositivePenalty(penalty_mu));
    }
    for side in 0..2 {
        for &k in &active.side(side).elements {
            if recon.ops[side][k].is_none() {
                return Err(AssemblyError::MissingReconstruction { side, element: k });
            }
        }
    }
    let n = active.n_dofs;
    let hw = spec.weights();
    let reference = TriangleRule::with_order(geom.config.volume_order);

    // symbolic pass
    let mut builder = MatrixBuilder::new(n);
    for k in 0..mesh.n_elements() {
        for side in 0..2 {
            if active.side(side).dof(k).is_none() {
                continue;
            }
            let dofs = &recon.op(side, k).dofs;
            builder.couple(dofs, dofs);
        }
    }
    for f in 0..mesh.faces.len() {
        let (kp, km) = mesh.faces[f].elements;
        if let Some(km) = km {
            for side in 0..2 {
                if active.side(side).dof(kp).is_some() && active.side(side).dof(km).is_some() {
                    let dp = &recon.op(side, kp).dofs;
                    let dm = &recon.op(side, km).dofs;
                    builder.couple(dp, dp);
                    builder.couple(dp, dm);
                    builder.couple(dm, dm);
                }
            }
        }
    }
    for &k in &geom.cut_elements {
        let d0 = &recon.op(0, k).dofs;
        let d1 = &recon.op(1, k).dofs;
        builder.couple(d0, d1);
    }
    builder.seal();
    let mut rhs = vec![0.0; n];

    // volume terms and sources
    for k in 0..mesh.n_elements() {
        for side in 0..2 {
            if active.side(side).dof(k).is_none() {
                continue;
            }
            let Some((pts, wts)) = side_volume_rule(geom, mesh, &reference, k, side) else {
                continue;
            };
            if pts.is_empty() {
                continue;
            }
            let op = recon.op(side, k);
            let nloc = op.dofs.len();
            if parts.volume {
                let (gx, gy) = op.grads_at(&pts);
                let alpha = spec.alpha[side];
                let mut block = DMatrix::zeros(nloc, nloc);
                for a in 0..nloc {
                    for b in a..nloc {
                        let mut s = 0.0;
                        for (q, &w) in wts.iter().enumerate() {
                            s += w * (gx[(a, q)] * gx[(b, q)] + gy[(a, q)] * gy[(b, q)]);
                        }
                        let v = alpha * s;
                        block[(a, b)] = v;
                        block[(b, a)] = v;
                    }
                }
                builder.scatter(&op.dofs, &op.dofs, &block);
            }
            let vals = op.values_at(&pts);
            let f = &spec.source[side];
            for (q, &w) in wts.iter().enumerate() {
                let fv = w * f(pts[q]);
                for (a, &dof) in op.dofs.iter().enumerate() {
                    rhs[dof] += fv * vals[(a, q)];
                }
            }
        }
    }

    // face terms
    for f in 0..mesh.faces.len() {
        let face = &mesh.faces[f];
        let he = mesh.face_diameters[f];
        let normal = mesh.face_normal(f);
        let fq = &geom.face_rules[f];
        match face.elements {
            (kp, Some(km)) => {
                for side in 0..2 {
                    let both_active = active.side(side).dof(kp).is_some()
                        && active.side(side).dof(km).is_some();
                    if !both_active {
                        continue;
                    }
                    let alpha = spec.alpha[side];
                    let op_p = recon.op(side, kp);
                    let op_m = recon.op(side, km);
                    // consistency on the physical portion
                    let portion = if side == 0 { &fq.part0 } else { &fq.part1 };
                    if parts.consistency && !portion.is_empty() {
                        add_interior_consistency(
                            &mut builder,
                            op_p,
                            op_m,
                            &portion.points,
                            &portion.weights,
                            normal,
                            alpha,
                        );
                    }
                    // full-face jump penalty
                    if parts.penalty {
                        add_face_penalty(
                            &mut builder,
                            op_p,
                            op_m,
                            &fq.full.points,
                            &fq.full.weights,
                            penalty_mu * alpha / he,
                        );
                    }
                }
            }
            (kp, None) => {
                if !parts.boundary {
                    continue;
                }
                for side in 0..2 {
                    if active.side(side).dof(kp).is_none() {
                        continue;
                    }
                    // interior elements own the whole face; cut elements
                    // only their physical portion
                    let portion = match geom.classes[kp] {
                        ElementClass::Cut => {
                            if side == 0 {
                                &fq.part0
                            } else {
                                &fq.part1
                            }
                        }
                        _ => &fq.full,
                    };
                    if portion.is_empty() {
                        continue;
                    }
                    let alpha = spec.alpha[side];
                    let op = recon.op(side, kp);
                    add_boundary_terms(
                        &mut builder,
                        &mut rhs,
                        op,
                        &portion.points,
                        &portion.weights,
                        normal,
                        alpha,
                        penalty_mu / he,
                        side,
                        spec,
                        parts,
                    );
                }
            }
        }
    }

    // interface terms
    if parts.consistency || parts.penalty {
        for &k in &geom.cut_elements {
            let rule = geom.cut_rules[k].as_ref().unwrap();
            if rule.iface.points.is_empty() {
                continue;
            }
            add_interface_terms(
                &mut builder,
                &mut rhs,
                recon,
                k,
                rule,
                mesh.element_diameters[k],
                spec,
                &hw,
                penalty_mu,
                parts,
            );
        }
    }

    Ok((builder.finish(), rhs))
}

/// Sorted union of two DOF lists plus the position of each input entry in
/// the union.
fn union_dofs(a: &[usize], b: &[usize]) -> (Vec<usize>, Vec<usize>, Vec<usize>) {
    let mut u: Vec<usize> = a.iter().chain(b).copied().collect();
    u.sort_unstable();
    u.dedup();
    let pos = |list: &[usize]| -> Vec<usize> {
        list.iter()
            .map(|d| u.binary_search(d).unwrap())
            .collect()
    };
    let pa = pos(a);
    let pb = pos(b);
    (u, pa, pb)
}

/// Scatter `sum_q w_q (-(F_a J_b + J_a F_b) + pen J_a J_b)` over the union
/// DOF list. Computed on the upper triangle and mirrored, so the global
/// matrix stays bitwise symmetric.
fn scatter_jump_flux_block(
    builder: &mut MatrixBuilder,
    dofs: &[usize],
    jump: &DMatrix<f64>,
    flux: Option<&DMatrix<f64>>,
    wts: &[f64],
    pen: f64,
) {
    let n = dofs.len();
    let mut block = DMatrix::zeros(n, n);
    for a in 0..n {
        for b in a..n {
            let mut s = 0.0;
            for (q, &w) in wts.iter().enumerate() {
                let mut t = 0.0;
                if let Some(f) = flux {
                    t -= f[(a, q)] * jump[(b, q)] + jump[(a, q)] * f[(b, q)];
                }
                if pen != 0.0 {
                    t += pen * (jump[(a, q)] * jump[(b, q)]);
                }
                s += w * t;
            }
            block[(a, b)] = s;
            block[(b, a)] = s;
        }
    }
    builder.scatter(dofs, dofs, &block);
}

/// `-({a grad v} . [w] + {a grad w} . [v])` over one physical face portion,
/// assembled over the union of the two adjacent patches.
#[allow(clippy::too_many_arguments)]
fn add_interior_consistency(
    builder: &mut MatrixBuilder,
    op_p: &crate::reconstruction::ElementOperator,
    op_m: &crate::reconstruction::ElementOperator,
    pts: &[Point2],
    wts: &[f64],
    normal: [f64; 2],
    alpha: f64,
) {
    let (dofs, pos_p, pos_m) = union_dofs(&op_p.dofs, &op_m.dofs);
    let np = pts.len();
    let mut jump = DMatrix::zeros(dofs.len(), np);
    let mut flux = DMatrix::zeros(dofs.len(), np);
    let vp = op_p.values_at(pts);
    let vm = op_m.values_at(pts);
    let (gxp, gyp) = op_p.grads_at(pts);
    let (gxm, gym) = op_m.grads_at(pts);
    for (r, &u) in pos_p.iter().enumerate() {
        for q in 0..np {
            jump[(u, q)] += vp[(r, q)];
            flux[(u, q)] +=
                0.5 * alpha * (gxp[(r, q)] * normal[0] + gyp[(r, q)] * normal[1]);
        }
    }
    for (r, &u) in pos_m.iter().enumerate() {
        for q in 0..np {
            jump[(u, q)] -= vm[(r, q)];
            flux[(u, q)] +=
                0.5 * alpha * (gxm[(r, q)] * normal[0] + gym[(r, q)] * normal[1]);
        }
    }
    scatter_jump_flux_block(builder, &dofs, &jump, Some(&flux), wts, 0.0);
}

/// `coeff * int [v][w]` over a whole face shared by two active elements.
fn add_face_penalty(
    builder: &mut MatrixBuilder,
    op_p: &crate::reconstruction::ElementOperator,
    op_m: &crate::reconstruction::ElementOperator,
    pts: &[Point2],
    wts: &[f64],
    coeff: f64,
) {
    let (dofs, pos_p, pos_m) = union_dofs(&op_p.dofs, &op_m.dofs);
    let np = pts.len();
    let mut jump = DMatrix::zeros(dofs.len(), np);
    let vp = op_p.values_at(pts);
    let vm = op_m.values_at(pts);
    for (r, &u) in pos_p.iter().enumerate() {
        for q in 0..np {
            jump[(u, q)] += vp[(r, q)];
        }
    }
    for (r, &u) in pos_m.iter().enumerate() {
        for q in 0..np {
            jump[(u, q)] -= vm[(r, q)];
        }
    }
    scatter_jump_flux_block(builder, &dofs, &jump, None, wts, coeff);
}

/// Nitsche boundary terms on one portion: consistency, symmetry, penalty,
/// and the matching data terms.
#[allow(clippy::too_many_arguments)]
fn add_boundary_terms(
    builder: &mut MatrixBuilder,
    rhs: &mut [f64],
    op: &crate::reconstruction::ElementOperator,
    pts: &[Point2],
    wts: &[f64],
    normal: [f64; 2],
    alpha: f64,
    mu_over_h: f64,
    side: usize,
    spec: &ProblemSpec,
    parts: AssemblyParts,
) {
    let vals = op.values_at(pts);
    let (gx, gy) = op.grads_at(pts);
    let nloc = op.dofs.len();
    let g = &spec.boundary;
    if parts.consistency {
        let mut block = DMatrix::zeros(nloc, nloc);
        for a in 0..nloc {
            for b in 0..nloc {
                let mut s = 0.0;
                for (q, &w) in wts.iter().enumerate() {
                    let gna = alpha * (gx[(a, q)] * normal[0] + gy[(a, q)] * normal[1]);
                    let gnb = alpha * (gx[(b, q)] * normal[0] + gy[(b, q)] * normal[1]);
                    s -= w * (gna * vals[(b, q)] + vals[(a, q)] * gnb);
                }
                block[(a, b)] = s;
            }
        }
        builder.scatter(&op.dofs, &op.dofs, &block);
        for (q, &w) in wts.iter().enumerate() {
            let gv = w * g(pts[q], side);
            for (a, &dof) in op.dofs.iter().enumerate() {
                let gna = alpha * (gx[(a, q)] * normal[0] + gy[(a, q)] * normal[1]);
                rhs[dof] -= gv * gna;
            }
        }
    }
    if parts.penalty {
        let coeff = mu_over_h * alpha;
        let mut block = DMatrix::zeros(nloc, nloc);
        for a in 0..nloc {
            for b in 0..nloc {
                let mut s = 0.0;
                for (q, &w) in wts.iter().enumerate() {
                    s += vals[(a, q)] * vals[(b, q)] * w;
                }
                block[(a, b)] = coeff * s;
            }
        }
        builder.scatter(&op.dofs, &op.dofs, &block);
        for (q, &w) in wts.iter().enumerate() {
            let gv = coeff * w * g(pts[q], side);
            for (a, &dof) in op.dofs.iter().enumerate() {
                rhs[dof] += gv * vals[(a, q)];
            }
        }
    }
}

/// Harmonic-weighted interface terms on one cut element, assembled over
/// the union of the two side patches.
#[allow(clippy::too_many_arguments)]
fn add_interface_terms(
    builder: &mut MatrixBuilder,
    rhs: &mut [f64],
    recon: &Reconstruction,
    k: usize,
    rule: &crate::geometry::CutQuadrature,
    hk: f64,
    spec: &ProblemSpec,
    hw: &HarmonicWeights,
    penalty_mu: f64,
    parts: AssemblyParts,
) {
    let pts = &rule.iface.points;
    let wts = &rule.iface.weights;
    let normals = &rule.iface.normals;
    let op0 = recon.op(0, k);
    let op1 = recon.op(1, k);
    let (dofs, pos0, pos1) = union_dofs(&op0.dofs, &op1.dofs);
    let np = pts.len();
    // jump [v] = v0 - v1, weighted flux {a grad v}_w . n, and the
    // skew-weighted average {v}^w = w1 v0 + w0 v1 used by the flux data
    let mut jump = DMatrix::zeros(dofs.len(), np);
    let mut flux = DMatrix::zeros(dofs.len(), np);
    let mut skew = DMatrix::<f64>::zeros(dofs.len(), np);
    let v0 = op0.values_at(pts);
    let v1 = op1.values_at(pts);
    let (gx0, gy0) = op0.grads_at(pts);
    let (gx1, gy1) = op1.grads_at(pts);
    for (r, &u) in pos0.iter().enumerate() {
        for q in 0..np {
            jump[(u, q)] += v0[(r, q)];
            skew[(u, q)] += hw.w1 * v0[(r, q)];
            flux[(u, q)] += hw.w0
                * spec.alpha[0]
                * (gx0[(r, q)] * normals[q][0] + gy0[(r, q)] * normals[q][1]);
        }
    }
    for (r, &u) in pos1.iter().enumerate() {
        for q in 0..np {
            jump[(u, q)] -= v1[(r, q)];
            skew[(u, q)] += hw.w0 * v1[(r, q)];
            flux[(u, q)] += hw.w1
                * spec.alpha[1]
                * (gx1[(r, q)] * normals[q][0] + gy1[(r, q)] * normals[q][1]);
        }
    }
    let pen = if parts.penalty {
        penalty_mu * hw.mean / hk
    } else {
        0.0
    };
    scatter_jump_flux_block(
        builder,
        &dofs,
        &jump,
        parts.consistency.then_some(&flux),
        wts,
        pen,
    );
    // data terms: flux jump against the skew average, value jump against
    // the weighted flux and the penalty
    let a_data = &spec.jump_value;
    let b_data = &spec.jump_flux;
    for (q, &w) in wts.iter().enumerate() {
        let av = a_data(pts[q]);
        let bv = b_data(pts[q]);
        for (u, &dof) in dofs.iter().enumerate() {
            let mut r = 0.0;
            if parts.consistency {
                r += bv * skew[(u, q)];
                r -= av * flux[(u, q)];
            }
            if parts.penalty {
                r += pen * av * jump[(u, q)];
            }
            rhs[dof] += w * r;
        }
    }
}

/// The piecewise-constant jump operator: face penalties with unit penalty
/// parameter plus the harmonic-weighted interface penalty. Needs no
/// reconstruction.
pub fn assemble_lowest_order(
    mesh: &TriMesh,
    geom: &CutGeometry,
    active: &ActiveMeshes,
    spec: &ProblemSpec,
) -> SparseSym {
    let n = active.n_dofs;
    let hw = spec.weights();
    let mut tri = TriMat::new((n, n));
    for side in 0..2 {
        let alpha = spec.alpha[side];
        for &f in &active.side(side).interior_faces {
            let (kp, km) = mesh.faces[f].elements;
            let dp = active.side(side).dof(kp).unwrap();
            let dm = active.side(side).dof(km.unwrap()).unwrap();
            let c = alpha * mesh.face_diameters[f].recip() * full_length(geom, f);
            tri.add_triplet(dp, dp, c);
            tri.add_triplet(dm, dm, c);
            tri.add_triplet(dp, dm, -c);
            tri.add_triplet(dm, dp, -c);
        }
    }
    // boundary faces: the active sides of the adjacent element penalize
    // their own portion
    for &f in &active.boundary_faces {
        let k = mesh.faces[f].elements.0;
        let he = mesh.face_diameters[f];
        for side in 0..2 {
            let Some(dof) = active.side(side).dof(k) else {
                continue;
            };
            let len = match geom.classes[k] {
                ElementClass::Cut => portion_length(geom, f, side),
                _ => full_length(geom, f),
            };
            if len > 0.0 {
                tri.add_triplet(dof, dof, spec.alpha[side] * len / he);
            }
        }
    }
    for &k in &geom.cut_elements {
        let rule = geom.cut_rules[k].as_ref().unwrap();
        let c = hw.mean * rule.interface_length / mesh.element_diameters[k];
        if c == 0.0 {
            continue;
        }
        let d0 = active.side(0).dof(k).unwrap();
        let d1 = active.side(1).dof(k).unwrap();
        tri.add_triplet(d0, d0, c);
        tri.add_triplet(d1, d1, c);
        tri.add_triplet(d0, d1, -c);
        tri.add_triplet(d1, d0, -c);
    }
    tri.to_csr()
}

fn full_length(geom: &CutGeometry, f: usize) -> f64 {
    geom.face_rules[f].full.weights.iter().sum()
}

fn portion_length(geom: &CutGeometry, f: usize, side: usize) -> f64 {
    let fq = &geom.face_rules[f];
    let part = if side == 0 { &fq.part0 } else { &fq.part1 };
    part.weights.iter().sum()
}

/// One level of the rediscretized lowest-order hierarchy.
pub struct LevelSystem {
    pub active: ActiveMeshes,
    pub matrix: SparseSym,
    /// Coefficient-weighted measures per DOF, aggregated from the finest
    /// level so that transfers telescope exactly.
    pub mass_diag: Vec<f64>,
}

/// All levels (coarse to fine) plus the injection transfers.
pub struct MultilevelSystem {
    pub levels: Vec<LevelSystem>,
    /// `transfers[j]` maps level-`j` DOFs to level-`j+1` DOFs by copying a
    /// coarse value to every active child.
    pub transfers: Vec<SparseSym>,
}

impl MultilevelSystem {
    pub fn finest(&self) -> &LevelSystem {
        self.levels.last().unwrap()
    }
}

/// Aggregate fine classes to the parent level: any cut child (or children
/// on both sides) makes the parent cut.
fn aggregate_classes(fine: &[ElementClass], children: &[[usize; 4]]) -> Vec<ElementClass> {
    children
        .iter()
        .map(|ch| {
            let mut any0 = false;
            let mut any1 = false;
            for &c in ch {
                match fine[c] {
                    ElementClass::Interior0 => any0 = true,
                    ElementClass::Interior1 => any1 = true,
                    ElementClass::Cut => {
                        any0 = true;
                        any1 = true;
                    }
                }
            }
            match (any0, any1) {
                (true, true) => ElementClass::Cut,
                (true, false) => ElementClass::Interior0,
                (false, true) => ElementClass::Interior1,
                (false, false) => unreachable!("element with no children"),
            }
        })
        .collect()
}

/// Build the rediscretized operators `A_{0,j}`, the aggregated mass
/// diagonals, and the injection transfers for a mesh hierarchy. The finest
/// level reuses the supplied geometry and active meshes; coarse levels are
/// classified by aggregation so the hierarchy stays nested.
pub fn assemble_level_systems(
    hier: &MeshHierarchy,
    ls: &LevelSet,
    spec: &ProblemSpec,
    geo_config: GeometryConfig,
    finest_geom: &CutGeometry,
    finest_active: &ActiveMeshes,
) -> Result<MultilevelSystem, AssemblyError> {
    let n_levels = hier.n_levels();
    let finest = hier.finest();

    // classes per level, finest sampled, coarser aggregated
    let mut classes_per_level: Vec<Vec<ElementClass>> = vec![Vec::new(); n_levels];
    classes_per_level[n_levels - 1] = finest_geom.classes.clone();
    for j in (0..n_levels - 1).rev() {
        classes_per_level[j] =
            aggregate_classes(&classes_per_level[j + 1], &hier.children_of[j]);
    }

    // finest mass diagonal from quadrature measures
    let mut levels: Vec<LevelSystem> = Vec::with_capacity(n_levels);
    let finest_mass = mass_from_measures(finest_active, finest_geom, spec);
    let finest_matrix = assemble_lowest_order(finest, finest_geom, finest_active, spec);
    // build coarse levels front-to-back
    let mut actives: Vec<ActiveMeshes> = Vec::with_capacity(n_levels);
    for (j, mesh) in hier.levels.iter().enumerate() {
        if j == n_levels - 1 {
            actives.push(finest_active.clone());
        } else {
            let classes = classes_per_level[j].clone();
            let geom = CutGeometry::build_with_classes(ls, mesh, geo_config, classes)?;
            let active = build_active_meshes(mesh, &geom.classes)?;
            let matrix = assemble_lowest_order(mesh, &geom, &active, spec);
            levels.push(LevelSystem {
                active: active.clone(),
                matrix,
                mass_diag: Vec::new(),
            });
            actives.push(active);
        }
    }
    levels.push(LevelSystem {
        active: finest_active.clone(),
        matrix: finest_matrix,
        mass_diag: finest_mass,
    });

    // transfers and aggregated mass, fine to coarse
    let mut transfers: Vec<SparseSym> = Vec::with_capacity(n_levels - 1);
    for j in 0..n_levels - 1 {
        let coarse = &actives[j];
        let fine = &actives[j + 1];
        let parent = &hier.parent_of[j + 1];
        let mut tri = TriMat::new((fine.n_dofs, coarse.n_dofs));
        for side in 0..2 {
            for &kf in &fine.side(side).elements {
                let fdof = fine.side(side).dof(kf).unwrap();
                let p = parent[kf];
                let cdof = coarse.side(side).dof(p).ok_or(AssemblyError::OrphanFineDof {
                    level: j + 1,
                    element: kf,
                    side,
                })?;
                tri.add_triplet(fdof, cdof, 1.0);
            }
        }
        transfers.push(tri.to_csr());
    }
    for j in (0..n_levels - 1).rev() {
        let fine_mass = levels[j + 1].mass_diag.clone();
        let p = &transfers[j];
        let mut coarse_mass = vec![0.0; levels[j].active.n_dofs];
        // P^T D 1 per column: each fine DOF maps to exactly one coarse DOF
        for (row, vec) in p.outer_iterator().enumerate() {
            for (col, &v) in vec.iter() {
                coarse_mass[col] += v * fine_mass[row];
            }
        }
        if coarse_mass.iter().any(|&d| !(d > 0.0)) {
            return Err(AssemblyError::DegenerateMass { level: j });
        }
        levels[j].mass_diag = coarse_mass;
    }
    Ok(MultilevelSystem { levels, transfers })
}

fn mass_from_measures(active: &ActiveMeshes, geom: &CutGeometry, spec: &ProblemSpec) -> Vec<f64> {
    let mut d = vec![0.0; active.n_dofs];
    for side in 0..2 {
        for &k in &active.side(side).elements {
            let dof = active.side(side).dof(k).unwrap();
            let m = if side == 0 {
                geom.measures[k].0
            } else {
                geom.measures[k].1
            };
            d[dof] = spec.alpha[side] * m;
        }
    }
    d
}

/// Maximum absolute asymmetry `|A - A^T|`.
pub fn max_asymmetry(a: &SparseSym) -> f64 {
    let at = a.transpose_view().to_csr();
    let diff = &at - a;
    diff.data().iter().fold(0.0_f64, |m, v| m.max(v.abs()))
}

/// Write a matrix as `row col value` lines.
pub fn write_matrix_coo(a: &SparseSym, out: &mut dyn std::io::Write) -> std::io::Result<()> {
    writeln!(out, "{} {} {}", a.rows(), a.cols(), a.nnz())?;
    for (row, vec) in a.outer_iterator().enumerate() {
        for (col, &v) in vec.iter() {
            writeln!(out, "{} {} {:.17e}", row, col, v)?;
        }
    }
    Ok(())
}

/// Write a vector one value per line.
pub fn write_vector(v: &[f64], out: &mut dyn std::io::Write) -> std::io::Result<()> {
    for x in v {
        writeln!(out, "{:.17e}", x)?;
    }
    Ok(())
}
