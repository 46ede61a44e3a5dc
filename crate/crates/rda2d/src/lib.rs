//! Solver workbench for 2D elliptic interface problems on unfitted
//! triangular meshes.
//!
//! The discretization reconstructs a high-order piecewise polynomial space
//! from one degree of freedom per active element per side via constrained
//! local least squares, enforces interface and boundary conditions weakly
//! with harmonic-weighted Nitsche penalties, and solves the resulting SPD
//! systems with conjugate gradients preconditioned by W-cycle multigrid
//! built on the matching piecewise-constant (lowest-order) operator.
//!
//! See the `book/` guide for a chapter-by-chapter walkthrough; its code
//! snippets are compiled as doc-tests through [`guide`].

pub mod active;
pub mod assembly;
pub mod geometry;
pub mod levelset;
pub mod mesh;
pub mod quadrature;
pub mod reconstruction;

pub use active::{build_active_meshes, build_sigma_map, ActiveMeshes, SigmaMap};
pub use geometry::{
    classify_element, classify_mesh, cut_volume_quadrature, face_cut_quadrature, CutGeometry,
    ElementClass, GeometryConfig,
};
pub use levelset::LevelSet;
pub use mesh::{build_hierarchy, build_uniform_mesh, neighborhood, refine, MeshHierarchy, Point2, TriMesh};
