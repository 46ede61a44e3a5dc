//! Active meshes per subdomain side and the injective assignment of cut
//! elements to nearby fully-interior elements.
//!
//! Side `i` collects every element with a nonempty intersection with
//! `Omega_i`; a cut element belongs to both sides and carries one degree of
//! freedom per side. Global DOF numbering places all side-0 DOFs (ascending
//! element index) before all side-1 DOFs.

use thiserror::Error;

use crate::geometry::ElementClass;
use crate::mesh::{neighborhood, TriMesh};

#[derive(Debug, Error)]
pub enum ActiveError {
    #[error("side {0} of the interface contains no elements")]
    EmptySide(usize),
    #[error(
        "no unmarked interior element within {layers} layers of cut element {element} (side {side}); the mesh is too coarse for this interface"
    )]
    SigmaExhausted {
        element: usize,
        side: usize,
        layers: usize,
    },
}

/// One side of the unfitted discretization.
#[derive(Debug, Clone)]
pub struct ActiveMesh {
    pub side: usize,
    /// Active element ids, ascending.
    pub elements: Vec<usize>,
    /// Mesh element -> global DOF, `None` when inactive on this side.
    pub dof_of_element: Vec<Option<usize>>,
    /// Mesh element -> true when the element lies fully inside the side.
    pub is_interior: Vec<bool>,
    /// Faces whose two neighbors are both active on this side.
    pub interior_faces: Vec<usize>,
}

impl ActiveMesh {
    pub fn n_elements(&self) -> usize {
        self.elements.len()
    }

    pub fn dof(&self, element: usize) -> Option<usize> {
        self.dof_of_element[element]
    }
}

/// Both sides plus shared counts.
#[derive(Debug, Clone)]
pub struct ActiveMeshes {
    pub sides: [ActiveMesh; 2],
    pub cut_elements: Vec<usize>,
    /// Faces on the domain boundary.
    pub boundary_faces: Vec<usize>,
    pub n_dofs: usize,
}

impl ActiveMeshes {
    pub fn side(&self, i: usize) -> &ActiveMesh {
        &self.sides[i]
    }
}

/// Build the two active meshes from an element classification.
pub fn build_active_meshes(
    mesh: &TriMesh,
    classes: &[ElementClass],
) -> Result<ActiveMeshes, ActiveError> {
    let mut sides = Vec::with_capacity(2);
    let mut offset = 0usize;
    for side in 0..2 {
        let member = |class: ElementClass| match (side, class) {
            (0, ElementClass::Interior0) | (1, ElementClass::Interior1) => Some(true),
            (_, ElementClass::Cut) => Some(false),
            _ => None,
        };
        let mut elements = Vec::new();
        let mut dof_of_element = vec![None; mesh.n_elements()];
        let mut is_interior = vec![false; mesh.n_elements()];
        for k in 0..mesh.n_elements() {
            if let Some(interior) = member(classes[k]) {
                dof_of_element[k] = Some(offset + elements.len());
                is_interior[k] = interior;
                elements.push(k);
            }
        }
        if elements.is_empty() {
            return Err(ActiveError::EmptySide(side));
        }
        offset += elements.len();
        let interior_faces = mesh
            .faces
            .iter()
            .enumerate()
            .filter(|(_, f)| {
                if let (kp, Some(km)) = f.elements {
                    dof_of_element[kp].is_some() && dof_of_element[km].is_some()
                } else {
                    false
                }
            })
            .map(|(i, _)| i)
            .collect();
        sides.push(ActiveMesh {
            side,
            elements,
            dof_of_element,
            is_interior,
            interior_faces,
        });
    }
    let cut_elements = (0..mesh.n_elements())
        .filter(|&k| classes[k] == ElementClass::Cut)
        .collect();
    let boundary_faces = mesh
        .faces
        .iter()
        .enumerate()
        .filter(|(_, f)| f.is_boundary())
        .map(|(i, _)| i)
        .collect();
    let n_dofs = offset;
    let sides: [ActiveMesh; 2] = sides.try_into().unwrap();
    Ok(ActiveMeshes {
        sides,
        cut_elements,
        boundary_faces,
        n_dofs,
    })
}

/// The injective map from cut elements to interior anchor elements, one per
/// side, together with its inverse.
#[derive(Debug, Clone)]
pub struct SigmaMap {
    /// Per side: cut element -> interior element.
    pub to_interior: [Vec<Option<usize>>; 2],
    /// Per side: interior element -> cut element it anchors.
    pub to_cut: [Vec<Option<usize>>; 2],
    /// Largest neighborhood layer that was needed.
    pub max_layer: usize,
}

impl SigmaMap {
    pub fn sigma(&self, side: usize, cut_element: usize) -> Option<usize> {
        self.to_interior[side][cut_element]
    }

    pub fn varsigma(&self, side: usize, interior_element: usize) -> Option<usize> {
        self.to_cut[side][interior_element]
    }
}

/// Greedy marking pass: every cut element grabs the nearest unmarked
/// interior element, searching layer by layer up to `max_layers`.
/// Cut elements are visited in ascending index order; candidate ties are
/// broken by barycenter distance, then by element index.
pub fn build_sigma_map(
    mesh: &TriMesh,
    active: &ActiveMeshes,
    max_layers: usize,
) -> Result<SigmaMap, ActiveError> {
    let n = mesh.n_elements();
    let mut to_interior = [vec![None; n], vec![None; n]];
    let mut to_cut = [vec![None; n], vec![None; n]];
    let mut max_layer = 0usize;
    for side in 0..2 {
        let interior = &active.sides[side].is_interior;
        let mut marked = vec![false; n];
        for &k in &active.cut_elements {
            let xk = mesh.barycenter(k);
            let mut chosen = None;
            'layers: for s in 1..=max_layers {
                let mut best: Option<(f64, usize)> = None;
                for e in neighborhood(mesh, k, s) {
                    if interior[e] && !marked[e] {
                        let d = mesh.barycenter(e).dist(xk);
                        let better = match best {
                            None => true,
                            Some((bd, be)) => d < bd - 1e-14 || ((d - bd).abs() <= 1e-14 && e < be),
                        };
                        if better {
                            best = Some((d, e));
                        }
                    }
                }
                if let Some((_, e)) = best {
                    chosen = Some((e, s));
                    break 'layers;
                }
            }
            let (e, s) = chosen.ok_or(ActiveError::SigmaExhausted {
                element: k,
                side,
                layers: max_layers,
            })?;
            marked[e] = true;
            to_interior[side][k] = Some(e);
            to_cut[side][e] = Some(k);
            max_layer = max_layer.max(s);
        }
    }
    Ok(SigmaMap {
        to_interior,
        to_cut,
        max_layer,
    })
}
