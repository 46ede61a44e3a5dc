//! Uniform triangular meshes of the square `(-1, 1)^2`, red refinement,
//! and the nested hierarchy used by the multigrid transfers.
//!
//! Every square cell is split by the same lower-left to upper-right
//! diagonal, so refining a mesh reproduces the directly-built finer mesh
//! up to vertex ordering. Element and face indices are deterministic
//! (lexicographic by grid position / first encounter).

use std::collections::HashMap;
use std::io::Write;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum MeshError {
    #[error("cells per side must be at least 1, got {0}")]
    InvalidCellCount(usize),
    #[error("hierarchy needs at least one level, got {0}")]
    InvalidLevelCount(usize),
}

/// A point in the plane.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct Point2 {
    pub x: f64,
    pub y: f64,
}

impl Point2 {
    pub fn new(x: f64, y: f64) -> Self {
        Point2 { x, y }
    }

    pub fn dist(self, other: Point2) -> f64 {
        ((self.x - other.x).powi(2) + (self.y - other.y).powi(2)).sqrt()
    }

    pub fn midpoint(self, other: Point2) -> Point2 {
        Point2::new(0.5 * (self.x + other.x), 0.5 * (self.y + other.y))
    }
}

/// A mesh face (edge): its two vertices, the adjacent elements, and
/// whether it lies on the domain boundary.
#[derive(Debug, Clone)]
pub struct Face {
    pub vertices: [usize; 2],
    /// Adjacent elements; interior faces have two, boundary faces one.
    pub elements: (usize, Option<usize>),
}

impl Face {
    pub fn is_boundary(&self) -> bool {
        self.elements.1.is_none()
    }
}

/// A conforming triangular mesh with full face adjacency.
#[derive(Debug, Clone)]
pub struct TriMesh {
    pub vertices: Vec<Point2>,
    /// Vertex index triples, positively oriented.
    pub elements: Vec<[usize; 3]>,
    pub faces: Vec<Face>,
    /// Per element, the indices of its three faces (opposite local order
    /// 01, 12, 20).
    pub element_faces: Vec<[usize; 3]>,
    /// Per vertex, the incident elements (ascending).
    pub vertex_elements: Vec<Vec<usize>>,
    /// Element diameters `h_K` (longest edge).
    pub element_diameters: Vec<f64>,
    /// Face diameters `h_e` (edge length).
    pub face_diameters: Vec<f64>,
    pub level: usize,
}

impl TriMesh {
    /// Assemble connectivity from raw vertices and (positively oriented)
    /// elements.
    fn from_raw(vertices: Vec<Point2>, elements: Vec<[usize; 3]>, level: usize) -> Self {
        let mut faces: Vec<Face> = Vec::new();
        let mut face_of: HashMap<(usize, usize), usize> = HashMap::new();
        let mut element_faces = vec![[usize::MAX; 3]; elements.len()];
        for (k, tri) in elements.iter().enumerate() {
            for (slot, (a, b)) in [(tri[0], tri[1]), (tri[1], tri[2]), (tri[2], tri[0])]
                .into_iter()
                .enumerate()
            {
                let key = (a.min(b), a.max(b));
                match face_of.get(&key) {
                    Some(&f) => {
                        debug_assert!(faces[f].elements.1.is_none());
                        faces[f].elements.1 = Some(k);
                        element_faces[k][slot] = f;
                    }
                    None => {
                        let f = faces.len();
                        faces.push(Face {
                            vertices: [key.0, key.1],
                            elements: (k, None),
                        });
                        face_of.insert(key, f);
                        element_faces[k][slot] = f;
                    }
                }
            }
        }
        let mut vertex_elements = vec![Vec::new(); vertices.len()];
        for (k, tri) in elements.iter().enumerate() {
            for &v in tri {
                vertex_elements[v].push(k);
            }
        }
        let element_diameters = elements
            .iter()
            .map(|tri| {
                let p = [vertices[tri[0]], vertices[tri[1]], vertices[tri[2]]];
                p[0].dist(p[1]).max(p[1].dist(p[2])).max(p[2].dist(p[0]))
            })
            .collect();
        let face_diameters = faces
            .iter()
            .map(|f| vertices[f.vertices[0]].dist(vertices[f.vertices[1]]))
            .collect();
        TriMesh {
            vertices,
            elements,
            faces,
            element_faces,
            vertex_elements,
            element_diameters,
            face_diameters,
            level,
        }
    }

    pub fn n_elements(&self) -> usize {
        self.elements.len()
    }

    pub fn element_vertices(&self, k: usize) -> [Point2; 3] {
        let tri = self.elements[k];
        [
            self.vertices[tri[0]],
            self.vertices[tri[1]],
            self.vertices[tri[2]],
        ]
    }

    /// Signed area of element `k`; positive for the orientation produced
    /// by the builders here.
    pub fn area(&self, k: usize) -> f64 {
        let [a, b, c] = self.element_vertices(k);
        0.5 * ((b.x - a.x) * (c.y - a.y) - (c.x - a.x) * (b.y - a.y))
    }

    pub fn barycenter(&self, k: usize) -> Point2 {
        let [a, b, c] = self.element_vertices(k);
        Point2::new((a.x + b.x + c.x) / 3.0, (a.y + b.y + c.y) / 3.0)
    }

    pub fn face_endpoints(&self, f: usize) -> (Point2, Point2) {
        let face = &self.faces[f];
        (
            self.vertices[face.vertices[0]],
            self.vertices[face.vertices[1]],
        )
    }

    /// Unit normal of face `f` pointing out of its first adjacent element.
    pub fn face_normal(&self, f: usize) -> [f64; 2] {
        let (a, b) = self.face_endpoints(f);
        let t = [b.x - a.x, b.y - a.y];
        let len = (t[0] * t[0] + t[1] * t[1]).sqrt();
        // candidate normal, then orient away from the owner barycenter
        let mut n = [t[1] / len, -t[0] / len];
        let k = self.faces[f].elements.0;
        let xc = self.barycenter(k);
        let mid = a.midpoint(b);
        if (mid.x - xc.x) * n[0] + (mid.y - xc.y) * n[1] < 0.0 {
            n = [-n[0], -n[1]];
        }
        n
    }

    /// Plain-text dump: vertex count, `x y` lines, element count,
    /// `i j k` lines. Debugging aid only.
    pub fn write_text(&self, out: &mut dyn Write) -> std::io::Result<()> {
        writeln!(out, "{}", self.vertices.len())?;
        for v in &self.vertices {
            writeln!(out, "{:.17e} {:.17e}", v.x, v.y)?;
        }
        writeln!(out, "{}", self.elements.len())?;
        for e in &self.elements {
            writeln!(out, "{} {} {}", e[0], e[1], e[2])?;
        }
        Ok(())
    }
}

/// Uniform mesh of `(-1,1)^2` with `n x n` square cells, each split by the
/// lower-left to upper-right diagonal; `2 n^2` elements, `(n+1)^2` vertices.
pub fn build_uniform_mesh(n: usize) -> Result<TriMesh, MeshError> {
    if n < 1 {
        return Err(MeshError::InvalidCellCount(n));
    }
    let h = 2.0 / n as f64;
    let mut vertices = Vec::with_capacity((n + 1) * (n + 1));
    for j in 0..=n {
        for i in 0..=n {
            vertices.push(Point2::new(-1.0 + i as f64 * h, -1.0 + j as f64 * h));
        }
    }
    let vid = |i: usize, j: usize| j * (n + 1) + i;
    let mut elements = Vec::with_capacity(2 * n * n);
    for j in 0..n {
        for i in 0..n {
            let (v00, v10) = (vid(i, j), vid(i + 1, j));
            let (v01, v11) = (vid(i, j + 1), vid(i + 1, j + 1));
            // lower-right and upper-left halves of the cell
            elements.push([v00, v10, v11]);
            elements.push([v00, v11, v01]);
        }
    }
    Ok(TriMesh::from_raw(vertices, elements, 0))
}

/// Red refinement: every triangle is split into four congruent children via
/// edge midpoints. Returns the refined mesh and the fine-to-coarse parent
/// map (fibers of size 4, children of parent `k` are `4k..4k+4`).
pub fn refine(mesh: &TriMesh) -> (TriMesh, Vec<usize>) {
    let nv = mesh.vertices.len();
    let mut vertices = mesh.vertices.clone();
    // one new vertex per face, indexed deterministically by face id
    let mut midpoint_of_face = vec![usize::MAX; mesh.faces.len()];
    for (f, face) in mesh.faces.iter().enumerate() {
        let (a, b) = mesh.face_endpoints(f);
        midpoint_of_face[f] = nv + f;
        let _ = face;
        vertices.push(a.midpoint(b));
    }
    let mut elements = Vec::with_capacity(4 * mesh.elements.len());
    let mut parent = Vec::with_capacity(4 * mesh.elements.len());
    for (k, tri) in mesh.elements.iter().enumerate() {
        let [v0, v1, v2] = *tri;
        let faces = mesh.element_faces[k];
        let m01 = midpoint_of_face[faces[0]];
        let m12 = midpoint_of_face[faces[1]];
        let m20 = midpoint_of_face[faces[2]];
        elements.push([v0, m01, m20]);
        elements.push([m01, v1, m12]);
        elements.push([m20, m12, v2]);
        elements.push([m01, m12, m20]);
        parent.extend_from_slice(&[k, k, k, k]);
    }
    (
        TriMesh::from_raw(vertices, elements, mesh.level + 1),
        parent,
    )
}

/// Nested meshes from coarse (level 0) to fine (level `J`).
#[derive(Debug, Clone)]
pub struct MeshHierarchy {
    pub levels: Vec<TriMesh>,
    /// `parent_of[j][e]` is the level-`j-1` parent of level-`j` element `e`
    /// (entry 0 is empty).
    pub parent_of: Vec<Vec<usize>>,
    /// `children_of[j][e]` are the level-`j+1` children of level-`j`
    /// element `e` (last entry is empty).
    pub children_of: Vec<Vec<[usize; 4]>>,
}

impl MeshHierarchy {
    pub fn finest(&self) -> &TriMesh {
        self.levels.last().unwrap()
    }

    pub fn n_levels(&self) -> usize {
        self.levels.len()
    }
}

/// Build `J+1` nested meshes starting from an `n0 x n0` coarse grid.
pub fn build_hierarchy(n0: usize, j_levels: usize) -> Result<MeshHierarchy, MeshError> {
    if j_levels < 1 {
        return Err(MeshError::InvalidLevelCount(j_levels));
    }
    let mut levels = vec![build_uniform_mesh(n0)?];
    let mut parent_of = vec![Vec::new()];
    for _ in 0..j_levels {
        let (fine, parent) = refine(levels.last().unwrap());
        levels.push(fine);
        parent_of.push(parent);
    }
    let mut children_of = Vec::with_capacity(levels.len());
    for j in 0..levels.len() {
        if j + 1 == levels.len() {
            children_of.push(Vec::new());
        } else {
            let mut children = vec![[usize::MAX; 4]; levels[j].n_elements()];
            let mut next = vec![0usize; levels[j].n_elements()];
            for (e, &p) in parent_of[j + 1].iter().enumerate() {
                children[p][next[p]] = e;
                next[p] += 1;
            }
            debug_assert!(next.iter().all(|&c| c == 4));
            children_of.push(children);
        }
    }
    Ok(MeshHierarchy {
        levels,
        parent_of,
        children_of,
    })
}

#[doc(hidden)]
pub mod test_support {
    use super::*;

    /// Build a mesh from raw vertex/element lists. Testing hook for
    /// single-triangle fixtures; elements must be positively oriented.
    pub fn mesh_from_raw(vertices: Vec<Point2>, elements: Vec<[usize; 3]>) -> TriMesh {
        TriMesh::from_raw(vertices, elements, 0)
    }
}

/// The layer-`s` vertex neighborhood of element `k`: layer 1 collects all
/// elements sharing at least one vertex with `k` (including `k`), deeper
/// layers apply the same expansion recursively. Returned sorted.
pub fn neighborhood(mesh: &TriMesh, k: usize, s: usize) -> Vec<usize> {
    assert!(s >= 1, "neighborhood layer must be at least 1");
    let mut current = vec![k];
    for _ in 0..s {
        let mut next: Vec<usize> = current.clone();
        for &e in &current {
            for &v in &mesh.elements[e] {
                next.extend_from_slice(&mesh.vertex_elements[v]);
            }
        }
        next.sort_unstable();
        next.dedup();
        current = next;
    }
    current
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    #[test]
    fn single_cell_counts() {
        let mesh = build_uniform_mesh(1).unwrap();
        assert_eq!(mesh.elements.len(), 2);
        assert_eq!(mesh.vertices.len(), 4);
        assert_eq!(mesh.faces.len(), 5);
        let boundary = mesh.faces.iter().filter(|f| f.is_boundary()).count();
        assert_eq!(boundary, 4);
    }

    #[test]
    fn n20_counts() {
        let mesh = build_uniform_mesh(20).unwrap();
        assert_eq!(mesh.elements.len(), 800);
        assert_eq!(mesh.vertices.len(), 441);
    }

    #[test]
    fn invalid_cell_count_rejected() {
        assert!(build_uniform_mesh(0).is_err());
    }

    #[test]
    fn interior_faces_have_two_neighbors() {
        let mesh = build_uniform_mesh(2).unwrap();
        for f in &mesh.faces {
            if !f.is_boundary() {
                assert!(f.elements.1.is_some());
            }
        }
        // every element is positively oriented
        for k in 0..mesh.n_elements() {
            assert!(mesh.area(k) > 0.0);
        }
    }

    #[test]
    fn areas_tile_domain() {
        for n in [1, 3, 10] {
            let mesh = build_uniform_mesh(n).unwrap();
            let total: f64 = (0..mesh.n_elements()).map(|k| mesh.area(k)).sum();
            assert_relative_eq!(total, 4.0, max_relative = 1e-12);
        }
    }

    #[test]
    fn refine_counts_and_areas() {
        let mesh = build_uniform_mesh(1).unwrap();
        let (fine, parent) = refine(&mesh);
        assert_eq!(fine.elements.len(), 8);
        for k in 0..mesh.n_elements() {
            let children: Vec<usize> = (0..fine.n_elements()).filter(|&e| parent[e] == k).collect();
            assert_eq!(children.len(), 4);
            let child_area: f64 = children.iter().map(|&e| fine.area(e)).sum();
            assert_relative_eq!(child_area, mesh.area(k), max_relative = 1e-14);
            for &e in &children {
                assert_relative_eq!(
                    fine.element_diameters[e],
                    0.5 * mesh.element_diameters[k],
                    max_relative = 1e-14
                );
            }
        }
    }

    #[test]
    fn refine_twice_quarters_h() {
        let mesh = build_uniform_mesh(2).unwrap();
        let (m1, _) = refine(&mesh);
        let (m2, _) = refine(&m1);
        let h0 = mesh.element_diameters[0];
        assert_relative_eq!(m2.element_diameters[0], 0.25 * h0, max_relative = 1e-14);
    }

    #[test]
    fn hierarchy_matches_direct_build() {
        let hier = build_hierarchy(5, 3).unwrap();
        assert_eq!(hier.finest().n_elements(), 2 * 40 * 40);
        let direct = build_uniform_mesh(40).unwrap();
        // same vertex set up to ordering
        let mut a: Vec<(i64, i64)> = hier
            .finest()
            .vertices
            .iter()
            .map(|p| ((p.x * 1e13).round() as i64, (p.y * 1e13).round() as i64))
            .collect();
        let mut b: Vec<(i64, i64)> = direct
            .vertices
            .iter()
            .map(|p| ((p.x * 1e13).round() as i64, (p.y * 1e13).round() as i64))
            .collect();
        a.sort_unstable();
        b.sort_unstable();
        assert_eq!(a, b);
    }

    #[test]
    fn hierarchy_parent_child_inverse() {
        let hier = build_hierarchy(2, 1).unwrap();
        for e in 0..hier.levels[1].n_elements() {
            let p = hier.parent_of[1][e];
            assert!(hier.children_of[0][p].contains(&e));
        }
    }

    #[test]
    fn children_nested_in_parent() {
        let hier = build_hierarchy(3, 2).unwrap();
        for j in 1..hier.n_levels() {
            let coarse = &hier.levels[j - 1];
            let fine = &hier.levels[j];
            for e in 0..fine.n_elements() {
                let p = hier.parent_of[j][e];
                let [a, b, c] = coarse.element_vertices(p);
                for v in fine.element_vertices(e) {
                    assert!(
                        point_in_triangle(v, a, b, c, 1e-12),
                        "child vertex escapes parent"
                    );
                }
            }
        }
    }

    fn point_in_triangle(p: Point2, a: Point2, b: Point2, c: Point2, tol: f64) -> bool {
        let sign = |p1: Point2, p2: Point2, p3: Point2| {
            (p1.x - p3.x) * (p2.y - p3.y) - (p2.x - p3.x) * (p1.y - p3.y)
        };
        let d1 = sign(p, a, b);
        let d2 = sign(p, b, c);
        let d3 = sign(p, c, a);
        d1 >= -tol && d2 >= -tol && d3 >= -tol
    }

    #[test]
    fn interior_element_layer1_has_13_members() {
        let mesh = build_uniform_mesh(10).unwrap();
        // pick an element away from the boundary: cell (5,5), lower triangle
        let k = 2 * (5 * 10 + 5);
        let nbrs = neighborhood(&mesh, k, 1);
        assert_eq!(nbrs.len(), 13);
        assert!(nbrs.contains(&k));
        // oracle: brute-force vertex sharing scan
        let brute: Vec<usize> = (0..mesh.n_elements())
            .filter(|&e| {
                mesh.elements[e]
                    .iter()
                    .any(|v| mesh.elements[k].contains(v))
            })
            .collect();
        assert_eq!(nbrs, brute);
    }

    #[test]
    fn corner_element_contains_itself() {
        let mesh = build_uniform_mesh(4).unwrap();
        let nbrs = neighborhood(&mesh, 0, 1);
        assert!(nbrs.contains(&0));
    }

    #[test]
    fn face_handshake_in_layer1() {
        let mesh = build_uniform_mesh(4).unwrap();
        for f in &mesh.faces {
            if let (kp, Some(km)) = f.elements {
                assert!(neighborhood(&mesh, kp, 1).contains(&km));
                assert!(neighborhood(&mesh, km, 1).contains(&kp));
            }
        }
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(12))]

        #[test]
        fn neighborhood_monotone_and_symmetric(n in 2usize..7, s in 1usize..4) {
            let mesh = build_uniform_mesh(n).unwrap();
            for k in 0..mesh.n_elements() {
                let cur = neighborhood(&mesh, k, s);
                let next = neighborhood(&mesh, k, s + 1);
                prop_assert!(cur.iter().all(|e| next.binary_search(e).is_ok()));
                for &e in &cur {
                    let back = neighborhood(&mesh, e, s);
                    prop_assert!(back.binary_search(&k).is_ok());
                }
            }
        }
    }
}
