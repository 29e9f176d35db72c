//! P1 finite elements on triangles: nodal fields, matrix assembly on a
//! shared sparsity pattern, and the sparse solvers.

pub mod solver;
pub mod sparse;

use std::ops::{Deref, DerefMut};
use std::sync::Arc;

use rayon::prelude::*;
use thiserror::Error;

use crate::mesh::{BoundaryTag, Mesh};
pub use solver::{solve_sparse, solve_sparse_from, Solution, SolveOptions, SolverError, SolverKind};
pub use sparse::{CsrMatrix, SparsityPattern};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum FemError {
    #[error("mesh has no boundary edges tagged {0}")]
    UnknownTag(BoundaryTag),
    #[error("field has {got} values but the mesh has {expected} vertices")]
    Dimension { expected: usize, got: usize },
}

/// One value per mesh vertex. Units are the caller's business.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct NodalField(Vec<f64>);

impl NodalField {
    pub fn zeros(n: usize) -> Self {
        NodalField(vec![0.0; n])
    }

    pub fn constant(n: usize, value: f64) -> Self {
        NodalField(vec![value; n])
    }

    pub fn from_fn(mesh: &Mesh, f: impl Fn([f64; 2]) -> f64) -> Self {
        NodalField(mesh.vertices().iter().map(|&x| f(x)).collect())
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.0
    }

    pub fn max_abs(&self) -> f64 {
        self.0.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    pub fn is_finite(&self) -> bool {
        self.0.iter().all(|v| v.is_finite())
    }
}

impl From<Vec<f64>> for NodalField {
    fn from(v: Vec<f64>) -> Self {
        NodalField(v)
    }
}

impl Deref for NodalField {
    type Target = [f64];
    fn deref(&self) -> &[f64] {
        &self.0
    }
}

impl DerefMut for NodalField {
    fn deref_mut(&mut self) -> &mut [f64] {
        &mut self.0
    }
}

/// Area and barycentric-coordinate gradients of one triangle.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ElementGeometry {
    pub area: f64,
    pub grads: [[f64; 2]; 3],
}

impl ElementGeometry {
    fn new(p: [[f64; 2]; 3]) -> Self {
        let area = 0.5 * ((p[1][0] - p[0][0]) * (p[2][1] - p[0][1]) - (p[2][0] - p[0][0]) * (p[1][1] - p[0][1]));
        let s = 1.0 / (2.0 * area);
        let grads = [
            [(p[1][1] - p[2][1]) * s, (p[2][0] - p[1][0]) * s],
            [(p[2][1] - p[0][1]) * s, (p[0][0] - p[2][0]) * s],
            [(p[0][1] - p[1][1]) * s, (p[1][0] - p[0][0]) * s],
        ];
        ElementGeometry { area, grads }
    }
}

fn dot2(a: [f64; 2], b: [f64; 2]) -> f64 {
    a[0] * b[0] + a[1] * b[1]
}

type Local = [[f64; 3]; 3];

/// P1 space on a mesh: the vertex-adjacency pattern, element geometry and
/// the element-to-slot scatter map are computed once.
///
/// Local matrices are indexed `[test][trial]`; in the global matrix rows
/// are test functions and columns trial functions.
#[derive(Debug, Clone)]
pub struct FemSpace {
    mesh: Arc<Mesh>,
    pattern: Arc<SparsityPattern>,
    slots: Vec<[usize; 9]>,
    geometry: Vec<ElementGeometry>,
    unit_mass: CsrMatrix,
}

impl FemSpace {
    pub fn new(mesh: Arc<Mesh>) -> Self {
        let n = mesh.num_vertices();
        let mut rows = vec![Vec::new(); n];
        for t in mesh.triangles() {
            for &a in t {
                rows[a].extend_from_slice(t);
            }
        }
        let pattern = Arc::new(SparsityPattern::from_rows(rows));
        let slots = mesh
            .triangles()
            .iter()
            .map(|t| {
                let mut s = [0usize; 9];
                for a in 0..3 {
                    for b in 0..3 {
                        s[3 * a + b] = pattern.slot(t[a], t[b]).expect("element entry in pattern");
                    }
                }
                s
            })
            .collect();
        let geometry = mesh
            .triangles()
            .iter()
            .map(|t| ElementGeometry::new(t.map(|i| mesh.vertices()[i])))
            .collect();
        let mut space = FemSpace {
            mesh,
            pattern: pattern.clone(),
            slots,
            geometry,
            unit_mass: CsrMatrix::zeros(pattern),
        };
        space.unit_mass = space.assemble_weighted_mass(&NodalField::constant(n, 1.0));
        space
    }

    pub fn mesh(&self) -> &Arc<Mesh> {
        &self.mesh
    }

    pub fn dim(&self) -> usize {
        self.mesh.num_vertices()
    }

    pub fn pattern(&self) -> &Arc<SparsityPattern> {
        &self.pattern
    }

    pub fn geometry(&self) -> &[ElementGeometry] {
        &self.geometry
    }

    /// Consistent mass matrix with unit weight.
    pub fn mass(&self) -> &CsrMatrix {
        &self.unit_mass
    }

    fn check(&self, f: &[f64]) {
        assert_eq!(f.len(), self.dim(), "nodal field does not match the mesh");
    }

    fn assemble(&self, local: impl Fn(usize, &ElementGeometry) -> Local + Sync) -> CsrMatrix {
        let locals: Vec<Local> = self
            .geometry
            .par_iter()
            .enumerate()
            .map(|(e, g)| local(e, g))
            .collect();
        let mut m = CsrMatrix::zeros(self.pattern.clone());
        let vals = m.values_mut();
        for (lm, slots) in locals.iter().zip(&self.slots) {
            for a in 0..3 {
                for b in 0..3 {
                    vals[slots[3 * a + b]] += lm[a][b];
                }
            }
        }
        m
    }

    /// M_ij = ∫ w φ_i φ_j with w the P1 interpolant of `weight`, integrated exactly.
    pub fn assemble_weighted_mass(&self, weight: &[f64]) -> CsrMatrix {
        self.check(weight);
        let tris = self.mesh.triangles();
        self.assemble(|e, g| {
            let w = tris[e].map(|i| weight[i]);
            // ∫ λa λb λc = 2|K| a!b!c!/(a+b+c+2)!
            let mut lm = [[0.0; 3]; 3];
            for a in 0..3 {
                for b in 0..3 {
                    let mut s = 0.0;
                    for (c, wc) in w.iter().enumerate() {
                        let moment = match (a == b, b == c, a == c) {
                            (true, true, _) => 1.0 / 10.0,
                            (true, false, _) | (false, true, _) | (false, false, true) => 1.0 / 30.0,
                            _ => 1.0 / 60.0,
                        };
                        s += wc * moment;
                    }
                    lm[a][b] = g.area * s;
                }
            }
            lm
        })
    }

    /// A_ij = ∫ ∇φ_j · ∇(w φ_i): the coefficient sits on the test function,
    /// so the matrix is nonsymmetric wherever ∇w ≠ 0.
    pub fn assemble_weighted_stiffness(&self, weight: &[f64]) -> CsrMatrix {
        self.check(weight);
        let tris = self.mesh.triangles();
        self.assemble(|e, g| {
            let w = tris[e].map(|i| weight[i]);
            let wbar = (w[0] + w[1] + w[2]) / 3.0;
            let gw = [
                w[0] * g.grads[0][0] + w[1] * g.grads[1][0] + w[2] * g.grads[2][0],
                w[0] * g.grads[0][1] + w[1] * g.grads[1][1] + w[2] * g.grads[2][1],
            ];
            let mut lm = [[0.0; 3]; 3];
            for a in 0..3 {
                for b in 0..3 {
                    lm[a][b] = g.area * (wbar * dot2(g.grads[a], g.grads[b]) + dot2(g.grads[b], gw) / 3.0);
                }
            }
            lm
        })
    }

    /// Standard stiffness ∫ ∇φ_i·∇φ_j.
    pub fn assemble_stiffness(&self) -> CsrMatrix {
        self.assemble(|_, g| {
            let mut lm = [[0.0; 3]; 3];
            for a in 0..3 {
                for b in 0..3 {
                    lm[a][b] = g.area * dot2(g.grads[a], g.grads[b]);
                }
            }
            lm
        })
    }

    /// C_ij = ∫ (v·∇φ_i) φ_j for an element-constant velocity.
    pub fn assemble_convection(&self, velocity: &[[f64; 2]]) -> CsrMatrix {
        assert_eq!(velocity.len(), self.mesh.num_triangles(), "one velocity per element");
        self.assemble(|e, g| {
            let v = velocity[e];
            let mut lm = [[0.0; 3]; 3];
            for a in 0..3 {
                let c = dot2(v, g.grads[a]) * g.area / 3.0;
                lm[a] = [c, c, c];
            }
            lm
        })
    }

    /// b_i = ∫_Γ Φ(x, n) φ_i dσ over edges tagged `tag`, two-point Gauss per
    /// edge; `n` is the outward unit normal.
    pub fn assemble_boundary_load(
        &self,
        tag: BoundaryTag,
        flux: impl Fn([f64; 2], [f64; 2]) -> f64,
    ) -> Result<Vec<f64>, FemError> {
        if !self.mesh.has_tag(tag) {
            return Err(FemError::UnknownTag(tag));
        }
        let xs = self.mesh.vertices();
        let mut b = vec![0.0; self.dim()];
        let off = 0.5 / 3f64.sqrt();
        for e in self.mesh.boundary_edges().iter().filter(|e| e.tag == tag) {
            let [i, j] = e.vertices;
            let (pi, pj) = (xs[i], xs[j]);
            let len = self.mesh.edge_length(e.vertices);
            let n = [(pj[1] - pi[1]) / len, (pi[0] - pj[0]) / len];
            for s in [0.5 - off, 0.5 + off] {
                let x = [pi[0] + s * (pj[0] - pi[0]), pi[1] + s * (pj[1] - pi[1])];
                let f = flux(x, n) * 0.5 * len;
                b[i] += f * (1.0 - s);
                b[j] += f * s;
            }
        }
        Ok(b)
    }

    /// B_ij = coeff ∫_Γ φ_i φ_j dσ over edges tagged `tag`.
    pub fn assemble_boundary_mass(&self, tag: BoundaryTag, coefficient: f64) -> Result<CsrMatrix, FemError> {
        if !self.mesh.has_tag(tag) {
            return Err(FemError::UnknownTag(tag));
        }
        let mut m = CsrMatrix::zeros(self.pattern.clone());
        for e in self.mesh.boundary_edges().iter().filter(|e| e.tag == tag) {
            let [i, j] = e.vertices;
            let c = coefficient * self.mesh.edge_length(e.vertices) / 6.0;
            for (r, s, v) in [(i, i, 2.0 * c), (j, j, 2.0 * c), (i, j, c), (j, i, c)] {
                let slot = self.pattern.slot(r, s).expect("boundary edge in pattern");
                m.values_mut()[slot] += v;
            }
        }
        Ok(m)
    }

    /// Exact gradient of the P1 interpolant, one vector per element.
    pub fn element_gradient(&self, field: &[f64]) -> Vec<[f64; 2]> {
        self.check(field);
        self.mesh
            .triangles()
            .iter()
            .zip(&self.geometry)
            .map(|(t, g)| {
                let mut d = [0.0; 2];
                for a in 0..3 {
                    d[0] += field[t[a]] * g.grads[a][0];
                    d[1] += field[t[a]] * g.grads[a][1];
                }
                d
            })
            .collect()
    }

    /// (f, φ_i) for a nodal field: M f.
    pub fn load(&self, f: &[f64]) -> Vec<f64> {
        self.check(f);
        self.unit_mass.mul_vec(f)
    }

    /// ∫_Ω f for the P1 interpolant of `f`.
    pub fn integrate(&self, f: &[f64]) -> f64 {
        self.check(f);
        self.mesh
            .triangles()
            .iter()
            .zip(&self.geometry)
            .map(|(t, g)| g.area * (f[t[0]] + f[t[1]] + f[t[2]]) / 3.0)
            .sum()
    }

    /// ‖f‖_{L²(Ω)} via the consistent mass matrix.
    pub fn l2_norm(&self, f: &[f64]) -> f64 {
        let mf = self.load(f);
        f.iter().zip(&mf).map(|(a, b)| a * b).sum::<f64>().max(0.0).sqrt()
    }
}

/// Replaces the rows of `nodes` by identity rows and sets the prescribed
/// values in the right-hand side.
pub fn apply_dirichlet(matrix: &mut CsrMatrix, rhs: &mut [f64], nodes: &[usize], values: &[f64]) {
    assert_eq!(nodes.len(), values.len());
    let rp = matrix.pattern().row_ptr().to_vec();
    let ci = matrix.pattern().col_idx().to_vec();
    let vals = matrix.values_mut();
    for (&i, &v) in nodes.iter().zip(values) {
        for k in rp[i]..rp[i + 1] {
            vals[k] = if ci[k] == i { 1.0 } else { 0.0 };
        }
        rhs[i] = v;
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn reference() -> FemSpace {
        FemSpace::new(Arc::new(Mesh::reference_triangle()))
    }

    #[test]
    fn reference_mass() {
        let s = reference();
        let m = s.assemble_weighted_mass(&[1.0; 3]);
        for i in 0..3 {
            for j in 0..3 {
                let expect = if i == j { 1.0 / 12.0 } else { 1.0 / 24.0 };
                assert_relative_eq!(m.get(i, j), expect, max_relative = 1e-14);
            }
        }
    }

    #[test]
    fn reference_stiffness() {
        let s = reference();
        let k = s.assemble_weighted_stiffness(&[1.0; 3]);
        let expect = [[1.0, -0.5, -0.5], [-0.5, 0.5, 0.0], [-0.5, 0.0, 0.5]];
        for i in 0..3 {
            for j in 0..3 {
                assert!((k.get(i, j) - expect[i][j]).abs() < 1e-14);
            }
        }
    }

    #[test]
    fn unit_square_partition_of_unity() {
        let s = FemSpace::new(Arc::new(Mesh::unit_square()));
        let m = s.assemble_weighted_mass(&[1.0; 4]);
        let total: f64 = m.values().iter().sum();
        assert_relative_eq!(total, 1.0, max_relative = 1e-14);
        let m3 = s.assemble_weighted_mass(&[3.0; 4]);
        for (a, b) in m3.values().iter().zip(m.values()) {
            assert_relative_eq!(*a, 3.0 * b, max_relative = 1e-14);
        }
        let k = s.assemble_weighted_stiffness(&[1.0; 4]);
        let k2 = s.assemble_weighted_stiffness(&[2.5; 4]);
        for (a, b) in k2.values().iter().zip(k.values()) {
            assert_relative_eq!(*a, 2.5 * b, max_relative = 1e-14);
        }
    }

    #[test]
    fn convection_zero_velocity_and_column_sums() {
        let mesh = Arc::new(Mesh::structured_rectangle(0.0, 1.0, 0.0, 1.0, 3, 3).unwrap());
        let s = FemSpace::new(mesh.clone());
        let c0 = s.assemble_convection(&vec![[0.0, 0.0]; mesh.num_triangles()]);
        assert!(c0.values().iter().all(|v| *v == 0.0));
        // Σ_i φ_i = 1 has zero gradient, so every column sums to zero
        let c = s.assemble_convection(&vec![[0.3, -1.2]; mesh.num_triangles()]);
        let ones = vec![1.0; s.dim()];
        for v in c.mul_transpose_vec(&ones) {
            assert!(v.abs() < 1e-14);
        }
    }

    #[test]
    fn reference_convection() {
        let s = reference();
        let c = s.assemble_convection(&[[1.0, 0.0]]);
        // ∂x λ = (-1, 1, 0), ∫ λ_j = 1/6
        let expect = [-1.0 / 6.0, 1.0 / 6.0, 0.0];
        for i in 0..3 {
            for j in 0..3 {
                assert!((c.get(i, j) - expect[i]).abs() < 1e-14);
            }
        }
    }

    #[test]
    fn gradients_of_linear_fields() {
        let mesh = Arc::new(Mesh::structured_rectangle(-1.0, 1.0, 0.0, 2.0, 4, 5).unwrap());
        let s = FemSpace::new(mesh.clone());
        let f = NodalField::from_fn(&mesh, |x| 3.0 * x[0] + 2.0 * x[1]);
        for g in s.element_gradient(&f) {
            assert!((g[0] - 3.0).abs() < 1e-12 && (g[1] - 2.0).abs() < 1e-12);
        }
        let c = NodalField::constant(s.dim(), 4.0);
        assert!(s.element_gradient(&c).iter().all(|g| g[0].abs() < 1e-14 && g[1].abs() < 1e-14));
    }

    #[test]
    fn straight_edge_load() {
        let s = FemSpace::new(Arc::new(Mesh::structured_rectangle(0.0, 2.0, 0.0, 1.0, 1, 1).unwrap()));
        let b = s.assemble_boundary_load(BoundaryTag::GammaB, |_, _| 1.0).unwrap();
        assert_relative_eq!(b[0], 1.0, max_relative = 1e-14);
        assert_relative_eq!(b[1], 1.0, max_relative = 1e-14);
        let z = s.assemble_boundary_load(BoundaryTag::GammaA, |_, _| 0.0).unwrap();
        assert!(z.iter().all(|v| *v == 0.0));
    }

    #[test]
    fn boundary_mass_element() {
        let s = FemSpace::new(Arc::new(Mesh::structured_rectangle(0.0, 2.0, 0.0, 1.0, 1, 1).unwrap()));
        let b = s.assemble_boundary_mass(BoundaryTag::GammaB, 1.0).unwrap();
        assert_relative_eq!(b.get(0, 0), 2.0 / 3.0, max_relative = 1e-14);
        assert_relative_eq!(b.get(0, 1), 1.0 / 3.0, max_relative = 1e-14);
        assert!(b.is_symmetric(0.0));
        let z = s.assemble_boundary_mass(BoundaryTag::GammaB, 0.0).unwrap();
        assert!(z.values().iter().all(|v| *v == 0.0));
    }

    #[test]
    fn unknown_tag() {
        let s = reference();
        assert_eq!(
            s.assemble_boundary_load(BoundaryTag::GammaA, |_, _| 1.0).unwrap_err(),
            FemError::UnknownTag(BoundaryTag::GammaA)
        );
        assert!(s.assemble_boundary_mass(BoundaryTag::GammaB, 1.0).is_err());
    }

    #[test]
    fn dirichlet_rows() {
        let s = FemSpace::new(Arc::new(Mesh::unit_square()));
        let mut k = s.assemble_stiffness();
        let mut rhs = vec![0.0; 4];
        apply_dirichlet(&mut k, &mut rhs, &[0], &[2.0]);
        assert_eq!(k.get(0, 0), 1.0);
        assert_eq!(k.get(0, 1), 0.0);
        assert_eq!(rhs[0], 2.0);
    }
}
