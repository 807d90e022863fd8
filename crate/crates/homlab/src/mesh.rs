//! P1 finite elements on a structured box mesh with Kuhn simplicial
//! subdivision: assembly of stiffness/mass pencils for
//! `-div(a(./eps) grad)` with Dirichlet conditions, discrete norms, and
//! eps-rescaled evaluation of torus fields at mesh points.

use std::sync::Arc;

use crate::dense::SymMat;
use crate::error::{Error, Result};
use crate::field::CoefficientField;
use crate::grid::TorusGrid;
use crate::scalar::Scalar;
use crate::sparse::SparseMatrix;

const MAX_DIM: usize = 3;

/// One simplex type of the Kuhn subdivision: vertex offsets within a grid
/// cell, P1 shape-function gradients, and the volume (shared by all cells).
#[derive(Clone, Debug)]
struct ElemType<F> {
    node_offsets: [usize; MAX_DIM + 1],
    grads: [[F; MAX_DIM]; MAX_DIM + 1],
    volume: F,
    barycenter_offset: [F; MAX_DIM],
}

/// Structured simplicial mesh of the box `[0, s_1] x ... x [0, s_d]` with
/// `m` nodes per axis.
#[derive(Debug)]
pub struct BoxMesh<F> {
    dim: usize,
    sides: [F; MAX_DIM],
    nodes_per_axis: usize,
    spacings: [F; MAX_DIM],
    types: Vec<ElemType<F>>,
    boundary: Vec<bool>,
    interior: Vec<usize>,
    interior_index: Vec<usize>, // usize::MAX for boundary nodes
}

fn permutations(d: usize) -> Vec<Vec<usize>> {
    let mut out = Vec::new();
    let mut idx: Vec<usize> = (0..d).collect();
    fn heap(k: usize, idx: &mut Vec<usize>, out: &mut Vec<Vec<usize>>) {
        if k <= 1 {
            out.push(idx.clone());
            return;
        }
        for i in 0..k {
            heap(k - 1, idx, out);
            if k % 2 == 0 {
                idx.swap(i, k - 1);
            } else {
                idx.swap(0, k - 1);
            }
        }
    }
    heap(d, &mut idx, &mut out);
    out.sort();
    out
}

/// Invert a small d x d matrix (rows of `e`), plain Gauss elimination.
fn invert_small<F: Scalar>(e: &[[F; MAX_DIM]], d: usize) -> Result<Vec<[F; MAX_DIM]>> {
    let mut a = vec![[F::zero(); 2 * MAX_DIM]; d];
    for i in 0..d {
        for j in 0..d {
            a[i][j] = e[i][j];
        }
        a[i][d + i] = F::one();
    }
    for col in 0..d {
        let mut piv = col;
        for r in col + 1..d {
            if a[r][col].abs() > a[piv][col].abs() {
                piv = r;
            }
        }
        if a[piv][col].abs() <= F::epsilon() {
            return Err(Error::DegenerateElement("singular vertex matrix".into()));
        }
        a.swap(col, piv);
        let p = a[col][col];
        for j in 0..2 * d {
            a[col][j] = a[col][j] / p;
        }
        for r in 0..d {
            if r != col {
                let f = a[r][col];
                for j in 0..2 * d {
                    let t = f * a[col][j];
                    a[r][j] = a[r][j] - t;
                }
            }
        }
    }
    Ok((0..d)
        .map(|i| {
            let mut row = [F::zero(); MAX_DIM];
            for j in 0..d {
                row[j] = a[i][d + j];
            }
            row
        })
        .collect())
}

impl<F: Scalar> BoxMesh<F> {
    pub fn new(dim: usize, sides: &[F], nodes_per_axis: usize) -> Result<Self> {
        if !(1..=3).contains(&dim) {
            return Err(Error::DimOutOfRange(dim));
        }
        if sides.len() != dim {
            return Err(Error::validation("mesh.sides", "length must equal dimension"));
        }
        if nodes_per_axis < 3 {
            return Err(Error::validation("mesh.nodes", "need at least 3 nodes per axis"));
        }
        let mut s = [F::one(); MAX_DIM];
        let mut h = [F::one(); MAX_DIM];
        for a in 0..dim {
            if sides[a] <= F::zero() {
                return Err(Error::validation("mesh.sides", "must be positive"));
            }
            s[a] = sides[a];
            h[a] = sides[a] / F::cast((nodes_per_axis - 1) as f64);
        }

        // node strides: axis 0 slowest
        let node_stride = |axis: usize| nodes_per_axis.pow((dim - 1 - axis) as u32);

        let mut types = Vec::new();
        for perm in permutations(dim) {
            let mut coord_offsets = [[0usize; MAX_DIM]; MAX_DIM + 1];
            for v in 1..=dim {
                coord_offsets[v] = coord_offsets[v - 1];
                coord_offsets[v][perm[v - 1]] += 1;
            }
            let mut node_offsets = [0usize; MAX_DIM + 1];
            for v in 0..=dim {
                let mut off = 0usize;
                for a in 0..dim {
                    off += coord_offsets[v][a] * node_stride(a);
                }
                node_offsets[v] = off;
            }
            // edge matrix rows p_v - p_0 in physical coordinates
            let mut e = vec![[F::zero(); MAX_DIM]; dim];
            for v in 1..=dim {
                for a in 0..dim {
                    e[v - 1][a] =
                        F::cast(coord_offsets[v][a] as f64 - coord_offsets[0][a] as f64) * h[a];
                }
            }
            let inv = invert_small(&e, dim)?;
            let mut grads = [[F::zero(); MAX_DIM]; MAX_DIM + 1];
            for v in 1..=dim {
                for a in 0..dim {
                    // gradient of barycentric v = column v-1 of E^{-1}
                    grads[v][a] = inv[a][v - 1];
                }
            }
            for a in 0..dim {
                let mut acc = F::zero();
                for v in 1..=dim {
                    acc += grads[v][a];
                }
                grads[0][a] = -acc;
            }
            let mut volume = F::one();
            for a in 0..dim {
                volume = volume * h[a];
            }
            let mut fact = 1.0;
            for k in 2..=dim {
                fact *= k as f64;
            }
            volume = volume / F::cast(fact);
            if volume <= F::zero() {
                return Err(Error::DegenerateElement("non-positive volume".into()));
            }
            let mut bary = [F::zero(); MAX_DIM];
            for a in 0..dim {
                let mut acc = F::zero();
                for v in 0..=dim {
                    acc += F::cast(coord_offsets[v][a] as f64);
                }
                bary[a] = acc / F::cast((dim + 1) as f64) * h[a];
            }
            types.push(ElemType {
                node_offsets,
                grads,
                volume,
                barycenter_offset: bary,
            });
        }

        let num_nodes = nodes_per_axis.pow(dim as u32);
        let mut boundary = vec![false; num_nodes];
        let mut interior = Vec::new();
        let mut interior_index = vec![usize::MAX; num_nodes];
        for node in 0..num_nodes {
            let c = Self::node_coords_static(node, dim, nodes_per_axis);
            let is_bdry = (0..dim).any(|a| c[a] == 0 || c[a] == nodes_per_axis - 1);
            boundary[node] = is_bdry;
            if !is_bdry {
                interior_index[node] = interior.len();
                interior.push(node);
            }
        }

        Ok(BoxMesh {
            dim,
            sides: s,
            nodes_per_axis,
            spacings: h,
            types,
            boundary,
            interior,
            interior_index,
        })
    }

    fn node_coords_static(mut node: usize, dim: usize, m: usize) -> [usize; MAX_DIM] {
        let mut c = [0usize; MAX_DIM];
        for a in (0..dim).rev() {
            c[a] = node % m;
            node /= m;
        }
        c
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn nodes_per_axis(&self) -> usize {
        self.nodes_per_axis
    }

    pub fn sides(&self) -> &[F] {
        &self.sides[..self.dim]
    }

    pub fn spacings(&self) -> &[F] {
        &self.spacings[..self.dim]
    }

    pub fn num_nodes(&self) -> usize {
        self.nodes_per_axis.pow(self.dim as u32)
    }

    pub fn num_grid_cells(&self) -> usize {
        (self.nodes_per_axis - 1).pow(self.dim as u32)
    }

    pub fn elems_per_cell(&self) -> usize {
        self.types.len()
    }

    pub fn num_elements(&self) -> usize {
        self.num_grid_cells() * self.elems_per_cell()
    }

    pub fn num_interior(&self) -> usize {
        self.interior.len()
    }

    pub fn interior_nodes(&self) -> &[usize] {
        &self.interior
    }

    pub fn is_boundary(&self, node: usize) -> bool {
        self.boundary[node]
    }

    pub fn interior_index_of(&self, node: usize) -> Option<usize> {
        let idx = self.interior_index[node];
        (idx != usize::MAX).then_some(idx)
    }

    pub fn node_grid_coords(&self, node: usize) -> [usize; MAX_DIM] {
        Self::node_coords_static(node, self.dim, self.nodes_per_axis)
    }

    pub fn node_position(&self, node: usize) -> [F; MAX_DIM] {
        let c = self.node_grid_coords(node);
        let mut p = [F::zero(); MAX_DIM];
        for a in 0..self.dim {
            p[a] = F::cast(c[a] as f64) * self.spacings[a];
        }
        p
    }

    fn cell_corner_node(&self, cell: usize) -> usize {
        let mc = self.nodes_per_axis - 1;
        let mut rem = cell;
        let mut corner = 0usize;
        for a in (0..self.dim).rev() {
            let ca = rem % mc;
            rem /= mc;
            corner += ca * self.nodes_per_axis.pow((self.dim - 1 - a) as u32);
        }
        corner
    }

    fn cell_corner_coords(&self, cell: usize) -> [usize; MAX_DIM] {
        let mc = self.nodes_per_axis - 1;
        let mut rem = cell;
        let mut c = [0usize; MAX_DIM];
        for a in (0..self.dim).rev() {
            c[a] = rem % mc;
            rem /= mc;
        }
        c
    }

    /// Node ids of element `e` (cell-major, type-minor ordering).
    pub fn element_nodes(&self, e: usize) -> [usize; MAX_DIM + 1] {
        let t = e % self.types.len();
        let cell = e / self.types.len();
        let corner = self.cell_corner_node(cell);
        let ty = &self.types[t];
        let mut nodes = [0usize; MAX_DIM + 1];
        for v in 0..=self.dim {
            nodes[v] = corner + ty.node_offsets[v];
        }
        nodes
    }

    pub fn element_volume(&self, e: usize) -> F {
        self.types[e % self.types.len()].volume
    }

    pub fn element_grads(&self, e: usize) -> &[[F; MAX_DIM]; MAX_DIM + 1] {
        &self.types[e % self.types.len()].grads
    }

    pub fn element_barycenter(&self, e: usize) -> [F; MAX_DIM] {
        let t = e % self.types.len();
        let cell = e / self.types.len();
        let cc = self.cell_corner_coords(cell);
        let ty = &self.types[t];
        let mut p = [F::zero(); MAX_DIM];
        for a in 0..self.dim {
            p[a] = F::cast(cc[a] as f64) * self.spacings[a] + ty.barycenter_offset[a];
        }
        p
    }

    /// Piecewise-constant P1 gradient of nodal data on element `e`.
    pub fn element_gradient(&self, e: usize, u: &[F]) -> [F; MAX_DIM] {
        let nodes = self.element_nodes(e);
        let grads = self.element_grads(e);
        let mut g = [F::zero(); MAX_DIM];
        for v in 0..=self.dim {
            let uv = u[nodes[v]];
            for a in 0..self.dim {
                g[a] += uv * grads[v][a];
            }
        }
        g
    }
}

/// Stiffness/mass pencil on interior nodes after Dirichlet elimination.
#[derive(Clone, Debug)]
pub struct SparseOperatorPair<F> {
    pub stiffness: SparseMatrix<F>,
    pub mass: SparseMatrix<F>,
    pub eps: F,
    pub mesh: Arc<BoxMesh<F>>,
    /// mean of the coefficient matrices sampled at element barycenters
    pub mean_coefficient: SymMat<F>,
}

fn assemble_with<F: Scalar>(
    mesh: &BoxMesh<F>,
    mut coef: impl FnMut(&[F; MAX_DIM]) -> SymMat<F>,
    interior_only: bool,
) -> (SparseMatrix<F>, SparseMatrix<F>, SymMat<F>) {
    let d = mesh.dim();
    let nel = mesh.num_elements();
    let cap = nel * (d + 1) * (d + 1);
    let mut kt: Vec<(usize, usize, F)> = Vec::with_capacity(cap);
    let mut mt: Vec<(usize, usize, F)> = Vec::with_capacity(cap);
    let mut mean = SymMat::zero(d);
    let mass_scale = F::one() / F::cast(((d + 1) * (d + 2)) as f64);
    for e in 0..nel {
        let nodes = mesh.element_nodes(e);
        let grads = mesh.element_grads(e);
        let vol = mesh.element_volume(e);
        let bary = mesh.element_barycenter(e);
        let a = coef(&bary);
        mean = mean.add(&a.scale(F::one() / F::cast(nel as f64)));
        for i in 0..=d {
            let ni = nodes[i];
            if interior_only && mesh.is_boundary(ni) {
                continue;
            }
            let gi = grads[i];
            let agi = a.matvec(&gi);
            for j in i..=d {
                let nj = nodes[j];
                if interior_only && mesh.is_boundary(nj) {
                    continue;
                }
                let mut kij = F::zero();
                for ax in 0..d {
                    kij += agi[ax] * grads[j][ax];
                }
                kij = kij * vol;
                let mij = vol
                    * mass_scale
                    * if i == j { F::cast(2.0) } else { F::one() };
                let (ri, rj) = if interior_only {
                    (
                        mesh.interior_index_of(ni).unwrap(),
                        mesh.interior_index_of(nj).unwrap(),
                    )
                } else {
                    (ni, nj)
                };
                kt.push((ri, rj, kij));
                mt.push((ri, rj, mij));
                if ri != rj {
                    kt.push((rj, ri, kij));
                    mt.push((rj, ri, mij));
                }
            }
        }
    }
    let size = if interior_only {
        mesh.num_interior()
    } else {
        mesh.num_nodes()
    };
    (
        SparseMatrix::from_triplets(size, &mut kt),
        SparseMatrix::from_triplets(size, &mut mt),
        mean,
    )
}

/// Assemble the Dirichlet pencil for `-div(a(./eps) grad)`, coefficient
/// sampled at element barycenters by nearest-cell lookup on the torus.
pub fn assemble_operator<F: Scalar>(
    mesh: &Arc<BoxMesh<F>>,
    field: &CoefficientField<F>,
    eps: F,
) -> Result<SparseOperatorPair<F>> {
    if eps <= F::zero() || eps > F::one() {
        return Err(Error::validation("eps", "must lie in (0, 1]"));
    }
    if field.dim() != mesh.dim() {
        return Err(Error::GridMismatch(
            "coefficient field dimension differs from mesh dimension".into(),
        ));
    }
    let m = mesh.nodes_per_axis();
    if F::cast(m as f64) < F::cast(4.0) / eps {
        log::warn!(
            "mesh with {m} nodes per axis does not resolve eps = {}",
            eps.to_f64_lossy()
        );
    }
    let d = mesh.dim();
    let grid = field.grid.clone();
    let (k, mm, mean) = assemble_with(
        mesh,
        |bary| {
            let mut y = [F::zero(); MAX_DIM];
            for a in 0..d {
                y[a] = bary[a] / eps;
            }
            field.cell_matrix(grid.cell_containing(&y[..d]))
        },
        true,
    );
    Ok(SparseOperatorPair {
        stiffness: k,
        mass: mm,
        eps,
        mesh: Arc::clone(mesh),
        mean_coefficient: mean,
    })
}

/// Assemble the Dirichlet pencil for a constant coefficient matrix.
pub fn assemble_constant<F: Scalar>(
    mesh: &Arc<BoxMesh<F>>,
    a: SymMat<F>,
) -> Result<SparseOperatorPair<F>> {
    if a.dim != mesh.dim() {
        return Err(Error::GridMismatch(
            "constant coefficient dimension differs from mesh dimension".into(),
        ));
    }
    let (k, mm, mean) = assemble_with(mesh, |_| a, true);
    Ok(SparseOperatorPair {
        stiffness: k,
        mass: mm,
        eps: F::one(),
        mesh: Arc::clone(mesh),
        mean_coefficient: mean,
    })
}

/// Full-mesh mass matrix and unit-Laplacian stiffness (no elimination),
/// the quadratic forms behind the discrete L2 norm and H1 seminorm.
pub struct MeshNorms<F> {
    pub mass_full: SparseMatrix<F>,
    pub laplace_full: SparseMatrix<F>,
}

impl<F: Scalar> MeshNorms<F> {
    pub fn new(mesh: &BoxMesh<F>) -> Self {
        let (k, m, _) = assemble_with(mesh, |_| SymMat::identity(mesh.dim()), false);
        MeshNorms {
            mass_full: m,
            laplace_full: k,
        }
    }
}

/// `(L2 norm, H1 seminorm)` of nodal data over the whole mesh.
pub fn norms<F: Scalar>(u: &[F], ctx: &MeshNorms<F>) -> Result<(F, F)> {
    if u.len() != ctx.mass_full.size {
        return Err(Error::SizeMismatch(format!(
            "norms: {} nodal values on a mesh with {} nodes",
            u.len(),
            ctx.mass_full.size
        )));
    }
    let l2 = ctx.mass_full.quad_form(u).max(F::zero()).sqrt();
    let h1 = ctx.laplace_full.quad_form(u).max(F::zero()).sqrt();
    Ok((l2, h1))
}

/// Evaluate a torus-field component at every mesh node after rescaling by
/// `1/eps` (periodic wrap, containing-cell rule).
pub fn interpolate_scaled<F: Scalar>(
    values: &[F],
    grid: &TorusGrid<F>,
    mesh: &BoxMesh<F>,
    eps: F,
) -> Result<Vec<F>> {
    if eps <= F::zero() {
        return Err(Error::validation("eps", "must be positive"));
    }
    if values.len() != grid.num_cells() {
        return Err(Error::SizeMismatch("torus values vs grid".into()));
    }
    let d = mesh.dim();
    let mut out = Vec::with_capacity(mesh.num_nodes());
    for node in 0..mesh.num_nodes() {
        let p = mesh.node_position(node);
        let mut y = [F::zero(); MAX_DIM];
        for a in 0..d {
            y[a] = p[a] / eps;
        }
        out.push(values[grid.cell_containing(&y[..d])]);
    }
    Ok(out)
}

/// Expand an interior-dof vector to full nodal data (zeros on the boundary).
pub fn expand_interior<F: Scalar>(mesh: &BoxMesh<F>, interior: &[F]) -> Vec<F> {
    let mut full = vec![F::zero(); mesh.num_nodes()];
    for (i, &node) in mesh.interior_nodes().iter().enumerate() {
        full[node] = interior[i];
    }
    full
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::field::{sample_gaussian_field, CoefficientMapSpec, KernelFamily, KernelSpec, MapFamily};

    fn mesh1d(m: usize) -> Arc<BoxMesh<f64>> {
        Arc::new(BoxMesh::new(1, &[1.0], m).unwrap())
    }

    fn mesh2d(m: usize) -> Arc<BoxMesh<f64>> {
        Arc::new(BoxMesh::new(2, &[1.0, 1.37], m).unwrap())
    }

    #[test]
    fn kuhn_subdivision_counts() {
        let m2 = mesh2d(5);
        assert_eq!(m2.num_elements(), 16 * 2);
        assert_eq!(m2.num_interior(), 9);
        let m3 = Arc::new(BoxMesh::<f64>::new(3, &[1.0, 1.0, 1.0], 4).unwrap());
        assert_eq!(m3.num_elements(), 27 * 6);
        // every element has positive volume and gradients sum to zero
        for e in 0..m3.num_elements() {
            assert!(m3.element_volume(e) > 0.0);
            let g = m3.element_grads(e);
            for a in 0..3 {
                let s: f64 = (0..4).map(|v| g[v][a]).sum();
                assert!(s.abs() < 1e-14);
            }
        }
    }

    #[test]
    fn one_d_single_interior_node_matrices() {
        let mesh = mesh1d(3);
        let pair = assemble_constant(&mesh, SymMat::identity(1)).unwrap();
        assert_eq!(pair.stiffness.size, 1);
        assert!((pair.stiffness.get(0, 0) - 4.0).abs() < 1e-14);
        assert!((pair.mass.get(0, 0) - 1.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn constant_scaling_is_linear() {
        let mesh = mesh2d(7);
        let k1 = assemble_constant(&mesh, SymMat::identity(2)).unwrap();
        let kc = assemble_constant(&mesh, SymMat::scaled_identity(2, 0.37)).unwrap();
        let diff = kc.stiffness.max_abs_diff(&k1.stiffness.scale(0.37));
        assert!(diff < 1e-14, "diff {diff}");
        // mass does not depend on the coefficient
        assert_eq!(kc.mass, k1.mass);
    }

    #[test]
    fn assembly_is_exactly_symmetric_and_linear_in_the_field() {
        let grid = TorusGrid::new(2, 16, 1.0).unwrap();
        let kernel = KernelSpec {
            family: KernelFamily::TruncatedGaussian,
            ell: 0.06,
            amplitude: 1.0,
            kappa: 1,
        };
        let map = CoefficientMapSpec {
            family: MapFamily::ScalarLogistic { gain: 1.0 },
            nu: 0.25,
        };
        let mesh = mesh2d(9);
        let g1 = sample_gaussian_field(1, &kernel, &grid).unwrap();
        let g2 = sample_gaussian_field(2, &kernel, &grid).unwrap();
        let a1 = crate::field::apply_coefficient_map(&g1, &map).unwrap();
        let a2 = crate::field::apply_coefficient_map(&g2, &map).unwrap();
        let p1 = assemble_operator(&mesh, &a1, 0.5).unwrap();
        let p2 = assemble_operator(&mesh, &a2, 0.5).unwrap();
        assert_eq!(p1.stiffness.max_asymmetry(), 0.0);
        assert_eq!(p1.mass.max_asymmetry(), 0.0);
        let sum_field = a1.add(&a2).unwrap();
        let psum = assemble_operator(&mesh, &sum_field, 0.5).unwrap();
        let direct = p1.stiffness.add(&p2.stiffness).unwrap();
        assert!(psum.stiffness.max_abs_diff(&direct) < 1e-13);
    }

    #[test]
    fn five_point_stencil_for_diagonal_constant_coefficient() {
        let mesh = mesh2d(5);
        let a = SymMat::from_fn(2, |i, j| if i == j { if i == 0 { 0.7 } else { 0.3 } } else { 0.0 });
        let pair = assemble_constant(&mesh, a).unwrap();
        let (h1, h2) = (mesh.spacings()[0], mesh.spacings()[1]);
        // interior grid is 3x3; check the center row couplings
        let center = 4usize; // interior index of node (2,2) in row-major interior grid
        let ew = -0.7 * h2 / h1;
        let ns = -0.3 * h1 / h2;
        assert!((pair.stiffness.get(center, 3) - ns).abs() < 1e-13);
        assert!((pair.stiffness.get(center, 5) - ns).abs() < 1e-13);
        assert!((pair.stiffness.get(center, 1) - ew).abs() < 1e-13);
        assert!((pair.stiffness.get(center, 7) - ew).abs() < 1e-13);
        // no diagonal-neighbor coupling
        assert_eq!(pair.stiffness.get(center, 0), 0.0);
        assert_eq!(pair.stiffness.get(center, 8), 0.0);
        assert!((pair.stiffness.get(center, center) + 2.0 * (ew + ns)).abs() < 1e-13);
    }

    #[test]
    fn norms_of_zero_and_single_hat() {
        let mesh = mesh1d(3);
        let ctx = MeshNorms::new(&mesh);
        let (l2, h1) = norms(&[0.0, 0.0, 0.0], &ctx).unwrap();
        assert_eq!((l2, h1), (0.0, 0.0));
        let p = 0.8;
        let (_, h1) = norms(&[0.0, p, 0.0], &ctx).unwrap();
        let h = 0.5;
        assert!((h1 * h1 - 2.0 * p * p / h).abs() < 1e-14);
    }

    #[test]
    fn interpolate_scaled_wraps_and_matches_direct_lookup() {
        let grid = TorusGrid::new(2, 8, 1.0).unwrap();
        let mut values = vec![0.0; grid.num_cells()];
        for (i, v) in values.iter_mut().enumerate() {
            *v = i as f64;
        }
        let mesh = mesh2d(9);
        let eps = 0.25;
        let out = interpolate_scaled(&values, &grid, &mesh, eps).unwrap();
        for node in (0..mesh.num_nodes()).step_by(17) {
            let p = mesh.node_position(node);
            let y = [p[0] / eps, p[1] / eps];
            assert_eq!(out[node], values[grid.cell_containing(&y)]);
        }
        // points beyond one period wrap: node at x = (1.0, 0) maps to 4.0 mod 1
        let h = grid.cell_size();
        let idx_direct = grid.cell_containing(&[4.0 + 0.5 * h, 0.5 * h]);
        let idx_wrapped = grid.cell_containing(&[0.5 * h, 0.5 * h]);
        assert_eq!(idx_direct, idx_wrapped);
    }

    #[test]
    fn eps_validation() {
        let grid = TorusGrid::new(2, 8, 1.0).unwrap();
        let field = CoefficientField::constant(grid, SymMat::identity(2), 1.0);
        let mesh = mesh2d(5);
        assert!(assemble_operator(&mesh, &field, 0.0).is_err());
        assert!(assemble_operator(&mesh, &field, -0.5).is_err());
        assert!(assemble_operator(&mesh, &field, 0.5).is_ok());
    }
}
