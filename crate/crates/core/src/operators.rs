//! Element-local HHO operators.
//!
//! All operators act on local unknown vectors laid out as in
//! [`LocalLayout`]: the cell polynomial (x then y component) followed by one
//! block per face. They are stored as dense matrices; polynomial results are
//! coefficient vectors in the element's scaled monomial basis of degree
//! `k + 1`, whose leading members span `P^k`.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::mesh::{Mesh, Vec2};
use crate::polybasis::{cell_dim, mass_matrix, Basis, ElementBases, LocalLayout};
use crate::scalar::{lit, Real};

/// Lamé coefficients.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Material<T: Real> {
    pub mu: T,
    pub lambda: T,
}

impl<T: Real> Material<T> {
    pub fn new(mu: T, lambda: T) -> Result<Self> {
        if !(mu > T::zero()) || !(lambda >= T::zero()) {
            return Err(Error::InvalidMaterial {
                mu: mu.as_f64(),
                lambda: lambda.as_f64(),
            });
        }
        Ok(Material { mu, lambda })
    }

    pub fn two_mu(&self) -> T {
        self.mu + self.mu
    }
}

/// Geometric data and exact polynomial maps attached to one local face.
#[derive(Debug, Clone)]
pub struct FaceData<T: Real> {
    pub face: usize,
    /// Outward unit normal.
    pub normal: Vec2<T>,
    pub length: T,
    /// Mass matrix of the face monomials of degree `k + 1`.
    pub mass: DMatrix<T>,
    /// Trace of the cell monomials of degree `k + 1` in face monomials of
    /// degree `k + 1`.
    pub trace: DMatrix<T>,
}

#[derive(Debug, Clone)]
pub struct ElementOperators<T: Real> {
    pub element: usize,
    pub diameter: T,
    pub layout: LocalLayout,
    pub bases: ElementBases<T>,
    /// Scalar cell mass matrix in degree `k + 1`.
    pub mass: DMatrix<T>,
    /// Integrals over the cell of the scalar basis members of degree `k + 1`.
    pub integrals: DVector<T>,
    pub dx: DMatrix<T>,
    pub dy: DMatrix<T>,
    pub faces: Vec<FaceData<T>>,
    /// Local unknowns to the coefficients of the displacement reconstruction
    /// in `P^{k+1}(T)^2`.
    pub reconstruction: DMatrix<T>,
    /// Local unknowns to the coefficients of the divergence reconstruction in
    /// `P^k(T)`.
    pub divergence: DMatrix<T>,
    /// Gram matrix of the symmetric gradient of the reconstruction.
    pub gradient_gram: DMatrix<T>,
    /// Gram matrix of the divergence reconstruction.
    pub divergence_gram: DMatrix<T>,
    /// High-order stabilization `s_T`.
    pub stabilization: DMatrix<T>,
    /// Plain jump stabilization `j_T`.
    pub jump: DMatrix<T>,
    /// Cell mean (two rows) and boundary rotation moment (one row) of the
    /// local unknowns; these fix the rigid-body part of reconstructions.
    pub rigid_closure: DMatrix<T>,
}

/// Symmetric-gradient components `(e_xx, e_yy, e_xy)` of the vector basis of
/// dimension `2n`, as maps into scalar coefficients.
pub(crate) fn strain_blocks<T: Real>(
    dx: &DMatrix<T>,
    dy: &DMatrix<T>,
) -> (DMatrix<T>, DMatrix<T>, DMatrix<T>) {
    let n = dx.nrows();
    let half = lit::<T>(0.5);
    let mut exx = DMatrix::zeros(n, 2 * n);
    let mut eyy = DMatrix::zeros(n, 2 * n);
    let mut exy = DMatrix::zeros(n, 2 * n);
    exx.view_mut((0, 0), (n, n)).copy_from(dx);
    eyy.view_mut((0, n), (n, n)).copy_from(dy);
    exy.view_mut((0, 0), (n, n)).copy_from(&(dy * half));
    exy.view_mut((0, n), (n, n)).copy_from(&(dx * half));
    (exx, eyy, exy)
}

fn block_diag2<T: Real>(m: &DMatrix<T>) -> DMatrix<T> {
    let (r, c) = m.shape();
    let mut out = DMatrix::zeros(2 * r, 2 * c);
    out.view_mut((0, 0), (r, c)).copy_from(m);
    out.view_mut((r, c), (r, c)).copy_from(m);
    out
}

/// Solves the symmetric saddle-point system `[K L^T; L 0] [X; Y] = [B; C]`
/// and returns `X`.
pub(crate) fn saddle_point_solve<T: Real>(
    k: &DMatrix<T>,
    l: &DMatrix<T>,
    b: &DMatrix<T>,
    c: &DMatrix<T>,
    what: &'static str,
    element: usize,
) -> Result<DMatrix<T>> {
    let n = k.nrows();
    let m = l.nrows();
    let mut sys = DMatrix::zeros(n + m, n + m);
    sys.view_mut((0, 0), (n, n)).copy_from(k);
    sys.view_mut((n, 0), (m, n)).copy_from(l);
    sys.view_mut((0, n), (n, m)).copy_from(&l.transpose());
    let mut rhs = DMatrix::zeros(n + m, b.ncols());
    rhs.view_mut((0, 0), (n, b.ncols())).copy_from(b);
    rhs.view_mut((n, 0), (m, b.ncols())).copy_from(c);
    let lu = sys.full_piv_lu();
    if !lu.is_invertible() {
        return Err(Error::Singular { what, element });
    }
    let sol = lu.solve(&rhs).ok_or(Error::Singular { what, element })?;
    Ok(sol.rows(0, n).into_owned())
}

impl<T: Real> ElementOperators<T> {
    /// Builds every geometric operator of element `e` for degree `k`.
    pub fn new(mesh: &Mesh<T>, e: usize, k: usize) -> Result<Self> {
        if k < 1 {
            return Err(Error::InvalidDegree(k));
        }
        let q = 2 * (k + 1);
        let bases = ElementBases::new(mesh, e, k, q)?;
        let layout = bases.layout();
        let el = &mesh.elements[e];
        let mass = mass_matrix(&bases.cell, &bases.cell_rule);
        let mut integrals = DVector::zeros(mass.nrows());
        for (p, w) in bases.cell_rule.iter() {
            integrals.axpy(w, &bases.cell.eval(p), T::one());
        }
        let (dx, dy) = bases.cell.derivative_matrices();
        let faces = el
            .faces
            .iter()
            .enumerate()
            .map(|(i, &f)| {
                let face = &mesh.faces[f];
                FaceData {
                    face: f,
                    normal: mesh.outward_normal(e, i),
                    length: face.length,
                    mass: mass_matrix(&bases.faces[i], &bases.face_rules[i]),
                    trace: bases.cell.trace_matrix(face, k + 1),
                }
            })
            .collect();
        let mut ops = ElementOperators {
            element: e,
            diameter: el.diameter,
            layout,
            bases,
            mass,
            integrals,
            dx,
            dy,
            faces,
            reconstruction: DMatrix::zeros(0, 0),
            divergence: DMatrix::zeros(0, 0),
            gradient_gram: DMatrix::zeros(0, 0),
            divergence_gram: DMatrix::zeros(0, 0),
            stabilization: DMatrix::zeros(0, 0),
            jump: DMatrix::zeros(0, 0),
            rigid_closure: DMatrix::zeros(0, 0),
        };
        ops.rigid_closure = ops.build_rigid_closure();
        ops.reconstruction = ops.build_reconstruction()?;
        ops.divergence = ops.build_divergence()?;
        let (exx, eyy, exy) = ops.strain();
        let stiff = ops.symgrad_stiffness(&exx, &eyy, &exy);
        ops.gradient_gram = ops.reconstruction.transpose() * &stiff * &ops.reconstruction;
        ops.divergence_gram = ops.divergence.transpose() * ops.mass_k() * &ops.divergence;
        ops.stabilization = ops.build_stabilization_st()?;
        ops.jump = ops.build_stabilization_jt();
        symmetrize(&mut ops.gradient_gram);
        symmetrize(&mut ops.divergence_gram);
        Ok(ops)
    }

    pub fn k(&self) -> usize {
        self.layout.k
    }

    /// Scalar `dim P^k(T)`.
    pub fn nk(&self) -> usize {
        cell_dim(self.k())
    }

    /// Scalar `dim P^{k+1}(T)`.
    pub fn nk1(&self) -> usize {
        cell_dim(self.k() + 1)
    }

    /// Scalar `dim P^k(F)`.
    pub fn fk(&self) -> usize {
        self.k() + 1
    }

    pub fn n_dofs(&self) -> usize {
        self.layout.len()
    }

    pub fn mass_k(&self) -> DMatrix<T> {
        let nk = self.nk();
        self.mass.view((0, 0), (nk, nk)).into_owned()
    }

    pub fn face_mass_k(&self, i: usize) -> DMatrix<T> {
        let fk = self.fk();
        self.faces[i].mass.view((0, 0), (fk, fk)).into_owned()
    }

    /// Trace of the `P^k` cell members, in face monomials of degree `k`.
    pub fn cell_trace_k(&self, i: usize) -> DMatrix<T> {
        self.faces[i]
            .trace
            .view((0, 0), (self.fk(), self.nk()))
            .into_owned()
    }

    /// Strain blocks of the degree `k + 1` vector basis.
    pub fn strain(&self) -> (DMatrix<T>, DMatrix<T>, DMatrix<T>) {
        strain_blocks(&self.dx, &self.dy)
    }

    fn symgrad_stiffness(&self, exx: &DMatrix<T>, eyy: &DMatrix<T>, exy: &DMatrix<T>) -> DMatrix<T> {
        let two = lit::<T>(2.0);
        let mut g = exx.transpose() * &self.mass * exx
            + eyy.transpose() * &self.mass * eyy
            + exy.transpose() * &self.mass * exy * two;
        symmetrize(&mut g);
        g
    }

    /// Embeds the cell block of the local unknowns into `P^{k+1}(T)^2`.
    pub fn cell_embedding(&self) -> DMatrix<T> {
        let (nk, nk1) = (self.nk(), self.nk1());
        let mut emb = DMatrix::zeros(2 * nk1, self.n_dofs());
        for c in 0..2 {
            for i in 0..nk {
                emb[(c * nk1 + i, c * nk + i)] = T::one();
            }
        }
        emb
    }

    /// `v -> v_F - v_T|_F` on local face `i`, in face coefficients of degree `k`.
    pub fn face_difference(&self, i: usize) -> DMatrix<T> {
        let (nk, fk) = (self.nk(), self.fk());
        let tr = self.cell_trace_k(i);
        let off = self.layout.face_offset(i);
        let mut d = DMatrix::zeros(2 * fk, self.n_dofs());
        for c in 0..2 {
            for r in 0..fk {
                d[(c * fk + r, off + c * fk + r)] = T::one();
            }
            d.view_mut((c * fk, c * nk), (fk, nk)).copy_from(&(-&tr));
        }
        d
    }

    fn build_rigid_closure(&self) -> DMatrix<T> {
        let (nk, fk) = (self.nk(), self.fk());
        let half = lit::<T>(0.5);
        let mut l = DMatrix::zeros(3, self.n_dofs());
        for i in 0..nk {
            l[(0, i)] = self.integrals[i];
            l[(1, nk + i)] = self.integrals[i];
        }
        for (i, f) in self.faces.iter().enumerate() {
            // 1/2 int_F (v_x n_y - v_y n_x)
            let off = self.layout.face_offset(i);
            for a in 0..fk {
                let moment = f.mass[(0, a)];
                l[(2, off + a)] = half * f.normal.y * moment;
                l[(2, off + fk + a)] = -half * f.normal.x * moment;
            }
        }
        l
    }

    /// Right-hand side and constraints defining the displacement
    /// reconstruction, solved as a saddle-point problem on the symmetric
    /// gradient stiffness with the three rigid-body constraints.
    fn build_reconstruction(&self) -> Result<DMatrix<T>> {
        let (nk, nk1, fk) = (self.nk(), self.nk1(), self.fk());
        let (exx, eyy, exy) = self.strain();
        let stiff = self.symgrad_stiffness(&exx, &eyy, &exy);
        let mut rhs = &stiff * self.cell_embedding();
        for (i, f) in self.faces.iter().enumerate() {
            let (nx, ny) = (f.normal.x, f.normal.y);
            // traction of each test function, traced on F
            let tn = [
                &f.trace * (&exx * nx + &exy * ny),
                &f.trace * (&exy * nx + &eyy * ny),
            ];
            let tk = f.trace.columns(0, nk);
            let mf_face = f.mass.columns(0, fk);
            let off = self.layout.face_offset(i);
            for (c, t) in tn.iter().enumerate() {
                let face_part = t.transpose() * mf_face;
                let mut block = rhs.view_mut((0, off + c * fk), (2 * nk1, fk));
                block += face_part;
                let cell_part = t.transpose() * &f.mass * tk;
                let mut block = rhs.view_mut((0, c * nk), (2 * nk1, nk));
                block -= cell_part;
            }
        }
        let half = lit::<T>(0.5);
        let mut constraints = DMatrix::zeros(3, 2 * nk1);
        for j in 0..nk1 {
            constraints[(0, j)] = self.integrals[j];
            constraints[(1, nk1 + j)] = self.integrals[j];
        }
        // int_T 1/2 (d_y p_x - d_x p_y)
        let row0 = self.integrals.transpose();
        let rot_x = (&row0 * &self.dy) * half;
        let rot_y = (&row0 * &self.dx) * (-half);
        for j in 0..nk1 {
            constraints[(2, j)] = rot_x[j];
            constraints[(2, nk1 + j)] = rot_y[j];
        }
        saddle_point_solve(
            &stiff,
            &constraints,
            &rhs,
            &self.rigid_closure,
            "reconstruction system",
            self.element,
        )
    }

    fn build_divergence(&self) -> Result<DMatrix<T>> {
        let (nk, nk1, fk) = (self.nk(), self.nk1(), self.fk());
        let mut div = DMatrix::zeros(nk1, 2 * nk1);
        div.view_mut((0, 0), (nk1, nk1)).copy_from(&self.dx);
        div.view_mut((0, nk1), (nk1, nk1)).copy_from(&self.dy);
        let mut rhs = self.mass.rows(0, nk) * div * self.cell_embedding();
        for (i, f) in self.faces.iter().enumerate() {
            let tk = f.trace.columns(0, nk);
            let face_part = tk.transpose() * f.mass.columns(0, fk);
            let cell_part = tk.transpose() * &f.mass * tk;
            let off = self.layout.face_offset(i);
            for (c, n) in [f.normal.x, f.normal.y].into_iter().enumerate() {
                let mut block = rhs.view_mut((0, off + c * fk), (nk, fk));
                block += &face_part * n;
                let mut block = rhs.view_mut((0, c * nk), (nk, nk));
                block -= &cell_part * n;
            }
        }
        let chol = self.mass_k().cholesky().ok_or(Error::Singular {
            what: "cell mass matrix",
            element: self.element,
        })?;
        Ok(chol.solve(&rhs))
    }

    /// `L2` projection `P^{k+1}(T) -> P^k(T)` in coefficients.
    pub fn cell_projection(&self) -> Result<DMatrix<T>> {
        let nk = self.nk();
        let chol = self.mass_k().cholesky().ok_or(Error::Singular {
            what: "cell mass matrix",
            element: self.element,
        })?;
        Ok(chol.solve(&self.mass.rows(0, nk).into_owned()))
    }

    /// Second reconstruction `v_T + (p_T v - pi_T^k p_T v)` in `P^{k+1}(T)^2`.
    pub fn corrected_reconstruction(&self) -> Result<DMatrix<T>> {
        let (nk, nk1) = (self.nk(), self.nk1());
        let proj = self.cell_projection()?;
        let mut high = DMatrix::identity(nk1, nk1);
        let mut top = high.view_mut((0, 0), (nk, nk1));
        top -= &proj;
        Ok(self.cell_embedding() + block_diag2(&high) * &self.reconstruction)
    }

    fn build_stabilization_st(&self) -> Result<DMatrix<T>> {
        let (nk1, fk) = (self.nk1(), self.fk());
        let corrected = self.corrected_reconstruction()?;
        let n = self.n_dofs();
        let mut s = DMatrix::zeros(n, n);
        for (i, f) in self.faces.iter().enumerate() {
            let mfk = self.face_mass_k(i);
            let chol = mfk.clone().cholesky().ok_or(Error::Singular {
                what: "face mass matrix",
                element: self.element,
            })?;
            // pi_F^k of a degree k + 1 face polynomial
            let face_proj = chol.solve(&f.mass.rows(0, fk).into_owned());
            let map = face_proj * &f.trace;
            let mut diff = DMatrix::zeros(2 * fk, n);
            for c in 0..2 {
                diff.rows_mut(c * fk, fk)
                    .copy_from(&(&map * corrected.rows(c * nk1, nk1)));
            }
            let off = self.layout.face_offset(i);
            for r in 0..2 * fk {
                diff[(r, off + r)] -= T::one();
            }
            s += diff.transpose() * block_diag2(&mfk) * diff / f.length;
        }
        symmetrize(&mut s);
        Ok(s)
    }

    fn build_stabilization_jt(&self) -> DMatrix<T> {
        let n = self.n_dofs();
        let mut j = DMatrix::zeros(n, n);
        for (i, f) in self.faces.iter().enumerate() {
            let d = self.face_difference(i);
            j += d.transpose() * block_diag2(&self.face_mass_k(i)) * d / f.length;
        }
        symmetrize(&mut j);
        j
    }

    /// `2 mu (G_T + S_T) + lambda K_T`.
    pub fn a_matrix(&self, material: &Material<T>) -> DMatrix<T> {
        (&self.gradient_gram + &self.stabilization) * material.two_mu()
            + &self.divergence_gram * material.lambda
    }

    /// `2 mu (G_T + J_T) + lambda K_T`.
    pub fn a_tilde_matrix(&self, material: &Material<T>) -> DMatrix<T> {
        (&self.gradient_gram + &self.jump) * material.two_mu() + &self.divergence_gram * material.lambda
    }

    /// Local unknowns of the rigid motions `(1, 0)`, `(0, 1)` and the
    /// rotation `(-(y - y_T), x - x_T)`, written exactly.
    pub fn rigid_body_dofs(&self) -> [DVector<T>; 3] {
        let (nk, fk) = (self.nk(), self.fk());
        let n = self.n_dofs();
        let cell = self.bases.cell_k();
        let monomial = |a: usize, b: usize, c: T| {
            let mut m = DVector::zeros(nk);
            m[crate::polybasis::monomial_index(a, b)] = c;
            cell.from_monomial(&m)
        };
        let mut tx = DVector::zeros(n);
        let mut ty = DVector::zeros(n);
        let mut rot = DVector::zeros(n);
        let one = monomial(0, 0, T::one());
        tx.rows_mut(0, nk).copy_from(&one);
        ty.rows_mut(nk, nk).copy_from(&one);
        rot.rows_mut(0, nk).copy_from(&monomial(0, 1, -cell.scale));
        rot.rows_mut(nk, nk).copy_from(&monomial(1, 0, cell.scale));
        for (i, fb) in self.bases.faces.iter().enumerate() {
            let off = self.layout.face_offset(i);
            tx[off] = T::one();
            ty[off + fk] = T::one();
            let d = fb.midpoint - cell.center;
            rot[off] = -d.y;
            rot[off + 1] = -fb.tangent.y * fb.scale;
            rot[off + fk] = d.x;
            rot[off + fk + 1] = fb.tangent.x * fb.scale;
        }
        [tx, ty, rot]
    }

    /// Load moments `(f, phi_i)_T` against the vector cell basis of degree `k`.
    pub fn load_vector<F: Fn(&crate::mesh::Point<T>) -> Vec2<T>>(&self, f: &F) -> DVector<T> {
        let nk = self.nk();
        let basis = self.bases.cell_k();
        let mut b = DVector::zeros(2 * nk);
        for (p, w) in self.bases.cell_rule.iter() {
            let phi = basis.eval(p);
            let v = f(p);
            for i in 0..nk {
                b[i] += w * v.x * phi[i];
                b[nk + i] += w * v.y * phi[i];
            }
        }
        b
    }
}

pub(crate) fn symmetrize<T: Real>(m: &mut DMatrix<T>) {
    let half = lit::<T>(0.5);
    let t = m.transpose();
    *m += t;
    *m *= half;
}
