//! Polynomial bases on elements and faces.
//!
//! Cell monomials are `((x - x_T)/h_T)^a ((y - y_T)/h_T)^b` ordered by total
//! degree, so the first `dim P^m` members of a degree-`m'` basis span `P^m`
//! for every `m <= m'`. Element bases orthonormalize these monomials in that
//! order (a lower-triangular change of basis), which keeps the nesting.
//! Face monomials are `(s/h_F)^a` with `s` the arc length measured from the
//! face midpoint along the global face tangent. Vector-valued bases stack the
//! scalar basis once per component (component-major).

use nalgebra::{DMatrix, DVector, Matrix2};

use crate::error::{Error, Result};
use crate::mesh::{Element, Face, Mesh, Point, Vec2};
use crate::quadrature::QuadratureRule;
use crate::scalar::{lit, Real};

/// `dim P^m` for scalar bivariate polynomials.
pub const fn cell_dim(m: usize) -> usize {
    (m + 1) * (m + 2) / 2
}

/// `dim P^m` on a face.
pub const fn face_dim(m: usize) -> usize {
    m + 1
}

/// Exponents `(a, b)` of the cell monomials of total degree at most `m`.
pub fn exponents(m: usize) -> Vec<(usize, usize)> {
    let mut out = Vec::with_capacity(cell_dim(m));
    for d in 0..=m {
        for b in 0..=d {
            out.push((d - b, b));
        }
    }
    out
}

/// Position of `x^a y^b` in the ordering of [`exponents`].
pub fn monomial_index(a: usize, b: usize) -> usize {
    let d = a + b;
    cell_dim(d) - (d + 1) + b
}

/// Scalar-valued basis evaluated pointwise.
pub trait Basis<T: Real> {
    fn dim(&self) -> usize;
    fn eval(&self, p: &Point<T>) -> DVector<T>;
}

#[derive(Debug, Clone, PartialEq)]
pub struct CellBasis<T: Real> {
    pub center: Point<T>,
    pub scale: T,
    pub degree: usize,
    exps: Vec<(usize, usize)>,
    /// Upper-triangular map from coefficients in this basis to monomial
    /// coefficients, with its inverse; `None` for the raw monomials.
    change: Option<(DMatrix<T>, DMatrix<T>)>,
}

fn powers<T: Real>(x: T, m: usize) -> Vec<T> {
    let mut out = Vec::with_capacity(m + 1);
    let mut acc = T::one();
    for _ in 0..=m {
        out.push(acc);
        acc *= x;
    }
    out
}

impl<T: Real> CellBasis<T> {
    pub fn new(center: Point<T>, scale: T, degree: usize) -> Self {
        CellBasis {
            center,
            scale,
            degree,
            exps: exponents(degree),
            change: None,
        }
    }

    /// Orthonormalizes the monomials of `self` for the inner product given
    /// by `rule`, member by member in the hierarchical order.
    pub fn orthonormal(&self, rule: &QuadratureRule<T>) -> Result<Self> {
        let raw = CellBasis::new(self.center, self.scale, self.degree);
        let mass = mass_matrix(&raw, rule);
        let chol = mass.cholesky().ok_or(Error::Singular {
            what: "monomial mass matrix",
            element: usize::MAX,
        })?;
        let from = chol.l().transpose();
        let n = from.nrows();
        let to = from
            .solve_upper_triangular(&DMatrix::identity(n, n))
            .ok_or(Error::Singular {
                what: "monomial mass factor",
                element: usize::MAX,
            })?;
        Ok(CellBasis {
            change: Some((to, from)),
            ..raw
        })
    }

    /// Leading members spanning `P^degree`.
    pub fn truncated(&self, degree: usize) -> Self {
        assert!(degree <= self.degree, "cannot raise the degree");
        let n = cell_dim(degree);
        CellBasis {
            center: self.center,
            scale: self.scale,
            degree,
            exps: exponents(degree),
            change: self.change.as_ref().map(|(to, from)| {
                (
                    to.view((0, 0), (n, n)).into_owned(),
                    from.view((0, 0), (n, n)).into_owned(),
                )
            }),
        }
    }

    /// Coefficients in this basis of the polynomial whose monomial
    /// coefficients are `c`.
    pub fn from_monomial(&self, c: &DVector<T>) -> DVector<T> {
        match &self.change {
            Some((_, from)) => from * c,
            None => c.clone(),
        }
    }

    /// Monomial coefficients of the polynomial with coefficients `d`.
    pub fn to_monomial(&self, d: &DVector<T>) -> DVector<T> {
        match &self.change {
            Some((to, _)) => to * d,
            None => d.clone(),
        }
    }

    fn mix<V: Clone + std::ops::Mul<T, Output = V> + std::ops::Add<Output = V>>(
        &self,
        raw: Vec<V>,
        zero: V,
    ) -> Vec<V> {
        match &self.change {
            None => raw,
            Some((to, _)) => (0..raw.len())
                .map(|j| (0..=j).fold(zero.clone(), |acc, i| acc + raw[i].clone() * to[(i, j)]))
                .collect(),
        }
    }

    fn mix_columns(&self, m: DMatrix<T>) -> DMatrix<T> {
        match &self.change {
            None => m,
            Some((to, _)) => m * to,
        }
    }

    /// Centered at the centroid and scaled by half the diameter, so that the
    /// local coordinates stay of unit size on shape-regular elements.
    pub fn for_element(element: &Element<T>, degree: usize) -> Self {
        Self::new(
            element.centroid,
            element.diameter * crate::scalar::lit(0.5),
            degree,
        )
    }

    pub fn exponents(&self) -> &[(usize, usize)] {
        &self.exps
    }

    fn local(&self, p: &Point<T>) -> (T, T) {
        (
            (p.x - self.center.x) / self.scale,
            (p.y - self.center.y) / self.scale,
        )
    }

    /// Gradients of the scalar basis.
    pub fn eval_grad(&self, p: &Point<T>) -> Vec<Vec2<T>> {
        let (x, y) = self.local(p);
        let (px, py) = (powers(x, self.degree), powers(y, self.degree));
        let inv = T::one() / self.scale;
        let raw = self
            .exps
            .iter()
            .map(|&(a, b)| {
                let dx = if a > 0 {
                    T::from_count(a) * px[a - 1] * py[b]
                } else {
                    T::zero()
                };
                let dy = if b > 0 {
                    T::from_count(b) * px[a] * py[b - 1]
                } else {
                    T::zero()
                };
                Vec2::new(dx * inv, dy * inv)
            })
            .collect();
        self.mix(raw, Vec2::zeros())
    }

    pub fn vector_dim(&self) -> usize {
        2 * self.dim()
    }

    /// Values of the vector basis: member `j` is `phi_{j mod n}` placed in
    /// component `j / n`.
    pub fn eval_vector(&self, p: &Point<T>) -> Vec<Vec2<T>> {
        let phi = self.eval(p);
        let n = self.dim();
        (0..2 * n)
            .map(|j| {
                if j < n {
                    Vec2::new(phi[j], T::zero())
                } else {
                    Vec2::new(T::zero(), phi[j - n])
                }
            })
            .collect()
    }

    /// Jacobians `(grad v)_{ij} = d v_i / d x_j` of the vector basis.
    pub fn eval_vector_grad(&self, p: &Point<T>) -> Vec<Matrix2<T>> {
        let g = self.eval_grad(p);
        let n = self.dim();
        let z = T::zero();
        (0..2 * n)
            .map(|j| {
                if j < n {
                    Matrix2::new(g[j].x, g[j].y, z, z)
                } else {
                    let g = g[j - n];
                    Matrix2::new(z, z, g.x, g.y)
                }
            })
            .collect()
    }

    pub fn eval_symgrad(&self, p: &Point<T>) -> Vec<Matrix2<T>> {
        self.eval_vector_grad(p)
            .into_iter()
            .map(|g| (g + g.transpose()) * lit::<T>(0.5))
            .collect()
    }

    pub fn eval_skewgrad(&self, p: &Point<T>) -> Vec<Matrix2<T>> {
        self.eval_vector_grad(p)
            .into_iter()
            .map(|g| (g - g.transpose()) * lit::<T>(0.5))
            .collect()
    }

    pub fn eval_div(&self, p: &Point<T>) -> Vec<T> {
        self.eval_vector_grad(p).into_iter().map(|g| g.trace()).collect()
    }

    /// Coefficient maps of `d/dx` and `d/dy` on this basis (square, the
    /// image lies in the lower-degree members).
    pub fn derivative_matrices(&self) -> (DMatrix<T>, DMatrix<T>) {
        let n = self.dim();
        let mut dx = DMatrix::zeros(n, n);
        let mut dy = DMatrix::zeros(n, n);
        let inv = T::one() / self.scale;
        for (j, &(a, b)) in self.exps.iter().enumerate() {
            if a > 0 {
                dx[(monomial_index(a - 1, b), j)] = T::from_count(a) * inv;
            }
            if b > 0 {
                dy[(monomial_index(a, b - 1), j)] = T::from_count(b) * inv;
            }
        }
        match &self.change {
            None => (dx, dy),
            Some((to, from)) => (from * dx * to, from * dy * to),
        }
    }

    /// Exact restriction to `face`: column `j` holds the coefficients of the
    /// trace of member `j` in the face monomials of degree `<= face_degree`.
    pub fn trace_matrix(&self, face: &Face<T>, face_degree: usize) -> DMatrix<T> {
        assert!(face_degree >= self.degree, "trace degree too low");
        let hf = face.length;
        // (x - x_T)/h_T = ax + bx * sigma with sigma = s / h_F
        let ax = (face.midpoint.x - self.center.x) / self.scale;
        let ay = (face.midpoint.y - self.center.y) / self.scale;
        let bx = face.tangent.x * hf / self.scale;
        let by = face.tangent.y * hf / self.scale;
        let xs = linear_powers(ax, bx, self.degree);
        let ys = linear_powers(ay, by, self.degree);
        let mut out = DMatrix::zeros(face_degree + 1, self.dim());
        for (j, &(a, b)) in self.exps.iter().enumerate() {
            let px = &xs[a];
            let py = &ys[b];
            for (i, &cx) in px.iter().enumerate() {
                for (l, &cy) in py.iter().enumerate() {
                    out[(i + l, j)] += cx * cy;
                }
            }
        }
        self.mix_columns(out)
    }
}

/// Coefficients of `(a + b t)^p` in powers of `t`, for `p = 0..=m`.
fn linear_powers<T: Real>(a: T, b: T, m: usize) -> Vec<Vec<T>> {
    let mut out: Vec<Vec<T>> = Vec::with_capacity(m + 1);
    out.push(vec![T::one()]);
    for p in 1..=m {
        let prev = &out[p - 1];
        let mut next = vec![T::zero(); p + 1];
        for (i, &c) in prev.iter().enumerate() {
            next[i] += c * a;
            next[i + 1] += c * b;
        }
        out.push(next);
    }
    out
}

impl<T: Real> Basis<T> for CellBasis<T> {
    fn dim(&self) -> usize {
        self.exps.len()
    }

    fn eval(&self, p: &Point<T>) -> DVector<T> {
        let (x, y) = self.local(p);
        let (px, py) = (powers(x, self.degree), powers(y, self.degree));
        let raw = DVector::from_iterator(self.exps.len(), self.exps.iter().map(|&(a, b)| px[a] * py[b]));
        match &self.change {
            None => raw,
            Some((to, _)) => to.tr_mul(&raw),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FaceBasis<T: Real> {
    pub midpoint: Point<T>,
    pub tangent: Vec2<T>,
    pub scale: T,
    pub degree: usize,
}

impl<T: Real> FaceBasis<T> {
    pub fn for_face(face: &Face<T>, degree: usize) -> Self {
        FaceBasis {
            midpoint: face.midpoint,
            tangent: face.tangent,
            scale: face.length,
            degree,
        }
    }

    pub fn vector_dim(&self) -> usize {
        2 * self.dim()
    }
}

impl<T: Real> Basis<T> for FaceBasis<T> {
    fn dim(&self) -> usize {
        face_dim(self.degree)
    }

    fn eval(&self, p: &Point<T>) -> DVector<T> {
        let s = (p - self.midpoint).dot(&self.tangent) / self.scale;
        DVector::from_vec(powers(s, self.degree))
    }
}

pub fn mass_matrix<T: Real, B: Basis<T>>(basis: &B, rule: &QuadratureRule<T>) -> DMatrix<T> {
    let n = basis.dim();
    let mut m = DMatrix::zeros(n, n);
    for (p, w) in rule.iter() {
        let phi = basis.eval(p);
        m.ger(w, &phi, &phi, T::one());
    }
    m
}

/// L2 projection of a scalar function: solves `M c = b` with the moments
/// `b_i = (f, phi_i)` evaluated by `rule`.
pub fn l2_project<T: Real, B: Basis<T>, F: Fn(&Point<T>) -> T>(
    f: F,
    basis: &B,
    rule: &QuadratureRule<T>,
) -> Result<DVector<T>> {
    let mass = mass_matrix(basis, rule);
    let mut rhs = DVector::zeros(basis.dim());
    for (p, w) in rule.iter() {
        rhs.axpy(w * f(p), &basis.eval(p), T::one());
    }
    let chol = mass.cholesky().ok_or(Error::Singular {
        what: "mass matrix",
        element: usize::MAX,
    })?;
    Ok(chol.solve(&rhs))
}

/// Component-major L2 projection of a vector field.
pub fn l2_project_vector<T: Real, B: Basis<T>, F: Fn(&Point<T>) -> Vec2<T>>(
    f: F,
    basis: &B,
    rule: &QuadratureRule<T>,
) -> Result<DVector<T>> {
    let n = basis.dim();
    let mass = mass_matrix(basis, rule);
    let mut rhs = DMatrix::zeros(n, 2);
    for (p, w) in rule.iter() {
        let phi = basis.eval(p);
        let v = f(p);
        for i in 0..n {
            rhs[(i, 0)] += w * v.x * phi[i];
            rhs[(i, 1)] += w * v.y * phi[i];
        }
    }
    let chol = mass.cholesky().ok_or(Error::Singular {
        what: "mass matrix",
        element: usize::MAX,
    })?;
    let sol = chol.solve(&rhs);
    let mut out = DVector::zeros(2 * n);
    out.rows_mut(0, n).copy_from(&sol.column(0));
    out.rows_mut(n, n).copy_from(&sol.column(1));
    Ok(out)
}

/// Evaluates a component-major vector polynomial.
pub fn eval_vector_field<T: Real, B: Basis<T>>(basis: &B, coeffs: &DVector<T>, p: &Point<T>) -> Vec2<T> {
    let phi = basis.eval(p);
    let n = basis.dim();
    Vec2::new(phi.dot(&coeffs.rows(0, n)), phi.dot(&coeffs.rows(n, n)))
}

/// Cell polynomial followed by one polynomial per face, the local unknowns
/// of an element.
#[derive(Debug, Clone, PartialEq)]
pub struct LocalDofVector<T: Real> {
    pub layout: LocalLayout,
    pub values: DVector<T>,
}

/// Block sizes of the local unknowns of an element of degree `k`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LocalLayout {
    pub k: usize,
    pub n_faces: usize,
}

impl LocalLayout {
    pub fn new(k: usize, n_faces: usize) -> Self {
        LocalLayout { k, n_faces }
    }

    /// Scalar `dim P^k(T)`.
    pub fn cell_scalar(&self) -> usize {
        cell_dim(self.k)
    }

    /// Scalar `dim P^k(F)`.
    pub fn face_scalar(&self) -> usize {
        face_dim(self.k)
    }

    pub fn cell_len(&self) -> usize {
        2 * self.cell_scalar()
    }

    pub fn face_len(&self) -> usize {
        2 * self.face_scalar()
    }

    pub fn face_offset(&self, i: usize) -> usize {
        self.cell_len() + i * self.face_len()
    }

    pub fn len(&self) -> usize {
        self.cell_len() + self.n_faces * self.face_len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

impl<T: Real> LocalDofVector<T> {
    pub fn zeros(layout: LocalLayout) -> Self {
        LocalDofVector {
            layout,
            values: DVector::zeros(layout.len()),
        }
    }

    pub fn from_blocks(layout: LocalLayout, cell: &DVector<T>, faces: &[DVector<T>]) -> Self {
        assert_eq!(cell.len(), layout.cell_len());
        assert_eq!(faces.len(), layout.n_faces);
        let mut out = Self::zeros(layout);
        out.values.rows_mut(0, layout.cell_len()).copy_from(cell);
        for (i, f) in faces.iter().enumerate() {
            assert_eq!(f.len(), layout.face_len());
            out.values
                .rows_mut(layout.face_offset(i), layout.face_len())
                .copy_from(f);
        }
        out
    }

    pub fn cell(&self) -> DVector<T> {
        self.values.rows(0, self.layout.cell_len()).into_owned()
    }

    pub fn face(&self, i: usize) -> DVector<T> {
        self.values
            .rows(self.layout.face_offset(i), self.layout.face_len())
            .into_owned()
    }
}

/// Bases and quadrature rules attached to one element.
#[derive(Debug, Clone)]
pub struct ElementBases<T: Real> {
    pub k: usize,
    /// Degree `k + 1`; its first `dim P^k` members span `P^k(T)`.
    pub cell: CellBasis<T>,
    /// Degree `k + 1` per local face.
    pub faces: Vec<FaceBasis<T>>,
    pub cell_rule: QuadratureRule<T>,
    pub face_rules: Vec<QuadratureRule<T>>,
}

impl<T: Real> ElementBases<T> {
    pub fn new(mesh: &Mesh<T>, e: usize, k: usize, q: usize) -> Result<Self> {
        let el = &mesh.elements[e];
        let cell_rule = crate::quadrature::element_rule(mesh, e, q)?;
        let faces = el
            .faces
            .iter()
            .map(|&f| FaceBasis::for_face(&mesh.faces[f], k + 1))
            .collect();
        let face_rules = el
            .faces
            .iter()
            .map(|&f| crate::quadrature::segment_rule(&mesh.faces[f], q))
            .collect();
        Ok(ElementBases {
            k,
            cell: CellBasis::for_element(el, k + 1).orthonormal(&cell_rule)?,
            faces,
            cell_rule,
            face_rules,
        })
    }

    pub fn layout(&self) -> LocalLayout {
        LocalLayout::new(self.k, self.faces.len())
    }

    pub fn cell_k(&self) -> CellBasis<T> {
        self.cell.truncated(self.k)
    }

    pub fn face_k(&self, i: usize) -> FaceBasis<T> {
        FaceBasis {
            degree: self.k,
            ..self.faces[i].clone()
        }
    }
}

/// The reduction map: L2 projections of `u` on the cell and on each face.
pub fn reduce<T: Real, F: Fn(&Point<T>) -> Vec2<T>>(
    u: F,
    bases: &ElementBases<T>,
) -> Result<LocalDofVector<T>> {
    let cell = l2_project_vector(&u, &bases.cell_k(), &bases.cell_rule)?;
    let faces = (0..bases.faces.len())
        .map(|i| l2_project_vector(&u, &bases.face_k(i), &bases.face_rules[i]))
        .collect::<Result<Vec<_>>>()?;
    Ok(LocalDofVector::from_blocks(bases.layout(), &cell, &faces))
}
