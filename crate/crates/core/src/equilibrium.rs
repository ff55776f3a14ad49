//! Equilibrated stresses and face tractions recovered from HHO unknowns.

use std::io::Write;

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::mesh::{Mesh, Point, Vec2};
use crate::operators::{saddle_point_solve, ElementOperators, Material};
use crate::polybasis::Basis;
use crate::scalar::{lit, Real};

/// Element post-processing maps for one material.
#[derive(Debug, Clone)]
pub struct PostprocessOperators<T: Real> {
    /// The isomorphism `c_T`, `N_T x N_T`.
    pub ct: DMatrix<T>,
    /// Local unknowns to stress coefficients `[s_xx, s_yy, s_xy]` in `P^k(T)`.
    pub stress: DMatrix<T>,
    /// Per local face, local unknowns to traction coefficients in `P^k(F)^2`.
    pub tractions: Vec<DMatrix<T>>,
}

impl<T: Real> PostprocessOperators<T> {
    pub fn new(ops: &ElementOperators<T>, material: &Material<T>) -> Result<Self> {
        let ct = build_ct(ops, material)?;
        let stress = build_stress(ops, &ct, material);
        let tractions = build_tractions(ops, &ct, &stress, material);
        Ok(PostprocessOperators {
            ct,
            stress,
            tractions,
        })
    }

    pub fn stress_of(&self, w: &DVector<T>) -> DVector<T> {
        &self.stress * w
    }

    pub fn traction_of(&self, i: usize, w: &DVector<T>) -> DVector<T> {
        &self.tractions[i] * w
    }
}

/// Solves `a~(C w, v) = a(w, v) + 2 mu j(w, v)` with the cell mean and the
/// boundary rotation moment of `C w` pinned to those of `w`.
///
/// Since `a + 2 mu j - a~ = 2 mu s`, the correction `C - I` is solved for
/// with right-hand side `2 mu S_T`, which keeps fixed points of `C` exact to
/// roundoff in `S_T` alone.
pub fn build_ct<T: Real>(ops: &ElementOperators<T>, material: &Material<T>) -> Result<DMatrix<T>> {
    let n = ops.n_dofs();
    let at = ops.a_tilde_matrix(material);
    let rhs = &ops.stabilization * material.two_mu();
    let l = &ops.rigid_closure;
    let zero = DMatrix::zeros(l.nrows(), n);
    let correction = saddle_point_solve(&at, l, &rhs, &zero, "isomorphism system", ops.element)?;
    Ok(correction + DMatrix::identity(n, n))
}

/// Cell strain of the `P^k` cell unknowns, `3 nk x N_T`, rows `[e_xx, e_yy, e_xy]`.
pub fn cell_strain<T: Real>(ops: &ElementOperators<T>) -> DMatrix<T> {
    let nk = ops.nk();
    let half = lit::<T>(0.5);
    let dx = ops.dx.view((0, 0), (nk, nk));
    let dy = ops.dy.view((0, 0), (nk, nk));
    let mut e = DMatrix::zeros(3 * nk, ops.n_dofs());
    e.view_mut((0, 0), (nk, nk)).copy_from(&dx);
    e.view_mut((nk, nk), (nk, nk)).copy_from(&dy);
    e.view_mut((2 * nk, 0), (nk, nk)).copy_from(&(dy * half));
    e.view_mut((2 * nk, nk), (nk, nk)).copy_from(&(dx * half));
    e
}

/// `S_T = (2 mu grad_s p_T + lambda I D_T) C_T`.
pub fn build_stress<T: Real>(
    ops: &ElementOperators<T>,
    ct: &DMatrix<T>,
    material: &Material<T>,
) -> DMatrix<T> {
    let nk = ops.nk();
    let (exx, eyy, exy) = ops.strain();
    let rc = &ops.reconstruction * ct;
    let dc = &ops.divergence * ct;
    let two_mu = material.two_mu();
    let n = ops.n_dofs();
    let mut s = DMatrix::zeros(3 * nk, n);
    let sxx = exx.rows(0, nk) * &rc * two_mu + &dc * material.lambda;
    let syy = eyy.rows(0, nk) * &rc * two_mu + &dc * material.lambda;
    let sxy = exy.rows(0, nk) * &rc * two_mu;
    s.rows_mut(0, nk).copy_from(&sxx);
    s.rows_mut(nk, nk).copy_from(&syy);
    s.rows_mut(2 * nk, nk).copy_from(&sxy);
    s
}

/// `Phi_F(w) = (S_T w) n + 2 mu h_F^{-1} [((C w)_F - w_F) - ((C w)_T - w_T)|_F]`.
///
/// The jump term carries the `2 mu` weight of `j_T` in `a~_T`; without it the
/// representation of `a_T` through `S_T` and `Phi_F` fails for `2 mu != 1`.
pub fn build_tractions<T: Real>(
    ops: &ElementOperators<T>,
    ct: &DMatrix<T>,
    stress: &DMatrix<T>,
    material: &Material<T>,
) -> Vec<DMatrix<T>> {
    let (nk, fk) = (ops.nk(), ops.fk());
    let n = ops.n_dofs();
    let correction = ct - DMatrix::identity(n, n);
    let sxx = stress.rows(0, nk);
    let syy = stress.rows(nk, nk);
    let sxy = stress.rows(2 * nk, nk);
    ops.faces
        .iter()
        .enumerate()
        .map(|(i, f)| {
            let (nx, ny) = (f.normal.x, f.normal.y);
            let tr = ops.cell_trace_k(i);
            let mut phi = ops.face_difference(i) * &correction * (material.two_mu() / f.length);
            let tx = &tr * (sxx * nx + sxy * ny);
            let ty = &tr * (sxy * nx + syy * ny);
            let mut top = phi.rows_mut(0, fk);
            top += tx;
            let mut bottom = phi.rows_mut(fk, fk);
            bottom += ty;
            phi
        })
        .collect()
}

/// Right side of the equilibrium representation of `a_T`:
/// `(S_T w, grad_s v_T)_T + sum_F (Phi_F(w), v_F - v_T)_F`, as a matrix.
pub fn representation_matrix<T: Real>(
    ops: &ElementOperators<T>,
    post: &PostprocessOperators<T>,
) -> DMatrix<T> {
    let nk = ops.nk();
    let two = lit::<T>(2.0);
    let mk = ops.mass_k();
    let e = cell_strain(ops);
    let mut weighted = DMatrix::zeros(3 * nk, ops.n_dofs());
    for (c, w) in [T::one(), T::one(), two].into_iter().enumerate() {
        let block = &mk * post.stress.rows(c * nk, nk) * w;
        weighted.rows_mut(c * nk, nk).copy_from(&block);
    }
    let mut out = e.transpose() * weighted;
    for (i, phi) in post.tractions.iter().enumerate() {
        out += ops.face_difference(i).transpose() * face_mass2(ops, i) * phi;
    }
    out
}

fn face_mass2<T: Real>(ops: &ElementOperators<T>, i: usize) -> DMatrix<T> {
    let m = ops.face_mass_k(i);
    let fk = m.nrows();
    let mut out = DMatrix::zeros(2 * fk, 2 * fk);
    out.view_mut((0, 0), (fk, fk)).copy_from(&m);
    out.view_mut((fk, fk), (fk, fk)).copy_from(&m);
    out
}

/// `L2(T)` norm of a stress given by its coefficients.
pub fn stress_norm<T: Real>(ops: &ElementOperators<T>, s: &DVector<T>) -> T {
    let nk = ops.nk();
    let mk = ops.mass_k();
    let part = |c: usize| {
        let v = s.rows(c * nk, nk);
        v.dot(&(&mk * v))
    };
    (part(0) + part(1) + lit::<T>(2.0) * part(2))
        .max(T::zero())
        .sqrt()
}

/// `L2(F)^2` norm of face coefficients in `P^k(F)^2`.
pub fn face_norm<T: Real>(ops: &ElementOperators<T>, i: usize, v: &DVector<T>) -> T {
    v.dot(&(face_mass2(ops, i) * v)).max(T::zero()).sqrt()
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ElementResidual<T: Real> {
    pub element: usize,
    pub raw: T,
    pub normalized: T,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FaceDefect<T: Real> {
    pub face: usize,
    pub raw: T,
    pub normalized: T,
}

/// Local equilibrium residual of one element: the largest deviation over an
/// `L2`-orthonormal basis of `P^k(T)^2` of
/// `(S_T u, grad_s v)_T - sum_F (Phi_F(u), v)_F - (f, v)_T`.
pub fn local_equilibrium_residual<T: Real, F: Fn(&Point<T>) -> Vec2<T>>(
    ops: &ElementOperators<T>,
    post: &PostprocessOperators<T>,
    u: &DVector<T>,
    f: &F,
) -> Result<ElementResidual<T>> {
    let nk = ops.nk();
    let cell_len = 2 * nk;
    let rep = representation_matrix(ops, post);
    let mut r = (&rep * u).rows(0, cell_len).into_owned();
    // the representation carries -(Phi, v_T) on the cell rows already
    r -= ops.load_vector(f);
    let chol = ops.mass_k().cholesky().ok_or(Error::Singular {
        what: "cell mass matrix",
        element: ops.element,
    })?;
    let l = chol.l();
    let mut orth = DVector::zeros(cell_len);
    for c in 0..2 {
        let rc = r.rows(c * nk, nk).into_owned();
        let z = l.solve_lower_triangular(&rc).ok_or(Error::Singular {
            what: "cell mass factor",
            element: ops.element,
        })?;
        orth.rows_mut(c * nk, nk).copy_from(&z);
    }
    let raw = orth.amax();
    let f_norm = ops.bases.cell_rule.integrate(|p| f(p).norm_squared()).sqrt();
    let scale = f_norm + stress_norm(ops, &post.stress_of(u)) / ops.diameter;
    let normalized = if raw == T::zero() {
        raw
    } else {
        raw / scale.max(tiny::<T>())
    };
    Ok(ElementResidual {
        element: ops.element,
        raw,
        normalized,
    })
}

fn check_lengths<T: Real>(
    mesh: &Mesh<T>,
    ops: &[ElementOperators<T>],
    post: &[PostprocessOperators<T>],
    locals: &[DVector<T>],
) -> Result<()> {
    let ne = mesh.elements.len();
    if ops.len() != ne || post.len() != ne || locals.len() != ne {
        return Err(Error::Mismatch(format!(
            "expected {ne} elements, got {} operators, {} post-processors and {} local vectors",
            ops.len(),
            post.len(),
            locals.len()
        )));
    }
    for (o, u) in ops.iter().zip(locals) {
        if o.n_dofs() != u.len() {
            return Err(Error::Mismatch(format!(
                "element {} expects {} unknowns, got {}",
                o.element,
                o.n_dofs(),
                u.len()
            )));
        }
    }
    Ok(())
}

pub fn verify_local_equilibrium<T: Real, F: Fn(&Point<T>) -> Vec2<T> + Sync>(
    mesh: &Mesh<T>,
    ops: &[ElementOperators<T>],
    post: &[PostprocessOperators<T>],
    locals: &[DVector<T>],
    f: &F,
) -> Result<Vec<ElementResidual<T>>> {
    use rayon::prelude::*;
    check_lengths(mesh, ops, post, locals)?;
    (0..ops.len())
        .into_par_iter()
        .map(|e| local_equilibrium_residual(&ops[e], &post[e], &locals[e], f))
        .collect()
}

/// Normalized defect `||Phi_1 + Phi_2||_F / max(||Phi_1||_F, ||Phi_2||_F, floor)`
/// on every interior face, where the floor is a roundoff multiple of the
/// largest traction norm on the mesh.
pub fn verify_traction_balance<T: Real>(
    mesh: &Mesh<T>,
    ops: &[ElementOperators<T>],
    post: &[PostprocessOperators<T>],
    locals: &[DVector<T>],
) -> Result<Vec<FaceDefect<T>>> {
    check_lengths(mesh, ops, post, locals)?;
    let local_index = |e: usize, f: usize| mesh.elements[e].faces.iter().position(|&g| g == f);
    let mut entries = Vec::new();
    let mut global_max = T::zero();
    for (f, face) in mesh.faces.iter().enumerate() {
        let Some(nb) = face.neighbor else { continue };
        let mut side = |e: usize| -> Result<(T, DVector<T>)> {
            let i = local_index(e, f)
                .ok_or_else(|| Error::Mismatch(format!("face {f} missing from element {e}")))?;
            let phi = post[e].traction_of(i, &locals[e]);
            let norm = face_norm(&ops[e], i, &phi);
            global_max = global_max.max(norm);
            Ok((norm, phi))
        };
        let (n1, p1) = side(face.owner)?;
        let (n2, p2) = side(nb)?;
        let i = local_index(face.owner, f).unwrap_or(0);
        let raw = face_norm(&ops[face.owner], i, &(p1 + p2));
        entries.push((f, raw, n1.max(n2)));
    }
    let floor = (global_max * T::EPS).max(tiny::<T>());
    Ok(entries
        .into_iter()
        .map(|(face, raw, denom)| FaceDefect {
            face,
            raw,
            normalized: if raw == T::zero() {
                raw
            } else {
                raw / denom.max(floor)
            },
        })
        .collect())
}

/// Element residuals and face defects of one discrete solution.
#[derive(Debug, Clone, PartialEq)]
pub struct VerificationReport<T: Real> {
    pub elements: Vec<ElementResidual<T>>,
    pub faces: Vec<FaceDefect<T>>,
}

impl<T: Real> VerificationReport<T> {
    pub fn max_element_residual(&self) -> T {
        self.elements.iter().fold(T::zero(), |m, r| m.max(r.normalized))
    }

    pub fn max_face_defect(&self) -> T {
        self.faces.iter().fold(T::zero(), |m, r| m.max(r.normalized))
    }

    /// Writes `kind,id,raw,normalized` rows.
    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        w.write_record(["kind", "id", "raw", "normalized"])?;
        for r in &self.elements {
            w.write_record([
                "element".to_string(),
                r.element.to_string(),
                format!("{:.16e}", r.raw),
                format!("{:.16e}", r.normalized),
            ])?;
        }
        for r in &self.faces {
            w.write_record([
                "face".to_string(),
                r.face.to_string(),
                format!("{:.16e}", r.raw),
                format!("{:.16e}", r.normalized),
            ])?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn read_csv<R: std::io::Read>(reader: R) -> Result<Self> {
        let mut rd = csv::Reader::from_reader(reader);
        let mut report = VerificationReport {
            elements: Vec::new(),
            faces: Vec::new(),
        };
        for rec in rd.records() {
            let rec = rec?;
            let field = |i: usize| {
                rec.get(i)
                    .ok_or_else(|| Error::Format(format!("short record {rec:?}")))
            };
            let id: usize = field(1)?
                .parse()
                .map_err(|_| Error::Format(format!("bad id in {rec:?}")))?;
            let num = |i: usize| -> Result<T> {
                field(i)?
                    .parse::<T>()
                    .map_err(|_| Error::Format(format!("bad number in {rec:?}")))
            };
            match field(0)? {
                "element" => report.elements.push(ElementResidual {
                    element: id,
                    raw: num(2)?,
                    normalized: num(3)?,
                }),
                "face" => report.faces.push(FaceDefect {
                    face: id,
                    raw: num(2)?,
                    normalized: num(3)?,
                }),
                other => return Err(Error::Format(format!("unknown kind {other}"))),
            }
        }
        Ok(report)
    }
}

/// Evaluates a stress given by coefficients at `p`.
pub fn eval_stress<T: Real>(ops: &ElementOperators<T>, s: &DVector<T>, p: &Point<T>) -> nalgebra::Matrix2<T> {
    let nk = ops.nk();
    let phi = ops.bases.cell_k().eval(p);
    let xx = phi.dot(&s.rows(0, nk));
    let yy = phi.dot(&s.rows(nk, nk));
    let xy = phi.dot(&s.rows(2 * nk, nk));
    nalgebra::Matrix2::new(xx, xy, xy, yy)
}

fn tiny<T: Real>() -> T {
    T::EPS.powi(4)
}
