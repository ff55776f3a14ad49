//! Test cases, error norms, convergence sweeps and stability ratios.

use std::io::{Read, Write};

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::mesh::{Mesh, Point, Vec2};
use crate::operators::{ElementOperators, Material};
use crate::polybasis::{cell_dim, eval_vector_field, exponents, l2_project_vector, LocalDofVector};
use crate::quadrature::{element_rule, segment_rule};
use crate::scalar::{lit, Real};
use crate::system::{solve, Discretization, Solution};

/// Vector polynomial in global coordinates with exact derivatives.
#[derive(Debug, Clone, PartialEq)]
pub struct PolyField<T: Real> {
    pub degree: usize,
    /// Monomial coefficients of `x^a y^b`, ordered as [`exponents`].
    pub cx: Vec<T>,
    pub cy: Vec<T>,
}

fn monomial_value<T: Real>(a: usize, b: usize, p: &Point<T>) -> T {
    p.x.powi(a as i32) * p.y.powi(b as i32)
}

/// `d^i/dx^i d^j/dy^j x^a y^b`.
fn monomial_derivative<T: Real>(a: usize, b: usize, i: usize, j: usize, p: &Point<T>) -> T {
    if i > a || j > b {
        return T::zero();
    }
    let fall = |n: usize, m: usize| (n - m + 1..=n).product::<usize>();
    T::from_count(fall(a, i) * fall(b, j)) * monomial_value(a - i, b - j, p)
}

impl<T: Real> PolyField<T> {
    pub fn random(degree: usize, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let n = cell_dim(degree);
        let mut draw = || (0..n).map(|_| lit::<T>(rng.random_range(-1.0..1.0))).collect();
        let cx = draw();
        let cy = draw();
        PolyField { degree, cx, cy }
    }

    fn derivative(&self, i: usize, j: usize, p: &Point<T>) -> Vec2<T> {
        let mut v = Vec2::zeros();
        for (m, &(a, b)) in exponents(self.degree).iter().enumerate() {
            let d = monomial_derivative(a, b, i, j, p);
            v.x += self.cx[m] * d;
            v.y += self.cy[m] * d;
        }
        v
    }

    pub fn value(&self, p: &Point<T>) -> Vec2<T> {
        self.derivative(0, 0, p)
    }

    /// `(grad u)_{ij} = d u_i / d x_j`.
    pub fn gradient(&self, p: &Point<T>) -> nalgebra::Matrix2<T> {
        let dx = self.derivative(1, 0, p);
        let dy = self.derivative(0, 1, p);
        nalgebra::Matrix2::new(dx.x, dy.x, dx.y, dy.y)
    }

    pub fn stress(&self, p: &Point<T>, m: &Material<T>) -> nalgebra::Matrix2<T> {
        let g = self.gradient(p);
        (g + g.transpose()) * m.mu + nalgebra::Matrix2::identity() * (m.lambda * g.trace())
    }

    /// `-div sigma(u)`.
    pub fn load(&self, p: &Point<T>, m: &Material<T>) -> Vec2<T> {
        let xx = self.derivative(2, 0, p);
        let yy = self.derivative(0, 2, p);
        let xy = self.derivative(1, 1, p);
        let lap = xx + yy;
        // grad div u
        let gd = Vec2::new(xx.x + xy.y, xy.x + yy.y);
        -(lap * m.mu + gd * (m.mu + m.lambda))
    }
}

/// Problem data: exact solution, load and Dirichlet datum.
#[derive(Debug, Clone, PartialEq)]
pub enum Case<T: Real> {
    /// `u = (sin(pi x) sin(pi y) + x/2, cos(pi x) cos(pi y) + y/2)` on the
    /// unit square, with `div u = 1`.
    Manufactured,
    /// Global vector polynomial.
    Polynomial(PolyField<T>),
    Zero,
}

impl<T: Real> Case<T> {
    pub fn name(&self) -> &'static str {
        match self {
            Case::Manufactured => "manufactured",
            Case::Polynomial(_) => "polynomial",
            Case::Zero => "zero",
        }
    }

    pub fn u(&self, p: &Point<T>) -> Vec2<T> {
        match self {
            Case::Manufactured => {
                let pi = T::pi();
                let half = lit::<T>(0.5);
                let (sx, cx) = ((pi * p.x).sin(), (pi * p.x).cos());
                let (sy, cy) = ((pi * p.y).sin(), (pi * p.y).cos());
                Vec2::new(sx * sy + half * p.x, cx * cy + half * p.y)
            }
            Case::Polynomial(q) => q.value(p),
            Case::Zero => Vec2::zeros(),
        }
    }

    pub fn f(&self, p: &Point<T>, m: &Material<T>) -> Vec2<T> {
        match self {
            Case::Manufactured => {
                let pi = T::pi();
                let c = m.two_mu() * pi * pi;
                Vec2::new(
                    c * (pi * p.x).sin() * (pi * p.y).sin(),
                    c * (pi * p.x).cos() * (pi * p.y).cos(),
                )
            }
            Case::Polynomial(q) => q.load(p, m),
            Case::Zero => Vec2::zeros(),
        }
    }

    pub fn g(&self, p: &Point<T>) -> Vec2<T> {
        self.u(p)
    }
}

/// Quadrature degree used for errors against the exact solution.
pub fn error_quadrature_degree(k: usize) -> usize {
    2 * (k + 2)
}

/// `I_T u` with the error quadrature.
pub fn reference_reduction<T: Real, U: Fn(&Point<T>) -> Vec2<T>>(
    disc: &Discretization<T>,
    e: usize,
    u: &U,
) -> Result<DVector<T>> {
    let ops = &disc.ops[e];
    let q = error_quadrature_degree(disc.k);
    let cell_rule = element_rule(&disc.mesh, e, q)?;
    let cell = l2_project_vector(u, &ops.bases.cell_k(), &cell_rule)?;
    let faces = disc.mesh.elements[e]
        .faces
        .iter()
        .enumerate()
        .map(|(i, &f)| l2_project_vector(u, &ops.bases.face_k(i), &segment_rule(&disc.mesh.faces[f], q)))
        .collect::<Result<Vec<_>>>()?;
    Ok(LocalDofVector::from_blocks(ops.layout, &cell, &faces).values)
}

/// Error norms of one discrete solution against an exact solution.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Errors<T: Real> {
    pub en_uh: T,
    pub en_tuh: T,
    pub l2_uh: T,
    pub l2_tuh: T,
    pub pl2: T,
}

/// `{sum_T a_T(e_T, e_T)}^{1/2}` with `e_T = u_T - I_T u`, or
/// `C_T u_T - I_T u` when `postprocessed`.
pub fn energy_error<T: Real>(
    disc: &Discretization<T>,
    sol: &Solution<T>,
    u: &(impl Fn(&Point<T>) -> Vec2<T> + Sync),
    postprocessed: bool,
) -> Result<T> {
    Ok(errors(disc, sol, u)?.pick_energy(postprocessed))
}

impl<T: Real> Errors<T> {
    fn pick_energy(&self, postprocessed: bool) -> T {
        if postprocessed {
            self.en_tuh
        } else {
            self.en_uh
        }
    }
}

/// Cell `L2` errors against `pi_T^k u`, with and without `C_T`, and the
/// reconstruction error `||u - p_T u_h||`.
pub fn l2_errors<T: Real>(
    disc: &Discretization<T>,
    sol: &Solution<T>,
    u: &(impl Fn(&Point<T>) -> Vec2<T> + Sync),
) -> Result<(T, T, T)> {
    let e = errors(disc, sol, u)?;
    Ok((e.l2_uh, e.l2_tuh, e.pl2))
}

/// All error norms at once; element contributions are summed in element
/// order.
pub fn errors<T: Real>(
    disc: &Discretization<T>,
    sol: &Solution<T>,
    u: &(impl Fn(&Point<T>) -> Vec2<T> + Sync),
) -> Result<Errors<T>> {
    sol.check(disc)?;
    let parts = (0..disc.mesh.elements.len())
        .into_par_iter()
        .map(|e| -> Result<[T; 5]> {
            let ops = &disc.ops[e];
            let a = ops.a_matrix(&disc.material);
            let iu = reference_reduction(disc, e, u)?;
            let uh = sol.local(disc, e);
            let tuh = &disc.post[e].ct * &uh;
            let en = |v: &DVector<T>| {
                let d = v - &iu;
                d.dot(&(&a * &d)).max(T::zero())
            };
            let nc = ops.layout.cell_len();
            let nk = ops.nk();
            let mk = ops.mass_k();
            let l2 = |v: &DVector<T>| {
                let d = v.rows(0, nc) - iu.rows(0, nc);
                let (x, y) = (d.rows(0, nk), d.rows(nk, nk));
                (x.dot(&(&mk * x)) + y.dot(&(&mk * y))).max(T::zero())
            };
            let p = &ops.reconstruction * &uh;
            let rule = element_rule(&disc.mesh, e, error_quadrature_degree(disc.k))?;
            let pl2 = rule.integrate(|x| (u(x) - eval_vector_field(&ops.bases.cell, &p, x)).norm_squared());
            Ok([en(&uh), en(&tuh), l2(&uh), l2(&tuh), pl2])
        })
        .collect::<Result<Vec<_>>>()?;
    let mut sums = [T::zero(); 5];
    for p in parts {
        for (s, v) in sums.iter_mut().zip(p) {
            *s += v;
        }
    }
    let [a, b, c, d, e] = sums.map(|s| s.sqrt());
    Ok(Errors {
        en_uh: a,
        en_tuh: b,
        l2_uh: c,
        l2_tuh: d,
        pl2: e,
    })
}

/// One row of a convergence sweep.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ConvergenceRecord<T: Real> {
    pub k: usize,
    pub n: usize,
    pub meshsize: T,
    pub errors: Errors<T>,
}

/// Least-squares slopes of the error columns against the mesh size.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Slopes<T: Real> {
    pub k: usize,
    pub en_uh: T,
    pub en_tuh: T,
    pub l2_uh: T,
    pub l2_tuh: T,
    pub pl2: T,
}

#[derive(Debug)]
pub struct Sweep<T: Real> {
    pub records: Vec<ConvergenceRecord<T>>,
    pub slopes: Vec<Slopes<T>>,
    /// The first failing run, after which the sweep stopped.
    pub failure: Option<(usize, usize, Error)>,
}

/// Least-squares slope of `log y` against `log x`.
pub fn loglog_slope<T: Real>(x: &[T], y: &[T]) -> T {
    let n = T::from_count(x.len());
    let lx: Vec<T> = x.iter().map(|v| v.ln()).collect();
    let ly: Vec<T> = y.iter().map(|v| v.ln()).collect();
    let mx = lx.iter().fold(T::zero(), |a, &b| a + b) / n;
    let my = ly.iter().fold(T::zero(), |a, &b| a + b) / n;
    let mut sxy = T::zero();
    let mut sxx = T::zero();
    for (a, b) in lx.iter().zip(&ly) {
        sxy += (*a - mx) * (*b - my);
        sxx += (*a - mx) * (*a - mx);
    }
    sxy / sxx
}

/// Solves `case` on the structured mesh with `n` subdivisions.
pub fn run_case<T: Real>(
    k: usize,
    n: usize,
    material: Material<T>,
    case: &Case<T>,
    condense: bool,
) -> Result<(Discretization<T>, Solution<T>, ConvergenceRecord<T>)> {
    let mesh = Mesh::structured_triangular(n)?;
    run_on_mesh(mesh, k, n, material, case, condense)
}

pub fn run_on_mesh<T: Real>(
    mesh: Mesh<T>,
    k: usize,
    n: usize,
    material: Material<T>,
    case: &Case<T>,
    condense: bool,
) -> Result<(Discretization<T>, Solution<T>, ConvergenceRecord<T>)> {
    let disc = Discretization::new(mesh, k, material)?;
    let f = |p: &Point<T>| case.f(p, &material);
    let g = |p: &Point<T>| case.g(p);
    let sol = solve(&disc, &f, &g, condense)?;
    let u = |p: &Point<T>| case.u(p);
    let errors = errors(&disc, &sol, &u)?;
    let rec = ConvergenceRecord {
        k,
        n,
        meshsize: disc.mesh.h,
        errors,
    };
    Ok((disc, sol, rec))
}

/// Runs every `(k, n)` pair in order and fits slopes per `k` when at least
/// three meshes are given.
pub fn convergence_sweep<T: Real>(
    ks: &[usize],
    ns: &[usize],
    material: Material<T>,
    case: &Case<T>,
) -> Sweep<T> {
    let mut records = Vec::new();
    let mut slopes = Vec::new();
    for &k in ks {
        let mut rows = Vec::new();
        for &n in ns {
            match run_case(k, n, material, case, true) {
                Ok((_, _, r)) => rows.push(r),
                Err(e) => {
                    records.extend(rows);
                    return Sweep {
                        records,
                        slopes,
                        failure: Some((k, n, e)),
                    };
                }
            }
        }
        if rows.len() >= 3 {
            let h: Vec<T> = rows.iter().map(|r| r.meshsize).collect();
            let col = |f: fn(&Errors<T>) -> T| -> T {
                let y: Vec<T> = rows.iter().map(|r| f(&r.errors)).collect();
                loglog_slope(&h, &y)
            };
            slopes.push(Slopes {
                k,
                en_uh: col(|e| e.en_uh),
                en_tuh: col(|e| e.en_tuh),
                l2_uh: col(|e| e.l2_uh),
                l2_tuh: col(|e| e.l2_tuh),
                pl2: col(|e| e.pl2),
            });
        }
        records.extend(rows);
    }
    Sweep {
        records,
        slopes,
        failure: None,
    }
}

/// Column names of the sweep CSV. `err_Sh`, `err_uh` and `err_tuh` repeat
/// `err_en_uh`, `err_L2_uh` and `err_L2_tuh` under the names used by common
/// plotting scripts.
pub const SWEEP_COLUMNS: [&str; 11] = [
    "k",
    "n",
    "meshsize",
    "err_en_uh",
    "err_en_tuh",
    "err_L2_uh",
    "err_L2_tuh",
    "err_pL2",
    "err_Sh",
    "err_uh",
    "err_tuh",
];

/// Writes one row per record, then one `slope` row per degree (empty
/// `meshsize`).
pub fn emit_csv<T: Real, W: Write>(sweep: &Sweep<T>, writer: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(SWEEP_COLUMNS)?;
    let num = |x: T| format!("{:.16e}", x);
    let row = |e: [T; 5]| {
        let [a, b, c, d, p] = e;
        vec![num(a), num(b), num(c), num(d), num(p), num(a), num(c), num(d)]
    };
    for r in &sweep.records {
        let e = r.errors;
        let mut rec = vec![r.k.to_string(), r.n.to_string(), num(r.meshsize)];
        rec.extend(row([e.en_uh, e.en_tuh, e.l2_uh, e.l2_tuh, e.pl2]));
        w.write_record(rec)?;
    }
    for s in &sweep.slopes {
        let mut rec = vec![s.k.to_string(), "slope".to_string(), String::new()];
        rec.extend(row([s.en_uh, s.en_tuh, s.l2_uh, s.l2_tuh, s.pl2]));
        w.write_record(rec)?;
    }
    w.flush()?;
    Ok(())
}

/// Parses a sweep CSV written by [`emit_csv`].
pub fn read_sweep_csv<T: Real, R: Read>(reader: R) -> Result<Sweep<T>> {
    let mut rd = csv::Reader::from_reader(reader);
    let header = rd.headers()?.clone();
    if header.iter().collect::<Vec<_>>() != SWEEP_COLUMNS {
        return Err(Error::Format(format!("unexpected header {header:?}")));
    }
    let mut records = Vec::new();
    let mut slopes = Vec::new();
    for rec in rd.records() {
        let rec = rec?;
        let bad = || Error::Format(format!("malformed row {rec:?}"));
        let num = |i: usize| rec.get(i).ok_or_else(bad)?.parse::<T>().map_err(|_| bad());
        let k: usize = rec[0].parse().map_err(|_| bad())?;
        let vals = [num(3)?, num(4)?, num(5)?, num(6)?, num(7)?];
        if &rec[1] == "slope" {
            slopes.push(Slopes {
                k,
                en_uh: vals[0],
                en_tuh: vals[1],
                l2_uh: vals[2],
                l2_tuh: vals[3],
                pl2: vals[4],
            });
        } else {
            records.push(ConvergenceRecord {
                k,
                n: rec[1].parse().map_err(|_| bad())?,
                meshsize: num(2)?,
                errors: Errors {
                    en_uh: vals[0],
                    en_tuh: vals[1],
                    l2_uh: vals[2],
                    l2_tuh: vals[3],
                    pl2: vals[4],
                },
            });
        }
    }
    Ok(Sweep {
        records,
        slopes,
        failure: None,
    })
}

/// Extremes of a quotient of quadratic forms.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RatioRange<T: Real> {
    pub min: T,
    pub max: T,
}

impl<T: Real> RatioRange<T> {
    fn empty() -> Self {
        RatioRange {
            min: T::max_value().unwrap_or_else(|| lit(f64::MAX)),
            max: T::zero(),
        }
    }

    fn push(&mut self, r: T) {
        self.min = self.min.min(r);
        self.max = self.max.max(r);
    }

    fn merge(&mut self, o: &Self) {
        self.min = self.min.min(o.min);
        self.max = self.max.max(o.max);
    }

    /// `max / min`.
    pub fn spread(&self) -> T {
        self.max / self.min
    }
}

/// Gram matrix of `v -> grad_s v_T` in `L2(T)`.
pub fn cell_strain_gram<T: Real>(ops: &ElementOperators<T>) -> DMatrix<T> {
    let e = crate::equilibrium::cell_strain(ops);
    let nk = ops.nk();
    let mk = ops.mass_k();
    let mut w = DMatrix::zeros(3 * nk, 3 * nk);
    for (c, s) in [T::one(), T::one(), lit(2.0)].into_iter().enumerate() {
        w.view_mut((c * nk, c * nk), (nk, nk)).copy_from(&(&mk * s));
    }
    e.transpose() * w * e
}

/// Orthonormal basis of the complement of the rigid-body vectors.
fn kernel_complement<T: Real>(ops: &ElementOperators<T>) -> DMatrix<T> {
    let n = ops.n_dofs();
    let rigid = ops.rigid_body_dofs();
    let mut cols = DMatrix::zeros(n, 3);
    for (j, r) in rigid.iter().enumerate() {
        cols.set_column(j, r);
    }
    let mut full = DMatrix::zeros(n, n);
    full.view_mut((0, 0), (n, 3)).copy_from(&cols);
    full.view_mut((0, 3), (n, n - 3))
        .copy_from(&DMatrix::identity(n, n - 3));
    let q = full.qr().q();
    q.columns(3, n - 3).into_owned()
}

fn project_out<T: Real>(v: &mut DVector<T>, basis: &[DVector<T>]) {
    for b in basis {
        let c = v.dot(b);
        v.axpy(-c, b, T::one());
    }
}

fn orthonormal_rigid<T: Real>(ops: &ElementOperators<T>) -> Vec<DVector<T>> {
    let mut out: Vec<DVector<T>> = Vec::new();
    for mut r in ops.rigid_body_dofs() {
        project_out(&mut r, &out);
        let n = r.norm();
        out.push(r / n);
    }
    out
}

/// The two local ratios `(|grad_s p_T v|^2 + s_T(v,v)) / (|grad_s v_T|^2 +
/// j_T(v,v))` and `|v|_{a~}^2 / |v|_a^2` sampled on random unit vectors
/// orthogonal to the rigid-body kernel. Samples are spread over randomly
/// chosen elements.
pub fn sampled_stability_ratios<T: Real>(
    ops: &[ElementOperators<T>],
    material: &Material<T>,
    samples: usize,
    seed: u64,
) -> (RatioRange<T>, RatioRange<T>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut r1 = RatioRange::empty();
    let mut r2 = RatioRange::empty();
    let mut cache: Vec<Option<[DMatrix<T>; 4]>> = vec![None; ops.len()];
    let mut rigid: Vec<Option<Vec<DVector<T>>>> = vec![None; ops.len()];
    for _ in 0..samples {
        let e = rng.random_range(0..ops.len());
        let o = &ops[e];
        let [num1, den1, at, a] = cache[e].get_or_insert_with(|| {
            [
                &o.gradient_gram + &o.stabilization,
                cell_strain_gram(o) + &o.jump,
                o.a_tilde_matrix(material),
                o.a_matrix(material),
            ]
        });
        let rig = rigid[e].get_or_insert_with(|| orthonormal_rigid(o));
        let mut v = DVector::from_fn(o.n_dofs(), |_, _| lit::<T>(rng.random_range(-1.0..1.0)));
        project_out(&mut v, rig);
        let nv = v.norm();
        v /= nv;
        let q = |m: &DMatrix<T>| v.dot(&(m * &v));
        r1.push(q(num1) / q(den1));
        r2.push(q(at) / q(a));
    }
    (r1, r2)
}

/// Exact extremes of both ratios over each element's kernel complement,
/// from generalized symmetric eigenproblems.
pub fn exact_stability_ratios<T: Real>(
    ops: &[ElementOperators<T>],
    material: &Material<T>,
) -> Result<(RatioRange<T>, RatioRange<T>)> {
    let per = ops
        .par_iter()
        .map(|o| -> Result<(RatioRange<T>, RatioRange<T>)> {
            let q = kernel_complement(o);
            let range = |num: DMatrix<T>, den: DMatrix<T>| -> Result<RatioRange<T>> {
                let a = q.transpose() * num * &q;
                let b = q.transpose() * den * &q;
                let l = b.cholesky().ok_or(Error::Singular {
                    what: "ratio denominator",
                    element: o.element,
                })?;
                let li = l.l().try_inverse().ok_or(Error::Singular {
                    what: "ratio denominator factor",
                    element: o.element,
                })?;
                let mut m = &li * a * li.transpose();
                crate::operators::symmetrize(&mut m);
                let ev = m.symmetric_eigen().eigenvalues;
                Ok(RatioRange {
                    min: ev.min(),
                    max: ev.max(),
                })
            };
            Ok((
                range(&o.gradient_gram + &o.stabilization, cell_strain_gram(o) + &o.jump)?,
                range(o.a_tilde_matrix(material), o.a_matrix(material))?,
            ))
        })
        .collect::<Result<Vec<_>>>()?;
    let mut r1 = RatioRange::empty();
    let mut r2 = RatioRange::empty();
    for (a, b) in &per {
        r1.merge(a);
        r2.merge(b);
    }
    Ok((r1, r2))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn manufactured_load_matches_finite_differences() {
        let mat = Material::new(1.7, 3.0).unwrap();
        let case = Case::<f64>::Manufactured;
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let h = 1e-4;
        let sigma = |p: Point<f64>| {
            let du_dx = (case.u(&(p + Vec2::new(h, 0.0))) - case.u(&(p - Vec2::new(h, 0.0)))) / (2.0 * h);
            let du_dy = (case.u(&(p + Vec2::new(0.0, h))) - case.u(&(p - Vec2::new(0.0, h)))) / (2.0 * h);
            let g = nalgebra::Matrix2::new(du_dx.x, du_dy.x, du_dx.y, du_dy.y);
            (g + g.transpose()) * mat.mu + nalgebra::Matrix2::identity() * (mat.lambda * g.trace())
        };
        for _ in 0..20 {
            let p = Point::new(rng.random_range(0.0..1.0), rng.random_range(0.0..1.0));
            let sx = (sigma(p + Vec2::new(h, 0.0)) - sigma(p - Vec2::new(h, 0.0))) / (2.0 * h);
            let sy = (sigma(p + Vec2::new(0.0, h)) - sigma(p - Vec2::new(0.0, h))) / (2.0 * h);
            let div = Vec2::new(sx[(0, 0)] + sy[(0, 1)], sx[(1, 0)] + sy[(1, 1)]);
            assert!((case.f(&p, &mat) + div).norm() < 1e-5);
            let d = (case.u(&(p + Vec2::new(h, 0.0))).x - case.u(&(p - Vec2::new(h, 0.0))).x
                + case.u(&(p + Vec2::new(0.0, h))).y
                - case.u(&(p - Vec2::new(0.0, h))).y)
                / (2.0 * h);
            assert!((d - 1.0).abs() < 1e-7);
        }
    }

    #[test]
    fn polynomial_load_matches_finite_differences() {
        let mat = Material::new(0.8, 2.5).unwrap();
        let q = PolyField::<f64>::random(3, 4);
        let h = 1e-4;
        let p = Point::new(0.3, 0.7);
        let sx =
            (q.stress(&(p + Vec2::new(h, 0.0)), &mat) - q.stress(&(p - Vec2::new(h, 0.0)), &mat)) / (2.0 * h);
        let sy =
            (q.stress(&(p + Vec2::new(0.0, h)), &mat) - q.stress(&(p - Vec2::new(0.0, h)), &mat)) / (2.0 * h);
        let div = Vec2::new(sx[(0, 0)] + sy[(0, 1)], sx[(1, 0)] + sy[(1, 1)]);
        assert!((q.load(&p, &mat) + div).norm() < 1e-6);
        let g = q.gradient(&p);
        let fd = (q.value(&(p + Vec2::new(0.0, h))) - q.value(&(p - Vec2::new(0.0, h)))) / (2.0 * h);
        assert!((g[(0, 1)] - fd.x).abs() < 1e-7 && (g[(1, 1)] - fd.y).abs() < 1e-7);
    }

    #[test]
    fn slope_of_power_law() {
        let h = [0.5, 0.25, 0.1, 0.03];
        for p in [1.0, 2.5, 4.0] {
            let e: Vec<f64> = h.iter().map(|x: &f64| 3.0 * x.powf(p)).collect();
            assert!((loglog_slope(&h, &e) - p).abs() < 1e-12);
        }
    }

    #[test]
    fn zero_case_has_zero_errors() {
        let (_, _, r) = run_case(1, 2, Material::new(1.0, 1.0).unwrap(), &Case::<f64>::Zero, true).unwrap();
        let e = r.errors;
        assert_eq!([e.en_uh, e.en_tuh, e.l2_uh, e.l2_tuh, e.pl2], [0.0; 5]);
    }

    #[test]
    fn polynomial_case_is_exact() {
        let mat = Material::new(1.0, 2.0).unwrap();
        for k in 1..=2 {
            let case = Case::Polynomial(PolyField::<f64>::random(k + 1, 17));
            let (_, _, r) = run_case(k, 3, mat, &case, true).unwrap();
            assert!(r.errors.en_uh < 1e-9 && r.errors.en_tuh < 1e-9);
            assert!(r.errors.pl2 < 1e-10);
        }
    }

    #[test]
    fn energy_error_decreases_under_refinement() {
        let mat = Material::new(1.0, 1.0).unwrap();
        let (_, _, a) = run_case(1, 4, mat, &Case::<f64>::Manufactured, true).unwrap();
        let (_, _, b) = run_case(1, 8, mat, &Case::<f64>::Manufactured, true).unwrap();
        assert!(b.errors.en_uh < a.errors.en_uh);
        let ratio = a.errors.en_uh / b.errors.en_uh;
        assert!(ratio > 3.0, "{ratio}");
    }

    #[test]
    fn sweep_csv_round_trip_and_schema() {
        let mat = Material::new(1.0, 1.0).unwrap();
        let sweep = convergence_sweep(&[1], &[2, 4, 8], mat, &Case::<f64>::Manufactured);
        assert!(sweep.failure.is_none());
        let mut buf = Vec::new();
        emit_csv(&sweep, &mut buf).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert_eq!(text.lines().next().unwrap(), SWEEP_COLUMNS.join(","));
        assert!(text.lines().last().unwrap().starts_with("1,slope,,"));
        let back = read_sweep_csv::<f64, _>(buf.as_slice()).unwrap();
        assert_eq!(back.records, sweep.records);
        assert_eq!(back.slopes, sweep.slopes);

        let empty = Sweep::<f64> {
            records: vec![],
            slopes: vec![],
            failure: None,
        };
        let mut buf = Vec::new();
        emit_csv(&empty, &mut buf).unwrap();
        assert_eq!(String::from_utf8(buf).unwrap().lines().count(), 1);
    }

    #[test]
    fn failing_run_stops_sweep_with_partial_table() {
        let mat = Material::new(1.0, 1.0).unwrap();
        let sweep = convergence_sweep(&[1], &[2, 0, 4], mat, &Case::<f64>::Zero);
        assert_eq!(sweep.records.len(), 1);
        assert!(matches!(sweep.failure, Some((1, 0, Error::Mesh(_)))));
    }

    #[test]
    fn sampled_ratios_lie_inside_exact_bounds() {
        let mesh = Mesh::<f64>::structured_triangular(2).unwrap();
        let mat = Material::new(1.0, 1.0).unwrap();
        let ops: Vec<_> = (0..mesh.elements.len())
            .map(|e| ElementOperators::new(&mesh, e, 1).unwrap())
            .collect();
        let (s1, s2) = sampled_stability_ratios(&ops, &mat, 200, 1);
        let (e1, e2) = exact_stability_ratios(&ops, &mat).unwrap();
        for (s, e) in [(s1, e1), (s2, e2)] {
            assert!(e.min > 0.0);
            assert!(s.min >= e.min * (1.0 - 1e-10) && s.max <= e.max * (1.0 + 1e-10));
        }
    }
}
