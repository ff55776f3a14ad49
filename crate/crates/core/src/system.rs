//! Global assembly, static condensation and the sparse SPD solve.

use std::collections::BTreeMap;
use std::io::{Read, Write};

use nalgebra::{DMatrix, DVector};
use nalgebra_sparse::factorization::CscCholesky;
use nalgebra_sparse::{CooMatrix, CscMatrix};
use rayon::prelude::*;

use crate::equilibrium::PostprocessOperators;
use crate::error::{Error, Result};
use crate::mesh::{Mesh, Point, Vec2};
use crate::operators::{ElementOperators, Material};
use crate::polybasis::{cell_dim, face_dim, l2_project_vector};
use crate::scalar::{lit, Real};

/// Global numbering of the face unknowns. Interior faces are free and
/// numbered in face order; boundary faces carry Dirichlet data.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DofMap {
    pub k: usize,
    /// Unknowns per face, `2 dim P^k(F)`.
    pub face_block: usize,
    /// Unknowns per cell, `2 dim P^k(T)`.
    pub cell_block: usize,
    /// Free position of each face, `None` on the boundary.
    pub free: Vec<Option<usize>>,
    pub n_free_faces: usize,
}

impl DofMap {
    pub fn new<T: Real>(mesh: &Mesh<T>, k: usize) -> Self {
        let mut next = 0;
        let free = mesh
            .faces
            .iter()
            .map(|f| {
                if f.is_boundary() {
                    None
                } else {
                    next += 1;
                    Some(next - 1)
                }
            })
            .collect();
        DofMap {
            k,
            face_block: 2 * face_dim(k),
            cell_block: 2 * cell_dim(k),
            free,
            n_free_faces: next,
        }
    }

    /// Size of the condensed system.
    pub fn n_free(&self) -> usize {
        self.n_free_faces * self.face_block
    }

    /// First global index of face `f`, if it is free.
    pub fn face_start(&self, f: usize) -> Option<usize> {
        self.free[f].map(|i| i * self.face_block)
    }
}

/// Mesh, degree, material and every element operator needed to solve and
/// post-process.
#[derive(Debug, Clone)]
pub struct Discretization<T: Real> {
    pub mesh: Mesh<T>,
    pub k: usize,
    pub material: Material<T>,
    pub ops: Vec<ElementOperators<T>>,
    pub post: Vec<PostprocessOperators<T>>,
    pub dofs: DofMap,
}

impl<T: Real> Discretization<T> {
    pub fn new(mesh: Mesh<T>, k: usize, material: Material<T>) -> Result<Self> {
        if k < 1 {
            return Err(Error::InvalidDegree(k));
        }
        let ops = (0..mesh.elements.len())
            .into_par_iter()
            .map(|e| ElementOperators::new(&mesh, e, k))
            .collect::<Result<Vec<_>>>()?;
        let post = ops
            .par_iter()
            .map(|o| PostprocessOperators::new(o, &material))
            .collect::<Result<Vec<_>>>()?;
        let dofs = DofMap::new(&mesh, k);
        Ok(Discretization {
            mesh,
            k,
            material,
            ops,
            post,
            dofs,
        })
    }

    /// `pi_F^k g` on every boundary face, in face-basis coefficients.
    pub fn dirichlet_values<G: Fn(&Point<T>) -> Vec2<T> + Sync>(
        &self,
        g: &G,
    ) -> Result<Vec<Option<DVector<T>>>> {
        self.mesh
            .faces
            .par_iter()
            .enumerate()
            .map(|(fi, face)| {
                if !face.is_boundary() {
                    return Ok(None);
                }
                let e = face.owner;
                let ops = &self.ops[e];
                let i = ops
                    .faces
                    .iter()
                    .position(|d| d.face == fi)
                    .ok_or_else(|| Error::Mismatch(format!("face {fi} missing from element {e}")))?;
                l2_project_vector(g, &ops.bases.face_k(i), &ops.bases.face_rules[i]).map(Some)
            })
            .collect()
    }
}

/// Discrete unknowns on every cell and face.
#[derive(Debug, Clone, PartialEq)]
pub struct Solution<T: Real> {
    pub k: usize,
    pub material: Material<T>,
    pub cells: Vec<DVector<T>>,
    pub faces: Vec<DVector<T>>,
    pub stats: SolveStats,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SolveStats {
    pub n_unknowns: usize,
    pub nnz: usize,
    /// Relative residual of the global linear solve.
    pub relative_residual: f64,
    pub condensed: bool,
}

impl<T: Real> Solution<T> {
    /// Local unknown vector of element `e`.
    pub fn local(&self, disc: &Discretization<T>, e: usize) -> DVector<T> {
        let ops = &disc.ops[e];
        let mut v = DVector::zeros(ops.n_dofs());
        v.rows_mut(0, ops.layout.cell_len()).copy_from(&self.cells[e]);
        for (i, &f) in disc.mesh.elements[e].faces.iter().enumerate() {
            v.rows_mut(ops.layout.face_offset(i), ops.layout.face_len())
                .copy_from(&self.faces[f]);
        }
        v
    }

    pub fn locals(&self, disc: &Discretization<T>) -> Vec<DVector<T>> {
        (0..disc.mesh.elements.len())
            .map(|e| self.local(disc, e))
            .collect()
    }

    /// Checks that block counts and sizes fit `disc`.
    pub fn check(&self, disc: &Discretization<T>) -> Result<()> {
        let mesh = &disc.mesh;
        if self.k != disc.k {
            return Err(Error::Mismatch(format!("degree {} vs {}", self.k, disc.k)));
        }
        if self.cells.len() != mesh.elements.len() || self.faces.len() != mesh.faces.len() {
            return Err(Error::Mismatch(format!(
                "{} cells and {} faces for a mesh with {} elements and {} faces",
                self.cells.len(),
                self.faces.len(),
                mesh.elements.len(),
                mesh.faces.len()
            )));
        }
        let bad_cell = self.cells.iter().any(|c| c.len() != disc.dofs.cell_block);
        let bad_face = self.faces.iter().any(|c| c.len() != disc.dofs.face_block);
        if bad_cell || bad_face {
            return Err(Error::Mismatch("block size does not match the degree".into()));
        }
        Ok(())
    }

    /// Writes `kind,id,component,index,coefficient` rows. Parameter rows
    /// (`kind = parameter`) carry the degree and the Lamé coefficients.
    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        w.write_record(["kind", "id", "component", "index", "coefficient"])?;
        let num = |x: T| format!("{:.16e}", x);
        w.write_record(["parameter", "0", "k", "0", &self.k.to_string()])?;
        w.write_record(["parameter", "0", "mu", "0", &num(self.material.mu)])?;
        w.write_record(["parameter", "0", "lambda", "0", &num(self.material.lambda)])?;
        for (kind, blocks) in [("cell", &self.cells), ("face", &self.faces)] {
            for (id, b) in blocks.iter().enumerate() {
                let half = b.len() / 2;
                for (j, &c) in b.iter().enumerate() {
                    let comp = if j < half { "x" } else { "y" };
                    w.write_record([kind, &id.to_string(), comp, &(j % half).to_string(), &num(c)])?;
                }
            }
        }
        w.flush()?;
        Ok(())
    }

    pub fn read_csv<R: Read>(reader: R) -> Result<Self> {
        let mut rd = csv::Reader::from_reader(reader);
        let header = rd.headers()?.clone();
        if header.iter().collect::<Vec<_>>() != ["kind", "id", "component", "index", "coefficient"] {
            return Err(Error::Format(format!("unexpected header {header:?}")));
        }
        let mut k = None;
        let mut mu = None;
        let mut lambda = None;
        let mut cells: BTreeMap<usize, Vec<(usize, T)>> = BTreeMap::new();
        let mut faces: BTreeMap<usize, Vec<(usize, T)>> = BTreeMap::new();
        let mut stash = Vec::new();
        for rec in rd.records() {
            let rec = rec?;
            if rec.len() != 5 {
                return Err(Error::Format(format!("expected 5 fields in {rec:?}")));
            }
            let bad = |what: &str| Error::Format(format!("bad {what} in {rec:?}"));
            let id: usize = rec[1].parse().map_err(|_| bad("id"))?;
            let index: usize = rec[3].parse().map_err(|_| bad("index"))?;
            match &rec[0] {
                "parameter" => match &rec[2] {
                    "k" => k = Some(rec[4].parse::<usize>().map_err(|_| bad("degree"))?),
                    "mu" => mu = Some(rec[4].parse::<T>().map_err(|_| bad("mu"))?),
                    "lambda" => lambda = Some(rec[4].parse::<T>().map_err(|_| bad("lambda"))?),
                    _ => return Err(bad("parameter")),
                },
                kind @ ("cell" | "face") => {
                    let comp = match &rec[2] {
                        "x" => 0,
                        "y" => 1,
                        _ => return Err(bad("component")),
                    };
                    let c: T = rec[4].parse().map_err(|_| bad("coefficient"))?;
                    stash.push((kind == "cell", id, comp, index, c));
                }
                _ => return Err(bad("kind")),
            }
        }
        let k = k.ok_or_else(|| Error::Format("missing degree".into()))?;
        let material = Material::new(
            mu.ok_or_else(|| Error::Format("missing mu".into()))?,
            lambda.ok_or_else(|| Error::Format("missing lambda".into()))?,
        )?;
        let (nc, nf) = (cell_dim(k), face_dim(k));
        for (is_cell, id, comp, index, c) in stash {
            let n = if is_cell { nc } else { nf };
            if index >= n {
                return Err(Error::Format(format!(
                    "index {index} out of range for degree {k}"
                )));
            }
            let map = if is_cell { &mut cells } else { &mut faces };
            map.entry(id).or_default().push((comp * n + index, c));
        }
        let collect = |map: BTreeMap<usize, Vec<(usize, T)>>, n: usize| -> Result<Vec<DVector<T>>> {
            let count = map.keys().next_back().map_or(0, |&m| m + 1);
            let mut out = vec![None; count];
            for (id, entries) in map {
                let mut v = DVector::zeros(2 * n);
                let mut seen = vec![false; 2 * n];
                for (j, c) in entries {
                    if std::mem::replace(&mut seen[j], true) {
                        return Err(Error::Format(format!("duplicate coefficient {j} for id {id}")));
                    }
                    v[j] = c;
                }
                if seen.iter().any(|s| !s) {
                    return Err(Error::Format(format!("incomplete block for id {id}")));
                }
                out[id] = Some(v);
            }
            out.into_iter()
                .enumerate()
                .map(|(id, v)| v.ok_or_else(|| Error::Format(format!("missing block {id}"))))
                .collect()
        };
        Ok(Solution {
            k,
            material,
            cells: collect(cells, nc)?,
            faces: collect(faces, nf)?,
            stats: SolveStats {
                n_unknowns: 0,
                nnz: 0,
                relative_residual: 0.0,
                condensed: true,
            },
        })
    }
}

/// Per-element condensed data.
struct CondensedElement<T: Real> {
    schur: DMatrix<T>,
    rhs: DVector<T>,
    /// `A_TT^{-1} A_TF`.
    recovery: DMatrix<T>,
    /// `A_TT^{-1} b_T`.
    offset: DVector<T>,
}

fn condense<T: Real, F: Fn(&Point<T>) -> Vec2<T>>(
    ops: &ElementOperators<T>,
    material: &Material<T>,
    f: &F,
) -> Result<CondensedElement<T>> {
    let a = ops.a_matrix(material);
    let nc = ops.layout.cell_len();
    let nf = ops.n_dofs() - nc;
    let att = a.view((0, 0), (nc, nc)).into_owned();
    let atf = a.view((0, nc), (nc, nf)).into_owned();
    let aff = a.view((nc, nc), (nf, nf)).into_owned();
    let b = ops.load_vector(f);
    let chol = att
        .cholesky()
        .ok_or(Error::CellBlockNotSpd { element: ops.element })?;
    let recovery = chol.solve(&atf);
    let offset = chol.solve(&b);
    let mut schur = aff - atf.transpose() * &recovery;
    crate::operators::symmetrize(&mut schur);
    let rhs = -(atf.transpose() * &offset);
    Ok(CondensedElement {
        schur,
        rhs,
        recovery,
        offset,
    })
}

/// Relative residual required of the global solve.
pub fn residual_target<T: Real>() -> T {
    lit::<T>(1e-12).max(T::EPS * lit::<T>(1e3))
}

/// Solves a sparse SPD system given by triplets (duplicates summed) with an
/// AMD fill-reducing ordering and a sparse Cholesky factorization.
pub fn sparse_spd_solve<T: Real>(
    n: usize,
    triplets: &[(usize, usize, T)],
    rhs: &DVector<T>,
) -> Result<(DVector<T>, T, usize)> {
    if n == 0 {
        return Ok((DVector::zeros(0), T::zero(), 0));
    }
    let mut coo = CooMatrix::new(n, n);
    for &(i, j, v) in triplets {
        coo.push(i, j, v);
    }
    let csc = CscMatrix::from(&coo);
    let nnz = csc.nnz();
    let (perm, inv, _) = amd::order(n, csc.col_offsets(), csc.row_indices(), &amd::Control::default())
        .map_err(|s| Error::Factorization(format!("ordering failed: {s:?}")))?;
    debug_assert_eq!(perm.len(), n);
    let mut pcoo = CooMatrix::new(n, n);
    for j in 0..n {
        let col = csc.col(j);
        for (&i, &v) in col.row_indices().iter().zip(col.values()) {
            pcoo.push(inv[i], inv[j], v);
        }
    }
    let pcsc = CscMatrix::from(&pcoo);
    let chol = CscCholesky::factor(&pcsc).map_err(|e| Error::Factorization(format!("{e:?}")))?;
    let solve = |b: &DVector<T>| -> DVector<T> {
        let mut pb = DMatrix::zeros(n, 1);
        for i in 0..n {
            pb[(inv[i], 0)] = b[i];
        }
        let y = chol.solve(&pb);
        DVector::from_fn(n, |i, _| y[(inv[i], 0)])
    };
    let apply = |x: &DVector<T>| -> DVector<T> {
        let mut out = DVector::zeros(n);
        for j in 0..n {
            let col = csc.col(j);
            for (&i, &v) in col.row_indices().iter().zip(col.values()) {
                out[i] += v * x[j];
            }
        }
        out
    };
    let bnorm = rhs.norm();
    if bnorm == T::zero() {
        return Ok((DVector::zeros(n), T::zero(), nnz));
    }
    let target = residual_target::<T>();
    let mut x = solve(rhs);
    let mut res = (rhs - apply(&x)).norm() / bnorm;
    for _ in 0..3 {
        if res <= target {
            break;
        }
        let r = rhs - apply(&x);
        x += solve(&r);
        res = (rhs - apply(&x)).norm() / bnorm;
    }
    if !(res <= target) {
        return Err(Error::Residual {
            achieved: res.as_f64(),
            target: target.as_f64(),
        });
    }
    Ok((x, res, nnz))
}

fn matrix_triplets<T: Real>(blocks: &[DMatrix<T>], maps: &[Vec<Option<usize>>]) -> Vec<(usize, usize, T)> {
    let mut out = Vec::new();
    for (m, map) in blocks.iter().zip(maps) {
        for (c, gc) in map.iter().enumerate() {
            let Some(gc) = gc else { continue };
            for (r, gr) in map.iter().enumerate() {
                if let Some(gr) = gr {
                    let v = m[(r, c)];
                    if v != T::zero() {
                        out.push((*gr, *gc, v));
                    }
                }
            }
        }
    }
    out
}

/// Solves the discrete problem with load `f` and Dirichlet datum `g`.
/// With `condense` the cell unknowns are eliminated element by element;
/// otherwise the full system is assembled and solved.
pub fn solve<T, F, G>(disc: &Discretization<T>, f: &F, g: &G, condense_cells: bool) -> Result<Solution<T>>
where
    T: Real,
    F: Fn(&Point<T>) -> Vec2<T> + Sync,
    G: Fn(&Point<T>) -> Vec2<T> + Sync,
{
    let dirichlet = disc.dirichlet_values(g)?;
    let dofs = &disc.dofs;
    let fb = dofs.face_block;
    let face_values = |x: &DVector<T>| -> Vec<DVector<T>> {
        (0..disc.mesh.faces.len())
            .map(|fi| match (&dirichlet[fi], dofs.face_start(fi)) {
                (Some(d), _) => d.clone(),
                (None, Some(s)) => x.rows(s, fb).into_owned(),
                (None, None) => unreachable!("interior faces are free"),
            })
            .collect()
    };
    // local face unknown -> (global index or Dirichlet value)
    let face_map = |e: usize, offset: usize| -> Vec<Option<usize>> {
        disc.mesh.elements[e]
            .faces
            .iter()
            .flat_map(|&fi| (0..fb).map(move |r| dofs.face_start(fi).map(|s| offset + s + r)))
            .collect()
    };
    let lifted = |e: usize| -> DVector<T> {
        let mut v = DVector::zeros(disc.mesh.elements[e].faces.len() * fb);
        for (i, &fi) in disc.mesh.elements[e].faces.iter().enumerate() {
            if let Some(d) = &dirichlet[fi] {
                v.rows_mut(i * fb, fb).copy_from(d);
            }
        }
        v
    };
    if condense_cells {
        let elems = disc
            .ops
            .par_iter()
            .map(|o| condense(o, &disc.material, f))
            .collect::<Result<Vec<_>>>()?;
        let n = dofs.n_free();
        let maps: Vec<_> = (0..elems.len()).map(|e| face_map(e, 0)).collect();
        let mut rhs = DVector::zeros(n);
        for (e, el) in elems.iter().enumerate() {
            let local = &el.rhs - &el.schur * lifted(e);
            for (r, gr) in maps[e].iter().enumerate() {
                if let Some(gr) = gr {
                    rhs[*gr] += local[r];
                }
            }
        }
        let schurs: Vec<_> = elems.iter().map(|e| e.schur.clone()).collect();
        let trip = matrix_triplets(&schurs, &maps);
        let (x, res, nnz) = sparse_spd_solve(n, &trip, &rhs)?;
        let faces = face_values(&x);
        let cells = elems
            .iter()
            .enumerate()
            .map(|(e, el)| {
                let mut uf = DVector::zeros(el.recovery.ncols());
                for (i, &fi) in disc.mesh.elements[e].faces.iter().enumerate() {
                    uf.rows_mut(i * fb, fb).copy_from(&faces[fi]);
                }
                &el.offset - &el.recovery * uf
            })
            .collect();
        Ok(Solution {
            k: disc.k,
            material: disc.material,
            cells,
            faces,
            stats: SolveStats {
                n_unknowns: n,
                nnz,
                relative_residual: res.as_f64(),
                condensed: true,
            },
        })
    } else {
        let cb = dofs.cell_block;
        let ne = disc.mesh.elements.len();
        let n = ne * cb + dofs.n_free();
        let mut rhs = DVector::zeros(n);
        let mut blocks = Vec::with_capacity(ne);
        let mut maps = Vec::with_capacity(ne);
        for (e, ops) in disc.ops.iter().enumerate() {
            let a = ops.a_matrix(&disc.material);
            let mut map: Vec<Option<usize>> = (0..cb).map(|r| Some(e * cb + r)).collect();
            map.extend(face_map(e, ne * cb));
            let mut lift = DVector::zeros(ops.n_dofs());
            lift.rows_mut(cb, ops.n_dofs() - cb).copy_from(&lifted(e));
            let mut local = -(&a * lift);
            let mut cell = local.rows_mut(0, cb);
            cell += ops.load_vector(f);
            for (r, gr) in map.iter().enumerate() {
                if let Some(gr) = gr {
                    rhs[*gr] += local[r];
                }
            }
            blocks.push(a);
            maps.push(map);
        }
        let trip = matrix_triplets(&blocks, &maps);
        let (x, res, nnz) = sparse_spd_solve(n, &trip, &rhs)?;
        let faces = face_values(&x.rows(ne * cb, dofs.n_free()).into_owned());
        let cells = (0..ne).map(|e| x.rows(e * cb, cb).into_owned()).collect();
        Ok(Solution {
            k: disc.k,
            material: disc.material,
            cells,
            faces,
            stats: SolveStats {
                n_unknowns: n,
                nnz,
                relative_residual: res.as_f64(),
                condensed: false,
            },
        })
    }
}
