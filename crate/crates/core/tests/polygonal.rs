//! Mixed quadrilateral and triangular meshes with a perturbed interior vertex.

use hho::equilibrium::{representation_matrix, verify_local_equilibrium, verify_traction_balance};
use hho::harness::{reference_reduction, run_on_mesh, Case, PolyField};
use hho::mesh::{Mesh, Point};
use hho::operators::Material;
use hho::system::{solve, Discretization};
use nalgebra::DVector;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn mixed_mesh<T: hho::Real>(cx: f64, cy: f64) -> Mesh<T> {
    let t = |v: f64| T::from_f64(v).unwrap();
    let p = |x: f64, y: f64| Point::new(t(x), t(y));
    let vertices = vec![
        p(0.0, 0.0),
        p(0.5, 0.0),
        p(1.0, 0.0),
        p(0.0, 0.5),
        p(cx, cy),
        p(1.0, 0.5),
        p(0.0, 1.0),
        p(0.5, 1.0),
        p(1.0, 1.0),
    ];
    let polygons = vec![
        vec![0, 1, 4, 3],
        vec![1, 2, 5, 4],
        vec![3, 4, 7, 6],
        vec![4, 5, 8],
        vec![4, 8, 7],
    ];
    Mesh::from_polygons(vertices, polygons).unwrap()
}

#[test]
fn polynomial_solution_is_reproduced() {
    let mat = Material::new(1.3, 2.0).unwrap();
    for k in 1..=2 {
        let field = PolyField::<f64>::random(k + 1, 31);
        let mesh = mixed_mesh::<f64>(0.45, 0.55);
        let (disc, sol, rec) = run_on_mesh(mesh, k, 0, mat, &Case::Polynomial(field.clone()), true).unwrap();
        assert!(rec.errors.en_uh < 1e-9, "k={k}: {}", rec.errors.en_uh);
        for e in 0..disc.mesh.elements.len() {
            let exact = reference_reduction(&disc, e, &|p: &Point<f64>| field.value(p)).unwrap();
            let diff = (sol.local(&disc, e) - &exact).amax();
            assert!(diff < 1e-9 * exact.amax().max(1.0), "k={k} element {e}: {diff}");
        }
    }
}

#[test]
fn equilibrium_holds_on_polygons() {
    let mat = Material::new(1.0, 1.0).unwrap();
    let case = Case::<f64>::Manufactured;
    for k in 1..=3 {
        let (disc, sol, _) = run_on_mesh(mixed_mesh(0.45, 0.55), k, 0, mat, &case, true).unwrap();
        let locals = sol.locals(&disc);
        let f = |p: &Point<f64>| case.f(p, &mat);
        let el = verify_local_equilibrium(&disc.mesh, &disc.ops, &disc.post, &locals, &f).unwrap();
        let fa = verify_traction_balance(&disc.mesh, &disc.ops, &disc.post, &locals).unwrap();
        assert!(el.iter().all(|r| r.normalized <= 1e-10), "k={k}");
        assert!(fa.iter().all(|r| r.normalized <= 1e-10), "k={k}");
    }
}

#[test]
fn condensed_and_full_solves_agree_on_polygons() {
    let mat = Material::new(1.0, 5.0).unwrap();
    let case = Case::<f64>::Manufactured;
    let disc = Discretization::new(mixed_mesh(0.45, 0.55), 2, mat).unwrap();
    let f = |p: &Point<f64>| case.f(p, &mat);
    let g = |p: &Point<f64>| case.g(p);
    let a = solve(&disc, &f, &g, true).unwrap();
    let b = solve(&disc, &f, &g, false).unwrap();
    for (x, y) in a.cells.iter().zip(&b.cells).chain(a.faces.iter().zip(&b.faces)) {
        assert!((x - y).amax() < 1e-11);
    }
}

#[test]
fn single_precision_solve() {
    let mat = Material::<f32>::new(1.0, 1.0).unwrap();
    let field = PolyField::<f32>::random(2, 5);
    let (disc, sol, rec) = run_on_mesh(
        mixed_mesh::<f32>(0.45, 0.55),
        1,
        0,
        mat,
        &Case::Polynomial(field),
        true,
    )
    .unwrap();
    assert!(rec.errors.en_uh < 1e-3, "{}", rec.errors.en_uh);
    let locals = sol.locals(&disc);
    let fa = verify_traction_balance(&disc.mesh, &disc.ops, &disc.post, &locals).unwrap();
    assert!(fa.iter().all(|r| r.normalized < 1e-4));
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    #[test]
    fn representation_identity_on_perturbed_meshes(cx in 0.35f64..0.65, cy in 0.35f64..0.65, seed in 0u64..1000) {
        let mat = Material::new(1.0, 3.0).unwrap();
        let mesh = mixed_mesh::<f64>(cx, cy);
        let disc = Discretization::new(mesh, 2, mat).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for (ops, post) in disc.ops.iter().zip(&disc.post) {
            let a = ops.a_matrix(&mat);
            let rep = representation_matrix(ops, post);
            let m = ops.n_dofs();
            let w = DVector::from_fn(m, |_, _| rng.random_range(-1.0..1.0));
            let v = DVector::from_fn(m, |_, _| rng.random_range(-1.0..1.0));
            let scale = (w.dot(&(&a * &w)) * v.dot(&(&a * &v))).sqrt();
            prop_assert!((v.dot(&(&a * &w)) - v.dot(&(&rep * &w))).abs() <= 1e-12 * scale);
        }
    }
}
