//! Acceptance suite: one line per criterion, nonzero exit on any failure.

use std::time::Instant;

use hho::equilibrium::{representation_matrix, verify_local_equilibrium, verify_traction_balance};
use hho::harness::{
    loglog_slope, reference_reduction, run_case, sampled_stability_ratios, Case, ConvergenceRecord, PolyField,
};
use hho::mesh::{Mesh, Point};
use hho::operators::{ElementOperators, Material};
use hho::polybasis::l2_project_vector;
use hho::quadrature::segment_rule;
use hho::system::{solve, Discretization, Solution};
use nalgebra::DVector;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const KS: [usize; 3] = [1, 2, 3];
const NS: [usize; 4] = [4, 8, 16, 32];

struct Outcome {
    pass: bool,
    detail: String,
}

fn unit() -> Material<f64> {
    Material::new(1.0, 1.0).unwrap()
}

fn report(id: usize, name: &str, start: Instant, o: &Outcome) {
    println!(
        "[{}] {id:>2} {name}: {} ({:.1}s)",
        if o.pass { "PASS" } else { "FAIL" },
        o.detail,
        start.elapsed().as_secs_f64()
    );
}

fn representation_identity() -> Outcome {
    let mat = unit();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut worst = 0.0f64;
    for n in [2, 8] {
        let mesh = Mesh::<f64>::structured_triangular(n).unwrap();
        for k in KS {
            let disc = Discretization::new(mesh.clone(), k, mat).unwrap();
            for (ops, post) in disc.ops.iter().zip(&disc.post) {
                let a = ops.a_matrix(&mat);
                let rep = representation_matrix(ops, post);
                let m = ops.n_dofs();
                for _ in 0..100 {
                    let w = DVector::from_fn(m, |_, _| rng.random_range(-1.0..1.0));
                    let v = DVector::from_fn(m, |_, _| rng.random_range(-1.0..1.0));
                    let lhs = v.dot(&(&a * &w));
                    let rhs = v.dot(&(&rep * &w));
                    let scale = (w.dot(&(&a * &w)) * v.dot(&(&a * &v))).sqrt();
                    worst = worst.max((lhs - rhs).abs() / scale);
                }
            }
        }
    }
    Outcome {
        pass: worst <= 1e-12,
        detail: format!("max relative discrepancy {worst:.2e} (tol 1e-12)"),
    }
}

struct Run {
    disc: Discretization<f64>,
    sol: Solution<f64>,
    rec: ConvergenceRecord<f64>,
}

fn manufactured_runs() -> Vec<Run> {
    let mut out = Vec::new();
    for k in KS {
        for n in NS {
            let (disc, sol, rec) =
                run_case(k, n, unit(), &Case::Manufactured, true).expect("manufactured solve");
            out.push(Run { disc, sol, rec });
        }
    }
    out
}

fn local_equilibrium(runs: &[Run]) -> (Outcome, Outcome) {
    let case = Case::<f64>::Manufactured;
    let mat = unit();
    let f = |p: &Point<f64>| case.f(p, &mat);
    let mut worst_e = 0.0f64;
    let mut worst_f = 0.0f64;
    for r in runs {
        let locals = r.sol.locals(&r.disc);
        let el = verify_local_equilibrium(&r.disc.mesh, &r.disc.ops, &r.disc.post, &locals, &f).unwrap();
        let fa = verify_traction_balance(&r.disc.mesh, &r.disc.ops, &r.disc.post, &locals).unwrap();
        worst_e = el.iter().fold(worst_e, |m, x| m.max(x.normalized));
        worst_f = fa.iter().fold(worst_f, |m, x| m.max(x.normalized));
    }
    (
        Outcome {
            pass: worst_e <= 1e-10,
            detail: format!("max normalized element residual {worst_e:.2e} (tol 1e-10)"),
        },
        Outcome {
            pass: worst_f <= 1e-10,
            detail: format!("max normalized face defect {worst_f:.2e} (tol 1e-10)"),
        },
    )
}

fn polynomial_exactness() -> Outcome {
    let mat = unit();
    let mut worst_dof = 0.0f64;
    let mut worst_phi = 0.0f64;
    for k in KS {
        let field = PolyField::<f64>::random(k + 1, 100 + k as u64);
        let case = Case::Polynomial(field.clone());
        let (disc, sol, _) = run_case(k, 4, mat, &case, true).unwrap();
        let u = |p: &Point<f64>| field.value(p);
        for (e, ops) in disc.ops.iter().enumerate() {
            let exact = reference_reduction(&disc, e, &u).unwrap();
            let uh = sol.local(&disc, e);
            let scale = exact.amax().max(1.0);
            worst_dof = worst_dof.max((&uh - &exact).amax() / scale);
            for (i, fd) in ops.faces.iter().enumerate() {
                let face = &disc.mesh.faces[fd.face];
                let sn = |p: &Point<f64>| field.stress(p, &mat) * fd.normal;
                let target =
                    l2_project_vector(sn, &ops.bases.face_k(i), &segment_rule(face, 2 * (k + 1))).unwrap();
                let phi = disc.post[e].traction_of(i, &uh);
                worst_phi = worst_phi.max((&phi - &target).amax() / target.amax().max(1.0));
            }
        }
    }
    Outcome {
        pass: worst_dof <= 1e-9 && worst_phi <= 1e-9,
        detail: format!(
            "max relative DOF error {worst_dof:.2e}, max traction error {worst_phi:.2e} (tol 1e-9)"
        ),
    }
}

fn slopes_for(runs: &[Run], k: usize, pick: fn(&ConvergenceRecord<f64>) -> f64) -> f64 {
    let rows: Vec<_> = runs.iter().filter(|r| r.rec.k == k).map(|r| &r.rec).collect();
    let h: Vec<f64> = rows.iter().map(|r| r.meshsize).collect();
    let y: Vec<f64> = rows.iter().map(|r| pick(r)).collect();
    loglog_slope(&h, &y)
}

fn convergence(runs: &[Run]) -> Outcome {
    let mut pass = true;
    let mut parts = Vec::new();
    for k in KS {
        let kf = k as f64;
        let en = slopes_for(runs, k, |r| r.errors.en_uh);
        let pl2 = slopes_for(runs, k, |r| r.errors.pl2);
        pass &= (kf + 0.7..=kf + 1.3).contains(&en) && (kf + 1.7..=kf + 2.3).contains(&pl2);
        parts.push(format!("k={k}: energy {en:.3}, pL2 {pl2:.3}"));
    }
    Outcome {
        pass,
        detail: parts.join("; "),
    }
}

fn postprocessed(runs: &[Run]) -> Outcome {
    let mut pass = true;
    let mut parts = Vec::new();
    for k in KS {
        let kf = k as f64;
        let en = slopes_for(runs, k, |r| r.errors.en_tuh);
        pass &= (kf + 0.7..=kf + 1.3).contains(&en);
        parts.push(format!("k={k}: slope {en:.3}"));
    }
    let worst = runs
        .iter()
        .map(|r| r.rec.errors.en_uh / r.rec.errors.en_tuh)
        .fold(0.0f64, f64::max);
    pass &= worst <= 1.01;
    parts.push(format!("max err_en_uh/err_en_tuh {worst:.4} (grace 1.01)"));
    Outcome {
        pass,
        detail: parts.join("; "),
    }
}

fn cell_insensitivity(runs: &[Run]) -> Outcome {
    let mut pass = true;
    let mut parts = Vec::new();
    for k in KS {
        let worst = runs
            .iter()
            .filter(|r| r.rec.k == k)
            .map(|r| r.rec.errors.l2_tuh / r.rec.errors.l2_uh)
            .fold(0.0f64, f64::max);
        pass &= worst <= 2.0;
        parts.push(format!("k={k}: max err_L2_tuh/err_L2_uh {worst:.4}"));
    }
    parts.push("tol 2".into());
    Outcome {
        pass,
        detail: parts.join("; "),
    }
}

fn stability() -> Outcome {
    let mat = unit();
    let mut pass = true;
    let mut parts = Vec::new();
    for k in KS {
        let spread = |n: usize| {
            let mesh = Mesh::<f64>::structured_triangular(n).unwrap();
            let ops: Vec<_> = (0..mesh.elements.len())
                .map(|e| ElementOperators::new(&mesh, e, k).unwrap())
                .collect();
            let (r1, r2) = sampled_stability_ratios(&ops, &mat, 1000, 7);
            (r1.spread(), r2.spread())
        };
        let (a4, b4) = spread(4);
        let (a32, b32) = spread(32);
        let (ga, gb) = (a32 / a4, b32 / b4);
        pass &= ga < 1.1 && gb < 1.1;
        parts.push(format!(
            "k={k}: stability {a4:.3}->{a32:.3}, equivalence {b4:.3}->{b32:.3}"
        ));
    }
    Outcome {
        pass,
        detail: parts.join("; "),
    }
}

fn lambda_robustness() -> Outcome {
    let errs: Vec<f64> = [1.0, 1e3, 1e6]
        .into_iter()
        .map(|lambda| {
            let mat = Material::new(1.0, lambda).unwrap();
            run_case(1, 16, mat, &Case::Manufactured, true)
                .unwrap()
                .2
                .errors
                .l2_uh
        })
        .collect();
    let max = errs.iter().cloned().fold(0.0, f64::max);
    let min = errs.iter().cloned().fold(f64::INFINITY, f64::min);
    Outcome {
        pass: max / min < 10.0,
        detail: format!(
            "cell L2 errors {:.3e}, {:.3e}, {:.3e}; ratio {:.3} (tol 10)",
            errs[0],
            errs[1],
            errs[2],
            max / min
        ),
    }
}

fn condensation() -> Outcome {
    let mat = unit();
    let case = Case::<f64>::Manufactured;
    let disc = Discretization::new(Mesh::structured_triangular(4).unwrap(), 2, mat).unwrap();
    let f = |p: &Point<f64>| case.f(p, &mat);
    let g = |p: &Point<f64>| case.g(p);
    let a = solve(&disc, &f, &g, true).unwrap();
    let b = solve(&disc, &f, &g, false).unwrap();
    let worst = a
        .cells
        .iter()
        .zip(&b.cells)
        .chain(a.faces.iter().zip(&b.faces))
        .map(|(x, y)| (x - y).amax())
        .fold(0.0f64, f64::max);
    Outcome {
        pass: worst <= 1e-11,
        detail: format!("max DOF difference {worst:.2e} (tol 1e-11)"),
    }
}

fn main() {
    let mut failures = 0;
    let mut run = |id: usize, name: &str, f: &mut dyn FnMut() -> Outcome| {
        let t = Instant::now();
        let o = f();
        report(id, name, t, &o);
        if !o.pass {
            failures += 1;
        }
    };
    run(1, "representation identity", &mut representation_identity);
    let t = Instant::now();
    let runs = manufactured_runs();
    println!(
        "     manufactured sweep solved in {:.1}s",
        t.elapsed().as_secs_f64()
    );
    let (eq, tr) = local_equilibrium(&runs);
    run(2, "local equilibrium", &mut || Outcome {
        pass: eq.pass,
        detail: eq.detail.clone(),
    });
    run(3, "traction balance", &mut || Outcome {
        pass: tr.pass,
        detail: tr.detail.clone(),
    });
    run(4, "polynomial exactness", &mut polynomial_exactness);
    run(5, "convergence rates", &mut || convergence(&runs));
    run(6, "post-processed convergence", &mut || postprocessed(&runs));
    run(7, "cell-unknown insensitivity", &mut || cell_insensitivity(&runs));
    run(8, "stability ratios", &mut stability);
    run(9, "lambda robustness", &mut lambda_robustness);
    run(10, "condensation exactness", &mut condensation);
    if failures > 0 {
        println!("{failures} criteria failed");
        std::process::exit(1);
    }
    println!("all criteria passed");
}
