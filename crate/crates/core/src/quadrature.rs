//! Gauss rules on segments, triangles and convex polygons.

use crate::error::{Error, Result};
use crate::mesh::{Face, Mesh, Point};
use crate::scalar::{lit, Real};

#[derive(Debug, Clone, PartialEq)]
pub struct QuadratureRule<T: Real> {
    pub points: Vec<Point<T>>,
    pub weights: Vec<T>,
    /// Polynomials up to this total degree are integrated exactly.
    pub degree: usize,
}

impl<T: Real> QuadratureRule<T> {
    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn measure(&self) -> T {
        self.weights.iter().fold(T::zero(), |a, &w| a + w)
    }

    pub fn integrate<F: FnMut(&Point<T>) -> T>(&self, mut f: F) -> T {
        self.points
            .iter()
            .zip(&self.weights)
            .fold(T::zero(), |acc, (p, &w)| acc + w * f(p))
    }

    pub fn iter(&self) -> impl Iterator<Item = (&Point<T>, T)> {
        self.points.iter().zip(self.weights.iter().copied())
    }
}

/// Gauss-Legendre nodes and weights on `[-1, 1]`, exact to degree `2n - 1`.
pub fn gauss_legendre(n: usize) -> (Vec<f64>, Vec<f64>) {
    assert!(n > 0);
    if n == 1 {
        return (vec![0.0], vec![2.0]);
    }
    let mut nodes = vec![0.0; n];
    let mut weights = vec![0.0; n];
    for i in 0..n.div_ceil(2) {
        let mut x = (std::f64::consts::PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
        let mut dp = 1.0;
        for _ in 0..100 {
            // three-term recurrence for P_n and P_{n-1}
            let (mut p0, mut p1) = (1.0, x);
            for j in 2..=n {
                let p2 = ((2 * j - 1) as f64 * x * p1 - (j - 1) as f64 * p0) / j as f64;
                p0 = p1;
                p1 = p2;
            }
            dp = n as f64 * (x * p1 - p0) / (x * x - 1.0);
            let dx = p1 / dp;
            x -= dx;
            if dx.abs() < 1e-16 {
                break;
            }
        }
        nodes[i] = -x;
        nodes[n - 1 - i] = x;
        let w = 2.0 / ((1.0 - x * x) * dp * dp);
        weights[i] = w;
        weights[n - 1 - i] = w;
    }
    (nodes, weights)
}

/// Rule on the segment `a`-`b`, exact to degree `q` in the arc length.
pub fn segment<T: Real>(a: &Point<T>, b: &Point<T>, q: usize) -> QuadratureRule<T> {
    let n = q / 2 + 1;
    let (xs, ws) = gauss_legendre(n);
    let half = (b - a) * lit::<T>(0.5);
    let mid = a + half;
    let len = (b - a).norm();
    let points = xs.iter().map(|&x| mid + half * T::lit(x)).collect();
    let weights = ws.iter().map(|&w| T::lit(w) * len * lit(0.5)).collect();
    QuadratureRule {
        points,
        weights,
        degree: q,
    }
}

pub fn segment_rule<T: Real>(face: &Face<T>, q: usize) -> QuadratureRule<T> {
    let half = face.length * lit(0.5);
    segment(&face.point_at(-half), &face.point_at(half), q)
}

/// Collapsed-coordinate rule on the reference triangle `(0,0), (1,0), (0,1)`.
pub fn reference_triangle_rule(q: usize) -> QuadratureRule<f64> {
    // the collapsed direction carries the Jacobian factor (1 - u)
    let nu = (q + 3) / 2;
    let nv = q / 2 + 1;
    let (xu, wu) = gauss_legendre(nu);
    let (xv, wv) = gauss_legendre(nv);
    let mut points = Vec::with_capacity(nu * nv);
    let mut weights = Vec::with_capacity(nu * nv);
    for (&a, &wa) in xu.iter().zip(&wu) {
        let u = 0.5 * (a + 1.0);
        for (&b, &wb) in xv.iter().zip(&wv) {
            let v = 0.5 * (b + 1.0);
            points.push(Point::new(u, v * (1.0 - u)));
            weights.push(0.25 * wa * wb * (1.0 - u));
        }
    }
    QuadratureRule {
        points,
        weights,
        degree: q,
    }
}

pub fn triangle_rule<T: Real>(tri: &[Point<T>; 3], q: usize) -> Result<QuadratureRule<T>> {
    let e1 = tri[1] - tri[0];
    let e2 = tri[2] - tri[0];
    let jac = e1.x * e2.y - e1.y * e2.x;
    let scale = e1.norm_squared().max(e2.norm_squared());
    if jac.abs() <= T::EPS * lit(16.0) * scale {
        return Err(Error::DegenerateTriangle {
            area: (jac * lit(0.5)).as_f64(),
        });
    }
    let jac = jac.abs();
    let reference = reference_triangle_rule(q);
    let points = reference
        .points
        .iter()
        .map(|p| tri[0] + e1 * T::lit(p.x) + e2 * T::lit(p.y))
        .collect();
    let weights = reference.weights.iter().map(|&w| T::lit(w) * jac).collect();
    Ok(QuadratureRule {
        points,
        weights,
        degree: q,
    })
}

/// Rule on a convex element: the triangle rule itself for triangles, a fan
/// of triangle rules around the centroid otherwise.
pub fn element_rule<T: Real>(mesh: &Mesh<T>, e: usize, q: usize) -> Result<QuadratureRule<T>> {
    if !mesh.is_convex(e) {
        return Err(Error::NonConvex { element: e });
    }
    let pts = mesh.element_points(e);
    if pts.len() == 3 {
        return triangle_rule(&[pts[0], pts[1], pts[2]], q);
    }
    let c = mesh.elements[e].centroid;
    let mut rule = QuadratureRule {
        points: Vec::new(),
        weights: Vec::new(),
        degree: q,
    };
    for i in 0..pts.len() {
        let sub = triangle_rule(&[c, pts[i], pts[(i + 1) % pts.len()]], q)?;
        rule.points.extend(sub.points);
        rule.weights.extend(sub.weights);
    }
    Ok(rule)
}
