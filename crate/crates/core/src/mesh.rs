//! Polygonal meshes of planar domains.
//!
//! Elements are convex polygons stored as counterclockwise vertex loops.
//! Every edge becomes one [`Face`] with a single global unit normal; each
//! element records the sign relating that normal to its own outward normal,
//! so the two sides of an interface always see exactly opposite normals.
//!
//! Faces are numbered by increasing midpoint `y`, then midpoint `x`. This
//! fixes the ordering of face unknowns downstream.
//!
//! # Text format
//!
//! ```text
//! # comments start with '#'
//! vertices N
//! x0 y0
//! ...
//! elements M
//! p v0 v1 ... v{p-1}
//! ...
//! ```
//!
//! Tokens are whitespace separated; line breaks carry no meaning beyond
//! terminating comments.

use std::cmp::Ordering;
use std::collections::HashMap;
use std::fmt::Write as _;
use std::io::{Read, Write};

use nalgebra as na;

use crate::error::MeshError;
use crate::scalar::{lit, Real};

pub type Point<T> = na::Point2<T>;
pub type Vec2<T> = na::Vector2<T>;

#[derive(Debug, Clone, PartialEq)]
pub struct Face<T: Real> {
    /// Endpoints, oriented as traversed by the owner element.
    pub vertices: [usize; 2],
    pub length: T,
    pub midpoint: Point<T>,
    /// Unit tangent from `vertices[0]` to `vertices[1]`.
    pub tangent: Vec2<T>,
    /// Global unit normal; outward for the owner.
    pub normal: Vec2<T>,
    pub owner: usize,
    pub neighbor: Option<usize>,
}

impl<T: Real> Face<T> {
    pub fn is_boundary(&self) -> bool {
        self.neighbor.is_none()
    }

    /// Arc-length coordinate of `p` measured from the midpoint.
    pub fn arc_coordinate(&self, p: &Point<T>) -> T {
        (p - self.midpoint).dot(&self.tangent)
    }

    pub fn point_at(&self, s: T) -> Point<T> {
        self.midpoint + self.tangent * s
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Element<T: Real> {
    /// Counterclockwise vertex loop.
    pub vertices: Vec<usize>,
    /// `faces[i]` joins `vertices[i]` and `vertices[i + 1]`.
    pub faces: Vec<usize>,
    /// `+1` when the global face normal points out of this element.
    pub orientations: Vec<i8>,
    pub area: T,
    pub centroid: Point<T>,
    pub diameter: T,
}

impl<T: Real> Element<T> {
    pub fn n_faces(&self) -> usize {
        self.faces.len()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Mesh<T: Real> {
    pub vertices: Vec<Point<T>>,
    pub faces: Vec<Face<T>>,
    pub elements: Vec<Element<T>>,
    /// Largest element diameter.
    pub h: T,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ElementGeometry<T: Real> {
    pub diameter: T,
    pub area: T,
    pub centroid: Point<T>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FaceGeometry<T: Real> {
    pub length: T,
    pub normal: Vec2<T>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GeometryReport<T: Real> {
    pub elements: Vec<ElementGeometry<T>>,
    pub faces: Vec<FaceGeometry<T>>,
}

fn signed_area<T: Real>(pts: &[Point<T>]) -> T {
    let n = pts.len();
    let mut twice = T::zero();
    for i in 0..n {
        let a = pts[i];
        let b = pts[(i + 1) % n];
        twice += a.x * b.y - b.x * a.y;
    }
    twice * lit(0.5)
}

fn polygon_centroid<T: Real>(pts: &[Point<T>], area: T) -> Point<T> {
    let n = pts.len();
    let (mut cx, mut cy) = (T::zero(), T::zero());
    for i in 0..n {
        let a = pts[i];
        let b = pts[(i + 1) % n];
        let cross = a.x * b.y - b.x * a.y;
        cx += (a.x + b.x) * cross;
        cy += (a.y + b.y) * cross;
    }
    let scale = T::one() / (lit::<T>(6.0) * area);
    Point::new(cx * scale, cy * scale)
}

fn diameter<T: Real>(pts: &[Point<T>]) -> T {
    let mut d = T::zero();
    for (i, a) in pts.iter().enumerate() {
        for b in &pts[i + 1..] {
            d = d.max(na::distance(a, b));
        }
    }
    d
}

impl<T: Real> Mesh<T> {
    /// Unit square cut into `n x n` squares, each split along its
    /// lower-left to upper-right diagonal.
    pub fn structured_triangular(n: usize) -> Result<Self, MeshError> {
        if n == 0 {
            return Err(MeshError::ZeroSubdivisions);
        }
        let nn = T::from_count(n);
        let mut vertices = Vec::with_capacity((n + 1) * (n + 1));
        for j in 0..=n {
            for i in 0..=n {
                vertices.push(Point::new(T::from_count(i) / nn, T::from_count(j) / nn));
            }
        }
        let id = |i: usize, j: usize| j * (n + 1) + i;
        let mut polygons = Vec::with_capacity(2 * n * n);
        for j in 0..n {
            for i in 0..n {
                let (p00, p10, p11, p01) = (id(i, j), id(i + 1, j), id(i + 1, j + 1), id(i, j + 1));
                polygons.push(vec![p00, p10, p11]);
                polygons.push(vec![p00, p11, p01]);
            }
        }
        Self::from_polygons(vertices, polygons)
    }

    /// Builds topology and geometry from vertex coordinates and
    /// counterclockwise polygons.
    pub fn from_polygons(vertices: Vec<Point<T>>, polygons: Vec<Vec<usize>>) -> Result<Self, MeshError> {
        let nv = vertices.len();
        struct Edge {
            a: usize,
            b: usize,
            owner: usize,
            neighbor: Option<usize>,
        }
        let mut edges: Vec<Edge> = Vec::new();
        let mut lookup: HashMap<(usize, usize), usize> = HashMap::new();
        let mut elements = Vec::with_capacity(polygons.len());
        // local edges of each element as (edge id, sign)
        let mut local: Vec<Vec<(usize, i8)>> = Vec::with_capacity(polygons.len());

        for (e, poly) in polygons.into_iter().enumerate() {
            if poly.len() < 3 {
                return Err(MeshError::TooFewVertices {
                    element: e,
                    count: poly.len(),
                });
            }
            if let Some(&v) = poly.iter().find(|&&v| v >= nv) {
                return Err(MeshError::DanglingVertex {
                    element: e,
                    vertex: v,
                    count: nv,
                });
            }
            let mut sorted = poly.clone();
            sorted.sort_unstable();
            if sorted.windows(2).any(|w| w[0] == w[1]) {
                return Err(MeshError::RepeatedVertex { element: e });
            }
            let pts: Vec<Point<T>> = poly.iter().map(|&v| vertices[v]).collect();
            let area = signed_area(&pts);
            let perimeter2 = (0..pts.len())
                .map(|i| na::distance_squared(&pts[i], &pts[(i + 1) % pts.len()]))
                .fold(T::zero(), |acc, x| acc + x);
            let tiny = T::EPS * lit(16.0) * perimeter2;
            if area < -tiny {
                return Err(MeshError::Orientation {
                    element: e,
                    area: area.as_f64(),
                });
            }
            if area <= tiny {
                return Err(MeshError::Degenerate {
                    element: e,
                    area: area.as_f64(),
                });
            }
            let mut loc = Vec::with_capacity(poly.len());
            for i in 0..poly.len() {
                let (a, b) = (poly[i], poly[(i + 1) % poly.len()]);
                let key = (a.min(b), a.max(b));
                match lookup.get(&key) {
                    None => {
                        lookup.insert(key, edges.len());
                        loc.push((edges.len(), 1));
                        edges.push(Edge {
                            a,
                            b,
                            owner: e,
                            neighbor: None,
                        });
                    }
                    Some(&id) => {
                        let edge = &mut edges[id];
                        if edge.neighbor.is_some() {
                            return Err(MeshError::OverSharedFace { a: key.0, b: key.1 });
                        }
                        if edge.a == a {
                            return Err(MeshError::InconsistentOrientation { a: key.0, b: key.1 });
                        }
                        edge.neighbor = Some(e);
                        loc.push((id, -1));
                    }
                }
            }
            local.push(loc);
            let centroid = polygon_centroid(&pts, area);
            elements.push(Element {
                vertices: poly,
                faces: Vec::new(),
                orientations: Vec::new(),
                area,
                centroid,
                diameter: diameter(&pts),
            });
        }

        let mut faces: Vec<Face<T>> = edges
            .iter()
            .map(|edge| {
                let pa = vertices[edge.a];
                let pb = vertices[edge.b];
                let d = pb - pa;
                let length = d.norm();
                let tangent = d / length;
                Face {
                    vertices: [edge.a, edge.b],
                    length,
                    midpoint: na::center(&pa, &pb),
                    tangent,
                    normal: Vec2::new(tangent.y, -tangent.x),
                    owner: edge.owner,
                    neighbor: edge.neighbor,
                }
            })
            .collect();

        let mut order: Vec<usize> = (0..faces.len()).collect();
        order.sort_by(|&i, &j| {
            let (fi, fj) = (&faces[i], &faces[j]);
            fi.midpoint
                .y
                .partial_cmp(&fj.midpoint.y)
                .unwrap_or(Ordering::Equal)
                .then(
                    fi.midpoint
                        .x
                        .partial_cmp(&fj.midpoint.x)
                        .unwrap_or(Ordering::Equal),
                )
                .then(fi.vertices.cmp(&fj.vertices))
        });
        let mut renumber = vec![0; faces.len()];
        for (new, &old) in order.iter().enumerate() {
            renumber[old] = new;
        }
        let mut slots: Vec<Option<Face<T>>> = faces.drain(..).map(Some).collect();
        let faces: Vec<Face<T>> = order.iter().map(|&old| slots[old].take().unwrap()).collect();

        for (element, loc) in elements.iter_mut().zip(local) {
            element.faces = loc.iter().map(|&(id, _)| renumber[id]).collect();
            element.orientations = loc.iter().map(|&(_, s)| s).collect();
        }

        let h = elements
            .iter()
            .map(|e| e.diameter)
            .fold(T::zero(), |a, b| a.max(b));
        Ok(Mesh {
            vertices,
            faces,
            elements,
            h,
        })
    }

    /// Outward unit normal of local face `i` of element `e`.
    pub fn outward_normal(&self, e: usize, i: usize) -> Vec2<T> {
        let el = &self.elements[e];
        let n = self.faces[el.faces[i]].normal;
        if el.orientations[i] > 0 {
            n
        } else {
            -n
        }
    }

    pub fn element_points(&self, e: usize) -> Vec<Point<T>> {
        self.elements[e]
            .vertices
            .iter()
            .map(|&v| self.vertices[v])
            .collect()
    }

    pub fn n_interior_faces(&self) -> usize {
        self.faces.iter().filter(|f| !f.is_boundary()).count()
    }

    pub fn total_area(&self) -> T {
        self.elements.iter().fold(T::zero(), |acc, e| acc + e.area)
    }

    pub fn perimeter(&self, e: usize) -> T {
        self.elements[e]
            .faces
            .iter()
            .fold(T::zero(), |acc, &f| acc + self.faces[f].length)
    }

    /// Whether element `e` is a convex polygon.
    pub fn is_convex(&self, e: usize) -> bool {
        let pts = self.element_points(e);
        let n = pts.len();
        let scale = self.elements[e].diameter * self.elements[e].diameter;
        (0..n).all(|i| {
            let a = pts[i];
            let b = pts[(i + 1) % n];
            let c = pts[(i + 2) % n];
            let u = b - a;
            let v = c - b;
            u.x * v.y - u.y * v.x >= -T::EPS * lit(16.0) * scale
        })
    }

    pub fn geometry_report(&self) -> GeometryReport<T> {
        GeometryReport {
            elements: self
                .elements
                .iter()
                .map(|e| ElementGeometry {
                    diameter: e.diameter,
                    area: e.area,
                    centroid: e.centroid,
                })
                .collect(),
            faces: self
                .faces
                .iter()
                .map(|f| FaceGeometry {
                    length: f.length,
                    normal: f.normal,
                })
                .collect(),
        }
    }

    /// Parses the plain-text mesh format.
    pub fn parse(text: &str) -> Result<Self, MeshError> {
        let mut tokens = Tokens::new(text);
        tokens.keyword("vertices")?;
        let nv = tokens.count()?;
        let mut vertices = Vec::with_capacity(nv);
        for _ in 0..nv {
            let x = tokens.real::<T>()?;
            let y = tokens.real::<T>()?;
            vertices.push(Point::new(x, y));
        }
        tokens.keyword("elements")?;
        let ne = tokens.count()?;
        let mut polygons = Vec::with_capacity(ne);
        for _ in 0..ne {
            let p = tokens.count()?;
            let mut poly = Vec::with_capacity(p);
            for _ in 0..p {
                poly.push(tokens.count()?);
            }
            polygons.push(poly);
        }
        if let Some((line, tok)) = tokens.next() {
            return Err(MeshError::Parse {
                line,
                message: format!("unexpected trailing token '{tok}'"),
            });
        }
        Self::from_polygons(vertices, polygons)
    }

    pub fn load<R: Read>(mut reader: R) -> Result<Self, crate::Error> {
        let mut text = String::new();
        reader.read_to_string(&mut text)?;
        Ok(Self::parse(&text)?)
    }

    /// Text serialization; coordinates use 17 significant digits so that
    /// [`Mesh::parse`] reproduces them exactly.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "vertices {}", self.vertices.len());
        for v in &self.vertices {
            let _ = writeln!(out, "{:.16e} {:.16e}", v.x, v.y);
        }
        let _ = writeln!(out, "elements {}", self.elements.len());
        for e in &self.elements {
            let _ = write!(out, "{}", e.vertices.len());
            for v in &e.vertices {
                let _ = write!(out, " {v}");
            }
            out.push('\n');
        }
        out
    }

    pub fn write<W: Write>(&self, mut writer: W) -> std::io::Result<()> {
        writer.write_all(self.to_text().as_bytes())
    }
}

struct Tokens<'a> {
    inner: Box<dyn Iterator<Item = (usize, &'a str)> + 'a>,
    last_line: usize,
}

impl<'a> Tokens<'a> {
    fn new(text: &'a str) -> Self {
        let inner = text.lines().enumerate().flat_map(|(i, line)| {
            let content = line.split('#').next().unwrap_or("");
            content.split_whitespace().map(move |t| (i + 1, t))
        });
        Tokens {
            inner: Box::new(inner),
            last_line: 0,
        }
    }

    fn next(&mut self) -> Option<(usize, &'a str)> {
        let t = self.inner.next();
        if let Some((line, _)) = t {
            self.last_line = line;
        }
        t
    }

    fn expect(&mut self, what: &str) -> Result<(usize, &'a str), MeshError> {
        self.next().ok_or_else(|| MeshError::Parse {
            line: self.last_line,
            message: format!("unexpected end of input, expected {what}"),
        })
    }

    fn keyword(&mut self, kw: &str) -> Result<(), MeshError> {
        let (line, tok) = self.expect(kw)?;
        if tok != kw {
            return Err(MeshError::Parse {
                line,
                message: format!("expected '{kw}', found '{tok}'"),
            });
        }
        Ok(())
    }

    fn count(&mut self) -> Result<usize, MeshError> {
        let (line, tok) = self.expect("a non-negative integer")?;
        tok.parse().map_err(|_| MeshError::Parse {
            line,
            message: format!("expected a non-negative integer, found '{tok}'"),
        })
    }

    fn real<T: Real>(&mut self) -> Result<T, MeshError> {
        let (line, tok) = self.expect("a coordinate")?;
        let value: f64 = tok.parse().map_err(|_| MeshError::Parse {
            line,
            message: format!("expected a number, found '{tok}'"),
        })?;
        if !value.is_finite() {
            return Err(MeshError::Parse {
                line,
                message: format!("non-finite coordinate '{tok}'"),
            });
        }
        Ok(T::lit(value))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn unit_square() -> Mesh<f64> {
        Mesh::parse("vertices 4\n0 0\n1 0\n1 1\n0 1\nelements 1\n4 0 1 2 3\n").unwrap()
    }

    #[test]
    fn rejects_zero_subdivisions() {
        assert_eq!(
            Mesh::<f64>::structured_triangular(0),
            Err(MeshError::ZeroSubdivisions)
        );
    }

    #[test]
    fn single_square_counts() {
        let m = Mesh::<f64>::structured_triangular(1).unwrap();
        assert_eq!(m.elements.len(), 2);
        assert_eq!(m.faces.len(), 5);
        assert_eq!(m.n_interior_faces(), 1);
    }

    #[test]
    fn euler_characteristic_n2() {
        let m = Mesh::<f64>::structured_triangular(2).unwrap();
        assert_eq!((m.vertices.len(), m.faces.len(), m.elements.len()), (9, 16, 8));
        let chi = m.vertices.len() as i64 - m.faces.len() as i64 + m.elements.len() as i64;
        assert_eq!(chi, 1);
    }

    #[test]
    fn mesh_size_is_diagonal() {
        for n in [1, 3, 4, 7] {
            let m = Mesh::<f64>::structured_triangular(n).unwrap();
            assert!((m.h - 2f64.sqrt() / n as f64).abs() < 1e-15);
        }
    }

    #[test]
    fn closed_boundaries_and_opposite_normals() {
        for n in [1, 2, 5, 8] {
            let m = Mesh::<f64>::structured_triangular(n).unwrap();
            for (e, el) in m.elements.iter().enumerate() {
                let mut sum = Vec2::zeros();
                for (i, &f) in el.faces.iter().enumerate() {
                    sum += m.outward_normal(e, i) * m.faces[f].length;
                    assert!(m.faces[f].length <= el.diameter);
                }
                assert!(sum.norm() <= 1e-12 * m.perimeter(e));
            }
            for (fid, f) in m.faces.iter().enumerate() {
                assert!((f.normal.norm() - 1.0).abs() < 1e-14);
                if let Some(nb) = f.neighbor {
                    let i1 = m.elements[f.owner].faces.iter().position(|&x| x == fid).unwrap();
                    let i2 = m.elements[nb].faces.iter().position(|&x| x == fid).unwrap();
                    assert_eq!(
                        m.elements[f.owner].orientations[i1],
                        -m.elements[nb].orientations[i2]
                    );
                    assert_eq!(m.outward_normal(f.owner, i1), -m.outward_normal(nb, i2));
                }
            }
            assert!((m.total_area() - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn faces_sorted_by_midpoint() {
        let m = Mesh::<f64>::structured_triangular(4).unwrap();
        for w in m.faces.windows(2) {
            let (a, b) = (&w[0].midpoint, &w[1].midpoint);
            assert!(a.y < b.y || (a.y == b.y && a.x < b.x));
        }
    }

    #[test]
    fn right_triangle_geometry() {
        let m = Mesh::<f64>::parse("vertices 3\n0 0\n1 0\n0 1\nelements 1\n3 0 1 2").unwrap();
        let rep = m.geometry_report();
        assert!((rep.elements[0].diameter - 2f64.sqrt()).abs() < 1e-15);
        assert!((rep.elements[0].area - 0.5).abs() < 1e-15);
        let c = rep.elements[0].centroid;
        assert!((c.x - 1.0 / 3.0).abs() < 1e-15 && (c.y - 1.0 / 3.0).abs() < 1e-15);
        // bottom face, owner lies above it
        let f = m.faces.iter().position(|f| f.midpoint.y == 0.0).unwrap();
        let i = m.elements[0].faces.iter().position(|&x| x == f).unwrap();
        assert_eq!(m.outward_normal(0, i), Vec2::new(0.0, -1.0));
        assert_eq!(rep.faces[f].length, 1.0);
    }

    #[test]
    fn quadrilateral_element() {
        let m = unit_square();
        assert_eq!(m.elements.len(), 1);
        assert_eq!(m.faces.len(), 4);
        assert!(m.faces.iter().all(|f| f.is_boundary()));
        assert!((m.elements[0].area - 1.0).abs() < 1e-15);
        assert!(m.is_convex(0));
    }

    #[test]
    fn round_trip_text() {
        let m = Mesh::<f64>::structured_triangular(2).unwrap();
        let back = Mesh::<f64>::parse(&m.to_text()).unwrap();
        assert_eq!(m, back);
    }

    #[test]
    fn comments_are_ignored() {
        let text = "# a square\nvertices 4 # count\n0 0\n1 0\n1 1\n0 1\n\nelements 1\n4 0 1 2 3 # quad\n";
        assert_eq!(Mesh::<f64>::parse(text).unwrap(), unit_square());
    }

    #[test]
    fn clockwise_rejected() {
        let err = Mesh::<f64>::parse("vertices 3\n0 0\n1 0\n0 1\nelements 1\n3 0 2 1").unwrap_err();
        assert!(matches!(err, MeshError::Orientation { element: 0, .. }));
    }

    #[test]
    fn malformed_inputs() {
        let cases = [
            "vertices 3\n0 0\n1 0\nelements 1\n3 0 1 2",
            "vertices x\n",
            "vertices 3\n0 0\n1 0\n0 1\nelements 2\n3 0 1 2",
            "vertices 3\n0 0\n1 0\n0 1\nelements 1\n3 0 1 2 9",
            "points 3\n",
        ];
        for c in cases {
            assert!(
                matches!(Mesh::<f64>::parse(c), Err(MeshError::Parse { .. })),
                "{c}"
            );
        }
        assert!(matches!(
            Mesh::<f64>::parse("vertices 3\n0 0\n1 0\n0 1\nelements 1\n3 0 1 5"),
            Err(MeshError::DanglingVertex { vertex: 5, .. })
        ));
        assert!(matches!(
            Mesh::<f64>::parse("vertices 3\n0 0\n1 0\n2 0\nelements 1\n3 0 1 2"),
            Err(MeshError::Degenerate { .. })
        ));
    }

    #[test]
    fn over_shared_face_rejected() {
        // three triangles hanging off the edge (0, 1)
        let text = "vertices 5\n0 0\n1 0\n0.5 1\n0.5 -1\n0.5 2\n\
                    elements 3\n3 0 1 2\n3 1 0 3\n3 0 1 4";
        assert!(matches!(
            Mesh::<f64>::parse(text),
            Err(MeshError::OverSharedFace { .. }) | Err(MeshError::InconsistentOrientation { .. })
        ));
        let text = "vertices 4\n0 0\n1 0\n0.5 1\n0.5 2\nelements 2\n3 0 1 2\n3 0 1 3";
        assert!(matches!(
            Mesh::<f64>::parse(text),
            Err(MeshError::InconsistentOrientation { .. })
        ));
    }
}
