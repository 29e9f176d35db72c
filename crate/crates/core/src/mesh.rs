//! Triangulated computational domain with tagged boundary segments.
//!
//! The reference domain is the rectangle [-0.04, 0.04] × [0, 0.12] m joined
//! to a circular cap below x2 = 0. The cap is an arc of the circle with
//! center (0, 0.03) m and radius 0.05 m, which meets the rectangle corners
//! exactly because √(0.05² − 0.03²) = 0.04.

use std::collections::HashMap;
use std::fmt;
use std::fs;
use std::io::Write as _;
use std::path::Path;
use std::str::FromStr;

use spade::{ConstrainedDelaunayTriangulation, Point2, Triangulation};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum MeshError {
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("invalid mesh: {0}")]
    Validation(String),
    #[error("target edge length {0} m is outside (0, 0.02]")]
    InvalidTarget(f64),
    #[error("target edge length {h} m would need about {estimate} triangles (limit {limit})")]
    Resource { h: f64, estimate: usize, limit: usize },
    #[error("triangulation failed: {0}")]
    Triangulation(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, MeshError>;

/// Boundary segment labels: Γ_a is the top, Γ_b the curved bottom.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum BoundaryTag {
    GammaA,
    GammaB,
    Wall,
}

impl BoundaryTag {
    pub const ALL: [BoundaryTag; 3] = [BoundaryTag::GammaA, BoundaryTag::GammaB, BoundaryTag::Wall];

    pub fn as_str(&self) -> &'static str {
        match self {
            BoundaryTag::GammaA => "GammaA",
            BoundaryTag::GammaB => "GammaB",
            BoundaryTag::Wall => "Wall",
        }
    }
}

impl fmt::Display for BoundaryTag {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for BoundaryTag {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s {
            "GammaA" => Ok(BoundaryTag::GammaA),
            "GammaB" => Ok(BoundaryTag::GammaB),
            "Wall" => Ok(BoundaryTag::Wall),
            other => Err(format!("unknown boundary tag `{other}`")),
        }
    }
}

/// A boundary edge, oriented counterclockwise with respect to its triangle so
/// that `(dy, -dx)` is the outward normal.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct BoundaryEdge {
    pub vertices: [usize; 2],
    pub tag: BoundaryTag,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Mesh {
    vertices: Vec<[f64; 2]>,
    triangles: Vec<[usize; 3]>,
    boundary: Vec<BoundaryEdge>,
}

fn signed_area(a: [f64; 2], b: [f64; 2], c: [f64; 2]) -> f64 {
    0.5 * ((b[0] - a[0]) * (c[1] - a[1]) - (c[0] - a[0]) * (b[1] - a[1]))
}

fn edge_key(a: usize, b: usize) -> (usize, usize) {
    if a < b {
        (a, b)
    } else {
        (b, a)
    }
}

impl Mesh {
    /// Builds a mesh and checks every structural invariant: indices in range,
    /// positive triangle areas, and tagged edges coinciding exactly with the
    /// topological boundary (each tagged once). Boundary edges are reoriented
    /// to follow their triangle.
    pub fn new(
        vertices: Vec<[f64; 2]>,
        triangles: Vec<[usize; 3]>,
        boundary: Vec<BoundaryEdge>,
    ) -> Result<Self> {
        let nv = vertices.len();
        if nv < 3 || triangles.is_empty() {
            return Err(MeshError::Validation("mesh needs at least one triangle".into()));
        }
        if vertices.iter().any(|v| !v[0].is_finite() || !v[1].is_finite()) {
            return Err(MeshError::Validation("non-finite vertex coordinate".into()));
        }
        // directed edge of each triangle, keyed by the undirected pair
        let mut edge_owner: HashMap<(usize, usize), (usize, [usize; 2])> = HashMap::new();
        for (t, tri) in triangles.iter().enumerate() {
            if let Some(&bad) = tri.iter().find(|&&i| i >= nv) {
                return Err(MeshError::Validation(format!(
                    "triangle {t} references vertex {bad}, but there are only {nv} vertices"
                )));
            }
            let area = signed_area(vertices[tri[0]], vertices[tri[1]], vertices[tri[2]]);
            if !(area > 0.0) {
                return Err(MeshError::Validation(format!(
                    "triangle {t} has non-positive signed area {area:e}"
                )));
            }
            for k in 0..3 {
                let (a, b) = (tri[k], tri[(k + 1) % 3]);
                let key = edge_key(a, b);
                match edge_owner.get_mut(&key) {
                    None => {
                        edge_owner.insert(key, (1, [a, b]));
                    }
                    Some(entry) => entry.0 += 1,
                }
            }
        }
        if let Some((k, _)) = edge_owner.iter().find(|(_, v)| v.0 > 2) {
            return Err(MeshError::Validation(format!(
                "edge {k:?} is shared by more than two triangles"
            )));
        }
        let topo_boundary: HashMap<(usize, usize), [usize; 2]> = edge_owner
            .iter()
            .filter(|(_, v)| v.0 == 1)
            .map(|(k, v)| (*k, v.1))
            .collect();
        let mut seen = HashMap::new();
        let mut oriented = Vec::with_capacity(boundary.len());
        for e in &boundary {
            let [a, b] = e.vertices;
            if a >= nv || b >= nv {
                return Err(MeshError::Validation(format!(
                    "boundary edge ({a}, {b}) references a vertex out of range"
                )));
            }
            let key = edge_key(a, b);
            let Some(dir) = topo_boundary.get(&key) else {
                return Err(MeshError::Validation(format!(
                    "tagged edge ({a}, {b}) is not a boundary edge of exactly one triangle"
                )));
            };
            if seen.insert(key, e.tag).is_some() {
                return Err(MeshError::Validation(format!(
                    "boundary edge ({a}, {b}) is tagged twice"
                )));
            }
            oriented.push(BoundaryEdge {
                vertices: *dir,
                tag: e.tag,
            });
        }
        if seen.len() != topo_boundary.len() {
            return Err(MeshError::Validation(format!(
                "{} boundary edges are untagged",
                topo_boundary.len() - seen.len()
            )));
        }
        Ok(Mesh {
            vertices,
            triangles,
            boundary: oriented,
        })
    }

    pub fn vertices(&self) -> &[[f64; 2]] {
        &self.vertices
    }

    pub fn triangles(&self) -> &[[usize; 3]] {
        &self.triangles
    }

    pub fn boundary_edges(&self) -> &[BoundaryEdge] {
        &self.boundary
    }

    pub fn num_vertices(&self) -> usize {
        self.vertices.len()
    }

    pub fn num_triangles(&self) -> usize {
        self.triangles.len()
    }

    pub fn triangle_area(&self, t: usize) -> f64 {
        let [a, b, c] = self.triangles[t];
        signed_area(self.vertices[a], self.vertices[b], self.vertices[c])
    }

    pub fn total_area(&self) -> f64 {
        (0..self.triangles.len()).map(|t| self.triangle_area(t)).sum()
    }

    pub fn centroid(&self, t: usize) -> [f64; 2] {
        let [a, b, c] = self.triangles[t];
        let (pa, pb, pc) = (self.vertices[a], self.vertices[b], self.vertices[c]);
        [(pa[0] + pb[0] + pc[0]) / 3.0, (pa[1] + pb[1] + pc[1]) / 3.0]
    }

    pub fn has_tag(&self, tag: BoundaryTag) -> bool {
        self.boundary.iter().any(|e| e.tag == tag)
    }

    pub fn boundary_length(&self, tag: BoundaryTag) -> f64 {
        self.boundary
            .iter()
            .filter(|e| e.tag == tag)
            .map(|e| self.edge_length(e.vertices))
            .sum()
    }

    pub fn edge_length(&self, [a, b]: [usize; 2]) -> f64 {
        let (pa, pb) = (self.vertices[a], self.vertices[b]);
        (pb[0] - pa[0]).hypot(pb[1] - pa[1])
    }

    /// Vertices touched by edges carrying `tag`, ascending and unique.
    pub fn tagged_vertices(&self, tag: BoundaryTag) -> Vec<usize> {
        let mut v: Vec<usize> = self
            .boundary
            .iter()
            .filter(|e| e.tag == tag)
            .flat_map(|e| e.vertices)
            .collect();
        v.sort_unstable();
        v.dedup();
        v
    }

    /// Number of distinct (undirected) edges.
    pub fn num_edges(&self) -> usize {
        let mut edges: Vec<(usize, usize)> = self
            .triangles
            .iter()
            .flat_map(|t| (0..3).map(move |k| edge_key(t[k], t[(k + 1) % 3])))
            .collect();
        edges.sort_unstable();
        edges.dedup();
        edges.len()
    }

    /// Smallest interior angle over all triangles, in degrees.
    pub fn min_angle_deg(&self) -> f64 {
        self.triangles
            .iter()
            .map(|tri| {
                let p = tri.map(|i| self.vertices[i]);
                (0..3)
                    .map(|k| {
                        let (o, a, b) = (p[k], p[(k + 1) % 3], p[(k + 2) % 3]);
                        let u = [a[0] - o[0], a[1] - o[1]];
                        let v = [b[0] - o[0], b[1] - o[1]];
                        let c = (u[0] * v[0] + u[1] * v[1]) / (u[0].hypot(u[1]) * v[0].hypot(v[1]));
                        c.clamp(-1.0, 1.0).acos().to_degrees()
                    })
                    .fold(f64::INFINITY, f64::min)
            })
            .fold(f64::INFINITY, f64::min)
    }

    /// Longest edge over all triangles.
    pub fn max_edge_length(&self) -> f64 {
        self.triangles
            .iter()
            .flat_map(|t| (0..3).map(move |k| [t[k], t[(k + 1) % 3]]))
            .map(|e| self.edge_length(e))
            .fold(0.0, f64::max)
    }

    /// Structured mesh of an axis-aligned rectangle with `nx × ny` cells, each
    /// split along its rising diagonal. Bottom edges are tagged Γ_b, top edges
    /// Γ_a, vertical sides Wall.
    pub fn structured_rectangle(x0: f64, x1: f64, y0: f64, y1: f64, nx: usize, ny: usize) -> Result<Self> {
        if nx == 0 || ny == 0 || !(x1 > x0) || !(y1 > y0) {
            return Err(MeshError::Validation("degenerate rectangle".into()));
        }
        let id = |i: usize, j: usize| j * (nx + 1) + i;
        let mut vertices = Vec::with_capacity((nx + 1) * (ny + 1));
        for j in 0..=ny {
            for i in 0..=nx {
                vertices.push([
                    x0 + (x1 - x0) * i as f64 / nx as f64,
                    y0 + (y1 - y0) * j as f64 / ny as f64,
                ]);
            }
        }
        let mut triangles = Vec::with_capacity(2 * nx * ny);
        for j in 0..ny {
            for i in 0..nx {
                triangles.push([id(i, j), id(i + 1, j), id(i + 1, j + 1)]);
                triangles.push([id(i, j), id(i + 1, j + 1), id(i, j + 1)]);
            }
        }
        let mut boundary = Vec::new();
        for i in 0..nx {
            boundary.push(BoundaryEdge { vertices: [id(i, 0), id(i + 1, 0)], tag: BoundaryTag::GammaB });
            boundary.push(BoundaryEdge { vertices: [id(i + 1, ny), id(i, ny)], tag: BoundaryTag::GammaA });
        }
        for j in 0..ny {
            boundary.push(BoundaryEdge { vertices: [id(nx, j), id(nx, j + 1)], tag: BoundaryTag::Wall });
            boundary.push(BoundaryEdge { vertices: [id(0, j + 1), id(0, j)], tag: BoundaryTag::Wall });
        }
        Mesh::new(vertices, triangles, boundary)
    }

    /// The unit square split into two triangles along its rising diagonal.
    pub fn unit_square() -> Self {
        Mesh::structured_rectangle(0.0, 1.0, 0.0, 1.0, 1, 1).expect("unit square is valid")
    }

    /// The reference triangle (0,0), (1,0), (0,1) with every edge tagged Wall.
    pub fn reference_triangle() -> Self {
        Mesh::new(
            vec![[0.0, 0.0], [1.0, 0.0], [0.0, 1.0]],
            vec![[0, 1, 2]],
            vec![
                BoundaryEdge { vertices: [0, 1], tag: BoundaryTag::Wall },
                BoundaryEdge { vertices: [1, 2], tag: BoundaryTag::Wall },
                BoundaryEdge { vertices: [2, 0], tag: BoundaryTag::Wall },
            ],
        )
        .expect("reference triangle is valid")
    }
}

/// Dimensions of the treatment domain.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DomainGeometry {
    pub half_width: f64,
    pub height: f64,
    pub arc_center: [f64; 2],
    pub radius: f64,
}

impl Default for DomainGeometry {
    fn default() -> Self {
        DomainGeometry {
            half_width: 0.04,
            height: 0.12,
            arc_center: [0.0, 0.03],
            radius: 0.05,
        }
    }
}

impl DomainGeometry {
    /// Half opening angle of the cap, measured from straight down.
    pub fn half_angle(&self) -> f64 {
        (self.half_width / self.radius).asin()
    }

    pub fn arc_length(&self) -> f64 {
        2.0 * self.half_angle() * self.radius
    }

    pub fn lowest_point(&self) -> f64 {
        self.arc_center[1] - self.radius
    }

    /// Area of the rectangle plus the circular segment below x2 = 0.
    pub fn area(&self) -> f64 {
        let phi = 2.0 * self.half_angle();
        let segment = 0.5 * self.radius * self.radius * (phi - phi.sin());
        2.0 * self.half_width * self.height + segment
    }

    pub fn contains(&self, p: [f64; 2]) -> bool {
        let [x, y] = p;
        if x.abs() > self.half_width || y > self.height {
            return false;
        }
        if y >= 0.0 {
            return true;
        }
        let dx = x - self.arc_center[0];
        let dy = y - self.arc_center[1];
        dx * dx + dy * dy <= self.radius * self.radius
    }

    /// Counterclockwise boundary polygon with `h`-spaced vertices; arc
    /// vertices lie exactly on the circle.
    fn boundary_polygon(&self, h: f64) -> (Vec<[f64; 2]>, Vec<BoundaryTag>) {
        let mut pts = Vec::new();
        let mut tags = Vec::new();
        let w = self.half_width;
        let [cx, cy] = self.arc_center;
        let half = self.half_angle();
        let n_arc = (self.arc_length() / h).ceil().max(2.0) as usize;
        let start = -std::f64::consts::FRAC_PI_2 - half;
        for i in 0..n_arc {
            if i == 0 {
                pts.push([-w, 0.0]);
            } else {
                let a = start + 2.0 * half * i as f64 / n_arc as f64;
                pts.push([cx + self.radius * a.cos(), cy + self.radius * a.sin()]);
            }
            tags.push(BoundaryTag::GammaB);
        }
        let n_wall = (self.height / h).ceil().max(1.0) as usize;
        for i in 0..n_wall {
            pts.push([w, self.height * i as f64 / n_wall as f64]);
            tags.push(BoundaryTag::Wall);
        }
        let n_top = (2.0 * w / h).ceil().max(1.0) as usize;
        for i in 0..n_top {
            pts.push([w - 2.0 * w * i as f64 / n_top as f64, self.height]);
            tags.push(BoundaryTag::GammaA);
        }
        for i in 0..n_wall {
            pts.push([-w, self.height - self.height * i as f64 / n_wall as f64]);
            tags.push(BoundaryTag::Wall);
        }
        (pts, tags)
    }
}

fn point_segment_distance(p: [f64; 2], a: [f64; 2], b: [f64; 2]) -> f64 {
    let d = [b[0] - a[0], b[1] - a[1]];
    let len2 = d[0] * d[0] + d[1] * d[1];
    let t = (((p[0] - a[0]) * d[0] + (p[1] - a[1]) * d[1]) / len2).clamp(0.0, 1.0);
    let q = [a[0] + t * d[0], a[1] + t * d[1]];
    (p[0] - q[0]).hypot(p[1] - q[1])
}

const MAX_GENERATED_TRIANGLES: usize = 5_000_000;
const SMOOTHING_PASSES: usize = 6;

fn delaunay(points: &[[f64; 2]], n_boundary: usize) -> Result<Vec<[usize; 3]>> {
    let verts: Vec<Point2<f64>> = points.iter().map(|p| Point2::new(p[0], p[1])).collect();
    let edges: Vec<[usize; 2]> = (0..n_boundary).map(|i| [i, (i + 1) % n_boundary]).collect();
    let cdt = ConstrainedDelaunayTriangulation::<Point2<f64>>::bulk_load_cdt(verts, edges)
        .map_err(|e| MeshError::Triangulation(format!("{e:?}")))?;
    let index: HashMap<(u64, u64), usize> = points
        .iter()
        .enumerate()
        .map(|(i, p)| ((p[0].to_bits(), p[1].to_bits()), i))
        .collect();
    let mut tris = Vec::with_capacity(cdt.num_inner_faces());
    for face in cdt.inner_faces() {
        let ids = face.vertices().map(|v| {
            let p = v.position();
            index[&(p.x.to_bits(), p.y.to_bits())]
        });
        let area = signed_area(points[ids[0]], points[ids[1]], points[ids[2]]);
        if area > 0.0 {
            tris.push(ids);
        } else if area < 0.0 {
            tris.push([ids[0], ids[2], ids[1]]);
        }
    }
    // canonical ordering keeps the output independent of triangulator internals
    for t in tris.iter_mut() {
        let k = (0..3).min_by_key(|&k| t[k]).unwrap();
        t.rotate_left(k);
    }
    tris.sort_unstable();
    Ok(tris)
}

/// Generates a conforming triangulation of the treatment domain with
/// roughly equilateral triangles of edge `target_edge_length` (meters).
///
/// Boundary vertices are seeded uniformly along each segment, interior
/// vertices on a hexagonal lattice symmetric about x1 = 0; the point set is
/// Delaunay-triangulated and interior vertices are Laplace-smoothed.
pub fn build_domain_mesh(target_edge_length: f64) -> Result<Mesh> {
    build_mesh_for(&DomainGeometry::default(), target_edge_length)
}

pub fn build_mesh_for(geom: &DomainGeometry, h: f64) -> Result<Mesh> {
    if !(h > 0.0 && h <= 0.02) {
        return Err(MeshError::InvalidTarget(h));
    }
    let estimate = (geom.area() / (0.25 * 3f64.sqrt() * h * h) * 1.1) as usize;
    if estimate > MAX_GENERATED_TRIANGLES {
        return Err(MeshError::Resource {
            h,
            estimate,
            limit: MAX_GENERATED_TRIANGLES,
        });
    }
    let (bpts, btags) = geom.boundary_polygon(h);
    let nb = bpts.len();
    let mut points = bpts.clone();
    let dy = 0.5 * 3f64.sqrt() * h;
    let y_lo = geom.lowest_point();
    let rows = ((geom.height - y_lo) / dy).floor() as i64;
    let cols = (geom.half_width / h).ceil() as i64 + 1;
    for r in 0..=rows {
        let y = y_lo + r as f64 * dy;
        let offset = if r % 2 == 0 { 0.0 } else { 0.5 * h };
        for c in -cols..=cols {
            let x = offset + c as f64 * h;
            let p = [x, y];
            if !geom.contains(p) {
                continue;
            }
            let d = (0..nb)
                .map(|i| point_segment_distance(p, bpts[i], bpts[(i + 1) % nb]))
                .fold(f64::INFINITY, f64::min);
            if d >= 0.55 * h {
                points.push(p);
            }
        }
    }

    for _ in 0..SMOOTHING_PASSES {
        let tris = delaunay(&points, nb)?;
        let mut sum = vec![[0.0f64; 2]; points.len()];
        let mut count = vec![0usize; points.len()];
        let mut edges: Vec<(usize, usize)> = tris
            .iter()
            .flat_map(|t| (0..3).map(move |k| edge_key(t[k], t[(k + 1) % 3])))
            .collect();
        edges.sort_unstable();
        edges.dedup();
        for (a, b) in edges {
            for (i, j) in [(a, b), (b, a)] {
                sum[i][0] += points[j][0];
                sum[i][1] += points[j][1];
                count[i] += 1;
            }
        }
        for i in nb..points.len() {
            if count[i] > 0 {
                points[i] = [sum[i][0] / count[i] as f64, sum[i][1] / count[i] as f64];
            }
        }
    }
    let triangles = delaunay(&points, nb)?;
    let boundary = (0..nb)
        .map(|i| BoundaryEdge {
            vertices: [i, (i + 1) % nb],
            tag: btags[i],
        })
        .collect();
    Mesh::new(points, triangles, boundary)
}

fn fmt_f64(x: f64) -> String {
    format!("{x:.16e}")
}

/// Writes the ASCII mesh format (`hifumesh 1`, then `V`, `T`, `B` blocks).
pub fn save_mesh(mesh: &Mesh, path: impl AsRef<Path>) -> Result<()> {
    let mut out = String::new();
    out.push_str("hifumesh 1\n");
    out.push_str(&format!("V {}\n", mesh.vertices.len()));
    for v in &mesh.vertices {
        out.push_str(&format!("{} {}\n", fmt_f64(v[0]), fmt_f64(v[1])));
    }
    out.push_str(&format!("T {}\n", mesh.triangles.len()));
    for t in &mesh.triangles {
        out.push_str(&format!("{} {} {}\n", t[0], t[1], t[2]));
    }
    out.push_str(&format!("B {}\n", mesh.boundary.len()));
    for e in &mesh.boundary {
        out.push_str(&format!("{} {} {}\n", e.vertices[0], e.vertices[1], e.tag));
    }
    let mut f = fs::File::create(path)?;
    f.write_all(out.as_bytes())?;
    Ok(())
}

pub fn load_mesh(path: impl AsRef<Path>) -> Result<Mesh> {
    parse_mesh(&fs::read_to_string(path)?)
}

pub fn parse_mesh(text: &str) -> Result<Mesh> {
    let mut lines = text
        .lines()
        .enumerate()
        .map(|(i, l)| (i + 1, l.trim()))
        .filter(|(_, l)| !l.is_empty());
    let perr = |line: usize, message: String| MeshError::Parse { line, message };
    let (ln, header) = lines
        .next()
        .ok_or_else(|| perr(1, "empty mesh file".into()))?;
    if header != "hifumesh 1" {
        return Err(perr(ln, format!("expected header `hifumesh 1`, found `{header}`")));
    }
    let mut block = |key: &str| -> Result<(usize, Vec<(usize, Vec<String>)>)> {
        let (ln, l) = lines
            .next()
            .ok_or_else(|| perr(0, format!("missing `{key}` block")))?;
        let mut it = l.split_whitespace();
        if it.next() != Some(key) {
            return Err(perr(ln, format!("expected `{key} <count>`")));
        }
        let count: usize = it
            .next()
            .and_then(|c| c.parse().ok())
            .ok_or_else(|| perr(ln, format!("bad count in `{key}` line")))?;
        let mut rows = Vec::with_capacity(count);
        for _ in 0..count {
            let (ln, l) = lines
                .next()
                .ok_or_else(|| perr(ln, format!("`{key}` block truncated")))?;
            rows.push((ln, l.split_whitespace().map(str::to_owned).collect()));
        }
        Ok((ln, rows))
    };
    let (_, vrows) = block("V")?;
    let mut vertices = Vec::with_capacity(vrows.len());
    for (ln, f) in vrows {
        if f.len() != 2 {
            return Err(perr(ln, "vertex line needs two coordinates".into()));
        }
        let x: f64 = f[0].parse().map_err(|_| perr(ln, format!("bad number `{}`", f[0])))?;
        let y: f64 = f[1].parse().map_err(|_| perr(ln, format!("bad number `{}`", f[1])))?;
        vertices.push([x, y]);
    }
    let (_, trows) = block("T")?;
    let mut triangles = Vec::with_capacity(trows.len());
    for (ln, f) in trows {
        if f.len() != 3 {
            return Err(perr(ln, "triangle line needs three indices".into()));
        }
        let mut t = [0usize; 3];
        for k in 0..3 {
            t[k] = f[k].parse().map_err(|_| perr(ln, format!("bad index `{}`", f[k])))?;
        }
        triangles.push(t);
    }
    let (_, brows) = block("B")?;
    let mut boundary = Vec::with_capacity(brows.len());
    for (ln, f) in brows {
        if f.len() != 3 {
            return Err(perr(ln, "boundary line needs `i j TAG`".into()));
        }
        let a = f[0].parse().map_err(|_| perr(ln, format!("bad index `{}`", f[0])))?;
        let b = f[1].parse().map_err(|_| perr(ln, format!("bad index `{}`", f[1])))?;
        let tag = f[2].parse().map_err(|m| perr(ln, m))?;
        boundary.push(BoundaryEdge { vertices: [a, b], tag });
    }
    if let Some((ln, _)) = lines.next() {
        return Err(perr(ln, "trailing content after `B` block".into()));
    }
    Mesh::new(vertices, triangles, boundary)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn geometry_oracle() {
        let g = DomainGeometry::default();
        // circular segment of sagitta 0.02: R² acos((R−s)/R) − (R−s)·half chord
        let seg = 0.0025 * 0.6f64.acos() - 0.03 * 0.04;
        assert!((seg - 0.001_118_24).abs() < 1e-8);
        assert!((g.area() - (0.0096 + seg)).abs() < 1e-15);
        assert!((g.arc_length() - 0.05 * 2.0 * 0.8f64.asin()).abs() < 1e-15);
        assert!((g.lowest_point() + 0.02).abs() < 1e-15);
    }

    #[test]
    fn coarse_domain_mesh() {
        let m = build_domain_mesh(0.01).unwrap();
        let n = m.num_triangles();
        assert!((200..=400).contains(&n), "{n} triangles");
        let area = DomainGeometry::default().area();
        assert!((m.total_area() - area).abs() / area < 0.01);
        assert!(m.min_angle_deg() >= 20.0, "min angle {}", m.min_angle_deg());
        // Euler characteristic of a disk
        let chi = m.num_vertices() as i64 - m.num_edges() as i64 + n as i64;
        assert_eq!(chi, 1);
    }

    #[test]
    fn tagged_vertices_on_their_curves() {
        for h in [0.02, 0.01, 0.005] {
            let m = build_domain_mesh(h).unwrap();
            for v in m.tagged_vertices(BoundaryTag::GammaB) {
                let [x, y] = m.vertices()[v];
                assert!(y <= 1e-15);
                let r = (x * x + (y - 0.03) * (y - 0.03)).sqrt();
                assert!((r - 0.05).abs() < 1e-9);
            }
            for v in m.tagged_vertices(BoundaryTag::GammaA) {
                assert_eq!(m.vertices()[v][1], 0.12);
            }
            for v in m.tagged_vertices(BoundaryTag::Wall) {
                assert_eq!(m.vertices()[v][0].abs(), 0.04);
            }
        }
    }

    #[test]
    fn rejects_bad_targets() {
        assert!(matches!(build_domain_mesh(0.0), Err(MeshError::InvalidTarget(_))));
        assert!(matches!(build_domain_mesh(0.05), Err(MeshError::InvalidTarget(_))));
        assert!(matches!(build_domain_mesh(1e-5), Err(MeshError::Resource { .. })));
    }

    #[test]
    fn out_of_range_index_rejected() {
        let text = "hifumesh 1\nV 3\n0 0\n1 0\n0 1\nT 1\n0 1 3\nB 0\n";
        assert!(matches!(parse_mesh(text), Err(MeshError::Validation(_))));
    }

    #[test]
    fn empty_file_is_parse_error() {
        assert!(matches!(parse_mesh(""), Err(MeshError::Parse { .. })));
    }

    #[test]
    fn malformed_line_reports_line_number() {
        let text = "hifumesh 1\nV 3\n0 0\n1 zz\n0 1\nT 1\n0 1 2\nB 0\n";
        match parse_mesh(text) {
            Err(MeshError::Parse { line, .. }) => assert_eq!(line, 4),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn untagged_boundary_rejected() {
        let r = Mesh::new(
            vec![[0.0, 0.0], [1.0, 0.0], [0.0, 1.0]],
            vec![[0, 1, 2]],
            vec![BoundaryEdge { vertices: [0, 1], tag: BoundaryTag::Wall }],
        );
        assert!(r.is_err());
    }

    #[test]
    fn double_tag_rejected() {
        let e = |a, b| BoundaryEdge { vertices: [a, b], tag: BoundaryTag::Wall };
        let r = Mesh::new(
            vec![[0.0, 0.0], [1.0, 0.0], [0.0, 1.0]],
            vec![[0, 1, 2]],
            vec![e(0, 1), e(1, 2), e(2, 0), e(1, 0)],
        );
        assert!(r.is_err());
    }

    #[test]
    fn clockwise_triangle_rejected() {
        let e = |a, b| BoundaryEdge { vertices: [a, b], tag: BoundaryTag::Wall };
        let r = Mesh::new(
            vec![[0.0, 0.0], [1.0, 0.0], [0.0, 1.0]],
            vec![[0, 2, 1]],
            vec![e(0, 1), e(1, 2), e(2, 0)],
        );
        assert!(r.is_err());
    }

    #[test]
    fn save_load_round_trip() {
        let m = build_domain_mesh(0.01).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.txt");
        save_mesh(&m, &path).unwrap();
        let back = load_mesh(&path).unwrap();
        assert_eq!(back.vertices(), m.vertices());
        assert_eq!(back.triangles(), m.triangles());
        assert_eq!(back.boundary_edges(), m.boundary_edges());
    }

    #[test]
    fn boundary_orientation_gives_outward_normals() {
        let m = Mesh::structured_rectangle(0.0, 2.0, 0.0, 1.0, 4, 3).unwrap();
        for e in m.boundary_edges() {
            let [a, b] = e.vertices;
            let (pa, pb) = (m.vertices()[a], m.vertices()[b]);
            let n = [pb[1] - pa[1], pa[0] - pb[0]];
            let mid = [(pa[0] + pb[0]) / 2.0 - 1.0, (pa[1] + pb[1]) / 2.0 - 0.5];
            assert!(n[0] * mid[0] + n[1] * mid[1] > 0.0);
        }
    }
}
