use std::collections::HashMap;
use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::error::{invalid, EitError, Result};

/// Angle of the first outer node and of electrode 1's center (top of the domain).
pub const START_ANGLE: f64 = PI / 2.0;
/// Allowed relative mismatch between requested and realized electrode coverage.
pub const COVERAGE_TOLERANCE: f64 = 0.05;
/// Allowed relative mismatch between requested and realized element count.
pub const ELEMENT_TOLERANCE: f64 = 0.30;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum DomainShape {
    Disk { radius: f64 },
    /// Ellipse with width/height ratio `aspect` and the area of a disk of `radius`.
    Thorax { aspect: f64, radius: f64 },
}

impl DomainShape {
    pub fn semi_axes(&self) -> (f64, f64) {
        match *self {
            DomainShape::Disk { radius } => (radius, radius),
            DomainShape::Thorax { aspect, radius } => (radius * aspect.sqrt(), radius / aspect.sqrt()),
        }
    }
}

/// Everything needed to rebuild a mesh and its electrode layout.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MeshSpec {
    pub shape: DomainShape,
    pub target_elements: usize,
    pub electrodes: usize,
    pub coverage: f64,
}

impl MeshSpec {
    pub fn build(&self) -> Result<(Mesh, ElectrodeLayout)> {
        build_ring_mesh(self)
    }
}

/// Triangulated 2D domain. Elements are counterclockwise; boundary edges run
/// counterclockwise so the outward normal lies on their right.
#[derive(Clone, Debug)]
pub struct Mesh {
    nodes: Vec<[f64; 2]>,
    elements: Vec<[usize; 3]>,
    boundary_edges: Vec<[usize; 2]>,
    areas: Vec<f64>,
    neighbors: Vec<Vec<usize>>,
    interior_edges: Vec<[usize; 2]>,
    boundary_node: Vec<bool>,
}

fn signed_area(a: [f64; 2], b: [f64; 2], c: [f64; 2]) -> f64 {
    0.5 * ((b[0] - a[0]) * (c[1] - a[1]) - (c[0] - a[0]) * (b[1] - a[1]))
}

impl Mesh {
    /// Validates the triangulation and precomputes adjacency.
    pub fn new(nodes: Vec<[f64; 2]>, elements: Vec<[usize; 3]>, boundary_edges: Vec<[usize; 2]>) -> Result<Self> {
        let n = nodes.len();
        let mut areas = Vec::with_capacity(elements.len());
        for (e, tri) in elements.iter().enumerate() {
            if tri.iter().any(|&v| v >= n) {
                return Err(EitError::Mesh(format!("element {e} references a missing node")));
            }
            let a = signed_area(nodes[tri[0]], nodes[tri[1]], nodes[tri[2]]);
            if a <= 0.0 {
                return Err(EitError::Mesh(format!("element {e} has non-positive signed area {a:e}")));
            }
            areas.push(a);
        }

        let mut edge_owner: HashMap<(usize, usize), Vec<(usize, bool)>> = HashMap::new();
        for (e, tri) in elements.iter().enumerate() {
            for k in 0..3 {
                let (u, v) = (tri[k], tri[(k + 1) % 3]);
                edge_owner.entry((u.min(v), u.max(v))).or_default().push((e, u < v));
            }
        }
        let mut neighbors = vec![Vec::new(); elements.len()];
        let mut interior_edges = Vec::new();
        let mut open: HashMap<(usize, usize), bool> = HashMap::new();
        for (&key, owners) in &edge_owner {
            match owners.as_slice() {
                [(_, forward)] => {
                    open.insert(key, *forward);
                }
                [(a, _), (b, _)] => {
                    neighbors[*a].push(*b);
                    neighbors[*b].push(*a);
                    interior_edges.push([(*a).min(*b), (*a).max(*b)]);
                }
                _ => return Err(EitError::Mesh(format!("edge {key:?} shared by {} elements", owners.len()))),
            }
        }
        interior_edges.sort_unstable();
        neighbors.iter_mut().for_each(|v| v.sort_unstable());

        if boundary_edges.len() != open.len() {
            return Err(EitError::Mesh(format!(
                "{} boundary edges given, triangulation has {}",
                boundary_edges.len(),
                open.len()
            )));
        }
        let mut boundary_node = vec![false; n];
        for (i, &[u, v]) in boundary_edges.iter().enumerate() {
            match open.get(&(u.min(v), u.max(v))) {
                Some(&forward) if forward == (u < v) => {}
                Some(_) => return Err(EitError::Mesh(format!("boundary edge {i} is inward-oriented"))),
                None => return Err(EitError::Mesh(format!("boundary edge {i} is not on the boundary"))),
            }
            boundary_node[u] = true;
            boundary_node[v] = true;
            let next = boundary_edges[(i + 1) % boundary_edges.len()];
            if next[0] != v {
                return Err(EitError::Mesh(format!("boundary edge {i} does not connect to the next edge")));
            }
        }
        let loop_nodes = boundary_edges.iter().map(|e| e[0]).collect::<std::collections::HashSet<_>>();
        if loop_nodes.len() != boundary_edges.len() {
            return Err(EitError::Mesh("boundary does not form a single simple loop".into()));
        }

        let mut seen = vec![false; elements.len()];
        let mut stack = vec![0];
        let mut reached = 0;
        if !elements.is_empty() {
            seen[0] = true;
        }
        while let Some(e) = stack.pop() {
            reached += 1;
            for &f in &neighbors[e] {
                if !seen[f] {
                    seen[f] = true;
                    stack.push(f);
                }
            }
        }
        if elements.is_empty() || reached != elements.len() {
            return Err(EitError::Mesh("element adjacency graph is not connected".into()));
        }

        Ok(Self {
            nodes,
            elements,
            boundary_edges,
            areas,
            neighbors,
            interior_edges,
            boundary_node,
        })
    }

    pub fn nodes(&self) -> &[[f64; 2]] {
        &self.nodes
    }

    pub fn elements(&self) -> &[[usize; 3]] {
        &self.elements
    }

    pub fn boundary_edges(&self) -> &[[usize; 2]] {
        &self.boundary_edges
    }

    pub fn node_count(&self) -> usize {
        self.nodes.len()
    }

    pub fn element_count(&self) -> usize {
        self.elements.len()
    }

    pub fn area(&self, e: usize) -> f64 {
        self.areas[e]
    }

    pub fn areas(&self) -> &[f64] {
        &self.areas
    }

    /// Elements sharing an edge with `e`.
    pub fn neighbors(&self, e: usize) -> &[usize] {
        &self.neighbors[e]
    }

    /// Pairs `(a, b)`, `a < b`, of elements sharing an edge, sorted.
    pub fn interior_edges(&self) -> &[[usize; 2]] {
        &self.interior_edges
    }

    pub fn is_boundary_node(&self, v: usize) -> bool {
        self.boundary_node[v]
    }

    pub fn vertices(&self, e: usize) -> [[f64; 2]; 3] {
        let t = self.elements[e];
        [self.nodes[t[0]], self.nodes[t[1]], self.nodes[t[2]]]
    }

    pub fn centroid(&self, e: usize) -> [f64; 2] {
        let [a, b, c] = self.vertices(e);
        [(a[0] + b[0] + c[0]) / 3.0, (a[1] + b[1] + c[1]) / 3.0]
    }

    pub fn edge_length(&self, edge: [usize; 2]) -> f64 {
        let (a, b) = (self.nodes[edge[0]], self.nodes[edge[1]]);
        (b[0] - a[0]).hypot(b[1] - a[1])
    }

    pub fn perimeter(&self) -> f64 {
        self.boundary_edges.iter().map(|&e| self.edge_length(e)).sum()
    }

    pub fn bounding_box(&self) -> ([f64; 2], [f64; 2]) {
        let mut lo = [f64::INFINITY; 2];
        let mut hi = [f64::NEG_INFINITY; 2];
        for p in &self.nodes {
            for k in 0..2 {
                lo[k] = lo[k].min(p[k]);
                hi[k] = hi[k].max(p[k]);
            }
        }
        (lo, hi)
    }

    /// Smallest interior angle over all elements, in degrees.
    pub fn min_angle_degrees(&self) -> f64 {
        let mut best = f64::INFINITY;
        for e in 0..self.elements.len() {
            let v = self.vertices(e);
            for k in 0..3 {
                let (p, q, r) = (v[k], v[(k + 1) % 3], v[(k + 2) % 3]);
                let (ux, uy) = (q[0] - p[0], q[1] - p[1]);
                let (wx, wy) = (r[0] - p[0], r[1] - p[1]);
                let ang = (ux * wy - uy * wx).abs().atan2(ux * wx + uy * wy);
                best = best.min(ang.to_degrees());
            }
        }
        best
    }

    /// Elements with at least one node on the boundary.
    pub fn boundary_adjacent_elements(&self) -> Vec<usize> {
        (0..self.elements.len())
            .filter(|&e| self.elements[e].iter().any(|&v| self.boundary_node[v]))
            .collect()
    }

    /// Distance from a point to the boundary polygon.
    pub fn distance_to_boundary(&self, p: [f64; 2]) -> f64 {
        self.boundary_edges
            .iter()
            .map(|&[u, v]| {
                let (a, b) = (self.nodes[u], self.nodes[v]);
                let (dx, dy) = (b[0] - a[0], b[1] - a[1]);
                let t = (((p[0] - a[0]) * dx + (p[1] - a[1]) * dy) / (dx * dx + dy * dy)).clamp(0.0, 1.0);
                (p[0] - a[0] - t * dx).hypot(p[1] - a[1] - t * dy)
            })
            .fold(f64::INFINITY, f64::min)
    }
}

/// E electrodes, each a run of consecutive boundary-edge indices, ordered counterclockwise.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ElectrodeLayout {
    electrodes: Vec<Vec<usize>>,
    coverage: f64,
}

impl ElectrodeLayout {
    pub fn new(mesh: &Mesh, electrodes: Vec<Vec<usize>>, coverage: f64) -> Result<Self> {
        let nb = mesh.boundary_edges().len();
        if electrodes.len() < 4 {
            return Err(invalid("electrode count", format!("need at least 4, got {}", electrodes.len())));
        }
        let mut owner = vec![usize::MAX; mesh.node_count()];
        let mut last_start = None;
        let mut wraps = 0;
        for (i, edges) in electrodes.iter().enumerate() {
            if edges.is_empty() {
                return Err(invalid("electrode layout", format!("electrode {} has no edges", i + 1)));
            }
            for w in edges.windows(2) {
                if w[1] != (w[0] + 1) % nb {
                    return Err(invalid("electrode layout", format!("electrode {} is not contiguous", i + 1)));
                }
            }
            for &edge in edges {
                if edge >= nb {
                    return Err(invalid("electrode layout", format!("edge {edge} out of range")));
                }
                for v in mesh.boundary_edges()[edge] {
                    if owner[v] != usize::MAX && owner[v] != i {
                        return Err(invalid(
                            "electrode layout",
                            format!("electrodes {} and {} overlap", owner[v] + 1, i + 1),
                        ));
                    }
                    owner[v] = i;
                }
            }
            if let Some(prev) = last_start {
                if edges[0] < prev {
                    wraps += 1;
                }
            }
            last_start = Some(edges[0]);
        }
        if wraps > 1 {
            return Err(invalid("electrode layout", "electrodes are not in counterclockwise order"));
        }
        Ok(Self { electrodes, coverage })
    }

    pub fn count(&self) -> usize {
        self.electrodes.len()
    }

    /// Requested boundary coverage fraction.
    pub fn coverage(&self) -> f64 {
        self.coverage
    }

    pub fn edges(&self, i: usize) -> &[usize] {
        &self.electrodes[i]
    }

    pub fn all_edges(&self) -> &[Vec<usize>] {
        &self.electrodes
    }

    /// Sorted node indices under electrode `i`.
    pub fn nodes(&self, mesh: &Mesh, i: usize) -> Vec<usize> {
        let mut v: Vec<usize> = self.electrodes[i]
            .iter()
            .flat_map(|&e| mesh.boundary_edges()[e])
            .collect();
        v.sort_unstable();
        v.dedup();
        v
    }

    /// Realized fraction of the perimeter under electrodes.
    pub fn arc_fraction(&self, mesh: &Mesh) -> f64 {
        let covered: f64 = self
            .electrodes
            .iter()
            .flatten()
            .map(|&e| mesh.edge_length(mesh.boundary_edges()[e]))
            .sum();
        covered / mesh.perimeter()
    }

    /// Midpoint of electrode `i` (midpoint of its middle node run).
    pub fn center(&self, mesh: &Mesh, i: usize) -> [f64; 2] {
        let edges = &self.electrodes[i];
        let mid = edges.len() / 2;
        let [u, v] = mesh.boundary_edges()[edges[mid]];
        if edges.len() % 2 == 0 {
            mesh.nodes()[u]
        } else {
            let (a, b) = (mesh.nodes()[u], mesh.nodes()[v]);
            [(a[0] + b[0]) / 2.0, (a[1] + b[1]) / 2.0]
        }
    }
}

pub fn build_disk_mesh(radius: f64, target_elements: usize, electrodes: usize, coverage: f64) -> Result<(Mesh, ElectrodeLayout)> {
    MeshSpec {
        shape: DomainShape::Disk { radius },
        target_elements,
        electrodes,
        coverage,
    }
    .build()
}

/// Ellipse of unit equivalent radius with width/height ratio `aspect`.
pub fn build_thorax_mesh(aspect: f64, target_elements: usize, electrodes: usize, coverage: f64) -> Result<(Mesh, ElectrodeLayout)> {
    MeshSpec {
        shape: DomainShape::Thorax { aspect, radius: 1.0 },
        target_elements,
        electrodes,
        coverage,
    }
    .build()
}

/// Per-sector node counts from the innermost ring outward.
fn ring_plan(m_outer: usize, rings: usize) -> Vec<usize> {
    let mut per = vec![m_outer];
    for r in (1..rings).rev() {
        let next = *per.last().expect("non-empty");
        let mut t = ((m_outer * r) as f64 / rings as f64).round().max(1.0) as usize;
        t = t.min(next);
        // two odd neighbours would put both strip midpoints on the sector's mirror line
        if t % 2 == 1 && next % 2 == 1 {
            if t > 1 {
                t -= 1;
            } else if next >= 3 {
                t = 2;
            } else {
                break;
            }
        }
        per.push(t);
    }
    per.reverse();
    per
}

fn element_total(plan: &[usize], e: usize) -> usize {
    let mut total = e * plan[0];
    for w in plan.windows(2) {
        total += e * (w[0] + w[1]);
    }
    total
}

fn half_width(coverage: f64, m_outer: usize) -> usize {
    (coverage * m_outer as f64 / 2.0).round() as usize
}

struct Resolution {
    rings: usize,
    m_outer: usize,
    half_width: usize,
}

fn choose_resolution(spec: &MeshSpec) -> Result<Resolution> {
    let e = spec.electrodes;
    let target = spec.target_elements as f64;
    let mut best: Option<(f64, Resolution)> = None;
    for rings in 2..=400usize {
        let ideal = 2.0 * PI * rings as f64 / e as f64;
        let lo = ((0.6 * ideal).floor() as usize).max(1);
        let hi = (1.5 * ideal).ceil() as usize + 1;
        for m in lo..=hi {
            let p = half_width(spec.coverage, m);
            if p == 0 || 2 * p >= m {
                continue;
            }
            if ((2 * p) as f64 / m as f64 - spec.coverage).abs() > COVERAGE_TOLERANCE * spec.coverage {
                continue;
            }
            let count = element_total(&ring_plan(m, rings), e) as f64;
            if (count / target - 1.0).abs() > ELEMENT_TOLERANCE {
                continue;
            }
            let score = (count / target).ln().abs() + 0.5 * (m as f64 / ideal).ln().abs();
            if best.as_ref().is_none_or(|(s, _)| score < *s) {
                best = Some((
                    score,
                    Resolution {
                        rings,
                        m_outer: m,
                        half_width: p,
                    },
                ));
            }
        }
    }
    best.map(|(_, r)| r).ok_or_else(|| {
        invalid(
            "coverage",
            format!(
                "{} electrodes covering {:.3} of the boundary cannot be realized with about {} elements",
                e, spec.coverage, spec.target_elements
            ),
        )
    })
}

/// Maps a disk angle to an ellipse parameter so equal angle steps give equal boundary arc length.
struct ArcWarp {
    a: f64,
    b: f64,
    cumulative: Vec<f64>,
    panel: f64,
    perimeter: f64,
}

const GL5: [(f64, f64); 5] = [
    (0.0, 0.568_888_888_888_888_9),
    (-0.538_469_310_105_683_1, 0.478_628_670_499_366_5),
    (0.538_469_310_105_683_1, 0.478_628_670_499_366_5),
    (-0.906_179_845_938_664, 0.236_926_885_056_189_1),
    (0.906_179_845_938_664, 0.236_926_885_056_189_1),
];

impl ArcWarp {
    const PANELS: usize = 1024;

    fn new(a: f64, b: f64) -> Self {
        let panel = 2.0 * PI / Self::PANELS as f64;
        let mut w = Self {
            a,
            b,
            cumulative: vec![0.0; Self::PANELS + 1],
            panel,
            perimeter: 0.0,
        };
        for k in 0..Self::PANELS {
            let s = k as f64 * panel;
            w.cumulative[k + 1] = w.cumulative[k] + w.integrate(s, s + panel);
        }
        w.perimeter = w.cumulative[Self::PANELS];
        w
    }

    fn speed(&self, phi: f64) -> f64 {
        (self.a * phi.sin()).hypot(self.b * phi.cos())
    }

    fn integrate(&self, lo: f64, hi: f64) -> f64 {
        let (mid, half) = ((lo + hi) / 2.0, (hi - lo) / 2.0);
        GL5.iter().map(|&(x, w)| w * self.speed(mid + half * x)).sum::<f64>() * half
    }

    fn arc(&self, phi: f64) -> f64 {
        let k = ((phi / self.panel).floor().max(0.0) as usize).min(Self::PANELS - 1);
        self.cumulative[k] + self.integrate(k as f64 * self.panel, phi)
    }

    /// Ellipse parameter whose arc length from angle 0 is `theta / 2π` of the perimeter.
    fn parameter(&self, theta: f64) -> f64 {
        let turns = (theta / (2.0 * PI)).floor();
        let t = theta - turns * 2.0 * PI;
        let goal = t / (2.0 * PI) * self.perimeter;
        let mut phi = t;
        for _ in 0..50 {
            let step = (self.arc(phi) - goal) / self.speed(phi);
            phi -= step;
            if step.abs() < 1e-15 {
                break;
            }
        }
        phi + turns * 2.0 * PI
    }
}

fn build_ring_mesh(spec: &MeshSpec) -> Result<(Mesh, ElectrodeLayout)> {
    if spec.target_elements < 100 {
        return Err(invalid("target_elements", format!("need at least 100, got {}", spec.target_elements)));
    }
    if spec.electrodes < 4 {
        return Err(invalid("electrode count", format!("need at least 4, got {}", spec.electrodes)));
    }
    if !(spec.coverage > 0.0 && spec.coverage < 1.0) {
        return Err(invalid("coverage", format!("must lie in (0, 1), got {}", spec.coverage)));
    }
    let (a, b) = spec.shape.semi_axes();
    if !(a > 0.0 && b > 0.0 && a.is_finite() && b.is_finite()) {
        return Err(invalid("domain", format!("semi-axes must be positive, got ({a}, {b})")));
    }
    let res = choose_resolution(spec)?;
    let e = spec.electrodes;
    let plan = ring_plan(res.m_outer, res.rings);
    let first_ring = res.rings + 1 - plan.len();
    let warp = (a != b).then(|| ArcWarp::new(a, b));

    let mut nodes = vec![[0.0, 0.0]];
    let mut ring_start = Vec::with_capacity(plan.len());
    for (idx, &m) in plan.iter().enumerate() {
        let rho = (first_ring + idx) as f64 / res.rings as f64;
        let n = e * m;
        ring_start.push(nodes.len());
        for i in 0..n {
            let theta = START_ANGLE + 2.0 * PI * i as f64 / n as f64;
            let (x, y) = match &warp {
                Some(w) => {
                    let phi = w.parameter(theta);
                    (a * rho * phi.cos(), b * rho * phi.sin())
                }
                None => (a * rho * theta.cos(), b * rho * theta.sin()),
            };
            nodes.push([x, y]);
        }
    }

    let mut elements = Vec::with_capacity(element_total(&plan, e));
    let inner_n = e * plan[0];
    for i in 0..inner_n {
        elements.push([0, ring_start[0] + i, ring_start[0] + (i + 1) % inner_n]);
    }
    for (r, w) in plan.windows(2).enumerate() {
        let (m_in, m_out) = (w[0], w[1]);
        let (n_in, n_out) = (e * m_in, e * m_out);
        let inner = |k: usize| ring_start[r] + k % n_in;
        let outer = |k: usize| ring_start[r + 1] + k % n_out;
        for s in 0..e {
            let (base_in, base_out) = (s * m_in, s * m_out);
            let (mut i, mut j) = (0, 0);
            while i < m_in || j < m_out {
                let advance_inner = if i == m_in {
                    false
                } else if j == m_out {
                    true
                } else {
                    let lhs = (2 * i + 1) * m_out;
                    let rhs = (2 * j + 1) * m_in;
                    match lhs.cmp(&rhs) {
                        std::cmp::Ordering::Less => true,
                        std::cmp::Ordering::Greater => false,
                        std::cmp::Ordering::Equal => 2 * i + 1 < m_in,
                    }
                };
                if advance_inner {
                    elements.push([inner(base_in + i), outer(base_out + j), inner(base_in + i + 1)]);
                    i += 1;
                } else {
                    elements.push([inner(base_in + i), outer(base_out + j), outer(base_out + j + 1)]);
                    j += 1;
                }
            }
        }
    }

    let outer_start = *ring_start.last().expect("at least one ring");
    let n_outer = e * res.m_outer;
    let boundary_edges: Vec<[usize; 2]> = (0..n_outer)
        .map(|i| [outer_start + i, outer_start + (i + 1) % n_outer])
        .collect();
    let mesh = Mesh::new(nodes, elements, boundary_edges)?;

    let p = res.half_width;
    let electrodes: Vec<Vec<usize>> = (0..e)
        .map(|s| {
            let center = s * res.m_outer;
            (0..2 * p).map(|k| (center + n_outer - p + k) % n_outer).collect()
        })
        .collect();
    let layout = ElectrodeLayout::new(&mesh, electrodes, spec.coverage)?;
    let realized = layout.arc_fraction(&mesh);
    if (realized / spec.coverage - 1.0).abs() > COVERAGE_TOLERANCE {
        return Err(invalid(
            "coverage",
            format!("realized coverage {realized:.4} differs from requested {:.4}", spec.coverage),
        ));
    }
    Ok((mesh, layout))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ring_plan_never_pairs_odd_neighbours() {
        for m in 1..20 {
            for rings in 2..30 {
                let plan = ring_plan(m, rings);
                assert_eq!(*plan.last().unwrap(), m);
                for w in plan.windows(2) {
                    assert!(w[0] <= w[1]);
                    assert!(!(w[0] % 2 == 1 && w[1] % 2 == 1), "{plan:?}");
                }
            }
        }
    }

    #[test]
    fn arc_warp_equalizes_boundary_steps() {
        let w = ArcWarp::new(1.3, 0.7);
        let phi = w.parameter(PI / 3.0);
        assert!((w.arc(phi) - w.perimeter / 6.0).abs() < 1e-12);
        assert!((w.parameter(PI / 2.0) - PI / 2.0).abs() < 1e-12);
    }

    #[test]
    fn inward_boundary_edge_is_rejected() {
        let nodes = vec![[0.0, 0.0], [1.0, 0.0], [0.0, 1.0]];
        let err = Mesh::new(nodes, vec![[0, 1, 2]], vec![[0, 2], [2, 1], [1, 0]]).unwrap_err();
        assert!(err.to_string().contains("inward"), "{err}");
    }
}
