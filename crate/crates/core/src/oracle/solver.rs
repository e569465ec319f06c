use nalgebra::{DMatrix, Matrix3, Rotation3, Vector3};
use nalgebra_sparse::factorization::CscCholesky;
use nalgebra_sparse::{CooMatrix, CscMatrix};

/// Weight of the proximal term that keeps the global system definite when
/// nothing is pinned.
const PROXIMAL: f64 = 1.0e-6;
const ROTATION_EPS: f64 = 1.0e-12;
const ROTATION_MAX_ITER: usize = 64;
const POLAR_MAX_ITER: usize = 30;
const POLAR_TOLERANCE: f64 = 1.0e-13;
const ANDERSON_DEPTH: usize = 10;

/// Particle indices of a beam network: 8 cuboid corners per joint and 4
/// section corners per beam station. End stations of jointed beams share
/// their particles with the joint faces they attach to.
#[derive(Debug, Clone, PartialEq)]
pub(crate) struct Layout {
    pub joints: Vec<[usize; 8]>,
    pub beams: Vec<Vec<[usize; 4]>>,
    pub pinned: Vec<bool>,
}

/// Shape-matching cluster: its members should be a rotated copy of `rest`
/// (offsets from the uniform centroid).
#[derive(Debug, Clone)]
struct Cluster {
    members: Vec<usize>,
    rest: Vec<Vector3<f64>>,
    rotation: Rotation3<f64>,
}

impl Cluster {
    fn new(members: Vec<usize>) -> Cluster {
        let rest = vec![Vector3::zeros(); members.len()];
        Cluster {
            members,
            rest,
            rotation: Rotation3::identity(),
        }
    }

    /// Sets the rest shape from absolute positions, one per member.
    fn set_rest(&mut self, shape: &[Vector3<f64>]) {
        let centroid = shape.iter().sum::<Vector3<f64>>() / shape.len() as f64;
        self.rest = shape.iter().map(|p| p - centroid).collect();
    }

    /// Local step: best-fit rotation of the rest shape onto `p`. Returns the
    /// remaining squared misfit.
    fn fit(&mut self, p: &[Vector3<f64>]) -> f64 {
        let n = self.members.len() as f64;
        let centroid = self.members.iter().map(|&i| p[i]).sum::<Vector3<f64>>() / n;
        let mut a = Matrix3::zeros();
        for (&i, q) in self.members.iter().zip(&self.rest) {
            a += (p[i] - centroid) * q.transpose();
        }
        self.rotation = extract_rotation(&a, self.rotation);
        self.members
            .iter()
            .zip(&self.rest)
            .map(|(&i, q)| (p[i] - centroid - self.rotation * q).norm_squared())
            .sum()
    }

    fn add_matrix(&self, weight: f64, entries: &mut Vec<(usize, usize, f64)>) {
        let n = self.members.len() as f64;
        for &i in &self.members {
            for &j in &self.members {
                let identity = if i == j { 1.0 } else { 0.0 };
                entries.push((i, j, weight * (identity - 1.0 / n)));
            }
        }
    }

    fn add_rhs(&self, weight: f64, rhs: &mut [Vector3<f64>]) {
        for (&i, q) in self.members.iter().zip(&self.rest) {
            rhs[i] += self.rotation * q * weight;
        }
    }
}

/// Distance constraint between corresponding corners of adjacent stations.
#[derive(Debug, Clone, Copy)]
struct Link {
    a: usize,
    b: usize,
    rest: f64,
}

impl Link {
    fn add_matrix(&self, weight: f64, entries: &mut Vec<(usize, usize, f64)>) {
        entries.extend([
            (self.a, self.a, weight),
            (self.b, self.b, weight),
            (self.a, self.b, -weight),
            (self.b, self.a, -weight),
        ]);
    }

    fn misfit(&self, p: &[Vector3<f64>]) -> f64 {
        let len = (p[self.b] - p[self.a]).norm();
        (len - self.rest).powi(2)
    }

    fn add_rhs(&self, weight: f64, p: &[Vector3<f64>], rhs: &mut [Vector3<f64>]) {
        let d = p[self.b] - p[self.a];
        let len = d.norm();
        if len > 1e-12 {
            let target = d * (self.rest / len) * weight;
            rhs[self.b] += target;
            rhs[self.a] -= target;
        }
    }
}

/// Rotational factor of the polar decomposition of `a`, by scaled Newton
/// iteration. Falls back to refining `guess` with the axis-angle update of
/// Müller et al. when `a` is singular or orientation-reversing.
pub(crate) fn extract_rotation(a: &Matrix3<f64>, guess: Rotation3<f64>) -> Rotation3<f64> {
    let mut x = *a;
    for _ in 0..POLAR_MAX_ITER {
        let det = x.determinant();
        let inverse = match x.try_inverse() {
            Some(inv) if det > 0.0 => inv,
            _ => return refine_rotation(a, guess),
        };
        let gamma = det.cbrt().recip();
        let next = (x * gamma + inverse.transpose() / gamma) * 0.5;
        let change = (next - x).norm();
        x = next;
        if change < POLAR_TOLERANCE {
            break;
        }
    }
    Rotation3::from_matrix_unchecked(x)
}

fn refine_rotation(a: &Matrix3<f64>, guess: Rotation3<f64>) -> Rotation3<f64> {
    let mut rot = guess;
    for _ in 0..ROTATION_MAX_ITER {
        let r = rot.matrix();
        let axis = r.column(0).cross(&a.column(0))
            + r.column(1).cross(&a.column(1))
            + r.column(2).cross(&a.column(2));
        let denom = r.column(0).dot(&a.column(0))
            + r.column(1).dot(&a.column(1))
            + r.column(2).dot(&a.column(2));
        let omega = axis / (denom.abs() + f64::MIN_POSITIVE);
        let angle = omega.norm();
        if !(angle > ROTATION_EPS) {
            break;
        }
        rot = Rotation3::from_axis_angle(&nalgebra::Unit::new_unchecked(omega / angle), angle) * rot;
    }
    rot.renormalize();
    rot
}

/// Centre and material frame (columns: tangent, width, thickness) of a
/// section from its four corners.
pub(crate) fn station_frame(c: [Vector3<f64>; 4]) -> (Vector3<f64>, Matrix3<f64>) {
    let center = (c[0] + c[1] + c[2] + c[3]) / 4.0;
    let w = ((c[1] + c[3]) - (c[0] + c[2])).normalize();
    let z0 = (c[2] + c[3]) - (c[0] + c[1]);
    let z = (z0 - w * w.dot(&z0)).normalize();
    let t = w.cross(&z);
    (center, Matrix3::from_columns(&[t, w, z]))
}

fn sinc(x: f64) -> f64 {
    if x.abs() < 1e-8 {
        1.0
    } else {
        x.sin() / x
    }
}

/// Local–global constraint solver over a beam network. Every cluster and
/// link contributes a quadratic penalty toward its best-fit target; the
/// global step solves the resulting linear system, prefactored once per
/// stage. The rest state is a reference configuration, optionally bent by
/// per-beam rest curvature about each section's width axis.
pub(crate) struct Solver {
    layout: Layout,
    reference: Vec<Vector3<f64>>,
    segments: Vec<Vec<Cluster>>,
    links: Vec<Vec<[Link; 4]>>,
    chords: Vec<Vec<f64>>,
    joints: Vec<Cluster>,
    weights: Weights,
    /// Unknown index of each particle; `None` for pinned particles.
    unknown: Vec<Option<usize>>,
    order: Vec<usize>,
    /// (unknown, pinned particle, matrix entry) couplings.
    pinned_coupling: Vec<(usize, usize, f64)>,
    factor: CscCholesky<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub(crate) struct Weights {
    pub stretch: f64,
    pub bend: f64,
    pub joint: f64,
}

impl Solver {
    pub fn new(layout: &Layout, reference: &[Vector3<f64>], weights: Weights) -> Solver {
        let joints = layout
            .joints
            .iter()
            .map(|corners| {
                let mut cluster = Cluster::new(corners.to_vec());
                let shape: Vec<_> = corners.iter().map(|&i| reference[i]).collect();
                cluster.set_rest(&shape);
                cluster
            })
            .collect();
        let segments = layout
            .beams
            .iter()
            .map(|stations| {
                stations
                    .windows(2)
                    .map(|pair| Cluster::new(pair[0].iter().chain(&pair[1]).copied().collect()))
                    .collect()
            })
            .collect();

        // Beam interiors first and joints last keeps the factor's fill-in
        // confined to the joint blocks.
        let mut in_joint = vec![false; reference.len()];
        for &i in layout.joints.iter().flatten() {
            in_joint[i] = true;
        }
        let order: Vec<usize> = (0..reference.len())
            .filter(|&i| !in_joint[i] && !layout.pinned[i])
            .chain((0..reference.len()).filter(|&i| in_joint[i] && !layout.pinned[i]))
            .collect();
        let mut unknown = vec![None; reference.len()];
        for (k, &i) in order.iter().enumerate() {
            unknown[i] = Some(k);
        }

        let mut solver = Solver {
            layout: layout.clone(),
            reference: reference.to_vec(),
            segments,
            links: Vec::new(),
            chords: Vec::new(),
            joints,
            weights,
            unknown,
            order,
            pinned_coupling: Vec::new(),
            factor: CscCholesky::factor(&CscMatrix::identity(1)).expect("identity factors"),
        };
        solver.set_curvature(&vec![0.0; layout.beams.len()]);
        solver.factorize();
        solver
    }

    fn factorize(&mut self) {
        let mut entries = Vec::new();
        for (segments, links) in self.segments.iter().zip(&self.links) {
            for (cluster, quad) in segments.iter().zip(links) {
                cluster.add_matrix(self.weights.bend, &mut entries);
                for link in quad {
                    link.add_matrix(self.weights.stretch, &mut entries);
                }
            }
        }
        for cluster in &self.joints {
            cluster.add_matrix(self.weights.joint, &mut entries);
        }
        let n = self.order.len();
        let mut coo = CooMatrix::new(n, n);
        for k in 0..n {
            coo.push(k, k, PROXIMAL);
        }
        let mut coupling = std::collections::BTreeMap::new();
        for (i, j, v) in entries {
            match (self.unknown[i], self.unknown[j]) {
                (Some(a), Some(b)) => coo.push(a, b, v),
                (Some(a), None) => *coupling.entry((a, j)).or_insert(0.0) += v,
                _ => {}
            }
        }
        self.pinned_coupling = coupling.into_iter().map(|((a, j), v)| (a, j, v)).collect();
        self.factor = CscCholesky::factor(&CscMatrix::from(&coo))
            .expect("constraint system is positive definite");
    }

    /// Sets every beam's rest curvature (rad/mm); positive curls toward the
    /// section's thickness axis.
    pub fn set_curvature(&mut self, kappa: &[f64]) {
        self.links.clear();
        self.chords.clear();
        for (b, stations) in self.layout.beams.iter().enumerate() {
            let mut links = Vec::with_capacity(stations.len() - 1);
            let mut chords = Vec::with_capacity(stations.len() - 1);
            for (s, pair) in stations.windows(2).enumerate() {
                let shape = bent_segment(&self.reference, pair[0], pair[1], kappa[b]);
                self.segments[b][s].set_rest(&shape);
                links.push(std::array::from_fn(|c| Link {
                    a: pair[0][c],
                    b: pair[1][c],
                    rest: (shape[4 + c] - shape[c]).norm(),
                }));
                let first = (shape[0] + shape[1] + shape[2] + shape[3]) / 4.0;
                let second = (shape[4] + shape[5] + shape[6] + shape[7]) / 4.0;
                chords.push((second - first).norm());
            }
            self.links.push(links);
            self.chords.push(chords);
        }
    }

    /// Runs `iterations` local–global sweeps with a uniform per-particle
    /// `load` (force in stiffness units) acting on every free particle.
    /// Sweeps are Anderson-accelerated; an accelerated iterate that raises
    /// the energy is replaced by the plain sweep result.
    pub fn iterate(&mut self, p: &mut [Vector3<f64>], iterations: usize, load: Vector3<f64>) {
        if iterations == 0 {
            return;
        }
        let anchor = self.gather(p);
        let mut x = anchor.clone();
        let mut anderson = Anderson::new(ANDERSON_DEPTH);
        let mut last_energy = f64::INFINITY;
        let mut plain: Option<DMatrix<f64>> = None;
        for _ in 0..iterations {
            self.scatter(&x, p);
            let mut energy = self.local(p, load, &anchor);
            if energy > last_energy {
                if let Some(g) = &plain {
                    x.copy_from(g);
                    self.scatter(&x, p);
                    energy = self.local(p, load, &anchor);
                    anderson.reset();
                }
            }
            last_energy = energy;
            let g = self.global(p, load, &anchor);
            x = anderson.next(&x, &g);
            plain = Some(g);
        }
        if let Some(g) = &plain {
            self.scatter(g, p);
        }
    }

    fn gather(&self, p: &[Vector3<f64>]) -> DMatrix<f64> {
        let mut x = DMatrix::zeros(self.order.len(), 3);
        for (k, &i) in self.order.iter().enumerate() {
            x[(k, 0)] = p[i].x;
            x[(k, 1)] = p[i].y;
            x[(k, 2)] = p[i].z;
        }
        x
    }

    fn scatter(&self, x: &DMatrix<f64>, p: &mut [Vector3<f64>]) {
        for (k, &i) in self.order.iter().enumerate() {
            p[i] = Vector3::new(x[(k, 0)], x[(k, 1)], x[(k, 2)]);
        }
    }

    /// Fits every cluster rotation to `p` and returns the total energy.
    fn local(&mut self, p: &[Vector3<f64>], load: Vector3<f64>, anchor: &DMatrix<f64>) -> f64 {
        let w = self.weights;
        let mut energy = 0.0;
        for (segments, links) in self.segments.iter_mut().zip(&self.links) {
            for (cluster, quad) in segments.iter_mut().zip(links) {
                energy += 0.5 * w.bend * cluster.fit(p);
                energy += 0.5 * w.stretch * quad.iter().map(|l| l.misfit(p)).sum::<f64>();
            }
        }
        for cluster in &mut self.joints {
            energy += 0.5 * w.joint * cluster.fit(p);
        }
        for (k, &i) in self.order.iter().enumerate() {
            let a = Vector3::new(anchor[(k, 0)], anchor[(k, 1)], anchor[(k, 2)]);
            energy += 0.5 * PROXIMAL * (p[i] - a).norm_squared() - load.dot(&p[i]);
        }
        energy
    }

    /// Global step: positions minimizing the energy for the current cluster
    /// rotations and link directions.
    fn global(&self, p: &[Vector3<f64>], load: Vector3<f64>, anchor: &DMatrix<f64>) -> DMatrix<f64> {
        let mut rhs = vec![load; p.len()];
        for (segments, links) in self.segments.iter().zip(&self.links) {
            for (cluster, quad) in segments.iter().zip(links) {
                cluster.add_rhs(self.weights.bend, &mut rhs);
                for link in quad {
                    link.add_rhs(self.weights.stretch, p, &mut rhs);
                }
            }
        }
        for cluster in &self.joints {
            cluster.add_rhs(self.weights.joint, &mut rhs);
        }
        let mut b = anchor * PROXIMAL;
        for (k, &i) in self.order.iter().enumerate() {
            b[(k, 0)] += rhs[i].x;
            b[(k, 1)] += rhs[i].y;
            b[(k, 2)] += rhs[i].z;
        }
        self.subtract_pinned(p, &mut b);
        self.factor.solve_mut(&mut b);
        b
    }

    /// Moves the pinned particles' matrix columns to the right-hand side.
    fn subtract_pinned(&self, p: &[Vector3<f64>], b: &mut DMatrix<f64>) {
        for &(k, j, v) in &self.pinned_coupling {
            let q = p[j] * v;
            b[(k, 0)] -= q.x;
            b[(k, 1)] -= q.y;
            b[(k, 2)] -= q.z;
        }
    }

    /// Largest relative change of any segment's centre-to-centre chord from
    /// its rest value; infinite if any position is non-finite.
    pub fn max_strain(&self, p: &[Vector3<f64>]) -> f64 {
        let mut worst: f64 = 0.0;
        for (stations, chords) in self.layout.beams.iter().zip(&self.chords) {
            for (pair, &rest) in stations.windows(2).zip(chords) {
                let center = |q: &[usize; 4]| q.iter().map(|&i| p[i]).sum::<Vector3<f64>>() / 4.0;
                let len = (center(&pair[1]) - center(&pair[0])).norm();
                if !len.is_finite() {
                    return f64::INFINITY;
                }
                worst = worst.max((len / rest - 1.0).abs());
            }
        }
        worst
    }
}

/// Rest shape of the segment between two stations: the first station as in
/// the reference, the second rotated by `kappa · chord` about the first
/// station's width axis and moved along the corresponding circular arc.
fn bent_segment(
    reference: &[Vector3<f64>],
    first: [usize; 4],
    second: [usize; 4],
    kappa: f64,
) -> Vec<Vector3<f64>> {
    let mut shape: Vec<_> = first.iter().chain(&second).map(|&i| reference[i]).collect();
    if kappa == 0.0 {
        return shape;
    }
    let (c0, frame) = station_frame([shape[0], shape[1], shape[2], shape[3]]);
    let c1 = (shape[4] + shape[5] + shape[6] + shape[7]) / 4.0;
    let rel = frame.transpose() * (c1 - c0);
    let theta = kappa * rel.norm();
    let half = Rotation3::from_axis_angle(&Vector3::y_axis(), -theta / 2.0);
    let full = Rotation3::from_axis_angle(&Vector3::y_axis(), -theta);
    let chord = half * rel * sinc(theta / 2.0);
    for q in &mut shape[4..] {
        let local = frame.transpose() * (*q - c0);
        *q = c0 + frame * (chord + full * (local - rel));
    }
    shape
}

/// Type-II Anderson acceleration of a fixed-point map `x ↦ g(x)`.
struct Anderson {
    depth: usize,
    last: Option<(DMatrix<f64>, DMatrix<f64>)>,
    dg: Vec<DMatrix<f64>>,
    df: Vec<DMatrix<f64>>,
}

impl Anderson {
    fn new(depth: usize) -> Anderson {
        Anderson {
            depth,
            last: None,
            dg: Vec::new(),
            df: Vec::new(),
        }
    }

    fn reset(&mut self) {
        self.last = None;
        self.dg.clear();
        self.df.clear();
    }

    /// Next iterate given the current point `x` and its image `g`.
    fn next(&mut self, x: &DMatrix<f64>, g: &DMatrix<f64>) -> DMatrix<f64> {
        let f = g - x;
        if let Some((g_prev, f_prev)) = self.last.take() {
            if self.dg.len() == self.depth {
                self.dg.remove(0);
                self.df.remove(0);
            }
            self.dg.push(g - g_prev);
            self.df.push(&f - f_prev);
        }
        self.last = Some((g.clone(), f.clone()));
        let m = self.df.len();
        if m == 0 {
            return g.clone();
        }
        let mut normal = DMatrix::zeros(m, m);
        let mut rhs = nalgebra::DVector::zeros(m);
        for i in 0..m {
            for j in 0..=i {
                let v = self.df[i].dot(&self.df[j]);
                normal[(i, j)] = v;
                normal[(j, i)] = v;
            }
            rhs[i] = self.df[i].dot(&f);
        }
        let scale = (0..m).map(|i| normal[(i, i)]).fold(0.0, f64::max);
        for i in 0..m {
            normal[(i, i)] += 1e-10 * scale + f64::MIN_POSITIVE;
        }
        match normal.cholesky() {
            Some(chol) => {
                let theta = chol.solve(&rhs);
                let mut out = g.clone();
                for (dgi, t) in self.dg.iter().zip(theta.iter()) {
                    out -= dgi * *t;
                }
                out
            }
            None => g.clone(),
        }
    }
}
