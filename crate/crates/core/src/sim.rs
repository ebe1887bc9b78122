//! Deterministic 2D rigid-body simulator: circles and rectangles in a box
//! under gravity.
//!
//! One frame is `substeps` substeps of semi-implicit Euler integration
//! followed by contact detection and a single sequential-impulse pass. The
//! solver keeps no state between substeps (no warm starting), so a frame is
//! fully described by the bodies' kinematic state. States at frame
//! boundaries are rounded to `f32` so that a stored frame restarts the
//! simulation exactly.

use std::f64::consts::PI;
use std::fmt;
use std::str::FromStr;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Collision geometry, in metres.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub enum Shape {
    Circle { radius: f64 },
    Rect { half_w: f64, half_h: f64 },
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ShapeKind {
    Circle,
    Rect,
}

impl Shape {
    pub fn kind(&self) -> ShapeKind {
        match self {
            Shape::Circle { .. } => ShapeKind::Circle,
            Shape::Rect { .. } => ShapeKind::Rect,
        }
    }

    pub fn area(&self) -> f64 {
        match *self {
            Shape::Circle { radius } => PI * radius * radius,
            Shape::Rect { half_w, half_h } => 4.0 * half_w * half_h,
        }
    }

    /// Moment of inertia about the centroid for mass `m`.
    pub fn inertia(&self, m: f64) -> f64 {
        match *self {
            Shape::Circle { radius } => 0.5 * m * radius * radius,
            Shape::Rect { half_w, half_h } => {
                let (w, h) = (2.0 * half_w, 2.0 * half_h);
                m * (w * w + h * h) / 12.0
            }
        }
    }

    /// Radius of the smallest centred circle containing the shape.
    pub fn bounding_radius(&self) -> f64 {
        match *self {
            Shape::Circle { radius } => radius,
            Shape::Rect { half_w, half_h } => half_w.hypot(half_h),
        }
    }

    /// Half extents of the axis-aligned bounding box at angle `theta`.
    pub fn aabb_half(&self, theta: f64) -> [f64; 2] {
        match *self {
            Shape::Circle { radius } => [radius, radius],
            Shape::Rect { half_w, half_h } => {
                let (s, c) = theta.sin_cos();
                [
                    half_w * c.abs() + half_h * s.abs(),
                    half_w * s.abs() + half_h * c.abs(),
                ]
            }
        }
    }

    /// Four characteristic points relative to the centre: the corners of a
    /// rectangle, or points on a circle at `theta + kπ/2`.
    pub fn vertex_offsets(&self, theta: f64) -> [[f64; 2]; 4] {
        match *self {
            Shape::Circle { radius } => std::array::from_fn(|k| {
                let a = theta + k as f64 * PI / 2.0;
                [radius * a.cos(), radius * a.sin()]
            }),
            Shape::Rect { half_w, half_h } => {
                let local = [
                    [-half_w, -half_h],
                    [half_w, -half_h],
                    [half_w, half_h],
                    [-half_w, half_h],
                ];
                local.map(|p| rotate(p, theta))
            }
        }
    }
}

/// Kinematic state of one object: position (m), velocity (m/s), angle (rad)
/// and angular velocity (rad/s).
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ObjectState {
    pub x: f64,
    pub y: f64,
    pub vx: f64,
    pub vy: f64,
    pub theta: f64,
    pub omega: f64,
}

impl ObjectState {
    pub fn to_array(&self) -> [f64; 6] {
        [self.x, self.y, self.vx, self.vy, self.theta, self.omega]
    }

    pub fn from_array(a: [f64; 6]) -> Self {
        ObjectState {
            x: a[0],
            y: a[1],
            vx: a[2],
            vy: a[3],
            theta: a[4],
            omega: a[5],
        }
    }

    pub fn is_finite(&self) -> bool {
        self.to_array().iter().all(|v| v.is_finite())
    }
}

/// Contact types seen while producing a frame.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ContactLabels {
    pub object_wall: bool,
    pub object_object: bool,
}

impl ContactLabels {
    pub const FREE: ContactLabels = ContactLabels {
        object_wall: false,
        object_object: false,
    };

    pub fn is_free(&self) -> bool {
        !self.object_wall && !self.object_object
    }

    /// bit0 = object_wall, bit1 = object_object.
    pub fn to_byte(self) -> u8 {
        self.object_wall as u8 | (self.object_object as u8) << 1
    }

    pub fn from_byte(b: u8) -> Result<Self> {
        if b > 3 {
            return Err(Error::Format(format!("invalid contact label byte {b}")));
        }
        Ok(ContactLabels {
            object_wall: b & 1 != 0,
            object_object: b & 2 != 0,
        })
    }

    pub fn union(self, other: ContactLabels) -> Self {
        ContactLabels {
            object_wall: self.object_wall || other.object_wall,
            object_object: self.object_object || other.object_object,
        }
    }
}

/// Physical constants and solver settings.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct WorldConfig {
    /// Downward acceleration, m/s².
    pub gravity: f64,
    /// Substep length, s.
    pub dt: f64,
    pub substeps: usize,
    pub restitution_objects: f64,
    pub restitution_walls: f64,
    pub friction: f64,
    /// Approach speeds below this bounce with zero restitution, m/s.
    pub restitution_threshold: f64,
    pub linear_damping: f64,
    pub angular_damping: f64,
    /// `[x_min, y_min, x_max, y_max]`, m.
    pub arena: [f64; 4],
    pub correction_fraction: f64,
    pub slop: f64,
    pub iterations: usize,
    pub density: f64,
}

impl Default for WorldConfig {
    fn default() -> Self {
        WorldConfig {
            gravity: 9.81,
            dt: 1.0 / 480.0,
            substeps: 8,
            restitution_objects: 1.0,
            restitution_walls: 0.9,
            friction: 1.0,
            restitution_threshold: 0.05,
            linear_damping: 0.999,
            angular_damping: 0.999,
            arena: [0.0, 0.0, 1.0, 1.0],
            correction_fraction: 0.2,
            slop: 5e-4,
            iterations: 1,
            density: 1.0,
        }
    }
}

impl WorldConfig {
    pub fn validate(&self) -> Result<()> {
        let [x0, y0, x1, y1] = self.arena;
        let checks = [
            (self.dt > 0.0, "dt must be positive"),
            (self.substeps > 0, "substeps must be positive"),
            ((0.0..=1.0).contains(&self.restitution_objects), "restitution_objects outside [0, 1]"),
            ((0.0..=1.0).contains(&self.restitution_walls), "restitution_walls outside [0, 1]"),
            (self.friction >= 0.0, "friction must be non-negative"),
            (x1 > x0 && y1 > y0, "arena must have positive extent"),
            (self.density > 0.0, "density must be positive"),
        ];
        for (ok, msg) in checks {
            if !ok {
                return Err(Error::Config(msg.into()));
            }
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Body {
    pub shape: Shape,
    pub state: ObjectState,
    pub mass: f64,
    pub inertia: f64,
}

impl Body {
    pub fn new(shape: Shape, state: ObjectState, density: f64) -> Self {
        let mass = density * shape.area();
        Body {
            shape,
            state,
            mass,
            inertia: shape.inertia(mass),
        }
    }

    fn pos(&self) -> [f64; 2] {
        [self.state.x, self.state.y]
    }

    /// Velocity of the material point at offset `r` from the centre.
    fn point_velocity(&self, r: [f64; 2]) -> [f64; 2] {
        [
            self.state.vx - self.state.omega * r[1],
            self.state.vy + self.state.omega * r[0],
        ]
    }

    fn apply_impulse(&mut self, p: [f64; 2], r: [f64; 2], sign: f64) {
        self.state.vx += sign * p[0] / self.mass;
        self.state.vy += sign * p[1] / self.mass;
        self.state.omega += sign * cross(r, p) / self.inertia;
    }
}

/// One contact point. The normal points from body `a` towards body `b`, or
/// out of the arena when `b` is a wall.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Contact {
    pub a: usize,
    pub b: Option<usize>,
    pub point: [f64; 2],
    pub normal: [f64; 2],
    pub depth: f64,
}

impl Contact {
    pub fn is_wall(&self) -> bool {
        self.b.is_none()
    }
}

pub fn classify_frame(contacts: &[Contact]) -> ContactLabels {
    ContactLabels {
        object_wall: contacts.iter().any(|c| c.is_wall()),
        object_object: contacts.iter().any(|c| !c.is_wall()),
    }
}

fn dot(a: [f64; 2], b: [f64; 2]) -> f64 {
    a[0] * b[0] + a[1] * b[1]
}

fn cross(a: [f64; 2], b: [f64; 2]) -> f64 {
    a[0] * b[1] - a[1] * b[0]
}

fn sub(a: [f64; 2], b: [f64; 2]) -> [f64; 2] {
    [a[0] - b[0], a[1] - b[1]]
}

fn add(a: [f64; 2], b: [f64; 2]) -> [f64; 2] {
    [a[0] + b[0], a[1] + b[1]]
}

fn scale(a: [f64; 2], s: f64) -> [f64; 2] {
    [a[0] * s, a[1] * s]
}

fn rotate(p: [f64; 2], theta: f64) -> [f64; 2] {
    let (s, c) = theta.sin_cos();
    [c * p[0] - s * p[1], s * p[0] + c * p[1]]
}

fn circle_circle(i: usize, a: &Body, ra: f64, j: usize, b: &Body, rb: f64) -> Option<Contact> {
    let d = sub(b.pos(), a.pos());
    let dist = d[0].hypot(d[1]);
    if dist >= ra + rb {
        return None;
    }
    let normal = if dist > 1e-12 { scale(d, 1.0 / dist) } else { [0.0, 1.0] };
    Some(Contact {
        a: i,
        b: Some(j),
        point: add(a.pos(), scale(normal, ra)),
        normal,
        depth: ra + rb - dist,
    })
}

/// Rectangle `i` against circle `j`; the normal points into the circle.
fn rect_circle(i: usize, rect: &Body, hw: f64, hh: f64, j: usize, circle: &Body, r: f64) -> Option<Contact> {
    let theta = rect.state.theta;
    let local = rotate(sub(circle.pos(), rect.pos()), -theta);
    let clamped = [local[0].clamp(-hw, hw), local[1].clamp(-hh, hh)];
    let (normal_local, depth, closest) = if clamped == local {
        let dx = hw - local[0].abs();
        let dy = hh - local[1].abs();
        if dx < dy {
            let s = if local[0] >= 0.0 { 1.0 } else { -1.0 };
            ([s, 0.0], dx + r, [s * hw, local[1]])
        } else {
            let s = if local[1] >= 0.0 { 1.0 } else { -1.0 };
            ([0.0, s], dy + r, [local[0], s * hh])
        }
    } else {
        let d = sub(local, clamped);
        let dist = d[0].hypot(d[1]);
        if dist >= r {
            return None;
        }
        (scale(d, 1.0 / dist), r - dist, clamped)
    };
    Some(Contact {
        a: i,
        b: Some(j),
        point: add(rect.pos(), rotate(closest, theta)),
        normal: rotate(normal_local, theta),
        depth,
    })
}

struct Polygon {
    verts: [[f64; 2]; 4],
    normals: [[f64; 2]; 4],
}

fn polygon(body: &Body, hw: f64, hh: f64) -> Polygon {
    let theta = body.state.theta;
    let offsets = Shape::Rect { half_w: hw, half_h: hh }.vertex_offsets(theta);
    let local_normals = [[0.0, -1.0], [1.0, 0.0], [0.0, 1.0], [-1.0, 0.0]];
    Polygon {
        verts: offsets.map(|o| add(body.pos(), o)),
        normals: local_normals.map(|n| rotate(n, theta)),
    }
}

/// Edge of `p` with the largest separation from `q`.
fn max_separation(p: &Polygon, q: &Polygon) -> (usize, f64) {
    let mut best = (0, f64::NEG_INFINITY);
    for (e, n) in p.normals.iter().enumerate() {
        let sep = q
            .verts
            .iter()
            .map(|v| dot(*n, sub(*v, p.verts[e])))
            .fold(f64::INFINITY, f64::min);
        if sep > best.1 {
            best = (e, sep);
        }
    }
    best
}

fn clip_segment(seg: [[f64; 2]; 2], n: [f64; 2], offset: f64) -> Option<[[f64; 2]; 2]> {
    let d0 = dot(n, seg[0]) - offset;
    let d1 = dot(n, seg[1]) - offset;
    let mut out = Vec::with_capacity(2);
    if d0 <= 0.0 {
        out.push(seg[0]);
    }
    if d1 <= 0.0 {
        out.push(seg[1]);
    }
    if d0 * d1 < 0.0 {
        let t = d0 / (d0 - d1);
        out.push(add(seg[0], scale(sub(seg[1], seg[0]), t)));
    }
    (out.len() >= 2).then(|| [out[0], out[1]])
}

/// Separating-axis test between two rectangles with a clipped manifold of
/// up to two points.
fn rect_rect(i: usize, a: &Body, ha: [f64; 2], j: usize, b: &Body, hb: [f64; 2], out: &mut Vec<Contact>) {
    let pa = polygon(a, ha[0], ha[1]);
    let pb = polygon(b, hb[0], hb[1]);
    let (ea, sa) = max_separation(&pa, &pb);
    if sa > 0.0 {
        return;
    }
    let (eb, sb) = max_separation(&pb, &pa);
    if sb > 0.0 {
        return;
    }
    let (reference, incident, edge, flip) = if sb > sa + 1e-9 {
        (&pb, &pa, eb, true)
    } else {
        (&pa, &pb, ea, false)
    };
    let n = reference.normals[edge];
    let inc = (0..4)
        .min_by(|&x, &y| {
            dot(incident.normals[x], n)
                .partial_cmp(&dot(incident.normals[y], n))
                .expect("finite normals")
        })
        .expect("four edges");
    let seg = [incident.verts[inc], incident.verts[(inc + 1) % 4]];
    let v1 = reference.verts[edge];
    let v2 = reference.verts[(edge + 1) % 4];
    let tangent = scale(sub(v2, v1), 1.0 / sub(v2, v1)[0].hypot(sub(v2, v1)[1]));
    let Some(seg) = clip_segment(seg, scale(tangent, -1.0), -dot(tangent, v1)) else { return };
    let Some(seg) = clip_segment(seg, tangent, dot(tangent, v2)) else { return };
    let normal = if flip { scale(n, -1.0) } else { n };
    for p in seg {
        let sep = dot(n, sub(p, v1));
        if sep <= 0.0 {
            out.push(Contact {
                a: i,
                b: Some(j),
                point: p,
                normal,
                depth: -sep,
            });
        }
    }
}

fn wall_contacts(i: usize, body: &Body, arena: [f64; 4], out: &mut Vec<Contact>) {
    let [x0, y0, x1, y1] = arena;
    let points: Vec<([f64; 2], f64)> = match body.shape {
        Shape::Circle { radius } => vec![(body.pos(), radius)],
        Shape::Rect { .. } => body
            .shape
            .vertex_offsets(body.state.theta)
            .iter()
            .map(|o| (add(body.pos(), *o), 0.0))
            .collect(),
    };
    let walls = [
        ([-1.0, 0.0], 0usize, -1.0, x0),
        ([1.0, 0.0], 0, 1.0, x1),
        ([0.0, -1.0], 1, -1.0, y0),
        ([0.0, 1.0], 1, 1.0, y1),
    ];
    for (normal, axis, side, bound) in walls {
        for &(p, r) in &points {
            let depth = side * (p[axis] + side * r - bound);
            if depth > 0.0 {
                let mut point = p;
                point[axis] = bound;
                out.push(Contact {
                    a: i,
                    b: None,
                    point,
                    normal,
                    depth,
                });
            }
        }
    }
}

/// All body–body and body–wall contacts in a configuration.
pub fn detect_contacts(bodies: &[Body], arena: [f64; 4]) -> Vec<Contact> {
    let mut out = Vec::new();
    for i in 0..bodies.len() {
        for j in i + 1..bodies.len() {
            let (a, b) = (&bodies[i], &bodies[j]);
            let reach = a.shape.bounding_radius() + b.shape.bounding_radius();
            let d = sub(b.pos(), a.pos());
            if d[0].hypot(d[1]) >= reach {
                continue;
            }
            match (a.shape, b.shape) {
                (Shape::Circle { radius: ra }, Shape::Circle { radius: rb }) => {
                    out.extend(circle_circle(i, a, ra, j, b, rb))
                }
                (Shape::Rect { half_w, half_h }, Shape::Circle { radius }) => {
                    out.extend(rect_circle(i, a, half_w, half_h, j, b, radius))
                }
                (Shape::Circle { radius }, Shape::Rect { half_w, half_h }) => {
                    out.extend(rect_circle(j, b, half_w, half_h, i, a, radius).map(|c| Contact {
                        a: i,
                        b: Some(j),
                        normal: scale(c.normal, -1.0),
                        ..c
                    }))
                }
                (
                    Shape::Rect { half_w: aw, half_h: ah },
                    Shape::Rect { half_w: bw, half_h: bh },
                ) => rect_rect(i, a, [aw, ah], j, b, [bw, bh], &mut out),
            }
        }
    }
    for (i, body) in bodies.iter().enumerate() {
        wall_contacts(i, body, arena, &mut out);
    }
    out
}

/// A set of bodies evolving under one [`WorldConfig`].
#[derive(Clone, Debug)]
pub struct World {
    pub config: WorldConfig,
    pub bodies: Vec<Body>,
    substep: u64,
}

impl World {
    pub fn new(config: WorldConfig, bodies: Vec<Body>) -> Result<Self> {
        config.validate()?;
        Ok(World {
            config,
            bodies,
            substep: 0,
        })
    }

    pub fn from_states(config: WorldConfig, shapes: &[Shape], states: &[ObjectState]) -> Result<Self> {
        if shapes.len() != states.len() {
            return Err(Error::Shape(format!(
                "{} shapes for {} states",
                shapes.len(),
                states.len()
            )));
        }
        let bodies = shapes
            .iter()
            .zip(states)
            .map(|(s, st)| Body::new(*s, *st, config.density))
            .collect();
        World::new(config, bodies)
    }

    pub fn states(&self) -> Vec<ObjectState> {
        self.bodies.iter().map(|b| b.state).collect()
    }

    pub fn contacts(&self) -> Vec<Contact> {
        detect_contacts(&self.bodies, self.config.arena)
    }

    pub fn kinetic_energy(&self) -> f64 {
        self.bodies
            .iter()
            .map(|b| {
                let s = &b.state;
                0.5 * b.mass * (s.vx * s.vx + s.vy * s.vy) + 0.5 * b.inertia * s.omega * s.omega
            })
            .sum()
    }

    pub fn momentum(&self) -> [f64; 2] {
        self.bodies.iter().fold([0.0, 0.0], |acc, b| {
            add(acc, [b.mass * b.state.vx, b.mass * b.state.vy])
        })
    }

    /// One substep; returns the contacts that were resolved.
    pub fn substep(&mut self) -> Result<Vec<Contact>> {
        let c = self.config.clone();
        for b in &mut self.bodies {
            let s = &mut b.state;
            s.vy -= c.gravity * c.dt;
            s.vx *= c.linear_damping;
            s.vy *= c.linear_damping;
            s.omega *= c.angular_damping;
            s.x += s.vx * c.dt;
            s.y += s.vy * c.dt;
            s.theta += s.omega * c.dt;
        }
        let contacts = self.contacts();
        for _ in 0..c.iterations {
            for contact in &contacts {
                self.resolve_velocity(contact);
            }
        }
        for contact in contacts.iter().filter(|c| !c.is_wall()) {
            self.correct_position(contact);
        }
        self.keep_inside();
        self.substep += 1;
        if let Some(body) = self.bodies.iter().position(|b| !b.state.is_finite()) {
            return Err(Error::SimulationDiverged {
                body,
                substep: self.substep,
            });
        }
        Ok(contacts)
    }

    /// One frame; returns the union of contact types over its substeps.
    pub fn step(&mut self) -> Result<ContactLabels> {
        let mut labels = ContactLabels::FREE;
        for _ in 0..self.config.substeps {
            labels = labels.union(classify_frame(&self.substep()?));
        }
        for b in &mut self.bodies {
            let s = &mut b.state;
            s.theta = wrap_angle(s.theta);
            *s = ObjectState::from_array(s.to_array().map(|v| v as f32 as f64));
        }
        Ok(labels)
    }

    fn resolve_velocity(&mut self, c: &Contact) {
        let cfg = &self.config;
        let n = c.normal;
        let a = &self.bodies[c.a];
        let ra = sub(c.point, a.pos());
        let (inv_mb, inv_ib, rb, vb) = match c.b {
            Some(j) => {
                let b = &self.bodies[j];
                let rb = sub(c.point, b.pos());
                (1.0 / b.mass, 1.0 / b.inertia, rb, b.point_velocity(rb))
            }
            None => (0.0, 0.0, [0.0, 0.0], [0.0, 0.0]),
        };
        let rel = sub(vb, a.point_velocity(ra));
        let vn = dot(rel, n);
        if vn >= 0.0 {
            return;
        }
        let (inv_ma, inv_ia) = (1.0 / a.mass, 1.0 / a.inertia);
        let kn = inv_ma + inv_mb + inv_ia * cross(ra, n).powi(2) + inv_ib * cross(rb, n).powi(2);
        let e = if -vn < cfg.restitution_threshold {
            0.0
        } else if c.is_wall() {
            cfg.restitution_walls
        } else {
            cfg.restitution_objects
        };
        let jn = -(1.0 + e) * vn / kn;
        let friction = cfg.friction;
        self.exchange(c, scale(n, jn), ra, rb);

        let a = &self.bodies[c.a];
        let vb = match c.b {
            Some(j) => self.bodies[j].point_velocity(rb),
            None => [0.0, 0.0],
        };
        let rel = sub(vb, a.point_velocity(ra));
        let tangential = sub(rel, scale(n, dot(rel, n)));
        let speed = tangential[0].hypot(tangential[1]);
        if speed < 1e-12 {
            return;
        }
        let t = scale(tangential, 1.0 / speed);
        let kt = inv_ma + inv_mb + inv_ia * cross(ra, t).powi(2) + inv_ib * cross(rb, t).powi(2);
        let jt = (-dot(rel, t) / kt).clamp(-friction * jn, friction * jn);
        self.exchange(c, scale(t, jt), ra, rb);
    }

    fn exchange(&mut self, c: &Contact, p: [f64; 2], ra: [f64; 2], rb: [f64; 2]) {
        self.bodies[c.a].apply_impulse(p, ra, -1.0);
        if let Some(j) = c.b {
            self.bodies[j].apply_impulse(p, rb, 1.0);
        }
    }

    fn correct_position(&mut self, c: &Contact) {
        let Some(j) = c.b else { return };
        let excess = c.depth - self.config.slop;
        if excess <= 0.0 {
            return;
        }
        let (wa, wb) = (1.0 / self.bodies[c.a].mass, 1.0 / self.bodies[j].mass);
        let shift = self.config.correction_fraction * excess / (wa + wb);
        let a = &mut self.bodies[c.a].state;
        a.x -= c.normal[0] * shift * wa;
        a.y -= c.normal[1] * shift * wa;
        let b = &mut self.bodies[j].state;
        b.x += c.normal[0] * shift * wb;
        b.y += c.normal[1] * shift * wb;
    }

    /// Projects every body back inside the arena.
    fn keep_inside(&mut self) {
        let [x0, y0, x1, y1] = self.config.arena;
        for b in &mut self.bodies {
            let [hx, hy] = b.shape.aabb_half(b.state.theta);
            let s = &mut b.state;
            s.x = s.x.max(x0 + hx).min(x1 - hx);
            s.y = s.y.max(y0 + hy).min(y1 - hy);
        }
    }
}

/// Maps an angle into `(-π, π]`.
pub fn wrap_angle(theta: f64) -> f64 {
    let w = theta.rem_euclid(2.0 * PI);
    if w > PI {
        w - 2.0 * PI
    } else {
        w
    }
}

/// Object counts per shape kind, written like `6xcircle+4xrect`.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ObjectMix(pub Vec<ShapeKind>);

impl ObjectMix {
    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

impl FromStr for ObjectMix {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        let bad = || Error::Config(format!("invalid object spec `{s}`, expected e.g. `6xcircle+4xrect`"));
        let mut kinds = Vec::new();
        for part in s.split('+') {
            let (count, kind) = part.trim().split_once('x').ok_or_else(bad)?;
            let count: usize = count.parse().map_err(|_| bad())?;
            let kind = match kind {
                "circle" | "circles" => ShapeKind::Circle,
                "rect" | "rects" => ShapeKind::Rect,
                _ => return Err(bad()),
            };
            kinds.extend(std::iter::repeat(kind).take(count));
        }
        Ok(ObjectMix(kinds))
    }
}

impl fmt::Display for ObjectMix {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let mut parts = Vec::new();
        let mut iter = self.0.iter().peekable();
        while let Some(kind) = iter.next() {
            let mut n = 1;
            while iter.peek() == Some(&kind) {
                iter.next();
                n += 1;
            }
            let name = match kind {
                ShapeKind::Circle => "circle",
                ShapeKind::Rect => "rect",
            };
            parts.push(format!("{n}x{name}"));
        }
        if parts.is_empty() {
            parts.push("0xcircle".into());
        }
        f.write_str(&parts.join("+"))
    }
}

/// How initial states and shapes are drawn.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EpisodeConfig {
    pub frames: usize,
    pub circle_radius: [f64; 2],
    pub rect_half_extent: [f64; 2],
    /// Each velocity component is uniform in `[-v, v]`, m/s.
    pub max_speed: f64,
    /// Angular velocity is uniform in `[-w, w]`, rad/s.
    pub max_spin: f64,
    pub max_attempts: usize,
}

impl Default for EpisodeConfig {
    fn default() -> Self {
        EpisodeConfig {
            frames: 128,
            circle_radius: [0.05, 0.1],
            rect_half_extent: [0.04, 0.08],
            max_speed: 1.0,
            max_spin: 1.0,
            max_attempts: 1000,
        }
    }
}

/// A simulated trajectory: `frames[t][k]` is object `k` at frame `t`, and
/// `labels[t]` the contact types encountered while producing frame `t`.
#[derive(Clone, Debug, PartialEq)]
pub struct Episode {
    pub shapes: Vec<Shape>,
    pub frames: Vec<Vec<ObjectState>>,
    pub labels: Vec<ContactLabels>,
}

impl Episode {
    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }

    pub fn objects(&self) -> usize {
        self.shapes.len()
    }
}

fn uniform(rng: &mut impl Rng, range: [f64; 2]) -> f64 {
    if range[1] > range[0] {
        rng.gen_range(range[0]..range[1])
    } else {
        range[0]
    }
}

/// Shape sizes are rounded to `f32` so stored episodes describe the
/// simulated bodies exactly.
pub fn sample_shapes(rng: &mut impl Rng, mix: &ObjectMix, cfg: &EpisodeConfig) -> Vec<Shape> {
    let mut draw = |range| uniform(rng, range) as f32 as f64;
    mix.0
        .iter()
        .map(|kind| match kind {
            ShapeKind::Circle => Shape::Circle {
                radius: draw(cfg.circle_radius),
            },
            ShapeKind::Rect => Shape::Rect {
                half_w: draw(cfg.rect_half_extent),
                half_h: draw(cfg.rect_half_extent),
            },
        })
        .collect()
}

/// Non-overlapping initial states, one bounding radius away from the walls.
pub fn sample_initial_states(
    rng: &mut impl Rng,
    shapes: &[Shape],
    arena: [f64; 4],
    cfg: &EpisodeConfig,
) -> Result<Vec<ObjectState>> {
    let [x0, y0, x1, y1] = arena;
    let mut placed: Vec<([f64; 2], f64)> = Vec::with_capacity(shapes.len());
    let mut states = Vec::with_capacity(shapes.len());
    for shape in shapes {
        let r = shape.bounding_radius();
        if x1 - x0 <= 2.0 * r || y1 - y0 <= 2.0 * r {
            return Err(Error::Placement {
                objects: shapes.len(),
                attempts: 0,
            });
        }
        let mut found = None;
        for _ in 0..cfg.max_attempts {
            let p = [rng.gen_range(x0 + r..x1 - r), rng.gen_range(y0 + r..y1 - r)];
            let clear = placed.iter().all(|(q, rq)| {
                let d = sub(p, *q);
                d[0].hypot(d[1]) > r + rq
            });
            if clear {
                found = Some(p);
                break;
            }
        }
        let p = found.ok_or(Error::Placement {
            objects: shapes.len(),
            attempts: cfg.max_attempts,
        })?;
        placed.push((p, r));
        let v = cfg.max_speed;
        let w = cfg.max_spin;
        let state = ObjectState {
            x: p[0],
            y: p[1],
            vx: if v > 0.0 { rng.gen_range(-v..=v) } else { 0.0 },
            vy: if v > 0.0 { rng.gen_range(-v..=v) } else { 0.0 },
            theta: wrap_angle(rng.gen_range(-PI..PI)),
            omega: if w > 0.0 { rng.gen_range(-w..=w) } else { 0.0 },
        };
        states.push(ObjectState::from_array(state.to_array().map(|v| v as f32 as f64)));
    }
    Ok(states)
}

/// Samples shapes and initial conditions and simulates `cfg.frames` frames;
/// frame 0 is the initial state.
pub fn sample_episode(
    rng: &mut impl Rng,
    mix: &ObjectMix,
    world: &WorldConfig,
    cfg: &EpisodeConfig,
) -> Result<Episode> {
    let shapes = sample_shapes(rng, mix, cfg);
    let states = sample_initial_states(rng, &shapes, world.arena, cfg)?;
    simulate(world.clone(), &shapes, &states, cfg.frames)
}

/// Runs the simulator from given initial states.
pub fn simulate(
    world: WorldConfig,
    shapes: &[Shape],
    initial: &[ObjectState],
    frames: usize,
) -> Result<Episode> {
    let mut w = World::from_states(world, shapes, initial)?;
    let mut out = Episode {
        shapes: shapes.to_vec(),
        frames: Vec::with_capacity(frames),
        labels: Vec::with_capacity(frames),
    };
    if frames == 0 {
        return Ok(out);
    }
    out.frames.push(w.states());
    out.labels.push(classify_frame(&w.contacts()));
    for _ in 1..frames {
        out.labels.push(w.step()?);
        out.frames.push(w.states());
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn still(x: f64, y: f64) -> ObjectState {
        ObjectState {
            x,
            y,
            ..Default::default()
        }
    }

    fn vacuum() -> WorldConfig {
        WorldConfig {
            gravity: 0.0,
            linear_damping: 1.0,
            angular_damping: 1.0,
            ..WorldConfig::default()
        }
    }

    #[test]
    fn inertia_formulas() {
        let c = Shape::Circle { radius: 0.1 };
        assert!((c.inertia(2.0) - 0.01).abs() < 1e-15);
        let r = Shape::Rect { half_w: 0.1, half_h: 0.05 };
        assert!((r.inertia(3.0) - 3.0 * (0.04 + 0.01) / 12.0).abs() < 1e-15);
    }

    #[test]
    fn free_fall_one_frame() {
        let cfg = WorldConfig {
            linear_damping: 1.0,
            angular_damping: 1.0,
            ..WorldConfig::default()
        };
        let mut w = World::from_states(cfg.clone(), &[Shape::Circle { radius: 0.05 }], &[still(0.5, 0.5)]).unwrap();
        let labels = w.step().unwrap();
        assert!(labels.is_free());
        let s = w.states()[0];
        let expected = -cfg.gravity * cfg.dt * cfg.substeps as f64;
        assert!((s.vy - expected).abs() < 1e-6);
        assert_eq!(s.x, 0.5);
    }

    #[test]
    fn distant_and_overlapping_circles() {
        let a = Body::new(Shape::Circle { radius: 0.1 }, still(0.2, 0.5), 1.0);
        let b = Body::new(Shape::Circle { radius: 0.1 }, still(0.7, 0.5), 1.0);
        assert!(detect_contacts(&[a.clone(), b], [0.0, 0.0, 1.0, 1.0]).is_empty());
        let b = Body::new(Shape::Circle { radius: 0.1 }, still(0.35, 0.5), 1.0);
        let c = detect_contacts(&[a, b], [0.0, 0.0, 1.0, 1.0]);
        assert_eq!(c.len(), 1);
        assert!((c[0].depth - 0.05).abs() < 1e-12);
        assert!((c[0].normal[0] - 1.0).abs() < 1e-12);
    }

    #[test]
    fn tilted_rect_touches_floor_with_one_corner() {
        let shape = Shape::Rect { half_w: 0.1, half_h: 0.05 };
        let theta = 0.3;
        let [_, hy] = shape.aabb_half(theta);
        let body = Body::new(shape, ObjectState { x: 0.5, y: hy - 0.002, theta, ..Default::default() }, 1.0);
        let c = detect_contacts(&[body], [0.0, 0.0, 1.0, 1.0]);
        assert_eq!(c.len(), 1);
        assert!(c[0].is_wall());
        assert_eq!(c[0].normal, [0.0, -1.0]);
        assert!((c[0].depth - 0.002).abs() < 1e-12);
    }

    #[test]
    fn stacked_rects_give_two_point_manifold() {
        let shape = Shape::Rect { half_w: 0.1, half_h: 0.05 };
        let a = Body::new(shape, still(0.5, 0.3), 1.0);
        let b = Body::new(shape, still(0.52, 0.398), 1.0);
        let c = detect_contacts(&[a, b], [0.0, 0.0, 1.0, 1.0]);
        assert_eq!(c.len(), 2);
        for p in &c {
            assert!((p.depth - 0.002).abs() < 1e-12);
            assert!((p.normal[1] - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn circle_against_rect_face() {
        let rect = Body::new(Shape::Rect { half_w: 0.1, half_h: 0.1 }, still(0.5, 0.5), 1.0);
        let circle = Body::new(Shape::Circle { radius: 0.05 }, still(0.64, 0.5), 1.0);
        let c = detect_contacts(&[circle, rect], [0.0, 0.0, 1.0, 1.0]);
        assert_eq!(c.len(), 1);
        assert_eq!(c[0].a, 0);
        assert!((c[0].normal[0] + 1.0).abs() < 1e-12);
        assert!((c[0].depth - 0.01).abs() < 1e-12);
    }

    #[test]
    fn equal_mass_head_on_exchange() {
        let shapes = [Shape::Circle { radius: 0.05 }; 2];
        let states = [
            ObjectState { x: 0.3, y: 0.5, vx: 1.0, ..Default::default() },
            ObjectState { x: 0.7, y: 0.5, vx: -0.5, ..Default::default() },
        ];
        let mut w = World::from_states(vacuum(), &shapes, &states).unwrap();
        for _ in 0..20 {
            w.step().unwrap();
        }
        let s = w.states();
        assert!((s[0].vx + 0.5).abs() < 1e-6, "{}", s[0].vx);
        assert!((s[1].vx - 1.0).abs() < 1e-6, "{}", s[1].vx);
    }

    #[test]
    fn wrap_angle_range() {
        for t in [-7.0, -PI, 0.0, PI, 3.5, 12.0] {
            let w = wrap_angle(t);
            assert!(w > -PI && w <= PI);
            assert!(((w - t) / (2.0 * PI)).fract().abs() < 1e-9 || ((w - t) / (2.0 * PI)).fract().abs() > 1.0 - 1e-9);
        }
    }

    #[test]
    fn object_mix_parsing() {
        let m: ObjectMix = "6xcircle+4xrect".parse().unwrap();
        assert_eq!(m.len(), 10);
        assert_eq!(m.to_string(), "6xcircle+4xrect");
        assert!("10xtriangle".parse::<ObjectMix>().is_err());
        assert!("rect".parse::<ObjectMix>().is_err());
        assert!("0xcircle".parse::<ObjectMix>().unwrap().is_empty());
    }

    #[test]
    fn empty_episode_has_frames() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let ep = sample_episode(&mut rng, &ObjectMix(vec![]), &WorldConfig::default(), &EpisodeConfig::default()).unwrap();
        assert_eq!(ep.len(), 128);
        assert!(ep.frames.iter().all(|f| f.is_empty()));
        assert!(ep.labels.iter().all(|l| l.is_free()));
    }

    #[test]
    fn placement_exhaustion_is_an_error() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mix: ObjectMix = "40xcircle".parse().unwrap();
        let cfg = EpisodeConfig { circle_radius: [0.1, 0.1], ..Default::default() };
        assert!(matches!(
            sample_episode(&mut rng, &mix, &WorldConfig::default(), &cfg),
            Err(Error::Placement { .. })
        ));
    }

    #[test]
    fn labels_byte_roundtrip() {
        for b in 0..4u8 {
            assert_eq!(ContactLabels::from_byte(b).unwrap().to_byte(), b);
        }
        assert!(ContactLabels::from_byte(4).is_err());
    }

    #[test]
    fn restart_from_stored_frame_is_exact() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mix: ObjectMix = "3xcircle+3xrect".parse().unwrap();
        let cfg = WorldConfig::default();
        let ep = sample_episode(&mut rng, &mix, &cfg, &EpisodeConfig { frames: 60, ..Default::default() }).unwrap();
        for t in 1..ep.len() {
            let mut w = World::from_states(cfg.clone(), &ep.shapes, &ep.frames[t - 1]).unwrap();
            let labels = w.step().unwrap();
            assert_eq!(w.states(), ep.frames[t]);
            assert_eq!(labels, ep.labels[t]);
        }
    }
}
